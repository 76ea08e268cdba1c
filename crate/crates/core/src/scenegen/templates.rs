use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mesh::{cuboid, cylinder, ellipsoid, ellipsoid_cap, frustum, sphere, torus, wedge, Mesh};
use super::{Result, SceneError};
use crate::seed;

pub const TEMPLATES: [&str; 14] = [
    "table", "mug", "house", "snowman", "chair", "lamp", "car", "tree", "bottle", "dumbbell",
    "rocket", "mushroom", "torus", "stairs",
];

const SEG: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub category_id: usize,
    pub template: String,
    /// Multiplicative jitter range applied to every template proportion.
    pub proportion: (f64, f64),
    pub color_lo: [f32; 3],
    pub color_hi: [f32; 3],
}

/// Half-width of each channel's color range around the template hue.
pub const PALETTE_SPREAD: f32 = 0.2;

/// Color range centered on hue `i / TEMPLATES.len()`.
pub fn template_palette(template_index: usize) -> ([f32; 3], [f32; 3]) {
    let h = template_index as f32 / TEMPLATES.len() as f32 * 6.0;
    let channel = |n: f32| {
        let k = (n + h) % 6.0;
        0.55 - 0.4 * k.min(4.0 - k).clamp(0.0, 1.0)
    };
    let center = [channel(5.0), channel(3.0), channel(1.0)];
    (
        center.map(|c| (c - PALETTE_SPREAD).max(0.05)),
        center.map(|c| (c + PALETTE_SPREAD).min(0.95)),
    )
}

impl CategorySpec {
    /// Template-specific palette; unknown templates get the full range.
    pub fn new(category_id: usize, template: &str) -> Self {
        let (color_lo, color_hi) = match TEMPLATES.iter().position(|t| *t == template) {
            Some(i) => template_palette(i),
            None => ([0.15; 3], [0.95; 3]),
        };
        Self {
            category_id,
            template: template.to_string(),
            proportion: (0.75, 1.25),
            color_lo,
            color_hi,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.proportion;
        let colors_ok = (0..3).all(|k| {
            (0.0..=1.0).contains(&self.color_lo[k])
                && (0.0..=1.0).contains(&self.color_hi[k])
                && self.color_lo[k] <= self.color_hi[k]
        });
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) || !colors_ok {
            return Err(SceneError::InvalidRange(format!(
                "category {} has an empty or invalid parameter range",
                self.category_id
            )));
        }
        if !TEMPLATES.contains(&self.template.as_str()) {
            return Err(SceneError::UnknownTemplate(self.template.clone()));
        }
        Ok(())
    }
}

/// Default category list: one category per template, in template order.
pub fn default_categories(count: usize) -> Vec<CategorySpec> {
    TEMPLATES
        .iter()
        .take(count)
        .enumerate()
        .map(|(i, t)| CategorySpec::new(i, t))
        .collect()
}

struct Draw<'a> {
    rng: ChaCha8Rng,
    spec: &'a CategorySpec,
    mesh: Mesh,
}

impl Draw<'_> {
    /// `base` scaled by a jitter factor drawn from the proportion range.
    fn p(&mut self, base: f64) -> f64 {
        let (lo, hi) = self.spec.proportion;
        base * if hi > lo { self.rng.gen_range(lo..=hi) } else { lo }
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..=hi)
    }

    fn color(&mut self) -> [f32; 3] {
        let (lo, hi) = (self.spec.color_lo, self.spec.color_hi);
        let mut c = [0.0; 3];
        for k in 0..3 {
            c[k] = if hi[k] > lo[k] { self.rng.gen_range(lo[k]..=hi[k]) } else { lo[k] };
        }
        c
    }

    fn add(&mut self, part: Mesh, color: [f32; 3]) {
        self.mesh.append(part, color);
    }
}

/// Deterministic instance of a category, normalized into the unit ball.
pub fn make_instance(spec: &CategorySpec, seed: u64) -> Result<Mesh> {
    spec.validate()?;
    let mut d = Draw {
        rng: seed::rng(seed, "instance", &[spec.category_id as u64]),
        spec,
        mesh: Mesh::new(),
    };
    match spec.template.as_str() {
        "table" => table(&mut d),
        "mug" => mug(&mut d),
        "house" => house(&mut d),
        "snowman" => snowman(&mut d),
        "chair" => chair(&mut d),
        "lamp" => lamp(&mut d),
        "car" => car(&mut d),
        "tree" => tree(&mut d),
        "bottle" => bottle(&mut d),
        "dumbbell" => dumbbell(&mut d),
        "rocket" => rocket(&mut d),
        "mushroom" => mushroom(&mut d),
        "torus" => donut(&mut d),
        "stairs" => stairs(&mut d),
        other => return Err(SceneError::UnknownTemplate(other.to_string())),
    }
    let mut mesh = d.mesh;
    mesh.normalize_into_ball(1.0);
    mesh.validate()?;
    Ok(mesh)
}

fn table(d: &mut Draw) {
    let (w, l, h, t, leg) = (d.p(1.6), d.p(1.0), d.p(0.9), d.p(0.1), d.p(0.1));
    let (top, legs) = (d.color(), d.color());
    d.add(cuboid(w, l, t).translated(0.0, 0.0, h + t / 2.0), top);
    for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
        let x = sx * (w / 2.0 - leg);
        let y = sy * (l / 2.0 - leg);
        d.add(cuboid(leg, leg, h).translated(x, y, h / 2.0), legs);
    }
}

fn mug(d: &mut Draw) {
    let (r, h) = (d.p(0.5), d.p(1.1));
    let (hr, ht) = (d.p(0.3), d.p(0.07));
    let (body, handle) = (d.color(), d.color());
    d.add(cylinder(r, h, SEG), body);
    let arc = torus(hr, ht, PI, 10, 6)
        .rotated(2, -FRAC_PI_2)
        .rotated(0, FRAC_PI_2)
        .translated(r, 0.0, h / 2.0);
    d.add(arc, handle);
}

fn house(d: &mut Draw) {
    let (w, l, h, rh) = (d.p(1.2), d.p(1.0), d.p(0.8), d.p(0.6));
    let (walls, roof, chimney) = (d.color(), d.color(), d.color());
    d.add(cuboid(w, l, h).translated(0.0, 0.0, h / 2.0), walls);
    d.add(wedge(l * 1.1, w * 1.1, rh).rotated(2, FRAC_PI_2).translated(0.0, 0.0, h), roof);
    let c = d.p(0.15);
    let along = d.uniform(-0.3, 0.3) * w;
    d.add(cuboid(c, c, rh).translated(along, l * 0.2, h + rh * 0.7), chimney);
}

fn snowman(d: &mut Draw) {
    let (r0, r1, r2) = (d.p(0.5), d.p(0.36), d.p(0.25));
    let (snow, nose) = (d.color(), d.color());
    let (z0, z1) = (r0, 2.0 * r0 + r1 * 0.8);
    let z2 = z1 + r1 + r2 * 0.8;
    d.add(sphere(r0, 8, SEG).translated(0.0, 0.0, z0), snow);
    d.add(sphere(r1, 8, SEG).translated(0.0, 0.0, z1), snow);
    d.add(sphere(r2, 8, SEG).translated(0.0, 0.0, z2), snow);
    let nl = d.p(0.3);
    d.add(
        frustum(r2 * 0.25, 0.0, nl, 8).rotated(1, FRAC_PI_2).translated(r2 * 0.9, 0.0, z2),
        nose,
    );
}

fn chair(d: &mut Draw) {
    let (w, h, t, leg, bh) = (d.p(0.9), d.p(0.8), d.p(0.1), d.p(0.08), d.p(0.9));
    let (seat, legs, back) = (d.color(), d.color(), d.color());
    d.add(cuboid(w, w, t).translated(0.0, 0.0, h + t / 2.0), seat);
    for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
        let x = sx * (w / 2.0 - leg);
        let y = sy * (w / 2.0 - leg);
        d.add(cuboid(leg, leg, h).translated(x, y, h / 2.0), legs);
    }
    d.add(
        cuboid(t, w, bh).translated(-w / 2.0 + t / 2.0, 0.0, h + t + bh / 2.0),
        back,
    );
}

fn lamp(d: &mut Draw) {
    let (br, bt, pr, ph) = (d.p(0.45), d.p(0.08), d.p(0.05), d.p(1.2));
    let (sb, st, sh) = (d.p(0.55), d.p(0.25), d.p(0.5));
    let (base, pole, shade) = (d.color(), d.color(), d.color());
    d.add(cylinder(br, bt, SEG), base);
    d.add(cylinder(pr, ph, 8).translated(0.0, 0.0, bt), pole);
    d.add(frustum(sb, st, sh, SEG).translated(0.0, 0.0, bt + ph - sh * 0.3), shade);
}

fn car(d: &mut Draw) {
    let (l, w, h, wr) = (d.p(1.8), d.p(0.8), d.p(0.4), d.p(0.22));
    let (cl, ch) = (d.p(0.9), d.p(0.35));
    let (body, cabin, wheels) = (d.color(), d.color(), d.color());
    d.add(cuboid(l, w, h).translated(0.0, 0.0, wr + h / 2.0), body);
    let shift = d.uniform(-0.15, 0.1) * l;
    d.add(cuboid(cl, w * 0.85, ch).translated(shift, 0.0, wr + h + ch / 2.0), cabin);
    for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
        let wheel = cylinder(wr, 0.15, 12)
            .translated(0.0, 0.0, -0.075)
            .rotated(0, FRAC_PI_2)
            .translated(sx * l * 0.32, sy * (w / 2.0 + 0.02), wr);
        d.add(wheel, wheels);
    }
}

fn tree(d: &mut Draw) {
    let (tr, th) = (d.p(0.12), d.p(0.5));
    let (trunk, leaves) = (d.color(), d.color());
    d.add(cylinder(tr, th, 10), trunk);
    let tiers = 2 + (d.rng.gen::<u32>() % 2) as usize;
    let mut z = th;
    let mut r = d.p(0.7);
    for _ in 0..tiers {
        let h = d.p(0.7);
        d.add(frustum(r, 0.0, h, SEG).translated(0.0, 0.0, z), leaves);
        z += h * 0.5;
        r *= 0.75;
    }
}

fn bottle(d: &mut Draw) {
    let (r, h, sh, nr, nh) = (d.p(0.4), d.p(1.0), d.p(0.35), d.p(0.14), d.p(0.4));
    let (glass, cap) = (d.color(), d.color());
    d.add(cylinder(r, h, SEG), glass);
    d.add(frustum(r, nr, sh, SEG).translated(0.0, 0.0, h), glass);
    d.add(cylinder(nr, nh, 10).translated(0.0, 0.0, h + sh), glass);
    d.add(cylinder(nr * 1.2, 0.1, 10).translated(0.0, 0.0, h + sh + nh), cap);
}

fn dumbbell(d: &mut Draw) {
    let (bl, br, wr) = (d.p(1.2), d.p(0.07), d.p(0.35));
    let (bar, weights) = (d.color(), d.color());
    d.add(
        cylinder(br, bl, 8).translated(0.0, 0.0, -bl / 2.0).rotated(1, FRAC_PI_2),
        bar,
    );
    let squash = d.uniform(0.5, 1.0);
    for s in [-1.0, 1.0] {
        d.add(
            ellipsoid([wr * squash, wr, wr], 8, SEG).translated(s * bl / 2.0, 0.0, 0.0),
            weights,
        );
    }
}

fn rocket(d: &mut Draw) {
    let (r, h, nh, fh) = (d.p(0.25), d.p(1.2), d.p(0.5), d.p(0.45));
    let (hull, nose, fins) = (d.color(), d.color(), d.color());
    d.add(cylinder(r, h, SEG), hull);
    d.add(frustum(r, 0.0, nh, SEG).translated(0.0, 0.0, h), nose);
    let count = 3 + (d.rng.gen::<u32>() % 2) as usize;
    for i in 0..count {
        let a = TAU * i as f64 / count as f64;
        let fin = wedge(fh, 0.05, fh * 0.8)
            .rotated(1, FRAC_PI_2)
            .translated(r, 0.0, fh / 2.0)
            .rotated(2, a);
        d.add(fin, fins);
    }
}

fn mushroom(d: &mut Draw) {
    let (sr, sh, cr, ch) = (d.p(0.18), d.p(0.6), d.p(0.7), d.p(0.45));
    let (stem, cap) = (d.color(), d.color());
    d.add(frustum(sr * 1.2, sr, sh, 12), stem);
    let open = d.uniform(1.2, FRAC_PI_2);
    d.add(
        ellipsoid_cap([cr, cr, ch], open, 5, SEG).translated(0.0, 0.0, sh - ch * open.cos()),
        cap,
    );
}

fn donut(d: &mut Draw) {
    let (major, minor) = (d.p(0.7), d.p(0.25));
    let c = d.color();
    let tilt = d.uniform(0.0, 0.6);
    d.add(torus(major, minor, TAU, 20, 10).rotated(0, tilt), c);
}

fn stairs(d: &mut Draw) {
    let steps = 3 + (d.rng.gen::<u32>() % 2) as usize;
    let (w, run, rise) = (d.p(1.0), d.p(0.35), d.p(0.3));
    let (a, b) = (d.color(), d.color());
    for i in 0..steps {
        let h = rise * (i + 1) as f64;
        let c = if i % 2 == 0 { a } else { b };
        d.add(cuboid(run, w, h).translated(run * i as f64, 0.0, h / 2.0), c);
    }
}
