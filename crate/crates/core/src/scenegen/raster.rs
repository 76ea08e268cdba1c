use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::mesh::Mesh;
use super::Result;
use crate::geometry::{Intrinsics, Pose, PosedView};

pub const AMBIENT: f32 = 0.2;
pub const DIFFUSE: f32 = 0.8;

/// Triangles with a vertex this close to the camera plane are skipped.
pub const NEAR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Background {
    Solid([f32; 3]),
    Checker {
        a: [f32; 3],
        b: [f32; 3],
        cell: usize,
        phase: (usize, usize),
    },
}

impl Background {
    pub fn color(&self, u: usize, v: usize) -> [f32; 3] {
        match *self {
            Background::Solid(c) => c,
            Background::Checker { a, b, cell, phase } => {
                let cell = cell.max(1);
                if ((u + phase.0) / cell + (v + phase.1) / cell) % 2 == 0 {
                    a
                } else {
                    b
                }
            }
        }
    }
}

pub fn default_light() -> Vector3<f64> {
    Vector3::new(0.4, 0.3, 0.85).normalize()
}

/// Z-buffer rasterization of `mesh` with two-sided Lambertian shading.
/// Coverage is tested at pixel centers; depth is the exact ray-plane
/// intersection through each center.
pub fn render(
    mesh: &Mesh,
    k: &Intrinsics,
    pose: &Pose,
    background: &Background,
    light_dir: &Vector3<f64>,
) -> Result<PosedView> {
    let (w, h) = (k.width, k.height);
    let n = w * h;
    let mut zbuf = vec![f64::INFINITY; n];
    let mut rgb = vec![0.0f32; 3 * n];
    for v in 0..h {
        for u in 0..w {
            let c = background.color(u, v);
            rgb[3 * (v * w + u)..3 * (v * w + u) + 3].copy_from_slice(&c);
        }
    }
    let light = light_dir.normalize();
    let cam: Vec<Vector3<f64>> = mesh
        .vertices
        .iter()
        .map(|p| pose.rotation * Vector3::from(*p) + pose.translation)
        .collect();

    for (t, tri) in mesh.triangles.iter().enumerate() {
        let p = [cam[tri[0] as usize], cam[tri[1] as usize], cam[tri[2] as usize]];
        if p.iter().any(|q| q.z <= NEAR) {
            continue;
        }
        let s: Vec<(f64, f64)> = p
            .iter()
            .map(|q| (k.fx * q.x / q.z + k.cx, k.fy * q.y / q.z + k.cy))
            .collect();
        let area = edge(s[0], s[1], s[2]);
        if area == 0.0 {
            continue;
        }
        let mut normal = (p[1] - p[0]).cross(&(p[2] - p[0]));
        if normal.dot(&p[0]) > 0.0 {
            normal = -normal;
        }
        let nn = normal.norm();
        if nn == 0.0 {
            continue;
        }
        let world_normal = pose.rotation.transpose() * (normal / nn);
        let shade = (world_normal.dot(&light).max(0.0) as f32) * DIFFUSE + AMBIENT;
        let fc = mesh.face_colors[t];
        let color = [fc[0] * shade, fc[1] * shade, fc[2] * shade];
        let plane = normal.dot(&p[0]);

        let (min_x, max_x) = bounds(s.iter().map(|q| q.0), w);
        let (min_y, max_y) = bounds(s.iter().map(|q| q.1), h);
        for py in min_y..max_y {
            for px in min_x..max_x {
                let c = (px as f64 + 0.5, py as f64 + 0.5);
                let e0 = edge(s[1], s[2], c) * area.signum();
                let e1 = edge(s[2], s[0], c) * area.signum();
                let e2 = edge(s[0], s[1], c) * area.signum();
                if e0 < 0.0 || e1 < 0.0 || e2 < 0.0 {
                    continue;
                }
                let ray = Vector3::new((c.0 - k.cx) / k.fx, (c.1 - k.cy) / k.fy, 1.0);
                let denom = normal.dot(&ray);
                if denom == 0.0 {
                    continue;
                }
                let z = plane / denom;
                let i = py * w + px;
                if z > NEAR && z < zbuf[i] {
                    zbuf[i] = z;
                    rgb[3 * i..3 * i + 3].copy_from_slice(&color);
                }
            }
        }
    }

    let mask: Vec<bool> = zbuf.iter().map(|z| z.is_finite()).collect();
    let depth: Vec<f32> = zbuf.iter().map(|&z| z as f32).collect();
    Ok(PosedView::new(rgb, depth, mask, *k, *pose)?)
}

fn edge(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

/// Pixel index range whose centers may fall inside `[min, max]`.
fn bounds(xs: impl Iterator<Item = f64>, limit: usize) -> (usize, usize) {
    let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(x), hi.max(x))
    });
    let lo = (lo - 0.5).floor().max(0.0);
    let hi = (hi - 0.5).ceil() + 1.0;
    let hi = hi.min(limit as f64).max(0.0);
    (lo.min(limit as f64) as usize, hi as usize)
}
