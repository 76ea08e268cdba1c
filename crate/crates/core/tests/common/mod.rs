//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use dope::contrastive::NegativeStrategy;
use dope::geometry::{Intrinsics, Pose, PosedView, Size};
use dope::model::FeatureGrid;
use dope::scenegen::Mesh;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Greedy farthest point sampling, recomputing every candidate's distance
/// to the chosen set from scratch at each step.
pub fn greedy_fps(points: &[[f64; 2]], n: usize, first: usize) -> Vec<usize> {
    let mut chosen = vec![first];
    while chosen.len() < n.min(points.len()) {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen
                .iter()
                .map(|&c| (p[0] - points[c][0]).powi(2) + (p[1] - points[c][1]).powi(2))
                .fold(f64::INFINITY, f64::min);
            match best {
                Some((_, bd)) if d <= bd => {}
                _ => best = Some((i, d)),
            }
        }
        chosen.push(best.unwrap().0);
    }
    chosen
}

/// First FPS index for `seed`, by the documented seeding contract.
pub fn fps_first(len: usize, seed: u64) -> usize {
    ChaCha8Rng::seed_from_u64(seed).gen_range(0..len)
}

/// Camera-frame depth of the nearest triangle hit along the ray through
/// the center of pixel `(u, v)`, by testing every triangle.
pub fn ray_cast_depth(mesh: &Mesh, k: &Intrinsics, pose: &Pose, u: usize, v: usize) -> Option<f64> {
    let dir = Vector3::new(
        (u as f64 + 0.5 - k.cx) / k.fx,
        (v as f64 + 0.5 - k.cy) / k.fy,
        1.0,
    );
    let cam = |i: u32| pose.rotation * Vector3::from(mesh.vertices[i as usize]) + pose.translation;
    let mut best: Option<f64> = None;
    for tri in &mesh.triangles {
        let (a, b, c) = (cam(tri[0]), cam(tri[1]), cam(tri[2]));
        if a.z <= 1e-6 || b.z <= 1e-6 || c.z <= 1e-6 {
            continue;
        }
        // Möller–Trumbore from the camera center.
        let e1 = b - a;
        let e2 = c - a;
        let p = dir.cross(&e2);
        let det = e1.dot(&p);
        if det.abs() < 1e-15 {
            continue;
        }
        let s = -a;
        let bu = s.dot(&p) / det;
        let q = s.cross(&e1);
        let bv = dir.dot(&q) / det;
        if bu < 0.0 || bv < 0.0 || bu + bv > 1.0 {
            continue;
        }
        let t = e2.dot(&q) / det;
        if t > 1e-6 && best.map_or(true, |d| t < d) {
            best = Some(t);
        }
    }
    best
}

/// Accepted `(uv_a, uv_b)` pairs for the given FPS picks, with visibility
/// decided by exhaustive ray casting into view B.
pub fn visibility_oracle(
    mesh: &Mesh,
    view_a: &PosedView,
    view_b: &PosedView,
    picks: &[(usize, usize)],
    tol: f64,
    grid: Size,
) -> Vec<((usize, usize), (usize, usize))> {
    let (ka, pa) = (&view_a.intrinsics, &view_a.pose);
    let (kb, pb) = (&view_b.intrinsics, &view_b.pose);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for &(ua, va) in picks {
        let d = view_a.depth[va * ka.width + ua] as f64;
        let cam_a = Vector3::new(
            (ua as f64 + 0.5 - ka.cx) / ka.fx * d,
            (va as f64 + 0.5 - ka.cy) / ka.fy * d,
            d,
        );
        let world = pa.rotation.transpose() * (cam_a - pa.translation);
        let cb = pb.rotation * world + pb.translation;
        if cb.z <= 1e-9 {
            continue;
        }
        let (fu, fv) = ((kb.fx * cb.x / cb.z + kb.cx).floor(), (kb.fy * cb.y / cb.z + kb.cy).floor());
        if fu < 0.0 || fv < 0.0 || fu >= kb.width as f64 || fv >= kb.height as f64 {
            continue;
        }
        let (ub, vb) = (fu as usize, fv as usize);
        let Some(hit) = ray_cast_depth(mesh, kb, pb, ub, vb) else {
            continue;
        };
        // Depth rasters hold f32.
        let stored = hit as f32 as f64;
        if (stored - cb.z).abs() < tol {
            let ga = (ua * grid.width / ka.width, va * grid.height / ka.height);
            if seen.insert(ga) {
                out.push(((ua, va), (ub, vb)));
            }
        }
    }
    out
}

/// Eq.-style NT-Xent evaluated term by term: every positive and negative
/// pair is materialized, and the softmax is computed without any
/// stabilization.
#[allow(clippy::too_many_arguments)]
pub fn brute_force_corr_loss(
    fa: &[Vec<Vec<f64>>],
    fb: &[Vec<Vec<f64>>],
    pairs: &[Vec<(usize, usize)>],
    mask_b: &[Vec<bool>],
    tau: f64,
    strategy: NegativeStrategy,
    include_positive: bool,
) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut terms = Vec::new();
    for k in 0..pairs.len() {
        for &(ca, cb) in &pairs[k] {
            let z1 = &fa[k][ca];
            let mut negs: Vec<&[f64]> = Vec::new();
            if matches!(strategy, NegativeStrategy::SecondViewOnly | NegativeStrategy::Both) {
                for c in 0..fb[k].len() {
                    if mask_b[k][c] && c != cb {
                        negs.push(&fb[k][c]);
                    }
                }
            }
            if matches!(strategy, NegativeStrategy::OtherObjectsOnly | NegativeStrategy::Both) {
                for j in 0..pairs.len() {
                    if j == k {
                        continue;
                    }
                    for &(_, cbj) in &pairs[j] {
                        negs.push(&fb[j][cbj]);
                    }
                }
            }
            let pos = (dot(z1, &fb[k][cb]) / tau).exp();
            let mut denom: f64 = negs.iter().map(|z| (dot(z1, z) / tau).exp()).sum();
            if include_positive {
                denom += pos;
            }
            terms.push(-(pos / denom).ln());
        }
    }
    terms.iter().sum::<f64>() / terms.len() as f64
}

/// Mean of `−[y·log σ(x) + (1−y)·log(1−σ(x))]` evaluated literally.
pub fn direct_bce(logits: &[f64], target: &[bool]) -> f64 {
    let s = |x: f64| 1.0 / (1.0 + (-x).exp());
    logits
        .iter()
        .zip(target)
        .map(|(&x, &t)| if t { -s(x).ln() } else { -(1.0 - s(x)).ln() })
        .sum::<f64>()
        / logits.len() as f64
}

/// Full score table: for each query cell, the dot product against every
/// support cell; the score is the sum of the row maxima.
pub fn brute_force_local_score(query: &FeatureGrid, cells: &[usize], support: &FeatureGrid) -> f64 {
    let mut table = vec![vec![0f64; support.cells()]; cells.len()];
    for (i, &qc) in cells.iter().enumerate() {
        for j in 0..support.cells() {
            let mut s = 0f32;
            for d in 0..query.dim {
                s += query.features[qc * query.dim + d] * support.features[j * support.dim + d];
            }
            table[i][j] = s as f64;
        }
    }
    table
        .iter()
        .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .sum()
}

/// In-batch instance NT-Xent written out per row.
pub fn brute_force_instance_loss(a: &[Vec<f64>], b: &[Vec<f64>], tau: f64) -> f64 {
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let n = a.len();
    let mut total = 0.0;
    for k in 0..n {
        let num = (dot(&a[k], &b[k]) / tau).exp();
        let den: f64 = (0..n).map(|j| (dot(&a[k], &b[j]) / tau).exp()).sum();
        total += -(num / den).ln();
    }
    total / n as f64
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// A grid with the given cell vectors and mask probabilities; features are
/// gated by the probabilities.
pub fn grid_from(cells: &[Vec<f32>], mask_prob: &[f32], width: usize) -> FeatureGrid {
    let dim = cells[0].len();
    let normalized: Vec<f32> = cells.iter().flatten().copied().collect();
    let features: Vec<f32> = cells
        .iter()
        .zip(mask_prob)
        .flat_map(|(c, &p)| c.iter().map(move |x| x * p))
        .collect();
    FeatureGrid {
        dim,
        height: cells.len() / width,
        width,
        features,
        normalized,
        mask_prob: mask_prob.to_vec(),
        view: None,
    }
}

/// Two views of one random template instance on a solid background.
pub fn toy_scene(seed: u64, side: usize) -> (Mesh, PosedView, PosedView) {
    use dope::scenegen::{default_categories, default_light, make_instance, render, sample_camera, Background, CameraRanges};
    let cats = default_categories(14);
    let cat = &cats[(seed % 14) as usize];
    let mesh = make_instance(cat, seed).unwrap();
    let ranges = CameraRanges {
        width: side,
        height: side,
        focal: 72.0 * side as f64 / 64.0,
        ..CameraRanges::default()
    };
    let bg = Background::Solid([0.5, 0.5, 0.5]);
    let view = |s: u64| {
        let (k, pose) = sample_camera(&ranges, s).unwrap();
        render(&mesh, &k, &pose, &bg, &default_light()).unwrap()
    };
    let (a, b) = (view(2 * seed + 1), view(2 * seed + 2));
    (mesh, a, b)
}

/// Six small objects at 32×32 with a matching 8×8-grid encoder.
pub fn tiny_setup(seed: u64) -> (dope::scenegen::Dataset, dope::model::EncoderConfig) {
    use dope::scenegen::{default_categories, generate, CameraRanges, DatasetSpec};
    let spec = DatasetSpec {
        categories: default_categories(3),
        instances_per_category: 2,
        views_per_instance: 4,
        camera: CameraRanges {
            width: 32,
            height: 32,
            focal: 36.0,
            ..CameraRanges::default()
        },
        seed,
        ..DatasetSpec::default()
    };
    let enc = dope::model::EncoderConfig {
        input_size: 32,
        stages: vec![4, 8],
        grid_size: 8,
        head: vec![8, 8],
        out_dim: 8,
        ..Default::default()
    };
    (generate(&spec).unwrap(), enc)
}
