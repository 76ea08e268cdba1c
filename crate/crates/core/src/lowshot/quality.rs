//! Model-quality measurements on held-out views: mask IoU and the
//! fraction of ground-truth correspondences recovered by feature argmax.

use dope_autodiff::ParamSet;
use rand::Rng;

use super::{Result, ViewRef, FOREGROUND_THRESHOLD};
use crate::contrastive::{azimuth_gap, grid_mask};
use crate::geometry::{find_correspondences, GeometryError, Size};
use crate::model::{encode, EncoderConfig, FeatureGrid, InferenceGate};
use crate::scenegen::Dataset;
use crate::seed;

/// `|P ∩ G| / |P ∪ G|`, or 1 when both are empty.
pub fn iou(pred: &[bool], truth: &[bool]) -> f64 {
    let inter = pred.iter().zip(truth).filter(|(p, t)| **p && **t).count();
    let union = pred.iter().zip(truth).filter(|(p, t)| **p || **t).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Mean IoU of thresholded predicted grid masks against area-majority
/// ground-truth grid masks.
pub fn mask_iou(params: &ParamSet<f32>, cfg: &EncoderConfig, dataset: &Dataset, views: &[ViewRef]) -> Result<f64> {
    if views.is_empty() {
        return Err(super::LowShotError::NoEpisodes);
    }
    let image = Size::new(cfg.input_size, cfg.input_size);
    let grid = Size::new(cfg.grid_size, cfg.grid_size);
    let mut total = 0.0;
    for chunk in views.chunks(crate::model::ENCODE_CHUNK) {
        let pv: Vec<_> = chunk.iter().map(|r| &dataset.objects[r.object].views[r.view]).collect();
        let images: Vec<&[f32]> = pv.iter().map(|v| v.rgb.as_slice()).collect();
        let grids = encode(params, cfg, &images, InferenceGate::Predicted)?;
        for (v, g) in pv.iter().zip(&grids) {
            let pred: Vec<bool> = g.mask_prob.iter().map(|&p| p > FOREGROUND_THRESHOLD).collect();
            total += iou(&pred, &grid_mask(&v.mask, image, grid));
        }
    }
    Ok(total / views.len() as f64)
}

/// Settings for [`correspondence_consistency`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencySpec {
    pub pairs_per_object: usize,
    pub n_correspondences: usize,
    pub max_azimuth_gap_deg: f64,
    pub occlusion_tol: f64,
    /// Euclidean distance in grid cells counted as a hit.
    pub radius: f64,
    pub seed: u64,
}

impl Default for ConsistencySpec {
    fn default() -> Self {
        Self {
            pairs_per_object: 4,
            n_correspondences: 32,
            max_azimuth_gap_deg: 90.0,
            occlusion_tol: crate::geometry::DEFAULT_OCCLUSION_TOL,
            radius: 2.0,
            seed: 0,
        }
    }
}

/// Target cell with the largest dot product against `z`; ties go to the
/// lowest index.
pub fn argmax_cell(z: &[f32], target: &FeatureGrid) -> usize {
    let mut best = (0, f32::NEG_INFINITY);
    for c in 0..target.cells() {
        let s: f32 = z.iter().zip(target.cell(c)).map(|(a, b)| a * b).sum();
        if s > best.1 {
            best = (c, s);
        }
    }
    best.0
}

/// Fraction of ground-truth correspondences whose argmax match over the
/// gated features of view B lies within `radius` cells of the true cell.
pub fn correspondence_consistency(
    params: &ParamSet<f32>,
    cfg: &EncoderConfig,
    dataset: &Dataset,
    objects: &[usize],
    spec: &ConsistencySpec,
    gate: InferenceGate,
) -> Result<f64> {
    let grid = Size::new(cfg.grid_size, cfg.grid_size);
    let (mut hits, mut total) = (0usize, 0usize);
    for &o in objects {
        let obj = &dataset.objects[o];
        let nv = obj.views.len();
        let mut rng = seed::rng(spec.seed, "consistency", &[o as u64]);
        let mut pairs = Vec::new();
        for _ in 0..spec.pairs_per_object * 20 {
            if pairs.len() == spec.pairs_per_object || nv < 2 {
                break;
            }
            let a = rng.gen_range(0..nv);
            let b = rng.gen_range(0..nv);
            let gap = azimuth_gap(obj.viewpoints[a].azimuth_deg, obj.viewpoints[b].azimuth_deg);
            if a != b && gap <= spec.max_azimuth_gap_deg {
                pairs.push((a, b));
            }
        }
        for (pi, &(a, b)) in pairs.iter().enumerate() {
            let s = seed::derive(spec.seed, "consistency-pairs", &[o as u64, pi as u64]);
            let corr = match find_correspondences(&obj.views[a], &obj.views[b], spec.n_correspondences, spec.occlusion_tol, s, grid) {
                Ok(c) => c,
                Err(GeometryError::EmptyForeground) => continue,
                Err(e) => return Err(super::LowShotError::Geometry(e)),
            };
            if corr.pairs.is_empty() {
                continue;
            }
            let grids = encode(params, cfg, &[&obj.views[a].rgb, &obj.views[b].rgb], gate)?;
            for p in &corr.pairs {
                let z = grids[0].cell_at(p.grid_a.0, p.grid_a.1);
                let m = argmax_cell(z, &grids[1]);
                let (mu, mv) = ((m % grid.width) as f64, (m / grid.width) as f64);
                let (du, dv) = (mu - p.grid_b.0 as f64, mv - p.grid_b.1 as f64);
                hits += usize::from((du * du + dv * dv).sqrt() <= spec.radius);
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(super::LowShotError::NoEpisodes);
    }
    Ok(hits as f64 / total as f64)
}
