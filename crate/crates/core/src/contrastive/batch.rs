use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::augment::{augment, Augmented};
use super::{PairMode, Result, TrainConfig, TrainError};
use crate::geometry::{farthest_point_sample, find_correspondences, pixel_to_grid, Size};
use crate::scenegen::Dataset;
use crate::seed;

pub const PAIR_RETRIES: usize = 10;

/// Correspondence in augmented-image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridPair {
    pub uv_a: (usize, usize),
    pub uv_b: (usize, usize),
    pub grid_a: (usize, usize),
    pub grid_b: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairSample {
    /// Index into `Dataset::objects`.
    pub object: usize,
    pub views: (usize, usize),
    pub image_a: Vec<f32>,
    pub image_b: Vec<f32>,
    pub grid_mask_a: Vec<bool>,
    pub grid_mask_b: Vec<bool>,
    pub pairs: Vec<GridPair>,
    /// Correspondences requested and accepted before augmentation.
    pub sampled: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainBatch {
    pub image: Size,
    pub grid: Size,
    pub samples: Vec<PairSample>,
}

impl TrainBatch {
    pub fn num_pairs(&self) -> usize {
        self.samples.iter().map(|s| s.pairs.len()).sum()
    }

    /// `(cell_a, cell_b)` row-major grid indices per sample.
    pub fn cell_pairs(&self) -> Vec<Vec<(usize, usize)>> {
        let gw = self.grid.width;
        self.samples
            .iter()
            .map(|s| {
                s.pairs
                    .iter()
                    .map(|p| (p.grid_a.1 * gw + p.grid_a.0, p.grid_b.1 * gw + p.grid_b.0))
                    .collect()
            })
            .collect()
    }
}

/// Area-majority downsampling: a cell is foreground when at least half
/// of its pixels are.
pub fn grid_mask(mask: &[bool], image: Size, grid: Size) -> Vec<bool> {
    let (sx, sy) = (image.width / grid.width, image.height / grid.height);
    let mut out = vec![false; grid.area()];
    for gv in 0..grid.height {
        for gu in 0..grid.width {
            let mut count = 0;
            for v in gv * sy..(gv + 1) * sy {
                for u in gu * sx..(gu + 1) * sx {
                    count += usize::from(mask[v * image.width + u]);
                }
            }
            out[gv * grid.width + gu] = 2 * count >= sx * sy;
        }
    }
    out
}

pub fn azimuth_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Pixel pairs in view A and view B coordinates before augmentation.
fn source_pairs(
    dataset: &Dataset,
    object: usize,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
    grid: Size,
) -> Result<Option<((usize, usize), Vec<((usize, usize), (usize, usize))>)>> {
    let obj = &dataset.objects[object];
    let nv = obj.views.len();
    let i = rng.gen_range(0..nv);
    let point_seed = rng.gen();
    match cfg.pair_mode {
        PairMode::MultiView => {
            let candidates: Vec<usize> = (0..nv)
                .filter(|&j| {
                    j != i
                        && azimuth_gap(obj.viewpoints[i].azimuth_deg, obj.viewpoints[j].azimuth_deg)
                            <= cfg.max_azimuth_gap_deg
                })
                .collect();
            let Some(&j) = candidates.choose(rng) else {
                return Ok(None);
            };
            let set = find_correspondences(
                &obj.views[i],
                &obj.views[j],
                cfg.n_correspondences,
                cfg.occlusion_tol,
                point_seed,
                grid,
            );
            let set = match set {
                Ok(s) => s,
                Err(crate::geometry::GeometryError::EmptyForeground) => return Ok(None),
                Err(e) => return Err(e.into()),
            };
            Ok(Some((
                (i, j),
                set.pairs.iter().map(|p| (p.uv_a, p.uv_b)).collect(),
            )))
        }
        PairMode::SingleViewAugmented => {
            let fg = obj.views[i].foreground_pixels();
            if fg.is_empty() {
                return Ok(None);
            }
            let pts: Vec<[f64; 2]> = fg.iter().map(|&(u, v)| [u as f64, v as f64]).collect();
            let idx = farthest_point_sample(&pts, cfg.n_correspondences, point_seed)?;
            Ok(Some(((i, i), idx.iter().map(|&k| (fg[k], fg[k])).collect())))
        }
    }
}

/// Samples one training pair of `object`, retrying with fresh views
/// when no correspondence survives.
pub fn sample_pair(
    dataset: &Dataset,
    object: usize,
    cfg: &TrainConfig,
    grid: Size,
    seed: u64,
) -> Result<PairSample> {
    let aug = cfg.effective_augment();
    let obj = &dataset.objects[object];
    let mut rng = seed::rng(seed, "pair", &[]);
    for attempt in 0..PAIR_RETRIES {
        let Some(((i, j), raw)) = source_pairs(dataset, object, cfg, &mut rng, grid)? else {
            continue;
        };
        if raw.is_empty() {
            continue;
        }
        let (va, vb) = (&obj.views[i], &obj.views[j]);
        let image = va.size();
        let pa: Vec<_> = raw.iter().map(|p| p.0).collect();
        let pb: Vec<_> = raw.iter().map(|p| p.1).collect();
        let sa = seed::derive(seed, "augment_a", &[attempt as u64]);
        let sb = seed::derive(seed, "augment_b", &[attempt as u64]);
        let a: Augmented = augment(va, &pa, sa, &aug);
        let b: Augmented = augment(vb, &pb, sb, &aug);
        let mut pairs: Vec<GridPair> = Vec::new();
        let mut seen = vec![false; grid.area()];
        for (qa, qb) in a.pixels.iter().zip(&b.pixels) {
            let (Some(uv_a), Some(uv_b)) = (*qa, *qb) else { continue };
            let grid_a = pixel_to_grid(uv_a.0, uv_a.1, image, grid)?;
            let grid_b = pixel_to_grid(uv_b.0, uv_b.1, vb.size(), grid)?;
            let cell = grid_a.1 * grid.width + grid_a.0;
            if seen[cell] {
                continue;
            }
            seen[cell] = true;
            pairs.push(GridPair { uv_a, uv_b, grid_a, grid_b });
        }
        if pairs.is_empty() {
            continue;
        }
        return Ok(PairSample {
            object,
            views: (i, j),
            grid_mask_a: grid_mask(&a.mask, image, grid),
            grid_mask_b: grid_mask(&b.mask, vb.size(), grid),
            image_a: a.image,
            image_b: b.image,
            pairs,
            sampled: raw.len(),
        });
    }
    Err(TrainError::PairExhausted(object))
}

/// `batch_size` distinct objects from `pool`, one pair each.
pub fn build_batch(
    dataset: &Dataset,
    pool: &[usize],
    cfg: &TrainConfig,
    grid: Size,
    seed: u64,
) -> Result<TrainBatch> {
    if pool.len() < cfg.batch_size {
        return Err(TrainError::InsufficientData(format!(
            "{} objects available for batch size {}",
            pool.len(),
            cfg.batch_size
        )));
    }
    if pool.iter().any(|&o| dataset.objects[o].views.len() < 2) {
        return Err(TrainError::InsufficientData("objects need >= 2 views".into()));
    }
    let mut rng = seed::rng(seed, "batch", &[]);
    let picks = index::sample(&mut rng, pool.len(), cfg.batch_size);
    let samples = picks
        .iter()
        .enumerate()
        .map(|(slot, k)| {
            sample_pair(dataset, pool[k], cfg, grid, seed::derive(seed, "slot", &[slot as u64]))
        })
        .collect::<Result<Vec<_>>>()?;
    let image = dataset.objects[pool[0]].views[0].size();
    Ok(TrainBatch { image, grid, samples })
}
