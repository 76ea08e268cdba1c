use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::PosedView;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub p_background: f64,
    pub p_flip: f64,
    pub p_affine: f64,
    pub p_jitter: f64,
    pub max_translate_px: f64,
    pub max_rotate_deg: f64,
    pub gain: (f32, f32),
    pub offset: (f32, f32),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_background: 0.5,
            p_flip: 0.5,
            p_affine: 0.5,
            p_jitter: 0.5,
            max_translate_px: 8.0,
            max_rotate_deg: 15.0,
            gain: (0.8, 1.2),
            offset: (-0.1, 0.1),
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            p_background: 0.0,
            p_flip: 0.0,
            p_affine: 0.0,
            p_jitter: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let probs = [self.p_background, self.p_flip, self.p_affine, self.p_jitter];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err("augmentation probabilities must lie in [0, 1]".into());
        }
        if !(self.max_translate_px >= 0.0) || !(self.max_rotate_deg >= 0.0) {
            return Err("augmentation magnitudes must be non-negative".into());
        }
        if self.gain.0 > self.gain.1 || self.offset.0 > self.offset.1 {
            return Err("empty color jitter range".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Augmented {
    pub image: Vec<f32>,
    pub mask: Vec<bool>,
    /// Transformed input pixels, `None` where dropped.
    pub pixels: Vec<Option<(usize, usize)>>,
}

/// Seeded pipeline: flip, in-plane rotation and translation, background
/// removal, color jitter. Geometric steps move image, mask and pixels
/// together; pixels leaving the raster or the mask are dropped.
pub fn augment(
    view: &PosedView,
    pixels: &[(usize, usize)],
    seed: u64,
    cfg: &AugmentConfig,
) -> Augmented {
    let (w, h) = (view.width(), view.height());
    let mut rng = seed::rng(seed, "augment", &[]);
    let mut image = view.rgb.clone();
    let mut mask = view.mask.clone();
    let mut pts: Vec<Option<(usize, usize)>> = pixels.iter().map(|&p| Some(p)).collect();

    if rng.gen_bool(cfg.p_flip) {
        let (src_i, src_m) = (image.clone(), mask.clone());
        for v in 0..h {
            for u in 0..w {
                let (d, s) = (v * w + u, v * w + (w - 1 - u));
                image[3 * d..3 * d + 3].copy_from_slice(&src_i[3 * s..3 * s + 3]);
                mask[d] = src_m[s];
            }
        }
        for p in pts.iter_mut().flatten() {
            p.0 = w - 1 - p.0;
        }
    }

    if rng.gen_bool(cfg.p_affine) {
        let t = cfg.max_translate_px;
        let r = cfg.max_rotate_deg.to_radians();
        let tx = if t > 0.0 { rng.gen_range(-t..=t) } else { 0.0 };
        let ty = if t > 0.0 { rng.gen_range(-t..=t) } else { 0.0 };
        let th = if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
        let (image2, mask2) = warp(&image, &mask, w, h, th, tx, ty);
        image = image2;
        mask = mask2;
        let (s, c) = th.sin_cos();
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        for p in pts.iter_mut() {
            let Some((u, v)) = *p else { continue };
            let (x, y) = (u as f64 + 0.5 - cx, v as f64 + 0.5 - cy);
            let nx = c * x - s * y + cx + tx;
            let ny = s * x + c * y + cy + ty;
            *p = if nx >= 0.0 && ny >= 0.0 && nx < w as f64 && ny < h as f64 {
                Some((nx.floor() as usize, ny.floor() as usize))
            } else {
                None
            };
        }
    }

    if rng.gen_bool(cfg.p_background) {
        let noise = rng.gen_bool(0.5);
        let solid: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
        for (i, &m) in mask.iter().enumerate() {
            if !m {
                let c = if noise { [rng.gen(), rng.gen(), rng.gen()] } else { solid };
                image[3 * i..3 * i + 3].copy_from_slice(&c);
            }
        }
    }

    if rng.gen_bool(cfg.p_jitter) {
        let mut gain = [1.0f32; 3];
        let mut off = [0.0f32; 3];
        for k in 0..3 {
            gain[k] = range(&mut rng, cfg.gain);
            off[k] = range(&mut rng, cfg.offset);
        }
        for px in image.chunks_exact_mut(3) {
            for k in 0..3 {
                px[k] = (px[k] * gain[k] + off[k]).clamp(0.0, 1.0);
            }
        }
    }

    for p in pts.iter_mut() {
        if let Some((u, v)) = *p {
            if !mask[v * w + u] {
                *p = None;
            }
        }
    }
    Augmented {
        image,
        mask,
        pixels: pts,
    }
}

fn range(rng: &mut impl Rng, (lo, hi): (f32, f32)) -> f32 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// Rotation by `th` about the image center followed by translation,
/// nearest-neighbour resampled. Uncovered pixels replicate the nearest
/// edge color and are background.
fn warp(
    image: &[f32],
    mask: &[bool],
    w: usize,
    h: usize,
    th: f64,
    tx: f64,
    ty: f64,
) -> (Vec<f32>, Vec<bool>) {
    let (s, c) = th.sin_cos();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let mut out_i = vec![0.0f32; image.len()];
    let mut out_m = vec![false; mask.len()];
    for v in 0..h {
        for u in 0..w {
            let (x, y) = (u as f64 + 0.5 - cx - tx, v as f64 + 0.5 - cy - ty);
            let sx = c * x + s * y + cx;
            let sy = -s * x + c * y + cy;
            let inside = sx >= 0.0 && sy >= 0.0 && sx < w as f64 && sy < h as f64;
            let su = (sx.floor().max(0.0) as usize).min(w - 1);
            let sv = (sy.floor().max(0.0) as usize).min(h - 1);
            let (d, si) = (v * w + u, sv * w + su);
            out_i[3 * d..3 * d + 3].copy_from_slice(&image[3 * si..3 * si + 3]);
            out_m[d] = inside && mask[si];
        }
    }
    (out_i, out_m)
}
