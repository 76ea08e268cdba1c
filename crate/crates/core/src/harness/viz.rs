use std::path::{Path, PathBuf};

use dope_autodiff::ParamSet;
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::lowshot::{argmax_first, ViewRef, FOREGROUND_THRESHOLD};
use crate::model::{encode, EncoderConfig, FeatureGrid, InferenceGate};
use crate::scenegen::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VizSpec {
    pub source: ViewRef,
    pub targets: Vec<ViewRef>,
    /// Grid cell `(u, v)` of the source whose similarity heatmap is drawn
    /// over each target.
    pub query_cell: Option<(usize, usize)>,
    /// Pixels per image pixel in the written PNGs.
    pub scale: usize,
    pub output: PathBuf,
}

impl Default for VizSpec {
    fn default() -> Self {
        Self {
            source: ViewRef { object: 0, view: 0 },
            targets: vec![ViewRef { object: 0, view: 1 }],
            query_cell: Some((8, 8)),
            scale: 4,
            output: "runs/viz".into(),
        }
    }
}

/// Hue in `[0, 1)` from the angle of cell `(u, v)` about the grid center.
pub fn position_hue(u: usize, v: usize, width: usize, height: usize) -> f32 {
    let x = u as f64 + 0.5 - width as f64 / 2.0;
    let y = v as f64 + 0.5 - height as f64 / 2.0;
    (y.atan2(x) / std::f64::consts::TAU).rem_euclid(1.0) as f32
}

/// Distance on the hue circle.
pub fn hue_distance(a: f32, b: f32) -> f32 {
    let d = (a - b).abs() % 1.0;
    d.min(1.0 - d)
}

fn foreground(g: &FeatureGrid) -> Vec<usize> {
    (0..g.cells()).filter(|&c| g.mask_prob[c] > FOREGROUND_THRESHOLD).collect()
}

fn cosine_row(g: &FeatureGrid, c: usize) -> &[f32] {
    &g.normalized[c * g.dim..(c + 1) * g.dim]
}

/// For each predicted-foreground target cell, the source foreground cell
/// with the highest cosine similarity (lowest index on ties). Falls back to
/// every source cell when the source has no predicted foreground.
pub fn match_cells(source: &FeatureGrid, target: &FeatureGrid) -> Vec<Option<usize>> {
    let mut src = foreground(source);
    if src.is_empty() {
        src = (0..source.cells()).collect();
    }
    (0..target.cells())
        .map(|c| {
            if target.mask_prob[c] <= FOREGROUND_THRESHOLD {
                return None;
            }
            let z = cosine_row(target, c);
            let s: Vec<f64> = src
                .iter()
                .map(|&j| z.iter().zip(cosine_row(source, j)).map(|(a, b)| (a * b) as f64).sum())
                .collect();
            argmax_first(&s).map(|i| src[i])
        })
        .collect()
}

/// Source hues by position, target hues copied from matched source cells.
pub fn hue_maps(source: &FeatureGrid, target: &FeatureGrid) -> (Vec<Option<f32>>, Vec<Option<f32>>) {
    let hue = |c: usize| position_hue(c % source.width, c / source.width, source.width, source.height);
    let src = (0..source.cells())
        .map(|c| (source.mask_prob[c] > FOREGROUND_THRESHOLD).then(|| hue(c)))
        .collect();
    let tgt = match_cells(source, target).into_iter().map(|m| m.map(hue)).collect();
    (src, tgt)
}

fn hsv(h: f32, s: f32, v: f32) -> [f32; 3] {
    let f = |n: f32| {
        let k = (n + h * 6.0) % 6.0;
        v - v * s * k.min(4.0 - k).clamp(0.0, 1.0)
    };
    [f(5.0), f(3.0), f(1.0)]
}

fn to_u8(x: f32) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Image with each grid cell tinted by `colors` (untinted cells are
/// dimmed), upscaled by `scale`.
fn overlay(rgb: &[f32], size: usize, grid: usize, colors: &[Option<[f32; 3]>], scale: usize) -> RgbImage {
    let stride = size / grid;
    let out = (size * scale) as u32;
    RgbImage::from_fn(out, out, |x, y| {
        let (px, py) = (x as usize / scale, y as usize / scale);
        let cell = (py / stride) * grid + px / stride;
        let p = &rgb[(py * size + px) * 3..(py * size + px) * 3 + 3];
        let c = match colors[cell] {
            Some(c) => [0.3 * p[0] + 0.7 * c[0], 0.3 * p[1] + 0.7 * c[1], 0.3 * p[2] + 0.7 * c[2]],
            None => [0.4 * p[0], 0.4 * p[1], 0.4 * p[2]],
        };
        Rgb(c.map(to_u8))
    })
}

/// Cosine similarity of source cell `cell` against every target cell.
pub fn similarity_map(source: &FeatureGrid, cell: usize, target: &FeatureGrid) -> Vec<f32> {
    let z = cosine_row(source, cell);
    (0..target.cells())
        .map(|c| z.iter().zip(cosine_row(target, c)).map(|(a, b)| a * b).sum())
        .collect()
}

fn save(img: &RgbImage, path: &Path) -> Result<PathBuf> {
    img.save(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    Ok(path.to_path_buf())
}

/// Writes `source.png`, `target<i>.png` and, with a query cell,
/// `heatmap<i>.png` into `spec.output`.
pub fn viz_matches(
    params: &ParamSet<f32>,
    cfg: &EncoderConfig,
    dataset: &Dataset,
    spec: &VizSpec,
    gate: InferenceGate,
) -> Result<Vec<PathBuf>> {
    if spec.targets.is_empty() {
        return Err(HarnessError::Config("viz needs at least one target".into()));
    }
    let view = |r: &ViewRef| {
        dataset
            .objects
            .get(r.object)
            .and_then(|o| o.views.get(r.view))
            .ok_or_else(|| HarnessError::Config(format!("no view {r:?} in dataset")))
    };
    let mut refs = vec![spec.source];
    refs.extend(&spec.targets);
    let views = refs.iter().map(view).collect::<Result<Vec<_>>>()?;
    let images: Vec<&[f32]> = views.iter().map(|v| v.rgb.as_slice()).collect();
    let grids = encode(params, cfg, &images, gate)?;
    std::fs::create_dir_all(&spec.output)?;
    let (size, grid, scale) = (cfg.input_size, cfg.grid_size, spec.scale.max(1));
    let tint = |h: &[Option<f32>]| -> Vec<Option<[f32; 3]>> { h.iter().map(|x| x.map(|h| hsv(h, 0.9, 1.0))).collect() };
    let mut written = Vec::new();
    let src = &grids[0];
    let (src_hue, _) = hue_maps(src, src);
    written.push(save(
        &overlay(images[0], size, grid, &tint(&src_hue), scale),
        &spec.output.join("source.png"),
    )?);
    for (i, tgt) in grids[1..].iter().enumerate() {
        let (_, hues) = hue_maps(src, tgt);
        written.push(save(
            &overlay(images[i + 1], size, grid, &tint(&hues), scale),
            &spec.output.join(format!("target{i}.png")),
        )?);
        if let Some((u, v)) = spec.query_cell {
            if u >= grid || v >= grid {
                return Err(HarnessError::Config(format!("query cell ({u}, {v}) outside the {grid}x{grid} grid")));
            }
            let sim = similarity_map(src, v * grid + u, tgt);
            let colors: Vec<Option<[f32; 3]>> = sim
                .iter()
                .map(|&s| Some(hsv(0.66 * (1.0 - (s + 1.0) / 2.0), 1.0, 1.0)))
                .collect();
            written.push(save(
                &overlay(images[i + 1], size, grid, &colors, scale),
                &spec.output.join(format!("heatmap{i}.png")),
            )?);
        }
    }
    Ok(written)
}
