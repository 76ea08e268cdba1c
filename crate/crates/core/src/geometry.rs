//! Pinhole camera model, cross-view pixel correspondences with depth-based
//! occlusion rejection, and farthest point sampling.
//!
//! Conventions: `x_cam = R·x_world + t`, +z looks forward, +x right, +y
//! down. Pixel `(u, v)` covers `[u, u+1) × [v, v+1)`; its center sits at
//! `(u + 0.5, v + 0.5)`.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Depth tolerance (world units) for accepting a reprojected pixel as
/// visible. The lookup happens at the nearest pixel center, so it must
/// absorb the depth change of a slanted surface across half a pixel.
pub const DEFAULT_OCCLUSION_TOL: f64 = 0.05;

/// Projections with `z_cam` at or below this are behind the camera.
pub const MIN_CAMERA_Z: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("pixel ({0}, {1}) is background")]
    BackgroundPixel(usize, usize),
    #[error("pixel ({0}, {1}) has no valid depth")]
    InvalidDepth(usize, usize),
    #[error("view has no foreground pixels")]
    EmptyForeground,
    #[error("empty point set")]
    EmptyInput,
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    OutOfBounds {
        u: usize,
        v: usize,
        width: usize,
        height: usize,
    },
    #[error("image {image:?} is not an integer multiple of grid {grid:?}")]
    NonIntegerStride { image: Size, grid: Size },
    #[error("invalid view: {0}")]
    InvalidView(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Size {
    pub width: usize,
    pub height: usize,
}

impl Size {
    pub const fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    pub fn area(self) -> usize {
        self.width * self.height
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidView(format!(
                "intrinsics violate fx,fy > 0 and 0 <= c < size: {self:?}"
            )))
        }
    }

    pub fn size(&self) -> Size {
        Size::new(self.width, self.height)
    }
}

/// World-to-camera rigid transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// `‖RᵀR − I‖∞`.
    pub fn orthonormality_residual(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }

    pub fn validate(&self) -> Result<()> {
        if self.orthonormality_residual() < 1e-6 && self.rotation.determinant() > 0.0 {
            Ok(())
        } else {
            Err(GeometryError::InvalidView(
                "rotation is not a proper orthonormal matrix".into(),
            ))
        }
    }

    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

/// One calibrated observation: RGB, camera-frame depth, foreground mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PosedView {
    /// Row-major `height × width × 3`, values in `[0, 1]`.
    pub rgb: Vec<f32>,
    /// Camera-frame z; non-finite or non-positive means no surface.
    pub depth: Vec<f32>,
    pub mask: Vec<bool>,
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl PosedView {
    pub fn new(
        rgb: Vec<f32>,
        depth: Vec<f32>,
        mask: Vec<bool>,
        intrinsics: Intrinsics,
        pose: Pose,
    ) -> Result<Self> {
        intrinsics.validate()?;
        pose.validate()?;
        let n = intrinsics.width * intrinsics.height;
        if rgb.len() != 3 * n || depth.len() != n || mask.len() != n {
            return Err(GeometryError::InvalidView(format!(
                "raster sizes rgb={} depth={} mask={} do not match {}x{}",
                rgb.len(),
                depth.len(),
                mask.len(),
                intrinsics.width,
                intrinsics.height
            )));
        }
        if let Some(i) = mask
            .iter()
            .zip(&depth)
            .position(|(&m, &d)| m && !(d.is_finite() && d > 0.0))
        {
            return Err(GeometryError::InvalidView(format!(
                "foreground pixel {i} lacks a positive depth"
            )));
        }
        Ok(Self {
            rgb,
            depth,
            mask,
            intrinsics,
            pose,
        })
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn size(&self) -> Size {
        self.intrinsics.size()
    }

    pub fn is_foreground(&self, u: usize, v: usize) -> bool {
        self.mask[v * self.width() + u]
    }

    pub fn depth_at(&self, u: usize, v: usize) -> f32 {
        self.depth[v * self.width() + u]
    }

    /// Foreground pixel coordinates in raster order.
    pub fn foreground_pixels(&self) -> Vec<(usize, usize)> {
        let w = self.width();
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| (i % w, i / w))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub z_cam: f64,
    pub behind_camera: bool,
}

impl Projection {
    /// Pixel whose center is nearest to the projected point, if inside
    /// the raster and in front of the camera.
    pub fn pixel(&self, size: Size) -> Option<(usize, usize)> {
        if self.behind_camera || !self.u.is_finite() || !self.v.is_finite() {
            return None;
        }
        let (pu, pv) = (self.u.floor(), self.v.floor());
        if pu < 0.0 || pv < 0.0 || pu >= size.width as f64 || pv >= size.height as f64 {
            return None;
        }
        Some((pu as usize, pv as usize))
    }
}

/// Back-projects the center of pixel `(u, v)` to world coordinates.
pub fn unproject(view: &PosedView, u: usize, v: usize) -> Result<Vector3<f64>> {
    if u >= view.width() || v >= view.height() {
        return Err(GeometryError::OutOfBounds {
            u,
            v,
            width: view.width(),
            height: view.height(),
        });
    }
    if !view.is_foreground(u, v) {
        return Err(GeometryError::BackgroundPixel(u, v));
    }
    let d = view.depth_at(u, v);
    if !(d.is_finite() && d > 0.0) {
        return Err(GeometryError::InvalidDepth(u, v));
    }
    Ok(unproject_with_depth(
        &view.intrinsics,
        &view.pose,
        u as f64 + 0.5,
        v as f64 + 0.5,
        d as f64,
    ))
}

/// `Rᵀ·(d·K⁻¹·[u, v, 1]ᵀ − t)` for continuous image coordinates.
pub fn unproject_with_depth(
    k: &Intrinsics,
    pose: &Pose,
    u: f64,
    v: f64,
    depth: f64,
) -> Vector3<f64> {
    let cam = Vector3::new((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth);
    pose.rotation.transpose() * (cam - pose.translation)
}

pub fn project_point(k: &Intrinsics, pose: &Pose, world: &Vector3<f64>) -> Projection {
    let c = pose.rotation * world + pose.translation;
    Projection {
        u: k.fx * c.x / c.z + k.cx,
        v: k.fy * c.y / c.z + k.cy,
        z_cam: c.z,
        behind_camera: c.z <= MIN_CAMERA_Z,
    }
}

pub fn project(view: &PosedView, world: &Vector3<f64>) -> Projection {
    project_point(&view.intrinsics, &view.pose, world)
}

/// `(⌊u·grid.w/img.w⌋, ⌊v·grid.h/img.h⌋)`.
pub fn pixel_to_grid(u: usize, v: usize, image: Size, grid: Size) -> Result<(usize, usize)> {
    if grid.width == 0
        || grid.height == 0
        || image.width % grid.width != 0
        || image.height % grid.height != 0
    {
        return Err(GeometryError::NonIntegerStride { image, grid });
    }
    if u >= image.width || v >= image.height {
        return Err(GeometryError::OutOfBounds {
            u,
            v,
            width: image.width,
            height: image.height,
        });
    }
    Ok((u * grid.width / image.width, v * grid.height / image.height))
}

/// Greedy farthest point sampling in 2D.
///
/// The first index is a seeded uniform draw; each following index
/// maximizes, over the points not yet chosen, the distance to the nearest
/// chosen point, ties going to the lowest index. Returns `min(n, points.len())` indices.
pub fn farthest_point_sample(points: &[[f64; 2]], n: usize, seed: u64) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.gen_range(0..points.len());
    Ok(farthest_point_sample_from(points, n, first))
}

/// Farthest point sampling with a fixed first index.
pub fn farthest_point_sample_from(points: &[[f64; 2]], n: usize, first: usize) -> Vec<usize> {
    let count = n.min(points.len());
    let mut chosen = Vec::with_capacity(count);
    if count == 0 {
        return chosen;
    }
    let mut nearest = vec![f64::INFINITY; points.len()];
    let mut taken = vec![false; points.len()];
    let mut current = first;
    for _ in 0..count {
        chosen.push(current);
        taken[current] = true;
        let c = points[current];
        let mut best = None::<(usize, f64)>;
        for (i, p) in points.iter().enumerate() {
            let d = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
            if d < nearest[i] {
                nearest[i] = d;
            }
            if !taken[i] && best.map_or(true, |(_, bd)| nearest[i] > bd) {
                best = Some((i, nearest[i]));
            }
        }
        match best {
            Some((i, _)) => current = i,
            None => break,
        }
    }
    chosen
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ViewId {
    pub instance: usize,
    pub view: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PixelCorrespondence {
    pub uv_a: (usize, usize),
    pub uv_b: (usize, usize),
    pub grid_a: (usize, usize),
    pub grid_b: (usize, usize),
    pub world_point: Vector3<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<PixelCorrespondence>,
    pub view_ids: Option<(ViewId, ViewId)>,
    /// Number of pixels drawn by farthest point sampling in view A.
    pub sampled: usize,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Drops later pairs that land in an already-used `grid_a` cell.
pub fn dedup_grid_a(pairs: &mut Vec<PixelCorrespondence>) {
    let mut seen = std::collections::HashSet::new();
    pairs.retain(|p| seen.insert(p.grid_a));
}

/// Samples up to `n` foreground pixels of `view_a` by farthest point
/// sampling and keeps those whose surface point is visible in `view_b`.
///
/// A pixel is accepted when its reprojection lands inside `view_b`, in
/// front of the camera, on the foreground, and within `occlusion_tol` of
/// the depth stored at the nearest pixel center.
pub fn find_correspondences(
    view_a: &PosedView,
    view_b: &PosedView,
    n: usize,
    occlusion_tol: f64,
    seed: u64,
    grid: Size,
) -> Result<CorrespondenceSet> {
    let fg = view_a.foreground_pixels();
    if fg.is_empty() {
        return Err(GeometryError::EmptyForeground);
    }
    let points: Vec<[f64; 2]> = fg
        .iter()
        .map(|&(u, v)| [u as f64 + 0.5, v as f64 + 0.5])
        .collect();
    let picks = farthest_point_sample(&points, n, seed)?;
    let mut pairs = Vec::with_capacity(picks.len());
    for &i in &picks {
        let (ua, va) = fg[i];
        let world = unproject(view_a, ua, va)?;
        let proj = project(view_b, &world);
        let Some((ub, vb)) = proj.pixel(view_b.size()) else {
            continue;
        };
        if !view_b.is_foreground(ub, vb) {
            continue;
        }
        let db = view_b.depth_at(ub, vb) as f64;
        if !((db - proj.z_cam).abs() < occlusion_tol) {
            continue;
        }
        pairs.push(PixelCorrespondence {
            uv_a: (ua, va),
            uv_b: (ub, vb),
            grid_a: pixel_to_grid(ua, va, view_a.size(), grid)?,
            grid_b: pixel_to_grid(ub, vb, view_b.size(), grid)?,
            world_point: world,
        });
    }
    dedup_grid_a(&mut pairs);
    Ok(CorrespondenceSet {
        pairs,
        view_ids: None,
        sampled: picks.len(),
    })
}
