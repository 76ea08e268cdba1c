use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Result, SceneError};
use crate::geometry::{Intrinsics, Pose};
use crate::seed;

/// Ranges in degrees and world units. `[lo, hi]` with `lo == hi` pins
/// the value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraRanges {
    pub azimuth_deg: (f64, f64),
    pub elevation_deg: (f64, f64),
    pub distance: (f64, f64),
    pub width: usize,
    pub height: usize,
    pub focal: f64,
}

impl Default for CameraRanges {
    fn default() -> Self {
        Self {
            azimuth_deg: (0.0, 360.0),
            elevation_deg: (15.0, 45.0),
            distance: (2.6, 3.4),
            width: 64,
            height: 64,
            focal: 72.0,
        }
    }
}

impl CameraRanges {
    pub fn validate(&self) -> Result<()> {
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        let (el_lo, el_hi) = self.elevation_deg;
        let ok = ordered(self.azimuth_deg)
            && ordered(self.elevation_deg)
            && ordered(self.distance)
            && el_lo >= 0.0
            && el_hi < 90.0
            && self.distance.0 > 0.0
            && self.focal > 0.0
            && self.width > 0
            && self.height > 0;
        if ok {
            Ok(())
        } else {
            Err(SceneError::InvalidRange(format!("{self:?}")))
        }
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.focal,
            fy: self.focal,
            cx: self.width as f64 / 2.0,
            cy: self.height as f64 / 2.0,
            width: self.width,
            height: self.height,
        }
    }
}

/// Spherical viewpoint around the origin, world z up.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub distance: f64,
}

impl Viewpoint {
    pub fn eye(&self) -> Vector3<f64> {
        let (az, el) = (self.azimuth_deg.to_radians(), self.elevation_deg.to_radians());
        self.distance * Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
    }
}

/// Pose of a camera at `eye` whose optical axis passes through the
/// origin, with image-down aligned to world −z as far as possible.
pub fn look_at_origin(eye: Vector3<f64>) -> Pose {
    let forward = (-eye).normalize();
    let right = forward.cross(&Vector3::z()).normalize();
    let down = forward.cross(&right);
    let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    Pose {
        rotation,
        translation: -(rotation * eye),
    }
}

pub fn sample_viewpoint(ranges: &CameraRanges, seed: u64) -> Result<Viewpoint> {
    ranges.validate()?;
    let mut rng = seed::rng(seed, "camera", &[]);
    let mut draw = |(lo, hi): (f64, f64)| if hi > lo { rng.gen_range(lo..hi) } else { lo };
    Ok(Viewpoint {
        azimuth_deg: draw(ranges.azimuth_deg),
        elevation_deg: draw(ranges.elevation_deg),
        distance: draw(ranges.distance),
    })
}

pub fn sample_camera(ranges: &CameraRanges, seed: u64) -> Result<(Intrinsics, Pose)> {
    let vp = sample_viewpoint(ranges, seed)?;
    Ok((ranges.intrinsics(), look_at_origin(vp.eye())))
}
