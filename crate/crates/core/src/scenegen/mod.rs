//! Procedural toy object categories and a software rasterizer producing
//! calibrated RGB-D views with foreground masks.

pub mod camera;
pub mod dataset;
pub mod mesh;
pub mod raster;
pub mod templates;

use thiserror::Error;

use crate::geometry::GeometryError;

pub use camera::{look_at_origin, sample_camera, sample_viewpoint, CameraRanges, Viewpoint};
pub use dataset::{
    generate, generate_dataset, load_dataset, read_manifest, write_dataset, BackgroundMode, Lighting,
    Dataset, DatasetSpec, Manifest, ObjectViews, ViewRecord,
};
pub use mesh::Mesh;
pub use raster::{default_light, render, Background};
pub use templates::{default_categories, make_instance, CategorySpec, TEMPLATES};

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("malformed dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, SceneError>;
