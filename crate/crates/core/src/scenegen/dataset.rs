use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Rgb, RgbImage};
use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::camera::{look_at_origin, sample_viewpoint, CameraRanges, Viewpoint};
use super::raster::{default_light, render, Background};
use super::templates::{default_categories, make_instance, CategorySpec};
use super::{Result, SceneError};
use crate::geometry::{Intrinsics, Pose, PosedView};
use crate::seed;

pub const DEPTH_MAGIC: &[u8; 6] = b"DDEP1\0";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundMode {
    Solid,
    Checker,
    /// Each instance draws solid or checker with equal probability.
    Mixed,
}

/// Where the directional light sits relative to the object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lighting {
    /// One world-frame direction for every view.
    Fixed,
    /// Fixed in the camera frame, above and to the left of the lens.
    Headlight,
    /// A fresh upper-hemisphere direction per view.
    PerView,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub categories: Vec<CategorySpec>,
    pub instances_per_category: usize,
    pub views_per_instance: usize,
    pub camera: CameraRanges,
    pub background: BackgroundMode,
    pub lighting: Lighting,
    /// Image side must be a multiple of this.
    pub grid_stride: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            categories: default_categories(14),
            instances_per_category: 12,
            views_per_instance: 20,
            camera: CameraRanges::default(),
            background: BackgroundMode::Mixed,
            lighting: Lighting::Fixed,
            grid_stride: 4,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.views_per_instance < 2 {
            return Err(SceneError::InvalidRange("views_per_instance must be >= 2".into()));
        }
        let s = self.grid_stride;
        if s == 0 || self.camera.width % s != 0 || self.camera.height % s != 0 {
            return Err(SceneError::InvalidRange(format!(
                "image {}x{} not divisible by grid stride {s}",
                self.camera.width, self.camera.height
            )));
        }
        let mut ids: Vec<usize> = self.categories.iter().map(|c| c.category_id).collect();
        ids.sort_unstable();
        ids.dedup();
        let mut templates: Vec<&str> = self.categories.iter().map(|c| c.template.as_str()).collect();
        templates.sort_unstable();
        templates.dedup();
        if ids.len() != self.categories.len() || templates.len() != self.categories.len() {
            return Err(SceneError::InvalidRange(
                "category ids and templates must be distinct".into(),
            ));
        }
        for c in &self.categories {
            c.validate()?;
        }
        self.camera.validate()
    }

    pub fn mesh_seed(&self, category_id: usize, instance: usize) -> u64 {
        seed::derive(self.seed, "mesh", &[category_id as u64, instance as u64])
    }

    pub fn view_seed(&self, category_id: usize, instance: usize, view: usize) -> u64 {
        seed::derive(self.seed, "view", &[category_id as u64, instance as u64, view as u64])
    }

    /// World-frame direction toward the light for one view.
    pub fn light(&self, category_id: usize, instance: usize, view: usize, pose: &Pose) -> Vector3<f64> {
        match self.lighting {
            Lighting::Fixed => default_light(),
            Lighting::Headlight => pose.rotation.transpose() * Vector3::new(-0.35, -0.5, -1.0).normalize(),
            Lighting::PerView => {
                let mut rng = seed::rng(self.seed, "light", &[category_id as u64, instance as u64, view as u64]);
                let az = rng.gen_range(0.0..std::f64::consts::TAU);
                let el = rng.gen_range(20f64..70.0).to_radians();
                Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
            }
        }
    }

    /// Background palette is fixed per instance; the checker phase moves
    /// per view.
    pub fn background(&self, category_id: usize, instance: usize, view: usize) -> Background {
        let mut rng = seed::rng(self.seed, "background", &[category_id as u64, instance as u64]);
        let mut color = || -> [f32; 3] { [rng.gen(), rng.gen(), rng.gen()] };
        let (a, b) = (color(), color());
        let checker = match self.background {
            BackgroundMode::Solid => false,
            BackgroundMode::Checker => true,
            BackgroundMode::Mixed => rng.gen_bool(0.5),
        };
        let cell = rng.gen_range(4..=10);
        if !checker {
            return Background::Solid(a);
        }
        let mut vr = seed::rng(
            self.seed,
            "checker",
            &[category_id as u64, instance as u64, view as u64],
        );
        Background::Checker {
            a,
            b,
            cell,
            phase: (vr.gen_range(0..cell), vr.gen_range(0..cell)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectViews {
    /// Index into the spec's category list.
    pub category: usize,
    pub category_id: usize,
    pub instance: usize,
    pub viewpoints: Vec<Viewpoint>,
    pub views: Vec<PosedView>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    /// Category-major, then instance.
    pub objects: Vec<ObjectViews>,
}

impl Dataset {
    pub fn object(&self, category: usize, instance: usize) -> &ObjectViews {
        &self.objects[category * self.spec.instances_per_category + instance]
    }

    pub fn num_views(&self) -> usize {
        self.objects.iter().map(|o| o.views.len()).sum()
    }
}

pub fn render_object(spec: &DatasetSpec, category: usize, instance: usize) -> Result<ObjectViews> {
    let cat = &spec.categories[category];
    let mesh = make_instance(cat, spec.mesh_seed(cat.category_id, instance))?;
    let k = spec.camera.intrinsics();
    let mut viewpoints = Vec::with_capacity(spec.views_per_instance);
    let mut views = Vec::with_capacity(spec.views_per_instance);
    for v in 0..spec.views_per_instance {
        let vp = sample_viewpoint(&spec.camera, spec.view_seed(cat.category_id, instance, v))?;
        let pose = look_at_origin(vp.eye());
        let bg = spec.background(cat.category_id, instance, v);
        let light = spec.light(cat.category_id, instance, v, &pose);
        views.push(render(&mesh, &k, &pose, &bg, &light)?);
        viewpoints.push(vp);
    }
    Ok(ObjectViews {
        category,
        category_id: cat.category_id,
        instance,
        viewpoints,
        views,
    })
}

/// Renders every view in memory.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let jobs: Vec<(usize, usize)> = (0..spec.categories.len())
        .flat_map(|c| (0..spec.instances_per_category).map(move |i| (c, i)))
        .collect();
    let objects = jobs
        .par_iter()
        .map(|&(c, i)| render_object(spec, c, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        spec: spec.clone(),
        objects,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub category: usize,
    pub category_id: usize,
    pub template: String,
    pub instance: usize,
    pub view: usize,
    pub viewpoint: Viewpoint,
    /// Path prefix relative to the dataset root; append `.rgb.png` etc.
    pub prefix: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: DatasetSpec,
    pub views: Vec<ViewRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl CameraFile {
    pub fn new(k: &Intrinsics, pose: &Pose) -> Self {
        let r = &pose.rotation;
        let mut rotation = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rotation[3 * i + j] = r[(i, j)];
            }
        }
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            rotation,
            translation: [pose.translation.x, pose.translation.y, pose.translation.z],
        }
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        }
    }

    pub fn pose(&self) -> Pose {
        Pose {
            rotation: Matrix3::from_row_slice(&self.rotation),
            translation: Vector3::from(self.translation),
        }
    }
}

fn io(path: &Path, e: impl std::fmt::Display) -> SceneError {
    SceneError::Io(format!("{}: {e}", path.display()))
}

pub fn write_depth(path: &Path, width: usize, height: usize, depth: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(14 + 4 * depth.len());
    buf.extend_from_slice(DEPTH_MAGIC);
    buf.extend_from_slice(&(width as u32).to_le_bytes());
    buf.extend_from_slice(&(height as u32).to_le_bytes());
    for d in depth {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| io(path, e))
}

pub fn read_depth(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| io(path, e))?;
    if buf.len() < 14 || &buf[..6] != DEPTH_MAGIC {
        return Err(SceneError::Format(format!("{}: bad depth header", path.display())));
    }
    let w = u32::from_le_bytes(buf[6..10].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(buf[10..14].try_into().unwrap()) as usize;
    if buf.len() != 14 + 4 * w * h {
        return Err(SceneError::Format(format!(
            "{}: expected {} depth values",
            path.display(),
            w * h
        )));
    }
    let depth = buf[14..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((w, h, depth))
}

pub fn quantize(x: f32) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_view(prefix: &Path, view: &PosedView) -> Result<()> {
    let (w, h) = (view.width() as u32, view.height() as u32);
    let rgb: RgbImage = ImageBuffer::from_fn(w, h, |u, v| {
        let i = 3 * (v as usize * w as usize + u as usize);
        Rgb([quantize(view.rgb[i]), quantize(view.rgb[i + 1]), quantize(view.rgb[i + 2])])
    });
    let with = |ext: &str| PathBuf::from(format!("{}.{ext}", prefix.display()));
    let p = with("rgb.png");
    rgb.save(&p).map_err(|e| io(&p, e))?;
    let mask = GrayImage::from_fn(w, h, |u, v| {
        image::Luma([if view.mask[(v * w + u) as usize] { 255 } else { 0 }])
    });
    let p = with("mask.png");
    mask.save(&p).map_err(|e| io(&p, e))?;
    write_depth(&with("depth.bin"), view.width(), view.height(), &view.depth)?;
    let cam = CameraFile::new(&view.intrinsics, &view.pose);
    let p = with("cam.json");
    let json = serde_json::to_string_pretty(&cam).map_err(|e| io(&p, e))?;
    fs::write(&p, json).map_err(|e| io(&p, e))
}

pub fn read_view(prefix: &Path) -> Result<PosedView> {
    let with = |ext: &str| PathBuf::from(format!("{}.{ext}", prefix.display()));
    let p = with("cam.json");
    let text = fs::read_to_string(&p).map_err(|e| io(&p, e))?;
    let cam: CameraFile =
        serde_json::from_str(&text).map_err(|e| SceneError::Format(format!("{}: {e}", p.display())))?;
    let p = with("rgb.png");
    let rgb = image::open(&p).map_err(|e| io(&p, e))?.to_rgb8();
    let p = with("mask.png");
    let mask = image::open(&p).map_err(|e| io(&p, e))?.to_luma8();
    let (w, h, depth) = read_depth(&with("depth.bin"))?;
    if (w, h) != (cam.width, cam.height)
        || rgb.dimensions() != (w as u32, h as u32)
        || mask.dimensions() != (w as u32, h as u32)
    {
        return Err(SceneError::Format(format!(
            "{}: raster sizes disagree",
            prefix.display()
        )));
    }
    let rgb = rgb.into_raw().into_iter().map(|b| b as f32 / 255.0).collect();
    let mask = mask.into_raw().into_iter().map(|b| b >= 128).collect();
    Ok(PosedView::new(rgb, depth, mask, cam.intrinsics(), cam.pose())?)
}

fn prefix_for(category_id: usize, instance: usize, view: usize) -> String {
    format!("cat{category_id}/inst{instance}/view{view}")
}

/// Writes the dataset layout under `root` and returns the manifest.
pub fn write_dataset(dataset: &Dataset, root: &Path) -> Result<Manifest> {
    let mut records = Vec::with_capacity(dataset.num_views());
    for obj in &dataset.objects {
        let dir = root.join(format!("cat{}/inst{}", obj.category_id, obj.instance));
        fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        for (v, vp) in obj.viewpoints.iter().enumerate() {
            records.push(ViewRecord {
                category: obj.category,
                category_id: obj.category_id,
                template: dataset.spec.categories[obj.category].template.clone(),
                instance: obj.instance,
                view: v,
                viewpoint: *vp,
                prefix: prefix_for(obj.category_id, obj.instance, v),
            });
        }
    }
    records
        .par_iter()
        .map(|r| {
            let view = &dataset.object(r.category, r.instance).views[r.view];
            write_view(&root.join(&r.prefix), view)
        })
        .collect::<Result<Vec<()>>>()?;
    let manifest = Manifest {
        spec: dataset.spec.clone(),
        views: records,
    };
    let p = root.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| io(&p, e))?;
    fs::write(&p, json).map_err(|e| io(&p, e))?;
    Ok(manifest)
}

pub fn generate_dataset(spec: &DatasetSpec, root: &Path) -> Result<Manifest> {
    let dataset = generate(spec)?;
    write_dataset(&dataset, root)
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let p = root.join("manifest.json");
    let text = fs::read_to_string(&p).map_err(|e| io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| SceneError::Format(format!("{}: {e}", p.display())))
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let manifest = read_manifest(root)?;
    let spec = manifest.spec;
    let mut objects: Vec<ObjectViews> = (0..spec.categories.len())
        .flat_map(|c| (0..spec.instances_per_category).map(move |i| (c, i)))
        .map(|(c, i)| ObjectViews {
            category: c,
            category_id: spec.categories[c].category_id,
            instance: i,
            viewpoints: Vec::new(),
            views: Vec::new(),
        })
        .collect();
    let views = manifest
        .views
        .par_iter()
        .map(|r| read_view(&root.join(&r.prefix)))
        .collect::<Result<Vec<_>>>()?;
    for (r, view) in manifest.views.iter().zip(views) {
        let idx = r.category * spec.instances_per_category + r.instance;
        let obj = objects
            .get_mut(idx)
            .ok_or_else(|| SceneError::Format(format!("record {} out of range", r.prefix)))?;
        if obj.views.len() != r.view {
            return Err(SceneError::Format(format!("record {} out of order", r.prefix)));
        }
        obj.viewpoints.push(r.viewpoint);
        obj.views.push(view);
    }
    Ok(Dataset { spec, objects })
}
