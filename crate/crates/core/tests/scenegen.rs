mod common;

use common::{ray_cast_depth, tiny_setup, toy_scene};
use dope::scenegen::{
    default_categories, generate, load_dataset, make_instance, write_dataset, Background, BackgroundMode,
    CategorySpec, DatasetSpec, Lighting, SceneError, TEMPLATES,
};
use proptest::prelude::*;

#[test]
fn depth_and_mask_agree_with_ray_casting() {
    for seed in 0..8 {
        let (mesh, a, _) = toy_scene(seed, 32);
        for v in 0..32 {
            for u in 0..32 {
                let hit = ray_cast_depth(&mesh, &a.intrinsics, &a.pose, u, v);
                assert_eq!(a.is_foreground(u, v), hit.is_some(), "scene {seed} pixel ({u}, {v})");
                if let Some(d) = hit {
                    assert!((a.depth_at(u, v) as f64 - d).abs() < 1e-5);
                } else {
                    assert!(!a.depth_at(u, v).is_finite());
                }
            }
        }
    }
}

#[test]
fn generation_is_deterministic_and_seeded() {
    let (a, _) = tiny_setup(5);
    let (b, _) = tiny_setup(5);
    let (c, _) = tiny_setup(6);
    assert_eq!(a, b);
    assert_ne!(a.objects[0].views[0].rgb, c.objects[0].views[0].rgb);
    assert_eq!(a.objects.len(), 6);
    assert!(a.objects.iter().all(|o| o.views.len() == 4 && o.viewpoints.len() == 4));
}

#[test]
fn every_view_shows_the_object_within_the_frame() {
    let (ds, _) = tiny_setup(0);
    for o in &ds.objects {
        for (vp, v) in o.viewpoints.iter().zip(&o.views) {
            let fg = v.foreground_pixels();
            assert!(fg.len() > 20);
            // Unit-ball objects never reach the border at these distances.
            assert!(fg.iter().all(|&(u, w)| u > 0 && w > 0 && u < 31 && w < 31));
            let center = v.pose.camera_center();
            assert!((center.norm() - vp.distance).abs() < 1e-9);
        }
    }
}

#[test]
fn instances_fit_the_unit_ball_and_vary() {
    for (i, t) in TEMPLATES.iter().enumerate() {
        let spec = CategorySpec::new(i, t);
        let meshes: Vec<_> = (0..20).map(|s| make_instance(&spec, s).unwrap()).collect();
        for m in &meshes {
            m.validate().unwrap();
            assert!(m.max_vertex_norm() <= 1.0 + 1e-9);
        }
        let mut distinct = meshes.clone();
        distinct.dedup();
        assert_eq!(distinct.len(), 20, "{t}");
    }
}

#[test]
fn face_colors_stay_in_the_category_range() {
    for spec in default_categories(14) {
        let m = make_instance(&spec, 3).unwrap();
        for c in &m.face_colors {
            for k in 0..3 {
                assert!(c[k] >= spec.color_lo[k] && c[k] <= spec.color_hi[k]);
            }
        }
    }
}

#[test]
fn background_palette_is_per_instance() {
    let spec = DatasetSpec {
        background: BackgroundMode::Checker,
        ..DatasetSpec::default()
    };
    let colors = |b: Background| match b {
        Background::Checker { a, b, cell, .. } => (a, b, cell),
        Background::Solid(_) => panic!("checker expected"),
    };
    let first = colors(spec.background(2, 1, 0));
    for v in 1..6 {
        assert_eq!(colors(spec.background(2, 1, v)), first);
    }
    assert_ne!(colors(spec.background(2, 2, 0)), first);
    let solid = DatasetSpec { background: BackgroundMode::Solid, ..DatasetSpec::default() };
    assert!(matches!(solid.background(0, 0, 0), Background::Solid(_)));
}

#[test]
fn lighting_modes() {
    let (ds, _) = tiny_setup(2);
    let poses: Vec<_> = ds.objects[0].views.iter().map(|v| v.pose.clone()).collect();
    let mut spec = ds.spec.clone();
    let fixed = spec.light(0, 0, 0, &poses[0]);
    assert_eq!(fixed, spec.light(0, 1, 3, &poses[3]));

    spec.lighting = Lighting::Headlight;
    let in_camera: Vec<_> = (0..poses.len()).map(|v| poses[v].rotation * spec.light(0, 0, v, &poses[v])).collect();
    for l in &in_camera {
        assert!((l - in_camera[0]).norm() < 1e-12);
        assert!(l.z < 0.0, "light sits on the camera side");
    }

    spec.lighting = Lighting::PerView;
    let a = spec.light(0, 0, 0, &poses[0]);
    assert_eq!(a, spec.light(0, 0, 0, &poses[1]));
    assert_ne!(a, spec.light(0, 0, 1, &poses[0]));
    for v in 0..50 {
        let l = spec.light(1, 2, v, &poses[0]);
        assert!((l.norm() - 1.0).abs() < 1e-12);
        assert!(l.z >= 20f64.to_radians().sin() - 1e-12);
    }

    let lit = generate(&DatasetSpec { lighting: Lighting::Headlight, ..ds.spec.clone() }).unwrap();
    assert_eq!(lit.objects[0].views[0].mask, ds.objects[0].views[0].mask);
    assert_ne!(lit.objects[0].views[0].rgb, ds.objects[0].views[0].rgb);
}

#[test]
fn invalid_specs_rejected() {
    let mut s = DatasetSpec::default();
    s.views_per_instance = 1;
    assert!(matches!(s.validate(), Err(SceneError::InvalidRange(_))));
    let mut s = DatasetSpec::default();
    s.grid_stride = 5;
    assert!(s.validate().is_err());
    let mut s = DatasetSpec::default();
    s.categories[1].template = "teapot".into();
    assert!(s.validate().is_err());
    let mut s = DatasetSpec::default();
    s.categories[3].proportion = (1.2, 0.8);
    assert!(matches!(s.validate(), Err(SceneError::InvalidRange(_))));
}

#[test]
fn disk_round_trip() {
    let (ds, _) = tiny_setup(3);
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&ds, dir.path()).unwrap();
    assert_eq!(manifest.views.len(), ds.num_views());
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.spec, ds.spec);
    for (o, p) in ds.objects.iter().zip(&back.objects) {
        assert_eq!(o.viewpoints, p.viewpoints);
        for (a, b) in o.views.iter().zip(&p.views) {
            assert_eq!(a.mask, b.mask);
            assert_eq!(a.depth.iter().map(|d| d.to_bits()).collect::<Vec<_>>(), b.depth.iter().map(|d| d.to_bits()).collect::<Vec<_>>());
            assert_eq!(a.intrinsics, b.intrinsics);
            assert_eq!(a.pose, b.pose);
            assert!(a.rgb.iter().zip(&b.rgb).all(|(x, y)| (x - y).abs() <= 0.5 / 255.0 + 1e-6));
        }
    }
}

#[test]
fn missing_dataset_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(&dir.path().join("nope")), Err(SceneError::Io(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn views_are_consistent_rasters(seed in any::<u64>()) {
        let mut spec = DatasetSpec {
            categories: default_categories(2),
            instances_per_category: 1,
            views_per_instance: 2,
            seed,
            ..DatasetSpec::default()
        };
        spec.camera.width = 32;
        spec.camera.height = 32;
        let ds = generate(&spec).unwrap();
        for o in &ds.objects {
            for v in &o.views {
                prop_assert!(v.rgb.iter().all(|x| (0.0..=1.0).contains(x)));
                for (m, d) in v.mask.iter().zip(&v.depth) {
                    prop_assert_eq!(*m, d.is_finite() && *d > 0.0);
                }
                prop_assert!(v.pose.orthonormality_residual() < 1e-9);
            }
        }
    }
}
