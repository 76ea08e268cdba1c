mod common;

use common::{fps_first, greedy_fps, toy_scene, visibility_oracle};
use dope::geometry::{
    farthest_point_sample, find_correspondences, pixel_to_grid, project, unproject, GeometryError, Size,
    DEFAULT_OCCLUSION_TOL,
};
use proptest::prelude::*;

#[test]
fn correspondences_match_ray_cast_oracle() {
    let grid = Size::new(8, 8);
    for seed in 0..12 {
        let (mesh, a, b) = toy_scene(seed, 32);
        let fg = a.foreground_pixels();
        let pts: Vec<[f64; 2]> = fg.iter().map(|&(u, v)| [u as f64 + 0.5, v as f64 + 0.5]).collect();
        let picks: Vec<(usize, usize)> = greedy_fps(&pts, 48, fps_first(pts.len(), seed))
            .into_iter()
            .map(|i| fg[i])
            .collect();
        let want = visibility_oracle(&mesh, &a, &b, &picks, DEFAULT_OCCLUSION_TOL, grid);
        let got = find_correspondences(&a, &b, 48, DEFAULT_OCCLUSION_TOL, seed, grid).unwrap();
        let got: Vec<_> = got.pairs.iter().map(|p| (p.uv_a, p.uv_b)).collect();
        assert_eq!(got, want, "scene {seed}");
    }
}

#[test]
fn same_view_accepts_every_sample() {
    let (_, a, _) = toy_scene(3, 32);
    let set = find_correspondences(&a, &a, 16, DEFAULT_OCCLUSION_TOL, 0, Size::new(32, 32)).unwrap();
    assert_eq!(set.sampled, 16);
    assert_eq!(set.len(), 16);
    assert!(set.pairs.iter().all(|p| p.uv_a == p.uv_b));
}

#[test]
fn correspondences_need_foreground() {
    let (_, mut a, b) = toy_scene(1, 32);
    a.mask.iter_mut().for_each(|m| *m = false);
    let e = find_correspondences(&a, &b, 8, DEFAULT_OCCLUSION_TOL, 0, Size::new(8, 8)).unwrap_err();
    assert_eq!(e, GeometryError::EmptyForeground);
}

#[test]
fn grid_cells_are_unique_per_set() {
    for seed in 0..6 {
        let (_, a, b) = toy_scene(seed, 32);
        let set = find_correspondences(&a, &b, 64, DEFAULT_OCCLUSION_TOL, seed, Size::new(4, 4)).unwrap();
        let mut cells: Vec<_> = set.pairs.iter().map(|p| p.grid_a).collect();
        cells.sort_unstable();
        cells.dedup();
        assert_eq!(cells.len(), set.len());
        assert!(set.len() <= 16);
    }
}

#[test]
fn non_integer_stride_is_rejected() {
    let e = pixel_to_grid(0, 0, Size::new(30, 30), Size::new(8, 8)).unwrap_err();
    assert!(matches!(e, GeometryError::NonIntegerStride { .. }));
}

proptest! {
    #[test]
    fn fps_matches_greedy_reference(
        pts in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..64),
        n in 1usize..80,
        seed in any::<u64>(),
    ) {
        let pts: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
        let got = farthest_point_sample(&pts, n, seed).unwrap();
        prop_assert_eq!(got, greedy_fps(&pts, n, fps_first(pts.len(), seed)));
    }

    #[test]
    fn fps_indices_are_distinct(
        pts in prop::collection::vec((0u8..4, 0u8..4), 1..40),
        n in 1usize..50,
        seed in any::<u64>(),
    ) {
        // Heavy duplication on a 4x4 lattice.
        let pts: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x as f64, y as f64]).collect();
        let got = farthest_point_sample(&pts, n, seed).unwrap();
        prop_assert_eq!(got.len(), n.min(pts.len()));
        let mut s = got.clone();
        s.sort_unstable();
        s.dedup();
        prop_assert_eq!(s.len(), got.len());
    }

    #[test]
    fn unproject_then_project_is_identity(seed in 0u64..40) {
        let (_, a, _) = toy_scene(seed, 32);
        for (u, v) in a.foreground_pixels() {
            let p = project(&a, &unproject(&a, u, v).unwrap());
            prop_assert!((p.u - (u as f64 + 0.5)).abs() < 1e-6);
            prop_assert!((p.v - (v as f64 + 0.5)).abs() < 1e-6);
            prop_assert_eq!(p.pixel(a.size()), Some((u, v)));
        }
    }

    #[test]
    fn pixel_to_grid_is_floor_division(u in 0usize..64, v in 0usize..64, s in 0u32..4) {
        let g = 64 >> s;
        let (gu, gv) = pixel_to_grid(u, v, Size::new(64, 64), Size::new(g, g)).unwrap();
        prop_assert_eq!((gu, gv), (u / (1 << s), v / (1 << s)));
    }
}
