mod common;

use common::tiny_setup;
use dope::model::{
    encode, forward, init_online, init_params, momentum_update, Bound, EncoderConfig, Gate, InferenceGate,
    ModelError,
};
use dope_autodiff::{grad_check, AutodiffError, ParamSet, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn autodiff(e: ModelError) -> AutodiffError {
    match e {
        ModelError::Autodiff(a) => a,
        other => panic!("{other}"),
    }
}

fn micro() -> EncoderConfig {
    EncoderConfig {
        input_size: 8,
        stages: vec![2, 3, 3],
        grid_size: 2,
        head: vec![3, 4, 3],
        out_dim: 3,
        ..EncoderConfig::default()
    }
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let enc = micro();
    let params: ParamSet<f64> = init_online(&enc, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let image: Vec<f64> = (0..2 * 8 * 8 * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
    let weights: Vec<f64> = (0..2 * 2 * 2 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let given: Vec<f64> = (0..8).map(|i| (i % 3) as f64 / 2.0).collect();
    for predicted in [true, false] {
        let report = grad_check(
            &params,
            |g, vars| {
                let p = Bound::from_vars(&params, vars);
                let x = g.constant(Tensor::new(vec![2, 8, 8, 3], image.clone())?);
                let gate = if predicted {
                    Gate::Predicted
                } else {
                    Gate::Given(g.constant(Tensor::new(vec![2, 2, 2, 1], given.clone())?))
                };
                let e = forward(g, &enc, &p, x, gate).map_err(autodiff)?;
                let w = g.constant(Tensor::new(vec![2, 2, 2, 3], weights.clone())?);
                let y = g.mul(e.gated, w)?;
                let m = g.mean(y);
                let l = g.mean(e.trunk.mask_prob);
                g.add(m, l)
            },
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "max relative error {}", report.max_rel_error());
    }
}

#[test]
fn cells_are_unit_vectors_scaled_by_the_gate() {
    let (ds, enc) = tiny_setup(0);
    let params = init_params(&enc, 1).unwrap().online;
    let imgs: Vec<&[f32]> = ds.objects.iter().map(|o| o.views[0].rgb.as_slice()).collect();
    let grids = encode(&params, &enc, &imgs, InferenceGate::Predicted).unwrap();
    for g in &grids {
        assert_eq!((g.height, g.width, g.dim), (8, 8, 8));
        for c in 0..g.cells() {
            let n = &g.normalized[c * 8..(c + 1) * 8];
            let norm: f32 = n.iter().map(|x| x * x).sum::<f32>().sqrt();
            assert!((norm - 1.0).abs() < 1e-4);
            let p = g.mask_prob[c];
            assert!(p > 0.0 && p < 1.0);
            for (f, x) in g.cell(c).iter().zip(n) {
                assert!((f - p * x).abs() < 1e-6);
            }
        }
    }
    let ungated = encode(&params, &enc, &imgs[..1], InferenceGate::None).unwrap();
    assert_eq!(ungated[0].features, ungated[0].normalized);
}

#[test]
fn encoding_does_not_depend_on_batch_composition() {
    let (ds, enc) = tiny_setup(0);
    let params = init_params(&enc, 1).unwrap().online;
    let imgs: Vec<&[f32]> = ds.objects.iter().map(|o| o.views[1].rgb.as_slice()).collect();
    let all = encode(&params, &enc, &imgs, InferenceGate::Predicted).unwrap();
    let one = encode(&params, &enc, &imgs[3..4], InferenceGate::Predicted).unwrap();
    for (a, b) in all[3].features.iter().zip(&one[0].features) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn init_is_seeded_and_target_starts_equal() {
    let enc = EncoderConfig::default();
    let a = init_params(&enc, 4).unwrap();
    assert_eq!(a, init_params(&enc, 4).unwrap());
    assert_ne!(a.online, init_params(&enc, 5).unwrap().online);
    assert_eq!(a.online, a.target);
    let names: Vec<String> = a.online.names().map(str::to_string).collect();
    let want: Vec<String> = enc.layout().into_iter().map(|l| l.0).collect();
    assert_eq!(names, want);
}

#[test]
fn input_shape_is_checked() {
    let enc = micro();
    let params = init_params(&enc, 0).unwrap().online;
    let bad = vec![0.0f32; 7 * 7 * 3];
    assert!(encode(&params, &enc, &[bad.as_slice()], InferenceGate::Predicted).is_err());
    let e = EncoderConfig { grid_size: 3, ..enc.clone() };
    assert!(matches!(e.validate(), Err(ModelError::InvalidConfig(_))));
}

proptest! {
    #[test]
    fn momentum_update_interpolates(m in 0.0f64..=1.0, seed in any::<u64>()) {
        let enc = micro();
        let online: ParamSet<f64> = init_online(&enc, seed).unwrap();
        let before: ParamSet<f64> = init_online(&enc, seed.wrapping_add(1)).unwrap();
        let mut target = before.clone();
        momentum_update(&online, &mut target, m).unwrap();
        for ((t, o), b) in target.tensors().zip(online.tensors()).zip(before.tensors()) {
            for ((&x, &y), &z) in t.data().iter().zip(o.data()).zip(b.data()) {
                prop_assert!((x - (m * z + (1.0 - m) * y)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn momentum_outside_unit_interval_rejected(m in prop_oneof![-5.0f64..-1e-9, 1.0f64 + 1e-9..5.0]) {
        let enc = micro();
        let online: ParamSet<f64> = init_online(&enc, 0).unwrap();
        let mut target = online.clone();
        prop_assert!(matches!(momentum_update(&online, &mut target, m), Err(ModelError::InvalidMomentum(_))));
    }
}
