use dope_autodiff::{adamw_step, cosine_lr, AdamWConfig, AdamWState, Graph, ParamSet, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::batch::{build_batch, TrainBatch};
use super::loss::{corr_nt_xent_loss, mask_bce_loss, LossBreakdown};
use super::{Result, TrainConfig, TrainError};
use crate::geometry::Size;
use crate::lowshot::global::{embed_graph, instance_nt_xent_loss};
use crate::model::{forward, momentum_update, trunk, Bound, EncoderConfig, EncoderParams, Gate};
use crate::scenegen::Dataset;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Correspondence NT-Xent plus mask loss.
    Dope,
    /// Instance discrimination on pooled global embeddings.
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_corr: f64,
    pub l_mask: f64,
    pub lr: f64,
    pub accepted_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub log: Vec<EpochLog>,
    pub first_step: LossBreakdown,
    pub steps: usize,
}

fn stack<T: Scalar>(images: &[&[f32]], cfg: &EncoderConfig) -> Result<Tensor<T>> {
    let s = cfg.input_size;
    let data = images
        .iter()
        .flat_map(|im| im.iter().map(|&v| T::from_f64_lossy(v as f64)))
        .collect();
    Ok(Tensor::new(vec![images.len(), s, s, cfg.in_channels], data)?)
}

fn mask_tensor<T: Scalar>(masks: &[&[bool]], grid: usize) -> Result<Tensor<T>> {
    let data = masks
        .iter()
        .flat_map(|m| m.iter().map(|&b| if b { T::one() } else { T::zero() }))
        .collect();
    Ok(Tensor::new(vec![masks.len(), grid, grid, 1], data)?)
}

/// Loss terms recorded on a graph.
pub struct StepLoss {
    pub total: Var,
    pub l_corr: Var,
    pub l_mask: Option<Var>,
}

/// Records the full training loss for `batch` on `g`. `online` holds the
/// trainable encoder leaves; the target encoder runs on its own graph and
/// enters `g` only as constants.
pub fn batch_loss<T: Scalar>(
    g: &mut Graph<T>,
    enc: &EncoderConfig,
    online: &Bound,
    target: &ParamSet<T>,
    batch: &TrainBatch,
    cfg: &TrainConfig,
    objective: Objective,
) -> Result<StepLoss> {
    let gs = enc.grid_size;
    let imgs_a: Vec<&[f32]> = batch.samples.iter().map(|s| s.image_a.as_slice()).collect();
    let imgs_b: Vec<&[f32]> = batch.samples.iter().map(|s| s.image_b.as_slice()).collect();
    let masks_a: Vec<&[bool]> = batch.samples.iter().map(|s| s.grid_mask_a.as_slice()).collect();
    let masks_b: Vec<&[bool]> = batch.samples.iter().map(|s| s.grid_mask_b.as_slice()).collect();

    let xa = g.constant(stack(&imgs_a, enc)?);
    let gate_a = if cfg.predict_mask {
        Gate::Predicted
    } else {
        Gate::Given(g.constant(mask_tensor(&masks_a, gs)?))
    };

    let mut tg = Graph::<T>::new();
    let tp = Bound::new(&mut tg, target, false);
    let txb = tg.constant(stack(&imgs_b, enc)?);
    let tgate = if cfg.predict_mask {
        Gate::Predicted
    } else {
        Gate::Given(tg.constant(mask_tensor(&masks_b, gs)?))
    };

    let (l_corr, logits_a) = match objective {
        Objective::Dope => {
            let ea = forward(g, enc, online, xa, gate_a)?;
            let eb = forward(&mut tg, enc, &tp, txb, tgate)?;
            let fb = g.constant(tg.value(eb.gated).clone());
            let pairs = batch.cell_pairs();
            let gm_b: Vec<Vec<bool>> = batch.samples.iter().map(|s| s.grid_mask_b.clone()).collect();
            let l = corr_nt_xent_loss(
                g,
                ea.gated,
                fb,
                &pairs,
                &gm_b,
                cfg.temperature,
                cfg.strategy,
                cfg.include_positive_in_denominator,
            )?;
            (l, ea.trunk.mask_logits)
        }
        Objective::Global => {
            let (za, ea) = embed_graph(g, enc, online, xa, gate_a)?;
            let (zb, _) = embed_graph(&mut tg, enc, &tp, txb, tgate)?;
            let zb = g.constant(tg.value(zb).clone());
            let l = instance_nt_xent_loss(g, za, zb, cfg.temperature)?;
            (l, ea.trunk.mask_logits)
        }
    };

    if !cfg.predict_mask {
        return Ok(StepLoss {
            total: l_corr,
            l_corr,
            l_mask: None,
        });
    }
    let xb = g.constant(stack(&imgs_b, enc)?);
    let tb = trunk(g, enc, online, xb)?;
    let gt_a: Vec<bool> = masks_a.concat();
    let gt_b: Vec<bool> = masks_b.concat();
    let ma = mask_bce_loss(g, logits_a, &gt_a)?;
    let mb = mask_bce_loss(g, tb.mask_logits, &gt_b)?;
    let msum = g.add(ma, mb)?;
    let l_mask = g.scale(msum, T::from_f64_lossy(0.5));
    let total = g.add(l_corr, l_mask)?;
    Ok(StepLoss {
        total,
        l_corr,
        l_mask: Some(l_mask),
    })
}

fn scalar<T: Scalar>(g: &Graph<T>, v: Var) -> f64 {
    g.value(v).data()[0].to_f64().unwrap()
}

fn diagnostic(step: usize, lr: f64, b: &LossBreakdown, params: &ParamSet<f32>) -> String {
    let norms: Vec<String> = params
        .iter()
        .map(|(n, t)| {
            let s: f64 = t.data().iter().map(|&v| (v as f64).powi(2)).sum();
            format!("{n}={:.4e}", s.sqrt())
        })
        .collect();
    format!(
        "step {step} lr {lr:.3e} l_corr {} l_mask {} param norms [{}]",
        b.l_corr,
        b.l_mask,
        norms.join(", ")
    )
}

/// One optimizer step on `batch`.
pub fn train_step(
    params: &mut EncoderParams,
    state: &mut AdamWState<f32>,
    enc: &EncoderConfig,
    cfg: &TrainConfig,
    objective: Objective,
    batch: &TrainBatch,
    lr: f64,
    step: usize,
) -> Result<LossBreakdown> {
    let mut g = Graph::<f32>::new();
    let online = Bound::new(&mut g, &params.online, true);
    let loss = batch_loss(&mut g, enc, &online, &params.target, batch, cfg, objective)?;
    let l_corr = scalar(&g, loss.l_corr);
    let l_mask = loss.l_mask.map_or(0.0, |v| scalar(&g, v));
    let b = LossBreakdown {
        l_corr,
        l_mask,
        total: l_corr + l_mask,
        accepted: batch.num_pairs(),
    };
    if !b.total.is_finite() {
        return Err(TrainError::NonFinite {
            step,
            dump: diagnostic(step, lr, &b, &params.online),
        });
    }
    g.backward(loss.total)?;
    let grads: Vec<Vec<f32>> = online
        .vars()
        .iter()
        .zip(params.online.tensors())
        .map(|(&v, t)| g.take_grad(v).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    if grads.iter().flatten().any(|x| !x.is_finite()) {
        return Err(TrainError::NonFinite {
            step,
            dump: format!("non-finite gradient; {}", diagnostic(step, lr, &b, &params.online)),
        });
    }
    let opt = AdamWConfig {
        lr,
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    };
    adamw_step(&mut params.online, &grads, state, &opt)?;
    momentum_update(&params.online, &mut params.target, cfg.ema)?;
    Ok(b)
}

pub fn step_seed(cfg: &TrainConfig, step: usize) -> u64 {
    seed::derive(cfg.seed, "step", &[step as u64])
}

/// Trains from `init` on the objects listed in `pool`.
pub fn train(
    dataset: &Dataset,
    pool: &[usize],
    enc: &EncoderConfig,
    cfg: &TrainConfig,
    objective: Objective,
    init: EncoderParams,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    enc.validate()?;
    let grid = Size::new(enc.grid_size, enc.grid_size);
    let total_steps = cfg.total_steps();
    let mut params = init;
    let mut state = AdamWState::new(&params.online);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut first = None;
    for epoch in 0..cfg.epochs {
        let (mut sc, mut sm, mut acc, mut req, mut lr_sum) = (0.0, 0.0, 0usize, 0usize, 0.0);
        for s in 0..cfg.steps_per_epoch {
            let step = epoch * cfg.steps_per_epoch + s;
            let lr = cosine_lr(step, total_steps, cfg.lr0)?;
            let batch = build_batch(dataset, pool, cfg, grid, step_seed(cfg, step))?;
            let b = train_step(&mut params, &mut state, enc, cfg, objective, &batch, lr, step)?;
            first.get_or_insert(b);
            sc += b.l_corr;
            sm += b.l_mask;
            acc += b.accepted;
            req += cfg.batch_size * cfg.n_correspondences;
            lr_sum += lr;
        }
        let n = cfg.steps_per_epoch as f64;
        let entry = EpochLog {
            epoch,
            l_corr: sc / n,
            l_mask: sm / n,
            lr: lr_sum / n,
            accepted_rate: acc as f64 / req as f64,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome {
        params,
        log,
        first_step: first.unwrap_or_default(),
        steps: total_steps,
    })
}
