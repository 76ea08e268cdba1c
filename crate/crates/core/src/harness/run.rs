use std::time::Instant;

use dope_autodiff::ParamSet;

use super::config::{Classifier, RunConfig};
use super::metrics::MetricRow;
use super::{HarnessError, Result};
use crate::contrastive::{train, EpochLog, Objective, TrainConfig, TrainError, TrainOutcome};
use crate::lowshot::{
    encode_episode_views, evaluate_global, evaluate_local_grids, sample_episodes, EvalResult, SplitName,
};
use crate::model::{init_params, InferenceGate};
use crate::scenegen::Dataset;
use crate::seed;

/// Features are gated by the predicted mask only when the mask head was
/// trained.
pub fn inference_gate(train: &TrainConfig) -> InferenceGate {
    if train.predict_mask {
        InferenceGate::Predicted
    } else {
        InferenceGate::None
    }
}

pub fn classifier_for(objective: Objective) -> Classifier {
    match objective {
        Objective::Dope => Classifier::Local,
        Objective::Global => Classifier::Global,
    }
}

/// Trains on the base-split objects from a seeded initialization.
pub fn train_run(
    cfg: &RunConfig,
    dataset: &Dataset,
    objective: Objective,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let pool = cfg.split.objects(dataset, SplitName::Base);
    if pool.is_empty() {
        return Err(TrainError::InsufficientData("base split has no objects".into()).into());
    }
    let init = init_params(&cfg.model, seed::derive(cfg.train.seed, "init", &[]))?;
    Ok(train(dataset, &pool, &cfg.model, &cfg.train, objective, init, on_epoch)?)
}

fn split_index(s: SplitName) -> u64 {
    match s {
        SplitName::Base => 0,
        SplitName::Val => 1,
        SplitName::Test => 2,
    }
}

/// Runs every configured `(split, setting)` and returns one row each.
/// Episodes depend only on the evaluation seed, so different parameters
/// are scored on identical episodes.
pub fn evaluate_checkpoint(
    params: &ParamSet<f32>,
    cfg: &RunConfig,
    dataset: &Dataset,
    classifier: Classifier,
    name: &str,
) -> Result<Vec<MetricRow>> {
    let gate = inference_gate(&cfg.train);
    let e = &cfg.eval;
    let mut rows = Vec::new();
    for &split in &e.splits {
        let mut sets = Vec::new();
        for s in &e.settings {
            let seed = seed::derive(e.seed, "eval", &[split_index(split), s.n_way as u64, s.k_shot as u64]);
            let eps = sample_episodes(dataset, &cfg.split, split, s.n_way, s.k_shot, e.q_queries, e.episodes, seed)?;
            sets.push((s, seed, eps));
        }
        let start = Instant::now();
        let grids = match classifier {
            Classifier::Local => {
                let all: Vec<_> = sets.iter().flat_map(|(_, _, eps)| eps.iter().cloned()).collect();
                Some(encode_episode_views(params, &cfg.model, dataset, &all, gate)?)
            }
            Classifier::Global => None,
        };
        let shared = start.elapsed().as_secs_f64() / sets.len() as f64;
        for (s, seed, eps) in &sets {
            let t = Instant::now();
            let r: EvalResult = match &grids {
                Some(g) => evaluate_local_grids(g, eps, e.k_points, *seed)?,
                None => evaluate_global(params, &cfg.model, dataset, eps, gate)?,
            };
            rows.push(MetricRow {
                config: name.to_string(),
                split,
                n_way: s.n_way,
                k_shot: s.k_shot,
                accuracy: r.accuracy,
                ci95: r.ci95,
                episodes: r.episodes,
                flagged_queries: r.flagged_queries,
                seed: e.seed,
                wall_clock_s: shared + t.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(rows)
}

/// Trains and evaluates every ablation variant in order.
pub fn run_ablation(
    cfg: &RunConfig,
    dataset: &Dataset,
    mut on_variant: impl FnMut(&str, &RunConfig, &TrainOutcome, &[MetricRow]) -> Result<()>,
) -> Result<Vec<MetricRow>> {
    if cfg.ablation.is_empty() {
        return Err(HarnessError::Config("ablation matrix is empty".into()));
    }
    let mut rows = Vec::new();
    for v in &cfg.ablation {
        let vcfg = cfg.with_variant(v)?;
        let out = train_run(&vcfg, dataset, v.objective, |_| {})?;
        let r = evaluate_checkpoint(&out.params.online, &vcfg, dataset, classifier_for(v.objective), &v.name)?;
        on_variant(&v.name, &vcfg, &out, &r)?;
        rows.extend(r);
    }
    Ok(rows)
}
