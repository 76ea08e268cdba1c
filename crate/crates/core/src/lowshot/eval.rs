use std::collections::BTreeMap;

use dope_autodiff::ParamSet;
use serde::{Deserialize, Serialize};

use super::global::global_baseline_embed;
use super::local::{argmax_first, query_cells, score_cells};
use super::{Episode, LowShotError, Result, ViewRef};
use crate::model::{encode, EncoderConfig, FeatureGrid, InferenceGate};
use crate::scenegen::Dataset;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    /// Half-width of the 95% interval, `1.96·σ/√E` with the population σ
    /// of per-episode accuracies.
    pub ci95: f64,
    pub episodes: usize,
    pub per_episode: Vec<f64>,
    /// Queries classified from a grid with no predicted foreground.
    pub flagged_queries: usize,
}

impl EvalResult {
    pub fn from_accuracies(per_episode: Vec<f64>, flagged_queries: usize) -> Result<Self> {
        if per_episode.is_empty() {
            return Err(LowShotError::NoEpisodes);
        }
        let e = per_episode.len() as f64;
        let mean = per_episode.iter().sum::<f64>() / e;
        let var = per_episode.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / e;
        Ok(Self {
            accuracy: mean,
            ci95: 1.96 * var.sqrt() / e.sqrt(),
            episodes: per_episode.len(),
            per_episode,
            flagged_queries,
        })
    }
}

/// Scores each episode with `classify(episode, query_index)`, which
/// returns a predicted label.
pub fn evaluate_with<F>(episodes: &[Episode], mut classify: F) -> Result<EvalResult>
where
    F: FnMut(&Episode, usize) -> Result<usize>,
{
    let mut acc = Vec::with_capacity(episodes.len());
    for ep in episodes {
        if ep.queries.is_empty() {
            return Err(LowShotError::NoEpisodes);
        }
        let mut correct = 0usize;
        for (i, &(_, label)) in ep.queries.iter().enumerate() {
            correct += usize::from(classify(ep, i)? == label);
        }
        acc.push(correct as f64 / ep.queries.len() as f64);
    }
    EvalResult::from_accuracies(acc, 0)
}

fn episode_views(episodes: &[Episode]) -> Vec<ViewRef> {
    let mut refs: Vec<ViewRef> = episodes
        .iter()
        .flat_map(|e| e.support.iter().chain(&e.queries).map(|&(r, _)| r))
        .collect();
    refs.sort_unstable();
    refs.dedup();
    refs
}

fn images<'a>(dataset: &'a Dataset, refs: &[ViewRef]) -> Vec<&'a [f32]> {
    refs.iter()
        .map(|r| dataset.objects[r.object].views[r.view].rgb.as_slice())
        .collect()
}

/// Encodes every view referenced by `episodes` once.
pub fn encode_episode_views(
    params: &ParamSet<f32>,
    cfg: &EncoderConfig,
    dataset: &Dataset,
    episodes: &[Episode],
    gate: InferenceGate,
) -> Result<BTreeMap<ViewRef, FeatureGrid>> {
    let refs = episode_views(episodes);
    let grids = encode(params, cfg, &images(dataset, &refs), gate)?;
    Ok(refs.into_iter().zip(grids).collect())
}

/// Local sum-of-max 1-NN classifier over precomputed grids. Query cells
/// for query `q` of episode `e` are sampled with a seed derived from
/// `(seed, e, q)`.
pub fn evaluate_local_grids(
    grids: &BTreeMap<ViewRef, FeatureGrid>,
    episodes: &[Episode],
    k: usize,
    seed: u64,
) -> Result<EvalResult> {
    let mut acc = Vec::with_capacity(episodes.len());
    let mut flagged = 0;
    for (ei, ep) in episodes.iter().enumerate() {
        if ep.queries.is_empty() {
            return Err(LowShotError::NoEpisodes);
        }
        let mut correct = 0usize;
        for (qi, &(qref, label)) in ep.queries.iter().enumerate() {
            let query = &grids[&qref];
            let cells = query_cells(query, k, seed::derive(seed, "query", &[ei as u64, qi as u64]));
            flagged += usize::from(cells.flagged);
            let scores: Vec<f64> = ep
                .support
                .iter()
                .map(|(s, _)| score_cells(query, &cells.cells, &grids[s]))
                .collect();
            let best = argmax_first(&scores).ok_or(LowShotError::NoSupports)?;
            correct += usize::from(ep.support[best].1 == label);
        }
        acc.push(correct as f64 / ep.queries.len() as f64);
    }
    EvalResult::from_accuracies(acc, flagged)
}

pub fn evaluate_local(
    params: &ParamSet<f32>,
    cfg: &EncoderConfig,
    dataset: &Dataset,
    episodes: &[Episode],
    gate: InferenceGate,
    k: usize,
    seed: u64,
) -> Result<EvalResult> {
    let grids = encode_episode_views(params, cfg, dataset, episodes, gate)?;
    evaluate_local_grids(&grids, episodes, k, seed)
}

/// Cosine 1-NN over global embeddings; ties go to the lowest support index.
pub fn evaluate_global(
    params: &ParamSet<f32>,
    cfg: &EncoderConfig,
    dataset: &Dataset,
    episodes: &[Episode],
    gate: InferenceGate,
) -> Result<EvalResult> {
    let refs = episode_views(episodes);
    let emb: BTreeMap<ViewRef, Vec<f32>> = refs
        .iter()
        .copied()
        .zip(global_baseline_embed(params, cfg, &images(dataset, &refs), gate)?)
        .collect();
    evaluate_with(episodes, |ep, qi| {
        let q = &emb[&ep.queries[qi].0];
        let scores: Vec<f64> = ep
            .support
            .iter()
            .map(|(s, _)| q.iter().zip(&emb[s]).map(|(a, b)| (a * b) as f64).sum())
            .collect();
        let best = argmax_first(&scores).ok_or(LowShotError::NoSupports)?;
        Ok(ep.support[best].1)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_of_two_episodes() {
        let r = EvalResult::from_accuracies(vec![0.0, 1.0], 0).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert!((r.ci95 - 1.96 * 0.5 / 2f64.sqrt()).abs() < 1e-15);
        assert!((r.ci95 - 0.693).abs() < 1e-3);
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(
            EvalResult::from_accuracies(vec![], 0),
            Err(LowShotError::NoEpisodes)
        ));
    }
}
