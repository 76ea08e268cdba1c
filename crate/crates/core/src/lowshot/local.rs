use super::{LowShotError, Result};
use crate::geometry::farthest_point_sample;
use crate::model::FeatureGrid;

pub const FOREGROUND_THRESHOLD: f32 = 0.5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryCells {
    pub cells: Vec<usize>,
    /// No cell exceeded the threshold and all probabilities were equal,
    /// so the cells were spread over the whole grid.
    pub flagged: bool,
}

/// Query cells to match: farthest point sampling over the predicted
/// foreground, or the `k` most confident cells when fewer than `k` pass
/// the threshold.
pub fn query_cells(query: &FeatureGrid, k: usize, seed: u64) -> QueryCells {
    let w = query.width;
    let coords = |c: usize| [(c % w) as f64, (c / w) as f64];
    let fg: Vec<usize> = (0..query.cells())
        .filter(|&c| query.mask_prob[c] > FOREGROUND_THRESHOLD)
        .collect();
    if fg.len() >= k && !fg.is_empty() {
        let pts: Vec<[f64; 2]> = fg.iter().map(|&c| coords(c)).collect();
        let idx = farthest_point_sample(&pts, k, seed).expect("non-empty");
        return QueryCells {
            cells: idx.into_iter().map(|i| fg[i]).collect(),
            flagged: false,
        };
    }
    let p = &query.mask_prob;
    let uniform = p.iter().all(|&x| x == p[0]);
    if uniform {
        let pts: Vec<[f64; 2]> = (0..query.cells()).map(coords).collect();
        let idx = farthest_point_sample(&pts, k, seed).expect("non-empty grid");
        return QueryCells {
            cells: idx,
            flagged: true,
        };
    }
    let mut order: Vec<usize> = (0..query.cells()).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    order.truncate(k);
    QueryCells {
        cells: order,
        flagged: false,
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Σ_i max_j ⟨z_q^i, z_s^j⟩` over the given query cells and every
/// support cell.
pub fn score_cells(query: &FeatureGrid, cells: &[usize], support: &FeatureGrid) -> f64 {
    cells
        .iter()
        .map(|&c| {
            let z = query.cell(c);
            (0..support.cells())
                .map(|j| dot(z, support.cell(j)))
                .fold(f32::NEG_INFINITY, f32::max) as f64
        })
        .sum()
}

pub fn local_match_score(query: &FeatureGrid, support: &FeatureGrid, k: usize, seed: u64) -> f64 {
    let q = query_cells(query, k, seed);
    score_cells(query, &q.cells, support)
}

/// Index of the best-scoring support; ties go to the lowest index.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|b| b.0)
}

/// 1-NN label under the local matching score.
pub fn classify_query(
    query: &FeatureGrid,
    supports: &[(&FeatureGrid, usize)],
    k: usize,
    seed: u64,
) -> Result<usize> {
    let q = query_cells(query, k, seed);
    let scores: Vec<f64> = supports
        .iter()
        .map(|(s, _)| score_cells(query, &q.cells, s))
        .collect();
    argmax_first(&scores)
        .map(|i| supports[i].1)
        .ok_or(LowShotError::NoSupports)
}
