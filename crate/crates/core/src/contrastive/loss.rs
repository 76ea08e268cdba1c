use dope_autodiff::{CustomOp, Graph, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::{Result, TrainError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeStrategy {
    /// Masked cells of the same object's second view.
    SecondViewOnly,
    /// Correspondence targets of the other objects in the batch.
    OtherObjectsOnly,
    Both,
}

impl NegativeStrategy {
    pub const ALL: [NegativeStrategy; 3] = [
        NegativeStrategy::SecondViewOnly,
        NegativeStrategy::OtherObjectsOnly,
        NegativeStrategy::Both,
    ];
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_corr: f64,
    pub l_mask: f64,
    pub total: f64,
    pub accepted: usize,
}

/// `(object, cell)` addresses into the second-view features for the
/// negatives of correspondence `index` of object `k`.
pub fn negatives(
    k: usize,
    index: usize,
    pairs: &[Vec<(usize, usize)>],
    grid_mask_b: &[Vec<bool>],
    strategy: NegativeStrategy,
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if strategy != NegativeStrategy::OtherObjectsOnly {
        let pos = pairs[k][index].1;
        out.extend(
            grid_mask_b[k]
                .iter()
                .enumerate()
                .filter(|&(c, &m)| m && c != pos)
                .map(|(c, _)| (k, c)),
        );
    }
    if strategy != NegativeStrategy::SecondViewOnly {
        for (j, pj) in pairs.iter().enumerate() {
            if j != k {
                out.extend(pj.iter().map(|&(_, cb)| (j, cb)));
            }
        }
    }
    out
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.to_f64().unwrap() * y.to_f64().unwrap())
        .sum()
}

/// Mean NT-Xent over all correspondences and its gradient with respect to
/// `fa`. Features are `[batch, cells, dim]` row-major; `pairs[k]` lists
/// `(cell_a, cell_b)` for object `k`.
#[allow(clippy::too_many_arguments)]
pub fn corr_nt_xent<T: Scalar>(
    fa: &[T],
    fb: &[T],
    cells: usize,
    dim: usize,
    pairs: &[Vec<(usize, usize)>],
    grid_mask_b: &[Vec<bool>],
    tau: f64,
    strategy: NegativeStrategy,
    include_positive: bool,
) -> Result<(f64, Vec<T>)> {
    let total: usize = pairs.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(TrainError::NoCorrespondences);
    }
    let at = |k: usize, c: usize| {
        let s = (k * cells + c) * dim;
        s..s + dim
    };
    let mut grad = vec![0.0f64; fa.len()];
    let mut loss = 0.0;
    let scale = 1.0 / total as f64;
    for (k, pk) in pairs.iter().enumerate() {
        for (i, &(ca, cb)) in pk.iter().enumerate() {
            let negs = negatives(k, i, pairs, grid_mask_b, strategy);
            if negs.is_empty() {
                return Err(TrainError::NoNegatives { object: k, index: i });
            }
            let z1 = &fa[at(k, ca)];
            let z2 = &fb[at(k, cb)];
            let pos = dot(z1, z2) / tau;
            let mut terms: Vec<(f64, (usize, usize))> = Vec::with_capacity(negs.len() + 1);
            if include_positive {
                terms.push((pos, (k, cb)));
            }
            for &(j, c) in &negs {
                terms.push((dot(z1, &fb[at(j, c)]) / tau, (j, c)));
            }
            let mx = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = terms.iter().map(|t| (t.0 - mx).exp()).sum();
            let lse = mx + sum.ln();
            loss += lse - pos;
            let g = &mut grad[at(k, ca)];
            for (d, z) in g.iter_mut().zip(z2) {
                *d -= z.to_f64().unwrap() * scale / tau;
            }
            for &(s, (j, c)) in &terms {
                let p = (s - lse).exp() * scale / tau;
                for (d, y) in g.iter_mut().zip(&fb[at(j, c)]) {
                    *d += p * y.to_f64().unwrap();
                }
            }
        }
    }
    Ok((
        loss * scale,
        grad.into_iter().map(T::from_f64_lossy).collect(),
    ))
}

/// Mean binary cross-entropy with logits and its gradient.
pub fn mask_bce<T: Scalar>(logits: &[T], target: &[bool]) -> Result<(f64, Vec<T>)> {
    if logits.len() != target.len() || logits.is_empty() {
        return Err(dope_autodiff::AutodiffError::ShapeMismatch(format!(
            "mask logits {} vs target {}",
            logits.len(),
            target.len()
        ))
        .into());
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&x, &t) in logits.iter().zip(target) {
        let x = x.to_f64().unwrap();
        let y = if t { 1.0 } else { 0.0 };
        loss += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        let s = dope_autodiff::sigmoid(x);
        grad.push(T::from_f64_lossy((s - y) / n));
    }
    Ok((loss / n, grad))
}

/// Custom op whose gradient was computed together with its value.
struct Precomputed<T> {
    name: &'static str,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> CustomOp<T> for Precomputed<T> {
    fn name(&self) -> &str {
        self.name
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad_output: &[T]) -> Vec<Option<Vec<T>>> {
        let g = grad_output[0];
        self.grads
            .iter()
            .map(|o| o.as_ref().map(|v| v.iter().map(|&x| x * g).collect()))
            .collect()
    }
}

/// Records the correspondence loss on `g`. `fa` carries gradient; `fb`
/// is treated as a constant whatever its origin.
#[allow(clippy::too_many_arguments)]
pub fn corr_nt_xent_loss<T: Scalar>(
    g: &mut Graph<T>,
    fa: Var,
    fb: Var,
    pairs: &[Vec<(usize, usize)>],
    grid_mask_b: &[Vec<bool>],
    tau: f64,
    strategy: NegativeStrategy,
    include_positive: bool,
) -> Result<Var> {
    let (sa, sb) = (g.shape(fa).to_vec(), g.shape(fb).to_vec());
    if sa != sb || sa.len() != 4 || sa[0] != pairs.len() || grid_mask_b.len() != pairs.len() {
        return Err(dope_autodiff::AutodiffError::ShapeMismatch(format!(
            "correspondence loss features {sa:?} / {sb:?} for {} objects",
            pairs.len()
        ))
        .into());
    }
    let (cells, dim) = (sa[1] * sa[2], sa[3]);
    if pairs.iter().flatten().any(|&(a, b)| a >= cells || b >= cells)
        || grid_mask_b.iter().any(|m| m.len() != cells)
    {
        return Err(dope_autodiff::AutodiffError::ShapeMismatch(
            "correspondence cell out of range".into(),
        )
        .into());
    }
    let (loss, grad) = corr_nt_xent(
        g.value(fa).data(),
        g.value(fb).data(),
        cells,
        dim,
        pairs,
        grid_mask_b,
        tau,
        strategy,
        include_positive,
    )?;
    let op = Precomputed {
        name: "corr_nt_xent",
        grads: vec![Some(grad), None],
    };
    Ok(g.custom(&[fa, fb], Tensor::scalar(T::from_f64_lossy(loss)), Box::new(op)))
}

/// Records the mean BCE of `logits` against `target` on `g`.
pub fn mask_bce_loss<T: Scalar>(g: &mut Graph<T>, logits: Var, target: &[bool]) -> Result<Var> {
    let (loss, grad) = mask_bce(g.value(logits).data(), target)?;
    let op = Precomputed {
        name: "mask_bce",
        grads: vec![Some(grad)],
    };
    Ok(g.custom(&[logits], Tensor::scalar(T::from_f64_lossy(loss)), Box::new(op)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_limits() {
        let t = vec![true, false, true];
        let (l, _) = mask_bce(&[20.0f64, -20.0, 20.0], &t).unwrap();
        assert!(l < 1e-6);
        let (l, g) = mask_bce(&[0.0f64; 3], &t).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((g[1] - 0.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn negatives_by_strategy() {
        let pairs = vec![vec![(0, 1), (2, 3)], vec![(1, 0)]];
        let masks = vec![vec![true, true, false, true], vec![true; 4]];
        let s = negatives(0, 0, &pairs, &masks, NegativeStrategy::SecondViewOnly);
        assert_eq!(s, vec![(0, 0), (0, 3)]);
        let o = negatives(0, 0, &pairs, &masks, NegativeStrategy::OtherObjectsOnly);
        assert_eq!(o, vec![(1, 0)]);
        let b = negatives(0, 0, &pairs, &masks, NegativeStrategy::Both);
        assert_eq!(b, vec![(0, 0), (0, 3), (1, 0)]);
    }
}
