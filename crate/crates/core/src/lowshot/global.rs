//! Global-embedding baseline: mask-weighted average of the unit-normalized
//! cells, re-normalized, trained by in-batch instance discrimination.

use dope_autodiff::{AutodiffError, CustomOp, Graph, ParamSet, Scalar, Tensor, Var};

use crate::model::{forward, Bound, EncoderConfig, Gate, ModelError, NORM_EPS};

/// Added to the pooling weight sum.
pub const POOL_EPS: f64 = 1e-6;

struct MaskedPool;

impl<T: Scalar> CustomOp<T> for MaskedPool {
    fn name(&self) -> &str {
        "masked_pool"
    }

    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad_output: &[T]) -> Vec<Option<Vec<T>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let s = x.shape();
        let (n, cells, d) = (s[0], s[1] * s[2], s[3]);
        let (xd, wd, yd) = (x.data(), w.data(), output.data());
        let mut gx = vec![T::zero(); xd.len()];
        let mut gw = vec![T::zero(); wd.len()];
        let eps = T::from_f64_lossy(POOL_EPS);
        for b in 0..n {
            let ws = &wd[b * cells..(b + 1) * cells];
            let total = ws.iter().copied().sum::<T>() + eps;
            let go = &grad_output[b * d..(b + 1) * d];
            let y = &yd[b * d..(b + 1) * d];
            for c in 0..cells {
                let base = (b * cells + c) * d;
                let mut acc = T::zero();
                for k in 0..d {
                    gx[base + k] = go[k] * ws[c] / total;
                    acc = acc + go[k] * (xd[base + k] - y[k]);
                }
                gw[b * cells + c] = acc / total;
            }
        }
        vec![Some(gx), Some(gw)]
    }
}

/// `Σ_c w_c x_c / (Σ_c w_c + eps)` per image: `[n, h, w, d]` with weights
/// `[n, h, w, 1]` to `[n, d]`.
pub fn masked_pool<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var) -> Result<Var, ModelError> {
    let (xs, ws) = (g.shape(x).to_vec(), g.shape(w).to_vec());
    if xs.len() != 4 || ws != [xs[0], xs[1], xs[2], 1] {
        return Err(AutodiffError::ShapeMismatch(format!("masked_pool {xs:?} / {ws:?}")).into());
    }
    let (n, cells, d) = (xs[0], xs[1] * xs[2], xs[3]);
    let (xd, wd) = (g.value(x).data(), g.value(w).data());
    let eps = T::from_f64_lossy(POOL_EPS);
    let mut out = vec![T::zero(); n * d];
    for b in 0..n {
        let wsl = &wd[b * cells..(b + 1) * cells];
        let total = wsl.iter().copied().sum::<T>() + eps;
        let o = &mut out[b * d..(b + 1) * d];
        for (c, &wc) in wsl.iter().enumerate() {
            let cell = &xd[(b * cells + c) * d..(b * cells + c + 1) * d];
            for (ok, &xk) in o.iter_mut().zip(cell) {
                *ok = *ok + wc * xk;
            }
        }
        for v in o.iter_mut() {
            *v = *v / total;
        }
    }
    let value = Tensor::new(vec![n, d], out)?;
    Ok(g.custom(&[x, w], value, Box::new(MaskedPool)))
}

/// Unit global embedding per image, `[n, d]`.
pub fn embed_graph<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &EncoderConfig,
    p: &Bound,
    images: Var,
    gate: Gate,
) -> Result<(Var, crate::model::Encoded), ModelError> {
    let e = forward(g, cfg, p, images, gate)?;
    let weights = match gate {
        Gate::Predicted => e.trunk.mask_prob,
        Gate::Given(m) => m,
    };
    let pooled = masked_pool(g, e.normalized, weights)?;
    Ok((g.l2_normalize(pooled, T::from_f64_lossy(NORM_EPS)), e))
}

pub fn global_baseline_embed(
    params: &ParamSet<f32>,
    cfg: &EncoderConfig,
    images: &[&[f32]],
    gate: crate::model::InferenceGate,
) -> Result<Vec<Vec<f32>>, ModelError> {
    let px = cfg.input_size * cfg.input_size * cfg.in_channels;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(crate::model::ENCODE_CHUNK) {
        let n = chunk.len();
        let mut data = Vec::with_capacity(n * px);
        for im in chunk {
            data.extend_from_slice(im);
        }
        let mut g = Graph::<f32>::new();
        let p = Bound::new(&mut g, params, false);
        let x = g.constant(Tensor::new(vec![n, cfg.input_size, cfg.input_size, cfg.in_channels], data)?);
        let gv = match gate {
            crate::model::InferenceGate::Predicted => Gate::Predicted,
            crate::model::InferenceGate::None => Gate::Given(g.constant(Tensor::full(
                vec![n, cfg.grid_size, cfg.grid_size, 1],
                1.0,
            ))),
        };
        let (emb, _) = embed_graph(&mut g, cfg, &p, x, gv)?;
        let d = cfg.out_dim;
        out.extend(g.value(emb).data().chunks_exact(d).map(|c| c.to_vec()));
    }
    Ok(out)
}

/// In-batch instance discrimination: row `k` of `a` is positive with row
/// `k` of `b` and negative with every other row of `b`. Returns the mean
/// loss and its gradient with respect to `a`.
pub fn instance_nt_xent<T: Scalar>(a: &[T], b: &[T], n: usize, d: usize, tau: f64) -> (f64, Vec<T>) {
    let f = |x: T| x.to_f64().unwrap();
    let mut grad = vec![0.0f64; n * d];
    let mut loss = 0.0;
    for k in 0..n {
        let za = &a[k * d..(k + 1) * d];
        let logits: Vec<f64> = (0..n)
            .map(|j| za.iter().zip(&b[j * d..(j + 1) * d]).map(|(&x, &y)| f(x) * f(y)).sum::<f64>() / tau)
            .collect();
        let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
        loss += lse - logits[k];
        let g = &mut grad[k * d..(k + 1) * d];
        for (j, &l) in logits.iter().enumerate() {
            let p = (l - lse).exp() - if j == k { 1.0 } else { 0.0 };
            for (gi, &y) in g.iter_mut().zip(&b[j * d..(j + 1) * d]) {
                *gi += p * f(y) / (tau * n as f64);
            }
        }
    }
    (loss / n as f64, grad.into_iter().map(T::from_f64_lossy).collect())
}

struct InstanceLoss<T> {
    grad: Vec<T>,
}

impl<T: Scalar> CustomOp<T> for InstanceLoss<T> {
    fn name(&self) -> &str {
        "instance_nt_xent"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad_output: &[T]) -> Vec<Option<Vec<T>>> {
        let g = grad_output[0];
        vec![Some(self.grad.iter().map(|&x| x * g).collect()), None]
    }
}

/// Records the instance loss; `b` receives no gradient.
pub fn instance_nt_xent_loss<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var, tau: f64) -> Result<Var, ModelError> {
    let (sa, sb) = (g.shape(a).to_vec(), g.shape(b).to_vec());
    if sa != sb || sa.len() != 2 {
        return Err(AutodiffError::ShapeMismatch(format!("instance loss {sa:?} / {sb:?}")).into());
    }
    let (loss, grad) = instance_nt_xent(g.value(a).data(), g.value(b).data(), sa[0], sa[1], tau);
    Ok(g.custom(&[a, b], Tensor::scalar(T::from_f64_lossy(loss)), Box::new(InstanceLoss { grad })))
}
