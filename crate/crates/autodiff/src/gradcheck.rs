//! Reverse-mode gradients against central finite differences.

use crate::error::{AutodiffError, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamSet;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute terms; below it the
/// finite-difference cancellation error dominates any relative measure.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Element indices whose relative error exceeds the tolerance.
    pub flagged: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.flagged.is_empty())
    }

    pub fn flagged_count(&self) -> usize {
        self.params.iter().map(|p| p.flagged.len()).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the reverse-mode gradient of a scalar function of `params`
/// against central differences, element by element.
///
/// `build` records the function on a fresh graph, given one var per
/// parameter tensor (in `params` order), and returns the output var.
pub fn grad_check<F>(params: &ParamSet<f64>, build: F, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.tensors().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params.tensors())
        .map(|(v, t)| {
            g.grad(*v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let eval = |perturbed: &ParamSet<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.tensors().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        let v = g.value(out);
        if v.numel() != 1 {
            return Err(AutodiffError::NonScalarOutput(v.shape().to_vec()));
        }
        Ok(v.data()[0])
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        tolerance,
        params: Vec::new(),
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for (pi, name) in names.iter().enumerate() {
        let mut check = ParamCheck {
            name: name.clone(),
            max_rel_error: 0.0,
            flagged: Vec::new(),
        };
        let numel = params.tensors().nth(pi).unwrap().numel();
        for e in 0..numel {
            let orig = params.tensors().nth(pi).unwrap().data()[e];
            set_elem(&mut work, pi, e, orig + FD_STEP);
            let plus = eval(&work)?;
            set_elem(&mut work, pi, e, orig - FD_STEP);
            let minus = eval(&work)?;
            set_elem(&mut work, pi, e, orig);
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = relative_error(analytic[pi][e], numeric);
            check.max_rel_error = check.max_rel_error.max(err);
            if !(err < tolerance) {
                check.flagged.push(e);
            }
        }
        report.params.push(check);
    }
    Ok(report)
}

fn set_elem(set: &mut ParamSet<f64>, pi: usize, e: usize, v: f64) {
    set.tensors_mut().nth(pi).unwrap().data_mut()[e] = v;
}
