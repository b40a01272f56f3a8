use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Worst disagreement between the tape gradient and central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    /// Smallest nonzero analytic magnitude. Below roughly `1e6` times the
    /// difference quotient's roundoff floor, a relative comparison measures
    /// noise rather than the gradient.
    pub min_nonzero_analytic: f64,
    pub entries_checked: usize,
}

/// Compares analytic and numeric gradients of `f` with respect to every entry
/// of every tensor in `params`.
///
/// `f` builds a scalar loss on a fresh tape from leaves created for `params`
/// (in order). The relative error of one entry is
/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn gradient_check<F>(params: &[Tensor<f64>], f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).cloned().expect("leaf requires grad"))
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|p| t.param(p.clone())).collect();
        let l = f(&mut t, &vs)?;
        Ok(t.value(l).item())
    };

    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_param: 0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        min_nonzero_analytic: analytic
            .iter()
            .flat_map(|t| t.data())
            .filter(|g| **g != 0.0)
            .fold(f64::INFINITY, |m, g| m.min(g.abs())),
        entries_checked: 0,
    };
    for pi in 0..params.len() {
        for j in 0..params[pi].len() {
            let orig = params[pi].data()[j];
            work[pi].data_mut()[j] = orig + FD_STEP;
            let plus = eval(&work)?;
            work[pi].data_mut()[j] = orig - FD_STEP;
            let minus = eval(&work)?;
            work[pi].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[pi].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            report.entries_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = pi;
                report.worst_index = j;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes() {
        let w = Tensor::from_vec(vec![0.7, -1.3, 2.1]);
        let r = gradient_check(&[w], |t, v| {
            let sq = t.mul(v[0], v[0])?;
            t.sum(sq)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.entries_checked, 3);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // Analytic pass sees slope 1, the finite-difference passes slope 3.
        use std::cell::Cell;
        let calls = Cell::new(0usize);
        let w = Tensor::from_vec(vec![1.0]);
        let r = gradient_check(&[w], |t, v| {
            calls.set(calls.get() + 1);
            let factor = if calls.get() == 1 { 1.0 } else { 3.0 };
            let s = t.scale(v[0], factor)?;
            t.sum(s)
        })
        .unwrap();
        assert!(r.max_rel_error > 0.5);
    }
}
