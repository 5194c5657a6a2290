//! Finite-difference gradient oracle.
//!
//! Central differences over a deterministic scalar function. This path never
//! touches [`Tape::backward`]; it only re-evaluates the forward function, so
//! it stays an independent check of the reverse-mode rules.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Default step for 64-bit central differences.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Central-difference gradient of a scalar function at `x`:
/// `(f(x + eps·e_i) − f(x − eps·e_i)) / (2·eps)` per element.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if eps <= 0.0 {
        return Err(Error::contract("finite differences need eps > 0"));
    }
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let hi = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let lo = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (hi - lo) / (2.0 * eps);
    }
    Ok(grad)
}

/// Outcome of comparing reverse-mode gradients to finite differences.
#[derive(Debug, Clone)]
pub struct GradReport {
    /// Worst relative error over all checked elements.
    pub max_rel_err: f64,
    /// Leaf index and element of the worst error.
    pub worst: Option<(usize, usize)>,
    /// Total elements compared.
    pub checked: usize,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Relative error with an absolute floor: tiny gradients are compared
/// absolutely, large ones relatively.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1.0, f64::max(a.abs(), b.abs()))
}

/// Compare reverse-mode gradients of a rebuildable graph against central
/// finite differences.
///
/// `build` must deterministically construct the graph on a fresh tape from
/// the given leaves and return the scalar loss. Leaves are passed as
/// `(tensor, requires_grad)`; only `requires_grad` leaves are checked.
pub fn check_gradients<F>(build: F, leaves: &[(Tensor, bool)], eps: f64) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors
            .iter()
            .zip(leaves)
            .map(|(t, (_, rg))| tape.leaf(t.clone(), *rg))
            .collect();
        let loss = build(&mut tape, &vars)?;
        tape.value(loss).item()
    };

    // Analytic gradients once.
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves
        .iter()
        .map(|(t, rg)| tape.leaf(t.clone(), *rg))
        .collect();
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;

    let base: Vec<Tensor> = leaves.iter().map(|(t, _)| t.clone()).collect();
    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    for (li, (tensor, rg)) in leaves.iter().enumerate() {
        if !*rg {
            continue;
        }
        let analytic = tape
            .grad(vars[li])
            .unwrap_or_else(|| Tensor::zeros(tensor.shape()));
        let numeric = finite_diff_grad(
            |probe| {
                let mut tensors = base.clone();
                tensors[li] = probe.clone();
                eval(&tensors)
            },
            tensor,
            eps,
        )?;
        for i in 0..tensor.numel() {
            let e = rel_err(analytic.data()[i], numeric.data()[i]);
            report.checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = Some((li, i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_of_sum_is_ones() {
        let x = Tensor::new(vec![3], vec![0.3, -1.2, 2.0]).unwrap();
        let g = finite_diff_grad(|t| Ok(t.data().iter().sum()), &x, DEFAULT_EPS).unwrap();
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn finite_diff_of_sum_tanh_at_zero() {
        let x = Tensor::zeros(&[4]);
        let g = finite_diff_grad(
            |t| Ok(t.data().iter().map(|v| v.tanh()).sum()),
            &x,
            DEFAULT_EPS,
        )
        .unwrap();
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-8, "tanh'(0) should be 1, got {v}");
        }
    }

    #[test]
    fn rejects_non_positive_eps() {
        let x = Tensor::zeros(&[1]);
        assert!(finite_diff_grad(|t| t.item(), &x, 0.0).is_err());
    }

    #[test]
    fn check_gradients_on_composite_graph() {
        // loss = sum(tanh(x W) * x W) over a small random-ish graph
        let x = Tensor::new(vec![2, 3], vec![0.1, -0.4, 0.7, 0.2, 0.5, -0.3]).unwrap();
        let w = Tensor::new(vec![3, 2], vec![0.3, -0.6, 0.9, 0.05, -0.2, 0.4]).unwrap();
        let report = check_gradients(
            |tape, vars| {
                let xw = tape.matmul(vars[0], vars[1])?;
                let th = tape.tanh(xw);
                let prod = tape.mul(th, xw)?;
                Ok(tape.sum_all(prod))
            },
            &[(x, true), (w, true)],
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(report.passes(1e-4), "max rel err {}", report.max_rel_err);
        assert_eq!(report.checked, 12);
    }
}
