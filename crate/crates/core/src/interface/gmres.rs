//! Right-preconditioned full GMRes with modified Gram–Schmidt (one
//! reorthogonalization pass) and Givens rotations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm2, Csr, SparseLu};

pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;
}

pub trait Preconditioner {
    fn apply(&self, x: &[f64]) -> Vec<f64>;
}

impl LinearOperator for Csr {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.matvec(x))
    }
}

impl Preconditioner for SparseLu {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.solve(x)
    }
}

/// No preconditioning.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Preconditioner for Identity {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmresConfig {
    /// Relative residual target `‖b − Ax‖₂ ≤ tol ‖b‖₂`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GmresConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmresOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// Residual norms, starting with the initial residual.
    pub history: Vec<f64>,
    /// Krylov coefficients: `solution − x0 = Σ_j y_j M⁻¹ v_j`, one per
    /// operator application in order.
    pub coefficients: Vec<f64>,
}

/// Solves `A d = r0` from `d = 0` until `‖r0 − A d‖₂ ≤ target`.
pub fn gmres_increment(
    op: &dyn LinearOperator,
    precond: &dyn Preconditioner,
    r0: &[f64],
    target: f64,
    max_iter: usize,
) -> Result<GmresOutcome> {
    let n = op.dim();
    let beta = norm2(r0);
    let mut history = vec![beta];
    if beta <= target || beta == 0.0 {
        return Ok(GmresOutcome {
            solution: vec![0.0; n],
            iterations: 0,
            history,
            coefficients: Vec::new(),
        });
    }
    let mut v: Vec<Vec<f64>> = vec![r0.iter().map(|x| x / beta).collect()];
    let mut z: Vec<Vec<f64>> = Vec::new();
    let mut h: Vec<Vec<f64>> = Vec::new();
    let (mut cs, mut sn) = (Vec::<f64>::new(), Vec::<f64>::new());
    let mut g = vec![beta];
    let mut converged = false;
    for j in 0..max_iter {
        let zj = precond.apply(&v[j]);
        let mut w = op.apply(&zj)?;
        z.push(zj);
        let mut col = vec![0.0; j + 2];
        for _pass in 0..2 {
            for (i, vi) in v.iter().enumerate() {
                let hij = dot(&w, vi);
                col[i] += hij;
                axpy(-hij, vi, &mut w);
            }
        }
        let wn = norm2(&w);
        col[j + 1] = wn;
        for i in 0..j {
            let t = cs[i] * col[i] + sn[i] * col[i + 1];
            col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
            col[i] = t;
        }
        let r = col[j].hypot(col[j + 1]);
        let (c, s) = if r == 0.0 {
            (1.0, 0.0)
        } else {
            (col[j] / r, col[j + 1] / r)
        };
        cs.push(c);
        sn.push(s);
        col[j] = r;
        col[j + 1] = 0.0;
        g.push(-s * g[j]);
        g[j] *= c;
        h.push(col);
        let res = g[j + 1].abs();
        history.push(res);
        let breakdown = wn <= 1e-14 * beta;
        if res <= target || breakdown {
            converged = true;
            break;
        }
        v.push(w.iter().map(|x| x / wn).collect());
    }
    let k = h.len();
    if !converged {
        return Err(Error::GmresMaxIter {
            iterations: k,
            last: *history.last().unwrap(),
            history,
        });
    }
    let mut y = vec![0.0; k];
    for i in (0..k).rev() {
        let mut acc = g[i];
        for l in i + 1..k {
            acc -= h[l][i] * y[l];
        }
        y[i] = acc / h[i][i];
    }
    let mut solution = vec![0.0; n];
    for (yj, zj) in y.iter().zip(&z) {
        axpy(*yj, zj, &mut solution);
    }
    Ok(GmresOutcome {
        solution,
        iterations: k,
        history,
        coefficients: y,
    })
}

/// Solves `A x = rhs` from `x0` (zero when `None`) to the relative target
/// of `config`.
pub fn gmres_solve(
    op: &dyn LinearOperator,
    precond: &dyn Preconditioner,
    rhs: &[f64],
    x0: Option<&[f64]>,
    config: &GmresConfig,
) -> Result<GmresOutcome> {
    let bnorm = norm2(rhs);
    let target = config.tol * bnorm;
    let (x0, r0) = match x0 {
        Some(x0) => {
            let ax = op.apply(x0)?;
            (x0.to_vec(), rhs.iter().zip(&ax).map(|(b, a)| b - a).collect::<Vec<_>>())
        }
        None => (vec![0.0; rhs.len()], rhs.to_vec()),
    };
    let mut out = gmres_increment(op, precond, &r0, target, config.max_iter)?;
    axpy(1.0, &x0, &mut out.solution);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_converges_in_one_iteration() {
        let a = Csr::identity(3);
        let out = gmres_solve(&a, &Identity, &[1.0, -2.0, 3.0], None, &GmresConfig::default()).unwrap();
        assert_eq!(out.iterations, 1);
        assert!((out.solution[1] + 2.0).abs() < 1e-14);
    }

    #[test]
    fn two_by_two_spd() {
        let a = Csr::from_triplets(2, 2, vec![(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)]);
        let cfg = GmresConfig {
            tol: 1e-12,
            max_iter: 10,
        };
        let out = gmres_solve(&a, &Identity, &[3.0, 3.0], None, &cfg).unwrap();
        assert!((out.solution[0] - 1.0).abs() < 1e-12 && (out.solution[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let a = Csr::identity(2);
        let out = gmres_solve(&a, &Identity, &[0.0, 0.0], None, &GmresConfig::default()).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.solution, vec![0.0, 0.0]);
    }

    #[test]
    fn max_iter_reports_history() {
        let n = 20;
        let a = Csr::from_triplets(n, n, (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect());
        let mut b = vec![0.0; n];
        b[0] = 1.0;
        let cfg = GmresConfig {
            tol: 1e-10,
            max_iter: 5,
        };
        match gmres_solve(&a, &Identity, &b, None, &cfg) {
            Err(Error::GmresMaxIter {
                iterations, history, ..
            }) => {
                assert_eq!(iterations, 5);
                assert_eq!(history.len(), 6);
            }
            other => panic!("expected max-iter error, got {other:?}"),
        }
    }

    #[test]
    fn exact_preconditioner_needs_one_iteration() {
        let a = Csr::from_triplets(
            3,
            3,
            vec![
                (0, 0, 4.0),
                (0, 2, 1.0),
                (1, 1, -3.0),
                (2, 0, 1.0),
                (2, 2, 2.0),
                (1, 2, 0.5),
            ],
        );
        let lu = SparseLu::factor(&a, "test").unwrap();
        let out = gmres_solve(&a, &lu, &[1.0, 2.0, 3.0], None, &GmresConfig::default()).unwrap();
        assert_eq!(out.iterations, 1);
    }
}
