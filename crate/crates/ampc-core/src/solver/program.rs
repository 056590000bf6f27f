//! NLP interface consumed by the SQP solver.
//!
//! A [`Program`] is `min V(z) s.t. c_eq(z) = 0, g_in(z) <= 0` with dense
//! first derivatives. The Lagrangian Hessian defaults to central finite
//! differences of the analytic Lagrangian gradient; structured problems can
//! override it (and the equality elimination) with cheaper exact routines.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("non-finite value encountered at index {index}")]
    NonFinite { index: usize },
}

/// Hessian strategy for the SQP iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum HessianMode {
    /// Exact quadratic cost curvature plus per-stage finite-difference
    /// correction of the remaining Lagrangian gradient.
    GaussNewtonExactCorrection,
    /// Central finite differences of the full Lagrangian gradient.
    FiniteDifferenceExact,
}

/// Full first-order evaluation at a point.
pub struct DenseEval {
    pub cost: f64,
    pub cost_grad: DVector<f64>,
    pub eq: DVector<f64>,
    pub eq_jac: DMatrix<f64>,
    pub ineq: DVector<f64>,
    pub ineq_jac: DMatrix<f64>,
}

impl DenseEval {
    /// Lagrangian gradient `dV + J_eq^T lambda + J_in^T mu`.
    pub fn lagrangian_grad(&self, lambda: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
        let mut g = self.cost_grad.clone();
        g.gemv_tr(1.0, &self.eq_jac, lambda, 1.0);
        g.gemv_tr(1.0, &self.ineq_jac, mu, 1.0);
        g
    }
}

/// Value-only evaluation (for merit line search).
pub struct ValueEval {
    pub cost: f64,
    pub eq: DVector<f64>,
    pub ineq: DVector<f64>,
}

impl ValueEval {
    /// `||c_eq||_1 + ||max(g, 0)||_1`.
    pub fn infeasibility_l1(&self) -> f64 {
        self.eq.iter().map(|v| v.abs()).sum::<f64>()
            + self.ineq.iter().map(|v| v.max(0.0)).sum::<f64>()
    }

    pub fn infeasibility_inf(&self) -> f64 {
        let eq = self.eq.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let ineq = self.ineq.iter().fold(0.0f64, |m, v| m.max(*v));
        eq.max(ineq).max(0.0)
    }
}

/// Orthonormal elimination of the linearized equality constraints.
///
/// Directions decompose as `d = Z y + d0` with `J_eq Z = 0` and
/// `J_eq d0 = -c_eq`; `Z` has orthonormal columns and `d0` is the minimum
/// norm particular solution, so the reduced problem stays well conditioned
/// even when the shooting linearization is strongly unstable.
pub struct EqElimination {
    pub z: DMatrix<f64>,
    pub d0: DVector<f64>,
    /// Full `Q^T` of the decomposition `J_eq^T = Q R`.
    qt: DMatrix<f64>,
    /// Upper-triangular `R` (square, `num_eq` sized).
    r: DMatrix<f64>,
}

impl EqElimination {
    /// Minimum-norm `dc` with `J_eq dc = -c` (for second-order corrections).
    pub fn min_norm_correction(&self, c: &DVector<f64>) -> Option<DVector<f64>> {
        let m = self.r.nrows();
        let n = self.qt.nrows();
        if m == 0 {
            return Some(DVector::zeros(n));
        }
        let mut w = -c.clone();
        for i in 0..m {
            let mut s = w[i];
            for j in 0..i {
                s -= self.r[(j, i)] * w[j];
            }
            let diag = self.r[(i, i)];
            if diag.abs() < 1e-14 {
                return None;
            }
            w[i] = s / diag;
        }
        let mut ext = DVector::zeros(n);
        ext.rows_mut(0, m).copy_from(&w);
        Some(self.qt.transpose() * ext)
    }

    /// Least-squares equality multipliers from `J_eq^T lambda = -rhs`.
    pub fn solve_multipliers(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        let m = self.r.nrows();
        if m == 0 {
            return Some(DVector::zeros(0));
        }
        let qtr = &self.qt * rhs;
        let mut lambda = -qtr.rows(0, m).into_owned();
        // Back-substitution on R.
        for i in (0..m).rev() {
            let mut s = lambda[i];
            for j in (i + 1)..m {
                s -= self.r[(i, j)] * lambda[j];
            }
            let diag = self.r[(i, i)];
            if diag.abs() < 1e-12 {
                return None;
            }
            lambda[i] = s / diag;
        }
        Some(lambda)
    }
}

/// QR-based elimination: `J_eq^T = Q R`, nullspace = trailing columns of `Q`.
pub fn qr_elimination(jac: &DMatrix<f64>, c: &DVector<f64>) -> Option<EqElimination> {
    let m = jac.nrows();
    let n = jac.ncols();
    if m == 0 {
        return Some(EqElimination {
            z: DMatrix::identity(n, n),
            d0: DVector::zeros(n),
            qt: DMatrix::identity(n, n),
            r: DMatrix::zeros(0, 0),
        });
    }
    if m >= n {
        return None;
    }
    let qr = jac.transpose().qr();
    let r = qr.r();
    let rmax = r.diagonal().amax();
    if r.diagonal().iter().any(|d| d.abs() < 1e-12 * rmax.max(1.0)) {
        return None;
    }
    let mut qt = DMatrix::identity(n, n);
    qr.q_tr_mul(&mut qt);
    let z = qt.rows(m, n - m).transpose();
    let partial = EqElimination {
        z,
        d0: DVector::zeros(n),
        qt,
        r,
    };
    let d0 = partial.min_norm_correction(c)?;
    Some(EqElimination { d0, ..partial })
}

pub trait Program {
    fn num_vars(&self) -> usize;
    fn num_eq(&self) -> usize;
    fn num_ineq(&self) -> usize;

    fn eval_values(&self, z: &DVector<f64>) -> Result<ValueEval, EvalError>;
    fn eval_dense(&self, z: &DVector<f64>) -> Result<DenseEval, EvalError>;

    fn lagrangian_hessian(
        &self,
        z: &DVector<f64>,
        lambda: &DVector<f64>,
        mu: &DVector<f64>,
        mode: HessianMode,
    ) -> Result<DMatrix<f64>, EvalError> {
        let _ = mode;
        fd_lagrangian_hessian(self, z, lambda, mu)
    }

    /// Eliminate the linearized equality constraints at an evaluated point.
    fn eliminate_equalities(&self, ev: &DenseEval) -> Option<EqElimination> {
        qr_elimination(&ev.eq_jac, &ev.eq)
    }

    /// Problem-specific feasibility restoration (returns an
    /// equality-feasible point near `z`), if available.
    fn restore(&self, z: &DVector<f64>) -> Option<DVector<f64>> {
        let _ = z;
        None
    }
}

/// Programs whose data depends on a parameter vector (for sensitivities).
pub trait ParametricProgram: Program + Sized {
    fn num_params(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn with_params(&self, p: &[f64]) -> Self;
    /// Central-difference step per parameter.
    fn param_fd_steps(&self) -> Vec<f64>;
}

/// Central finite differences of the Lagrangian gradient over all variables.
pub fn fd_lagrangian_hessian<P: Program + ?Sized>(
    prog: &P,
    z: &DVector<f64>,
    lambda: &DVector<f64>,
    mu: &DVector<f64>,
) -> Result<DMatrix<f64>, EvalError> {
    let n = prog.num_vars();
    let mut h = DMatrix::zeros(n, n);
    for j in 0..n {
        let step = 1e-5 * (1.0 + z[j].abs());
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[j] += step;
        zm[j] -= step;
        let gp = prog.eval_dense(&zp)?.lagrangian_grad(lambda, mu);
        let gm = prog.eval_dense(&zm)?.lagrangian_grad(lambda, mu);
        let col = (gp - gm) / (2.0 * step);
        h.set_column(j, &col);
    }
    // Symmetrize.
    let ht = h.transpose();
    Ok((h + ht) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elimination_produces_nullspace_and_particular_solution() {
        let jac = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 0.0, 1.0, 0.0, 1.0, 1.0, -1.0]);
        let c = DVector::from_vec(vec![3.0, -2.0]);
        let elim = qr_elimination(&jac, &c).unwrap();
        assert_eq!(elim.z.ncols(), 2);
        assert!((&jac * &elim.z).amax() < 1e-12);
        assert!(((&jac * &elim.d0) + &c).amax() < 1e-12);
        // Orthonormal columns.
        let ztz = elim.z.transpose() * &elim.z;
        assert!((ztz - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn elimination_detects_rank_deficiency() {
        let jac = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0]);
        let c = DVector::from_vec(vec![1.0, 2.0]);
        assert!(qr_elimination(&jac, &c).is_none());
    }

    #[test]
    fn multiplier_recovery_consistent() {
        let jac = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 0.0, 1.0, 0.0, 1.0, 1.0, -1.0]);
        let c = DVector::from_vec(vec![3.0, -2.0]);
        let elim = qr_elimination(&jac, &c).unwrap();
        // Build rhs = -J^T lambda_true; recovery must return lambda_true.
        let lambda_true = DVector::from_vec(vec![0.7, -1.3]);
        let rhs = -(jac.transpose() * &lambda_true);
        let lambda = elim.solve_multipliers(&rhs).unwrap();
        assert!((lambda - lambda_true).amax() < 1e-12);
    }
}
