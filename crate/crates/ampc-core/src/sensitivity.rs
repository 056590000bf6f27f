//! Parametric sensitivities of converged NLP solutions.
//!
//! At a KKT point with strict complementarity, the implicit function theorem
//! applied to the KKT conditions gives `dz/dp` from one linear solve with
//! the KKT matrix of equality and strictly active inequality constraints.
//! The first decision variable is the applied input, so its row is the
//! sensitivity the adaptive policy imitates.

use crate::solver::program::{HessianMode, ParametricProgram, Program};
use crate::solver::NlpSolution;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error("KKT matrix numerically singular (condition estimate {cond:.3e})")]
    SingularKkt { cond: f64 },
    #[error("strict complementarity violated on rows {rows:?}")]
    WeaklyActive { rows: Vec<usize> },
    #[error("evaluation failed: {0}")]
    Eval(String),
}

/// Sensitivity of the optimal solution wrt the problem parameters.
#[derive(Debug, Clone)]
pub struct SensitivityMatrix {
    /// Row of `dz/dp` for the applied input `u_0` (decision variable 0).
    pub du0_dtheta: Vec<f64>,
    /// Full `dz/dp`, one column per parameter (diagnostics).
    pub dz_dtheta: DMatrix<f64>,
    /// One-norm condition estimate of the KKT matrix.
    pub cond_estimate: f64,
    pub valid: bool,
}

/// Threshold on the KKT condition estimate above which sensitivities are
/// rejected as unreliable.
const COND_LIMIT: f64 = 1e12;

/// First-order prediction `u0 + du0/dtheta . dtheta`.
pub fn linear_predict(u0_nom: f64, sens: &SensitivityMatrix, dtheta: &[f64]) -> f64 {
    debug_assert!(sens.valid);
    debug_assert_eq!(dtheta.len(), sens.du0_dtheta.len());
    u0_nom
        + sens
            .du0_dtheta
            .iter()
            .zip(dtheta.iter())
            .map(|(s, d)| s * d)
            .sum::<f64>()
}

/// Whether two solutions of the same problem layout have different active sets.
pub fn active_set_changed(a: &NlpSolution, b: &NlpSolution) -> bool {
    a.active_set != b.active_set
}

/// Differentiate the KKT conditions at a converged solution.
pub fn kkt_sensitivity<P: ParametricProgram>(
    prog: &P,
    sol: &NlpSolution,
) -> Result<SensitivityMatrix, SensitivityError> {
    if !sol.weakly_active.is_empty() {
        return Err(SensitivityError::WeaklyActive {
            rows: sol.weakly_active.clone(),
        });
    }
    let n = prog.num_vars();
    let m_eq = prog.num_eq();
    let active = &sol.active_set;
    let m_act = m_eq + active.len();
    let np = prog.num_params();

    let ev = prog
        .eval_dense(&sol.z)
        .map_err(|e| SensitivityError::Eval(e.to_string()))?;
    let h = prog
        .lagrangian_hessian(
            &sol.z,
            &sol.lambda_eq,
            &sol.mu_ineq,
            HessianMode::GaussNewtonExactCorrection,
        )
        .map_err(|e| SensitivityError::Eval(e.to_string()))?;

    // KKT matrix [H J_act^T; J_act 0] with J_act = [J_eq; J_in[active]].
    let dim = n + m_act;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&h);
    for r in 0..m_eq {
        for c in 0..n {
            let v = ev.eq_jac[(r, c)];
            kkt[(n + r, c)] = v;
            kkt[(c, n + r)] = v;
        }
    }
    for (k, &row) in active.iter().enumerate() {
        for c in 0..n {
            let v = ev.ineq_jac[(row, c)];
            kkt[(n + m_eq + k, c)] = v;
            kkt[(c, n + m_eq + k)] = v;
        }
    }

    // Right-hand side: -[d2L/dz dp; dc_act/dp] by central differences of the
    // analytic gradient and constraint values over the parameters.
    let p0 = prog.params();
    let steps = prog.param_fd_steps();
    let mut rhs = DMatrix::zeros(dim, np);
    for j in 0..np {
        let hj = steps[j];
        let mut pp = p0.clone();
        let mut pm = p0.clone();
        pp[j] += hj;
        pm[j] -= hj;
        let evp = prog
            .with_params(&pp)
            .eval_dense(&sol.z)
            .map_err(|e| SensitivityError::Eval(e.to_string()))?;
        let evm = prog
            .with_params(&pm)
            .eval_dense(&sol.z)
            .map_err(|e| SensitivityError::Eval(e.to_string()))?;
        let gp = evp.lagrangian_grad(&sol.lambda_eq, &sol.mu_ineq);
        let gm = evm.lagrangian_grad(&sol.lambda_eq, &sol.mu_ineq);
        for i in 0..n {
            rhs[(i, j)] = -(gp[i] - gm[i]) / (2.0 * hj);
        }
        for r in 0..m_eq {
            rhs[(n + r, j)] = -(evp.eq[r] - evm.eq[r]) / (2.0 * hj);
        }
        for (k, &row) in active.iter().enumerate() {
            rhs[(n + m_eq + k, j)] = -(evp.ineq[row] - evm.ineq[row]) / (2.0 * hj);
        }
    }

    let norm1 = one_norm(&kkt);
    let lu = nalgebra::LU::new(kkt);
    let cond = match inverse_one_norm_estimate(&lu, dim) {
        Some(inv_norm) => norm1 * inv_norm,
        None => {
            return Err(SensitivityError::SingularKkt {
                cond: f64::INFINITY,
            });
        }
    };
    if cond > COND_LIMIT {
        return Err(SensitivityError::SingularKkt { cond });
    }

    let mut dz = DMatrix::zeros(n, np);
    for j in 0..np {
        let col = rhs.column(j).into_owned();
        let sol_j = lu.solve(&col).ok_or(SensitivityError::SingularKkt {
            cond: f64::INFINITY,
        })?;
        for i in 0..n {
            dz[(i, j)] = sol_j[i];
        }
    }
    if dz.iter().any(|v| !v.is_finite()) {
        return Err(SensitivityError::SingularKkt { cond });
    }

    let du0_dtheta: Vec<f64> = (0..np).map(|j| dz[(0, j)]).collect();
    Ok(SensitivityMatrix {
        du0_dtheta,
        dz_dtheta: dz,
        cond_estimate: cond,
        valid: true,
    })
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..a.ncols() {
        let s: f64 = a.column(j).iter().map(|v| v.abs()).sum();
        best = best.max(s);
    }
    best
}

/// Hager's one-norm estimator for the inverse; the KKT matrix is symmetric,
/// so transpose solves are plain solves.
fn inverse_one_norm_estimate(
    lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    n: usize,
) -> Option<f64> {
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut est = 0.0f64;
    for _ in 0..5 {
        let y = lu.solve(&x)?;
        est = y.iter().map(|v| v.abs()).sum();
        let xi = DVector::from_fn(n, |i, _| if y[i] >= 0.0 { 1.0 } else { -1.0 });
        let zv = lu.solve(&xi)?;
        let (jmax, zmax) = zv
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |(bi, bv), (i, v)| {
                if v.abs() > bv {
                    (i, v.abs())
                } else {
                    (bi, bv)
                }
            });
        if zmax <= zv.dot(&x) + 1e-15 {
            break;
        }
        x = DVector::zeros(n);
        x[jmax] = 1.0;
    }
    if est.is_finite() {
        Some(est)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{CartpoleParams, FixedConstants, State, THETA_SWEEP_RANGE};
    use crate::ocp::{build_nlp, OcpConfig};
    use crate::solver::program::{DenseEval, EvalError, ValueEval};
    use crate::solver::{multistart_solve, solve, SolverConfig};
    use approx::assert_relative_eq;

    /// min (u - a*p)^2: du*/dp = a exactly.
    struct ToyScaled {
        a: f64,
        p: f64,
    }

    impl Program for ToyScaled {
        fn num_vars(&self) -> usize {
            1
        }
        fn num_eq(&self) -> usize {
            0
        }
        fn num_ineq(&self) -> usize {
            0
        }
        fn eval_values(&self, z: &DVector<f64>) -> Result<ValueEval, EvalError> {
            let e = z[0] - self.a * self.p;
            Ok(ValueEval {
                cost: e * e,
                eq: DVector::zeros(0),
                ineq: DVector::zeros(0),
            })
        }
        fn eval_dense(&self, z: &DVector<f64>) -> Result<DenseEval, EvalError> {
            let e = z[0] - self.a * self.p;
            Ok(DenseEval {
                cost: e * e,
                cost_grad: DVector::from_vec(vec![2.0 * e]),
                eq: DVector::zeros(0),
                eq_jac: DMatrix::zeros(0, 1),
                ineq: DVector::zeros(0),
                ineq_jac: DMatrix::zeros(0, 1),
            })
        }
    }

    impl ParametricProgram for ToyScaled {
        fn num_params(&self) -> usize {
            1
        }
        fn params(&self) -> Vec<f64> {
            vec![self.p]
        }
        fn with_params(&self, p: &[f64]) -> Self {
            ToyScaled { a: self.a, p: p[0] }
        }
        fn param_fd_steps(&self) -> Vec<f64> {
            vec![1e-6]
        }
    }

    #[test]
    fn toy_sensitivity_is_exact() {
        let prog = ToyScaled { a: 3.7, p: 0.4 };
        let cfg = SolverConfig::default();
        let sol = solve(&prog, &DVector::from_vec(vec![0.0]), &cfg).unwrap();
        let s = kkt_sensitivity(&prog, &sol).unwrap();
        assert_relative_eq!(s.du0_dtheta[0], 3.7, max_relative = 1e-7);
    }

    #[test]
    fn upright_equilibrium_mass_column_vanishes() {
        let nlp = build_nlp(
            State::upright(),
            CartpoleParams::nominal(),
            FixedConstants::default(),
            OcpConfig::default(),
        );
        let cfg = SolverConfig::default();
        let sol = solve(&nlp, &DVector::zeros(nlp.num_vars()), &cfg).unwrap();
        let s = kkt_sensitivity(&nlp, &sol).unwrap();
        assert!(s.du0_dtheta.iter().all(|v| v.is_finite()));
        // The upright equilibrium input is zero for every theta, so the
        // added-mass column cannot move it.
        assert!(s.du0_dtheta[0].abs() < 1e-6, "{:?}", s.du0_dtheta);
    }

    fn small_nlp(x0: State, theta: CartpoleParams) -> crate::ocp::ParametricNlp {
        let cfg = OcpConfig {
            horizon: 12,
            ..OcpConfig::default()
        };
        build_nlp(x0, theta, FixedConstants::default(), cfg)
    }

    #[test]
    fn sensitivities_match_finite_differences_of_resolves() {
        let theta = CartpoleParams::nominal();
        let x0 = State::new(0.05, 0.1, 2.7, -0.4);
        let nlp = small_nlp(x0, theta);
        let mut cfg = SolverConfig::default();
        cfg.tol_kkt = 1e-10;
        let sol = multistart_solve(&nlp, &cfg, 21).unwrap();
        let s = kkt_sensitivity(&nlp, &sol).unwrap();
        let t0 = theta.to_vec();
        let mut checked = 0;
        for j in 0..5 {
            let h = 1e-4 * THETA_SWEEP_RANGE[j];
            let mut tp = t0;
            let mut tm = t0;
            tp[j] += h;
            tm[j] -= h;
            // Warm-start the perturbed solves at the nominal optimum so the
            // probe follows this basin's solution map; the active-set guard
            // rejects any branch change.
            let solp = solve(&small_nlp(x0, CartpoleParams::from_vec(tp)), &sol.z, &cfg).unwrap();
            let solm = solve(&small_nlp(x0, CartpoleParams::from_vec(tm)), &sol.z, &cfg).unwrap();
            if active_set_changed(&sol, &solp) || active_set_changed(&sol, &solm) {
                continue;
            }
            let fd = (solp.z[0] - solm.z[0]) / (2.0 * h);
            let scale = s.du0_dtheta[j].abs().max(fd.abs()).max(1e-6);
            assert!(
                (s.du0_dtheta[j] - fd).abs() / scale < 1e-3,
                "column {j}: kkt {} vs fd {}",
                s.du0_dtheta[j],
                fd
            );
            checked += 1;
        }
        assert!(checked >= 4, "too few active-set-stable columns");
    }

    #[test]
    fn linear_predict_reference_points() {
        let s = SensitivityMatrix {
            du0_dtheta: vec![1.0, -2.0, 0.5, 0.0, 3.0],
            dz_dtheta: DMatrix::zeros(1, 5),
            cond_estimate: 1.0,
            valid: true,
        };
        assert_eq!(linear_predict(0.7, &s, &[0.0; 5]), 0.7);
        let eps = 1e-3;
        assert_relative_eq!(
            linear_predict(0.7, &s, &[0.0, eps, 0.0, 0.0, 0.0]),
            0.7 - 2.0 * eps,
            max_relative = 1e-12
        );
    }

    #[test]
    fn active_set_change_detection() {
        let nlp = small_nlp(State::hanging(), CartpoleParams::nominal());
        let cfg = SolverConfig::default();
        let a = multistart_solve(&nlp, &cfg, 3).unwrap();
        // Same instance re-solved with the same seed: same minimum.
        let b = multistart_solve(&nlp, &cfg, 3).unwrap();
        assert!(!active_set_changed(&a, &b));
        let mut c = a.clone();
        c.active_set = vec![0, 1];
        assert!(active_set_changed(&a, &c));
    }
}
