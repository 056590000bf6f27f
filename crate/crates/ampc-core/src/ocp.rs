//! Transcription of the swing-up MPC into a finite-dimensional parametric NLP.
//!
//! Decision vector `z = [u_0 .. u_N, x_1 .. x_N]`. Equality constraints are
//! RK4 multiple-shooting defects `x_{k+1} - Phi(x_k, u_k)` with `Phi` taking
//! `rk4_substeps` substeps per control interval. Inequalities are input
//! bounds on every knot, cart-position bounds on knots `1..=N`, and a
//! terminal box around upright (angle component wrapped).

use crate::dynamics::{
    self, step_rk4, step_rk4_with_jacobians, wrap_angle, CartpoleParams, FixedConstants, State,
};
use crate::solver::program::{DenseEval, EvalError, HessianMode, Program, ParametricProgram,
    ValueEval};
use nalgebra::{DMatrix, DVector, Matrix4, SVector};
use serde::{Deserialize, Serialize};

/// MPC transcription parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcpConfig {
    /// Horizon length N (number of control intervals).
    pub horizon: usize,
    /// Input hold time per interval [s].
    pub dt_ctrl: f64,
    /// RK4 substeps per control interval in the shooting map.
    pub rk4_substeps: usize,
    pub y_min: f64,
    pub y_max: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// Cart-position cost weight.
    pub w_y: f64,
    /// Input cost weight.
    pub w_u: f64,
    /// Terminal box half-widths around upright `[y, y_dot, alpha, alpha_dot]`.
    pub terminal_box: [f64; 4],
}

impl Default for OcpConfig {
    fn default() -> Self {
        Self {
            horizon: 25,
            dt_ctrl: 0.160,
            rk4_substeps: 4,
            y_min: -0.4,
            y_max: 0.4,
            u_min: -9.0,
            u_max: 9.0,
            w_y: 1.0,
            w_u: 0.01,
            terminal_box: [0.2, 0.5, 0.17, 0.5],
        }
    }
}

impl OcpConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.horizon < 1 {
            return Err("horizon must be >= 1".into());
        }
        if !(self.dt_ctrl > 0.0) || self.rk4_substeps == 0 {
            return Err("dt_ctrl and rk4_substeps must be positive".into());
        }
        if self.y_min >= self.y_max || self.u_min >= self.u_max {
            return Err("bounds must be well ordered".into());
        }
        if self.terminal_box.iter().any(|b| !(*b > 0.0)) {
            return Err("terminal box half-widths must be positive".into());
        }
        Ok(())
    }
}

/// One inequality row `g = sign * v + offset <= 0` where `v` is a single
/// decision variable, optionally angle-wrapped.
#[derive(Debug, Clone, Copy)]
pub struct IneqRow {
    pub var: usize,
    pub sign: f64,
    pub offset: f64,
    pub wrap: bool,
}

/// The MPC problem for one initial state and parameter vector, in NLP form.
#[derive(Debug, Clone)]
pub struct ParametricNlp {
    pub x0: State,
    pub theta: CartpoleParams,
    pub constants: FixedConstants,
    pub cfg: OcpConfig,
    ineq_rows: Vec<IneqRow>,
}

/// Stage cost `E_kin - E_pot + w_y*y^2 + w_u*u^2`.
pub fn stage_cost(
    x: &State,
    u: f64,
    theta: &CartpoleParams,
    c: &FixedConstants,
    cfg: &OcpConfig,
) -> f64 {
    let (e_kin, e_pot) = dynamics::energies(x, theta, c);
    e_kin - e_pot + cfg.w_y * x.y * x.y + cfg.w_u * u * u
}

/// Gradient of the stage cost wrt `(x, u)`, packed as `[d/dx; d/du]`.
pub fn stage_cost_grad(
    x: &State,
    u: f64,
    theta: &CartpoleParams,
    c: &FixedConstants,
    cfg: &OcpConfig,
) -> SVector<f64, 5> {
    let m = c.pendulum_mass(theta);
    let (sin_a, cos_a) = x.alpha.sin_cos();
    let ml = m * c.l;
    let b = ml * c.l + c.inertia;
    let cm = theta.m_cart + m;
    SVector::from([
        2.0 * cfg.w_y * x.y,
        cm * x.y_dot + ml * x.alpha_dot * cos_a,
        -ml * x.y_dot * x.alpha_dot * sin_a + m * c.g * c.l * sin_a,
        ml * x.y_dot * cos_a + b * x.alpha_dot,
        2.0 * cfg.w_u * u,
    ])
}

/// Shooting map over one control interval, with Jacobians.
fn shooting_step(
    x: &State,
    u: f64,
    theta: &CartpoleParams,
    c: &FixedConstants,
    cfg: &OcpConfig,
) -> Result<(State, Matrix4<f64>, SVector<f64, 4>), EvalError> {
    let dt = cfg.dt_ctrl / cfg.rk4_substeps as f64;
    let mut xs = *x;
    let mut a = Matrix4::identity();
    let mut b = SVector::<f64, 4>::zeros();
    for _ in 0..cfg.rk4_substeps {
        let (xn, aj, bj) = step_rk4_with_jacobians(&xs, u, theta, c, dt)
            .map_err(|_| EvalError::NonFinite { index: 0 })?;
        a = aj * a;
        b = aj * b + bj;
        xs = xn;
    }
    Ok((xs, a, b))
}

fn shooting_step_value(
    x: &State,
    u: f64,
    theta: &CartpoleParams,
    c: &FixedConstants,
    cfg: &OcpConfig,
) -> Result<State, EvalError> {
    let dt = cfg.dt_ctrl / cfg.rk4_substeps as f64;
    let mut xs = *x;
    for _ in 0..cfg.rk4_substeps {
        xs = step_rk4(&xs, u, theta, c, dt).map_err(|_| EvalError::NonFinite { index: 0 })?;
    }
    Ok(xs)
}

/// Structured first-order evaluation used by the SQP solver.
pub struct StructuredEval {
    pub cost: f64,
    pub cost_grad: DVector<f64>,
    /// Defects `x_{k+1} - Phi(x_k, u_k)`, k = 0..N-1.
    pub defects: Vec<SVector<f64, 4>>,
    /// `dPhi/dx_k` per interval.
    pub a_mats: Vec<Matrix4<f64>>,
    /// `dPhi/du_k` per interval.
    pub b_vecs: Vec<SVector<f64, 4>>,
    pub ineq: DVector<f64>,
}

impl ParametricNlp {
    pub fn num_vars(&self) -> usize {
        let n = self.cfg.horizon;
        (n + 1) + 4 * n
    }

    pub fn num_eq(&self) -> usize {
        4 * self.cfg.horizon
    }

    pub fn num_ineq(&self) -> usize {
        let n = self.cfg.horizon;
        2 * (n + 1) + 2 * n + 8
    }

    pub fn u_index(&self, k: usize) -> usize {
        debug_assert!(k <= self.cfg.horizon);
        k
    }

    /// Index of the first component of knot `x_k`, `k` in `1..=N`.
    pub fn x_index(&self, k: usize) -> usize {
        debug_assert!(k >= 1 && k <= self.cfg.horizon);
        (self.cfg.horizon + 1) + 4 * (k - 1)
    }

    pub fn ineq_rows(&self) -> &[IneqRow] {
        &self.ineq_rows
    }

    /// Knot state `x_k` from the decision vector (`k = 0` gives the parameter `x0`).
    pub fn knot_state(&self, z: &DVector<f64>, k: usize) -> State {
        if k == 0 {
            self.x0
        } else {
            let i = self.x_index(k);
            State::new(z[i], z[i + 1], z[i + 2], z[i + 3])
        }
    }

    /// Pack an input sequence (length N+1) and knot states (length N) into `z`.
    pub fn pack(&self, inputs: &[f64], knots: &[State]) -> DVector<f64> {
        let n = self.cfg.horizon;
        assert_eq!(inputs.len(), n + 1);
        assert_eq!(knots.len(), n);
        let mut z = DVector::zeros(self.num_vars());
        for (k, u) in inputs.iter().enumerate() {
            z[k] = *u;
        }
        for (k, x) in knots.iter().enumerate() {
            let i = self.x_index(k + 1);
            z[i] = x.y;
            z[i + 1] = x.y_dot;
            z[i + 2] = x.alpha;
            z[i + 3] = x.alpha_dot;
        }
        z
    }

    /// Forward-simulate the shooting map from `x0`, returning knots `1..=N`.
    pub fn rollout(&self, inputs: &[f64]) -> Result<Vec<State>, EvalError> {
        let n = self.cfg.horizon;
        assert_eq!(inputs.len(), n + 1);
        let mut knots = Vec::with_capacity(n);
        let mut x = self.x0;
        for (k, &u) in inputs.iter().take(n).enumerate() {
            x = shooting_step_value(&x, u, &self.theta, &self.constants, &self.cfg)
                .map_err(|_| EvalError::NonFinite { index: k })?;
            knots.push(x);
        }
        Ok(knots)
    }

    /// Equality-feasible decision vector from an input sequence.
    pub fn guess_from_inputs(&self, inputs: &[f64]) -> Result<DVector<f64>, EvalError> {
        Ok(self.pack(inputs, &self.rollout(inputs)?))
    }

    pub fn structured_eval(&self, z: &DVector<f64>) -> Result<StructuredEval, EvalError> {
        let n = self.cfg.horizon;
        let theta = &self.theta;
        let c = &self.constants;
        let mut cost = 0.0;
        let mut cost_grad = DVector::zeros(self.num_vars());
        let mut defects = Vec::with_capacity(n);
        let mut a_mats = Vec::with_capacity(n);
        let mut b_vecs = Vec::with_capacity(n);

        for k in 0..=n {
            let xk = self.knot_state(z, k);
            let uk = z[self.u_index(k)];
            if !xk.is_finite() || !uk.is_finite() {
                return Err(EvalError::NonFinite { index: k });
            }
            cost += stage_cost(&xk, uk, theta, c, &self.cfg);
            let grad = stage_cost_grad(&xk, uk, theta, c, &self.cfg);
            cost_grad[self.u_index(k)] += grad[4];
            if k >= 1 {
                let xi = self.x_index(k);
                for i in 0..4 {
                    cost_grad[xi + i] += grad[i];
                }
            }
            if k < n {
                let (phi, a, b) = shooting_step(&xk, uk, theta, c, &self.cfg)
                    .map_err(|_| EvalError::NonFinite { index: k })?;
                let x_next = self.knot_state(z, k + 1);
                defects.push(x_next.to_vector() - phi.to_vector());
                a_mats.push(a);
                b_vecs.push(b);
            }
        }
        if !cost.is_finite() {
            return Err(EvalError::NonFinite { index: n });
        }

        let ineq = self.ineq_values(z);
        Ok(StructuredEval {
            cost,
            cost_grad,
            defects,
            a_mats,
            b_vecs,
            ineq,
        })
    }

    pub fn ineq_values(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.ineq_rows.len());
        for (i, row) in self.ineq_rows.iter().enumerate() {
            let v = if row.wrap { wrap_angle(z[row.var]) } else { z[row.var] };
            g[i] = row.sign * v + row.offset;
        }
        g
    }

    /// Per-stage gradient of `l(x,u) - lambda^T Phi(x,u)` wrt `(x, u)`.
    ///
    /// `lambda = None` for the final stage (no outgoing defect).
    /// `include_quadratic = false` drops the `w_y y^2` and `w_u u^2` terms,
    /// whose Hessian contribution is added analytically by the caller.
    pub(crate) fn stage_lagrangian_grad(
        &self,
        x: &State,
        u: f64,
        lambda: Option<&SVector<f64, 4>>,
        include_quadratic: bool,
    ) -> Result<SVector<f64, 5>, EvalError> {
        let mut grad = stage_cost_grad(x, u, &self.theta, &self.constants, &self.cfg);
        if !include_quadratic {
            grad[0] -= 2.0 * self.cfg.w_y * x.y;
            grad[4] -= 2.0 * self.cfg.w_u * u;
        }
        if let Some(lam) = lambda {
            let (_, a, b) = shooting_step(x, u, &self.theta, &self.constants, &self.cfg)?;
            let gx = a.transpose() * lam;
            for i in 0..4 {
                grad[i] -= gx[i];
            }
            grad[4] -= b.dot(lam);
        }
        Ok(grad)
    }
}

fn build_ineq_rows(cfg: &OcpConfig, x_index_base: usize) -> Vec<IneqRow> {
    let n = cfg.horizon;
    let mut rows = Vec::with_capacity(2 * (n + 1) + 2 * n + 8);
    for k in 0..=n {
        rows.push(IneqRow { var: k, sign: 1.0, offset: -cfg.u_max, wrap: false });
    }
    for k in 0..=n {
        rows.push(IneqRow { var: k, sign: -1.0, offset: cfg.u_min, wrap: false });
    }
    let x_index = |k: usize| x_index_base + 4 * (k - 1);
    for k in 1..=n {
        rows.push(IneqRow { var: x_index(k), sign: 1.0, offset: -cfg.y_max, wrap: false });
    }
    for k in 1..=n {
        rows.push(IneqRow { var: x_index(k), sign: -1.0, offset: cfg.y_min, wrap: false });
    }
    // Terminal box around upright; the angle component is wrapped.
    for i in 0..4 {
        let var = x_index(n) + i;
        let wrap = i == 2;
        rows.push(IneqRow { var, sign: 1.0, offset: -cfg.terminal_box[i], wrap });
        rows.push(IneqRow { var, sign: -1.0, offset: -cfg.terminal_box[i], wrap });
    }
    rows
}

/// Transcribe the MPC problem for initial state `x0` and parameters `theta`.
pub fn build_nlp(
    x0: State,
    theta: CartpoleParams,
    constants: FixedConstants,
    cfg: OcpConfig,
) -> ParametricNlp {
    cfg.validate().expect("invalid OCP config");
    let n = cfg.horizon;
    let ineq_rows = build_ineq_rows(&cfg, n + 1);
    let nlp = ParametricNlp {
        x0,
        theta,
        constants,
        cfg,
        ineq_rows,
    };
    debug_assert_eq!(nlp.num_vars(), (n + 1) + 4 * n);
    debug_assert_eq!(nlp.num_eq(), 4 * n);
    debug_assert_eq!(nlp.num_ineq(), nlp.ineq_rows.len());
    nlp
}

impl Program for ParametricNlp {
    fn num_vars(&self) -> usize {
        ParametricNlp::num_vars(self)
    }

    fn num_eq(&self) -> usize {
        ParametricNlp::num_eq(self)
    }

    fn num_ineq(&self) -> usize {
        ParametricNlp::num_ineq(self)
    }

    fn eval_values(&self, z: &DVector<f64>) -> Result<ValueEval, EvalError> {
        let n = self.cfg.horizon;
        let mut cost = 0.0;
        for k in 0..=n {
            let xk = self.knot_state(z, k);
            let uk = z[self.u_index(k)];
            if !xk.is_finite() || !uk.is_finite() {
                return Err(EvalError::NonFinite { index: k });
            }
            cost += stage_cost(&xk, uk, &self.theta, &self.constants, &self.cfg);
        }
        let mut eq = DVector::zeros(self.num_eq());
        for k in 0..n {
            let xk = self.knot_state(z, k);
            let uk = z[self.u_index(k)];
            let phi = shooting_step_value(&xk, uk, &self.theta, &self.constants, &self.cfg)
                .map_err(|_| EvalError::NonFinite { index: k })?;
            let d = self.knot_state(z, k + 1).to_vector() - phi.to_vector();
            for i in 0..4 {
                eq[4 * k + i] = d[i];
            }
        }
        if !cost.is_finite() {
            return Err(EvalError::NonFinite { index: n });
        }
        Ok(ValueEval {
            cost,
            eq,
            ineq: self.ineq_values(z),
        })
    }

    fn eval_dense(&self, z: &DVector<f64>) -> Result<DenseEval, EvalError> {
        let ev = self.structured_eval(z)?;
        let n = self.cfg.horizon;
        let nv = self.num_vars();
        let mut eq = DVector::zeros(self.num_eq());
        let mut eq_jac = DMatrix::zeros(self.num_eq(), nv);
        for k in 0..n {
            for i in 0..4 {
                let r = 4 * k + i;
                eq[r] = ev.defects[k][i];
                eq_jac[(r, self.x_index(k + 1) + i)] = 1.0;
                if k >= 1 {
                    for j in 0..4 {
                        eq_jac[(r, self.x_index(k) + j)] = -ev.a_mats[k][(i, j)];
                    }
                }
                eq_jac[(r, self.u_index(k))] = -ev.b_vecs[k][i];
            }
        }
        let mut ineq_jac = DMatrix::zeros(self.num_ineq(), nv);
        for (i, row) in self.ineq_rows.iter().enumerate() {
            ineq_jac[(i, row.var)] = row.sign;
        }
        Ok(DenseEval {
            cost: ev.cost,
            cost_grad: ev.cost_grad,
            eq,
            eq_jac,
            ineq: ev.ineq,
            ineq_jac,
        })
    }

    fn lagrangian_hessian(
        &self,
        z: &DVector<f64>,
        lambda: &DVector<f64>,
        mu: &DVector<f64>,
        mode: HessianMode,
    ) -> Result<DMatrix<f64>, EvalError> {
        match mode {
            HessianMode::FiniteDifferenceExact => {
                crate::solver::program::fd_lagrangian_hessian(self, z, lambda, mu)
            }
            HessianMode::GaussNewtonExactCorrection => self.stagewise_hessian(z, lambda),
        }
    }

    fn restore(&self, z: &DVector<f64>) -> Option<DVector<f64>> {
        let n = self.cfg.horizon;
        let inputs: Vec<f64> = (0..=n)
            .map(|k| z[self.u_index(k)].clamp(self.cfg.u_min, self.cfg.u_max))
            .collect();
        self.guess_from_inputs(&inputs).ok()
    }
}

impl ParametricNlp {
    /// Exact Lagrangian Hessian, stage block by stage block.
    ///
    /// The Lagrangian separates over `(x_k, u_k)` groups: each defect couples
    /// `x_{k+1}` linearly, so all curvature lives in the per-stage terms
    /// `l(x_k, u_k) - lambda_k^T Phi(x_k, u_k)`. Quadratic cost terms enter
    /// analytically; the rest by central differences of the stage gradient.
    fn stagewise_hessian(
        &self,
        z: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> Result<DMatrix<f64>, EvalError> {
        let n = self.cfg.horizon;
        let mut h = DMatrix::zeros(self.num_vars(), self.num_vars());
        let fd_h = 1e-5;
        for k in 0..=n {
            let xk = self.knot_state(z, k);
            let uk = z[self.u_index(k)];
            let lam = if k < n {
                Some(SVector::<f64, 4>::from_fn(|i, _| lambda[4 * k + i]))
            } else {
                None
            };
            // Global indices of this stage's block, in (x, u) order.
            let idx: Vec<usize> = if k == 0 {
                vec![self.u_index(0)]
            } else {
                let xi = self.x_index(k);
                vec![xi, xi + 1, xi + 2, xi + 3, self.u_index(k)]
            };
            // Local coordinates within [x0..x3, u].
            let local: Vec<usize> = if k == 0 { vec![4] } else { vec![0, 1, 2, 3, 4] };

            let mut block = DMatrix::zeros(idx.len(), idx.len());
            for (col, &lvar) in local.iter().enumerate() {
                let perturbed = |s: f64| -> Result<SVector<f64, 5>, EvalError> {
                    let mut xv = xk.to_vector();
                    let mut uv = uk;
                    let step = fd_h * (1.0 + if lvar < 4 { xv[lvar].abs() } else { uv.abs() });
                    if lvar < 4 {
                        xv[lvar] += s * step;
                    } else {
                        uv += s * step;
                    }
                    let g = self.stage_lagrangian_grad(
                        &State::from_vector(xv),
                        uv,
                        lam.as_ref(),
                        false,
                    )?;
                    Ok(g / (2.0 * step))
                };
                let gp = perturbed(1.0)?;
                let gm = perturbed(-1.0)?;
                let d = gp - gm;
                for (row, &lrow) in local.iter().enumerate() {
                    block[(row, col)] = d[lrow];
                }
            }
            // Symmetrize and add the exact quadratic cost curvature.
            let block = (block.clone() + block.transpose()) * 0.5;
            for (r, &gr) in idx.iter().enumerate() {
                for (cth, &gc) in idx.iter().enumerate() {
                    h[(gr, gc)] += block[(r, cth)];
                }
            }
            h[(self.u_index(k), self.u_index(k))] += 2.0 * self.cfg.w_u;
            if k >= 1 {
                let yi = self.x_index(k);
                h[(yi, yi)] += 2.0 * self.cfg.w_y;
            }
        }
        Ok(h)
    }
}

impl ParametricProgram for ParametricNlp {
    fn num_params(&self) -> usize {
        dynamics::THETA_DIM
    }

    fn params(&self) -> Vec<f64> {
        self.theta.to_vec().to_vec()
    }

    fn with_params(&self, p: &[f64]) -> Self {
        let mut nlp = self.clone();
        nlp.theta = CartpoleParams::from_vec([p[0], p[1], p[2], p[3], p[4]]);
        nlp
    }

    fn param_fd_steps(&self) -> Vec<f64> {
        dynamics::THETA_SWEEP_RANGE.iter().map(|r| 1e-6 * r).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::program::Program;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn nominal_nlp(x0: State) -> ParametricNlp {
        build_nlp(
            x0,
            CartpoleParams::nominal(),
            FixedConstants::default(),
            OcpConfig::default(),
        )
    }

    #[test]
    fn dimension_bookkeeping() {
        let nlp = nominal_nlp(State::upright());
        assert_eq!(nlp.num_vars(), 126);
        assert_eq!(nlp.num_eq(), 100);
        assert_eq!(nlp.num_ineq(), 110);
    }

    #[test]
    fn equilibrium_trajectory_cost_and_defects() {
        let nlp = nominal_nlp(State::upright());
        let z = DVector::zeros(nlp.num_vars());
        let ev = nlp.structured_eval(&z).unwrap();
        for d in &ev.defects {
            assert!(d.norm() == 0.0);
        }
        let c = FixedConstants::default();
        let m = c.pendulum_mass(&CartpoleParams::nominal());
        let expected = 26.0 * (-m * c.g * c.l);
        assert_relative_eq!(ev.cost, expected, max_relative = 1e-14);
    }

    #[test]
    fn input_weight_scales_gradient_linearly() {
        let mut cfg = OcpConfig::default();
        let x0 = State::upright();
        let z = {
            let nlp = build_nlp(x0, CartpoleParams::nominal(), FixedConstants::default(), cfg);
            let mut z = DVector::zeros(nlp.num_vars());
            z[3] = 2.0; // one nonzero input, zero states
            z
        };
        let g1 = {
            let nlp = build_nlp(x0, CartpoleParams::nominal(), FixedConstants::default(), cfg);
            nlp.structured_eval(&z).unwrap().cost_grad[3]
        };
        cfg.w_u *= 2.0;
        let g2 = {
            let nlp = build_nlp(x0, CartpoleParams::nominal(), FixedConstants::default(), cfg);
            nlp.structured_eval(&z).unwrap().cost_grad[3]
        };
        // Doubling w_u doubles the quadratic input term's gradient share.
        let quad_part = 2.0 * 0.01 * 2.0;
        assert_relative_eq!(g2 - g1, quad_part, max_relative = 1e-12);
    }

    fn random_feasible_z(nlp: &ParametricNlp, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let n = nlp.cfg.horizon;
        let inputs: Vec<f64> = (0..=n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut z = nlp.guess_from_inputs(&inputs).unwrap();
        // Perturb knots a little so defects are nonzero.
        for i in (n + 1)..nlp.num_vars() {
            z[i] += rng.random_range(-0.01..0.01);
        }
        z
    }

    #[test]
    fn gradients_match_finite_differences() {
        let nlp = nominal_nlp(State::new(0.1, 0.0, 2.5, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for _ in 0..10 {
            let z = random_feasible_z(&nlp, &mut rng);
            let ev = nlp.eval_dense(&z).unwrap();
            // Spot-check a subset of coordinates to keep runtime sane.
            for &j in &[0usize, 3, 12, 26, 30, 55, 80, 125] {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[j] += h;
                zm[j] -= h;
                let vp = nlp.eval_values(&zp).unwrap();
                let vm = nlp.eval_values(&zm).unwrap();
                let fd = (vp.cost - vm.cost) / (2.0 * h);
                assert_relative_eq!(ev.cost_grad[j], fd, max_relative = 1e-5, epsilon = 1e-7);
                for r in 0..nlp.num_eq() {
                    let fd = (vp.eq[r] - vm.eq[r]) / (2.0 * h);
                    assert_relative_eq!(
                        ev.eq_jac[(r, j)],
                        fd,
                        max_relative = 1e-5,
                        epsilon = 1e-7
                    );
                }
            }
        }
    }

    #[test]
    fn ineq_jacobian_matches_finite_differences() {
        let nlp = nominal_nlp(State::new(0.0, 0.0, 3.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z = random_feasible_z(&nlp, &mut rng);
        let ev = nlp.eval_dense(&z).unwrap();
        let h = 1e-7;
        for j in 0..nlp.num_vars() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j] += h;
            zm[j] -= h;
            let gp = nlp.ineq_values(&zp);
            let gm = nlp.ineq_values(&zm);
            for r in 0..nlp.num_ineq() {
                let fd = (gp[r] - gm[r]) / (2.0 * h);
                assert_relative_eq!(ev.ineq_jac[(r, j)], fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn cost_decomposes_over_stages() {
        let nlp = nominal_nlp(State::new(0.0, 0.0, 3.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = random_feasible_z(&nlp, &mut rng);
        let total = nlp.eval_values(&z).unwrap().cost;
        let mut sum = 0.0;
        for k in 0..=nlp.cfg.horizon {
            sum += stage_cost(
                &nlp.knot_state(&z, k),
                z[nlp.u_index(k)],
                &nlp.theta,
                &nlp.constants,
                &nlp.cfg,
            );
        }
        assert_relative_eq!(total, sum, max_relative = 1e-14);
    }

    #[test]
    fn upright_trajectory_feasible_for_any_theta() {
        for theta in [
            CartpoleParams::nominal(),
            CartpoleParams::nominal().offset([0.02, 0.5, 4.0, -0.5, 0.03]),
        ] {
            let nlp = build_nlp(
                State::upright(),
                theta,
                FixedConstants::default(),
                OcpConfig::default(),
            );
            let ev = nlp.eval_values(&DVector::zeros(nlp.num_vars())).unwrap();
            assert_eq!(ev.eq.amax(), 0.0);
            assert!(ev.ineq.max() < 0.0);
        }
    }
}
