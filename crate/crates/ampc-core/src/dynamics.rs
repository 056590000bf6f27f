//! Parametric cartpole model: equations of motion, energies, RK4 integration,
//! and the angle convention (`alpha = 0` is upright).
//!
//! The adjustable parameter vector is `theta = [m_add, M, C1, C2, C3]`; the
//! remaining physical constants live in [`FixedConstants`].

use nalgebra::{Matrix4, SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Adjustable physical parameters, in the order `[m_add, M, C1, C2, C3]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartpoleParams {
    /// Additional pendulum mass [kg].
    pub m_add: f64,
    /// Cart mass including reflected motor inertia [kg].
    pub m_cart: f64,
    /// Velocity-proportional force coefficient [N·s/m] (negative = friction).
    pub c1: f64,
    /// Motor gain [N/V].
    pub c2: f64,
    /// Pendulum rotational friction [N·m·s/rad].
    pub c3: f64,
}

pub const THETA_DIM: usize = 5;

impl CartpoleParams {
    /// Nominal parameter vector used for dataset generation and training.
    pub fn nominal() -> Self {
        Self {
            m_add: 0.02,
            m_cart: 0.506,
            c1: -3.96,
            c2: 1.3,
            c3: 0.0002,
        }
    }

    pub fn to_vec(self) -> [f64; THETA_DIM] {
        [self.m_add, self.m_cart, self.c1, self.c2, self.c3]
    }

    pub fn from_vec(v: [f64; THETA_DIM]) -> Self {
        Self {
            m_add: v[0],
            m_cart: v[1],
            c1: v[2],
            c2: v[3],
            c3: v[4],
        }
    }

    /// Componentwise `self + delta` in the `[m_add, M, C1, C2, C3]` order.
    pub fn offset(self, delta: [f64; THETA_DIM]) -> Self {
        let mut v = self.to_vec();
        for (vi, di) in v.iter_mut().zip(delta.iter()) {
            *vi += di;
        }
        Self::from_vec(v)
    }
}

/// Per-parameter half-widths of the studied deviation range around nominal.
/// Used as the natural scale when normalizing parameter deviations.
pub const THETA_SWEEP_RANGE: [f64; THETA_DIM] = [0.04, 1.0, 9.0, 1.0, 0.06];

/// Fixed physical constants of the pendulum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedConstants {
    /// Rod mass [kg].
    pub m_rod: f64,
    /// Distance from pivot to pendulum center of mass [m].
    pub l: f64,
    /// Pendulum inertia about its center of mass [kg·m²].
    #[serde(rename = "J")]
    pub inertia: f64,
    /// Gravitational acceleration [m/s²].
    pub g: f64,
}

impl Default for FixedConstants {
    fn default() -> Self {
        let m_rod = 0.095;
        let l = 0.165;
        // Uniform rod of length 2l about its center.
        let inertia = m_rod * (2.0 * l) * (2.0 * l) / 12.0;
        Self {
            m_rod,
            l,
            inertia,
            g: 9.81,
        }
    }
}

impl FixedConstants {
    /// Total pendulum mass `m = m_rod + m_add`.
    pub fn pendulum_mass(&self, theta: &CartpoleParams) -> f64 {
        self.m_rod + theta.m_add
    }
}

/// Cartpole state `[y, y_dot, alpha, alpha_dot]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub y: f64,
    pub y_dot: f64,
    pub alpha: f64,
    pub alpha_dot: f64,
}

impl State {
    pub fn new(y: f64, y_dot: f64, alpha: f64, alpha_dot: f64) -> Self {
        Self {
            y,
            y_dot,
            alpha,
            alpha_dot,
        }
    }

    /// Upright rest.
    pub fn upright() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0)
    }

    /// Hanging rest.
    pub fn hanging() -> Self {
        Self::new(0.0, 0.0, std::f64::consts::PI, 0.0)
    }

    pub fn to_vector(self) -> SVector<f64, 4> {
        SVector::from([self.y, self.y_dot, self.alpha, self.alpha_dot])
    }

    pub fn from_vector(v: SVector<f64, 4>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.y.is_finite()
            && self.y_dot.is_finite()
            && self.alpha.is_finite()
            && self.alpha_dot.is_finite()
    }
}

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("singular mass matrix (det = {det:e})")]
    SingularMassMatrix { det: f64 },
    #[error("non-finite state or input")]
    NonFinite,
}

/// Determinant floor below which the 2x2 mass matrix solve is refused.
const MASS_DET_EPS: f64 = 1e-12;

/// Cart and pendulum accelerations `(y_ddot, alpha_ddot)`.
///
/// Solves the 2x2 linear system of the Euler-Lagrange equations of motion
/// with force law `F = C1*y_dot + C2*u`.
pub fn accelerations(
    x: &State,
    u: f64,
    theta: &CartpoleParams,
    c: &FixedConstants,
) -> Result<(f64, f64), DynamicsError> {
    if !x.is_finite() || !u.is_finite() {
        return Err(DynamicsError::NonFinite);
    }
    let m = c.pendulum_mass(theta);
    let (sin_a, cos_a) = x.alpha.sin_cos();
    // Rows: [m*l*cos(a), m*l^2 + J; M + m, m*l*cos(a)] * [y_dd; a_dd] = [r1; r2]
    let a = m * c.l * cos_a;
    let b = m * c.l * c.l + c.inertia;
    let cm = theta.m_cart + m;
    let det = a * a - b * cm;
    if det.abs() < MASS_DET_EPS {
        return Err(DynamicsError::SingularMassMatrix { det });
    }
    let force = theta.c1 * x.y_dot + theta.c2 * u;
    let r1 = -theta.c3 * x.alpha_dot + m * c.g * c.l * sin_a;
    let r2 = force + m * c.l * sin_a * x.alpha_dot * x.alpha_dot;
    let y_dd = (a * r1 - b * r2) / det;
    let a_dd = (a * r2 - cm * r1) / det;
    Ok((y_dd, a_dd))
}

/// State derivative `[y_dot, y_ddot, alpha_dot, alpha_ddot]`.
pub fn state_derivative(
    x: &State,
    u: f64,
    theta: &CartpoleParams,
    c: &FixedConstants,
) -> Result<SVector<f64, 4>, DynamicsError> {
    let (y_dd, a_dd) = accelerations(x, u, theta, c)?;
    Ok(SVector::from([x.y_dot, y_dd, x.alpha_dot, a_dd]))
}

/// Jacobians of the state derivative: `(df/dx, df/du)`.
pub fn derivative_jacobians(
    x: &State,
    u: f64,
    theta: &CartpoleParams,
    c: &FixedConstants,
) -> Result<(Matrix4<f64>, SVector<f64, 4>), DynamicsError> {
    if !x.is_finite() || !u.is_finite() {
        return Err(DynamicsError::NonFinite);
    }
    let m = c.pendulum_mass(theta);
    let (sin_a, cos_a) = x.alpha.sin_cos();
    let ml = m * c.l;
    let a = ml * cos_a;
    let b = ml * c.l + c.inertia;
    let cm = theta.m_cart + m;
    let det = a * a - b * cm;
    if det.abs() < MASS_DET_EPS {
        return Err(DynamicsError::SingularMassMatrix { det });
    }
    let force = theta.c1 * x.y_dot + theta.c2 * u;
    let r1 = -theta.c3 * x.alpha_dot + m * c.g * c.l * sin_a;
    let r2 = force + ml * sin_a * x.alpha_dot * x.alpha_dot;

    // Partials of the matrix entries and right-hand sides.
    let da_dalpha = -ml * sin_a;
    let ddet_dalpha = 2.0 * a * da_dalpha;
    let dr1_dalpha = m * c.g * c.l * cos_a;
    let dr1_dadot = -theta.c3;
    let dr2_dydot = theta.c1;
    let dr2_dalpha = ml * cos_a * x.alpha_dot * x.alpha_dot;
    let dr2_dadot = 2.0 * ml * sin_a * x.alpha_dot;
    let dr2_du = theta.c2;

    let num_y = a * r1 - b * r2;
    let num_a = a * r2 - cm * r1;

    // Quotient rule for y_dd = num_y / det and a_dd = num_a / det.
    let dnum_y_dalpha = da_dalpha * r1 + a * dr1_dalpha - b * dr2_dalpha;
    let dnum_a_dalpha = da_dalpha * r2 + a * dr2_dalpha - cm * dr1_dalpha;
    let dy_dd_dalpha = (dnum_y_dalpha * det - num_y * ddet_dalpha) / (det * det);
    let da_dd_dalpha = (dnum_a_dalpha * det - num_a * ddet_dalpha) / (det * det);

    let dy_dd_dydot = -b * dr2_dydot / det;
    let da_dd_dydot = a * dr2_dydot / det;
    let dy_dd_dadot = (a * dr1_dadot - b * dr2_dadot) / det;
    let da_dd_dadot = (a * dr2_dadot - cm * dr1_dadot) / det;
    let dy_dd_du = -b * dr2_du / det;
    let da_dd_du = a * dr2_du / det;

    let mut jx = Matrix4::zeros();
    // Row 0: d(y_dot)/dx
    jx[(0, 1)] = 1.0;
    // Row 1: d(y_dd)/dx
    jx[(1, 1)] = dy_dd_dydot;
    jx[(1, 2)] = dy_dd_dalpha;
    jx[(1, 3)] = dy_dd_dadot;
    // Row 2: d(alpha_dot)/dx
    jx[(2, 3)] = 1.0;
    // Row 3: d(alpha_dd)/dx
    jx[(3, 1)] = da_dd_dydot;
    jx[(3, 2)] = da_dd_dalpha;
    jx[(3, 3)] = da_dd_dadot;

    let ju = SVector::from([0.0, dy_dd_du, 0.0, da_dd_du]);
    Ok((jx, ju))
}

/// One classical RK4 step with zero-order-hold input.
pub fn step_rk4(
    x: &State,
    u: f64,
    theta: &CartpoleParams,
    c: &FixedConstants,
    dt: f64,
) -> Result<State, DynamicsError> {
    debug_assert!(dt > 0.0);
    let xv = x.to_vector();
    let k1 = state_derivative(x, u, theta, c)?;
    let k2 = state_derivative(&State::from_vector(xv + 0.5 * dt * k1), u, theta, c)?;
    let k3 = state_derivative(&State::from_vector(xv + 0.5 * dt * k2), u, theta, c)?;
    let k4 = state_derivative(&State::from_vector(xv + dt * k3), u, theta, c)?;
    Ok(State::from_vector(
        xv + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4),
    ))
}

/// RK4 step together with its Jacobians wrt the initial state and the input.
pub fn step_rk4_with_jacobians(
    x: &State,
    u: f64,
    theta: &CartpoleParams,
    c: &FixedConstants,
    dt: f64,
) -> Result<(State, Matrix4<f64>, SVector<f64, 4>), DynamicsError> {
    let xv = x.to_vector();
    let eye = Matrix4::identity();

    let x1 = *x;
    let k1 = state_derivative(&x1, u, theta, c)?;
    let (j1x, j1u) = derivative_jacobians(&x1, u, theta, c)?;
    let a1 = j1x;
    let b1 = j1u;

    let x2 = State::from_vector(xv + 0.5 * dt * k1);
    let k2 = state_derivative(&x2, u, theta, c)?;
    let (j2x, j2u) = derivative_jacobians(&x2, u, theta, c)?;
    let a2 = j2x * (eye + 0.5 * dt * a1);
    let b2 = j2x * (0.5 * dt * b1) + j2u;

    let x3 = State::from_vector(xv + 0.5 * dt * k2);
    let k3 = state_derivative(&x3, u, theta, c)?;
    let (j3x, j3u) = derivative_jacobians(&x3, u, theta, c)?;
    let a3 = j3x * (eye + 0.5 * dt * a2);
    let b3 = j3x * (0.5 * dt * b2) + j3u;

    let x4 = State::from_vector(xv + dt * k3);
    let k4 = state_derivative(&x4, u, theta, c)?;
    let (j4x, j4u) = derivative_jacobians(&x4, u, theta, c)?;
    let a4 = j4x * (eye + dt * a3);
    let b4 = j4x * (dt * b3) + j4u;

    let x_next = State::from_vector(xv + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    let ax = eye + (dt / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
    let bu = (dt / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
    Ok((x_next, ax, bu))
}

/// Kinetic and potential energy `(E_kin, E_pot)`.
///
/// `E_pot = m*g*l*cos(alpha)` is zero at horizontal and maximal upright;
/// `E_kin` uses the same mass matrix as the equations of motion.
pub fn energies(x: &State, theta: &CartpoleParams, c: &FixedConstants) -> (f64, f64) {
    let m = c.pendulum_mass(theta);
    let cos_a = x.alpha.cos();
    let e_pot = m * c.g * c.l * cos_a;
    let e_kin = 0.5 * (theta.m_cart + m) * x.y_dot * x.y_dot
        + m * c.l * x.y_dot * x.alpha_dot * cos_a
        + 0.5 * (m * c.l * c.l + c.inertia) * x.alpha_dot * x.alpha_dot;
    (e_kin, e_pot)
}

/// Symmetric generalized mass matrix in `(y, alpha)` coordinates.
pub fn mass_matrix(alpha: f64, theta: &CartpoleParams, c: &FixedConstants) -> SMatrix<f64, 2, 2> {
    let m = c.pendulum_mass(theta);
    let a = m * c.l * alpha.cos();
    SMatrix::<f64, 2, 2>::new(
        theta.m_cart + m,
        a,
        a,
        m * c.l * c.l + c.inertia,
    )
}

/// Wrap an angle into `[-pi, pi)` via `mod(alpha + pi, 2*pi) - pi`.
pub fn wrap_angle(alpha: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    (alpha + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI
}
