//! Dense dual active-set solver for strictly convex quadratic programs
//!
//! ```text
//!     minimize    1/2 x' Q x + g' x
//!     subject to  C x <= b
//! ```
//!
//! following the dual method of Goldfarb and Idnani: start from the
//! unconstrained minimizer and add violated constraints one at a time,
//! taking dual steps (dropping blocking constraints) as needed. Each step
//! re-solves a small KKT system by LU; at this problem scale that is cheaper
//! than maintaining incremental factorizations.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("quadratic program is infeasible")]
    Infeasible,
    #[error("Q is not positive definite")]
    NotPositiveDefinite,
    #[error("numerical breakdown in active-set iteration")]
    Numerical,
    #[error("active-set iteration limit reached")]
    IterationLimit,
}

#[derive(Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers for all rows (zero for inactive).
    pub mu: DVector<f64>,
    pub working_set: Vec<usize>,
    pub iterations: usize,
}

const FEAS_TOL: f64 = 1e-10;

/// Solve the QP. `Q` must be symmetric positive definite.
pub fn solve_qp(
    q: &DMatrix<f64>,
    g: &DVector<f64>,
    c_rows: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<QpSolution, QpError> {
    let n = q.nrows();
    let m = c_rows.nrows();
    debug_assert_eq!(q.ncols(), n);
    debug_assert_eq!(g.len(), n);
    debug_assert_eq!(b.len(), m);

    // Jacobi equilibration improves the KKT solves when Q has a wide
    // diagonal spread (condensed MPC Hessians do).
    let scale = DVector::<f64>::from_fn(n, |i, _| 1.0 / q[(i, i)].abs().max(1e-12).sqrt());
    let qs = DMatrix::from_fn(n, n, |i, j| q[(i, j)] * scale[i] * scale[j]);
    let gs = DVector::from_fn(n, |i, _| g[i] * scale[i]);
    let cs = DMatrix::from_fn(m, n, |i, j| c_rows[(i, j)] * scale[j]);

    let chol = nalgebra::Cholesky::new(qs.clone()).ok_or(QpError::NotPositiveDefinite)?;
    let mut x = chol.solve(&(-&gs));
    let mut working: Vec<usize> = Vec::new();
    let mut mu_w: Vec<f64> = Vec::new();
    let mut iterations = 0usize;
    let max_iter = 50 * (m + 1);

    // Row norms for a scale-aware violation measure.
    let row_scale: Vec<f64> = (0..m)
        .map(|i| cs.row(i).iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12))
        .collect();

    'outer: loop {
        iterations += 1;
        if iterations > max_iter {
            return Err(QpError::IterationLimit);
        }
        // Most violated constraint outside the working set.
        let mut p = None;
        let mut worst = FEAS_TOL;
        for i in 0..m {
            if working.contains(&i) {
                continue;
            }
            let v = (cs.row(i) * &x)[0] - b[i];
            let scaled = v / row_scale[i];
            if scaled > worst {
                worst = scaled;
                p = Some(i);
            }
        }
        let Some(p) = p else { break };
        let cp = cs.row(p).transpose();
        let mut mu_p = 0.0f64;

        // Inner loop: drive constraint p into the working set.
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(QpError::IterationLimit);
            }
            let w = working.len();
            // [Q C_W'; C_W 0] [z; r] = [c_p; 0]
            let (z, r) = if w == 0 {
                (chol.solve(&cp), DVector::zeros(0))
            } else {
                let mut kkt = DMatrix::zeros(n + w, n + w);
                kkt.view_mut((0, 0), (n, n)).copy_from(&qs);
                for (wi, &ci) in working.iter().enumerate() {
                    for j in 0..n {
                        kkt[(n + wi, j)] = cs[(ci, j)];
                        kkt[(j, n + wi)] = cs[(ci, j)];
                    }
                }
                let mut rhs = DVector::zeros(n + w);
                rhs.rows_mut(0, n).copy_from(&cp);
                let sol = nalgebra::LU::new(kkt).solve(&rhs).ok_or(QpError::Numerical)?;
                (
                    sol.rows(0, n).into_owned(),
                    sol.rows(n, w).into_owned(),
                )
            };

            let denom = cp.dot(&z);
            let viol = (cs.row(p) * &x)[0] - b[p];
            let t2 = if denom > 1e-14 { viol / denom } else { f64::INFINITY };
            let mut t1 = f64::INFINITY;
            let mut blocker = None;
            for (wi, &mw) in mu_w.iter().enumerate() {
                if r[wi] > 1e-14 {
                    let t = mw / r[wi];
                    if t < t1 {
                        t1 = t;
                        blocker = Some(wi);
                    }
                }
            }
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(QpError::Infeasible);
            }
            x -= t * &z;
            for (wi, mw) in mu_w.iter_mut().enumerate() {
                *mw -= t * r[wi];
            }
            mu_p += t;

            if t2 <= t1 {
                working.push(p);
                mu_w.push(mu_p);
                continue 'outer;
            }
            let wi = blocker.expect("blocking constraint");
            working.remove(wi);
            mu_w.remove(wi);
        }
    }

    let mut mu = DVector::zeros(m);
    for (wi, &ci) in working.iter().enumerate() {
        mu[ci] = mu_w[wi].max(0.0);
    }
    // Undo the variable scaling; constraint multipliers are scale-free.
    let x = DVector::from_fn(n, |i, _| x[i] * scale[i]);
    let mut working_set = working;
    working_set.sort_unstable();
    Ok(QpSolution {
        x,
        mu,
        working_set,
        iterations,
    })
}

/// Solve the equality-constrained QP with a fixed working set:
/// `min 1/2 x'Qx + g'x  s.t.  C_W x = b_W`. `Q` need not be definite; the
/// KKT system is solved by LU. Returns `(x, mu_w)` or `None` if singular.
pub fn solve_eqp(
    q: &DMatrix<f64>,
    g: &DVector<f64>,
    c_rows: &DMatrix<f64>,
    b: &DVector<f64>,
    working: &[usize],
) -> Option<(DVector<f64>, Vec<f64>)> {
    let n = q.nrows();
    let w = working.len();
    let mut kkt = DMatrix::zeros(n + w, n + w);
    kkt.view_mut((0, 0), (n, n)).copy_from(q);
    for (wi, &ci) in working.iter().enumerate() {
        for j in 0..n {
            kkt[(n + wi, j)] = c_rows[(ci, j)];
            kkt[(j, n + wi)] = c_rows[(ci, j)];
        }
    }
    let mut rhs = DVector::zeros(n + w);
    for j in 0..n {
        rhs[j] = -g[j];
    }
    for (wi, &ci) in working.iter().enumerate() {
        rhs[n + wi] = b[ci];
    }
    let sol = nalgebra::LU::new(kkt).solve(&rhs)?;
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let mu_w = (0..w).map(|i| sol[n + i]).collect();
    Some((x, mu_w))
}
