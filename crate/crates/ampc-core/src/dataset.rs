//! Imitation dataset: sampled initial states, optimal first inputs, and
//! input sensitivities, with a fixed-width binary file format.
//!
//! Generation is a pure function of (sample spec, configs, seed): each
//! record's multistart seed is derived from the master seed and the record
//! index, so any worker count produces byte-identical files.

use crate::dynamics::{wrap_angle, CartpoleParams, FixedConstants, State, THETA_DIM};
use crate::ocp::{build_nlp, OcpConfig};
use crate::par;
use crate::sensitivity::{kkt_sensitivity, SensitivityError};
use crate::solver::{multistart_solve, start_seed, SolverConfig};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

/// Sampling plan for initial states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleSpec {
    pub n_total: usize,
    /// Fraction of samples drawn from the tight ranges around upright.
    pub dense_frac: f64,
    /// Per-state sampling intervals `[y, y_dot, alpha, alpha_dot]`.
    pub ranges: [(f64, f64); 4],
    pub upright_ranges: [(f64, f64); 4],
    pub seed: u64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            n_total: 10_000,
            dense_frac: 0.01,
            ranges: [
                (-0.35, 0.35),
                (-2.0, 2.0),
                (-std::f64::consts::PI, std::f64::consts::PI),
                (-10.0, 10.0),
            ],
            upright_ranges: [(-0.2, 0.2), (-0.5, 0.5), (-0.3, 0.3), (-1.0, 1.0)],
            seed: 1,
        }
    }
}

impl SampleSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.dense_frac) {
            return Err("dense_frac must be in [0, 1]".into());
        }
        for r in self.ranges.iter().chain(self.upright_ranges.iter()) {
            if !(r.0 < r.1) {
                return Err("sampling ranges must be well ordered".into());
            }
        }
        Ok(())
    }
}

/// Reason a sample carries no usable label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkipReason {
    SolveFailed,
    WeaklyActive,
    SingularKkt,
}

impl SkipReason {
    fn code(self) -> u32 {
        match self {
            SkipReason::SolveFailed => 1,
            SkipReason::WeaklyActive => 2,
            SkipReason::SingularKkt => 3,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        match c {
            1 => Some(SkipReason::SolveFailed),
            2 => Some(SkipReason::WeaklyActive),
            3 => Some(SkipReason::SingularKkt),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub x: State,
    pub u0: f64,
    pub sens: [f64; THETA_DIM],
    pub active_set_size: u32,
    pub skipped: Option<SkipReason>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn skipped_count(&self) -> usize {
        self.records.iter().filter(|r| r.skipped.is_some()).count()
    }

    pub fn valid_records(&self) -> impl Iterator<Item = &DatasetRecord> {
        self.records.iter().filter(|r| r.skipped.is_none())
    }

    /// Training pairs: wrapped-angle state vectors with input and
    /// sensitivity targets.
    pub fn training_pairs(&self) -> (Vec<[f64; 4]>, Vec<f64>, Vec<[f64; THETA_DIM]>) {
        let mut xs = Vec::new();
        let mut us = Vec::new();
        let mut sens = Vec::new();
        for r in self.valid_records() {
            xs.push([r.x.y, r.x.y_dot, wrap_angle(r.x.alpha), r.x.alpha_dot]);
            us.push(r.u0);
            sens.push(r.sens);
        }
        (xs, us, sens)
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic (not a dataset file)")]
    BadMagic,
    #[error("file truncated or trailing bytes")]
    Truncated,
    #[error("header skip count {header} does not match records ({actual})")]
    SkipCountMismatch { header: u32, actual: u32 },
    #[error("success rate {rate:.1}% below 50%: solver or sampling misconfigured")]
    LowSuccessRate { rate: f64 },
}

/// Draw initial states: bulk uniform over `ranges`, then the dense cluster
/// uniform over `upright_ranges`. Angles are wrapped.
pub fn sample_states(spec: &SampleSpec) -> Vec<State> {
    spec.validate().expect("invalid sample spec");
    let n_dense = ((spec.n_total as f64) * spec.dense_frac).round() as usize;
    let n_bulk = spec.n_total - n_dense.min(spec.n_total);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut draw = |ranges: &[(f64, f64); 4], rng: &mut ChaCha8Rng| {
        let v: Vec<f64> = ranges
            .iter()
            .map(|(lo, hi)| rng.random_range(*lo..*hi))
            .collect();
        State::new(v[0], v[1], wrap_angle(v[2]), v[3])
    };
    let mut states = Vec::with_capacity(spec.n_total);
    for _ in 0..n_bulk {
        states.push(draw(&spec.ranges, &mut rng));
    }
    for _ in 0..spec.n_total - n_bulk {
        states.push(draw(&spec.upright_ranges, &mut rng));
    }
    states
}

/// Solve the nominal MPC with sensitivities for each state.
///
/// `workers = Some(1)` forces sequential execution; outputs are identical
/// for any worker count. Fails if fewer than half the samples succeed.
pub fn generate(
    states: &[State],
    theta_nom: CartpoleParams,
    constants: FixedConstants,
    ocp_cfg: OcpConfig,
    solver_cfg: SolverConfig,
    workers: Option<usize>,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    let indexed: Vec<(usize, State)> = states.iter().cloned().enumerate().collect();
    let records = par::map_ordered(workers, &indexed, |(i, x)| {
        solve_record(*x, theta_nom, constants, ocp_cfg, solver_cfg, start_seed(seed, *i as u64))
    });
    let ds = Dataset { records };
    let n = ds.records.len().max(1);
    let rate = 100.0 * (n - ds.skipped_count()) as f64 / n as f64;
    if rate < 50.0 {
        return Err(DatasetError::LowSuccessRate { rate });
    }
    Ok(ds)
}

fn solve_record(
    x: State,
    theta: CartpoleParams,
    constants: FixedConstants,
    ocp_cfg: OcpConfig,
    solver_cfg: SolverConfig,
    seed: u64,
) -> DatasetRecord {
    let nlp = build_nlp(x, theta, constants, ocp_cfg);
    let skipped = |reason| DatasetRecord {
        x,
        u0: 0.0,
        sens: [0.0; THETA_DIM],
        active_set_size: 0,
        skipped: Some(reason),
    };
    let sol = match multistart_solve(&nlp, &solver_cfg, seed) {
        Ok(sol) => sol,
        Err(_) => return skipped(SkipReason::SolveFailed),
    };
    match kkt_sensitivity(&nlp, &sol) {
        Ok(s) => {
            let mut sens = [0.0; THETA_DIM];
            sens.copy_from_slice(&s.du0_dtheta);
            DatasetRecord {
                x,
                u0: sol.z[0].clamp(ocp_cfg.u_min, ocp_cfg.u_max),
                sens,
                active_set_size: sol.active_set.len() as u32,
                skipped: None,
            }
        }
        Err(SensitivityError::WeaklyActive { .. }) => skipped(SkipReason::WeaklyActive),
        Err(SensitivityError::SingularKkt { .. }) => skipped(SkipReason::SingularKkt),
        Err(SensitivityError::Eval(_)) => skipped(SkipReason::SolveFailed),
    }
}

const MAGIC: &[u8; 8] = b"AMPCDS01";
/// 4 state + 1 input + 5 sensitivity f64 values plus a u32 flag word.
pub const RECORD_SIZE: usize = 10 * 8 + 4;
pub const HEADER_SIZE: usize = 8 + 8 + 4;

pub fn save(ds: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let mut buf = Vec::with_capacity(HEADER_SIZE + ds.records.len() * RECORD_SIZE);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(ds.records.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(ds.skipped_count() as u32).to_le_bytes());
    for r in &ds.records {
        for v in [r.x.y, r.x.y_dot, r.x.alpha, r.x.alpha_dot, r.u0] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in r.sens {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let reason = r.skipped.map_or(0, SkipReason::code);
        let flags = reason | (r.active_set_size << 8);
        buf.extend_from_slice(&flags.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Dataset, DatasetError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_SIZE {
        return Err(DatasetError::Truncated);
    }
    if &bytes[..8] != MAGIC {
        return Err(DatasetError::BadMagic);
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let skipped_header = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
    if bytes.len() != HEADER_SIZE + count * RECORD_SIZE {
        return Err(DatasetError::Truncated);
    }
    let mut records = Vec::with_capacity(count);
    let mut off = HEADER_SIZE;
    let mut f64_at = |off: &mut usize| {
        let v = f64::from_le_bytes(bytes[*off..*off + 8].try_into().unwrap());
        *off += 8;
        v
    };
    for _ in 0..count {
        let y = f64_at(&mut off);
        let y_dot = f64_at(&mut off);
        let alpha = f64_at(&mut off);
        let alpha_dot = f64_at(&mut off);
        let u0 = f64_at(&mut off);
        let mut sens = [0.0; THETA_DIM];
        for s in sens.iter_mut() {
            *s = f64_at(&mut off);
        }
        let flags = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        off += 4;
        records.push(DatasetRecord {
            x: State::new(y, y_dot, alpha, alpha_dot),
            u0,
            sens,
            active_set_size: flags >> 8,
            skipped: SkipReason::from_code(flags & 0xff),
        });
    }
    let ds = Dataset { records };
    let actual = ds.skipped_count() as u32;
    if actual != skipped_header {
        return Err(DatasetError::SkipCountMismatch {
            header: skipped_header,
            actual,
        });
    }
    Ok(ds)
}
