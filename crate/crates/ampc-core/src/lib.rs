//! Parameter-adaptive approximate MPC for a cartpole swing-up.
//!
//! The pipeline: transcribe the swing-up MPC into a parametric NLP, solve it
//! to tight KKT tolerances with an SQP method, differentiate the KKT system
//! to get input sensitivities wrt physical parameters, imitate both the
//! optimal inputs and their sensitivities with small feedforward networks,
//! and deploy the adapted policy
//! `u = pi_nn(x) + grad_nn(x) * (theta - theta_nom)` in closed loop.

pub mod config;
pub mod dataset;
pub mod deploy;
pub mod dynamics;
pub mod harness;
pub mod neural;
pub mod ocp;
pub mod par;
pub mod policy;
pub mod sensitivity;
pub mod solver;


pub use dynamics::{CartpoleParams, FixedConstants, State};
pub use ocp::{OcpConfig, ParametricNlp};
pub use solver::{NlpSolution, SolveFailure, SolverConfig};
