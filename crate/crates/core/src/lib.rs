//! Federated zero-order optimization with l1-sphere randomization.
//!
//! Workers estimate gradients from two function values along a random
//! direction on the l1 sphere and send only the value difference plus one
//! sign bit per coordinate. The crate also provides Monte Carlo checks of
//! the concentration bounds that back the algorithm's high-probability
//! guarantees.

// `!(a > b)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod concentration;
pub mod error;
pub mod estimator;
pub mod fed_sim;
pub mod l1_geometry;
pub mod objectives;
pub mod rng;
pub mod vecops;

pub use concentration::{
    boundary_coverage_experiment, empirical_tail, envelope, moment_check, subgamma_boundary, tail_experiment,
    CoverageResult, EnvelopeKind, IncrementLaw, MartingaleSpec, MomentReport, SubGammaBoundary, TailReport,
    TestFunction,
};
pub use error::{Error, Result};
pub use estimator::{
    grad_estimate, smoothed_grad_mc, smoothed_value_mc, two_point_queries, GradEstimate, McEstimate, McVector,
    SmoothedOracle, Target, WorkerMessage,
};
pub use fed_sim::{
    default_hyperparams, deviation_and_variance_budgets, measure_deviation, run_direct, run_federated,
    run_federated_with, theoretical_regret_bound, EventBudgets, Execution, RegretBound, RoundRecord, RunConfig,
    RunTrace,
};
pub use l1_geometry::{sample_l1_ball, sample_l1_sphere, sample_laplace, sign_vec, FeasibleSet, L1Direction};
pub use objectives::{make_problem, Context, Family, Minimizer, Problem, ProblemSpec};
pub use rng::{RngStream, StreamRng};
