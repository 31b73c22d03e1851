//! Monte Carlo toolkit for critical branching random walks: boundary-case
//! offspring laws, generation-by-generation simulation with killing and
//! ceiling pruning, the spine walk, decorated Poisson point processes and
//! estimators for the tails of the normalized partition functions.
//!
//! Every replica draws from streams keyed by `(seed, replica, particle path)`,
//! so results do not depend on the number of worker threads.

pub mod brwsim;
pub mod estimators;
pub mod numerics;
pub mod offspring;
pub mod pointproc;
pub mod replicas;
pub mod spine;

pub use brwsim::{
    simulate, simulate_replica, stopped_line, BrwError, GenerationFrontier, SimConfig, StoppedLine, StoppedLineConfig,
    TrajectoryStats,
};
pub use estimators::{
    chi_estimate, domination_fit, f_theta, independence_trend, laplace_convergence_test, oracle_enumerate,
    rho_estimate, simulate_many, tail_curve, EstimatorError, FThetaEstimate, OracleResult, TailCurve, TailOptions,
};
pub use numerics::{Estimate, KsResult};
pub use offspring::{AffineMap, BoundaryReport, LawKind, OffspringError, OffspringLaw};
pub use pointproc::{DecorationSampler, DpppConfig, PointMeasure, PointProcError};
pub use spine::{SpineError, SpineMode, SpineStepLaw};
