//! Attack-resilient simultaneous input and state estimation for linear
//! time-varying stochastic systems with inequality constraints on the state
//! and on the actuator attack.
//!
//! The crate is organised by stage:
//!
//! * [`model`]: system matrices, constraint sets and assumption checks,
//! * [`projection`]: weighted projection onto polyhedra (active-set QP),
//! * [`filter`]: the estimator recursion and its covariance propagation,
//! * [`detector`]: χ² test on the attack estimate,
//! * [`scenario`]: the multi-agent double-integrator benchmark and a
//!   seeded simulator.

pub mod detector;
pub mod error;
pub mod filter;
pub mod linalg;
pub mod model;
pub mod projection;
pub mod scenario;

pub use detector::{chi2_statistic, chi2_threshold, detect, DetectionResult};
pub use error::{Error, Result, Stage};
pub use filter::{
    step, ConstraintProvider, Estimator, FilterOptions, FilterState, StateConstraintPoint,
    StepOutput, TimeUpdateAttack,
};
pub use linalg::{Matrix, Vector};
pub use model::{
    validate_constraints, validate_model, ConstantModel, ConstraintSet, Dims, Inequalities,
    ModelProvider, SequenceModel, SystemStep,
};
pub use projection::{brute_force_project, project, project_covariance, ProjectionResult};
pub use scenario::{AttackSchedule, Scenario, Trajectory};
