//! Refinement of linear abstractions with input-derivative-aware
//! interfaces: numerics, synthesis of the interface, and simulation of the
//! closed loop against the abstract trajectory.

pub mod casestudy;
pub mod model;
pub mod numerics;
pub mod refine;
pub mod sim;
pub mod synthesis;

pub use model::{
    emit_config, parse_config, validate_pair, AbstractInputPolicy, AbstractLinearSystem, BoxSet, CaseConfig,
    ConcreteLinearSystem, ConfigError, JumpCause, JumpEvent, OperatingEnvelope, PairValidation, Region,
    ScenarioParams, Segment,
};
pub use numerics::{DenseMatrix, NumericsError};
pub use refine::{
    error_vector, in_relation, interface_u, interface_u_checked, jump_admissible, jump_admissible_with, lift_initial,
    omega, vg, JumpCheck, JumpRule, RelationPoint,
};
pub use synthesis::{
    check_assumption, feasibility, input_bound, max_feasible_a1, rbar3_of, solve_pq, solve_sr, synthesize,
    synthesize_m, ConditionRecord, ConditionReport, Feasibility, RefinementGains, SynthesisError,
};
pub use sim::{
    eval_policy, simulate, simulate_batch, verify_trajectory, BatchJob, Scenario, SimError, SimOptions,
    TrajectoryRecord, VerificationReport, VerifyLimits,
};
