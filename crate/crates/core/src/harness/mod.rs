//! Loss oracles, experiment pipelines and verification routines.

pub mod oracle;
pub mod pipeline;
pub mod run;
pub mod verify;

pub use oracle::{
    make_loss_oracle, AdversarySpec, DriftParams, LipschitzOracle, LossOracle, DRIFT_PERIOD, DRIFT_STEP,
};
pub use pipeline::{
    discretization, discretize_and_run, run_general, run_on_tree, ContinuousSpace, Discretization,
    DiscretizeReport, GeneralOptions, GeneralReport, LOSS_SCALE,
};
pub use run::{movement_regret, run, run_scaled, RegretBreakdown, RoundRecord, RunTrace};
pub use verify::{
    enumerate_estimator_moments, loglog_slope, marginal_check, mc_movement_check, uniform_switch_probabilities,
    MarginalReport, MomentsReport, MovementReport,
};
