//! Freshness and trust metrics for generative inference pipelines split
//! across mobile, edge and cloud tiers.
//!
//! The crate is organised bottom-up: [`profile`] describes the model and
//! its partitions, [`sim`] runs the discrete-event pipeline, [`age`] turns
//! the event log into age trajectories, [`risk`] summarises peak samples
//! with tail-risk measures and [`optimize`] searches partitions, sampling
//! periods and capacity shares.

pub mod age;
pub mod num;
pub mod optimize;
pub mod profile;
pub mod risk;
pub mod sim;

pub use age::{
    aogi_series, aoii_series, aoli_series, aot_series, generation_records, AgeError, AgeSeries,
    GenerationRecord, Reset,
};
pub use num::Real;
pub use optimize::{
    evaluate, fig5_experiment, optimize_capacity_shares, optimize_partition,
    optimize_verification_period, Decision, EvalReport, Evaluation, Objective, OptimizeError,
};
pub use profile::{
    static_delay, Layer, ModelProfile, Partition, ProfileError, StageCosts, TierCapacities, Tiers,
};
pub use risk::{cvar, evar, log_mgf, var, RiskError, RiskSpec};
pub use sim::{run, EventLog, Record, Scenario, SimError, Stage};

pub type AgeSeriesF64 = AgeSeries<f64>;
pub type AgeSeriesF32 = AgeSeries<f32>;
pub type GenerationRecordF64 = GenerationRecord<f64>;
pub type ModelProfileF64 = ModelProfile<f64>;
pub type ModelProfileF32 = ModelProfile<f32>;
pub type LayerF64 = Layer<f64>;
pub type StageCostsF64 = StageCosts<f64>;
pub type TierCapacitiesF64 = TierCapacities<f64>;
pub type RiskSpecF64 = RiskSpec<f64>;
pub type RiskSpecF32 = RiskSpec<f32>;
