//! Consensus analysis for crowdsourced annotations.
//!
//! * [`model`]: validated tasks, workers, annotations and label spaces.
//! * [`aggregation`]: Majority Vote, pooled Multinomial and Dawid-Skene
//!   consensus.
//! * [`reliability`]: Fleiss' kappa, per-worker error rates and binary
//!   evaluation metrics.
//! * [`prospective`]: synthetic crowds for redundancy planning.
//!
//! The numeric code is generic over [`Scalar`] (and [`Field`] for the
//! counting metrics). The aliases below fix the scalar to `f64`, which is
//! what the file formats and tolerances assume.

pub mod aggregation;
pub mod model;
pub mod prospective;
pub mod reliability;
pub mod scalar;

pub use aggregation::{fit, hard_labels, FitError, ModelKind};
pub use model::{
    validate_dataset, Annotation, Dataset, DependencyRule, LabelSpace, LabelTarget,
    QuestionView, TaskRecord, Triple, ValidationError, WorkerRecord,
};
pub use prospective::{ProspectiveCurve, SimulationError, RNG_ALGORITHM};
pub use reliability::{BinaryCounts, ReliabilityError};
pub use scalar::{Field, Scalar};

pub type EmConfig = aggregation::EmConfig<f64>;
pub type ModelParams = aggregation::ModelParams<f64>;
pub type Confusion = aggregation::Confusion<f64>;
pub type WorkerConfusion = aggregation::WorkerConfusion<f64>;
pub type ConsensusResult = aggregation::ConsensusResult<f64>;
pub type Diagnostics = aggregation::Diagnostics<f64>;
pub type CommunityProfile = prospective::CommunityProfile<f64>;
pub type ConfusionSource = prospective::ConfusionSource<f64>;
pub type KappaReport = reliability::KappaReport<f64>;
pub type EvalReport = reliability::EvalReport<f64>;
pub type WorkerErrorRates = reliability::WorkerErrorRates<f64>;

/// Single-precision variants, for memory-bound simulations.
pub type ConsensusResultF32 = aggregation::ConsensusResult<f32>;
pub type EmConfigF32 = aggregation::EmConfig<f32>;
