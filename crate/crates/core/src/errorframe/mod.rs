//! Total-error diagnostics.
//!
//! * [`correct_counts`] / [`misclassify_simulate`]: algorithmic (classification) error,
//! * [`poststrat_weights`] / [`weighted_estimate`]: nonresponse adjustment,
//! * [`agreement_stats`]: agreement between two measurements of the same thing,
//! * [`simulate_funnel`] / [`decompose_errors`]: representation-side errors from
//!   target population down to consenting donors, on synthetic populations.

mod agreement;
mod confusion;
mod funnel;
mod ledger;
mod weights;

use thiserror::Error;

pub use agreement::{
    agreement_stats, categorical_agreement, numeric_agreement, AgreementStats,
    CategoricalAgreement, Measurements, NumericAgreement,
};
pub use confusion::{
    correct_counts, misclassify_simulate, ConfusionMatrix, Correction, CountVector, SimulationMode,
};
pub use funnel::{
    run_replications, simulate_funnel, simulate_replication, FunnelConfig, FunnelResult, GroupSpec,
    OutcomeModel, SamplingDesign, Stage, StageEstimate, StageModel,
};
pub use ledger::{
    decompose_errors, ComponentSummary, ErrorLedger, LedgerComponent, MonteCarloSummary,
};
pub use weights::{
    poststrat_weights, weighted_estimate, Estimate, StratumWeight, WeightMethod, WeightSet,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FrameError {
    #[error("confusion matrix is singular")]
    Singular,
    #[error("dimension mismatch: expected {expected} classes, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid confusion matrix: {0}")]
    InvalidMatrix(String),
    #[error("invalid counts: {0}")]
    InvalidCounts(String),
    #[error("stratum `{0}` has respondents but no frame population")]
    FrameMismatch(String),
    #[error("cannot estimate: {0}")]
    Estimation(String),
    #[error("infeasible design: {0}")]
    Design(String),
    #[error("invalid funnel configuration: {0}")]
    Config(String),
    #[error("no units left at stage {0}")]
    EmptyStage(String),
    #[error("agreement statistics: {0}")]
    Agreement(String),
}
