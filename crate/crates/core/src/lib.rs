//! Routing of YES/NO/TBD probability distributions through versioned
//! threshold policies, with auditable decision records and the evaluation
//! tooling around them: classwise metrics, calibration, abstention
//! baselines, threshold sweeps, replay and run comparison.

pub mod abstention;
pub mod audit;
pub mod calibration;
pub mod decision;
pub mod error;
pub mod io;
pub mod metrics;
pub mod policy;
pub mod router;
pub mod sweep;
pub mod toydata;

pub use decision::{
    argmax_decision, validate_distribution, AuxScores, CostMatrix, DecisionDistribution, DecisionLabel,
    PredictionRecord,
};
pub use error::{Error, Result};
pub use policy::{load_policy, AuxGate, Comparator, PolicyRegistry, ThresholdPolicy, Thresholds};
pub use router::{route, route_batch, replay, AuditRecord, RoutedDecision, RuleFired};
