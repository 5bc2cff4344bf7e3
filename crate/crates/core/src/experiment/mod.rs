//! Experiment schemas: named input slots bound to study artifacts, and the convergence
//! study generator built on them.

mod plan;
mod run;
mod schema;

use thiserror::Error;

pub use plan::{generate_convergence, ConvergencePlan, SUCCESSIVE_DIFFERENCE};
pub use run::{run_convergence, ConvergenceResult, ConvergenceRow, Termination};
pub use schema::*;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error("unknown simulation experiment {0}")]
    UnknownExperiment(String),
    #[error("slot {slot}: broken binding ({reason})")]
    BrokenBinding { slot: String, reason: String },
    #[error("schema is missing {}", .0.join(", "))]
    Incomplete(Vec<String>),
    #[error("slot {slot} holds a {found} value")]
    SlotType { slot: String, found: String },
    #[error("unsupported error metric {0:?}")]
    UnsupportedMetric(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("script line {line}: {reason}")]
    ScriptSyntax { line: usize, reason: String },
}
