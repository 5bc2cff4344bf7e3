use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::definition::GuardExpression;

/// Rejection of an event; a rejected event leaves the state untouched.
#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum EngineError {
    #[error("unknown artifact {0}")]
    UnknownArtifact(String),
    #[error("unknown artifact type {0}")]
    UnknownArtifactType(String),
    #[error("artifact type {artifact_type} has no stage {stage}")]
    UnknownStage { artifact_type: String, stage: String },
    #[error("artifact type {artifact_type} has no attribute {attribute}")]
    UnknownAttribute { artifact_type: String, attribute: String },
    #[error("artifact {0} already exists")]
    DuplicateArtifact(String),
    #[error("expected sequence number {expected}, got {got}")]
    SequenceMismatch { expected: u64, got: u64 },
    #[error("guard of {stage} on {artifact} is not satisfied: {unmet}")]
    GuardNotSatisfied {
        artifact: String,
        stage: String,
        unmet: GuardExpression,
    },
    #[error("stage {stage} is not open on {artifact}")]
    StageNotOpen { artifact: String, stage: String },
    #[error("stage {stage} on {artifact} is blocked: {reason}")]
    StageBlocked {
        artifact: String,
        stage: String,
        reason: String,
    },
    #[error("cannot leave {stage} on {artifact} while {child} is open")]
    ChildStageOpen {
        artifact: String,
        stage: String,
        child: String,
    },
    #[error("no milestone of {stage} on {artifact} is achievable: {unmet}{}", details.iter().map(|d| format!("; {d}")).collect::<String>())]
    AchieveConditionUnmet {
        artifact: String,
        stage: String,
        unmet: GuardExpression,
        details: Vec<String>,
    },
    #[error("stage {stage} does not take an outcome")]
    OutcomeNotAllowed { stage: String },
    #[error("stage {stage} has no outcome {outcome}")]
    UnknownOutcome { stage: String, outcome: String },
    #[error("stage {stage} requires an outcome")]
    MissingOutcome { stage: String },
    #[error("outcome {given} contradicts recorded result {recorded} of {stage}")]
    OutcomeMismatch {
        stage: String,
        given: String,
        recorded: String,
    },
    #[error("link rule violated for {from} -{link}-> {to}: {rule}")]
    LinkRuleViolation {
        from: String,
        link: String,
        to: String,
        rule: String,
    },
    #[error("{name} of {artifact} is not writable by any open stage")]
    NotWritable { artifact: String, name: String },
    #[error("{attribute} of {artifact} requires {requires} to be set first")]
    AttributeOrder {
        artifact: String,
        attribute: String,
        requires: String,
    },
    #[error("{attribute} expects a {expected} value, got {got}")]
    TypeMismatch {
        attribute: String,
        expected: String,
        got: String,
    },
    #[error("cannot create {artifact_type}: {reason}")]
    CreationNotAllowed { artifact_type: String, reason: String },
    #[error("artifact {0} is still being created")]
    ArtifactPending(String),
    #[error("cannot record result on {artifact}: no open stage execution")]
    ResultNotAllowed { artifact: String },
}

impl EngineError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::UnknownArtifact(_) => "unknown_artifact",
            EngineError::UnknownArtifactType(_) => "unknown_artifact_type",
            EngineError::UnknownStage { .. } => "unknown_stage",
            EngineError::UnknownAttribute { .. } => "unknown_attribute",
            EngineError::DuplicateArtifact(_) => "duplicate_artifact",
            EngineError::SequenceMismatch { .. } => "sequence_mismatch",
            EngineError::GuardNotSatisfied { .. } => "guard_not_satisfied",
            EngineError::StageNotOpen { .. } => "stage_not_open",
            EngineError::StageBlocked { .. } => "stage_blocked",
            EngineError::ChildStageOpen { .. } => "child_stage_open",
            EngineError::AchieveConditionUnmet { .. } => "achieve_condition_unmet",
            EngineError::OutcomeNotAllowed { .. } => "outcome_not_allowed",
            EngineError::UnknownOutcome { .. } => "unknown_outcome",
            EngineError::MissingOutcome { .. } => "missing_outcome",
            EngineError::OutcomeMismatch { .. } => "outcome_mismatch",
            EngineError::LinkRuleViolation { .. } => "link_rule_violation",
            EngineError::NotWritable { .. } => "not_writable",
            EngineError::AttributeOrder { .. } => "attribute_order",
            EngineError::TypeMismatch { .. } => "type_mismatch",
            EngineError::CreationNotAllowed { .. } => "creation_not_allowed",
            EngineError::ArtifactPending(_) => "artifact_pending",
            EngineError::ResultNotAllowed { .. } => "result_not_allowed",
        }
    }

    pub fn family(&self) -> ErrorFamily {
        match self {
            EngineError::UnknownArtifact(_)
            | EngineError::UnknownArtifactType(_)
            | EngineError::UnknownStage { .. }
            | EngineError::UnknownAttribute { .. } => ErrorFamily::NotFound,
            EngineError::SequenceMismatch { .. } => ErrorFamily::Conflict,
            EngineError::GuardNotSatisfied { .. }
            | EngineError::StageBlocked { .. }
            | EngineError::AchieveConditionUnmet { .. } => ErrorFamily::Guard,
            _ => ErrorFamily::Rule,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorFamily {
    NotFound,
    Conflict,
    Guard,
    Rule,
}
