//! Request and response bodies of the HTTP API, version [`API_VERSION`]. The CLI uses the
//! same types for its embedded backend, so both front ends emit identical JSON.

use std::collections::BTreeMap;

use feaflow_core::experiment::ExperimentError;
use feaflow_core::gsm::{
    ActiveStage, EffectLog, EngineError, ErrorFamily, EventKind, StageView, StudyEvent, StudyState,
};
use feaflow_core::planner::{Guidance, GuidanceError};
use feaflow_core::provenance::NodeFilter;
use feaflow_core::store::StoreError;
use feaflow_core::study::{ExperimentRun, RunSource, ScriptError, SessionError};
use feaflow_core::toolbox::{BlobError, ToolboxError};
use serde::{Deserialize, Serialize};

pub const API_VERSION: u32 = 1;
/// Response header carrying [`API_VERSION`].
pub const VERSION_HEADER: &str = "x-feaflow-api";
/// Request header for optimistic concurrency: the `next_seq` the writer last saw.
pub const EXPECTED_SEQUENCE: &str = "expected-sequence";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CreateStudy {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub definition_version: Option<String>,
    /// Start without the pre-created conceptual model, e.g. to import a whole event log.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub id: String,
    pub definition: String,
    pub version: String,
    pub next_seq: u64,
}

/// One event to submit; `seq` is optional and, when given, must be the next sequence number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventInput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl From<EventKind> for EventInput {
    fn from(kind: EventKind) -> Self {
        EventInput { seq: None, kind }
    }
}

impl From<StudyEvent> for EventInput {
    fn from(e: StudyEvent) -> Self {
        EventInput {
            seq: Some(e.seq),
            kind: e.kind,
        }
    }
}

/// A single event or a batch committed all-or-nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Submission {
    Batch(Vec<EventInput>),
    One(EventInput),
}

impl Submission {
    pub fn into_events(self) -> Vec<EventInput> {
        match self {
            Submission::Batch(v) => v,
            Submission::One(e) => vec![e],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submitted {
    pub events: Vec<StudyEvent>,
    pub effects: Vec<EffectLog>,
    pub next_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub study: String,
    pub next_seq: u64,
    pub state: StudyState,
    pub active_stages: Vec<ActiveStage>,
    pub board: Vec<StageView>,
    /// Guidance already computed for this sequence number, by goal milestone.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub plan_cache: BTreeMap<String, Guidance>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanQuery {
    pub goal: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<String>,
}

/// Provenance filter in query-string form; `field-contains` is `<field>:<needle>`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ProvQuery {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<String>,
}

impl ProvQuery {
    pub fn filter(&self) -> Result<NodeFilter, ApiError> {
        let field_contains = match &self.field_contains {
            None => None,
            Some(s) => {
                let (f, needle) = s
                    .split_once(':')
                    .ok_or_else(|| ApiError::usage(format!("field-contains must be <field>:<needle>, got {s:?}")))?;
                Some((f.to_string(), needle.to_string()))
            }
        };
        Ok(NodeFilter {
            kind: self.kind.clone(),
            field_contains,
            outcome: self.outcome.clone(),
            stage: self.stage.clone(),
            artifact: self.artifact.clone(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    #[serde(default)]
    pub source: RunSource,
    /// Run inside the owning model's Validating or Calibrating stage and record the verdict.
    #[serde(default)]
    pub assess: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: ExperimentRun,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PddlExport {
    pub domain: String,
    pub problem: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobStored {
    pub digest: String,
    pub size: u64,
}

/// One accepted event on the change stream. Delivery is at-least-once; dedupe on `seq`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeMessage {
    pub seq: u64,
    pub event: StudyEvent,
    pub effects: EffectLog,
}

/// Error families, each with its own HTTP status and CLI exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Usage,
    Guard,
    NotFound,
    Conflict,
    Rule,
    Toolbox,
    Internal,
}

impl Family {
    pub fn status(self) -> u16 {
        match self {
            Family::Usage => 400,
            Family::NotFound => 404,
            Family::Guard | Family::Conflict => 409,
            Family::Rule | Family::Toolbox => 422,
            Family::Internal => 500,
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Family::Internal => 1,
            Family::Usage => 2,
            Family::Guard => 3,
            Family::NotFound => 4,
            Family::Conflict => 5,
            Family::Rule => 6,
            Family::Toolbox => 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub family: Family,
    pub code: String,
    pub message: String,
    /// Structured cause, e.g. the engine error with its unmet guard subtree.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
    #[serde(default)]
    pub retryable: bool,
}

impl ApiError {
    pub fn new(family: Family, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            family,
            code: code.to_string(),
            message: message.into(),
            detail: None,
            retryable: false,
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(Family::Usage, "usage", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(Family::Internal, "internal", message)
    }

    pub fn conflict(expected: u64, actual: u64) -> Self {
        ApiError {
            retryable: true,
            ..Self::new(
                Family::Conflict,
                "sequence_conflict",
                format!("expected next sequence {expected}, study is at {actual}"),
            )
        }
    }

    pub fn status(&self) -> u16 {
        self.family.status()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let family = match e.family() {
            ErrorFamily::NotFound => Family::NotFound,
            ErrorFamily::Conflict => Family::Conflict,
            ErrorFamily::Guard => Family::Guard,
            ErrorFamily::Rule => Family::Rule,
        };
        ApiError {
            detail: serde_json::to_value(&e).ok(),
            retryable: family == Family::Conflict,
            ..ApiError::new(family, e.code(), e.to_string())
        }
    }
}

impl From<ToolboxError> for ApiError {
    fn from(e: ToolboxError) -> Self {
        let code = match &e {
            ToolboxError::Blob(b) => return b.clone().into(),
            ToolboxError::Invalid { .. } => "toolbox_invalid",
            ToolboxError::Missing(_) => "toolbox_missing",
            ToolboxError::Unsupported(_) => "toolbox_unsupported",
            ToolboxError::Solver { .. } => "solver_failure",
        };
        ApiError {
            detail: serde_json::to_value(&e).ok(),
            ..ApiError::new(Family::Toolbox, code, e.to_string())
        }
    }
}

impl From<ExperimentError> for ApiError {
    fn from(e: ExperimentError) -> Self {
        let code = match &e {
            ExperimentError::UnknownExperiment(_) => {
                return ApiError::new(Family::NotFound, "unknown_experiment", e.to_string())
            }
            ExperimentError::BrokenBinding { .. } => "broken_binding",
            ExperimentError::Incomplete(_) => "schema_incomplete",
            ExperimentError::SlotType { .. } => "slot_type",
            ExperimentError::UnsupportedMetric(_) => "unsupported_metric",
            ExperimentError::InvalidPlan(_) => "invalid_plan",
            ExperimentError::ScriptSyntax { .. } => "script_syntax",
        };
        ApiError::new(Family::Rule, code, e.to_string())
    }
}

impl From<BlobError> for ApiError {
    fn from(e: BlobError) -> Self {
        match &e {
            BlobError::NotFound(_) => ApiError::new(Family::NotFound, "blob_not_found", e.to_string()),
            BlobError::Corrupt { .. } => ApiError::new(Family::Internal, "blob_corrupt", e.to_string()),
            BlobError::Io(_) => ApiError::new(Family::Internal, "io", e.to_string()),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Engine(e) => e.into(),
            SessionError::Toolbox(e) => e.into(),
            SessionError::Experiment(e) => e.into(),
            SessionError::Provenance(e) => ApiError::new(Family::Internal, "provenance", e.to_string()),
            SessionError::Usage(m) => ApiError::new(Family::Usage, "usage", m),
        }
    }
}

impl From<ScriptError> for ApiError {
    fn from(e: ScriptError) -> Self {
        match e {
            ScriptError::Rejected { seq, source } => {
                let mut err = ApiError::from(source);
                err.message = format!("event {seq}: {}", err.message);
                err
            }
            ScriptError::Store(b) => b.into(),
            ScriptError::Persist(m) => ApiError::new(Family::Internal, "io", m),
            other => ApiError::new(Family::Usage, "script", other.to_string()),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let family = match &e {
            StoreError::Session(_) | StoreError::Script(_) | StoreError::Blob(_) => {
                return match e {
                    StoreError::Session(s) => s.into(),
                    StoreError::Script(s) => s.into(),
                    StoreError::Blob(b) => b.into(),
                    _ => unreachable!(),
                }
            }
            StoreError::UnknownStudy(_) | StoreError::UnknownDefinition(_) | StoreError::UnknownSequence { .. } => {
                Family::NotFound
            }
            StoreError::Io { .. } | StoreError::Corrupt { .. } => Family::Internal,
        };
        ApiError::new(family, e.code(), e.to_string())
    }
}

impl From<GuidanceError> for ApiError {
    fn from(e: GuidanceError) -> Self {
        let family = match &e {
            GuidanceError::UnknownMilestone(_) | GuidanceError::UnknownArtifact(_) => Family::NotFound,
            GuidanceError::Plan(feaflow_core::planner::PlanError::Unreachable) => Family::Rule,
            GuidanceError::Plan(_) => Family::Internal,
        };
        ApiError::new(family, e.code(), e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use feaflow_core::gsm::GuardExpression;

    #[test]
    fn guard_errors_carry_the_unmet_subtree() {
        let e: ApiError = EngineError::GuardNotSatisfied {
            artifact: "cmo-1".into(),
            stage: "Assembling conceptual model".into(),
            unmet: GuardExpression::MilestoneAchieved("objective-specified".into()),
        }
        .into();
        assert_eq!(e.family, Family::Guard);
        assert_eq!(e.status(), 409);
        assert_eq!(e.family.exit_code(), 3);
        let detail = e.detail.unwrap();
        assert_eq!(detail["error"], "guard_not_satisfied");
        assert!(detail["unmet"].to_string().contains("objective-specified"));
    }

    #[test]
    fn submissions_accept_one_or_many() {
        let one: Submission = serde_json::from_str(r#"{"event":"enter_stage","artifact":"a","stage":"s"}"#).unwrap();
        assert_eq!(one.into_events().len(), 1);
        let many: Submission =
            serde_json::from_str(r#"[{"seq":3,"event":"enter_stage","artifact":"a","stage":"s"}]"#).unwrap();
        assert_eq!(many.into_events()[0].seq, Some(3));
    }

    #[test]
    fn field_contains_needs_a_separator() {
        let q = ProvQuery {
            field_contains: Some("name:Mesh".into()),
            ..Default::default()
        };
        assert_eq!(q.filter().unwrap().field_contains, Some(("name".into(), "Mesh".into())));
        let bad = ProvQuery {
            field_contains: Some("Mesh".into()),
            ..Default::default()
        };
        assert_eq!(bad.filter().unwrap_err().family, Family::Usage);
    }
}
