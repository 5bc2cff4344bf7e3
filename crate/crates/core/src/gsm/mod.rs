//! Guard-Stage-Milestone engine: declarative lifecycles applied to an event-sourced study state.

mod definition;
mod engine;
mod error;
mod event;
mod guard;
mod state;
mod validate;
mod value;

pub use definition::{
    ArtifactTypeDef, AttrCondition, AttrKind, AttributeDef, CreateSpec, GuardExpression, LinkDef, MilestoneDefinition,
    Nav, OutcomeSpec, Sentry, SentryTrigger, StageDefinition, WorkflowDefinition,
};
pub use engine::{ActiveStage, Engine, StageStatus, StageView};
pub use error::{EngineError, ErrorFamily};
pub use event::{CompletedExecution, EffectLog, EventKind, GuardChange, MilestoneRef, StudyEvent};
pub use guard::{evaluate_guard, AcceptAll, GuardContext, SpecChecker};
pub use state::{ArtifactInstance, MilestoneState, MilestoneStatus, OpenStage, StudyState};
pub use validate::{validate_definition, DefinitionError};
pub use value::{AttrValue, BlobRef};
