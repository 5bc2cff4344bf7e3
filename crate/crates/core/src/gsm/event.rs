use serde::{Deserialize, Serialize};

use super::value::AttrValue;

/// One externally submitted change to a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    CreateArtifact {
        artifact_type: String,
        id: String,
        /// Artifact whose open creating stage produces this one; absent for root artifacts.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        owner: Option<String>,
    },
    EnterStage {
        artifact: String,
        stage: String,
    },
    SetAttribute {
        artifact: String,
        name: String,
        value: AttrValue,
    },
    LinkArtifacts {
        from: String,
        link: String,
        to: String,
    },
    LeaveStage {
        artifact: String,
        stage: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        outcome: Option<String>,
    },
    RecordResult {
        artifact: String,
        key: String,
        value: AttrValue,
    },
}

impl EventKind {
    pub fn at(self, seq: u64) -> StudyEvent {
        StudyEvent { seq, kind: self }
    }

    pub fn create(artifact_type: &str, id: &str, owner: Option<&str>) -> Self {
        EventKind::CreateArtifact {
            artifact_type: artifact_type.to_string(),
            id: id.to_string(),
            owner: owner.map(str::to_string),
        }
    }

    pub fn enter(artifact: &str, stage: &str) -> Self {
        EventKind::EnterStage {
            artifact: artifact.to_string(),
            stage: stage.to_string(),
        }
    }

    pub fn leave(artifact: &str, stage: &str, outcome: Option<&str>) -> Self {
        EventKind::LeaveStage {
            artifact: artifact.to_string(),
            stage: stage.to_string(),
            outcome: outcome.map(str::to_string),
        }
    }

    pub fn set(artifact: &str, name: &str, value: AttrValue) -> Self {
        EventKind::SetAttribute {
            artifact: artifact.to_string(),
            name: name.to_string(),
            value,
        }
    }

    pub fn link(from: &str, link: &str, to: &str) -> Self {
        EventKind::LinkArtifacts {
            from: from.to_string(),
            link: link.to_string(),
            to: to.to_string(),
        }
    }

    pub fn result(artifact: &str, key: &str, value: AttrValue) -> Self {
        EventKind::RecordResult {
            artifact: artifact.to_string(),
            key: key.to_string(),
            value,
        }
    }

    /// Artifact the event is addressed to.
    pub fn subject(&self) -> &str {
        match self {
            EventKind::CreateArtifact { id, .. } => id,
            EventKind::EnterStage { artifact, .. }
            | EventKind::SetAttribute { artifact, .. }
            | EventKind::LeaveStage { artifact, .. }
            | EventKind::RecordResult { artifact, .. } => artifact,
            EventKind::LinkArtifacts { from, .. } => from,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MilestoneRef {
    pub artifact: String,
    pub milestone: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardChange {
    pub artifact: String,
    pub stage: String,
    pub enabled: bool,
}

/// A stage execution closed by a LeaveStage event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletedExecution {
    pub artifact: String,
    pub stage: String,
    pub started_at: u64,
    pub ended_at: u64,
    pub milestones: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub created: Vec<String>,
}

/// Observable consequences of applying one event.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EffectLog {
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub achieved: Vec<MilestoneRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub invalidated: Vec<MilestoneRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub guard_changes: Vec<GuardChange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completed: Option<CompletedExecution>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub created: Vec<String>,
}

impl EffectLog {
    pub fn is_empty(&self) -> bool {
        self.achieved.is_empty()
            && self.invalidated.is_empty()
            && self.guard_changes.is_empty()
            && self.completed.is_none()
            && self.created.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn events_serialize_flat_with_tag() {
        let ev = EventKind::enter("cmo", "Specifying objective").at(1);
        let json = serde_json::to_string(&ev).unwrap();
        assert_eq!(
            json,
            r#"{"seq":1,"event":"enter_stage","artifact":"cmo","stage":"Specifying objective"}"#
        );
        let back: StudyEvent = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ev);
    }

    #[test]
    fn typed_values_round_trip() {
        let ev = EventKind::set("inp1", "specification", AttrValue::quantity(22.0, "mm")).at(7);
        let json = serde_json::to_string(&ev).unwrap();
        let back: StudyEvent = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ev);
    }
}
