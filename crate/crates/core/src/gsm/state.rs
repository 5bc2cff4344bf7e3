use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::definition::Nav;
use super::value::AttrValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MilestoneStatus {
    #[default]
    NeverAchieved,
    Achieved,
    Invalidated,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MilestoneState {
    pub status: MilestoneStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub achieved_at: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invalidated_at: Option<u64>,
    #[serde(default)]
    pub times_achieved: u32,
}

/// One entry of an artifact's open stage path, outermost first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenStage {
    pub stage: String,
    pub entered_at: u64,
    /// Artifacts created while this stage execution was open.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub created: Vec<String>,
    /// Result keys recorded during this execution.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub results: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactInstance {
    pub id: String,
    pub artifact_type: String,
    pub created_at: u64,
    /// Artifact whose stage execution created this one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<String>,
    /// Set until the creating stage execution is left.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub pending: bool,
    #[serde(default)]
    pub attributes: BTreeMap<String, AttrValue>,
    #[serde(default)]
    pub links: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub milestones: BTreeMap<String, MilestoneState>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub results: BTreeMap<String, AttrValue>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub open: Vec<OpenStage>,
}

impl ArtifactInstance {
    pub fn new(id: &str, artifact_type: &str, seq: u64) -> Self {
        ArtifactInstance {
            id: id.to_string(),
            artifact_type: artifact_type.to_string(),
            created_at: seq,
            owner: None,
            pending: false,
            attributes: BTreeMap::new(),
            links: BTreeMap::new(),
            milestones: BTreeMap::new(),
            results: BTreeMap::new(),
            open: Vec::new(),
        }
    }

    pub fn achieved(&self, milestone: &str) -> bool {
        self.milestones
            .get(milestone)
            .is_some_and(|m| m.status == MilestoneStatus::Achieved)
    }

    pub fn milestone_status(&self, milestone: &str) -> MilestoneStatus {
        self.milestones.get(milestone).map(|m| m.status).unwrap_or_default()
    }

    pub fn attribute(&self, name: &str) -> Option<&AttrValue> {
        self.attributes.get(name)
    }

    pub fn attribute_set(&self, name: &str) -> bool {
        self.attributes.get(name).is_some_and(AttrValue::is_present)
    }

    pub fn text(&self, name: &str) -> Option<&str> {
        self.attributes.get(name).and_then(AttrValue::as_text)
    }

    pub fn linked(&self, link: &str) -> &[String] {
        self.links.get(link).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn deepest_open(&self) -> Option<&OpenStage> {
        self.open.last()
    }

    pub fn is_open(&self, stage: &str) -> bool {
        self.open.iter().any(|o| o.stage == stage)
    }
}

/// Study state folded from an event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyState {
    pub definition: String,
    pub definition_version: String,
    /// Artifacts in creation order.
    pub artifacts: Vec<ArtifactInstance>,
    /// Sequence number the next event must carry.
    pub next_seq: u64,
}

impl StudyState {
    pub fn empty(definition: &str, version: &str) -> Self {
        StudyState {
            definition: definition.to_string(),
            definition_version: version.to_string(),
            artifacts: Vec::new(),
            next_seq: 0,
        }
    }

    pub fn artifact(&self, id: &str) -> Option<&ArtifactInstance> {
        self.artifacts.iter().find(|a| a.id == id)
    }

    pub fn artifact_mut(&mut self, id: &str) -> Option<&mut ArtifactInstance> {
        self.artifacts.iter_mut().find(|a| a.id == id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.artifacts.iter().position(|a| a.id == id)
    }

    pub fn of_type<'a>(&'a self, artifact_type: &'a str) -> impl Iterator<Item = &'a ArtifactInstance> {
        self.artifacts.iter().filter(move |a| a.artifact_type == artifact_type)
    }

    /// Artifacts reached from `from` along `nav`, in link order (forward) or creation order (backward).
    pub fn navigate<'a>(&'a self, from: &ArtifactInstance, nav: &Nav) -> Vec<&'a ArtifactInstance> {
        match nav {
            Nav::Forward(link) => from.linked(link).iter().filter_map(|id| self.artifact(id)).collect(),
            Nav::Backward(link) => self
                .artifacts
                .iter()
                .filter(|a| a.linked(link).contains(&from.id))
                .collect(),
        }
    }

    /// Whether `to` is reachable from `from` by following `path` step by step.
    pub fn reachable(&self, from: &ArtifactInstance, path: &[Nav], to: &str) -> bool {
        let mut frontier: Vec<&ArtifactInstance> = vec![from];
        for nav in path {
            let mut next: Vec<&ArtifactInstance> = Vec::new();
            for a in frontier {
                for b in self.navigate(a, nav) {
                    if !next.iter().any(|n| n.id == b.id) {
                        next.push(b);
                    }
                }
            }
            frontier = next;
        }
        frontier.iter().any(|a| a.id == to)
    }

    /// Last applied sequence number, if any event was applied.
    pub fn position_seq(&self) -> Option<u64> {
        self.next_seq.checked_sub(1)
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("study state serializes")
    }
}
