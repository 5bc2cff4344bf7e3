use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::graph::ProvenanceGraph;

/// Conjunction of node criteria; an absent criterion matches everything.
///
/// `kind` is an artifact type for entities or the literal `activity`. `field_contains`
/// only matches entities, `outcome` and `stage` only activities.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_contains: Option<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<String>,
}

impl NodeFilter {
    pub fn is_empty(&self) -> bool {
        *self == NodeFilter::default()
    }

    /// Activities of validation and calibration stages only.
    pub fn validation_activities() -> Self {
        NodeFilter {
            kind: Some("activity".into()),
            stage: Some("Validating".into()),
            ..Default::default()
        }
    }
}

/// Induced subgraph of the matching nodes.
pub fn query(graph: &ProvenanceGraph, filter: &NodeFilter) -> ProvenanceGraph {
    let entity_ok = |e: &super::ProvEntity| {
        filter.kind.as_ref().is_none_or(|k| *k == e.kind)
            && filter.artifact.as_ref().is_none_or(|a| *a == e.artifact)
            && filter
                .field_contains
                .as_ref()
                .is_none_or(|(f, needle)| e.fields.get(f).is_some_and(|v| v.contains(needle.as_str())))
            && filter.outcome.is_none()
            && filter.stage.is_none()
    };
    let activity_ok = |a: &super::ProvActivity| {
        filter.kind.as_ref().is_none_or(|k| k == "activity")
            && filter.artifact.as_ref().is_none_or(|x| *x == a.artifact)
            && filter.outcome.as_ref().is_none_or(|o| a.outcome.as_ref() == Some(o))
            && filter.stage.as_ref().is_none_or(|s| a.stage.starts_with(s.as_str()))
            && filter.field_contains.is_none()
    };
    let entities: BTreeSet<&str> = graph
        .entities
        .iter()
        .filter(|e| entity_ok(e))
        .map(|e| e.id.as_str())
        .collect();
    let activities: BTreeSet<&str> = graph
        .activities
        .iter()
        .filter(|a| activity_ok(a))
        .map(|a| a.id.as_str())
        .collect();
    induced(graph, &entities, &activities)
}

fn induced(graph: &ProvenanceGraph, entities: &BTreeSet<&str>, activities: &BTreeSet<&str>) -> ProvenanceGraph {
    ProvenanceGraph {
        entities: graph
            .entities
            .iter()
            .filter(|e| entities.contains(e.id.as_str()))
            .cloned()
            .collect(),
        activities: graph
            .activities
            .iter()
            .filter(|a| activities.contains(a.id.as_str()))
            .cloned()
            .collect(),
        used: graph
            .used
            .iter()
            .filter(|u| activities.contains(u.activity.as_str()) && entities.contains(u.entity.as_str()))
            .cloned()
            .collect(),
        generated: graph
            .generated
            .iter()
            .filter(|g| activities.contains(g.activity.as_str()) && entities.contains(g.entity.as_str()))
            .cloned()
            .collect(),
    }
}

/// All versions of one artifact together with the activities that generated or used them.
pub fn filter_by_artifact(graph: &ProvenanceGraph, artifact: &str) -> Option<ProvenanceGraph> {
    let entities: BTreeSet<&str> = graph
        .entities
        .iter()
        .filter(|e| e.artifact == artifact)
        .map(|e| e.id.as_str())
        .collect();
    if entities.is_empty() {
        return None;
    }
    let activities: BTreeSet<&str> = graph
        .used
        .iter()
        .filter(|u| entities.contains(u.entity.as_str()))
        .map(|u| u.activity.as_str())
        .chain(
            graph
                .generated
                .iter()
                .filter(|g| entities.contains(g.entity.as_str()))
                .map(|g| g.activity.as_str()),
        )
        .collect();
    Some(induced(graph, &entities, &activities))
}
