use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

/// One version of an artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvEntity {
    pub id: String,
    pub artifact: String,
    pub version: u32,
    pub kind: String,
    /// SHA-256 over the canonical attribute and link map of this version.
    pub snapshot: String,
    pub created_at: u64,
    /// Display form of the attribute values, for field queries. Blobs appear by name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fields: BTreeMap<String, String>,
}

/// One completed stage execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvActivity {
    pub id: String,
    pub stage: String,
    pub artifact: String,
    pub started_at: u64,
    pub ended_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub milestones: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Used {
    pub activity: String,
    pub entity: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WasGeneratedBy {
    pub entity: String,
    pub activity: String,
}

/// Append-only provenance graph. Serializes with PROV-DM section names.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceGraph {
    #[serde(rename = "entity")]
    pub entities: Vec<ProvEntity>,
    #[serde(rename = "activity")]
    pub activities: Vec<ProvActivity>,
    pub used: Vec<Used>,
    #[serde(rename = "wasGeneratedBy")]
    pub generated: Vec<WasGeneratedBy>,
}

impl ProvenanceGraph {
    pub fn node_count(&self) -> usize {
        self.entities.len() + self.activities.len()
    }

    pub fn edge_count(&self) -> usize {
        self.used.len() + self.generated.len()
    }

    pub fn entity(&self, id: &str) -> Option<&ProvEntity> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn activity(&self, id: &str) -> Option<&ProvActivity> {
        self.activities.iter().find(|a| a.id == id)
    }

    pub fn latest(&self, artifact: &str) -> Option<&ProvEntity> {
        self.entities.iter().rev().find(|e| e.artifact == artifact)
    }

    pub fn versions(&self, artifact: &str) -> Vec<&ProvEntity> {
        self.entities.iter().filter(|e| e.artifact == artifact).collect()
    }

    pub fn generated_by(&self, activity: &str) -> Vec<&ProvEntity> {
        self.generated
            .iter()
            .filter(|g| g.activity == activity)
            .filter_map(|g| self.entity(&g.entity))
            .collect()
    }

    pub fn used_by(&self, activity: &str) -> Vec<&ProvEntity> {
        self.used
            .iter()
            .filter(|u| u.activity == activity)
            .filter_map(|u| self.entity(&u.entity))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Graphviz rendering: entities as ellipses, activities as boxes.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph provenance {\n  rankdir=LR;\n");
        for e in &self.entities {
            let _ = writeln!(
                out,
                "  \"{}\" [shape=ellipse, label=\"{} v{}\"];",
                e.id, e.artifact, e.version
            );
        }
        for a in &self.activities {
            let label = match &a.outcome {
                Some(o) => format!("{}\\n{} [{o}]", a.stage, a.artifact),
                None => format!("{}\\n{}", a.stage, a.artifact),
            };
            let _ = writeln!(out, "  \"{}\" [shape=box, label=\"{label}\"];", a.id);
        }
        for u in &self.used {
            let _ = writeln!(out, "  \"{}\" -> \"{}\" [label=\"used\"];", u.activity, u.entity);
        }
        for g in &self.generated {
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [label=\"wasGeneratedBy\"];",
                g.entity, g.activity
            );
        }
        out.push_str("}\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_graph_exports_empty_sections() {
        let json = ProvenanceGraph::default().to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["entity", "activity", "used", "wasGeneratedBy"] {
            assert_eq!(v[key], serde_json::json!([]), "{key}");
        }
        assert_eq!(ProvenanceGraph::from_json(&json).unwrap(), ProvenanceGraph::default());
    }
}
