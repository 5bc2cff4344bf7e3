use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::graph::{ProvActivity, ProvEntity, ProvenanceGraph, Used, WasGeneratedBy};
use crate::gsm::{
    ArtifactInstance, AttrValue, EffectLog, Engine, EngineError, EventKind, GuardExpression, Nav, StageDefinition,
    StudyEvent, StudyState, WorkflowDefinition,
};

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum ProvError {
    #[error("no transformation rule for stage {stage} of {artifact_type}")]
    RuleMissing { artifact_type: String, stage: String },
    #[error("artifact {0} has no entity version to use")]
    NoEntity(String),
    #[error("event {seq} rejected during provenance replay: {error}")]
    Replay { seq: u64, error: EngineError },
}

/// Digest of an artifact's information model: attributes and links, canonical JSON.
pub fn snapshot_digest(a: &ArtifactInstance) -> String {
    let canonical = serde_json::to_vec(&(&a.attributes, &a.links)).expect("attributes serialize");
    hex::encode(Sha256::digest(&canonical))
}

/// Navigation paths a stage reads: guard and achieve conditions, plus sentry sources.
pub fn reads_of(stage: &StageDefinition) -> Vec<Vec<Nav>> {
    fn walk(expr: &GuardExpression, prefix: &[Nav], out: &mut Vec<Vec<Nav>>) {
        match expr {
            GuardExpression::LinkedExists { via, condition } | GuardExpression::ForAllLinked { via, condition } => {
                let mut path = prefix.to_vec();
                path.push(via.clone());
                if !out.contains(&path) {
                    out.push(path.clone());
                }
                walk(condition, &path, out);
            }
            GuardExpression::And(parts) | GuardExpression::Or(parts) => {
                for p in parts {
                    walk(p, prefix, out);
                }
            }
            GuardExpression::Not(inner) => walk(inner, prefix, out),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(&stage.guard, &[], &mut out);
    for m in &stage.milestones {
        walk(&m.achieve, &[], &mut out);
        for s in &m.sentries {
            if let Some(via) = &s.via {
                let path = vec![via.clone()];
                if !out.contains(&path) {
                    out.push(path);
                }
            }
        }
    }
    out
}

fn fields_of(a: &ArtifactInstance) -> BTreeMap<String, String> {
    a.attributes
        .iter()
        .map(|(k, v)| {
            let shown = match v {
                AttrValue::Blob(b) => b.name.clone(),
                other => other.to_string(),
            };
            (k.clone(), shown)
        })
        .collect()
}

fn new_version(graph: &mut ProvenanceGraph, a: &ArtifactInstance, seq: u64) -> String {
    let version = graph.latest(&a.id).map_or(1, |e| e.version + 1);
    let id = format!("{}@v{version}", a.id);
    graph.entities.push(ProvEntity {
        id: id.clone(),
        artifact: a.id.clone(),
        version,
        kind: a.artifact_type.clone(),
        snapshot: snapshot_digest(a),
        created_at: seq,
        fields: fields_of(a),
    });
    id
}

/// Extend the graph with the consequences of one applied event.
///
/// Root artifacts enter as version 1 without a generating activity. A completed stage
/// execution becomes one activity that uses the current versions of the executing
/// artifact and everything the stage reads, and generates a new version of the
/// executing artifact plus version 1 of every artifact it created.
pub fn record(
    graph: &mut ProvenanceGraph,
    def: &WorkflowDefinition,
    before: &StudyState,
    event: &StudyEvent,
    after: &StudyState,
    effects: &EffectLog,
) -> Result<(), ProvError> {
    if let EventKind::CreateArtifact { id, owner: None, .. } = &event.kind {
        let a = after.artifact(id).ok_or_else(|| ProvError::NoEntity(id.clone()))?;
        new_version(graph, a, event.seq);
    }
    let Some(done) = &effects.completed else {
        return Ok(());
    };
    let subject = before
        .artifact(&done.artifact)
        .ok_or_else(|| ProvError::NoEntity(done.artifact.clone()))?;
    let stage = def
        .artifact_type(&subject.artifact_type)
        .and_then(|t| t.stage(&done.stage))
        .ok_or_else(|| ProvError::RuleMissing {
            artifact_type: subject.artifact_type.clone(),
            stage: done.stage.clone(),
        })?;

    let mut read_ids: Vec<String> = vec![subject.id.clone()];
    for path in reads_of(stage) {
        let mut at = vec![subject];
        for nav in &path {
            at = at.iter().flat_map(|a| before.navigate(a, nav)).collect();
        }
        for a in at {
            if !read_ids.contains(&a.id) {
                read_ids.push(a.id.clone());
            }
        }
    }
    let used: Vec<String> = read_ids
        .iter()
        .filter_map(|id| graph.latest(id).map(|e| e.id.clone()))
        .collect();
    if used.is_empty() {
        return Err(ProvError::NoEntity(subject.id.clone()));
    }

    let activity = format!("act-{}", graph.activities.len() + 1);
    graph.activities.push(ProvActivity {
        id: activity.clone(),
        stage: done.stage.clone(),
        artifact: done.artifact.clone(),
        started_at: done.started_at,
        ended_at: done.ended_at,
        outcome: done.outcome.clone(),
        milestones: done.milestones.clone(),
    });
    for entity in used {
        graph.used.push(Used {
            activity: activity.clone(),
            entity,
        });
    }
    let mut generated = Vec::new();
    let subject_after = after.artifact(&done.artifact).expect("executing artifact persists");
    generated.push(new_version(graph, subject_after, event.seq));
    for id in &done.created {
        let created = after.artifact(id).ok_or_else(|| ProvError::NoEntity(id.clone()))?;
        generated.push(new_version(graph, created, event.seq));
    }
    for entity in generated {
        graph.generated.push(WasGeneratedBy {
            entity,
            activity: activity.clone(),
        });
    }
    Ok(())
}

/// Replay an event log and collect its provenance.
pub fn build_graph(engine: &Engine, events: &[StudyEvent]) -> Result<(StudyState, ProvenanceGraph), ProvError> {
    let mut state = engine.empty_state();
    let mut graph = ProvenanceGraph::default();
    for ev in events {
        let (next, effects) = engine
            .apply(&state, ev)
            .map_err(|error| ProvError::Replay { seq: ev.seq, error })?;
        record(&mut graph, engine.definition(), &state, ev, &next, &effects)?;
        state = next;
    }
    Ok((state, graph))
}
