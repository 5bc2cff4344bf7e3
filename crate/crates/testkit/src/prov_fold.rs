//! Provenance graph sizes computed by folding the raw event log, without the engine or the
//! provenance recorder.

use std::collections::BTreeMap;

use feaflow_core::gsm::{EventKind, GuardExpression, Nav, StageDefinition, StudyEvent, WorkflowDefinition};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProvCounts {
    pub entities: usize,
    pub activities: usize,
    pub used: usize,
    pub generated: usize,
}

impl ProvCounts {
    pub fn nodes(&self) -> usize {
        self.entities + self.activities
    }

    pub fn edges(&self) -> usize {
        self.used + self.generated
    }
}

#[derive(Default)]
struct Art {
    ty: String,
    links: BTreeMap<String, Vec<String>>,
    open: Vec<(String, Vec<String>)>,
    recorded: bool,
}

fn paths(stage: &StageDefinition) -> Vec<Vec<Nav>> {
    fn go(g: &GuardExpression, prefix: Vec<Nav>, out: &mut Vec<Vec<Nav>>) {
        match g {
            GuardExpression::LinkedExists { via, condition } | GuardExpression::ForAllLinked { via, condition } => {
                let mut p = prefix;
                p.push(via.clone());
                out.push(p.clone());
                go(condition, p, out);
            }
            GuardExpression::And(xs) | GuardExpression::Or(xs) => xs.iter().for_each(|x| go(x, prefix.clone(), out)),
            GuardExpression::Not(x) => go(x, prefix, out),
            _ => {}
        }
    }
    let mut out = Vec::new();
    go(&stage.guard, Vec::new(), &mut out);
    for m in &stage.milestones {
        go(&m.achieve, Vec::new(), &mut out);
        out.extend(m.sentries.iter().filter_map(|s| s.via.clone()).map(|v| vec![v]));
    }
    out
}

fn step(arts: &BTreeMap<String, Art>, from: &str, nav: &Nav) -> Vec<String> {
    match nav {
        Nav::Forward(l) => arts.get(from).and_then(|a| a.links.get(l)).cloned().unwrap_or_default(),
        Nav::Backward(l) => arts
            .iter()
            .filter(|(_, a)| a.links.get(l).is_some_and(|t| t.iter().any(|x| x == from)))
            .map(|(id, _)| id.clone())
            .collect(),
    }
}

/// Counts for an accepted event log.
pub fn fold(def: &WorkflowDefinition, events: &[StudyEvent]) -> ProvCounts {
    let mut arts: BTreeMap<String, Art> = BTreeMap::new();
    let mut c = ProvCounts::default();
    for ev in events {
        match &ev.kind {
            EventKind::CreateArtifact {
                artifact_type,
                id,
                owner,
            } => {
                arts.insert(
                    id.clone(),
                    Art {
                        ty: artifact_type.clone(),
                        recorded: owner.is_none(),
                        ..Art::default()
                    },
                );
                match owner {
                    None => c.entities += 1,
                    Some(o) => {
                        let o_ty = arts[o].ty.clone();
                        let open_stage = arts[o].open.last().map(|s| s.0.clone()).unwrap_or_default();
                        let link = def
                            .artifact_type(&o_ty)
                            .and_then(|t| t.stage(&open_stage))
                            .and_then(|s| s.creates.as_ref())
                            .map(|cs| cs.link.clone())
                            .unwrap_or_default();
                        let owner = arts.get_mut(o).expect("owner exists");
                        owner.links.entry(link).or_default().push(id.clone());
                        owner.open.last_mut().expect("open stage").1.push(id.clone());
                    }
                }
            }
            EventKind::EnterStage { artifact, stage } => {
                arts.get_mut(artifact)
                    .expect("artifact exists")
                    .open
                    .push((stage.clone(), Vec::new()));
            }
            EventKind::LinkArtifacts { from, link, to } => {
                arts.get_mut(from)
                    .expect("artifact exists")
                    .links
                    .entry(link.clone())
                    .or_default()
                    .push(to.clone());
            }
            EventKind::LeaveStage { artifact, stage, .. } => {
                let ty = arts[artifact].ty.clone();
                let sd = def
                    .artifact_type(&ty)
                    .and_then(|t| t.stage(stage))
                    .expect("stage exists");
                let mut read = vec![artifact.clone()];
                for path in paths(sd) {
                    let mut at = vec![artifact.clone()];
                    for nav in &path {
                        at = at.iter().flat_map(|a| step(&arts, a, nav)).collect();
                    }
                    for a in at {
                        if !read.contains(&a) {
                            read.push(a);
                        }
                    }
                }
                c.activities += 1;
                c.used += read.iter().filter(|id| arts[*id].recorded).count();
                let (_, created) = arts
                    .get_mut(artifact)
                    .expect("artifact exists")
                    .open
                    .pop()
                    .expect("stage open");
                c.generated += 1 + created.len();
                c.entities += 1 + created.len();
                arts.get_mut(artifact).expect("artifact exists").recorded = true;
                for id in created {
                    arts.get_mut(&id).expect("created exists").recorded = true;
                }
            }
            EventKind::SetAttribute { .. } | EventKind::RecordResult { .. } => {}
        }
    }
    c
}
