//! Whether entering a stage must be refused, decided from the state alone.

use std::sync::Arc;

use feaflow_core::gsm::{
    ArtifactInstance, EventKind, GuardExpression, Nav, SpecChecker, StudyState, WorkflowDefinition,
};
use feaflow_core::study::{build_fea_workflow, probe, ReplayScript, Session, CASE_STUDY_JSONL};
use feaflow_core::toolbox::{MemoryBlobs, Toolbox};

fn linked<'s>(state: &'s StudyState, from: &ArtifactInstance, nav: &Nav) -> Vec<&'s ArtifactInstance> {
    match nav {
        Nav::Forward(l) => from
            .links
            .get(l)
            .into_iter()
            .flatten()
            .filter_map(|id| state.artifacts.iter().find(|a| &a.id == id))
            .collect(),
        Nav::Backward(l) => state
            .artifacts
            .iter()
            .filter(|a| a.links.get(l).is_some_and(|t| t.contains(&from.id)))
            .collect(),
    }
}

pub fn holds(state: &StudyState, checker: &dyn SpecChecker, g: &GuardExpression, a: &ArtifactInstance) -> bool {
    match g {
        GuardExpression::True => true,
        GuardExpression::MilestoneAchieved(m) => a.achieved(m),
        GuardExpression::AttributeSet(name) => a.attributes.get(name).is_some_and(|v| v.is_present()),
        GuardExpression::AttributeEquals { attribute, value } => a.text(attribute) == Some(value.as_str()),
        GuardExpression::SyntaxValid(name) => checker.check(a, name).is_ok(),
        GuardExpression::LinkedExists { via, condition } => linked(state, a, via)
            .into_iter()
            .any(|b| holds(state, checker, condition, b)),
        GuardExpression::ForAllLinked { via, condition } => linked(state, a, via)
            .into_iter()
            .all(|b| holds(state, checker, condition, b)),
        // Only meaningful when leaving a creating stage.
        GuardExpression::Created => false,
        GuardExpression::And(xs) => xs.iter().all(|x| holds(state, checker, x, a)),
        GuardExpression::Or(xs) => xs.iter().any(|x| holds(state, checker, x, a)),
        GuardExpression::Not(x) => !holds(state, checker, x, a),
    }
}

/// Expected refusal of `EnterStage(artifact, stage)`: a reason, or `None` when it must pass.
pub fn entry_blocked(
    def: &WorkflowDefinition,
    checker: &dyn SpecChecker,
    state: &StudyState,
    artifact: &str,
    stage: &str,
) -> Option<&'static str> {
    let Some(a) = state.artifacts.iter().find(|x| x.id == artifact) else {
        return Some("unknown artifact");
    };
    if a.pending {
        return Some("pending");
    }
    let Some(s) = def.artifact_type(&a.artifact_type).and_then(|t| t.stage(stage)) else {
        return Some("unknown stage");
    };
    if a.open.iter().any(|o| o.stage == stage) {
        return Some("already open");
    }
    let deepest = a.open.last().map(|o| o.stage.as_str());
    if deepest != s.parent.as_deref() {
        return Some("placement");
    }
    if !holds(state, checker, &s.guard, a) {
        return Some("guard");
    }
    None
}

/// Outcome of comparing engine entry decisions with [`entry_blocked`] over a whole study.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Sweep {
    pub prefixes: usize,
    pub checked: usize,
    pub blocked: usize,
    pub mismatches: Vec<String>,
}

/// Try every stage of every artifact at every prefix of the case study (including the
/// empty one and the full log) in the engine, and compare with the oracle.
pub fn sweep_case_study() -> Sweep {
    let def = Arc::new(build_fea_workflow());
    let script = ReplayScript::parse(CASE_STUDY_JSONL).expect("case study parses");
    let mut session = Session::new(def.clone(), Toolbox::new(Arc::new(MemoryBlobs::new())));
    script.load_blobs(&session).expect("case study blobs");
    let mut sweep = Sweep::default();
    let events: Vec<_> = script.events().cloned().collect();
    for i in 0..=events.len() {
        sweep_state(&def, &session, &mut sweep);
        if let Some(ev) = events.get(i) {
            session.submit_event(ev.clone()).expect("case study event accepted");
        }
    }
    sweep
}

fn sweep_state(def: &WorkflowDefinition, session: &Session, sweep: &mut Sweep) {
    let state = session.state();
    sweep.prefixes += 1;
    for a in &state.artifacts {
        for st in &def.artifact_type(&a.artifact_type).expect("known type").stages {
            let accepted = probe(session, &EventKind::enter(&a.id, &st.name)).is_none();
            let blocked = entry_blocked(def, session.toolbox(), state, &a.id, &st.name);
            sweep.checked += 1;
            if blocked.is_some() {
                sweep.blocked += 1;
            }
            if accepted != blocked.is_none() {
                sweep.mismatches.push(format!(
                    "#{} {} {}: engine accepted={accepted}, oracle {blocked:?}",
                    state.next_seq, a.id, st.name
                ));
            }
        }
    }
}
