//! Study operations behind both the HTTP handlers and the CLI's embedded backend.
//! Reads take a [`Session`] snapshot; writes take the [`PersistentStudy`] and persist.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use feaflow_core::experiment::{convergence_schema, fill_schema, FilledSchema};
use feaflow_core::gsm::{ActiveStage, EffectLog, EngineError, StudyEvent, StudyState, WorkflowDefinition};
use feaflow_core::planner::{derive_actions, export_pddl, suggest, Abstraction, Goal, Guidance};
use feaflow_core::provenance::{query, ProvenanceGraph};
use feaflow_core::store::PersistentStudy;
use feaflow_core::study::{GeneratedExperiment, ManualInputs, Session, SessionError};

use crate::api::*;

/// Planning domain of the workflow, derived once per process.
fn abstraction(def: &WorkflowDefinition) -> Arc<Abstraction> {
    static CACHE: OnceLock<std::sync::Mutex<BTreeMap<(String, String), Arc<Abstraction>>>> = OnceLock::new();
    let mut map = CACHE
        .get_or_init(Default::default)
        .lock()
        .expect("abstraction cache poisoned");
    map.entry((def.name.clone(), def.version.clone()))
        .or_insert_with(|| Arc::new(derive_actions(def)))
        .clone()
}

pub fn summary(study: &PersistentStudy) -> StudySummary {
    StudySummary {
        id: study.id().to_string(),
        definition: study.meta().definition.clone(),
        version: study.meta().version.clone(),
        next_seq: study.state().next_seq,
    }
}

fn view_of(id: &str, s: &Session, state: StudyState) -> StateView {
    let engine = s.engine();
    StateView {
        study: id.to_string(),
        next_seq: state.next_seq,
        active_stages: engine.active_stages(&state),
        board: engine.board(&state),
        state,
        plan_cache: BTreeMap::new(),
    }
}

pub fn state_view(id: &str, s: &Session) -> StateView {
    view_of(id, s, s.state().clone())
}

/// State right after event `seq`.
pub fn state_at(study: &PersistentStudy, seq: u64) -> Result<StateView, ApiError> {
    let state = study.state_at(seq)?;
    Ok(view_of(study.id(), study.session(), state))
}

pub fn active(s: &Session) -> Vec<ActiveStage> {
    s.engine().active_stages(s.state())
}

fn goal(q: &PlanQuery) -> Goal {
    Goal {
        milestone: q.goal.clone(),
        artifact: q.artifact.clone(),
    }
}

pub fn guidance(s: &Session, q: &PlanQuery) -> Result<Guidance, ApiError> {
    let def = s.definition();
    Ok(suggest(&abstraction(def), def, s.state(), &goal(q))?)
}

pub fn pddl(s: &Session, q: &PlanQuery) -> Result<PddlExport, ApiError> {
    let def = s.definition();
    let (domain, problem) = export_pddl(&abstraction(def), def, s.state(), &goal(q))?;
    Ok(PddlExport { domain, problem })
}

pub fn provenance(s: &Session, q: &ProvQuery) -> Result<ProvenanceGraph, ApiError> {
    let filter = q.filter()?;
    Ok(if filter.is_empty() {
        s.provenance().clone()
    } else {
        query(s.provenance(), &filter)
    })
}

pub fn fill(s: &Session, exp: &str) -> Result<FilledSchema, ApiError> {
    Ok(fill_schema(s.definition(), &convergence_schema(), s.state(), exp)?)
}

/// Accepted events from `since` on, with their effects.
pub fn changes(s: &Session, since: u64) -> Vec<ChangeMessage> {
    s.events()
        .iter()
        .zip(s.effects())
        .skip(since as usize)
        .map(|(e, fx)| ChangeMessage {
            seq: e.seq,
            event: e.clone(),
            effects: fx.clone(),
        })
        .collect()
}

/// Commit a batch all-or-nothing. `expected` is the writer's view of `next_seq`; explicit
/// sequence numbers on the events must continue from the current one.
pub fn submit(
    study: &mut PersistentStudy,
    expected: Option<u64>,
    events: Vec<EventInput>,
) -> Result<Submitted, ApiError> {
    precheck(study.state(), expected, &events)?;
    let (_, log) = study.apply(|s| commit(s, events))?;
    let (events, effects) = log.into_iter().unzip();
    Ok(Submitted {
        events,
        effects,
        next_seq: study.state().next_seq,
    })
}

/// What [`submit`] would commit, evaluated on a copy of the session.
pub fn dry_run(s: &Session, expected: Option<u64>, events: Vec<EventInput>) -> Result<Submitted, ApiError> {
    precheck(s.state(), expected, &events)?;
    let mut scratch = s.clone();
    let (_, log) = commit(&mut scratch, events)?;
    let (events, effects) = log.into_iter().unzip();
    Ok(Submitted {
        events,
        effects,
        next_seq: scratch.state().next_seq,
    })
}

fn commit(s: &mut Session, events: Vec<EventInput>) -> Result<((), Vec<(StudyEvent, EffectLog)>), SessionError> {
    s.transaction(|tx, _| {
        for e in events {
            tx.submit(e.kind)?;
        }
        Ok(())
    })
}

fn precheck(state: &StudyState, expected: Option<u64>, events: &[EventInput]) -> Result<(), ApiError> {
    let next = state.next_seq;
    if let Some(x) = expected.filter(|x| *x != next) {
        return Err(ApiError::conflict(x, next));
    }
    if events.is_empty() {
        return Err(ApiError::usage("no events submitted"));
    }
    for (i, e) in events.iter().enumerate() {
        let due = next + i as u64;
        if let Some(got) = e.seq.filter(|s| *s != due) {
            return Err(EngineError::SequenceMismatch { expected: due, got }.into());
        }
    }
    Ok(())
}

pub fn generate(
    study: &mut PersistentStudy,
    exp: &str,
    manual: Option<ManualInputs>,
) -> Result<GeneratedExperiment, ApiError> {
    Ok(study.apply(|s| s.generate(exp, manual))?)
}

pub fn run(study: &mut PersistentStudy, exp: &str, req: &RunRequest) -> Result<RunResult, ApiError> {
    if req.assess {
        let (run, outcome) = study.apply(|s| s.assess_model(exp))?;
        Ok(RunResult {
            run,
            outcome: Some(outcome),
        })
    } else {
        let run = study.apply(|s| s.run_experiment(exp, req.source))?;
        Ok(RunResult { run, outcome: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use feaflow_core::gsm::EventKind;
    use feaflow_core::store::StudyStore;

    #[test]
    fn stale_writers_get_a_retryable_conflict() {
        let dir = tempfile::tempdir().unwrap();
        let store = StudyStore::open(dir.path()).unwrap();
        let mut s = store.create(None).unwrap();
        let enter = EventInput::from(EventKind::enter("cmo-1", "Specifying objective"));
        let ok = submit(&mut s, Some(1), vec![enter.clone()]).unwrap();
        assert_eq!(ok.next_seq, 2);
        let err = submit(&mut s, Some(1), vec![enter]).unwrap_err();
        assert_eq!(
            (err.code.as_str(), err.status(), err.retryable),
            ("sequence_conflict", 409, true)
        );
        assert_eq!(s.state().next_seq, 2);
    }

    #[test]
    fn reused_sequence_numbers_change_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let store = StudyStore::open(dir.path()).unwrap();
        let mut s = store.create(None).unwrap();
        let before = s.state().clone();
        let reused = EventInput {
            seq: Some(0),
            kind: EventKind::enter("cmo-1", "Specifying objective"),
        };
        let err = submit(&mut s, None, vec![reused]).unwrap_err();
        assert_eq!(err.code, "sequence_mismatch");
        assert_eq!(*s.state(), before);
    }

    #[test]
    fn a_failing_batch_commits_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let store = StudyStore::open(dir.path()).unwrap();
        let mut s = store.create(None).unwrap();
        let batch = vec![
            EventKind::enter("cmo-1", "Specifying objective").into(),
            EventKind::leave("cmo-1", "Specifying objective", None).into(),
        ];
        let err = submit(&mut s, None, batch).unwrap_err();
        assert_eq!(err.family, Family::Guard);
        assert_eq!(s.state().next_seq, 1);
        let id = s.id().to_string();
        drop(s);
        assert_eq!(store.load(&id).unwrap().state().next_seq, 1);
    }

    #[test]
    fn dry_runs_leave_the_study_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let store = StudyStore::open(dir.path()).unwrap();
        let s = store.create(None).unwrap();
        let ok = dry_run(
            s.session(),
            None,
            vec![EventKind::enter("cmo-1", "Specifying objective").into()],
        )
        .unwrap();
        assert_eq!((ok.events.len(), ok.next_seq), (1, 2));
        let err = dry_run(
            s.session(),
            None,
            vec![EventKind::enter("cmo-1", "Assembling conceptual model").into()],
        )
        .unwrap_err();
        assert_eq!(err.family, Family::Guard);
        assert_eq!(s.state().next_seq, 1);
    }

    #[test]
    fn fresh_study_offers_only_the_objective() {
        let dir = tempfile::tempdir().unwrap();
        let store = StudyStore::open(dir.path()).unwrap();
        let s = store.create(None).unwrap();
        let stages: Vec<_> = active(s.session()).into_iter().map(|a| a.stage).collect();
        assert_eq!(stages, ["Specifying objective"]);
    }
}
