use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use feaflow_core::gsm::{
    AcceptAll, AttrKind, AttrValue, Engine, EventKind, StudyEvent, StudyState, WorkflowDefinition,
};
use feaflow_core::study::CONCEPTUAL_MODEL;

use super::macros::{filler, Executor, Naming};

/// A study reached by `steps` random stage executions from a fresh conceptual model,
/// holding at most `cap` artifacts and no open stage. `None` when the walk ends mid-stage.
pub fn random_study(def: &WorkflowDefinition, seed: u64, steps: usize, cap: usize) -> Option<StudyState> {
    let engine = Engine::new(def, &AcceptAll);
    let exec = Executor {
        engine: Engine::new(def, &AcceptAll),
        def,
        naming: Naming::Fresh,
        cap,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = engine
        .apply(
            &engine.empty_state(),
            &EventKind::create(CONCEPTUAL_MODEL, "cmo-1", None).at(0),
        )
        .ok()?
        .0;
    for _ in 0..steps {
        let options: Vec<_> = exec
            .moves(&state)
            .into_iter()
            .filter_map(|m| exec.run(&state, &m))
            .collect();
        let Some(next) = options.choose(&mut rng) else { break };
        state = next.clone();
        // Occasionally stop early so short studies are common too.
        if rng.random_bool(0.05) {
            break;
        }
    }
    state.artifacts.iter().all(|a| a.open.is_empty()).then_some(state)
}

/// An accepted event log of up to `len` events, built by trying random single events
/// (entries, attribute writes, links, creations, leaves with any outcome) and keeping
/// those the engine accepts. Unlike [`random_study`] it revisits finished stages, so
/// invalidations occur.
pub fn random_log(def: &WorkflowDefinition, seed: u64, len: usize) -> Vec<StudyEvent> {
    let engine = Engine::new(def, &AcceptAll);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = EventKind::create(CONCEPTUAL_MODEL, "cmo-1", None).at(0);
    let mut state = engine.apply(&engine.empty_state(), &first).expect("root creation").0;
    let mut log = vec![first];
    while log.len() < len {
        let mut options = candidates(def, &state, &mut rng);
        options.shuffle(&mut rng);
        let Some((next, ev)) = options.into_iter().find_map(|k| {
            let ev = k.at(state.next_seq);
            engine.apply(&state, &ev).ok().map(|(s, _)| (s, ev))
        }) else {
            break;
        };
        state = next;
        log.push(ev);
    }
    log
}

fn candidates(def: &WorkflowDefinition, state: &StudyState, rng: &mut ChaCha8Rng) -> Vec<EventKind> {
    let mut out = Vec::new();
    for a in &state.artifacts {
        let Some(ty) = def.artifact_type(&a.artifact_type) else {
            continue;
        };
        for st in &ty.stages {
            out.push(EventKind::enter(&a.id, &st.name));
        }
        let Some(open) = a.open.last() else { continue };
        let Some(st) = ty.stage(&open.stage) else { continue };
        out.push(EventKind::leave(&a.id, &st.name, None));
        for m in &st.milestones {
            if let Some(o) = &m.outcome {
                out.push(EventKind::leave(&a.id, &st.name, Some(o)));
            }
        }
        for w in &st.writes {
            if let Some(d) = ty.attribute(w) {
                let value = match &d.kind {
                    AttrKind::Enum(values) => AttrValue::text(values.choose(rng).expect("non-empty enum").clone()),
                    k => filler(k),
                };
                out.push(EventKind::set(&a.id, w, value));
            } else if let Some(l) = ty.link(w) {
                for t in state.of_type(&l.target) {
                    out.push(EventKind::link(&a.id, w, &t.id));
                }
            }
        }
        if let Some(c) = &st.creates {
            if let Some(ct) = def.artifact_type(&c.artifact_type) {
                let id = (1..)
                    .map(|n| format!("{}-{n}", ct.abbreviation))
                    .find(|id| state.artifact(id).is_none())
                    .expect("unbounded ids");
                out.push(EventKind::create(&c.artifact_type, &id, Some(&a.id)));
            }
        }
    }
    out
}
