use std::collections::BTreeMap;

use feaflow_core::gsm::{AcceptAll, Engine, EventKind, MilestoneStatus, StudyEvent};
use feaflow_core::study::build_fea_workflow;
use feaflow_testkit::guard_oracle;
use feaflow_testkit::random::random_log;
use proptest::prelude::*;

fn fold(log: &[StudyEvent]) -> Vec<(feaflow_core::gsm::StudyState, feaflow_core::gsm::EffectLog)> {
    let def = build_fea_workflow();
    let engine = Engine::new(&def, &AcceptAll);
    let mut state = engine.empty_state();
    let mut out = Vec::new();
    for ev in log {
        let (next, fx) = engine.apply(&state, ev).expect("generated logs are accepted");
        out.push((next.clone(), fx));
        state = next;
    }
    out
}

#[test]
fn random_logs_reach_invalidations() {
    // The property tests below are only meaningful if the generator exercises sentries.
    let def = build_fea_workflow();
    let hit = (0..40).any(|seed| {
        let log = random_log(&def, seed, 120);
        fold(&log).iter().any(|(_, fx)| !fx.invalidated.is_empty())
    });
    assert!(hit);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn replay_is_deterministic(seed in 0u64..10_000, len in 1usize..150) {
        let def = build_fea_workflow();
        let log = random_log(&def, seed, len);
        let engine = Engine::new(&def, &AcceptAll);
        let a = engine.replay(&log).unwrap();
        let b = engine.replay(&log).unwrap();
        prop_assert_eq!(a.to_canonical_json(), b.to_canonical_json());
    }

    #[test]
    fn guard_truth_only_changes_with_reported_effects(seed in 0u64..10_000, len in 1usize..150) {
        let def = build_fea_workflow();
        let engine = Engine::new(&def, &AcceptAll);
        let log = random_log(&def, seed, len);
        let mut before = engine.empty_state();
        for ((after, fx), ev) in fold(&log).into_iter().zip(&log) {
            if fx.is_empty() {
                prop_assert_eq!(engine.guard_table(&before), engine.guard_table(&after), "event {:?}", ev);
            }
            before = after;
        }
    }

    /// Milestone status equals the last achievement or invalidation reported for it, and
    /// achievements only happen when a stage is left.
    #[test]
    fn milestones_follow_the_effect_log(seed in 0u64..10_000, len in 1usize..150) {
        let def = build_fea_workflow();
        let log = random_log(&def, seed, len);
        let mut last: BTreeMap<(String, String), MilestoneStatus> = BTreeMap::new();
        let steps = fold(&log);
        for ((_, fx), ev) in steps.iter().zip(&log) {
            if !fx.achieved.is_empty() {
                prop_assert!(matches!(ev.kind, EventKind::LeaveStage { .. }), "achieved on {:?}", ev);
            }
            // Invalidations cascade within the event, then the stage's own achievements land.
            for m in &fx.invalidated {
                last.insert((m.artifact.clone(), m.milestone.clone()), MilestoneStatus::Invalidated);
            }
            for m in &fx.achieved {
                last.insert((m.artifact.clone(), m.milestone.clone()), MilestoneStatus::Achieved);
            }
        }
        let end = &steps.last().unwrap().0;
        for a in &end.artifacts {
            for (name, m) in &a.milestones {
                let want = last.get(&(a.id.clone(), name.clone())).copied().unwrap_or_default();
                prop_assert_eq!(m.status, want, "{}/{}", a.id, name);
            }
        }
    }

    /// Each milestone is retracted at most once per event.
    #[test]
    fn invalidation_cascades_terminate(seed in 0u64..10_000, len in 1usize..150) {
        let def = build_fea_workflow();
        for (_, fx) in fold(&random_log(&def, seed, len)) {
            let mut seen = std::collections::BTreeSet::new();
            for m in &fx.invalidated {
                prop_assert!(seen.insert((m.artifact.clone(), m.milestone.clone())), "{:?} retracted twice", m);
            }
        }
    }

    /// Log audit: every accepted entry had its guard true in the state before it.
    #[test]
    fn no_stage_is_entered_with_a_false_guard(seed in 0u64..10_000, len in 1usize..150) {
        let def = build_fea_workflow();
        let engine = Engine::new(&def, &AcceptAll);
        let log = random_log(&def, seed, len);
        let mut before = engine.empty_state();
        for ((after, _), ev) in fold(&log).into_iter().zip(&log) {
            if let EventKind::EnterStage { artifact, stage } = &ev.kind {
                prop_assert_eq!(guard_oracle::entry_blocked(&def, &AcceptAll, &before, artifact, stage), None);
            }
            before = after;
        }
    }

    /// The oracle's verdict on every possible entry matches the engine's, at random states.
    #[test]
    fn entry_refusals_match_the_guard_oracle(seed in 0u64..10_000, len in 1usize..120) {
        let def = build_fea_workflow();
        let engine = Engine::new(&def, &AcceptAll);
        let state = engine.replay(&random_log(&def, seed, len)).unwrap();
        for a in &state.artifacts {
            for st in &def.artifact_type(&a.artifact_type).unwrap().stages {
                let accepted = engine.apply(&state, &EventKind::enter(&a.id, &st.name).at(state.next_seq)).is_ok();
                let blocked = guard_oracle::entry_blocked(&def, &AcceptAll, &state, &a.id, &st.name);
                prop_assert_eq!(accepted, blocked.is_none(), "{} {} blocked={:?}", a.id, st.name, blocked);
            }
        }
    }
}
