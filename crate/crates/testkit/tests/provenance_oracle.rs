use std::collections::BTreeMap;

use feaflow_core::gsm::{AcceptAll, Engine, EventKind, StudyEvent};
use feaflow_core::provenance::{build_graph, ProvenanceGraph};
use feaflow_core::study::{build_fea_workflow, ReplayScript, CASE_STUDY_JSONL};
use feaflow_testkit::prov_fold::{fold, ProvCounts};
use feaflow_testkit::random::random_log;
use proptest::prelude::*;

fn graph(events: &[StudyEvent]) -> ProvenanceGraph {
    let def = build_fea_workflow();
    build_graph(&Engine::new(&def, &AcceptAll), events).unwrap().1
}

fn counts(g: &ProvenanceGraph) -> ProvCounts {
    ProvCounts {
        entities: g.entities.len(),
        activities: g.activities.len(),
        used: g.used.len(),
        generated: g.generated.len(),
    }
}

fn case_study_events() -> Vec<StudyEvent> {
    ReplayScript::parse(CASE_STUDY_JSONL)
        .unwrap()
        .events()
        .cloned()
        .collect()
}

/// Golden sizes of the case-study graph, frozen from the fold oracle.
const CASE_STUDY_COUNTS: ProvCounts = ProvCounts {
    entities: 64,
    activities: 47,
    used: 73,
    generated: 63,
};

#[test]
fn case_study_graph_matches_the_fold_and_the_frozen_counts() {
    let events = case_study_events();
    let def = build_fea_workflow();
    assert_eq!(fold(&def, &events), CASE_STUDY_COUNTS);
    assert_eq!(counts(&graph(&events)), CASE_STUDY_COUNTS);
}

fn check_structure(g: &ProvenanceGraph, events: &[StudyEvent]) -> Result<(), TestCaseError> {
    let leaves = events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::LeaveStage { .. }))
        .count();
    prop_assert_eq!(g.activities.len(), leaves);
    for a in &g.activities {
        prop_assert!(g.used.iter().any(|u| u.activity == a.id), "{} uses nothing", a.id);
        prop_assert!(
            g.generated.iter().any(|w| w.activity == a.id),
            "{} generates nothing",
            a.id
        );
    }
    // Versions of an artifact increase from what an activity used to what it generated.
    let version: BTreeMap<&str, (&str, u32)> = g
        .entities
        .iter()
        .map(|e| (e.id.as_str(), (e.artifact.as_str(), e.version)))
        .collect();
    for w in &g.generated {
        let (artifact, v) = version[w.entity.as_str()];
        for u in g.used.iter().filter(|u| u.activity == w.activity) {
            let (used_artifact, uv) = version[u.entity.as_str()];
            if used_artifact == artifact {
                prop_assert!(uv < v, "{} used v{uv} and generated v{v}", artifact);
            }
        }
    }
    // Generation order is acyclic: an activity only uses entities that existed before it.
    let index: BTreeMap<&str, usize> = g
        .activities
        .iter()
        .enumerate()
        .map(|(i, a)| (a.id.as_str(), i))
        .collect();
    let made_by: BTreeMap<&str, usize> = g
        .generated
        .iter()
        .map(|w| (w.entity.as_str(), index[w.activity.as_str()]))
        .collect();
    for u in &g.used {
        if let Some(&maker) = made_by.get(u.entity.as_str()) {
            prop_assert!(
                maker < index[u.activity.as_str()],
                "{} used before it was generated",
                u.entity
            );
        }
    }
    Ok(())
}

#[test]
fn case_study_graph_is_well_formed() {
    let events = case_study_events();
    check_structure(&graph(&events), &events).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn recorder_matches_the_fold(seed in 0u64..10_000, len in 1usize..150) {
        let def = build_fea_workflow();
        let events = random_log(&def, seed, len);
        prop_assert_eq!(counts(&graph(&events)), fold(&def, &events));
    }

    #[test]
    fn graphs_are_well_formed(seed in 0u64..10_000, len in 1usize..150) {
        let def = build_fea_workflow();
        let events = random_log(&def, seed, len);
        check_structure(&graph(&events), &events)?;
    }

    /// Recording never deletes: the graph of a prefix is a prefix of the graph.
    #[test]
    fn growth_is_append_only(seed in 0u64..10_000, len in 2usize..120, cut in 0.0f64..1.0) {
        let def = build_fea_workflow();
        let events = random_log(&def, seed, len);
        let k = ((events.len() as f64) * cut) as usize;
        let (short, full) = (graph(&events[..k]), graph(&events));
        prop_assert_eq!(&full.entities[..short.entities.len()], &short.entities[..]);
        prop_assert_eq!(&full.activities[..short.activities.len()], &short.activities[..]);
        prop_assert_eq!(&full.used[..short.used.len()], &short.used[..]);
        prop_assert_eq!(&full.generated[..short.generated.len()], &short.generated[..]);
    }

    #[test]
    fn export_is_reproducible(seed in 0u64..10_000, len in 1usize..150) {
        let def = build_fea_workflow();
        let events = random_log(&def, seed, len);
        prop_assert_eq!(graph(&events).to_json(), graph(&events).to_json());
        let g = graph(&events);
        prop_assert_eq!(ProvenanceGraph::from_json(&g.to_json()).unwrap(), g);
    }
}
