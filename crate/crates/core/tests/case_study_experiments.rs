use std::sync::Arc;
use std::time::Instant;

use feaflow_core::experiment::*;
use feaflow_core::parallel::Exec;
use feaflow_core::study::{build_fea_workflow, ManualInputs, ReplayScript, Session, CASE_STUDY_JSONL, INITIAL_MESH};
use feaflow_core::toolbox::{MemoryBlobs, Toolbox};

fn validated_study() -> Session {
    let mut s = Session::new(
        Arc::new(build_fea_workflow()),
        Toolbox::new(Arc::new(MemoryBlobs::new())),
    );
    let report = ReplayScript::parse(CASE_STUDY_JSONL)
        .unwrap()
        .replay_into(&mut s)
        .unwrap();
    assert!(report.passed(), "{:?}", report.failures);
    s
}

#[test]
fn only_the_meshing_inputs_need_the_modeler() {
    let s = validated_study();
    let filled = fill_schema(s.definition(), &convergence_schema(), s.state(), "exp-1").unwrap();
    assert_eq!(filled.missing, [SLOT_MAX_ITERATIONS, SLOT_MAX_SIZE, SLOT_MIN_SIZE]);
    for b in filled.values.values() {
        assert!(matches!(b.source, SlotSource::Artifact { .. }), "{b:?}");
    }
}

#[test]
fn generated_convergence_study_halves_sizes_and_settles() {
    let mut s = validated_study();
    let manual = ManualInputs {
        iterations: 7,
        max_size: INITIAL_MESH.0,
        min_size: INITIAL_MESH.1,
    };
    let generated = s.generate("exp-1", Some(manual)).unwrap();
    assert_eq!(
        generated.plan.manual,
        [SLOT_MAX_ITERATIONS, SLOT_MAX_SIZE, SLOT_MIN_SIZE]
    );
    assert_eq!(
        ConvergencePlan::parse_script(&generated.script).unwrap(),
        generated.plan
    );

    let plan = generated.plan.without_threshold();
    let problem = s.toolbox().load_model(s.state(), "smo-1").unwrap();
    let t = Instant::now();
    let result = run_convergence(&plan, &problem, Exec::Parallel).unwrap();
    eprintln!("{:?} for {} rows", t.elapsed(), result.rows.len());
    assert_eq!(result.terminated_by, Termination::Iterations);
    assert_eq!(result.rows.len(), 6);
    for (k, row) in result.rows.iter().enumerate() {
        assert_eq!((row.max_size, row.min_size), plan.sizes(k + 1));
    }
    for w in result.rows.windows(2) {
        assert!(w[1].error <= w[0].error, "{:?}", result.rows);
    }
    assert_eq!(ConvergenceResult::rows_from_csv(&result.to_csv()).unwrap(), result.rows);
}
