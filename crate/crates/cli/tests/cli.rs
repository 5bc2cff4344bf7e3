use std::path::Path;
use std::process::{Command, Output};

use feaflow_core::gsm::WorkflowDefinition;
use feaflow_core::store::StudyStore;
use feaflow_core::study::{build_fea_workflow, ReplayScript, ScriptLine, CASE_STUDY_JSONL};
use feaflow_service::BackgroundServer;
use serde_json::Value;

fn feaflow(store: &Path, server: Option<&str>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_feaflow"));
    cmd.env_remove("FEAFLOW_SERVER")
        .env_remove("FEAFLOW_STORE")
        .arg("--store")
        .arg(store);
    if let Some(url) = server {
        cmd.args(["--server", url]);
    }
    cmd.args(args).output().expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// The case study up to the first line of step 4, as a script file.
fn step_three_prefix(dir: &Path) -> std::path::PathBuf {
    let script = ReplayScript::parse(CASE_STUDY_JSONL).unwrap();
    let cut = script
        .lines
        .iter()
        .position(|l| matches!(l, ScriptLine::Step { step } if step.starts_with("Step 4")))
        .unwrap();
    let prefix = ReplayScript {
        lines: script.lines[..cut].to_vec(),
    };
    let path = dir.join("prefix.jsonl");
    std::fs::write(&path, prefix.to_jsonl()).unwrap();
    path
}

#[test]
fn replayed_case_study_reports_a_validated_model() {
    let dir = tempfile::tempdir().unwrap();
    let report = ok(feaflow(dir.path(), None, &["study", "replay"]));
    assert!(report.contains("Step 4c"), "{report}");
    let status = ok(feaflow(dir.path(), None, &["study", "status"]));
    assert!(
        status.contains("smo-1  Validating simulation model: succeed"),
        "{status}"
    );
}

#[test]
fn fresh_study_only_offers_the_objective() {
    let dir = tempfile::tempdir().unwrap();
    ok(feaflow(dir.path(), None, &["study", "new"]));
    let status = ok(feaflow(dir.path(), None, &["study", "status"]));
    let enterable: Vec<&str> = status.lines().skip_while(|l| *l != "enterable:").skip(1).collect();
    assert_eq!(enterable, ["  cmo-1  Specifying objective"], "{status}");
}

#[test]
fn guard_refusals_exit_with_the_guard_code_and_name_the_unmet_part() {
    let dir = tempfile::tempdir().unwrap();
    ok(feaflow(dir.path(), None, &["study", "new"]));
    let out = feaflow(
        dir.path(),
        None,
        &["stage", "enter", "cmo-1", "Assembling conceptual model"],
    );
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.lines().any(|l| l.starts_with("unmet: ")), "{err}");

    let json = feaflow(
        dir.path(),
        None,
        &["--json", "stage", "enter", "cmo-1", "Assembling conceptual model"],
    );
    assert_eq!(json.status.code(), Some(3));
    let body: Value = serde_json::from_slice(&json.stderr).unwrap();
    assert!(
        body["detail"]["unmet"].is_object() || body["detail"]["unmet"].is_string(),
        "{body}"
    );
}

#[test]
fn usage_and_lookup_errors_have_their_own_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(feaflow(dir.path(), None, &["stage", "bogus"]).status.code(), Some(2));
    assert_eq!(
        feaflow(dir.path(), None, &["--study", "s-missing", "study", "status"])
            .status
            .code(),
        Some(4)
    );
    ok(feaflow(dir.path(), None, &["study", "new"]));
    let leave = feaflow(dir.path(), None, &["stage", "leave", "cmo-1", "Specifying objective"]);
    assert_eq!(
        leave.status.code(),
        Some(6),
        "{}",
        String::from_utf8_lossy(&leave.stderr)
    );
}

#[test]
fn step_three_prefix_gets_four_suggestions() {
    let dir = tempfile::tempdir().unwrap();
    let script = step_three_prefix(dir.path());
    ok(feaflow(
        dir.path(),
        None,
        &["study", "replay", script.to_str().unwrap()],
    ));
    let out: Value = serde_json::from_str(&ok(feaflow(
        dir.path(),
        None,
        &["--json", "suggest", "--goal", "validated-smo"],
    )))
    .unwrap();
    assert_eq!(out["suggestions"].as_array().unwrap().len(), 4, "{out}");
    assert_eq!(out["then"]["stage"], "Validating simulation model");
}

#[test]
fn exported_definition_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let json = ok(feaflow(dir.path(), None, &["def", "export"]));
    let def: WorkflowDefinition = serde_json::from_str(&json).unwrap();
    assert_eq!(def, build_fea_workflow());
    let yaml = ok(feaflow(dir.path(), None, &["def", "export", "--format", "yaml"]));
    assert!(yaml.contains("ConceptualModel"));
}

#[test]
fn local_and_remote_replays_agree() {
    let local = tempfile::tempdir().unwrap();
    let served = tempfile::tempdir().unwrap();
    let client = tempfile::tempdir().unwrap();
    let server =
        BackgroundServer::start(StudyStore::open(served.path()).unwrap(), "127.0.0.1:0".parse().unwrap()).unwrap();
    let url = server.url();

    ok(feaflow(local.path(), None, &["study", "replay"]));
    ok(feaflow(client.path(), Some(&url), &["study", "replay"]));

    for args in [
        &["--json", "study", "watch"][..],
        &["prov", "export"],
        &["prov", "export", "--format", "dot"],
        &["--json", "suggest", "--goal", "validated-smo", "--artifact", "smo-1"],
        &["study", "status", "--at", "60"],
    ] {
        // Study ids are random; the status header is the only place they show up here.
        let strip = |s: String| {
            s.lines()
                .filter(|l| !l.starts_with("study s-"))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let a = strip(ok(feaflow(local.path(), None, args)));
        let b = strip(ok(feaflow(client.path(), Some(&url), args)));
        assert!(!a.is_empty());
        assert_eq!(a, b, "{args:?}");
    }
}
