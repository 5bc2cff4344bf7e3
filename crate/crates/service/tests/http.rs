use std::io::{BufRead, BufReader};
use std::time::Duration;

use feaflow_core::gsm::{AcceptAll, Engine, EventKind, StudyState};
use feaflow_core::store::StudyStore;
use feaflow_core::study::{build_fea_workflow, ReplayScript, ScriptLine, CASE_STUDY_JSONL};
use feaflow_core::toolbox::digest_of;
use feaflow_service::api::*;
use feaflow_service::BackgroundServer;
use reqwest::blocking::Client;
use serde_json::{json, Value};

struct Harness {
    _dir: tempfile::TempDir,
    server: BackgroundServer,
    http: Client,
}

impl Harness {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let server = start(dir.path());
        Harness {
            _dir: dir,
            server,
            http: Client::builder().timeout(Duration::from_secs(30)).build().unwrap(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.server.url())
    }

    fn get(&self, path: &str) -> (u16, Value) {
        let r = self.http.get(self.url(path)).send().unwrap();
        assert_eq!(r.headers()[VERSION_HEADER], API_VERSION.to_string().as_str());
        (r.status().as_u16(), r.json().unwrap())
    }

    fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        let r = self.http.post(self.url(path)).json(body).send().unwrap();
        (r.status().as_u16(), r.json().unwrap())
    }

    fn create(&self) -> String {
        let (status, body) = self.post("/studies", &json!({}));
        assert_eq!(status, 201, "{body}");
        body["id"].as_str().unwrap().to_string()
    }

    /// Upload the script's blobs and submit its events one by one, up to `limit` events.
    fn replay(&self, id: &str, script: &ReplayScript, limit: usize) {
        let mut n = 0;
        for line in &script.lines {
            match line {
                ScriptLine::Blob { blob } => {
                    let r = self
                        .http
                        .put(self.url(&format!("/blobs/{}", blob.digest)))
                        .body(blob.text.clone())
                        .send()
                        .unwrap();
                    assert_eq!(r.status().as_u16(), 201);
                }
                ScriptLine::Event(ev) if n < limit => {
                    // The store pre-creates the conceptual model.
                    if ev.seq > 0 {
                        let (status, body) =
                            self.post(&format!("/studies/{id}/events"), &serde_json::to_value(ev).unwrap());
                        assert_eq!(status, 200, "event {}: {body}", ev.seq);
                    }
                    n += 1;
                }
                _ => {}
            }
        }
    }
}

fn start(root: &std::path::Path) -> BackgroundServer {
    BackgroundServer::start(StudyStore::open(root).unwrap(), "127.0.0.1:0".parse().unwrap()).unwrap()
}

fn script() -> ReplayScript {
    ReplayScript::parse(CASE_STUDY_JSONL).unwrap()
}

fn fold(script: &ReplayScript, n: usize) -> StudyState {
    let def = build_fea_workflow();
    let events: Vec<_> = script.events().take(n).cloned().collect();
    Engine::new(&def, &AcceptAll).replay(&events).unwrap()
}

#[test]
fn new_studies_start_at_the_objective() {
    let h = Harness::new();
    let a = h.create();
    let b = h.create();
    assert_ne!(a, b);
    let (_, active) = h.get(&format!("/studies/{a}/active-stages"));
    let stages: Vec<&str> = active
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["stage"].as_str().unwrap())
        .collect();
    assert_eq!(stages, ["Specifying objective"]);
    let (status, err) = h.post("/studies", &json!({"definition_version": "99"}));
    assert_eq!((status, err["code"].as_str()), (404, Some("unknown_definition")));
    let (status, err) = h.get("/studies/nope/state");
    assert_eq!((status, err["code"].as_str()), (404, Some("unknown_study")));
}

#[test]
fn guard_violations_name_the_unmet_condition() {
    let h = Harness::new();
    let id = h.create();
    let (status, err) = h.post(
        &format!("/studies/{id}/events"),
        &json!({"event": "enter_stage", "artifact": "cmo-1", "stage": "Assembling conceptual model"}),
    );
    assert_eq!(status, 409);
    assert_eq!(err["family"], "guard");
    assert_eq!(err["code"], "guard_not_satisfied");
    assert!(
        err["detail"]["unmet"].to_string().contains("objective-specified"),
        "{err}"
    );
    let (_, state) = h.get(&format!("/studies/{id}/state"));
    assert_eq!(state["next_seq"], 1);
}

#[test]
fn optimistic_concurrency_and_read_your_writes() {
    let h = Harness::new();
    let id = h.create();
    let enter = json!({"event": "enter_stage", "artifact": "cmo-1", "stage": "Specifying objective"});
    let send = |expected: u64| {
        let r = h
            .http
            .post(h.url(&format!("/studies/{id}/events")))
            .header(EXPECTED_SEQUENCE, expected.to_string())
            .json(&enter)
            .send()
            .unwrap();
        (r.status().as_u16(), r.json::<Value>().unwrap())
    };
    let (status, ok) = send(1);
    assert_eq!(status, 200, "{ok}");
    let (_, state) = h.get(&format!("/studies/{id}/state"));
    assert_eq!(state["next_seq"], 2);
    let (status, err) = send(1);
    assert_eq!(
        (status, err["code"].as_str(), err["retryable"].as_bool()),
        (409, Some("sequence_conflict"), Some(true))
    );
    let (status, err) = h.post(
        &format!("/studies/{id}/events"),
        &json!({"seq": 0, "event": "enter_stage", "artifact": "cmo-1", "stage": "Specifying objective"}),
    );
    assert_eq!((status, err["code"].as_str()), (409, Some("sequence_mismatch")));
}

#[test]
fn state_at_a_sequence_number() {
    let h = Harness::new();
    let id = h.create();
    h.replay(&id, &script(), 40);
    let (_, at0) = h.get(&format!("/studies/{id}/state?at=0"));
    assert_eq!(at0["state"]["artifacts"].as_array().unwrap().len(), 1);
    let (_, at20) = h.get(&format!("/studies/{id}/state?at=20"));
    let got: StudyState = serde_json::from_value(at20["state"].clone()).unwrap();
    assert_eq!(got, fold(&script(), 21));
    let (status, err) = h.get(&format!("/studies/{id}/state?at=40"));
    assert_eq!((status, err["code"].as_str()), (404, Some("unknown_sequence")));
}

#[test]
fn full_replay_matches_the_engine_and_serves_queries() {
    let h = Harness::new();
    let id = h.create();
    let s = script();
    h.replay(&id, &s, usize::MAX);
    let (_, view) = h.get(&format!("/studies/{id}/state"));
    let got: StudyState = serde_json::from_value(view["state"].clone()).unwrap();
    assert_eq!(got, fold(&s, usize::MAX));

    let (_, failed) = h.get(&format!("/studies/{id}/provenance?kind=activity&outcome=fail"));
    assert_eq!(failed["activity"].as_array().unwrap().len(), 1, "{failed}");
    let (_, meshes) = h.get(&format!("/studies/{id}/provenance?field-contains=specification:mesh"));
    assert!(!meshes["entity"].as_array().unwrap().is_empty());
    let (status, err) = h.get(&format!("/studies/{id}/provenance?field-contains=nocolon"));
    assert_eq!((status, err["family"].as_str()), (400, Some("usage")));

    let (status, plan) = h.get(&format!("/studies/{id}/plan?goal=validated-smo"));
    assert_eq!(status, 200);
    assert!(plan["plan"].as_array().unwrap().is_empty(), "already validated: {plan}");
    let (_, view) = h.get(&format!("/studies/{id}/state"));
    assert!(view["plan_cache"]["validated-smo"].is_object());
    let (status, err) = h.get(&format!("/studies/{id}/plan?goal=bogus"));
    assert_eq!((status, err["code"].as_str()), (404, Some("unknown_milestone")));
}

#[test]
fn mid_study_guidance_has_four_suggestions() {
    let h = Harness::new();
    let id = h.create();
    let s = script();
    let prefix = s.prefix_before_step("Step 4").unwrap().len();
    h.replay(&id, &s, prefix);
    let (status, g) = h.get(&format!("/studies/{id}/plan?goal=validated-smo"));
    assert_eq!(status, 200, "{g}");
    assert_eq!(g["suggestions"].as_array().unwrap().len(), 4);
    assert_eq!(g["then"]["stage"], "Validating simulation model");
    let (_, pddl) = h.get(&format!("/studies/{id}/pddl?goal=validated-smo"));
    assert!(pddl["domain"].as_str().unwrap().starts_with("(define (domain"));
}

#[test]
fn blobs_are_content_addressed() {
    let h = Harness::new();
    let body = b"hello blob".to_vec();
    let digest = digest_of(&body);
    let put = |d: &str| {
        h.http
            .put(h.url(&format!("/blobs/{d}")))
            .body(body.clone())
            .send()
            .unwrap()
    };
    assert_eq!(put(&digest).status().as_u16(), 201);
    let wrong = digest_of(b"other");
    let r = put(&wrong);
    assert_eq!(r.status().as_u16(), 422);
    assert_eq!(r.json::<Value>().unwrap()["code"], "digest_mismatch");
    let got = h.http.get(h.url(&format!("/blobs/{digest}"))).send().unwrap();
    assert_eq!(got.bytes().unwrap().to_vec(), body);
    let (status, _) = h.get(&format!("/blobs/{wrong}"));
    assert_eq!(status, 404);
}

fn read_changes(r: reqwest::blocking::Response, n: usize) -> Vec<ChangeMessage> {
    let mut out = Vec::new();
    for line in BufReader::new(r).lines() {
        let line = line.unwrap();
        if let Some(data) = line.strip_prefix("data: ").or_else(|| line.strip_prefix("data:")) {
            out.push(serde_json::from_str(data).unwrap());
            if out.len() == n {
                break;
            }
        }
    }
    out
}

#[test]
fn change_stream_sends_each_commit_once_and_resumes() {
    let h = Harness::new();
    let id = h.create();
    let stream = h
        .http
        .get(h.url(&format!("/studies/{id}/stream?since=1")))
        .send()
        .unwrap();
    assert_eq!(stream.status().as_u16(), 200);
    let events = [
        EventKind::enter("cmo-1", "Specifying objective"),
        EventKind::set("cmo-1", "objective", feaflow_core::gsm::AttrValue::text("x")),
        EventKind::leave("cmo-1", "Specifying objective", None),
    ];
    for e in &events {
        let (status, body) = h.post(
            &format!("/studies/{id}/events"),
            &serde_json::to_value(EventInput::from(e.clone())).unwrap(),
        );
        assert_eq!(status, 200, "{body}");
    }
    let got = read_changes(stream, 3);
    assert_eq!(got.iter().map(|m| m.seq).collect::<Vec<_>>(), [1, 2, 3]);
    assert_eq!(got[2].effects.achieved[0].milestone, "objective-specified");

    let resumed = h
        .http
        .get(h.url(&format!("/studies/{id}/stream")))
        .header("last-event-id", "2")
        .send()
        .unwrap();
    let again = read_changes(resumed, 1);
    assert_eq!(again[0].seq, 3);
}

#[test]
fn restarted_server_recovers_from_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let s = script();
    let id;
    {
        let server = start(dir.path());
        let h = Harness {
            _dir: tempfile::tempdir().unwrap(),
            server,
            http: Client::new(),
        };
        id = h.create();
        h.replay(&id, &s, 90);
    }
    let server = start(dir.path());
    let h = Harness {
        _dir: tempfile::tempdir().unwrap(),
        server,
        http: Client::new(),
    };
    let (_, view) = h.get(&format!("/studies/{id}/state"));
    let got: StudyState = serde_json::from_value(view["state"].clone()).unwrap();
    assert_eq!(got, fold(&s, 90));
}
