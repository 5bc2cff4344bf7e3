//! Where commands go: an embedded store in a directory, or a running service.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::time::Duration;

use feaflow_core::experiment::FilledSchema;
use feaflow_core::gsm::WorkflowDefinition;
use feaflow_core::planner::Guidance;
use feaflow_core::provenance::ProvenanceGraph;
use feaflow_core::store::{PersistentStudy, StudyStore};
use feaflow_core::study::{GeneratedExperiment, ManualInputs};
use feaflow_core::toolbox::BlobStore;
use feaflow_service::api::*;
use feaflow_service::ops;
use reqwest::blocking::{Client, RequestBuilder, Response};
use serde::de::DeserializeOwned;

pub trait Backend {
    fn create(&mut self, req: &CreateStudy) -> Result<StudySummary, ApiError>;
    fn list(&mut self) -> Result<Vec<String>, ApiError>;
    fn state(&mut self, id: &str, at: Option<u64>) -> Result<StateView, ApiError>;
    fn submit(&mut self, id: &str, events: Vec<EventInput>, dry_run: bool) -> Result<Submitted, ApiError>;
    fn put_blob(&mut self, bytes: &[u8]) -> Result<BlobStored, ApiError>;
    fn plan(&mut self, id: &str, q: &PlanQuery) -> Result<Guidance, ApiError>;
    fn pddl(&mut self, id: &str, q: &PlanQuery) -> Result<PddlExport, ApiError>;
    fn provenance(&mut self, id: &str, q: &ProvQuery) -> Result<ProvenanceGraph, ApiError>;
    fn fill(&mut self, id: &str, exp: &str) -> Result<FilledSchema, ApiError>;
    fn generate(&mut self, id: &str, exp: &str, manual: Option<ManualInputs>) -> Result<GeneratedExperiment, ApiError>;
    fn run(&mut self, id: &str, exp: &str, req: &RunRequest) -> Result<RunResult, ApiError>;
    fn definition(&mut self, version: &str) -> Result<WorkflowDefinition, ApiError>;
    /// Feed accepted changes from `since` on to `sink` until it returns false. Without
    /// `follow`, stops at the current end of the log.
    fn changes(
        &mut self,
        id: &str,
        since: u64,
        follow: bool,
        sink: &mut dyn FnMut(ChangeMessage) -> bool,
    ) -> Result<(), ApiError>;
}

pub struct Local {
    store: StudyStore,
    open: HashMap<String, PersistentStudy>,
}

impl Local {
    pub fn new(store: StudyStore) -> Self {
        Local {
            store,
            open: HashMap::new(),
        }
    }

    fn study(&mut self, id: &str) -> Result<&mut PersistentStudy, ApiError> {
        if !self.open.contains_key(id) {
            let s = self.store.load(id)?;
            self.open.insert(id.to_string(), s);
        }
        Ok(self.open.get_mut(id).expect("just inserted"))
    }
}

impl Backend for Local {
    fn create(&mut self, req: &CreateStudy) -> Result<StudySummary, ApiError> {
        let version = req.definition_version.as_deref();
        let s = if req.empty {
            self.store.create_empty(version)?
        } else {
            self.store.create(version)?
        };
        let summary = ops::summary(&s);
        self.open.insert(summary.id.clone(), s);
        Ok(summary)
    }

    fn list(&mut self) -> Result<Vec<String>, ApiError> {
        Ok(self.store.list()?)
    }

    fn state(&mut self, id: &str, at: Option<u64>) -> Result<StateView, ApiError> {
        let s = self.study(id)?;
        match at {
            Some(seq) => ops::state_at(s, seq),
            None => Ok(ops::state_view(id, s.session())),
        }
    }

    fn submit(&mut self, id: &str, events: Vec<EventInput>, dry_run: bool) -> Result<Submitted, ApiError> {
        let s = self.study(id)?;
        if dry_run {
            ops::dry_run(s.session(), None, events)
        } else {
            ops::submit(s, None, events)
        }
    }

    fn put_blob(&mut self, bytes: &[u8]) -> Result<BlobStored, ApiError> {
        let digest = self.store.shared_blobs()?.put_bytes(bytes)?;
        Ok(BlobStored {
            digest,
            size: bytes.len() as u64,
        })
    }

    fn plan(&mut self, id: &str, q: &PlanQuery) -> Result<Guidance, ApiError> {
        ops::guidance(self.study(id)?.session(), q)
    }

    fn pddl(&mut self, id: &str, q: &PlanQuery) -> Result<PddlExport, ApiError> {
        ops::pddl(self.study(id)?.session(), q)
    }

    fn provenance(&mut self, id: &str, q: &ProvQuery) -> Result<ProvenanceGraph, ApiError> {
        ops::provenance(self.study(id)?.session(), q)
    }

    fn fill(&mut self, id: &str, exp: &str) -> Result<FilledSchema, ApiError> {
        ops::fill(self.study(id)?.session(), exp)
    }

    fn generate(&mut self, id: &str, exp: &str, manual: Option<ManualInputs>) -> Result<GeneratedExperiment, ApiError> {
        ops::generate(self.study(id)?, exp, manual)
    }

    fn run(&mut self, id: &str, exp: &str, req: &RunRequest) -> Result<RunResult, ApiError> {
        ops::run(self.study(id)?, exp, req)
    }

    fn definition(&mut self, version: &str) -> Result<WorkflowDefinition, ApiError> {
        Ok(self.store.definition(version)?.as_ref().clone())
    }

    fn changes(
        &mut self,
        id: &str,
        since: u64,
        follow: bool,
        sink: &mut dyn FnMut(ChangeMessage) -> bool,
    ) -> Result<(), ApiError> {
        let mut next = since;
        loop {
            // Another process may be appending; reload to see its commits.
            self.open.remove(id);
            let batch = ops::changes(self.study(id)?.session(), next);
            for m in batch {
                next = m.seq + 1;
                if !sink(m) {
                    return Ok(());
                }
            }
            if !follow {
                return Ok(());
            }
            std::thread::sleep(Duration::from_millis(250));
        }
    }
}

pub struct Remote {
    base: String,
    http: Client,
}

impl Remote {
    pub fn new(base: &str) -> Result<Self, ApiError> {
        let http = Client::builder()
            .timeout(None)
            .build()
            .map_err(|e| ApiError::internal(format!("http client: {e}")))?;
        Ok(Remote {
            base: base.trim_end_matches('/').to_string(),
            http,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn send(&self, req: RequestBuilder) -> Result<Response, ApiError> {
        let r = req.send().map_err(unreachable_server)?;
        if r.status().is_success() {
            return Ok(r);
        }
        let status = r.status();
        let body = r.text().unwrap_or_default();
        Err(serde_json::from_str(&body)
            .unwrap_or_else(|_| ApiError::internal(format!("server answered {status}: {body}"))))
    }

    fn call<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T, ApiError> {
        self.send(req)?
            .json()
            .map_err(|e| ApiError::internal(format!("unreadable response: {e}")))
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ApiError> {
        self.call(self.http.get(self.url(path)))
    }
}

fn unreachable_server(e: reqwest::Error) -> ApiError {
    ApiError::internal(format!("server unreachable: {e}"))
}

impl Backend for Remote {
    fn create(&mut self, req: &CreateStudy) -> Result<StudySummary, ApiError> {
        self.call(self.http.post(self.url("/studies")).json(req))
    }

    fn list(&mut self) -> Result<Vec<String>, ApiError> {
        self.get("/studies")
    }

    fn state(&mut self, id: &str, at: Option<u64>) -> Result<StateView, ApiError> {
        let req = self.http.get(self.url(&format!("/studies/{id}/state")));
        self.call(match at {
            Some(at) => req.query(&[("at", at)]),
            None => req,
        })
    }

    fn submit(&mut self, id: &str, events: Vec<EventInput>, dry_run: bool) -> Result<Submitted, ApiError> {
        let mut req = self.http.post(self.url(&format!("/studies/{id}/events"))).json(&events);
        if dry_run {
            req = req.query(&[("dry-run", "true")]);
        }
        self.call(req)
    }

    fn put_blob(&mut self, bytes: &[u8]) -> Result<BlobStored, ApiError> {
        let digest = feaflow_core::toolbox::digest_of(bytes);
        self.call(
            self.http
                .put(self.url(&format!("/blobs/{digest}")))
                .body(bytes.to_vec()),
        )
    }

    fn plan(&mut self, id: &str, q: &PlanQuery) -> Result<Guidance, ApiError> {
        self.call(self.http.get(self.url(&format!("/studies/{id}/plan"))).query(q))
    }

    fn pddl(&mut self, id: &str, q: &PlanQuery) -> Result<PddlExport, ApiError> {
        self.call(self.http.get(self.url(&format!("/studies/{id}/pddl"))).query(q))
    }

    fn provenance(&mut self, id: &str, q: &ProvQuery) -> Result<ProvenanceGraph, ApiError> {
        self.call(self.http.get(self.url(&format!("/studies/{id}/provenance"))).query(q))
    }

    fn fill(&mut self, id: &str, exp: &str) -> Result<FilledSchema, ApiError> {
        self.get(&format!("/studies/{id}/experiments/{exp}/schema"))
    }

    fn generate(&mut self, id: &str, exp: &str, manual: Option<ManualInputs>) -> Result<GeneratedExperiment, ApiError> {
        let req = self
            .http
            .post(self.url(&format!("/studies/{id}/experiments/{exp}/generate")));
        self.call(match manual {
            Some(m) => req.json(&m),
            None => req,
        })
    }

    fn run(&mut self, id: &str, exp: &str, req: &RunRequest) -> Result<RunResult, ApiError> {
        self.call(
            self.http
                .post(self.url(&format!("/studies/{id}/experiments/{exp}/run")))
                .json(req),
        )
    }

    fn definition(&mut self, version: &str) -> Result<WorkflowDefinition, ApiError> {
        self.get(&format!("/definitions/{version}"))
    }

    fn changes(
        &mut self,
        id: &str,
        since: u64,
        follow: bool,
        sink: &mut dyn FnMut(ChangeMessage) -> bool,
    ) -> Result<(), ApiError> {
        if !follow {
            // The stream never ends on its own; read the backlog from the log instead.
            let end = self.state(id, None)?.next_seq;
            if since >= end {
                return Ok(());
            }
            return self.changes(id, since, true, &mut |m| {
                let last = m.seq + 1 >= end;
                sink(m) && !last
            });
        }
        let r = self.send(
            self.http
                .get(self.url(&format!("/studies/{id}/stream")))
                .query(&[("since", since)]),
        )?;
        for line in BufReader::new(r).lines() {
            let line = line.map_err(|e| ApiError::internal(format!("stream broke: {e}")))?;
            let Some(data) = line.strip_prefix("data:") else {
                continue;
            };
            let m: ChangeMessage = serde_json::from_str(data.trim_start())
                .map_err(|e| ApiError::internal(format!("bad change message: {e}")))?;
            if !sink(m) {
                break;
            }
        }
        Ok(())
    }
}
