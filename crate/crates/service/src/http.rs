use std::collections::{HashMap, VecDeque};
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use feaflow_core::gsm::WorkflowDefinition;
use feaflow_core::planner::Guidance;
use feaflow_core::store::{PersistentStudy, StudyStore};
use feaflow_core::study::{ManualInputs, Session};
use feaflow_core::toolbox::{digest_of, BlobStore};
use futures::Stream;
use serde::Deserialize;
use tokio::sync::{broadcast, mpsc, oneshot};

use crate::api::*;
use crate::ops;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type Job = Box<dyn FnOnce(&mut Writer) + Send>;

/// State owned by a study's writer thread.
struct Writer {
    study: PersistentStudy,
    current: Arc<RwLock<Arc<Session>>>,
    changes: broadcast::Sender<ChangeMessage>,
    published: usize,
}

impl Writer {
    /// Swap in a new snapshot and announce the events committed since the last one.
    fn publish(&mut self) {
        let n = self.study.session().events().len();
        if n == self.published {
            return;
        }
        tracing::debug!(
            study = self.study.id(),
            next_seq = self.study.state().next_seq,
            "committed"
        );
        let snapshot = Arc::new(self.study.session().clone());
        *self.current.write().expect("snapshot lock poisoned") = snapshot.clone();
        // Send errors only mean nobody is listening.
        for m in ops::changes(&snapshot, self.published as u64) {
            let _ = self.changes.send(m);
        }
        self.published = n;
    }
}

/// The single writer of one study and the snapshot it last published.
struct StudyHandle {
    jobs: mpsc::UnboundedSender<Job>,
    current: Arc<RwLock<Arc<Session>>>,
    changes: broadcast::Sender<ChangeMessage>,
    /// Guidance computed for `(next_seq, goal)`; dropped when the study moves on.
    plans: Mutex<(u64, std::collections::BTreeMap<String, Guidance>)>,
}

impl StudyHandle {
    fn spawn(study: PersistentStudy) -> Arc<Self> {
        let (jobs, mut rx) = mpsc::unbounded_channel::<Job>();
        let (changes, _) = broadcast::channel(1024);
        let current = Arc::new(RwLock::new(Arc::new(study.session().clone())));
        let handle = Arc::new(StudyHandle {
            jobs,
            current: current.clone(),
            changes: changes.clone(),
            plans: Mutex::new((0, Default::default())),
        });
        let name = format!("writer-{}", study.id());
        let mut writer = Writer {
            published: study.session().events().len(),
            study,
            current,
            changes,
        };
        std::thread::Builder::new()
            .name(name)
            .spawn(move || {
                while let Some(job) = rx.blocking_recv() {
                    job(&mut writer);
                }
            })
            .expect("spawn study writer");
        handle
    }

    fn current(&self) -> Arc<Session> {
        self.current.read().expect("snapshot lock poisoned").clone()
    }

    async fn write<T: Send + 'static>(
        &self,
        f: impl FnOnce(&mut PersistentStudy) -> Result<T, ApiError> + Send + 'static,
    ) -> Result<T, ApiError> {
        let (tx, rx) = oneshot::channel();
        self.jobs
            .send(Box::new(move |w: &mut Writer| {
                let out = f(&mut w.study);
                // Publish before replying so the caller reads its own write.
                w.publish();
                let _ = tx.send(out);
            }))
            .map_err(|_| ApiError::internal("study writer stopped"))?;
        rx.await
            .map_err(|_| ApiError::internal("study writer dropped the request"))?
    }
}

pub struct AppState {
    store: StudyStore,
    studies: Mutex<HashMap<String, Arc<StudyHandle>>>,
}

impl AppState {
    pub fn new(store: StudyStore) -> Arc<Self> {
        Arc::new(AppState {
            store,
            studies: Mutex::new(HashMap::new()),
        })
    }

    fn adopt(&self, study: PersistentStudy) -> Arc<StudyHandle> {
        let id = study.id().to_string();
        self.studies
            .lock()
            .expect("study table poisoned")
            .entry(id)
            .or_insert_with(|| StudyHandle::spawn(study))
            .clone()
    }

    async fn handle(&self, id: &str) -> Result<Arc<StudyHandle>, ApiError> {
        if let Some(h) = self.studies.lock().expect("study table poisoned").get(id) {
            return Ok(h.clone());
        }
        let store = self.store.clone();
        let owned = id.to_string();
        let study = blocking(move || Ok(store.load(&owned)?)).await?;
        Ok(self.adopt(study))
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    q.map(|Query(t)| t).map_err(|e| ApiError::usage(e.body_text()))
}

fn json<T>(b: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    b.map(|Json(t)| t).map_err(|e| ApiError::usage(e.body_text()))
}

type App = State<Arc<AppState>>;

async fn create(
    State(app): App,
    body: Option<Json<CreateStudy>>,
) -> Result<(StatusCode, Json<StudySummary>), ApiError> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let store = app.store.clone();
    let study = blocking(move || {
        let version = req.definition_version.as_deref();
        Ok(if req.empty {
            store.create_empty(version)?
        } else {
            store.create(version)?
        })
    })
    .await?;
    let summary = ops::summary(&study);
    app.adopt(study);
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn list(State(app): App) -> Result<Json<Vec<String>>, ApiError> {
    let store = app.store.clone();
    Ok(Json(blocking(move || Ok(store.list()?)).await?))
}

#[derive(Deserialize)]
struct AtQuery {
    at: Option<u64>,
}

async fn state(
    State(app): App,
    Path(id): Path<String>,
    q: Result<Query<AtQuery>, QueryRejection>,
) -> Result<Json<StateView>, ApiError> {
    let h = app.handle(&id).await?;
    if let Some(at) = query(q)?.at {
        return Ok(Json(h.write(move |s| ops::state_at(s, at)).await?));
    }
    let session = h.current();
    let mut view = ops::state_view(&id, &session);
    let plans = h.plans.lock().expect("plan cache poisoned");
    if plans.0 == view.next_seq {
        view.plan_cache = plans.1.clone();
    }
    Ok(Json(view))
}

fn expected_sequence(headers: &HeaderMap) -> Result<Option<u64>, ApiError> {
    headers
        .get(EXPECTED_SEQUENCE)
        .map(|v| {
            v.to_str()
                .ok()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| ApiError::usage(format!("{EXPECTED_SEQUENCE} must be a sequence number")))
        })
        .transpose()
}

#[derive(Deserialize)]
#[serde(rename_all = "kebab-case")]
struct SubmitQuery {
    #[serde(default)]
    dry_run: bool,
}

async fn submit(
    State(app): App,
    Path(id): Path<String>,
    headers: HeaderMap,
    q: Result<Query<SubmitQuery>, QueryRejection>,
    body: Result<Json<Submission>, JsonRejection>,
) -> Result<Json<Submitted>, ApiError> {
    let expected = expected_sequence(&headers)?;
    let dry = query(q)?.dry_run;
    let events = json(body)?.into_events();
    let h = app.handle(&id).await?;
    if dry {
        let session = h.current();
        return Ok(Json(blocking(move || ops::dry_run(&session, expected, events)).await?));
    }
    Ok(Json(h.write(move |s| ops::submit(s, expected, events)).await?))
}

async fn active(
    State(app): App,
    Path(id): Path<String>,
) -> Result<Json<Vec<feaflow_core::gsm::ActiveStage>>, ApiError> {
    Ok(Json(ops::active(&app.handle(&id).await?.current())))
}

async fn plan(
    State(app): App,
    Path(id): Path<String>,
    q: Result<Query<PlanQuery>, QueryRejection>,
) -> Result<Json<Guidance>, ApiError> {
    let q = query(q)?;
    let h = app.handle(&id).await?;
    let session = h.current();
    let seq = session.state().next_seq;
    if q.artifact.is_none() {
        let plans = h.plans.lock().expect("plan cache poisoned");
        if let Some(g) = plans.1.get(&q.goal).filter(|_| plans.0 == seq) {
            return Ok(Json(g.clone()));
        }
    }
    let goal = q.clone();
    let g = blocking(move || ops::guidance(&session, &goal)).await?;
    if q.artifact.is_none() {
        let mut plans = h.plans.lock().expect("plan cache poisoned");
        if plans.0 != seq {
            *plans = (seq, Default::default());
        }
        plans.1.insert(q.goal, g.clone());
    }
    Ok(Json(g))
}

async fn pddl(
    State(app): App,
    Path(id): Path<String>,
    q: Result<Query<PlanQuery>, QueryRejection>,
) -> Result<Json<PddlExport>, ApiError> {
    let q = query(q)?;
    let session = app.handle(&id).await?.current();
    Ok(Json(blocking(move || ops::pddl(&session, &q)).await?))
}

async fn provenance(
    State(app): App,
    Path(id): Path<String>,
    q: Result<Query<ProvQuery>, QueryRejection>,
) -> Result<Json<feaflow_core::provenance::ProvenanceGraph>, ApiError> {
    let q = query(q)?;
    Ok(Json(ops::provenance(&app.handle(&id).await?.current(), &q)?))
}

async fn fill(
    State(app): App,
    Path((id, exp)): Path<(String, String)>,
) -> Result<Json<feaflow_core::experiment::FilledSchema>, ApiError> {
    Ok(Json(ops::fill(&app.handle(&id).await?.current(), &exp)?))
}

async fn generate(
    State(app): App,
    Path((id, exp)): Path<(String, String)>,
    body: Option<Json<ManualInputs>>,
) -> Result<Json<feaflow_core::study::GeneratedExperiment>, ApiError> {
    let manual = body.map(|Json(m)| m);
    let h = app.handle(&id).await?;
    Ok(Json(h.write(move |s| ops::generate(s, &exp, manual)).await?))
}

async fn run(
    State(app): App,
    Path((id, exp)): Path<(String, String)>,
    body: Option<Json<RunRequest>>,
) -> Result<Json<RunResult>, ApiError> {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    let h = app.handle(&id).await?;
    Ok(Json(h.write(move |s| ops::run(s, &exp, &req)).await?))
}

async fn definition(State(app): App, Path(version): Path<String>) -> Result<Json<WorkflowDefinition>, ApiError> {
    Ok(Json(app.store.definition(&version)?.as_ref().clone()))
}

#[derive(Deserialize)]
struct StreamQuery {
    since: Option<u64>,
}

struct Feed {
    rx: broadcast::Receiver<ChangeMessage>,
    handle: Arc<StudyHandle>,
    next: u64,
    queue: VecDeque<ChangeMessage>,
}

/// Backlog from `since`, then live changes. A lagging subscriber re-reads the gap from the
/// published snapshot, so nothing is skipped; a message may repeat, never go missing.
async fn stream(
    State(app): App,
    Path(id): Path<String>,
    headers: HeaderMap,
    q: Result<Query<StreamQuery>, QueryRejection>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|s| s.parse::<u64>().ok())
        .map(|s| s + 1);
    let since = query(q)?.since.or(resume).unwrap_or(0);
    let handle = app.handle(&id).await?;
    // Subscribe before reading the backlog so no commit falls between the two.
    let rx = handle.changes.subscribe();
    let queue: VecDeque<_> = ops::changes(&handle.current(), since).into();
    let next = queue.back().map_or(since, |m| m.seq + 1);
    let feed = Feed {
        rx,
        handle,
        next,
        queue,
    };
    let events = futures::stream::unfold(feed, |mut f| async move {
        loop {
            if let Some(m) = f.queue.pop_front() {
                let ev = Event::default()
                    .id(m.seq.to_string())
                    .event("change")
                    .json_data(&m)
                    .expect("change messages serialize");
                return Some((Ok(ev), f));
            }
            match f.rx.recv().await {
                Ok(m) if m.seq >= f.next => {
                    f.next = m.seq + 1;
                    f.queue.push_back(m);
                }
                Ok(_) => {}
                Err(broadcast::error::RecvError::Lagged(_)) => {
                    f.queue = ops::changes(&f.handle.current(), f.next).into();
                    f.next = f.queue.back().map_or(f.next, |m| m.seq + 1);
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}

async fn get_blob(State(app): App, Path(digest): Path<String>) -> Result<Response, ApiError> {
    let store = app.store.clone();
    let bytes = blocking(move || Ok(store.any_blobs()?.get(&digest)?)).await?;
    Ok(([("content-type", "application/octet-stream")], bytes).into_response())
}

async fn put_blob(
    State(app): App,
    Path(digest): Path<String>,
    body: Bytes,
) -> Result<(StatusCode, Json<BlobStored>), ApiError> {
    let actual = digest_of(&body);
    if actual != digest {
        return Err(ApiError::new(
            Family::Rule,
            "digest_mismatch",
            format!("content hashes to {actual}, not {digest}"),
        ));
    }
    let store = app.store.clone();
    let size = body.len() as u64;
    let digest = blocking(move || Ok(store.shared_blobs()?.put_bytes(&body)?)).await?;
    Ok((StatusCode::CREATED, Json(BlobStored { digest, size })))
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/studies", post(create).get(list))
        .route("/studies/{id}/state", get(state))
        .route("/studies/{id}/events", post(submit))
        .route("/studies/{id}/active-stages", get(active))
        .route("/studies/{id}/plan", get(plan))
        .route("/studies/{id}/pddl", get(pddl))
        .route("/studies/{id}/provenance", get(provenance))
        .route("/studies/{id}/experiments/{eid}/schema", get(fill))
        .route("/studies/{id}/experiments/{eid}/generate", post(generate))
        .route("/studies/{id}/experiments/{eid}/run", post(run))
        .route("/studies/{id}/stream", get(stream))
        .route("/definitions/{version}", get(definition))
        .route("/blobs/{digest}", get(get_blob).put(put_blob))
        .layer(axum::middleware::map_response(|mut r: Response| async move {
            r.headers_mut().insert(
                VERSION_HEADER,
                HeaderValue::from_str(&API_VERSION.to_string()).expect("ascii"),
            );
            r
        }))
        .with_state(app)
}

/// Serve until `shutdown` resolves.
pub async fn serve(
    store: StudyStore,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(AppState::new(store)))
        .with_graceful_shutdown(shutdown)
        .await
}

/// A server on its own runtime thread, stopped when dropped.
pub struct BackgroundServer {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl BackgroundServer {
    pub fn start(store: StudyStore, addr: SocketAddr) -> std::io::Result<Self> {
        let listener = std::net::TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (stop, stopped) = oneshot::channel::<()>();
        let thread = std::thread::Builder::new().name("feaflow-http".into()).spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener)?;
                serve(store, listener, async {
                    let _ = stopped.await;
                })
                .await
            })
        })?;
        Ok(BackgroundServer {
            addr,
            stop: Some(stop),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        // Open event streams keep graceful shutdown waiting, so the thread is not joined.
        self.thread.take();
    }
}
