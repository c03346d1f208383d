//! HTTP API. Each run is owned by a worker thread; handlers read the
//! snapshot the worker last published and send commands to its mailbox.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, TryRecvError};
use std::sync::{Arc, RwLock};
use std::thread;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ikemo_core::config::ConfigError;
use ikemo_core::feedback::FieldError;
use ikemo_core::{
    InteractionMode, ProblemRegistry, RuleSet, RunConfig, RunStatus, Session, SessionError,
    StateSnapshot, UserFeedback, UserSpec,
};
use log::{error, info};
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

use crate::driver::Driver;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub id: String,
    pub problem: String,
    pub agent: String,
    pub user: UserSpec,
    pub mode: InteractionMode,
    pub status: RunStatus,
    pub gen: usize,
    pub fe: u64,
    pub hv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub id: String,
    #[serde(flatten)]
    pub state: StateSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMember {
    pub x: Vec<f64>,
    pub f: Vec<f64>,
}

/// The feasible non-dominated set, with the hypervolume it scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveView {
    pub gen: usize,
    pub fe: u64,
    pub hv: f64,
    pub members: Vec<ArchiveMember>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
}

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Conflict(String),
    Unprocessable(String, Vec<FieldError>),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (code, error, fields) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m, Vec::new()),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, m, Vec::new()),
            ApiError::Unprocessable(m, f) => (StatusCode::UNPROCESSABLE_ENTITY, m, f),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m, Vec::new()),
        };
        (code, Json(ErrorBody { error, fields })).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Finished => ApiError::Conflict(e.to_string()),
            SessionError::NoRules => ApiError::Conflict(e.to_string()),
            SessionError::InvalidFeedback(fields) => {
                ApiError::Unprocessable("invalid feedback".into(), fields)
            }
            SessionError::Config(ConfigError::Invalid(fields)) => {
                ApiError::Unprocessable("invalid config".into(), fields)
            }
            SessionError::Config(other) => ApiError::Unprocessable(other.to_string(), Vec::new()),
            SessionError::Checkpoint(m) => ApiError::Internal(m),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::Unprocessable(r.body_text(), Vec::new())
    }
}

struct Published {
    summary: RunSummary,
    state: StateView,
    rules: RuleSet,
    archive: ArchiveView,
}

fn publish(id: &str, s: &Session) -> Arc<Published> {
    let snapshot = s.snapshot();
    let cfg = s.config();
    let members = s
        .state()
        .evo
        .archive
        .members
        .iter()
        .map(|m| ArchiveMember {
            x: m.x.clone(),
            f: m.f.clone(),
        })
        .collect();
    Arc::new(Published {
        summary: RunSummary {
            id: id.to_string(),
            problem: cfg.problem.clone(),
            agent: cfg.agent.to_string(),
            user: cfg.user,
            mode: cfg.mode,
            status: snapshot.status,
            gen: snapshot.gen,
            fe: snapshot.fe,
            hv: snapshot.hv,
        },
        archive: ArchiveView {
            gen: snapshot.gen,
            fe: snapshot.fe,
            hv: s.hv(),
            members,
        },
        state: StateView {
            id: id.to_string(),
            state: snapshot,
        },
        rules: s.rules_view(),
    })
}

type Reply = oneshot::Sender<Result<StateSnapshot, ApiError>>;

enum Command {
    Feedback(UserFeedback, Reply),
    Pause(Reply),
    Resume(Reply),
}

struct RunHandle {
    mailbox: mpsc::Sender<Command>,
    board: Arc<RwLock<Arc<Published>>>,
    human: bool,
}

impl RunHandle {
    fn read(&self) -> Arc<Published> {
        self.board.read().expect("board lock").clone()
    }
}

fn worker(
    id: String,
    mut driver: Driver,
    rx: mpsc::Receiver<Command>,
    board: Arc<RwLock<Arc<Published>>>,
) {
    let post = |d: &Driver| *board.write().expect("board lock") = publish(&id, d.session());
    loop {
        let cmd = if driver.session().status() == RunStatus::Running {
            match rx.try_recv() {
                Ok(c) => Some(c),
                Err(TryRecvError::Empty) => None,
                Err(TryRecvError::Disconnected) => return,
            }
        } else {
            match rx.recv() {
                Ok(c) => Some(c),
                Err(_) => return,
            }
        };
        let Some(cmd) = cmd else {
            if let Err(e) = driver.advance() {
                error!("{id}: {e:#}");
                driver.fail();
            }
            post(&driver);
            if driver.session().status().is_terminal() {
                info!(
                    "{id} {:?} at gen {}",
                    driver.session().status(),
                    driver.session().gen()
                );
            }
            continue;
        };
        let (outcome, reply) = match cmd {
            Command::Feedback(fb, r) => (driver.submit_feedback(fb), r),
            Command::Pause(r) => (driver.pause(), r),
            Command::Resume(r) => (driver.resume(), r),
        };
        let result = match outcome {
            Ok(Ok(())) => Ok(driver.session().snapshot()),
            Ok(Err(e)) => Err(ApiError::from(e)),
            Err(e) => Err(ApiError::Internal(format!("{e:#}"))),
        };
        post(&driver);
        let _ = reply.send(result);
    }
}

struct Inner {
    registry: Arc<ProblemRegistry>,
    out_root: Option<PathBuf>,
    checkpoint_every: usize,
    max_human: usize,
    next: AtomicU64,
    runs: RwLock<BTreeMap<u64, RunHandle>>,
}

/// Shared service state: the run table and where runs write their files.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// Runs write to `out_root/<id>` when a root is given.
    pub fn new(registry: ProblemRegistry, out_root: Option<PathBuf>) -> Self {
        Self(Arc::new(Inner {
            registry: Arc::new(registry),
            out_root,
            checkpoint_every: 10,
            max_human: 1,
            next: AtomicU64::new(1),
            runs: RwLock::new(BTreeMap::new()),
        }))
    }

    pub fn registry(&self) -> &ProblemRegistry {
        &self.0.registry
    }

    /// Hands `session` to a new worker writing to `out_root/<id>`.
    pub fn spawn(&self, session: Session) -> Result<String, ApiError> {
        let root = self.0.out_root.clone();
        self.spawn_with(session, |id| root.map(|r| r.join(id)))
    }

    /// Like [`spawn`](Self::spawn) with an explicit run directory.
    pub fn spawn_in(&self, session: Session, dir: Option<PathBuf>) -> Result<String, ApiError> {
        self.spawn_with(session, |_| dir)
    }

    fn spawn_with(
        &self,
        session: Session,
        dir: impl FnOnce(&str) -> Option<PathBuf>,
    ) -> Result<String, ApiError> {
        let human = session.config().user == UserSpec::Human;
        if human && self.active_humans() >= self.0.max_human {
            return Err(ApiError::Conflict(
                "a human-interactive run is already active".into(),
            ));
        }
        let n = self.0.next.fetch_add(1, Ordering::Relaxed);
        let id = format!("run-{n}");
        let driver = Driver::new(session, dir(&id), self.0.checkpoint_every)
            .map_err(|e| ApiError::Internal(format!("{e:#}")))?;
        let board = Arc::new(RwLock::new(publish(&id, driver.session())));
        let (tx, rx) = mpsc::channel();
        let worker_board = board.clone();
        let worker_id = id.clone();
        thread::Builder::new()
            .name(id.clone())
            .spawn(move || worker(worker_id, driver, rx, worker_board))
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        self.0.runs.write().expect("run table").insert(
            n,
            RunHandle {
                mailbox: tx,
                board,
                human,
            },
        );
        info!("started {id}");
        Ok(id)
    }

    fn active_humans(&self) -> usize {
        self.0
            .runs
            .read()
            .expect("run table")
            .values()
            .filter(|h| h.human && !h.read().summary.status.is_terminal())
            .count()
    }

    fn published(&self, id: &str) -> Result<Arc<Published>, ApiError> {
        let runs = self.0.runs.read().expect("run table");
        lookup(&runs, id).map(RunHandle::read)
    }

    async fn command(
        &self,
        id: &str,
        make: impl FnOnce(Reply) -> Command,
    ) -> Result<Json<StateView>, ApiError> {
        let (tx, rx) = oneshot::channel();
        {
            let runs = self.0.runs.read().expect("run table");
            lookup(&runs, id)?
                .mailbox
                .send(make(tx))
                .map_err(|_| ApiError::Internal("run worker has stopped".into()))?;
        }
        let state = rx
            .await
            .map_err(|_| ApiError::Internal("run worker has stopped".into()))??;
        Ok(Json(StateView {
            id: id.to_string(),
            state,
        }))
    }
}

fn lookup<'a>(runs: &'a BTreeMap<u64, RunHandle>, id: &str) -> Result<&'a RunHandle, ApiError> {
    id.strip_prefix("run-")
        .and_then(|n| n.parse().ok())
        .and_then(|n| runs.get(&n))
        .ok_or_else(|| ApiError::NotFound(format!("unknown run {id:?}")))
}

async fn list_runs(State(app): State<AppState>) -> Json<Vec<RunSummary>> {
    let runs = app.0.runs.read().expect("run table");
    Json(runs.values().map(|h| h.read().summary.clone()).collect())
}

async fn create_run(
    State(app): State<AppState>,
    body: Result<Json<RunConfig>, JsonRejection>,
) -> Result<(StatusCode, Json<RunSummary>), ApiError> {
    let Json(config) = body?;
    let session = Session::new(config, app.registry())?;
    let id = app.spawn(session)?;
    Ok((
        StatusCode::CREATED,
        Json(app.published(&id)?.summary.clone()),
    ))
}

async fn run_state(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<StateView>, ApiError> {
    Ok(Json(app.published(&id)?.state.clone()))
}

async fn run_rules(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<RuleSet>, ApiError> {
    Ok(Json(app.published(&id)?.rules.clone()))
}

async fn run_archive(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<ArchiveView>, ApiError> {
    Ok(Json(app.published(&id)?.archive.clone()))
}

async fn feedback(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<UserFeedback>, JsonRejection>,
) -> Result<Json<StateView>, ApiError> {
    app.published(&id)?;
    let Json(fb) = body?;
    fb.validate()
        .map_err(|f| ApiError::Unprocessable("invalid feedback".into(), f))?;
    app.command(&id, |r| Command::Feedback(fb, r)).await
}

async fn pause(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<StateView>, ApiError> {
    app.command(&id, Command::Pause).await
}

async fn resume(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<StateView>, ApiError> {
    app.command(&id, Command::Resume).await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/runs", get(list_runs).post(create_run))
        .route("/runs/{id}/state", get(run_state))
        .route("/runs/{id}/rules", get(run_rules))
        .route("/runs/{id}/archive", get(run_archive))
        .route("/runs/{id}/feedback", post(feedback))
        .route("/runs/{id}/pause", post(pause))
        .route("/runs/{id}/resume", post(resume))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(state: AppState, addr: SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on http://{}", listener.local_addr()?);
    eprintln!("serving on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
