use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use advice_loop::advice::AdviceForm;
use advice_loop::distill::AnnotationSet;
use advice_loop::env::EnvConfig;
use advice_loop::nnet::PolicyNet;
use advice_loop::trajectory::TrajectoryRecord;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::mpsc;

use crate::protocol::{parse_client, Mode, ServerMsg, SessionStatus};
use crate::session::{EpisodeStore, Session, SessionConfig, SessionInfo};
use crate::ServiceError;

/// Server-wide defaults; a session request may override env, form, seed and
/// cadence.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub surrogate: Option<Arc<PolicyNet>>,
    pub env: EnvConfig,
    pub form: Option<AdviceForm>,
    pub step_ms: u64,
    pub wait_for_advice: bool,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
}

impl ServiceConfig {
    pub fn new(env: EnvConfig) -> ServiceConfig {
        ServiceConfig {
            surrogate: None,
            env,
            form: None,
            step_ms: 300,
            wait_for_advice: false,
            out_dir: None,
            seed: 0,
        }
    }
}

type SharedSession = Arc<Mutex<Session>>;

pub struct AppState {
    cfg: ServiceConfig,
    sessions: Mutex<BTreeMap<String, SharedSession>>,
    episodes: EpisodeStore,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Arc<AppState> {
        Arc::new(AppState {
            cfg,
            sessions: Mutex::new(BTreeMap::new()),
            episodes: Default::default(),
            next_id: AtomicU64::new(1),
        })
    }

    /// Makes recorded episodes available for hindsight annotation.
    pub fn preload(&self, records: Vec<TrajectoryRecord>) {
        let mut store = self.episodes.write().expect("episode store lock");
        for r in records {
            store.insert(r.episode_id.clone(), r);
        }
    }

    pub fn episode(&self, id: &str) -> Option<TrajectoryRecord> {
        self.episodes.read().expect("episode store lock").get(id).cloned()
    }

    fn session(&self, id: &str) -> Result<SharedSession, ServiceError> {
        self.sessions
            .lock()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("no session {id}")))
    }

    pub fn create_session(self: &Arc<Self>, req: CreateSession) -> Result<Created, ServiceError> {
        let env = req.env.unwrap_or_else(|| self.cfg.env.clone());
        let form = req
            .form
            .or(self.cfg.form)
            .ok_or_else(|| ServiceError::Unprocessable("no advice form given and the server has no default".into()))?;
        let n = self.next_id.fetch_add(1, Ordering::Relaxed);
        let id = format!("s{n}");
        let cfg = SessionConfig {
            mode: req.mode,
            env,
            form,
            step_ms: req.step_ms.unwrap_or(self.cfg.step_ms).max(1),
            wait_for_advice: req.wait_for_advice.unwrap_or(self.cfg.wait_for_advice),
            seed: req.seed.unwrap_or(self.cfg.seed.wrapping_add(n)),
        };
        let step_ms = cfg.step_ms;
        let live = cfg.mode == Mode::LiveCoach;
        let session = Arc::new(Mutex::new(Session::new(
            id.clone(),
            cfg,
            self.cfg.surrogate.clone(),
            self.episodes.clone(),
            self.cfg.out_dir.clone(),
        )?));
        self.sessions.lock().expect("session map lock").insert(id.clone(), session.clone());
        if live {
            tokio::spawn(drive(session, step_ms));
        }
        Ok(Created {
            ws_url: format!("/sessions/{id}/stream"),
            id,
        })
    }

    pub fn list(&self) -> Vec<SessionInfo> {
        let sessions: Vec<SharedSession> = self.sessions.lock().expect("session map lock").values().cloned().collect();
        sessions.iter().map(|s| s.lock().expect("session lock").info()).collect()
    }
}

/// The session's clock: one tick every `step_ms` until it closes.
async fn drive(session: SharedSession, step_ms: u64) {
    let mut clock = tokio::time::interval(Duration::from_millis(step_ms));
    clock.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        clock.tick().await;
        let mut s = session.lock().expect("session lock");
        if s.status() == SessionStatus::Closed {
            break;
        }
        if let Err(e) = s.tick() {
            tracing::error!(session = %s.id, error = %e, "step failed; closing session");
            s.close();
            break;
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateSession {
    pub mode: Mode,
    #[serde(default)]
    pub env: Option<EnvConfig>,
    #[serde(default)]
    pub form: Option<AdviceForm>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub step_ms: Option<u64>,
    #[serde(default)]
    pub wait_for_advice: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub ws_url: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Core(advice_loop::Error::Config(_) | advice_loop::Error::Annotation(_) | advice_loop::Error::Advice(_)) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

async fn create(State(app): State<Arc<AppState>>, Json(req): Json<CreateSession>) -> Result<(StatusCode, Json<Created>), ServiceError> {
    Ok((StatusCode::CREATED, Json(app.create_session(req)?)))
}

async fn list(State(app): State<Arc<AppState>>) -> Json<Vec<SessionInfo>> {
    Json(app.list())
}

async fn info(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionInfo>, ServiceError> {
    let s = app.session(&id)?;
    let info = s.lock().expect("session lock").info();
    Ok(Json(info))
}

async fn delete(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionInfo>, ServiceError> {
    let s = app.session(&id)?;
    let mut s = s.lock().expect("session lock");
    if s.status() == SessionStatus::Closed {
        return Err(ServiceError::NotFound(format!("session {id} is already closed")));
    }
    s.close();
    Ok(Json(s.info()))
}

async fn episode(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<TrajectoryRecord>, ServiceError> {
    app.episode(&id).map(Json).ok_or_else(|| ServiceError::NotFound(format!("no recorded episode {id}")))
}

async fn annotate(State(app): State<Arc<AppState>>, Path(id): Path<String>, Json(set): Json<AnnotationSet>) -> Result<Json<AnnotationSet>, ServiceError> {
    let s = app.session(&id)?;
    let saved = s.lock().expect("session lock").annotate_set(set)?;
    Ok(Json(saved))
}

async fn stream(State(app): State<Arc<AppState>>, Path(id): Path<String>, ws: WebSocketUpgrade) -> Result<Response, ServiceError> {
    let s = app.session(&id)?;
    Ok(ws.on_upgrade(move |socket| connection(socket, s)))
}

fn encode(msg: &ServerMsg) -> Message {
    Message::Text(serde_json::to_string(msg).expect("server messages serialize").into())
}

async fn connection(socket: WebSocket, session: SharedSession) {
    let (mut sink, mut source) = socket.split();
    let (tx, mut rx) = mpsc::unbounded_channel::<ServerMsg>();
    let refused = {
        let mut s = session.lock().expect("session lock");
        if s.status() == SessionStatus::Closed {
            Some(ServerMsg::error("session_closed", format!("session {} is closed", s.id)))
        } else {
            s.subscribe(tx.clone());
            None
        }
    };
    if let Some(msg) = refused {
        let _ = sink.send(encode(&msg)).await;
        let _ = sink.close().await;
        return;
    }
    let writer = tokio::spawn(async move {
        while let Some(msg) = rx.recv().await {
            if sink.send(encode(&msg)).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });
    while let Some(Ok(msg)) = source.next().await {
        let replies = match msg {
            Message::Text(text) => match parse_client(&text) {
                Ok(m) => session.lock().expect("session lock").handle(m),
                Err(e) => vec![e],
            },
            Message::Binary(_) => vec![ServerMsg::error("bad_message", "binary frames are not part of the protocol")],
            Message::Close(_) => break,
            _ => continue,
        };
        let closed = session.lock().expect("session lock").status() == SessionStatus::Closed;
        for r in replies {
            let _ = tx.send(r);
        }
        if closed {
            break;
        }
    }
    drop(tx);
    let _ = writer.await;
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}", get(info).delete(delete))
        .route("/sessions/{id}/stream", get(stream))
        .route("/sessions/{id}/annotations", post(annotate))
        .route("/episodes/{id}", get(episode))
        .with_state(app)
}

pub async fn serve(listener: TcpListener, app: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(app)).await
}
