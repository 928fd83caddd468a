//! HTTP front of the Command Centre.
//!
//! Commands go through one [`Centre`] behind a mutex (the single writer).
//! Queries read a separate copy of the state that a commit listener keeps
//! current, so dashboards stay responsive while a tick or report is being
//! processed. The same listener fans feed items out to `/updates` streams.

mod error;
mod page;

use std::collections::{BTreeMap, VecDeque};
use std::convert::Infallible;
use std::sync::{Arc, Mutex, MutexGuard, RwLock, RwLockReadGuard};
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Form, Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::broadcast;

pub use error::{ApiError, ErrorBody};

use homewatch_core::centre::query::{self, FeedItem, PatientFilter};
use homewatch_core::centre::CentreState;
use homewatch_core::centre::{ActTransition, Centre, CentreError, EnrollmentForm, TickOutcome};
use homewatch_core::config::{ClockConfig, ConfigError, DeploymentConfig, GatewayKind};
use homewatch_core::model::{ActionId, PatientId, PatientStatus, RawAnswer, RawAnswers, Timestamp, TriageCategory};
use homewatch_core::notify::{FileGateway, MessageGateway, Notifier, NullGateway, RetryPolicy, StdoutGateway, ThreadSleeper};
use homewatch_core::store::{EventStore, FileStorage, Fold, StoreError};

pub const OPERATOR_HEADER: &str = "x-operator-token";

/// Buffered feed items per subscriber before it has to catch up from the log.
const FEED_BUFFER: usize = 4096;

#[derive(Debug, Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Centre(#[from] CentreError),
}

#[derive(Debug)]
pub enum Clock {
    System,
    /// Moves only through `/sim/clock` and `/sim/tick`.
    Manual(Mutex<Timestamp>),
}

impl Clock {
    pub fn now(&self) -> Timestamp {
        match self {
            Clock::System => chrono::Utc::now(),
            Clock::Manual(t) => *t.lock().unwrap_or_else(|p| p.into_inner()),
        }
    }

    fn is_manual(&self) -> bool {
        matches!(self, Clock::Manual(_))
    }
}

pub struct AppState {
    centre: Mutex<Centre>,
    read: Arc<RwLock<CentreState>>,
    feed: broadcast::Sender<FeedItem>,
    clock: Clock,
    operator_token: String,
}

pub type SharedState = Arc<AppState>;

impl AppState {
    pub fn new(mut centre: Centre, clock: Clock, operator_token: impl Into<String>) -> SharedState {
        let read = Arc::new(RwLock::new(centre.state().clone()));
        let (feed, _) = broadcast::channel(FEED_BUFFER);
        let (model, tx) = (read.clone(), feed.clone());
        centre.subscribe(Box::new(move |events| {
            {
                let mut s = model.write().unwrap_or_else(|p| p.into_inner());
                for e in events {
                    s.apply(e);
                }
            }
            for item in events.iter().filter_map(FeedItem::from_event) {
                let _ = tx.send(item);
            }
        }));
        Arc::new(AppState { centre: Mutex::new(centre), read, feed, clock, operator_token: operator_token.into() })
    }

    /// Opens the event log named by the configuration, repairing a torn tail.
    pub fn open(cfg: &DeploymentConfig) -> Result<SharedState, StartupError> {
        let io = |context: String| move |source| StartupError::Io { context, source };
        let def = cfg.questionnaire()?;
        let rules = cfg.ruleset(&def)?;
        let storage = FileStorage::open(&cfg.event_log, cfg.sync_writes)
            .map_err(io(format!("opening {}", cfg.event_log.display())))?;
        let (store, dropped) = EventStore::open_repairing(Box::new(storage))?;
        if dropped > 0 {
            tracing::warn!(bytes = dropped, "dropped a torn record at the end of the event log");
        }
        let gateway: Box<dyn MessageGateway> = match cfg.gateway.kind {
            GatewayKind::File => {
                let path = cfg.gateway.path.as_ref().expect("validated config");
                Box::new(FileGateway::open(path).map_err(io(format!("opening {}", path.display())))?)
            }
            GatewayKind::Stdout => Box::new(StdoutGateway),
            GatewayKind::Null => Box::new(NullGateway),
        };
        let notifier = Notifier::new(gateway, RetryPolicy::default(), Box::new(ThreadSleeper));
        let centre = Centre::open(cfg.centre_settings(), def, rules, store, notifier)?;
        let clock = match &cfg.clock {
            ClockConfig::System => Clock::System,
            ClockConfig::Manual { start } => Clock::Manual(Mutex::new(*start)),
        };
        Ok(Self::new(centre, clock, cfg.operator_token.clone()))
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn centre(&self) -> MutexGuard<'_, Centre> {
        self.centre.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn read_model(&self) -> RwLockReadGuard<'_, CentreState> {
        self.read.read().unwrap_or_else(|p| p.into_inner())
    }

    pub fn tick(&self) -> Result<TickOutcome, CentreError> {
        let now = self.now();
        self.centre().tick(now)
    }
}

pub fn router(state: SharedState) -> Router {
    let operator = Router::new()
        .route("/patients", post(enroll).get(list_patients))
        .route("/patients/{id}", get(patient_detail))
        .route("/patients/{id}/discharge", post(discharge))
        .route("/actions/{id}", post(act))
        .route("/stats", get(stats))
        .route("/updates", get(updates))
        .route("/sim/clock", post(set_clock))
        .route("/sim/tick", post(sim_tick))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_operator));
    let public = Router::new()
        .route("/q/{token}", get(show_questionnaire).post(submit))
        .route("/patients/{id}/contact", post(contact))
        .route("/healthz", get(|| async { "ok" }));
    operator.merge(public).with_state(state)
}

/// Binds, starts the background ticker when on the system clock, and serves until Ctrl-C.
pub async fn serve(cfg: DeploymentConfig) -> Result<(), StartupError> {
    let state = AppState::open(&cfg)?;
    if !state.clock.is_manual() {
        let ticker = state.clone();
        let every = Duration::from_secs(cfg.tick_interval_secs);
        tokio::spawn(async move {
            let mut interval = tokio::time::interval(every);
            loop {
                interval.tick().await;
                let st = ticker.clone();
                match tokio::task::spawn_blocking(move || st.tick()).await {
                    Ok(Ok(out)) if !out.dispatches.is_empty() || !out.overdue.is_empty() => {
                        tracing::info!(dispatched = out.dispatches.len(), overdue = out.overdue.len(), "tick");
                    }
                    Ok(Ok(_)) => {}
                    Ok(Err(e)) => tracing::error!("tick failed: {e}"),
                    Err(e) => tracing::error!("tick task panicked: {e}"),
                }
            }
        });
    }
    let listener = tokio::net::TcpListener::bind(&cfg.bind)
        .await
        .map_err(|source| StartupError::Io { context: format!("binding {}", cfg.bind), source })?;
    tracing::info!("listening on {}", cfg.bind);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|source| StartupError::Io { context: "serving".into(), source })
}

/// Serves `state` on an ephemeral loopback port from a background runtime.
///
/// The returned runtime owns the server; dropping it stops serving.
pub fn spawn_loopback(state: SharedState) -> std::io::Result<(std::net::SocketAddr, tokio::runtime::Runtime)> {
    let rt = tokio::runtime::Runtime::new()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind(("127.0.0.1", 0)))?;
    let addr = listener.local_addr()?;
    rt.spawn(async move {
        if let Err(e) = axum::serve(listener, router(state)).await {
            tracing::error!("loopback server stopped: {e}");
        }
    });
    Ok((addr, rt))
}

async fn require_operator(State(app): State<SharedState>, req: Request, next: Next) -> Response {
    let ok = req
        .headers()
        .get(OPERATOR_HEADER)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.as_bytes() == app.operator_token.as_bytes());
    if ok {
        next.run(req).await
    } else {
        ApiError::unauthorized().into_response()
    }
}

/// JSON body whose rejections use the error envelope.
struct Body<T>(T);

impl<T, S> FromRequest<S> for Body<T>
where
    Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Json::<T>::from_request(req, state).await.map(|Json(v)| Body(v)).map_err(|e| ApiError::bad_request(e.body_text()))
    }
}

#[derive(Serialize, Deserialize)]
pub struct Enrolled {
    pub patient_id: PatientId,
}

async fn enroll(State(app): State<SharedState>, Body(form): Body<EnrollmentForm>) -> Result<impl IntoResponse, ApiError> {
    let now = app.now();
    let patient_id = app.centre().enroll(&form, now)?;
    Ok((StatusCode::CREATED, Json(Enrolled { patient_id })))
}

#[derive(Debug, Default, Deserialize)]
struct ListParams {
    category: Option<TriageCategory>,
    overdue: Option<bool>,
    needs_action: Option<bool>,
    status: Option<PatientStatus>,
    search: Option<String>,
    cursor: Option<String>,
}

async fn list_patients(
    State(app): State<SharedState>,
    params: Result<Query<ListParams>, axum::extract::rejection::QueryRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Query(p) = params.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let filter = PatientFilter {
        category: p.category,
        overdue: p.overdue,
        needs_action: p.needs_action,
        status: p.status,
        search: p.search.filter(|s| !s.is_empty()),
    };
    let page = query::list_patients(&app.read_model(), &filter, p.cursor.as_deref())?;
    Ok(Json(page))
}

async fn patient_detail(State(app): State<SharedState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(app.centre().patient_detail(&PatientId::new(id))?))
}

async fn discharge(State(app): State<SharedState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let now = app.now();
    app.centre().discharge(&PatientId::new(id), now)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn contact(State(app): State<SharedState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let now = app.now();
    let action = app.centre().contact(&PatientId::new(id), now)?;
    Ok((StatusCode::CREATED, Json(action)))
}

async fn act(
    State(app): State<SharedState>,
    Path(id): Path<String>,
    Body(transition): Body<ActTransition>,
) -> Result<impl IntoResponse, ApiError> {
    let now = app.now();
    Ok(Json(app.centre().act(&ActionId::new(id), &transition, now)?))
}

async fn stats(State(app): State<SharedState>) -> impl IntoResponse {
    Json(query::stats(&app.read_model()))
}

fn wants_json(headers: &HeaderMap) -> bool {
    headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("application/json"))
}

#[derive(Serialize, Deserialize)]
pub struct QuestionnaireView {
    pub dispatch_id: String,
    pub items: Vec<homewatch_core::model::Item>,
}

async fn show_questionnaire(State(app): State<SharedState>, Path(token): Path<String>, headers: HeaderMap) -> Response {
    let now = app.now();
    let centre = app.centre();
    let checked = centre.questionnaire_for(&token, now);
    match (checked, wants_json(&headers)) {
        (Ok((_, dispatch_id)), true) => Json(QuestionnaireView {
            dispatch_id: dispatch_id.as_str().to_owned(),
            items: centre.questionnaire().items().to_vec(),
        })
        .into_response(),
        (Ok(_), false) => Html(page::questionnaire(centre.questionnaire(), &format!("/q/{token}"))).into_response(),
        (Err(e), true) => ApiError::from(e).into_response(),
        (Err(e), false) => {
            let e = ApiError::from(e);
            (e.status, Html(page::problem(&e.message))).into_response()
        }
    }
}

async fn submit(State(app): State<SharedState>, Path(token): Path<String>, req: Request) -> Response {
    let is_form = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/x-www-form-urlencoded"));
    if is_form {
        let answers = match Form::<BTreeMap<String, String>>::from_request(req, &()).await {
            Ok(Form(fields)) => fields
                .into_iter()
                .filter(|(_, v)| !v.trim().is_empty())
                .map(|(k, v)| (k, RawAnswer::Text(v)))
                .collect::<RawAnswers>(),
            Err(e) => return (StatusCode::BAD_REQUEST, Html(page::problem(&e.body_text()))).into_response(),
        };
        let now = app.now();
        let result = app.centre().submit(&token, &answers, now);
        match result {
            Ok(out) => Html(page::receipt(out.message_to_patient.as_deref())).into_response(),
            Err(e) => {
                let e = ApiError::from(e);
                (e.status, Html(page::problem(&e.message))).into_response()
            }
        }
    } else {
        let answers = match Body::<RawAnswers>::from_request(req, &()).await {
            Ok(Body(a)) => a,
            Err(e) => return e.into_response(),
        };
        let now = app.now();
        let result = app.centre().submit(&token, &answers, now);
        match result {
            Ok(out) => Json(out).into_response(),
            Err(e) => ApiError::from(e).into_response(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct UpdatesParams {
    since: Option<u64>,
}

struct FeedCursor {
    app: SharedState,
    rx: broadcast::Receiver<FeedItem>,
    backlog: VecDeque<FeedItem>,
    last: u64,
}

fn sse_event(item: &FeedItem) -> SseEvent {
    SseEvent::default()
        .id(item.seq.to_string())
        .event(item.kind.as_str())
        .json_data(item)
        .expect("feed items serialize")
}

/// Replays feed items after `since` (or `Last-Event-ID`) from the log, then follows live commits.
async fn updates(
    State(app): State<SharedState>,
    Query(p): Query<UpdatesParams>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, ApiError> {
    let since = p
        .since
        .or_else(|| headers.get("last-event-id").and_then(|v| v.to_str().ok()).and_then(|v| v.parse().ok()))
        .unwrap_or(0);
    // Subscribe before reading the log so nothing committed in between is missed.
    let rx = app.feed.subscribe();
    let backlog = app.centre().feed_since(since).map_err(CentreError::from)?;
    let cursor = FeedCursor { app, rx, backlog: backlog.into(), last: since };
    let stream = futures::stream::unfold(cursor, |mut c| async move {
        loop {
            if let Some(item) = c.backlog.pop_front() {
                if item.seq > c.last {
                    c.last = item.seq;
                    return Some((Ok(sse_event(&item)), c));
                }
                continue;
            }
            match c.rx.recv().await {
                Ok(item) if item.seq > c.last => {
                    c.last = item.seq;
                    return Some((Ok(sse_event(&item)), c));
                }
                Ok(_) => {}
                Err(broadcast::error::RecvError::Lagged(_)) => {
                    let missed = c.app.centre().feed_since(c.last);
                    match missed {
                        Ok(items) => c.backlog = items.into(),
                        Err(e) => {
                            tracing::error!("feed catch-up failed: {e}");
                            return None;
                        }
                    }
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClockUpdate {
    pub now: Timestamp,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct TickRequest {
    #[serde(default)]
    pub now: Option<Timestamp>,
}

fn advance(app: &AppState, to: Timestamp) -> Result<(), ApiError> {
    let Clock::Manual(t) = &app.clock else {
        return Err(ApiError::new(StatusCode::CONFLICT, "manual_clock_only", "the server runs on the system clock"));
    };
    let mut t = t.lock().unwrap_or_else(|p| p.into_inner());
    if to < *t {
        return Err(ApiError::new(StatusCode::CONFLICT, "clock_backwards", format!("clock is at {}", *t)));
    }
    *t = to;
    Ok(())
}

async fn set_clock(State(app): State<SharedState>, Body(u): Body<ClockUpdate>) -> Result<impl IntoResponse, ApiError> {
    advance(&app, u.now)?;
    Ok(Json(ClockUpdate { now: app.now() }))
}

/// Runs one scheduler pass; answers carry raw links, so only manual-clock servers expose it.
async fn sim_tick(State(app): State<SharedState>, Body(r): Body<TickRequest>) -> Result<impl IntoResponse, ApiError> {
    let now = r.now.unwrap_or_else(|| app.now());
    advance(&app, now)?;
    Ok(Json(app.tick()?))
}
