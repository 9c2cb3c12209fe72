//! Live session gateway: one paced engine thread, an ordered command queue
//! and a server-sent-event telemetry stream.
//!
//! Endpoints: `GET /state`, `GET /scenario`, `POST /command`, `GET /stream`,
//! `GET /history?from=T`.

use std::collections::{HashMap, VecDeque};
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::{mpsc, Arc, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use neonfilm_core::engine::rng::mix64;
use neonfilm_core::engine::InitialConditions;
use neonfilm_core::{Command, EngineError, Scenario, Simulation, TelemetryRecord};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::{broadcast, oneshot, watch};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid session configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug)]
pub struct ServeConfig {
    pub scenario: Scenario,
    /// Simulated seconds per wall second.
    pub speed: f64,
    pub tick: Duration,
    /// Upper bound on engine steps per tick; the session falls behind
    /// wall time rather than stall command intake.
    pub max_steps_per_tick: u64,
    pub history_capacity: usize,
    /// Frames a subscriber may fall behind before it is dropped.
    pub stream_buffer: usize,
}

impl ServeConfig {
    pub fn new(scenario: Scenario, speed: f64) -> Result<Self, GatewayError> {
        if !(speed.is_finite() && speed >= 1.0) {
            return Err(GatewayError::Config(format!(
                "speed must be at least 1, got {speed}"
            )));
        }
        scenario.validate()?;
        Ok(Self {
            scenario,
            speed,
            tick: Duration::from_millis(10),
            max_steps_per_tick: 200_000,
            history_capacity: 500_000,
            stream_buffer: 4096,
        })
    }
}

/// Open-ended warm start with an empty cell at the monitor power.
pub fn default_session_scenario() -> Scenario {
    let mut s = Scenario::hold(
        InitialConditions {
            t_cell_k: 29.5,
            n_total_mol: 0.0,
            power_dbm: -30.0,
        },
        0.0,
    );
    s.name = "live".into();
    s.duration_s = None;
    s
}

#[derive(Clone, Debug, Serialize)]
pub struct StreamFrame<'a> {
    pub session_id: &'a str,
    pub frame: u64,
    pub speed: f64,
    /// Wall seconds since the session started.
    pub wall_time_s: f64,
    pub record: &'a TelemetryRecord,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Running,
    Paused,
    Aborted,
}

#[derive(Clone, Debug, Serialize)]
struct Snapshot {
    t_s: f64,
    status: SessionStatus,
    message: Option<String>,
    frames: u64,
    record: TelemetryRecord,
}

#[derive(Debug)]
enum Control {
    Engine(Command),
    Pause,
    Resume,
    Snapshot,
}

impl Control {
    fn kind(&self) -> &'static str {
        match self {
            Control::Engine(Command::SetRamp { .. }) => "set_ramp",
            Control::Engine(Command::Inject { .. }) => "inject",
            Control::Engine(Command::SetPower { .. }) => "set_power",
            Control::Engine(Command::Hold { .. }) => "hold",
            Control::Pause => "pause",
            Control::Resume => "resume",
            Control::Snapshot => "snapshot",
        }
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Ack {
    Applied {
        client_id: String,
        seq: u64,
        kind: String,
        t_s: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        record: Option<TelemetryRecord>,
    },
    Rejected {
        #[serde(skip_serializing_if = "Option::is_none")]
        client_id: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none")]
        seq: Option<u64>,
        code: String,
        reason: String,
    },
    Duplicate {
        client_id: String,
        seq: u64,
        last_seq: u64,
    },
}

impl Ack {
    fn rejected(
        client_id: Option<String>,
        seq: Option<u64>,
        code: &str,
        reason: impl Into<String>,
    ) -> Self {
        Ack::Rejected {
            client_id,
            seq,
            code: code.into(),
            reason: reason.into(),
        }
    }
}

enum Request {
    Command {
        client_id: String,
        seq: u64,
        control: Control,
        reply: oneshot::Sender<Ack>,
    },
    Shutdown,
}

struct Shared {
    session_id: String,
    speed: f64,
    scenario: Value,
    model: Value,
    snapshot: RwLock<Snapshot>,
    /// (sim time, serialized frame), time ordered.
    history: RwLock<VecDeque<(f64, Arc<str>)>>,
    frames: broadcast::Sender<Arc<str>>,
    requests: mpsc::Sender<Request>,
    closing: watch::Receiver<bool>,
}

pub struct Gateway {
    addr: SocketAddr,
    requests: mpsc::Sender<Request>,
    closing: watch::Sender<bool>,
    engine: Option<JoinHandle<()>>,
    server: tokio::task::JoinHandle<()>,
}

impl Gateway {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops the engine, ends open streams and waits for the listener.
    pub async fn shutdown(mut self) {
        let _ = self.requests.send(Request::Shutdown);
        let _ = self.closing.send(true);
        if let Some(h) = self.engine.take() {
            let _ = tokio::task::spawn_blocking(move || h.join()).await;
        }
        let _ = (&mut self.server).await;
    }
}

fn session_id(seed: u64) -> String {
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_nanos() as u64);
    format!(
        "{:016x}",
        mix64(nanos ^ mix64(seed) ^ std::process::id() as u64)
    )
}

pub async fn start(cfg: ServeConfig, addr: SocketAddr) -> Result<Gateway, GatewayError> {
    let sim = Simulation::from_scenario(&cfg.scenario)?;
    let model = serde_json::to_value(sim.model()).expect("model serializes");
    let scenario = serde_json::to_value(&cfg.scenario).expect("scenario serializes");
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| GatewayError::Bind { addr, source })?;
    let addr = listener
        .local_addr()
        .map_err(|source| GatewayError::Bind { addr, source })?;

    let (req_tx, req_rx) = mpsc::channel();
    let (frames, _) = broadcast::channel(cfg.stream_buffer.max(1));
    let (closing_tx, closing_rx) = watch::channel(false);
    let session_id = session_id(cfg.scenario.seed);
    let shared = Arc::new(Shared {
        session_id,
        speed: cfg.speed,
        scenario,
        model,
        snapshot: RwLock::new(Snapshot {
            t_s: 0.0,
            status: SessionStatus::Running,
            message: None,
            frames: 0,
            record: sim.peek_record(),
        }),
        history: RwLock::new(VecDeque::new()),
        frames,
        requests: req_tx.clone(),
        closing: closing_rx.clone(),
    });

    let engine_shared = shared.clone();
    let stride_s = cfg.scenario.stride_s;
    let engine = std::thread::Builder::new()
        .name("neonfilm-engine".into())
        .spawn(move || EngineLoop::new(sim, engine_shared, &cfg, stride_s).run(req_rx))
        .expect("spawn engine thread");

    let app = router(shared);
    let mut closing = closing_rx;
    let server = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = closing.wait_for(|c| *c).await;
            })
            .await;
    });
    Ok(Gateway {
        addr,
        requests: req_tx,
        closing: closing_tx,
        engine: Some(engine),
        server,
    })
}

struct EngineLoop {
    sim: Simulation,
    shared: Arc<Shared>,
    speed: f64,
    tick: Duration,
    max_steps: u64,
    history_capacity: usize,
    stride_steps: u64,
    started: Instant,
    anchor_wall: Instant,
    anchor_sim: f64,
    status: SessionStatus,
    message: Option<String>,
    frame: u64,
    last_seq: HashMap<String, u64>,
}

impl EngineLoop {
    fn new(sim: Simulation, shared: Arc<Shared>, cfg: &ServeConfig, stride_s: f64) -> Self {
        let stride_steps = ((stride_s / sim.dt_s()).round() as u64).max(1);
        let now = Instant::now();
        Self {
            sim,
            shared,
            speed: cfg.speed,
            tick: cfg.tick,
            max_steps: cfg.max_steps_per_tick.max(1),
            history_capacity: cfg.history_capacity.max(1),
            stride_steps,
            started: now,
            anchor_wall: now,
            anchor_sim: 0.0,
            status: SessionStatus::Running,
            message: None,
            frame: 0,
            last_seq: HashMap::new(),
        }
    }

    fn run(mut self, requests: mpsc::Receiver<Request>) {
        self.emit();
        loop {
            let first = match requests.recv_timeout(self.tick) {
                Ok(r) => Some(r),
                Err(mpsc::RecvTimeoutError::Timeout) => None,
                Err(mpsc::RecvTimeoutError::Disconnected) => return,
            };
            let pending = first
                .into_iter()
                .chain(std::iter::from_fn(|| requests.try_recv().ok()));
            for req in pending.collect::<Vec<_>>() {
                match req {
                    Request::Shutdown => return,
                    Request::Command {
                        client_id,
                        seq,
                        control,
                        reply,
                    } => {
                        let ack = self.handle(client_id, seq, control);
                        let _ = reply.send(ack);
                    }
                }
            }
            self.advance();
            self.publish_snapshot();
        }
    }

    fn handle(&mut self, client_id: String, seq: u64, control: Control) -> Ack {
        if let Some(&last) = self.last_seq.get(&client_id) {
            if seq <= last {
                return Ack::Duplicate {
                    client_id,
                    seq,
                    last_seq: last,
                };
            }
        }
        self.last_seq.insert(client_id.clone(), seq);
        let kind = control.kind().to_string();
        if self.status == SessionStatus::Aborted && !matches!(control, Control::Snapshot) {
            let reason = self
                .message
                .clone()
                .unwrap_or_else(|| "session aborted".into());
            return Ack::rejected(Some(client_id), Some(seq), "session_aborted", reason);
        }
        let mut record = None;
        match control {
            Control::Engine(cmd) => {
                if let Err(e) = self.sim.apply(&cmd) {
                    let reason = match e {
                        EngineError::Validation(m) => m,
                        other => other.to_string(),
                    };
                    return Ack::rejected(Some(client_id), Some(seq), "out_of_range", reason);
                }
                // command events are part of the run log, not the stream
                self.sim.drain_events();
            }
            Control::Pause => {
                if self.status == SessionStatus::Running {
                    self.status = SessionStatus::Paused;
                }
            }
            Control::Resume => {
                if self.status == SessionStatus::Paused {
                    self.status = SessionStatus::Running;
                    self.anchor_wall = Instant::now();
                    self.anchor_sim = self.sim.time_s();
                }
            }
            Control::Snapshot => record = Some(self.sim.peek_record()),
        }
        self.publish_snapshot();
        Ack::Applied {
            client_id,
            seq,
            kind,
            t_s: self.sim.time_s(),
            record,
        }
    }

    fn advance(&mut self) {
        if self.status != SessionStatus::Running {
            return;
        }
        let dt = self.sim.dt_s();
        let target = self.anchor_sim + self.anchor_wall.elapsed().as_secs_f64() * self.speed;
        let mut n = 0;
        while self.sim.time_s() + 0.5 * dt <= target {
            if n == self.max_steps {
                // behind wall time: drop the backlog instead of chasing it
                self.anchor_wall = Instant::now();
                self.anchor_sim = self.sim.time_s();
                break;
            }
            if let Err(e) = self.sim.step() {
                self.status = SessionStatus::Aborted;
                self.message = Some(e.to_string());
                return;
            }
            self.sim.drain_events();
            n += 1;
            if self.sim.steps().is_multiple_of(self.stride_steps) {
                self.emit();
            }
        }
    }

    fn emit(&mut self) {
        let record = self.sim.take_record();
        let frame = StreamFrame {
            session_id: &self.shared.session_id,
            frame: self.frame,
            speed: self.speed,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            record: &record,
        };
        let text: Arc<str> = serde_json::to_string(&frame)
            .expect("frame serializes")
            .into();
        self.frame += 1;
        {
            let mut h = self.shared.history.write().expect("history lock");
            if h.len() == self.history_capacity {
                h.pop_front();
            }
            h.push_back((record.t_s, text.clone()));
        }
        // no subscribers is not an error
        let _ = self.shared.frames.send(text);
    }

    fn publish_snapshot(&self) {
        let mut s = self.shared.snapshot.write().expect("snapshot lock");
        s.t_s = self.sim.time_s();
        s.status = self.status;
        s.message = self.message.clone();
        s.frames = self.frame;
        s.record = self.sim.peek_record();
    }
}

fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/state", get(get_state))
        .route("/scenario", get(get_scenario))
        .route("/command", post(post_command))
        .route("/stream", get(get_stream))
        .route("/history", get(get_history))
        .with_state(shared)
}

async fn get_state(State(shared): State<Arc<Shared>>) -> Json<Value> {
    let s = shared.snapshot.read().expect("snapshot lock").clone();
    Json(json!({
        "session_id": shared.session_id,
        "speed": shared.speed,
        "t_s": s.t_s,
        "status": s.status,
        "paused": s.status == SessionStatus::Paused,
        "message": s.message,
        "frames": s.frames,
        "record": s.record,
    }))
}

async fn get_scenario(State(shared): State<Arc<Shared>>) -> Json<Value> {
    Json(json!({
        "session_id": shared.session_id,
        "scenario": shared.scenario,
        "model": shared.model,
    }))
}

fn ack_response(ack: Ack) -> Response {
    let code = match &ack {
        Ack::Applied { .. } | Ack::Duplicate { .. } => StatusCode::OK,
        Ack::Rejected { code, .. } if code == "malformed" || code == "unknown_kind" => {
            StatusCode::BAD_REQUEST
        }
        Ack::Rejected { code, .. } if code == "session_aborted" => StatusCode::CONFLICT,
        Ack::Rejected { code, .. } if code == "unavailable" => StatusCode::SERVICE_UNAVAILABLE,
        Ack::Rejected { .. } => StatusCode::UNPROCESSABLE_ENTITY,
    };
    (code, Json(ack)).into_response()
}

/// Splits a command message into its envelope and the control it carries.
pub fn parse_command(body: &[u8]) -> Result<(String, u64, String), Ack> {
    let parsed = parse_message(body)?;
    Ok((parsed.0, parsed.1, parsed.2.kind().to_string()))
}

fn parse_message(body: &[u8]) -> Result<(String, u64, Control), Ack> {
    let malformed = |reason: String| Ack::rejected(None, None, "malformed", reason);
    let value: Value =
        serde_json::from_slice(body).map_err(|e| malformed(format!("invalid JSON: {e}")))?;
    let Value::Object(mut obj) = value else {
        return Err(malformed("command message must be a JSON object".into()));
    };
    let client_id = match obj.remove("client_id") {
        Some(Value::String(s)) if !s.is_empty() => s,
        _ => return Err(malformed("client_id must be a non-empty string".into())),
    };
    let seq = match obj.remove("seq").as_ref().and_then(Value::as_u64) {
        Some(n) => n,
        None => {
            return Err(Ack::rejected(
                Some(client_id),
                None,
                "malformed",
                "seq must be a non-negative integer",
            ))
        }
    };
    let reject = |code: &str, reason: String| {
        Ack::rejected(Some(client_id.clone()), Some(seq), code, reason)
    };
    let kind = match obj.get("kind") {
        Some(Value::String(k)) => k.clone(),
        _ => return Err(reject("malformed", "kind must be a string".into())),
    };
    let control = match kind.as_str() {
        "pause" | "resume" | "snapshot" => {
            if let Some(extra) = obj.keys().find(|k| *k != "kind") {
                return Err(reject(
                    "malformed",
                    format!("unknown field `{extra}` for {kind}"),
                ));
            }
            match kind.as_str() {
                "pause" => Control::Pause,
                "resume" => Control::Resume,
                _ => Control::Snapshot,
            }
        }
        "set_ramp" | "inject" | "set_power" | "hold" => {
            let cmd: Command = serde_json::from_value(Value::Object(obj))
                .map_err(|e| reject("malformed", e.to_string()))?;
            Control::Engine(cmd)
        }
        other => {
            return Err(reject(
                "unknown_kind",
                format!("unknown command kind `{other}`"),
            ))
        }
    };
    Ok((client_id, seq, control))
}

async fn post_command(State(shared): State<Arc<Shared>>, body: Bytes) -> Response {
    let (client_id, seq, control) = match parse_message(&body) {
        Ok(p) => p,
        Err(ack) => return ack_response(ack),
    };
    let (reply, rx) = oneshot::channel();
    let sent = shared.requests.send(Request::Command {
        client_id: client_id.clone(),
        seq,
        control,
        reply,
    });
    let unavailable = || {
        ack_response(Ack::rejected(
            Some(client_id.clone()),
            Some(seq),
            "unavailable",
            "engine stopped",
        ))
    };
    if sent.is_err() {
        return unavailable();
    }
    match rx.await {
        Ok(ack) => ack_response(ack),
        Err(_) => unavailable(),
    }
}

#[derive(Debug, Deserialize)]
struct HistoryQuery {
    from: Option<f64>,
}

async fn get_history(State(shared): State<Arc<Shared>>, Query(q): Query<HistoryQuery>) -> Response {
    let from = q.from.unwrap_or(f64::NEG_INFINITY);
    let mut body = String::new();
    {
        let h = shared.history.read().expect("history lock");
        let start = h.partition_point(|(t, _)| *t < from);
        body.push_str("{\"session_id\":");
        body.push_str(&serde_json::to_string(&shared.session_id).expect("string serializes"));
        body.push_str(",\"frames\":[");
        for (i, (_, frame)) in h.range(start..).enumerate() {
            if i > 0 {
                body.push(',');
            }
            body.push_str(frame);
        }
        body.push_str("]}");
    }
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn get_stream(
    State(shared): State<Arc<Shared>>,
) -> Sse<impl Stream<Item = Result<SseEvent, Infallible>>> {
    let rx = shared.frames.subscribe();
    let closing = shared.closing.clone();
    let stream = futures::stream::unfold((rx, closing), |(mut rx, mut closing)| async move {
        if *closing.borrow() {
            return None;
        }
        let next = tokio::select! {
            r = rx.recv() => r,
            _ = closing.wait_for(|c| *c) => return None,
        };
        match next {
            Ok(frame) => Some((Ok(SseEvent::default().data(frame.as_ref())), (rx, closing))),
            // lagged subscribers are dropped; the engine never waits
            Err(_) => None,
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kind_of(body: &str) -> Result<String, String> {
        parse_command(body.as_bytes())
            .map(|p| p.2)
            .map_err(|a| match a {
                Ack::Rejected { code, .. } => code,
                other => panic!("unexpected {other:?}"),
            })
    }

    #[test]
    fn parses_engine_and_session_controls() {
        assert_eq!(
            kind_of(r#"{"client_id":"a","seq":1,"kind":"set_power","dbm":5}"#).unwrap(),
            "set_power"
        );
        assert_eq!(
            kind_of(r#"{"client_id":"a","seq":2,"kind":"pause"}"#).unwrap(),
            "pause"
        );
        assert_eq!(
            kind_of(r#"{"client_id":"a","seq":3,"kind":"inject","moles":1e-4,"flow_sccm":1}"#)
                .unwrap(),
            "inject"
        );
    }

    #[test]
    fn malformed_messages_are_classified() {
        assert_eq!(kind_of("not json").unwrap_err(), "malformed");
        assert_eq!(
            kind_of(r#"{"seq":1,"kind":"pause"}"#).unwrap_err(),
            "malformed"
        );
        assert_eq!(
            kind_of(r#"{"client_id":"a","seq":-1,"kind":"pause"}"#).unwrap_err(),
            "malformed"
        );
        assert_eq!(
            kind_of(r#"{"client_id":"a","seq":1,"kind":"warp"}"#).unwrap_err(),
            "unknown_kind"
        );
        assert_eq!(
            kind_of(r#"{"client_id":"a","seq":1,"kind":"set_power","dbm":5,"extra":1}"#)
                .unwrap_err(),
            "malformed"
        );
        assert_eq!(
            kind_of(r#"{"client_id":"a","seq":1,"kind":"pause","x":1}"#).unwrap_err(),
            "malformed"
        );
    }

    #[test]
    fn speed_below_real_time_is_refused() {
        assert!(ServeConfig::new(default_session_scenario(), 0.5).is_err());
        assert!(ServeConfig::new(default_session_scenario(), 60.0).is_ok());
    }

    #[test]
    fn default_session_is_open_ended() {
        let s = default_session_scenario();
        assert!(s.duration_s.is_none());
        assert!(s.schedule.is_empty());
        s.validate().unwrap();
    }
}
