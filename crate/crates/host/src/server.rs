//! HTTP carrier for the wire protocol.
//!
//! One worker thread owns the firmware and handles jobs strictly in arrival
//! order; handlers only talk to it through the queue.

use std::convert::Infallible;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use emr_core::firmware::{Phase, Snapshot};
use emr_core::mapping::ScanConfig;
use emr_core::Firmware;
use futures::Stream;
use serde::Serialize;
use tokio::sync::{broadcast, mpsc, oneshot};

use crate::session::Session;

/// What one executed command looked like, as pushed on `/events`.
#[derive(Debug, Clone, Serialize)]
pub struct CommandEvent {
    pub seq: u64,
    pub request: String,
    pub response: String,
    pub state: Snapshot,
}

enum Job {
    Command {
        frame: Vec<u8>,
        reply: oneshot::Sender<Result<Vec<u8>, String>>,
    },
    State(oneshot::Sender<Snapshot>),
    LocalMap(oneshot::Sender<Option<(Vec<u8>, String)>>),
    ScanConfig {
        cfg: ScanConfig,
        reply: oneshot::Sender<Result<(), String>>,
    },
}

/// Handle to a running emulator worker.
#[derive(Clone)]
pub struct Emulator {
    jobs: mpsc::Sender<Job>,
    events: broadcast::Sender<CommandEvent>,
}

/// Boots the session's firmware on its own thread.
pub fn spawn(session: Session) -> Emulator {
    let (jobs, rx) = mpsc::channel(64);
    let (events, _) = broadcast::channel(256);
    let tx = events.clone();
    let fw = session.boot();
    std::thread::Builder::new()
        .name("emr-firmware".into())
        .spawn(move || worker(fw, session, rx, tx))
        .expect("spawn firmware worker");
    Emulator { jobs, events }
}

fn worker(mut fw: Firmware, session: Session, mut rx: mpsc::Receiver<Job>, events: broadcast::Sender<CommandEvent>) {
    let mut seq = 0;
    while let Some(job) = rx.blocking_recv() {
        match job {
            Job::Command { frame, reply } => {
                if fw.phase() == Phase::Faulted {
                    let _ = reply.send(Err(fw.fault_report().unwrap_or_default()));
                    continue;
                }
                let response = fw.execute_frame(&frame, &session.scene, &session.pose);
                seq += 1;
                // Nobody listening is fine.
                let _ = events.send(CommandEvent {
                    seq,
                    request: hex::encode(&frame),
                    response: hex::encode(&response),
                    state: fw.snapshot(),
                });
                let _ = reply.send(Ok(response));
            }
            Job::State(reply) => {
                let _ = reply.send(fw.snapshot());
            }
            Job::LocalMap(reply) => {
                let _ = reply.send(fw.last_map().map(|m| (m.to_bytes(), m.to_pbm())));
            }
            Job::ScanConfig { cfg, reply } => {
                let _ = reply.send(fw.set_scan_config(cfg).map_err(|e| e.to_string()));
            }
        }
    }
}

impl Emulator {
    async fn call<T>(&self, job: impl FnOnce(oneshot::Sender<T>) -> Job) -> Result<T, Response> {
        let (tx, rx) = oneshot::channel();
        let gone = || (StatusCode::INTERNAL_SERVER_ERROR, "firmware worker stopped").into_response();
        self.jobs.send(job(tx)).await.map_err(|_| gone())?;
        rx.await.map_err(|_| gone())
    }

    pub fn subscribe(&self) -> broadcast::Receiver<CommandEvent> {
        self.events.subscribe()
    }
}

pub fn router(emu: Emulator) -> Router {
    Router::new()
        .route("/command", post(command))
        .route("/state", get(state))
        .route("/map/local", get(local_map))
        .route("/events", get(events))
        .route("/scan-config", put(scan_config))
        .with_state(emu)
}

async fn command(State(emu): State<Emulator>, body: Bytes) -> Response {
    let text = String::from_utf8_lossy(&body);
    let frame = match hex::decode(text.trim()) {
        Ok(f) => f,
        Err(e) => return (StatusCode::BAD_REQUEST, format!("malformed hex: {e}")).into_response(),
    };
    match emu.call(|reply| Job::Command { frame, reply }).await {
        Ok(Ok(response)) => hex::encode(response).into_response(),
        Ok(Err(fault)) => (StatusCode::SERVICE_UNAVAILABLE, format!("firmware faulted\n{fault}")).into_response(),
        Err(r) => r,
    }
}

async fn state(State(emu): State<Emulator>) -> Response {
    match emu.call(Job::State).await {
        Ok(s) => Json(s).into_response(),
        Err(r) => r,
    }
}

async fn local_map(State(emu): State<Emulator>, headers: HeaderMap) -> Response {
    let accept = headers.get(header::ACCEPT).and_then(|v| v.to_str().ok()).unwrap_or("");
    let wants_pbm = accept.contains("image/x-portable-bitmap") || accept.contains("text/plain");
    match emu.call(Job::LocalMap).await {
        Ok(Some((_, pbm))) if wants_pbm => ([(header::CONTENT_TYPE, "image/x-portable-bitmap")], pbm).into_response(),
        Ok(Some((bin, _))) => ([(header::CONTENT_TYPE, "application/octet-stream")], bin).into_response(),
        Ok(None) => (StatusCode::NOT_FOUND, "no scan yet").into_response(),
        Err(r) => r,
    }
}

async fn scan_config(State(emu): State<Emulator>, body: Bytes) -> Response {
    let cfg: ScanConfig = match serde_json::from_slice(&body) {
        Ok(c) => c,
        Err(e) => return (StatusCode::BAD_REQUEST, e.to_string()).into_response(),
    };
    match emu.call(|reply| Job::ScanConfig { cfg, reply }).await {
        Ok(Ok(())) => StatusCode::NO_CONTENT.into_response(),
        Ok(Err(e)) => (StatusCode::BAD_REQUEST, e).into_response(),
        Err(r) => r,
    }
}

async fn events(State(emu): State<Emulator>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = emu.subscribe();
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(ev) => {
                    let data = serde_json::to_string(&ev).expect("event serializes");
                    let event = Event::default().event("command").id(ev.seq.to_string()).data(data);
                    return Some((Ok(event), rx));
                }
                // A slow reader skips ahead rather than stalling the worker.
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}
