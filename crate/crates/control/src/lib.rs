//! Localhost HTTP and WebSocket service that steers one pipeline.
//!
//! | method | path | |
//! |--------|------|-|
//! | GET | `/api/status` | phase, stats, failure of the last run |
//! | GET | `/api/screens` | enumerated screens |
//! | GET | `/api/config` | configuration as flat `section.key` entries |
//! | PATCH | `/api/config` | merge entries; only `fps` and `region` while running |
//! | POST | `/api/pipeline/start` | 409 while running |
//! | POST | `/api/pipeline/stop` | 409 while idle |
//! | POST | `/api/map/generate` | build and save a MAP file |
//! | WS | `/ws/preview` | PNG snapshots, at most 480 px wide and 5 per second |
//! | WS | `/ws/stats` | stats snapshot every 500 ms |

use std::io::Cursor;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::response::Response;
use axum::routing::{get, post};
use axum::{Json, Router};
use image::RgbImage;
use quiltrt_core::iohub::{generate_map, IoError, MapGenError};
use quiltrt_core::lut::QuiltGeometry;
use quiltrt_core::pipeline::StageStats;
use quiltrt_core::resample::resize_rgb;
use serde::Deserialize;
use serde_json::{json, Value};

mod error;
mod patch;
mod state;

pub use error::ApiError;
pub use patch::{is_hot, merge_patch, Patch};
pub use state::{Phase, Service};

pub const DEFAULT_PORT: u16 = 8787;
pub const PREVIEW_MAX_WIDTH: u32 = 480;
pub const PREVIEW_INTERVAL: Duration = Duration::from_millis(200);
pub const STATS_INTERVAL: Duration = Duration::from_millis(500);

type AppState = Arc<Service>;

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/api/status", get(status))
        .route("/api/screens", get(screens))
        .route("/api/config", get(get_config).patch(patch_config))
        .route("/api/pipeline/start", post(start))
        .route("/api/pipeline/stop", post(stop))
        .route("/api/map/generate", post(generate))
        .route("/ws/preview", get(ws_preview))
        .route("/ws/stats", get(ws_stats))
        .fallback(|| async { ApiError::not_found("no such route") })
        .with_state(service)
}

/// Serves on 127.0.0.1:`port` until the future is dropped.
pub async fn serve(service: Arc<Service>, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(SocketAddr::from((Ipv4Addr::LOCALHOST, port))).await?;
    log::info!("control service on http://{}", listener.local_addr()?);
    axum::serve(listener, router(service)).await
}

fn parse_body(body: &Bytes) -> Result<Value, ApiError> {
    if body.is_empty() {
        return Ok(json!({}));
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))
}

fn status_doc(svc: &Service) -> Value {
    let failure = svc.handle().and_then(|h| h.failure()).map(|f| {
        json!({"stage": f.stage, "message": f.message})
    });
    json!({
        "phase": svc.phase(),
        "stats": svc.stats().unwrap_or_default(),
        "failure": failure,
    })
}

async fn status(State(svc): State<AppState>) -> Json<Value> {
    Json(status_doc(&svc))
}

async fn screens(State(svc): State<AppState>) -> Result<Json<Value>, ApiError> {
    match svc.screens() {
        Ok(list) => Ok(Json(json!({"supported": true, "screens": list}))),
        Err(IoError::Unsupported(what)) => Ok(Json(json!({
            "supported": false,
            "screens": [],
            "message": format!("{what} capture is not available on this host"),
        }))),
        Err(e) => Err(ApiError::internal(e.to_string())),
    }
}

async fn get_config(State(svc): State<AppState>) -> Json<Value> {
    Json(json!({"config": svc.config_entries()}))
}

async fn patch_config(State(svc): State<AppState>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let patch = Patch::from_json(&parse_body(&body)?)?;
    let entries = svc.patch_config(&patch)?;
    Ok(Json(json!({"config": entries})))
}

async fn start(State(svc): State<AppState>) -> Result<Json<Value>, ApiError> {
    let s = svc.clone();
    blocking(move || s.start()).await??;
    Ok(Json(status_doc(&svc)))
}

async fn stop(State(svc): State<AppState>) -> Result<Json<Value>, ApiError> {
    let s = svc.clone();
    let stats = blocking(move || s.stop()).await??;
    Ok(Json(json!({"phase": svc.phase(), "stats": stats})))
}

#[derive(Debug, Deserialize)]
struct GenerateRequest {
    /// The calibration document, as an object or as its text.
    calibration: Value,
    rows: u16,
    cols: u16,
    tile_w: u32,
    tile_h: u32,
    output: PathBuf,
    #[serde(default)]
    force: bool,
    /// Point the configuration at the new file (only when idle).
    #[serde(default = "yes")]
    r#use: bool,
}

fn yes() -> bool {
    true
}

async fn generate(State(svc): State<AppState>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: GenerateRequest = serde_json::from_value(parse_body(&body)?)
        .map_err(|e| ApiError::bad_request(format!("invalid request: {e}")))?;
    let text = match &req.calibration {
        Value::String(s) => s.clone(),
        Value::Object(_) => req.calibration.to_string(),
        _ => return Err(ApiError::bad_request("calibration must be an object or a string")),
    };
    let geometry = QuiltGeometry {
        rows: req.rows,
        cols: req.cols,
        tile_w: req.tile_w,
        tile_h: req.tile_h,
    };
    let output = req.output.clone();
    let header = blocking(move || generate_map(&text, &geometry, &output, req.force))
        .await?
        .map_err(|e| match e {
            MapGenError::Calibration(_) => ApiError::bad_request(e.to_string()),
            MapGenError::OutputExists(_) => ApiError::conflict(e.to_string()),
            MapGenError::Lut(quiltrt_core::lut::LutError::InvalidGeometry(_)) => {
                ApiError::bad_request(e.to_string())
            }
            MapGenError::Lut(_) => ApiError::internal(e.to_string()),
        })?;
    let config_updated = req.r#use && svc.use_map(&req.output);
    Ok(Json(json!({
        "path": req.output,
        "screen_w": header.screen_w,
        "screen_h": header.screen_h,
        "rows": header.geometry.rows,
        "cols": header.geometry.cols,
        "tile_w": header.geometry.tile_w,
        "tile_h": header.geometry.tile_h,
        "summary": header.to_string(),
        "config_updated": config_updated,
    })))
}

#[derive(Debug, Deserialize, Default, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum PreviewKind {
    #[default]
    Native,
    Source,
}

#[derive(Debug, Deserialize, Default)]
struct PreviewQuery {
    #[serde(default)]
    frame: PreviewKind,
}

async fn ws_preview(
    State(svc): State<AppState>,
    Query(q): Query<PreviewQuery>,
    ws: WebSocketUpgrade,
) -> Response {
    ws.on_upgrade(move |socket| preview_loop(svc, q.frame, socket))
}

/// Downscales to at most [`PREVIEW_MAX_WIDTH`] wide and encodes PNG.
pub fn encode_preview(frame: &RgbImage) -> Vec<u8> {
    let (w, h) = frame.dimensions();
    let small;
    let frame = if w > PREVIEW_MAX_WIDTH {
        let sh = ((h as u64 * PREVIEW_MAX_WIDTH as u64 + w as u64 / 2) / w as u64).max(1) as u32;
        small = resize_rgb(frame, PREVIEW_MAX_WIDTH, sh);
        &small
    } else {
        frame
    };
    let mut out = Vec::new();
    frame
        .write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png)
        .expect("PNG encoding to memory");
    out
}

async fn send_idle(mut socket: WebSocket) {
    let _ = socket.send(Message::Text("idle".into())).await;
    let _ = socket.send(Message::Close(None)).await;
}

async fn preview_loop(svc: AppState, kind: PreviewKind, mut socket: WebSocket) {
    let mut ticker = tokio::time::interval(PREVIEW_INTERVAL);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let mut last: Option<(bool, u64)> = None;
    loop {
        ticker.tick().await;
        let handle = match svc.handle() {
            Some(h) if !h.is_finished() => h,
            _ => return send_idle(socket).await,
        };
        let p = handle.preview();
        // Keyed by capture index; allocations get reused between frames.
        let picked = match (kind, p.native, p.native_index) {
            (PreviewKind::Native, Some(f), Some(i)) => Some((f, (true, i))),
            _ => p.source.zip(p.source_index).map(|(f, i)| (f, (false, i))),
        };
        let Some((frame, key)) = picked else { continue };
        if last == Some(key) {
            continue;
        }
        last = Some(key);
        let png = match tokio::task::spawn_blocking(move || encode_preview(&frame)).await {
            Ok(png) => png,
            Err(_) => return,
        };
        // A slow client only delays its own next snapshot.
        if socket.send(Message::Binary(png.into())).await.is_err() {
            return;
        }
    }
}

async fn ws_stats(State(svc): State<AppState>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| stats_loop(svc, socket))
}

async fn stats_loop(svc: AppState, mut socket: WebSocket) {
    let mut ticker = tokio::time::interval(STATS_INTERVAL);
    let mut saw_running = false;
    loop {
        ticker.tick().await;
        let phase = svc.phase();
        let (stats, is_final) = match phase {
            Phase::Idle if saw_running => {
                saw_running = false;
                (svc.stats().unwrap_or_default(), true)
            }
            Phase::Idle => (StageStats::default(), false),
            _ => {
                saw_running = true;
                (svc.stats().unwrap_or_default(), false)
            }
        };
        let msg = json!({"phase": phase, "stats": stats, "final": is_final});
        if socket.send(Message::Text(msg.to_string().into())).await.is_err() {
            return;
        }
    }
}
