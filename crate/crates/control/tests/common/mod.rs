#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use quiltrt_control::{router, Service};
use quiltrt_core::iohub::{HeadlessScreens, ScreenProvider, SourceSpec};
use quiltrt_core::pipeline::{MapSource, PipelineConfig};
use quiltrt_core::QuiltGeometry;
use serde_json::Value;
use tower::ServiceExt;

/// Calibration for a `w` x `h` panel with four views per lens.
pub fn write_calibration(dir: &Path, w: u32, h: u32) -> PathBuf {
    let p = dir.join("calibration.json");
    let doc = format!(r#"{{"pitch":2.0,"slope":-4.0,"center":0.1,"dpi":16.0,"screen_w":{w},"screen_h":{h}}}"#);
    std::fs::write(&p, doc).unwrap();
    p
}

pub fn small_geometry() -> QuiltGeometry {
    QuiltGeometry { rows: 2, cols: 2, tile_w: 16, tile_h: 12 }
}

/// Endless synthetic input onto a 24 x 16 panel.
pub fn toy_config(dir: &Path) -> PipelineConfig {
    PipelineConfig {
        source: SourceSpec::Synthetic { width: 32, height: 24, fps: None, frames: None },
        map: Some(MapSource::Calibration(write_calibration(dir, 24, 16))),
        geometry: Some(small_geometry()),
        target_fps: 30.0,
        workers: Some(1),
        ..PipelineConfig::default()
    }
}

pub fn service(config: PipelineConfig) -> Arc<Service> {
    service_with(config, Arc::new(HeadlessScreens))
}

pub fn service_with(config: PipelineConfig, screens: Arc<dyn ScreenProvider>) -> Arc<Service> {
    Arc::new(Service::new(config, screens))
}

/// One request through the router; the body is parsed as JSON.
pub async fn call(app: &Router, method: Method, path: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(path)
        .header("content-type", "application/json")
        .body(body.map_or(Body::empty(), |b| Body::from(b.to_string())))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = axum::body::to_bytes(res.into_body(), usize::MAX).await.unwrap();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

/// Serves `svc` on an ephemeral localhost port.
pub async fn spawn(svc: Arc<Service>) -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(svc)).await.unwrap() });
    addr
}
