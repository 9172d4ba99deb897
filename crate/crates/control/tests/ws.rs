mod common;

use std::time::{Duration, Instant};

use axum::http::{Method, StatusCode};
use common::*;
use futures::StreamExt;
use quiltrt_control::{encode_preview, router, PREVIEW_MAX_WIDTH};
use serde_json::{json, Value};
use tokio_tungstenite::connect_async;
use tokio_tungstenite::tungstenite::Message;

async fn next_message<S>(ws: &mut S) -> Message
where
    S: StreamExt<Item = Result<Message, tokio_tungstenite::tungstenite::Error>> + Unpin,
{
    tokio::time::timeout(Duration::from_secs(5), ws.next()).await.expect("no message").unwrap().unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn preview_sends_png_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(toy_config(dir.path()));
    let addr = spawn(svc.clone()).await;
    svc.start().unwrap();
    let (mut ws, _) = connect_async(format!("ws://{addr}/ws/preview")).await.unwrap();
    let mut times = Vec::new();
    for _ in 0..4 {
        match next_message(&mut ws).await {
            Message::Binary(png) => {
                let img = image::load_from_memory_with_format(&png, image::ImageFormat::Png).unwrap();
                assert_eq!((img.width(), img.height()), (24, 16));
                times.push(Instant::now());
            }
            other => panic!("unexpected {other:?}"),
        }
    }
    // At most five per second.
    let span = times[3] - times[0];
    assert!(span >= Duration::from_millis(550), "{span:?}");

    let (mut src, _) = connect_async(format!("ws://{addr}/ws/preview?frame=source")).await.unwrap();
    match next_message(&mut src).await {
        Message::Binary(png) => {
            let img = image::load_from_memory(&png).unwrap();
            assert_eq!((img.width(), img.height()), (32, 24));
        }
        other => panic!("unexpected {other:?}"),
    }
    svc.stop().unwrap();
}

#[tokio::test]
async fn preview_when_idle_says_so() {
    let dir = tempfile::tempdir().unwrap();
    let addr = spawn(service(toy_config(dir.path()))).await;
    let (mut ws, _) = connect_async(format!("ws://{addr}/ws/preview")).await.unwrap();
    assert_eq!(next_message(&mut ws).await, Message::Text("idle".into()));
    assert!(matches!(next_message(&mut ws).await, Message::Close(_)));
}

#[test]
fn preview_is_downscaled() {
    let big = image::RgbImage::from_fn(1536, 2048, |x, y| image::Rgb([(x % 256) as u8, (y % 256) as u8, 7]));
    let img = image::load_from_memory(&encode_preview(&big)).unwrap();
    assert_eq!((img.width(), img.height()), (PREVIEW_MAX_WIDTH, 640));
    let small = image::RgbImage::new(300, 10);
    let img = image::load_from_memory(&encode_preview(&small)).unwrap();
    assert_eq!((img.width(), img.height()), (300, 10));
}

fn stats_of(m: Message) -> Value {
    match m {
        Message::Text(t) => serde_json::from_str(&t).unwrap(),
        other => panic!("unexpected {other:?}"),
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stats_stream_follows_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(toy_config(dir.path()));
    let addr = spawn(svc.clone()).await;
    let (mut ws, _) = connect_async(format!("ws://{addr}/ws/stats")).await.unwrap();
    let v = stats_of(next_message(&mut ws).await);
    assert_eq!(v["phase"], "idle");
    assert_eq!(v["stats"]["sink"]["processed"], 0);

    svc.start().unwrap();
    let mut last = 0;
    let mut running_seen = 0;
    while running_seen < 3 {
        let v = stats_of(next_message(&mut ws).await);
        if v["phase"] == "running" {
            let n = v["stats"]["sink"]["processed"].as_u64().unwrap();
            assert!(n >= last);
            last = n;
            running_seen += 1;
        }
    }
    assert!(last > 0);
    let final_stats = svc.stop().unwrap();
    let mut finals = Vec::new();
    for _ in 0..4 {
        let v = stats_of(next_message(&mut ws).await);
        if v["final"] == true {
            finals.push(v);
        } else if !finals.is_empty() {
            // Idle snapshots after the final one are zeroed.
            assert_eq!(v["phase"], "idle");
            assert_eq!(v["stats"]["sink"]["processed"], 0);
        }
    }
    assert_eq!(finals.len(), 1);
    assert_eq!(finals[0]["stats"]["sink"]["processed"].as_u64().unwrap(), final_stats.sink.processed);
}

/// Sink frame rate over `secs`, after a short settle.
async fn measured_fps(svc: &quiltrt_control::Service, secs: f64) -> f64 {
    tokio::time::sleep(Duration::from_millis(500)).await;
    let (n0, t0) = (svc.stats().unwrap().sink.processed, Instant::now());
    tokio::time::sleep(Duration::from_secs_f64(secs)).await;
    (svc.stats().unwrap().sink.processed - n0) as f64 / t0.elapsed().as_secs_f64()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stalled_subscriber_does_not_slow_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = toy_config(dir.path());
    // Larger panel so each snapshot is big enough to back up a stalled socket.
    c.map = Some(quiltrt_core::pipeline::MapSource::Calibration(write_calibration(dir.path(), 480, 360)));
    c.target_fps = 15.0;
    let svc = service(c);
    let addr = spawn(svc.clone()).await;

    svc.start().unwrap();
    let baseline = measured_fps(&svc, 3.0).await;
    svc.stop().unwrap();

    svc.start().unwrap();
    // Subscribed but never read.
    let (stalled, _) = connect_async(format!("ws://{addr}/ws/preview")).await.unwrap();
    let (mut reader, _) = connect_async(format!("ws://{addr}/ws/preview")).await.unwrap();
    let drain = tokio::spawn(async move {
        let mut n = 0;
        while let Some(Ok(Message::Binary(_))) = reader.next().await {
            n += 1;
        }
        n
    });
    let with_stalled = measured_fps(&svc, 3.0).await;
    svc.stop().unwrap();
    let delivered = drain.await.unwrap();
    drop(stalled);
    assert!(with_stalled >= 0.95 * baseline, "baseline {baseline:.2}, with a stalled subscriber {with_stalled:.2}");
    assert!(delivered >= 5, "reading subscriber got {delivered} snapshots");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn fps_patch_takes_effect_within_a_second() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = toy_config(dir.path());
    c.target_fps = 5.0;
    let svc = service(c);
    let app = router(svc.clone());
    assert_eq!(call(&app, Method::POST, "/api/pipeline/start", None).await.0, StatusCode::OK);
    tokio::time::sleep(Duration::from_millis(500)).await;
    let (s, v) = call(&app, Method::PATCH, "/api/config", Some(json!({"fps": 25}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    // One second to take effect, then measure.
    tokio::time::sleep(Duration::from_secs(1)).await;
    let (n0, t0) = (svc.stats().unwrap().capture.processed, Instant::now());
    tokio::time::sleep(Duration::from_secs(2)).await;
    let fps = (svc.stats().unwrap().capture.processed - n0) as f64 / t0.elapsed().as_secs_f64();
    svc.stop().unwrap();
    assert!((22.5..=27.5).contains(&fps), "{fps:.2}");
}
