//! Per-stage timing and frame accounting.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Weight of the previous average in every EMA update.
pub const EMA_FACTOR: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Capture,
    Depth,
    Views,
    Map,
    Sink,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Capture,
        Stage::Depth,
        Stage::Views,
        Stage::Map,
        Stage::Sink,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Capture => "capture",
            Stage::Depth => "depth",
            Stage::Views => "views",
            Stage::Map => "map",
            Stage::Sink => "sink",
        }
    }
}

/// Counters of one stage. `offered == processed + dropped` once the run has
/// finished; while running the difference is the frames queued or in flight.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageCounters {
    pub ema_ms: f64,
    pub last_ms: f64,
    pub offered: u64,
    pub processed: u64,
    pub dropped: u64,
}

impl StageCounters {
    pub fn pending(&self) -> u64 {
        self.offered - self.processed - self.dropped
    }
}

/// Snapshot of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub capture: StageCounters,
    pub depth: StageCounters,
    pub views: StageCounters,
    pub map: StageCounters,
    pub sink: StageCounters,
    /// EMA of the output frame rate.
    pub fps: f64,
    /// Frames written by the sink divided by elapsed time.
    pub mean_fps: f64,
    pub elapsed_s: f64,
    /// Resolution fed to the depth backend after decimation.
    pub depth_input: Option<(u32, u32)>,
}

impl StageStats {
    pub fn stage(&self, s: Stage) -> &StageCounters {
        match s {
            Stage::Capture => &self.capture,
            Stage::Depth => &self.depth,
            Stage::Views => &self.views,
            Stage::Map => &self.map,
            Stage::Sink => &self.sink,
        }
    }

    fn stage_mut(&mut self, s: Stage) -> &mut StageCounters {
        match s {
            Stage::Capture => &mut self.capture,
            Stage::Depth => &mut self.depth,
            Stage::Views => &mut self.views,
            Stage::Map => &mut self.map,
            Stage::Sink => &mut self.sink,
        }
    }

    /// Stage with the largest EMA time.
    pub fn slowest_stage(&self) -> Stage {
        Stage::ALL
            .into_iter()
            .max_by(|a, b| self.stage(*a).ema_ms.total_cmp(&self.stage(*b).ema_ms))
            .unwrap()
    }

    /// True when every stage satisfies `offered == processed + dropped`.
    pub fn is_balanced(&self) -> bool {
        Stage::ALL.iter().all(|&s| {
            let c = self.stage(s);
            c.offered == c.processed + c.dropped
        })
    }
}

struct Inner {
    stats: StageStats,
    started: Option<Instant>,
    last_output: Option<Instant>,
    interval_ema_ms: Option<f64>,
}

/// Shared, lock-protected stats recorder.
pub(crate) struct StatsRecorder {
    inner: Mutex<Inner>,
}

fn ema(prev: f64, sample: f64, first: bool) -> f64 {
    if first {
        sample
    } else {
        EMA_FACTOR * prev + (1.0 - EMA_FACTOR) * sample
    }
}

impl StatsRecorder {
    pub fn new() -> Self {
        StatsRecorder {
            inner: Mutex::new(Inner {
                stats: StageStats::default(),
                started: None,
                last_output: None,
                interval_ema_ms: None,
            }),
        }
    }

    pub fn start_clock(&self) {
        self.inner.lock().unwrap().started = Some(Instant::now());
    }

    pub fn offered(&self, s: Stage) {
        self.inner.lock().unwrap().stats.stage_mut(s).offered += 1;
    }

    pub fn dropped(&self, s: Stage, n: u64) {
        self.inner.lock().unwrap().stats.stage_mut(s).dropped += n;
    }

    pub fn processed(&self, s: Stage, took: Duration) {
        let ms = took.as_secs_f64() * 1000.0;
        let mut inner = self.inner.lock().unwrap();
        let c = inner.stats.stage_mut(s);
        c.ema_ms = ema(c.ema_ms, ms, c.processed == 0);
        c.last_ms = ms;
        c.processed += 1;
        if s == Stage::Sink {
            let now = Instant::now();
            if let Some(prev) = inner.last_output.replace(now) {
                let interval = now.duration_since(prev).as_secs_f64() * 1000.0;
                let avg = match inner.interval_ema_ms {
                    Some(prev) => ema(prev, interval, false),
                    None => interval,
                };
                inner.interval_ema_ms = Some(avg);
                inner.stats.fps = if avg > 0.0 { 1000.0 / avg } else { 0.0 };
            }
        }
    }

    /// Largest EMA among `stages`, in milliseconds.
    pub fn slowest_ema_ms(&self, stages: &[Stage]) -> f64 {
        let inner = self.inner.lock().unwrap();
        stages.iter().map(|&st| inner.stats.stage(st).ema_ms).fold(0.0, f64::max)
    }

    pub fn depth_input(&self, dims: (u32, u32)) {
        self.inner.lock().unwrap().stats.depth_input = Some(dims);
    }

    pub fn snapshot(&self) -> StageStats {
        let inner = self.inner.lock().unwrap();
        let mut s = inner.stats.clone();
        if let Some(t0) = inner.started {
            s.elapsed_s = t0.elapsed().as_secs_f64();
            if s.elapsed_s > 0.0 {
                s.mean_fps = s.sink.processed as f64 / s.elapsed_s;
            }
        }
        s
    }

    /// Freezes elapsed time at the end of the run.
    pub fn finish(&self) -> StageStats {
        let s = self.snapshot();
        let mut inner = self.inner.lock().unwrap();
        inner.started = None;
        inner.stats.elapsed_s = s.elapsed_s;
        inner.stats.mean_fps = s.mean_fps;
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ema_smoothing() {
        let r = StatsRecorder::new();
        r.processed(Stage::Depth, Duration::from_millis(10));
        assert_eq!(r.snapshot().depth.ema_ms, 10.0);
        r.processed(Stage::Depth, Duration::from_millis(20));
        let s = r.snapshot();
        assert!((s.depth.ema_ms - 11.0).abs() < 1e-9);
        assert_eq!(s.depth.last_ms, 20.0);
        assert_eq!(s.depth.processed, 2);
    }

    #[test]
    fn zero_before_first_frame() {
        let s = StatsRecorder::new().snapshot();
        assert_eq!(s, StageStats::default());
        assert!(s.is_balanced());
    }

    #[test]
    fn slowest_stage() {
        let r = StatsRecorder::new();
        r.processed(Stage::Views, Duration::from_millis(3));
        r.processed(Stage::Depth, Duration::from_millis(30));
        assert_eq!(r.snapshot().slowest_stage(), Stage::Depth);
    }

    #[test]
    fn serializes_with_stage_names() {
        let json = serde_json::to_value(StageStats::default()).unwrap();
        for s in Stage::ALL {
            assert!(json.get(s.name()).is_some());
        }
    }
}
