//! Staged real-time engine: capture, depth, views, map, sink.
//!
//! Each stage runs on its own thread. Stages are connected by hand-offs of
//! capacity [`HANDOFF_CAPACITY`]; for live sources a full hand-off evicts its
//! oldest frame, for file-like sources the producer waits. Views and map
//! parallelize within a frame on the run's worker pool.
//!
//! Stopping discards queued frames and the result of any frame in flight;
//! both count as dropped for the stage that held them.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use image::RgbImage;
use thiserror::Error;

use crate::calib::Calibration;
use crate::depth::{open_backend, temporal_smooth, DepthBackend, DepthError, DepthMap};
use crate::iohub::{open_sink, open_source_with, FrameMeta, FrameSink, FrameSource, HeadlessScreens, IoError, RegionSpec, ScreenProvider};
use crate::lut::{build_lut, LutMap, QuiltGeometry};
use crate::native::{quilt_to_native, DirectMap, NativeImage};
use crate::parallel::Workers;
use crate::quilt::{adapt_aspect, assemble_quilt, decimate, fit_rect};
use crate::resample::resize_plane;
use crate::viewsynth::{render_views, ViewParams};

mod config;
mod handoff;
mod stats;

pub use config::{MapSource, PipelineConfig, StageDelays, DEFAULT_GEOMETRY, DEFAULT_TARGET_FPS};
pub use handoff::HANDOFF_CAPACITY;
pub use stats::{Stage, StageCounters, StageStats, EMA_FACTOR};

use handoff::{Handoff, Push};
use stats::StatsRecorder;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid value for {key}: {reason}")]
    InvalidConfig { key: String, reason: String },
    #[error("cannot open source: {0}")]
    SourceOpenFailure(#[source] IoError),
    #[error("cannot open sink: {0}")]
    SinkOpenFailure(#[source] IoError),
    #[error("cannot load map: {0}")]
    MapLoadFailure(String),
    #[error(transparent)]
    ModelLoadFailure(#[from] DepthError),
    #[error("a pipeline is already running")]
    AlreadyRunning,
}

/// Error that ended a run early.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunFailure {
    pub stage: Stage,
    pub message: String,
}

/// The native mapping of a run.
pub enum NativeMapper {
    Direct(DirectMap),
    Quilt(LutMap),
}

impl NativeMapper {
    pub fn geometry(&self) -> QuiltGeometry {
        match self {
            NativeMapper::Direct(d) => d.geometry,
            NativeMapper::Quilt(m) => m.geometry,
        }
    }

    pub fn native_dims(&self) -> (u32, u32) {
        match self {
            NativeMapper::Direct(d) => (d.screen_w, d.screen_h),
            NativeMapper::Quilt(m) => (m.screen_w, m.screen_h),
        }
    }

    pub fn map(&self, views: &[RgbImage]) -> Result<NativeImage, String> {
        match self {
            NativeMapper::Direct(d) => d.map_views(views).map_err(|e| e.to_string()),
            NativeMapper::Quilt(m) => {
                let q = assemble_quilt(views, &m.geometry).map_err(|e| e.to_string())?;
                quilt_to_native(&q, m).map_err(|e| e.to_string())
            }
        }
    }

    /// Loads or builds the mapping named by the configuration.
    pub fn from_config(c: &PipelineConfig) -> Result<Self, PipelineError> {
        let fail = |e: &dyn std::fmt::Display| PipelineError::MapLoadFailure(e.to_string());
        match &c.map {
            None => Err(PipelineError::InvalidConfig {
                key: "processing.map".into(),
                reason: "a MAP file or a calibration is required".into(),
            }),
            Some(MapSource::File(path)) => {
                let m = LutMap::load(path).map_err(|e| fail(&format!("{}: {e}", path.display())))?;
                if let Some(g) = c.geometry {
                    if g != m.geometry {
                        return Err(fail(&format!(
                            "{} holds {}, configured {g}",
                            path.display(),
                            m.geometry
                        )));
                    }
                }
                if c.direct {
                    match DirectMap::from_lut(&m) {
                        Ok(d) => return Ok(NativeMapper::Direct(d)),
                        Err(e) => log::warn!("direct mapping unavailable ({e}); mapping through the quilt"),
                    }
                }
                Ok(NativeMapper::Quilt(m))
            }
            Some(MapSource::Calibration(path)) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| fail(&format!("{}: {e}", path.display())))?;
                let cal = Calibration::parse(&text).map_err(|e| fail(&format!("{}: {e}", path.display())))?;
                let e = cal.effective();
                let g = c.geometry.unwrap_or(DEFAULT_GEOMETRY);
                if c.direct {
                    Ok(NativeMapper::Direct(DirectMap::from_calibration(&e, &g)))
                } else {
                    Ok(NativeMapper::Quilt(build_lut(&e, &g).map_err(|e| fail(&e))?))
                }
            }
        }
    }
}

/// Latest frames seen by the capture and sink stages.
#[derive(Debug, Clone, Default)]
pub struct PreviewFrames {
    pub source: Option<Arc<RgbImage>>,
    pub native: Option<Arc<RgbImage>>,
    /// Capture index of `source`.
    pub source_index: Option<u64>,
    /// Capture index of `native`.
    pub native_index: Option<u64>,
}

struct Item<T> {
    meta: FrameMeta,
    data: T,
}

/// How far a live capture may outpace the slowest later stage. Anything
/// beyond that would only be evicted; some excess keeps latest-wins fresh.
const CAPTURE_HEADROOM: f64 = 1.5;

type Aborter = Box<dyn Fn(&StatsRecorder) + Send + Sync>;

struct Shared {
    stats: StatsRecorder,
    stop: AtomicBool,
    stop_lock: Mutex<bool>,
    stop_cv: Condvar,
    target_fps: Mutex<f64>,
    region: Mutex<Option<RegionSpec>>,
    preview: Mutex<PreviewFrames>,
    failure: Mutex<Option<RunFailure>>,
    aborters: Mutex<Vec<Aborter>>,
    running_workers: Mutex<usize>,
    done_cv: Condvar,
    final_stats: Mutex<Option<StageStats>>,
    threads: Mutex<Vec<JoinHandle<()>>>,
    geometry: QuiltGeometry,
    native_dims: (u32, u32),
}

impl Shared {
    fn stopping(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    fn request_stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
        *self.stop_lock.lock().unwrap() = true;
        self.stop_cv.notify_all();
        let aborters = std::mem::take(&mut *self.aborters.lock().unwrap());
        for abort in aborters {
            abort(&self.stats);
        }
    }

    fn fail(&self, stage: Stage, message: String) {
        log::error!("{} stage failed: {message}", stage.name());
        self.failure.lock().unwrap().get_or_insert(RunFailure { stage, message });
        self.request_stop();
    }

    /// Sleeps until `deadline`; true if a stop was requested meanwhile.
    fn wait_stop_until(&self, deadline: Instant) -> bool {
        let mut stopped = self.stop_lock.lock().unwrap();
        loop {
            if *stopped {
                return true;
            }
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            stopped = self.stop_cv.wait_timeout(stopped, deadline - now).unwrap().0;
        }
    }

    fn worker_exited(&self) {
        let mut n = self.running_workers.lock().unwrap();
        *n -= 1;
        if *n == 0 {
            *self.final_stats.lock().unwrap() = Some(self.stats.finish());
            self.done_cv.notify_all();
        }
    }

    /// Counts the outcome of a stage's work on one item and forwards it.
    fn forward<T>(&self, stage: Stage, took: Duration, item: Item<T>, next: Option<(&Handoff<Item<T>>, Stage)>) {
        if self.stopping() {
            self.stats.dropped(stage, 1);
            return;
        }
        self.stats.processed(stage, took);
        if let Some((q, next_stage)) = next {
            self.stats.offered(next_stage);
            match q.push(item) {
                Push::Accepted => {}
                Push::Evicted(_) | Push::Closed(_) => self.stats.dropped(next_stage, 1),
            }
        }
    }
}

/// Handle to one run. Clones refer to the same run.
#[derive(Clone)]
pub struct RunHandle {
    shared: Arc<Shared>,
}

impl RunHandle {
    pub fn stats(&self) -> StageStats {
        if let Some(s) = self.shared.final_stats.lock().unwrap().clone() {
            return s;
        }
        self.shared.stats.snapshot()
    }

    pub fn is_finished(&self) -> bool {
        self.shared.final_stats.lock().unwrap().is_some()
    }

    /// Stops every stage and returns the final statistics. Idempotent.
    pub fn stop(&self) -> StageStats {
        if !self.is_finished() {
            self.shared.request_stop();
        }
        self.wait()
    }

    /// Blocks until the run ends on its own (or is stopped elsewhere).
    pub fn wait(&self) -> StageStats {
        let mut n = self.shared.running_workers.lock().unwrap();
        while *n > 0 {
            n = self.shared.done_cv.wait(n).unwrap();
        }
        drop(n);
        self.join_threads();
        self.stats()
    }

    pub fn wait_timeout(&self, timeout: Duration) -> Option<StageStats> {
        let deadline = Instant::now() + timeout;
        let mut n = self.shared.running_workers.lock().unwrap();
        while *n > 0 {
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            n = self.shared.done_cv.wait_timeout(n, deadline - now).unwrap().0;
        }
        drop(n);
        self.join_threads();
        Some(self.stats())
    }

    fn join_threads(&self) {
        let threads = std::mem::take(&mut *self.shared.threads.lock().unwrap());
        for t in threads {
            let _ = t.join();
        }
    }

    pub fn failure(&self) -> Option<RunFailure> {
        self.shared.failure.lock().unwrap().clone()
    }

    pub fn target_fps(&self) -> f64 {
        *self.shared.target_fps.lock().unwrap()
    }

    /// Changes the capture rate from the next frame on.
    pub fn set_target_fps(&self, fps: f64) -> Result<(), PipelineError> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(PipelineError::InvalidConfig {
                key: "processing.fps".into(),
                reason: format!("{fps} is not a positive rate"),
            });
        }
        *self.shared.target_fps.lock().unwrap() = fps;
        Ok(())
    }

    /// Moves the capture region from the next frame on. Regions the source
    /// rejects are logged and ignored.
    pub fn set_region(&self, region: RegionSpec) -> Result<(), PipelineError> {
        if let Some(field) = region.invalid_field() {
            return Err(PipelineError::InvalidConfig {
                key: format!("input.{field}"),
                reason: format!("below the {} pixel minimum", crate::iohub::MIN_REGION_SIDE),
            });
        }
        *self.shared.region.lock().unwrap() = Some(region);
        Ok(())
    }

    pub fn preview(&self) -> PreviewFrames {
        self.shared.preview.lock().unwrap().clone()
    }

    pub fn geometry(&self) -> QuiltGeometry {
        self.shared.geometry
    }

    pub fn native_dims(&self) -> (u32, u32) {
        self.shared.native_dims
    }
}

impl std::fmt::Debug for RunHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunHandle")
            .field("finished", &self.is_finished())
            .finish()
    }
}

fn check_config(c: &PipelineConfig) -> Result<(), PipelineError> {
    c.check().map_err(|(key, reason)| PipelineError::InvalidConfig {
        key: key.into(),
        reason,
    })
}

/// Starts a run; screen regions are unavailable.
pub fn start(c: PipelineConfig) -> Result<RunHandle, PipelineError> {
    start_with_screens(c, Arc::new(HeadlessScreens))
}

/// Starts a run, grabbing screen regions from `screens`.
pub fn start_with_screens(
    c: PipelineConfig,
    screens: Arc<dyn ScreenProvider>,
) -> Result<RunHandle, PipelineError> {
    check_config(&c)?;
    let mapper = NativeMapper::from_config(&c)?;
    let backend = open_backend(&c.depth)?;
    let source = open_source_with(&c.source, screens).map_err(PipelineError::SourceOpenFailure)?;
    let sink = open_sink(&c.sink, mapper.native_dims()).map_err(PipelineError::SinkOpenFailure)?;
    launch(c, mapper, backend, source, sink)
}

/// Starts a run over an already open source and sink.
pub fn start_with(
    c: PipelineConfig,
    source: Box<dyn FrameSource>,
    sink: Box<dyn FrameSink>,
) -> Result<RunHandle, PipelineError> {
    check_config(&c)?;
    let mapper = NativeMapper::from_config(&c)?;
    let backend = open_backend(&c.depth)?;
    launch(c, mapper, backend, source, sink)
}

/// Places `depth` (any size) into the content rectangle a `fw x fh` frame
/// occupies in a `tw x th` tile; bars get `fill`.
fn depth_for_tile(depth: &DepthMap, fw: u32, fh: u32, tw: u32, th: u32, fill: f32) -> DepthMap {
    let r = fit_rect(fw, fh, tw, th);
    let content = resize_plane(&depth.values, depth.width, depth.height, r.w, r.h);
    if (r.w, r.h) == (tw, th) {
        return DepthMap::new(tw, th, content);
    }
    let mut out = vec![fill; tw as usize * th as usize];
    for (row, src) in content.chunks_exact(r.w as usize).enumerate() {
        let start = (r.y as usize + row) * tw as usize + r.x as usize;
        out[start..start + r.w as usize].copy_from_slice(src);
    }
    DepthMap::new(tw, th, out)
}

fn sleep_for(d: Duration) {
    if !d.is_zero() {
        thread::sleep(d);
    }
}

fn launch(
    c: PipelineConfig,
    mapper: NativeMapper,
    mut backend: Box<dyn DepthBackend>,
    mut source: Box<dyn FrameSource>,
    mut sink: Box<dyn FrameSink>,
) -> Result<RunHandle, PipelineError> {
    let g = mapper.geometry();
    let params: ViewParams = c.view_params(&g);
    params.validate().map_err(|e| PipelineError::InvalidConfig {
        key: "processing".into(),
        reason: e.to_string(),
    })?;
    let workers = Workers::new(c.workers.unwrap_or_else(|| {
        thread::available_parallelism().map_or(1, |n| n.get())
    }));
    let lossy = source.is_live();
    let q_depth = Arc::new(Handoff::<Item<Arc<RgbImage>>>::new(HANDOFF_CAPACITY, lossy));
    let q_views = Arc::new(Handoff::<Item<(Arc<RgbImage>, DepthMap)>>::new(HANDOFF_CAPACITY, lossy));
    let q_map = Arc::new(Handoff::<Item<Vec<RgbImage>>>::new(HANDOFF_CAPACITY, lossy));
    let q_sink = Arc::new(Handoff::<Item<Arc<NativeImage>>>::new(HANDOFF_CAPACITY, lossy));

    fn aborter<T: Send + 'static>(q: &Arc<Handoff<T>>, stage: Stage) -> Aborter {
        let q = q.clone();
        Box::new(move |stats: &StatsRecorder| stats.dropped(stage, q.abort().len() as u64))
    }

    let shared = Arc::new(Shared {
        stats: StatsRecorder::new(),
        stop: AtomicBool::new(false),
        stop_lock: Mutex::new(false),
        stop_cv: Condvar::new(),
        target_fps: Mutex::new(c.target_fps),
        region: Mutex::new(None),
        preview: Mutex::new(PreviewFrames::default()),
        failure: Mutex::new(None),
        aborters: Mutex::new(vec![
            aborter(&q_depth, Stage::Depth),
            aborter(&q_views, Stage::Views),
            aborter(&q_map, Stage::Map),
            aborter(&q_sink, Stage::Sink),
        ]),
        running_workers: Mutex::new(5),
        done_cv: Condvar::new(),
        final_stats: Mutex::new(None),
        threads: Mutex::new(Vec::new()),
        geometry: g,
        native_dims: mapper.native_dims(),
    });
    let delays = c.delays;
    let duration = c.duration_s.map(Duration::from_secs_f64);
    let mut threads = Vec::new();
    shared.stats.start_clock();

    // capture
    {
        let sh = shared.clone();
        let out = q_depth.clone();
        threads.push(spawn("capture", move || {
            let t0 = Instant::now();
            let mut next = t0;
            let mut index = 0u64;
            loop {
                if sh.wait_stop_until(next) {
                    break;
                }
                if duration.is_some_and(|d| next.duration_since(t0) >= d) {
                    break;
                }
                if let Some(r) = sh.region.lock().unwrap().take() {
                    if let Err(e) = source.set_region(r) {
                        log::warn!("region update rejected: {e}");
                    }
                }
                let started = Instant::now();
                let frame = match source.next_frame() {
                    Ok(Some(f)) => Arc::new(f),
                    Ok(None) => break,
                    Err(e) => {
                        sh.fail(Stage::Capture, e.to_string());
                        break;
                    }
                };
                sleep_for(delays.capture);
                sh.stats.offered(Stage::Capture);
                {
                    let mut p = sh.preview.lock().unwrap();
                    p.source = Some(frame.clone());
                    p.source_index = Some(index);
                }
                let meta = FrameMeta {
                    index,
                    ts_us: started.duration_since(t0).as_micros() as u64,
                };
                index += 1;
                sh.forward(Stage::Capture, started.elapsed(), Item { meta, data: frame }, Some((&*out, Stage::Depth)));

                let mut period = Duration::from_secs_f64(1.0 / *sh.target_fps.lock().unwrap());
                if lossy {
                    // Lossless runs are held back by their blocking handoffs instead.
                    let slowest = sh.stats.slowest_ema_ms(&Stage::ALL[1..]);
                    period = period.max(Duration::from_secs_f64(slowest / 1000.0 / CAPTURE_HEADROOM));
                }
                next += period;
                let now = Instant::now();
                if next + period < now {
                    // Far behind schedule: restart the clock instead of bursting.
                    next = now;
                }
            }
            out.close();
            sh.worker_exited();
        }));
    }

    // depth
    {
        let sh = shared.clone();
        let (inp, out) = (q_depth.clone(), q_views.clone());
        let decimation = c.decimation;
        let alpha = c.alpha;
        threads.push(spawn("depth", move || {
            let mut prev: Option<DepthMap> = None;
            while let Some(item) = inp.pop() {
                let started = Instant::now();
                let small = decimate(&item.data, decimation);
                sh.stats.depth_input(small.dimensions());
                let depth = match backend.estimate(&small) {
                    Ok(d) => d.normalize(),
                    Err(e) => {
                        sh.stats.dropped(Stage::Depth, 1);
                        sh.fail(Stage::Depth, e.to_string());
                        break;
                    }
                };
                let depth = match &prev {
                    Some(p) if alpha > 0.0 && p.dimensions() == depth.dimensions() => {
                        temporal_smooth(p, &depth, alpha).expect("equal dimensions")
                    }
                    _ => depth,
                };
                if alpha > 0.0 {
                    prev = Some(depth.clone());
                }
                sleep_for(delays.depth);
                let item = Item {
                    meta: item.meta,
                    data: (item.data, depth),
                };
                sh.forward(Stage::Depth, started.elapsed(), item, Some((&*out, Stage::Views)));
            }
            out.close();
            sh.worker_exited();
        }));
    }

    // views
    {
        let sh = shared.clone();
        let (inp, out) = (q_views.clone(), q_map.clone());
        let workers = workers.clone();
        threads.push(spawn("views", move || {
            let (tw, th) = (g.tile_w, g.tile_h);
            while let Some(item) = inp.pop() {
                let started = Instant::now();
                let (frame, depth) = &item.data;
                let (fw, fh) = frame.dimensions();
                let tile = adapt_aspect(frame, tw, th);
                let tile_depth = depth_for_tile(depth, fw, fh, tw, th, params.zero_parallax as f32);
                let views = match workers.install(|| render_views(&tile, &tile_depth, &params)) {
                    Ok(v) => v,
                    Err(e) => {
                        sh.stats.dropped(Stage::Views, 1);
                        sh.fail(Stage::Views, e.to_string());
                        break;
                    }
                };
                sleep_for(delays.views);
                let item = Item {
                    meta: item.meta,
                    data: views,
                };
                sh.forward(Stage::Views, started.elapsed(), item, Some((&*out, Stage::Map)));
            }
            out.close();
            sh.worker_exited();
        }));
    }

    // map
    {
        let sh = shared.clone();
        let (inp, out) = (q_map.clone(), q_sink.clone());
        threads.push(spawn("map", move || {
            while let Some(item) = inp.pop() {
                let started = Instant::now();
                let native = match workers.install(|| mapper.map(&item.data)) {
                    Ok(n) => Arc::new(n),
                    Err(e) => {
                        sh.stats.dropped(Stage::Map, 1);
                        sh.fail(Stage::Map, e);
                        break;
                    }
                };
                sleep_for(delays.map);
                let item = Item {
                    meta: item.meta,
                    data: native,
                };
                sh.forward(Stage::Map, started.elapsed(), item, Some((&*out, Stage::Sink)));
            }
            out.close();
            sh.worker_exited();
        }));
    }

    // sink
    {
        let sh = shared.clone();
        let inp = q_sink.clone();
        threads.push(spawn("sink", move || {
            while let Some(item) = inp.pop() {
                let started = Instant::now();
                if let Err(e) = sink.write(&item.data, &item.meta) {
                    sh.stats.dropped(Stage::Sink, 1);
                    sh.fail(Stage::Sink, e.to_string());
                    break;
                }
                sleep_for(delays.sink);
                {
                    let mut p = sh.preview.lock().unwrap();
                    p.native = Some(item.data.clone());
                    p.native_index = Some(item.meta.index);
                }
                sh.forward::<()>(
                    Stage::Sink,
                    started.elapsed(),
                    Item {
                        meta: item.meta,
                            data: (),
                    },
                    None,
                );
            }
            if let Err(e) = sink.finish() {
                sh.fail(Stage::Sink, e.to_string());
            }
            sh.worker_exited();
        }));
    }

    *shared.threads.lock().unwrap() = threads;
    Ok(RunHandle { shared })
}

fn spawn(name: &str, f: impl FnOnce() + Send + 'static) -> JoinHandle<()> {
    thread::Builder::new()
        .name(format!("quiltrt-{name}"))
        .spawn(f)
        .expect("failed to spawn stage thread")
}

/// Owner of at most one running pipeline.
#[derive(Default)]
pub struct Engine {
    current: Mutex<Option<RunHandle>>,
}

impl Engine {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts `c` unless a run is still active.
    pub fn start(&self, c: PipelineConfig) -> Result<RunHandle, PipelineError> {
        self.start_using(|| start(c))
    }

    /// Starts a run built by `launch` unless one is still active. The engine
    /// stays locked while `launch` runs, so concurrent starts serialize.
    pub fn start_using(
        &self,
        launch: impl FnOnce() -> Result<RunHandle, PipelineError>,
    ) -> Result<RunHandle, PipelineError> {
        let mut current = self.current.lock().unwrap();
        if current.as_ref().is_some_and(|h| !h.is_finished()) {
            return Err(PipelineError::AlreadyRunning);
        }
        // Reap the finished run so its threads never overlap the next one.
        if let Some(prev) = current.as_ref() {
            prev.wait();
        }
        let h = launch()?;
        *current = Some(h.clone());
        Ok(h)
    }

    /// The most recent run, finished or not.
    pub fn current(&self) -> Option<RunHandle> {
        self.current.lock().unwrap().clone()
    }

    pub fn is_running(&self) -> bool {
        self.current().is_some_and(|h| !h.is_finished())
    }

    /// Stops the active run, if any, and returns its final stats.
    pub fn stop(&self) -> Option<StageStats> {
        self.current().map(|h| h.stop())
    }
}
