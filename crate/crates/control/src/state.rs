use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use quiltrt_core::iohub::{config_to_entries, Entries, IoError, ScreenInfo, ScreenProvider, SourceSpec};
use quiltrt_core::pipeline::{self, Engine, PipelineConfig, PipelineError, RunHandle, StageStats};
use serde::Serialize;

use crate::error::ApiError;
use crate::patch::{merge_patch, Patch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Running,
    Stopping,
}

/// Everything the service owns. Cheap to share behind an `Arc`.
pub struct Service {
    config: Mutex<PipelineConfig>,
    engine: Engine,
    stopping: AtomicBool,
    last_stats: Mutex<Option<StageStats>>,
    screens: Arc<dyn ScreenProvider>,
}

impl Service {
    pub fn new(config: PipelineConfig, screens: Arc<dyn ScreenProvider>) -> Self {
        Service {
            config: Mutex::new(config),
            engine: Engine::new(),
            stopping: AtomicBool::new(false),
            last_stats: Mutex::new(None),
            screens,
        }
    }

    pub fn phase(&self) -> Phase {
        if self.stopping.load(Ordering::SeqCst) {
            Phase::Stopping
        } else if self.engine.is_running() {
            Phase::Running
        } else {
            Phase::Idle
        }
    }

    pub fn config(&self) -> PipelineConfig {
        self.config.lock().unwrap().clone()
    }

    pub fn config_entries(&self) -> Entries {
        config_to_entries(&self.config.lock().unwrap())
    }

    pub fn handle(&self) -> Option<RunHandle> {
        self.engine.current()
    }

    /// Live stats while running; the last run's final stats otherwise.
    pub fn stats(&self) -> Option<StageStats> {
        match self.engine.current() {
            Some(h) => Some(h.stats()),
            None => self.last_stats.lock().unwrap().clone(),
        }
    }

    pub fn screens(&self) -> Result<Vec<ScreenInfo>, IoError> {
        self.screens.screens()
    }

    /// Blocking: opens the source, sink and map.
    pub fn start(&self) -> Result<RunHandle, ApiError> {
        if self.stopping.load(Ordering::SeqCst) {
            return Err(ApiError::conflict("the pipeline is stopping"));
        }
        let config = self.config();
        let screens = self.screens.clone();
        self.engine
            .start_using(|| pipeline::start_with_screens(config, screens))
            .map_err(|e| match e {
                PipelineError::AlreadyRunning => ApiError::conflict(e.to_string()),
                PipelineError::InvalidConfig { .. } => ApiError::bad_request(e.to_string()),
                other => ApiError::unprocessable(other.to_string()),
            })
    }

    /// Blocking: waits for every stage to quiesce.
    pub fn stop(&self) -> Result<StageStats, ApiError> {
        let handle = match self.engine.current() {
            Some(h) if !h.is_finished() => h,
            _ => return Err(ApiError::conflict("no pipeline is running")),
        };
        if self.stopping.swap(true, Ordering::SeqCst) {
            return Err(ApiError::conflict("the pipeline is already stopping"));
        }
        let stats = handle.stop();
        *self.last_stats.lock().unwrap() = Some(stats.clone());
        self.stopping.store(false, Ordering::SeqCst);
        Ok(stats)
    }

    /// Validates and merges `patch` atomically. While a run is active only
    /// hot keys are accepted and are applied to the run as well.
    pub fn patch_config(&self, patch: &Patch) -> Result<Entries, ApiError> {
        let mut config = self.config.lock().unwrap();
        let handle = self.engine.current().filter(|h| !h.is_finished());
        if handle.is_some() || self.stopping.load(Ordering::SeqCst) {
            if let Some(key) = patch.keys().find(|k| !crate::patch::is_hot(k)) {
                return Err(ApiError::conflict(format!(
                    "{key} cannot change while the pipeline runs; hot keys are fps and region"
                )));
            }
        }
        let merged = merge_patch(&config, patch)?;
        if let Some(h) = &handle {
            if merged.target_fps != config.target_fps {
                h.set_target_fps(merged.target_fps)
                    .map_err(|e| ApiError::bad_request(e.to_string()))?;
            }
            if merged.source != config.source {
                match &merged.source {
                    SourceSpec::ScreenRegion(r) => {
                        self.screens
                            .check_region(r)
                            .map_err(|e| ApiError::bad_request(e.to_string()))?;
                        h.set_region(*r).map_err(|e| ApiError::bad_request(e.to_string()))?;
                    }
                    _ => return Err(ApiError::bad_request("region applies to screen sources only")),
                }
            }
        }
        *config = merged;
        Ok(config_to_entries(&config))
    }

    /// Replaces the map path when idle; returns whether the config changed.
    pub fn use_map(&self, path: &std::path::Path) -> bool {
        let mut config = self.config.lock().unwrap();
        if self.engine.is_running() || self.stopping.load(Ordering::SeqCst) {
            return false;
        }
        config.map = Some(pipeline::MapSource::File(path.to_owned()));
        config.geometry = None;
        true
    }
}
