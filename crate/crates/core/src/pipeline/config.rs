use std::path::PathBuf;
use std::time::Duration;

use crate::depth::BackendSpec;
use crate::iohub::{SinkSpec, SourceSpec};
use crate::lut::QuiltGeometry;
use crate::viewsynth::{Algorithm, ViewParams};

/// Quilt grid used with a calibration when none is configured: 6 x 8 views
/// of 420 x 560.
pub const DEFAULT_GEOMETRY: QuiltGeometry = QuiltGeometry {
    rows: 6,
    cols: 8,
    tile_w: 420,
    tile_h: 560,
};

pub const DEFAULT_TARGET_FPS: f64 = 10.0;

/// Where the native mapping comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum MapSource {
    /// A MAP file; its header fixes the quilt geometry.
    File(PathBuf),
    /// A calibration document; the table is built at start.
    Calibration(PathBuf),
}

/// Artificial per-stage sleeps, for exercising scheduling in tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StageDelays {
    pub capture: Duration,
    pub depth: Duration,
    pub views: Duration,
    pub map: Duration,
    pub sink: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub source: SourceSpec,
    pub sink: SinkSpec,
    pub map: Option<MapSource>,
    /// Required to match the MAP header when both are given.
    pub geometry: Option<QuiltGeometry>,
    pub algorithm: Algorithm,
    /// Fast-mode disparity in pixels; 4% of the tile width when unset.
    pub gain: Option<f64>,
    pub zero_parallax: f64,
    /// Integer subsampling of frames fed to the depth backend.
    pub decimation: u32,
    pub target_fps: f64,
    pub duration_s: Option<f64>,
    pub depth: BackendSpec,
    /// Weight of the previous depth map in temporal smoothing; 0 disables.
    pub alpha: f32,
    /// Gather the native image straight from the views, skipping the quilt.
    pub direct: bool,
    /// Size of the views/map worker pool; all cores when unset.
    pub workers: Option<usize>,
    pub delays: StageDelays,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            source: SourceSpec::default(),
            sink: SinkSpec::default(),
            map: None,
            geometry: None,
            algorithm: Algorithm::Fast,
            gain: None,
            zero_parallax: 0.5,
            decimation: 1,
            target_fps: DEFAULT_TARGET_FPS,
            duration_s: None,
            depth: BackendSpec::default(),
            alpha: 0.0,
            direct: true,
            workers: None,
            delays: StageDelays::default(),
        }
    }
}

impl PipelineConfig {
    /// First violated constraint, as `(key, reason)`.
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        if !(self.target_fps > 0.0 && self.target_fps.is_finite()) {
            return Err(("processing.fps", format!("{} is not a positive rate", self.target_fps)));
        }
        if self.decimation < 1 {
            return Err(("processing.decimation", "must be at least 1".into()));
        }
        if let Some(d) = self.duration_s {
            if !(d > 0.0 && d.is_finite()) {
                return Err(("processing.duration_s", format!("{d} is not a positive duration")));
            }
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(("processing.alpha", format!("{} is outside [0, 1)", self.alpha)));
        }
        if !self.zero_parallax.is_finite() {
            return Err(("processing.zero_parallax", "must be finite".into()));
        }
        if let Some(g) = self.gain {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(("processing.gain", format!("{g} is not a nonnegative number")));
            }
        }
        if self.workers == Some(0) {
            return Err(("processing.workers", "must be at least 1".into()));
        }
        if let SourceSpec::ScreenRegion(r) = &self.source {
            if let Some(field) = r.invalid_field() {
                let key = match field {
                    "region_w" => "input.region_w",
                    _ => "input.region_h",
                };
                return Err((key, format!("below the {} pixel minimum", crate::iohub::MIN_REGION_SIDE)));
            }
        }
        if let Some(g) = self.geometry {
            if QuiltGeometry::new(g.rows, g.cols, g.tile_w, g.tile_h).is_err() {
                return Err(("processing.quilt_rows", format!("invalid geometry {g}")));
            }
        }
        Ok(())
    }

    /// View parameters for the configured tile width and view count.
    pub fn view_params(&self, g: &QuiltGeometry) -> ViewParams {
        let mut p = ViewParams::for_width(g.tile_w, g.n_views(), self.algorithm);
        if let Some(gain) = self.gain {
            p.gain = gain;
            p.focal = 2.0 * gain * p.z_near / p.baseline;
        }
        p.zero_parallax = self.zero_parallax;
        p
    }
}
