//! Real-time 2D-to-light-field conversion for lenticular displays.
//!
//! Frames flow through depth estimation, multi-view synthesis, quilt
//! assembly and a lookup-table gather into the interleaved native image a
//! lenticular panel displays.

pub mod calib;
pub mod depth;
pub mod iohub;
pub mod lut;
pub mod native;
pub mod parallel;
pub mod pipeline;
pub mod quilt;
pub mod resample;
pub mod viewsynth;

pub use calib::{Calibration, CalibrationError, EffectiveCalibration};
pub use depth::{DepthMap, SyntheticPattern};
pub use lut::{build_lut, LutMap, QuiltGeometry};
pub use native::{quilt_to_native, views_to_native_direct, DirectMap, NativeImage};
pub use parallel::Workers;
pub use pipeline::{PipelineConfig, RunHandle, StageStats};
pub use quilt::{adapt_aspect, assemble_quilt, decimate, QuiltImage};
pub use viewsynth::{synth_views, Algorithm, ViewParams, ViewSet};
