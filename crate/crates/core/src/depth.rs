//! Relative inverse-depth estimation.
//!
//! Backends turn an RGB frame into a [`DepthMap`] where larger values are
//! nearer. The synthetic backend renders fixed patterns and exists so every
//! downstream stage can be tested deterministically; the neural backend runs
//! an ONNX monocular-depth model.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use image::RgbImage;
use thiserror::Error;

#[cfg(feature = "neural")]
mod neural;
#[cfg(feature = "neural")]
pub use neural::NeuralBackend;

#[derive(Debug, Error)]
pub enum DepthError {
    #[error("failed to load depth model: {0}")]
    ModelLoadFailure(String),
    #[error("depth inference failed: {0}")]
    InferenceFailure(String),
    #[error("depth map dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((u32, u32), (u32, u32)),
    #[error("invalid depth backend descriptor `{0}`")]
    InvalidDescriptor(String),
}

/// Per-pixel relative inverse depth, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), width as usize * height as usize);
        DepthMap {
            width,
            height,
            values,
        }
    }

    pub fn filled(width: u32, height: u32, value: f32) -> Self {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Linearly rescales to `[0, 1]`. A flat map becomes all `0.5`.
    pub fn normalize(&self) -> DepthMap {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let values = if self.values.is_empty() || hi <= lo {
            vec![0.5; self.values.len()]
        } else {
            let span = hi as f64 - lo as f64;
            self.values
                .iter()
                .map(|&v| ((v as f64 - lo as f64) / span) as f32)
                .collect()
        };
        DepthMap {
            width: self.width,
            height: self.height,
            values,
        }
    }

    /// Mean value over the pixels where `mask` is true.
    pub fn masked_mean(&self, mask: impl Fn(u32, u32) -> bool) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for y in 0..self.height {
            for x in 0..self.width {
                if mask(x, y) {
                    sum += self.get(x, y) as f64;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

/// Blends `alpha * prev + (1 - alpha) * cur` per pixel.
pub fn temporal_smooth(prev: &DepthMap, cur: &DepthMap, alpha: f32) -> Result<DepthMap, DepthError> {
    if prev.dimensions() != cur.dimensions() {
        return Err(DepthError::DimensionMismatch(prev.dimensions(), cur.dimensions()));
    }
    let a = alpha.clamp(0.0, 1.0);
    let values = prev
        .values
        .iter()
        .zip(&cur.values)
        .map(|(&p, &c)| a * p + (1.0 - a) * c)
        .collect();
    Ok(DepthMap::new(cur.width, cur.height, values))
}

/// Deterministic depth patterns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyntheticPattern {
    /// `x / (w - 1)`: nearest at the right edge.
    HRamp,
    /// `y / (h - 1)`: nearest at the bottom edge.
    VRamp,
    Constant(f32),
    /// A disk at normalized center `(cx, cy)` with radius `r` (fraction of the
    /// shorter side), valued `near` inside and `far` outside.
    Disk {
        cx: f32,
        cy: f32,
        r: f32,
        near: f32,
        far: f32,
    },
}

impl SyntheticPattern {
    pub fn render(&self, w: u32, h: u32) -> DepthMap {
        let ramp = |i: u32, n: u32| if n > 1 { i as f32 / (n - 1) as f32 } else { 0.0 };
        let mut values = Vec::with_capacity(w as usize * h as usize);
        for y in 0..h {
            for x in 0..w {
                values.push(match *self {
                    SyntheticPattern::HRamp => ramp(x, w),
                    SyntheticPattern::VRamp => ramp(y, h),
                    SyntheticPattern::Constant(c) => c,
                    SyntheticPattern::Disk { cx, cy, r, near, far } => {
                        let dx = (x as f32 + 0.5) - cx * w as f32;
                        let dy = (y as f32 + 0.5) - cy * h as f32;
                        let radius = r * w.min(h) as f32;
                        if dx * dx + dy * dy <= radius * radius {
                            near
                        } else {
                            far
                        }
                    }
                });
            }
        }
        DepthMap::new(w, h, values)
    }
}

impl fmt::Display for SyntheticPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SyntheticPattern::HRamp => write!(f, "hramp"),
            SyntheticPattern::VRamp => write!(f, "vramp"),
            SyntheticPattern::Constant(c) => write!(f, "constant:{c}"),
            SyntheticPattern::Disk { cx, cy, r, near, far } => {
                write!(f, "disk:{cx},{cy},{r},{near},{far}")
            }
        }
    }
}

impl FromStr for SyntheticPattern {
    type Err = DepthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DepthError::InvalidDescriptor(s.to_owned());
        let (name, args) = s.trim().split_once(':').unwrap_or((s.trim(), ""));
        let nums: Vec<f32> = if args.is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|a| a.trim().parse::<f32>().map_err(|_| bad()))
                .collect::<Result<_, _>>()?
        };
        match (name, nums.as_slice()) {
            ("hramp", []) => Ok(SyntheticPattern::HRamp),
            ("vramp", []) => Ok(SyntheticPattern::VRamp),
            ("constant", [c]) => Ok(SyntheticPattern::Constant(*c)),
            ("disk", []) => Ok(SyntheticPattern::default()),
            ("disk", [cx, cy, r, near, far]) => Ok(SyntheticPattern::Disk {
                cx: *cx,
                cy: *cy,
                r: *r,
                near: *near,
                far: *far,
            }),
            _ => Err(bad()),
        }
    }
}

impl Default for SyntheticPattern {
    /// A centered near disk on a far background.
    fn default() -> Self {
        SyntheticPattern::Disk {
            cx: 0.5,
            cy: 0.5,
            r: 0.3,
            near: 1.0,
            far: 0.0,
        }
    }
}

/// Inference execution provider for the neural backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Provider {
    #[default]
    Cpu,
    Accel,
    AccelFp16,
}

impl FromStr for Provider {
    type Err = DepthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "cpu" => Ok(Provider::Cpu),
            "accel" => Ok(Provider::Accel),
            "accel_fp16" => Ok(Provider::AccelFp16),
            other => Err(DepthError::InvalidDescriptor(other.to_owned())),
        }
    }
}

impl fmt::Display for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provider::Cpu => "cpu",
            Provider::Accel => "accel",
            Provider::AccelFp16 => "accel_fp16",
        })
    }
}

/// Which backend to build.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Synthetic(SyntheticPattern),
    Neural { model: PathBuf, provider: Provider },
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Synthetic(SyntheticPattern::default())
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Synthetic(p) => write!(f, "synthetic:{p}"),
            BackendSpec::Neural { model, provider } => {
                write!(f, "neural:{} ({provider})", model.display())
            }
        }
    }
}

pub trait DepthBackend: Send {
    /// Estimates a depth map with the frame's dimensions.
    fn estimate(&mut self, frame: &RgbImage) -> Result<DepthMap, DepthError>;

    fn describe(&self) -> String;
}

/// Renders a fixed pattern, ignoring pixel colors.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    pub pattern: SyntheticPattern,
}

impl DepthBackend for SyntheticBackend {
    fn estimate(&mut self, frame: &RgbImage) -> Result<DepthMap, DepthError> {
        if frame.width() == 0 || frame.height() == 0 {
            return Err(DepthError::InferenceFailure("empty frame".into()));
        }
        Ok(self.pattern.render(frame.width(), frame.height()))
    }

    fn describe(&self) -> String {
        format!("synthetic:{}", self.pattern)
    }
}

pub fn open_backend(spec: &BackendSpec) -> Result<Box<dyn DepthBackend>, DepthError> {
    match spec {
        BackendSpec::Synthetic(pattern) => Ok(Box::new(SyntheticBackend { pattern: *pattern })),
        #[cfg(feature = "neural")]
        BackendSpec::Neural { model, provider } => {
            Ok(Box::new(NeuralBackend::load(model, *provider)?))
        }
        #[cfg(not(feature = "neural"))]
        BackendSpec::Neural { .. } => Err(DepthError::ModelLoadFailure(
            "built without the `neural` feature".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hramp_ignores_colors() {
        let mut b = SyntheticBackend {
            pattern: SyntheticPattern::HRamp,
        };
        let a = b.estimate(&RgbImage::new(8, 4)).unwrap();
        let c = b
            .estimate(&RgbImage::from_pixel(8, 4, image::Rgb([200, 10, 30])))
            .unwrap();
        assert_eq!(a, c);
        for y in 0..4 {
            for x in 0..8 {
                assert_eq!(a.get(x, y), x as f32 / 7.0);
            }
        }
    }

    #[test]
    fn constant_pattern() {
        let d = SyntheticPattern::Constant(0.5).render(5, 3);
        assert!(d.values.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn disk_pattern() {
        let d = "disk:0.5,0.5,0.25,0.9,0.1".parse::<SyntheticPattern>().unwrap().render(8, 8);
        assert_eq!(d.get(4, 4), 0.9);
        assert_eq!(d.get(0, 0), 0.1);
    }

    #[test]
    fn pattern_descriptors_round_trip() {
        for s in ["hramp", "vramp", "constant:0.25", "disk:0.5,0.4,0.3,1,0"] {
            let p: SyntheticPattern = s.parse().unwrap();
            assert_eq!(p.to_string().parse::<SyntheticPattern>().unwrap(), p);
        }
        assert!("ramp".parse::<SyntheticPattern>().is_err());
        assert!("constant".parse::<SyntheticPattern>().is_err());
    }

    #[test]
    fn normalize_examples() {
        let d = DepthMap::new(3, 1, vec![2.0, 4.0, 6.0]).normalize();
        assert_eq!(d.values, vec![0.0, 0.5, 1.0]);
        assert!(DepthMap::filled(4, 2, 3.0).normalize().values.iter().all(|&v| v == 0.5));
        let full = DepthMap::new(4, 1, vec![0.0, 0.25, 0.6, 1.0]);
        assert_eq!(full.normalize(), full);
    }

    #[test]
    fn smoothing_examples() {
        let prev = DepthMap::filled(2, 2, 0.2);
        let cur = DepthMap::filled(2, 2, 0.6);
        assert_eq!(temporal_smooth(&prev, &cur, 0.0).unwrap(), cur);
        assert_eq!(temporal_smooth(&prev, &cur, 1.0).unwrap(), prev);
        let mid = temporal_smooth(&prev, &cur, 0.25).unwrap();
        assert!(mid.values.iter().all(|&v| (v - 0.5).abs() < 1e-6));
        assert!(matches!(
            temporal_smooth(&prev, &DepthMap::filled(3, 2, 0.0), 0.5),
            Err(DepthError::DimensionMismatch(..))
        ));
    }

    #[test]
    fn empty_frame_rejected() {
        let mut b = SyntheticBackend {
            pattern: SyntheticPattern::HRamp,
        };
        assert!(b.estimate(&RgbImage::new(0, 4)).is_err());
    }
}
