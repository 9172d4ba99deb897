//! Frame sources, frame sinks and the INI run configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

mod ini;
mod lutgen;
mod screen;
mod sink;
mod source;
pub mod wire;

pub use ini::{
    config_from_entries, config_to_entries, is_known_key, parse_ini, parse_ini_entries, to_ini, ConfigError, Entries,
    KNOWN_KEYS,
};
pub use lutgen::{generate_map, MapGenError};
pub use screen::{HeadlessScreens, ScreenInfo, ScreenProvider, VirtualDesktop};
pub use sink::{open_sink, FrameRecord, NullSink, RecorderSink, TcpSink};
pub use source::{
    gradient_frame, open_source, open_source_with, ImageSequenceSource, RawPipeSource,
    ScreenRegionSource, SyntheticSource,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("unsupported on this host: {0}")]
    Unsupported(String),
    #[error("frame is {found:?}, expected {expected:?}")]
    DimsMismatch {
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("malformed frame stream: {0}")]
    Malformed(String),
    #[error("invalid descriptor `{0}`")]
    InvalidDescriptor(String),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Smallest accepted region side.
pub const MIN_REGION_SIDE: u32 = 16;

/// A rectangle of one screen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub screen_index: u32,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Default for RegionSpec {
    fn default() -> Self {
        RegionSpec {
            screen_index: 0,
            x: 0,
            y: 0,
            w: 640,
            h: 480,
        }
    }
}

impl RegionSpec {
    /// Name of the first offending field, if any.
    pub fn invalid_field(&self) -> Option<&'static str> {
        if self.w < MIN_REGION_SIDE {
            Some("region_w")
        } else if self.h < MIN_REGION_SIDE {
            Some("region_h")
        } else {
            None
        }
    }
}

/// Capture timing of a frame as it moves down the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FrameMeta {
    /// Capture sequence number, from 0.
    pub index: u64,
    /// Capture time since the run started.
    pub ts_us: u64,
}

pub trait FrameSource: Send {
    fn kind(&self) -> &'static str;

    /// Dimensions of the next frame.
    fn dims(&self) -> (u32, u32);

    /// Declared frame rate, if the source has one.
    fn fps(&self) -> Option<f64>;

    /// Live sources run with lossy hand-offs; the rest process every frame.
    fn is_live(&self) -> bool;

    /// `Ok(None)` at end of stream.
    fn next_frame(&mut self) -> Result<Option<RgbImage>, IoError>;

    fn set_region(&mut self, _region: RegionSpec) -> Result<(), IoError> {
        Err(IoError::Unsupported(format!("region on {} source", self.kind())))
    }
}

pub trait FrameSink: Send {
    fn kind(&self) -> &'static str;

    fn write(&mut self, frame: &RgbImage, meta: &FrameMeta) -> Result<(), IoError>;

    fn finish(&mut self) -> Result<(), IoError> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SourceSpec {
    /// Directory of numbered images, read in lexicographic order.
    ImageSequence { path: PathBuf },
    /// Framed RGB stream; `None` reads stdin.
    RawPipe { path: Option<PathBuf> },
    /// Moving gradient of fixed size; endless unless `frames` is set.
    Synthetic {
        width: u32,
        height: u32,
        fps: Option<f64>,
        frames: Option<u64>,
    },
    Camera { index: u32 },
    ScreenRegion(RegionSpec),
}

impl Default for SourceSpec {
    fn default() -> Self {
        SourceSpec::Synthetic {
            width: 640,
            height: 480,
            fps: None,
            frames: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SinkSpec {
    /// PNG files `native_NNNNNN.png` in a directory.
    ImageSequence { path: PathBuf },
    /// Framed RGB stream; `None` writes stdout.
    RawPipe { path: Option<PathBuf> },
    /// Listens on 127.0.0.1 and streams to every connected client.
    Tcp { port: u16 },
    Window { display_index: u32 },
    Null,
}

impl Default for SinkSpec {
    fn default() -> Self {
        SinkSpec::Null
    }
}

fn parse_dims(s: &str) -> Option<(u32, u32)> {
    let (w, h) = s.split_once(['x', 'X'])?;
    Some((w.trim().parse().ok()?, h.trim().parse().ok()?))
}

fn pipe_path(rest: &str) -> Option<PathBuf> {
    (rest != "-" && !rest.is_empty()).then(|| PathBuf::from(rest))
}

impl FromStr for SourceSpec {
    type Err = IoError;

    /// `file:DIR`, `pipe:-`, `pipe:PATH`, `camera:N`, `screen:N:X,Y,WxH`,
    /// `moving-gradient WxH[@FPS][*COUNT]` (optionally prefixed
    /// `synthetic:`), or a bare directory path.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || IoError::InvalidDescriptor(s.to_owned());
        let s = s.trim();
        let synth = s.strip_prefix("synthetic:").unwrap_or(s).trim();
        if let Some(rest) = synth.strip_prefix("moving-gradient") {
            let rest = rest.trim();
            let (rest, frames) = match rest.split_once('*') {
                Some((a, n)) => (a, Some(n.trim().parse().map_err(|_| bad())?)),
                None => (rest, None),
            };
            let (dims, fps) = match rest.split_once('@') {
                Some((d, f)) => (d, Some(f.trim().parse::<f64>().map_err(|_| bad())?)),
                None => (rest, None),
            };
            let (width, height) = parse_dims(dims).ok_or_else(bad)?;
            if width == 0 || height == 0 || fps.is_some_and(|f| !(f > 0.0)) {
                return Err(bad());
            }
            return Ok(SourceSpec::Synthetic {
                width,
                height,
                fps,
                frames,
            });
        }
        if let Some(rest) = s.strip_prefix("file:") {
            return Ok(SourceSpec::ImageSequence { path: rest.into() });
        }
        if let Some(rest) = s.strip_prefix("pipe:") {
            return Ok(SourceSpec::RawPipe {
                path: pipe_path(rest),
            });
        }
        if let Some(rest) = s.strip_prefix("camera:") {
            return Ok(SourceSpec::Camera {
                index: rest.parse().map_err(|_| bad())?,
            });
        }
        if let Some(rest) = s.strip_prefix("screen:") {
            let (idx, rect) = rest.split_once(':').ok_or_else(bad)?;
            let mut parts = rect.splitn(3, ',');
            let x = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let y = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let (w, h) = parts.next().and_then(parse_dims).ok_or_else(bad)?;
            return Ok(SourceSpec::ScreenRegion(RegionSpec {
                screen_index: idx.parse().map_err(|_| bad())?,
                x,
                y,
                w,
                h,
            }));
        }
        if s.is_empty() || s.contains(':') && !std::path::Path::new(s).exists() {
            return Err(bad());
        }
        Ok(SourceSpec::ImageSequence { path: s.into() })
    }
}

impl fmt::Display for SourceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceSpec::ImageSequence { path } => write!(f, "file:{}", path.display()),
            SourceSpec::RawPipe { path: None } => f.write_str("pipe:-"),
            SourceSpec::RawPipe { path: Some(p) } => write!(f, "pipe:{}", p.display()),
            SourceSpec::Synthetic {
                width,
                height,
                fps,
                frames,
            } => {
                write!(f, "moving-gradient {width}x{height}")?;
                if let Some(fps) = fps {
                    write!(f, "@{fps}")?;
                }
                if let Some(n) = frames {
                    write!(f, "*{n}")?;
                }
                Ok(())
            }
            SourceSpec::Camera { index } => write!(f, "camera:{index}"),
            SourceSpec::ScreenRegion(r) => {
                write!(f, "screen:{}:{},{},{}x{}", r.screen_index, r.x, r.y, r.w, r.h)
            }
        }
    }
}

impl FromStr for SinkSpec {
    type Err = IoError;

    /// `file:DIR`, `pipe:-`, `pipe:PATH`, `tcp:PORT`, `window:N`, `null`,
    /// or a bare directory path.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || IoError::InvalidDescriptor(s.to_owned());
        let s = s.trim();
        if s == "null" {
            return Ok(SinkSpec::Null);
        }
        if let Some(rest) = s.strip_prefix("file:") {
            return Ok(SinkSpec::ImageSequence { path: rest.into() });
        }
        if let Some(rest) = s.strip_prefix("pipe:") {
            return Ok(SinkSpec::RawPipe {
                path: pipe_path(rest),
            });
        }
        if let Some(rest) = s.strip_prefix("tcp:") {
            return Ok(SinkSpec::Tcp {
                port: rest.parse().map_err(|_| bad())?,
            });
        }
        if let Some(rest) = s.strip_prefix("window:") {
            return Ok(SinkSpec::Window {
                display_index: rest.parse().map_err(|_| bad())?,
            });
        }
        if s.is_empty() || s.contains(':') {
            return Err(bad());
        }
        Ok(SinkSpec::ImageSequence { path: s.into() })
    }
}

impl fmt::Display for SinkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SinkSpec::ImageSequence { path } => write!(f, "file:{}", path.display()),
            SinkSpec::RawPipe { path: None } => f.write_str("pipe:-"),
            SinkSpec::RawPipe { path: Some(p) } => write!(f, "pipe:{}", p.display()),
            SinkSpec::Tcp { port } => write!(f, "tcp:{port}"),
            SinkSpec::Window { display_index } => write!(f, "window:{display_index}"),
            SinkSpec::Null => f.write_str("null"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn source_descriptors_round_trip() {
        for d in [
            "moving-gradient 320x240@10",
            "moving-gradient 64x48*5",
            "moving-gradient 8x8@2.5*3",
            "file:frames/in",
            "pipe:-",
            "pipe:/tmp/raw",
            "camera:1",
            "screen:0:10,20,800x600",
        ] {
            let s: SourceSpec = d.parse().unwrap();
            assert_eq!(s.to_string(), d);
        }
        assert_eq!(
            "synthetic:moving-gradient 320x240@10".parse::<SourceSpec>().unwrap(),
            SourceSpec::Synthetic {
                width: 320,
                height: 240,
                fps: Some(10.0),
                frames: None
            }
        );
    }

    #[test]
    fn bad_source_descriptors() {
        for d in ["moving-gradient 0x4", "moving-gradient 3x", "camera:x", "screen:0:1,2", "foo:bar", ""] {
            assert!(d.parse::<SourceSpec>().is_err(), "{d}");
        }
    }

    #[test]
    fn sink_descriptors_round_trip() {
        for d in ["file:out", "pipe:-", "tcp:9000", "window:1", "null"] {
            let s: SinkSpec = d.parse().unwrap();
            assert_eq!(s.to_string(), d);
        }
        assert!("tcp:port".parse::<SinkSpec>().is_err());
    }

    #[test]
    fn region_minimum() {
        let r = RegionSpec {
            w: 8,
            ..Default::default()
        };
        assert_eq!(r.invalid_field(), Some("region_w"));
        assert_eq!(RegionSpec::default().invalid_field(), None);
    }
}
