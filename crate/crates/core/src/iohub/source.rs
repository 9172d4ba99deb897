use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{Rgb, RgbImage};

use super::screen::{HeadlessScreens, ScreenProvider};
use super::wire::read_frame;
use super::{FrameSource, IoError, RegionSpec, SourceSpec};

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// Pixel `(x, y)` of a `w x h` moving gradient at phase `t`.
pub(crate) fn gradient_pixel(x: u32, y: u32, w: u32, h: u32, t: u64) -> Rgb<u8> {
    let gx = x as u64 * 255 / (w.max(2) - 1) as u64;
    let gy = y as u64 * 255 / (h.max(2) - 1) as u64;
    let r = ((gx + t) % 256) as u8;
    let g = gy.min(255) as u8;
    Rgb([r, g, 255 - r])
}

/// Frame `t` of the synthetic moving gradient.
pub fn gradient_frame(w: u32, h: u32, t: u64) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| gradient_pixel(x, y, w, h, t))
}

pub struct SyntheticSource {
    width: u32,
    height: u32,
    fps: Option<f64>,
    frames: Option<u64>,
    t: u64,
}

impl SyntheticSource {
    pub fn new(width: u32, height: u32, fps: Option<f64>, frames: Option<u64>) -> Self {
        SyntheticSource {
            width,
            height,
            fps,
            frames,
            t: 0,
        }
    }
}

impl FrameSource for SyntheticSource {
    fn kind(&self) -> &'static str {
        "synthetic"
    }

    fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    fn fps(&self) -> Option<f64> {
        self.fps
    }

    fn is_live(&self) -> bool {
        true
    }

    fn next_frame(&mut self) -> Result<Option<RgbImage>, IoError> {
        if self.frames.is_some_and(|n| self.t >= n) {
            return Ok(None);
        }
        let f = gradient_frame(self.width, self.height, self.t);
        self.t += 1;
        Ok(Some(f))
    }
}

pub struct ImageSequenceSource {
    files: Vec<PathBuf>,
    next: usize,
    dims: (u32, u32),
    first: Option<RgbImage>,
}

impl ImageSequenceSource {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, IoError> {
        let dir = dir.as_ref();
        let entries = std::fs::read_dir(dir).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => IoError::NotFound(dir.display().to_string()),
            _ => e.into(),
        })?;
        let mut files = Vec::new();
        for entry in entries {
            let path = entry?.path();
            let is_image = path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
            if is_image && path.is_file() {
                files.push(path);
            }
        }
        files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
        let Some(first_path) = files.first() else {
            return Err(IoError::NotFound(format!("no images in {}", dir.display())));
        };
        let first = image::open(first_path)?.into_rgb8();
        Ok(ImageSequenceSource {
            dims: first.dimensions(),
            files,
            next: 1,
            first: Some(first),
        })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }
}

impl FrameSource for ImageSequenceSource {
    fn kind(&self) -> &'static str {
        "image_sequence"
    }

    fn dims(&self) -> (u32, u32) {
        self.dims
    }

    fn fps(&self) -> Option<f64> {
        None
    }

    fn is_live(&self) -> bool {
        false
    }

    fn next_frame(&mut self) -> Result<Option<RgbImage>, IoError> {
        if let Some(f) = self.first.take() {
            return Ok(Some(f));
        }
        let Some(path) = self.files.get(self.next) else {
            return Ok(None);
        };
        self.next += 1;
        let img = image::open(path)?.into_rgb8();
        if img.dimensions() != self.dims {
            return Err(IoError::DimsMismatch {
                expected: self.dims,
                found: img.dimensions(),
            });
        }
        Ok(Some(img))
    }
}

/// Framed stream from a file, fifo or stdin.
pub struct RawPipeSource {
    reader: Box<dyn Read + Send>,
    dims: (u32, u32),
    first: Option<RgbImage>,
}

impl RawPipeSource {
    /// Reads the first frame to learn the stream dimensions.
    pub fn new(mut reader: Box<dyn Read + Send>) -> Result<Self, IoError> {
        let (first, _) = read_frame(&mut reader)?
            .ok_or_else(|| IoError::Malformed("empty frame stream".into()))?;
        Ok(RawPipeSource {
            reader,
            dims: first.dimensions(),
            first: Some(first),
        })
    }

    pub fn open(path: Option<&Path>) -> Result<Self, IoError> {
        let reader: Box<dyn Read + Send> = match path {
            Some(p) => Box::new(BufReader::new(File::open(p).map_err(|e| match e.kind() {
                io::ErrorKind::NotFound => IoError::NotFound(p.display().to_string()),
                _ => e.into(),
            })?)),
            None => Box::new(BufReader::new(io::stdin())),
        };
        Self::new(reader)
    }
}

impl FrameSource for RawPipeSource {
    fn kind(&self) -> &'static str {
        "raw_pipe"
    }

    fn dims(&self) -> (u32, u32) {
        self.dims
    }

    fn fps(&self) -> Option<f64> {
        None
    }

    fn is_live(&self) -> bool {
        false
    }

    fn next_frame(&mut self) -> Result<Option<RgbImage>, IoError> {
        if let Some(f) = self.first.take() {
            return Ok(Some(f));
        }
        match read_frame(&mut self.reader)? {
            None => Ok(None),
            Some((img, _)) if img.dimensions() != self.dims => Err(IoError::DimsMismatch {
                expected: self.dims,
                found: img.dimensions(),
            }),
            Some((img, _)) => Ok(Some(img)),
        }
    }
}

/// Region of a screen. The region can be moved or resized while running;
/// frames take the new size from the next grab on.
pub struct ScreenRegionSource {
    provider: Arc<dyn ScreenProvider>,
    region: RegionSpec,
    t: u64,
}

impl ScreenRegionSource {
    pub fn open(provider: Arc<dyn ScreenProvider>, region: RegionSpec) -> Result<Self, IoError> {
        provider.check_region(&region)?;
        Ok(ScreenRegionSource {
            provider,
            region,
            t: 0,
        })
    }

    pub fn region(&self) -> RegionSpec {
        self.region
    }
}

impl FrameSource for ScreenRegionSource {
    fn kind(&self) -> &'static str {
        "screen_region"
    }

    fn dims(&self) -> (u32, u32) {
        (self.region.w, self.region.h)
    }

    fn fps(&self) -> Option<f64> {
        None
    }

    fn is_live(&self) -> bool {
        true
    }

    fn next_frame(&mut self) -> Result<Option<RgbImage>, IoError> {
        let f = self.provider.grab(&self.region, self.t)?;
        self.t += 1;
        Ok(Some(f))
    }

    fn set_region(&mut self, region: RegionSpec) -> Result<(), IoError> {
        self.provider.check_region(&region)?;
        self.region = region;
        Ok(())
    }
}

/// Opens a source; screen regions fail with `Unsupported` because no capture
/// backend is built in.
pub fn open_source(spec: &SourceSpec) -> Result<Box<dyn FrameSource>, IoError> {
    open_source_with(spec, Arc::new(HeadlessScreens))
}

pub fn open_source_with(
    spec: &SourceSpec,
    screens: Arc<dyn ScreenProvider>,
) -> Result<Box<dyn FrameSource>, IoError> {
    Ok(match spec {
        SourceSpec::ImageSequence { path } => Box::new(ImageSequenceSource::open(path)?),
        SourceSpec::RawPipe { path } => Box::new(RawPipeSource::open(path.as_deref())?),
        SourceSpec::Synthetic {
            width,
            height,
            fps,
            frames,
        } => {
            if *width == 0 || *height == 0 {
                return Err(IoError::InvalidDescriptor(spec.to_string()));
            }
            Box::new(SyntheticSource::new(*width, *height, *fps, *frames))
        }
        SourceSpec::Camera { .. } => return Err(IoError::Unsupported("camera".into())),
        SourceSpec::ScreenRegion(r) => Box::new(ScreenRegionSource::open(screens, *r)?),
    })
}
