//! INI run configuration.
//!
//! ```ini
//! [input]
//! type = file | pipe | synthetic | camera | screen
//! path = frames/            ; file: directory, pipe: stream path or -
//! camera_index = 0
//! screen_index = 0
//! region_x = 0
//! region_y = 0
//! region_w = 640
//! region_h = 480
//! width = 640               ; synthetic
//! height = 480              ; synthetic
//! frames = 100              ; synthetic, endless when absent
//! fps = 30                  ; synthetic declared rate
//!
//! [output]
//! type = file | pipe | tcp | window | null
//! path = out/
//! display_index = 0
//! port = 8788
//!
//! [processing]
//! map = display.map         ; or calibration = display.json
//! quilt_rows = 6
//! quilt_cols = 8
//! tile_w = 420
//! tile_h = 560
//! decimation = 1
//! algorithm = fast | geometric
//! model = midas.onnx        ; neural depth; synthetic depth when absent
//! provider = cpu | accel | accel_fp16
//! depth = disk              ; synthetic depth pattern
//! fps = 10
//! duration_s = 20
//! alpha = 0
//! gain = 16.8
//! zero_parallax = 0.5
//! direct = true
//! workers = 4
//! ```
//!
//! Configurations are also handled as flat `section.key -> value` entries,
//! which is what the control service merges updates into.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use super::{RegionSpec, SinkSpec, SourceSpec};
use crate::depth::{BackendSpec, Provider, SyntheticPattern};
use crate::lut::QuiltGeometry;
use crate::pipeline::{MapSource, PipelineConfig, DEFAULT_GEOMETRY};
use crate::viewsynth::Algorithm;

pub type Entries = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("malformed INI: {0}")]
    Syntax(String),
    #[error("invalid value for {key}: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("missing required key {0}")]
    MissingRequired(String),
}

impl ConfigError {
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Syntax(_) => None,
            ConfigError::InvalidValue { key, .. } | ConfigError::MissingRequired(key) => Some(key),
        }
    }
}

/// Every key of the INI schema, as `section.key`.
pub const KNOWN_KEYS: &[&str] = &[
    "input.type",
    "input.path",
    "input.camera_index",
    "input.screen_index",
    "input.region_x",
    "input.region_y",
    "input.region_w",
    "input.region_h",
    "input.width",
    "input.height",
    "input.frames",
    "input.fps",
    "output.type",
    "output.path",
    "output.display_index",
    "output.port",
    "processing.map",
    "processing.calibration",
    "processing.quilt_rows",
    "processing.quilt_cols",
    "processing.tile_w",
    "processing.tile_h",
    "processing.decimation",
    "processing.algorithm",
    "processing.model",
    "processing.provider",
    "processing.depth",
    "processing.fps",
    "processing.duration_s",
    "processing.alpha",
    "processing.gain",
    "processing.zero_parallax",
    "processing.direct",
    "processing.workers",
];

pub fn is_known_key(key: &str) -> bool {
    KNOWN_KEYS.contains(&key)
}

struct Reader<'a> {
    entries: &'a Entries,
}

fn invalid(key: &str, reason: impl Display) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_owned(),
        reason: reason.to_string(),
    }
}

impl Reader<'_> {
    fn str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.trim()).filter(|s| !s.is_empty())
    }

    fn required(&self, key: &str) -> Result<&str, ConfigError> {
        self.str(key)
            .ok_or_else(|| ConfigError::MissingRequired(key.to_owned()))
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: Display,
    {
        self.str(key)
            .map(|s| s.parse::<T>().map_err(|e| invalid(key, format!("`{s}`: {e}"))))
            .transpose()
    }

    fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: Display,
    {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.str(key).map(|s| s.to_ascii_lowercase()) {
            None => Ok(default),
            Some(s) => match s.as_str() {
                "1" | "true" | "yes" | "on" => Ok(true),
                "0" | "false" | "no" | "off" => Ok(false),
                _ => Err(invalid(key, format!("`{s}` is not a boolean"))),
            },
        }
    }
}

fn read_source(r: &Reader) -> Result<SourceSpec, ConfigError> {
    let kind = r.required("input.type")?;
    Ok(match kind {
        "file" | "image_sequence" => SourceSpec::ImageSequence {
            path: r.required("input.path")?.into(),
        },
        "pipe" | "raw_pipe" => SourceSpec::RawPipe {
            path: r.str("input.path").filter(|p| *p != "-").map(PathBuf::from),
        },
        "synthetic" => {
            let width = r.parse_or("input.width", 640u32)?;
            let height = r.parse_or("input.height", 480u32)?;
            if width == 0 {
                return Err(invalid("input.width", "must be positive"));
            }
            if height == 0 {
                return Err(invalid("input.height", "must be positive"));
            }
            let fps = r.parse::<f64>("input.fps")?;
            if fps.is_some_and(|f| !(f > 0.0 && f.is_finite())) {
                return Err(invalid("input.fps", "must be positive"));
            }
            SourceSpec::Synthetic {
                width,
                height,
                fps,
                frames: r.parse("input.frames")?,
            }
        }
        "camera" => SourceSpec::Camera {
            index: r.parse_or("input.camera_index", 0)?,
        },
        "screen" | "screen_region" => {
            let d = RegionSpec::default();
            let region = RegionSpec {
                screen_index: r.parse_or("input.screen_index", d.screen_index)?,
                x: r.parse_or("input.region_x", d.x)?,
                y: r.parse_or("input.region_y", d.y)?,
                w: r.parse_or("input.region_w", d.w)?,
                h: r.parse_or("input.region_h", d.h)?,
            };
            if let Some(field) = region.invalid_field() {
                return Err(invalid(
                    &format!("input.{field}"),
                    format!("below the {} pixel minimum", super::MIN_REGION_SIDE),
                ));
            }
            SourceSpec::ScreenRegion(region)
        }
        other => return Err(invalid("input.type", format!("unknown source kind `{other}`"))),
    })
}

fn read_sink(r: &Reader) -> Result<SinkSpec, ConfigError> {
    Ok(match r.str("output.type").unwrap_or("null") {
        "file" | "image_sequence" => SinkSpec::ImageSequence {
            path: r.required("output.path")?.into(),
        },
        "pipe" | "raw_pipe" => SinkSpec::RawPipe {
            path: r.str("output.path").filter(|p| *p != "-").map(PathBuf::from),
        },
        "tcp" | "tcp_stream" => SinkSpec::Tcp {
            port: r
                .parse("output.port")?
                .ok_or_else(|| ConfigError::MissingRequired("output.port".into()))?,
        },
        "window" => SinkSpec::Window {
            display_index: r.parse_or("output.display_index", 0)?,
        },
        "null" => SinkSpec::Null,
        other => return Err(invalid("output.type", format!("unknown sink kind `{other}`"))),
    })
}

fn read_geometry(r: &Reader) -> Result<Option<QuiltGeometry>, ConfigError> {
    let keys = [
        "processing.quilt_rows",
        "processing.quilt_cols",
        "processing.tile_w",
        "processing.tile_h",
    ];
    if keys.iter().all(|k| r.str(k).is_none()) {
        return Ok(None);
    }
    let d = DEFAULT_GEOMETRY;
    let rows: u16 = r.parse_or(keys[0], d.rows)?;
    let cols: u16 = r.parse_or(keys[1], d.cols)?;
    let tile_w: u32 = r.parse_or(keys[2], d.tile_w)?;
    let tile_h: u32 = r.parse_or(keys[3], d.tile_h)?;
    for (key, v) in keys.iter().zip([rows as u32, cols as u32, tile_w, tile_h]) {
        if v == 0 {
            return Err(invalid(key, "must be positive"));
        }
    }
    Ok(Some(QuiltGeometry {
        rows,
        cols,
        tile_w,
        tile_h,
    }))
}

/// Builds a configuration from flat entries. Unknown keys produce warnings.
pub fn config_from_entries(entries: &Entries) -> Result<(PipelineConfig, Vec<String>), ConfigError> {
    let warnings: Vec<String> = entries
        .keys()
        .filter(|k| !is_known_key(k))
        .map(|k| format!("unknown key {k}"))
        .collect();
    let r = Reader { entries };
    let map = match (r.str("processing.map"), r.str("processing.calibration")) {
        (Some(_), Some(_)) => {
            return Err(invalid("processing.calibration", "conflicts with processing.map"))
        }
        (Some(m), None) => Some(MapSource::File(m.into())),
        (None, Some(c)) => Some(MapSource::Calibration(c.into())),
        (None, None) => None,
    };
    let depth = match r.str("processing.model") {
        Some(model) => BackendSpec::Neural {
            model: model.into(),
            provider: r.parse_or("processing.provider", Provider::Cpu)?,
        },
        None => BackendSpec::Synthetic(r.parse_or("processing.depth", SyntheticPattern::default())?),
    };
    let d = PipelineConfig::default();
    let config = PipelineConfig {
        source: read_source(&r)?,
        sink: read_sink(&r)?,
        map,
        geometry: read_geometry(&r)?,
        algorithm: r.parse_or("processing.algorithm", Algorithm::Fast)?,
        gain: r.parse("processing.gain")?,
        zero_parallax: r.parse_or("processing.zero_parallax", d.zero_parallax)?,
        decimation: r.parse_or("processing.decimation", d.decimation)?,
        target_fps: r.parse_or("processing.fps", d.target_fps)?,
        duration_s: r.parse("processing.duration_s")?,
        depth,
        alpha: r.parse_or("processing.alpha", d.alpha)?,
        direct: r.flag("processing.direct", d.direct)?,
        workers: r.parse("processing.workers")?,
        delays: d.delays,
    };
    config.check().map_err(|(key, reason)| invalid(key, reason))?;
    Ok((config, warnings))
}

/// Flat entries that [`config_from_entries`] maps back to `c`.
pub fn config_to_entries(c: &PipelineConfig) -> Entries {
    let mut e = Entries::new();
    let mut set = |k: &str, v: String| {
        e.insert(k.to_owned(), v);
    };
    match &c.source {
        SourceSpec::ImageSequence { path } => {
            set("input.type", "file".into());
            set("input.path", path.display().to_string());
        }
        SourceSpec::RawPipe { path } => {
            set("input.type", "pipe".into());
            set(
                "input.path",
                path.as_ref().map_or("-".into(), |p| p.display().to_string()),
            );
        }
        SourceSpec::Synthetic {
            width,
            height,
            fps,
            frames,
        } => {
            set("input.type", "synthetic".into());
            set("input.width", width.to_string());
            set("input.height", height.to_string());
            if let Some(f) = fps {
                set("input.fps", f.to_string());
            }
            if let Some(n) = frames {
                set("input.frames", n.to_string());
            }
        }
        SourceSpec::Camera { index } => {
            set("input.type", "camera".into());
            set("input.camera_index", index.to_string());
        }
        SourceSpec::ScreenRegion(r) => {
            set("input.type", "screen".into());
            set("input.screen_index", r.screen_index.to_string());
            set("input.region_x", r.x.to_string());
            set("input.region_y", r.y.to_string());
            set("input.region_w", r.w.to_string());
            set("input.region_h", r.h.to_string());
        }
    }
    match &c.sink {
        SinkSpec::ImageSequence { path } => {
            set("output.type", "file".into());
            set("output.path", path.display().to_string());
        }
        SinkSpec::RawPipe { path } => {
            set("output.type", "pipe".into());
            set(
                "output.path",
                path.as_ref().map_or("-".into(), |p| p.display().to_string()),
            );
        }
        SinkSpec::Tcp { port } => {
            set("output.type", "tcp".into());
            set("output.port", port.to_string());
        }
        SinkSpec::Window { display_index } => {
            set("output.type", "window".into());
            set("output.display_index", display_index.to_string());
        }
        SinkSpec::Null => set("output.type", "null".into()),
    }
    match &c.map {
        Some(MapSource::File(p)) => set("processing.map", p.display().to_string()),
        Some(MapSource::Calibration(p)) => set("processing.calibration", p.display().to_string()),
        None => {}
    }
    if let Some(g) = c.geometry {
        set("processing.quilt_rows", g.rows.to_string());
        set("processing.quilt_cols", g.cols.to_string());
        set("processing.tile_w", g.tile_w.to_string());
        set("processing.tile_h", g.tile_h.to_string());
    }
    match &c.depth {
        BackendSpec::Synthetic(p) => set("processing.depth", p.to_string()),
        BackendSpec::Neural { model, provider } => {
            set("processing.model", model.display().to_string());
            set("processing.provider", provider.to_string());
        }
    }
    set("processing.algorithm", c.algorithm.to_string());
    if let Some(g) = c.gain {
        set("processing.gain", g.to_string());
    }
    set("processing.zero_parallax", c.zero_parallax.to_string());
    set("processing.decimation", c.decimation.to_string());
    set("processing.fps", c.target_fps.to_string());
    if let Some(d) = c.duration_s {
        set("processing.duration_s", d.to_string());
    }
    set("processing.alpha", c.alpha.to_string());
    set("processing.direct", c.direct.to_string());
    if let Some(w) = c.workers {
        set("processing.workers", w.to_string());
    }
    e
}

/// Flattens INI text to `section.key` entries without interpreting them.
pub fn parse_ini_entries(text: &str) -> Result<Entries, ConfigError> {
    let doc = ::ini::Ini::load_from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let mut entries = Entries::new();
    for (section, props) in doc.iter() {
        for (k, v) in props.iter() {
            let key = match section {
                Some(s) => format!("{}.{}", s.trim().to_ascii_lowercase(), k.trim().to_ascii_lowercase()),
                None => k.trim().to_ascii_lowercase(),
            };
            entries.insert(key, v.to_owned());
        }
    }
    Ok(entries)
}

/// Parses INI text; returns the configuration and any warnings.
pub fn parse_ini(text: &str) -> Result<(PipelineConfig, Vec<String>), ConfigError> {
    let (config, warnings) = config_from_entries(&parse_ini_entries(text)?)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((config, warnings))
}

/// Serializes to INI text that [`parse_ini`] reads back to an equal config.
pub fn to_ini(c: &PipelineConfig) -> String {
    let mut doc = ::ini::Ini::new();
    for (key, value) in config_to_entries(c) {
        let (section, k) = key.split_once('.').expect("sectioned key");
        doc.with_section(Some(section)).set(k, value);
    }
    let mut out = Vec::new();
    doc.write_to(&mut out).expect("writing to memory");
    String::from_utf8(out).expect("utf-8 INI")
}
