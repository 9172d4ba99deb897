//! Lenticular display calibration.
//!
//! A [`Calibration`] holds the raw parameters a display reports about its lens
//! sheet. [`EffectiveCalibration`] folds them into the constants the per-subpixel
//! view assignment consumes.
//!
//! The parser accepts both a flat snake_case document and the device-native
//! layout where every value is wrapped as `{"value": x}` under camelCase keys
//! (`screenW`, `DPI`, `flipSubp`, ...), so a calibration copied out of the
//! device tooling can be pasted as is.

use serde_json::{Map, Value};
use thiserror::Error;

/// View cone assumed when the document omits it, in degrees.
pub const DEFAULT_VIEW_CONE: f64 = 40.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("malformed calibration document: {0}")]
    MalformedDocument(String),
    #[error("missing calibration field `{0}`")]
    MissingField(&'static str),
    #[error("calibration field `{0}` out of range: {1}")]
    OutOfRange(&'static str, f64),
}

/// Raw device calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// Lenticular lines per inch.
    pub pitch: f64,
    /// Lens slant; signed, never zero.
    pub slope: f64,
    /// Phase offset in view-fraction units.
    pub center: f64,
    pub dpi: f64,
    pub screen_w: u32,
    pub screen_h: u32,
    /// Degrees.
    pub view_cone: f64,
    pub inv_view: bool,
    pub flip_x: bool,
    pub flip_y: bool,
    pub flip_subpixels: bool,
    pub serial: String,
}

/// One failed invariant reported by [`Calibration::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: &'static str,
    pub value: f64,
    pub bound: &'static str,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} = {} violates {}", self.field, self.value, self.bound)
    }
}

/// Mapping constants derived from a [`Calibration`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveCalibration {
    /// View fraction advanced per normalized horizontal unit.
    pub pitch_eff: f64,
    /// Row coupling of the slanted lens.
    pub tilt_eff: f64,
    pub center: f64,
    /// Normalized subpixel width, `1 / (3 * screen_w)`.
    pub subp: f64,
    pub inv_view: bool,
    pub flip_x: bool,
    pub flip_y: bool,
    pub flip_subpixels: bool,
    pub screen_w: u32,
    pub screen_h: u32,
}

impl Calibration {
    /// Parses a JSON calibration document and checks every invariant.
    pub fn parse(text: &str) -> Result<Self, CalibrationError> {
        let doc: Value = serde_json::from_str(text)
            .map_err(|e| CalibrationError::MalformedDocument(e.to_string()))?;
        let obj = doc.as_object().ok_or_else(|| {
            CalibrationError::MalformedDocument("top level is not an object".into())
        })?;

        let cal = Calibration {
            pitch: number(obj, "pitch", &["pitch"])?,
            slope: number(obj, "slope", &["slope"])?,
            center: number(obj, "center", &["center"])?,
            dpi: number(obj, "dpi", &["dpi", "DPI"])?,
            screen_w: pixels(obj, "screen_w", &["screen_w", "screenW"])?,
            screen_h: pixels(obj, "screen_h", &["screen_h", "screenH"])?,
            view_cone: optional_number(obj, "view_cone", &["view_cone", "viewCone"])?
                .unwrap_or(DEFAULT_VIEW_CONE),
            inv_view: flag(obj, "inv_view", &["inv_view", "invView"])?,
            flip_x: flag(obj, "flip_x", &["flip_x", "flipImageX"])?,
            flip_y: flag(obj, "flip_y", &["flip_y", "flipImageY"])?,
            flip_subpixels: flag(obj, "flip_subpixels", &["flip_subpixels", "flipSubp"])?,
            serial: lookup(obj, &["serial"])
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_owned(),
        };

        if let Some(v) = cal.validate().into_iter().next() {
            return Err(CalibrationError::OutOfRange(v.field, v.value));
        }
        Ok(cal)
    }

    /// Serializes to the flat snake_case document layout.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "serial": self.serial,
            "pitch": self.pitch,
            "slope": self.slope,
            "center": self.center,
            "dpi": self.dpi,
            "screen_w": self.screen_w,
            "screen_h": self.screen_h,
            "view_cone": self.view_cone,
            "inv_view": self.inv_view,
            "flip_x": self.flip_x,
            "flip_y": self.flip_y,
            "flip_subpixels": self.flip_subpixels,
        })
        .to_string()
    }

    /// Lists every violated invariant; empty when the calibration is usable.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut check = |ok: bool, field, value: f64, bound| {
            if !ok {
                out.push(Violation { field, value, bound });
            }
        };
        check(self.pitch.is_finite() && self.pitch > 0.0, "pitch", self.pitch, "> 0");
        check(
            self.slope.is_finite() && self.slope != 0.0,
            "slope",
            self.slope,
            "!= 0",
        );
        check(self.center.is_finite(), "center", self.center, "finite");
        check(self.dpi.is_finite() && self.dpi > 0.0, "dpi", self.dpi, "> 0");
        check(self.screen_w >= 3, "screen_w", self.screen_w as f64, ">= 3");
        check(self.screen_h >= 1, "screen_h", self.screen_h as f64, ">= 1");
        check(
            self.view_cone > 0.0 && self.view_cone < 180.0,
            "view_cone",
            self.view_cone,
            "in (0, 180)",
        );
        out
    }

    /// Folds the raw parameters into per-subpixel mapping constants.
    ///
    /// The calibration is expected to be valid; see [`Calibration::validate`].
    pub fn effective(&self) -> EffectiveCalibration {
        let w = self.screen_w as f64;
        let h = self.screen_h as f64;
        let mut tilt_eff = h / (w * self.slope);
        if self.flip_y {
            tilt_eff = -tilt_eff;
        }
        let pitch_eff = self.pitch * (w / self.dpi) * (1.0 / self.slope.abs()).atan().cos();
        EffectiveCalibration {
            pitch_eff,
            tilt_eff,
            center: self.center,
            subp: 1.0 / (3.0 * w),
            inv_view: self.inv_view,
            flip_x: self.flip_x,
            flip_y: self.flip_y,
            flip_subpixels: self.flip_subpixels,
            screen_w: self.screen_w,
            screen_h: self.screen_h,
        }
    }
}

impl EffectiveCalibration {
    /// Builds constants directly, bypassing the device parameters. Used for
    /// synthetic geometries where the effective values are chosen outright.
    pub fn from_constants(
        screen_w: u32,
        screen_h: u32,
        pitch_eff: f64,
        tilt_eff: f64,
        center: f64,
    ) -> Self {
        EffectiveCalibration {
            pitch_eff,
            tilt_eff,
            center,
            subp: 1.0 / (3.0 * screen_w as f64),
            inv_view: false,
            flip_x: false,
            flip_y: false,
            flip_subpixels: false,
            screen_w,
            screen_h,
        }
    }
}

fn lookup<'a>(obj: &'a Map<String, Value>, keys: &[&str]) -> Option<&'a Value> {
    let raw = keys.iter().find_map(|k| obj.get(*k))?;
    // Device exports wrap every scalar as {"value": x}.
    match raw {
        Value::Object(inner) => inner.get("value"),
        other => Some(other),
    }
}

fn optional_number(
    obj: &Map<String, Value>,
    name: &'static str,
    keys: &[&str],
) -> Result<Option<f64>, CalibrationError> {
    match lookup(obj, keys) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| CalibrationError::MalformedDocument(format!("`{name}` is not a number"))),
    }
}

fn number(
    obj: &Map<String, Value>,
    name: &'static str,
    keys: &[&str],
) -> Result<f64, CalibrationError> {
    optional_number(obj, name, keys)?.ok_or(CalibrationError::MissingField(name))
}

fn pixels(
    obj: &Map<String, Value>,
    name: &'static str,
    keys: &[&str],
) -> Result<u32, CalibrationError> {
    let v = number(obj, name, keys)?;
    if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
        return Err(CalibrationError::OutOfRange(name, v));
    }
    Ok(v as u32)
}

fn flag(
    obj: &Map<String, Value>,
    name: &'static str,
    keys: &[&str],
) -> Result<bool, CalibrationError> {
    match lookup(obj, keys) {
        None | Some(Value::Null) => Ok(false),
        Some(Value::Bool(b)) => Ok(*b),
        Some(Value::Number(n)) => Ok(n.as_f64().unwrap_or(0.0) != 0.0),
        Some(_) => Err(CalibrationError::MalformedDocument(format!(
            "`{name}` is not a flag"
        ))),
    }
}
