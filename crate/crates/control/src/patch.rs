//! Configuration updates.
//!
//! A PATCH body is a JSON object. Keys are `section.key` names from the INI
//! schema, or a bare key when it is unambiguous (`fps` means
//! `processing.fps`). `region` takes an object with any of `screen_index`,
//! `x`, `y`, `w`, `h`. A `null` value removes the key.

use quiltrt_core::iohub::{config_from_entries, config_to_entries, is_known_key, KNOWN_KEYS};
use quiltrt_core::pipeline::PipelineConfig;
use serde_json::Value;

use crate::error::ApiError;

const HOT_KEYS: &[&str] = &[
    "processing.fps",
    "input.screen_index",
    "input.region_x",
    "input.region_y",
    "input.region_w",
    "input.region_h",
];

pub fn is_hot(key: &str) -> bool {
    HOT_KEYS.contains(&key)
}

/// Resolved `(key, value)` updates; `None` removes the key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Patch(Vec<(String, Option<String>)>);

impl Patch {
    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|(k, _)| k.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn resolve_key(key: &str) -> Result<String, ApiError> {
    if key.contains('.') {
        return if is_known_key(key) {
            Ok(key.to_owned())
        } else {
            Err(ApiError::bad_request(format!("unknown key {key}")))
        };
    }
    if key == "fps" {
        return Ok("processing.fps".into());
    }
    let mut matches = KNOWN_KEYS.iter().filter(|k| k.split_once('.').unwrap().1 == key);
    match (matches.next(), matches.next()) {
        (Some(k), None) => Ok((*k).to_owned()),
        (Some(_), Some(_)) => Err(ApiError::bad_request(format!("ambiguous key {key}; use section.key"))),
        _ => Err(ApiError::bad_request(format!("unknown key {key}"))),
    }
}

fn scalar(key: &str, v: &Value) -> Result<Option<String>, ApiError> {
    match v {
        Value::Null => Ok(None),
        Value::String(s) => Ok(Some(s.clone())),
        Value::Number(n) => Ok(Some(n.to_string())),
        Value::Bool(b) => Ok(Some(b.to_string())),
        _ => Err(ApiError::bad_request(format!("{key} must be a string, number, boolean or null"))),
    }
}

impl Patch {
    pub fn from_json(body: &Value) -> Result<Self, ApiError> {
        let obj = body
            .as_object()
            .ok_or_else(|| ApiError::bad_request("body must be a JSON object"))?;
        let mut out = Vec::new();
        for (k, v) in obj {
            if k == "region" {
                let r = v
                    .as_object()
                    .ok_or_else(|| ApiError::bad_request("region must be an object"))?;
                for (field, fv) in r {
                    let key = match field.as_str() {
                        "screen_index" => "input.screen_index",
                        "x" => "input.region_x",
                        "y" => "input.region_y",
                        "w" => "input.region_w",
                        "h" => "input.region_h",
                        other => return Err(ApiError::bad_request(format!("unknown region field {other}"))),
                    };
                    out.push((key.to_owned(), scalar(key, fv)?));
                }
                continue;
            }
            let key = resolve_key(k)?;
            out.push((key.clone(), scalar(&key, v)?));
        }
        Ok(Patch(out))
    }
}

/// Applies `patch` to `config`, returning the validated result.
pub fn merge_patch(config: &PipelineConfig, patch: &Patch) -> Result<PipelineConfig, ApiError> {
    let mut entries = config_to_entries(config);
    for (k, v) in &patch.0 {
        match v {
            Some(v) => entries.insert(k.clone(), v.clone()),
            None => entries.remove(k),
        };
    }
    let (mut merged, _) = config_from_entries(&entries).map_err(|e| ApiError::bad_request(e.to_string()))?;
    // Not representable as entries.
    merged.delays = config.delays;
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn resolves_aliases() {
        let p = Patch::from_json(&json!({"fps": 15, "decimation": 8, "region": {"x": 4}})).unwrap();
        let keys: Vec<_> = p.keys().collect();
        assert_eq!(keys, ["processing.decimation", "processing.fps", "input.region_x"]);
        assert!(Patch::from_json(&json!({"path": "x"})).is_err());
        assert!(Patch::from_json(&json!({"bogus": 1})).is_err());
        assert!(Patch::from_json(&json!([1])).is_err());
    }

    #[test]
    fn merge_validates() {
        let c = PipelineConfig::default();
        let ok = merge_patch(&c, &Patch::from_json(&json!({"fps": 15})).unwrap()).unwrap();
        assert_eq!(ok.target_fps, 15.0);
        let err = merge_patch(&c, &Patch::from_json(&json!({"decimation": 0})).unwrap()).unwrap_err();
        assert_eq!(err.status, axum::http::StatusCode::BAD_REQUEST);
        let cleared = merge_patch(&ok, &Patch::from_json(&json!({"duration_s": null})).unwrap()).unwrap();
        assert_eq!(cleared.duration_s, None);
    }
}
