//! ONNX monocular-depth backend.
//!
//! Expects a network with one `1x3xSxS` float input (RGB, ImageNet-normalized)
//! and one inverse-depth output whose last two axes are `SxS`. Models with a
//! fixed input side run at that side; models with free spatial axes run at
//! the smallest multiple of 32 covering the frame, capped at
//! [`DEFAULT_INFERENCE_SIDE`], so decimated frames infer at reduced size.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use image::RgbImage;
use tract_onnx::prelude::*;
use tract_onnx::tract_hir::infer::Factoid;
use tract_onnx::tract_core::internal::DimLike;

use super::{DepthBackend, DepthError, DepthMap, Provider};
use crate::resample::{resize_plane, resize_rgb};

pub const DEFAULT_INFERENCE_SIDE: u32 = 256;
const MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const STD: [f32; 3] = [0.229, 0.224, 0.225];

type Plan = Arc<TypedRunnableModel>;

pub struct NeuralBackend {
    model: InferenceModel,
    fixed_side: Option<u32>,
    plans: HashMap<u32, Plan>,
    name: String,
}

fn load_err(e: impl std::fmt::Display) -> DepthError {
    DepthError::ModelLoadFailure(e.to_string())
}

fn infer_err(e: impl std::fmt::Display) -> DepthError {
    DepthError::InferenceFailure(e.to_string())
}

impl NeuralBackend {
    pub fn load(path: impl AsRef<Path>, provider: Provider) -> Result<Self, DepthError> {
        let path = path.as_ref();
        if provider != Provider::Cpu {
            log::warn!("execution provider {provider} is not available; running on cpu");
        }
        let model = tract_onnx::onnx()
            .model_for_path(path)
            .map_err(|e| load_err(format!("{}: {e}", path.display())))?;
        let fact = model.input_fact(0).map_err(load_err)?;
        let dims: Vec<Option<usize>> = fact
            .shape
            .dims()
            .map(|d| d.concretize().and_then(|d| d.to_usize().ok()))
            .collect();
        let fixed_side = match dims.as_slice() {
            [_, _, Some(h), Some(w)] if h == w => Some(*h as u32),
            [_, _, Some(h), Some(w)] => {
                return Err(load_err(format!("non-square model input {w}x{h}")))
            }
            [_, _, _, _] | [] => None,
            other => return Err(load_err(format!("unexpected input rank {}", other.len()))),
        };
        let mut backend = NeuralBackend {
            model,
            fixed_side,
            plans: HashMap::new(),
            name: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        // Fail at load rather than on the first frame.
        backend.plan(fixed_side.unwrap_or(DEFAULT_INFERENCE_SIDE))?;
        Ok(backend)
    }

    /// Square inference side used for a `w x h` frame.
    pub fn inference_side(&self, w: u32, h: u32) -> u32 {
        self.fixed_side
            .unwrap_or_else(|| (w.max(h).div_ceil(32) * 32).clamp(32, DEFAULT_INFERENCE_SIDE))
    }

    fn plan(&mut self, side: u32) -> Result<Plan, DepthError> {
        if let Some(p) = self.plans.get(&side) {
            return Ok(p.clone());
        }
        let s = side as usize;
        let plan = self
            .model
            .clone()
            .with_input_fact(0, f32::fact([1, 3, s, s]).into())
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(load_err)?;
        self.plans.insert(side, plan.clone());
        Ok(plan)
    }
}

impl DepthBackend for NeuralBackend {
    fn estimate(&mut self, frame: &RgbImage) -> Result<DepthMap, DepthError> {
        let (w, h) = frame.dimensions();
        if w == 0 || h == 0 {
            return Err(DepthError::InferenceFailure("empty frame".into()));
        }
        let side = self.inference_side(w, h);
        let plan = self.plan(side)?;
        let s = side as usize;
        let resized = resize_rgb(frame, side, side);
        let input: Tensor = tract_ndarray::Array4::from_shape_fn((1, 3, s, s), |(_, c, y, x)| {
            let v = resized.as_raw()[(y * s + x) * 3 + c] as f32 / 255.0;
            (v - MEAN[c]) / STD[c]
        })
        .into();
        let out = plan.run(tvec!(input.into())).map_err(infer_err)?;
        let view = out[0].to_plain_array_view::<f32>().map_err(infer_err)?;
        let shape = view.shape().to_vec();
        let (oh, ow) = match shape.as_slice() {
            [.., oh, ow] => (*oh, *ow),
            _ => return Err(infer_err(format!("unexpected output shape {shape:?}"))),
        };
        if view.len() != oh * ow {
            return Err(infer_err(format!("unexpected output shape {shape:?}")));
        }
        let mut values: Vec<f32> = view.iter().copied().collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(infer_err("non-finite depth output"));
        }
        // Relative inverse depth: shift so the map is nonnegative.
        let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
        if lo < 0.0 {
            values.iter_mut().for_each(|v| *v -= lo);
        }
        let values = resize_plane(&values, ow as u32, oh as u32, w, h);
        Ok(DepthMap::new(w, h, values))
    }

    fn describe(&self) -> String {
        format!("neural:{}", self.name)
    }
}
