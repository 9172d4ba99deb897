mod common;

use common::*;
use image::{Rgb, RgbImage};
use proptest::prelude::*;
use quiltrt_core::calib::{Calibration, CalibrationError};
use quiltrt_core::depth::{open_backend, temporal_smooth, BackendSpec, DepthMap, SyntheticPattern};
use quiltrt_core::Workers;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn calibration_survives_serialization(seed in any::<u64>()) {
        let mut r = rng(seed);
        let c = random_calibration(&mut r, 4096);
        prop_assert_eq!(Calibration::parse(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn effective_constants_are_pure(seed in any::<u64>()) {
        let mut r = rng(seed);
        let c = random_calibration(&mut r, 4096);
        let (a, b) = (c.effective(), c.effective());
        prop_assert_eq!(a.pitch_eff.to_bits(), b.pitch_eff.to_bits());
        prop_assert_eq!(a.tilt_eff.to_bits(), b.tilt_eff.to_bits());
        prop_assert_eq!(a.subp, 1.0 / (3.0 * c.screen_w as f64));
        prop_assert!(a.pitch_eff.is_finite() && a.pitch_eff != 0.0);
    }

    #[test]
    fn normalize_is_idempotent(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (w, h) = (r.gen_range(1..=32u32), r.gen_range(1..=32u32));
        let scale: f32 = r.gen_range(0.001..1000.0);
        let values: Vec<f32> = (0..w * h).map(|_| r.gen_range(0.0..1.0f32) * scale).collect();
        let d = DepthMap::new(w, h, values);
        let once = d.normalize();
        let twice = once.normalize();
        prop_assert!(once.values.iter().all(|v| (0.0..=1.0).contains(v)));
        for (a, b) in once.values.iter().zip(&twice.values) {
            let ulps = (a.to_bits() as i64 - b.to_bits() as i64).abs();
            prop_assert!(ulps <= 1 || (a - b).abs() <= f32::EPSILON, "{a} vs {b}");
        }
    }

    #[test]
    fn smoothing_is_the_convex_blend(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (w, h) = (r.gen_range(1..=8u32), r.gen_range(1..=8u32));
        let a = random_depth(&mut r, w, h);
        let b = random_depth(&mut r, w, h);
        let alpha: f32 = r.gen_range(0.0..=1.0);
        let out = temporal_smooth(&a, &b, alpha).unwrap();
        for i in 0..(w * h) as usize {
            let expected = alpha * a.values[i] + (1.0 - alpha) * b.values[i];
            prop_assert!((out.values[i] - expected).abs() <= 1e-6);
        }
    }
}

#[test]
fn device_document_echoes_fields() {
    let doc = r#"{"pitch":50.0,"slope":-7.5,"center":0.4,"dpi":324,"screen_w":1536,"screen_h":2048}"#;
    let c = Calibration::parse(doc).unwrap();
    assert_eq!((c.pitch, c.slope, c.center, c.dpi, c.screen_w, c.screen_h), (50.0, -7.5, 0.4, 324.0, 1536, 2048));
    let e = c.effective();
    // Evaluated independently: 2048 / (1536 * -7.5) and 50 * (1536 / 324) * cos(atan(1 / 7.5)).
    assert!((e.tilt_eff - -0.177_777_777_777_777_8).abs() < 1e-12);
    assert!((e.pitch_eff - 234.957_724_606_254_1).abs() < 1e-6, "{}", e.pitch_eff);
    assert!(matches!(
        Calibration::parse(r#"{"slope":1,"center":0,"dpi":1,"screen_w":4,"screen_h":4}"#),
        Err(CalibrationError::MissingField("pitch"))
    ));
}

#[test]
fn synthetic_estimates_are_bit_deterministic() {
    let mut r = rng(21);
    let frame = random_image(&mut r, 37, 23);
    for pattern in ["hramp", "vramp", "constant:0.3", "disk:0.4,0.6,0.2,0.9,0.1"] {
        let spec = BackendSpec::Synthetic(pattern.parse::<SyntheticPattern>().unwrap());
        let run = |n: usize| Workers::new(n).install(|| open_backend(&spec).unwrap().estimate(&frame).unwrap());
        let a = run(1);
        assert_eq!(a.dimensions(), (37, 23));
        assert_eq!(a, run(1));
        assert_eq!(a, run(4));
    }
}

#[cfg(feature = "neural")]
mod neural {
    use super::*;
    use quiltrt_core::depth::{DepthBackend, NeuralBackend, Provider};

    fn model() -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/depth_standin.onnx")
    }

    /// Bright square (near) over the middle quarter of a dark (far) frame.
    fn near_object_scene(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| if in_square(w, h, x, y, 0) { Rgb([235, 225, 210]) } else { Rgb([25, 30, 40]) })
    }

    /// Whether `(x, y)` lies in the square grown by `margin` (shrunk if negative).
    fn in_square(w: u32, h: u32, x: u32, y: u32, margin: i64) -> bool {
        let (x, y) = (x as i64, y as i64);
        let (x0, x1) = ((w * 3 / 8) as i64 - margin, (w * 5 / 8) as i64 + margin);
        let (y0, y1) = ((h * 3 / 8) as i64 - margin, (h * 5 / 8) as i64 + margin);
        x >= x0 && x < x1 && y >= y0 && y < y1
    }

    #[test]
    fn full_frame_map_is_finite() {
        let mut b = NeuralBackend::load(model(), Provider::Cpu).unwrap();
        let mut r = rng(2);
        let frame = random_image(&mut r, 640, 480);
        let d = b.estimate(&frame).unwrap();
        assert_eq!(d.dimensions(), (640, 480));
        assert!(d.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn near_object_reads_nearer_than_background() {
        let mut b = NeuralBackend::load(model(), Provider::Cpu).unwrap();
        let (w, h) = (320, 240);
        let d = b.estimate(&near_object_scene(w, h)).unwrap().normalize();
        // Masks keep 12 px away from the boundary, where the estimate blurs.
        let near = d.masked_mean(|x, y| in_square(w, h, x, y, -12)).unwrap();
        let far = d.masked_mean(|x, y| !in_square(w, h, x, y, 12)).unwrap();
        assert!(near - far >= 0.2, "near {near:.3} far {far:.3}");
    }

    #[test]
    fn missing_model_is_a_load_failure() {
        assert!(NeuralBackend::load("/nonexistent/model.onnx", Provider::Cpu).is_err());
    }
}
