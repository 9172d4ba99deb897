//! Multi-view synthesis from one frame and its depth map.
//!
//! Each view is a horizontal forward warp of the source: every pixel moves by
//! a disparity computed from its normalized inverse depth. Where two sources
//! land on the same target the nearer one (larger depth value) wins, ties
//! going to the larger source column. Targets nothing lands on are holes.
//!
//! Two disparity models:
//! - [`Algorithm::Fast`]: linear in normalized inverse depth around a
//!   zero-parallax plane.
//! - [`Algorithm::Geometric`]: pinhole reprojection, `focal * t / Z` with
//!   the camera offset `t` proportional to the view position.

use std::str::FromStr;

use image::RgbImage;
use rayon::prelude::*;
use thiserror::Error;

use crate::depth::DepthMap;

mod inpaint;
pub use inpaint::{inpaint, inpaint_in_place, HoleMask, INPAINT_RADIUS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ViewError {
    #[error("frame is {frame:?} but depth map is {depth:?}")]
    DimensionMismatch { frame: (u32, u32), depth: (u32, u32) },
    #[error("invalid view parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Algorithm {
    #[default]
    Fast,
    Geometric,
}

impl FromStr for Algorithm {
    type Err = ViewError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "fast" => Ok(Algorithm::Fast),
            "geometric" => Ok(Algorithm::Geometric),
            other => Err(ViewError::InvalidParams(format!("unknown algorithm `{other}`"))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Fast => "fast",
            Algorithm::Geometric => "geometric",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewParams {
    pub n_views: usize,
    pub algorithm: Algorithm,
    /// Maximal disparity in pixels (fast).
    pub gain: f64,
    /// Normalized depth that maps to zero shift (fast).
    pub zero_parallax: f64,
    /// Pixels (geometric).
    pub focal: f64,
    pub baseline: f64,
    pub z_near: f64,
    pub z_far: f64,
}

impl ViewParams {
    /// Defaults for views `width` pixels wide: gain is 4% of the width, and
    /// the geometric extreme-view disparity at the nearest depth equals it.
    pub fn for_width(width: u32, n_views: usize, algorithm: Algorithm) -> Self {
        let gain = 0.04 * width as f64;
        let (baseline, z_near) = (1.0, 1.0);
        ViewParams {
            n_views,
            algorithm,
            gain,
            zero_parallax: 0.5,
            // focal * (baseline / 2) / z_near == gain
            focal: 2.0 * gain * z_near / baseline,
            baseline,
            z_near,
            z_far: 10.0,
        }
    }

    pub fn validate(&self) -> Result<(), ViewError> {
        let bad = |m: &str| Err(ViewError::InvalidParams(m.into()));
        if self.n_views == 0 {
            return bad("n_views must be at least 1");
        }
        if !(self.gain >= 0.0) {
            return bad("gain must be nonnegative");
        }
        if !(self.z_near > 0.0 && self.z_near < self.z_far) {
            return bad("need 0 < z_near < z_far");
        }
        if !self.focal.is_finite() || !self.baseline.is_finite() {
            return bad("focal and baseline must be finite");
        }
        Ok(())
    }

    /// Signed view position in `[-1/2, 1/2]`, exactly antisymmetric in `k`.
    fn position(&self, k: usize) -> f64 {
        if self.n_views == 1 {
            return 0.0;
        }
        let span = (self.n_views - 1) as f64;
        (2.0 * k as f64 - span) / (2.0 * span)
    }
}

/// Disparity in pixels of a pixel with normalized depth `d` in view `k`.
pub fn shift_for_view(k: usize, p: &ViewParams, d: f64) -> f64 {
    debug_assert!(k < p.n_views);
    Shifter::new(k, p).at(d)
}

/// `shift_for_view` with the per-view factors hoisted out.
#[derive(Debug, Clone, Copy)]
struct Shifter {
    algorithm: Algorithm,
    scale: f64,
    zero_parallax: f64,
    inv_span: f64,
    inv_far: f64,
}

impl Shifter {
    fn new(k: usize, p: &ViewParams) -> Self {
        let pos = p.position(k);
        let scale = match p.algorithm {
            Algorithm::Fast => p.gain * pos,
            Algorithm::Geometric => p.focal * p.baseline * pos,
        };
        Shifter {
            algorithm: p.algorithm,
            scale,
            zero_parallax: p.zero_parallax,
            inv_span: 1.0 / p.z_near - 1.0 / p.z_far,
            inv_far: 1.0 / p.z_far,
        }
    }

    #[inline]
    fn at(&self, d: f64) -> f64 {
        match self.algorithm {
            Algorithm::Fast => self.scale * (d - self.zero_parallax),
            Algorithm::Geometric => self.scale * (d * self.inv_span + self.inv_far),
        }
    }
}

/// Synthesized views with their disocclusion masks.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub views: Vec<RgbImage>,
    pub holes: Vec<HoleMask>,
}

impl ViewSet {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// Fills every view's holes in parallel and drops the masks.
    pub fn inpainted(self, radius: u32) -> Vec<RgbImage> {
        let ViewSet { mut views, holes } = self;
        views
            .par_iter_mut()
            .zip(holes.par_iter())
            .for_each(|(v, h)| inpaint_in_place(v, h, radius));
        views
    }
}

/// `x.round() as i32` without the libm call.
#[inline]
fn round_i32(x: f64) -> i32 {
    let t = x as i32;
    let frac = x - t as f64;
    t.saturating_add((frac >= 0.5) as i32).saturating_sub((frac <= -0.5) as i32)
}

/// Forward-warps one scanline with integer shifts.
#[cfg(test)]
pub(crate) fn warp_row(src: &[u8], depth: &[f32], shifts: &[i32], out: &mut [u8], holes: &mut [bool]) {
    let mut best = vec![f32::NEG_INFINITY; depth.len()];
    out.fill(0);
    warp_row_with(src, depth, shifts, out, holes, &mut best);
}

/// Warps into a zeroed `out`; holes keep their zeros.

fn warp_row_with(src: &[u8], depth: &[f32], shifts: &[i32], out: &mut [u8], holes: &mut [bool], best: &mut [f32]) {
    let w = depth.len();
    let (src, out) = (&src.as_chunks::<3>().0[..w], &mut out.as_chunks_mut::<3>().0[..w]);
    let (holes, best, shifts) = (&mut holes[..w], &mut best[..w], &shifts[..w]);
    best.fill(f32::NEG_INFINITY);
    holes.fill(true);
    // Ascending source order: an equal-depth later source wins the tie.
    for xs in 0..w {
        let ts = xs.wrapping_add_signed(shifts[xs] as isize);
        if ts >= w {
            continue;
        }
        let d = depth[xs];
        if d >= best[ts] {
            best[ts] = d;
            holes[ts] = false;
            out[ts] = src[xs];
        }
    }
}

/// Builds all `p.n_views` views of `frame` by forward warping.
pub fn synth_views(frame: &RgbImage, d: &DepthMap, p: &ViewParams) -> Result<ViewSet, ViewError> {
    if frame.dimensions() != d.dimensions() {
        return Err(ViewError::DimensionMismatch {
            frame: frame.dimensions(),
            depth: d.dimensions(),
        });
    }
    p.validate()?;
    let (w, h) = frame.dimensions();
    let (views, holes) = (0..p.n_views)
        .into_par_iter()
        .map(|k| {
            let mut out = vec![0u8; w as usize * h as usize * 3];
            let mut mask = HoleMask::new(w, h);
            let mut shifts = vec![0i32; w as usize];
            let mut best = vec![f32::NEG_INFINITY; w as usize];
            let shifter = Shifter::new(k, p);
            let src = frame.as_raw();
            let row_len = w as usize * 3;
            for y in 0..h as usize {
                let drow = &d.values[y * w as usize..(y + 1) * w as usize];
                for (s, &dv) in shifts.iter_mut().zip(drow) {
                    *s = round_i32(shifter.at(dv as f64));
                }
                warp_row_with(
                    &src[y * row_len..(y + 1) * row_len],
                    drow,
                    &shifts,
                    &mut out[y * row_len..(y + 1) * row_len],
                    &mut mask.as_mut_slice()[y * w as usize..(y + 1) * w as usize],
                    &mut best,
                );
            }
            (RgbImage::from_raw(w, h, out).expect("view buffer size"), mask)
        })
        .unzip();
    Ok(ViewSet { views, holes })
}

/// Synthesizes and inpaints: the views a quilt is assembled from.
pub fn render_views(frame: &RgbImage, d: &DepthMap, p: &ViewParams) -> Result<Vec<RgbImage>, ViewError> {
    Ok(synth_views(frame, d, p)?.inpainted(INPAINT_RADIUS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn fast(n_views: usize, gain: f64, zero_parallax: f64) -> ViewParams {
        ViewParams {
            gain,
            zero_parallax,
            ..ViewParams::for_width(100, n_views, Algorithm::Fast)
        }
    }

    #[test]
    fn rounding_matches_std() {
        let cases = [0.0, -0.0, 0.5, -0.5, 1.5, -2.5, 0.49999999999999994, -0.49999999999999994, 4503599627370495.5, 1e300, -1e300];
        for x in cases.into_iter().chain([f64::NAN, f64::INFINITY, f64::NEG_INFINITY]) {
            assert_eq!(round_i32(x), x.round() as i32, "{x}");
        }
        let mut v = 0.37f64;
        for _ in 0..100_000 {
            v = (v * 7919.13).rem_euclid(400.0) - 200.0;
            assert_eq!(round_i32(v), v.round() as i32, "{v}");
        }
    }

    #[test]
    fn center_view_has_no_shift() {
        let p = fast(5, 17.0, 0.3);
        for d in [0.0, 0.2, 0.5, 0.77, 1.0] {
            assert_eq!(shift_for_view(2, &p, d), 0.0);
        }
    }

    #[test]
    fn fast_extreme_view() {
        assert_eq!(shift_for_view(0, &fast(2, 10.0, 0.0), 1.0), -5.0);
    }

    #[test]
    fn geometric_depth_endpoints() {
        let p = ViewParams {
            algorithm: Algorithm::Geometric,
            focal: 100.0,
            baseline: 0.2,
            z_near: 2.0,
            z_far: 8.0,
            ..fast(2, 0.0, 0.0)
        };
        // view 1: t = baseline / 2
        assert!((shift_for_view(1, &p, 1.0) - 100.0 * 0.1 / 2.0).abs() < 1e-12);
        assert!((shift_for_view(1, &p, 0.0) - 100.0 * 0.1 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn geometric_defaults_match_fast_gain() {
        let p = ViewParams::for_width(420, 48, Algorithm::Geometric);
        assert!((shift_for_view(47, &p, 1.0) - p.gain).abs() < 1e-9);
    }

    #[test]
    fn constant_zero_parallax_depth_is_identity() {
        let frame = RgbImage::from_fn(9, 4, |x, y| Rgb([x as u8 * 20, y as u8 * 50, 7]));
        let d = DepthMap::filled(9, 4, 0.5);
        let vs = synth_views(&frame, &d, &fast(6, 20.0, 0.5)).unwrap();
        for (v, h) in vs.views.iter().zip(&vs.holes) {
            assert_eq!(v, &frame);
            assert!(h.is_empty());
        }
    }

    #[test]
    fn near_pixel_hand_trace() {
        let frame = RgbImage::from_fn(8, 1, |x, _| Rgb([x as u8 * 10, 0, 0]));
        let mut values = vec![0.0; 8];
        values[4] = 1.0;
        let d = DepthMap::new(8, 1, values);
        let vs = synth_views(&frame, &d, &fast(2, 4.0, 0.0)).unwrap();
        let v0 = &vs.views[0];
        // shift -2: the near pixel covers background pixel 2 and leaves 4 empty
        assert_eq!(v0.get_pixel(2, 0).0, [40, 0, 0]);
        assert!(vs.holes[0].get(4, 0));
        assert_eq!(vs.holes[0].count(), 1);
        assert_eq!(v0.get_pixel(3, 0).0, [30, 0, 0]);
        // view 1 shifts +2
        assert_eq!(vs.views[1].get_pixel(6, 0).0, [40, 0, 0]);
        assert!(vs.holes[1].get(4, 0));
    }

    #[test]
    fn single_view_is_source() {
        let frame = RgbImage::from_fn(5, 3, |x, y| Rgb([x as u8, y as u8, 1]));
        let d = SyntheticDepth::hramp(5, 3);
        let vs = synth_views(&frame, &d, &fast(1, 50.0, 0.0)).unwrap();
        assert_eq!(vs.len(), 1);
        assert_eq!(vs.views[0], frame);
        assert!(vs.holes[0].is_empty());
    }

    struct SyntheticDepth;
    impl SyntheticDepth {
        fn hramp(w: u32, h: u32) -> DepthMap {
            crate::depth::SyntheticPattern::HRamp.render(w, h)
        }
    }

    #[test]
    fn dimension_mismatch() {
        let frame = RgbImage::new(4, 4);
        assert!(matches!(
            synth_views(&frame, &DepthMap::filled(4, 3, 0.0), &fast(2, 1.0, 0.0)),
            Err(ViewError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn equal_depth_tie_goes_to_larger_source() {
        let src = [1, 1, 1, 2, 2, 2, 3, 3, 3];
        let depth = [0.5, 0.5, 0.5];
        let shifts = [1, 0, -1];
        let mut out = [0u8; 9];
        let mut holes = [false; 3];
        warp_row(&src, &depth, &shifts, &mut out, &mut holes);
        // sources 0, 1, 2 all land on target 1
        assert_eq!(&out[3..6], &[3, 3, 3]);
        assert_eq!(holes, [true, false, true]);
    }

    #[test]
    fn nearer_source_wins_regardless_of_order() {
        let src = [9, 9, 9, 5, 5, 5];
        let shifts = [1, 0];
        for (depth, expect) in [([0.9f32, 0.1], 9u8), ([0.1, 0.9], 5)] {
            let mut out = [0u8; 6];
            let mut holes = [false; 2];
            warp_row(&src, &depth, &shifts, &mut out, &mut holes);
            assert_eq!(out[3], expect);
        }
    }

    #[test]
    fn inpainted_views_have_no_black_holes() {
        let frame = RgbImage::from_pixel(32, 8, Rgb([100, 150, 200]));
        let d = crate::depth::SyntheticPattern::default().render(32, 8);
        let vs = synth_views(&frame, &d, &fast(4, 8.0, 0.0)).unwrap();
        assert!(vs.holes.iter().any(|h| !h.is_empty()));
        for v in vs.inpainted(INPAINT_RADIUS) {
            assert!(v.pixels().all(|p| p.0 == [100, 150, 200]));
        }
    }
}
