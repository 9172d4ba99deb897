//! Bilinear resampling for RGB frames and scalar planes.

use image::RgbImage;

/// Source taps for one destination coordinate.
#[derive(Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    frac: f32,
}

fn taps(src: u32, dst: u32) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    let max = (src - 1) as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let i0 = s.floor() as usize;
            Tap {
                i0,
                i1: (i0 + 1).min(src as usize - 1),
                frac: (s - i0 as f64) as f32,
            }
        })
        .collect()
}

/// Resizes a scalar plane of `sw x sh` values to `dw x dh`.
pub fn resize_plane(src: &[f32], sw: u32, sh: u32, dw: u32, dh: u32) -> Vec<f32> {
    debug_assert_eq!(src.len(), sw as usize * sh as usize);
    if (sw, sh) == (dw, dh) {
        return src.to_vec();
    }
    let xs = taps(sw, dw);
    let ys = taps(sh, dh);
    let sw = sw as usize;
    let mut out = Vec::with_capacity(dw as usize * dh as usize);
    for ty in &ys {
        let r0 = &src[ty.i0 * sw..(ty.i0 + 1) * sw];
        let r1 = &src[ty.i1 * sw..(ty.i1 + 1) * sw];
        for tx in &xs {
            let top = r0[tx.i0] + (r0[tx.i1] - r0[tx.i0]) * tx.frac;
            let bot = r1[tx.i0] + (r1[tx.i1] - r1[tx.i0]) * tx.frac;
            out.push(top + (bot - top) * ty.frac);
        }
    }
    out
}

/// Resizes `src` into the `dw x dh` window of `dst` whose top-left corner is
/// `(ox, oy)`. Pixels outside the window are untouched.
pub fn resize_rgb_into(src: &RgbImage, dst: &mut RgbImage, ox: u32, oy: u32, dw: u32, dh: u32) {
    let (sw, sh) = src.dimensions();
    let xs = taps(sw, dw);
    let ys = taps(sh, dh);
    let src_raw = src.as_raw();
    let stride = sw as usize * 3;
    let dst_w = dst.width() as usize;
    let dst_raw: &mut [u8] = dst;
    for (dy, ty) in ys.iter().enumerate() {
        let r0 = &src_raw[ty.i0 * stride..(ty.i0 + 1) * stride];
        let r1 = &src_raw[ty.i1 * stride..(ty.i1 + 1) * stride];
        let row_start = ((oy as usize + dy) * dst_w + ox as usize) * 3;
        let row = &mut dst_raw[row_start..row_start + dw as usize * 3];
        for (dx, tx) in xs.iter().enumerate() {
            for c in 0..3 {
                let a = r0[tx.i0 * 3 + c] as f32;
                let b = r0[tx.i1 * 3 + c] as f32;
                let p = r1[tx.i0 * 3 + c] as f32;
                let q = r1[tx.i1 * 3 + c] as f32;
                let top = a + (b - a) * tx.frac;
                let bot = p + (q - p) * tx.frac;
                row[dx * 3 + c] = (top + (bot - top) * ty.frac).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
}

/// Resizes an RGB image to `dw x dh`.
pub fn resize_rgb(src: &RgbImage, dw: u32, dh: u32) -> RgbImage {
    if src.dimensions() == (dw, dh) {
        return src.clone();
    }
    let mut out = RgbImage::new(dw, dh);
    resize_rgb_into(src, &mut out, 0, 0, dw, dh);
    out
}
