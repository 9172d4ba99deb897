//! Frame conditioning and quilt assembly.

use image::RgbImage;
use rayon::prelude::*;
use thiserror::Error;

use crate::lut::QuiltGeometry;
use crate::resample::{resize_plane, resize_rgb_into};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QuiltError {
    #[error("expected {expected} views, got {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("view {index} is {found:?}, tiles are {expected:?}")]
    TileDimMismatch {
        index: usize,
        expected: (u32, u32),
        found: (u32, u32),
    },
}

/// A full quilt: all views tiled into one RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct QuiltImage {
    pub geometry: QuiltGeometry,
    pub pixels: RgbImage,
}

impl QuiltImage {
    /// Copies tile `k` back out as a standalone view.
    pub fn tile(&self, k: usize) -> RgbImage {
        let g = &self.geometry;
        let (ox, oy) = g.tile_origin(k);
        let stride = g.width() as usize * 3;
        let row_len = g.tile_w as usize * 3;
        let raw = self.pixels.as_raw();
        let mut data = Vec::with_capacity(row_len * g.tile_h as usize);
        for r in 0..g.tile_h as usize {
            let start = (oy as usize + r) * stride + ox as usize * 3;
            data.extend_from_slice(&raw[start..start + row_len]);
        }
        RgbImage::from_raw(g.tile_w, g.tile_h, data).expect("tile buffer size")
    }

    /// Inverse of [`assemble_quilt`].
    pub fn extract_views(&self) -> Vec<RgbImage> {
        (0..self.geometry.n_views()).map(|k| self.tile(k)).collect()
    }
}

/// Placement of scaled content inside a target canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FitRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

/// Largest aspect-preserving rectangle for a `src_w x src_h` frame inside a
/// `target_w x target_h` canvas, centered. Odd remainders put the extra
/// row or column of bar on the bottom or right.
pub fn fit_rect(src_w: u32, src_h: u32, target_w: u32, target_h: u32) -> FitRect {
    let (sw, sh, tw, th) = (src_w as u64, src_h as u64, target_w as u64, target_h as u64);
    let (w, h) = if sw * th >= sh * tw {
        // width-bound; h = round(sh * tw / sw)
        (tw, ((2 * sh * tw + sw) / (2 * sw)).clamp(1, th))
    } else {
        (((2 * sw * th + sh) / (2 * sh)).clamp(1, tw), th)
    };
    FitRect {
        x: ((tw - w) / 2) as u32,
        y: ((th - h) / 2) as u32,
        w: w as u32,
        h: h as u32,
    }
}

/// Scales `frame` to fit inside `target_w x target_h`, centered on black.
pub fn adapt_aspect(frame: &RgbImage, target_w: u32, target_h: u32) -> RgbImage {
    let (sw, sh) = frame.dimensions();
    if (sw, sh) == (target_w, target_h) {
        return frame.clone();
    }
    let r = fit_rect(sw, sh, target_w, target_h);
    let mut out = RgbImage::new(target_w, target_h);
    resize_rgb_into(frame, &mut out, r.x, r.y, r.w, r.h);
    out
}

/// Scalar-plane counterpart of [`adapt_aspect`]: same placement, bars set to
/// `fill`.
pub fn adapt_plane(
    values: &[f32],
    src_w: u32,
    src_h: u32,
    target_w: u32,
    target_h: u32,
    fill: f32,
) -> Vec<f32> {
    let r = fit_rect(src_w, src_h, target_w, target_h);
    let content = resize_plane(values, src_w, src_h, r.w, r.h);
    if (r.w, r.h) == (target_w, target_h) {
        return content;
    }
    let mut out = vec![fill; target_w as usize * target_h as usize];
    for (row, src) in content.chunks_exact(r.w as usize).enumerate() {
        let start = (r.y as usize + row) * target_w as usize + r.x as usize;
        out[start..start + r.w as usize].copy_from_slice(src);
    }
    out
}

/// Dimensions after decimating `w x h` by `factor`.
pub fn decimated_dims(w: u32, h: u32, factor: u32) -> (u32, u32) {
    let f = factor.max(1);
    ((w / f).max(1), (h / f).max(1))
}

/// Point-samples every `factor`-th pixel in both directions.
pub fn decimate(frame: &RgbImage, factor: u32) -> RgbImage {
    let factor = factor.max(1);
    if factor == 1 {
        return frame.clone();
    }
    let (w, h) = decimated_dims(frame.width(), frame.height(), factor);
    let src = frame.as_raw();
    let stride = frame.width() as usize * 3;
    let mut data = Vec::with_capacity(w as usize * h as usize * 3);
    for y in 0..h as usize {
        let row = &src[y * factor as usize * stride..];
        for x in 0..w as usize {
            let i = x * factor as usize * 3;
            data.extend_from_slice(&row[i..i + 3]);
        }
    }
    RgbImage::from_raw(w, h, data).expect("decimated buffer size")
}

/// Tiles `views` into a quilt; view `k` lands in tile row `k / cols`
/// counted from the bottom, column `k % cols` from the left.
pub fn assemble_quilt(views: &[RgbImage], g: &QuiltGeometry) -> Result<QuiltImage, QuiltError> {
    if views.len() != g.n_views() {
        return Err(QuiltError::CountMismatch {
            expected: g.n_views(),
            found: views.len(),
        });
    }
    let tile = (g.tile_w, g.tile_h);
    if let Some((index, v)) = views.iter().enumerate().find(|(_, v)| v.dimensions() != tile) {
        return Err(QuiltError::TileDimMismatch {
            index,
            expected: tile,
            found: v.dimensions(),
        });
    }

    let stride = g.width() as usize * 3;
    let row_len = g.tile_w as usize * 3;
    let band_len = stride * g.tile_h as usize;
    let mut data = vec![0u8; band_len * g.rows as usize];
    // One band per tile row; bands are disjoint so they fill in parallel.
    data.par_chunks_mut(band_len)
        .enumerate()
        .for_each(|(band, out)| {
            let row_from_bottom = g.rows as usize - 1 - band;
            for col in 0..g.cols as usize {
                let src = views[row_from_bottom * g.cols as usize + col].as_raw();
                for r in 0..g.tile_h as usize {
                    let dst = r * stride + col * row_len;
                    out[dst..dst + row_len].copy_from_slice(&src[r * row_len..(r + 1) * row_len]);
                }
            }
        });
    Ok(QuiltImage {
        geometry: *g,
        pixels: RgbImage::from_raw(g.width(), g.height(), data).expect("quilt buffer size"),
    })
}
