//! Quilt to native mapping.
//!
//! [`quilt_to_native`] is the LUT gather: one load per output subpixel, no
//! per-pixel trigonometry. [`DirectMap`] and [`views_to_native_direct`] skip
//! the quilt and read straight from the view images; both are bit-exact
//! with the assembled path. [`reconstruct_view_samples`] runs the mapping
//! backwards to simulate what one viewing angle sees.

use image::RgbImage;
use rayon::prelude::*;
use thiserror::Error;

use crate::calib::EffectiveCalibration;
use crate::lut::{subpixel_view, tile_x, tile_y, LutMap, QuiltGeometry};
use crate::parallel::row_chunk;
use crate::quilt::QuiltImage;

/// The display-ready interleaved image.
pub type NativeImage = RgbImage;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NativeError {
    #[error("quilt geometry {quilt} does not match the map geometry {map}")]
    GeometryMismatch {
        quilt: QuiltGeometry,
        map: QuiltGeometry,
    },
    #[error("expected {expected} views, got {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("view {index} is {found:?}, tiles are {expected:?}")]
    TileDimMismatch {
        index: usize,
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("map entry {index} does not follow the per-position tile sampling rule")]
    NotTileLocal { index: usize },
}

/// Gathers the native image from a quilt through the LUT.
pub fn quilt_to_native(q: &QuiltImage, m: &LutMap) -> Result<NativeImage, NativeError> {
    if q.geometry != m.geometry {
        return Err(NativeError::GeometryMismatch {
            quilt: q.geometry,
            map: m.geometry,
        });
    }
    let src = q.pixels.as_raw();
    let row_len = m.screen_w as usize * 3;
    let mut out = vec![0u8; m.offsets.len()];
    if row_len > 0 {
        let chunk = row_len * row_chunk(m.screen_h as usize);
        out.par_chunks_mut(chunk)
            .zip(m.offsets.par_chunks(chunk))
            .for_each(|(dst, offs)| {
                for (d, &o) in dst.iter_mut().zip(offs) {
                    *d = src[o as usize];
                }
            });
    }
    Ok(RgbImage::from_raw(m.screen_w, m.screen_h, out).expect("native buffer size"))
}

fn check_views(views: &[RgbImage], g: &QuiltGeometry) -> Result<(), NativeError> {
    if views.len() != g.n_views() {
        return Err(NativeError::CountMismatch {
            expected: g.n_views(),
            found: views.len(),
        });
    }
    let tile = (g.tile_w, g.tile_h);
    match views.iter().position(|v| v.dimensions() != tile) {
        Some(index) => Err(NativeError::TileDimMismatch {
            index,
            expected: tile,
            found: views[index].dimensions(),
        }),
        None => Ok(()),
    }
}

/// Maps views to the native image without materializing the quilt,
/// evaluating the view assignment per subpixel.
pub fn views_to_native_direct(
    views: &[RgbImage],
    e: &EffectiveCalibration,
    g: &QuiltGeometry,
) -> Result<NativeImage, NativeError> {
    check_views(views, g)?;
    let (w, h) = (e.screen_w, e.screen_h);
    let n = g.n_views();
    let row_len = w as usize * 3;
    let tile_stride = g.tile_w as usize * 3;
    let cols: Vec<usize> = (0..w).map(|x| tile_x(g, x, w) as usize * 3).collect();
    let mut out = vec![0u8; row_len * h as usize];
    if row_len > 0 {
        let chunk_rows = row_chunk(h as usize);
        out.par_chunks_mut(row_len * chunk_rows)
            .enumerate()
            .for_each(|(c, rows)| {
                for (r, row) in rows.chunks_mut(row_len).enumerate() {
                    let y = (c * chunk_rows + r) as u32;
                    let base = tile_y(g, y, h) as usize * tile_stride;
                    for x in 0..w {
                        for ch in 0..3u32 {
                            let (k, _) = subpixel_view(e, x, y, ch, n);
                            row[x as usize * 3 + ch as usize] =
                                views[k].as_raw()[base + cols[x as usize] + ch as usize];
                        }
                    }
                }
            });
    }
    Ok(RgbImage::from_raw(w, h, out).expect("native buffer size"))
}

/// The LUT re-expressed as a view index per subpixel plus separable in-tile
/// row and column tables, so views can be gathered without a quilt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectMap {
    pub screen_w: u32,
    pub screen_h: u32,
    pub geometry: QuiltGeometry,
    views: Vec<u16>,
    col_base: Vec<u32>,
    row_base: Vec<u32>,
}

impl DirectMap {
    fn tables(g: &QuiltGeometry, w: u32, h: u32) -> (Vec<u32>, Vec<u32>) {
        let col_base = (0..w).map(|x| tile_x(g, x, w) * 3).collect();
        let row_base = (0..h).map(|y| tile_y(g, y, h) * g.tile_w * 3).collect();
        (col_base, row_base)
    }

    /// Translates quilt offsets into view indices once. Fails if an entry
    /// does not sample the in-tile position its native pixel implies.
    pub fn from_lut(m: &LutMap) -> Result<Self, NativeError> {
        let g = &m.geometry;
        let (w, h) = (m.screen_w, m.screen_h);
        let (col_base, row_base) = Self::tables(g, w, h);
        let quilt_w = g.width() as usize;
        let mut views = Vec::with_capacity(m.offsets.len());
        for (i, &o) in m.offsets.iter().enumerate() {
            let o = o as usize;
            let ch = o % 3;
            let qx = ((o / 3) % quilt_w) as u32;
            let qy = ((o / 3) / quilt_w) as u32;
            let k = g.view_at(qx, qy);
            let (ox, oy) = g.tile_origin(k);
            let x = (i / 3) % w as usize;
            let y = (i / 3) / w as usize;
            let in_tile = ((qy - oy) * g.tile_w + (qx - ox)) * 3;
            if ch != i % 3 || in_tile != row_base[y] + col_base[x] {
                return Err(NativeError::NotTileLocal { index: i });
            }
            views.push(k as u16);
        }
        Ok(DirectMap {
            screen_w: w,
            screen_h: h,
            geometry: *g,
            views,
            col_base,
            row_base,
        })
    }

    /// Evaluates the view assignment for every subpixel.
    pub fn from_calibration(e: &EffectiveCalibration, g: &QuiltGeometry) -> Self {
        let (w, h) = (e.screen_w, e.screen_h);
        let n = g.n_views();
        let row_len = w as usize * 3;
        let mut views = vec![0u16; row_len * h as usize];
        if row_len > 0 {
            views
                .par_chunks_mut(row_len)
                .enumerate()
                .for_each(|(y, row)| {
                    for x in 0..w {
                        for ch in 0..3u32 {
                            row[x as usize * 3 + ch as usize] =
                                subpixel_view(e, x, y as u32, ch, n).0 as u16;
                        }
                    }
                });
        }
        let (col_base, row_base) = Self::tables(g, w, h);
        DirectMap {
            screen_w: w,
            screen_h: h,
            geometry: *g,
            views,
            col_base,
            row_base,
        }
    }

    /// View index of every native subpixel, row-major by `(y, x, ch)`.
    pub fn view_indices(&self) -> &[u16] {
        &self.views
    }

    /// Gathers the native image from the views.
    pub fn map_views(&self, views: &[RgbImage]) -> Result<NativeImage, NativeError> {
        check_views(views, &self.geometry)?;
        let (w, h) = (self.screen_w as usize, self.screen_h as usize);
        let row_len = w * 3;
        let srcs: Vec<&[u8]> = views.iter().map(|v| v.as_raw().as_slice()).collect();
        let mut out = vec![0u8; row_len * h];
        if row_len > 0 {
            let chunk_rows = row_chunk(h);
            out.par_chunks_mut(row_len * chunk_rows)
                .zip(self.views.par_chunks(row_len * chunk_rows))
                .enumerate()
                .for_each(|(c, (rows, idx))| {
                    for (r, (row, idx)) in
                        rows.chunks_mut(row_len).zip(idx.chunks(row_len)).enumerate()
                    {
                        let base = self.row_base[c * chunk_rows + r] as usize;
                        for x in 0..w {
                            let at = base + self.col_base[x] as usize;
                            let i = x * 3;
                            row[i] = srcs[idx[i] as usize][at];
                            row[i + 1] = srcs[idx[i + 1] as usize][at + 1];
                            row[i + 2] = srcs[idx[i + 2] as usize][at + 2];
                        }
                    }
                });
        }
        Ok(RgbImage::from_raw(self.screen_w, self.screen_h, out).expect("native buffer size"))
    }
}

/// One native subpixel seen from a given view, with the in-tile quilt
/// coordinate it was sampled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewSample {
    pub x: u32,
    pub y: u32,
    pub ch: u32,
    pub tile_x: u32,
    pub tile_y: u32,
    pub value: u8,
}

/// Every subpixel of `n` that the optics route to view `k`.
pub fn reconstruct_view_samples(
    n: &NativeImage,
    e: &EffectiveCalibration,
    g: &QuiltGeometry,
    k: usize,
) -> Vec<ViewSample> {
    assert!(k < g.n_views(), "view index {k} out of range");
    let (w, h) = (e.screen_w, e.screen_h);
    let raw = n.as_raw();
    let mut out = Vec::new();
    for y in 0..h {
        let ty = tile_y(g, y, h);
        for x in 0..w {
            for ch in 0..3 {
                if subpixel_view(e, x, y, ch, g.n_views()).0 == k {
                    out.push(ViewSample {
                        x,
                        y,
                        ch,
                        tile_x: tile_x(g, x, w),
                        tile_y: ty,
                        value: raw[((y * w + x) * 3 + ch) as usize],
                    });
                }
            }
        }
    }
    out
}
