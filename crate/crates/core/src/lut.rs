//! Per-subpixel view assignment and the precomputed quilt lookup table.
//!
//! Every native subpixel `(x, y, ch)` sees exactly one view through the lens
//! sheet. [`subpixel_view`] computes which one; [`quilt_offset`] finds the
//! sample of that view inside the quilt. [`build_lut`] evaluates both once
//! for the whole screen so the per-frame mapping is a single gather.
//!
//! Quilt layout: view 0 is the bottom-left tile, views advance left to right
//! and then upward. The in-tile sample depends only on the native pixel
//! position, not on the view.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::calib::EffectiveCalibration;
use crate::parallel::row_chunk;

/// MAP file magic.
pub const MAP_MAGIC: [u8; 4] = *b"ALTM";
/// MAP file format version.
pub const MAP_VERSION: u32 = 2;
/// Size of the MAP file header in bytes.
pub const MAP_HEADER_LEN: usize = 28;

#[derive(Debug, Error)]
pub enum LutError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad MAP magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported MAP version {0} (expected {MAP_VERSION})")]
    VersionMismatch(u32),
    #[error("MAP file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("MAP body length {found} does not match header geometry ({expected} bytes)")]
    GeometryMismatch { expected: usize, found: usize },
    #[error("invalid quilt geometry: {0}")]
    InvalidGeometry(String),
    #[error("offset {offset} at entry {index} is outside the quilt buffer")]
    OffsetOutOfRange { index: usize, offset: u32 },
    #[error("table for {screen_w}x{screen_h} screen with {quilt_len}-byte quilt exceeds the offset index range")]
    SizeOverflow {
        screen_w: u32,
        screen_h: u32,
        quilt_len: u64,
    },
}

/// Tile grid of a quilt: `rows x cols` tiles of `tile_w x tile_h` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuiltGeometry {
    pub rows: u16,
    pub cols: u16,
    pub tile_w: u32,
    pub tile_h: u32,
}

impl QuiltGeometry {
    pub fn new(rows: u16, cols: u16, tile_w: u32, tile_h: u32) -> Result<Self, LutError> {
        let g = QuiltGeometry {
            rows,
            cols,
            tile_w,
            tile_h,
        };
        g.check()?;
        Ok(g)
    }

    fn check(&self) -> Result<(), LutError> {
        if self.rows == 0 || self.cols == 0 || self.tile_w == 0 || self.tile_h == 0 {
            return Err(LutError::InvalidGeometry(format!(
                "{}x{} grid of {}x{} tiles",
                self.rows, self.cols, self.tile_w, self.tile_h
            )));
        }
        Ok(())
    }

    pub fn n_views(&self) -> usize {
        self.rows as usize * self.cols as usize
    }

    pub fn width(&self) -> u32 {
        self.cols as u32 * self.tile_w
    }

    pub fn height(&self) -> u32 {
        self.rows as u32 * self.tile_h
    }

    /// Bytes in an RGB quilt buffer of this geometry.
    pub fn buffer_len(&self) -> u64 {
        self.width() as u64 * self.height() as u64 * 3
    }

    /// Top-left quilt pixel of the tile holding view `k`.
    pub fn tile_origin(&self, k: usize) -> (u32, u32) {
        let cols = self.cols as usize;
        let row_from_bottom = (k / cols) as u32;
        let col = (k % cols) as u32;
        (
            col * self.tile_w,
            (self.rows as u32 - 1 - row_from_bottom) * self.tile_h,
        )
    }

    /// View index of the tile containing quilt pixel `(qx, qy)`.
    pub fn view_at(&self, qx: u32, qy: u32) -> usize {
        let col = (qx / self.tile_w) as usize;
        let row_from_bottom = (self.rows as u32 - 1 - qy / self.tile_h) as usize;
        row_from_bottom * self.cols as usize + col
    }
}

impl std::fmt::Display for QuiltGeometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{} views of {}x{}",
            self.rows, self.cols, self.tile_w, self.tile_h
        )
    }
}

/// View assignment of one native subpixel.
///
/// Returns the view index and the view fraction `z` in `[0, 1]` it came from.
pub fn subpixel_view(
    e: &EffectiveCalibration,
    x: u32,
    y: u32,
    ch: u32,
    n_views: usize,
) -> (usize, f64) {
    debug_assert!(x < e.screen_w && y < e.screen_h && ch < 3 && n_views >= 1);
    let mut u = (x as f64 + 0.5) / e.screen_w as f64;
    if e.flip_x {
        u = 1.0 - u;
    }
    let v = (y as f64 + 0.5) / e.screen_h as f64;
    let ch = if e.flip_subpixels { 2 - ch } else { ch };
    let phase = (u + ch as f64 * e.subp + v * e.tilt_eff) * e.pitch_eff - e.center;
    let mut z = phase - phase.floor();
    if e.inv_view {
        z = 1.0 - z;
    }
    let k = ((z * n_views as f64).floor() as usize).min(n_views - 1);
    (k, z)
}

/// In-tile sample column for native column `x`.
#[inline]
pub fn tile_x(g: &QuiltGeometry, x: u32, screen_w: u32) -> u32 {
    ((x as u64 * g.tile_w as u64) / screen_w as u64) as u32
}

/// In-tile sample row for native row `y`.
#[inline]
pub fn tile_y(g: &QuiltGeometry, y: u32, screen_h: u32) -> u32 {
    ((y as u64 * g.tile_h as u64) / screen_h as u64) as u32
}

/// Linear index into the channel-interleaved quilt buffer of the sample that
/// native subpixel `(x, y, ch)` takes from view `k`.
///
/// # Panics
///
/// If `k >= g.n_views()`.
pub fn quilt_offset(
    g: &QuiltGeometry,
    k: usize,
    x: u32,
    y: u32,
    screen_w: u32,
    screen_h: u32,
    ch: u32,
) -> usize {
    assert!(
        k < g.n_views(),
        "view index {k} out of range for {} views",
        g.n_views()
    );
    let (ox, oy) = g.tile_origin(k);
    let qx = ox + tile_x(g, x, screen_w);
    let qy = oy + tile_y(g, y, screen_h);
    (qy as usize * g.width() as usize + qx as usize) * 3 + ch as usize
}

/// Precomputed per-subpixel quilt offsets for one display and quilt geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LutMap {
    pub screen_w: u32,
    pub screen_h: u32,
    pub geometry: QuiltGeometry,
    /// `screen_w * screen_h * 3` entries, row-major by `(y, x, ch)`.
    pub offsets: Vec<u32>,
}

/// Evaluates [`subpixel_view`] and [`quilt_offset`] for every native subpixel.
pub fn build_lut(e: &EffectiveCalibration, g: &QuiltGeometry) -> Result<LutMap, LutError> {
    g.check()?;
    let (w, h) = (e.screen_w, e.screen_h);
    let entries = w as u64 * h as u64 * 3;
    if entries > u32::MAX as u64 || g.buffer_len() > u32::MAX as u64 {
        return Err(LutError::SizeOverflow {
            screen_w: w,
            screen_h: h,
            quilt_len: g.buffer_len(),
        });
    }
    let n = g.n_views();
    let row_len = w as usize * 3;
    let mut offsets = vec![0u32; entries as usize];
    if row_len == 0 {
        return Ok(LutMap {
            screen_w: w,
            screen_h: h,
            geometry: *g,
            offsets,
        });
    }
    let chunk_rows = row_chunk(h as usize);
    offsets
        .par_chunks_mut(row_len * chunk_rows)
        .enumerate()
        .for_each(|(chunk, rows)| {
            for (r, row) in rows.chunks_mut(row_len).enumerate() {
                let y = (chunk * chunk_rows + r) as u32;
                for x in 0..w {
                    for ch in 0..3 {
                        let (k, _) = subpixel_view(e, x, y, ch, n);
                        row[x as usize * 3 + ch as usize] =
                            quilt_offset(g, k, x, y, w, h, ch) as u32;
                    }
                }
            }
        });
    Ok(LutMap {
        screen_w: w,
        screen_h: h,
        geometry: *g,
        offsets,
    })
}

impl LutMap {
    /// Encodes the MAP file representation.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MAP_HEADER_LEN + self.offsets.len() * 4);
        out.extend_from_slice(&MAP_MAGIC);
        out.extend_from_slice(&MAP_VERSION.to_le_bytes());
        out.extend_from_slice(&self.screen_w.to_le_bytes());
        out.extend_from_slice(&self.screen_h.to_le_bytes());
        out.extend_from_slice(&self.geometry.rows.to_le_bytes());
        out.extend_from_slice(&self.geometry.cols.to_le_bytes());
        out.extend_from_slice(&self.geometry.tile_w.to_le_bytes());
        out.extend_from_slice(&self.geometry.tile_h.to_le_bytes());
        for o in &self.offsets {
            out.extend_from_slice(&o.to_le_bytes());
        }
        out
    }

    /// Decodes a MAP file. The header is validated before the body is read.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LutError> {
        let header = MapHeader::parse(bytes)?;
        let expected = header.body_len();
        let found = bytes.len() - MAP_HEADER_LEN;
        if found < expected {
            return Err(LutError::Truncated {
                expected: MAP_HEADER_LEN + expected,
                found: bytes.len(),
            });
        }
        if found > expected {
            return Err(LutError::GeometryMismatch { expected, found });
        }
        let limit = header.geometry.buffer_len();
        let offsets: Vec<u32> = bytes[MAP_HEADER_LEN..]
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if let Some((index, &offset)) = offsets
            .iter()
            .enumerate()
            .find(|(_, &o)| o as u64 >= limit)
        {
            return Err(LutError::OffsetOutOfRange { index, offset });
        }
        Ok(LutMap {
            screen_w: header.screen_w,
            screen_h: header.screen_h,
            geometry: header.geometry,
            offsets,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LutError> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LutError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Decoded MAP header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapHeader {
    pub version: u32,
    pub screen_w: u32,
    pub screen_h: u32,
    pub geometry: QuiltGeometry,
}

impl MapHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self, LutError> {
        if bytes.len() < 4 {
            return Err(LutError::Truncated {
                expected: MAP_HEADER_LEN,
                found: bytes.len(),
            });
        }
        let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
        if magic != MAP_MAGIC {
            return Err(LutError::BadMagic(magic));
        }
        if bytes.len() < MAP_HEADER_LEN {
            return Err(LutError::Truncated {
                expected: MAP_HEADER_LEN,
                found: bytes.len(),
            });
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let u16_at = |i: usize| u16::from_le_bytes(bytes[i..i + 2].try_into().unwrap());
        let version = u32_at(4);
        if version != MAP_VERSION {
            return Err(LutError::VersionMismatch(version));
        }
        let geometry = QuiltGeometry::new(u16_at(16), u16_at(18), u32_at(20), u32_at(24))?;
        Ok(MapHeader {
            version,
            screen_w: u32_at(8),
            screen_h: u32_at(12),
            geometry,
        })
    }

    /// Reads only the header of a MAP file.
    pub fn read(path: impl AsRef<Path>) -> Result<Self, LutError> {
        use std::io::Read;
        let mut buf = Vec::with_capacity(MAP_HEADER_LEN);
        fs::File::open(path)?
            .take(MAP_HEADER_LEN as u64)
            .read_to_end(&mut buf)?;
        Self::parse(&buf)
    }

    pub fn body_len(&self) -> usize {
        self.screen_w as usize * self.screen_h as usize * 3 * 4
    }
}

impl std::fmt::Display for MapHeader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "MAP v{}: screen {}x{}, quilt {}",
            self.version, self.screen_w, self.screen_h, self.geometry
        )
    }
}
