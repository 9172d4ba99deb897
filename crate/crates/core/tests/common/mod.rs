//! Oracles and seeded generators shared by the integration tests and the
//! acceptance harness. The oracles are written from the mapping formulas
//! directly and never call the library's own evaluation.
#![allow(dead_code)]

use std::path::Path;

use image::{Rgb, RgbImage};
use quiltrt_core::calib::Calibration;
use quiltrt_core::depth::DepthMap;
use quiltrt_core::lut::QuiltGeometry;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A valid calibration on a screen of at most `max_side` pixels per side.
pub fn random_calibration(r: &mut impl Rng, max_side: u32) -> Calibration {
    let slope: f64 = r.gen_range(1.0..12.0) * if r.gen_bool(0.5) { -1.0 } else { 1.0 };
    Calibration {
        pitch: r.gen_range(5.0..80.0),
        slope,
        center: r.gen_range(-1.0..1.0),
        dpi: r.gen_range(50.0..400.0),
        screen_w: r.gen_range(3..=max_side),
        screen_h: r.gen_range(1..=max_side),
        view_cone: r.gen_range(10.0..60.0),
        inv_view: r.gen_bool(0.3),
        flip_x: r.gen_bool(0.2),
        flip_y: r.gen_bool(0.3),
        flip_subpixels: r.gen_bool(0.3),
        serial: format!("SN{}", r.gen_range(0..10_000)),
    }
}

pub fn random_geometry(r: &mut impl Rng, max_grid: u16, max_tile: u32) -> QuiltGeometry {
    QuiltGeometry {
        rows: r.gen_range(1..=max_grid),
        cols: r.gen_range(1..=max_grid),
        tile_w: r.gen_range(1..=max_tile),
        tile_h: r.gen_range(1..=max_tile),
    }
}

/// View index of native subpixel `(x, y, ch)`, evaluated from the raw
/// calibration.
pub fn oracle_view(c: &Calibration, x: u32, y: u32, ch: u32, n_views: usize) -> usize {
    let w = c.screen_w as f64;
    let h = c.screen_h as f64;
    let pitch_eff = c.pitch * (w / c.dpi) * (1.0 / c.slope.abs()).atan().cos();
    let tilt_eff = if c.flip_y { -(h / (w * c.slope)) } else { h / (w * c.slope) };
    let subp = 1.0 / (3.0 * w);
    let u = if c.flip_x {
        1.0 - (x as f64 + 0.5) / w
    } else {
        (x as f64 + 0.5) / w
    };
    let v = (y as f64 + 0.5) / h;
    let chp = if c.flip_subpixels { 2 - ch } else { ch } as f64;
    let a = (u + chp * subp + v * tilt_eff) * pitch_eff - c.center;
    let mut z = a - a.floor();
    if c.inv_view {
        z = 1.0 - z;
    }
    let k = (z * n_views as f64).floor() as usize;
    k.min(n_views - 1)
}

/// Quilt buffer offset for view `k` at native `(x, y, ch)`: view 0 is the
/// bottom-left tile, views run left to right then upward.
pub fn oracle_offset(g: &QuiltGeometry, k: usize, x: u32, y: u32, sw: u32, sh: u32, ch: u32) -> usize {
    let cols = g.cols as usize;
    let tile_row_from_top = g.rows as usize - 1 - k / cols;
    let tile_col = k % cols;
    let in_x = (x as usize * g.tile_w as usize) / sw as usize;
    let in_y = (y as usize * g.tile_h as usize) / sh as usize;
    let qx = tile_col * g.tile_w as usize + in_x;
    let qy = tile_row_from_top * g.tile_h as usize + in_y;
    let quilt_w = cols * g.tile_w as usize;
    (qy * quilt_w + qx) * 3 + ch as usize
}

/// The full offset table by brute force, row-major by `(y, x, ch)`.
pub fn oracle_table(c: &Calibration, g: &QuiltGeometry) -> Vec<u32> {
    let n = g.rows as usize * g.cols as usize;
    let mut out = Vec::with_capacity(c.screen_w as usize * c.screen_h as usize * 3);
    for y in 0..c.screen_h {
        for x in 0..c.screen_w {
            for ch in 0..3 {
                let k = oracle_view(c, x, y, ch, n);
                out.push(oracle_offset(g, k, x, y, c.screen_w, c.screen_h, ch) as u32);
            }
        }
    }
    out
}

pub fn random_image(r: &mut impl Rng, w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| Rgb([r.gen(), r.gen(), r.gen()]))
}

pub fn random_views(r: &mut impl Rng, g: &QuiltGeometry) -> Vec<RgbImage> {
    (0..g.rows as usize * g.cols as usize)
        .map(|_| random_image(r, g.tile_w, g.tile_h))
        .collect()
}

/// Depth in `[0, 1]` drawn from a few levels, so ties and plateaus occur.
pub fn random_depth(r: &mut impl Rng, w: u32, h: u32) -> DepthMap {
    let levels = r.gen_range(2..=6);
    let values = (0..w * h)
        .map(|_| r.gen_range(0..levels) as f32 / (levels - 1) as f32)
        .collect();
    DepthMap::new(w, h, values)
}

pub fn mirror_image(img: &RgbImage) -> RgbImage {
    image::imageops::flip_horizontal(img)
}

pub fn mirror_depth(d: &DepthMap) -> DepthMap {
    let (w, h) = d.dimensions();
    DepthMap::new(w, h, (0..h).flat_map(|y| (0..w).rev().map(move |x| (x, y))).map(|(x, y)| d.get(x, y)).collect())
}

/// 24 x 16 toy display; 2 x 2 quilt of 16 x 12 tiles.
pub const TOY_CALIBRATION: &str =
    r#"{"pitch":2.0,"slope":-4.0,"center":0.1,"dpi":16.0,"screen_w":24,"screen_h":16}"#;

pub fn toy_geometry() -> QuiltGeometry {
    QuiltGeometry {
        rows: 2,
        cols: 2,
        tile_w: 16,
        tile_h: 12,
    }
}

/// Writes the toy calibration into `dir` and returns its path.
pub fn write_toy_calibration(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("toy_calibration.json");
    std::fs::write(&p, TOY_CALIBRATION).unwrap();
    p
}

/// Byte-level FNV-1a, for comparing frames without keeping them.
pub fn checksum(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}
