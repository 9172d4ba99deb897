//! Fast-marching hole filling.
//!
//! Hole pixels are visited in order of their distance from the known region
//! (the arrival time of a front solved with the fast marching method). Each
//! is set to a weighted mean of the already known pixels within `radius`,
//! weighted by direction along the distance gradient, geometric distance,
//! and level-set proximity. The weights follow Telea's scheme; the
//! first-order gradient correction is left out, so every filled value is a
//! convex combination of known values.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use image::RgbImage;

/// Neighborhood radius used by the pipeline.
pub const INPAINT_RADIUS: u32 = 3;

const KNOWN: u8 = 0;
const BAND: u8 = 1;
const INSIDE: u8 = 2;
const FAR: f32 = 1.0e6;

/// Per-pixel flag image marking pixels with no source sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HoleMask {
    pub width: u32,
    pub height: u32,
    bits: Vec<bool>,
}

impl HoleMask {
    pub fn new(width: u32, height: u32) -> Self {
        HoleMask {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width as usize * height as usize);
        HoleMask {
            width,
            height,
            bits,
        }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [bool] {
        &mut self.bits
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    t: f32,
    seq: u32,
    idx: u32,
}

impl Eq for Entry {}

impl Ord for Entry {
    // min-heap on (t, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .t
            .total_cmp(&self.t)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Working window: the hole bounding box grown by the radius.
struct Region {
    x0: i32,
    y0: i32,
    w: i32,
    h: i32,
}

impl Region {
    #[inline]
    fn idx(&self, x: i32, y: i32) -> usize {
        (y * self.w + x) as usize
    }

    #[inline]
    fn contains(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && x < self.w && y < self.h
    }
}

/// Fills the hole pixels of `view` in place. Pixels outside the mask are
/// never written.
pub fn inpaint_in_place(view: &mut RgbImage, holes: &HoleMask, radius: u32) {
    let (w, h) = view.dimensions();
    assert_eq!((holes.width, holes.height), (w, h), "mask dimensions differ");
    let Some(region) = hole_region(holes, radius) else {
        return;
    };
    let rw = region.w as usize;
    let mut flags = vec![KNOWN; rw * region.h as usize];
    let mut times = vec![0.0f32; flags.len()];
    let mut inside = Vec::new();
    for (y, row) in flags.chunks_exact_mut(rw).enumerate() {
        let start = (y + region.y0 as usize) * w as usize + region.x0 as usize;
        for (x, (f, &b)) in row.iter_mut().zip(&holes.bits[start..start + rw]).enumerate() {
            if b {
                *f = INSIDE;
                inside.push((y * rw + x) as u32);
            }
        }
    }
    // Known pixels touching the hole form the initial band. It sits at t = 0
    // and every later arrival time is positive, so it drains first, in
    // raster order, ahead of the heap.
    let mut band = Vec::new();
    for &i in &inside {
        let i = i as usize;
        times[i] = FAR;
        let (x, y) = ((i % rw) as i32, (i / rw) as i32);
        for (nx, ny) in neighbors4(x, y) {
            if region.contains(nx, ny) && flags[region.idx(nx, ny)] == KNOWN {
                flags[region.idx(nx, ny)] = BAND;
                band.push(region.idx(nx, ny) as u32);
            }
        }
    }
    band.sort_unstable();
    let mut heap = BinaryHeap::new();
    let mut seq = band.len() as u32;
    let mut band = band.into_iter();

    let kernel = Kernel::new(radius as i32);
    while let Some(idx) = band.next().or_else(|| heap.pop().map(|e: Entry| e.idx)) {
        let idx = idx as usize;
        let (px, py) = ((idx as i32) % region.w, (idx as i32) / region.w);
        flags[idx] = KNOWN;
        for (nx, ny) in neighbors4(px, py) {
            if !region.contains(nx, ny) {
                continue;
            }
            let n = region.idx(nx, ny);
            if flags[n] != INSIDE {
                continue;
            }
            let t = [(-1, -1), (1, -1), (-1, 1), (1, 1)]
                .iter()
                .map(|&(dx, dy)| solve(&region, &flags, &times, (nx + dx, ny), (nx, ny + dy)))
                .fold(FAR, f32::min);
            times[n] = t;
            fill_pixel(view, &region, &flags, &times, nx, ny, &kernel);
            flags[n] = BAND;
            heap.push(Entry {
                t,
                seq,
                idx: n as u32,
            });
            seq += 1;
        }
    }
}

/// Returns a filled copy of `view`.
pub fn inpaint(view: &RgbImage, holes: &HoleMask, radius: u32) -> RgbImage {
    let mut out = view.clone();
    inpaint_in_place(&mut out, holes, radius);
    out
}

fn hole_region(holes: &HoleMask, radius: u32) -> Option<Region> {
    let (w, h) = (holes.width as i32, holes.height as i32);
    let (mut x0, mut y0, mut x1, mut y1) = (i32::MAX, i32::MAX, i32::MIN, i32::MIN);
    for y in 0..h {
        let row = &holes.bits[(y * w) as usize..((y + 1) * w) as usize];
        if let Some(first) = row.iter().position(|&b| b) {
            let last = row.iter().rposition(|&b| b).unwrap();
            x0 = x0.min(first as i32);
            x1 = x1.max(last as i32);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if x1 < x0 {
        return None;
    }
    let pad = radius as i32 + 1;
    let (x0, y0) = ((x0 - pad).max(0), (y0 - pad).max(0));
    let (x1, y1) = ((x1 + pad).min(w - 1), (y1 + pad).min(h - 1));
    Some(Region {
        x0,
        y0,
        w: x1 - x0 + 1,
        h: y1 - y0 + 1,
    })
}

fn neighbors4(x: i32, y: i32) -> impl Iterator<Item = (i32, i32)> {
    [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)].into_iter()
}

/// Arrival time at the pixel adjacent to `a` (horizontal) and `b` (vertical).
fn solve(region: &Region, flags: &[u8], times: &[f32], a: (i32, i32), b: (i32, i32)) -> f32 {
    let known = |p: (i32, i32)| {
        region.contains(p.0, p.1).then(|| region.idx(p.0, p.1)).filter(|&i| flags[i] == KNOWN)
    };
    match (known(a), known(b)) {
        (Some(i), Some(j)) => {
            let (t1, t2) = (times[i], times[j]);
            let d = t1 - t2;
            let r = (2.0 - d * d).max(0.0).sqrt();
            let s = (t1 + t2 - r) * 0.5;
            if s >= t1 && s >= t2 {
                s
            } else {
                let s = s + r;
                if s >= t1 && s >= t2 {
                    s
                } else {
                    FAR
                }
            }
        }
        (Some(i), None) => 1.0 + times[i],
        (None, Some(j)) => 1.0 + times[j],
        (None, None) => FAR,
    }
}

/// Neighborhood offsets within the radius, with their distance weights.
struct Kernel {
    taps: Vec<(i32, i32, f32)>,
}

impl Kernel {
    fn new(radius: i32) -> Self {
        let mut taps = Vec::new();
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let (rx, ry) = (-dx as f32, -dy as f32);
                let len2 = rx * rx + ry * ry;
                if len2 == 0.0 || len2 > (radius * radius) as f32 {
                    continue;
                }
                taps.push((dx, dy, 1.0 / (len2 * len2.sqrt())));
            }
        }
        Kernel { taps }
    }
}

fn fill_pixel(view: &mut RgbImage, region: &Region, flags: &[u8], times: &[f32], x: i32, y: i32, kernel: &Kernel) {
    let t = |x: i32, y: i32| times[region.idx(x, y)];
    let usable = |x: i32, y: i32| region.contains(x, y) && flags[region.idx(x, y)] != INSIDE;
    let tp = t(x, y);

    let grad = |fwd: (i32, i32), back: (i32, i32)| -> f32 {
        match (usable(fwd.0, fwd.1), usable(back.0, back.1)) {
            (true, true) => (t(fwd.0, fwd.1) - t(back.0, back.1)) * 0.5,
            (true, false) => t(fwd.0, fwd.1) - tp,
            (false, true) => tp - t(back.0, back.1),
            (false, false) => 0.0,
        }
    };
    let gx = grad((x + 1, y), (x - 1, y));
    let gy = grad((x, y + 1), (x, y - 1));

    let raw: &[u8] = view;
    let stride = view.width() as usize * 3;
    let mut acc = [0.0f64; 3];
    let mut sum = 0.0f64;
    for &(dx, dy, dst) in &kernel.taps {
        let (qx, qy) = (x + dx, y + dy);
        if !usable(qx, qy) {
            continue;
        }
        let (rx, ry) = (-dx as f32, -dy as f32);
        let lev = 1.0 / (1.0 + (t(qx, qy) - tp).abs());
        let mut dir = rx * gx + ry * gy;
        if dir.abs() <= 0.01 {
            dir = 1.0e-6;
        }
        let wgt = (dst * lev * dir).abs() as f64;
        let at = (qy + region.y0) as usize * stride + (qx + region.x0) as usize * 3;
        for c in 0..3 {
            acc[c] += wgt * raw[at + c] as f64;
        }
        sum += wgt;
    }
    if sum > 0.0 {
        let px = image::Rgb(acc.map(|a| (a / sum).round().clamp(0.0, 255.0) as u8));
        view.put_pixel((x + region.x0) as u32, (y + region.y0) as u32, px);
    }
}
