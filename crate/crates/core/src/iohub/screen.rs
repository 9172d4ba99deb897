//! Screen enumeration and region grabbing.
//!
//! Platform capture lives behind [`ScreenProvider`]. This crate ships a
//! headless provider that reports the capability as missing and a virtual
//! desktop that renders deterministic content.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::source::gradient_pixel;
use super::{IoError, RegionSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenInfo {
    pub index: u32,
    pub width: u32,
    pub height: u32,
}

pub trait ScreenProvider: Send + Sync {
    fn screens(&self) -> Result<Vec<ScreenInfo>, IoError>;

    /// Grabs `region` at capture tick `t`.
    fn grab(&self, region: &RegionSpec, t: u64) -> Result<RgbImage, IoError>;

    /// Checks that `region` lies inside an enumerated screen.
    fn check_region(&self, region: &RegionSpec) -> Result<ScreenInfo, IoError> {
        if let Some(field) = region.invalid_field() {
            return Err(IoError::InvalidRegion(format!(
                "{field} below the {} pixel minimum",
                super::MIN_REGION_SIDE
            )));
        }
        let screens = self.screens()?;
        let s = screens
            .iter()
            .find(|s| s.index == region.screen_index)
            .copied()
            .ok_or_else(|| {
                IoError::NotFound(format!(
                    "screen {} ({} enumerated)",
                    region.screen_index,
                    screens.len()
                ))
            })?;
        if region.x as u64 + region.w as u64 > s.width as u64
            || region.y as u64 + region.h as u64 > s.height as u64
        {
            return Err(IoError::InvalidRegion(format!(
                "{}x{}+{}+{} exceeds screen {} ({}x{})",
                region.w, region.h, region.x, region.y, s.index, s.width, s.height
            )));
        }
        Ok(s)
    }
}

/// Host without a capture backend.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeadlessScreens;

impl ScreenProvider for HeadlessScreens {
    fn screens(&self) -> Result<Vec<ScreenInfo>, IoError> {
        Err(IoError::Unsupported("screen_region".into()))
    }

    fn grab(&self, _region: &RegionSpec, _t: u64) -> Result<RgbImage, IoError> {
        Err(IoError::Unsupported("screen_region".into()))
    }
}

/// Screens of given sizes whose content is a moving gradient in desktop
/// coordinates, so moving the region moves the picture.
#[derive(Debug, Clone)]
pub struct VirtualDesktop {
    sizes: Vec<(u32, u32)>,
}

impl VirtualDesktop {
    pub fn new(sizes: Vec<(u32, u32)>) -> Self {
        VirtualDesktop { sizes }
    }
}

impl ScreenProvider for VirtualDesktop {
    fn screens(&self) -> Result<Vec<ScreenInfo>, IoError> {
        Ok(self
            .sizes
            .iter()
            .enumerate()
            .map(|(i, &(width, height))| ScreenInfo {
                index: i as u32,
                width,
                height,
            })
            .collect())
    }

    fn grab(&self, region: &RegionSpec, t: u64) -> Result<RgbImage, IoError> {
        let s = self.check_region(region)?;
        Ok(RgbImage::from_fn(region.w, region.h, |x, y| {
            gradient_pixel(region.x + x, region.y + y, s.width, s.height, t)
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region(screen_index: u32, w: u32) -> RegionSpec {
        RegionSpec {
            screen_index,
            x: 4,
            y: 4,
            w,
            h: 32,
        }
    }

    #[test]
    fn headless_is_unsupported() {
        assert!(matches!(HeadlessScreens.screens(), Err(IoError::Unsupported(k)) if k == "screen_region"));
    }

    #[test]
    fn virtual_desktop_checks() {
        let d = VirtualDesktop::new(vec![(128, 64)]);
        assert_eq!(d.grab(&region(0, 32), 0).unwrap().dimensions(), (32, 32));
        assert!(matches!(d.grab(&region(1, 32), 0), Err(IoError::NotFound(_))));
        assert!(matches!(d.grab(&region(0, 8), 0), Err(IoError::InvalidRegion(_))));
        assert!(matches!(d.grab(&region(0, 125), 0), Err(IoError::InvalidRegion(_))));
    }

    #[test]
    fn region_origin_moves_content() {
        let d = VirtualDesktop::new(vec![(128, 64)]);
        let a = d.grab(&region(0, 32), 3).unwrap();
        let b = d
            .grab(
                &RegionSpec {
                    x: 5,
                    ..region(0, 32)
                },
                3,
            )
            .unwrap();
        assert_eq!(a.get_pixel(1, 0), b.get_pixel(0, 0));
    }
}
