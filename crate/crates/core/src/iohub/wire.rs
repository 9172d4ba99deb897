//! Framed RGB stream shared by the tcp and pipe kinds.
//!
//! Each frame is a 21-byte little-endian header followed by the payload:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `ALTF` |
//! | 4     | payload length in bytes (u32) |
//! | 2     | width (u16) |
//! | 2     | height (u16) |
//! | 1     | pixel format, 0 = RGB8 |
//! | 8     | capture timestamp in microseconds (u64) |

use std::io::{self, Read, Write};

use image::RgbImage;

use super::IoError;

pub const FRAME_MAGIC: [u8; 4] = *b"ALTF";
pub const FRAME_HEADER_LEN: usize = 21;
pub const FORMAT_RGB8: u8 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub len: u32,
    pub width: u16,
    pub height: u16,
    pub format: u8,
    pub ts_us: u64,
}

impl FrameHeader {
    pub fn to_bytes(&self) -> [u8; FRAME_HEADER_LEN] {
        let mut b = [0u8; FRAME_HEADER_LEN];
        b[0..4].copy_from_slice(&FRAME_MAGIC);
        b[4..8].copy_from_slice(&self.len.to_le_bytes());
        b[8..10].copy_from_slice(&self.width.to_le_bytes());
        b[10..12].copy_from_slice(&self.height.to_le_bytes());
        b[12] = self.format;
        b[13..21].copy_from_slice(&self.ts_us.to_le_bytes());
        b
    }

    pub fn parse(b: &[u8; FRAME_HEADER_LEN]) -> Result<Self, IoError> {
        if b[0..4] != FRAME_MAGIC {
            return Err(IoError::Malformed("bad frame magic".into()));
        }
        let h = FrameHeader {
            len: u32::from_le_bytes(b[4..8].try_into().unwrap()),
            width: u16::from_le_bytes(b[8..10].try_into().unwrap()),
            height: u16::from_le_bytes(b[10..12].try_into().unwrap()),
            format: b[12],
            ts_us: u64::from_le_bytes(b[13..21].try_into().unwrap()),
        };
        if h.format != FORMAT_RGB8 {
            return Err(IoError::Malformed(format!("unknown pixel format {}", h.format)));
        }
        if h.len as u64 != h.width as u64 * h.height as u64 * 3 {
            return Err(IoError::Malformed(format!(
                "payload length {} does not match {}x{} RGB8",
                h.len, h.width, h.height
            )));
        }
        Ok(h)
    }
}

/// Writes one frame. Frames wider or taller than 65535 are rejected.
pub fn write_frame(w: &mut impl Write, frame: &RgbImage, ts_us: u64) -> Result<(), IoError> {
    let (fw, fh) = frame.dimensions();
    let (Ok(width), Ok(height)) = (u16::try_from(fw), u16::try_from(fh)) else {
        return Err(IoError::Malformed(format!("{fw}x{fh} exceeds the frame header range")));
    };
    let header = FrameHeader {
        len: frame.as_raw().len() as u32,
        width,
        height,
        format: FORMAT_RGB8,
        ts_us,
    };
    w.write_all(&header.to_bytes())?;
    w.write_all(frame.as_raw())?;
    Ok(())
}

/// Reads one frame; `Ok(None)` on a clean end of stream between frames.
pub fn read_frame(r: &mut impl Read) -> Result<Option<(RgbImage, u64)>, IoError> {
    let mut hb = [0u8; FRAME_HEADER_LEN];
    let mut got = 0;
    while got < FRAME_HEADER_LEN {
        match r.read(&mut hb[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(IoError::Malformed("truncated frame header".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let h = FrameHeader::parse(&hb)?;
    let mut payload = vec![0u8; h.len as usize];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => IoError::Malformed("truncated frame payload".into()),
        _ => e.into(),
    })?;
    let img = RgbImage::from_raw(h.width as u32, h.height as u32, payload).expect("checked length");
    Ok(Some((img, h.ts_us)))
}
