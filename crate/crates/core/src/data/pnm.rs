//! Binary portable pixmap I/O: PPM (P6) for color, PGM (P5) for grayscale.
//!
//! 8-bit images use maxval 255; probability maps are 16-bit PGM with maxval
//! 65535, most significant byte first per the netpbm convention. Headers are
//! written in one canonical form so save -> load -> save is byte-identical.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub enum PnmImage {
    Rgb8 { width: usize, height: usize, data: Vec<u8> },
    Gray8 { width: usize, height: usize, data: Vec<u8> },
    Gray16 { width: usize, height: usize, data: Vec<u16> },
}

impl PnmImage {
    pub fn width(&self) -> usize {
        match self {
            PnmImage::Rgb8 { width, .. }
            | PnmImage::Gray8 { width, .. }
            | PnmImage::Gray16 { width, .. } => *width,
        }
    }

    pub fn height(&self) -> usize {
        match self {
            PnmImage::Rgb8 { height, .. }
            | PnmImage::Gray8 { height, .. }
            | PnmImage::Gray16 { height, .. } => *height,
        }
    }

    /// Planar [1, C, H, W] tensor with values scaled into [0, 1].
    pub fn to_tensor(&self) -> Tensor {
        match self {
            PnmImage::Rgb8 { width, height, data } => {
                let (w, h) = (*width, *height);
                let mut out = vec![0.0; 3 * w * h];
                for p in 0..w * h {
                    for c in 0..3 {
                        out[c * w * h + p] = data[3 * p + c] as f64 / 255.0;
                    }
                }
                Tensor::new(Dims::new(1, 3, h, w), out).expect("sized above")
            }
            PnmImage::Gray8 { width, height, data } => {
                let out = data.iter().map(|&v| v as f64 / 255.0).collect();
                Tensor::new(Dims::new(1, 1, *height, *width), out).expect("sized above")
            }
            PnmImage::Gray16 { width, height, data } => {
                let out = data.iter().map(|&v| v as f64 / 65535.0).collect();
                Tensor::new(Dims::new(1, 1, *height, *width), out).expect("sized above")
            }
        }
    }
}

/// Tokenizer over the PNM header: whitespace-separated fields with
/// '#'-to-newline comments.
struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn token(&mut self) -> Option<&'a [u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Option<usize> {
        std::str::from_utf8(self.token()?).ok()?.parse().ok()
    }
}

pub fn load(path: &Path) -> Result<PnmImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::format(path, reason);

    let mut header = Header { bytes: &bytes, pos: 0 };
    let magic = header.token().ok_or_else(|| bad("missing magic"))?;
    let is_color = match magic {
        b"P6" => true,
        b"P5" => false,
        _ => return Err(bad("unsupported magic (want P5 or P6)")),
    };
    let width = header.number().ok_or_else(|| bad("bad width"))?;
    let height = header.number().ok_or_else(|| bad("bad height"))?;
    let maxval = header.number().ok_or_else(|| bad("bad maxval"))?;
    if width == 0 || height == 0 {
        return Err(bad("zero image dimension"));
    }
    // Exactly one whitespace byte separates the header from the payload.
    let payload = &bytes[header.pos + 1..];
    let pixels = width * height;

    match (is_color, maxval) {
        (true, 255) => {
            if payload.len() != 3 * pixels {
                return Err(bad("truncated P6 payload"));
            }
            Ok(PnmImage::Rgb8 { width, height, data: payload.to_vec() })
        }
        (false, 255) => {
            if payload.len() != pixels {
                return Err(bad("truncated P5 payload"));
            }
            Ok(PnmImage::Gray8 { width, height, data: payload.to_vec() })
        }
        (false, 65535) => {
            if payload.len() != 2 * pixels {
                return Err(bad("truncated 16-bit P5 payload"));
            }
            let data = payload
                .chunks_exact(2)
                .map(|b| u16::from_be_bytes([b[0], b[1]]))
                .collect();
            Ok(PnmImage::Gray16 { width, height, data })
        }
        _ => Err(bad("unsupported maxval (want 255, or 65535 for P5)")),
    }
}

fn write_file(path: &Path, header: String, payload: &[u8]) -> Result<()> {
    let mut buf = header.into_bytes();
    buf.extend_from_slice(payload);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn save_rgb8(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    assert_eq!(data.len(), 3 * width * height);
    write_file(path, format!("P6\n{width} {height}\n255\n"), data)
}

pub fn save_gray8(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    assert_eq!(data.len(), width * height);
    write_file(path, format!("P5\n{width} {height}\n255\n"), data)
}

pub fn save_gray16(path: &Path, width: usize, height: usize, data: &[u16]) -> Result<()> {
    assert_eq!(data.len(), width * height);
    let mut payload = Vec::with_capacity(2 * data.len());
    for v in data {
        payload.extend_from_slice(&v.to_be_bytes());
    }
    write_file(path, format!("P5\n{width} {height}\n65535\n"), &payload)
}

/// Save a [1,1,H,W] probability map as 16-bit PGM: value = round(p * 65535).
pub fn save_probability_map(path: &Path, prob: &Tensor) -> Result<()> {
    let d = prob.dims();
    assert_eq!((d.n(), d.c()), (1, 1), "probability map must be [1,1,H,W]");
    let data: Vec<u16> = prob.data().iter().map(|&p| (p * 65535.0).round() as u16).collect();
    save_gray16(path, d.w(), d.h(), &data)
}

/// Save a [1,1,H,W] binary mask as 8-bit PGM with values {0, 255}.
pub fn save_binary_mask(path: &Path, mask: &Tensor) -> Result<()> {
    let d = mask.dims();
    assert_eq!((d.n(), d.c()), (1, 1), "mask must be [1,1,H,W]");
    let data: Vec<u8> = mask.data().iter().map(|&v| if v >= 0.5 { 255 } else { 0 }).collect();
    save_gray8(path, d.w(), d.h(), &data)
}
