//! 8-bit binary PGM (P5) reading and writing.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Quantizes values in `[0, 1]` as `round(255 * v)`; values outside are clamped.
    pub fn from_unit(width: usize, height: usize, values: impl IntoIterator<Item = f64>) -> Self {
        let pixels: Vec<u8> = values.into_iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        assert_eq!(pixels.len(), width * height, "pixel count");
        GrayImage { width, height, pixels }
    }

    pub fn to_unit(&self) -> impl Iterator<Item = f64> + '_ {
        self.pixels.iter().map(|&p| p as f64 / 255.0)
    }

    /// Places images side by side, top-aligned, separated by `gap` black columns.
    pub fn hstack(images: &[&GrayImage], gap: usize) -> GrayImage {
        let height = images.iter().map(|i| i.height).max().unwrap_or(0);
        let width = images.iter().map(|i| i.width).sum::<usize>() + gap * images.len().saturating_sub(1);
        let mut pixels = vec![0u8; width * height];
        let mut x0 = 0;
        for img in images {
            for y in 0..img.height {
                pixels[y * width + x0..][..img.width].copy_from_slice(&img.pixels[y * img.width..][..img.width]);
            }
            x0 += img.width + gap;
        }
        GrayImage { width, height, pixels }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Format { kind: "PGM", msg: msg.to_string() };
        if !bytes.starts_with(b"P5") {
            return Err(bad("missing P5 magic"));
        }
        let mut pos = 2;
        let mut fields = [0usize; 3];
        for field in &mut fields {
            loop {
                match bytes.get(pos) {
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                            pos += 1;
                        }
                    }
                    Some(c) if c.is_ascii_whitespace() => pos += 1,
                    Some(_) => break,
                    None => return Err(bad("truncated header")),
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(|c| c.is_ascii_digit()) {
                pos += 1;
            }
            *field = std::str::from_utf8(&bytes[start..pos])
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("bad header number"))?;
        }
        // single whitespace byte separates header from raster
        pos += 1;
        let [width, height, maxval] = fields;
        if maxval != 255 {
            return Err(bad("only maxval 255 is supported"));
        }
        let raster = bytes.get(pos..pos + width * height).ok_or_else(|| bad("truncated raster"))?;
        Ok(GrayImage { width, height, pixels: raster.to_vec() })
    }
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    std::fs::write(path, img.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    GrayImage::decode(&bytes)
}
