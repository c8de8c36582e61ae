//! Grayscale image buffers and PGM/PPM file I/O.
//!
//! Images are row-major with row 0 at the top. Pixel *coordinates* used by
//! the rendering and landmark code are 1-based at pixel centers: coordinate
//! (1, 1) is the center of the top-left pixel, (w, h) the bottom-right.

use std::io::{self, BufRead, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed image file: {0}")]
    Malformed(String),
    #[error("image dimensions {0}x{1} do not match buffer length {2}")]
    SizeMismatch(usize, usize, usize),
}

/// 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, pixels: vec![0; width * height] }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if pixels.len() != width * height {
            return Err(ImageError::SizeMismatch(width, height, pixels.len()));
        }
        Ok(Self { width, height, pixels })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn to_float(&self) -> FloatImage {
        FloatImage {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| p as f64).collect(),
        }
    }
}

/// Floating-point image used for integrals and similarity metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl FloatImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, pixels: vec![0.0; width * height] }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, ImageError> {
        if pixels.len() != width * height {
            return Err(ImageError::SizeMismatch(width, height, pixels.len()));
        }
        Ok(Self { width, height, pixels })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.pixels[y * self.width + x] = v;
    }
}

/// 8-bit RGB image, used for overlay rendering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved r, g, b per pixel.
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        Self { width, height, pixels }
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Writes a binary PGM (P5). Comment lines are embedded verbatim after the
/// magic number, each prefixed with `# `.
pub fn write_pgm<W: Write>(out: &mut W, img: &GrayImage, comments: &[String]) -> io::Result<()> {
    out.write_all(b"P5\n")?;
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "{} {}", img.width, img.height)?;
    out.write_all(b"255\n")?;
    out.write_all(&img.pixels)
}

pub fn save_pgm<P: AsRef<Path>>(path: P, img: &GrayImage, comments: &[String]) -> Result<(), ImageError> {
    let mut f = io::BufWriter::new(std::fs::File::create(path)?);
    write_pgm(&mut f, img, comments)?;
    Ok(())
}

/// Writes a binary PPM (P6) with embedded comments.
pub fn write_ppm<W: Write>(out: &mut W, img: &RgbImage, comments: &[String]) -> io::Result<()> {
    out.write_all(b"P6\n")?;
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "{} {}", img.width, img.height)?;
    out.write_all(b"255\n")?;
    out.write_all(&img.pixels)
}

pub fn save_ppm<P: AsRef<Path>>(path: P, img: &RgbImage, comments: &[String]) -> Result<(), ImageError> {
    let mut f = io::BufWriter::new(std::fs::File::create(path)?);
    write_ppm(&mut f, img, comments)?;
    Ok(())
}

/// Reads a binary PGM (P5), skipping comment lines.
pub fn load_pgm<P: AsRef<Path>>(path: P) -> Result<GrayImage, ImageError> {
    let mut reader = io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = String::new();
    reader.read_line(&mut magic)?;
    if magic.trim() != "P5" {
        return Err(ImageError::Malformed(format!("expected P5 magic, got {:?}", magic.trim())));
    }
    let mut tokens: Vec<usize> = Vec::new();
    while tokens.len() < 3 {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(ImageError::Malformed("truncated header".into()));
        }
        let line = line.trim();
        if line.starts_with('#') {
            continue;
        }
        for tok in line.split_whitespace() {
            let v: usize = tok
                .parse()
                .map_err(|_| ImageError::Malformed(format!("bad header token {tok:?}")))?;
            tokens.push(v);
        }
    }
    let (width, height, maxval) = (tokens[0], tokens[1], tokens[2]);
    if maxval != 255 {
        return Err(ImageError::Malformed(format!("unsupported maxval {maxval}")));
    }
    let mut pixels = vec![0u8; width * height];
    reader.read_exact(&mut pixels)?;
    GrayImage::from_pixels(width, height, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let img = GrayImage::from_pixels(3, 2, vec![0, 10, 20, 30, 40, 255]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        save_pgm(&path, &img, &["seed 7".into()]).unwrap();
        let back = load_pgm(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn size_mismatch_rejected() {
        assert!(GrayImage::from_pixels(2, 2, vec![0; 3]).is_err());
    }
}
