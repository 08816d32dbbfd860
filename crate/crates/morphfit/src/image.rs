//! RGB images and scalar masks, plus binary PPM (P6) input/output.
//!
//! Quantization to 8 bits uses `floor(c * 255 + 0.5)` after clamping to
//! [0, 1]; this exact rounding rule is part of the image interface.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// An RGB image with f64 channels, interleaved row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Length `width * height * 3`.
    pub data: Vec<f64>,
}

impl Image {
    pub fn black(width: usize, height: usize) -> Image {
        Image { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Quantize to 8-bit with `floor(clamp(c) * 255 + 0.5)`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&c| (c.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8)
            .collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Image> {
        if bytes.len() != width * height * 3 {
            return Err(Error::dimension(format!(
                "pixel buffer has {} bytes, expected {}",
                bytes.len(),
                width * height * 3
            )));
        }
        Ok(Image {
            width,
            height,
            data: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        })
    }

    /// Write a binary PPM (P6, maxval 255).
    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.to_rgb8())?;
        w.flush()?;
        Ok(())
    }

    pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
        let file = File::open(path)?;
        let mut r = BufReader::new(file);
        let mut header = [0u8; 2];
        r.read_exact(&mut header)
            .map_err(|_| Error::format("truncated PPM header".to_string()))?;
        if &header != b"P6" {
            return Err(Error::format("not a binary PPM (P6) file".to_string()));
        }
        let width = read_ppm_int(&mut r)?;
        let height = read_ppm_int(&mut r)?;
        let maxval = read_ppm_int(&mut r)?;
        if maxval != 255 {
            return Err(Error::format(format!("unsupported PPM maxval {maxval}")));
        }
        let mut bytes = vec![0u8; width * height * 3];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::format("truncated PPM pixel data".to_string()))?;
        Image::from_rgb8(width, height, &bytes)
    }
}

/// Read one whitespace-delimited integer, skipping `#` comments.
fn read_ppm_int<R: Read>(r: &mut R) -> Result<usize> {
    let mut byte = [0u8; 1];
    let mut in_comment = false;
    // skip whitespace and comments
    loop {
        r.read_exact(&mut byte)
            .map_err(|_| Error::format("truncated PPM header".to_string()))?;
        match byte[0] {
            b'#' => in_comment = true,
            b'\n' => in_comment = false,
            c if c.is_ascii_whitespace() => {}
            _ if !in_comment => break,
            _ => {}
        }
    }
    let mut value: usize = 0;
    let mut any = false;
    loop {
        let c = byte[0];
        if c.is_ascii_digit() {
            any = true;
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add((c - b'0') as usize))
                .ok_or_else(|| Error::format("PPM header value overflow".to_string()))?;
        } else if c.is_ascii_whitespace() {
            break;
        } else {
            return Err(Error::format(format!("unexpected byte {c:#x} in PPM header")));
        }
        if r.read_exact(&mut byte).is_err() {
            break;
        }
    }
    if !any {
        return Err(Error::format("missing integer in PPM header".to_string()));
    }
    Ok(value)
}

/// A per-pixel scalar weight in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Mask {
    pub fn ones(width: usize, height: usize) -> Mask {
        Mask { width, height, data: vec![1.0; width * height] }
    }

    pub fn zeros(width: usize, height: usize) -> Mask {
        Mask { width, height, data: vec![0.0; width * height] }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}
