//! Image files: PPM (P6) for display images, PFM for float images, PNG for
//! the HTTP service.

use std::io::Cursor;
use std::path::Path;

use image::ImageFormat;
pub use image::{Rgb, Rgb32FImage, RgbImage};

use crate::{Error, Result};

fn image_err(e: impl std::fmt::Display) -> Error {
    Error::Image(e.to_string())
}

/// Binary PPM with a fixed `P6 W H 255` header.
pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.as_raw());
    out
}

/// Any PNM variant the `image` crate reads (comments and ASCII allowed),
/// converted to 8-bit RGB.
pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Pnm).map_err(image_err)?;
    Ok(img.to_rgb8())
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).map_err(image_err)?;
    Ok(out.into_inner())
}

/// Color PFM, little endian, rows stored bottom to top.
pub fn encode_pfm(img: &Rgb32FImage) -> Vec<u8> {
    let (w, h) = img.dimensions();
    let mut out = format!("PF\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w as usize * h as usize * 12);
    for y in (0..h).rev() {
        for x in 0..w {
            for c in img.get_pixel(x, y).0 {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Rgb32FImage> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if bytes.get(pos) == Some(&b'#') {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(image_err("truncated PFM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the data
    pos += 1;
    let channels = match fields[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        m => return Err(image_err(format!("not a PFM file (magic `{m}`)"))),
    };
    let parse = |s: &str| s.parse::<u32>().map_err(|_| image_err(format!("bad PFM dimension `{s}`")));
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let scale: f32 = fields[3].parse().map_err(|_| image_err("bad PFM scale"))?;
    let little = scale < 0.0;
    let n = w as usize * h as usize * channels;
    let data = bytes.get(pos..pos + 4 * n).ok_or_else(|| image_err("truncated PFM data"))?;
    let vals: Vec<f32> = data
        .chunks_exact(4)
        .map(|b| {
            let b = [b[0], b[1], b[2], b[3]];
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let mut img = Rgb32FImage::new(w, h);
    for y in 0..h {
        let row = (h - 1 - y) as usize;
        for x in 0..w {
            let i = (row * w as usize + x as usize) * channels;
            let px = if channels == 3 {
                [vals[i], vals[i + 1], vals[i + 2]]
            } else {
                [vals[i]; 3]
            };
            img.put_pixel(x, y, image::Rgb(px));
        }
    }
    Ok(img)
}

/// Scalar texture in `[0, 1]` sampled with nearest-neighbor lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarTexture {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ScalarTexture {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Empty("texture".into()));
        }
        if values.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                found: values.len(),
            });
        }
        Ok(ScalarTexture { width, height, values })
    }

    /// Channel mean of an 8-bit image divided by 255.
    pub fn from_rgb8(img: &RgbImage) -> Self {
        let values = img
            .pixels()
            .map(|p| p.0.iter().map(|&c| c as f64).sum::<f64>() / (3.0 * 255.0))
            .collect();
        ScalarTexture {
            width: img.width() as usize,
            height: img.height() as usize,
            values,
        }
    }

    /// Channel mean of a float image.
    pub fn from_rgb32f(img: &Rgb32FImage) -> Self {
        let values = img.pixels().map(|p| p.0.iter().map(|&c| c as f64).sum::<f64>() / 3.0).collect();
        ScalarTexture {
            width: img.width() as usize,
            height: img.height() as usize,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Texel index for `(u, v) ∈ [0, 1]²`, `v = 0` at the top row.
    pub fn texel(&self, u: f64, v: f64) -> (usize, usize) {
        let x = ((u * self.width as f64).floor().max(0.0) as usize).min(self.width - 1);
        let y = ((v * self.height as f64).floor().max(0.0) as usize).min(self.height - 1);
        (x, y)
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn sample(&self, u: f64, v: f64) -> f64 {
        let (x, y) = self.texel(u, v);
        self.get(x, y)
    }
}

/// Read an image file by extension: `.pfm` as float, anything else through
/// the `image` crate as 8-bit RGB.
pub fn read_texture(path: &Path) -> Result<ScalarTexture> {
    let bytes = std::fs::read(path)?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    if ext == "pfm" {
        return Ok(ScalarTexture::from_rgb32f(&decode_pfm(&bytes)?));
    }
    Ok(ScalarTexture::from_rgb8(&read_rgb8(&bytes)?))
}

/// 8-bit RGB from PPM/PGM or PNG bytes.
pub fn read_rgb8(bytes: &[u8]) -> Result<RgbImage> {
    let img = image::load_from_memory(bytes).map_err(image_err)?;
    Ok(img.to_rgb8())
}
