//! Channel-first frame images and lossless PNG storage.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// `channels × height × width` image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Pixel tokens: `(height · width) × channels`, row-major over pixels.
    pub fn to_tokens(&self) -> Matrix {
        let mut m = Matrix::zeros(self.height * self.width, self.channels);
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    m.set(y * self.width + x, c, self.get(c, y, x));
                }
            }
        }
        m
    }

    /// Writes an 8-bit RGB (3 channels) or grayscale (1 channel) PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let color = match self.channels {
            1 => png::ColorType::Grayscale,
            3 => png::ColorType::Rgb,
            c => return Err(Error::invalid(format!("cannot store {c}-channel image as PNG"))),
        };
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut bytes = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    bytes.push((self.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        let png_err = |e: png::EncodingError| Error::invalid(format!("png encode {}: {e}", path.display()));
        let mut w = enc.write_header().map_err(png_err)?;
        w.write_image_data(&bytes).map_err(png_err)?;
        w.finish().map_err(png_err)
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let dec = png::Decoder::new(std::io::BufReader::new(file));
        let bad = |e: png::DecodingError| Error::invalid(format!("png decode {}: {e}", path.display()));
        let mut reader = dec.read_info().map_err(bad)?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::invalid(format!("png {} too large", path.display())))?;
        let mut buf = vec![0u8; size];
        let info = reader.next_frame(&mut buf).map_err(bad)?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(Error::invalid(format!("{}: expected 8-bit PNG", path.display())));
        }
        let channels = match info.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::Rgb => 3,
            other => {
                return Err(Error::invalid(format!("{}: unsupported color {other:?}", path.display())))
            }
        };
        let (w, h) = (info.width as usize, info.height as usize);
        let mut img = Image::zeros(channels, h, w);
        for y in 0..h {
            for x in 0..w {
                for c in 0..channels {
                    let v = buf[y * info.line_size + x * channels + c];
                    img.set(c, y, x, v as f64 / 255.0);
                }
            }
        }
        Ok(img)
    }

    /// Rounds intensities to the 8-bit grid, matching a PNG round trip.
    pub fn quantized(&self) -> Image {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_quantized_images() {
        let mut img = Image::zeros(3, 4, 5);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.173).fract();
        }
        let img = img.quantized();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        img.save_png(&p).unwrap();
        assert_eq!(Image::load_png(&p).unwrap(), img);
    }

    #[test]
    fn tokens_are_pixel_major() {
        let mut img = Image::zeros(2, 2, 3);
        img.set(1, 1, 2, 0.5);
        let t = img.to_tokens();
        assert_eq!(t.shape(), (6, 2));
        assert_eq!(t.get(5, 1), 0.5);
    }
}
