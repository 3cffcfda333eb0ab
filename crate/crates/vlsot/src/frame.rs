//! Decoded video frames: interleaved RGB in `[0, 1]`, row-major.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, length `width * height * 3`, values in `[0, 1]`.
    pub rgb: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, rgb: Vec<f64>) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return Err(Error::invalid(format!(
                "frame buffer length {} does not match {width}x{height}x3",
                rgb.len()
            )));
        }
        Ok(Frame { width, height, rgb })
    }

    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        let mut rgb = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            rgb.extend_from_slice(&color);
        }
        Frame { width, height, rgb }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, color: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.rgb[i..i + 3].copy_from_slice(&color);
    }

    /// Mean of the 0-255 grayscale values, the sequence-brightness measure.
    pub fn mean_brightness(&self) -> f64 {
        let mut sum = 0.0;
        for px in self.rgb.chunks(3) {
            sum += (0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]) * 255.0;
        }
        sum / (self.width * self.height) as f64
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let rgb = img
            .into_raw()
            .into_iter()
            .map(|b| b as f64 / 255.0)
            .collect();
        Frame::new(w, h, rgb)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .rgb
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let img: image::RgbImage =
            image::ImageBuffer::from_raw(self.width as u32, self.height as u32, bytes)
                .expect("buffer length checked at construction");
        img.save(path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_preserves_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.png");
        let mut frame = Frame::filled(5, 4, [0.0, 0.5, 1.0]);
        frame.set_pixel(2, 1, [1.0, 0.0, 0.25]);
        frame.save_png(&path).unwrap();
        let loaded = Frame::load_png(&path).unwrap();
        assert_eq!(loaded.width, 5);
        assert_eq!(loaded.height, 4);
        for (a, b) in frame.rgb.iter().zip(&loaded.rgb) {
            assert!((a - b).abs() < 1.0 / 255.0 + 1e-9);
        }
    }
}
