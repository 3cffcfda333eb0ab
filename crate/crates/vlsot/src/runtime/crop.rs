//! Region cropping and training augmentation. Crops are square windows of
//! side `scale * sqrt(w*h)` around a box center, resampled bilinearly to a
//! fixed output size; out-of-frame area is padded with the per-channel
//! image mean, so it normalizes to zero.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::boxes::BoundingBox;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::visual::{ImageTensor, CHANNEL_MEAN};

/// Affine map between crop pixel coordinates and frame coordinates:
/// `frame = origin + crop * scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropTransform {
    pub x0: f64,
    pub y0: f64,
    /// Frame units per crop pixel.
    pub scale: f64,
}

impl CropTransform {
    pub fn box_to_frame(&self, b: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x: self.x0 + b.x * self.scale,
            y: self.y0 + b.y * self.scale,
            w: b.w * self.scale,
            h: b.h * self.scale,
        }
    }

    pub fn box_to_crop(&self, b: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x: (b.x - self.x0) / self.scale,
            y: (b.y - self.y0) / self.scale,
            w: b.w / self.scale,
            h: b.h / self.scale,
        }
    }
}

/// A resampled crop, still in raw RGB (pre-normalization).
pub struct Crop {
    pub rgb: Vec<f64>,
    pub out_size: usize,
    pub transform: CropTransform,
}

impl Crop {
    /// Normalize into the network's input representation.
    pub fn into_image(self) -> Result<ImageTensor> {
        ImageTensor::from_rgb(self.out_size, self.out_size, &self.rgb)
    }

    /// Multiply raw channel values (brightness jitter).
    pub fn scale_brightness(&mut self, factor: f64) {
        for v in &mut self.rgb {
            *v *= factor;
        }
    }
}

fn bilinear(frame: &Frame, sx: f64, sy: f64) -> [f64; 3] {
    // Pixel i samples at coordinate i + 0.5.
    let px = sx - 0.5;
    let py = sy - 0.5;
    let x0 = px.floor();
    let y0 = py.floor();
    let fx = px - x0;
    let fy = py - y0;
    let fetch = |ix: i64, iy: i64| -> [f64; 3] {
        if ix < 0 || iy < 0 || ix >= frame.width as i64 || iy >= frame.height as i64 {
            CHANNEL_MEAN
        } else {
            frame.pixel(ix as usize, iy as usize)
        }
    };
    let p00 = fetch(x0 as i64, y0 as i64);
    let p10 = fetch(x0 as i64 + 1, y0 as i64);
    let p01 = fetch(x0 as i64, y0 as i64 + 1);
    let p11 = fetch(x0 as i64 + 1, y0 as i64 + 1);
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = p00[c] * (1.0 - fx) + p10[c] * fx;
        let bottom = p01[c] * (1.0 - fx) + p11[c] * fx;
        out[c] = top * (1.0 - fy) + bottom * fy;
    }
    out
}

/// Sample a square window (`origin`, `side` in frame units) to `out_size`.
pub fn crop_window(frame: &Frame, x0: f64, y0: f64, side: f64, out_size: usize) -> Crop {
    let scale = side / out_size as f64;
    let mut rgb = Vec::with_capacity(out_size * out_size * 3);
    for v in 0..out_size {
        for u in 0..out_size {
            let sx = x0 + (u as f64 + 0.5) * scale;
            let sy = y0 + (v as f64 + 0.5) * scale;
            rgb.extend_from_slice(&bilinear(frame, sx, sy));
        }
    }
    Crop {
        rgb,
        out_size,
        transform: CropTransform { x0, y0, scale },
    }
}

/// Square crop of side `scale * sqrt(w*h)` centered on the box.
pub fn crop_region(
    frame: &Frame,
    target: &BoundingBox,
    scale: f64,
    out_size: usize,
) -> Result<Crop> {
    if target.is_empty() {
        return Err(Error::invalid(
            "cannot crop around a zero-area box".to_string(),
        ));
    }
    let side = scale * target.size();
    let (cx, cy) = target.center();
    Ok(crop_window(
        frame,
        cx - side / 2.0,
        cy - side / 2.0,
        side,
        out_size,
    ))
}

/// Training augmentation amplitudes.
#[derive(Clone, Copy, Debug)]
pub struct Augment {
    /// Maximum |translation| of the crop window, in output-crop pixels.
    pub translation: f64,
    /// Maximum |brightness factor - 1|.
    pub brightness: f64,
}

impl Augment {
    pub fn none() -> Self {
        Augment {
            translation: 0.0,
            brightness: 0.0,
        }
    }

    /// Defaults scaled to the crop resolution: 8 px at a 256-px crop.
    pub fn default_for(out_size: usize) -> Self {
        Augment {
            translation: 8.0 * out_size as f64 / 256.0,
            brightness: 0.2,
        }
    }
}

/// Crop with a jittered window and brightness scale. The target's label in
/// crop coordinates shifts by exactly the negated translation.
pub fn augmented_crop(
    frame: &Frame,
    target: &BoundingBox,
    scale: f64,
    out_size: usize,
    aug: &Augment,
    rng: &mut ChaCha8Rng,
) -> Result<Crop> {
    if target.is_empty() {
        return Err(Error::invalid(
            "cannot crop around a zero-area box".to_string(),
        ));
    }
    let side = scale * target.size();
    let per_pixel = side / out_size as f64;
    let (dx, dy) = if aug.translation > 0.0 {
        (
            rng.random_range(-aug.translation..=aug.translation),
            rng.random_range(-aug.translation..=aug.translation),
        )
    } else {
        (0.0, 0.0)
    };
    let factor = if aug.brightness > 0.0 {
        rng.random_range(1.0 - aug.brightness..=1.0 + aug.brightness)
    } else {
        1.0
    };
    let (cx, cy) = target.center();
    let mut crop = crop_window(
        frame,
        cx - side / 2.0 + dx * per_pixel,
        cy - side / 2.0 + dy * per_pixel,
        side,
        out_size,
    );
    if factor != 1.0 {
        crop.scale_brightness(factor);
    }
    Ok(crop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn crop_window_arithmetic_scale_four() {
        let frame = Frame::filled(100, 100, [0.2, 0.4, 0.6]);
        let crop = crop_region(&frame, &bb(40.0, 40.0, 20.0, 20.0), 4.0, 32).unwrap();
        assert_eq!(crop.transform.x0, 10.0);
        assert_eq!(crop.transform.y0, 10.0);
        assert_eq!(crop.transform.scale, 80.0 / 32.0);
    }

    #[test]
    fn crop_window_arithmetic_scale_two() {
        let frame = Frame::filled(100, 100, [0.2, 0.4, 0.6]);
        let crop = crop_region(&frame, &bb(40.0, 40.0, 20.0, 20.0), 2.0, 16).unwrap();
        assert_eq!(crop.transform.x0, 30.0);
        assert_eq!(crop.transform.y0, 30.0);
        assert_eq!(crop.transform.scale, 40.0 / 16.0);
    }

    #[test]
    fn zero_area_box_is_rejected() {
        let frame = Frame::filled(10, 10, [0.0; 3]);
        assert!(crop_region(&frame, &bb(5.0, 5.0, 0.0, 0.0), 4.0, 8).is_err());
    }

    #[test]
    fn transform_round_trip_is_identity() {
        let t = CropTransform {
            x0: 12.25,
            y0: -3.5,
            scale: 2.375,
        };
        let b = bb(17.0, 21.5, 9.25, 4.75);
        let back = t.box_to_frame(&t.box_to_crop(&b));
        assert!((back.x - b.x).abs() < 1e-9);
        assert!((back.y - b.y).abs() < 1e-9);
        assert!((back.w - b.w).abs() < 1e-9);
        assert!((back.h - b.h).abs() < 1e-9);
    }

    #[test]
    fn corner_crop_pads_with_channel_mean() {
        let frame = Frame::filled(50, 50, [0.9, 0.9, 0.9]);
        let crop = crop_region(&frame, &bb(0.0, 0.0, 10.0, 10.0), 4.0, 20).unwrap();
        // Window [-15, -15, 40, 40]: the top-left output pixel samples far
        // outside the frame.
        let px = &crop.rgb[0..3];
        for c in 0..3 {
            assert!((px[c] - CHANNEL_MEAN[c]).abs() < 1e-12);
        }
        // Transform stays exact despite padding.
        assert_eq!(crop.transform.x0, -15.0);
    }

    #[test]
    fn augment_identity_when_disabled() {
        let mut frame = Frame::filled(64, 64, [0.3, 0.3, 0.3]);
        frame.set_pixel(30, 30, [1.0, 0.0, 0.0]);
        let target = bb(24.0, 24.0, 12.0, 12.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let plain = crop_region(&frame, &target, 2.0, 16).unwrap();
        let auged = augmented_crop(&frame, &target, 2.0, 16, &Augment::none(), &mut rng).unwrap();
        assert_eq!(plain.rgb, auged.rgb);
        assert_eq!(plain.transform, auged.transform);
    }

    #[test]
    fn translation_shifts_label_consistently() {
        let frame = Frame::filled(64, 64, [0.5; 3]);
        let target = bb(24.0, 24.0, 12.0, 12.0);
        let out = 24usize;
        let base = crop_region(&frame, &target, 2.0, out).unwrap();
        let base_label = base.transform.box_to_crop(&target);

        // A window moved +3 crop pixels puts the label 3 pixels earlier.
        let side = 2.0 * target.size();
        let per_pixel = side / out as f64;
        let moved = crop_window(
            &frame,
            base.transform.x0 + 3.0 * per_pixel,
            base.transform.y0,
            side,
            out,
        );
        let moved_label = moved.transform.box_to_crop(&target);
        assert!((moved_label.x - (base_label.x - 3.0)).abs() < 1e-9);
        assert!((moved_label.y - base_label.y).abs() < 1e-9);
    }

    #[test]
    fn brightness_multiplies_raw_values() {
        let frame = Frame::filled(32, 32, [0.5, 0.25, 0.125]);
        let target = bb(8.0, 8.0, 16.0, 16.0);
        let mut crop = crop_region(&frame, &target, 1.0, 8).unwrap();
        crop.scale_brightness(1.2);
        for px in crop.rgb.chunks(3) {
            assert!((px[0] - 0.6).abs() < 1e-12);
            assert!((px[1] - 0.3).abs() < 1e-12);
            assert!((px[2] - 0.15).abs() < 1e-12);
        }
    }
}
