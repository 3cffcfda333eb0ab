//! Online tracking and training loops: region cropping, augmentation,
//! epoch sampling, Hanning-window confidence penalization, and per-frame
//! prediction.

mod crop;
mod track;
mod train;

pub use crop::{augmented_crop, crop_region, crop_window, Augment, Crop, CropTransform};
pub use track::{track_sequence, TrackerState};
pub use train::{train_epoch, train_run, EpochStats, TrainConfig, TrainSequence};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RuntimeConfig {
    /// Search crop side as a multiple of the target size.
    pub search_scale: f64,
    /// Template crop side as a multiple of the target size.
    pub template_scale: f64,
    /// Blend weight of the Hanning window against raw confidences.
    pub window_weight: f64,
    pub use_language: bool,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            search_scale: 4.0,
            template_scale: 2.0,
            window_weight: 0.49,
            use_language: true,
        }
    }
}

impl RuntimeConfig {
    /// Validate against a model: crop scales sane and the fused candidate
    /// count a perfect square (the window side).
    pub fn validate_against(&self, model: &ModelConfig) -> Result<usize> {
        if self.search_scale <= 1.0 || self.template_scale <= 1.0 {
            return Err(Error::config(format!(
                "crop scales must exceed 1, got {} and {}",
                self.search_scale, self.template_scale
            )));
        }
        if !(0.0..=1.0).contains(&self.window_weight) {
            return Err(Error::config("window weight must be in [0, 1]"));
        }
        let fused = model.fused_len()?;
        let side = (fused as f64).sqrt().round() as usize;
        if side * side != fused {
            return Err(Error::config(format!(
                "candidate count {fused} is not a perfect square; adjust the \
                 projected grid or language length so a square window fits"
            )));
        }
        Ok(side)
    }
}

/// 1-D Hanning window `w[n] = 0.5 (1 - cos(2 pi n / (M - 1)))`.
pub fn hanning_1d(m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![1.0];
    }
    (0..m)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / (m - 1) as f64).cos()))
        .collect()
}

/// 2-D Hanning window as the outer product of 1-D windows, row-major.
pub fn hanning_2d(side: usize) -> Vec<f64> {
    let w = hanning_1d(side);
    let mut out = Vec::with_capacity(side * side);
    for y in &w {
        for x in &w {
            out.push(y * x);
        }
    }
    out
}

/// Blend candidate confidences with the window in row-major token order:
/// `(1 - weight) * confidence + weight * window`.
pub fn hanning_penalize(confidences: &[f64], window: &[f64], weight: f64) -> Result<Vec<f64>> {
    if confidences.len() != window.len() {
        return Err(Error::invalid(format!(
            "{} confidences vs {} window cells",
            confidences.len(),
            window.len()
        )));
    }
    Ok(confidences
        .iter()
        .zip(window)
        .map(|(c, w)| (1.0 - weight) * c + weight * w)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hanning_center_one_corners_zero() {
        let w = hanning_2d(21);
        assert_eq!(w.len(), 441);
        assert!((w[10 * 21 + 10] - 1.0).abs() < 1e-12);
        assert_eq!(w[0], 0.0);
        assert_eq!(w[20], 0.0);
        assert_eq!(w[440], 0.0);
    }

    #[test]
    fn equal_confidences_argmax_at_center() {
        let w = hanning_2d(11);
        let conf = vec![0.7; 121];
        let out = hanning_penalize(&conf, &w, 0.49).unwrap();
        let argmax = out
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(argmax, 5 * 11 + 5);
    }

    #[test]
    fn zero_weight_is_identity() {
        let w = hanning_2d(3);
        let conf = vec![0.1, 0.9, 0.3, 0.2, 0.5, 0.8, 0.4, 0.6, 0.7];
        let out = hanning_penalize(&conf, &w, 0.0).unwrap();
        assert_eq!(out, conf);
    }

    #[test]
    fn count_mismatch_is_error() {
        let w = hanning_2d(3);
        assert!(hanning_penalize(&[0.5; 8], &w, 0.5).is_err());
    }

    #[test]
    fn window_precondition_checks_square() {
        let model = ModelConfig::default();
        let rt = RuntimeConfig::default();
        assert_eq!(rt.validate_against(&model).unwrap(), 11);

        let full = ModelConfig::full_scale();
        assert_eq!(rt.validate_against(&full).unwrap(), 21);

        let mut bad = ModelConfig::default();
        bad.language.max_tokens = 21; // 100 + 21 + 1 = 122, not square
        assert!(rt.validate_against(&bad).is_err());
    }
}
