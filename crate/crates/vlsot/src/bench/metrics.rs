//! Evaluation metrics and dataset criteria.
//!
//! Normative conventions for this toolkit:
//! - Success grids use 101 overlap thresholds 0.00..=1.00. A frame counts
//!   at threshold t when `overlap > t`, except t = 0 where every evaluated
//!   frame counts (`overlap >= 0`). AUC is the mean over the grid.
//! - Precision uses 51 pixel thresholds 0..=50 with `error <= t`; the
//!   reported P is the value at 20 px.
//! - Normalized precision divides the center error per-axis by the
//!   ground-truth extents and averages 51 thresholds over [0, 0.5].
//! - cAUC runs the success grid over complete IoU (center-distance and
//!   aspect penalties, clamped to [-1, 1]).
//! - Absent frames are excluded from overlap/precision metrics; mACC
//!   scores every frame, crediting an empty prediction on absent frames.

use serde::{Deserialize, Serialize};

use crate::boxes::{center_distance, ciou, iou, BoundingBox};
use crate::error::{Error, Result};

use super::dataset::SequenceAnnotation;

pub const SUCCESS_THRESHOLDS: usize = 101;
pub const PRECISION_THRESHOLDS: usize = 51;
pub const PRECISION_PIXEL_RANGE: f64 = 50.0;
pub const NORM_PRECISION_RANGE: f64 = 0.5;
pub const PRECISION_REPORT_PIXELS: f64 = 20.0;

/// Success counting rule shared by AUC and cAUC.
fn success(overlap: f64, threshold: f64) -> bool {
    overlap > threshold || threshold == 0.0
}

/// The five-metric summary plus full curves.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricReport {
    /// Success AUC over the IoU threshold grid.
    pub auc: f64,
    /// Precision at 20 px center error.
    pub precision: f64,
    /// Normalized precision (area under the normalized curve).
    pub norm_precision: f64,
    /// Success AUC over complete IoU.
    pub cauc: f64,
    /// Mean per-frame accuracy with absence credit.
    pub macc: f64,
    /// (threshold, fraction) success curve, 101 points.
    pub success_curve: Vec<(f64, f64)>,
    /// (pixel threshold, fraction) precision curve, 51 points.
    pub precision_curve: Vec<(f64, f64)>,
    /// (normalized threshold, fraction) curve, 51 points.
    pub norm_precision_curve: Vec<(f64, f64)>,
}

/// Relative speed at frame `t`: center displacement over the geometric
/// mean of the two sizes and the time gap.
pub fn relative_speed(annotation: &SequenceAnnotation, t: usize) -> Result<f64> {
    if t == 0 || t >= annotation.len() {
        return Err(Error::invalid(format!(
            "relative speed needs 1 <= t < {}, got {t}",
            annotation.len()
        )));
    }
    if annotation.absent[t] || annotation.absent[t - 1] {
        return Err(Error::invalid(format!(
            "relative speed undefined across absent frame at t={t}"
        )));
    }
    let (prev, curr) = (&annotation.boxes[t - 1], &annotation.boxes[t]);
    let (s_prev, s_curr) = (prev.size(), curr.size());
    if s_prev == 0.0 || s_curr == 0.0 {
        return Err(Error::invalid(format!(
            "relative speed undefined for zero-size box at t={t}"
        )));
    }
    let dt = annotation.timestamps[t] - annotation.timestamps[t - 1];
    Ok(center_distance(prev, curr) / ((s_prev * s_curr).sqrt() * dt))
}

/// Mean relative speed over frame pairs where both frames are present and
/// positively sized; `None` when no pair qualifies.
pub fn average_relative_speed(annotation: &SequenceAnnotation) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 1..annotation.len() {
        if let Ok(v) = relative_speed(annotation, t) {
            sum += v;
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Small-object decision with the statistics behind it.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SmallObjectDecision {
    pub small: bool,
    /// Mean `sqrt(w*h)` over visible frames, pixels.
    pub average_absolute_size: f64,
    /// Mean per-frame area ratio `w*h / (W*H)`, as a fraction.
    pub average_relative_area: f64,
}

pub const SMALL_RELATIVE_AREA: f64 = 0.01;
pub const SMALL_ABSOLUTE_SIZE: f64 = 22.0;

/// A sequence holds a small object when the average relative area is
/// under 1% of the frame and the average absolute size is under 22 px.
/// Both conditions are required.
pub fn is_small_object(
    annotation: &SequenceAnnotation,
    frame_size: (usize, usize),
) -> Result<SmallObjectDecision> {
    let frame_area = (frame_size.0 * frame_size.1) as f64;
    if frame_area == 0.0 {
        return Err(Error::invalid("frame size has zero area".to_string()));
    }
    let mut abs_sum = 0.0;
    let mut rel_sum = 0.0;
    let mut count = 0usize;
    for t in 0..annotation.len() {
        if annotation.absent[t] {
            continue;
        }
        let b = &annotation.boxes[t];
        abs_sum += b.size();
        rel_sum += b.area() / frame_area;
        count += 1;
    }
    if count == 0 {
        return Err(Error::invalid(format!(
            "sequence {} has no visible frames",
            annotation.id
        )));
    }
    let average_absolute_size = abs_sum / count as f64;
    let average_relative_area = rel_sum / count as f64;
    Ok(SmallObjectDecision {
        small: average_relative_area < SMALL_RELATIVE_AREA
            && average_absolute_size < SMALL_ABSOLUTE_SIZE,
        average_absolute_size,
        average_relative_area,
    })
}

fn normalized_center_error(pred: &BoundingBox, gt: &BoundingBox) -> f64 {
    if gt.w <= 0.0 || gt.h <= 0.0 {
        return f64::INFINITY;
    }
    let (px, py) = pred.center();
    let (gx, gy) = gt.center();
    (((px - gx) / gt.w).powi(2) + ((py - gy) / gt.h).powi(2)).sqrt()
}

/// Evaluate one sequence's predictions against its annotation.
pub fn compute_metrics(
    predictions: &[BoundingBox],
    annotation: &SequenceAnnotation,
) -> Result<MetricReport> {
    if predictions.len() != annotation.len() {
        return Err(Error::invalid(format!(
            "sequence {}: {} predictions for {} frames",
            annotation.id,
            predictions.len(),
            annotation.len()
        )));
    }
    let visible: Vec<usize> = (0..annotation.len())
        .filter(|&t| !annotation.absent[t])
        .collect();
    if visible.is_empty() {
        return Err(Error::invalid(format!(
            "sequence {} has no visible frames to evaluate",
            annotation.id
        )));
    }

    let ious: Vec<f64> = visible
        .iter()
        .map(|&t| iou(&predictions[t], &annotation.boxes[t]))
        .collect();
    let cious: Vec<f64> = visible
        .iter()
        .map(|&t| ciou(&predictions[t], &annotation.boxes[t]))
        .collect();
    let center_errors: Vec<f64> = visible
        .iter()
        .map(|&t| center_distance(&predictions[t], &annotation.boxes[t]))
        .collect();
    let norm_errors: Vec<f64> = visible
        .iter()
        .map(|&t| normalized_center_error(&predictions[t], &annotation.boxes[t]))
        .collect();
    let n = visible.len() as f64;

    let success_curve: Vec<(f64, f64)> = (0..SUCCESS_THRESHOLDS)
        .map(|i| {
            let thr = i as f64 / (SUCCESS_THRESHOLDS - 1) as f64;
            let frac = ious.iter().filter(|&&v| success(v, thr)).count() as f64 / n;
            (thr, frac)
        })
        .collect();
    let auc = success_curve.iter().map(|(_, f)| f).sum::<f64>() / SUCCESS_THRESHOLDS as f64;

    let c_success: Vec<f64> = (0..SUCCESS_THRESHOLDS)
        .map(|i| {
            let thr = i as f64 / (SUCCESS_THRESHOLDS - 1) as f64;
            cious.iter().filter(|&&v| success(v, thr)).count() as f64 / n
        })
        .collect();
    let cauc = c_success.iter().sum::<f64>() / SUCCESS_THRESHOLDS as f64;

    let precision_curve: Vec<(f64, f64)> = (0..PRECISION_THRESHOLDS)
        .map(|i| {
            let thr = PRECISION_PIXEL_RANGE * i as f64 / (PRECISION_THRESHOLDS - 1) as f64;
            let frac = center_errors.iter().filter(|&&e| e <= thr).count() as f64 / n;
            (thr, frac)
        })
        .collect();
    let precision =
        center_errors.iter().filter(|&&e| e <= PRECISION_REPORT_PIXELS).count() as f64 / n;

    let norm_precision_curve: Vec<(f64, f64)> = (0..PRECISION_THRESHOLDS)
        .map(|i| {
            let thr = NORM_PRECISION_RANGE * i as f64 / (PRECISION_THRESHOLDS - 1) as f64;
            let frac = norm_errors.iter().filter(|&&e| e <= thr).count() as f64 / n;
            (thr, frac)
        })
        .collect();
    let norm_precision = norm_precision_curve.iter().map(|(_, f)| f).sum::<f64>()
        / PRECISION_THRESHOLDS as f64;

    let mut macc = 0.0;
    for t in 0..annotation.len() {
        if annotation.absent[t] {
            if predictions[t].is_empty() {
                macc += 1.0;
            }
        } else {
            macc += iou(&predictions[t], &annotation.boxes[t]);
        }
    }
    macc /= annotation.len() as f64;

    Ok(MetricReport {
        auc,
        precision,
        norm_precision,
        cauc,
        macc,
        success_curve,
        precision_curve,
        norm_precision_curve,
    })
}
