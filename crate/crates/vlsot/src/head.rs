//! Tracking head and training losses. Tracking is decoupled into binary
//! classification (a two-layer MLP to a sigmoid confidence) and box
//! regression (a one-layer MLP to sigmoid-squashed normalized boxes),
//! applied to every fused token. Boxes are center-format `[cx, cy, w, h]`,
//! each coordinate in `[0, 1]` relative to the search region.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::boxes::BoundingBox;
use crate::error::{Error, Result};
use crate::fusion::{FusedTokens, TokenKind};
use crate::nn::Linear;
use crate::tensor::{Graph, ParamSet, Tape, Tensor, Var};

const CONFIDENCE_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// L1 regression weight.
    pub lambda_l1: f64,
    /// GIoU regression weight.
    pub lambda_giou: f64,
    /// Classification weight in the overall loss.
    pub alpha_ce: f64,
}

impl LossWeights {
    pub fn new(lambda_l1: f64, lambda_giou: f64, alpha_ce: f64) -> Result<Self> {
        if lambda_l1 < 0.0 || lambda_giou < 0.0 || alpha_ce < 0.0 {
            return Err(Error::config("loss weights must be nonnegative"));
        }
        Ok(LossWeights {
            lambda_l1,
            lambda_giou,
            alpha_ce,
        })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_l1: 5.0,
            lambda_giou: 2.0,
            alpha_ce: 1.0,
        }
    }
}

/// Per-candidate confidences `[n, 1]` and normalized boxes `[n, 4]`.
pub struct HeadOutput {
    pub confidences: Var,
    pub boxes: Var,
}

pub struct TrackingHead {
    cls1: Linear,
    cls2: Linear,
    reg: Linear,
}

impl TrackingHead {
    pub fn new(params: &mut ParamSet, rng: &mut ChaCha8Rng, width: usize, hidden: usize) -> Self {
        TrackingHead {
            cls1: Linear::new(params, rng, "head.cls1", width, hidden),
            cls2: Linear::new(params, rng, "head.cls2", hidden, 1),
            reg: Linear::new(params, rng, "head.reg", width, 4),
        }
    }

    pub fn forward(&self, g: &mut Graph, fused: &FusedTokens) -> Result<HeadOutput> {
        let h = self.cls1.forward(g, fused.tokens)?;
        let h = g.tape.relu(h);
        let logits = self.cls2.forward(g, h)?;
        let confidences = g.tape.sigmoid(logits);
        let raw = self.reg.forward(g, fused.tokens)?;
        let boxes = g.tape.sigmoid(raw);
        Ok(HeadOutput { confidences, boxes })
    }
}

/// Candidate labels: 1.0 for visual tokens whose grid-cell center falls
/// inside the ground-truth box, 0.0 otherwise. Language and object tokens
/// carry no spatial anchor and are always negative.
pub struct Labels {
    pub values: Vec<f64>,
    pub positives: usize,
    /// Set when the ground truth lies fully outside the search region.
    pub gt_outside_region: bool,
}

pub fn assign_labels(
    kinds: &[TokenKind],
    cell_centers: &[(f64, f64)],
    gt: &BoundingBox,
    region_side: f64,
) -> Labels {
    let mut values = Vec::with_capacity(kinds.len());
    let mut positives = 0;
    for kind in kinds {
        let label = match kind {
            TokenKind::Visual(i) => {
                let (cx, cy) = cell_centers[*i];
                if gt.contains_point(cx, cy) {
                    positives += 1;
                    1.0
                } else {
                    0.0
                }
            }
            TokenKind::Language(_) | TokenKind::Obj => 0.0,
        };
        values.push(label);
    }
    let gt_outside_region = gt.right() < 0.0
        || gt.bottom() < 0.0
        || gt.x > region_side
        || gt.y > region_side
        || gt.is_empty();
    Labels {
        values,
        positives,
        gt_outside_region: gt_outside_region && positives == 0,
    }
}

/// Binary cross-entropy over clamped confidences, negated into a minimized
/// loss and summed over candidates.
pub fn bce_loss(tape: &mut Tape, confidences: Var, labels: &[f64]) -> Result<Var> {
    let n = tape.value(confidences).len();
    if n != labels.len() {
        return Err(Error::invalid(format!(
            "{n} confidences vs {} labels",
            labels.len()
        )));
    }
    let shape = tape.shape(confidences).to_vec();
    let y = tape.constant(&Tensor::new(shape.clone(), labels.to_vec())?);
    let one_minus_y =
        tape.constant(&Tensor::new(shape.clone(), labels.iter().map(|l| 1.0 - l).collect())?);
    let p = tape.clamp(confidences, CONFIDENCE_EPS, 1.0 - CONFIDENCE_EPS);
    let log_p = tape.ln(p);
    let ones = tape.constant(&Tensor::full(shape, 1.0));
    let one_minus_p = tape.sub(ones, p)?;
    let log_q = tape.ln(one_minus_p);
    let pos = tape.mul(y, log_p)?;
    let neg = tape.mul(one_minus_y, log_q)?;
    let sum = tape.add(pos, neg)?;
    let total = tape.sum(sum);
    Ok(tape.neg(total))
}

/// `1 - GIoU` per row for center-format box matrices `[n, 4]`, on the tape
/// so it can drive regression. Callers guarantee positive-area boxes
/// (sigmoid outputs and positive-labeled ground truth both are).
fn giou_loss_rows(tape: &mut Tape, pred: Var, gt: Var) -> Result<Var> {
    let corners = |t: &mut Tape, b: Var| -> Result<(Var, Var, Var, Var)> {
        let cx = t.slice_cols(b, 0, 1)?;
        let cy = t.slice_cols(b, 1, 1)?;
        let w = t.slice_cols(b, 2, 1)?;
        let h = t.slice_cols(b, 3, 1)?;
        let hw = t.scale(w, 0.5);
        let hh = t.scale(h, 0.5);
        let x1 = t.sub(cx, hw)?;
        let x2 = t.add(cx, hw)?;
        let y1 = t.sub(cy, hh)?;
        let y2 = t.add(cy, hh)?;
        Ok((x1, y1, x2, y2))
    };
    let (ax1, ay1, ax2, ay2) = corners(tape, pred)?;
    let (bx1, by1, bx2, by2) = corners(tape, gt)?;

    let xi1 = tape.max2(ax1, bx1)?;
    let yi1 = tape.max2(ay1, by1)?;
    let xi2 = tape.min2(ax2, bx2)?;
    let yi2 = tape.min2(ay2, by2)?;
    let iw_raw = tape.sub(xi2, xi1)?;
    let iw = tape.relu(iw_raw);
    let ih_raw = tape.sub(yi2, yi1)?;
    let ih = tape.relu(ih_raw);
    let inter = tape.mul(iw, ih)?;

    let area = |t: &mut Tape, x1: Var, y1: Var, x2: Var, y2: Var| -> Result<Var> {
        let w = t.sub(x2, x1)?;
        let h = t.sub(y2, y1)?;
        t.mul(w, h)
    };
    let area_a = area(tape, ax1, ay1, ax2, ay2)?;
    let area_b = area(tape, bx1, by1, bx2, by2)?;
    let sum_ab = tape.add(area_a, area_b)?;
    let union = tape.sub(sum_ab, inter)?;
    let iou = tape.div(inter, union)?;

    let xc1 = tape.min2(ax1, bx1)?;
    let yc1 = tape.min2(ay1, by1)?;
    let xc2 = tape.max2(ax2, bx2)?;
    let yc2 = tape.max2(ay2, by2)?;
    let c_area = area(tape, xc1, yc1, xc2, yc2)?;
    let hole = tape.sub(c_area, union)?;
    let penalty = tape.div(hole, c_area)?;
    let giou = tape.sub(iou, penalty)?;
    let n = tape.shape(giou)[0];
    let ones = tape.constant(&Tensor::new(vec![n, 1], vec![1.0; n])?);
    tape.sub(ones, giou)
}

/// Regression loss over positive candidates: per positive,
/// `lambda_l1 * sum_coords |b - b_hat| + lambda_giou * (1 - GIoU)`,
/// normalized by the positive count. Zero when nothing is positive.
pub fn regression_loss(
    tape: &mut Tape,
    pred_boxes: Var,
    gt_normalized: &BoundingBox,
    labels: &Labels,
    weights: &LossWeights,
) -> Result<Var> {
    if labels.positives == 0 {
        return Ok(tape.constant_scalar(0.0));
    }
    let n = tape.shape(pred_boxes)[0];
    if labels.values.len() != n {
        return Err(Error::invalid(format!(
            "{n} predicted boxes vs {} labels",
            labels.values.len()
        )));
    }
    // Gather positive rows.
    let mut map = Vec::with_capacity(labels.positives * 4);
    for (i, &l) in labels.values.iter().enumerate() {
        if l == 1.0 {
            for c in 0..4 {
                map.push((i * 4 + c) as i64);
            }
        }
    }
    let p = labels.positives;
    let pos_pred = tape.gather(pred_boxes, Rc::new(map), vec![p, 4])?;
    let (cx, cy) = gt_normalized.center();
    let gt_rows: Vec<f64> = (0..p)
        .flat_map(|_| [cx, cy, gt_normalized.w, gt_normalized.h])
        .collect();
    let gt_var = tape.constant(&Tensor::new(vec![p, 4], gt_rows)?);

    let diff = tape.sub(pos_pred, gt_var)?;
    let absdiff = tape.abs(diff);
    let l1 = tape.sum(absdiff);

    let giou_terms = giou_loss_rows(tape, pos_pred, gt_var)?;
    let giou_sum = tape.sum(giou_terms);

    let l1_w = tape.scale(l1, weights.lambda_l1);
    let giou_w = tape.scale(giou_sum, weights.lambda_giou);
    let total = tape.add(l1_w, giou_w)?;
    Ok(tape.scale(total, 1.0 / p as f64))
}

/// Weighted sum of the three training losses. A non-finite component
/// aborts the step.
pub fn total_loss(
    tape: &mut Tape,
    alignment: Option<Var>,
    reg: Var,
    ce: Var,
    weights: &LossWeights,
) -> Result<Var> {
    for (name, v) in [("alignment", alignment), ("reg", Some(reg)), ("ce", Some(ce))] {
        if let Some(v) = v {
            if !tape.scalar_value(v).is_finite() {
                return Err(Error::NonFinite {
                    what: "loss component",
                    context: name.to_string(),
                });
            }
        }
    }
    let ce_w = tape.scale(ce, weights.alpha_ce);
    let partial = tape.add(reg, ce_w)?;
    match alignment {
        Some(c) => tape.add(c, partial),
        None => Ok(partial),
    }
}
