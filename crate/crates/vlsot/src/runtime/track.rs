//! Online tracking: template and language features are computed once from
//! the first frame, then every step crops around the previous prediction,
//! runs the frozen model, window-penalizes the candidate confidences, and
//! maps the best regressed box back to frame coordinates.

use crate::boxes::BoundingBox;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::lang::{tokenize, LanguageTokens};
use crate::model::TrackerModel;
use crate::tensor::{Graph, ParamSet, Tensor};

use super::crop::crop_region;
use super::{hanning_2d, hanning_penalize, RuntimeConfig};

pub struct TrackerState<'m> {
    model: &'m TrackerModel,
    params: &'m ParamSet,
    runtime: RuntimeConfig,
    /// Stem tokens of the template crop, frozen after initialization.
    template_tokens: Tensor,
    /// Language features, frozen after initialization.
    language_features: Tensor,
    window: Vec<f64>,
    prev_box: BoundingBox,
    fallback_count: usize,
}

impl<'m> TrackerState<'m> {
    /// Build per-sequence state from the first frame, its box, and the
    /// description. Language features are extracted here, once.
    pub fn init(
        model: &'m TrackerModel,
        params: &'m ParamSet,
        runtime: RuntimeConfig,
        first_frame: &Frame,
        init_box: BoundingBox,
        description: &str,
    ) -> Result<Self> {
        let window_side = runtime.validate_against(&model.config)?;
        if init_box.is_empty() {
            return Err(Error::invalid(
                "initialization box has zero area".to_string(),
            ));
        }
        let template_crop = crop_region(
            first_frame,
            &init_box,
            runtime.template_scale,
            model.config.visual.template_size,
        )?;
        let template_image = template_crop.into_image()?;

        let tokens = if runtime.use_language {
            tokenize(description, &model.config.language)
        } else {
            LanguageTokens::disabled(model.config.language.max_tokens)
        };

        let mut g = Graph::inference(params);
        let template_var = model.visual.stem_forward(&mut g, &template_image)?;
        let template_tokens = g.tape.tensor(template_var);
        let lang_var = model.language.forward(&mut g, &tokens)?;
        let language_features = g.tape.tensor(lang_var);

        Ok(TrackerState {
            model,
            params,
            runtime,
            template_tokens,
            language_features,
            window: hanning_2d(window_side),
            prev_box: init_box,
            fallback_count: 0,
        })
    }

    pub fn previous_box(&self) -> BoundingBox {
        self.prev_box
    }

    /// Steps that fell back to the previous box on a degenerate prediction.
    pub fn fallback_count(&self) -> usize {
        self.fallback_count
    }

    /// Checksum over the cached template and language features; constant
    /// across steps by construction.
    pub fn feature_checksum(&self) -> f64 {
        self.template_tokens.data().iter().sum::<f64>()
            + self.language_features.data().iter().sum::<f64>()
    }

    /// Predict the target box in `frame` and advance the state.
    pub fn track_step(&mut self, frame: &Frame) -> Result<BoundingBox> {
        let search_size = self.model.config.visual.search_size;
        let crop = crop_region(
            frame,
            &self.prev_box,
            self.runtime.search_scale,
            search_size,
        )?;
        let transform = crop.transform;
        let search_image = crop.into_image()?;

        let mut g = Graph::inference(self.params);
        let template = g.constant(&self.template_tokens);
        let language = g.constant(&self.language_features);
        let (_, head) = self
            .model
            .forward_infer(&mut g, &search_image, template, language)?;

        let confidences: Vec<f64> = g.tape.value(head.confidences).to_vec();
        let penalized = hanning_penalize(&confidences, &self.window, self.runtime.window_weight)?;
        let best = penalized
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("candidate list is nonempty")
            .0;

        let boxes = g.tape.value(head.boxes);
        let raw = &boxes[best * 4..best * 4 + 4];
        let side = search_size as f64;
        let predicted = candidate_to_frame(raw, side, &transform);

        let accepted = match predicted {
            Some(b) if !b.is_empty() => b,
            _ => {
                self.fallback_count += 1;
                self.prev_box
            }
        };
        self.prev_box = accepted;
        Ok(accepted)
    }
}

/// Map a normalized center-format candidate box through the crop
/// transform; `None` when degenerate.
fn candidate_to_frame(
    raw: &[f64],
    crop_side: f64,
    transform: &super::CropTransform,
) -> Option<BoundingBox> {
    if raw.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let crop_box = BoundingBox::from_center(
        raw[0] * crop_side,
        raw[1] * crop_side,
        raw[2] * crop_side,
        raw[3] * crop_side,
    )
    .ok()?;
    let frame_box = transform.box_to_frame(&crop_box);
    if frame_box.w.is_finite() && frame_box.h.is_finite() && frame_box.w >= 0.0 && frame_box.h >= 0.0
    {
        Some(frame_box)
    } else {
        None
    }
}

/// First-frame protocol: the output for frame 0 is the initialization box;
/// every later frame is a tracking step.
pub fn track_sequence<'m, I>(
    model: &'m TrackerModel,
    params: &'m ParamSet,
    runtime: RuntimeConfig,
    init_box: BoundingBox,
    description: &str,
    frames: I,
) -> Result<Vec<BoundingBox>>
where
    I: IntoIterator<Item = Result<Frame>>,
{
    let mut iter = frames.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::invalid("sequence has no frames".to_string()))??;
    let mut state = TrackerState::init(model, params, runtime, &first, init_box, description)?;
    let mut out = vec![init_box];
    for frame in iter {
        out.push(state.track_step(&frame?)?);
    }
    Ok(out)
}
