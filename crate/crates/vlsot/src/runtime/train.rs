//! Epoch-sampled training: pick a (template, search) frame pair from one
//! sequence, crop, augment, run the joint forward, combine the alignment,
//! regression, and classification losses, and take an AdamW step.

use std::path::PathBuf;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::boxes::BoundingBox;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::fusion::alignment_loss;
use crate::head::{assign_labels, bce_loss, regression_loss, total_loss};
use crate::lang::{tokenize, LanguageTokens};
use crate::model::TrackerModel;
use crate::tensor::{AdamW, Graph, ParamSet};

use super::crop::{augmented_crop, crop_region, Augment};
use super::RuntimeConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Sampled (video, language) pairs per epoch.
    pub pairs_per_epoch: usize,
    pub batch_size: usize,
    /// Maximum search-crop translation in crop pixels; `None` scales the
    /// 256-px default (8 px) to the configured crop size.
    pub aug_translation: Option<f64>,
    pub aug_brightness: f64,
    pub dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            epochs: 50,
            pairs_per_epoch: 200,
            batch_size: 8,
            aug_translation: None,
            aug_brightness: 0.2,
            dropout: 0.1,
        }
    }
}

impl TrainConfig {
    /// Full-scale protocol values; far beyond one desk CPU.
    pub fn full_scale() -> Self {
        TrainConfig {
            epochs: 1000,
            pairs_per_epoch: 4200,
            batch_size: 14,
            ..TrainConfig::default()
        }
    }

    fn augment_for(&self, out_size: usize) -> Augment {
        Augment {
            translation: self
                .aug_translation
                .unwrap_or(8.0 * out_size as f64 / 256.0),
            brightness: self.aug_brightness,
        }
    }
}

/// One training sequence: frame files plus per-frame annotation.
#[derive(Clone, Debug)]
pub struct TrainSequence {
    pub id: String,
    pub frames: Vec<PathBuf>,
    pub boxes: Vec<BoundingBox>,
    pub visible: Vec<bool>,
    pub description: String,
}

impl TrainSequence {
    fn visible_indices(&self) -> Vec<usize> {
        (0..self.frames.len())
            .filter(|&i| self.visible[i] && !self.boxes[i].is_empty())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EpochStats {
    pub mean_total: f64,
    pub mean_alignment: f64,
    pub mean_reg: f64,
    pub mean_ce: f64,
    pub steps: usize,
}

struct SampleRef {
    seq: usize,
    template_frame: usize,
    search_frame: usize,
}

/// Draw one batch of (template, search) picks. Sequences within a batch
/// are distinct while the training set allows it, so the in-batch
/// contrastive negatives never share a description with their anchor.
fn sample_batch(
    data: &[TrainSequence],
    visible: &[Vec<usize>],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SampleRef>> {
    let mut eligible: Vec<usize> = (0..data.len())
        .filter(|&s| !visible[s].is_empty())
        .collect();
    if eligible.is_empty() {
        return Err(Error::invalid(
            "training set has no visible frames to sample".to_string(),
        ));
    }
    for i in (1..eligible.len()).rev() {
        eligible.swap(i, rng.random_range(0..=i));
    }
    let mut picks = Vec::with_capacity(batch_size);
    for k in 0..batch_size {
        let seq = eligible[k % eligible.len()];
        let vis = &visible[seq];
        let template_frame = vis[rng.random_range(0..vis.len())];
        let search_frame = vis[rng.random_range(0..vis.len())];
        picks.push(SampleRef {
            seq,
            template_frame,
            search_frame,
        });
    }
    Ok(picks)
}

/// One epoch of sampled steps; returns per-loss means.
pub fn train_epoch(
    model: &TrackerModel,
    params: &mut ParamSet,
    opt: &mut AdamW,
    data: &[TrainSequence],
    train: &TrainConfig,
    runtime: &RuntimeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty".to_string()));
    }
    let cfg = &model.config;
    let search_size = cfg.visual.search_size;
    let template_size = cfg.visual.template_size;
    let centers = cfg.visual.projected_cell_centers()?;
    let augment = train.augment_for(search_size);
    let visible: Vec<Vec<usize>> = data.iter().map(|s| s.visible_indices()).collect();
    let steps = (train.pairs_per_epoch / train.batch_size).max(1);
    let align_cfg = cfg.alignment_config()?;

    let mut stats = EpochStats::default();
    for _ in 0..steps {
        let mut g = Graph::new(params, true, train.dropout, rng.random());
        let mut ce_vars = Vec::with_capacity(train.batch_size);
        let mut reg_vars = Vec::with_capacity(train.batch_size);
        let mut pairs = Vec::with_capacity(train.batch_size);
        for pick in sample_batch(data, &visible, train.batch_size, rng)? {
            let seq = &data[pick.seq];
            let sample_id = format!(
                "{}[template {} -> search {}]",
                seq.id, pick.template_frame, pick.search_frame
            );
            let template_frame = Frame::load_png(&seq.frames[pick.template_frame])?;
            let search_frame = Frame::load_png(&seq.frames[pick.search_frame])?;
            let template = crop_region(
                &template_frame,
                &seq.boxes[pick.template_frame],
                runtime.template_scale,
                template_size,
            )?
            .into_image()?;
            let crop = augmented_crop(
                &search_frame,
                &seq.boxes[pick.search_frame],
                runtime.search_scale,
                search_size,
                &augment,
                rng,
            )?;
            let transform = crop.transform;
            let search = crop.into_image()?;
            let tokens = if runtime.use_language {
                tokenize(&seq.description, &cfg.language)
            } else {
                LanguageTokens::disabled(cfg.language.max_tokens)
            };

            let fwd = model.forward_train(&mut g, &search, &template, &tokens)?;
            let gt_crop = transform.box_to_crop(&seq.boxes[pick.search_frame]);
            let labels = assign_labels(&fwd.fused.kinds, &centers, &gt_crop, search_size as f64);
            let side = search_size as f64;
            let gt_norm = BoundingBox::new(
                gt_crop.x / side,
                gt_crop.y / side,
                gt_crop.w / side,
                gt_crop.h / side,
            )?;
            let ce = bce_loss(&mut g.tape, fwd.head.confidences, &labels.values)?;
            let reg = regression_loss(&mut g.tape, fwd.head.boxes, &gt_norm, &labels, &cfg.weights)?;
            for (name, v) in [("classification", ce), ("regression", reg)] {
                if !g.tape.scalar_value(v).is_finite() {
                    return Err(Error::NonFinite {
                        what: "loss",
                        context: format!("{name} loss of sample {sample_id}"),
                    });
                }
            }
            if cfg.use_alignment && runtime.use_language {
                pairs.push(model.alignment_pair(&mut g, &fwd, &tokens)?);
            }
            ce_vars.push(ce);
            reg_vars.push(reg);
        }

        let mean_of = |g: &mut Graph, vars: &[crate::tensor::Var]| -> Result<crate::tensor::Var> {
            let mut acc = vars[0];
            for v in &vars[1..] {
                acc = g.tape.add(acc, *v)?;
            }
            Ok(g.tape.scale(acc, 1.0 / vars.len() as f64))
        };
        let ce_mean = mean_of(&mut g, &ce_vars)?;
        let reg_mean = mean_of(&mut g, &reg_vars)?;
        let alignment = if pairs.len() >= 2 {
            Some(alignment_loss(&mut g.tape, &pairs, &align_cfg)?)
        } else {
            None
        };
        let total = total_loss(&mut g.tape, alignment, reg_mean, ce_mean, &cfg.weights)?;

        stats.mean_total += g.tape.scalar_value(total);
        stats.mean_ce += g.tape.scalar_value(ce_mean);
        stats.mean_reg += g.tape.scalar_value(reg_mean);
        if let Some(c) = alignment {
            stats.mean_alignment += g.tape.scalar_value(c);
        }

        g.tape.backward(total)?;
        let grads = g.take_param_grads();
        drop(g);
        params.accumulate_grads(&grads)?;
        opt.step(params)?;
        params.zero_grads();
        stats.steps += 1;
    }
    let n = stats.steps.max(1) as f64;
    stats.mean_total /= n;
    stats.mean_ce /= n;
    stats.mean_reg /= n;
    stats.mean_alignment /= n;
    Ok(stats)
}

/// Multi-epoch driver with a per-epoch callback; deterministic for a seed.
pub fn train_run(
    model: &TrackerModel,
    params: &mut ParamSet,
    data: &[TrainSequence],
    train: &TrainConfig,
    runtime: &RuntimeConfig,
    seed: u64,
    mut on_epoch: impl FnMut(usize, &EpochStats),
) -> Result<Vec<EpochStats>> {
    runtime.validate_against(&model.config)?;
    let mut opt = AdamW::new(params, train.learning_rate, train.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history = Vec::with_capacity(train.epochs);
    for epoch in 0..train.epochs {
        let stats = train_epoch(model, params, &mut opt, data, train, runtime, &mut rng)?;
        on_epoch(epoch, &stats);
        history.push(stats);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::LinguisticConfig;
    use crate::model::ModelConfig;
    use crate::visual::{PostConvMode, VisualConfig};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            visual: VisualConfig {
                search_size: 32,
                template_size: 16,
                stem_stride: 8,
                channels: 8,
                encoder_repeats: 1,
                encoder_heads: 2,
                decoder_heads: 2,
                ffn_hidden: 16,
                dropout: 0.0,
                post_conv_count: 1,
                post_conv_kernel: 3,
                post_conv_mode: PostConvMode::SameCrop(2),
                pos_each_layer: true,
            },
            language: LinguisticConfig {
                vocab_size: 64,
                width: 8,
                layers: 1,
                heads: 2,
                max_tokens: 4,
                ffn_hidden: 16,
                dropout: 0.0,
            },
            fusion_width: 8,
            fusion_layers: 1,
            fusion_heads: 2,
            fusion_ffn: 16,
            head_hidden: 8,
            ..ModelConfig::default()
        }
    }

    fn tiny_dataset(dir: &std::path::Path) -> Vec<TrainSequence> {
        let mut seqs = Vec::new();
        for s in 0..2 {
            let mut frames = Vec::new();
            let mut boxes = Vec::new();
            for f in 0..3 {
                let mut frame = Frame::filled(64, 64, [0.2, 0.25, 0.3]);
                let cx = 24 + 4 * s + 2 * f;
                for y in 24..36 {
                    for x in cx..cx + 12 {
                        frame.set_pixel(x, y, [0.9, 0.2, 0.1]);
                    }
                }
                let path = dir.join(format!("s{s}_f{f}.png"));
                frame.save_png(&path).unwrap();
                frames.push(path);
                boxes.push(BoundingBox::new(cx as f64, 24.0, 12.0, 12.0).unwrap());
            }
            seqs.push(TrainSequence {
                id: format!("seq{s}"),
                frames,
                boxes,
                visible: vec![true; 3],
                description: "red block".to_string(),
            });
        }
        seqs
    }

    #[test]
    fn zero_learning_rate_leaves_weights_bitwise_identical() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_dataset(dir.path());
        let mut params = ParamSet::new();
        let model = TrackerModel::new(&mut params, 11, tiny_config()).unwrap();
        let before: Vec<Vec<u64>> = params
            .iter()
            .map(|p| p.value().data().iter().map(|v| v.to_bits()).collect())
            .collect();
        let train = TrainConfig {
            learning_rate: 0.0,
            weight_decay: 0.0,
            epochs: 1,
            pairs_per_epoch: 4,
            batch_size: 2,
            dropout: 0.0,
            ..TrainConfig::default()
        };
        train_run(
            &model,
            &mut params,
            &data,
            &train,
            &RuntimeConfig::default(),
            3,
            |_, _| {},
        )
        .unwrap();
        let after: Vec<Vec<u64>> = params
            .iter()
            .map(|p| p.value().data().iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn same_seed_gives_identical_loss_trajectory() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_dataset(dir.path());
        let train = TrainConfig {
            learning_rate: 1e-3,
            epochs: 2,
            pairs_per_epoch: 4,
            batch_size: 2,
            dropout: 0.1,
            ..TrainConfig::default()
        };
        let run = || -> Vec<f64> {
            let mut params = ParamSet::new();
            let model = TrackerModel::new(&mut params, 11, tiny_config()).unwrap();
            let hist = train_run(
                &model,
                &mut params,
                &data,
                &train,
                &RuntimeConfig::default(),
                9,
                |_, _| {},
            )
            .unwrap();
            hist.iter().map(|s| s.mean_total).collect()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut params = ParamSet::new();
        let model = TrackerModel::new(&mut params, 11, tiny_config()).unwrap();
        let mut opt = AdamW::new(&params, 1e-4, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = train_epoch(
            &model,
            &mut params,
            &mut opt,
            &[],
            &TrainConfig::default(),
            &RuntimeConfig::default(),
            &mut rng,
        );
        assert!(err.is_err());
    }
}
