//! The assembled tracker: visual branch, linguistic branch, fusion module,
//! and tracking head behind one config, with the forward paths used by
//! training (both alignment projections live) and inference (alignment
//! excluded, cached template/language features).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fusion::{
    AlignmentConfig, DenominatorMode, EmbeddingPair, FusedTokens, FusionConfig, FusionModule,
};
use crate::head::{HeadOutput, LossWeights, TrackingHead};
use crate::lang::{LanguageTokens, LinguisticBranch, LinguisticConfig};
use crate::tensor::{Graph, ParamSet, Var};
use crate::visual::{ImageTensor, VisualBranch, VisualConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub visual: VisualConfig,
    pub language: LinguisticConfig,
    /// Fused-token width (the shared projected channel count).
    pub fusion_width: usize,
    pub fusion_layers: usize,
    pub fusion_heads: usize,
    pub fusion_ffn: usize,
    pub head_hidden: usize,
    pub temperature: f64,
    pub denominator_mode: DenominatorMode,
    pub weights: LossWeights,
    /// Train-time switch for the contrastive alignment term.
    pub use_alignment: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            visual: VisualConfig::default(),
            language: LinguisticConfig {
                vocab_size: 4096,
                width: 64,
                layers: 2,
                heads: 4,
                max_tokens: 20,
                ffn_hidden: 256,
                dropout: 0.1,
            },
            fusion_width: 64,
            fusion_layers: 6,
            fusion_heads: 4,
            fusion_ffn: 256,
            head_hidden: 64,
            temperature: 0.5,
            denominator_mode: DenominatorMode::Standard,
            weights: LossWeights::default(),
            use_alignment: true,
        }
    }
}

impl ModelConfig {
    /// Full-scale configuration (pretrained-backbone scale): 441 fused
    /// tokens of width 256.
    pub fn full_scale() -> Self {
        ModelConfig {
            visual: VisualConfig::full_scale(),
            language: LinguisticConfig {
                vocab_size: 30522,
                width: 768,
                layers: 12,
                heads: 12,
                max_tokens: 40,
                ffn_hidden: 3072,
                dropout: 0.1,
            },
            fusion_width: 256,
            fusion_layers: 6,
            fusion_heads: 8,
            fusion_ffn: 2048,
            head_hidden: 256,
            temperature: 0.5,
            denominator_mode: DenominatorMode::Standard,
            weights: LossWeights::default(),
            use_alignment: true,
        }
    }

    pub fn fusion_config(&self) -> Result<FusionConfig> {
        Ok(FusionConfig {
            width: self.fusion_width,
            layers: self.fusion_layers,
            heads: self.fusion_heads,
            ffn_hidden: self.fusion_ffn,
            dropout: self.visual.dropout,
            visual_tokens: self.visual.projected_tokens()?,
            language_tokens: self.language.max_tokens,
        })
    }

    /// Total fused token (candidate) count.
    pub fn fused_len(&self) -> Result<usize> {
        Ok(self.fusion_config()?.fused_len())
    }

    pub fn alignment_config(&self) -> Result<AlignmentConfig> {
        AlignmentConfig::new(self.temperature, self.denominator_mode)
    }

    pub fn validate(&self) -> Result<()> {
        self.visual.validate()?;
        self.language.validate()?;
        self.fusion_config()?.validate()?;
        self.alignment_config()?;
        Ok(())
    }
}

pub struct TrackerModel {
    pub config: ModelConfig,
    pub visual: VisualBranch,
    pub language: LinguisticBranch,
    pub fusion: FusionModule,
    pub head: TrackingHead,
}

/// Intermediate results of one training-sample forward pass.
pub struct SampleForward {
    /// Projected visual features `[N_v', C_v]`.
    pub visual_features: Var,
    /// Language features `[N_l, C_l]`.
    pub language_features: Var,
    pub fused: FusedTokens,
    pub head: HeadOutput,
}

impl TrackerModel {
    pub fn new(params: &mut ParamSet, seed: u64, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let visual = VisualBranch::new(params, seed ^ 0x5eed_0001, config.visual.clone())?;
        let language = LinguisticBranch::new(params, seed ^ 0x5eed_0002, config.language.clone())?;
        let fusion = FusionModule::new(
            params,
            seed ^ 0x5eed_0003,
            config.visual.channels,
            config.language.width,
            config.fusion_config()?,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0004);
        let head = TrackingHead::new(params, &mut rng, config.fusion_width, config.head_hidden);
        Ok(TrackerModel {
            config,
            visual,
            language,
            fusion,
            head,
        })
    }

    /// Training path: both branches, fusion, head.
    pub fn forward_train(
        &self,
        g: &mut Graph,
        search: &ImageTensor,
        template: &ImageTensor,
        tokens: &LanguageTokens,
    ) -> Result<SampleForward> {
        let visual_features = self.visual.forward(g, search, template)?;
        let language_features = self.language.forward(g, tokens)?;
        let fused = self.fusion.fuse(g, visual_features, language_features)?;
        let head = self.head.forward(g, &fused)?;
        Ok(SampleForward {
            visual_features,
            language_features,
            fused,
            head,
        })
    }

    /// Pooled and projected alignment embeddings for one sample (training
    /// only; the inference path never runs these projections).
    pub fn alignment_pair(
        &self,
        g: &mut Graph,
        forward: &SampleForward,
        tokens: &LanguageTokens,
    ) -> Result<EmbeddingPair> {
        let pooled_v = g.tape.mean_rows(forward.visual_features)?;
        let pooled_l = self
            .language
            .masked_mean(g, forward.language_features, tokens)?;
        self.fusion.project_embeddings(g, pooled_v, pooled_l)
    }

    /// Inference path with cached template stem tokens and cached language
    /// features.
    pub fn forward_infer(
        &self,
        g: &mut Graph,
        search: &ImageTensor,
        template_tokens: Var,
        language_features: Var,
    ) -> Result<(FusedTokens, HeadOutput)> {
        let visual_features = self
            .visual
            .forward_with_template_tokens(g, search, template_tokens)?;
        let fused = self.fusion.fuse(g, visual_features, language_features)?;
        let head = self.head.forward(g, &fused)?;
        Ok((fused, head))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::tokenize;
    use crate::visual::PostConvMode;

    pub(crate) fn tiny_model_config() -> ModelConfig {
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
            temperature: 0.5,
            denominator_mode: DenominatorMode::Standard,
            weights: LossWeights::default(),
            use_alignment: true,
        }
    }

    fn image(side: usize, seed: f64) -> ImageTensor {
        let mut rgb = Vec::with_capacity(side * side * 3);
        for i in 0..side * side * 3 {
            rgb.push(((i as f64 * seed).sin() + 1.0) / 2.0);
        }
        ImageTensor::from_rgb(side, side, &rgb).unwrap()
    }

    #[test]
    fn full_scale_candidate_count_is_441() {
        let cfg = ModelConfig::full_scale();
        assert_eq!(cfg.fused_len().unwrap(), 441);
        let desk = ModelConfig::default();
        assert_eq!(desk.fused_len().unwrap(), 121);
    }

    #[test]
    fn train_forward_produces_consistent_shapes() {
        let cfg = tiny_model_config();
        let mut params = ParamSet::new();
        let model = TrackerModel::new(&mut params, 77, cfg.clone()).unwrap();
        let search = image(32, 0.37);
        let template = image(16, 0.53);
        let tokens = tokenize("red dot", &cfg.language);
        let mut g = Graph::inference(&params);
        let out = model.forward_train(&mut g, &search, &template, &tokens).unwrap();
        let fused_len = cfg.fused_len().unwrap();
        assert_eq!(out.fused.len(), fused_len);
        assert_eq!(g.tape.shape(out.head.confidences), &[fused_len, 1]);
        assert_eq!(g.tape.shape(out.head.boxes), &[fused_len, 4]);
        let pair = model.alignment_pair(&mut g, &out, &tokens).unwrap();
        assert_eq!(g.tape.shape(pair.visual), &[1, 8]);
        assert_eq!(g.tape.shape(pair.language), &[1, 8]);
    }

    #[test]
    fn infer_matches_train_path_at_eval() {
        let cfg = tiny_model_config();
        let mut params = ParamSet::new();
        let model = TrackerModel::new(&mut params, 78, cfg.clone()).unwrap();
        let search = image(32, 0.41);
        let template = image(16, 0.59);
        let tokens = tokenize("blue square", &cfg.language);

        let mut g1 = Graph::inference(&params);
        let train_out = model
            .forward_train(&mut g1, &search, &template, &tokens)
            .unwrap();
        let train_conf = g1.tape.value(train_out.head.confidences).to_vec();

        let mut g2 = Graph::inference(&params);
        let template_tokens = model.visual.stem_forward(&mut g2, &template).unwrap();
        let lang_features = model.language.forward(&mut g2, &tokens).unwrap();
        let (_, head) = model
            .forward_infer(&mut g2, &search, template_tokens, lang_features)
            .unwrap();
        assert_eq!(g2.tape.value(head.confidences), &train_conf[..]);
    }
}
