//! Flat `key = value` configuration files covering the model, runtime,
//! and training settings. Unknown keys are errors; `#` starts a comment.
//! The same text rides inside checkpoints so a saved model can be rebuilt
//! without the original file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fusion::DenominatorMode;
use crate::model::ModelConfig;
use crate::runtime::{RuntimeConfig, TrainConfig};
use crate::visual::PostConvMode;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FullConfig {
    pub model: ModelConfig,
    pub runtime: RuntimeConfig,
    pub train: TrainConfig,
}

impl FullConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.runtime.validate_against(&self.model)?;
        if self.train.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.model.use_alignment && self.runtime.use_language && self.train.batch_size < 2 {
            return Err(Error::config(
                "contrastive alignment needs batch_size >= 2",
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::dataset(path, format!("cannot read config: {e}")))?;
        Self::from_text(&text)
    }

    /// Parse overrides on top of the desk-scale defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = FullConfig::default();
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!(
                    "line {}: expected key = value, found {raw:?}",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if seen.insert(key.to_string(), lineno).is_some() {
                return Err(Error::config(format!(
                    "line {}: duplicate key {key}",
                    lineno + 1
                )));
            }
            cfg.apply(key, value)
                .map_err(|e| Error::config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse::<T>()
                .map_err(|_| Error::config(format!("{key}: cannot parse {value:?}")))
        }
        fn flag(key: &str, value: &str) -> Result<bool> {
            match value {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(Error::config(format!("{key}: expected true or false"))),
            }
        }
        match key {
            // visual branch
            "search_size" => self.model.visual.search_size = num(key, value)?,
            "template_size" => self.model.visual.template_size = num(key, value)?,
            "stem_stride" => self.model.visual.stem_stride = num(key, value)?,
            "channels" => self.model.visual.channels = num(key, value)?,
            "encoder_repeats" => self.model.visual.encoder_repeats = num(key, value)?,
            "encoder_heads" => self.model.visual.encoder_heads = num(key, value)?,
            "decoder_heads" => self.model.visual.decoder_heads = num(key, value)?,
            "ffn_hidden" => self.model.visual.ffn_hidden = num(key, value)?,
            "post_conv_count" => self.model.visual.post_conv_count = num(key, value)?,
            "post_conv_kernel" => self.model.visual.post_conv_kernel = num(key, value)?,
            "post_conv_mode" => {
                self.model.visual.post_conv_mode = match value {
                    "valid" => PostConvMode::Valid,
                    "same-crop" => match self.model.visual.post_conv_mode {
                        PostConvMode::SameCrop(side) => PostConvMode::SameCrop(side),
                        PostConvMode::Valid => PostConvMode::SameCrop(10),
                    },
                    _ => {
                        return Err(Error::config(format!(
                            "{key}: expected valid or same-crop"
                        )))
                    }
                }
            }
            "post_crop_side" => {
                let side = num(key, value)?;
                self.model.visual.post_conv_mode = PostConvMode::SameCrop(side);
            }
            "pos_each_layer" => self.model.visual.pos_each_layer = flag(key, value)?,
            // linguistic branch
            "vocab_size" => self.model.language.vocab_size = num(key, value)?,
            "lang_width" => self.model.language.width = num(key, value)?,
            "lang_layers" => self.model.language.layers = num(key, value)?,
            "lang_heads" => self.model.language.heads = num(key, value)?,
            "lang_tokens" => self.model.language.max_tokens = num(key, value)?,
            "lang_ffn_hidden" => self.model.language.ffn_hidden = num(key, value)?,
            // fusion and head
            "fusion_width" => self.model.fusion_width = num(key, value)?,
            "fusion_layers" => self.model.fusion_layers = num(key, value)?,
            "fusion_heads" => self.model.fusion_heads = num(key, value)?,
            "fusion_ffn" => self.model.fusion_ffn = num(key, value)?,
            "head_hidden" => self.model.head_hidden = num(key, value)?,
            "dropout" => {
                let d: f64 = num(key, value)?;
                self.model.visual.dropout = d;
                self.model.language.dropout = d;
                self.train.dropout = d;
            }
            // losses
            "temperature" => self.model.temperature = num(key, value)?,
            "denominator_mode" => {
                self.model.denominator_mode = DenominatorMode::parse(value)?
            }
            "lambda_l1" => self.model.weights.lambda_l1 = num(key, value)?,
            "lambda_giou" => self.model.weights.lambda_giou = num(key, value)?,
            "alpha_ce" => self.model.weights.alpha_ce = num(key, value)?,
            "use_alignment" => self.model.use_alignment = flag(key, value)?,
            // runtime
            "search_scale" => self.runtime.search_scale = num(key, value)?,
            "template_scale" => self.runtime.template_scale = num(key, value)?,
            "window_weight" => self.runtime.window_weight = num(key, value)?,
            "use_language" => self.runtime.use_language = flag(key, value)?,
            // training
            "learning_rate" => self.train.learning_rate = num(key, value)?,
            "weight_decay" => self.train.weight_decay = num(key, value)?,
            "epochs" => self.train.epochs = num(key, value)?,
            "pairs_per_epoch" => self.train.pairs_per_epoch = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "aug_translation" => self.train.aug_translation = Some(num(key, value)?),
            "aug_brightness" => self.train.aug_brightness = num(key, value)?,
            other => return Err(Error::config(format!("unknown key {other}"))),
        }
        Ok(())
    }

    /// Serialize every setting; `from_text` of the output reproduces the
    /// configuration exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let v = &self.model.visual;
        let l = &self.model.language;
        writeln!(s, "search_size = {}", v.search_size).unwrap();
        writeln!(s, "template_size = {}", v.template_size).unwrap();
        writeln!(s, "stem_stride = {}", v.stem_stride).unwrap();
        writeln!(s, "channels = {}", v.channels).unwrap();
        writeln!(s, "encoder_repeats = {}", v.encoder_repeats).unwrap();
        writeln!(s, "encoder_heads = {}", v.encoder_heads).unwrap();
        writeln!(s, "decoder_heads = {}", v.decoder_heads).unwrap();
        writeln!(s, "ffn_hidden = {}", v.ffn_hidden).unwrap();
        writeln!(s, "post_conv_count = {}", v.post_conv_count).unwrap();
        writeln!(s, "post_conv_kernel = {}", v.post_conv_kernel).unwrap();
        match v.post_conv_mode {
            PostConvMode::Valid => writeln!(s, "post_conv_mode = valid").unwrap(),
            PostConvMode::SameCrop(side) => {
                writeln!(s, "post_crop_side = {side}").unwrap();
            }
        }
        writeln!(s, "pos_each_layer = {}", v.pos_each_layer).unwrap();
        writeln!(s, "vocab_size = {}", l.vocab_size).unwrap();
        writeln!(s, "lang_width = {}", l.width).unwrap();
        writeln!(s, "lang_layers = {}", l.layers).unwrap();
        writeln!(s, "lang_heads = {}", l.heads).unwrap();
        writeln!(s, "lang_tokens = {}", l.max_tokens).unwrap();
        writeln!(s, "lang_ffn_hidden = {}", l.ffn_hidden).unwrap();
        writeln!(s, "fusion_width = {}", self.model.fusion_width).unwrap();
        writeln!(s, "fusion_layers = {}", self.model.fusion_layers).unwrap();
        writeln!(s, "fusion_heads = {}", self.model.fusion_heads).unwrap();
        writeln!(s, "fusion_ffn = {}", self.model.fusion_ffn).unwrap();
        writeln!(s, "head_hidden = {}", self.model.head_hidden).unwrap();
        writeln!(s, "dropout = {}", self.train.dropout).unwrap();
        writeln!(s, "temperature = {}", self.model.temperature).unwrap();
        let mode = match self.model.denominator_mode {
            DenominatorMode::Standard => "standard",
            DenominatorMode::AsWritten => "as-written",
        };
        writeln!(s, "denominator_mode = {mode}").unwrap();
        writeln!(s, "lambda_l1 = {}", self.model.weights.lambda_l1).unwrap();
        writeln!(s, "lambda_giou = {}", self.model.weights.lambda_giou).unwrap();
        writeln!(s, "alpha_ce = {}", self.model.weights.alpha_ce).unwrap();
        writeln!(s, "use_alignment = {}", self.model.use_alignment).unwrap();
        writeln!(s, "search_scale = {}", self.runtime.search_scale).unwrap();
        writeln!(s, "template_scale = {}", self.runtime.template_scale).unwrap();
        writeln!(s, "window_weight = {}", self.runtime.window_weight).unwrap();
        writeln!(s, "use_language = {}", self.runtime.use_language).unwrap();
        writeln!(s, "learning_rate = {}", self.train.learning_rate).unwrap();
        writeln!(s, "weight_decay = {}", self.train.weight_decay).unwrap();
        writeln!(s, "epochs = {}", self.train.epochs).unwrap();
        writeln!(s, "pairs_per_epoch = {}", self.train.pairs_per_epoch).unwrap();
        writeln!(s, "batch_size = {}", self.train.batch_size).unwrap();
        if let Some(t) = self.train.aug_translation {
            writeln!(s, "aug_translation = {t}").unwrap();
        }
        writeln!(s, "aug_brightness = {}", self.train.aug_brightness).unwrap();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = FullConfig::default();
        cfg.validate().unwrap();
        // The desk defaults carry dropout 0.1 in both places already.
        let text = cfg.to_text();
        let parsed = FullConfig::from_text(&text).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let err = FullConfig::from_text("mystery_knob = 3\n").unwrap_err().to_string();
        assert!(err.contains("mystery_knob"), "{err}");
    }

    #[test]
    fn duplicate_key_is_an_error() {
        let err = FullConfig::from_text("channels = 64\nchannels = 32\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("duplicate"), "{err}");
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = FullConfig::from_text("# a comment\n\nchannels = 32 # trailing\n").unwrap();
        assert_eq!(cfg.model.visual.channels, 32);
    }

    #[test]
    fn bad_window_arithmetic_is_rejected_at_parse() {
        // 100 visual + 21 language + 1 = 122, not a perfect square.
        let err = FullConfig::from_text("lang_tokens = 21\n").unwrap_err().to_string();
        assert!(err.contains("square"), "{err}");
    }

    #[test]
    fn dropout_key_reaches_all_consumers() {
        let cfg = FullConfig::from_text("dropout = 0.25\n").unwrap();
        assert_eq!(cfg.model.visual.dropout, 0.25);
        assert_eq!(cfg.model.language.dropout, 0.25);
        assert_eq!(cfg.train.dropout, 0.25);
    }

    #[test]
    fn full_scale_shape_accepted() {
        let text = "\
search_size = 256\ntemplate_size = 128\nchannels = 256\nencoder_repeats = 4\n\
encoder_heads = 8\nffn_hidden = 2048\npost_conv_mode = valid\nvocab_size = 30522\n\
lang_width = 768\nlang_layers = 12\nlang_heads = 12\nlang_tokens = 40\n\
lang_ffn_hidden = 3072\nfusion_width = 256\nfusion_heads = 8\nfusion_ffn = 2048\n\
head_hidden = 256\n";
        let cfg = FullConfig::from_text(text).unwrap();
        assert_eq!(cfg.model.fused_len().unwrap(), 441);
    }
}
