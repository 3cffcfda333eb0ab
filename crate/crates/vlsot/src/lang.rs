//! Linguistic branch: maps a free-text target description to a fixed-length
//! language feature sequence. A hashing word tokenizer feeds a small
//! encoder stack; the branch output is the elementwise mean of every
//! encoder layer's output, with padding masked out of attention.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{normal_init, AttentionConfig, EncoderBlock};
use crate::tensor::{Graph, ParamId, ParamSet, Var};

pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const SEP_ID: usize = 2;
/// First id available to hashed words.
pub const WORD_BASE: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct LinguisticConfig {
    pub vocab_size: usize,
    /// Embedding width of the language features.
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    /// Total token length including [CLS] and [SEP].
    pub max_tokens: usize,
    pub ffn_hidden: usize,
    pub dropout: f64,
}

impl LinguisticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= WORD_BASE {
            return Err(Error::config(format!(
                "vocabulary needs more than {WORD_BASE} entries"
            )));
        }
        if self.max_tokens < 2 {
            return Err(Error::config("max_tokens must fit [CLS] and [SEP]"));
        }
        if self.layers == 0 {
            return Err(Error::config("linguistic branch needs at least one layer"));
        }
        AttentionConfig::new(self.width, self.heads, self.ffn_hidden, self.dropout)?;
        Ok(())
    }

    /// Maximum number of description words kept after truncation.
    pub fn max_words(&self) -> usize {
        self.max_tokens - 2
    }
}

/// Fixed-length token ids plus an attention mask (`true` = real token).
#[derive(Clone, Debug, PartialEq)]
pub struct LanguageTokens {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
}

impl LanguageTokens {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn real_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// The all-padding sequence used when language input is disabled.
    pub fn disabled(max_tokens: usize) -> Self {
        LanguageTokens {
            ids: vec![PAD_ID; max_tokens],
            mask: vec![false; max_tokens],
        }
    }
}

fn hash_word(word: &str, vocab_size: usize) -> usize {
    // FNV-1a, stable across platforms.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in word.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    WORD_BASE + (h % (vocab_size - WORD_BASE) as u64) as usize
}

/// Lowercase, split on whitespace and punctuation, hash words into the
/// vocabulary, wrap with [CLS]/[SEP], truncate to the word budget, and
/// zero-pad to the fixed length. Empty text yields `[CLS][SEP]` + padding.
pub fn tokenize(description: &str, config: &LinguisticConfig) -> LanguageTokens {
    let lowered = description.to_lowercase();
    let words: Vec<&str> = lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .take(config.max_words())
        .collect();
    let mut ids = Vec::with_capacity(config.max_tokens);
    ids.push(CLS_ID);
    for w in &words {
        ids.push(hash_word(w, config.vocab_size));
    }
    ids.push(SEP_ID);
    let real = ids.len();
    ids.resize(config.max_tokens, PAD_ID);
    let mut mask = vec![true; real];
    mask.resize(config.max_tokens, false);
    LanguageTokens { ids, mask }
}

/// Token + segment + position embeddings followed by a masked encoder
/// stack; the output averages every layer's output.
pub struct LinguisticBranch {
    pub config: LinguisticConfig,
    token_emb: ParamId,
    segment_emb: ParamId,
    position_emb: ParamId,
    blocks: Vec<EncoderBlock>,
}

impl LinguisticBranch {
    pub fn new(params: &mut ParamSet, seed: u64, config: LinguisticConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let token_emb = params.register_no_decay(
            "lang.token_emb",
            normal_init(&mut rng, vec![config.vocab_size, config.width], 0.02),
        );
        // Single-segment inputs: one row, kept for interface fidelity.
        let segment_emb = params.register_no_decay(
            "lang.segment_emb",
            normal_init(&mut rng, vec![1, config.width], 0.02),
        );
        let position_emb = params.register_no_decay(
            "lang.position_emb",
            normal_init(&mut rng, vec![config.max_tokens, config.width], 0.02),
        );
        let attn_cfg =
            AttentionConfig::new(config.width, config.heads, config.ffn_hidden, config.dropout)?;
        let blocks = (0..config.layers)
            .map(|i| EncoderBlock::new(params, &mut rng, &format!("lang.layer{i}"), &attn_cfg))
            .collect();
        Ok(LinguisticBranch {
            config,
            token_emb,
            segment_emb,
            position_emb,
            blocks,
        })
    }

    /// Produce the `[max_tokens, width]` language features.
    pub fn forward(&self, g: &mut Graph, tokens: &LanguageTokens) -> Result<Var> {
        if tokens.len() != self.config.max_tokens {
            return Err(Error::invalid(format!(
                "language tokens length {} does not match configured {}",
                tokens.len(),
                self.config.max_tokens
            )));
        }
        let emb_table = g.p(self.token_emb);
        let tok = g.tape.gather_rows(emb_table, &tokens.ids)?;
        let seg_table = g.p(self.segment_emb);
        let seg_row = g.tape.slice_cols(seg_table, 0, self.config.width)?;
        let seg_flat = g.tape.reshape(seg_row, vec![self.config.width])?;
        let with_seg = g.tape.add_row(tok, seg_flat)?;
        let pos = g.p(self.position_emb);
        let mut x = g.tape.add(with_seg, pos)?;
        x = g.dropout(x)?;

        let mut layer_outputs = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            x = block.forward(g, x, None, None, None, Some(&tokens.mask))?;
            layer_outputs.push(x);
        }
        let mut acc = layer_outputs[0];
        for out in &layer_outputs[1..] {
            acc = g.tape.add(acc, *out)?;
        }
        Ok(g.tape.scale(acc, 1.0 / layer_outputs.len() as f64))
    }

    /// Mean of the real-token rows, the pooled vector used by the
    /// contrastive alignment path. Fails on an all-padding sequence.
    pub fn masked_mean(&self, g: &mut Graph, features: Var, tokens: &LanguageTokens) -> Result<Var> {
        let real = tokens.real_count();
        if real == 0 {
            return Err(Error::invalid(
                "cannot pool an all-padding language sequence".to_string(),
            ));
        }
        let width = self.config.width;
        let weights: Vec<f64> = tokens
            .mask
            .iter()
            .flat_map(|&m| {
                let w = if m { 1.0 / real as f64 } else { 0.0 };
                std::iter::repeat(w).take(width)
            })
            .collect();
        let w = g.tape.constant(&crate::tensor::Tensor::new(
            vec![tokens.len(), width],
            weights,
        )?);
        let weighted = g.tape.mul(features, w)?;
        let mean = g.tape.mean_rows(weighted)?;
        // mean_rows divides by the token count; rescale to a plain sum of
        // the 1/real-weighted rows.
        Ok(g.tape.scale(mean, tokens.len() as f64))
    }
}
