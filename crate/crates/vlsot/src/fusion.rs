//! Contrastive visual-linguistic fusion: the batched InfoNCE alignment
//! losses over pooled modality embeddings, and the fusion transformer that
//! joins projected visual tokens, language tokens, and a learnable object
//! token into one self-attended sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{normal_init, AttentionConfig, EncoderBlock, Linear};
use crate::tensor::{Graph, ParamId, ParamSet, Tape, Var};

/// Which similarities enter the InfoNCE denominator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DenominatorMode {
    /// All pairs, including the matched one (conventional InfoNCE).
    Standard,
    /// Mismatched pairs only, the printed indicator-function form. The
    /// resulting loss is unbounded below; kept so the discrepancy stays
    /// testable instead of silently resolved.
    AsWritten,
}

impl DenominatorMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(DenominatorMode::Standard),
            "as-written" => Ok(DenominatorMode::AsWritten),
            other => Err(Error::config(format!(
                "unknown denominator mode {other} (expected standard | as-written)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AlignmentConfig {
    pub temperature: f64,
    pub mode: DenominatorMode,
}

impl AlignmentConfig {
    pub fn new(temperature: f64, mode: DenominatorMode) -> Result<Self> {
        if temperature <= 0.0 {
            return Err(Error::config("temperature must be positive"));
        }
        Ok(AlignmentConfig { temperature, mode })
    }
}

/// Pooled, projected embeddings of one (video, language) sample.
#[derive(Clone, Copy)]
pub struct EmbeddingPair {
    pub visual: Var,
    pub language: Var,
}

/// Cosine similarity of two equal-length vectors as a tape scalar.
/// Zero-norm inputs are rejected.
pub fn cosine_similarity(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    if tape.value(a).len() != tape.value(b).len() {
        return Err(Error::ShapeMismatch {
            op: "cosine_similarity",
            lhs: tape.shape(a).to_vec(),
            rhs: tape.shape(b).to_vec(),
        });
    }
    let norm = |t: &mut Tape, v: Var| -> Result<Var> {
        let sq = t.mul(v, v)?;
        let s = t.sum(sq);
        Ok(t.sqrt(s))
    };
    let na = norm(tape, a)?;
    let nb = norm(tape, b)?;
    if tape.scalar_value(na) == 0.0 || tape.scalar_value(nb) == 0.0 {
        return Err(Error::invalid(
            "cosine similarity of a zero-norm vector".to_string(),
        ));
    }
    let prod = tape.mul(a, b)?;
    let dot = tape.sum(prod);
    let denom = tape.mul(na, nb)?;
    tape.div(dot, denom)
}

fn infonce_direction(
    tape: &mut Tape,
    anchors: &[Var],
    others: &[Var],
    cfg: &AlignmentConfig,
) -> Result<Var> {
    let n = anchors.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "contrastive batch needs at least 2 pairs, got {n}"
        )));
    }
    let mut total: Option<Var> = None;
    for i in 0..n {
        let mut matched = None;
        let mut denom: Option<Var> = None;
        for j in 0..n {
            let sim = cosine_similarity(tape, anchors[i], others[j])?;
            let logit = tape.scale(sim, 1.0 / cfg.temperature);
            if j == i {
                matched = Some(logit);
                if cfg.mode == DenominatorMode::AsWritten {
                    continue;
                }
            }
            let e = tape.exp(logit);
            denom = Some(match denom {
                Some(d) => tape.add(d, e)?,
                None => e,
            });
        }
        let matched = matched.expect("diagonal similarity computed");
        let denom = denom.expect("n >= 2 leaves the denominator nonempty");
        let log_denom = tape.ln(denom);
        let term = tape.sub(log_denom, matched)?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("n >= 2"))
}

/// Vision-to-language InfoNCE, summed over the batch: for each visual
/// anchor the matched language embedding is scored against the batch.
pub fn infonce_v2l(tape: &mut Tape, batch: &[EmbeddingPair], cfg: &AlignmentConfig) -> Result<Var> {
    let anchors: Vec<Var> = batch.iter().map(|p| p.visual).collect();
    let others: Vec<Var> = batch.iter().map(|p| p.language).collect();
    infonce_direction(tape, &anchors, &others, cfg)
}

/// Language-to-vision InfoNCE, the mirror of [`infonce_v2l`].
pub fn infonce_l2v(tape: &mut Tape, batch: &[EmbeddingPair], cfg: &AlignmentConfig) -> Result<Var> {
    let anchors: Vec<Var> = batch.iter().map(|p| p.language).collect();
    let others: Vec<Var> = batch.iter().map(|p| p.visual).collect();
    infonce_direction(tape, &anchors, &others, cfg)
}

/// Total alignment loss: half the batch mean of both directions.
pub fn alignment_loss(tape: &mut Tape, batch: &[EmbeddingPair], cfg: &AlignmentConfig) -> Result<Var> {
    let v2l = infonce_v2l(tape, batch, cfg)?;
    let l2v = infonce_l2v(tape, batch, cfg)?;
    let sum = tape.add(v2l, l2v)?;
    Ok(tape.scale(sum, 0.5 / batch.len() as f64))
}

/// Which source a fused token position came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    /// Row-major index into the projected visual grid.
    Visual(usize),
    /// Index into the language token sequence.
    Language(usize),
    Obj,
}

/// The joint token matrix (visual tokens, then language tokens, then the
/// object token) with its source index map.
pub struct FusedTokens {
    pub tokens: Var,
    pub kinds: Vec<TokenKind>,
}

impl FusedTokens {
    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionConfig {
    /// Common projected width of the fused tokens.
    pub width: usize,
    /// Encoder depth of the fusion stack.
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub dropout: f64,
    /// Projected visual token count the fusion expects.
    pub visual_tokens: usize,
    /// Language token count the fusion expects.
    pub language_tokens: usize,
}

impl FusionConfig {
    pub fn fused_len(&self) -> usize {
        self.visual_tokens + self.language_tokens + 1
    }

    pub fn validate(&self) -> Result<()> {
        AttentionConfig::new(self.width, self.heads, self.ffn_hidden, self.dropout)?;
        if self.visual_tokens == 0 || self.language_tokens == 0 {
            return Err(Error::config("fusion needs both modalities present"));
        }
        Ok(())
    }
}

/// The fusion transformer plus the training-only alignment projections.
pub struct FusionModule {
    pub config: FusionConfig,
    vis_proj: Linear,
    lang_proj: Linear,
    obj: ParamId,
    pos: ParamId,
    blocks: Vec<EncoderBlock>,
    /// Alignment projections; used by the training loss only, never by the
    /// inference path.
    align_vis: Linear,
    align_lang: Linear,
}

impl FusionModule {
    pub fn new(
        params: &mut ParamSet,
        seed: u64,
        visual_width: usize,
        language_width: usize,
        config: FusionConfig,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vis_proj = Linear::new(params, &mut rng, "fusion.vis_proj", visual_width, config.width);
        let lang_proj = Linear::new(
            params,
            &mut rng,
            "fusion.lang_proj",
            language_width,
            config.width,
        );
        // Randomly initialized, optimized with everything else.
        let obj = params.register_no_decay(
            "fusion.obj",
            normal_init(&mut rng, vec![1, config.width], 0.02),
        );
        let pos = params.register_no_decay(
            "fusion.pos",
            normal_init(&mut rng, vec![config.fused_len(), config.width], 0.02),
        );
        let attn = AttentionConfig::new(config.width, config.heads, config.ffn_hidden, config.dropout)?;
        let blocks = (0..config.layers)
            .map(|i| EncoderBlock::new(params, &mut rng, &format!("fusion.layer{i}"), &attn))
            .collect();
        let align_vis = Linear::new(params, &mut rng, "fusion.align_vis", visual_width, config.width);
        let align_lang = Linear::new(
            params,
            &mut rng,
            "fusion.align_lang",
            language_width,
            config.width,
        );
        Ok(FusionModule {
            config,
            vis_proj,
            lang_proj,
            obj,
            pos,
            blocks,
            align_vis,
            align_lang,
        })
    }

    /// Project pooled branch outputs into the shared alignment space.
    /// Zero-norm outputs are degenerate and rejected.
    pub fn project_embeddings(
        &self,
        g: &mut Graph,
        pooled_visual: Var,
        pooled_language: Var,
    ) -> Result<EmbeddingPair> {
        let visual = self.align_vis.forward(g, pooled_visual)?;
        let language = self.align_lang.forward(g, pooled_language)?;
        for (name, v) in [("visual", visual), ("language", language)] {
            let norm: f64 = g.tape.value(v).iter().map(|x| x * x).sum();
            if norm == 0.0 {
                return Err(Error::invalid(format!(
                    "projected {name} embedding collapsed to the zero vector"
                )));
            }
        }
        Ok(EmbeddingPair { visual, language })
    }

    /// Concatenate both projected modalities with the object token, add
    /// learnable position embeddings, and run the encoder stack. With zero
    /// layers the output is the position-augmented concatenation.
    pub fn fuse(&self, g: &mut Graph, visual: Var, language: Var) -> Result<FusedTokens> {
        let nv = g.tape.shape(visual)[0];
        let nl = g.tape.shape(language)[0];
        if nv != self.config.visual_tokens || nl != self.config.language_tokens {
            return Err(Error::ShapeMismatch {
                op: "fuse",
                lhs: vec![nv, nl],
                rhs: vec![self.config.visual_tokens, self.config.language_tokens],
            });
        }
        let vis = self.vis_proj.forward(g, visual)?;
        let lang = self.lang_proj.forward(g, language)?;
        let obj = g.p(self.obj);
        let mut tokens = g.tape.concat_rows(&[vis, lang, obj])?;
        let pos = g.p(self.pos);
        if self.blocks.is_empty() {
            tokens = g.tape.add(tokens, pos)?;
        } else {
            for block in &self.blocks {
                tokens = block.forward(g, tokens, None, Some(pos), Some(pos), None)?;
            }
        }
        let mut kinds = Vec::with_capacity(self.config.fused_len());
        kinds.extend((0..nv).map(TokenKind::Visual));
        kinds.extend((0..nl).map(TokenKind::Language));
        kinds.push(TokenKind::Obj);
        Ok(FusedTokens { tokens, kinds })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn pair_from(tape: &mut Tape, v: Vec<f64>, l: Vec<f64>) -> EmbeddingPair {
        let visual = tape.leaf(&Tensor::from_vec(v), true);
        let language = tape.leaf(&Tensor::from_vec(l), true);
        EmbeddingPair { visual, language }
    }

    /// Orthonormal batch: sim(v_i, l_j) = 1 iff i == j else 0.
    fn orthonormal_batch(tape: &mut Tape) -> Vec<EmbeddingPair> {
        vec![
            pair_from(tape, vec![1.0, 0.0], vec![1.0, 0.0]),
            pair_from(tape, vec![0.0, 1.0], vec![0.0, 1.0]),
        ]
    }

    #[test]
    fn cosine_hand_values() {
        let mut t = Tape::new();
        let a = t.constant(&Tensor::from_vec(vec![1.0, 0.0]));
        let b = t.constant(&Tensor::from_vec(vec![1.0, 0.0]));
        let c = t.constant(&Tensor::from_vec(vec![0.0, 1.0]));
        let d = t.constant(&Tensor::from_vec(vec![1.0, 1.0]));
        let s1 = cosine_similarity(&mut t, a, b).unwrap();
        assert!((t.scalar_value(s1) - 1.0).abs() < 1e-12);
        let s2 = cosine_similarity(&mut t, a, c).unwrap();
        assert!(t.scalar_value(s2).abs() < 1e-12);
        let s3 = cosine_similarity(&mut t, d, a).unwrap();
        assert!((t.scalar_value(s3) - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_norm_rejected() {
        let mut t = Tape::new();
        let a = t.constant(&Tensor::from_vec(vec![0.0, 0.0]));
        let b = t.constant(&Tensor::from_vec(vec![1.0, 0.0]));
        assert!(cosine_similarity(&mut t, a, b).is_err());
    }

    #[test]
    fn cosine_scale_invariance() {
        let mut t = Tape::new();
        let a = t.constant(&Tensor::from_vec(vec![0.3, -0.7, 0.2]));
        let a5 = t.constant(&Tensor::from_vec(vec![1.5, -3.5, 1.0]));
        let b = t.constant(&Tensor::from_vec(vec![0.9, 0.1, -0.4]));
        let s = cosine_similarity(&mut t, a, b).unwrap();
        let s5 = cosine_similarity(&mut t, a5, b).unwrap();
        assert!((t.scalar_value(s) - t.scalar_value(s5)).abs() < 1e-12);
    }

    #[test]
    fn infonce_as_written_worked_case() {
        let mut t = Tape::new();
        let batch = orthonormal_batch(&mut t);
        let cfg = AlignmentConfig::new(1.0, DenominatorMode::AsWritten).unwrap();
        let v2l = infonce_v2l(&mut t, &batch, &cfg).unwrap();
        // Per i: -log(e^1 / e^0) = -1; summed over two pairs: -2.
        assert!((t.scalar_value(v2l) - (-2.0)).abs() < 1e-9);
    }

    #[test]
    fn infonce_standard_worked_case() {
        let mut t = Tape::new();
        let batch = orthonormal_batch(&mut t);
        let cfg = AlignmentConfig::new(1.0, DenominatorMode::Standard).unwrap();
        let v2l = infonce_v2l(&mut t, &batch, &cfg).unwrap();
        let e = std::f64::consts::E;
        let expect = 2.0 * -(e / (e + 1.0)).ln(); // 0.62652...
        assert!((t.scalar_value(v2l) - expect).abs() < 1e-9);
        assert!((expect - 0.626_523_3).abs() < 1e-6);
    }

    #[test]
    fn infonce_rejects_single_pair() {
        let mut t = Tape::new();
        let batch = vec![pair_from(&mut t, vec![1.0, 0.0], vec![1.0, 0.0])];
        let cfg = AlignmentConfig::new(1.0, DenominatorMode::AsWritten).unwrap();
        assert!(infonce_v2l(&mut t, &batch, &cfg).is_err());
    }

    #[test]
    fn l2v_equals_v2l_for_symmetric_sims() {
        let mut t = Tape::new();
        let batch = vec![
            pair_from(&mut t, vec![1.0, 0.2], vec![1.0, 0.2]),
            pair_from(&mut t, vec![0.1, 0.8], vec![0.1, 0.8]),
            pair_from(&mut t, vec![-0.5, 0.4], vec![-0.5, 0.4]),
        ];
        let cfg = AlignmentConfig::new(0.5, DenominatorMode::Standard).unwrap();
        let v2l = infonce_v2l(&mut t, &batch, &cfg).unwrap();
        let l2v = infonce_l2v(&mut t, &batch, &cfg).unwrap();
        assert!((t.scalar_value(v2l) - t.scalar_value(l2v)).abs() < 1e-12);
    }

    #[test]
    fn l2v_differs_for_asymmetric_sims() {
        // v and l sets differ, producing an asymmetric similarity matrix.
        let mut t = Tape::new();
        let batch = vec![
            pair_from(&mut t, vec![1.0, 0.0], vec![0.6, 0.8]),
            pair_from(&mut t, vec![0.0, 1.0], vec![1.0, 0.1]),
        ];
        let cfg = AlignmentConfig::new(1.0, DenominatorMode::Standard).unwrap();
        let v2l = infonce_v2l(&mut t, &batch, &cfg).unwrap();
        let l2v = infonce_l2v(&mut t, &batch, &cfg).unwrap();

        // Straight-line oracle in plain f64.
        let v = [[1.0, 0.0], [0.0, 1.0]];
        let l = [[0.6, 0.8], [1.0, 0.1f64]];
        let cos = |a: &[f64; 2], b: &[f64; 2]| {
            let na = (a[0] * a[0] + a[1] * a[1]).sqrt();
            let nb = (b[0] * b[0] + b[1] * b[1]).sqrt();
            (a[0] * b[0] + a[1] * b[1]) / (na * nb)
        };
        let mut expect_v2l = 0.0;
        let mut expect_l2v = 0.0;
        for i in 0..2 {
            let mut den_v = 0.0;
            let mut den_l = 0.0;
            for j in 0..2 {
                den_v += cos(&v[i], &l[j]).exp();
                den_l += cos(&l[i], &v[j]).exp();
            }
            expect_v2l += den_v.ln() - cos(&v[i], &l[i]);
            expect_l2v += den_l.ln() - cos(&l[i], &v[i]);
        }
        assert!((t.scalar_value(v2l) - expect_v2l).abs() < 1e-12);
        assert!((t.scalar_value(l2v) - expect_l2v).abs() < 1e-12);
        assert!((t.scalar_value(v2l) - t.scalar_value(l2v)).abs() > 1e-6);
    }

    #[test]
    fn coa_is_normalized_v2l_for_symmetric_sims() {
        let mut t = Tape::new();
        let batch = orthonormal_batch(&mut t);
        let cfg = AlignmentConfig::new(1.0, DenominatorMode::Standard).unwrap();
        let v2l = infonce_v2l(&mut t, &batch, &cfg).unwrap();
        let alignment = alignment_loss(&mut t, &batch, &cfg).unwrap();
        let expect = t.scalar_value(v2l) / 2.0;
        assert!((t.scalar_value(alignment) - expect).abs() < 1e-12);
        // Worked value: per-pair mean 0.31326...
        assert!((t.scalar_value(alignment) - 0.313_261_6).abs() < 1e-6);
    }

    #[test]
    fn coa_flattens_to_log_n_at_high_temperature() {
        let mut t = Tape::new();
        let batch = vec![
            pair_from(&mut t, vec![1.0, 0.0], vec![0.9, 0.1]),
            pair_from(&mut t, vec![0.0, 1.0], vec![0.2, 0.8]),
            pair_from(&mut t, vec![0.7, 0.7], vec![0.6, 0.6]),
        ];
        let cfg = AlignmentConfig::new(1e9, DenominatorMode::Standard).unwrap();
        let alignment = alignment_loss(&mut t, &batch, &cfg).unwrap();
        assert!((t.scalar_value(alignment) - 3.0f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn losses_are_permutation_invariant() {
        let mut t = Tape::new();
        let batch = vec![
            pair_from(&mut t, vec![1.0, 0.1], vec![0.9, 0.3]),
            pair_from(&mut t, vec![0.2, 1.0], vec![0.1, 0.7]),
            pair_from(&mut t, vec![-0.4, 0.5], vec![-0.3, 0.6]),
        ];
        let permuted = vec![batch[2], batch[0], batch[1]];
        let cfg = AlignmentConfig::new(0.5, DenominatorMode::Standard).unwrap();
        let a = alignment_loss(&mut t, &batch, &cfg).unwrap();
        let b = alignment_loss(&mut t, &permuted, &cfg).unwrap();
        assert!((t.scalar_value(a) - t.scalar_value(b)).abs() < 1e-12);
    }

    #[test]
    fn duplicated_batch_has_predictable_loss() {
        let mut t = Tape::new();
        let base = orthonormal_batch(&mut t);
        let doubled: Vec<EmbeddingPair> = base.iter().chain(base.iter()).copied().collect();
        let cfg = AlignmentConfig::new(1.0, DenominatorMode::Standard).unwrap();
        let v2l = infonce_v2l(&mut t, &doubled, &cfg).unwrap();
        // Each anchor now sees its match twice: denominator 2e + 2.
        let e = std::f64::consts::E;
        let expect = 4.0 * -(e / (2.0 * e + 2.0)).ln();
        assert!((t.scalar_value(v2l) - expect).abs() < 1e-9);
    }

    #[test]
    fn coa_gradients_match_finite_differences() {
        let gc = crate::gradcheck::GradCheck::default();
        let inputs = vec![
            Tensor::from_vec(vec![0.9, 0.2, -0.1]),
            Tensor::from_vec(vec![0.8, 0.3, 0.05]),
            Tensor::from_vec(vec![-0.2, 1.0, 0.4]),
            Tensor::from_vec(vec![-0.1, 0.9, 0.5]),
        ];
        for mode in [DenominatorMode::Standard, DenominatorMode::AsWritten] {
            gc.check("alignment_loss", &inputs, |t, v| {
                let batch = vec![
                    EmbeddingPair {
                        visual: v[0],
                        language: v[1],
                    },
                    EmbeddingPair {
                        visual: v[2],
                        language: v[3],
                    },
                ];
                let cfg = AlignmentConfig::new(0.5, mode).unwrap();
                alignment_loss(t, &batch, &cfg)
            })
            .unwrap();
        }
    }

    fn small_fusion() -> (ParamSet, FusionModule) {
        let mut params = ParamSet::new();
        let config = FusionConfig {
            width: 8,
            layers: 2,
            heads: 2,
            ffn_hidden: 16,
            dropout: 0.0,
            visual_tokens: 9,
            language_tokens: 4,
        };
        let module = FusionModule::new(&mut params, 21, 6, 5, config).unwrap();
        (params, module)
    }

    #[test]
    fn fused_length_is_visual_plus_language_plus_one() {
        let (params, module) = small_fusion();
        let mut g = Graph::inference(&params);
        let vis = g.constant(&Tensor::zeros(vec![9, 6]));
        let lang = g.constant(&Tensor::zeros(vec![4, 5]));
        let fused = module.fuse(&mut g, vis, lang).unwrap();
        assert_eq!(fused.len(), 14);
        assert_eq!(g.tape.shape(fused.tokens), &[14, 8]);
        assert_eq!(fused.kinds[0], TokenKind::Visual(0));
        assert_eq!(fused.kinds[9], TokenKind::Language(0));
        assert_eq!(fused.kinds[13], TokenKind::Obj);
        assert_eq!(
            fused.kinds.iter().filter(|k| **k == TokenKind::Obj).count(),
            1
        );
    }

    #[test]
    fn full_scale_and_desk_fused_lengths() {
        let full = FusionConfig {
            width: 256,
            layers: 6,
            heads: 8,
            ffn_hidden: 2048,
            dropout: 0.1,
            visual_tokens: 400,
            language_tokens: 40,
        };
        assert_eq!(full.fused_len(), 441);
        let desk = FusionConfig {
            width: 64,
            layers: 6,
            heads: 4,
            ffn_hidden: 256,
            dropout: 0.1,
            visual_tokens: 100,
            language_tokens: 20,
        };
        assert_eq!(desk.fused_len(), 121);
    }

    #[test]
    fn zero_layer_fusion_is_projected_concat_plus_positions() {
        let mut params = ParamSet::new();
        let config = FusionConfig {
            width: 4,
            layers: 0,
            heads: 2,
            ffn_hidden: 8,
            dropout: 0.0,
            visual_tokens: 2,
            language_tokens: 2,
        };
        let module = FusionModule::new(&mut params, 5, 4, 4, config).unwrap();
        let mut g = Graph::inference(&params);
        let vis = g.constant(&Tensor::new(vec![2, 4], vec![0.1; 8]).unwrap());
        let lang = g.constant(&Tensor::new(vec![2, 4], vec![-0.2; 8]).unwrap());
        let fused = module.fuse(&mut g, vis, lang).unwrap();
        assert_eq!(fused.len(), 5);

        let mut g2 = Graph::inference(&params);
        let vis2 = g2.constant(&Tensor::new(vec![2, 4], vec![0.1; 8]).unwrap());
        let lang2 = g2.constant(&Tensor::new(vec![2, 4], vec![-0.2; 8]).unwrap());
        let pv = module.vis_proj.forward(&mut g2, vis2).unwrap();
        let pl = module.lang_proj.forward(&mut g2, lang2).unwrap();
        let obj = g2.p(module.obj);
        let cat = g2.tape.concat_rows(&[pv, pl, obj]).unwrap();
        let pos = g2.p(module.pos);
        let expect = g2.tape.add(cat, pos).unwrap();
        assert_eq!(g.tape.value(fused.tokens), g2.tape.value(expect));
    }

    #[test]
    fn project_embeddings_identity_case_and_hand_value() {
        let mut params = ParamSet::new();
        let config = FusionConfig {
            width: 2,
            layers: 1,
            heads: 1,
            ffn_hidden: 4,
            dropout: 0.0,
            visual_tokens: 2,
            language_tokens: 2,
        };
        let module = FusionModule::new(&mut params, 9, 3, 3, config).unwrap();
        // Fix both alignment projections to the same known 3 -> 2 map.
        let w = Tensor::new(vec![3, 2], vec![1.0, 0.5, -1.0, 2.0, 0.0, 1.0]).unwrap();
        let entries: Vec<(String, Tensor)> = params
            .iter()
            .map(|p| {
                let t = match p.name() {
                    "fusion.align_vis.w" | "fusion.align_lang.w" => w.clone(),
                    "fusion.align_vis.b" | "fusion.align_lang.b" => Tensor::zeros(vec![2]),
                    _ => p.value().clone(),
                };
                (p.name().to_string(), t)
            })
            .collect();
        params.load_values(&entries).unwrap();

        let mut g = Graph::inference(&params);
        let pooled = g.constant(&Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let pair = module.project_embeddings(&mut g, pooled, pooled).unwrap();
        // Equal pooled inputs through equal projections agree.
        assert_eq!(g.tape.value(pair.visual), g.tape.value(pair.language));
        // Hand value: [1,2,3] @ w = [1-2+0, 0.5+4+3] = [-1, 7.5].
        assert_eq!(g.tape.value(pair.visual), &[-1.0, 7.5]);
        assert_eq!(g.tape.shape(pair.visual), &[1, 2]);
    }

    #[test]
    fn project_embeddings_rejects_zero_output() {
        let mut params = ParamSet::new();
        let config = FusionConfig {
            width: 2,
            layers: 1,
            heads: 1,
            ffn_hidden: 4,
            dropout: 0.0,
            visual_tokens: 2,
            language_tokens: 2,
        };
        let module = FusionModule::new(&mut params, 9, 3, 3, config).unwrap();
        let entries: Vec<(String, Tensor)> = params
            .iter()
            .map(|p| {
                let t = if p.name().starts_with("fusion.align_vis") {
                    Tensor::zeros(p.value().shape().to_vec())
                } else {
                    p.value().clone()
                };
                (p.name().to_string(), t)
            })
            .collect();
        params.load_values(&entries).unwrap();
        let mut g = Graph::inference(&params);
        let pooled = g.constant(&Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        assert!(module.project_embeddings(&mut g, pooled, pooled).is_err());
    }

    #[test]
    fn fusion_gradients_match_finite_differences() {
        let mut params = ParamSet::new();
        let config = FusionConfig {
            width: 4,
            layers: 1,
            heads: 2,
            ffn_hidden: 8,
            dropout: 0.0,
            visual_tokens: 2,
            language_tokens: 2,
        };
        let module = FusionModule::new(&mut params, 31, 3, 3, config).unwrap();
        let vis = Tensor::new(vec![2, 3], vec![0.5, -0.2, 0.8, 0.1, 0.9, -0.4]).unwrap();
        let lang = Tensor::new(vec![2, 3], vec![0.3, 0.6, -0.1, -0.7, 0.2, 0.4]).unwrap();
        let gc = crate::gradcheck::GradCheck::default();
        gc.check_params("fusion", &mut params, |g| {
            let v = g.constant(&vis);
            let l = g.constant(&lang);
            let fused = module.fuse(g, v, l)?;
            let sq = g.tape.mul(fused.tokens, fused.tokens)?;
            Ok(g.tape.mean(sq))
        })
        .unwrap();
    }
}
