//! Attention primitives and encoder blocks shared by every branch:
//! scaled dot-product attention, multi-head self/cross attention, the
//! feed-forward network, and positional encodings.
//!
//! Token matrices are row-major `[length, width]`. Residual sub-layers use
//! the post-norm order: `LN(x + Sublayer(x))`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamSet, Tape, Tensor, Var};

/// Shape hyper-parameters of one attention stack.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionConfig {
    /// Embedding width of every token.
    pub d_model: usize,
    pub num_heads: usize,
    pub ffn_hidden: usize,
    pub dropout: f64,
}

impl AttentionConfig {
    pub fn new(d_model: usize, num_heads: usize, ffn_hidden: usize, dropout: f64) -> Result<Self> {
        let cfg = AttentionConfig {
            d_model,
            num_heads,
            ffn_hidden,
            dropout,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.num_heads == 0 || self.ffn_hidden == 0 {
            return Err(Error::config("attention extents must be positive"));
        }
        if self.d_model % self.num_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }
}

/// Xavier-uniform initialization for a `[rows, cols]` weight matrix.
pub fn xavier_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("well-formed init shape")
}

/// Small-normal initialization, used for embedding tables.
pub fn normal_init(rng: &mut ChaCha8Rng, shape: Vec<usize>, std: f64) -> Tensor {
    let numel: usize = shape.iter().product();
    // Box-Muller transform on the seeded stream.
    let mut data = Vec::with_capacity(numel);
    while data.len() < numel {
        let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        data.push(r * theta.cos() * std);
        if data.len() < numel {
            data.push(r * theta.sin() * std);
        }
    }
    Tensor::new(shape, data).expect("well-formed init shape")
}

/// Affine map `x W + b` over row-token matrices.
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let w = params.register(format!("{name}.w"), xavier_uniform(rng, in_dim, out_dim));
        let b = params.register_no_decay(format!("{name}.b"), Tensor::zeros(vec![out_dim]));
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.p(self.w);
        let b = g.p(self.b);
        let xw = g.tape.matmul(x, w)?;
        g.tape.add_row(xw, b)
    }
}

/// Layer normalization parameters (gamma, beta) over the last axis.
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(params: &mut ParamSet, name: &str, width: usize) -> Self {
        let gamma = params.register_no_decay(format!("{name}.gamma"), Tensor::full(vec![width], 1.0));
        let beta = params.register_no_decay(format!("{name}.beta"), Tensor::zeros(vec![width]));
        LayerNorm {
            gamma,
            beta,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gamma = g.p(self.gamma);
        let beta = g.p(self.beta);
        g.tape.layer_norm(x, gamma, beta, self.eps)
    }
}

/// Two linear layers with a ReLU between them.
pub struct FeedForward {
    pub lin1: Linear,
    pub lin2: Linear,
}

impl FeedForward {
    pub fn new(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_model: usize,
        hidden: usize,
    ) -> Self {
        FeedForward {
            lin1: Linear::new(params, rng, &format!("{name}.fc1"), d_model, hidden),
            lin2: Linear::new(params, rng, &format!("{name}.fc2"), hidden, d_model),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.lin1.forward(g, x)?;
        let h = g.tape.relu(h);
        let h = g.dropout(h)?;
        self.lin2.forward(g, h)
    }
}

/// `softmax(Q K^T / sqrt(d_k)) V` — the single-head attention primitive.
/// Every output row is a convex combination of the rows of `V`.
pub fn scaled_dot_attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var> {
    let (qs, ks, vs) = (
        tape.shape(q).to_vec(),
        tape.shape(k).to_vec(),
        tape.shape(v).to_vec(),
    );
    if qs.len() != 2 || ks.len() != 2 || qs[1] != ks[1] {
        return Err(Error::ShapeMismatch {
            op: "scaled_dot_attention",
            lhs: qs,
            rhs: ks,
        });
    }
    if vs.len() != 2 || vs[0] != ks[0] {
        return Err(Error::ShapeMismatch {
            op: "scaled_dot_attention",
            lhs: ks,
            rhs: vs,
        });
    }
    let d_k = qs[1] as f64;
    let kt = tape.transpose(k)?;
    let logits = tape.matmul(q, kt)?;
    let scaled = tape.scale(logits, 1.0 / d_k.sqrt());
    let weights = tape.softmax(scaled, 1)?;
    tape.matmul(weights, v)
}

/// Multi-head attention with per-head column slices of shared Q/K/V
/// projections, concatenated and projected by `W^O`. Self-attention is the
/// `x_q == x_kv` case; cross-attention feeds two different token sets.
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub num_heads: usize,
}

impl MultiHeadAttention {
    pub fn new(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_model: usize,
        num_heads: usize,
    ) -> Self {
        MultiHeadAttention {
            wq: Linear::new(params, rng, &format!("{name}.q"), d_model, d_model),
            wk: Linear::new(params, rng, &format!("{name}.k"), d_model, d_model),
            wv: Linear::new(params, rng, &format!("{name}.v"), d_model, d_model),
            wo: Linear::new(params, rng, &format!("{name}.o"), d_model, d_model),
            num_heads,
        }
    }

    /// `pos_q`/`pos_kv` are added to the query/key inputs only (the value
    /// path sees the raw tokens). `key_mask[j] == false` removes key `j`
    /// from every query's attention.
    pub fn forward(
        &self,
        g: &mut Graph,
        x_q: Var,
        x_kv: Var,
        pos_q: Option<Var>,
        pos_kv: Option<Var>,
        key_mask: Option<&[bool]>,
    ) -> Result<Var> {
        let d_model = self.wq.in_dim;
        let qs = g.tape.shape(x_q).to_vec();
        let ks = g.tape.shape(x_kv).to_vec();
        if qs.last() != Some(&d_model) || ks.last() != Some(&d_model) {
            return Err(Error::ShapeMismatch {
                op: "multi_head_attention",
                lhs: qs,
                rhs: ks,
            });
        }
        let (lq, lk) = (qs[0], ks[0]);
        let q_in = match pos_q {
            Some(p) => g.tape.add(x_q, p)?,
            None => x_q,
        };
        let k_in = match pos_kv {
            Some(p) => g.tape.add(x_kv, p)?,
            None => x_kv,
        };
        let q = self.wq.forward(g, q_in)?;
        let k = self.wk.forward(g, k_in)?;
        let v = self.wv.forward(g, x_kv)?;

        let mask_var = match key_mask {
            Some(mask) => {
                if mask.len() != lk {
                    return Err(Error::invalid(format!(
                        "key mask length {} does not match {} keys",
                        mask.len(),
                        lk
                    )));
                }
                let mut m = vec![0.0; lq * lk];
                for (j, &real) in mask.iter().enumerate() {
                    if !real {
                        for i in 0..lq {
                            m[i * lk + j] = -1e9;
                        }
                    }
                }
                Some(g.tape.constant(&Tensor::new(vec![lq, lk], m)?))
            }
            None => None,
        };

        let d_k = d_model / self.num_heads;
        let mut heads = Vec::with_capacity(self.num_heads);
        for h in 0..self.num_heads {
            let qh = g.tape.slice_cols(q, h * d_k, d_k)?;
            let kh = g.tape.slice_cols(k, h * d_k, d_k)?;
            let vh = g.tape.slice_cols(v, h * d_k, d_k)?;
            let kt = g.tape.transpose(kh)?;
            let logits = g.tape.matmul(qh, kt)?;
            let mut scaled = g.tape.scale(logits, 1.0 / (d_k as f64).sqrt());
            if let Some(m) = mask_var {
                scaled = g.tape.add(scaled, m)?;
            }
            let weights = g.tape.softmax(scaled, 1)?;
            let weights = g.dropout(weights)?;
            heads.push(g.tape.matmul(weights, vh)?);
        }
        let concat = g.tape.concat_cols(&heads)?;
        self.wo.forward(g, concat)
    }
}

/// One residual encoder block: attention then feed-forward, each sub-layer
/// wrapped as `LN(x + Sublayer(x))` (post-norm).
pub struct EncoderBlock {
    pub attn: MultiHeadAttention,
    pub ffn: FeedForward,
    pub ln1: LayerNorm,
    pub ln2: LayerNorm,
}

impl EncoderBlock {
    pub fn new(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &AttentionConfig,
    ) -> Self {
        EncoderBlock {
            attn: MultiHeadAttention::new(
                params,
                rng,
                &format!("{name}.attn"),
                cfg.d_model,
                cfg.num_heads,
            ),
            ffn: FeedForward::new(params, rng, &format!("{name}.ffn"), cfg.d_model, cfg.ffn_hidden),
            ln1: LayerNorm::new(params, &format!("{name}.ln1"), cfg.d_model),
            ln2: LayerNorm::new(params, &format!("{name}.ln2"), cfg.d_model),
        }
    }

    /// Self-attention when `x_cross` is `None`, cross-attention otherwise.
    /// Positional encodings are supplied by the caller.
    pub fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        x_cross: Option<Var>,
        pos_q: Option<Var>,
        pos_kv: Option<Var>,
        key_mask: Option<&[bool]>,
    ) -> Result<Var> {
        let kv = x_cross.unwrap_or(x);
        let attn_out = self.attn.forward(g, x, kv, pos_q, pos_kv, key_mask)?;
        let attn_out = g.dropout(attn_out)?;
        let sum1 = g.tape.add(x, attn_out)?;
        let x1 = self.ln1.forward(g, sum1)?;
        let ffn_out = self.ffn.forward(g, x1)?;
        let ffn_out = g.dropout(ffn_out)?;
        let sum2 = g.tape.add(x1, ffn_out)?;
        self.ln2.forward(g, sum2)
    }
}

/// Fixed sinusoidal positional encoding `[length, d_model]`, interleaved
/// sin/cos at geometric frequencies with base 10000.
pub fn sine_positional_encoding(length: usize, d_model: usize) -> Result<Tensor> {
    if d_model % 2 != 0 {
        return Err(Error::config(format!(
            "sine positional encoding needs an even width, got {d_model}"
        )));
    }
    let mut data = vec![0.0; length * d_model];
    for pos in 0..length {
        for i in 0..d_model / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            let angle = pos as f64 * freq;
            data[pos * d_model + 2 * i] = angle.sin();
            data[pos * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(vec![length, d_model], data)
}
