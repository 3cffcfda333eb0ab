//! Visual branch: a strided convolutional stem (trainable stand-in for a
//! pretrained backbone, same stride-8 / fixed-width interface) feeding a
//! two-stream transformer. Each encoder repeat self-attends both streams
//! and cross-attends each into the other; a cross-attention decoder fuses
//! template evidence into the search stream, and a short convolution chain
//! projects the result to the fused-token grid.
//!
//! Images and feature maps are token matrices: `[height*width, channels]`
//! row-major, one row per pixel or grid cell.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{sine_positional_encoding, xavier_uniform, AttentionConfig, EncoderBlock};
use crate::tensor::{Graph, ParamId, ParamSet, Tensor, Var};

/// Conventional natural-image per-channel normalization constants.
pub const CHANNEL_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const CHANNEL_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// A normalized RGB raster: `pixels` is `[height*width, 3]`.
#[derive(Clone, Debug)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub pixels: Tensor,
}

impl ImageTensor {
    /// Normalize interleaved RGB values in `[0, 1]` by the fixed
    /// per-channel mean and standard deviation.
    pub fn from_rgb(height: usize, width: usize, rgb: &[f64]) -> Result<Self> {
        if rgb.len() != height * width * 3 {
            return Err(Error::invalid(format!(
                "rgb buffer length {} does not match {height}x{width}x3",
                rgb.len()
            )));
        }
        if rgb.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image contains non-finite values".to_string()));
        }
        let data: Vec<f64> = rgb
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - CHANNEL_MEAN[i % 3]) / CHANNEL_STD[i % 3])
            .collect();
        Ok(ImageTensor {
            height,
            width,
            pixels: Tensor::new(vec![height * width, 3], data)?,
        })
    }
}

/// How the projection chain reduces the search map to the fused grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PostConvMode {
    /// Unpadded convolutions; each one shrinks the side by `kernel - 1`.
    Valid,
    /// Padding-preserving convolutions followed by a center crop to the
    /// given side.
    SameCrop(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisualConfig {
    /// Search crop side in pixels.
    pub search_size: usize,
    /// Template crop side in pixels.
    pub template_size: usize,
    pub stem_stride: usize,
    /// Feature width of every visual token.
    pub channels: usize,
    /// Encoder repeats; each repeat is two self blocks plus two cross blocks.
    pub encoder_repeats: usize,
    pub encoder_heads: usize,
    pub decoder_heads: usize,
    pub ffn_hidden: usize,
    pub dropout: f64,
    pub post_conv_count: usize,
    pub post_conv_kernel: usize,
    pub post_conv_mode: PostConvMode,
    /// Re-add positional encodings at every layer's query/key (`true`) or
    /// only before the first layer (`false`).
    pub pos_each_layer: bool,
}

impl VisualConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stem_stride == 0 || !self.stem_stride.is_power_of_two() {
            return Err(Error::config(format!(
                "stem stride must be a power of two, got {}",
                self.stem_stride
            )));
        }
        for (name, size) in [("search", self.search_size), ("template", self.template_size)] {
            if size == 0 || size % self.stem_stride != 0 {
                return Err(Error::config(format!(
                    "{name} size {size} is not divisible by stem stride {}",
                    self.stem_stride
                )));
            }
        }
        AttentionConfig::new(self.channels, self.encoder_heads, self.ffn_hidden, self.dropout)?;
        AttentionConfig::new(self.channels, self.decoder_heads, self.ffn_hidden, self.dropout)?;
        if self.post_conv_kernel % 2 == 0 {
            return Err(Error::config("projection kernel must be odd"));
        }
        let side = self.search_map_side();
        let out = self.projected_side()?;
        if out == 0 || out > side {
            return Err(Error::config(format!(
                "projection chain leaves no spatial extent ({side} -> {out})"
            )));
        }
        Ok(())
    }

    /// Side of the stem output grid for the search crop.
    pub fn search_map_side(&self) -> usize {
        self.search_size / self.stem_stride
    }

    pub fn template_map_side(&self) -> usize {
        self.template_size / self.stem_stride
    }

    /// Search token count out of the stem / transformer (`N_v`).
    pub fn search_tokens(&self) -> usize {
        self.search_map_side() * self.search_map_side()
    }

    pub fn template_tokens(&self) -> usize {
        self.template_map_side() * self.template_map_side()
    }

    /// Grid side after the projection chain.
    pub fn projected_side(&self) -> Result<usize> {
        match self.post_conv_mode {
            PostConvMode::Valid => {
                let mut side = self.search_map_side() as i64;
                for _ in 0..self.post_conv_count {
                    side -= self.post_conv_kernel as i64 - 1;
                }
                if side <= 0 {
                    return Err(Error::config(format!(
                        "unpadded projection chain exhausts the {}-cell map",
                        self.search_map_side()
                    )));
                }
                Ok(side as usize)
            }
            PostConvMode::SameCrop(crop) => {
                if crop == 0 || crop > self.search_map_side() {
                    return Err(Error::config(format!(
                        "crop side {crop} exceeds map side {}",
                        self.search_map_side()
                    )));
                }
                Ok(crop)
            }
        }
    }

    /// Projected token count (`N_v'`), the visual share of the fused grid.
    pub fn projected_tokens(&self) -> Result<usize> {
        let side = self.projected_side()?;
        Ok(side * side)
    }

    /// Pixel coordinates (center of cell) in the search crop for every
    /// projected token, row-major over the projected grid.
    pub fn projected_cell_centers(&self) -> Result<Vec<(f64, f64)>> {
        let side = self.projected_side()?;
        let map_side = self.search_map_side();
        let offset = match self.post_conv_mode {
            // Each unpadded conv trims (kernel-1)/2 cells per border.
            PostConvMode::Valid => self.post_conv_count * (self.post_conv_kernel - 1) / 2,
            PostConvMode::SameCrop(crop) => (map_side - crop) / 2,
        };
        let stride = self.stem_stride as f64;
        let mut centers = Vec::with_capacity(side * side);
        for y in 0..side {
            for x in 0..side {
                let cy = ((y + offset) as f64 + 0.5) * stride;
                let cx = ((x + offset) as f64 + 0.5) * stride;
                centers.push((cx, cy));
            }
        }
        Ok(centers)
    }
}

/// One 2-D convolution over token-matrix feature maps, evaluated as an
/// index gather (im2col) followed by a matrix product.
pub struct Conv {
    w: ParamId,
    b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn new(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let w = params.register(
            format!("{name}.w"),
            xavier_uniform(rng, kernel * kernel * c_in, c_out),
        );
        let b = params.register_no_decay(format!("{name}.b"), Tensor::zeros(vec![c_out]));
        Conv {
            w,
            b,
            c_in,
            c_out,
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_side(&self, side: usize) -> usize {
        (side + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Forward over a square `[side*side, c_in]` map; returns the
    /// `[out*out, c_out]` map.
    pub fn forward(&self, g: &mut Graph, x: Var, side: usize) -> Result<Var> {
        let shape = g.tape.shape(x).to_vec();
        if shape != vec![side * side, self.c_in] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: shape,
                rhs: vec![side * side, self.c_in],
            });
        }
        let out_side = self.out_side(side);
        let k = self.kernel;
        let mut map = Vec::with_capacity(out_side * out_side * k * k * self.c_in);
        for oy in 0..out_side {
            for ox in 0..out_side {
                for ky in 0..k {
                    for kx in 0..k {
                        let y = (oy * self.stride + ky) as i64 - self.pad as i64;
                        let x_pos = (ox * self.stride + kx) as i64 - self.pad as i64;
                        let inside =
                            y >= 0 && y < side as i64 && x_pos >= 0 && x_pos < side as i64;
                        for ci in 0..self.c_in {
                            map.push(if inside {
                                ((y as usize * side + x_pos as usize) * self.c_in + ci) as i64
                            } else {
                                -1
                            });
                        }
                    }
                }
            }
        }
        let cols = g.tape.gather(
            x,
            Rc::new(map),
            vec![out_side * out_side, k * k * self.c_in],
        )?;
        let w = g.p(self.w);
        let b = g.p(self.b);
        let prod = g.tape.matmul(cols, w)?;
        g.tape.add_row(prod, b)
    }
}

struct EncoderRepeat {
    search_self: EncoderBlock,
    template_self: EncoderBlock,
    search_cross: EncoderBlock,
    template_cross: EncoderBlock,
}

/// The full visual branch: stem, two-stream transformer, projection chain.
pub struct VisualBranch {
    pub config: VisualConfig,
    stem: Vec<Conv>,
    repeats: Vec<EncoderRepeat>,
    decoder: EncoderBlock,
    post: Vec<Conv>,
    search_pos: Tensor,
    template_pos: Tensor,
}

impl VisualBranch {
    pub fn new(params: &mut ParamSet, seed: u64, config: VisualConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let halvings = config.stem_stride.trailing_zeros() as usize;
        let mut stem = Vec::with_capacity(halvings);
        let mut c_in = 3;
        for i in 0..halvings {
            let c_out = if i + 1 == halvings {
                config.channels
            } else {
                (config.channels >> (halvings - 1 - i)).max(8)
            };
            stem.push(Conv::new(
                params,
                &mut rng,
                &format!("visual.stem{i}"),
                c_in,
                c_out,
                3,
                2,
                1,
            ));
            c_in = c_out;
        }

        let enc_cfg = AttentionConfig::new(
            config.channels,
            config.encoder_heads,
            config.ffn_hidden,
            config.dropout,
        )?;
        let dec_cfg = AttentionConfig::new(
            config.channels,
            config.decoder_heads,
            config.ffn_hidden,
            config.dropout,
        )?;
        let repeats = (0..config.encoder_repeats)
            .map(|i| EncoderRepeat {
                search_self: EncoderBlock::new(params, &mut rng, &format!("visual.enc{i}.xs"), &enc_cfg),
                template_self: EncoderBlock::new(params, &mut rng, &format!("visual.enc{i}.zs"), &enc_cfg),
                search_cross: EncoderBlock::new(params, &mut rng, &format!("visual.enc{i}.xc"), &enc_cfg),
                template_cross: EncoderBlock::new(params, &mut rng, &format!("visual.enc{i}.zc"), &enc_cfg),
            })
            .collect();
        let decoder = EncoderBlock::new(params, &mut rng, "visual.decoder", &dec_cfg);

        let mut post = Vec::with_capacity(config.post_conv_count);
        let pad = match config.post_conv_mode {
            PostConvMode::Valid => 0,
            PostConvMode::SameCrop(_) => (config.post_conv_kernel - 1) / 2,
        };
        for i in 0..config.post_conv_count {
            post.push(Conv::new(
                params,
                &mut rng,
                &format!("visual.post{i}"),
                config.channels,
                config.channels,
                config.post_conv_kernel,
                1,
                pad,
            ));
        }

        let search_pos = sine_positional_encoding(config.search_tokens(), config.channels)?;
        let template_pos = sine_positional_encoding(config.template_tokens(), config.channels)?;
        Ok(VisualBranch {
            config,
            stem,
            repeats,
            decoder,
            post,
            search_pos,
            template_pos,
        })
    }

    /// Stride-8 feature tokens for any image whose sides divide the stride.
    pub fn stem_forward(&self, g: &mut Graph, image: &ImageTensor) -> Result<Var> {
        if image.height % self.config.stem_stride != 0
            || image.width % self.config.stem_stride != 0
            || image.height != image.width
        {
            return Err(Error::invalid(format!(
                "image {}x{} is not a square multiple of stride {}",
                image.width, image.height, self.config.stem_stride
            )));
        }
        let mut side = image.height;
        let mut x = g.constant(&image.pixels);
        for (i, conv) in self.stem.iter().enumerate() {
            x = conv.forward(g, x, side)?;
            side = conv.out_side(side);
            if i + 1 < self.stem.len() {
                x = g.tape.relu(x);
            }
        }
        Ok(x)
    }

    /// Two-stream transformer: `encoder_repeats` rounds of self + cross
    /// attention, then the decoder cross-attends search over template.
    /// Output length always equals the search token count.
    pub fn transform(&self, g: &mut Graph, search: Var, template: Var) -> Result<Var> {
        let ns = g.tape.shape(search)[0];
        let nz = g.tape.shape(template)[0];
        if ns != self.config.search_tokens() || nz != self.config.template_tokens() {
            return Err(Error::ShapeMismatch {
                op: "visual_transformer",
                lhs: vec![ns, nz],
                rhs: vec![self.config.search_tokens(), self.config.template_tokens()],
            });
        }
        let mut xs = search;
        let mut xz = template;
        let pos_s = g.constant(&self.search_pos);
        let pos_z = g.constant(&self.template_pos);
        if !self.config.pos_each_layer {
            xs = g.tape.add(xs, pos_s)?;
            xz = g.tape.add(xz, pos_z)?;
        }
        let layer_pos = |each: bool, p: Var| if each { Some(p) } else { None };
        let each = self.config.pos_each_layer;
        for rep in &self.repeats {
            xs = rep.search_self.forward(
                g,
                xs,
                None,
                layer_pos(each, pos_s),
                layer_pos(each, pos_s),
                None,
            )?;
            xz = rep.template_self.forward(
                g,
                xz,
                None,
                layer_pos(each, pos_z),
                layer_pos(each, pos_z),
                None,
            )?;
            let new_xs = rep.search_cross.forward(
                g,
                xs,
                Some(xz),
                layer_pos(each, pos_s),
                layer_pos(each, pos_z),
                None,
            )?;
            let new_xz = rep.template_cross.forward(
                g,
                xz,
                Some(xs),
                layer_pos(each, pos_z),
                layer_pos(each, pos_s),
                None,
            )?;
            xs = new_xs;
            xz = new_xz;
        }
        self.decoder.forward(
            g,
            xs,
            Some(xz),
            layer_pos(each, pos_s),
            layer_pos(each, pos_z),
            None,
        )
    }

    /// Projection chain over the square search map, yielding the
    /// `[N_v', channels]` visual features for fusion.
    pub fn project(&self, g: &mut Graph, fused_search: Var) -> Result<Var> {
        let n = g.tape.shape(fused_search)[0];
        let side = (n as f64).sqrt().round() as usize;
        if side * side != n {
            return Err(Error::invalid(format!(
                "projection needs a square map, got {n} tokens"
            )));
        }
        let mut x = fused_search;
        let mut s = side;
        for conv in &self.post {
            x = conv.forward(g, x, s)?;
            s = conv.out_side(s);
        }
        if let PostConvMode::SameCrop(crop) = self.config.post_conv_mode {
            let offset = (s - crop) / 2;
            let c = self.config.channels;
            let mut map = Vec::with_capacity(crop * crop * c);
            for y in 0..crop {
                for x_pos in 0..crop {
                    let src_row = (y + offset) * s + (x_pos + offset);
                    for ci in 0..c {
                        map.push((src_row * c + ci) as i64);
                    }
                }
            }
            x = g.tape.gather(x, Rc::new(map), vec![crop * crop, c])?;
        }
        Ok(x)
    }

    /// Full branch: stem both crops, transform, project.
    pub fn forward(
        &self,
        g: &mut Graph,
        search: &ImageTensor,
        template: &ImageTensor,
    ) -> Result<Var> {
        let search_tokens = self.stem_forward(g, search)?;
        let template_tokens = self.stem_forward(g, template)?;
        let fused = self.transform(g, search_tokens, template_tokens)?;
        self.project(g, fused)
    }

    /// Full branch from precomputed template stem tokens (online tracking
    /// computes those once).
    pub fn forward_with_template_tokens(
        &self,
        g: &mut Graph,
        search: &ImageTensor,
        template_tokens: Var,
    ) -> Result<Var> {
        let search_tokens = self.stem_forward(g, search)?;
        let fused = self.transform(g, search_tokens, template_tokens)?;
        self.project(g, fused)
    }
}

/// Desk-scale defaults: 128/64 crops, width 64, two encoder repeats, and a
/// same-pad projection cropped to a 10x10 grid.
impl Default for VisualConfig {
    fn default() -> Self {
        VisualConfig {
            search_size: 128,
            template_size: 64,
            stem_stride: 8,
            channels: 64,
            encoder_repeats: 2,
            encoder_heads: 4,
            decoder_heads: 8,
            ffn_hidden: 256,
            dropout: 0.1,
            post_conv_count: 3,
            post_conv_kernel: 5,
            post_conv_mode: PostConvMode::SameCrop(10),
            pos_each_layer: true,
        }
    }
}

impl VisualConfig {
    /// Full-scale configuration: 256/128 crops, width 256, four repeats,
    /// three unpadded 5x5 projections (32 -> 20 grid).
    pub fn full_scale() -> Self {
        VisualConfig {
            search_size: 256,
            template_size: 128,
            stem_stride: 8,
            channels: 256,
            encoder_repeats: 4,
            encoder_heads: 8,
            decoder_heads: 8,
            ffn_hidden: 2048,
            dropout: 0.1,
            post_conv_count: 3,
            post_conv_kernel: 5,
            post_conv_mode: PostConvMode::Valid,
            pos_each_layer: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> VisualConfig {
        VisualConfig {
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
            post_conv_mode: PostConvMode::SameCrop(3),
            pos_each_layer: true,
        }
    }

    fn flat_image(side: usize, f: impl Fn(usize, usize, usize) -> f64) -> ImageTensor {
        let mut rgb = Vec::with_capacity(side * side * 3);
        for y in 0..side {
            for x in 0..side {
                for c in 0..3 {
                    rgb.push(f(x, y, c));
                }
            }
        }
        ImageTensor::from_rgb(side, side, &rgb).unwrap()
    }

    #[test]
    fn full_scale_shape_pipeline() {
        let cfg = VisualConfig::full_scale();
        cfg.validate().unwrap();
        assert_eq!(cfg.search_tokens(), 1024);
        assert_eq!(cfg.template_tokens(), 256);
        assert_eq!(cfg.projected_side().unwrap(), 20);
        assert_eq!(cfg.projected_tokens().unwrap(), 400);
    }

    #[test]
    fn desk_shape_pipeline() {
        let cfg = VisualConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.search_tokens(), 256);
        assert_eq!(cfg.projected_tokens().unwrap(), 100);
    }

    #[test]
    fn indivisible_image_is_rejected() {
        let cfg = tiny_config();
        let mut params = ParamSet::new();
        let branch = VisualBranch::new(&mut params, 1, cfg).unwrap();
        let img = flat_image(20, |_, _, _| 0.5); // 20 % 8 != 0
        let mut g = Graph::inference(&params);
        assert!(branch.stem_forward(&mut g, &img).is_err());
    }

    #[test]
    fn projection_chain_exhaustion_is_config_error() {
        let cfg = VisualConfig {
            search_size: 96, // 12x12 map
            post_conv_mode: PostConvMode::Valid,
            post_conv_count: 3,
            post_conv_kernel: 5,
            ..VisualConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn stem_token_counts_follow_stride() {
        let cfg = tiny_config();
        let mut params = ParamSet::new();
        let branch = VisualBranch::new(&mut params, 2, cfg).unwrap();
        let img = flat_image(32, |x, y, c| ((x + y + c) % 7) as f64 / 7.0);
        let mut g = Graph::inference(&params);
        let tokens = branch.stem_forward(&mut g, &img).unwrap();
        assert_eq!(g.tape.shape(tokens), &[16, 8]);
        let tmpl = flat_image(16, |x, _, _| x as f64 / 16.0);
        let t2 = branch.stem_forward(&mut g, &tmpl).unwrap();
        assert_eq!(g.tape.shape(t2), &[4, 8]);
    }

    #[test]
    fn transformer_output_length_is_search_length() {
        let cfg = tiny_config();
        let mut params = ParamSet::new();
        let branch = VisualBranch::new(&mut params, 3, cfg).unwrap();
        let mut g = Graph::inference(&params);
        let s = g.constant(&Tensor::zeros(vec![16, 8]));
        let z = g.constant(&Tensor::zeros(vec![4, 8]));
        let out = branch.transform(&mut g, s, z).unwrap();
        assert_eq!(g.tape.shape(out), &[16, 8]);
    }

    #[test]
    fn zero_repeats_decoder_only_is_legal() {
        let cfg = VisualConfig {
            encoder_repeats: 0,
            ..tiny_config()
        };
        let mut params = ParamSet::new();
        let branch = VisualBranch::new(&mut params, 4, cfg).unwrap();
        let mut g = Graph::inference(&params);
        let s = g.constant(&Tensor::zeros(vec![16, 8]));
        let z = g.constant(&Tensor::zeros(vec![4, 8]));
        let out = branch.transform(&mut g, s, z).unwrap();
        assert_eq!(g.tape.shape(out), &[16, 8]);
    }

    #[test]
    fn identity_kernel_single_conv_center_crops() {
        // A delta kernel at the center of an unpadded convolution copies
        // the interior of the map.
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv::new(&mut params, &mut rng, "c", 2, 2, 3, 1, 0);
        // Build the identity weight: w[(ky*3+kx)*c_in + ci, co] = 1 iff
        // center tap and ci == co.
        let mut w = vec![0.0; 9 * 2 * 2];
        let (ky, kx) = (1, 1);
        for ci in 0..2 {
            let row = (ky * 3 + kx) * 2 + ci;
            w[row * 2 + ci] = 1.0;
        }
        let entries = vec![
            ("c.w".to_string(), Tensor::new(vec![18, 2], w).unwrap()),
            ("c.b".to_string(), Tensor::zeros(vec![2])),
        ];
        params.load_values(&entries).unwrap();

        let side = 4;
        let input = Tensor::new(
            vec![16, 2],
            (0..32).map(|i| i as f64 * 0.1).collect(),
        )
        .unwrap();
        let mut g = Graph::inference(&params);
        let x = g.constant(&input);
        let y = conv.forward(&mut g, x, side).unwrap();
        assert_eq!(g.tape.shape(y), &[4, 2]);
        // Interior rows of the 4x4 map: (1,1), (1,2), (2,1), (2,2).
        for (out_i, src_row) in [(0, 5), (1, 6), (2, 9), (3, 10)] {
            for c in 0..2 {
                let got = g.tape.value(y)[out_i * 2 + c];
                let expect = input.data()[src_row * 2 + c];
                assert!((got - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stem_translation_moves_token_grid_one_cell() {
        let cfg = tiny_config();
        let mut params = ParamSet::new();
        let branch = VisualBranch::new(&mut params, 5, cfg).unwrap();
        let img = flat_image(32, |x, y, c| {
            (((x * 13 + y * 7 + c * 3) % 11) as f64) / 11.0
        });
        // Shift right by one stride: pixel (x, y) of the shifted image is
        // pixel (x - 8, y) of the original.
        let shifted = flat_image(32, |x, y, c| {
            if x >= 8 {
                (((((x - 8) * 13) + y * 7 + c * 3) % 11) as f64) / 11.0
            } else {
                0.0
            }
        });
        let mut g = Graph::inference(&params);
        let base = branch.stem_forward(&mut g, &img).unwrap();
        let moved = branch.stem_forward(&mut g, &shifted).unwrap();
        let (b, m) = (g.tape.value(base).to_vec(), g.tape.value(moved).to_vec());
        // Interior cells (x >= 1 in the 4x4 grid, away from the zero pad
        // border) must match the unshifted grid one cell to the left.
        for y in 0..4 {
            for x in 2..4 {
                let src = y * 4 + (x - 1);
                let dst = y * 4 + x;
                for c in 0..8 {
                    let got = m[dst * 8 + c];
                    let expect = b[src * 8 + c];
                    assert!(
                        (got - expect).abs() < 1e-9,
                        "cell ({x},{y}) ch {c}: {got} vs {expect}"
                    );
                }
            }
        }
    }

    #[test]
    fn end_to_end_gradients_at_tiny_config() {
        let cfg = tiny_config();
        let mut params = ParamSet::new();
        let branch = VisualBranch::new(&mut params, 6, cfg).unwrap();
        let search = flat_image(32, |x, y, _| ((x * y) % 5) as f64 / 5.0);
        let template = flat_image(16, |x, y, _| ((x + y) % 3) as f64 / 3.0);
        let gc = crate::gradcheck::GradCheck::default();
        gc.check_params("visual_branch", &mut params, |g| {
            let out = branch.forward(g, &search, &template)?;
            let sq = g.tape.mul(out, out)?;
            Ok(g.tape.mean(sq))
        })
        .unwrap();
    }

    #[test]
    fn projected_cell_centers_match_geometry() {
        let cfg = VisualConfig::full_scale();
        let centers = cfg.projected_cell_centers().unwrap();
        assert_eq!(centers.len(), 400);
        // First projected cell sits 6 cells in from the border: center at
        // (6 + 0.5) * 8 = 52 pixels.
        assert_eq!(centers[0], (52.0, 52.0));
        let desk = VisualConfig::default();
        let centers = desk.projected_cell_centers().unwrap();
        assert_eq!(centers.len(), 100);
        // (16 - 10) / 2 = 3 cells offset; (3.5) * 8 = 28.
        assert_eq!(centers[0], (28.0, 28.0));
    }
}
