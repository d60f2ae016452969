//! The transformer auto-encoder: linear patch embedding plus learned positions,
//! `L` pre-norm encoder blocks, `L` pre-norm decoder blocks, and a linear head
//! that maps each token back to the pixels of its patch.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamSet, Parameter, Real, Tensor, Var};
use crate::patching::{
    detokenize, extract_windows, pad_to_grid, stitch_windows, tokenize_window, ImageBuffer,
    PatchSequence,
};

/// Named size presets: `(layers per stack, embedding width, heads)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Small,
    Base,
    Large,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Small, Variant::Base, Variant::Large];

    pub fn layers_dim_heads(self) -> (usize, usize, usize) {
        match self {
            Variant::Small => (6, 512, 4),
            Variant::Base => (12, 768, 8),
            Variant::Large => (24, 1024, 16),
        }
    }

    /// Parameter count quoted for the preset alongside its architecture.
    pub fn nominal_params(self) -> &'static str {
        match self {
            Variant::Small => "17M",
            Variant::Base => "68M",
            Variant::Large => "255M",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Small => "small",
            Variant::Base => "base",
            Variant::Large => "large",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "small" => Ok(Variant::Small),
            "base" => Ok(Variant::Base),
            "large" => Ok(Variant::Large),
            _ => Err(Error::InvalidArgument(format!(
                "unknown variant {s:?} (expected small, base or large)"
            ))),
        }
    }
}

/// How decoded tokens become pixel values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputHead {
    /// Plain linear projection; clamped to `[0, 1]` at inference only.
    #[default]
    Linear,
    /// Linear projection followed by a logistic squashing.
    Sigmoid,
}

impl FromStr for OutputHead {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(OutputHead::Linear),
            "sigmoid" => Ok(OutputHead::Sigmoid),
            _ => Err(Error::InvalidArgument(format!("unknown output head {s:?}"))),
        }
    }
}

impl fmt::Display for OutputHead {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputHead::Linear => "linear",
            OutputHead::Sigmoid => "sigmoid",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Blocks per stack; encoder and decoder both have this many.
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub patch_size: usize,
    pub window_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub mlp_ratio: usize,
    pub eps: f64,
    pub output_head: OutputHead,
}

impl ModelConfig {
    /// A config with the default channel layout (RGB in, gray out), MLP ratio
    /// 4 and LayerNorm epsilon 1e-6.
    pub fn new(
        layers: usize,
        dim: usize,
        heads: usize,
        patch_size: usize,
        window_size: usize,
    ) -> Result<Self> {
        let cfg = ModelConfig {
            layers,
            dim,
            heads,
            patch_size,
            window_size,
            in_channels: 3,
            out_channels: 1,
            mlp_ratio: 4,
            eps: 1e-6,
            output_head: OutputHead::Linear,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidArgument(msg));
        if self.layers == 0 || self.dim == 0 || self.heads == 0 || self.mlp_ratio == 0 {
            return fail(format!(
                "layers, dim, heads and mlp_ratio must be >= 1: {self:?}"
            ));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return fail(format!(
                "dim {} not divisible by heads {}",
                self.dim, self.heads
            ));
        }
        if self.patch_size == 0 || !self.window_size.is_multiple_of(self.patch_size) {
            return fail(format!(
                "window {} not divisible by patch {}",
                self.window_size, self.patch_size
            ));
        }
        if !matches!(self.in_channels, 1 | 3) || !matches!(self.out_channels, 1 | 3) {
            return fail("channels must be 1 or 3".into());
        }
        if self.eps <= 0.0 {
            return fail(format!("eps must be > 0, got {}", self.eps));
        }
        Ok(())
    }

    pub fn num_tokens(&self) -> usize {
        let side = self.window_size / self.patch_size;
        side * side
    }

    pub fn token_in_len(&self) -> usize {
        self.patch_size * self.patch_size * self.in_channels
    }

    pub fn token_out_len(&self) -> usize {
        self.patch_size * self.patch_size * self.out_channels
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// The preset this config matches, if its `(L, D, H)` is one of them.
    pub fn matching_variant(&self) -> Option<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.layers_dim_heads() == (self.layers, self.dim, self.heads))
    }

    /// Every weight tensor's name, shape and initialization kind, in the
    /// canonical order.
    pub fn parameter_layout(&self) -> Vec<ParamSpec> {
        let (d, r) = (self.dim, self.dim * self.mlp_ratio);
        let mut out = vec![
            ParamSpec::new("embed_w", &[self.token_in_len(), d], Init::Weight),
            ParamSpec::new("embed_b", &[d], Init::Zero),
            ParamSpec::new("pos_embed", &[self.num_tokens(), d], Init::Position),
        ];
        for stack in [Stack::Encoder, Stack::Decoder] {
            for i in 0..self.layers {
                let name = |s: &str| stack.param(i, s);
                out.extend([
                    ParamSpec::new(&name("ln1_g"), &[d], Init::One),
                    ParamSpec::new(&name("ln1_b"), &[d], Init::Zero),
                    ParamSpec::new(&name("qkv_w"), &[d, 3 * d], Init::Weight),
                    ParamSpec::new(&name("qkv_b"), &[3 * d], Init::Zero),
                    ParamSpec::new(&name("attn_out_w"), &[d, d], Init::Weight),
                    ParamSpec::new(&name("attn_out_b"), &[d], Init::Zero),
                    ParamSpec::new(&name("ln2_g"), &[d], Init::One),
                    ParamSpec::new(&name("ln2_b"), &[d], Init::Zero),
                    ParamSpec::new(&name("mlp1_w"), &[d, r], Init::Weight),
                    ParamSpec::new(&name("mlp1_b"), &[r], Init::Zero),
                    ParamSpec::new(&name("mlp2_w"), &[r, d], Init::Weight),
                    ParamSpec::new(&name("mlp2_b"), &[d], Init::Zero),
                ]);
            }
            let tag = stack.final_norm();
            out.push(ParamSpec::new(&format!("{tag}_g"), &[d], Init::One));
            out.push(ParamSpec::new(&format!("{tag}_b"), &[d], Init::Zero));
        }
        out.push(ParamSpec::new(
            "proj_w",
            &[d, self.token_out_len()],
            Init::Weight,
        ));
        out.push(ParamSpec::new(
            "proj_b",
            &[self.token_out_len()],
            Init::Zero,
        ));
        out
    }

    /// Total parameter count, computed from shapes only.
    pub fn param_count(&self) -> usize {
        self.parameter_layout()
            .iter()
            .map(|p| p.shape.iter().product::<usize>())
            .sum()
    }
}

/// Preset `(L, D, H)` with the caller's patch and window sizes.
pub fn variant(name: &str, patch_size: usize, window_size: usize) -> Result<ModelConfig> {
    let (layers, dim, heads) = name.parse::<Variant>()?.layers_dim_heads();
    ModelConfig::new(layers, dim, heads, patch_size, window_size)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Truncated normal, std 0.02, cut at ±2σ; weight decay applies.
    Weight,
    /// Same draw as `Weight`, exempt from weight decay.
    Position,
    Zero,
    One,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    fn new(name: &str, shape: &[usize], init: Init) -> Self {
        ParamSpec {
            name: name.to_string(),
            shape: shape.to_vec(),
            init,
        }
    }

    /// Whether weight decay applies (matrices only).
    pub fn decays(&self) -> bool {
        self.init == Init::Weight
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stack {
    Encoder,
    Decoder,
}

impl Stack {
    fn param(self, block: usize, suffix: &str) -> String {
        let tag = match self {
            Stack::Encoder => "enc",
            Stack::Decoder => "dec",
        };
        format!("{tag}.{block}.{suffix}")
    }

    fn final_norm(self) -> &'static str {
        match self {
            Stack::Encoder => "final_ln_enc",
            Stack::Decoder => "final_ln_dec",
        }
    }
}

fn truncated_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    loop {
        // Box–Muller; one of the pair is enough.
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

/// Which encoder attention matrices to keep during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceRequest {
    Off,
    All,
    Layer(usize),
}

impl TraceRequest {
    fn wants(self, layer: usize) -> bool {
        match self {
            TraceRequest::Off => false,
            TraceRequest::All => true,
            TraceRequest::Layer(l) => l == layer,
        }
    }
}

/// One head's softmax attention over a window's tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub layer: usize,
    pub head: usize,
    /// `[N, N]`, rows are query tokens.
    pub matrix: Tensor<f32>,
    pub patch_size: usize,
    pub window_size: usize,
}

impl AttentionTrace {
    pub fn grid_side(&self) -> usize {
        self.window_size / self.patch_size
    }

    pub fn row(&self, query: usize) -> &[f32] {
        let n = self.matrix.shape()[1];
        &self.matrix.data()[query * n..(query + 1) * n]
    }

    /// Row reshaped to the patch grid, min-max normalized (a constant row
    /// maps to 0.5) and upsampled by nearest neighbour to the window size.
    pub fn render(&self, query: usize) -> ImageBuffer {
        let row = self.row(query);
        let (lo, hi) = row
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        let norm = |v: f32| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
        let (side, p) = (self.grid_side(), self.patch_size);
        ImageBuffer::from_fn(self.window_size, self.window_size, 1, |y, x, _| {
            norm(row[(y / p) * side + x / p])
        })
        .expect("attention map dimensions are valid")
    }
}

/// Graph handles produced by [`ModelWeights::forward_graph`].
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// Unclamped per-token pixel predictions, `[B, N, p²·Cout]`.
    pub output: Var,
    /// `(layer, [B, H, N, N])` for each traced encoder layer.
    pub attention: Vec<(usize, Var)>,
}

/// Model configuration plus its named parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T = f32> {
    config: ModelConfig,
    params: ParamSet<T>,
}

/// Fresh weights: truncated-normal matrices and positions, zero biases, unit
/// LayerNorm gains. Deterministic in `seed`.
pub fn init_model(cfg: &ModelConfig, seed: u64) -> Result<ModelWeights<f32>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    for spec in cfg.parameter_layout() {
        let n = spec.shape.iter().product();
        let data = match spec.init {
            Init::Weight | Init::Position => (0..n)
                .map(|_| truncated_normal(&mut rng, 0.02) as f32)
                .collect(),
            Init::Zero => vec![0.0; n],
            Init::One => vec![1.0; n],
        };
        let decay = spec.decays();
        params.push(Parameter::new(
            spec.name,
            Tensor::new(&spec.shape, data)?,
            decay,
        ))?;
    }
    Ok(ModelWeights {
        config: cfg.clone(),
        params,
    })
}

impl<T: Real> ModelWeights<T> {
    /// Wraps an existing parameter set after checking it against the layout.
    pub fn from_params(config: ModelConfig, params: ParamSet<T>) -> Result<Self> {
        config.validate()?;
        let layout = config.parameter_layout();
        if layout.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "config expects {} tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        for (spec, p) in layout.iter().zip(params.iter()) {
            if spec.name != p.name {
                return Err(Error::InvalidArgument(format!(
                    "expected tensor {:?}, found {:?}",
                    spec.name, p.name
                )));
            }
            if spec.shape != p.value.shape() {
                return Err(Error::shape("weights", &spec.shape, p.value.shape()));
            }
        }
        Ok(ModelWeights { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    pub fn cast<U: Real>(&self) -> ModelWeights<U> {
        ModelWeights {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    fn leaf(&self, g: &mut Graph<T>, name: &str) -> Result<Var> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name:?}")))?;
        Ok(g.param(&self.params, id))
    }

    /// Patch embedding plus positions: `tokens·embed_w + embed_b + pos_embed`.
    pub fn embed_graph(&self, g: &mut Graph<T>, tokens: Var) -> Result<Var> {
        let (w, b, pos) = (
            self.leaf(g, "embed_w")?,
            self.leaf(g, "embed_b")?,
            self.leaf(g, "pos_embed")?,
        );
        let x = g.linear(tokens, w, b)?;
        g.add(x, pos)
    }

    /// One pre-norm block: `u = x + MSA(LN(x))`, `out = u + MLP(LN(u))`.
    /// Returns the block output and, when asked, the attention `[B,H,N,N]`.
    pub fn block_graph(
        &self,
        g: &mut Graph<T>,
        x: Var,
        stack: Stack,
        index: usize,
    ) -> Result<(Var, Var)> {
        let cfg = &self.config;
        let (d, heads) = (cfg.dim, cfg.heads);
        let eps = T::of(cfg.eps);
        let p = |g: &mut Graph<T>, s: &str| self.leaf(g, &stack.param(index, s));

        let (g1, b1) = (p(g, "ln1_g")?, p(g, "ln1_b")?);
        let h = g.layer_norm(x, g1, b1, eps)?;
        let (wqkv, bqkv) = (p(g, "qkv_w")?, p(g, "qkv_b")?);
        let qkv = g.linear(h, wqkv, bqkv)?;
        let q = g.slice_last(qkv, 0, d)?;
        let k = g.slice_last(qkv, d, d)?;
        let v = g.slice_last(qkv, 2 * d, d)?;
        let q = g.split_heads(q, heads)?;
        let k = g.split_heads(k, heads)?;
        let v = g.split_heads(v, heads)?;
        let q = g.scale(q, T::of(1.0 / (cfg.head_dim() as f64).sqrt()))?;
        let kt = g.transpose_last2(k)?;
        let scores = g.matmul(q, kt)?;
        let rank = g.value(scores).rank();
        let attn = g.softmax(scores, rank - 1)?;
        let ctx = g.matmul(attn, v)?;
        let ctx = g.merge_heads(ctx)?;
        let (wo, bo) = (p(g, "attn_out_w")?, p(g, "attn_out_b")?);
        let msa = g.linear(ctx, wo, bo)?;
        let u = g.add(x, msa)?;

        let (g2, b2) = (p(g, "ln2_g")?, p(g, "ln2_b")?);
        let h = g.layer_norm(u, g2, b2, eps)?;
        let (w1, bb1) = (p(g, "mlp1_w")?, p(g, "mlp1_b")?);
        let h = g.linear(h, w1, bb1)?;
        let h = g.gelu(h)?;
        let (w2, bb2) = (p(g, "mlp2_w")?, p(g, "mlp2_b")?);
        let h = g.linear(h, w2, bb2)?;
        Ok((g.add(u, h)?, attn))
    }

    /// `L` blocks followed by the stack's final LayerNorm.
    pub fn stack_graph(
        &self,
        g: &mut Graph<T>,
        mut x: Var,
        stack: Stack,
        trace: TraceRequest,
    ) -> Result<(Var, Vec<(usize, Var)>)> {
        let mut traces = Vec::new();
        for i in 0..self.config.layers {
            let (out, attn) = self.block_graph(g, x, stack, i)?;
            if trace.wants(i) {
                traces.push((i, attn));
            }
            x = out;
        }
        let tag = stack.final_norm();
        let (gn, bn) = (
            self.leaf(g, &format!("{tag}_g"))?,
            self.leaf(g, &format!("{tag}_b"))?,
        );
        Ok((g.layer_norm(x, gn, bn, T::of(self.config.eps))?, traces))
    }

    /// Linear pixel projection (plus the optional sigmoid).
    pub fn project_graph(&self, g: &mut Graph<T>, decoded: Var) -> Result<Var> {
        let (w, b) = (self.leaf(g, "proj_w")?, self.leaf(g, "proj_b")?);
        let y = g.linear(decoded, w, b)?;
        match self.config.output_head {
            OutputHead::Linear => Ok(y),
            OutputHead::Sigmoid => g.sigmoid(y),
        }
    }

    /// Full auto-encoder on `tokens` of shape `[B, N, p²·Cin]` (or `[N, ·]`).
    /// The decoder consumes the encoder output directly; positions are added
    /// once, at the encoder input.
    pub fn forward_graph(
        &self,
        g: &mut Graph<T>,
        tokens: Var,
        trace: TraceRequest,
    ) -> Result<ForwardVars> {
        let cfg = &self.config;
        let shape = g.value(tokens).shape();
        let (n, len) = (
            shape[shape.len().saturating_sub(2)],
            *shape.last().unwrap_or(&0),
        );
        if shape.len() < 2 || n != cfg.num_tokens() || len != cfg.token_in_len() {
            return Err(Error::shape(
                "model input",
                shape,
                &[cfg.num_tokens(), cfg.token_in_len()],
            ));
        }
        let x = self.embed_graph(g, tokens)?;
        let (latent, attention) = self.stack_graph(g, x, Stack::Encoder, trace)?;
        let (decoded, _) = self.stack_graph(g, latent, Stack::Decoder, TraceRequest::Off)?;
        let output = self.project_graph(g, decoded)?;
        Ok(ForwardVars { output, attention })
    }

    /// Stacks windows into the `[B, N, p²·Cin]` model input, converting
    /// channel count to the configured input channels.
    pub fn input_tokens(&self, windows: &[&ImageBuffer]) -> Result<Tensor<T>> {
        self.stack_tokens(windows, self.config.in_channels)
    }

    /// Stacks GT windows into `[B, N, p²·Cout]` regression targets.
    pub fn target_tokens(&self, windows: &[&ImageBuffer]) -> Result<Tensor<T>> {
        self.stack_tokens(windows, self.config.out_channels)
    }

    fn stack_tokens(&self, windows: &[&ImageBuffer], channels: usize) -> Result<Tensor<T>> {
        let cfg = &self.config;
        if windows.is_empty() {
            return Err(Error::InvalidArgument("no windows".into()));
        }
        let mut data = Vec::new();
        for w in windows {
            if w.height() != cfg.window_size || w.width() != cfg.window_size {
                return Err(Error::shape(
                    "window",
                    &[w.height(), w.width()],
                    &[cfg.window_size, cfg.window_size],
                ));
            }
            let converted = match channels {
                1 => w.to_gray(),
                _ => w.to_rgb(),
            };
            let seq = tokenize_window(&converted, cfg.patch_size)?;
            data.extend(seq.tokens.iter().map(|&v| T::of(v as f64)));
        }
        let len = cfg.patch_size * cfg.patch_size * channels;
        Tensor::new(&[windows.len(), cfg.num_tokens(), len], data)
    }
}

/// Single-window, gradient-free entry points on `f32` weights.
impl ModelWeights<f32> {
    fn seq_input(&self, seq: &PatchSequence) -> Result<Tensor<f32>> {
        let cfg = &self.config;
        if seq.patch_size != cfg.patch_size
            || seq.window_size != cfg.window_size
            || seq.channels != cfg.in_channels
        {
            return Err(Error::shape(
                "patch sequence",
                &[seq.window_size, seq.patch_size, seq.channels],
                &[cfg.window_size, cfg.patch_size, cfg.in_channels],
            ));
        }
        Tensor::new(&[cfg.num_tokens(), cfg.token_in_len()], seq.tokens.clone())
    }

    /// Embedded tokens `[N, D]`.
    pub fn embed(&self, seq: &PatchSequence) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let x = g.input(self.seq_input(seq)?);
        let y = self.embed_graph(&mut g, x)?;
        Ok(g.value(y).clone())
    }

    /// One block on `[N, D]` tokens.
    pub fn block_forward(
        &self,
        x: &Tensor<f32>,
        stack: Stack,
        index: usize,
    ) -> Result<Tensor<f32>> {
        if index >= self.config.layers {
            return Err(Error::InvalidArgument(format!(
                "block {index} out of range"
            )));
        }
        let mut g = Graph::new();
        let x = g.input(x.clone());
        let (y, _) = self.block_graph(&mut g, x, stack, index)?;
        Ok(g.value(y).clone())
    }

    /// Encoder stack on `[N, D]`; with `trace` every layer's per-head
    /// attention is returned (`L·H` traces).
    pub fn encoder_forward(
        &self,
        x: &Tensor<f32>,
        trace: bool,
    ) -> Result<(Tensor<f32>, Vec<AttentionTrace>)> {
        let mut g = Graph::new();
        let x = g.input(x.clone());
        let req = if trace {
            TraceRequest::All
        } else {
            TraceRequest::Off
        };
        let (y, attn) = self.stack_graph(&mut g, x, Stack::Encoder, req)?;
        let traces = self.collect_traces(&g, &attn, 0)?;
        Ok((g.value(y).clone(), traces))
    }

    pub fn decoder_forward(&self, latent: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let x = g.input(latent.clone());
        let (y, _) = self.stack_graph(&mut g, x, Stack::Decoder, TraceRequest::Off)?;
        Ok(g.value(y).clone())
    }

    /// Pixel projection of decoded `[N, D]` tokens; `clamp` applies the
    /// inference-time `[0, 1]` clamp.
    pub fn project_output(&self, decoded: &Tensor<f32>, clamp: bool) -> Result<PatchSequence> {
        let mut g = Graph::new();
        let x = g.input(decoded.clone());
        let y = self.project_graph(&mut g, x)?;
        let mut tokens = g.value(y).data().to_vec();
        if clamp {
            tokens.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        }
        let cfg = &self.config;
        PatchSequence::new(tokens, cfg.patch_size, cfg.window_size, cfg.out_channels)
    }

    /// Enhances a batch of windows; outputs are `S×S×Cout`, clamped.
    pub fn forward_windows(&self, windows: &[&ImageBuffer]) -> Result<Vec<ImageBuffer>> {
        let cfg = &self.config;
        let mut g = Graph::new();
        let x = g.input(self.input_tokens(windows)?);
        let fwd = self.forward_graph(&mut g, x, TraceRequest::Off)?;
        let per_window = cfg.num_tokens() * cfg.token_out_len();
        g.value(fwd.output)
            .data()
            .chunks_exact(per_window)
            .map(|chunk| {
                let tokens = chunk.iter().map(|v| v.clamp(0.0, 1.0)).collect();
                detokenize(&PatchSequence::new(
                    tokens,
                    cfg.patch_size,
                    cfg.window_size,
                    cfg.out_channels,
                )?)
            })
            .collect()
    }

    pub fn forward_window(&self, window: &ImageBuffer) -> Result<ImageBuffer> {
        Ok(self.forward_windows(&[window])?.remove(0))
    }

    /// Per-head encoder attention for one window at the requested layers.
    pub fn window_attention(
        &self,
        window: &ImageBuffer,
        trace: TraceRequest,
    ) -> Result<Vec<AttentionTrace>> {
        let mut g = Graph::new();
        let x = g.input(self.input_tokens(&[window])?);
        let fwd = self.forward_graph(&mut g, x, trace)?;
        self.collect_traces(&g, &fwd.attention, 0)
    }

    fn collect_traces(
        &self,
        g: &Graph<f32>,
        attn: &[(usize, Var)],
        batch: usize,
    ) -> Result<Vec<AttentionTrace>> {
        let cfg = &self.config;
        let n = cfg.num_tokens();
        let mut out = Vec::new();
        for &(layer, v) in attn {
            let data = g.value(v).data();
            for head in 0..cfg.heads {
                let start = (batch * cfg.heads + head) * n * n;
                out.push(AttentionTrace {
                    layer,
                    head,
                    matrix: Tensor::new(&[n, n], data[start..start + n * n].to_vec())?,
                    patch_size: cfg.patch_size,
                    window_size: cfg.window_size,
                });
            }
        }
        Ok(out)
    }

    /// Attention maps of `query_tokens` at encoder `layer`/`head`, each
    /// rendered as an `S×S` grayscale image.
    pub fn attention_maps(
        &self,
        window: &ImageBuffer,
        layer: usize,
        head: usize,
        query_tokens: &[usize],
    ) -> Result<Vec<ImageBuffer>> {
        let cfg = &self.config;
        if layer >= cfg.layers {
            return Err(Error::InvalidArgument(format!(
                "layer {layer} out of range (model has {})",
                cfg.layers
            )));
        }
        if head >= cfg.heads {
            return Err(Error::InvalidArgument(format!(
                "head {head} out of range (model has {})",
                cfg.heads
            )));
        }
        if let Some(&t) = query_tokens.iter().find(|&&t| t >= cfg.num_tokens()) {
            return Err(Error::InvalidArgument(format!(
                "token {t} out of range (window has {} tokens)",
                cfg.num_tokens()
            )));
        }
        let traces = self.window_attention(window, TraceRequest::Layer(layer))?;
        let trace = &traces[head];
        Ok(query_tokens.iter().map(|&t| trace.render(t)).collect())
    }

    /// Default map selection: last encoder layer, second head.
    pub fn default_attention_target(&self) -> (usize, usize) {
        (self.config.layers - 1, 1.min(self.config.heads - 1))
    }

    /// Whole-page inference: pad to the half-overlap grid, enhance windows
    /// `batch` at a time, average overlaps and crop back to the page size.
    pub fn enhance_page(&self, page: &ImageBuffer, batch: usize) -> Result<ImageBuffer> {
        let (padded, grid) = pad_to_grid(page, self.config.window_size)?;
        let windows = extract_windows(&padded, &grid)?;
        let mut outputs = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(batch.max(1)) {
            let refs: Vec<_> = chunk.iter().collect();
            outputs.extend(self.forward_windows(&refs)?);
        }
        stitch_windows(&outputs, &grid)
    }
}
