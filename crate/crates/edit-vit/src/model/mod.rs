//! Model parameters, construction, and the forward/accounting/checkpoint
//! submodules.
//!
//! Two architectures share most of their structure. [`EditModel`] runs a
//! class-token-free encoder over patch tokens and pools them with a shared
//! single-head cross-attention decoder, one decoder step per encoder layer.
//! [`BaselineVitModel`] is the conventional variant: the class token rides
//! inside the encoder sequence and the head reads its final state.

mod accounting;
mod checkpoint;
mod forward;

pub use accounting::{count_params, estimate_macs, Breakdown, BreakdownItem};
pub use checkpoint::{
    checkpoint_bytes, decode_records, encode_records, load_checkpoint, load_checkpoint_bytes,
    model_from_records, save_checkpoint, CheckpointError, TensorRecord, FORMAT_VERSION,
};
pub use forward::{
    baseline_graph, decoder_layer, embed_patches, encoder_layer, multi_head_self_attention,
    patchify, softmax_vec, BaselineGraph, BaselineNodes, DecoderNodes, EditGraph, EditNodes,
    EncoderLayerNodes, LinearNodes, NormNodes, ResidualDrops,
};
pub use forward::edit_graph;

use crate::attention::AttentionRecord;
use crate::config::{ConfigError, DecoderLayout, ModelConfig};
use crate::tape::TapeError;
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Epsilon inside every layer-norm square root.
pub const LAYER_NORM_EPS: f32 = 1e-6;

/// Standard deviation of the truncated-normal initializer.
pub const INIT_STD: f32 = 0.02;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error("image geometry {actual_h}x{actual_w}x{actual_c} does not match configured {expected_h}x{expected_w}x{expected_c}")]
    Geometry {
        expected_h: usize,
        expected_w: usize,
        expected_c: usize,
        actual_h: usize,
        actual_w: usize,
        actual_c: usize,
    },
}

/// Whether a forward pass applies training-time stochastic behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Edit,
    Baseline,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Edit => "edit",
            ModelKind::Baseline => "baseline",
        }
    }
}

/// Result of one forward pass, with the tape already discarded.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Vec<f32>,
    pub probabilities: Vec<f32>,
    pub attention: Vec<AttentionRecord>,
    /// Patch-token states per stage: index 0 is the embedding output, index i
    /// the output of encoder layer i. Each entry is n*d row-major.
    pub patch_states: Vec<Vec<f32>>,
    /// Class state per stage, same indexing, each entry length d.
    pub cls_states: Vec<Vec<f32>>,
}

impl ForwardOutput {
    pub fn predicted_class(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.logits.iter().enumerate() {
            if v > self.logits[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNormParams {
    fn new(dim: usize) -> Self {
        LayerNormParams {
            gamma: Tensor::filled(vec![dim], 1.0).with_requires_grad(),
            beta: Tensor::zeros(vec![dim]).with_requires_grad(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearParams {
    /// Row-major [in, out]; applied as x @ weight.
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearParams {
    fn init(inp: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        LinearParams {
            weight: trunc_normal(vec![inp, out], rng),
            bias: Tensor::zeros(vec![out]).with_requires_grad(),
        }
    }

    fn zeroed(inp: usize, out: usize) -> Self {
        LinearParams {
            weight: Tensor::zeros(vec![inp, out]).with_requires_grad(),
            bias: Tensor::zeros(vec![out]).with_requires_grad(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayerParams {
    pub norm1: LayerNormParams,
    pub w_q: LinearParams,
    pub w_k: LinearParams,
    pub w_v: LinearParams,
    pub w_o: LinearParams,
    pub norm2: LayerNormParams,
    pub ffn_w1: LinearParams,
    pub ffn_w2: LinearParams,
}

impl EncoderLayerParams {
    fn init(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        EncoderLayerParams {
            norm1: LayerNormParams::new(dim),
            w_q: LinearParams::init(dim, dim, rng),
            w_k: LinearParams::init(dim, dim, rng),
            w_v: LinearParams::init(dim, dim, rng),
            w_o: LinearParams::init(dim, dim, rng),
            norm2: LayerNormParams::new(dim),
            ffn_w1: LinearParams::init(dim, 4 * dim, rng),
            ffn_w2: LinearParams::init(4 * dim, dim, rng),
        }
    }

    fn zeroed(dim: usize) -> Self {
        EncoderLayerParams {
            norm1: LayerNormParams::new(dim),
            w_q: LinearParams::zeroed(dim, dim),
            w_k: LinearParams::zeroed(dim, dim),
            w_v: LinearParams::zeroed(dim, dim),
            w_o: LinearParams::zeroed(dim, dim),
            norm2: LayerNormParams::new(dim),
            ffn_w1: LinearParams::zeroed(dim, 4 * dim),
            ffn_w2: LinearParams::zeroed(4 * dim, dim),
        }
    }
}

/// The single parameter set every decoder layer references.
///
/// Projections carry no biases. The query and output projections exist only
/// under the `Qkvo` layout.
#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub norm: LayerNormParams,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_q: Option<Tensor>,
    pub w_o: Option<Tensor>,
}

impl DecoderParams {
    fn init(dim: usize, layout: DecoderLayout, rng: &mut ChaCha8Rng) -> Self {
        let qkvo = layout == DecoderLayout::Qkvo;
        DecoderParams {
            norm: LayerNormParams::new(dim),
            w_k: trunc_normal(vec![dim, dim], rng),
            w_v: trunc_normal(vec![dim, dim], rng),
            w_q: qkvo.then(|| trunc_normal(vec![dim, dim], rng)),
            w_o: qkvo.then(|| trunc_normal(vec![dim, dim], rng)),
        }
    }

    fn zeroed(dim: usize, layout: DecoderLayout) -> Self {
        let qkvo = layout == DecoderLayout::Qkvo;
        let zero = || Tensor::zeros(vec![dim, dim]).with_requires_grad();
        DecoderParams {
            norm: LayerNormParams::new(dim),
            w_k: zero(),
            w_v: zero(),
            w_q: qkvo.then(zero),
            w_o: qkvo.then(zero),
        }
    }
}

/// Per-channel input standardization constants, persisted with the model so
/// evaluation needs no side channel.
#[derive(Debug, Clone, PartialEq)]
pub struct InputStandardization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl InputStandardization {
    pub fn identity(channels: usize) -> Self {
        InputStandardization {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }
}

#[derive(Debug, Clone)]
pub struct EditModel {
    config: ModelConfig,
    pub embed: LinearParams,
    pub pos: Tensor,
    pub cls: Tensor,
    pub layers: Vec<EncoderLayerParams>,
    pub decoder: DecoderParams,
    pub final_norm: Option<LayerNormParams>,
    pub head: LinearParams,
    pub input_standardization: InputStandardization,
}

#[derive(Debug, Clone)]
pub struct BaselineVitModel {
    config: ModelConfig,
    pub embed: LinearParams,
    pub pos: Tensor,
    pub cls: Tensor,
    pub layers: Vec<EncoderLayerParams>,
    pub final_norm: Option<LayerNormParams>,
    pub head: LinearParams,
    pub input_standardization: InputStandardization,
}

fn trunc_normal(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let normal = Normal::new(0.0f32, INIT_STD).expect("valid std");
    let count: usize = shape.iter().product();
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        // Resample outside two standard deviations.
        let v = loop {
            let x = normal.sample(rng);
            if x.abs() <= 2.0 * INIT_STD {
                break x;
            }
        };
        data.push(v);
    }
    Tensor::from_shape_data(shape, data).expect("shape matches data").with_requires_grad()
}

impl EditModel {
    /// Builds a freshly initialized model: truncated-normal projections and
    /// embeddings, zero biases, unit/zero norms. Deterministic per seed.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.num_patches();
        let d = config.dim;
        Ok(EditModel {
            embed: LinearParams::init(config.patch_len(), d, &mut rng),
            pos: trunc_normal(vec![n, d], &mut rng),
            cls: trunc_normal(vec![d], &mut rng),
            layers: (0..config.depth).map(|_| EncoderLayerParams::init(d, &mut rng)).collect(),
            decoder: DecoderParams::init(d, config.decoder_layout, &mut rng),
            final_norm: config.final_norm.then(|| LayerNormParams::new(d)),
            head: LinearParams::init(d, config.classes, &mut rng),
            input_standardization: InputStandardization::identity(config.channels),
            config,
        })
    }

    /// All-zero parameters (norm gammas at one); the checkpoint loader fills
    /// this in.
    pub fn zeroed(config: ModelConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let n = config.num_patches();
        let d = config.dim;
        Ok(EditModel {
            embed: LinearParams::zeroed(config.patch_len(), d),
            pos: Tensor::zeros(vec![n, d]).with_requires_grad(),
            cls: Tensor::zeros(vec![d]).with_requires_grad(),
            layers: (0..config.depth).map(|_| EncoderLayerParams::zeroed(d)).collect(),
            decoder: DecoderParams::zeroed(d, config.decoder_layout),
            final_norm: config.final_norm.then(|| LayerNormParams::new(d)),
            head: LinearParams::zeroed(d, config.classes),
            input_standardization: InputStandardization::identity(config.channels),
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn set_stochastic_depth_rate(&mut self, rate: f32) {
        self.config.stochastic_depth_rate = rate;
    }

    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|p| p.tensor.numel()).sum()
    }
}

impl BaselineVitModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.num_patches();
        let d = config.dim;
        Ok(BaselineVitModel {
            embed: LinearParams::init(config.patch_len(), d, &mut rng),
            pos: trunc_normal(vec![n, d], &mut rng),
            cls: trunc_normal(vec![d], &mut rng),
            layers: (0..config.depth).map(|_| EncoderLayerParams::init(d, &mut rng)).collect(),
            final_norm: config.final_norm.then(|| LayerNormParams::new(d)),
            head: LinearParams::init(d, config.classes, &mut rng),
            input_standardization: InputStandardization::identity(config.channels),
            config,
        })
    }

    pub fn zeroed(config: ModelConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let n = config.num_patches();
        let d = config.dim;
        Ok(BaselineVitModel {
            embed: LinearParams::zeroed(config.patch_len(), d),
            pos: Tensor::zeros(vec![n, d]).with_requires_grad(),
            cls: Tensor::zeros(vec![d]).with_requires_grad(),
            layers: (0..config.depth).map(|_| EncoderLayerParams::zeroed(d)).collect(),
            final_norm: config.final_norm.then(|| LayerNormParams::new(d)),
            head: LinearParams::zeroed(d, config.classes),
            input_standardization: InputStandardization::identity(config.channels),
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn set_stochastic_depth_rate(&mut self, rate: f32) {
        self.config.stochastic_depth_rate = rate;
    }

    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|p| p.tensor.numel()).sum()
    }
}

/// Read-only view of one named parameter.
pub struct ParamView<'a> {
    pub name: String,
    pub tensor: &'a Tensor,
    /// Excluded from weight decay (norm scales/shifts and the class embedding).
    pub no_decay: bool,
}

/// Mutable view of one named parameter, same order as [`ParamView`] listings.
pub struct ParamViewMut<'a> {
    pub name: String,
    pub tensor: &'a mut Tensor,
    pub no_decay: bool,
}

fn norm_views<'a>(prefix: &str, norm: &'a LayerNormParams, out: &mut Vec<ParamView<'a>>) {
    out.push(ParamView { name: format!("{prefix}.gamma"), tensor: &norm.gamma, no_decay: true });
    out.push(ParamView { name: format!("{prefix}.beta"), tensor: &norm.beta, no_decay: true });
}

fn linear_views<'a>(prefix: &str, lin: &'a LinearParams, out: &mut Vec<ParamView<'a>>) {
    out.push(ParamView { name: format!("{prefix}.weight"), tensor: &lin.weight, no_decay: false });
    out.push(ParamView { name: format!("{prefix}.bias"), tensor: &lin.bias, no_decay: false });
}

fn layer_views<'a>(i: usize, layer: &'a EncoderLayerParams, out: &mut Vec<ParamView<'a>>) {
    let p = format!("layers.{i}");
    norm_views(&format!("{p}.norm1"), &layer.norm1, out);
    linear_views(&format!("{p}.attn.w_q"), &layer.w_q, out);
    linear_views(&format!("{p}.attn.w_k"), &layer.w_k, out);
    linear_views(&format!("{p}.attn.w_v"), &layer.w_v, out);
    linear_views(&format!("{p}.attn.w_o"), &layer.w_o, out);
    norm_views(&format!("{p}.norm2"), &layer.norm2, out);
    linear_views(&format!("{p}.ffn.w1"), &layer.ffn_w1, out);
    linear_views(&format!("{p}.ffn.w2"), &layer.ffn_w2, out);
}

fn norm_views_mut<'a>(prefix: &str, norm: &'a mut LayerNormParams, out: &mut Vec<ParamViewMut<'a>>) {
    out.push(ParamViewMut { name: format!("{prefix}.gamma"), tensor: &mut norm.gamma, no_decay: true });
    out.push(ParamViewMut { name: format!("{prefix}.beta"), tensor: &mut norm.beta, no_decay: true });
}

fn linear_views_mut<'a>(prefix: &str, lin: &'a mut LinearParams, out: &mut Vec<ParamViewMut<'a>>) {
    out.push(ParamViewMut { name: format!("{prefix}.weight"), tensor: &mut lin.weight, no_decay: false });
    out.push(ParamViewMut { name: format!("{prefix}.bias"), tensor: &mut lin.bias, no_decay: false });
}

fn layer_views_mut<'a>(i: usize, layer: &'a mut EncoderLayerParams, out: &mut Vec<ParamViewMut<'a>>) {
    let p = format!("layers.{i}");
    norm_views_mut(&format!("{p}.norm1"), &mut layer.norm1, out);
    linear_views_mut(&format!("{p}.attn.w_q"), &mut layer.w_q, out);
    linear_views_mut(&format!("{p}.attn.w_k"), &mut layer.w_k, out);
    linear_views_mut(&format!("{p}.attn.w_v"), &mut layer.w_v, out);
    linear_views_mut(&format!("{p}.attn.w_o"), &mut layer.w_o, out);
    norm_views_mut(&format!("{p}.norm2"), &mut layer.norm2, out);
    linear_views_mut(&format!("{p}.ffn.w1"), &mut layer.ffn_w1, out);
    linear_views_mut(&format!("{p}.ffn.w2"), &mut layer.ffn_w2, out);
}

impl EditModel {
    /// Parameters in canonical order: embedding, positions, class embedding,
    /// encoder layers, shared decoder, final norm, head. Checkpoints,
    /// optimizers, and tape bindings all use this order.
    pub fn named_params(&self) -> Vec<ParamView<'_>> {
        let mut out = Vec::new();
        linear_views("embed", &self.embed, &mut out);
        out.push(ParamView { name: "pos".into(), tensor: &self.pos, no_decay: false });
        out.push(ParamView { name: "cls".into(), tensor: &self.cls, no_decay: true });
        for (i, layer) in self.layers.iter().enumerate() {
            layer_views(i, layer, &mut out);
        }
        norm_views("decoder.norm", &self.decoder.norm, &mut out);
        out.push(ParamView { name: "decoder.w_k".into(), tensor: &self.decoder.w_k, no_decay: false });
        out.push(ParamView { name: "decoder.w_v".into(), tensor: &self.decoder.w_v, no_decay: false });
        if let Some(q) = &self.decoder.w_q {
            out.push(ParamView { name: "decoder.w_q".into(), tensor: q, no_decay: false });
        }
        if let Some(o) = &self.decoder.w_o {
            out.push(ParamView { name: "decoder.w_o".into(), tensor: o, no_decay: false });
        }
        if let Some(norm) = &self.final_norm {
            norm_views("final_norm", norm, &mut out);
        }
        linear_views("head", &self.head, &mut out);
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<ParamViewMut<'_>> {
        let mut out = Vec::new();
        linear_views_mut("embed", &mut self.embed, &mut out);
        out.push(ParamViewMut { name: "pos".into(), tensor: &mut self.pos, no_decay: false });
        out.push(ParamViewMut { name: "cls".into(), tensor: &mut self.cls, no_decay: true });
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer_views_mut(i, layer, &mut out);
        }
        norm_views_mut("decoder.norm", &mut self.decoder.norm, &mut out);
        out.push(ParamViewMut { name: "decoder.w_k".into(), tensor: &mut self.decoder.w_k, no_decay: false });
        out.push(ParamViewMut { name: "decoder.w_v".into(), tensor: &mut self.decoder.w_v, no_decay: false });
        if let Some(q) = &mut self.decoder.w_q {
            out.push(ParamViewMut { name: "decoder.w_q".into(), tensor: q, no_decay: false });
        }
        if let Some(o) = &mut self.decoder.w_o {
            out.push(ParamViewMut { name: "decoder.w_o".into(), tensor: o, no_decay: false });
        }
        if let Some(norm) = &mut self.final_norm {
            norm_views_mut("final_norm", norm, &mut out);
        }
        linear_views_mut("head", &mut self.head, &mut out);
        out
    }
}

impl BaselineVitModel {
    pub fn named_params(&self) -> Vec<ParamView<'_>> {
        let mut out = Vec::new();
        linear_views("embed", &self.embed, &mut out);
        out.push(ParamView { name: "pos".into(), tensor: &self.pos, no_decay: false });
        out.push(ParamView { name: "cls".into(), tensor: &self.cls, no_decay: true });
        for (i, layer) in self.layers.iter().enumerate() {
            layer_views(i, layer, &mut out);
        }
        if let Some(norm) = &self.final_norm {
            norm_views("final_norm", norm, &mut out);
        }
        linear_views("head", &self.head, &mut out);
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<ParamViewMut<'_>> {
        let mut out = Vec::new();
        linear_views_mut("embed", &mut self.embed, &mut out);
        out.push(ParamViewMut { name: "pos".into(), tensor: &mut self.pos, no_decay: false });
        out.push(ParamViewMut { name: "cls".into(), tensor: &mut self.cls, no_decay: true });
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer_views_mut(i, layer, &mut out);
        }
        if let Some(norm) = &mut self.final_norm {
            norm_views_mut("final_norm", norm, &mut out);
        }
        linear_views_mut("head", &mut self.head, &mut out);
        out
    }
}

/// Either architecture behind one dispatching surface, as produced by the
/// checkpoint loader.
#[derive(Debug, Clone)]
pub enum Model {
    Edit(EditModel),
    Baseline(BaselineVitModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Edit(_) => ModelKind::Edit,
            Model::Baseline(_) => ModelKind::Baseline,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Model::Edit(m) => m.config(),
            Model::Baseline(m) => m.config(),
        }
    }

    pub fn input_standardization(&self) -> &InputStandardization {
        match self {
            Model::Edit(m) => &m.input_standardization,
            Model::Baseline(m) => &m.input_standardization,
        }
    }

    pub fn set_input_standardization(&mut self, s: InputStandardization) {
        match self {
            Model::Edit(m) => m.input_standardization = s,
            Model::Baseline(m) => m.input_standardization = s,
        }
    }

    pub fn set_stochastic_depth_rate(&mut self, rate: f32) {
        match self {
            Model::Edit(m) => m.set_stochastic_depth_rate(rate),
            Model::Baseline(m) => m.set_stochastic_depth_rate(rate),
        }
    }

    pub fn named_params(&self) -> Vec<ParamView<'_>> {
        match self {
            Model::Edit(m) => m.named_params(),
            Model::Baseline(m) => m.named_params(),
        }
    }

    pub fn named_params_mut(&mut self) -> Vec<ParamViewMut<'_>> {
        match self {
            Model::Edit(m) => m.named_params_mut(),
            Model::Baseline(m) => m.named_params_mut(),
        }
    }

    pub fn forward(
        &self,
        image: &crate::data::Image,
        mode: Mode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOutput, ModelError> {
        match self {
            Model::Edit(m) => m.forward(image, mode, rng),
            Model::Baseline(m) => m.forward(image, mode, rng),
        }
    }

    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|p| p.tensor.numel()).sum()
    }
}

/// Draws per-layer residual-drop decisions for stochastic depth. In
/// evaluation mode or at rate zero nothing is dropped and no randomness is
/// consumed. Draw order: for each layer in order, first the attention branch,
/// then the FFN branch.
pub fn draw_residual_drops(
    depth: usize,
    rate: f32,
    mode: Mode,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Vec<ResidualDrops> {
    if mode == Mode::Eval || rate <= 0.0 {
        return vec![ResidualDrops { msa: false, ffn: false }; depth];
    }
    match rng.as_deref_mut() {
        Some(r) => (0..depth)
            .map(|_| ResidualDrops {
                msa: r.gen::<f32>() < rate,
                ffn: r.gen::<f32>() < rate,
            })
            .collect(),
        None => vec![ResidualDrops { msa: false, ffn: false }; depth],
    }
}
