//! Encoder-decoder image transformer (EDIT) with a [CLS]-token ViT baseline.
//!
//! The crate is organized around five pieces:
//!
//! - [`tensor`] / [`tape`]: a minimal dense f32 tensor type and a reverse-mode
//!   automatic differentiation tape covering exactly the operations the models
//!   need (matmul, row softmax, layer norm, GELU, concat/slice, cross-entropy).
//! - [`model`]: the EDIT architecture (per-layer-aligned single-head
//!   cross-attention decoder with shared weights) and a standard pre-norm ViT
//!   baseline, plus closed-form parameter and MAC accounting and a binary
//!   checkpoint format.
//! - [`attention`]: capture of attention matrices during forward passes,
//!   [CLS] attention-sink statistics, and per-layer CLS attention grids.
//! - [`data`] / [`train`]: a synthetic shapes dataset, a CIFAR-10 binary
//!   loader, and a deterministic micro-scale training loop (AdamW/SGD, cosine
//!   schedule with warmup, label-smoothed cross-entropy).
//! - [`cli`]: the command surface used by the `edit-vit` binary.
//!
//! Start with the crate examples: `cargo run --release -p edit-vit --example
//! params_and_macs` prints the accounting tables, `train_shapes` runs a full
//! micro training job, `attention_maps` and `sink_stats` produce the
//! interpretability artifacts.

pub mod attention;
pub mod cli;
pub mod config;
pub mod data;
pub mod export;
pub mod model;
pub mod tape;
pub mod tensor;
pub mod train;

pub use attention::{AttentionRecord, AttentionSource, SinkStats};
pub use config::{DecoderLayout, DecoderNorm, ModelConfig, Preset};
pub use model::{BaselineVitModel, EditModel, ForwardOutput, Mode, Model};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
pub use train::{Metrics, TrainConfig};
