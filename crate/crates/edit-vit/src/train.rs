//! Micro-scale supervised training: cosine learning-rate schedule,
//! label-smoothed cross-entropy, SGD-with-momentum and AdamW optimizers, and
//! top-1 evaluation.
//!
//! Everything is deterministic given the seed: the shuffle, the horizontal
//! flips, and the stochastic-depth draws each consume their own seeded
//! stream, and batch gradients are the mean over samples accumulated in batch
//! order.

use crate::data::{Image, LabeledDataset};
use crate::model::{
    draw_residual_drops, patchify, ParamViewMut, Mode, Model, ModelError,
};
use crate::tape::Tape;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("warmup_epochs {warmup} exceeds epochs {epochs}")]
    WarmupExceedsEpochs { warmup: usize, epochs: usize },
    #[error("label_smoothing {epsilon} is outside [0, 1)")]
    LabelSmoothingOutOfRange { epsilon: f32 },
    #[error("stochastic_depth_rate {rate} is outside [0, 1)")]
    DropRateOutOfRange { rate: f32 },
    #[error("{field} must be positive")]
    ZeroField { field: &'static str },
    #[error("{field} must be finite and non-negative")]
    BadRate { field: &'static str },
    #[error("dataset split is empty")]
    EmptyDataset,
    #[error("dataset has {dataset} classes but the model head expects {model}")]
    ClassesMismatch { dataset: usize, model: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    SgdMomentum,
    AdamW,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::SgdMomentum => "sgd",
            OptimizerKind::AdamW => "adamw",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub label_smoothing: f32,
    pub stochastic_depth_rate: f32,
    pub seed: u64,
    /// Random horizontal flip of training images, the only augmentation.
    pub hflip: bool,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            base_lr: 1e-3,
            min_lr: 1e-5,
            warmup_epochs: 3,
            weight_decay: 0.05,
            label_smoothing: 0.1,
            stochastic_depth_rate: 0.0,
            seed: 0,
            hflip: false,
            optimizer: OptimizerKind::AdamW,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        for (field, value) in [("epochs", self.epochs), ("batch_size", self.batch_size)] {
            if value == 0 {
                return Err(TrainError::ZeroField { field });
            }
        }
        if self.warmup_epochs > self.epochs {
            return Err(TrainError::WarmupExceedsEpochs {
                warmup: self.warmup_epochs,
                epochs: self.epochs,
            });
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(TrainError::LabelSmoothingOutOfRange { epsilon: self.label_smoothing });
        }
        if !(0.0..1.0).contains(&self.stochastic_depth_rate) {
            return Err(TrainError::DropRateOutOfRange { rate: self.stochastic_depth_rate });
        }
        for (field, value) in [
            ("base_lr", self.base_lr),
            ("min_lr", self.min_lr),
            ("weight_decay", self.weight_decay),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(TrainError::BadRate { field });
            }
        }
        Ok(())
    }
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean per-sample training loss over the epoch.
    pub train_loss: f64,
    /// Validation top-1 accuracy in [0, 1].
    pub val_top1: f64,
    /// Learning rate at the last optimizer step of the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    pub epochs: Vec<EpochRecord>,
}

/// Linear warmup from 0 to `base_lr` over `warmup_steps`, then cosine decay
/// to `min_lr` across the post-warmup interval. `step` counts optimizer
/// steps from 0; `step == warmup_steps` yields exactly `base_lr` and
/// `step == total_steps` yields exactly `min_lr`.
pub fn cosine_schedule(
    step: usize,
    total_steps: usize,
    warmup_steps: usize,
    base_lr: f64,
    min_lr: f64,
) -> f64 {
    assert!(warmup_steps <= total_steps);
    if step < warmup_steps {
        return base_lr * step as f64 / warmup_steps as f64;
    }
    if total_steps == warmup_steps {
        return base_lr;
    }
    let progress = ((step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64).min(1.0);
    min_lr + (base_lr - min_lr) * (1.0 + (std::f64::consts::PI * progress).cos()) / 2.0
}

const MOMENTUM: f64 = 0.9;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Per-parameter optimizer state. Internal arithmetic runs in f64 so the
/// two-step scalar recurrences match a hand-unrolled oracle to rounding.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    /// AdamW step counter for bias correction.
    t: u32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, sizes: &[usize]) -> Self {
        Optimizer {
            kind,
            t: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: match kind {
                OptimizerKind::SgdMomentum => Vec::new(),
                OptimizerKind::AdamW => sizes.iter().map(|&n| vec![0.0; n]).collect(),
            },
        }
    }

    /// Applies one update. `params` and `grads` follow the canonical
    /// parameter order used to construct this optimizer. Norm scales/shifts
    /// and the class embedding (the `no_decay` parameters) are excluded from
    /// weight decay; for SGD decay is folded into the gradient, for AdamW it
    /// is decoupled.
    pub fn step(
        &mut self,
        params: &mut [ParamViewMut<'_>],
        grads: &[Vec<f32>],
        lr: f64,
        weight_decay: f64,
    ) {
        assert_eq!(params.len(), self.first.len());
        assert_eq!(grads.len(), self.first.len());
        match self.kind {
            OptimizerKind::SgdMomentum => {
                for ((param, grad), buf) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    let decay = if param.no_decay { 0.0 } else { weight_decay };
                    let data = param.tensor.data_mut();
                    for ((p, &g), m) in data.iter_mut().zip(grad).zip(buf) {
                        let g_eff = g as f64 + decay * *p as f64;
                        *m = MOMENTUM * *m + g_eff;
                        *p = (*p as f64 - lr * *m) as f32;
                    }
                }
            }
            OptimizerKind::AdamW => {
                self.t += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
                for (((param, grad), m_buf), v_buf) in
                    params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second)
                {
                    let decay = if param.no_decay { 0.0 } else { weight_decay };
                    let data = param.tensor.data_mut();
                    for (((p, &g), m), v) in data.iter_mut().zip(grad).zip(m_buf).zip(v_buf) {
                        let g = g as f64;
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        let update = (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
                        let prev = *p as f64;
                        *p = (prev - lr * update - lr * decay * prev) as f32;
                    }
                }
            }
        }
    }
}

/// Builds the forward graph for one standardized sample, runs backward from
/// the label-smoothed cross-entropy, and adds `weight` times each parameter
/// gradient into the accumulator (canonical parameter order). Returns the
/// sample loss.
fn backward_sample(
    model: &Model,
    image: &Image,
    label: usize,
    epsilon: f32,
    drop_rng: &mut ChaCha8Rng,
    acc: &mut [Vec<f32>],
    weight: f32,
) -> Result<f64, TrainError> {
    let config = model.config();
    let rate = config.stochastic_depth_rate;
    let branch_scale = if rate > 0.0 { 1.0 / (1.0 - rate) } else { 1.0 };
    let mut tape = Tape::new();
    let patches = patchify(image, config.patch)?;
    let (logits, flat) = match model {
        Model::Edit(m) => {
            let nodes = m.bind(&mut tape);
            let pnode = tape.constant(config.num_patches(), config.patch_len(), patches);
            let drops =
                draw_residual_drops(config.depth, rate, Mode::Train, Some(drop_rng));
            let decoders = vec![nodes.decoder; config.depth];
            let graph = crate::model::edit_graph(
                &mut tape,
                config,
                &nodes,
                &decoders,
                pnode,
                &drops,
                branch_scale,
            )
            .map_err(ModelError::from)?;
            (graph.logits, nodes.flat())
        }
        Model::Baseline(m) => {
            let nodes = m.bind(&mut tape);
            let pnode = tape.constant(config.num_patches(), config.patch_len(), patches);
            let drops =
                draw_residual_drops(config.depth, rate, Mode::Train, Some(drop_rng));
            let graph = crate::model::baseline_graph(
                &mut tape,
                config,
                &nodes,
                pnode,
                &drops,
                branch_scale,
            )
            .map_err(ModelError::from)?;
            (graph.logits, nodes.flat())
        }
    };
    let loss = tape
        .cross_entropy_label_smoothing(logits, label, epsilon)
        .map_err(ModelError::from)?;
    tape.backward(loss).map_err(ModelError::from)?;
    let loss_value = tape.value(loss)[0] as f64;
    for (slot, &node) in acc.iter_mut().zip(&flat) {
        if let Some(grad) = tape.grad(node) {
            for (a, &g) in slot.iter_mut().zip(grad) {
                *a += g * weight;
            }
        }
    }
    Ok(loss_value)
}

fn check_dataset(model: &Model, dataset: &LabeledDataset) -> Result<(), TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let cfg = model.config();
    let img = &dataset.images[0];
    if (img.h, img.w, img.c) != (cfg.image_h, cfg.image_w, cfg.channels) {
        return Err(TrainError::Model(ModelError::Geometry {
            expected_h: cfg.image_h,
            expected_w: cfg.image_w,
            expected_c: cfg.channels,
            actual_h: img.h,
            actual_w: img.w,
            actual_c: img.c,
        }));
    }
    if dataset.classes != cfg.classes {
        return Err(TrainError::ClassesMismatch { dataset: dataset.classes, model: cfg.classes });
    }
    Ok(())
}

/// Fraction of samples whose highest logit matches the label; logit ties
/// resolve to the lowest class index.
pub fn evaluate(model: &Model, dataset: &LabeledDataset) -> Result<f64, TrainError> {
    check_dataset(model, dataset)?;
    let mut correct = 0usize;
    for (img, &label) in dataset.images.iter().zip(&dataset.labels) {
        let out = model.forward(img, Mode::Eval, None)?;
        if out.predicted_class() == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Trains the model in place and returns per-epoch metrics.
///
/// Per epoch: the sample order is reshuffled, batches are taken in order, and
/// each batch applies one optimizer step at the scheduled learning rate
/// (steps count from 0 at the start of training). The batch gradient is the
/// mean over its samples, accumulated in batch order. The model's
/// stochastic-depth rate is taken from `config`, and the dataset's
/// standardization constants are recorded on the model so a saved checkpoint
/// is self-contained.
pub fn train(
    model: &mut Model,
    train_set: &LabeledDataset,
    val_set: &LabeledDataset,
    config: &TrainConfig,
) -> Result<Metrics, TrainError> {
    config.validate()?;
    check_dataset(model, train_set)?;
    check_dataset(model, val_set)?;
    model.set_stochastic_depth_rate(config.stochastic_depth_rate);
    model.set_input_standardization(train_set.standardization.clone());

    // Independent deterministic streams per random purpose.
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut flip_rng = ChaCha8Rng::seed_from_u64(config.seed);
    flip_rng.set_stream(2);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(config.seed);
    drop_rng.set_stream(3);

    let steps_per_epoch = train_set.len().div_ceil(config.batch_size);
    let total_steps = config.epochs * steps_per_epoch;
    let warmup_steps = config.warmup_epochs * steps_per_epoch;

    let sizes: Vec<usize> = model.named_params().iter().map(|p| p.tensor.numel()).collect();
    let mut optimizer = Optimizer::new(config.optimizer, &sizes);
    let mut acc: Vec<Vec<f32>> = sizes.iter().map(|&n| vec![0.0; n]).collect();

    let mut history = Metrics::default();
    let mut step = 0usize;
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        let mut lr = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            lr = cosine_schedule(step, total_steps, warmup_steps, config.base_lr, config.min_lr);
            for slot in &mut acc {
                slot.iter_mut().for_each(|v| *v = 0.0);
            }
            let weight = 1.0 / batch.len() as f32;
            for &idx in batch {
                let stored = &train_set.images[idx];
                let flipped;
                let image = if config.hflip && flip_rng.gen_bool(0.5) {
                    flipped = stored.hflip();
                    &flipped
                } else {
                    stored
                };
                loss_sum += backward_sample(
                    model,
                    image,
                    train_set.labels[idx],
                    config.label_smoothing,
                    &mut drop_rng,
                    &mut acc,
                    weight,
                )?;
            }
            let mut params = model.named_params_mut();
            optimizer.step(&mut params, &acc, lr, config.weight_decay);
            step += 1;
        }
        let val_top1 = evaluate(model, val_set)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_top1,
            lr,
        });
    }
    Ok(history)
}
