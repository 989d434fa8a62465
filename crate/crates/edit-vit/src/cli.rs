//! Run-configuration parsing and the seven commands behind the `edit-vit`
//! binary: train, eval, attn-export, sink-stats, params, flops, compare.
//!
//! Configuration comes from an optional plain-text file of `key = value`
//! lines (UTF-8, `#` comments) merged with command-line overrides; a flag
//! always wins over the file. Unknown keys are a hard error naming the key.
//! Exit-code contract: 0 success, 1 runtime failure, 2 configuration or
//! usage error.

use crate::attention::{
    cls_attention_grid, compute_sink_stats, AttentionRecord, AttentionSource,
};
use crate::config::{DecoderLayout, DecoderNorm, ModelConfig, Preset};
use crate::data::{
    generate_synthetic_shapes, load_cifar10_binary, standardize_image, LabeledDataset,
};
use crate::export::{
    attention_csv, atomic_write, pgm_bytes, read_pnm, sink_chart_svg, sink_stats_csv,
    write_metrics_csv,
};
use crate::model::{
    count_params, estimate_macs, load_checkpoint, save_checkpoint, BaselineVitModel, Breakdown,
    EditModel, Mode, Model, ModelKind,
};
use crate::train::{evaluate, train, OptimizerKind, TrainConfig, TrainError};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Error carrying the process exit code: usage/configuration problems exit
/// 2, runtime failures exit 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.message())
    }
}

impl std::error::Error for CliError {}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn runtime(msg: impl std::fmt::Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::WarmupExceedsEpochs { .. }
            | TrainError::LabelSmoothingOutOfRange { .. }
            | TrainError::DropRateOutOfRange { .. }
            | TrainError::ZeroField { .. }
            | TrainError::BadRate { .. }
            | TrainError::EmptyDataset
            | TrainError::ClassesMismatch { .. }
            | TrainError::Model(crate::model::ModelError::Geometry { .. })
            | TrainError::Model(crate::model::ModelError::Config(_)) => usage(e.to_string()),
            TrainError::Model(_) => runtime(e),
        }
    }
}

/// Every key the configuration file may contain.
pub const KNOWN_KEYS: &[&str] = &[
    // model selection and geometry
    "preset",
    "baseline",
    "image_h",
    "image_w",
    "channels",
    "patch",
    "dim",
    "heads",
    "depth",
    "classes",
    "decoder_layout",
    "decoder_includes_cls_in_kv",
    "decoder_norm",
    "final_norm",
    "layer_scale",
    // training
    "epochs",
    "batch_size",
    "base_lr",
    "min_lr",
    "warmup_epochs",
    "weight_decay",
    "label_smoothing",
    "stochastic_depth_rate",
    "seed",
    "hflip",
    "optimizer",
    // data
    "dataset",
    "data_dir",
    "train_count",
    "val_count",
    // artifacts
    "checkpoint",
    "image",
    "out",
    "format",
    "samples",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Shapes,
    Cifar10,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Pgm,
    Csv,
}

impl ExportFormat {
    fn extension(self) -> &'static str {
        match self {
            ExportFormat::Pgm => "pgm",
            ExportFormat::Csv => "csv",
        }
    }
}

/// Command-line overrides collected by the binary; `None` means "not given",
/// so the configuration file (or the default) supplies the value.
#[derive(Debug, Clone, Default)]
pub struct CliOverrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub preset: Option<String>,
    pub baseline: bool,
    /// Positional checkpoint path accepted by eval / attn-export / sink-stats.
    pub checkpoint: Option<PathBuf>,
    /// Positional image path accepted by attn-export.
    pub image: Option<PathBuf>,
}

/// Fully resolved run configuration: defaults, then file keys, then flags.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    pub baseline: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dataset: DatasetKind,
    pub data_dir: Option<PathBuf>,
    pub train_count: usize,
    pub val_count: usize,
    pub checkpoint: Option<PathBuf>,
    pub image: Option<PathBuf>,
    /// Output directory; `None` means the current directory and suppresses
    /// the optional CSV of params/flops.
    pub out: Option<PathBuf>,
    pub format: ExportFormat,
    /// Images sampled by sink-stats.
    pub samples: usize,
}

/// Geometry used when no preset and no explicit keys are given: the 32x32
/// single-channel micro model that trains on the synthetic shapes task.
fn default_micro_config() -> ModelConfig {
    ModelConfig::new(32, 32, 1, 8, 32, 4, 2, 3)
}

/// Parses `key = value` lines. `#` starts a comment, blank lines are
/// skipped, later occurrences of a key override earlier ones, and any key
/// outside [`KNOWN_KEYS`] is an error naming the key.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            usage(format!("config line {}: expected 'key = value', got '{}'", idx + 1, raw.trim()))
        })?;
        let key = key.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(usage(format!("unknown configuration key '{key}' (line {})", idx + 1)));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

fn parse_value<T: FromStr>(key: &str, value: &str, expected: &str) -> Result<T, CliError> {
    value
        .parse::<T>()
        .map_err(|_| usage(format!("key '{key}': invalid value '{value}' (expected {expected})")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => Err(usage(format!("key '{key}': invalid value '{other}' (expected true or false)"))),
    }
}

impl RunConfig {
    /// Resolves the run configuration from the file named by
    /// `cli.config` (if any) merged with the command-line overrides.
    pub fn resolve(cli: &CliOverrides) -> Result<RunConfig, CliError> {
        let mut map = match &cli.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    usage(format!("cannot read config file {}: {e}", path.display()))
                })?;
                parse_config_text(&text)?
            }
            None => BTreeMap::new(),
        };
        if let Some(p) = &cli.preset {
            map.insert("preset".into(), p.clone());
        }
        if cli.baseline {
            map.insert("baseline".into(), "true".into());
        }
        if let Some(s) = cli.seed {
            map.insert("seed".into(), s.to_string());
        }
        if let Some(o) = &cli.out {
            map.insert("out".into(), o.display().to_string());
        }
        if let Some(c) = &cli.checkpoint {
            map.insert("checkpoint".into(), c.display().to_string());
        }
        if let Some(i) = &cli.image {
            map.insert("image".into(), i.display().to_string());
        }
        RunConfig::from_map(&map)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<RunConfig, CliError> {
        let preset = match map.get("preset") {
            Some(v) => Some(Preset::from_str(v).map_err(|e| usage(e.to_string()))?),
            None => None,
        };
        let mut model = preset.map(Preset::model_config).unwrap_or_else(default_micro_config);

        // Explicit geometry keys refine the preset (or the micro default).
        {
            let fields: [(&str, &mut usize); 8] = [
                ("image_h", &mut model.image_h),
                ("image_w", &mut model.image_w),
                ("channels", &mut model.channels),
                ("patch", &mut model.patch),
                ("dim", &mut model.dim),
                ("heads", &mut model.heads),
                ("depth", &mut model.depth),
                ("classes", &mut model.classes),
            ];
            for (key, slot) in fields {
                if let Some(v) = map.get(key) {
                    *slot = parse_value::<usize>(key, v, "unsigned integer")?;
                }
            }
        }
        if let Some(v) = map.get("decoder_layout") {
            model.decoder_layout = match v.as_str() {
                "kv_only" => DecoderLayout::KvOnly,
                "qkvo" => DecoderLayout::Qkvo,
                other => {
                    return Err(usage(format!(
                        "key 'decoder_layout': invalid value '{other}' (expected kv_only or qkvo)"
                    )))
                }
            };
        }
        if let Some(v) = map.get("decoder_includes_cls_in_kv") {
            model.decoder_includes_cls_in_kv = parse_bool("decoder_includes_cls_in_kv", v)?;
        }
        if let Some(v) = map.get("decoder_norm") {
            model.decoder_norm = match v.as_str() {
                "pre" => DecoderNorm::Pre,
                "post" => DecoderNorm::Post,
                other => {
                    return Err(usage(format!(
                        "key 'decoder_norm': invalid value '{other}' (expected pre or post)"
                    )))
                }
            };
        }
        if let Some(v) = map.get("final_norm") {
            model.final_norm = parse_bool("final_norm", v)?;
        }
        if let Some(v) = map.get("layer_scale") {
            model.layer_scale = parse_bool("layer_scale", v)?;
        }

        let mut train = TrainConfig::default();
        if let Some(v) = map.get("epochs") {
            train.epochs = parse_value("epochs", v, "unsigned integer")?;
        }
        if let Some(v) = map.get("batch_size") {
            train.batch_size = parse_value("batch_size", v, "unsigned integer")?;
        }
        if let Some(v) = map.get("warmup_epochs") {
            train.warmup_epochs = parse_value("warmup_epochs", v, "unsigned integer")?;
        }
        if let Some(v) = map.get("base_lr") {
            train.base_lr = parse_value("base_lr", v, "number")?;
        }
        if let Some(v) = map.get("min_lr") {
            train.min_lr = parse_value("min_lr", v, "number")?;
        }
        if let Some(v) = map.get("weight_decay") {
            train.weight_decay = parse_value("weight_decay", v, "number")?;
        }
        if let Some(v) = map.get("label_smoothing") {
            train.label_smoothing = parse_value("label_smoothing", v, "number")?;
        }
        if let Some(v) = map.get("stochastic_depth_rate") {
            train.stochastic_depth_rate = parse_value("stochastic_depth_rate", v, "number")?;
            model.stochastic_depth_rate = train.stochastic_depth_rate;
        }
        if let Some(v) = map.get("seed") {
            train.seed = parse_value("seed", v, "unsigned integer")?;
        }
        if let Some(v) = map.get("hflip") {
            train.hflip = parse_bool("hflip", v)?;
        }
        if let Some(v) = map.get("optimizer") {
            train.optimizer = match v.as_str() {
                "sgd" => OptimizerKind::SgdMomentum,
                "adamw" => OptimizerKind::AdamW,
                other => {
                    return Err(usage(format!(
                        "key 'optimizer': invalid value '{other}' (expected sgd or adamw)"
                    )))
                }
            };
        }

        let dataset = match map.get("dataset").map(String::as_str) {
            None | Some("shapes") => DatasetKind::Shapes,
            Some("cifar10") => DatasetKind::Cifar10,
            Some(other) => {
                return Err(usage(format!(
                    "key 'dataset': invalid value '{other}' (expected shapes or cifar10)"
                )))
            }
        };
        let format = match map.get("format").map(String::as_str) {
            None | Some("pgm") => ExportFormat::Pgm,
            Some("csv") => ExportFormat::Csv,
            Some(other) => {
                return Err(usage(format!(
                    "key 'format': invalid value '{other}' (expected pgm or csv)"
                )))
            }
        };

        let config = RunConfig {
            preset,
            baseline: map.get("baseline").map(|v| parse_bool("baseline", v)).transpose()?.unwrap_or(false),
            model,
            train,
            dataset,
            data_dir: map.get("data_dir").map(PathBuf::from),
            train_count: map
                .get("train_count")
                .map(|v| parse_value("train_count", v, "unsigned integer"))
                .transpose()?
                .unwrap_or(600),
            val_count: map
                .get("val_count")
                .map(|v| parse_value("val_count", v, "unsigned integer"))
                .transpose()?
                .unwrap_or(150),
            checkpoint: map.get("checkpoint").map(PathBuf::from),
            image: map.get("image").map(PathBuf::from),
            out: map.get("out").map(PathBuf::from),
            format,
            samples: map
                .get("samples")
                .map(|v| parse_value("samples", v, "unsigned integer"))
                .transpose()?
                .unwrap_or(16),
        };
        config.model.validate().map_err(|e| usage(e.to_string()))?;
        Ok(config)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    fn ensure_out_dir(&self) -> Result<PathBuf, CliError> {
        let dir = self.out_dir();
        std::fs::create_dir_all(&dir)
            .map_err(|e| runtime(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(dir)
    }

    fn build_model(&self) -> Result<Model, CliError> {
        let cfg = self.model.clone();
        let seed = self.train.seed;
        let model = if self.baseline {
            Model::Baseline(BaselineVitModel::new(cfg, seed).map_err(|e| usage(e.to_string()))?)
        } else {
            Model::Edit(EditModel::new(cfg, seed).map_err(|e| usage(e.to_string()))?)
        };
        Ok(model)
    }

    /// Builds the (train, val) splits named by the configuration.
    fn load_datasets(&self) -> Result<(LabeledDataset, LabeledDataset), CliError> {
        if self.train_count == 0 || self.val_count == 0 {
            return Err(usage("train_count and val_count must be positive"));
        }
        let full = match self.dataset {
            DatasetKind::Shapes => {
                generate_synthetic_shapes(self.train_count + self.val_count, self.train.seed)
            }
            DatasetKind::Cifar10 => {
                let dir = self.data_dir.as_ref().ok_or_else(|| {
                    usage("dataset = cifar10 requires the 'data_dir' key, which was not provided")
                })?;
                if !dir.is_dir() {
                    return Err(usage(format!(
                        "key 'data_dir': {} is not a readable directory",
                        dir.display()
                    )));
                }
                let set = load_cifar10_binary(dir).map_err(runtime)?;
                if set.len() < self.train_count + self.val_count {
                    return Err(usage(format!(
                        "dataset under {} holds {} samples, fewer than train_count + val_count = {}",
                        dir.display(),
                        set.len(),
                        self.train_count + self.val_count
                    )));
                }
                let (keep, _) = set.split_at(self.train_count + self.val_count);
                keep
            }
        };
        Ok(full.split_at(self.train_count))
    }

    fn require_checkpoint(&self) -> Result<Model, CliError> {
        let path = self.checkpoint.as_ref().ok_or_else(|| {
            usage("this command requires the 'checkpoint' key (or positional argument)")
        })?;
        if !path.is_file() {
            return Err(usage(format!(
                "key 'checkpoint': {} is not a readable file",
                path.display()
            )));
        }
        load_checkpoint(path).map_err(runtime)
    }
}

/// Trains the configured model, prints the per-epoch metrics lines, and
/// writes `metrics.csv` plus `model.edt` into the output directory.
pub fn cmd_train(config: &RunConfig) -> Result<(), CliError> {
    let (train_set, val_set) = config.load_datasets()?;
    let mut model = config.build_model()?;
    let metrics = train(&mut model, &train_set, &val_set, &config.train)?;
    for rec in &metrics.epochs {
        println!(
            "epoch {:>3}  train_loss {:.6}  val_top1 {:.4}  lr {:.6e}",
            rec.epoch, rec.train_loss, rec.val_top1, rec.lr
        );
    }
    let dir = config.ensure_out_dir()?;
    let metrics_path = dir.join("metrics.csv");
    write_metrics_csv(&metrics_path, &metrics.epochs).map_err(runtime)?;
    let ckpt_path = dir.join("model.edt");
    save_checkpoint(&model, &ckpt_path).map_err(runtime)?;
    println!("wrote {} and {}", metrics_path.display(), ckpt_path.display());
    Ok(())
}

/// Evaluates a checkpoint on the configured validation split and prints the
/// top-1 accuracy.
pub fn cmd_eval(config: &RunConfig) -> Result<(), CliError> {
    let model = config.require_checkpoint()?;
    let (_, val_set) = config.load_datasets()?;
    let top1 = evaluate(&model, &val_set)?;
    println!("val_top1 {top1:.4}");
    Ok(())
}

fn grid_records(model: &Model, image_path: &Path) -> Result<Vec<AttentionRecord>, CliError> {
    if !image_path.is_file() {
        return Err(usage(format!(
            "key 'image': {} is not a readable file",
            image_path.display()
        )));
    }
    let raw = read_pnm(image_path).map_err(runtime)?;
    if raw.c != model.input_standardization().mean.len() {
        return Err(usage(format!(
            "image {} has {} channels but the checkpoint standardizes {}",
            image_path.display(),
            raw.c,
            model.input_standardization().mean.len()
        )));
    }
    let image = standardize_image(&raw, model.input_standardization());
    let output = model
        .forward(&image, Mode::Eval, None)
        .map_err(|e| usage(e.to_string()))?;
    let depth = model.config().depth;
    let records = match model.kind() {
        // One cross-attention record per layer.
        ModelKind::Edit => output
            .attention
            .iter()
            .filter(|r| r.source == AttentionSource::DecoderCross)
            .cloned()
            .collect::<Vec<_>>(),
        // Class row of each self-attention matrix, averaged over heads.
        ModelKind::Baseline => (0..depth)
            .map(|layer| {
                let rows: Vec<&AttentionRecord> = output
                    .attention
                    .iter()
                    .filter(|r| {
                        r.source == AttentionSource::BaselineSelf && r.layer_index == layer
                    })
                    .collect();
                let heads = rows.len().max(1);
                let cols = rows.first().map_or(0, |r| r.cols);
                let mut mean = vec![0.0f32; cols];
                for rec in &rows {
                    for (m, &v) in mean.iter_mut().zip(&rec.matrix[..cols]) {
                        *m += v / heads as f32;
                    }
                }
                AttentionRecord {
                    layer_index: layer,
                    head_index: 0,
                    rows: 1,
                    cols,
                    matrix: mean,
                    source: AttentionSource::DecoderCross,
                }
            })
            .collect(),
    };
    if records.len() != depth {
        return Err(runtime(format!(
            "expected {depth} attention records, captured {}",
            records.len()
        )));
    }
    Ok(records)
}

/// Exports one class-attention grid per layer as `layer_<i>.pgm` or `.csv`
/// (zero-padded index), min-max normalized to [0,1].
pub fn cmd_attn_export(config: &RunConfig) -> Result<(), CliError> {
    let model = config.require_checkpoint()?;
    let image_path = config
        .image
        .as_ref()
        .ok_or_else(|| usage("attn-export requires the 'image' key (or positional argument)"))?;
    let records = grid_records(&model, image_path)?;
    let (grid_h, grid_w) = model.config().grid();
    let dir = config.ensure_out_dir()?;
    let width = model.config().depth.saturating_sub(1).to_string().len();
    for rec in &records {
        let grid = cls_attention_grid(rec, (grid_h, grid_w)).map_err(runtime)?;
        let name = format!("layer_{:0width$}.{}", rec.layer_index, config.format.extension());
        let path = dir.join(name);
        match config.format {
            ExportFormat::Pgm => {
                atomic_write(&path, &pgm_bytes(grid_w, grid_h, &grid)).map_err(runtime)?
            }
            ExportFormat::Csv => {
                atomic_write(&path, attention_csv(rec.layer_index, grid_h, grid_w, &grid).as_bytes())
                    .map_err(runtime)?
            }
        }
    }
    println!("wrote {} attention grids to {}", records.len(), dir.display());
    Ok(())
}

/// Computes class-column attention-sink statistics of a baseline checkpoint
/// over `samples` images and writes `sink_stats.csv` plus `sink_stats.svg`.
pub fn cmd_sink_stats(config: &RunConfig) -> Result<(), CliError> {
    let model = config.require_checkpoint()?;
    if model.kind() != ModelKind::Baseline {
        return Err(usage(
            "sink statistics need a baseline checkpoint: the EDIT encoder runs without a class \
             token, so its self-attention has no class column to measure",
        ));
    }
    if config.samples == 0 {
        return Err(usage("key 'samples' must be positive"));
    }
    let images = match config.dataset {
        DatasetKind::Shapes => generate_synthetic_shapes(config.samples, config.train.seed).images,
        DatasetKind::Cifar10 => {
            let dir = config.data_dir.as_ref().ok_or_else(|| {
                usage("dataset = cifar10 requires the 'data_dir' key, which was not provided")
            })?;
            let set = load_cifar10_binary(dir).map_err(runtime)?;
            if set.len() < config.samples {
                return Err(usage(format!(
                    "dataset holds {} samples, fewer than samples = {}",
                    set.len(),
                    config.samples
                )));
            }
            set.images.into_iter().take(config.samples).collect()
        }
    };
    let mut records = Vec::new();
    for image in &images {
        let out = model.forward(image, Mode::Eval, None).map_err(|e| usage(e.to_string()))?;
        records.extend(out.attention);
    }
    let stats = compute_sink_stats(&records, model.config().depth).map_err(runtime)?;
    for layer in &stats.layers {
        println!(
            "layer {:>2}  cls_share {:.6}  mean_other {:.6}  ratio {:.4}",
            layer.layer_index, layer.cls_share, layer.mean_other, layer.ratio
        );
    }
    let dir = config.ensure_out_dir()?;
    let csv_path = dir.join("sink_stats.csv");
    atomic_write(&csv_path, sink_stats_csv(&stats).as_bytes()).map_err(runtime)?;
    let svg_path = dir.join("sink_stats.svg");
    atomic_write(&svg_path, sink_chart_svg(&stats).as_bytes()).map_err(runtime)?;
    println!("wrote {} and {}", csv_path.display(), svg_path.display());
    Ok(())
}

fn breakdown_table(title: &str, b: &Breakdown) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out, "{:<24} {:>16} {:>6} {:>18}", "item", "count", "x", "subtotal");
    for item in &b.items {
        let _ = writeln!(
            out,
            "{:<24} {:>16} {:>6} {:>18}",
            item.name,
            item.count,
            item.multiplier,
            item.subtotal()
        );
    }
    let _ = writeln!(out, "{:<24} {:>16} {:>6} {:>18}", "total", "", "", b.total());
    out
}

fn breakdown_csv(b: &Breakdown) -> String {
    let mut out = String::from("item,count,multiplier,subtotal\n");
    for item in &b.items {
        let _ = writeln!(out, "{},{},{},{}", item.name, item.count, item.multiplier, item.subtotal());
    }
    let _ = writeln!(out, "total,,,{}", b.total());
    out
}

fn model_label(config: &RunConfig) -> String {
    let arch = if config.baseline { "baseline" } else { "EDIT" };
    match config.preset {
        Some(p) => format!("{arch}-{p}"),
        None => format!(
            "{arch} d={} heads={} depth={}",
            config.model.dim, config.model.heads, config.model.depth
        ),
    }
}

fn kind_of(config: &RunConfig) -> ModelKind {
    if config.baseline {
        ModelKind::Baseline
    } else {
        ModelKind::Edit
    }
}

/// Prints the closed-form parameter breakdown; with an output directory set,
/// also writes `params.csv`.
pub fn cmd_params(config: &RunConfig) -> Result<(), CliError> {
    let b = count_params(&config.model, kind_of(config));
    print!("{}", breakdown_table(&format!("parameters: {}", model_label(config)), &b));
    if config.out.is_some() {
        let dir = config.ensure_out_dir()?;
        let path = dir.join("params.csv");
        atomic_write(&path, breakdown_csv(&b).as_bytes()).map_err(runtime)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Prints the closed-form multiply-accumulate breakdown for one forward
/// pass; with an output directory set, also writes `flops.csv`.
pub fn cmd_flops(config: &RunConfig) -> Result<(), CliError> {
    let b = estimate_macs(&config.model, kind_of(config));
    print!(
        "{}",
        breakdown_table(&format!("multiply-accumulates: {}", model_label(config)), &b)
    );
    if config.out.is_some() {
        let dir = config.ensure_out_dir()?;
        let path = dir.join("flops.csv");
        atomic_write(&path, breakdown_csv(&b).as_bytes()).map_err(runtime)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Prints EDIT and baseline totals side by side with deltas and ratios.
pub fn cmd_compare(config: &RunConfig) -> Result<(), CliError> {
    if config.preset.is_none() {
        return Err(usage("compare requires --preset (tiny, small, or base)"));
    }
    let cfg = &config.model;
    let edit_params = count_params(cfg, ModelKind::Edit).total();
    let base_params = count_params(cfg, ModelKind::Baseline).total();
    let edit_macs = estimate_macs(cfg, ModelKind::Edit).total();
    let base_macs = estimate_macs(cfg, ModelKind::Baseline).total();
    let name = config.preset.map(|p| p.name()).unwrap_or("custom");
    println!("{:<22} {:>16} {:>16}", format!("preset {name}"), "params", "MACs");
    println!("{:<22} {:>16} {:>16}", "EDIT", edit_params, edit_macs);
    println!("{:<22} {:>16} {:>16}", "baseline", base_params, base_macs);
    println!(
        "{:<22} {:>16} {:>16}",
        "delta",
        edit_params as i64 - base_params as i64,
        edit_macs as i64 - base_macs as i64
    );
    println!(
        "{:<22} {:>16.4} {:>16.4}",
        "ratio",
        edit_params as f64 / base_params as f64,
        edit_macs as f64 / base_macs as f64
    );
    Ok(())
}
