//! Trains the micro encoder-decoder model — or the class-token baseline with
//! `--baseline` — on the synthetic shapes task and prints per-epoch metrics.
//!
//! Usage:
//!   cargo run --release -p edit-vit --example train_shapes -- \
//!       [--baseline] [--epochs N] [--batch N] [--base-lr X] [--seed S]

use edit_vit::config::ModelConfig;
use edit_vit::data::generate_synthetic_shapes;
use edit_vit::model::{BaselineVitModel, EditModel, Model};
use edit_vit::train::{train, TrainConfig};

fn main() {
    let mut baseline = false;
    let mut config = TrainConfig::default();
    let mut data_seed: Option<u64> = None;
    let mut model_seed: Option<u64> = None;
    let mut args = std::env::args().skip(1);
    while let Some(arg) = args.next() {
        let mut value = |name: &str| {
            args.next()
                .unwrap_or_else(|| panic!("{name} expects a value"))
        };
        match arg.as_str() {
            "--baseline" => baseline = true,
            "--hflip" => config.hflip = true,
            "--epochs" => config.epochs = value("--epochs").parse().expect("integer epochs"),
            "--batch" => config.batch_size = value("--batch").parse().expect("integer batch"),
            "--base-lr" => config.base_lr = value("--base-lr").parse().expect("numeric base-lr"),
            "--min-lr" => config.min_lr = value("--min-lr").parse().expect("numeric min-lr"),
            "--wd" => config.weight_decay = value("--wd").parse().expect("numeric wd"),
            "--sd" => {
                config.stochastic_depth_rate = value("--sd").parse().expect("numeric sd rate")
            }
            "--ls" => {
                config.label_smoothing = value("--ls").parse().expect("numeric smoothing")
            }
            "--sgd" => {
                config.optimizer = edit_vit::train::OptimizerKind::SgdMomentum;
            }
            "--warmup" => config.warmup_epochs = value("--warmup").parse().expect("integer warmup"),
            "--seed" => config.seed = value("--seed").parse().expect("integer seed"),
            "--data-seed" => data_seed = Some(value("--data-seed").parse().expect("integer seed")),
            "--model-seed" => model_seed = Some(value("--model-seed").parse().expect("integer seed")),
            other => panic!("unknown argument {other}"),
        }
    }

    let geometry = ModelConfig::new(32, 32, 1, 8, 32, 4, 2, 3);
    let data_seed = data_seed.unwrap_or(config.seed);
    let model_seed = model_seed.unwrap_or(config.seed);
    let (train_set, val_set) = generate_synthetic_shapes(750, data_seed).split_at(600);
    let mut model = if baseline {
        Model::Baseline(BaselineVitModel::new(geometry, model_seed).expect("valid geometry"))
    } else {
        Model::Edit(EditModel::new(geometry, model_seed).expect("valid geometry"))
    };
    println!(
        "{} model, {} parameters, {} train / {} val images",
        if baseline { "baseline" } else { "EDIT" },
        model.num_params(),
        train_set.len(),
        val_set.len()
    );

    let start = std::time::Instant::now();
    let metrics = train(&mut model, &train_set, &val_set, &config).expect("training run");
    for rec in &metrics.epochs {
        println!(
            "epoch {:>3}  train_loss {:.6}  val_top1 {:.4}  lr {:.6e}",
            rec.epoch, rec.train_loss, rec.val_top1, rec.lr
        );
    }
    let best = metrics
        .epochs
        .iter()
        .map(|r| r.val_top1)
        .fold(0.0f64, f64::max);
    let train_top1 = edit_vit::train::evaluate(&model, &train_set).expect("train eval");
    println!(
        "best val_top1 {best:.4}  final train_top1 {train_top1:.4} in {:.1}s",
        start.elapsed().as_secs_f64()
    );
}
