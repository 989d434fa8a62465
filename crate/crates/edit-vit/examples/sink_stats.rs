//! Class-token attention-sink measurement on a baseline model.
//!
//! In a class-token transformer the class column of every self-attention
//! matrix shows how much mass each query spends on the class token rather
//! than on image content. This example runs a few synthetic images through
//! a small baseline model, averages that share per layer, and writes the
//! result as CSV plus a bar-chart SVG. The ratio column compares the class
//! column against the mean over all other columns; 1.0 means no special
//! treatment, large values mean the class token acts as an attention sink.
//!
//! Run with: `cargo run --example sink_stats`
//! Output: target/sink-stats/sink_stats.{csv,svg}

use edit_vit::attention::compute_sink_stats;
use edit_vit::config::ModelConfig;
use edit_vit::data::generate_synthetic_shapes;
use edit_vit::export::{write_sink_chart_svg, write_sink_stats_csv};
use edit_vit::model::{BaselineVitModel, Mode};
use std::error::Error;
use std::path::Path;

fn main() -> Result<(), Box<dyn Error>> {
    let cfg = ModelConfig::new(32, 32, 1, 8, 32, 4, 2, 3);
    let model = BaselineVitModel::new(cfg.clone(), 0)?;
    let images = generate_synthetic_shapes(8, 1).images;

    let mut records = Vec::new();
    for image in &images {
        records.extend(model.forward(image, Mode::Eval, None)?.attention);
    }
    println!(
        "collected {} attention matrices from {} images ({} layers x {} heads)",
        records.len(),
        images.len(),
        cfg.depth,
        cfg.heads
    );

    let stats = compute_sink_stats(&records, cfg.depth)?;
    println!("{:<6} {:>11} {:>11} {:>8}", "layer", "cls_share", "mean_other", "ratio");
    for layer in &stats.layers {
        println!(
            "{:<6} {:>11.6} {:>11.6} {:>8.4}",
            layer.layer_index, layer.cls_share, layer.mean_other, layer.ratio
        );
    }

    let dir = Path::new("target/sink-stats");
    std::fs::create_dir_all(dir)?;
    write_sink_stats_csv(&dir.join("sink_stats.csv"), &stats)?;
    write_sink_chart_svg(&dir.join("sink_stats.svg"), &stats)?;
    println!("wrote {}/sink_stats.csv and sink_stats.svg", dir.display());
    println!("(an untrained model stays near ratio 1; training typically grows the class share)");
    Ok(())
}
