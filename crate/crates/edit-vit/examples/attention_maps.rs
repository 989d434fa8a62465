//! Per-layer decoder attention maps for one synthetic image.
//!
//! Runs a shapes image through a small EDIT model and writes one grayscale
//! map per layer showing where the class query puts its attention over the
//! patch grid, plus the input image itself for reference. With an untrained
//! model the maps are near-uniform; after training (see the train_shapes
//! example or the `train` subcommand) they concentrate on the drawn shape.
//!
//! Run with: `cargo run --example attention_maps`
//! Output: target/attention-maps/*.pgm

use edit_vit::attention::{cls_attention_grid, AttentionSource};
use edit_vit::config::ModelConfig;
use edit_vit::data::generate_synthetic_shapes;
use edit_vit::export::write_pgm;
use edit_vit::model::{EditModel, Mode};
use std::error::Error;
use std::path::Path;

fn main() -> Result<(), Box<dyn Error>> {
    let cfg = ModelConfig::new(32, 32, 1, 8, 32, 4, 2, 3);
    let model = EditModel::new(cfg.clone(), 0)?;
    let data = generate_synthetic_shapes(1, 7);
    let image = &data.images[0];
    println!("input: class {} ({})", data.labels[0], ["square", "circle", "cross"][data.labels[0]]);

    let out = model.forward(image, Mode::Eval, None)?;
    let dir = Path::new("target/attention-maps");
    std::fs::create_dir_all(dir)?;

    // The raw pixels are standardized to roughly [-1, 1]; shift back for
    // the reference image.
    let pixels: Vec<f32> = image.data.iter().map(|v| (v * 0.5) + 0.5).collect();
    write_pgm(&dir.join("input.pgm"), image.w, image.h, &pixels)?;

    let (grid_h, grid_w) = cfg.grid();
    let mut written = 0;
    for rec in out.attention.iter().filter(|r| r.source == AttentionSource::DecoderCross) {
        let grid = cls_attention_grid(rec, (grid_h, grid_w))?;
        let path = dir.join(format!("layer_{}.pgm", rec.layer_index));
        write_pgm(&path, grid_w, grid_h, &grid)?;
        let peak = grid
            .chunks(grid_w)
            .enumerate()
            .flat_map(|(y, row)| row.iter().enumerate().map(move |(x, &v)| (v, y, x)))
            .fold((f32::MIN, 0, 0), |acc, cur| if cur.0 > acc.0 { cur } else { acc });
        println!(
            "layer {}: wrote {} ({}x{} grid, strongest patch at row {}, col {})",
            rec.layer_index,
            path.display(),
            grid_h,
            grid_w,
            peak.1,
            peak.2
        );
        written += 1;
    }
    assert_eq!(written, cfg.depth, "one decoder map per layer");
    println!("predicted class: {}", argmax(&out.logits));
    Ok(())
}

fn argmax(v: &[f32]) -> usize {
    v.iter().enumerate().fold((0, f32::MIN), |best, (i, &x)| if x > best.1 { (i, x) } else { best }).0
}
