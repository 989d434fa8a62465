//! Closed-form parameter and multiply-accumulate accounting.
//!
//! Prints, for each preset size, the component-level breakdown of parameter
//! counts and per-image MAC estimates for the EDIT architecture and the
//! class-token baseline, plus the relative cost of the shared decoder.
//!
//! Run with: `cargo run --example params_and_macs`

use edit_vit::config::Preset;
use edit_vit::model::{count_params, estimate_macs, Breakdown, ModelKind};

fn print_breakdown(label: &str, breakdown: &Breakdown) {
    println!("  {label}:");
    for item in &breakdown.items {
        if item.multiplier == 1 {
            println!("    {:<28} {:>14}", item.name, item.subtotal());
        } else {
            println!(
                "    {:<28} {:>14}   ({} x {})",
                item.name,
                item.subtotal(),
                item.multiplier,
                item.count
            );
        }
    }
    println!("    {:<28} {:>14}", "total", breakdown.total());
}

fn main() {
    for preset in [Preset::Tiny, Preset::Small, Preset::Base] {
        let cfg = preset.model_config();
        println!(
            "== {}: dim {}, heads {}, depth {}, {} patches of {}x{}x{} ==",
            preset.name(),
            cfg.dim,
            cfg.heads,
            cfg.depth,
            cfg.num_patches(),
            cfg.patch,
            cfg.patch,
            cfg.channels
        );
        let mut totals = [(0u64, 0u64); 2];
        for (slot, kind) in [ModelKind::Edit, ModelKind::Baseline].into_iter().enumerate() {
            let params = count_params(&cfg, kind);
            let macs = estimate_macs(&cfg, kind);
            println!("{kind:?} parameters");
            print_breakdown("params", &params);
            print_breakdown("MACs per image", &macs);
            totals[slot] = (params.total(), macs.total());
        }
        let (edit_p, edit_m) = totals[0];
        let (base_p, base_m) = totals[1];
        println!(
            "EDIT / baseline: params {:.4}, MACs {:.4}\n",
            edit_p as f64 / base_p as f64,
            edit_m as f64 / base_m as f64
        );
    }
}
