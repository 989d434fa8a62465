//! Spot-check of analytic gradients against finite differences.
//!
//! Builds the training loss for one image on a micro EDIT model, runs the
//! reverse pass, then re-evaluates the f32 loss at perturbed parameter
//! values for a random sample of coordinates and compares slopes. Because
//! both sides here use the f32 forward pass, the agreement is loose by
//! design; the rigorous full-coverage comparison against an independent
//! f64 evaluator lives in the test suite.
//!
//! Run with: `cargo run --example gradient_check`

use edit_vit::config::ModelConfig;
use edit_vit::model::{edit_graph, patchify, EditModel, ResidualDrops};
use edit_vit::tape::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::error::Error;

const LABEL: usize = 1;
const SMOOTHING: f32 = 0.1;

/// Full f32 training loss for one image, built and evaluated on a fresh tape.
fn loss_value(model: &EditModel, patches: &[f32]) -> Result<f64, Box<dyn Error>> {
    let cfg = model.config();
    let mut tape = Tape::new();
    let nodes = model.bind(&mut tape);
    let pnode = tape.constant(cfg.num_patches(), cfg.patch_len(), patches.to_vec());
    let decoders = vec![nodes.decoder; cfg.depth];
    let drops = vec![ResidualDrops::default(); cfg.depth];
    let graph = edit_graph(&mut tape, cfg, &nodes, &decoders, pnode, &drops, 1.0)?;
    let loss = tape.cross_entropy_label_smoothing(graph.logits, LABEL, SMOOTHING)?;
    Ok(tape.value(loss)[0] as f64)
}

fn main() -> Result<(), Box<dyn Error>> {
    let cfg = ModelConfig::new(16, 16, 1, 8, 8, 2, 2, 3);
    let model = EditModel::new(cfg.clone(), 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let pixels: Vec<f32> = (0..16 * 16).map(|_| rng.gen::<f32>()).collect();
    let image = edit_vit::data::Image::new(16, 16, 1, pixels);
    let patches = patchify(&image, cfg.patch)?;

    // Analytic gradients from one reverse pass.
    let mut tape = Tape::new();
    let nodes = model.bind(&mut tape);
    let pnode = tape.constant(cfg.num_patches(), cfg.patch_len(), patches.clone());
    let decoders = vec![nodes.decoder; cfg.depth];
    let drops = vec![ResidualDrops::default(); cfg.depth];
    let graph = edit_graph(&mut tape, &cfg, &nodes, &decoders, pnode, &drops, 1.0)?;
    let loss = tape.cross_entropy_label_smoothing(graph.logits, LABEL, SMOOTHING)?;
    tape.backward(loss)?;
    println!("loss {:.6} over {} parameters", tape.value(loss)[0], model.num_params());

    // Sample coordinates across every named tensor.
    let flat = nodes.flat();
    let named = model.named_params();
    let h = 3e-3f32;
    let mut worst_abs = 0.0f64;
    let mut worst_at = String::new();
    let mut checked = 0;
    for (pi, view) in named.iter().enumerate() {
        let grad = tape.grad(flat[pi]);
        for _ in 0..4 {
            let ei = rng.gen_range(0..view.tensor.numel());
            let analytic = grad.map_or(0.0, |g| g[ei]) as f64;
            let orig = view.tensor.data()[ei];
            let at = |v: f32| -> Result<f64, Box<dyn Error>> {
                let mut probe = model.clone();
                probe.named_params_mut()[pi].tensor.data_mut()[ei] = v;
                loss_value(&probe, &patches)
            };
            let plus = orig + h;
            let minus = orig - h;
            let fd = (at(plus)? - at(minus)?) / (f64::from(plus) - f64::from(minus));
            let diff = (analytic - fd).abs();
            if diff > worst_abs {
                worst_abs = diff;
                worst_at = format!("{}[{}]", view.name, ei);
            }
            let tol = (5e-2 * analytic.abs().max(fd.abs())).max(2e-3);
            assert!(
                diff <= tol,
                "{}[{}]: analytic {:.6e} vs finite difference {:.6e}",
                view.name,
                ei,
                analytic,
                fd
            );
            checked += 1;
        }
    }
    println!("checked {checked} sampled coordinates, worst |analytic - fd| = {worst_abs:.2e} at {worst_at}");
    println!("agreement within the f32 noise floor: ok");
    Ok(())
}
