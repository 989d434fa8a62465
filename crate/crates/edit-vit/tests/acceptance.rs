//! End-to-end acceptance suite. Each test covers one numbered criterion and
//! prints a single `acceptance NN <name>: pass|fail` line (visible with
//! `--nocapture`; shown automatically on failure).

mod common;

use std::collections::BTreeMap;

use edit_vit::attention::{compute_sink_stats, extract_submatrix, AttentionRecord, AttentionSource};
use edit_vit::cli::{cmd_train, RunConfig};
use edit_vit::config::{DecoderLayout, DecoderNorm, ModelConfig, Preset};
use edit_vit::data::{generate_synthetic_shapes, Image};
use edit_vit::export::{write_attention_csv, write_pgm};
use edit_vit::model::{
    checkpoint_bytes, count_params, decode_records, edit_graph, encode_records, estimate_macs,
    load_checkpoint_bytes, patchify, save_checkpoint, load_checkpoint, BaselineVitModel,
    CheckpointError, DecoderNodes, EditModel, InputStandardization, Mode, Model, ModelKind,
    NormNodes, ResidualDrops, TensorRecord,
};
use edit_vit::tape::Tape;
use edit_vit::train::{train, OptimizerKind, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Prints the per-criterion verdict line, then fails the test on a miss.
fn report(number: u8, name: &str, outcome: Result<(), String>) {
    match &outcome {
        Ok(()) => println!("acceptance {number:02} {name}: pass"),
        Err(detail) => println!("acceptance {number:02} {name}: fail ({detail})"),
    }
    if let Err(detail) = outcome {
        panic!("criterion {number} ({name}): {detail}");
    }
}

macro_rules! check {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = (0..h * w * c).map(|_| rng.gen::<f32>()).collect();
    Image::new(h, w, c, data)
}

const PRESETS: [Preset; 3] = [Preset::Tiny, Preset::Small, Preset::Base];

#[test]
fn criterion_01_parameter_totals() {
    let outcome = (|| {
        // Reference totals for the three preset widths under the default
        // shared-decoder layout, in parameters.
        let targets = [5.82e6, 22.30e6, 87.76e6];
        for (preset, target) in PRESETS.iter().zip(targets) {
            let total = count_params(&preset.model_config(), ModelKind::Edit).total() as f64;
            let rel = (total - target).abs() / target;
            check!(
                rel <= 0.01,
                "{}: {total} vs {target} (rel {rel:.4} > 0.01)",
                preset.name()
            );
        }
        Ok(())
    })();
    report(1, "parameter-totals", outcome);
}

#[test]
fn criterion_02_mac_totals() {
    let outcome = (|| {
        let targets = [1.42e9, 5.28e9, 20.27e9];
        for (preset, target) in PRESETS.iter().zip(targets) {
            let total = estimate_macs(&preset.model_config(), ModelKind::Edit).total() as f64;
            let rel = (total - target).abs() / target;
            check!(
                rel <= 0.03,
                "{}: {total} vs {target} (rel {rel:.4} > 0.03)",
                preset.name()
            );
        }
        let small = estimate_macs(&Preset::Small.model_config(), ModelKind::Baseline).total() as f64;
        let rel = (small - 4.6e9).abs() / 4.6e9;
        check!(rel <= 0.03, "baseline small: {small} vs 4.6e9 (rel {rel:.4} > 0.03)");
        Ok(())
    })();
    report(2, "mac-totals", outcome);
}

#[test]
fn criterion_03_mac_overhead_ratios() {
    let outcome = (|| {
        let targets = [1.12, 1.14, 1.15];
        for (preset, target) in PRESETS.iter().zip(targets) {
            let cfg = preset.model_config();
            let edit = estimate_macs(&cfg, ModelKind::Edit).total() as f64;
            let baseline = estimate_macs(&cfg, ModelKind::Baseline).total() as f64;
            let ratio = edit / baseline;
            check!(
                (ratio - target).abs() <= 0.03,
                "{}: ratio {ratio:.5} vs {target} (|diff| > 0.03)",
                preset.name()
            );
        }
        Ok(())
    })();
    report(3, "mac-overhead-ratios", outcome);
}

#[test]
fn criterion_04_attention_geometry_224() {
    let outcome = (|| {
        let cfg = Preset::Tiny.model_config();
        let model = BaselineVitModel::new(cfg.clone(), 4).map_err(|e| e.to_string())?;
        let image = random_image(224, 224, 3, 40);
        let out = model.forward(&image, Mode::Eval, None).map_err(|e| e.to_string())?;

        let records: Vec<&AttentionRecord> = out
            .attention
            .iter()
            .filter(|r| r.source == AttentionSource::BaselineSelf)
            .collect();
        check!(
            records.len() == cfg.depth * cfg.heads,
            "expected {} self-attention records, got {}",
            cfg.depth * cfg.heads,
            records.len()
        );
        for rec in &records {
            check!(
                rec.rows == 197 && rec.cols == 197,
                "layer {} head {}: {}x{} instead of 197x197",
                rec.layer_index,
                rec.head_index,
                rec.rows,
                rec.cols
            );
        }

        let block = extract_submatrix(records[0], 16).map_err(|e| e.to_string())?;
        check!(block.len() == 256, "submatrix has {} values", block.len());
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let pgm = dir.path().join("block.pgm");
        let csv = dir.path().join("block.csv");
        write_pgm(&pgm, 16, 16, &block).map_err(|e| e.to_string())?;
        write_attention_csv(&csv, 0, 16, 16, &block).map_err(|e| e.to_string())?;
        let pgm_bytes = std::fs::read(&pgm).map_err(|e| e.to_string())?;
        check!(
            pgm_bytes.starts_with(b"P5\n16 16\n255\n") && pgm_bytes.len() == 13 + 256,
            "unexpected exported image layout ({} bytes)",
            pgm_bytes.len()
        );
        let csv_text = std::fs::read_to_string(&csv).map_err(|e| e.to_string())?;
        check!(
            csv_text.lines().count() == 1 + 256,
            "exported table has {} lines",
            csv_text.lines().count()
        );
        Ok(())
    })();
    report(4, "attention-geometry-224", outcome);
}

#[test]
fn criterion_05_gradients_match_finite_differences() {
    let outcome = (|| {
        let cfg = ModelConfig::new(16, 16, 1, 8, 8, 2, 2, 3);
        let model = EditModel::new(cfg.clone(), 11).map_err(|e| e.to_string())?;
        let image = random_image(16, 16, 1, 50);
        let label = 1usize;
        const EPSILON: f32 = 0.1;

        // Analytic gradients from one reverse pass.
        let mut tape = Tape::new();
        let nodes = model.bind(&mut tape);
        let patches = patchify(&image, cfg.patch).map_err(|e| e.to_string())?;
        let pnode = tape.constant(cfg.num_patches(), cfg.patch_len(), patches);
        let decoders = vec![nodes.decoder; cfg.depth];
        let drops = vec![ResidualDrops::default(); cfg.depth];
        let graph = edit_graph(&mut tape, &cfg, &nodes, &decoders, pnode, &drops, 1.0)
            .map_err(|e| e.to_string())?;
        let loss = tape
            .cross_entropy_label_smoothing(graph.logits, label, EPSILON)
            .map_err(|e| e.to_string())?;

        // The independent forward must agree on the value being
        // differentiated before its slopes mean anything.
        let ref_logits = common::edit_logits(&model, &image);
        let logits_gap = common::max_abs_diff(tape.value(graph.logits), &ref_logits);
        check!(logits_gap <= 1e-4, "reference and tape logits differ by {logits_gap:.2e}");

        tape.backward(loss).map_err(|e| e.to_string())?;
        let flat = nodes.flat();
        let named = model.named_params();
        check!(flat.len() == named.len(), "node/parameter count mismatch");

        let mut checked = 0usize;
        let mut worst: (f64, String) = (0.0, String::new());
        for (pi, view) in named.iter().enumerate() {
            let grad = tape.grad(flat[pi]);
            for ei in 0..view.tensor.numel() {
                let analytic = grad.map_or(0.0, |g| g[ei]) as f64;
                let orig = view.tensor.data()[ei];
                // The reference loss is evaluated in f64, so the step can be
                // small without cancellation noise; 1e-4 keeps the O(h^2)
                // truncation term well under the tolerance.
                let fd = common::fd_slope(orig, 1e-4, |v| {
                    let mut probe = model.clone();
                    probe.named_params_mut()[pi].tensor.data_mut()[ei] = v;
                    common::edit_loss(&probe, &image, label, f64::from(EPSILON))
                });
                let diff = (analytic - fd).abs();
                let tol = (1e-3 * analytic.abs().max(fd.abs())).max(1e-5);
                check!(
                    diff <= tol,
                    "{}[{ei}]: analytic {analytic:.6e} vs fd {fd:.6e} (diff {diff:.2e} > tol {tol:.2e})",
                    view.name
                );
                if diff > worst.0 {
                    worst = (diff, format!("{}[{ei}]", view.name));
                }
                checked += 1;
            }
        }
        check!(
            checked == model.num_params(),
            "checked {checked} of {} parameters",
            model.num_params()
        );
        println!("  (all {checked} parameter gradients verified; worst case {} at {:.2e})", worst.1, worst.0);
        Ok(())
    })();
    report(5, "gradient-finite-differences", outcome);
}

#[test]
fn criterion_06_attention_rows_are_stochastic() {
    let outcome = (|| {
        for seed in 0u64..100 {
            let small = ModelConfig::new(16, 16, 1, 8, 8, 2, 2, 3);
            let mut wide = ModelConfig::new(32, 32, 1, 8, 32, 4, 2, 3);
            if seed % 8 >= 4 {
                // Exercise the optional decoder shapes on half the seeds.
                wide.decoder_layout = DecoderLayout::Qkvo;
                wide.decoder_includes_cls_in_kv = false;
                wide.decoder_norm = DecoderNorm::Post;
            }
            let (model, h, w): (Model, usize, usize) = match seed % 4 {
                0 => (Model::Edit(EditModel::new(small, seed).unwrap()), 16, 16),
                1 => (Model::Baseline(BaselineVitModel::new(small, seed).unwrap()), 16, 16),
                2 => (Model::Edit(EditModel::new(wide, seed).unwrap()), 32, 32),
                _ => (Model::Baseline(BaselineVitModel::new(wide, seed).unwrap()), 32, 32),
            };
            let image = random_image(h, w, 1, 1000 + seed);
            let out = model.forward(&image, Mode::Eval, None).map_err(|e| e.to_string())?;
            let cfg = model.config();
            let expected = match model.kind() {
                ModelKind::Edit => cfg.depth * cfg.heads + cfg.depth,
                ModelKind::Baseline => cfg.depth * cfg.heads,
            };
            check!(
                out.attention.len() == expected,
                "seed {seed}: captured {} attention matrices, expected {expected}",
                out.attention.len()
            );
            for rec in &out.attention {
                let dev = rec.max_row_sum_deviation();
                check!(
                    dev < 1e-5,
                    "seed {seed}, layer {} head {} ({:?}): row sum deviates by {dev:.2e}",
                    rec.layer_index,
                    rec.head_index,
                    rec.source
                );
            }
        }
        Ok(())
    })();
    report(6, "row-stochastic-attention", outcome);
}

#[test]
fn criterion_07_shared_decoder_gradient_is_sum_of_clones() {
    let outcome = (|| {
        let cfg = ModelConfig::new(16, 16, 1, 8, 8, 2, 2, 3);
        let model = EditModel::new(cfg.clone(), 21).map_err(|e| e.to_string())?;
        let image = random_image(16, 16, 1, 70);
        let label = 2usize;
        let patches = patchify(&image, cfg.patch).map_err(|e| e.to_string())?;
        let drops = vec![ResidualDrops::default(); cfg.depth];

        // Run A: every layer consumes the same decoder leaves.
        let mut shared_tape = Tape::new();
        let nodes = model.bind(&mut shared_tape);
        let pnode = shared_tape.constant(cfg.num_patches(), cfg.patch_len(), patches.clone());
        let decoders = vec![nodes.decoder; cfg.depth];
        let graph = edit_graph(&mut shared_tape, &cfg, &nodes, &decoders, pnode, &drops, 1.0)
            .map_err(|e| e.to_string())?;
        let loss = shared_tape
            .cross_entropy_label_smoothing(graph.logits, label, 0.1)
            .map_err(|e| e.to_string())?;
        let shared_logits = shared_tape.value(graph.logits).to_vec();
        shared_tape.backward(loss).map_err(|e| e.to_string())?;

        // Run B: per-layer decoder clones with identical values.
        let mut clone_tape = Tape::new();
        let nodes_b = model.bind(&mut clone_tape);
        let pnode_b = clone_tape.constant(cfg.num_patches(), cfg.patch_len(), patches);
        let clones: Vec<DecoderNodes> = (0..cfg.depth)
            .map(|_| DecoderNodes {
                norm: NormNodes {
                    gamma: clone_tape.leaf(&model.decoder.norm.gamma),
                    beta: clone_tape.leaf(&model.decoder.norm.beta),
                },
                w_k: clone_tape.leaf(&model.decoder.w_k),
                w_v: clone_tape.leaf(&model.decoder.w_v),
                w_q: model.decoder.w_q.as_ref().map(|t| clone_tape.leaf(t)),
                w_o: model.decoder.w_o.as_ref().map(|t| clone_tape.leaf(t)),
            })
            .collect();
        let graph_b = edit_graph(&mut clone_tape, &cfg, &nodes_b, &clones, pnode_b, &drops, 1.0)
            .map_err(|e| e.to_string())?;
        let loss_b = clone_tape
            .cross_entropy_label_smoothing(graph_b.logits, label, 0.1)
            .map_err(|e| e.to_string())?;
        let clone_logits = clone_tape.value(graph_b.logits).to_vec();
        clone_tape.backward(loss_b).map_err(|e| e.to_string())?;

        for (i, (&a, &b)) in shared_logits.iter().zip(&clone_logits).enumerate() {
            check!(
                (a - b).abs() <= 1e-7,
                "logit {i} differs between runs: {a} vs {b}"
            );
        }

        // The shared gradient must equal the sum over layer clones.
        let shared_nodes = [
            ("decoder.norm.gamma", nodes.decoder.norm.gamma),
            ("decoder.norm.beta", nodes.decoder.norm.beta),
            ("decoder.w_k", nodes.decoder.w_k),
            ("decoder.w_v", nodes.decoder.w_v),
        ];
        for (slot, (name, shared_id)) in shared_nodes.iter().enumerate() {
            let shared_grad = shared_tape
                .grad(*shared_id)
                .ok_or_else(|| format!("{name}: shared run produced no gradient"))?;
            let mut summed = vec![0.0f64; shared_grad.len()];
            for dec in &clones {
                let clone_id = match slot {
                    0 => dec.norm.gamma,
                    1 => dec.norm.beta,
                    2 => dec.w_k,
                    _ => dec.w_v,
                };
                let g = clone_tape
                    .grad(clone_id)
                    .ok_or_else(|| format!("{name}: clone run produced no gradient"))?;
                for (acc, &v) in summed.iter_mut().zip(g) {
                    *acc += v as f64;
                }
            }
            for (i, (&a, &b)) in shared_grad.iter().zip(&summed).enumerate() {
                let a = a as f64;
                let diff = (a - b).abs();
                let tol = (1e-4 * a.abs().max(b.abs())).max(1e-7);
                check!(
                    diff <= tol,
                    "{name}[{i}]: shared {a:.6e} vs clone sum {b:.6e} (diff {diff:.2e})"
                );
            }
        }

        // Sanity: gradients of everything outside the decoder agree between
        // the two runs.
        let flat_a = nodes.flat();
        let flat_b = nodes_b.flat();
        for (view, (&ida, &idb)) in model.named_params().iter().zip(flat_a.iter().zip(&flat_b)) {
            if view.name.starts_with("decoder.") {
                continue;
            }
            let ga = shared_tape.grad(ida);
            let gb = clone_tape.grad(idb);
            let (ga, gb) = match (ga, gb) {
                (Some(a), Some(b)) => (a, b),
                (None, None) => continue,
                _ => return Err(format!("{}: gradient present in only one run", view.name)),
            };
            for (i, (&a, &b)) in ga.iter().zip(gb).enumerate() {
                let diff = (a as f64 - b as f64).abs();
                let tol = (1e-6 * (a.abs().max(b.abs()) as f64)).max(1e-9);
                check!(
                    diff <= tol,
                    "{}[{i}] differs between shared and clone runs: {a} vs {b}",
                    view.name
                );
            }
        }
        Ok(())
    })();
    report(7, "shared-decoder-gradients", outcome);
}

/// Rearranges the patch grid of `image`: destination cell `t` receives the
/// content of source cell `perm[t]`.
fn permute_patches(image: &Image, patch: usize, perm: &[usize]) -> Image {
    let grid_w = image.w / patch;
    let mut out = Image::new(image.h, image.w, image.c, vec![0.0; image.h * image.w * image.c]);
    for (dst, &src) in perm.iter().enumerate() {
        let (dy, dx) = (dst / grid_w, dst % grid_w);
        let (sy, sx) = (src / grid_w, src % grid_w);
        for py in 0..patch {
            for px in 0..patch {
                for ch in 0..image.c {
                    let v = image.get(sy * patch + py, sx * patch + px, ch);
                    out.set(dy * patch + py, dx * patch + px, ch, v);
                }
            }
        }
    }
    out
}

#[test]
fn criterion_08_patch_permutation_invariance_without_positions() {
    let outcome = (|| {
        let cfg = ModelConfig::new(32, 32, 1, 8, 32, 4, 2, 3);
        let mut model = EditModel::new(cfg.clone(), 5).map_err(|e| e.to_string())?;
        model.pos.data_mut().fill(0.0);
        let image = random_image(32, 32, 1, 80);
        let base = model
            .forward(&image, Mode::Eval, None)
            .map_err(|e| e.to_string())?
            .logits;

        let n = cfg.num_patches();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for trial in 0..20 {
            let mut perm: Vec<usize> = (0..n).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng);
            let shuffled = permute_patches(&image, cfg.patch, &perm);
            let logits = model
                .forward(&shuffled, Mode::Eval, None)
                .map_err(|e| e.to_string())?
                .logits;
            for (i, (&a, &b)) in base.iter().zip(&logits).enumerate() {
                check!(
                    (a - b).abs() <= 1e-5,
                    "trial {trial}, logit {i}: {a} vs {b} after patch permutation"
                );
            }
        }
        Ok(())
    })();
    report(8, "patch-permutation-invariance", outcome);
}

/// Independent re-computation of the per-layer class-column statistics:
/// collect every value first, then average, instead of streaming sums.
fn brute_force_sink_stats(records: &[AttentionRecord], depth: usize) -> Vec<(f64, f64)> {
    (0..depth)
        .map(|layer| {
            let mut cls: Vec<f64> = Vec::new();
            let mut other: Vec<f64> = Vec::new();
            for rec in records {
                if rec.source != AttentionSource::BaselineSelf || rec.layer_index != layer {
                    continue;
                }
                for row in 0..rec.rows {
                    for col in 0..rec.cols {
                        let v = rec.get(row, col) as f64;
                        if col == 0 {
                            cls.push(v);
                        } else {
                            other.push(v);
                        }
                    }
                }
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            (mean(&cls), mean(&other))
        })
        .collect()
}

#[test]
fn criterion_09_sink_statistics_match_brute_force() {
    let outcome = (|| {
        let depth = 5usize;
        let cols = 10usize;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut records = Vec::new();
        for i in 0..50 {
            let rows = rng.gen_range(1..=8usize);
            let mut matrix = vec![0.0f32; rows * cols];
            for row in matrix.chunks_mut(cols) {
                let mut sum = 0.0f32;
                for v in row.iter_mut() {
                    *v = rng.gen_range(0.01f32..1.0);
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
            records.push(AttentionRecord {
                layer_index: i % depth,
                head_index: i / depth,
                rows,
                cols,
                matrix,
                source: AttentionSource::BaselineSelf,
            });
        }
        // Decoys from other sources must not contribute.
        for (i, source) in [AttentionSource::EncoderSelf, AttentionSource::DecoderCross]
            .into_iter()
            .enumerate()
        {
            records.push(AttentionRecord {
                layer_index: i,
                head_index: 0,
                rows: 1,
                cols,
                matrix: vec![99.0; cols],
                source,
            });
        }

        let stats = compute_sink_stats(&records, depth).map_err(|e| e.to_string())?;
        let brute = brute_force_sink_stats(&records, depth);
        check!(stats.layers.len() == depth, "expected {depth} layers");
        for (layer, &(cls, other)) in stats.layers.iter().zip(&brute) {
            check!(
                (layer.cls_share - cls).abs() <= 1e-9,
                "layer {}: cls share {:.12} vs brute force {:.12}",
                layer.layer_index,
                layer.cls_share,
                cls
            );
            check!(
                (layer.mean_other - other).abs() <= 1e-9,
                "layer {}: mean other {:.12} vs brute force {:.12}",
                layer.layer_index,
                layer.mean_other,
                other
            );
            let expected_ratio = cls / other;
            check!(
                (layer.ratio - expected_ratio).abs() <= 1e-9 * expected_ratio.abs().max(1.0),
                "layer {}: ratio {:.12} vs {:.12}",
                layer.layer_index,
                layer.ratio,
                expected_ratio
            );
            // Row-stochastic input means class share and the remaining mass
            // must add back to one.
            let mass = layer.cls_share + (cols - 1) as f64 * layer.mean_other;
            check!(
                (mass - 1.0).abs() <= 1e-5,
                "layer {}: total attention mass {mass:.8} is not 1",
                layer.layer_index
            );
        }
        Ok(())
    })();
    report(9, "sink-statistics-oracle", outcome);
}

#[test]
fn criterion_10_both_architectures_learn_the_shapes_task() {
    let outcome = (|| {
        let geometry = ModelConfig::new(32, 32, 1, 8, 32, 4, 2, 3);
        let (train_set, val_set) = generate_synthetic_shapes(750, 0).split_at(600);
        check!(train_set.len() == 600 && val_set.len() == 150, "bad split sizes");

        // Frozen micro recipes; the two architectures favor slightly
        // different step sizes and warmups at this scale.
        let edit_recipe = TrainConfig {
            epochs: 30,
            batch_size: 8,
            base_lr: 2e-3,
            min_lr: 1e-5,
            warmup_epochs: 1,
            weight_decay: 0.05,
            label_smoothing: 0.1,
            stochastic_depth_rate: 0.0,
            seed: 0,
            hflip: true,
            optimizer: OptimizerKind::AdamW,
        };
        let baseline_recipe = TrainConfig {
            base_lr: 3e-3,
            warmup_epochs: 3,
            ..edit_recipe.clone()
        };

        let mut results = Vec::new();
        for (name, mut model, recipe) in [
            (
                "edit",
                Model::Edit(EditModel::new(geometry.clone(), 0).map_err(|e| e.to_string())?),
                &edit_recipe,
            ),
            (
                "baseline",
                Model::Baseline(
                    BaselineVitModel::new(geometry.clone(), 0).map_err(|e| e.to_string())?,
                ),
                &baseline_recipe,
            ),
        ] {
            let metrics =
                train(&mut model, &train_set, &val_set, recipe).map_err(|e| e.to_string())?;
            check!(
                metrics.epochs.len() == 30,
                "{name}: ran {} epochs",
                metrics.epochs.len()
            );
            let best = metrics.epochs.iter().map(|r| r.val_top1).fold(0.0f64, f64::max);
            check!(
                best >= 0.90,
                "{name}: best validation top-1 {best:.4} is below 0.90"
            );
            results.push(format!("{name} {best:.4}"));
        }
        println!("  (best val top-1: {})", results.join(", "));
        Ok(())
    })();
    report(10, "training-sanity", outcome);
}

#[test]
fn criterion_11_checkpoint_round_trip_and_corruption() {
    let outcome = (|| {
        let cfg = ModelConfig::new(16, 16, 1, 8, 8, 2, 2, 3);
        let image = random_image(16, 16, 1, 90);

        // Round trip through the filesystem for both architectures.
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        for (name, mut model) in [
            ("edit", Model::Edit(EditModel::new(cfg.clone(), 7).map_err(|e| e.to_string())?)),
            (
                "baseline",
                Model::Baseline(BaselineVitModel::new(cfg.clone(), 7).map_err(|e| e.to_string())?),
            ),
        ] {
            model.set_input_standardization(InputStandardization {
                mean: vec![0.25],
                std: vec![0.5],
            });
            let path = dir.path().join(format!("{name}.edt"));
            save_checkpoint(&model, &path).map_err(|e| e.to_string())?;
            let loaded = load_checkpoint(&path).map_err(|e| e.to_string())?;
            let a = model.forward(&image, Mode::Eval, None).map_err(|e| e.to_string())?;
            let b = loaded.forward(&image, Mode::Eval, None).map_err(|e| e.to_string())?;
            for (i, (&x, &y)) in a.logits.iter().zip(&b.logits).enumerate() {
                check!(
                    x.to_bits() == y.to_bits(),
                    "{name}: logit {i} not bit-identical after round trip ({x} vs {y})"
                );
            }
            check!(
                loaded.input_standardization() == model.input_standardization(),
                "{name}: standardization constants lost in round trip"
            );
        }

        // Corruption fixtures, each hitting its own structured error.
        let model = Model::Edit(EditModel::new(cfg, 7).map_err(|e| e.to_string())?);
        let good = checkpoint_bytes(&model);

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        check!(
            matches!(
                load_checkpoint_bytes(&bad_magic),
                Err(CheckpointError::BadMagic { found }) if &found == b"XDT1"
            ),
            "magic corruption not detected"
        );

        let mut bad_version = good.clone();
        bad_version[4..8].copy_from_slice(&9u32.to_le_bytes());
        check!(
            matches!(
                load_checkpoint_bytes(&bad_version),
                Err(CheckpointError::UnsupportedVersion { found: 9 })
            ),
            "version corruption not detected"
        );

        for cut in [5, good.len() / 2, good.len() - 10] {
            check!(
                matches!(
                    load_checkpoint_bytes(&good[..cut]),
                    Err(CheckpointError::Truncated)
                ),
                "truncation at {cut} bytes not detected"
            );
        }

        let mut flipped = good.clone();
        let idx = good.len() - 6; // inside the last tensor's payload
        flipped[idx] ^= 0xFF;
        check!(
            matches!(
                load_checkpoint_bytes(&flipped),
                Err(CheckpointError::CrcMismatch { .. })
            ),
            "payload bit flip not detected by the checksum"
        );

        let records = decode_records(&good).map_err(|e| e.to_string())?;
        let reshape = |records: &[TensorRecord], target: &str| -> Vec<u8> {
            let mutated: Vec<TensorRecord> = records
                .iter()
                .map(|r| {
                    let mut dims = r.dims.clone();
                    if r.name == target {
                        dims.reverse();
                    }
                    TensorRecord::new(r.name.clone(), dims, r.data.clone())
                })
                .collect();
            encode_records(&mutated)
        };
        let swapped = reshape(&records, "layers.0.ffn.w1.weight");
        check!(
            matches!(
                load_checkpoint_bytes(&swapped),
                Err(CheckpointError::ShapeMismatch { ref name, .. }) if name == "layers.0.ffn.w1.weight"
            ),
            "transposed tensor dims not detected"
        );

        let missing: Vec<TensorRecord> = records
            .iter()
            .filter(|r| r.name != "head.bias")
            .cloned()
            .collect();
        check!(
            matches!(
                load_checkpoint_bytes(&encode_records(&missing)),
                Err(CheckpointError::MissingTensor { ref name }) if name == "head.bias"
            ),
            "missing tensor not detected"
        );

        let mut extra = records.clone();
        extra.push(TensorRecord::new("mystery".to_string(), vec![1], vec![0.0]));
        check!(
            matches!(
                load_checkpoint_bytes(&encode_records(&extra)),
                Err(CheckpointError::UnknownTensor { ref name }) if name == "mystery"
            ),
            "unknown tensor not detected"
        );
        Ok(())
    })();
    report(11, "checkpoint-round-trip", outcome);
}

#[test]
fn criterion_12_training_runs_are_byte_identical() {
    let outcome = (|| {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let run = |out: &std::path::Path| -> Result<(Vec<u8>, Vec<u8>), String> {
            let mut map: BTreeMap<String, String> = BTreeMap::new();
            for (k, v) in [
                ("epochs", "3"),
                ("warmup_epochs", "1"),
                ("batch_size", "8"),
                ("train_count", "32"),
                ("val_count", "8"),
                ("seed", "9"),
                ("hflip", "true"),
                ("stochastic_depth_rate", "0.1"),
            ] {
                map.insert(k.to_string(), v.to_string());
            }
            map.insert("out".to_string(), out.display().to_string());
            let config = RunConfig::from_map(&map).map_err(|e| e.to_string())?;
            cmd_train(&config).map_err(|e| e.to_string())?;
            let metrics = std::fs::read(out.join("metrics.csv")).map_err(|e| e.to_string())?;
            let ckpt = std::fs::read(out.join("model.edt")).map_err(|e| e.to_string())?;
            Ok((metrics, ckpt))
        };

        let (metrics_a, ckpt_a) = run(&dir.path().join("first"))?;
        let (metrics_b, ckpt_b) = run(&dir.path().join("second"))?;
        check!(
            metrics_a == metrics_b,
            "metrics files differ between identical runs ({} vs {} bytes)",
            metrics_a.len(),
            metrics_b.len()
        );
        check!(
            ckpt_a == ckpt_b,
            "checkpoints differ between identical runs ({} vs {} bytes)",
            ckpt_a.len(),
            ckpt_b.len()
        );
        check!(!metrics_a.is_empty() && !ckpt_a.is_empty(), "empty artifacts");
        Ok(())
    })();
    report(12, "train-determinism", outcome);
}
