//! Test-side reference implementation, written independently of the library.
//!
//! Matrices are vectors of row vectors, every intermediate is f64, and the
//! forward passes are straight-line code with no tape, no node ids, and no
//! shared storage layout with the crate under test. Tests compare library
//! logits and gradients against this reference, so agreement is evidence
//! that both implementations encode the same architecture rather than the
//! same bug.

#![allow(dead_code)]

use edit_vit::config::{DecoderLayout, DecoderNorm};
use edit_vit::data::Image;
use edit_vit::model::{
    BaselineVitModel, DecoderParams, EditModel, EncoderLayerParams, LinearParams, Model,
};
use edit_vit::tensor::Tensor;

/// Layer-norm epsilon used by the models under test.
pub const LN_EPS: f64 = 1e-6;

pub type Mat = Vec<Vec<f64>>;

/// Interprets a tensor as a matrix of row vectors; rank-1 tensors become a
/// single row.
pub fn mat_of(t: &Tensor) -> Mat {
    let data = t.data();
    match *t.shape() {
        [rows, cols] => (0..rows)
            .map(|r| data[r * cols..(r + 1) * cols].iter().map(|&v| v as f64).collect())
            .collect(),
        [len] => vec![data[..len].iter().map(|&v| v as f64).collect()],
        _ => panic!("reference expects rank-1 or rank-2 tensors"),
    }
}

pub fn row_of(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let inner = b.len();
    let cols = b[0].len();
    a.iter()
        .map(|row| {
            assert_eq!(row.len(), inner);
            let mut out = vec![0.0f64; cols];
            for (k, &x) in row.iter().enumerate() {
                for (o, &w) in out.iter_mut().zip(&b[k]) {
                    *o += x * w;
                }
            }
            out
        })
        .collect()
}

pub fn add_bias(m: &Mat, bias: &[f64]) -> Mat {
    m.iter()
        .map(|row| row.iter().zip(bias).map(|(&x, &b)| x + b).collect())
        .collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(&x, &y)| x + y).collect())
        .collect()
}

/// Per-row standardization (population variance, epsilon inside the square
/// root) followed by the affine scale and shift.
pub fn layer_norm(m: &Mat, gamma: &[f64], beta: &[f64]) -> Mat {
    m.iter()
        .map(|row| {
            let d = row.len() as f64;
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            row.iter()
                .zip(gamma.iter().zip(beta))
                .map(|(&v, (&g, &b))| (v - mean) * inv * g + b)
                .collect()
        })
        .collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Independent patch extraction: row-major over the patch grid, pixels
/// row-major inside each patch, channels innermost.
pub fn patchify(image: &Image, patch: usize) -> Mat {
    assert!(patch > 0 && image.h % patch == 0 && image.w % patch == 0);
    let mut rows = Vec::new();
    for gy in 0..image.h / patch {
        for gx in 0..image.w / patch {
            let mut row = Vec::with_capacity(patch * patch * image.c);
            for py in 0..patch {
                for px in 0..patch {
                    for ch in 0..image.c {
                        row.push(image.get(gy * patch + py, gx * patch + px, ch) as f64);
                    }
                }
            }
            rows.push(row);
        }
    }
    rows
}

fn linear(m: &Mat, p: &LinearParams) -> Mat {
    add_bias(&matmul(m, &mat_of(&p.weight)), &row_of(&p.bias))
}

fn self_attention(u: &Mat, layer: &EncoderLayerParams, heads: usize) -> Mat {
    let d = u[0].len();
    assert_eq!(d % heads, 0);
    let dh = d / heads;
    let q = linear(u, &layer.w_q);
    let k = linear(u, &layer.w_k);
    let v = linear(u, &layer.w_v);
    let scale = 1.0 / (dh as f64).sqrt();

    let mut cat: Mat = vec![Vec::with_capacity(d); u.len()];
    for h in 0..heads {
        let slice = |m: &Mat, row: usize| m[row][h * dh..(h + 1) * dh].to_vec();
        for (i, out_row) in cat.iter_mut().enumerate() {
            let qi = slice(&q, i);
            let scores: Vec<f64> = (0..u.len())
                .map(|j| {
                    let kj = slice(&k, j);
                    qi.iter().zip(&kj).map(|(&a, &b)| a * b).sum::<f64>() * scale
                })
                .collect();
            let attn = softmax(&scores);
            let mut acc = vec![0.0f64; dh];
            for (j, &a) in attn.iter().enumerate() {
                for (slot, &value) in acc.iter_mut().zip(&slice(&v, j)) {
                    *slot += a * value;
                }
            }
            out_row.extend(acc);
        }
    }
    linear(&cat, &layer.w_o)
}

fn encoder_layer(z: &Mat, layer: &EncoderLayerParams, heads: usize) -> Mat {
    let u = layer_norm(z, &row_of(&layer.norm1.gamma), &row_of(&layer.norm1.beta));
    let a = add(z, &self_attention(&u, layer, heads));

    let u = layer_norm(&a, &row_of(&layer.norm2.gamma), &row_of(&layer.norm2.beta));
    let h: Mat = linear(&u, &layer.ffn_w1)
        .iter()
        .map(|row| row.iter().map(|&x| gelu(x)).collect())
        .collect();
    add(&a, &linear(&h, &layer.ffn_w2))
}

/// One decoder step: returns the next class state and the attention row.
fn decoder_step(
    c: &[f64],
    p: &Mat,
    dec: &DecoderParams,
    layout: DecoderLayout,
    placement: DecoderNorm,
    include_cls: bool,
) -> (Vec<f64>, Vec<f64>) {
    let d = c.len();
    let mut s: Mat = vec![c.to_vec()];
    s.extend(p.iter().cloned());
    let u = match placement {
        DecoderNorm::Pre => layer_norm(&s, &row_of(&dec.norm.gamma), &row_of(&dec.norm.beta)),
        DecoderNorm::Post => s.clone(),
    };
    let q_row: Mat = vec![u[0].clone()];
    let q = match (layout, &dec.w_q) {
        (DecoderLayout::Qkvo, Some(wq)) => matmul(&q_row, &mat_of(wq)),
        _ => q_row,
    };
    let kv: Mat = if include_cls { u.clone() } else { u[1..].to_vec() };
    let keys = matmul(&kv, &mat_of(&dec.w_k));
    let values = matmul(&kv, &mat_of(&dec.w_v));
    let scale = 1.0 / (d as f64).sqrt();
    let scores: Vec<f64> = keys
        .iter()
        .map(|k| q[0].iter().zip(k).map(|(&a, &b)| a * b).sum::<f64>() * scale)
        .collect();
    let attn = softmax(&scores);
    let mut ctx = vec![0.0f64; d];
    for (j, &a) in attn.iter().enumerate() {
        for (slot, &v) in ctx.iter_mut().zip(&values[j]) {
            *slot += a * v;
        }
    }
    let ctx = match (layout, &dec.w_o) {
        (DecoderLayout::Qkvo, Some(wo)) => matmul(&vec![ctx], &mat_of(wo)).remove(0),
        _ => ctx,
    };
    let summed: Vec<f64> = c.iter().zip(&ctx).map(|(&a, &b)| a + b).collect();
    let next = match placement {
        DecoderNorm::Pre => summed,
        DecoderNorm::Post => layer_norm(
            &vec![summed],
            &row_of(&dec.norm.gamma),
            &row_of(&dec.norm.beta),
        )
        .remove(0),
    };
    (next, attn)
}

/// Full reference forward for the encoder-decoder architecture.
pub fn edit_logits(model: &EditModel, image: &Image) -> Vec<f64> {
    let cfg = model.config();
    let patches = patchify(image, cfg.patch);
    let embedded = linear(&patches, &model.embed);
    let mut p = add(&embedded, &mat_of(&model.pos));
    let mut c = row_of(&model.cls);
    for layer in &model.layers {
        p = encoder_layer(&p, layer, cfg.heads);
        let (next, _) = decoder_step(
            &c,
            &p,
            &model.decoder,
            cfg.decoder_layout,
            cfg.decoder_norm,
            cfg.decoder_includes_cls_in_kv,
        );
        c = next;
    }
    let c_mat = vec![c];
    let c_final = match &model.final_norm {
        Some(n) => layer_norm(&c_mat, &row_of(&n.gamma), &row_of(&n.beta)),
        None => c_mat,
    };
    linear(&c_final, &model.head).remove(0)
}

/// Full reference forward for the class-token baseline.
pub fn baseline_logits(model: &BaselineVitModel, image: &Image) -> Vec<f64> {
    let cfg = model.config();
    let patches = patchify(image, cfg.patch);
    let embedded = linear(&patches, &model.embed);
    let p0 = add(&embedded, &mat_of(&model.pos));
    let mut z: Mat = vec![row_of(&model.cls)];
    z.extend(p0);
    for layer in &model.layers {
        z = encoder_layer(&z, layer, cfg.heads);
    }
    let c_mat = vec![z[0].clone()];
    let c_final = match &model.final_norm {
        Some(n) => layer_norm(&c_mat, &row_of(&n.gamma), &row_of(&n.beta)),
        None => c_mat,
    };
    linear(&c_final, &model.head).remove(0)
}

pub fn model_logits(model: &Model, image: &Image) -> Vec<f64> {
    match model {
        Model::Edit(m) => edit_logits(m, image),
        Model::Baseline(m) => baseline_logits(m, image),
    }
}

/// Label-smoothed cross entropy: logsumexp(z) minus the smoothed-target dot
/// product.
pub fn smoothed_cross_entropy(logits: &[f64], target: usize, epsilon: f64) -> f64 {
    let k = logits.len() as f64;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    let uniform = epsilon / k;
    let dot: f64 = logits
        .iter()
        .enumerate()
        .map(|(j, &z)| {
            let t = if j == target { 1.0 - epsilon + uniform } else { uniform };
            t * z
        })
        .sum();
    lse - dot
}

pub fn edit_loss(model: &EditModel, image: &Image, label: usize, epsilon: f64) -> f64 {
    smoothed_cross_entropy(&edit_logits(model, image), label, epsilon)
}

/// Central-difference slope of `eval` at `orig`, dividing by the realized
/// f32 spacing so parameter rounding does not distort the step size.
pub fn fd_slope(orig: f32, h: f64, mut eval: impl FnMut(f32) -> f64) -> f64 {
    let plus = (orig as f64 + h) as f32;
    let minus = (orig as f64 - h) as f32;
    (eval(plus) - eval(minus)) / (plus as f64 - minus as f64)
}

pub fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y).abs())
        .fold(0.0, f64::max)
}
