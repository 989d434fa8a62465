//! Forward passes as tape graphs, for both architectures.
//!
//! Every function here builds onto a caller-supplied [`Tape`], so the same
//! code path serves inference (build, read values, drop the tape) and
//! training (build, attach a loss, run backward). Model parameters enter the
//! graph through `bind`, which registers each tensor as a leaf and returns a
//! node-id mirror of the parameter structure; passing the same
//! [`DecoderNodes`] to every decoder step is what makes the decoder shared,
//! since gradients accumulate into one set of leaves.

use super::{
    draw_residual_drops, BaselineVitModel, EditModel, ForwardOutput, LayerNormParams,
    LinearParams, Mode, ModelError, LAYER_NORM_EPS,
};
use crate::attention::{AttentionRecord, AttentionSource};
use crate::config::{ConfigError, DecoderLayout, DecoderNorm, ModelConfig};
use crate::data::Image;
use crate::tape::{NodeId, Tape, TapeError};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct NormNodes {
    pub gamma: NodeId,
    pub beta: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearNodes {
    pub weight: NodeId,
    pub bias: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderLayerNodes {
    pub norm1: NormNodes,
    pub w_q: LinearNodes,
    pub w_k: LinearNodes,
    pub w_v: LinearNodes,
    pub w_o: LinearNodes,
    pub norm2: NormNodes,
    pub ffn_w1: LinearNodes,
    pub ffn_w2: LinearNodes,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderNodes {
    pub norm: NormNodes,
    pub w_k: NodeId,
    pub w_v: NodeId,
    pub w_q: Option<NodeId>,
    pub w_o: Option<NodeId>,
}

#[derive(Debug, Clone)]
pub struct EditNodes {
    pub embed: LinearNodes,
    pub pos: NodeId,
    pub cls: NodeId,
    pub layers: Vec<EncoderLayerNodes>,
    pub decoder: DecoderNodes,
    pub final_norm: Option<NormNodes>,
    pub head: LinearNodes,
}

#[derive(Debug, Clone)]
pub struct BaselineNodes {
    pub embed: LinearNodes,
    pub pos: NodeId,
    pub cls: NodeId,
    pub layers: Vec<EncoderLayerNodes>,
    pub final_norm: Option<NormNodes>,
    pub head: LinearNodes,
}

/// Residual-branch drop decisions for one encoder layer.
#[derive(Debug, Clone, Copy, Default)]
pub struct ResidualDrops {
    pub msa: bool,
    pub ffn: bool,
}

fn bind_norm(tape: &mut Tape, p: &LayerNormParams) -> NormNodes {
    NormNodes { gamma: tape.leaf(&p.gamma), beta: tape.leaf(&p.beta) }
}

fn bind_linear(tape: &mut Tape, p: &LinearParams) -> LinearNodes {
    LinearNodes { weight: tape.leaf(&p.weight), bias: tape.leaf(&p.bias) }
}

fn bind_layer(tape: &mut Tape, p: &super::EncoderLayerParams) -> EncoderLayerNodes {
    EncoderLayerNodes {
        norm1: bind_norm(tape, &p.norm1),
        w_q: bind_linear(tape, &p.w_q),
        w_k: bind_linear(tape, &p.w_k),
        w_v: bind_linear(tape, &p.w_v),
        w_o: bind_linear(tape, &p.w_o),
        norm2: bind_norm(tape, &p.norm2),
        ffn_w1: bind_linear(tape, &p.ffn_w1),
        ffn_w2: bind_linear(tape, &p.ffn_w2),
    }
}

impl EditModel {
    /// Registers every parameter on the tape, in `named_params` order.
    pub fn bind(&self, tape: &mut Tape) -> EditNodes {
        let embed = bind_linear(tape, &self.embed);
        let pos = tape.leaf(&self.pos);
        let cls = tape.leaf(&self.cls);
        let layers = self.layers.iter().map(|l| bind_layer(tape, l)).collect();
        let decoder = DecoderNodes {
            norm: bind_norm(tape, &self.decoder.norm),
            w_k: tape.leaf(&self.decoder.w_k),
            w_v: tape.leaf(&self.decoder.w_v),
            w_q: self.decoder.w_q.as_ref().map(|t| tape.leaf(t)),
            w_o: self.decoder.w_o.as_ref().map(|t| tape.leaf(t)),
        };
        let final_norm = self.final_norm.as_ref().map(|n| bind_norm(tape, n));
        let head = bind_linear(tape, &self.head);
        EditNodes { embed, pos, cls, layers, decoder, final_norm, head }
    }
}

impl BaselineVitModel {
    pub fn bind(&self, tape: &mut Tape) -> BaselineNodes {
        let embed = bind_linear(tape, &self.embed);
        let pos = tape.leaf(&self.pos);
        let cls = tape.leaf(&self.cls);
        let layers = self.layers.iter().map(|l| bind_layer(tape, l)).collect();
        let final_norm = self.final_norm.as_ref().map(|n| bind_norm(tape, n));
        let head = bind_linear(tape, &self.head);
        BaselineNodes { embed, pos, cls, layers, final_norm, head }
    }
}

fn flat_norm(n: &NormNodes, out: &mut Vec<NodeId>) {
    out.push(n.gamma);
    out.push(n.beta);
}

fn flat_linear(l: &LinearNodes, out: &mut Vec<NodeId>) {
    out.push(l.weight);
    out.push(l.bias);
}

fn flat_layer(l: &EncoderLayerNodes, out: &mut Vec<NodeId>) {
    flat_norm(&l.norm1, out);
    flat_linear(&l.w_q, out);
    flat_linear(&l.w_k, out);
    flat_linear(&l.w_v, out);
    flat_linear(&l.w_o, out);
    flat_norm(&l.norm2, out);
    flat_linear(&l.ffn_w1, out);
    flat_linear(&l.ffn_w2, out);
}

impl EditNodes {
    /// Node ids in the same order as `EditModel::named_params`, for zipping
    /// tape gradients back onto parameters.
    pub fn flat(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        flat_linear(&self.embed, &mut out);
        out.push(self.pos);
        out.push(self.cls);
        for l in &self.layers {
            flat_layer(l, &mut out);
        }
        flat_norm(&self.decoder.norm, &mut out);
        out.push(self.decoder.w_k);
        out.push(self.decoder.w_v);
        if let Some(q) = self.decoder.w_q {
            out.push(q);
        }
        if let Some(o) = self.decoder.w_o {
            out.push(o);
        }
        if let Some(n) = &self.final_norm {
            flat_norm(n, &mut out);
        }
        flat_linear(&self.head, &mut out);
        out
    }
}

impl BaselineNodes {
    pub fn flat(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        flat_linear(&self.embed, &mut out);
        out.push(self.pos);
        out.push(self.cls);
        for l in &self.layers {
            flat_layer(l, &mut out);
        }
        if let Some(n) = &self.final_norm {
            flat_norm(n, &mut out);
        }
        flat_linear(&self.head, &mut out);
        out
    }
}

/// Splits an image into flattened patches: one row per patch, patches
/// ordered top-left to bottom-right, each row holding the patch's pixels in
/// row-major order with channels innermost.
pub fn patchify(image: &Image, patch: usize) -> Result<Vec<f32>, ModelError> {
    if patch == 0 || image.h % patch != 0 || image.w % patch != 0 {
        return Err(ModelError::Config(ConfigError::ImageNotDivisibleByPatch {
            image_h: image.h,
            image_w: image.w,
            patch,
        }));
    }
    let grid_h = image.h / patch;
    let grid_w = image.w / patch;
    let plen = patch * patch * image.c;
    let mut out = Vec::with_capacity(grid_h * grid_w * plen);
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            for py in 0..patch {
                for px in 0..patch {
                    for ch in 0..image.c {
                        out.push(image.get(gy * patch + py, gx * patch + px, ch));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Projects flattened patches into the model width and adds positional
/// embeddings: p_0 = patches @ E + bias + pos.
pub fn embed_patches(
    tape: &mut Tape,
    patches: NodeId,
    embed: &LinearNodes,
    pos: NodeId,
) -> Result<NodeId, TapeError> {
    let x = tape.matmul(patches, embed.weight)?;
    let x = tape.add_row_bias(x, embed.bias)?;
    tape.add(x, pos)
}

/// Standard multi-head self-attention over an already-normalized input.
///
/// Scores for each head are scaled by the inverse square root of the head
/// width d/heads. Returns the output after the final projection together with
/// one attention node per head.
pub fn multi_head_self_attention(
    tape: &mut Tape,
    x: NodeId,
    w_q: &LinearNodes,
    w_k: &LinearNodes,
    w_v: &LinearNodes,
    w_o: &LinearNodes,
    heads: usize,
) -> Result<(NodeId, Vec<NodeId>), TapeError> {
    let (_, d) = tape.shape(x);
    assert_eq!(d % heads, 0);
    let dh = d / heads;
    let q = tape.matmul(x, w_q.weight)?;
    let q = tape.add_row_bias(q, w_q.bias)?;
    let k = tape.matmul(x, w_k.weight)?;
    let k = tape.add_row_bias(k, w_k.bias)?;
    let v = tape.matmul(x, w_v.weight)?;
    let v = tape.add_row_bias(v, w_v.bias)?;

    let scale = 1.0 / (dh as f32).sqrt();
    let mut head_outs = Vec::with_capacity(heads);
    let mut attns = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt)?;
        let scaled = tape.scale(scores, scale);
        let attn = tape.softmax_rows(scaled);
        attns.push(attn);
        head_outs.push(tape.matmul(attn, vh)?);
    }
    let cat = tape.concat_cols(&head_outs)?;
    let out = tape.matmul(cat, w_o.weight)?;
    let out = tape.add_row_bias(out, w_o.bias)?;
    Ok((out, attns))
}

/// One pre-norm encoder layer: z + MSA(LN(z)), then + FFN(LN(.)).
///
/// A dropped residual branch is skipped entirely (its attention nodes are not
/// produced); kept branches are multiplied by `branch_scale`, which is
/// 1/(1-rate) during stochastic-depth training and 1 otherwise.
pub fn encoder_layer(
    tape: &mut Tape,
    z: NodeId,
    layer: &EncoderLayerNodes,
    heads: usize,
    drops: ResidualDrops,
    branch_scale: f32,
) -> Result<(NodeId, Vec<NodeId>), TapeError> {
    let mut attns = Vec::new();
    let a = if drops.msa {
        z
    } else {
        let u = tape.layer_norm(z, layer.norm1.gamma, layer.norm1.beta, LAYER_NORM_EPS)?;
        let (msa, head_attns) =
            multi_head_self_attention(tape, u, &layer.w_q, &layer.w_k, &layer.w_v, &layer.w_o, heads)?;
        attns = head_attns;
        let msa = if branch_scale != 1.0 { tape.scale(msa, branch_scale) } else { msa };
        tape.add(z, msa)?
    };
    let out = if drops.ffn {
        a
    } else {
        let u = tape.layer_norm(a, layer.norm2.gamma, layer.norm2.beta, LAYER_NORM_EPS)?;
        let h = tape.matmul(u, layer.ffn_w1.weight)?;
        let h = tape.add_row_bias(h, layer.ffn_w1.bias)?;
        let h = tape.gelu(h);
        let f = tape.matmul(h, layer.ffn_w2.weight)?;
        let f = tape.add_row_bias(f, layer.ffn_w2.bias)?;
        let f = if branch_scale != 1.0 { tape.scale(f, branch_scale) } else { f };
        tape.add(a, f)?
    };
    Ok((out, attns))
}

/// One shared-decoder step: the class stream attends over itself and the
/// current encoder output with a single head.
///
/// Under the default layout and pre-norm placement: the class row is
/// prepended to the patch tokens, the joint sequence is normalized once, row
/// 0 of the normalized sequence is the query, keys and values are bias-free
/// projections of the normalized rows, and the attention output is added to
/// the un-normalized class stream. Post-norm instead normalizes
/// c_prev + attention output. Scores are scaled by 1/sqrt(d).
pub fn decoder_layer(
    tape: &mut Tape,
    c_prev: NodeId,
    p_i: NodeId,
    dec: &DecoderNodes,
    layout: DecoderLayout,
    norm_placement: DecoderNorm,
    include_cls_in_kv: bool,
) -> Result<(NodeId, NodeId), TapeError> {
    let (_, d) = tape.shape(c_prev);
    let (n, _) = tape.shape(p_i);
    let s = tape.concat_rows(&[c_prev, p_i])?;
    let u = match norm_placement {
        DecoderNorm::Pre => tape.layer_norm(s, dec.norm.gamma, dec.norm.beta, LAYER_NORM_EPS)?,
        DecoderNorm::Post => s,
    };
    let q0 = tape.slice_rows(u, 0, 1)?;
    let q = match (layout, dec.w_q) {
        (DecoderLayout::Qkvo, Some(wq)) => tape.matmul(q0, wq)?,
        _ => q0,
    };
    let kv = if include_cls_in_kv { u } else { tape.slice_rows(u, 1, n)? };
    let keys = tape.matmul(kv, dec.w_k)?;
    let values = tape.matmul(kv, dec.w_v)?;
    let kt = tape.transpose(keys);
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / (d as f32).sqrt());
    let attn = tape.softmax_rows(scaled);
    let ctx = tape.matmul(attn, values)?;
    let ctx = match (layout, dec.w_o) {
        (DecoderLayout::Qkvo, Some(wo)) => tape.matmul(ctx, wo)?,
        _ => ctx,
    };
    let c_i = match norm_placement {
        DecoderNorm::Pre => tape.add(c_prev, ctx)?,
        DecoderNorm::Post => {
            let sum = tape.add(c_prev, ctx)?;
            tape.layer_norm(sum, dec.norm.gamma, dec.norm.beta, LAYER_NORM_EPS)?
        }
    };
    Ok((c_i, attn))
}

/// Node handles produced by [`edit_graph`].
pub struct EditGraph {
    /// 1 x classes.
    pub logits: NodeId,
    /// Per layer, per head; empty inner vec when the branch was dropped.
    pub encoder_attn: Vec<Vec<NodeId>>,
    /// One 1 x (n+1) node per layer (1 x n without the class row in KV).
    pub decoder_attn: Vec<NodeId>,
    /// p_0 ..= p_l.
    pub patch_states: Vec<NodeId>,
    /// c_0 ..= c_l.
    pub cls_states: Vec<NodeId>,
}

/// Builds the full encoder-decoder graph.
///
/// `decoders` supplies the decoder parameter nodes for each layer. The normal
/// call passes the same `DecoderNodes` value `depth` times, which is exactly
/// what weight sharing means on a tape: gradients from every layer accumulate
/// into the same leaves. Passing distinct nodes per layer instead yields the
/// unshared variant used to verify that behavior.
pub fn edit_graph(
    tape: &mut Tape,
    config: &ModelConfig,
    nodes: &EditNodes,
    decoders: &[DecoderNodes],
    patches: NodeId,
    drops: &[ResidualDrops],
    branch_scale: f32,
) -> Result<EditGraph, TapeError> {
    assert_eq!(decoders.len(), config.depth);
    assert_eq!(drops.len(), config.depth);
    let p0 = embed_patches(tape, patches, &nodes.embed, nodes.pos)?;
    let mut p = p0;
    let mut c = nodes.cls;
    let mut patch_states = vec![p];
    let mut cls_states = vec![c];
    let mut encoder_attn = Vec::with_capacity(config.depth);
    let mut decoder_attn = Vec::with_capacity(config.depth);
    for i in 0..config.depth {
        let (pn, attns) = encoder_layer(tape, p, &nodes.layers[i], config.heads, drops[i], branch_scale)?;
        let (cn, da) = decoder_layer(
            tape,
            c,
            pn,
            &decoders[i],
            config.decoder_layout,
            config.decoder_norm,
            config.decoder_includes_cls_in_kv,
        )?;
        p = pn;
        c = cn;
        patch_states.push(p);
        cls_states.push(c);
        encoder_attn.push(attns);
        decoder_attn.push(da);
    }
    let c_final = match &nodes.final_norm {
        Some(n) => tape.layer_norm(c, n.gamma, n.beta, LAYER_NORM_EPS)?,
        None => c,
    };
    let logits = tape.matmul(c_final, nodes.head.weight)?;
    let logits = tape.add_row_bias(logits, nodes.head.bias)?;
    Ok(EditGraph { logits, encoder_attn, decoder_attn, patch_states, cls_states })
}

/// Node handles produced by [`baseline_graph`].
pub struct BaselineGraph {
    pub logits: NodeId,
    pub attn: Vec<Vec<NodeId>>,
    /// z_0 ..= z_l, each (n+1) x d with the class token at row 0.
    pub states: Vec<NodeId>,
}

/// Builds the baseline graph: class token at row 0 of the encoder sequence,
/// positional embeddings added to patch rows before concatenation.
pub fn baseline_graph(
    tape: &mut Tape,
    config: &ModelConfig,
    nodes: &BaselineNodes,
    patches: NodeId,
    drops: &[ResidualDrops],
    branch_scale: f32,
) -> Result<BaselineGraph, TapeError> {
    assert_eq!(drops.len(), config.depth);
    let p0 = embed_patches(tape, patches, &nodes.embed, nodes.pos)?;
    let mut z = tape.concat_rows(&[nodes.cls, p0])?;
    let mut states = vec![z];
    let mut attn = Vec::with_capacity(config.depth);
    for i in 0..config.depth {
        let (zn, attns) = encoder_layer(tape, z, &nodes.layers[i], config.heads, drops[i], branch_scale)?;
        z = zn;
        states.push(z);
        attn.push(attns);
    }
    let c = tape.slice_rows(z, 0, 1)?;
    let c_final = match &nodes.final_norm {
        Some(n) => tape.layer_norm(c, n.gamma, n.beta, LAYER_NORM_EPS)?,
        None => c,
    };
    let logits = tape.matmul(c_final, nodes.head.weight)?;
    let logits = tape.add_row_bias(logits, nodes.head.bias)?;
    Ok(BaselineGraph { logits, attn, states })
}

/// Numerically stable softmax of a plain vector, for reporting.
pub fn softmax_vec(x: &[f32]) -> Vec<f32> {
    let max = x.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = x.iter().map(|&v| ((v - max) as f64).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| (e / sum) as f32).collect()
}

fn check_geometry(config: &ModelConfig, image: &Image) -> Result<(), ModelError> {
    if (image.h, image.w, image.c) != (config.image_h, config.image_w, config.channels) {
        return Err(ModelError::Geometry {
            expected_h: config.image_h,
            expected_w: config.image_w,
            expected_c: config.channels,
            actual_h: image.h,
            actual_w: image.w,
            actual_c: image.c,
        });
    }
    Ok(())
}

fn branch_scale_for(config: &ModelConfig, mode: Mode) -> f32 {
    if mode == Mode::Train && config.stochastic_depth_rate > 0.0 {
        1.0 / (1.0 - config.stochastic_depth_rate)
    } else {
        1.0
    }
}

fn record_from(
    tape: &Tape,
    node: NodeId,
    layer: usize,
    head: usize,
    source: AttentionSource,
) -> AttentionRecord {
    let (rows, cols) = tape.shape(node);
    AttentionRecord {
        layer_index: layer,
        head_index: head,
        rows,
        cols,
        matrix: tape.value(node).to_vec(),
        source,
    }
}

impl EditModel {
    /// Full forward pass on a fresh internal tape. `rng` is consulted only in
    /// training mode with a nonzero stochastic-depth rate.
    pub fn forward(
        &self,
        image: &Image,
        mode: Mode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOutput, ModelError> {
        let config = self.config();
        check_geometry(config, image)?;
        let patches = patchify(image, config.patch)?;
        let mut tape = Tape::new();
        let nodes = self.bind(&mut tape);
        let patches_node = tape.constant(config.num_patches(), config.patch_len(), patches);
        let drops = draw_residual_drops(config.depth, config.stochastic_depth_rate, mode, rng);
        let scale = branch_scale_for(config, mode);
        let decoders = vec![nodes.decoder; config.depth];
        let graph = edit_graph(&mut tape, config, &nodes, &decoders, patches_node, &drops, scale)?;

        let logits = tape.value(graph.logits).to_vec();
        let mut attention = Vec::new();
        for (layer, heads) in graph.encoder_attn.iter().enumerate() {
            for (h, &node) in heads.iter().enumerate() {
                attention.push(record_from(&tape, node, layer, h, AttentionSource::EncoderSelf));
            }
        }
        for (layer, &node) in graph.decoder_attn.iter().enumerate() {
            attention.push(record_from(&tape, node, layer, 0, AttentionSource::DecoderCross));
        }
        Ok(ForwardOutput {
            probabilities: softmax_vec(&logits),
            logits,
            attention,
            patch_states: graph.patch_states.iter().map(|&n| tape.value(n).to_vec()).collect(),
            cls_states: graph.cls_states.iter().map(|&n| tape.value(n).to_vec()).collect(),
        })
    }
}

impl BaselineVitModel {
    pub fn forward(
        &self,
        image: &Image,
        mode: Mode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOutput, ModelError> {
        let config = self.config();
        check_geometry(config, image)?;
        let patches = patchify(image, config.patch)?;
        let mut tape = Tape::new();
        let nodes = self.bind(&mut tape);
        let patches_node = tape.constant(config.num_patches(), config.patch_len(), patches);
        let drops = draw_residual_drops(config.depth, config.stochastic_depth_rate, mode, rng);
        let scale = branch_scale_for(config, mode);
        let graph = baseline_graph(&mut tape, config, &nodes, patches_node, &drops, scale)?;

        let logits = tape.value(graph.logits).to_vec();
        let mut attention = Vec::new();
        for (layer, heads) in graph.attn.iter().enumerate() {
            for (h, &node) in heads.iter().enumerate() {
                attention.push(record_from(&tape, node, layer, h, AttentionSource::BaselineSelf));
            }
        }
        let d = config.dim;
        let mut patch_states = Vec::with_capacity(graph.states.len());
        let mut cls_states = Vec::with_capacity(graph.states.len());
        for &state in &graph.states {
            let data = tape.value(state);
            cls_states.push(data[..d].to_vec());
            patch_states.push(data[d..].to_vec());
        }
        Ok(ForwardOutput {
            probabilities: softmax_vec(&logits),
            logits,
            attention,
            patch_states,
            cls_states,
        })
    }
}
