//! Closed-form parameter and multiply-accumulate accounting.
//!
//! Counts mirror the model types exactly: a parameter is counted if and only
//! if construction allocates it, and a MAC is counted for every scalar
//! multiply inside a matrix product (projections, attention score and value
//! products, FFN, embedding, head). Bias additions, norms, softmax, and
//! activations contribute no MACs under this convention; one fused
//! multiply-add is one MAC.

use super::ModelKind;
use crate::config::{DecoderLayout, ModelConfig};

/// One accounting line: `count` scalars occurring `multiplier` times.
///
/// The multiplier makes sharing visible: encoder layers repeat per depth,
/// while the shared decoder's parameters appear once no matter how many
/// layers reference them (its compute still repeats per layer).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BreakdownItem {
    pub name: String,
    pub count: u64,
    pub multiplier: u64,
}

impl BreakdownItem {
    fn once(name: &str, count: u64) -> Self {
        BreakdownItem { name: name.to_string(), count, multiplier: 1 }
    }

    fn times(name: &str, count: u64, multiplier: u64) -> Self {
        BreakdownItem { name: name.to_string(), count, multiplier }
    }

    pub fn subtotal(&self) -> u64 {
        self.count * self.multiplier
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Breakdown {
    pub items: Vec<BreakdownItem>,
}

impl Breakdown {
    pub fn total(&self) -> u64 {
        self.items.iter().map(BreakdownItem::subtotal).sum()
    }

    pub fn get(&self, name: &str) -> Option<&BreakdownItem> {
        self.items.iter().find(|i| i.name == name)
    }
}

/// Exact parameter count per component.
pub fn count_params(config: &ModelConfig, kind: ModelKind) -> Breakdown {
    let d = config.dim as u64;
    let n = config.num_patches() as u64;
    let plen = config.patch_len() as u64;
    let classes = config.classes as u64;
    let depth = config.depth as u64;

    let mut items = vec![
        BreakdownItem::once("patch_embed", plen * d + d),
        BreakdownItem::once("pos_embed", n * d),
        BreakdownItem::once("cls_embed", d),
    ];

    // Per encoder layer: four d x d projections with biases, the two FFN
    // matrices with biases, and two norms.
    let attn = 4 * (d * d + d);
    let ffn = d * 4 * d + 4 * d + 4 * d * d + d;
    let norms = 2 * 2 * d;
    items.push(BreakdownItem::times("encoder_layer", attn + ffn + norms, depth));

    if kind == ModelKind::Edit {
        let projections = match config.decoder_layout {
            DecoderLayout::KvOnly => 2 * d * d,
            DecoderLayout::Qkvo => 4 * d * d,
        };
        items.push(BreakdownItem::once("decoder_shared", projections + 2 * d));
    }

    if config.final_norm {
        items.push(BreakdownItem::once("final_norm", 2 * d));
    }
    items.push(BreakdownItem::once("head", d * classes + classes));
    Breakdown { items }
}

/// Multiply-accumulate count for one forward pass.
pub fn estimate_macs(config: &ModelConfig, kind: ModelKind) -> Breakdown {
    let d = config.dim as u64;
    let n = config.num_patches() as u64;
    let plen = config.patch_len() as u64;
    let classes = config.classes as u64;
    let depth = config.depth as u64;

    // The encoder sequence carries the class token only in the baseline.
    let s = match kind {
        ModelKind::Edit => n,
        ModelKind::Baseline => n + 1,
    };

    let mut items = vec![BreakdownItem::once("patch_embed", n * plen * d)];

    // Projections (q, k, v, o) cost 4*s*d^2, the FFN 8*s*d^2, and the two
    // attention products (scores and value mixing) s^2*d each, summed over
    // heads.
    items.push(BreakdownItem::times("encoder_layer", 12 * s * d * d + 2 * s * s * d, depth));

    if kind == ModelKind::Edit {
        let rows = if config.decoder_includes_cls_in_kv { n + 1 } else { n };
        let mut per_layer = 2 * rows * d * d + 2 * rows * d;
        if config.decoder_layout == DecoderLayout::Qkvo {
            // Query and output projections act on a single row each.
            per_layer += 2 * d * d;
        }
        items.push(BreakdownItem::times("decoder_layer", per_layer, depth));
    }

    items.push(BreakdownItem::once("head", d * classes));
    Breakdown { items }
}
