//! Attention records captured during forward passes and the sink statistics
//! computed from them.
//!
//! The analysis answers one question: how much attention mass lands on the
//! class token compared with ordinary patch tokens? For the baseline
//! architecture the class token sits at column 0 of every self-attention
//! matrix, so the per-layer share of column 0 versus the mean over the other
//! columns makes the concentration visible layer by layer.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionSource {
    /// Encoder self-attention over patch tokens only (n x n).
    EncoderSelf,
    /// Shared-decoder cross-attention row: class query over class + patches (1 x (n+1)).
    DecoderCross,
    /// Baseline self-attention with the class token in the sequence ((n+1) x (n+1)).
    BaselineSelf,
}

/// One attention matrix captured from a forward pass. Rows are queries,
/// columns are keys; each row sums to one. The class token, where present,
/// occupies index 0.
#[derive(Debug, Clone)]
pub struct AttentionRecord {
    pub layer_index: usize,
    pub head_index: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major rows x cols.
    pub matrix: Vec<f32>,
    pub source: AttentionSource,
}

impl AttentionRecord {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.matrix[row * self.cols + col]
    }

    /// Largest absolute deviation of any row sum from one.
    pub fn max_row_sum_deviation(&self) -> f32 {
        let mut worst = 0.0f32;
        for row in self.matrix.chunks(self.cols) {
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            worst = worst.max((sum - 1.0).abs() as f32);
        }
        worst
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AttentionError {
    #[error("no baseline self-attention records for layers {missing:?}")]
    MissingLayers { missing: Vec<usize> },
    #[error("submatrix size {size} exceeds matrix dimensions {rows}x{cols}")]
    SubmatrixBounds { size: usize, rows: usize, cols: usize },
    #[error("expected a decoder cross-attention record, got {actual:?}")]
    WrongSource { actual: AttentionSource },
    #[error("record has {cols} columns but the patch grid is {grid_h}x{grid_w}")]
    GridMismatch { cols: usize, grid_h: usize, grid_w: usize },
}

/// Per-layer attention concentration on the class column.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSinkStats {
    pub layer_index: usize,
    /// Mean attention mass on column 0, averaged over heads and query rows.
    pub cls_share: f64,
    /// Mean attention value over all non-class columns (diagonal included).
    pub mean_other: f64,
    /// cls_share / mean_other; positive infinity when mean_other is zero.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkStats {
    pub layers: Vec<LayerSinkStats>,
}

/// Averages class-column attention for every layer of a baseline model.
///
/// Records from other sources are ignored; multiple records per layer (heads,
/// several images) are averaged together. Every layer in `0..depth` must be
/// covered by at least one baseline record.
pub fn compute_sink_stats(
    records: &[AttentionRecord],
    depth: usize,
) -> Result<SinkStats, AttentionError> {
    let mut layers = Vec::with_capacity(depth);
    let mut missing = Vec::new();
    for layer in 0..depth {
        let mut cls_sum = 0.0f64;
        let mut cls_count = 0usize;
        let mut other_sum = 0.0f64;
        let mut other_count = 0usize;
        for rec in records
            .iter()
            .filter(|r| r.source == AttentionSource::BaselineSelf && r.layer_index == layer)
        {
            for row in rec.matrix.chunks(rec.cols) {
                cls_sum += row[0] as f64;
                cls_count += 1;
                for &v in &row[1..] {
                    other_sum += v as f64;
                    other_count += 1;
                }
            }
        }
        if cls_count == 0 {
            missing.push(layer);
            continue;
        }
        let cls_share = cls_sum / cls_count as f64;
        let mean_other = other_sum / other_count as f64;
        let ratio = if mean_other == 0.0 {
            f64::INFINITY
        } else {
            cls_share / mean_other
        };
        layers.push(LayerSinkStats { layer_index: layer, cls_share, mean_other, ratio });
    }
    if !missing.is_empty() {
        return Err(AttentionError::MissingLayers { missing });
    }
    Ok(SinkStats { layers })
}

/// Top-left `size` x `size` block of a record's matrix, values unmodified.
pub fn extract_submatrix(record: &AttentionRecord, size: usize) -> Result<Vec<f32>, AttentionError> {
    if size > record.rows || size > record.cols {
        return Err(AttentionError::SubmatrixBounds {
            size,
            rows: record.rows,
            cols: record.cols,
        });
    }
    let mut out = Vec::with_capacity(size * size);
    for row in 0..size {
        out.extend_from_slice(&record.matrix[row * record.cols..row * record.cols + size]);
    }
    Ok(out)
}

/// Rearranges a decoder cross-attention row into the patch grid and min-max
/// normalizes it to [0,1].
///
/// The class-to-class entry (column 0) is dropped when present; the remaining
/// n patch attentions fill the grid in patch order (row-major over the
/// image). An all-equal row normalizes to all zeros.
pub fn cls_attention_grid(
    record: &AttentionRecord,
    grid: (usize, usize),
) -> Result<Vec<f32>, AttentionError> {
    if record.source != AttentionSource::DecoderCross {
        return Err(AttentionError::WrongSource { actual: record.source });
    }
    let (grid_h, grid_w) = grid;
    let n = grid_h * grid_w;
    let values: &[f32] = if record.cols == n + 1 {
        &record.matrix[1..]
    } else if record.cols == n {
        &record.matrix[..]
    } else {
        return Err(AttentionError::GridMismatch { cols: record.cols, grid_h, grid_w });
    };
    let min = values.iter().cloned().fold(f32::INFINITY, f32::min);
    let max = values.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    if max == min {
        return Ok(vec![0.0; n]);
    }
    let span = max - min;
    Ok(values.iter().map(|&v| (v - min) / span).collect())
}
