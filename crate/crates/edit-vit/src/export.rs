//! File output for attention maps, sink statistics, and training metrics,
//! plus small PGM/PPM image readers for feeding the command-line tools.
//!
//! Primary outputs (PGM, CSV, checkpoints) are byte-deterministic for
//! identical input; the SVG chart is presentational only. Every writer goes
//! through [`atomic_write`], so an interrupted run never leaves a truncated
//! artifact at the target path.

use crate::attention::SinkStats;
use crate::data::Image;
use crate::train::EpochRecord;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("failed to write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not a binary PGM/PPM file: {reason}")]
    MalformedPnm { path: PathBuf, reason: String },
}

/// Writes via a sibling temporary file and a rename, so the target path only
/// ever holds complete content.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = path.with_file_name(format!("{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io { path: path.to_path_buf(), source }
}

/// Binary PGM bytes: "P5", dimensions, maxval 255, then one byte per value
/// with v mapped to round(v * 255).
pub fn pgm_bytes(width: usize, height: usize, values: &[f32]) -> Vec<u8> {
    assert_eq!(values.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<(), ExportError> {
    atomic_write(path, &pgm_bytes(width, height, values)).map_err(io_err(path))
}

fn fmt_value(v: f64) -> String {
    // Nine significant digits: one leading digit plus eight after the point.
    format!("{v:.8e}")
}

/// CSV rendering of one matrix: header "layer,row,col,value", then one line
/// per entry in row-major order, line-feed endings.
pub fn attention_csv(layer: usize, rows: usize, cols: usize, values: &[f32]) -> String {
    assert_eq!(values.len(), rows * cols);
    let mut out = String::from("layer,row,col,value\n");
    for r in 0..rows {
        for c in 0..cols {
            out.push_str(&format!("{layer},{r},{c},{}\n", fmt_value(values[r * cols + c] as f64)));
        }
    }
    out
}

pub fn write_attention_csv(
    path: &Path,
    layer: usize,
    rows: usize,
    cols: usize,
    values: &[f32],
) -> Result<(), ExportError> {
    atomic_write(path, attention_csv(layer, rows, cols, values).as_bytes()).map_err(io_err(path))
}

/// CSV rendering of per-layer sink statistics, header
/// "layer,cls_share,mean_other,ratio". An infinite ratio is written as the
/// sentinel "inf".
pub fn sink_stats_csv(stats: &SinkStats) -> String {
    let mut out = String::from("layer,cls_share,mean_other,ratio\n");
    for layer in &stats.layers {
        let ratio = if layer.ratio.is_infinite() {
            "inf".to_string()
        } else {
            fmt_value(layer.ratio)
        };
        out.push_str(&format!(
            "{},{},{},{}\n",
            layer.layer_index,
            fmt_value(layer.cls_share),
            fmt_value(layer.mean_other),
            ratio
        ));
    }
    out
}

pub fn write_sink_stats_csv(path: &Path, stats: &SinkStats) -> Result<(), ExportError> {
    atomic_write(path, sink_stats_csv(stats).as_bytes()).map_err(io_err(path))
}

/// CSV rendering of training history, header "epoch,train_loss,val_top1,lr".
pub fn metrics_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_top1,lr\n");
    for rec in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            rec.epoch,
            fmt_value(rec.train_loss),
            fmt_value(rec.val_top1),
            fmt_value(rec.lr)
        ));
    }
    out
}

pub fn write_metrics_csv(path: &Path, history: &[EpochRecord]) -> Result<(), ExportError> {
    atomic_write(path, metrics_csv(history).as_bytes()).map_err(io_err(path))
}

/// Line chart of class-column attention share versus the mean over other
/// columns, one point per layer. Presentational output: the exact bytes are
/// not part of any determinism guarantee.
pub fn sink_chart_svg(stats: &SinkStats) -> String {
    let w = 640.0f64;
    let h = 400.0f64;
    let margin = 60.0f64;
    let layers = stats.layers.len().max(2);
    let max_y = stats
        .layers
        .iter()
        .flat_map(|l| [l.cls_share, l.mean_other])
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let x = |i: usize| margin + (w - 2.0 * margin) * i as f64 / (layers - 1) as f64;
    let y = |v: f64| h - margin - (h - 2.0 * margin) * v / max_y;
    let polyline = |f: &dyn Fn(&crate::attention::LayerSinkStats) -> f64| -> String {
        stats
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| format!("{:.2},{:.2}", x(i), y(f(l))))
            .collect::<Vec<_>>()
            .join(" ")
    };
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<line x1=\"{m}\" y1=\"{ybase}\" x2=\"{xmax}\" y2=\"{ybase}\" stroke=\"black\"/>\n",
            "<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{ybase}\" stroke=\"black\"/>\n",
            "<text x=\"{xmid}\" y=\"{xlabel_y}\" text-anchor=\"middle\" font-size=\"14\">layer</text>\n",
            "<text x=\"15\" y=\"{ymid}\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 15 {ymid})\">mean attention</text>\n",
            "<polyline points=\"{cls}\" fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\"/>\n",
            "<polyline points=\"{other}\" fill=\"none\" stroke=\"#2980b9\" stroke-width=\"2\"/>\n",
            "<text x=\"{legend_x}\" y=\"{legend_y1}\" font-size=\"12\" fill=\"#c0392b\">class column</text>\n",
            "<text x=\"{legend_x}\" y=\"{legend_y2}\" font-size=\"12\" fill=\"#2980b9\">other columns</text>\n",
            "</svg>\n"
        ),
        w = w,
        h = h,
        m = margin,
        ybase = h - margin,
        xmax = w - margin,
        xmid = w / 2.0,
        xlabel_y = h - margin / 3.0,
        ymid = h / 2.0,
        cls = polyline(&|l| l.cls_share),
        other = polyline(&|l| l.mean_other),
        legend_x = w - margin - 120.0,
        legend_y1 = margin + 10.0,
        legend_y2 = margin + 28.0,
    )
}

pub fn write_sink_chart_svg(path: &Path, stats: &SinkStats) -> Result<(), ExportError> {
    atomic_write(path, sink_chart_svg(stats).as_bytes()).map_err(io_err(path))
}

/// Reads a binary PGM ("P5", one channel) or PPM ("P6", three channels) file
/// with maxval up to 255, scaling pixels to [0,1].
pub fn read_pnm(path: &Path) -> Result<Image, ExportError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let malformed = |reason: &str| ExportError::MalformedPnm {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };

    let mut pos = 0usize;
    let mut next_token = |bytes: &[u8]| -> Result<String, ExportError> {
        // Skip whitespace and '#' comments that run to end of line.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(ExportError::MalformedPnm {
                path: path.to_path_buf(),
                reason: "unexpected end of header".to_string(),
            });
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = next_token(&bytes)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(malformed(&format!("magic '{other}', expected P5 or P6"))),
    };
    let width: usize = next_token(&bytes)?.parse().map_err(|_| malformed("bad width"))?;
    let height: usize = next_token(&bytes)?.parse().map_err(|_| malformed("bad height"))?;
    let maxval: usize = next_token(&bytes)?.parse().map_err(|_| malformed("bad maxval"))?;
    if maxval == 0 || maxval > 255 {
        return Err(malformed("only 8-bit maxval supported"));
    }
    // Exactly one whitespace byte separates the header from pixel data.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(malformed("missing header terminator"));
    }
    pos += 1;
    let expected = width * height * channels;
    let data = &bytes[pos..];
    if data.len() < expected {
        return Err(malformed(&format!(
            "pixel data has {} bytes, expected {expected}",
            data.len()
        )));
    }
    let pixels: Vec<f32> = data[..expected].iter().map(|&b| b as f32 / maxval as f32).collect();
    Ok(Image::new(height, width, channels, pixels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::LayerSinkStats;

    #[test]
    fn pgm_single_white_pixel() {
        let bytes = pgm_bytes(1, 1, &[1.0]);
        assert_eq!(bytes, b"P5\n1 1\n255\n\xff");
    }

    #[test]
    fn pgm_zeros_after_header() {
        let bytes = pgm_bytes(2, 2, &[0.0; 4]);
        assert_eq!(bytes, b"P5\n2 2\n255\n\x00\x00\x00\x00");
    }

    #[test]
    fn pgm_golden_sixteen_level_ramp() {
        // 4x4 ramp i/15: each level maps to exactly 17*i.
        let values: Vec<f32> = (0..16).map(|i| i as f32 / 15.0).collect();
        let bytes = pgm_bytes(4, 4, &values);
        let mut expected = b"P5\n4 4\n255\n".to_vec();
        expected.extend((0..16u16).map(|i| (17 * i) as u8));
        assert_eq!(bytes, expected);
    }

    #[test]
    fn attention_csv_layout() {
        let csv = attention_csv(3, 1, 2, &[0.25, 0.75]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "layer,row,col,value");
        assert_eq!(lines[1], "3,0,0,2.50000000e-1");
        assert_eq!(lines[2], "3,0,1,7.50000000e-1");
        assert!(csv.ends_with('\n'));
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn sink_csv_header_and_inf_sentinel() {
        let stats = SinkStats {
            layers: vec![
                LayerSinkStats { layer_index: 0, cls_share: 0.25, mean_other: 0.25, ratio: 1.0 },
                LayerSinkStats {
                    layer_index: 1,
                    cls_share: 1.0,
                    mean_other: 0.0,
                    ratio: f64::INFINITY,
                },
            ],
        };
        let csv = sink_stats_csv(&stats);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "layer,cls_share,mean_other,ratio");
        assert_eq!(lines[1], "0,2.50000000e-1,2.50000000e-1,1.00000000e0");
        assert_eq!(lines[2], "1,1.00000000e0,0.00000000e0,inf");
    }

    #[test]
    fn metrics_csv_header() {
        let history = vec![EpochRecord { epoch: 1, train_loss: 1.5, val_top1: 0.5, lr: 1e-3 }];
        let csv = metrics_csv(&history);
        assert!(csv.starts_with("epoch,train_loss,val_top1,lr\n"));
        assert!(csv.contains("1,1.50000000e0,5.00000000e-1,1.00000000e-3\n"));
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        atomic_write(&path, b"hello").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"hello");
        let entries: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(entries.len(), 1);
    }

    #[test]
    fn pnm_round_trip_via_pgm_writer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let values = vec![0.0, 1.0, 0.5019608, 0.2];
        write_pgm(&path, 2, 2, &values).unwrap();
        let img = read_pnm(&path).unwrap();
        assert_eq!((img.h, img.w, img.c), (2, 2, 1));
        for (a, b) in img.data.iter().zip(&values) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn pnm_reader_handles_comments_and_ppm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let mut bytes = b"P6\n# a comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0]);
        std::fs::write(&path, &bytes).unwrap();
        let img = read_pnm(&path).unwrap();
        assert_eq!((img.h, img.w, img.c), (1, 2, 3));
        assert_eq!(img.get(0, 0, 0), 1.0);
        assert_eq!(img.get(0, 1, 1), 1.0);
    }

    #[test]
    fn pnm_reader_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        std::fs::write(&path, b"P4\n1 1\n255\n\x00").unwrap();
        assert!(matches!(read_pnm(&path), Err(ExportError::MalformedPnm { .. })));
        std::fs::write(&path, b"P5\n4 4\n255\n\x00").unwrap();
        assert!(matches!(read_pnm(&path), Err(ExportError::MalformedPnm { .. })));
    }

    #[test]
    fn svg_chart_contains_two_polylines_and_labels() {
        let stats = SinkStats {
            layers: (0..12)
                .map(|i| LayerSinkStats {
                    layer_index: i,
                    cls_share: 0.1 + i as f64 * 0.05,
                    mean_other: 0.01,
                    ratio: 10.0,
                })
                .collect(),
        };
        let svg = sink_chart_svg(&stats);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("layer"));
        assert!(svg.contains("mean attention"));
    }
}
