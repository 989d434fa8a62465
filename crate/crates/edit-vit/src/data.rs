//! Image containers, the synthetic shapes task, and the CIFAR-10 binary
//! loader.

use crate::model::InputStandardization;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} has length {len}, not a multiple of the {record} byte record size")]
    BadRecordLength { path: PathBuf, len: u64, record: u64 },
    #[error("record {index} has label byte {label}, outside 0..=9")]
    BadLabel { index: usize, label: u8 },
    #[error("no .bin files found in {dir}")]
    NoFiles { dir: PathBuf },
    #[error("label {label} at index {index} is outside the {classes}-class range")]
    LabelOutOfRange { index: usize, label: usize, classes: usize },
    #[error("image {index} is {h}x{w}x{c}, expected {expected_h}x{expected_w}x{expected_c}")]
    MixedGeometry {
        index: usize,
        h: usize,
        w: usize,
        c: usize,
        expected_h: usize,
        expected_w: usize,
        expected_c: usize,
    },
    #[error("dataset is empty")]
    Empty,
}

/// Dense image in height-major, then width, then channel order (HWC).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), h * w * c);
        Image { h, w, c, data }
    }

    pub fn get(&self, y: usize, x: usize, ch: usize) -> f32 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    pub fn set(&mut self, y: usize, x: usize, ch: usize, v: f32) {
        self.data[(y * self.w + x) * self.c + ch] = v;
    }

    /// Mirror left-right.
    pub fn hflip(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.h {
            for x in 0..self.w {
                for ch in 0..self.c {
                    out.set(y, x, ch, self.get(y, self.w - 1 - x, ch));
                }
            }
        }
        out
    }
}

/// Subtracts the per-channel mean and divides by the per-channel deviation.
pub fn standardize_image(img: &Image, s: &InputStandardization) -> Image {
    assert_eq!(s.mean.len(), img.c);
    assert_eq!(s.std.len(), img.c);
    let mut out = img.clone();
    for v in out.data.chunks_mut(img.c) {
        for (ch, x) in v.iter_mut().enumerate() {
            *x = (*x - s.mean[ch]) / s.std[ch];
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

/// Labeled images already standardized for model input, along with the
/// constants that were applied.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
    pub standardization: InputStandardization,
}

impl LabeledDataset {
    pub fn new(
        images: Vec<Image>,
        labels: Vec<usize>,
        classes: usize,
        split: Split,
        standardization: InputStandardization,
    ) -> Result<Self, DataError> {
        if images.is_empty() {
            return Err(DataError::Empty);
        }
        let (h, w, c) = (images[0].h, images[0].w, images[0].c);
        for (i, img) in images.iter().enumerate() {
            if (img.h, img.w, img.c) != (h, w, c) {
                return Err(DataError::MixedGeometry {
                    index: i,
                    h: img.h,
                    w: img.w,
                    c: img.c,
                    expected_h: h,
                    expected_w: w,
                    expected_c: c,
                });
            }
        }
        for (i, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(DataError::LabelOutOfRange { index: i, label, classes });
            }
        }
        assert_eq!(images.len(), labels.len());
        Ok(LabeledDataset { images, labels, classes, split, standardization })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Splits off the first `train_count` samples as the training set and the
    /// remainder as validation, preserving order.
    pub fn split_at(mut self, train_count: usize) -> (LabeledDataset, LabeledDataset) {
        assert!(train_count <= self.len());
        let val_images = self.images.split_off(train_count);
        let val_labels = self.labels.split_off(train_count);
        let val = LabeledDataset {
            images: val_images,
            labels: val_labels,
            classes: self.classes,
            split: Split::Val,
            standardization: self.standardization.clone(),
        };
        self.split = Split::Train;
        (self, val)
    }
}

/// Background and foreground intensity of the rendered shapes, before noise
/// and standardization.
pub const SHAPES_BACKGROUND: f32 = 0.1;
pub const SHAPES_FILL: f32 = 0.9;
pub const SHAPES_NOISE_STD: f32 = 0.05;
pub const SHAPES_SIZE: usize = 32;
pub const SHAPES_CLASSES: usize = 3;

/// Standardization applied to the shapes task, mapping [0,1] to roughly [-1,1].
pub fn shapes_standardization() -> InputStandardization {
    InputStandardization { mean: vec![0.5], std: vec![0.5] }
}

/// Renders `count` grayscale 32x32 images of a filled square, circle, or
/// cross (labels 0, 1, 2 round-robin) at a random position and size, with
/// additive Gaussian noise, clamped to [0,1], then standardized.
///
/// Per image the generator draws, in order: half-extent, center x, center y,
/// then one noise value per pixel in row-major order. Deterministic per seed.
pub fn generate_synthetic_shapes(count: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, SHAPES_NOISE_STD).expect("valid std");
    let size = SHAPES_SIZE;
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % SHAPES_CLASSES;
        let r = rng.gen_range(4..=10usize) as i64;
        let cx = rng.gen_range(r as usize..size - r as usize) as i64;
        let cy = rng.gen_range(r as usize..size - r as usize) as i64;
        let t = (r / 3).max(1);
        let mut img = Image::new(size, size, 1, vec![SHAPES_BACKGROUND; size * size]);
        for y in 0..size as i64 {
            for x in 0..size as i64 {
                let dx = x - cx;
                let dy = y - cy;
                let inside = match label {
                    0 => dx.abs() <= r && dy.abs() <= r,
                    1 => dx * dx + dy * dy <= r * r,
                    _ => (dx.abs() <= t && dy.abs() <= r) || (dy.abs() <= t && dx.abs() <= r),
                };
                if inside {
                    img.set(y as usize, x as usize, 0, SHAPES_FILL);
                }
            }
        }
        for v in img.data.iter_mut() {
            *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
        images.push(standardize_image(&img, &shapes_standardization()));
        labels.push(label);
    }
    LabeledDataset::new(images, labels, SHAPES_CLASSES, Split::Train, shapes_standardization())
        .expect("generator output is well-formed")
}

const CIFAR_RECORD: usize = 3073;
const CIFAR_SIDE: usize = 32;

/// Per-channel statistics conventionally used for CIFAR-10 input scaling.
pub fn cifar10_standardization() -> InputStandardization {
    InputStandardization {
        mean: vec![0.4914, 0.4822, 0.4465],
        std: vec![0.2470, 0.2435, 0.2616],
    }
}

/// Loads every `.bin` file under `dir` (sorted by name) as a stream of
/// 3073-byte CIFAR-10 records: one label byte, then 1024-byte red, green, and
/// blue planes in row-major order. Pixels are scaled to [0,1] and
/// standardized; record order is preserved.
pub fn load_cifar10_binary(dir: &Path) -> Result<LabeledDataset, DataError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|source| DataError::Io { path: dir.to_path_buf(), source })?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "bin"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(DataError::NoFiles { dir: dir.to_path_buf() });
    }

    let standardization = cifar10_standardization();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in files {
        let bytes = std::fs::read(&path).map_err(|source| DataError::Io { path: path.clone(), source })?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(DataError::BadRecordLength {
                path,
                len: bytes.len() as u64,
                record: CIFAR_RECORD as u64,
            });
        }
        for record in bytes.chunks_exact(CIFAR_RECORD) {
            let label = record[0];
            if label > 9 {
                return Err(DataError::BadLabel { index: images.len(), label });
            }
            let plane = CIFAR_SIDE * CIFAR_SIDE;
            let mut img = Image::new(CIFAR_SIDE, CIFAR_SIDE, 3, vec![0.0; plane * 3]);
            for y in 0..CIFAR_SIDE {
                for x in 0..CIFAR_SIDE {
                    for ch in 0..3 {
                        let byte = record[1 + ch * plane + y * CIFAR_SIDE + x];
                        img.set(y, x, ch, byte as f32 / 255.0);
                    }
                }
            }
            images.push(standardize_image(&img, &standardization));
            labels.push(label as usize);
        }
    }
    LabeledDataset::new(images, labels, 10, Split::Train, standardization)
}
