//! Model geometry and architecture flags.

use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("image {image_h}x{image_w} is not divisible by patch size {patch}")]
    ImageNotDivisibleByPatch { image_h: usize, image_w: usize, patch: usize },
    #[error("width {dim} is not divisible by head count {heads}")]
    DimNotDivisibleByHeads { dim: usize, heads: usize },
    #[error("{field} must be positive")]
    ZeroField { field: &'static str },
    #[error("stochastic_depth_rate {rate} is outside [0, 1]")]
    StochasticDepthOutOfRange { rate: f32 },
    #[error("unknown preset '{0}', expected tiny, small, or base")]
    UnknownPreset(String),
}

/// Which projections the shared decoder owns.
///
/// `KvOnly` projects keys and values from the normalized sequence and uses
/// the normalized class row directly as the single-head query, with no output
/// projection. `Qkvo` adds a query projection and an output projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderLayout {
    KvOnly,
    Qkvo,
}

/// Placement of the decoder layer norm relative to the residual connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderNorm {
    /// Normalize the concatenated sequence before attention (residual bypasses the norm).
    Pre,
    /// Normalize after adding the attention output to the class stream.
    Post,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub channels: usize,
    pub patch: usize,
    pub dim: usize,
    pub heads: usize,
    pub depth: usize,
    pub classes: usize,
    pub decoder_layout: DecoderLayout,
    /// When true the class row itself is part of the decoder's key/value set,
    /// so the class stream can attend to its own previous state.
    pub decoder_includes_cls_in_kv: bool,
    pub decoder_norm: DecoderNorm,
    /// Apply a final layer norm to the class state before the head.
    pub final_norm: bool,
    /// Reserved flag; per-branch learnable residual scaling is not implemented.
    pub layer_scale: bool,
    pub stochastic_depth_rate: f32,
}

impl ModelConfig {
    /// Geometry-only constructor with the default architecture flags.
    pub fn new(
        image_h: usize,
        image_w: usize,
        channels: usize,
        patch: usize,
        dim: usize,
        heads: usize,
        depth: usize,
        classes: usize,
    ) -> Self {
        ModelConfig {
            image_h,
            image_w,
            channels,
            patch,
            dim,
            heads,
            depth,
            classes,
            decoder_layout: DecoderLayout::KvOnly,
            decoder_includes_cls_in_kv: true,
            decoder_norm: DecoderNorm::Pre,
            final_norm: true,
            layer_scale: false,
            stochastic_depth_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, value) in [
            ("image_h", self.image_h),
            ("image_w", self.image_w),
            ("channels", self.channels),
            ("patch", self.patch),
            ("dim", self.dim),
            ("heads", self.heads),
            ("classes", self.classes),
        ] {
            if value == 0 {
                return Err(ConfigError::ZeroField { field });
            }
        }
        if self.image_h % self.patch != 0 || self.image_w % self.patch != 0 {
            return Err(ConfigError::ImageNotDivisibleByPatch {
                image_h: self.image_h,
                image_w: self.image_w,
                patch: self.patch,
            });
        }
        if self.dim % self.heads != 0 {
            return Err(ConfigError::DimNotDivisibleByHeads {
                dim: self.dim,
                heads: self.heads,
            });
        }
        if !(0.0..=1.0).contains(&self.stochastic_depth_rate) {
            return Err(ConfigError::StochasticDepthOutOfRange {
                rate: self.stochastic_depth_rate,
            });
        }
        Ok(())
    }

    /// Number of patch tokens n = (h/p) * (w/p).
    pub fn num_patches(&self) -> usize {
        (self.image_h / self.patch) * (self.image_w / self.patch)
    }

    /// Flattened patch length p * p * c.
    pub fn patch_len(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    /// Patch grid height and width (rows, cols).
    pub fn grid(&self) -> (usize, usize) {
        (self.image_h / self.patch, self.image_w / self.patch)
    }
}

/// Named model sizes: three widths at depth 12, patch 16, 224x224 RGB input,
/// 1000 classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Tiny,
    Small,
    Base,
}

impl Preset {
    pub fn model_config(self) -> ModelConfig {
        let (dim, heads) = match self {
            Preset::Tiny => (192, 3),
            Preset::Small => (384, 6),
            Preset::Base => (768, 12),
        };
        ModelConfig::new(224, 224, 3, 16, dim, heads, 12, 1000)
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Tiny => "tiny",
            Preset::Small => "small",
            Preset::Base => "base",
        }
    }
}

impl FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tiny" => Ok(Preset::Tiny),
            "small" => Ok(Preset::Small),
            "base" => Ok(Preset::Base),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_have_expected_geometry() {
        let tiny = Preset::Tiny.model_config();
        assert_eq!((tiny.dim, tiny.heads), (192, 3));
        let small = Preset::Small.model_config();
        assert_eq!((small.dim, small.heads), (384, 6));
        let base = Preset::Base.model_config();
        assert_eq!((base.dim, base.heads), (768, 12));
        for cfg in [tiny, small, base] {
            cfg.validate().unwrap();
            assert_eq!(cfg.num_patches(), 196);
            assert_eq!(cfg.patch_len(), 768);
            assert_eq!(cfg.depth, 12);
            assert_eq!(cfg.classes, 1000);
        }
    }

    #[test]
    fn validate_rejects_indivisible_geometry() {
        let cfg = ModelConfig::new(225, 224, 3, 16, 192, 3, 12, 1000);
        assert!(matches!(
            cfg.validate(),
            Err(ConfigError::ImageNotDivisibleByPatch { .. })
        ));
        let cfg = ModelConfig::new(224, 224, 3, 16, 190, 3, 12, 1000);
        assert!(matches!(
            cfg.validate(),
            Err(ConfigError::DimNotDivisibleByHeads { .. })
        ));
    }

    #[test]
    fn validate_rejects_out_of_range_drop_rate() {
        let mut cfg = ModelConfig::new(32, 32, 1, 8, 32, 4, 2, 3);
        cfg.stochastic_depth_rate = 1.5;
        assert_eq!(
            cfg.validate(),
            Err(ConfigError::StochasticDepthOutOfRange { rate: 1.5 })
        );
    }

    #[test]
    fn preset_parse_round_trip() {
        for p in [Preset::Tiny, Preset::Small, Preset::Base] {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!(matches!(
            "huge".parse::<Preset>(),
            Err(ConfigError::UnknownPreset(_))
        ));
    }
}
