use serde::{Deserialize, Serialize};

use super::stack::{parse_stack_spec_for, StackSpec, Variant};
use super::ArchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub stack: StackSpec,
    pub num_classes: usize,
    pub input_resolution: usize,
    pub head_dim: usize,
    pub mlp_ratio: f64,
    /// Width of the post-pool projection in the classification head.
    pub output_channel: usize,
}

pub const DEFAULT_HEAD_DIM: usize = 32;
pub const DEFAULT_MLP_RATIO: f64 = 4.0;
pub const DEFAULT_RESOLUTION: usize = 224;
/// Class count of the full fine-grained road-surface label set.
pub const FINE_CLASSES: usize = 27;

impl ModelConfig {
    pub fn preset(variant: Variant, num_classes: usize) -> Self {
        Self {
            stack: variant.stack(),
            num_classes,
            input_resolution: DEFAULT_RESOLUTION,
            head_dim: DEFAULT_HEAD_DIM,
            mlp_ratio: DEFAULT_MLP_RATIO,
            output_channel: variant.output_channel(),
        }
    }

    /// A custom layout with the sizes of `variant` filling bare letters.
    pub fn from_spec(text: &str, variant: Variant, num_classes: usize) -> Result<Self, ArchError> {
        Ok(Self {
            stack: parse_stack_spec_for(text, variant)?,
            ..Self::preset(variant, num_classes)
        })
    }

    /// Desk-scale model: widths 16/32/64/128, one block of each kind per
    /// stage, 32x32 inputs.
    pub fn micro(num_classes: usize) -> Self {
        let stack = parse_stack_spec_for("L[c1] M[c1 t1] M[c1 t1] G[t1]", Variant::T)
            .expect("static spec parses")
            .with_channels([16, 32, 64, 128]);
        Self {
            stack,
            num_classes,
            input_resolution: 32,
            head_dim: DEFAULT_HEAD_DIM,
            mlp_ratio: DEFAULT_MLP_RATIO,
            output_channel: 128,
        }
    }

    pub fn channels(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for (dst, s) in c.iter_mut().zip(&self.stack.stages) {
            *dst = s.channels;
        }
        c
    }

    pub fn stem_channels(&self) -> usize {
        (self.channels()[0] / 2).max(1)
    }

    /// Grid side of stage `i` (0-based): `R / 4`, `R / 8`, `R / 16`, `R / 32`.
    pub fn stage_grid(&self, stage: usize) -> usize {
        self.input_resolution >> (stage + 2)
    }

    pub fn stage_tokens(&self, stage: usize) -> usize {
        self.stage_grid(stage).pow(2)
    }

    pub fn hidden(&self, channels: usize) -> usize {
        ((channels as f64 * self.mlp_ratio).round() as usize).max(1)
    }

    /// Every violated constraint, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.stack.violations();
        if self.num_classes < 2 {
            v.push(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.input_resolution == 0 || self.input_resolution % 32 != 0 {
            v.push(format!(
                "input_resolution must be a positive multiple of 32, got {}",
                self.input_resolution
            ));
        }
        if self.head_dim == 0 {
            v.push("head_dim must be positive".to_string());
        } else {
            for (i, s) in self.stack.stages.iter().enumerate() {
                if s.has_trans() && s.channels % self.head_dim != 0 {
                    v.push(format!(
                        "stage {} width {} is not divisible by head_dim {}",
                        i + 1,
                        s.channels,
                        self.head_dim
                    ));
                }
            }
        }
        if !(self.mlp_ratio.is_finite() && self.mlp_ratio > 0.0) {
            v.push(format!("mlp_ratio must be positive, got {}", self.mlp_ratio));
        }
        if self.output_channel == 0 {
            v.push("output_channel must be positive".to_string());
        }
        v
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ArchError::Config(v))
        }
    }
}
