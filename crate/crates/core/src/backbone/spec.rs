use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel_size: usize,
}

/// A run of `conv -> relu` layers, optionally wrapped in a residual add and
/// followed by a 2x2 max-pool.
///
/// With `residual`, the stage input is added to the last convolution's output
/// before its ReLU, so the stage input and output must have equal channel counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub convs: Vec<ConvSpec>,
    #[serde(default)]
    pub residual: bool,
    #[serde(default = "default_true")]
    pub pool: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// `[channels, height, width]` of one input image.
    pub input_shape: [usize; 3],
    pub stages: Vec<StageSpec>,
    pub class_count: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::desk(&[16, 32, 64], 64, false)
    }
}

impl ModelSpec {
    /// Stages of `[conv3x3, relu, conv3x3, relu, maxpool2]` with the given widths
    /// on single-channel `size x size` inputs. With `residual`, every stage whose
    /// input width equals its output width gets a residual add.
    pub fn desk(widths: &[usize], size: usize, residual: bool) -> Self {
        let mut in_ch = 1;
        let stages = widths
            .iter()
            .map(|&w| {
                let conv = ConvSpec { out_channels: w, kernel_size: 3 };
                let stage = StageSpec { convs: vec![conv, conv], residual: residual && in_ch == w, pool: true };
                in_ch = w;
                stage
            })
            .collect();
        ModelSpec { input_shape: [1, size, size], stages, class_count: 2 }
    }

    pub fn validate(&self) -> Result<()> {
        self.tap_set().map(|_| ())
    }

    /// Channel count of the last stage's output (the input width of the phase-1 classifier).
    pub fn feature_channels(&self) -> usize {
        self.stages
            .iter()
            .rev()
            .find_map(|s| s.convs.last())
            .map_or(self.input_shape[0], |c| c.out_channels)
    }

    /// Validates the spec and places one tap immediately before every max-pool.
    pub fn tap_set(&self) -> Result<TapSet> {
        let [c0, mut h, mut w] = self.input_shape;
        if c0 == 0 || h == 0 || w == 0 {
            return Err(Error::config("input shape extents must be positive"));
        }
        if self.class_count < 2 {
            return Err(Error::config("class_count must be at least 2"));
        }
        if self.stages.is_empty() {
            return Err(Error::config("model has no stages"));
        }
        let mut channels = c0;
        let mut taps = Vec::new();
        for (s, stage) in self.stages.iter().enumerate() {
            if stage.convs.is_empty() {
                return Err(Error::config(format!("stage {s} has no convolution")));
            }
            let stage_in = channels;
            for (j, conv) in stage.convs.iter().enumerate() {
                if conv.out_channels == 0 {
                    return Err(Error::config(format!("stage {s} conv {j} has zero output channels")));
                }
                if conv.kernel_size % 2 == 0 {
                    return Err(Error::config(format!("stage {s} conv {j}: kernel size must be odd")));
                }
                if conv.kernel_size > 2 * h.min(w) + 1 {
                    return Err(Error::config(format!("stage {s} conv {j}: kernel larger than {h}x{w} map")));
                }
                channels = conv.out_channels;
            }
            if stage.residual && stage_in != channels {
                return Err(Error::config(format!(
                    "stage {s}: residual add needs equal channels, got {stage_in} -> {channels}"
                )));
            }
            if stage.pool {
                taps.push(Tap { stage: s, channels, height: h, width: w });
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::config(format!("stage {s}: {h}x{w} map cannot be max-pooled by 2")));
                }
                if s + 1 < self.stages.len() {
                    h /= 2;
                    w /= 2;
                }
            }
        }
        if taps.is_empty() {
            return Err(Error::config("model has no max-pool, so there are no tap points"));
        }
        Ok(TapSet { taps })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tap {
    /// Index of the stage whose output is tapped.
    pub stage: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Ordered tap points. Head weight row `i` refers to channel `i` of the taps
/// concatenated in this order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapSet {
    pub taps: Vec<Tap>,
}

impl TapSet {
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn channel_counts(&self) -> Vec<usize> {
        self.taps.iter().map(|t| t.channels).collect()
    }

    /// Total number of stacked feature maps, the sum of per-tap channel counts.
    pub fn total_channels(&self) -> usize {
        self.taps.iter().map(|t| t.channels).sum()
    }

    /// Tap index of a stage, if that stage is tapped.
    pub fn position_of_stage(&self, stage: usize) -> Option<usize> {
        self.taps.iter().position(|t| t.stage == stage)
    }
}
