use serde::{Deserialize, Serialize};

use super::NoiseSchedule;
use crate::dsp::MelConfig;
use crate::{Error, Result};

/// Per-element loss on the predicted noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLoss {
    #[default]
    L1,
    L2,
}

/// Two-layer transposed-convolution upsampler from mel frames to samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceUpsamplerConfig {
    /// (mel, time)
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: (usize, usize),
    pub leaky_slope: f64,
}

impl Default for ReferenceUpsamplerConfig {
    fn default() -> Self {
        Self {
            kernel: (3, 32),
            stride: 16,
            padding: (1, 8),
            leaky_slope: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocoderConfig {
    pub profile: String,
    pub residual_layers: usize,
    pub residual_channels: usize,
    pub dilation_cycle: usize,
    /// Number of diffusion steps T.
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub loss: NoiseLoss,
    pub upsampler: ReferenceUpsamplerConfig,
    pub mel: MelConfig,
}

pub const STEP_EMBEDDING_DIM: usize = 128;
pub const STEP_HIDDEN_DIM: usize = 512;

impl Default for VocoderConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl VocoderConfig {
    pub fn full() -> Self {
        Self {
            profile: "full".into(),
            residual_layers: 30,
            residual_channels: 64,
            dilation_cycle: 10,
            diffusion_steps: 50,
            beta_start: 1e-4,
            beta_end: 0.05,
            loss: NoiseLoss::L1,
            upsampler: ReferenceUpsamplerConfig::default(),
            mel: MelConfig::default(),
        }
    }

    /// CPU-sized model. The shorter chain keeps the total noise budget
    /// (sum of betas) of the full schedule.
    pub fn tiny() -> Self {
        Self {
            profile: "tiny".into(),
            residual_layers: 8,
            residual_channels: 32,
            dilation_cycle: 4,
            diffusion_steps: 20,
            beta_end: 0.125,
            ..Self::full()
        }
    }

    pub fn by_profile(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown vocoder profile {other:?}"))),
        }
    }

    pub fn dilations(&self) -> Vec<usize> {
        (0..self.residual_layers)
            .map(|i| 1 << (i % self.dilation_cycle))
            .collect()
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.beta_start, self.beta_end, self.diffusion_steps)
    }

    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.residual_layers == 0 || self.residual_channels == 0 || self.dilation_cycle == 0 {
            return bad("vocoder layers, channels and dilation cycle must be positive".into());
        }
        if self.dilation_cycle > 16 {
            return bad(format!("dilation cycle {} is unreasonably large", self.dilation_cycle));
        }
        let u = &self.upsampler;
        if u.stride * u.stride != self.mel.hop_length {
            return bad(format!(
                "upsampler factor {}² does not equal hop length {}",
                u.stride, self.mel.hop_length
            ));
        }
        self.schedule().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}
