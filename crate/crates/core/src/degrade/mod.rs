//! Deterministic lossy transformations used to build degraded corpora.

mod clip;
mod external;
pub mod lpc;
pub mod lpc10;

pub use clip::{clip_signal, clip_threshold};
pub use external::degrade_external;
pub use lpc10::{degrade_lpc10, Lpc10Codec, LpcBitstream, LpcFrame};

use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::{Error, Result};

/// Environment variable consulted when an external degradation has no
/// command in the config.
pub const EXTERNAL_CODEC_ENV: &str = "DIFFRESTORE_AMR_CMD";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DegradationSpec {
    Lpc10 {
        #[serde(default, flatten)]
        codec: Lpc10Codec,
    },
    Clip {
        clip_fraction: f64,
    },
    External {
        #[serde(default)]
        command: Option<String>,
    },
}

impl Default for DegradationSpec {
    fn default() -> Self {
        DegradationSpec::Lpc10 {
            codec: Lpc10Codec::default(),
        }
    }
}

impl DegradationSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DegradationSpec::Lpc10 { .. } => "lpc10",
            DegradationSpec::Clip { .. } => "clip",
            DegradationSpec::External { .. } => "external",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DegradationSpec::Clip { clip_fraction } if !(*clip_fraction > 0.0 && *clip_fraction < 1.0) => {
                Err(Error::Config(format!(
                    "clip_fraction must lie in (0, 1), got {clip_fraction}"
                )))
            }
            _ => Ok(()),
        }
    }

    fn external_command(command: &Option<String>) -> Result<String> {
        command
            .clone()
            .or_else(|| std::env::var(EXTERNAL_CODEC_ENV).ok())
            .ok_or_else(|| {
                Error::Capability(format!(
                    "no external codec command configured; set degradation.command or {EXTERNAL_CODEC_ENV}"
                ))
            })
    }

    /// Applies the degradation. Output always has the input's length and rate.
    pub fn apply(&self, w: &Waveform) -> Result<Waveform> {
        match self {
            DegradationSpec::Lpc10 { codec } => degrade_lpc10(w, codec),
            DegradationSpec::Clip { clip_fraction } => clip_signal(w, *clip_fraction),
            DegradationSpec::External { command } => {
                degrade_external(w, &Self::external_command(command)?)
            }
        }
    }
}
