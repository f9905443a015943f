//! Speech restoration toolkit.
//!
//! Speech is degraded with deterministic lossy operations (an LPC-10 style
//! 2.4 kbit/s codec, percentile clipping, or an external codec such as
//! AMR-NB), then restored with a DiffWave-style diffusion vocoder. Two
//! restoration systems are provided:
//!
//! * **DW**: the vocoder trained end to end on clean waveforms while
//!   conditioned on the degraded mel spectrogram.
//! * **ModDW**: a vocoder trained on clean speech whose two-layer
//!   transposed-convolution upsampler is replaced by a 15-layer CNN. The CNN
//!   is trained separately to map the degraded mel spectrogram onto the
//!   conditioner the original upsampler produces from the clean one.
//!
//! The [`metrics`] module scores restored audio and runs paired t-tests;
//! [`experiment`] holds configuration, manifests, run directories and the
//! pipeline stages the command-line tool drives.

pub mod degrade;
pub mod diffusion;
pub mod dsp;
mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
mod process;
pub mod upsampler;

pub use error::{Error, Result};
