//! Audio I/O, resampling and mel-spectrogram extraction.

mod mel;
mod resample;
mod wav;

pub use mel::{
    hann_window, mel_spectrogram, stft_magnitude, MelConfig, MelFilterbank, MelSpectrogram,
};
pub use resample::resample;
pub use wav::{load_wav, save_wav};

use crate::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    /// Truncates or zero-pads to exactly `len` samples.
    pub fn fit_to_len(mut self, len: usize) -> Self {
        self.samples.resize(len, 0.0);
        self
    }

    pub(crate) fn ensure_non_empty(&self, what: &str) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::InvalidArgument(format!("{what}: empty waveform")));
        }
        Ok(())
    }
}
