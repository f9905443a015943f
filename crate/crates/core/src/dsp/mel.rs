use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::{Error, Result};

/// Front-end parameters shared by the vocoder, the upsamplers and the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub mel_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_fft: 1024,
            win_length: 1024,
            hop_length: 256,
            n_mels: 80,
            fmin: 20.0,
            fmax: 8_000.0,
            mel_floor: 1e-5,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("mel config: {m}")));
        if self.sample_rate == 0 || self.n_fft == 0 || self.hop_length == 0 || self.n_mels == 0 {
            return bad("sizes and rates must be positive");
        }
        if self.win_length > self.n_fft {
            return bad("win_length exceeds n_fft");
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0)
        {
            return bad("need 0 <= fmin < fmax <= sample_rate / 2");
        }
        if self.mel_floor <= 0.0 {
            return bad("mel_floor must be positive");
        }
        Ok(())
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.hop_length)
    }

    pub fn log_floor(&self) -> f64 {
        self.mel_floor.ln()
    }
}

/// Log-mel energies, `[n_mels × n_frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Array2<f64>,
    pub hop_length: usize,
    pub sample_rate: u32,
}

impl MelSpectrogram {
    pub fn n_mels(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }

    /// Frames `[start, start + len)`, padding past the end with `fill`.
    pub fn crop_frames(&self, start: usize, len: usize, fill: f64) -> MelSpectrogram {
        let mut values = Array2::from_elem((self.n_mels(), len), fill);
        let avail = self.n_frames().saturating_sub(start).min(len);
        if avail > 0 {
            values
                .slice_mut(ndarray::s![.., ..avail])
                .assign(&self.values.slice(ndarray::s![.., start..start + avail]));
        }
        MelSpectrogram {
            values,
            hop_length: self.hop_length,
            sample_rate: self.sample_rate,
        }
    }
}

/// Triangular mel filters on the Slaney mel scale with area normalisation.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `[n_mels × (n_fft / 2 + 1)]`
    pub weights: Array2<f64>,
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(cfg: &MelConfig) -> Self {
        let n_bins = cfg.n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = |k: usize| k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64;
        let mut weights = Array2::zeros((cfg.n_mels, n_bins));
        for m in 0..cfg.n_mels {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (right - left);
            for k in 0..n_bins {
                let f = bin_hz(k);
                let rise = (f - left) / (center - left);
                let fall = (right - f) / (right - center);
                weights[[m, k]] = rise.min(fall).max(0.0) * norm;
            }
        }
        Self {
            weights,
            centers_hz: edges[1..=cfg.n_mels].to_vec(),
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    const MIN_LOG_HZ: f64 = 1000.0;
    const MIN_LOG_MEL: f64 = 15.0;
    let logstep = 6.4f64.ln() / 27.0;
    if f < MIN_LOG_HZ {
        3.0 * f / 200.0
    } else {
        MIN_LOG_MEL + (f / MIN_LOG_HZ).ln() / logstep
    }
}

fn mel_to_hz(m: f64) -> f64 {
    const MIN_LOG_HZ: f64 = 1000.0;
    const MIN_LOG_MEL: f64 = 15.0;
    let logstep = 6.4f64.ln() / 27.0;
    if m < MIN_LOG_MEL {
        200.0 * m / 3.0
    } else {
        MIN_LOG_HZ * (logstep * (m - MIN_LOG_MEL)).exp()
    }
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Maps any integer index into `[0, len)` by repeated mirror reflection
/// without repeating the edge sample.
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let r = i.rem_euclid(period);
    if r < len as isize {
        r as usize
    } else {
        (period - r) as usize
    }
}

/// Centered magnitude STFT with reflect padding, `[n_fft/2 + 1 × ceil(L/hop)]`.
pub fn stft_magnitude(samples: &[f64], n_fft: usize, win_length: usize, hop: usize) -> Array2<f64> {
    let n_frames = samples.len().div_ceil(hop);
    let n_bins = n_fft / 2 + 1;
    let mut window = vec![0.0; n_fft];
    let offset = (n_fft - win_length) / 2;
    window[offset..offset + win_length].copy_from_slice(&hann_window(win_length));
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(n_fft);
    let mut out = Array2::zeros((n_bins, n_frames));
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let half = (n_fft / 2) as isize;
    for j in 0..n_frames {
        let start = (j * hop) as isize - half;
        for (i, b) in buf.iter_mut().enumerate() {
            let idx = reflect_index(start + i as isize, samples.len());
            *b = Complex::new(samples[idx] * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for k in 0..n_bins {
            out[[k, j]] = buf[k].norm();
        }
    }
    out
}

/// Log-mel spectrogram: magnitude STFT → mel filterbank → `ln(max(v, floor))`.
pub fn mel_spectrogram(w: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram> {
    w.ensure_non_empty("mel_spectrogram")?;
    if w.sample_rate != cfg.sample_rate {
        return Err(Error::InvalidArgument(format!(
            "waveform is {} Hz but mel config expects {} Hz",
            w.sample_rate, cfg.sample_rate
        )));
    }
    let mag = stft_magnitude(&w.samples, cfg.n_fft, cfg.win_length, cfg.hop_length);
    let fb = MelFilterbank::new(cfg);
    let mut values = fb.weights.dot(&mag);
    values.mapv_inplace(|v| v.max(cfg.mel_floor).ln());
    debug_assert_eq!(values.len_of(Axis(1)), cfg.n_frames(w.len()));
    Ok(MelSpectrogram {
        values,
        hop_length: cfg.hop_length,
        sample_rate: cfg.sample_rate,
    })
}
