use crate::diffusion::{sample, upsample_reference, Provenance, VocoderModel};
use crate::dsp::{mel_spectrogram, MelConfig, Waveform};
use crate::nn::Mode;
use crate::{Error, Result};

use super::model::{upsample_deep, DeepUpsampler};

/// Fails with every differing field when two components were trained on
/// different front ends.
pub fn check_mel_compatible(upsampler: &MelConfig, vocoder: &MelConfig) -> Result<()> {
    let mut diffs = Vec::new();
    let mut cmp = |name: &str, a: String, b: String| {
        if a != b {
            diffs.push(format!("{name}: upsampler {a}, vocoder {b}"));
        }
    };
    cmp("n_mels", upsampler.n_mels.to_string(), vocoder.n_mels.to_string());
    cmp("hop_length", upsampler.hop_length.to_string(), vocoder.hop_length.to_string());
    cmp("sample_rate", upsampler.sample_rate.to_string(), vocoder.sample_rate.to_string());
    cmp("n_fft", upsampler.n_fft.to_string(), vocoder.n_fft.to_string());
    cmp("win_length", upsampler.win_length.to_string(), vocoder.win_length.to_string());
    cmp("fmin", upsampler.fmin.to_string(), vocoder.fmin.to_string());
    cmp("fmax", upsampler.fmax.to_string(), vocoder.fmax.to_string());
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(Error::ConfigMismatch(diffs.join("; ")))
    }
}

fn check_rate(w: &Waveform, mel: &MelConfig) -> Result<()> {
    if w.sample_rate != mel.sample_rate {
        return Err(Error::InvalidArgument(format!(
            "input is {} Hz, models expect {} Hz",
            w.sample_rate, mel.sample_rate
        )));
    }
    if w.is_empty() {
        return Err(Error::InvalidArgument("input waveform is empty".into()));
    }
    Ok(())
}

/// Two-stage restoration: degraded mel through the deep upsampler (eval
/// mode), then the frozen vocoder. Output has the input's length.
pub fn restore(degraded: &Waveform, upsampler: &DeepUpsampler, vocoder: &VocoderModel, seed: u64) -> Result<Waveform> {
    check_mel_compatible(&upsampler.config().mel, &vocoder.config().mel)?;
    let mel_cfg = &vocoder.config().mel;
    check_rate(degraded, mel_cfg)?;
    let m = mel_spectrogram(degraded, mel_cfg)?;
    let c = upsample_deep(&m, upsampler, Mode::Eval)?;
    Ok(sample(vocoder, &c, seed)?.fit_to_len(degraded.len()))
}

/// Single-stage baseline: degraded mel through the vocoder's own upsampler.
pub fn restore_baseline(degraded: &Waveform, vocoder: &VocoderModel, seed: u64) -> Result<Waveform> {
    let mel_cfg = &vocoder.config().mel;
    check_rate(degraded, mel_cfg)?;
    let m = mel_spectrogram(degraded, mel_cfg)?;
    let c = upsample_reference(&m, vocoder.upsampler(), Provenance::ReferenceFromDegraded, vocoder.dtype())?;
    Ok(sample(vocoder, &c, seed)?.fit_to_len(degraded.len()))
}

/// Vocoder resynthesis from a mel, for checks and figures.
pub fn resynthesize(clean: &Waveform, vocoder: &VocoderModel, seed: u64) -> Result<Waveform> {
    let mel_cfg = &vocoder.config().mel;
    check_rate(clean, mel_cfg)?;
    let m = mel_spectrogram(clean, mel_cfg)?;
    let c = upsample_reference(&m, vocoder.upsampler(), Provenance::ReferenceFromClean, vocoder.dtype())?;
    Ok(sample(vocoder, &c, seed)?.fit_to_len(clean.len()))
}
