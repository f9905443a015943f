use crate::dsp::Waveform;
use crate::{Error, Result};

/// Magnitude threshold for clipping `clip_fraction` of the samples: the
/// `ceil((1 − f) · N)`-th smallest `|x|`.
pub fn clip_threshold(samples: &[f64], clip_fraction: f64) -> Result<f64> {
    if !(clip_fraction > 0.0 && clip_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "clip fraction must lie in (0, 1), got {clip_fraction}"
        )));
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("clip_signal: empty waveform".into()));
    }
    let n = samples.len();
    // The epsilon keeps products such as 0.7 · 10 from rounding up a rank.
    let rank = (((1.0 - clip_fraction) * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let mut mags: Vec<f64> = samples.iter().map(|x| x.abs()).collect();
    let (_, tau, _) = mags.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Ok(*tau)
}

/// Hard-limits the waveform at its per-utterance magnitude percentile.
pub fn clip_signal(w: &Waveform, clip_fraction: f64) -> Result<Waveform> {
    let tau = clip_threshold(&w.samples, clip_fraction)?;
    Ok(Waveform::new(
        w.samples.iter().map(|x| x.clamp(-tau, tau)).collect(),
        w.sample_rate,
    ))
}
