use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dsp::{Waveform, DEFAULT_SAMPLE_RATE};

const TARGET_RMS: f64 = 0.1;
/// About −50 dBFS, like a quiet room recording rather than digital silence.
const NOISE_FLOOR_RMS: f64 = 3e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    /// F0 at the start and end of a voiced segment; `None` for noise.
    pub f0: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub waveform: Waveform,
    pub segments: Vec<Segment>,
}

/// Two-pole resonator with unit gain at its centre frequency.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64, rate: f64) -> Self {
        let r = (-PI * bandwidth / rate).exp();
        let theta = 2.0 * PI * freq / rate;
        Self {
            a1: 2.0 * r * theta.cos(),
            a2: -r * r,
            gain: (1.0 - r) * (1.0 - 2.0 * r * (2.0 * theta).cos() + r * r).sqrt(),
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Raised-cosine fade in and out over `ramp` samples.
fn envelope(i: usize, len: usize, ramp: usize) -> f64 {
    let ramp = ramp.min(len / 2).max(1);
    let edge = i.min(len - 1 - i);
    if edge >= ramp {
        1.0
    } else {
        0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
    }
}

fn voiced(len: usize, f0: (f64, f64), rng: &mut ChaCha8Rng, rate: f64) -> Vec<f64> {
    let formants = [
        (rng.random_range(300.0..800.0), rng.random_range(60.0..100.0)),
        (rng.random_range(900.0..2200.0), rng.random_range(80.0..120.0)),
        (rng.random_range(2300.0..3200.0), rng.random_range(100.0..160.0)),
    ];
    let mut filters: Vec<_> = formants.iter().map(|&(f, b)| Resonator::new(f, b, rate)).collect();
    let vibrato_rate = rng.random_range(4.0..6.0);
    let mut phase = 0.0f64;
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let u = i as f64 / len.max(1) as f64;
        let f = f0.0 + (f0.1 - f0.0) * u;
        let f = f * (1.0 + 0.01 * (2.0 * PI * vibrato_rate * i as f64 / rate).sin());
        phase = (phase + 2.0 * PI * f / rate) % (2.0 * PI);
        // Band-limited pulse: harmonics up to 7 kHz with a 1/k tilt.
        let harmonics = (7000.0 / f) as usize;
        let src: f64 = (1..=harmonics).map(|k| (k as f64 * phase).sin() / k as f64).sum();
        // Formants in parallel, so each keeps its own peak.
        let y: f64 = filters.iter_mut().map(|r| r.tick(src)).sum();
        out.push(y);
    }
    out
}

fn unvoiced(len: usize, rng: &mut ChaCha8Rng, rate: f64) -> Vec<f64> {
    let mut hiss = Resonator::new(rng.random_range(3000.0..6000.0), rng.random_range(1500.0..2500.0), rate);
    (0..len).map(|_| hiss.tick(rng.sample(StandardNormal))).collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

/// One utterance of 1 to 3 seconds: voiced segments with gliding F0 in
/// 100-300 Hz, noise bursts, fades, and a background noise floor.
pub fn synth_utterance(seed: u64, index: u64) -> SynthUtterance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let rate = DEFAULT_SAMPLE_RATE as f64;
    let total = (rng.random_range(1.0..3.0) * rate) as usize;
    let mut samples = vec![0.0; total];
    let mut segments = Vec::new();
    let mut pos = (rng.random_range(0.02..0.08) * rate) as usize;
    let mut first = true;
    while pos + 2000 < total {
        let len = ((rng.random_range(0.15..0.4) * rate) as usize).min(total - pos);
        // The first segment is always voiced so every utterance has pitch.
        let is_voiced = first || rng.random_bool(0.7);
        first = false;
        let (mut seg, f0) = if is_voiced {
            let f0 = (rng.random_range(110.0..280.0), rng.random_range(110.0..280.0));
            (voiced(len, f0, &mut rng, rate), Some(f0))
        } else {
            (unvoiced(len, &mut rng, rate), None)
        };
        let level = if is_voiced { 1.0 } else { rng.random_range(0.2..0.5) };
        let scale = level / rms(&seg).max(1e-12);
        for (i, v) in seg.iter_mut().enumerate() {
            *v *= scale * envelope(i, len, 320);
        }
        samples[pos..pos + len].copy_from_slice(&seg);
        segments.push(Segment {
            start: pos,
            end: pos + len,
            f0,
        });
        pos += len + (rng.random_range(0.0..0.06) * rate) as usize;
    }
    let scale = TARGET_RMS / rms(&samples).max(1e-12);
    for v in samples.iter_mut() {
        *v = *v * scale + NOISE_FLOOR_RMS * rng.sample::<f64, _>(StandardNormal);
        *v = v.clamp(-0.99, 0.99);
    }
    SynthUtterance {
        waveform: Waveform::new(samples, DEFAULT_SAMPLE_RATE),
        segments,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::lpc::amdf_pitch;
    use crate::dsp::resample;

    #[test]
    fn deterministic_and_distinct() {
        let a = synth_utterance(7, 0);
        let b = synth_utterance(7, 0);
        let c = synth_utterance(7, 1);
        assert_eq!(a.waveform, b.waveform);
        assert_ne!(a.waveform.samples, c.waveform.samples);
    }

    #[test]
    fn duration_and_level() {
        for i in 0..10 {
            let u = synth_utterance(1, i);
            let d = u.waveform.duration_secs();
            assert!((1.0..=3.0).contains(&d), "{d}");
            let r = u.waveform.rms();
            assert!((0.02..=0.5).contains(&r), "{r}");
            assert!(u.waveform.samples.iter().all(|v| v.abs() < 1.0));
            assert!(u.segments.iter().any(|s| s.f0.is_some()));
        }
    }

    #[test]
    fn voiced_segments_have_trackable_pitch() {
        let mut checked = 0;
        for i in 0..10 {
            let u = synth_utterance(2, i);
            let nb = resample(&u.waveform, 8000).unwrap();
            for s in u.segments.iter().filter(|s| s.f0.is_some()) {
                // Middle of the segment, away from the fades.
                let mid = (s.start + s.end) / 4;
                let buf = &nb.samples[mid - 160..mid + 160];
                let p = amdf_pitch(buf);
                let f = 8000.0 / p.lag as f64;
                assert!((100.0..=300.0).contains(&f), "utterance {i}: {f} Hz");
                checked += 1;
            }
        }
        assert!(checked >= 10);
    }
}
