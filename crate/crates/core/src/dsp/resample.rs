use super::Waveform;
use crate::{Error, Result};

/// Cutoff as a fraction of the lower of the two sample rates (0.9 of its
/// Nyquist frequency).
const CUTOFF_FRACTION: f64 = 0.45;
/// Half-width of the interpolation kernel, in sinc zero crossings.
const ZERO_CROSSINGS: f64 = 32.0;
const KAISER_BETA: f64 = 8.6;

/// Polyphase windowed-sinc resampling between rates with a small rational
/// ratio. Output length is `round(len * target / source)`; samples outside
/// the input are treated as zero.
pub fn resample(w: &Waveform, target_rate_hz: u32) -> Result<Waveform> {
    let source = w.sample_rate;
    if source == 0 || target_rate_hz == 0 {
        return Err(Error::InvalidArgument(format!(
            "sample rates must be positive (source {source}, target {target_rate_hz})"
        )));
    }
    if source == target_rate_hz {
        return Ok(w.clone());
    }
    let g = gcd(source as u64, target_rate_hz as u64);
    let up = (target_rate_hz as u64 / g) as usize;
    let down = (source as u64 / g) as usize;
    if up > 4096 {
        return Err(Error::InvalidArgument(format!(
            "resampling ratio {target_rate_hz}/{source} is not a small rational"
        )));
    }

    let bank = PolyphaseBank::new(up, source, target_rate_hz);
    let out_len = (w.len() as f64 * target_rate_hz as f64 / source as f64).round() as usize;
    let x = &w.samples;
    let n_in = x.len() as isize;
    let half = bank.half as isize;
    let out = (0..out_len)
        .map(|n| {
            let pos = n * down;
            let base = (pos / up) as isize;
            let taps = &bank.phases[pos % up];
            let mut acc = 0.0;
            for (j, &h) in taps.iter().enumerate() {
                let k = base + j as isize - half + 1;
                if k >= 0 && k < n_in {
                    acc += h * x[k as usize];
                }
            }
            acc
        })
        .collect();
    Ok(Waveform::new(out, target_rate_hz))
}

struct PolyphaseBank {
    half: usize,
    phases: Vec<Vec<f64>>,
}

impl PolyphaseBank {
    fn new(up: usize, source: u32, target: u32) -> Self {
        let cutoff_hz = CUTOFF_FRACTION * source.min(target) as f64;
        // Normalised to the input rate, in cycles per input sample.
        let fc = cutoff_hz / source as f64;
        let half = (ZERO_CROSSINGS / (2.0 * fc)).ceil() as usize;
        let i0_beta = bessel_i0(KAISER_BETA);
        let phases = (0..up)
            .map(|p| {
                let frac = p as f64 / up as f64;
                // Tap j multiplies input sample base + j - half + 1.
                let mut taps: Vec<f64> = (0..2 * half)
                    .map(|j| {
                        let tau = frac - (j as f64 - half as f64 + 1.0);
                        let r = tau / half as f64;
                        if r.abs() >= 1.0 {
                            return 0.0;
                        }
                        let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
                        2.0 * fc * sinc(2.0 * fc * tau) * window
                    })
                    .collect();
                let sum: f64 = taps.iter().sum();
                taps.iter_mut().for_each(|t| *t /= sum);
                taps
            })
            .collect();
        Self { half, phases }
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, rate: u32, len: usize) -> Waveform {
        Waveform::new(
            (0..len)
                .map(|n| 0.5 * (2.0 * PI * freq * n as f64 / rate as f64).sin())
                .collect(),
            rate,
        )
    }

    fn interior(x: &[f64]) -> &[f64] {
        &x[200..x.len() - 200]
    }

    #[test]
    fn preserves_dc() {
        let y = resample(&Waveform::new(vec![0.3; 16_000], 16_000), 8_000).unwrap();
        assert_eq!(y.len(), 8_000);
        for &v in interior(&y.samples) {
            assert!((v - 0.3).abs() < 1e-3, "{v}");
        }
        let z = resample(&y, 16_000).unwrap();
        assert_eq!(z.len(), 16_000);
        for &v in interior(&z.samples) {
            assert!((v - 0.3).abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn low_tone_matches_analytic_resampled_tone() {
        let y = resample(&sine(100.0, 16_000, 16_000), 8_000).unwrap();
        let expected = sine(100.0, 8_000, 8_000);
        let (a, b) = (interior(&y.samples), interior(&expected.samples));
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(dot / (na * nb) > 0.999);
    }

    #[test]
    fn rejects_out_of_band_tone() {
        let x = sine(7_500.0, 16_000, 16_000);
        let y = resample(&x, 8_000).unwrap();
        let rms = |s: &[f64]| (s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt();
        assert!(rms(interior(&y.samples)) < 1e-3 * rms(&x.samples));
    }

    #[test]
    fn is_linear() {
        let x = sine(440.0, 16_000, 3_000);
        let scaled = Waveform::new(x.samples.iter().map(|v| v * -2.5).collect(), 16_000);
        let a = resample(&scaled, 8_000).unwrap();
        let b = resample(&x, 8_000).unwrap();
        for (p, q) in a.samples.iter().zip(&b.samples) {
            assert!((p - q * -2.5).abs() < 1e-9);
        }
    }

    #[test]
    fn output_length_rounds() {
        let x = Waveform::zeros(1001, 16_000);
        assert_eq!(resample(&x, 8_000).unwrap().len(), 501);
        let x = Waveform::zeros(333, 8_000);
        assert_eq!(resample(&x, 16_000).unwrap().len(), 666);
        assert!(resample(&Waveform::zeros(3, 0), 8_000).is_err());
        assert!(resample(&x, 0).is_err());
    }
}
