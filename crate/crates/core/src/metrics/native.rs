use crate::dsp::{mel_spectrogram, stft_magnitude, MelConfig, Waveform};
use crate::{Error, Result};

pub const LSD_EPSILON: f64 = 1e-8;
pub const SI_SDR_CAP_DB: f64 = 100.0;
pub const MCD_COEFFS: usize = 13;

fn check_pair(a: &Waveform, b: &Waveform) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "reference has {} samples, estimate has {}",
            a.len(),
            b.len()
        )));
    }
    if a.sample_rate != b.sample_rate {
        return Err(Error::InvalidArgument(format!(
            "reference is {} Hz, estimate is {} Hz",
            a.sample_rate, b.sample_rate
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("cannot score empty signals".into()));
    }
    Ok(())
}

/// Log-spectral distance in dB (STFT 1024 / hop 256).
pub fn lsd(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_pair(reference, estimate)?;
    let r = stft_magnitude(&reference.samples, 1024, 1024, 256);
    let e = stft_magnitude(&estimate.samples, 1024, 1024, 256);
    let db = |v: f64| 20.0 * (v + LSD_EPSILON).log10();
    let (bins, frames) = r.dim();
    let total: f64 = (0..frames)
        .map(|f| {
            let ms = (0..bins)
                .map(|k| (db(r[[k, f]]) - db(e[[k, f]])).powi(2))
                .sum::<f64>()
                / bins as f64;
            ms.sqrt()
        })
        .sum();
    Ok(total / frames as f64)
}

/// Scale-invariant SDR in dB, clamped to ±100 dB. Not symmetric: the
/// estimate is projected onto the reference.
pub fn si_sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_pair(reference, estimate)?;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let rr = dot(&reference.samples, &reference.samples);
    if rr == 0.0 {
        return Err(Error::InvalidArgument("SI-SDR reference is all zero".into()));
    }
    let alpha = dot(&estimate.samples, &reference.samples) / rr;
    let (mut target, mut residual) = (0.0, 0.0);
    for (r, e) in reference.samples.iter().zip(&estimate.samples) {
        let t = alpha * r;
        target += t * t;
        residual += (e - t) * (e - t);
    }
    let ratio = 10.0 * (target / residual).log10();
    Ok(if ratio.is_nan() {
        -SI_SDR_CAP_DB
    } else {
        ratio.clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB)
    })
}

/// Orthonormal DCT-II of one column of log-mel values, coefficients 0..n.
pub(crate) fn dct_ii(x: &[f64], n: usize) -> Vec<f64> {
    let len = x.len() as f64;
    (0..n)
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / len).cos())
                .sum();
            let norm = if k == 0 { (1.0 / len).sqrt() } else { (2.0 / len).sqrt() };
            s * norm
        })
        .collect()
}

/// Mel-cepstral distortion in dB over cepstra 1..=13, frame averaged.
pub fn mcd(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    let cfg = MelConfig {
        sample_rate: reference.sample_rate,
        ..MelConfig::default()
    };
    mcd_with(reference, estimate, &cfg)
}

pub fn mcd_with(reference: &Waveform, estimate: &Waveform, cfg: &MelConfig) -> Result<f64> {
    check_pair(reference, estimate)?;
    let r = mel_spectrogram(reference, cfg)?.values;
    let e = mel_spectrogram(estimate, cfg)?.values;
    let k = 10.0 / std::f64::consts::LN_10 * 2f64.sqrt();
    let frames = r.ncols();
    let total: f64 = (0..frames)
        .map(|f| {
            let cr = dct_ii(&r.column(f).to_vec(), MCD_COEFFS + 1);
            let ce = dct_ii(&e.column(f).to_vec(), MCD_COEFFS + 1);
            let ss: f64 = (1..=MCD_COEFFS).map(|d| (cr[d] - ce[d]).powi(2)).sum();
            k * ss.sqrt()
        })
        .sum();
    Ok(total / frames as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn noise(n: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..n).map(|_| rng.random_range(-0.5..0.5)).collect(), 16000)
    }

    /// Plain DFT of a centered, reflect-padded, Hann-windowed frame.
    fn brute_lsd(a: &[f64], b: &[f64]) -> f64 {
        let n = 1024;
        let hop = 256;
        let pad = n / 2;
        let reflect = |x: &[f64], i: isize| -> f64 {
            let len = x.len() as isize;
            let mut j = i;
            loop {
                if j < 0 {
                    j = -j;
                } else if j >= len {
                    j = 2 * (len - 1) - j;
                } else {
                    return x[j as usize];
                }
            }
        };
        let frames = a.len().div_ceil(hop);
        let spec = |x: &[f64], f: usize| -> Vec<f64> {
            let frame: Vec<f64> = (0..n)
                .map(|i| {
                    let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
                    w * reflect(x, (f * hop + i) as isize - pad as isize)
                })
                .collect();
            (0..=n / 2)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (i, v) in frame.iter().enumerate() {
                        let ang = -2.0 * PI * (k * i) as f64 / n as f64;
                        re += v * ang.cos();
                        im += v * ang.sin();
                    }
                    (re * re + im * im).sqrt()
                })
                .collect()
        };
        let mut total = 0.0;
        for f in 0..frames {
            let (sa, sb) = (spec(a, f), spec(b, f));
            let mut acc = 0.0;
            for k in 0..sa.len() {
                let d = 20.0 * (sa[k] + 1e-8).log10() - 20.0 * (sb[k] + 1e-8).log10();
                acc += d * d;
            }
            total += (acc / sa.len() as f64).sqrt();
        }
        total / frames as f64
    }

    #[test]
    fn lsd_properties() {
        let a = noise(3000, 1);
        assert_eq!(lsd(&a, &a).unwrap(), 0.0);
        let b = Waveform::new(a.samples.iter().map(|v| 2.0 * v).collect(), 16000);
        assert!((lsd(&a, &b).unwrap() - 20.0 * 2f64.log10()).abs() < 1e-6);
        let c = noise(3000, 2);
        assert!((lsd(&a, &c).unwrap() - lsd(&c, &a).unwrap()).abs() < 1e-12);
        assert!(lsd(&a, &noise(2999, 2)).is_err());
    }

    #[test]
    fn lsd_matches_direct_dft() {
        let a = noise(2100, 3);
        let b = noise(2100, 4);
        let want = brute_lsd(&a.samples, &b.samples);
        assert!((lsd(&a, &b).unwrap() - want).abs() < 1e-9, "{want}");
    }

    #[test]
    fn si_sdr_cases() {
        let a = noise(1000, 5);
        assert_eq!(si_sdr(&a, &a).unwrap(), 100.0);
        let scaled = Waveform::new(a.samples.iter().map(|v| 0.3 * v).collect(), 16000);
        assert_eq!(si_sdr(&a, &scaled).unwrap(), 100.0);
        // Orthogonal: alternate signs against a constant.
        let r = Waveform::new(vec![1.0; 1000], 16000);
        let o = Waveform::new((0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect(), 16000);
        assert_eq!(si_sdr(&r, &o).unwrap(), -100.0);
        // Hand value: e = r + n with n ⟂ r and |n|² = |r|²/10 gives 10 dB.
        let n = Waveform::new(o.samples.iter().map(|v| v / 10f64.sqrt()).collect(), 16000);
        let e = Waveform::new(r.samples.iter().zip(&n.samples).map(|(a, b)| a + b).collect(), 16000);
        assert!((si_sdr(&r, &e).unwrap() - 10.0).abs() < 1e-9);
        assert!(si_sdr(&Waveform::zeros(1000, 16000), &a).is_err());
    }

    #[test]
    fn mcd_cases() {
        let a = noise(4000, 6);
        assert_eq!(mcd(&a, &a).unwrap(), 0.0);
        let silence = Waveform::zeros(4000, 16000);
        let v = mcd(&a, &silence).unwrap();
        assert!(v.is_finite() && v > 0.0);
        let b = noise(4000, 7);
        assert!((mcd(&a, &b).unwrap() - mcd(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mcd_matches_matrix_dct() {
        let a = noise(3000, 8);
        let b = Waveform::new(
            (0..3000).map(|i| 0.3 * (2.0 * PI * 440.0 * i as f64 / 16000.0).sin()).collect(),
            16000,
        );
        let cfg = MelConfig::default();
        let ma = mel_spectrogram(&a, &cfg).unwrap().values;
        let mb = mel_spectrogram(&b, &cfg).unwrap().values;
        // DCT as an explicit orthonormal matrix, checked orthonormal first.
        let n = 80;
        let basis: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
                (0..n).map(|i| s * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos()).collect()
            })
            .collect();
        for i in 0..n {
            for j in 0..n {
                let d: f64 = basis[i].iter().zip(&basis[j]).map(|(x, y)| x * y).sum();
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-9);
            }
        }
        let mut total = 0.0;
        for f in 0..ma.ncols() {
            let mut ss = 0.0;
            for row in basis.iter().take(14).skip(1) {
                let ca: f64 = row.iter().zip(ma.column(f)).map(|(w, v)| w * v).sum();
                let cb: f64 = row.iter().zip(mb.column(f)).map(|(w, v)| w * v).sum();
                ss += (ca - cb).powi(2);
            }
            total += 10.0 / 10f64.ln() * (2.0 * ss).sqrt();
        }
        let want = total / ma.ncols() as f64;
        assert!((mcd(&a, &b).unwrap() - want).abs() < 1e-6);
    }
}
