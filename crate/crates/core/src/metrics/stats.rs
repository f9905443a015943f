use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::{Error, Result};

/// Two-sided paired t-test result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    /// `None` when the differences have zero variance.
    pub p: Option<f64>,
}

impl PairedTTest {
    pub fn degenerate(&self) -> bool {
        self.p.is_none()
    }
}

/// Two-sided tail probability `P(|T| ≥ |t|)` for Student's t with `df`
/// degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Paired t-test on `a − b` with `n − 1` degrees of freedom.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument("paired t-test needs at least two pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    // Spread at rounding level of the mean counts as none.
    if se <= 1e-14 * mean.abs().max(f64::MIN_POSITIVE) || se == 0.0 {
        let t = if mean == 0.0 { f64::NAN } else { mean.signum() * f64::INFINITY };
        return Ok(PairedTTest {
            n,
            mean_diff: mean,
            t,
            p: None,
        });
    }
    let t = mean / se;
    Ok(PairedTTest {
        n,
        mean_diff: mean,
        t,
        p: Some(student_t_two_sided(t, (n - 1) as f64)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;

    fn ln_gamma(x: f64) -> f64 {
        // Stirling series with shift; accurate to ~1e-13 for x ≥ 0.5.
        let mut shift = 0.0;
        let mut z = x;
        while z < 10.0 {
            shift -= z.ln();
            z += 1.0;
        }
        let series = 1.0 / (12.0 * z) - 1.0 / (360.0 * z.powi(3)) + 1.0 / (1260.0 * z.powi(5))
            - 1.0 / (1680.0 * z.powi(7));
        shift + (z - 0.5) * z.ln() - z + 0.5 * (2.0 * PI).ln() + series
    }

    /// `2 ∫_{|t|}^{∞} f(s) ds` by composite Simpson after `s = tan θ`, which
    /// maps the infinite tail onto a finite interval.
    fn tail_by_quadrature(t: f64, df: f64) -> f64 {
        let c = (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp() / (df * PI).sqrt();
        let f = |th: f64| {
            let s = th.tan();
            let sec2 = 1.0 + s * s;
            c * (1.0 + s * s / df).powf(-(df + 1.0) / 2.0) * sec2
        };
        let (a, b) = (t.abs().atan(), PI / 2.0);
        let n = 200_000;
        let h = (b - a) / n as f64;
        let mut acc = f(a);
        for i in 1..n {
            acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        // f(π/2) → 0 for df > 1.
        2.0 * acc * h / 3.0
    }

    #[test]
    fn symmetric_differences_give_p_one() {
        let r = paired_t_test(&[1.0, -1.0, 1.0, -1.0], &[0.0; 4]).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_shift_is_flagged() {
        let b = [0.3, 1.7, -2.0, 5.5];
        let a: Vec<f64> = b.iter().map(|v| v + 0.25).collect();
        let r = paired_t_test(&a, &b).unwrap();
        assert!(r.degenerate());
        assert!(r.t.is_infinite());
        let same = paired_t_test(&b, &b).unwrap();
        assert!(same.degenerate() && same.t.is_nan());
        assert!(paired_t_test(&[1.0], &[2.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[2.0]).is_err());
    }

    #[test]
    fn p_matches_numerical_integration() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let noise = Normal::new(0.0, 1.0).unwrap();
        for (n, shift) in [(5, 0.3), (12, 0.8), (30, 0.2), (128, 0.15)] {
            let a: Vec<f64> = (0..n).map(|_| noise.sample(&mut rng)).collect();
            let b: Vec<f64> = a.iter().map(|v| v - shift + 0.7 * noise.sample(&mut rng)).collect();
            let r = paired_t_test(&a, &b).unwrap();
            let want = tail_by_quadrature(r.t, (n - 1) as f64);
            assert!((r.p.unwrap() - want).abs() < 1e-6, "n={n}: {} vs {want}", r.p.unwrap());
        }
    }

    #[test]
    fn t_agrees_with_intercept_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = Normal::new(0.4, 1.3).unwrap();
        let d: Vec<f64> = (0..40).map(|_| noise.sample(&mut rng)).collect();
        let r = paired_t_test(&d, &vec![0.0; 40]).unwrap();
        // Least squares on a column of ones: beta = Σd/n, residual variance
        // (Σd² − n·beta²)/(n − 1), standard error sqrt(var / Σ1²).
        let n = d.len() as f64;
        let sum: f64 = d.iter().sum();
        let sum2: f64 = d.iter().map(|v| v * v).sum();
        let beta = sum / n;
        let var = (sum2 - n * beta * beta) / (n - 1.0);
        let t = beta / (var / n).sqrt();
        assert!((r.t.abs() - t.abs()).abs() < 1e-9);
    }
}
