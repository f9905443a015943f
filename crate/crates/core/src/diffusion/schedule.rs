use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Variance schedule of the forward noising process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidArgument("noise schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidArgument(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// `steps` betas evenly spaced from `start` to `end` inclusive.
    pub fn linear(start: f64, end: f64, steps: usize) -> Result<Self> {
        let betas = match steps {
            0 => vec![],
            1 => vec![start],
            n => (0..n)
                .map(|i| start + (end - start) * i as f64 / (n - 1) as f64)
                .collect(),
        };
        Self::from_betas(betas)
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "diffusion step {t} out of range for {} steps",
                self.len()
            )));
        }
        Ok(())
    }

    /// Standard deviation of the ancestral sampling noise injected at step `t`.
    pub fn posterior_std(&self, t: usize) -> f64 {
        if t == 0 {
            return 0.0;
        }
        let ab = self.alpha_bars[t];
        let ab_prev = self.alpha_bars[t - 1];
        ((1.0 - ab_prev) / (1.0 - ab) * self.betas[t]).sqrt()
    }
}

/// `x_t = √ᾱ_t · x0 + √(1 − ᾱ_t) · eps`
pub fn forward_diffuse(x0: &[f64], t: usize, eps: &[f64], s: &NoiseSchedule) -> Result<Vec<f64>> {
    s.check_step(t)?;
    if x0.len() != eps.len() {
        return Err(Error::Shape(format!(
            "noise has {} samples, signal has {}",
            eps.len(),
            x0.len()
        )));
    }
    let a = s.alpha_bars[t].sqrt();
    let b = (1.0 - s.alpha_bars[t]).sqrt();
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn default_schedule_shape() {
        let s = NoiseSchedule::linear(1e-4, 0.05, 50).unwrap();
        assert_eq!(s.len(), 50);
        assert!((s.betas[0] - 1e-4).abs() < 1e-15 && (s.betas[49] - 0.05).abs() < 1e-15);
        assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bars.iter().all(|a| *a > 0.0 && *a < 1.0));
        // Terminal noise level of this schedule is about 0.849, well short of pure noise.
        let terminal = (1.0 - s.alpha_bars[49]).sqrt();
        assert!((terminal - 0.848_72).abs() < 1e-4, "{terminal}");
    }

    #[test]
    fn invalid_schedules() {
        assert!(NoiseSchedule::from_betas(vec![]).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.1, 1.0]).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.0]).is_err());
    }

    #[test]
    fn diffuse_limits() {
        let s = NoiseSchedule::linear(1e-4, 0.05, 50).unwrap();
        let eps = [0.5, -1.0, 2.0];
        let x = forward_diffuse(&[0.0; 3], 10, &eps, &s).unwrap();
        let k = (1.0 - s.alpha_bars[10]).sqrt();
        for (a, e) in x.iter().zip(&eps) {
            assert!((a - k * e).abs() < 1e-15);
        }
        assert!(forward_diffuse(&[0.0; 3], 50, &eps, &s).is_err());
        assert!(forward_diffuse(&[0.0; 2], 0, &eps, &s).is_err());
        // ᾱ → 1 gives back x0.
        let tiny = NoiseSchedule::from_betas(vec![1e-300]).unwrap();
        assert_eq!(forward_diffuse(&[0.25, -0.5, 1.0], 0, &eps, &tiny).unwrap(), vec![0.25, -0.5, 1.0]);
    }

    #[test]
    fn monte_carlo_variance_is_preserved() {
        let s = NoiseSchedule::linear(1e-4, 0.05, 50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for t in [0, 17, 49] {
            let n = 10_000;
            let x0: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let xt = forward_diffuse(&x0, t, &eps, &s).unwrap();
            let mean = xt.iter().sum::<f64>() / n as f64;
            let var = xt.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((var - 1.0).abs() < 0.05, "t={t} var={var}");
        }
    }

    proptest! {
        #[test]
        fn alpha_bars_are_products(
            betas in prop::collection::vec(1e-6f64..0.5, 1..80)
        ) {
            let s = NoiseSchedule::from_betas(betas).unwrap();
            for t in 0..s.len() {
                let p: f64 = s.alphas[..=t].iter().product();
                prop_assert!((s.alpha_bars[t] - p).abs() < 1e-12);
                prop_assert!(s.alpha_bars[t] > 0.0 && s.alpha_bars[t] < 1.0);
                if t > 0 {
                    prop_assert!(s.alpha_bars[t] < s.alpha_bars[t - 1]);
                }
            }
        }
    }
}
