use candle_core::{Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::model::{check_conditioner, Conditioner, VocoderModel};
use crate::dsp::Waveform;
use crate::nn::to_f64_vec;
use crate::Result;

/// Ancestral sampling from pure noise, seeded.
pub fn sample(model: &VocoderModel, c: &Conditioner, seed: u64) -> Result<Waveform> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start: Vec<f64> = (0..c.len()).map(|_| rng.sample(StandardNormal)).collect();
    let x = reverse_process(model, c, start, &mut rng)?;
    Ok(Waveform::new(x, model.config().mel.sample_rate))
}

/// Runs the reverse chain from `x_{T−1} = start` down to `x_0`, then clamps
/// to [−1, 1]. Fresh noise is drawn from `rng` at every step except the last.
pub fn reverse_process(
    model: &VocoderModel,
    c: &Conditioner,
    start: Vec<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    check_conditioner(model, c, start.len())?;
    let frozen = model.frozen();
    let model = &frozen;
    let s = model.schedule();
    let dtype = model.dtype();
    let cond = model.project_conditioner(&c.values().to_dtype(dtype)?.unsqueeze(0)?)?;
    let n = start.len();
    let mut x = start;
    for t in (0..s.len()).rev() {
        let xt = Tensor::from_vec(x.clone(), (1, n), &Device::Cpu)?.to_dtype(dtype)?;
        let eps = to_f64_vec(&model.predict_projected(&xt, &[t], &cond)?)?;
        let k = s.betas[t] / (1.0 - s.alpha_bars[t]).sqrt();
        let inv = 1.0 / s.alphas[t].sqrt();
        for (xi, e) in x.iter_mut().zip(&eps) {
            *xi = (*xi - k * e) * inv;
        }
        if t > 0 {
            let sigma = s.posterior_std(t);
            for xi in x.iter_mut() {
                *xi += sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    for xi in x.iter_mut() {
        *xi = xi.clamp(-1.0, 1.0);
    }
    Ok(x)
}
