use candle_core::{DType, Device, Tensor};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{VocoderConfig, STEP_EMBEDDING_DIM, STEP_HIDDEN_DIM};
use super::NoiseSchedule;
use crate::dsp::MelSpectrogram;
use crate::nn::{leaky_relu, sigmoid, Checkpoint, Conv1d, ConvTranspose2d, Linear, ParamStore};
use crate::{Error, Result};

pub const VOCODER_COMPONENT: &str = "vocoder";

/// Where a conditioner came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    ReferenceFromClean,
    ReferenceFromDegraded,
    DeepCnn,
}

/// Mel features upsampled to one column per audio sample.
#[derive(Debug, Clone)]
pub struct Conditioner {
    values: Tensor,
    provenance: Provenance,
    hop_length: usize,
}

impl Conditioner {
    /// `values` is `[n_mels, L]` with `L` a whole number of hops.
    pub fn new(values: Tensor, provenance: Provenance, hop_length: usize) -> Result<Self> {
        let (_, len) = values.dims2()?;
        if hop_length == 0 || len == 0 || len % hop_length != 0 {
            return Err(Error::Shape(format!(
                "conditioner length {len} is not a positive multiple of hop {hop_length}"
            )));
        }
        Ok(Self {
            values,
            provenance,
            hop_length,
        })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn n_mels(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn len(&self) -> usize {
        self.values.dims()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_frames(&self) -> usize {
        self.len() / self.hop_length
    }

    pub fn hop_length(&self) -> usize {
        self.hop_length
    }

    pub fn to_array(&self) -> Result<Array2<f64>> {
        let v = self.values.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        let (r, c) = (v.len(), self.len());
        Ok(Array2::from_shape_vec((r, c), v.into_iter().flatten().collect())
            .expect("rectangular tensor"))
    }
}

/// `[n_mels, F]` mel → `[1, n_mels, F]` tensor.
pub fn mel_tensor(m: &MelSpectrogram, dtype: DType) -> Result<Tensor> {
    let (r, c) = m.values.dim();
    let data: Vec<f64> = m.values.iter().copied().collect();
    Ok(Tensor::from_vec(data, (1, r, c), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Two transposed convolutions, each followed by a leaky relu.
#[derive(Debug, Clone)]
pub struct ReferenceUpsampler {
    layers: Vec<ConvTranspose2d>,
    slope: f64,
    n_mels: usize,
}

impl ReferenceUpsampler {
    fn new(store: &mut ParamStore, cfg: &VocoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let u = &cfg.upsampler;
        let layers = (0..2)
            .map(|i| {
                ConvTranspose2d::new(store, &format!("upsampler.{i}"), 1, 1, u.kernel, u.stride, u.padding, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            slope: u.leaky_slope,
            n_mels: cfg.mel.n_mels,
        })
    }

    pub fn factor(&self) -> usize {
        self.layers.iter().map(|l| l.stride()).product()
    }

    /// Copy sharing the weights but recording no autodiff graph.
    pub fn detached(&self) -> Self {
        Self {
            layers: self.layers.iter().map(ConvTranspose2d::detached).collect(),
            ..*self
        }
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight().elem_count() + l.bias().elem_count())
            .sum()
    }

    /// Raw weights in layer order, for checking that nothing moved them.
    pub fn parameter_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for l in &self.layers {
            for t in [l.weight(), l.bias()] {
                let v = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
                out.extend(v.iter().flat_map(|x| x.to_le_bytes()));
            }
        }
        Ok(out)
    }

    /// `[B, n_mels, F] → [B, n_mels, factor · F]`
    pub fn forward(&self, mel: &Tensor) -> Result<Tensor> {
        let (_, n_mels, _) = mel.dims3()?;
        if n_mels != self.n_mels {
            return Err(Error::Shape(format!(
                "mel has {n_mels} bands, upsampler expects {}",
                self.n_mels
            )));
        }
        let mut x = mel.unsqueeze(1)?;
        for l in &self.layers {
            x = leaky_relu(&l.forward(&x)?, self.slope)?;
        }
        Ok(x.squeeze(1)?)
    }
}

#[derive(Debug, Clone)]
struct ResidualLayer {
    diffusion_proj: Linear,
    dilated: Conv1d,
    cond_proj: Conv1d,
    out_proj: Conv1d,
}

impl ResidualLayer {
    fn detached(&self) -> Self {
        Self {
            diffusion_proj: self.diffusion_proj.detached(),
            dilated: self.dilated.detached(),
            cond_proj: self.cond_proj.detached(),
            out_proj: self.out_proj.detached(),
        }
    }
}

/// Inputs for one evaluation of the training objective.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    /// `[B, L]`
    pub audio: Tensor,
    /// `[B, n_mels, L / hop]`
    pub mel: Tensor,
    pub steps: Vec<usize>,
    /// `[B, L]`
    pub noise: Tensor,
}

/// Residual dilated-convolution noise predictor plus its mel upsampler.
#[derive(Debug, Clone)]
pub struct VocoderModel {
    config: VocoderConfig,
    schedule: NoiseSchedule,
    params: ParamStore,
    input: Conv1d,
    step_table: Tensor,
    step_fc1: Linear,
    step_fc2: Linear,
    layers: Vec<ResidualLayer>,
    skip_proj: Conv1d,
    output: Conv1d,
    upsampler: ReferenceUpsampler,
}

fn step_table(steps: usize, dtype: DType) -> Result<Tensor> {
    let half = STEP_EMBEDDING_DIM / 2;
    let mut data = Vec::with_capacity(steps * STEP_EMBEDDING_DIM);
    for t in 0..steps {
        let freqs: Vec<f64> = (0..half)
            .map(|j| t as f64 * 10f64.powf(j as f64 * 4.0 / (half - 1) as f64))
            .collect();
        data.extend(freqs.iter().map(|f| f.sin()));
        data.extend(freqs.iter().map(|f| f.cos()));
    }
    Ok(Tensor::from_vec(data, (steps, STEP_EMBEDDING_DIM), &Device::Cpu)?.to_dtype(dtype)?)
}

impl VocoderModel {
    pub fn new(config: VocoderConfig, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new(dtype);
        let c = config.residual_channels;
        let n_mels = config.mel.n_mels;
        let input = Conv1d::new(&mut p, "input", 1, c, 1, 1, false, &mut rng)?;
        let step_fc1 = Linear::new(&mut p, "step.fc1", STEP_EMBEDDING_DIM, STEP_HIDDEN_DIM, &mut rng)?;
        let step_fc2 = Linear::new(&mut p, "step.fc2", STEP_HIDDEN_DIM, STEP_HIDDEN_DIM, &mut rng)?;
        let layers = config
            .dilations()
            .into_iter()
            .enumerate()
            .map(|(i, d)| {
                let n = |s: &str| format!("layers.{i:02}.{s}");
                Ok(ResidualLayer {
                    diffusion_proj: Linear::new(&mut p, &n("diffusion_proj"), STEP_HIDDEN_DIM, c, &mut rng)?,
                    dilated: Conv1d::new(&mut p, &n("dilated"), c, 2 * c, 3, d, false, &mut rng)?,
                    cond_proj: Conv1d::new(&mut p, &n("cond_proj"), n_mels, 2 * c, 1, 1, false, &mut rng)?,
                    out_proj: Conv1d::new(&mut p, &n("out_proj"), c, 2 * c, 1, 1, false, &mut rng)?,
                })
            })
            .collect::<Result<_>>()?;
        let skip_proj = Conv1d::new(&mut p, "skip_proj", c, c, 1, 1, false, &mut rng)?;
        // Zero output head: the untrained model predicts zero noise.
        let output = Conv1d::new(&mut p, "output", c, 1, 1, 1, true, &mut rng)?;
        let upsampler = ReferenceUpsampler::new(&mut p, &config, &mut rng)?;
        Ok(Self {
            schedule: config.schedule()?,
            step_table: step_table(config.diffusion_steps, dtype)?,
            config,
            params: p,
            input,
            step_fc1,
            step_fc2,
            layers,
            skip_proj,
            output,
            upsampler,
        })
    }

    /// Copy for inference: shares the weights but records no autodiff graph,
    /// so intermediates are freed as soon as they are used.
    pub fn frozen(&self) -> Self {
        Self {
            config: self.config.clone(),
            schedule: self.schedule.clone(),
            params: self.params.clone(),
            input: self.input.detached(),
            step_table: self.step_table.clone(),
            step_fc1: self.step_fc1.detached(),
            step_fc2: self.step_fc2.detached(),
            layers: self.layers.iter().map(ResidualLayer::detached).collect(),
            skip_proj: self.skip_proj.detached(),
            output: self.output.detached(),
            upsampler: self.upsampler.detached(),
        }
    }

    pub fn config(&self) -> &VocoderConfig {
        &self.config
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn upsampler(&self) -> &ReferenceUpsampler {
        &self.upsampler
    }

    /// Rebuilds a model from the `param.*` tensors and config of a checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_component(VOCODER_COMPONENT)?;
        let config: VocoderConfig = serde_json::from_value(
            ck.config
                .get("model")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("vocoder checkpoint has no model config".into()))?,
        )?;
        let tensors = ck.with_prefix("param.");
        let dtype = tensors
            .values()
            .next()
            .map(|t| t.dtype())
            .ok_or_else(|| Error::Checkpoint("vocoder checkpoint has no parameters".into()))?;
        let model = Self::new(config, dtype, 0)?;
        model.params.load(&tensors)?;
        Ok(model)
    }

    /// Per-layer conditioner projections; constant across sampling steps.
    pub fn project_conditioner(&self, cond: &Tensor) -> Result<Vec<Tensor>> {
        let (_, n_mels, _) = cond.dims3()?;
        if n_mels != self.config.mel.n_mels {
            return Err(Error::Shape(format!(
                "conditioner has {n_mels} bands, model expects {}",
                self.config.mel.n_mels
            )));
        }
        self.layers.iter().map(|l| l.cond_proj.forward(cond)).collect()
    }

    fn step_embedding(&self, steps: &[usize]) -> Result<Tensor> {
        for &t in steps {
            self.schedule.check_step(t)?;
        }
        let idx: Vec<u32> = steps.iter().map(|&t| t as u32).collect();
        let idx = Tensor::new(idx, &Device::Cpu)?;
        let e = self.step_table.index_select(&idx, 0)?;
        let e = self.step_fc1.forward(&e)?.silu()?;
        Ok(self.step_fc2.forward(&e)?.silu()?)
    }

    /// Noise estimate for `x_t` `[B, L]` given projected conditioners.
    pub fn predict_projected(&self, x_t: &Tensor, steps: &[usize], cond: &[Tensor]) -> Result<Tensor> {
        let (b, len) = x_t.dims2()?;
        if steps.len() != b || cond.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "batch of {b} with {} steps and {} conditioner projections",
                steps.len(),
                cond.len()
            )));
        }
        if cond[0].dim(2)? != len {
            return Err(Error::Shape(format!(
                "signal length {len} but conditioner length {}",
                cond[0].dim(2)?
            )));
        }
        let emb = self.step_embedding(steps)?;
        let c = self.config.residual_channels;
        let mut x = self.input.forward(&x_t.unsqueeze(1)?)?.relu()?;
        let mut skip: Option<Tensor> = None;
        let norm = std::f64::consts::FRAC_1_SQRT_2;
        for (layer, cp) in self.layers.iter().zip(cond) {
            let d = layer.diffusion_proj.forward(&emb)?.unsqueeze(2)?;
            let y = x.broadcast_add(&d)?;
            let y = (layer.dilated.forward(&y)? + cp)?;
            let y = (sigmoid(&y.narrow(1, 0, c)?)? * y.narrow(1, c, c)?.tanh()?)?;
            let y = layer.out_proj.forward(&y)?;
            x = ((x + y.narrow(1, 0, c)?)? * norm)?;
            let s = y.narrow(1, c, c)?;
            skip = Some(match skip {
                None => s,
                Some(acc) => (acc + s)?,
            });
        }
        let skip = (skip.expect("at least one layer") / (self.layers.len() as f64).sqrt())?;
        let y = self.skip_proj.forward(&skip)?.relu()?;
        Ok(self.output.forward(&y)?.squeeze(1)?)
    }

    /// Tensor-level noise prediction. `cond` is `[B, n_mels, L]`; its length
    /// is not checked against the hop here.
    pub fn predict(&self, x_t: &Tensor, steps: &[usize], cond: &Tensor) -> Result<Tensor> {
        self.predict_projected(x_t, steps, &self.project_conditioner(cond)?)
    }

    /// Training objective on one batch. Returns a scalar tensor.
    pub fn loss(&self, batch: &TrainBatch) -> Result<Tensor> {
        let (b, len) = batch.audio.dims2()?;
        if batch.noise.dims() != [b, len] {
            return Err(Error::Shape("noise and audio shapes differ".into()));
        }
        let cond = self.upsampler.forward(&batch.mel)?;
        if cond.dim(2)? != len {
            return Err(Error::Shape(format!(
                "audio crop of {len} samples but {} conditioner columns",
                cond.dim(2)?
            )));
        }
        let ab = &self.schedule.alpha_bars;
        let a: Vec<f64> = batch.steps.iter().map(|&t| ab[t].sqrt()).collect();
        let s: Vec<f64> = batch.steps.iter().map(|&t| (1.0 - ab[t]).sqrt()).collect();
        let col = |v: Vec<f64>| -> Result<Tensor> {
            Ok(Tensor::from_vec(v, (b, 1), &Device::Cpu)?.to_dtype(self.dtype())?)
        };
        for &t in &batch.steps {
            self.schedule.check_step(t)?;
        }
        let x_t = (batch.audio.broadcast_mul(&col(a)?)? + batch.noise.broadcast_mul(&col(s)?)?)?;
        let pred = self.predict(&x_t, &batch.steps, &cond)?;
        let diff = (&batch.noise - pred)?;
        Ok(match self.config.loss {
            super::NoiseLoss::L1 => diff.abs()?.mean_all()?,
            super::NoiseLoss::L2 => diff.sqr()?.mean_all()?,
        })
    }
}

/// Mel → conditioner through the reference upsampler.
pub fn upsample_reference(
    m: &MelSpectrogram,
    u: &ReferenceUpsampler,
    provenance: Provenance,
    dtype: DType,
) -> Result<Conditioner> {
    if m.n_mels() != u.n_mels() {
        return Err(Error::Shape(format!(
            "mel has {} bands, upsampler expects {}",
            m.n_mels(),
            u.n_mels()
        )));
    }
    if m.hop_length != u.factor() {
        return Err(Error::Shape(format!(
            "mel hop {} differs from upsampling factor {}",
            m.hop_length,
            u.factor()
        )));
    }
    let c = u.detached().forward(&mel_tensor(m, dtype)?)?.squeeze(0)?;
    Conditioner::new(c, provenance, m.hop_length)
}

/// One noise estimate for a single waveform.
pub fn predict_noise(model: &VocoderModel, x_t: &[f64], t: usize, c: &Conditioner) -> Result<Vec<f64>> {
    check_conditioner(model, c, x_t.len())?;
    let x = Tensor::from_vec(x_t.to_vec(), (1, x_t.len()), &Device::Cpu)?.to_dtype(model.dtype())?;
    let cond = c.values().to_dtype(model.dtype())?.unsqueeze(0)?;
    let y = model.predict(&x, &[t], &cond)?;
    crate::nn::to_f64_vec(&y)
}

pub(crate) fn check_conditioner(model: &VocoderModel, c: &Conditioner, len: usize) -> Result<()> {
    let hop = model.config().mel.hop_length;
    if c.hop_length() != hop || c.len() != hop * c.n_frames() {
        return Err(Error::Shape(format!(
            "conditioner hop {} does not match model hop {hop}",
            c.hop_length()
        )));
    }
    if c.n_mels() != model.config().mel.n_mels {
        return Err(Error::Shape(format!(
            "conditioner has {} bands, model expects {}",
            c.n_mels(),
            model.config().mel.n_mels
        )));
    }
    if len != c.len() {
        return Err(Error::Shape(format!(
            "signal has {len} samples but conditioner has {}",
            c.len()
        )));
    }
    Ok(())
}
