use std::collections::BTreeMap;

use candle_core::DType;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{match_loss, DeepUpsampler, DeepUpsamplerConfig, UPSAMPLER_COMPONENT};
use super::restore::check_mel_compatible;
use crate::diffusion::{source_mel, stack_mels, PairedUtterance, VocoderModel};
use crate::nn::{Adam, AdamConfig, Checkpoint, Mode, RngState};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UpsamplerTrainOptions {
    pub lr: f64,
    pub steps: u64,
    pub batch_size: usize,
    /// Mel frames per training crop.
    pub crop_frames: usize,
    pub seed: u64,
}

impl Default for UpsamplerTrainOptions {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            steps: 50_000,
            batch_size: 4,
            crop_frames: 62,
            seed: 0,
        }
    }
}

impl UpsamplerTrainOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.steps == 0 || self.batch_size == 0 || self.crop_frames == 0 {
            return Err(Error::Config("steps, batch size and crop must be positive".into()));
        }
        Ok(())
    }
}

struct MelPair {
    clean: ndarray::Array2<f64>,
    degraded: ndarray::Array2<f64>,
}

/// Stage-two loop: fit the deep upsampler on degraded mels to the frozen
/// reference upsampler's output on clean mels.
pub struct UpsamplerTrainer {
    upsampler: DeepUpsampler,
    vocoder: VocoderModel,
    adam: Adam,
    rng: ChaCha8Rng,
    step: u64,
    options: UpsamplerTrainOptions,
    data: Vec<MelPair>,
    losses: Vec<f64>,
}

fn prepare(data: &[PairedUtterance], vocoder: &VocoderModel) -> Result<Vec<MelPair>> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mel = &vocoder.config().mel;
    data.iter()
        .map(|u| {
            Ok(MelPair {
                clean: source_mel(u, false, mel)?,
                degraded: source_mel(u, true, mel)?,
            })
        })
        .collect()
}

impl UpsamplerTrainer {
    /// `vocoder` should come from a clean-conditioner checkpoint; its
    /// upsampler is the frozen target.
    pub fn new(
        data: &[PairedUtterance],
        vocoder: VocoderModel,
        config: DeepUpsamplerConfig,
        options: UpsamplerTrainOptions,
        dtype: DType,
    ) -> Result<Self> {
        options.validate()?;
        check_mel_compatible(&config.mel, &vocoder.config().mel)?;
        let prepared = prepare(data, &vocoder)?;
        let upsampler = DeepUpsampler::new(config, dtype, options.seed)?;
        let adam = Adam::new(
            upsampler.params(),
            AdamConfig {
                lr: options.lr,
                ..Default::default()
            },
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        rng.set_stream(2);
        Ok(Self {
            upsampler,
            vocoder,
            adam,
            rng,
            step: 0,
            options,
            data: prepared,
            losses: Vec::new(),
        })
    }

    pub fn resume(ck: &Checkpoint, vocoder: VocoderModel, data: &[PairedUtterance]) -> Result<Self> {
        let upsampler = DeepUpsampler::from_checkpoint(ck)?;
        check_mel_compatible(&upsampler.config().mel, &vocoder.config().mel)?;
        let options: UpsamplerTrainOptions = serde_json::from_value(
            ck.config
                .get("options")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("upsampler checkpoint lacks options".into()))?,
        )?;
        let rng = ck
            .rng
            .ok_or_else(|| Error::Checkpoint("upsampler checkpoint has no RNG state".into()))?
            .restore();
        let mut adam = Adam::new(
            upsampler.params(),
            AdamConfig {
                lr: options.lr,
                ..Default::default()
            },
        )?;
        adam.load_state(ck.step, &ck.tensors)?;
        let prepared = prepare(data, &vocoder)?;
        Ok(Self {
            upsampler,
            vocoder,
            adam,
            rng,
            step: ck.step,
            options,
            data: prepared,
            losses: Vec::new(),
        })
    }

    pub fn upsampler(&self) -> &DeepUpsampler {
        &self.upsampler
    }

    pub fn into_upsampler(self) -> DeepUpsampler {
        self.upsampler
    }

    pub fn vocoder(&self) -> &VocoderModel {
        &self.vocoder
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn step(&mut self) -> Result<f64> {
        let frames = self.options.crop_frames;
        let floor = self.vocoder.config().mel.log_floor();
        let mut clean = Vec::with_capacity(self.options.batch_size);
        let mut degraded = Vec::with_capacity(self.options.batch_size);
        for _ in 0..self.options.batch_size {
            let p = &self.data[self.rng.random_range(0..self.data.len())];
            let n = p.clean.ncols();
            let start = self.rng.random_range(0..=n.saturating_sub(frames));
            let take = (n - start).min(frames);
            for (src, dst) in [(&p.clean, &mut clean), (&p.degraded, &mut degraded)] {
                let mut m = ndarray::Array2::from_elem((src.nrows(), frames), floor);
                m.slice_mut(ndarray::s![.., ..take])
                    .assign(&src.slice(ndarray::s![.., start..start + take]));
                dst.push(m);
            }
        }
        let dtype = self.upsampler.dtype();
        // The reference output is a constant: no gradient reaches the vocoder.
        let target = self
            .vocoder
            .upsampler()
            .detached()
            .forward(&stack_mels(&clean, dtype)?)?;
        let pred = self.upsampler.forward(&stack_mels(&degraded, dtype)?, Mode::Train)?;
        let loss = match_loss(&target, &pred)?;
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "upsampler loss {value} at step {}",
                self.step
            )));
        }
        let grads = loss.backward()?;
        self.adam.step(self.upsampler.params(), &grads)?;
        if !self.upsampler.params().all_finite()? {
            return Err(Error::NonFinite(format!(
                "upsampler parameters after step {} (loss was {value})",
                self.step
            )));
        }
        self.step += 1;
        self.losses.push(value);
        Ok(value)
    }

    pub fn run(&mut self, mut on_step: impl FnMut(u64, f64)) -> Result<()> {
        while self.step < self.options.steps {
            let l = self.step()?;
            on_step(self.step, l);
        }
        Ok(())
    }

    /// Mean eval-mode loss over every full utterance.
    pub fn evaluate(&self) -> Result<f64> {
        let dtype = self.upsampler.dtype();
        let mut total = 0.0;
        for p in &self.data {
            let target = self
                .vocoder
                .upsampler()
                .detached()
                .forward(&stack_mels(std::slice::from_ref(&p.clean), dtype)?)?;
            let pred = self
                .upsampler
                .forward(&stack_mels(std::slice::from_ref(&p.degraded), dtype)?, Mode::Eval)?;
            total += match_loss(&target, &pred)?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        }
        Ok(total / self.data.len() as f64)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut tensors = BTreeMap::new();
        for (k, t) in self.upsampler.params().snapshot()? {
            tensors.insert(format!("param.{k}"), t);
        }
        for (k, t) in self.upsampler.buffers().snapshot()? {
            tensors.insert(format!("buffer.{k}"), t);
        }
        tensors.extend(self.adam.state_tensors());
        Ok(Checkpoint {
            component: UPSAMPLER_COMPONENT.into(),
            config: serde_json::json!({
                "model": self.upsampler.config(),
                "options": self.options,
            }),
            step: self.step,
            rng: Some(RngState::capture(&self.rng)),
            tensors,
        })
    }
}

pub fn train_deep_upsampler(
    data: &[PairedUtterance],
    vocoder: VocoderModel,
    config: DeepUpsamplerConfig,
    options: UpsamplerTrainOptions,
) -> Result<UpsamplerTrainer> {
    let mut trainer = UpsamplerTrainer::new(data, vocoder, config, options, DType::F32)?;
    trainer.run(|step, loss| log::debug!("upsampler step {step} loss {loss:.5}"))?;
    Ok(trainer)
}
