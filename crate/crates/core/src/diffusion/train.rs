use candle_core::{DType, Device, Tensor};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{TrainBatch, VocoderModel, VOCODER_COMPONENT};
use super::VocoderConfig;
use crate::dsp::{mel_spectrogram, MelConfig, Waveform};
use crate::nn::{Adam, AdamConfig, Checkpoint, RngState};
use crate::{Error, Result};

/// A clean utterance and, when available, its degraded counterpart.
#[derive(Debug, Clone)]
pub struct PairedUtterance {
    pub id: String,
    pub clean: Waveform,
    pub degraded: Option<Waveform>,
}

/// Which mel the vocoder is conditioned on during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionerSource {
    /// Mel of the clean target; the base vocoder of the two-stage system.
    CleanConditioner,
    /// Mel of the degraded input; the end-to-end baseline.
    DegradedConditioner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocoderTrainOptions {
    pub lr: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub crop_samples: usize,
    pub seed: u64,
}

impl Default for VocoderTrainOptions {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            steps: 100_000,
            batch_size: 4,
            crop_samples: 16_384,
            seed: 0,
        }
    }
}

impl VocoderTrainOptions {
    pub fn validate(&self, mel: &MelConfig) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch size must be positive".into()));
        }
        if self.crop_samples == 0 || self.crop_samples % mel.hop_length != 0 {
            return Err(Error::Config(format!(
                "crop of {} samples is not a positive multiple of hop {}",
                self.crop_samples, mel.hop_length
            )));
        }
        Ok(())
    }
}

/// Audio plus the mel it is conditioned on, frame aligned.
#[derive(Debug, Clone)]
pub(crate) struct PreparedUtterance {
    pub audio: Vec<f64>,
    pub mel: Array2<f64>,
}

pub(crate) fn source_mel(u: &PairedUtterance, degraded: bool, mel: &MelConfig) -> Result<Array2<f64>> {
    let w = if degraded {
        let d = u
            .degraded
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("utterance {} has no degraded audio", u.id)))?;
        if d.len() != u.clean.len() || d.sample_rate != u.clean.sample_rate {
            return Err(Error::Shape(format!(
                "utterance {}: degraded audio ({} samples at {} Hz) is not aligned with clean ({} at {} Hz)",
                u.id,
                d.len(),
                d.sample_rate,
                u.clean.len(),
                u.clean.sample_rate
            )));
        }
        d
    } else {
        &u.clean
    };
    if w.sample_rate != mel.sample_rate {
        return Err(Error::InvalidArgument(format!(
            "utterance {} is {} Hz, model expects {} Hz",
            u.id, w.sample_rate, mel.sample_rate
        )));
    }
    Ok(mel_spectrogram(w, mel)?.values)
}

/// Picks an utterance and a frame-aligned window. Short utterances are
/// zero padded, with the mel padded by its floor value.
pub(crate) fn random_crop(
    data: &[PreparedUtterance],
    frames: usize,
    hop: usize,
    floor: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Array2<f64>) {
    let u = &data[rng.random_range(0..data.len())];
    let n_frames = u.mel.ncols();
    let start = rng.random_range(0..=n_frames.saturating_sub(frames));
    let mut audio = vec![0.0; frames * hop];
    let a0 = start * hop;
    let avail = u.audio.len().saturating_sub(a0).min(frames * hop);
    audio[..avail].copy_from_slice(&u.audio[a0..a0 + avail]);
    let mut mel = Array2::from_elem((u.mel.nrows(), frames), floor);
    let take = (n_frames - start).min(frames);
    mel.slice_mut(ndarray::s![.., ..take])
        .assign(&u.mel.slice(ndarray::s![.., start..start + take]));
    (audio, mel)
}

pub(crate) fn stack_mels(mels: &[Array2<f64>], dtype: DType) -> Result<Tensor> {
    let (r, c) = mels[0].dim();
    let data: Vec<f64> = mels.iter().flat_map(|m| m.iter().copied()).collect();
    Ok(Tensor::from_vec(data, (mels.len(), r, c), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Stateful stage-one training loop.
pub struct VocoderTrainer {
    model: VocoderModel,
    adam: Adam,
    rng: ChaCha8Rng,
    step: u64,
    source: ConditionerSource,
    options: VocoderTrainOptions,
    data: Vec<PreparedUtterance>,
    losses: Vec<f64>,
}

fn prepare(
    data: &[PairedUtterance],
    source: ConditionerSource,
    mel: &MelConfig,
) -> Result<Vec<PreparedUtterance>> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    data.iter()
        .map(|u| {
            let degraded = source == ConditionerSource::DegradedConditioner;
            Ok(PreparedUtterance {
                mel: source_mel(u, degraded, mel)?,
                audio: u.clean.samples.clone(),
            })
        })
        .collect()
}

impl VocoderTrainer {
    pub fn new(
        data: &[PairedUtterance],
        source: ConditionerSource,
        config: VocoderConfig,
        options: VocoderTrainOptions,
        dtype: DType,
    ) -> Result<Self> {
        options.validate(&config.mel)?;
        let prepared = prepare(data, source, &config.mel)?;
        let model = VocoderModel::new(config, dtype, options.seed)?;
        let adam = Adam::new(
            model.params(),
            AdamConfig {
                lr: options.lr,
                ..Default::default()
            },
        )?;
        Ok(Self {
            model,
            adam,
            // Separate stream from parameter initialization.
            rng: {
                let mut r = ChaCha8Rng::seed_from_u64(options.seed);
                r.set_stream(1);
                r
            },
            step: 0,
            source,
            options,
            data: prepared,
            losses: Vec::new(),
        })
    }

    /// Continues a run from a checkpoint written by [`VocoderTrainer::checkpoint`].
    pub fn resume(ck: &Checkpoint, data: &[PairedUtterance]) -> Result<Self> {
        let model = VocoderModel::from_checkpoint(ck)?;
        let field = |k: &str| {
            ck.config
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("vocoder checkpoint lacks {k}")))
        };
        let source: ConditionerSource = serde_json::from_value(field("source")?)?;
        let options: VocoderTrainOptions = serde_json::from_value(field("options")?)?;
        let rng = ck
            .rng
            .ok_or_else(|| Error::Checkpoint("vocoder checkpoint has no RNG state".into()))?
            .restore();
        let mut adam = Adam::new(
            model.params(),
            AdamConfig {
                lr: options.lr,
                ..Default::default()
            },
        )?;
        adam.load_state(ck.step, &ck.tensors)?;
        let prepared = prepare(data, source, &model.config().mel)?;
        Ok(Self {
            model,
            adam,
            rng,
            step: ck.step,
            source,
            options,
            data: prepared,
            losses: Vec::new(),
        })
    }

    pub fn model(&self) -> &VocoderModel {
        &self.model
    }

    pub fn into_model(self) -> VocoderModel {
        self.model
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn options(&self) -> &VocoderTrainOptions {
        &self.options
    }

    /// Losses of the steps run by this trainer instance.
    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    fn next_batch(&mut self) -> Result<TrainBatch> {
        let cfg = self.model.config();
        let hop = cfg.mel.hop_length;
        let frames = self.options.crop_samples / hop;
        let floor = cfg.mel.log_floor();
        let t_max = cfg.diffusion_steps;
        let b = self.options.batch_size;
        let mut audio = Vec::with_capacity(b * frames * hop);
        let mut mels = Vec::with_capacity(b);
        let mut steps = Vec::with_capacity(b);
        for _ in 0..b {
            let (a, m) = random_crop(&self.data, frames, hop, floor, &mut self.rng);
            audio.extend(a);
            mels.push(m);
            steps.push(self.rng.random_range(0..t_max));
        }
        let len = frames * hop;
        let noise: Vec<f64> = (0..b * len).map(|_| self.rng.sample(StandardNormal)).collect();
        let dtype = self.model.dtype();
        let to_t = |v: Vec<f64>| -> Result<Tensor> {
            Ok(Tensor::from_vec(v, (b, len), &Device::Cpu)?.to_dtype(dtype)?)
        };
        Ok(TrainBatch {
            audio: to_t(audio)?,
            mel: stack_mels(&mels, dtype)?,
            steps,
            noise: to_t(noise)?,
        })
    }

    /// One optimizer step; returns the loss before the update.
    pub fn step(&mut self) -> Result<f64> {
        let batch = self.next_batch()?;
        let loss = self.model.loss(&batch)?;
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "vocoder loss {value} at step {} (diffusion steps {:?})",
                self.step, batch.steps
            )));
        }
        let grads = loss.backward()?;
        self.adam.step(self.model.params(), &grads)?;
        if !self.model.params().all_finite()? {
            return Err(Error::NonFinite(format!(
                "vocoder parameters after step {} (loss was {value})",
                self.step
            )));
        }
        self.step += 1;
        self.losses.push(value);
        Ok(value)
    }

    /// Steps until the configured total, calling `on_step(step, loss)`.
    pub fn run(&mut self, mut on_step: impl FnMut(u64, f64)) -> Result<()> {
        while self.step < self.options.steps {
            let l = self.step()?;
            on_step(self.step, l);
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut tensors = std::collections::BTreeMap::new();
        for (k, t) in self.model.params().snapshot()? {
            tensors.insert(format!("param.{k}"), t);
        }
        tensors.extend(self.adam.state_tensors());
        Ok(Checkpoint {
            component: VOCODER_COMPONENT.into(),
            config: serde_json::json!({
                "model": self.model.config(),
                "schedule": self.model.schedule(),
                "source": self.source,
                "options": self.options,
            }),
            step: self.step,
            rng: Some(RngState::capture(&self.rng)),
            tensors,
        })
    }
}

/// Trains from scratch for `options.steps` steps.
pub fn train_vocoder(
    data: &[PairedUtterance],
    source: ConditionerSource,
    config: VocoderConfig,
    options: VocoderTrainOptions,
) -> Result<VocoderTrainer> {
    let mut trainer = VocoderTrainer::new(data, source, config, options, DType::F32)?;
    trainer.run(|step, loss| log::debug!("vocoder step {step} loss {loss:.5}"))?;
    Ok(trainer)
}
