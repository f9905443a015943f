//! Denoising-diffusion vocoder: schedule, noise predictor, the reference
//! transposed-convolution upsampler, training and ancestral sampling.

mod config;
mod model;
mod sample;
mod schedule;
mod train;

pub use config::{
    NoiseLoss, ReferenceUpsamplerConfig, VocoderConfig, STEP_EMBEDDING_DIM, STEP_HIDDEN_DIM,
};
pub use model::{
    mel_tensor, predict_noise, upsample_reference, Conditioner, Provenance, ReferenceUpsampler,
    TrainBatch, VocoderModel, VOCODER_COMPONENT,
};
pub use sample::{reverse_process, sample};
pub use schedule::{forward_diffuse, NoiseSchedule};
pub use train::{
    train_vocoder, ConditionerSource, PairedUtterance, VocoderTrainOptions, VocoderTrainer,
};

pub(crate) use train::{source_mel, stack_mels};
