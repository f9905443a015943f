//! Deep CNN upsampler trained to reproduce the clean-speech conditioner of a
//! frozen vocoder from degraded mel spectrograms, and the restoration paths
//! built from it.

mod model;
mod restore;
mod train;

pub use model::{
    conditioner_match_loss, match_loss, upsample_deep, DeepUpsampler, DeepUpsamplerConfig,
    UPSAMPLER_COMPONENT,
};
pub use restore::{check_mel_compatible, restore, restore_baseline, resynthesize};
pub use train::{train_deep_upsampler, UpsamplerTrainOptions, UpsamplerTrainer};
