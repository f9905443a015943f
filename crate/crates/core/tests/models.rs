//! Train tiny models through the public API, round-trip them through
//! checkpoint files and restore with the reloaded copies.

use diffrestore::degrade::DegradationSpec;
use diffrestore::diffusion::{
    train_vocoder, ConditionerSource, PairedUtterance, VocoderConfig, VocoderModel, VocoderTrainOptions,
};
use diffrestore::experiment::synth_utterance;
use diffrestore::nn::Checkpoint;
use diffrestore::upsampler::{
    restore, restore_baseline, train_deep_upsampler, DeepUpsampler, DeepUpsamplerConfig, UpsamplerTrainOptions,
};

fn small_vocoder() -> VocoderConfig {
    VocoderConfig {
        residual_layers: 2,
        residual_channels: 4,
        dilation_cycle: 2,
        diffusion_steps: 4,
        beta_end: 0.3,
        ..VocoderConfig::tiny()
    }
}

fn data() -> Vec<PairedUtterance> {
    let spec = DegradationSpec::Clip { clip_fraction: 0.2 };
    (0..2)
        .map(|i| {
            let clean = synth_utterance(11, i).waveform;
            let degraded = spec.apply(&clean).unwrap();
            PairedUtterance {
                id: format!("u{i}"),
                clean,
                degraded: Some(degraded),
            }
        })
        .collect()
}

#[test]
fn checkpointed_models_restore_identically() {
    let data = data();
    let dir = tempfile::tempdir().unwrap();
    let vopts = VocoderTrainOptions {
        steps: 4,
        batch_size: 1,
        crop_samples: 512,
        ..Default::default()
    };
    let voc = train_vocoder(&data, ConditionerSource::CleanConditioner, small_vocoder(), vopts.clone()).unwrap();
    let vpath = dir.path().join("v.safetensors");
    voc.checkpoint().unwrap().save(&vpath).unwrap();

    let uopts = UpsamplerTrainOptions {
        steps: 2,
        batch_size: 1,
        crop_frames: 2,
        ..Default::default()
    };
    let up = train_deep_upsampler(&data, voc.model().clone(), DeepUpsamplerConfig::default(), uopts).unwrap();
    let upath = dir.path().join("u.safetensors");
    up.checkpoint().unwrap().save(&upath).unwrap();

    let v2 = VocoderModel::from_checkpoint(&Checkpoint::load(&vpath).unwrap()).unwrap();
    let u2 = DeepUpsampler::from_checkpoint(&Checkpoint::load(&upath).unwrap()).unwrap();
    let input = data[0].degraded.as_ref().unwrap();
    let a = restore(input, up.upsampler(), voc.model(), 3).unwrap();
    let b = restore(input, &u2, &v2, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), input.len());
    assert!(a.samples.iter().all(|x| x.is_finite() && x.abs() <= 1.0));
    assert_ne!(a, restore(input, &u2, &v2, 4).unwrap());

    let baseline = train_vocoder(&data, ConditionerSource::DegradedConditioner, small_vocoder(), vopts).unwrap();
    let d = restore_baseline(input, baseline.model(), 3).unwrap();
    assert_eq!(d.len(), input.len());
}

#[test]
fn restore_rejects_mismatched_front_ends() {
    let voc = VocoderModel::new(small_vocoder(), candle_core::DType::F32, 0).unwrap();
    let mut cfg = DeepUpsamplerConfig::default();
    cfg.mel.fmax = 7000.0;
    let up = DeepUpsampler::new(cfg, candle_core::DType::F32, 0).unwrap();
    let w = synth_utterance(11, 0).waveform;
    let err = restore(&w, &up, &voc, 0).unwrap_err();
    assert!(err.to_string().contains("fmax"), "{err}");
}
