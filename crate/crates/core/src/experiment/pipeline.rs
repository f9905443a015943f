//! The stages the command-line tool runs, each reading and writing a
//! [`RunDirectory`].

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::DType;
use rayon::prelude::*;

use super::manifest::{Manifest, ManifestEntry};
use super::run::{RunDirectory, System};
use super::ExperimentConfig;
use crate::degrade::DegradationSpec;
use crate::diffusion::{ConditionerSource, PairedUtterance, VocoderModel, VocoderTrainer, VOCODER_COMPONENT};
use crate::dsp::{load_wav, resample, save_wav, Waveform};
use crate::metrics::{evaluate_systems, EvalItem, MetricReport};
use crate::nn::Checkpoint;
use crate::upsampler::{restore, restore_baseline, DeepUpsampler, UpsamplerTrainer, UPSAMPLER_COMPONENT};
use crate::{Error, Result};

/// Result of degrading a manifest. Failed utterances are left out of the
/// written manifest.
#[derive(Debug, Clone)]
pub struct DegradeOutcome {
    pub manifest: Manifest,
    /// (utterance id, error message)
    pub failures: Vec<(String, String)>,
}

/// Degrades every clean file into `out_dir/<id>.wav` at the clean file's
/// rate and length, and writes the paired `out_dir/manifest.tsv`.
pub fn degrade_corpus(manifest: &Manifest, spec: &DegradationSpec, out_dir: &Path) -> Result<DegradeOutcome> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results: Vec<(ManifestEntry, Result<std::path::PathBuf>)> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let out = out_dir.join(format!("{}.wav", e.id));
            let r = load_wav(&e.clean_path)
                .and_then(|w| spec.apply(&w))
                .and_then(|d| save_wav(&d, &out))
                .map(|_| out);
            (e.clone(), r)
        })
        .collect();
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (mut e, r) in results {
        match r {
            Ok(path) => {
                e.degraded_path = Some(path);
                entries.push(e);
            }
            // A missing codec fails every file the same way.
            Err(err @ Error::Capability(_)) => return Err(err),
            Err(err) => {
                log::warn!("degrading {} failed: {err}", e.id);
                failures.push((e.id.clone(), err.to_string()));
            }
        }
    }
    let manifest = Manifest::new(entries)?;
    manifest.save(&out_dir.join("manifest.tsv"))?;
    Ok(DegradeOutcome { manifest, failures })
}

/// Loss history of one training invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    /// Step the stage started from; nonzero when resumed.
    pub start_step: u64,
    pub end_step: u64,
    pub losses: Vec<f64>,
}

fn drop_steps(mut v: serde_json::Value) -> serde_json::Value {
    if let Some(o) = v.as_object_mut() {
        o.remove("steps");
    }
    v
}

/// Fails when a checkpoint was trained with settings other than `expected`
/// (the step count may grow).
fn check_resumable(ck: &Checkpoint, path: &Path, expected: &[(&str, serde_json::Value)]) -> Result<()> {
    for (key, want) in expected {
        let have = ck.config.get(*key).cloned().unwrap_or_default();
        if drop_steps(have) != drop_steps(want.clone()) {
            return Err(Error::ConfigMismatch(format!(
                "{key} of {} differs from the current config; pass --force to retrain",
                path.display()
            )));
        }
    }
    Ok(())
}

fn log_step(run: &RunDirectory, stage: &str, step: u64, loss: f64) -> Result<()> {
    log::debug!("{stage} step {step} loss {loss:.6}");
    run.log(&format!("{stage} step {step} loss {loss:.6}"))
}

/// Trains the clean vocoder (`CleanConditioner`) or the DW baseline
/// (`DegradedConditioner`). An existing checkpoint is resumed unless
/// `force` is set; a finished one is left alone.
pub fn train_vocoder_stage(
    run: &RunDirectory,
    config: &ExperimentConfig,
    data: &[PairedUtterance],
    source: ConditionerSource,
    force: bool,
) -> Result<StageOutcome> {
    let (stage, path, options) = match source {
        ConditionerSource::CleanConditioner => ("vocoder", run.vocoder_checkpoint(), &config.train_vocoder),
        ConditionerSource::DegradedConditioner => ("baseline", run.baseline_checkpoint(), &config.train_baseline),
    };
    let model_config = config.vocoder_config()?;
    let mut trainer = if path.is_file() && !force {
        let ck = Checkpoint::load(&path)?;
        ck.expect_component(VOCODER_COMPONENT)?;
        check_resumable(
            &ck,
            &path,
            &[
                ("model", serde_json::to_value(&model_config)?),
                ("source", serde_json::to_value(source)?),
                ("options", serde_json::to_value(options)?),
            ],
        )?;
        VocoderTrainer::resume(&ck, data)?
    } else {
        VocoderTrainer::new(data, source, model_config, options.clone(), DType::F32)?
    };
    let start_step = trainer.step_count();
    run.log(&format!("{stage}: training from step {start_step} to {}", options.steps))?;
    while trainer.step_count() < options.steps {
        let loss = trainer.step()?;
        let step = trainer.step_count();
        log_step(run, stage, step, loss)?;
        if step % config.checkpoint_every == 0 || step == options.steps {
            trainer.checkpoint()?.save(&path)?;
        }
    }
    if start_step == trainer.step_count() && !path.is_file() {
        trainer.checkpoint()?.save(&path)?;
    }
    Ok(StageOutcome {
        start_step,
        end_step: trainer.step_count(),
        losses: trainer.losses().to_vec(),
    })
}

/// Loads a vocoder checkpoint that has finished `steps` steps.
fn finished_vocoder(path: &Path, steps: u64, stage: &str) -> Result<VocoderModel> {
    if !path.is_file() {
        return Err(Error::Dependency(format!(
            "{} does not exist; run {stage} first",
            path.display()
        )));
    }
    let ck = Checkpoint::load(path)?;
    if ck.step < steps {
        return Err(Error::Dependency(format!(
            "{} stopped at step {} of {steps}; finish {stage} first",
            path.display(),
            ck.step
        )));
    }
    VocoderModel::from_checkpoint(&ck)
}

/// Stage two: needs a finished clean vocoder checkpoint.
pub fn train_upsampler_stage(
    run: &RunDirectory,
    config: &ExperimentConfig,
    data: &[PairedUtterance],
    force: bool,
) -> Result<StageOutcome> {
    let vocoder = finished_vocoder(&run.vocoder_checkpoint(), config.train_vocoder.steps, "train-vocoder")?;
    let path = run.upsampler_checkpoint();
    let options = &config.train_upsampler;
    let model_config = config.upsampler_config();
    let mut trainer = if path.is_file() && !force {
        let ck = Checkpoint::load(&path)?;
        ck.expect_component(UPSAMPLER_COMPONENT)?;
        check_resumable(
            &ck,
            &path,
            &[
                ("model", serde_json::to_value(&model_config)?),
                ("options", serde_json::to_value(options)?),
            ],
        )?;
        UpsamplerTrainer::resume(&ck, vocoder, data)?
    } else {
        UpsamplerTrainer::new(data, vocoder, model_config, options.clone(), DType::F32)?
    };
    let start_step = trainer.step_count();
    run.log(&format!("upsampler: training from step {start_step} to {}", options.steps))?;
    while trainer.step_count() < options.steps {
        let loss = trainer.step()?;
        let step = trainer.step_count();
        log_step(run, "upsampler", step, loss)?;
        if step % config.checkpoint_every == 0 || step == options.steps {
            trainer.checkpoint()?.save(&path)?;
        }
    }
    Ok(StageOutcome {
        start_step,
        end_step: trainer.step_count(),
        losses: trainer.losses().to_vec(),
    })
}

/// Per-utterance sampling seed that does not depend on which other
/// utterances are restored alongside.
pub fn utterance_seed(seed: u64, id: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed
}

fn load_at(path: &Path, rate: u32) -> Result<Waveform> {
    let w = load_wav(path)?;
    if w.sample_rate == rate {
        Ok(w)
    } else {
        resample(&w, rate)
    }
}

fn eval_entries<'a>(manifest: &'a Manifest, config: &ExperimentConfig) -> Result<Vec<&'a ManifestEntry>> {
    let entries = manifest.split(config.eval.split.as_deref());
    if entries.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no utterances in split {:?}",
            config.eval.split
        )));
    }
    if let Some(e) = entries.iter().find(|e| e.degraded_path.is_none()) {
        return Err(Error::Dependency(format!(
            "utterance {} has no degraded audio; run `degrade` first",
            e.id
        )));
    }
    Ok(entries)
}

/// Restores every evaluation utterance with the DW and/or ModDW system into
/// `restored/<system>/<id>.wav`. `Degraded` needs no work and is skipped.
/// Returns the number of files written per system.
pub fn restore_stage(
    run: &RunDirectory,
    config: &ExperimentConfig,
    manifest: &Manifest,
    systems: &[System],
) -> Result<BTreeMap<System, usize>> {
    let entries = eval_entries(manifest, config)?;
    let rate = config.mel.sample_rate;
    let mut written = BTreeMap::new();
    for &system in systems {
        let restore_one: Box<dyn Fn(&Waveform, u64) -> Result<Waveform> + Sync> = match system {
            System::Degraded => continue,
            System::Dw => {
                let v = finished_vocoder(&run.baseline_checkpoint(), config.train_baseline.steps, "train-vocoder --conditioner degraded")?;
                Box::new(move |w, s| restore_baseline(w, &v, s))
            }
            System::ModDw => {
                let v = finished_vocoder(&run.vocoder_checkpoint(), config.train_vocoder.steps, "train-vocoder")?;
                let path = run.upsampler_checkpoint();
                if !path.is_file() {
                    return Err(Error::Dependency(format!(
                        "{} does not exist; run train-upsampler first",
                        path.display()
                    )));
                }
                let ck = Checkpoint::load(&path)?;
                if ck.step < config.train_upsampler.steps {
                    return Err(Error::Dependency(format!(
                        "{} stopped at step {} of {}; finish train-upsampler first",
                        path.display(),
                        ck.step,
                        config.train_upsampler.steps
                    )));
                }
                let u = DeepUpsampler::from_checkpoint(&ck)?;
                Box::new(move |w, s| restore(w, &u, &v, s))
            }
        };
        let dir = run.restored(system);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        entries
            .par_iter()
            .map(|e| {
                let degraded = load_at(e.degraded_path.as_ref().expect("checked above"), rate)?;
                let out = restore_one(&degraded, utterance_seed(config.eval.restore_seed, &e.id))?;
                save_wav(&out, dir.join(format!("{}.wav", e.id)))
            })
            .collect::<Result<Vec<()>>>()?;
        run.log(&format!("restore: {} utterances with {system}", entries.len()))?;
        written.insert(system, entries.len());
    }
    Ok(written)
}

/// Scores the requested systems against clean audio and writes the report
/// into `reports/`.
pub fn evaluate_stage(
    run: &RunDirectory,
    config: &ExperimentConfig,
    manifest: &Manifest,
    systems: &[System],
) -> Result<MetricReport> {
    let entries = eval_entries(manifest, config)?;
    let items: Vec<EvalItem> = entries
        .iter()
        .map(|e| {
            let outputs = systems
                .iter()
                .map(|&s| {
                    let path = match s {
                        System::Degraded => e.degraded_path.clone().expect("checked above"),
                        _ => run.restored(s).join(format!("{}.wav", e.id)),
                    };
                    (s.name().to_string(), path)
                })
                .collect();
            EvalItem {
                id: e.id.clone(),
                clean: e.clean_path.clone(),
                outputs,
            }
        })
        .collect();
    let names: Vec<String> = systems.iter().map(|s| s.name().to_string()).collect();
    let report = evaluate_systems(&items, &names, &config.metrics(), config.eval.sample_n, config.eval.seed)?;
    report.write(&run.reports())?;
    run.log(&format!("evaluate: {} rows written to {}", report.rows.len(), run.reports().display()))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{load_pairs, write_synth_corpus};

    fn quick_config(run_dir: &Path) -> ExperimentConfig {
        let mut c = ExperimentConfig::tiny();
        c.vocoder.residual_layers = Some(2);
        c.vocoder.residual_channels = Some(4);
        c.vocoder.dilation_cycle = Some(2);
        c.vocoder.diffusion_steps = Some(3);
        c.vocoder.beta_end = Some(0.3);
        for o in [&mut c.train_vocoder, &mut c.train_baseline] {
            o.steps = 3;
            o.batch_size = 1;
            o.crop_samples = 512;
        }
        c.train_upsampler.steps = 2;
        c.train_upsampler.batch_size = 1;
        c.train_upsampler.crop_frames = 2;
        c.checkpoint_every = 2;
        c.paths.run_dir = run_dir.to_path_buf();
        c
    }

    #[test]
    fn utterance_seed_is_stable() {
        assert_eq!(utterance_seed(0, "a"), 0xaf63_dc4c_8601_ec8c);
        assert_ne!(utterance_seed(0, "a"), utterance_seed(1, "a"));
    }

    #[test]
    fn stages_run_in_order_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = write_synth_corpus(2, 4, &dir.path().join("corpus")).unwrap();
        let config = quick_config(&dir.path().join("run"));
        let run = RunDirectory::create(&config.paths.run_dir, &config, false).unwrap();

        let deg = degrade_corpus(&corpus, &config.degradation, &run.degraded_dir()).unwrap();
        assert!(deg.failures.is_empty());
        let manifest = Manifest::load(&run.degraded_manifest()).unwrap();
        assert_eq!(manifest, deg.manifest);

        let entries = manifest.split(None);
        let data = load_pairs(&entries, 16_000, true).unwrap();
        assert!(matches!(
            train_upsampler_stage(&run, &config, &data, false),
            Err(Error::Dependency(_))
        ));
        assert!(matches!(
            restore_stage(&run, &config, &manifest, &[System::ModDw]),
            Err(Error::Dependency(_))
        ));

        let v = train_vocoder_stage(&run, &config, &data, ConditionerSource::CleanConditioner, false).unwrap();
        assert_eq!((v.start_step, v.end_step, v.losses.len()), (0, 3, 3));
        // Finished: nothing more to do.
        let again = train_vocoder_stage(&run, &config, &data, ConditionerSource::CleanConditioner, false).unwrap();
        assert_eq!((again.start_step, again.losses.len()), (3, 0));
        // More steps resume from the checkpoint.
        let mut longer = config.clone();
        longer.train_vocoder.steps = 4;
        let r = train_vocoder_stage(&run, &longer, &data, ConditionerSource::CleanConditioner, false).unwrap();
        assert_eq!((r.start_step, r.end_step), (3, 4));
        // Changed hyperparameters need --force.
        let mut other = config.clone();
        other.train_vocoder.lr = 5e-4;
        assert!(matches!(
            train_vocoder_stage(&run, &other, &data, ConditionerSource::CleanConditioner, false),
            Err(Error::ConfigMismatch(_))
        ));
        let f = train_vocoder_stage(&run, &config, &data, ConditionerSource::CleanConditioner, true).unwrap();
        assert_eq!((f.start_step, f.end_step), (0, 3));

        train_vocoder_stage(&run, &config, &data, ConditionerSource::DegradedConditioner, false).unwrap();
        let u = train_upsampler_stage(&run, &config, &data, false).unwrap();
        assert_eq!(u.end_step, 2);

        let written = restore_stage(&run, &config, &manifest, &System::ALL).unwrap();
        assert_eq!(written.get(&System::Dw), Some(&2));
        assert_eq!(written.get(&System::ModDw), Some(&2));
        for e in &manifest.entries {
            let r = load_wav(run.restored(System::ModDw).join(format!("{}.wav", e.id))).unwrap();
            assert_eq!(r.len(), load_wav(&e.clean_path).unwrap().len());
        }
        let report = evaluate_stage(&run, &config, &manifest, &System::ALL).unwrap();
        assert_eq!(report.rows.len(), 2 * 3 * 3);
        assert!(run.reports().join("metrics.csv").is_file());
        let log = std::fs::read_to_string(run.log_path()).unwrap();
        assert!(log.contains("upsampler step 2 loss"));
    }

    #[test]
    fn same_seed_trains_identically() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = write_synth_corpus(2, 5, &dir.path().join("corpus")).unwrap();
        let mut outcomes = Vec::new();
        for name in ["a", "b"] {
            let config = quick_config(&dir.path().join(name));
            let run = RunDirectory::create(&config.paths.run_dir, &config, false).unwrap();
            let deg = degrade_corpus(&corpus, &config.degradation, &run.degraded_dir()).unwrap();
            let data = load_pairs(&deg.manifest.split(None), 16_000, true).unwrap();
            let v = train_vocoder_stage(&run, &config, &data, ConditionerSource::CleanConditioner, false).unwrap();
            let u = train_upsampler_stage(&run, &config, &data, false).unwrap();
            let bytes = |p: std::path::PathBuf| std::fs::read(p).unwrap();
            outcomes.push((v, u, bytes(run.vocoder_checkpoint()), bytes(run.upsampler_checkpoint())));
        }
        assert_eq!(outcomes[0], outcomes[1]);
    }

    #[test]
    fn failed_files_are_reported_and_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let mut corpus = write_synth_corpus(2, 4, &dir.path().join("corpus")).unwrap();
        corpus.entries[1].clean_path = dir.path().join("missing.wav");
        let out = degrade_corpus(&corpus, &DegradationSpec::Clip { clip_fraction: 0.1 }, &dir.path().join("deg")).unwrap();
        assert_eq!(out.manifest.len(), 1);
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].0, "synth_0001");
    }
}
