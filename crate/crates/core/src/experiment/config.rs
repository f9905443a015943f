use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::degrade::DegradationSpec;
use crate::diffusion::{NoiseLoss, VocoderConfig, VocoderTrainOptions};
use crate::dsp::MelConfig;
use crate::metrics::{MetricSpec, EXTERNAL_METRIC_ENV};
use crate::upsampler::{DeepUpsamplerConfig, UpsamplerTrainOptions};
use crate::{Error, Result};

/// Vocoder architecture: a named profile plus optional overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocoderSection {
    pub profile: String,
    pub loss: NoiseLoss,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_layers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_channels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dilation_cycle: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diffusion_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_start: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_end: Option<f64>,
}

impl Default for VocoderSection {
    fn default() -> Self {
        Self {
            profile: "tiny".into(),
            loss: NoiseLoss::L1,
            residual_layers: None,
            residual_channels: None,
            dilation_cycle: None,
            diffusion_steps: None,
            beta_start: None,
            beta_end: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub metrics: Vec<MetricSpec>,
    /// Utterances scored per report; all of them when the set is smaller.
    pub sample_n: usize,
    /// Seeds the subset choice.
    pub seed: u64,
    /// Seeds the reverse diffusion of every restored utterance.
    pub restore_seed: u64,
    /// Manifest split to restore and score; every entry when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            metrics: vec![MetricSpec::Lsd, MetricSpec::SiSdr, MetricSpec::Mcd],
            sample_n: 128,
            seed: 0,
            restore_seed: 0,
            split: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    pub run_dir: PathBuf,
    /// Scorer template with `{ref}` and `{est}`, reported as `pesq`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pesq_command: Option<String>,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            manifest: None,
            run_dir: PathBuf::from("runs/default"),
            pesq_command: None,
        }
    }
}

/// Everything a run needs, stored as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mel: MelConfig,
    pub vocoder: VocoderSection,
    pub degradation: DegradationSpec,
    /// Stage one: vocoder on clean conditioners.
    pub train_vocoder: VocoderTrainOptions,
    /// The DW baseline: vocoder on degraded conditioners.
    pub train_baseline: VocoderTrainOptions,
    /// Stage two: deep upsampler against the frozen reference upsampler.
    pub train_upsampler: UpsamplerTrainOptions,
    /// Training steps between checkpoints.
    pub checkpoint_every: u64,
    pub eval: EvalSection,
    pub paths: PathsSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::tiny()
    }
}

/// Recursive table merge. A table that names a different `kind` replaces
/// the base table instead of being merged into it.
fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if b.get("kind") == o.get("kind") || o.get("kind").is_none() => {
                merge(b, o)
            }
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale preset for a single CPU. The small models tolerate a
    /// higher learning rate than the published ones.
    pub fn tiny() -> Self {
        let vocoder = VocoderTrainOptions {
            lr: 1e-3,
            steps: 300,
            batch_size: 2,
            crop_samples: 2048,
            seed: 0,
        };
        Self {
            mel: MelConfig::default(),
            vocoder: VocoderSection::default(),
            degradation: DegradationSpec::default(),
            train_vocoder: vocoder.clone(),
            train_baseline: vocoder,
            train_upsampler: UpsamplerTrainOptions {
                lr: 1e-3,
                steps: 500,
                batch_size: 1,
                crop_frames: 4,
                seed: 0,
            },
            checkpoint_every: 100,
            eval: EvalSection::default(),
            paths: PathsSection::default(),
        }
    }

    /// Published model sizes and learning rates. Training this on a CPU
    /// is not practical.
    pub fn full() -> Self {
        Self {
            vocoder: VocoderSection {
                profile: "full".into(),
                ..VocoderSection::default()
            },
            train_vocoder: VocoderTrainOptions::default(),
            train_baseline: VocoderTrainOptions::default(),
            train_upsampler: UpsamplerTrainOptions::default(),
            checkpoint_every: 5000,
            ..Self::tiny()
        }
    }

    pub fn vocoder_config(&self) -> Result<VocoderConfig> {
        let v = &self.vocoder;
        let mut c = VocoderConfig::by_profile(&v.profile)?;
        c.loss = v.loss;
        c.mel = self.mel.clone();
        if let Some(x) = v.residual_layers {
            c.residual_layers = x;
        }
        if let Some(x) = v.residual_channels {
            c.residual_channels = x;
        }
        if let Some(x) = v.dilation_cycle {
            c.dilation_cycle = x;
        }
        if let Some(x) = v.diffusion_steps {
            c.diffusion_steps = x;
        }
        if let Some(x) = v.beta_start {
            c.beta_start = x;
        }
        if let Some(x) = v.beta_end {
            c.beta_end = x;
        }
        Ok(c)
    }

    pub fn upsampler_config(&self) -> DeepUpsamplerConfig {
        DeepUpsamplerConfig {
            mel: self.mel.clone(),
            ..DeepUpsamplerConfig::default()
        }
    }

    /// Configured metrics plus `pesq` when a scorer command is available
    /// from the config or the environment.
    pub fn metrics(&self) -> Vec<MetricSpec> {
        let mut metrics = self.eval.metrics.clone();
        let command = self
            .paths
            .pesq_command
            .clone()
            .or_else(|| std::env::var(EXTERNAL_METRIC_ENV).ok());
        if let Some(command) = command {
            if !metrics.iter().any(|m| m.name() == "pesq") {
                metrics.push(MetricSpec::External {
                    name: "pesq".into(),
                    command,
                    pattern: None,
                });
            }
        }
        metrics
    }

    /// Overrides every seed in the config.
    pub fn set_seed(&mut self, seed: u64) {
        self.train_vocoder.seed = seed;
        self.train_baseline.seed = seed;
        self.train_upsampler.seed = seed;
        self.eval.seed = seed;
        self.eval.restore_seed = seed;
    }

    /// Value checks. Paths are checked by [`Self::validate_paths`].
    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        self.vocoder_config()?.validate()?;
        self.upsampler_config().validate()?;
        self.degradation.validate()?;
        self.train_vocoder.validate(&self.mel)?;
        self.train_baseline.validate(&self.mel)?;
        self.train_upsampler.validate()?;
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        if self.eval.sample_n == 0 {
            return Err(Error::Config("eval.sample_n must be positive".into()));
        }
        if self.eval.metrics.is_empty() {
            return Err(Error::Config("eval.metrics is empty".into()));
        }
        Ok(())
    }

    pub fn validate_paths(&self) -> Result<()> {
        if let Some(m) = &self.paths.manifest {
            if !m.is_file() {
                return Err(Error::Config(format!("manifest {} does not exist", m.display())));
            }
        }
        if self.paths.run_dir.is_file() {
            return Err(Error::Config(format!(
                "run directory {} is a file",
                self.paths.run_dir.display()
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Parses a config. Keys the text leaves out, including keys inside a
    /// section it does give, take their values from [`Self::tiny`].
    pub fn from_toml(text: &str) -> Result<Self> {
        let overlay: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut base: toml::Table = toml::from_str(&Self::tiny().to_toml()?).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, overlay);
        toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(m) = c.paths.manifest.as_mut() {
            rebase(m);
        }
        rebase(&mut c.paths.run_dir);
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}
