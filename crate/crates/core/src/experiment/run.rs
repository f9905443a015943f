use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::{Error, Result};

pub const CONFIG_SNAPSHOT: &str = "config.toml";

/// Systems compared in a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    /// The degraded input itself.
    Degraded,
    /// Vocoder trained end to end on degraded conditioners.
    Dw,
    /// Clean vocoder with the deep upsampler spliced in.
    ModDw,
}

impl System {
    pub const ALL: [System; 3] = [System::Degraded, System::Dw, System::ModDw];

    pub fn name(self) -> &'static str {
        match self {
            System::Degraded => "degraded",
            System::Dw => "dw",
            System::ModDw => "moddw",
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        System::ALL
            .into_iter()
            .find(|x| x.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown system {s:?} (degraded, dw, moddw)")))
    }
}

/// On-disk layout of one experiment:
///
/// ```text
/// config.toml        snapshot written before anything else
/// run.log
/// degraded/          degraded audio and its paired manifest
/// checkpoints/       vocoder, baseline and upsampler
/// restored/<system>/ restored audio
/// reports/           metrics.csv, summary.txt, report.json
/// figures/
/// ```
#[derive(Debug, Clone)]
pub struct RunDirectory {
    root: PathBuf,
}

impl RunDirectory {
    /// Creates the layout and writes the config snapshot. An existing
    /// snapshot must match `config` unless `force` is set.
    pub fn create(root: &Path, config: &ExperimentConfig, force: bool) -> Result<Self> {
        let run = Self {
            root: root.to_path_buf(),
        };
        for d in [run.root.clone(), run.checkpoints(), run.reports(), run.figures(), run.degraded_dir()] {
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let snapshot = run.config_path();
        let text = config.to_toml()?;
        if snapshot.is_file() && !force {
            let existing = std::fs::read_to_string(&snapshot).map_err(|e| Error::io(&snapshot, e))?;
            if ExperimentConfig::from_toml(&existing).ok().as_ref() != Some(config) {
                return Err(Error::Config(format!(
                    "{} holds a different configuration; pass --force to replace it",
                    snapshot.display()
                )));
            }
            return Ok(run);
        }
        std::fs::write(&snapshot, text).map_err(|e| Error::io(&snapshot, e))?;
        Ok(run)
    }

    /// Opens an existing run and reads its snapshot. Paths in the snapshot
    /// are used as written.
    pub fn open(root: &Path) -> Result<(Self, ExperimentConfig)> {
        let run = Self {
            root: root.to_path_buf(),
        };
        let snapshot = run.config_path();
        if !snapshot.is_file() {
            return Err(Error::Dependency(format!("{} is not a run directory", root.display())));
        }
        let text = std::fs::read_to_string(&snapshot).map_err(|e| Error::io(&snapshot, e))?;
        Ok((run, ExperimentConfig::from_toml(&text)?))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join(CONFIG_SNAPSHOT)
    }

    pub fn log_path(&self) -> PathBuf {
        self.root.join("run.log")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn vocoder_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("vocoder.safetensors")
    }

    pub fn baseline_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("baseline.safetensors")
    }

    pub fn upsampler_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("upsampler.safetensors")
    }

    pub fn degraded_dir(&self) -> PathBuf {
        self.root.join("degraded")
    }

    pub fn degraded_manifest(&self) -> PathBuf {
        self.degraded_dir().join("manifest.tsv")
    }

    pub fn restored(&self, system: System) -> PathBuf {
        self.root.join("restored").join(system.name())
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn figures(&self) -> PathBuf {
        self.root.join("figures")
    }

    /// Appends one line to `run.log`.
    pub fn log(&self, line: &str) -> Result<()> {
        let path = self.log_path();
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_written_and_guarded() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("run");
        let c = ExperimentConfig::tiny();
        let run = RunDirectory::create(&root, &c, false).unwrap();
        assert!(run.checkpoints().is_dir() && run.reports().is_dir() && run.figures().is_dir());
        let (_, snap) = RunDirectory::open(&root).unwrap();
        assert_eq!(snap, c);
        RunDirectory::create(&root, &c, false).unwrap();
        let mut other = c.clone();
        other.set_seed(9);
        assert!(matches!(RunDirectory::create(&root, &other, false), Err(Error::Config(_))));
        RunDirectory::create(&root, &other, true).unwrap();
        assert_eq!(RunDirectory::open(&root).unwrap().1, other);
        run.log("one").unwrap();
        run.log("two").unwrap();
        assert_eq!(std::fs::read_to_string(run.log_path()).unwrap(), "one\ntwo\n");
    }

    #[test]
    fn open_requires_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(RunDirectory::open(dir.path()), Err(Error::Dependency(_))));
    }

    #[test]
    fn system_names() {
        for s in System::ALL {
            assert_eq!(s.name().parse::<System>().unwrap(), s);
        }
        assert_eq!("ModDW".parse::<System>().unwrap(), System::ModDw);
        assert!("clean".parse::<System>().is_err());
    }
}
