use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use diffrestore::diffusion::ConditionerSource;
use diffrestore::dsp::load_wav;
use diffrestore::experiment::pipeline::{
    degrade_corpus, evaluate_stage, restore_stage, train_upsampler_stage, train_vocoder_stage, StageOutcome,
};
use diffrestore::experiment::{
    load_pairs, plot_spectrograms, write_synth_corpus, ExperimentConfig, Manifest, RunDirectory, System,
    CONFIG_SNAPSHOT,
};
use diffrestore::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DEPENDENCY: u8 = 3;
const EXIT_CAPABILITY: u8 = 4;
const EXIT_PARTIAL: u8 = 5;

/// Speech restoration with a diffusion vocoder and a deep CNN upsampler.
///
/// Exit codes: 0 success, 1 failure, 2 configuration error, 3 missing
/// prerequisite, 4 missing external tool, 5 some files failed.
#[derive(Debug, Parser)]
#[command(name = "diffrestore", version)]
struct Cli {
    /// Experiment config (TOML). Defaults to the run directory's snapshot,
    /// then to the built-in tiny preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Replace a differing config snapshot and retrain from scratch.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads for per-utterance work.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Conditioner {
    /// Stage one: conditioned on clean mels.
    Clean,
    /// The DW baseline: conditioned on degraded mels.
    Degraded,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic speech-like corpus.
    SynthCorpus {
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Degrade every clean file of a manifest and write a paired manifest.
    Degrade {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Defaults to `<run-dir>/degraded`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the vocoder on clean conditioners, or the DW baseline.
    TrainVocoder {
        #[arg(long, value_enum, default_value = "clean")]
        conditioner: Conditioner,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train the deep upsampler against the trained vocoder's upsampler.
    TrainUpsampler {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Restore the evaluation utterances with DW and/or ModDW.
    Restore {
        #[arg(long, value_delimiter = ',', default_value = "dw,moddw")]
        systems: Vec<System>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Score systems against clean audio and write reports.
    Evaluate {
        #[arg(long, value_delimiter = ',', default_value = "degraded,dw,moddw")]
        systems: Vec<System>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        sample_n: Option<usize>,
    },
    /// Four-panel spectrogram comparison.
    PlotSpec {
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        degraded: PathBuf,
        #[arg(long)]
        dw: PathBuf,
        #[arg(long)]
        moddw: PathBuf,
        /// Defaults to `<run-dir>/figures/spectrograms.png`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A command that finished but skipped some inputs.
struct Partial(String);

enum Failure {
    Error(Error),
    Partial(Partial),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

type CliResult = std::result::Result<(), Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::ConfigMismatch(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::Dependency(_) => EXIT_DEPENDENCY,
        Error::Capability(_) => EXIT_CAPABILITY,
        _ => EXIT_FAILURE,
    }
}

fn absolute(p: &Path) -> Result<PathBuf, Error> {
    std::path::absolute(p).map_err(|e| Error::Config(format!("cannot resolve {}: {e}", p.display())))
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let snapshot = cli.run_dir.as_ref().map(|d| d.join(CONFIG_SNAPSHOT));
    let mut config = match (&cli.config, snapshot) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(s)) if s.is_file() => ExperimentConfig::load(&s)?,
        _ => ExperimentConfig::tiny(),
    };
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    if let Some(d) = &cli.run_dir {
        config.paths.run_dir = d.clone();
    }
    config.paths.run_dir = absolute(&config.paths.run_dir)?;
    if let Some(m) = config.paths.manifest.take() {
        config.paths.manifest = Some(absolute(&m)?);
    }
    config.validate()?;
    config.validate_paths()?;
    Ok(config)
}

fn open_run(cli: &Cli, config: &ExperimentConfig) -> Result<RunDirectory, Error> {
    let run = RunDirectory::create(&config.paths.run_dir, config, cli.force)?;
    log::info!("run directory {}", run.root().display());
    Ok(run)
}

/// `--manifest`, else the run's degraded manifest, else the config's.
fn stage_manifest(flag: &Option<PathBuf>, run: &RunDirectory, config: &ExperimentConfig) -> Result<Manifest, Error> {
    let path = match flag {
        Some(p) => p.clone(),
        None if run.degraded_manifest().is_file() => run.degraded_manifest(),
        None => config.paths.manifest.clone().ok_or_else(|| {
            Error::Dependency("no manifest: run `degrade` or pass --manifest".into())
        })?,
    };
    Manifest::load(&path)
}

fn report_stage(name: &str, s: &StageOutcome) {
    match (s.losses.first(), s.losses.last()) {
        (Some(first), Some(last)) => println!(
            "{name}: steps {}..{}, loss {first:.4} -> {last:.4}",
            s.start_step, s.end_step
        ),
        _ => println!("{name}: already at step {}", s.end_step),
    }
}

fn run_command(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::SynthCorpus { n, out } => {
            let m = write_synth_corpus(*n, cli.seed.unwrap_or(0), out)?;
            println!("wrote {} utterances and {}", m.len(), out.join("manifest.tsv").display());
        }
        Command::Degrade { manifest, out } => {
            let config = resolve_config(cli)?;
            let input = manifest
                .clone()
                .or_else(|| config.paths.manifest.clone())
                .ok_or_else(|| Error::Config("degrade needs --manifest or paths.manifest".into()))?;
            let manifest = Manifest::load(&input)?;
            let out = match out {
                Some(o) => o.clone(),
                None => open_run(cli, &config)?.degraded_dir(),
            };
            let outcome = degrade_corpus(&manifest, &config.degradation, &out)?;
            println!(
                "degraded {} of {} utterances with {} into {}",
                outcome.manifest.len(),
                manifest.len(),
                config.degradation.name(),
                out.display()
            );
            if !outcome.failures.is_empty() {
                for (id, err) in &outcome.failures {
                    eprintln!("failed: {id}: {err}");
                }
                return Err(Failure::Partial(Partial(format!(
                    "{} utterances failed",
                    outcome.failures.len()
                ))));
            }
        }
        Command::TrainVocoder { conditioner, manifest } => {
            let config = resolve_config(cli)?;
            let run = open_run(cli, &config)?;
            let m = stage_manifest(manifest, &run, &config)?;
            let (source, name, degraded) = match conditioner {
                Conditioner::Clean => (ConditionerSource::CleanConditioner, "vocoder", false),
                Conditioner::Degraded => (ConditionerSource::DegradedConditioner, "baseline", true),
            };
            let entries = m.split(Some("train"));
            let data = load_pairs(&entries, config.mel.sample_rate, degraded)?;
            report_stage(name, &train_vocoder_stage(&run, &config, &data, source, cli.force)?);
        }
        Command::TrainUpsampler { manifest } => {
            let config = resolve_config(cli)?;
            let run = open_run(cli, &config)?;
            let m = stage_manifest(manifest, &run, &config)?;
            let entries = m.split(Some("train"));
            let data = load_pairs(&entries, config.mel.sample_rate, true)?;
            report_stage("upsampler", &train_upsampler_stage(&run, &config, &data, cli.force)?);
        }
        Command::Restore { systems, manifest } => {
            let config = resolve_config(cli)?;
            let run = open_run(cli, &config)?;
            let m = stage_manifest(manifest, &run, &config)?;
            for (system, n) in restore_stage(&run, &config, &m, systems)? {
                println!("{system}: restored {n} utterances into {}", run.restored(system).display());
            }
        }
        Command::Evaluate { systems, manifest, sample_n } => {
            let mut config = resolve_config(cli)?;
            let run = open_run(cli, &config)?;
            if let Some(n) = sample_n {
                config.eval.sample_n = *n;
            }
            let m = stage_manifest(manifest, &run, &config)?;
            let report = evaluate_stage(&run, &config, &m, systems)?;
            print!("{}", report.summary_table());
            println!("reports written to {}", run.reports().display());
        }
        Command::PlotSpec { clean, degraded, dw, moddw, out } => {
            let out = match out {
                Some(o) => o.clone(),
                None => {
                    let config = resolve_config(cli)?;
                    open_run(cli, &config)?.figures().join("spectrograms.png")
                }
            };
            let waves = [clean, degraded, dw, moddw]
                .into_iter()
                .map(load_wav)
                .collect::<Result<Vec<_>, Error>>()?;
            let refs: Vec<_> = waves.iter().collect();
            plot_spectrograms(&refs, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match run_command(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Partial(Partial(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_PARTIAL)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn errors_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::ConfigMismatch("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::InvalidArgument("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Dependency("x".into())), EXIT_DEPENDENCY);
        assert_eq!(exit_code(&Error::Capability("x".into())), EXIT_CAPABILITY);
        assert_eq!(exit_code(&Error::Format("x".into())), EXIT_FAILURE);
    }

    #[test]
    fn flags_override_the_preset() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("r");
        let cli = Cli::try_parse_from([
            "diffrestore",
            "--seed",
            "9",
            "--run-dir",
            run.to_str().unwrap(),
            "restore",
            "--systems",
            "moddw",
        ])
        .unwrap();
        let c = resolve_config(&cli).unwrap();
        assert_eq!((c.train_vocoder.seed, c.eval.restore_seed), (9, 9));
        assert_eq!(c.paths.run_dir, run);
        assert!(matches!(cli.command, Command::Restore { ref systems, .. } if systems == &[System::ModDw]));
        assert!(Cli::try_parse_from(["diffrestore", "restore", "--systems", "nope"]).is_err());
    }
}
