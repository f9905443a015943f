//! Configuration, manifests, run directories, the synthetic corpus,
//! spectrogram figures and the pipeline stages behind the CLI.

mod config;
mod corpus;
mod manifest;
pub mod pipeline;
mod plot;
mod run;
mod synth;

pub use config::{EvalSection, ExperimentConfig, PathsSection, VocoderSection};
pub use corpus::write_synth_corpus;
pub use manifest::{load_pairs, Manifest, ManifestEntry};
pub use plot::{plot_spectrograms, render_spectrograms, PanelRect, Spectrogram, SpectrogramFigure};
pub use run::{RunDirectory, System, CONFIG_SNAPSHOT};
pub use synth::{synth_utterance, Segment, SynthUtterance};
