use crate::dsp::{load_wav, resample, save_wav, Waveform};
use crate::{process, Result};

/// Round-trips audio through an external codec, e.g. an AMR-NB MR515
/// encoder/decoder pair. The template is run through `sh -c` after `{in}`
/// and `{out}` are replaced with WAV paths.
pub fn degrade_external(w: &Waveform, command_template: &str) -> Result<Waveform> {
    w.ensure_non_empty("degrade_external")?;
    let dir = tempfile::tempdir().map_err(|e| crate::Error::io(std::env::temp_dir(), e))?;
    let input = dir.path().join("in.wav");
    let output = dir.path().join("out.wav");
    save_wav(w, &input)?;
    let command = process::render(command_template, &[("in", &input), ("out", &output)])?;
    process::run(&command, "external codec")?;
    let decoded = load_wav(&output)?;
    Ok(resample(&decoded, w.sample_rate)?.fit_to_len(w.len()))
}
