use std::path::Path;

use regex::Regex;

use crate::process;
use crate::{Error, Result};

/// Environment variable holding the default external scorer template.
pub const EXTERNAL_METRIC_ENV: &str = "DIFFRESTORE_PESQ_CMD";

/// Matches the first decimal number in the tool's output.
pub const DEFAULT_SCORE_PATTERN: &str = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?";

/// Runs an external scorer with `{ref}` and `{est}` substituted and reads a
/// number from its stdout. If `pattern` has a capture group, the first group
/// is parsed, otherwise the whole match.
pub fn external_metric(reference: &Path, estimate: &Path, template: &str, pattern: Option<&str>) -> Result<f64> {
    let re = Regex::new(pattern.unwrap_or(DEFAULT_SCORE_PATTERN))
        .map_err(|e| Error::Config(format!("bad score pattern: {e}")))?;
    let command = process::render(template, &[("ref", reference), ("est", estimate)])?;
    let stdout = process::run(&command, "external metric")?;
    let caps = re.captures(&stdout).ok_or_else(|| Error::Parse {
        message: "no score found".into(),
        stdout: stdout.clone(),
    })?;
    let text = caps.get(1).or_else(|| caps.get(0)).map(|m| m.as_str()).unwrap_or("");
    text.trim().parse::<f64>().map_err(|e| Error::Parse {
        message: format!("{text:?} is not a number: {e}"),
        stdout: stdout.clone(),
    })
}
