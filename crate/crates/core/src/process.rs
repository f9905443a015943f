//! Shell command templates shared by the external codec and metric adapters.

use std::path::Path;
use std::process::Command;

use crate::{Error, Result};

/// Exit status `sh` reports when the command itself cannot be found.
const COMMAND_NOT_FOUND: i32 = 127;
const NOT_EXECUTABLE: i32 = 126;

pub(crate) fn quote(path: &Path) -> String {
    let s = path.to_string_lossy();
    format!("'{}'", s.replace('\'', r"'\''"))
}

/// Substitutes `{key}` placeholders with shell-quoted paths.
pub(crate) fn render(template: &str, substitutions: &[(&str, &Path)]) -> Result<String> {
    let mut out = template.to_string();
    for (key, path) in substitutions {
        let placeholder = format!("{{{key}}}");
        if !out.contains(&placeholder) {
            return Err(Error::Config(format!(
                "command template {template:?} lacks the {placeholder} placeholder"
            )));
        }
        out = out.replace(&placeholder, &quote(path));
    }
    Ok(out)
}

/// Runs a rendered command through `sh -c` and returns its stdout.
pub(crate) fn run(command: &str, tool: &str) -> Result<String> {
    let output = Command::new("sh")
        .arg("-c")
        .arg(command)
        .output()
        .map_err(|e| Error::Capability(format!("cannot spawn shell for {tool}: {e}")))?;
    let stderr = String::from_utf8_lossy(&output.stderr).into_owned();
    match output.status.code() {
        Some(0) => Ok(String::from_utf8_lossy(&output.stdout).into_owned()),
        Some(COMMAND_NOT_FOUND) | Some(NOT_EXECUTABLE) => Err(Error::Capability(format!(
            "{tool} is not installed or not executable ({}); install it or skip the experiments that need it",
            stderr.trim()
        ))),
        code => Err(Error::Process { code, stderr }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quoting_survives_single_quotes() {
        assert_eq!(quote(Path::new("a'b")), r"'a'\''b'");
    }

    #[test]
    fn missing_placeholder_is_a_config_error() {
        let err = render("cp {in} x", &[("in", Path::new("a")), ("out", Path::new("b"))]);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn exit_codes_are_classified() {
        assert!(matches!(run("exit 3", "t"), Err(Error::Process { code: Some(3), .. })));
        assert!(matches!(
            run("definitely-not-a-real-binary-xyz", "t"),
            Err(Error::Capability(_))
        ));
        assert_eq!(run("printf hi", "t").unwrap(), "hi");
    }
}
