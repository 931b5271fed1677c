//! Output plumbing. Every artifact names the tool version and the effective
//! configuration that produced it, so a report alone suffices to rerun it.

use std::io::Write as _;
use std::path::Path;

use extrap_core::{CoreError, Result};

use crate::config::Settings;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

fn settings_toml(settings: &Settings) -> String {
    toml::to_string(settings).expect("settings serialize to TOML")
}

/// '#'-prefixed provenance block for line-oriented text formats.
pub fn comment_header(settings: &Settings) -> String {
    let mut out = format!("# tool: extrap {TOOL_VERSION}\n# effective configuration:\n");
    for line in settings_toml(settings).lines() {
        out.push_str("#   ");
        out.push_str(line);
        out.push('\n');
    }
    out
}

/// Adds `tool_version` and `effective_config` keys to a JSON object
/// document. Existing keys keep their values; key order is normalized.
pub fn stamp_json(doc: &str, settings: &Settings) -> String {
    let mut value: serde_json::Value =
        serde_json::from_str(doc).expect("emitted documents are valid JSON");
    let object = value.as_object_mut().expect("emitted documents are JSON objects");
    object.insert("tool_version".to_owned(), TOOL_VERSION.into());
    object.insert(
        "effective_config".to_owned(),
        serde_json::to_value(settings).expect("settings serialize to JSON"),
    );
    let mut text = serde_json::to_string_pretty(&value).expect("JSON serializes");
    text.push('\n');
    text
}

/// Writes to the output path, or to stdout when none is given.
pub fn write_output(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, content).map_err(|e| CoreError::io(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(content.as_bytes())
                .and_then(|()| stdout.flush())
                .map_err(|e| CoreError::io("stdout", e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comment_header_prefixes_every_line() {
        let settings = Settings {
            backend: Some("toy".to_owned()),
            seed: Some(7),
            ..Settings::default()
        };
        let header = comment_header(&settings);
        assert!(header.lines().all(|l| l.starts_with('#')));
        assert!(header.contains("backend = \"toy\""));
        assert!(header.contains("seed = 7"));
        assert!(header.contains(TOOL_VERSION));
    }

    #[test]
    fn stamp_json_injects_provenance_keys() {
        let settings = Settings {
            trials: Some(10),
            ..Settings::default()
        };
        let stamped = stamp_json(r#"{"format":"x","value":1}"#, &settings);
        let value: serde_json::Value = serde_json::from_str(&stamped).unwrap();
        assert_eq!(value["tool_version"], TOOL_VERSION);
        assert_eq!(value["effective_config"]["trials"], 10);
        assert_eq!(value["value"], 1);
    }
}
