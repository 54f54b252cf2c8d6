use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::commands::AllFramesFailed;
use crate::config::MissingInputs;

/// Machine-readable failure record, printed to stderr and written to
/// `error.json` in the output directory when possible.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    status: &'static str,
    subcommand: &'static str,
    kind: &'static str,
    message: String,
    causes: Vec<String>,
}

impl ErrorReport {
    pub fn new(subcommand: &'static str, err: &anyhow::Error) -> Self {
        let kind = if err.downcast_ref::<MissingInputs>().is_some() {
            "missing_input"
        } else if err.downcast_ref::<AllFramesFailed>().is_some() {
            "calibration_failed"
        } else if err.chain().any(|c| c.downcast_ref::<eventfuse::Error>().is_some()) {
            "pipeline"
        } else {
            "error"
        };
        Self {
            status: "error",
            subcommand,
            kind,
            message: err.to_string(),
            causes: err.chain().skip(1).map(|c| c.to_string()).collect(),
        }
    }

    pub fn emit(&self, out: &Path) {
        let json = serde_json::to_string_pretty(self).unwrap_or_else(|_| format!("{{\"message\": {:?}}}", self.message));
        eprintln!("{json}");
        if fs::create_dir_all(out).is_ok() {
            if let Err(e) = eventfuse::io::write_json(&out.join("error.json"), self) {
                log::warn!("could not write error report: {e}");
            }
        }
    }
}
