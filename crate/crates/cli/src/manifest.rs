//! Run manifests. They hold no timings, so identical runs write identical
//! manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use n2f_core::{StopReason, TrainConfig};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Skipped,
    Error,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileOutcome {
    pub input: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub runs: Vec<PlaneRun>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
}

impl FileOutcome {
    pub fn ok(input: &Path, output: Option<&Path>) -> Self {
        Self {
            input: display(input),
            output: output.map(display),
            status: Status::Ok,
            reason: None,
            seed: None,
            runs: Vec::new(),
            metrics: BTreeMap::new(),
        }
    }

    pub fn skipped(input: &Path, reason: impl Into<String>) -> Self {
        Self { status: Status::Skipped, reason: Some(reason.into()), ..Self::ok(input, None) }
    }

    pub fn error(input: &Path, err: &anyhow::Error) -> Self {
        Self { status: Status::Error, reason: Some(format!("{err:#}")), ..Self::ok(input, None) }
    }
}

/// Training summary for one plane of one file.
#[derive(Debug, Clone, Serialize)]
pub struct PlaneRun {
    pub slice: usize,
    pub channel: usize,
    pub seed: u64,
    pub epochs: usize,
    pub stop_reason: StopReason,
    pub best_val_mse: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Counts {
    pub discovered: usize,
    pub ok: usize,
    pub skipped: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<TrainConfig>,
    pub settings: BTreeMap<String, serde_json::Value>,
    pub files: Vec<FileOutcome>,
    pub counts: Counts,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub aggregate: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &'static str, config: Option<TrainConfig>) -> Self {
        Self {
            tool: "n2f",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            settings: BTreeMap::new(),
            files: Vec::new(),
            counts: Counts::default(),
            aggregate: BTreeMap::new(),
        }
    }

    pub fn setting(&mut self, key: &str, value: impl Serialize) {
        self.settings.insert(key.to_owned(), serde_json::to_value(value).expect("settings serialize"));
    }

    pub fn push(&mut self, outcome: FileOutcome) {
        self.counts.discovered += 1;
        match outcome.status {
            Status::Ok => self.counts.ok += 1,
            Status::Skipped => self.counts.skipped += 1,
            Status::Error => self.counts.errors += 1,
        }
        self.files.push(outcome);
    }

    pub fn all_ok(&self) -> bool {
        self.counts.errors == 0
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing manifest {}", path.display()))
    }
}

/// `dir/manifest.json` for a directory, `name.manifest.json` beside a file.
pub fn manifest_path(anchor: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        anchor.join("manifest.json")
    } else {
        let stem = anchor.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
        anchor.with_file_name(format!("{stem}.manifest.json"))
    }
}

pub fn display(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}
