use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::ValueEnum;
use nalgebra::DMatrix;
use serde::Serialize;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Output directory plus the bookkeeping that ends up in `manifest.json`.
pub struct Run {
    dir: PathBuf,
    format: Format,
    timings: BTreeMap<String, f64>,
    outputs: Vec<PathBuf>,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    subcommand: &'a str,
    config: &'a serde_json::Value,
    seed: u64,
    git_describe: &'static str,
    timings: &'a BTreeMap<String, f64>,
    outputs: &'a [PathBuf],
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

impl Run {
    pub fn new(dir: &Path, format: Format) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Run { dir: dir.to_path_buf(), format, timings: BTreeMap::new(), outputs: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Runs `f`, recording its wall time under `label`.
    pub fn timed<T>(&mut self, label: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.timings.entry(label.to_string()).or_default() += start.elapsed().as_secs_f64();
        out
    }

    pub fn record_time(&mut self, label: &str, secs: f64) {
        *self.timings.entry(label.to_string()).or_default() += secs;
    }

    fn track(&mut self, name: &str) -> PathBuf {
        let p = self.path(name);
        self.outputs.push(p.clone());
        p
    }

    pub fn write_matrix(&mut self, name: &str, m: &DMatrix<f64>) -> Result<()> {
        let p = self.track(name);
        jointdiag::matcore::write_matrix_csv(&p, m).with_context(|| format!("writing {}", p.display()))
    }

    pub fn write_signal(&mut self, name: &str, x: &DMatrix<f64>) -> Result<()> {
        let p = self.track(name);
        jointdiag::ica::write_signal_csv(&p, x).with_context(|| format!("writing {}", p.display()))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.track(name);
        let text = serde_json::to_string_pretty(value)?;
        fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display()))
    }

    /// Writes `rows` as `<stem>.csv` or `<stem>.json` depending on `--format`.
    pub fn write_table<T: Serialize>(&mut self, stem: &str, rows: &[T]) -> Result<()> {
        match self.format {
            Format::Json => self.write_json(&format!("{stem}.json"), &rows),
            Format::Csv => {
                let p = self.track(&format!("{stem}.csv"));
                let mut w = csv::Writer::from_path(&p).with_context(|| format!("writing {}", p.display()))?;
                for r in rows {
                    w.serialize(r)?;
                }
                w.flush()?;
                Ok(())
            }
        }
    }

    pub fn finish(
        mut self,
        subcommand: &str,
        config: &serde_json::Value,
        seed: u64,
        outcome: &Result<bool>,
    ) -> Result<()> {
        let (status, error) = match outcome {
            Ok(true) => ("ok", None),
            Ok(false) => ("check_failed", None),
            Err(e) => ("error", Some(format!("{e:#}"))),
        };
        let outputs = std::mem::take(&mut self.outputs);
        let manifest = RunManifest {
            subcommand,
            config,
            seed,
            git_describe: env!("JOINTDIAG_GIT_DESCRIBE"),
            timings: &self.timings,
            outputs: &outputs,
            status,
            error,
        };
        let p = self.path("manifest.json");
        fs::write(&p, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", p.display()))
    }
}
