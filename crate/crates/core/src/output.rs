//! Output directory plumbing: append-only CSV files flushed after every row
//! and the JSON run manifest.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CODE_VERSION: &str = concat!("belh-core ", env!("CARGO_PKG_VERSION"));

/// CSV file that writes its header on creation and flushes every row, so an
/// interrupted run leaves a valid prefix.
pub struct CsvWriter {
    inner: BufWriter<File>,
    columns: usize,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        let mut w = CsvWriter { inner: BufWriter::new(file), columns: header.len() };
        w.write_line(&header.join(","))?;
        Ok(w)
    }

    fn write_line(&mut self, line: &str) -> Result<()> {
        self.inner.write_all(line.as_bytes())?;
        self.inner.write_all(b"\n")?;
        self.inner.flush()?;
        Ok(())
    }

    /// Append one preformatted row (comma separated, no newline).
    pub fn row(&mut self, line: &str) -> Result<()> {
        let got = line.split(',').count();
        if got != self.columns {
            return Err(Error::Config(format!("csv row has {got} fields, header has {}", self.columns)));
        }
        self.write_line(line)
    }

    pub fn values(&mut self, vals: &[f64]) -> Result<()> {
        self.row(&crate::diagnostics::format_row(vals))
    }
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// The configuration file text as read.
    pub config: String,
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub version: String,
    pub output_dir: PathBuf,
    pub threads: usize,
    pub started: DateTime<Utc>,
    pub finished: Option<DateTime<Utc>>,
    pub status: Option<String>,
}

impl RunManifest {
    pub fn start(subcommand: &str, config: String, config_path: Option<PathBuf>, seed: Option<u64>, output_dir: &Path, threads: usize) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            config,
            config_path,
            seed,
            version: CODE_VERSION.to_string(),
            output_dir: output_dir.to_path_buf(),
            threads,
            started: Utc::now(),
            finished: None,
            status: None,
        }
    }

    pub fn path(output_dir: &Path) -> PathBuf {
        output_dir.join("manifest.json")
    }

    pub fn write(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(Self::path(&self.output_dir), text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn finish(&mut self, status: &str) -> Result<()> {
        self.finished = Some(Utc::now());
        self.status = Some(status.to_string());
        self.write()
    }
}
