//! Per-epoch training logs and their CSV form.
//!
//! The CSV carries only deterministic columns so identical runs produce
//! byte-identical files; run metadata (including a timestamp) goes to a
//! separate JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ClipError, Result};

pub const RUNLOG_HEADER: [&str; 8] = [
    "stage",
    "epoch",
    "samples_cum",
    "train_loss",
    "val_mae",
    "val_game",
    "val_ssim",
    "val_psnr",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunRow {
    pub stage: usize,
    pub epoch: usize,
    pub samples_cum: usize,
    pub train_loss: f64,
    pub val_mae: f64,
    pub val_game: f64,
    pub val_ssim: f64,
    /// Already mapped to the 100 dB sentinel when infinite.
    pub val_psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub strategy: String,
    pub pacing: Option<String>,
    pub epsilon: Option<f64>,
    pub prune_policy: Option<String>,
    pub seed: u64,
    pub dataset: String,
    pub timestamp: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub rows: Vec<RunRow>,
}

impl RunLog {
    pub fn new(rows: Vec<RunRow>) -> Self {
        Self { rows }
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.train_loss)
    }

    /// Cumulative samples at the first epoch whose training loss is `<= threshold`.
    pub fn samples_to_threshold(&self, threshold: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.train_loss <= threshold)
            .map(|r| r.samples_cum)
    }

    pub fn to_csv(&self) -> String {
        let mut out = RUNLOG_HEADER.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.stage,
                r.epoch,
                r.samples_cum,
                r.train_loss,
                r.val_mae,
                r.val_game,
                r.val_ssim,
                r.val_psnr
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| ClipError::io(path, e))
    }

    /// Parses a run log, reporting the offending line on malformed input.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let header = reader.headers().map_err(|e| csv_error(path, e))?;
        if header.iter().ne(RUNLOG_HEADER) {
            return Err(ClipError::format(
                path,
                format!("line 1: expected header {}", RUNLOG_HEADER.join(",")),
            ));
        }
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let line = i + 2;
            let record = record.map_err(|e| csv_error(path, e))?;
            let bad = |col: &str| ClipError::format(path, format!("line {line}: bad {col} value"));
            let int = |k: usize| {
                record[k]
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| bad(RUNLOG_HEADER[k]))
            };
            let real = |k: usize| {
                record[k]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| bad(RUNLOG_HEADER[k]))
            };
            let row = RunRow {
                stage: int(0)?,
                epoch: int(1)?,
                samples_cum: int(2)?,
                train_loss: real(3)?,
                val_mae: real(4)?,
                val_game: real(5)?,
                val_ssim: real(6)?,
                val_psnr: real(7)?,
            };
            if !row.train_loss.is_finite() {
                return Err(bad("train_loss"));
            }
            if rows
                .last()
                .is_some_and(|p: &RunRow| p.samples_cum >= row.samples_cum)
            {
                return Err(ClipError::format(
                    path,
                    format!("line {line}: samples_cum must be strictly increasing"),
                ));
            }
            rows.push(row);
        }
        Ok(Self { rows })
    }
}

fn csv_error(path: &Path, e: csv::Error) -> ClipError {
    let line = e.position().map(|p| p.line());
    let message = e.to_string();
    match e.into_kind() {
        csv::ErrorKind::Io(io) => ClipError::io(path, io),
        _ => match line {
            Some(line) => ClipError::format(path, format!("line {line}: {message}")),
            None => ClipError::format(path, message),
        },
    }
}

/// `run.csv` -> `run.meta.json`
pub fn meta_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

pub fn write_meta(path: &Path, meta: &RunMeta) -> Result<()> {
    let json =
        serde_json::to_string_pretty(meta).map_err(|e| ClipError::format(path, e.to_string()))?;
    fs::write(path, json + "\n").map_err(|e| ClipError::io(path, e))
}
