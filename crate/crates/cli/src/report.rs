//! Cross-run comparison: merged loss table, samples-to-threshold and chart.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use clip_core::RunLog;

use crate::svg::{line_chart, Series};

pub const NOT_REACHED: &str = "not reached";

pub struct LabeledRun {
    pub label: String,
    pub log: RunLog,
}

/// Run label from a log path: the file stem, de-duplicated with a suffix.
pub fn labels_for(paths: &[impl AsRef<Path>]) -> Vec<String> {
    let mut labels: Vec<String> = Vec::with_capacity(paths.len());
    for p in paths {
        let stem = p
            .as_ref()
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        let mut label = stem.clone();
        let mut k = 2;
        while labels.contains(&label) {
            label = format!("{stem}-{k}");
            k += 1;
        }
        labels.push(label);
    }
    labels
}

/// One row per distinct cumulative-sample count; blank where a run has no epoch there.
pub fn merged_csv(runs: &[LabeledRun]) -> String {
    let mut table: BTreeMap<usize, Vec<Option<f64>>> = BTreeMap::new();
    for (j, run) in runs.iter().enumerate() {
        for row in &run.log.rows {
            table
                .entry(row.samples_cum)
                .or_insert_with(|| vec![None; runs.len()])[j] = Some(row.train_loss);
        }
    }
    let mut out = String::from("samples_cum");
    for run in runs {
        out.push(',');
        out.push_str(&run.label);
    }
    out.push('\n');
    for (samples, cells) in table {
        let _ = write!(out, "{samples}");
        for cell in cells {
            out.push(',');
            if let Some(v) = cell {
                let _ = write!(out, "{v}");
            }
        }
        out.push('\n');
    }
    out
}

pub fn threshold_rows(runs: &[LabeledRun], threshold: f64) -> Vec<(String, Option<usize>)> {
    runs.iter()
        .map(|r| (r.label.clone(), r.log.samples_to_threshold(threshold)))
        .collect()
}

pub fn threshold_csv(rows: &[(String, Option<usize>)], threshold: f64) -> String {
    let mut out = String::from("run,loss_threshold,samples_to_threshold\n");
    for (label, reached) in rows {
        let cell = reached.map_or_else(|| NOT_REACHED.to_string(), |n| n.to_string());
        let _ = writeln!(out, "{label},{threshold},{cell}");
    }
    out
}

pub fn convergence_svg(runs: &[LabeledRun]) -> String {
    let series: Vec<Series> = runs
        .iter()
        .map(|r| Series {
            label: r.label.clone(),
            points: r
                .log
                .rows
                .iter()
                .map(|row| (row.samples_cum as f64, row.train_loss))
                .collect(),
        })
        .collect();
    line_chart(
        "Training loss vs. samples consumed",
        "cumulative training samples",
        "training loss",
        &series,
    )
}
