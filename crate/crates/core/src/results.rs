//! Per-frame results tables shared by the repair path and the baselines.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SensorSequence;
use crate::error::{Error, Result};
use crate::gatefuse::SequenceRun;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub t: f64,
    pub d_clean: Option<f64>,
    pub d_tilde: Option<f64>,
    pub d_rep: Option<f64>,
    pub d_fused: Option<f64>,
    pub w: Option<f64>,
    pub r_xs: Option<f64>,
    pub r_delta: Option<f64>,
    pub r_post: Option<f64>,
    /// `clean`, an attack kind, or empty when the input carries no labels.
    pub label: String,
    pub step_latency_us: Option<f64>,
}

fn label_of(seq: &SensorSequence, i: usize) -> String {
    match seq.labels() {
        None => String::new(),
        Some(l) => l[i].map_or("clean", |k| k.as_str()).to_string(),
    }
}

/// Table for a run of the repair path. Latencies are only written when
/// asked for, since they differ between otherwise identical runs.
pub fn repair_table(
    input: &SensorSequence,
    clean: Option<&SensorSequence>,
    run: &SequenceRun,
    with_latency: bool,
) -> Vec<ResultRow> {
    let reference = clean.map(SensorSequence::depth);
    input
        .frames()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let s = &run.steps[i];
            ResultRow {
                t: f.t,
                d_clean: reference.as_ref().and_then(|r| r[i]),
                d_tilde: f.depth,
                d_rep: Some(s.d_rep),
                d_fused: Some(s.d_fused),
                w: Some(s.w),
                r_xs: s.r_xs,
                r_delta: Some(s.r_delta),
                r_post: s.r_post,
                label: label_of(input, i),
                step_latency_us: with_latency.then(|| run.latency_us[i]),
            }
        })
        .collect()
}

/// Table for a baseline: only the estimate column is filled.
pub fn baseline_table(input: &SensorSequence, clean: Option<&SensorSequence>, estimate: &[Option<f64>]) -> Vec<ResultRow> {
    let reference = clean.map(SensorSequence::depth);
    input
        .frames()
        .iter()
        .enumerate()
        .map(|(i, f)| ResultRow {
            t: f.t,
            d_clean: reference.as_ref().and_then(|r| r[i]),
            d_tilde: f.depth,
            d_rep: None,
            d_fused: estimate[i],
            w: None,
            r_xs: None,
            r_delta: None,
            r_post: None,
            label: label_of(input, i),
            step_latency_us: None,
        })
        .collect()
}

pub fn write_table(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::config(format!("csv encoding: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::config(format!("csv encoding: {e}")))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_table(path: &Path) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::MalformedRow {
                path: path.to_path_buf(),
                row: i + 2,
                reason: e.to_string(),
            })
        })
        .collect()
}
