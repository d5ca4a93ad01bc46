//! Per-run CSV artifacts. Floats are written in shortest round-trip form,
//! so reading a file back and re-emitting it reproduces it byte for byte.

use std::fs;
use std::path::Path;

use reif_core::eval::{NoiseReport, PrCurve, PrPoint};
use reif_core::influence::{InfluenceReport, PairwiseInfluence};
use reif_core::trainer::{SelectionRecord, TrainHistory};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HISTORY: &str = "history.csv";
pub const INFLUENCES: &str = "influences.csv";
pub const SELECTIONS: &str = "selections.csv";
pub const PR_CURVE: &str = "pr_curve.csv";
pub const PATN: &str = "patn.csv";
pub const NOISE_REPORT: &str = "noise_report.csv";
pub const PAIRWISE: &str = "pairwise.csv";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRow {
    pub instance_id: u64,
    pub bag_id: u64,
    pub phi: f64,
    pub pi: f64,
    pub epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub instance_id: u64,
    pub bag_id: u64,
    pub phi: f64,
    pub pi: f64,
    pub kept: u8,
    pub epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub learning_rate: f64,
    pub val_loss: f64,
    pub subset_loss: f64,
    pub selected: usize,
    pub clean_fraction: Option<f64>,
    pub ihvp_iterations: Option<usize>,
    pub ihvp_converged: Option<u8>,
    pub ihvp_fell_back: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatnRow {
    pub n: usize,
    pub precision: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub k: usize,
    pub clean_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRow {
    pub train_id: u64,
    pub val_id: u64,
    pub phi: f64,
}

pub fn influence_rows(report: &InfluenceReport) -> Vec<InfluenceRow> {
    report
        .entries
        .iter()
        .map(|e| InfluenceRow {
            instance_id: e.instance_id,
            bag_id: e.bag_id,
            phi: e.phi,
            pi: e.pi,
            epoch: report.epoch,
        })
        .collect()
}

pub fn selection_rows(records: &[SelectionRecord]) -> Vec<SelectionRow> {
    records
        .iter()
        .map(|r| SelectionRow {
            instance_id: r.instance_id,
            bag_id: r.bag_id,
            phi: r.phi,
            pi: r.pi,
            kept: r.kept as u8,
            epoch: r.epoch,
        })
        .collect()
}

pub fn history_rows(history: &TrainHistory) -> Vec<HistoryRow> {
    history
        .epochs
        .iter()
        .map(|e| HistoryRow {
            epoch: e.epoch,
            learning_rate: e.learning_rate,
            val_loss: e.val_loss,
            subset_loss: e.subset_loss,
            selected: e.selected,
            clean_fraction: e.clean_fraction,
            ihvp_iterations: e.inverse_hvp.map(|s| s.iterations),
            ihvp_converged: e.inverse_hvp.map(|s| s.converged as u8),
            ihvp_fell_back: e.inverse_hvp.map(|s| s.fell_back as u8),
        })
        .collect()
}

pub fn pr_rows(curve: &PrCurve) -> Vec<PrPoint> {
    curve.points.clone()
}

pub fn noise_rows(report: &NoiseReport) -> Vec<NoiseRow> {
    report
        .clean_fraction_curve
        .iter()
        .map(|&(k, clean_fraction)| NoiseRow { k, clean_fraction })
        .collect()
}

pub fn pairwise_rows(pw: &PairwiseInfluence) -> Vec<PairwiseRow> {
    let mut rows = Vec::with_capacity(pw.values.len());
    for (i, &train_id) in pw.train_ids.iter().enumerate() {
        for (j, &val_id) in pw.val_ids.iter().enumerate() {
            rows.push(PairwiseRow { train_id, val_id, phi: pw.get(i, j) });
        }
    }
    rows
}

pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
}

/// Writes `rows` to `path`. An empty `rows` still produces a header when the
/// type has named fields and `header` is given.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let text = if rows.is_empty() {
        format!("{}\n", header.join(","))
    } else {
        csv_string(rows)?
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Line {
                path: path.to_path_buf(),
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn influence_csv_round_trips() {
        let rows = vec![
            InfluenceRow { instance_id: 3, bag_id: 1, phi: -1.234567890123e-7, pi: 0.5000000308641975, epoch: 30 },
            InfluenceRow { instance_id: 4, bag_id: 1, phi: 0.1 + 0.2, pi: 1.0, epoch: 30 },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(INFLUENCES);
        write_csv(&path, &rows, &[]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("instance_id,bag_id,phi,pi,epoch\n"));
        let back: Vec<InfluenceRow> = read_csv(&path).unwrap();
        assert_eq!(back, rows);
        assert_eq!(csv_string(&back).unwrap(), text);
    }

    #[test]
    fn optional_history_columns_are_blank() {
        let row = HistoryRow {
            epoch: 2,
            learning_rate: 0.1,
            val_loss: 1.0,
            subset_loss: 2.0,
            selected: 10,
            clean_fraction: None,
            ihvp_iterations: None,
            ihvp_converged: None,
            ihvp_fell_back: None,
        };
        let text = csv_string(&[row]).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with(",,,,"));
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let back: HistoryRow = r.deserialize().next().unwrap().unwrap();
        assert_eq!(back, row);
    }
}
