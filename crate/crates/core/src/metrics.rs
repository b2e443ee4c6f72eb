//! Accuracy and TPR-Gap evaluation.
//!
//! The TPR gap of a class is the difference in true positive rates between
//! the two demographic groups, conditioned on the true class; lower gaps
//! mean the classifier treats the groups more alike. The per-class map is
//! always reported — the scalar aggregate (RMS by default) is a convenience,
//! not a replacement.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::write_atomic;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("arrays have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("input is empty")]
    EmptyInput,
    #[error("expected exactly two groups, found {0}")]
    SingleGroup(usize),
    #[error("no class has support in both groups")]
    EmptyClassBothGroups,
    #[error("positive-class aggregate requires class 1 with support in both groups")]
    MissingPositiveClass,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("report schema error: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateKind {
    Rms,
    MeanAbs,
    PositiveClass,
}

impl std::fmt::Display for AggregateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AggregateKind::Rms => write!(f, "rms"),
            AggregateKind::MeanAbs => write!(f, "meanabs"),
            AggregateKind::PositiveClass => write!(f, "positive"),
        }
    }
}

/// Fraction of exact matches.
pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y_true.len() as f64)
}

/// Per-class gaps plus the scalar aggregate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    pub per_class_gap: BTreeMap<usize, f64>,
    /// Classes with support in exactly one group; excluded from the aggregate.
    pub excluded_classes: Vec<usize>,
    pub aggregate: f64,
    pub kind: AggregateKind,
    /// class → [group-0 count, group-1 count]
    pub support: BTreeMap<usize, [usize; 2]>,
}

/// Computes per-class TPR gaps between the two groups present in `group`
/// (smaller id is group 0). `gap_c = TPR(c | group 0) − TPR(c | group 1)`.
///
/// # Arguments
/// * `y_true` - true class labels
/// * `y_pred` - predicted class labels
/// * `group`  - demographic group ids; exactly two distinct values must appear
/// * `kind`   - scalar aggregation over per-class gaps
pub fn tpr_gap(
    y_true: &[usize],
    y_pred: &[usize],
    group: &[usize],
    kind: AggregateKind,
) -> Result<GapReport, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.len() != group.len() {
        return Err(MetricsError::LengthMismatch(y_true.len(), group.len()));
    }
    if y_true.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let distinct: std::collections::BTreeSet<usize> = group.iter().copied().collect();
    if distinct.len() != 2 {
        return Err(MetricsError::SingleGroup(distinct.len()));
    }
    let ids: Vec<usize> = distinct.into_iter().collect();
    let gidx = |g: usize| usize::from(g == ids[1]);

    let mut support: BTreeMap<usize, [usize; 2]> = BTreeMap::new();
    let mut correct: BTreeMap<usize, [usize; 2]> = BTreeMap::new();
    for i in 0..y_true.len() {
        let c = y_true[i];
        let g = gidx(group[i]);
        support.entry(c).or_insert([0, 0])[g] += 1;
        if y_pred[i] == c {
            correct.entry(c).or_insert([0, 0])[g] += 1;
        }
    }

    let mut per_class_gap = BTreeMap::new();
    let mut excluded = Vec::new();
    for (&c, counts) in &support {
        if counts[0] == 0 || counts[1] == 0 {
            excluded.push(c);
            continue;
        }
        let hits = correct.get(&c).copied().unwrap_or([0, 0]);
        let tpr0 = hits[0] as f64 / counts[0] as f64;
        let tpr1 = hits[1] as f64 / counts[1] as f64;
        per_class_gap.insert(c, tpr0 - tpr1);
    }
    if per_class_gap.is_empty() {
        return Err(MetricsError::EmptyClassBothGroups);
    }

    let aggregate = match kind {
        AggregateKind::Rms => {
            let ss: f64 = per_class_gap.values().map(|g| g * g).sum();
            (ss / per_class_gap.len() as f64).sqrt()
        }
        AggregateKind::MeanAbs => {
            per_class_gap.values().map(|g| g.abs()).sum::<f64>() / per_class_gap.len() as f64
        }
        AggregateKind::PositiveClass => per_class_gap
            .get(&1)
            .map(|g| g.abs())
            .ok_or(MetricsError::MissingPositiveClass)?,
    };

    Ok(GapReport {
        per_class_gap,
        excluded_classes: excluded,
        aggregate,
        kind,
        support,
    })
}

/// Main-task accuracy together with the leakage gaps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub main_accuracy: f64,
    pub per_class_tpr_gap: BTreeMap<usize, f64>,
    pub tpr_gap_aggregate: f64,
    pub aggregate_kind: AggregateKind,
    pub support: BTreeMap<usize, [usize; 2]>,
    pub excluded_classes: Vec<usize>,
}

impl EvalReport {
    pub fn new(main_accuracy: f64, gaps: GapReport) -> Self {
        EvalReport {
            main_accuracy,
            per_class_tpr_gap: gaps.per_class_gap,
            tpr_gap_aggregate: gaps.aggregate,
            aggregate_kind: gaps.kind,
            support: gaps.support,
            excluded_classes: gaps.excluded_classes,
        }
    }
}

/// One table row: a (target, method) pair with deltas against the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub target: String,
    pub method: String,
    pub main: f64,
    pub tpr_gap: Option<f64>,
    pub delta_main: Option<f64>,
    pub delta_gap: Option<f64>,
}

pub const REPORT_CSV_HEADER: [&str; 6] =
    ["Target", "Method", "Main", "TPR-Gap", "ΔMain", "ΔGap"];

pub fn write_rows_csv(path: &Path, rows: &[EvalRow]) -> Result<(), MetricsError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(REPORT_CSV_HEADER)?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for row in rows {
        writer.write_record([
            row.target.clone(),
            row.method.clone(),
            format!("{}", row.main),
            fmt(row.tpr_gap),
            fmt(row.delta_main),
            fmt(row.delta_gap),
        ])?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| MetricsError::Schema(e.to_string()))?;
    write_atomic(path, &bytes)?;
    Ok(())
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<EvalRow>, MetricsError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    for (i, want) in REPORT_CSV_HEADER.iter().enumerate() {
        match headers.get(i) {
            Some(h) if h == *want => {}
            other => {
                return Err(MetricsError::Schema(format!(
                    "column {i} is {:?}, expected {want:?}",
                    other
                )))
            }
        }
    }
    let parse_opt = |s: &str| -> Result<Option<f64>, MetricsError> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse::<f64>()
                .map(Some)
                .map_err(|e| MetricsError::Schema(e.to_string()))
        }
    };
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        rows.push(EvalRow {
            target: record.get(0).unwrap_or("").to_string(),
            method: record.get(1).unwrap_or("").to_string(),
            main: record
                .get(2)
                .unwrap_or("")
                .parse()
                .map_err(|e: std::num::ParseFloatError| MetricsError::Schema(e.to_string()))?,
            tpr_gap: parse_opt(record.get(3).unwrap_or(""))?,
            delta_main: parse_opt(record.get(4).unwrap_or(""))?,
            delta_gap: parse_opt(record.get(5).unwrap_or(""))?,
        });
    }
    Ok(rows)
}
