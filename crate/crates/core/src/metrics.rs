//! Binary classification metrics and the per-participant result table.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{FederationResult, ModeKind};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

pub fn classify(probabilities: &[f64], threshold: f64) -> Vec<f64> {
    probabilities
        .iter()
        .map(|&p| if p >= threshold { 1.0 } else { 0.0 })
        .collect()
}

fn check_lengths(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Domain("metrics of an empty set".into()));
    }
    Ok(())
}

pub fn accuracy(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Positive-class F1, `2TP / (2TP + FP + FN)`, defined as 0 when the denominator is 0.
pub fn f1(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == 1.0, t == 1.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    Ok(if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1: f64,
    pub n_test: usize,
}

impl Metrics {
    pub fn from_probabilities(probabilities: &[f64], truth: &[f64]) -> Result<Self> {
        let pred = classify(probabilities, DEFAULT_THRESHOLD);
        Ok(Self {
            accuracy: accuracy(&pred, truth)?,
            f1: f1(&pred, truth)?,
            n_test: truth.len(),
        })
    }
}

// --- experiment table ---------------------------------------------------------

/// Metric columns in table order.
pub const METRIC_COLUMNS: [&str; 12] = [
    "acc_pre_plain",
    "acc_post_plain",
    "f1_pre_plain",
    "f1_post_plain",
    "acc_pre_dp",
    "acc_post_dp",
    "f1_pre_dp",
    "f1_post_dp",
    "acc_pre_chaos",
    "acc_post_chaos",
    "f1_pre_chaos",
    "f1_post_chaos",
];

pub const CSV_HEADER: &str = "participant,size_frac,pos_rate,acc_pre_plain,acc_post_plain,f1_pre_plain,f1_post_plain,acc_pre_dp,acc_post_dp,f1_pre_dp,f1_post_dp,acc_pre_chaos,acc_post_chaos,f1_pre_chaos,f1_post_chaos";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub participant: String,
    pub size_frac: Option<f64>,
    pub pos_rate: Option<f64>,
    pub acc_pre_plain: Option<f64>,
    pub acc_post_plain: Option<f64>,
    pub f1_pre_plain: Option<f64>,
    pub f1_post_plain: Option<f64>,
    pub acc_pre_dp: Option<f64>,
    pub acc_post_dp: Option<f64>,
    pub f1_pre_dp: Option<f64>,
    pub f1_post_dp: Option<f64>,
    pub acc_pre_chaos: Option<f64>,
    pub acc_post_chaos: Option<f64>,
    pub f1_pre_chaos: Option<f64>,
    pub f1_post_chaos: Option<f64>,
}

impl TableRow {
    pub fn empty(participant: impl Into<String>) -> Self {
        Self {
            participant: participant.into(),
            size_frac: None,
            pos_rate: None,
            acc_pre_plain: None,
            acc_post_plain: None,
            f1_pre_plain: None,
            f1_post_plain: None,
            acc_pre_dp: None,
            acc_post_dp: None,
            f1_pre_dp: None,
            f1_post_dp: None,
            acc_pre_chaos: None,
            acc_post_chaos: None,
            f1_pre_chaos: None,
            f1_post_chaos: None,
        }
    }

    pub fn metrics(&self) -> [Option<f64>; 12] {
        [
            self.acc_pre_plain,
            self.acc_post_plain,
            self.f1_pre_plain,
            self.f1_post_plain,
            self.acc_pre_dp,
            self.acc_post_dp,
            self.f1_pre_dp,
            self.f1_post_dp,
            self.acc_pre_chaos,
            self.acc_post_chaos,
            self.f1_pre_chaos,
            self.f1_post_chaos,
        ]
    }

    fn metrics_mut(&mut self) -> [&mut Option<f64>; 12] {
        [
            &mut self.acc_pre_plain,
            &mut self.acc_post_plain,
            &mut self.f1_pre_plain,
            &mut self.f1_post_plain,
            &mut self.acc_pre_dp,
            &mut self.acc_post_dp,
            &mut self.f1_pre_dp,
            &mut self.f1_post_dp,
            &mut self.acc_pre_chaos,
            &mut self.acc_post_chaos,
            &mut self.f1_pre_chaos,
            &mut self.f1_post_chaos,
        ]
    }

    /// Every numeric cell in CSV order.
    pub fn cells(&self) -> [Option<f64>; 14] {
        let m = self.metrics();
        let mut out = [None; 14];
        out[0] = self.size_frac;
        out[1] = self.pos_rate;
        out[2..].copy_from_slice(&m);
        out
    }

    fn set_cells(&mut self, cells: [Option<f64>; 14]) {
        self.size_frac = cells[0];
        self.pos_rate = cells[1];
        for (slot, v) in self.metrics_mut().into_iter().zip(&cells[2..]) {
            *slot = *v;
        }
    }

    fn set_mode(&mut self, mode: ModeKind, pre: &Metrics, post: &Metrics) {
        let offset = match mode {
            ModeKind::Plain => 0,
            ModeKind::Dp => 4,
            ModeKind::Chaos => 8,
        };
        let values = [pre.accuracy, post.accuracy, pre.f1, post.f1];
        for (slot, v) in self.metrics_mut().into_iter().skip(offset).zip(values) {
            *slot = Some(v);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub rows: Vec<TableRow>,
    pub avg_row: TableRow,
}

pub const AVG_LABEL: &str = "avg";

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v?;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

fn average_row(rows: &[TableRow]) -> TableRow {
    let mut avg = TableRow::empty(AVG_LABEL);
    for (k, slot) in avg.metrics_mut().into_iter().enumerate() {
        *slot = mean_of(rows.iter().map(|r| r.metrics()[k]));
    }
    avg
}

/// One row per participant plus the column-mean row. Size and positive rate
/// are taken from the first result (every mode shares the same partition).
pub fn build_table(results: &[(ModeKind, FederationResult)]) -> Result<ExperimentTable> {
    let Some((_, first)) = results.first() else {
        return Err(Error::Config("no results to tabulate".into()));
    };
    let mut rows: Vec<TableRow> = first
        .participants
        .iter()
        .map(|p| TableRow {
            size_frac: Some(p.size_fraction),
            pos_rate: Some(p.positive_rate),
            ..TableRow::empty(p.id.to_string())
        })
        .collect();
    for (mode, result) in results {
        if result.participants.len() != rows.len() {
            return Err(Error::Dimension(format!(
                "{mode} result has {} participants, table has {}",
                result.participants.len(),
                rows.len()
            )));
        }
        for (row, p) in rows.iter_mut().zip(&result.participants) {
            row.set_mode(*mode, &p.pre, &p.post);
        }
    }
    let avg_row = average_row(&rows);
    Ok(ExperimentTable { rows, avg_row })
}

impl ExperimentTable {
    fn all_rows(&self) -> impl Iterator<Item = &TableRow> {
        self.rows.iter().chain(std::iter::once(&self.avg_row))
    }

    /// Header plus one line per row; empty cells for columns not run.
    /// Values use the shortest representation that round-trips exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in self.all_rows() {
            out.push_str(&row.participant);
            for cell in row.cells() {
                out.push(',');
                if let Some(v) = cell {
                    write!(out, "{v}").unwrap();
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CSV_HEADER) {
            return Err(Error::Format {
                row: 1,
                col: 1,
                msg: "unexpected table header".into(),
            });
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 15 {
                return Err(Error::Format {
                    row: i + 2,
                    col: fields.len(),
                    msg: format!("expected 15 fields, got {}", fields.len()),
                });
            }
            let mut cells = [None; 14];
            for (c, f) in fields[1..].iter().enumerate() {
                if !f.is_empty() {
                    cells[c] = Some(f.parse::<f64>().map_err(|e| Error::Format {
                        row: i + 2,
                        col: c + 2,
                        msg: e.to_string(),
                    })?);
                }
            }
            let mut row = TableRow::empty(fields[0]);
            row.set_cells(cells);
            rows.push(row);
        }
        let avg_row = rows
            .pop()
            .filter(|r| r.participant == AVG_LABEL)
            .ok_or_else(|| Error::Format {
                row: 0,
                col: 1,
                msg: "table lacks an avg row".into(),
            })?;
        Ok(Self { rows, avg_row })
    }

    /// Fixed-width rendering with metrics to four decimals.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let header: Vec<&str> = CSV_HEADER.split(',').collect();
        writeln!(out, "{}", header.join("\t")).unwrap();
        for row in self.all_rows() {
            let cells: Vec<String> = row
                .cells()
                .iter()
                .map(|c| c.map_or_else(|| "-".to_string(), |v| format!("{v:.4}")))
                .collect();
            writeln!(out, "{}\t{}", row.participant, cells.join("\t")).unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
}

pub fn export(table: &ExperimentTable, format: ExportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        ExportFormat::Csv => table.to_csv(),
        ExportFormat::Json => {
            let mut s = serde_json::to_string_pretty(table).map_err(|e| Error::io(path, e))?;
            s.push('\n');
            s
        }
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn reload(format: ExportFormat, path: impl AsRef<Path>) -> Result<ExperimentTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        ExportFormat::Csv => ExperimentTable::from_csv(&text),
        ExportFormat::Json => serde_json::from_str(&text).map_err(|e| Error::Format {
            row: e.line(),
            col: e.column(),
            msg: e.to_string(),
        }),
    }
}

/// Cell-wise mean and population standard deviation over same-shaped tables.
pub fn aggregate_tables(tables: &[ExperimentTable]) -> Result<(ExperimentTable, ExperimentTable)> {
    let first = tables
        .first()
        .ok_or_else(|| Error::Config("no tables to aggregate".into()))?;
    if tables.iter().any(|t| t.rows.len() != first.rows.len()) {
        return Err(Error::Dimension("tables differ in participant count".into()));
    }
    let combine = |pick: &dyn Fn(&ExperimentTable) -> &TableRow, label: &str| {
        let mut mean = TableRow::empty(label);
        let mut std = TableRow::empty(label);
        let mut mc = [None; 14];
        let mut sc = [None; 14];
        for k in 0..14 {
            let values: Option<Vec<f64>> = tables.iter().map(|t| pick(t).cells()[k]).collect();
            if let Some(values) = values {
                let n = values.len() as f64;
                let m = values.iter().sum::<f64>() / n;
                let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                mc[k] = Some(m);
                sc[k] = Some(var.sqrt());
            }
        }
        mean.set_cells(mc);
        std.set_cells(sc);
        (mean, std)
    };
    let mut mean_rows = Vec::new();
    let mut std_rows = Vec::new();
    for i in 0..first.rows.len() {
        let (m, s) = combine(&|t: &ExperimentTable| &t.rows[i], &first.rows[i].participant);
        mean_rows.push(m);
        std_rows.push(s);
    }
    let (m_avg, s_avg) = combine(&|t: &ExperimentTable| &t.avg_row, AVG_LABEL);
    let mut m_avg = m_avg;
    m_avg.size_frac = None;
    m_avg.pos_rate = None;
    Ok((
        ExperimentTable {
            rows: mean_rows,
            avg_row: m_avg,
        },
        ExperimentTable {
            rows: std_rows,
            avg_row: s_avg,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_rule() {
        assert_eq!(classify(&[0.5, 0.49, 0.51], 0.5), vec![1.0, 0.0, 1.0]);
        assert_eq!(classify(&[0.5; 4], 0.5), vec![1.0; 4]);
    }

    #[test]
    fn accuracy_values() {
        assert_eq!(accuracy(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1.0, 1.0, 0.0, 0.0], &[1.0, 1.0, 0.0, 1.0]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn f1_values() {
        // TP=2, FP=1, FN=1
        let pred = [1.0, 1.0, 1.0, 0.0, 0.0];
        let truth = [1.0, 1.0, 0.0, 1.0, 0.0];
        assert!((f1(&pred, &truth).unwrap() - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(f1(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(f1(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
    }

    fn sample_table() -> ExperimentTable {
        let mut a = TableRow::empty("1");
        a.size_frac = Some(0.2);
        a.pos_rate = Some(0.47);
        a.set_mode(
            ModeKind::Plain,
            &Metrics {
                accuracy: 0.9546,
                f1: 0.9231,
                n_test: 22,
            },
            &Metrics {
                accuracy: 1.0,
                f1: 1.0,
                n_test: 22,
            },
        );
        let mut b = TableRow::empty("2");
        b.size_frac = Some(0.2);
        b.pos_rate = Some(1.0 / 3.0);
        b.set_mode(
            ModeKind::Plain,
            &Metrics {
                accuracy: 0.1 + 0.2,
                f1: 0.5,
                n_test: 23,
            },
            &Metrics {
                accuracy: 0.9,
                f1: 0.8,
                n_test: 23,
            },
        );
        let rows = vec![a, b];
        let avg_row = average_row(&rows);
        ExperimentTable { rows, avg_row }
    }

    #[test]
    fn csv_layout_and_roundtrip() {
        let t = sample_table();
        let csv = t.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        assert!(lines.next().unwrap().starts_with("1,0.2,0.47,0.9546,1,0.9231,1,,,,"));
        assert_eq!(ExperimentTable::from_csv(&csv).unwrap(), t);
    }

    #[test]
    fn avg_row_is_column_mean() {
        let t = sample_table();
        assert!((t.avg_row.acc_pre_plain.unwrap() - (0.9546 + 0.3) / 2.0).abs() < 1e-12);
        assert_eq!(t.avg_row.acc_pre_dp, None);
    }

    #[test]
    fn aggregate_of_identical_tables() {
        let t = sample_table();
        let (m, s) = aggregate_tables(&[t.clone(), t.clone()]).unwrap();
        assert_eq!(m.rows, t.rows);
        assert!(s.rows[0].cells().iter().flatten().all(|&v| v == 0.0));
    }
}
