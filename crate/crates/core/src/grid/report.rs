//! Aligned-text tables for grid summaries and stored reference results.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cell, GridSummary};
use crate::metrics::AggregateResult;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("row {row} has {got} values, header has {expected} datasets")]
    RowWidth { row: String, got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn render(&self) -> String {
        format!("{:.4}±{:.4}", self.mean, self.std)
    }
}

impl From<&AggregateResult> for MeanStd {
    fn from(a: &AggregateResult) -> Self {
        Self { mean: a.mean, std: a.std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub a: u32,
    pub t: u32,
    pub mean: f64,
    pub std: f64,
}

impl CellStat {
    pub fn new(cell: Cell, agg: &AggregateResult) -> Self {
        Self { a: cell.a, t: cell.t, mean: agg.mean, std: agg.std }
    }

    /// `a1×t2: 0.8984±0.0221`
    pub fn render(&self) -> String {
        format!("{}: {}", Cell { a: self.a, t: self.t }, MeanStd { mean: self.mean, std: self.std }.render())
    }
}

/// One line of the best/default/worst summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub system: String,
    pub dataset: String,
    pub best: CellStat,
    pub default: CellStat,
    pub worst: CellStat,
    /// Stored as given; fresh rows compute it as best minus worst.
    pub range_delta: f64,
    pub baseline: CellStat,
}

impl SummaryRow {
    pub fn from_summary(system: impl Into<String>, dataset: impl Into<String>, summary: &GridSummary) -> Self {
        Self {
            group: None,
            system: system.into(),
            dataset: dataset.into(),
            best: CellStat::new(summary.best.0, &summary.best.1),
            default: CellStat::new(Cell::DEFAULT, &summary.default),
            worst: CellStat::new(summary.worst.0, &summary.worst.1),
            range_delta: summary.range_delta,
            baseline: CellStat::new(Cell::BASELINE, &summary.no_alm_baseline),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub title: String,
    pub rows: Vec<SummaryRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub setting: String,
    pub values: Vec<MeanStd>,
}

/// Settings × datasets UAR table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineTable {
    pub title: String,
    pub datasets: Vec<String>,
    pub rows: Vec<BaselineRow>,
}

impl BaselineTable {
    pub fn validate(&self) -> Result<(), ReportError> {
        for r in &self.rows {
            if r.values.len() != self.datasets.len() {
                return Err(ReportError::RowWidth {
                    row: r.setting.clone(),
                    got: r.values.len(),
                    expected: self.datasets.len(),
                });
            }
        }
        Ok(())
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io { path: path.display().to_string(), source })?;
    serde_json::from_str(&text).map_err(|source| ReportError::Json { path: path.display().to_string(), source })
}

pub fn load_summary_table(path: &Path) -> Result<SummaryTable, ReportError> {
    read_json(path)
}

pub fn load_summary_row(path: &Path) -> Result<SummaryRow, ReportError> {
    read_json(path)
}

pub fn load_baseline_table(path: &Path) -> Result<BaselineTable, ReportError> {
    let table: BaselineTable = read_json(path)?;
    table.validate()?;
    Ok(table)
}

enum Line {
    Group(String),
    Cells(Vec<String>),
}

fn align(title: &str, header: Vec<String>, lines: Vec<Line>) -> String {
    let width = |s: &str| s.chars().count();
    let mut widths: Vec<usize> = header.iter().map(|h| width(h)).collect();
    for line in &lines {
        if let Line::Cells(cells) = line {
            for (w, c) in widths.iter_mut().zip(cells) {
                *w = (*w).max(width(c));
            }
        }
    }
    let total = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
    let row = |cells: &[String]| {
        let mut out = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            out.push_str(c);
            out.extend(std::iter::repeat_n(' ', w - width(c)));
        }
        out.truncate(out.trim_end().len());
        out.push('\n');
        out
    };

    let mut out = format!("{title}\n");
    let rule = "-".repeat(total) + "\n";
    out.push_str(&rule);
    out.push_str(&row(&header));
    out.push_str(&rule);
    for line in &lines {
        match line {
            Line::Group(g) => out.push_str(&format!("{g}\n")),
            Line::Cells(cells) => out.push_str(&row(cells)),
        }
    }
    out.push_str(&rule);
    out
}

fn grouped<T>(rows: &[T], group: impl Fn(&T) -> Option<String>, cells: impl Fn(&T) -> Vec<String>) -> Vec<Line> {
    let mut lines = Vec::new();
    let mut current: Option<String> = None;
    for r in rows {
        let g = group(r);
        if let Some(name) = g.as_ref().filter(|_| g != current) {
            lines.push(Line::Group(name.clone()));
        }
        current = g;
        lines.push(Line::Cells(cells(r)));
    }
    lines
}

pub fn render_summary_table(table: &SummaryTable) -> String {
    let header = ["System", "Dataset", "Best a×t", "Default 1×1", "Worst a×t", "Range Δ", "No-ALM Baseline"]
        .map(String::from)
        .to_vec();
    let lines = grouped(
        &table.rows,
        |r| r.group.clone(),
        |r| {
            vec![
                r.system.clone(),
                r.dataset.clone(),
                r.best.render(),
                r.default.render(),
                r.worst.render(),
                format!("{:.4}", r.range_delta),
                r.baseline.render(),
            ]
        },
    );
    align(&table.title, header, lines)
}

pub fn render_baseline_table(table: &BaselineTable) -> String {
    let mut header = vec!["Setting".to_owned()];
    header.extend(table.datasets.iter().cloned());
    let lines = grouped(
        &table.rows,
        |r| r.group.clone(),
        |r| std::iter::once(r.setting.clone()).chain(r.values.iter().map(MeanStd::render)).collect(),
    );
    align(&table.title, header, lines)
}
