//! CSV and JSONL emitters with fixed column order.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use super::criteria::{CriteriaReport, SeedMeasures};
use super::metrics::MetricSeries;
use crate::evolution::TrainingRow;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Jsonl,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Jsonl => "jsonl",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "jsonl" => Ok(ReportFormat::Jsonl),
            other => Err(Error::config("format", format!("expected csv or jsonl, got `{other}`"))),
        }
    }
}

pub const SERIES_COLUMNS: [&str; 6] = ["series", "x_label", "y_label", "x", "y", "stderr"];
pub const CRITERIA_COLUMNS: [&str; 8] = [
    "criterion",
    "paradigm",
    "mean",
    "stderr",
    "n",
    "higher_is_better",
    "winner",
    "tie",
];
pub const TRAINING_COLUMNS: [&str; 6] = ["episode", "step", "mode", "unit", "val_perf", "mean_tool_use"];
pub const MEASURE_COLUMNS: [&str; 8] = [
    "seed",
    "paradigm",
    "learning_speed",
    "generalization",
    "high_difficulty_mastery",
    "exploration",
    "stability",
    "tool_efficiency",
];

/// A row whose fields line up with a fixed column list.
pub trait Row {
    fn fields(&self) -> Vec<String>;
    fn json(&self) -> serde_json::Value;
}

/// `f64` as shortest round-trip decimal: dot separator, no grouping.
pub fn num(v: f64) -> String {
    let s = format!("{v:?}");
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

#[derive(Serialize)]
struct SeriesRow<'a> {
    series: &'a str,
    x_label: &'a str,
    y_label: &'a str,
    x: f64,
    y: f64,
    stderr: f64,
}

impl Row for SeriesRow<'_> {
    fn fields(&self) -> Vec<String> {
        vec![
            self.series.into(),
            self.x_label.into(),
            self.y_label.into(),
            num(self.x),
            num(self.y),
            num(self.stderr),
        ]
    }

    fn json(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or_default()
    }
}

/// Writes `rows` under `columns` to `out`. CSV always has the header row,
/// even with no data.
pub fn write_rows<W: Write, R: Row>(out: W, columns: &[&str], rows: &[R], format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(columns)?;
            for r in rows {
                let f = r.fields();
                if f.len() != columns.len() {
                    return Err(Error::contract(format!(
                        "row has {} fields for {} columns",
                        f.len(),
                        columns.len()
                    )));
                }
                w.write_record(&f)?;
            }
            w.flush()?;
        }
        ReportFormat::Jsonl => {
            let mut out = out;
            for r in rows {
                // keys in column order, not alphabetical
                let v = r.json();
                let mut line = String::from("{");
                for (i, c) in columns.iter().enumerate() {
                    if i > 0 {
                        line.push(',');
                    }
                    line.push_str(&serde_json::to_string(c)?);
                    line.push(':');
                    line.push_str(&serde_json::to_string(&v[*c])?);
                }
                line.push('}');
                writeln!(out, "{line}")?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

fn to_file<R: Row>(path: &Path, columns: &[&str], rows: &[R], format: ReportFormat) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_rows(std::io::BufWriter::new(file), columns, rows, format)
}

pub fn emit_series(series: &[MetricSeries], path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let rows: Vec<SeriesRow> = series
        .iter()
        .flat_map(|s| {
            s.points.iter().map(move |p| SeriesRow {
                series: &s.name,
                x_label: &s.x_label,
                y_label: &s.y_label,
                x: p.x,
                y: p.y,
                stderr: p.stderr,
            })
        })
        .collect();
    to_file(path.as_ref(), &SERIES_COLUMNS, &rows, format)
}

struct CriteriaRow(serde_json::Value);

impl Row for CriteriaRow {
    fn fields(&self) -> Vec<String> {
        CRITERIA_COLUMNS
            .iter()
            .map(|c| match &self.0[*c] {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Number(n) => n.as_f64().map_or_else(|| n.to_string(), num),
                other => other.to_string(),
            })
            .collect()
    }

    fn json(&self) -> serde_json::Value {
        self.0.clone()
    }
}

pub fn emit_criteria(report: &CriteriaReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let rows: Vec<CriteriaRow> = report
        .scores
        .iter()
        .map(|s| {
            let tie = report.winner(s.criterion).is_some_and(|w| w.tie);
            CriteriaRow(serde_json::json!({
                "criterion": s.criterion,
                "paradigm": s.paradigm,
                "mean": s.mean,
                "stderr": s.stderr,
                "n": s.n,
                "higher_is_better": s.higher_is_better,
                "winner": s.winner,
                "tie": tie,
            }))
        })
        .collect();
    to_file(path.as_ref(), &CRITERIA_COLUMNS, &rows, format)
}

impl Row for TrainingRow {
    fn fields(&self) -> Vec<String> {
        vec![
            self.episode.to_string(),
            self.step.to_string(),
            self.mode.to_string(),
            self.unit.to_string(),
            num(self.val_perf),
            num(self.mean_tool_use),
        ]
    }

    fn json(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or_default()
    }
}

pub fn emit_training(rows: &[TrainingRow], path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    to_file(path.as_ref(), &TRAINING_COLUMNS, rows, format)
}

impl Row for SeedMeasures {
    fn fields(&self) -> Vec<String> {
        vec![
            self.seed.to_string(),
            self.mode.to_string(),
            num(self.learning_speed),
            num(self.generalization),
            num(self.high_difficulty_mastery),
            num(self.exploration),
            num(self.stability),
            num(self.tool_efficiency),
        ]
    }

    fn json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).unwrap_or_default();
        v["paradigm"] = serde_json::json!(self.mode);
        v
    }
}

pub fn emit_measures(rows: &[SeedMeasures], path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    to_file(path.as_ref(), &MEASURE_COLUMNS, rows, format)
}
