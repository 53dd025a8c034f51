//! Tabular experiment reports with deterministic CSV / JSON emission.
//! Floats are rounded to six significant digits before formatting so both
//! formats carry identical values and reruns are byte-identical.

use serde_json::{Map, Number, Value};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("unknown report format {0:?} (expected csv or json)")]
    UnknownFormat(String),
    #[error("row has {got} cells but the report has {expected} columns")]
    RaggedRow { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = ReportError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

impl ReportFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

/// Rounds to six significant digits.
pub fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

fn format_float(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{}", round_sig6(x))
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_float(*v),
            Cell::Text(v) => v.clone(),
            Cell::Bool(v) => v.to_string(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(v) => Value::Number((*v).into()),
            Cell::Float(v) => Number::from_f64(round_sig6(*v))
                .map(Value::Number)
                .unwrap_or_else(|| Value::String(format_float(*v))),
            Cell::Text(v) => Value::String(v.clone()),
            Cell::Bool(v) => Value::Bool(*v),
        }
    }
}

/// A named table with fixed column order.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Report {
    pub fn new(title: &str, columns: &[&str]) -> Self {
        Report {
            title: title.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<Cell>) -> Result<(), ReportError> {
        if row.len() != self.columns.len() {
            return Err(ReportError::RaggedRow { got: row.len(), expected: self.columns.len() });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.columns.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::csv).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let mut obj = Map::new();
                for (col, cell) in self.columns.iter().zip(row) {
                    obj.insert(col.clone(), cell.json());
                }
                Value::Object(obj)
            })
            .collect();
        let mut top = Map::new();
        top.insert("title".to_string(), Value::String(self.title.clone()));
        top.insert(
            "columns".to_string(),
            Value::Array(self.columns.iter().map(|c| Value::String(c.clone())).collect()),
        );
        top.insert("rows".to_string(), Value::Array(rows));
        serde_json::to_string_pretty(&Value::Object(top)).expect("in-memory json")
    }

    /// Rebuilds a report from its JSON rendering.
    pub fn from_json(body: &str) -> Result<Self, ReportError> {
        let parse = |msg: &str| ReportError::UnknownFormat(msg.to_string());
        let value: Value =
            serde_json::from_str(body).map_err(|e| parse(&format!("not json: {e}")))?;
        let title = value["title"].as_str().ok_or_else(|| parse("missing title"))?.to_string();
        let columns: Vec<String> = value["columns"]
            .as_array()
            .ok_or_else(|| parse("missing columns"))?
            .iter()
            .map(|c| c.as_str().map(str::to_string).ok_or_else(|| parse("bad column")))
            .collect::<Result<_, _>>()?;
        let mut report =
            Report { title, columns: columns.clone(), rows: Vec::new() };
        for row in value["rows"].as_array().ok_or_else(|| parse("missing rows"))? {
            let cells: Vec<Cell> = columns
                .iter()
                .map(|c| match &row[c] {
                    Value::Bool(b) => Ok(Cell::Bool(*b)),
                    Value::Number(n) if n.is_i64() => Ok(Cell::Int(n.as_i64().unwrap())),
                    Value::Number(n) => Ok(Cell::Float(n.as_f64().unwrap())),
                    Value::String(s) if s == "nan" => Ok(Cell::Float(f64::NAN)),
                    Value::String(s) => Ok(Cell::Text(s.clone())),
                    other => Err(parse(&format!("bad cell {other:?}"))),
                })
                .collect::<Result<_, _>>()?;
            report.push_row(cells)?;
        }
        Ok(report)
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Json => self.to_json(),
        }
    }

    /// Writes `<title>.<ext>` into `dir` and returns the path.
    pub fn write(&self, dir: &Path, format: ReportFormat) -> Result<std::path::PathBuf, ReportError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| ReportError::Io { path: dir.display().to_string(), source: e })?;
        let path = dir.join(format!("{}.{}", self.title, format.extension()));
        std::fs::write(&path, self.render(format))
            .map_err(|e| ReportError::Io { path: path.display().to_string(), source: e })?;
        Ok(path)
    }

    /// Value of a cell by row and column name.
    pub fn cell(&self, row: usize, column: &str) -> Option<&Cell> {
        let idx = self.columns.iter().position(|c| c == column)?;
        self.rows.get(row)?.get(idx)
    }

    /// Rows for which `filter` holds, as (row index, row) pairs.
    pub fn find_rows(&self, filter: impl Fn(&[Cell]) -> bool) -> Vec<(usize, &Vec<Cell>)> {
        self.rows.iter().enumerate().filter(|(_, r)| filter(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_is_header_only() {
        let r = Report::new("empty", &["a", "b"]);
        assert_eq!(r.to_csv(), "a,b\n");
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let mut r = Report::new("t", &["a", "b"]);
        assert!(matches!(
            r.push_row(vec![Cell::Int(1)]),
            Err(ReportError::RaggedRow { got: 1, expected: 2 })
        ));
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(format_float(0.5170004), "0.517");
        assert_eq!(format_float(1.0 / 3.0), "0.333333");
        assert_eq!(format_float(123456789.0), "123457000");
        assert_eq!(format_float(0.0001234567), "0.000123457");
        assert_eq!(format_float(-2.5), "-2.5");
        assert_eq!(format_float(f64::NAN), "nan");
    }

    #[test]
    fn csv_and_json_carry_identical_values() {
        let mut r = Report::new("probe", &["model", "acc", "count", "flagged"]);
        r.push_row(vec!["gcn".into(), 0.97654321.into(), 144usize.into(), false.into()])
            .unwrap();
        let csv = r.to_csv();
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        let row = &json["rows"][0];
        let mut lines = csv.lines();
        lines.next();
        let data: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(data[0], row["model"].as_str().unwrap());
        assert_eq!(data[1].parse::<f64>().unwrap(), row["acc"].as_f64().unwrap());
        assert_eq!(data[2].parse::<i64>().unwrap(), row["count"].as_i64().unwrap());
        assert_eq!(data[3].parse::<bool>().unwrap(), row["flagged"].as_bool().unwrap());
    }

    #[test]
    fn rerun_is_byte_identical() {
        let build = || {
            let mut r = Report::new("det", &["x", "y"]);
            r.push_row(vec![Cell::Float(0.1 + 0.2), Cell::Int(7)]).unwrap();
            r
        };
        assert_eq!(build().to_csv(), build().to_csv());
        assert_eq!(build().to_json(), build().to_json());
    }
}
