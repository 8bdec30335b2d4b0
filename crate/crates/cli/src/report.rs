use std::collections::BTreeMap;

use dsm_core::checks::BoundCheck;
use dsm_core::flow::full_precision;
use dsm_core::hilbert::ProblemInstance;
use serde::Serialize;
use serde_json::Value;

use crate::config::Kind;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Num(x) => full_precision(*x),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn markdown(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Num(x) if x.is_finite() => format!("{x:.5e}"),
            Cell::Num(x) => x.to_string(),
            Cell::Text(s) => s.replace('|', "\\|"),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Num)
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Cell::Int(n as i64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Text(if b { "pass" } else { "FAIL" }.to_string())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

/// Renders the report's table. Markdown uses 6 significant digits, CSV full precision.
pub fn emit_table(report: &RunReport, format: TableFormat) -> String {
    let t = &report.table;
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            out.push_str(&t.columns.join(","));
            out.push('\n');
            for row in &t.rows {
                let cells: Vec<String> = row.iter().map(Cell::csv).collect();
                out.push_str(&cells.join(","));
                out.push('\n');
            }
        }
        TableFormat::Markdown => {
            out.push_str(&format!("| {} |\n", t.columns.join(" | ")));
            out.push_str(&format!("|{}\n", "---|".repeat(t.columns.len())));
            for row in &t.rows {
                let cells: Vec<String> = row.iter().map(Cell::markdown).collect();
                out.push_str(&format!("| {} |\n", cells.join(" | ")));
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProblemSummary {
    pub name: String,
    pub dim: usize,
    pub data_norm: f64,
    pub known_solution_norm: Option<f64>,
    pub m2_bound: Option<f64>,
    pub is_linear: bool,
}

impl ProblemSummary {
    pub fn of(p: &ProblemInstance) -> Self {
        ProblemSummary {
            name: p.name().to_string(),
            dim: p.dim(),
            data_norm: p.data().norm(),
            known_solution_norm: p.known_solution().map(|y| y.norm()),
            m2_bound: p.m2_bound(),
            is_linear: p.is_linear(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub kind: String,
    pub config: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemSummary>,
    pub metrics: BTreeMap<String, Value>,
    pub checks: Vec<BoundCheck>,
    pub table: Table,
    pub artifacts: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub runs: Vec<RunReport>,
    pub all_passed: bool,
}

/// A CSV produced by a run, written next to `report.json`.
#[derive(Clone, Debug)]
pub struct Artifact {
    pub name: String,
    pub contents: Vec<u8>,
}

impl RunReport {
    pub fn new(kind: Kind, config: Value, problem: Option<&ProblemInstance>) -> Self {
        RunReport {
            kind: kind.to_string(),
            config,
            problem: problem.map(ProblemSummary::of),
            metrics: BTreeMap::new(),
            checks: Vec::new(),
            table: Table::default(),
            artifacts: Vec::new(),
            runs: Vec::new(),
            all_passed: true,
        }
    }

    pub fn metric(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.metrics.insert(key.to_string(), v);
    }

    pub fn check(&mut self, check: BoundCheck) {
        self.checks.push(check);
    }

    /// Sets `all_passed` from the checks and any nested runs.
    pub fn finish(mut self) -> Self {
        self.all_passed =
            self.checks.iter().all(|c| c.pass) && self.runs.iter().all(|r| r.all_passed);
        self
    }

    pub fn failed_checks(&self) -> Vec<String> {
        let mut out: Vec<String> = self.checks.iter().filter(|c| !c.pass).map(|c| c.id.clone()).collect();
        for (i, r) in self.runs.iter().enumerate() {
            out.extend(r.failed_checks().into_iter().map(|c| format!("run {i}: {c}")));
        }
        out
    }
}
