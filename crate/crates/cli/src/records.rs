//! CSV and JSON Lines persistence of perturbation records.
//!
//! CSV columns, header mandatory:
//! `sample_id, solver_tag, loss, metric, eps, objective_or_radius,
//! violation, stationarity, attack_success, sparsity, iterations,
//! wall_time_ms`. Missing values (`stationarity` for PGD, `sparsity` for an
//! unchanged input, `wall_time_ms` without `--timings`) are empty fields.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use pwcf::attacks::{PerturbationRecord, SolverTag};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CSV_COLUMNS: [&str; 12] = [
    "sample_id",
    "solver_tag",
    "loss",
    "metric",
    "eps",
    "objective_or_radius",
    "violation",
    "stationarity",
    "attack_success",
    "sparsity",
    "iterations",
    "wall_time_ms",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub sample_id: usize,
    pub solver_tag: SolverTag,
    pub loss: String,
    pub metric: String,
    pub eps: f64,
    pub objective_or_radius: f64,
    pub violation: f64,
    pub stationarity: Option<f64>,
    pub attack_success: bool,
    pub sparsity: Option<f64>,
    pub iterations: usize,
    pub wall_time_ms: Option<f64>,
}

impl CsvRow {
    pub fn from_record(r: &PerturbationRecord, timings: bool) -> Self {
        Self {
            sample_id: r.sample_id,
            solver_tag: r.solver_tag,
            loss: r.loss.clone(),
            metric: r.metric.clone(),
            eps: r.eps,
            objective_or_radius: r.objective_or_radius,
            violation: r.violation,
            stationarity: r.stationarity,
            attack_success: r.attack_success,
            sparsity: r.sparsity,
            iterations: r.iterations,
            wall_time_ms: timings.then_some(r.wall_time_ms),
        }
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Output file stem for the records of one `(solver, loss, metric)` group.
pub fn csv_name(kind: &str, r: &PerturbationRecord) -> String {
    format!("{kind}_{}_{}_{}.csv", r.solver_tag, r.loss, r.metric)
}

/// Groups records by `(solver, loss, metric)` in first-seen order.
pub fn group_for_csv<'a>(kind: &str, records: &'a [PerturbationRecord]) -> Vec<(String, Vec<&'a PerturbationRecord>)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<&PerturbationRecord>> = BTreeMap::new();
    for r in records {
        let name = csv_name(kind, r);
        if !groups.contains_key(&name) {
            order.push(name.clone());
        }
        groups.entry(name).or_default().push(r);
    }
    order
        .into_iter()
        .map(|n| {
            let g = groups.remove(&n).unwrap_or_default();
            (n, g)
        })
        .collect()
}

pub fn write_csv<W: Write>(out: W, rows: impl IntoIterator<Item = CsvRow>) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(path: &Path, rows: impl IntoIterator<Item = CsvRow>) -> Result<(), CliError> {
    let file = std::fs::File::create(path).map_err(|e| io_error(path, e))?;
    write_csv(std::io::BufWriter::new(file), rows).map_err(|e| io_error(path, e))
}

/// Parses a record CSV, rejecting any header other than [`CSV_COLUMNS`].
pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<CsvRow>, csv::Error> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(CSV_COLUMNS) {
        return Err(csv::Error::from(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        )));
    }
    r.deserialize().collect()
}

pub fn read_csv_file(path: &Path) -> Result<Vec<CsvRow>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| io_error(path, e))?;
    read_csv(file).map_err(|e| io_error(path, e))
}

pub fn write_jsonl(path: &Path, records: &[PerturbationRecord]) -> Result<(), CliError> {
    let file = std::fs::File::create(path).map_err(|e| io_error(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| io_error(path, e))?;
        w.write_all(b"\n").map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<PerturbationRecord>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| io_error(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_error(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| io_error(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(tag: SolverTag, stationarity: Option<f64>) -> CsvRow {
        CsvRow {
            sample_id: 3,
            solver_tag: tag,
            loss: "margin".into(),
            metric: "l1.5".into(),
            eps: 0.1,
            objective_or_radius: -0.123456789012345,
            violation: 0.0,
            stationarity,
            attack_success: false,
            sparsity: None,
            iterations: 17,
            wall_time_ms: None,
        }
    }

    #[test]
    fn header_and_empty_fields() {
        let mut buf = Vec::new();
        write_csv(&mut buf, [row(SolverTag::Pgd, None)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(
            lines.next().unwrap(),
            "3,pgd,margin,l1.5,0.1,-0.123456789012345,0.0,,false,,17,"
        );
    }

    #[test]
    fn rows_round_trip() {
        let rows = vec![row(SolverTag::Pgd, None), row(SolverTag::Pwcf, Some(1e-7))];
        let mut buf = Vec::new();
        write_csv(&mut buf, rows.clone()).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn wrong_header_is_rejected() {
        assert!(read_csv("sample_id,loss\n1,ce\n".as_bytes()).is_err());
    }
}
