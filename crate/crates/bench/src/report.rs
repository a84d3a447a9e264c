//! Aggregation and CSV/JSON emission.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Algorithm;
use crate::run::RunRecord;
use crate::BenchError;

pub const RAW_HEADER: [&str; 9] =
    ["beta", "n_e", "n_i", "algorithm", "seed", "tv", "wall_time_ms", "solver_iterations", "converged"];
pub const SUMMARY_HEADER: [&str; 7] = ["beta", "n_e", "n_i", "algorithm", "mean_tv", "stderr_tv", "n"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Mean and standard error of TV over seeds for one `(beta, n_e, n_i, algorithm)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub beta: f64,
    pub n_e: usize,
    pub n_i: usize,
    pub algorithm: Algorithm,
    pub mean_tv: f64,
    pub stderr_tv: f64,
    pub n: usize,
}

/// Mean and `sample stddev / sqrt(n)`; a single value has standard error 0.
///
/// Values are summed in sorted order so the result does not depend on input order.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let mut sq: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
    sq.sort_by(f64::total_cmp);
    let var = sq.iter().sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct CellKey(u64, usize, usize, Algorithm);

fn beta_key(beta: f64) -> u64 {
    // Order-preserving for the non-negative betas a grid uses.
    beta.to_bits()
}

pub fn aggregate(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<CellKey, (f64, Vec<f64>)> = BTreeMap::new();
    for r in records {
        cells.entry(CellKey(beta_key(r.beta), r.n_e, r.n_i, r.algorithm)).or_insert((r.beta, Vec::new())).1.push(r.tv);
    }
    cells
        .into_iter()
        .map(|(CellKey(_, n_e, n_i, algorithm), (beta, tvs))| {
            let (mean_tv, stderr_tv) = mean_stderr(&tvs);
            SummaryRow { beta, n_e, n_i, algorithm, mean_tv, stderr_tv, n: tvs.len() }
        })
        .collect()
}

/// At most 10 significant digits, in the shortest form that reads back to the same value.
pub fn format_real(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.9e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

fn raw_row(r: &RunRecord) -> [String; 9] {
    [
        format_real(r.beta),
        r.n_e.to_string(),
        r.n_i.to_string(),
        r.algorithm.to_string(),
        r.seed.to_string(),
        format_real(r.tv),
        format_real(r.wall_time_ms),
        r.solver_iterations.to_string(),
        r.converged.to_string(),
    ]
}

fn summary_row(s: &SummaryRow) -> [String; 7] {
    [
        format_real(s.beta),
        s.n_e.to_string(),
        s.n_i.to_string(),
        s.algorithm.to_string(),
        format_real(s.mean_tv),
        format_real(s.stderr_tv),
        s.n.to_string(),
    ]
}

fn write_csv<const N: usize>(out: impl Write, header: [&str; N], rows: impl Iterator<Item = [String; N]>) -> Result<(), BenchError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn write_json<const N: usize>(mut out: impl Write, header: [&str; N], rows: impl Iterator<Item = [String; N]>) -> Result<(), BenchError> {
    let mut objects = Vec::new();
    for row in rows {
        let mut obj = serde_json::Map::new();
        for (key, value) in header.iter().zip(row) {
            // Numbers and booleans keep their CSV spelling; only the algorithm is a string.
            let v = serde_json::from_str(&value).unwrap_or(serde_json::Value::String(value));
            obj.insert((*key).to_string(), v);
        }
        objects.push(serde_json::Value::Object(obj));
    }
    serde_json::to_writer_pretty(&mut out, &objects).map_err(|e| BenchError::Parse(e.to_string()))?;
    out.write_all(b"\n").map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_records(out: impl Write, records: &[RunRecord], format: Format) -> Result<(), BenchError> {
    match format {
        Format::Csv => write_csv(out, RAW_HEADER, records.iter().map(raw_row)),
        Format::Json => write_json(out, RAW_HEADER, records.iter().map(raw_row)),
    }
}

pub fn write_summary(out: impl Write, rows: &[SummaryRow], format: Format) -> Result<(), BenchError> {
    match format {
        Format::Csv => write_csv(out, SUMMARY_HEADER, rows.iter().map(summary_row)),
        Format::Json => write_json(out, SUMMARY_HEADER, rows.iter().map(summary_row)),
    }
}

fn read_csv<T: serde::de::DeserializeOwned, const N: usize>(input: impl Read, header: [&str; N]) -> Result<Vec<T>, BenchError> {
    let mut r = csv::Reader::from_reader(input);
    let found = r.headers()?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(BenchError::Parse(format!("unexpected header `{}`", found.iter().collect::<Vec<_>>().join(","))));
    }
    r.deserialize().map(|row| row.map_err(BenchError::from)).collect()
}

pub fn read_records(input: impl Read) -> Result<Vec<RunRecord>, BenchError> {
    let records: Vec<RunRecord> = read_csv(input, RAW_HEADER)?;
    if let Some(r) = records.iter().find(|r| !(0.0..=1.0).contains(&r.tv)) {
        return Err(BenchError::Parse(format!("tv {} outside [0, 1]", r.tv)));
    }
    Ok(records)
}

pub fn read_summary(input: impl Read) -> Result<Vec<SummaryRow>, BenchError> {
    read_csv(input, SUMMARY_HEADER)
}

/// Creates `path` and hands a buffered writer to `f`.
pub fn write_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<(), BenchError>) -> Result<(), BenchError> {
    let file = std::fs::File::create(path).map_err(|e| BenchError::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    f(&mut out)?;
    out.flush().map_err(|e| BenchError::io(path, e))
}

pub fn open_file(path: &Path) -> Result<std::io::BufReader<std::fs::File>, BenchError> {
    std::fs::File::open(path).map(std::io::BufReader::new).map_err(|e| BenchError::io(path, e))
}
