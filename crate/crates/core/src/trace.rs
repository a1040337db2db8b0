//! Per-round traces, their CSV form, key-value summaries and aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::Vector;

/// Everything recorded for one algorithm on one seed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AlgorithmTrace {
    pub name: String,
    pub losses: Vec<f64>,
    /// Cumulative regret against the generating parameters.
    pub regret: Option<Vec<f64>>,
    /// Expert weights after each round.
    pub weights: Option<Vec<Vec<f64>>>,
    /// Relative error of the learned dynamics parameter.
    pub alpha_error: Option<Vec<f64>>,
    pub predictions: Vec<(usize, Vector)>,
    pub complete: bool,
    pub error: Option<String>,
}

impl AlgorithmTrace {
    pub fn new(name: impl Into<String>, losses: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            losses,
            complete: true,
            ..Default::default()
        }
    }

    pub fn header(&self) -> Vec<String> {
        let mut cols = vec!["t".to_string(), "loss".to_string()];
        if self.regret.is_some() {
            cols.push("regret".into());
        }
        if let Some(w) = &self.weights {
            let n = w.first().map_or(0, Vec::len);
            cols.extend((0..n).map(|i| format!("w_{i}")));
        }
        if self.alpha_error.is_some() {
            cols.push("alpha_error".into());
        }
        cols
    }

    /// CSV text: one header line, one row per round, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = self.header().join(",");
        out.push('\n');
        for (i, loss) in self.losses.iter().enumerate() {
            let _ = write!(out, "{},{}", i + 1, fmt_f64(*loss));
            if let Some(r) = &self.regret {
                let _ = write!(out, ",{}", fmt_f64(r[i]));
            }
            if let Some(w) = &self.weights {
                for v in &w[i] {
                    let _ = write!(out, ",{}", fmt_f64(*v));
                }
            }
            if let Some(a) = &self.alpha_error {
                let _ = write!(out, ",{}", fmt_f64(a[i]));
            }
            out.push('\n');
        }
        out
    }

    /// Decimated predictions as CSV, `t,theta_0,...`.
    pub fn predictions_csv(&self) -> Option<String> {
        let first = self.predictions.first()?;
        let mut out = String::from("t");
        for k in 0..first.1.len() {
            let _ = write!(out, ",theta_{k}");
        }
        out.push('\n');
        for (t, theta) in &self.predictions {
            let _ = write!(out, "{t}");
            for v in theta.iter() {
                let _ = write!(out, ",{}", fmt_f64(*v));
            }
            out.push('\n');
        }
        Some(out)
    }
}

/// Lossless rendering of a float.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Traces of one experiment on one seed plus experiment-specific statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentBundle {
    pub experiment: String,
    pub seed: u64,
    pub traces: Vec<AlgorithmTrace>,
    /// Named inclusive round ranges used for interval means.
    pub intervals: Vec<(String, [usize; 2])>,
    pub summary: Vec<(String, f64)>,
}

impl ExperimentBundle {
    pub fn trace(&self, name: &str) -> Option<&AlgorithmTrace> {
        self.traces.iter().find(|t| t.name == name)
    }

    pub fn stat(&self, key: &str) -> Option<f64> {
        self.summary.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn is_complete(&self) -> bool {
        self.traces.iter().all(|t| t.complete)
    }
}

/// A parsed trace file.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceTable {
    pub algorithm: String,
    pub seed: Option<u64>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TraceTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }
}

/// `(experiment, seed, algorithm)` from `<exp>_seed<k>_<alg>.csv`.
pub fn parse_trace_name(path: &Path) -> Option<(String, u64, String)> {
    let stem = path.file_stem()?.to_str()?;
    let (exp, rest) = stem.split_once("_seed")?;
    let (seed, alg) = rest.split_once('_')?;
    Some((exp.to_string(), seed.parse().ok()?, alg.to_string()))
}

pub fn trace_file_name(experiment: &str, seed: u64, algorithm: &str) -> String {
    format!("{experiment}_seed{seed}_{algorithm}.csv")
}

pub fn parse_trace(text: &str, algorithm: &str, seed: Option<u64>) -> Result<TraceTable> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::input("trace file is empty"))?;
    let columns: Vec<String> = header.split(',').map(str::to_string).collect();
    if columns.len() < 2 || columns[0] != "t" || columns[1] != "loss" {
        return Err(Error::input(format!("trace header must start with t,loss: {header}")));
    }
    let mut rows = Vec::new();
    let mut last_t = 0.0;
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::input(format!("line {}: {e}", i + 2)))?;
        if row.len() != columns.len() {
            return Err(Error::input(format!(
                "line {} has {} fields, header has {}",
                i + 2,
                row.len(),
                columns.len()
            )));
        }
        if row[0] <= last_t {
            return Err(Error::input(format!("line {}: t is not increasing", i + 2)));
        }
        last_t = row[0];
        rows.push(row);
    }
    Ok(TraceTable {
        algorithm: algorithm.to_string(),
        seed,
        columns,
        rows,
    })
}

pub fn read_trace(path: &Path) -> Result<TraceTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    let (alg, seed) = match parse_trace_name(path) {
        Some((_, seed, alg)) => (alg, Some(seed)),
        None => (
            path.file_stem().and_then(|s| s.to_str()).unwrap_or("trace").to_string(),
            None,
        ),
    };
    parse_trace(&text, &alg, seed)
}

/// Writes `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::input(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| Error::input(format!("{}: {e}", path.display())))
}

/// Statistics shared by the run summary and [`summarize`].
#[derive(Clone, Debug, PartialEq)]
pub struct TraceStats {
    pub rounds: usize,
    pub mean_loss: f64,
    pub final_regret: Option<f64>,
    pub interval_means: Vec<(String, f64)>,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Mean of `losses` over the 1-based inclusive range, clipped to the data.
pub fn interval_mean(losses: &[f64], range: [usize; 2]) -> f64 {
    let lo = range[0].max(1);
    let hi = range[1].min(losses.len());
    if lo > hi {
        return f64::NAN;
    }
    mean(&losses[lo - 1..hi])
}

pub fn trace_stats(losses: &[f64], regret: Option<&[f64]>, intervals: &[(String, [usize; 2])]) -> TraceStats {
    TraceStats {
        rounds: losses.len(),
        mean_loss: mean(losses),
        final_regret: regret.and_then(|r| r.last().copied()),
        interval_means: intervals
            .iter()
            .map(|(name, range)| (name.clone(), interval_mean(losses, *range)))
            .collect(),
    }
}

fn push_stats(out: &mut Vec<(String, f64)>, prefix: &str, s: &TraceStats) {
    out.push((format!("{prefix}.rounds"), s.rounds as f64));
    out.push((format!("{prefix}.mean_loss"), s.mean_loss));
    if let Some(r) = s.final_regret {
        out.push((format!("{prefix}.final_regret"), r));
    }
    for (name, v) in &s.interval_means {
        out.push((format!("{prefix}.mean_loss.{name}"), *v));
    }
}

/// Key-value summary of a multi-seed run. Per-trace statistics use the keys
/// `seed<k>.<alg>.*`; experiment statistics use `seed<k>.*` and their seed
/// means `mean.*`.
pub fn render_summary(experiment: &str, bundles: &[ExperimentBundle]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "experiment = {experiment}");
    let _ = writeln!(out, "seeds = {}", bundles.len());
    if let Some(b) = bundles.first() {
        for (name, [s, e]) in &b.intervals {
            let _ = writeln!(out, "interval.{name} = {s}..{e}");
        }
    }
    let mut sums: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for b in bundles {
        let _ = writeln!(out, "seed{}.complete = {}", b.seed, b.is_complete());
        let mut entries = Vec::new();
        for t in &b.traces {
            let stats = trace_stats(&t.losses, t.regret.as_deref(), &b.intervals);
            push_stats(&mut entries, &t.name, &stats);
        }
        entries.extend(b.summary.iter().cloned());
        for (k, v) in entries {
            let _ = writeln!(out, "seed{}.{k} = {}", b.seed, fmt_f64(v));
            sums.entry(k).or_default().push(v);
        }
    }
    for (k, vs) in sums {
        let _ = writeln!(out, "mean.{k} = {}", fmt_f64(mean(&vs)));
    }
    out
}

/// `key = value` lines.
pub fn parse_summary(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.split_once(" = ")
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::input(format!("summary line {} is not `key = value`", i + 1)))
        })
        .collect()
}

/// One row of the aggregate table.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub algorithm: String,
    pub files: usize,
    pub mean_loss: f64,
    /// Standard deviation of per-file mean losses.
    pub mean_loss_std: f64,
    pub interval_means: Vec<(String, f64)>,
    /// `(T, mean R_T / sqrt(T))` checkpoints, when regret was recorded.
    pub regret_sqrt_t: Vec<(usize, f64)>,
}

/// Groups trace files by algorithm and averages their statistics.
pub fn summarize(paths: &[PathBuf], intervals: &[(String, [usize; 2])]) -> Result<Vec<AggregateRow>> {
    let mut groups: BTreeMap<String, Vec<TraceTable>> = BTreeMap::new();
    for p in paths {
        let table = read_trace(p)?;
        groups.entry(table.algorithm.clone()).or_default().push(table);
    }
    let mut rows = Vec::new();
    for (alg, tables) in groups {
        if tables.iter().any(|t| t.columns != tables[0].columns) {
            return Err(Error::input(format!("trace files for {alg} have different columns")));
        }
        let per_file: Vec<TraceStats> = tables
            .iter()
            .map(|t| {
                let losses = t.column("loss").unwrap_or_default();
                let regret = t.column("regret");
                trace_stats(&losses, regret.as_deref(), intervals)
            })
            .collect();
        let means: Vec<f64> = per_file.iter().map(|s| s.mean_loss).collect();
        let interval_means = intervals
            .iter()
            .enumerate()
            .map(|(i, (name, _))| {
                let vs: Vec<f64> = per_file.iter().map(|s| s.interval_means[i].1).collect();
                (name.clone(), mean(&vs))
            })
            .collect();
        let mut regret_sqrt_t = Vec::new();
        if tables[0].columns.iter().any(|c| c == "regret") {
            let len = tables.iter().map(|t| t.rows.len()).min().unwrap_or(0);
            let mut checkpoint = 1;
            while checkpoint <= len {
                let vs: Vec<f64> = tables
                    .iter()
                    .map(|t| t.column("regret").expect("checked")[checkpoint - 1] / (checkpoint as f64).sqrt())
                    .collect();
                regret_sqrt_t.push((checkpoint, mean(&vs)));
                if checkpoint == len {
                    break;
                }
                checkpoint = (checkpoint * 2).min(len);
            }
        }
        rows.push(AggregateRow {
            algorithm: alg,
            files: tables.len(),
            mean_loss: mean(&means),
            mean_loss_std: std_dev(&means),
            interval_means,
            regret_sqrt_t,
        });
    }
    Ok(rows)
}

/// Plain-text rendering of [`summarize`] output.
pub fn render_table(rows: &[AggregateRow]) -> String {
    if rows.is_empty() {
        return "no trace files\n".to_string();
    }
    let mut out = String::new();
    for r in rows {
        let _ = writeln!(out, "{}.files = {}", r.algorithm, r.files);
        let _ = writeln!(out, "{}.mean_loss = {}", r.algorithm, fmt_f64(r.mean_loss));
        let _ = writeln!(out, "{}.mean_loss_std = {}", r.algorithm, fmt_f64(r.mean_loss_std));
        for (name, v) in &r.interval_means {
            let _ = writeln!(out, "{}.mean_loss.{name} = {}", r.algorithm, fmt_f64(*v));
        }
        for (t, v) in &r.regret_sqrt_t {
            let _ = writeln!(out, "{}.regret_over_sqrt_t.{t} = {}", r.algorithm, fmt_f64(*v));
        }
    }
    out
}
