//! Run and aggregate CSV files.
//!
//! Run CSV header, one row per epoch:
//!
//! ```text
//! method,task,n,seed,epoch,success_rate,tsb,isb,critic_loss,seconds
//! ```
//!
//! `tsb`/`isb` are empty when the epoch had no successful evaluation episode,
//! `critic_loss` is empty before the first gradient step and `seconds` is
//! empty when wall-clock recording is off. Floats use the shortest
//! representation that round-trips.
//!
//! Aggregate CSV header, one row per `(method, task, n, epoch)`:
//!
//! ```text
//! method,task,n,epoch,runs,success_rate_mean,success_rate_std,tsb_mean,tsb_std,tsb_runs,
//! isb_mean,isb_std,isb_runs,critic_loss_mean,critic_loss_std
//! ```
//!
//! Means and sample standard deviations (`n - 1` denominator, 0 for a single
//! run) are taken over the runs that have a value.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 10] = [
    "method",
    "task",
    "n",
    "seed",
    "epoch",
    "success_rate",
    "tsb",
    "isb",
    "critic_loss",
    "seconds",
];

pub const AGGREGATE_HEADER: [&str; 15] = [
    "method",
    "task",
    "n",
    "epoch",
    "runs",
    "success_rate_mean",
    "success_rate_std",
    "tsb_mean",
    "tsb_std",
    "tsb_runs",
    "isb_mean",
    "isb_std",
    "isb_runs",
    "critic_loss_mean",
    "critic_loss_std",
];

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub task: String,
    pub n: usize,
    pub seed: u64,
    pub epoch: usize,
    pub success_rate: f64,
    pub tsb: Option<f64>,
    pub isb: Option<f64>,
    pub critic_loss: Option<f64>,
    pub seconds: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    format_err(path, e.to_string())
}

impl MetricsRow {
    fn record(&self) -> [String; 10] {
        [
            self.method.clone(),
            self.task.clone(),
            self.n.to_string(),
            self.seed.to_string(),
            self.epoch.to_string(),
            self.success_rate.to_string(),
            opt(self.tsb),
            opt(self.isb),
            opt(self.critic_loss),
            opt(self.seconds),
        ]
    }
}

/// Appends rows to a run CSV, flushing after each.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
    path: std::path::PathBuf,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(File::create(path)?);
        inner.write_record(METRICS_HEADER).map_err(|e| csv_err(path, e))?;
        inner.flush()?;
        Ok(MetricsWriter {
            inner,
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner
            .write_record(row.record())
            .map_err(|e| csv_err(&self.path, e))?;
        self.inner.flush()?;
        Ok(())
    }
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, name: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| format_err(path, format!("line {line}: bad {name} value {v:?}")))
}

fn opt_field(path: &Path, line: u64, name: &str, v: &str) -> Result<Option<f64>> {
    if v.is_empty() {
        Ok(None)
    } else {
        field(path, line, name, v).map(Some)
    }
}

/// Reads a run CSV, checking the header exactly.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let file = File::open(path).map_err(|e| format_err(path, e.to_string()))?;
    let mut reader = csv::Reader::from_reader(file);
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(format_err(
            path,
            format!(
                "header {:?} does not match {}",
                header.iter().collect::<Vec<_>>().join(","),
                METRICS_HEADER.join(",")
            ),
        ));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let f = |i: usize| &rec[i];
        rows.push(MetricsRow {
            method: f(0).to_string(),
            task: f(1).to_string(),
            n: field(path, line, "n", f(2))?,
            seed: field(path, line, "seed", f(3))?,
            epoch: field(path, line, "epoch", f(4))?,
            success_rate: field(path, line, "success_rate", f(5))?,
            tsb: opt_field(path, line, "tsb", f(6))?,
            isb: opt_field(path, line, "isb", f(7))?,
            critic_loss: opt_field(path, line, "critic_loss", f(8))?,
            seconds: opt_field(path, line, "seconds", f(9))?,
        });
    }
    Ok(rows)
}

/// Mean and sample standard deviation; `None` for no values.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    let k = values.len();
    if k == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    let std = if k < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
    };
    Some((mean, std))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub method: String,
    pub task: String,
    pub n: usize,
    pub epoch: usize,
    pub runs: usize,
    pub success_rate: (f64, f64),
    pub tsb: Option<(f64, f64)>,
    pub tsb_runs: usize,
    pub isb: Option<(f64, f64)>,
    pub isb_runs: usize,
    pub critic_loss: Option<(f64, f64)>,
}

/// Groups rows from any number of runs by `(method, task, n, epoch)`.
pub fn aggregate(runs: &[&[MetricsRow]]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, String, usize, usize), Vec<&MetricsRow>> = BTreeMap::new();
    for row in runs.iter().flat_map(|r| r.iter()) {
        groups
            .entry((row.method.clone(), row.task.clone(), row.n, row.epoch))
            .or_default()
            .push(row);
    }
    groups
        .into_iter()
        .map(|((method, task, n, epoch), rows)| {
            let pick = |f: fn(&MetricsRow) -> Option<f64>| rows.iter().filter_map(|r| f(r)).collect::<Vec<_>>();
            let tsb = pick(|r| r.tsb);
            let isb = pick(|r| r.isb);
            let success: Vec<f64> = rows.iter().map(|r| r.success_rate).collect();
            AggregateRow {
                method,
                task,
                n,
                epoch,
                runs: rows.len(),
                success_rate: mean_std(&success).expect("group is nonempty"),
                tsb: mean_std(&tsb),
                tsb_runs: tsb.len(),
                isb: mean_std(&isb),
                isb_runs: isb.len(),
                critic_loss: mean_std(&pick(|r| r.critic_loss)),
            }
        })
        .collect()
}

pub fn write_aggregate(path: &Path, runs: &[&[MetricsRow]]) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(AGGREGATE_HEADER).map_err(|e| csv_err(path, e))?;
    let pair = |v: Option<(f64, f64)>| match v {
        Some((m, s)) => [m.to_string(), s.to_string()],
        None => [String::new(), String::new()],
    };
    for row in aggregate(runs) {
        let [sm, ss] = pair(Some(row.success_rate));
        let [tm, ts] = pair(row.tsb);
        let [im, is] = pair(row.isb);
        let [lm, ls] = pair(row.critic_loss);
        w.write_record([
            row.method,
            row.task,
            row.n.to_string(),
            row.epoch.to_string(),
            row.runs.to_string(),
            sm,
            ss,
            tm,
            ts,
            row.tsb_runs.to_string(),
            im,
            is,
            row.isb_runs.to_string(),
            lm,
            ls,
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Aggregates run CSV files into `out`.
pub fn aggregate_files(inputs: &[&Path], out: &Path) -> Result<()> {
    let runs = inputs.iter().map(|p| read_metrics(p)).collect::<Result<Vec<_>>>()?;
    let views: Vec<&[MetricsRow]> = runs.iter().map(|r| r.as_slice()).collect();
    write_aggregate(out, &views)
}

/// Final-epoch summary of one `(task, method, n)` group.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub task: String,
    pub method: String,
    pub n: usize,
    pub runs: usize,
    pub epoch: usize,
    pub success_rate: f64,
    /// Mean over runs of `|TSB|`, over the runs where it exists.
    pub abs_tsb: Option<f64>,
    pub abs_isb: Option<f64>,
    pub best_success: bool,
    pub best_tsb: bool,
    pub best_isb: bool,
}

/// Compares runs by their last epoch. Each run contributes its own final
/// row; groups are sorted by task, then method, then `n`. Within a task the
/// highest success and the smallest `|TSB|` and `|ISB|` are flagged, ties
/// included.
pub fn compare(paths: &[&Path]) -> Result<Vec<ComparisonRow>> {
    let mut groups: BTreeMap<(String, String, usize), Vec<MetricsRow>> = BTreeMap::new();
    for path in paths {
        let rows = read_metrics(path)?;
        let mut by_seed: BTreeMap<(String, String, usize, u64), MetricsRow> = BTreeMap::new();
        for row in rows {
            let key = (row.task.clone(), row.method.clone(), row.n, row.seed);
            match by_seed.get(&key) {
                Some(prev) if prev.epoch >= row.epoch => {}
                _ => {
                    by_seed.insert(key, row);
                }
            }
        }
        if by_seed.is_empty() {
            return Err(format_err(path, "no metric rows"));
        }
        for ((task, method, n, _), row) in by_seed {
            groups.entry((task, method, n)).or_default().push(row);
        }
    }
    let mut out: Vec<ComparisonRow> = groups
        .into_iter()
        .map(|((task, method, n), rows)| {
            let abs_mean = |f: fn(&MetricsRow) -> Option<f64>| {
                let v: Vec<f64> = rows.iter().filter_map(|r| f(r).map(f64::abs)).collect();
                mean_std(&v).map(|(m, _)| m)
            };
            ComparisonRow {
                task,
                method,
                n,
                runs: rows.len(),
                epoch: rows.iter().map(|r| r.epoch).max().unwrap_or(0),
                success_rate: rows.iter().map(|r| r.success_rate).sum::<f64>() / rows.len() as f64,
                abs_tsb: abs_mean(|r| r.tsb),
                abs_isb: abs_mean(|r| r.isb),
                best_success: false,
                best_tsb: false,
                best_isb: false,
            }
        })
        .collect();

    let tasks: Vec<String> = out.iter().map(|r| r.task.clone()).collect();
    for task in tasks {
        let idx: Vec<usize> = (0..out.len()).filter(|&i| out[i].task == task).collect();
        let best_success = idx
            .iter()
            .map(|&i| out[i].success_rate)
            .fold(f64::NEG_INFINITY, f64::max);
        let min_of = |f: &dyn Fn(&ComparisonRow) -> Option<f64>| {
            idx.iter().filter_map(|&i| f(&out[i])).fold(f64::INFINITY, f64::min)
        };
        let best_tsb = min_of(&|r| r.abs_tsb);
        let best_isb = min_of(&|r| r.abs_isb);
        for &i in &idx {
            let r = &mut out[i];
            r.best_success = r.success_rate == best_success;
            r.best_tsb = r.abs_tsb == Some(best_tsb);
            r.best_isb = r.abs_isb == Some(best_isb);
        }
    }
    Ok(out)
}

/// Fixed-width text table; `*` marks the per-task best.
pub fn render_table(rows: &[ComparisonRow]) -> String {
    let cell = |v: Option<f64>, best: bool| match v {
        Some(x) => format!("{x:.4}{}", if best { "*" } else { "" }),
        None => "-".to_string(),
    };
    let mut out = format!(
        "{:<10} {:<14} {:>3} {:>4} {:>5} {:>10} {:>10} {:>10}\n",
        "task", "method", "n", "runs", "epoch", "success", "|tsb|", "|isb|"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<10} {:<14} {:>3} {:>4} {:>5} {:>10} {:>10} {:>10}\n",
            r.task,
            r.method,
            r.n,
            r.runs,
            r.epoch,
            cell(Some(r.success_rate), r.best_success),
            cell(r.abs_tsb, r.best_tsb),
            cell(r.abs_isb, r.best_isb),
        ));
    }
    out
}
