//! One run per value of a scalar config field, on a bounded pool of threads.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use toml::{Table, Value};

use crate::config::{from_table, parse_value, set_path, Experiment, Resolved};
use crate::error::{ConfigError, RunError};
use crate::formats::{write_table, Metrics};
use crate::runners::run;

/// Where a sweep axis lands in the config. The short names `lambda` and `N`
/// drive the in-run scan lists when the experiment scans them itself.
fn axis_target(experiment: Experiment, axis: &str) -> (String, bool) {
    match (axis, experiment) {
        ("lambda", Experiment::LandauSweep | Experiment::Fig3Endpoint) => ("scan.lambdas".into(), true),
        ("lambda", _) => ("task.lambda".into(), false),
        ("N", Experiment::Fig2Sinusoid | Experiment::Fig3Endpoint) => ("scan.widths".into(), true),
        ("N", _) => ("hyper.n".into(), false),
        ("kappa", _) => ("hyper.kappa".into(), false),
        ("T", _) => ("task.steps".into(), false),
        (other, _) => (other.to_string(), false),
    }
}

fn lookup<'t>(table: &'t Table, key: &str) -> Option<&'t Value> {
    let mut parts = key.split('.');
    let mut cur = table.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_table()?.get(p)?;
    }
    Some(cur)
}

/// Outcome of one sweep point.
#[derive(Debug)]
pub struct PointResult {
    pub value: String,
    pub dir: PathBuf,
    pub metrics: Metrics,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub merged: PathBuf,
    pub points: Vec<PointResult>,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| p.error.is_some()).count()
    }
}

#[derive(Serialize)]
struct MergedRow<'a> {
    axis: &'a str,
    value: &'a str,
    status: &'a str,
    metric: &'a str,
    metric_value: f64,
}

/// Prepares one table per value; errors here are configuration errors.
pub fn plan(resolved: &Resolved, axis: &str, values: &[String]) -> Result<Vec<(String, Table)>, ConfigError> {
    if values.is_empty() {
        return Err(ConfigError::Invalid("sweep needs at least one value".into()));
    }
    let (key, wrap) = axis_target(resolved.config.experiment, axis);
    if !wrap {
        match lookup(&resolved.table, &key) {
            None => return Err(ConfigError::Invalid(format!("unknown sweep axis {axis:?}"))),
            Some(Value::Table(_) | Value::Array(_)) => {
                return Err(ConfigError::Invalid(format!("sweep axis {axis:?} is not a scalar field")))
            }
            Some(_) => {}
        }
    }
    values
        .iter()
        .map(|v| {
            let mut t = resolved.table.clone();
            let parsed = parse_value(v);
            let value = if wrap { Value::Array(vec![parsed]) } else { parsed };
            set_path(&mut t, &key, value)?;
            from_table(&t)?;
            Ok((v.clone(), t))
        })
        .collect()
}

fn sort_key(v: &str) -> (u8, f64, String) {
    match v.parse::<f64>() {
        Ok(x) => (0, x, String::new()),
        Err(_) => (1, 0.0, v.to_string()),
    }
}

/// Runs every planned point with at most `parallel` concurrent workers and
/// writes `sweep.csv` under `out`. Failed points are recorded, not fatal.
pub fn sweep(
    planned: Vec<(String, Table)>,
    axis: &str,
    out: &Path,
    parallel: usize,
    verbose: bool,
) -> Result<SweepOutcome, RunError> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<PointResult>> = Mutex::new(Vec::new());
    let workers = parallel.clamp(1, planned.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((value, table)) = planned.get(i) else { break };
                let dir = out.join(format!("{axis}={value}"));
                let point = match from_table(table) {
                    Err(e) => PointResult { value: value.clone(), dir, metrics: Metrics::default(), error: Some(e.to_string()) },
                    Ok(cfg) => {
                        let o = run(&cfg, Some(&dir), verbose);
                        PointResult { value: value.clone(), dir: o.dir, metrics: o.metrics, error: o.error.map(|e| e.to_string()) }
                    }
                };
                if verbose {
                    let status = point.error.as_deref().unwrap_or("ok");
                    eprintln!("[sweep] {axis}={}: {status}", point.value);
                }
                results.lock().expect("no poisoned workers").push(point);
            });
        }
    });
    let mut points = results.into_inner().expect("no poisoned workers");
    points.sort_by(|a, b| {
        let (ka, kb) = (sort_key(&a.value), sort_key(&b.value));
        ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(ka.2.cmp(&kb.2))
    });
    let mut rows = Vec::new();
    for p in &points {
        let status = if p.error.is_some() { "failed" } else { "ok" };
        if p.metrics.0.is_empty() {
            rows.push(MergedRow { axis, value: &p.value, status, metric: "", metric_value: f64::NAN });
        }
        for m in &p.metrics.0 {
            rows.push(MergedRow { axis, value: &p.value, status, metric: &m.metric, metric_value: m.value });
        }
    }
    let merged = out.join("sweep.csv");
    write_table(&merged, &rows)?;
    Ok(SweepOutcome { merged, points })
}
