//! On-disk formats: kernel CSV with a JSON sidecar, saddle checkpoints, run
//! manifests and metric tables. Every file is written atomically.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use kmft_core::linalg::Mat;
use kmft_core::nonlinear_mft::SaddleState;
use kmft_core::{Kernel, TimeRange};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{IoContext, RunError};

/// Writes to a temporary sibling and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).at(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).at(&tmp)?;
        f.write_all(bytes).at(&tmp)?;
        f.sync_all().at(&tmp)?;
    }
    fs::rename(&tmp, path).at(path)
}

/// Metadata stored next to every kernel CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMeta {
    pub range: TimeRange,
    pub steps: usize,
    pub patterns: usize,
    pub times: Vec<usize>,
    /// Supervised output times of the task the kernel belongs to, if any.
    #[serde(default)]
    pub supervised: Vec<usize>,
    /// What produced the kernel.
    pub provenance: String,
}

fn header(k: &Kernel) -> String {
    let times: Vec<String> = k.times().iter().map(|t| t.to_string()).collect();
    format!("# range={} steps={} patterns={} times={}", k.range().name(), k.steps(), k.patterns(), times.join(";"))
}

/// Dense row-major CSV; the first line names the range, T, P and the time labels.
pub fn kernel_csv(k: &Kernel) -> String {
    let m = k.data();
    let mut out = header(k);
    out.push('\n');
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:e}", m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Writes `<stem>.csv` and `<stem>.json` under `dir`; returns the CSV path.
pub fn write_kernel(
    dir: &Path,
    stem: &str,
    k: &Kernel,
    supervised: &[usize],
    provenance: &str,
) -> Result<PathBuf, RunError> {
    let csv = dir.join(format!("{stem}.csv"));
    atomic_write(&csv, kernel_csv(k).as_bytes())?;
    let meta = KernelMeta {
        range: k.range(),
        steps: k.steps(),
        patterns: k.patterns(),
        times: k.times().to_vec(),
        supervised: supervised.to_vec(),
        provenance: provenance.to_string(),
    };
    atomic_write(&dir.join(format!("{stem}.json")), &serde_json::to_vec_pretty(&meta)?)?;
    Ok(csv)
}

fn parse_range(s: &str) -> Option<TimeRange> {
    match s {
        "input" => Some(TimeRange::Input),
        "hidden" => Some(TimeRange::Hidden),
        "output" => Some(TimeRange::Output),
        _ => None,
    }
}

/// Parses the CSV format of [`kernel_csv`].
pub fn parse_kernel(text: &str, origin: &Path) -> Result<Kernel, RunError> {
    let bad = |msg: &str| RunError::Format(origin.to_path_buf(), msg.to_string());
    let mut lines = text.lines();
    let head = lines.next().and_then(|l| l.strip_prefix('#')).ok_or_else(|| bad("missing header"))?;
    let (mut range, mut steps, mut patterns, mut times) = (None, None, None, None);
    for field in head.split_whitespace() {
        let (k, v) = field.split_once('=').ok_or_else(|| bad("malformed header"))?;
        match k {
            "range" => range = parse_range(v),
            "steps" => steps = v.parse::<usize>().ok(),
            "patterns" => patterns = v.parse::<usize>().ok(),
            "times" => {
                times = v.split(';').filter(|s| !s.is_empty()).map(|s| s.parse::<usize>().ok()).collect::<Option<Vec<_>>>()
            }
            _ => return Err(bad("unknown header field")),
        }
    }
    let (range, steps, patterns, times) = match (range, steps, patterns, times) {
        (Some(r), Some(s), Some(p), Some(t)) => (r, s, p, t),
        _ => return Err(bad("incomplete header")),
    };
    let mut vals = Vec::new();
    let mut rows = 0;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        for v in line.split(',') {
            vals.push(v.trim().parse::<f64>().map_err(|_| bad("non-numeric entry"))?);
        }
        rows += 1;
    }
    if rows * rows != vals.len() {
        return Err(bad("matrix is not square"));
    }
    let data = Mat::from_row_slice(rows, rows, &vals);
    Ok(Kernel::on_times(steps, range, times, patterns, data)?)
}

pub fn read_kernel(path: &Path) -> Result<Kernel, RunError> {
    let text = fs::read_to_string(path).at(path)?;
    parse_kernel(&text, path)
}

/// Scalars of a saddle checkpoint; the kernels sit next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub iteration: usize,
    pub seed: u64,
    pub eta: f64,
    pub residual: f64,
}

/// Stores C and C̃ as `<tag>_c` / `<tag>_ct` kernels plus `<tag>.json`.
pub fn save_checkpoint(dir: &Path, tag: &str, state: &SaddleState, seed: u64) -> Result<(), RunError> {
    write_kernel(dir, &format!("{tag}_c"), &state.c, &[], "saddle checkpoint C")?;
    write_kernel(dir, &format!("{tag}_ct"), &state.c_tilde, &[], "saddle checkpoint C_tilde")?;
    let meta = CheckpointMeta { iteration: state.iteration, seed, eta: state.eta, residual: state.residual };
    atomic_write(&dir.join(format!("{tag}.json")), &serde_json::to_vec_pretty(&meta)?)
}

/// The checkpoint under `tag`, if one exists and was written with `seed`.
pub fn load_checkpoint(dir: &Path, tag: &str, seed: u64) -> Result<Option<SaddleState>, RunError> {
    let meta_path = dir.join(format!("{tag}.json"));
    if !meta_path.exists() {
        return Ok(None);
    }
    let meta: CheckpointMeta = serde_json::from_slice(&fs::read(&meta_path).at(&meta_path)?)?;
    if meta.seed != seed {
        return Ok(None);
    }
    let c = read_kernel(&dir.join(format!("{tag}_c.csv")))?;
    let ct = read_kernel(&dir.join(format!("{tag}_ct.csv")))?;
    let mut state = SaddleState::from_kernel(&c, meta.eta);
    state.c_tilde = ct;
    state.iteration = meta.iteration;
    state.residual = meta.residual;
    Ok(Some(state))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub kmft: String,
    pub kmft_core: String,
}

impl Versions {
    pub fn current() -> Self {
        Self { kmft: env!("CARGO_PKG_VERSION").into(), kmft_core: kmft_core::VERSION.into() }
    }
}

/// Everything needed to recompute a run's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    /// "ok" or "failed".
    pub status: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub versions: Versions,
    /// SHA-256 of the resolved config in TOML form.
    pub input_hash: String,
    pub started_unix: u64,
    pub wall_time_s: f64,
    /// Files written, relative to the run directory.
    pub outputs: Vec<String>,
    pub error: Option<ErrorReport>,
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(config.to_toml().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_manifest(dir: &Path, m: &Manifest) -> Result<(), RunError> {
    atomic_write(&dir.join("manifest.json"), &serde_json::to_vec_pretty(m)?)
}

/// Serializes rows to CSV with a header taken from the row type.
pub fn table_csv<R: Serialize>(rows: &[R]) -> Result<Vec<u8>, RunError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| RunError::Failed(e.to_string()))
}

pub fn write_table<R: Serialize>(path: &Path, rows: &[R]) -> Result<(), RunError> {
    atomic_write(path, &table_csv(rows)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub metric: String,
    pub value: f64,
}

/// Named scalars in emission order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics(pub Vec<Metric>);

impl Metrics {
    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.0.push(Metric { metric: name.into(), value });
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.iter().find(|m| m.metric == name).map(|m| m.value)
    }

    pub fn write(&self, dir: &Path) -> Result<(), RunError> {
        write_table(&dir.join("metrics.csv"), &self.0)
    }

    pub fn read(path: &Path) -> Result<Self, RunError> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<Result<Vec<Metric>, _>>()?;
        Ok(Self(rows))
    }
}
