//! Kernel-regression predictors and kernel comparison metrics.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernelspace::{HyperParams, Kernel, TimeRange};
use crate::linalg::{self, Mat};
use crate::linear_mft::KAPPA_FLOOR;
use crate::tasks::Task;

/// Predictions over output times and patterns with their squared-error losses.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorResult {
    /// Output times 2..=T.
    pub times: Vec<usize>,
    /// f[(t − 2)·P + p].
    pub f: Vec<f64>,
    /// y[(t − 2)·P + p].
    pub y: Vec<f64>,
    pub supervised: Vec<bool>,
    /// ½·mean over patterns of (y − f)², per output time.
    pub per_time_loss: Vec<f64>,
    /// Mean of `per_time_loss`.
    pub loss: f64,
}

impl PredictorResult {
    /// Mean per-time loss over unsupervised times (NaN if every time is supervised).
    pub fn unsupervised_loss(&self) -> f64 {
        let vals: Vec<f64> = self
            .per_time_loss
            .iter()
            .zip(&self.supervised)
            .filter(|(_, &s)| !s)
            .map(|(l, _)| *l)
            .collect();
        if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }
}

fn regularized(block: &Mat, hyper: &HyperParams) -> Mat {
    let n = block.nrows();
    block * hyper.v + Mat::identity(n, n) * hyper.kappa
}

/// f = vH^{T₋T₋}(vH^{T₋T₋} + κ)⁻¹ y on the last hidden block, one entry per pattern.
pub fn endpoint_predictor(h: &Kernel, y_endpoint: &[f64], hyper: &HyperParams) -> Result<Vec<f64>> {
    let last = *h.times().last().ok_or_else(|| Error::InvalidShape("empty kernel".into()))?;
    let block = h.block(last, last).expect("last time present");
    let p = block.nrows();
    if y_endpoint.len() != p {
        return Err(Error::InvalidShape("label count must equal the pattern count".into()));
    }
    let a = regularized(&block, hyper);
    let lu = a.lu();
    let y = nalgebra::DVector::from_column_slice(y_endpoint);
    let alpha = lu.solve(&y).ok_or_else(|| Error::SingularKernel("vH + kappa".into()))?;
    if alpha.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularKernel("vH + kappa".into()));
    }
    Ok((block * alpha * hyper.v).iter().copied().collect())
}

/// f_q = v·H_{q,𝒮}(v·H_𝒮𝒮 + κ)⁻¹ y_𝒮 for every output entry q, from a hidden-range kernel.
pub fn sequence_predictor(h: &Kernel, task: &Task, hyper: &HyperParams) -> Result<PredictorResult> {
    let grid = task.grid();
    if h.range() != TimeRange::Hidden || h.dim() != grid.range_len() * task.patterns() {
        return Err(Error::InvalidShape("predictor needs the full hidden-range kernel".into()));
    }
    let sup = grid.supervised_indices(task.patterns());
    if sup.is_empty() {
        return Err(Error::EmptySupervision);
    }
    let hm = h.data();
    let hss = hm.select_rows(sup.iter()).select_columns(sup.iter());
    let n = hss.nrows();
    let a = &hss * hyper.v + Mat::identity(n, n) * hyper.kappa.max(KAPPA_FLOOR);
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::SingularKernel("v H_S + kappa".into()))?;
    let ys = nalgebra::DVector::from_vec(task.supervised_labels());
    let alpha = chol.solve(&ys);
    let cross = hm.select_columns(sup.iter());
    let f_vec = cross * alpha * hyper.v;
    let p = task.patterns();
    let times: Vec<usize> = (2..=task.steps()).collect();
    let mut f = vec![0.0; f_vec.len()];
    let mut y = vec![0.0; f_vec.len()];
    let mut supervised = Vec::with_capacity(times.len());
    let mut per_time_loss = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let mut acc = 0.0;
        for q in 0..p {
            let i = k * p + q;
            f[i] = f_vec[i];
            y[i] = task.y(t, q);
            acc += 0.5 * (y[i] - f[i]) * (y[i] - f[i]);
        }
        supervised.push(grid.is_supervised(t));
        per_time_loss.push(acc / p as f64);
    }
    let loss = per_time_loss.iter().sum::<f64>() / per_time_loss.len() as f64;
    Ok(PredictorResult { times, f, y, supervised, per_time_loss, loss })
}

/// Cosine similarity of the mean-subtracted vectorized matrices.
pub fn cka(a: &Mat, b: &Mat) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::InvalidShape("cka needs equally shaped matrices".into()));
    }
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        let (x, y) = (x - ma, y - mb);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa <= 0.0 || bb <= 0.0 {
        return Err(Error::DegenerateInput("centered matrix has zero norm".into()));
    }
    Ok((ab / libm::sqrt(aa * bb)).clamp(-1.0, 1.0))
}

/// [`cka`] on kernels.
pub fn cka_kernels(a: &Kernel, b: &Kernel) -> Result<f64> {
    cka(a.data(), b.data())
}

/// Mean of C^{t, t−τ} over valid t, for τ = 0..len.
pub fn autocorrelation(c: &Kernel) -> Result<Vec<f64>> {
    if c.patterns() != 1 {
        return Err(Error::InvalidShape("autocorrelation needs a single-pattern kernel".into()));
    }
    let m = c.data();
    let n = m.nrows();
    Ok((0..n)
        .map(|tau| (tau..n).map(|t| m[(t, t - tau)]).sum::<f64>() / (n - tau) as f64)
        .collect())
}

/// Max-abs difference, convenience for reports.
pub fn max_abs_diff(a: &Kernel, b: &Kernel) -> f64 {
    linalg::max_abs(&(a.data() - b.data()))
}
