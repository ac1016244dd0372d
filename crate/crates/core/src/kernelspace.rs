//! Kernels over the joint (time, pattern) index, time shifts and architecture masks.
//!
//! Joint indices are time-major, pattern-minor: entry `(t, p)` of a kernel whose
//! k-th time label is `t` sits at row `k * P + p`.

use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

/// Which of the three aligned time ranges a kernel lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TimeRange {
    /// Times 0..=T−2 (inputs x^t).
    Input,
    /// Times 1..=T−1 (hidden states h^t).
    Hidden,
    /// Times 2..=T (outputs f^t).
    Output,
}

impl TimeRange {
    pub fn first(self) -> usize {
        match self {
            TimeRange::Input => 0,
            TimeRange::Hidden => 1,
            TimeRange::Output => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TimeRange::Input => "input",
            TimeRange::Hidden => "hidden",
            TimeRange::Output => "output",
        }
    }

    /// Offset that maps a time on this range to the output time it feeds.
    fn to_output(self) -> usize {
        2 - self.first()
    }
}

/// Number of timesteps and the supervised output times.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TimeGrid {
    steps: usize,
    supervised: Vec<usize>,
}

impl TimeGrid {
    /// `supervised` must be a subset of the output times 2..=T; it is sorted and deduplicated.
    pub fn new(steps: usize, supervised: impl IntoIterator<Item = usize>) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidShape(format!("need at least 2 timesteps, got {steps}")));
        }
        let mut sup: Vec<usize> = supervised.into_iter().collect();
        sup.sort_unstable();
        sup.dedup();
        if let Some(&t) = sup.iter().find(|&&t| t < 2 || t > steps) {
            return Err(Error::InvalidShape(format!(
                "supervised time {t} outside output times 2..={steps}"
            )));
        }
        Ok(Self { steps, supervised: sup })
    }

    pub fn endpoint(steps: usize) -> Result<Self> {
        Self::new(steps, [steps])
    }

    pub fn fully_supervised(steps: usize) -> Result<Self> {
        Self::new(steps, 2..=steps)
    }

    /// T.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// T₋ = T − 1, the length of every time range.
    pub fn range_len(&self) -> usize {
        self.steps - 1
    }

    pub fn times(&self, range: TimeRange) -> Range<usize> {
        range.first()..range.first() + self.range_len()
    }

    pub fn supervised(&self) -> &[usize] {
        &self.supervised
    }

    pub fn is_supervised(&self, output_time: usize) -> bool {
        self.supervised.binary_search(&output_time).is_ok()
    }

    /// Positions (0-based, within any range) of the supervised times.
    pub fn supervised_positions(&self) -> Vec<usize> {
        self.supervised.iter().map(|t| t - 2).collect()
    }

    /// Joint indices (position-major, pattern-minor) of supervised entries.
    pub fn supervised_indices(&self, patterns: usize) -> Vec<usize> {
        self.supervised_positions()
            .into_iter()
            .flat_map(|k| (0..patterns).map(move |p| k * patterns + p))
            .collect()
    }

    pub fn with_supervised(&self, supervised: impl IntoIterator<Item = usize>) -> Result<Self> {
        Self::new(self.steps, supervised)
    }
}

/// RNN (identity) or DNN (time-diagonal projection) masking operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ArchMask {
    Rnn,
    Dnn,
}

impl ArchMask {
    pub fn name(self) -> &'static str {
        match self {
            ArchMask::Rnn => "rnn",
            ArchMask::Dnn => "dnn",
        }
    }

    /// Apply the mask to a raw joint-index matrix with `patterns` patterns per time block.
    pub fn apply_mat(self, m: &Mat, patterns: usize) -> Mat {
        match self {
            ArchMask::Rnn => m.clone(),
            ArchMask::Dnn => {
                let mut out = Mat::zeros(m.nrows(), m.ncols());
                let nt = m.nrows() / patterns;
                for k in 0..nt {
                    let r = k * patterns;
                    out.view_mut((r, r), (patterns, patterns))
                        .copy_from(&m.view((r, r), (patterns, patterns)));
                }
                out
            }
        }
    }
}

/// Intensive prior scales and widths.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct HyperParams {
    pub u: f64,
    pub w: f64,
    pub v: f64,
    pub kappa: f64,
    /// Hidden width N.
    pub n: usize,
    /// Input dimension D.
    pub d: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self { u: 1.0, w: 1.0, v: 1.0, kappa: 0.0, n: 256, d: 1 }
    }
}

impl HyperParams {
    pub fn new(u: f64, w: f64, v: f64, kappa: f64) -> Result<Self> {
        let h = Self { u, w, v, kappa, ..Self::default() };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !(pos(self.u) && pos(self.w) && pos(self.v)) {
            return Err(Error::InvalidParameter(format!(
                "u, w, v must be positive (got {}, {}, {})",
                self.u, self.w, self.v
            )));
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(Error::InvalidParameter(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if self.n == 0 || self.d == 0 {
            return Err(Error::InvalidParameter("N and D must be >= 1".into()));
        }
        Ok(())
    }

    /// Prior variance of U entries, u/D.
    pub fn g_u(&self) -> f64 {
        self.u / self.d as f64
    }

    /// Prior variance of W entries, w/N.
    pub fn g_w(&self) -> f64 {
        self.w / self.n as f64
    }

    /// Prior variance of V entries, v/N².
    pub fn g_v(&self) -> f64 {
        self.v / (self.n as f64 * self.n as f64)
    }

    /// Extensive temperature κ/N.
    pub fn kappa_ext(&self) -> f64 {
        self.kappa / self.n as f64
    }
}

/// Symmetric matrix over flattened (time, pattern) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    steps: usize,
    range: TimeRange,
    times: Vec<usize>,
    patterns: usize,
    data: Mat,
}

impl Kernel {
    /// Kernel over the full `range` of a T-step grid. The data is symmetrized.
    pub fn new(steps: usize, range: TimeRange, patterns: usize, data: Mat) -> Result<Self> {
        let times: Vec<usize> = (range.first()..range.first() + steps.saturating_sub(1)).collect();
        Self::on_times(steps, range, times, patterns, data)
    }

    /// Kernel over an explicit ascending subset of `range`'s times.
    pub fn on_times(
        steps: usize,
        range: TimeRange,
        times: Vec<usize>,
        patterns: usize,
        data: Mat,
    ) -> Result<Self> {
        if patterns == 0 {
            return Err(Error::InvalidShape("pattern count must be positive".into()));
        }
        let dim = times.len() * patterns;
        if data.nrows() != dim || data.ncols() != dim {
            return Err(Error::InvalidShape(format!(
                "expected {dim}x{dim} data for {} times and {patterns} patterns, got {}x{}",
                times.len(),
                data.nrows(),
                data.ncols()
            )));
        }
        let lo = range.first();
        let hi = lo + steps.saturating_sub(1);
        if times.windows(2).any(|w| w[0] >= w[1]) || times.iter().any(|&t| t < lo || t >= hi) {
            return Err(Error::InvalidShape(format!(
                "times {times:?} are not an ascending subset of the {} range",
                range.name()
            )));
        }
        Ok(Self { steps, range, times, patterns, data: linalg::symmetrize(&data) })
    }

    pub fn zeros(steps: usize, range: TimeRange, patterns: usize) -> Self {
        let dim = steps.saturating_sub(1) * patterns;
        Self::new(steps, range, patterns, Mat::zeros(dim, dim)).expect("consistent shape")
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn range(&self) -> TimeRange {
        self.range
    }

    pub fn times(&self) -> &[usize] {
        &self.times
    }

    pub fn patterns(&self) -> usize {
        self.patterns
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &Mat {
        &self.data
    }

    pub fn into_data(self) -> Mat {
        self.data
    }

    /// Same layout, new values (symmetrized).
    pub fn with_data(&self, data: Mat) -> Result<Self> {
        Self::on_times(self.steps, self.range, self.times.clone(), self.patterns, data)
    }

    /// Same values, reinterpreted on another time range (positions kept).
    pub fn relabel(&self, range: TimeRange) -> Self {
        let shift = range.first() as isize - self.range.first() as isize;
        let times = self.times.iter().map(|&t| (t as isize + shift) as usize).collect();
        Self { steps: self.steps, range, times, patterns: self.patterns, data: self.data.clone() }
    }

    /// Joint row index of `(time position, pattern)`.
    pub fn flatten(&self, position: usize, pattern: usize) -> usize {
        position * self.patterns + pattern
    }

    /// Inverse of [`Kernel::flatten`].
    pub fn unflatten(&self, index: usize) -> (usize, usize) {
        (index / self.patterns, index % self.patterns)
    }

    pub fn position_of(&self, time: usize) -> Option<usize> {
        self.times.binary_search(&time).ok()
    }

    /// Entry at time labels `(t, t')` and patterns `(p, p')`.
    pub fn get(&self, t: usize, p: usize, t2: usize, p2: usize) -> Option<f64> {
        let a = self.position_of(t)?;
        let b = self.position_of(t2)?;
        Some(self.data[(self.flatten(a, p), self.flatten(b, p2))])
    }

    /// P×P block between time labels `t` and `t'`.
    pub fn block(&self, t: usize, t2: usize) -> Option<Mat> {
        let a = self.position_of(t)?;
        let b = self.position_of(t2)?;
        let p = self.patterns;
        Some(self.data.view((a * p, b * p), (p, p)).into_owned())
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        linalg::max_abs(&(&self.data - self.data.transpose())) <= tol
    }

    /// Eigenvalues ≥ −tol_rel · (largest eigenvalue).
    pub fn is_psd(&self, tol_rel: f64) -> bool {
        let ev = linalg::eigenvalues(&self.data);
        let max = ev.iter().copied().fold(0.0f64, f64::max);
        ev.iter().all(|&l| l >= -tol_rel * max.max(f64::MIN_POSITIVE))
    }

    fn remap(&self, offset: isize) -> Self {
        let p = self.patterns;
        let mut out = Mat::zeros(self.dim(), self.dim());
        let src: Vec<Option<usize>> = self
            .times
            .iter()
            .map(|&t| {
                let s = t as isize + offset;
                if s < 0 {
                    None
                } else {
                    self.position_of(s as usize)
                }
            })
            .collect();
        for (a, sa) in src.iter().enumerate() {
            let Some(sa) = sa else { continue };
            for (b, sb) in src.iter().enumerate() {
                let Some(sb) = sb else { continue };
                out.view_mut((a * p, b * p), (p, p))
                    .copy_from(&self.data.view((sa * p, sb * p), (p, p)));
            }
        }
        Self { data: out, times: self.times.clone(), ..*self }
    }
}

/// K⁻: entry (t, t') reads K^{t−1,t'−1}; entries whose source time is absent are zero.
pub fn shift_minus(k: &Kernel) -> Kernel {
    k.remap(-1)
}

/// K⁺: entry (t, t') reads K^{t+1,t'+1}; zero where the source time is absent.
pub fn shift_plus(k: &Kernel) -> Kernel {
    k.remap(1)
}

pub fn apply_mask(mask: ArchMask, k: &Kernel) -> Kernel {
    Kernel { data: mask.apply_mat(&k.data, k.patterns), times: k.times.clone(), ..*k }
}

/// Principal submatrix on entries whose aligned output time lies in the supervised set.
///
/// Output kernels are restricted on their own labels; hidden (input) kernels on
/// labels t with t+1 (t+2) supervised.
pub fn restrict_supervised(k: &Kernel, grid: &TimeGrid) -> Result<Kernel> {
    if grid.supervised().is_empty() {
        return Err(Error::EmptySupervision);
    }
    let off = k.range.to_output();
    let keep: Vec<usize> =
        (0..k.times.len()).filter(|&a| grid.is_supervised(k.times[a] + off)).collect();
    let p = k.patterns;
    let idx: Vec<usize> = keep.iter().flat_map(|&a| (0..p).map(move |q| a * p + q)).collect();
    let data = k.data.select_rows(idx.iter()).select_columns(idx.iter());
    let times = keep.iter().map(|&a| k.times[a]).collect();
    Kernel::on_times(k.steps, k.range, times, p, data)
}

/// Eigenvalues clipped to at least `floor`.
pub fn project_psd(k: &Kernel, floor: f64) -> Kernel {
    Kernel { data: linalg::project_psd(&k.data, floor), times: k.times.clone(), ..*k }
}

/// Matrix form of `shift_minus` on a contiguous range: S M Sᵀ with S the block down-shift.
pub fn shift_minus_mat(m: &Mat, patterns: usize) -> Mat {
    let n = m.nrows();
    let mut out = Mat::zeros(n, n);
    if n > patterns {
        let len = n - patterns;
        out.view_mut((patterns, patterns), (len, len)).copy_from(&m.view((0, 0), (len, len)));
    }
    out
}

/// Matrix form of `shift_plus` on a contiguous range: Sᵀ M S.
pub fn shift_plus_mat(m: &Mat, patterns: usize) -> Mat {
    let n = m.nrows();
    let mut out = Mat::zeros(n, n);
    if n > patterns {
        let len = n - patterns;
        out.view_mut((0, 0), (len, len)).copy_from(&m.view((patterns, patterns), (len, len)));
    }
    out
}
