//! Task generators: impulse-driven sinusoid, endpoint classification and the
//! rotation-teacher sequence task.

// float methods under no_std; unused when a dependency pulls in std
#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::kernelspace::{HyperParams, Kernel, TimeGrid, TimeRange};
use crate::linalg::Mat;

/// Inputs over input times 0..=T−2 and labels over output times 2..=T.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    name: String,
    grid: TimeGrid,
    patterns: usize,
    input_dim: usize,
    /// Flattened as ((t · P) + p) · D + i.
    x: Vec<f64>,
    /// Flattened as (t − 2) · P + p.
    y: Vec<f64>,
}

impl Task {
    /// Build a task from raw arrays; see the field layouts on [`Task`].
    pub fn from_parts(
        name: impl Into<String>,
        grid: TimeGrid,
        patterns: usize,
        input_dim: usize,
        x: Vec<f64>,
        y: Vec<f64>,
    ) -> Result<Self> {
        let tl = grid.range_len();
        if patterns == 0 || input_dim == 0 {
            return Err(Error::InvalidShape("patterns and input_dim must be positive".into()));
        }
        if x.len() != tl * patterns * input_dim || y.len() != tl * patterns {
            return Err(Error::InvalidShape(format!(
                "x has {} entries (want {}), y has {} (want {})",
                x.len(),
                tl * patterns * input_dim,
                y.len(),
                tl * patterns
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite input".into()));
        }
        for &t in grid.supervised() {
            for p in 0..patterns {
                if !y[(t - 2) * patterns + p].is_finite() {
                    return Err(Error::InvalidParameter(format!("non-finite label at t={t}")));
                }
            }
        }
        Ok(Self { name: name.into(), grid, patterns, input_dim, x, y })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn patterns(&self) -> usize {
        self.patterns
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Input vector x^t_p, t ∈ 0..=T−2.
    pub fn x(&self, t: usize, p: usize) -> &[f64] {
        let d = self.input_dim;
        let start = (t * self.patterns + p) * d;
        &self.x[start..start + d]
    }

    /// Label y^t_p, t ∈ 2..=T.
    pub fn y(&self, t: usize, p: usize) -> f64 {
        self.y[(t - 2) * self.patterns + p]
    }

    pub fn raw_inputs(&self) -> &[f64] {
        &self.x
    }

    pub fn raw_labels(&self) -> &[f64] {
        &self.y
    }

    /// Copy with every label multiplied by `factor` (the label kernel scales by factor²).
    pub fn scaled_labels(&self, factor: f64) -> Self {
        let mut t = self.clone();
        t.y.iter_mut().for_each(|v| *v *= factor);
        t
    }

    /// Copy with a different supervised set.
    pub fn with_supervised(&self, supervised: impl IntoIterator<Item = usize>) -> Result<Self> {
        let grid = self.grid.with_supervised(supervised)?;
        Self::from_parts(self.name.clone(), grid, self.patterns, self.input_dim, self.x.clone(), self.y.clone())
    }

    /// X^{tt'}_{pp'} = (1/D) Σᵢ x^t_{p,i} x^{t'}_{p',i} on the input range.
    pub fn input_kernel(&self) -> Kernel {
        let p = self.patterns;
        let n = self.grid.range_len() * p;
        let d = self.input_dim;
        let mut m = Mat::zeros(n, n);
        for a in 0..n {
            let xa = &self.x[a * d..(a + 1) * d];
            for b in a..n {
                let xb = &self.x[b * d..(b + 1) * d];
                let s: f64 = xa.iter().zip(xb).map(|(u, v)| u * v).sum::<f64>() / d as f64;
                m[(a, b)] = s;
                m[(b, a)] = s;
            }
        }
        Kernel::new(self.steps(), TimeRange::Input, p, m).expect("consistent shape")
    }

    /// Y^{tt'}_{pp'} = y^t_p y^{t'}_{p'} on supervised entries, zero elsewhere, on the output range.
    pub fn label_kernel(&self) -> Kernel {
        let p = self.patterns;
        let n = self.grid.range_len() * p;
        let mut masked = vec![0.0; n];
        for &t in self.grid.supervised() {
            for q in 0..p {
                let i = (t - 2) * p + q;
                masked[i] = self.y[i];
            }
        }
        let m = Mat::from_fn(n, n, |a, b| masked[a] * masked[b]);
        Kernel::new(self.steps(), TimeRange::Output, p, m).expect("consistent shape")
    }

    /// Labels on supervised entries in joint order (supervised position-major, pattern-minor).
    pub fn supervised_labels(&self) -> Vec<f64> {
        self.grid.supervised_indices(self.patterns).into_iter().map(|i| self.y[i]).collect()
    }
}

/// Single impulse at t = 0, target y^t = cos(2πt/T) at every output time.
pub fn sinusoid_task(steps: usize) -> Result<Task> {
    if steps < 3 {
        return Err(Error::InvalidShape(format!("sinusoid task needs T >= 3, got {steps}")));
    }
    let grid = TimeGrid::fully_supervised(steps)?;
    let tl = grid.range_len();
    let mut x = vec![0.0; tl];
    x[0] = 1.0;
    let y = (2..=steps).map(|t| (2.0 * PI * t as f64 / steps as f64).cos()).collect();
    Task::from_parts("sinusoid", grid, 1, 1, x, y)
}

/// P orthogonal inputs x⁰_p = √D e_p at t = 0, balanced ±1 labels at t = T only.
pub fn endpoint_classification(steps: usize, patterns: usize, input_dim: usize) -> Result<Task> {
    if patterns == 0 || !patterns.is_multiple_of(2) {
        return Err(Error::InvalidShape(format!("pattern count must be even and positive, got {patterns}")));
    }
    if patterns > input_dim {
        return Err(Error::InvalidShape(format!("P = {patterns} exceeds D = {input_dim}")));
    }
    let grid = TimeGrid::endpoint(steps)?;
    let tl = grid.range_len();
    let mut x = vec![0.0; tl * patterns * input_dim];
    let scale = (input_dim as f64).sqrt();
    for p in 0..patterns {
        x[p * input_dim + p] = scale;
    }
    let mut y = vec![0.0; tl * patterns];
    for p in 0..patterns {
        y[(tl - 1) * patterns + p] = if p < patterns / 2 { 1.0 } else { -1.0 };
    }
    Task::from_parts("endpoint", grid, patterns, input_dim, x, y)
}

/// Rotation teacher: x⁰ = (cos φ₀, sin φ₀), y^t = first component of R(t·dphi) x⁰.
pub fn teacher_rotation_task(
    steps: usize,
    dphi: f64,
    phi0: f64,
    supervised: impl IntoIterator<Item = usize>,
) -> Result<Task> {
    if steps < 3 {
        return Err(Error::InvalidShape(format!("teacher task needs T >= 3, got {steps}")));
    }
    let grid = TimeGrid::new(steps, supervised)?;
    if grid.supervised().is_empty() {
        return Err(Error::EmptySupervision);
    }
    let tl = grid.range_len();
    let mut x = vec![0.0; tl * 2];
    x[0] = phi0.cos();
    x[1] = phi0.sin();
    let y = (2..=steps)
        .map(|t| {
            let a = t as f64 * dphi;
            a.cos() * x[0] - a.sin() * x[1]
        })
        .collect();
    Task::from_parts("teacher_rotation", grid, 1, 2, x, y)
}

/// Evenly spread supervised output times: `count` points of linspace(2, T), rounded.
pub fn spread_supervision(steps: usize, count: usize) -> Vec<usize> {
    let count = count.clamp(1, steps - 1);
    if count == 1 {
        return vec![steps];
    }
    let mut out: Vec<usize> = (0..count)
        .map(|k| {
            let s = 2.0 + (steps as f64 - 2.0) * k as f64 / (count - 1) as f64;
            s.round() as usize
        })
        .collect();
    out.dedup();
    out
}

/// Label amplitude y with y² = λ·u·w^{T−2}·v.
pub fn signal_amplitude(lambda: f64, steps: usize, hyper: &HyperParams) -> f64 {
    (lambda * hyper.u * hyper.w.powi(steps as i32 - 2) * hyper.v).sqrt()
}

/// λ = y²/(u·w^{T−2}·v).
pub fn signal_strength(y: f64, steps: usize, hyper: &HyperParams) -> f64 {
    y * y / (hyper.u * hyper.w.powi(steps as i32 - 2) * hyper.v)
}

/// Endpoint task (P = D = 1, label +y at T) with signal strength λ.
pub fn endpoint_signal_task(steps: usize, lambda: f64, hyper: &HyperParams) -> Result<Task> {
    let grid = TimeGrid::endpoint(steps)?;
    let tl = grid.range_len();
    let mut x = vec![0.0; tl];
    x[0] = 1.0;
    let mut y = vec![0.0; tl];
    y[tl - 1] = signal_amplitude(lambda, steps, hyper);
    Task::from_parts("endpoint", grid, 1, 1, x, y)
}
