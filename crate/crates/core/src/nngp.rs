//! Prior (untrained-network) kernels.

// float methods under no_std; unused when a dependency pulls in std
#[allow(unused_imports)]
use num_traits::Float;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::kernelspace::{ArchMask, HyperParams, Kernel, TimeRange};
use crate::linalg::Mat;
use crate::tasks::Task;

/// Hidden-unit nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    Linear,
    /// φ(h) = erf(√π/2 · h), unit slope at the origin.
    Erf,
}

const ERF_GAIN: f64 = 0.886_226_925_452_758; // √π / 2

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Erf => "erf",
        }
    }

    #[inline]
    pub fn apply(self, h: f64) -> f64 {
        match self {
            Activation::Linear => h,
            Activation::Erf => libm::erf(ERF_GAIN * h),
        }
    }

    #[inline]
    pub fn derivative(self, h: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            // d/dh erf(a h) = (2a/√π) exp(−a²h²) = exp(−π h²/4)
            Activation::Erf => (-(PI / 4.0) * h * h).exp(),
        }
    }

    /// E[φ(h₁)φ(h₂)] for (h₁, h₂) ~ N(0, [[k11, k12], [k12, k22]]).
    pub fn gaussian_moment(self, k11: f64, k12: f64, k22: f64) -> f64 {
        match self {
            Activation::Linear => k12,
            Activation::Erf => {
                // 2a² = π/2 for a = √π/2
                let g = PI / 2.0;
                let denom = ((1.0 + g * k11) * (1.0 + g * k22)).sqrt();
                let r = (g * k12 / denom).clamp(-1.0, 1.0);
                (2.0 / PI) * r.asin()
            }
        }
    }
}

/// Diagonal entries above this bound are reported as a divergent prior.
pub const PRIOR_OVERFLOW: f64 = 1e12;

/// Prior kernels (H0, C0) on the hidden range: H0 = w·M[C0⁻] + u·X⁻, C0 = ⟨φφᵀ⟩ under N(0, H0).
///
/// Built forward in time, one block row at a time.
pub fn nngp_kernel(task: &Task, hyper: &HyperParams, act: Activation, mask: ArchMask) -> Result<(Kernel, Kernel)> {
    hyper.validate()?;
    let p = task.patterns();
    let tl = task.grid().range_len();
    let n = tl * p;
    let x_minus = task.input_kernel().into_data();
    let mut h = Mat::zeros(n, n);
    let mut c = Mat::zeros(n, n);
    for a in 0..tl {
        let cols = match mask {
            ArchMask::Rnn => 0..a + 1,
            ArchMask::Dnn => a..a + 1,
        };
        for b in 0..=a {
            for q in 0..p {
                for r in 0..p {
                    let i = a * p + q;
                    let j = b * p + r;
                    let mut val = hyper.u * x_minus[(i, j)];
                    if a > 0 && b > 0 && cols.contains(&b) {
                        val += hyper.w * c[((a - 1) * p + q, (b - 1) * p + r)];
                    }
                    h[(i, j)] = val;
                    h[(j, i)] = val;
                }
            }
        }
        for q in 0..p {
            let d = h[(a * p + q, a * p + q)];
            if !(d.is_finite() && d <= PRIOR_OVERFLOW) {
                return Err(Error::DivergentPrior { time: a + 1 });
            }
        }
        for b in 0..=a {
            for q in 0..p {
                for r in 0..p {
                    let i = a * p + q;
                    let j = b * p + r;
                    let v = act.gaussian_moment(h[(i, i)], h[(i, j)], h[(j, j)]);
                    c[(i, j)] = v;
                    c[(j, i)] = v;
                }
            }
        }
    }
    let steps = task.steps();
    Ok((
        Kernel::new(steps, TimeRange::Hidden, p, h)?,
        Kernel::new(steps, TimeRange::Hidden, p, c)?,
    ))
}

/// ‖H0 − (w·M[C0⁻] + u·X⁻)‖∞.
pub fn fixed_point_residual(task: &Task, hyper: &HyperParams, mask: ArchMask, h0: &Kernel, c0: &Kernel) -> f64 {
    let p = task.patterns();
    let c_minus = crate::kernelspace::shift_minus_mat(c0.data(), p);
    let sigma = mask.apply_mat(&c_minus, p) * hyper.w + task.input_kernel().into_data() * hyper.u;
    crate::linalg::max_abs(&(h0.data() - sigma))
}
