//! Exact T = 4 analytics of the temporal-coherence transition (endpoint task,
//! one pattern, input at t = 0 only, κ = 0).
//!
//! The hidden kernel is parameterized as
//!
//! ```text
//!     | a  b2 b3 |
//! H = | b2 c  d  |
//!     | b3 d  e  |
//! ```
//!
//! On the diagonal branch a² = (u/w)c, e = c²/a, and with c = u·w·s² the remaining
//! first-order condition reduces to s⁴ − s³ = λ.


// float methods under no_std; unused when a dependency pulls in std
#[allow(unused_imports)]
use num_traits::Float;
use crate::error::{Error, Result};
use crate::kernelspace::ArchMask;
use crate::linalg::Mat;

/// Entries of the T = 4 hidden kernel plus the control parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandauPoint {
    pub a: f64,
    pub c: f64,
    pub e: f64,
    pub b2: f64,
    pub b3: f64,
    pub d: f64,
    pub lambda: f64,
    pub arch: ArchMask,
}

impl LandauPoint {
    pub fn matrix(&self) -> Mat {
        Mat::from_row_slice(3, 3, &[
            self.a, self.b2, self.b3, //
            self.b2, self.c, self.d, //
            self.b3, self.d, self.e,
        ])
    }

    pub fn with_arch(mut self, arch: ArchMask) -> Self {
        self.arch = arch;
        self
    }
}

/// λ* = 8.
pub fn critical_lambda() -> f64 {
    8.0
}

/// Diagonal point (a, c, e) solving the first-order conditions at signal strength λ.
///
/// Root of s⁴ − s³ − λ in c = u·w·s² over [c_prior, 100·c_prior]: bisection, then Newton.
pub fn diagonal_foc_solve(lambda: f64, u: f64, w: f64, v: f64) -> Result<LandauPoint> {
    if !(lambda >= 0.0) || !(u > 0.0 && w > 0.0 && v > 0.0) {
        return Err(Error::InvalidParameter("need lambda >= 0 and u, w, v > 0".into()));
    }
    let g = |s: f64| s.powi(4) - s.powi(3) - lambda;
    let dg = |s: f64| 4.0 * s.powi(3) - 3.0 * s.powi(2);
    // c/c_prior = s² ∈ [1, 100]
    let (mut lo, mut hi) = (1.0f64, 10.0f64);
    if g(lo) > 0.0 || g(hi) < 0.0 {
        return Err(Error::NoRoot);
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut s = 0.5 * (lo + hi);
    for _ in 0..8 {
        let d = dg(s);
        if d <= 0.0 {
            break;
        }
        let next = s - g(s) / d;
        if !(1.0..=10.0).contains(&next) {
            break;
        }
        s = next;
    }
    Ok(LandauPoint {
        a: u * s,
        c: u * w * s * s,
        e: u * w * w * s * s * s,
        b2: 0.0,
        b3: 0.0,
        d: 0.0,
        lambda,
        arch: ArchMask::Rnn,
    })
}

/// Curvature C² of the reduced objective in d at d = 0:
/// −1/(ce) + 1/(w(c² + ae)) for the RNN, −1/(ce) for the DNN.
pub fn quadratic_coefficient(p: &LandauPoint, w: f64) -> f64 {
    let base = -1.0 / (p.c * p.e);
    match p.arch {
        ArchMask::Rnn => base + 1.0 / (w * (p.c * p.c + p.a * p.e)),
        ArchMask::Dnn => base,
    }
}

/// Leading-order order parameter d*² = max(0, C²·c²·e²) on the self-consistent diagonal.
pub fn order_parameter(lambda: f64, u: f64, w: f64, v: f64) -> Result<f64> {
    let p = diagonal_foc_solve(lambda, u, w, v)?;
    let c2 = quadratic_coefficient(&p, w);
    Ok((c2 * p.c * p.c * p.e * p.e).max(0.0))
}

/// (α, b₃/d²) with b₂ = α·d and b₃ = (α/c)·d²; α = ac/(c² + ae) for the RNN, 0 for the DNN.
pub fn slaving_coefficients(p: &LandauPoint) -> (f64, f64) {
    let alpha = match p.arch {
        ArchMask::Rnn => p.a * p.c / (p.c * p.c + p.a * p.e),
        ArchMask::Dnn => 0.0,
    };
    (alpha, alpha / p.c)
}
