//! Expansion of the MAP kernel around the prior in powers of the label scale s
//! (labels Y → s·Y): H = H0 + s·Δ₁ + s²·Δ₂ + O(s³).
//!
//! Writing the gradient as G(H; s) = G₀(H) + s·G_Y(H) with G₀(H0) = 0,
//!
//! - first order:  J[Δ₁] = −G_Y(H0)
//! - second order: J[Δ₂] = −½·d²G₀[Δ₁, Δ₁] − dG_Y[Δ₁]
//!
//! where J = dG₀ at H0. J is assembled densely on symmetric basis matrices.

use alloc::vec::Vec;
use nalgebra::DVector;

use crate::error::Result;
use crate::kernelspace::{ArchMask, Kernel};
use crate::linalg::{self, Mat};
use crate::linear_mft::{solve_map, LinearObjective, SolverOptions};

/// Prior propagators at the expansion point.
#[derive(Debug, Clone)]
pub struct Propagators {
    /// Σ(H0)⁻¹ = H0⁻¹.
    pub g_h: Mat,
    /// (w·M[H0] + u·X)⁻¹ with X read on the same positions (Σ one step ahead).
    pub g_h_plus: Mat,
    /// (v·H0 + κ)⁻¹.
    pub g_y: Mat,
}

pub fn propagators(obj: &LinearObjective, h0: &Kernel) -> Result<Propagators> {
    let h = h0.data();
    let hy = obj.hyper();
    let p = obj.patterns();
    let n = obj.dim();
    let g_h = linalg::spd_inverse(&obj.sigma(h), "Sigma(H0)")?;
    // X at input time t feeds hidden time t+1; the last hidden time has no input ahead.
    let mut x_next = Mat::zeros(n, n);
    if n > p {
        let len = n - p;
        x_next.view_mut((0, 0), (len, len)).copy_from(&obj.input_minus().view((p, p), (len, len)));
    }
    let ahead = obj.mask().apply_mat(h, p) * hy.w + x_next * hy.u;
    let g_h_plus = linalg::spd_inverse(&ahead, "w M[H0] + u X")?;
    let g_y = linalg::spd_inverse(&(h * hy.v + Mat::identity(n, n) * hy.kappa.max(crate::linear_mft::KAPPA_FLOOR)), "v H0 + kappa")?;
    Ok(Propagators { g_h, g_h_plus, g_y })
}

/// Dense matrix of the linear map E ↦ vech(dG₀[E]) in vech coordinates.
pub fn prior_jacobian(obj: &LinearObjective, h0: &Mat) -> Result<Mat> {
    let n = obj.dim();
    let m = n * (n + 1) / 2;
    let mut jac = Mat::zeros(m, m);
    let mut col = 0;
    for i in 0..n {
        for j in i..n {
            let e = linalg::sym_basis(n, i, j);
            let d = linalg::vech(&obj.prior_hvp(h0, &e)?);
            for (r, v) in d.into_iter().enumerate() {
                jac[(r, col)] = v;
            }
            col += 1;
        }
    }
    Ok(jac)
}

fn solve_sym(jac: &Mat, rhs: &Mat) -> Result<Mat> {
    let n = rhs.nrows();
    let b = DVector::from_vec(linalg::vech(rhs));
    let x = linalg::solve_dense(jac, &b)?;
    Ok(linalg::unvech(x.as_slice(), n))
}

/// First-order correction Δ₁ (linear in the label kernel).
pub fn delta1(obj: &LinearObjective, h0: &Kernel) -> Result<Kernel> {
    let jac = prior_jacobian(obj, h0.data())?;
    delta1_with(obj, h0, &jac)
}

fn delta1_with(obj: &LinearObjective, h0: &Kernel, jac: &Mat) -> Result<Kernel> {
    let rhs = -obj.label_gradient(h0.data())?;
    h0.with_data(solve_sym(jac, &rhs)?)
}

/// Second-order correction Δ₂ given Δ₁ from [`delta1`] on the same objective.
pub fn delta2(obj: &LinearObjective, h0: &Kernel, d1: &Kernel) -> Result<Kernel> {
    let jac = prior_jacobian(obj, h0.data())?;
    delta2_with(obj, h0, d1, &jac)
}

fn delta2_with(obj: &LinearObjective, h0: &Kernel, d1: &Kernel, jac: &Mat) -> Result<Kernel> {
    let h = h0.data();
    let quad = obj.prior_second_derivative(h, d1.data())?;
    let cross = obj.label_hvp(h, d1.data())?;
    let rhs = -(quad * 0.5 + cross);
    h0.with_data(solve_sym(jac, &rhs)?)
}

/// (Δ₁, Δ₂, H0 + Δ₁ + Δ₂).
pub fn perturbative_kernel(obj: &LinearObjective, h0: &Kernel) -> Result<(Kernel, Kernel, Kernel)> {
    let jac = prior_jacobian(obj, h0.data())?;
    let d1 = delta1_with(obj, h0, &jac)?;
    let d2 = delta2_with(obj, h0, &d1, &jac)?;
    let total = h0.with_data(h0.data() + d1.data() + d2.data())?;
    Ok((d1, d2, total))
}

/// One row of the expansion-error table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionRow {
    pub scale: f64,
    pub arch: ArchMask,
    /// ‖H*(s) − (H0 + sΔ₁)‖∞.
    pub err_order1: f64,
    /// ‖H*(s) − (H0 + sΔ₁ + s²Δ₂)‖∞.
    pub err_order2: f64,
    /// err_order2 at the previous scale divided by err_order2 here (NaN for the first row).
    pub ratio: f64,
}

/// Compare the expansion with full solves at each label scale.
pub fn expansion_error(
    obj: &LinearObjective,
    h0: &Kernel,
    scales: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<ExpansionRow>> {
    let (d1, d2, _) = perturbative_kernel(obj, h0)?;
    let mut rows = Vec::with_capacity(scales.len());
    let mut prev: Option<f64> = None;
    for &s in scales {
        let first = h0.data() + d1.data() * s;
        let second = &first + d2.data() * (s * s);
        let (e1, e2) = if s == 0.0 {
            (0.0, 0.0)
        } else {
            let scaled = obj.with_label_scale(s);
            let init = h0.with_data(second.clone())?;
            let rep = solve_map(&scaled, &init, opts)?.ok()?;
            let hs = rep.h_star.data();
            (linalg::max_abs(&(hs - &first)), linalg::max_abs(&(hs - &second)))
        };
        let ratio = prev.map_or(f64::NAN, |p| p / e2);
        prev = Some(e2);
        rows.push(ExpansionRow { scale: s, arch: obj.mask(), err_order1: e1, err_order2: e2, ratio });
    }
    Ok(rows)
}
