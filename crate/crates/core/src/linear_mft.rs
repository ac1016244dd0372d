//! Linear-activation kernel theory: the negative log-posterior over hidden kernels,
//! its derivatives, a trust-region Newton–CG MAP solver and the closed-form
//! stationarity check.
//!
//! With Σ(H) = w·M[H⁻] + u·X⁻ and A = v·H_𝒮 + κ on the supervised hidden entries,
//!
//! F(H) = ½ tr[Y_𝒮 A⁻¹] + ½ tr[H Σ⁻¹] − ½ ln det H + ½ ln det Σ.
//!
//! Gradients are symmetric matrices G with dF = tr[G dH].

// float methods under no_std; unused when a dependency pulls in std
#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernelspace::{
    restrict_supervised, shift_minus_mat, shift_plus_mat, ArchMask, HyperParams, Kernel, TimeGrid,
    TimeRange,
};
use crate::linalg::{self, Mat};
use crate::tasks::Task;

/// Regularizer floor used in the label term when κ = 0.
pub const KAPPA_FLOOR: f64 = 1e-12;

/// Problem data for the linear kernel objective.
#[derive(Debug, Clone)]
pub struct LinearObjective {
    grid: TimeGrid,
    patterns: usize,
    hyper: HyperParams,
    mask: ArchMask,
    x_minus: Mat,
    label: Mat,
    sup: Vec<usize>,
}

/// Quantities shared by value and derivative evaluations at one H.
struct Eval {
    h: Mat,
    z: Mat,
    hi: Mat,
    k: Mat,
    b: Mat,
    logdet_h: f64,
    logdet_sigma: f64,
}

impl LinearObjective {
    pub fn new(task: &Task, hyper: &HyperParams, mask: ArchMask) -> Result<Self> {
        Self::from_kernels(&task.input_kernel(), &task.label_kernel(), task.grid(), hyper, mask)
    }

    /// `x` on the input range, `y` on the output range (entries outside 𝒯 are ignored).
    pub fn from_kernels(x: &Kernel, y: &Kernel, grid: &TimeGrid, hyper: &HyperParams, mask: ArchMask) -> Result<Self> {
        hyper.validate()?;
        let p = x.patterns();
        let n = grid.range_len() * p;
        if x.dim() != n || y.dim() != n || y.patterns() != p {
            return Err(Error::InvalidShape(format!(
                "input/label kernels must be {n}x{n} with {p} patterns"
            )));
        }
        let sup = grid.supervised_indices(p);
        let label = if sup.is_empty() {
            Mat::zeros(0, 0)
        } else {
            restrict_supervised(y, grid)?.into_data()
        };
        Ok(Self {
            grid: grid.clone(),
            patterns: p,
            hyper: *hyper,
            mask,
            x_minus: x.data().clone(),
            label,
            sup,
        })
    }

    pub fn dim(&self) -> usize {
        self.x_minus.nrows()
    }

    pub fn patterns(&self) -> usize {
        self.patterns
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    pub fn mask(&self) -> ArchMask {
        self.mask
    }

    /// Supervised joint indices in hidden coordinates.
    pub fn supervised_indices(&self) -> &[usize] {
        &self.sup
    }

    /// Label kernel restricted to the supervised entries.
    pub fn supervised_labels(&self) -> &Mat {
        &self.label
    }

    /// Same objective with the label kernel multiplied by `s`.
    pub fn with_label_scale(&self, s: f64) -> Self {
        let mut o = self.clone();
        o.label *= s;
        o
    }

    /// Same objective with the label kernel removed.
    pub fn without_labels(&self) -> Self {
        self.with_label_scale(0.0)
    }

    pub fn input_minus(&self) -> &Mat {
        &self.x_minus
    }

    fn kappa_eff(&self) -> f64 {
        self.hyper.kappa.max(KAPPA_FLOOR)
    }

    /// Σ(H) = w·M[H⁻] + u·X⁻.
    pub fn sigma(&self, h: &Mat) -> Mat {
        let p = self.patterns;
        self.mask.apply_mat(&shift_minus_mat(h, p), p) * self.hyper.w + &self.x_minus * self.hyper.u
    }

    fn restrict(&self, m: &Mat) -> Mat {
        m.select_rows(self.sup.iter()).select_columns(self.sup.iter())
    }

    fn embed(&self, m: &Mat) -> Mat {
        let mut out = Mat::zeros(self.dim(), self.dim());
        for (a, &i) in self.sup.iter().enumerate() {
            for (b, &j) in self.sup.iter().enumerate() {
                out[(i, j)] = m[(a, b)];
            }
        }
        out
    }

    /// Propagated tilt shifted back one step: Sᵀ M[K] S.
    pub(crate) fn back(&self, k: &Mat) -> Mat {
        shift_plus_mat(&self.mask.apply_mat(k, self.patterns), self.patterns)
    }

    fn eval(&self, h: &Mat) -> Result<Eval> {
        if h.nrows() != self.dim() || h.ncols() != self.dim() {
            return Err(Error::InvalidShape(format!("H must be {0}x{0}", self.dim())));
        }
        let h = linalg::symmetrize(h);
        let sigma = self.sigma(&h);
        let (z, logdet_sigma) = linalg::spd_inverse_logdet(&sigma, "Sigma(H)")?;
        let (hi, logdet_h) = linalg::spd_inverse_logdet(&h, "H")?;
        let k = &z * &h * &z - &z;
        let b = if self.sup.is_empty() {
            Mat::zeros(0, 0)
        } else {
            let a = self.restrict(&h) * self.hyper.v + Mat::identity(self.sup.len(), self.sup.len()) * self.kappa_eff();
            linalg::spd_inverse(&a, "vH_S + kappa")?
        };
        Ok(Eval { h, z, hi, k, b, logdet_h, logdet_sigma })
    }

    /// F(H).
    pub fn value(&self, h: &Mat) -> Result<f64> {
        let e = self.eval(h)?;
        let label = if self.sup.is_empty() { 0.0 } else { (&self.label * &e.b).trace() };
        let trace = (&e.h * &e.z).trace();
        Ok(0.5 * label + 0.5 * trace - 0.5 * e.logdet_h + 0.5 * e.logdet_sigma)
    }

    /// Label part of F: ½tr[Y_𝒮(vH_𝒮 + κ)⁻¹].
    pub fn label_value(&self, h: &Mat) -> Result<f64> {
        if self.sup.is_empty() {
            return Ok(0.0);
        }
        let e = self.eval(h)?;
        Ok(0.5 * (&self.label * &e.b).trace())
    }

    /// Label-free part of the gradient: ½Σ⁻¹ − ½H⁻¹ − ½w·SᵀM[K]S.
    pub fn prior_gradient(&self, h: &Mat) -> Result<Mat> {
        let e = self.eval(h)?;
        Ok(self.prior_grad_of(&e))
    }

    fn prior_grad_of(&self, e: &Eval) -> Mat {
        let g = (&e.z - &e.hi) * 0.5 - self.back(&e.k) * (0.5 * self.hyper.w);
        linalg::symmetrize(&g)
    }

    /// Label part of the gradient: −½v·E(B Y B)Eᵀ with B = (vH_𝒮 + κ)⁻¹.
    pub fn label_gradient(&self, h: &Mat) -> Result<Mat> {
        let e = self.eval(h)?;
        Ok(self.label_grad_of(&e))
    }

    fn label_grad_of(&self, e: &Eval) -> Mat {
        if self.sup.is_empty() {
            return Mat::zeros(self.dim(), self.dim());
        }
        let byb = &e.b * &self.label * &e.b;
        linalg::symmetrize(&(self.embed(&byb) * (-0.5 * self.hyper.v)))
    }

    /// ∂F/∂H.
    pub fn gradient(&self, h: &Mat) -> Result<Mat> {
        let e = self.eval(h)?;
        Ok(self.prior_grad_of(&e) + self.label_grad_of(&e))
    }

    fn prior_dirs(&self, e: &Eval, dir: &Mat) -> (Mat, Mat, Mat) {
        let p = self.patterns;
        let dsigma = self.mask.apply_mat(&shift_minus_mat(dir, p), p) * self.hyper.w;
        let dz = -(&e.z * &dsigma * &e.z);
        let dk = &dz * &e.h * &e.z + &e.z * dir * &e.z + &e.z * &e.h * &dz - &dz;
        (dsigma, dz, dk)
    }

    /// Directional derivative of the label-free gradient along `dir`.
    pub fn prior_hvp(&self, h: &Mat, dir: &Mat) -> Result<Mat> {
        let e = self.eval(h)?;
        Ok(self.prior_hvp_of(&e, dir))
    }

    fn prior_hvp_of(&self, e: &Eval, dir: &Mat) -> Mat {
        let (_, dz, dk) = self.prior_dirs(e, dir);
        let g = &dz * 0.5 + &e.hi * dir * &e.hi * 0.5 - self.back(&dk) * (0.5 * self.hyper.w);
        linalg::symmetrize(&g)
    }

    /// Directional derivative of the label gradient along `dir`.
    pub fn label_hvp(&self, h: &Mat, dir: &Mat) -> Result<Mat> {
        let e = self.eval(h)?;
        Ok(self.label_hvp_of(&e, dir))
    }

    fn label_hvp_of(&self, e: &Eval, dir: &Mat) -> Mat {
        if self.sup.is_empty() {
            return Mat::zeros(self.dim(), self.dim());
        }
        let da = self.restrict(dir) * self.hyper.v;
        let db = -(&e.b * &da * &e.b);
        let inner = &db * &self.label * &e.b + &e.b * &self.label * &db;
        linalg::symmetrize(&(self.embed(&inner) * (-0.5 * self.hyper.v)))
    }

    /// Hessian-vector product: directional derivative of the full gradient.
    pub fn hvp(&self, h: &Mat, dir: &Mat) -> Result<Mat> {
        let e = self.eval(h)?;
        Ok(self.prior_hvp_of(&e, dir) + self.label_hvp_of(&e, dir))
    }

    /// Second directional derivative of the label-free gradient, d²G₀[E, E].
    pub fn prior_second_derivative(&self, h: &Mat, dir: &Mat) -> Result<Mat> {
        let e = self.eval(h)?;
        let (dsigma, dz, _) = self.prior_dirs(&e, dir);
        let d2z = &e.z * &dsigma * &e.z * &dsigma * &e.z * 2.0;
        let d2hi = &e.hi * dir * &e.hi * dir * &e.hi * 2.0;
        let d2k = &d2z * &e.h * &e.z
            + &dz * dir * &e.z * 2.0
            + &dz * &e.h * &dz * 2.0
            + &e.z * dir * &dz * 2.0
            + &e.z * &e.h * &d2z
            - &d2z;
        let g = (&d2z - &d2hi) * 0.5 - self.back(&d2k) * (0.5 * self.hyper.w);
        Ok(linalg::symmetrize(&g))
    }

    /// ‖(Σ⁻¹ − H⁻¹) − (w·K⁺ + v·(vH+κ)⁻¹Y⁺(vH+κ)⁻¹)‖∞ evaluated block by block.
    ///
    /// K⁺ at hidden times (t, t') is the masked propagated tilt Σ⁻¹(H − Σ)Σ⁻¹ at
    /// (t+1, t'+1); it vanishes on the last hidden time, which feeds only the readout.
    pub fn closed_form_residual(&self, h: &Mat) -> Result<f64> {
        let e = self.eval(h)?;
        let steps = self.grid.steps();
        let p = self.patterns;
        let tilt = Kernel::new(steps, TimeRange::Hidden, p, self.mask.apply_mat(&e.k, p))?;
        let lhs = &e.z - &e.hi;
        let mut worst = 0.0f64;
        let tl = self.grid.range_len();
        let label = self.label_grad_of(&e) * (-2.0);
        for a in 0..tl {
            for b in 0..tl {
                let t = a + 1;
                let t2 = b + 1;
                let prop = if t < tl && t2 < tl {
                    tilt.block(t + 1, t2 + 1).expect("time in range") * self.hyper.w
                } else {
                    Mat::zeros(p, p)
                };
                for q in 0..p {
                    for r in 0..p {
                        let i = a * p + q;
                        let j = b * p + r;
                        let rhs = prop[(q, r)] + label[(i, j)];
                        worst = worst.max((lhs[(i, j)] - rhs).abs());
                    }
                }
            }
        }
        Ok(worst)
    }
}

/// F(H) for a hidden-range kernel.
pub fn neg_log_p(h: &Kernel, obj: &LinearObjective) -> Result<f64> {
    obj.value(h.data())
}

pub fn grad_neg_log_p(h: &Kernel, obj: &LinearObjective) -> Result<Kernel> {
    h.with_data(obj.gradient(h.data())?)
}

pub fn closed_form_residual(h: &Kernel, obj: &LinearObjective) -> Result<f64> {
    obj.closed_form_residual(h.data())
}

/// Trust-region Newton–CG settings.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SolverOptions {
    /// Stop when ‖∂F/∂H‖∞ falls below this.
    pub gtol: f64,
    pub max_iter: usize,
    pub initial_radius: f64,
    pub max_radius: f64,
    /// Determinants below this are treated as singular.
    pub det_floor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { gtol: 1e-9, max_iter: 2000, initial_radius: 1.0, max_radius: 1e3, det_floor: 1e-300 }
    }
}

/// How a solve ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailure,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub h_star: Kernel,
    pub objective_value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub closed_form_residual: f64,
    pub converged: bool,
    pub termination: Termination,
}

impl SolveReport {
    /// The report if converged, otherwise the matching error.
    pub fn ok(self) -> Result<Self> {
        match self.termination {
            Termination::Converged => Ok(self),
            Termination::MaxIterations => Err(Error::MaxIterations(self.iterations)),
            Termination::LineSearchFailure => Err(Error::LineSearchFailure),
        }
    }
}

/// Prior kernel plus `eps` on the first time-off-diagonal band (pattern-diagonal).
pub fn symmetry_breaking_init(h0: &Kernel, eps: f64) -> Kernel {
    let p = h0.patterns();
    let nt = h0.times().len();
    let mut m = h0.data().clone();
    for a in 0..nt.saturating_sub(1) {
        for q in 0..p {
            m[(a * p + q, (a + 1) * p + q)] += eps;
            m[((a + 1) * p + q, a * p + q)] += eps;
        }
    }
    if linalg::min_eigenvalue(&m) <= 0.0 {
        m = linalg::project_psd(&m, 1e-9);
    }
    h0.with_data(m).expect("same layout")
}

struct Point {
    l: Mat,
    h: Mat,
    f: f64,
    g: Mat,
    gl: Vec<f64>,
}

fn point(obj: &LinearObjective, l: Mat, floor: f64) -> Option<Point> {
    let n = l.nrows();
    let logdet: f64 = (0..n).map(|i| 2.0 * l[(i, i)].abs().ln()).sum();
    if !(logdet > floor.ln()) {
        return None;
    }
    let h = &l * l.transpose();
    let f = obj.value(&h).ok()?;
    let g = obj.gradient(&h).ok()?;
    if !f.is_finite() {
        return None;
    }
    let gl = linalg::tril_vec(&(&g * &l * 2.0));
    Some(Point { l, h, f, g, gl })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Curvature in factor coordinates: tril(2·dG[E]·L + 2·G·P) with E = PLᵀ + LPᵀ.
fn factor_hvp(obj: &LinearObjective, pt: &Point, pv: &[f64]) -> Vec<f64> {
    let n = pt.l.nrows();
    let pm = linalg::tril_mat(pv, n);
    let e = &pm * pt.l.transpose() + &pt.l * pm.transpose();
    let dg = obj.hvp(&pt.h, &e).unwrap_or_else(|_| Mat::zeros(n, n));
    linalg::tril_vec(&((dg * &pt.l + &pt.g * &pm) * 2.0))
}

/// Steihaug truncated CG on the trust-region subproblem.
fn steihaug(obj: &LinearObjective, pt: &Point, radius: f64) -> Vec<f64> {
    let m = pt.gl.len();
    let gnorm = norm(&pt.gl);
    let tol = gnorm * gnorm.sqrt().min(0.5);
    let mut z = vec![0.0; m];
    let mut r = pt.gl.clone();
    let mut d: Vec<f64> = r.iter().map(|x| -x).collect();
    if gnorm <= tol {
        return z;
    }
    let to_boundary = |z: &[f64], d: &[f64]| {
        let a = dot(d, d);
        let b = 2.0 * dot(z, d);
        let c = dot(z, z) - radius * radius;
        let tau = (-b + (b * b - 4.0 * a * c).max(0.0).sqrt()) / (2.0 * a);
        z.iter().zip(d).map(|(zi, di)| zi + tau * di).collect::<Vec<f64>>()
    };
    for _ in 0..(2 * m).max(10) {
        let bd = factor_hvp(obj, pt, &d);
        let dbd = dot(&d, &bd);
        if dbd <= 0.0 {
            return to_boundary(&z, &d);
        }
        let rr = dot(&r, &r);
        let alpha = rr / dbd;
        let z_new: Vec<f64> = z.iter().zip(&d).map(|(zi, di)| zi + alpha * di).collect();
        if norm(&z_new) >= radius {
            return to_boundary(&z, &d);
        }
        let r_new: Vec<f64> = r.iter().zip(&bd).map(|(ri, bi)| ri + alpha * bi).collect();
        z = z_new;
        if norm(&r_new) < tol {
            return z;
        }
        let beta = dot(&r_new, &r_new) / rr;
        d = d.iter().zip(&r_new).map(|(di, ri)| -ri + beta * di).collect();
        r = r_new;
    }
    z
}

/// MAP kernel by trust-region Newton–CG over the lower-triangular factor of H.
pub fn solve_map(obj: &LinearObjective, init: &Kernel, opts: &SolverOptions) -> Result<SolveReport> {
    let n = obj.dim();
    if init.dim() != n {
        return Err(Error::InvalidShape(format!("initial kernel must be {n}x{n}")));
    }
    let start = if linalg::min_eigenvalue(init.data()) > 0.0 {
        init.data().clone()
    } else {
        linalg::project_psd(init.data(), 1e-9)
    };
    let l0 = linalg::cholesky(&start, "initial kernel")?;
    let mut pt = point(obj, l0, opts.det_floor)
        .ok_or_else(|| Error::SingularKernel("objective undefined at the initial kernel".into()))?;
    let mut radius = opts.initial_radius;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;
    loop {
        let gnorm = linalg::max_abs(&pt.g);
        if gnorm <= opts.gtol {
            termination = Termination::Converged;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        if radius < 1e-15 {
            termination = Termination::LineSearchFailure;
            break;
        }
        iterations += 1;
        let step = steihaug(obj, &pt, radius);
        let snorm = norm(&step);
        let bs = factor_hvp(obj, &pt, &step);
        let predicted = -(dot(&pt.gl, &step) + 0.5 * dot(&step, &bs));
        let trial_l = &pt.l + linalg::tril_mat(&step, n);
        let trial = point(obj, trial_l, opts.det_floor);
        let Some(trial) = trial else {
            radius = 0.25 * snorm.min(radius);
            continue;
        };
        let actual = pt.f - trial.f;
        // Near convergence both reductions drop below rounding noise in F; then
        // judge the step by the gradient instead.
        let noise = 1e-13 * (1.0 + pt.f.abs());
        let rho = if predicted.abs() < noise {
            if linalg::max_abs(&trial.g) < gnorm { 1.0 } else { -1.0 }
        } else {
            actual / predicted
        };
        if rho < 0.25 {
            radius = 0.25 * snorm.min(radius);
        } else if rho > 0.75 && snorm >= 0.99 * radius {
            radius = (2.0 * radius).min(opts.max_radius);
        }
        if rho > 1e-4 {
            pt = trial;
        }
    }
    let h_star = init.with_data(pt.h.clone())?;
    let closed = obj.closed_form_residual(&pt.h)?;
    Ok(SolveReport {
        h_star,
        objective_value: pt.f,
        gradient_norm: linalg::max_abs(&pt.g),
        iterations,
        closed_form_residual: closed,
        converged: termination == Termination::Converged,
        termination,
    })
}

/// κ∞ → ∞ limit of (A + κ∞UUᵀ)⁻¹ with U spanning the unsupervised output entries:
/// A⁻¹ − A⁻¹U(UᵀA⁻¹U)⁻¹UᵀA⁻¹.
pub fn partial_supervision_projector(grid: &TimeGrid, a: &Kernel) -> Result<Kernel> {
    let p = a.patterns();
    let ainv = linalg::spd_inverse(a.data(), "A")?;
    let unsup = unsupervised_indices(grid, a);
    if unsup.is_empty() {
        return a.with_data(ainv);
    }
    let ainv_u = ainv.select_columns(unsup.iter());
    let utau = ainv_u.select_rows(unsup.iter());
    let m = linalg::spd_inverse(&utau, "U^T A^-1 U")?;
    let q = &ainv - &ainv_u * m * ainv_u.transpose();
    debug_assert_eq!(q.nrows(), a.times().len() * p);
    a.with_data(q)
}

/// (A + κ∞·UUᵀ)⁻¹ computed directly, for comparison with the projector.
pub fn penalized_inverse(grid: &TimeGrid, a: &Kernel, kappa_inf: f64) -> Result<Kernel> {
    let mut m = a.data().clone();
    for i in unsupervised_indices(grid, a) {
        m[(i, i)] += kappa_inf;
    }
    let lu = m.lu();
    let inv = lu.try_inverse().ok_or(Error::SingularSystem)?;
    a.with_data(inv)
}

fn unsupervised_indices(grid: &TimeGrid, a: &Kernel) -> Vec<usize> {
    let p = a.patterns();
    let off = 2 - a.range().first();
    a.times()
        .iter()
        .enumerate()
        .filter(|(_, &t)| !grid.is_supervised(t + off))
        .flat_map(|(k, _)| (0..p).map(move |q| k * p + q))
        .collect()
}
