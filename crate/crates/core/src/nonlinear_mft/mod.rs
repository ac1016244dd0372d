//! Saddle point of the nonlinear kernel action over (C, C̃).
//!
//! At the saddle
//!
//! - C = C_eql = ⟨φφᵀ⟩ and H_eql = ⟨hhᵀ⟩ under the tilted single-site measure
//!   N(h; 0, B) · exp(φᵀC̃φ), with base covariance B = w·M[C⁻] + u·X⁻;
//! - C̃ = C̃_eql = ½v·(vC_𝒮 + κ)⁻¹Y(vC_𝒮 + κ)⁻¹ + ½w·Sᵀ M[B⁻¹(H_eql − B)B⁻¹] S.
//!
//! The solver eliminates C̃ by solving C_eql(C̃) = C at every C. What remains is the
//! reduced objective F(C) = sup_C̃ S(C, C̃), whose gradient is C̃ − C̃_eql. C moves
//! along the preconditioned direction 2C(C̃ − C̃_eql)C with a backtracking line
//! search on F, projected onto the PSD cone after every step. All moments use one
//! fixed set of draws, so the sampled problem is deterministic.

mod moments;

use alloc::vec::Vec;

pub use moments::{
    exact_gaussian, exact_log_partition, importance, langevin, tilted_moments, Draws, Moments, ProposalSample, SamplerConfig, SamplerMethod,
    PROPOSAL_FLOOR,
};

use crate::error::{Error, Result};
use crate::kernelspace::{ArchMask, HyperParams, Kernel, TimeRange};
use crate::linalg::{self, Mat};
use crate::linear_mft::LinearObjective;
use crate::nngp::Activation;
use crate::tasks::Task;

/// Problem data: task kernels, hyperparameters, mask and nonlinearity.
#[derive(Debug, Clone)]
pub struct SaddleProblem {
    obj: LinearObjective,
    act: Activation,
}

impl SaddleProblem {
    pub fn new(task: &Task, hyper: &HyperParams, act: Activation, mask: ArchMask) -> Result<Self> {
        Ok(Self { obj: LinearObjective::new(task, hyper, mask)?, act })
    }

    pub fn from_objective(obj: LinearObjective, act: Activation) -> Self {
        Self { obj, act }
    }

    pub fn objective(&self) -> &LinearObjective {
        &self.obj
    }

    pub fn activation(&self) -> Activation {
        self.act
    }

    pub fn dim(&self) -> usize {
        self.obj.dim()
    }

    fn steps(&self) -> usize {
        self.obj.grid().steps()
    }

    /// Base covariance of the single-site measure.
    pub fn base_covariance(&self, c: &Mat) -> Mat {
        linalg::symmetrize(&self.obj.sigma(c))
    }

    /// C̃_eql given C and the tilted moment H_eql.
    pub fn dual_target(&self, c: &Mat, h_eql: &Mat) -> Result<Mat> {
        let base = self.base_covariance(c);
        let z = linalg::spd_inverse(&base, "base covariance")?;
        let tilt = &z * (h_eql - &base) * &z;
        let prop = self.obj.back(&tilt) * (0.5 * self.obj.hyper().w);
        let label = self.obj.label_gradient(c)? * -1.0;
        Ok(linalg::symmetrize(&(prop + label)))
    }
}

/// Iterate of the saddle solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleState {
    pub c: Kernel,
    pub c_tilde: Kernel,
    /// Most recent tilted moments at (C, C̃).
    pub h_eql: Kernel,
    pub c_eql: Kernel,
    /// Largest entrywise standard error of the moments.
    pub se: f64,
    /// Effective sample size of the last moment estimate.
    pub ess: f64,
    pub iteration: usize,
    pub residual: f64,
    /// Current outer step size.
    pub eta: f64,
}

impl SaddleState {
    /// Start from a postactivation kernel (typically the prior C0) with C̃ = 0.
    pub fn from_kernel(c0: &Kernel, eta: f64) -> Self {
        let zero = Kernel::zeros(c0.steps(), TimeRange::Hidden, c0.patterns());
        Self {
            c: c0.clone(),
            c_tilde: zero.clone(),
            h_eql: zero.clone(),
            c_eql: zero,
            se: 0.0,
            ess: 0.0,
            iteration: 0,
            residual: f64::INFINITY,
            eta,
        }
    }
}

/// Outer-loop settings.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SaddleOptions {
    pub eta: f64,
    pub eta_max: f64,
    pub eta_min: f64,
    /// Multiplicative step growth after every accepted step.
    pub growth: f64,
    /// Sufficient-decrease constant of the backtracking line search.
    pub armijo: f64,
    pub max_iter: usize,
    /// Convergence threshold on max(‖C − C_eql‖∞, ‖C̃ − C̃_eql‖∞).
    pub tol: f64,
    /// The effective threshold is max(tol, se_factor · SE). With the fixed draws the
    /// sampled system is deterministic and can be converged below its own SE, so
    /// this is off by default.
    pub se_factor: f64,
    pub inner_max: usize,
    pub inner_tol: f64,
    /// Error out when the best residual has not improved for this many
    /// iterations while the step sits at `eta_min`.
    pub stall_window: usize,
    pub psd_floor: f64,
    /// Refit the importance proposal when the ESS falls below this fraction of the samples.
    pub refit_ess: f64,
}

impl Default for SaddleOptions {
    fn default() -> Self {
        Self {
            eta: 0.05,
            eta_max: 0.5,
            eta_min: 1e-4,
            growth: 1.5,
            armijo: 1e-4,
            max_iter: 20_000,
            tol: 1e-3,
            se_factor: 0.0,
            inner_max: 50,
            inner_tol: 1e-10,
            stall_window: 50,
            psd_floor: 1e-9,
            refit_ess: 0.3,
        }
    }
}

/// Final state and the residual trace.
#[derive(Debug, Clone)]
pub struct SaddleReport {
    pub state: SaddleState,
    pub converged: bool,
    /// Residual after every outer iteration.
    pub history: Vec<f64>,
    /// Tolerance actually used at the final iterate.
    pub tolerance: f64,
}

/// (C̃ − C̃_eql, C − C_eql): the two saddle-point gradients.
pub fn saddle_gradients(problem: &SaddleProblem, c: &Mat, c_tilde: &Mat, m: &Moments) -> Result<(Mat, Mat)> {
    let target = problem.dual_target(c, &m.h_eql)?;
    Ok((c_tilde - target, c - &m.c_eql))
}

/// Moments at (C, C̃).
pub fn single_site_moments(problem: &SaddleProblem, c: &Mat, c_tilde: &Mat, draws: &Draws) -> Result<Moments> {
    tilted_moments(&problem.base_covariance(c), c_tilde, problem.act, draws)
}

/// Dual solution at fixed C.
struct DualSolve {
    ct: Mat,
    m: Moments,
    /// sup over C̃ of tr(C̃C) − log Z, when the estimator provides log Z.
    value: Option<f64>,
}

/// Dual solve at fixed C: C̃ with C_eql(C̃) ≈ C.
///
/// Importance sampling solves the sampled moment-matching problem by Newton on its
/// concave dual; the other estimators use the fixed-point update
/// C̃ ← C̃ + ½(C_eql⁻¹ − C⁻¹), exact in one step for Gaussian moments.
fn relax_dual(
    problem: &SaddleProblem,
    c: &Mat,
    start: &Mat,
    draws: &Draws,
    opts: &SaddleOptions,
    gap_tol: f64,
    proposal: Option<&ProposalSample>,
) -> Result<DualSolve> {
    let base = problem.base_covariance(c);
    if let Some(proposal) = proposal {
        let sample = proposal.rebase(&base)?;
        match sample.match_moment(c, start, gap_tol, opts.inner_max) {
            Err(Error::DegenerateTilt { .. }) => {}
            Err(e) => return Err(e),
            Ok((ct, m)) => {
                let value = Some(sample.dual_value(&ct, c));
                return Ok(DualSolve { ct, m, value });
            }
        }
    }
    let ci = linalg::spd_inverse(c, "C")?;
    let mut ct = start.clone();
    let mut m = single_site_moments(problem, c, &ct, draws)?;
    for _ in 0..opts.inner_max {
        let gap = linalg::max_abs(&(c - &m.c_eql));
        if gap <= gap_tol {
            break;
        }
        let Ok(cei) = linalg::spd_inverse(&m.c_eql, "C_eql") else {
            break;
        };
        let next = linalg::symmetrize(&(&ct + (cei - &ci) * 0.5));
        match single_site_moments(problem, c, &next, draws) {
            Ok(nm) => {
                ct = next;
                m = nm;
            }
            Err(Error::DegenerateTilt { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    let value = match m.method {
        SamplerMethod::ExactGaussian => Some(ct.component_mul(c).sum() - exact_log_partition(&base, &ct)?),
        _ => None,
    };
    Ok(DualSolve { ct, m, value })
}

/// Reduced objective F(C) = sup_C̃ S(C, C̃), when available.
fn reduced_value(problem: &SaddleProblem, c: &Mat, dual: &DualSolve) -> Result<Option<f64>> {
    match dual.value {
        Some(v) => Ok(Some(v + problem.obj.label_value(c)?)),
        None => Ok(None),
    }
}

/// (gradient of F, preconditioned descent direction 2C·∇F·C, residual).
fn primal_direction(problem: &SaddleProblem, c: &Mat, dual: &DualSolve) -> Result<(Mat, Mat, f64)> {
    let (g_ct, g_c) = saddle_gradients(problem, c, &dual.ct, &dual.m)?;
    let r = linalg::max_abs(&g_ct).max(linalg::max_abs(&g_c));
    let dir = c * &g_ct * c * 2.0;
    Ok((g_ct, dir, r))
}

/// Solve for the saddle point starting from `init`.
///
/// Fails with `NonDecreasingResidual` when the iteration stalls at the minimum step.
/// Hitting `max_iter` is reported through `converged = false`.
pub fn solve_saddle(
    problem: &SaddleProblem,
    init: &SaddleState,
    sampler: &SamplerConfig,
    opts: &SaddleOptions,
) -> Result<SaddleReport> {
    solve_saddle_with(problem, init, sampler, opts, |_| {})
}

/// [`solve_saddle`] with a callback invoked after every outer iteration (checkpointing, logging).
pub fn solve_saddle_with(
    problem: &SaddleProblem,
    init: &SaddleState,
    sampler: &SamplerConfig,
    opts: &SaddleOptions,
    mut on_iter: impl FnMut(&SaddleState),
) -> Result<SaddleReport> {
    let n = problem.dim();
    if init.c.dim() != n || init.c_tilde.dim() != n {
        return Err(Error::InvalidShape(alloc::format!("saddle state must be {n}x{n}")));
    }
    let steps = problem.steps();
    let p = problem.obj.patterns();
    let wrap = |m: Mat| Kernel::new(steps, TimeRange::Hidden, p, m);
    let draws = Draws::new(n, sampler);
    let refit_below = opts.refit_ess * sampler.n_samples as f64;
    let mut c = linalg::project_psd(init.c.data(), opts.psd_floor);
    // The importance draws stay fixed in h-space between refits, so the sampled F is a
    // smooth function of C whose gradient is exactly the sampled C̃ − C̃_eql.
    let importance = sampler.method == SamplerMethod::ImportanceFromBase;
    let fit = |c: &Mat, ct: &Mat| -> Result<Option<ProposalSample>> {
        if importance {
            Ok(Some(ProposalSample::new(&problem.base_covariance(c), ct, problem.act, &draws)?))
        } else {
            Ok(None)
        }
    };
    let mut proposal = fit(&c, init.c_tilde.data())?;
    let mut eta = if init.eta > 0.0 { init.eta } else { opts.eta };
    let mut history = Vec::new();
    let mut prev = f64::INFINITY;
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;
    let mut iteration = init.iteration;
    let mut converged = false;
    let mut tolerance;
    let mut dual =
        relax_dual(problem, &c, init.c_tilde.data(), &draws, opts, opts.inner_tol.max(1e-4), proposal.as_ref())?;
    loop {
        if dual.m.ess < refit_below {
            proposal = fit(&c, &dual.ct)?;
        }
        // the dual is solved well below the outer residual; with a saturating φ, C̃
        // is poorly determined by C and a loose dual shows up in the residual
        let gap_tol = opts.inner_tol.max((1e-3 * prev).min(1e-4));
        dual = relax_dual(problem, &c, &dual.ct, &draws, opts, gap_tol, proposal.as_ref())?;
        let f = reduced_value(problem, &c, &dual)?;
        let (grad, dir, r) = primal_direction(problem, &c, &dual)?;
        tolerance = opts.tol.max(opts.se_factor * dual.m.max_se());
        history.push(r);
        on_iter(&SaddleState {
            c: wrap(c.clone())?,
            c_tilde: wrap(dual.ct.clone())?,
            h_eql: wrap(dual.m.h_eql.clone())?,
            c_eql: wrap(dual.m.c_eql.clone())?,
            se: dual.m.max_se(),
            ess: dual.m.ess,
            iteration,
            residual: r,
            eta,
        });
        if !r.is_finite() {
            return Err(Error::NumericOverflow("saddle residual".into()));
        }
        if r <= tolerance {
            converged = true;
            break;
        }
        if iteration >= opts.max_iter {
            break;
        }
        if r < best {
            best = r;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= opts.stall_window && eta <= opts.eta_min {
            return Err(Error::NonDecreasingResidual { window: opts.stall_window });
        }
        prev = r;
        iteration += 1;

        // backtracking descent on F; a step that lowers the residual is also taken,
        // since sampled F and its gradient agree only up to the estimator error
        let slope = grad.component_mul(&dir).sum();
        loop {
            let c_try = linalg::project_psd(&(&c - &dir * eta), opts.psd_floor);
            let trial = match relax_dual(problem, &c_try, &dual.ct, &draws, opts, gap_tol, proposal.as_ref()) {
                Err(Error::DegenerateTilt { .. } | Error::SingularKernel(_) | Error::NumericOverflow(_)) => None,
                other => Some(other?),
            };
            let accept = match &trial {
                Some(t) => {
                    let (_, _, r_try) = primal_direction(problem, &c_try, t)?;
                    let armijo = match (f, reduced_value(problem, &c_try, t)?) {
                        (Some(f0), Some(f1)) => f1 <= f0 - opts.armijo * eta * slope,
                        _ => true,
                    };
                    r_try.is_finite() && (armijo || r_try < r)
                }
                None => false,
            };
            if accept || eta <= opts.eta_min {
                c = c_try;
                if let Some(t) = trial {
                    dual = t;
                }
                break;
            }
            eta = (0.5 * eta).max(opts.eta_min);
        }
        eta = (eta * opts.growth).min(opts.eta_max);
    }
    let state = SaddleState {
        c: wrap(c)?,
        c_tilde: wrap(dual.ct)?,
        h_eql: wrap(dual.m.h_eql.clone())?,
        c_eql: wrap(dual.m.c_eql.clone())?,
        se: dual.m.max_se(),
        ess: dual.m.ess,
        iteration,
        residual: *history.last().unwrap_or(&f64::INFINITY),
        eta,
    };
    Ok(SaddleReport { state, converged, history, tolerance })
}

/// Pattern-diagonal perturbation of the first time-off-diagonal band, to move an
/// exact (noise-free) iteration off the symmetric saddle.
pub fn perturb_initial(c0: &Kernel, eps: f64) -> Kernel {
    crate::linear_mft::symmetry_breaking_init(c0, eps)
}
