//! Moments of the single-site tilted Gaussian
//! p(h) ∝ N(h; 0, B) · exp(φ(h)ᵀ C̃ φ(h)).

// float methods under no_std; unused when a dependency pulls in std
#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::sync::Arc;
use alloc::vec::Vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::nngp::Activation;

/// Smallest whitened proposal precision eigenvalue.
pub const PROPOSAL_FLOOR: f64 = 0.05;

const PROPOSAL_REFITS: usize = 2;

/// Moment estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SamplerMethod {
    /// Self-normalized importance sampling from the base Gaussian; falls back to
    /// Langevin when the effective sample size degrades.
    ImportanceFromBase,
    /// Unadjusted Langevin chains on the tilted density.
    LangevinRefine,
    /// Closed-form Gaussian moments; linear activation only.
    ExactGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SamplerConfig {
    pub method: SamplerMethod,
    pub n_samples: usize,
    /// Langevin step in whitened coordinates.
    pub step: f64,
    /// Langevin burn-in steps per chain.
    pub burn_in: usize,
    /// Independent Langevin chains; standard errors come from the spread of chain means.
    pub chains: usize,
    /// Importance sampling switches to Langevin below this ESS fraction.
    pub min_ess_fraction: f64,
    /// Draw from a Gaussian fitted to the tilt instead of the base Gaussian.
    pub fit_proposal: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            method: SamplerMethod::ImportanceFromBase,
            n_samples: 20_000,
            step: 0.02,
            burn_in: 500,
            chains: 20,
            min_ess_fraction: 0.01,
            fit_proposal: true,
            seed: 0x5eed,
        }
    }
}

/// Estimated ⟨hhᵀ⟩ and ⟨φφᵀ⟩ with entrywise standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub h_eql: Mat,
    pub c_eql: Mat,
    pub h_se: Mat,
    pub c_se: Mat,
    /// Effective sample size (importance sampling) or sample count (other methods).
    pub ess: f64,
    pub method: SamplerMethod,
}

impl Moments {
    pub fn max_se(&self) -> f64 {
        linalg::max_abs(&self.h_se).max(linalg::max_abs(&self.c_se))
    }
}

/// Standard-normal draws reused across evaluations (common random numbers), so a
/// fixed seed turns every estimate into a deterministic, smooth function of (B, C̃).
#[derive(Debug, Clone)]
pub struct Draws {
    dim: usize,
    z: Vec<f64>,
    cfg: SamplerConfig,
}

impl Draws {
    pub fn new(dim: usize, cfg: &SamplerConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let count = match cfg.method {
            SamplerMethod::ExactGaussian => 0,
            _ => cfg.n_samples.max(cfg.chains) * dim,
        };
        let z = (0..count).map(|_| StandardNormal.sample(&mut rng)).collect();
        Self { dim, z, cfg: *cfg }
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Moments under the tilted measure with base covariance `base` and tilt `c_tilde`.
pub fn tilted_moments(base: &Mat, c_tilde: &Mat, act: Activation, draws: &Draws) -> Result<Moments> {
    match draws.cfg.method {
        SamplerMethod::ExactGaussian => exact_gaussian(base, c_tilde, act),
        SamplerMethod::ImportanceFromBase => match importance(base, c_tilde, act, draws) {
            Err(Error::DegenerateTilt { .. }) => langevin(base, c_tilde, act, draws),
            other => other,
        },
        SamplerMethod::LangevinRefine => langevin(base, c_tilde, act, draws),
    }
}

/// Importance sampling only; `DegenerateTilt` when the ESS drops below the configured fraction.
pub fn importance(base: &Mat, c_tilde: &Mat, act: Activation, draws: &Draws) -> Result<Moments> {
    ProposalSample::new(base, c_tilde, act, draws)?.moments(c_tilde)
}

/// Proposal draws for one base covariance, reusable for any tilt.
///
/// With `fit_proposal` the draws come from the Gaussian that the tilt would produce
/// for a linear φ, precision B⁻¹ − 2C̃, with whitened eigenvalues clipped to
/// [`PROPOSAL_FLOOR`, ∞) for linear φ and [`PROPOSAL_FLOOR`, 1] otherwise. For a
/// nonlinear φ that guess is then refined a few times by matching the weighted
/// second moment of h. Without `fit_proposal` the proposal is the base Gaussian.
#[derive(Debug, Clone)]
pub struct ProposalSample {
    n: usize,
    count: usize,
    hs: Arc<[f64]>,
    ps: Arc<[f64]>,
    /// log N(h; 0, Σ_q) up to the shared 2π term.
    log_q: Arc<[f64]>,
    /// log N(h; 0, B) − log N(h; 0, Σ_q) for the current base.
    log_ratio: Vec<f64>,
    base_inv: Mat,
    /// Exact proposal moments, used as control variates.
    h_prop: Mat,
    c_prop: Mat,
    /// Control-variate shifts: exact minus unweighted sample moments of the proposal.
    h_offset: Mat,
    c_offset: Mat,
    min_ess: f64,
}

impl ProposalSample {
    /// Draws fitted to `fit_tilt` (ignored without `fit_proposal`).
    pub fn new(base: &Mat, fit_tilt: &Mat, act: Activation, draws: &Draws) -> Result<Self> {
        let n = base.nrows();
        let l = linalg::cholesky(base, "base covariance")?;
        if !draws.cfg.fit_proposal {
            return Ok(Self::build(&l, &Mat::identity(n, n), act, draws));
        }
        // h = L·R·z with R = Q Λ^{-1/2} from the whitened precision I − 2LᵀC̃L
        let t = l.transpose() * fit_tilt * &l;
        let eig = nalgebra::SymmetricEigen::new(linalg::symmetrize(&(Mat::identity(n, n) - t * 2.0)));
        let cap = if act == Activation::Linear { f64::INFINITY } else { 1.0 };
        let scale = eig.eigenvalues.map(|e| 1.0 / e.clamp(PROPOSAL_FLOOR, cap).sqrt());
        let mut sample = Self::build(&l, &(&eig.eigenvectors * Mat::from_diagonal(&scale)), act, draws);
        if act == Activation::Linear {
            return Ok(sample);
        }
        // A bounded φ saturates the tilt, so the Gaussian guess is too wide. Refit the
        // proposal to the weighted second moment of h, whitened and kept at least as
        // wide as the base.
        for _ in 0..PROPOSAL_REFITS {
            let w = sample.raw_weights(fit_tilt)?;
            let mut s2 = Mat::zeros(n, n);
            for (k, wk) in w.iter().enumerate() {
                let h = nalgebra::DVectorView::from_slice(&sample.hs[k * n..(k + 1) * n], n);
                s2.ger(*wk, &h, &h, 1.0);
            }
            let li = l.clone().try_inverse().ok_or_else(|| Error::SingularKernel("base covariance".into()))?;
            let m = linalg::symmetrize(&(&li * s2 * li.transpose()));
            let eig = nalgebra::SymmetricEigen::new(m);
            let scale = eig.eigenvalues.map(|e| e.clamp(1.0, 1.0 / PROPOSAL_FLOOR).sqrt());
            sample = Self::build(&l, &(&eig.eigenvectors * Mat::from_diagonal(&scale)), act, draws);
        }
        Ok(sample)
    }

    fn build(l: &Mat, r: &Mat, act: Activation, draws: &Draws) -> Self {
        let n = l.nrows();
        let lr = l * r;
        let count = draws.cfg.n_samples;
        let mut hs = vec![0.0; count * n];
        let mut ps = vec![0.0; count * n];
        let mut log_q = vec![0.0; count];
        let mut log_ratio = vec![0.0; count];
        let log_det_lr = (0..n).map(|i| l[(i, i)].abs().ln()).sum::<f64>() + r.determinant().abs().ln();
        let log_det_l = (0..n).map(|i| l[(i, i)].abs().ln()).sum::<f64>();
        for s in 0..count {
            let z = &draws.z[s * n..(s + 1) * n];
            let mut uu = 0.0;
            let mut zz = 0.0;
            for i in 0..n {
                let u: f64 = (0..n).map(|j| r[(i, j)] * z[j]).sum();
                uu += u * u;
                zz += z[i] * z[i];
                let h: f64 = (0..n).map(|j| lr[(i, j)] * z[j]).sum();
                hs[s * n + i] = h;
                ps[s * n + i] = act.apply(h);
            }
            log_q[s] = -0.5 * zz - log_det_lr;
            log_ratio[s] = -0.5 * uu - log_det_l - log_q[s];
        }
        let h_prop = linalg::symmetrize(&(&lr * lr.transpose()));
        let c_prop = Mat::from_fn(n, n, |i, j| act.gaussian_moment(h_prop[(i, i)], h_prop[(i, j)], h_prop[(j, j)]));
        let h_offset = &h_prop - unweighted_outer(&hs, n, count);
        let c_offset = &c_prop - unweighted_outer(&ps, n, count);
        let base_inv = {
            let li = l.clone().solve_lower_triangular(&Mat::identity(n, n)).expect("cholesky factor is invertible");
            li.transpose() * li
        };
        Self {
            n,
            count,
            hs: hs.into(),
            ps: ps.into(),
            log_q: log_q.into(),
            log_ratio,
            base_inv,
            h_prop,
            c_prop,
            h_offset,
            c_offset,
            min_ess: draws.cfg.min_ess_fraction,
        }
    }

    /// The same draws reweighted to a new base covariance.
    pub fn rebase(&self, base: &Mat) -> Result<Self> {
        let n = self.n;
        let (base_inv, logdet) = linalg::spd_inverse_logdet(base, "base covariance")?;
        let log_ratio = (0..self.count)
            .map(|s| -0.5 * quad(&base_inv, &self.hs[s * n..(s + 1) * n]) - 0.5 * logdet - self.log_q[s])
            .collect();
        Ok(Self { log_ratio, base_inv, ..self.clone() })
    }

    fn phi(&self, s: usize) -> &[f64] {
        &self.ps[s * self.n..(s + 1) * self.n]
    }

    /// Sampled log Z(C̃) = log E_{N(0,B)}[exp(φᵀC̃φ)].
    pub fn log_partition(&self, c_tilde: &Mat) -> f64 {
        let logw: Vec<f64> = (0..self.count).map(|s| self.log_ratio[s] + quad(c_tilde, self.phi(s))).collect();
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + logw.iter().map(|x| (x - max).exp()).sum::<f64>().ln() - (self.count as f64).ln()
    }

    /// tr(C̃·(C − δ_C)) − log Ẑ(C̃) + ½tr(δ_H B⁻¹), with δ the control-variate shifts.
    ///
    /// Maximized over C̃ by [`match_moment`](Self::match_moment). As a function of the
    /// base covariance its gradient is −½B⁻¹(H_eql − B)B⁻¹ with the controlled H_eql,
    /// so the sampled objective and the controlled moments are exactly consistent.
    pub fn dual_value(&self, c_tilde: &Mat, c: &Mat) -> f64 {
        c_tilde.component_mul(&(c - &self.c_offset)).sum() - self.log_partition(c_tilde)
            + 0.5 * self.h_offset.component_mul(&self.base_inv).sum()
    }

    /// Normalized weights without the ESS check.
    fn raw_weights(&self, c_tilde: &Mat) -> Result<Vec<f64>> {
        let logw: Vec<f64> = (0..self.count).map(|s| self.log_ratio[s] + quad(c_tilde, self.phi(s))).collect();
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::NumericOverflow("importance log-weights".into()));
        }
        let w: Vec<f64> = logw.iter().map(|lw| (lw - max).exp()).collect();
        let sw: f64 = w.iter().sum();
        Ok(w.iter().map(|x| x / sw).collect())
    }

    /// Normalized weights and ESS for tilt `c_tilde`.
    fn weights(&self, c_tilde: &Mat) -> Result<(Vec<f64>, f64)> {
        let logw: Vec<f64> = (0..self.count).map(|s| self.log_ratio[s] + quad(c_tilde, self.phi(s))).collect();
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::NumericOverflow("importance log-weights".into()));
        }
        let w: Vec<f64> = logw.iter().map(|lw| (lw - max).exp()).collect();
        let sw: f64 = w.iter().sum();
        let sw2: f64 = w.iter().map(|x| x * x).sum();
        let ess = sw * sw / sw2;
        if ess < self.min_ess * self.count as f64 {
            return Err(Error::DegenerateTilt { ess });
        }
        Ok((w.iter().map(|x| x / sw).collect(), ess))
    }

    /// Tilted moments with control variates.
    pub fn moments(&self, c_tilde: &Mat) -> Result<Moments> {
        let (wn, ess) = self.weights(c_tilde)?;
        let (h_eql, h_se) = controlled_outer(&self.hs, &wn, self.n, &self.h_prop);
        let (c_eql, c_se) = controlled_outer(&self.ps, &wn, self.n, &self.c_prop);
        Ok(Moments { h_eql, c_eql, h_se, c_se, ess, method: SamplerMethod::ImportanceFromBase })
    }

    /// C̃ with C_eql(C̃) = `target`, by damped Newton on the concave dual
    /// tr(C̃·target) − log Ẑ(C̃), where Ẑ is the sample average of the weights.
    /// Stops once ‖target − C_eql‖∞ ≤ `tol`.
    pub fn match_moment(&self, target: &Mat, start: &Mat, tol: f64, max_iter: usize) -> Result<(Mat, Moments)> {
        let n = self.n;
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
        let k = pairs.len();
        let mut ct = start.clone();
        let mut m = self.moments(&ct)?;
        let shifted = target - &self.c_offset;
        let dual = |ct: &Mat| -> f64 {
            // log Ẑ up to a constant
            let logw: Vec<f64> = (0..self.count).map(|s| self.log_ratio[s] + quad(ct, self.phi(s))).collect();
            let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lz = max + logw.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            ct.component_mul(&shifted).sum() - lz
        };
        let mut value = dual(&ct);
        for _ in 0..max_iter {
            let gap = target - &m.c_eql;
            if linalg::max_abs(&gap) <= tol {
                break;
            }
            // Hessian of log Ẑ in pair coordinates θ_ij (i ≤ j), features (2 − δᵢⱼ)φᵢφⱼ
            let (wn, _) = self.weights(&ct)?;
            let mut mean = DVector::<f64>::zeros(k);
            let mut feat = vec![0.0; k];
            let mut hess = Mat::zeros(k, k);
            for (s, &ws) in wn.iter().enumerate() {
                let phi = self.phi(s);
                for (a, &(i, j)) in pairs.iter().enumerate() {
                    feat[a] = if i == j { phi[i] * phi[i] } else { 2.0 * phi[i] * phi[j] };
                    mean[a] += ws * feat[a];
                }
                for a in 0..k {
                    for b in a..k {
                        hess[(a, b)] += ws * feat[a] * feat[b];
                    }
                }
            }
            for a in 0..k {
                for b in a..k {
                    let v = hess[(a, b)] - mean[a] * mean[b];
                    hess[(a, b)] = v;
                    hess[(b, a)] = v;
                }
            }
            let ridge = 1e-10 * (1.0 + hess.diagonal().max());
            for a in 0..k {
                hess[(a, a)] += ridge;
            }
            let grad = DVector::from_iterator(
                k,
                pairs.iter().map(|&(i, j)| if i == j { gap[(i, i)] } else { 2.0 * gap[(i, j)] }),
            );
            let Some(chol) = hess.clone().cholesky() else {
                break;
            };
            let step = chol.solve(&grad);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let mut next = ct.clone();
                for (a, &(i, j)) in pairs.iter().enumerate() {
                    next[(i, j)] += t * step[a];
                    if i != j {
                        next[(j, i)] += t * step[a];
                    }
                }
                if let Ok(nm) = self.moments(&next) {
                    let nv = dual(&next);
                    if nv >= value + 1e-4 * t * grad.dot(&step) {
                        ct = next;
                        m = nm;
                        value = nv;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Ok((ct, m))
    }

}

fn unweighted_outer(xs: &[f64], n: usize, count: usize) -> Mat {
    let mut m = Mat::zeros(n, n);
    for s in 0..count {
        let x = &xs[s * n..(s + 1) * n];
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] += x[i] * x[j];
            }
        }
    }
    m / count as f64
}

fn quad(m: &Mat, x: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += m[(i, j)] * x[j];
        }
        acc += x[i] * row;
    }
    acc
}

/// Σₛ wₛ xₛxₛᵀ − ((1/n)Σₛ xₛxₛᵀ − M₀), where M₀ is the exact untilted moment.
///
/// Standard error from the per-sample influence wₛ(xᵢxⱼ − μᵢⱼ) − (xᵢxⱼ − x̄ᵢⱼ)/n.
fn controlled_outer(xs: &[f64], w: &[f64], n: usize, exact_base: &Mat) -> (Mat, Mat) {
    let count = w.len() as f64;
    let mut tilted = Mat::zeros(n, n);
    let mut plain = Mat::zeros(n, n);
    for (s, &ws) in w.iter().enumerate() {
        let x = &xs[s * n..(s + 1) * n];
        for i in 0..n {
            for j in i..n {
                let xx = x[i] * x[j];
                tilted[(i, j)] += ws * xx;
                plain[(i, j)] += xx / count;
            }
        }
    }
    let mut var = Mat::zeros(n, n);
    for (s, &ws) in w.iter().enumerate() {
        let x = &xs[s * n..(s + 1) * n];
        for i in 0..n {
            for j in i..n {
                let xx = x[i] * x[j];
                let psi = ws * (xx - tilted[(i, j)]) - (xx - plain[(i, j)]) / count;
                var[(i, j)] += psi * psi;
            }
        }
    }
    let mut mean = Mat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let m = tilted[(i, j)] - plain[(i, j)] + exact_base[(i, j)];
            mean[(i, j)] = m;
            mean[(j, i)] = m;
            var[(j, i)] = var[(i, j)];
        }
    }
    (mean, var.map(|v| v.sqrt()))
}

/// Unadjusted Langevin in whitened coordinates z (h = Lz):
/// log π(z) = −½|z|² + φ(Lz)ᵀC̃φ(Lz).
pub fn langevin(base: &Mat, c_tilde: &Mat, act: Activation, draws: &Draws) -> Result<Moments> {
    let n = base.nrows();
    let l = linalg::cholesky(base, "base covariance")?;
    let cfg = &draws.cfg;
    let chains = cfg.chains.max(2);
    let per_chain = (cfg.n_samples / chains).max(1);
    let step = cfg.step;
    let noise = (2.0 * step).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut chain_h = Vec::with_capacity(chains);
    let mut chain_c = Vec::with_capacity(chains);
    let mut h = vec![0.0; n];
    let mut phi = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for k in 0..chains {
        let mut z: Vec<f64> = draws.z[k * n..(k + 1) * n].to_vec();
        let mut acc_h = Mat::zeros(n, n);
        let mut acc_c = Mat::zeros(n, n);
        for it in 0..cfg.burn_in + per_chain {
            for i in 0..n {
                h[i] = (0..=i).map(|j| l[(i, j)] * z[j]).sum();
                phi[i] = act.apply(h[i]);
            }
            // ∂/∂h of φᵀC̃φ = 2 φ'(h) ⊙ C̃φ, pulled back by Lᵀ
            for i in 0..n {
                let row: f64 = (0..n).map(|j| c_tilde[(i, j)] * phi[j]).sum();
                tmp[i] = 2.0 * act.derivative(h[i]) * row;
            }
            for j in 0..n {
                grad[j] = -z[j] + (j..n).map(|i| l[(i, j)] * tmp[i]).sum::<f64>();
            }
            if it >= cfg.burn_in {
                for i in 0..n {
                    for j in i..n {
                        acc_h[(i, j)] += h[i] * h[j];
                        acc_c[(i, j)] += phi[i] * phi[j];
                    }
                }
            }
            for j in 0..n {
                let xi: f64 = StandardNormal.sample(&mut rng);
                z[j] += step * grad[j] + noise * xi;
                if !z[j].is_finite() || z[j].abs() > 1e8 {
                    return Err(Error::NumericOverflow("Langevin chain diverged".into()));
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                acc_h[(i, j)] = acc_h[(j, i)];
                acc_c[(i, j)] = acc_c[(j, i)];
            }
        }
        chain_h.push(acc_h / per_chain as f64);
        chain_c.push(acc_c / per_chain as f64);
    }
    let (h_eql, h_se) = chain_stats(&chain_h);
    let (c_eql, c_se) = chain_stats(&chain_c);
    Ok(Moments {
        h_eql,
        c_eql,
        h_se,
        c_se,
        ess: (chains * per_chain) as f64,
        method: SamplerMethod::LangevinRefine,
    })
}

fn chain_stats(means: &[Mat]) -> (Mat, Mat) {
    let k = means.len() as f64;
    let n = means[0].nrows();
    let mut mean = Mat::zeros(n, n);
    for m in means {
        mean += m;
    }
    mean /= k;
    let mut var = Mat::zeros(n, n);
    for m in means {
        let d = m - &mean;
        var += d.component_mul(&d);
    }
    let se = (var / (k * (k - 1.0))).map(|v| v.sqrt());
    (mean, se)
}

/// Linear φ: the tilted measure is Gaussian with precision B⁻¹ − 2C̃.
pub fn exact_gaussian(base: &Mat, c_tilde: &Mat, act: Activation) -> Result<Moments> {
    if act != Activation::Linear {
        return Err(Error::InvalidParameter("exact Gaussian moments need a linear activation".into()));
    }
    let bi = linalg::spd_inverse(base, "base covariance")?;
    let prec = bi - c_tilde * 2.0;
    let cov = linalg::spd_inverse(&prec, "tilted precision").map_err(|_| Error::DegenerateTilt { ess: 0.0 })?;
    let n = cov.nrows();
    Ok(Moments {
        h_eql: cov.clone(),
        c_eql: cov,
        h_se: Mat::zeros(n, n),
        c_se: Mat::zeros(n, n),
        ess: f64::INFINITY,
        method: SamplerMethod::ExactGaussian,
    })
}

/// log Z(C̃) = −½ ln det(I − 2BC̃) for a linear φ.
pub fn exact_log_partition(base: &Mat, c_tilde: &Mat) -> Result<f64> {
    let (bi, logdet_b) = linalg::spd_inverse_logdet(base, "base covariance")?;
    let (_, logdet_p) =
        linalg::spd_inverse_logdet(&(bi - c_tilde * 2.0), "tilted precision").map_err(|_| Error::DegenerateTilt { ess: 0.0 })?;
    Ok(-0.5 * (logdet_p + logdet_b))
}
