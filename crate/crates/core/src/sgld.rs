//! Weight-space training by stochastic gradient Langevin dynamics.
//!
//! Network: h^t = W^{(t−1)}φ(h^{t−1}) + U x^{t−1} with h⁰ = 0, f^{t+1} = Vφ(h^t),
//! W^{(t)} = W for the RNN and independent per layer for the DNN. Prior variances
//! are G_U = u/D, G_W = w/N, G_V = v/N² and the temperature is Κ = κ/N, so the
//! stationary law is ∝ exp(−½Σ(y − f)²/Κ − ½Σθ²/G_θ).

// float methods under no_std; unused when a dependency pulls in std
#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::kernelspace::{ArchMask, HyperParams, Kernel, TimeRange};
use crate::linalg::Mat;
use crate::nngp::Activation;
use crate::tasks::Task;

/// Network weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightState {
    /// N×D input weights.
    pub u: Mat,
    /// One N×N matrix for the RNN; T₋ − 1 matrices (W^{(1)}, …) for the DNN.
    pub w: Vec<Mat>,
    /// Readout of length N.
    pub v: DVector<f64>,
    pub arch: ArchMask,
    pub rng_seed: u64,
}

/// Per-block gradients of ½Σ_{p, t∈𝒯}(y − f)².
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub u: Mat,
    /// Per-layer gradients for both architectures; for the RNN, the shared-weight
    /// gradient is their sum (see [`Gradients::tied`]).
    pub w_layers: Vec<Mat>,
    pub v: DVector<f64>,
}

impl Gradients {
    /// Sum of the per-layer W gradients.
    pub fn tied(&self) -> Mat {
        let mut acc = self.w_layers[0].clone();
        for g in &self.w_layers[1..] {
            acc += g;
        }
        acc
    }
}

/// Activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    /// h[t − 1] is the N×P preactivation at hidden time t.
    pub h: Vec<Mat>,
    /// f[(t − 2)·P + p] for output times 2..=T.
    pub f: Vec<f64>,
}

fn layer_count(arch: ArchMask, steps: usize) -> usize {
    match arch {
        ArchMask::Rnn => 1,
        ArchMask::Dnn => steps.saturating_sub(2).max(1),
    }
}

impl WeightState {
    /// Draw every block from its prior.
    pub fn from_prior(task: &Task, hyper: &HyperParams, arch: ArchMask, seed: u64) -> Result<Self> {
        hyper.validate()?;
        if hyper.d != task.input_dim() {
            return Err(Error::InvalidShape("hyper.d must equal the task input dimension".into()));
        }
        let n = hyper.n;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r: usize, c: usize, var: f64| {
            let s = var.sqrt();
            Mat::from_fn(r, c, |_, _| s * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        };
        let u = draw(n, hyper.d, hyper.g_u());
        let w = (0..layer_count(arch, task.steps())).map(|_| draw(n, n, hyper.g_w())).collect();
        let v = DVector::from_column_slice(draw(n, 1, hyper.g_v()).as_slice());
        Ok(Self { u, w, v, arch, rng_seed: seed })
    }

    pub fn width(&self) -> usize {
        self.u.nrows()
    }

    /// Matrix acting on φ(h^t) to produce h^{t+1}, for hidden time t ≥ 1.
    fn w_at(&self, t: usize) -> &Mat {
        match self.arch {
            ArchMask::Rnn => &self.w[0],
            ArchMask::Dnn => &self.w[t - 1],
        }
    }

    fn check(&self, task: &Task) -> Result<()> {
        let n = self.width();
        let ok = self.u.ncols() == task.input_dim()
            && self.v.len() == n
            && self.w.len() == layer_count(self.arch, task.steps())
            && self.w.iter().all(|m| m.nrows() == n && m.ncols() == n);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidShape("weights do not match the task".into()))
        }
    }
}

fn inputs(task: &Task, t: usize) -> Mat {
    let p = task.patterns();
    let d = task.input_dim();
    Mat::from_fn(d, p, |i, q| task.x(t, q)[i])
}

/// Unrolled forward pass. `NumericOverflow` when some |h| exceeds `bound`.
pub fn forward(state: &WeightState, task: &Task, act: Activation, bound: f64) -> Result<Forward> {
    state.check(task)?;
    let steps = task.steps();
    let p = task.patterns();
    let mut h: Vec<Mat> = Vec::with_capacity(steps - 1);
    let mut f = vec![0.0; (steps - 1) * p];
    let mut phi_prev: Option<Mat> = None;
    for t in 1..steps {
        let mut ht = &state.u * inputs(task, t - 1);
        if let Some(phi) = &phi_prev {
            ht += state.w_at(t - 1) * phi;
        }
        if ht.iter().any(|x| !(x.abs() <= bound)) {
            return Err(Error::NumericOverflow(alloc::format!("|h| above {bound:e} at t = {t}")));
        }
        let phi = ht.map(|x| act.apply(x));
        let out = state.v.transpose() * &phi;
        for q in 0..p {
            f[(t - 1) * p + q] = out[(0, q)];
        }
        h.push(ht);
        phi_prev = Some(phi);
    }
    Ok(Forward { h, f })
}

/// ½Σ_{p, t∈𝒯}(y − f)² from a forward pass.
fn sum_squared_error(fw: &Forward, task: &Task) -> f64 {
    let p = task.patterns();
    task.grid()
        .supervised()
        .iter()
        .map(|&t| (0..p).map(|q| 0.5 * (task.y(t, q) - fw.f[(t - 2) * p + q]).powi(2)).sum::<f64>())
        .sum()
}

/// Training loss L = (1/(2P|𝒯|))Σ_{p, t∈𝒯}(y − f)².
pub fn loss(state: &WeightState, task: &Task, act: Activation) -> Result<f64> {
    let fw = forward(state, task, act, f64::INFINITY)?;
    let count = (task.patterns() * task.grid().supervised().len()).max(1);
    Ok(sum_squared_error(&fw, task) / count as f64)
}

/// Reverse-mode gradients of ½Σ(y − f)² through the unrolled network.
pub fn gradients(state: &WeightState, task: &Task, act: Activation, fw: &Forward) -> Gradients {
    backprop(state, task, act, fw, false)
}

/// With `summed`, the W gradient comes back as a single matrix (the tied gradient).
fn backprop(state: &WeightState, task: &Task, act: Activation, fw: &Forward, summed: bool) -> Gradients {
    let steps = task.steps();
    let p = task.patterns();
    let n = state.width();
    let mut gu = Mat::zeros(n, task.input_dim());
    let mut gv = DVector::zeros(n);
    let layers = if summed { 1 } else { steps.saturating_sub(2).max(1) };
    let mut gw = vec![Mat::zeros(n, n); layers];
    // summed mode: columns of ∂/∂h^{t+1} and φ(h^t), multiplied once at the end
    let mut g_cols: Vec<Mat> = Vec::new();
    let mut phi_cols: Vec<&Mat> = Vec::new();
    let phis: Vec<Mat> = fw.h.iter().map(|h| h.map(|x| act.apply(x))).collect();
    // gradient w.r.t. h^{t+1}, carried backwards
    let mut g_next: Option<Mat> = None;
    for t in (1..steps).rev() {
        // df for f^{t+1}
        let mut df = Mat::zeros(1, p);
        if task.grid().is_supervised(t + 1) {
            for q in 0..p {
                df[(0, q)] = fw.f[(t - 1) * p + q] - task.y(t + 1, q);
            }
        }
        let phi = &phis[t - 1];
        gv += phi * df.transpose();
        let mut g_phi = &state.v * &df;
        if let Some(gn) = &g_next {
            g_phi += state.w_at(t).tr_mul(gn);
            if summed {
                g_cols.push(gn.clone());
                phi_cols.push(phi);
            } else {
                gw[t - 1].gemm(1.0, gn, &phi.transpose(), 1.0);
            }
        }
        let ht = &fw.h[t - 1];
        let gh = g_phi.zip_map(ht, |g, x| g * act.derivative(x));
        gu += &gh * inputs(task, t - 1).transpose();
        g_next = Some(gh);
    }
    if !g_cols.is_empty() {
        let k = g_cols.len() * p;
        let g_all = Mat::from_fn(n, k, |i, j| g_cols[j / p][(i, j % p)]);
        let phi_all = Mat::from_fn(n, k, |i, j| phi_cols[j / p][(i, j % p)]);
        gw[0].gemm(1.0, &g_all, &phi_all.transpose(), 0.0);
    }
    Gradients { u: gu, w_layers: gw, v: gv }
}

/// How the step size is distributed over parameter blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StepMode {
    /// Each block moves with ds_θ = ds·G_θ/Κ, so every block relaxes toward its
    /// prior at unit rate regardless of N (a constant diagonal preconditioner;
    /// the stationary law is unchanged).
    Intensive,
    /// One step ds for every block, literally θ ← θ − ∇(PT·L)ds − (Κ/G_θ)θ ds + √(2Κ ds)ξ.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SgldConfig {
    pub ds: f64,
    pub n_steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub mode: StepMode,
    /// Disable to sample the prior.
    pub use_labels: bool,
    /// DNN only: apply the summed layer gradient and one noise draw to every layer.
    pub tie_layers: bool,
    /// |h| bound for `NumericOverflow`.
    pub overflow: f64,
}

impl Default for SgldConfig {
    fn default() -> Self {
        Self {
            ds: 1e-2,
            n_steps: 4000,
            burn_in: 2000,
            thin: 10,
            seed: 1,
            mode: StepMode::Intensive,
            use_labels: true,
            tie_layers: false,
            overflow: 1e8,
        }
    }
}

impl SgldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ds > 0.0) || self.burn_in >= self.n_steps || self.thin == 0 {
            return Err(Error::InvalidParameter("need ds > 0, burn_in < n_steps, thin >= 1".into()));
        }
        Ok(())
    }
}

/// Langevin integrator with its own noise stream.
pub struct Sgld {
    // a fast stream: at large N the step is dominated by noise generation
    rng: Xoshiro256PlusPlus,
}

impl Sgld {
    pub fn new(seed: u64) -> Self {
        Self { rng: Xoshiro256PlusPlus::seed_from_u64(seed) }
    }

    /// θ ← (1 − decay)θ − lr·∇ + sd·ξ in one pass.
    fn update(&mut self, theta: &mut Mat, grad: Option<&Mat>, lr: f64, decay: f64, sd: f64) {
        let keep = 1.0 - decay;
        match grad {
            Some(g) => theta.zip_apply(g, |a, b| {
                let xi: f64 = StandardNormal.sample(&mut self.rng);
                *a = keep * *a - lr * b + sd * xi;
            }),
            None => theta.apply(|a| {
                let xi: f64 = StandardNormal.sample(&mut self.rng);
                *a = keep * *a + sd * xi;
            }),
        }
    }

    /// One Euler–Maruyama step. Returns the loss L before the update.
    pub fn step(
        &mut self,
        state: &mut WeightState,
        task: &Task,
        hyper: &HyperParams,
        act: Activation,
        cfg: &SgldConfig,
    ) -> Result<f64> {
        let kappa = hyper.kappa_ext();
        if cfg.use_labels && !(kappa > 0.0) {
            return Err(Error::InvalidParameter("SGLD with labels needs kappa > 0".into()));
        }
        let fw = forward(state, task, act, cfg.overflow)?;
        let count = (task.patterns() * task.grid().supervised().len()).max(1);
        let l = sum_squared_error(&fw, task) / count as f64;
        let tie = state.arch == ArchMask::Rnn || cfg.tie_layers;
        let g = if cfg.use_labels { Some(backprop(state, task, act, &fw, tie)) } else { None };
        // (drift scale on ∇, decay rate, noise std)
        let coeffs = |var: f64| match cfg.mode {
            StepMode::Intensive => {
                let lr = if kappa > 0.0 { cfg.ds * var / kappa } else { 0.0 };
                (lr, cfg.ds, (2.0 * var * cfg.ds).sqrt())
            }
            StepMode::Uniform => (cfg.ds, cfg.ds * kappa / var, (2.0 * kappa * cfg.ds).sqrt()),
        };

        let (lr, decay, sd) = coeffs(hyper.g_u());
        self.update(&mut state.u, g.as_ref().map(|g| &g.u), lr, decay, sd);

        let (lr, decay, sd) = coeffs(hyper.g_w());
        if tie && state.w.len() > 1 {
            // tied DNN layers: the same step and noise draw on every layer
            let n = state.width();
            let mut shared = Mat::zeros(n, n);
            self.update(&mut shared, None, 0.0, 0.0, sd);
            let gw = g.as_ref().map(|g| &g.w_layers[0]);
            for w in state.w.iter_mut() {
                match gw {
                    Some(gw) => w.zip_apply(gw, |a, b| *a = (1.0 - decay) * *a - lr * b),
                    None => *w *= 1.0 - decay,
                }
                *w += &shared;
            }
        } else {
            for (k, w) in state.w.iter_mut().enumerate() {
                self.update(w, g.as_ref().map(|g| &g.w_layers[k]), lr, decay, sd);
            }
        }

        let (lr, decay, sd) = coeffs(hyper.g_v());
        let mut vm = Mat::from_column_slice(state.v.len(), 1, state.v.as_slice());
        let gv = g.as_ref().map(|g| Mat::from_column_slice(g.v.len(), 1, g.v.as_slice()));
        self.update(&mut vm, gv.as_ref(), lr, decay, sd);
        state.v = DVector::from_column_slice(vm.as_slice());
        Ok(l)
    }
}

/// One SGLD step on a copy of `state`. The noise is seeded from `state.rng_seed`,
/// which the returned state advances; [`Sgld`] is cheaper for long trajectories.
pub fn sgld_step(
    state: &WeightState,
    task: &Task,
    hyper: &HyperParams,
    act: Activation,
    cfg: &SgldConfig,
) -> Result<WeightState> {
    let mut next = state.clone();
    Sgld::new(state.rng_seed ^ cfg.seed).step(&mut next, task, hyper, act, cfg)?;
    next.rng_seed = next.rng_seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Ok(next)
}

/// Averages over the retained samples of a run.
#[derive(Debug, Clone)]
pub struct TrainResult {
    /// ⟨(1/N)φφᵀ⟩ on the hidden range.
    pub c_exp: Kernel,
    /// ⟨(1/N)hhᵀ⟩ on the hidden range.
    pub h_exp: Kernel,
    /// One network output vector (layout of [`Forward::f`]) per retained sample.
    pub f_samples: Vec<Vec<f64>>,
    /// (step, loss) every `thin` steps over the whole run.
    pub loss_trace: Vec<(usize, f64)>,
    /// Mean θ²/G_θ over entries and retained samples: [U, W (all layers), V].
    pub variance_ratio: [f64; 3],
    /// Post-burn-in loss means of the two halves agree within 5%.
    pub stationary: bool,
    pub final_state: WeightState,
}

/// Empirical (1/N)·Σᵢ aᵢ(t,p) aᵢ(t',p') over the flattened hidden index.
fn empirical_kernel(mats: &[Mat]) -> Mat {
    let n = mats[0].nrows();
    let p = mats[0].ncols();
    let big = Mat::from_fn(n, mats.len() * p, |i, j| mats[j / p][(i, j % p)]);
    big.transpose() * &big / n as f64
}

/// Train from the prior and average kernels over thinned post-burn-in samples.
pub fn train_and_measure(
    task: &Task,
    hyper: &HyperParams,
    act: Activation,
    arch: ArchMask,
    cfg: &SgldConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    let mut state = WeightState::from_prior(task, hyper, arch, cfg.seed)?;
    let mut sampler = Sgld::new(cfg.seed.wrapping_add(0x516c64));
    let steps = task.steps();
    let p = task.patterns();
    let dim = (steps - 1) * p;
    let mut c_acc = Mat::zeros(dim, dim);
    let mut h_acc = Mat::zeros(dim, dim);
    let mut f_samples = Vec::new();
    let mut loss_trace = Vec::new();
    let mut post_losses = Vec::new();
    let mut var_acc = [0.0; 3];
    let mut kept = 0usize;
    for s in 0..cfg.n_steps {
        let l = sampler.step(&mut state, task, hyper, act, cfg)?;
        if s % cfg.thin == 0 {
            loss_trace.push((s, l));
        }
        if s >= cfg.burn_in {
            post_losses.push(l);
            if (s - cfg.burn_in).is_multiple_of(cfg.thin) {
                let fw = forward(&state, task, act, cfg.overflow)?;
                let phis: Vec<Mat> = fw.h.iter().map(|h| h.map(|x| act.apply(x))).collect();
                c_acc += empirical_kernel(&phis);
                h_acc += empirical_kernel(&fw.h);
                f_samples.push(fw.f);
                var_acc[0] += mean_sq(&state.u) / hyper.g_u();
                var_acc[1] += state.w.iter().map(mean_sq).sum::<f64>() / state.w.len() as f64 / hyper.g_w();
                var_acc[2] += state.v.iter().map(|x| x * x).sum::<f64>() / state.v.len() as f64 / hyper.g_v();
                kept += 1;
            }
        }
    }
    let k = kept as f64;
    let half = post_losses.len() / 2;
    let m1 = post_losses[..half].iter().sum::<f64>() / half.max(1) as f64;
    let m2 = post_losses[half..].iter().sum::<f64>() / (post_losses.len() - half).max(1) as f64;
    let stationary = (m1 - m2).abs() <= 0.05 * m1.abs().max(m2.abs()).max(f64::MIN_POSITIVE);
    Ok(TrainResult {
        c_exp: Kernel::new(steps, TimeRange::Hidden, p, c_acc / k)?,
        h_exp: Kernel::new(steps, TimeRange::Hidden, p, h_acc / k)?,
        f_samples,
        loss_trace,
        variance_ratio: var_acc.map(|v| v / k),
        stationary,
        final_state: state,
    })
}

fn mean_sq(m: &Mat) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>() / m.len() as f64
}
