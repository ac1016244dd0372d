//! One runner per experiment. Each writes kernels and tables into the run
//! directory and returns the scalar metrics that go into metrics.csv.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use kmft_core::inference::{autocorrelation, cka_kernels, endpoint_predictor, sequence_predictor, PredictorResult};
use kmft_core::linear_mft::{solve_map, symmetry_breaking_init, LinearObjective};
use kmft_core::nngp::{fixed_point_residual, nngp_kernel};
use kmft_core::nonlinear_mft::{perturb_initial, solve_saddle_with, SaddleProblem, SaddleState};
use kmft_core::perturbation::{expansion_error, perturbative_kernel};
use kmft_core::sgld::{train_and_measure, SgldConfig};
use kmft_core::{landau, tasks, Activation, ArchMask, HyperParams, Kernel, Task};
use serde::Serialize;

use crate::config::{Experiment, ExperimentConfig};
use crate::error::{IoContext, RunError};
use crate::formats::{
    config_hash, load_checkpoint, save_checkpoint, write_kernel, write_manifest, write_table, ErrorReport, Manifest,
    Metrics, Versions,
};

/// Output directory bookkeeping for one run.
pub struct RunContext<'a> {
    pub cfg: &'a ExperimentConfig,
    pub dir: PathBuf,
    pub outputs: Vec<String>,
    pub metrics: Metrics,
    /// Progress lines on stderr.
    pub verbose: bool,
}

impl<'a> RunContext<'a> {
    pub fn new(cfg: &'a ExperimentConfig, dir: PathBuf, verbose: bool) -> Self {
        Self { cfg, dir, outputs: Vec::new(), metrics: Metrics::default(), verbose }
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("[{}] {}", self.cfg.experiment.name(), msg.as_ref());
        }
    }

    fn kernel(&mut self, stem: &str, k: &Kernel, supervised: &[usize], provenance: &str) -> Result<(), RunError> {
        write_kernel(&self.dir.join("kernels"), stem, k, supervised, provenance)?;
        self.outputs.push(format!("kernels/{stem}.csv"));
        self.outputs.push(format!("kernels/{stem}.json"));
        Ok(())
    }

    fn table<R: Serialize>(&mut self, name: &str, rows: &[R]) -> Result<(), RunError> {
        write_table(&self.dir.join(name), rows)?;
        self.outputs.push(name.to_string());
        Ok(())
    }
}

/// Result of [`run`]: where the artifacts went and what was measured.
#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub metrics: Metrics,
    pub error: Option<RunError>,
}

/// Runs `cfg` into `dir` (or `cfg.output_dir`), always leaving a manifest behind.
pub fn run(cfg: &ExperimentConfig, dir: Option<&Path>, verbose: bool) -> RunOutcome {
    let dir = dir.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.clone());
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut ctx = RunContext::new(cfg, dir.clone(), verbose);
    let result = std::fs::create_dir_all(&dir).at(&dir).and_then(|_| dispatch(&mut ctx));
    // metrics gathered before a failure are kept
    let metrics_written = ctx.metrics.write(&dir);
    if metrics_written.is_ok() {
        ctx.outputs.push("metrics.csv".into());
    }
    let error = result.err().or(metrics_written.err());
    let manifest = Manifest {
        experiment: cfg.experiment.name().into(),
        status: if error.is_none() { "ok" } else { "failed" }.into(),
        config: cfg.clone(),
        seeds: cfg.seeds.clone(),
        versions: Versions::current(),
        input_hash: config_hash(cfg),
        started_unix,
        wall_time_s: started.elapsed().as_secs_f64(),
        outputs: ctx.outputs.clone(),
        error: error.as_ref().map(|e| ErrorReport { kind: e.kind(), message: e.to_string() }),
    };
    let error = match write_manifest(&dir, &manifest) {
        Err(e) if error.is_none() => Some(e),
        _ => error,
    };
    RunOutcome { dir, metrics: ctx.metrics, error }
}

fn dispatch(ctx: &mut RunContext) -> Result<(), RunError> {
    match ctx.cfg.experiment {
        Experiment::Fig2Sinusoid => fig2_sinusoid(ctx),
        Experiment::Fig3Endpoint => fig3_endpoint(ctx),
        Experiment::Fig4Sequence => fig4_sequence(ctx),
        Experiment::LandauSweep => landau_sweep(ctx),
        Experiment::PerturbationCheck => perturbation_check(ctx),
        Experiment::NngpCheck => nngp_check(ctx),
    }
}

fn hyper_for(cfg: &ExperimentConfig, task: &Task) -> HyperParams {
    HyperParams { d: task.input_dim(), ..cfg.hyper }
}

fn finish_task(cfg: &ExperimentConfig, task: Task) -> Result<Task, RunError> {
    let task = if cfg.task.supervised.is_empty() { task } else { task.with_supervised(cfg.task.supervised.clone())? };
    Ok(if cfg.task.label_scale == 1.0 { task } else { task.scaled_labels(cfg.task.label_scale) })
}

/// Theory kernels at the solution reached from the symmetry-broken prior.
pub struct Theory {
    pub h: Kernel,
    pub c: Kernel,
    pub converged: bool,
    pub residual: f64,
    pub iterations: usize,
    /// Monte-Carlo standard error of the final moments (0 for exact solves).
    pub se: f64,
}

/// Linear activations use the MAP solver; Erf uses the saddle solver with
/// optional checkpointing under `tag`.
pub fn theory(ctx: &RunContext, task: &Task, mask: ArchMask, tag: &str) -> Result<Theory, RunError> {
    let cfg = ctx.cfg;
    let hy = hyper_for(cfg, task);
    let (h0, c0) = nngp_kernel(task, &hy, cfg.act, mask)?;
    if cfg.act == Activation::Linear && !cfg.scan.saddle_for_linear {
        let obj = LinearObjective::new(task, &hy, mask)?;
        let rep = solve_map(&obj, &symmetry_breaking_init(&h0, cfg.scan.init_eps), &cfg.solver)?;
        return Ok(Theory {
            c: rep.h_star.clone(),
            h: rep.h_star,
            converged: rep.converged,
            residual: rep.gradient_norm,
            iterations: rep.iterations,
            se: 0.0,
        });
    }
    let problem = SaddleProblem::new(task, &hy, cfg.act, mask)?;
    let ck_dir = ctx.dir.join("checkpoints");
    let seed = cfg.sampler.seed;
    let resumed = if cfg.scan.resume { load_checkpoint(&ck_dir, tag, seed)? } else { None };
    let init = match resumed {
        Some(s) => {
            ctx.log(format!("{tag}: resuming at iteration {}", s.iteration));
            s
        }
        None => SaddleState::from_kernel(&perturb_initial(&c0, cfg.scan.init_eps), 0.0),
    };
    let every = cfg.scan.checkpoint_every;
    let mut ck_err = None;
    let rep = solve_saddle_with(&problem, &init, &cfg.sampler, &cfg.saddle, |s| {
        if every > 0 && s.iteration % every == 0 && ck_err.is_none() {
            ck_err = save_checkpoint(&ck_dir, tag, s, seed).err();
        }
    })?;
    if let Some(e) = ck_err {
        return Err(e);
    }
    if every > 0 {
        save_checkpoint(&ck_dir, tag, &rep.state, seed)?;
    }
    ctx.log(format!(
        "{tag}: saddle {} after {} iterations, residual {:.2e}",
        if rep.converged { "converged" } else { "stopped" },
        rep.state.iteration,
        rep.state.residual
    ));
    Ok(Theory {
        h: rep.state.h_eql.clone(),
        c: rep.state.c.clone(),
        converged: rep.converged,
        residual: rep.state.residual,
        iterations: rep.state.iteration,
        se: rep.state.se,
    })
}

#[derive(Serialize)]
struct LossRow {
    step: usize,
    loss: f64,
    snapshot: String,
}

/// SGLD at width `n`; writes the training log and the kernel snapshot.
fn sgld_kernel(
    ctx: &mut RunContext,
    task: &Task,
    mask: ArchMask,
    n: usize,
    seed: u64,
    stem: &str,
) -> Result<Kernel, RunError> {
    let hy = HyperParams { n, ..hyper_for(ctx.cfg, task) };
    let sgld = SgldConfig { seed, ..ctx.cfg.sgld };
    let res = train_and_measure(task, &hy, ctx.cfg.act, mask, &sgld)?;
    let kstem = format!("{stem}_c");
    ctx.kernel(&kstem, &res.c_exp, task.grid().supervised(), &format!("SGLD N={n} seed={seed}"))?;
    let last = res.loss_trace.len().saturating_sub(1);
    let rows: Vec<LossRow> = res
        .loss_trace
        .iter()
        .enumerate()
        .map(|(i, &(step, loss))| LossRow { step, loss, snapshot: if i == last { kstem.clone() } else { String::new() } })
        .collect();
    ctx.table(&format!("logs/{stem}.csv"), &rows)?;
    ctx.metrics.push(format!("{stem}_stationary"), f64::from(u8::from(res.stationary)));
    Ok(res.c_exp)
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

#[derive(Serialize)]
struct CkaRow {
    n: usize,
    seed: u64,
    cka: f64,
}

#[derive(Serialize)]
struct AutocorrRow {
    lag: usize,
    theory: f64,
    sgld: f64,
}

/// Sinusoid task: theory kernel against SGLD kernels over widths and seeds.
fn fig2_sinusoid(ctx: &mut RunContext) -> Result<(), RunError> {
    let cfg = ctx.cfg;
    let task = finish_task(cfg, tasks::sinusoid_task(cfg.task.steps)?)?;
    let th = theory(ctx, &task, cfg.arch, "theory")?;
    let sup = task.grid().supervised().to_vec();
    ctx.kernel("theory_c", &th.c, &sup, "saddle/MAP theory C")?;
    ctx.kernel("theory_h", &th.h, &sup, "saddle/MAP theory H")?;
    ctx.metrics.push("theory_converged", f64::from(u8::from(th.converged)));
    ctx.metrics.push("theory_residual", th.residual);
    let mut rows = Vec::new();
    let mut last_kernels = Vec::new();
    for (i, &n) in cfg.scan.widths.iter().enumerate() {
        let mut vals = Vec::new();
        for &seed in &cfg.seeds {
            let c = sgld_kernel(ctx, &task, cfg.arch, n, seed, &format!("sgld_N{n}_s{seed}"))?;
            let v = cka_kernels(&c, &th.c)?;
            ctx.log(format!("N={n} seed={seed} cka={v:.4}"));
            rows.push(CkaRow { n, seed, cka: v });
            vals.push(v);
            if i + 1 == cfg.scan.widths.len() {
                last_kernels.push(c);
            }
        }
        ctx.metrics.push(format!("cka_median_N{n}"), median(&mut vals));
    }
    ctx.table("cka.csv", &rows)?;
    let ac_theory = autocorrelation(&th.c)?;
    let ac_sgld: Vec<f64> = if last_kernels.is_empty() {
        vec![f64::NAN; ac_theory.len()]
    } else {
        let acs = last_kernels.iter().map(autocorrelation).collect::<Result<Vec<_>, _>>()?;
        (0..ac_theory.len()).map(|l| acs.iter().map(|a| a[l]).sum::<f64>() / acs.len() as f64).collect()
    };
    let ac: Vec<AutocorrRow> = ac_theory
        .iter()
        .zip(&ac_sgld)
        .enumerate()
        .map(|(lag, (&theory, &sgld))| AutocorrRow { lag, theory, sgld })
        .collect();
    ctx.table("autocorrelation.csv", &ac)
}

/// Largest |entry| between different times.
fn time_offdiag_max(k: &Kernel) -> f64 {
    let p = k.patterns();
    let m = k.data();
    let mut best: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i / p != j / p {
                best = best.max(m[(i, j)].abs());
            }
        }
    }
    best
}

#[derive(Serialize)]
struct EndpointRow {
    lambda: f64,
    arch: &'static str,
    offdiag_max: f64,
    train_loss: f64,
    converged: bool,
    cka_sgld: f64,
}

/// Endpoint classification: RNN vs DNN kernels over the signal strength.
fn fig3_endpoint(ctx: &mut RunContext) -> Result<(), RunError> {
    let cfg = ctx.cfg;
    let base = finish_task(cfg, tasks::endpoint_classification(cfg.task.steps, cfg.task.patterns, cfg.task.input_dim)?)?;
    let mut rows = Vec::new();
    for &lambda in &cfg.scan.lambdas {
        let amp = tasks::signal_amplitude(lambda, cfg.task.steps, &cfg.hyper);
        let task = base.scaled_labels(amp);
        let y_end: Vec<f64> = (0..task.patterns()).map(|p| task.y(task.steps(), p)).collect();
        for &mask in &cfg.scan.archs {
            let tag = format!("{}_lambda{lambda}", mask.name());
            let th = theory(ctx, &task, mask, &tag)?;
            ctx.kernel(&format!("{tag}_h"), &th.h, task.grid().supervised(), "theory H")?;
            let hy = hyper_for(cfg, &task);
            let f = endpoint_predictor(&th.h, &y_end, &hy)?;
            let loss = y_end.iter().zip(&f).map(|(y, f)| 0.5 * (y - f).powi(2)).sum::<f64>() / f.len() as f64;
            let mut cka = f64::NAN;
            if let Some(&n) = cfg.scan.widths.last() {
                let c = sgld_kernel(ctx, &task, mask, n, cfg.master_seed(), &format!("sgld_{tag}_N{n}"))?;
                cka = cka_kernels(&c, &th.c)?;
            }
            let off = time_offdiag_max(&th.c);
            ctx.log(format!("lambda={lambda} {}: offdiag {off:.4}", mask.name()));
            ctx.metrics.push(format!("offdiag_{tag}"), off);
            rows.push(EndpointRow { lambda, arch: mask.name(), offdiag_max: off, train_loss: loss, converged: th.converged, cka_sgld: cka });
        }
    }
    ctx.table("endpoint.csv", &rows)
}

#[derive(Serialize)]
struct SequenceLossRow {
    count: usize,
    arch: &'static str,
    loss: f64,
    unsupervised_loss: f64,
    max_abs_unsupervised_f: f64,
    converged: bool,
}

#[derive(Serialize)]
struct PredictionRow {
    time: usize,
    pattern: usize,
    y: f64,
    f: f64,
    supervised: bool,
    squared_error: f64,
}

fn prediction_rows(pred: &PredictorResult, patterns: usize) -> Vec<PredictionRow> {
    (0..pred.f.len())
        .map(|i| PredictionRow {
            time: pred.times[i / patterns],
            pattern: i % patterns,
            y: pred.y[i],
            f: pred.f[i],
            supervised: pred.supervised[i / patterns],
            squared_error: (pred.y[i] - pred.f[i]).powi(2),
        })
        .collect()
}

/// Teacher task: generalization loss against the number of supervised times.
fn fig4_sequence(ctx: &mut RunContext) -> Result<(), RunError> {
    let cfg = ctx.cfg;
    let t = &cfg.task;
    let mut rows = Vec::new();
    for &count in &cfg.scan.counts {
        let sup = tasks::spread_supervision(t.steps, count);
        let task = tasks::teacher_rotation_task(t.steps, t.dphi, t.phi0, sup)?;
        let task = if t.label_scale == 1.0 { task } else { task.scaled_labels(t.label_scale) };
        for &mask in &cfg.scan.archs {
            let tag = format!("{}_k{count}", mask.name());
            let th = theory(ctx, &task, mask, &tag)?;
            let pred = sequence_predictor(&th.h, &task, &hyper_for(cfg, &task))?;
            let p = task.patterns();
            let max_unsup = (0..pred.f.len())
                .filter(|&i| !pred.supervised[i / p])
                .map(|i| pred.f[i].abs())
                .fold(0.0, f64::max);
            ctx.kernel(&format!("{tag}_h"), &th.h, task.grid().supervised(), "theory H")?;
            ctx.table(&format!("predictions/{tag}.csv"), &prediction_rows(&pred, p))?;
            ctx.metrics.push(format!("loss_{tag}"), pred.loss);
            rows.push(SequenceLossRow {
                count,
                arch: mask.name(),
                loss: pred.loss,
                unsupervised_loss: pred.unsupervised_loss(),
                max_abs_unsupervised_f: max_unsup,
                converged: th.converged,
            });
        }
    }
    ctx.table("losses.csv", &rows)
}

#[derive(Serialize)]
struct LandauRow {
    lambda: f64,
    arch: &'static str,
    d2_theory: f64,
    d2_solver: f64,
    #[serde(rename = "C2")]
    c2: f64,
    a: f64,
    c: f64,
    e: f64,
    converged: bool,
}

/// λ scan of the endpoint task: Landau prediction next to the solver's order parameter.
fn landau_sweep(ctx: &mut RunContext) -> Result<(), RunError> {
    let cfg = ctx.cfg;
    let hy = cfg.hyper;
    let four = cfg.task.steps == 4;
    let mut rows = Vec::new();
    let mut crossing = f64::NAN;
    let mut prev_c2: Option<(f64, f64)> = None;
    for &lambda in &cfg.scan.lambdas {
        let task = tasks::endpoint_signal_task(cfg.task.steps, lambda, &hy)?;
        let point = if four { Some(landau::diagonal_foc_solve(lambda, hy.u, hy.w, hy.v)?) } else { None };
        for &mask in &cfg.scan.archs {
            let tag = format!("{}_lambda{lambda}", mask.name());
            let th = theory(ctx, &task, mask, &tag)?;
            let (t1, t2) = (cfg.task.steps - 1, cfg.task.steps - 2);
            let d = th.c.get(t1, 0, t2, 0).unwrap_or(f64::NAN);
            let (d2_theory, c2, a, c, e) = match point {
                Some(p) => {
                    let p = p.with_arch(mask);
                    let d2 = match mask {
                        ArchMask::Rnn => landau::order_parameter(lambda, hy.u, hy.w, hy.v)?,
                        ArchMask::Dnn => 0.0,
                    };
                    (d2, landau::quadratic_coefficient(&p, hy.w), p.a, p.c, p.e)
                }
                None => (f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN),
            };
            if mask == ArchMask::Rnn {
                if let Some((l0, c0)) = prev_c2 {
                    if crossing.is_nan() && c0 < 0.0 && c2 >= 0.0 {
                        crossing = l0 + (lambda - l0) * (-c0) / (c2 - c0);
                    }
                }
                prev_c2 = Some((lambda, c2));
            }
            ctx.log(format!("lambda={lambda} {}: d^2 solver {:.4} theory {d2_theory:.4}", mask.name(), d * d));
            rows.push(LandauRow { lambda, arch: mask.name(), d2_theory, d2_solver: d * d, c2, a, c, e, converged: th.converged });
        }
    }
    ctx.metrics.push("critical_lambda", landau::critical_lambda());
    ctx.metrics.push("c2_zero_crossing", crossing);
    ctx.table("landau.csv", &rows)
}

#[derive(Serialize)]
struct ExpansionCsvRow {
    scale: f64,
    arch: &'static str,
    err_order1: f64,
    err_order2: f64,
    ratio: f64,
}

/// Perturbative expansion against full solves, and the interpolation entry of Δ₂.
fn perturbation_check(ctx: &mut RunContext) -> Result<(), RunError> {
    let cfg = ctx.cfg;
    let task = finish_task(cfg, tasks::endpoint_classification(cfg.task.steps, cfg.task.patterns, cfg.task.input_dim)?)?;
    let hy = hyper_for(cfg, &task);
    let mut rows = Vec::new();
    for &mask in &cfg.scan.archs {
        let obj = LinearObjective::new(&task, &hy, mask)?;
        let (h0, _) = nngp_kernel(&task, &hy, Activation::Linear, mask)?;
        let out = expansion_error(&obj, &h0, &cfg.scan.scales, &cfg.solver)?;
        let ratios: Vec<f64> = out.iter().map(|r| r.ratio).filter(|r| r.is_finite()).collect();
        ctx.metrics.push(format!("ratio_min_{}", mask.name()), ratios.iter().copied().fold(f64::INFINITY, f64::min));
        ctx.metrics.push(format!("ratio_max_{}", mask.name()), ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        rows.extend(out.iter().map(|r| ExpansionCsvRow {
            scale: r.scale,
            arch: mask.name(),
            err_order1: r.err_order1,
            err_order2: r.err_order2,
            ratio: r.ratio,
        }));
    }
    ctx.table("expansion.csv", &rows)?;
    // supervision at the first two outputs; Δ₂ between the third and first hidden times
    let teacher = tasks::teacher_rotation_task(4, cfg.task.dphi, cfg.task.phi0, [2, 3])?;
    let thy = hyper_for(cfg, &teacher);
    for mask in [ArchMask::Rnn, ArchMask::Dnn] {
        let obj = LinearObjective::new(&teacher, &thy, mask)?;
        let (h0, _) = nngp_kernel(&teacher, &thy, Activation::Linear, mask)?;
        let (_, d2, _) = perturbative_kernel(&obj, &h0)?;
        ctx.metrics.push(format!("delta2_t3_t1_{}", mask.name()), d2.get(3, 0, 1, 0).unwrap_or(f64::NAN));
        ctx.kernel(&format!("delta2_{}", mask.name()), &d2, teacher.grid().supervised(), "second-order correction")?;
    }
    Ok(())
}

#[derive(Serialize)]
struct NngpRow {
    arch: &'static str,
    act: &'static str,
    residual: f64,
    last_diagonal: f64,
}

/// Prior kernels and their fixed-point residuals.
fn nngp_check(ctx: &mut RunContext) -> Result<(), RunError> {
    let cfg = ctx.cfg;
    let task = finish_task(cfg, tasks::endpoint_classification(cfg.task.steps, cfg.task.patterns, cfg.task.input_dim)?)?;
    let hy = hyper_for(cfg, &task);
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for &mask in &cfg.scan.archs {
        for act in [Activation::Linear, Activation::Erf] {
            let (h0, c0) = nngp_kernel(&task, &hy, act, mask)?;
            let r = fixed_point_residual(&task, &hy, mask, &h0, &c0);
            worst = worst.max(r);
            let last = h0.dim() - 1;
            rows.push(NngpRow { arch: mask.name(), act: act.name(), residual: r, last_diagonal: h0.data()[(last, last)] });
            let stem = format!("{}_{}", mask.name(), act.name());
            ctx.kernel(&format!("{stem}_h0"), &h0, task.grid().supervised(), "prior H0")?;
            ctx.kernel(&format!("{stem}_c0"), &c0, task.grid().supervised(), "prior C0")?;
        }
    }
    ctx.metrics.push("max_fixed_point_residual", worst);
    ctx.log(format!("max fixed-point residual {worst:.2e}"));
    ctx.table("nngp.csv", &rows)
}
