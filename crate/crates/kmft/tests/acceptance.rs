//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is printed as it goes.
//! `cargo test -p kmft --test acceptance` runs the default set; add
//! `-- --include-ignored` for the slow width-2048 transition check, or pass a
//! substring to run matching criteria only.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use kmft::runners::run;
use kmft::{Experiment, ExperimentConfig};
use kmft_core::inference::sequence_predictor;
use kmft_core::landau::{critical_lambda, diagonal_foc_solve, order_parameter, quadratic_coefficient};
use kmft_core::linalg::{self, Mat};
use kmft_core::linear_mft::{
    grad_neg_log_p, neg_log_p, partial_supervision_projector, penalized_inverse, solve_map, symmetry_breaking_init,
    LinearObjective, SolverOptions,
};
use kmft_core::nngp::nngp_kernel;
use kmft_core::nonlinear_mft::{
    perturb_initial, solve_saddle, SaddleOptions, SaddleProblem, SaddleState, SamplerConfig, SamplerMethod,
};
use kmft_core::perturbation::{expansion_error, perturbative_kernel};
use kmft_core::sgld::{forward, gradients, loss, train_and_measure, Sgld, SgldConfig, WeightState};
use kmft_core::{tasks, Activation, ArchMask, HyperParams, Kernel, Task, TimeGrid, TimeRange};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

struct Criterion {
    id: u8,
    name: &'static str,
    slow: bool,
    check: fn() -> Outcome,
}

const CRITERIA: &[Criterion] = &[
    Criterion { id: 1, name: "landau_critical_point", slow: false, check: landau_critical_point },
    Criterion { id: 2, name: "order_parameter_exponent", slow: false, check: order_parameter_exponent },
    Criterion { id: 3, name: "dnn_never_orders", slow: false, check: dnn_never_orders },
    Criterion { id: 4, name: "critical_diagonals", slow: false, check: critical_diagonals },
    Criterion { id: 5, name: "closed_form_fixed_point", slow: false, check: closed_form_fixed_point },
    Criterion { id: 6, name: "gradients_match_differences", slow: false, check: gradients_match_differences },
    Criterion { id: 7, name: "perturbative_remainder_cubic", slow: false, check: perturbative_remainder_cubic },
    Criterion { id: 8, name: "second_order_interpolation", slow: false, check: second_order_interpolation },
    Criterion { id: 9, name: "sgld_kernel_agreement", slow: false, check: sgld_kernel_agreement },
    Criterion { id: 10, name: "sgld_tracks_transition", slow: true, check: sgld_tracks_transition },
    Criterion { id: 11, name: "sequence_generalization", slow: false, check: sequence_generalization },
    Criterion { id: 12, name: "nonlinear_saddle", slow: false, check: nonlinear_saddle },
    Criterion { id: 13, name: "partial_supervision_projector", slow: false, check: partial_supervision_projector_check },
];

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let include_slow = args.iter().any(|a| a == "--include-ignored" || a == "--ignored");
    let only_slow = args.iter().any(|a| a == "--ignored");
    let filter = args.iter().find(|a| !a.starts_with('-'));
    // `cargo test -- --list` and friends expect no work to be done
    if args.iter().any(|a| a == "--list") {
        for c in CRITERIA {
            println!("{:02}_{}: test", c.id, c.name);
        }
        return ExitCode::SUCCESS;
    }
    panic::set_hook(Box::new(|_| {}));
    let (mut passed, mut failed, mut skipped) = (0, 0, 0);
    for c in CRITERIA {
        let label = format!("{:02} {}", c.id, c.name);
        if filter.is_some_and(|f| !label.contains(f.as_str())) {
            continue;
        }
        if c.slow && !include_slow {
            println!("SKIP {label}  (slow; run with -- --include-ignored)");
            skipped += 1;
            continue;
        }
        if only_slow && !c.slow {
            println!("SKIP {label}  (--ignored runs the slow set only)");
            skipped += 1;
            continue;
        }
        let start = Instant::now();
        let out = panic::catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Outcome::new(false, format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let tag = if out.pass { "PASS" } else { "FAIL" };
        println!("{tag} {label}  [{secs:.1}s]  {}", out.detail);
        if out.pass {
            passed += 1;
        } else {
            failed += 1;
        }
    }
    println!("\nacceptance: {passed} passed, {failed} failed, {skipped} skipped");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------- helpers

fn unit(kappa: f64) -> HyperParams {
    HyperParams::new(1.0, 1.0, 1.0, kappa).unwrap()
}

fn map_solve(task: &Task, hy: &HyperParams, mask: ArchMask) -> (LinearObjective, kmft_core::linear_mft::SolveReport) {
    let obj = LinearObjective::new(task, hy, mask).unwrap();
    let (h0, _) = nngp_kernel(task, hy, Activation::Linear, mask).unwrap();
    let rep = solve_map(&obj, &symmetry_breaking_init(&h0, 1e-3), &SolverOptions::default()).unwrap();
    (obj, rep)
}

/// RNN order parameter H^{32} of the T = 4 endpoint task at κ = 0.
fn endpoint_d(lambda: f64, mask: ArchMask) -> (f64, bool) {
    let hy = unit(0.0);
    let task = tasks::endpoint_signal_task(4, lambda, &hy).unwrap();
    let (_, rep) = map_solve(&task, &hy, mask);
    (rep.h_star.get(3, 0, 2, 0).unwrap(), rep.converged)
}

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

fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> Mat {
    let a = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() / n as f64 + Mat::identity(n, n) * 0.5
}

fn random_sym(n: usize, rng: &mut ChaCha8Rng) -> Mat {
    let a = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&a + a.transpose()) * 0.5
}

// ---------------------------------------------------------------- criteria

fn landau_critical_point() -> Outcome {
    const SYM_TOL: f64 = 1e-6;
    const LANDAU_REL: f64 = 0.15;
    let mut ok = critical_lambda() == 8.0;
    let mut detail = format!("lambda_c = {}", critical_lambda());
    for lambda in [4.0, 6.0, 7.5] {
        let (d, conv) = endpoint_d(lambda, ArchMask::Rnn);
        ok &= conv && d.abs() <= SYM_TOL;
        detail += &format!("; |d|({lambda}) = {:.1e}", d.abs());
    }
    for lambda in [8.5, 9.0] {
        let (d, conv) = endpoint_d(lambda, ArchMask::Rnn);
        let want = 0.8 * (lambda - 8.0);
        let rel = (d * d - want).abs() / want;
        ok &= conv && rel <= LANDAU_REL;
        let landau = order_parameter(lambda, 1.0, 1.0, 1.0).unwrap();
        detail += &format!("; d^2({lambda}) = {:.3} vs 0.8(l-8) = {want:.3} (rel {rel:.2}, landau {landau:.3})", d * d);
    }
    Outcome::new(ok, detail)
}

fn order_parameter_exponent() -> Outcome {
    const SLOPE: f64 = 0.5;
    const SLOPE_TOL: f64 = 0.05;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut conv_all = true;
    for k in 1..=10 {
        let lambda = 8.0 + 0.05 * k as f64;
        let (d, conv) = endpoint_d(lambda, ArchMask::Rnn);
        conv_all &= conv;
        xs.push((lambda - 8.0).ln());
        ys.push(d.abs().ln());
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Outcome::new(
        conv_all && (slope - SLOPE).abs() <= SLOPE_TOL,
        format!("log-log slope of |d| vs (lambda - 8) on [8.05, 8.5]: {slope:.4} (want {SLOPE} +- {SLOPE_TOL})"),
    )
}

fn dnn_never_orders() -> Outcome {
    const TOL: f64 = 1e-6;
    let hy = unit(0.0);
    let mut worst: f64 = 0.0;
    let mut conv_all = true;
    for k in 0..20 {
        let lambda = 100.0 * k as f64 / 19.0;
        let task = tasks::endpoint_signal_task(4, lambda, &hy).unwrap();
        let (_, rep) = map_solve(&task, &hy, ArchMask::Dnn);
        conv_all &= rep.converged;
        worst = worst.max(time_offdiag_max(&rep.h_star));
    }
    Outcome::new(conv_all && worst <= TOL, format!("max |off-diagonal| over 20 lambdas in [0, 100]: {worst:.1e}"))
}

fn critical_diagonals() -> Outcome {
    const TOL: f64 = 1e-8;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (u, w, v) = (rng.random_range(0.2..3.0), rng.random_range(0.2..3.0), rng.random_range(0.2..3.0));
        let p = diagonal_foc_solve(8.0, u, w, v).unwrap();
        worst = worst
            .max((p.a - 2.0 * u).abs())
            .max((p.c - 4.0 * u * w).abs())
            .max((p.e - 8.0 * u * w * w).abs());
        worst = worst.max(quadratic_coefficient(&p, w).abs() * p.c * p.e);
    }
    Outcome::new(worst <= TOL, format!("max deviation from (2u, 4uw, 8uw^2) and C2 = 0 over 10 draws: {worst:.1e}"))
}

fn closed_form_fixed_point() -> Outcome {
    const TOL: f64 = 1e-6;
    let mut worst: f64 = 0.0;
    let mut solves = 0;
    let mut unconverged = 0;
    let mut record = |obj: &LinearObjective, rep: &kmft_core::linear_mft::SolveReport| {
        if rep.converged {
            worst = worst.max(obj.closed_form_residual(rep.h_star.data()).unwrap());
            solves += 1;
        } else {
            unconverged += 1;
        }
    };
    let hy0 = unit(0.0);
    for lambda in [2.0, 6.0, 9.0, 12.0, 30.0] {
        let task = tasks::endpoint_signal_task(4, lambda, &hy0).unwrap();
        for mask in [ArchMask::Rnn, ArchMask::Dnn] {
            let (obj, rep) = map_solve(&task, &hy0, mask);
            record(&obj, &rep);
        }
    }
    let dphi = 2.0 * std::f64::consts::PI / 32.0;
    let hy = unit(0.1);
    for count in 1..=7 {
        let task = tasks::teacher_rotation_task(8, dphi, std::f64::consts::FRAC_PI_4, tasks::spread_supervision(8, count))
            .unwrap();
        for mask in [ArchMask::Rnn, ArchMask::Dnn] {
            let (obj, rep) = map_solve(&task, &hy, mask);
            record(&obj, &rep);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let hy = HyperParams::new(
            rng.random_range(0.5..2.0),
            rng.random_range(0.5..1.5),
            rng.random_range(0.5..2.0),
            rng.random_range(0.0..1.0),
        )
        .unwrap();
        let task = tasks::endpoint_classification(5, 4, 4).unwrap();
        for mask in [ArchMask::Rnn, ArchMask::Dnn] {
            let (obj, rep) = map_solve(&task, &hy, mask);
            record(&obj, &rep);
        }
    }
    Outcome::new(
        worst <= TOL && solves > 0,
        format!("max closed-form residual over {solves} converged solves: {worst:.1e} ({unconverged} unconverged)"),
    )
}

fn gradients_match_differences() -> Outcome {
    const TOL_THEORY: f64 = 1e-5;
    const TOL_SGLD: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(6);

    // ∂(−log p)/∂H along random symmetric directions
    let task = tasks::endpoint_classification(4, 2, 2).unwrap();
    let hy = HyperParams::new(1.0, 0.8, 1.2, 0.3).unwrap();
    let mut worst_theory: f64 = 0.0;
    let mut n_theory = 0;
    for mask in [ArchMask::Rnn, ArchMask::Dnn] {
        let obj = LinearObjective::new(&task, &hy, mask).unwrap();
        let n = obj.dim();
        for _ in 0..20 {
            let h = Kernel::new(4, TimeRange::Hidden, 2, random_spd(n, &mut rng)).unwrap();
            let g = grad_neg_log_p(&h, &obj).unwrap();
            let dir = random_sym(n, &mut rng);
            let eps = 1e-5;
            let fp = neg_log_p(&h.with_data(h.data() + &dir * eps).unwrap(), &obj).unwrap();
            let fm = neg_log_p(&h.with_data(h.data() - &dir * eps).unwrap(), &obj).unwrap();
            let fd = (fp - fm) / (2.0 * eps);
            let an = g.data().component_mul(&dir).sum();
            worst_theory = worst_theory.max((fd - an).abs() / an.abs().max(1e-300));
            n_theory += 1;
        }
    }

    // ∂L/∂θ of the network loss along random weight directions
    let task = tasks::teacher_rotation_task(5, 0.4, 0.2, [3, 5]).unwrap();
    let hy = HyperParams { n: 12, d: task.input_dim(), ..unit(0.1) };
    let mut worst_sgld: f64 = 0.0;
    let mut n_sgld = 0;
    for act in [Activation::Linear, Activation::Erf] {
        for arch in [ArchMask::Rnn, ArchMask::Dnn] {
            for _ in 0..6 {
                let state = WeightState::from_prior(&task, &hy, arch, rng.random()).unwrap();
                let fw = forward(&state, &task, act, f64::INFINITY).unwrap();
                let g = gradients(&state, &task, act, &fw);
                let count = (task.patterns() * task.grid().supervised().len()) as f64;
                let mut dir = state.clone();
                dir.u = Mat::from_fn(dir.u.nrows(), dir.u.ncols(), |_, _| rng.random_range(-1.0..1.0));
                for w in dir.w.iter_mut() {
                    *w = Mat::from_fn(w.nrows(), w.ncols(), |_, _| rng.random_range(-1.0..1.0));
                }
                dir.v = dir.v.map(|_| rng.random_range(-1.0..1.0));
                let mut an = g.u.component_mul(&dir.u).sum() + g.v.dot(&dir.v);
                for (k, w) in dir.w.iter().enumerate() {
                    let gk = if arch == ArchMask::Rnn { g.tied() } else { g.w_layers[k].clone() };
                    an += gk.component_mul(w).sum();
                }
                an /= count;
                let shifted = |s: f64| {
                    let mut st = state.clone();
                    st.u += &dir.u * s;
                    for (w, d) in st.w.iter_mut().zip(&dir.w) {
                        *w += d * s;
                    }
                    st.v += &dir.v * s;
                    loss(&st, &task, act).unwrap()
                };
                let eps = 1e-5 / (1.0 + (hy.n as f64).sqrt());
                let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
                worst_sgld = worst_sgld.max((fd - an).abs() / an.abs().max(1e-300));
                n_sgld += 1;
            }
        }
    }
    Outcome::new(
        worst_theory <= TOL_THEORY && worst_sgld <= TOL_SGLD && n_theory >= 20 && n_sgld >= 20,
        format!(
            "-log p: max rel err {worst_theory:.1e} over {n_theory} points; SGLD loss: max rel err {worst_sgld:.1e} over {n_sgld} points"
        ),
    )
}

fn perturbative_remainder_cubic() -> Outcome {
    const RANGE: (f64, f64) = (6.0, 10.0);
    let hy = unit(0.5);
    let task = tasks::endpoint_classification(4, 2, 2).unwrap();
    let mut ok = true;
    let mut ratios = Vec::new();
    for mask in [ArchMask::Rnn, ArchMask::Dnn] {
        let obj = LinearObjective::new(&task, &hy, mask).unwrap();
        let (h0, _) = nngp_kernel(&task, &hy, Activation::Linear, mask).unwrap();
        let rows = expansion_error(&obj, &h0, &[0.2, 0.1, 0.05, 0.025], &SolverOptions::default()).unwrap();
        for r in &rows[1..] {
            ok &= (RANGE.0..=RANGE.1).contains(&r.ratio);
            ratios.push(format!("{}@{}: {:.2}", mask.name(), r.scale, r.ratio));
        }
    }
    Outcome::new(ok, format!("error ratios on halving the label scale: {}", ratios.join(", ")))
}

fn second_order_interpolation() -> Outcome {
    const DNN_TOL: f64 = 1e-12;
    const RNN_MIN: f64 = 1e-6;
    let hy = unit(0.5);
    let dphi = 2.0 * std::f64::consts::PI / 16.0;
    let task = tasks::teacher_rotation_task(4, dphi, 0.3, [2, 3]).unwrap();
    let mut vals = Vec::new();
    for mask in [ArchMask::Rnn, ArchMask::Dnn] {
        let obj = LinearObjective::new(&task, &hy, mask).unwrap();
        let (h0, _) = nngp_kernel(&task, &hy, Activation::Linear, mask).unwrap();
        let (_, d2, _) = perturbative_kernel(&obj, &h0).unwrap();
        vals.push(d2.get(3, 0, 1, 0).unwrap());
    }
    Outcome::new(
        vals[0].abs() > RNN_MIN && vals[1].abs() <= DNN_TOL,
        format!("second-order (t3, t1) entry: rnn {:.3e}, dnn {:.1e}", vals[0], vals[1]),
    )
}

fn sgld_kernel_agreement() -> Outcome {
    const CKA_MIN: f64 = 0.9;
    const VAR_TOL: f64 = 0.05;
    let cfg = ExperimentConfig::preset(Experiment::Fig2Sinusoid);
    let dir = tempfile::tempdir().unwrap();
    let out = run(&cfg, Some(dir.path()), false);
    if let Some(e) = out.error {
        return Outcome::new(false, format!("fig2 run failed: {e}"));
    }
    let medians: Vec<f64> = cfg
        .scan
        .widths
        .iter()
        .map(|n| out.metrics.get(&format!("cka_median_N{n}")).unwrap_or(f64::NAN))
        .collect();
    let monotone = medians.windows(2).all(|w| w[1] >= w[0]);
    let last = *medians.last().unwrap();

    let task = tasks::sinusoid_task(4).unwrap();
    let hy = HyperParams { n: 64, d: task.input_dim(), ..unit(0.0) };
    let mut worst: f64 = 0.0;
    for arch in [ArchMask::Rnn, ArchMask::Dnn] {
        let scfg = SgldConfig { use_labels: false, n_steps: 20_000, burn_in: 1_000, thin: 20, ..SgldConfig::default() };
        let res = train_and_measure(&task, &hy, Activation::Erf, arch, &scfg).unwrap();
        for r in res.variance_ratio {
            worst = worst.max((r - 1.0).abs());
        }
    }
    let widths: Vec<String> = cfg.scan.widths.iter().zip(&medians).map(|(n, m)| format!("N={n}: {m:.5}")).collect();
    Outcome::new(
        monotone && last >= CKA_MIN && worst <= VAR_TOL,
        format!(
            "median CKA over {} seeds {}; label-free prior variance max rel dev {worst:.3}",
            cfg.seeds.len(),
            widths.join(", ")
        ),
    )
}

/// ⟨|H^{32}|⟩ over thinned samples with a batch-means standard error.
fn sampled_order_parameter(task: &Task, hy: &HyperParams, n: usize, seed: u64, cfg: &SgldConfig) -> (f64, f64) {
    let hy = HyperParams { n, d: 1, ..*hy };
    let mut state = WeightState::from_prior(task, &hy, ArchMask::Rnn, seed).unwrap();
    let mut sampler = Sgld::new(seed.wrapping_add(0x516c64));
    let mut vals = Vec::new();
    for step in 0..cfg.n_steps {
        sampler.step(&mut state, task, &hy, Activation::Linear, cfg).unwrap();
        if step >= cfg.burn_in && (step - cfg.burn_in).is_multiple_of(cfg.thin) {
            let fw = forward(&state, task, Activation::Linear, cfg.overflow).unwrap();
            vals.push((fw.h[2].dot(&fw.h[1]) / n as f64).abs());
        }
    }
    let batches = 10;
    let len = vals.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| vals[b * len..(b + 1) * len].iter().sum::<f64>() / len as f64).collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (m, (var / batches as f64).sqrt())
}

fn sgld_tracks_transition() -> Outcome {
    const N: usize = 2048;
    const N_SMALL: usize = 512;
    const SE_FACTOR: f64 = 3.0;
    // κ = 1 keeps the label drift well inside the Euler stability range at ds = 1e-2;
    // the RNN transition sits near λ ≈ 10.2 there
    let hy = unit(1.0);
    let cfg = SgldConfig { n_steps: 8_000, burn_in: 2_000, thin: 10, ..SgldConfig::default() };
    let mut ok = true;
    let mut rows = Vec::new();
    for lambda in [6.0, 9.0, 11.0, 12.0, 16.0, 24.0] {
        let task = tasks::endpoint_signal_task(4, lambda, &hy).unwrap();
        let (_, rep) = map_solve(&task, &hy, ArchMask::Rnn);
        let theory = rep.h_star.get(3, 0, 2, 0).unwrap().abs();
        let (big, se) = sampled_order_parameter(&task, &hy, N, 1, &cfg);
        let (small, _) = sampled_order_parameter(&task, &hy, N_SMALL, 1, &cfg);
        // with O(N^{-1/2}) corrections the width-N error equals the N/4 → N change
        let finite_n = (small - big).abs();
        let band = SE_FACTOR * se + finite_n;
        let pass = rep.converged && (big - theory).abs() <= band;
        ok &= pass;
        rows.push(format!("l={lambda}: sgld {big:.3} theory {theory:.3} band {band:.3}{}", if pass { "" } else { " (out)" }));
    }
    Outcome::new(ok, format!("|H32| at N={N}: {}", rows.join("; ")))
}

fn sequence_generalization() -> Outcome {
    const UNSUP_TOL: f64 = 1e-8;
    let hy = unit(0.1);
    let dphi = 2.0 * std::f64::consts::PI / 32.0;
    let mut ok = true;
    let mut rows = Vec::new();
    for count in 2..=7 {
        let task = tasks::teacher_rotation_task(8, dphi, std::f64::consts::FRAC_PI_4, tasks::spread_supervision(8, count))
            .unwrap();
        let mut losses = [0.0; 2];
        for (k, mask) in [ArchMask::Rnn, ArchMask::Dnn].into_iter().enumerate() {
            let (_, rep) = map_solve(&task, &hy, mask);
            ok &= rep.converged;
            let pred = sequence_predictor(&rep.h_star, &task, &hy).unwrap();
            losses[k] = pred.loss;
            if mask == ArchMask::Dnn {
                let p = task.patterns();
                let mut prior_loss = Vec::new();
                for (i, &sup) in pred.supervised.iter().enumerate() {
                    if !sup {
                        let ys = &pred.y[i * p..(i + 1) * p];
                        prior_loss.push(0.5 * ys.iter().map(|y| y * y).sum::<f64>() / p as f64);
                        ok &= pred.f[i * p..(i + 1) * p].iter().all(|f| f.abs() <= UNSUP_TOL);
                    }
                }
                if !prior_loss.is_empty() {
                    let want = prior_loss.iter().sum::<f64>() / prior_loss.len() as f64;
                    ok &= (pred.unsupervised_loss() - want).abs() <= UNSUP_TOL;
                }
            }
        }
        ok &= losses[0] < losses[1];
        rows.push(format!("{count}: {:.3e}/{:.3e}", losses[0], losses[1]));
    }
    Outcome::new(ok, format!("loss rnn/dnn by supervised count {}", rows.join(", ")))
}

fn nonlinear_saddle() -> Outcome {
    const SMALL_MAX: f64 = 2e-2;
    const LARGE_MIN: f64 = 0.1;
    const SE_FACTOR: f64 = 3.0;
    const LINEAR_TOL: f64 = 1e-2;
    let hy = unit(0.0);
    let mut ok = true;
    let mut sweep = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for lambda in [0.25, 0.5, 2.0, 4.0, 9.0] {
        let task = tasks::endpoint_signal_task(4, lambda, &hy).unwrap();
        let problem = SaddleProblem::new(&task, &hy, Activation::Erf, ArchMask::Rnn).unwrap();
        let (_, c0) = nngp_kernel(&task, &hy, Activation::Erf, ArchMask::Rnn).unwrap();
        let init = SaddleState::from_kernel(&perturb_initial(&c0, 1e-3), 0.0);
        let opts = SaddleOptions { tol: 1e-4, max_iter: 5_000, ..SaddleOptions::default() };
        let rep = solve_saddle(&problem, &init, &SamplerConfig::default(), &opts).unwrap();
        let d = rep.state.c.get(3, 0, 2, 0).unwrap().abs();
        let se = rep.state.se;
        ok &= rep.converged;
        ok &= if lambda <= 0.5 { d <= SMALL_MAX } else { d > LARGE_MIN };
        if let Some((pd, pse)) = prev {
            ok &= d >= pd - SE_FACTOR * se.max(pse);
        }
        prev = Some((d, se));
        sweep.push(format!("{lambda}: {d:.3}"));
    }

    let mut linear = Vec::new();
    let runs = [
        (4.0, ArchMask::Rnn, SamplerMethod::ExactGaussian),
        (9.0, ArchMask::Rnn, SamplerMethod::ExactGaussian),
        (9.0, ArchMask::Dnn, SamplerMethod::ExactGaussian),
        (9.0, ArchMask::Rnn, SamplerMethod::ImportanceFromBase),
    ];
    for (lambda, mask, method) in runs {
        let task = tasks::endpoint_signal_task(4, lambda, &hy).unwrap();
        let (obj, map) = map_solve(&task, &hy, mask);
        let (_, c0) = nngp_kernel(&task, &hy, Activation::Linear, mask).unwrap();
        let problem = SaddleProblem::from_objective(obj, Activation::Linear);
        let init = SaddleState::from_kernel(&perturb_initial(&c0, 1e-3), 0.0);
        let tol = if method == SamplerMethod::ExactGaussian { 1e-5 } else { 1e-4 };
        let opts = SaddleOptions { tol, ..SaddleOptions::default() };
        let sampler = SamplerConfig { method, ..SamplerConfig::default() };
        let rep = solve_saddle(&problem, &init, &sampler, &opts).unwrap();
        // the fixed point is defined up to the sign of the ordered band
        let err = linalg::max_abs(&(rep.state.c.data().abs() - map.h_star.data().abs()));
        let allowed = LINEAR_TOL.max(SE_FACTOR * rep.state.se);
        ok &= rep.converged && map.converged && err <= allowed;
        let tag = if method == SamplerMethod::ExactGaussian { "exact" } else { "is" };
        linear.push(format!("{}@{lambda}/{tag}: {err:.1e} (allowed {allowed:.1e})", mask.name()));
    }
    Outcome::new(ok, format!("erf |C32| by lambda {}; linear saddle vs MAP {}", sweep.join(", "), linear.join(", ")))
}

fn partial_supervision_projector_check() -> Outcome {
    const ZERO_TOL: f64 = 1e-12;
    const LIMIT_TOL: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_zero: f64 = 0.0;
    let mut worst_limit: f64 = 0.0;
    for (steps, sup, p) in [(5usize, vec![3usize, 5], 2usize), (6, vec![2, 4, 6], 1), (4, vec![4], 3)] {
        let grid = TimeGrid::new(steps, sup).unwrap();
        let dim = (steps - 1) * p;
        let a = Kernel::new(steps, TimeRange::Output, p, random_spd(dim, &mut rng)).unwrap();
        let q = partial_supervision_projector(&grid, &a).unwrap();
        for (pos, t) in (2..=steps).enumerate() {
            if grid.is_supervised(t) {
                continue;
            }
            for i in pos * p..(pos + 1) * p {
                for j in 0..dim {
                    worst_zero = worst_zero.max(q.data()[(i, j)].abs()).max(q.data()[(j, i)].abs());
                }
            }
        }
        let direct = penalized_inverse(&grid, &a, 1e12).unwrap();
        worst_limit = worst_limit.max(linalg::max_abs(&(q.data() - direct.data())));
    }
    Outcome::new(
        worst_zero <= ZERO_TOL && worst_limit <= LIMIT_TOL,
        format!("unsupervised rows/cols max {worst_zero:.1e}; vs kappa_inf = 1e12 inverse {worst_limit:.1e}"),
    )
}
