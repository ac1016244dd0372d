use kmft_core::linalg::Mat;
use kmft_core::sgld::{
    forward, gradients, loss, sgld_step, train_and_measure, SgldConfig, StepMode, WeightState,
};
use kmft_core::{tasks, Activation, ArchMask, Error, HyperParams, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sse(state: &WeightState, task: &Task, act: Activation) -> f64 {
    let count = task.patterns() * task.grid().supervised().len();
    loss(state, task, act).unwrap() * count as f64
}

fn hyper(n: usize, d: usize, kappa: f64) -> HyperParams {
    HyperParams { n, d, ..HyperParams::new(1.0, 1.0, 1.0, kappa).unwrap() }
}

/// Central difference of the summed squared error along every entry of `pick(state)`.
fn check_block(
    state: &WeightState,
    task: &Task,
    act: Activation,
    analytic: &Mat,
    pick: fn(&mut WeightState) -> &mut Mat,
    rng: &mut ChaCha8Rng,
    checked: &mut usize,
) {
    let (r, c) = analytic.shape();
    for _ in 0..4 {
        let (i, j) = (rng.random_range(0..r), rng.random_range(0..c));
        let eps = 1e-6;
        let mut plus = state.clone();
        pick(&mut plus)[(i, j)] += eps;
        let mut minus = state.clone();
        pick(&mut minus)[(i, j)] -= eps;
        let fd = (sse(&plus, task, act) - sse(&minus, task, act)) / (2.0 * eps);
        let an = analytic[(i, j)];
        assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-2), "({i},{j}): fd {fd} analytic {an}");
        *checked += 1;
    }
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let task = tasks::teacher_rotation_task(5, 0.4, 0.2, [3, 5]).unwrap();
    let hy = hyper(12, task.input_dim(), 0.1);
    let mut checked = 0;
    for act in [Activation::Linear, Activation::Erf] {
        for arch in [ArchMask::Rnn, ArchMask::Dnn] {
            let state = WeightState::from_prior(&task, &hy, arch, rng.random()).unwrap();
            let fw = forward(&state, &task, act, f64::INFINITY).unwrap();
            let g = gradients(&state, &task, act, &fw);
            check_block(&state, &task, act, &g.u, |s| &mut s.u, &mut rng, &mut checked);
            let gv = Mat::from_column_slice(g.v.len(), 1, g.v.as_slice());
            for _ in 0..3 {
                let i = rng.random_range(0..gv.nrows());
                let eps = 1e-6;
                let mut plus = state.clone();
                plus.v[i] += eps;
                let mut minus = state.clone();
                minus.v[i] -= eps;
                let fd = (sse(&plus, &task, act) - sse(&minus, &task, act)) / (2.0 * eps);
                assert!((fd - gv[(i, 0)]).abs() <= 1e-6 * gv[(i, 0)].abs().max(1e-2));
                checked += 1;
            }
            match arch {
                ArchMask::Rnn => {
                    check_block(&state, &task, act, &g.tied(), |s| &mut s.w[0], &mut rng, &mut checked)
                }
                ArchMask::Dnn => {
                    check_block(&state, &task, act, &g.w_layers[0], |s| &mut s.w[0], &mut rng, &mut checked);
                    check_block(&state, &task, act, &g.w_layers[2], |s| &mut s.w[2], &mut rng, &mut checked);
                }
            }
        }
    }
    assert!(checked >= 20);
}

#[test]
fn label_free_dynamics_sample_the_prior() {
    let task = tasks::sinusoid_task(4).unwrap();
    let hy = hyper(64, task.input_dim(), 0.0);
    for arch in [ArchMask::Rnn, ArchMask::Dnn] {
        let cfg = SgldConfig { use_labels: false, n_steps: 20_000, burn_in: 1_000, thin: 20, ..SgldConfig::default() };
        let res = train_and_measure(&task, &hy, Activation::Erf, arch, &cfg).unwrap();
        for (k, r) in res.variance_ratio.iter().enumerate() {
            assert!((r - 1.0).abs() <= 0.05, "{arch:?} block {k}: ratio {r}");
        }
    }
}

#[test]
fn tied_dnn_layers_stay_equal() {
    let task = tasks::endpoint_classification(5, 2, 2).unwrap();
    let hy = hyper(8, 2, 0.5);
    let mut state = WeightState::from_prior(&task, &hy, ArchMask::Dnn, 4).unwrap();
    let w0 = state.w[0].clone();
    for w in state.w.iter_mut() {
        w.copy_from(&w0);
    }
    let cfg = SgldConfig { tie_layers: true, ..SgldConfig::default() };
    for _ in 0..20 {
        state = sgld_step(&state, &task, &hy, Activation::Erf, &cfg).unwrap();
    }
    assert_eq!(state.w[0], state.w[1]);
    assert_eq!(state.w[1], state.w[2]);
    let untied = sgld_step(&state, &task, &hy, Activation::Erf, &SgldConfig::default()).unwrap();
    assert_ne!(untied.w[0], untied.w[1]);
}

#[test]
fn steps_are_reproducible() {
    let task = tasks::sinusoid_task(4).unwrap();
    let hy = hyper(16, task.input_dim(), 0.2);
    let state = WeightState::from_prior(&task, &hy, ArchMask::Rnn, 7).unwrap();
    for mode in [StepMode::Intensive, StepMode::Uniform] {
        let cfg = SgldConfig { mode, ..SgldConfig::default() };
        let a = sgld_step(&state, &task, &hy, Activation::Erf, &cfg).unwrap();
        let b = sgld_step(&state, &task, &hy, Activation::Erf, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.rng_seed, state.rng_seed);
    }
}

#[test]
fn training_lowers_the_loss() {
    let task = tasks::sinusoid_task(4).unwrap();
    let hy = hyper(64, task.input_dim(), 0.05);
    let cfg = SgldConfig { n_steps: 3000, burn_in: 1500, ..SgldConfig::default() };
    let res = train_and_measure(&task, &hy, Activation::Erf, ArchMask::Rnn, &cfg).unwrap();
    let first = res.loss_trace[0].1;
    let last = res.loss_trace.last().unwrap().1;
    assert!(last < first, "loss {first} -> {last}");
    assert!(res.c_exp.is_psd(1e-9));
}

#[test]
fn invalid_runs_are_rejected() {
    let task = tasks::sinusoid_task(4).unwrap();
    let hy = hyper(8, task.input_dim(), 0.0);
    let state = WeightState::from_prior(&task, &hy, ArchMask::Rnn, 1).unwrap();
    let err = sgld_step(&state, &task, &hy, Activation::Erf, &SgldConfig::default()).unwrap_err();
    assert!(matches!(err, Error::InvalidParameter(_)));
    let bad = SgldConfig { burn_in: 10, n_steps: 5, ..SgldConfig::default() };
    assert!(bad.validate().is_err());
    let err = forward(&state, &task, Activation::Linear, 1e-9).unwrap_err();
    assert!(matches!(err, Error::NumericOverflow(_)));
    let wrong_d = hyper(8, task.input_dim() + 1, 0.1);
    assert!(WeightState::from_prior(&task, &wrong_d, ArchMask::Rnn, 1).is_err());
}
