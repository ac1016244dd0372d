use kmft_core::inference::{autocorrelation, cka, cka_kernels, endpoint_predictor, sequence_predictor};
use kmft_core::linalg::Mat;
use kmft_core::linear_mft::{solve_map, symmetry_breaking_init, LinearObjective, SolverOptions};
use kmft_core::nngp::nngp_kernel;
use kmft_core::{tasks, Activation, ArchMask, Error, HyperParams, Kernel, TimeRange};
use proptest::prelude::*;

#[test]
fn scalar_endpoint_shrinkage() {
    let h = Kernel::new(3, TimeRange::Hidden, 1, Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 8.0])).unwrap();
    let hy = HyperParams::new(1.0, 1.0, 1.0, 2.0).unwrap();
    let f = endpoint_predictor(&h, &[1.0], &hy).unwrap();
    assert!((f[0] - 0.8).abs() < 1e-12);
    assert!(endpoint_predictor(&h, &[1.0, 2.0], &hy).is_err());
}

#[test]
fn endpoint_predictor_shrinks_with_kappa() {
    let m = Mat::from_row_slice(4, 4, &[
        1.0, 0.1, 0.0, 0.0, 0.1, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.5, 0.0, 0.0, 0.5, 1.5,
    ]);
    let h = Kernel::new(3, TimeRange::Hidden, 2, m).unwrap();
    let mut prev = f64::INFINITY;
    for kappa in [0.0, 0.1, 1.0, 10.0] {
        let hy = HyperParams::new(1.0, 1.0, 1.0, kappa).unwrap();
        let f = endpoint_predictor(&h, &[1.0, -1.0], &hy).unwrap();
        let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm <= prev + 1e-12);
        prev = norm;
    }
}

#[test]
fn time_diagonal_kernel_predicts_the_prior_mean() {
    let task = tasks::teacher_rotation_task(5, 0.3, 0.1, [3, 5]).unwrap();
    let h = Kernel::new(5, TimeRange::Hidden, 1, Mat::from_diagonal_element(4, 4, 1.5)).unwrap();
    let hy = HyperParams::new(1.0, 1.0, 1.0, 1e-3).unwrap();
    let r = sequence_predictor(&h, &task, &hy).unwrap();
    for (k, &t) in r.times.iter().enumerate() {
        if !r.supervised[k] {
            assert_eq!(r.f[k], 0.0, "t = {t}");
            assert!((r.per_time_loss[k] - 0.5 * r.y[k] * r.y[k]).abs() < 1e-15);
        }
    }
}

#[test]
fn sequence_predictor_interpolates_supervised_times() {
    let dphi = 0.4;
    let task = tasks::teacher_rotation_task(6, dphi, 0.2, [3, 6]).unwrap();
    // hidden t feeds output t + 1; a rank-2 teacher kernel cos((s − s')·dphi)
    let data = Mat::from_fn(5, 5, |i, j| ((i as f64 - j as f64) * dphi).cos());
    let h = Kernel::new(6, TimeRange::Hidden, 1, data).unwrap();
    let hy = HyperParams::new(1.0, 1.0, 1.0, 0.0).unwrap();
    let r = sequence_predictor(&h, &task, &hy).unwrap();
    for k in 0..r.f.len() {
        assert!((r.f[k] - r.y[k]).abs() < 1e-6, "t = {}: f {} y {}", r.times[k], r.f[k], r.y[k]);
    }
    let empty = task.with_supervised([]).unwrap();
    assert!(matches!(sequence_predictor(&h, &empty, &hy), Err(Error::EmptySupervision)));
}

#[test]
fn rnn_generalizes_better_than_dnn() {
    let hy = HyperParams::new(1.0, 1.0, 1.0, 0.1).unwrap();
    let dphi = 2.0 * std::f64::consts::PI / 32.0;
    for count in 2..=7 {
        let task = tasks::teacher_rotation_task(8, dphi, std::f64::consts::FRAC_PI_4, tasks::spread_supervision(8, count))
            .unwrap();
        let mut losses = Vec::new();
        for mask in [ArchMask::Rnn, ArchMask::Dnn] {
            let obj = LinearObjective::new(&task, &hy, mask).unwrap();
            let (h0, _) = nngp_kernel(&task, &hy, Activation::Linear, mask).unwrap();
            // the time-diagonal prior is a stationary point; nudge the RNN off it
            let rep = solve_map(&obj, &symmetry_breaking_init(&h0, 1e-3), &SolverOptions::default()).unwrap();
            assert!(rep.converged);
            let pred = sequence_predictor(&rep.h_star, &task, &hy).unwrap();
            if mask == ArchMask::Dnn {
                for k in 0..pred.f.len() {
                    if !pred.supervised[k / task.patterns()] {
                        assert!(pred.f[k].abs() <= 1e-8);
                    }
                }
            }
            losses.push(pred.loss);
        }
        assert!(losses[0] < losses[1], "count {count}: rnn {} dnn {}", losses[0], losses[1]);
    }
}

#[test]
fn cka_hand_computed() {
    let a = Mat::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let b = Mat::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    // centered: a has 1 − 1/3 on the diagonal, −1/3 off; b mean is 5/9
    let ma = 1.0 / 3.0;
    let mb = 5.0 / 9.0;
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        ab += (x - ma) * (y - mb);
        aa += (x - ma) * (x - ma);
        bb += (y - mb) * (y - mb);
    }
    let expect = ab / (aa * bb).sqrt();
    assert!((cka(&a, &b).unwrap() - expect).abs() < 1e-15);
    assert!(matches!(cka(&Mat::from_element(3, 3, 2.0), &a), Err(Error::DegenerateInput(_))));
}

#[test]
fn autocorrelation_reads_the_bands() {
    let m = Mat::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 4.0, 0.5, 0.1, 0.5, 6.0]);
    let c = Kernel::new(4, TimeRange::Hidden, 1, m).unwrap();
    let ac = autocorrelation(&c).unwrap();
    assert_eq!(ac, vec![4.0, 0.5, 0.1]);
    let diag = Kernel::new(4, TimeRange::Hidden, 1, Mat::from_diagonal_element(3, 3, 1.0)).unwrap();
    assert_eq!(autocorrelation(&diag).unwrap()[1..], [0.0, 0.0]);
    assert!(autocorrelation(&Kernel::zeros(4, TimeRange::Hidden, 2)).is_err());
}

proptest! {
    #[test]
    fn cka_is_symmetric_and_invariant(
        a in prop::collection::vec(-3.0f64..3.0, 16),
        b in prop::collection::vec(-3.0f64..3.0, 16),
        scale in 0.1f64..10.0,
        shift in -5.0f64..5.0,
    ) {
        let a = Mat::from_vec(4, 4, a);
        let b = Mat::from_vec(4, 4, b);
        let ab = cka(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!((ab - cka(&b, &a).unwrap()).abs() < 1e-12);
        let moved = a.map(|x| scale * x + shift);
        prop_assert!((ab - cka(&moved, &b).unwrap()).abs() < 1e-9);
        prop_assert!((cka(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cka_kernels_agrees_with_matrices(vals in prop::collection::vec(-1.0f64..1.0, 9)) {
        let m = Mat::from_vec(3, 3, vals);
        let k = Kernel::new(4, TimeRange::Hidden, 1, &m + m.transpose()).unwrap();
        let l = Kernel::new(4, TimeRange::Hidden, 1, Mat::identity(3, 3) + &m * m.transpose()).unwrap();
        prop_assert_eq!(cka_kernels(&k, &l).ok(), cka(k.data(), l.data()).ok());
    }
}
