use kmft_core::kernelspace::{
    apply_mask, restrict_supervised, shift_minus, shift_minus_mat, shift_plus, shift_plus_mat,
};
use kmft_core::linalg::{self, Mat};
use kmft_core::{tasks, ArchMask, Error, HyperParams, Kernel, TimeGrid, TimeRange};
use proptest::prelude::*;

fn sym(n: usize, vals: &[f64]) -> Mat {
    let m = Mat::from_fn(n, n, |i, j| vals[(i * n + j) % vals.len()]);
    linalg::symmetrize(&(&m + m.transpose()))
}

#[test]
fn time_ranges_are_aligned() {
    let g = TimeGrid::endpoint(5).unwrap();
    assert_eq!(g.range_len(), 4);
    assert_eq!(g.times(TimeRange::Input), 0..4);
    assert_eq!(g.times(TimeRange::Hidden), 1..5);
    assert_eq!(g.times(TimeRange::Output), 2..6);
    assert_eq!(g.supervised(), &[5]);
    assert_eq!(g.supervised_indices(3), vec![9, 10, 11]);
}

#[test]
fn grid_rejects_bad_supervision() {
    assert!(TimeGrid::new(4, [1]).is_err());
    assert!(TimeGrid::new(4, [5]).is_err());
    let g = TimeGrid::new(4, [4, 2, 4]).unwrap();
    assert_eq!(g.supervised(), &[2, 4]);
}

#[test]
fn flatten_is_time_major() {
    let k = Kernel::zeros(4, TimeRange::Hidden, 3);
    assert_eq!(k.dim(), 9);
    for idx in 0..9 {
        let (a, p) = k.unflatten(idx);
        assert_eq!(k.flatten(a, p), idx);
    }
    assert_eq!(k.flatten(2, 1), 7);
}

#[test]
fn shifts_read_neighbouring_times() {
    let m = Mat::from_fn(3, 3, |i, j| (10 * i + j) as f64 + (10 * j + i) as f64);
    let k = Kernel::new(4, TimeRange::Hidden, 1, m.clone()).unwrap();
    let km = shift_minus(&k);
    assert_eq!(km.data()[(0, 0)], 0.0);
    assert_eq!(km.data()[(2, 1)], m[(1, 0)]);
    let kp = shift_plus(&k);
    assert_eq!(kp.data()[(0, 1)], m[(1, 2)]);
    assert_eq!(kp.data()[(2, 2)], 0.0);
    assert_eq!(km.data(), &shift_minus_mat(&m, 1));
    assert_eq!(kp.data(), &shift_plus_mat(&m, 1));
}

#[test]
fn dnn_mask_keeps_equal_time_blocks() {
    let m = sym(6, &[1.0, 2.0, 3.0, 5.0, 7.0]);
    let k = Kernel::new(4, TimeRange::Hidden, 2, m.clone()).unwrap();
    let d = apply_mask(ArchMask::Dnn, &k);
    for i in 0..6 {
        for j in 0..6 {
            let same = i / 2 == j / 2;
            assert_eq!(d.data()[(i, j)], if same { m[(i, j)] } else { 0.0 });
        }
    }
    assert_eq!(apply_mask(ArchMask::Rnn, &k), k);
}

#[test]
fn restriction_follows_output_alignment() {
    let g = TimeGrid::new(5, [3, 5]).unwrap();
    let m = sym(4, &[1.0, 0.5, 0.25]);
    let hidden = Kernel::new(5, TimeRange::Hidden, 1, m.clone()).unwrap();
    let r = restrict_supervised(&hidden, &g).unwrap();
    // hidden times 2 and 4 feed outputs 3 and 5
    assert_eq!(r.times(), &[2, 4]);
    assert_eq!(r.data()[(0, 1)], m[(1, 3)]);
    let out = hidden.relabel(TimeRange::Output);
    let r = restrict_supervised(&out, &g).unwrap();
    assert_eq!(r.times(), &[3, 5]);
    let empty = TimeGrid::new(5, []).unwrap();
    assert!(matches!(restrict_supervised(&hidden, &empty), Err(Error::EmptySupervision)));
}

#[test]
fn kernel_rejects_wrong_shapes() {
    assert!(Kernel::new(4, TimeRange::Hidden, 2, Mat::zeros(5, 5)).is_err());
    assert!(Kernel::new(4, TimeRange::Hidden, 2, Mat::zeros(6, 5)).is_err());
}

#[test]
fn hyper_params_validate() {
    assert!(HyperParams::new(1.0, 1.0, 1.0, 0.0).is_ok());
    assert!(HyperParams::new(0.0, 1.0, 1.0, 0.0).is_err());
    assert!(HyperParams::new(1.0, 1.0, 1.0, -1e-3).is_err());
    let h = HyperParams { n: 4, d: 2, ..HyperParams::new(2.0, 3.0, 5.0, 0.5).unwrap() };
    assert_eq!(h.g_u(), 1.0);
    assert_eq!(h.g_w(), 0.75);
    assert_eq!(h.g_v(), 5.0 / 16.0);
    assert_eq!(h.kappa_ext(), 0.125);
}

#[test]
fn task_kernels() {
    let t = tasks::endpoint_classification(4, 4, 4).unwrap();
    let x = t.input_kernel();
    assert_eq!(x.range(), TimeRange::Input);
    // orthogonal √D e_p inputs with the 1/D normalization give X⁰⁰ = I
    let b = x.block(0, 0).unwrap();
    assert!(linalg::max_abs(&(b - Mat::identity(4, 4))) < 1e-12);
    let y = t.label_kernel();
    assert_eq!(y.get(4, 0, 4, 3), Some(-1.0));
    assert_eq!(y.get(3, 0, 3, 0), Some(0.0));
    assert_eq!(t.supervised_labels(), vec![1.0, 1.0, -1.0, -1.0]);
    assert!(tasks::endpoint_classification(4, 3, 4).is_err());
    assert!(tasks::endpoint_classification(4, 6, 4).is_err());
}

#[test]
fn signal_strength_round_trip() {
    let h = HyperParams::new(1.5, 0.7, 2.0, 0.0).unwrap();
    for lam in [0.0, 1.0, 8.0, 9.5] {
        let y = tasks::signal_amplitude(lam, 6, &h);
        assert!((tasks::signal_strength(y, 6, &h) - lam).abs() < 1e-12);
    }
    let task = tasks::endpoint_signal_task(4, 9.0, &HyperParams::default()).unwrap();
    assert_eq!(task.y(4, 0), 3.0);
}

#[test]
fn spread_supervision_endpoints() {
    assert_eq!(tasks::spread_supervision(8, 1), vec![8]);
    assert_eq!(tasks::spread_supervision(8, 2), vec![2, 8]);
    assert_eq!(tasks::spread_supervision(8, 7), vec![2, 3, 4, 5, 6, 7, 8]);
}

#[test]
fn teacher_labels_rotate() {
    let dphi = 2.0 * std::f64::consts::PI / 32.0;
    let phi0 = std::f64::consts::FRAC_PI_4;
    let t = tasks::teacher_rotation_task(8, dphi, phi0, [8]).unwrap();
    for s in 2..=8 {
        assert!((t.y(s, 0) - (phi0 + s as f64 * dphi).cos()).abs() < 1e-12);
    }
    assert!(matches!(tasks::teacher_rotation_task(8, dphi, phi0, []), Err(Error::EmptySupervision)));
}

proptest! {
    #[test]
    fn shifts_are_adjoint(vals in prop::collection::vec(-2.0f64..2.0, 9..40), other in prop::collection::vec(-2.0f64..2.0, 9..40), p in 1usize..3) {
        let n = 3 * p;
        let a = sym(n, &vals);
        let b = sym(n, &other);
        let lhs = (&a * shift_minus_mat(&b, p)).trace();
        let rhs = (shift_plus_mat(&a, p) * &b).trace();
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn psd_projection_is_idempotent(vals in prop::collection::vec(-3.0f64..3.0, 16)) {
        let m = sym(4, &vals);
        let p1 = linalg::project_psd(&m, 0.0);
        prop_assert!(linalg::min_eigenvalue(&p1) >= -1e-10);
        let p2 = linalg::project_psd(&p1, 0.0);
        prop_assert!(linalg::max_abs(&(&p1 - &p2)) < 1e-9);
    }

    #[test]
    fn vech_round_trip(vals in prop::collection::vec(-5.0f64..5.0, 25)) {
        let m = sym(5, &vals);
        prop_assert_eq!(linalg::unvech(&linalg::vech(&m), 5), m);
    }
}
