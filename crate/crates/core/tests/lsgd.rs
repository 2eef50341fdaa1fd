mod common;

use common::*;
use pounet::bench::{baseline_resnet_fit, make_wave_dataset, WaveKind};
use pounet::linalg::{norm2, solve_least_squares};
use pounet::model::{design_matrix, loss};
use pounet::optim::{lsgd, lsgd_run, two_phase_lsgd, two_phase_lsgd_run, AdamState};
use pounet::pou::{init_rbf, init_resnet_box, RbfNet};
use pounet::{seeded_rng, Dataset, DenseMatrix, Domain, LsgdConfig, MonomialBasis, PouModel};
use proptest::prelude::*;

fn wave_problem(seed: u64, resnet: bool) -> (PouModel, Dataset) {
    let mut rng = seeded_rng(seed);
    let data = make_wave_dataset(1, 200, WaveKind::Triangle, &mut rng).unwrap();
    let dom = Domain::unit(1);
    let net = if resnet {
        init_resnet_box(6, 2, 4, &dom, &mut rng).unwrap().into()
    } else {
        init_rbf(4, &dom, &mut rng).unwrap().into()
    };
    let basis = MonomialBasis::for_domain(&dom, 1);
    (PouModel::with_random_coeffs(net, basis, &mut rng).unwrap(), data)
}

#[test]
fn constant_data_is_fit_in_one_epoch() {
    let xs = DenseMatrix::new(5, 1, vec![0.0, 0.1, 0.4, 0.7, 1.0]).unwrap();
    let data = Dataset::new(xs, vec![3.0; 5]).unwrap();
    let net = RbfNet::new(DenseMatrix::zeros(1, 1), vec![1.0]).unwrap().into();
    let model = PouModel::new(net, MonomialBasis::raw(1, 0).unwrap(), vec![-1.0]).unwrap();
    let (fit, report) = lsgd(&model, &data, &LsgdConfig::plain(1, 1e-3)).unwrap();
    assert!((fit.coeffs()[0] - 3.0).abs() < 1e-14);
    assert!(report.loss_trace[0] < 1e-26);
    assert!(report.final_loss < 1e-26);
}

#[test]
fn zero_lambda_keeps_lambda_trace_zero() {
    let (model, data) = wave_problem(1, false);
    let cfg = LsgdConfig { n_epoch: 30, lambda: 0.0, rho: 0.5, n_stag: 2, lr: 1e-2 };
    let (_, report) = lsgd(&model, &data, &cfg).unwrap();
    assert_eq!(report.lambda_trace, vec![0.0; 30]);
}

#[test]
fn frozen_partition_gives_constant_loss() {
    for resnet in [false, true] {
        let (model, data) = wave_problem(2, resnet);
        let (_, report) = lsgd(&model, &data, &LsgdConfig::plain(10, 0.0)).unwrap();
        let first = report.loss_trace[0];
        assert!(report.loss_trace.iter().all(|&l| l == first));
    }
}

#[test]
fn lambda_decays_by_exactly_rho() {
    let (model, data) = wave_problem(3, false);
    let cfg = LsgdConfig { n_epoch: 40, lambda: 1.0, rho: 0.5, n_stag: 1, lr: 0.0 };
    let (_, report) = lsgd(&model, &data, &cfg).unwrap();
    let mut decays = 0;
    for w in report.lambda_trace.windows(2) {
        if w[1] != w[0] {
            assert_eq!(w[1], w[0] * 0.5);
            decays += 1;
        }
    }
    assert!(decays > 0);
}

#[test]
fn training_reduces_loss_and_reports_best() {
    for resnet in [false, true] {
        let (model, data) = wave_problem(4, resnet);
        let (best, report) = lsgd(&model, &data, &LsgdConfig::plain(150, 1e-2)).unwrap();
        assert_eq!(report.loss_trace.len(), 150);
        let min = report.loss_trace.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min < report.loss_trace[0]);
        assert!(report.final_loss <= min * (1.0 + 1e-9));
        let l = loss(&best, &data).unwrap();
        assert!((l - report.final_loss).abs() <= 1e-9 * report.final_loss.max(1e-300));
        let rel = l.sqrt() / norm2(data.ys());
        assert!((report.final_rel_l2 - rel).abs() <= 1e-6 * rel, "{} vs {rel}", report.final_rel_l2);
    }
}

#[test]
fn training_is_deterministic() {
    let (model, data) = wave_problem(5, true);
    let cfg = LsgdConfig { n_epoch: 25, lambda: 0.1, rho: 0.9, n_stag: 3, lr: 5e-3 };
    let (a, ra) = lsgd(&model, &data, &cfg).unwrap();
    let (b, rb) = lsgd(&model, &data, &cfg).unwrap();
    assert_eq!(ra.loss_trace, rb.loss_trace);
    assert_eq!(ra.lambda_trace, rb.lambda_trace);
    assert_eq!(a, b);
}

#[test]
fn empty_phase_one_matches_plain_lsgd() {
    let (model, data) = wave_problem(6, true);
    let main = LsgdConfig::plain(20, 1e-2);
    let pre = LsgdConfig { n_epoch: 0, lambda: 0.1, rho: 0.9, n_stag: 5, lr: 1e-2 };
    let (a, ra) = two_phase_lsgd(&model, &data, &pre, &main).unwrap();
    let (b, rb) = lsgd(&model, &data, &main).unwrap();
    assert_eq!(ra.loss_trace, rb.loss_trace);
    assert_eq!(ra.phase_boundary, Some(0));
    assert_eq!(a.partition(), b.partition());
    assert_eq!(a.coeffs(), b.coeffs());
}

#[test]
fn phase_two_starts_from_phase_one_exit() {
    let (model, data) = wave_problem(7, false);
    let pre = LsgdConfig { n_epoch: 15, lambda: 0.1, rho: 0.9, n_stag: 4, lr: 1e-2 };
    let main = LsgdConfig { n_epoch: 10, lambda: 5.0, rho: 0.3, n_stag: 1, lr: 1e-3 };
    let joint = two_phase_lsgd_run(&model, &data, &pre, &main).unwrap();
    let p1 = lsgd_run(&model, &data, &pre).unwrap();
    let p2 = lsgd_run(&p1.last, &data, &LsgdConfig::plain(10, 1e-3)).unwrap();
    let r = &joint.report;
    assert_eq!(r.phase_boundary, Some(15));
    assert_eq!(&r.loss_trace[..15], &p1.report.loss_trace[..]);
    assert_eq!(&r.loss_trace[15..], &p2.report.loss_trace[..]);
    assert!(r.lambda_trace[15..].iter().all(|&l| l == 0.0));
    assert_eq!(joint.best, p2.best);

    // The exit state carries λ = 0 coefficients for its partition.
    let a = design_matrix(p1.last.partition(), p1.last.basis(), data.xs()).unwrap();
    let c = solve_least_squares(&a, data.ys(), 0.0).unwrap();
    assert_eq!(p1.last.coeffs(), &c[..]);
}

#[test]
fn strong_ridge_shrinks_phase_one_coefficients() {
    let (model, data) = wave_problem(8, false);
    let main = LsgdConfig::plain(5, 1e-3);
    let strong = LsgdConfig { n_epoch: 5, lambda: 1e6, rho: 1.0, n_stag: 5, lr: 1e-3 };
    let weak = LsgdConfig { lambda: 0.0, ..strong };
    let (_, rs) = two_phase_lsgd(&model, &data, &strong, &main).unwrap();
    let (_, rw) = two_phase_lsgd(&model, &data, &weak, &main).unwrap();
    // Heavily shrunk coefficients leave nearly all of y unexplained.
    assert!(rs.rel_l2_trace[0] > 0.99);
    assert!(rw.rel_l2_trace[0] < 0.9);

    let a = design_matrix(model.partition(), model.basis(), data.xs()).unwrap();
    let c_strong = solve_least_squares(&a, data.ys(), 1e6).unwrap();
    let c_zero = solve_least_squares(&a, data.ys(), 0.0).unwrap();
    assert!(norm2(&c_strong) < 1e-2 * norm2(&c_zero));
}

#[test]
fn invalid_config_is_rejected() {
    let (model, data) = wave_problem(9, false);
    let bad = LsgdConfig { n_epoch: 3, lambda: 0.0, rho: 1.5, n_stag: 1, lr: 1e-3 };
    assert!(lsgd(&model, &data, &bad).is_err());
    let bad = LsgdConfig { n_stag: 0, rho: 0.5, ..bad };
    assert!(lsgd(&model, &data, &bad).is_err());
}

#[test]
fn baseline_fits_a_constant() {
    let mut rng = seeded_rng(10);
    let xs = random_points(&mut rng, 100, 1, 0.0, 1.0);
    let data = Dataset::new(xs, vec![0.7; 100]).unwrap();
    let (net, report) = baseline_resnet_fit(&data, 8, 8, 500, 1e-2, &mut seeded_rng(1)).unwrap();
    assert!(report.final_rel_l2 < 1e-2, "{}", report.final_rel_l2);
    let pred = net.predict(data.xs()).unwrap();
    assert!((pounet::bench::relative_l2(&pred, data.ys()).unwrap() - report.final_rel_l2).abs() < 1e-12);
    let (again, _) = baseline_resnet_fit(&data, 8, 8, 500, 1e-2, &mut seeded_rng(1)).unwrap();
    assert_eq!(net, again);
}

#[test]
fn baseline_gradient_matches_finite_differences() {
    let mut rng = seeded_rng(12);
    let xs = random_points(&mut rng, 10, 2, -1.0, 1.0);
    let ys: Vec<f64> = xs.row_iter().map(|x| x[0] * x[1]).collect();
    let data = Dataset::new(xs, ys).unwrap();
    let (net, _) = baseline_resnet_fit(&data, 5, 3, 20, 1e-2, &mut rng).unwrap();
    let (_, g) = net.loss_and_grad(&data).unwrap();
    let fd = central_diff(&net.params(), 1e-6, |p| {
        let mut n = net.clone();
        n.set_params(p).unwrap();
        n.loss_and_grad(&data).unwrap().0 / data.len() as f64
    });
    assert!(rel_err(&g, &fd) < 1e-5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lambda_trace_is_non_increasing(seed in 0u64..1000, rho in 0.0f64..=1.0, n_stag in 1usize..4) {
        let (model, data) = wave_problem(seed, false);
        let cfg = LsgdConfig { n_epoch: 12, lambda: 0.3, rho, n_stag, lr: 1e-2 };
        let (_, r) = lsgd(&model, &data, &cfg).unwrap();
        prop_assert!(r.loss_trace.len() <= 12);
        for w in r.lambda_trace.windows(2) {
            prop_assert!(w[1] == w[0] || w[1] == w[0] * rho);
        }
    }

    #[test]
    fn adam_first_step_is_signed_lr(g in prop::collection::vec(-10.0f64..10.0, 1..8), lr in 1e-4f64..1e-1) {
        prop_assume!(g.iter().all(|v| v.abs() > 1e-3));
        let mut state = AdamState::new(g.len(), lr);
        let mut p = vec![0.0; g.len()];
        state.step(&mut p, &g).unwrap();
        for (pi, gi) in p.iter().zip(&g) {
            prop_assert!((pi + lr * gi.signum()).abs() < lr * 1e-4);
        }
    }
}
