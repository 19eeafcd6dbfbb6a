mod common;

use chanest::baselines::least_squares;
use chanest::experiment::runner::{build_instance, instance_samples, quantize_samples, trial_seed};
use chanest::gamp::damp;
use chanest::linalg::{adjoint_mismatch, LinearOperator, MeanRemoved};
use chanest::output_channel::AwgnChannel;
use chanest::params::{estimate_joint, OuterLoopOptions};
use chanest::sim::{nmse_db, ChannelConfig, QuantizerChoice};
use chanest::{run_gamp, DenseOperator, Error, GampOptions, ParamLambda, C64};
use common::{lmmse, rel_err};

fn lmmse_case(m: usize, n: usize, seed: u64, tau_w: f64) -> (DenseOperator, Vec<C64>, Vec<C64>) {
    let a = DenseOperator::random_gaussian(m, n, 1.0 / m as f64, seed);
    let mut rng = common::rng(seed ^ 0x5eed);
    let x: Vec<C64> = (0..n).map(|_| common::complex_normal(&mut rng, 1.0)).collect();
    let y: Vec<C64> =
        a.forward(&x).into_iter().map(|z| z + common::complex_normal(&mut rng, tau_w)).collect();
    let reference = lmmse(a.data(), m, n, &y, 1.0, tau_w);
    (a, y, reference)
}

fn tight() -> GampOptions {
    GampOptions { max_inner_iters: 2000, tol_rel_change: 1e-12, ..GampOptions::default() }
}

#[test]
fn damp_is_a_convex_combination() {
    assert_eq!(damp(&4.0, &2.0, 0.5), 3.0);
    assert_eq!(damp(&1.5, &-7.0, 1.0), 1.5);
    let w = C64::new(2.0, -4.0);
    assert!((damp(&C64::default(), &w, 0.25) - w * 0.75).norm() < 1e-15);
}

#[test]
fn identity_pass_through_returns_measurements() {
    let a = DenseOperator::identity(4);
    let y = [C64::new(0.5, -1.0), C64::new(2.0, 0.3), C64::new(-0.7, 0.0), C64::new(0.1, 1.4)];
    let channel = AwgnChannel { y: &y, tau_w: 1e-12 };
    let opts = GampOptions { max_inner_iters: 200_000, tol_rel_change: 0.0, ..GampOptions::default() };
    let res = run_gamp(&a, &ParamLambda::gaussian(1.0).unwrap(), &channel, &opts).unwrap();
    for (x, v) in res.x_hat.iter().zip(&y) {
        assert!((x - v).norm() < 1e-5, "{x} vs {v}");
    }
}

#[test]
fn small_gaussian_system_matches_lmmse() {
    let (a, y, reference) = lmmse_case(8, 4, 1, 0.1);
    let res = run_gamp(&a, &ParamLambda::gaussian(1.0).unwrap(), &AwgnChannel { y: &y, tau_w: 0.1 }, &tight()).unwrap();
    assert!(res.converged);
    assert!(rel_err(&res.x_hat, &reference) < 1e-4);
}

#[test]
fn random_systems_match_lmmse() {
    for seed in 0..20 {
        let (a, y, reference) = lmmse_case(64, 32, 100 + seed, 0.1);
        let res =
            run_gamp(&a, &ParamLambda::gaussian(1.0).unwrap(), &AwgnChannel { y: &y, tau_w: 0.1 }, &tight()).unwrap();
        assert!(res.converged, "seed {seed}");
        let err = rel_err(&res.x_hat, &reference);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn damped_residual_is_monotone_after_warmup() {
    for factor in [0.5, 0.7] {
        let (a, y, _) = lmmse_case(64, 32, 7, 0.1);
        let opts = GampOptions { damping_factor: factor, ..tight() };
        let res = run_gamp(&a, &ParamLambda::gaussian(1.0).unwrap(), &AwgnChannel { y: &y, tau_w: 0.1 }, &opts).unwrap();
        let h = &res.residual_history;
        assert!(!h.is_empty() && res.iterations_used == h.len());
        for t in 5..h.len() - 1 {
            assert!(h[t + 1] <= h[t] * (1.0 + 1e-9), "factor {factor}: step {t}: {} > {}", h[t + 1], h[t]);
        }
    }
}

#[test]
fn repeated_runs_are_bit_identical() {
    let (a, y, _) = lmmse_case(64, 32, 3, 0.1);
    let prior = ParamLambda::bernoulli_gaussian(0.4, 2.0).unwrap();
    let run = || run_gamp(&a, &prior, &AwgnChannel { y: &y, tau_w: 0.1 }, &GampOptions::default()).unwrap();
    let (r1, r2) = (run(), run());
    assert_eq!(r1.x_hat, r2.x_hat);
    assert_eq!(r1.residual_history, r2.residual_history);
}

#[test]
fn mismatched_sizes_and_nan_are_reported() {
    let (a, y, _) = lmmse_case(8, 4, 2, 0.1);
    let prior = ParamLambda::gaussian(1.0).unwrap();
    let short = &y[..7];
    let err = run_gamp(&a, &prior, &AwgnChannel { y: short, tau_w: 0.1 }, &GampOptions::default()).unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch(_)));
    let mut bad = y.clone();
    bad[3] = C64::new(f64::NAN, 0.0);
    let err = run_gamp(&a, &prior, &AwgnChannel { y: &bad, tau_w: 0.1 }, &GampOptions::default()).unwrap_err();
    assert!(matches!(err, Error::NumericalDivergence { .. }));
    let opts = GampOptions { damping_factor: 0.0, ..GampOptions::default() };
    assert!(matches!(run_gamp(&a, &prior, &AwgnChannel { y: &y, tau_w: 0.1 }, &opts), Err(Error::InvalidParams(_))));
}

#[test]
fn mean_removal_centers_a_constant_operator() {
    let (m, n) = (6, 5);
    let a = DenseOperator::new(m, n, vec![C64::new(0.7, -0.2); m * n]).unwrap();
    let wrapped = MeanRemoved::new(&a);
    let dense = DenseOperator::from_operator(&wrapped);
    for i in 0..m {
        let mean: C64 = (0..n).map(|j| dense.get(i, j)).sum::<C64>() / n as f64;
        assert!(mean.norm() <= 1e-12, "row {i}: {mean}");
    }
    assert!(adjoint_mismatch(&wrapped, 4) < 1e-10);
}

#[test]
fn mean_removal_leaves_centered_operator_alone() {
    let (m, n) = (12, 8);
    let raw = DenseOperator::random_gaussian(m, n, 1.0, 9);
    let mean: C64 = raw.data().iter().sum::<C64>() / (m * n) as f64;
    let a = DenseOperator::new(m, n, raw.data().iter().map(|v| v - mean).collect()).unwrap();
    let wrapped = MeanRemoved::new(&a);
    assert!(adjoint_mismatch(&wrapped, 5) < 1e-10);
    let mut rng = common::rng(12);
    let mut x: Vec<C64> = (0..n).map(|_| common::complex_normal(&mut rng, 1.0)).collect();
    let centre = x.iter().sum::<C64>() / n as f64;
    x.iter_mut().for_each(|v| *v -= centre);
    let mut xa = x.clone();
    xa.push(C64::default());
    let out = wrapped.forward(&xa);
    let direct = a.forward(&x);
    for (o, d) in out.iter().zip(&direct) {
        assert!((o - d).norm() <= 1e-10);
    }
    assert!(out[m].norm() <= 1e-10);
}

#[test]
fn mean_removal_reaches_lmmse_on_biased_operator() {
    let (m, n) = (64, 32);
    let raw = DenseOperator::random_gaussian(m, n, 1.0 / m as f64, 21);
    let bias = C64::new(0.3, 0.1);
    let a = DenseOperator::new(m, n, raw.data().iter().map(|v| v + bias).collect()).unwrap();
    let mut rng = common::rng(22);
    let x: Vec<C64> = (0..n).map(|_| common::complex_normal(&mut rng, 1.0)).collect();
    let y: Vec<C64> = a.forward(&x).into_iter().map(|z| z + common::complex_normal(&mut rng, 0.1)).collect();
    let reference = lmmse(a.data(), m, n, &y, 1.0, 0.1);
    let prior = ParamLambda::gaussian(1.0).unwrap();
    let channel = AwgnChannel { y: &y, tau_w: 0.1 };
    let plain = GampOptions { damping_factor: 0.3, max_inner_iters: 400, ..tight() };
    match run_gamp(&a, &prior, &channel, &plain) {
        Err(Error::NumericalDivergence { .. }) => {}
        Ok(res) => assert!(!res.converged || rel_err(&res.x_hat, &reference) > 1e-2),
        Err(e) => panic!("{e}"),
    }
    let opts = GampOptions { mean_removal: true, ..plain };
    let res = run_gamp(&a, &prior, &channel, &opts).unwrap();
    assert!(res.converged);
    let err = rel_err(&res.x_hat, &reference);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn desk_sign_measurements_converge_and_beat_least_squares() {
    let cfg = ChannelConfig::desk();
    let inst = build_instance(&cfg, trial_seed(1, 0)).unwrap();
    let noisy = instance_samples(&inst, 10.0).unwrap();
    let y = quantize_samples(&noisy, &QuantizerChoice::Default(1)).unwrap();
    let est = estimate_joint(&inst.op, &y, &GampOptions::default(), &OuterLoopOptions::default(), None).unwrap();
    assert!(est.converged);
    let ls = least_squares(&inst.op, &y, 200, 1e-8).unwrap();
    let amp = nmse_db(&est.x_hat, &inst.channel.x).unwrap();
    let base = nmse_db(&ls.x_hat, &inst.channel.x).unwrap();
    assert!(amp < base, "AMP-PE {amp} dB vs LS {base} dB");
}
