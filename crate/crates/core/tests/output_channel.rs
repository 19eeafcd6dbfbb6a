mod common;

use chanest::output_channel::{
    default_quantizer, log_bin_probability, posterior_z_moments, quantize, QuantizedVector, QuantizerSpec,
};
use chanest::{Error, C64};
use common::{integrate, rail_posterior_quadrature};

fn single(spec: &QuantizerSpec, re: u16, im: u16) -> QuantizedVector {
    QuantizedVector { re_idx: vec![re], im_idx: vec![im], spec: spec.clone() }
}

#[test]
fn sign_quantizer_maps_components_to_bins() {
    let spec = default_quantizer(1, 1.0).unwrap();
    let q = quantize(&[C64::new(0.3, -0.2)], &spec).unwrap();
    assert_eq!((q.re_idx[0], q.im_idx[0]), (2, 1));
}

#[test]
fn value_on_threshold_goes_to_upper_bin() {
    let spec = default_quantizer(2, 2f64.sqrt()).unwrap();
    let delta = spec.inner_thresholds()[2];
    let q = quantize(&[C64::new(0.0, delta), C64::new(-delta, 1.2)], &spec).unwrap();
    assert_eq!((q.re_idx[0], q.im_idx[0]), (3, 4));
    assert_eq!((q.re_idx[1], q.im_idx[1]), (2, 4));
}

#[test]
fn nan_input_is_rejected() {
    let spec = default_quantizer(1, 1.0).unwrap();
    let err = quantize(&[C64::new(0.0, 0.0), C64::new(f64::NAN, 0.0)], &spec).unwrap_err();
    assert_eq!(err, Error::QuantizeNaN(1));
}

#[test]
fn default_quantizer_levels() {
    let one = default_quantizer(1, 1.0).unwrap();
    let d1 = 1.5956 / 2f64.sqrt();
    assert_eq!(one.inner_thresholds(), &[0.0]);
    assert!((one.symbols()[0] + d1 / 2.0).abs() < 1e-4);
    assert!((one.symbols()[1] - d1 / 2.0).abs() < 1e-4);

    let two = default_quantizer(2, 2f64.sqrt()).unwrap();
    let t = two.inner_thresholds();
    assert_eq!(t.len(), 3);
    assert!((t[0] + 0.9957).abs() < 1e-4 && t[1] == 0.0 && (t[2] - 0.9957).abs() < 1e-4);
    assert_eq!(default_quantizer(0, 1.0).unwrap_err(), Error::InvalidBitDepth(0));
}

#[test]
fn default_quantizer_is_symmetric() {
    for bits in 1..=4 {
        let q = default_quantizer(bits, 0.7).unwrap();
        let n = q.negated();
        for (a, b) in q.inner_thresholds().iter().zip(n.inner_thresholds()) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in q.symbols().iter().zip(n.symbols()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

/// Step sizes minimizing the MSE of a uniform mid-rise quantizer on a unit
/// Gaussian, by quadrature of the distortion and a fine grid over the step.
#[test]
fn step_constants_minimize_gaussian_distortion() {
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mse = |bits: u32, step: f64| -> f64 {
        let half = 1i64 << (bits - 1);
        (-half..half)
            .map(|j| {
                let lo = if j == -half { -12.0 } else { j as f64 * step };
                let hi = if j == half - 1 { 12.0 } else { (j + 1) as f64 * step };
                let b = (j as f64 + 0.5) * step;
                integrate(|z| (z - b) * (z - b) * phi(z), lo, hi, &[], 1e-12)
            })
            .sum()
    };
    for (bits, expected) in [(1, 1.5956), (2, 0.9957), (3, 0.5860)] {
        let best = (0..2000)
            .map(|i| 0.3 + i as f64 * 1e-3)
            .min_by(|a, b| mse(bits, *a).total_cmp(&mse(bits, *b)))
            .unwrap();
        assert!((best - expected).abs() < 1e-3, "bits {bits}: {best} vs {expected}");
    }
}

#[test]
fn uninformative_bin_leaves_prior_untouched() {
    let spec = QuantizerSpec::unbounded();
    let y = QuantizedVector { re_idx: vec![1, 1], im_idx: vec![1, 1], spec };
    let p = [C64::new(0.4, -1.3), C64::new(-2.0, 0.1)];
    let (z, tau_z) = posterior_z_moments(&y, &p, 0.8, 0.3).unwrap();
    for (a, b) in z.iter().zip(&p) {
        assert!((a - b).norm() < 1e-12);
    }
    assert!((tau_z - 0.8).abs() < 1e-12);
    let lp = log_bin_probability(&y, &p, 0.8, 0.3).unwrap();
    assert!(lp.iter().all(|v| v.abs() < 1e-14));
}

#[test]
fn sign_bin_with_zero_noise_gives_half_normal_mean() {
    let spec = default_quantizer(1, 1.0).unwrap();
    let y = single(&spec, 2, 2);
    let (z, _) = posterior_z_moments(&y, &[C64::default()], 1.0, 0.0).unwrap();
    let expected = (1.0 / std::f64::consts::PI).sqrt();
    assert!((z[0].re - expected).abs() < 1e-12);
    assert!((z[0].re - 0.5642).abs() < 1e-4);
    let lp = log_bin_probability(&y, &[C64::default()], 1.0, 0.3).unwrap();
    assert!((lp[0] - 2.0 * 0.5f64.ln()).abs() < 1e-14);
}

#[test]
fn quadrature_agreement_on_random_tuples() {
    let mut rng = common::rng(11);
    for bits in 1..=3 {
        let spec = default_quantizer(bits, 2.0).unwrap();
        for _ in 0..40 {
            let tau_p = common::log_uniform(&mut rng, 1e-3, 10.0);
            let tau_w = common::log_uniform(&mut rng, 1e-3, 10.0);
            let p = C64::new(common::uniform(&mut rng, -2.5, 2.5), common::uniform(&mut rng, -2.5, 2.5));
            let r = p + common::complex_normal(&mut rng, tau_p + tau_w);
            let y = quantize(&[r], &spec).unwrap();
            let (z, tau_z) = posterior_z_moments(&y, &[p], tau_p, tau_w).unwrap();
            let lp = log_bin_probability(&y, &[p], tau_p, tau_w).unwrap()[0];
            let (lr, hr) = spec.bin_bounds(y.re_idx[0]);
            let (li, hi) = spec.bin_bounds(y.im_idx[0]);
            let qr = rail_posterior_quadrature(lr, hr, p.re, tau_p / 2.0, tau_w / 2.0);
            let qi = rail_posterior_quadrature(li, hi, p.im, tau_p / 2.0, tau_w / 2.0);
            assert!((z[0].re - qr.1).abs() < 1e-8 && (z[0].im - qi.1).abs() < 1e-8);
            assert!((tau_z - (qr.2 + qi.2)).abs() < 1e-8);
            assert!((lp - (qr.0 + qi.0)).abs() < 1e-10);
        }
    }
}

#[test]
fn narrow_bin_and_vanishing_noise_recover_symbol() {
    let spec = QuantizerSpec::from_levels(vec![0.5, 0.5001, 0.6], vec![0.0, 0.50005, 0.55, 1.0]).unwrap();
    let y = single(&spec, 2, 2);
    let (z, _) = posterior_z_moments(&y, &[C64::new(0.0, 1.0)], 1.0, 1e-14).unwrap();
    assert!((z[0].re - 0.50005).abs() < 1e-4);
    assert!((z[0].im - 0.50005).abs() < 1e-4);
}

/// `ln Φ(−x)` from the Mills-ratio continued fraction, valid for large `x`.
fn log_lower_tail(x: f64) -> f64 {
    let mut cf = x;
    for k in (1..200).rev() {
        cf = x + k as f64 / cf;
    }
    -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln() - cf.ln()
}

#[test]
fn far_tail_bins_stay_finite() {
    let spec = default_quantizer(1, 1.0).unwrap();
    let y = single(&spec, 1, 2);
    let p = [C64::new(40.0, 40.0)];
    let (tau_p, tau_w) = (1.0, 1e-3);
    let (z, tau_z) = posterior_z_moments(&y, &p, tau_p, tau_w).unwrap();
    assert!(z[0].re.is_finite() && z[0].im.is_finite() && tau_z.is_finite() && tau_z > 0.0);
    assert!(z[0].re < 0.5 && z[0].re > -0.5);
    let lp = log_bin_probability(&y, &p, tau_p, tau_w).unwrap()[0];
    let x = 40.0 / (0.5 * (tau_p + tau_w)).sqrt();
    let upper = (0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)).ln();
    let expected = log_lower_tail(x) + upper;
    assert!(((lp - expected) / expected).abs() < 1e-10, "{lp} vs {expected}");
}

#[test]
fn variance_arguments_are_validated() {
    let spec = default_quantizer(1, 1.0).unwrap();
    let y = single(&spec, 1, 1);
    assert!(matches!(posterior_z_moments(&y, &[C64::default()], 0.0, 1.0), Err(Error::ChannelEvaluation(_))));
    assert!(matches!(posterior_z_moments(&y, &[C64::default(); 2], 1.0, 1.0), Err(Error::DimensionMismatch(_))));
}
