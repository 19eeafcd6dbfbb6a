//! Gaussian tail functions and truncated-interval ratios.
//!
//! Everything in this module is evaluated so that far tails (probabilities
//! far below `f64::MIN_POSITIVE`) still produce finite log-probabilities and
//! finite moment ratios.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Standardized argument beyond which tails switch to the continued fraction.
pub const TAIL_SWITCH: f64 = 6.0;

const CF_TERMS: usize = 80;

/// Standard normal density.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Scaled complementary error function `exp(x²)·erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x < 0.0 {
        // Only reached for moderate negative arguments; overflows past ~-26.
        return 2.0 * (x * x).exp() - erfcx(-x);
    }
    if x * SQRT_2 < TAIL_SWITCH {
        (x * x).exp() * libm::erfc(x)
    } else {
        // Laplace continued fraction: erfc(x) = exp(-x²)/√π · 1/(x + (1/2)/(x + (2/2)/(x + ...)))
        if x.is_infinite() {
            return 0.0;
        }
        let mut t = x;
        for k in (1..=CF_TERMS).rev() {
            t = x + (k as f64 * 0.5) / t;
        }
        FRAC_1_SQRT_PI / t
    }
}

/// `ln Φ(x)`, finite for every finite `x`.
pub fn log_normal_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 0.0;
    }
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if x < -1.0 {
        -0.5 * x * x + (0.5 * erfcx(-x * FRAC_1_SQRT_2)).ln()
    } else {
        (-normal_cdf(-x)).ln_1p()
    }
}

/// Probability mass and moment ratios of a standard normal on `[lo, hi)`.
///
/// With `Z = Φ(hi) − Φ(lo)` the ratios are
/// `r_k = (hi^k φ(hi) − lo^k φ(lo)) / Z` for `k = 0, 1, 3`, with `x^k φ(x) = 0`
/// at infinite endpoints. The truncated mean is `−r0` and the truncated
/// variance is `1 − r1 − r0²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalRatios {
    pub log_prob: f64,
    pub r0: f64,
    pub r1: f64,
    pub r3: f64,
}

impl IntervalRatios {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo < hi, "empty interval [{lo}, {hi})");
        if lo >= 0.0 {
            let f = Self::lower_regime(-hi, -lo);
            return IntervalRatios {
                log_prob: f.log_prob,
                r0: -f.r0,
                r1: f.r1,
                r3: f.r3,
            };
        }
        if hi <= 0.0 {
            return Self::lower_regime(lo, hi);
        }
        // lo < 0 < hi: mass is at least Φ(hi) − 1/2 or 1/2 − Φ(lo), no underflow.
        let z = 0.5 * (libm::erf(hi * FRAC_1_SQRT_2) - libm::erf(lo * FRAC_1_SQRT_2));
        let (phi_lo, phi_hi) = (pdf_or_zero(lo), pdf_or_zero(hi));
        let (m1_lo, m1_hi) = (mom_or_zero(lo, 1, phi_lo), mom_or_zero(hi, 1, phi_hi));
        let (m3_lo, m3_hi) = (mom_or_zero(lo, 3, phi_lo), mom_or_zero(hi, 3, phi_hi));
        IntervalRatios {
            log_prob: z.ln(),
            r0: (phi_hi - phi_lo) / z,
            r1: (m1_hi - m1_lo) / z,
            r3: (m3_hi - m3_lo) / z,
        }
    }

    /// Interval entirely in the lower half line (`hi ≤ 0`). All quantities are
    /// factored by `exp(−hi²/2)`, the largest density in the interval.
    fn lower_regime(lo: f64, hi: f64) -> Self {
        let e_hi = erfcx(-hi * FRAC_1_SQRT_2);
        let (one_minus_delta, delta, e_lo) = if lo == f64::NEG_INFINITY {
            (1.0, 0.0, 0.0)
        } else {
            let expo = -0.5 * (lo - hi) * (lo + hi);
            (-expo.exp_m1(), expo.exp(), erfcx(-lo * FRAC_1_SQRT_2))
        };
        let den = e_hi - e_lo * delta;
        let c = SQRT_2_OVER_PI / den;
        let lo_term = |k: i32| if delta == 0.0 { 0.0 } else { lo.powi(k) * delta };
        IntervalRatios {
            log_prob: -0.5 * hi * hi + (0.5 * den).ln(),
            r0: c * one_minus_delta,
            r1: c * (hi - lo_term(1)),
            r3: c * (hi.powi(3) - lo_term(3)),
        }
    }

    /// Mean of the standard normal restricted to the interval.
    pub fn mean(&self) -> f64 {
        -self.r0
    }

    /// Variance of the standard normal restricted to the interval.
    pub fn variance(&self) -> f64 {
        1.0 - self.r1 - self.r0 * self.r0
    }
}

#[inline]
fn pdf_or_zero(x: f64) -> f64 {
    if x.is_finite() {
        normal_pdf(x)
    } else {
        0.0
    }
}

#[inline]
fn mom_or_zero(x: f64, k: i32, phi: f64) -> f64 {
    if x.is_finite() {
        x.powi(k) * phi
    } else {
        0.0
    }
}

/// Complex circular Gaussian log-density `ln CN(v; mean, var)` with `var = E|v−mean|²`.
#[inline]
pub fn log_cn_density(dist_sq: f64, var: f64) -> f64 {
    -(PI * var).ln() - dist_sq / var
}

/// `ln Σ exp(v_i)` ignoring `-inf` entries. Returns `-inf` for an all-`-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erfcx_matches_direct_form_across_switch() {
        for i in 0..400 {
            let x = 0.05 * i as f64;
            let cf = erfcx(x);
            // exp(x²)·erfc(x) is relative-accurate up to x ≈ 26
            let direct = (x * x).exp() * libm::erfc(x);
            assert!(((cf - direct) / direct).abs() < 1e-13, "x={x} {cf} {direct}");
        }
    }

    #[test]
    fn erfcx_asymptote() {
        let x = 1e6;
        assert!((erfcx(x) * x * PI.sqrt() - 1.0).abs() < 1e-12);
        assert_eq!(erfcx(f64::INFINITY), 0.0);
    }

    #[test]
    fn log_cdf_far_tail_is_finite() {
        let v = log_normal_cdf(-40.0);
        // Mills ratio: ln Φ(x) ≈ −x²/2 − ln(−x√(2π)) for large negative x
        let approx = -800.0 - (40.0 * (2.0 * PI).sqrt()).ln();
        assert!((v - approx).abs() < 1e-3);
        assert!((log_normal_cdf(0.0) - 0.5f64.ln()).abs() < 1e-15);
        assert!(log_normal_cdf(10.0) < 0.0);
    }

    #[test]
    fn half_line_ratios() {
        let r = IntervalRatios::new(0.0, f64::INFINITY);
        assert!((r.log_prob - 0.5f64.ln()).abs() < 1e-15);
        assert!((r.mean() - SQRT_2_OVER_PI).abs() < 1e-15);
        assert!((r.variance() - (1.0 - 2.0 / PI)).abs() < 1e-15);
    }

    #[test]
    fn ratios_symmetric_under_reflection() {
        let a = IntervalRatios::new(-2.5, -0.3);
        let b = IntervalRatios::new(0.3, 2.5);
        assert!((a.log_prob - b.log_prob).abs() < 1e-14);
        assert!((a.r0 + b.r0).abs() < 1e-14);
        assert!((a.r1 - b.r1).abs() < 1e-14);
        assert!((a.r3 - b.r3).abs() < 1e-13);
    }

    #[test]
    fn deep_tail_interval_stays_finite() {
        let r = IntervalRatios::new(45.0, 46.0);
        assert!(r.log_prob.is_finite() && r.log_prob < -1000.0);
        // truncated mean sits just above the lower edge
        assert!(r.mean() > 45.0 && r.mean() < 45.1);
        assert!(r.variance() > 0.0 && r.variance() < 1e-3);
    }

    #[test]
    fn log_sum_exp_handles_neg_inf() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[0.0, f64::NEG_INFINITY, 0.0]);
        assert!((v - 2f64.ln()).abs() < 1e-15);
    }
}
