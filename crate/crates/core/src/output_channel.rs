//! Quantized-measurement likelihood: AWGN followed by a per-component
//! `K`-bit quantizer applied separately to real and imaginary parts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::parallel;
use crate::special::IntervalRatios;

/// MSE-optimal uniform quantizer step for a unit-variance real Gaussian, by bit depth.
const OPTIMAL_UNIFORM_STEP: [f64; 3] = [1.5956, 0.9957, 0.5860];

/// Pre-quantization complex noise variance `E|w|²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamTheta {
    pub tau_w: f64,
}

impl ParamTheta {
    pub fn new(tau_w: f64) -> Result<Self> {
        let t = ParamTheta { tau_w };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_w > 0.0 && self.tau_w.is_finite()) {
            return Err(Error::InvalidParams(format!("tau_w must be positive, got {}", self.tau_w)));
        }
        Ok(())
    }
}

/// Scalar quantizer shared by the real and imaginary rails.
///
/// `thresholds` holds the `2^K − 1` finite inner thresholds; the outer ones
/// are implicitly `±∞`. Bin `k` (1-based) covers `[a_{k−1}, a_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawQuantizer", into = "RawQuantizer")]
pub struct QuantizerSpec {
    bits: u32,
    thresholds: Vec<f64>,
    symbols: Vec<f64>,
    input_power: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawQuantizer {
    pub thresholds: Vec<f64>,
    pub symbols: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_power: Option<f64>,
}

impl TryFrom<RawQuantizer> for QuantizerSpec {
    type Error = Error;
    fn try_from(raw: RawQuantizer) -> Result<Self> {
        let q = QuantizerSpec::from_levels(raw.thresholds, raw.symbols)?;
        match raw.input_power {
            Some(p) => q.with_input_power(p),
            None => Ok(q),
        }
    }
}

impl From<QuantizerSpec> for RawQuantizer {
    fn from(q: QuantizerSpec) -> Self {
        RawQuantizer { thresholds: q.thresholds, symbols: q.symbols, input_power: q.input_power }
    }
}

impl QuantizerSpec {
    /// Builds a quantizer from its finite inner thresholds and bin symbols.
    pub fn from_levels(thresholds: Vec<f64>, symbols: Vec<f64>) -> Result<Self> {
        let bins = thresholds.len() + 1;
        if !bins.is_power_of_two() {
            return Err(Error::InvalidQuantizer(format!("{bins} bins is not a power of two")));
        }
        if symbols.len() != bins {
            return Err(Error::InvalidQuantizer(format!(
                "{} symbols for {bins} bins",
                symbols.len()
            )));
        }
        if thresholds.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidQuantizer("inner thresholds must be finite".into()));
        }
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidQuantizer("thresholds must be strictly increasing".into()));
        }
        let spec = QuantizerSpec { bits: bins.trailing_zeros(), thresholds, symbols, input_power: None };
        for (k, &b) in spec.symbols.iter().enumerate() {
            let (lo, hi) = spec.bin_bounds(k as u16 + 1);
            if !(b.is_finite() && b >= lo && b < hi) {
                return Err(Error::InvalidQuantizer(format!(
                    "symbol {b} outside bin {} = [{lo}, {hi})",
                    k + 1
                )));
            }
        }
        Ok(spec)
    }

    /// A single bin covering the whole line: the observation carries no information.
    pub fn unbounded() -> Self {
        QuantizerSpec { bits: 0, thresholds: Vec::new(), symbols: vec![0.0], input_power: None }
    }

    /// Records the complex input power `E|r|²` the converter was calibrated for.
    pub fn with_input_power(mut self, power: f64) -> Result<Self> {
        if !(power > 0.0 && power.is_finite()) {
            return Err(Error::InvalidQuantizer(format!("input_power must be positive, got {power}")));
        }
        self.input_power = Some(power);
        Ok(self)
    }

    pub fn input_power(&self) -> Option<f64> {
        self.input_power
    }

    /// True when every threshold sits at zero, so the observation is
    /// unchanged by any positive rescaling of the input.
    pub fn is_scale_free(&self) -> bool {
        !self.thresholds.is_empty() && self.thresholds.iter().all(|&t| t == 0.0)
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn num_bins(&self) -> usize {
        self.symbols.len()
    }

    pub fn inner_thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn symbols(&self) -> &[f64] {
        &self.symbols
    }

    /// `[a_{k−1}, a_k)` for 1-based bin `k`.
    pub fn bin_bounds(&self, k: u16) -> (f64, f64) {
        let k = k as usize;
        let lo = if k == 1 { f64::NEG_INFINITY } else { self.thresholds[k - 2] };
        let hi = if k == self.symbols.len() { f64::INFINITY } else { self.thresholds[k - 1] };
        (lo, hi)
    }

    /// 1-based bin index of a real value; ties go to the upper bin.
    pub fn bin_of(&self, v: f64) -> u16 {
        self.thresholds.partition_point(|&t| t <= v) as u16 + 1
    }

    pub fn symbol(&self, k: u16) -> f64 {
        self.symbols[k as usize - 1]
    }

    /// Reflects thresholds and symbols through zero.
    pub fn negated(&self) -> Self {
        QuantizerSpec {
            bits: self.bits,
            thresholds: self.thresholds.iter().rev().map(|t| -t).collect(),
            symbols: self.symbols.iter().rev().map(|s| -s).collect(),
            input_power: self.input_power,
        }
    }
}

/// Mean squared error of the uniform mid-rise quantizer with `2^bits` bins and
/// step `step` applied to a standard normal input.
pub fn uniform_quantizer_mse(bits: u32, step: f64) -> f64 {
    let spec = uniform_levels(bits, step);
    (1..=spec.num_bins() as u16)
        .map(|k| {
            let (lo, hi) = spec.bin_bounds(k);
            let r = IntervalRatios::new(lo, hi);
            let d = r.mean() - spec.symbol(k);
            r.log_prob.exp() * (r.variance() + d * d)
        })
        .sum()
}

fn uniform_levels(bits: u32, step: f64) -> QuantizerSpec {
    let half = 1i64 << (bits - 1);
    let thresholds = (-(half - 1)..half).map(|j| j as f64 * step).collect();
    let symbols = (-half..half).map(|j| (j as f64 + 0.5) * step).collect();
    QuantizerSpec { bits, thresholds, symbols, input_power: None }
}

/// MSE-optimal uniform step for a unit-variance Gaussian, found by golden-section search.
pub fn optimal_uniform_step(bits: u32) -> f64 {
    let f = |s: f64| uniform_quantizer_mse(bits, s);
    let (mut a, mut b) = (1e-3, 4.0);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-10 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Uniform mid-rise quantizer scaled for a complex input of RMS `input_rms`
/// (so each rail has RMS `input_rms/√2`).
pub fn default_quantizer(bits: u32, input_rms: f64) -> Result<QuantizerSpec> {
    if !(1..=15).contains(&bits) {
        return Err(Error::InvalidBitDepth(bits));
    }
    if !(input_rms > 0.0 && input_rms.is_finite()) {
        return Err(Error::InvalidQuantizer(format!("input_rms must be positive, got {input_rms}")));
    }
    let c = OPTIMAL_UNIFORM_STEP
        .get(bits as usize - 1)
        .copied()
        .unwrap_or_else(|| optimal_uniform_step(bits));
    uniform_levels(bits, c * input_rms / std::f64::consts::SQRT_2).with_input_power(input_rms * input_rms)
}

/// Quantized observations: 1-based bin indices for both rails.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedVector {
    pub re_idx: Vec<u16>,
    pub im_idx: Vec<u16>,
    pub spec: QuantizerSpec,
}

impl QuantizedVector {
    pub fn len(&self) -> usize {
        self.re_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re_idx.is_empty()
    }

    /// Replaces each bin index by its symbol value.
    pub fn dequantize(&self) -> Vec<C64> {
        self.re_idx
            .iter()
            .zip(&self.im_idx)
            .map(|(&r, &i)| C64::new(self.spec.symbol(r), self.spec.symbol(i)))
            .collect()
    }
}

pub fn quantize(v: &[C64], spec: &QuantizerSpec) -> Result<QuantizedVector> {
    if let Some(i) = v.iter().position(|z| z.re.is_nan() || z.im.is_nan()) {
        return Err(Error::QuantizeNaN(i));
    }
    Ok(QuantizedVector {
        re_idx: v.iter().map(|z| spec.bin_of(z.re)).collect(),
        im_idx: v.iter().map(|z| spec.bin_of(z.im)).collect(),
        spec: spec.clone(),
    })
}

/// Posterior mean and variance of one real rail `z ~ N(p, v_p)` given
/// `z + w ∈ [lo, hi)` with `w ~ N(0, v_w)`.
#[inline]
pub fn rail_posterior(lo: f64, hi: f64, p: f64, v_p: f64, v_w: f64) -> (f64, f64) {
    let s = v_p + v_w;
    let sd = s.sqrt();
    let r = IntervalRatios::new((lo - p) / sd, (hi - p) / sd);
    let mean = p - v_p / sd * r.r0;
    let var = v_p - v_p * v_p / s * (r.r1 + r.r0 * r.r0);
    (mean, var.clamp(0.0, v_p))
}

fn check_lengths(y: &QuantizedVector, p_hat: &[C64]) -> Result<()> {
    if y.len() != p_hat.len() || y.im_idx.len() != y.re_idx.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} observations vs {} pseudo-priors",
            y.len(),
            p_hat.len()
        )));
    }
    Ok(())
}

fn check_variances(tau_p: f64, tau_w: f64) -> Result<()> {
    if !(tau_p > 0.0 && tau_p.is_finite()) || !(tau_w >= 0.0 && tau_w.is_finite()) {
        return Err(Error::ChannelEvaluation(format!(
            "need tau_p > 0 and tau_w >= 0, got tau_p={tau_p}, tau_w={tau_w}"
        )));
    }
    Ok(())
}

/// Posterior moments of the noiseless measurements `z` under the quantized
/// likelihood and Gaussian pseudo-prior `CN(p̂_m, τ_p)`.
///
/// Returns `ẑ` and the complex-variance scalar `τ_z` (the mean over all `2M`
/// rails of the per-rail variance, times two).
pub fn posterior_z_moments(
    y: &QuantizedVector,
    p_hat: &[C64],
    tau_p: f64,
    tau_w: f64,
) -> Result<(Vec<C64>, f64)> {
    check_lengths(y, p_hat)?;
    check_variances(tau_p, tau_w)?;
    let (v_p, v_w) = (0.5 * tau_p, 0.5 * tau_w);
    let spec = &y.spec;
    let per: Vec<(C64, f64)> = parallel::map_indexed(p_hat.len(), |m| {
        let p = p_hat[m];
        let (lr, hr) = spec.bin_bounds(y.re_idx[m]);
        let (li, hi) = spec.bin_bounds(y.im_idx[m]);
        let (mr, vr) = rail_posterior(lr, hr, p.re, v_p, v_w);
        let (mi, vi) = rail_posterior(li, hi, p.im, v_p, v_w);
        (C64::new(mr, mi), vr + vi)
    });
    let mut z_hat = Vec::with_capacity(per.len());
    let mut var_sum = 0.0;
    for (z, v) in per {
        if !(z.re.is_finite() && z.im.is_finite() && v.is_finite()) {
            return Err(Error::ChannelEvaluation(format!(
                "non-finite output moment at index {}",
                z_hat.len()
            )));
        }
        z_hat.push(z);
        var_sum += v;
    }
    let tau_z = if z_hat.is_empty() { 0.0 } else { var_sum / z_hat.len() as f64 };
    Ok((z_hat, tau_z))
}

/// `ln P(Re bin) + ln P(Im bin)` per measurement under `CN(p̂_m, τ_p + τ_w)`.
pub fn log_bin_probability(y: &QuantizedVector, p_hat: &[C64], tau_p: f64, tau_w: f64) -> Result<Vec<f64>> {
    check_lengths(y, p_hat)?;
    check_variances(tau_p, tau_w)?;
    let sd = (0.5 * (tau_p + tau_w)).sqrt();
    let spec = &y.spec;
    Ok(parallel::map_indexed(p_hat.len(), |m| {
        let p = p_hat[m];
        let (lr, hr) = spec.bin_bounds(y.re_idx[m]);
        let (li, hi) = spec.bin_bounds(y.im_idx[m]);
        IntervalRatios::new((lr - p.re) / sd, (hr - p.re) / sd).log_prob
            + IntervalRatios::new((li - p.im) / sd, (hi - p.im) / sd).log_prob
    }))
}

/// Summed log-likelihood `L(u) = Σ_m ln P(y_m | p̂_m, τ_p, τ_w = e^u)` with its
/// first and second derivatives in `u = ln τ_w`.
pub fn log_likelihood_derivs(
    y: &QuantizedVector,
    p_hat: &[C64],
    tau_p: f64,
    tau_w: f64,
) -> Result<(f64, f64, f64)> {
    check_lengths(y, p_hat)?;
    check_variances(tau_p, tau_w)?;
    let s = 0.5 * (tau_p + tau_w);
    let sd = s.sqrt();
    let spec = &y.spec;
    let per: Vec<[f64; 3]> = parallel::map_indexed(p_hat.len(), |m| {
        let p = p_hat[m];
        let mut acc = [0.0; 3];
        for (k, c) in [(y.re_idx[m], p.re), (y.im_idx[m], p.im)] {
            let (lo, hi) = spec.bin_bounds(k);
            let r = IntervalRatios::new((lo - c) / sd, (hi - c) / sd);
            acc[0] += r.log_prob;
            acc[1] += r.r1;
            acc[2] += 3.0 * r.r1 - r.r3 - r.r1 * r.r1;
        }
        acc
    });
    let (mut l, mut sum_r1, mut sum_curv) = (0.0, 0.0, 0.0);
    for a in per {
        l += a[0];
        sum_r1 += a[1];
        sum_curv += a[2];
    }
    // dℓ/ds = −r1/(2s), d²ℓ/ds² = (3r1 − r3 − r1²)/(4s²), ds/du = d²s/du² = τ_w/2
    let ds = 0.5 * tau_w;
    let l_s = -sum_r1 / (2.0 * s);
    let l_ss = sum_curv / (4.0 * s * s);
    Ok((l, l_s * ds, l_ss * ds * ds + l_s * ds))
}

/// Scalar channel seen by GAMP on the measurement side.
pub trait OutputChannel: Sync {
    fn len(&self) -> usize;
    /// Posterior mean of `z` and scalar posterior variance given `CN(p̂, τ_p)`.
    fn posterior(&self, p_hat: &[C64], tau_p: f64) -> Result<(Vec<C64>, f64)>;
}

/// Quantized observations under noise variance `theta`.
#[derive(Debug, Clone, Copy)]
pub struct QuantizedChannel<'a> {
    pub y: &'a QuantizedVector,
    pub theta: ParamTheta,
}

impl OutputChannel for QuantizedChannel<'_> {
    fn len(&self) -> usize {
        self.y.len()
    }
    fn posterior(&self, p_hat: &[C64], tau_p: f64) -> Result<(Vec<C64>, f64)> {
        posterior_z_moments(self.y, p_hat, tau_p, self.theta.tau_w)
    }
}

/// Unquantized AWGN observations `y = z + w`, `w ~ CN(0, τ_w)`.
#[derive(Debug, Clone, Copy)]
pub struct AwgnChannel<'a> {
    pub y: &'a [C64],
    pub tau_w: f64,
}

impl OutputChannel for AwgnChannel<'_> {
    fn len(&self) -> usize {
        self.y.len()
    }
    fn posterior(&self, p_hat: &[C64], tau_p: f64) -> Result<(Vec<C64>, f64)> {
        if p_hat.len() != self.y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} observations vs {} pseudo-priors",
                self.y.len(),
                p_hat.len()
            )));
        }
        let g = tau_p / (tau_p + self.tau_w);
        let z = p_hat.iter().zip(self.y).map(|(p, y)| p + (y - p) * g).collect();
        Ok((z, self.tau_w * g))
    }
}
