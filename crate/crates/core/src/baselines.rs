//! Reference recoverers: least squares, quantized iterative hard
//! thresholding, and GAMP with known parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gamp::{run_gamp, GampOptions, GampResult};
use crate::input_channel::{posterior_x_moments, ParamLambda, MAX_COMPONENTS};
use crate::linalg::{diff_norm_sqr, inner, norm_sqr, spectral_norm_sqr, LinearOperator, C64};
use crate::output_channel::{ParamTheta, QuantizedChannel, QuantizedVector};
use crate::params::{update_lambda, OuterLoopOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct LsResult {
    pub x_hat: Vec<C64>,
    pub iterations: usize,
    /// False when CG stopped at the iteration cap or stagnated.
    pub converged: bool,
}

/// Conjugate gradients on `AᴴA x = Aᴴ b` with `b` the dequantized samples.
pub fn least_squares<O: LinearOperator + ?Sized>(
    op: &O,
    y: &QuantizedVector,
    max_cg_iters: usize,
    tol: f64,
) -> Result<LsResult> {
    if y.len() != op.rows() {
        return Err(Error::DimensionMismatch(format!("{} observations for {} operator rows", y.len(), op.rows())));
    }
    if op.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(least_squares_unquantized(op, &y.dequantize(), max_cg_iters, tol))
}

/// CG least squares against real-valued targets; returns the best iterate
/// with `converged = false` on stagnation or at the iteration cap.
pub fn least_squares_unquantized<O: LinearOperator + ?Sized>(op: &O, b: &[C64], max_iters: usize, tol: f64) -> LsResult {
    let n = op.cols();
    let rhs = op.adjoint(b);
    let rhs_norm = norm_sqr(&rhs).sqrt();
    let mut x = vec![C64::default(); n];
    if rhs_norm == 0.0 {
        return LsResult { x_hat: x, iterations: 0, converged: true };
    }
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rs = norm_sqr(&r);
    let mut best = (rs, x.clone());
    for it in 1..=max_iters {
        let ap = op.adjoint(&op.forward(&p));
        let pap = inner(&p, &ap).re;
        if !(pap > 0.0) {
            return LsResult { x_hat: best.1, iterations: it, converged: false };
        }
        let alpha = rs / pap;
        for i in 0..n {
            x[i] += p[i] * alpha;
            r[i] -= ap[i] * alpha;
        }
        let rs_new = norm_sqr(&r);
        if rs_new < best.0 {
            best = (rs_new, x.clone());
        }
        if rs_new.sqrt() <= tol * rhs_norm {
            return LsResult { x_hat: x, iterations: it, converged: true };
        }
        let beta = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + p[i] * beta;
        }
        rs = rs_new;
    }
    LsResult { x_hat: best.1, iterations: max_iters, converged: false }
}

/// IHT gradient step: a fixed value or `0.9/‖A‖₂²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StepRepr", into = "StepRepr")]
pub enum StepSize {
    Auto,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum StepRepr {
    Value(f64),
    Keyword(String),
}

impl TryFrom<StepRepr> for StepSize {
    type Error = String;
    fn try_from(r: StepRepr) -> std::result::Result<Self, String> {
        match r {
            StepRepr::Value(v) if v > 0.0 && v.is_finite() => Ok(StepSize::Fixed(v)),
            StepRepr::Value(v) => Err(format!("step size must be positive, got {v}")),
            StepRepr::Keyword(s) if s == "auto" => Ok(StepSize::Auto),
            StepRepr::Keyword(s) => Err(format!("unknown step size {s:?}")),
        }
    }
}

impl From<StepSize> for StepRepr {
    fn from(s: StepSize) -> Self {
        match s {
            StepSize::Auto => StepRepr::Keyword("auto".into()),
            StepSize::Fixed(v) => StepRepr::Value(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IhtOptions {
    pub sparsity: usize,
    pub step_size: StepSize,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for IhtOptions {
    fn default() -> Self {
        IhtOptions { sparsity: 64, step_size: StepSize::Auto, max_iters: 200, tol: 1e-6 }
    }
}

impl IhtOptions {
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |f: &str, m: String| Err(Error::Config { field: format!("iht.{f}"), message: m });
        if self.sparsity == 0 || self.sparsity > n {
            return bad("sparsity", format!("must be in [1, {n}], got {}", self.sparsity));
        }
        if self.max_iters == 0 {
            return bad("max_iters", "must be at least 1".into());
        }
        if !(self.tol >= 0.0) {
            return bad("tol", "must be nonnegative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IhtResult {
    pub x_hat: Vec<C64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Keeps the `k` largest-magnitude entries (lower index wins ties).
pub fn hard_threshold(x: &mut [C64], k: usize) {
    if k >= x.len() {
        return;
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[b].norm_sqr().total_cmp(&x[a].norm_sqr()).then(a.cmp(&b)));
    for &i in &order[k..] {
        x[i] = C64::default();
    }
}

/// `0.9/‖A‖₂²`, with the spectral norm from power iteration (inflated by 1%
/// to cover its underestimate).
pub fn auto_step<O: LinearOperator + ?Sized>(op: &O) -> Result<f64> {
    let l = spectral_norm_sqr(op, 50, 0x1f7) * 1.01;
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::DegenerateSignal);
    }
    Ok(0.9 / l)
}

pub fn iht<O: LinearOperator + ?Sized>(op: &O, y: &QuantizedVector, opts: &IhtOptions) -> Result<IhtResult> {
    if y.len() != op.rows() {
        return Err(Error::DimensionMismatch(format!("{} observations for {} operator rows", y.len(), op.rows())));
    }
    iht_unquantized(op, &y.dequantize(), opts)
}

/// IHT against real-valued targets.
pub fn iht_unquantized<O: LinearOperator + ?Sized>(op: &O, b: &[C64], opts: &IhtOptions) -> Result<IhtResult> {
    let n = op.cols();
    opts.validate(n)?;
    if b.len() != op.rows() {
        return Err(Error::DimensionMismatch(format!("{} targets for {} operator rows", b.len(), op.rows())));
    }
    let eta = match opts.step_size {
        StepSize::Fixed(v) => v,
        StepSize::Auto => auto_step(op)?,
    };
    let initial = norm_sqr(b);
    let mut x = vec![C64::default(); n];
    let mut resid = b.to_vec();
    for it in 1..=opts.max_iters {
        let g = op.adjoint(&resid);
        let mut next: Vec<C64> = x.iter().zip(&g).map(|(a, d)| a + d * eta).collect();
        hard_threshold(&mut next, opts.sparsity);
        let change = diff_norm_sqr(&next, &x).sqrt();
        let scale = norm_sqr(&next).sqrt();
        x = next;
        let z = op.forward(&x);
        resid = b.iter().zip(&z).map(|(a, c)| a - c).collect();
        let obj = norm_sqr(&resid);
        if !obj.is_finite() || obj > 10.0 * initial.max(f64::MIN_POSITIVE) {
            return Err(Error::DivergenceDetected(format!("objective {obj:.3e} at iteration {it}, initial {initial:.3e}")));
        }
        if change <= opts.tol * scale.max(f64::MIN_POSITIVE) {
            return Ok(IhtResult { x_hat: x, iterations: it, converged: true });
        }
    }
    Ok(IhtResult { x_hat: x, iterations: opts.max_iters, converged: false })
}

/// GAMP with the generating parameters held fixed.
pub fn amp_oracle<O: LinearOperator + ?Sized>(
    op: &O,
    y: &QuantizedVector,
    lambda_true: &ParamLambda,
    theta_true: ParamTheta,
    opts: &GampOptions,
) -> Result<GampResult> {
    let channel = QuantizedChannel { y, theta: theta_true };
    run_gamp(op, lambda_true, &channel, opts)
}

/// Mixture prior fitted by EM to a known coefficient vector, used as the
/// "true" prior when the generator is not itself a Bernoulli–Gaussian mixture.
pub fn fit_prior_to_signal(x: &[C64], components: usize, iters: usize) -> Result<ParamLambda> {
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    let d = components.clamp(1, MAX_COMPONENTS);
    let energy = norm_sqr(x) / x.len() as f64;
    if energy == 0.0 {
        return Err(Error::DegenerateSignal);
    }
    // Observation noise far below every component keeps the fit close to the
    // empirical distribution while leaving the EM updates well defined.
    let tau_r = 1e-8 * energy;
    let spacing: Vec<f64> = (0..d).map(|i| 10f64.powi(-(i as i32))).collect();
    let avg = spacing.iter().sum::<f64>() / d as f64;
    let mut lambda = ParamLambda::new(
        0.5,
        vec![1.0 / d as f64; d],
        vec![C64::default(); d],
        spacing.iter().map(|s| s * energy / (0.5 * avg)).collect(),
    )?;
    let opts = OuterLoopOptions::default();
    for _ in 0..iters {
        let post = posterior_x_moments(x, tau_r, &lambda)?;
        lambda = update_lambda(&post.resp, &lambda, &opts)?;
    }
    Ok(lambda)
}
