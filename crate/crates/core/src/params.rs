//! Joint recovery of the signal and its distribution parameters.
//!
//! Each outer iteration runs GAMP with the current parameters, then moves the
//! prior parameters to the EM maximizer of the summed pseudo-measurement
//! evidence and the noise variance to the maximizer of the summed
//! quantized-measurement log-likelihood (safeguarded Newton in `ln τ_w`).
//! Hyperpriors are flat on the valid domain, so these maximizers are the
//! parameter posterior modes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gamp::{run_gamp_from, GampOptions, GampState};
use crate::input_channel::{posterior_x_moments, ParamLambda, Responsibilities};
use crate::linalg::{diff_norm_sqr, norm_sqr, LinearOperator, C64};
use crate::output_channel::{log_likelihood_derivs, ParamTheta, QuantizedChannel, QuantizedVector};

const EMPTY_COMPONENT_MASS: f64 = 1e-8;
const MIN_WEIGHT: f64 = 1e-10;
const MAX_LOG_STEP: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuterLoopOptions {
    pub max_outer_iters: usize,
    pub param_tol: f64,
    pub tau_w_min: f64,
    pub kappa_bounds: [f64; 2],
    pub newton_max_steps: usize,
    pub newton_backtrack: f64,
    /// Mixture components used when parameters are initialized from data.
    pub components: usize,
    pub learn_lambda: bool,
    pub learn_theta: bool,
    /// With a sign quantizer, fix the otherwise unidentifiable common scale of
    /// signal and noise from the converter's calibrated input power.
    pub calibrated_scale: bool,
    /// EM sweeps per outer iteration when maximizing over the prior parameters.
    pub lambda_em_steps: usize,
    /// Weight on the new maximizer when blending it with the previous
    /// parameters (geometric for variances, linear otherwise); 1 disables.
    pub param_damping: f64,
    /// Relative change of x_hat between outer iterations below which the
    /// loop also stops, since weight drift among near-duplicate mixture
    /// components can persist after the estimate itself has settled.
    pub x_tol: f64,
}

impl Default for OuterLoopOptions {
    fn default() -> Self {
        OuterLoopOptions {
            max_outer_iters: 20,
            param_tol: 1e-4,
            tau_w_min: 1e-12,
            kappa_bounds: [1e-4, 0.9999],
            newton_max_steps: 20,
            newton_backtrack: 0.5,
            components: 4,
            learn_lambda: true,
            learn_theta: true,
            calibrated_scale: true,
            lambda_em_steps: 50,
            param_damping: 0.5,
            x_tol: 1e-3,
        }
    }
}

impl OuterLoopOptions {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.kappa_bounds;
        if self.max_outer_iters < 1 {
            return Err(Error::InvalidParams("max_outer_iters must be at least 1".into()));
        }
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(Error::InvalidParams(format!("kappa_bounds [{lo}, {hi}] not ordered inside (0, 1)")));
        }
        if !(self.tau_w_min > 0.0) {
            return Err(Error::InvalidParams("tau_w_min must be positive".into()));
        }
        if !(self.newton_backtrack > 0.0 && self.newton_backtrack < 1.0) {
            return Err(Error::InvalidParams("newton_backtrack must lie in (0, 1)".into()));
        }
        if !(self.param_damping > 0.0 && self.param_damping <= 1.0) {
            return Err(Error::InvalidParams(format!("param_damping {} outside (0, 1]", self.param_damping)));
        }
        if !(self.x_tol >= 0.0) {
            return Err(Error::InvalidParams(format!("x_tol {} must be nonnegative", self.x_tol)));
        }
        if self.components == 0 || self.components > crate::input_channel::MAX_COMPONENTS {
            return Err(Error::InvalidParams(format!("unsupported component count {}", self.components)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointEstimate {
    pub x_hat: Vec<C64>,
    pub lambda_hat: ParamLambda,
    pub theta_hat: ParamTheta,
    pub outer_iters_used: usize,
    /// Inner GAMP iterations summed over all outer iterations.
    pub inner_iters_total: usize,
    pub converged: bool,
    /// Set when a noise-variance update could not improve the likelihood.
    pub update_failed: bool,
    /// Parameters after each outer iteration.
    pub trace: Vec<OuterStep>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterStep {
    pub kappa: f64,
    pub tau_w: f64,
    pub inner_iters: usize,
    pub param_change: f64,
}

/// EM maximizer of the summed evidence over the prior parameters.
pub fn update_lambda(resp: &Responsibilities, lambda_old: &ParamLambda, opts: &OuterLoopOptions) -> Result<ParamLambda> {
    let n = resp.len();
    let d = resp.components;
    if d != lambda_old.components() {
        return Err(Error::DimensionMismatch(format!(
            "responsibilities carry {d} components, prior has {}",
            lambda_old.components()
        )));
    }
    if n == 0 {
        return Ok(lambda_old.clone());
    }
    let [lo, hi] = opts.kappa_bounds;
    let nonzero: f64 = resp.spike_prob.iter().map(|s| 1.0 - s).sum();
    let kappa = (nonzero / n as f64).clamp(lo, hi);

    let mut mass = vec![0.0; d];
    let mut first = vec![C64::default(); d];
    for row in 0..n {
        for i in 0..d {
            let p = resp.comp_prob[row * d + i];
            mass[i] += p;
            first[i] += resp.comp_mean[row * d + i] * p;
        }
    }
    let mut means = lambda_old.means.clone();
    let mut variances = lambda_old.variances.clone();
    for i in 0..d {
        if mass[i] < EMPTY_COMPONENT_MASS {
            continue;
        }
        let mu = first[i] / mass[i];
        let second: f64 = (0..n)
            .map(|row| {
                let k = row * d + i;
                resp.comp_prob[k] * ((resp.comp_mean[k] - mu).norm_sqr() + resp.comp_var[k])
            })
            .sum();
        means[i] = mu;
        variances[i] = (second / mass[i]).max(1e-12);
    }
    let total: f64 = mass.iter().sum();
    let weights = if total < EMPTY_COMPONENT_MASS {
        lambda_old.weights.clone()
    } else {
        let w: Vec<f64> = mass.iter().map(|m| (m / total).max(MIN_WEIGHT)).collect();
        let s: f64 = w.iter().sum();
        w.iter().map(|x| x / s).collect()
    };
    ParamLambda::new(kappa, weights, means, variances)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaStatus {
    /// Likelihood strictly increased.
    Improved,
    /// Already at a stationary point or against the lower bound.
    Stationary,
    /// No step could improve a non-stationary objective; old value returned.
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaUpdate {
    pub theta: ParamTheta,
    pub status: ThetaStatus,
    pub log_likelihood: f64,
}

/// Maximizes `Σ_m ln P(y_m | p̂_m, τ_p, τ_w)` over `τ_w`.
pub fn update_theta(
    y: &QuantizedVector,
    p_hat: &[C64],
    tau_p: f64,
    theta_old: ParamTheta,
    opts: &OuterLoopOptions,
) -> Result<ThetaUpdate> {
    theta_old.validate()?;
    let u_min = opts.tau_w_min.ln();
    let mut u = theta_old.tau_w.max(opts.tau_w_min).ln();
    let eval = |u: f64| log_likelihood_derivs(y, p_hat, tau_p, u.exp());
    let (mut l, mut g, mut h) = eval(u)?;
    let l0 = l;
    let grad_tol = 1e-10 * (y.len().max(1) as f64);
    let mut status = ThetaStatus::Stationary;

    for _ in 0..opts.newton_max_steps {
        if g.abs() <= grad_tol || (u <= u_min && g <= 0.0) {
            break;
        }
        let mut dir = if h < 0.0 { -g / h } else { g.signum() };
        dir = dir.clamp(-MAX_LOG_STEP, MAX_LOG_STEP).max(u_min - u);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = u + step * dir;
            let trial = eval(cand)?;
            if trial.0 > l {
                accepted = Some((cand, trial));
                break;
            }
            step *= opts.newton_backtrack;
            if (step * dir).abs() < 1e-15 {
                break;
            }
        }
        match accepted {
            Some((cand, trial)) => {
                let moved = (cand - u).abs();
                u = cand;
                (l, g, h) = trial;
                status = ThetaStatus::Improved;
                if moved < 1e-12 {
                    break;
                }
            }
            None => {
                if status != ThetaStatus::Improved && g.abs() > 1e-6 * (y.len().max(1) as f64) {
                    status = ThetaStatus::Failed;
                }
                break;
            }
        }
    }
    if status == ThetaStatus::Failed || !(l > l0) {
        return Ok(ThetaUpdate {
            theta: theta_old,
            status: if status == ThetaStatus::Failed { status } else { ThetaStatus::Stationary },
            log_likelihood: l0,
        });
    }
    Ok(ThetaUpdate { theta: ParamTheta { tau_w: u.exp() }, status, log_likelihood: l })
}

/// Data-driven starting point: `κ = 0.1`, zero-mean components with variances
/// spaced by factors of ten, scaled so the prior energy matches the
/// dequantized measurement energy; `τ_w = 0.1·ρ̂`.
pub fn initialize_params<O: LinearOperator + ?Sized>(
    y: &QuantizedVector,
    op: &O,
    components: usize,
) -> Result<(ParamLambda, ParamTheta)> {
    let d = components.clamp(1, crate::input_channel::MAX_COMPONENTS);
    let dq = y.dequantize();
    let mut rho = if dq.is_empty() { 0.0 } else { dq.iter().map(|z| z.norm_sqr()).sum::<f64>() / dq.len() as f64 };
    if !(rho > 0.0 && rho.is_finite()) {
        rho = 1.0;
    }
    let fro = op.squared_norm_fro();
    let energy = if fro > 0.0 { rho * op.rows() as f64 / fro } else { rho };
    let kappa = 0.1;
    let spacing: Vec<f64> = (0..d).map(|i| 10f64.powi(-(i as i32))).collect();
    let avg = spacing.iter().sum::<f64>() / d as f64;
    let scale = energy / (kappa * avg);
    let lambda = ParamLambda::new(
        kappa,
        vec![1.0 / d as f64; d],
        vec![C64::default(); d],
        spacing.iter().map(|s| (s * scale).max(1e-12)).collect(),
    )?;
    Ok((lambda, ParamTheta { tau_w: 0.1 * rho }))
}

/// Largest parameter change, measured on the scale at which the data can
/// resolve it: component variances and means relative to the evidence
/// variance `ν_i + τ_r`, weights and `κ` in absolute terms, and `τ_w`
/// relative to the output-side spread `τ_w + τ_p`.
fn param_change(a: &ParamLambda, b: &ParamLambda, ta: ParamTheta, tb: ParamTheta, tau_r: f64, tau_p: f64) -> f64 {
    let mut c = (a.kappa - b.kappa).abs().max((ta.tau_w - tb.tau_w).abs() / (tb.tau_w + tau_p));
    for i in 0..a.components().min(b.components()) {
        let spread = b.variances[i] + tau_r;
        c = c.max((a.weights[i] - b.weights[i]).abs());
        c = c.max((a.variances[i] - b.variances[i]).abs() / spread);
        c = c.max((a.means[i] - b.means[i]).norm() / spread.sqrt());
    }
    c
}

/// Maximizes the summed prior evidence at fixed `(r̂, τ_r)` by repeated EM
/// steps, stopping once the parameters settle to a tenth of `param_tol`.
pub fn maximize_lambda(r_hat: &[C64], tau_r: f64, lambda: &ParamLambda, opts: &OuterLoopOptions) -> Result<ParamLambda> {
    let mut cur = lambda.clone();
    for _ in 0..opts.lambda_em_steps.max(1) {
        let post = posterior_x_moments(r_hat, tau_r, &cur)?;
        let next = update_lambda(&post.resp, &cur, opts)?;
        let theta = ParamTheta { tau_w: 1.0 };
        let change = param_change(&next, &cur, theta, theta, tau_r, 0.0);
        cur = next;
        if change < 0.1 * opts.param_tol {
            break;
        }
    }
    Ok(cur)
}

fn blend_geometric(new: f64, old: f64, beta: f64) -> f64 {
    (beta * new.ln() + (1.0 - beta) * old.ln()).exp()
}

fn blend_lambda(new: &ParamLambda, old: &ParamLambda, beta: f64) -> Result<ParamLambda> {
    let lin = |a: f64, b: f64| beta * a + (1.0 - beta) * b;
    let weights: Vec<f64> = new.weights.iter().zip(&old.weights).map(|(a, b)| lin(*a, *b)).collect();
    let total: f64 = weights.iter().sum();
    ParamLambda::new(
        lin(new.kappa, old.kappa),
        weights.iter().map(|w| w / total).collect(),
        new.means.iter().zip(&old.means).map(|(a, b)| a * beta + b * (1.0 - beta)).collect(),
        new.variances.iter().zip(&old.variances).map(|(a, b)| blend_geometric(*a, *b, beta)).collect(),
    )
}

/// Factor `c` such that the model with signal `c·x` and noise `c²·τ_w`
/// reproduces the calibrated input power `E|r|² = (‖A‖_F²/M)·E|x|² + τ_w`.
pub fn calibration_scale<O: LinearOperator + ?Sized>(op: &O, lambda: &ParamLambda, theta: ParamTheta, power: f64) -> f64 {
    let (mean, var) = lambda.moments();
    let model = op.squared_norm_fro() / op.rows() as f64 * (var + mean.norm_sqr()) + theta.tau_w;
    (power / model).sqrt()
}

/// Moves `(λ, θ)` along the direction that leaves sign observations unchanged.
pub fn rescale_params(lambda: &mut ParamLambda, theta: &mut ParamTheta, c: f64) {
    lambda.means.iter_mut().for_each(|m| *m *= c);
    lambda.variances.iter_mut().for_each(|v| *v *= c * c);
    theta.tau_w *= c * c;
}

/// Alternates GAMP with parameter updates until the parameters settle.
pub fn estimate_joint<O: LinearOperator + ?Sized>(
    op: &O,
    y: &QuantizedVector,
    opts_inner: &GampOptions,
    opts_outer: &OuterLoopOptions,
    init: Option<(ParamLambda, ParamTheta)>,
) -> Result<JointEstimate> {
    opts_outer.validate()?;
    if y.len() != op.rows() {
        return Err(Error::DimensionMismatch(format!("{} observations for {} operator rows", y.len(), op.rows())));
    }
    let scale_target = match y.spec.input_power() {
        Some(p) if opts_outer.calibrated_scale && opts_outer.learn_theta && y.spec.is_scale_free() => Some(p),
        _ => None,
    };
    let (mut lambda, mut theta) = match init {
        Some(p) => p,
        None => {
            let (mut l, mut t) = initialize_params(y, op, opts_outer.components)?;
            if let Some(power) = scale_target {
                let c = calibration_scale(op, &l, t, power);
                if c.is_finite() && c > 0.0 {
                    rescale_params(&mut l, &mut t, c);
                }
            }
            (l, t)
        }
    };
    lambda.validate()?;
    theta.validate()?;

    let mut state: Option<GampState> = None;
    let mut x_hat = Vec::new();
    let mut inner_total = 0;
    let mut converged = false;
    let mut update_failed = false;
    let mut used = 0;
    let mut trace = Vec::with_capacity(opts_outer.max_outer_iters);

    for _ in 0..opts_outer.max_outer_iters {
        used += 1;
        let channel = QuantizedChannel { y, theta };
        let res = run_gamp_from(op, &lambda, &channel, opts_inner, state.take())?;
        let res_iters = res.iterations_used;
        inner_total += res_iters;
        let prev_x = std::mem::replace(&mut x_hat, res.x_hat);
        let st = res.state;

        let new_lambda = if opts_outer.learn_lambda {
            maximize_lambda(&st.r_hat[..op.cols()], st.tau_r, &lambda, opts_outer)?
        } else {
            lambda.clone()
        };
        let new_theta = if opts_outer.learn_theta {
            let m = op.rows();
            let upd = update_theta(y, &st.p_hat[..m], st.tau_p, theta, opts_outer)?;
            if upd.status == ThetaStatus::Failed {
                update_failed = true;
            }
            upd.theta
        } else {
            theta
        };
        let mut st = st;
        let beta = opts_outer.param_damping;
        let (mut new_lambda, mut new_theta) = if beta < 1.0 {
            (blend_lambda(&new_lambda, &lambda, beta)?, ParamTheta { tau_w: blend_geometric(new_theta.tau_w, theta.tau_w, beta) })
        } else {
            (new_lambda, new_theta)
        };
        if let Some(power) = scale_target {
            let c = calibration_scale(op, &new_lambda, new_theta, power);
            if c.is_finite() && c > 0.0 && c != 1.0 {
                rescale_params(&mut new_lambda, &mut new_theta, c);
                st.rescale(c);
                x_hat.iter_mut().for_each(|v| *v *= c);
            }
        }
        let change = param_change(&new_lambda, &lambda, new_theta, theta, st.tau_r, st.tau_p);
        let x_change = if prev_x.is_empty() {
            f64::INFINITY
        } else {
            (diff_norm_sqr(&x_hat, &prev_x) / norm_sqr(&x_hat).max(f64::MIN_POSITIVE)).sqrt()
        };
        lambda = new_lambda;
        theta = new_theta;
        state = Some(st);
        trace.push(OuterStep { kappa: lambda.kappa, tau_w: theta.tau_w, inner_iters: res_iters, param_change: change });
        if update_failed {
            break;
        }
        if change < opts_outer.param_tol || x_change < opts_outer.x_tol {
            converged = true;
            break;
        }
    }

    Ok(JointEstimate {
        x_hat,
        lambda_hat: lambda,
        theta_hat: theta,
        outer_iters_used: used,
        inner_iters_total: inner_total,
        converged,
        update_failed,
        trace,
    })
}
