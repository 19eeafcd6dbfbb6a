//! Complex sum-product GAMP with scalar variances.
//!
//! The variance recursion uses the mean squared operator entry
//! `‖A‖_F²/(MN)`: `τ_p = (‖A‖_F²/M)·τ_x` and `τ_r = 1/((‖A‖_F²/N)·τ_s)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::input_channel::InputChannel;
use crate::linalg::{diff_norm_sqr, norm_sqr, LinearOperator, MeanRemoved, C64};
use crate::output_channel::OutputChannel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GampOptions {
    pub max_inner_iters: usize,
    pub damping_factor: f64,
    pub mean_removal: bool,
    pub tol_rel_change: f64,
    pub variance_floor: f64,
}

impl Default for GampOptions {
    fn default() -> Self {
        GampOptions {
            max_inner_iters: 100,
            damping_factor: 0.7,
            mean_removal: false,
            tol_rel_change: 1e-6,
            variance_floor: 1e-12,
        }
    }
}

impl GampOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping_factor > 0.0 && self.damping_factor <= 1.0) {
            return Err(Error::InvalidParams(format!("damping_factor {} outside (0, 1]", self.damping_factor)));
        }
        if !(self.tol_rel_change >= 0.0) {
            return Err(Error::InvalidParams("tol_rel_change must be nonnegative".into()));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::InvalidParams("variance_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Iteration state; can be fed back in to warm-start a later run.
#[derive(Debug, Clone, PartialEq)]
pub struct GampState {
    pub x_hat: Vec<C64>,
    /// Damped running average of `x_hat`, the base point for `r_hat`.
    pub x_bar: Vec<C64>,
    pub tau_x: f64,
    pub p_hat: Vec<C64>,
    pub tau_p: f64,
    pub z_hat: Vec<C64>,
    pub tau_z: f64,
    pub r_hat: Vec<C64>,
    pub tau_r: f64,
    pub s_hat: Vec<C64>,
    pub tau_s: f64,
    pub iteration: usize,
}

impl GampState {
    /// State for the problem with `x` replaced by `c·x` (and `z` by `c·z`).
    pub fn rescale(&mut self, c: f64) {
        let c2 = c * c;
        for v in [&mut self.x_hat, &mut self.x_bar, &mut self.p_hat, &mut self.z_hat, &mut self.r_hat] {
            v.iter_mut().for_each(|a| *a *= c);
        }
        self.s_hat.iter_mut().for_each(|a| *a /= c);
        self.tau_x *= c2;
        self.tau_p *= c2;
        self.tau_z *= c2;
        self.tau_r *= c2;
        self.tau_s /= c2;
    }

    fn cold<I: InputChannel + ?Sized>(input: &I, n: usize, m: usize, floor: f64) -> Self {
        let (mean, var) = input.prior_moments();
        GampState {
            x_hat: vec![mean; n],
            x_bar: vec![mean; n],
            tau_x: var.max(floor),
            p_hat: vec![C64::default(); m],
            tau_p: 0.0,
            z_hat: vec![C64::default(); m],
            tau_z: 0.0,
            r_hat: vec![C64::default(); n],
            tau_r: 0.0,
            s_hat: vec![C64::default(); m],
            tau_s: 0.0,
            iteration: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GampResult {
    pub x_hat: Vec<C64>,
    pub tau_x: f64,
    /// Accepted plus rejected iterations.
    pub iterations_used: usize,
    /// Iterations undone by the adaptive step.
    pub rejected_steps: usize,
    pub converged: bool,
    /// Relative change `‖x̂_t − x̂_{t−1}‖/‖x̂_t‖` per accepted iteration.
    pub residual_history: Vec<f64>,
    pub state: GampState,
}

/// Convex combination `factor·new + (1 − factor)·old`.
pub trait Damp {
    fn damp(&self, old: &Self, factor: f64) -> Self;
}

impl Damp for f64 {
    fn damp(&self, old: &f64, factor: f64) -> f64 {
        factor * self + (1.0 - factor) * old
    }
}

impl Damp for C64 {
    fn damp(&self, old: &C64, factor: f64) -> C64 {
        self * factor + old * (1.0 - factor)
    }
}

impl<T: Damp> Damp for Vec<T> {
    fn damp(&self, old: &Vec<T>, factor: f64) -> Vec<T> {
        self.iter().zip(old).map(|(a, b)| a.damp(b, factor)).collect()
    }
}

pub fn damp<T: Damp>(new_value: &T, old_value: &T, factor: f64) -> T {
    new_value.damp(old_value, factor)
}

/// Runs GAMP from the prior mean.
pub fn run_gamp<O, I, Y>(op: &O, input: &I, output: &Y, opts: &GampOptions) -> Result<GampResult>
where
    O: LinearOperator + ?Sized,
    I: InputChannel + ?Sized,
    Y: OutputChannel + ?Sized,
{
    run_gamp_from(op, input, output, opts, None)
}

/// Runs GAMP, optionally continuing from an earlier state of matching size.
pub fn run_gamp_from<O, I, Y>(
    op: &O,
    input: &I,
    output: &Y,
    opts: &GampOptions,
    init: Option<GampState>,
) -> Result<GampResult>
where
    O: LinearOperator + ?Sized,
    I: InputChannel + ?Sized,
    Y: OutputChannel + ?Sized,
{
    opts.validate()?;
    if output.len() != op.rows() {
        return Err(Error::DimensionMismatch(format!(
            "operator has {} rows but {} observations",
            op.rows(),
            output.len()
        )));
    }
    if opts.mean_removal {
        let wrapped = MeanRemoved::new(op);
        let n = op.cols();
        let aug_in = AugmentedInput { inner: input, n };
        let aug_out = AugmentedOutput { inner: output, tau: opts.variance_floor };
        let init = init.filter(|s| s.x_hat.len() == n + 1 && s.s_hat.len() == op.rows() + 1);
        let mut res = iterate(&wrapped, &aug_in, &aug_out, opts, init)?;
        res.x_hat.truncate(n);
        return Ok(res);
    }
    let init = init.filter(|s| s.x_hat.len() == op.cols() && s.s_hat.len() == op.rows());
    iterate(op, input, output, opts, init)
}

/// Also rejects magnitudes whose square overflows, which the denoisers cannot score.
fn all_finite(v: &[C64]) -> bool {
    v.iter().all(|x| x.norm_sqr().is_finite())
}

/// Smallest damping step tried before an iteration failure is reported.
const MIN_STEP: f64 = 1e-3;
/// Number of accepted residuals a new one is compared against.
const STEP_WINDOW: usize = 5;

/// Fields of the state that carry over between iterations; restored when a
/// step is rejected.
struct Checkpoint {
    x_hat: Vec<C64>,
    x_bar: Vec<C64>,
    tau_x: f64,
    s_hat: Vec<C64>,
    tau_s: f64,
}

impl Checkpoint {
    fn save(st: &GampState) -> Self {
        Checkpoint {
            x_hat: st.x_hat.clone(),
            x_bar: st.x_bar.clone(),
            tau_x: st.tau_x,
            s_hat: st.s_hat.clone(),
            tau_s: st.tau_s,
        }
    }

    fn restore(&self, st: &mut GampState) {
        st.x_hat.clone_from(&self.x_hat);
        st.x_bar.clone_from(&self.x_bar);
        st.tau_x = self.tau_x;
        st.s_hat.clone_from(&self.s_hat);
        st.tau_s = self.tau_s;
    }
}

/// Scratch buffers and operator constants shared by every step.
struct Workspace {
    ax: Vec<C64>,
    ahs: Vec<C64>,
    row_gain: f64,
    col_gain: f64,
    floor: f64,
}

/// One GAMP iteration with damping step `beta`; `first` skips damping.
fn step<O, I, Y>(op: &O, input: &I, output: &Y, st: &mut GampState, ws: &mut Workspace, beta: f64, first: bool) -> Result<()>
where
    O: LinearOperator + ?Sized,
    I: InputChannel + ?Sized,
    Y: OutputChannel + ?Sized,
{
    let floor = ws.floor;
    st.tau_p = (ws.row_gain * st.tau_x).max(floor);
    op.forward_into(&st.x_hat, &mut ws.ax);
    for ((p, a), s) in st.p_hat.iter_mut().zip(&ws.ax).zip(&st.s_hat) {
        *p = a - s * st.tau_p;
    }

    let (z_hat, tau_z) = output.posterior(&st.p_hat, st.tau_p)?;
    if !all_finite(&z_hat) || !tau_z.is_finite() {
        return Err(Error::NumericalDivergence { iteration: st.iteration + 1, what: "non-finite output estimate".into() });
    }
    st.z_hat = z_hat;
    st.tau_z = tau_z.max(floor);
    let inv_tau_p = 1.0 / st.tau_p;
    let tau_s_new = ((1.0 - st.tau_z * inv_tau_p) * inv_tau_p).max(floor);
    if first {
        for ((s, z), p) in st.s_hat.iter_mut().zip(&st.z_hat).zip(&st.p_hat) {
            *s = (z - p) * inv_tau_p;
        }
        st.tau_s = tau_s_new;
    } else {
        for ((s, z), p) in st.s_hat.iter_mut().zip(&st.z_hat).zip(&st.p_hat) {
            *s = ((z - p) * inv_tau_p).damp(s, beta);
        }
        st.tau_s = tau_s_new.damp(&st.tau_s, beta);
    }

    st.tau_r = 1.0 / (ws.col_gain * st.tau_s);
    op.adjoint_into(&st.s_hat, &mut ws.ahs);
    if first {
        st.x_bar.clone_from(&st.x_hat);
    } else {
        for (b, x) in st.x_bar.iter_mut().zip(&st.x_hat) {
            *b = x.damp(b, beta);
        }
    }
    for ((r, x), g) in st.r_hat.iter_mut().zip(&st.x_bar).zip(&ws.ahs) {
        *r = x + g * st.tau_r;
    }

    if !all_finite(&st.r_hat) || !st.tau_r.is_finite() {
        return Err(Error::NumericalDivergence { iteration: st.iteration + 1, what: "non-finite pseudo-measurement".into() });
    }
    let (x_new, tau_x_new) = input.posterior(&st.r_hat, st.tau_r)?;
    st.x_hat = x_new;
    st.tau_x = tau_x_new.max(floor);

    if !all_finite(&st.x_hat) || !st.tau_x.is_finite() {
        return Err(Error::NumericalDivergence { iteration: st.iteration + 1, what: "non-finite signal estimate".into() });
    }
    if !(st.tau_r.is_finite() && st.tau_p.is_finite()) {
        return Err(Error::NumericalDivergence { iteration: st.iteration + 1, what: "non-finite variance".into() });
    }
    Ok(())
}

/// Runs damped GAMP with an adaptive step: an iteration that fails or whose
/// residual exceeds each of the last few accepted ones is undone and retried
/// with half the step, and each accepted iteration grows the step by 10% up
/// to `damping_factor`.
fn iterate<O, I, Y>(op: &O, input: &I, output: &Y, opts: &GampOptions, init: Option<GampState>) -> Result<GampResult>
where
    O: LinearOperator + ?Sized,
    I: InputChannel + ?Sized,
    Y: OutputChannel + ?Sized,
{
    let (m, n) = (op.rows(), op.cols());
    let fro = op.squared_norm_fro();
    if !(fro > 0.0 && fro.is_finite()) {
        return Err(Error::DimensionMismatch("operator has zero or non-finite Frobenius norm".into()));
    }
    let floor = opts.variance_floor;
    let mut ws = Workspace {
        ax: vec![C64::default(); m],
        ahs: vec![C64::default(); n],
        row_gain: fro / m as f64,
        col_gain: fro / n as f64,
        floor,
    };
    let max_step = opts.damping_factor;
    let mut beta = max_step;

    let warm = init.is_some();
    let mut st = init.unwrap_or_else(|| GampState::cold(input, n, m, floor));
    let mut history: Vec<f64> = Vec::with_capacity(opts.max_inner_iters);
    let mut converged = false;
    let mut rejected = 0;

    for t in 0..opts.max_inner_iters {
        let first = t == 0 && !warm;
        let saved = Checkpoint::save(&st);
        let outcome = step(op, input, output, &mut st, &mut ws, beta, first);
        let residual = outcome.as_ref().ok().map(|_| {
            let change = diff_norm_sqr(&st.x_hat, &saved.x_hat).sqrt();
            let scale = norm_sqr(&st.x_hat).sqrt();
            if change == 0.0 {
                0.0
            } else {
                change / scale.max(f64::MIN_POSITIVE)
            }
        });
        // A single bump is tolerated; sustained growth is not.
        let window = &history[history.len().saturating_sub(STEP_WINDOW)..];
        let worse = match residual {
            None => true,
            Some(r) => !window.is_empty() && window.iter().all(|&prev| r > prev),
        };
        if worse && !first {
            saved.restore(&mut st);
            rejected += 1;
            beta *= 0.5;
            if beta < MIN_STEP {
                outcome?;
                break;
            }
            continue;
        }
        outcome?;
        let residual = residual.unwrap_or(0.0);
        st.iteration += 1;
        history.push(residual);
        beta = (beta * 1.1).min(max_step);
        if residual < opts.tol_rel_change {
            converged = true;
            break;
        }
    }

    Ok(GampResult {
        x_hat: st.x_hat.clone(),
        tau_x: st.tau_x,
        iterations_used: history.len() + rejected,
        rejected_steps: rejected,
        converged,
        residual_history: history,
        state: st,
    })
}

/// Input channel for the mean-removal augmented problem: the extra coordinate
/// `x_a = k·Σx` carries a flat prior, so marginalizing it leaves the original
/// posterior over `x` unchanged.
struct AugmentedInput<'a, I: ?Sized> {
    inner: &'a I,
    n: usize,
}

impl<I: InputChannel + ?Sized> InputChannel for AugmentedInput<'_, I> {
    fn posterior(&self, r_hat: &[C64], tau_r: f64) -> Result<(Vec<C64>, f64)> {
        let (mut x, tau_x) = self.inner.posterior(&r_hat[..self.n], tau_r)?;
        x.push(r_hat[self.n]);
        Ok((x, (tau_x * self.n as f64 + tau_r) / (self.n + 1) as f64))
    }
    fn prior_moments(&self) -> (C64, f64) {
        self.inner.prior_moments()
    }
}

/// Output channel for the augmented problem: the extra measurement is pinned to zero.
struct AugmentedOutput<'a, Y: ?Sized> {
    inner: &'a Y,
    tau: f64,
}

impl<Y: OutputChannel + ?Sized> OutputChannel for AugmentedOutput<'_, Y> {
    fn len(&self) -> usize {
        self.inner.len() + 1
    }
    fn posterior(&self, p_hat: &[C64], tau_p: f64) -> Result<(Vec<C64>, f64)> {
        let m = self.inner.len();
        let (mut z, tau_z) = self.inner.posterior(&p_hat[..m], tau_p)?;
        let g = tau_p / (tau_p + self.tau);
        z.push(p_hat[m] * (1.0 - g));
        Ok((z, (tau_z * m as f64 + self.tau * g) / (m + 1) as f64))
    }
}
