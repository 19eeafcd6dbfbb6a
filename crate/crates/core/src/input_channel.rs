//! Bernoulli complex-Gaussian-mixture signal prior.
//!
//! Each coefficient is exactly zero with probability `1 − κ` and otherwise
//! drawn from a `D`-component circular complex Gaussian mixture. Given a
//! Gaussian pseudo-measurement `r̂ = x + CN(0, τ_r)` the posterior is again a
//! spike plus a `D`-component mixture, so all moments are closed form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{complex_gaussian, C64};
use crate::parallel;
use crate::special::{log_cn_density, log_sum_exp};

/// Upper bound on mixture components; keeps per-element scratch on the stack.
pub const MAX_COMPONENTS: usize = 8;

const RESP_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamLambda {
    pub kappa: f64,
    pub weights: Vec<f64>,
    pub means: Vec<C64>,
    pub variances: Vec<f64>,
}

impl ParamLambda {
    pub fn new(kappa: f64, weights: Vec<f64>, means: Vec<C64>, variances: Vec<f64>) -> Result<Self> {
        let p = ParamLambda { kappa, weights, means, variances };
        p.validate()?;
        Ok(p)
    }

    /// `κ = 1`, one zero-mean component: a plain `CN(0, var)` prior.
    pub fn gaussian(var: f64) -> Result<Self> {
        Self::new(1.0, vec![1.0], vec![C64::default()], vec![var])
    }

    /// Bernoulli–Gaussian: `κ` non-zero probability, one `CN(0, var)` component.
    pub fn bernoulli_gaussian(kappa: f64, var: f64) -> Result<Self> {
        Self::new(kappa, vec![1.0], vec![C64::default()], vec![var])
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.weights.len();
        if d == 0 || d > MAX_COMPONENTS {
            return Err(Error::InvalidParams(format!("need 1..={MAX_COMPONENTS} components, got {d}")));
        }
        if self.means.len() != d || self.variances.len() != d {
            return Err(Error::InvalidParams("weights, means and variances differ in length".into()));
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(Error::InvalidParams(format!("kappa {} outside [0, 1]", self.kappa)));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidParams("mixture weights must be nonnegative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParams(format!("mixture weights sum to {total}")));
        }
        if self.variances.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParams("component variances must be positive".into()));
        }
        if self.means.iter().any(|m| !(m.re.is_finite() && m.im.is_finite())) {
            return Err(Error::InvalidParams("component means must be finite".into()));
        }
        Ok(())
    }

    /// Prior mean `κ Σ ξ_i μ_i` and variance `E|x|² − |E x|²`.
    pub fn moments(&self) -> (C64, f64) {
        let mean: C64 = self.weights.iter().zip(&self.means).map(|(w, m)| m * *w).sum::<C64>() * self.kappa;
        let second: f64 = self.kappa
            * self
                .weights
                .iter()
                .zip(&self.means)
                .zip(&self.variances)
                .map(|((w, m), v)| w * (v + m.norm_sqr()))
                .sum::<f64>();
        (mean, (second - mean.norm_sqr()).max(0.0))
    }

    /// Log-weights (spike first) of the joint evidence `p(r̂, component)`.
    fn log_weights(&self, r: C64, tau_r: f64, out: &mut [f64]) {
        out[0] = if self.kappa < 1.0 {
            (1.0 - self.kappa).ln() + log_cn_density(r.norm_sqr(), tau_r)
        } else {
            f64::NEG_INFINITY
        };
        for i in 0..self.components() {
            out[i + 1] = if self.kappa > 0.0 && self.weights[i] > 0.0 {
                self.kappa.ln()
                    + self.weights[i].ln()
                    + log_cn_density((r - self.means[i]).norm_sqr(), self.variances[i] + tau_r)
            } else {
                f64::NEG_INFINITY
            };
        }
    }
}

/// Posterior mixture memberships and per-component posterior moments.
/// Component arrays are row-major `N × D`.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub components: usize,
    pub spike_prob: Vec<f64>,
    pub comp_prob: Vec<f64>,
    pub comp_mean: Vec<C64>,
    pub comp_var: Vec<f64>,
}

impl Responsibilities {
    pub fn len(&self) -> usize {
        self.spike_prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spike_prob.is_empty()
    }

    /// Posterior mean and variance of element `n` rebuilt from the mixture.
    pub fn element_moments(&self, n: usize) -> (C64, f64) {
        let d = self.components;
        let row = n * d..(n + 1) * d;
        let probs = &self.comp_prob[row.clone()];
        let means = &self.comp_mean[row.clone()];
        let vars = &self.comp_var[row];
        let mean: C64 = probs.iter().zip(means).map(|(p, m)| m * *p).sum();
        let var = self.spike_prob[n] * mean.norm_sqr()
            + probs
                .iter()
                .zip(means)
                .zip(vars)
                .map(|((p, m), v)| p * (v + (m - mean).norm_sqr()))
                .sum::<f64>();
        (mean, var)
    }
}

/// Posterior moments of `x` under the prior and pseudo-measurement `CN(r̂_n, τ_r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct XPosterior {
    pub x_hat: Vec<C64>,
    /// Mean of the per-element posterior variances.
    pub tau_x: f64,
    pub resp: Responsibilities,
}

#[derive(Clone, Copy, Default)]
struct ElementPosterior {
    mean: C64,
    var: f64,
    spike: f64,
    prob: [f64; MAX_COMPONENTS],
    cmean: [C64; MAX_COMPONENTS],
    cvar: [f64; MAX_COMPONENTS],
}

fn element_posterior(lambda: &ParamLambda, r: C64, tau_r: f64) -> ElementPosterior {
    let d = lambda.components();
    let mut lw = [0.0; MAX_COMPONENTS + 1];
    lambda.log_weights(r, tau_r, &mut lw[..=d]);
    let lse = log_sum_exp(&lw[..=d]);
    let mut out = ElementPosterior::default();
    if !lse.is_finite() {
        out.mean = C64::new(f64::NAN, f64::NAN);
        out.var = f64::NAN;
        return out;
    }
    let normalize = |l: f64| if l == f64::NEG_INFINITY { 0.0 } else { (l - lse).exp().max(RESP_FLOOR) };
    out.spike = normalize(lw[0]);
    for i in 0..d {
        let (nu, mu) = (lambda.variances[i], lambda.means[i]);
        out.prob[i] = normalize(lw[i + 1]);
        out.cmean[i] = (mu * tau_r + r * nu) / (nu + tau_r);
        out.cvar[i] = nu * tau_r / (nu + tau_r);
        out.mean += out.cmean[i] * out.prob[i];
    }
    let mut var = out.spike * out.mean.norm_sqr();
    for i in 0..d {
        var += out.prob[i] * (out.cvar[i] + (out.cmean[i] - out.mean).norm_sqr());
    }
    out.var = var;
    out
}

fn check_inputs(r_hat: &[C64], tau_r: f64, lambda: &ParamLambda) -> Result<()> {
    lambda.validate()?;
    if !(tau_r > 0.0 && tau_r.is_finite()) {
        return Err(Error::InvalidParams(format!("tau_r must be positive, got {tau_r}")));
    }
    if let Some(n) = r_hat.iter().position(|r| !(r.re.is_finite() && r.im.is_finite())) {
        return Err(Error::InvalidParams(format!("non-finite pseudo-measurement at {n}")));
    }
    Ok(())
}

pub fn posterior_x_moments(r_hat: &[C64], tau_r: f64, lambda: &ParamLambda) -> Result<XPosterior> {
    check_inputs(r_hat, tau_r, lambda)?;
    let d = lambda.components();
    let n = r_hat.len();
    let per = parallel::map_indexed(n, |i| element_posterior(lambda, r_hat[i], tau_r));
    let mut x_hat = Vec::with_capacity(n);
    let mut resp = Responsibilities {
        components: d,
        spike_prob: Vec::with_capacity(n),
        comp_prob: Vec::with_capacity(n * d),
        comp_mean: Vec::with_capacity(n * d),
        comp_var: Vec::with_capacity(n * d),
    };
    let mut var_sum = 0.0;
    for e in &per {
        x_hat.push(e.mean);
        var_sum += e.var;
        resp.spike_prob.push(e.spike);
        resp.comp_prob.extend_from_slice(&e.prob[..d]);
        resp.comp_mean.extend_from_slice(&e.cmean[..d]);
        resp.comp_var.extend_from_slice(&e.cvar[..d]);
    }
    let tau_x = if n == 0 { 0.0 } else { var_sum / n as f64 };
    Ok(XPosterior { x_hat, tau_x, resp })
}

/// `ln ∫ CN(r̂_n; x, τ_r) p(x | λ) dx` per element.
pub fn prior_log_evidence(r_hat: &[C64], tau_r: f64, lambda: &ParamLambda) -> Result<Vec<f64>> {
    check_inputs(r_hat, tau_r, lambda)?;
    let d = lambda.components();
    Ok(parallel::map_indexed(r_hat.len(), |i| {
        let mut lw = [0.0; MAX_COMPONENTS + 1];
        lambda.log_weights(r_hat[i], tau_r, &mut lw[..=d]);
        log_sum_exp(&lw[..=d])
    }))
}

/// I.i.d. draws from the prior.
pub fn sample_prior(lambda: &ParamLambda, n: usize, seed: u64) -> Result<Vec<C64>> {
    lambda.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cumulative = Vec::with_capacity(lambda.components());
    let mut acc = 0.0;
    for w in &lambda.weights {
        acc += w;
        cumulative.push(acc);
    }
    Ok((0..n)
        .map(|_| {
            if rng.random::<f64>() >= lambda.kappa {
                return C64::default();
            }
            let u: f64 = rng.random::<f64>() * acc;
            let i = cumulative.partition_point(|&c| c <= u).min(lambda.components() - 1);
            lambda.means[i] + complex_gaussian(&mut rng, 1, lambda.variances[i])[0]
        })
        .collect())
}

/// Scalar channel seen by GAMP on the signal side.
pub trait InputChannel: Sync {
    /// Posterior mean of `x` and mean posterior variance given `CN(r̂, τ_r)`.
    fn posterior(&self, r_hat: &[C64], tau_r: f64) -> Result<(Vec<C64>, f64)>;
    /// Prior mean and variance, used to initialize the iteration.
    fn prior_moments(&self) -> (C64, f64);
}

impl InputChannel for ParamLambda {
    fn posterior(&self, r_hat: &[C64], tau_r: f64) -> Result<(Vec<C64>, f64)> {
        let p = posterior_x_moments(r_hat, tau_r, self)?;
        Ok((p.x_hat, p.tau_x))
    }
    fn prior_moments(&self) -> (C64, f64) {
        self.moments()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixed() -> ParamLambda {
        ParamLambda::new(
            0.5,
            vec![0.5, 0.5],
            vec![C64::new(0.0, 0.0), C64::new(1.0, 1.0)],
            vec![1.0, 0.25],
        )
        .unwrap()
    }

    #[test]
    fn zero_kappa_is_pure_spike() {
        let l = ParamLambda::bernoulli_gaussian(0.0, 1.0).unwrap();
        let r = vec![C64::new(1.0, -2.0), C64::new(0.3, 0.1)];
        let p = posterior_x_moments(&r, 0.5, &l).unwrap();
        assert!(p.x_hat.iter().all(|x| *x == C64::default()));
        assert_eq!(p.tau_x, 0.0);
        assert!(p.resp.spike_prob.iter().all(|&s| s == 1.0));
        let ev = prior_log_evidence(&r, 0.5, &l).unwrap();
        for (e, ri) in ev.iter().zip(&r) {
            assert!((e - log_cn_density(ri.norm_sqr(), 0.5)).abs() < 1e-15);
        }
        assert!(sample_prior(&l, 100, 1).unwrap().iter().all(|x| *x == C64::default()));
    }

    #[test]
    fn conjugate_gaussian_shrinkage() {
        let l = ParamLambda::gaussian(1.0).unwrap();
        let p = posterior_x_moments(&[C64::new(1.0, 0.0)], 1.0, &l).unwrap();
        assert!((p.x_hat[0] - C64::new(0.5, 0.0)).norm() < 1e-15);
        assert!((p.tau_x - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_component_evidence_is_convolution() {
        let l = ParamLambda::new(1.0, vec![1.0], vec![C64::new(0.2, -0.4)], vec![0.8]).unwrap();
        let r = C64::new(-0.3, 0.9);
        let ev = prior_log_evidence(&[r], 0.3, &l).unwrap();
        assert!((ev[0] - log_cn_density((r - l.means[0]).norm_sqr(), 1.1)).abs() < 1e-14);
    }

    #[test]
    fn responsibilities_reconstruct_moments() {
        let l = mixed();
        let r: Vec<C64> = (0..20).map(|i| C64::new(0.1 * i as f64 - 1.0, 0.05 * i as f64)).collect();
        let p = posterior_x_moments(&r, 0.4, &l).unwrap();
        let mut var_sum = 0.0;
        for n in 0..r.len() {
            let (m, v) = p.resp.element_moments(n);
            assert!((m - p.x_hat[n]).norm() < 1e-12);
            var_sum += v;
            let total = p.resp.spike_prob[n] + p.resp.comp_prob[n * 2..n * 2 + 2].iter().sum::<f64>();
            assert!((total - 1.0).abs() < 1e-10);
        }
        assert!((var_sum / r.len() as f64 - p.tau_x).abs() < 1e-12);
    }

    #[test]
    fn limits_in_tau_r() {
        let l = mixed();
        let r = C64::new(2.0, -1.0);
        let (mean, _) = l.moments();
        let far = posterior_x_moments(&[r], 1e12, &l).unwrap();
        assert!((far.x_hat[0] - mean).norm() < 1e-6);
        let g = ParamLambda::gaussian(1.0).unwrap();
        let near = posterior_x_moments(&[r], 1e-12, &g).unwrap();
        assert!((near.x_hat[0] - r).norm() < 1e-10);
    }

    #[test]
    fn rejects_bad_inputs() {
        let l = mixed();
        assert!(posterior_x_moments(&[C64::default()], 0.0, &l).is_err());
        assert!(ParamLambda::new(1.2, vec![1.0], vec![C64::default()], vec![1.0]).is_err());
        assert!(ParamLambda::new(0.2, vec![1.0], vec![C64::default()], vec![0.0]).is_err());
        assert!(ParamLambda::new(0.2, vec![0.7, 0.2], vec![C64::default(); 2], vec![1.0; 2]).is_err());
    }

    #[test]
    fn sample_second_moment_and_sparsity() {
        let l = ParamLambda::gaussian(2.0).unwrap();
        let x = sample_prior(&l, 100_000, 7).unwrap();
        let e = x.iter().map(|z| z.norm_sqr()).sum::<f64>() / x.len() as f64;
        assert!((e / 2.0 - 1.0).abs() < 0.03);
        let s = ParamLambda::bernoulli_gaussian(0.1, 1.0).unwrap();
        let x = sample_prior(&s, 100_000, 8).unwrap();
        let frac = x.iter().filter(|z| z.norm() > 0.0).count() as f64 / x.len() as f64;
        assert!((frac - 0.1).abs() < 0.005);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let l = mixed();
        assert_eq!(sample_prior(&l, 64, 3).unwrap(), sample_prior(&l, 64, 3).unwrap());
    }
}
