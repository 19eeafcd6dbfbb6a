//! Reference computations used as test oracles. Each one is built from first
//! principles (quadrature, grids, dense algebra) and shares no numerical code
//! with the library beyond the complex type.

#![allow(dead_code)]

use std::f64::consts::{PI, SQRT_2};

use chanest::sim::{ChannelConfig, TrainingBlock};
use chanest::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Log-uniform draw on `[lo, hi]`.
pub fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    uniform(rng, lo.ln(), hi.ln()).exp()
}

/// Standard normal draw by Box–Muller.
pub fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

pub fn complex_normal(rng: &mut ChaCha8Rng, var: f64) -> C64 {
    let s = (0.5 * var).sqrt();
    C64::new(s * std_normal(rng), s * std_normal(rng))
}

/// `Φ(b) − Φ(a)` from `erfc`, evaluated on whichever tail keeps precision.
pub fn normal_interval(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        0.5 * (libm::erfc(a / SQRT_2) - libm::erfc(b / SQRT_2))
    } else if b <= 0.0 {
        0.5 * (libm::erfc(-b / SQRT_2) - libm::erfc(-a / SQRT_2))
    } else {
        1.0 - 0.5 * libm::erfc(-a / SQRT_2) - 0.5 * libm::erfc(b / SQRT_2)
    }
}

const GK_NODES: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const K_WEIGHTS: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const G_WEIGHTS: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = K_WEIGHTS[7] * fc;
    let mut gauss = G_WEIGHTS[3] * fc;
    for j in 0..7 {
        let x = h * GK_NODES[j];
        let pair = f(c - x) + f(c + x);
        kronrod += K_WEIGHTS[j] * pair;
        if j % 2 == 1 {
            gauss += G_WEIGHTS[j / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

fn gk_recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: (f64, f64), tol: f64, depth: usize) -> f64 {
    let (val, err) = whole;
    if err <= tol || depth == 0 {
        return val;
    }
    let m = 0.5 * (a + b);
    let (left, right) = (gk15(f, a, m), gk15(f, m, b));
    // Stop refining once halving no longer moves the estimate beyond roundoff.
    if (left.0 + right.0 - val).abs() <= 1e-15 * val.abs() && left.1 + right.1 <= err {
        return left.0 + right.0;
    }
    gk_recurse(f, a, m, left, 0.5 * tol, depth - 1) + gk_recurse(f, m, b, right, 0.5 * tol, depth - 1)
}

/// Adaptive Gauss–Kronrod (7/15) quadrature on `[a, b]` split at `breaks`,
/// to relative accuracy `rel_tol` of the integral of `|f|`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64], rel_tol: f64) -> f64 {
    let mut pts = vec![a];
    pts.extend(breaks.iter().copied().filter(|x| *x > a && *x < b));
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let coarse: Vec<(f64, f64)> = pts.windows(2).map(|w| gk15(&f, w[0], w[1])).collect();
    let scale = pts
        .windows(2)
        .map(|w| gk15(&|x| f(x).abs(), w[0], w[1]).0)
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    let tol = rel_tol.max(1e-15) * scale;
    pts.windows(2)
        .zip(coarse)
        .map(|(w, whole)| gk_recurse(&f, w[0], w[1], whole, tol, 30))
        .sum()
}

/// Posterior of one real rail `z ~ N(p, v_p)` given `z + w ∈ [lo, hi)`,
/// `w ~ N(0, v_w)`, by quadrature. Returns `(ln P(bin), E[z], Var[z])`.
pub fn rail_posterior_quadrature(lo: f64, hi: f64, p: f64, v_p: f64, v_w: f64) -> (f64, f64, f64) {
    let (sp, sw) = (v_p.sqrt(), v_w.sqrt());
    let a = (p - 14.0 * sp).max(lo - 14.0 * sw);
    let b = (p + 14.0 * sp).min(hi + 14.0 * sw);
    assert!(a < b, "bin is out of reach of the prior");
    let density = |z: f64| (-(z - p) * (z - p) / (2.0 * v_p)).exp() / (2.0 * PI * v_p).sqrt();
    let weight = |z: f64| density(z) * normal_interval((lo - z) / sw, (hi - z) / sw);
    let breaks = [lo, hi, p];
    let mass = integrate(weight, a, b, &breaks, 1e-14);
    let shift = integrate(|z| (z - p) * weight(z), a, b, &breaks, 1e-14) / mass;
    let mean = p + shift;
    let var = integrate(|z| (z - mean) * (z - mean) * weight(z), a, b, &breaks, 1e-14) / mass;
    (mass.ln(), mean, var)
}

/// `ln P(bin)` for one rail directly from Gaussian CDF differences.
pub fn rail_log_prob(lo: f64, hi: f64, p: f64, var: f64) -> f64 {
    let s = var.sqrt();
    normal_interval((lo - p) / s, (hi - p) / s).ln()
}

/// Posterior of `x` under the mixture prior and pseudo-measurement
/// `CN(r, τ_r)`, by trapezoid summation on a square complex grid.
/// Returns `(ln evidence, E[x], Var[x], P(x = 0 | r))`.
pub fn grid_posterior(
    r: C64,
    tau_r: f64,
    kappa: f64,
    weights: &[f64],
    means: &[C64],
    variances: &[f64],
    half_width: f64,
    step: f64,
) -> (f64, C64, f64, f64) {
    let n = (2.0 * half_width / step).round() as usize + 1;
    let axis: Vec<f64> = (0..n).map(|j| -half_width + j as f64 * step).collect();
    let trap = |j: usize| if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
    // Rail factors: CN(v; m, s) = g(v_re; m_re, s)·g(v_im; m_im, s),
    // g(t; c, s) = exp(−(t − c)²/s)/√(πs).
    let rail = |c: f64, s: f64| -> Vec<f64> {
        axis.iter().map(|t| (-(t - c) * (t - c) / s).exp() / (PI * s).sqrt()).collect()
    };
    // Quadrature weights ride on the likelihood factors only.
    let weighted = |v: Vec<f64>| -> Vec<f64> { v.into_iter().enumerate().map(|(j, f)| f * trap(j) * step).collect() };
    let lik_re = weighted(rail(r.re, tau_r));
    let lik_im = weighted(rail(r.im, tau_r));
    let mut comp_re = Vec::new();
    let mut comp_im = Vec::new();
    for (mu, nu) in means.iter().zip(variances) {
        comp_re.push(rail(mu.re, *nu).iter().zip(&lik_re).map(|(a, b)| a * b).collect::<Vec<_>>());
        comp_im.push(rail(mu.im, *nu).iter().zip(&lik_im).map(|(a, b)| a * b).collect::<Vec<_>>());
    }
    let (mut s0, mut s1, mut s2) = (0.0, C64::default(), 0.0);
    for (k, y) in axis.iter().enumerate() {
        let mut col = vec![0.0; n];
        for i in 0..weights.len() {
            let wi = kappa * weights[i] * comp_im[i][k];
            for (c, f) in col.iter_mut().zip(&comp_re[i]) {
                *c += wi * f;
            }
        }
        for (j, x) in axis.iter().enumerate() {
            let w = col[j];
            s0 += w;
            s1 += C64::new(*x, *y) * w;
            s2 += (x * x + y * y) * w;
        }
    }
    let spike = (1.0 - kappa) * (-r.norm_sqr() / tau_r).exp() / (PI * tau_r);
    let evidence = s0 + spike;
    let mean = s1 / evidence;
    let second = s2 / evidence;
    (evidence.ln(), mean, second - mean.norm_sqr(), spike / evidence)
}

/// Unitary DFT matrix, row-major.
pub fn dft(n: usize) -> Vec<C64> {
    let mut b = Vec::with_capacity(n * n);
    for j in 0..n {
        for k in 0..n {
            let angle = -2.0 * PI * (j as f64) * (k as f64) / n as f64;
            b.push(C64::new(angle.cos(), angle.sin()) / (n as f64).sqrt());
        }
    }
    b
}

/// Dense `M × N` matrix (row-major) of the received-sample model
/// `y[k] = Σ_l B_r X[l] B_tᴴ s[(k − l) mod N_p]`, entry by entry.
/// Rows are `k·N_r + r`; columns `(l·N_t + t)·N_r + r'`.
pub fn dense_mimo(cfg: &ChannelConfig, s: &TrainingBlock) -> Vec<C64> {
    let (n_t, n_r, taps, len) = (cfg.n_t, cfg.n_r, cfg.taps, cfg.training_len);
    let b_r = dft(n_r);
    let b_t = dft(n_t);
    let rows = n_r * len;
    let cols = n_t * n_r * taps;
    let mut a = vec![C64::default(); rows * cols];
    for k in 0..len {
        for r in 0..n_r {
            for l in 0..taps {
                let ks = (k + len * taps - l) % len;
                for t in 0..n_t {
                    // (B_tᴴ s)[t] = Σ_t' conj(B_t[t', t]) s[t']
                    let bs: C64 = (0..n_t).map(|tp| b_t[tp * n_t + t].conj() * s.s[ks * n_t + tp]).sum();
                    for rp in 0..n_r {
                        let col = (l * n_t + t) * n_r + rp;
                        a[(k * n_r + r) * cols + col] += b_r[r * n_r + rp] * bs;
                    }
                }
            }
        }
    }
    a
}

pub fn matvec(a: &[C64], rows: usize, cols: usize, x: &[C64]) -> Vec<C64> {
    (0..rows).map(|i| (0..cols).map(|j| a[i * cols + j] * x[j]).sum()).collect()
}

pub fn adjoint_matvec(a: &[C64], rows: usize, cols: usize, y: &[C64]) -> Vec<C64> {
    (0..cols).map(|j| (0..rows).map(|i| a[i * cols + j].conj() * y[i]).sum()).collect()
}

/// Solves `A x = b` for square `A` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<C64>, mut b: Vec<C64>) -> Vec<C64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i * n + c].norm().total_cmp(&a[j * n + c].norm())).unwrap();
        if piv != c {
            for k in 0..n {
                a.swap(c * n + k, piv * n + k);
            }
            b.swap(c, piv);
        }
        let d = a[c * n + c];
        for i in c + 1..n {
            let f = a[i * n + c] / d;
            if f == C64::default() {
                continue;
            }
            for k in c..n {
                let v = a[c * n + k];
                a[i * n + k] -= f * v;
            }
            let v = b[c];
            b[i] -= f * v;
        }
    }
    let mut x = vec![C64::default(); n];
    for i in (0..n).rev() {
        let s: C64 = (i + 1..n).map(|k| a[i * n + k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i * n + i];
    }
    x
}

/// Posterior mean of `x ~ CN(0, σ²I)` from `y = A x + CN(0, τ_w I)`:
/// `σ² Aᴴ (σ² A Aᴴ + τ_w I)⁻¹ y`.
pub fn lmmse(a: &[C64], rows: usize, cols: usize, y: &[C64], prior_var: f64, tau_w: f64) -> Vec<C64> {
    let mut g = vec![C64::default(); rows * rows];
    for i in 0..rows {
        for j in 0..rows {
            let dot: C64 = (0..cols).map(|k| a[i * cols + k] * a[j * cols + k].conj()).sum();
            g[i * rows + j] = dot * prior_var + if i == j { C64::new(tau_w, 0.0) } else { C64::default() };
        }
    }
    let u = solve(g, y.to_vec());
    adjoint_matvec(a, rows, cols, &u).into_iter().map(|v| v * prior_var).collect()
}

pub fn rel_err(a: &[C64], b: &[C64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

/// Per-rail `(lo, hi)` bounds of a 1-based bin index, from the quantizer's
/// inner thresholds.
pub fn bin_bounds(inner: &[f64], k: u16) -> (f64, f64) {
    let k = k as usize;
    let lo = if k == 1 { f64::NEG_INFINITY } else { inner[k - 2] };
    let hi = if k == inner.len() + 1 { f64::INFINITY } else { inner[k - 1] };
    (lo, hi)
}

/// `Σ_m ln P(y_m | p̂_m, τ_p, τ_w)` from CDF differences.
pub fn log_likelihood(inner: &[f64], re_idx: &[u16], im_idx: &[u16], p_hat: &[C64], tau_p: f64, tau_w: f64) -> f64 {
    let var = 0.5 * (tau_p + tau_w);
    let mut total = 0.0;
    for m in 0..p_hat.len() {
        let (lo, hi) = bin_bounds(inner, re_idx[m]);
        total += rail_log_prob(lo, hi, p_hat[m].re, var);
        let (lo, hi) = bin_bounds(inner, im_idx[m]);
        total += rail_log_prob(lo, hi, p_hat[m].im, var);
    }
    total
}
