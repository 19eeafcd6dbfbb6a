//! Complex vectors and matrix-free linear operators.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// `Σ conj(a_i)·b_i`
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn diff_norm_sqr(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum()
}

/// Draws `n` i.i.d. `CN(0, var)` samples.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, n: usize, var: f64) -> Vec<C64> {
    let s = (0.5 * var).sqrt();
    (0..n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(s * re, s * im)
        })
        .collect()
}

/// A linear map `A: C^N → C^M` with explicit adjoint.
pub trait LinearOperator: Send + Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn forward_into(&self, x: &[C64], out: &mut [C64]);
    fn adjoint_into(&self, y: &[C64], out: &mut [C64]);
    /// `‖A‖_F²`
    fn squared_norm_fro(&self) -> f64;

    fn forward(&self, x: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::default(); self.rows()];
        self.forward_into(x, &mut out);
        out
    }

    fn adjoint(&self, y: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::default(); self.cols()];
        self.adjoint_into(y, &mut out);
        out
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn rows(&self) -> usize {
        (**self).rows()
    }
    fn cols(&self) -> usize {
        (**self).cols()
    }
    fn forward_into(&self, x: &[C64], out: &mut [C64]) {
        (**self).forward_into(x, out)
    }
    fn adjoint_into(&self, y: &[C64], out: &mut [C64]) {
        (**self).adjoint_into(y, out)
    }
    fn squared_norm_fro(&self) -> f64 {
        (**self).squared_norm_fro()
    }
}

/// Row-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
    fro: f64,
}

impl DenseOperator {
    pub fn new(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "dense operator {rows}x{cols} given {} entries",
                data.len()
            )));
        }
        let fro = norm_sqr(&data);
        Ok(DenseOperator { rows, cols, data, fro })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![C64::default(); n * n];
        for i in 0..n {
            data[i * n + i] = C64::new(1.0, 0.0);
        }
        DenseOperator::new(n, n, data).expect("square identity")
    }

    /// Entries i.i.d. `CN(0, var)`.
    pub fn random_gaussian(rows: usize, cols: usize, var: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = complex_gaussian(&mut rng, rows * cols, var);
        DenseOperator::new(rows, cols, data).expect("sized")
    }

    /// Materializes any operator column by column.
    pub fn from_operator<O: LinearOperator + ?Sized>(op: &O) -> Self {
        let (m, n) = (op.rows(), op.cols());
        let mut data = vec![C64::default(); m * n];
        let mut e = vec![C64::default(); n];
        for j in 0..n {
            e[j] = C64::new(1.0, 0.0);
            let col = op.forward(&e);
            for i in 0..m {
                data[i * n + j] = col[i];
            }
            e[j] = C64::default();
        }
        DenseOperator::new(m, n, data).expect("sized")
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.cols + j]
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }
}

impl LinearOperator for DenseOperator {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn forward_into(&self, x: &[C64], out: &mut [C64]) {
        assert_eq!(x.len(), self.cols);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
    fn adjoint_into(&self, y: &[C64], out: &mut [C64]) {
        assert_eq!(y.len(), self.rows);
        out.iter_mut().for_each(|o| *o = C64::default());
        for (i, yi) in y.iter().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a.conj() * yi;
            }
        }
    }
    fn squared_norm_fro(&self) -> f64 {
        self.fro
    }
}

/// Global-mean removal with rank augmentation.
///
/// With `μ = (1/MN)·1ᵀA1`, `γ` the RMS entry of `A − μ·11ᵀ`, `u = μ/|μ|` and
/// `k = |μ|/γ`, the wrapped operator acts on `[x; x_a]` as
///
/// ```text
/// [ A − μ·11ᵀ    γu·1 ] [ x   ]
/// [ γk·1ᵀ        −γ   ] [ x_a ]
/// ```
///
/// so that `x_a = k·Σx` whenever the extra output is pinned to zero, in which
/// case the first `M` outputs reproduce `A x`. The extra column has entries of
/// the same magnitude as the centered operator, which keeps scalar-variance
/// message passing consistent on the augmented system.
#[derive(Debug, Clone)]
pub struct MeanRemoved<O> {
    inner: O,
    mean: C64,
    gamma: f64,
    phase: C64,
    k: f64,
    fro: f64,
}

impl<O: LinearOperator> MeanRemoved<O> {
    pub fn new(inner: O) -> Self {
        let (m, n) = (inner.rows(), inner.cols());
        let ones = vec![C64::new(1.0, 0.0); n];
        let total: C64 = inner.forward(&ones).iter().sum();
        let mean = total / (m * n) as f64;
        let centered = (inner.squared_norm_fro() - (m * n) as f64 * mean.norm_sqr()).max(0.0);
        let mut gamma = (centered / (m * n) as f64).sqrt();
        if !(gamma > 1e-12 * mean.norm()) {
            // A constant operator has nothing left after centering.
            gamma = mean.norm();
        }
        let phase = if mean.norm() > 0.0 { mean / mean.norm() } else { C64::new(1.0, 0.0) };
        let k = if gamma > 0.0 { mean.norm() / gamma } else { 0.0 };
        let fro = centered + gamma * gamma * (m as f64 + k * k * n as f64 + 1.0);
        MeanRemoved { inner, mean, gamma, phase, k, fro }
    }

    pub fn mean(&self) -> C64 {
        self.mean
    }

    /// Factor `k` in `x_a = k·Σx`.
    pub fn augmentation_scale(&self) -> f64 {
        self.k
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: LinearOperator> LinearOperator for MeanRemoved<O> {
    fn rows(&self) -> usize {
        self.inner.rows() + 1
    }
    fn cols(&self) -> usize {
        self.inner.cols() + 1
    }
    fn forward_into(&self, x: &[C64], out: &mut [C64]) {
        let (m, n) = (self.inner.rows(), self.inner.cols());
        let (x, xa) = (&x[..n], x[n]);
        let sum: C64 = x.iter().sum();
        self.inner.forward_into(x, &mut out[..m]);
        let shift = self.phase * xa * self.gamma - self.mean * sum;
        out[..m].iter_mut().for_each(|o| *o += shift);
        out[m] = (sum * self.k - xa) * self.gamma;
    }
    fn adjoint_into(&self, y: &[C64], out: &mut [C64]) {
        let (m, n) = (self.inner.rows(), self.inner.cols());
        let (y, ya) = (&y[..m], y[m]);
        let ysum: C64 = y.iter().sum();
        self.inner.adjoint_into(y, &mut out[..n]);
        let col = -self.mean.conj() * ysum + ya * (self.gamma * self.k);
        out[..n].iter_mut().for_each(|o| *o += col);
        out[n] = (self.phase.conj() * ysum - ya) * self.gamma;
    }
    fn squared_norm_fro(&self) -> f64 {
        self.fro
    }
}

/// Relative adjoint mismatch `|⟨Au, v⟩ − ⟨u, A*v⟩| / (‖Au‖‖v‖)` for random probes.
pub fn adjoint_mismatch<O: LinearOperator + ?Sized>(op: &O, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = complex_gaussian(&mut rng, op.cols(), 1.0);
    let v = complex_gaussian(&mut rng, op.rows(), 1.0);
    let au = op.forward(&u);
    let ahv = op.adjoint(&v);
    let lhs = inner(&v, &au);
    let rhs = inner(&ahv, &u);
    let scale = (norm_sqr(&au) * norm_sqr(&v)).sqrt().max(f64::MIN_POSITIVE);
    (lhs - rhs).norm() / scale
}

/// Hutchinson-style estimate of `‖A‖_F²` from `probes` random `CN(0,1)` inputs.
pub fn estimate_squared_norm_fro<O: LinearOperator + ?Sized>(op: &O, probes: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = (0..probes)
        .map(|_| norm_sqr(&op.forward(&complex_gaussian(&mut rng, op.cols(), 1.0))))
        .sum();
    total / probes as f64
}

/// Power-iteration estimate of the largest eigenvalue of `A*A` (i.e. `‖A‖₂²`).
pub fn spectral_norm_sqr<O: LinearOperator + ?Sized>(op: &O, iters: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = complex_gaussian(&mut rng, op.cols(), 1.0);
    let mut lambda = 0.0;
    for _ in 0..iters.max(1) {
        let nv = norm_sqr(&v).sqrt();
        if nv == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|z| *z /= nv);
        let w = op.adjoint(&op.forward(&v));
        lambda = inner(&v, &w).re;
        v = w;
    }
    lambda
}
