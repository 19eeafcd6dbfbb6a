//! Broadband clustered MIMO channel simulation.
//!
//! The channel at lag `l` is `H[l] = B_r X[l] B_tᴴ` with unitary DFT steering
//! matrices, and the received training block is the circular convolution
//! `y[k] = Q(Σ_l H[l] s[k − l] + w[k])`. Coefficient tensors are stored with
//! the receive index fastest: entry `(r, t, l)` lives at `(l·N_t + t)·N_r + r`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{complex_gaussian, diff_norm_sqr, norm_sqr, LinearOperator, C64};
use crate::output_channel::{default_quantizer, quantize, QuantizedVector, QuantizerSpec};
use crate::parallel;

/// SNR values above this are treated as this (effectively noiseless).
pub const MAX_SNR_DB: f64 = 300.0;
/// Reported NMSE for an exact reconstruction.
pub const NMSE_FLOOR_DB: f64 = -300.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub n_t: usize,
    pub n_r: usize,
    pub taps: usize,
    pub clusters: usize,
    pub paths_per_cluster: usize,
    /// Standard deviation of the Laplacian intra-cluster angle offset.
    pub angle_spread_deg: f64,
    pub training_len: usize,
    /// Snap every path to the DFT angle grid.
    pub on_grid: bool,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            n_t: 64,
            n_r: 64,
            taps: 16,
            clusters: 4,
            paths_per_cluster: 10,
            angle_spread_deg: 7.5,
            training_len: 2048,
            on_grid: false,
            seed: 0,
        }
    }
}

impl ChannelConfig {
    /// Reduced configuration used for routine experiments and tests.
    pub fn desk() -> Self {
        ChannelConfig { n_t: 16, n_r: 16, taps: 8, training_len: 512, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_t", self.n_t),
            ("n_r", self.n_r),
            ("taps", self.taps),
            ("clusters", self.clusters),
            ("paths_per_cluster", self.paths_per_cluster),
            ("training_len", self.training_len),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config { field: format!("channel.{name}"), message: "must be at least 1".into() });
            }
        }
        if self.training_len < self.taps {
            return Err(Error::Config {
                field: "channel.training_len".into(),
                message: format!("must be at least taps = {}", self.taps),
            });
        }
        if !(self.angle_spread_deg >= 0.0 && self.angle_spread_deg.is_finite()) {
            return Err(Error::Config { field: "channel.angle_spread_deg".into(), message: "must be nonnegative".into() });
        }
        Ok(())
    }

    /// Number of angle-domain coefficients `N_t·N_r·L`.
    pub fn signal_len(&self) -> usize {
        self.n_t * self.n_r * self.taps
    }

    /// Number of complex measurements `N_r·N_p`.
    pub fn measurement_len(&self) -> usize {
        self.n_r * self.training_len
    }
}

/// Unitary DFT matrix, row-major: entry `(j, k) = exp(−2πi·jk/n)/√n`.
pub fn steering_dft(n: usize) -> Vec<C64> {
    let scale = 1.0 / (n as f64).sqrt();
    let mut b = Vec::with_capacity(n * n);
    for j in 0..n {
        for k in 0..n {
            let phase = -2.0 * PI * ((j * k) % n) as f64 / n as f64;
            b.push(C64::from_polar(scale, phase));
        }
    }
    b
}

/// Unit-norm uniform linear array response at spatial frequency `psi`
/// (cycles per element); equals DFT column `k` when `psi = k/n`.
fn array_response(n: usize, psi: f64) -> Vec<C64> {
    let scale = 1.0 / (n as f64).sqrt();
    (0..n).map(|j| C64::from_polar(scale, -2.0 * PI * j as f64 * psi)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngleChannel {
    pub n_t: usize,
    pub n_r: usize,
    pub taps: usize,
    /// Angle-domain coefficients (the vector being estimated).
    pub x: Vec<C64>,
    /// Antenna-domain channel.
    pub h: Vec<C64>,
    pub energy: f64,
}

/// `out = B_r · M · B_tᴴ` (or `B_rᴴ · M · B_t` when `inverse`), all `N_r × N_t`
/// blocks column-major, `B` row-major.
fn domain_transform(m: &[C64], b_r: &[C64], b_t: &[C64], n_r: usize, n_t: usize, inverse: bool, out: &mut [C64]) {
    // tmp = M · B_tᴴ  (or M · B_t)
    let mut tmp = vec![C64::default(); n_r * n_t];
    for t in 0..n_t {
        for tp in 0..n_t {
            let c = if inverse { b_t[tp * n_t + t] } else { b_t[t * n_t + tp].conj() };
            let col = &m[tp * n_r..(tp + 1) * n_r];
            for (o, v) in tmp[t * n_r..(t + 1) * n_r].iter_mut().zip(col) {
                *o += v * c;
            }
        }
    }
    // out = B_r · tmp  (or B_rᴴ · tmp)
    for t in 0..n_t {
        let col = &tmp[t * n_r..(t + 1) * n_r];
        for r in 0..n_r {
            out[t * n_r + r] = (0..n_r)
                .map(|rp| {
                    let b = if inverse { b_r[rp * n_r + r].conj() } else { b_r[r * n_r + rp] };
                    b * col[rp]
                })
                .sum();
        }
    }
}

fn laplace<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
}

fn snap(psi: f64, n: usize) -> f64 {
    (psi * n as f64).round() / n as f64
}

/// Clustered multipath channel: each cluster has uniformly drawn departure and
/// arrival angles and one delay tap; paths scatter around the cluster angles
/// with Laplacian offsets and carry `CN(0, 1/P)` gains. The realization is
/// scaled to `Σ_l ‖H[l]‖_F² = N_t·N_r`.
pub fn generate_channel(cfg: &ChannelConfig) -> Result<AngleChannel> {
    cfg.validate()?;
    let (n_t, n_r, taps) = (cfg.n_t, cfg.n_r, cfg.taps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let block = n_t * n_r;
    let mut h = vec![C64::default(); block * taps];
    let paths = cfg.clusters * cfg.paths_per_cluster;
    let spread = cfg.angle_spread_deg.to_radians() / std::f64::consts::SQRT_2;
    for _ in 0..cfg.clusters {
        let aoa = (rng.random::<f64>() - 0.5) * PI;
        let aod = (rng.random::<f64>() - 0.5) * PI;
        let tap = rng.random_range(0..taps);
        for _ in 0..cfg.paths_per_cluster {
            let mut psi_r = 0.5 * (aoa + laplace(&mut rng, spread)).sin();
            let mut psi_t = 0.5 * (aod + laplace(&mut rng, spread)).sin();
            if cfg.on_grid {
                psi_r = snap(psi_r, n_r);
                psi_t = snap(psi_t, n_t);
            }
            let gain = complex_gaussian(&mut rng, 1, 1.0 / paths as f64)[0];
            let a_r = array_response(n_r, psi_r);
            let a_t = array_response(n_t, psi_t);
            let hl = &mut h[tap * block..(tap + 1) * block];
            for t in 0..n_t {
                let c = gain * a_t[t].conj();
                for r in 0..n_r {
                    hl[t * n_r + r] += a_r[r] * c;
                }
            }
        }
    }
    let e = norm_sqr(&h);
    if e > 0.0 {
        let s = ((n_t * n_r) as f64 / e).sqrt();
        h.iter_mut().for_each(|v| *v *= s);
    }
    let b_r = steering_dft(n_r);
    let b_t = steering_dft(n_t);
    let mut x = vec![C64::default(); block * taps];
    for l in 0..taps {
        let r = l * block..(l + 1) * block;
        domain_transform(&h[r.clone()], &b_r, &b_t, n_r, n_t, true, &mut x[r]);
    }
    let energy = norm_sqr(&x);
    Ok(AngleChannel { n_t, n_r, taps, x, h, energy })
}

impl AngleChannel {
    /// Antenna-domain tensor rebuilt from the angle-domain one.
    pub fn antenna_from_angle(&self) -> Vec<C64> {
        let block = self.n_t * self.n_r;
        let b_r = steering_dft(self.n_r);
        let b_t = steering_dft(self.n_t);
        let mut h = vec![C64::default(); block * self.taps];
        for l in 0..self.taps {
            let r = l * block..(l + 1) * block;
            domain_transform(&self.x[r.clone()], &b_r, &b_t, self.n_r, self.n_t, false, &mut h[r]);
        }
        h
    }
}

/// Fraction of total energy held by the largest `fraction·N` entries.
pub fn top_energy_fraction(x: &[C64], fraction: f64) -> f64 {
    let mut e: Vec<f64> = x.iter().map(|v| v.norm_sqr()).collect();
    e.sort_by(|a, b| b.total_cmp(a));
    let k = ((fraction * x.len() as f64).ceil() as usize).min(x.len());
    let total: f64 = e.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    e[..k].iter().sum::<f64>() / total
}

/// Smallest number of entries that together hold `fraction` of the energy.
pub fn effective_sparsity(x: &[C64], fraction: f64) -> usize {
    let mut e: Vec<f64> = x.iter().map(|v| v.norm_sqr()).collect();
    e.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = e.iter().sum();
    let mut acc = 0.0;
    for (i, v) in e.iter().enumerate() {
        acc += v;
        if acc >= fraction * total {
            return i + 1;
        }
    }
    e.len()
}

/// QPSK training symbols, stored time-major: `s[k·N_t + t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBlock {
    pub n_t: usize,
    pub len: usize,
    pub s: Vec<C64>,
    pub seed: u64,
}

impl TrainingBlock {
    /// Entries `(±1 ± i)/√(2N_t)`, so each time step carries unit power.
    pub fn qpsk(n_t: usize, len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = 1.0 / (2.0 * n_t as f64).sqrt();
        let s = (0..n_t * len)
            .map(|_| {
                let re = if rng.random::<bool>() { a } else { -a };
                let im = if rng.random::<bool>() { a } else { -a };
                C64::new(re, im)
            })
            .collect();
        TrainingBlock { n_t, len, s, seed }
    }

    pub fn at(&self, k: usize, t: usize) -> C64 {
        self.s[k * self.n_t + t]
    }
}

/// Matrix-free map from angle-domain coefficients to received samples
/// (time-major, `y[k·N_r + r]`), with circular convolution over the block.
#[derive(Debug, Clone)]
pub struct MimoOperator {
    n_t: usize,
    n_r: usize,
    taps: usize,
    len: usize,
    b_r: Vec<C64>,
    b_t: Vec<C64>,
    s: Vec<C64>,
    fro: f64,
}

pub fn assemble_operator(s: &TrainingBlock, cfg: &ChannelConfig) -> Result<MimoOperator> {
    cfg.validate()?;
    if s.n_t != cfg.n_t || s.len != cfg.training_len || s.s.len() != s.n_t * s.len {
        return Err(Error::DimensionMismatch(format!(
            "training block {}x{} does not match n_t={} training_len={}",
            s.n_t, s.len, cfg.n_t, cfg.training_len
        )));
    }
    // Every column of A has squared norm Σ_k |b_tᴴ s[k−l]|², summing to N_r·L·‖S‖_F².
    let fro = (cfg.n_r * cfg.taps) as f64 * norm_sqr(&s.s);
    Ok(MimoOperator {
        n_t: cfg.n_t,
        n_r: cfg.n_r,
        taps: cfg.taps,
        len: cfg.training_len,
        b_r: steering_dft(cfg.n_r),
        b_t: steering_dft(cfg.n_t),
        s: s.s.clone(),
        fro,
    })
}

impl MimoOperator {
    fn block(&self) -> usize {
        self.n_t * self.n_r
    }
}

impl LinearOperator for MimoOperator {
    fn rows(&self) -> usize {
        self.n_r * self.len
    }
    fn cols(&self) -> usize {
        self.block() * self.taps
    }

    fn forward_into(&self, x: &[C64], out: &mut [C64]) {
        assert_eq!(x.len(), self.cols());
        assert_eq!(out.len(), self.rows());
        let (n_t, n_r, block) = (self.n_t, self.n_r, self.block());
        let mut h = vec![C64::default(); block * self.taps];
        for l in 0..self.taps {
            let r = l * block..(l + 1) * block;
            domain_transform(&x[r.clone()], &self.b_r, &self.b_t, n_r, n_t, false, &mut h[r]);
        }
        let chunk_k = 16;
        parallel::for_each_chunk_mut(out, chunk_k * n_r, |ci, ys| {
            ys.iter_mut().for_each(|v| *v = C64::default());
            for (kk, y) in ys.chunks_mut(n_r).enumerate() {
                let k = ci * chunk_k + kk;
                for l in 0..self.taps {
                    let ks = (k + self.len - l % self.len) % self.len;
                    let sk = &self.s[ks * n_t..(ks + 1) * n_t];
                    let hl = &h[l * block..(l + 1) * block];
                    for (t, sv) in sk.iter().enumerate() {
                        let col = &hl[t * n_r..(t + 1) * n_r];
                        for (o, c) in y.iter_mut().zip(col) {
                            *o += c * sv;
                        }
                    }
                }
            }
        });
    }

    fn adjoint_into(&self, y: &[C64], out: &mut [C64]) {
        assert_eq!(y.len(), self.rows());
        assert_eq!(out.len(), self.cols());
        let (n_t, n_r, block) = (self.n_t, self.n_r, self.block());
        parallel::for_each_chunk_mut(out, block, |l, xl| {
            let mut g = vec![C64::default(); block];
            for k in 0..self.len {
                let ks = (k + self.len - l % self.len) % self.len;
                let sk = &self.s[ks * n_t..(ks + 1) * n_t];
                let yk = &y[k * n_r..(k + 1) * n_r];
                for (t, sv) in sk.iter().enumerate() {
                    let c = sv.conj();
                    for (o, v) in g[t * n_r..(t + 1) * n_r].iter_mut().zip(yk) {
                        *o += v * c;
                    }
                }
            }
            domain_transform(&g, &self.b_r, &self.b_t, n_r, n_t, true, xl);
        });
    }

    fn squared_norm_fro(&self) -> f64 {
        self.fro
    }
}

/// Noisy and quantized received samples for one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub y: QuantizedVector,
    /// Pre-quantization samples `z + w`.
    pub r: Vec<C64>,
    pub tau_w: f64,
    /// `E|r|²` used to scale the quantizer.
    pub input_power: f64,
}

/// Pre-quantization samples for one SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisySamples {
    /// `r = z + w`.
    pub r: Vec<C64>,
    pub tau_w: f64,
    /// `‖z‖²/M` for the noiseless output `z = A x`.
    pub signal_power: f64,
}

impl NoisySamples {
    /// `E|r|²` under the generating model.
    pub fn input_power(&self) -> f64 {
        self.signal_power + self.tau_w
    }
}

/// Adds `CN(0, τ_w)` noise to `A x` for the target SNR. The noise draw
/// depends only on `seed`, so different SNRs share one realization up to scale.
pub fn noisy_samples<O: LinearOperator + ?Sized>(x: &[C64], op: &O, snr_db: f64, seed: u64) -> Result<NoisySamples> {
    if snr_db.is_nan() {
        return Err(Error::InvalidParams("snr_db is NaN".into()));
    }
    let z = op.forward(x);
    let m = z.len();
    let signal_power = norm_sqr(&z) / m as f64;
    if signal_power == 0.0 {
        return Err(Error::DegenerateSignal);
    }
    let snr = snr_db.min(MAX_SNR_DB);
    let tau_w = signal_power / 10f64.powf(snr / 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = complex_gaussian(&mut rng, m, 1.0);
    let sd = tau_w.sqrt();
    let r = z.iter().zip(&w).map(|(a, b)| a + b * sd).collect();
    Ok(NoisySamples { r, tau_w, signal_power })
}

/// Which quantizer to apply after the noise.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantizerChoice {
    /// Uniform quantizer of this bit depth scaled to the RMS of `r`.
    Default(u32),
    Explicit(QuantizerSpec),
}

impl QuantizerChoice {
    pub fn resolve(&self, input_power: f64) -> Result<QuantizerSpec> {
        match self {
            QuantizerChoice::Default(bits) => default_quantizer(*bits, input_power.sqrt()),
            QuantizerChoice::Explicit(s) => Ok(s.clone()),
        }
    }
}

pub fn simulate_measurements<O: LinearOperator + ?Sized>(
    x: &[C64],
    op: &O,
    snr_db: f64,
    quantizer: &QuantizerChoice,
    seed: u64,
) -> Result<Measurement> {
    let noisy = noisy_samples(x, op, snr_db, seed)?;
    let input_power = noisy.input_power();
    let y = quantize(&noisy.r, &quantizer.resolve(input_power)?)?;
    Ok(Measurement { y, r: noisy.r, tau_w: noisy.tau_w, input_power })
}

/// `10·log10(‖x̂ − x‖²/‖x‖²)`, floored at [`NMSE_FLOOR_DB`].
pub fn nmse_db(x_hat: &[C64], x_true: &[C64]) -> Result<f64> {
    if x_hat.len() != x_true.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {}", x_hat.len(), x_true.len())));
    }
    let reference = norm_sqr(x_true);
    if reference == 0.0 {
        return Err(Error::ZeroReference);
    }
    let ratio = diff_norm_sqr(x_hat, x_true) / reference;
    Ok(if ratio > 0.0 { (10.0 * ratio.log10()).max(NMSE_FLOOR_DB) } else { NMSE_FLOOR_DB })
}
