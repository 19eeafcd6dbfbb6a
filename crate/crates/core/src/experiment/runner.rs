//! Paired Monte Carlo sweep over trials, SNRs, bit depths and methods.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use crate::baselines::{amp_oracle, auto_step, fit_prior_to_signal, iht, least_squares, IhtOptions, StepSize};
use crate::error::{Error, Result};
use crate::experiment::config::{ExperimentConfig, Method};
use crate::sim::QuantizerChoice;
use crate::input_channel::ParamLambda;
use crate::linalg::C64;
use crate::output_channel::{quantize, ParamTheta, QuantizedVector};
use crate::params::estimate_joint;
use crate::sim::{
    assemble_operator, effective_sparsity, generate_channel, nmse_db, noisy_samples, AngleChannel, ChannelConfig,
    MimoOperator, NoisySamples, TrainingBlock,
};

pub const CSV_HEADER: &str = "trial,bits,snr_db,method,nmse_db,iterations,runtime_ms,tau_w_hat,kappa_hat,converged,seed";

/// Environment variable capping the worker pool size.
pub const THREADS_ENV: &str = "CHANEST_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub bits: u32,
    pub snr_db: f64,
    pub method: Method,
    /// NaN when the estimator failed; written as `err`.
    pub nmse_db: f64,
    pub iterations: usize,
    pub runtime_ms: f64,
    pub tau_w_hat: Option<f64>,
    pub kappa_hat: Option<f64>,
    pub converged: bool,
    pub seed: u64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrialRecord {
    pub fn is_err(&self) -> bool {
        self.nmse_db.is_nan()
    }

    /// CSV line without the wall-clock column, for replay comparisons.
    pub fn deterministic_fields(&self) -> String {
        let nmse = if self.is_err() { "err".to_string() } else { self.nmse_db.to_string() };
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.trial,
            self.bits,
            self.snr_db,
            self.method,
            nmse,
            self.iterations,
            opt(self.tau_w_hat),
            opt(self.kappa_hat),
            self.converged,
            self.seed
        )
    }

    pub fn to_csv_line(&self) -> String {
        let nmse = if self.is_err() { "err".to_string() } else { self.nmse_db.to_string() };
        format!(
            "{},{},{},{},{},{},{:.3},{},{},{},{}",
            self.trial,
            self.bits,
            self.snr_db,
            self.method,
            nmse,
            self.iterations,
            self.runtime_ms,
            opt(self.tau_w_hat),
            opt(self.kappa_hat),
            self.converged,
            self.seed
        )
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed shared by every method, bit depth and SNR of one trial.
pub fn trial_seed(base_seed: u64, trial: usize) -> u64 {
    mix(mix(base_seed) ^ trial as u64)
}

fn sub_seed(seed: u64, stream: u64) -> u64 {
    mix(seed ^ stream.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

/// Realization drawn for one trial.
#[derive(Debug, Clone)]
pub struct TrialInstance {
    pub seed: u64,
    pub channel: AngleChannel,
    pub op: MimoOperator,
}

pub fn build_instance(channel_cfg: &ChannelConfig, seed: u64) -> Result<TrialInstance> {
    let cfg = ChannelConfig { seed: sub_seed(seed, 1), ..channel_cfg.clone() };
    let channel = generate_channel(&cfg)?;
    let training = TrainingBlock::qpsk(cfg.n_t, cfg.training_len, sub_seed(seed, 2));
    let op = assemble_operator(&training, &cfg)?;
    Ok(TrialInstance { seed, channel, op })
}

/// Noisy samples for one SNR; the noise draw is shared across SNR values up to scale.
pub fn instance_samples(inst: &TrialInstance, snr_db: f64) -> Result<NoisySamples> {
    noisy_samples(&inst.channel.x, &inst.op, snr_db, sub_seed(inst.seed, 3))
}

pub fn quantize_samples(noisy: &NoisySamples, choice: &QuantizerChoice) -> Result<QuantizedVector> {
    quantize(&noisy.r, &choice.resolve(noisy.input_power())?)
}

struct Outcome {
    x_hat: Vec<C64>,
    iterations: usize,
    tau_w_hat: Option<f64>,
    kappa_hat: Option<f64>,
    converged: bool,
}

/// Per-trial quantities that do not depend on the method.
pub struct TrialContext<'a> {
    pub cfg: &'a ExperimentConfig,
    pub inst: &'a TrialInstance,
    pub oracle_prior: Option<ParamLambda>,
    pub true_sparsity: usize,
}

impl<'a> TrialContext<'a> {
    pub fn new(cfg: &'a ExperimentConfig, inst: &'a TrialInstance) -> Result<Self> {
        let oracle_prior = if cfg.methods.contains(&Method::AmpOracle) {
            Some(fit_prior_to_signal(&inst.channel.x, cfg.outer.components, cfg.oracle_fit_iters)?)
        } else {
            None
        };
        let true_sparsity = effective_sparsity(&inst.channel.x, 0.95);
        Ok(TrialContext { cfg, inst, oracle_prior, true_sparsity })
    }

    fn run(&self, method: Method, y: &QuantizedVector, tau_w: f64) -> Result<Outcome> {
        let cfg = self.cfg;
        let op = &self.inst.op;
        match method {
            Method::AmpPe => {
                let est = estimate_joint(op, y, &cfg.gamp, &cfg.outer, None)?;
                Ok(Outcome {
                    x_hat: est.x_hat,
                    iterations: est.inner_iters_total,
                    tau_w_hat: Some(est.theta_hat.tau_w),
                    kappa_hat: Some(est.lambda_hat.kappa),
                    converged: est.converged,
                })
            }
            Method::AmpOracle => {
                let lambda = match &self.oracle_prior {
                    Some(l) => l.clone(),
                    None => fit_prior_to_signal(&self.inst.channel.x, cfg.outer.components, cfg.oracle_fit_iters)?,
                };
                let theta = ParamTheta::new(tau_w.max(cfg.outer.tau_w_min))?;
                let res = amp_oracle(op, y, &lambda, theta, &cfg.gamp)?;
                Ok(Outcome {
                    x_hat: res.x_hat,
                    iterations: res.iterations_used,
                    tau_w_hat: Some(theta.tau_w),
                    kappa_hat: Some(lambda.kappa),
                    converged: res.converged,
                })
            }
            Method::Ls => {
                let ls = least_squares(op, y, cfg.ls.max_cg_iters, cfg.ls.tol)?;
                Ok(Outcome {
                    x_hat: ls.x_hat,
                    iterations: ls.iterations,
                    tau_w_hat: None,
                    kappa_hat: None,
                    converged: ls.converged,
                })
            }
            Method::Iht => self.run_iht(y),
        }
    }

    fn run_iht(&self, y: &QuantizedVector) -> Result<Outcome> {
        let cfg = self.cfg;
        let n = self.inst.op_cols();
        let levels: Vec<usize> = if cfg.iht_sweep.is_empty() {
            vec![cfg.iht.sparsity]
        } else {
            cfg.iht_sweep
                .iter()
                .map(|m| ((m * self.true_sparsity as f64).round() as usize).clamp(1, n))
                .collect()
        };
        let step = match cfg.iht.step_size {
            StepSize::Auto => StepSize::Fixed(auto_step(&self.inst.op)?),
            s => s,
        };
        let mut best: Option<(f64, Outcome)> = None;
        let mut last_err = None;
        for k in levels {
            let opts = IhtOptions { sparsity: k, step_size: step, ..cfg.iht.clone() };
            match iht(&self.inst.op, y, &opts) {
                Ok(r) => {
                    let e = nmse_db(&r.x_hat, &self.inst.channel.x)?;
                    if best.as_ref().is_none_or(|(b, _)| e < *b) {
                        let o = Outcome {
                            x_hat: r.x_hat,
                            iterations: r.iterations,
                            tau_w_hat: None,
                            kappa_hat: None,
                            converged: r.converged,
                        };
                        best = Some((e, o));
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
        match best {
            Some((_, o)) => Ok(o),
            None => Err(last_err.unwrap_or(Error::EmptyInput)),
        }
    }

    /// Runs one method and converts the outcome (or failure) into a record.
    pub fn record(&self, trial: usize, bits: u32, snr_db: f64, method: Method, y: &QuantizedVector, tau_w: f64) -> TrialRecord {
        let start = Instant::now();
        let result = self.run(method, y, tau_w).and_then(|o| nmse_db(&o.x_hat, &self.inst.channel.x).map(|e| (e, o)));
        let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
        let base = TrialRecord {
            trial,
            bits,
            snr_db,
            method,
            nmse_db: f64::NAN,
            iterations: 0,
            runtime_ms,
            tau_w_hat: None,
            kappa_hat: None,
            converged: false,
            seed: self.inst.seed,
        };
        match result {
            Ok((e, o)) => TrialRecord {
                nmse_db: e,
                iterations: o.iterations,
                tau_w_hat: o.tau_w_hat,
                kappa_hat: o.kappa_hat,
                converged: o.converged,
                ..base
            },
            Err(_) => base,
        }
    }
}

impl TrialInstance {
    fn op_cols(&self) -> usize {
        self.channel.x.len()
    }
}

/// All records of one (trial, SNR) unit, ordered by (bits, method).
fn run_unit(cfg: &ExperimentConfig, trial: usize, snr_idx: usize) -> Vec<TrialRecord> {
    let seed = trial_seed(cfg.base_seed, trial);
    let snr = cfg.snr_list_db[snr_idx];
    let failed = |bits: u32, method: Method| TrialRecord {
        trial,
        bits,
        snr_db: snr,
        method,
        nmse_db: f64::NAN,
        iterations: 0,
        runtime_ms: 0.0,
        tau_w_hat: None,
        kappa_hat: None,
        converged: false,
        seed,
    };
    let prepared = build_instance(&cfg.channel, seed).and_then(|inst| {
        let noisy = instance_samples(&inst, snr)?;
        Ok((inst, noisy))
    });
    let (inst, noisy) = match prepared {
        Ok(p) => p,
        Err(_) => {
            return cfg.bits_list.iter().flat_map(|&b| cfg.methods.iter().map(move |&m| failed(b, m))).collect();
        }
    };
    let ctx = TrialContext::new(cfg, &inst);
    let mut out = Vec::with_capacity(cfg.bits_list.len() * cfg.methods.len());
    for &bits in &cfg.bits_list {
        let y = quantize_samples(&noisy, &cfg.quantizer_for(bits));
        for &m in &cfg.methods {
            match (&ctx, &y) {
                (Ok(ctx), Ok(y)) => out.push(ctx.record(trial, bits, snr, m, y, noisy.tau_w)),
                _ => out.push(failed(bits, m)),
            }
        }
    }
    out
}

/// Position of a record in the CSV: ordered by (trial, bits, snr, method).
pub fn row_index(cfg: &ExperimentConfig, trial: usize, bits_idx: usize, snr_idx: usize, method_idx: usize) -> usize {
    ((trial * cfg.bits_list.len() + bits_idx) * cfg.snr_list_db.len() + snr_idx) * cfg.methods.len() + method_idx
}

/// Inverse of [`row_index`].
pub fn decode_row(cfg: &ExperimentConfig, row: usize) -> Result<(usize, usize, usize, usize)> {
    if row >= cfg.row_count() {
        return Err(Error::Config { field: "row".into(), message: format!("row {row} beyond {} rows", cfg.row_count()) });
    }
    let nm = cfg.methods.len();
    let ns = cfg.snr_list_db.len();
    let nb = cfg.bits_list.len();
    Ok((row / (nm * ns * nb), (row / (nm * ns)) % nb, (row / nm) % ns, row % nm))
}

/// Reorders one trial's unit outputs (indexed by SNR) into CSV order.
fn trial_rows(cfg: &ExperimentConfig, units: Vec<Vec<TrialRecord>>) -> Vec<TrialRecord> {
    let nm = cfg.methods.len();
    let mut slots: Vec<Option<TrialRecord>> = vec![None; cfg.bits_list.len() * cfg.snr_list_db.len() * nm];
    for (s, recs) in units.into_iter().enumerate() {
        for (i, rec) in recs.into_iter().enumerate() {
            let (b, m) = (i / nm, i % nm);
            slots[(b * cfg.snr_list_db.len() + s) * nm + m] = Some(rec);
        }
    }
    slots.into_iter().map(|r| r.expect("every slot filled")).collect()
}

struct OrderedWriter<'a> {
    cfg: &'a ExperimentConfig,
    sink: Option<BufWriter<File>>,
    pending: Vec<Vec<Option<Vec<TrialRecord>>>>,
    next_trial: usize,
    done: Vec<TrialRecord>,
    error: Option<Error>,
}

impl<'a> OrderedWriter<'a> {
    fn push(&mut self, trial: usize, snr_idx: usize, recs: Vec<TrialRecord>) {
        self.pending[trial][snr_idx] = Some(recs);
        while self.next_trial < self.cfg.trials && self.pending[self.next_trial].iter().all(Option::is_some) {
            let units = std::mem::take(&mut self.pending[self.next_trial]).into_iter().map(|u| u.unwrap()).collect();
            let rows = trial_rows(self.cfg, units);
            if let Some(w) = self.sink.as_mut() {
                let res = rows
                    .iter()
                    .try_for_each(|r| writeln!(w, "{}", r.to_csv_line()))
                    .and_then(|_| w.flush());
                if let Err(e) = res {
                    self.error.get_or_insert(e.into());
                }
            }
            self.done.extend(rows);
            self.next_trial += 1;
        }
    }
}

/// Worker count from `CHANEST_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|n: &usize| *n > 0)
}

/// Runs the sweep, streaming rows to `output` (if given) in CSV order as
/// each trial completes.
pub fn run_experiment_to(cfg: &ExperimentConfig, output: Option<&Path>, threads: Option<usize>) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let sink = match output {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let mut w = BufWriter::new(File::create(p)?);
            writeln!(w, "{CSV_HEADER}")?;
            w.flush()?;
            Some(w)
        }
        None => None,
    };
    let writer = Mutex::new(OrderedWriter {
        cfg,
        sink,
        pending: vec![vec![None; cfg.snr_list_db.len()]; cfg.trials],
        next_trial: 0,
        done: Vec::with_capacity(cfg.row_count()),
        error: None,
    });
    let units = cfg.trials * cfg.snr_list_db.len();
    let work = |u: usize| {
        let (trial, s) = (u / cfg.snr_list_db.len(), u % cfg.snr_list_db.len());
        let recs = run_unit(cfg, trial, s);
        writer.lock().expect("writer lock").push(trial, s, recs);
    };
    dispatch(units, threads, work)?;
    let w = writer.into_inner().expect("writer lock");
    if let Some(e) = w.error {
        return Err(e);
    }
    Ok(w.done)
}

#[cfg(feature = "parallel")]
fn dispatch<F: Fn(usize) + Sync + Send>(units: usize, threads: Option<usize>, work: F) -> Result<()> {
    use rayon::prelude::*;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::Io(format!("thread pool: {e}")))?;
    pool.install(|| (0..units).into_par_iter().with_max_len(1).for_each(&work));
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn dispatch<F: Fn(usize) + Sync + Send>(units: usize, _threads: Option<usize>, work: F) -> Result<()> {
    (0..units).for_each(work);
    Ok(())
}

/// Runs the sweep described by `cfg`, writing to `cfg.output_path`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    run_experiment_to(cfg, Some(&cfg.output_path), threads_from_env())
}

/// Recomputes a single CSV data row (0-based, header excluded).
pub fn replay(cfg: &ExperimentConfig, row: usize) -> Result<TrialRecord> {
    cfg.validate()?;
    let (trial, b, s, m) = decode_row(cfg, row)?;
    let seed = trial_seed(cfg.base_seed, trial);
    let bits = cfg.bits_list[b];
    let snr = cfg.snr_list_db[s];
    let method = cfg.methods[m];
    let inst = build_instance(&cfg.channel, seed)?;
    let noisy = instance_samples(&inst, snr)?;
    let y = quantize_samples(&noisy, &cfg.quantizer_for(bits))?;
    let ctx = TrialContext::new(cfg, &inst)?;
    Ok(ctx.record(trial, bits, snr, method, &y, noisy.tau_w))
}
