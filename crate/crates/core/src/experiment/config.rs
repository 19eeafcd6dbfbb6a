//! Experiment configuration: a TOML file of dotted keys (`channel.n_t = 16`)
//! plus command-line `key=value` overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::IhtOptions;
use crate::error::{Error, Result};
use crate::gamp::GampOptions;
use crate::output_channel::QuantizerSpec;
use crate::params::OuterLoopOptions;
use crate::sim::{ChannelConfig, QuantizerChoice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    AmpPe,
    AmpOracle,
    Ls,
    Iht,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::AmpPe, Method::AmpOracle, Method::Ls, Method::Iht];

    pub fn name(self) -> &'static str {
        match self {
            Method::AmpPe => "amp-pe",
            Method::AmpOracle => "amp-oracle",
            Method::Ls => "ls",
            Method::Iht => "iht",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LsOptions {
    pub max_cg_iters: usize,
    pub tol: f64,
}

impl Default for LsOptions {
    fn default() -> Self {
        LsOptions { max_cg_iters: 200, tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub channel: ChannelConfig,
    pub bits_list: Vec<u32>,
    pub snr_list_db: Vec<f64>,
    pub methods: Vec<Method>,
    pub trials: usize,
    pub base_seed: u64,
    pub output_path: PathBuf,
    pub gamp: GampOptions,
    pub outer: OuterLoopOptions,
    pub iht: IhtOptions,
    /// IHT sparsity levels as multiples of the true effective sparsity; the
    /// best result is reported. Empty means use `iht.sparsity` as given.
    pub iht_sweep: Vec<f64>,
    pub ls: LsOptions,
    /// EM iterations used to fit the oracle prior to the true coefficients.
    pub oracle_fit_iters: usize,
    /// Explicit quantizers keyed by bit depth, replacing the default uniform one.
    pub quantizer: BTreeMap<String, QuantizerSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            channel: ChannelConfig::desk(),
            bits_list: vec![1, 2, 3],
            snr_list_db: vec![0.0, 10.0, 20.0, 30.0, 40.0],
            methods: Method::ALL.to_vec(),
            trials: 20,
            base_seed: 1,
            output_path: PathBuf::from("results.csv"),
            gamp: GampOptions::default(),
            outer: OuterLoopOptions::default(),
            iht: IhtOptions::default(),
            iht_sweep: vec![0.5, 1.0, 1.5, 2.0],
            ls: LsOptions::default(),
            oracle_fit_iters: 200,
            quantizer: BTreeMap::new(),
        }
    }
}

fn field_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config { field: field.into(), message: message.into() }
}

fn wrap(field: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::Config { .. } => e,
        other => field_err(field, other.to_string()),
    })
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        wrap("channel", self.channel.validate())?;
        if self.trials == 0 {
            return Err(field_err("trials", "must be at least 1"));
        }
        if self.bits_list.is_empty() {
            return Err(field_err("bits_list", "must not be empty"));
        }
        if let Some(b) = self.bits_list.iter().find(|b| !(1..=15).contains(*b)) {
            return Err(field_err("bits_list", format!("bit depth {b} outside 1..=15")));
        }
        if self.snr_list_db.is_empty() {
            return Err(field_err("snr_list_db", "must not be empty"));
        }
        if self.snr_list_db.iter().any(|s| s.is_nan()) {
            return Err(field_err("snr_list_db", "NaN entry"));
        }
        if self.methods.is_empty() {
            return Err(field_err("methods", "must not be empty"));
        }
        wrap("gamp", self.gamp.validate())?;
        wrap("outer", self.outer.validate())?;
        if self.iht_sweep.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(field_err("iht_sweep", "multipliers must be positive"));
        }
        let n = self.channel.signal_len();
        if self.iht_sweep.is_empty() {
            self.iht.validate(n)?;
        } else {
            IhtOptions { sparsity: 1, ..self.iht.clone() }.validate(n)?;
        }
        if self.ls.max_cg_iters == 0 {
            return Err(field_err("ls.max_cg_iters", "must be at least 1"));
        }
        for (k, q) in &self.quantizer {
            let bits: u32 = k.parse().map_err(|_| field_err(&format!("quantizer.{k}"), "key must be a bit depth"))?;
            if q.bits() != bits {
                return Err(field_err(
                    &format!("quantizer.{k}"),
                    format!("has {} bins, expected {}", q.num_bins(), 1u64 << bits),
                ));
            }
        }
        Ok(())
    }

    pub fn quantizer_for(&self, bits: u32) -> QuantizerChoice {
        match self.quantizer.get(&bits.to_string()) {
            Some(q) => QuantizerChoice::Explicit(q.clone()),
            None => QuantizerChoice::Default(bits),
        }
    }

    /// Number of CSV data rows a full run produces.
    pub fn row_count(&self) -> usize {
        self.trials * self.bits_list.len() * self.snr_list_db.len() * self.methods.len()
    }

    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| field_err("<file>", e.message()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig =
            ExperimentConfig::deserialize(table).map_err(|e: toml::de::Error| field_err("<config>", e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Sets `a.b.c = value` in the table; the value is parsed as TOML and falls
/// back to a plain string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| field_err(spec, "override must have the form key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(field_err(spec, "empty key"));
    }
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(field_err(key, format!("`{p}` is not a section"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
