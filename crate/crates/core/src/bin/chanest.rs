use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use chanest::artifact::ChannelArtifact;
use chanest::experiment::{self, read_records, summarize, write_summary, ExperimentConfig, CSV_HEADER};
use chanest::experiment::runner::{build_instance, instance_samples, quantize_samples, trial_seed};
use chanest::params::estimate_joint;
use chanest::Result;

#[derive(Parser)]
#[command(name = "chanest", version, about = "Quantized MIMO channel estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured sweep and write per-trial results as CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Set a config key, e.g. `--override channel.n_t=8`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Average a results CSV per (bits, SNR, method).
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute one results row (0-based, header excluded).
    Replay {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        row: usize,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Write the true channel of one trial and its AMP-PE estimate to a binary artifact.
    Dump {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        #[arg(long, default_value_t = 1)]
        bits: u32,
        #[arg(long, default_value_t = 10.0)]
        snr_db: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let records = experiment::run_experiment(&cfg)?;
            let errors = records.iter().filter(|r| r.is_err()).count();
            eprintln!("wrote {} rows to {} ({errors} errors)", records.len(), cfg.output_path.display());
        }
        Command::Summarize { input, out } => {
            let rows = summarize(&read_records(&input)?)?;
            write_summary(&out, &rows)?;
            eprintln!("wrote {} summary rows to {}", rows.len(), out.display());
        }
        Command::Replay { config, row, overrides } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let rec = experiment::replay(&cfg, row)?;
            println!("{CSV_HEADER}");
            println!("{}", rec.to_csv_line());
            if let Ok(existing) = read_records(&cfg.output_path) {
                if let Some(old) = existing.get(row) {
                    let same = old.deterministic_fields() == rec.deterministic_fields();
                    eprintln!("{}: {}", cfg.output_path.display(), if same { "match" } else { "MISMATCH" });
                    if !same {
                        return Err(chanest::Error::Io(format!("row {row} differs from {}", cfg.output_path.display())));
                    }
                }
            }
        }
        Command::Dump { config, trial, bits, snr_db, out, overrides } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let inst = build_instance(&cfg.channel, trial_seed(cfg.base_seed, trial))?;
            let noisy = instance_samples(&inst, snr_db)?;
            let y = quantize_samples(&noisy, &cfg.quantizer_for(bits))?;
            let est = estimate_joint(&inst.op, &y, &cfg.gamp, &cfg.outer, None)?;
            let c = &cfg.channel;
            let artifact = ChannelArtifact { n_r: c.n_r, n_t: c.n_t, taps: c.taps, tensors: vec![inst.channel.x, est.x_hat] };
            artifact.save(&out)?;
            eprintln!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
