use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dac_core::dac_protocol::Verdict;
use dac_harness::{
    cmd_authenticate, cmd_evaluate, cmd_sign, cmd_simulate, cmd_train, exit, ExperimentConfig, HarnessError, Preset,
    SignRequest,
};

/// Device authentication codes: simulate a fleet, train a key, evaluate and
/// authenticate.
#[derive(Parser)]
#[command(name = "dac", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Layered over the preset when both are given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the fleet and write traces plus a manifest.
    Simulate(Common),
    /// Train a key on the authorized devices.
    Train(Common),
    /// Write raw-trace and DAC K-S matrices with an intruder summary.
    Evaluate(Common),
    /// Write a signed message from one fleet device.
    Sign {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        device: u32,
        #[arg(long, allow_hyphen_values = true)]
        snr: f64,
        /// Number of windows; defaults to the policy minimum.
        #[arg(long)]
        windows: Option<usize>,
        /// Send latent codes instead of raw samples.
        #[arg(long)]
        confidential: bool,
        /// Signing key; defaults to the trained key.
        #[arg(long)]
        key: Option<PathBuf>,
        #[arg(long)]
        message: PathBuf,
    },
    /// Check a message against a key and print the decision as JSON.
    Authenticate {
        #[command(flatten)]
        common: Common,
        /// Receiver key; defaults to the trained key.
        #[arg(long)]
        key: Option<PathBuf>,
        #[arg(long)]
        message: PathBuf,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig, HarnessError> {
    let base = c.preset.map(ExperimentConfig::preset);
    let mut cfg = match &c.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
                path: path.clone(),
                source,
            })?;
            ExperimentConfig::from_json(&text, base.as_ref())?
        }
        None => base.ok_or_else(|| HarnessError::Config("give --config, --preset or both".into()))?,
    };
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<i32, HarnessError> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = load_config(&c)?;
            let m = cmd_simulate(&cfg)?;
            println!("wrote {} traces to {}", m.traces.len(), cfg.output_dir.display());
        }
        Command::Train(c) => {
            let cfg = load_config(&c)?;
            let o = cmd_train(&cfg)?;
            for e in &o.report.epochs {
                println!("epoch {:>3}  train {:.6}  validation {:.6}", e.epoch, e.train_loss, e.validation_loss);
            }
            println!("kept epoch {}, key {}", o.report.best_epoch, o.fingerprint);
        }
        Command::Evaluate(c) => {
            let cfg = load_config(&c)?;
            print!("{}", cmd_evaluate(&cfg)?.render());
        }
        Command::Sign {
            common,
            device,
            snr,
            windows,
            confidential,
            key,
            message,
        } => {
            let cfg = load_config(&common)?;
            let req = SignRequest {
                device_id: device,
                snr_db: snr,
                windows: windows.unwrap_or(cfg.policy.min_windows),
                confidential,
                key,
                out: message.clone(),
            };
            let msg = cmd_sign(&cfg, &req)?;
            println!("wrote {} windows to {}", msg.dac_length(), message.display());
        }
        Command::Authenticate { common, key, message } => {
            let cfg = load_config(&common)?;
            let key = key.unwrap_or_else(|| cfg.key_path());
            let d = cmd_authenticate(&key, &message, &cfg.policy)?;
            let json = serde_json::to_string_pretty(&d).map_err(dac_core::DacError::from)?;
            println!("{json}");
            if d.verdict == Verdict::Intruder {
                return Ok(exit::INTRUDER);
            }
        }
    }
    Ok(exit::OK)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::INPUT } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
