//! Experiment driver behind the `dac` command.
//!
//! Each `cmd_*` function is one subcommand. They communicate only through
//! files in the output directory:
//!
//! ```text
//! <out>/config.json          resolved experiment config
//! <out>/manifest.json        written by simulate
//! <out>/traces/*.iq, *.json  written by simulate
//! <out>/key.dacw             written by train
//! <out>/train_report.json    written by train
//! <out>/report.json, .txt    written by evaluate
//! <out>/messages/*.dacm      written by sign
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use dac_core::autoencoder::{fingerprint, load_weights, save_weights, train, CaeArch, CaeModel, TrainConfig, TrainReport};
use dac_core::dac_protocol::{
    authenticate, build_message, compute_dac, compute_dac_confidential, evaluate_matrix, AuthDecision, AuthPolicy,
    DacMessage, EvalOptions, KsMatrix, MatrixReport, Verdict,
};
use dac_core::io::{load_dataset, read_manifest, write_fleet, Manifest, MANIFEST_FILE};
use dac_core::seed::derive_seed;
use dac_core::signal_sim::{FleetSpec, IqTrace};
use dac_core::DacError;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const CONFIG_FILE: &str = "config.json";
pub const KEY_FILE: &str = "key.dacw";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

const INIT_LABEL: u64 = 0x1417;
const TRAIN_LABEL: u64 = 0x7EA1_5EED;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] DacError),
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

/// Process exit status for a failed command.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INTRUDER: i32 = 2;
    pub const INPUT: i32 = 3;
    pub const RUNTIME: i32 = 4;
    pub const KEY_MISMATCH: i32 = 5;
    pub const INSUFFICIENT: i32 = 6;
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => exit::INPUT,
            HarnessError::Io { .. } => exit::RUNTIME,
            HarnessError::Core(e) => match e {
                DacError::InvalidArgument(_)
                | DacError::CorruptKey(_)
                | DacError::Integrity(_)
                | DacError::Parse(_)
                | DacError::Json(_) => exit::INPUT,
                DacError::IncompatibleKey(_) => exit::KEY_MISMATCH,
                DacError::InsufficientSamples { .. } => exit::INSUFFICIENT,
                DacError::TrainingDiverged { .. } | DacError::Io(_) => exit::RUNTIME,
            },
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(HarnessError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "missing input, run the previous step first"),
        })
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value).map_err(DacError::from)? + "\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    pub n_devices: u32,
    pub intruder_id: u32,
    pub spread: f64,
    /// Master seed; every other seed is derived from it.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalConfig {
    pub window_len: usize,
    pub windows_per_frame: usize,
    pub frames_per_cell: u32,
    pub snr_list: Vec<f64>,
    pub rician_k_db: Option<f64>,
    pub doppler_norm: f64,
    pub mobile_fraction: f64,
    pub vary_payload: bool,
    pub payload_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kernel: usize,
    pub channels: Vec<usize>,
    pub latent_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let a = CaeArch::default();
        Self {
            kernel: a.kernel,
            channels: a.channels,
            latent_channels: a.latent_channels,
        }
    }
}

/// One experiment, serializable as a single JSON document.
///
/// `train.seed` is ignored: the training and initialization seeds are derived
/// from `fleet.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub fleet: FleetConfig,
    pub signal: SignalConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub policy: AuthPolicy,
    #[serde(default)]
    pub eval: EvalOptions,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Six devices, five SNR levels from 0 to -15 dB.
    Zigbee6,
    /// Five devices, eleven SNR levels from -10 to 10 dB in 2 dB steps.
    Usrp5,
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Self {
        let (fleet, snr_list, frames_per_cell) = match p {
            Preset::Zigbee6 => (
                FleetConfig {
                    n_devices: 6,
                    intruder_id: 5,
                    spread: 0.3,
                    seed: 1,
                },
                vec![0.0, -1.0, -5.0, -10.0, -15.0],
                400,
            ),
            Preset::Usrp5 => (
                FleetConfig {
                    n_devices: 5,
                    intruder_id: 4,
                    spread: 0.3,
                    seed: 1,
                },
                (0..11).map(|i| -10.0 + 2.0 * f64::from(i)).collect(),
                70,
            ),
        };
        Self {
            fleet,
            signal: SignalConfig {
                window_len: 1024,
                windows_per_frame: 4,
                frames_per_cell,
                snr_list,
                rician_k_db: None,
                doppler_norm: 0.0,
                mobile_fraction: 0.0,
                vary_payload: false,
                payload_id: 1,
            },
            model: ModelConfig::default(),
            train: TrainConfig {
                epochs: 12,
                batch_size: 8,
                learning_rate: 8e-3,
                early_stop_patience: 3,
                max_windows_per_epoch: Some(2048),
                ..TrainConfig::default()
            },
            policy: AuthPolicy::default(),
            eval: EvalOptions::default(),
            output_dir: PathBuf::from("out"),
        }
    }

    /// Parses a JSON document, optionally layered over `base`: objects merge
    /// key by key, anything else replaces.
    pub fn from_json(text: &str, base: Option<&ExperimentConfig>) -> Result<Self> {
        let overlay: Value = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let merged = match base {
            Some(b) => {
                let mut v = serde_json::to_value(b).map_err(DacError::from)?;
                merge(&mut v, overlay);
                v
            }
            None => overlay,
        };
        let cfg: Self = serde_json::from_value(merged).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        to_json(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.fleet_spec().validate()?;
        self.arch().validate()?;
        self.train.validate()?;
        self.policy.validate()?;
        Ok(())
    }

    pub fn fleet_spec(&self) -> FleetSpec {
        let s = &self.signal;
        FleetSpec {
            n_devices: self.fleet.n_devices,
            intruder_id: self.fleet.intruder_id,
            spread: self.fleet.spread,
            snr_list: s.snr_list.clone(),
            frames_per_cell: s.frames_per_cell,
            window_len: s.window_len,
            windows_per_frame: s.windows_per_frame,
            rician_k_db: s.rician_k_db,
            doppler_norm: s.doppler_norm,
            mobile_fraction: s.mobile_fraction,
            vary_payload: s.vary_payload,
            payload_id: s.payload_id,
            seed: self.fleet.seed,
        }
    }

    pub fn arch(&self) -> CaeArch {
        CaeArch {
            window_len: self.signal.window_len,
            kernel: self.model.kernel,
            channels: self.model.channels.clone(),
            latent_channels: self.model.latent_channels,
        }
    }

    /// `train` with its seed derived from the master seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.fleet.seed, &[TRAIN_LABEL]),
            ..self.train.clone()
        }
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.fleet.seed, &[INIT_LABEL])
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.output_dir.join(MANIFEST_FILE)
    }

    pub fn key_path(&self) -> PathBuf {
        self.output_dir.join(KEY_FILE)
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Simulates the fleet into `output_dir`. Running it twice with the same
/// config produces identical files.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir).map_err(|source| HarnessError::Io {
        path: cfg.output_dir.clone(),
        source,
    })?;
    write_file(&cfg.output_dir.join(CONFIG_FILE), cfg.to_json()?)?;
    Ok(write_fleet(&cfg.fleet_spec(), &cfg.output_dir)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub training_windows: usize,
    pub training_devices: Vec<u32>,
    pub parameter_count: usize,
    /// Hex of the key fingerprint.
    pub fingerprint: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Trains a key on the authorized devices listed in the manifest.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let manifest_path = cfg.manifest_path();
    require(&manifest_path)?;
    let dataset = load_dataset(&manifest_path)?;
    let mut model = CaeModel::new(cfg.arch(), cfg.init_seed())?;
    let report = train(&mut model, &dataset, &cfg.train_config())?;
    save_weights(&model, cfg.key_path())?;
    let mut devices: Vec<u32> = dataset.train.iter().map(|w| w.device_id).collect();
    devices.sort_unstable();
    devices.dedup();
    let outcome = TrainOutcome {
        report,
        training_windows: dataset.train.len(),
        training_devices: devices,
        parameter_count: model.parameter_count(),
        fingerprint: hex(&fingerprint(&model)),
    };
    write_file(&cfg.output_dir.join(TRAIN_REPORT_FILE), to_json(&outcome)?)?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub label: String,
    pub accuracy: f64,
    pub intruders_flagged: bool,
    /// Enrolled devices that failed to match any enrolled reference.
    pub authorized_flagged: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub intruders: Vec<u32>,
    pub blocks: Vec<BlockSummary>,
    /// Mean off-diagonal statistic on the mixed-SNR block.
    pub dac_mean_off_diagonal: f64,
    pub raw_mean_off_diagonal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub fingerprint: String,
    pub policy: AuthPolicy,
    pub summary: EvaluationSummary,
    pub matrices: MatrixReport,
}

fn summarize(m: &KsMatrix) -> EvaluationSummary {
    let intruders: Vec<u32> = m.devices.iter().copied().filter(|d| !m.enrolled.contains(d)).collect();
    let blocks = m
        .blocks
        .iter()
        .map(|b| BlockSummary {
            label: b.label.clone(),
            accuracy: b.accuracy,
            intruders_flagged: b
                .decisions
                .iter()
                .filter(|d| d.expected == Verdict::Intruder)
                .all(|d| d.verdict == Verdict::Intruder),
            authorized_flagged: b
                .decisions
                .iter()
                .filter(|d| d.expected == Verdict::Authorized && d.verdict == Verdict::Intruder)
                .map(|d| d.device_id)
                .collect(),
        })
        .collect();
    EvaluationSummary {
        intruders,
        blocks,
        dac_mean_off_diagonal: 0.0,
        raw_mean_off_diagonal: 0.0,
    }
}

impl EvaluationReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("key {}\n", self.fingerprint));
        out.push_str(&format!(
            "mean off-diagonal K-S statistic (mixed SNR): DAC {:.3}, raw {:.3}\n\n",
            self.summary.dac_mean_off_diagonal, self.summary.raw_mean_off_diagonal
        ));
        out.push_str(&format!("{:<24}| {:<9}| {:<17}| authorized flagged\n", "Block", "accuracy", "intruder flagged"));
        for b in &self.summary.blocks {
            out.push_str(&format!(
                "{:<24}| {:<9.3}| {:<17}| {:?}\n",
                b.label, b.accuracy, b.intruders_flagged, b.authorized_flagged
            ));
        }
        out.push('\n');
        out.push_str(&self.matrices.raw.render());
        out.push_str(&self.matrices.dac.render());
        for &d in &self.summary.intruders {
            out.push_str(&self.matrices.dac.render_device_rows(d));
            out.push('\n');
        }
        out
    }
}

/// Computes raw-trace and DAC matrices for every SNR level and the mixed set.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<EvaluationReport> {
    cfg.validate()?;
    let manifest_path = cfg.manifest_path();
    let key_path = cfg.key_path();
    require(&manifest_path)?;
    require(&key_path)?;
    let dataset = load_dataset(&manifest_path)?;
    let model = load_weights(&key_path)?;
    let matrices = evaluate_matrix(&model, &dataset, &cfg.policy, &cfg.eval)?;
    let mut summary = summarize(&matrices.dac);
    summary.dac_mean_off_diagonal = matrices.dac.mixed().map(KsMatrix::mean_off_diagonal).unwrap_or(0.0);
    summary.raw_mean_off_diagonal = matrices.raw.mixed().map(KsMatrix::mean_off_diagonal).unwrap_or(0.0);
    let report = EvaluationReport {
        fingerprint: hex(&fingerprint(&model)),
        policy: cfg.policy,
        summary,
        matrices,
    };
    write_file(&cfg.output_dir.join(REPORT_JSON), to_json(&report)?)?;
    write_file(&cfg.output_dir.join(REPORT_TEXT), report.render())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignRequest {
    pub device_id: u32,
    pub snr_db: f64,
    pub windows: usize,
    pub confidential: bool,
    /// Key to sign with; defaults to the trained key.
    pub key: Option<PathBuf>,
    pub out: PathBuf,
}

/// Fresh transmission of `windows` windows from one fleet device, using
/// frames beyond those in the dataset.
pub fn fresh_trace(cfg: &ExperimentConfig, device_id: u32, snr_db: f64, windows: usize) -> Result<IqTrace> {
    let mut spec = cfg.fleet_spec();
    spec.snr_list = vec![snr_db];
    spec.validate()?;
    if device_id >= spec.n_devices {
        return Err(HarnessError::Config(format!("device {device_id} is not in the fleet")));
    }
    let profile = spec.device_profile(device_id)?;
    let frames = windows.div_ceil(spec.windows_per_frame) as u32;
    let mut samples = Vec::with_capacity(frames as usize * spec.frame_len());
    for f in 0..frames {
        samples.extend(spec.frame_trace(&profile, 0, spec.frames_per_cell + f)?.samples);
    }
    samples.truncate(windows * spec.window_len);
    let mut trace = IqTrace::new(samples, spec.payload_id)?;
    trace.device_id = Some(device_id);
    trace.snr_db = snr_db;
    Ok(trace)
}

/// Writes a signed message from a fleet device.
pub fn cmd_sign(cfg: &ExperimentConfig, req: &SignRequest) -> Result<DacMessage> {
    let key_path = req.key.clone().unwrap_or_else(|| cfg.key_path());
    require(&key_path)?;
    let key = load_weights(&key_path)?;
    let trace = fresh_trace(cfg, req.device_id, req.snr_db, req.windows)?;
    let w = key.window_len();
    let dac = if req.confidential {
        compute_dac_confidential(&key, &trace, w, 1)?
    } else {
        compute_dac(&key, &trace, w, 1)?
    };
    let msg = build_message(&trace, &dac, req.confidential, &key)?;
    write_file(&req.out, msg.encode()?)?;
    Ok(msg)
}

/// Parses a message file and checks it against a key.
pub fn cmd_authenticate(key_path: &Path, message_path: &Path, policy: &AuthPolicy) -> Result<AuthDecision> {
    let key = load_weights_checked(key_path)?;
    let msg = DacMessage::parse(&read_file(message_path)?)?;
    Ok(authenticate(&msg, &key, policy)?)
}

fn load_weights_checked(path: &Path) -> Result<CaeModel> {
    require(path)?;
    Ok(load_weights(path)?)
}

/// Reads a manifest, surfacing a missing file as an I/O error.
pub fn manifest(cfg: &ExperimentConfig) -> Result<Manifest> {
    let p = cfg.manifest_path();
    require(&p)?;
    Ok(read_manifest(&p)?)
}
