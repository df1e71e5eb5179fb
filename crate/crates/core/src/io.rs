//! On-disk traces and dataset manifests.
//!
//! A trace file is raw little-endian `f32` pairs (I, Q). Next to it sits a
//! JSON sidecar with the same stem. A manifest lists one trace per
//! (device, SNR) cell, frames concatenated, together with the split label of
//! every window in it.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, DacError, Result};
use crate::seed::derive_seed;
use crate::signal_sim::{snr_serde, split_assignments, Dataset, FleetSpec, IqTrace, Split, Window, SAMPLE_RATE_HZ};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub device_id: u32,
    #[serde(with = "snr_serde")]
    pub snr_db: f64,
    pub payload_id: u32,
    pub sample_rate: f64,
    pub window_len: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub meta: TraceMeta,
    pub frames: u32,
    pub windows_per_frame: usize,
    /// One label per window, in file order.
    pub splits: Vec<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub fleet: FleetSpec,
    pub traces: Vec<ManifestEntry>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes samples as interleaved `f32` and the metadata sidecar.
pub fn write_trace(path: &Path, trace: &IqTrace, meta: &TraceMeta) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 * trace.samples.len());
    for s in &trace.samples {
        bytes.extend_from_slice(&(s.re as f32).to_le_bytes());
        bytes.extend_from_slice(&(s.im as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

/// Reads a trace and its sidecar.
pub fn read_trace(path: &Path) -> Result<(IqTrace, TraceMeta)> {
    let meta: TraceMeta = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(DacError::Parse(format!(
            "{} holds {} bytes, not a whole number of IQ pairs",
            path.display(),
            bytes.len()
        )));
    }
    let samples: Vec<Complex64> = bytes
        .chunks_exact(8)
        .map(|b| {
            let re = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            let im = f32::from_le_bytes([b[4], b[5], b[6], b[7]]);
            Complex64::new(f64::from(re), f64::from(im))
        })
        .collect();
    let mut trace = IqTrace::new(samples, meta.payload_id)?;
    trace.device_id = Some(meta.device_id);
    trace.snr_db = meta.snr_db;
    Ok((trace, meta))
}

/// Simulates `spec` into `dir` and writes the manifest. Rerunning with the
/// same spec rewrites identical bytes.
pub fn write_fleet(spec: &FleetSpec, dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    let trace_dir = dir.join("traces");
    fs::create_dir_all(&trace_dir)?;
    let windows_per_cell = spec.frames_per_cell as usize * spec.windows_per_frame;
    let authorized_cells = (spec.n_devices as usize - 1) * spec.snr_list.len();
    let mut splits = split_assignments(authorized_cells * windows_per_cell, derive_seed(spec.seed, &[0x5B117])).into_iter();

    let mut traces = Vec::new();
    for profile in spec.profiles()? {
        for (si, &snr_db) in spec.snr_list.iter().enumerate() {
            let mut samples = Vec::with_capacity(windows_per_cell * spec.window_len);
            for frame in 0..spec.frames_per_cell {
                samples.extend(spec.frame_trace(&profile, si, frame)?.samples);
            }
            let mut trace = IqTrace::new(samples, spec.payload_id)?;
            trace.device_id = Some(profile.device_id);
            trace.snr_db = snr_db;
            let meta = TraceMeta {
                device_id: profile.device_id,
                snr_db,
                payload_id: spec.payload_id,
                sample_rate: SAMPLE_RATE_HZ,
                window_len: spec.window_len,
                seed: spec.seed,
            };
            let name = format!("dev{:02}_snr{:02}.iq", profile.device_id, si);
            write_trace(&trace_dir.join(&name), &trace, &meta)?;
            let cell_splits = if profile.device_id == spec.intruder_id {
                vec![Split::Test; windows_per_cell]
            } else {
                splits.by_ref().take(windows_per_cell).collect()
            };
            traces.push(ManifestEntry {
                path: format!("traces/{name}"),
                meta,
                frames: spec.frames_per_cell,
                windows_per_frame: spec.windows_per_frame,
                splits: cell_splits,
            });
        }
    }
    let manifest = Manifest {
        fleet: spec.clone(),
        traces,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Rebuilds the dataset a manifest describes. The result equals
/// [`build_dataset`](crate::signal_sim::build_dataset) on the same spec.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = read_manifest(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let window_len = manifest.fleet.window_len;
    let mut ds = Dataset {
        window_len,
        ..Dataset::default()
    };
    let mut intruder = Vec::new();
    for entry in &manifest.traces {
        let (trace, meta) = read_trace(&root.join(&entry.path))?;
        if meta.window_len != window_len || entry.windows_per_frame == 0 {
            return invalid(format!("{} disagrees with the manifest's window layout", entry.path));
        }
        let windows = trace.windows(window_len);
        if windows.len() != entry.splits.len() {
            return invalid(format!(
                "{} holds {} windows but the manifest labels {}",
                entry.path,
                windows.len(),
                entry.splits.len()
            ));
        }
        for (k, (data, split)) in windows.into_iter().zip(&entry.splits).enumerate() {
            let w = Window {
                data,
                device_id: meta.device_id,
                snr_db: meta.snr_db,
                frame: (k / entry.windows_per_frame) as u32,
                position: (k % entry.windows_per_frame) as u32,
            };
            if meta.device_id == manifest.fleet.intruder_id {
                intruder.push(w);
                continue;
            }
            match split {
                Split::Train => ds.train.push(w),
                Split::Validation => ds.validation.push(w),
                Split::Test => ds.test.push(w),
            }
        }
    }
    ds.test.extend(intruder);
    Ok(ds)
}
