//! Pairwise K-S matrices over a fleet's test windows.
//!
//! Rows are the device of interest, columns the device it is compared with.
//! Every device's test windows are split into two disjoint halves: a probe
//! half (what the device presents) and a reference half (what the receiver
//! enrolled). Cell `(i, j)` compares probe `i` against reference `j`, so the
//! diagonal is an honest same-device comparison on disjoint data. The halves
//! are formed by alternating through windows ordered by SNR, position in the
//! frame and frame index, which keeps both halves balanced across those
//! strata. The same-windows comparison is reported separately and is always
//! `(0, 1)`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::auth::{AuthPolicy, Verdict};
use super::dac::window_errors;
use crate::autoencoder::CaeModel;
use crate::error::{DacError, Result};
use crate::kstest::{ks_two_sample, Edf, KsResult};
use crate::signal_sim::{Dataset, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixMode {
    /// Reconstruction errors under the key.
    Dac,
    /// Raw normalized I and Q sample values, no model involved.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Fewest windows allowed in either half of a device's test set.
    pub min_windows_per_half: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { min_windows_per_half: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceDecision {
    pub device_id: u32,
    /// Authorized for enrolled devices, intruder otherwise.
    pub expected: Verdict,
    pub verdict: Verdict,
    /// Enrolled reference with the smallest statistic.
    pub closest_enrolled: Option<u32>,
}

impl DeviceDecision {
    pub fn correct(&self) -> bool {
        self.expected == self.verdict
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixBlock {
    pub label: String,
    /// `None` for the block that mixes every SNR level.
    pub snr_db: Option<f64>,
    /// `cells[i][j]`: probe half of device `i` against reference half of `j`.
    pub cells: Vec<Vec<KsResult>>,
    /// Each device's full test set against itself.
    pub exact_diagonal: Vec<KsResult>,
    pub decisions: Vec<DeviceDecision>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsMatrix {
    pub mode: MatrixMode,
    pub devices: Vec<u32>,
    pub enrolled: Vec<u32>,
    pub blocks: Vec<MatrixBlock>,
}

impl KsMatrix {
    pub fn mixed(&self) -> Option<&MatrixBlock> {
        self.blocks.iter().find(|b| b.snr_db.is_none())
    }

    pub fn per_snr(&self) -> impl Iterator<Item = &MatrixBlock> {
        self.blocks.iter().filter(|b| b.snr_db.is_some())
    }

    fn index_of(&self, device: u32) -> Option<usize> {
        self.devices.iter().position(|&d| d == device)
    }

    /// Mean statistic over off-diagonal cells of a block.
    pub fn mean_off_diagonal(block: &MatrixBlock) -> f64 {
        let n = block.cells.len();
        let mut sum = 0.0;
        for (i, row) in block.cells.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                if i != j {
                    sum += c.statistic;
                }
            }
        }
        sum / (n * (n - 1)).max(1) as f64
    }

    /// Aligned table, one per block: rows are the device of interest.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let title = match self.mode {
            MatrixMode::Dac => "DAC",
            MatrixMode::Raw => "raw trace",
        };
        for block in &self.blocks {
            let _ = writeln!(out, "{title} K-S statistic and p-value, {}", block.label);
            let _ = write!(out, "{:<20}", "Device of interest");
            for d in &self.devices {
                let _ = write!(out, "| {:<16}", format!("Device {d}"));
            }
            out.push('\n');
            for (i, row) in block.cells.iter().enumerate() {
                let _ = write!(out, "{:<20}", format!("Device {}", self.devices[i]));
                for c in row {
                    let _ = write!(out, "| {:<16}", format!("({:.3}, {:.3})", c.statistic, c.p_value));
                }
                out.push('\n');
            }
            let _ = write!(out, "{:<20}", "Same windows");
            for c in &block.exact_diagonal {
                let _ = write!(out, "| {:<16}", format!("({:.2}, {:.2})", c.statistic, c.p_value));
            }
            out.push('\n');
            let _ = writeln!(out, "accuracy {:.3}\n", block.accuracy);
        }
        out
    }

    /// One row per block for a single device of interest, in the layout of a
    /// per-SNR robustness table.
    pub fn render_device_rows(&self, device: u32) -> String {
        let Some(i) = self.index_of(device) else {
            return String::new();
        };
        let mut out = String::new();
        let _ = writeln!(out, "Device of interest: {device}");
        let _ = write!(out, "{:<24}", "Noise level");
        for d in &self.devices {
            let _ = write!(out, "| {:<16}", format!("Device {d}"));
        }
        out.push('\n');
        for block in &self.blocks {
            let _ = write!(out, "{:<24}", block.label);
            for c in &block.cells[i] {
                let _ = write!(out, "| {:<16}", format!("({:.3}, {:.3})", c.statistic, c.p_value));
            }
            out.push('\n');
        }
        out
    }
}

/// DAC and raw-trace matrices computed from the same halves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub dac: KsMatrix,
    pub raw: KsMatrix,
}

fn snr_label(snr: f64) -> String {
    if snr.is_finite() {
        format!("{snr} dB")
    } else {
        "noiseless".to_string()
    }
}

fn mixed_label(snrs: &[f64]) -> String {
    let parts: Vec<String> = snrs.iter().map(|s| format!("{s}")).collect();
    format!("[{}] dB", parts.join(","))
}

/// Indices of `windows` split into (probe, reference) halves.
fn halves(windows: &[(usize, &Window)], snr_order: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut sorted: Vec<(usize, &Window)> = windows.to_vec();
    let rank = |s: f64| snr_order.iter().position(|&x| x == s).unwrap_or(usize::MAX);
    sorted.sort_by_key(|(_, w)| (rank(w.snr_db), w.position, w.frame));
    let mut probe = Vec::with_capacity(sorted.len() / 2);
    let mut reference = Vec::with_capacity(sorted.len() / 2 + 1);
    for (k, (idx, _)) in sorted.into_iter().enumerate() {
        if k % 2 == 0 {
            reference.push(idx);
        } else {
            probe.push(idx);
        }
    }
    (probe, reference)
}

struct Samples {
    dac: Vec<f64>,
    raw: Vec<f64>,
}

fn gather(indices: &[usize], per_window: &[f64], test: &[Window]) -> Result<(Edf, Edf)> {
    let s = Samples {
        dac: indices.iter().map(|&i| per_window[i]).collect(),
        raw: indices.iter().flat_map(|&i| test[i].data.iter().copied()).collect(),
    };
    Ok((Edf::new(s.dac)?, Edf::new(s.raw)?))
}

/// Builds the DAC and raw-trace matrices for every SNR level present in
/// `dataset.test` plus one block mixing all levels.
///
/// Devices that appear in `dataset.train` are treated as enrolled; any other
/// test device is expected to be flagged. A device is authorized in a block
/// when its probe half matches at least one enrolled reference under
/// `policy`.
pub fn evaluate_matrix(
    model: &CaeModel,
    dataset: &Dataset,
    policy: &AuthPolicy,
    opts: &EvalOptions,
) -> Result<MatrixReport> {
    policy.validate()?;
    if dataset.test.is_empty() {
        return Err(DacError::InvalidArgument("test set is empty".into()));
    }
    if dataset.window_len != model.window_len() {
        return Err(DacError::InvalidArgument(format!(
            "dataset window_len {} does not match key input {}",
            dataset.window_len,
            model.window_len()
        )));
    }
    let test = &dataset.test;
    let devices: Vec<u32> = test.iter().map(|w| w.device_id).collect::<BTreeSet<_>>().into_iter().collect();
    let enrolled_set: BTreeSet<u32> = dataset.train.iter().map(|w| w.device_id).collect();
    let enrolled: Vec<u32> = devices.iter().copied().filter(|d| enrolled_set.contains(d)).collect();
    let mut snrs: Vec<f64> = Vec::new();
    for w in test {
        if !snrs.contains(&w.snr_db) {
            snrs.push(w.snr_db);
        }
    }

    let windows: Vec<Vec<f64>> = test.iter().map(|w| w.data.clone()).collect();
    let errors = window_errors(model, &windows)?;

    let mut filters: Vec<(String, Option<f64>)> = snrs.iter().map(|&s| (snr_label(s), Some(s))).collect();
    filters.push((mixed_label(&snrs), None));

    let mut dac_blocks = Vec::with_capacity(filters.len());
    let mut raw_blocks = Vec::with_capacity(filters.len());
    for (label, snr) in filters {
        let mut dac_sets = Vec::with_capacity(devices.len());
        let mut raw_sets = Vec::with_capacity(devices.len());
        let mut dac_exact = Vec::with_capacity(devices.len());
        let mut raw_exact = Vec::with_capacity(devices.len());
        for &d in &devices {
            let members: Vec<(usize, &Window)> = test
                .iter()
                .enumerate()
                .filter(|(_, w)| w.device_id == d && snr.is_none_or(|s| w.snr_db == s))
                .collect();
            let (probe, reference) = halves(&members, &snrs);
            if probe.len() < opts.min_windows_per_half.max(1) {
                return Err(DacError::InsufficientSamples {
                    required: 2 * opts.min_windows_per_half.max(1),
                    available: members.len(),
                });
            }
            let all: Vec<usize> = members.iter().map(|(i, _)| *i).collect();
            let (dac_all, raw_all) = gather(&all, &errors, test)?;
            dac_exact.push(ks_two_sample(&dac_all, &dac_all.clone()));
            raw_exact.push(ks_two_sample(&raw_all, &raw_all.clone()));
            let (dp, rp) = gather(&probe, &errors, test)?;
            let (dr, rr) = gather(&reference, &errors, test)?;
            dac_sets.push((dp, dr));
            raw_sets.push((rp, rr));
        }
        let ctx = BlockContext {
            devices: &devices,
            enrolled: &enrolled,
            policy,
        };
        dac_blocks.push(ctx.block(label.clone(), snr, &dac_sets, dac_exact));
        raw_blocks.push(ctx.block(label, snr, &raw_sets, raw_exact));
    }

    Ok(MatrixReport {
        dac: KsMatrix {
            mode: MatrixMode::Dac,
            devices: devices.clone(),
            enrolled: enrolled.clone(),
            blocks: dac_blocks,
        },
        raw: KsMatrix {
            mode: MatrixMode::Raw,
            devices,
            enrolled,
            blocks: raw_blocks,
        },
    })
}

struct BlockContext<'a> {
    devices: &'a [u32],
    enrolled: &'a [u32],
    policy: &'a AuthPolicy,
}

impl BlockContext<'_> {
    fn block(&self, label: String, snr_db: Option<f64>, sets: &[(Edf, Edf)], exact: Vec<KsResult>) -> MatrixBlock {
        let cells: Vec<Vec<KsResult>> = sets
            .iter()
            .map(|(probe, _)| sets.iter().map(|(_, reference)| ks_two_sample(probe, reference)).collect())
            .collect();
        let decisions: Vec<DeviceDecision> = self
            .devices
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let enrolled_cols = self
                    .devices
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| self.enrolled.contains(e));
                let mut verdict = Verdict::Intruder;
                let mut closest: Option<(u32, f64)> = None;
                for (j, &e) in enrolled_cols {
                    let c = &cells[i][j];
                    if self.policy.decide(c) == Verdict::Authorized {
                        verdict = Verdict::Authorized;
                    }
                    if closest.is_none_or(|(_, s)| c.statistic < s) {
                        closest = Some((e, c.statistic));
                    }
                }
                let expected = if self.enrolled.contains(&d) {
                    Verdict::Authorized
                } else {
                    Verdict::Intruder
                };
                DeviceDecision {
                    device_id: d,
                    expected,
                    verdict,
                    closest_enrolled: closest.map(|c| c.0),
                }
            })
            .collect();
        let accuracy = decisions.iter().filter(|d| d.correct()).count() as f64 / decisions.len() as f64;
        MatrixBlock {
            label,
            snr_db,
            cells,
            exact_diagonal: exact,
            decisions,
            accuracy,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::CaeArch;
    use crate::signal_sim::{build_dataset, FleetSpec};

    fn fixture() -> (CaeModel, Dataset) {
        let mut spec = FleetSpec::new(3, 2, vec![10.0, 0.0], 200, 64, 5);
        spec.windows_per_frame = 2;
        let ds = build_dataset(&spec).unwrap();
        let model = CaeModel::new(
            CaeArch {
                window_len: 64,
                kernel: 5,
                channels: vec![4, 8],
                latent_channels: 2,
            },
            3,
        )
        .unwrap();
        (model, ds)
    }

    #[test]
    fn report_shape() {
        let (model, ds) = fixture();
        let r = evaluate_matrix(&model, &ds, &AuthPolicy::default(), &EvalOptions { min_windows_per_half: 2 }).unwrap();
        for m in [&r.dac, &r.raw] {
            assert_eq!(m.devices, vec![0, 1, 2]);
            assert_eq!(m.enrolled, vec![0, 1]);
            assert_eq!(m.blocks.len(), 3);
            assert_eq!(m.blocks.iter().filter(|b| b.snr_db.is_none()).count(), 1);
            assert_eq!(m.mixed().unwrap().label, "[10,0] dB");
            for b in &m.blocks {
                assert_eq!(b.cells.len(), 3);
                assert!(b.cells.iter().all(|row| row.len() == 3));
                assert!(b.exact_diagonal.iter().all(KsResult::is_exact_match));
                assert_eq!(b.decisions.len(), 3);
            }
        }
        let text = r.dac.render();
        assert!(text.contains("Device of interest"));
        assert!(text.contains("(0.00, 1.00)"));
        assert_eq!(r.dac.render_device_rows(2).lines().count(), 2 + 3);
    }

    #[test]
    fn halves_are_disjoint_and_balanced() {
        let (_, ds) = fixture();
        let members: Vec<(usize, &Window)> = ds.test.iter().enumerate().filter(|(_, w)| w.device_id == 2).collect();
        let (probe, reference) = halves(&members, &[10.0, 0.0]);
        assert_eq!(probe.len() + reference.len(), members.len());
        assert!(probe.iter().all(|p| !reference.contains(p)));
        for snr in [10.0, 0.0] {
            let count = |set: &[usize]| set.iter().filter(|&&i| ds.test[i].snr_db == snr).count() as i64;
            assert!((count(&probe) - count(&reference)).abs() <= 2);
        }
    }

    #[test]
    fn too_few_windows() {
        let (model, ds) = fixture();
        let opts = EvalOptions {
            min_windows_per_half: 1000,
        };
        assert!(matches!(
            evaluate_matrix(&model, &ds, &AuthPolicy::default(), &opts),
            Err(DacError::InsufficientSamples { .. })
        ));
        let empty = Dataset {
            window_len: 64,
            ..Default::default()
        };
        assert!(evaluate_matrix(&model, &empty, &AuthPolicy::default(), &EvalOptions::default()).is_err());
    }
}
