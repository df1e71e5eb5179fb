use serde::{Deserialize, Serialize};

use crate::autoencoder::{fingerprint, mse, normalize_window, CaeModel, Tensor};
use crate::error::{invalid, DacError, Result};
use crate::signal_sim::IqTrace;

/// Device authentication code: per-window reconstruction errors in window
/// order. Its empirical distribution is the device fingerprint.
///
/// Entries are rounded to `f32`, the precision they travel with, so a DAC
/// recomputed by a receiver compares bit-for-bit with the one it was sent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dac {
    pub errors: Vec<f64>,
    pub window_len: usize,
    pub model_fingerprint: [u8; 16],
}

impl Dac {
    pub fn new(errors: Vec<f64>, window_len: usize, model_fingerprint: [u8; 16]) -> Result<Self> {
        if let Some(bad) = errors.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return invalid(format!("DAC entry {bad} is not a finite non-negative number"));
        }
        Ok(Self {
            errors,
            window_len,
            model_fingerprint,
        })
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }
}

fn round_f32(v: f64) -> f64 {
    f64::from(v as f32)
}

fn check_width(model: &CaeModel, window_len: usize) -> Result<()> {
    if model.window_len() != window_len {
        return invalid(format!(
            "window_len {window_len} does not match the key's input width {}",
            model.window_len()
        ));
    }
    Ok(())
}

fn windows_of(trace: &IqTrace, window_len: usize, min_windows: usize) -> Result<Vec<Vec<f64>>> {
    let windows = trace.windows(window_len);
    if windows.len() < min_windows.max(1) {
        return Err(DacError::InsufficientSamples {
            required: min_windows.max(1) * window_len,
            available: trace.sample_count(),
        });
    }
    Ok(windows)
}

/// Reconstruction error of each `2 x W` window after per-window normalization.
pub fn window_errors(model: &CaeModel, windows: &[Vec<f64>]) -> Result<Vec<f64>> {
    windows
        .iter()
        .map(|w| {
            let x = normalize_window(w, model.window_len())?;
            Ok(round_f32(model.loss(&x)?))
        })
        .collect()
}

/// Splits `trace` into non-overlapping windows and records each window's
/// reconstruction error under `model`.
pub fn compute_dac(model: &CaeModel, trace: &IqTrace, window_len: usize, min_windows: usize) -> Result<Dac> {
    check_width(model, window_len)?;
    let windows = windows_of(trace, window_len, min_windows)?;
    Dac::new(window_errors(model, &windows)?, window_len, fingerprint(model))
}

/// Latent code of every window, rounded to `f32`.
pub fn encode_windows(model: &CaeModel, trace: &IqTrace, window_len: usize) -> Result<Vec<Vec<f64>>> {
    check_width(model, window_len)?;
    trace
        .windows(window_len)
        .iter()
        .map(|w| {
            let z = model.encode(&normalize_window(w, window_len)?)?;
            Ok(z.into_data().into_iter().map(round_f32).collect())
        })
        .collect()
}

/// Error of the decode, encode, decode round trip for each latent code: the
/// check a receiver can run when only latents were transmitted.
pub fn latent_errors(model: &CaeModel, latents: &[Vec<f64>]) -> Result<Vec<f64>> {
    let arch = model.arch();
    latents
        .iter()
        .map(|z| {
            let z = Tensor::new(vec![arch.latent_channels, arch.latent_len()], z.clone())?;
            let decoded = model.decode(&z)?;
            let (again, _) = model.forward(&decoded)?;
            Ok(round_f32(mse(decoded.data(), again.data())))
        })
        .collect()
}

/// DAC for confidential transmission: computed from the latent codes that
/// will be sent, so the receiver can reproduce it without the raw signal.
pub fn compute_dac_confidential(
    model: &CaeModel,
    trace: &IqTrace,
    window_len: usize,
    min_windows: usize,
) -> Result<Dac> {
    check_width(model, window_len)?;
    windows_of(trace, window_len, min_windows)?;
    let latents = encode_windows(model, trace, window_len)?;
    Dac::new(latent_errors(model, &latents)?, window_len, fingerprint(model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::CaeArch;
    use crate::kstest::{ks_two_sample, Edf};
    use crate::signal_sim::generate_baseband;

    fn arch() -> CaeArch {
        CaeArch {
            window_len: 64,
            kernel: 5,
            channels: vec![4, 8],
            latent_channels: 2,
        }
    }

    #[test]
    fn length_is_window_count() {
        let m = CaeModel::new(arch(), 1).unwrap();
        for k in [1usize, 3, 7] {
            let t = generate_baseband(2, 64 * k).unwrap();
            assert_eq!(compute_dac(&m, &t, 64, 1).unwrap().len(), k);
        }
        let t = generate_baseband(2, 64 * 3 + 63).unwrap();
        assert_eq!(compute_dac(&m, &t, 64, 1).unwrap().len(), 3);
    }

    #[test]
    fn deterministic() {
        let m = CaeModel::new(arch(), 1).unwrap();
        let t = generate_baseband(2, 64 * 10).unwrap();
        assert_eq!(compute_dac(&m, &t, 64, 5).unwrap(), compute_dac(&m, &t, 64, 5).unwrap());
    }

    #[test]
    fn too_short_reports_required_length() {
        let m = CaeModel::new(arch(), 1).unwrap();
        let t = generate_baseband(2, 64 * 10).unwrap();
        match compute_dac(&m, &t, 64, 11) {
            Err(DacError::InsufficientSamples { required, available }) => {
                assert_eq!(required, 64 * 11);
                assert_eq!(available, 640);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(compute_dac(&m, &t, 32, 1).is_err());
    }

    #[test]
    fn different_keys_give_different_distributions() {
        let t = generate_baseband(2, 64 * 40).unwrap();
        let a = compute_dac(&CaeModel::new(arch(), 1).unwrap(), &t, 64, 1).unwrap();
        let b = compute_dac(&CaeModel::new(arch(), 2).unwrap(), &t, 64, 1).unwrap();
        let ks = ks_two_sample(&Edf::from_slice(&a.errors).unwrap(), &Edf::from_slice(&b.errors).unwrap());
        assert!(ks.statistic > 0.0);
        assert_ne!(a.model_fingerprint, b.model_fingerprint);
    }

    #[test]
    fn confidential_dac_is_reproducible_from_latents() {
        let m = CaeModel::new(arch(), 4).unwrap();
        let t = generate_baseband(3, 64 * 6).unwrap();
        let dac = compute_dac_confidential(&m, &t, 64, 1).unwrap();
        let latents = encode_windows(&m, &t, 64).unwrap();
        assert_eq!(latent_errors(&m, &latents).unwrap(), dac.errors);
        assert_eq!(latents[0].len(), arch().latent_size());
    }

    #[test]
    fn rejects_negative_entries() {
        assert!(Dac::new(vec![0.1, -0.1], 64, [0; 16]).is_err());
        assert!(Dac::new(vec![f64::NAN], 64, [0; 16]).is_err());
    }
}
