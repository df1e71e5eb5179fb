use serde::{Deserialize, Serialize};

use super::dac::{latent_errors, window_errors};
use super::message::DacMessage;
use crate::autoencoder::{fingerprint, CaeModel};
use crate::error::{invalid, DacError, Result};
use crate::kstest::{ks_two_sample, Edf, KsResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuthMode {
    /// Only `(D, p) == (0, 1)` authorizes.
    Exact,
    /// `D <= d_max` and `p >= p_min` authorizes.
    Statistical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuthPolicy {
    pub mode: AuthMode,
    pub d_max: f64,
    pub p_min: f64,
    pub min_windows: usize,
}

impl Default for AuthPolicy {
    fn default() -> Self {
        Self {
            mode: AuthMode::Statistical,
            d_max: 0.1,
            p_min: 0.9,
            min_windows: 200,
        }
    }
}

impl AuthPolicy {
    pub fn exact() -> Self {
        Self {
            mode: AuthMode::Exact,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.d_max) || !(0.0..=1.0).contains(&self.p_min) {
            return invalid("d_max and p_min must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn decide(&self, ks: &KsResult) -> Verdict {
        let ok = match self.mode {
            AuthMode::Exact => ks.is_exact_match(),
            AuthMode::Statistical => ks.statistic <= self.d_max && ks.p_value >= self.p_min,
        };
        if ok {
            Verdict::Authorized
        } else {
            Verdict::Intruder
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Authorized,
    Intruder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthDecision {
    pub verdict: Verdict,
    pub ks: KsResult,
    pub policy_used: AuthPolicy,
    /// Whether the sender's key fingerprint matched ours. Informational only.
    pub fingerprint_match: bool,
}

/// Recomputes the DAC of a received message with the receiver's key and
/// matches it against the transmitted one.
///
/// Raw bodies are windowed and reconstructed exactly as the sender did.
/// Latent bodies are checked through the decode, encode, decode round trip.
/// A fingerprint mismatch is recorded but the statistical match still decides.
pub fn authenticate(msg: &DacMessage, key: &CaeModel, policy: &AuthPolicy) -> Result<AuthDecision> {
    policy.validate()?;
    let w = key.window_len();
    if usize::from(msg.window_len) != w {
        return Err(DacError::IncompatibleKey(format!(
            "message window_len {} does not match key input width {w}",
            msg.window_len
        )));
    }
    let k = msg.dac_length();
    if k < policy.min_windows.max(1) {
        return Err(DacError::InsufficientSamples {
            required: policy.min_windows.max(1) * w,
            available: k * w,
        });
    }
    let local = if msg.confidential {
        let size = key.arch().latent_size();
        if msg.body.len() != k * size {
            return Err(DacError::IncompatibleKey(format!(
                "latent body of {} values does not hold {k} codes of {size}",
                msg.body.len()
            )));
        }
        let latents: Vec<Vec<f64>> = msg
            .body
            .chunks_exact(size)
            .map(|c| c.iter().map(|&v| f64::from(v)).collect())
            .collect();
        latent_errors(key, &latents)?
    } else {
        let windows: Vec<Vec<f64>> = msg
            .body
            .chunks_exact(2 * w)
            .map(|chunk| {
                let (i, q): (Vec<f64>, Vec<f64>) =
                    chunk.chunks_exact(2).map(|p| (f64::from(p[0]), f64::from(p[1]))).unzip();
                [i, q].concat()
            })
            .collect();
        window_errors(key, &windows)?
    };
    let ks = ks_two_sample(&Edf::new(msg.dac_values())?, &Edf::new(local)?);
    Ok(AuthDecision {
        verdict: policy.decide(&ks),
        ks,
        policy_used: *policy,
        fingerprint_match: msg.model_fingerprint == fingerprint(key),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::CaeArch;
    use crate::dac_protocol::{build_message, compute_dac, compute_dac_confidential};
    use crate::signal_sim::{apply_channel, generate_baseband, ChannelConfig};

    fn arch() -> CaeArch {
        CaeArch {
            window_len: 64,
            kernel: 5,
            channels: vec![4, 8],
            latent_channels: 2,
        }
    }

    fn policy() -> AuthPolicy {
        AuthPolicy {
            min_windows: 20,
            ..AuthPolicy::default()
        }
    }

    fn noisy_trace() -> crate::signal_sim::IqTrace {
        let t = generate_baseband(1, 64 * 60).unwrap();
        apply_channel(&t, &ChannelConfig::awgn(5.0), 3).unwrap()
    }

    #[test]
    fn legitimate_sender_is_exact_match() {
        let key = CaeModel::new(arch(), 11).unwrap();
        let t = noisy_trace();
        for confidential in [false, true] {
            let dac = if confidential {
                compute_dac_confidential(&key, &t, 64, 20).unwrap()
            } else {
                compute_dac(&key, &t, 64, 20).unwrap()
            };
            let msg = build_message(&t, &dac, confidential, &key).unwrap();
            let msg = DacMessage::parse(&msg.encode().unwrap()).unwrap();
            for p in [policy(), AuthPolicy { min_windows: 20, ..AuthPolicy::exact() }] {
                let d = authenticate(&msg, &key, &p).unwrap();
                assert_eq!((d.ks.statistic, d.ks.p_value), (0.0, 1.0));
                assert_eq!(d.verdict, Verdict::Authorized);
                assert!(d.fingerprint_match);
            }
        }
    }

    #[test]
    fn wrong_key_is_intruder() {
        let key = CaeModel::new(arch(), 11).unwrap();
        let forged = CaeModel::new(arch(), 12).unwrap();
        let t = noisy_trace();
        let dac = compute_dac(&forged, &t, 64, 20).unwrap();
        let msg = build_message(&t, &dac, false, &forged).unwrap();
        let d = authenticate(&msg, &key, &policy()).unwrap();
        assert_eq!(d.verdict, Verdict::Intruder);
        assert!(!d.fingerprint_match);
    }

    #[test]
    fn spoofed_fingerprint_does_not_help() {
        let key = CaeModel::new(arch(), 11).unwrap();
        let forged = CaeModel::new(arch(), 12).unwrap();
        let t = noisy_trace();
        let dac = compute_dac(&forged, &t, 64, 20).unwrap();
        let mut msg = build_message(&t, &dac, false, &forged).unwrap();
        msg.model_fingerprint = fingerprint(&key);
        let d = authenticate(&msg, &key, &policy()).unwrap();
        assert!(d.fingerprint_match);
        assert_eq!(d.verdict, Verdict::Intruder);
    }

    #[test]
    fn table_value_is_rejected() {
        let ks = KsResult {
            statistic: 0.198,
            p_value: 0.0,
            n: 500,
            m: 500,
        };
        assert_eq!(AuthPolicy::default().decide(&ks), Verdict::Intruder);
        let close = KsResult {
            statistic: 0.05,
            p_value: 0.95,
            ..ks
        };
        assert_eq!(AuthPolicy::default().decide(&close), Verdict::Authorized);
        assert_eq!(AuthPolicy::exact().decide(&close), Verdict::Intruder);
    }

    #[test]
    fn errors_surface() {
        let key = CaeModel::new(arch(), 11).unwrap();
        let t = noisy_trace();
        let dac = compute_dac(&key, &t, 64, 20).unwrap();
        let msg = build_message(&t, &dac, false, &key).unwrap();
        let strict = AuthPolicy {
            min_windows: 200,
            ..AuthPolicy::default()
        };
        assert!(matches!(
            authenticate(&msg, &key, &strict),
            Err(DacError::InsufficientSamples { .. })
        ));
        let other = CaeModel::new(CaeArch { window_len: 128, ..arch() }, 1).unwrap();
        assert!(matches!(authenticate(&msg, &other, &policy()), Err(DacError::IncompatibleKey(_))));
    }
}
