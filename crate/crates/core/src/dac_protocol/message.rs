//! Signal + DAC message and its wire format.
//!
//! ```text
//! "DACM"             magic
//! u16   version      currently 1
//! u32   payload_id
//! u16   window_len
//! u32   dac_length   number of DAC entries (= windows)
//! u8    flags        bit 0: body holds latent codes instead of raw IQ
//! [u8;16]            model fingerprint
//! f32[] body         interleaved I,Q samples, or concatenated latent codes
//! f32[dac_length]    DAC entries
//! [u8;8] checksum    first 8 bytes of SHA-256 over all preceding bytes
//! ```
//!
//! Little-endian throughout. The body length is implied by the total size.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dac::{encode_windows, Dac};
use crate::autoencoder::{fingerprint, CaeModel};
use crate::error::{invalid, DacError, Result};
use crate::signal_sim::IqTrace;

const MAGIC: &[u8; 4] = b"DACM";
pub const MESSAGE_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 2 + 4 + 1 + 16;
const CHECKSUM_LEN: usize = 8;
const FLAG_CONFIDENTIAL: u8 = 0x01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DacMessage {
    pub version: u16,
    pub payload_id: u32,
    pub window_len: u16,
    pub confidential: bool,
    pub model_fingerprint: [u8; 16],
    /// Raw interleaved IQ, or latent codes when `confidential`.
    pub body: Vec<f32>,
    pub dac: Vec<f32>,
}

impl DacMessage {
    pub fn dac_length(&self) -> usize {
        self.dac.len()
    }

    /// Raw body as complex samples. Empty for confidential messages.
    pub fn samples(&self) -> Vec<num_complex::Complex64> {
        if self.confidential {
            return Vec::new();
        }
        self.body
            .chunks_exact(2)
            .map(|p| num_complex::Complex64::new(f64::from(p[0]), f64::from(p[1])))
            .collect()
    }

    pub fn dac_values(&self) -> Vec<f64> {
        self.dac.iter().map(|&v| f64::from(v)).collect()
    }

    fn check_lengths(&self) -> Result<()> {
        let k = self.dac.len();
        if self.confidential {
            if k == 0 || !self.body.len().is_multiple_of(k) || self.body.is_empty() {
                return Err(DacError::Parse(format!(
                    "latent body of {} values does not split into {k} codes",
                    self.body.len()
                )));
            }
        } else if self.body.len() != 2 * k * usize::from(self.window_len) {
            return Err(DacError::Parse(format!(
                "raw body of {} values does not hold {k} windows of {} samples",
                self.body.len(),
                self.window_len
            )));
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.check_lengths()?;
        let dac_len = u32::try_from(self.dac.len()).map_err(|_| DacError::InvalidArgument("DAC too long".into()))?;
        let mut buf = Vec::with_capacity(HEADER_LEN + 4 * (self.body.len() + self.dac.len()) + CHECKSUM_LEN);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&self.version.to_le_bytes());
        buf.extend_from_slice(&self.payload_id.to_le_bytes());
        buf.extend_from_slice(&self.window_len.to_le_bytes());
        buf.extend_from_slice(&dac_len.to_le_bytes());
        buf.push(if self.confidential { FLAG_CONFIDENTIAL } else { 0 });
        buf.extend_from_slice(&self.model_fingerprint);
        for v in self.body.iter().chain(&self.dac) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest[..CHECKSUM_LEN]);
        Ok(buf)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
            return Err(DacError::Parse(format!("message of {} bytes is truncated", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(DacError::Parse("bad magic bytes".into()));
        }
        let (content, sum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(content)[..CHECKSUM_LEN] != *sum {
            return Err(DacError::Integrity("checksum mismatch".into()));
        }
        let u16_at = |i: usize| u16::from_le_bytes([content[i], content[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes([content[i], content[i + 1], content[i + 2], content[i + 3]]);
        let version = u16_at(4);
        if version != MESSAGE_VERSION {
            return Err(DacError::Parse(format!("unsupported message version {version}")));
        }
        let payload_id = u32_at(6);
        let window_len = u16_at(10);
        let dac_len = u32_at(12) as usize;
        let flags = content[16];
        if flags & !FLAG_CONFIDENTIAL != 0 {
            return Err(DacError::Parse(format!("unknown flag bits {flags:#04x}")));
        }
        let mut model_fingerprint = [0u8; 16];
        model_fingerprint.copy_from_slice(&content[17..HEADER_LEN]);

        let payload = &content[HEADER_LEN..];
        if payload.len() % 4 != 0 {
            return Err(DacError::Parse("payload is not a whole number of f32 values".into()));
        }
        let floats: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if dac_len > floats.len() {
            return Err(DacError::Parse(format!(
                "declared DAC length {dac_len} exceeds the {} values present",
                floats.len()
            )));
        }
        let (body, dac) = floats.split_at(floats.len() - dac_len);
        if dac.iter().chain(body).any(|v| !v.is_finite()) {
            return Err(DacError::Parse("message holds non-finite values".into()));
        }
        let msg = Self {
            version,
            payload_id,
            window_len,
            confidential: flags & FLAG_CONFIDENTIAL != 0,
            model_fingerprint,
            body: body.to_vec(),
            dac: dac.to_vec(),
        };
        msg.check_lengths()?;
        Ok(msg)
    }
}

/// Frames `trace` with its DAC. A confidential message carries the latent
/// code of every window instead of the samples; its DAC must then come from
/// [`compute_dac_confidential`](super::compute_dac_confidential).
pub fn build_message(trace: &IqTrace, dac: &Dac, confidential: bool, model: &CaeModel) -> Result<DacMessage> {
    let w = model.window_len();
    if dac.window_len != w {
        return invalid(format!("DAC window_len {} does not match the key's {w}", dac.window_len));
    }
    let window_len = u16::try_from(w).map_err(|_| DacError::InvalidArgument("window_len exceeds u16".into()))?;
    let k = dac.len();
    if trace.sample_count() < k * w {
        return invalid(format!(
            "trace of {} samples is shorter than {k} windows of {w}",
            trace.sample_count()
        ));
    }
    let body: Vec<f32> = if confidential {
        let latents = encode_windows(model, trace, w)?;
        latents[..k].iter().flatten().map(|&v| v as f32).collect()
    } else {
        trace.samples[..k * w].iter().flat_map(|s| [s.re as f32, s.im as f32]).collect()
    };
    Ok(DacMessage {
        version: MESSAGE_VERSION,
        payload_id: trace.payload_id,
        window_len,
        confidential,
        model_fingerprint: fingerprint(model),
        body,
        dac: dac.errors.iter().map(|&e| e as f32).collect(),
    })
}
