//! Key file codec.
//!
//! ```text
//! "DACW"                      magic
//! u16  version                currently 1
//! u32  window_len
//! u16  kernel
//! u16  latent_channels
//! u16  depth, then depth x u16 encoder widths
//! u16  layer count, then per layer:
//!      u8 transposed, u8 relu, u16 in, u16 out, u16 kernel,
//!      u16 stride, u16 padding, u16 output_padding
//! f32  weights then biases, layer by layer
//! [u8; 8] checksum            first 8 bytes of SHA-256 over everything above
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{CaeArch, CaeModel, ConvLayer};
use crate::error::{DacError, Result};

const MAGIC: &[u8; 4] = b"DACW";
const VERSION: u16 = 1;
const CHECKSUM_LEN: usize = 8;

fn checksum(bytes: &[u8]) -> [u8; CHECKSUM_LEN] {
    let digest = Sha256::digest(bytes);
    let mut out = [0u8; CHECKSUM_LEN];
    out.copy_from_slice(&digest[..CHECKSUM_LEN]);
    out
}

fn put_u16(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u16::try_from(v).map_err(|_| DacError::InvalidArgument(format!("{v} does not fit in u16")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serializes a model. Parameters are stored as `f32`.
pub fn write_weights(model: &CaeModel) -> Result<Vec<u8>> {
    let arch = model.arch();
    let mut buf = Vec::with_capacity(64 + 4 * model.parameter_count());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let w = u32::try_from(arch.window_len).map_err(|_| DacError::InvalidArgument("window_len too large".into()))?;
    buf.extend_from_slice(&w.to_le_bytes());
    put_u16(&mut buf, arch.kernel)?;
    put_u16(&mut buf, arch.latent_channels)?;
    put_u16(&mut buf, arch.depth())?;
    for &c in &arch.channels {
        put_u16(&mut buf, c)?;
    }
    let layers: Vec<&ConvLayer> = model.layers().collect();
    put_u16(&mut buf, layers.len())?;
    for l in &layers {
        buf.push(u8::from(l.transposed));
        buf.push(u8::from(l.relu));
        for v in [l.in_channels, l.out_channels, l.kernel, l.stride, l.padding, l.output_padding] {
            put_u16(&mut buf, v)?;
        }
    }
    for l in &layers {
        for &p in l.weight.iter().chain(&l.bias) {
            buf.extend_from_slice(&(p as f32).to_le_bytes());
        }
    }
    let sum = checksum(&buf);
    buf.extend_from_slice(&sum);
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| DacError::CorruptKey("file is truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<usize> {
        let b = self.take(2)?;
        Ok(usize::from(u16::from_le_bytes([b[0], b[1]])))
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f32(&mut self) -> Result<f64> {
        let b = self.take(4)?;
        Ok(f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
    }
}

/// Parses a key file. Framing and checksum failures are [`DacError::CorruptKey`];
/// a descriptor that does not describe a valid autoencoder is
/// [`DacError::IncompatibleKey`].
pub fn read_weights(bytes: &[u8]) -> Result<CaeModel> {
    if bytes.len() < MAGIC.len() + 2 + CHECKSUM_LEN {
        return Err(DacError::CorruptKey("file is truncated".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(DacError::CorruptKey("bad magic bytes".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if checksum(body) != tail {
        return Err(DacError::CorruptKey("checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u16()?;
    if version != usize::from(VERSION) {
        return Err(DacError::IncompatibleKey(format!("unsupported key version {version}")));
    }
    let window_len = r.u32()?;
    let kernel = r.u16()?;
    let latent_channels = r.u16()?;
    let depth = r.u16()?;
    let channels = (0..depth).map(|_| r.u16()).collect::<Result<Vec<_>>>()?;
    let arch = CaeArch {
        window_len,
        kernel,
        channels,
        latent_channels,
    };
    let mut model =
        CaeModel::zeros(arch).map_err(|e| DacError::IncompatibleKey(format!("invalid architecture: {e}")))?;

    let n_layers = r.u16()?;
    let expected: Vec<ConvLayer> = model.layers().cloned().collect();
    if n_layers != expected.len() {
        return Err(DacError::IncompatibleKey(format!(
            "descriptor lists {n_layers} layers, architecture has {}",
            expected.len()
        )));
    }
    for (i, l) in expected.iter().enumerate() {
        let transposed = r.u8()? != 0;
        let relu = r.u8()? != 0;
        let dims = [r.u16()?, r.u16()?, r.u16()?, r.u16()?, r.u16()?, r.u16()?];
        let want = [l.in_channels, l.out_channels, l.kernel, l.stride, l.padding, l.output_padding];
        if transposed != l.transposed || relu != l.relu || dims != want {
            return Err(DacError::IncompatibleKey(format!("layer {i} shape does not match its architecture")));
        }
    }
    for layer in model.layers_mut() {
        for p in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
            *p = r.f32()?;
            if !p.is_finite() {
                return Err(DacError::CorruptKey("non-finite weight".into()));
            }
        }
    }
    if r.pos != body.len() {
        return Err(DacError::CorruptKey("trailing bytes after weights".into()));
    }
    Ok(model)
}

pub fn save_weights(model: &CaeModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_weights(model)?)?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<CaeModel> {
    read_weights(&fs::read(path)?)
}

/// Loads a key and checks it was built for `arch`.
pub fn load_weights_for(path: impl AsRef<Path>, arch: &CaeArch) -> Result<CaeModel> {
    let model = load_weights(path)?;
    if model.arch() != arch {
        return Err(DacError::IncompatibleKey(format!(
            "key architecture {:?} differs from expected {:?}",
            model.arch(),
            arch
        )));
    }
    Ok(model)
}

/// 16-byte digest of the serialized key, used to label messages.
pub fn fingerprint(model: &CaeModel) -> [u8; 16] {
    let bytes = write_weights(model).unwrap_or_default();
    let digest = Sha256::digest(&bytes);
    let mut out = [0u8; 16];
    out.copy_from_slice(&digest[..16]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::{Tensor, TrainConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arch() -> CaeArch {
        CaeArch {
            window_len: 32,
            kernel: 3,
            channels: vec![4, 6],
            latent_channels: 2,
        }
    }

    fn input() -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        Tensor::new(vec![2, 32], (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = CaeModel::new(arch(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("key.dacw");
        save_weights(&m, &path).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(back, m);
        let x = input();
        assert_eq!(back.forward(&x).unwrap(), m.forward(&x).unwrap());
        assert_eq!(fingerprint(&back), fingerprint(&m));
        assert_eq!(load_weights_for(&path, &arch()).unwrap(), m);
    }

    #[test]
    fn trained_model_round_trips() {
        let mut m = CaeModel::new(arch(), 3).unwrap();
        let x = input();
        let ds = crate::signal_sim::Dataset {
            window_len: 32,
            train: vec![crate::signal_sim::Window {
                data: x.data().to_vec(),
                device_id: 0,
                snr_db: 0.0,
                frame: 0,
                position: 0,
            }],
            ..Default::default()
        };
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        crate::autoencoder::train(&mut m, &ds, &cfg).unwrap();
        let back = read_weights(&write_weights(&m).unwrap()).unwrap();
        assert_eq!(back.forward(&x).unwrap(), m.forward(&x).unwrap());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let bytes = write_weights(&CaeModel::new(arch(), 3).unwrap()).unwrap();
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(read_weights(&bytes[..cut]), Err(DacError::CorruptKey(_))), "cut {cut}");
        }
    }

    #[test]
    fn flipped_bit_is_corrupt() {
        let mut bytes = write_weights(&CaeModel::new(arch(), 3).unwrap()).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        assert!(matches!(read_weights(&bytes), Err(DacError::CorruptKey(_))));
        bytes[mid] ^= 0x10;
        bytes[0] = b'X';
        assert!(matches!(read_weights(&bytes), Err(DacError::CorruptKey(_))));
    }

    #[test]
    fn other_architecture_is_incompatible() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("key.dacw");
        let mut other = arch();
        other.channels = vec![4, 8];
        save_weights(&CaeModel::new(other, 1).unwrap(), &path).unwrap();
        assert!(matches!(load_weights_for(&path, &arch()), Err(DacError::IncompatibleKey(_))));
    }

    #[test]
    fn inconsistent_descriptor_is_incompatible() {
        let mut bytes = write_weights(&CaeModel::new(arch(), 3).unwrap()).unwrap();
        // The kernel field sits right after magic, version and window_len.
        bytes[10] = 4;
        let n = bytes.len();
        let sum = checksum(&bytes[..n - CHECKSUM_LEN]);
        bytes[n - CHECKSUM_LEN..].copy_from_slice(&sum);
        assert!(matches!(read_weights(&bytes), Err(DacError::IncompatibleKey(_))));
    }
}
