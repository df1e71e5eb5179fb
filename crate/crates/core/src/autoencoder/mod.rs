//! Undercomplete 1-D convolutional autoencoder over `2 x W` IQ windows.
//!
//! The encoder halves the time axis at every block (strided convolution plus
//! rectifier), then a pointwise projection produces the latent code of
//! `latent_channels x W / 2^depth` values. The decoder mirrors the encoder
//! with transposed convolutions and ends in a linear two-channel layer.
//!
//! The trained weights double as the shared secret key of the
//! authentication protocol, so everything here is deterministic: the same
//! seed and data always give the same bits.

mod conv;
mod train;
mod weights;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use conv::ConvLayer;
pub use train::{train, EpochLoss, Optimizer, TrainConfig, TrainReport};
pub use weights::{fingerprint, load_weights, load_weights_for, read_weights, save_weights, write_weights};

use crate::error::{invalid, DacError, Result};

/// Dense row-major tensor of finite values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return invalid(format!("tensor shape {shape:?} must be non-empty and positive"));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return invalid(format!(
                "tensor shape {shape:?} needs {expected} values, got {}",
                data.len()
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return invalid("tensor contains non-finite values");
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// Normalizes a `2 x W` window (I row then Q row) to zero mean and unit
/// variance per channel. A constant channel is only centred.
pub fn normalize_window(data: &[f64], window_len: usize) -> Result<Tensor> {
    if data.len() != 2 * window_len || window_len == 0 {
        return invalid(format!(
            "window of {} values does not match 2 x {window_len}",
            data.len()
        ));
    }
    let mut out = data.to_vec();
    for row in out.chunks_exact_mut(window_len) {
        let mean = row.iter().sum::<f64>() / window_len as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / window_len as f64;
        let scale = if var > 0.0 { var.sqrt().recip() } else { 1.0 };
        row.iter_mut().for_each(|v| *v = (*v - mean) * scale);
    }
    Tensor::new(vec![2, window_len], out)
}

/// Mean squared difference between two equally shaped tensors.
pub fn reconstruction_error(x: &Tensor, recon: &Tensor) -> Result<f64> {
    if x.shape != recon.shape {
        return invalid(format!("shape mismatch: {:?} vs {:?}", x.shape, recon.shape));
    }
    Ok(mse(&x.data, &recon.data))
}

pub(crate) fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Shape hyperparameters of a [`CaeModel`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaeArch {
    pub window_len: usize,
    /// Odd kernel width shared by every strided layer.
    pub kernel: usize,
    /// Encoder widths, one stride-2 block each.
    pub channels: Vec<usize>,
    pub latent_channels: usize,
}

impl Default for CaeArch {
    /// Three blocks of 16/32/64 channels with kernel 9 on 1024-sample
    /// windows: a 2 x 128 latent code, one eighth of the input size.
    fn default() -> Self {
        Self {
            window_len: 1024,
            kernel: 9,
            channels: vec![16, 32, 64],
            latent_channels: 2,
        }
    }
}

impl CaeArch {
    pub fn for_window(window_len: usize) -> Self {
        Self {
            window_len,
            ..Self::default()
        }
    }

    pub fn depth(&self) -> usize {
        self.channels.len()
    }

    pub fn latent_len(&self) -> usize {
        self.window_len >> self.depth()
    }

    /// Number of values in one latent code.
    pub fn latent_size(&self) -> usize {
        self.latent_channels * self.latent_len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.is_multiple_of(2) {
            return invalid("kernel width must be odd");
        }
        if self.channels.is_empty() || self.channels.contains(&0) || self.latent_channels == 0 {
            return invalid("channel widths must be positive");
        }
        if self.depth() >= usize::BITS as usize || !self.window_len.is_multiple_of(1 << self.depth()) || self.latent_len() == 0 {
            return invalid(format!(
                "window_len {} must be a positive multiple of 2^{}",
                self.window_len,
                self.depth()
            ));
        }
        if self.latent_size() >= 2 * self.window_len {
            return invalid(format!(
                "latent size {} is not smaller than the input size {}",
                self.latent_size(),
                2 * self.window_len
            ));
        }
        Ok(())
    }

    /// Zero-initialized layers in execution order: encoder then decoder.
    fn layers(&self) -> (Vec<ConvLayer>, Vec<ConvLayer>) {
        let (k, pad) = (self.kernel, self.kernel / 2);
        let mut encoder = Vec::with_capacity(self.depth() + 1);
        let mut prev = 2;
        for &c in &self.channels {
            encoder.push(ConvLayer::zeros(prev, c, k, 2, pad, 0, false, true));
            prev = c;
        }
        encoder.push(ConvLayer::zeros(prev, self.latent_channels, 1, 1, 0, 0, false, false));

        let mut decoder = Vec::with_capacity(self.depth() + 1);
        decoder.push(ConvLayer::zeros(self.latent_channels, prev, 1, 1, 0, 0, true, true));
        let widths: Vec<usize> = std::iter::once(2).chain(self.channels.iter().copied()).collect();
        for i in (0..self.depth()).rev() {
            let last = i == 0;
            decoder.push(ConvLayer::zeros(widths[i + 1], widths[i], k, 2, pad, 1, true, !last));
        }
        (encoder, decoder)
    }
}

/// Autoencoder weights. The encoder maps a window to its latent code, the
/// decoder maps the code back to a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaeModel {
    arch: CaeArch,
    encoder: Vec<ConvLayer>,
    decoder: Vec<ConvLayer>,
}

/// Parameter gradients, one entry per layer in execution order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &CaeModel) -> Self {
        Self {
            layers: model
                .layers()
                .map(|l| LayerGradient {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Every gradient value in parameter order.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias).copied())
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|g| *g *= factor);
        }
    }
}

/// Forward activations kept for backpropagation.
struct Trace {
    caches: Vec<conv::LayerCache>,
    recon: Vec<f64>,
    latent: Vec<f64>,
}

impl CaeModel {
    /// All weights and biases zero.
    pub fn zeros(arch: CaeArch) -> Result<Self> {
        arch.validate()?;
        let (encoder, decoder) = arch.layers();
        Ok(Self { arch, encoder, decoder })
    }

    /// Fan-in scaled uniform initialization, biases zero. Weights are rounded
    /// to `f32` so that a freshly initialized key survives a save/load cycle.
    pub fn new(arch: CaeArch, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in model.layers_mut() {
            let gain = if layer.relu { 6.0 } else { 3.0 };
            let bound = (gain / layer.fan_in() as f64).sqrt();
            for w in &mut layer.weight {
                *w = f64::from(rng.gen_range(-bound..bound) as f32);
            }
        }
        Ok(model)
    }

    pub fn arch(&self) -> &CaeArch {
        &self.arch
    }

    pub fn window_len(&self) -> usize {
        self.arch.window_len
    }

    pub fn layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.encoder.iter().chain(&self.decoder)
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut ConvLayer> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().map(ConvLayer::parameter_count).sum()
    }

    /// Every parameter in order: per layer, weights then biases.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers().flat_map(|l| l.weight.iter().chain(&l.bias).copied()).collect()
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return invalid(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                values.len()
            ));
        }
        let mut it = values.iter().copied();
        for layer in self.layers_mut() {
            for p in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *p = it.next().unwrap_or_default();
            }
        }
        Ok(())
    }

    /// Rounds every parameter to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for layer in self.layers_mut() {
            for p in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *p = f64::from(*p as f32);
            }
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape != [2, self.arch.window_len] {
            return invalid(format!(
                "input shape {:?} does not match model input [2, {}]",
                x.shape, self.arch.window_len
            ));
        }
        Ok(())
    }

    fn check_latent(&self, z: &Tensor) -> Result<()> {
        if z.shape != [self.arch.latent_channels, self.arch.latent_len()] {
            return invalid(format!(
                "latent shape {:?} does not match [{}, {}]",
                z.shape,
                self.arch.latent_channels,
                self.arch.latent_len()
            ));
        }
        Ok(())
    }

    fn run(&self, x: &[f64]) -> Trace {
        let mut caches = Vec::with_capacity(self.encoder.len() + self.decoder.len());
        let mut h = x.to_vec();
        let mut len = self.arch.window_len;
        let mut latent = Vec::new();
        for (i, layer) in self.layers().enumerate() {
            let (out, cache) = layer.forward(&h, len);
            len = layer.out_len(len);
            caches.push(cache);
            h = out;
            if i + 1 == self.encoder.len() {
                latent = h.clone();
            }
        }
        Trace { caches, recon: h, latent }
    }

    /// Reconstruction and latent code for one window.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_input(x)?;
        let t = self.run(&x.data);
        Ok((
            Tensor {
                shape: x.shape.clone(),
                data: t.recon,
            },
            Tensor {
                shape: vec![self.arch.latent_channels, self.arch.latent_len()],
                data: t.latent,
            },
        ))
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.data.clone();
        let mut len = self.arch.window_len;
        for layer in &self.encoder {
            h = layer.forward(&h, len).0;
            len = layer.out_len(len);
        }
        Ok(Tensor {
            shape: vec![self.arch.latent_channels, len],
            data: h,
        })
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.check_latent(z)?;
        let mut h = z.data.clone();
        let mut len = self.arch.latent_len();
        for layer in &self.decoder {
            h = layer.forward(&h, len).0;
            len = layer.out_len(len);
        }
        Ok(Tensor {
            shape: vec![2, len],
            data: h,
        })
    }

    /// Mean squared reconstruction error of one window.
    pub fn loss(&self, x: &Tensor) -> Result<f64> {
        let (recon, _) = self.forward(x)?;
        reconstruction_error(x, &recon)
    }

    /// Gradient of `reconstruction_error(x, forward(x))` with respect to every
    /// parameter.
    pub fn backward(&self, x: &Tensor) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.accumulate_gradient(x, &mut grads)?;
        Ok(grads)
    }

    /// Adds this window's loss gradient to `grads` and returns its loss.
    pub fn accumulate_gradient(&self, x: &Tensor, grads: &mut Gradients) -> Result<f64> {
        self.check_input(x)?;
        if grads.layers.len() != self.encoder.len() + self.decoder.len() {
            return Err(DacError::InvalidArgument("gradient buffer does not match model".into()));
        }
        let trace = self.run(&x.data);
        let n = x.data.len() as f64;
        let loss = mse(&trace.recon, &x.data);
        let mut g: Vec<f64> = trace.recon.iter().zip(&x.data).map(|(r, v)| 2.0 * (r - v) / n).collect();
        let layers: Vec<&ConvLayer> = self.layers().collect();
        for (i, layer) in layers.iter().enumerate().rev() {
            let lg = &mut grads.layers[i];
            g = layer.backward(&trace.caches[i], g, &mut lg.weight, &mut lg.bias, i > 0);
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_arch() -> CaeArch {
        CaeArch {
            window_len: 16,
            kernel: 3,
            channels: vec![3, 4, 5],
            latent_channels: 2,
        }
    }

    fn random_input(seed: u64, w: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![2, w], (0..2 * w).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
    }

    #[test]
    fn default_arch_shapes() {
        let arch = CaeArch::default();
        arch.validate().unwrap();
        assert_eq!(arch.latent_size(), 256);
        let m = CaeModel::new(arch, 1).unwrap();
        let x = random_input(1, 1024);
        let (recon, latent) = m.forward(&x).unwrap();
        assert_eq!(recon.shape(), &[2, 1024]);
        assert_eq!(latent.shape(), &[2, 128]);
        assert_eq!(m.encode(&x).unwrap(), latent);
        assert_eq!(m.decode(&latent).unwrap(), recon);
    }

    #[test]
    fn arch_validation() {
        let mut a = tiny_arch();
        a.kernel = 4;
        assert!(a.validate().is_err());
        let mut a = tiny_arch();
        a.window_len = 20;
        assert!(a.validate().is_err());
        let mut a = tiny_arch();
        a.latent_channels = 16;
        assert!(a.validate().is_err(), "overcomplete latent must be rejected");
    }

    #[test]
    fn zero_model_zero_input() {
        let m = CaeModel::zeros(tiny_arch()).unwrap();
        let x = Tensor::zeros(vec![2, 16]);
        let (recon, latent) = m.forward(&x).unwrap();
        assert!(recon.data().iter().all(|&v| v == 0.0));
        assert!(latent.data().iter().all(|&v| v == 0.0));
        let g = m.backward(&x).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn forward_is_deterministic() {
        let m = CaeModel::new(tiny_arch(), 4).unwrap();
        let x = random_input(2, 16);
        assert_eq!(m.forward(&x).unwrap(), m.forward(&x).unwrap());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let m = CaeModel::new(tiny_arch(), 4).unwrap();
        let bad = Tensor::zeros(vec![2, 32]);
        assert!(m.forward(&bad).is_err());
        assert!(m.backward(&bad).is_err());
        assert!(m.decode(&Tensor::zeros(vec![2, 3])).is_err());
        assert!(reconstruction_error(&Tensor::zeros(vec![2, 4]), &Tensor::zeros(vec![4, 2])).is_err());
    }

    #[test]
    fn reconstruction_error_values() {
        let ones = Tensor::new(vec![2, 8], vec![1.0; 16]).unwrap();
        let zeros = Tensor::zeros(vec![2, 8]);
        assert_eq!(reconstruction_error(&ones, &ones).unwrap(), 0.0);
        assert_eq!(reconstruction_error(&ones, &zeros).unwrap(), 1.0);
        let (a, b) = (random_input(7, 64), random_input(8, 64));
        let mut oracle = 0.0;
        for i in 0..a.data().len() {
            let d = a.data()[i] - b.data()[i];
            oracle += d * d;
        }
        oracle /= a.data().len() as f64;
        assert!((reconstruction_error(&a, &b).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn gradient_shapes_mirror_weights() {
        let m = CaeModel::new(tiny_arch(), 3).unwrap();
        let g = m.backward(&random_input(3, 16)).unwrap();
        for (lg, layer) in g.layers.iter().zip(m.layers()) {
            assert_eq!(lg.weight.len(), layer.weight.len());
            assert_eq!(lg.bias.len(), layer.bias.len());
        }
        assert!(g.values().all(f64::is_finite));
    }

    #[test]
    fn tensor_rejects_bad_data() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn normalized_window_moments() {
        let raw: Vec<f64> = (0..128).map(|i| (i as f64 * 0.37).sin() * 3.0 + 0.5).collect();
        let t = normalize_window(&raw, 64).unwrap();
        for row in t.data().chunks(64) {
            let mean = row.iter().sum::<f64>() / 64.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
        let flat = normalize_window(&[2.0; 128], 64).unwrap();
        assert!(flat.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bounded_weights_stay_finite() {
        let mut m = CaeModel::new(CaeArch::default(), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params: Vec<f64> = (0..m.parameter_count()).map(|_| rng.gen_range(-10.0..10.0)).collect();
        m.set_parameters(&params).unwrap();
        let x = random_input(5, 1024);
        let (recon, latent) = m.forward(&x).unwrap();
        assert!(recon.data().iter().chain(latent.data()).all(|v| v.is_finite()));
        assert!(m.loss(&x).unwrap().is_finite());
        assert!(m.backward(&x).unwrap().values().all(f64::is_finite));
    }

    #[test]
    fn gradients_match_central_differences() {
        let h = 1e-5;
        for seed in 0..5 {
            // Zero biases put dead units exactly on the ReLU kink.
            let mut m = CaeModel::new(tiny_arch(), seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for l in m.layers_mut() {
                l.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
            }
            let x = random_input(100 + seed, 16);
            let analytic: Vec<f64> = m.backward(&x).unwrap().values().collect();
            let theta = m.parameters();
            let mut worst = 0.0f64;
            for (k, &a) in analytic.iter().enumerate() {
                let mut p = theta.clone();
                p[k] = theta[k] + h;
                m.set_parameters(&p).unwrap();
                let up = m.loss(&x).unwrap();
                p[k] = theta[k] - h;
                m.set_parameters(&p).unwrap();
                let down = m.loss(&x).unwrap();
                let n = (up - down) / (2.0 * h);
                let r = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
                worst = worst.max(r);
            }
            m.set_parameters(&theta).unwrap();
            assert!(worst < 1e-4, "seed {seed}: relative error {worst:e}");
        }
    }
}
