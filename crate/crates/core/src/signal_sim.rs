//! Baseband generation, per-device transmitter impairments, channel effects
//! and dataset assembly.
//!
//! Every device transmits the same offset-QPSK waveform. What makes a device
//! recognisable is its [`DeviceProfile`]: a fixed set of analog front-end
//! imperfections applied on top of the common waveform. The channel then adds
//! fading and thermal noise that vary from frame to frame.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::seed::derive_seed;

/// Shortest trace `generate_baseband` will produce.
pub const MIN_TRACE_SAMPLES: usize = 64;
/// Shortest window the dataset builder accepts.
pub const MIN_WINDOW_LEN: usize = 64;
/// Default model input width.
pub const DEFAULT_WINDOW_LEN: usize = 1024;

/// Simulated capture rate: two samples per 2 Mchip/s chip.
pub const SAMPLE_RATE_HZ: f64 = 4.0e6;
/// Carrier used to convert ppm offsets into a per-sample rotation.
pub const CARRIER_HZ: f64 = 2.405e9;
/// Samples per half-sine pulse on each rail.
const PULSE_SAMPLES: usize = 4;

/// Fraction of authorized windows assigned to training and validation.
pub const TRAIN_FRACTION: f64 = 0.90;
pub const VALIDATION_FRACTION: f64 = 0.05;

/// Maximum normalized Doppler rate accepted by [`ChannelConfig`].
pub const MAX_DOPPLER: f64 = 0.01;

/// A finite run of complex baseband samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqTrace {
    pub samples: Vec<Complex64>,
    pub device_id: Option<u32>,
    pub snr_db: f64,
    pub payload_id: u32,
}

impl IqTrace {
    pub fn new(samples: Vec<Complex64>, payload_id: u32) -> Result<Self> {
        if samples.is_empty() {
            return invalid("trace must contain at least one sample");
        }
        if samples.iter().any(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return invalid("trace contains non-finite samples");
        }
        Ok(Self {
            samples,
            device_id: None,
            snr_db: f64::INFINITY,
            payload_id,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    pub fn mean_power(&self) -> f64 {
        mean_power(&self.samples)
    }

    /// Rescales to unit mean power. A silent trace is left untouched.
    pub fn normalized(mut self) -> Self {
        normalize_power(&mut self.samples);
        self
    }

    /// Splits into consecutive non-overlapping windows of `2 x window_len`
    /// values (I row then Q row). A trailing partial window is dropped.
    /// Values are rounded to `f32`, the precision used on disk and on the wire.
    pub fn windows(&self, window_len: usize) -> Vec<Vec<f64>> {
        self.samples
            .chunks_exact(window_len)
            .map(|chunk| {
                let mut w = Vec::with_capacity(2 * window_len);
                w.extend(chunk.iter().map(|s| f64::from(s.re as f32)));
                w.extend(chunk.iter().map(|s| f64::from(s.im as f32)));
                w
            })
            .collect()
    }
}

fn mean_power(samples: &[Complex64]) -> f64 {
    samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / samples.len() as f64
}

fn normalize_power(samples: &mut [Complex64]) {
    let p = mean_power(samples);
    if p > 0.0 && p.is_finite() {
        let g = p.sqrt().recip();
        samples.iter_mut().for_each(|s| *s *= g);
    }
}

/// Deterministic half-sine shaped offset-QPSK burst.
///
/// Bits come from a ChaCha stream seeded by `payload_id`; even bits drive the
/// I rail, odd bits the Q rail, and the Q rail lags by half a pulse.
pub fn generate_baseband(payload_id: u32, n_samples: usize) -> Result<IqTrace> {
    if n_samples < MIN_TRACE_SAMPLES {
        return invalid(format!(
            "baseband needs at least {MIN_TRACE_SAMPLES} samples, got {n_samples}"
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(u64::from(payload_id), &[0xBA5E]));
    let offset = PULSE_SAMPLES / 2;
    let n_symbols = n_samples / PULSE_SAMPLES + 2;
    let bits: Vec<(f64, f64)> = (0..n_symbols)
        .map(|_| {
            let i = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let q = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            (i, q)
        })
        .collect();
    let pulse = |t: usize| (PI * (t as f64 + 0.5) / PULSE_SAMPLES as f64).sin();
    let samples = (0..n_samples)
        .map(|n| {
            let i = bits[n / PULSE_SAMPLES].0 * pulse(n % PULSE_SAMPLES);
            let shifted = n + PULSE_SAMPLES - offset;
            let q = bits[shifted / PULSE_SAMPLES].1 * pulse(shifted % PULSE_SAMPLES);
            Complex64::new(i, q)
        })
        .collect();
    let mut trace = IqTrace::new(samples, payload_id)?;
    normalize_power(&mut trace.samples);
    Ok(trace)
}

/// Per-device analog front-end imperfections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device_id: u32,
    /// Q-rail amplitude relative to I.
    pub iq_gain_imbalance: f64,
    /// Quadrature skew in radians.
    pub iq_phase_skew: f64,
    pub dc_offset_i: f64,
    pub dc_offset_q: f64,
    pub cfo_ppm: f64,
    /// Standard deviation of the per-sample phase random walk, radians.
    pub phase_noise_std: f64,
    /// Coefficient of the `x |x|^2` amplifier term.
    pub pa_coeff_3rd: f64,
}

// Half-widths of the uniform draws at spread = 1. Each stays inside the
// corresponding validity bound.
const GAIN_WIDTH: f64 = 0.4;
const SKEW_WIDTH: f64 = 0.19;
const DC_WIDTH: f64 = 0.09;
const CFO_WIDTH_PPM: f64 = 95.0;
const PHASE_NOISE_MAX: f64 = 0.05;
const PA_WIDTH: f64 = 0.29;

impl DeviceProfile {
    /// A perfect transmitter.
    pub fn nominal(device_id: u32) -> Self {
        Self {
            device_id,
            iq_gain_imbalance: 1.0,
            iq_phase_skew: 0.0,
            dc_offset_i: 0.0,
            dc_offset_q: 0.0,
            cfo_ppm: 0.0,
            phase_noise_std: 0.0,
            pa_coeff_3rd: 0.0,
        }
    }

    pub fn is_nominal(&self) -> bool {
        *self == Self::nominal(self.device_id)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.iq_gain_imbalance > 0.5
            && self.iq_gain_imbalance < 2.0
            && self.iq_phase_skew.abs() < 0.2
            && self.dc_offset_i.abs() < 0.1
            && self.dc_offset_q.abs() < 0.1
            && self.cfo_ppm.abs() < 100.0
            && self.phase_noise_std >= 0.0
            && self.phase_noise_std.is_finite()
            && self.pa_coeff_3rd.abs() < 0.3;
        if ok {
            Ok(())
        } else {
            invalid(format!("device profile out of range: {self:?}"))
        }
    }

    /// CFO as a rotation in radians per sample.
    pub fn cfo_rad_per_sample(&self) -> f64 {
        2.0 * PI * self.cfo_ppm * 1e-6 * CARRIER_HZ / SAMPLE_RATE_HZ
    }
}

/// Draws a manufacturing perturbation. Every field is independent and
/// uniformly distributed around its nominal value with a half-width
/// proportional to `spread`.
pub fn sample_device_profile(seed: u64, spread: f64) -> Result<DeviceProfile> {
    sample_device_profile_for(0, seed, spread)
}

/// Like [`sample_device_profile`] but stamps the result with `device_id`.
pub fn sample_device_profile_for(device_id: u32, seed: u64, spread: f64) -> Result<DeviceProfile> {
    if !(spread > 0.0 && spread <= 1.0) {
        return invalid(format!("spread must lie in (0, 1], got {spread}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sym = |width: f64| rng.gen_range(-1.0..1.0) * width * spread;
    let profile = DeviceProfile {
        device_id,
        iq_gain_imbalance: 1.0 + sym(GAIN_WIDTH),
        iq_phase_skew: sym(SKEW_WIDTH),
        dc_offset_i: sym(DC_WIDTH),
        dc_offset_q: sym(DC_WIDTH),
        cfo_ppm: sym(CFO_WIDTH_PPM),
        phase_noise_std: sym(PHASE_NOISE_MAX).abs(),
        pa_coeff_3rd: sym(PA_WIDTH),
    };
    profile.validate()?;
    Ok(profile)
}

/// Applies the transmitter impairments without the final power normalization.
///
/// Order: DC offset, IQ gain/phase imbalance, third-order amplifier term,
/// CFO rotation, cumulative phase-noise walk. The phase-noise walk is seeded
/// from the device id so a device always produces the same walk.
pub fn apply_device_raw(trace: &IqTrace, profile: &DeviceProfile) -> Vec<Complex64> {
    let (sin_skew, cos_skew) = profile.iq_phase_skew.sin_cos();
    let g = profile.iq_gain_imbalance;
    let dc = Complex64::new(profile.dc_offset_i, profile.dc_offset_q);
    let cfo = profile.cfo_rad_per_sample();
    let mut walk_rng = ChaCha8Rng::seed_from_u64(derive_seed(u64::from(profile.device_id), &[0x9A5E]));
    let mut walk = 0.0f64;
    trace
        .samples
        .iter()
        .enumerate()
        .map(|(n, &s)| {
            let x = s + dc;
            let x = Complex64::new(x.re, g * (sin_skew * x.re + cos_skew * x.im));
            let x = x + x * x.norm_sqr() * profile.pa_coeff_3rd;
            if profile.phase_noise_std > 0.0 && n > 0 {
                let step: f64 = StandardNormal.sample(&mut walk_rng);
                walk += profile.phase_noise_std * step;
            }
            let phase = cfo * n as f64 + walk;
            if phase == 0.0 {
                x
            } else {
                x * Complex64::from_polar(1.0, phase)
            }
        })
        .collect()
}

/// Applies the transmitter impairments and renormalizes to unit power.
pub fn apply_device(trace: &IqTrace, profile: &DeviceProfile) -> Result<IqTrace> {
    if trace.samples.is_empty() {
        return invalid("cannot impair an empty trace");
    }
    let mut samples = apply_device_raw(trace, profile);
    normalize_power(&mut samples);
    Ok(IqTrace {
        samples,
        device_id: Some(profile.device_id),
        snr_db: trace.snr_db,
        payload_id: trace.payload_id,
    })
}

/// Propagation conditions for one transmission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// `+inf` means noiseless.
    #[serde(with = "snr_serde")]
    pub snr_db: f64,
    /// `None` disables fading.
    pub rician_k_db: Option<f64>,
    /// Doppler rate as a fraction of the sample rate. Zero is stationary.
    pub doppler_norm: f64,
}

impl ChannelConfig {
    pub fn awgn(snr_db: f64) -> Self {
        Self {
            snr_db,
            rician_k_db: None,
            doppler_norm: 0.0,
        }
    }

    pub fn noiseless() -> Self {
        Self::awgn(f64::INFINITY)
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_nan() || self.snr_db < -20.0 {
            return invalid(format!("snr_db must lie in [-20, +inf], got {}", self.snr_db));
        }
        if !(0.0..=MAX_DOPPLER).contains(&self.doppler_norm) {
            return invalid(format!(
                "doppler_norm must lie in [0, {MAX_DOPPLER}], got {}",
                self.doppler_norm
            ));
        }
        if let Some(k) = self.rician_k_db {
            if !k.is_finite() {
                return invalid("rician_k_db must be finite");
            }
        }
        Ok(())
    }
}

/// Serializes infinite SNR as `null` so configs stay valid JSON.
pub(crate) mod snr_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Number of sinusoids in the sum-of-sinusoids scatter model.
const SCATTER_PATHS: usize = 16;

/// Channel output split into its faded signal and additive noise, before
/// the receiver's power normalization.
#[derive(Debug, Clone)]
pub struct ChannelParts {
    pub signal: Vec<Complex64>,
    pub noise: Vec<Complex64>,
}

/// Fading followed by complex AWGN, without normalization.
pub fn apply_channel_parts(trace: &IqTrace, ch: &ChannelConfig, seed: u64) -> Result<ChannelParts> {
    if trace.samples.is_empty() {
        return invalid("cannot propagate an empty trace");
    }
    ch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut signal = trace.samples.clone();

    if let Some(k_db) = ch.rician_k_db {
        let k = 10f64.powf(k_db / 10.0);
        let los_gain = (k / (k + 1.0)).sqrt();
        let scatter_gain = (1.0 / (k + 1.0)).sqrt();
        let los = Complex64::from_polar(los_gain, rng.gen_range(0.0..2.0 * PI));
        // Clarke-style scatter: random arrival angles and phases.
        let paths: Vec<(f64, f64)> = (0..SCATTER_PATHS)
            .map(|_| {
                let angle: f64 = rng.gen_range(0.0..2.0 * PI);
                (2.0 * PI * ch.doppler_norm * angle.cos(), rng.gen_range(0.0..2.0 * PI))
            })
            .collect();
        let norm = scatter_gain / (SCATTER_PATHS as f64).sqrt();
        for (n, s) in signal.iter_mut().enumerate() {
            let t = n as f64;
            let scatter: Complex64 = paths
                .iter()
                .map(|&(w, phi)| Complex64::from_polar(1.0, w * t + phi))
                .sum();
            *s *= los + scatter * norm;
        }
    }

    let noise = if ch.snr_db.is_finite() {
        let ps = mean_power(&signal);
        let sigma = (ps / 10f64.powf(ch.snr_db / 10.0) / 2.0).sqrt();
        (0..signal.len())
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re * sigma, im * sigma)
            })
            .collect()
    } else {
        vec![Complex64::new(0.0, 0.0); signal.len()]
    };
    Ok(ChannelParts { signal, noise })
}

/// Fading plus AWGN at the configured SNR, then receiver power normalization.
pub fn apply_channel(trace: &IqTrace, ch: &ChannelConfig, seed: u64) -> Result<IqTrace> {
    let parts = apply_channel_parts(trace, ch, seed)?;
    let mut samples: Vec<Complex64> = if ch.snr_db.is_finite() {
        parts.signal.iter().zip(&parts.noise).map(|(s, n)| s + n).collect()
    } else {
        parts.signal
    };
    normalize_power(&mut samples);
    Ok(IqTrace {
        samples,
        device_id: trace.device_id,
        snr_db: ch.snr_db,
        payload_id: trace.payload_id,
    })
}

/// Which partition a window belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// One `2 x W` window with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    /// I row followed by Q row.
    pub data: Vec<f64>,
    pub device_id: u32,
    pub snr_db: f64,
    /// Frame index inside its (device, SNR) cell.
    pub frame: u32,
    /// Window index inside its frame.
    pub position: u32,
}

/// Windows partitioned for training and evaluation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub window_len: usize,
    pub train: Vec<Window>,
    pub validation: Vec<Window>,
    pub test: Vec<Window>,
}

/// Everything [`build_dataset`] needs to simulate a fleet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetSpec {
    pub n_devices: u32,
    pub intruder_id: u32,
    pub spread: f64,
    pub snr_list: Vec<f64>,
    pub frames_per_cell: u32,
    pub window_len: usize,
    pub windows_per_frame: usize,
    /// Rician K factor for mobile frames; `None` keeps every frame unfaded.
    pub rician_k_db: Option<f64>,
    /// Normalized Doppler applied when a frame is mobile.
    pub doppler_norm: f64,
    /// Fraction of frames sent while moving, alternating deterministically.
    pub mobile_fraction: f64,
    /// Send a distinct payload per frame instead of one shared payload.
    pub vary_payload: bool,
    pub payload_id: u32,
    pub seed: u64,
}

impl FleetSpec {
    pub fn new(
        n_devices: u32,
        intruder_id: u32,
        snr_list: Vec<f64>,
        frames_per_cell: u32,
        window_len: usize,
        seed: u64,
    ) -> Self {
        Self {
            n_devices,
            intruder_id,
            spread: 0.3,
            snr_list,
            frames_per_cell,
            window_len,
            windows_per_frame: 4,
            rician_k_db: None,
            doppler_norm: 0.0,
            mobile_fraction: 0.0,
            vary_payload: false,
            payload_id: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_devices < 2 {
            return invalid("fleet needs at least two devices");
        }
        if self.intruder_id >= self.n_devices {
            return invalid(format!(
                "intruder id {} out of range for {} devices",
                self.intruder_id, self.n_devices
            ));
        }
        if self.snr_list.is_empty() {
            return invalid("snr_list is empty");
        }
        if self.window_len < MIN_WINDOW_LEN {
            return invalid(format!("window_len must be at least {MIN_WINDOW_LEN}"));
        }
        if self.windows_per_frame == 0 || self.frames_per_cell == 0 {
            return invalid("frames_per_cell and windows_per_frame must be positive");
        }
        if !(0.0..=1.0).contains(&self.mobile_fraction) {
            return invalid("mobile_fraction must lie in [0, 1]");
        }
        for &snr in &self.snr_list {
            ChannelConfig {
                snr_db: snr,
                rician_k_db: self.rician_k_db,
                doppler_norm: self.doppler_norm,
            }
            .validate()?;
        }
        Ok(())
    }

    pub fn frame_len(&self) -> usize {
        self.window_len * self.windows_per_frame
    }

    pub fn device_profile(&self, device: u32) -> Result<DeviceProfile> {
        let seed = derive_seed(self.seed, &[0xDE71CE, u64::from(device)]);
        sample_device_profile_for(device, seed, self.spread)
    }

    pub fn profiles(&self) -> Result<Vec<DeviceProfile>> {
        (0..self.n_devices).map(|d| self.device_profile(d)).collect()
    }

    fn is_mobile(&self, frame: u32) -> bool {
        // Spreads mobile frames evenly through the cell.
        let f = f64::from(frame);
        ((f + 1.0) * self.mobile_fraction).floor() > (f * self.mobile_fraction).floor()
    }

    pub fn channel_for(&self, snr_db: f64, frame: u32) -> ChannelConfig {
        if self.is_mobile(frame) {
            ChannelConfig {
                snr_db,
                rician_k_db: self.rician_k_db,
                doppler_norm: self.doppler_norm,
            }
        } else {
            ChannelConfig::awgn(snr_db)
        }
    }

    pub fn payload_for(&self, frame: u32) -> u32 {
        if self.vary_payload {
            self.payload_id.wrapping_add(frame)
        } else {
            self.payload_id
        }
    }

    /// The received trace for one frame of one (device, SNR) cell.
    pub fn frame_trace(&self, profile: &DeviceProfile, snr_index: usize, frame: u32) -> Result<IqTrace> {
        let snr_db = self.snr_list[snr_index];
        let base = generate_baseband(self.payload_for(frame), self.frame_len())?;
        let tx = apply_device(&base, profile)?;
        let seed = derive_seed(
            self.seed,
            &[0xC4A7, u64::from(profile.device_id), snr_index as u64, u64::from(frame)],
        );
        apply_channel(&tx, &self.channel_for(snr_db, frame), seed)
    }
}

/// Simulates every (device, SNR, frame) trace and partitions the windows.
///
/// Authorized windows are shuffled with a seed derived from `spec.seed` and
/// split 90/5/5. Every intruder window goes to the test partition.
pub fn build_dataset(spec: &FleetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut authorized = Vec::new();
    let mut intruder = Vec::new();
    for profile in spec.profiles()? {
        for (si, &snr_db) in spec.snr_list.iter().enumerate() {
            for frame in 0..spec.frames_per_cell {
                let trace = spec.frame_trace(&profile, si, frame)?;
                let sink = if profile.device_id == spec.intruder_id {
                    &mut intruder
                } else {
                    &mut authorized
                };
                for (position, data) in trace.windows(spec.window_len).into_iter().enumerate() {
                    sink.push(Window {
                        data,
                        device_id: profile.device_id,
                        snr_db,
                        frame,
                        position: position as u32,
                    });
                }
            }
        }
    }
    let splits = split_assignments(authorized.len(), derive_seed(spec.seed, &[0x5B117]));
    let mut ds = Dataset {
        window_len: spec.window_len,
        ..Dataset::default()
    };
    for (w, split) in authorized.into_iter().zip(splits) {
        match split {
            Split::Train => ds.train.push(w),
            Split::Validation => ds.validation.push(w),
            Split::Test => ds.test.push(w),
        }
    }
    ds.test.extend(intruder);
    Ok(ds)
}

/// Split label for each of `count` authorized windows, in generation order.
///
/// Exactly `round(0.90 count)` windows train and `round(0.05 count)`
/// validate; the rest test.
pub fn split_assignments(count: usize, seed: u64) -> Vec<Split> {
    let n_train = (TRAIN_FRACTION * count as f64).round() as usize;
    let n_val = ((VALIDATION_FRACTION * count as f64).round() as usize).min(count - n_train);
    let mut order: Vec<usize> = (0..count).collect();
    shuffle(&mut order, seed);
    let mut out = vec![Split::Test; count];
    for (rank, &idx) in order.iter().enumerate() {
        out[idx] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
    }
    out
}

pub(crate) fn shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs_dev(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn baseband_is_deterministic_and_unit_power() {
        let a = generate_baseband(7, 1024).unwrap();
        let b = generate_baseband(7, 1024).unwrap();
        assert_eq!(a, b);
        assert!((a.mean_power() - 1.0).abs() < 1e-9);
        let c = generate_baseband(8, 1024).unwrap();
        assert!(a.samples.iter().zip(&c.samples).any(|(x, y)| x != y));
        for n in [64, 65, 1000, 4097] {
            let t = generate_baseband(3, n).unwrap();
            assert_eq!(t.sample_count(), n);
            assert!((t.mean_power() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn baseband_rejects_short() {
        assert!(generate_baseband(1, 63).is_err());
    }

    #[test]
    fn profile_draws() {
        let a = sample_device_profile(1, 0.4).unwrap();
        assert_eq!(a, sample_device_profile(1, 0.4).unwrap());
        assert_ne!(a, sample_device_profile(2, 0.4).unwrap());
        assert!(sample_device_profile(1, 0.0).is_err());
        assert!(sample_device_profile(1, 1.5).is_err());
        assert!(sample_device_profile(1, f64::NAN).is_err());
    }

    #[test]
    fn profile_vanishes_with_spread() {
        let p = sample_device_profile(9, 1e-12).unwrap();
        let n = DeviceProfile::nominal(0);
        assert!((p.iq_gain_imbalance - n.iq_gain_imbalance).abs() < 1e-12);
        assert!(p.iq_phase_skew.abs() < 1e-12);
        assert!(p.dc_offset_i.abs() < 1e-12 && p.dc_offset_q.abs() < 1e-12);
        assert!(p.cfo_ppm.abs() < 1e-10);
        assert!(p.phase_noise_std < 1e-12);
        assert!(p.pa_coeff_3rd.abs() < 1e-12);
    }

    #[test]
    fn profile_ranges_monte_carlo() {
        for seed in 0..1000 {
            let p = sample_device_profile(seed, 0.5).unwrap();
            p.validate().unwrap();
        }
        for seed in 0..200 {
            sample_device_profile(seed, 1.0).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn nominal_device_is_identity() {
        let base = generate_baseband(4, 2048).unwrap();
        let out = apply_device(&base, &DeviceProfile::nominal(3)).unwrap();
        assert!(max_abs_dev(&out.samples, &base.samples) < 1e-9);
    }

    #[test]
    fn dc_offset_shifts_mean() {
        let base = generate_baseband(4, 4096).unwrap();
        let mut p = DeviceProfile::nominal(0);
        p.dc_offset_i = 0.05;
        let raw = apply_device_raw(&base, &p);
        let mean_i = |s: &[Complex64]| s.iter().map(|c| c.re).sum::<f64>() / s.len() as f64;
        let mean_q = |s: &[Complex64]| s.iter().map(|c| c.im).sum::<f64>() / s.len() as f64;
        assert!((mean_i(&raw) - mean_i(&base.samples) - 0.05).abs() < 1e-12);
        assert!((mean_q(&raw) - mean_q(&base.samples)).abs() < 1e-12);
    }

    #[test]
    fn distinct_profiles_distinct_outputs() {
        let base = generate_baseband(4, 1024).unwrap();
        let a = apply_device(&base, &sample_device_profile_for(0, 10, 0.3).unwrap()).unwrap();
        let b = apply_device(&base, &sample_device_profile_for(1, 11, 0.3).unwrap()).unwrap();
        assert!(max_abs_dev(&a.samples, &b.samples) > 1e-3);
    }

    #[test]
    fn device_outputs_pairwise_distinct() {
        let base = generate_baseband(2, 1024).unwrap();
        let outs: Vec<IqTrace> = (0..30u32)
            .map(|d| apply_device(&base, &sample_device_profile_for(d, 100 + u64::from(d), 0.1).unwrap()).unwrap())
            .collect();
        let mut distinct = 0;
        let mut total = 0;
        for i in 0..outs.len() {
            for j in i + 1..outs.len() {
                total += 1;
                if outs[i].samples != outs[j].samples {
                    distinct += 1;
                }
            }
        }
        assert!(distinct as f64 >= 0.99 * total as f64);
    }

    #[test]
    fn noiseless_channel_is_identity() {
        let base = generate_baseband(5, 1024).unwrap();
        let out = apply_channel(&base, &ChannelConfig::noiseless(), 1).unwrap();
        assert!(max_abs_dev(&out.samples, &base.samples) < 1e-9);
    }

    #[test]
    fn identity_chain() {
        let base = generate_baseband(6, 4096).unwrap();
        let tx = apply_device(&base, &DeviceProfile::nominal(1)).unwrap();
        let rx = apply_channel(&tx, &ChannelConfig::noiseless(), 9).unwrap();
        assert!(max_abs_dev(&rx.samples, &base.samples) < 1e-9);
    }

    fn measured_snr_db(parts: &ChannelParts) -> f64 {
        10.0 * (mean_power(&parts.signal) / mean_power(&parts.noise)).log10()
    }

    #[test]
    fn snr_calibration_million_samples() {
        let base = generate_baseband(1, 1_000_000).unwrap();
        let parts = apply_channel_parts(&base, &ChannelConfig::awgn(0.0), 77).unwrap();
        assert!(measured_snr_db(&parts).abs() < 0.1);
    }

    #[test]
    fn snr_calibration_sweep() {
        let base = generate_baseband(2, 100_000).unwrap();
        for (k, snr) in [-15.0, -10.0, -5.0, -1.0, 0.0, 4.0, 10.0].into_iter().enumerate() {
            let parts = apply_channel_parts(&base, &ChannelConfig::awgn(snr), k as u64).unwrap();
            assert!((measured_snr_db(&parts) - snr).abs() < 0.15, "snr {snr}");
            let faded = ChannelConfig {
                snr_db: snr,
                rician_k_db: Some(6.0),
                doppler_norm: 0.005,
            };
            let parts = apply_channel_parts(&base, &faded, k as u64).unwrap();
            assert!((measured_snr_db(&parts) - snr).abs() < 0.15, "faded snr {snr}");
        }
    }

    #[test]
    fn channel_is_seeded() {
        let base = generate_baseband(5, 2048).unwrap();
        let ch = ChannelConfig {
            snr_db: 3.0,
            rician_k_db: Some(3.0),
            doppler_norm: 0.002,
        };
        let a = apply_channel(&base, &ch, 5).unwrap();
        assert_eq!(a, apply_channel(&base, &ch, 5).unwrap());
        assert_ne!(a, apply_channel(&base, &ch, 6).unwrap());
        assert!((a.mean_power() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn channel_config_validation() {
        assert!(ChannelConfig::awgn(-21.0).validate().is_err());
        assert!(ChannelConfig::awgn(f64::NAN).validate().is_err());
        let mut c = ChannelConfig::awgn(0.0);
        c.doppler_norm = 0.02;
        assert!(c.validate().is_err());
        c.doppler_norm = -0.001;
        assert!(c.validate().is_err());
    }

    #[test]
    fn infinite_snr_serializes_as_null() {
        let json = serde_json::to_string(&ChannelConfig::noiseless()).unwrap();
        assert!(json.contains("\"snr_db\":null"));
        let back: ChannelConfig = serde_json::from_str(&json).unwrap();
        assert!(back.snr_db.is_infinite());
    }

    fn small_fleet(seed: u64) -> FleetSpec {
        let mut spec = FleetSpec::new(6, 5, vec![0.0, -5.0], 5, 64, seed);
        spec.windows_per_frame = 2;
        spec
    }

    #[test]
    fn dataset_excludes_intruder_from_training() {
        let ds = build_dataset(&small_fleet(1)).unwrap();
        assert!(ds.train.iter().chain(&ds.validation).all(|w| w.device_id != 5));
        let intruder_test = ds.test.iter().filter(|w| w.device_id == 5).count();
        assert_eq!(intruder_test, 2 * 5 * 2);
    }

    #[test]
    fn dataset_split_counts() {
        let ds = build_dataset(&small_fleet(2)).unwrap();
        let authorized = 5 * 2 * 5 * 2;
        assert_eq!(ds.train.len(), (0.9 * authorized as f64).round() as usize);
        assert_eq!(ds.validation.len(), (0.05 * authorized as f64).round() as usize);
        let test_auth = ds.test.iter().filter(|w| w.device_id != 5).count();
        assert_eq!(ds.train.len() + ds.validation.len() + test_auth, authorized);
        for w in ds.train.iter().chain(&ds.test) {
            assert_eq!(w.data.len(), 2 * 64);
        }
    }

    #[test]
    fn dataset_has_one_cell_per_snr() {
        let snrs: Vec<f64> = (-5..=5).map(|k| f64::from(2 * k)).collect();
        let mut spec = FleetSpec::new(5, 2, snrs, 1, 64, 3);
        spec.windows_per_frame = 1;
        let ds = build_dataset(&spec).unwrap();
        let mut cells: Vec<(u32, i64)> = ds
            .train
            .iter()
            .chain(&ds.validation)
            .chain(&ds.test)
            .map(|w| (w.device_id, w.snr_db as i64))
            .collect();
        cells.sort_unstable();
        cells.dedup();
        assert_eq!(cells.len(), 5 * 11);
        for d in 0..5 {
            assert_eq!(cells.iter().filter(|c| c.0 == d).count(), 11);
        }
    }

    #[test]
    fn dataset_is_deterministic() {
        let a = build_dataset(&small_fleet(4)).unwrap();
        let b = build_dataset(&small_fleet(4)).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn dataset_rejects_bad_specs() {
        let mut s = small_fleet(1);
        s.intruder_id = 6;
        assert!(build_dataset(&s).is_err());
        let mut s = small_fleet(1);
        s.n_devices = 1;
        s.intruder_id = 0;
        assert!(build_dataset(&s).is_err());
        let mut s = small_fleet(1);
        s.snr_list.clear();
        assert!(build_dataset(&s).is_err());
        let mut s = small_fleet(1);
        s.window_len = 32;
        assert!(build_dataset(&s).is_err());
    }

    #[test]
    fn windows_drop_partial_tail() {
        let t = generate_baseband(1, 64 * 3 + 10).unwrap();
        let w = t.windows(64);
        assert_eq!(w.len(), 3);
        assert_eq!(w[1][0], f64::from(t.samples[64].re as f32));
        assert_eq!(w[1][64], f64::from(t.samples[64].im as f32));
    }
}
