//! Empirical distribution functions and Kolmogorov-Smirnov statistics.
//!
//! All statistics are computed exactly from sorted samples. The two-sample
//! statistic is accumulated in integer arithmetic as `max |i*m - j*n|` and
//! divided by `n*m` once at the end, so it is bit-for-bit symmetric in its
//! arguments and reproducible by any independent counting routine.
//!
//! P-values use the asymptotic Kolmogorov distribution
//!
//! ```text
//! Q(lambda) = 2 * sum_{k>=1} (-1)^(k-1) * exp(-2 k^2 lambda^2)
//! ```
//!
//! with `lambda = D * sqrt(n m / (n + m))` (two-sample) or `sqrt(n) * D`
//! (one-sample). A statistic of exactly zero maps to a p-value of exactly one.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Terms of the Kolmogorov series smaller than this are dropped.
const SERIES_TOLERANCE: f64 = 1e-12;

/// An empirical distribution function over a finite sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Edf {
    sorted: Vec<f64>,
}

impl Edf {
    /// Builds an EDF, sorting the samples. Fails on an empty sample or any
    /// non-finite value.
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return invalid("EDF needs at least one sample");
        }
        if let Some(bad) = samples.iter().find(|v| !v.is_finite()) {
            return invalid(format!("EDF sample {bad} is not finite"));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { sorted: samples })
    }

    pub fn from_slice(samples: &[f64]) -> Result<Self> {
        Self::new(samples.to_vec())
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted_samples(&self) -> &[f64] {
        &self.sorted
    }

    /// Fraction of samples `<= x`. Right-continuous.
    pub fn eval(&self, x: f64) -> f64 {
        let count = self.sorted.partition_point(|&v| v <= x);
        count as f64 / self.sorted.len() as f64
    }
}

/// Outcome of a Kolmogorov-Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub m: usize,
}

impl KsResult {
    /// True when the p-value falls below `alpha`.
    pub fn rejects_at(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }

    /// True for the exact-match outcome `(0, 1)`.
    pub fn is_exact_match(&self) -> bool {
        self.statistic == 0.0 && self.p_value == 1.0
    }
}

/// Two-sample statistic `sup_x |F_a(x) - F_b(x)|` with its asymptotic p-value.
///
/// Walks both sorted samples once. At every jump point all values equal to
/// the current minimum are consumed from both sides before the gap is
/// measured, which yields the true supremum in the presence of ties.
pub fn ks_two_sample(a: &Edf, b: &Edf) -> KsResult {
    let (xs, ys) = (a.sorted_samples(), b.sorted_samples());
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut widest: u128 = 0;
    while i < n && j < m {
        let x = xs[i].min(ys[j]);
        while i < n && xs[i] <= x {
            i += 1;
        }
        while j < m && ys[j] <= x {
            j += 1;
        }
        let gap = (i as u128 * m as u128).abs_diff(j as u128 * n as u128);
        widest = widest.max(gap);
    }
    let statistic = widest as f64 / (n as u128 * m as u128) as f64;
    let (nf, mf) = (n as f64, m as f64);
    let lambda = statistic * (nf * mf / (nf + mf)).sqrt();
    KsResult {
        statistic,
        p_value: p_value_for(statistic, lambda),
        n,
        m,
    }
}

/// One-sample statistic `sup_x |F_n(x) - F(x)|` against a reference CDF.
///
/// `cdf` is evaluated once at every distinct sample value; both one-sided
/// gaps of the step function are measured there. Values outside `[0, 1]` or
/// decreasing between evaluated points are rejected.
pub fn ks_one_sample<F>(e: &Edf, cdf: F) -> Result<KsResult>
where
    F: Fn(f64) -> f64,
{
    let xs = e.sorted_samples();
    let n = xs.len();
    let nf = n as f64;
    let mut statistic = 0.0f64;
    let mut previous = 0.0f64;
    let mut i = 0;
    while i < n {
        let x = xs[i];
        let below = i;
        while i < n && xs[i] <= x {
            i += 1;
        }
        let f = cdf(x);
        if !(0.0..=1.0).contains(&f) {
            return invalid(format!("cdf({x}) = {f} lies outside [0, 1]"));
        }
        if f < previous {
            return invalid(format!("cdf decreases at {x}: {f} < {previous}"));
        }
        previous = f;
        statistic = statistic
            .max((below as f64 / nf - f).abs())
            .max((i as f64 / nf - f).abs());
    }
    let lambda = nf.sqrt() * statistic;
    Ok(KsResult {
        statistic,
        p_value: p_value_for(statistic, lambda),
        n,
        m: 0,
    })
}

fn p_value_for(statistic: f64, lambda: f64) -> f64 {
    if statistic == 0.0 {
        return 1.0;
    }
    kolmogorov_q(lambda).clamp(0.0, 1.0)
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // The alternating series needs O(1/lambda) terms here and loses digits
        // to cancellation. Its Jacobi theta transform is the same function and
        // converges in a handful of terms.
        let s = (2.0 * std::f64::consts::PI).sqrt() / lambda;
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut sum = 0.0;
        for k in 1u32.. {
            let odd = f64::from(2 * k - 1);
            let term = (-odd * odd * c).exp();
            sum += term;
            if term < SERIES_TOLERANCE {
                break;
            }
        }
        return 1.0 - s * sum;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1u32.. {
        let kf = f64::from(k);
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < SERIES_TOLERANCE {
            break;
        }
        sign = -sign;
    }
    2.0 * sum
}

/// `c(alpha) = sqrt(-ln(alpha) / 2)`.
pub fn c_alpha(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    Ok((-0.5 * alpha.ln()).sqrt())
}

/// Large-sample rejection threshold `c(alpha) * sqrt((n + m) / (n m))`.
pub fn critical_value(alpha: f64, n: usize, m: usize) -> Result<f64> {
    if n == 0 || m == 0 {
        return invalid("sample sizes must be positive");
    }
    let (nf, mf) = (n as f64, m as f64);
    Ok(c_alpha(alpha)? * ((nf + mf) / (nf * mf)).sqrt())
}

/// Rejects the same-distribution hypothesis when `d > critical_value(alpha, n, m)`.
pub fn rejects(d: f64, alpha: f64, n: usize, m: usize) -> Result<bool> {
    Ok(d > critical_value(alpha, n, m)?)
}
