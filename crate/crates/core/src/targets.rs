//! Regression functions used by the simulation harness.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::integrate_converged;

/// Number of series terms kept in `m3`.
pub const M3_TERMS: usize = 100_000;
/// Grid size of the `m3` lookup table.
pub const M3_TABLE_SIZE: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// `m ≡ c`.
    Constant(f64),
    /// `exp(sin 2πt)`
    M1,
    /// `|t − 0.4|`
    M2,
    /// `Σ_k k^{-1.5} φ_k(t)` with `φ_1 = 1`, `φ_{2k} = cos 2kπt`, `φ_{2k+1} = sin 2kπt`.
    M3,
}

impl Target {
    pub fn name(&self) -> String {
        match self {
            Target::Constant(c) => format!("const:{c}"),
            Target::M1 => "m1".into(),
            Target::M2 => "m2".into(),
            Target::M3 => "m3".into(),
        }
    }

    /// Evaluates at `t ∈ [0, 1]`.
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Target::Constant(c) => *c,
            Target::M1 => (2.0 * PI * t).sin().exp(),
            Target::M2 => (t - 0.4).abs(),
            Target::M3 => m3_table().eval(t),
        }
    }

    /// Points where the function is not smooth.
    pub fn kinks(&self) -> &'static [f64] {
        match self {
            Target::M2 => &[0.4],
            _ => &[],
        }
    }

    /// `E m(T)²` for `T` with density `f` on `[0, 1]`.
    pub fn second_moment(&self, f: &dyn Fn(f64) -> f64) -> Result<f64> {
        moment_with_kinks(self, f)
    }

    /// `E m(T)²` under the uniform design.
    pub fn second_moment_uniform(&self) -> f64 {
        match self {
            // Parseval on the truncated series.
            Target::Constant(c) => c * c,
            Target::M3 => 1.0 + (2..=M3_TERMS).map(|k| 0.5 * (k as f64).powi(-3)).sum::<f64>(),
            _ => moment_with_kinks(self, &|_| 1.0).expect("smooth integrand converges"),
        }
    }
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m1" => Ok(Target::M1),
            "m2" => Ok(Target::M2),
            "m3" => Ok(Target::M3),
            other if other.starts_with("const:") => other[6..]
                .parse()
                .map(Target::Constant)
                .map_err(|_| Error::Config(format!("bad constant target '{other}'"))),
            other => Err(Error::Config(format!("unknown target '{other}'"))),
        }
    }
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

fn moment_with_kinks(target: &Target, f: &dyn Fn(f64) -> f64) -> Result<f64> {
    let mut edges = vec![0.0];
    edges.extend_from_slice(target.kinks());
    edges.push(1.0);
    let nodes = if matches!(target, Target::M3) { 1 << 16 } else { 512 };
    let mut total = 0.0;
    for w in edges.windows(2) {
        total += integrate_converged(w[0], w[1], nodes, 1e-10, |t| target.eval(t).powi(2) * f(t))?;
    }
    Ok(total)
}

/// Coefficient of `φ_j` in `m3`, `j ≥ 1`.
pub fn m3_coefficient(j: usize) -> f64 {
    (j as f64).powf(-1.5)
}

/// Direct partial sum of `m3` over the first `terms` basis functions.
pub fn m3_partial_sum(t: f64, terms: usize) -> f64 {
    let mut s = 1.0;
    let mut j = 2;
    while j <= terms {
        let k = (j / 2) as f64;
        s += m3_coefficient(j) * (2.0 * PI * k * t).cos();
        if j < terms {
            s += m3_coefficient(j + 1) * (2.0 * PI * k * t).sin();
        }
        j += 2;
    }
    s
}

/// `m3` sampled on a uniform periodic grid by an inverse FFT, evaluated by
/// linear interpolation.
pub struct PeriodicTable {
    values: Vec<f64>,
}

impl PeriodicTable {
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.values.len();
        let x = t.rem_euclid(1.0) * n as f64;
        let i = (x.floor() as usize).min(n - 1);
        let frac = x - i as f64;
        let a = self.values[i];
        let b = self.values[(i + 1) % n];
        a + frac * (b - a)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn build_m3_table() -> PeriodicTable {
    let n = M3_TABLE_SIZE;
    let mut coeffs = vec![Complex::new(0.0, 0.0); n];
    coeffs[0] = Complex::new(1.0, 0.0);
    // a cos(2πkt) + b sin(2πkt) = Re[(a − ib) e^{2πikt}]
    for (k, c) in coeffs.iter_mut().enumerate().take(M3_TERMS / 2 + 1).skip(1) {
        let a = if 2 * k <= M3_TERMS { m3_coefficient(2 * k) } else { 0.0 };
        let b = if 2 * k < M3_TERMS { m3_coefficient(2 * k + 1) } else { 0.0 };
        *c = Complex::new(a, -b);
    }
    let fft = FftPlanner::new().plan_fft_inverse(n);
    fft.process(&mut coeffs);
    PeriodicTable { values: coeffs.into_iter().map(|c| c.re).collect() }
}

/// Shared `m3` table, built on first use.
pub fn m3_table() -> &'static PeriodicTable {
    static TABLE: OnceLock<PeriodicTable> = OnceLock::new();
    TABLE.get_or_init(build_m3_table)
}

/// A target as a shareable closure.
pub fn as_fn(target: Target) -> Arc<dyn Fn(f64) -> f64 + Send + Sync> {
    Arc::new(move |t| target.eval(t))
}
