//! The one-way index-problem protocol behind the memory lower bound.
//!
//! Alice holds a bit vector `ω ∈ {0,1}^k` and encodes it as a sum of
//! disjoint bumps, `m_ω(t) = Σ_j ω_j c_K χ k^{-β} K(k(t − t_j))`. She
//! streams noisy observations of `m_ω` through the estimator and sends Bob
//! nothing but the checkpoint. Bob rebuilds the estimate and reads each bit
//! off by thresholding at half the bump height. If Bob recovers an
//! arbitrary bit with small error, the checkpoint must carry `Ω(k)` reals.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::engine::{Checkpoint, DensityConfig, Regressor, RegressorConfig, StreamBatch};
use crate::error::{Error, Result};
use crate::basis::{BasisSpec, PenaltySpec};
use crate::schedule::SchedulerConfig;
use crate::tuning::rho_at;

/// `(M/χ) exp(1 − 1/(1 − 4t²))` on `|t| < 1/2`, zero elsewhere.
pub fn bump_kernel(t: f64, m: f64, chi: f64) -> f64 {
    let s = 1.0 - 4.0 * t * t;
    if s <= 0.0 {
        return 0.0;
    }
    (m / chi) * (1.0 - 1.0 / s).exp()
}

/// Public parameters of the code (everything except `ω`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeParams {
    pub k: usize,
    pub beta: f64,
    pub chi: f64,
    pub m: f64,
    pub c_k: f64,
}

impl Default for CodeParams {
    fn default() -> Self {
        Self { k: 8, beta: 1.0, chi: 1.0, m: 1.0, c_k: 0.1 }
    }
}

impl CodeParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        for (name, v) in [("beta", self.beta), ("chi", self.chi), ("M", self.m), ("c_K", self.c_k)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Center of the `j`-th interval (0-based), `(j + 1/2)/k`.
    pub fn center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) / self.k as f64
    }

    /// Bump height `a_k = c_K χ k^{-β} K(0) = c_K M k^{-β}`.
    pub fn amplitude(&self) -> f64 {
        self.c_k * self.chi * (self.k as f64).powf(-self.beta) * bump_kernel(0.0, self.m, self.chi)
    }

    /// Bob's threshold rule: bit `j` is 1 iff `m̆(t_j) > a_k/2`.
    pub fn decode_with(&self, estimate: impl Fn(f64) -> f64) -> Vec<bool> {
        let half = self.amplitude() / 2.0;
        (0..self.k).map(|j| estimate(self.center(j)) > half).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypercubeInstance {
    pub params: CodeParams,
    pub omega: Vec<bool>,
}

impl HypercubeInstance {
    pub fn new(params: CodeParams, omega: Vec<bool>) -> Result<Self> {
        params.validate()?;
        if omega.len() != params.k {
            return Err(Error::Config(format!("omega has {} bits, k = {}", omega.len(), params.k)));
        }
        Ok(Self { params, omega })
    }

    pub fn random<R: Rng>(params: CodeParams, rng: &mut R) -> Result<Self> {
        let omega = (0..params.k).map(|_| rng.random::<bool>()).collect();
        Self::new(params, omega)
    }

    /// `m_ω(t)`; only the bump whose interval contains `t` can be non-zero.
    pub fn eval(&self, t: f64) -> f64 {
        let p = &self.params;
        let k = p.k as f64;
        let scale = p.c_k * p.chi * k.powf(-p.beta);
        let j = ((t * k).floor().max(0.0) as usize).min(p.k - 1);
        let mut s = 0.0;
        // neighbours as well, so the sum is exact at interval edges
        for i in j.saturating_sub(1)..=(j + 1).min(p.k - 1) {
            if self.omega[i] {
                s += scale * bump_kernel(k * (t - p.center(i)), p.m, p.chi);
            }
        }
        s
    }

    pub fn as_fn(&self) -> impl Fn(f64) -> f64 + '_ {
        move |t| self.eval(t)
    }
}

/// Finite-difference estimate of the Hölder seminorm of order `β`: with
/// `ℓ = ⌈β⌉ − 1`, the `(β − ℓ)`-Hölder constant of the `ℓ`-th derivative
/// on a uniform grid of `grid` points over `[0, 1]`.
pub fn holder_constant(f: impl Fn(f64) -> f64, beta: f64, grid: usize) -> f64 {
    let ell = (beta.ceil() as usize).saturating_sub(1);
    let gamma = beta - ell as f64;
    let h = 1.0 / (grid - 1) as f64;
    let mut d: Vec<f64> = (0..grid).map(|i| f(i as f64 * h)).collect();
    for _ in 0..ell {
        d = d.windows(2).map(|w| (w[1] - w[0]) / h).collect();
    }
    let mut best: f64 = 0.0;
    let mut lag = 1;
    while lag < d.len() {
        let dist = (lag as f64 * h).powf(gamma);
        for i in 0..d.len() - lag {
            best = best.max((d[i + lag] - d[i]).abs() / dist);
        }
        lag = if lag < 16 { lag + 1 } else { lag * 2 };
    }
    best
}

/// Estimator and data settings shared by Alice and Bob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub code: CodeParams,
    pub n: u64,
    pub batch_size: usize,
    /// Noise standard deviation of Alice's observations.
    pub sigma: f64,
    pub engine: RegressorConfig,
    /// Fixed penalty constants; `h` is also the engine's schedule exponent.
    pub c_rho: f64,
    pub h: f64,
}

/// Default noise level of the protocol runs.
pub const DEFAULT_SIGMA: f64 = 0.1;

impl ProtocolConfig {
    /// Periodic Fourier basis with a density sketch, `h = 1/3`.
    pub fn new(code: CodeParams, n: u64) -> Result<Self> {
        let h = 1.0 / 3.0;
        let engine = RegressorConfig {
            basis: BasisSpec::fourier(0.0, 1.0)?,
            penalty: PenaltySpec::roughness(),
            density: DensityConfig::Sketch { basis: BasisSpec::fourier(0.0, 1.0)? },
            schedule: SchedulerConfig::default().with_h(h),
            batch_size: 100,
        };
        Ok(Self { code, n, batch_size: 100, sigma: DEFAULT_SIGMA, engine, c_rho: 1e-3, h })
    }

    pub fn with_mem_cap(mut self, cap: Option<usize>) -> Self {
        self.engine.schedule = self.engine.schedule.with_mem_cap(cap);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.code.validate()?;
        self.engine.validate()?;
        if self.n == 0 || self.batch_size == 0 {
            return Err(Error::Config("n and batch size must be positive".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config("sigma must be >= 0".into()));
        }
        if self.engine.basis.lo != 0.0 || self.engine.basis.hi != 1.0 {
            return Err(Error::Config("the protocol runs on [0, 1]".into()));
        }
        if self.engine.schedule.h != self.h {
            return Err(Error::Config("engine schedule must use the protocol's h".into()));
        }
        Ok(())
    }
}

/// Alice's side: stream `n` noisy observations of `m_ω` and return the
/// checkpoint, which is the whole message.
pub fn alice_encode<R: Rng>(inst: &HypercubeInstance, cfg: &ProtocolConfig, rng: &mut R) -> Result<Checkpoint> {
    cfg.validate()?;
    let mut reg = Regressor::new(cfg.engine)?;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut left = cfg.n;
    while left > 0 {
        let b = left.min(cfg.batch_size as u64) as usize;
        left -= b as u64;
        let mut t = Vec::with_capacity(b);
        let mut y = Vec::with_capacity(b);
        for _ in 0..b {
            let ti: f64 = rng.random();
            t.push(ti);
            y.push(inst.eval(ti) + cfg.sigma * normal.sample(rng));
        }
        reg.ingest(&StreamBatch { t, y })?;
    }
    Ok(reg.checkpoint())
}

/// Bob's side: rebuild the estimate from the checkpoint alone and decode.
pub fn bob_decode(ck: &Checkpoint, code: &CodeParams, c_rho: f64, h: f64) -> Result<Vec<bool>> {
    code.validate()?;
    let reg = Regressor::from_checkpoint(ck)?;
    let rho = rho_at(c_rho, h, reg.n(), ck.config.penalty.zeta());
    let fit = reg.fit(rho)?;
    Ok(code.decode_with(|t| fit.eval(t)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub k: usize,
    pub n: u64,
    pub transmitted_units: usize,
    pub bit_index: usize,
    pub correct: bool,
    /// Footprint of Alice's engine when she sent the message.
    pub memory_footprint: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub rows: Vec<TrialRow>,
}

impl ProtocolReport {
    pub fn error_rate(&self) -> f64 {
        let wrong = self.rows.iter().filter(|r| !r.correct).count();
        wrong as f64 / self.rows.len().max(1) as f64
    }

    /// Every message carried exactly the sender's memory footprint.
    pub fn channel_honest(&self) -> bool {
        self.rows.iter().all(|r| r.transmitted_units == r.memory_footprint)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "trial,k,n,transmitted_units,bit_index,correct")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{},{}", r.trial, r.k, r.n, r.transmitted_units, r.bit_index, u8::from(r.correct))?;
        }
        Ok(())
    }
}

/// Runs `trials` independent rounds: fresh uniform `ω`, a uniformly chosen
/// bit index, Alice encodes, the checkpoint crosses the channel as JSON,
/// Bob decodes.
pub fn run_protocol(cfg: &ProtocolConfig, trials: usize, seed: u64) -> Result<ProtocolReport> {
    cfg.validate()?;
    if trials == 0 {
        return Err(Error::Config("trials must be >= 1".into()));
    }
    let mut rows = Vec::with_capacity(trials);
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial as u64);
        let inst = HypercubeInstance::random(cfg.code, &mut rng)?;
        let bit_index = rng.random_range(0..cfg.code.k);
        let ck = alice_encode(&inst, cfg, &mut rng)?;
        let footprint = Regressor::from_checkpoint(&ck)?.memory_footprint();
        let wire = ck.to_json()?;
        let received = Checkpoint::from_json(&wire)?;
        let decoded = bob_decode(&received, &cfg.code, cfg.c_rho, cfg.h)?;
        rows.push(TrialRow {
            trial,
            k: cfg.code.k,
            n: cfg.n,
            transmitted_units: received.real_count(),
            bit_index,
            correct: decoded[bit_index] == inst.omega[bit_index],
            memory_footprint: footprint,
        });
    }
    Ok(ProtocolReport { rows })
}

/// `run_protocol` for each `k`, to show error against memory.
pub fn protocol_sweep(base: &ProtocolConfig, ks: &[usize], trials: usize, seed: u64) -> Result<ProtocolReport> {
    let mut rows = Vec::new();
    for &k in ks {
        let cfg = ProtocolConfig { code: CodeParams { k, ..base.code }, ..*base };
        rows.extend(run_protocol(&cfg, trials, seed)?.rows);
    }
    Ok(ProtocolReport { rows })
}
