//! The space-saving one-pass regressor.
//!
//! The state is the summary vector `G` (one running sum `Σ_{i≥τ_j} φ_j(T_i) Y_i`
//! per slot), the slot start times, and the density sketch. At query time
//! the Gram matrix `Ĥ_q` is rebuilt from the sketch and the coefficients
//! solve
//!
//! ```text
//! (Ĥ_q + ρ W) â = N_q⁻¹ G_q,     N_q = diag(n − τ_j + 1)
//! ```
//!
//! so memory stays linear in the number of basis functions.

use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, PenaltySpec};
use crate::density::{DensityModel, DensityState};
use crate::error::{Error, Result};
use crate::schedule::SchedulerConfig;
use crate::slots;

/// Scalars counted by [`Regressor::memory_footprint`] besides the slot
/// vectors: the observation counter and the batch counter.
pub const SCALAR_UNITS: usize = 2;

/// ρ floor applied while fewer than `q0` observations have been seen.
pub const WARMUP_RHO_FLOOR: f64 = 1e-8;

/// Checkpoint format version.
pub const CHECKPOINT_VERSION: u32 = 1;

/// One batch of `(t, y)` pairs in arrival order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StreamBatch {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
}

impl StreamBatch {
    pub fn new(t: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if t.len() != y.len() {
            return Err(Error::Domain(format!(
                "batch has {} predictor values but {} responses",
                t.len(),
                y.len()
            )));
        }
        Ok(Self { t, y })
    }

    pub fn from_pairs(points: &[(f64, f64)]) -> Self {
        Self { t: points.iter().map(|p| p.0).collect(), y: points.iter().map(|p| p.1).collect() }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Source of the Gram matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DensityConfig {
    /// The predictor density is known to be uniform on the domain.
    KnownUniform,
    /// Estimate the density with a streaming sketch in `basis`.
    Sketch { basis: BasisSpec },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressorConfig {
    pub basis: BasisSpec,
    pub penalty: PenaltySpec,
    pub density: DensityConfig,
    pub schedule: SchedulerConfig,
    /// Nominal batch size; batches of other sizes are accepted.
    pub batch_size: usize,
}

impl RegressorConfig {
    /// Defaults for data on `[lo, hi]`: Fourier basis with a `0.1 (hi-lo)`
    /// extension margin, roughness penalty, periodic Fourier density sketch,
    /// default schedule, batches of 100.
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        Ok(Self {
            basis: BasisSpec::fourier_extended(lo, hi)?,
            penalty: PenaltySpec::roughness(),
            density: DensityConfig::Sketch { basis: BasisSpec::fourier(lo, hi)? },
            schedule: SchedulerConfig::default(),
            batch_size: 100,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.basis.validate()?;
        self.schedule.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if let DensityConfig::Sketch { basis } = &self.density {
            basis.validate()?;
            if basis.lo != self.basis.lo || basis.hi != self.basis.hi {
                return Err(Error::Config(
                    "density and regression bases must share the data domain".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Fitted coefficients in a basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    basis: BasisSpec,
    coef: Vec<f64>,
}

impl Fit {
    pub fn new(basis: BasisSpec, coef: Vec<f64>) -> Self {
        Self { basis, coef }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    /// `Σ â_j φ_j(t)`; no domain check.
    pub fn eval(&self, t: f64) -> f64 {
        let mut buf = vec![0.0; self.coef.len()];
        self.basis.eval_into(t, &mut buf);
        buf.iter().zip(&self.coef).map(|(a, b)| a * b).sum()
    }

    /// Evaluates at many points reusing one buffer.
    pub fn eval_many(&self, ts: &[f64]) -> Vec<f64> {
        let mut buf = vec![0.0; self.coef.len()];
        ts.iter()
            .map(|&t| {
                self.basis.eval_into(t, &mut buf);
                buf.iter().zip(&self.coef).map(|(a, b)| a * b).sum()
            })
            .collect()
    }
}

#[derive(Debug)]
struct CachedFit {
    rho_bits: u64,
    fit: Arc<Fit>,
}

/// Streaming regression state.
#[derive(Debug)]
pub struct Regressor {
    config: RegressorConfig,
    g: Vec<f64>,
    start: Vec<u64>,
    n: u64,
    batches: u64,
    density: DensityModel,
    cache: Mutex<Option<CachedFit>>,
}

impl Clone for Regressor {
    fn clone(&self) -> Self {
        Self {
            config: self.config,
            g: self.g.clone(),
            start: self.start.clone(),
            n: self.n,
            batches: self.batches,
            density: self.density.clone(),
            cache: Mutex::new(None),
        }
    }
}

impl Regressor {
    pub fn new(config: RegressorConfig) -> Result<Self> {
        config.validate()?;
        let density = match config.density {
            DensityConfig::KnownUniform => DensityModel::KnownUniform,
            DensityConfig::Sketch { basis } => {
                DensityModel::Sketch(DensityState::new(basis, config.schedule)?)
            }
        };
        Ok(Self {
            config,
            g: Vec::new(),
            start: Vec::new(),
            n: 0,
            batches: 0,
            density,
            cache: Mutex::new(None),
        })
    }

    pub fn config(&self) -> &RegressorConfig {
        &self.config
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn batches(&self) -> u64 {
        self.batches
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn start(&self) -> &[u64] {
        &self.start
    }

    pub fn density(&self) -> &DensityModel {
        &self.density
    }

    /// Number of basis functions used by the estimate (`q`).
    pub fn active_count(&self) -> usize {
        if self.n == 0 {
            return 0;
        }
        self.config.schedule.active_count(self.n).min(self.g.len())
    }

    /// Number of density slots used by the estimate (`p`); 0 in known-density mode.
    pub fn density_active_count(&self) -> usize {
        self.density.sketch().map_or(0, DensityState::active_count)
    }

    /// Per-slot sample count `n_j = n − τ_j + 1`.
    pub fn slot_count(&self, j: usize) -> u64 {
        match self.start.get(j) {
            Some(&s) if self.n >= s => self.n - s + 1,
            _ => 0,
        }
    }

    /// Folds one batch into the summary statistics. The batch is validated
    /// in full before anything is modified.
    pub fn ingest(&mut self, batch: &StreamBatch) -> Result<()> {
        if batch.t.len() != batch.y.len() {
            return Err(Error::Domain("batch t/y lengths differ".into()));
        }
        if batch.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        for (&t, &y) in batch.t.iter().zip(&batch.y) {
            self.config.basis.check_point(t)?;
            if !y.is_finite() {
                return Err(Error::Domain(format!("non-finite response {y}")));
            }
        }
        self.density.update(&batch.t)?;
        let sums = slots::accumulate(
            &self.config.schedule,
            &self.config.basis,
            self.g.len(),
            self.n,
            &batch.t,
            Some(&batch.y),
        );
        for s in sums.opened {
            self.g.push(0.0);
            self.start.push(s);
        }
        for (g, s) in self.g.iter_mut().zip(&sums.sums) {
            *g += s;
        }
        self.n += batch.len() as u64;
        self.batches += 1;
        *self.cache.lock().expect("cache lock poisoned") = None;
        Ok(())
    }

    /// `N_q⁻¹ G_q` for the active slots.
    pub fn scaled_summary(&self) -> Result<DVector<f64>> {
        let q = self.require_data()?;
        Ok(DVector::from_fn(q, |j, _| self.g[j] / self.slot_count(j) as f64))
    }

    fn require_data(&self) -> Result<usize> {
        if self.n == 0 {
            return Err(Error::State("no observations ingested".into()));
        }
        Ok(self.active_count())
    }

    /// The reconstructed Gram matrix `Ĥ_q` for the active slots.
    pub fn gram_matrix(&self) -> Result<DMatrix<f64>> {
        let q = self.require_data()?;
        self.density.gram_matrix(&self.config.basis, q)
    }

    /// Solves `(Ĥ_q + ρW) â = N_q⁻¹ G_q`.
    pub fn solve(&self, rho: f64) -> Result<Fit> {
        let gram = self.gram_matrix()?;
        self.solve_with_gram(rho, &gram)
    }

    /// Same as [`solve`](Self::solve) with a caller-supplied Gram matrix in
    /// place of the reconstruction (used to compare against the empirical Gram).
    pub fn solve_with_gram(&self, rho: f64, gram: &DMatrix<f64>) -> Result<Fit> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::Config(format!("rho must be finite and >= 0, got {rho}")));
        }
        let q = self.require_data()?;
        if gram.nrows() != q || gram.ncols() != q {
            return Err(Error::Config(format!("Gram must be {q}x{q}")));
        }
        let rho = if self.n < self.config.schedule.q0 as u64 { rho.max(WARMUP_RHO_FLOOR) } else { rho };
        let rhs = self.scaled_summary()?;
        let w = self.config.penalty.matrix(&self.config.basis, q);
        let coef = spd_solve(gram + w * rho, &rhs)?;
        Ok(Fit::new(self.config.basis, coef.iter().copied().collect()))
    }

    /// Coefficients for `rho`, cached until the next ingest.
    pub fn fit(&self, rho: f64) -> Result<Arc<Fit>> {
        let mut cache = self.cache.lock().expect("cache lock poisoned");
        if let Some(c) = cache.as_ref() {
            if c.rho_bits == rho.to_bits() {
                return Ok(Arc::clone(&c.fit));
            }
        }
        let fit = Arc::new(self.solve(rho)?);
        *cache = Some(CachedFit { rho_bits: rho.to_bits(), fit: Arc::clone(&fit) });
        Ok(fit)
    }

    /// `m̂(t)` at penalty level `rho`.
    pub fn estimate(&self, rho: f64, t: f64) -> Result<f64> {
        self.config.basis.check_point(t)?;
        Ok(self.fit(rho)?.eval(t))
    }

    /// Stored reals in the summary statistics: `G`, its start times, `θ`,
    /// its start times, and [`SCALAR_UNITS`] counters.
    pub fn memory_footprint(&self) -> usize {
        self.g.len() + self.start.len() + self.density.stored_units() + SCALAR_UNITS
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let (theta, theta_start) = match self.density.sketch() {
            Some(s) => (s.theta().to_vec(), s.start().to_vec()),
            None => (Vec::new(), Vec::new()),
        };
        Checkpoint {
            version: CHECKPOINT_VERSION,
            n: self.n,
            batches: self.batches,
            config: self.config,
            g: self.g.clone(),
            start: self.start.clone(),
            theta,
            theta_start,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        let mut r = Self::new(ck.config)?;
        if ck.g.len() != ck.start.len() {
            return Err(Error::Checkpoint("G and start lengths differ".into()));
        }
        let expected = if ck.n == 0 { 0 } else { ck.config.schedule.open_count(ck.n) };
        if ck.g.len() != expected {
            return Err(Error::Checkpoint(format!(
                "slot count {} inconsistent with schedule ({expected}) at n = {}",
                ck.g.len(),
                ck.n
            )));
        }
        for (j, s) in ck.start.iter().enumerate() {
            if *s != ck.config.schedule.start_time(j + 1) {
                return Err(Error::Checkpoint(format!("slot {} has wrong start {s}", j + 1)));
            }
        }
        if ck.g.iter().chain(&ck.theta).any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint("non-finite summary value".into()));
        }
        r.density = match ck.config.density {
            DensityConfig::KnownUniform => {
                if !ck.theta.is_empty() || !ck.theta_start.is_empty() {
                    return Err(Error::Checkpoint("known-density checkpoint carries a sketch".into()));
                }
                DensityModel::KnownUniform
            }
            DensityConfig::Sketch { basis } => DensityModel::Sketch(DensityState::from_parts(
                basis,
                ck.config.schedule,
                ck.theta.clone(),
                ck.theta_start.clone(),
                ck.n,
            )?),
        };
        r.g = ck.g.clone();
        r.start = ck.start.clone();
        r.n = ck.n;
        r.batches = ck.batches;
        Ok(r)
    }
}

/// Everything needed to resume ingestion bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub n: u64,
    pub batches: u64,
    pub config: RegressorConfig,
    pub g: Vec<f64>,
    pub start: Vec<u64>,
    pub theta: Vec<f64>,
    pub theta_start: Vec<u64>,
}

impl Checkpoint {
    /// Reals carried by the record, excluding the public configuration.
    pub fn real_count(&self) -> usize {
        self.g.len() + self.start.len() + self.theta.len() + self.theta_start.len() + SCALAR_UNITS
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Cholesky solve of an SPD system; on failure reports the smallest eigenvalue.
pub fn spd_solve(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    match a.clone().cholesky() {
        Some(ch) => {
            let x = ch.solve(b);
            if x.iter().all(|v| v.is_finite()) {
                Ok(x)
            } else {
                Err(Error::IllConditioned { min_eigenvalue: a.symmetric_eigenvalues().min() })
            }
        }
        None => Err(Error::IllConditioned { min_eigenvalue: a.symmetric_eigenvalues().min() }),
    }
}

/// `n × q` design matrix `Φ_{ij} = φ_j(T_i)`.
pub fn design_matrix(basis: &BasisSpec, ts: &[f64], q: usize) -> DMatrix<f64> {
    let mut phi = DMatrix::<f64>::zeros(ts.len(), q);
    let mut buf = vec![0.0; q];
    for (i, &t) in ts.iter().enumerate() {
        basis.eval_into(t, &mut buf);
        for j in 0..q {
            phi[(i, j)] = buf[j];
        }
    }
    phi
}

/// Empirical Gram `n⁻¹ ΦᵀΦ`.
pub fn empirical_gram(basis: &BasisSpec, ts: &[f64], q: usize) -> DMatrix<f64> {
    let phi = design_matrix(basis, ts, q);
    phi.tr_mul(&phi) / ts.len() as f64
}

/// Non-streaming penalized fit `(n⁻¹ΦᵀΦ + ρW)⁻¹ n⁻¹ΦᵀY` on the full sample.
pub fn batch_fit(
    basis: &BasisSpec,
    penalty: &PenaltySpec,
    ts: &[f64],
    ys: &[f64],
    q: usize,
    rho: f64,
) -> Result<Fit> {
    if ts.is_empty() || ts.len() != ys.len() {
        return Err(Error::Domain("batch fit needs equally many (>= 1) t and y values".into()));
    }
    if q < 1 {
        return Err(Error::Domain("basis size must be >= 1".into()));
    }
    for &t in ts {
        basis.check_point(t)?;
    }
    let phi = design_matrix(basis, ts, q);
    let n = ts.len() as f64;
    let gram = phi.tr_mul(&phi) / n;
    let rhs = phi.tr_mul(&DVector::from_column_slice(ys)) / n;
    let a = gram + penalty.matrix(basis, q) * rho;
    let coef = spd_solve(a, &rhs)?;
    Ok(Fit::new(*basis, coef.iter().copied().collect()))
}

/// Accumulates `ΦᵀΦ` and `ΦᵀY` for a fixed number of columns without
/// retaining observations; leading sub-blocks give the batch fit for any
/// smaller `q`. Used as the full-information baseline in experiments.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    basis: BasisSpec,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    n: u64,
}

impl NormalEquations {
    pub fn new(basis: BasisSpec, max_q: usize) -> Self {
        Self { basis, xtx: DMatrix::zeros(max_q, max_q), xty: DVector::zeros(max_q), n: 0 }
    }

    pub fn max_q(&self) -> usize {
        self.xty.len()
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn ingest(&mut self, batch: &StreamBatch) -> Result<()> {
        for &t in &batch.t {
            self.basis.check_point(t)?;
        }
        let phi = design_matrix(&self.basis, &batch.t, self.max_q());
        self.xtx += phi.tr_mul(&phi);
        self.xty += phi.tr_mul(&DVector::from_column_slice(&batch.y));
        self.n += batch.len() as u64;
        Ok(())
    }

    pub fn solve(&self, penalty: &PenaltySpec, q: usize, rho: f64) -> Result<Fit> {
        if self.n == 0 {
            return Err(Error::State("no observations ingested".into()));
        }
        if q > self.max_q() || q == 0 {
            return Err(Error::Config(format!("q = {q} outside 1..={}", self.max_q())));
        }
        let n = self.n as f64;
        let gram = self.xtx.view((0, 0), (q, q)).into_owned() / n;
        let rhs = self.xty.rows(0, q).into_owned() / n;
        let coef = spd_solve(gram + penalty.matrix(&self.basis, q) * rho, &rhs)?;
        Ok(Fit::new(self.basis, coef.iter().copied().collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_config() -> RegressorConfig {
        RegressorConfig::new(0.0, 1.0).unwrap()
    }

    fn periodic_known(q0: usize) -> RegressorConfig {
        RegressorConfig {
            basis: BasisSpec::fourier(0.0, 1.0).unwrap(),
            density: DensityConfig::KnownUniform,
            schedule: SchedulerConfig { q0, c_q: f64::MAX, ..Default::default() },
            ..unit_config()
        }
    }

    #[test]
    fn first_point_fills_initial_slots() {
        let mut r = Regressor::new(unit_config()).unwrap();
        r.ingest(&StreamBatch::from_pairs(&[(0.5, 2.0)])).unwrap();
        assert_eq!(r.g().len(), 5);
        for j in 0..5 {
            assert_abs_diff_eq!(r.g()[j], 2.0 * r.config().basis.eval_unchecked(j + 1, 0.5), epsilon = 1e-15);
        }
        assert_eq!(r.start(), &[1, 1, 1, 1, 1]);
    }

    #[test]
    fn sixth_slot_accumulates_from_its_start() {
        let cfg = unit_config();
        let tau6 = cfg.schedule.start_time(6);
        assert_eq!(tau6, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<(f64, f64)> = (0..20).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
        let mut r = Regressor::new(cfg).unwrap();
        r.ingest(&StreamBatch::from_pairs(&pts[..7])).unwrap();
        r.ingest(&StreamBatch::from_pairs(&pts[7..20])).unwrap();
        assert_eq!(r.g().len(), 6);
        let oracle: f64 = pts[(tau6 - 1) as usize..]
            .iter()
            .map(|(t, y)| cfg.basis.eval_unchecked(6, *t) * y)
            .sum();
        assert_abs_diff_eq!(r.g()[5], oracle, epsilon = 1e-13);
        assert_eq!(r.slot_count(5), 20 - 13 + 1);
    }

    #[test]
    fn rejected_batch_is_atomic() {
        let mut r = Regressor::new(unit_config()).unwrap();
        r.ingest(&StreamBatch::from_pairs(&[(0.2, 1.0), (0.4, 2.0)])).unwrap();
        let before = r.checkpoint();
        assert!(r.ingest(&StreamBatch::from_pairs(&[(0.3, 1.0), (1.2, 0.0)])).is_err());
        assert!(r.ingest(&StreamBatch::from_pairs(&[(0.3, f64::NAN)])).is_err());
        assert!(r.ingest(&StreamBatch::default()).is_err());
        assert_eq!(r.checkpoint(), before);
    }

    #[test]
    fn constant_basis_recovers_sample_mean() {
        let mut r = Regressor::new(periodic_known(1)).unwrap();
        let ys = [1.0, 4.0, -2.0, 3.5];
        let pts: Vec<(f64, f64)> = ys.iter().enumerate().map(|(i, &y)| (0.1 + 0.2 * i as f64, y)).collect();
        r.ingest(&StreamBatch::from_pairs(&pts)).unwrap();
        let mean = ys.iter().sum::<f64>() / 4.0;
        assert_abs_diff_eq!(r.estimate(0.0, 0.37).unwrap(), mean, epsilon = 1e-14);
        let fit = batch_fit(&r.config().basis, &PenaltySpec::roughness(), &pts.iter().map(|p| p.0).collect::<Vec<_>>(), &ys, 1, 0.0).unwrap();
        assert_abs_diff_eq!(fit.eval(0.8), mean, epsilon = 1e-14);
    }

    #[test]
    fn strong_ridge_shrinks_to_zero() {
        let mut cfg = periodic_known(5);
        cfg.penalty = PenaltySpec::identity();
        let mut r = Regressor::new(cfg).unwrap();
        r.ingest(&StreamBatch::from_pairs(&[(0.1, 3.0), (0.6, 1.0), (0.9, 2.0)])).unwrap();
        let norms: Vec<f64> = [1.0, 1e3, 1e6, 1e9]
            .iter()
            .map(|&rho| r.solve(rho).unwrap().coefficients().iter().map(|a| a * a).sum::<f64>().sqrt())
            .collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0]));
        assert!(norms[3] < 1e-8);
    }

    #[test]
    fn normal_equations_residual_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ts: Vec<f64> = (0..50).map(|_| rng.random()).collect();
        let ys: Vec<f64> = (0..50).map(|_| rng.random::<f64>() - 0.5).collect();
        let basis = BasisSpec::fourier(0.0, 1.0).unwrap();
        let fit = batch_fit(&basis, &PenaltySpec::roughness(), &ts, &ys, 9, 0.0).unwrap();
        let phi = design_matrix(&basis, &ts, 9);
        let a = DVector::from_column_slice(fit.coefficients());
        let resid = phi.tr_mul(&DVector::from_column_slice(&ys)) - phi.tr_mul(&phi) * a;
        assert!(resid.amax() < 1e-8, "{}", resid.amax());
    }

    #[test]
    fn singular_system_reports_eigenvalue() {
        let basis = BasisSpec::fourier(0.0, 1.0).unwrap();
        // two points cannot determine nine coefficients without a penalty
        let err = batch_fit(&basis, &PenaltySpec::identity(), &[0.1, 0.2], &[1.0, 2.0], 9, 0.0).unwrap_err();
        assert!(matches!(err, Error::IllConditioned { .. }), "{err:?}");
    }

    #[test]
    fn estimate_before_data_is_a_state_error() {
        let r = Regressor::new(unit_config()).unwrap();
        assert!(matches!(r.estimate(0.1, 0.5), Err(Error::State(_))));
        assert_eq!(r.active_count(), 0);
    }

    #[test]
    fn warmup_rho_floor_keeps_early_system_solvable() {
        let mut r = Regressor::new(unit_config()).unwrap();
        r.ingest(&StreamBatch::from_pairs(&[(0.5, 1.0)])).unwrap();
        assert!(r.estimate(0.0, 0.5).is_ok());
    }

    #[test]
    fn memory_of_fresh_state() {
        let mut r = Regressor::new(unit_config()).unwrap();
        assert_eq!(r.memory_footprint(), SCALAR_UNITS);
        r.ingest(&StreamBatch::from_pairs(&[(0.5, 1.0)])).unwrap();
        assert_eq!(r.memory_footprint(), 5 + 5 + 10 + SCALAR_UNITS);
    }

    #[test]
    fn cache_is_invalidated_by_ingest() {
        let mut r = Regressor::new(periodic_known(3)).unwrap();
        r.ingest(&StreamBatch::from_pairs(&[(0.1, 1.0), (0.5, 1.0), (0.7, 1.0)])).unwrap();
        let a = r.fit(0.0).unwrap();
        assert!(Arc::ptr_eq(&a, &r.fit(0.0).unwrap()));
        r.ingest(&StreamBatch::from_pairs(&[(0.3, 5.0)])).unwrap();
        assert!(!Arc::ptr_eq(&a, &r.fit(0.0).unwrap()));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut r = Regressor::new(unit_config()).unwrap();
        for _ in 0..7 {
            let pts: Vec<(f64, f64)> = (0..37).map(|_| (rng.random(), rng.random::<f64>() * 10.0 - 5.0)).collect();
            r.ingest(&StreamBatch::from_pairs(&pts)).unwrap();
        }
        let ck = r.checkpoint();
        assert_eq!(ck.real_count(), r.memory_footprint());
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        let resumed = Regressor::from_checkpoint(&back).unwrap();
        assert_eq!(resumed.checkpoint(), ck);
        for (a, b) in resumed.g().iter().zip(r.g()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn corrupt_checkpoint_is_rejected() {
        let mut r = Regressor::new(unit_config()).unwrap();
        r.ingest(&StreamBatch::from_pairs(&[(0.5, 1.0); 40])).unwrap();
        let mut ck = r.checkpoint();
        ck.g.pop();
        assert!(matches!(Regressor::from_checkpoint(&ck), Err(Error::Checkpoint(_))));
        let mut ck = r.checkpoint();
        ck.start[0] = 3;
        assert!(Regressor::from_checkpoint(&ck).is_err());
        let mut ck = r.checkpoint();
        ck.theta.push(0.0);
        assert!(Regressor::from_checkpoint(&ck).is_err());
        assert!(Checkpoint::from_json("{not json").is_err());
    }
}
