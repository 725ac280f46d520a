//! One-pass orthogonal-series density estimation of the predictor density.
//!
//! The sketch keeps one running mean `θ_j = n_j⁻¹ Σ_{i ≥ τ_j} ψ_j(T_i)` per
//! slot, where slots open on the same pre-estimation schedule as the
//! regression summary. The estimate is `f̂(t) = Σ_{j ≤ p} θ_j ψ_j(t)` over
//! the active slots. For Gram reconstruction the clipped and renormalized
//! density `max{0, f̂}/∫max{0, f̂}` is used so the result is always PSD.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{weighted_gram, BasisSpec};
use crate::error::{Error, Result};
use crate::quadrature::{integrate_converged, node_count, CompositeRule};
use crate::schedule::SchedulerConfig;
use crate::slots;

/// Node doublings attempted when reconstructing a Gram matrix.
const GRAM_MAX_DOUBLINGS: usize = 6;
const GRAM_TOL: f64 = 1e-8;

/// Streaming density sketch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityState {
    basis: BasisSpec,
    schedule: SchedulerConfig,
    theta: Vec<f64>,
    start: Vec<u64>,
    n: u64,
}

impl DensityState {
    pub fn new(basis: BasisSpec, schedule: SchedulerConfig) -> Result<Self> {
        basis.validate()?;
        schedule.validate()?;
        Ok(Self { basis, schedule, theta: Vec::new(), start: Vec::new(), n: 0 })
    }

    /// Rebuilds a sketch from stored parts, checking their consistency.
    pub fn from_parts(
        basis: BasisSpec,
        schedule: SchedulerConfig,
        theta: Vec<f64>,
        start: Vec<u64>,
        n: u64,
    ) -> Result<Self> {
        let state = Self::new(basis, schedule)?;
        if theta.len() != start.len() {
            return Err(Error::Checkpoint("theta and theta_start lengths differ".into()));
        }
        let expected = if n == 0 { 0 } else { schedule.open_count(n) };
        if theta.len() != expected {
            return Err(Error::Checkpoint(format!(
                "density slot count {} does not match schedule ({expected}) at n = {n}",
                theta.len()
            )));
        }
        for (j, s) in start.iter().enumerate() {
            if *s != schedule.start_time(j + 1) {
                return Err(Error::Checkpoint(format!("density slot {} has wrong start {s}", j + 1)));
            }
        }
        Ok(Self { theta, start, n, ..state })
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    pub fn schedule(&self) -> &SchedulerConfig {
        &self.schedule
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn start(&self) -> &[u64] {
        &self.start
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// Number of slots used by the estimate (`p`).
    pub fn active_count(&self) -> usize {
        if self.n == 0 {
            return 0;
        }
        self.schedule.active_count(self.n).min(self.theta.len())
    }

    /// Per-slot sample count `n_j = n - τ_j + 1` (0 for unopened slots).
    pub fn slot_count(&self, j: usize) -> u64 {
        match self.start.get(j) {
            Some(&s) if self.n >= s => self.n - s + 1,
            _ => 0,
        }
    }

    /// Folds a batch of predictor values into the sketch. The batch is
    /// validated first; on error the state is unchanged.
    pub fn update(&mut self, ts: &[f64]) -> Result<()> {
        if ts.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        for &t in ts {
            self.basis.check_point(t)?;
        }
        let n_old = self.n;
        let n_new = n_old + ts.len() as u64;
        let batch = slots::accumulate(&self.schedule, &self.basis, self.theta.len(), n_old, ts, None);
        for s in batch.opened {
            self.theta.push(0.0);
            self.start.push(s);
        }
        for (j, sum) in batch.sums.iter().enumerate() {
            let start = self.start[j];
            let old = n_old.saturating_sub(start - 1);
            let new = n_new - start + 1;
            self.theta[j] = (old as f64 * self.theta[j] + sum) / new as f64;
        }
        self.n = n_new;
        Ok(())
    }

    fn require_active(&self) -> Result<usize> {
        let p = self.active_count();
        if p == 0 {
            return Err(Error::State("density sketch has no active slot".into()));
        }
        Ok(p)
    }

    /// `f̂(t)` over the active slots.
    pub fn eval(&self, t: f64) -> Result<f64> {
        self.basis.check_point(t)?;
        let p = self.require_active()?;
        Ok(raw_eval(&self.basis, &self.theta[..p], t))
    }

    /// Clipped and renormalized snapshot of the estimate.
    pub fn normalized(&self) -> Result<NormalizedDensity> {
        let p = self.require_active()?;
        NormalizedDensity::new(self.basis, self.theta[..p].to_vec())
    }

    /// `max{0, f̂(t)} / ∫ max{0, f̂}`.
    pub fn eval_normalized(&self, t: f64) -> Result<f64> {
        self.basis.check_point(t)?;
        Ok(self.normalized()?.eval(t))
    }

    /// `Ĥ_{jl} = ∫ φ_j φ_l f̂_norm` on the data interval for `j, l ≤ q`.
    pub fn gram_matrix(&self, reg_basis: &BasisSpec, q: usize) -> Result<DMatrix<f64>> {
        let dens = self.normalized()?;
        dens.gram_matrix(reg_basis, q)
    }
}

fn raw_eval(basis: &BasisSpec, theta: &[f64], t: f64) -> f64 {
    let mut buf = vec![0.0; theta.len()];
    basis.eval_into(t, &mut buf);
    buf.iter().zip(theta).map(|(a, b)| a * b).sum()
}

/// `∫_lo^hi max{0, f}`, failing with [`Error::DegenerateDensity`] when it is not positive.
pub fn positive_part_integral<F: Fn(f64) -> f64>(lo: f64, hi: f64, min_nodes: usize, f: F) -> Result<f64> {
    let z = integrate_converged(lo, hi, min_nodes, 1e-10, |t| f(t).max(0.0))?;
    if !(z > 0.0) {
        return Err(Error::DegenerateDensity(z));
    }
    Ok(z)
}

/// Sign changes of `f` on `[lo, hi]`, located by a scan over `grid` cells
/// followed by bisection.
fn sign_changes<F: Fn(f64) -> f64>(lo: f64, hi: f64, grid: usize, f: F) -> Vec<f64> {
    let step = (hi - lo) / grid as f64;
    let mut roots = Vec::new();
    let mut a = lo;
    let mut fa = f(a);
    for i in 1..=grid {
        let b = if i == grid { hi } else { lo + i as f64 * step };
        let fb = f(b);
        if (fa < 0.0) != (fb < 0.0) {
            let (mut x0, mut x1, mut f0) = (a, b, fa);
            for _ in 0..200 {
                let mid = 0.5 * (x0 + x1);
                if mid <= x0 || mid >= x1 {
                    break;
                }
                let fm = f(mid);
                if (fm < 0.0) == (f0 < 0.0) {
                    x0 = mid;
                    f0 = fm;
                } else {
                    x1 = mid;
                }
            }
            roots.push(0.5 * (x0 + x1));
        }
        a = b;
        fa = fb;
    }
    roots
}

/// Immutable clipped-and-renormalized density `max{0, f̂}/Z`.
///
/// Zero crossings of `f̂` are located once; all quadratures over this
/// density split their panels there so the clipping kink does not slow
/// convergence.
#[derive(Debug, Clone)]
pub struct NormalizedDensity {
    basis: BasisSpec,
    theta: Vec<f64>,
    breaks: Vec<f64>,
    z: f64,
}

impl NormalizedDensity {
    /// Normalizes the series with coefficients `theta` in `basis`.
    pub fn new(basis: BasisSpec, theta: Vec<f64>) -> Result<Self> {
        let p = theta.len().max(1);
        let raw = |t: f64| raw_eval(&basis, &theta, t);
        let breaks = sign_changes(basis.lo, basis.hi, 1024.max(16 * p), raw);
        let nodes = node_count(p, p);
        let mut rule = CompositeRule::with_breakpoints(basis.lo, basis.hi, &breaks, nodes);
        let mut prev = rule.integrate(|t| raw(t).max(0.0));
        let mut z = None;
        for k in 1..=GRAM_MAX_DOUBLINGS {
            rule = CompositeRule::with_breakpoints(basis.lo, basis.hi, &breaks, nodes << k);
            let next = rule.integrate(|t| raw(t).max(0.0));
            if (next - prev).abs() <= 1e-12 * next.abs().max(1.0) {
                z = Some(next);
                break;
            }
            prev = next;
        }
        let z = z.ok_or_else(|| Error::Numerical("density normalizer did not settle".into()))?;
        if !(z > 0.0) {
            return Err(Error::DegenerateDensity(z));
        }
        Ok(Self { basis, theta, breaks, z })
    }

    pub fn normalizer(&self) -> f64 {
        self.z
    }

    /// Interior points where the unclipped series changes sign.
    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    pub fn eval(&self, t: f64) -> f64 {
        raw_eval(&self.basis, &self.theta, t).max(0.0) / self.z
    }

    /// Gram matrix of `reg_basis` weighted by this density, refined by node
    /// doubling until successive results agree to `1e-8`.
    pub fn gram_matrix(&self, reg_basis: &BasisSpec, q: usize) -> Result<DMatrix<f64>> {
        if q < 1 {
            return Err(Error::Domain("basis size must be >= 1".into()));
        }
        let nodes = node_count(q, self.theta.len());
        let rule_for = |k: usize| {
            CompositeRule::with_breakpoints(reg_basis.lo, reg_basis.hi, &self.breaks, nodes << k)
        };
        let mut prev = weighted_gram(reg_basis, q, &rule_for(0), |t| self.eval(t));
        for k in 1..=GRAM_MAX_DOUBLINGS {
            let next = weighted_gram(reg_basis, q, &rule_for(k), |t| self.eval(t));
            let diff = (&next - &prev).amax();
            if diff <= GRAM_TOL {
                return Ok(next);
            }
            prev = next;
        }
        Err(Error::Numerical("Gram reconstruction did not settle under node doubling".into()))
    }
}

/// How the engine obtains the Gram matrix `Ĥ_q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DensityModel {
    /// The predictor is known to be uniform on the data interval.
    KnownUniform,
    /// The density is estimated by a streaming sketch.
    Sketch(DensityState),
}

impl DensityModel {
    pub fn update(&mut self, ts: &[f64]) -> Result<()> {
        match self {
            DensityModel::KnownUniform => Ok(()),
            DensityModel::Sketch(s) => s.update(ts),
        }
    }

    pub fn sketch(&self) -> Option<&DensityState> {
        match self {
            DensityModel::KnownUniform => None,
            DensityModel::Sketch(s) => Some(s),
        }
    }

    /// Stored reals held by the model (θ and its start vector).
    pub fn stored_units(&self) -> usize {
        match self {
            DensityModel::KnownUniform => 0,
            DensityModel::Sketch(s) => s.theta.len() + s.start.len(),
        }
    }

    pub fn gram_matrix(&self, reg_basis: &BasisSpec, q: usize) -> Result<DMatrix<f64>> {
        match self {
            DensityModel::KnownUniform => {
                let inv_width = 1.0 / reg_basis.width();
                if reg_basis.extension_margin == 0.0 {
                    Ok(DMatrix::identity(q, q) * inv_width)
                } else {
                    let rule = reg_basis.rule(q, q);
                    let mut g = weighted_gram(reg_basis, q, &rule, |_| inv_width);
                    let refined = weighted_gram(reg_basis, q, &rule.refined(), |_| inv_width);
                    if (&refined - &g).amax() > GRAM_TOL {
                        return Err(Error::Numerical("uniform Gram did not settle".into()));
                    }
                    g = refined;
                    Ok(g)
                }
            }
            DensityModel::Sketch(s) => s.gram_matrix(reg_basis, q),
        }
    }

    /// Density value at `t` (normalized for the sketch).
    pub fn eval(&self, reg_basis: &BasisSpec, t: f64) -> Result<f64> {
        match self {
            DensityModel::KnownUniform => {
                reg_basis.check_point(t)?;
                Ok(1.0 / reg_basis.width())
            }
            DensityModel::Sketch(s) => s.eval_normalized(t),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_state() -> DensityState {
        DensityState::new(BasisSpec::fourier(0.0, 1.0).unwrap(), SchedulerConfig::default()).unwrap()
    }

    #[test]
    fn constant_slot_averages_to_one() {
        let mut s = DensityState::new(
            BasisSpec::fourier(0.0, 1.0).unwrap(),
            SchedulerConfig { q0: 1, ..Default::default() },
        )
        .unwrap();
        s.update(&[0.1, 0.2, 0.3, 0.9, 0.55]).unwrap();
        assert_abs_diff_eq!(s.theta()[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn running_mean_arithmetic() {
        // A slot holding θ = 0.4 over 10 observations absorbs a batch whose
        // slot sum is 6 over 5 observations.
        let old = 0.4;
        let merged = (10.0 * old + 6.0) / 15.0;
        assert_abs_diff_eq!(merged, 2.0 / 3.0, epsilon = 1e-15);
        // Same arithmetic through the sketch: ψ_1 ≡ 1 with a width-1/2.5 domain
        // makes every point contribute 1/√P.
        let b = BasisSpec::fourier(0.0, 2.5).unwrap();
        let mut s = DensityState::new(b, SchedulerConfig { q0: 1, ..Default::default() }).unwrap();
        s.update(&[0.5; 10]).unwrap();
        s.update(&[1.0; 5]).unwrap();
        assert_abs_diff_eq!(s.theta()[0], 1.0 / 2.5f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn out_of_domain_batch_leaves_state_unchanged() {
        let mut s = unit_state();
        s.update(&[0.2, 0.3]).unwrap();
        let before = s.clone();
        assert!(matches!(s.update(&[0.5, 1.5]), Err(Error::Domain(_))));
        assert_eq!(s, before);
        assert!(s.update(&[]).is_err());
    }

    #[test]
    fn replay_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = unit_state();
        let mut all = Vec::new();
        for _ in 0..40 {
            let b = rng.random_range(1..80);
            let batch: Vec<f64> = (0..b).map(|_| rng.random::<f64>()).collect();
            all.extend_from_slice(&batch);
            s.update(&batch).unwrap();
        }
        assert_eq!(s.n(), all.len() as u64);
        for (j, (&theta, &start)) in s.theta().iter().zip(s.start()).enumerate() {
            let terms: Vec<f64> = all[(start - 1) as usize..]
                .iter()
                .map(|&t| s.basis().eval_unchecked(j + 1, t))
                .collect();
            let mean = terms.iter().sum::<f64>() / terms.len() as f64;
            let scale = terms.iter().map(|v| v.abs()).sum::<f64>() / terms.len() as f64;
            assert!((theta - mean).abs() <= 1e-10 * scale.max(1e-300), "slot {j}");
        }
    }

    #[test]
    fn uniform_data_with_one_slot_is_flat() {
        let mut s = DensityState::new(
            BasisSpec::fourier(0.0, 1.0).unwrap(),
            SchedulerConfig { q0: 1, c_q: 1e6, ..Default::default() },
        )
        .unwrap();
        s.update(&[0.1, 0.7, 0.4]).unwrap();
        assert_eq!(s.active_count(), 1);
        assert_abs_diff_eq!(s.eval(0.33).unwrap(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.eval_normalized(0.9).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn eval_requires_active_slot() {
        let s = unit_state();
        assert!(matches!(s.eval(0.5), Err(Error::State(_))));
    }

    #[test]
    fn direct_evaluation_of_two_coefficients() {
        let b = BasisSpec::fourier(0.0, 1.0).unwrap();
        assert_abs_diff_eq!(raw_eval(&b, &[1.0, 0.5], 0.0), 1.0 + 0.5 * 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn normalization_of_a_linear_series() {
        // f̂(t) = 2t - 0.5 on [0,1]: 0.75·φ_1 plus the projection of 2t - 1.25
        // is awkward in a Fourier basis, so test the normalizer on a series
        // whose positive part is known: f̂ = 0.2 + √2 cos(2πt).
        let b = BasisSpec::fourier(0.0, 1.0).unwrap();
        let d = NormalizedDensity::new(b, vec![0.2, 1.0]).unwrap();
        // ∫ max{0, 0.2 + √2 cos 2πt}: positive where cos > -0.2/√2.
        let c = (-0.2 / 2f64.sqrt()).acos();
        let oracle = (0.2 * 2.0 * c + 2.0 * 2f64.sqrt() * c.sin()) / (2.0 * std::f64::consts::PI);
        assert_abs_diff_eq!(d.normalizer(), oracle, epsilon = 1e-10);
        assert_eq!(d.breakpoints().len(), 2);
        let total = CompositeRule::with_breakpoints(0.0, 1.0, d.breakpoints(), 1024).integrate(|t| d.eval(t));
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
        let total = integrate_converged(0.0, 1.0, 512, 1e-10, |t| d.eval(t)).unwrap();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn positive_part_of_a_line() {
        // ∫₀¹ max{0, 2t - 0.5} = 9/16
        let z = positive_part_integral(0.0, 1.0, 512, |t| 2.0 * t - 0.5).unwrap();
        assert_abs_diff_eq!(z, 9.0 / 16.0, epsilon = 1e-9);
        assert!(matches!(
            positive_part_integral(0.0, 1.0, 512, |_| -1.0),
            Err(Error::DegenerateDensity(_))
        ));
    }

    #[test]
    fn nonpositive_series_is_degenerate() {
        let b = BasisSpec::fourier(0.0, 1.0).unwrap();
        assert!(matches!(NormalizedDensity::new(b, vec![-1.0]), Err(Error::DegenerateDensity(_))));
    }

    #[test]
    fn known_uniform_gram_is_identity() {
        let b = BasisSpec::fourier(0.0, 1.0).unwrap();
        let g = DensityModel::KnownUniform.gram_matrix(&b, 3).unwrap();
        assert_eq!(g, DMatrix::identity(3, 3));
    }

    #[test]
    fn flat_sketch_gram_matches_extended_basis_quadrature() {
        let reg = BasisSpec::new(crate::basis::BasisFamily::Fourier, 0.0, 1.0, 0.1).unwrap();
        let d = NormalizedDensity::new(BasisSpec::fourier(0.0, 1.0).unwrap(), vec![1.0]).unwrap();
        let g = d.gram_matrix(&reg, 2).unwrap();
        // Oracle: Simpson's rule on 4096 intervals of the direct formula.
        let n = 4096;
        let h = 1.0 / n as f64;
        for r in 1..=2 {
            for c in 1..=2 {
                let f = |t: f64| reg.eval_unchecked(r, t) * reg.eval_unchecked(c, t);
                let mut s = f(0.0) + f(1.0);
                for i in 1..n {
                    s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
                }
                assert_abs_diff_eq!(g[(r - 1, c - 1)], s * h / 3.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn sketch_gram_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = unit_state();
        let batch: Vec<f64> = (0..500).map(|_| rng.random::<f64>().powi(2)).collect();
        s.update(&batch).unwrap();
        let reg = BasisSpec::fourier_extended(0.0, 1.0).unwrap();
        let g = s.gram_matrix(&reg, 12).unwrap();
        let eig = g.symmetric_eigenvalues();
        assert!(eig.min() >= -1e-8, "{}", eig.min());
        assert_eq!(g, g.transpose());
    }
}
