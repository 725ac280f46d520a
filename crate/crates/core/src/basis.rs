//! Orthonormal basis families, penalty matrices and approximation diagnostics.
//!
//! The only family implemented is the trigonometric (Fourier) system. On an
//! interval of length `P` it is
//!
//! ```text
//! φ_1(t)    = 1/√P
//! φ_{2k}(t)   = √(2/P) cos(2kπ (t - a) / P)
//! φ_{2k+1}(t) = √(2/P) sin(2kπ (t - a) / P)
//! ```
//!
//! which is orthonormal in `L²` over one period. With an extension margin
//! `δ > 0` the period becomes `[lo - δ, hi + δ]` while data and evaluation
//! stay on `[lo, hi]`; the functions are then no longer orthonormal on the
//! data interval, which the engine absorbs through its Gram reconstruction.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{node_count, CompositeRule};

/// Basis families known to the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisFamily {
    Fourier,
}

/// An orthonormal family on a (possibly extended) interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub family: BasisFamily,
    pub lo: f64,
    pub hi: f64,
    /// Fourier extension margin `δ` in data units; `0` means periodic on `[lo, hi]`.
    pub extension_margin: f64,
}

/// Relative margin used by [`BasisSpec::fourier_extended`].
pub const DEFAULT_EXTENSION_FRACTION: f64 = 0.1;

impl BasisSpec {
    /// Periodic Fourier basis on `[lo, hi]`.
    pub fn fourier(lo: f64, hi: f64) -> Result<Self> {
        Self::new(BasisFamily::Fourier, lo, hi, 0.0)
    }

    /// Fourier basis extended by `0.1 (hi - lo)` on both sides.
    pub fn fourier_extended(lo: f64, hi: f64) -> Result<Self> {
        Self::new(BasisFamily::Fourier, lo, hi, DEFAULT_EXTENSION_FRACTION * (hi - lo))
    }

    pub fn new(family: BasisFamily, lo: f64, hi: f64, extension_margin: f64) -> Result<Self> {
        let spec = Self { family, lo, hi, extension_margin };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::Config(format!(
                "basis domain must satisfy lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        if !(self.extension_margin.is_finite() && self.extension_margin >= 0.0) {
            return Err(Error::Config(format!(
                "extension margin must be finite and >= 0, got {}",
                self.extension_margin
            )));
        }
        Ok(())
    }

    /// Length of the period on which the family is orthonormal.
    pub fn period(&self) -> f64 {
        self.hi - self.lo + 2.0 * self.extension_margin
    }

    fn origin(&self) -> f64 {
        self.lo - self.extension_margin
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.lo && t <= self.hi
    }

    pub fn check_point(&self, t: f64) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "t = {t} outside domain [{}, {}]",
                self.lo, self.hi
            )))
        }
    }

    /// Angular frequency `2kπ/P` of basis function `j` (0 for the constant).
    pub fn frequency(&self, j: usize) -> f64 {
        (j / 2) as f64 * 2.0 * PI / self.period()
    }

    /// `φ_j(t)` for `j ≥ 1`.
    pub fn eval(&self, j: usize, t: f64) -> Result<f64> {
        if j < 1 {
            return Err(Error::Domain("basis index must be >= 1".into()));
        }
        self.check_point(t)?;
        Ok(self.eval_unchecked(j, t))
    }

    /// `φ_j(t)` without domain checks; valid for any real `t`.
    pub fn eval_unchecked(&self, j: usize, t: f64) -> f64 {
        let p = self.period();
        match self.family {
            BasisFamily::Fourier => {
                if j == 1 {
                    return 1.0 / p.sqrt();
                }
                let arg = self.frequency(j) * (t - self.origin());
                let amp = (2.0 / p).sqrt();
                if j.is_multiple_of(2) {
                    amp * arg.cos()
                } else {
                    amp * arg.sin()
                }
            }
        }
    }

    /// `(φ_1(t), …, φ_q(t))`.
    pub fn eval_vector(&self, q: usize, t: f64) -> Result<Vec<f64>> {
        if q < 1 {
            return Err(Error::Domain("basis size must be >= 1".into()));
        }
        self.check_point(t)?;
        let mut out = vec![0.0; q];
        self.eval_into(t, &mut out);
        Ok(out)
    }

    /// Fills `out[j-1] = φ_j(t)` for `j = 1..=out.len()` without domain checks.
    ///
    /// Uses the angle-addition recurrence, so the cost is one `sin_cos` per
    /// call regardless of `out.len()`.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        if out.is_empty() {
            return;
        }
        let p = self.period();
        match self.family {
            BasisFamily::Fourier => {
                out[0] = 1.0 / p.sqrt();
                let amp = (2.0 / p).sqrt();
                let (s1, c1) = (2.0 * PI * (t - self.origin()) / p).sin_cos();
                let (mut s, mut c) = (s1, c1);
                let mut j = 1;
                while j < out.len() {
                    out[j] = amp * c;
                    if j + 1 < out.len() {
                        out[j + 1] = amp * s;
                    }
                    let next_c = c * c1 - s * s1;
                    let next_s = s * c1 + c * s1;
                    c = next_c;
                    s = next_s;
                    j += 2;
                }
            }
        }
    }

    /// `φ_j''(t)`.
    pub fn second_derivative_unchecked(&self, j: usize, t: f64) -> f64 {
        let w = self.frequency(j);
        -w * w * self.eval_unchecked(j, t)
    }

    /// Quadrature rule on the data interval sized for `q + p` basis functions.
    pub fn rule(&self, q: usize, p: usize) -> CompositeRule {
        CompositeRule::new(self.lo, self.hi, node_count(q, p))
    }

    /// `max_t Σ_{j≤q} φ_j(t)²` over a uniform grid of `grid_size` points on `[lo, hi]`.
    pub fn sup_sum_squares(&self, q: usize, grid_size: usize) -> Result<f64> {
        if grid_size < 2 {
            return Err(Error::Config("grid_size must be >= 2".into()));
        }
        if q < 1 {
            return Err(Error::Domain("basis size must be >= 1".into()));
        }
        let mut buf = vec![0.0; q];
        let step = self.width() / (grid_size - 1) as f64;
        let mut best = f64::NEG_INFINITY;
        for i in 0..grid_size {
            let t = if i + 1 == grid_size { self.hi } else { self.lo + i as f64 * step };
            self.eval_into(t, &mut buf);
            let s: f64 = buf.iter().map(|v| v * v).sum();
            best = best.max(s);
        }
        Ok(best)
    }

    /// `L²` or sup norm of `m - P_q m` on `[lo, hi]`, where `P_q` is the
    /// least-squares projection onto the first `q` functions over the data
    /// interval. Coefficients and norms are computed by quadrature; the node
    /// count is doubled until the residual settles to `1e-8`.
    pub fn projection_residual<F: Fn(f64) -> f64>(
        &self,
        m: F,
        q: usize,
        norm: ResidualNorm,
    ) -> Result<f64> {
        if q < 1 {
            return Err(Error::Domain("basis size must be >= 1".into()));
        }
        let mut rule = self.rule(q, q);
        let mut prev = self.residual_with_rule(&m, q, norm, &rule)?;
        for _ in 0..6 {
            rule = rule.refined();
            let next = self.residual_with_rule(&m, q, norm, &rule)?;
            if (next - prev).abs() <= 1e-8 * next.abs().max(1.0) {
                return Ok(next);
            }
            prev = next;
        }
        Err(Error::Numerical(
            "projection residual unstable under node doubling".into(),
        ))
    }

    fn residual_with_rule<F: Fn(f64) -> f64>(
        &self,
        m: &F,
        q: usize,
        norm: ResidualNorm,
        rule: &CompositeRule,
    ) -> Result<f64> {
        let coef = self.project(m, q, rule)?;
        let mut buf = vec![0.0; q];
        let fitted = |t: f64, buf: &mut [f64]| {
            self.eval_into(t, buf);
            buf.iter().zip(coef.iter()).map(|(a, b)| a * b).sum::<f64>()
        };
        match norm {
            ResidualNorm::L2 => {
                let ise = rule.integrate(|t| {
                    let r = m(t) - fitted(t, &mut buf);
                    r * r
                });
                Ok(ise.max(0.0).sqrt())
            }
            ResidualNorm::Sup => {
                let grid = 20_001;
                let step = self.width() / (grid - 1) as f64;
                let mut best: f64 = 0.0;
                for i in 0..grid {
                    let t = self.lo + i as f64 * step;
                    best = best.max((m(t.min(self.hi)) - fitted(t.min(self.hi), &mut buf)).abs());
                }
                Ok(best)
            }
        }
    }

    /// Least-squares coefficients of `m` on `[lo, hi]` under the quadrature `rule`.
    fn project<F: Fn(f64) -> f64>(&self, m: &F, q: usize, rule: &CompositeRule) -> Result<DVector<f64>> {
        let n = rule.len();
        let mut design = DMatrix::<f64>::zeros(n, q);
        let mut rhs = DVector::<f64>::zeros(n);
        let mut buf = vec![0.0; q];
        for (i, (t, w)) in rule.nodes().iter().zip(rule.weights()).enumerate() {
            let sw = w.sqrt();
            self.eval_into(*t, &mut buf);
            for j in 0..q {
                design[(i, j)] = sw * buf[j];
            }
            rhs[i] = sw * m(*t);
        }
        let svd = design.svd(true, true);
        let cutoff = svd.singular_values.max() * 1e-12;
        svd.solve(&rhs, cutoff)
            .map_err(|e| Error::Numerical(format!("projection solve failed: {e}")))
    }
}

/// Norm used by [`BasisSpec::projection_residual`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualNorm {
    L2,
    Sup,
}

/// Ridge penalty forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    /// `W = I_q` (Tikhonov).
    Identity,
    /// `W_{jk} = ∫ φ_j'' φ_k''` over the data interval.
    #[default]
    Roughness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
}

impl PenaltySpec {
    pub fn identity() -> Self {
        Self { kind: PenaltyKind::Identity }
    }

    pub fn roughness() -> Self {
        Self { kind: PenaltyKind::Roughness }
    }

    /// Growth exponent of `λ_max(W)` in `q`.
    pub fn zeta(&self) -> f64 {
        match self.kind {
            PenaltyKind::Identity => 0.0,
            PenaltyKind::Roughness => 4.0,
        }
    }

    /// The `q × q` penalty matrix for `basis`.
    pub fn matrix(&self, basis: &BasisSpec, q: usize) -> DMatrix<f64> {
        match self.kind {
            PenaltyKind::Identity => DMatrix::identity(q, q),
            PenaltyKind::Roughness if basis.extension_margin == 0.0 => {
                DMatrix::from_fn(q, q, |r, c| {
                    if r == c {
                        basis.frequency(r + 1).powi(4)
                    } else {
                        0.0
                    }
                })
            }
            PenaltyKind::Roughness => {
                // φ_j'' = -ω_j² φ_j, so W = D G D with G the Lebesgue Gram on
                // the data interval and D = diag(ω_j²).
                let rule = basis.rule(q, q);
                let gram = weighted_gram(basis, q, &rule, |_| 1.0);
                let d: Vec<f64> = (1..=q).map(|j| basis.frequency(j).powi(2)).collect();
                let mut w = DMatrix::from_fn(q, q, |r, c| d[r] * gram[(r, c)] * d[c]);
                symmetrize(&mut w);
                w
            }
        }
    }
}

/// `∫ φ_j φ_l g` over the rule's interval for `j, l ≤ q`.
pub(crate) fn weighted_gram<G: FnMut(f64) -> f64>(
    basis: &BasisSpec,
    q: usize,
    rule: &CompositeRule,
    mut weight: G,
) -> DMatrix<f64> {
    let n = rule.len();
    let mut scaled = DMatrix::<f64>::zeros(q, n);
    let mut plain = DMatrix::<f64>::zeros(q, n);
    let mut buf = vec![0.0; q];
    for (i, (t, w)) in rule.nodes().iter().zip(rule.weights()).enumerate() {
        basis.eval_into(*t, &mut buf);
        let g = w * weight(*t);
        for j in 0..q {
            plain[(j, i)] = buf[j];
            scaled[(j, i)] = buf[j] * g;
        }
    }
    let mut gram = &scaled * plain.transpose();
    symmetrize(&mut gram);
    gram
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for r in 0..n {
        for c in (r + 1)..n {
            let v = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
    }
}
