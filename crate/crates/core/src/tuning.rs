//! Semi data-driven tuning of `(C_ρ, h)`.
//!
//! The penalty level follows `ρ = C_ρ n^{-((2ζ-1)h + 1)/2}`, which is
//! `C_ρ n^{-(7h+1)/2}` for the Fourier roughness penalty (`ζ = 4`). Both
//! constants are chosen once, on a warm-up prefix of `n0` observations, by
//! `J`-fold cross-validation of the non-streaming penalized fit with
//! `q = ⌊n0^h / C_q⌋` basis functions.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, PenaltySpec};
use crate::engine::{design_matrix, spd_solve};
use crate::error::{Error, Result};
use crate::schedule::SchedulerConfig;

/// `C_ρ n^{-((2ζ-1)h + 1)/2}`.
pub fn rho_at(c_rho: f64, h: f64, n: u64, zeta: f64) -> f64 {
    let n = n.max(1) as f64;
    c_rho * n.powf(-((2.0 * zeta - 1.0) * h + 1.0) / 2.0)
}

/// Search grid and fold layout for cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningGrid {
    pub c_rho: Vec<f64>,
    pub h: Vec<f64>,
    /// Number of folds `J`.
    pub folds: usize,
    /// Warm-up size `n0`.
    pub n0: usize,
}

impl Default for TuningGrid {
    fn default() -> Self {
        Self {
            c_rho: (-3..=2).map(|k| 10f64.powi(k)).collect(),
            h: vec![0.2, 0.25, 1.0 / 3.0, 0.4, 0.5],
            folds: 5,
            n0: 1000,
        }
    }
}

impl TuningGrid {
    pub fn validate(&self) -> Result<()> {
        if self.c_rho.is_empty() || self.h.is_empty() {
            return Err(Error::Config("tuning grids must be non-empty".into()));
        }
        if self.c_rho.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::Config("C_rho grid values must be positive".into()));
        }
        if self.h.iter().any(|h| !(*h > 0.0 && *h < 1.0)) {
            return Err(Error::Config("h grid values must lie in (0, 1)".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("need at least two folds".into()));
        }
        if self.n0 < self.folds {
            return Err(Error::Config("warm-up size must be at least the fold count".into()));
        }
        Ok(())
    }
}

/// One cross-validation table entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub c_rho: f64,
    pub h: f64,
    pub q: usize,
    pub rho: f64,
    /// Summed held-out squared error; `+∞` when a fold fit failed.
    pub cv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningOutcome {
    pub c_rho: f64,
    pub h: f64,
    pub table: Vec<CvRow>,
}

/// Fold of observation `i` (0-based arrival index): round-robin.
pub fn fold_of(i: usize, folds: usize) -> usize {
    i % folds
}

/// Selects `(C_ρ, h)` minimizing the `J`-fold CV error over the first `n0`
/// observations. Ties go to the larger `ρ`, then the smaller `h`.
pub fn cv_select(
    ts: &[f64],
    ys: &[f64],
    grid: &TuningGrid,
    basis: &BasisSpec,
    penalty: &PenaltySpec,
    schedule: &SchedulerConfig,
) -> Result<TuningOutcome> {
    grid.validate()?;
    if ts.len() != ys.len() {
        return Err(Error::Domain("t and y lengths differ".into()));
    }
    if ts.len() < grid.n0 {
        return Err(Error::Domain(format!(
            "warm-up needs {} observations, got {}",
            grid.n0,
            ts.len()
        )));
    }
    let ts = &ts[..grid.n0];
    let ys = &ys[..grid.n0];
    for &t in ts {
        basis.check_point(t)?;
    }
    let mut table = Vec::with_capacity(grid.c_rho.len() * grid.h.len());
    for &h in &grid.h {
        let q = schedule.with_h(h).active_count(grid.n0 as u64);
        let folds = FoldSystems::new(basis, ts, ys, q, grid.folds);
        let w = penalty.matrix(basis, q);
        for &c_rho in &grid.c_rho {
            let rho = rho_at(c_rho, h, grid.n0 as u64, penalty.zeta());
            let cv = folds.cv_error(&w, rho).unwrap_or(f64::INFINITY);
            table.push(CvRow { c_rho, h, q, rho, cv });
        }
    }
    let best = select(&table).ok_or(Error::NoFeasibleTuning)?;
    Ok(TuningOutcome { c_rho: best.c_rho, h: best.h, table })
}

/// Index-free argmin with the tie rule: larger ρ, then smaller h.
pub fn select(table: &[CvRow]) -> Option<CvRow> {
    let mut best: Option<CvRow> = None;
    for row in table.iter().filter(|r| r.cv.is_finite()) {
        best = match best {
            None => Some(*row),
            Some(b) => {
                let tol = 1e-12 * b.cv.abs().max(row.cv.abs());
                let better = if (row.cv - b.cv).abs() <= tol {
                    row.rho > b.rho || (row.rho == b.rho && row.h < b.h)
                } else {
                    row.cv < b.cv
                };
                Some(if better { *row } else { b })
            }
        };
    }
    best
}

/// Per-fold normal equations for a fixed `q`; training systems are the
/// totals minus the held-out fold.
struct FoldSystems {
    phi: DMatrix<f64>,
    ys: Vec<f64>,
    fold_of: Vec<usize>,
    fold_xtx: Vec<DMatrix<f64>>,
    fold_xty: Vec<DVector<f64>>,
    fold_n: Vec<usize>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
}

impl FoldSystems {
    fn new(basis: &BasisSpec, ts: &[f64], ys: &[f64], q: usize, folds: usize) -> Self {
        let phi = design_matrix(basis, ts, q);
        let mut fold_xtx = vec![DMatrix::zeros(q, q); folds];
        let mut fold_xty = vec![DVector::zeros(q); folds];
        let mut fold_n = vec![0; folds];
        let fold_idx: Vec<usize> = (0..ts.len()).map(|i| fold_of(i, folds)).collect();
        for k in 0..folds {
            let rows: Vec<usize> = (0..ts.len()).filter(|i| fold_idx[*i] == k).collect();
            let sub = phi.select_rows(rows.iter());
            let y = DVector::from_iterator(rows.len(), rows.iter().map(|i| ys[*i]));
            fold_xtx[k] = sub.tr_mul(&sub);
            fold_xty[k] = sub.tr_mul(&y);
            fold_n[k] = rows.len();
        }
        let xtx = fold_xtx.iter().fold(DMatrix::zeros(q, q), |a, b| a + b);
        let xty = fold_xty.iter().fold(DVector::zeros(q), |a, b| a + b);
        Self { phi, ys: ys.to_vec(), fold_of: fold_idx, fold_xtx, fold_xty, fold_n, xtx, xty }
    }

    fn cv_error(&self, w: &DMatrix<f64>, rho: f64) -> Result<f64> {
        let total_n: usize = self.fold_n.iter().sum();
        let mut coefs = Vec::with_capacity(self.fold_n.len());
        for k in 0..self.fold_n.len() {
            let n_train = (total_n - self.fold_n[k]) as f64;
            let gram = (&self.xtx - &self.fold_xtx[k]) / n_train;
            let rhs = (&self.xty - &self.fold_xty[k]) / n_train;
            coefs.push(spd_solve(gram + w * rho, &rhs)?);
        }
        let mut sse = 0.0;
        for (i, y) in self.ys.iter().enumerate() {
            let a = &coefs[self.fold_of[i]];
            let pred = self.phi.row(i).dot(&a.transpose());
            sse += (y - pred).powi(2);
        }
        Ok(sse)
    }
}

/// Writes the CV table as CSV (`c_rho,h,q,rho,cv,selected`).
pub fn write_tuning_csv<W: Write>(outcome: &TuningOutcome, mut out: W) -> std::io::Result<()> {
    writeln!(out, "c_rho,h,q,rho,cv,selected")?;
    for row in &outcome.table {
        let selected = row.c_rho == outcome.c_rho && row.h == outcome.h;
        writeln!(
            out,
            "{},{},{},{:e},{},{}",
            row.c_rho,
            row.h,
            row.q,
            row.rho,
            row.cv,
            u8::from(selected)
        )?;
    }
    Ok(())
}
