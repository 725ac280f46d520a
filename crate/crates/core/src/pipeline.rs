//! Tuned one-pass estimation: warm-up, `(C_ρ, h)` selection, streaming.
//!
//! With cross-validated tuning the first `n0` observations are buffered,
//! used once to pick `(C_ρ, h)`, then replayed into a fresh [`Regressor`]
//! whose schedule uses the chosen `h`; the buffer is dropped afterwards.
//! With fixed tuning there is no warm-up.

use serde::{Deserialize, Serialize};

use crate::engine::{Checkpoint, Fit, Regressor, RegressorConfig, StreamBatch};
use crate::error::{Error, Result};
use crate::tuning::{cv_select, rho_at, TuningGrid, TuningOutcome};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TuningMode {
    Fixed { c_rho: f64, h: f64 },
    CrossValidated { grid: TuningGrid },
}

impl TuningMode {
    pub fn validate(&self) -> Result<()> {
        match self {
            TuningMode::Fixed { c_rho, h } => {
                if !(*c_rho > 0.0 && c_rho.is_finite()) || !(*h > 0.0 && *h < 1.0) {
                    return Err(Error::Config("fixed tuning needs C_rho > 0 and h in (0,1)".into()));
                }
                Ok(())
            }
            TuningMode::CrossValidated { grid } => grid.validate(),
        }
    }
}

/// Snapshot of the estimator's progress.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub n: u64,
    pub q_active: usize,
    pub p_active: usize,
    pub memory_units: usize,
    /// Current penalty level; absent during warm-up.
    pub rho: Option<f64>,
    pub c_rho: Option<f64>,
    pub h: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct OnePassEstimator {
    base: RegressorConfig,
    mode: TuningMode,
    tuned: Option<(f64, f64)>,
    buffer: Vec<(f64, f64)>,
    regressor: Option<Regressor>,
    outcome: Option<TuningOutcome>,
}

impl OnePassEstimator {
    /// `base.schedule.h` is replaced by the tuned `h`.
    pub fn new(base: RegressorConfig, mode: TuningMode) -> Result<Self> {
        base.validate()?;
        mode.validate()?;
        let mut est = Self { base, mode, tuned: None, buffer: Vec::new(), regressor: None, outcome: None };
        if let TuningMode::Fixed { c_rho, h } = est.mode {
            est.start(c_rho, h)?;
        }
        Ok(est)
    }

    fn start(&mut self, c_rho: f64, h: f64) -> Result<()> {
        let mut cfg = self.base;
        cfg.schedule = cfg.schedule.with_h(h);
        self.regressor = Some(Regressor::new(cfg)?);
        self.tuned = Some((c_rho, h));
        Ok(())
    }

    pub fn base_config(&self) -> &RegressorConfig {
        &self.base
    }

    pub fn mode(&self) -> &TuningMode {
        &self.mode
    }

    /// Selected `(C_ρ, h)`, once known.
    pub fn tuned(&self) -> Option<(f64, f64)> {
        self.tuned
    }

    /// The CV table, when tuning ran in this process.
    pub fn tuning_outcome(&self) -> Option<&TuningOutcome> {
        self.outcome.as_ref()
    }

    pub fn regressor(&self) -> Option<&Regressor> {
        self.regressor.as_ref()
    }

    pub fn is_warming_up(&self) -> bool {
        self.regressor.is_none()
    }

    pub fn n(&self) -> u64 {
        match &self.regressor {
            Some(r) => r.n(),
            None => self.buffer.len() as u64,
        }
    }

    pub fn ingest(&mut self, batch: &StreamBatch) -> Result<()> {
        if let Some(r) = self.regressor.as_mut() {
            return r.ingest(batch);
        }
        if batch.t.len() != batch.y.len() {
            return Err(Error::Domain("batch t/y lengths differ".into()));
        }
        if batch.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        for (&t, &y) in batch.t.iter().zip(&batch.y) {
            self.base.basis.check_point(t)?;
            if !y.is_finite() {
                return Err(Error::Domain(format!("non-finite response {y}")));
            }
        }
        self.buffer.extend(batch.t.iter().copied().zip(batch.y.iter().copied()));
        let TuningMode::CrossValidated { grid } = &self.mode else { unreachable!() };
        if self.buffer.len() >= grid.n0 {
            self.finish_warmup()?;
        }
        Ok(())
    }

    fn finish_warmup(&mut self) -> Result<()> {
        let TuningMode::CrossValidated { grid } = &self.mode else { unreachable!() };
        let (ts, ys): (Vec<f64>, Vec<f64>) = self.buffer.iter().copied().unzip();
        let outcome = cv_select(&ts, &ys, grid, &self.base.basis, &self.base.penalty, &self.base.schedule)?;
        self.start(outcome.c_rho, outcome.h)?;
        let b = self.base.batch_size;
        let r = self.regressor.as_mut().expect("started");
        // Replay in the nominal batch size so the buffered prefix is seen once.
        for (tc, yc) in ts.chunks(b).zip(ys.chunks(b)) {
            r.ingest(&StreamBatch::new(tc.to_vec(), yc.to_vec())?)?;
        }
        self.buffer = Vec::new();
        self.outcome = Some(outcome);
        Ok(())
    }

    fn ready(&self) -> Result<(&Regressor, f64, f64)> {
        match (&self.regressor, self.tuned) {
            (Some(r), Some((c, h))) if r.n() > 0 => Ok((r, c, h)),
            _ => Err(Error::WarmUp { seen: self.n() as usize, needed: self.warmup_size() }),
        }
    }

    /// Observations required before estimates are available.
    pub fn warmup_size(&self) -> usize {
        match &self.mode {
            TuningMode::Fixed { .. } => 1,
            TuningMode::CrossValidated { grid } => grid.n0,
        }
    }

    /// Penalty level at the current `n`.
    pub fn rho(&self) -> Result<f64> {
        let (r, c, h) = self.ready()?;
        Ok(rho_at(c, h, r.n(), self.base.penalty.zeta()))
    }

    pub fn fit(&self) -> Result<Arc<Fit>> {
        let rho = self.rho()?;
        self.ready()?.0.fit(rho)
    }

    pub fn estimate(&self, t: f64) -> Result<f64> {
        self.base.basis.check_point(t)?;
        Ok(self.fit()?.eval(t))
    }

    /// Normalized density estimate at `t` (1/width in known-uniform mode).
    pub fn density(&self, t: f64) -> Result<f64> {
        self.base.basis.check_point(t)?;
        let (r, _, _) = self.ready()?;
        r.density().eval(&self.base.basis, t)
    }

    pub fn memory_footprint(&self) -> usize {
        match &self.regressor {
            Some(r) => r.memory_footprint(),
            None => 2 * self.buffer.len(),
        }
    }

    pub fn stats(&self) -> Stats {
        let (q, p) = self.regressor.as_ref().map_or((0, 0), |r| (r.active_count(), r.density_active_count()));
        Stats {
            n: self.n(),
            q_active: q,
            p_active: p,
            memory_units: self.memory_footprint(),
            rho: self.rho().ok(),
            c_rho: self.tuned.map(|t| t.0),
            h: self.tuned.map(|t| t.1),
        }
    }

    pub fn checkpoint(&self) -> EstimatorCheckpoint {
        EstimatorCheckpoint {
            base: self.base,
            mode: self.mode.clone(),
            tuned: self.tuned,
            warmup: self.buffer.clone(),
            regressor: self.regressor.as_ref().map(Regressor::checkpoint),
        }
    }

    pub fn from_checkpoint(ck: &EstimatorCheckpoint) -> Result<Self> {
        ck.base.validate()?;
        ck.mode.validate()?;
        let regressor = match (&ck.regressor, ck.tuned) {
            (Some(rc), Some((_, h))) => {
                if rc.config.schedule.h != h {
                    return Err(Error::Checkpoint("tuned h disagrees with the regressor schedule".into()));
                }
                Some(Regressor::from_checkpoint(rc)?)
            }
            (None, None) => None,
            _ => return Err(Error::Checkpoint("tuning and regressor state disagree".into())),
        };
        if regressor.is_some() && !ck.warmup.is_empty() {
            return Err(Error::Checkpoint("warm-up buffer present after tuning".into()));
        }
        Ok(Self {
            base: ck.base,
            mode: ck.mode.clone(),
            tuned: ck.tuned,
            buffer: ck.warmup.clone(),
            regressor,
            outcome: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorCheckpoint {
    pub base: RegressorConfig,
    pub mode: TuningMode,
    pub tuned: Option<(f64, f64)>,
    pub warmup: Vec<(f64, f64)>,
    pub regressor: Option<Checkpoint>,
}

impl EstimatorCheckpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
