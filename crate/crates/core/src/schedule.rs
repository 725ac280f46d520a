//! Basis activation and pre-estimation schedule.
//!
//! Basis function `j` is *activated* (used in the estimate) once the stream
//! reaches `S(j) = ⌊(C_q j)^{1/h}⌋` observations, but its summary slot is
//! *opened* earlier, at `τ_j = ⌊c_∘ S(j)⌋`, so that by activation it has
//! averaged over at least `(1 - c_∘) n` observations. The first `q0` slots
//! are open from the first observation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance absorbing floating-point error in floors of exact powers
/// (e.g. `1000^{1/3}` evaluating to `9.999…`).
const FLOOR_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub c_q: f64,
    pub h: f64,
    pub c_circ: f64,
    pub q0: usize,
    /// Available memory units; `None` means unconstrained.
    pub mem_cap: Option<usize>,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { c_q: 0.5, h: 1.0 / 3.0, c_circ: 0.5, q0: 5, mem_cap: None }
    }
}

impl SchedulerConfig {
    pub fn with_h(mut self, h: f64) -> Self {
        self.h = h;
        self
    }

    pub fn with_mem_cap(mut self, cap: Option<usize>) -> Self {
        self.mem_cap = cap;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_q > 0.0 && self.c_q.is_finite()) {
            return Err(Error::Config(format!("C_q must be > 0, got {}", self.c_q)));
        }
        if !(self.h > 0.0 && self.h < 1.0) {
            return Err(Error::Config(format!("h must lie in (0, 1), got {}", self.h)));
        }
        if !(self.c_circ > 0.0 && self.c_circ < 1.0) {
            return Err(Error::Config(format!("c_circ must lie in (0, 1), got {}", self.c_circ)));
        }
        if self.q0 < 1 {
            return Err(Error::Config("q0 must be >= 1".into()));
        }
        if self.mem_cap == Some(0) {
            return Err(Error::Config("mem_cap must be positive".into()));
        }
        Ok(())
    }

    /// Activation time `S(j) = ⌊(C_q j)^{1/h}⌋`.
    pub fn activation_time(&self, j: usize) -> u64 {
        let v = (self.c_q * j as f64).powf(1.0 / self.h);
        if v >= u64::MAX as f64 {
            u64::MAX
        } else {
            (v + FLOOR_EPS).floor() as u64
        }
    }

    /// Slot opening time `τ_j`: 1 for the first `q0` slots, otherwise
    /// `⌊c_∘ S(j)⌋` (clamped to at least 1).
    pub fn start_time(&self, j: usize) -> u64 {
        if j <= self.q0 {
            return 1;
        }
        let s = self.activation_time(j) as f64 * self.c_circ;
        ((s + FLOOR_EPS).floor() as u64).max(1)
    }

    /// Largest slot count allowed by the memory cap (`⌊cap/3⌋`, at least 1).
    pub fn cap_limit(&self) -> usize {
        match self.mem_cap {
            Some(cap) => (cap / 3).max(1),
            None => usize::MAX,
        }
    }

    /// Number of active basis functions after `n` observations:
    /// `min{⌊cap/3⌋, max{q0, ⌊n^h / C_q⌋}}`, at least 1.
    pub fn active_count(&self, n: u64) -> usize {
        let n = n.max(1) as f64;
        let grown = (n.powf(self.h) / self.c_q + FLOOR_EPS).floor();
        let grown = if grown >= usize::MAX as f64 { usize::MAX } else { grown as usize };
        grown.max(self.q0).min(self.cap_limit()).max(1)
    }

    /// Number of slots whose opening time is at most `n`, respecting the cap.
    pub fn open_count(&self, n: u64) -> usize {
        let limit = self.cap_limit();
        let mut j = self.q0.min(limit);
        while j < limit && self.start_time(j + 1) <= n {
            j += 1;
        }
        j
    }
}
