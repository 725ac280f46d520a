//! Per-batch slot accumulation shared by the regression summary and the
//! density sketch.

use crate::basis::BasisSpec;
use crate::schedule::SchedulerConfig;
use crate::sum::NeumaierSum;

/// Sums of one batch, split per slot.
pub(crate) struct SlotSums {
    /// Compensated sum of the batch contributions for every slot open at
    /// the end of the batch.
    pub sums: Vec<f64>,
    /// Start times of slots opened during the batch, in slot order.
    pub opened: Vec<u64>,
}

/// Accumulates `Σ φ_j(T_i) w_i` over the batch, where observation `i`
/// (1-based global index) contributes to slot `j` only when `i ≥ τ_j`.
/// Slots due during the batch are opened at their exact start index.
pub(crate) fn accumulate(
    schedule: &SchedulerConfig,
    basis: &BasisSpec,
    already_open: usize,
    n_old: u64,
    ts: &[f64],
    weights: Option<&[f64]>,
) -> SlotSums {
    let n_new = n_old + ts.len() as u64;
    let total = schedule.open_count(n_new).max(already_open);
    let mut sums = vec![NeumaierSum::default(); total];
    let mut buf = vec![0.0; total];
    let mut opened = Vec::new();
    let mut open = already_open;
    for (k, &t) in ts.iter().enumerate() {
        let i = n_old + 1 + k as u64;
        while open < total && schedule.start_time(open + 1) <= i {
            opened.push(schedule.start_time(open + 1));
            open += 1;
        }
        basis.eval_into(t, &mut buf[..open]);
        let w = weights.map_or(1.0, |w| w[k]);
        for (s, v) in sums[..open].iter_mut().zip(&buf[..open]) {
            s.add(v * w);
        }
    }
    SlotSums { sums: sums.iter().map(NeumaierSum::value).collect(), opened }
}
