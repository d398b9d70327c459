//! Binary connection masks and the grow/prune policies.
//!
//! A weight whose mask bit is 0 is *dormant*: it contributes nothing to the
//! forward pass but keeps a defined gradient, which is what the growth policy
//! ranks. Growth activates dormant connections whose average gradient
//! magnitude clears a percentile threshold; pruning removes the
//! smallest-magnitude fraction of the active connections.

use crate::error::{Error, Result};
use crate::tensor::Matrix;
use rand::seq::index::sample as index_sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Binary mask with the same row-major layout as the matrix it covers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn ones(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            data: vec![1; rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn is_active(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c] != 0
    }

    pub fn set(&mut self, r: usize, c: usize, active: bool) {
        self.data[r * self.cols + c] = active as u8;
    }

    pub fn active_count(&self) -> usize {
        self.data.iter().filter(|&&b| b != 0).count()
    }

    /// 1 − active/total. An empty mask reports sparsity 0.
    pub fn sparsity(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        1.0 - self.active_count() as f64 / self.data.len() as f64
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "mask {}x{} needs {} bits, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Mask { rows, cols, data })
    }
}

/// Zero out every weight whose mask bit is 0.
///
/// Invariant after any prune or optimizer step: dormant weights are stored
/// as exactly 0.0.
pub fn apply_mask(weights: &mut Matrix, mask: &Mask) {
    debug_assert_eq!(weights.len(), mask.len());
    for (w, &m) in weights.data_mut().iter_mut().zip(mask.data.iter()) {
        if m == 0 {
            *w = 0.0;
        }
    }
}

/// Nearest-rank percentile: sort ascending and take the 1-based element at
/// index ceil(p * N).
pub fn percentile_threshold(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Contract("percentile of empty list".into()));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Contract(format!("percentile fraction {p} not in (0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (p * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.max(1) - 1])
}

/// Result of seed-mask generation.
pub struct SeedMask {
    pub mask: Mask,
    /// Sparsity actually achieved after connectivity repair; can be lower
    /// than requested when the repair dominates (thin shapes at extreme
    /// sparsity).
    pub achieved_sparsity: f64,
}

/// Random seed mask with `floor((1 - sparsity) * N)` active entries, then a
/// connectivity repair: any all-zero row or column gets one randomly chosen
/// active entry, so every neuron keeps at least one input and one output.
pub fn seed_mask<R: Rng>(rows: usize, cols: usize, sparsity: f64, rng: &mut R) -> Result<SeedMask> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::Contract(format!("seed sparsity {sparsity} not in [0, 1)")));
    }
    let total = rows * cols;
    let want_active = ((1.0 - sparsity) * total as f64).floor() as usize;
    let mut mask = Mask::zeros(rows, cols);
    if want_active >= total {
        return Ok(SeedMask {
            mask: Mask::ones(rows, cols),
            achieved_sparsity: 0.0,
        });
    }
    for idx in index_sample(rng, total, want_active) {
        mask.data[idx] = 1;
    }
    // Repair pass: every all-zero row gets one entry, then every all-zero
    // column. A column repair cannot empty a row, so one sweep suffices.
    for r in 0..rows {
        if (0..cols).all(|c| !mask.is_active(r, c)) {
            let c = rng.random_range(0..cols);
            mask.set(r, c, true);
        }
    }
    for c in 0..cols {
        if (0..rows).all(|r| !mask.is_active(r, c)) {
            let r = rng.random_range(0..rows);
            mask.set(r, c, true);
        }
    }
    let achieved = mask.sparsity();
    Ok(SeedMask {
        mask,
        achieved_sparsity: achieved,
    })
}

/// Growth policy: activate a dormant connection iff its average gradient
/// magnitude is strictly larger than the (100*alpha)-th percentile of all
/// entries of `avg_grad` (active and dormant alike). Newly activated weights
/// start at 0.0 so the loss surface stays continuous at the flip.
///
/// Returns the newly activated positions.
pub fn grow(
    weights: &mut Matrix,
    mask: &mut Mask,
    avg_grad: &Matrix,
    alpha: f64,
) -> Result<Vec<(usize, usize)>> {
    if !weights.same_shape(avg_grad) || weights.len() != mask.len() {
        return Err(Error::Shape(format!(
            "grow: weights {}x{}, grads {}x{}",
            weights.rows(),
            weights.cols(),
            avg_grad.rows(),
            avg_grad.cols()
        )));
    }
    let magnitudes: Vec<f64> = avg_grad.data().iter().map(|g| g.abs()).collect();
    let threshold = percentile_threshold(&magnitudes, alpha)?;
    let mut activated = Vec::new();
    for r in 0..mask.rows() {
        for c in 0..mask.cols() {
            if !mask.is_active(r, c) && avg_grad[(r, c)].abs() > threshold {
                mask.set(r, c, true);
                weights[(r, c)] = 0.0;
                activated.push((r, c));
            }
        }
    }
    Ok(activated)
}

/// Outcome of one magnitude-pruning step on a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneOutcome {
    /// Exactly this many connections were deactivated.
    Pruned(usize),
    /// The layer had no active connections; nothing to do.
    NoActive,
}

/// Pruning policy, realized as exact rank selection over the *active*
/// weights: deactivate the floor(beta * A) smallest |w| among the A active
/// entries, ties broken by ascending (row, col). Pruned weights are zeroed.
pub fn prune_step(weights: &mut Matrix, mask: &mut Mask, beta: f64) -> Result<PruneOutcome> {
    if !(0.0 < beta && beta < 1.0) {
        return Err(Error::Contract(format!("pruning ratio {beta} not in (0, 1)")));
    }
    let mut active: Vec<(usize, usize)> = Vec::with_capacity(mask.active_count());
    for r in 0..mask.rows() {
        for c in 0..mask.cols() {
            if mask.is_active(r, c) {
                active.push((r, c));
            }
        }
    }
    if active.is_empty() {
        return Ok(PruneOutcome::NoActive);
    }
    let k = (beta * active.len() as f64).floor() as usize;
    if k == 0 {
        return Ok(PruneOutcome::Pruned(0));
    }
    // Stable sort keeps the ascending (row, col) order among equal magnitudes.
    active.sort_by(|a, b| weights[*a].abs().total_cmp(&weights[*b].abs()));
    for &(r, c) in active.iter().take(k) {
        mask.set(r, c, false);
        weights[(r, c)] = 0.0;
    }
    Ok(PruneOutcome::Pruned(k))
}

/// Neuron pruning over one DNN-gate chain `input -> hidden* -> output`.
///
/// Hidden unit j of chain link k has incoming row j of matrix k and outgoing
/// column j of matrix k+1. If either side is entirely pruned, both are
/// zeroed. Iterates to a fixpoint because removing one unit can isolate
/// another downstream or upstream.
///
/// Returns the number of hidden units removed.
pub fn prune_neurons(chain: &mut [(&mut Matrix, &mut Mask)]) -> usize {
    if chain.len() < 2 {
        return 0;
    }
    let mut removed = 0;
    loop {
        let mut changed = false;
        for k in 0..chain.len() - 1 {
            let units = chain[k].0.rows();
            debug_assert_eq!(units, chain[k + 1].0.cols());
            for j in 0..units {
                let incoming_dead = (0..chain[k].1.cols()).all(|c| !chain[k].1.is_active(j, c));
                let outgoing_dead = (0..chain[k + 1].1.rows()).all(|r| !chain[k + 1].1.is_active(r, j));
                if incoming_dead == outgoing_dead {
                    // Either fully alive on both sides or already removed.
                    continue;
                }
                let (w_in, m_in) = &mut chain[k];
                for c in 0..m_in.cols() {
                    m_in.set(j, c, false);
                    (*w_in)[(j, c)] = 0.0;
                }
                let (w_out, m_out) = &mut chain[k + 1];
                for r in 0..m_out.rows() {
                    m_out.set(r, j, false);
                    (*w_out)[(r, j)] = 0.0;
                }
                removed += 1;
                changed = true;
            }
        }
        if !changed {
            return removed;
        }
    }
}

/// Per-layer active/total accounting.
#[derive(Debug, Clone, Serialize)]
pub struct LayerSparsity {
    pub name: String,
    pub total: usize,
    pub active: usize,
}

impl LayerSparsity {
    pub fn sparsity(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            1.0 - self.active as f64 / self.total as f64
        }
    }
}

/// Sparsity over a set of masked layers plus the weighted total.
#[derive(Debug, Clone, Serialize)]
pub struct SparsityReport {
    pub layers: Vec<LayerSparsity>,
}

impl SparsityReport {
    pub fn total_active(&self) -> usize {
        self.layers.iter().map(|l| l.active).sum()
    }

    pub fn total_params(&self) -> usize {
        self.layers.iter().map(|l| l.total).sum()
    }

    pub fn total_sparsity(&self) -> f64 {
        let total = self.total_params();
        if total == 0 {
            0.0
        } else {
            1.0 - self.total_active() as f64 / total as f64
        }
    }

    /// Aligned plain-text table, one row per layer plus the total.
    pub fn render(&self) -> String {
        let width = self
            .layers
            .iter()
            .map(|l| l.name.len())
            .chain(["Layer".len(), "Total".len()].into_iter())
            .max()
            .unwrap_or(5);
        let mut out = format!("{:<width$}  {:>10}  {:>10}  {:>9}\n", "Layer", "Active", "Total", "Sparsity");
        for l in &self.layers {
            out.push_str(&format!(
                "{:<width$}  {:>10}  {:>10}  {:>8.2}%\n",
                l.name,
                l.active,
                l.total,
                l.sparsity() * 100.0
            ));
        }
        out.push_str(&format!(
            "{:<width$}  {:>10}  {:>10}  {:>8.2}%\n",
            "Total",
            self.total_active(),
            self.total_params(),
            self.total_sparsity() * 100.0
        ));
        out
    }
}
