//! Parameter, FLOPs, activation, and latency accounting.
//!
//! Conventions: parameter counts include biases; FLOPs are 2 per
//! multiply-accumulate over the weight-matrix terms only, so FLOPs = 2 x
//! params throughout. The compression ratio is dense params over active
//! params. ReLU sparsity in gate hidden layers additionally discounts the
//! work of the projection that consumes each hidden output; that figure is
//! reported as "effective FLOPs" next to the raw count.

use crate::cells::{CellKind, CellModel, CellSpec, Mode};
use crate::error::{Error, Result};
use crate::params::ParamId;
use crate::tape::{Activation, Tape};
use crate::tasks::Dataset;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::HashMap;
use std::time::{Duration, Instant};

/// Closed-form dense parameter count for a cell stack (cell parameters only,
/// no readout).
///
/// Per stacked layer with input width d and cell width n:
/// - LSTM: 4 ((d+n) n + n)
/// - GRU: 3 ((d+n) n + n)
/// - H-LSTM with per-gate hidden widths m1..mJ:
///   4 (sum over the chain (d+n) -> m1 -> ... -> mJ -> n of in*out + out)
pub fn count_params(spec: &CellSpec) -> u64 {
    let n = spec.cell_width as u64;
    let mut total = 0u64;
    for l in 0..spec.stack_depth {
        let d = if l == 0 { spec.input_width as u64 } else { n };
        total += match spec.kind {
            CellKind::Lstm => 4 * ((d + n) * n + n),
            CellKind::Gru => 3 * ((d + n) * n + n),
            CellKind::HLstm => {
                let mut per_gate = 0u64;
                let mut in_w = d + n;
                for &m in &spec.hidden_layer_widths {
                    per_gate += in_w * m as u64 + m as u64;
                    in_w = m as u64;
                }
                per_gate += in_w * n + n;
                4 * per_gate
            }
        };
    }
    total
}

/// FLOPs convention: 2 per parameter (one multiply, one accumulate).
pub fn count_flops(params: u64) -> u64 {
    2 * params
}

/// Per-layer dense/active parameter counts for a concrete model.
#[derive(Debug, Clone, Serialize)]
pub struct LayerCount {
    pub name: String,
    pub dense: u64,
    pub active: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SizeReport {
    pub layers: Vec<LayerCount>,
}

impl SizeReport {
    pub fn dense_total(&self) -> u64 {
        self.layers.iter().map(|l| l.dense).sum()
    }

    pub fn active_total(&self) -> u64 {
        self.layers.iter().map(|l| l.active).sum()
    }

    pub fn flops(&self) -> u64 {
        count_flops(self.active_total())
    }

    pub fn dense_flops(&self) -> u64 {
        count_flops(self.dense_total())
    }

    /// Dense params over active params; 1.0 for a dense model.
    pub fn compression_ratio(&self) -> f64 {
        let active = self.active_total();
        if active == 0 {
            f64::INFINITY
        } else {
            self.dense_total() as f64 / active as f64
        }
    }

    pub fn render(&self) -> String {
        let width = self
            .layers
            .iter()
            .map(|l| l.name.len())
            .chain(["Layer".len(), "Total".len()].into_iter())
            .max()
            .unwrap_or(5);
        let mut out = format!(
            "{:<width$}  {:>12}  {:>12}  {:>12}  {:>8}\n",
            "Layer", "Dense", "Active", "FLOPs", "CR"
        );
        for l in &self.layers {
            out.push_str(&format!(
                "{:<width$}  {:>12}  {:>12}  {:>12}  {:>8}\n",
                l.name,
                group_digits(l.dense),
                group_digits(l.active),
                group_digits(count_flops(l.active)),
                format!(
                    "{:.1}x",
                    if l.active == 0 { f64::INFINITY } else { l.dense as f64 / l.active as f64 }
                ),
            ));
        }
        out.push_str(&format!(
            "{:<width$}  {:>12}  {:>12}  {:>12}  {:>8}\n",
            "Total",
            group_digits(self.dense_total()),
            group_digits(self.active_total()),
            group_digits(self.flops()),
            format!("{:.1}x", self.compression_ratio()),
        ));
        out
    }
}

fn group_digits(v: u64) -> String {
    let raw = v.to_string();
    let mut out = String::with_capacity(raw.len() + raw.len() / 3);
    for (i, ch) in raw.chars().enumerate() {
        if i > 0 && (raw.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Param accounting per stacked layer group (weights nnz from masks, biases
/// dense).
pub fn size_report(model: &CellModel) -> SizeReport {
    let mut layers: Vec<LayerCount> = Vec::new();
    for (_, t) in model.params.iter() {
        let group = t.name.split('.').next().unwrap_or(&t.name).to_string();
        let dense = t.value.len() as u64;
        let active = t.active_count() as u64;
        match layers.iter_mut().find(|l| l.name == group) {
            Some(l) => {
                l.dense += dense;
                l.active += active;
            }
            None => layers.push(LayerCount {
                name: group,
                dense,
                active,
            }),
        }
    }
    SizeReport { layers }
}

/// ReLU activation statistics over a dataset.
#[derive(Debug, Clone, Serialize)]
pub struct ReluStats {
    /// Fraction of strictly positive outputs per gate hidden layer.
    pub per_layer: Vec<(String, f64)>,
    pub overall_fraction: f64,
    pub raw_flops: u64,
    /// Raw FLOPs minus the share of each consumer projection nullified by
    /// zero hidden outputs.
    pub effective_flops: f64,
    /// Set when the model still runs leaky ReLU, whose outputs are almost
    /// surely nonzero; the fractions are reported anyway.
    pub leaky_flagged: bool,
}

/// Measure the fraction of strictly positive hidden-layer outputs in eval
/// mode and the effective-FLOPs discount on the projections they feed.
pub fn relu_activation_stats(model: &CellModel, data: &Dataset) -> Result<ReluStats> {
    if data.is_empty() {
        return Err(Error::Contract("relu stats need a nonempty dataset".into()));
    }
    let mut counts: HashMap<ParamId, (u64, u64)> = HashMap::new();
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for sample in &data.samples {
        tape.reset();
        let rollout = model.unroll(&mut tape, &sample.inputs, Mode::Eval, &mut rng)?;
        for probe in rollout.hidden_probe {
            let entry = counts.entry(probe.layer).or_insert((0, 0));
            for &v in tape.value(probe.post) {
                entry.0 += (v > 0.0) as u64;
                entry.1 += 1;
            }
        }
    }
    let report = size_report(model);
    let raw_flops = report.flops();
    // Consumer projection of each hidden layer: next weight tensor in its
    // gate chain.
    let mut consumer_flops: HashMap<ParamId, u64> = HashMap::new();
    for chain in model.gate_chains() {
        for pair in chain.windows(2) {
            let nnz = model.params.tensor(pair[1]).active_count() as u64;
            consumer_flops.insert(pair[0], count_flops(nnz));
        }
    }
    let mut per_layer: Vec<(String, f64)> = Vec::new();
    let mut pos_total = 0u64;
    let mut all_total = 0u64;
    let mut savings = 0.0;
    let mut ids: Vec<ParamId> = counts.keys().copied().collect();
    ids.sort_by_key(|id| id.index());
    for id in ids {
        let (pos, total) = counts[&id];
        let fraction = pos as f64 / total as f64;
        pos_total += pos;
        all_total += total;
        savings += (1.0 - fraction) * consumer_flops.get(&id).copied().unwrap_or(0) as f64;
        per_layer.push((model.params.tensor(id).name.clone(), fraction));
    }
    let overall = if all_total == 0 {
        0.0
    } else {
        pos_total as f64 / all_total as f64
    };
    Ok(ReluStats {
        per_layer,
        overall_fraction: overall,
        raw_flops,
        effective_flops: raw_flops as f64 - savings,
        leaky_flagged: model.spec.internal_activation == Activation::LeakyRelu,
    })
}

/// Median wall-clock time of an eval-mode forward pass over `input`.
/// Three warm-up runs are excluded; `repetitions >= 3`.
pub fn measure_latency(model: &CellModel, input: &[Vec<f64>], repetitions: usize) -> Result<Duration> {
    if repetitions < 3 {
        return Err(Error::Contract(format!("latency needs >= 3 repetitions, got {repetitions}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tape = Tape::new();
    for _ in 0..3 {
        tape.reset();
        model.unroll(&mut tape, input, Mode::Eval, &mut rng)?;
    }
    let mut times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        tape.reset();
        let t0 = Instant::now();
        let r = model.unroll(&mut tape, input, Mode::Eval, &mut rng)?;
        std::hint::black_box(tape.value(*r.outputs.last().unwrap()));
        times.push(t0.elapsed());
    }
    times.sort();
    Ok(times[times.len() / 2])
}
