//! H-LSTM, LSTM, and GRU cells with stacking and sequence unrolling.
//!
//! An H-LSTM replaces each of the four gate controls with a small DNN: zero
//! or more hidden layers followed by an output projection and the usual
//! sigmoid/tanh gate activation. Every gate owns its hidden layers; nothing
//! is shared. A conventional LSTM is the zero-hidden-layer special case and
//! the two produce bit-identical values when configured alike.
//!
//! Dropout placement: cell input/output dropout sits on the non-recurrent
//! connections (layer inputs and the top output), gate dropout sits on
//! hidden-layer outputs inside each DNN gate. Recurrent paths are never
//! dropped.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::sparsity::{seed_mask, Mask};
use crate::tape::{Activation, NodeId, Tape};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    HLstm,
    Lstm,
    Gru,
}

/// Forward mode: training applies dropout, evaluation does not.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Architecture description for one stacked recurrent model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub kind: CellKind,
    pub input_width: usize,
    pub cell_width: usize,
    /// Per-gate hidden layer widths; must be empty for LSTM and GRU.
    pub hidden_layer_widths: Vec<usize>,
    pub stack_depth: usize,
    pub io_dropout: f64,
    pub hidden_dropout: f64,
    pub internal_activation: Activation,
}

impl CellSpec {
    pub fn hlstm(input_width: usize, cell_width: usize, hidden_layer_widths: Vec<usize>) -> Self {
        CellSpec {
            kind: CellKind::HLstm,
            input_width,
            cell_width,
            hidden_layer_widths,
            stack_depth: 1,
            io_dropout: 0.5,
            hidden_dropout: 0.2,
            internal_activation: Activation::LeakyRelu,
        }
    }

    pub fn lstm(input_width: usize, cell_width: usize) -> Self {
        CellSpec {
            kind: CellKind::Lstm,
            input_width,
            cell_width,
            hidden_layer_widths: Vec::new(),
            stack_depth: 1,
            io_dropout: 0.5,
            hidden_dropout: 0.0,
            internal_activation: Activation::LeakyRelu,
        }
    }

    pub fn gru(input_width: usize, cell_width: usize) -> Self {
        CellSpec {
            kind: CellKind::Gru,
            input_width,
            cell_width,
            hidden_layer_widths: Vec::new(),
            stack_depth: 1,
            io_dropout: 0.5,
            hidden_dropout: 0.0,
            internal_activation: Activation::LeakyRelu,
        }
    }

    pub fn with_stack(mut self, depth: usize) -> Self {
        self.stack_depth = depth;
        self
    }

    pub fn with_dropout(mut self, io: f64, hidden: f64) -> Self {
        self.io_dropout = io;
        self.hidden_dropout = hidden;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 || self.cell_width == 0 {
            return Err(Error::Config("cell widths must be positive".into()));
        }
        if self.stack_depth == 0 {
            return Err(Error::Config("stack depth must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.io_dropout) || !(0.0..1.0).contains(&self.hidden_dropout) {
            return Err(Error::Config("dropout probabilities must lie in [0, 1)".into()));
        }
        if self.kind != CellKind::HLstm && !self.hidden_layer_widths.is_empty() {
            return Err(Error::Config(
                "hidden layers are only available on the hlstm cell".into(),
            ));
        }
        if self.hidden_layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        match self.internal_activation {
            Activation::Relu | Activation::LeakyRelu => Ok(()),
            _ => Err(Error::Config(
                "internal activation must be relu or leaky_relu".into(),
            )),
        }
    }
}

/// One DNN gate: hidden layers plus the output projection.
#[derive(Clone, Debug)]
struct GateWiring {
    hidden: Vec<(ParamId, ParamId)>,
    out_w: ParamId,
    out_b: ParamId,
    gate_activation: Activation,
}

#[derive(Clone, Debug)]
enum LayerWiring {
    /// f, i, o, g in order; LSTM is the hidden-free case.
    Gated([GateWiring; 4]),
    Gru {
        update: (ParamId, ParamId),
        reset: (ParamId, ParamId),
        candidate: (ParamId, ParamId),
    },
}

/// Per-layer recurrent state as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct StateIds {
    pub h: NodeId,
    pub c: Option<NodeId>,
}

/// One gate hidden layer observed during a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct HiddenProbe {
    /// Weight tensor of the hidden layer.
    pub layer: ParamId,
    /// Pre-activation node (affine output).
    pub pre: NodeId,
    /// Post-activation node.
    pub post: NodeId,
}

/// Result of unrolling a sequence.
pub struct Rollout {
    /// Top-layer output per step, after output dropout in train mode.
    pub outputs: Vec<NodeId>,
    /// Final recurrent state per stacked layer.
    pub states: Vec<StateIds>,
    /// Every gate hidden layer touched by the pass.
    pub hidden_probe: Vec<HiddenProbe>,
}

/// A stacked recurrent model plus optional readout projection.
#[derive(Clone, Debug)]
pub struct CellModel {
    pub spec: CellSpec,
    pub params: ParamStore,
    layers: Vec<LayerWiring>,
    readout: Option<(ParamId, ParamId)>,
    pub output_width: Option<usize>,
}

const GATE_NAMES: [&str; 4] = ["f", "i", "o", "g"];

impl CellModel {
    /// Build a model with fresh Gaussian weights and random seed masks at the
    /// requested sparsity (0.0 gives dense all-ones masks).
    pub fn init<R: Rng>(
        spec: CellSpec,
        output_width: Option<usize>,
        seed_sparsity: f64,
        rng: &mut R,
    ) -> Result<CellModel> {
        spec.validate()?;
        let mut params = ParamStore::new();
        let mut layers = Vec::with_capacity(spec.stack_depth);
        let make_mask = |rows: usize, cols: usize, rng: &mut R| -> Result<Mask> {
            if seed_sparsity == 0.0 {
                Ok(Mask::ones(rows, cols))
            } else {
                Ok(seed_mask(rows, cols, seed_sparsity, rng)?.mask)
            }
        };
        for l in 0..spec.stack_depth {
            let d = if l == 0 { spec.input_width } else { spec.cell_width };
            let n = spec.cell_width;
            let layer = match spec.kind {
                CellKind::HLstm | CellKind::Lstm => {
                    let mut gates = Vec::with_capacity(4);
                    for (gi, gname) in GATE_NAMES.iter().enumerate() {
                        let mut hidden = Vec::new();
                        let mut in_w = d + n;
                        for (j, &m) in spec.hidden_layer_widths.iter().enumerate() {
                            let mask = make_mask(m, in_w, rng)?;
                            let w = params.add_weight(
                                format!("layer{}.{}.h{}.w", l + 1, gname, j),
                                m,
                                in_w,
                                mask,
                                rng,
                            )?;
                            let b = params.add_bias(format!("layer{}.{}.h{}.b", l + 1, gname, j), m);
                            hidden.push((w, b));
                            in_w = m;
                        }
                        let mask = make_mask(n, in_w, rng)?;
                        let out_w = params.add_weight(
                            format!("layer{}.{}.out.w", l + 1, gname),
                            n,
                            in_w,
                            mask,
                            rng,
                        )?;
                        let out_b = params.add_bias(format!("layer{}.{}.out.b", l + 1, gname), n);
                        gates.push(GateWiring {
                            hidden,
                            out_w,
                            out_b,
                            gate_activation: if gi == 3 { Activation::Tanh } else { Activation::Sigmoid },
                        });
                    }
                    LayerWiring::Gated(gates.try_into().map_err(|_| Error::Contract("gate count".into()))?)
                }
                CellKind::Gru => {
                    let gate = |name: &str, params: &mut ParamStore, rng: &mut R| -> Result<(ParamId, ParamId)> {
                        let mask = if seed_sparsity == 0.0 {
                            Mask::ones(n, d + n)
                        } else {
                            seed_mask(n, d + n, seed_sparsity, rng)?.mask
                        };
                        let w = params.add_weight(format!("layer{}.{}.w", l + 1, name), n, d + n, mask, rng)?;
                        let b = params.add_bias(format!("layer{}.{}.b", l + 1, name), n);
                        Ok((w, b))
                    };
                    LayerWiring::Gru {
                        update: gate("z", &mut params, rng)?,
                        reset: gate("r", &mut params, rng)?,
                        candidate: gate("n", &mut params, rng)?,
                    }
                }
            };
            layers.push(layer);
        }
        // The readout is task plumbing, not part of the cell: it stays dense
        // and outside the grow/prune policies.
        let readout = match output_width {
            Some(ow) => {
                if ow == 0 {
                    return Err(Error::Config("output width must be positive".into()));
                }
                let w = params.add_dense_weight("readout.w", ow, spec.cell_width, rng);
                let b = params.add_bias("readout.b", ow);
                Some((w, b))
            }
            None => None,
        };
        Ok(CellModel {
            spec,
            params,
            layers,
            readout,
            output_width,
        })
    }

    /// Zero initial state for every stacked layer.
    pub fn init_state(&self, tape: &mut Tape) -> Vec<StateIds> {
        let n = self.spec.cell_width;
        self.layers
            .iter()
            .map(|layer| {
                let h = tape.input(vec![0.0; n]);
                let c = match layer {
                    LayerWiring::Gated(_) => Some(tape.input(vec![0.0; n])),
                    LayerWiring::Gru { .. } => None,
                };
                StateIds { h, c }
            })
            .collect()
    }

    fn io_dropout<R: Rng>(&self, tape: &mut Tape, x: NodeId, mode: Mode, rng: &mut R) -> Result<NodeId> {
        if mode == Mode::Train && self.spec.io_dropout > 0.0 {
            tape.dropout(x, self.spec.io_dropout, rng)
        } else {
            Ok(x)
        }
    }

    fn gate_forward<R: Rng>(
        &self,
        tape: &mut Tape,
        gate: &GateWiring,
        input: NodeId,
        mode: Mode,
        rng: &mut R,
        probe: &mut Vec<HiddenProbe>,
    ) -> Result<NodeId> {
        let mut a = input;
        for &(w, b) in &gate.hidden {
            let pre = tape.affine(&self.params, w, b, a)?;
            a = tape.activation(self.spec.internal_activation, pre);
            probe.push(HiddenProbe { layer: w, pre, post: a });
            if mode == Mode::Train && self.spec.hidden_dropout > 0.0 {
                a = tape.dropout(a, self.spec.hidden_dropout, rng)?;
            }
        }
        let z = tape.affine(&self.params, gate.out_w, gate.out_b, a)?;
        Ok(tape.activation(gate.gate_activation, z))
    }

    /// Advance every stacked layer by one step. Returns the top-layer output
    /// node (post output-dropout in train mode); `states` is updated in
    /// place with the clean recurrent state.
    pub fn step<R: Rng>(
        &self,
        tape: &mut Tape,
        x: NodeId,
        states: &mut [StateIds],
        mode: Mode,
        rng: &mut R,
        probe: &mut Vec<HiddenProbe>,
    ) -> Result<NodeId> {
        if states.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "state entries {} vs stacked layers {}",
                states.len(),
                self.layers.len()
            )));
        }
        if tape.value(x).len() != self.spec.input_width {
            return Err(Error::Shape(format!(
                "step input width {} vs spec {}",
                tape.value(x).len(),
                self.spec.input_width
            )));
        }
        let mut carried = x;
        for (layer, state) in self.layers.iter().zip(states.iter_mut()) {
            let xin = self.io_dropout(tape, carried, mode, rng)?;
            match layer {
                LayerWiring::Gated(gates) => {
                    let cat = tape.concat(xin, state.h);
                    let f = self.gate_forward(tape, &gates[0], cat, mode, rng, probe)?;
                    let i = self.gate_forward(tape, &gates[1], cat, mode, rng, probe)?;
                    let o = self.gate_forward(tape, &gates[2], cat, mode, rng, probe)?;
                    let g = self.gate_forward(tape, &gates[3], cat, mode, rng, probe)?;
                    let c_prev = state.c.ok_or_else(|| Error::Contract("gated layer without cell state".into()))?;
                    let fc = tape.mul(f, c_prev)?;
                    let ig = tape.mul(i, g)?;
                    let c_new = tape.add(fc, ig)?;
                    let tc = tape.activation(Activation::Tanh, c_new);
                    let h_new = tape.mul(o, tc)?;
                    state.h = h_new;
                    state.c = Some(c_new);
                    carried = h_new;
                }
                LayerWiring::Gru { update, reset, candidate } => {
                    let cat = tape.concat(xin, state.h);
                    let z_pre = tape.affine(&self.params, update.0, update.1, cat)?;
                    let z = tape.activation(Activation::Sigmoid, z_pre);
                    let r_pre = tape.affine(&self.params, reset.0, reset.1, cat)?;
                    let r = tape.activation(Activation::Sigmoid, r_pre);
                    let rh = tape.mul(r, state.h)?;
                    let cat2 = tape.concat(xin, rh);
                    let n_pre = tape.affine(&self.params, candidate.0, candidate.1, cat2)?;
                    let n = tape.activation(Activation::Tanh, n_pre);
                    // h' = (1 - z) ⊗ n + z ⊗ h = n - z⊗n + z⊗h
                    let zn = tape.mul(z, n)?;
                    let zh = tape.mul(z, state.h)?;
                    let keep = tape.sub(n, zn)?;
                    let h_new = tape.add(keep, zh)?;
                    state.h = h_new;
                    carried = h_new;
                }
            }
        }
        self.io_dropout(tape, carried, mode, rng)
    }

    /// Unroll over a full input sequence from zero initial state.
    pub fn unroll<R: Rng>(
        &self,
        tape: &mut Tape,
        inputs: &[Vec<f64>],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Rollout> {
        if inputs.is_empty() {
            return Err(Error::Contract("unroll of empty sequence".into()));
        }
        let mut states = self.init_state(tape);
        let mut outputs = Vec::with_capacity(inputs.len());
        let mut probe = Vec::new();
        for step_input in inputs {
            let x = tape.input(step_input.clone());
            let out = self.step(tape, x, &mut states, mode, rng, &mut probe)?;
            outputs.push(out);
        }
        Ok(Rollout {
            outputs,
            states,
            hidden_probe: probe,
        })
    }

    /// Apply the readout projection to one output node.
    pub fn readout(&self, tape: &mut Tape, h: NodeId) -> Result<NodeId> {
        let (w, b) = self
            .readout
            .ok_or_else(|| Error::Contract("model has no readout projection".into()))?;
        tape.affine(&self.params, w, b, h)
    }

    pub fn has_readout(&self) -> bool {
        self.readout.is_some()
    }

    /// Whether any gate carries hidden layers (activation shift is a no-op
    /// otherwise).
    pub fn has_hidden_layers(&self) -> bool {
        !self.spec.hidden_layer_widths.is_empty() && self.spec.kind == CellKind::HLstm
    }

    /// Weight-tensor chains of each DNN gate, hidden layers then output
    /// projection, for neuron pruning. Gates without hidden layers yield no
    /// chain.
    pub fn gate_chains(&self) -> Vec<Vec<ParamId>> {
        let mut chains = Vec::new();
        for layer in &self.layers {
            if let LayerWiring::Gated(gates) = layer {
                for gate in gates {
                    if gate.hidden.is_empty() {
                        continue;
                    }
                    let mut chain: Vec<ParamId> = gate.hidden.iter().map(|&(w, _)| w).collect();
                    chain.push(gate.out_w);
                    chains.push(chain);
                }
            }
        }
        chains
    }

    /// Masked tensors grouped per stacked layer (plus the readout), for
    /// Table-style sparsity reporting.
    pub fn layer_groups(&self) -> Vec<(String, Vec<ParamId>)> {
        let mut groups: Vec<(String, Vec<ParamId>)> = Vec::new();
        for id in self.params.masked_ids() {
            let name = &self.params.tensor(id).name;
            let group = name.split('.').next().unwrap_or(name).to_string();
            match groups.iter_mut().find(|(g, _)| *g == group) {
                Some((_, ids)) => ids.push(id),
                None => groups.push((group, vec![id])),
            }
        }
        groups
    }

    /// Per-masked-tensor sparsity report.
    pub fn sparsity_report(&self) -> crate::sparsity::SparsityReport {
        let layers = self
            .params
            .iter()
            .filter_map(|(_, t)| {
                t.mask.as_ref().map(|m| crate::sparsity::LayerSparsity {
                    name: t.name.clone(),
                    total: m.len(),
                    active: m.active_count(),
                })
            })
            .collect();
        crate::sparsity::SparsityReport { layers }
    }

    /// Total sparsity over all masked tensors.
    pub fn total_sparsity(&self) -> f64 {
        self.sparsity_report().total_sparsity()
    }

    /// Total active weight count over masked tensors plus all bias entries.
    pub fn active_param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.active_count()).sum()
    }
}
