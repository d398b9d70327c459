//! Vector-valued reverse-mode differentiation over a recorded tape.
//!
//! The tape records the primitives a cell step needs: masked affine maps,
//! elementwise activations and arithmetic, concatenation, inverted dropout,
//! and scalar reduction losses. Nodes are appended in execution order, so
//! every node's inputs precede it and one reverse sweep computes all
//! adjoints.
//!
//! Masked affine layers have a deliberate asymmetry in their backward rule:
//! the input adjoint uses the masked weights (that is the true derivative of
//! the forward value), while the weight gradient is the plain outer product
//! `delta ⊗ x` with no mask applied. A dormant weight therefore reports the
//! gradient it *would* have if the connection existed, which is exactly the
//! quantity the growth policy ranks. Since dormant weights are stored as
//! zero, this equals the derivative at the same point with the mask bit
//! flipped on.

use crate::error::{Error, Result};
use crate::params::{GradStore, ParamId, ParamStore};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Slope of the leaky ReLU's negative branch.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Elementwise activation kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => {
                if z >= 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
        }
    }

    /// Derivative given the pre-activation `z` and the output `y`.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if z >= 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }
}

/// Handle to one recorded node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum Node {
    Input,
    Affine { w: ParamId, b: ParamId, x: NodeId },
    Act { kind: Activation, x: NodeId },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Concat(NodeId, NodeId),
    Dropout { x: NodeId, keep: Vec<bool>, scale: f64 },
    /// Sum of squared componentwise errors against a fixed target.
    SquaredError { pred: NodeId, target: Vec<f64> },
    /// Softmax cross-entropy (nats) against one target index.
    CrossEntropy { logits: NodeId, target: usize },
    /// Arithmetic mean of scalar nodes.
    Mean(Vec<NodeId>),
}

/// Recorded computation: node list plus per-node forward values.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    vals: Vec<Vec<f64>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Drop all recorded nodes, keeping allocations where possible.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.vals.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.vals[id.0]
    }

    /// Scalar value of a length-1 node.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        match self.vals[id.0].as_slice() {
            [v] => Ok(*v),
            v => Err(Error::Contract(format!("expected scalar node, got length {}", v.len()))),
        }
    }

    fn push(&mut self, node: Node, val: Vec<f64>) -> NodeId {
        self.nodes.push(node);
        self.vals.push(val);
        NodeId(self.nodes.len() - 1)
    }

    fn zip_lengths(&self, a: NodeId, b: NodeId, op: &str) -> Result<()> {
        let (la, lb) = (self.vals[a.0].len(), self.vals[b.0].len());
        if la != lb {
            return Err(Error::Shape(format!("{op}: lengths {la} vs {lb}")));
        }
        Ok(())
    }

    pub fn input(&mut self, v: Vec<f64>) -> NodeId {
        self.push(Node::Input, v)
    }

    /// `(W ⊙ M) x + b`. Masked entries contribute zero regardless of the
    /// stored weight value.
    pub fn affine(&mut self, ps: &ParamStore, w: ParamId, b: ParamId, x: NodeId) -> Result<NodeId> {
        let wt = ps.tensor(w);
        let bt = ps.tensor(b);
        let xv = &self.vals[x.0];
        if wt.value.cols() != xv.len() {
            return Err(Error::Shape(format!(
                "affine {}: weight cols {} vs input {}",
                wt.name,
                wt.value.cols(),
                xv.len()
            )));
        }
        if bt.value.rows() != wt.value.rows() {
            return Err(Error::Shape(format!(
                "affine {}: bias len {} vs rows {}",
                wt.name,
                bt.value.rows(),
                wt.value.rows()
            )));
        }
        let rows = wt.value.rows();
        let cols = wt.value.cols();
        let wd = wt.value.data();
        let bd = bt.value.data();
        let mut out = vec![0.0; rows];
        match &wt.mask {
            Some(mask) => {
                let md = mask.data();
                for (r, o) in out.iter_mut().enumerate() {
                    let row = &wd[r * cols..(r + 1) * cols];
                    let mrow = &md[r * cols..(r + 1) * cols];
                    let mut acc = 0.0;
                    for k in 0..cols {
                        if mrow[k] != 0 {
                            acc += row[k] * xv[k];
                        }
                    }
                    *o = acc + bd[r];
                }
            }
            None => {
                for (r, o) in out.iter_mut().enumerate() {
                    let row = &wd[r * cols..(r + 1) * cols];
                    let mut acc = 0.0;
                    for k in 0..cols {
                        acc += row[k] * xv[k];
                    }
                    *o = acc + bd[r];
                }
            }
        }
        Ok(self.push(Node::Affine { w, b, x }, out))
    }

    pub fn activation(&mut self, kind: Activation, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.vals[x.0].iter().map(|&z| kind.apply(z)).collect();
        self.push(Node::Act { kind, x }, out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_lengths(a, b, "add")?;
        let out: Vec<f64> = self.vals[a.0]
            .iter()
            .zip(self.vals[b.0].iter())
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(Node::Add(a, b), out))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_lengths(a, b, "sub")?;
        let out: Vec<f64> = self.vals[a.0]
            .iter()
            .zip(self.vals[b.0].iter())
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(Node::Sub(a, b), out))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_lengths(a, b, "mul")?;
        let out: Vec<f64> = self.vals[a.0]
            .iter()
            .zip(self.vals[b.0].iter())
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(Node::Mul(a, b), out))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut out = self.vals[a.0].clone();
        out.extend_from_slice(&self.vals[b.0]);
        self.push(Node::Concat(a, b), out)
    }

    /// Inverted dropout: kept entries are scaled by 1/(1-p) at record time so
    /// evaluation needs no correction. Callers skip this node entirely in
    /// eval mode or when p == 0.
    pub fn dropout<R: Rng>(&mut self, x: NodeId, p: f64, rng: &mut R) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Contract(format!("dropout probability {p} not in [0, 1)")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let scale = 1.0 / (1.0 - p);
        let keep: Vec<bool> = (0..self.vals[x.0].len())
            .map(|_| rng.random::<f64>() >= p)
            .collect();
        let out: Vec<f64> = self.vals[x.0]
            .iter()
            .zip(keep.iter())
            .map(|(&v, &k)| if k { v * scale } else { 0.0 })
            .collect();
        Ok(self.push(Node::Dropout { x, keep, scale }, out))
    }

    pub fn squared_error(&mut self, pred: NodeId, target: &[f64]) -> Result<NodeId> {
        if self.vals[pred.0].len() != target.len() {
            return Err(Error::Shape(format!(
                "squared_error: prediction {} vs target {}",
                self.vals[pred.0].len(),
                target.len()
            )));
        }
        let loss: f64 = self.vals[pred.0]
            .iter()
            .zip(target.iter())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        Ok(self.push(
            Node::SquaredError {
                pred,
                target: target.to_vec(),
            },
            vec![loss],
        ))
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let z = &self.vals[logits.0];
        if target >= z.len() {
            return Err(Error::Contract(format!(
                "cross_entropy target {target} out of range {}",
                z.len()
            )));
        }
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        Ok(self.push(Node::CrossEntropy { logits, target }, vec![lse - z[target]]))
    }

    pub fn mean(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        if terms.is_empty() {
            return Err(Error::Contract("mean of zero terms".into()));
        }
        let mut acc = 0.0;
        for t in terms {
            acc += self.scalar(*t)?;
        }
        let n = terms.len() as f64;
        Ok(self.push(Node::Mean(terms.to_vec()), vec![acc / n]))
    }

    /// Reverse sweep from a scalar loss node. Parameter gradients are added
    /// into `out`, so a caller accumulating over samples passes the same
    /// store repeatedly.
    pub fn backward(&self, ps: &ParamStore, loss: NodeId, out: &mut GradStore) -> Result<()> {
        if self.vals[loss.0].len() != 1 {
            return Err(Error::Contract(format!(
                "loss node must be scalar, got length {}",
                self.vals[loss.0].len()
            )));
        }
        let mut adj: Vec<Vec<f64>> = Vec::with_capacity(loss.0 + 1);
        for v in &self.vals[..=loss.0] {
            adj.push(vec![0.0; v.len()]);
        }
        adj[loss.0][0] = 1.0;
        let mut live = vec![false; loss.0 + 1];
        live[loss.0] = true;

        for i in (0..=loss.0).rev() {
            if !live[i] {
                continue;
            }
            let delta = std::mem::take(&mut adj[i]);
            match &self.nodes[i] {
                Node::Input => {}
                Node::Affine { w, b, x } => {
                    let wt = ps.tensor(*w);
                    let rows = wt.value.rows();
                    let cols = wt.value.cols();
                    let xv = &self.vals[x.0];
                    // Dense weight gradient: delta ⊗ x, mask ignored so
                    // dormant connections keep a usable gradient.
                    let gw = out.grad_mut(*w).data_mut();
                    for r in 0..rows {
                        let d = delta[r];
                        if d == 0.0 {
                            continue;
                        }
                        let grow = &mut gw[r * cols..(r + 1) * cols];
                        for (g, xk) in grow.iter_mut().zip(xv.iter()) {
                            *g += d * xk;
                        }
                    }
                    let gb = out.grad_mut(*b).data_mut();
                    for (g, d) in gb.iter_mut().zip(delta.iter()) {
                        *g += d;
                    }
                    // Input adjoint uses the masked weights.
                    let wd = wt.value.data();
                    let dx = &mut adj[x.0];
                    match &wt.mask {
                        Some(mask) => {
                            let md = mask.data();
                            for r in 0..rows {
                                let d = delta[r];
                                if d == 0.0 {
                                    continue;
                                }
                                let rowi = r * cols;
                                for k in 0..cols {
                                    if md[rowi + k] != 0 {
                                        dx[k] += wd[rowi + k] * d;
                                    }
                                }
                            }
                        }
                        None => {
                            for r in 0..rows {
                                let d = delta[r];
                                if d == 0.0 {
                                    continue;
                                }
                                let rowi = r * cols;
                                for k in 0..cols {
                                    dx[k] += wd[rowi + k] * d;
                                }
                            }
                        }
                    }
                    live[x.0] = true;
                }
                Node::Act { kind, x } => {
                    let zs = &self.vals[x.0];
                    let ys = &self.vals[i];
                    let dx = &mut adj[x.0];
                    for k in 0..delta.len() {
                        dx[k] += delta[k] * kind.derivative(zs[k], ys[k]);
                    }
                    live[x.0] = true;
                }
                Node::Add(a, b) => {
                    for (slot, d) in adj[a.0].iter_mut().zip(delta.iter()) {
                        *slot += d;
                    }
                    for (slot, d) in adj[b.0].iter_mut().zip(delta.iter()) {
                        *slot += d;
                    }
                    live[a.0] = true;
                    live[b.0] = true;
                }
                Node::Sub(a, b) => {
                    for (slot, d) in adj[a.0].iter_mut().zip(delta.iter()) {
                        *slot += d;
                    }
                    for (slot, d) in adj[b.0].iter_mut().zip(delta.iter()) {
                        *slot -= d;
                    }
                    live[a.0] = true;
                    live[b.0] = true;
                }
                Node::Mul(a, b) => {
                    let av = &self.vals[a.0];
                    let bv = &self.vals[b.0];
                    for k in 0..delta.len() {
                        adj[a.0][k] += delta[k] * bv[k];
                    }
                    for k in 0..delta.len() {
                        adj[b.0][k] += delta[k] * av[k];
                    }
                    live[a.0] = true;
                    live[b.0] = true;
                }
                Node::Concat(a, b) => {
                    let na = self.vals[a.0].len();
                    for (slot, d) in adj[a.0].iter_mut().zip(delta[..na].iter()) {
                        *slot += d;
                    }
                    for (slot, d) in adj[b.0].iter_mut().zip(delta[na..].iter()) {
                        *slot += d;
                    }
                    live[a.0] = true;
                    live[b.0] = true;
                }
                Node::Dropout { x, keep, scale } => {
                    let dx = &mut adj[x.0];
                    for k in 0..delta.len() {
                        if keep[k] {
                            dx[k] += delta[k] * scale;
                        }
                    }
                    live[x.0] = true;
                }
                Node::SquaredError { pred, target } => {
                    let pv = &self.vals[pred.0];
                    let d = delta[0];
                    let dp = &mut adj[pred.0];
                    for k in 0..pv.len() {
                        dp[k] += d * 2.0 * (pv[k] - target[k]);
                    }
                    live[pred.0] = true;
                }
                Node::CrossEntropy { logits, target } => {
                    let z = &self.vals[logits.0];
                    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    let d = delta[0];
                    let dz = &mut adj[logits.0];
                    for k in 0..z.len() {
                        let softmax = (z[k] - lse).exp();
                        dz[k] += d * (softmax - if k == *target { 1.0 } else { 0.0 });
                    }
                    live[logits.0] = true;
                }
                Node::Mean(terms) => {
                    let share = delta[0] / terms.len() as f64;
                    for t in terms {
                        adj[t.0][0] += share;
                        live[t.0] = true;
                    }
                }
            }
        }
        Ok(())
    }
}
