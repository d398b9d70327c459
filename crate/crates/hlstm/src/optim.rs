//! Adam and Nesterov-momentum SGD with mask-aware updates.
//!
//! After every step the dormant positions of each masked tensor are forced
//! back to exactly 0.0 — weights and moment buffers alike — so pruned
//! connections can never drift and freshly grown ones start from clean
//! moments.

use crate::error::{Error, Result};
use crate::params::{GradStore, ParamStore};
use crate::tensor::Matrix;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    NesterovSgd,
}

/// Learning-rate schedule, evaluated per epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant { base_lr: f64 },
    /// base * factor^(epoch / period), integer division.
    StepDecay { base_lr: f64, factor: f64, period: u32 },
    /// base * factor^epoch.
    PerEpochDecay { base_lr: f64, factor: f64 },
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        let (base, factor, period) = match *self {
            LrSchedule::Constant { base_lr } => (base_lr, 1.0, 1),
            LrSchedule::StepDecay { base_lr, factor, period } => (base_lr, factor, period),
            LrSchedule::PerEpochDecay { base_lr, factor } => (base_lr, factor, 1),
        };
        if base <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0 < factor && factor <= 1.0) {
            return Err(Error::Config("decay factor must lie in (0, 1]".into()));
        }
        if period == 0 {
            return Err(Error::Config("decay period must be at least 1".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: u32) -> f64 {
        match *self {
            LrSchedule::Constant { base_lr } => base_lr,
            LrSchedule::StepDecay { base_lr, factor, period } => {
                base_lr * factor.powi((epoch / period) as i32)
            }
            LrSchedule::PerEpochDecay { base_lr, factor } => base_lr * factor.powi(epoch as i32),
        }
    }
}

/// Optimizer state: hyper-parameters plus per-parameter moment buffers.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub schedule: LrSchedule,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub momentum: f64,
    pub step_count: u64,
    /// First moment (Adam) or momentum buffer (Nesterov).
    pub(crate) m: Vec<Matrix>,
    /// Second moment; unused by Nesterov.
    pub(crate) v: Vec<Matrix>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, schedule: LrSchedule, weight_decay: f64, params: &ParamStore) -> Self {
        let zeros: Vec<Matrix> = params
            .iter()
            .map(|(_, t)| Matrix::zeros(t.value.rows(), t.value.cols()))
            .collect();
        Optimizer {
            kind,
            schedule,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            momentum: 0.9,
            step_count: 0,
            m: zeros.clone(),
            v: match kind {
                OptimizerKind::Adam => zeros,
                OptimizerKind::NesterovSgd => Vec::new(),
            },
        }
    }

    /// Apply one update. Aborts without touching any parameter if a gradient
    /// is non-finite. Weight decay acts only on active weights (dormant ones
    /// are zero, and the final remask keeps them so).
    pub fn step(&mut self, params: &mut ParamStore, grads: &GradStore, epoch: u32) -> Result<()> {
        for (id, g) in grads.iter() {
            if g.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(params.tensor(id).name.clone()));
            }
        }
        let lr = self.schedule.lr_at(epoch);
        let t = self.step_count + 1;
        match self.kind {
            OptimizerKind::Adam => {
                let bc1 = 1.0 - self.beta1.powi(t as i32);
                let bc2 = 1.0 - self.beta2.powi(t as i32);
                for (id, tensor) in params.iter_mut() {
                    let gd = grads.grad(id).data();
                    let md = self.m[id.index()].data_mut();
                    let vd = self.v[id.index()].data_mut();
                    let wd = tensor.value.data_mut();
                    for k in 0..wd.len() {
                        let g = gd[k] + self.weight_decay * wd[k];
                        md[k] = self.beta1 * md[k] + (1.0 - self.beta1) * g;
                        vd[k] = self.beta2 * vd[k] + (1.0 - self.beta2) * g * g;
                        let m_hat = md[k] / bc1;
                        let v_hat = vd[k] / bc2;
                        wd[k] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
                    }
                }
            }
            OptimizerKind::NesterovSgd => {
                for (id, tensor) in params.iter_mut() {
                    let gd = grads.grad(id).data();
                    let md = self.m[id.index()].data_mut();
                    let wd = tensor.value.data_mut();
                    for k in 0..wd.len() {
                        let g = gd[k] + self.weight_decay * wd[k];
                        md[k] = self.momentum * md[k] + g;
                        wd[k] -= lr * (g + self.momentum * md[k]);
                    }
                }
            }
        }
        self.step_count = t;
        self.remask(params);
        Ok(())
    }

    /// Zero dormant weights and their moment entries.
    pub fn remask(&mut self, params: &mut ParamStore) {
        for (id, tensor) in params.iter_mut() {
            let Some(mask) = &tensor.mask else { continue };
            let md = mask.data();
            let wd = tensor.value.data_mut();
            let m1 = self.m[id.index()].data_mut();
            for k in 0..wd.len() {
                if md[k] == 0 {
                    wd[k] = 0.0;
                    m1[k] = 0.0;
                }
            }
            if let Some(v) = self.v.get_mut(id.index()) {
                let vd = v.data_mut();
                for k in 0..vd.len() {
                    if md[k] == 0 {
                        vd[k] = 0.0;
                    }
                }
            }
        }
    }
}
