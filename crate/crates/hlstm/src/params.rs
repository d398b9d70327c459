//! Flat parameter storage shared by the tape, the optimizers, and the
//! grow/prune machinery.
//!
//! Weight matrices always carry a mask; bias vectors never do. Model wiring
//! (gates, layers) references tensors by [`ParamId`], so optimizer buffers
//! and gradient stores can stay as plain parallel vectors.

use crate::error::{Error, Result};
use crate::sparsity::{apply_mask, Mask};
use crate::tensor::Matrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Index of one tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One named parameter tensor. `mask` is `Some` for weight matrices and
/// `None` for biases.
#[derive(Clone, Debug)]
pub struct ParamTensor {
    pub name: String,
    pub value: Matrix,
    pub mask: Option<Mask>,
}

impl ParamTensor {
    pub fn active_count(&self) -> usize {
        match &self.mask {
            Some(m) => m.active_count(),
            None => self.value.len(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    tensors: Vec<ParamTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { tensors: Vec::new() }
    }

    /// Gaussian init with zero mean and sd 1/sqrt(fan_in); fan_in is the
    /// column count of the matrix. Dormant positions are zeroed immediately.
    pub fn add_weight<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        mask: Mask,
        rng: &mut R,
    ) -> Result<ParamId> {
        if mask.rows() != rows || mask.cols() != cols {
            return Err(Error::Shape(format!(
                "mask {}x{} for weight {}x{}",
                mask.rows(),
                mask.cols(),
                rows,
                cols
            )));
        }
        let sd = 1.0 / (cols as f64).sqrt();
        let normal = Normal::new(0.0, sd).expect("positive sd");
        let mut value = Matrix::zeros(rows, cols);
        for v in value.data_mut() {
            *v = normal.sample(rng);
        }
        apply_mask(&mut value, &mask);
        self.tensors.push(ParamTensor {
            name: name.into(),
            value,
            mask: Some(mask),
        });
        Ok(ParamId(self.tensors.len() - 1))
    }

    /// Unmasked weight matrix (same Gaussian init); used for projections
    /// that stay outside the grow/prune game.
    pub fn add_dense_weight<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> ParamId {
        let sd = 1.0 / (cols as f64).sqrt();
        let normal = Normal::new(0.0, sd).expect("positive sd");
        let mut value = Matrix::zeros(rows, cols);
        for v in value.data_mut() {
            *v = normal.sample(rng);
        }
        self.tensors.push(ParamTensor {
            name: name.into(),
            value,
            mask: None,
        });
        ParamId(self.tensors.len() - 1)
    }

    /// Zero-initialized bias of length `len`, stored as a `len x 1` matrix.
    pub fn add_bias(&mut self, name: impl Into<String>, len: usize) -> ParamId {
        self.tensors.push(ParamTensor {
            name: name.into(),
            value: Matrix::zeros(len, 1),
            mask: None,
        });
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensor(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.tensors[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamTensor)> {
        self.tensors.iter().enumerate().map(|(i, t)| (ParamId(i), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut ParamTensor)> {
        self.tensors
            .iter_mut()
            .enumerate()
            .map(|(i, t)| (ParamId(i), t))
    }

    /// Ids of all masked tensors, in storage order.
    pub fn masked_ids(&self) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, t)| t.mask.is_some())
            .map(|(id, _)| id)
            .collect()
    }

    /// Zero every dormant weight in every masked tensor.
    pub fn remask(&mut self) {
        for t in &mut self.tensors {
            if let Some(mask) = &t.mask {
                apply_mask(&mut t.value, mask);
            }
        }
    }
}

/// Dense gradient (or moment) buffers, one matrix per parameter tensor.
///
/// Gradients exist for every entry including dormant ones; the growth policy
/// depends on that.
#[derive(Clone, Debug)]
pub struct GradStore {
    grads: Vec<Matrix>,
}

impl GradStore {
    pub fn zeros_like(params: &ParamStore) -> Self {
        GradStore {
            grads: params
                .tensors
                .iter()
                .map(|t| Matrix::zeros(t.value.rows(), t.value.cols()))
                .collect(),
        }
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }

    pub fn add_assign(&mut self, other: &GradStore) -> Result<()> {
        if self.grads.len() != other.grads.len() {
            return Err(Error::Shape("gradient stores of different arity".into()));
        }
        for (a, b) in self.grads.iter_mut().zip(other.grads.iter()) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.grads {
            g.scale(s);
        }
    }

    pub fn abs_in_place(&mut self) {
        for g in &mut self.grads {
            g.abs_in_place();
        }
    }

    pub fn reset(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weight_init_respects_mask_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let mut mask = Mask::ones(4, 16);
        mask.set(0, 0, false);
        mask.set(3, 15, false);
        let id = store.add_weight("w", 4, 16, mask, &mut rng).unwrap();
        let t = store.tensor(id);
        assert_eq!(t.value[(0, 0)], 0.0);
        assert_eq!(t.value[(3, 15)], 0.0);
        assert_eq!(t.active_count(), 62);
        // sd = 1/4; all draws should sit well inside 6 sigma.
        assert!(t.value.data().iter().all(|v| v.abs() < 1.5));
    }

    #[test]
    fn same_seed_same_init() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut store = ParamStore::new();
            store
                .add_weight("w", 3, 3, Mask::ones(3, 3), &mut rng)
                .unwrap();
            store
        };
        let a = build();
        let b = build();
        assert_eq!(a.tensor(ParamId(0)).value, b.tensor(ParamId(0)).value);
    }

    #[test]
    fn grad_store_accumulates() {
        let mut store = ParamStore::new();
        store.add_bias("b", 3);
        let mut g1 = GradStore::zeros_like(&store);
        g1.grad_mut(ParamId(0)).data_mut()[1] = 2.0;
        let mut g2 = GradStore::zeros_like(&store);
        g2.grad_mut(ParamId(0)).data_mut()[1] = 0.5;
        g1.add_assign(&g2).unwrap();
        g1.scale(2.0);
        assert_eq!(g1.grad(ParamId(0)).data()[1], 5.0);
    }
}
