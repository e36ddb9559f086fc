use serde::{Deserialize, Serialize};

use super::matrix::Matrix;

/// A tensor plus its gradient slot. Slots are assigned by the owning
/// [`Model`](super::Model) in a fixed traversal order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: Matrix,
    pub frozen: bool,
    #[serde(skip)]
    pub(crate) slot: usize,
}

impl Param {
    pub fn new(value: Matrix) -> Self {
        Param { value, frozen: false, slot: usize::MAX }
    }

    pub fn slot(&self) -> usize {
        self.slot
    }
}

/// Gradient storage indexed by parameter slot. Frozen parameters get `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    slots: Vec<Option<Matrix>>,
}

impl Grads {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Param>) -> Self {
        let mut slots: Vec<Option<Matrix>> = Vec::new();
        for p in params {
            if slots.len() <= p.slot {
                slots.resize(p.slot + 1, None);
            }
            if !p.frozen {
                let (r, c) = p.value.shape();
                slots[p.slot] = Some(Matrix::zeros(r, c));
            }
        }
        Grads { slots }
    }

    pub fn slot_mut(&mut self, p: &Param) -> Option<&mut Matrix> {
        self.slots.get_mut(p.slot).and_then(Option::as_mut)
    }

    pub fn get(&self, p: &Param) -> Option<&Matrix> {
        self.slots.get(p.slot).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Number of slots holding storage.
    pub fn allocated(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn zero(&mut self) {
        self.slots.iter_mut().flatten().for_each(|m| m.fill(0.0));
    }

    pub fn scale(&mut self, s: f64) {
        self.slots.iter_mut().flatten().for_each(|m| m.scale(s));
    }

    pub fn global_norm(&self) -> f64 {
        self.slots.iter().flatten().map(Matrix::sum_squares).sum::<f64>().sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`. Returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.global_norm();
        if n > max_norm {
            self.scale(max_norm / n);
        }
        n
    }

    pub fn is_finite(&self) -> bool {
        self.slots.iter().flatten().all(Matrix::is_finite)
    }
}
