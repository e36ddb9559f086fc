//! Dense layers with optional low-rank adapters.
//!
//! `y = W x + bias + (alpha / rank) · B (A x)` where `W` and `bias` are the
//! frozen base and `A` (rank × d_in), `B` (d_out × rank) are trainable.
//! `B` starts at zero so a freshly injected adapter changes nothing.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::param::{Grads, Param};
use super::ModelError;

/// Which projection a dense layer implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    AttnQ,
    AttnK,
    AttnV,
    AttnO,
    FfnIn,
    FfnOut,
    /// Final vocabulary projection; never an adapter target.
    Output,
}

impl Role {
    pub const ADAPTABLE: [Role; 6] = [Role::AttnQ, Role::AttnK, Role::AttnV, Role::AttnO, Role::FfnIn, Role::FfnOut];

    pub fn name(self) -> &'static str {
        match self {
            Role::AttnQ => "attn_q",
            Role::AttnK => "attn_k",
            Role::AttnV => "attn_v",
            Role::AttnO => "attn_o",
            Role::FfnIn => "ffn_in",
            Role::FfnOut => "ffn_out",
            Role::Output => "output",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        Role::ADAPTABLE.into_iter().chain([Role::Output]).find(|r| r.name() == s)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub alpha: f64,
    pub rank: usize,
    pub targets: BTreeSet<Role>,
}

impl LoraConfig {
    /// Adapters on the query and value projections.
    pub fn new(alpha: f64, rank: usize) -> Self {
        LoraConfig { alpha, rank, targets: [Role::AttnQ, Role::AttnV].into() }
    }

    pub fn with_targets(mut self, targets: impl IntoIterator<Item = Role>) -> Self {
        self.targets = targets.into_iter().collect();
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(ModelError::InvalidConfig(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.rank == 0 {
            return Err(ModelError::InvalidConfig("rank must be at least 1".into()));
        }
        if self.targets.contains(&Role::Output) {
            return Err(ModelError::InvalidConfig("the output projection cannot carry an adapter".into()));
        }
        Ok(())
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    /// rank × d_in.
    pub a: Param,
    /// d_out × rank.
    pub b: Param,
    pub alpha: f64,
    pub rank: usize,
    pub enabled: bool,
    /// Set while `B·A` is folded into the base weight.
    pub merged: bool,
}

impl LoraAdapter {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// `(alpha / rank) · B · A`.
    pub fn delta(&self) -> Matrix {
        let mut d = self.b.value.matmul(&self.a.value);
        d.scale(self.scaling());
        d
    }

    pub fn param_count(&self) -> usize {
        self.a.value.len() + self.b.value.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedLinear {
    pub role: Role,
    /// d_out × d_in.
    pub weight: Param,
    /// 1 × d_out.
    pub bias: Param,
    pub adapter: Option<LoraAdapter>,
}

#[derive(Debug, Clone)]
pub struct LinearCache {
    x: Matrix,
    /// `x · Aᵀ` when the adapter took part in the forward pass.
    xa: Option<Matrix>,
}

impl AdaptedLinear {
    /// Weights from N(0, 1/d_in), zero bias.
    pub fn new<R: Rng>(role: Role, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        AdaptedLinear {
            role,
            weight: Param::new(Matrix::random_normal(d_out, d_in, 1.0 / (d_in as f64).sqrt(), rng)),
            bias: Param::new(Matrix::zeros(1, d_out)),
            adapter: None,
        }
    }

    pub fn from_parts(role: Role, weight: Matrix, bias: Matrix) -> Result<Self, ModelError> {
        if bias.shape() != (1, weight.rows()) {
            return Err(ModelError::DimensionMismatch {
                expected: format!("bias 1x{}", weight.rows()),
                got: format!("{}x{}", bias.rows(), bias.cols()),
            });
        }
        Ok(AdaptedLinear { role, weight: Param::new(weight), bias: Param::new(bias), adapter: None })
    }

    pub fn d_in(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.value.rows()
    }

    fn active_adapter(&self) -> Option<&LoraAdapter> {
        self.adapter.as_ref().filter(|a| a.enabled && !a.merged)
    }

    /// Attaches an adapter with `A ~ N(0, (1/rank)²)` and `B = 0`.
    pub fn inject<R: Rng>(&mut self, alpha: f64, rank: usize, rng: &mut R) -> Result<(), ModelError> {
        let limit = self.d_in().min(self.d_out());
        if rank > limit {
            return Err(ModelError::RankTooLarge { rank, limit, role: self.role });
        }
        self.adapter = Some(LoraAdapter {
            a: Param::new(Matrix::random_normal(rank, self.d_in(), 1.0 / rank as f64, rng)),
            b: Param::new(Matrix::zeros(self.d_out(), rank)),
            alpha,
            rank,
            enabled: true,
            merged: false,
        });
        Ok(())
    }

    /// Folds the adapter into `W` and disables it. Returns false when there is
    /// nothing to merge.
    pub fn merge(&mut self) -> bool {
        match &mut self.adapter {
            Some(ad) if !ad.merged => {
                self.weight.value.add_scaled(&ad.delta(), 1.0);
                ad.merged = true;
                ad.enabled = false;
                true
            }
            _ => false,
        }
    }

    /// Subtracts the recorded `B·A` product from `W` and re-enables the adapter.
    pub fn unmerge(&mut self) -> bool {
        match &mut self.adapter {
            Some(ad) if ad.merged => {
                self.weight.value.add_scaled(&ad.delta(), -1.0);
                ad.merged = false;
                ad.enabled = true;
                true
            }
            _ => false,
        }
    }

    /// `W + (alpha/rank)·B·A` if the adapter is active, else `W`.
    pub fn effective_weight(&self) -> Matrix {
        let mut w = self.weight.value.clone();
        if let Some(ad) = self.active_adapter() {
            w.add_scaled(&ad.delta(), 1.0);
        }
        w
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &Matrix) -> (Matrix, LinearCache) {
        let mut y = x.matmul_t(&self.weight.value);
        let bias = self.bias.value.data();
        for i in 0..y.rows() {
            y.row_mut(i).iter_mut().zip(bias).for_each(|(v, b)| *v += b);
        }
        let xa = self.active_adapter().map(|ad| {
            let xa = x.matmul_t(&ad.a.value);
            let mut up = xa.matmul_t(&ad.b.value);
            up.scale(ad.scaling());
            y.add_scaled(&up, 1.0);
            xa
        });
        (y, LinearCache { x: x.clone(), xa })
    }

    /// Accumulates parameter gradients into `grads` (trainable slots only)
    /// and returns `dL/dx`.
    pub fn backward(&self, cache: &LinearCache, dy: &Matrix, grads: &mut Grads) -> Matrix {
        let mut dx = dy.matmul(&self.weight.value);
        if let Some(gw) = grads.slot_mut(&self.weight) {
            gw.add_t_matmul(dy, &cache.x, 1.0);
        }
        if let Some(gb) = grads.slot_mut(&self.bias) {
            let gb = gb.data_mut();
            for i in 0..dy.rows() {
                gb.iter_mut().zip(dy.row(i)).for_each(|(g, d)| *g += d);
            }
        }
        if let (Some(ad), Some(xa)) = (self.active_adapter(), &cache.xa) {
            let s = ad.scaling();
            // dy·B, n × rank
            let dyb = dy.matmul(&ad.b.value);
            if let Some(gb) = grads.slot_mut(&ad.b) {
                gb.add_t_matmul(dy, xa, s);
            }
            if let Some(ga) = grads.slot_mut(&ad.a) {
                ga.add_t_matmul(&dyb, &cache.x, s);
            }
            dx.add_scaled(&dyb.matmul(&ad.a.value), s);
        }
        dx
    }
}

/// Applies `layer` to a single input vector.
pub fn lora_forward(layer: &AdaptedLinear, x: &[f64]) -> Result<Vec<f64>, ModelError> {
    if x.len() != layer.d_in() {
        return Err(ModelError::DimensionMismatch {
            expected: format!("input of length {}", layer.d_in()),
            got: format!("length {}", x.len()),
        });
    }
    let xm = Matrix::from_vec(1, x.len(), x.to_vec())?;
    Ok(layer.forward(&xm).into_data())
}
