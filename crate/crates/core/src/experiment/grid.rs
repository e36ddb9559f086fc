use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::model::{LoraConfig, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Campaign {
    /// Batch size × learning rate × epochs at a fixed adapter setting.
    Base,
    /// Adapter alpha × rank at fixed training hyperparameters.
    Lora,
}

impl std::str::FromStr for Campaign {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(Campaign::Base),
            "lora" => Ok(Campaign::Lora),
            other => Err(format!("unknown campaign {other:?} (expected base or lora)")),
        }
    }
}

/// Hyperparameter values at the original scale. Alpha and rank are divided
/// by `scale_divisor` when trials are enumerated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub batch_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub epochs: Vec<usize>,
    pub base_alpha: f64,
    pub base_rank: usize,
    pub alphas: Vec<f64>,
    pub ranks: Vec<usize>,
    pub lora_batch_size: usize,
    pub lora_learning_rate: f64,
    pub lora_epochs: usize,
    pub scale_divisor: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            batch_sizes: vec![6, 12],
            learning_rates: vec![1e-5, 3e-5, 5e-4],
            epochs: vec![3, 5],
            base_alpha: 32.0,
            base_rank: 64,
            alphas: vec![256.0, 512.0],
            ranks: vec![256, 512],
            lora_batch_size: 6,
            lora_learning_rate: 5e-4,
            lora_epochs: 5,
            scale_divisor: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub campaign: Campaign,
    pub fold: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub lora: LoraConfig,
    pub seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

impl TrialConfig {
    /// Stable text key of everything but the seed.
    pub fn key(&self) -> String {
        let targets: Vec<&str> = self.lora.targets.iter().map(|r| r.name()).collect();
        format!(
            "{:?}|fold={}|batch={}|lr={:e}|epochs={}|alpha={:e}|rank={}|targets={}",
            self.campaign,
            self.fold,
            self.batch_size,
            self.learning_rate,
            self.epochs,
            self.lora.alpha,
            self.lora.rank,
            targets.join(",")
        )
    }

    /// Campaign seed mixed with a hash of the trial key.
    pub fn derive_seed(&self, campaign_seed: u64) -> u64 {
        splitmix(campaign_seed ^ fnv1a(self.key().as_bytes()))
    }
}

fn scaled(alpha: f64, rank: usize, divisor: usize) -> Result<(f64, usize), ExperimentError> {
    if divisor == 0 || !rank.is_multiple_of(divisor) {
        return Err(ExperimentError::BadGrid(format!("rank {rank} is not divisible by scale divisor {divisor}")));
    }
    Ok((alpha / divisor as f64, rank / divisor))
}

/// Trials in a fixed order: hyperparameters outermost, folds innermost.
pub fn enumerate_grid(
    campaign: Campaign,
    k: usize,
    seed: u64,
    spec: &GridSpec,
) -> Result<Vec<TrialConfig>, ExperimentError> {
    if k < 2 {
        return Err(ExperimentError::BadK { k, n: 0 });
    }
    let mut points = Vec::new();
    match campaign {
        Campaign::Base => {
            let (alpha, rank) = scaled(spec.base_alpha, spec.base_rank, spec.scale_divisor)?;
            for &batch in &spec.batch_sizes {
                for &lr in &spec.learning_rates {
                    for &epochs in &spec.epochs {
                        points.push((batch, lr, epochs, LoraConfig::new(alpha, rank)));
                    }
                }
            }
        }
        Campaign::Lora => {
            for &a in &spec.alphas {
                for &r in &spec.ranks {
                    let (alpha, rank) = scaled(a, r, spec.scale_divisor)?;
                    points.push((spec.lora_batch_size, spec.lora_learning_rate, spec.lora_epochs, LoraConfig::new(alpha, rank)));
                }
            }
        }
    }
    let mut out = Vec::with_capacity(points.len() * k);
    for (batch_size, learning_rate, epochs, lora) in points {
        lora.validate().map_err(|e| ExperimentError::BadGrid(e.to_string()))?;
        if batch_size == 0 || epochs == 0 || !(learning_rate > 0.0) {
            return Err(ExperimentError::BadGrid(format!("batch {batch_size}, lr {learning_rate}, epochs {epochs}")));
        }
        for fold in 0..k {
            let mut t = TrialConfig { campaign, fold, batch_size, learning_rate, epochs, lora: lora.clone(), seed: 0 };
            t.seed = t.derive_seed(seed);
            out.push(t);
        }
    }
    Ok(out)
}

/// Fails if any trial's rank exceeds a targeted matrix of `model`.
pub fn check_ranks(trials: &[TrialConfig], model: &ModelConfig) -> Result<(), ExperimentError> {
    // attention maps are d×d; feed-forward maps are d×d_ff
    let limit_of = |role: crate::model::Role| match role {
        crate::model::Role::FfnIn | crate::model::Role::FfnOut => model.d_model.min(model.d_ff),
        _ => model.d_model,
    };
    for t in trials {
        for &role in &t.lora.targets {
            let limit = limit_of(role);
            if t.lora.rank > limit {
                return Err(ExperimentError::RankTooLargeForModel { rank: t.lora.rank, limit, role });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cardinalities() {
        let spec = GridSpec::default();
        for k in 2..7 {
            assert_eq!(enumerate_grid(Campaign::Base, k, 0, &spec).unwrap().len(), 12 * k);
            assert_eq!(enumerate_grid(Campaign::Lora, k, 0, &spec).unwrap().len(), 4 * k);
        }
        let single = GridSpec { batch_sizes: vec![6], learning_rates: vec![5e-4], epochs: vec![5], ..spec };
        assert_eq!(enumerate_grid(Campaign::Base, 5, 0, &single).unwrap().len(), 5);
    }

    #[test]
    fn desk_scale_values() {
        let trials = enumerate_grid(Campaign::Lora, 5, 0, &GridSpec::default()).unwrap();
        let mut pairs: Vec<(f64, usize)> = trials.iter().map(|t| (t.lora.alpha, t.lora.rank)).collect();
        pairs.dedup();
        assert_eq!(pairs, vec![(8.0, 8), (8.0, 16), (16.0, 8), (16.0, 16)]);
        let base = enumerate_grid(Campaign::Base, 5, 0, &GridSpec::default()).unwrap();
        assert!(base.iter().all(|t| t.lora.alpha == 1.0 && t.lora.rank == 2));
    }

    #[test]
    fn seeds_are_stable_under_grid_growth() {
        let spec = GridSpec::default();
        let small = enumerate_grid(Campaign::Base, 5, 7, &GridSpec { learning_rates: vec![5e-4], ..spec.clone() }).unwrap();
        let full = enumerate_grid(Campaign::Base, 5, 7, &spec).unwrap();
        for t in &small {
            assert!(full.iter().any(|f| f == t));
        }
    }

    #[test]
    fn full_scale_ranks_rejected_for_toy_model() {
        let spec = GridSpec { scale_divisor: 1, ..GridSpec::default() };
        let trials = enumerate_grid(Campaign::Lora, 5, 0, &spec).unwrap();
        let cfg = ModelConfig::new(66, 155);
        assert!(matches!(check_ranks(&trials, &cfg), Err(ExperimentError::RankTooLargeForModel { .. })));
    }
}
