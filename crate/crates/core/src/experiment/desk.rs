//! End-to-end domain adaptation on synthetic data: pre-train on the base
//! channel, measure the ATC channel, adapt with frozen base weights,
//! measure again.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::synth::{synth_corpus, ChannelProfile};
use crate::model::vocab::SRC_VOCAB;
use crate::model::{LoraConfig, Model, ModelConfig, Role, Vocab};
use crate::training::{evaluate, train, Dataset, TrainConfig, TrainError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeskScaleConfig {
    pub base_seed: u64,
    pub atc_seed: u64,
    pub base_utterances: usize,
    pub adapt_utterances: usize,
    pub test_utterances: usize,
    /// Per-epoch monitoring subset, taken from the front of each test set.
    /// Only logged; the final epoch is always the one scored.
    pub monitor_utterances: usize,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub lora: LoraConfig,
    pub lora_seed: u64,
    pub adapt: TrainConfig,
}

impl Default for DeskScaleConfig {
    fn default() -> Self {
        let vocab = Vocab::synthetic();
        DeskScaleConfig {
            base_seed: 1,
            atc_seed: 2,
            base_utterances: 2000,
            adapt_utterances: 2000,
            test_utterances: 400,
            monitor_utterances: 50,
            model: ModelConfig { seed: 7, ..ModelConfig::new(SRC_VOCAB, vocab.size()) },
            pretrain: TrainConfig {
                batch_size: 16,
                learning_rate: 1e-3,
                epochs: 10,
                seed: 1,
                freeze_base: false,
                ..TrainConfig::default()
            },
            lora: LoraConfig::new(32.0, 16).with_targets(Role::ADAPTABLE),
            lora_seed: 3,
            adapt: TrainConfig {
                batch_size: 6,
                learning_rate: 3e-3,
                epochs: 8,
                seed: 2,
                freeze_base: true,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskScaleReport {
    /// Pre-trained model on held-out base-channel data.
    pub base_on_base_wer: f64,
    /// Pre-trained model on held-out ATC-channel data.
    pub base_wer: f64,
    /// Adapted model on the same ATC-channel data.
    pub adapted_wer: f64,
    pub base_loss: f64,
    pub adapted_loss: f64,
    pub adapter_params: usize,
    pub total_params: usize,
    pub pretrain_s: f64,
    pub adapt_s: f64,
}

impl DeskScaleReport {
    pub fn ratio(&self) -> f64 {
        self.adapted_wer / self.base_wer
    }
}

fn split(data: &Dataset, n_train: usize) -> (Dataset, Dataset) {
    let n = data.len();
    let cut = n_train.min(n);
    (data.subset(&(0..cut).collect::<Vec<_>>()), data.subset(&(cut..n).collect::<Vec<_>>()))
}

fn front(data: &Dataset, n: usize) -> Dataset {
    data.subset(&(0..n.min(data.len())).collect::<Vec<_>>())
}

pub fn run_desk_scale(cfg: &DeskScaleConfig) -> Result<DeskScaleReport, TrainError> {
    let vocab = Vocab::synthetic();
    let base_corpus = synth_corpus(cfg.base_seed, cfg.base_utterances + cfg.test_utterances, &ChannelProfile::base());
    let atc_corpus = synth_corpus(cfg.atc_seed, cfg.adapt_utterances + cfg.test_utterances, &ChannelProfile::atc());
    let (base_train, base_test) = split(&Dataset::from_records(&base_corpus.stream_records(), &vocab)?, cfg.base_utterances);
    let (atc_train, atc_test) = split(&Dataset::from_records(&atc_corpus.stream_records(), &vocab)?, cfg.adapt_utterances);

    let mut model = Model::new(cfg.model.clone())?;
    let t = Instant::now();
    train(&mut model, &base_train, &front(&base_test, cfg.monitor_utterances), &cfg.pretrain)?;
    let pretrain_s = t.elapsed().as_secs_f64();
    let base_on_base = evaluate(&model, &base_test)?;
    let before = evaluate(&model, &atc_test)?;

    model.inject_lora(&cfg.lora, cfg.lora_seed)?;
    let t = Instant::now();
    train(&mut model, &atc_train, &front(&atc_test, cfg.monitor_utterances), &cfg.adapt)?;
    let adapt_s = t.elapsed().as_secs_f64();
    let after = evaluate(&model, &atc_test)?;

    Ok(DeskScaleReport {
        base_on_base_wer: base_on_base.wer,
        base_wer: before.wer,
        adapted_wer: after.wer,
        base_loss: before.loss,
        adapted_loss: after.loss,
        adapter_params: model.adapter_param_count(),
        total_params: model.param_count(),
        pretrain_s,
        adapt_s,
    })
}
