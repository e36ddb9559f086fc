//! Teacher-forced cross-entropy training, greedy decoding and evaluation.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::synth::StreamRecord;
use crate::model::matrix::Matrix;
use crate::model::vocab::{encode_source, BOS, EOS, PAD};
use crate::model::{Grads, Model, ModelError, Vocab};
use crate::textnorm::{normalize, NormalizedText};
use crate::wer::{corpus_wer, WerError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("every target position is padding")]
    AllPositionsMasked,
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Wer(#[from] WerError),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Train adapters only. Requires injected adapters.
    pub freeze_base: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Stops after this many optimizer steps, mid-epoch if needed.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 6,
            learning_rate: 5e-4,
            epochs: 5,
            seed: 0,
            freeze_base: true,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: Some(1.0),
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(format!("learning_rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub eval_wer: f64,
    /// Lowest `eval_wer` seen up to and including this epoch.
    pub best_eval_wer: f64,
    pub steps: usize,
    pub wall_clock_s: f64,
}

/// One tokenized utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub src: Vec<u32>,
    /// `BOS w1 .. wn`
    pub tgt_in: Vec<u32>,
    /// `w1 .. wn EOS`
    pub tgt_out: Vec<u32>,
    pub reference: NormalizedText,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab: Vocab,
    pub examples: Vec<Example>,
}

impl Dataset {
    /// Tokenizes stream records. Records whose text normalizes to nothing
    /// are skipped.
    pub fn from_records(records: &[StreamRecord], vocab: &Vocab) -> Result<Self, TrainError> {
        let mut examples = Vec::with_capacity(records.len());
        for r in records {
            let Ok(reference) = normalize(&r.text) else { continue };
            let (tgt_in, tgt_out) = vocab.encode_target(reference.as_str());
            examples.push(Example { id: r.id.clone(), src: encode_source(&r.symbols), tgt_in, tgt_out, reference });
        }
        Ok(Dataset { vocab: vocab.clone(), examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset { vocab: self.vocab.clone(), examples: indices.iter().map(|&i| self.examples[i].clone()).collect() }
    }

    /// Longest source and target sequences.
    pub fn max_lengths(&self) -> (usize, usize) {
        self.examples.iter().fold((0, 0), |(s, t), e| (s.max(e.src.len()), t.max(e.tgt_in.len())))
    }
}

fn stream_files(path: &Path) -> Result<Vec<PathBuf>, TrainError> {
    if path.is_file() {
        return Ok(vec![path.to_owned()]);
    }
    let dir = if path.join("streams").is_dir() { path.join("streams") } else { path.to_owned() };
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|source| TrainError::Io { path: dir.display().to_string(), source })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

/// Reads stream records from a `.jsonl` file, a directory of them, or a
/// synthetic corpus directory containing `streams/`.
pub fn load_streams(path: &Path) -> Result<Vec<StreamRecord>, TrainError> {
    let mut out = Vec::new();
    for file in stream_files(path)? {
        let text =
            fs::read_to_string(&file).map_err(|source| TrainError::Io { path: file.display().to_string(), source })?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec = serde_json::from_str(line).map_err(|e| TrainError::Parse {
                path: file.display().to_string(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            out.push(rec);
        }
    }
    Ok(out)
}

/// Mean over non-`PAD` targets of `-log softmax(logits)[t, target_t]`.
pub fn cross_entropy(logits: &Matrix, targets: &[u32]) -> Result<f64, TrainError> {
    let (sum, count) = cross_entropy_sum(logits, targets, None)?;
    Ok(sum / count as f64)
}

/// Summed loss and the number of scored positions. When `grad` is given,
/// `d(sum)/d(logits)` is written into it.
pub fn cross_entropy_sum(
    logits: &Matrix,
    targets: &[u32],
    mut grad: Option<&mut Matrix>,
) -> Result<(f64, usize), TrainError> {
    if targets.len() != logits.rows() {
        return Err(ModelError::DimensionMismatch {
            expected: format!("{} targets", logits.rows()),
            got: format!("{}", targets.len()),
        }
        .into());
    }
    let v = logits.cols();
    let mut total = 0.0;
    let mut count = 0;
    for (t, &target) in targets.iter().enumerate() {
        if target == PAD {
            if let Some(g) = grad.as_deref_mut() {
                g.row_mut(t).fill(0.0);
            }
            continue;
        }
        if target as usize >= v {
            return Err(ModelError::TokenOutOfRange { token: target, vocab: v }.into());
        }
        let row = logits.row(t);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|x| (x - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        total += log_z - row[target as usize];
        count += 1;
        if let Some(g) = grad.as_deref_mut() {
            for (gv, x) in g.row_mut(t).iter_mut().zip(row) {
                *gv = (x - log_z).exp();
            }
            g.row_mut(t)[target as usize] -= 1.0;
        }
    }
    if count == 0 {
        return Err(TrainError::AllPositionsMasked);
    }
    Ok((total, count))
}

/// Decoupled weight decay Adam.
#[derive(Debug, Clone)]
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    m: Vec<Option<Matrix>>,
    v: Vec<Option<Matrix>>,
}

impl AdamW {
    pub fn new(config: &TrainConfig) -> Self {
        AdamW {
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            weight_decay: config.weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Updates every parameter that has a gradient in `grads`. Weight decay
    /// is scaled by `lr`, so `lr = 0` leaves parameters untouched.
    pub fn step(&mut self, model: &mut Model, grads: &Grads, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let decay = 1.0 - lr * self.weight_decay;
        for (_, p) in model.params_mut() {
            let Some(g) = grads.get(p) else { continue };
            let slot = p.slot();
            if self.m.len() <= slot {
                self.m.resize(slot + 1, None);
                self.v.resize(slot + 1, None);
            }
            let (r, c) = g.shape();
            let m = self.m[slot].get_or_insert_with(|| Matrix::zeros(r, c));
            let v = self.v[slot].get_or_insert_with(|| Matrix::zeros(r, c));
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, (w, &gi)) in p.value.data_mut().iter_mut().zip(g.data()).enumerate() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gi;
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gi * gi;
                let update = (md[i] / bc1) / ((vd[i] / bc2).sqrt() + self.eps);
                *w = *w * decay - lr * update;
            }
        }
    }
}

/// Teacher-forced loss and gradient of one example, accumulated into
/// `grads` with weight `scale`. Returns the summed token loss and count.
pub fn example_loss_and_grad(model: &Model, ex: &Example, grads: &mut Grads, scale: f64) -> Result<(f64, usize), TrainError> {
    let (logits, tape) = model.forward_train(&ex.src, &ex.tgt_in)?;
    let mut dlogits = Matrix::zeros(logits.rows(), logits.cols());
    let (loss, count) = cross_entropy_sum(&logits, &ex.tgt_out, Some(&mut dlogits))?;
    dlogits.scale(scale);
    model.backward(&tape, &dlogits, grads);
    Ok((loss, count))
}

fn non_pad(tokens: &[u32]) -> usize {
    tokens.iter().filter(|&&t| t != PAD).count()
}

/// Trains `model` in place and returns one metrics record per epoch.
pub fn train(
    model: &mut Model,
    train_set: &Dataset,
    eval_set: &Dataset,
    config: &TrainConfig,
) -> Result<Vec<EpochMetrics>, TrainError> {
    train_with(model, train_set, eval_set, config, |_| {})
}

/// [`train`] with a callback invoked after each epoch.
pub fn train_with(
    model: &mut Model,
    train_set: &Dataset,
    eval_set: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>, TrainError> {
    config.validate()?;
    if train_set.is_empty() || eval_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if config.freeze_base {
        if !model.has_adapters() {
            return Err(TrainError::InvalidConfig("freeze_base needs injected adapters".into()));
        }
        model.set_frozen(true);
    } else {
        model.set_frozen(false);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = AdamW::new(config);
    let mut grads = model.grads();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut steps = 0;
    let mut best = f64::INFINITY;
    let start = Instant::now();

    'epochs: for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut token_count) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let batch_tokens: usize = batch.iter().map(|&i| non_pad(&train_set.examples[i].tgt_out)).sum();
            if batch_tokens == 0 {
                continue;
            }
            grads.zero();
            for &i in batch {
                let (l, n) = example_loss_and_grad(model, &train_set.examples[i], &mut grads, 1.0 / batch_tokens as f64)?;
                loss_sum += l;
                token_count += n;
            }
            steps += 1;
            if !loss_sum.is_finite() || !grads.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step: steps });
            }
            if let Some(c) = config.clip_norm {
                grads.clip_global_norm(c);
            }
            opt.step(model, &grads, config.learning_rate);
        }
        if token_count == 0 {
            break 'epochs;
        }
        let eval = evaluate(model, eval_set)?;
        best = best.min(eval.wer);
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / token_count as f64,
            eval_loss: eval.loss,
            eval_wer: eval.wer,
            best_eval_wer: best,
            steps,
            wall_clock_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&m);
        metrics.push(m);
        if config.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
    }
    Ok(metrics)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding from `BOS`. The result ends with `EOS` unless `max_len`
/// tokens were emitted first.
pub fn decode_greedy(model: &Model, src: &[u32], max_len: usize) -> Result<Vec<u32>, ModelError> {
    let enc = model.encode(src)?;
    let mut dec = model.start_decoding(&enc);
    let limit = max_len.min(model.config.max_len);
    let mut out = Vec::new();
    let mut token = BOS;
    while out.len() < limit {
        let logits = dec.step(token)?;
        token = argmax(&logits) as u32;
        out.push(token);
        if token == EOS {
            break;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceResult {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub wer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean token cross-entropy under teacher forcing.
    pub loss: f64,
    /// Pooled corpus WER of greedy hypotheses.
    pub wer: f64,
    pub utterances: Vec<UtteranceResult>,
}

/// Decoding budget for a source sequence: every word costs at least two
/// symbols before channel noise, so this leaves ample room.
pub fn decode_budget(model: &Model, src_len: usize) -> usize {
    (src_len + 8).min(model.config.max_len)
}

pub fn evaluate(model: &Model, eval_set: &Dataset) -> Result<EvalReport, TrainError> {
    if eval_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let (mut loss_sum, mut count) = (0.0, 0);
    let mut hyps = Vec::with_capacity(eval_set.len());
    for ex in &eval_set.examples {
        let logits = model.forward(&ex.src, &ex.tgt_in)?;
        let (l, n) = cross_entropy_sum(&logits, &ex.tgt_out, None)?;
        loss_sum += l;
        count += n;
        let tokens = decode_greedy(model, &ex.src, decode_budget(model, ex.src.len()))?;
        let text = eval_set.vocab.decode(&tokens);
        hyps.push(NormalizedText::new_checked(&text).unwrap_or_else(NormalizedText::empty));
    }
    let corpus = corpus_wer(eval_set.examples.iter().zip(&hyps).map(|(e, h)| (&e.reference, h)))?;
    let utterances = eval_set
        .examples
        .iter()
        .zip(&hyps)
        .zip(&corpus.per_utterance)
        .map(|((e, h), r)| UtteranceResult {
            id: e.id.clone(),
            reference: e.reference.as_str().to_owned(),
            hypothesis: h.as_str().to_owned(),
            wer: r.wer,
        })
        .collect();
    Ok(EvalReport { loss: loss_sum / count as f64, wer: corpus.pooled_wer, utterances })
}

/// Analytic versus central-difference gradient for one coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckEntry {
    /// `|a - n| / max(|a|, |n|, 1e-6)`.
    pub fn rel_error(&self) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(self.numeric.abs()).max(1e-6)
    }
}

/// Compares backprop against central differences with step `h` for every
/// coordinate of every trainable parameter, on the mean token loss of `ex`.
pub fn gradient_check(model: &mut Model, ex: &Example, h: f64) -> Result<Vec<GradCheckEntry>, TrainError> {
    let mut grads = model.grads();
    let count = non_pad(&ex.tgt_out);
    example_loss_and_grad(model, ex, &mut grads, 1.0 / count as f64)?;
    let trainable: Vec<(String, usize, usize)> = model
        .params()
        .into_iter()
        .filter(|(_, p)| !p.frozen)
        .map(|(n, p)| (n, p.slot(), p.value.len()))
        .collect();
    let loss = |m: &Model| -> Result<f64, TrainError> { cross_entropy(&m.forward(&ex.src, &ex.tgt_in)?, &ex.tgt_out) };
    let mut out = Vec::new();
    for (name, slot, len) in trainable {
        for index in 0..len {
            let nudge = |m: &mut Model, delta: f64| {
                let mut params = m.params_mut();
                let p = &mut params.iter_mut().find(|(_, p)| p.slot() == slot).expect("slot").1;
                p.value.data_mut()[index] += delta;
            };
            let orig = model.params().into_iter().find(|(_, p)| p.slot() == slot).expect("slot").1.value.data()[index];
            nudge(model, h);
            let plus = loss(model)?;
            nudge(model, -2.0 * h);
            let minus = loss(model)?;
            {
                let mut params = model.params_mut();
                params.iter_mut().find(|(_, p)| p.slot() == slot).expect("slot").1.value.data_mut()[index] = orig;
            }
            let analytic = {
                let params = model.params();
                let p = params.iter().find(|(_, p)| p.slot() == slot).expect("slot").1;
                grads.get(p).expect("trainable").data()[index]
            };
            out.push(GradCheckEntry { param: name.clone(), index, analytic, numeric: (plus - minus) / (2.0 * h) });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_reference_values() {
        let uniform = Matrix::zeros(1, 10);
        assert!((cross_entropy(&uniform, &[3]).unwrap() - 10f64.ln()).abs() < 1e-12);
        // p(target) = 0.8 in a two-class row: logit gap ln 4
        let l = Matrix::from_vec(1, 2, vec![0.0, 4f64.ln()]).unwrap();
        assert!((cross_entropy(&l, &[1]).unwrap() - 0.223_143_551_314_209_7).abs() < 1e-12);
        let peaked = Matrix::from_vec(1, 3, vec![0.0, 800.0, 0.0]).unwrap();
        assert!(cross_entropy(&peaked, &[1]).unwrap() < 1e-12);
        assert!(matches!(cross_entropy(&uniform, &[PAD]), Err(TrainError::AllPositionsMasked)));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let mut row = vec![0.0; 10];
        row[4] = 2.0;
        row[7] = 2.0;
        assert_eq!(argmax(&row), 4);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
