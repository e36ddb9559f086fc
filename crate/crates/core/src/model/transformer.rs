use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{AttnCache, AttnMask, FeedForward, FfnCache, LayerNorm, LayerNormCache, MultiHeadAttention};
use super::linear::{AdaptedLinear, LinearCache, LoraConfig, Role};
use super::matrix::{axpy, Matrix};
use super::param::{Grads, Param};
use super::vocab::PAD;
use super::ModelError;

const EMBED_STD: f64 = 1.0;

/// Missing fields deserialize to the desk-scale defaults; vocabulary sizes
/// of 0 are placeholders for callers to fill from the data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_in: usize,
    pub vocab_out: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::new(0, 0)
    }
}

impl ModelConfig {
    /// Desk-scale defaults: 64 wide, 4 heads, 2 + 2 layers.
    pub fn new(vocab_in: usize, vocab_out: usize) -> Self {
        ModelConfig {
            vocab_in,
            vocab_out,
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            n_enc_layers: 2,
            n_dec_layers: 2,
            max_len: 128,
            seed: 0,
        }
    }

    /// Replaces zero vocabulary sizes.
    pub fn with_vocab_defaults(mut self, vocab_in: usize, vocab_out: usize) -> Self {
        if self.vocab_in == 0 {
            self.vocab_in = vocab_in;
        }
        if self.vocab_out == 0 {
            self.vocab_out = vocab_out;
        }
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("vocab_in", self.vocab_in),
            ("vocab_out", self.vocab_out),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("n_enc_layers", self.n_enc_layers),
            ("n_dec_layers", self.n_dec_layers),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::InvalidConfig(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModelError::InvalidConfig(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Walks parameters and dense layers in a fixed order with dotted names.
pub(crate) trait Module {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>);
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>);
    fn collect_linears<'a>(&'a self, _prefix: &str, _out: &mut Vec<(String, &'a AdaptedLinear)>) {}
    fn collect_linears_mut<'a>(&'a mut self, _prefix: &str, _out: &mut Vec<(String, &'a mut AdaptedLinear)>) {}
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_owned()
    } else {
        format!("{prefix}.{name}")
    }
}

impl Module for Param {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((prefix.to_owned(), self));
    }
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((prefix.to_owned(), self));
    }
}

impl Module for AdaptedLinear {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
        if let Some(ad) = &self.adapter {
            out.push((join(prefix, "lora_a"), &ad.a));
            out.push((join(prefix, "lora_b"), &ad.b));
        }
    }
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
        if let Some(ad) = &mut self.adapter {
            out.push((join(prefix, "lora_a"), &mut ad.a));
            out.push((join(prefix, "lora_b"), &mut ad.b));
        }
    }
    fn collect_linears<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a AdaptedLinear)>) {
        out.push((prefix.to_owned(), self));
    }
    fn collect_linears_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut AdaptedLinear)>) {
        out.push((prefix.to_owned(), self));
    }
}

impl<T: Module> Module for Vec<T> {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        for (i, m) in self.iter().enumerate() {
            m.collect_params(&join(prefix, &i.to_string()), out);
        }
    }
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        for (i, m) in self.iter_mut().enumerate() {
            m.collect_params_mut(&join(prefix, &i.to_string()), out);
        }
    }
    fn collect_linears<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a AdaptedLinear)>) {
        for (i, m) in self.iter().enumerate() {
            m.collect_linears(&join(prefix, &i.to_string()), out);
        }
    }
    fn collect_linears_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut AdaptedLinear)>) {
        for (i, m) in self.iter_mut().enumerate() {
            m.collect_linears_mut(&join(prefix, &i.to_string()), out);
        }
    }
}

macro_rules! composite_module {
    ($ty:ty { $($field:ident),* }) => {
        impl Module for $ty {
            fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
                $( self.$field.collect_params(&join(prefix, stringify!($field)), out); )*
            }
            fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
                $( self.$field.collect_params_mut(&join(prefix, stringify!($field)), out); )*
            }
            fn collect_linears<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a AdaptedLinear)>) {
                $( self.$field.collect_linears(&join(prefix, stringify!($field)), out); )*
            }
            fn collect_linears_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut AdaptedLinear)>) {
                $( self.$field.collect_linears_mut(&join(prefix, stringify!($field)), out); )*
            }
        }
    };
}

composite_module!(LayerNorm { gain, shift });
composite_module!(MultiHeadAttention { q, k, v, o });
composite_module!(FeedForward { fc_in, fc_out });
composite_module!(EncoderLayer { ln1, attn, ln2, ffn });
composite_module!(DecoderLayer { ln1, self_attn, ln2, cross_attn, ln3, ffn });
composite_module!(Model { src_embed, tgt_embed, enc, enc_norm, dec, dec_norm, output });

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub ln1: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ln3: LayerNorm,
    pub ffn: FeedForward,
}

/// Pre-norm encoder-decoder transformer. Every dense map is an
/// [`AdaptedLinear`].
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub src_embed: Param,
    pub tgt_embed: Param,
    pub enc: Vec<EncoderLayer>,
    pub enc_norm: LayerNorm,
    pub dec: Vec<DecoderLayer>,
    pub dec_norm: LayerNorm,
    pub output: AdaptedLinear,
    pub lora: Option<LoraConfig>,
    positions: Matrix,
}

struct EncCache {
    ln1: LayerNormCache,
    attn: AttnCache,
    ln2: LayerNormCache,
    ffn: FfnCache,
}

struct DecCache {
    ln1: LayerNormCache,
    self_attn: AttnCache,
    ln2: LayerNormCache,
    cross: AttnCache,
    ln3: LayerNormCache,
    ffn: FfnCache,
}

/// Everything [`Model::backward`] needs from a training forward pass.
pub struct Tape {
    src: Vec<u32>,
    tgt: Vec<u32>,
    enc: Vec<EncCache>,
    enc_norm: LayerNormCache,
    dec: Vec<DecCache>,
    dec_norm: LayerNormCache,
    out: LinearCache,
}

/// Encoder output plus the source key mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub memory: Matrix,
    pub key_valid: Vec<bool>,
}

pub fn sinusoid_table(max_len: usize, d: usize) -> Matrix {
    Matrix::from_fn(max_len, d, |pos, j| {
        let freq = 1.0 / 10000f64.powf((j - j % 2) as f64 / d as f64);
        let angle = pos as f64 * freq;
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let src_embed = Param::new(Matrix::random_normal(config.vocab_in, d, EMBED_STD, &mut rng));
        let tgt_embed = Param::new(Matrix::random_normal(config.vocab_out, d, EMBED_STD, &mut rng));
        let enc = (0..config.n_enc_layers)
            .map(|_| EncoderLayer {
                ln1: LayerNorm::new(d),
                attn: MultiHeadAttention::new(d, config.n_heads, &mut rng),
                ln2: LayerNorm::new(d),
                ffn: FeedForward::new(d, config.d_ff, &mut rng),
            })
            .collect();
        let dec = (0..config.n_dec_layers)
            .map(|_| DecoderLayer {
                ln1: LayerNorm::new(d),
                self_attn: MultiHeadAttention::new(d, config.n_heads, &mut rng),
                ln2: LayerNorm::new(d),
                cross_attn: MultiHeadAttention::new(d, config.n_heads, &mut rng),
                ln3: LayerNorm::new(d),
                ffn: FeedForward::new(d, config.d_ff, &mut rng),
            })
            .collect();
        let output = AdaptedLinear::new(Role::Output, d, config.vocab_out, &mut rng);
        let mut model = Model {
            positions: sinusoid_table(config.max_len, d),
            config,
            src_embed,
            tgt_embed,
            enc,
            enc_norm: LayerNorm::new(d),
            dec,
            dec_norm: LayerNorm::new(d),
            output,
            lora: None,
        };
        model.reindex();
        Ok(model)
    }

    fn reindex(&mut self) {
        for (i, (_, p)) in self.params_mut().into_iter().enumerate() {
            p.slot = i;
        }
    }

    pub fn params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        self.collect_params_mut("", &mut out);
        out
    }

    pub fn linears(&self) -> Vec<(String, &AdaptedLinear)> {
        let mut out = Vec::new();
        self.collect_linears("", &mut out);
        out
    }

    pub fn linears_mut(&mut self) -> Vec<(String, &mut AdaptedLinear)> {
        let mut out = Vec::new();
        self.collect_linears_mut("", &mut out);
        out
    }

    /// Fresh zeroed gradient storage for the trainable parameters.
    pub fn grads(&self) -> Grads {
        Grads::new(self.params().into_iter().map(|(_, p)| p))
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.value.len()).sum()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.params().iter().filter(|(_, p)| !p.frozen).map(|(_, p)| p.value.len()).sum()
    }

    pub fn adapter_param_count(&self) -> usize {
        self.linears().iter().filter_map(|(_, l)| l.adapter.as_ref()).map(|a| a.param_count()).sum()
    }

    pub fn has_adapters(&self) -> bool {
        self.linears().iter().any(|(_, l)| l.adapter.is_some())
    }

    /// Little-endian bytes of every non-adapter parameter in traversal order.
    pub fn base_weight_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (name, p) in self.params() {
            if !name.ends_with("lora_a") && !name.ends_with("lora_b") {
                p.value.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            }
        }
        out
    }

    /// Freezes every existing parameter and attaches adapters to the dense
    /// layers named in `config.targets`. Ranks are checked for every target
    /// before anything changes.
    pub fn inject_lora(&mut self, config: &LoraConfig, seed: u64) -> Result<(), ModelError> {
        config.validate()?;
        for (_, l) in self.linears() {
            if config.targets.contains(&l.role) && config.rank > l.d_in().min(l.d_out()) {
                return Err(ModelError::RankTooLarge { rank: config.rank, limit: l.d_in().min(l.d_out()), role: l.role });
            }
        }
        for (_, p) in self.params_mut() {
            p.frozen = true;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, l) in self.linears_mut() {
            if config.targets.contains(&l.role) {
                l.inject(config.alpha, config.rank, &mut rng)?;
            }
        }
        self.lora = Some(config.clone());
        self.reindex();
        Ok(())
    }

    pub fn set_adapters_enabled(&mut self, enabled: bool) {
        for (_, l) in self.linears_mut() {
            if let Some(ad) = l.adapter.as_mut().filter(|a| !a.merged) {
                ad.enabled = enabled;
            }
        }
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        for (name, p) in self.params_mut() {
            if !name.ends_with("lora_a") && !name.ends_with("lora_b") {
                p.frozen = frozen;
            }
        }
    }

    pub fn merge_lora(&mut self) -> Result<(), ModelError> {
        let mut any = false;
        for (_, l) in self.linears_mut() {
            any |= l.merge();
        }
        if any {
            Ok(())
        } else {
            Err(ModelError::NothingToMerge)
        }
    }

    pub fn unmerge_lora(&mut self) -> Result<(), ModelError> {
        let mut any = false;
        for (_, l) in self.linears_mut() {
            any |= l.unmerge();
        }
        if any {
            Ok(())
        } else {
            Err(ModelError::NothingToUnmerge)
        }
    }

    pub fn is_merged(&self) -> bool {
        self.linears().iter().any(|(_, l)| l.adapter.as_ref().is_some_and(|a| a.merged))
    }

    fn check_tokens(&self, tokens: &[u32], vocab: usize) -> Result<(), ModelError> {
        if tokens.len() > self.config.max_len {
            return Err(ModelError::SequenceTooLong { len: tokens.len(), max: self.config.max_len });
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= vocab) {
            return Err(ModelError::TokenOutOfRange { token: t, vocab });
        }
        Ok(())
    }

    fn embed(&self, table: &Param, tokens: &[u32]) -> Matrix {
        let d = self.config.d_model;
        let mut x = Matrix::zeros(tokens.len(), d);
        for (t, &tok) in tokens.iter().enumerate() {
            let row = x.row_mut(t);
            row.copy_from_slice(table.value.row(tok as usize));
            axpy(row, 1.0, self.positions.row(t));
        }
        x
    }

    fn encode_cached(&self, src: &[u32]) -> (Encoded, Vec<EncCache>, LayerNormCache) {
        let key_valid: Vec<bool> = src.iter().map(|&t| t != PAD).collect();
        let mask = AttnMask { key_valid: &key_valid, causal: false };
        let mut x = self.embed(&self.src_embed, src);
        let mut caches = Vec::with_capacity(self.enc.len());
        for layer in &self.enc {
            let (h, ln1) = layer.ln1.forward_cached(&x);
            let (a, attn) = layer.attn.forward_cached(&h, &h, mask);
            x.add_scaled(&a, 1.0);
            let (h, ln2) = layer.ln2.forward_cached(&x);
            let (f, ffn) = layer.ffn.forward_cached(&h);
            x.add_scaled(&f, 1.0);
            caches.push(EncCache { ln1, attn, ln2, ffn });
        }
        let (memory, norm) = self.enc_norm.forward_cached(&x);
        (Encoded { memory, key_valid }, caches, norm)
    }

    fn decode_cached(&self, enc: &Encoded, tgt: &[u32]) -> (Matrix, Vec<DecCache>, LayerNormCache, LinearCache) {
        let tgt_valid: Vec<bool> = tgt.iter().map(|&t| t != PAD).collect();
        let self_mask = AttnMask { key_valid: &tgt_valid, causal: true };
        let cross_mask = AttnMask { key_valid: &enc.key_valid, causal: false };
        let mut x = self.embed(&self.tgt_embed, tgt);
        let mut caches = Vec::with_capacity(self.dec.len());
        for layer in &self.dec {
            let (h, ln1) = layer.ln1.forward_cached(&x);
            let (a, self_attn) = layer.self_attn.forward_cached(&h, &h, self_mask);
            x.add_scaled(&a, 1.0);
            let (h, ln2) = layer.ln2.forward_cached(&x);
            let (c, cross) = layer.cross_attn.forward_cached(&h, &enc.memory, cross_mask);
            x.add_scaled(&c, 1.0);
            let (h, ln3) = layer.ln3.forward_cached(&x);
            let (f, ffn) = layer.ffn.forward_cached(&h);
            x.add_scaled(&f, 1.0);
            caches.push(DecCache { ln1, self_attn, ln2, cross, ln3, ffn });
        }
        let (h, norm) = self.dec_norm.forward_cached(&x);
        let (logits, out) = self.output.forward_cached(&h);
        (logits, caches, norm, out)
    }

    pub fn encode(&self, src: &[u32]) -> Result<Encoded, ModelError> {
        self.check_tokens(src, self.config.vocab_in)?;
        Ok(self.encode_cached(src).0)
    }

    /// Logits for every position of `tgt_prefix` given an encoded source.
    pub fn decode(&self, enc: &Encoded, tgt_prefix: &[u32]) -> Result<Matrix, ModelError> {
        self.check_tokens(tgt_prefix, self.config.vocab_out)?;
        if tgt_prefix.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        Ok(self.decode_cached(enc, tgt_prefix).0)
    }

    /// Starts token-by-token decoding with cached keys and values.
    pub fn start_decoding(&self, enc: &Encoded) -> IncrementalDecoder<'_> {
        let cross_kv = self
            .dec
            .iter()
            .map(|l| (l.cross_attn.k.forward(&enc.memory), l.cross_attn.v.forward(&enc.memory)))
            .collect();
        IncrementalDecoder {
            model: self,
            cross_kv,
            src_valid: enc.key_valid.clone(),
            self_kv: vec![(Matrix::zeros(0, 0), Matrix::zeros(0, 0)); self.dec.len()],
            self_valid: Vec::new(),
        }
    }

    /// `T × vocab_out` logits for a decoder prefix of length `T`.
    pub fn forward(&self, src: &[u32], tgt_prefix: &[u32]) -> Result<Matrix, ModelError> {
        let enc = self.encode(src)?;
        self.decode(&enc, tgt_prefix)
    }

    pub fn forward_train(&self, src: &[u32], tgt_prefix: &[u32]) -> Result<(Matrix, Tape), ModelError> {
        self.check_tokens(src, self.config.vocab_in)?;
        self.check_tokens(tgt_prefix, self.config.vocab_out)?;
        if tgt_prefix.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        let (encoded, enc, enc_norm) = self.encode_cached(src);
        let (logits, dec, dec_norm, out) = self.decode_cached(&encoded, tgt_prefix);
        let tape = Tape { src: src.to_vec(), tgt: tgt_prefix.to_vec(), enc, enc_norm, dec, dec_norm, out };
        Ok((logits, tape))
    }

    /// Accumulates `dL/dθ` for every trainable parameter given `dL/dlogits`.
    pub fn backward(&self, tape: &Tape, dlogits: &Matrix, grads: &mut Grads) {
        let dh = self.output.backward(&tape.out, dlogits, grads);
        let mut dx = self.dec_norm.backward(&tape.dec_norm, &dh, grads);
        let mut dmem = Matrix::zeros(tape.src.len(), self.config.d_model);
        for (layer, c) in self.dec.iter().zip(&tape.dec).rev() {
            let df = layer.ffn.backward(&c.ffn, &dx, grads);
            dx.add_scaled(&layer.ln3.backward(&c.ln3, &df, grads), 1.0);
            let (dq, dkv) = layer.cross_attn.backward(&c.cross, &dx, grads);
            dmem.add_scaled(&dkv, 1.0);
            dx.add_scaled(&layer.ln2.backward(&c.ln2, &dq, grads), 1.0);
            let (mut dq, dkv) = layer.self_attn.backward(&c.self_attn, &dx, grads);
            dq.add_scaled(&dkv, 1.0);
            dx.add_scaled(&layer.ln1.backward(&c.ln1, &dq, grads), 1.0);
        }
        embed_backward(&self.tgt_embed, &tape.tgt, &dx, grads);

        let mut dx = self.enc_norm.backward(&tape.enc_norm, &dmem, grads);
        for (layer, c) in self.enc.iter().zip(&tape.enc).rev() {
            let df = layer.ffn.backward(&c.ffn, &dx, grads);
            dx.add_scaled(&layer.ln2.backward(&c.ln2, &df, grads), 1.0);
            let (mut dq, dkv) = layer.attn.backward(&c.attn, &dx, grads);
            dq.add_scaled(&dkv, 1.0);
            dx.add_scaled(&layer.ln1.backward(&c.ln1, &dq, grads), 1.0);
        }
        embed_backward(&self.src_embed, &tape.src, &dx, grads);
    }
}

/// Decoder state for greedy generation. Each [`step`](Self::step) gives the
/// same logits as the matching row of a full [`Model::decode`] call.
pub struct IncrementalDecoder<'m> {
    model: &'m Model,
    cross_kv: Vec<(Matrix, Matrix)>,
    src_valid: Vec<bool>,
    self_kv: Vec<(Matrix, Matrix)>,
    self_valid: Vec<bool>,
}

impl IncrementalDecoder<'_> {
    pub fn len(&self) -> usize {
        self.self_valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.self_valid.is_empty()
    }

    /// Feeds one token and returns the logits for the next position.
    pub fn step(&mut self, token: u32) -> Result<Vec<f64>, ModelError> {
        let m = self.model;
        let pos = self.self_valid.len();
        if pos >= m.config.max_len {
            return Err(ModelError::SequenceTooLong { len: pos + 1, max: m.config.max_len });
        }
        if token as usize >= m.config.vocab_out {
            return Err(ModelError::TokenOutOfRange { token, vocab: m.config.vocab_out });
        }
        self.self_valid.push(token != PAD);
        let mut x = Matrix::zeros(1, m.config.d_model);
        x.row_mut(0).copy_from_slice(m.tgt_embed.value.row(token as usize));
        axpy(x.row_mut(0), 1.0, m.positions.row(pos));
        for ((layer, (sk, sv)), (ck, cv)) in m.dec.iter().zip(&mut self.self_kv).zip(&self.cross_kv) {
            let h = layer.ln1.forward_cached(&x).0;
            let attn = &layer.self_attn;
            sk.push_row(attn.k.forward(&h).row(0));
            sv.push_row(attn.v.forward(&h).row(0));
            let ctx = attn.attend_one(attn.q.forward(&h).row(0), sk, sv, &self.self_valid);
            x.add_scaled(&attn.o.forward(&Matrix::from_vec(1, ctx.len(), ctx)?), 1.0);

            let h = layer.ln2.forward_cached(&x).0;
            let cross = &layer.cross_attn;
            let ctx = cross.attend_one(cross.q.forward(&h).row(0), ck, cv, &self.src_valid);
            x.add_scaled(&cross.o.forward(&Matrix::from_vec(1, ctx.len(), ctx)?), 1.0);

            let h = layer.ln3.forward_cached(&x).0;
            x.add_scaled(&layer.ffn.forward_cached(&h).0, 1.0);
        }
        let h = m.dec_norm.forward_cached(&x).0;
        Ok(m.output.forward(&h).into_data())
    }
}

fn embed_backward(table: &Param, tokens: &[u32], dx: &Matrix, grads: &mut Grads) {
    if let Some(g) = grads.slot_mut(table) {
        for (t, &tok) in tokens.iter().enumerate() {
            axpy(g.row_mut(tok as usize), 1.0, dx.row(t));
        }
    }
}
