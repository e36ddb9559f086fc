use atclab::model::matrix::Matrix;
use atclab::model::vocab::{BOS, EOS, PAD, SRC_END};
use atclab::model::{Checkpoint, LoraConfig, Model, ModelConfig, ModelError, Role};
use atclab::textnorm::NormalizedText;
use atclab::training::{cross_entropy, decode_greedy, example_loss_and_grad, gradient_check, Example};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(seed: u64) -> ModelConfig {
    ModelConfig { d_model: 16, n_heads: 2, d_ff: 24, max_len: 32, seed, ..ModelConfig::new(12, 10) }
}

fn random_tokens(rng: &mut ChaCha8Rng, len: usize, lo: u32, hi: u32) -> Vec<u32> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

fn random_pair(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> (Vec<u32>, Vec<u32>) {
    let ls = rng.random_range(1..10);
    let lt = rng.random_range(1..8);
    (random_tokens(rng, ls, 1, cfg.vocab_in as u32), random_tokens(rng, lt, 1, cfg.vocab_out as u32))
}

/// Gives every adapter a nonzero `B` so adapter paths carry signal.
fn perturb_adapters(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, l) in model.linears_mut() {
        if let Some(ad) = &mut l.adapter {
            let (r, c) = ad.b.value.shape();
            ad.b.value = Matrix::random_normal(r, c, 0.3, &mut rng);
        }
    }
}

#[test]
fn injection_leaves_logits_bitwise_equal() {
    let cfg = small_config(1);
    let mut model = Model::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let inputs: Vec<_> = (0..20).map(|_| random_pair(&mut rng, &cfg)).collect();
    let before: Vec<Matrix> = inputs.iter().map(|(s, t)| model.forward(s, t).unwrap()).collect();
    let all = LoraConfig::new(4.0, 4).with_targets(Role::ADAPTABLE);
    model.inject_lora(&all, 5).unwrap();
    for ((s, t), b) in inputs.iter().zip(&before) {
        assert_eq!(&model.forward(s, t).unwrap(), b);
    }
}

#[test]
fn merge_matches_adapter_form_and_unmerge_restores() {
    let cfg = small_config(2);
    let mut model = Model::new(cfg.clone()).unwrap();
    let base: Vec<Matrix> = model.params().iter().map(|(_, p)| p.value.clone()).collect();
    model.inject_lora(&LoraConfig::new(16.0, 4).with_targets(Role::ADAPTABLE), 3).unwrap();
    perturb_adapters(&mut model, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inputs: Vec<_> = (0..100).map(|_| random_pair(&mut rng, &cfg)).collect();
    let adapter_form: Vec<Matrix> = inputs.iter().map(|(s, t)| model.forward(s, t).unwrap()).collect();
    model.merge_lora().unwrap();
    assert_eq!(model.merge_lora(), Err(ModelError::NothingToMerge));
    let mut worst: f64 = 0.0;
    for ((s, t), a) in inputs.iter().zip(&adapter_form) {
        worst = worst.max(model.forward(s, t).unwrap().max_abs_diff(a));
    }
    assert!(worst < 1e-9, "merge drift {worst}");
    model.unmerge_lora().unwrap();
    assert_eq!(model.unmerge_lora(), Err(ModelError::NothingToUnmerge));
    let restored: Vec<Matrix> = model
        .params()
        .iter()
        .filter(|(n, _)| !n.contains("lora"))
        .map(|(_, p)| p.value.clone())
        .collect();
    assert_eq!(restored.len(), base.len());
    for (r, b) in restored.iter().zip(&base) {
        assert!(r.max_abs_diff(b) <= 1e-12);
    }
}

#[test]
fn adapter_parameter_accounting() {
    let mut model = Model::new(ModelConfig::new(66, 155)).unwrap();
    model.inject_lora(&LoraConfig::new(8.0, 4), 0).unwrap();
    // independent count: walk the dense layers and sum r·(d_in + d_out)
    // over the query and value projections
    let expected: usize = model
        .linears()
        .iter()
        .filter(|(n, _)| n.ends_with(".q") || n.ends_with(".v"))
        .map(|(_, l)| 4 * (l.weight.value.cols() + l.weight.value.rows()))
        .sum();
    assert_eq!(expected, 6144);
    assert_eq!(model.adapter_param_count(), 6144);
    assert_eq!(model.trainable_param_count(), 6144);
    assert!((model.trainable_param_count() as f64) < 0.1 * model.param_count() as f64);
}

#[test]
fn rank_is_checked_before_mutation() {
    let mut model = Model::new(ModelConfig::new(10, 10)).unwrap();
    let before = model.clone();
    let err = model.inject_lora(&LoraConfig::new(1.0, 65), 0).unwrap_err();
    assert!(matches!(err, ModelError::RankTooLarge { rank: 65, limit: 64, .. }));
    assert_eq!(model, before);
    let out = LoraConfig::new(1.0, 2).with_targets([Role::Output]);
    assert!(model.inject_lora(&out, 0).is_err());
}

#[test]
fn causal_prefix_and_padding_invariance() {
    let cfg = small_config(3);
    let model = Model::new(cfg).unwrap();
    let src = vec![4, 7, 2, 9, 1];
    let tgt = vec![BOS, 5, 6, 7, 8];
    let full = model.forward(&src, &tgt).unwrap();
    let short = model.forward(&src, &tgt[..4]).unwrap();
    for i in 0..4 {
        for j in 0..full.cols() {
            assert!((full.get(i, j) - short.get(i, j)).abs() < 1e-12);
        }
    }
    // a padding-only tail, in any arrangement, is invisible
    let mut padded = src.clone();
    padded.extend([PAD, PAD, PAD]);
    let a = model.forward(&padded, &tgt).unwrap();
    assert!(a.max_abs_diff(&full) < 1e-12);
    let mut tgt_padded = tgt.clone();
    tgt_padded.extend([PAD, PAD]);
    let b = model.forward(&src, &tgt_padded).unwrap();
    for i in 0..tgt.len() {
        for j in 0..b.cols() {
            assert!((b.get(i, j) - full.get(i, j)).abs() < 1e-12);
        }
    }
}

#[test]
fn forward_rejects_bad_inputs() {
    let cfg = small_config(4);
    let model = Model::new(cfg.clone()).unwrap();
    assert!(matches!(model.forward(&[99], &[BOS]), Err(ModelError::TokenOutOfRange { token: 99, .. })));
    assert!(matches!(model.forward(&[1], &[10]), Err(ModelError::TokenOutOfRange { .. })));
    let long = vec![1; cfg.max_len + 1];
    assert!(matches!(model.forward(&long, &[BOS]), Err(ModelError::SequenceTooLong { .. })));
    assert!(matches!(model.forward(&[1], &[]), Err(ModelError::EmptySequence)));
    let bad = ModelConfig { n_heads: 3, ..cfg };
    assert!(Model::new(bad).is_err());
}

#[test]
fn forward_is_deterministic() {
    let cfg = small_config(5);
    let a = Model::new(cfg.clone()).unwrap();
    let b = Model::new(cfg).unwrap();
    let src = [3, 4, 5, 1];
    let tgt = [BOS, 4, 4];
    assert_eq!(a.forward(&src, &tgt).unwrap(), b.forward(&src, &tgt).unwrap());
}

#[test]
fn incremental_decoding_matches_full_decode() {
    let cfg = small_config(6);
    let mut model = Model::new(cfg).unwrap();
    model.inject_lora(&LoraConfig::new(2.0, 2).with_targets(Role::ADAPTABLE), 1).unwrap();
    perturb_adapters(&mut model, 2);
    let src = [5, 6, PAD, 7, 1];
    let tgt = [BOS, 3, 0, 9, 4, 4];
    let enc = model.encode(&src).unwrap();
    let full = model.decode(&enc, &tgt).unwrap();
    let mut dec = model.start_decoding(&enc);
    for (i, &t) in tgt.iter().enumerate() {
        let row = dec.step(t).unwrap();
        assert_eq!(row.as_slice(), full.row(i));
    }
}

fn example(src: Vec<u32>, tgt_words: Vec<u32>) -> Example {
    let mut tgt_in = vec![BOS];
    tgt_in.extend(&tgt_words);
    let mut tgt_out = tgt_words;
    tgt_out.push(EOS);
    Example { id: "x".into(), src, tgt_in, tgt_out, reference: NormalizedText::empty() }
}

fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_in: 5,
        vocab_out: 5,
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
        n_enc_layers: 1,
        n_dec_layers: 1,
        max_len: 16,
        seed,
    }
}

fn assert_gradients_match(model: &mut Model, ex: &Example) {
    let entries = gradient_check(model, ex, 1e-5).unwrap();
    assert!(!entries.is_empty());
    let worst = entries.iter().max_by(|a, b| a.rel_error().total_cmp(&b.rel_error())).unwrap();
    assert!(worst.rel_error() < 1e-3, "{worst:?}");
}

#[test]
fn gradients_match_finite_differences_full_model() {
    for seed in 0..3 {
        let mut model = Model::new(tiny_config(seed)).unwrap();
        let ex = example(vec![3, 4, 2, 1], vec![3, 4, 4]);
        assert_gradients_match(&mut model, &ex);
    }
}

#[test]
fn gradients_match_finite_differences_adapters() {
    for seed in 0..3 {
        let mut model = Model::new(tiny_config(seed)).unwrap();
        model.inject_lora(&LoraConfig::new(4.0, 2).with_targets(Role::ADAPTABLE), seed).unwrap();
        perturb_adapters(&mut model, seed + 100);
        let ex = example(vec![2, 3, PAD], vec![4, 3]);
        let entries = gradient_check(&mut model, &ex, 1e-5).unwrap();
        assert!(entries.iter().all(|e| e.param.contains("lora")));
        assert!(entries.iter().all(|e| e.rel_error() < 1e-3));
    }
}

#[test]
fn frozen_parameters_get_no_storage() {
    let mut model = Model::new(tiny_config(7)).unwrap();
    model.inject_lora(&LoraConfig::new(2.0, 2), 0).unwrap();
    let mut grads = model.grads();
    let ex = example(vec![2, 3], vec![4]);
    example_loss_and_grad(&model, &ex, &mut grads, 1.0).unwrap();
    for (name, p) in model.params() {
        assert_eq!(grads.get(p).is_some(), name.contains("lora"), "{name}");
    }
}

/// One-layer copy model assembled by hand.
///
/// Decoder position `t` attends to source position `t` through the
/// (sin, cos) pair of the fastest positional frequency; value and output
/// maps carry the source token through to the same output id, with the
/// source end marker mapped to `EOS`. Large content magnitudes keep the
/// layer norms' scale nearly constant across rows.
fn copy_model() -> Model {
    let cfg = ModelConfig {
        vocab_in: 8,
        vocab_out: 8,
        d_model: 16,
        n_heads: 1,
        d_ff: 4,
        n_enc_layers: 1,
        n_dec_layers: 1,
        max_len: 16,
        seed: 0,
    };
    let mut m = Model::new(cfg).unwrap();
    for (name, p) in m.params_mut() {
        p.value.fill(if name.ends_with(".gain") { 1.0 } else { 0.0 });
    }
    // source token -> content dimension; dimension 14 is a near-zero reference
    let content: [(u32, usize); 6] = [(SRC_END, 8), (3, 9), (4, 10), (5, 11), (6, 12), (7, 13)];
    let out_token = |src: u32| if src == SRC_END { EOS } else { src };
    let (big, zref) = (100.0, 14);
    for &(tok, dim) in &content {
        m.src_embed.value.set(tok as usize, dim, big);
    }
    let cross = &mut m.dec[0].cross_attn;
    for (row, dim) in [(0, 0), (1, 1)] {
        for w in [&mut cross.q.weight.value, &mut cross.k.weight.value] {
            w.set(row, dim, 100.0);
            w.set(row, zref, -100.0);
        }
    }
    for (i, &(_, dim)) in content.iter().enumerate() {
        cross.v.weight.value.set(i, dim, 1.0);
        cross.v.weight.value.set(i, zref, -1.0);
        cross.o.weight.value.set(content[i].1, i, big);
    }
    for &(tok, dim) in &content {
        m.output.weight.value.set(out_token(tok) as usize, dim, 1000.0);
        m.output.weight.value.set(out_token(tok) as usize, zref, -1000.0);
    }
    m
}

#[test]
fn greedy_decoding_of_hand_built_copy_model() {
    let m = copy_model();
    assert_eq!(decode_greedy(&m, &[3, 5, 7, SRC_END], 10).unwrap(), vec![3, 5, 7, EOS]);
    assert_eq!(decode_greedy(&m, &[6, 4, 4, SRC_END], 10).unwrap(), vec![6, 4, 4, EOS]);
    assert_eq!(decode_greedy(&m, &[3, 5, 7, SRC_END], 1).unwrap().len(), 1);
}

#[test]
fn zero_loss_point_is_stationary() {
    let mut m = copy_model();
    m.set_frozen(false);
    let ex = example(vec![3, 5, 7, SRC_END], vec![3, 5, 7]);
    let logits = m.forward(&ex.src, &ex.tgt_in).unwrap();
    assert!(cross_entropy(&logits, &ex.tgt_out).unwrap() < 1e-12);
    let mut grads = m.grads();
    example_loss_and_grad(&m, &ex, &mut grads, 1.0 / 4.0).unwrap();
    assert!(grads.global_norm() < 1e-8, "{}", grads.global_norm());
}

#[test]
fn checkpoint_round_trips() {
    let cfg = small_config(8);
    let mut model = Model::new(cfg.clone()).unwrap();
    let base = model.clone();
    model.inject_lora(&LoraConfig::new(4.0, 2).with_targets([Role::AttnQ, Role::FfnIn]), 9).unwrap();
    perturb_adapters(&mut model, 10);
    let src = [3, 4, 1];
    let tgt = [BOS, 5];
    let expect = model.forward(&src, &tgt).unwrap();

    let full = Checkpoint::full(&model, 42, None);
    let bytes = full.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, full);
    let restored = back.into_model().unwrap();
    assert_eq!(restored.forward(&src, &tgt).unwrap(), expect);
    assert_eq!(restored.base_weight_bytes(), model.base_weight_bytes());

    let adapter = Checkpoint::adapter(&model, 42, None).unwrap();
    assert!(adapter.tensors.iter().all(|(n, _)| n.contains("lora")));
    let mut recombined = base.clone();
    Checkpoint::from_bytes(&adapter.to_bytes()).unwrap().apply_to(&mut recombined).unwrap();
    assert_eq!(recombined.forward(&src, &tgt).unwrap(), expect);

    model.merge_lora().unwrap();
    let merged = Checkpoint::from_bytes(&Checkpoint::full(&model, 1, None).to_bytes()).unwrap().into_model().unwrap();
    assert!(merged.is_merged());
    assert!(merged.forward(&src, &tgt).unwrap().max_abs_diff(&expect) < 1e-9);

    assert!(Checkpoint::from_bytes(b"nope").is_err());
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    assert!(Checkpoint::adapter(&base, 0, None).is_err());
}
