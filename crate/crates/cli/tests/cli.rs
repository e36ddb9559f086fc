use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn atclab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atclab")).args(args).env_remove("ATCLAB_SEED").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_lists_flags() {
    let cases: [(&[&str], &[&str]); 7] = [
        (&["corpus", "prepare", "--help"], &["--transcripts", "--audio", "--out", "--short-policy"]),
        (&["synth", "--help"], &["--seed", "--n", "--channel", "--out", "ATCLAB_SEED"]),
        (&["wer", "--help"], &["--ref", "--hyp", "--per-utterance"]),
        (&["train", "--help"], &["--manifest", "--config", "--out"]),
        (&["grid", "--help"], &["--manifest", "--campaign", "--k", "--seed", "--workers", "--out", "--base"]),
        (&["report", "--help"], &["--results", "--out"]),
        (&["--help"], &["corpus", "synth", "wer", "train", "grid", "report"]),
    ];
    for (args, flags) in cases {
        let o = atclab(args);
        assert_eq!(o.status.code(), Some(0), "{args:?}");
        let text = stdout(&o);
        for f in flags {
            assert!(text.contains(f), "{args:?} help lacks {f}");
        }
    }
}

#[test]
fn usage_errors_exit_one() {
    let o = atclab(&["wer", "--hyp", "h.txt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--ref"));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(atclab(&["wer", "--ref", "a", "--hyp", "b", "--frobnicate"]).status.code(), Some(1));
    assert_eq!(atclab(&["synth", "--seed", "1", "--n", "2", "--channel", "marine", "--out", "x"]).status.code(), Some(1));
    assert_eq!(atclab(&[]).status.code(), Some(1));
    let o = atclab(&["wer", "--ref", "/nonexistent/ref.txt", "--hyp", "/nonexistent/hyp.txt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/ref.txt"));
}

#[test]
fn wer_per_utterance_and_mismatch() {
    let d = tempfile::tempdir().unwrap();
    let (r, h) = (d.path().join("r"), d.path().join("h"));
    fs::write(&r, "cleared to land\nRunway 22 left\n").unwrap();
    fs::write(&h, "cleared land\nrunway twenty two left\n").unwrap();
    let o = atclab(&["wer", "--ref", p(&r), "--hyp", p(&h), "--per-utterance"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("1: S=0 D=1 I=0 N=3 WER=0.3333"), "{out}");
    assert!(out.contains("2: S=0 D=0 I=0 N=4 WER=0.0000"), "{out}");
    assert!(out.lines().last().unwrap().starts_with("S=0 D=1 I=0 N=7 WER=0.1429"), "{out}");
    fs::write(&h, "only one line\n").unwrap();
    let o = atclab(&["wer", "--ref", p(&r), "--hyp", p(&h)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--hyp"));
}

#[test]
fn synth_is_byte_identical_and_reads_seed_env() {
    let d = tempfile::tempdir().unwrap();
    let (a, b, c) = (d.path().join("a"), d.path().join("b"), d.path().join("c"));
    let o = atclab(&["synth", "--seed", "5", "--n", "150", "--channel", "base", "--out", p(&a)]);
    assert_eq!(stdout(&o).trim(), "synth: seed=5 n=150 channel=base files=2");
    atclab(&["synth", "--seed", "5", "--n", "150", "--channel", "base", "--out", p(&b)]);
    let env = Command::new(env!("CARGO_BIN_EXE_atclab"))
        .args(["synth", "--n", "150", "--channel", "base", "--out", p(&c)])
        .env("ATCLAB_SEED", "5")
        .output()
        .unwrap();
    assert!(env.status.success(), "{}", stderr(&env));
    for sub in ["transcripts/synth_0000.txt", "transcripts/synth_0001.txt", "streams/synth_0001.jsonl"] {
        let first = fs::read(a.join(sub)).unwrap();
        assert_eq!(first, fs::read(b.join(sub)).unwrap(), "{sub}");
        assert_eq!(first, fs::read(c.join(sub)).unwrap(), "{sub}");
    }
}

#[test]
fn train_writes_metrics_and_checkpoints() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    atclab(&["synth", "--seed", "8", "--n", "30", "--channel", "base", "--out", p(&data)]);
    let config = d.path().join("run.json");
    fs::write(
        &config,
        r#"{"training": {"epochs": 2, "batch_size": 8, "learning_rate": 0.002, "seed": 4},
            "model": {"d_model": 16, "n_heads": 2, "d_ff": 32, "n_enc_layers": 1, "n_dec_layers": 1},
            "lora": {"alpha": 4.0, "rank": 2, "targets": ["attn_q", "attn_v"]}}"#,
    )
    .unwrap();
    let run = |out: &Path| {
        let o = atclab(&["train", "--manifest", p(&data), "--config", p(&config), "--out", p(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    let (o1, o2) = (d.path().join("o1"), d.path().join("o2"));
    let s1 = run(&o1);
    assert!(s1.starts_with("train: examples=27 eval=3 epochs=2"), "{s1}");
    assert_eq!(s1, run(&o2));
    assert_eq!(fs::read_to_string(o1.join("metrics.jsonl")).unwrap().lines().count(), 2);
    for f in ["model.ckpt", "adapter.ckpt"] {
        assert_eq!(fs::read(o1.join(f)).unwrap(), fs::read(o2.join(f)).unwrap(), "{f}");
    }
    let ckpt = atclab::model::load_checkpoint(o1.join("adapter.ckpt")).unwrap();
    assert_eq!(ckpt.kind, atclab::model::CheckpointKind::Adapter);

    fs::write(&config, r#"{"training": {"epochs": 1}, "surprise": 1}"#).unwrap();
    let o = atclab(&["train", "--manifest", p(&data), "--config", p(&config), "--out", p(&o1)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("run.json"));
}

#[test]
fn grid_over_trained_base() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    atclab(&["synth", "--seed", "9", "--n", "20", "--channel", "atc", "--out", p(&data)]);
    let config = d.path().join("run.json");
    fs::write(
        &config,
        r#"{"training": {"epochs": 1, "freeze_base": false},
            "model": {"d_model": 16, "n_heads": 2, "d_ff": 32, "n_enc_layers": 1, "n_dec_layers": 1}}"#,
    )
    .unwrap();
    let base = d.path().join("base");
    assert!(atclab(&["train", "--manifest", p(&data), "--config", p(&config), "--out", p(&base)]).status.success());
    let manifest = d.path().join("campaign.json");
    fs::write(&manifest, r#"{"campaign": "lora", "dataset_dir": "data", "max_steps": 1}"#).unwrap();
    let out = d.path().join("grid");
    let o = atclab(&[
        "grid",
        "--manifest",
        p(&manifest),
        "--k",
        "2",
        "--seed",
        "3",
        "--base",
        p(&base.join("model.ckpt")),
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("grid: campaign=lora k=2 seed=3 trials=8 ok=8 failed=0"), "{}", stdout(&o));
    assert_eq!(fs::read_to_string(out.join("results.jsonl")).unwrap().lines().count(), 8);
    assert_eq!(fs::read_to_string(out.join("metrics.jsonl")).unwrap().lines().count(), 8);

    // the undivided grid asks for rank 256 on a 16-wide model
    fs::write(&manifest, r#"{"campaign": "lora", "dataset_dir": "data", "scale_divisor": 1}"#).unwrap();
    let o = atclab(&["grid", "--manifest", p(&manifest), "--base", p(&base.join("model.ckpt")), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("rank 256"), "{}", stderr(&o));
}

#[test]
fn corpus_prepare_summary() {
    let d = tempfile::tempdir().unwrap();
    let (t, a) = (d.path().join("t"), d.path().join("a"));
    fs::create_dir_all(&t).unwrap();
    fs::create_dir_all(&a).unwrap();
    fs::write(t.join("x.txt"), "((FROM A) (TIMES 0.5 6.5) (TEXT climb 5000))\n((TIMES 7 8) (TEXT UNINTELLIGIBLE))\n").unwrap();
    let audio = atclab::corpus::wav::AudioBuffer::new(vec![0.0; 8000 * 10], 8000);
    atclab::corpus::wav::write_wav(a.join("x.wav"), &audio).unwrap();
    let m = d.path().join("out/manifest.jsonl");
    let o = atclab(&["corpus", "prepare", "--transcripts", p(&t), "--audio", p(&a), "--out", p(&m), "--short-policy", "drop"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        stdout(&o).trim(),
        "corpus prepare: parsed=2 kept=1 dropped_unintelligible=1 dropped_length=0 errors=0"
    );
    let line = fs::read_to_string(&m).unwrap();
    assert!(line.contains(r#""text_norm":"climb five thousand""#), "{line}");
    let o = atclab(&["corpus", "prepare", "--transcripts", p(&d.path().join("none")), "--audio", p(&a), "--out", p(&m)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--transcripts"));
}

#[test]
fn report_rejects_empty_results() {
    let d = tempfile::tempdir().unwrap();
    let r = d.path().join("results.jsonl");
    fs::write(&r, "").unwrap();
    let o = atclab(&["report", "--results", p(&r), "--out", p(&d.path().join("rep"))]);
    assert_eq!(o.status.code(), Some(1));
    fs::write(&r, "{not json}\n").unwrap();
    let o = atclab(&["report", "--results", p(&r), "--out", p(&d.path().join("rep"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 1"));
}
