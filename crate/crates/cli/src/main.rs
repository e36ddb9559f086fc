use std::fs;
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use atclab::corpus::manifest::{build_manifest, ManifestOptions};
use atclab::corpus::segment::{SegmentLimits, ShortPolicy};
use atclab::corpus::synth::{synth_corpus, ChannelProfile, StreamRecord, UTTERANCES_PER_FILE};
use atclab::experiment::{
    aggregate, emit_report, enumerate_grid, kfold_split, metrics_lines, run_campaign, Campaign, CampaignManifest,
    RunOptions, TrialResult, TrialStatus,
};
use atclab::model::vocab::SRC_VOCAB;
use atclab::model::{load_checkpoint, save_checkpoint, Checkpoint, LoraConfig, Model, ModelConfig, Vocab};
use atclab::textnorm::normalize;
use atclab::training::{load_streams, train_with, Dataset, EpochMetrics, TrainConfig};
use atclab::wer::corpus_wer;

#[derive(Debug, Parser)]
#[command(name = "atclab", version, about = "Corpus curation, WER scoring and LoRA fine-tuning for ATC transcription")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Curate transcripts and audio into a manifest.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Generate a synthetic phraseology corpus.
    Synth(SynthArgs),
    /// Score hypothesis lines against reference lines.
    Wer(WerArgs),
    /// Train a single model.
    Train(TrainArgs),
    /// Run a cross-validated grid campaign.
    Grid(GridArgs),
    /// Aggregate campaign results into tables and figures.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
enum CorpusCommand {
    /// Parse, normalize, cut and resample into a JSON-lines manifest.
    Prepare(PrepareArgs),
}

#[derive(Debug, Args)]
struct PrepareArgs {
    /// Directory of `*.txt` transcripts.
    #[arg(long)]
    transcripts: PathBuf,
    /// Directory of `<stem>.wav` recordings.
    #[arg(long)]
    audio: PathBuf,
    /// Manifest file to write; segments go to `segments/` beside it.
    #[arg(long)]
    out: PathBuf,
    /// What to do with transmissions shorter than 5 s.
    #[arg(long, default_value = "pad")]
    short_policy: ShortPolicy,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, env = "ATCLAB_SEED")]
    seed: u64,
    /// Number of utterances.
    #[arg(long)]
    n: usize,
    /// Channel profile: base or atc.
    #[arg(long, value_parser = parse_channel)]
    channel: ChannelProfile,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct WerArgs {
    /// Reference file, one utterance per line.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Hypothesis file, line-aligned with the reference.
    #[arg(long)]
    hyp: PathBuf,
    /// Also print one line per utterance.
    #[arg(long)]
    per_utterance: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Stream records: a `.jsonl` file or a corpus directory.
    #[arg(long)]
    manifest: PathBuf,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Campaign JSON, or stream records used with default settings.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    campaign: Option<Campaign>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, env = "ATCLAB_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Base checkpoint to adapt.
    #[arg(long)]
    base: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// One or more `results.jsonl` files.
    #[arg(long, required = true, num_args = 1..)]
    results: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_channel(s: &str) -> Result<ChannelProfile, String> {
    ChannelProfile::by_name(s).ok_or_else(|| format!("unknown channel {s:?} (expected base or atc)"))
}

/// Exit code 1 marks bad input, 2 an internal failure.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure { code: 2, error: e.into() }
    }
}

trait UserError<T> {
    fn user(self, what: impl FnOnce() -> String) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> UserError<T> for Result<T, E> {
    fn user(self, what: impl FnOnce() -> String) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 1, error: e.into().context(what()) })
    }
}

fn user_fail(msg: String) -> Failure {
    Failure { code: 1, error: anyhow!(msg) }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match catch_unwind(AssertUnwindSafe(|| run(cli.command))) {
        Ok(Ok(summary)) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Ok(Err(f)) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
        Err(_) => {
            eprintln!("error: internal failure");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<String, Failure> {
    match command {
        Command::Corpus(CorpusCommand::Prepare(a)) => prepare(a),
        Command::Synth(a) => synth(a),
        Command::Wer(a) => score(a),
        Command::Train(a) => train_cmd(a),
        Command::Grid(a) => grid(a),
        Command::Report(a) => report(a),
    }
}

fn prepare(a: PrepareArgs) -> Result<String, Failure> {
    for (flag, dir) in [("--transcripts", &a.transcripts), ("--audio", &a.audio)] {
        if !dir.is_dir() {
            return Err(user_fail(format!("{flag}: {} is not a directory", dir.display())));
        }
    }
    let opts = ManifestOptions {
        limits: SegmentLimits { short_policy: a.short_policy, ..SegmentLimits::default() },
        ..ManifestOptions::default()
    };
    let summary = build_manifest(&a.transcripts, &a.audio, &a.out, &opts).user(|| "corpus prepare".into())?;
    for msg in &summary.error_messages {
        log::warn!("{msg}");
    }
    Ok(format!("corpus prepare: {}", summary.one_line()))
}

fn synth(a: SynthArgs) -> Result<String, Failure> {
    let corpus = synth_corpus(a.seed, a.n, &a.channel);
    corpus.write(&a.out).user(|| format!("--out {}", a.out.display()))?;
    let channel = format!("{:?}", a.channel.domain).to_lowercase();
    Ok(format!("synth: seed={} n={} channel={channel} files={}", a.seed, a.n, a.n.div_ceil(UTTERANCES_PER_FILE)))
}

fn read_lines(flag: &str, path: &Path) -> Result<Vec<String>, Failure> {
    let text = fs::read_to_string(path).user(|| format!("{flag} {}", path.display()))?;
    Ok(text.lines().map(str::to_owned).collect())
}

fn score(a: WerArgs) -> Result<String, Failure> {
    let refs = read_lines("--ref", &a.reference)?;
    let hyps = read_lines("--hyp", &a.hyp)?;
    if refs.len() != hyps.len() {
        return Err(user_fail(format!("--ref has {} lines but --hyp has {}", refs.len(), hyps.len())));
    }
    let norm = |flag: &str, lines: &[String]| -> Result<Vec<_>, Failure> {
        lines
            .iter()
            .enumerate()
            .map(|(i, l)| normalize(l).user(|| format!("{flag} line {}", i + 1)))
            .collect()
    };
    let (r, h) = (norm("--ref", &refs)?, norm("--hyp", &hyps)?);
    let result = corpus_wer(r.iter().zip(&h)).user(|| "--ref".into())?;
    if a.per_utterance {
        for (i, u) in result.per_utterance.iter().enumerate() {
            let al = &u.alignment;
            println!("{}: S={} D={} I={} N={} WER={:.4}", i + 1, al.s_count, al.d_count, al.i_count, al.n_ref, u.wer);
        }
    }
    let (s, d, i, n) = result.totals();
    Ok(format!(
        "S={s} D={d} I={i} N={n} WER={:.4} mean_utterance_WER={:.4} utterances={}",
        result.pooled_wer,
        result.mean_utterance_wer,
        result.per_utterance.len()
    ))
}

/// Configuration for `train`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    training: TrainConfig,
    /// Shape of a fresh model; ignored when `base_checkpoint` is set.
    model: ModelConfig,
    /// Adapters to inject before training.
    lora: Option<LoraConfig>,
    base_checkpoint: Option<PathBuf>,
    /// Held-out stream records; without them the last `eval_fraction` of
    /// the training records is held out.
    eval: Option<PathBuf>,
    eval_fraction: Option<f64>,
}

fn read_json<T: for<'de> Deserialize<'de>>(flag: &str, path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).user(|| format!("{flag} {}", path.display()))?;
    serde_json::from_str(&text).user(|| format!("{flag} {}", path.display()))
}

fn read_streams(flag: &str, path: &Path) -> Result<Vec<StreamRecord>, Failure> {
    let records = load_streams(path).user(|| format!("{flag} {}", path.display()))?;
    if records.is_empty() {
        return Err(user_fail(format!("{flag} {}: no stream records", path.display())));
    }
    Ok(records)
}

/// A checkpoint's model and vocabulary, or a fresh model over the records'
/// vocabulary.
fn load_base(
    flag: &str,
    checkpoint: Option<&Path>,
    shape: &ModelConfig,
    records: &[StreamRecord],
) -> Result<(Model, Vocab), Failure> {
    match checkpoint {
        Some(path) => {
            let ckpt = load_checkpoint(path).user(|| format!("{flag} {}", path.display()))?;
            let vocab = ckpt.vocab.clone().unwrap_or_else(Vocab::synthetic);
            let model = ckpt.into_model().user(|| format!("{flag} {}", path.display()))?;
            if model.config.vocab_out != vocab.size() {
                return Err(user_fail(format!("{flag} {}: vocabulary does not match the model", path.display())));
            }
            Ok((model, vocab))
        }
        None => {
            let vocab = Vocab::from_texts(records.iter().map(|r| r.text.as_str()));
            let config = shape.clone().with_vocab_defaults(SRC_VOCAB, vocab.size());
            let model = Model::new(config).user(|| "model configuration".into())?;
            Ok((model, vocab))
        }
    }
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), Failure> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    fs::write(path, buf).user(|| format!("--out {}", path.display()))
}

fn create_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).user(|| format!("--out {}", dir.display()))
}

fn train_cmd(a: TrainArgs) -> Result<String, Failure> {
    let config: RunConfig = read_json("--config", &a.config)?;
    config.training.validate().user(|| format!("--config {}", a.config.display()))?;
    let records = read_streams("--manifest", &a.manifest)?;
    let (mut model, vocab) = load_base("base_checkpoint", config.base_checkpoint.as_deref(), &config.model, &records)?;
    if let Some(lora) = &config.lora {
        model.inject_lora(lora, config.training.seed).user(|| "lora".into())?;
    }
    if config.training.freeze_base && !model.has_adapters() {
        return Err(user_fail("freeze_base needs a lora section or an adapted base checkpoint".into()));
    }
    let (train_set, eval_set) = match &config.eval {
        Some(path) => {
            let eval = read_streams("eval", path)?;
            (
                Dataset::from_records(&records, &vocab).user(|| "--manifest".into())?,
                Dataset::from_records(&eval, &vocab).user(|| "eval".into())?,
            )
        }
        None => {
            let all = Dataset::from_records(&records, &vocab).user(|| "--manifest".into())?;
            let fraction = config.eval_fraction.unwrap_or(0.1);
            if !(0.0..1.0).contains(&fraction) {
                return Err(user_fail(format!("eval_fraction {fraction} outside [0, 1)")));
            }
            let n_eval = ((all.len() as f64 * fraction).ceil() as usize).clamp(1, all.len().saturating_sub(1).max(1));
            if all.len() < 2 {
                return Err(user_fail("--manifest: need at least two utterances to hold one out".into()));
            }
            let cut = all.len() - n_eval;
            (all.subset(&(0..cut).collect::<Vec<_>>()), all.subset(&(cut..all.len()).collect::<Vec<_>>()))
        }
    };
    create_out(&a.out)?;
    let metrics_path = a.out.join("metrics.jsonl");
    let mut log = fs::File::create(&metrics_path).user(|| format!("--out {}", metrics_path.display()))?;
    let mut io_error = None;
    let metrics = train_with(&mut model, &train_set, &eval_set, &config.training, |m: &EpochMetrics| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        if let Err(e) = writeln!(log, "{line}") {
            io_error.get_or_insert(e);
        }
    })
    .user(|| "training".into())?;
    if let Some(e) = io_error {
        return Err(e).user(|| format!("--out {}", metrics_path.display()));
    }
    let seed = config.training.seed;
    save_checkpoint(a.out.join("model.ckpt"), &Checkpoint::full(&model, seed, Some(&vocab)))
        .user(|| "--out model.ckpt".into())?;
    if model.has_adapters() {
        save_checkpoint(a.out.join("adapter.ckpt"), &Checkpoint::adapter(&model, seed, Some(&vocab))?)
            .user(|| "--out adapter.ckpt".into())?;
    }
    let last = metrics.last().ok_or_else(|| anyhow!("training produced no epochs"))?;
    Ok(format!(
        "train: examples={} eval={} epochs={} steps={} train_loss={:.4} eval_loss={:.4} eval_wer={:.4}",
        train_set.len(),
        eval_set.len(),
        metrics.len(),
        last.steps,
        last.train_loss,
        last.eval_loss,
        last.eval_wer
    ))
}

/// `--manifest` is a campaign JSON file, or else stream records.
fn campaign_manifest(path: &Path) -> Result<CampaignManifest, Failure> {
    let is_json_file = path.is_file() && path.extension().is_some_and(|x| x == "json");
    if is_json_file {
        let mut m: CampaignManifest = read_json("--manifest", path)?;
        if m.dataset_dir.is_relative() {
            if let Some(parent) = path.parent() {
                m.dataset_dir = parent.join(&m.dataset_dir);
            }
        }
        if let Some(b) = m.base_checkpoint.as_mut().filter(|b| b.is_relative()) {
            if let Some(parent) = path.parent() {
                *b = parent.join(&*b);
            }
        }
        return Ok(m);
    }
    if !path.exists() {
        return Err(user_fail(format!("--manifest {}: no such file or directory", path.display())));
    }
    Ok(CampaignManifest {
        campaign: Campaign::Base,
        k: 5,
        seed: 0,
        workers: 1,
        dataset_dir: path.to_path_buf(),
        scale_divisor: 32,
        grid: None,
        model: None,
        base_checkpoint: None,
        max_steps: None,
    })
}

fn grid(a: GridArgs) -> Result<String, Failure> {
    let mut m = campaign_manifest(&a.manifest)?;
    if let Some(c) = a.campaign {
        m.campaign = c;
    }
    if let Some(k) = a.k {
        m.k = k;
    }
    if let Some(seed) = a.seed {
        m.seed = seed;
    }
    if let Some(w) = a.workers {
        m.workers = w;
    }
    if let Some(b) = a.base {
        m.base_checkpoint = Some(b);
    }
    if m.workers == 0 {
        return Err(user_fail("--workers must be at least 1".into()));
    }
    let records = read_streams("dataset_dir", &m.dataset_dir)?;
    let shape = m.model.clone().unwrap_or_default();
    let (base, vocab) = load_base("--base", m.base_checkpoint.as_deref(), &shape, &records)?;
    let data = Dataset::from_records(&records, &vocab).user(|| "dataset_dir".into())?;
    let plan = kfold_split(data.len(), m.k, m.seed).user(|| "--k".into())?;
    let trials = enumerate_grid(m.campaign, m.k, m.seed, &m.grid_spec()).user(|| "grid".into())?;
    atclab::experiment::check_ranks(&trials, &base.config).user(|| "grid".into())?;
    let opts = RunOptions { max_steps: m.max_steps };
    let results = run_campaign(&trials, &base, &data, &plan, m.workers, &opts)?;
    create_out(&a.out)?;
    write_jsonl(&a.out.join("results.jsonl"), &results)?;
    write_jsonl(&a.out.join("metrics.jsonl"), &metrics_lines(&results))?;
    let ok: Vec<f64> = results.iter().filter(|r| r.status == TrialStatus::Ok).filter_map(|r| r.eval_wer).collect();
    let failed = results.len() - ok.len();
    for r in results.iter().filter(|r| r.status == TrialStatus::Failed) {
        log::warn!("trial {} failed: {}", r.task_id, r.error.as_deref().unwrap_or("unknown"));
    }
    let mean = if ok.is_empty() { f64::NAN } else { ok.iter().sum::<f64>() / ok.len() as f64 };
    Ok(format!(
        "grid: campaign={:?} k={} seed={} trials={} ok={} failed={failed} mean_wer={mean:.4}",
        m.campaign,
        m.k,
        m.seed,
        results.len(),
        ok.len()
    )
    .to_lowercase())
}

fn report(a: ReportArgs) -> Result<String, Failure> {
    let mut results: Vec<TrialResult> = Vec::new();
    for path in &a.results {
        let text = fs::read_to_string(path).user(|| format!("--results {}", path.display()))?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let r = serde_json::from_str(line).user(|| format!("--results {} line {}", path.display(), i + 1))?;
            results.push(r);
        }
    }
    if results.is_empty() {
        return Err(user_fail("--results: no trial results".into()));
    }
    let bundle = aggregate(&results).user(|| "--results".into())?;
    create_out(&a.out)?;
    let files = emit_report(&bundle, &a.out)?;
    let names: Vec<String> =
        files.written.iter().filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned())).collect();
    Ok(format!("report: trials={} files={} [{}]", results.len(), names.len(), names.join(" ")))
}
