//! The `ape` command line.
//!
//! Every subcommand accepts `--config FILE`, a line-oriented `key = value`
//! file whose keys are flag names (`beam = 6`, `apply_at = logits`). Flags
//! given on the command line win over the file. The effective settings are
//! echoed to stderr before a command runs.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 internal error.
//!
//! Scores are computed by this crate's own TER and BLEU, so they are
//! comparable with each other but not necessarily with other tools.

pub mod grid;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::corpus::{read_lines, write_lines, Corpus, RawCorpus};
use crate::datapipe::{
    mix, read_weights, synthesize, training_samples, weigh, write_weighted, write_weights,
    MixSpec, ParallelCorpus, TransformerTrainer, WeightedSample, WEIGHTS_FILE,
};
use crate::decoder::{batch_decode, DecodeConfig, LengthNorm, ScoreKind};
use crate::error::{Error, Result};
use crate::metrics::{bleu, corpus_ter, Smoothing};
use crate::model::{
    load_checkpoint, save_checkpoint, train_with, ModelConfig, ModelParams, ModelScorer,
    TrainConfig,
};
use crate::vocab::Vocabulary;
use grid::{c_range, run_grid_with, GridSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

pub const MODEL_FILE: &str = "model.bin";
pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Debug, Parser)]
#[command(name = "ape", version, about = "Conservative automatic post-editing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score hypotheses against references with TER and BLEU.
    Eval(EvalArgs),
    /// Post-edit a corpus with a trained model.
    Decode(DecodeArgs),
    /// Search beam size, application point and penalty on a dev set.
    Grid(GridArgs),
    /// Train a post-editing model on weighted triplets.
    Train(TrainArgs),
    /// Build synthetic triplets by k-fold round-trip translation.
    Synthesize(SynthesizeArgs),
    /// Compute 1 - TER sample weights for a triplet corpus.
    Weigh(WeighArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ApplyAt {
    Logits,
    Logprobs,
}

impl From<ApplyAt> for ScoreKind {
    fn from(a: ApplyAt) -> Self {
        match a {
            ApplyAt::Logits => ScoreKind::Logits,
            ApplyAt::Logprobs => ScoreKind::LogProbs,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GridModes {
    Both,
    Logits,
    Logprobs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LengthNormArg {
    Off,
    ByLength,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SmoothingArg {
    None,
    AddOne,
}

#[derive(Debug, Args)]
struct ConfigFile {
    /// `key = value` file applied before the command-line flags.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    hyp: PathBuf,
    #[arg(long = "ref", value_name = "FILE")]
    reference: PathBuf,
    #[arg(long, value_enum, default_value_t = SmoothingArg::None)]
    smoothing: SmoothingArg,
    #[command(flatten)]
    config: ConfigFile,
}

#[derive(Debug, Args)]
struct LengthFlags {
    /// Output cap is ceil(factor * len(mt)) + slack tokens.
    #[arg(long, default_value_t = 1.5)]
    max_len_factor: f64,
    #[arg(long, default_value_t = 5)]
    slack: usize,
    #[arg(long, value_enum, default_value_t = LengthNormArg::Off)]
    length_norm: LengthNormArg,
}

impl LengthFlags {
    fn apply(&self, cfg: &mut DecodeConfig) {
        cfg.max_len_factor = self.max_len_factor;
        cfg.slack = self.slack;
        cfg.length_norm = match self.length_norm {
            LengthNormArg::Off => LengthNorm::Off,
            LengthNormArg::ByLength => LengthNorm::ByLength,
        };
    }
}

#[derive(Debug, Args)]
struct ModelFlags {
    /// Checkpoint written by `ape train`.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Vocabulary file; defaults to vocab.txt next to the checkpoint.
    #[arg(long, value_name = "FILE")]
    vocab: Option<PathBuf>,
}

impl ModelFlags {
    fn load(&self) -> Result<(ModelParams, Vocabulary)> {
        let params = load_checkpoint(&self.model)?;
        let vocab_path = match &self.vocab {
            Some(p) => p.clone(),
            None => self
                .model
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join(VOCAB_FILE),
        };
        let vocab = Vocabulary::load(&vocab_path)?;
        if vocab.len() != params.config().vocab_size {
            return Err(Error::Format {
                path: vocab_path,
                message: format!(
                    "vocabulary has {} tokens but the checkpoint expects {}",
                    vocab.len(),
                    params.config().vocab_size
                ),
            });
        }
        Ok((params, vocab))
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct DecodeArgs {
    #[command(flatten)]
    model: ModelFlags,
    /// Directory with src.txt and mt.txt.
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    #[arg(long, default_value_t = 4)]
    beam: usize,
    /// Conservativeness penalty.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    c: f64,
    #[arg(long, value_enum, default_value_t = ApplyAt::Logprobs)]
    apply_at: ApplyAt,
    /// Permit c < 0 (rewards edits).
    #[arg(long)]
    allow_negative: bool,
    #[command(flatten)]
    length: LengthFlags,
    /// Output file; stdout when absent.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigFile,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct GridArgs {
    #[command(flatten)]
    model: ModelFlags,
    /// Dev directory with src.txt, mt.txt and pe.txt.
    #[arg(long, value_name = "DIR")]
    dev: PathBuf,
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "4,6")]
    beams: Vec<usize>,
    /// Explicit penalty values; overrides the range flags.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, allow_negative_numbers = true)]
    c_values: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    c_min: f64,
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    c_max: f64,
    #[arg(long, default_value_t = 0.1)]
    c_step: f64,
    #[arg(long, value_enum, default_value_t = GridModes::Both)]
    apply_at: GridModes,
    #[arg(long)]
    allow_negative: bool,
    #[command(flatten)]
    length: LengthFlags,
    /// Directory for grid.csv and grid.txt.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigFile,
}

#[derive(Debug, Args)]
struct ArchFlags {
    #[arg(long, default_value_t = ModelConfig::desk(0).d_model)]
    d_model: usize,
    #[arg(long, default_value_t = ModelConfig::desk(0).n_layers)]
    layers: usize,
    #[arg(long, default_value_t = ModelConfig::desk(0).n_heads)]
    heads: usize,
    #[arg(long, default_value_t = ModelConfig::desk(0).ffn_dim)]
    ffn_dim: usize,
    #[arg(long, default_value_t = ModelConfig::desk(0).max_positions)]
    max_positions: usize,
    #[arg(long, default_value_t = 0)]
    model_seed: u32,
}

impl ArchFlags {
    fn config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let c = ModelConfig {
            d_model: self.d_model,
            n_layers: self.layers,
            n_heads: self.heads,
            ffn_dim: self.ffn_dim,
            max_positions: self.max_positions,
            vocab_size,
            seed: self.model_seed,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
struct OptimFlags {
    #[arg(long, default_value_t = TrainConfig::default().peak_lr)]
    peak_lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().total_steps)]
    total_steps: usize,
    #[arg(long, default_value_t = TrainConfig::default().warmup_steps)]
    warmup_steps: usize,
    #[arg(long, default_value_t = TrainConfig::default().tokens_per_batch)]
    tokens_per_batch: usize,
    #[arg(long, default_value_t = TrainConfig::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = TrainConfig::default().dropout)]
    dropout: f64,
    #[arg(long, default_value_t = TrainConfig::default().weight_decay)]
    weight_decay: f64,
    #[arg(long, default_value_t = TrainConfig::default().max_grad_norm)]
    max_grad_norm: f64,
    #[arg(long, default_value_t = TrainConfig::default().log_every)]
    log_every: usize,
}

impl OptimFlags {
    fn config(&self) -> Result<TrainConfig> {
        let c = TrainConfig {
            peak_lr: self.peak_lr,
            total_steps: self.total_steps,
            warmup_steps: self.warmup_steps,
            tokens_per_batch: self.tokens_per_batch,
            seed: self.seed,
            dropout: self.dropout,
            weight_decay: self.weight_decay,
            max_grad_norm: self.max_grad_norm,
            log_every: self.log_every,
            ..TrainConfig::default()
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct TrainArgs {
    /// Triplet directory (src.txt, mt.txt, pe.txt, optional weights.txt).
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    /// Times the main corpus is repeated in the training stream.
    #[arg(long, default_value_t = 1)]
    copies: usize,
    /// Second triplet directory, e.g. synthetic data.
    #[arg(long, value_name = "DIR")]
    extra: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    extra_copies: usize,
    #[arg(long, default_value_t = 0)]
    mix_seed: u64,
    /// Train every sample with weight 1 instead of 1 - TER.
    #[arg(long)]
    unweighted: bool,
    #[command(flatten)]
    arch: ArchFlags,
    #[command(flatten)]
    optim: OptimFlags,
    /// Receives model.bin and vocab.txt.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    #[command(flatten)]
    config: ConfigFile,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct SynthesizeArgs {
    /// Directory with parallel src.txt and tgt.txt.
    #[arg(long, value_name = "DIR")]
    parallel: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Seed of the fold assignment.
    #[arg(long, default_value_t = 0)]
    fold_seed: u64,
    /// Beam size of the fold translation models.
    #[arg(long, default_value_t = 4)]
    beam: usize,
    #[command(flatten)]
    arch: ArchFlags,
    #[command(flatten)]
    optim: OptimFlags,
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    #[command(flatten)]
    config: ConfigFile,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct WeighArgs {
    /// Triplet directory with pe.txt.
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    /// Defaults to weights.txt inside the corpus directory.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigFile,
}

/// Exit status for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_USAGE,
        Error::Diverged { .. } | Error::Internal(_) => EXIT_INTERNAL,
        Error::Item { source, .. } | Error::FoldTraining { source, .. } => exit_code(source),
        _ => EXIT_DATA,
    }
}

/// Parses a `key = value` config file into flags. Blank lines and `#`
/// comments are skipped; `true` / `false` toggle switches.
pub fn config_flags(text: &str) -> std::result::Result<Vec<OsString>, String> {
    let mut flags = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected `key = value`", n + 1))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() {
            return Err(format!("config line {}: empty key", n + 1));
        }
        if key == "config" {
            return Err(format!("config line {}: config files cannot include others", n + 1));
        }
        match value {
            "true" => flags.push(format!("--{key}").into()),
            "false" => {}
            _ => flags.push(format!("--{key}={value}").into()),
        }
    }
    Ok(flags)
}

/// Splices the flags from `--config FILE` in front of the user's flags so
/// the latter override them.
fn expand_config(args: Vec<OsString>) -> std::result::Result<Vec<OsString>, String> {
    let Some(sub) = args.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')) else {
        return Ok(args);
    };
    let sub = sub + 1;
    let mut path = None;
    for (i, a) in args.iter().enumerate().skip(sub + 1) {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = args.get(i + 1).map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let flags = config_flags(&text)?;
    let mut out = args[..=sub].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[sub + 1..]);
    Ok(out)
}

/// `key = value` lines for every argument of the chosen subcommand, marking
/// those left at their defaults.
fn settings(matches: &clap::ArgMatches) -> Vec<String> {
    let Some((name, sub)) = matches.subcommand() else {
        return Vec::new();
    };
    let cmd = Cli::command();
    let Some(sub_cmd) = cmd.find_subcommand(name) else {
        return Vec::new();
    };
    let mut lines = vec![format!("# ape {name}")];
    for arg in sub_cmd.get_arguments() {
        let id = arg.get_id().as_str();
        let Some(key) = arg.get_long() else { continue };
        if matches!(id, "help" | "version" | "config") {
            continue;
        }
        let value = sub
            .get_raw(id)
            .map(|vals| vals.map(|v| v.to_string_lossy()).collect::<Vec<_>>().join(","));
        let Some(value) = value else {
            lines.push(format!("# {key} is unset"));
            continue;
        };
        let from_default = sub.value_source(id) == Some(clap::parser::ValueSource::DefaultValue);
        lines.push(format!("{key} = {value}{}", if from_default { "  # default" } else { "" }));
    }
    lines
}

/// Runs the command line and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    let mut err = std::io::stderr().lock();
    for line in settings(&matches) {
        let _ = writeln!(err, "{line}");
    }
    drop(err);

    match std::panic::catch_unwind(|| dispatch(cli.command)) {
        Ok(Ok(())) => EXIT_OK,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
        Err(_) => EXIT_INTERNAL,
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Eval(a) => cmd_eval(&a),
        Command::Decode(a) => cmd_decode(&a),
        Command::Grid(a) => cmd_grid(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Synthesize(a) => cmd_synthesize(&a),
        Command::Weigh(a) => cmd_weigh(&a),
    }
}

fn tokenize(lines: &[String]) -> Vec<Vec<&str>> {
    lines.iter().map(|l| l.split_whitespace().collect()).collect()
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let hyps = read_lines(&a.hyp)?;
    let refs = read_lines(&a.reference)?;
    if hyps.len() != refs.len() {
        return Err(Error::Format {
            path: a.hyp.clone(),
            message: format!("{} hypothesis lines vs {} reference lines", hyps.len(), refs.len()),
        });
    }
    let (h, r) = (tokenize(&hyps), tokenize(&refs));
    let t = corpus_ter(&h, &r)?;
    let smoothing = match a.smoothing {
        SmoothingArg::None => Smoothing::None,
        SmoothingArg::AddOne => Smoothing::AddOne,
    };
    let b = bleu(&h, &r, smoothing)?;
    println!("TER {:.4} edits {} ref_len {}", t.score, t.edits, t.ref_len);
    println!("BLEU {:.4}", b.score);
    Ok(())
}

fn check_c(c: f64, allow_negative: bool) -> Result<()> {
    if c < 0.0 && !allow_negative {
        return Err(Error::config("c", format!("{c} is negative; pass --allow-negative")));
    }
    Ok(())
}

fn load_corpus(dir: &Path, vocab: &Vocabulary) -> Result<Corpus> {
    Corpus::from_raw(&RawCorpus::read_dir(dir)?, vocab)
}

fn cmd_decode(a: &DecodeArgs) -> Result<()> {
    check_c(a.c, a.allow_negative)?;
    let mut cfg = DecodeConfig {
        beam_size: a.beam,
        c: a.c,
        apply_at: a.apply_at.into(),
        ..DecodeConfig::default()
    };
    a.length.apply(&mut cfg);
    cfg.validate()?;
    let (params, vocab) = a.model.load()?;
    let corpus = load_corpus(&a.corpus, &vocab)?;
    let outputs = batch_decode(&ModelScorer::new(&params), corpus.items(), &vocab, &cfg)?;
    let lines: Vec<String> = outputs.iter().map(|o| vocab.decode(&o.tokens)).collect();
    match &a.out {
        Some(path) => write_lines(path, &lines),
        None => {
            let mut out = std::io::stdout().lock();
            for l in &lines {
                let _ = writeln!(out, "{l}");
            }
            Ok(())
        }
    }
}

fn cmd_grid(a: &GridArgs) -> Result<()> {
    let c_values = match &a.c_values {
        Some(v) => v.clone(),
        None => c_range(a.c_min, a.c_max, a.c_step)?,
    };
    if let Some(&c) = c_values.iter().find(|&&c| c < 0.0) {
        check_c(c, a.allow_negative)?;
    }
    let modes = match a.apply_at {
        GridModes::Both => vec![ScoreKind::Logits, ScoreKind::LogProbs],
        GridModes::Logits => vec![ScoreKind::Logits],
        GridModes::Logprobs => vec![ScoreKind::LogProbs],
    };
    let mut spec = GridSpec {
        beams: a.beams.clone(),
        c_values,
        modes,
        base: DecodeConfig::default(),
    };
    a.length.apply(&mut spec.base);
    spec.validate()?;
    let (params, vocab) = a.model.load()?;
    let dev = load_corpus(&a.dev, &vocab)?;
    let total = spec.num_cells();
    let mut done = 0;
    let result = run_grid_with(&ModelScorer::new(&params), &dev, &spec, |row| {
        done += 1;
        let status = match &row.outcome {
            Ok(s) => format!("TER {:.4} BLEU {:.4}", s.ter, s.bleu),
            Err(e) => format!("failed: {e}"),
        };
        eprintln!("[{done}/{total}] beam {} {} c {}: {status}", row.beam, row.apply_at, row.c);
    })?;
    let table = result.to_table();
    print!("{table}");
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("grid.csv");
        std::fs::write(&csv, result.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let txt = dir.join("grid.txt");
        std::fs::write(&txt, &table).map_err(|e| Error::io(&txt, e))?;
    }
    Ok(())
}

fn load_weighted(dir: &Path, vocab: &Vocabulary, unweighted: bool) -> Result<Vec<WeightedSample>> {
    let corpus = load_corpus(dir, vocab)?;
    let mut samples = weigh(&corpus)?;
    let weights_path = dir.join(WEIGHTS_FILE);
    if unweighted {
        samples.iter_mut().for_each(|s| s.weight = 1.0);
    } else if weights_path.exists() {
        let weights = read_weights(&weights_path)?;
        if weights.len() != samples.len() {
            return Err(Error::Format {
                path: weights_path,
                message: format!("{} weights for {} triplets", weights.len(), samples.len()),
            });
        }
        for (s, w) in samples.iter_mut().zip(weights) {
            s.weight = w;
        }
    }
    Ok(samples)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let train_cfg = a.optim.config()?;
    let main_raw = RawCorpus::read_dir(&a.corpus)?;
    let extra_raw = a.extra.as_deref().map(RawCorpus::read_dir).transpose()?;
    let vocab = Vocabulary::build(main_raw.all_lines().chain(extra_raw.iter().flat_map(|r| r.all_lines())))?;
    let model_cfg = a.arch.config(vocab.len())?;
    let main = load_weighted(&a.corpus, &vocab, a.unweighted)?;
    let extra = match &a.extra {
        Some(dir) => load_weighted(dir, &vocab, a.unweighted)?,
        None => Vec::new(),
    };
    let spec = MixSpec {
        in_domain_copies: a.copies,
        synthetic_copies: a.extra_copies,
        shuffle_seed: a.mix_seed,
    };
    let params = ModelParams::new(model_cfg)?;
    let samples = training_samples(&params, mix(&main, &extra, &spec)?)?;
    eprintln!("training on {} samples, vocabulary of {}", samples.len(), vocab.len());
    let outcome = train_with(params, &samples, &train_cfg, |e| {
        println!("step {} lr {:.6e} loss {:.4}", e.step, e.lr, e.loss);
    })?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    save_checkpoint(&outcome.params, &a.out_dir.join(MODEL_FILE))?;
    vocab.save(&a.out_dir.join(VOCAB_FILE))
}

fn cmd_synthesize(a: &SynthesizeArgs) -> Result<()> {
    let (src, tgt) = ParallelCorpus::read_lines(&a.parallel)?;
    let vocab = Vocabulary::build(src.iter().chain(&tgt))?;
    let data = ParallelCorpus::encode(&src, &tgt, &vocab)?;
    let mut trainer = TransformerTrainer::new(a.arch.config(vocab.len())?, a.optim.config()?);
    trainer.decode.beam_size = a.beam;
    trainer.decode.validate()?;
    let synthesis = synthesize(&data, a.k, &trainer, a.fold_seed)?;
    let audit = &synthesis.audit;
    for fold in 0..a.k {
        println!(
            "fold {fold}: trained on {} lines, translated {} lines",
            audit.trained_on[fold].len(),
            audit.translated[fold].len()
        );
    }
    if !audit.is_unbiased() {
        return Err(Error::Internal("fold audit failed".into()));
    }
    println!("dropped {} empty translations; wrote {} triplets", audit.dropped.len(), synthesis.corpus.len());
    let weighted = weigh(&synthesis.corpus)?;
    write_weighted(&a.out_dir, &weighted, &vocab)?;
    vocab.save(&a.out_dir.join(VOCAB_FILE))
}

fn cmd_weigh(a: &WeighArgs) -> Result<()> {
    let raw = RawCorpus::read_dir(&a.corpus)?;
    let vocab = Vocabulary::build(raw.all_lines())?;
    let samples = weigh(&Corpus::from_raw(&raw, &vocab)?)?;
    let out = a.out.clone().unwrap_or_else(|| a.corpus.join(WEIGHTS_FILE));
    write_weights(&out, samples.iter().map(|s| s.weight))?;
    let mean = samples.iter().map(|s| s.weight).sum::<f64>() / samples.len().max(1) as f64;
    println!("weighed {} triplets, mean weight {mean:.4}", samples.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_lines_become_flags() {
        let flags = config_flags("# comment\nbeam = 6\n\napply_at = logits  # trailing\nallow_negative = true\nunweighted = false\n").unwrap();
        assert_eq!(flags, vec![
            OsString::from("--beam=6"),
            "--apply-at=logits".into(),
            "--allow-negative".into(),
        ]);
        assert!(config_flags("beam 6").is_err());
        assert!(config_flags("config = x").is_err());
    }

    #[test]
    fn command_line_overrides_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.conf");
        std::fs::write(&cfg, "beams = 4,6\nc_step = 0.5\n").unwrap();
        let args: Vec<OsString> = ["ape", "grid", "--model", "m", "--dev", "d", "--config"]
            .iter()
            .map(OsString::from)
            .chain([cfg.clone().into_os_string(), "--beams".into(), "8".into()])
            .collect();
        let args = expand_config(args).unwrap();
        let m = Cli::command().try_get_matches_from(args).unwrap();
        let cli = Cli::from_arg_matches(&m).unwrap();
        let Command::Grid(g) = cli.command else { panic!() };
        assert_eq!(g.beams, vec![8]);
        assert_eq!(g.c_step, 0.5);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::config("x", "y")), EXIT_USAGE);
        assert_eq!(exit_code(&Error::EmptyInput("x")), EXIT_DATA);
        assert_eq!(exit_code(&Error::Diverged { step: 1, loss: f64::NAN }), EXIT_INTERNAL);
        assert_eq!(exit_code(&Error::config("x", "y").at_item(3)), EXIT_USAGE);
    }

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
