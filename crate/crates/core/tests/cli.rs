use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use ape_core::corpus::{Corpus, RawCorpus};
use ape_core::decoder::{batch_decode, DecodeConfig, ScoreKind};
use ape_core::model::{load_checkpoint, ModelScorer};
use ape_core::toy::copy_task;
use ape_core::vocab::Vocabulary;
use tempfile::TempDir;

fn ape(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ape")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &Path, name: &str, lines: &[&str]) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

struct Trained {
    _dir: TempDir,
    model: PathBuf,
    corpus: PathBuf,
    log: String,
}

const TINY: &[&str] = &[
    "--d-model", "16", "--layers", "1", "--heads", "2", "--ffn-dim", "32", "--max-positions", "24",
    "--dropout", "0", "--tokens-per-batch", "64",
];

/// A small model trained once through the binary and shared by the tests.
fn trained() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("data");
        let mut raw = copy_task(40, 10, 3..=6, 5);
        // A few lines with something to fix so the penalty has an effect.
        for (i, mt) in raw.mt.iter_mut().enumerate().take(10) {
            *mt = mt.replacen(&format!("w{}", i % 10), "w9", 1);
        }
        raw.write_dir(&corpus).unwrap();
        let out = dir.path().join("model");
        let mut args = vec![
            "train", "--corpus", p(&corpus), "--out-dir", p(&out), "--total-steps", "40",
            "--warmup-steps", "10", "--log-every", "10", "--peak-lr", "0.002",
        ];
        args.extend_from_slice(TINY);
        let o = ape(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        Trained {
            log: stdout(&o),
            model: out.join("model.bin"),
            corpus,
            _dir: dir,
        }
    })
}

fn library_decode(t: &Trained, cfg: &DecodeConfig) -> Vec<String> {
    let params = load_checkpoint(&t.model).unwrap();
    let vocab = Vocabulary::load(&t.model.with_file_name("vocab.txt")).unwrap();
    let corpus = Corpus::from_raw(&RawCorpus::read_dir(&t.corpus).unwrap(), &vocab).unwrap();
    batch_decode(&ModelScorer::new(&params), corpus.items(), &vocab, cfg)
        .unwrap()
        .iter()
        .map(|d| vocab.decode(&d.tokens))
        .collect()
}

fn cli_decode(t: &Trained, extra: &[&str]) -> Vec<String> {
    let mut args = vec!["decode", "--model", p(&t.model), "--corpus", p(&t.corpus)];
    args.extend_from_slice(extra);
    let o = ape(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    stdout(&o).lines().map(str::to_owned).collect()
}

#[test]
fn eval_of_identical_files_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let lines = ["the cat sat on the mat", "a b c d e", "one two three four"];
    let hyp = write(dir.path(), "hyp", &lines);
    let r = write(dir.path(), "ref", &lines);
    let o = ape(&["eval", "--hyp", p(&hyp), "--ref", p(&r)]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("TER 0.0000"), "{out}");
    assert!(out.contains("BLEU 100.0000"), "{out}");
}

#[test]
fn eval_reports_edits() {
    let dir = tempfile::tempdir().unwrap();
    let hyp = write(dir.path(), "hyp", &["a b d"]);
    let r = write(dir.path(), "ref", &["a b c"]);
    let out = stdout(&ape(&["eval", "--hyp", p(&hyp), "--ref", p(&r)]));
    assert!(out.starts_with("TER 0.3333 edits 1 ref_len 3"), "{out}");
}

#[test]
fn eval_with_mismatched_line_counts_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let hyp = write(dir.path(), "hyp", &["a b", "c"]);
    let r = write(dir.path(), "ref", &["a b"]);
    let o = ape(&["eval", "--hyp", p(&hyp), "--ref", p(&r)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("2 hypothesis lines vs 1 reference lines"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(ape(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(ape(&["eval"]).status.code(), Some(1));
    assert_eq!(ape(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let o = ape(&["weigh", "--corpus", p(&missing)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn every_subcommand_exists() {
    for cmd in ["eval", "decode", "grid", "train", "synthesize", "weigh"] {
        let o = ape(&[cmd, "--help"]);
        assert!(o.status.success(), "{cmd}");
    }
}

#[test]
fn train_logs_the_schedule() {
    let t = trained();
    let lines: Vec<&str> = t.log.lines().collect();
    assert!(lines[0].starts_with("step 1 lr "), "{}", t.log);
    let at10 = lines.iter().find(|l| l.starts_with("step 10 ")).unwrap();
    assert!(at10.contains("lr 2.000000e-3"), "{at10}");
    assert!(t.log.contains("step 40 lr 0.000000e0"), "{}", t.log);
}

#[test]
fn decode_without_penalty_matches_the_library() {
    let t = trained();
    for beam in ["1", "4"] {
        let cfg = DecodeConfig {
            beam_size: beam.parse().unwrap(),
            ..DecodeConfig::default()
        };
        assert_eq!(cli_decode(t, &["--beam", beam, "--c", "0"]), library_decode(t, &cfg));
    }
}

#[test]
fn decode_with_huge_penalty_stays_inside_the_inputs() {
    let t = trained();
    let raw = RawCorpus::read_dir(&t.corpus).unwrap();
    let out = cli_decode(t, &["--c", "1e6", "--apply-at", "logits"]);
    for ((line, src), mt) in out.iter().zip(&raw.src).zip(&raw.mt) {
        for w in line.split_whitespace() {
            assert!(src.split(' ').chain(mt.split(' ')).any(|x| x == w), "{w} in {line}");
        }
    }
    let cfg = DecodeConfig {
        c: 1e6,
        apply_at: ScoreKind::Logits,
        ..DecodeConfig::default()
    };
    assert_eq!(out, library_decode(t, &cfg));
}

#[test]
fn decode_is_deterministic_and_writes_files() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.txt");
    cli_decode(t, &["--c", "0.5", "--out", p(&out)]);
    let first = std::fs::read_to_string(&out).unwrap();
    cli_decode(t, &["--c", "0.5", "--out", p(&out)]);
    assert_eq!(first, std::fs::read_to_string(&out).unwrap());
    assert_eq!(first.lines().collect::<Vec<_>>(), cli_decode(t, &["--c", "0.5"]));
}

#[test]
fn negative_penalty_needs_opt_in() {
    let t = trained();
    let base = ["decode", "--model", p(&t.model), "--corpus", p(&t.corpus), "--c", "-1"];
    assert_eq!(ape(&base).status.code(), Some(1));
    let mut ok = base.to_vec();
    ok.push("--allow-negative");
    assert!(ape(&ok).status.success());
}

#[test]
fn a_single_grid_cell_equals_decode_then_eval() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let grid_dir = dir.path().join("grid");
    let o = ape(&[
        "grid", "--model", p(&t.model), "--dev", p(&t.corpus), "--beams", "4", "--c-values", "1.5",
        "--apply-at", "logprobs", "--out-dir", p(&grid_dir),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(grid_dir.join("grid.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1, "{csv}");
    let fields: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(&fields[..3], &["4", "logprobs", "1.5"]);

    let hyp = dir.path().join("hyp.txt");
    cli_decode(t, &["--beam", "4", "--c", "1.5", "--apply-at", "logprobs", "--out", p(&hyp)]);
    let out = stdout(&ape(&["eval", "--hyp", p(&hyp), "--ref", p(&t.corpus.join("pe.txt"))]));
    let ter: f64 = out.split_whitespace().nth(1).unwrap().parse().unwrap();
    let bleu: f64 = out.lines().nth(1).unwrap().split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((fields[3].parse::<f64>().unwrap() - ter).abs() < 1e-4, "{csv} vs {out}");
    assert!((fields[4].parse::<f64>().unwrap() - bleu).abs() < 1e-4, "{csv} vs {out}");
    assert!(std::fs::read_to_string(grid_dir.join("grid.txt")).unwrap().contains("MT baseline"));
}

#[test]
fn grid_has_one_row_per_cell() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let o = ape(&[
        "grid", "--model", p(&t.model), "--dev", p(&t.corpus), "--beams", "1,2", "--c-min", "0",
        "--c-max", "1", "--c-step", "0.5", "--out-dir", p(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3 * 2);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",ok")));
}

#[test]
fn grid_refuses_large_penalties() {
    let t = trained();
    let o = ape(&["grid", "--model", p(&t.model), "--dev", p(&t.corpus), "--c-values", "0,6"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn weigh_gives_full_weight_to_untouched_lines() {
    let dir = tempfile::tempdir().unwrap();
    copy_task(12, 6, 4..=6, 1).write_dir(dir.path()).unwrap();
    let o = ape(&["weigh", "--corpus", p(dir.path())]);
    assert!(o.status.success());
    let w = std::fs::read_to_string(dir.path().join("weights.txt")).unwrap();
    assert_eq!(w.lines().count(), 12);
    assert!(w.lines().all(|l| l == "1.000000"), "{w}");
}

#[test]
fn synthesize_translates_every_fold_with_held_out_models() {
    let dir = tempfile::tempdir().unwrap();
    let parallel = dir.path().join("parallel");
    std::fs::create_dir(&parallel).unwrap();
    let (src, tgt) = ape_core::toy::dictionary_corpus(100, 12, 3);
    std::fs::write(parallel.join("src.txt"), src.join("\n") + "\n").unwrap();
    std::fs::write(parallel.join("tgt.txt"), tgt.join("\n") + "\n").unwrap();
    let out = dir.path().join("synthetic");
    let mut args = vec![
        "synthesize", "--parallel", p(&parallel), "--k", "5", "--out-dir", p(&out), "--total-steps",
        "5", "--warmup-steps", "1", "--log-every", "100", "--beam", "2",
    ];
    args.extend_from_slice(TINY);
    let o = ape(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    for fold in 0..5 {
        assert!(text.contains(&format!("fold {fold}: trained on 80 lines, translated 20 lines")), "{text}");
    }
    let prov = std::fs::read_to_string(out.join("provenance.txt")).unwrap();
    let weights = std::fs::read_to_string(out.join("weights.txt")).unwrap();
    assert_eq!(prov.lines().count(), weights.lines().count());
    assert!(prov.lines().all(|l| l.starts_with("synthetic-fold-")));
    assert!(out.join("vocab.txt").exists());
}

#[test]
fn command_line_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let hyp = write(dir.path(), "hyp", &["a b c d"]);
    let missing = dir.path().join("missing");
    let cfg = dir.path().join("eval.conf");
    std::fs::write(&cfg, format!("hyp = {}\nref = {}\n", p(&hyp), p(&missing))).unwrap();
    assert_eq!(ape(&["eval", "--config", p(&cfg)]).status.code(), Some(2));
    let o = ape(&["eval", "--config", p(&cfg), "--ref", p(&hyp)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("TER 0.0000"));
    let settings = String::from_utf8_lossy(&o.stderr);
    assert!(settings.contains("# ape eval"), "{settings}");
}
