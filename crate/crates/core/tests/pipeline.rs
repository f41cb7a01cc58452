use std::fs;
use std::path::{Path, PathBuf};

use mhqg::cli::{run_cli, sha256_file, RunLock};
use mhqg::metrics::{EvalReport, ORACLE_WATERMARK};

struct Run {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
}

impl Run {
    /// A small synthetic corpus with its run.toml.
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().to_path_buf();
        let d = dir.display().to_string();
        run_cli(["mhqg", "make-synthetic", "--dir", &d, "--train-size", "40", "--dev-size", "4", "--test-size", "6"])
            .unwrap();
        Self { _tmp: tmp, dir }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Runs `args` against the corpus config with a fast schedule and
    /// `output` as the output directory.
    fn cli(&self, output: &str, args: &[&str]) -> mhqg::Result<String> {
        let config = self.dir.join("run.toml").display().to_string();
        let out = self.out(output).display().to_string();
        let mut argv = vec![
            "mhqg", "--config", &config, "--output-dir", &out, "--epochs", "2", "--lr", "1e-3", "--accumulation",
            "1", "--qa-epochs", "1",
        ];
        argv.extend_from_slice(args);
        run_cli(argv)
    }
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let run = Run::new();
    run.cli("run", &["train-qa"]).unwrap();
    run.cli("run", &["train"]).unwrap();
    run.cli("run", &["generate"]).unwrap();
    let report: EvalReport = serde_json::from_str(&run.cli("run", &["evaluate"]).unwrap()).unwrap();
    assert_eq!(report.count, 6);
    assert!(report.watermark.is_none());
    for s in [report.bleu_1, report.bleu_4, report.rouge_l] {
        assert!((0.0..=1.0).contains(&s));
    }
    for f in [
        "qa.ckpt",
        "qa_log.jsonl",
        "vocab.json",
        "model.ckpt",
        "train_log.jsonl",
        "train_summary.json",
        "checkpoints/epoch-001.ckpt",
        "checkpoints/epoch-002.ckpt",
        "generated.jsonl",
        "eval.json",
        "effective_config.toml",
    ] {
        assert!(run.out("run").join(f).exists(), "{f} missing");
    }
    assert!(!run.out("run/.lock").exists());
    assert!(!run.out("run/train_summary.partial.json").exists());
    assert_eq!(read(&run.out("run/generated.jsonl")).lines().count(), 6);

    let report = run.cli("run", &["inspect-attention", "--id", "syn-test-000000"]).unwrap();
    assert!(report.contains("syn-test-000000"));
    let attn: serde_json::Value = serde_json::from_str(&read(&run.out("run/attention-syn-test-000000.json"))).unwrap();
    assert!((attn["a_soft_sum"].as_f64().unwrap() - 2.0).abs() < 1e-9);
    assert!(attn["generated"].is_string());
    let unknown = run.cli("run", &["inspect-attention", "--id", "nope"]).unwrap_err();
    assert!(unknown.to_string().contains("nope"));
}

#[test]
fn training_does_not_touch_inputs() {
    let run = Run::new();
    let before: Vec<String> = ["train.json", "dev.json", "test.json"]
        .iter()
        .map(|f| sha256_file(&run.out(f)).unwrap())
        .collect();
    run.cli("run", &["train-qa"]).unwrap();
    run.cli("run", &["train"]).unwrap();
    let after: Vec<String> = ["train.json", "dev.json", "test.json"]
        .iter()
        .map(|f| sha256_file(&run.out(f)).unwrap())
        .collect();
    assert_eq!(before, after);
}

#[test]
fn resume_reproduces_an_uninterrupted_run() {
    let run = Run::new();
    run.cli("run", &["train-qa"]).unwrap();
    let shared = ["--vocab", "run/vocab.json", "--qa-checkpoint", "run/qa.ckpt"];
    let with_shared = |out: &str, extra: &[&str]| {
        let vocab = run.out("run/vocab.json").display().to_string();
        let qa = run.out("run/qa.ckpt").display().to_string();
        let mut args = vec![shared[0], vocab.as_str(), shared[2], qa.as_str()];
        args.extend_from_slice(extra);
        run.cli(out, &args)
    };
    let full: serde_json::Value = serde_json::from_str(&with_shared("full", &["train"]).unwrap()).unwrap();

    with_shared("cut", &["train"]).unwrap();
    let cut = run.out("cut");
    fs::remove_file(cut.join("checkpoints/epoch-002.ckpt")).unwrap();
    fs::remove_file(cut.join("model.ckpt")).unwrap();
    fs::remove_file(cut.join("train_summary.json")).unwrap();
    let first_loss = &full["epoch_losses"][0];
    fs::write(cut.join("train_summary.partial.json"), format!("[{first_loss}]")).unwrap();
    let resumed: serde_json::Value =
        serde_json::from_str(&with_shared("cut", &["train", "--resume"]).unwrap()).unwrap();
    assert_eq!(resumed["checkpoint_sha256"], full["checkpoint_sha256"]);
    assert_eq!(resumed["epoch_losses"], full["epoch_losses"]);
    assert_eq!(resumed["optimizer_steps"], full["optimizer_steps"]);
}

#[test]
fn resume_rejects_changed_settings() {
    let run = Run::new();
    run.cli("run", &["--ablate-relevance", "train"]).unwrap();
    fs::remove_file(run.out("run/checkpoints/epoch-002.ckpt")).unwrap();
    let err = run
        .cli("run", &["--ablate-relevance", "--batch-size", "4", "train", "--resume"])
        .unwrap_err();
    assert!(err.to_string().contains("different settings"), "{err}");
}

#[test]
fn checkpoint_from_another_config_is_refused() {
    let run = Run::new();
    run.cli("run", &["--ablate-relevance", "train"]).unwrap();
    let err = run
        .cli("run", &["--ablate-relevance", "--profile", "base_like", "generate"])
        .unwrap_err();
    assert!(!err.to_string().is_empty());
    assert!(!run.out("run/generated.jsonl").exists());
}

#[test]
fn hard_only_runs_never_call_the_span_predictor() {
    let run = Run::new();
    let summary: serde_json::Value =
        serde_json::from_str(&run.cli("run", &["--alpha", "1", "train"]).unwrap()).unwrap();
    assert_eq!(summary["qa_invocations"], 0);
    assert!(!run.out("run/qa.ckpt").exists());

    let mixed: serde_json::Value = {
        run.cli("mixed", &["train-qa"]).unwrap();
        serde_json::from_str(&run.cli("mixed", &["--alpha", "0.3", "train"]).unwrap()).unwrap()
    };
    assert!(mixed["qa_invocations"].as_u64().unwrap() > 0);
}

#[test]
fn width_one_beam_file_equals_greedy_file() {
    let run = Run::new();
    run.cli("run", &["--ablate-relevance", "train"]).unwrap();
    let beam = run.out("beam.jsonl").display().to_string();
    let greedy = run.out("greedy.jsonl").display().to_string();
    run.cli("run", &["--ablate-relevance", "--beam-size", "1", "generate", "--output", &beam])
        .unwrap();
    run.cli("run", &["--ablate-relevance", "generate", "--greedy", "--output", &greedy])
        .unwrap();
    assert_eq!(read(Path::new(&beam)), read(Path::new(&greedy)));
}

#[test]
fn oracle_soft_outputs_are_marked_and_watermarked() {
    let run = Run::new();
    run.cli("run", &["train-qa"]).unwrap();
    run.cli("run", &["train"]).unwrap();
    run.cli("run", &["generate", "--oracle-soft"]).unwrap();
    assert!(read(&run.out("run/generated.jsonl"))
        .lines()
        .all(|l| l.contains("\"oracle_soft\":true")));
    let report: EvalReport = serde_json::from_str(&run.cli("run", &["evaluate"]).unwrap()).unwrap();
    assert_eq!(report.watermark.as_deref(), Some(ORACLE_WATERMARK));
}

#[test]
fn evaluation_rejects_mismatched_ids() {
    let run = Run::new();
    let generated = run.out("gen.jsonl");
    fs::write(&generated, "{\"id\":\"someone-else\",\"text\":\"who ?\"}\n").unwrap();
    let g = generated.display().to_string();
    assert!(run.cli("run", &["evaluate", "--generated", &g]).is_err());
}

#[test]
fn missing_inputs_fail_before_writing() {
    let run = Run::new();
    let err = run.cli("run", &["train"]).unwrap_err();
    assert!(err.to_string().contains("qa.ckpt"), "{err}");
    assert!(!run.out("run/train_log.jsonl").exists());
}

#[test]
fn concurrent_runs_on_one_directory_are_refused() {
    let run = Run::new();
    let dir = run.out("run");
    fs::create_dir_all(&dir).unwrap();
    let held = RunLock::acquire(&dir).unwrap();
    let err = run.cli("run", &["--ablate-relevance", "train"]).unwrap_err();
    assert!(err.to_string().contains("owned by another run"), "{err}");
    drop(held);
    run.cli("run", &["--ablate-relevance", "train"]).unwrap();
}

#[test]
fn sweep_rejects_bad_alpha_lists() {
    let run = Run::new();
    assert!(run.cli("sweep", &["alpha-sweep", "--alphas", "0.3"]).is_err());
    assert!(run.cli("sweep", &["alpha-sweep", "--alphas", "0.3,0.3"]).is_err());
    assert!(run.cli("sweep", &["alpha-sweep", "--alphas", "0.3,1.5"]).is_err());
}

#[test]
fn sweep_writes_one_row_per_alpha() {
    let run = Run::new();
    run.cli("sweep", &["alpha-sweep", "--alphas", "0,1"]).unwrap();
    let tsv = read(&run.out("sweep/sweep.tsv"));
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], "alpha\tbleu_4\trouge_l");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0.00\t") || lines[1].starts_with("0\t"), "{}", lines[1]);
    assert!(!run.out("sweep/INCOMPLETE").exists());
    assert!(run.out("sweep/alpha-0.00/model.ckpt").exists());
    assert!(run.out("sweep/alpha-1.00/model.ckpt").exists());
}
