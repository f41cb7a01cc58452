use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cli::RunConfig;
use crate::data::{
    assemble_source, build_vocab, context_tokens, detokenize, gen_synthetic_split, load_hotpot_with_report,
    save_hotpot, Example, SourceEncoding, Split, Vocabulary, END, START,
};
use crate::decoding::{generate_beam, generate_greedy, Hypothesis};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_corpus, EvalReport, GeneratedLine};
use crate::model::{Checkpoint, CheckpointHeader, JointInputs, JointQa, Seq2Seq, TrainExample, Trainer, FORMAT_VERSION};
use crate::numeric::{Adam, AdamConfig, Rng};
use crate::qa::{gold_span, load_external_spans, check_span_lengths, save_external_spans, QaExample, QaModel, QaTrainer};
use crate::relevance::{build_hard_attention, build_soft_attention, find_answer_spans, mix_attention, RelevanceKind, RelevanceVector};

pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";
pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "{} is owned by another run (delete {} if it is stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    write_file(path, (text + "\n").as_bytes())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn echo_config(cfg: &RunConfig) -> Result<()> {
    write_file(&cfg.output_dir.join(EFFECTIVE_CONFIG), cfg.to_toml().as_bytes())
}

pub fn load_split(path: &Path) -> Result<Vec<Example>> {
    let (examples, dropped) = load_hotpot_with_report(path)?;
    for d in &dropped {
        log::warn!("{}: dropped record {}: {}", path.display(), d.id, d.reason);
    }
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(examples)
}

/// Loads the configured vocabulary, or builds it from `train` and stores it
/// in the output directory.
pub fn resolve_vocab(cfg: &RunConfig, train: Option<&[Example]>) -> Result<Vocabulary> {
    let path = cfg.vocab_path();
    if path.exists() {
        return Vocabulary::load(&path);
    }
    if cfg.data.vocab.is_some() {
        return Err(Error::Config(format!("{} does not exist", path.display())));
    }
    let owned;
    let train = match train {
        Some(t) => t,
        None => {
            owned = load_split(&cfg.data.train)?;
            &owned
        }
    };
    let vocab = build_vocab(train, cfg.data.min_freq)?;
    vocab.save(&path)?;
    log::info!("vocabulary of {} tokens written to {}", vocab.len(), path.display());
    Ok(vocab)
}

/// An example with its encoder input, question ids and hard relevance.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub example: Example,
    pub source: SourceEncoding,
    pub question: Vec<u32>,
    pub hard: RelevanceVector,
}

pub fn prepare(examples: &[Example], vocab: &Vocabulary, cfg: &RunConfig) -> Result<Vec<Prepared>> {
    examples
        .iter()
        .map(|ex| {
            let source = assemble_source(ex, cfg.data.mode, vocab, cfg.data.max_source_len())?;
            let spans = find_answer_spans(source.context_ids(), source.answer_ids())?;
            let hard = build_hard_attention(&source, &spans, &cfg.relevance)?;
            let mut question = vocab.encode(&ex.question);
            question.truncate(cfg.beam.max_len);
            Ok(Prepared {
                example: ex.clone(),
                source,
                question,
                hard,
            })
        })
        .collect()
}

fn soft_vector(dist: &crate::qa::SpanDistribution, p: &Prepared, cfg: &RunConfig) -> Result<RelevanceVector> {
    let soft = build_soft_attention(dist, &p.source)?;
    Ok(if cfg.relevance.normalize_soft {
        RelevanceVector::new(soft.max_normalized().scores().to_vec(), RelevanceKind::Soft)
    } else {
        soft
    })
}

fn checkpoint_header(kind: &str, config: serde_json::Value, vocab: &Vocabulary) -> CheckpointHeader {
    CheckpointHeader {
        format_version: FORMAT_VERSION,
        kind: kind.into(),
        config,
        vocab_hash: vocab.hash(),
        rng_state: None,
        epoch: 0,
        step: 0,
        adam: None,
    }
}

fn expect_checkpoint(ckpt: &Checkpoint, kind: &str, vocab: &Vocabulary, path: &Path) -> Result<()> {
    if ckpt.header.kind != kind {
        return Err(Error::Checkpoint(format!(
            "{} holds a {} model, expected {kind}",
            path.display(),
            ckpt.header.kind
        )));
    }
    if ckpt.header.vocab_hash != vocab.hash() {
        return Err(Error::Checkpoint(format!(
            "{} was trained with a different vocabulary",
            path.display()
        )));
    }
    Ok(())
}

pub fn load_qa(cfg: &RunConfig, vocab: &Vocabulary, path: &Path) -> Result<QaModel> {
    let ckpt = Checkpoint::load(path)?;
    expect_checkpoint(&ckpt, "qa", vocab, path)?;
    let mut model = QaModel::init(cfg.qa.model(vocab.len(), cfg.seed))?;
    ckpt.restore(&mut model)?;
    Ok(model)
}

/// Generator built from the run config and filled from `path`; any shape
/// disagreement between the two is an error.
pub fn load_generator(cfg: &RunConfig, vocab: &Vocabulary, path: &Path) -> Result<Seq2Seq> {
    let ckpt = Checkpoint::load(path)?;
    expect_checkpoint(&ckpt, "generator", vocab, path)?;
    let mut model = Seq2Seq::init(cfg.model.resolve(vocab.len(), cfg.seed))?;
    ckpt.restore(&mut model)?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaSummary {
    pub examples: usize,
    /// Examples whose answer does not occur in the kept context.
    pub skipped: usize,
    pub epoch_losses: Vec<f64>,
    /// Fraction of training examples whose argmax start and end both hit
    /// the gold span.
    pub train_span_accuracy: f64,
    pub checkpoint_sha256: String,
}

/// Trains the span predictor on gold answer spans and writes `qa.ckpt`.
/// With `export_spans`, also writes its train-split span distributions in
/// the external span file format.
pub fn run_train_qa(cfg: &RunConfig, export_spans: Option<&Path>) -> Result<QaSummary> {
    cfg.validate()?;
    cfg.require_paths(&[&cfg.data.train])?;
    let _lock = RunLock::acquire(&cfg.output_dir)?;
    echo_config(cfg)?;
    let train = load_split(&cfg.data.train)?;
    let vocab = resolve_vocab(cfg, Some(&train))?;
    let prepared = prepare(&train, &vocab, cfg)?;

    let mut examples = Vec::new();
    for p in &prepared {
        if let Some(gold) = gold_span(p.source.context_ids(), p.source.answer_ids()) {
            examples.push(QaExample {
                id: p.example.id.clone(),
                question: vocab.encode(&p.example.question),
                context: p.source.context_ids().to_vec(),
                gold,
            });
        }
    }
    let skipped = prepared.len() - examples.len();
    if skipped > 0 {
        log::warn!("{skipped} examples have no answer span in their context and are skipped");
    }
    let schedule = cfg.qa.schedule(cfg.seed);
    let mut trainer = QaTrainer::new(QaModel::init(cfg.qa.model(vocab.len(), cfg.seed))?, &schedule);
    let losses = trainer.fit(&examples, &schedule)?;

    let mut log = String::new();
    for (i, l) in losses.iter().enumerate() {
        log += &serde_json::json!({"epoch": i + 1, "loss": l}).to_string();
        log.push('\n');
    }
    write_file(&cfg.output_dir.join("qa_log.jsonl"), log.as_bytes())?;

    let model = trainer.model;
    let mut hits = 0;
    for ex in &examples {
        let d = model.predict(&ex.question, &ex.context)?.dist;
        if d.argmax_start() == ex.gold.start && d.argmax_end() == ex.gold.end {
            hits += 1;
        }
    }
    let path = cfg.output_dir.join("qa.ckpt");
    let config = serde_json::to_value(model.config).expect("config serializes");
    Checkpoint::capture(checkpoint_header("qa", config, &vocab), &model, None).save(&path)?;

    if let Some(out) = export_spans {
        let mut spans = BTreeMap::new();
        for p in &prepared {
            let d = model.predict(&vocab.encode(&p.example.question), p.source.context_ids())?.dist;
            spans.insert(p.example.id.clone(), d);
        }
        save_external_spans(out, &vocab.hash(), &spans)?;
    }
    let summary = QaSummary {
        examples: examples.len(),
        skipped,
        epoch_losses: losses,
        train_span_accuracy: hits as f64 / examples.len() as f64,
        checkpoint_sha256: sha256_file(&path)?,
    };
    write_json(&cfg.output_dir.join("qa_summary.json"), &summary)?;
    Ok(summary)
}

enum SoftSide {
    Unused,
    Frozen(BTreeMap<String, RelevanceVector>),
    Joint(Box<QaModel>),
}

/// Soft relevance for every prepared example, from an external span file or
/// the trained span predictor. Returns the predictor's invocation count.
fn soft_side(cfg: &RunConfig, vocab: &Vocabulary, prepared: &[Prepared]) -> Result<(SoftSide, usize)> {
    if !cfg.uses_soft() {
        return Ok((SoftSide::Unused, 0));
    }
    if let Some(path) = &cfg.qa.external_spans {
        let (header, spans) = load_external_spans(path)?;
        if header.tokenizer_hash != vocab.hash() {
            return Err(Error::Format(format!(
                "{}: tokenizer hash {} does not match the vocabulary",
                path.display(),
                header.tokenizer_hash
            )));
        }
        check_span_lengths(&spans, prepared.iter().map(|p| (p.example.id.as_str(), &p.source)))?;
        let mut out = BTreeMap::new();
        for p in prepared {
            let d = spans.get(&p.example.id).ok_or_else(|| Error::SpanRecord {
                id: p.example.id.clone(),
                reason: "missing from span file".into(),
            })?;
            out.insert(p.example.id.clone(), soft_vector(d, p, cfg)?);
        }
        return Ok((SoftSide::Frozen(out), 0));
    }
    let qa = load_qa(cfg, vocab, &cfg.qa_checkpoint())?;
    if cfg.qa.joint {
        return Ok((SoftSide::Joint(Box::new(qa)), 0));
    }
    let mut out = BTreeMap::new();
    for p in prepared {
        let d = qa.predict(&p.question, p.source.context_ids())?.dist;
        out.insert(p.example.id.clone(), soft_vector(&d, p, cfg)?);
    }
    Ok((SoftSide::Frozen(out), qa.invocations()))
}

fn training_examples(cfg: &RunConfig, prepared: &[Prepared], soft: &SoftSide) -> Result<Vec<TrainExample>> {
    prepared
        .iter()
        .map(|p| {
            let n = p.source.len();
            let relevance = if cfg.ablate_relevance {
                RelevanceVector::zeros(n)
            } else {
                match soft {
                    SoftSide::Frozen(map) => mix_attention(&p.hard, &map[&p.example.id], cfg.relevance.alpha)?,
                    _ => p.hard.clone(),
                }
            };
            let mut target = Vec::with_capacity(p.question.len() + 2);
            target.push(START);
            target.extend(&p.question);
            target.push(END);
            Ok(TrainExample {
                id: p.example.id.clone(),
                source: p.source.clone(),
                target,
                relevance,
                joint: matches!(soft, SoftSide::Joint(_)).then(|| JointInputs {
                    question: p.question.clone(),
                    hard: p.hard.clone(),
                }),
            })
        })
        .collect()
}

/// Settings that determine the trained weights; paths are left out so
/// identical runs in different directories produce identical files.
fn training_fingerprint(cfg: &RunConfig, vocab_size: usize) -> serde_json::Value {
    serde_json::json!({
        "model": cfg.model.resolve(vocab_size, cfg.seed),
        "schedule": cfg.train,
        "relevance": cfg.relevance,
        "ablate_relevance": cfg.ablate_relevance,
        "seed": cfg.seed,
        "mode": cfg.data.mode,
        "max_source_len": cfg.data.max_source_len(),
        "qa_joint": cfg.qa.joint,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub optimizer_steps: u64,
    pub epoch_losses: Vec<f64>,
    /// Forward passes of the span predictor made by this run.
    pub qa_invocations: usize,
    pub checkpoint_sha256: String,
}

fn epoch_checkpoint(dir: &Path, epoch: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("epoch-{epoch:03}.ckpt"))
}

fn latest_epoch(dir: &Path, epochs: usize) -> Option<usize> {
    (1..=epochs).rev().find(|&e| epoch_checkpoint(dir, e).exists())
}

/// Trains the generator, logging every batch to `train_log.jsonl` and
/// checkpointing after every epoch. With `resume`, continues from the last
/// epoch checkpoint in the output directory.
pub fn run_train(cfg: &RunConfig, resume: bool) -> Result<TrainSummary> {
    cfg.validate()?;
    if cfg.qa.joint && cfg.relevance.normalize_soft {
        return Err(Error::Config("normalize_soft is not supported with joint QA training".into()));
    }
    let mut required: Vec<&Path> = vec![&cfg.data.train];
    let qa_ckpt = cfg.qa_checkpoint();
    if cfg.uses_soft() {
        match &cfg.qa.external_spans {
            Some(p) => required.push(p),
            None => required.push(&qa_ckpt),
        }
    }
    cfg.require_paths(&required)?;

    let _lock = RunLock::acquire(&cfg.output_dir)?;
    echo_config(cfg)?;
    let train = load_split(&cfg.data.train)?;
    let vocab = resolve_vocab(cfg, Some(&train))?;
    let prepared = prepare(&train, &vocab, cfg)?;
    let (soft, mut qa_invocations) = soft_side(cfg, &vocab, &prepared)?;
    let examples = training_examples(cfg, &prepared, &soft)?;

    let schedule = cfg.train.with_seed(cfg.seed);
    let model_cfg = cfg.model.resolve(vocab.len(), cfg.seed);
    let fingerprint = training_fingerprint(cfg, vocab.len());
    let mut trainer = Trainer::new(Seq2Seq::init(model_cfg)?, &schedule);
    if let SoftSide::Joint(qa) = soft {
        trainer.joint = Some(JointQa {
            model: *qa,
            adam: Adam::new(AdamConfig {
                lr: cfg.qa.lr,
                ..AdamConfig::default()
            }),
            alpha: cfg.relevance.alpha,
        });
    }

    let dir = cfg.output_dir.clone();
    let mut start = 0;
    let mut epoch_losses = Vec::new();
    if resume {
        if let Some(e) = latest_epoch(&dir, schedule.epochs) {
            let path = epoch_checkpoint(&dir, e);
            let ckpt = Checkpoint::load(&path)?;
            expect_checkpoint(&ckpt, "generator", &vocab, &path)?;
            if ckpt.header.config != fingerprint {
                return Err(Error::Checkpoint(format!(
                    "{} was written by a run with different settings",
                    path.display()
                )));
            }
            ckpt.restore(&mut trainer.model)?;
            ckpt.restore_adam(&trainer.model, &mut trainer.adam)?;
            if let Some(state) = ckpt.header.rng_state {
                trainer.set_dropout_rng(Rng::from_state(state));
            }
            if let Some(j) = trainer.joint.as_mut() {
                let qa_path = path.with_extension("qa.ckpt");
                let qa = Checkpoint::load(&qa_path)?;
                qa.restore(&mut j.model)?;
                qa.restore_adam(&j.model, &mut j.adam)?;
            }
            trainer.steps = ckpt.header.step;
            start = e;
            epoch_losses = read_epoch_losses(&dir.join("train_summary.partial.json"))?;
            epoch_losses.truncate(e);
            log::info!("resuming after epoch {e}");
        }
    }

    let log_path = dir.join("train_log.jsonl");
    let mut log_file = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(start > 0)
        .truncate(start == 0)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;

    let batch_size = schedule.batch_size;
    for epoch in start..schedule.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        Rng::new(cfg.seed).split(100 + epoch as u64).shuffle(&mut order);
        let (mut sum, mut n) = (0.0, 0usize);
        for (b, chunk) in order.chunks(batch_size).enumerate() {
            let batch: Vec<TrainExample> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let loss = trainer.train_step(&batch)?;
            sum += loss * batch.len() as f64;
            n += batch.len();
            let line = serde_json::json!({"epoch": epoch + 1, "batch": b + 1, "step": trainer.steps, "loss": loss});
            writeln!(log_file, "{line}").map_err(|e| Error::io(&log_path, e))?;
        }
        trainer.flush()?;
        let mean = sum / n as f64;
        epoch_losses.push(mean);
        log::info!("epoch {} loss {mean:.5}", epoch + 1);

        let mut header = checkpoint_header("generator", fingerprint.clone(), &vocab);
        header.rng_state = Some(trainer.dropout_rng().state());
        header.epoch = epoch + 1;
        header.step = trainer.steps;
        let path = epoch_checkpoint(&dir, epoch + 1);
        write_file(
            &path,
            &Checkpoint::capture(header, &trainer.model, Some(&trainer.adam)).to_bytes()?,
        )?;
        if let Some(j) = &trainer.joint {
            let qa_header = checkpoint_header("qa", serde_json::to_value(j.model.config).expect("serializes"), &vocab);
            Checkpoint::capture(qa_header, &j.model, Some(&j.adam)).save(&path.with_extension("qa.ckpt"))?;
        }
        write_json(&dir.join("train_summary.partial.json"), &epoch_losses)?;
    }

    let mut header = checkpoint_header("generator", fingerprint, &vocab);
    header.epoch = schedule.epochs;
    header.step = trainer.steps;
    let final_path = dir.join("model.ckpt");
    Checkpoint::capture(header, &trainer.model, None).save(&final_path)?;
    if let Some(j) = &trainer.joint {
        qa_invocations += j.model.invocations();
        let qa_header = checkpoint_header("qa", serde_json::to_value(j.model.config).expect("serializes"), &vocab);
        Checkpoint::capture(qa_header, &j.model, None).save(&dir.join("qa.joint.ckpt"))?;
    }
    let summary = TrainSummary {
        epochs: schedule.epochs,
        optimizer_steps: trainer.steps,
        epoch_losses,
        qa_invocations,
        checkpoint_sha256: sha256_file(&final_path)?,
    };
    write_json(&dir.join("train_summary.json"), &summary)?;
    let _ = fs::remove_file(dir.join("train_summary.partial.json"));
    Ok(summary)
}

fn read_epoch_losses(path: &Path) -> Result<Vec<f64>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

#[derive(Debug, Clone, Default)]
pub struct GenerateOptions {
    /// Defaults to `model.ckpt` in the output directory.
    pub checkpoint: Option<PathBuf>,
    /// Defaults to `generated.jsonl` in the output directory.
    pub output: Option<PathBuf>,
    /// Examples to decode; defaults to the configured test split.
    pub input: Option<PathBuf>,
    pub greedy: bool,
    /// Decode with soft relevance computed from gold questions. Output lines
    /// are marked and reports built from them are watermarked.
    pub oracle_soft: bool,
}

/// Decodes one question; the relevance is hard-only unless relevance is
/// ablated.
pub fn decode_one(model: &Seq2Seq, cfg: &RunConfig, source: &[u32], bias: &RelevanceVector, greedy: bool) -> Result<Hypothesis> {
    if greedy {
        generate_greedy(model, source, bias, cfg.beam.max_len, cfg.beam.min_len)
    } else {
        generate_beam(model, source, bias, &cfg.beam)
    }
}

/// Relevance used when decoding `p`.
fn inference_relevance(cfg: &RunConfig, p: &Prepared, oracle: Option<&QaModel>) -> Result<RelevanceVector> {
    if cfg.ablate_relevance {
        return Ok(RelevanceVector::zeros(p.source.len()));
    }
    match oracle {
        Some(qa) if cfg.relevance.alpha < 1.0 => {
            let d = qa.predict(&p.question, p.source.context_ids())?.dist;
            mix_attention(&p.hard, &soft_vector(&d, p, cfg)?, cfg.relevance.alpha)
        }
        _ => Ok(p.hard.clone()),
    }
}

/// Writes one `{id, text}` line per input example and returns the path.
pub fn run_generate(cfg: &RunConfig, opts: &GenerateOptions) -> Result<PathBuf> {
    cfg.validate()?;
    let ckpt = opts.checkpoint.clone().unwrap_or_else(|| cfg.output_dir.join("model.ckpt"));
    let input = opts.input.clone().unwrap_or_else(|| cfg.data.test.clone());
    let vocab_path = cfg.vocab_path();
    let qa_ckpt = cfg.qa_checkpoint();
    let mut required: Vec<&Path> = vec![&ckpt, &input, &vocab_path];
    if opts.oracle_soft {
        required.push(&qa_ckpt);
    }
    cfg.require_paths(&required)?;
    echo_config(cfg)?;

    let vocab = Vocabulary::load(&vocab_path)?;
    let model = load_generator(cfg, &vocab, &ckpt)?;
    let oracle = if opts.oracle_soft {
        log::warn!("decoding with gold-question soft relevance; outputs are diagnostic only");
        Some(load_qa(cfg, &vocab, &qa_ckpt)?)
    } else {
        None
    };
    let prepared = prepare(&load_split(&input)?, &vocab, cfg)?;
    let mut out = String::new();
    for p in &prepared {
        let bias = inference_relevance(cfg, p, oracle.as_ref())?;
        let hyp = decode_one(&model, cfg, &p.source.ids, &bias, opts.greedy)?;
        let line = GeneratedLine {
            id: p.example.id.clone(),
            text: detokenize(&vocab.decode(hyp.content())),
            oracle_soft: opts.oracle_soft,
        };
        out += &serde_json::to_string(&line).expect("line serializes");
        out.push('\n');
    }
    let path = opts.output.clone().unwrap_or_else(|| cfg.output_dir.join("generated.jsonl"));
    write_file(&path, out.as_bytes())?;
    log::info!("{} questions written to {}", prepared.len(), path.display());
    Ok(path)
}

/// Scores `generated` against `reference` (the test split by default) and
/// writes the report.
pub fn run_eval(cfg: &RunConfig, generated: &Path, reference: Option<&Path>, output: Option<&Path>) -> Result<EvalReport> {
    let reference = reference.unwrap_or(&cfg.data.test);
    cfg.require_paths(&[generated, reference])?;
    let report = evaluate_corpus(generated, reference, &cfg.metrics)?;
    let path = output.map_or_else(|| cfg.output_dir.join("eval.json"), Path::to_path_buf);
    write_file(&path, report.to_json().as_bytes())?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub bleu_4: f64,
    pub rouge_l: f64,
}

fn alpha_dir(alpha: f64) -> String {
    format!("alpha-{alpha:.2}")
}

/// Trains, decodes and scores one model per α with shared data, vocabulary,
/// span predictor and seed. Rows go to `sweep.tsv` and `sweep.csv` as each
/// run finishes; a failure leaves them in place next to an `INCOMPLETE`
/// marker.
pub fn run_alpha_sweep(cfg: &RunConfig, alphas: &[f64]) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if alphas.len() < 2 {
        return Err(Error::Config("an alpha sweep needs at least two values".into()));
    }
    for (i, a) in alphas.iter().enumerate() {
        if !(0.0..=1.0).contains(a) {
            return Err(Error::AlphaOutOfRange(*a));
        }
        if alphas[..i].iter().any(|b| alpha_dir(*b) == alpha_dir(*a)) {
            return Err(Error::Config(format!("duplicate alpha {a}")));
        }
    }
    cfg.require_paths(&[&cfg.data.train, &cfg.data.test])?;
    let dir = cfg.output_dir.clone();
    let mut shared = cfg.clone();
    shared.data.vocab = Some(cfg.vocab_path());
    let needs_qa = !cfg.ablate_relevance && cfg.qa.external_spans.is_none() && alphas.iter().any(|&a| a < 1.0);
    if needs_qa && !cfg.qa_checkpoint().exists() {
        run_train_qa(cfg, None)?;
    }
    resolve_vocab(cfg, None)?;
    shared.qa.checkpoint = Some(cfg.qa_checkpoint());

    let _lock = RunLock::acquire(&dir)?;
    echo_config(cfg)?;
    let marker = dir.join(INCOMPLETE_MARKER);
    write_file(&marker, b"sweep in progress\n")?;
    let tsv = dir.join("sweep.tsv");
    let csv = dir.join("sweep.csv");
    write_file(&tsv, b"alpha\tbleu_4\trouge_l\n")?;
    write_file(&csv, b"alpha,bleu_1,bleu_2,bleu_3,bleu_4,rouge_l\n")?;

    let mut rows = Vec::new();
    for &alpha in alphas {
        let mut sub = shared.clone();
        sub.relevance.alpha = alpha;
        sub.output_dir = dir.join(alpha_dir(alpha));
        let row = (|| {
            run_train(&sub, false)?;
            let generated = run_generate(&sub, &GenerateOptions::default())?;
            let r = run_eval(&sub, &generated, None, None)?;
            Ok::<_, Error>(SweepRow {
                alpha,
                bleu_1: r.bleu_1,
                bleu_2: r.bleu_2,
                bleu_3: r.bleu_3,
                bleu_4: r.bleu_4,
                rouge_l: r.rouge_l,
            })
        })();
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let done: Vec<String> = rows.iter().map(|r: &SweepRow| format!("{:.2}", r.alpha)).collect();
                let note = format!("failed at alpha {alpha}: {e}\ncompleted: {}\n", done.join(" "));
                write_file(&marker, note.as_bytes())?;
                return Err(e);
            }
        };
        append(&tsv, &format!("{:.2}\t{:.6}\t{:.6}\n", row.alpha, row.bleu_4, row.rouge_l))?;
        append(
            &csv,
            &format!(
                "{:.2},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                row.alpha, row.bleu_1, row.bleu_2, row.bleu_3, row.bleu_4, row.rouge_l
            ),
        )?;
        log::info!("alpha {alpha:.2}: BLEU-4 {:.4} ROUGE-L {:.4}", row.bleu_4, row.rouge_l);
        rows.push(row);
    }
    fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    Ok(rows)
}

fn append(path: &Path, text: &str) -> Result<()> {
    fs::OpenOptions::new()
        .append(true)
        .open(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Per-token relevance and attention for one example, ready for a heatmap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectionReport {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub tokens: Vec<String>,
    /// `context`, `sep` or `answer` per token.
    pub segment: Vec<String>,
    /// Token lies in a gold supporting sentence.
    pub supporting: Vec<bool>,
    pub a_hard: Vec<f64>,
    pub a_soft: Vec<f64>,
    pub a_soft_label: String,
    pub a_soft_sum: f64,
    pub mixed: Vec<f64>,
    pub alpha: f64,
    pub soft_argmax: usize,
    pub soft_argmax_supporting: bool,
    /// Question decoded with hard relevance, when a generator was given.
    pub generated: Option<String>,
    /// Decoder cross-attention per layer, averaged over heads and generated
    /// positions.
    pub cross_attention: Vec<Vec<f64>>,
}

pub const SOFT_LABEL: &str = "diagnostic: span predictor run on the gold question";

/// Builds the report for one example. The soft side always comes from the
/// gold question, which is only available for analysis.
pub fn inspect_example(
    example: &Example,
    vocab: &Vocabulary,
    cfg: &RunConfig,
    qa: &QaModel,
    generator: Option<&Seq2Seq>,
) -> Result<InspectionReport> {
    let p = prepare(std::slice::from_ref(example), vocab, cfg)?.remove(0);
    let dist = qa.predict(&p.question, p.source.context_ids())?.dist;
    let soft = build_soft_attention(&dist, &p.source)?;
    let mixed = mix_attention(&p.hard, &soft, cfg.relevance.alpha)?;
    let origins = context_tokens(example, cfg.data.mode)?;
    let n = p.source.len();
    let mut supporting = vec![false; n];
    let mut segment = vec!["answer".to_string(); n];
    for i in p.source.context.clone() {
        segment[i] = "context".into();
        let o = origins[i].1;
        supporting[i] = o.sentence.is_some_and(|s| example.is_supporting(o.paragraph, s));
    }
    segment[p.source.context.end] = "sep".into();
    let argmax = soft.argmax().unwrap_or(0);

    let (generated, cross_attention) = match generator {
        Some(model) => {
            let hyp = decode_one(model, cfg, &p.source.ids, &p.hard, false)?;
            let mut target_in = vec![START];
            target_in.extend(hyp.content());
            let attn = model.mean_cross_attention(&p.source.ids, &target_in, &p.hard)?;
            (Some(detokenize(&vocab.decode(hyp.content()))), attn)
        }
        None => (None, Vec::new()),
    };
    Ok(InspectionReport {
        id: example.id.clone(),
        question: example.question.clone(),
        answer: example.answer.clone(),
        tokens: p.source.ids.iter().map(|&t| vocab.token(t).to_string()).collect(),
        segment,
        a_hard: p.hard.scores().to_vec(),
        a_soft_sum: soft.sum(),
        a_soft: soft.scores().to_vec(),
        a_soft_label: SOFT_LABEL.into(),
        mixed: mixed.scores().to_vec(),
        alpha: cfg.relevance.alpha,
        soft_argmax: argmax,
        soft_argmax_supporting: supporting[argmax],
        supporting,
        generated,
        cross_attention,
    })
}

/// Looks `id` up in the test, dev and train splits and writes its
/// inspection report.
pub fn run_inspect_attention(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    id: &str,
    output: Option<&Path>,
) -> Result<InspectionReport> {
    cfg.validate()?;
    let ckpt = checkpoint.map_or_else(|| cfg.output_dir.join("model.ckpt"), Path::to_path_buf);
    let vocab_path = cfg.vocab_path();
    let qa_ckpt = cfg.qa_checkpoint();
    cfg.require_paths(&[&ckpt, &vocab_path, &qa_ckpt, &cfg.data.test])?;
    let vocab = Vocabulary::load(&vocab_path)?;
    let model = load_generator(cfg, &vocab, &ckpt)?;
    let qa = load_qa(cfg, &vocab, &qa_ckpt)?;

    let mut splits = vec![cfg.data.test.clone()];
    splits.extend(cfg.data.dev.clone());
    splits.push(cfg.data.train.clone());
    let mut found = None;
    for path in splits.iter().filter(|p| p.exists()) {
        if let Some(ex) = load_split(path)?.into_iter().find(|e| e.id == id) {
            found = Some(ex);
            break;
        }
    }
    let example = found.ok_or_else(|| Error::UnknownExample(id.to_string()))?;
    let report = inspect_example(&example, &vocab, cfg, &qa, Some(&model))?;
    let path = output.map_or_else(
        || cfg.output_dir.join(format!("attention-{id}.json")),
        Path::to_path_buf,
    );
    write_json(&path, &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl Default for SyntheticSizes {
    fn default() -> Self {
        Self {
            train: 2000,
            dev: 200,
            test: 500,
        }
    }
}

/// Writes `train.json`, `dev.json` and `test.json` into `dir`, plus a
/// `run.toml` pointing at them. Questions in this corpus are shorter than the
/// default minimum decode length, so the written config sets it to 0.
pub fn run_make_synthetic(dir: &Path, sizes: SyntheticSizes, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut cfg = RunConfig {
        seed,
        output_dir: dir.join("run"),
        ..RunConfig::default()
    };
    for (split, n) in [(Split::Train, sizes.train), (Split::Dev, sizes.dev), (Split::Test, sizes.test)] {
        let path = dir.join(format!("{}.json", split.name()));
        save_hotpot(&path, &gen_synthetic_split(n, seed, split))?;
        match split {
            Split::Train => cfg.data.train = path,
            Split::Dev => cfg.data.dev = Some(path),
            Split::Test => cfg.data.test = path,
        }
    }
    cfg.beam.min_len = 0;
    let path = dir.join("run.toml");
    write_file(&path, cfg.to_toml().as_bytes())?;
    Ok(path)
}
