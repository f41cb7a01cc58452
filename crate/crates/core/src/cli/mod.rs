//! Command-line surface: a TOML run config, flag overrides, and one
//! function per subcommand.
//!
//! Precedence is flags > `--set` > config file > defaults. The output root
//! may also come from `MHQG_OUTPUT_DIR`.

mod config;
mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{parse_assignment, DataConfig, ModelSection, Profile, QaSection, RunConfig, Schedule};
pub use run::{
    decode_one, inspect_example, load_generator, load_qa, load_split, prepare, resolve_vocab, run_alpha_sweep,
    run_eval, run_generate, run_inspect_attention, run_make_synthetic, run_train, run_train_qa, sha256_file,
    GenerateOptions, InspectionReport, Prepared, QaSummary, RunLock, SweepRow, SyntheticSizes, TrainSummary,
    EFFECTIVE_CONFIG, INCOMPLETE_MARKER, SOFT_LABEL,
};

use crate::error::{Error, Result};

pub const OUTPUT_DIR_ENV: &str = "MHQG_OUTPUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "mhqg", version, about = "Relevance-biased multi-hop question generation")]
pub struct Cli {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Run-config flags, accepted before or after the subcommand.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// TOML run config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Any config field as dotted.key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[arg(long, global = true, env = OUTPUT_DIR_ENV)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub ablate_relevance: bool,

    #[arg(long, global = true)]
    pub train_data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dev_data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub test_data: Option<PathBuf>,
    /// supporting_facts or full_document.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    #[arg(long, global = true)]
    pub max_source_len: Option<usize>,
    #[arg(long, global = true)]
    pub min_freq: Option<usize>,
    #[arg(long, global = true)]
    pub vocab: Option<PathBuf>,

    /// tiny or base_like.
    #[arg(long, global = true)]
    pub profile: Option<String>,
    #[arg(long, global = true)]
    pub dropout: Option<f64>,

    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub accumulation: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,

    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub p_y: Option<f64>,
    #[arg(long, global = true)]
    pub p_n: Option<f64>,

    #[arg(long, global = true)]
    pub beam_size: Option<usize>,
    #[arg(long, global = true)]
    pub max_len: Option<usize>,
    #[arg(long, global = true)]
    pub min_len: Option<usize>,
    #[arg(long, global = true)]
    pub length_penalty: Option<f64>,

    #[arg(long, global = true)]
    pub qa_epochs: Option<usize>,
    #[arg(long, global = true)]
    pub qa_lr: Option<f64>,
    #[arg(long, global = true)]
    pub qa_checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    pub external_spans: Option<PathBuf>,
    #[arg(long, global = true)]
    pub joint_qa: bool,

    #[arg(long, global = true)]
    pub rouge_beta: Option<f64>,
}

fn path_value(p: &std::path::Path) -> toml::Value {
    toml::Value::String(p.to_string_lossy().into_owned())
}

impl ConfigArgs {
    /// Overrides in application order: `--set` first, then named flags.
    pub fn overrides(&self) -> Result<Vec<(String, toml::Value)>> {
        let mut out = self
            .set
            .iter()
            .map(|s| parse_assignment(s))
            .collect::<Result<Vec<_>>>()?;
        let mut put = |key: &str, v: toml::Value| out.push((key.to_string(), v));
        let int = |v: usize| toml::Value::Integer(v as i64);
        let paths = [
            ("output_dir", &self.output_dir),
            ("data.train", &self.train_data),
            ("data.dev", &self.dev_data),
            ("data.test", &self.test_data),
            ("data.vocab", &self.vocab),
            ("qa.checkpoint", &self.qa_checkpoint),
            ("qa.external_spans", &self.external_spans),
        ];
        for (k, v) in paths {
            if let Some(p) = v {
                put(k, path_value(p));
            }
        }
        if let Some(s) = self.seed {
            put("seed", toml::Value::Integer(s as i64));
        }
        let sizes = [
            ("data.max_source_len", self.max_source_len),
            ("data.min_freq", self.min_freq),
            ("train.epochs", self.epochs),
            ("train.batch_size", self.batch_size),
            ("train.accumulation", self.accumulation),
            ("beam.beam_size", self.beam_size),
            ("beam.max_len", self.max_len),
            ("beam.min_len", self.min_len),
            ("qa.epochs", self.qa_epochs),
        ];
        for (k, v) in sizes {
            if let Some(v) = v {
                put(k, int(v));
            }
        }
        let reals = [
            ("model.dropout", self.dropout),
            ("train.lr", self.lr),
            ("relevance.alpha", self.alpha),
            ("relevance.p_y", self.p_y),
            ("relevance.p_n", self.p_n),
            ("beam.length_penalty", self.length_penalty),
            ("qa.lr", self.qa_lr),
            ("metrics.rouge_beta", self.rouge_beta),
        ];
        for (k, v) in reals {
            if let Some(v) = v {
                put(k, toml::Value::Float(v));
            }
        }
        if let Some(m) = &self.mode {
            put("data.mode", toml::Value::String(m.replace('-', "_")));
        }
        if let Some(p) = &self.profile {
            put("model.profile", toml::Value::String(p.replace('-', "_")));
        }
        if self.ablate_relevance {
            put("ablate_relevance", toml::Value::Boolean(true));
        }
        if self.joint_qa {
            put("qa.joint", toml::Value::Boolean(true));
        }
        Ok(out)
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        RunConfig::layered(self.config.as_deref(), &self.overrides()?)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the generator.
    Train {
        /// Continue from the newest epoch checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Train the span predictor that supplies soft relevance.
    TrainQa {
        /// Also write train-split span distributions to this file.
        #[arg(long)]
        export_spans: Option<PathBuf>,
    },
    /// Decode questions for the test split.
    Generate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Examples to decode instead of the test split.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        greedy: bool,
        /// Diagnostic: relevance from the gold question. Outputs are marked.
        #[arg(long)]
        oracle_soft: bool,
    },
    /// Score generated questions against references.
    Evaluate {
        /// Defaults to generated.jsonl in the output directory.
        #[arg(long)]
        generated: Option<PathBuf>,
        /// Defaults to the test split.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// One model per alpha; writes sweep.tsv and sweep.csv.
    AlphaSweep {
        #[arg(long, value_delimiter = ',', default_value = "0,0.3,0.5,0.7,1.0")]
        alphas: Vec<f64>,
    },
    /// Relevance vectors and cross-attention for one example.
    InspectAttention {
        #[arg(long)]
        id: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write a synthetic two-hop corpus and a matching run.toml.
    MakeSynthetic {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 2000)]
        train_size: usize,
        #[arg(long, default_value_t = 200)]
        dev_size: usize,
        #[arg(long, default_value_t = 500)]
        test_size: usize,
    },
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("summary serializes")
}

/// Runs one invocation and returns what should go to stdout.
pub fn run_cli<I, T>(args: I) -> Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    execute(&cli)
}

pub fn execute(cli: &Cli) -> Result<String> {
    if let Command::MakeSynthetic {
        dir,
        train_size,
        dev_size,
        test_size,
    } = &cli.command
    {
        let sizes = SyntheticSizes {
            train: *train_size,
            dev: *dev_size,
            test: *test_size,
        };
        let path = run_make_synthetic(dir, sizes, cli.config.seed.unwrap_or(0))?;
        return Ok(path.display().to_string());
    }
    let cfg = cli.config.resolve()?;
    match &cli.command {
        Command::Train { resume } => Ok(json(&run_train(&cfg, *resume)?)),
        Command::TrainQa { export_spans } => Ok(json(&run_train_qa(&cfg, export_spans.as_deref())?)),
        Command::Generate {
            checkpoint,
            output,
            input,
            greedy,
            oracle_soft,
        } => {
            let opts = GenerateOptions {
                checkpoint: checkpoint.clone(),
                output: output.clone(),
                input: input.clone(),
                greedy: *greedy,
                oracle_soft: *oracle_soft,
            };
            Ok(run_generate(&cfg, &opts)?.display().to_string())
        }
        Command::Evaluate {
            generated,
            reference,
            output,
        } => {
            let generated = generated.clone().unwrap_or_else(|| cfg.output_dir.join("generated.jsonl"));
            Ok(run_eval(&cfg, &generated, reference.as_deref(), output.as_deref())?.to_json())
        }
        Command::AlphaSweep { alphas } => Ok(json(&run_alpha_sweep(&cfg, alphas)?)),
        Command::InspectAttention { id, checkpoint, output } => {
            let r = run_inspect_attention(&cfg, checkpoint.as_deref(), id, output.as_deref())?;
            Ok(format!(
                "{}: soft argmax at token {} ({:?}), supporting: {}",
                r.id, r.soft_argmax, r.tokens[r.soft_argmax], r.soft_argmax_supporting
            ))
        }
        Command::MakeSynthetic { .. } => unreachable!("handled above"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_set_and_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        std::fs::write(&file, "[relevance]\nalpha = 0.7\n[beam]\nbeam_size = 2\n").unwrap();
        let cli = Cli::try_parse_from([
            "mhqg",
            "train",
            "--config",
            file.to_str().unwrap(),
            "--set",
            "relevance.alpha=0.5",
            "--set",
            "beam.min_len=3",
            "--alpha",
            "0.1",
            "--mode",
            "full-document",
            "--output-dir",
            "out/x",
        ])
        .unwrap();
        let cfg = cli.config.resolve().unwrap();
        assert_eq!(cfg.relevance.alpha, 0.1);
        assert_eq!(cfg.beam.min_len, 3);
        assert_eq!(cfg.beam.beam_size, 2);
        assert_eq!(cfg.data.mode, crate::data::ContextMode::FullDocument);
        assert_eq!(cfg.output_dir, PathBuf::from("out/x"));
    }

    #[test]
    fn bad_invocations_fail() {
        assert!(run_cli(["mhqg", "alpha-sweep", "--alphas", "0.3,0.3"]).is_err());
        assert!(run_cli(["mhqg", "fly"]).is_err());
        assert!(run_cli(["mhqg", "train", "--alpha", "2"]).is_err());
    }
}
