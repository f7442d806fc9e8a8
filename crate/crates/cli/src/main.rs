//! `dolphin`: tokenizer, sampling, data pipeline, hotword biasing, decoding
//! and scoring from the command line. Machine output is one JSON object per
//! line on stdout; diagnostics go to stderr.

mod commands;
mod config;
mod demo;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use config::Config;

#[derive(Parser, Debug)]
#[command(name = "dolphin", version, about = "Multi-dialect ASR toolkit: tokenize, sample, shard, bias, decode, score")]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Force JSON output where a human format exists.
    #[arg(long, global = true)]
    json: bool,
    /// TOML settings file.
    #[arg(long, global = true, env = "DOLPHIN_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build, apply and invert the hybrid tokenizer.
    #[command(subcommand)]
    Tok(TokCmd),
    /// Temperature-based dataset sampling.
    #[command(subcommand)]
    Sample(SampleCmd),
    /// Manifest validation, sharding and loading.
    #[command(subcommand)]
    Pipe(PipeCmd),
    /// Hotword filtering, prompts and context fusion.
    #[command(subcommand)]
    Bias(BiasCmd),
    /// CTC beam search and n-best rescoring.
    #[command(subcommand)]
    Decode(DecodeCmd),
    /// Error rates.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// End-to-end run on synthetic data.
    Demo(DemoArgs),
}

#[derive(Subcommand, Debug)]
pub enum TokCmd {
    /// Learn a vocabulary from a text corpus (one utterance per line).
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = dolphin_core::tokenizer::DEFAULT_TARGET_VOCAB)]
        vocab_size: usize,
        #[arg(long, default_value_t = dolphin_core::tokenizer::DEFAULT_RESERVED_DIALECTS)]
        reserved: usize,
        #[arg(long)]
        out: PathBuf,
    },
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        text: String,
    },
    Decode {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated token ids.
        #[arg(long)]
        ids: String,
    },
}

#[derive(Subcommand, Debug)]
pub enum SampleCmd {
    /// Sampling distribution over datasets.
    Plan {
        /// One dataset per `*.jsonl` manifest in this directory.
        #[arg(long, conflicts_with = "sizes")]
        manifest_dir: Option<PathBuf>,
        /// Explicit sizes, `name=size,...`.
        #[arg(long)]
        sizes: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Weight by hours instead of utterance count.
        #[arg(long)]
        hours: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit `(dataset, item)` draws from a plan.
    Draw {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        length: usize,
        /// Items per dataset, comma-separated; defaults to the plan sizes.
        #[arg(long)]
        counts: Option<String>,
    },
}

#[derive(Subcommand, Debug)]
pub enum PipeCmd {
    Validate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        max_dur: Option<f64>,
        /// Write accepted records here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Shard {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        shard_size: Option<usize>,
        /// Group records into this many duration buckets.
        #[arg(long)]
        buckets: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    Bench {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        readers: Option<usize>,
    },
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        bin_width: f64,
    },
    /// Randomly truncate the ends of records (augmentation).
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long, default_value_t = 0.3)]
        max_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct PgArgs {
    /// Posteriorgram file.
    #[arg(long)]
    pg: PathBuf,
    /// Blank index of the posteriorgram.
    #[arg(long, default_value_t = 0)]
    blank: u32,
}

#[derive(Subcommand, Debug)]
pub enum BiasCmd {
    /// Two-stage hotword filtering against a posteriorgram.
    Filter {
        #[command(flatten)]
        pg: PgArgs,
        #[arg(long)]
        hotwords: PathBuf,
        /// Tokenizer used to map hotwords to token ids.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        psc: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        soc: Option<f64>,
    },
    /// Decoder prompt from a transcript (training) or a posteriorgram (inference).
    Prompt {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        hotwords: PathBuf,
        #[arg(long, required_unless_present = "pg")]
        transcript: Option<String>,
        /// Filter hotwords at the prompt threshold against this posteriorgram.
        #[arg(long, conflicts_with = "transcript")]
        pg: Option<PathBuf>,
        #[arg(long)]
        distractors: Option<usize>,
    },
    /// Context fusion forward pass with seeded weights; prints attention.
    Fuse {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        hotwords: PathBuf,
        #[arg(long, default_value_t = 4)]
        frames: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 2)]
        heads: usize,
    },
}

#[derive(Subcommand, Debug)]
pub enum DecodeCmd {
    /// Prefix beam search, optionally biased by hotwords.
    Ctc {
        #[command(flatten)]
        pg: PgArgs,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long, requires = "model")]
        hotwords: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Re-rank an n-best list with the reference prompt-aware scorer.
    Rescore {
        /// n-best as a JSON array or JSON lines of `{tokens, log_score, bonus}`.
        #[arg(long)]
        nbest: PathBuf,
        /// Prompt text (needs `--model`) or comma-separated ids.
        #[arg(long, default_value = "")]
        prompt: String,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        ctc_weight: Option<f64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Subcommand, Debug)]
pub enum EvalCmd {
    /// Corpus WER with hotword split; lines of the two files are paired.
    Wer {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        hotwords: Option<PathBuf>,
        /// Tokenizer whose CJK ranges define character units.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Relative error reduction between two error rates.
    Rer {
        #[arg(long)]
        before: f64,
        #[arg(long)]
        after: f64,
    },
}

#[derive(Args, Debug)]
pub struct DemoArgs {
    /// Also write manifests, shards, model and posteriorgrams here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Utterances to decode.
    #[arg(long, default_value_t = 24)]
    utterances: usize,
}

/// Marks errors caused by the invocation rather than the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub struct Ctx {
    pub cfg: Config,
    pub seed: u64,
    pub json: bool,
}

pub fn emit<T: Serialize>(value: &T) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = match &cli.config {
        Some(path) => Config::load(path).map_err(|e| usage(format!("{e:#}")))?,
        None => Config::default(),
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let ctx = Ctx { seed: cli.seed.unwrap_or(cfg.seed), cfg, json: cli.json };
    match cli.command {
        Command::Tok(c) => commands::tok(&ctx, c),
        Command::Sample(c) => commands::sample(&ctx, c),
        Command::Pipe(c) => commands::pipe(&ctx, c),
        Command::Bias(c) => commands::bias(&ctx, c),
        Command::Decode(c) => commands::decode(&ctx, c),
        Command::Eval(c) => commands::eval(&ctx, c),
        Command::Demo(a) => demo::run(&ctx, a.out.as_deref(), a.utterances),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.chain().any(|c| {
            c.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
        }) =>
        {
            // Downstream reader closed early (e.g. `| head`).
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
