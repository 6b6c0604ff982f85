mod commands;
mod config;
mod files;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use neurotok::Result;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Parser)]
#[command(name = "neurotok", version, about = "Tokenize multichannel recordings, train a token transformer and score what it generates")]
struct Cli {
    /// JSON file with settings for the chosen command; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic multichannel recordings, one file per subject.
    Synth(SynthArgs),
    /// Fit a μ-law or quantile tokenizer.
    FitTokenizer(FitArgs),
    /// Train the learnable tokenizer.
    TrainTokenizer(TrainTokArgs),
    /// Turn recordings into token files.
    Tokenize(TokenizeArgs),
    /// Turn token files back into recordings.
    Detokenize(DetokenizeArgs),
    /// Percentage of variance explained by reconstructions.
    EvalRecon(EvalReconArgs),
    /// Train the token transformer.
    TrainGpt(TrainGptArgs),
    /// Sample new token recordings from a trained transformer.
    Generate(GenerateArgs),
    /// Spectral and fingerprint comparison of real and generated recordings.
    EvalGen(EvalGenArgs),
    /// Subject identification from generated recordings.
    Fingerprint(FingerprintArgs),
    /// Linear decoding of synthetic evoked trials from transformer features.
    Probe(ProbeArgs),
    /// Summarize metric tables, comparing two of them when given a pair.
    Report(ReportArgs),
}

/// Collects the flags that were actually given, keyed by dotted config path.
#[derive(Default)]
struct Overrides(Map<String, Value>);

impl Overrides {
    fn set<T: Serialize>(&mut self, key: &str, v: Option<T>) -> &mut Self {
        if let Some(v) = v {
            let mut node = &mut self.0;
            let mut parts: Vec<&str> = key.split('.').collect();
            let last = parts.pop().unwrap();
            for p in parts {
                node = node
                    .entry(p)
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .unwrap();
            }
            node.insert(last.into(), serde_json::to_value(v).unwrap());
        }
        self
    }

    fn list(&mut self, key: &str, v: &[PathBuf]) -> &mut Self {
        self.set(key, (!v.is_empty()).then_some(v))
    }

    fn take(&mut self) -> Value {
        Value::Object(std::mem::take(&mut self.0))
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    sample_rate: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    /// Recordings (.nts files or directories).
    data: Vec<PathBuf>,
    #[arg(long, value_parser = ["mu", "sq"])]
    kind: Option<String>,
    #[arg(long, visible_alias = "vocab")]
    vocab_size: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
}

#[derive(Args)]
struct TrainTokArgs {
    data: Vec<PathBuf>,
    #[arg(long, visible_alias = "vocab")]
    vocab_size: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    causal: Option<bool>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_segments: Option<usize>,
    #[arg(long)]
    refactor: Option<bool>,
}

#[derive(Args)]
struct TokenizeArgs {
    data: Vec<PathBuf>,
    #[arg(long)]
    tokenizer: Option<PathBuf>,
}

#[derive(Args)]
struct DetokenizeArgs {
    /// Token files (.ntk) or directories.
    tokens: Vec<PathBuf>,
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    #[arg(long)]
    sample_rate: Option<f64>,
}

#[derive(Args)]
struct EvalReconArgs {
    data: Vec<PathBuf>,
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    /// Reconstructed recordings to score instead of a tokenizer round trip.
    #[arg(long, num_args = 1..)]
    recon: Vec<PathBuf>,
}

#[derive(Args)]
struct TrainGptArgs {
    tokens: Vec<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    receptive_field: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Token files whose histogram seeds the prompts.
    tokens: Vec<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    prompt_len: Option<usize>,
    #[arg(long)]
    top_p: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    subjects: Option<Vec<u32>>,
}

#[derive(Args)]
struct EvalGenArgs {
    #[arg(long, num_args = 1..)]
    real: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    gen: Vec<PathBuf>,
    #[arg(long)]
    window_s: Option<f64>,
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct FingerprintArgs {
    #[arg(long, num_args = 1..)]
    real: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    gen: Vec<PathBuf>,
    #[arg(long)]
    max_k: Option<usize>,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    test_session: Option<u32>,
    #[arg(long)]
    test_subject: Option<u32>,
}

#[derive(Args)]
struct ReportArgs {
    inputs: Vec<PathBuf>,
}

fn run_with<T>(cli: &Cli, name: &str, overrides: Value, f: impl FnOnce(&T, &Path) -> Result<()>) -> Result<()>
where
    T: Serialize + DeserializeOwned + Default,
{
    let cfg: T = config::resolve(cli.config.as_deref(), overrides)?;
    std::fs::create_dir_all(&cli.out)?;
    config::snapshot(&cli.out, name, &cfg)?;
    f(&cfg, &cli.out)
}

fn run(cli: &Cli) -> Result<()> {
    let mut o = Overrides::default();
    let seed = cli.seed;
    match &cli.command {
        Command::Synth(a) => {
            o.set("seed", seed)
                .set("n_subjects", a.subjects)
                .set("n_channels", a.channels)
                .set("n_samples", a.samples)
                .set("sample_rate", a.sample_rate)
                .set("noise_sigma", a.noise);
            run_with(cli, "synth", o.take(), commands::synth)
        }
        Command::FitTokenizer(a) => {
            o.list("data", &a.data).set("kind", a.kind.as_ref()).set("vocab_size", a.vocab_size).set("mu", a.mu);
            run_with(cli, "fit-tokenizer", o.take(), commands::fit_tokenizer)
        }
        Command::TrainTokenizer(a) => {
            o.list("data", &a.data)
                .set("model.seed", seed)
                .set("model.vocab_size", a.vocab_size)
                .set("model.hidden", a.hidden)
                .set("model.epochs", a.epochs)
                .set("model.lr", a.lr)
                .set("model.causal", a.causal)
                .set("model.restarts", a.restarts)
                .set("max_segments", a.max_segments)
                .set("refactor", a.refactor);
            run_with(cli, "train-tokenizer", o.take(), commands::train_tokenizer)
        }
        Command::Tokenize(a) => {
            o.list("data", &a.data).set("tokenizer", a.tokenizer.as_ref());
            run_with(cli, "tokenize", o.take(), commands::tokenize)
        }
        Command::Detokenize(a) => {
            o.list("tokens", &a.tokens).set("tokenizer", a.tokenizer.as_ref()).set("sample_rate", a.sample_rate);
            run_with(cli, "detokenize", o.take(), commands::detokenize)
        }
        Command::EvalRecon(a) => {
            o.list("data", &a.data).list("recon", &a.recon).set("tokenizer", a.tokenizer.as_ref());
            run_with(cli, "eval-recon", o.take(), commands::eval_recon)
        }
        Command::TrainGpt(a) => {
            o.list("tokens", &a.tokens)
                .set("model.seed", seed)
                .set("model.steps", a.steps)
                .set("model.lr", a.lr)
                .set("model.batch_size", a.batch_size)
                .set("model.embed_dim", a.embed_dim)
                .set("model.n_layers", a.layers)
                .set("model.n_heads", a.heads)
                .set("model.receptive_field", a.receptive_field)
                .set("model.eval_every", a.eval_every);
            run_with(cli, "train-gpt", o.take(), commands::train_gpt)
        }
        Command::Generate(a) => {
            o.list("tokens", &a.tokens)
                .set("model", a.model.as_ref())
                .set("tokenizer", a.tokenizer.as_ref())
                .set("steps", a.steps)
                .set("prompt_len", a.prompt_len)
                .set("sampler.seed", seed)
                .set("sampler.top_p", a.top_p)
                .set("sampler.temperature", a.temperature)
                .set("subjects", a.subjects.as_ref());
            run_with(cli, "generate", o.take(), commands::generate)
        }
        Command::EvalGen(a) => {
            o.list("real", &a.real)
                .list("gen", &a.gen)
                .set("window_s", a.window_s)
                .set("overlap", a.overlap)
                .set("k", a.k);
            run_with(cli, "eval-gen", o.take(), commands::eval_gen)
        }
        Command::Fingerprint(a) => {
            o.list("real", &a.real).list("gen", &a.gen).set("max_k", a.max_k);
            run_with(cli, "fingerprint", o.take(), commands::fingerprint_cmd)
        }
        Command::Probe(a) => {
            o.set("model", a.model.as_ref())
                .set("tokenizer", a.tokenizer.as_ref())
                .set("evoked.background.seed", seed)
                .set("probe.seed", seed)
                .set("probe.epochs", a.epochs)
                .set("test_session", a.test_session)
                .set("test_subject", a.test_subject);
            run_with(cli, "probe", o.take(), commands::probe)
        }
        Command::Report(a) => {
            o.list("inputs", &a.inputs);
            run_with(cli, "report", o.take(), commands::report)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}
