//! `itn` command line: data generation, training, evaluation, interactive
//! streaming, and latency benchmarking.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use itn_core::bench::{run_bench, BenchConfig};
use itn_core::checkpoint::{load_checkpoint, save_checkpoint};
use itn_core::datagen::{generate, Corpus, GenConfig};
use itn_core::encoder::{ModelConfig, ModelParams};
use itn_core::streaming::{open_session, StreamConfig};
use itn_core::tokenizer::{build_vocab, Vocab};
use itn_core::trainer::{evaluate, train, CiConfig, EvalMode, MaskMode, TrainConfig};
use itn_core::wfst::grammar::GrammarSet;

#[derive(Parser)]
#[command(
    name = "itn",
    about = "Streaming inverse text normalization toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled corpus and write train/val/test splits.
    GenData(GenDataArgs),
    /// Train a tagging model and write a checkpoint plus its vocabulary.
    Train(TrainArgs),
    /// Evaluate a checkpoint in full-context or simulated streaming mode.
    Eval(EvalArgs),
    /// Stream fragments through a session (stdin or a file, one per line).
    Stream(StreamArgs),
    /// Measure multi-session latency and real-time factor.
    Bench(BenchArgs),
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("expected lo:hi, got {s:?}"))?;
    let lo: usize = lo.parse().map_err(|_| format!("bad range start {lo:?}"))?;
    let hi: usize = hi.parse().map_err(|_| format!("bad range end {hi:?}"))?;
    if lo > hi {
        return Err(format!("empty range {s:?}"));
    }
    Ok((lo, hi))
}

#[derive(Args)]
struct GenDataArgs {
    /// Total sentences; split 80/10/10.
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory for train.jsonl, val.jsonl, test.jsonl.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory containing train.jsonl and val.jsonl.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for model.ckpt and vocab.txt.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = MaskArg::Dynamic)]
    mask: MaskArg,
    /// Training chunk sizes, inclusive.
    #[arg(long, value_parser = parse_range, default_value = "3:7")]
    chunks: (usize, usize),
    /// Training right-context sizes, inclusive.
    #[arg(long, value_parser = parse_range, default_value = "1:2")]
    rc: (usize, usize),
    #[arg(long, default_value_t = 16)]
    left: usize,
    #[arg(long, default_value_t = 2e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.999875)]
    lr_decay: f64,
    #[arg(long, default_value_t = 0.8)]
    beta1: f64,
    #[arg(long, default_value_t = 0.99)]
    beta2: f64,
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 128)]
    ffn: usize,
    #[arg(long, default_value_t = 96)]
    max_positions: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    /// Subword merge budget for the learned vocabulary.
    #[arg(long, default_value_t = 300)]
    merges: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    Full,
    Chunk,
    Dynamic,
}

impl From<MaskArg> for MaskMode {
    fn from(m: MaskArg) -> MaskMode {
        match m {
            MaskArg::Full => MaskMode::Full,
            MaskArg::Chunk => MaskMode::Chunk,
            MaskArg::Dynamic => MaskMode::Dynamic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    Streaming,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory containing model.ckpt and vocab.txt.
    #[arg(long)]
    model: PathBuf,
    /// Corpus file to evaluate on.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Full)]
    mode: ModeArg,
    #[arg(long, value_parser = parse_range, default_value = "3:5")]
    stream_chunks: (usize, usize),
    #[arg(long, value_parser = parse_range, default_value = "1:2")]
    stream_rc: (usize, usize),
    #[arg(long, default_value_t = 16)]
    left: usize,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Report bootstrap confidence intervals (10000 iterations, 95%).
    #[arg(long)]
    ci: bool,
    /// Row label in the rendered summary.
    #[arg(long, default_value = "eval")]
    label: String,
}

#[derive(Args)]
struct StreamArgs {
    #[arg(long)]
    model: PathBuf,
    /// Read fragments from this file instead of standard input.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    rc: usize,
    #[arg(long, default_value_t = 16)]
    left: usize,
    #[arg(long, default_value_t = 32)]
    max_provisional: usize,
    /// Also run batch inference on the joined input and require equality.
    #[arg(long)]
    batch_compare: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 100)]
    sessions: usize,
    /// Comma-separated chunk sizes in words.
    #[arg(long, default_value = "3,4,5", value_delimiter = ',')]
    chunk_words: Vec<usize>,
    #[arg(long, default_value_t = 400.0)]
    cadence_ms: f64,
    #[arg(long, default_value_t = 20)]
    steps: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    rc: usize,
    #[arg(long, default_value_t = 16)]
    left: usize,
}

fn load_model_dir(dir: &Path) -> Result<(ModelParams<f32>, Vocab)> {
    let ckpt = dir.join("model.ckpt");
    let vocab_path = dir.join("vocab.txt");
    let params = load_checkpoint::<f32>(&ckpt)
        .with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let vocab =
        Vocab::load(&vocab_path).with_context(|| format!("loading vocab {}", vocab_path.display()))?;
    if vocab.len() != params.config.vocab_size {
        bail!(
            "vocab has {} pieces but checkpoint expects {}",
            vocab.len(),
            params.config.vocab_size
        );
    }
    Ok((params, vocab))
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let corpus = generate(&GenConfig {
        sentences: args.n,
        seed: args.seed,
        ..GenConfig::default()
    })?;
    std::fs::create_dir_all(&args.out)?;
    let (train_c, val_c, test_c) = corpus.split();
    for (name, split) in [("train", &train_c), ("val", &val_c), ("test", &test_c)] {
        split.save(&args.out.join(format!("{name}.jsonl")))?;
    }
    println!(
        "{}",
        serde_json::json!({
            "out": args.out,
            "train": train_c.len(),
            "val": val_c.len(),
            "test": test_c.len(),
        })
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let train_corpus = Corpus::load(&args.data.join("train.jsonl"))
        .with_context(|| format!("loading {}", args.data.join("train.jsonl").display()))?;
    let val_corpus = Corpus::load(&args.data.join("val.jsonl"))
        .with_context(|| format!("loading {}", args.data.join("val.jsonl").display()))?;
    let sentences: Vec<Vec<String>> = train_corpus
        .sentences
        .iter()
        .map(|s| s.spoken.clone())
        .collect();
    let vocab = build_vocab(&sentences, args.merges)?;
    let model_cfg = ModelConfig {
        layers: args.layers,
        heads: args.heads,
        model_dim: args.dim,
        ffn_dim: args.ffn,
        max_positions: args.max_positions,
        vocab_size: vocab.len(),
        nc_classes: itn_core::tags::NC_CLASSES,
        punct_classes: itn_core::tags::PUNCT_CLASSES,
        dropout_rate: args.dropout,
    };
    let train_cfg = TrainConfig {
        learning_rate: args.lr,
        lr_decay: args.lr_decay,
        beta1: args.beta1,
        beta2: args.beta2,
        weight_decay: args.weight_decay,
        batch_size: args.batch_size,
        max_epochs: args.epochs,
        mask_mode: args.mask.into(),
        chunk_range: args.chunks,
        rc_range: args.rc,
        left_context: args.left,
        seed: args.seed,
        patience: args.patience,
        ..TrainConfig::default()
    };
    let stdout = std::io::stdout();
    let model = train::<f32>(
        &train_cfg,
        &model_cfg,
        &train_corpus,
        &val_corpus,
        &vocab,
        |record| {
            let mut lock = stdout.lock();
            let _ = writeln!(lock, "{}", serde_json::to_string(record).unwrap());
        },
    )?;
    std::fs::create_dir_all(&args.out)?;
    save_checkpoint(&model, &args.out.join("model.ckpt"))?;
    vocab.save(&args.out.join("vocab.txt"))?;
    println!(
        "{}",
        serde_json::json!({ "checkpoint": args.out.join("model.ckpt"), "vocab": args.out.join("vocab.txt") })
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (params, vocab) = load_model_dir(&args.model)?;
    let corpus = Corpus::load(&args.data)?;
    let grammars: GrammarSet<f32> = GrammarSet::build();
    let mode = match args.mode {
        ModeArg::Full => EvalMode::Full,
        ModeArg::Streaming => EvalMode::Streaming {
            chunk_range: args.stream_chunks,
            rc_range: args.stream_rc,
            left_context: args.left,
            runs: args.runs,
        },
    };
    let ci = args.ci.then(CiConfig::default);
    let report = evaluate(&params, &vocab, &grammars, &corpus, &mode, args.seed, ci)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    println!("{}", report.render_row(&args.label));
    Ok(())
}

fn cmd_stream(args: StreamArgs) -> Result<()> {
    let (params, vocab) = load_model_dir(&args.model)?;
    let grammars: GrammarSet<f32> = GrammarSet::build();
    let config = StreamConfig {
        left_context: args.left,
        right_context: args.rc,
        max_provisional: args.max_provisional,
    };
    let mut session = open_session(&params, &vocab, &grammars, config.clone())?;

    let reader: Box<dyn BufRead> = match &args.input {
        Some(path) => Box::new(std::io::BufReader::new(
            std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?,
        )),
        None => Box::new(std::io::BufReader::new(std::io::stdin())),
    };
    let mut fragments = Vec::new();
    let mut streamed = String::new();
    for line in reader.lines() {
        let fragment = line?;
        let result = session.push(&fragment);
        streamed.push_str(&result.finalized);
        println!(
            "{}",
            serde_json::json!({ "finalized": result.finalized, "provisional": result.provisional })
        );
        if args.batch_compare {
            fragments.push(fragment);
        }
    }
    let result = session.flush();
    streamed.push_str(&result.finalized);
    println!(
        "{}",
        serde_json::json!({ "finalized": result.finalized, "provisional": "", "flush": true })
    );

    if args.batch_compare {
        let joined: String = fragments.concat();
        let mut batch = open_session(&params, &vocab, &grammars, config)?;
        let mut batch_out = batch.push(&joined).finalized;
        batch_out.push_str(&batch.flush().finalized);
        let matches = batch_out == streamed;
        println!(
            "{}",
            serde_json::json!({ "batch_match": matches, "batch": batch_out, "streamed": streamed })
        );
        if !matches {
            bail!("streamed output differs from batch inference");
        }
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let (params, vocab) = load_model_dir(&args.model)?;
    let grammars: GrammarSet<f32> = GrammarSet::build();
    let config = BenchConfig {
        sessions: args.sessions,
        chunk_sizes: args.chunk_words.clone(),
        cadence_ms: args.cadence_ms,
        steps: args.steps,
        seed: args.seed,
        stream: StreamConfig {
            left_context: args.left,
            right_context: args.rc,
            ..StreamConfig::default()
        },
    };
    let report = run_bench(&params, &vocab, &grammars, &config)?;
    println!("{}", serde_json::to_string(&report)?);
    print!("{}", report.render());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Stream(args) => cmd_stream(args),
        Command::Bench(args) => cmd_bench(args),
    }
}
