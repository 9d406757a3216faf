mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use statetrack_core::corpus::{self, propara, synth_corpus, write_corpus, EmbeddingTable, Vocab};
use statetrack_core::pipeline::{
    predict_corpus, read_predictions, sidecar_path, write_predictions, EpochMetrics, METRICS_HEADER,
};
use statetrack_core::{
    count_violations, predict_process, score_task1, score_task2, train, Model, ProcessInstance, ResolvedGrid,
    TrainConfig,
};

/// Directory that relative input paths fall back to.
const DATA_DIR_ENV: &str = "STATETRACK_DATA_DIR";

#[derive(Parser)]
#[command(name = "statetrack", version, about = "Entity state tracking over procedural text")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus as JSON lines.
    Synth {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write its checkpoint and metrics log.
    Train(TrainArgs),
    /// Write predicted grids as a TSV dump.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
    },
    /// Score a TSV dump against gold.
    Eval {
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long)]
        pred: PathBuf,
        /// Gold corpus (JSON lines) or TSV dump; violations need the corpus.
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Show per-sentence predictions and graph internals for one process.
    Trace {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        id: String,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
        /// Where to write the JSON trace; printed after the table when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Development set for early stopping; the training data when absent.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// `key = value` file; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint path; the sidecar goes next to it.
    #[arg(long)]
    out: PathBuf,
    /// Metrics CSV; defaults to `<out>.metrics.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Word vectors as `word v1 .. vk` lines; random vectors when absent.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Jsonl)]
    format: Format,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    no_coref_across: bool,
    #[arg(long)]
    no_coref_within: bool,
    #[arg(long, conflicts_with_all = ["no_coref_across", "no_coref_within"])]
    lstm_graph_unit: bool,
    #[arg(long, conflicts_with_all = ["no_coref_across", "no_coref_within", "lstm_graph_unit", "mrc_only_paragraph"])]
    mrc_only_prefix: bool,
    #[arg(long, conflicts_with_all = ["no_coref_across", "no_coref_within", "lstm_graph_unit"])]
    mrc_only_paragraph: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    /// This tool's own corpus format.
    Jsonl,
    /// ProPara state-change grids.
    Propara,
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Violations,
}

/// Bad invocation as opposed to a failed run; exits with status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn input(path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
            let joined = Path::new(&dir).join(path);
            if joined.exists() {
                return joined;
            }
        }
    }
    path.to_path_buf()
}

fn load_corpus(path: &Path, format: Format) -> Result<Vec<ProcessInstance>> {
    let path = input(path);
    let corpus = match format {
        Format::Jsonl => corpus::parse_corpus(&path)?,
        Format::Propara => {
            let (corpus, stats) = propara::parse_propara(&path)?;
            if stats.unresolved_spans > 0 {
                log::warn!(
                    "{}: {} of {} locations not found in their paragraph, read as unknown",
                    path.display(),
                    stats.unresolved_spans,
                    stats.unresolved_spans + stats.located_spans
                );
            }
            corpus
        }
    };
    Ok(corpus)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot write {}", path.display()))?,
    ))
}

fn cmd_synth(seed: u64, n: usize, out: &Path) -> Result<()> {
    let corpus = synth_corpus(seed, n);
    write_corpus(out, &corpus).with_context(|| format!("cannot write {}", out.display()))?;
    log::info!("wrote {n} processes to {}", out.display());
    Ok(())
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut c = TrainConfig::default();
    if let Some(path) = &args.config {
        config::load(&mut c, path)?;
    }
    c.seed = args.seed.unwrap_or(c.seed);
    c.epochs = args.epochs.unwrap_or(c.epochs);
    c.patience = args.patience.unwrap_or(c.patience);
    c.batch_size = args.batch_size.unwrap_or(c.batch_size);
    c.learning_rate = args.lr.unwrap_or(c.learning_rate);
    let a = &mut c.model.ablation;
    a.no_coref_across |= args.no_coref_across;
    a.no_coref_within |= args.no_coref_within;
    a.lstm_graph_unit |= args.lstm_graph_unit;
    a.mrc_only_prefix |= args.mrc_only_prefix;
    a.mrc_only_paragraph |= args.mrc_only_paragraph;
    if let Err(e) = a.validate() {
        return Err(Usage(e.to_string()).into());
    }
    c.validate().map_err(|e| Usage(e.to_string()))?;
    Ok(c)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let config = train_config(args)?;
    let train_set = load_corpus(&args.data, args.format)?;
    let dev = match &args.dev {
        Some(p) => load_corpus(p, args.format)?,
        None => train_set.clone(),
    };
    let vocab = Vocab::from_corpus(train_set.iter().chain(&dev));
    let embeddings = match &args.embeddings {
        Some(p) => corpus::load_embeddings(input(p), &vocab, config.seed)?,
        None => EmbeddingTable::random(&vocab, config.model.embed_dim, config.seed ^ 0x5eed),
    };
    let mut model_config = config.model.clone();
    model_config.embed_dim = embeddings.dim();
    let config = TrainConfig {
        model: model_config.clone(),
        ..config
    };
    log::debug!("effective configuration:\n{}", config::render(&config));
    let model = Model::new(model_config, vocab, embeddings, config.seed)?;
    log::info!(
        "training `{}` on {} processes ({} dev), {} parameters",
        config.model.ablation.label(),
        train_set.len(),
        dev.len(),
        model.params.iter().map(|(_, t)| t.numel()).sum::<usize>()
    );

    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut s = args.out.as_os_str().to_owned();
        s.push(".metrics.csv");
        PathBuf::from(s)
    });
    let mut log = create(&log_path)?;
    writeln!(log, "{METRICS_HEADER}")?;
    let mut write_err = None;
    let outcome = train(&train_set, &dev, &config, model, |m: &EpochMetrics, _| {
        if let Err(e) = writeln!(log, "{}", m.csv_row()).and_then(|_| log.flush()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).with_context(|| format!("cannot write {}", log_path.display()));
    }
    outcome
        .best
        .save(&args.out, &config)
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    let best = &outcome.metrics[outcome.best_epoch - 1];
    println!(
        "best epoch {} of {}: dev micro {:.2}, macro {:.2}",
        outcome.best_epoch,
        outcome.metrics.len(),
        best.micro,
        best.macro_avg
    );
    println!("checkpoint {} (sidecar {})", args.out.display(), sidecar_path(&args.out).display());
    Ok(())
}

fn load_model(path: &Path) -> Result<Model> {
    let (model, _) = Model::load(path).with_context(|| format!("cannot load checkpoint {}", path.display()))?;
    Ok(model)
}

fn cmd_predict(ckpt: &Path, data: &Path, out: &Path, format: Format) -> Result<()> {
    let model = load_model(ckpt)?;
    let corpus = load_corpus(data, format)?;
    let grids: Vec<ResolvedGrid> = predict_corpus(&model, &corpus)?.iter().map(|g| g.resolved()).collect();
    let mut w = create(out)?;
    write_predictions(&mut w, &grids)?;
    w.flush()?;
    log::info!("wrote predictions for {} processes to {}", grids.len(), out.display());
    Ok(())
}

fn looks_like_tsv(path: &Path) -> Result<bool> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(text.starts_with("process_id\t"))
}

fn cmd_eval(task: Task, pred: &Path, gold: &Path, format: Format, json: Option<&Path>) -> Result<()> {
    let (pred, gold) = (input(pred), input(gold));
    let preds = read_predictions(&pred).with_context(|| format!("cannot read predictions {}", pred.display()))?;
    let (gold_grids, gold_corpus) = if looks_like_tsv(&gold)? {
        (read_predictions(&gold)?, None)
    } else {
        let corpus = load_corpus(&gold, format)?;
        (corpus.iter().map(ResolvedGrid::gold).collect(), Some(corpus))
    };
    let (text, value) = match task {
        Task::One => {
            let r = score_task1(&preds, &gold_grids)?;
            (r.to_string(), serde_json::to_value(&r)?)
        }
        Task::Two => {
            let r = score_task2(&preds, &gold_grids)?;
            (r.to_string(), serde_json::to_value(&r)?)
        }
        Task::Violations => {
            let Some(corpus) = gold_corpus else {
                return Err(Usage("violations need the gold corpus (mention offsets), not a TSV dump".into()).into());
            };
            let r = count_violations(&preds, &corpus)?;
            (r.to_string(), serde_json::to_value(&r)?)
        }
    };
    print!("{text}");
    if let Some(path) = json {
        std::fs::write(path, serde_json::to_string_pretty(&value)?)
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

fn cmd_trace(ckpt: &Path, data: &Path, id: &str, format: Format, out: Option<&Path>) -> Result<()> {
    let model = load_model(ckpt)?;
    let corpus = load_corpus(data, format)?;
    let Some(inst) = corpus.iter().find(|i| i.id == id) else {
        bail!("no process with id `{id}` in {}", data.display());
    };
    let (_, trace) = predict_process(&model, inst)?;
    print!("{}", trace.render_table());
    let json = serde_json::to_string_pretty(&trace)?;
    match out {
        Some(path) => std::fs::write(path, json).with_context(|| format!("cannot write {}", path.display()))?,
        None => println!("\n{json}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { seed, n, out } => cmd_synth(seed, n, &out),
        Command::Train(args) => cmd_train(&args),
        Command::Predict { ckpt, data, out, format } => cmd_predict(&ckpt, &data, &out, format),
        Command::Eval {
            task,
            pred,
            gold,
            format,
            json,
        } => cmd_eval(task, &pred, &gold, format, json.as_deref()),
        Command::Trace {
            ckpt,
            data,
            id,
            format,
            out,
        } => cmd_trace(&ckpt, &data, &id, format, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("statetrack: {}", e.render());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("statetrack: error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
