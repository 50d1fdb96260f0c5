use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xmodal_core::eval::{
    benchmark_latency, emit_document, Averaging, BenchConfig, EvalDocument, DEFAULT_REPETITIONS,
    DEFAULT_WARMUP,
};
use xmodal_core::optim::OptimizerKind;
use xmodal_core::pipeline::{
    evaluate_bm25, evaluate_dense, retrieval_task, DenseModel, EvalOptions,
};
use xmodal_core::store::{read_corpus_jsonl, read_pairs_jsonl, write_pairs_jsonl};
use xmodal_core::{
    build_index, generate_synthetic, load_embeddings, load_params, save_embeddings, save_params,
    train, EmbeddingSet, Error, Metric, PairDataset, ProjectionParams, TrainConfig,
};

type Result<T> = std::result::Result<T, Error>;

#[derive(Parser, Debug)]
#[command(
    name = "xmodal",
    version,
    about = "Cross-modal retrieval with a learned projection adapter"
)]
struct Cli {
    /// Cap on worker threads for batched work.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic paired task: a.embv, b.embv and pairs.jsonl.
    GenSynth(GenSynthArgs),
    /// Train the projection adapter and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint and/or baselines on held-out pairs.
    Eval(EvalArgs),
    /// Print the top-k index entries for each query as JSON lines.
    Retrieve(RetrieveArgs),
    /// Time single-query retrieval.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct GenSynthArgs {
    #[arg(long, default_value_t = 500)]
    pairs: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Modality-A embeddings (EMBV1).
    #[arg(long)]
    a: PathBuf,
    /// Modality-B embeddings (EMBV1).
    #[arg(long)]
    b: PathBuf,
    /// Labelled pairs (JSON lines).
    #[arg(long)]
    pairs: PathBuf,
    /// Number of trailing positive pairs reserved for evaluation.
    #[arg(long, default_value_t = 0)]
    holdout: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// JSON training config; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_shuffle: bool,
    /// L2-normalize inputs before training.
    #[arg(long)]
    normalize: bool,
    /// Checkpoint path (PRJV1).
    #[arg(long)]
    out: PathBuf,
    /// Also write the training report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TimingArgs {
    #[arg(long, default_value = "euclidean")]
    metric: Metric,
    #[arg(long, default_value_t = DEFAULT_WARMUP)]
    warmup: usize,
    #[arg(long, default_value_t = DEFAULT_REPETITIONS)]
    repetitions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Baseline {
    Bm25,
    RawEmbedding,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Extra rows in the report; repeatable.
    #[arg(long, value_enum)]
    baseline: Vec<Baseline>,
    /// Raw texts (JSON lines of id/text), needed by the bm25 baseline.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 1.5)]
    bm25_k1: f64,
    #[arg(long, default_value_t = 0.75)]
    bm25_b: f64,
    #[command(flatten)]
    timing: TimingArgs,
    #[arg(long, default_value = "weighted")]
    averaging: Averaging,
    #[arg(long)]
    normalize: bool,
    /// Dataset label recorded in the report.
    #[arg(long, default_value = "unnamed")]
    dataset: String,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct QueryArgs {
    /// Embeddings to search (EMBV1).
    #[arg(long)]
    index: PathBuf,
    /// Query embeddings (EMBV1).
    #[arg(long)]
    queries: PathBuf,
    /// Restrict to these query ids; repeatable.
    #[arg(long)]
    query_id: Vec<String>,
    /// Project queries through this adapter first.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    normalize: bool,
}

#[derive(Args, Debug)]
struct RetrieveArgs {
    #[command(flatten)]
    query: QueryArgs,
    #[arg(short, long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value = "euclidean")]
    metric: Metric,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    query: QueryArgs,
    #[command(flatten)]
    timing: TimingArgs,
}

fn data_error(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(data_error(format!("{}: no such file", path.display())))
    }
}

fn require_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(data_error(format!(
            "{}: directory does not exist",
            p.display()
        ))),
        _ => Ok(()),
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn load_data(args: &DataArgs) -> Result<(EmbeddingSet, EmbeddingSet, PairDataset)> {
    for p in [&args.a, &args.b, &args.pairs] {
        require_file(p)?;
    }
    let a = load_embeddings(&args.a)?;
    let b = load_embeddings(&args.b)?;
    let pairs = read_pairs_jsonl(&args.pairs)?;
    pairs.validate_against(&a, &b)?;
    Ok((a, b, pairs))
}

fn gen_synth(args: GenSynthArgs) -> Result<()> {
    let task = generate_synthetic(args.pairs, args.dim, args.noise, args.seed)?;
    fs::create_dir_all(&args.out)?;
    save_embeddings(&task.a, args.out.join("a.embv"))?;
    save_embeddings(&task.b, args.out.join("b.embv"))?;
    write_pairs_jsonl(&task.pairs, args.out.join("pairs.jsonl"))?;
    eprintln!(
        "wrote {} pairs (dim {}) to {}",
        args.pairs,
        args.dim,
        args.out.display()
    );
    print_json(&serde_json::json!({
        "a": args.out.join("a.embv"),
        "b": args.out.join("b.embv"),
        "pairs": args.out.join("pairs.jsonl"),
    }))
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            require_file(path)?;
            serde_json::from_str(&fs::read_to_string(path)?)?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = args.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.margin {
        cfg.margin = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.hidden {
        cfg.hidden_dim = v;
    }
    if let Some(v) = args.optimizer {
        cfg.optimizer = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if args.no_shuffle {
        cfg.shuffle = false;
    }
    if args.normalize {
        cfg.normalize_inputs = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn training_split(pairs: PairDataset, holdout: usize) -> Result<(PairDataset, PairDataset)> {
    if holdout == 0 {
        Ok((pairs.clone(), pairs))
    } else {
        pairs.split_holdout(holdout)
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = train_config(&args)?;
    require_parent(&args.out)?;
    if let Some(r) = &args.report {
        require_parent(r)?;
    }
    let (a, b, pairs) = load_data(&args.data)?;
    let (train_set, _) = training_split(pairs, args.data.holdout)?;
    let (params, mut report) = train(&a, &b, &train_set, &cfg)?;
    save_params(&params, &args.out)?;
    report.checkpoint = Some(args.out.display().to_string());
    if let Some(path) = &args.report {
        fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    eprintln!(
        "trained {} epochs on {} examples in {:.2}s; final loss {:.6}",
        cfg.epochs,
        train_set.len(),
        report.wall_clock_seconds,
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    print_json(&report)
}

fn load_checkpoint(path: &Path, dim: usize) -> Result<ProjectionParams> {
    require_file(path)?;
    let params = load_params(path)?;
    if params.embed_dim() != dim {
        return Err(data_error(format!(
            "checkpoint dim {} does not match embeddings dim {dim}",
            params.embed_dim()
        )));
    }
    Ok(params)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    if args.checkpoint.is_none() && args.baseline.is_empty() {
        return Err(data_error(
            "nothing to evaluate: give --checkpoint and/or --baseline",
        ));
    }
    if let Some(p) = &args.checkpoint {
        require_file(p)?;
    }
    let needs_corpus = args.baseline.contains(&Baseline::Bm25);
    let corpus = match (&args.corpus, needs_corpus) {
        (Some(p), true) => {
            require_file(p)?;
            Some(p)
        }
        (None, true) => return Err(data_error("the bm25 baseline needs --corpus")),
        _ => None,
    };
    if let Some(out) = &args.out {
        require_parent(out)?;
    }
    let (a, b, pairs) = load_data(&args.data)?;
    let (_, test) = training_split(pairs, args.data.holdout)?;
    let task = retrieval_task(&a, &b, &test, args.normalize)?;
    let opts = EvalOptions {
        metric: args.timing.metric,
        averaging: args.averaging,
        bench: BenchConfig {
            warmup: args.timing.warmup,
            repetitions: args.timing.repetitions,
        },
    };

    let mut reports = Vec::new();
    if let Some(path) = &args.checkpoint {
        let params = load_checkpoint(path, a.dim())?;
        reports.push(evaluate_dense(
            &task,
            DenseModel::Projected(&params),
            &opts,
            &args.dataset,
        )?);
    }
    for baseline in &args.baseline {
        reports.push(match baseline {
            Baseline::RawEmbedding => evaluate_dense(&task, DenseModel::Raw, &opts, &args.dataset)?,
            Baseline::Bm25 => {
                let texts = read_corpus_jsonl(corpus.expect("checked above"))?;
                evaluate_bm25(
                    &task,
                    &texts,
                    args.bm25_k1,
                    args.bm25_b,
                    &opts,
                    &args.dataset,
                )?
            }
        });
    }
    for r in &reports {
        eprintln!(
            "{:>14}  acc {:.4}  f1 {:.4}  {:.3e} s/query  {:.1} q/s",
            r.model, r.accuracy, r.f1, r.avg_query_seconds, r.throughput_qps
        );
    }
    let doc = EvalDocument { reports };
    match &args.out {
        Some(path) => emit_document(&doc, path),
        None => print_json(&doc),
    }
}

/// Index set plus `(id, vector)` queries, projected when a checkpoint is given.
type Queries = Vec<(String, Vec<f64>)>;

fn load_queries(args: &QueryArgs) -> Result<(EmbeddingSet, Queries)> {
    require_file(&args.index)?;
    require_file(&args.queries)?;
    if let Some(p) = &args.checkpoint {
        require_file(p)?;
    }
    let index_set = normalized(load_embeddings(&args.index)?, args.normalize)?;
    let query_set = load_embeddings(&args.queries)?;
    let ids: Vec<String> = if args.query_id.is_empty() {
        query_set.ids().to_vec()
    } else {
        args.query_id.clone()
    };
    let params = match &args.checkpoint {
        Some(p) => Some(load_checkpoint(p, query_set.dim())?),
        None => None,
    };
    let queries = ids
        .into_iter()
        .map(|id| {
            let row = query_set
                .get(&id)
                .ok_or_else(|| data_error(format!("unknown query id {id:?}")))?;
            let mut v: Vec<f64> = row.iter().map(|&x| f64::from(x)).collect();
            if args.normalize {
                unit(&mut v);
            }
            if let Some(p) = &params {
                v = p.project(&v)?;
            }
            Ok((id, v))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((index_set, queries))
}

fn unit(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn normalized(set: EmbeddingSet, normalize: bool) -> Result<EmbeddingSet> {
    if !normalize {
        return Ok(set);
    }
    let mut vectors = Vec::with_capacity(set.vectors().len());
    for i in 0..set.len() {
        let mut v = set.row_f64(i);
        unit(&mut v);
        vectors.extend(v.iter().map(|&x| x as f32));
    }
    EmbeddingSet::new(set.dim(), set.ids().to_vec(), vectors)
}

fn cmd_retrieve(args: RetrieveArgs) -> Result<()> {
    let (set, queries) = load_queries(&args.query)?;
    let index = build_index(set, args.metric)?;
    let vectors: Vec<Vec<f64>> = queries.iter().map(|(_, v)| v.clone()).collect();
    let results = index.query_batch(&vectors, args.k)?;
    let mut out = io::stdout().lock();
    for ((qid, _), result) in queries.iter().zip(results) {
        for (rank, hit) in result.hits.iter().enumerate() {
            let line = serde_json::json!({
                "query": qid,
                "rank": rank + 1,
                "id": hit.id,
                "score": hit.score,
            });
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let (set, queries) = load_queries(&args.query)?;
    let index = build_index(set, args.timing.metric)?;
    let vectors: Vec<Vec<f64>> = queries.into_iter().map(|(_, v)| v).collect();
    let stats = benchmark_latency(
        |q: &Vec<f64>| index.query(q, 1),
        &vectors,
        args.timing.warmup,
        args.timing.repetitions,
    )?;
    eprintln!(
        "{} calls over {} entries: {:.3e} s/query, {:.1} q/s",
        stats.timed_calls,
        index.len(),
        stats.avg_query_seconds,
        stats.throughput_qps
    );
    print_json(&stats)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(data_error("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| data_error(e.to_string()))?;
    }
    match cli.command {
        Command::GenSynth(a) => gen_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Retrieve(a) => cmd_retrieve(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
