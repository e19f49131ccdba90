use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use learnsel_core::cache::{self, CacheOptions, EmbeddingCache};
use learnsel_core::pipeline::{ingest_corpus, ReferenceResolver, RunConfig, RunReport, SelectionEngine, ShardProvider};
use learnsel_core::simlab::{export_corpus, generate_synthetic_corpus, run_on_corpus, write_curves_csv, SimlabSpec};
use learnsel_core::{Chunk0Policy, Strategy};

#[derive(Parser)]
#[command(
    name = "learnsel",
    version,
    about = "Learnability-driven batch selection for parallel corpora"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run selection over the corpus and write the selection stream.
    Select(RunArgs),
    /// Score the corpus and write per-model similarity histograms only.
    Score(RunArgs),
    /// Embedding cache maintenance.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
    /// Render a run report written by `select`.
    Report {
        path: PathBuf,
        /// Print the raw JSON instead of a summary.
        #[arg(long)]
        json: bool,
    },
    /// Synthetic-corpus experiments.
    Simlab {
        #[command(subcommand)]
        action: SimlabAction,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    /// Check every record's checksum; exits non-zero on corruption.
    Verify(CacheDirArgs),
    /// Rewrite shards keeping only valid, unique records.
    Compact(CacheDirArgs),
}

#[derive(Args)]
struct CacheDirArgs {
    /// Cache directory (defaults to `[cache] dir` of --config).
    dir: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SimlabAction {
    /// Train the toy learner with one strategy and write its learning curve.
    Run {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = StrategyArg::Joint)]
        strategy: StrategyArg,
        #[arg(long)]
        budget: Option<u64>,
        /// Overrides the corpus seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        stop_at: Option<f64>,
        /// CSV destination; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic corpus, its embeddings and a run config `select` can consume.
    Export {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Joint,
    Topk,
    Iid,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Joint => Strategy::Joint,
            StrategyArg::Topk => Strategy::Topk,
            StrategyArg::Iid => Strategy::Iid,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Chunk0Arg {
    Weighted,
    Uniform,
}

impl From<Chunk0Arg> for Chunk0Policy {
    fn from(p: Chunk0Arg) -> Self {
        match p {
            Chunk0Arg::Weighted => Chunk0Policy::Weighted,
            Chunk0Arg::Uniform => Chunk0Policy::Uniform,
        }
    }
}

/// Run settings; every flag overrides the matching config key.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    super_batch: Option<usize>,
    #[arg(long)]
    filter_ratio: Option<f64>,
    #[arg(long)]
    chunks: Option<usize>,
    #[arg(long)]
    w_easy: Option<f64>,
    #[arg(long)]
    w_hard: Option<f64>,
    #[arg(long, value_enum)]
    chunk0_policy: Option<Chunk0Arg>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Disable the reference cache.
    #[arg(long)]
    no_cache: bool,
    /// Selection stream for `select`; histogram file for `score` (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<u64>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => RunConfig::default(),
        };
        let sel = &mut cfg.selection;
        if let Some(s) = self.strategy {
            sel.strategy = s.into();
        }
        let c = &mut sel.config;
        set(&mut c.seed, self.seed);
        set(&mut c.super_batch_size, self.super_batch);
        set(&mut c.filter_ratio, self.filter_ratio);
        set(&mut c.n_chunks, self.chunks);
        set(&mut c.weights.w_easy, self.w_easy);
        set(&mut c.weights.w_hard, self.w_hard);
        set(&mut c.temperature, self.temperature);
        if let Some(p) = self.chunk0_policy {
            c.chunk0_policy = p.into();
        }
        if self.cache_dir.is_some() {
            cfg.cache.dir = self.cache_dir.clone();
        }
        if self.no_cache {
            cfg.cache.enabled = false;
        }
        if self.out.is_some() {
            cfg.io.out = self.out.clone();
        }
        if self.report.is_some() {
            cfg.io.report = self.report.clone();
        }
        set(&mut cfg.io.epochs, self.epochs);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn engine(cfg: &RunConfig) -> Result<SelectionEngine> {
    let m = &cfg.models;
    let open = |name: &Option<String>, dir: &Option<PathBuf>, role: &str| -> Result<ShardProvider> {
        let (Some(name), Some(dir)) = (name, dir) else {
            bail!("[models] needs both {role} and {role}_embeddings");
        };
        ShardProvider::open(dir, name).with_context(|| format!("opening {role} embeddings in {}", dir.display()))
    };
    let learner = open(&m.learner, &m.learner_embeddings, "learner")?;
    let reference = open(&m.reference, &m.reference_embeddings, "reference")?;
    let cache = match (&cfg.cache.dir, cfg.cache.enabled) {
        (Some(dir), true) => Some(EmbeddingCache::open_with(
            dir,
            CacheOptions {
                max_shard_bytes: cfg.cache.max_shard_bytes,
                sync_writes: cfg.cache.sync_writes,
            },
        )?),
        _ => None,
    };
    let resolver = ReferenceResolver::new(Box::new(reference), cache)?;
    Ok(SelectionEngine::new(
        cfg.selection.config.clone(),
        cfg.selection.strategy,
        Box::new(learner),
        resolver,
        cfg.io.histogram_bins,
    )?)
}

fn select(args: &RunArgs) -> Result<()> {
    let cfg = args.config()?;
    let corpus = ingest_corpus(&cfg.io.corpus_format()?)?;
    let mut engine = engine(&cfg)?;
    let mut stream = output(cfg.io.out.as_deref())?;
    let mut pairs = cfg.io.pairs_out.as_deref().map(create).transpose()?;
    for epoch in 0..cfg.io.epochs {
        engine.run_epoch(&corpus.records, epoch, |record, selected| {
            record.write_jsonl(&mut stream)?;
            if let Some(w) = pairs.as_mut() {
                for p in selected {
                    writeln!(w, "{}\t{}", p.src_text, p.trg_text)?;
                }
            }
            Ok(())
        })?;
    }
    stream.flush()?;
    if let Some(w) = pairs.as_mut() {
        w.flush()?;
    }
    let report = engine.report(&cfg.cost.model, cfg.cost.iid_samples_for_parity);
    if let Some(path) = &cfg.io.report {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, &report)?;
        w.flush()?;
    }
    eprintln!(
        "selected {} of {} pairs in {} super-batches ({} skipped lines)",
        report.samples_trained, corpus.stats.records, report.super_batches, corpus.stats.skipped
    );
    Ok(())
}

fn score(args: &RunArgs) -> Result<()> {
    let cfg = args.config()?;
    let corpus = ingest_corpus(&cfg.io.corpus_format()?)?;
    let mut engine = engine(&cfg)?;
    for epoch in 0..cfg.io.epochs {
        engine.score_epoch(&corpus.records, epoch)?;
    }
    // The config's `out` names the selection stream, so histograms go to --out or stdout.
    let mut w = output(args.out.as_deref())?;
    serde_json::to_writer_pretty(&mut w, &engine.histograms())?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn cache_dir(args: &CacheDirArgs) -> Result<PathBuf> {
    if let Some(d) = args.dir.clone().or_else(|| args.cache_dir.clone()) {
        return Ok(d);
    }
    match &args.config {
        Some(p) => RunConfig::load(p)?.cache.dir.context("config has no [cache] dir"),
        None => bail!("give a cache directory or --config"),
    }
}

fn run_cache(action: &CacheAction) -> Result<()> {
    match action {
        CacheAction::Verify(args) => {
            let dir = cache_dir(args)?;
            let report = cache::verify(&dir)?;
            for s in &report.shards {
                println!(
                    "{}: model {} dim {} records {} corrupt {} duplicates {} torn-tail bytes {}{}",
                    s.path.display(),
                    s.model_id.as_deref().unwrap_or("?"),
                    s.dim.map_or("?".into(), |d| d.to_string()),
                    s.records,
                    s.corrupt_offsets.len(),
                    s.duplicate_keys,
                    s.torn_tail_bytes,
                    s.header_error
                        .as_ref()
                        .map_or(String::new(), |e| format!(" header error: {e}")),
                );
            }
            println!(
                "{} shards, {} records, {} checksum failures",
                report.shards.len(),
                report.records(),
                report.checksum_failures()
            );
            if !report.is_clean() {
                bail!("cache at {} is not clean", dir.display());
            }
        }
        CacheAction::Compact(args) => {
            let r = cache::compact(cache_dir(args)?)?;
            println!(
                "{} models: kept {} records, dropped {} corrupt and {} duplicate, {} -> {} bytes",
                r.models, r.records_kept, r.corrupt_dropped, r.duplicates_dropped, r.bytes_before, r.bytes_after
            );
        }
    }
    Ok(())
}

fn report(path: &Path, json: bool) -> Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let r: RunReport = serde_json::from_str(&text).context("not a run report")?;
    if json {
        println!("{}", serde_json::to_string_pretty(&r)?);
        return Ok(());
    }
    let c = &r.counters;
    println!("samples trained        {}", r.samples_trained);
    println!("super-batches          {}", r.super_batches);
    println!("members scored         {} of {}", c.scored_members, c.members);
    println!("reference sentences    {}", c.reference_forward_sentences);
    println!(
        "cache hits / misses    {} / {}",
        r.cache_stats.hits, r.cache_stats.misses
    );
    println!("total FLOPS            {:.4e}", r.total_flops);
    println!(
        "relative to iid        {:.4} (iid samples {})",
        r.flops_relative_to_iid, r.iid_samples_for_parity
    );
    for (model, h) in &r.histograms {
        println!(
            "{model}: mean {:.4} variance {:.4} over {} pairs",
            h.mean,
            h.variance,
            h.total()
        );
    }
    Ok(())
}

fn load_spec(path: Option<&Path>, seed: Option<u64>) -> Result<SimlabSpec> {
    let mut spec = match path {
        Some(p) => SimlabSpec::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => SimlabSpec::default(),
    };
    set(&mut spec.corpus.seed, seed);
    Ok(spec)
}

fn run_simlab(action: &SimlabAction) -> Result<()> {
    match action {
        SimlabAction::Run {
            spec,
            strategy,
            budget,
            seed,
            stop_at,
            out,
        } => {
            let mut spec = load_spec(spec.as_deref(), *seed)?;
            set(&mut spec.experiment.budget, *budget);
            if stop_at.is_some() {
                spec.experiment.stop_at = *stop_at;
            }
            let corpus = generate_synthetic_corpus(&spec.corpus)?;
            let outcome = run_on_corpus(&corpus, (*strategy).into(), &spec.experiment)?;
            let mut w = output(out.as_deref())?;
            write_curves_csv(std::slice::from_ref(&outcome.curve), &mut w)?;
            w.flush()?;
            let last = outcome.curve.last().map_or(0.0, |p| p.metric);
            eprintln!("final metric {last:.4}, noise exposure {:.4}", outcome.noise_exposure);
        }
        SimlabAction::Export { spec, seed, out } => {
            let spec = load_spec(spec.as_deref(), *seed)?;
            let corpus = generate_synthetic_corpus(&spec.corpus)?;
            let paths = export_corpus(&corpus, spec.experiment.lr, out)?;
            println!("{}", paths.config.display());
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Select(args) => select(&args),
        Command::Score(args) => score(&args),
        Command::Cache { action } => run_cache(&action),
        Command::Report { path, json } => report(&path, json),
        Command::Simlab { action } => run_simlab(&action),
    }
}
