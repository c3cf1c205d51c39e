//! `winnower`: ingest a corpus, rank it against seed texts, cut it down,
//! sample tranches for expert review, fold the labels back into a new seed,
//! and report on each round.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use winnower_core::divergence::Metric;
use winnower_core::project::{InitOptions, Project, ProjectError, ReducerChoice, ReportKind, ReportOptions, TopicSource};
use winnower_core::topics::{parse_name_map, topic_report};
use winnower_core::winnow::PercentileBand;

#[derive(Debug, Parser)]
#[command(name = "winnower", version, about = "Winnow a large corpus down to the documents most like a seed set")]
struct Cli {
    /// Project directory [default: current directory]
    #[arg(long, global = true, env = "WINNOWER_PROJECT")]
    project: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create a project in the project directory
    Init {
        /// Stopword file, one word per line (copied into the project)
        #[arg(long)]
        stopwords: Option<PathBuf>,
        /// Lemma table, `surface<TAB>lemma` per line (copied into the project)
        #[arg(long)]
        lemmas: Option<PathBuf>,
        /// Token reducer: auto, none, stemmer or lemmatizer
        #[arg(long, default_value = "auto")]
        reducer: ReducerChoice,
        /// Drop tokens shorter than this many characters [default: 2]
        #[arg(long)]
        min_token_length: Option<usize>,
    },
    /// Normalize a manifest of documents into the corpus cache
    Ingest {
        /// JSON-lines manifest: doc_id, title, year, and text or path
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Score documents against seed texts, starting a new round
    Rank {
        /// JSON-lines manifest of seed texts
        #[arg(long)]
        seed_manifest: PathBuf,
        /// kld, skld or jsd
        #[arg(long, default_value = "kld")]
        metric: Metric,
        /// Also score against each seed separately
        #[arg(long)]
        per_seed: bool,
        /// Score only this round's survivors instead of the whole corpus
        #[arg(long)]
        parent_round: Option<u32>,
    },
    /// Keep the given percentile of a round's lowest-divergence documents
    Winnow {
        #[arg(long)]
        percentile: f64,
        #[command(flatten)]
        round: RoundArg,
        /// Rescore with another metric (starts a new round)
        #[arg(long)]
        metric: Option<Metric>,
    },
    /// Draw review tranches from percentile bands of the ranking
    Sample {
        #[command(flatten)]
        round: RoundArg,
        /// Comma-separated `low-high` percentile bands
        #[arg(long, value_delimiter = ',', default_value = "0-1,1-5,5-25")]
        bands: Vec<PercentileBand>,
        /// Documents per band
        #[arg(long, default_value_t = 20)]
        k: usize,
        /// Sampling RNG seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Record expert labels from a `doc_id<TAB>0|1<TAB>annotator<TAB>timestamp` file
    Label {
        #[arg(long)]
        file: PathBuf,
        #[command(flatten)]
        round: RoundArg,
    },
    /// Print the fraction of labeled documents marked relevant
    HitRate {
        #[command(flatten)]
        round: RoundArg,
    },
    /// Seed a new round from the relevant labels, scoring the round's survivors
    Reseed {
        #[command(flatten)]
        round: RoundArg,
        /// Metric for the new round [default: same as the labeled round]
        #[arg(long)]
        metric: Option<Metric>,
    },
    /// Fit an LDA topic model to a round's documents
    Topics {
        #[command(flatten)]
        round: RoundArg,
        /// Number of topics [default: project setting]
        #[arg(long)]
        k: Option<usize>,
        /// Document-topic prior [default: 50/k]
        #[arg(long)]
        alpha: Option<f64>,
        /// Topic-word prior [default: project setting]
        #[arg(long)]
        beta: Option<f64>,
        /// Gibbs sweeps [default: project setting]
        #[arg(long)]
        iterations: Option<usize>,
        /// Sampler RNG seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// survivors or seed
        #[arg(long, default_value = "survivors")]
        source: TopicSource,
        /// Topic names, `topic_id<TAB>name` per line
        #[arg(long)]
        names: Option<PathBuf>,
    },
    /// Print a report for a round
    Report {
        /// histogram, year-series, topics or ngrams
        kind: ReportKind,
        #[command(flatten)]
        round: RoundArg,
        #[command(flatten)]
        opts: ReportArgs,
        /// Write to this file instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the review HTTP service
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
}

#[derive(Debug, Args)]
struct RoundArg {
    /// Round id [default: newest round]
    #[arg(long)]
    round: Option<u32>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Histogram bins [default: project setting]
    #[arg(long)]
    bins: Option<usize>,
    /// Year-series cut [default: the round's cut]
    #[arg(long)]
    percentile: Option<f64>,
    /// N-gram table length [default: project setting]
    #[arg(long)]
    n: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.downcast_ref::<ProjectError>().map_or("error", ProjectError::code);
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("error[{code}]: {message}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let root = Project::resolve_root(cli.project.as_deref());
    if let Command::Init { stopwords, lemmas, reducer, min_token_length } = cli.command {
        Project::init(&root, InitOptions { stopwords, lemmas, reducer, min_token_length })?;
        println!("initialized project at {}", root.display());
        return Ok(());
    }

    let mut project = Project::open(&root)?;
    let _lock = project.lock()?;
    match cli.command {
        Command::Init { .. } => unreachable!("handled above"),
        Command::Ingest { manifest } => {
            let s = project.ingest(&manifest)?;
            println!(
                "ingested {} documents ({} skipped, {} failed), vocabulary {}, {} tokens",
                s.documents, s.skipped, s.failures, s.vocabulary, s.total_tokens
            );
        }
        Command::Rank { seed_manifest, metric, per_seed, parent_round } => {
            let r = project.rank(&seed_manifest, metric, per_seed, parent_round)?;
            println!("round {}: scored {} documents from {} ({})", r.round_id, r.parent_size, r.parent, r.metric);
        }
        Command::Winnow { percentile, round, metric } => {
            let r = project.winnow(round.round, percentile, metric)?;
            println!(
                "round {}: {} of {} documents kept at {}% ({})",
                r.round_id, r.survivors, r.parent_size, percentile, r.metric
            );
        }
        Command::Sample { round, bands, k, seed } => {
            let tranches = project.sample(round.round, &bands, k, seed)?;
            let total: usize = tranches.iter().map(|t| t.sample_size()).sum();
            println!("sampled {total} documents in {} tranches (rng seed {seed})", tranches.len());
            for t in &tranches {
                println!("tranche {}\t{}\t{}", t.tranche_id, t.band, t.sample_size());
            }
        }
        Command::Label { file, round } => {
            let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let report = project.label_file(round.round, &text)?;
            println!(
                "accepted {} labels, {} conflicts, {} rejected",
                report.accepted,
                report.conflicts.len(),
                report.rejected.len()
            );
            for c in &report.conflicts {
                println!("conflict\t{}\tkept {}\tdiscarded {}", c.kept.doc_id, c.kept.timestamp.to_rfc3339(), c.discarded.timestamp.to_rfc3339());
            }
            for (label, reason) in &report.rejected {
                println!("rejected\t{}\t{reason}", label.doc_id);
            }
        }
        Command::HitRate { round } => {
            println!("{}", project.hit_rate(round.round)?);
        }
        Command::Reseed { round, metric } => {
            let r = project.reseed(round.round, metric)?;
            println!("round {}: scored {} documents from {} ({})", r.round_id, r.parent_size, r.parent, r.metric);
        }
        Command::Topics { round, k, alpha, beta, iterations, seed, source, names } => {
            let mut defaults = project.config().lda;
            if let Some(k) = k {
                defaults.topics = k;
                defaults.alpha = None;
            }
            let mut params = defaults.params(seed);
            if let Some(a) = alpha {
                params.alpha = a;
            }
            if let Some(b) = beta {
                params.beta = b;
            }
            if let Some(n) = iterations {
                params.iterations = n;
            }
            let names: Option<BTreeMap<usize, String>> = match names {
                Some(path) => {
                    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    Some(parse_name_map(&text)?)
                }
                None => None,
            };
            let summaries = project.train_topics(round.round, params, source, names)?;
            eprintln!(
                "trained {} topics, {} sweeps (rng seed {seed})",
                params.topics, params.iterations
            );
            print!("{}", topic_report(&summaries));
        }
        Command::Report { kind, round, opts, out } => {
            let opts = ReportOptions { bins: opts.bins, percentile: opts.percentile, n: opts.n };
            let text = project.report(round.round, kind, opts)?;
            match out {
                Some(path) => fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
        }
        Command::Serve { bind } => {
            let runtime = tokio::runtime::Runtime::new()?;
            eprintln!("serving {} on http://{bind}", root.display());
            runtime.block_on(winnower_review_api::serve(project, &bind))?;
        }
    }
    Ok(())
}
