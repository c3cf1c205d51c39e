//! A project directory: configuration, the ingested corpus cache, and the
//! append-only round history shared by the command line and the review API.
//!
//! ```text
//! project.toml
//! stopwords.txt, lemmas.tsv      (optional copies made by init)
//! cache/corpus/                  (see `cache`)
//! rounds/round-0001/
//!     round.json seeds.tsv scores.tsv failures.tsv
//!     survivors.tsv tranches.tsv labels.tsv
//! topics/round-0001/
//!     params.json summary.tsv names.tsv
//! ```
//!
//! Only the newest round accepts writes; every earlier round is closed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::cache::{self, CacheError};
use crate::corpus::{ingest_corpus, read_manifest, Corpus, Document, IngestError, TextRef};
use crate::distribution::SmoothingConfig;
use crate::divergence::{parse_scores_tsv, scores_to_tsv, DivergenceError, DivergenceScore, Metric, SeedRef};
use crate::normalize::{parse_stopwords, LemmaTable, NormalizationConfig, Reducer};
use crate::report::{self, ReportError, DEFAULT_BINS};
use crate::topics::{self, LdaParams, TopicError, TopicSummary, TOP_WORDS};
use crate::winnow::{
    self, cut, ingest_labels, labels_to_tsv, parse_labels, parse_tranches_tsv, rank_scores, sample_tranches,
    tranches_to_tsv, Label, LabelReport, NamedSeed, ParentRef, PercentileBand, Round, RoundSpec, RoundStatus,
    SeedScoring, SeedSpec, Tranche, WinnowError,
};

pub const PROJECT_FILE: &str = "project.toml";
/// Environment variable overriding the project root.
pub const ROOT_ENV: &str = "WINNOWER_PROJECT";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, thiserror::Error)]
pub enum ProjectError {
    #[error("no project at {0} (run init first)")]
    NotAProject(PathBuf),
    #[error("project already initialized at {0}")]
    AlreadyInitialized(PathBuf),
    #[error("project is locked by another process ({0}); remove it if stale")]
    Locked(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("corpus not ingested or cache stale (run ingest)")]
    NoCorpus,
    #[error("no rounds yet (run rank)")]
    NoRounds,
    #[error("unknown round {0}")]
    UnknownRound(u32),
    #[error("unknown document {0:?}")]
    UnknownDocument(String),
    #[error("round {0} has no survivors yet (run winnow)")]
    NotWinnowed(u32),
    #[error("round {0} is already sampled")]
    AlreadySampled(u32),
    #[error("no topic model for round {0} (run topics)")]
    NoTopics(u32),
    #[error("{0}")]
    BadInput(String),
    #[error("corrupt round file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Winnow(#[from] WinnowError),
    #[error(transparent)]
    Divergence(#[from] DivergenceError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Topic(#[from] TopicError),
}

impl ProjectError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            ProjectError::NotAProject(_) => "not_a_project",
            ProjectError::AlreadyInitialized(_) => "already_initialized",
            ProjectError::Locked(_) => "locked",
            ProjectError::Io { .. } => "io",
            ProjectError::Config { .. } => "config",
            ProjectError::NoCorpus => "no_corpus",
            ProjectError::NoRounds => "no_rounds",
            ProjectError::UnknownRound(_) => "unknown_round",
            ProjectError::UnknownDocument(_) => "unknown_document",
            ProjectError::NotWinnowed(_) => "not_winnowed",
            ProjectError::AlreadySampled(_) => "already_sampled",
            ProjectError::NoTopics(_) => "no_topics",
            ProjectError::BadInput(_) => "bad_input",
            ProjectError::Corrupt { .. } => "corrupt",
            ProjectError::Ingest(_) => "ingest",
            ProjectError::Cache(_) => "cache",
            ProjectError::Winnow(e) => match e {
                WinnowError::RoundClosed(_) => "round_closed",
                WinnowError::NothingLabeled => "nothing_labeled",
                WinnowError::NoRelevantLabels(_) => "no_relevant_labels",
                WinnowError::Percentile(_)
                | WinnowError::BadBand(..)
                | WinnowError::OverlappingBands(..)
                | WinnowError::ZeroSample
                | WinnowError::LabelLine { .. }
                | WinnowError::TrancheLine { .. } => "bad_input",
                _ => "winnow",
            },
            ProjectError::Divergence(_) => "divergence",
            ProjectError::Report(_) => "report",
            ProjectError::Topic(TopicError::UnknownTopics(_)) => "unknown_topic",
            ProjectError::Topic(_) => "topics",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ProjectError + '_ {
    move |source| ProjectError::Io { path: path.to_path_buf(), source }
}

/// Write via a sibling temp file and rename, so readers never see partial files.
fn write_atomic(path: &Path, contents: &str) -> Result<(), ProjectError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(contents.as_bytes()).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read(path: &Path) -> Result<String, ProjectError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn read_optional(path: &Path) -> Result<Option<String>, ProjectError> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(ProjectError::Io { path: path.to_path_buf(), source: e }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducerChoice {
    /// Lemmatizer when a lemma table is configured, otherwise none.
    #[default]
    Auto,
    None,
    Stemmer,
    Lemmatizer,
}

impl FromStr for ReducerChoice {
    type Err = ProjectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(ReducerChoice::Auto),
            "none" => Ok(ReducerChoice::None),
            "stemmer" => Ok(ReducerChoice::Stemmer),
            "lemmatizer" => Ok(ReducerChoice::Lemmatizer),
            _ => Err(ProjectError::BadInput(format!("unknown reducer {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationSettings {
    pub lowercase: bool,
    pub strip_punctuation: bool,
    pub min_token_length: usize,
    pub reducer: ReducerChoice,
    /// Relative to the project root.
    pub stopwords: Option<String>,
    pub lemmas: Option<String>,
}

impl Default for NormalizationSettings {
    fn default() -> Self {
        let d = NormalizationConfig::default();
        Self {
            lowercase: d.lowercase,
            strip_punctuation: d.strip_punctuation,
            min_token_length: d.min_token_length,
            reducer: ReducerChoice::Auto,
            stopwords: None,
            lemmas: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdaDefaults {
    pub topics: usize,
    /// Defaults to 50/topics.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
}

impl Default for LdaDefaults {
    fn default() -> Self {
        let p = LdaParams::default();
        Self { topics: p.topics, alpha: None, beta: p.beta, iterations: p.iterations }
    }
}

impl LdaDefaults {
    pub fn params(&self, rng_seed: u64) -> LdaParams {
        let mut p = LdaParams::with_topics(self.topics);
        if let Some(alpha) = self.alpha {
            p.alpha = alpha;
        }
        p.beta = self.beta;
        p.iterations = self.iterations;
        p.rng_seed = rng_seed;
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportDefaults {
    pub bins: usize,
    pub ngrams: usize,
}

impl Default for ReportDefaults {
    fn default() -> Self {
        Self { bins: DEFAULT_BINS, ngrams: TOP_WORDS }
    }
}

/// Contents of `project.toml`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    #[serde(default)]
    pub normalization: NormalizationSettings,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
    #[serde(default)]
    pub lda: LdaDefaults,
    #[serde(default)]
    pub report: ReportDefaults,
}

/// Options for `Project::init`.
#[derive(Debug, Clone, Default)]
pub struct InitOptions {
    pub stopwords: Option<PathBuf>,
    pub lemmas: Option<PathBuf>,
    pub reducer: ReducerChoice,
    pub min_token_length: Option<usize>,
}

/// Held while a process owns the project; removes the lock file on drop.
#[derive(Debug)]
pub struct ProjectLock {
    path: PathBuf,
}

impl Drop for ProjectLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub documents: usize,
    pub skipped: usize,
    pub failures: usize,
    pub vocabulary: usize,
    pub total_tokens: usize,
}

/// What `round.json` holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RoundFile {
    #[serde(flatten)]
    round: Round,
    config_hash: String,
    scoring: SeedScoring,
}

/// A round as reported to users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round_id: u32,
    pub status: RoundStatus,
    pub metric: Metric,
    pub parent: String,
    pub seed: SeedSpec,
    pub parent_size: usize,
    pub cutoff_percentile: Option<f64>,
    pub survivors: usize,
    pub sampled: usize,
    pub labeled: usize,
    pub relevant: usize,
    pub hit_rate: Option<f64>,
    pub sample_rng_seed: Option<u64>,
    pub config_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelState {
    Unlabeled,
    Relevant,
    Irrelevant,
}

/// One sampled document awaiting (or carrying) review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub doc_id: String,
    pub title: String,
    pub year: i32,
    pub score: f64,
    pub rank: usize,
    pub tranche: String,
    pub label: LabelState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportKind {
    Histogram,
    YearSeries,
    Topics,
    Ngrams,
}

impl FromStr for ReportKind {
    type Err = ProjectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "histogram" => Ok(ReportKind::Histogram),
            "year-series" => Ok(ReportKind::YearSeries),
            "topics" => Ok(ReportKind::Topics),
            "ngrams" => Ok(ReportKind::Ngrams),
            _ => Err(ProjectError::BadInput(format!("unknown report {s:?}"))),
        }
    }
}

impl fmt::Display for ReportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportKind::Histogram => "histogram",
            ReportKind::YearSeries => "year-series",
            ReportKind::Topics => "topics",
            ReportKind::Ngrams => "ngrams",
        })
    }
}

/// Overrides for report generation; unset fields take project or round defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub bins: Option<usize>,
    pub percentile: Option<f64>,
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicSource {
    /// The round's survivors.
    #[default]
    Survivors,
    /// The round's seed texts.
    Seed,
}

impl FromStr for TopicSource {
    type Err = ProjectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "survivors" => Ok(TopicSource::Survivors),
            "seed" => Ok(TopicSource::Seed),
            _ => Err(ProjectError::BadInput(format!("unknown topic source {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TopicRun {
    params: LdaParams,
    source: TopicSource,
    documents: usize,
    tokens: usize,
}

#[derive(Debug)]
pub struct Project {
    root: PathBuf,
    config: ProjectConfig,
    normalization: NormalizationConfig,
    corpus: OnceLock<Arc<Corpus>>,
}

fn round_dir_name(id: u32) -> String {
    format!("round-{id:04}")
}

fn seeds_to_tsv(seeds: &[NamedSeed]) -> String {
    let mut out = String::new();
    for seed in seeds {
        for (word, count) in &seed.counts {
            out.push_str(&format!("{}\t{word}\t{count}\n", seed.name));
        }
    }
    out
}

fn parse_seeds_tsv(text: &str) -> Result<Vec<NamedSeed>, String> {
    let mut seeds: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        let [name, word, count] = fields[..] else {
            return Err(format!("line {}: expected 3 fields", i + 1));
        };
        let count: u64 = count.parse().map_err(|_| format!("line {}: bad count", i + 1))?;
        seeds.entry(name.to_string()).or_default().insert(word.to_string(), count);
    }
    Ok(seeds.into_iter().map(|(name, counts)| NamedSeed { name, counts }).collect())
}

fn survivors_to_tsv(survivors: &[String], scores: &[DivergenceScore]) -> String {
    let value: BTreeMap<&str, f64> = scores.iter().map(|s| (s.doc_id.as_str(), s.value)).collect();
    survivors
        .iter()
        .enumerate()
        .map(|(i, id)| format!("{}\t{id}\t{}\n", i + 1, value[id.as_str()]))
        .collect()
}

fn parse_survivors(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|l| l.split('\t').nth(1))
        .map(str::to_string)
        .collect()
}

impl Project {
    /// Resolve the project root: explicit path, else `$WINNOWER_PROJECT`, else the current directory.
    pub fn resolve_root(explicit: Option<&Path>) -> PathBuf {
        match explicit {
            Some(p) => p.to_path_buf(),
            None => std::env::var_os(ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".")),
        }
    }

    pub fn init(root: &Path, opts: InitOptions) -> Result<Project, ProjectError> {
        let config_path = root.join(PROJECT_FILE);
        if config_path.exists() {
            return Err(ProjectError::AlreadyInitialized(root.to_path_buf()));
        }
        fs::create_dir_all(root.join("rounds")).map_err(io_err(root))?;
        let mut config = ProjectConfig::default();
        config.normalization.reducer = opts.reducer;
        if let Some(n) = opts.min_token_length {
            config.normalization.min_token_length = n;
        }
        if let Some(src) = &opts.stopwords {
            let text = read(src)?;
            write_atomic(&root.join("stopwords.txt"), &text)?;
            config.normalization.stopwords = Some("stopwords.txt".into());
        }
        if let Some(src) = &opts.lemmas {
            let text = read(src)?;
            LemmaTable::parse(&text).map_err(|e| ProjectError::Config {
                path: src.clone(),
                message: e.to_string(),
            })?;
            write_atomic(&root.join("lemmas.tsv"), &text)?;
            config.normalization.lemmas = Some("lemmas.tsv".into());
        }
        let text = toml::to_string(&config).map_err(|e| ProjectError::Config {
            path: config_path.clone(),
            message: e.to_string(),
        })?;
        write_atomic(&config_path, &text)?;
        Project::open(root)
    }

    pub fn open(root: &Path) -> Result<Project, ProjectError> {
        let config_path = root.join(PROJECT_FILE);
        let Some(text) = read_optional(&config_path)? else {
            return Err(ProjectError::NotAProject(root.to_path_buf()));
        };
        let config: ProjectConfig = toml::from_str(&text).map_err(|e| ProjectError::Config {
            path: config_path.clone(),
            message: e.to_string(),
        })?;
        let normalization = Self::normalization_config(root, &config.normalization)?;
        config.smoothing.validate().map_err(|e| ProjectError::Config {
            path: config_path,
            message: e.to_string(),
        })?;
        Ok(Project { root: root.to_path_buf(), config, normalization, corpus: OnceLock::new() })
    }

    fn normalization_config(root: &Path, s: &NormalizationSettings) -> Result<NormalizationConfig, ProjectError> {
        let stopwords = match &s.stopwords {
            Some(f) => parse_stopwords(&read(&root.join(f))?),
            None => BTreeSet::new(),
        };
        let lemmas = match &s.lemmas {
            Some(f) => {
                let path = root.join(f);
                let table = LemmaTable::parse(&read(&path)?).map_err(|e| ProjectError::Config {
                    path,
                    message: e.to_string(),
                })?;
                Some(table)
            }
            None => None,
        };
        let reducer = match (s.reducer, lemmas) {
            (ReducerChoice::Auto, Some(t)) | (ReducerChoice::Lemmatizer, Some(t)) => Reducer::Lemmatizer(t),
            (ReducerChoice::Auto, None) | (ReducerChoice::None, _) => Reducer::None,
            (ReducerChoice::Stemmer, _) => Reducer::Stemmer,
            (ReducerChoice::Lemmatizer, None) => {
                return Err(ProjectError::Config {
                    path: root.join(PROJECT_FILE),
                    message: "reducer = lemmatizer needs a lemma table".into(),
                })
            }
        };
        Ok(NormalizationConfig {
            lowercase: s.lowercase,
            strip_punctuation: s.strip_punctuation,
            stopwords,
            reducer,
            min_token_length: s.min_token_length,
        })
    }

    /// Take the single-process lock.
    pub fn lock(&self) -> Result<ProjectLock, ProjectError> {
        let path = self.root.join(LOCK_FILE);
        let mut f = fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => ProjectError::Locked(path.clone()),
                _ => ProjectError::Io { path: path.clone(), source: e },
            })?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(ProjectLock { path })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &ProjectConfig {
        &self.config
    }

    pub fn normalization(&self) -> &NormalizationConfig {
        &self.normalization
    }

    fn cache_dir(&self) -> PathBuf {
        self.root.join("cache").join("corpus")
    }

    fn rounds_dir(&self) -> PathBuf {
        self.root.join("rounds")
    }

    pub fn round_dir(&self, id: u32) -> PathBuf {
        self.rounds_dir().join(round_dir_name(id))
    }

    fn topics_dir(&self, id: u32) -> PathBuf {
        self.root.join("topics").join(round_dir_name(id))
    }

    pub fn ingest(&mut self, manifest: &Path) -> Result<IngestSummary, ProjectError> {
        let manifest = fs::canonicalize(manifest).map_err(io_err(manifest))?;
        let bytes = fs::read(&manifest).map_err(io_err(&manifest))?;
        let corpus = ingest_corpus(&manifest, &self.normalization)?;
        cache::save_corpus(&self.cache_dir(), &corpus, &self.normalization.config_hash(), &cache::hash_bytes(&bytes))?;
        let summary = IngestSummary {
            documents: corpus.documents.len(),
            skipped: corpus.skipped.len(),
            failures: corpus.failures.len(),
            vocabulary: corpus.vocabulary.len(),
            total_tokens: corpus.total_tokens(),
        };
        self.corpus = OnceLock::new();
        let _ = self.corpus.set(Arc::new(corpus));
        Ok(summary)
    }

    pub fn corpus(&self) -> Result<Arc<Corpus>, ProjectError> {
        if let Some(c) = self.corpus.get() {
            return Ok(c.clone());
        }
        let corpus = cache::load_corpus(&self.cache_dir(), &self.normalization.config_hash(), None)?
            .ok_or(ProjectError::NoCorpus)?;
        Ok(self.corpus.get_or_init(|| Arc::new(corpus)).clone())
    }

    /// Round ids present on disk, ascending.
    pub fn round_ids(&self) -> Result<Vec<u32>, ProjectError> {
        let dir = self.rounds_dir();
        let mut ids = Vec::new();
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(ids),
            Err(e) => return Err(ProjectError::Io { path: dir, source: e }),
        };
        for entry in entries {
            let entry = entry.map_err(io_err(&dir))?;
            let name = entry.file_name();
            if let Some(id) = name.to_str().and_then(|n| n.strip_prefix("round-")).and_then(|n| n.parse().ok()) {
                if entry.path().join("round.json").exists() {
                    ids.push(id);
                }
            }
        }
        ids.sort_unstable();
        Ok(ids)
    }

    pub fn latest_round(&self) -> Result<u32, ProjectError> {
        self.round_ids()?.last().copied().ok_or(ProjectError::NoRounds)
    }

    fn resolve_round(&self, id: Option<u32>) -> Result<u32, ProjectError> {
        match id {
            Some(id) if self.round_dir(id).join("round.json").exists() => Ok(id),
            Some(id) => Err(ProjectError::UnknownRound(id)),
            None => self.latest_round(),
        }
    }

    fn read_round_file(&self, id: u32) -> Result<RoundFile, ProjectError> {
        let path = self.round_dir(id).join("round.json");
        let text = read_optional(&path)?.ok_or(ProjectError::UnknownRound(id))?;
        serde_json::from_str(&text).map_err(|e| ProjectError::Corrupt { path, message: e.to_string() })
    }

    /// Load a round with its survivors, tranches and label log. Rounds older
    /// than the newest one report `Closed`.
    pub fn load_round(&self, id: u32) -> Result<Round, ProjectError> {
        let file = self.read_round_file(id)?;
        let mut round = file.round;
        let dir = self.round_dir(id);
        if let Some(text) = read_optional(&dir.join("survivors.tsv"))? {
            round.derived_doc_ids = parse_survivors(&text);
        }
        if let Some(text) = read_optional(&dir.join("tranches.tsv"))? {
            round.tranches = parse_tranches_tsv(&text, round.sample_rng_seed.unwrap_or(0))?;
        }
        if let Some(text) = read_optional(&dir.join("labels.tsv"))? {
            round.label_log = parse_labels(&text, id)?;
        }
        if id < self.latest_round()? {
            round.status = RoundStatus::Closed;
        }
        Ok(round)
    }

    pub fn scores(&self, id: u32) -> Result<Vec<DivergenceScore>, ProjectError> {
        let path = self.round_dir(id).join("scores.tsv");
        let text = read_optional(&path)?.ok_or(ProjectError::UnknownRound(id))?;
        Ok(parse_scores_tsv(&text)?)
    }

    fn pooled_scores(&self, id: u32) -> Result<Vec<DivergenceScore>, ProjectError> {
        Ok(self.scores(id)?.into_iter().filter(|s| s.seed_ref == SeedRef::Pooled).collect())
    }

    fn seeds(&self, id: u32) -> Result<Vec<NamedSeed>, ProjectError> {
        let path = self.round_dir(id).join("seeds.tsv");
        let text = read(&path)?;
        parse_seeds_tsv(&text).map_err(|message| ProjectError::Corrupt { path, message })
    }

    pub fn summary(&self, id: u32) -> Result<RoundSummary, ProjectError> {
        let file = self.read_round_file(id)?;
        let round = self.load_round(id)?;
        let labels = round.effective_labels();
        let relevant = labels.values().filter(|l| l.relevant).count();
        Ok(RoundSummary {
            round_id: id,
            status: round.status,
            metric: round.metric,
            parent: round.parent.to_string(),
            seed: round.seed_spec.clone(),
            parent_size: round.parent_size,
            cutoff_percentile: round.cutoff_percentile,
            survivors: round.derived_doc_ids.len(),
            sampled: round.sampled_doc_ids().len(),
            labeled: labels.len(),
            relevant,
            hit_rate: winnow::hit_rate(&round).ok(),
            sample_rng_seed: round.sample_rng_seed,
            config_hash: file.config_hash,
        })
    }

    pub fn rounds(&self) -> Result<Vec<RoundSummary>, ProjectError> {
        self.round_ids()?.into_iter().map(|id| self.summary(id)).collect()
    }

    fn parent_doc_ids(&self, parent: ParentRef) -> Result<Option<Vec<String>>, ProjectError> {
        match parent {
            ParentRef::Corpus => Ok(None),
            ParentRef::Round(id) => {
                let round = self.load_round(id)?;
                if round.cutoff_percentile.is_none() {
                    return Err(ProjectError::NotWinnowed(id));
                }
                Ok(Some(round.derived_doc_ids))
            }
        }
    }

    /// Score a new round and persist it with status `Scored`.
    fn create_round(
        &self,
        seed_spec: SeedSpec,
        seeds: &[NamedSeed],
        scoring: SeedScoring,
        metric: Metric,
        parent: ParentRef,
    ) -> Result<u32, ProjectError> {
        let corpus = self.corpus()?;
        let parent_ids = self.parent_doc_ids(parent)?;
        let round_id = self.round_ids()?.last().map_or(1, |id| id + 1);
        let run = winnow::score_round(
            &corpus,
            RoundSpec {
                round_id,
                seed_spec,
                seeds,
                scoring,
                metric,
                parent,
                parent_doc_ids: parent_ids.as_deref(),
                smoothing: self.config.smoothing,
            },
        )?;
        if run.batch.scores.is_empty() {
            return Err(ProjectError::BadInput("no document could be scored".into()));
        }

        let dir = self.round_dir(round_id);
        let staging = self.rounds_dir().join(format!(".{}.staging", round_dir_name(round_id)));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
        }
        fs::create_dir_all(&staging).map_err(io_err(&staging))?;
        write_atomic(&staging.join("seeds.tsv"), &seeds_to_tsv(seeds))?;
        write_atomic(&staging.join("scores.tsv"), &scores_to_tsv(&run.batch.scores))?;
        let failures: String = run
            .batch
            .failures
            .iter()
            .map(|f| {
                let seed = f.seed_ref.as_ref().map_or_else(|| "-".to_string(), ToString::to_string);
                format!("{}\t{seed}\t{}\n", f.doc_id, f.message.replace(['\t', '\n'], " "))
            })
            .collect();
        write_atomic(&staging.join("failures.tsv"), &failures)?;
        self.write_round_file(&staging, &run.round, scoring)?;
        fs::rename(&staging, &dir).map_err(io_err(&dir))?;
        Ok(round_id)
    }

    fn write_round_file(&self, dir: &Path, round: &Round, scoring: SeedScoring) -> Result<(), ProjectError> {
        let file = RoundFile {
            round: round.clone(),
            config_hash: self.normalization.config_hash(),
            scoring,
        };
        let json = serde_json::to_string_pretty(&file).expect("round serializes") + "\n";
        write_atomic(&dir.join("round.json"), &json)
    }

    /// Seed texts from an external manifest, normalized with the project's settings.
    pub fn load_seed_manifest(&self, manifest: &Path) -> Result<Vec<NamedSeed>, ProjectError> {
        let records = read_manifest(manifest)?;
        if records.is_empty() {
            return Err(IngestError::EmptyManifest.into());
        }
        let base = manifest.parent().unwrap_or_else(|| Path::new("."));
        let seed_corpus = crate::corpus::ingest_records(records, base, &self.normalization)?;
        if let Some(f) = seed_corpus.failures.first() {
            return Err(ProjectError::BadInput(format!("seed {}: {}", f.doc_id, f.message)));
        }
        Ok(seed_corpus
            .documents
            .iter()
            .map(|d| NamedSeed {
                name: d.doc_id.clone(),
                counts: seed_corpus.surface_counts([d.doc_id.as_str()]),
            })
            .collect())
    }

    /// Score the parent (whole corpus or a round's survivors) against external seeds.
    pub fn rank(
        &self,
        seed_manifest: &Path,
        metric: Metric,
        per_seed: bool,
        parent_round: Option<u32>,
    ) -> Result<RoundSummary, ProjectError> {
        let seeds = self.load_seed_manifest(seed_manifest)?;
        let parent = match parent_round {
            Some(id) => ParentRef::Round(self.resolve_round(Some(id))?),
            None => ParentRef::Corpus,
        };
        let spec = SeedSpec::External {
            manifest: seed_manifest.display().to_string(),
            seed_ids: seeds.iter().map(|s| s.name.clone()).collect(),
        };
        let id = self.create_round(spec, &seeds, SeedScoring { per_seed }, metric, parent)?;
        self.summary(id)
    }

    /// Cut a round at `percentile`. The newest round is cut in place while it
    /// is only scored; anything else starts a new round with the same seed and
    /// parent, rescored if the metric changes.
    pub fn winnow(&self, round: Option<u32>, percentile: f64, metric: Option<Metric>) -> Result<RoundSummary, ProjectError> {
        let id = self.resolve_round(round)?;
        let file = self.read_round_file(id)?;
        let metric = metric.unwrap_or(file.round.metric);
        let latest = self.latest_round()?;
        winnow::check_percentile(percentile)?;

        let target = if id == latest && file.round.status == RoundStatus::Scored && metric == file.round.metric {
            id
        } else {
            let seeds = self.seeds(id)?;
            self.create_round(file.round.seed_spec.clone(), &seeds, file.scoring, metric, file.round.parent)?
        };
        let mut round = self.load_round(target)?;
        let scoring = self.read_round_file(target)?.scoring;
        let pooled = self.pooled_scores(target)?;
        round.winnow(&pooled, percentile)?;
        let dir = self.round_dir(target);
        write_atomic(&dir.join("survivors.tsv"), &survivors_to_tsv(&round.derived_doc_ids, &pooled))?;
        self.write_round_file(&dir, &round, scoring)?;
        self.summary(target)
    }

    /// Draw review tranches from the newest round's ranking.
    pub fn sample(
        &self,
        round: Option<u32>,
        bands: &[PercentileBand],
        k: usize,
        rng_seed: u64,
    ) -> Result<Vec<Tranche>, ProjectError> {
        let id = self.resolve_round(round)?;
        let mut r = self.load_round(id)?;
        if r.status == RoundStatus::Closed {
            return Err(WinnowError::RoundClosed(id).into());
        }
        if r.status >= RoundStatus::Sampled {
            return Err(ProjectError::AlreadySampled(id));
        }
        let scoring = self.read_round_file(id)?.scoring;
        let pooled = self.pooled_scores(id)?;
        let tranches = sample_tranches(&pooled, bands, k, rng_seed)?;
        r.set_tranches(tranches.clone(), rng_seed)?;
        let dir = self.round_dir(id);
        write_atomic(&dir.join("tranches.tsv"), &tranches_to_tsv(&tranches))?;
        self.write_round_file(&dir, &r, scoring)?;
        Ok(tranches)
    }

    /// Append labels to a round's log. Rejected labels leave the log untouched.
    pub fn label(&self, round: Option<u32>, labels: Vec<Label>) -> Result<LabelReport, ProjectError> {
        let id = self.resolve_round(round)?;
        let mut r = self.load_round(id)?;
        let scoring = self.read_round_file(id)?.scoring;
        let before = r.status;
        let report = ingest_labels(&mut r, labels)?;
        let dir = self.round_dir(id);
        if report.accepted > 0 {
            write_atomic(&dir.join("labels.tsv"), &labels_to_tsv(&r.label_log))?;
        }
        if r.status != before {
            self.write_round_file(&dir, &r, scoring)?;
        }
        Ok(report)
    }

    /// Parse a label file and apply it to `round` (default: newest).
    pub fn label_file(&self, round: Option<u32>, text: &str) -> Result<LabelReport, ProjectError> {
        let id = self.resolve_round(round)?;
        let labels = parse_labels(text, id)?;
        self.label(Some(id), labels)
    }

    pub fn hit_rate(&self, round: Option<u32>) -> Result<f64, ProjectError> {
        let id = self.resolve_round(round)?;
        Ok(winnow::hit_rate(&self.load_round(id)?)?)
    }

    /// Start a new round seeded by `round`'s relevant labels, scoring its survivors.
    pub fn reseed(&self, round: Option<u32>, metric: Option<Metric>) -> Result<RoundSummary, ProjectError> {
        let id = self.resolve_round(round)?;
        let r = self.load_round(id)?;
        if r.status == RoundStatus::Closed {
            return Err(WinnowError::RoundClosed(id).into());
        }
        if r.cutoff_percentile.is_none() {
            return Err(ProjectError::NotWinnowed(id));
        }
        let seed_ids = winnow::assemble_next_seed(&r)?;
        let corpus = self.corpus()?;
        let mut counts = BTreeMap::new();
        for doc_id in &seed_ids {
            if corpus.document(doc_id).is_none() {
                return Err(ProjectError::UnknownDocument(doc_id.clone()));
            }
        }
        for (w, c) in corpus.surface_counts(seed_ids.iter().map(String::as_str)) {
            counts.insert(w, c);
        }
        let seeds = [NamedSeed { name: format!("round-{id}-relevant"), counts }];
        let spec = SeedSpec::Labeled { from_round: id, doc_ids: seed_ids.into_iter().collect() };
        let new_id = self.create_round(spec, &seeds, SeedScoring::default(), metric.unwrap_or(r.metric), ParentRef::Round(id))?;
        self.summary(new_id)
    }

    /// Review queue: every sampled document with its score and label state, by rank.
    pub fn queue(&self, round: Option<u32>) -> Result<Vec<QueueItem>, ProjectError> {
        let id = self.resolve_round(round)?;
        let r = self.load_round(id)?;
        let corpus = self.corpus()?;
        let pooled = self.pooled_scores(id)?;
        let value: BTreeMap<&str, f64> = pooled.iter().map(|s| (s.doc_id.as_str(), s.value)).collect();
        let labels = r.effective_labels();
        let mut items = Vec::new();
        for t in &r.tranches {
            for (rank, doc_id) in &t.sampled {
                let doc = corpus.document(doc_id).ok_or_else(|| ProjectError::UnknownDocument(doc_id.clone()))?;
                let label = match labels.get(doc_id.as_str()) {
                    None => LabelState::Unlabeled,
                    Some(l) if l.relevant => LabelState::Relevant,
                    Some(_) => LabelState::Irrelevant,
                };
                items.push(QueueItem {
                    doc_id: doc_id.clone(),
                    title: doc.title.clone(),
                    year: doc.year,
                    score: value.get(doc_id.as_str()).copied().unwrap_or(f64::NAN),
                    rank: *rank,
                    tranche: t.band.to_string(),
                    label,
                });
            }
        }
        items.sort_by(|a, b| a.rank.cmp(&b.rank));
        Ok(items)
    }

    pub fn document(&self, doc_id: &str) -> Result<Document, ProjectError> {
        let corpus = self.corpus()?;
        corpus.document(doc_id).cloned().ok_or_else(|| ProjectError::UnknownDocument(doc_id.to_string()))
    }

    pub fn document_text(&self, doc_id: &str) -> Result<String, ProjectError> {
        let doc = self.document(doc_id)?;
        match &doc.text_ref {
            TextRef::Inline(t) => Ok(t.clone()),
            TextRef::Path(p) => read(p),
        }
    }

    /// Documents a topic model or n-gram table is built from: survivors when
    /// the round has been cut, otherwise everything it scored.
    fn round_documents(&self, id: u32) -> Result<Vec<Document>, ProjectError> {
        let r = self.load_round(id)?;
        let corpus = self.corpus()?;
        let ids: Vec<String> = if r.cutoff_percentile.is_some() {
            r.derived_doc_ids
        } else {
            self.pooled_scores(id)?.into_iter().map(|s| s.doc_id).collect()
        };
        ids.iter()
            .map(|d| corpus.document(d).cloned().ok_or_else(|| ProjectError::UnknownDocument(d.clone())))
            .collect()
    }

    /// Seed texts as pseudo-documents over a private vocabulary; token order
    /// within a seed follows surface order.
    fn seed_documents(&self, id: u32) -> Result<(Vec<Document>, crate::corpus::Vocabulary), ProjectError> {
        let seeds = self.seeds(id)?;
        let vocab = crate::corpus::Vocabulary::from_words(seeds.iter().flat_map(|s| s.counts.keys().cloned()));
        let docs = seeds
            .iter()
            .map(|s| Document {
                doc_id: s.name.clone(),
                title: s.name.clone(),
                year: 0,
                text_ref: TextRef::Inline(String::new()),
                tokens: s
                    .counts
                    .iter()
                    .flat_map(|(w, &c)| std::iter::repeat(vocab.id(w).expect("seed word in vocabulary")).take(c as usize))
                    .collect(),
            })
            .collect();
        Ok((docs, vocab))
    }

    /// Fit a topic model over a round's documents and store its summary.
    pub fn train_topics(
        &self,
        round: Option<u32>,
        params: LdaParams,
        source: TopicSource,
        names: Option<BTreeMap<usize, String>>,
    ) -> Result<Vec<TopicSummary>, ProjectError> {
        let id = self.resolve_round(round)?;
        let (docs, vocab) = match source {
            TopicSource::Survivors => {
                let corpus = self.corpus()?;
                (self.round_documents(id)?, corpus.vocabulary.clone())
            }
            TopicSource::Seed => self.seed_documents(id)?,
        };
        let model = topics::train_lda(docs.iter(), &vocab, params)?;
        let summaries = topics::summarize(&model, TOP_WORDS);
        let dir = self.topics_dir(id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let run = TopicRun {
            params,
            source,
            documents: docs.len(),
            tokens: model.total_tokens(),
        };
        write_atomic(&dir.join("params.json"), &(serde_json::to_string_pretty(&run).expect("params serialize") + "\n"))?;
        write_atomic(&dir.join("summary.tsv"), &topics::topic_report(&summaries))?;
        let names = names.unwrap_or_default();
        let named = topics::assign_names(&summaries, &names)?;
        write_atomic(&dir.join("names.tsv"), &topics::name_map_to_tsv(&names))?;
        Ok(named)
    }

    /// Stored topic summaries for a round with the current names applied.
    pub fn topic_summaries(&self, round: Option<u32>) -> Result<Vec<TopicSummary>, ProjectError> {
        let id = self.resolve_round(round)?;
        let dir = self.topics_dir(id);
        let text = read_optional(&dir.join("summary.tsv"))?.ok_or(ProjectError::NoTopics(id))?;
        let summaries = topics::parse_topic_report(&text)?;
        let names = match read_optional(&dir.join("names.tsv"))? {
            Some(t) => topics::parse_name_map(&t)?,
            None => BTreeMap::new(),
        };
        Ok(topics::assign_names(&summaries, &names)?)
    }

    /// Merge `names` into a round's stored topic names.
    pub fn name_topics(&self, round: Option<u32>, names: BTreeMap<usize, String>) -> Result<Vec<TopicSummary>, ProjectError> {
        let id = self.resolve_round(round)?;
        let dir = self.topics_dir(id);
        let text = read_optional(&dir.join("summary.tsv"))?.ok_or(ProjectError::NoTopics(id))?;
        let summaries = topics::parse_topic_report(&text)?;
        let mut merged = match read_optional(&dir.join("names.tsv"))? {
            Some(t) => topics::parse_name_map(&t)?,
            None => BTreeMap::new(),
        };
        merged.extend(names);
        let named = topics::assign_names(&summaries, &merged)?;
        write_atomic(&dir.join("names.tsv"), &topics::name_map_to_tsv(&merged))?;
        Ok(named)
    }

    /// Render a report for a round. Pure: never touches round state.
    pub fn report(&self, round: Option<u32>, kind: ReportKind, opts: ReportOptions) -> Result<String, ProjectError> {
        let id = self.resolve_round(round)?;
        match kind {
            ReportKind::Histogram => {
                let bins = opts.bins.unwrap_or(self.config.report.bins);
                let hists = report::histograms_by_seed(&self.scores(id)?, bins)?;
                Ok(hists.iter().map(|h| h.to_tsv()).collect())
            }
            ReportKind::YearSeries => {
                let r = self.load_round(id)?;
                let percentile = opts
                    .percentile
                    .or(r.cutoff_percentile)
                    .ok_or_else(|| ProjectError::BadInput(format!("round {id} is not winnowed; pass a percentile")))?;
                let corpus = self.corpus()?;
                let scores = self.pooled_scores(id)?;
                let years = report::year_index(&corpus.documents);
                Ok(report::year_series(&scores, &years, percentile)?.to_tsv())
            }
            ReportKind::Topics => Ok(topics::topic_report(&self.topic_summaries(Some(id))?)),
            ReportKind::Ngrams => {
                let corpus = self.corpus()?;
                let docs = self.round_documents(id)?;
                let n = opts.n.unwrap_or(self.config.report.ngrams);
                Ok(report::ngrams_to_tsv(&report::top_ngrams(&docs, &corpus.vocabulary, n)))
            }
        }
    }

    /// Survivors of a round with their rank and pooled score.
    pub fn survivors(&self, round: Option<u32>) -> Result<Vec<(usize, String, f64)>, ProjectError> {
        let id = self.resolve_round(round)?;
        let r = self.load_round(id)?;
        if r.cutoff_percentile.is_none() {
            return Err(ProjectError::NotWinnowed(id));
        }
        let pooled = self.pooled_scores(id)?;
        let ranked = rank_scores(&pooled);
        let survivors: BTreeSet<&str> = r.derived_doc_ids.iter().map(String::as_str).collect();
        Ok(ranked
            .iter()
            .enumerate()
            .filter(|(_, s)| survivors.contains(s.doc_id.as_str()))
            .map(|(i, s)| (i + 1, s.doc_id.clone(), s.value))
            .collect())
    }

    /// Re-derive a round's cut from its stored scores; used to audit survivors.tsv.
    pub fn recompute_cut(&self, id: u32) -> Result<Vec<String>, ProjectError> {
        let r = self.load_round(id)?;
        let p = r.cutoff_percentile.ok_or(ProjectError::NotWinnowed(id))?;
        Ok(cut(&self.pooled_scores(id)?, p)?)
    }
}
