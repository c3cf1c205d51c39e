//! Kullback-Leibler, symmetric (Jeffreys) KL and Jensen-Shannon divergences
//! between a seed distribution and document distributions, in nats.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, WordId};
use crate::distribution::{
    build_distribution, smooth, DistributionError, DistributionSource, SmoothingConfig, VocabularyMode,
    WordDistribution,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DivergenceError {
    #[error("unsmoothed input: word {0} has zero mass in the second distribution")]
    UnsmoothedInput(WordId),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error("unknown metric {0:?} (expected kld, skld or jsd)")]
    UnknownMetric(String),
    #[error("bad seed reference {0:?}")]
    BadSeedRef(String),
    #[error("score table line {line}: {message}")]
    Table { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "kld")]
    Kld,
    #[serde(rename = "skld")]
    SymmetricKld,
    #[serde(rename = "jsd")]
    Jsd,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Kld, Metric::SymmetricKld, Metric::Jsd];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Kld => "kld",
            Metric::SymmetricKld => "skld",
            Metric::Jsd => "jsd",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = DivergenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "kld" | "kl" => Ok(Metric::Kld),
            "skld" | "symmetric-kld" | "symmetric_kld" | "jeffreys" => Ok(Metric::SymmetricKld),
            "jsd" | "js" => Ok(Metric::Jsd),
            _ => Err(DivergenceError::UnknownMetric(s.to_string())),
        }
    }
}

/// Which seed distribution a score was measured against.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SeedRef {
    Pooled,
    Seed(String),
}

impl fmt::Display for SeedRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeedRef::Pooled => f.write_str("pooled"),
            SeedRef::Seed(id) => write!(f, "seed:{id}"),
        }
    }
}

impl FromStr for SeedRef {
    type Err = DivergenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "pooled" {
            return Ok(SeedRef::Pooled);
        }
        match s.strip_prefix("seed:") {
            Some(id) if !id.is_empty() => Ok(SeedRef::Seed(id.to_string())),
            _ => Err(DivergenceError::BadSeedRef(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceScore {
    pub doc_id: String,
    pub metric: Metric,
    pub seed_ref: SeedRef,
    pub value: f64,
}

/// `Σ p(w)·ln(p(w)/q(w))` over the support of `p`.
///
/// `q` must be positive wherever `p` is; smooth it first.
pub fn kld(p: &WordDistribution, q: &WordDistribution) -> Result<f64, DivergenceError> {
    let qe = q.entries();
    let mut j = 0;
    let mut total = 0.0;
    for &(w, pw) in p.entries() {
        while j < qe.len() && qe[j].0 < w {
            j += 1;
        }
        match qe.get(j) {
            Some(&(qw, qv)) if qw == w && qv > 0.0 => total += pw * (pw / qv).ln(),
            _ => return Err(DivergenceError::UnsmoothedInput(w)),
        }
    }
    Ok(total.max(0.0))
}

/// True when `q` is positive on every word of `p`'s support.
fn covers(q: &WordDistribution, p: &WordDistribution) -> bool {
    p.entries().iter().all(|&(w, _)| q.prob(w) > 0.0)
}

/// `kld(p, q)`, smoothing `q` only when it misses part of `p`'s support.
fn smoothed_kld(
    p: &WordDistribution,
    q: &WordDistribution,
    reference: Option<&[WordId]>,
    cfg: &SmoothingConfig,
) -> Result<f64, DivergenceError> {
    if covers(q, p) {
        return kld(p, q);
    }
    let support: Vec<WordId>;
    let reference = match reference {
        Some(r) => r,
        None => {
            support = p.support().collect();
            &support
        }
    };
    let q_smoothed = smooth(q, reference, cfg)?;
    kld(p, &q_smoothed)
}

/// `kld(p, smooth(q)) + kld(q, smooth(p))`, each side smoothed over the pair's
/// union when it lacks a word the other side carries.
pub fn symmetric_kld(
    p: &WordDistribution,
    q: &WordDistribution,
    cfg: &SmoothingConfig,
) -> Result<f64, DivergenceError> {
    Ok(smoothed_kld(p, q, None, cfg)? + smoothed_kld(q, p, None, cfg)?)
}

/// Jensen-Shannon divergence against the midpoint mixture; bounded by ln 2.
pub fn jsd(p: &WordDistribution, q: &WordDistribution) -> f64 {
    let (pe, qe) = (p.entries(), q.entries());
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    // only words carried by one side contribute ½·x·ln 2 each
    while i < pe.len() || j < qe.len() {
        let (pw, qw) = match (pe.get(i), qe.get(j)) {
            (Some(&(a, pa)), Some(&(b, qb))) if a == b => {
                i += 1;
                j += 1;
                (pa, qb)
            }
            (Some(&(a, pa)), Some(&(b, _))) if a < b => {
                i += 1;
                (pa, 0.0)
            }
            (Some(_), Some(&(_, qb))) => {
                j += 1;
                (0.0, qb)
            }
            (Some(&(_, pa)), None) => {
                i += 1;
                (pa, 0.0)
            }
            (None, Some(&(_, qb))) => {
                j += 1;
                (0.0, qb)
            }
            (None, None) => unreachable!(),
        };
        let m = 0.5 * (pw + qw);
        if pw > 0.0 {
            total += 0.5 * pw * (pw / m).ln();
        }
        if qw > 0.0 {
            total += 0.5 * qw * (qw / m).ln();
        }
    }
    total.clamp(0.0, std::f64::consts::LN_2)
}

/// A named seed distribution to score against.
#[derive(Debug, Clone)]
pub struct SeedDistribution {
    pub seed_ref: SeedRef,
    pub distribution: WordDistribution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFailure {
    pub doc_id: String,
    pub seed_ref: Option<SeedRef>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreBatch {
    /// Sorted by `(doc_id, seed_ref)`.
    pub scores: Vec<DivergenceScore>,
    pub failures: Vec<ScoreFailure>,
}

impl ScoreBatch {
    /// Scores against one seed reference, in doc_id order.
    pub fn for_seed(&self, seed_ref: &SeedRef) -> Vec<DivergenceScore> {
        self.scores
            .iter()
            .filter(|s| &s.seed_ref == seed_ref)
            .cloned()
            .collect()
    }
}

/// Divergence of one document distribution from one seed.
pub fn score_pair(
    seed: &WordDistribution,
    doc: &WordDistribution,
    metric: Metric,
    cfg: &SmoothingConfig,
    corpus_support: Option<&[WordId]>,
) -> Result<f64, DivergenceError> {
    match metric {
        Metric::Kld => smoothed_kld(seed, doc, corpus_support, cfg),
        Metric::SymmetricKld => {
            Ok(smoothed_kld(seed, doc, corpus_support, cfg)? + smoothed_kld(doc, seed, corpus_support, cfg)?)
        }
        Metric::Jsd => Ok(jsd(seed, doc)),
    }
}

/// Score every document against every seed.
///
/// `vocabulary_size` bounds the word ids in play (corpus vocabulary plus
/// any seed-only words); it is used in corpus-wide smoothing mode.
pub fn score_corpus<'a, I>(
    seeds: &[SeedDistribution],
    documents: I,
    vocabulary_size: usize,
    metric: Metric,
    cfg: &SmoothingConfig,
) -> ScoreBatch
where
    I: IntoIterator<Item = &'a Document>,
{
    let docs: Vec<&Document> = documents.into_iter().collect();
    let all_ids: Option<Vec<WordId>> = match cfg.vocabulary_mode {
        VocabularyMode::UnionOfPair => None,
        VocabularyMode::CorpusWide => Some((0..vocabulary_size as WordId).collect()),
    };

    let per_doc: Vec<(Vec<DivergenceScore>, Vec<ScoreFailure>)> = docs
        .par_iter()
        .map(|doc| {
            let mut scores = Vec::with_capacity(seeds.len());
            let mut failures = Vec::new();
            let dist = match build_distribution(&doc.counts(), DistributionSource::Document(doc.doc_id.clone())) {
                Ok(d) => d,
                Err(e) => {
                    failures.push(ScoreFailure {
                        doc_id: doc.doc_id.clone(),
                        seed_ref: None,
                        message: e.to_string(),
                    });
                    return (scores, failures);
                }
            };
            for seed in seeds {
                match score_pair(&seed.distribution, &dist, metric, cfg, all_ids.as_deref()) {
                    Ok(value) => scores.push(DivergenceScore {
                        doc_id: doc.doc_id.clone(),
                        metric,
                        seed_ref: seed.seed_ref.clone(),
                        value,
                    }),
                    Err(e) => failures.push(ScoreFailure {
                        doc_id: doc.doc_id.clone(),
                        seed_ref: Some(seed.seed_ref.clone()),
                        message: e.to_string(),
                    }),
                }
            }
            (scores, failures)
        })
        .collect();

    let mut batch = ScoreBatch::default();
    for (s, f) in per_doc {
        batch.scores.extend(s);
        batch.failures.extend(f);
    }
    batch
        .scores
        .sort_by(|a, b| a.doc_id.cmp(&b.doc_id).then_with(|| a.seed_ref.cmp(&b.seed_ref)));
    batch.failures.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    batch
}

/// `doc_id<TAB>metric<TAB>seed_ref<TAB>value` lines.
pub fn scores_to_tsv(scores: &[DivergenceScore]) -> String {
    scores
        .iter()
        .map(|s| format!("{}\t{}\t{}\t{}\n", s.doc_id, s.metric, s.seed_ref, s.value))
        .collect()
}

pub fn parse_scores_tsv(text: &str) -> Result<Vec<DivergenceScore>, DivergenceError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| DivergenceError::Table { line: idx + 1, message };
        let fields: Vec<&str> = line.split('\t').collect();
        let [doc_id, metric, seed_ref, value] = fields[..] else {
            return Err(bad(format!("expected 4 fields, got {}", fields.len())));
        };
        out.push(DivergenceScore {
            doc_id: doc_id.to_string(),
            metric: metric.parse()?,
            seed_ref: seed_ref.parse()?,
            value: value.parse().map_err(|e| bad(format!("value {value:?}: {e}")))?,
        });
    }
    Ok(out)
}
