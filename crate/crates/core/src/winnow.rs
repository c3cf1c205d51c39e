//! Winnowing rounds: percentile cuts over divergence scores, tranche sampling
//! for expert review, relevance labels, hit rate and next-round seeds.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Vocabulary, WordId};
use crate::distribution::{build_distribution, DistributionError, DistributionSource, SmoothingConfig, TermCounts};
use crate::divergence::{score_corpus, DivergenceScore, Metric, ScoreBatch, SeedDistribution, SeedRef};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WinnowError {
    #[error("percentile {0} outside (0, 100]")]
    Percentile(f64),
    #[error("no scores to cut")]
    NoScores,
    #[error("bad percentile band ({0}, {1}]")]
    BadBand(f64, f64),
    #[error("percentile bands ({0}, {1}] and ({2}, {3}] overlap")]
    OverlappingBands(f64, f64, f64, f64),
    #[error("samples per band must be at least 1")]
    ZeroSample,
    #[error("round {0} is closed")]
    RoundClosed(u32),
    #[error("nothing labeled")]
    NothingLabeled,
    #[error("no relevant labels in round {0}")]
    NoRelevantLabels(u32),
    #[error("seed set is empty")]
    EmptySeed,
    #[error("seed {0:?} has no tokens")]
    EmptySeedDocument(String),
    #[error("label line {line}: {message}")]
    LabelLine { line: usize, message: String },
    #[error("tranche line {line}: {message}")]
    TrancheLine { line: usize, message: String },
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

pub fn check_percentile(percentile: f64) -> Result<(), WinnowError> {
    if percentile > 0.0 && percentile <= 100.0 {
        Ok(())
    } else {
        Err(WinnowError::Percentile(percentile))
    }
}

/// `ceil(percentile / 100 · n)`, clamped to `1..=n` for non-empty input.
///
/// Products that land within floating-point noise of an integer are taken
/// as that integer, so `40 % of 5` is 2 rather than 3.
pub fn cut_size(n: usize, percentile: f64) -> usize {
    if n == 0 {
        return 0;
    }
    let exact = percentile * n as f64 / 100.0;
    let nearest = exact.round();
    let k = if (exact - nearest).abs() <= 1e-9 * exact.max(1.0) {
        nearest
    } else {
        exact.ceil()
    };
    (k as usize).clamp(1, n)
}

/// Scores ordered most-similar first: ascending value, then doc_id.
pub fn rank_scores(scores: &[DivergenceScore]) -> Vec<&DivergenceScore> {
    let mut ranked: Vec<&DivergenceScore> = scores.iter().collect();
    ranked.sort_by(|a, b| a.value.total_cmp(&b.value).then_with(|| a.doc_id.cmp(&b.doc_id)));
    ranked
}

/// The `ceil(p% · N)` documents with the smallest divergence, in rank order.
pub fn cut(scores: &[DivergenceScore], percentile: f64) -> Result<Vec<String>, WinnowError> {
    check_percentile(percentile)?;
    if scores.is_empty() {
        return Err(WinnowError::NoScores);
    }
    let k = cut_size(scores.len(), percentile);
    Ok(rank_scores(scores)
        .into_iter()
        .take(k)
        .map(|s| s.doc_id.clone())
        .collect())
}

/// Half-open percentile band `(low, high]` of the ranked corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentileBand {
    pub low: f64,
    pub high: f64,
}

impl PercentileBand {
    pub fn new(low: f64, high: f64) -> Result<Self, WinnowError> {
        if !(low >= 0.0 && low < high && high <= 100.0) {
            return Err(WinnowError::BadBand(low, high));
        }
        Ok(Self { low, high })
    }

    /// 1-based inclusive rank range covered by the band over `n` documents.
    pub fn rank_range(&self, n: usize) -> std::ops::RangeInclusive<usize> {
        let start = if self.low == 0.0 { 0 } else { cut_size(n, self.low) };
        let end = cut_size(n, self.high);
        (start + 1)..=end
    }

    /// The three review bands read at the 1 %, 5 % and 25 % cut points.
    pub fn default_plan() -> Vec<PercentileBand> {
        vec![
            PercentileBand { low: 0.0, high: 1.0 },
            PercentileBand { low: 1.0, high: 5.0 },
            PercentileBand { low: 5.0, high: 25.0 },
        ]
    }
}

impl fmt::Display for PercentileBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.low, self.high)
    }
}

impl FromStr for PercentileBand {
    type Err = String;

    /// `low-high`, e.g. `0-1` or `5-25`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (lo, hi) = s.split_once('-').ok_or_else(|| format!("band {s:?} must look like low-high"))?;
        let lo: f64 = lo.trim().parse().map_err(|e| format!("band {s:?}: {e}"))?;
        let hi: f64 = hi.trim().parse().map_err(|e| format!("band {s:?}: {e}"))?;
        PercentileBand::new(lo, hi).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tranche {
    pub tranche_id: usize,
    pub band: PercentileBand,
    /// `(rank, doc_id)` pairs in rank order.
    pub sampled: Vec<(usize, String)>,
    pub rng_seed: u64,
}

impl Tranche {
    pub fn sample_size(&self) -> usize {
        self.sampled.len()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.sampled.iter().map(|(_, id)| id.as_str())
    }
}

/// Uniform sampling without replacement inside each band's rank range.
///
/// One ChaCha8 stream seeded from `rng_seed` feeds the bands in order.
pub fn sample_tranches(
    scores: &[DivergenceScore],
    bands: &[PercentileBand],
    k_per_band: usize,
    rng_seed: u64,
) -> Result<Vec<Tranche>, WinnowError> {
    if k_per_band == 0 {
        return Err(WinnowError::ZeroSample);
    }
    if scores.is_empty() {
        return Err(WinnowError::NoScores);
    }
    for band in bands {
        PercentileBand::new(band.low, band.high)?;
    }
    let mut sorted = bands.to_vec();
    sorted.sort_by(|a, b| a.low.total_cmp(&b.low));
    for pair in sorted.windows(2) {
        if pair[1].low < pair[0].high {
            return Err(WinnowError::OverlappingBands(pair[0].low, pair[0].high, pair[1].low, pair[1].high));
        }
    }

    let ranked = rank_scores(scores);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut tranches = Vec::with_capacity(bands.len());
    for (tranche_id, band) in bands.iter().enumerate() {
        let range = band.rank_range(ranked.len());
        let (start, len) = (*range.start(), range.clone().count());
        let mut picked: Vec<usize> = if len <= k_per_band {
            (0..len).collect()
        } else {
            sample(&mut rng, len, k_per_band).into_vec()
        };
        picked.sort_unstable();
        let sampled = picked
            .into_iter()
            .map(|offset| {
                let rank = start + offset;
                (rank, ranked[rank - 1].doc_id.clone())
            })
            .collect();
        tranches.push(Tranche {
            tranche_id,
            band: *band,
            sampled,
            rng_seed,
        });
    }
    Ok(tranches)
}

/// `tranche_id<TAB>band_low<TAB>band_high<TAB>rank<TAB>doc_id` lines.
pub fn tranches_to_tsv(tranches: &[Tranche]) -> String {
    let mut out = String::new();
    for t in tranches {
        for (rank, doc_id) in &t.sampled {
            out.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", t.tranche_id, t.band.low, t.band.high, rank, doc_id));
        }
    }
    out
}

pub fn parse_tranches_tsv(text: &str, rng_seed: u64) -> Result<Vec<Tranche>, WinnowError> {
    let mut tranches: Vec<Tranche> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| WinnowError::TrancheLine { line: idx + 1, message };
        let f: Vec<&str> = line.split('\t').collect();
        let [id, lo, hi, rank, doc_id] = f[..] else {
            return Err(bad(format!("expected 5 fields, got {}", f.len())));
        };
        let id: usize = id.parse().map_err(|e| bad(format!("tranche id: {e}")))?;
        let band = PercentileBand {
            low: lo.parse().map_err(|e| bad(format!("band low: {e}")))?,
            high: hi.parse().map_err(|e| bad(format!("band high: {e}")))?,
        };
        let rank: usize = rank.parse().map_err(|e| bad(format!("rank: {e}")))?;
        match tranches.last_mut() {
            Some(t) if t.tranche_id == id => t.sampled.push((rank, doc_id.to_string())),
            _ => tranches.push(Tranche {
                tranche_id: id,
                band,
                sampled: vec![(rank, doc_id.to_string())],
                rng_seed,
            }),
        }
    }
    Ok(tranches)
}

/// One expert judgment on one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub doc_id: String,
    pub relevant: bool,
    pub annotator: String,
    pub round_id: u32,
    pub timestamp: DateTime<Utc>,
}

impl Label {
    pub fn to_tsv_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\n",
            self.doc_id,
            u8::from(self.relevant),
            self.annotator,
            self.timestamp.to_rfc3339_opts(SecondsFormat::AutoSi, true)
        )
    }
}

/// Parse `doc_id<TAB>relevant(0|1)<TAB>annotator<TAB>iso8601` lines for `round_id`.
pub fn parse_labels(text: &str, round_id: u32) -> Result<Vec<Label>, WinnowError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| WinnowError::LabelLine { line: idx + 1, message };
        let f: Vec<&str> = line.split('\t').collect();
        let [doc_id, relevant, annotator, ts] = f[..] else {
            return Err(bad(format!("expected 4 tab-separated fields, got {}", f.len())));
        };
        let relevant = match relevant {
            "1" => true,
            "0" => false,
            other => return Err(bad(format!("relevant must be 0 or 1, got {other:?}"))),
        };
        let timestamp = DateTime::parse_from_rfc3339(ts)
            .map_err(|e| bad(format!("timestamp {ts:?}: {e}")))?
            .with_timezone(&Utc);
        out.push(Label {
            doc_id: doc_id.to_string(),
            relevant,
            annotator: annotator.to_string(),
            round_id,
            timestamp,
        });
    }
    Ok(out)
}

pub fn labels_to_tsv(labels: &[Label]) -> String {
    labels.iter().map(Label::to_tsv_line).collect()
}

/// Where a round's seed distribution comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SeedSpec {
    /// Seed texts ingested from an external manifest.
    External { manifest: String, seed_ids: Vec<String> },
    /// Documents an expert labeled relevant in an earlier round.
    Labeled { from_round: u32, doc_ids: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum ParentRef {
    Corpus,
    Round(u32),
}

impl fmt::Display for ParentRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParentRef::Corpus => f.write_str("corpus"),
            ParentRef::Round(id) => write!(f, "round:{id}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundStatus {
    Scored,
    Winnowed,
    Sampled,
    Labeled,
    Closed,
}

impl fmt::Display for RoundStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RoundStatus::Scored => "scored",
            RoundStatus::Winnowed => "winnowed",
            RoundStatus::Sampled => "sampled",
            RoundStatus::Labeled => "labeled",
            RoundStatus::Closed => "closed",
        };
        f.write_str(s)
    }
}

/// One winnowing iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub round_id: u32,
    pub seed_spec: SeedSpec,
    pub metric: Metric,
    pub parent: ParentRef,
    pub smoothing: SmoothingConfig,
    pub status: RoundStatus,
    /// Number of parent documents scored.
    pub parent_size: usize,
    pub cutoff_percentile: Option<f64>,
    pub sample_rng_seed: Option<u64>,
    #[serde(skip)]
    pub derived_doc_ids: Vec<String>,
    #[serde(skip)]
    pub tranches: Vec<Tranche>,
    /// Every accepted label in ingestion order.
    #[serde(skip)]
    pub label_log: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelConflict {
    pub kept: Label,
    pub discarded: Label,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelReport {
    pub accepted: usize,
    pub conflicts: Vec<LabelConflict>,
    pub rejected: Vec<(Label, String)>,
}

impl Round {
    pub fn new(round_id: u32, seed_spec: SeedSpec, metric: Metric, parent: ParentRef, smoothing: SmoothingConfig) -> Self {
        Self {
            round_id,
            seed_spec,
            metric,
            parent,
            smoothing,
            status: RoundStatus::Scored,
            parent_size: 0,
            cutoff_percentile: None,
            sample_rng_seed: None,
            derived_doc_ids: Vec::new(),
            tranches: Vec::new(),
            label_log: Vec::new(),
        }
    }

    pub fn sampled_doc_ids(&self) -> BTreeSet<&str> {
        self.tranches.iter().flat_map(Tranche::doc_ids).collect()
    }

    fn labelable(&self, doc_id: &str) -> bool {
        self.derived_doc_ids.iter().any(|d| d == doc_id) || self.tranches.iter().any(|t| t.doc_ids().any(|d| d == doc_id))
    }

    /// Last-write-wins by timestamp; equal timestamps go to the later entry.
    pub fn effective_labels(&self) -> BTreeMap<&str, &Label> {
        let mut out: BTreeMap<&str, &Label> = BTreeMap::new();
        for label in &self.label_log {
            match out.get(label.doc_id.as_str()) {
                Some(prev) if prev.timestamp > label.timestamp => {}
                _ => {
                    out.insert(label.doc_id.as_str(), label);
                }
            }
        }
        out
    }

    /// Apply `cut` to this round's scores.
    pub fn winnow(&mut self, scores: &[DivergenceScore], percentile: f64) -> Result<(), WinnowError> {
        if self.status == RoundStatus::Closed {
            return Err(WinnowError::RoundClosed(self.round_id));
        }
        self.derived_doc_ids = cut(scores, percentile)?;
        self.cutoff_percentile = Some(percentile);
        self.status = self.status.max(RoundStatus::Winnowed);
        Ok(())
    }

    pub fn set_tranches(&mut self, tranches: Vec<Tranche>, rng_seed: u64) -> Result<(), WinnowError> {
        if self.status == RoundStatus::Closed {
            return Err(WinnowError::RoundClosed(self.round_id));
        }
        self.tranches = tranches;
        self.sample_rng_seed = Some(rng_seed);
        self.status = self.status.max(RoundStatus::Sampled);
        Ok(())
    }
}

/// Merge `labels` into `round`'s log.
pub fn ingest_labels(round: &mut Round, labels: Vec<Label>) -> Result<LabelReport, WinnowError> {
    if round.status == RoundStatus::Closed {
        return Err(WinnowError::RoundClosed(round.round_id));
    }
    let mut report = LabelReport::default();
    let mut effective: HashMap<String, Label> = round
        .effective_labels()
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect();
    for label in labels {
        if label.round_id != round.round_id {
            let reason = format!("label is for round {}, not {}", label.round_id, round.round_id);
            report.rejected.push((label, reason));
            continue;
        }
        if !round.labelable(&label.doc_id) {
            let reason = format!("doc {:?} is neither sampled nor derived in round {}", label.doc_id, round.round_id);
            report.rejected.push((label, reason));
            continue;
        }
        if let Some(prev) = effective.get(&label.doc_id) {
            let conflict = if prev.timestamp > label.timestamp {
                LabelConflict { kept: prev.clone(), discarded: label.clone() }
            } else {
                LabelConflict { kept: label.clone(), discarded: prev.clone() }
            };
            effective.insert(label.doc_id.clone(), conflict.kept.clone());
            report.conflicts.push(conflict);
        } else {
            effective.insert(label.doc_id.clone(), label.clone());
        }
        round.label_log.push(label);
        report.accepted += 1;
    }
    if report.accepted > 0 {
        round.status = round.status.max(RoundStatus::Labeled);
    }
    Ok(report)
}

/// Fraction of effective labels marked relevant.
pub fn hit_rate(round: &Round) -> Result<f64, WinnowError> {
    let labels = round.effective_labels();
    if labels.is_empty() {
        return Err(WinnowError::NothingLabeled);
    }
    let relevant = labels.values().filter(|l| l.relevant).count();
    Ok(relevant as f64 / labels.len() as f64)
}

/// The relevant-labeled documents that seed the next round.
pub fn assemble_next_seed(round: &Round) -> Result<BTreeSet<String>, WinnowError> {
    let seed: BTreeSet<String> = round
        .effective_labels()
        .into_values()
        .filter(|l| l.relevant)
        .map(|l| l.doc_id.clone())
        .collect();
    if seed.is_empty() {
        return Err(WinnowError::NoRelevantLabels(round.round_id));
    }
    Ok(seed)
}

/// Seed text as surface-form counts, independent of any vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedSeed {
    pub name: String,
    pub counts: BTreeMap<String, u64>,
}

/// Which seed distributions to score against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SeedScoring {
    /// Also score each seed separately, not only the pooled seed.
    pub per_seed: bool,
}

/// Map seeds into `vocabulary`'s id space. Words unknown to the corpus get
/// ids past its end; returns the distributions and the extended vocabulary size.
pub fn resolve_seeds(
    seeds: &[NamedSeed],
    vocabulary: &Vocabulary,
    scoring: SeedScoring,
) -> Result<(Vec<SeedDistribution>, usize), WinnowError> {
    if seeds.is_empty() {
        return Err(WinnowError::EmptySeed);
    }
    let mut extra: BTreeMap<&str, WordId> = BTreeMap::new();
    let mut next = vocabulary.len() as WordId;
    let mut per_seed_counts = Vec::with_capacity(seeds.len());
    for seed in seeds {
        let mut pairs = Vec::with_capacity(seed.counts.len());
        for (word, &count) in &seed.counts {
            let id = match vocabulary.id(word) {
                Some(id) => id,
                None => *extra.entry(word.as_str()).or_insert_with(|| {
                    next += 1;
                    next - 1
                }),
            };
            pairs.push((id, count));
        }
        let counts = TermCounts::from_pairs(pairs);
        if counts.is_empty() {
            return Err(WinnowError::EmptySeedDocument(seed.name.clone()));
        }
        per_seed_counts.push((seed.name.clone(), counts));
    }

    let all: Vec<TermCounts> = per_seed_counts.iter().map(|(_, c)| c.clone()).collect();
    let mut out = vec![SeedDistribution {
        seed_ref: SeedRef::Pooled,
        distribution: crate::distribution::pool_seeds(&all)?,
    }];
    if scoring.per_seed {
        for (name, counts) in per_seed_counts {
            out.push(SeedDistribution {
                seed_ref: SeedRef::Seed(name.clone()),
                distribution: build_distribution(&counts, DistributionSource::Seed(name))?,
            });
        }
    }
    Ok((out, next as usize))
}

/// A scored (and possibly winnowed) round together with its scores.
#[derive(Debug, Clone)]
pub struct RoundRun {
    pub round: Round,
    pub batch: ScoreBatch,
}

impl RoundRun {
    pub fn pooled_scores(&self) -> Vec<DivergenceScore> {
        self.batch.for_seed(&SeedRef::Pooled)
    }
}

/// Parameters shared by `score_round` and `run_round`.
#[derive(Debug, Clone)]
pub struct RoundSpec<'a> {
    pub round_id: u32,
    pub seed_spec: SeedSpec,
    pub seeds: &'a [NamedSeed],
    pub scoring: SeedScoring,
    pub metric: Metric,
    pub parent: ParentRef,
    /// Restrict scoring to these parent documents; `None` scores the whole corpus.
    pub parent_doc_ids: Option<&'a [String]>,
    pub smoothing: SmoothingConfig,
}

/// Score the parent documents against the seeds; the round is left `Scored`.
pub fn score_round(corpus: &Corpus, spec: RoundSpec<'_>) -> Result<RoundRun, WinnowError> {
    spec.smoothing.validate()?;
    let (seeds, vocab_size) = resolve_seeds(spec.seeds, &corpus.vocabulary, spec.scoring)?;
    let docs: Vec<_> = match spec.parent_doc_ids {
        None => corpus.documents.iter().collect(),
        Some(ids) => {
            let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
            corpus.documents.iter().filter(|d| wanted.contains(d.doc_id.as_str())).collect()
        }
    };
    let batch = score_corpus(&seeds, docs.iter().copied(), vocab_size, spec.metric, &spec.smoothing);
    let mut round = Round::new(spec.round_id, spec.seed_spec, spec.metric, spec.parent, spec.smoothing);
    round.parent_size = docs.len();
    Ok(RoundRun { round, batch })
}

/// Score, then cut at `percentile` on the pooled seed's scores.
pub fn run_round(corpus: &Corpus, spec: RoundSpec<'_>, percentile: f64) -> Result<RoundRun, WinnowError> {
    check_percentile(percentile)?;
    let mut run = score_round(corpus, spec)?;
    let pooled = run.pooled_scores();
    run.round.winnow(&pooled, percentile)?;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn scores(values: &[(&str, f64)]) -> Vec<DivergenceScore> {
        values
            .iter()
            .map(|(id, v)| DivergenceScore {
                doc_id: id.to_string(),
                metric: Metric::Kld,
                seed_ref: SeedRef::Pooled,
                value: *v,
            })
            .collect()
    }

    fn numbered(n: usize) -> Vec<DivergenceScore> {
        (0..n)
            .map(|i| DivergenceScore {
                doc_id: format!("d{i:05}"),
                metric: Metric::Kld,
                seed_ref: SeedRef::Pooled,
                value: ((i * 7919) % n) as f64,
            })
            .collect()
    }

    fn ts(sec: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(1_700_000_000 + sec, 0).unwrap()
    }

    fn label(doc: &str, relevant: bool, sec: i64) -> Label {
        Label {
            doc_id: doc.into(),
            relevant,
            annotator: "jg".into(),
            round_id: 1,
            timestamp: ts(sec),
        }
    }

    fn winnowed_round(n: usize) -> Round {
        let mut r = Round::new(
            1,
            SeedSpec::External { manifest: "s.jsonl".into(), seed_ids: vec!["s".into()] },
            Metric::Kld,
            ParentRef::Corpus,
            SmoothingConfig::default(),
        );
        r.winnow(&numbered(n), 100.0).unwrap();
        r
    }

    #[test]
    fn cut_takes_lowest_quarter() {
        let s = numbered(100);
        let kept = cut(&s, 25.0).unwrap();
        assert_eq!(kept.len(), 25);
        let mut by_value = s.clone();
        by_value.sort_by(|a, b| a.value.total_cmp(&b.value));
        let expected: Vec<String> = by_value.iter().take(25).map(|s| s.doc_id.clone()).collect();
        assert_eq!(kept, expected);
    }

    #[test]
    fn cut_size_rounds_up() {
        assert_eq!(cut_size(111_685, 25.0), 27_922);
        assert_eq!(cut_size(5, 40.0), 2);
        assert_eq!(cut_size(12, 25.0), 3);
        assert_eq!(cut_size(10, 0.001), 1);
        assert_eq!(cut_size(10, 100.0), 10);
    }

    #[test]
    fn cut_breaks_ties_by_doc_id() {
        let s = scores(&[("e", 1.0), ("c", 1.0), ("a", 1.0), ("d", 1.0), ("b", 1.0)]);
        assert_eq!(cut(&s, 40.0).unwrap(), vec!["a", "b"]);
    }

    #[test]
    fn cut_rejects_bad_percentiles() {
        let s = numbered(10);
        assert_eq!(cut(&s, 0.0), Err(WinnowError::Percentile(0.0)));
        assert!(cut(&s, 100.5).is_err());
        assert!(cut(&s, f64::NAN).is_err());
        assert_eq!(cut(&[], 10.0), Err(WinnowError::NoScores));
    }

    #[test]
    fn tranche_draws_from_band_reproducibly() {
        let s = numbered(1000);
        let band = [PercentileBand::new(0.0, 5.0).unwrap()];
        let a = sample_tranches(&s, &band, 10, 7).unwrap();
        let b = sample_tranches(&s, &band, 10, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].sample_size(), 10);
        let top50: BTreeSet<String> = cut(&s, 5.0).unwrap().into_iter().collect();
        for (rank, id) in &a[0].sampled {
            assert!((1..=50).contains(rank));
            assert!(top50.contains(id));
        }
        let c = sample_tranches(&s, &band, 10, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn exhaustive_band_returns_everything() {
        let s = numbered(30);
        let t = sample_tranches(&s, &[PercentileBand::new(0.0, 100.0).unwrap()], 30, 0).unwrap();
        assert_eq!(t[0].sample_size(), 30);
        let t = sample_tranches(&s, &[PercentileBand::new(0.0, 10.0).unwrap()], 20, 0).unwrap();
        assert_eq!(t[0].sample_size(), 3);
    }

    #[test]
    fn disjoint_bands_give_disjoint_samples() {
        let s = numbered(500);
        let bands = PercentileBand::default_plan();
        for seed in 0..50 {
            let t = sample_tranches(&s, &bands, 20, seed).unwrap();
            let mut seen = BTreeSet::new();
            for tranche in &t {
                for id in tranche.doc_ids() {
                    assert!(seen.insert(id.to_string()), "{id} drawn twice");
                }
            }
        }
    }

    #[test]
    fn overlapping_bands_rejected() {
        let s = numbered(10);
        let bands = [PercentileBand::new(0.0, 10.0).unwrap(), PercentileBand::new(5.0, 20.0).unwrap()];
        assert!(matches!(sample_tranches(&s, &bands, 2, 0), Err(WinnowError::OverlappingBands(..))));
        assert!(PercentileBand::new(5.0, 5.0).is_err());
        assert_eq!("5-25".parse::<PercentileBand>().unwrap(), PercentileBand { low: 5.0, high: 25.0 });
        assert!("25".parse::<PercentileBand>().is_err());
    }

    #[test]
    fn tranche_table_round_trips() {
        let s = numbered(200);
        let t = sample_tranches(&s, &PercentileBand::default_plan(), 5, 3).unwrap();
        assert_eq!(parse_tranches_tsv(&tranches_to_tsv(&t), 3).unwrap(), t);
    }

    #[test]
    fn fifty_distinct_labels() {
        let mut r = winnowed_round(60);
        let labels: Vec<_> = (0..50).map(|i| label(&format!("d{i:05}"), i < 11, i)).collect();
        let report = ingest_labels(&mut r, labels).unwrap();
        assert_eq!(report.accepted, 50);
        assert!(report.conflicts.is_empty());
        assert_eq!(r.effective_labels().len(), 50);
        assert!((hit_rate(&r).unwrap() - 0.22).abs() < 1e-15);
        assert_eq!(r.status, RoundStatus::Labeled);
    }

    #[test]
    fn later_timestamp_wins() {
        let mut r = winnowed_round(5);
        ingest_labels(&mut r, vec![label("d00001", true, 1)]).unwrap();
        let report = ingest_labels(&mut r, vec![label("d00001", false, 2)]).unwrap();
        assert_eq!(report.conflicts.len(), 1);
        assert!(!r.effective_labels()["d00001"].relevant);

        // an older label arriving late is recorded but does not take effect
        let report = ingest_labels(&mut r, vec![label("d00001", true, 0)]).unwrap();
        assert_eq!(report.conflicts.len(), 1);
        assert!(!report.conflicts[0].kept.relevant);
        assert!(!r.effective_labels()["d00001"].relevant);
    }

    #[test]
    fn label_outside_round_rejected() {
        let mut r = winnowed_round(5);
        let before = r.clone();
        let report = ingest_labels(&mut r, vec![label("elsewhere", true, 1)]).unwrap();
        assert_eq!(report.rejected.len(), 1);
        assert_eq!(r, before);

        let mut wrong_round = label("d00001", true, 1);
        wrong_round.round_id = 9;
        assert_eq!(ingest_labels(&mut r, vec![wrong_round]).unwrap().rejected.len(), 1);
    }

    #[test]
    fn closed_round_refuses_labels() {
        let mut r = winnowed_round(5);
        r.status = RoundStatus::Closed;
        assert_eq!(ingest_labels(&mut r, vec![label("d00001", true, 1)]), Err(WinnowError::RoundClosed(1)));
    }

    #[test]
    fn hit_rate_cases() {
        let mut r = winnowed_round(120);
        assert_eq!(hit_rate(&r), Err(WinnowError::NothingLabeled));
        assert_eq!(hit_rate(&r).unwrap_err().to_string(), "nothing labeled");
        let labels: Vec<_> = (0..100).map(|i| label(&format!("d{i:05}"), i % 5 == 0, i)).collect();
        ingest_labels(&mut r, labels).unwrap();
        assert!((hit_rate(&r).unwrap() - 0.20).abs() < 1e-15);

        let mut all = winnowed_round(3);
        ingest_labels(&mut all, (0..3).map(|i| label(&format!("d{i:05}"), true, i)).collect()).unwrap();
        assert_eq!(hit_rate(&all).unwrap(), 1.0);
    }

    #[test]
    fn next_seed_is_the_relevant_set() {
        let mut r = winnowed_round(60);
        assert_eq!(assemble_next_seed(&r), Err(WinnowError::NoRelevantLabels(1)));
        let labels: Vec<_> = (0..50).map(|i| label(&format!("d{i:05}"), i < 11, i)).collect();
        ingest_labels(&mut r, labels).unwrap();
        let seed = assemble_next_seed(&r).unwrap();
        assert_eq!(seed.len(), 11);
        ingest_labels(&mut r, vec![label("d00003", false, 100)]).unwrap();
        assert_eq!(assemble_next_seed(&r).unwrap().len(), 10);
    }

    #[test]
    fn label_file_parsing() {
        let text = "# header\nd1\t1\tjg\t2024-03-01T10:00:00Z\nd2\t0\tal\t2024-03-01T12:00:00+02:00\n";
        let labels = parse_labels(text, 4).unwrap();
        assert_eq!(labels.len(), 2);
        assert!(labels[0].relevant && !labels[1].relevant);
        assert_eq!(labels[1].round_id, 4);
        assert_eq!(labels[1].timestamp, Utc.with_ymd_and_hms(2024, 3, 1, 10, 0, 0).unwrap());
        assert_eq!(labels_to_tsv(&labels[..1]), "d1\t1\tjg\t2024-03-01T10:00:00Z\n");
        assert!(parse_labels("d1\tyes\tjg\t2024-03-01T10:00:00Z", 1).is_err());
        assert!(parse_labels("d1\t1\tjg\tyesterday", 1).is_err());
        assert!(parse_labels("d1\t1\tjg", 1).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn cut_cardinality_and_monotonicity(n in 1usize..3000, a in 1u32..=10_000, b in 1u32..=10_000) {
                let s = numbered(n);
                let (lo, hi) = (a.min(b), a.max(b));
                let small = cut(&s, lo as f64 / 100.0).unwrap();
                let large = cut(&s, hi as f64 / 100.0).unwrap();
                // integer oracle: ceil(bp · n / 10000)
                prop_assert_eq!(small.len(), (lo as usize * n).div_ceil(10_000));
                prop_assert_eq!(large.len(), (hi as usize * n).div_ceil(10_000));
                let large_set: BTreeSet<_> = large.iter().collect();
                prop_assert!(small.iter().all(|d| large_set.contains(d)));
            }

            #[test]
            fn survivors_never_score_above_non_survivors(values in proptest::collection::vec(0u8..20, 1..200), p in 1u32..=100) {
                let s: Vec<_> = values.iter().enumerate().map(|(i, v)| DivergenceScore {
                    doc_id: format!("d{i:04}"), metric: Metric::Jsd, seed_ref: SeedRef::Pooled, value: *v as f64,
                }).collect();
                let kept: BTreeSet<String> = cut(&s, p as f64).unwrap().into_iter().collect();
                let max_kept = s.iter().filter(|x| kept.contains(&x.doc_id)).map(|x| x.value).fold(f64::MIN, f64::max);
                for x in s.iter().filter(|x| !kept.contains(&x.doc_id)) {
                    prop_assert!(x.value >= max_kept);
                }
            }

            #[test]
            fn hit_rate_bounded(flags in proptest::collection::vec(proptest::bool::ANY, 1..60)) {
                let mut r = winnowed_round(flags.len());
                let labels = flags.iter().enumerate().map(|(i, f)| label(&format!("d{i:05}"), *f, i as i64)).collect();
                ingest_labels(&mut r, labels).unwrap();
                let h = hit_rate(&r).unwrap();
                prop_assert!((0.0..=1.0).contains(&h));
            }
        }
    }
}
