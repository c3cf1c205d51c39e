//! Plain-data reports: divergence histograms, survivors per year and ranked
//! word counts. Every emitter is a pure function of its inputs.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Vocabulary};
use crate::divergence::{DivergenceScore, Metric, SeedRef};
use crate::winnow::{cut, WinnowError};

pub const DEFAULT_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReportError {
    #[error("need at least one bin")]
    NoBins,
    #[error("no scores")]
    NoScores,
    #[error("no year metadata for: {}", .0.join(", "))]
    MissingYears(Vec<String>),
    #[error(transparent)]
    Winnow(#[from] WinnowError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub metric: Metric,
    pub seed_ref: SeedRef,
    /// `counts.len() + 1` strictly increasing edges.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `# metric seed_ref` header, then `bin_low<TAB>bin_high<TAB>count`.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# {} {}\n", self.metric, self.seed_ref);
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{}\t{}\t{}\n", self.bin_edges[i], self.bin_edges[i + 1], c));
        }
        out
    }
}

/// Equal-width histogram over `[min, max]` of one seed's scores.
///
/// The maximum lands in the last bin. An all-equal sample gets its span
/// widened by a few ulps so the edges stay strictly increasing.
pub fn histogram(scores: &[DivergenceScore], bins: usize) -> Result<Histogram, ReportError> {
    if bins < 1 {
        return Err(ReportError::NoBins);
    }
    let first = scores.first().ok_or(ReportError::NoScores)?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in scores {
        lo = lo.min(s.value);
        hi = hi.max(s.value);
    }
    let width_floor = f64::EPSILON * lo.abs().max(1.0) * bins as f64;
    if hi - lo < width_floor {
        hi = lo + width_floor;
    }
    let width = (hi - lo) / bins as f64;
    let mut bin_edges: Vec<f64> = (0..bins).map(|i| lo + i as f64 * width).collect();
    bin_edges.push(hi);

    let mut counts = vec![0u64; bins];
    for s in scores {
        let idx = (((s.value - lo) / width).floor() as usize).min(bins - 1);
        counts[idx] += 1;
    }
    debug_assert!(bin_edges.windows(2).all(|w| w[0] < w[1]));
    Ok(Histogram {
        metric: first.metric,
        seed_ref: first.seed_ref.clone(),
        bin_edges,
        counts,
    })
}

/// One histogram per seed reference, in seed-ref order.
pub fn histograms_by_seed(scores: &[DivergenceScore], bins: usize) -> Result<Vec<Histogram>, ReportError> {
    let mut groups: BTreeMap<&SeedRef, Vec<DivergenceScore>> = BTreeMap::new();
    for s in scores {
        groups.entry(&s.seed_ref).or_default().push(s.clone());
    }
    if groups.is_empty() {
        return Err(ReportError::NoScores);
    }
    groups.values().map(|g| histogram(g, bins)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearSeries {
    pub metric: Metric,
    pub seed_ref: SeedRef,
    pub percentile: f64,
    pub counts: BTreeMap<i32, u64>,
}

impl YearSeries {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// `# metric seed_ref percentile` header, then `year<TAB>count`.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# {} {} {}\n", self.metric, self.seed_ref, self.percentile);
        for (year, count) in &self.counts {
            out.push_str(&format!("{year}\t{count}\n"));
        }
        out
    }
}

/// Survivors of `cut(percentile)` counted per year; empty years omitted.
pub fn year_series(
    scores: &[DivergenceScore],
    years: &HashMap<&str, i32>,
    percentile: f64,
) -> Result<YearSeries, ReportError> {
    let first = scores.first().ok_or(ReportError::NoScores)?;
    let mut missing: Vec<String> = scores
        .iter()
        .filter(|s| !years.contains_key(s.doc_id.as_str()))
        .map(|s| s.doc_id.clone())
        .collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(ReportError::MissingYears(missing));
    }
    let mut counts = BTreeMap::new();
    for id in cut(scores, percentile)? {
        *counts.entry(years[id.as_str()]).or_insert(0) += 1;
    }
    Ok(YearSeries {
        metric: first.metric,
        seed_ref: first.seed_ref.clone(),
        percentile,
        counts,
    })
}

/// Year lookup for a set of documents.
pub fn year_index<'a, I: IntoIterator<Item = &'a Document>>(docs: I) -> HashMap<&'a str, i32> {
    docs.into_iter().map(|d| (d.doc_id.as_str(), d.year)).collect()
}

/// Most frequent words across `docs`: descending count, ties by surface.
pub fn top_ngrams<'a, I>(docs: I, vocabulary: &Vocabulary, n: usize) -> Vec<(String, u64)>
where
    I: IntoIterator<Item = &'a Document>,
{
    let mut counts = vec![0u64; vocabulary.len()];
    for doc in docs {
        for &w in &doc.tokens {
            counts[w as usize] += 1;
        }
    }
    let mut ranked: Vec<(String, u64)> = counts
        .into_iter()
        .enumerate()
        .filter(|&(_, c)| c > 0)
        .map(|(w, c)| (vocabulary.word(w as u32).expect("dense vocabulary").to_string(), c))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(n);
    ranked
}

/// `rank<TAB>surface<TAB>count` lines, ranks from 1.
pub fn ngrams_to_tsv(rows: &[(String, u64)]) -> String {
    rows.iter()
        .enumerate()
        .map(|(i, (w, c))| format!("{}\t{w}\t{c}\n", i + 1))
        .collect()
}
