//! Word-count multisets and the probability distributions built from them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Vocabulary, WordId};

/// Tolerance for "sums to one".
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DistributionError {
    #[error("empty document: no positive counts")]
    EmptyDocument,
    #[error("no seeds given")]
    NoSeeds,
    #[error("smoothing reference support is empty")]
    EmptyReference,
    #[error("smoothing epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("invalid probabilities: {0}")]
    InvalidProbabilities(String),
}

/// Sparse word-id -> count multiset, sorted by id, zero counts omitted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermCounts(Vec<(WordId, u64)>);

impl TermCounts {
    pub fn from_tokens(tokens: &[WordId]) -> Self {
        let mut sorted = tokens.to_vec();
        sorted.sort_unstable();
        let mut out: Vec<(WordId, u64)> = Vec::new();
        for w in sorted {
            match out.last_mut() {
                Some((last, c)) if *last == w => *c += 1,
                _ => out.push((w, 1)),
            }
        }
        Self(out)
    }

    pub fn from_pairs<I: IntoIterator<Item = (WordId, u64)>>(pairs: I) -> Self {
        let mut map = BTreeMap::new();
        for (w, c) in pairs {
            *map.entry(w).or_insert(0) += c;
        }
        Self(map.into_iter().filter(|&(_, c)| c > 0).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = (WordId, u64)> + '_ {
        self.0.iter().copied()
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|(_, c)| c).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn merge(&mut self, other: &TermCounts) {
        *self = Self::from_pairs(self.iter().chain(other.iter()));
    }
}

/// What a distribution was estimated from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionSource {
    Seed(String),
    PooledSeed,
    Document(String),
}

/// Sparse probability distribution over word ids; every stored entry is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct WordDistribution {
    entries: Vec<(WordId, f64)>,
    /// Token mass the probabilities were estimated from (1 for raw probabilities).
    mass: f64,
    source: DistributionSource,
}

impl WordDistribution {
    /// Wrap explicit probabilities. They must be positive and sum to one.
    pub fn from_probabilities<I>(probs: I, source: DistributionSource) -> Result<Self, DistributionError>
    where
        I: IntoIterator<Item = (WordId, f64)>,
    {
        let mut map = BTreeMap::new();
        for (w, p) in probs {
            if !(p > 0.0 && p.is_finite()) {
                return Err(DistributionError::InvalidProbabilities(format!(
                    "word {w} has probability {p}"
                )));
            }
            if map.insert(w, p).is_some() {
                return Err(DistributionError::InvalidProbabilities(format!("word {w} repeated")));
            }
        }
        if map.is_empty() {
            return Err(DistributionError::EmptyDocument);
        }
        let entries: Vec<_> = map.into_iter().collect();
        let sum: f64 = entries.iter().map(|(_, p)| p).sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(DistributionError::InvalidProbabilities(format!("sum is {sum}")));
        }
        Ok(Self {
            entries,
            mass: 1.0,
            source,
        })
    }

    pub fn entries(&self) -> &[(WordId, f64)] {
        &self.entries
    }

    pub fn support_size(&self) -> usize {
        self.entries.len()
    }

    pub fn support(&self) -> impl Iterator<Item = WordId> + '_ {
        self.entries.iter().map(|(w, _)| *w)
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn source(&self) -> &DistributionSource {
        &self.source
    }

    /// Probability of `word`, zero off the support.
    pub fn prob(&self, word: WordId) -> f64 {
        self.entries
            .binary_search_by_key(&word, |(w, _)| *w)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    /// `surface<TAB>probability` lines by descending probability.
    pub fn to_tsv(&self, vocabulary: &Vocabulary) -> String {
        let mut rows: Vec<(&str, f64)> = self
            .entries
            .iter()
            .map(|&(w, p)| (vocabulary.word(w).unwrap_or("?"), p))
            .collect();
        rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        rows.iter().map(|(s, p)| format!("{s}\t{p}\n")).collect()
    }

    fn checked(self) -> Self {
        let sum: f64 = self.entries.iter().map(|(_, p)| p).sum();
        assert!(
            (sum - 1.0).abs() <= SUM_TOLERANCE,
            "distribution sums to {sum}"
        );
        debug_assert!(self.entries.iter().all(|&(_, p)| p > 0.0));
        self
    }
}

/// `p(w) = count(w) / total`.
pub fn build_distribution(
    counts: &TermCounts,
    source: DistributionSource,
) -> Result<WordDistribution, DistributionError> {
    let total = counts.total();
    if total == 0 {
        return Err(DistributionError::EmptyDocument);
    }
    let t = total as f64;
    let entries = counts.iter().map(|(w, c)| (w, c as f64 / t)).collect();
    Ok(WordDistribution {
        entries,
        mass: t,
        source,
    }
    .checked())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocabularyMode {
    /// Smooth over the union of the two compared supports.
    #[default]
    UnionOfPair,
    /// Smooth over the whole corpus vocabulary.
    CorpusWide,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub epsilon: f64,
    pub vocabulary_mode: VocabularyMode,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            vocabulary_mode: VocabularyMode::UnionOfPair,
        }
    }
}

impl SmoothingConfig {
    pub fn new(epsilon: f64, vocabulary_mode: VocabularyMode) -> Result<Self, DistributionError> {
        let cfg = Self {
            epsilon,
            vocabulary_mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DistributionError> {
        if self.epsilon > 0.0 && self.epsilon.is_finite() {
            Ok(())
        } else {
            Err(DistributionError::BadEpsilon(self.epsilon))
        }
    }
}

/// Additive smoothing of `q` over `q.support ∪ reference_support`.
///
/// With `m` the token mass behind `q`, every word of that union gets
/// `(q(w)·m + ε) / (m + ε·|V|)`. For distributions given directly as
/// probabilities `m = 1`. The vocabulary mode is resolved by the caller:
/// in corpus-wide mode the reference support is the full vocabulary.
pub fn smooth(
    q: &WordDistribution,
    reference_support: &[WordId],
    cfg: &SmoothingConfig,
) -> Result<WordDistribution, DistributionError> {
    cfg.validate()?;
    if reference_support.is_empty() {
        return Err(DistributionError::EmptyReference);
    }
    let mut reference = reference_support.to_vec();
    reference.sort_unstable();
    reference.dedup();

    let union = merge_support(q.entries.iter().map(|(w, _)| *w), reference.iter().copied());
    let m = q.mass;
    let eps = cfg.epsilon;
    let denom = m + eps * union.len() as f64;
    let entries = union
        .into_iter()
        .map(|w| (w, (q.prob(w) * m + eps) / denom))
        .collect();
    Ok(WordDistribution {
        entries,
        mass: denom,
        source: q.source.clone(),
    }
    .checked())
}

/// Sum counts across seeds, then normalize. Longer seeds weigh more.
pub fn pool_seeds(seeds: &[TermCounts]) -> Result<WordDistribution, DistributionError> {
    if seeds.is_empty() {
        return Err(DistributionError::NoSeeds);
    }
    if seeds.iter().any(|s| s.total() == 0) {
        return Err(DistributionError::EmptyDocument);
    }
    let pooled = TermCounts::from_pairs(seeds.iter().flat_map(TermCounts::iter));
    build_distribution(&pooled, DistributionSource::PooledSeed)
}

/// Sorted union of two ascending id streams.
pub(crate) fn merge_support<A, B>(a: A, b: B) -> Vec<WordId>
where
    A: IntoIterator<Item = WordId>,
    B: IntoIterator<Item = WordId>,
{
    let mut out: Vec<WordId> = a.into_iter().chain(b).collect();
    out.sort_unstable();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: WordId = 0;
    const B: WordId = 1;

    fn probs(entries: &[(WordId, f64)]) -> WordDistribution {
        WordDistribution::from_probabilities(entries.iter().copied(), DistributionSource::PooledSeed).unwrap()
    }

    #[test]
    fn builds_normalized_distribution() {
        let d = build_distribution(&TermCounts::from_pairs([(A, 2), (B, 1)]), DistributionSource::PooledSeed).unwrap();
        assert!((d.prob(A) - 2.0 / 3.0).abs() < 1e-15);
        assert!((d.prob(B) - 1.0 / 3.0).abs() < 1e-15);
        let single = build_distribution(&TermCounts::from_pairs([(7, 5)]), DistributionSource::PooledSeed).unwrap();
        assert_eq!(single.entries(), &[(7, 1.0)]);
    }

    #[test]
    fn empty_counts_error() {
        let err = build_distribution(&TermCounts::default(), DistributionSource::PooledSeed).unwrap_err();
        assert_eq!(err, DistributionError::EmptyDocument);
        assert_eq!(err.to_string(), "empty document: no positive counts");
    }

    #[test]
    fn seed_table_head_keeps_its_order() {
        // rent, land, tenants, tenant, landlord with their seed-corpus counts
        let counts = TermCounts::from_pairs([(10, 6686), (11, 6103), (12, 5748), (13, 5155), (14, 4045)]);
        let d = build_distribution(&counts, DistributionSource::PooledSeed).unwrap();
        let mut ranked = d.entries().to_vec();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        let head: Vec<WordId> = ranked.iter().take(3).map(|(w, _)| *w).collect();
        assert_eq!(head, vec![10, 11, 12]);
    }

    #[test]
    fn smoothing_single_word_reference_is_identity() {
        let q = probs(&[(A, 1.0)]);
        let s = smooth(&q, &[A], &SmoothingConfig::default()).unwrap();
        assert_eq!(s.entries(), &[(A, 1.0)]);
    }

    #[test]
    fn smoothing_formula_substitution() {
        let q = probs(&[(A, 1.0)]);
        let s = smooth(&q, &[A, B], &SmoothingConfig::default()).unwrap();
        assert!((s.prob(A) - 0.75).abs() < 1e-15);
        assert!((s.prob(B) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn smoothing_counts_are_pseudo_counts() {
        // four tokens of `a`; half a pseudo-count each over {a, b}
        let q = build_distribution(&TermCounts::from_pairs([(A, 4)]), DistributionSource::Document("d".into())).unwrap();
        let s = smooth(&q, &[A, B], &SmoothingConfig::default()).unwrap();
        assert!((s.prob(A) - 4.5 / 5.0).abs() < 1e-15);
        assert!((s.prob(B) - 0.5 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn tiny_epsilon_leaves_covered_distribution_nearly_unchanged() {
        let q = probs(&[(A, 0.3), (B, 0.5), (2, 0.2)]);
        let cfg = SmoothingConfig::new(1e-6, VocabularyMode::UnionOfPair).unwrap();
        let s = smooth(&q, &[A, 2], &cfg).unwrap();
        let tv: f64 = 0.5 * [A, B, 2].iter().map(|&w| (s.prob(w) - q.prob(w)).abs()).sum::<f64>();
        assert!(tv < 1e-4, "total variation {tv}");
    }

    #[test]
    fn smoothing_rejects_empty_reference_and_bad_epsilon() {
        let q = probs(&[(A, 1.0)]);
        assert_eq!(
            smooth(&q, &[], &SmoothingConfig::default()).unwrap_err(),
            DistributionError::EmptyReference
        );
        assert!(SmoothingConfig::new(0.0, VocabularyMode::UnionOfPair).is_err());
        assert!(SmoothingConfig::new(-1.0, VocabularyMode::CorpusWide).is_err());
    }

    #[test]
    fn pooling() {
        let one = TermCounts::from_pairs([(A, 3), (B, 1)]);
        let alone = pool_seeds(std::slice::from_ref(&one)).unwrap();
        let built = build_distribution(&one, DistributionSource::PooledSeed).unwrap();
        assert_eq!(alone.entries(), built.entries());

        let twice = pool_seeds(&[one.clone(), one.clone()]).unwrap();
        for (x, y) in twice.entries().iter().zip(alone.entries()) {
            assert!((x.1 - y.1).abs() < 1e-15);
        }

        let mixed = pool_seeds(&[TermCounts::from_pairs([(A, 1)]), TermCounts::from_pairs([(B, 3)])]).unwrap();
        assert!((mixed.prob(A) - 0.25).abs() < 1e-15);
        assert!((mixed.prob(B) - 0.75).abs() < 1e-15);

        assert_eq!(pool_seeds(&[]).unwrap_err(), DistributionError::NoSeeds);
        assert_eq!(
            pool_seeds(&[one, TermCounts::default()]).unwrap_err(),
            DistributionError::EmptyDocument
        );
    }

    #[test]
    fn tsv_export_sorted_by_probability() {
        let vocab = Vocabulary::from_words(["land".to_string(), "rent".to_string()]);
        let d = build_distribution(&TermCounts::from_pairs([(0, 1), (1, 2)]), DistributionSource::PooledSeed).unwrap();
        let tsv = d.to_tsv(&vocab);
        assert!(tsv.starts_with("rent\t0.6666"), "{tsv}");
        assert_eq!(tsv.lines().count(), 2);
    }

    mod props {
        use super::*;
        use proptest::collection::btree_map;
        use proptest::prelude::*;

        fn counts() -> impl Strategy<Value = TermCounts> {
            btree_map(0u32..40, 1u64..1000, 1..20).prop_map(TermCounts::from_pairs)
        }

        proptest! {
            #[test]
            fn scale_invariant(c in counts(), k in 1u64..50) {
                let scaled = TermCounts::from_pairs(c.iter().map(|(w, n)| (w, n * k)));
                let a = build_distribution(&c, DistributionSource::PooledSeed).unwrap();
                let b = build_distribution(&scaled, DistributionSource::PooledSeed).unwrap();
                for (x, y) in a.entries().iter().zip(b.entries()) {
                    prop_assert_eq!(x.0, y.0);
                    prop_assert!((x.1 - y.1).abs() <= 1e-12);
                }
            }

            #[test]
            fn smoothing_is_positive_on_reference(c in counts(), reference in proptest::collection::vec(0u32..60, 1..30), eps in 1e-6f64..2.0) {
                let q = build_distribution(&c, DistributionSource::Document("d".into())).unwrap();
                let cfg = SmoothingConfig::new(eps, VocabularyMode::UnionOfPair).unwrap();
                let s = smooth(&q, &reference, &cfg).unwrap();
                let sum: f64 = s.entries().iter().map(|(_, p)| p).sum();
                prop_assert!((sum - 1.0).abs() <= SUM_TOLERANCE);
                for w in reference {
                    prop_assert!(s.prob(w) > 0.0);
                }
            }
        }
    }
}
