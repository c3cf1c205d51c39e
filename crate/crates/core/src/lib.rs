//! Corpus winnowing: rank documents by their divergence from a seed
//! distribution, keep the closest fraction, sample tranches for review, and
//! reseed from the labels.

pub mod cache;
pub mod corpus;
pub mod distribution;
pub mod divergence;
pub mod normalize;
pub mod project;
pub mod report;
pub mod stem;
pub mod topics;
pub mod winnow;

pub use corpus::{ingest_corpus, ingest_records, Corpus, Document, ManifestRecord, Vocabulary, WordId};
pub use distribution::{build_distribution, pool_seeds, smooth, SmoothingConfig, TermCounts, VocabularyMode, WordDistribution};
pub use divergence::{jsd, kld, score_corpus, symmetric_kld, DivergenceScore, Metric, SeedRef};
pub use normalize::{normalize, NormalizationConfig, Reducer};
pub use winnow::{cut, cut_size, hit_rate, Label, PercentileBand, Round, RoundStatus, Tranche};
