//! Corpus ingestion: manifest records, documents and the shared vocabulary.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::TermCounts;
use crate::normalize::{normalize, NormalizationConfig};

pub type WordId = u32;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("duplicate doc_id {0:?}")]
    DuplicateDocId(String),
}

/// One manifest row. Exactly one of `text` and `path` must be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub doc_id: String,
    pub title: String,
    pub year: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl ManifestRecord {
    pub fn inline(doc_id: impl Into<String>, title: impl Into<String>, year: i32, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            title: title.into(),
            year,
            text: Some(text.into()),
            path: None,
        }
    }
}

/// Parse newline-delimited JSON manifest text.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>, IngestError> {
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(line).map_err(|e| IngestError::Record {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if record.text.is_some() == record.path.is_some() {
            return Err(IngestError::Record {
                line: idx + 1,
                message: format!(
                    "record {:?} must carry exactly one of `text` or `path`",
                    record.doc_id
                ),
            });
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(IngestError::EmptyManifest);
    }
    Ok(records)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Manifest {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest(&text)
}

/// Where a document's raw text lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextRef {
    Inline(String),
    Path(PathBuf),
}

impl TextRef {
    pub fn load(&self) -> std::io::Result<String> {
        match self {
            TextRef::Inline(text) => Ok(text.clone()),
            TextRef::Path(path) => fs::read_to_string(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub year: i32,
    pub text_ref: TextRef,
    pub tokens: Vec<WordId>,
}

impl Document {
    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn counts(&self) -> TermCounts {
        TermCounts::from_tokens(&self.tokens)
    }
}

/// Dense bijection between word ids `0..len` and surface forms.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    ids: HashMap<String, WordId>,
}

impl Vocabulary {
    /// Build from distinct surface forms; ids follow ascending surface order.
    pub fn from_words<I: IntoIterator<Item = String>>(words: I) -> Self {
        let sorted: BTreeSet<String> = words.into_iter().collect();
        let words: Vec<String> = sorted.into_iter().collect();
        let ids = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as WordId))
            .collect();
        Self { words, ids }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<WordId> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: WordId) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Id for `word`, appending it when absent.
    pub fn intern(&mut self, word: &str) -> WordId {
        if let Some(id) = self.ids.get(word) {
            return *id;
        }
        let id = self.words.len() as WordId;
        self.words.push(word.to_string());
        self.ids.insert(word.to_string(), id);
        id
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedDocument {
    pub doc_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentFailure {
    pub doc_id: String,
    pub message: String,
}

/// Ingested documents (sorted by `doc_id`) plus their vocabulary.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub vocabulary: Vocabulary,
    /// Documents left with zero tokens after normalization.
    pub skipped: Vec<SkippedDocument>,
    /// Documents whose text could not be read.
    pub failures: Vec<DocumentFailure>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.documents
            .binary_search_by(|d| d.doc_id.as_str().cmp(doc_id))
            .ok()
            .map(|i| &self.documents[i])
    }

    pub fn total_tokens(&self) -> usize {
        self.documents.iter().map(Document::token_count).sum()
    }

    /// Token counts keyed by surface form, summed over `doc_ids`.
    pub fn surface_counts<'a, I>(&self, doc_ids: I) -> BTreeMap<String, u64>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut out = BTreeMap::new();
        for id in doc_ids {
            if let Some(doc) = self.document(id) {
                for (w, c) in doc.counts().iter() {
                    let word = self.vocabulary.word(w).expect("token in vocabulary");
                    *out.entry(word.to_string()).or_insert(0) += c;
                }
            }
        }
        out
    }
}

/// Ingest records whose relative `path`s resolve against `base_dir`.
pub fn ingest_records(
    records: Vec<ManifestRecord>,
    base_dir: &Path,
    config: &NormalizationConfig,
) -> Result<Corpus, IngestError> {
    if records.is_empty() {
        return Err(IngestError::EmptyManifest);
    }
    let mut seen = BTreeSet::new();
    for r in &records {
        if !seen.insert(r.doc_id.as_str()) {
            return Err(IngestError::DuplicateDocId(r.doc_id.clone()));
        }
    }

    let normalized: Vec<(ManifestRecord, TextRef, Result<Vec<String>, String>)> = records
        .into_par_iter()
        .map(|record| {
            let text_ref = match (&record.text, &record.path) {
                (Some(text), _) => TextRef::Inline(text.clone()),
                (None, Some(p)) => TextRef::Path(base_dir.join(p)),
                (None, None) => TextRef::Inline(String::new()),
            };
            let tokens = text_ref
                .load()
                .map(|text| normalize(&text, config))
                .map_err(|e| match &text_ref {
                    TextRef::Path(p) => format!("cannot read {}: {e}", p.display()),
                    TextRef::Inline(_) => e.to_string(),
                });
            (record, text_ref, tokens)
        })
        .collect();

    let vocabulary = Vocabulary::from_words(
        normalized
            .iter()
            .filter_map(|(_, _, t)| t.as_ref().ok())
            .flatten()
            .cloned(),
    );

    let mut corpus = Corpus {
        vocabulary,
        ..Corpus::default()
    };
    for (record, text_ref, tokens) in normalized {
        match tokens {
            Err(message) => corpus.failures.push(DocumentFailure {
                doc_id: record.doc_id,
                message,
            }),
            Ok(tokens) if tokens.is_empty() => corpus.skipped.push(SkippedDocument {
                doc_id: record.doc_id,
                reason: "no tokens after normalization".to_string(),
            }),
            Ok(tokens) => {
                let tokens = tokens
                    .iter()
                    .map(|t| corpus.vocabulary.id(t).expect("vocabulary covers tokens"))
                    .collect();
                corpus.documents.push(Document {
                    doc_id: record.doc_id,
                    title: record.title,
                    year: record.year,
                    text_ref,
                    tokens,
                });
            }
        }
    }
    corpus.documents.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    corpus.skipped.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    corpus.failures.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(corpus)
}

/// Read a manifest file and ingest it; relative paths resolve against the manifest's directory.
pub fn ingest_corpus(manifest: &Path, config: &NormalizationConfig) -> Result<Corpus, IngestError> {
    let records = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    ingest_records(records, base, config)
}
