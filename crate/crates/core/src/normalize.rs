//! Text normalization into bag-of-words tokens.
//!
//! The pipeline order is fixed: lowercase, punctuation stripping, length
//! filter, stopword removal, then the word-form reducer.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::stem::porter_stem;

/// Surface-to-lemma lookup table. Unknown words pass through unchanged.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LemmaTable {
    entries: BTreeMap<String, String>,
}

impl LemmaTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, surface: impl Into<String>, lemma: impl Into<String>) {
        self.entries.insert(surface.into(), lemma.into());
    }

    pub fn lemma<'a>(&'a self, word: &'a str) -> &'a str {
        self.entries.get(word).map(String::as_str).unwrap_or(word)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parse `surface<TAB>lemma` lines. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, LemmaParseError> {
        let mut table = Self::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('\t') {
                Some((surface, lemma)) if !surface.is_empty() && !lemma.is_empty() => {
                    table.insert(surface, lemma)
                }
                _ => {
                    return Err(LemmaParseError {
                        line: idx + 1,
                        content: line.to_string(),
                    })
                }
            }
        }
        Ok(table)
    }

    pub fn to_tsv(&self) -> String {
        self.entries
            .iter()
            .map(|(s, l)| format!("{s}\t{l}\n"))
            .collect()
    }
}

#[derive(Debug, thiserror::Error)]
#[error("lemma table line {line}: expected `surface<TAB>lemma`, got {content:?}")]
pub struct LemmaParseError {
    pub line: usize,
    pub content: String,
}

/// How inflected word forms are collapsed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reducer {
    #[default]
    None,
    /// Porter suffix stripping.
    Stemmer,
    Lemmatizer(LemmaTable),
}

impl Reducer {
    pub fn name(&self) -> &'static str {
        match self {
            Reducer::None => "none",
            Reducer::Stemmer => "stemmer",
            Reducer::Lemmatizer(_) => "lemmatizer",
        }
    }

    fn reduce(&self, token: String) -> String {
        match self {
            Reducer::None => token,
            Reducer::Stemmer => porter_stem(&token),
            Reducer::Lemmatizer(table) => table.lemma(&token).to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationConfig {
    pub lowercase: bool,
    pub strip_punctuation: bool,
    pub stopwords: BTreeSet<String>,
    pub reducer: Reducer,
    pub min_token_length: usize,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_punctuation: true,
            stopwords: BTreeSet::new(),
            reducer: Reducer::None,
            min_token_length: 2,
        }
    }
}

impl NormalizationConfig {
    /// Default configuration; picks the lemmatizer when a lemma table is given.
    pub fn with_lemmas(lemmas: Option<LemmaTable>) -> Self {
        Self {
            reducer: lemmas.map(Reducer::Lemmatizer).unwrap_or_default(),
            ..Self::default()
        }
    }

    pub fn with_stopwords<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.stopwords = words.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_reducer(mut self, reducer: Reducer) -> Self {
        self.reducer = reducer;
        self
    }

    /// Stable hex digest of every setting, stopword and lemma pair.
    pub fn config_hash(&self) -> String {
        // serde_json keeps struct field order and BTree* iterate sorted
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// Read a stopword file: one surface form per line.
pub fn read_stopwords(path: &Path) -> io::Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(parse_stopwords(&text))
}

pub fn parse_stopwords(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Split `text` into normalized surface-form tokens.
pub fn normalize(text: &str, config: &NormalizationConfig) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let word = if config.lowercase {
            raw.to_lowercase()
        } else {
            raw.to_string()
        };
        if config.strip_punctuation {
            for piece in strip_punctuation(&word) {
                push_token(piece, config, &mut out);
            }
        } else {
            push_token(word, config, &mut out);
        }
    }
    out
}

fn push_token(token: String, config: &NormalizationConfig, out: &mut Vec<String>) {
    if token.chars().count() < config.min_token_length {
        return;
    }
    if config.stopwords.contains(&token) {
        return;
    }
    let reduced = config.reducer.reduce(token);
    if !reduced.is_empty() {
        out.push(reduced);
    }
}

/// Apostrophes and hyphens join the surrounding letters ("tenant-right" ->
/// "tenantright"); every other non-alphanumeric character separates words.
fn strip_punctuation(word: &str) -> Vec<String> {
    let mut pieces = Vec::new();
    let mut current = String::new();
    for c in word.chars() {
        if c.is_alphanumeric() {
            current.push(c);
        } else if is_joiner(c) {
            continue;
        } else if !current.is_empty() {
            pieces.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        pieces.push(current);
    }
    pieces
}

fn is_joiner(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}' | '-' | '\u{2010}' | '\u{2011}')
}
