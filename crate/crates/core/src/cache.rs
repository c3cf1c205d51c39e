//! On-disk cache of an ingested corpus.
//!
//! A cache directory holds `meta.json` (format version, normalization config
//! hash, manifest hash), `vocab.txt` (one surface form per line, line number
//! = word id), `documents.jsonl`, `skipped.tsv` and `failures.tsv`. A cache
//! whose version or hashes differ from the caller's is treated as absent.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, Document, DocumentFailure, SkippedDocument, Vocabulary};

pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("cache io at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt cache file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CacheError + '_ {
    move |source| CacheError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheMeta {
    pub version: u32,
    pub config_hash: String,
    pub manifest_hash: String,
    pub documents: usize,
    pub vocabulary_size: usize,
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn tsv_pairs<'a, I: Iterator<Item = (&'a str, &'a str)>>(rows: I) -> String {
    rows.map(|(a, b)| format!("{a}\t{}\n", b.replace(['\t', '\n'], " "))).collect()
}

/// Write `corpus` under `dir`, replacing any previous cache there.
pub fn save_corpus(dir: &Path, corpus: &Corpus, config_hash: &str, manifest_hash: &str) -> Result<(), CacheError> {
    let staging = dir.with_extension("staging");
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
    }
    fs::create_dir_all(&staging).map_err(io_err(&staging))?;

    let vocab_path = staging.join("vocab.txt");
    let mut vocab_text = String::new();
    for w in corpus.vocabulary.words() {
        vocab_text.push_str(w);
        vocab_text.push('\n');
    }
    fs::write(&vocab_path, vocab_text).map_err(io_err(&vocab_path))?;

    let docs_path = staging.join("documents.jsonl");
    let file = fs::File::create(&docs_path).map_err(io_err(&docs_path))?;
    let mut out = BufWriter::new(file);
    for doc in &corpus.documents {
        serde_json::to_writer(&mut out, doc).map_err(|e| CacheError::Corrupt {
            path: docs_path.clone(),
            message: e.to_string(),
        })?;
        out.write_all(b"\n").map_err(io_err(&docs_path))?;
    }
    out.flush().map_err(io_err(&docs_path))?;

    let skipped_path = staging.join("skipped.tsv");
    let skipped = tsv_pairs(corpus.skipped.iter().map(|s| (s.doc_id.as_str(), s.reason.as_str())));
    fs::write(&skipped_path, skipped).map_err(io_err(&skipped_path))?;
    let failures_path = staging.join("failures.tsv");
    let failures = tsv_pairs(corpus.failures.iter().map(|f| (f.doc_id.as_str(), f.message.as_str())));
    fs::write(&failures_path, failures).map_err(io_err(&failures_path))?;

    let meta = CacheMeta {
        version: CACHE_VERSION,
        config_hash: config_hash.to_string(),
        manifest_hash: manifest_hash.to_string(),
        documents: corpus.documents.len(),
        vocabulary_size: corpus.vocabulary.len(),
    };
    let meta_path = staging.join("meta.json");
    let meta_json = serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n";
    fs::write(&meta_path, meta_json).map_err(io_err(&meta_path))?;

    if dir.exists() {
        fs::remove_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::rename(&staging, dir).map_err(io_err(dir))?;
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<Option<CacheMeta>, CacheError> {
    let path = dir.join("meta.json");
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| CacheError::Corrupt { path, message: e.to_string() })
}

/// Load the cache if it exists and matches `config_hash` (and `manifest_hash`, when given).
pub fn load_corpus(dir: &Path, config_hash: &str, manifest_hash: Option<&str>) -> Result<Option<Corpus>, CacheError> {
    let Some(meta) = read_meta(dir)? else {
        return Ok(None);
    };
    if meta.version != CACHE_VERSION
        || meta.config_hash != config_hash
        || manifest_hash.is_some_and(|h| h != meta.manifest_hash)
    {
        return Ok(None);
    }

    let vocab_path = dir.join("vocab.txt");
    let vocab_text = fs::read_to_string(&vocab_path).map_err(io_err(&vocab_path))?;
    let mut vocabulary = Vocabulary::default();
    for (i, word) in vocab_text.lines().enumerate() {
        if vocabulary.intern(word) as usize != i {
            return Err(CacheError::Corrupt { path: vocab_path, message: format!("duplicate word {word:?}") });
        }
    }

    let docs_path = dir.join("documents.jsonl");
    let file = fs::File::open(&docs_path).map_err(io_err(&docs_path))?;
    let mut documents = Vec::with_capacity(meta.documents);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&docs_path))?;
        let doc: Document = serde_json::from_str(&line).map_err(|e| CacheError::Corrupt {
            path: docs_path.clone(),
            message: format!("line {}: {e}", i + 1),
        })?;
        if doc.tokens.iter().any(|&t| t as usize >= vocabulary.len()) {
            return Err(CacheError::Corrupt {
                path: docs_path.clone(),
                message: format!("document {:?} references an unknown word id", doc.doc_id),
            });
        }
        documents.push(doc);
    }
    if documents.len() != meta.documents || vocabulary.len() != meta.vocabulary_size {
        return Err(CacheError::Corrupt { path: dir.to_path_buf(), message: "counts disagree with meta.json".into() });
    }

    let read_pairs = |name: &str| -> Result<Vec<(String, String)>, CacheError> {
        let path = dir.join(name);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(text
            .lines()
            .filter_map(|l| l.split_once('\t'))
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect())
    };
    let skipped = read_pairs("skipped.tsv")?
        .into_iter()
        .map(|(doc_id, reason)| SkippedDocument { doc_id, reason })
        .collect();
    let failures = read_pairs("failures.tsv")?
        .into_iter()
        .map(|(doc_id, message)| DocumentFailure { doc_id, message })
        .collect();

    Ok(Some(Corpus { documents, vocabulary, skipped, failures }))
}
