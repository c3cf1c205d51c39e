//! Latent Dirichlet allocation by collapsed Gibbs sampling, used to audit
//! what a winnowed corpus contains.
//!
//! Randomness comes from a ChaCha8 stream seeded with `rng_seed`, so a
//! chain replays identically on every platform. The reported counts are the
//! hard assignments left by the final sweep.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Vocabulary, WordId};

/// Words listed per topic in reports.
pub const TOP_WORDS: usize = 20;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TopicError {
    #[error("cannot train on an empty corpus")]
    EmptyCorpus,
    #[error("need at least 2 topics, got {0}")]
    TooFewTopics(usize),
    #[error("{topics} topics exceed the {tokens} tokens available")]
    TooManyTopics { topics: usize, tokens: usize },
    #[error("need at least one iteration")]
    NoIterations,
    #[error("alpha and beta must be positive")]
    BadPrior,
    #[error("unknown topic id(s): {0:?}")]
    UnknownTopics(Vec<usize>),
    #[error("count invariant broken: {0}")]
    Invariant(String),
    #[error("topic table line {line}: {message}")]
    Table { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdaParams {
    pub topics: usize,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub rng_seed: u64,
}

impl LdaParams {
    /// `alpha = 50 / K`, `beta = 0.01`, 1000 sweeps.
    pub fn with_topics(topics: usize) -> Self {
        Self {
            topics,
            alpha: 50.0 / topics.max(1) as f64,
            beta: 0.01,
            iterations: 1000,
            rng_seed: 0,
        }
    }
}

impl Default for LdaParams {
    fn default() -> Self {
        Self::with_topics(100)
    }
}

#[derive(Debug, Clone)]
pub struct TopicModel {
    pub params: LdaParams,
    pub iterations_run: usize,
    pub doc_ids: Vec<String>,
    /// Surface forms of the model's local word ids.
    pub words: Vec<String>,
    docs: Vec<Vec<u32>>,
    assignments: Vec<Vec<u16>>,
    /// `K × V`, row-major by topic.
    topic_word: Vec<u32>,
    topic_totals: Vec<u64>,
    /// `N × K`, row-major by document.
    doc_topic: Vec<u32>,
}

impl TopicModel {
    pub fn topics(&self) -> usize {
        self.params.topics
    }

    pub fn vocabulary_size(&self) -> usize {
        self.words.len()
    }

    pub fn topic_word_count(&self, topic: usize, word: usize) -> u32 {
        self.topic_word[topic * self.words.len() + word]
    }

    pub fn doc_topic_counts(&self, doc: usize) -> &[u32] {
        let k = self.topics();
        &self.doc_topic[doc * k..(doc + 1) * k]
    }

    pub fn topic_total(&self, topic: usize) -> u64 {
        self.topic_totals[topic]
    }

    pub fn assignments(&self, doc: usize) -> &[u16] {
        &self.assignments[doc]
    }

    pub fn total_tokens(&self) -> usize {
        self.docs.iter().map(Vec::len).sum()
    }

    /// Both count marginals agree with the assignments and the corpus size.
    pub fn check_conservation(&self) -> Result<(), TopicError> {
        let k = self.topics();
        let v = self.vocabulary_size();
        for (d, doc) in self.docs.iter().enumerate() {
            let sum: u64 = self.doc_topic_counts(d).iter().map(|&c| c as u64).sum();
            if sum != doc.len() as u64 {
                return Err(TopicError::Invariant(format!("doc {d}: topic counts sum {sum} != {} tokens", doc.len())));
            }
        }
        let mut grand = 0u64;
        for t in 0..k {
            let row: u64 = self.topic_word[t * v..(t + 1) * v].iter().map(|&c| c as u64).sum();
            if row != self.topic_totals[t] {
                return Err(TopicError::Invariant(format!("topic {t}: word counts {row} != total {}", self.topic_totals[t])));
            }
            grand += row;
        }
        if grand != self.total_tokens() as u64 {
            return Err(TopicError::Invariant(format!("assigned {grand} != corpus {}", self.total_tokens())));
        }
        let mut recount = vec![0u32; k * v];
        for (doc, z) in self.docs.iter().zip(&self.assignments) {
            for (&w, &t) in doc.iter().zip(z) {
                recount[t as usize * v + w as usize] += 1;
            }
        }
        if recount != self.topic_word {
            return Err(TopicError::Invariant("topic-word counts disagree with assignments".into()));
        }
        Ok(())
    }

    fn sweep(&mut self, rng: &mut ChaCha8Rng, weights: &mut [f64]) {
        let k = self.topics();
        let v = self.vocabulary_size();
        let (alpha, beta) = (self.params.alpha, self.params.beta);
        let v_beta = v as f64 * beta;
        for d in 0..self.docs.len() {
            for i in 0..self.docs[d].len() {
                let w = self.docs[d][i] as usize;
                let old = self.assignments[d][i] as usize;
                self.doc_topic[d * k + old] -= 1;
                self.topic_word[old * v + w] -= 1;
                self.topic_totals[old] -= 1;

                let mut acc = 0.0;
                for (t, slot) in weights.iter_mut().enumerate() {
                    let p = (self.doc_topic[d * k + t] as f64 + alpha) * (self.topic_word[t * v + w] as f64 + beta)
                        / (self.topic_totals[t] as f64 + v_beta);
                    acc += p;
                    *slot = acc;
                }
                let u = rng.gen::<f64>() * acc;
                let new = weights.iter().position(|&c| u < c).unwrap_or(k - 1);

                self.assignments[d][i] = new as u16;
                self.doc_topic[d * k + new] += 1;
                self.topic_word[new * v + w] += 1;
                self.topic_totals[new] += 1;
            }
        }
    }
}

/// Train LDA on `documents`, invoking `after_sweep` with each sweep's state.
pub fn train_lda_observed<'a, I, F>(
    documents: I,
    vocabulary: &Vocabulary,
    params: LdaParams,
    mut after_sweep: F,
) -> Result<TopicModel, TopicError>
where
    I: IntoIterator<Item = &'a Document>,
    F: FnMut(usize, &TopicModel),
{
    let docs: Vec<&Document> = documents.into_iter().collect();
    if docs.is_empty() {
        return Err(TopicError::EmptyCorpus);
    }
    if params.topics < 2 {
        return Err(TopicError::TooFewTopics(params.topics));
    }
    if params.topics > u16::MAX as usize {
        return Err(TopicError::TooManyTopics { topics: params.topics, tokens: u16::MAX as usize });
    }
    if params.iterations == 0 {
        return Err(TopicError::NoIterations);
    }
    if !(params.alpha > 0.0 && params.beta > 0.0) {
        return Err(TopicError::BadPrior);
    }
    let tokens: usize = docs.iter().map(|d| d.token_count()).sum();
    if tokens == 0 {
        return Err(TopicError::EmptyCorpus);
    }
    if params.topics > tokens {
        return Err(TopicError::TooManyTopics { topics: params.topics, tokens });
    }

    // dense local ids, in ascending surface order of the words present
    let mut present: Vec<WordId> = docs.iter().flat_map(|d| d.tokens.iter().copied()).collect();
    present.sort_unstable();
    present.dedup();
    let mut words: Vec<(String, WordId)> = present
        .into_iter()
        .map(|w| (vocabulary.word(w).unwrap_or("?").to_string(), w))
        .collect();
    words.sort();
    let local: HashMap<WordId, u32> = words.iter().enumerate().map(|(i, (_, w))| (*w, i as u32)).collect();

    let k = params.topics;
    let v = words.len();
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut model = TopicModel {
        params,
        iterations_run: 0,
        doc_ids: docs.iter().map(|d| d.doc_id.clone()).collect(),
        words: words.into_iter().map(|(s, _)| s).collect(),
        docs: docs.iter().map(|d| d.tokens.iter().map(|w| local[w]).collect()).collect(),
        assignments: Vec::with_capacity(docs.len()),
        topic_word: vec![0; k * v],
        topic_totals: vec![0; k],
        doc_topic: vec![0; docs.len() * k],
    };
    for d in 0..model.docs.len() {
        let z: Vec<u16> = model.docs[d]
            .iter()
            .map(|&w| {
                let t = rng.gen_range(0..k);
                model.doc_topic[d * k + t] += 1;
                model.topic_word[t * v + w as usize] += 1;
                model.topic_totals[t] += 1;
                t as u16
            })
            .collect();
        model.assignments.push(z);
    }

    let mut weights = vec![0.0; k];
    for sweep in 0..params.iterations {
        model.sweep(&mut rng, &mut weights);
        model.iterations_run = sweep + 1;
        after_sweep(sweep, &model);
    }
    Ok(model)
}

pub fn train_lda<'a, I>(documents: I, vocabulary: &Vocabulary, params: LdaParams) -> Result<TopicModel, TopicError>
where
    I: IntoIterator<Item = &'a Document>,
{
    train_lda_observed(documents, vocabulary, params, |_, _| {})
}

/// Share of all tokens assigned to each topic.
pub fn topic_prevalence(model: &TopicModel) -> Vec<f64> {
    let total = model.total_tokens() as f64;
    model.topic_totals.iter().map(|&c| c as f64 / total).collect()
}

/// Top `n` words of `topic` by `(n_kw + β) / (n_k + |V|β)`, ties by surface form.
pub fn top_words(model: &TopicModel, topic: usize, n: usize) -> Result<Vec<(String, f64)>, TopicError> {
    if topic >= model.topics() {
        return Err(TopicError::UnknownTopics(vec![topic]));
    }
    let v = model.vocabulary_size();
    let beta = model.params.beta;
    let denom = model.topic_totals[topic] as f64 + v as f64 * beta;
    let mut ranked: Vec<(usize, u32)> = (0..v).map(|w| (w, model.topic_word_count(topic, w))).collect();
    // equal counts give equal probabilities; model words are already sorted by surface
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked
        .into_iter()
        .take(n)
        .map(|(w, c)| (model.words[w].clone(), (c as f64 + beta) / denom))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub topic_id: usize,
    pub scholar_name: Option<String>,
    pub prevalence: f64,
    pub top_words: Vec<(String, f64)>,
}

impl TopicSummary {
    pub fn display_name(&self) -> String {
        self.scholar_name.clone().unwrap_or_else(|| format!("topic-{}", self.topic_id))
    }
}

/// Per-topic prevalence and top words, without names.
pub fn summarize(model: &TopicModel, n: usize) -> Vec<TopicSummary> {
    let prevalence = topic_prevalence(model);
    (0..model.topics())
        .map(|t| TopicSummary {
            topic_id: t,
            scholar_name: None,
            prevalence: prevalence[t],
            top_words: top_words(model, t, n).expect("valid topic"),
        })
        .collect()
}

/// Attach scholar-chosen names. Names never touch counts or rankings.
pub fn assign_names(
    summaries: &[TopicSummary],
    names: &BTreeMap<usize, String>,
) -> Result<Vec<TopicSummary>, TopicError> {
    let unknown: Vec<usize> = names.keys().copied().filter(|&id| id >= summaries.len()).collect();
    if !unknown.is_empty() {
        return Err(TopicError::UnknownTopics(unknown));
    }
    Ok(summaries
        .iter()
        .map(|s| TopicSummary {
            scholar_name: names.get(&s.topic_id).cloned().or_else(|| s.scholar_name.clone()),
            ..s.clone()
        })
        .collect())
}

/// One block per topic, most prevalent first: `topic_id<TAB>name<TAB>prevalence`
/// followed by `surface<TAB>probability` lines.
pub fn topic_report(summaries: &[TopicSummary]) -> String {
    let mut order: Vec<&TopicSummary> = summaries.iter().collect();
    order.sort_by(|a, b| b.prevalence.total_cmp(&a.prevalence).then(a.topic_id.cmp(&b.topic_id)));
    let mut out = String::new();
    for s in order {
        out.push_str(&format!("{}\t{}\t{}\n", s.topic_id, s.display_name(), s.prevalence));
        for (word, p) in &s.top_words {
            out.push_str(&format!("{word}\t{p}\n"));
        }
    }
    out
}

/// Parse a topic report back into summaries (headers have three fields, word lines two).
pub fn parse_topic_report(text: &str) -> Result<Vec<TopicSummary>, TopicError> {
    let mut out: Vec<TopicSummary> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let bad = |message: String| TopicError::Table { line: idx + 1, message };
        match line.split('\t').collect::<Vec<_>>()[..] {
            [id, name, prevalence] => {
                let topic_id: usize = id.parse().map_err(|e| bad(format!("topic id: {e}")))?;
                let auto = format!("topic-{topic_id}");
                out.push(TopicSummary {
                    topic_id,
                    scholar_name: (name != auto).then(|| name.to_string()),
                    prevalence: prevalence.parse().map_err(|e| bad(format!("prevalence: {e}")))?,
                    top_words: Vec::new(),
                });
            }
            [word, p] => {
                let p: f64 = p.parse().map_err(|e| bad(format!("probability: {e}")))?;
                out.last_mut()
                    .ok_or_else(|| bad("word line before any topic header".into()))?
                    .top_words
                    .push((word.to_string(), p));
            }
            _ => return Err(bad(format!("unexpected line {line:?}"))),
        }
    }
    out.sort_by_key(|s| s.topic_id);
    Ok(out)
}

/// `topic_id<TAB>name` lines.
pub fn parse_name_map(text: &str) -> Result<BTreeMap<usize, String>, TopicError> {
    let mut out = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| TopicError::Table { line: idx + 1, message };
        let (id, name) = line.split_once('\t').ok_or_else(|| bad("expected topic_id<TAB>name".into()))?;
        let id: usize = id.trim().parse().map_err(|e| bad(format!("topic id: {e}")))?;
        let name = name.trim();
        if name.is_empty() || name.contains('\t') {
            return Err(bad("empty or tabbed name".into()));
        }
        out.insert(id, name.to_string());
    }
    Ok(out)
}

pub fn name_map_to_tsv(names: &BTreeMap<usize, String>) -> String {
    names.iter().map(|(id, n)| format!("{id}\t{n}\n")).collect()
}
