//! Clarification scoring and top-k example selection.
//!
//! For a sentence `s` from word `w_i`'s pool,
//! `closeness = Σ_{j≠i} (P(s|w_i) − P(s|w_j))` and
//! `score = P(s|w_i) · closeness`, where `P` is the usage-model fitness
//! min–max normalized per word over all candidates of the set.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bilstm::{bilstm_fitness, BiLstmModel};
use crate::corpus::{ConfusionSet, EmbeddingTable, Sentence, SentencePools};
use crate::dict_filter::{filter_pool, DictClassifier};
use crate::error::{Error, Result};
use crate::gmm::{gmm_fitness, GmmModel, FEATURELESS_SCORE};

/// Examples returned per word unless a request overrides it.
pub const DEFAULT_K: usize = 5;
/// Normalized value assigned when a word's raw scores are all equal.
pub const DEGENERATE_FITNESS: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gmm,
    Bilstm,
    Baseline,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Gmm => "gmm",
            ModelKind::Bilstm => "bilstm",
            ModelKind::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmm" => Ok(ModelKind::Gmm),
            "bilstm" => Ok(ModelKind::Bilstm),
            "baseline" => Ok(ModelKind::Baseline),
            other => Err(Error::InvalidArgument(format!(
                "unknown model {other:?} (expected gmm, bilstm or baseline)"
            ))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A per-word fitness function P(s|w). Never looks at the target token.
pub trait UsageModel: Sync {
    fn kind(&self) -> ModelKind;
    fn fitness(&self, sentence: &Sentence, table: &EmbeddingTable) -> Result<f64>;
}

impl UsageModel for GmmModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Gmm
    }

    fn fitness(&self, sentence: &Sentence, table: &EmbeddingTable) -> Result<f64> {
        gmm_fitness(self, sentence, table, FEATURELESS_SCORE)
    }
}

impl UsageModel for BiLstmModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Bilstm
    }

    fn fitness(&self, sentence: &Sentence, table: &EmbeddingTable) -> Result<f64> {
        bilstm_fitness(self, sentence, table)
    }
}

impl<M: UsageModel + Send> UsageModel for std::sync::Arc<M> {
    fn kind(&self) -> ModelKind {
        (**self).kind()
    }

    fn fitness(&self, sentence: &Sentence, table: &EmbeddingTable) -> Result<f64> {
        (**self).fitness(sentence, table)
    }
}

/// One candidate scored under one word's model. A sentence may sit in two
/// pools with different targets, so the pool is part of the key.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FitnessKey {
    pub pool: String,
    pub sentence: String,
    pub word: String,
}

impl FitnessKey {
    pub fn new(pool: &str, sentence: &str, word: &str) -> Self {
        Self {
            pool: pool.to_owned(),
            sentence: sentence.to_owned(),
            word: word.to_owned(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitnessMatrix {
    pub model_kind: ModelKind,
    pub entries: BTreeMap<FitnessKey, f64>,
}

/// Min–max scales each word's column into [0, 1]; a constant column maps
/// to [`DEGENERATE_FITNESS`].
pub fn normalize_fitness(raw: &BTreeMap<FitnessKey, f64>, model_kind: ModelKind) -> Result<FitnessMatrix> {
    if raw.is_empty() {
        return Err(Error::InvalidArgument("no fitness scores to normalize".into()));
    }
    let mut range: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for (key, &v) in raw {
        if !v.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "non-finite fitness for sentence {} under {}",
                key.sentence, key.word
            )));
        }
        let r = range.entry(&key.word).or_insert((v, v));
        r.0 = r.0.min(v);
        r.1 = r.1.max(v);
    }
    let entries = raw
        .iter()
        .map(|(key, &v)| {
            let (lo, hi) = range[key.word.as_str()];
            let p = if hi > lo {
                (v - lo) / (hi - lo)
            } else {
                DEGENERATE_FITNESS
            };
            (key.clone(), p)
        })
        .collect();
    Ok(FitnessMatrix { model_kind, entries })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clarification {
    pub score: f64,
    pub fitness: f64,
    pub closeness: f64,
}

/// Scores `sentence` from `pool`'s candidate list as an example of `word`.
pub fn clarification_score(
    m: &FitnessMatrix,
    pool: &str,
    sentence: &str,
    word: &str,
    set: &ConfusionSet,
) -> Result<Clarification> {
    let get = |w: &str| {
        m.entries
            .get(&FitnessKey::new(pool, sentence, w))
            .copied()
            .ok_or_else(|| Error::MissingEntry {
                sentence: sentence.to_owned(),
                word: w.to_owned(),
            })
    };
    let fitness = get(word)?;
    let mut closeness = 0.0;
    for other in set.lemmas().filter(|l| *l != word) {
        closeness += fitness - get(other)?;
    }
    Ok(Clarification {
        score: fitness * closeness,
        fitness,
        closeness,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub text: String,
    pub score: f64,
    pub fitness: f64,
    pub closeness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordSuggestions {
    pub lemma: String,
    pub examples: Vec<ExampleRecord>,
    /// No candidate survived filtering for this word.
    pub empty_pool: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuggestionResult {
    pub set: String,
    pub model_kind: ModelKind,
    pub l1_restricted: bool,
    pub k: usize,
    pub per_word: Vec<WordSuggestions>,
    pub config_digest: String,
}

impl SuggestionResult {
    pub fn word(&self, lemma: &str) -> Option<&WordSuggestions> {
        self.per_word.iter().find(|w| w.lemma == lemma)
    }
}

fn rank(records: &mut Vec<ExampleRecord>, k: usize) {
    records.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    records.truncate(k);
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    Ok(())
}

/// Filter, score under every word's model, normalize, rank, keep top `k`.
///
/// Provenance fields `l1_restricted` and `config_digest` are left for the
/// caller to fill in.
pub fn select_examples<M: UsageModel>(
    set: &ConfusionSet,
    pools: &SentencePools,
    k: usize,
    clf: &DictClassifier,
    models: &BTreeMap<String, M>,
    table: &EmbeddingTable,
) -> Result<SuggestionResult> {
    check_k(k)?;
    let mut ordered = Vec::with_capacity(set.words.len());
    for lemma in set.lemmas() {
        let model = models.get(lemma).ok_or_else(|| Error::MissingModel(lemma.to_owned()))?;
        ordered.push((lemma, model));
    }
    let model_kind = ordered[0].1.kind();

    let candidates: Vec<(&str, Vec<Sentence>)> = set
        .lemmas()
        .map(|lemma| {
            let pool = pools.get(lemma).map(Vec::as_slice).unwrap_or_default();
            (lemma, filter_pool(clf, pool, table))
        })
        .collect();

    let jobs: Vec<(&str, &Sentence)> = candidates
        .iter()
        .flat_map(|(lemma, kept)| kept.iter().map(move |s| (*lemma, s)))
        .collect();
    let rows: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|(_, s)| {
            ordered
                .iter()
                .map(|(_, model)| model.fitness(s, table))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let mut per_word = Vec::with_capacity(candidates.len());
    if jobs.is_empty() {
        for (lemma, _) in &candidates {
            per_word.push(WordSuggestions {
                lemma: (*lemma).to_owned(),
                examples: Vec::new(),
                empty_pool: true,
            });
        }
    } else {
        let mut raw = BTreeMap::new();
        for ((pool, s), row) in jobs.iter().zip(&rows) {
            for ((word, _), v) in ordered.iter().zip(row) {
                raw.insert(FitnessKey::new(pool, &s.id, word), *v);
            }
        }
        let matrix = normalize_fitness(&raw, model_kind)?;
        for (lemma, kept) in &candidates {
            let mut records = Vec::with_capacity(kept.len());
            for s in kept {
                let c = clarification_score(&matrix, lemma, &s.id, lemma, set)?;
                records.push(ExampleRecord {
                    id: s.id.clone(),
                    text: s.text(),
                    score: c.score,
                    fitness: c.fitness,
                    closeness: c.closeness,
                });
            }
            rank(&mut records, k);
            per_word.push(WordSuggestions {
                lemma: (*lemma).to_owned(),
                empty_pool: kept.is_empty(),
                examples: records,
            });
        }
    }

    Ok(SuggestionResult {
        set: set.id.clone(),
        model_kind,
        l1_restricted: false,
        k,
        per_word,
        config_digest: String::new(),
    })
}

/// The last `k` sentences of each unfiltered pool with zero scores, listed
/// by ascending id.
pub fn baseline_examples(set: &ConfusionSet, pools: &SentencePools, k: usize) -> Result<SuggestionResult> {
    check_k(k)?;
    let per_word = set
        .lemmas()
        .map(|lemma| {
            let pool = pools.get(lemma).map(Vec::as_slice).unwrap_or_default();
            let mut examples: Vec<ExampleRecord> = pool[pool.len().saturating_sub(k)..]
                .iter()
                .map(|s| ExampleRecord {
                    id: s.id.clone(),
                    text: s.text(),
                    score: 0.0,
                    fitness: 0.0,
                    closeness: 0.0,
                })
                .collect();
            rank(&mut examples, k);
            WordSuggestions {
                lemma: lemma.to_owned(),
                empty_pool: pool.is_empty(),
                examples,
            }
        })
        .collect();
    Ok(SuggestionResult {
        set: set.id.clone(),
        model_kind: ModelKind::Baseline,
        l1_restricted: false,
        k,
        per_word,
        config_digest: String::new(),
    })
}
