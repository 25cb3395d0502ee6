//! Logistic-regression filter for "simple but informative" sentences.
//!
//! Ten hand-crafted surface features stand in for a syntactic parse; the
//! word lists below are fixed and part of the model's definition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EmbeddingTable, Sentence, Token};
use crate::error::{Error, Result};

pub const FEATURE_COUNT: usize = 10;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const FILTER_FILE_VERSION: u32 = 1;
const MIN_STD: f64 = 1e-9;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "token_count",
    "mean_word_length",
    "punctuation_count",
    "digit_token_count",
    "uppercase_initial_ratio",
    "function_word_ratio",
    "has_finite_verb",
    "pronoun_subject",
    "comma_count",
    "oov_ratio",
];

/// Closed-class words counted by `function_word_ratio`.
pub const FUNCTION_WORDS: &[&str] = &[
    "a",
    "about",
    "above",
    "after",
    "again",
    "against",
    "all",
    "am",
    "an",
    "and",
    "any",
    "are",
    "as",
    "at",
    "be",
    "because",
    "been",
    "before",
    "being",
    "below",
    "between",
    "both",
    "but",
    "by",
    "can",
    "could",
    "did",
    "do",
    "does",
    "doing",
    "down",
    "during",
    "each",
    "few",
    "for",
    "from",
    "further",
    "had",
    "has",
    "have",
    "having",
    "he",
    "her",
    "here",
    "hers",
    "herself",
    "him",
    "himself",
    "his",
    "how",
    "i",
    "if",
    "in",
    "into",
    "is",
    "it",
    "its",
    "itself",
    "just",
    "may",
    "me",
    "might",
    "more",
    "most",
    "must",
    "my",
    "myself",
    "no",
    "nor",
    "not",
    "now",
    "of",
    "off",
    "on",
    "once",
    "only",
    "or",
    "other",
    "our",
    "ours",
    "ourselves",
    "out",
    "over",
    "own",
    "same",
    "shall",
    "she",
    "should",
    "so",
    "some",
    "such",
    "than",
    "that",
    "the",
    "their",
    "theirs",
    "them",
    "themselves",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "through",
    "to",
    "too",
    "under",
    "until",
    "up",
    "very",
    "was",
    "we",
    "were",
    "what",
    "when",
    "where",
    "which",
    "while",
    "who",
    "whom",
    "why",
    "will",
    "with",
    "would",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
];

/// Sentence-initial tokens that mark a pronoun subject.
pub const PRONOUNS: &[&str] = &[
    "i",
    "you",
    "he",
    "she",
    "it",
    "we",
    "they",
    "this",
    "that",
    "these",
    "those",
    "there",
    "someone",
    "somebody",
    "something",
    "everyone",
    "everybody",
    "everything",
    "nobody",
    "nothing",
    "one",
];

/// Unambiguous finite verb forms.
pub const FINITE_VERBS: &[&str] = &[
    "am", "is", "are", "was", "were", "has", "have", "had", "does", "do", "did", "will", "would", "can", "could",
    "shall", "should", "may", "might", "must", "says", "said", "went", "goes", "made", "makes", "took", "takes",
    "came", "comes", "got", "gets", "knew", "knows", "thought", "thinks", "saw", "sees", "gave", "gives", "told",
    "tells", "felt", "feels", "became", "becomes", "left", "began", "begins", "kept", "keeps", "held", "holds",
    "brought", "brings",
];

fn in_list(list: &[&str], norm: &str) -> bool {
    list.contains(&norm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntacticFeatures(pub [f64; FEATURE_COUNT]);

impl SyntacticFeatures {
    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES.iter().position(|n| *n == name).map(|i| self.0[i])
    }
}

fn noun_like(token: &Token) -> bool {
    !token.is_punctuation()
        && token.surface().chars().all(char::is_alphabetic)
        && !in_list(FUNCTION_WORDS, token.norm())
}

fn pronoun(token: &Token) -> bool {
    in_list(PRONOUNS, token.norm())
}

fn ratio(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

/// Ratios are taken over word (non-punctuation) tokens; counts over all tokens.
pub fn syntactic_features(sentence: &Sentence, table: &EmbeddingTable) -> SyntacticFeatures {
    let tokens = &sentence.tokens;
    let words: Vec<&Token> = tokens.iter().filter(|t| !t.is_punctuation()).collect();
    let n_words = words.len();

    let mean_len = if n_words == 0 {
        0.0
    } else {
        words.iter().map(|t| t.surface().chars().count()).sum::<usize>() as f64 / n_words as f64
    };
    let punctuation = tokens.iter().filter(|t| t.is_punctuation()).count();
    let digits = tokens
        .iter()
        .filter(|t| t.surface().chars().any(|c| c.is_ascii_digit()))
        .count();
    let upper = words
        .iter()
        .filter(|t| t.surface().chars().next().is_some_and(char::is_uppercase))
        .count();
    let function = words.iter().filter(|t| in_list(FUNCTION_WORDS, t.norm())).count();
    let finite = tokens.iter().enumerate().any(|(i, t)| {
        if in_list(FINITE_VERBS, t.norm()) {
            return true;
        }
        let inflected = t.norm().len() > 2 && (t.norm().ends_with('s') || t.norm().ends_with("ed"));
        inflected && i > 0 && (pronoun(&tokens[i - 1]) || noun_like(&tokens[i - 1]))
    });
    let pronoun_subject = tokens.first().is_some_and(pronoun);
    let commas = tokens.iter().filter(|t| t.surface() == ",").count();
    let oov = words.iter().filter(|t| !table.contains(t)).count();

    SyntacticFeatures([
        tokens.len() as f64,
        mean_len,
        punctuation as f64,
        digits as f64,
        ratio(upper, n_words),
        ratio(function, n_words),
        f64::from(u8::from(finite)),
        f64::from(u8::from(pronoun_subject)),
        commas as f64,
        ratio(oov, n_words),
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub mean: [f64; FEATURE_COUNT],
    pub std: [f64; FEATURE_COUNT],
}

impl FeatureScaling {
    fn fit(samples: &[&SyntacticFeatures]) -> Self {
        let n = samples.len() as f64;
        let mut mean = [0.0; FEATURE_COUNT];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s.0) {
                *m += v / n;
            }
        }
        let mut std = [0.0; FEATURE_COUNT];
        for s in samples {
            for ((a, v), m) in std.iter_mut().zip(s.0).zip(mean) {
                *a += (v - m) * (v - m) / n;
            }
        }
        std.iter_mut().for_each(|v| *v = v.sqrt().max(MIN_STD));
        Self { mean, std }
    }

    fn apply(&self, f: &SyntacticFeatures) -> [f64; FEATURE_COUNT] {
        let mut out = [0.0; FEATURE_COUNT];
        for i in 0..FEATURE_COUNT {
            out[i] = (f.0[i] - self.mean[i]) / self.std[i];
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DictClassifier {
    pub weights: [f64; FEATURE_COUNT],
    pub bias: f64,
    pub threshold: f64,
    pub scaling: FeatureScaling,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for LogRegHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 500,
            l2: 1e-3,
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_loss(z: f64, y: f64) -> f64 {
    // softplus(z) - y z
    z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z
}

impl DictClassifier {
    pub fn probability(&self, features: &SyntacticFeatures) -> f64 {
        let x = self.scaling.apply(features);
        let z = self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        sigmoid(z)
    }

    /// Accepts when the probability reaches the threshold (ties accept).
    pub fn accepts(&self, probability: f64) -> bool {
        probability >= self.threshold
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub accepted: bool,
    pub probability: f64,
}

pub fn is_dictionary_like(clf: &DictClassifier, sentence: &Sentence, table: &EmbeddingTable) -> Verdict {
    let probability = clf.probability(&syntactic_features(sentence, table));
    Verdict {
        accepted: clf.accepts(probability),
        probability,
    }
}

/// Keeps the sentences the classifier accepts, preserving order.
pub fn filter_pool(clf: &DictClassifier, pool: &[Sentence], table: &EmbeddingTable) -> Vec<Sentence> {
    pool.iter()
        .filter(|s| is_dictionary_like(clf, s, table).accepted)
        .cloned()
        .collect()
}

/// Trained classifier plus the objective value after every epoch.
#[derive(Clone, Debug)]
pub struct LogRegFit {
    pub classifier: DictClassifier,
    pub loss_history: Vec<f64>,
}

/// Full-batch gradient descent on mean cross-entropy plus `l2/2 · |w|²`
/// (bias unpenalised). The penalty is applied as a proximal shrink, so any
/// `l2 ≥ 0` is stable. Initial weights are small seeded uniforms.
pub fn train_logreg(pos: &[SyntacticFeatures], neg: &[SyntacticFeatures], hyper: &LogRegHyper) -> Result<LogRegFit> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidArgument(
            "both positive and negative examples are required".into(),
        ));
    }
    if !(hyper.learning_rate > 0.0) || !(hyper.l2 >= 0.0) {
        return Err(Error::InvalidArgument(
            "learning_rate must be positive and l2 non-negative".into(),
        ));
    }
    if !(hyper.threshold > 0.0 && hyper.threshold < 1.0) {
        return Err(Error::InvalidArgument("threshold must lie in (0, 1)".into()));
    }
    let all: Vec<&SyntacticFeatures> = pos.iter().chain(neg).collect();
    let scaling = FeatureScaling::fit(&all);
    let data: Vec<([f64; FEATURE_COUNT], f64)> = pos
        .iter()
        .map(|f| (scaling.apply(f), 1.0))
        .chain(neg.iter().map(|f| (scaling.apply(f), 0.0)))
        .collect();
    let n = data.len() as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    // Features constant in training start at zero and get no gradient, so
    // the 1e-9 std floor cannot amplify them at inference.
    let mut weights = [0.0; FEATURE_COUNT];
    for (w, sd) in weights.iter_mut().zip(scaling.std) {
        let init = rng.random_range(-0.01..0.01);
        if sd > MIN_STD {
            *w = init;
        }
    }
    let mut bias = 0.0;

    let objective = |weights: &[f64; FEATURE_COUNT], bias: f64| {
        let ce: f64 = data
            .iter()
            .map(|(x, y)| {
                let z = bias + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                log_loss(z, *y)
            })
            .sum::<f64>()
            / n;
        ce + 0.5 * hyper.l2 * weights.iter().map(|w| w * w).sum::<f64>()
    };

    let mut loss_history = Vec::with_capacity(hyper.epochs);
    for epoch in 1..=hyper.epochs {
        let mut gw = [0.0; FEATURE_COUNT];
        let mut gb = 0.0;
        for (x, y) in &data {
            let z = bias + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            let d = sigmoid(z) - y;
            for (g, v) in gw.iter_mut().zip(x) {
                *g += d * v / n;
            }
            gb += d / n;
        }
        let shrink = 1.0 + hyper.learning_rate * hyper.l2;
        for (w, g) in weights.iter_mut().zip(gw) {
            *w = (*w - hyper.learning_rate * g) / shrink;
        }
        bias -= hyper.learning_rate * gb;
        let loss = objective(&weights, bias);
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        loss_history.push(loss);
    }
    Ok(LogRegFit {
        classifier: DictClassifier {
            weights,
            bias,
            threshold: hyper.threshold,
            scaling,
        },
        loss_history,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterFile {
    pub version: u32,
    pub weights: [f64; FEATURE_COUNT],
    pub bias: f64,
    pub threshold: f64,
    pub scaling: FeatureScaling,
}

impl FilterFile {
    pub fn new(clf: &DictClassifier) -> Self {
        Self {
            version: FILTER_FILE_VERSION,
            weights: clf.weights,
            bias: clf.bias,
            threshold: clf.threshold,
            scaling: clf.scaling.clone(),
        }
    }

    pub fn into_classifier(self) -> Result<DictClassifier> {
        if self.version != FILTER_FILE_VERSION {
            return Err(Error::Version {
                kind: "filter",
                found: self.version,
                expected: FILTER_FILE_VERSION,
            });
        }
        Ok(DictClassifier {
            weights: self.weights,
            bias: self.bias,
            threshold: self.threshold,
            scaling: self.scaling,
        })
    }
}
