//! IBM Model 1 word alignment and L1-gloss pool restriction.
//!
//! `t(f|e)` is the probability that L2 word `e` (lowercased) translates to
//! L1 token `f`. A null L2 word absorbs L1 tokens with no source.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::corpus::{ConfusionSet, Sentence, SentencePools, SourceTag, Token};
use crate::error::{Error, Result};

pub const NULL_WORD: &str = "<null>";
/// Probabilities below this are dropped when a table is saved.
pub const PRUNE_BELOW: f64 = 1e-6;
pub const ALIGN_FILE_VERSION: u32 = 1;

/// One line of a parallel corpus file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub l2: Vec<String>,
    pub l1: Vec<String>,
}

pub fn read_parallel(reader: impl BufRead) -> Result<Vec<ParallelPair>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(pair);
    }
    Ok(out)
}

/// Parallel pairs as corpus sentences with `l1_text`, ids `{prefix}{index:07}`.
pub fn parallel_sentences(pairs: &[ParallelPair], prefix: &str) -> Result<Vec<Sentence>> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let tokens = p.l2.iter().cloned().map(Token::new).collect::<Result<_>>()?;
            Ok(Sentence::new(format!("{prefix}{i:07}"), tokens, SourceTag::Parallel)?.with_l1(p.l1.clone()))
        })
        .collect()
}

/// Training pair for a sentence carrying `l1_text`.
pub fn sentence_pair(sentence: &Sentence) -> Result<ParallelPair> {
    let l1 = sentence
        .l1_text
        .clone()
        .ok_or_else(|| Error::MissingL1(sentence.id.clone()))?;
    Ok(ParallelPair {
        l2: sentence.tokens.iter().map(|t| t.norm().to_owned()).collect(),
        l1,
    })
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TranslationTable {
    pub probs: BTreeMap<String, BTreeMap<String, f64>>,
}

impl TranslationTable {
    pub fn prob(&self, e: &str, f: &str) -> f64 {
        self.probs.get(e).and_then(|row| row.get(f)).copied().unwrap_or(0.0)
    }

    /// Most probable L1 token for `e`; ties go to the smaller token.
    pub fn best(&self, e: &str) -> Option<(&str, f64)> {
        let row = self.probs.get(e)?;
        let mut best: Option<(&str, f64)> = None;
        for (f, &p) in row {
            if best.is_none_or(|(_, b)| p > b) {
                best = Some((f, p));
            }
        }
        best
    }
}

#[derive(Clone, Debug)]
pub struct Ibm1Fit {
    pub table: TranslationTable,
    /// Corpus log-likelihood before training and after every iteration.
    pub log_likelihood: Vec<f64>,
}

struct Vocab {
    index: BTreeMap<String, u32>,
}

impl Vocab {
    fn new<'a>(words: impl Iterator<Item = &'a str>) -> Self {
        let sorted: BTreeSet<&str> = words.collect();
        let index = sorted
            .into_iter()
            .enumerate()
            .map(|(i, w)| (w.to_owned(), i as u32))
            .collect();
        Self { index }
    }

    fn id(&self, w: &str) -> u32 {
        self.index[w]
    }
}

/// Corpus interned to integer ids; L2 id 0 is the null word.
struct Interned {
    e_vocab: Vec<String>,
    f_vocab: Vec<String>,
    pairs: Vec<(Vec<u32>, Vec<u32>)>,
}

fn intern(pairs: &[ParallelPair]) -> Result<Interned> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no parallel pairs to train on".into()));
    }
    for (i, p) in pairs.iter().enumerate() {
        if p.l2.is_empty() || p.l1.is_empty() {
            return Err(Error::EmptyPair(i));
        }
        if p.l2.iter().any(|e| e.to_lowercase() == NULL_WORD) {
            return Err(Error::InvalidToken(format!(
                "pair {i} uses the reserved word {NULL_WORD}"
            )));
        }
    }
    let lowered: Vec<Vec<String>> = pairs
        .iter()
        .map(|p| p.l2.iter().map(|e| e.to_lowercase()).collect())
        .collect();
    let e_vocab = Vocab::new(lowered.iter().flatten().map(String::as_str));
    let f_vocab = Vocab::new(pairs.iter().flat_map(|p| p.l1.iter().map(String::as_str)));
    let interned = pairs
        .iter()
        .zip(&lowered)
        .map(|(p, l2)| {
            let mut es = vec![0];
            es.extend(l2.iter().map(|e| e_vocab.id(e) + 1));
            let fs = p.l1.iter().map(|f| f_vocab.id(f)).collect();
            (es, fs)
        })
        .collect();
    let mut e_names = vec![NULL_WORD.to_owned()];
    e_names.extend(e_vocab.index.into_keys());
    Ok(Interned {
        e_vocab: e_names,
        f_vocab: f_vocab.index.into_keys().collect(),
        pairs: interned,
    })
}

type Rows = Vec<BTreeMap<u32, f64>>;

fn log_likelihood(t: &Rows, pairs: &[(Vec<u32>, Vec<u32>)]) -> f64 {
    let mut ll = 0.0;
    for (es, fs) in pairs {
        let norm = (es.len() as f64).ln();
        for f in fs {
            let total: f64 = es.iter().map(|&e| t[e as usize][f]).sum();
            ll += total.ln() - norm;
        }
    }
    ll
}

/// Standard Model 1 EM from a uniform start over co-occurring tokens.
pub fn train_ibm1(pairs: &[ParallelPair], iterations: usize) -> Result<Ibm1Fit> {
    let data = intern(pairs)?;
    let mut t: Rows = vec![BTreeMap::new(); data.e_vocab.len()];
    for (es, fs) in &data.pairs {
        for &e in es {
            for &f in fs {
                t[e as usize].insert(f, 0.0);
            }
        }
    }
    for row in &mut t {
        let uniform = 1.0 / row.len() as f64;
        row.values_mut().for_each(|p| *p = uniform);
    }

    let mut history = Vec::with_capacity(iterations + 1);
    history.push(log_likelihood(&t, &data.pairs));
    for _ in 0..iterations {
        let mut counts: Rows = t.iter().map(|row| row.keys().map(|&f| (f, 0.0)).collect()).collect();
        for (es, fs) in &data.pairs {
            for &f in fs {
                let total: f64 = es.iter().map(|&e| t[e as usize][&f]).sum();
                for &e in es {
                    *counts[e as usize].get_mut(&f).unwrap() += t[e as usize][&f] / total;
                }
            }
        }
        for (row, c) in t.iter_mut().zip(&counts) {
            let total: f64 = c.values().sum();
            for (f, p) in row.iter_mut() {
                *p = c[f] / total;
            }
        }
        history.push(log_likelihood(&t, &data.pairs));
    }

    let probs = t
        .into_iter()
        .enumerate()
        .map(|(e, row)| {
            let named = row
                .into_iter()
                .map(|(f, p)| (data.f_vocab[f as usize].clone(), p))
                .collect();
            (data.e_vocab[e].clone(), named)
        })
        .collect();
    Ok(Ibm1Fit {
        table: TranslationTable { probs },
        log_likelihood: history,
    })
}

/// Links `(l2_index, l1_index)`: every L1 token picks its most probable L2
/// source, lowest index on ties. Tokens the null word explains strictly
/// better, or that no source explains at all, stay unlinked.
pub fn align(tbl: &TranslationTable, l2: &[String], l1: &[String]) -> Vec<(usize, usize)> {
    let lowered: Vec<String> = l2.iter().map(|e| e.to_lowercase()).collect();
    let mut links = Vec::new();
    for (j, f) in l1.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in lowered.iter().enumerate() {
            let p = tbl.prob(e, f);
            if best.is_none_or(|(_, b)| p > b) {
                best = Some((i, p));
            }
        }
        if let Some((i, p)) = best {
            if p > 0.0 && p >= tbl.prob(NULL_WORD, f) {
                links.push((i, j));
            }
        }
    }
    links
}

/// L1 tokens linked to the target, joined by spaces in L1 order.
pub fn extract_gloss(tbl: &TranslationTable, sentence: &Sentence) -> Result<Option<String>> {
    let target = sentence.target()?;
    let pair = sentence_pair(sentence)?;
    let linked: Vec<&str> = align(tbl, &pair.l2, &pair.l1)
        .into_iter()
        .filter(|&(i, _)| i == target)
        .map(|(_, j)| pair.l1[j].as_str())
        .collect();
    Ok((!linked.is_empty()).then(|| linked.join(" ")))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GlossGrouping {
    /// Per lemma: gloss to sentence ids in pool order.
    pub per_word: BTreeMap<String, BTreeMap<String, Vec<String>>>,
    /// Glosses present for every word of the set.
    pub common: BTreeSet<String>,
    /// Sentences without `l1_text` or target.
    pub skipped: usize,
    /// Sentences whose target aligned to nothing.
    pub unaligned: usize,
}

pub fn group_and_intersect(set: &ConfusionSet, pools: &SentencePools, tbl: &TranslationTable) -> GlossGrouping {
    let mut grouping = GlossGrouping::default();
    for lemma in set.lemmas() {
        let mut buckets: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for s in pools.get(lemma).into_iter().flatten() {
            if s.l1_text.is_none() || s.target_index.is_none() {
                grouping.skipped += 1;
                continue;
            }
            match extract_gloss(tbl, s) {
                Ok(Some(gloss)) => buckets.entry(gloss).or_default().push(s.id.clone()),
                Ok(None) => grouping.unaligned += 1,
                Err(_) => grouping.skipped += 1,
            }
        }
        grouping.per_word.insert(lemma.to_owned(), buckets);
    }
    let mut keys = grouping
        .per_word
        .values()
        .map(|b| b.keys().cloned().collect::<BTreeSet<_>>());
    grouping.common = keys.next().unwrap_or_default();
    for other in keys {
        grouping.common = grouping.common.intersection(&other).cloned().collect();
    }
    grouping
}

#[derive(Clone, Debug, PartialEq)]
pub struct Restriction {
    pub pools: SentencePools,
    /// Set when no gloss is shared and the pools were returned unchanged.
    pub fallback: bool,
}

/// Keeps only sentences whose gloss is common to the whole set.
pub fn restrict_pool(pools: &SentencePools, grouping: &GlossGrouping) -> Restriction {
    if grouping.common.is_empty() {
        return Restriction {
            pools: pools.clone(),
            fallback: true,
        };
    }
    let restricted = pools
        .iter()
        .map(|(lemma, pool)| {
            let Some(buckets) = grouping.per_word.get(lemma) else {
                return (lemma.clone(), pool.clone());
            };
            let keep: BTreeSet<&str> = grouping
                .common
                .iter()
                .filter_map(|g| buckets.get(g))
                .flatten()
                .map(String::as_str)
                .collect();
            let kept = pool.iter().filter(|s| keep.contains(s.id.as_str())).cloned().collect();
            (lemma.clone(), kept)
        })
        .collect();
    Restriction {
        pools: restricted,
        fallback: false,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignFile {
    pub version: u32,
    pub null_word: String,
    pub probs: BTreeMap<String, BTreeMap<String, f64>>,
}

impl AlignFile {
    /// Lossy: entries below [`PRUNE_BELOW`] are dropped, rows are not renormalized.
    pub fn new(tbl: &TranslationTable) -> Self {
        let probs = tbl
            .probs
            .iter()
            .map(|(e, row)| {
                let kept = row
                    .iter()
                    .filter(|(_, &p)| p >= PRUNE_BELOW)
                    .map(|(f, &p)| (f.clone(), p))
                    .collect();
                (e.clone(), kept)
            })
            .collect();
        Self {
            version: ALIGN_FILE_VERSION,
            null_word: NULL_WORD.to_owned(),
            probs,
        }
    }

    pub fn into_table(self) -> Result<TranslationTable> {
        if self.version != ALIGN_FILE_VERSION {
            return Err(Error::Version {
                kind: "alignment",
                found: self.version,
                expected: ALIGN_FILE_VERSION,
            });
        }
        if self.null_word != NULL_WORD {
            return Err(Error::InvalidToken(format!(
                "unexpected null word {:?}",
                self.null_word
            )));
        }
        Ok(TranslationTable { probs: self.probs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::WordEntry;
    use proptest::{prop_assert, proptest};

    fn pair(l2: &str, l1: &str) -> ParallelPair {
        ParallelPair {
            l2: l2.split_whitespace().map(String::from).collect(),
            l1: l1.split_whitespace().map(String::from).collect(),
        }
    }

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn assert_rows_sum_to_one(tbl: &TranslationTable) {
        for (e, row) in &tbl.probs {
            let total: f64 = row.values().sum();
            assert!((total - 1.0).abs() < 1e-9, "{e}: {total}");
            assert!(row.values().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn single_pair_is_certain() {
        let fit = train_ibm1(&[pair("a", "x")], 1).unwrap();
        assert_eq!(fit.table.prob("a", "x"), 1.0);
        assert_eq!(fit.table.prob(NULL_WORD, "x"), 1.0);
    }

    #[test]
    fn zero_iterations_is_uniform() {
        let fit = train_ibm1(&[pair("a b", "x y"), pair("a", "z")], 0).unwrap();
        for f in ["x", "y", "z"] {
            assert!((fit.table.prob("a", f) - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(fit.table.prob("b", "x"), 0.5);
        assert_eq!(fit.table.prob("b", "z"), 0.0);
        assert_eq!(fit.log_likelihood.len(), 1);
    }

    #[test]
    fn empty_side_names_the_pair() {
        let err = train_ibm1(&[pair("a", "x"), pair("", "y")], 3).unwrap_err();
        assert!(matches!(err, Error::EmptyPair(1)));
        assert!(train_ibm1(&[], 3).is_err());
        assert!(train_ibm1(&[pair("<null>", "x")], 3).is_err());
    }

    #[test]
    fn l2_side_is_lowercased() {
        let fit = train_ibm1(&[pair("Hard", "G")], 2).unwrap();
        assert_eq!(fit.table.prob("hard", "G"), 1.0);
        assert_eq!(align(&fit.table, &words("HARD"), &words("G")), vec![(0, 0)]);
    }

    #[test]
    fn learns_pigeonhole_translations() {
        let pairs = [
            pair("the house", "das haus"),
            pair("the book", "das buch"),
            pair("a book", "ein buch"),
        ];
        let fit = train_ibm1(&pairs, 10).unwrap();
        assert_eq!(fit.table.best("house").unwrap().0, "haus");
        assert_eq!(fit.table.best("book").unwrap().0, "buch");
        assert_eq!(fit.table.best("the").unwrap().0, "das");
        assert_rows_sum_to_one(&fit.table);
        let links = align(&fit.table, &words("the book"), &words("das buch"));
        assert_eq!(links, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn equal_probabilities_link_to_first() {
        let tbl = TranslationTable {
            probs: BTreeMap::from([
                ("a".into(), BTreeMap::from([("x".into(), 0.5), ("y".into(), 0.5)])),
                ("b".into(), BTreeMap::from([("x".into(), 0.5), ("y".into(), 0.5)])),
                (NULL_WORD.into(), BTreeMap::from([("x".into(), 0.5), ("y".into(), 0.5)])),
            ]),
        };
        assert_eq!(align(&tbl, &words("a b"), &words("x y")), vec![(0, 0), (0, 1)]);
    }

    #[test]
    fn null_and_unknown_tokens_stay_unlinked() {
        let tbl = TranslationTable {
            probs: BTreeMap::from([
                ("a".into(), BTreeMap::from([("x".into(), 0.9), ("p".into(), 0.1)])),
                (NULL_WORD.into(), BTreeMap::from([("p".into(), 0.8), ("x".into(), 0.2)])),
            ]),
        };
        assert_eq!(align(&tbl, &words("a"), &words("p x q")), vec![(0, 1)]);
    }

    fn glossed(id: &str, l2: &str, target: usize, l1: &str) -> Sentence {
        let tokens = l2.split_whitespace().map(|w| Token::new(w).unwrap()).collect();
        Sentence::new(id, tokens, SourceTag::Parallel)
            .unwrap()
            .with_target(target)
            .unwrap()
            .with_l1(words(l1))
    }

    fn gloss_table() -> TranslationTable {
        TranslationTable {
            probs: BTreeMap::from([
                ("it".into(), BTreeMap::from([("T".into(), 1.0)])),
                ("is".into(), BTreeMap::from([("S".into(), 1.0)])),
                ("hard".into(), BTreeMap::from([("G".into(), 0.6), ("H".into(), 0.4)])),
                (NULL_WORD.into(), BTreeMap::from([("Z".into(), 1.0)])),
            ]),
        }
    }

    #[test]
    fn gloss_of_target() {
        let tbl = gloss_table();
        let s = glossed("s", "it is hard", 2, "T S G");
        assert_eq!(extract_gloss(&tbl, &s).unwrap().as_deref(), Some("G"));
        let none = glossed("s", "it is hard", 2, "T S Z");
        assert_eq!(extract_gloss(&tbl, &none).unwrap(), None);
        let two = glossed("s", "it is hard", 2, "T S G Z H");
        assert_eq!(extract_gloss(&tbl, &two).unwrap().as_deref(), Some("G H"));
        let bare = Sentence::new("b", vec![Token::new("hard").unwrap()], SourceTag::Corpus)
            .unwrap()
            .with_target(0)
            .unwrap();
        assert!(matches!(extract_gloss(&tbl, &bare), Err(Error::MissingL1(_))));
    }

    fn toy_set() -> ConfusionSet {
        ConfusionSet::new(
            None,
            vec![WordEntry::new("hard", ["hard"]), WordEntry::new("it", ["it"])],
        )
        .unwrap()
    }

    #[test]
    fn grouping_partitions_and_intersects() {
        let tbl = gloss_table();
        let mut bare = glossed("h4", "hard", 0, "G");
        bare.l1_text = None;
        let pools = SentencePools::from([
            (
                "hard".into(),
                vec![
                    glossed("h1", "it is hard", 2, "G"),
                    glossed("h2", "hard", 0, "H T"),
                    glossed("h3", "hard", 0, "Z"),
                    bare,
                ],
            ),
            ("it".into(), vec![glossed("i1", "it", 0, "T")]),
        ]);
        let g = group_and_intersect(&toy_set(), &pools, &tbl);
        assert_eq!(g.skipped, 1);
        assert_eq!(g.unaligned, 1);
        assert_eq!(g.per_word["hard"]["G"], vec!["h1"]);
        // "H T" from "hard": T is unknown to "hard" and has no null mass
        assert_eq!(g.per_word["hard"]["H"], vec!["h2"]);
        assert!(g.common.is_empty());
        let r = restrict_pool(&pools, &g);
        assert!(r.fallback);
        assert_eq!(r.pools, pools);
    }

    proptest! {
        #[test]
        fn em_is_monotone_and_normalized(
            raw in proptest::collection::vec(
                (proptest::collection::vec(0u8..6, 1..6), proptest::collection::vec(0u8..6, 1..6)),
                1..25,
            ),
            iterations in 0usize..8,
        ) {
            let pairs: Vec<ParallelPair> = raw
                .iter()
                .map(|(e, f)| ParallelPair {
                    l2: e.iter().map(|v| format!("e{v}")).collect(),
                    l1: f.iter().map(|v| format!("f{v}")).collect(),
                })
                .collect();
            let fit = train_ibm1(&pairs, iterations).unwrap();
            prop_assert!(fit.log_likelihood.len() == iterations + 1);
            for w in fit.log_likelihood.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-9, "{:?}", fit.log_likelihood);
            }
            for row in fit.table.probs.values() {
                let total: f64 = row.values().sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn file_prunes_and_round_trips() {
        let mut tbl = gloss_table();
        tbl.probs.get_mut("hard").unwrap().insert("tiny".into(), 1e-7);
        let json = serde_json::to_string(&AlignFile::new(&tbl)).unwrap();
        let back: AlignFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.into_table().unwrap(), gloss_table());
        let mut stale = AlignFile::new(&tbl);
        stale.version = 9;
        assert!(stale.into_table().is_err());
    }

    #[test]
    fn parallel_file_and_sentences() {
        let text = "{\"l2\":[\"It\",\"is\",\"hard\"],\"l1\":[\"T\",\"G\"]}\n\n{\"l2\":[\"x\"],\"l1\":[\"y\"]}\n";
        let pairs = read_parallel(text.as_bytes()).unwrap();
        assert_eq!(pairs.len(), 2);
        let sentences = parallel_sentences(&pairs, "p").unwrap();
        assert_eq!(sentences[1].id, "p0000001");
        assert_eq!(sentences[0].l1_text.as_deref(), Some(&words("T G")[..]));
        assert_eq!(sentence_pair(&sentences[0]).unwrap().l2, words("it is hard"));
        assert!(matches!(
            read_parallel("{".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
