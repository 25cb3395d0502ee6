//! Synthetic data generators and independent oracles for tests.
//!
//! Every generator is seeded. Oracles recompute results from first
//! principles without calling the code under test beyond raw model outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clarify_core::alignment::ParallelPair;
use clarify_core::bilstm::{BiLstmHyper, BiLstmModel, LabeledContext};
use clarify_core::corpus::{ConfusionSet, EmbeddingTable, Sentence, SentencePools, SourceTag, Token, WordEntry};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard-normal vectors for every word.
pub fn random_table<S: AsRef<str>>(words: &[S], dim: usize, rng: &mut ChaCha8Rng) -> EmbeddingTable {
    let mut table = EmbeddingTable::new(dim).unwrap();
    let normal = Normal::new(0.0, 1.0).unwrap();
    for w in words {
        let v = (0..dim).map(|_| normal.sample(rng)).collect();
        table.insert(w.as_ref(), v).unwrap();
    }
    table
}

pub fn tokens(text: &str) -> Vec<Token> {
    text.split_whitespace().map(|w| Token::new(w).unwrap()).collect()
}

// ---------------------------------------------------------------- GMM

pub struct MixtureSample {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub sigmas: Vec<Vec<f64>>,
    pub samples: Vec<Vec<f64>>,
}

/// Draws from a diagonal mixture whose means sit at least `separation`
/// times the largest standard deviation apart.
pub fn mixture(components: usize, dim: usize, n: usize, separation: f64, seed: u64) -> MixtureSample {
    let mut rng = rng(seed);
    let sigmas: Vec<Vec<f64>> = (0..components)
        .map(|_| (0..dim).map(|_| rng.random_range(0.3..0.6)).collect())
        .collect();
    let sigma_max = sigmas.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    let means = loop {
        let cand: Vec<Vec<f64>> = (0..components)
            .map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let ok = (0..components)
            .all(|a| (a + 1..components).all(|b| euclidean(&cand[a], &cand[b]) >= separation * sigma_max));
        if ok {
            break cand;
        }
    };
    let raw: Vec<f64> = (0..components).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let samples = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut c = components - 1;
            for (i, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    c = i;
                    break;
                }
            }
            (0..dim)
                .map(|d| means[c][d] + sigmas[c][d] * normal.sample(&mut rng))
                .collect()
        })
        .collect();
    MixtureSample {
        weights,
        means,
        sigmas,
        samples,
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for at in 0..=p.len() {
            let mut q = p.clone();
            q.insert(at, n - 1);
            out.push(q);
        }
    }
    out
}

/// Worst per-component distance under the matching that minimizes it.
pub fn matched_mean_error(truth: &[Vec<f64>], fitted: &[Vec<f64>]) -> f64 {
    assert_eq!(truth.len(), fitted.len());
    permutations(truth.len())
        .iter()
        .map(|perm| {
            perm.iter()
                .enumerate()
                .map(|(i, &j)| euclidean(&truth[i], &fitted[j]))
                .fold(0.0, f64::max)
        })
        .fold(f64::INFINITY, f64::min)
}

// ------------------------------------------------------------- BiLSTM

pub struct MarkerTask {
    pub table: EmbeddingTable,
    pub train: Vec<LabeledContext>,
    pub held_out: Vec<LabeledContext>,
}

pub const MARKER_POSITIVE: &str = "mark_a";
pub const MARKER_NEGATIVE: &str = "mark_b";

fn marker_sample(id: usize, fillers: &[String], rng: &mut ChaCha8Rng) -> LabeledContext {
    let label = u8::from(rng.random_bool(0.5));
    let mut left: Vec<String> = (0..rng.random_range(2..8))
        .map(|_| fillers.choose(rng).unwrap().clone())
        .collect();
    left.push(if label == 1 { MARKER_POSITIVE } else { MARKER_NEGATIVE }.to_owned());
    let right: Vec<String> = (0..rng.random_range(1..6))
        .map(|_| fillers.choose(rng).unwrap().clone())
        .collect();
    LabeledContext {
        source_id: format!("m{id:04}"),
        left: tokens(&left.join(" ")),
        right: tokens(&right.join(" ")),
        label,
    }
}

/// Balanced contexts whose left side ends in a class marker, amid random
/// filler words.
pub fn marker_task(train: usize, held_out: usize, dim: usize, seed: u64) -> MarkerTask {
    let mut rng = rng(seed);
    let fillers: Vec<String> = (0..30).map(|i| format!("filler{i}")).collect();
    let mut vocab = fillers.clone();
    vocab.push(MARKER_POSITIVE.into());
    vocab.push(MARKER_NEGATIVE.into());
    let table = random_table(&vocab, dim, &mut rng);
    let train = (0..train).map(|i| marker_sample(i, &fillers, &mut rng)).collect();
    let held_out = (0..held_out)
        .map(|i| marker_sample(100_000 + i, &fillers, &mut rng))
        .collect();
    MarkerTask { table, train, held_out }
}

pub struct GradientCase {
    pub model: BiLstmModel,
    pub sample: LabeledContext,
    pub table: EmbeddingTable,
}

/// Small random networks and contexts. Some context tokens are out of
/// vocabulary and some contexts exceed `max_context`.
pub fn gradient_case(seed: u64) -> GradientCase {
    let mut rng = rng(1_000 + seed);
    let dim = rng.random_range(2..6);
    let hyper = BiLstmHyper {
        hidden_dim: rng.random_range(2..5),
        d1: rng.random_range(2..4),
        seed,
        pos_weight: rng.random_range(1.0..10.0),
        max_context: rng.random_range(2..5),
        ..BiLstmHyper::default()
    };
    let mut model = BiLstmModel::init(dim, &hyper).unwrap();
    // spread weights so no unit sits in a flat regime
    let normal = Normal::new(0.0, 0.5).unwrap();
    for t in model.params.blocks_mut() {
        t.data.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
    }
    let known: Vec<String> = (0..6).map(|i| format!("w{i}")).collect();
    let table = random_table(&known, dim, &mut rng);
    let pick = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Token> {
        (0..n)
            .map(|_| {
                if rng.random_bool(0.25) {
                    Token::new("unk").unwrap()
                } else {
                    Token::new(known.choose(rng).unwrap().as_str()).unwrap()
                }
            })
            .collect()
    };
    let left = pick(rng.random_range(0..7), &mut rng);
    let right = pick(rng.random_range(0..7), &mut rng);
    let sample = LabeledContext {
        source_id: format!("g{seed}"),
        left,
        right,
        label: u8::from(rng.random_bool(0.5)),
    };
    GradientCase { model, sample, table }
}

// ---------------------------------------------------------- Alignment

pub struct DictionaryCorpus {
    pub dictionary: BTreeMap<String, String>,
    pub pairs: Vec<ParallelPair>,
}

/// Pairs whose L1 side translates the L2 side word by word through a
/// one-to-one dictionary, then shuffles the L1 word order.
pub fn dictionary_corpus(entries: usize, pairs: usize, seed: u64) -> DictionaryCorpus {
    let mut rng = rng(seed);
    let dictionary: BTreeMap<String, String> = (0..entries).map(|i| (format!("e{i:02}"), format!("F{i:02}"))).collect();
    let sources: Vec<&String> = dictionary.keys().collect();
    let pairs = (0..pairs)
        .map(|_| {
            let l2: Vec<String> = (0..rng.random_range(3..9))
                .map(|_| (*sources.choose(&mut rng).unwrap()).clone())
                .collect();
            let mut l1: Vec<String> = l2.iter().map(|e| dictionary[e].clone()).collect();
            l1.shuffle(&mut rng);
            ParallelPair { l2, l1 }
        })
        .collect();
    DictionaryCorpus { dictionary, pairs }
}

pub struct GlossCorpus {
    pub set: ConfusionSet,
    pub pairs: Vec<ParallelPair>,
    /// Planted gloss of every pair that contains a set word, keyed by line id.
    pub planted: BTreeMap<String, String>,
}

/// L1 function particles with no L2 source, as in real translations.
pub const L1_PARTICLES: [&str; 4] = ["de", "le", "ma", "ne"];

fn add_particles(l1: &mut Vec<String>, rng: &mut ChaCha8Rng) {
    for _ in 0..rng.random_range(1..3) {
        let at = rng.random_range(0..=l1.len());
        l1.insert(at, L1_PARTICLES.choose(rng).unwrap().to_string());
    }
}

/// Parallel corpus for the set {alpha, beta}: alpha sentences translate
/// the target as one of `alpha_glosses`, beta sentences as one of
/// `beta_glosses`. Filler words have fixed one-to-one translations and every
/// L1 side carries unaligned particles.
pub fn gloss_corpus(alpha_glosses: &[&str], beta_glosses: &[&str], seed: u64) -> GlossCorpus {
    let mut rng = rng(seed);
    let fillers: Vec<String> = (0..20).map(|i| format!("w{i:02}")).collect();
    let translate = |w: &str| w.to_uppercase();
    let mut pairs = Vec::new();
    let mut planted = BTreeMap::new();
    // filler-only pairs pin down the filler translations
    for _ in 0..200 {
        let l2: Vec<String> = (0..rng.random_range(3..7))
            .map(|_| fillers.choose(&mut rng).unwrap().clone())
            .collect();
        let mut l1 = l2.iter().map(|w| translate(w)).collect();
        add_particles(&mut l1, &mut rng);
        pairs.push(ParallelPair { l2, l1 });
    }
    for (word, glosses) in [("alpha", alpha_glosses), ("beta", beta_glosses)] {
        for i in 0..60 {
            let gloss = glosses[i % glosses.len()];
            let mut l2: Vec<String> = (0..rng.random_range(2..6))
                .map(|_| fillers.choose(&mut rng).unwrap().clone())
                .collect();
            let at = rng.random_range(0..=l2.len());
            l2.insert(at, word.to_owned());
            let mut l1: Vec<String> = l2
                .iter()
                .map(|w| if w == word { gloss.to_owned() } else { translate(w) })
                .collect();
            add_particles(&mut l1, &mut rng);
            l1.shuffle(&mut rng);
            planted.insert(format!("p{:07}", pairs.len()), gloss.to_owned());
            pairs.push(ParallelPair { l2, l1 });
        }
    }
    let set = ConfusionSet::new(
        None,
        vec![WordEntry::new("alpha", ["alpha"]), WordEntry::new("beta", ["beta"])],
    )
    .unwrap();
    GlossCorpus { set, pairs, planted }
}

// ---------------------------------------------------------- Selection

/// Confusion set of `n` words `word0..`, each a lemma with one form.
pub fn synthetic_set(n: usize, tag: &str) -> ConfusionSet {
    let words = (0..n)
        .map(|i| {
            let lemma = format!("{tag}word{i}");
            WordEntry::new(&lemma, [lemma.clone()])
        })
        .collect();
    ConfusionSet::new(None, words).unwrap()
}

/// Pools of random sentences around each set word. Context words are drawn
/// from a per-word preferred slice of the vocabulary with probability 0.7.
pub fn synthetic_pools(set: &ConfusionSet, vocab: &[String], per_word: usize, rng: &mut ChaCha8Rng) -> SentencePools {
    let n = set.words.len();
    set.lemmas()
        .enumerate()
        .map(|(w, lemma)| {
            let slice: Vec<&String> = vocab.iter().skip(w).step_by(n).collect();
            let pool = (0..per_word)
                .map(|i| {
                    let len = rng.random_range(2..9);
                    let mut words: Vec<&str> = (0..len)
                        .map(|_| {
                            if rng.random_bool(0.7) {
                                slice.choose(rng).unwrap().as_str()
                            } else {
                                vocab.choose(rng).unwrap().as_str()
                            }
                        })
                        .collect();
                    let at = rng.random_range(0..=words.len());
                    words.insert(at, lemma);
                    let s =
                        Sentence::new(format!("{lemma}-{i:04}"), tokens(&words.join(" ")), SourceTag::Corpus).unwrap();
                    s.with_target(at).unwrap()
                })
                .collect();
            (lemma.to_owned(), pool)
        })
        .collect()
}

/// Ranked `(id, score)` per lemma, recomputed from raw fitness values.
///
/// `keep` decides which pool sentences are candidates; `raw(word, s)` is
/// the unnormalized fitness of candidate `s` under `word`'s model.
pub fn brute_force_selection(
    set: &ConfusionSet,
    pools: &SentencePools,
    k: usize,
    keep: impl Fn(&Sentence) -> bool,
    raw: impl Fn(&str, &Sentence) -> f64,
) -> Vec<(String, Vec<(String, f64)>)> {
    let lemmas: Vec<&str> = set.words.iter().map(|w| w.lemma.as_str()).collect();
    let empty = Vec::new();
    let candidates: Vec<(usize, &Sentence)> = lemmas
        .iter()
        .enumerate()
        .flat_map(|(i, l)| {
            pools
                .get(*l)
                .unwrap_or(&empty)
                .iter()
                .filter(|s| keep(s))
                .map(move |s| (i, s))
        })
        .collect();
    // table[c][w] = raw fitness of candidate c under word w
    let table: Vec<Vec<f64>> = candidates
        .iter()
        .map(|(_, s)| lemmas.iter().map(|w| raw(w, s)).collect())
        .collect();
    let mut norm = table.clone();
    for w in 0..lemmas.len() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for row in &table {
            lo = lo.min(row[w]);
            hi = hi.max(row[w]);
        }
        for (row, out) in table.iter().zip(norm.iter_mut()) {
            out[w] = if hi > lo { (row[w] - lo) / (hi - lo) } else { 0.5 };
        }
    }
    let mut out = Vec::new();
    for (i, lemma) in lemmas.iter().enumerate() {
        let mut scored: Vec<(String, f64)> = Vec::new();
        for ((owner, s), p) in candidates.iter().zip(&norm) {
            if *owner != i {
                continue;
            }
            let mut closeness = 0.0;
            for j in 0..lemmas.len() {
                if j != i {
                    closeness += p[i] - p[j];
                }
            }
            scored.push((s.id.clone(), p[i] * closeness));
        }
        // repeated arg-max selection, smallest id on ties
        let mut ranked = Vec::new();
        while ranked.len() < k && !scored.is_empty() {
            let mut best = 0;
            for c in 1..scored.len() {
                let (id, score) = &scored[c];
                let (bid, bscore) = &scored[best];
                if score > bscore || (score == bscore && id < bid) {
                    best = c;
                }
            }
            ranked.push(scored.swap_remove(best));
        }
        out.push(((*lemma).to_owned(), ranked));
    }
    out
}

// ---------------------------------------------------------- Pipeline

/// Paths of an on-disk data set for the full pipeline.
pub struct PipelineFiles {
    pub dir: PathBuf,
    pub embeddings: PathBuf,
    pub corpus: PathBuf,
    pub parallel: PathBuf,
    pub sets: PathBuf,
    pub filter_positives: PathBuf,
    pub dim: usize,
}

pub const PIPELINE_SETS: [[&str; 2]; 2] = [["refuse", "reject"], ["hard", "difficult"]];

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) {
    let mut f = fs::File::create(path).unwrap();
    for line in lines {
        writeln!(f, "{line}").unwrap();
    }
}

/// Writes embeddings, a raw corpus, a parallel corpus with planted glosses,
/// two confusion sets and dictionary-style positives under `dir`.
pub fn write_pipeline(dir: &Path, seed: u64) -> PipelineFiles {
    let mut rng = rng(seed);
    let dim = 8;
    fs::create_dir_all(dir).unwrap();
    let fillers: Vec<String> = (0..40u8)
        .map(|i| format!("f{}{}", (b'a' + i / 26) as char, (b'a' + i % 26) as char))
        .collect();
    let targets: Vec<&str> = PIPELINE_SETS.iter().flatten().copied().collect();
    let mut vocab: Vec<String> = fillers.clone();
    vocab.extend(targets.iter().map(|t| t.to_string()));
    vocab.extend(["the", "it", "is", "a", "."].map(String::from));
    let table = random_table(&vocab, dim, &mut rng);
    let embeddings = dir.join("embeddings.txt");
    table.write(fs::File::create(&embeddings).unwrap()).unwrap();

    let sentence = |rng: &mut ChaCha8Rng, word: Option<(usize, &str)>| -> Vec<String> {
        let mut words: Vec<String> = (0..rng.random_range(3..9))
            .map(|_| match word {
                Some((w, _)) if rng.random_bool(0.6) => fillers[(w * 5 + rng.random_range(0..5)) % 40].clone(),
                _ => fillers.choose(rng).unwrap().clone(),
            })
            .collect();
        if let Some((_, t)) = word {
            let at = rng.random_range(0..=words.len());
            words.insert(at, t.to_owned());
            // half the target sentences share the dictionary-style frame
            if rng.random_bool(0.5) {
                words.splice(0..0, ["it".to_owned(), "is".to_owned()]);
            }
        }
        words
    };

    let mut corpus = Vec::new();
    for _ in 0..600 {
        corpus.push(sentence(&mut rng, None).join(" ") + " .");
    }
    for (w, t) in targets.iter().enumerate() {
        for _ in 0..40 {
            corpus.push(sentence(&mut rng, Some((w, t))).join(" ") + " .");
        }
    }
    corpus.shuffle(&mut rng);
    let corpus_path = dir.join("corpus.txt");
    write_lines(&corpus_path, corpus);

    let mut parallel = Vec::new();
    for _ in 0..200 {
        let l2 = sentence(&mut rng, None);
        let mut l1 = l2.iter().map(|w| w.to_uppercase()).collect();
        add_particles(&mut l1, &mut rng);
        parallel.push(ParallelPair { l2, l1 });
    }
    for (w, t) in targets.iter().enumerate() {
        for i in 0..30 {
            let l2 = sentence(&mut rng, Some((w, t)));
            // the first set shares gloss "G_REF"; the second has disjoint glosses
            let gloss = match (w, i % 2) {
                (0 | 1, 0) => "G_REF".to_owned(),
                _ => format!("G_{}", t.to_uppercase()),
            };
            let mut l1: Vec<String> = l2
                .iter()
                .map(|x| if x == t { gloss.clone() } else { x.to_uppercase() })
                .collect();
            add_particles(&mut l1, &mut rng);
            l1.shuffle(&mut rng);
            parallel.push(ParallelPair { l2, l1 });
        }
    }
    let parallel_path = dir.join("parallel.jsonl");
    write_lines(
        &parallel_path,
        parallel.iter().map(|p| serde_json::to_string(p).unwrap()),
    );

    let sets = dir.join("sets.json");
    let entries: Vec<serde_json::Value> = PIPELINE_SETS
        .iter()
        .map(|pair| serde_json::json!({ "words": pair.map(|w| serde_json::json!({ "lemma": w })) }))
        .collect();
    fs::write(&sets, serde_json::to_string_pretty(&entries).unwrap()).unwrap();

    let filter_positives = dir.join("positives.txt");
    write_lines(
        &filter_positives,
        (0..60).map(|_| {
            let mut words = vec![
                "it".to_owned(),
                "is".to_owned(),
                targets.choose(&mut rng).unwrap().to_string(),
            ];
            words.extend((0..rng.random_range(2..8)).map(|_| fillers.choose(&mut rng).unwrap().clone()));
            words.join(" ") + " ."
        }),
    );

    PipelineFiles {
        dir: dir.to_owned(),
        embeddings,
        corpus: corpus_path,
        parallel: parallel_path,
        sets,
        filter_positives,
        dim,
    }
}

/// Paths of every file under `dir`, relative to it, sorted.
pub fn tree_files(dir: &Path) -> BTreeSet<PathBuf> {
    let mut out = BTreeSet::new();
    let mut stack = vec![dir.to_owned()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_owned());
            }
        }
    }
    out
}
