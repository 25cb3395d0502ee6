//! Loaded data plus trained-model access for training commands and serving.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::{Arc, Mutex};

use clarify_core::alignment::{
    group_and_intersect, parallel_sentences, read_parallel, restrict_pool, train_ibm1, AlignFile, ParallelPair,
    TranslationTable,
};
use clarify_core::bilstm::{build_training_set, train_bilstm, BiLstmFile, BiLstmModel};
use clarify_core::corpus::{
    build_pool, build_pools, load_confusion_sets, load_embeddings, read_corpus, ConfusionSet, EmbeddingTable, Sentence,
    SentencePools, SourceTag, WordEntry,
};
use clarify_core::dict_filter::{syntactic_features, train_logreg, DictClassifier, FilterFile};
use clarify_core::gmm::{train_gmm_usage, GmmFile, GmmModel};
use clarify_core::selection::{baseline_examples, select_examples, ModelKind, SuggestionResult, UsageModel};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::config::{EngineConfig, L1Mode};
use crate::error::{Error, Result};
use crate::events::READMORE_CAP;
use crate::store::ModelStore;

const CORPUS_PREFIX: &str = "c";
const PARALLEL_PREFIX: &str = "p";

/// A suggestion request as accepted by the CLI and `POST /suggest`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuggestRequest {
    pub set: String,
    #[serde(default = "default_model")]
    pub model: ModelKind,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub l1_grouped: Option<bool>,
}

fn default_model() -> ModelKind {
    ModelKind::Bilstm
}

#[derive(Default)]
struct Cache {
    gmm: BTreeMap<String, Arc<GmmModel>>,
    bilstm: BTreeMap<String, Arc<BiLstmModel>>,
    filter: Option<Arc<DictClassifier>>,
    align: Option<Arc<TranslationTable>>,
    pages: BTreeMap<(String, ModelKind, bool), Arc<SuggestionResult>>,
}

pub struct Engine {
    config: EngineConfig,
    digest: String,
    store: ModelStore,
    table: EmbeddingTable,
    corpus: Vec<Sentence>,
    parallel: Option<(Vec<ParallelPair>, Vec<Sentence>)>,
    sets: BTreeMap<String, ConfusionSet>,
    words: BTreeMap<String, WordEntry>,
    cache: Mutex<Cache>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(Error::io(path))
}

fn word_error(lemma: &str) -> impl FnOnce(clarify_core::Error) -> Error + '_ {
    move |source| Error::Word {
        lemma: lemma.to_owned(),
        source,
    }
}

impl Engine {
    pub fn load(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let digest = config.digest();
        let p = &config.paths;
        let table = load_embeddings(open(&p.embeddings)?, config.embedding_dim)?;
        let corpus = read_corpus(open(&p.corpus)?, CORPUS_PREFIX, SourceTag::Corpus)?;
        let parallel = match &p.parallel {
            Some(path) => {
                let pairs = read_parallel(open(path)?)?;
                let sentences = parallel_sentences(&pairs, PARALLEL_PREFIX)?;
                Some((pairs, sentences))
            }
            None => None,
        };
        let mut sets = BTreeMap::new();
        let mut words: BTreeMap<String, WordEntry> = BTreeMap::new();
        for set in load_confusion_sets(open(&p.confusion_sets)?)? {
            for w in &set.words {
                if let Some(prev) = words.insert(w.lemma.clone(), w.clone()) {
                    if prev != *w {
                        return Err(Error::Config(format!(
                            "lemma {:?} is listed with different forms in two sets",
                            w.lemma
                        )));
                    }
                }
            }
            sets.insert(set.id.clone(), set);
        }
        info!(
            digest = %digest,
            corpus = corpus.len(),
            sets = sets.len(),
            vocabulary = table.len(),
            "engine loaded"
        );
        Ok(Self {
            store: ModelStore::new(&p.model_store, &digest),
            config,
            digest,
            table,
            corpus,
            parallel,
            sets,
            words,
            cache: Mutex::new(Cache::default()),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn store(&self) -> &ModelStore {
        &self.store
    }

    pub fn sets(&self) -> impl Iterator<Item = &ConfusionSet> {
        self.sets.values()
    }

    pub fn set(&self, id: &str) -> Result<&ConfusionSet> {
        self.sets.get(id).ok_or_else(|| Error::UnknownSet(id.to_owned()))
    }

    fn pool(&self, word: &WordEntry) -> Vec<Sentence> {
        build_pool(&self.corpus, word, self.config.pool_cap)
    }

    /// One usage model per distinct lemma; words train in parallel.
    pub fn train_gmm(&self) -> Result<()> {
        let cfg = self.config.gmm_config();
        let models = self
            .words
            .par_iter()
            .map(|(lemma, word)| {
                let model = train_gmm_usage(&self.pool(word), &self.table, &cfg).map_err(word_error(lemma))?;
                Ok((lemma, model))
            })
            .collect::<Result<Vec<_>>>()?;
        for (lemma, model) in models {
            info!(word = %lemma, iterations = model.train_meta.iterations, "gmm trained");
            self.store
                .save(&self.store.gmm_path(lemma), &GmmFile::new(lemma, &model))?;
        }
        Ok(())
    }

    pub fn train_bilstm(&self) -> Result<()> {
        let hyper = self.config.bilstm_hyper();
        let models = self
            .words
            .par_iter()
            .map(|(lemma, word)| {
                let model = build_training_set(
                    &self.pool(word),
                    &self.corpus,
                    word,
                    self.config.neg_ratio,
                    self.config.seed,
                )
                .and_then(|data| train_bilstm(&data, &self.table, &hyper))
                .map_err(word_error(lemma))?;
                Ok((lemma, model))
            })
            .collect::<Result<Vec<_>>>()?;
        for (lemma, model) in models {
            info!(word = %lemma, final_loss = ?model.train_meta.final_loss, "bilstm trained");
            self.store
                .save(&self.store.bilstm_path(lemma), &BiLstmFile::new(lemma, &model))?;
        }
        Ok(())
    }

    /// Positives from the configured file; an equal number of negatives
    /// drawn from the raw corpus.
    pub fn train_filter(&self) -> Result<()> {
        let path = self
            .config
            .paths
            .filter_positives
            .as_ref()
            .ok_or_else(|| Error::Config("paths.filter_positives is required for train-filter".into()))?;
        let positives = read_corpus(open(path)?, "d", SourceTag::Dictionary)?;
        let count = positives.len().min(self.corpus.len());
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut picks = index::sample(&mut rng, self.corpus.len(), count).into_vec();
        picks.sort_unstable();
        let pos: Vec<_> = positives.iter().map(|s| syntactic_features(s, &self.table)).collect();
        let neg: Vec<_> = picks
            .iter()
            .map(|&i| syntactic_features(&self.corpus[i], &self.table))
            .collect();
        let fit = train_logreg(&pos, &neg, &self.config.filter_hyper())?;
        info!(
            positives = pos.len(),
            negatives = neg.len(),
            final_loss = fit.loss_history.last().copied(),
            "filter trained"
        );
        self.store
            .save(&self.store.filter_path(), &FilterFile::new(&fit.classifier))
    }

    pub fn train_align(&self) -> Result<()> {
        let (pairs, _) = self
            .parallel
            .as_ref()
            .ok_or_else(|| Error::Config("paths.parallel is required for train-align".into()))?;
        let fit = train_ibm1(pairs, self.config.ibm1_iterations)?;
        info!(
            pairs = pairs.len(),
            log_likelihood = fit.log_likelihood.last().copied(),
            "alignment trained"
        );
        self.store.save(&self.store.align_path(), &AlignFile::new(&fit.table))
    }

    fn cached<T>(
        &self,
        pick: impl Fn(&mut Cache) -> &mut BTreeMap<String, Arc<T>>,
        lemma: &str,
        what: &str,
        path: &Path,
        load: impl FnOnce(&Path) -> Result<Option<T>>,
    ) -> Result<Arc<T>> {
        if let Some(m) = pick(&mut self.cache.lock().unwrap()).get(lemma) {
            return Ok(m.clone());
        }
        let model = Arc::new(load(path)?.ok_or_else(|| Error::NotTrained(format!("{what} for {lemma:?}")))?);
        pick(&mut self.cache.lock().unwrap()).insert(lemma.to_owned(), model.clone());
        Ok(model)
    }

    fn gmm_models(&self, set: &ConfusionSet) -> Result<BTreeMap<String, Arc<GmmModel>>> {
        set.lemmas()
            .map(|lemma| {
                let m = self.cached(
                    |c| &mut c.gmm,
                    lemma,
                    "gmm model",
                    &self.store.gmm_path(lemma),
                    |p| {
                        self.store
                            .load::<GmmFile>(p)?
                            .map(|f| f.into_model().map_err(Error::from))
                            .transpose()
                    },
                )?;
                Ok((lemma.to_owned(), m))
            })
            .collect()
    }

    fn bilstm_models(&self, set: &ConfusionSet) -> Result<BTreeMap<String, Arc<BiLstmModel>>> {
        set.lemmas()
            .map(|lemma| {
                let m = self.cached(
                    |c| &mut c.bilstm,
                    lemma,
                    "bilstm model",
                    &self.store.bilstm_path(lemma),
                    |p| {
                        self.store
                            .load::<BiLstmFile>(p)?
                            .map(|f| f.into_model().map_err(Error::from))
                            .transpose()
                    },
                )?;
                Ok((lemma.to_owned(), m))
            })
            .collect()
    }

    fn filter(&self) -> Result<Arc<DictClassifier>> {
        if let Some(f) = &self.cache.lock().unwrap().filter {
            return Ok(f.clone());
        }
        let file: FilterFile = self
            .store
            .load(&self.store.filter_path())?
            .ok_or_else(|| Error::NotTrained("dictionary filter".into()))?;
        let clf = Arc::new(file.into_classifier()?);
        self.cache.lock().unwrap().filter = Some(clf.clone());
        Ok(clf)
    }

    fn alignment(&self) -> Result<Arc<TranslationTable>> {
        if let Some(t) = &self.cache.lock().unwrap().align {
            return Ok(t.clone());
        }
        let file: AlignFile = self
            .store
            .load(&self.store.align_path())?
            .ok_or_else(|| Error::NotTrained("alignment table".into()))?;
        let table = Arc::new(file.into_table()?);
        self.cache.lock().unwrap().align = Some(table.clone());
        Ok(table)
    }

    /// Candidate pools; in L1-grouped mode they come from the parallel
    /// corpus and are restricted to glosses shared by the whole set.
    fn candidate_pools(&self, set: &ConfusionSet, l1_grouped: bool) -> Result<(SentencePools, bool)> {
        if !l1_grouped {
            return Ok((build_pools(&self.corpus, set, self.config.pool_cap), false));
        }
        let (_, sentences) = self
            .parallel
            .as_ref()
            .ok_or_else(|| Error::NotTrained("no parallel corpus configured for l1-grouped mode".into()))?;
        let pools = build_pools(sentences, set, self.config.pool_cap);
        let grouping = group_and_intersect(set, &pools, &*self.alignment()?);
        let restricted = restrict_pool(&pools, &grouping);
        Ok((restricted.pools, !restricted.fallback))
    }

    fn run_selection<M: UsageModel>(
        &self,
        set: &ConfusionSet,
        pools: &SentencePools,
        k: usize,
        models: &BTreeMap<String, M>,
    ) -> Result<SuggestionResult> {
        Ok(select_examples(set, pools, k, &*self.filter()?, models, &self.table)?)
    }

    pub fn suggest(&self, req: &SuggestRequest) -> Result<SuggestionResult> {
        let set = self.set(&req.set)?;
        let k = req.k.unwrap_or(self.config.k);
        if k == 0 {
            return Err(Error::BadRequest("k must be at least 1".into()));
        }
        let l1_grouped = req.l1_grouped.unwrap_or(self.config.l1_mode == L1Mode::L1Grouped);
        let (pools, restricted) = self.candidate_pools(set, l1_grouped)?;
        let mut result = match req.model {
            ModelKind::Baseline => baseline_examples(set, &pools, k)?,
            ModelKind::Gmm => self.run_selection(set, &pools, k, &self.gmm_models(set)?)?,
            ModelKind::Bilstm => self.run_selection(set, &pools, k, &self.bilstm_models(set)?)?,
        };
        result.l1_restricted = restricted;
        result.config_digest = self.digest.clone();
        Ok(result)
    }

    /// Ranked list of [`READMORE_CAP`] examples backing readmore paging,
    /// computed once per `(set, model, mode)`.
    pub fn page_source(&self, set: &str, model: ModelKind, l1_grouped: Option<bool>) -> Result<Arc<SuggestionResult>> {
        let l1 = l1_grouped.unwrap_or(self.config.l1_mode == L1Mode::L1Grouped);
        let key = (set.to_owned(), model, l1);
        if let Some(r) = self.cache.lock().unwrap().pages.get(&key) {
            return Ok(r.clone());
        }
        let result = Arc::new(self.suggest(&SuggestRequest {
            set: set.to_owned(),
            model,
            k: Some(READMORE_CAP),
            l1_grouped: Some(l1),
        })?);
        self.cache.lock().unwrap().pages.insert(key, result.clone());
        Ok(result)
    }
}
