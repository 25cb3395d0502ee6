//! Gaussian-mixture word-usage model over local context embeddings.
//!
//! Each pool sentence contributes up to six context vectors (the two tokens
//! on either side of the target plus the pairwise sums); every vector is one
//! training sample of a diagonal-covariance mixture in embedding space. A
//! sentence's fitness is the mean per-vector log-density.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EmbeddingTable, Sentence};
use crate::error::{Error, Result};

pub const DEFAULT_COMPONENTS: usize = 5;
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-6;
/// Fitness of a sentence without a single constructible context vector.
pub const FEATURELESS_SCORE: f64 = -1e9;
pub const GMM_FILE_VERSION: u32 = 1;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Position of a context vector relative to the target, in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ContextSlot {
    Left2,
    Left1,
    LeftPair,
    Right1,
    Right2,
    RightPair,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextFeature {
    pub slot: ContextSlot,
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContextFeatures {
    pub features: Vec<ContextFeature>,
}

impl ContextFeatures {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn slots(&self) -> Vec<ContextSlot> {
        self.features.iter().map(|f| f.slot).collect()
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[f64]> {
        self.features.iter().map(|f| f.vector.as_slice())
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Context vectors around the target token. A slot is present only when its
/// token lies inside the sentence and is in the embedding table; a pair slot
/// needs both of its tokens. The target token itself never contributes.
pub fn context_features(sentence: &Sentence, table: &EmbeddingTable) -> Result<ContextFeatures> {
    let t = sentence.target()?;
    let at = |offset: isize| -> Option<&[f64]> {
        let i = t as isize + offset;
        if i < 0 {
            return None;
        }
        sentence.tokens.get(i as usize).and_then(|tok| table.embed(tok))
    };
    let (l2, l1, r1, r2) = (at(-2), at(-1), at(1), at(2));

    let mut features = Vec::with_capacity(6);
    let mut push = |slot, vector: Option<Vec<f64>>| {
        if let Some(vector) = vector {
            features.push(ContextFeature { slot, vector });
        }
    };
    push(ContextSlot::Left2, l2.map(<[f64]>::to_vec));
    push(ContextSlot::Left1, l1.map(<[f64]>::to_vec));
    push(ContextSlot::LeftPair, l2.zip(l1).map(|(a, b)| add(a, b)));
    push(ContextSlot::Right1, r1.map(<[f64]>::to_vec));
    push(ContextSlot::Right2, r2.map(<[f64]>::to_vec));
    push(ContextSlot::RightPair, r1.zip(r2).map(|(a, b)| add(a, b)));
    Ok(ContextFeatures { features })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub components: usize,
    pub max_iter: usize,
    /// Stop once the mean per-sample log-likelihood improves by less than this.
    pub tol: f64,
    pub variance_floor: f64,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            components: DEFAULT_COMPONENTS,
            max_iter: 100,
            tol: 1e-6,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmTrainMeta {
    pub seed: u64,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Mean per-sample log-likelihood at the initial parameters and after
    /// every M-step.
    pub history: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub variance_floor: f64,
    pub train_meta: GmmTrainMeta,
}

impl GmmModel {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    fn check_shapes(&self) -> Result<()> {
        let k = self.weights.len();
        let dim = self.dim();
        let bad = k == 0
            || self.means.len() != k
            || self.variances.len() != k
            || self.means.iter().chain(&self.variances).any(|v| v.len() != dim);
        if bad {
            return Err(Error::InvalidArgument("inconsistent mixture shapes".into()));
        }
        Ok(())
    }

    /// `ln w_k + ln N(x; mu_k, diag(var_k))` for every component.
    fn component_log_terms(&self, x: &[f64], out: &mut [f64]) {
        for (k, term) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for ((xi, mu), var) in x.iter().zip(&self.means[k]).zip(&self.variances[k]) {
                let d = xi - mu;
                acc += LN_2PI + var.ln() + d * d / var;
            }
            *term = self.weights[k].ln() - 0.5 * acc;
        }
    }

    /// Posterior component probabilities for `x`.
    pub fn responsibilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut terms = vec![0.0; self.components()];
        self.component_log_terms(x, &mut terms);
        let total = log_sum_exp(&terms);
        Ok(terms.iter().map(|t| (t - total).exp()).collect())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// `log sum_k w_k N(x; mu_k, diag(var_k))`, stabilised with log-sum-exp.
pub fn gmm_log_density(model: &GmmModel, x: &[f64]) -> Result<f64> {
    model.check_dim(x)?;
    let mut terms = vec![0.0; model.components()];
    model.component_log_terms(x, &mut terms);
    Ok(log_sum_exp(&terms))
}

/// Mean log-density of the sentence's context vectors, or `featureless`
/// when none can be built.
pub fn gmm_fitness(model: &GmmModel, sentence: &Sentence, table: &EmbeddingTable, featureless: f64) -> Result<f64> {
    let features = context_features(sentence, table)?;
    if features.is_empty() {
        return Ok(featureless);
    }
    let mut total = 0.0;
    for v in features.vectors() {
        total += gmm_log_density(model, v)?;
    }
    Ok(total / features.len() as f64)
}

/// Every context vector of every pool sentence, in pool order.
pub fn training_samples(pool: &[Sentence], table: &EmbeddingTable) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for sentence in pool {
        let features = context_features(sentence, table)?;
        out.extend(features.features.into_iter().map(|f| f.vector));
    }
    Ok(out)
}

pub fn train_gmm_usage(pool: &[Sentence], table: &EmbeddingTable, config: &GmmConfig) -> Result<GmmModel> {
    fit_gmm(&training_samples(pool, table)?, config)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// D²-weighted seeding; falls back to uniform picks once every sample
/// coincides with a chosen center.
fn kmeans_pp(samples: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = samples.len();
    let mut centers = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = samples.iter().map(|x| sq_dist(x, &samples[centers[0]])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, d) in nearest.iter().enumerate() {
                if *d > 0.0 {
                    chosen = Some(i);
                    if target < *d {
                        break;
                    }
                }
                target -= d;
            }
            chosen.unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        centers.push(pick);
        for (d, x) in nearest.iter_mut().zip(samples) {
            *d = d.min(sq_dist(x, &samples[pick]));
        }
    }
    centers
}

fn initial_model(samples: &[Vec<f64>], centers: &[usize], floor: f64, seed: u64) -> GmmModel {
    let k = centers.len();
    let dim = samples[0].len();
    let n = samples.len() as f64;

    let mut global_mean = vec![0.0; dim];
    for x in samples {
        for (m, v) in global_mean.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let mut global_var = vec![0.0; dim];
    for x in samples {
        for ((g, v), m) in global_var.iter_mut().zip(x).zip(&global_mean) {
            *g += (v - m) * (v - m) / n;
        }
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, x) in samples.iter().enumerate() {
        let best = (0..k)
            .min_by(|&a, &b| sq_dist(x, &samples[centers[a]]).total_cmp(&sq_dist(x, &samples[centers[b]])))
            .unwrap_or(0);
        members[best].push(i);
    }

    let mut means = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for (c, idx) in members.iter().enumerate() {
        if idx.is_empty() {
            means.push(samples[centers[c]].clone());
            variances.push(global_var.iter().map(|v| v.max(floor)).collect());
            continue;
        }
        let m = idx.len() as f64;
        let mut mean = vec![0.0; dim];
        for &i in idx {
            for (a, v) in mean.iter_mut().zip(&samples[i]) {
                *a += v / m;
            }
        }
        let var: Vec<f64> = if idx.len() < 2 {
            global_var.iter().map(|v| v.max(floor)).collect()
        } else {
            let mut var = vec![0.0; dim];
            for &i in idx {
                for ((a, v), mu) in var.iter_mut().zip(&samples[i]).zip(&mean) {
                    *a += (v - mu) * (v - mu) / m;
                }
            }
            var.into_iter().map(|v| v.max(floor)).collect()
        };
        means.push(mean);
        variances.push(var);
    }

    GmmModel {
        weights: vec![1.0 / k as f64; k],
        means,
        variances,
        variance_floor: floor,
        train_meta: GmmTrainMeta {
            seed,
            iterations: 0,
            log_likelihood: f64::NEG_INFINITY,
            history: Vec::new(),
        },
    }
}

/// Fills `resp` (row-major n×k) and returns the mean log-likelihood.
fn e_step(model: &GmmModel, samples: &[Vec<f64>], resp: &mut [f64]) -> f64 {
    let k = model.components();
    let mut total = 0.0;
    for (x, row) in samples.iter().zip(resp.chunks_exact_mut(k)) {
        model.component_log_terms(x, row);
        let lse = log_sum_exp(row);
        for r in row.iter_mut() {
            *r = (*r - lse).exp();
        }
        total += lse;
    }
    total / samples.len() as f64
}

fn m_step(model: &mut GmmModel, samples: &[Vec<f64>], resp: &[f64]) {
    let k = model.components();
    let dim = model.dim();
    let n = samples.len() as f64;
    let floor = model.variance_floor;
    for c in 0..k {
        let mass: f64 = resp.iter().skip(c).step_by(k).sum();
        model.weights[c] = mass / n;
        if mass <= 0.0 {
            continue;
        }
        let mut mean = vec![0.0; dim];
        for (x, row) in samples.iter().zip(resp.chunks_exact(k)) {
            let r = row[c];
            for (m, v) in mean.iter_mut().zip(x) {
                *m += r * v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= mass);
        let mut var = vec![0.0; dim];
        for (x, row) in samples.iter().zip(resp.chunks_exact(k)) {
            let r = row[c];
            for ((a, v), mu) in var.iter_mut().zip(x).zip(&mean) {
                *a += r * (v - mu) * (v - mu);
            }
        }
        model.means[c] = mean;
        model.variances[c] = var.into_iter().map(|v| (v / mass).max(floor)).collect();
    }
    let total: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= total);
}

/// EM for a diagonal-covariance mixture, seeded by k-means++.
///
/// Runs until the mean log-likelihood gains less than `tol` or `max_iter`
/// M-steps have been taken. Identical inputs and seed give a bitwise
/// identical model.
pub fn fit_gmm(samples: &[Vec<f64>], config: &GmmConfig) -> Result<GmmModel> {
    let k = config.components;
    if k == 0 || config.max_iter == 0 {
        return Err(Error::InvalidArgument(
            "components and max_iter must be positive".into(),
        ));
    }
    if !(config.tol > 0.0) || !(config.variance_floor > 0.0) {
        return Err(Error::InvalidArgument("tol and variance_floor must be positive".into()));
    }
    if samples.len() < k {
        return Err(Error::TooFewSamples {
            needed: k,
            available: samples.len(),
        });
    }
    let dim = samples[0].len();
    if dim == 0 {
        return Err(Error::InvalidArgument("samples have zero length".into()));
    }
    if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let centers = kmeans_pp(samples, k, &mut rng);
    let mut model = initial_model(samples, &centers, config.variance_floor, config.seed);

    let mut resp = vec![0.0; samples.len() * k];
    let mut ll = e_step(&model, samples, &mut resp);
    let mut history = vec![ll];
    let mut iterations = 0;
    while iterations < config.max_iter {
        m_step(&mut model, samples, &resp);
        let next = e_step(&model, samples, &mut resp);
        history.push(next);
        iterations += 1;
        let gain = next - ll;
        ll = next;
        if gain < config.tol {
            break;
        }
    }
    model.train_meta = GmmTrainMeta {
        seed: config.seed,
        iterations,
        log_likelihood: ll,
        history,
    };
    Ok(model)
}

/// On-disk form of a trained per-word mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmFile {
    pub version: u32,
    pub word: String,
    #[serde(rename = "K")]
    pub components: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub variance_floor: f64,
    pub train_meta: GmmTrainMeta,
}

impl GmmFile {
    pub fn new(word: &str, model: &GmmModel) -> Self {
        Self {
            version: GMM_FILE_VERSION,
            word: word.to_string(),
            components: model.components(),
            dim: model.dim(),
            weights: model.weights.clone(),
            means: model.means.clone(),
            variances: model.variances.clone(),
            variance_floor: model.variance_floor,
            train_meta: model.train_meta.clone(),
        }
    }

    pub fn into_model(self) -> Result<GmmModel> {
        if self.version != GMM_FILE_VERSION {
            return Err(Error::Version {
                kind: "gmm",
                found: self.version,
                expected: GMM_FILE_VERSION,
            });
        }
        let model = GmmModel {
            weights: self.weights,
            means: self.means,
            variances: self.variances,
            variance_floor: self.variance_floor,
            train_meta: self.train_meta,
        };
        model.check_shapes()?;
        if model.components() != self.components || model.dim() != self.dim {
            return Err(Error::InvalidArgument("K/dim disagree with tensors".into()));
        }
        Ok(model)
    }
}
