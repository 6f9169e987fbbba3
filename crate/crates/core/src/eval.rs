//! Evaluation protocol: seeded splits with balanced negatives, confusion
//! metrics, multi-seed averaging, graph recovery and neighbour lookups.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{predict_cls, train_cls, BaselineError, ClsConfig};
use crate::dataset::{Dataset, DatasetError, Domain, EmbeddingTable, RelationSet};
use crate::graph::{build_graph, graph_domain_neighbors, GraphConfig, GraphError, HeteroGraph, NodeKind};
use crate::linalg::SeededRng;
use crate::model::ModelError;
use crate::train::{fit, TrainConfig, TrainError, TrainedModel, ValidationPairs};

/// Smallest positive set `make_split` accepts.
pub const MIN_POSITIVES: usize = 20;

/// Decision threshold on predicted probabilities.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("need at least {MIN_POSITIVES} positive relations, got {0}")]
    TooFewPositives(usize),
    #[error("need {needed} negative pairs but only {available} are available")]
    InsufficientNegatives { needed: usize, available: usize },
    #[error("predictions ({0}) and labels ({1}) differ in length")]
    LengthMismatch(usize, usize),
    #[error("metrics need at least one prediction")]
    EmptyInput,
    #[error("concept id {id} is out of range for {n} concepts")]
    UnknownConcept { id: usize, n: usize },
    #[error("no seeds given")]
    NoSeeds,
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Positive and sampled negative pairs for one seed, split 85/5/10.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSplit {
    pub seed: u64,
    pub train_pos: Vec<(usize, usize)>,
    pub val_pos: Vec<(usize, usize)>,
    pub test_pos: Vec<(usize, usize)>,
    pub train_neg: Vec<(usize, usize)>,
    pub val_neg: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
}

impl EvalSplit {
    /// Test pairs followed by their labels.
    pub fn test_pairs(&self) -> (Vec<(usize, usize)>, Vec<bool>) {
        labeled(&self.test_pos, &self.test_neg)
    }

    pub fn val_pairs(&self) -> (Vec<(usize, usize)>, Vec<bool>) {
        labeled(&self.val_pos, &self.val_neg)
    }
}

fn labeled(pos: &[(usize, usize)], neg: &[(usize, usize)]) -> (Vec<(usize, usize)>, Vec<bool>) {
    let pairs = pos.iter().chain(neg).copied().collect();
    let labels = (0..pos.len() + neg.len()).map(|i| i < pos.len()).collect();
    (pairs, labels)
}

/// `(⌊0.85n⌋, ⌊0.05n⌋, remainder)`.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 85 / 100;
    let val = n * 5 / 100;
    (train, val, n - train - val)
}

fn shuffle<T>(v: &mut [T], rng: &mut SeededRng) {
    for i in (1..v.len()).rev() {
        let j = rng.below(i + 1);
        v.swap(i, j);
    }
}

/// Uniform sample without replacement of `count` ordered, non-self pairs of
/// `0..n_concepts` that are not in `positives`.
pub fn sample_negatives(
    n_concepts: usize,
    positives: &[(usize, usize)],
    count: usize,
    rng: &mut SeededRng,
) -> Result<Vec<(usize, usize)>, EvalError> {
    let pos: HashSet<(usize, usize)> = positives.iter().copied().collect();
    let mut cands: Vec<(usize, usize)> = (0..n_concepts)
        .flat_map(|a| (0..n_concepts).map(move |b| (a, b)))
        .filter(|&(a, b)| a != b && !pos.contains(&(a, b)))
        .collect();
    if cands.len() < count {
        return Err(EvalError::InsufficientNegatives {
            needed: count,
            available: cands.len(),
        });
    }
    for i in 0..count {
        let j = i + rng.below(cands.len() - i);
        cands.swap(i, j);
    }
    cands.truncate(count);
    Ok(cands)
}

/// Seeded 85/5/10 split of `positives` with an equal number of negatives in
/// each part.
pub fn make_split(positives: &RelationSet, seed: u64) -> Result<EvalSplit, EvalError> {
    let n = positives.len();
    if n < MIN_POSITIVES {
        return Err(EvalError::TooFewPositives(n));
    }
    let mut rng = SeededRng::new(seed);
    let mut pos = positives.pairs().to_vec();
    pos.sort_unstable();
    shuffle(&mut pos, &mut rng);
    let neg = sample_negatives(positives.n_concepts, &pos, n, &mut rng)?;
    let (a, b, _) = split_sizes(n);
    Ok(EvalSplit {
        seed,
        train_pos: pos[..a].to_vec(),
        val_pos: pos[a..a + b].to_vec(),
        test_pos: pos[a + b..].to_vec(),
        train_neg: neg[..a].to_vec(),
        val_neg: neg[a..a + b].to_vec(),
        test_neg: neg[a + b..].to_vec(),
    })
}

/// Holds out `fraction` (at least one pair when positive) of the source
/// positives, with as many negatives, for model selection. Returns the
/// remaining training positives. A fraction of 0 holds out nothing.
pub fn source_validation(
    relations: &RelationSet,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<(usize, usize)>, ValidationPairs), EvalError> {
    let n = relations.len();
    let mut pos = relations.pairs().to_vec();
    pos.sort_unstable();
    if n < 2 || fraction <= 0.0 {
        return Ok((pos, ValidationPairs::default()));
    }
    let mut rng = SeededRng::new(seed).fork(7);
    shuffle(&mut pos, &mut rng);
    let n_val = ((n as f64 * fraction).floor() as usize).clamp(1, n - 1);
    let val_pos = pos.split_off(n - n_val);
    let val_neg = sample_negatives(relations.n_concepts, relations.pairs(), n_val, &mut rng)?;
    pos.sort_unstable();
    Ok((
        pos,
        ValidationPairs {
            pos: val_pos,
            neg: val_neg,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub f1: f64,
    #[serde(rename = "acc")]
    pub accuracy: f64,
    #[serde(rename = "pre")]
    pub precision: f64,
    #[serde(rename = "rec")]
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            f1,
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            precision,
            recall,
            tp,
            fp,
            tn,
            fn_,
        }
    }
}

/// Confusion metrics with "prerequisite exists" as the positive class.
pub fn compute_metrics(predictions: &[bool], labels: &[bool]) -> Result<Metrics, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), labels.len()));
    }
    if predictions.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(Metrics::from_counts(tp, fp, tn, fn_))
}

/// Arithmetic means of the rate metrics across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub f1: f64,
    pub acc: f64,
    pub pre: f64,
    pub rec: f64,
    pub recovered_edges: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cdvgae,
    Vgae,
    Cls,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Cdvgae => "cdvgae",
            ModelKind::Vgae => "vgae",
            ModelKind::Cls => "cls",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cdvgae" => Ok(ModelKind::Cdvgae),
            "vgae" => Ok(ModelKind::Vgae),
            "cls" => Ok(ModelKind::Cls),
            other => Err(format!("unknown model '{other}' (expected cdvgae, vgae or cls)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub train: TrainConfig,
    pub graph: GraphConfig,
    pub cls: ClsConfig,
    /// Share of source positives held out for model selection.
    pub source_val_fraction: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            graph: GraphConfig::default(),
            cls: ClsConfig::default(),
            source_val_fraction: 0.05,
        }
    }
}

impl ProtocolConfig {
    /// The configuration actually used for `kind` at `seed`.
    pub fn resolved(&self, kind: ModelKind, seed: u64) -> ProtocolConfig {
        let mut c = self.clone();
        c.train.seed = seed;
        c.cls.seed = seed;
        if kind == ModelKind::Vgae {
            c.train.dn_keep_fraction = 0.0;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: Metrics,
    /// Ordered target pairs scored at or above the threshold.
    pub recovered_edges: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub model: ModelKind,
    pub source: String,
    pub target: String,
    pub seeds: Vec<SeedEntry>,
    pub mean: MeanMetrics,
    pub config: ProtocolConfig,
}

impl SeedReport {
    pub fn new(
        model: ModelKind,
        source: String,
        target: String,
        seeds: Vec<SeedEntry>,
        config: ProtocolConfig,
    ) -> Self {
        let n = seeds.len().max(1) as f64;
        let avg = |f: &dyn Fn(&SeedEntry) -> f64| seeds.iter().map(f).sum::<f64>() / n;
        let mean = MeanMetrics {
            f1: avg(&|e| e.metrics.f1),
            acc: avg(&|e| e.metrics.accuracy),
            pre: avg(&|e| e.metrics.precision),
            rec: avg(&|e| e.metrics.recall),
            recovered_edges: avg(&|e| e.recovered_edges as f64),
        };
        Self {
            model,
            source,
            target,
            seeds,
            mean,
            config,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Probabilities for target-concept pairs (local ids) from latent means.
pub fn predict_pairs(
    model: &TrainedModel,
    graph: &HeteroGraph,
    pairs: &[(usize, usize)],
) -> Result<Vec<f64>, EvalError> {
    let nodes = graph.nodes();
    let nt = nodes.n_target();
    let global: Vec<(usize, usize)> = pairs
        .iter()
        .map(|&(a, b)| {
            for id in [a, b] {
                if id >= nt {
                    return Err(EvalError::UnknownConcept { id, n: nt });
                }
            }
            Ok((
                nodes.global(NodeKind::TargetConcept, a),
                nodes.global(NodeKind::TargetConcept, b),
            ))
        })
        .collect::<Result<_, _>>()?;
    Ok(model.probabilities(&global)?)
}

/// Every ordered non-self pair of `0..n`.
pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|a| (0..n).map(move |b| (a, b)))
        .filter(|(a, b)| a != b)
        .collect()
}

/// Pairs whose probability is at least `threshold`.
pub fn recover_from_scores(
    domain: Domain,
    n_concepts: usize,
    pairs: &[(usize, usize)],
    probs: &[f64],
    threshold: f64,
) -> Result<RelationSet, EvalError> {
    let kept = pairs
        .iter()
        .zip(probs)
        .filter(|(_, &p)| p >= threshold)
        .map(|(&e, _)| e)
        .collect();
    Ok(RelationSet::new(domain, n_concepts, kept)?)
}

/// All ordered target pairs with probability `≥ threshold`.
pub fn recover_graph(model: &TrainedModel, graph: &HeteroGraph, threshold: f64) -> Result<RelationSet, EvalError> {
    let nt = graph.nodes().n_target();
    let pairs = all_pairs(nt);
    let probs = predict_pairs(model, graph, &pairs)?;
    recover_from_scores(Domain::Target, nt, &pairs, &probs, threshold)
}

/// `(prerequisites, successors)` of `concept`, each sorted by id.
pub fn concept_neighbors(relations: &RelationSet, concept: usize) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    if concept >= relations.n_concepts {
        return Err(EvalError::UnknownConcept {
            id: concept,
            n: relations.n_concepts,
        });
    }
    let mut pre: Vec<usize> = relations
        .pairs()
        .iter()
        .filter(|p| p.1 == concept)
        .map(|p| p.0)
        .collect();
    let mut suc: Vec<usize> = relations
        .pairs()
        .iter()
        .filter(|p| p.0 == concept)
        .map(|p| p.1)
        .collect();
    pre.sort_unstable();
    suc.sort_unstable();
    Ok((pre, suc))
}

/// A trained graph model together with the graph it was fit on.
#[derive(Debug)]
pub struct GraphRun {
    pub graph: HeteroGraph,
    pub model: TrainedModel,
}

/// Everything produced for one seed of the protocol.
#[derive(Debug)]
pub struct SeedOutcome {
    pub entry: SeedEntry,
    pub split: EvalSplit,
    pub recovered: RelationSet,
    /// `None` for the classifier baseline.
    pub run: Option<GraphRun>,
}

/// Trains a graph model on the source domain of `dataset`.
pub fn train_graph_model(
    dataset: &Dataset,
    embeddings: &EmbeddingTable,
    kind: ModelKind,
    config: &ProtocolConfig,
    seed: u64,
) -> Result<GraphRun, EvalError> {
    let cfg = config.resolved(kind, seed);
    let (train_pos, validation) = source_validation(&dataset.source.relations, cfg.source_val_fraction, seed)?;
    let graph = build_graph(dataset, &train_pos, embeddings, &cfg.graph)?;
    let map = graph_domain_neighbors(&graph, cfg.train.dn_keep_fraction, cfg.graph.dn_scope)?;
    let model = fit(&graph, &map, &validation, &cfg.train)?;
    Ok(GraphRun { graph, model })
}

/// One protocol seed: split the target relations, train on the source only,
/// score the target test pairs.
pub fn run_seed(
    dataset: &Dataset,
    embeddings: &EmbeddingTable,
    kind: ModelKind,
    seed: u64,
    config: &ProtocolConfig,
) -> Result<SeedOutcome, EvalError> {
    let split = make_split(&dataset.target.relations, seed)?;
    let (test_pairs, labels) = split.test_pairs();
    let nt = dataset.target.concepts.len();
    let every = all_pairs(nt);
    let (probs, all_probs, run) = match kind {
        ModelKind::Cdvgae | ModelKind::Vgae => {
            let run = train_graph_model(dataset, embeddings, kind, config, seed)?;
            let probs = predict_pairs(&run.model, &run.graph, &test_pairs)?;
            let all = predict_pairs(&run.model, &run.graph, &every)?;
            (probs, all, Some(run))
        }
        ModelKind::Cls => {
            let cfg = config.resolved(kind, seed);
            let source = &dataset.source.relations;
            let mut rng = SeededRng::new(seed).fork(8);
            let neg = sample_negatives(source.n_concepts, source.pairs(), source.len(), &mut rng)?;
            let (model, _) = train_cls(source.pairs(), &neg, embeddings, Domain::Source, &cfg.cls)?;
            let probs = predict_cls(&model, &test_pairs, embeddings, Domain::Target)?;
            let all = predict_cls(&model, &every, embeddings, Domain::Target)?;
            (probs, all, None)
        }
    };
    let preds: Vec<bool> = probs.iter().map(|&p| p >= THRESHOLD).collect();
    let metrics = compute_metrics(&preds, &labels)?;
    let recovered = recover_from_scores(Domain::Target, nt, &every, &all_probs, THRESHOLD)?;
    Ok(SeedOutcome {
        entry: SeedEntry {
            seed,
            metrics,
            recovered_edges: recovered.len(),
            best_epoch: run.as_ref().map(|r| r.model.best_epoch),
        },
        split,
        recovered,
        run,
    })
}

/// Runs every seed (in parallel over `jobs` threads) and averages.
pub fn run_protocol(
    dataset: &Dataset,
    embeddings: &EmbeddingTable,
    kind: ModelKind,
    seeds: &[u64],
    config: &ProtocolConfig,
    jobs: usize,
) -> Result<SeedReport, EvalError> {
    if seeds.is_empty() {
        return Err(EvalError::NoSeeds);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    let entries = pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| run_seed(dataset, embeddings, kind, s, config).map(|o| o.entry))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut shown = config.resolved(kind, seeds[0]);
    shown.train.seed = config.train.seed;
    shown.cls.seed = config.cls.seed;
    Ok(SeedReport::new(
        kind,
        dataset.source.name.clone(),
        dataset.target.name.clone(),
        entries,
        shown,
    ))
}
