//! The heterogeneous concept–resource graph and its domain-neighbour map.
//!
//! Global node order is: source concepts, target concepts, resources. The
//! graph carries four adjacency blocks; the target-concept block is gold
//! data for evaluation and is not part of [`TrainingView`].

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, Domain, EmbeddingKey, EmbeddingTable};
use crate::linalg::{cosine, LinalgError, Matrix};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("similarity threshold {0} is outside [0, 1]")]
    Threshold(f64),
    #[error("top-k for resource edges must be at least 1")]
    TopK,
    #[error("keep fraction {0} is outside [0, 1]")]
    KeepFraction(f64),
    #[error("domain-neighbour selection needs at least one source and one target concept")]
    EmptyDomain,
    #[error("{what}: {source}")]
    Similarity {
        what: String,
        #[source]
        source: LinalgError,
    },
    #[error("pair ({0}, {1}) references a concept outside the source vocabulary")]
    UnknownSourcePair(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    SourceConcept,
    TargetConcept,
    Resource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeIndex {
    pub kind: NodeKind,
    pub local_id: usize,
    pub global_id: usize,
}

/// Maps between per-kind local ids and contiguous global ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeTable {
    n_source: usize,
    n_target: usize,
    /// Resource ids in global order.
    resource_ids: Vec<usize>,
}

impl NodeTable {
    pub fn new(n_source: usize, n_target: usize, resource_ids: Vec<usize>) -> Self {
        Self {
            n_source,
            n_target,
            resource_ids,
        }
    }

    pub fn n_source(&self) -> usize {
        self.n_source
    }

    pub fn n_target(&self) -> usize {
        self.n_target
    }

    pub fn n_concepts(&self) -> usize {
        self.n_source + self.n_target
    }

    pub fn n_resources(&self) -> usize {
        self.resource_ids.len()
    }

    pub fn len(&self) -> usize {
        self.n_concepts() + self.n_resources()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn global(&self, kind: NodeKind, local: usize) -> usize {
        match kind {
            NodeKind::SourceConcept => local,
            NodeKind::TargetConcept => self.n_source + local,
            NodeKind::Resource => self.n_concepts() + local,
        }
    }

    pub fn node(&self, global: usize) -> NodeIndex {
        let (kind, local_id) = if global < self.n_source {
            (NodeKind::SourceConcept, global)
        } else if global < self.n_concepts() {
            (NodeKind::TargetConcept, global - self.n_source)
        } else {
            (NodeKind::Resource, global - self.n_concepts())
        };
        NodeIndex {
            kind,
            local_id,
            global_id: global,
        }
    }

    pub fn source_rows(&self) -> std::ops::Range<usize> {
        0..self.n_source
    }

    pub fn target_rows(&self) -> std::ops::Range<usize> {
        self.n_source..self.n_concepts()
    }

    pub fn key(&self, global: usize) -> EmbeddingKey {
        let n = self.node(global);
        match n.kind {
            NodeKind::SourceConcept => EmbeddingKey::SourceConcept(n.local_id),
            NodeKind::TargetConcept => EmbeddingKey::TargetConcept(n.local_id),
            NodeKind::Resource => EmbeddingKey::Resource(self.resource_ids[n.local_id]),
        }
    }
}

/// How the domain-neighbour cutoff is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborScope {
    /// One cutoff over all source×target pairs.
    #[default]
    Global,
    /// The same fraction of sources kept for each target concept.
    PerTarget,
}

/// Which endpoints of a retained domain pair receive the other as neighbour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborDirection {
    #[default]
    Both,
    TargetOnly,
}

/// Whether direct-neighbour messages are scaled by edge weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeWeighting {
    #[default]
    Weighted,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Threshold on `(cos + 1) / 2` for resource edges.
    pub sim_threshold: f64,
    /// Strongest resource neighbours kept per resource.
    pub top_k_resource: usize,
    pub dn_scope: NeighborScope,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            sim_threshold: 0.7,
            top_k_resource: 10,
            dn_scope: NeighborScope::Global,
        }
    }
}

/// Target-concept gold pairs. Every read is counted.
#[derive(Debug, Default)]
struct GoldBlock {
    pairs: Vec<(usize, usize)>,
    reads: AtomicUsize,
}

/// Cross-domain concept–resource graph.
#[derive(Debug)]
pub struct HeteroGraph {
    nodes: NodeTable,
    features: Matrix,
    /// Source × source, `acs[(a, b)] = 1` iff `a → b` is a training relation.
    acs: Matrix,
    /// Resources × concepts (source then target).
    arc: Matrix,
    /// Resources × resources, symmetric, zero diagonal.
    ar: Matrix,
    gold: GoldBlock,
}

/// Everything training may look at: no target-concept labels.
#[derive(Debug, Clone, Copy)]
pub struct TrainingView<'a> {
    pub nodes: &'a NodeTable,
    pub features: &'a Matrix,
    pub acs: &'a Matrix,
    pub arc: &'a Matrix,
    pub ar: &'a Matrix,
}

impl TrainingView<'_> {
    /// The full N×N weighted adjacency visible to training. The target×target
    /// block is identically zero.
    pub fn dense_adjacency(&self) -> Matrix {
        let n = self.nodes.len();
        let s = self.nodes.n_source();
        let c = self.nodes.n_concepts();
        let mut a = Matrix::zeros(n, n);
        for i in 0..s {
            for j in 0..s {
                a[(i, j)] = self.acs[(i, j)];
            }
        }
        for r in 0..self.nodes.n_resources() {
            for j in 0..c {
                a[(c + r, j)] = self.arc[(r, j)];
                a[(j, c + r)] = self.arc[(r, j)];
            }
            for q in 0..self.nodes.n_resources() {
                a[(c + r, c + q)] = self.ar[(r, q)];
            }
        }
        a
    }
}

impl HeteroGraph {
    pub fn nodes(&self) -> &NodeTable {
        &self.nodes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn acs(&self) -> &Matrix {
        &self.acs
    }

    pub fn arc(&self) -> &Matrix {
        &self.arc
    }

    pub fn ar(&self) -> &Matrix {
        &self.ar
    }

    pub fn training_view(&self) -> TrainingView<'_> {
        TrainingView {
            nodes: &self.nodes,
            features: &self.features,
            acs: &self.acs,
            arc: &self.arc,
            ar: &self.ar,
        }
    }

    /// Gold target relations, for evaluation only.
    pub fn target_gold(&self) -> &[(usize, usize)] {
        self.gold.reads.fetch_add(1, AtomicOrdering::SeqCst);
        &self.gold.pairs
    }

    /// How many times [`HeteroGraph::target_gold`] has been called.
    pub fn target_gold_reads(&self) -> usize {
        self.gold.reads.load(AtomicOrdering::SeqCst)
    }

    /// Edge list `kind<TAB>from<TAB>to<TAB>weight` over global ids. Domain
    /// neighbour pairs are appended as kind `dn` when a map is given.
    pub fn export_tsv(&self, domain_map: Option<&DomainNeighborMap>) -> String {
        let mut out = String::new();
        let c = self.nodes.n_concepts();
        for i in 0..self.acs.rows() {
            for j in 0..self.acs.cols() {
                if self.acs[(i, j)] != 0.0 {
                    let _ = writeln!(out, "acs\t{i}\t{j}\t{}", self.acs[(i, j)]);
                }
            }
        }
        for r in 0..self.arc.rows() {
            for j in 0..self.arc.cols() {
                if self.arc[(r, j)] != 0.0 {
                    let _ = writeln!(out, "arc\t{}\t{j}\t{}", c + r, self.arc[(r, j)]);
                }
            }
        }
        for r in 0..self.ar.rows() {
            for q in r + 1..self.ar.cols() {
                if self.ar[(r, q)] != 0.0 {
                    let _ = writeln!(out, "ar\t{}\t{}\t{}", c + r, c + q, self.ar[(r, q)]);
                }
            }
        }
        if let Some(map) = domain_map {
            for p in &map.pairs {
                let _ = writeln!(
                    out,
                    "dn\t{}\t{}\t{}",
                    self.nodes.global(NodeKind::SourceConcept, p.source),
                    self.nodes.global(NodeKind::TargetConcept, p.target),
                    p.similarity
                );
            }
        }
        out
    }
}

/// `(cos + 1) / 2`.
fn unit_similarity(u: &[f64], v: &[f64], what: impl FnOnce() -> String) -> Result<f64, GraphError> {
    cosine(u, v)
        .map(|c| (c + 1.0) / 2.0)
        .map_err(|source| GraphError::Similarity {
            what: what(),
            source,
        })
}

/// Builds the graph. `source_positives` become the `A^{c,s}` block; target
/// relations of `dataset` are stored only as gold.
pub fn build_graph(
    dataset: &Dataset,
    source_positives: &[(usize, usize)],
    embeddings: &EmbeddingTable,
    config: &GraphConfig,
) -> Result<HeteroGraph, GraphError> {
    if !(0.0..=1.0).contains(&config.sim_threshold) {
        return Err(GraphError::Threshold(config.sim_threshold));
    }
    if config.top_k_resource == 0 {
        return Err(GraphError::TopK);
    }
    dataset.check_embeddings(embeddings)?;

    let n_source = dataset.source.concepts.len();
    let n_target = dataset.target.concepts.len();
    let resource_ids: Vec<usize> = dataset.resources.documents().iter().map(|r| r.id).collect();
    let nodes = NodeTable::new(n_source, n_target, resource_ids);
    let n = nodes.len();
    let dim = embeddings.dim();

    let mut features = Matrix::zeros(n, dim);
    for g in 0..n {
        let key = nodes.key(g);
        let v = embeddings
            .get(key)
            .ok_or_else(|| DatasetError::MissingKeys(vec![key]))?;
        features.row_mut(g).copy_from_slice(v);
    }

    let mut acs = Matrix::zeros(n_source, n_source);
    for &(a, b) in source_positives {
        if a >= n_source || b >= n_source || a == b {
            return Err(GraphError::UnknownSourcePair(a, b));
        }
        acs[(a, b)] = 1.0;
    }

    let n_res = nodes.n_resources();
    let n_con = nodes.n_concepts();
    let tau = config.sim_threshold;
    let mut arc = Matrix::zeros(n_res, n_con);
    for r in 0..n_res {
        let rg = nodes.global(NodeKind::Resource, r);
        for j in 0..n_con {
            let w = unit_similarity(features.row(rg), features.row(j), || {
                format!("{} vs {}", nodes.key(rg), nodes.key(j))
            })?;
            if w >= tau {
                arc[(r, j)] = w;
            }
        }
    }

    // Per-resource top-k above threshold, then symmetrised by max.
    let mut kept = Matrix::zeros(n_res, n_res);
    for r in 0..n_res {
        let rg = nodes.global(NodeKind::Resource, r);
        let mut cands = Vec::new();
        for q in 0..n_res {
            if q == r {
                continue;
            }
            let qg = nodes.global(NodeKind::Resource, q);
            let w = unit_similarity(features.row(rg), features.row(qg), || {
                format!("{} vs {}", nodes.key(rg), nodes.key(qg))
            })?;
            if w >= tau {
                cands.push((q, w));
            }
        }
        cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for &(q, w) in cands.iter().take(config.top_k_resource) {
            kept[(r, q)] = w;
        }
    }
    let mut ar = Matrix::zeros(n_res, n_res);
    for r in 0..n_res {
        for q in 0..n_res {
            ar[(r, q)] = kept[(r, q)].max(kept[(q, r)]);
        }
    }

    Ok(HeteroGraph {
        nodes,
        features,
        acs,
        arc,
        ar,
        gold: GoldBlock {
            pairs: dataset.target.relations.pairs().to_vec(),
            reads: AtomicUsize::new(0),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainPair {
    /// Local source concept id.
    pub source: usize,
    /// Local target concept id.
    pub target: usize,
    /// Min-max normalised cosine in `[0, 1]`.
    pub similarity: f64,
}

/// Retained source→target concept matches, strongest first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DomainNeighborMap {
    pub pairs: Vec<DomainPair>,
    pub warnings: Vec<String>,
}

impl DomainNeighborMap {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// `ceil(fraction * count)`, tolerant of binary rounding in the product.
pub(crate) fn keep_count(fraction: f64, count: usize) -> usize {
    let raw = fraction * count as f64;
    let c = (raw - 1e-9).ceil().max(0.0) as usize;
    c.min(count)
}

/// Scores every (source, target) concept pair by cosine of their feature
/// rows, min-max normalises the scores to `[0, 1]` and keeps the top
/// `keep_fraction`. Ties are broken by `(source, target)` ascending.
///
/// `source_rows` and `target_rows` are rows of `features`; the returned pairs
/// use positions within those slices as local ids. A fraction of `0` yields an
/// empty map.
pub fn select_domain_neighbors(
    features: &Matrix,
    source_rows: &[usize],
    target_rows: &[usize],
    keep_fraction: f64,
    scope: NeighborScope,
) -> Result<DomainNeighborMap, GraphError> {
    if !(0.0..=1.0).contains(&keep_fraction) || keep_fraction.is_nan() {
        return Err(GraphError::KeepFraction(keep_fraction));
    }
    if source_rows.is_empty() || target_rows.is_empty() {
        return Err(GraphError::EmptyDomain);
    }
    if keep_fraction == 0.0 {
        return Ok(DomainNeighborMap::empty());
    }

    let mut scored = Vec::with_capacity(source_rows.len() * target_rows.len());
    for (s, &sr) in source_rows.iter().enumerate() {
        for (t, &tr) in target_rows.iter().enumerate() {
            let c = cosine(features.row(sr), features.row(tr)).map_err(|source| {
                GraphError::Similarity {
                    what: format!("source concept {s} vs target concept {t}"),
                    source,
                }
            })?;
            scored.push(DomainPair {
                source: s,
                target: t,
                similarity: c,
            });
        }
    }

    let (lo, hi) = scored.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.similarity), hi.max(p.similarity))
    });
    if hi <= lo {
        return Ok(DomainNeighborMap {
            pairs: Vec::new(),
            warnings: vec![format!(
                "all {} source-target similarities equal {hi}; no domain neighbours retained",
                scored.len()
            )],
        });
    }
    for p in &mut scored {
        p.similarity = (p.similarity - lo) / (hi - lo);
    }

    let order = |a: &DomainPair, b: &DomainPair| -> Ordering {
        b.similarity
            .total_cmp(&a.similarity)
            .then(a.source.cmp(&b.source))
            .then(a.target.cmp(&b.target))
    };

    let pairs = match scope {
        NeighborScope::Global => {
            scored.sort_by(order);
            scored.truncate(keep_count(keep_fraction, scored.len()));
            scored
        }
        NeighborScope::PerTarget => {
            let per = keep_count(keep_fraction, source_rows.len());
            let mut kept = Vec::new();
            for t in 0..target_rows.len() {
                let mut col: Vec<_> = scored.iter().filter(|p| p.target == t).copied().collect();
                col.sort_by(order);
                kept.extend(col.into_iter().take(per));
            }
            kept.sort_by(order);
            kept
        }
    };
    Ok(DomainNeighborMap {
        pairs,
        warnings: Vec::new(),
    })
}

/// Domain neighbours over the concept feature rows of `graph`.
pub fn graph_domain_neighbors(
    graph: &HeteroGraph,
    keep_fraction: f64,
    scope: NeighborScope,
) -> Result<DomainNeighborMap, GraphError> {
    let nodes = graph.nodes();
    let src: Vec<usize> = nodes.source_rows().collect();
    let tgt: Vec<usize> = nodes.target_rows().collect();
    select_domain_neighbors(graph.features(), &src, &tgt, keep_fraction, scope)
}

/// Per-node direct (`N_i`, weighted) and domain (`N_i^D`) neighbour lists,
/// indexed by global id and sorted by neighbour id.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhoods {
    pub direct: Vec<Vec<(usize, f64)>>,
    pub domain: Vec<Vec<usize>>,
}

impl Neighborhoods {
    pub fn len(&self) -> usize {
        self.direct.len()
    }

    pub fn is_empty(&self) -> bool {
        self.direct.is_empty()
    }
}

/// Collects neighbour lists from the training view only. Source concept
/// edges are treated as undirected; a pair annotated in both directions
/// counts once.
pub fn neighbor_lists(
    view: TrainingView<'_>,
    domain_map: &DomainNeighborMap,
    direction: NeighborDirection,
    weighting: EdgeWeighting,
) -> Neighborhoods {
    let nodes = view.nodes;
    let n = nodes.len();
    let c = nodes.n_concepts();
    let mut dense: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); n];
    let mut link = |a: usize, b: usize, w: f64| {
        let w = match weighting {
            EdgeWeighting::Weighted => w,
            EdgeWeighting::Binary => 1.0,
        };
        for (x, y) in [(a, b), (b, a)] {
            let e = dense[x].entry(y).or_insert(0.0);
            *e = e.max(w);
        }
    };
    for i in 0..nodes.n_source() {
        for j in 0..nodes.n_source() {
            if view.acs[(i, j)] != 0.0 && i != j {
                link(i, j, view.acs[(i, j)]);
            }
        }
    }
    for r in 0..nodes.n_resources() {
        for j in 0..c {
            if view.arc[(r, j)] != 0.0 {
                link(c + r, j, view.arc[(r, j)]);
            }
        }
        for q in r + 1..nodes.n_resources() {
            if view.ar[(r, q)] != 0.0 {
                link(c + r, c + q, view.ar[(r, q)]);
            }
        }
    }
    let direct = dense.into_iter().map(|m| m.into_iter().collect()).collect();

    let mut domain: Vec<Vec<usize>> = vec![Vec::new(); n];
    for p in &domain_map.pairs {
        let s = nodes.global(NodeKind::SourceConcept, p.source);
        let t = nodes.global(NodeKind::TargetConcept, p.target);
        domain[t].push(s);
        if direction == NeighborDirection::Both {
            domain[s].push(t);
        }
    }
    for d in &mut domain {
        d.sort_unstable();
        d.dedup();
    }
    Neighborhoods { direct, domain }
}

/// Which domain a concept row belongs to, for callers working on global ids.
pub fn concept_domain(nodes: &NodeTable, global: usize) -> Option<Domain> {
    match nodes.node(global).kind {
        NodeKind::SourceConcept => Some(Domain::Source),
        NodeKind::TargetConcept => Some(Domain::Target),
        NodeKind::Resource => None,
    }
}
