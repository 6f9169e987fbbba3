//! Planted two-domain concept graphs with known target relations.
//!
//! Every target concept up to `min(n_source, n_target)` corresponds to one
//! source concept. The first `n_shared` correspondences are shared concepts:
//! same name, features equal to the partner's plus Gaussian noise. The rest
//! are related concepts: a fresh name and features mixing the partner's with
//! a fresh direction. Each source edge between corresponded concepts is
//! mirrored into the target with probability `mirror_fraction`; noise edges
//! make up the remainder so both domains have similar edge counts.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    write_embeddings, ConceptVocab, Dataset, DatasetError, Domain, DomainData, EmbeddingKey,
    EmbeddingTable, RelationSet, Resource, ResourceCorpus,
};
use crate::eval::ProtocolConfig;
use crate::linalg::{norm, SeededRng};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid planted spec: {0}")]
    Spec(String),
    #[error("edge density {0} produced no source edges")]
    NoEdges(f64),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub n_source: usize,
    pub n_target: usize,
    pub n_shared: usize,
    /// Expected edges over all ordered pairs, `density · n · (n − 1)`.
    pub edge_density: f64,
    pub mirror_fraction: f64,
    pub feature_dim: usize,
    /// Per-coordinate noise on shared-concept features.
    pub noise_sigma: f64,
    pub seed: u64,
    pub resources_per_concept: usize,
    /// Per-coordinate noise of a resource around its concept.
    pub resource_sigma: f64,
    /// Weight of the partner's direction in a related concept's features.
    pub related_mix: f64,
    /// Weight of a concept's direct prerequisites in its resources.
    pub resource_context: f64,
    /// Topic clusters among concepts.
    pub n_topics: usize,
    /// Weight of the rank-dependent direction in concept features.
    pub level_weight: f64,
    /// Weight of the per-concept random direction in concept features.
    pub individuality: f64,
    /// Sharpness of the preference for edges between similar concepts.
    pub affinity: f64,
}

impl PlantedSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_source: usize,
        n_target: usize,
        n_shared: usize,
        edge_density: f64,
        mirror_fraction: f64,
        feature_dim: usize,
        noise_sigma: f64,
        seed: u64,
    ) -> Self {
        Self {
            n_source,
            n_target,
            n_shared,
            edge_density,
            mirror_fraction,
            feature_dim,
            noise_sigma,
            seed,
            resources_per_concept: 1,
            resource_sigma: 0.1,
            related_mix: 0.75,
            resource_context: 1.0,
            n_topics: 4,
            level_weight: 1.0,
            individuality: 0.6,
            affinity: 4.0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: &str| Err(SynthError::Spec(m.to_owned()));
        if self.n_source < 2 || self.n_target < 2 {
            return fail("each domain needs at least two concepts");
        }
        if self.n_shared > self.n_source.min(self.n_target) {
            return fail("n_shared exceeds the smaller domain");
        }
        if !(self.edge_density > 0.0 && self.edge_density <= 0.5) {
            return fail("edge_density must lie in (0, 0.5] for an acyclic graph");
        }
        if !(0.0..=1.0).contains(&self.mirror_fraction) {
            return fail("mirror_fraction must lie in [0, 1]");
        }
        if self.feature_dim < 2 {
            return fail("feature_dim must be at least 2");
        }
        if !(self.noise_sigma >= 0.0 && self.resource_sigma >= 0.0) {
            return fail("noise levels must be non-negative");
        }
        if !(self.resource_context >= 0.0 && self.resource_context.is_finite()) {
            return fail("resource_context must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.related_mix) {
            return fail("related_mix must lie in [0, 1]");
        }
        Ok(())
    }
}

/// A generated corpus plus the bookkeeping needed to re-derive its gold.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedGraph {
    pub spec: PlantedSpec,
    pub dataset: Dataset,
    pub embeddings: EmbeddingTable,
    /// `partner[t]` is the source concept matched to target concept `t`.
    pub partner: Vec<Option<usize>>,
    /// Source edges that were mirrored.
    pub mirrored: Vec<(usize, usize)>,
    /// Target edges not derived from a source edge.
    pub noise_edges: Vec<(usize, usize)>,
    /// Source concept order used to orient every edge.
    pub source_rank: Vec<usize>,
}

impl PlantedGraph {
    pub fn gold(&self) -> &RelationSet {
        &self.dataset.target.relations
    }

    /// Writes the corpus under `root` and the features to
    /// `root/embeddings.txt`, returning the latter path.
    pub fn write(&self, root: &Path) -> Result<PathBuf, SynthError> {
        self.dataset.write(root)?;
        let path = root.join("embeddings.txt");
        write_embeddings(&path, &self.embeddings)?;
        Ok(path)
    }
}

/// Protocol settings for planted corpora: domain neighbours kept at one per
/// source concept on average, matching the one-to-one correspondence, every
/// source relation used for training, and 400 epochs since the small source
/// block is slow to fit.
pub fn planted_config(spec: &PlantedSpec) -> ProtocolConfig {
    let mut c = ProtocolConfig::default();
    c.train.dn_keep_fraction = 1.0 / spec.n_source.max(1) as f64;
    c.train.epochs = 400;
    c.source_val_fraction = 0.0;
    c
}

fn unit(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn random_unit(dim: usize, rng: &mut SeededRng) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        if norm(&v) > 1e-9 {
            unit(&mut v);
            return v;
        }
    }
}

fn shuffle(v: &mut [usize], rng: &mut SeededRng) {
    for i in (1..v.len()).rev() {
        let j = rng.below(i + 1);
        v.swap(i, j);
    }
}

const FILLER: [&str; 12] = [
    "lecture", "slide", "example", "definition", "theorem", "method", "overview", "exercise",
    "notation", "summary", "figure", "proof",
];

fn resource_tokens(name: &str, rng: &mut SeededRng) -> Vec<String> {
    let mut tokens: Vec<String> = name.split_whitespace().map(str::to_owned).collect();
    for _ in 0..6 {
        tokens.push(FILLER[rng.below(FILLER.len())].to_owned());
    }
    tokens
}

pub fn generate(spec: &PlantedSpec) -> Result<PlantedGraph, SynthError> {
    spec.validate()?;
    let root = SeededRng::new(spec.seed);
    let mut edge_rng = root.fork(1);
    let mut feat_rng = root.fork(2);
    let mut res_rng = root.fork(3);
    let (ns, nt, dim) = (spec.n_source, spec.n_target, spec.feature_dim);

    // Source concepts: a random rank, a topic, and features built from the
    // topic direction, a level direction scaled by rank, and an individual
    // direction.
    let mut order: Vec<usize> = (0..ns).collect();
    shuffle(&mut order, &mut edge_rng);
    let mut source_rank = vec![0; ns];
    for (r, &c) in order.iter().enumerate() {
        source_rank[c] = r;
    }
    let n_topics = spec.n_topics.max(1);
    let topic_dirs: Vec<Vec<f64>> = (0..n_topics).map(|_| random_unit(dim, &mut feat_rng)).collect();
    let level_dir = random_unit(dim, &mut feat_rng);
    let mut topic_order: Vec<usize> = (0..ns).collect();
    shuffle(&mut topic_order, &mut edge_rng);
    let mut source_topic = vec![0; ns];
    for (k, &c) in topic_order.iter().enumerate() {
        source_topic[c] = k % n_topics;
    }
    let concept_features = |topic: usize, level: f64, rng: &mut SeededRng| -> Vec<f64> {
        let own = random_unit(dim, rng);
        let mut v: Vec<f64> = (0..dim)
            .map(|d| {
                topic_dirs[topic][d] + spec.level_weight * (level - 0.5) * level_dir[d] + spec.individuality * own[d]
            })
            .collect();
        unit(&mut v);
        v
    };
    let level = |rank: usize, n: usize| rank as f64 / (n.max(2) - 1) as f64;
    let source_feats: Vec<Vec<f64>> = (0..ns)
        .map(|c| concept_features(source_topic[c], level(source_rank[c], ns), &mut feat_rng))
        .collect();

    // Source DAG: round(density·n·(n−1)) forward pairs drawn without
    // replacement, weighted by exp(affinity · cos).
    let n_edges = (spec.edge_density * (ns * (ns - 1)) as f64).round() as usize;
    if n_edges == 0 {
        return Err(SynthError::NoEdges(spec.edge_density));
    }
    let mut keyed: Vec<(f64, (usize, usize))> = Vec::new();
    for a in 0..ns {
        for b in 0..ns {
            if source_rank[a] < source_rank[b] {
                let c = crate::linalg::dot(&source_feats[a], &source_feats[b]);
                let w = (spec.affinity * c).exp();
                // Weighted sampling without replacement: largest u^(1/w).
                let u = edge_rng.unit().max(f64::MIN_POSITIVE);
                keyed.push((u.ln() / w, (a, b)));
            }
        }
    }
    keyed.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let mut source_edges: Vec<(usize, usize)> = keyed.iter().take(n_edges).map(|k| k.1).collect();
    source_edges.sort_unstable();

    // Target t < min(ns, nt) pairs with a distinct random source concept.
    let n_corr = ns.min(nt);
    let mut pick: Vec<usize> = (0..ns).collect();
    shuffle(&mut pick, &mut edge_rng);
    let mut tperm: Vec<usize> = (0..nt).collect();
    shuffle(&mut tperm, &mut edge_rng);
    let mut partner = vec![None; nt];
    for k in 0..n_corr {
        partner[tperm[k]] = Some(pick[k]);
    }
    let shared: BTreeSet<usize> = tperm[..spec.n_shared].iter().copied().collect();
    let mut image = vec![None; ns];
    for (t, s) in partner.iter().enumerate() {
        if let Some(s) = *s {
            image[s] = Some(t);
        }
    }

    let mut mirrored = Vec::new();
    let mut target_set = BTreeSet::new();
    let mut candidates = 0usize;
    for &(a, b) in &source_edges {
        if let (Some(ta), Some(tb)) = (image[a], image[b]) {
            candidates += 1;
            if edge_rng.unit() < spec.mirror_fraction {
                mirrored.push((a, b));
                target_set.insert((ta, tb));
            }
        }
    }

    // Target order: partners inherit the source rank, the rest come last.
    let target_rank: Vec<usize> = (0..nt)
        .map(|t| match partner[t] {
            Some(s) => source_rank[s],
            None => ns + t,
        })
        .collect();
    let mut free: Vec<(usize, usize)> = Vec::new();
    for a in 0..nt {
        for b in 0..nt {
            if target_rank[a] < target_rank[b] && !target_set.contains(&(a, b)) {
                free.push((a, b));
            }
        }
    }
    let n_noise = (((1.0 - spec.mirror_fraction) * candidates as f64).round() as usize).min(free.len());
    let mut noise_edges = Vec::with_capacity(n_noise);
    for _ in 0..n_noise {
        let k = edge_rng.below(free.len());
        let e = free.swap_remove(k);
        noise_edges.push(e);
        target_set.insert(e);
    }

    // Names.
    let source_names: Vec<String> = (0..ns).map(|i| format!("concept {i}")).collect();
    let target_names: Vec<String> = (0..nt)
        .map(|t| match partner[t] {
            Some(s) if shared.contains(&t) => source_names[s].clone(),
            _ => format!("topic {t}"),
        })
        .collect();
    let source_vocab = ConceptVocab::from_names(Domain::Source, source_names.clone());
    let target_vocab = ConceptVocab::from_names(Domain::Target, target_names.clone());

    // Target features.
    let mut table = EmbeddingTable::new(dim)?;
    let mut target_feats = Vec::with_capacity(nt);
    for t in 0..nt {
        let v = match partner[t] {
            Some(s) if shared.contains(&t) => source_feats[s]
                .iter()
                .map(|x| x + spec.noise_sigma * feat_rng.normal())
                .collect(),
            Some(s) => {
                let fresh = random_unit(dim, &mut feat_rng);
                let mut v: Vec<f64> = source_feats[s]
                    .iter()
                    .zip(&fresh)
                    .map(|(a, b)| spec.related_mix * a + (1.0 - spec.related_mix) * b)
                    .collect();
                unit(&mut v);
                v
            }
            None => {
                let topic = feat_rng.below(n_topics);
                concept_features(topic, level(target_rank[t] - ns + ns, ns + nt), &mut feat_rng)
            }
        };
        target_feats.push(v);
    }
    for (i, v) in source_feats.iter().enumerate() {
        table.insert(EmbeddingKey::SourceConcept(i), v.clone())?;
    }
    for (t, v) in target_feats.iter().enumerate() {
        table.insert(EmbeddingKey::TargetConcept(t), v.clone())?;
    }

    // Resources: each concept's slides also cover its direct prerequisites.
    let target_edges: Vec<(usize, usize)> = target_set.iter().copied().collect();
    let mut docs = Vec::new();
    let mut rid = 0usize;
    for (domain, names, feats, edges) in [
        (Domain::Source, &source_names, &source_feats, &source_edges),
        (Domain::Target, &target_names, &target_feats, &target_edges),
    ] {
        for (c, (name, f)) in names.iter().zip(feats.iter()).enumerate() {
            let prereqs: Vec<usize> = edges.iter().filter(|e| e.1 == c).map(|e| e.0).collect();
            let mut base = f.clone();
            for &p in &prereqs {
                for (b, x) in base.iter_mut().zip(&feats[p]) {
                    *b += spec.resource_context * x / prereqs.len() as f64;
                }
            }
            for _ in 0..spec.resources_per_concept {
                let mut v: Vec<f64> = base
                    .iter()
                    .map(|x| x + spec.resource_sigma * res_rng.normal())
                    .collect();
                unit(&mut v);
                table.insert(EmbeddingKey::Resource(rid), v)?;
                docs.push(Resource {
                    id: rid,
                    domain,
                    tokens: resource_tokens(name, &mut res_rng),
                });
                rid += 1;
            }
        }
    }

    let source_rel = RelationSet::new(Domain::Source, ns, source_edges)?;
    let target_rel = RelationSet::new(Domain::Target, nt, target_edges)?;
    let dataset = Dataset {
        source: DomainData {
            name: "source".into(),
            concepts: source_vocab,
            relations: source_rel,
        },
        target: DomainData {
            name: "target".into(),
            concepts: target_vocab,
            relations: target_rel,
        },
        resources: ResourceCorpus::new(docs)?,
    };
    dataset.check_embeddings(&table)?;
    Ok(PlantedGraph {
        spec: spec.clone(),
        dataset,
        embeddings: table,
        partner,
        mirrored,
        noise_edges,
        source_rank,
    })
}

/// Kahn's algorithm; true iff the relation graph has no directed cycle.
pub fn is_acyclic(relations: &RelationSet) -> bool {
    let n = relations.n_concepts;
    let mut indeg = vec![0usize; n];
    let mut out = vec![Vec::new(); n];
    for &(a, b) in relations.pairs() {
        indeg[b] += 1;
        out[a].push(b);
    }
    let mut stack: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut seen = 0;
    while let Some(v) = stack.pop() {
        seen += 1;
        for &w in &out[v] {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                stack.push(w);
            }
        }
    }
    seen == n
}
