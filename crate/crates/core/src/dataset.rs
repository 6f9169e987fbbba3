//! Loading and writing LectureBankCD-style corpora.
//!
//! Every file is UTF-8, one record per line. Blank lines and lines starting
//! with `#` are skipped. A corpus directory holds one sub-directory per domain:
//!
//! ```text
//! <root>/<domain>/concepts.tsv    id<TAB>name
//! <root>/<domain>/relations.tsv   from<TAB>to<TAB>label
//! <root>/<domain>/resources.tsv   id<TAB>text          (optional)
//! ```
//!
//! Embedding files are space separated, `key v1 ... vd`, with keys prefixed
//! `S:` (source concept), `T:` (target concept) or `R:` (resource).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::SeededRng;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate concept id {id}")]
    DuplicateId { line: usize, id: usize },
    #[error("concept ids are not contiguous from 0 (missing {missing})")]
    NonContiguous { missing: usize },
    #[error("line {line}: empty concept name")]
    EmptyName { line: usize },
    #[error("file contains no records")]
    Empty,
    #[error("line {line}: unknown concept id {id}")]
    UnknownId { line: usize, id: usize },
    #[error("line {line}: self-loop on concept {id}")]
    SelfLoop { line: usize, id: usize },
    #[error("line {line}: duplicate pair ({from}, {to})")]
    DuplicatePair { line: usize, from: usize, to: usize },
    #[error("line {line}: duplicate resource id {id}")]
    DuplicateResource { line: usize, id: usize },
    #[error("line {line}: resource {id} has no tokens")]
    EmptyResource { line: usize, id: usize },
    #[error("line {line}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: non-finite embedding component")]
    NonFinite { line: usize },
    #[error("line {line}: duplicate embedding key {key}")]
    DuplicateKey { line: usize, key: EmbeddingKey },
    #[error("embedding table is missing {} key(s): {}", .0.len(), fmt_keys(.0))]
    MissingKeys(Vec<EmbeddingKey>),
    #[error("embedding dimension must be positive")]
    ZeroDimension,
}

fn fmt_keys(keys: &[EmbeddingKey]) -> String {
    keys.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

/// Which side of the transfer a concept or resource belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: usize,
    pub name: String,
}

/// Concepts of one domain, in file order. Ids are `0..len` in some order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptVocab {
    pub domain: Domain,
    entries: Vec<Concept>,
}

impl ConceptVocab {
    /// Builds a vocabulary whose ids are the positions of `names`.
    pub fn from_names<S: Into<String>>(domain: Domain, names: impl IntoIterator<Item = S>) -> Self {
        let entries = names
            .into_iter()
            .enumerate()
            .map(|(id, name)| Concept {
                id,
                name: name.into(),
            })
            .collect();
        Self { domain, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Concept] {
        &self.entries
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.entries
            .iter()
            .find(|c| c.id == id)
            .map(|c| c.name.as_str())
    }

    /// Case-insensitive lookup by concept name.
    pub fn find(&self, name: &str) -> Option<usize> {
        let needle = name.trim().to_lowercase();
        self.entries
            .iter()
            .find(|c| c.name.to_lowercase() == needle)
            .map(|c| c.id)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for c in &self.entries {
            s.push_str(&format!("{}\t{}\n", c.id, c.name));
        }
        s
    }
}

/// Annotated positive prerequisite pairs `from → to` of one domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationSet {
    pub domain: Domain,
    pub n_concepts: usize,
    pairs: Vec<(usize, usize)>,
    /// Number of `label = 0` lines seen while loading.
    pub labeled_negatives: usize,
}

impl RelationSet {
    /// Validates `pairs` against a vocabulary of `n_concepts` concepts.
    pub fn new(
        domain: Domain,
        n_concepts: usize,
        pairs: Vec<(usize, usize)>,
    ) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for (i, &(from, to)) in pairs.iter().enumerate() {
            let line = i + 1;
            for id in [from, to] {
                if id >= n_concepts {
                    return Err(DatasetError::UnknownId { line, id });
                }
            }
            if from == to {
                return Err(DatasetError::SelfLoop { line, id: from });
            }
            if !seen.insert((from, to)) {
                return Err(DatasetError::DuplicatePair { line, from, to });
            }
        }
        Ok(Self {
            domain,
            n_concepts,
            pairs,
            labeled_negatives: 0,
        })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, from: usize, to: usize) -> bool {
        self.pairs.contains(&(from, to))
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for &(a, b) in &self.pairs {
            s.push_str(&format!("{a}\t{b}\t1\n"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resource {
    pub id: usize,
    pub domain: Domain,
    pub tokens: Vec<String>,
}

/// Lecture-slide texts of both domains. Resource ids are unique across domains.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResourceCorpus {
    documents: Vec<Resource>,
}

impl ResourceCorpus {
    pub fn new(documents: Vec<Resource>) -> Result<Self, DatasetError> {
        let mut ids = HashSet::new();
        for (i, d) in documents.iter().enumerate() {
            if !ids.insert(d.id) {
                return Err(DatasetError::DuplicateResource { line: i + 1, id: d.id });
            }
            if d.tokens.is_empty() {
                return Err(DatasetError::EmptyResource { line: i + 1, id: d.id });
            }
        }
        Ok(Self { documents })
    }

    pub fn documents(&self) -> &[Resource] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    fn extend(&mut self, other: ResourceCorpus) -> Result<(), DatasetError> {
        let mut all = std::mem::take(&mut self.documents);
        all.extend(other.documents);
        *self = ResourceCorpus::new(all)?;
        Ok(())
    }

    pub fn to_tsv(&self, domain: Domain) -> String {
        let mut s = String::new();
        for d in self.documents.iter().filter(|d| d.domain == domain) {
            s.push_str(&format!("{}\t{}\n", d.id, d.tokens.join(" ")));
        }
        s
    }
}

/// Lowercases and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// Key of one row of an embedding file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EmbeddingKey {
    SourceConcept(usize),
    TargetConcept(usize),
    Resource(usize),
}

impl EmbeddingKey {
    pub fn concept(domain: Domain, id: usize) -> Self {
        match domain {
            Domain::Source => Self::SourceConcept(id),
            Domain::Target => Self::TargetConcept(id),
        }
    }
}

impl fmt::Display for EmbeddingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SourceConcept(i) => write!(f, "S:{i}"),
            Self::TargetConcept(i) => write!(f, "T:{i}"),
            Self::Resource(i) => write!(f, "R:{i}"),
        }
    }
}

impl FromStr for EmbeddingKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (prefix, id) = s
            .split_once(':')
            .ok_or_else(|| format!("key `{s}` lacks an S:/T:/R: prefix"))?;
        let id: usize = id
            .parse()
            .map_err(|_| format!("key `{s}` has a non-integer id"))?;
        match prefix {
            "S" => Ok(Self::SourceConcept(id)),
            "T" => Ok(Self::TargetConcept(id)),
            "R" => Ok(Self::Resource(id)),
            _ => Err(format!("key `{s}` has unknown prefix `{prefix}`")),
        }
    }
}

/// Node feature vectors keyed by [`EmbeddingKey`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<EmbeddingKey, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self, DatasetError> {
        if dim == 0 {
            return Err(DatasetError::ZeroDimension);
        }
        Ok(Self {
            dim,
            vectors: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, key: EmbeddingKey) -> Option<&[f64]> {
        self.vectors.get(&key).map(Vec::as_slice)
    }

    pub fn insert(&mut self, key: EmbeddingKey, v: Vec<f64>) -> Result<(), DatasetError> {
        if v.len() != self.dim {
            return Err(DatasetError::DimensionMismatch {
                line: 0,
                expected: self.dim,
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(DatasetError::NonFinite { line: 0 });
        }
        self.vectors.insert(key, v);
        Ok(())
    }

    /// Fails with every absent key when any of `keys` is missing.
    pub fn ensure_keys(&self, keys: impl IntoIterator<Item = EmbeddingKey>) -> Result<(), DatasetError> {
        let missing: Vec<_> = keys
            .into_iter()
            .filter(|k| !self.vectors.contains_key(k))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(DatasetError::MissingKeys(missing))
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.vectors {
            s.push_str(&k.to_string());
            for x in v {
                s.push(' ');
                s.push_str(&x.to_string());
            }
            s.push('\n');
        }
        s
    }
}

fn read(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.to_owned(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(contents.as_bytes()).map_err(io_err)
}

/// Non-blank, non-comment lines with 1-based line numbers.
fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        })
}

fn parse_id(field: &str, line: usize, what: &str) -> Result<usize, DatasetError> {
    field.trim().parse().map_err(|_| DatasetError::Malformed {
        line,
        reason: format!("{what} `{field}` is not a non-negative integer"),
    })
}

pub fn parse_concepts(text: &str, domain: Domain) -> Result<ConceptVocab, DatasetError> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (line, rec) in records(text) {
        let (id, name) = rec.split_once('\t').ok_or_else(|| DatasetError::Malformed {
            line,
            reason: "expected `id<TAB>name`".into(),
        })?;
        let id = parse_id(id, line, "id")?;
        let name = name.trim();
        if name.is_empty() {
            return Err(DatasetError::EmptyName { line });
        }
        if !seen.insert(id) {
            return Err(DatasetError::DuplicateId { line, id });
        }
        entries.push(Concept {
            id,
            name: name.to_owned(),
        });
    }
    if entries.is_empty() {
        return Err(DatasetError::Empty);
    }
    if let Some(missing) = (0..entries.len()).find(|i| !seen.contains(i)) {
        return Err(DatasetError::NonContiguous { missing });
    }
    Ok(ConceptVocab { domain, entries })
}

pub fn load_concepts(path: &Path, domain: Domain) -> Result<ConceptVocab, DatasetError> {
    parse_concepts(&read(path)?, domain)
}

pub fn parse_relations(text: &str, vocab: &ConceptVocab) -> Result<RelationSet, DatasetError> {
    let n = vocab.len();
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    let mut labeled_negatives = 0;
    for (line, rec) in records(text) {
        let fields: Vec<&str> = rec.split('\t').collect();
        if fields.len() != 3 {
            return Err(DatasetError::Malformed {
                line,
                reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let from = parse_id(fields[0], line, "from")?;
        let to = parse_id(fields[1], line, "to")?;
        let label = match fields[2].trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(DatasetError::Malformed {
                    line,
                    reason: format!("label `{other}` is not 0 or 1"),
                })
            }
        };
        for id in [from, to] {
            if id >= n {
                return Err(DatasetError::UnknownId { line, id });
            }
        }
        if from == to {
            return Err(DatasetError::SelfLoop { line, id: from });
        }
        if !seen.insert((from, to)) {
            return Err(DatasetError::DuplicatePair { line, from, to });
        }
        if label {
            pairs.push((from, to));
        } else {
            labeled_negatives += 1;
        }
    }
    Ok(RelationSet {
        domain: vocab.domain,
        n_concepts: n,
        pairs,
        labeled_negatives,
    })
}

pub fn load_relations(path: &Path, vocab: &ConceptVocab) -> Result<RelationSet, DatasetError> {
    parse_relations(&read(path)?, vocab)
}

pub fn parse_resources(text: &str, domain: Domain) -> Result<ResourceCorpus, DatasetError> {
    let mut docs = Vec::new();
    for (line, rec) in records(text) {
        let (id, body) = rec.split_once('\t').ok_or_else(|| DatasetError::Malformed {
            line,
            reason: "expected `id<TAB>text`".into(),
        })?;
        let id = parse_id(id, line, "resource id")?;
        let tokens = tokenize(body);
        if tokens.is_empty() {
            return Err(DatasetError::EmptyResource { line, id });
        }
        if docs.iter().any(|d: &Resource| d.id == id) {
            return Err(DatasetError::DuplicateResource { line, id });
        }
        docs.push(Resource { id, domain, tokens });
    }
    Ok(ResourceCorpus { documents: docs })
}

pub fn load_resources(path: &Path, domain: Domain) -> Result<ResourceCorpus, DatasetError> {
    parse_resources(&read(path)?, domain)
}

pub fn parse_embeddings(text: &str, expected_dim: usize) -> Result<EmbeddingTable, DatasetError> {
    let mut table = EmbeddingTable::new(expected_dim)?;
    for (line, rec) in records(text) {
        let mut fields = rec.split_whitespace();
        let key: EmbeddingKey = fields
            .next()
            .ok_or_else(|| DatasetError::Malformed {
                line,
                reason: "missing key".into(),
            })?
            .parse()
            .map_err(|reason| DatasetError::Malformed { line, reason })?;
        let values = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| DatasetError::Malformed {
                    line,
                    reason: format!("component `{f}` is not a number"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if values.is_empty() {
            return Err(DatasetError::Malformed {
                line,
                reason: format!("key {key} has no vector"),
            });
        }
        if values.len() != expected_dim {
            return Err(DatasetError::DimensionMismatch {
                line,
                expected: expected_dim,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DatasetError::NonFinite { line });
        }
        if table.vectors.insert(key, values).is_some() {
            return Err(DatasetError::DuplicateKey { line, key });
        }
    }
    Ok(table)
}

/// Reads an embedding file. Coverage of a corpus is checked separately with
/// [`Dataset::check_embeddings`].
pub fn load_embeddings(path: &Path, expected_dim: usize) -> Result<EmbeddingTable, DatasetError> {
    parse_embeddings(&read(path)?, expected_dim)
}

/// Concepts and annotated relations of one domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainData {
    pub name: String,
    pub concepts: ConceptVocab,
    pub relations: RelationSet,
}

/// A source/target pair of domains plus the resources of both.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub source: DomainData,
    pub target: DomainData,
    pub resources: ResourceCorpus,
}

impl Dataset {
    /// Loads `<root>/<source>` and `<root>/<target>`.
    pub fn load(root: &Path, source: &str, target: &str) -> Result<Self, DatasetError> {
        let (source, src_res) = load_domain(&root.join(source), source, Domain::Source)?;
        let (target, tgt_res) = load_domain(&root.join(target), target, Domain::Target)?;
        let mut resources = src_res;
        resources.extend(tgt_res)?;
        Ok(Self {
            source,
            target,
            resources,
        })
    }

    pub fn domain(&self, domain: Domain) -> &DomainData {
        match domain {
            Domain::Source => &self.source,
            Domain::Target => &self.target,
        }
    }

    /// Every key a graph over this dataset needs.
    pub fn embedding_keys(&self) -> Vec<EmbeddingKey> {
        let mut keys = Vec::new();
        keys.extend(
            self.source
                .concepts
                .entries()
                .iter()
                .map(|c| EmbeddingKey::SourceConcept(c.id)),
        );
        keys.extend(
            self.target
                .concepts
                .entries()
                .iter()
                .map(|c| EmbeddingKey::TargetConcept(c.id)),
        );
        keys.extend(
            self.resources
                .documents()
                .iter()
                .map(|r| EmbeddingKey::Resource(r.id)),
        );
        keys
    }

    pub fn check_embeddings(&self, table: &EmbeddingTable) -> Result<(), DatasetError> {
        table.ensure_keys(self.embedding_keys())
    }

    /// Loads an embedding file and checks that it covers this dataset.
    pub fn load_embeddings(&self, path: &Path, dim: usize) -> Result<EmbeddingTable, DatasetError> {
        let table = load_embeddings(path, dim)?;
        self.check_embeddings(&table)?;
        Ok(table)
    }

    /// Writes the directory layout read by [`Dataset::load`].
    pub fn write(&self, root: &Path) -> Result<(), DatasetError> {
        for (data, domain) in [(&self.source, Domain::Source), (&self.target, Domain::Target)] {
            let dir = root.join(&data.name);
            fs::create_dir_all(&dir).map_err(|source| DatasetError::Io {
                path: dir.clone(),
                source,
            })?;
            write(&dir.join("concepts.tsv"), &data.concepts.to_tsv())?;
            write(&dir.join("relations.tsv"), &data.relations.to_tsv())?;
            write(&dir.join("resources.tsv"), &self.resources.to_tsv(domain))?;
        }
        Ok(())
    }
}

pub fn write_embeddings(path: &Path, table: &EmbeddingTable) -> Result<(), DatasetError> {
    write(path, &table.to_text())
}

fn load_domain(
    dir: &Path,
    name: &str,
    domain: Domain,
) -> Result<(DomainData, ResourceCorpus), DatasetError> {
    let concepts = load_concepts(&dir.join("concepts.tsv"), domain)?;
    let relations = load_relations(&dir.join("relations.tsv"), &concepts)?;
    let res_path = dir.join("resources.tsv");
    let resources = if res_path.exists() {
        load_resources(&res_path, domain)?
    } else {
        ResourceCorpus::default()
    };
    Ok((
        DomainData {
            name: name.to_owned(),
            concepts,
            relations,
        },
        resources,
    ))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn token_vector(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = SeededRng::new(fnv1a(token.as_bytes()) ^ seed.rotate_left(17));
    (0..dim).map(|_| rng.normal()).collect()
}

fn mean_unit(tokens: &[String], dim: usize, seed: u64) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for t in tokens {
        for (a, v) in acc.iter_mut().zip(token_vector(t, dim, seed)) {
            *a += v;
        }
    }
    let n = tokens.len().max(1) as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    let norm = crate::linalg::norm(&acc);
    if norm > 0.0 {
        acc.iter_mut().for_each(|a| *a /= norm);
    }
    acc
}

/// Deterministic hashed bag-of-tokens features, used when no embedding file
/// is supplied.
///
/// Each token maps to a Gaussian vector seeded by its hash and `seed`.
/// Concepts average their name tokens, resources their text tokens, and every
/// vector is scaled to unit norm. `dim` must be at least 2.
pub fn fallback_features(
    vocabs: &[&ConceptVocab],
    corpus: &ResourceCorpus,
    dim: usize,
    seed: u64,
) -> EmbeddingTable {
    let dim = dim.max(2);
    let mut table = EmbeddingTable {
        dim,
        vectors: BTreeMap::new(),
    };
    for vocab in vocabs {
        for c in vocab.entries() {
            let tokens = tokenize(&c.name);
            table
                .vectors
                .insert(EmbeddingKey::concept(vocab.domain, c.id), mean_unit(&tokens, dim, seed));
        }
    }
    for r in corpus.documents() {
        table
            .vectors
            .insert(EmbeddingKey::Resource(r.id), mean_unit(&r.tokens, dim, seed));
    }
    table
}
