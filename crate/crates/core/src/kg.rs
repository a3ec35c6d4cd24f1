//! Knowledge-graph storage: triple-file parsing, dense vocabularies, and an
//! inverse-augmented CSR adjacency.
//!
//! Every original fact `(h, r, t)` is materialised together with its inverse
//! `(t, r + |R|, h)`. Edge ids `0..F` are the originals in file order and
//! `F..2F` their inverses in the same order, so `inverse_edge(i) = i ± F`.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

pub type EntityId = u32;
pub type RelationId = u32;
pub type EdgeId = usize;

/// Hop distance marking an unreachable entity.
pub const UNREACHABLE: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("{path}:{line}: expected 3 tab-separated fields, found {found}")]
    Parse {
        path: PathBuf,
        line: usize,
        found: usize,
    },
    #[error("{path}:{line}: relation `{relation}` is not in the training vocabulary")]
    UnknownRelation {
        path: PathBuf,
        line: usize,
        relation: String,
    },
    #[error("entity id {id} out of range for {len} entities")]
    EntityOutOfRange { id: EntityId, len: usize },
    #[error("relation id {id} out of range for {len} relations")]
    RelationOutOfRange { id: RelationId, len: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub rel: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub const fn new(head: EntityId, rel: RelationId, tail: EntityId) -> Self {
        Self { head, rel, tail }
    }
}

/// Dense id assignment in first-appearance order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_insert(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    fn numbered(prefix: &str, n: usize) -> Self {
        let mut v = Self::new();
        for i in 0..n {
            v.get_or_insert(&format!("{prefix}{i}"));
        }
        v
    }
}

/// `(|R|, |V|, |F|)` counted over original facts only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphStats {
    pub relations: usize,
    pub entities: usize,
    pub facts: usize,
}

/// Immutable inverse-augmented knowledge graph.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    num_entities: usize,
    num_relations: usize,
    triples: Vec<Triple>,
    offsets: Vec<usize>,
    adjacency: Vec<EdgeId>,
    entity_names: Vocab,
    relation_names: Arc<Vocab>,
}

impl KnowledgeGraph {
    /// Builds a graph from original facts. `num_relations` is the size of the
    /// original relation vocabulary, `|R|`; inverse ids are `r + |R|`.
    pub fn new(
        entity_names: Vocab,
        relation_names: Arc<Vocab>,
        facts: Vec<Triple>,
    ) -> Result<Self, KgError> {
        let num_entities = entity_names.len();
        let num_relations = relation_names.len();
        for t in &facts {
            for id in [t.head, t.tail] {
                if id as usize >= num_entities {
                    return Err(KgError::EntityOutOfRange {
                        id,
                        len: num_entities,
                    });
                }
            }
            if t.rel as usize >= num_relations {
                return Err(KgError::RelationOutOfRange {
                    id: t.rel,
                    len: num_relations,
                });
            }
        }
        let r = num_relations as RelationId;
        let mut triples = facts;
        let f = triples.len();
        triples.reserve(f);
        for i in 0..f {
            let t = triples[i];
            triples.push(Triple::new(t.tail, t.rel + r, t.head));
        }

        // Counting sort by head keeps edge-id order within each row.
        let mut offsets = vec![0usize; num_entities + 1];
        for t in &triples {
            offsets[t.head as usize + 1] += 1;
        }
        for i in 0..num_entities {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut adjacency = vec![0; triples.len()];
        for (id, t) in triples.iter().enumerate() {
            let slot = &mut cursor[t.head as usize];
            adjacency[*slot] = id;
            *slot += 1;
        }

        Ok(Self {
            num_entities,
            num_relations,
            triples,
            offsets,
            adjacency,
            entity_names,
            relation_names,
        })
    }

    /// Graph with synthetic names `e0..`, `r0..`; handy for tests and demos.
    pub fn from_facts(
        num_entities: usize,
        num_relations: usize,
        facts: Vec<Triple>,
    ) -> Result<Self, KgError> {
        Self::new(
            Vocab::numbered("e", num_entities),
            Arc::new(Vocab::numbered("r", num_relations)),
            facts,
        )
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    /// Size of the original relation vocabulary, `|R|`.
    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn num_facts(&self) -> usize {
        self.triples.len() / 2
    }

    pub fn num_edges(&self) -> usize {
        self.triples.len()
    }

    /// Originals followed by their inverses.
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn facts(&self) -> &[Triple] {
        &self.triples[..self.num_facts()]
    }

    pub fn edge(&self, id: EdgeId) -> Triple {
        self.triples[id]
    }

    pub fn inverse_edge(&self, id: EdgeId) -> EdgeId {
        let f = self.num_facts();
        if id < f {
            id + f
        } else {
            id - f
        }
    }

    /// Maps an original relation to its inverse and back.
    pub fn inverse_relation(&self, rel: RelationId) -> RelationId {
        let r = self.num_relations as RelationId;
        if rel < r {
            rel + r
        } else {
            rel - r
        }
    }

    pub fn entity_names(&self) -> &Vocab {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &Arc<Vocab> {
        &self.relation_names
    }

    /// Outgoing edge ids of `e` in the augmented graph, in edge-id order.
    pub fn neighbors(&self, e: EntityId) -> Result<&[EdgeId], KgError> {
        self.check_entity(e)?;
        Ok(self.out_edges(e))
    }

    /// Unchecked variant of [`neighbors`](Self::neighbors).
    #[inline]
    pub fn out_edges(&self, e: EntityId) -> &[EdgeId] {
        let e = e as usize;
        &self.adjacency[self.offsets[e]..self.offsets[e + 1]]
    }

    pub fn degree(&self, e: EntityId) -> usize {
        let e = e as usize;
        self.offsets[e + 1] - self.offsets[e]
    }

    pub fn check_entity(&self, e: EntityId) -> Result<(), KgError> {
        if (e as usize) < self.num_entities {
            Ok(())
        } else {
            Err(KgError::EntityOutOfRange {
                id: e,
                len: self.num_entities,
            })
        }
    }

    /// Edge ids of every stored copy of `t` together with their inverses.
    pub fn edges_of(&self, t: Triple) -> Vec<EdgeId> {
        if t.head as usize >= self.num_entities {
            return Vec::new();
        }
        let mut out: Vec<EdgeId> = self
            .out_edges(t.head)
            .iter()
            .copied()
            .filter(|&id| {
                let e = self.triples[id];
                e.rel == t.rel && e.tail == t.tail
            })
            .collect();
        let inverses: Vec<_> = out.iter().map(|&id| self.inverse_edge(id)).collect();
        out.extend(inverses);
        out
    }

    pub fn bfs_distances(&self, u: EntityId) -> Result<Vec<u32>, KgError> {
        self.bfs_distances_excluding(u, &[])
    }

    /// Unweighted BFS from `u` over the augmented edges, ignoring the edge
    /// ids in `excluded`. Unreachable entities get [`UNREACHABLE`].
    pub fn bfs_distances_excluding(
        &self,
        u: EntityId,
        excluded: &[EdgeId],
    ) -> Result<Vec<u32>, KgError> {
        self.check_entity(u)?;
        let mut dist = vec![UNREACHABLE; self.num_entities];
        let mut queue = VecDeque::new();
        dist[u as usize] = 0;
        queue.push_back(u);
        while let Some(e) = queue.pop_front() {
            let next = dist[e as usize] + 1;
            for &id in self.out_edges(e) {
                if excluded.contains(&id) {
                    continue;
                }
                let x = self.triples[id].tail as usize;
                if dist[x] == UNREACHABLE {
                    dist[x] = next;
                    queue.push_back(x as EntityId);
                }
            }
        }
        Ok(dist)
    }

    pub fn stats(&self) -> GraphStats {
        let relations: HashSet<RelationId> = self.facts().iter().map(|t| t.rel).collect();
        GraphStats {
            relations: relations.len(),
            entities: self.num_entities,
            facts: self.num_facts(),
        }
    }
}

pub fn graph_stats(g: &KnowledgeGraph) -> GraphStats {
    g.stats()
}

pub fn neighbors(g: &KnowledgeGraph, e: EntityId) -> Result<&[EdgeId], KgError> {
    g.neighbors(e)
}

pub fn bfs_distances(g: &KnowledgeGraph, u: EntityId) -> Result<Vec<u32>, KgError> {
    g.bfs_distances(u)
}

/// Head-to-tail hop distance of each query. With `exclude_query_edge`, the
/// query's own edges (every stored copy and its inverse) are removed from
/// the BFS so that a fact present in `g` does not trivially sit at distance 1.
pub fn query_distances(
    g: &KnowledgeGraph,
    queries: &[Triple],
    exclude_query_edge: bool,
) -> Vec<u32> {
    queries
        .iter()
        .map(|&q| {
            if q.head as usize >= g.num_entities() || q.tail as usize >= g.num_entities() {
                return UNREACHABLE;
            }
            let excluded = if exclude_query_edge {
                g.edges_of(q)
            } else {
                Vec::new()
            };
            let d = g
                .bfs_distances_excluding(q.head, &excluded)
                .expect("head checked above");
            d[q.tail as usize]
        })
        .collect()
}

/// Percentage of queries whose head-tail distance exceeds `threshold` hops
/// (unreachable counts as long-distance).
pub fn long_distance_proportion(
    g: &KnowledgeGraph,
    queries: &[Triple],
    threshold: u32,
    exclude_query_edge: bool,
) -> f64 {
    if queries.is_empty() {
        return 0.0;
    }
    let long = query_distances(g, queries, exclude_query_edge)
        .into_iter()
        .filter(|&d| d > threshold)
        .count();
    100.0 * long as f64 / queries.len() as f64
}

/// Training graph, test graph, and their query splits. The relation
/// vocabulary is shared; entity vocabularies are per graph.
#[derive(Clone, Debug)]
pub struct InductiveDataset {
    pub train_graph: KnowledgeGraph,
    pub train_queries: Vec<Triple>,
    pub valid_queries: Vec<Triple>,
    pub test_graph: KnowledgeGraph,
    pub test_queries: Vec<Triple>,
    /// Facts listed in the test directory's optional `valid.txt`; used only
    /// as known-true answers during filtered ranking.
    pub test_extra_facts: Vec<Triple>,
}

type RawTriple = (String, String, String);

fn read_triples(path: &Path) -> Result<Vec<(usize, RawTriple)>, KgError> {
    let text = fs::read_to_string(path).map_err(|source| KgError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(KgError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                found: fields.len(),
            });
        }
        out.push((
            i + 1,
            (
                fields[0].to_string(),
                fields[1].to_string(),
                fields[2].to_string(),
            ),
        ));
    }
    Ok(out)
}

fn read_optional(path: &Path) -> Result<Vec<(usize, RawTriple)>, KgError> {
    if path.exists() {
        read_triples(path)
    } else {
        Ok(Vec::new())
    }
}

fn encode(
    path: &Path,
    raw: &[(usize, RawTriple)],
    entities: &mut Vocab,
    relations: &Vocab,
) -> Result<Vec<Triple>, KgError> {
    raw.iter()
        .map(|(line, (h, r, t))| {
            let rel = relations.get(r).ok_or_else(|| KgError::UnknownRelation {
                path: path.to_path_buf(),
                line: *line,
                relation: r.clone(),
            })?;
            let head = entities.get_or_insert(h);
            let tail = entities.get_or_insert(t);
            Ok(Triple::new(head, rel, tail))
        })
        .collect()
}

/// Loads a GraIL-layout inductive split.
///
/// `train_dir` holds `train.txt` and `valid.txt`; `test_dir` holds
/// `train.txt` (the inference graph) and `test.txt`, plus an optional
/// `valid.txt`. Ids are dense in first-appearance order, files read in the
/// order just listed.
pub fn load_dataset(train_dir: &Path, test_dir: &Path) -> Result<InductiveDataset, KgError> {
    let train_path = train_dir.join("train.txt");
    let valid_path = train_dir.join("valid.txt");
    let train_raw = read_triples(&train_path)?;
    let valid_raw = read_triples(&valid_path)?;

    let mut relations = Vocab::new();
    for (_, (_, r, _)) in train_raw.iter().chain(&valid_raw) {
        relations.get_or_insert(r);
    }
    let relations = Arc::new(relations);

    let mut train_entities = Vocab::new();
    let train_facts = encode(&train_path, &train_raw, &mut train_entities, &relations)?;
    let valid_queries = encode(&valid_path, &valid_raw, &mut train_entities, &relations)?;
    let train_graph = KnowledgeGraph::new(train_entities, relations.clone(), train_facts.clone())?;

    let inf_path = test_dir.join("train.txt");
    let extra_path = test_dir.join("valid.txt");
    let test_path = test_dir.join("test.txt");
    let inf_raw = read_triples(&inf_path)?;
    let extra_raw = read_optional(&extra_path)?;
    let test_raw = read_triples(&test_path)?;
    let mut test_entities = Vocab::new();
    let inf_facts = encode(&inf_path, &inf_raw, &mut test_entities, &relations)?;
    let test_extra_facts = encode(&extra_path, &extra_raw, &mut test_entities, &relations)?;
    let test_queries = encode(&test_path, &test_raw, &mut test_entities, &relations)?;
    let test_graph = KnowledgeGraph::new(test_entities, relations, inf_facts)?;

    Ok(InductiveDataset {
        train_graph,
        train_queries: train_facts,
        valid_queries,
        test_graph,
        test_queries,
        test_extra_facts,
    })
}

/// All triple files of one directory (`train.txt`, `valid.txt`, `test.txt`,
/// whichever exist) merged into a single graph with its own vocabularies.
/// Per-directory statistics are counted over this view.
pub fn load_directory_graph(dir: &Path) -> Result<KnowledgeGraph, KgError> {
    let mut raw = Vec::new();
    let mut found = false;
    for name in ["train.txt", "valid.txt", "test.txt"] {
        let path = dir.join(name);
        if path.exists() {
            found = true;
            raw.extend(read_triples(&path)?);
        }
    }
    if !found {
        return Err(KgError::Io {
            path: dir.join("train.txt"),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no triple files"),
        });
    }
    let mut relations = Vocab::new();
    for (_, (_, r, _)) in &raw {
        relations.get_or_insert(r);
    }
    let mut entities = Vocab::new();
    let facts = encode(dir, &raw, &mut entities, &relations)?;
    KnowledgeGraph::new(entities, Arc::new(relations), facts)
}
