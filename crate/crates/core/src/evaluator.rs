//! Filtered ranking with average-rank ties, MRR/Hits@k, and per-distance
//! breakdowns.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use num_rational::Ratio;

use crate::conditioning::QueryContext;
use crate::kg::{query_distances, EntityId, KnowledgeGraph, RelationId, Triple, UNREACHABLE};
use crate::model::MStar;
use crate::MstarError;

pub type Rank = Ratio<u64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RankRecord {
    /// The tail query actually ranked; head queries appear as
    /// `(tail, inverse relation, head)`.
    pub query: Triple,
    pub rank: Rank,
    /// Head-to-target hops with the query's own edges hidden.
    pub distance: u32,
}

/// `#{s > s_t} + (#{s = s_t} + 1) / 2` over the candidates left after
/// removing `known_true` (the target itself is never removed).
pub fn filtered_rank(
    scores: &[f64],
    target: EntityId,
    known_true: &HashSet<EntityId>,
) -> Result<Rank, MstarError> {
    let t = target as usize;
    if t >= scores.len() {
        return Err(crate::kg::KgError::EntityOutOfRange {
            id: target,
            len: scores.len(),
        }
        .into());
    }
    let st = scores[t];
    let (mut greater, mut equal) = (0u64, 0u64);
    for (e, &s) in scores.iter().enumerate() {
        if e == t || known_true.contains(&(e as EntityId)) {
            continue;
        }
        if s > st {
            greater += 1;
        } else if s == st {
            equal += 1;
        }
    }
    // the target ties with itself
    Ok(Rank::from_integer(greater) + Rank::new(equal + 2, 2))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub mrr: f64,
    pub hits: f64,
    pub k: u64,
    pub count: usize,
}

pub fn reciprocal(rank: Rank) -> f64 {
    *rank.denom() as f64 / *rank.numer() as f64
}

/// Mean reciprocal rank and the fraction of ranks `≤ k`.
pub fn metrics(records: &[RankRecord], k: u64) -> Result<Metrics, MstarError> {
    if records.is_empty() {
        return Err(MstarError::EmptyRecords);
    }
    let n = records.len() as f64;
    let mrr = records.iter().map(|r| reciprocal(r.rank)).sum::<f64>() / n;
    let hits = records
        .iter()
        .filter(|r| r.rank <= Rank::from_integer(k))
        .count() as f64
        / n;
    Ok(Metrics {
        mrr,
        hits,
        k,
        count: records.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bucket {
    pub label: String,
    pub count: usize,
    /// Percentage of all records.
    pub proportion: f64,
    pub hits10: f64,
    pub mrr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceReport {
    /// One bucket per exact distance present, ascending, then `inf`.
    pub fine: Vec<Bucket>,
    /// `[1,4)`, `[4,7)`, `[7,max]` and `inf` (distance 0 falls in the first).
    pub coarse: Vec<Bucket>,
}

fn bucket(label: String, members: &[RankRecord], total: usize) -> Bucket {
    let (hits10, mrr) = match metrics(members, 10) {
        Ok(m) => (m.hits, m.mrr),
        Err(_) => (0.0, 0.0),
    };
    Bucket {
        label,
        count: members.len(),
        proportion: if total == 0 {
            0.0
        } else {
            100.0 * members.len() as f64 / total as f64
        },
        hits10,
        mrr,
    }
}

pub fn distance_label(d: u32) -> String {
    if d == UNREACHABLE {
        "inf".into()
    } else {
        d.to_string()
    }
}

pub fn per_distance_report(records: &[RankRecord]) -> DistanceReport {
    let total = records.len();
    let mut distances: Vec<u32> = records.iter().map(|r| r.distance).collect();
    distances.sort_unstable();
    distances.dedup();
    let fine = distances
        .iter()
        .map(|&d| {
            let members: Vec<_> = records
                .iter()
                .copied()
                .filter(|r| r.distance == d)
                .collect();
            bucket(distance_label(d), &members, total)
        })
        .collect();
    let ranges: [(&str, u32, u32); 4] = [
        ("[1,4)", 0, 3),
        ("[4,7)", 4, 6),
        ("[7,max]", 7, UNREACHABLE - 1),
        ("inf", UNREACHABLE, UNREACHABLE),
    ];
    let coarse = ranges
        .iter()
        .map(|&(label, lo, hi)| {
            let members: Vec<_> = records
                .iter()
                .copied()
                .filter(|r| r.distance >= lo && r.distance <= hi)
                .collect();
            bucket(label.into(), &members, total)
        })
        .collect();
    DistanceReport { fine, coarse }
}

/// Distance-only records, for analysing a split without a model.
pub fn distance_records(
    g: &KnowledgeGraph,
    queries: &[Triple],
    exclude_query_edge: bool,
) -> Vec<RankRecord> {
    queries
        .iter()
        .zip(query_distances(g, queries, exclude_query_edge))
        .map(|(&query, distance)| RankRecord {
            query,
            rank: Rank::from_integer(1),
            distance,
        })
        .collect()
}

/// Known answers of `(head, rel, ?)` over both directions of every triple.
#[derive(Clone, Debug, Default)]
pub struct FilterIndex {
    answers: HashMap<(EntityId, RelationId), HashSet<EntityId>>,
}

impl FilterIndex {
    pub fn new<'a>(num_relations: usize, triples: impl IntoIterator<Item = &'a Triple>) -> Self {
        let mut answers: HashMap<(EntityId, RelationId), HashSet<EntityId>> = HashMap::new();
        let r = num_relations as RelationId;
        for t in triples {
            answers.entry((t.head, t.rel)).or_default().insert(t.tail);
            answers
                .entry((t.tail, t.rel + r))
                .or_default()
                .insert(t.head);
        }
        Self { answers }
    }

    /// Known tails of `(head, rel, ?)` other than `target`.
    pub fn known(&self, head: EntityId, rel: RelationId, target: EntityId) -> HashSet<EntityId> {
        let mut s = self.answers.get(&(head, rel)).cloned().unwrap_or_default();
        s.remove(&target);
        s
    }
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub records: Vec<RankRecord>,
    pub metrics: Metrics,
    pub distances: DistanceReport,
}

/// Both directions of every query as tail queries, in query order.
pub fn directed_queries(num_relations: usize, queries: &[Triple]) -> Vec<Triple> {
    let r = num_relations as RelationId;
    queries
        .iter()
        .flat_map(|t| [*t, Triple::new(t.tail, t.rel + r, t.head)])
        .collect()
}

/// Ranks every query in both directions against all entities of `graph`,
/// filtering the graph's facts, the queries themselves and `extra_known`.
pub fn evaluate(
    model: &MStar,
    graph: &KnowledgeGraph,
    queries: &[Triple],
    extra_known: &[Triple],
) -> Result<EvalReport, MstarError> {
    if graph.num_relations() != model.num_relations() {
        return Err(MstarError::VocabularyMismatch {
            model: model.num_relations(),
            graph: graph.num_relations(),
        });
    }
    let filter = FilterIndex::new(
        graph.num_relations(),
        graph.facts().iter().chain(queries).chain(extra_known),
    );
    let directed = directed_queries(graph.num_relations(), queries);
    let distances = query_distances(graph, &directed, true);
    let mut records = Vec::with_capacity(directed.len());
    for (q, distance) in directed.into_iter().zip(distances) {
        let ctx = QueryContext::new(graph, q.head, q.rel)?;
        graph.check_entity(q.tail)?;
        let scores = model.score(&ctx)?;
        let known = filter.known(q.head, q.rel, q.tail);
        records.push(RankRecord {
            query: q,
            rank: filtered_rank(&scores, q.tail, &known)?,
            distance,
        });
    }
    let m = metrics(&records, 10)?;
    let distances = per_distance_report(&records);
    Ok(EvalReport {
        records,
        metrics: m,
        distances,
    })
}

/// Tab-separated bucket table with columns distance, proportion, hits@10, mrr.
pub fn render_buckets(buckets: &[Bucket]) -> String {
    let mut out = String::from("distance\tproportion\thits@10\tmrr\n");
    for b in buckets {
        let _ = writeln!(
            out,
            "{}\t{:.2}\t{:.6}\t{:.6}",
            b.label, b.proportion, b.hits10, b.mrr
        );
    }
    out
}

/// Key/value summary followed by the fine and coarse bucket tables.
pub fn render_report(report: &EvalReport) -> String {
    let m = &report.metrics;
    let mut out = String::new();
    let _ = writeln!(out, "records\t{}", m.count);
    let _ = writeln!(out, "mrr\t{:.6}", m.mrr);
    let _ = writeln!(out, "hits@{}\t{:.6}", m.k, m.hits);
    out.push_str("\n# per distance\n");
    out.push_str(&render_buckets(&report.distances.fine));
    out.push_str("\n# coarse\n");
    out.push_str(&render_buckets(&report.distances.coarse));
    out
}
