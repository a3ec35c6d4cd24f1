//! Browser bindings. Every export takes plain strings and numbers and
//! returns a JSON document; errors surface as JS exceptions.

use std::collections::HashSet;
use std::sync::Arc;

use mstar::conditioning::QueryContext;
use mstar::evaluator::{directed_queries, filtered_rank, reciprocal};
use mstar::kg::{EntityId, Vocab};
use mstar::numerics::Tape;
use mstar::propagation::{expand_frontier_in, EntitySet};
use mstar::selection::{degree_scores, select_starting};
use mstar::trainer::train_epoch;
use mstar::{KnowledgeGraph, MStar, ModelConfig, SelectionMode, Triple};
use serde_json::{json, Value};
use thiserror::Error;
use wasm_bindgen::prelude::*;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("line {0}: expected `head relation tail`")]
    Line(usize),
    #[error("graph has no facts")]
    Empty,
    #[error("unknown entity `{0}`")]
    Entity(String),
    #[error("unknown relation `{0}`")]
    Relation(String),
    #[error("`{0}` is not a number")]
    Number(String),
    #[error(transparent)]
    Model(#[from] mstar::MstarError),
}

impl From<mstar::KgError> for DemoError {
    fn from(e: mstar::KgError) -> Self {
        Self::Model(e.into())
    }
}

/// Whitespace-separated `head relation tail` lines; `#` starts a comment.
pub struct ToyGraph(KnowledgeGraph);

impl ToyGraph {
    pub fn parse(text: &str) -> Result<Self, DemoError> {
        let mut entities = Vocab::new();
        let mut relations = Vocab::new();
        let mut raw = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("");
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                [] => {}
                [h, r, t] => raw.push((*h, *r, *t)),
                _ => return Err(DemoError::Line(i + 1)),
            }
        }
        if raw.is_empty() {
            return Err(DemoError::Empty);
        }
        let facts = raw
            .iter()
            .map(|(h, r, t)| {
                let rel = relations.get_or_insert(r);
                Triple::new(entities.get_or_insert(h), rel, entities.get_or_insert(t))
            })
            .collect();
        Ok(Self(KnowledgeGraph::new(
            entities,
            Arc::new(relations),
            facts,
        )?))
    }

    fn entity(&self, name: &str) -> Result<EntityId, DemoError> {
        self.0
            .entity_names()
            .get(name)
            .ok_or_else(|| DemoError::Entity(name.to_string()))
    }

    fn relation(&self, name: &str) -> Result<u32, DemoError> {
        self.0
            .relation_names()
            .get(name)
            .ok_or_else(|| DemoError::Relation(name.to_string()))
    }

    fn names(&self) -> Vec<&str> {
        let v = self.0.entity_names();
        (0..v.len() as u32)
            .map(|i| v.name(i).unwrap_or("?"))
            .collect()
    }

    fn edges(&self) -> Vec<Value> {
        let rels = self.0.relation_names();
        self.0
            .facts()
            .iter()
            .map(|t| json!([t.head, t.tail, rels.name(t.rel).unwrap_or("?")]))
            .collect()
    }
}

fn layers_from(g: &KnowledgeGraph, start: &[EntityId], layers: usize) -> Vec<Vec<EntityId>> {
    let mut set = EntitySet::from_ids(g.num_entities(), start);
    let mut out = vec![set.iter().collect::<Vec<_>>()];
    for _ in 0..layers {
        set = expand_frontier_in(g, &set);
        out.push(set.iter().collect());
    }
    out
}

/// Visited sets per layer from the head alone and from the head plus the
/// `n` highest-degree entities.
pub fn frontiers(edges: &str, head: &str, n: usize, layers: usize) -> Result<String, DemoError> {
    let g = ToyGraph::parse(edges)?;
    let u = g.entity(head)?;
    let starts = select_starting(&degree_scores(&g.0), u, n, SelectionMode::Degree).starting_set;
    let doc = json!({
        "names": g.names(),
        "edges": g.edges(),
        "head": u,
        "starting": starts,
        "single": layers_from(&g.0, &[u], layers),
        "multi": layers_from(&g.0, &starts, layers),
    });
    Ok(doc.to_string())
}

fn numbers(list: &str) -> Result<Vec<f64>, DemoError> {
    list.split([',', ' ', '\n', '\t'])
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| DemoError::Number(s.to_string())))
        .collect()
}

/// Filtered rank of `target` among `scores` with ties broken to the mean
/// position; `filtered` lists indices of other known answers.
pub fn tie_rank(scores: &str, target: usize, filtered: &str) -> Result<String, DemoError> {
    let scores = numbers(scores)?;
    let known: HashSet<EntityId> = numbers(filtered)?
        .into_iter()
        .map(|x| x as EntityId)
        .collect();
    let rank = filtered_rank(&scores, target as EntityId, &known)?;
    let doc = json!({
        "rank": format!("{rank}"),
        "value": *rank.numer() as f64 / *rank.denom() as f64,
        "reciprocal": reciprocal(rank),
    });
    Ok(doc.to_string())
}

/// Trains a small model on the graph's own facts for `epochs` epochs and
/// scores every entity as the answer to `(head, relation, ?)`.
pub fn score_query(
    edges: &str,
    head: &str,
    relation: &str,
    epochs: usize,
    seed: u32,
) -> Result<String, DemoError> {
    let g = ToyGraph::parse(edges)?;
    let u = g.entity(head)?;
    let q = g.relation(relation)?;
    let cfg = ModelConfig {
        dim: 8,
        attn_dim: 4,
        pre_layers: 2,
        layers: 3,
        num_starts: 2,
        num_types: 2,
        batch_size: 8,
        lr: 1e-2,
        seed: seed.into(),
        ..ModelConfig::default()
    };
    let mut model = MStar::new(cfg, g.0.num_relations())?;
    let queries = directed_queries(g.0.num_relations(), g.0.facts());
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        losses.push(train_epoch(&mut model, &g.0, &queries, epoch)?.train_loss);
    }
    let ctx = QueryContext::new(&g.0, u, q)?;
    let mut tape = Tape::new(&model.store);
    let trace = model.forward(&mut tape, &ctx)?;
    let scores = tape.value(trace.scores).data().to_vec();
    let doc = json!({
        "names": g.names(),
        "edges": g.edges(),
        "head": u,
        "scores": scores,
        "starting": trace.selection.starting_set,
        "types": trace.types,
        "visited": trace.state.final_visited().iter().collect::<Vec<_>>(),
        "losses": losses,
    });
    Ok(doc.to_string())
}

fn js(r: Result<String, DemoError>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = frontiers)]
pub fn frontiers_js(edges: &str, head: &str, n: usize, layers: usize) -> Result<String, JsValue> {
    js(frontiers(edges, head, n, layers))
}

#[wasm_bindgen(js_name = tieRank)]
pub fn tie_rank_js(scores: &str, target: usize, filtered: &str) -> Result<String, JsValue> {
    js(tie_rank(scores, target, filtered))
}

#[wasm_bindgen(js_name = scoreQuery)]
pub fn score_query_js(
    edges: &str,
    head: &str,
    relation: &str,
    epochs: usize,
    seed: u32,
) -> Result<String, JsValue> {
    js(score_query(edges, head, relation, epochs, seed))
}
