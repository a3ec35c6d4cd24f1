//! End-to-end fit on a synthetic rule: `skip(x, z)` holds exactly when
//! `next(x, y)` and `next(y, z)`. The test graph uses fresh entities.

use mstar::evaluator::evaluate;
use mstar::kg::KnowledgeGraph;
use mstar::trainer::fit;
use mstar::{InductiveDataset, MStar, ModelConfig, Triple};

const NEXT: u32 = 0;
const SKIP: u32 = 1;

/// Facts of an `n`-ring and the held-out `skip` facts (every `stride`-th).
fn ring(n: u32, stride: u32) -> (Vec<Triple>, Vec<Triple>) {
    let mut facts = Vec::new();
    let mut held = Vec::new();
    for i in 0..n {
        facts.push(Triple::new(i, NEXT, (i + 1) % n));
        let s = Triple::new(i, SKIP, (i + 2) % n);
        if i % stride == 0 {
            held.push(s);
        } else {
            facts.push(s);
        }
    }
    (facts, held)
}

fn dataset() -> InductiveDataset {
    let (train_facts, held) = ring(16, 4);
    let (valid, train_rest): (Vec<_>, Vec<_>) = held.into_iter().partition(|t| t.head % 8 == 0);
    let mut train_queries = train_facts;
    train_queries.extend(train_rest);
    let (test_facts, test_queries) = ring(12, 3);
    InductiveDataset {
        train_graph: KnowledgeGraph::from_facts(16, 2, train_queries.clone()).unwrap(),
        train_queries,
        valid_queries: valid,
        test_graph: KnowledgeGraph::from_facts(12, 2, test_facts).unwrap(),
        test_queries,
        test_extra_facts: Vec::new(),
    }
}

#[test]
fn training_beats_initialisation_on_unseen_entities() {
    let ds = dataset();
    let cfg = ModelConfig {
        dim: 8,
        attn_dim: 4,
        pre_layers: 2,
        layers: 3,
        num_starts: 2,
        num_types: 2,
        batch_size: 8,
        max_epochs: 30,
        patience: 30,
        lr: 1e-2,
        ..ModelConfig::default()
    };
    let untrained = MStar::new(cfg.clone(), 2).unwrap();
    let before = evaluate(&untrained, &ds.test_graph, &ds.test_queries, &[]).unwrap();
    let (model, run) = fit(&ds, &cfg).unwrap();
    let after = evaluate(&model, &ds.test_graph, &ds.test_queries, &[]).unwrap();
    assert!(run.history.len() <= 30);
    assert!(
        after.metrics.mrr > before.metrics.mrr + 0.2,
        "test mrr {} -> {}",
        before.metrics.mrr,
        after.metrics.mrr
    );
    let first = run.history.first().unwrap().train_loss;
    let last = run.history.last().unwrap().train_loss;
    assert!(last < first, "train loss {first} -> {last}");
}
