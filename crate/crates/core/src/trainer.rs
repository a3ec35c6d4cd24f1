//! Mini-batch training with Adam, validation-MRR early stopping, and the
//! ablation/grid drivers.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conditioning::QueryContext;
use crate::config::{Ablations, ModelConfig, GRID_NUM_STARTS, GRID_NUM_TYPES};
use crate::evaluator::{directed_queries, evaluate};
use crate::kg::{InductiveDataset, KnowledgeGraph, Triple};
use crate::model::MStar;
use crate::numerics::{adam_step, AdamConfig, Gradients, Tape};
use crate::objective::{batch_loss, ScoredQuery};
use crate::MstarError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// Mean per-query loss over retained queries (0 when none were retained).
    pub train_loss: f64,
    pub queries: usize,
    pub retained: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_mrr: f64,
    pub retained: usize,
    pub queries: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRun {
    pub config: ModelConfig,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose weights were restored.
    pub best_epoch: usize,
    pub best_valid_mrr: f64,
}

impl TrainRun {
    pub fn label(&self) -> String {
        self.config.ablations.label()
    }

    /// Flat JSON history: one array per column plus the best epoch.
    pub fn to_json(&self) -> String {
        let col = |f: fn(&EpochRecord) -> serde_json::Value| -> Vec<serde_json::Value> {
            self.history.iter().map(f).collect()
        };
        let v = serde_json::json!({
            "run": self.label(),
            "seed": self.config.seed,
            "epoch": col(|r| r.epoch.into()),
            "train_loss": col(|r| r.train_loss.into()),
            "valid_mrr": col(|r| r.valid_mrr.into()),
            "retained": col(|r| r.retained.into()),
            "queries": col(|r| r.queries.into()),
            "best_epoch": self.best_epoch,
            "best_valid_mrr": self.best_valid_mrr,
        });
        let mut s = serde_json::to_string_pretty(&v).expect("plain JSON values");
        s.push('\n');
        s
    }

    pub fn write_json(&self, path: &Path) -> Result<(), MstarError> {
        std::fs::write(path, self.to_json()).map_err(|source| MstarError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Training queries in both directions.
pub fn training_queries(ds: &InductiveDataset) -> Vec<Triple> {
    directed_queries(ds.train_graph.num_relations(), &ds.train_queries)
}

/// Loss and summed gradients of one query, or `None` when it is dropped by
/// the verification mask.
pub fn query_gradients(
    model: &MStar,
    graph: &KnowledgeGraph,
    query: Triple,
) -> Result<Option<(f64, Gradients)>, MstarError> {
    let ctx = QueryContext::for_triple(graph, query, model.config.mask_query_edge)?;
    let plan = model.plan(&ctx)?;
    // unverified queries are known before any message passing
    let link_verify = model.config.ablations.link_verify;
    if link_verify && !model.reach(&ctx, &plan).contains(query.tail) {
        return Ok(None);
    }
    let mut tape = Tape::new(&model.store);
    let trace = model.forward_planned(&mut tape, &ctx, plan)?;
    let scored = ScoredQuery::new(query, trace.scores, trace.state.final_visited());
    debug_assert!(!link_verify || scored.verified);
    let loss = batch_loss(&mut tape, &[scored])?.expect("one query");
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Err(MstarError::NonFinite(format!("loss of query {query:?}")));
    }
    let grads = tape.backward(loss)?;
    if !grads.is_finite() {
        return Err(MstarError::NonFinite(format!(
            "gradient of query {query:?}"
        )));
    }
    Ok(Some((value, grads)))
}

/// Summed loss and gradients of one batch.
#[derive(Clone, Debug)]
pub struct BatchGradients {
    pub loss: f64,
    pub grads: Gradients,
    pub retained: usize,
}

/// Accumulates the retained queries of `batch` in order.
pub fn batch_gradients(
    model: &MStar,
    graph: &KnowledgeGraph,
    batch: &[Triple],
) -> Result<BatchGradients, MstarError> {
    let mut out = BatchGradients {
        loss: 0.0,
        grads: Gradients::zeros_for(&model.store),
        retained: 0,
    };
    for &q in batch {
        if let Some((loss, g)) = query_gradients(model, graph, q)? {
            out.loss += loss;
            out.retained += 1;
            out.grads.accumulate(g);
        }
    }
    Ok(out)
}

/// One pass over `queries` in an order shuffled by `(seed, epoch)`; each
/// batch sums the gradients of its retained queries into one Adam step.
pub fn train_epoch(
    model: &mut MStar,
    graph: &KnowledgeGraph,
    queries: &[Triple],
    epoch: usize,
) -> Result<EpochStats, MstarError> {
    if queries.is_empty() {
        return Err(MstarError::EmptyTrainingSet);
    }
    let mut order: Vec<usize> = (0..queries.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(
        model.config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    order.shuffle(&mut rng);
    let adam = AdamConfig::with_lr(model.config.lr);
    let (mut loss_sum, mut retained) = (0.0, 0usize);
    for chunk in order.chunks(model.config.batch_size) {
        let batch: Vec<Triple> = chunk.iter().map(|&i| queries[i]).collect();
        let b = batch_gradients(model, graph, &batch)?;
        if b.retained > 0 {
            loss_sum += b.loss;
            retained += b.retained;
            adam_step(&mut model.store, &b.grads, &adam);
        }
    }
    Ok(EpochStats {
        train_loss: if retained == 0 {
            0.0
        } else {
            loss_sum / retained as f64
        },
        queries: queries.len(),
        retained,
    })
}

/// Validation MRR of the current parameters.
pub fn validation_mrr(model: &MStar, ds: &InductiveDataset) -> Result<f64, MstarError> {
    if ds.valid_queries.is_empty() {
        return Ok(0.0);
    }
    Ok(
        evaluate(model, &ds.train_graph, &ds.valid_queries, &ds.train_queries)?
            .metrics
            .mrr,
    )
}

/// Trains until `max_epochs` or until validation MRR has not improved for
/// more than `patience` epochs, then restores the best epoch's weights.
pub fn fit(ds: &InductiveDataset, config: &ModelConfig) -> Result<(MStar, TrainRun), MstarError> {
    fit_with(ds, config, |_| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with(
    ds: &InductiveDataset,
    config: &ModelConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(MStar, TrainRun), MstarError> {
    let mut model = MStar::new(config.clone(), ds.train_graph.num_relations())?;
    let queries = training_queries(ds);
    if queries.is_empty() {
        return Err(MstarError::EmptyTrainingSet);
    }
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, crate::numerics::ParamStore)> = None;
    for epoch in 1..=config.max_epochs {
        let stats = train_epoch(&mut model, &ds.train_graph, &queries, epoch)?;
        let valid_mrr = validation_mrr(&model, ds)?;
        let rec = EpochRecord {
            epoch,
            train_loss: stats.train_loss,
            valid_mrr,
            retained: stats.retained,
            queries: stats.queries,
        };
        on_epoch(&rec);
        history.push(rec);
        match &best {
            Some((_, mrr, _)) if valid_mrr <= *mrr => {}
            _ => best = Some((epoch, valid_mrr, model.store.clone())),
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.0);
        if epoch - best_epoch > config.patience {
            break;
        }
    }
    let (best_epoch, best_valid_mrr) = match best {
        Some((e, mrr, store)) => {
            model.store = store;
            (e, mrr)
        }
        None => (0, 0.0),
    };
    Ok((
        model,
        TrainRun {
            config: config.clone(),
            history,
            best_epoch,
            best_valid_mrr,
        },
    ))
}

/// Fits every `(n, m)` pair and keeps the run with the highest validation
/// MRR (earliest pair on ties).
pub fn grid_fit(
    ds: &InductiveDataset,
    base: &ModelConfig,
    starts: &[usize],
    types: &[usize],
) -> Result<(MStar, TrainRun), MstarError> {
    let mut best: Option<(MStar, TrainRun)> = None;
    for &n in starts {
        for &m in types {
            let cfg = ModelConfig {
                num_starts: n,
                num_types: m,
                ..base.clone()
            };
            let (model, run) = fit(ds, &cfg)?;
            if best
                .as_ref()
                .is_none_or(|(_, b)| run.best_valid_mrr > b.best_valid_mrr)
            {
                best = Some((model, run));
            }
        }
    }
    best.ok_or(MstarError::EmptyTrainingSet)
}

/// The full search grid over starting-entity counts and type counts.
pub fn default_grid() -> (Vec<usize>, Vec<usize>) {
    (GRID_NUM_STARTS.to_vec(), GRID_NUM_TYPES.to_vec())
}

/// Full model, the three component ablations, and the two non-learned
/// selection modes.
pub fn ablation_suite() -> Vec<Ablations> {
    use crate::config::SelectionMode;
    vec![
        Ablations::full(),
        Ablations::without_selection(),
        Ablations::without_highway(),
        Ablations::without_link_verify(),
        Ablations::with_mode(SelectionMode::Random),
        Ablations::with_mode(SelectionMode::Degree),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{KnowledgeGraph, Triple};

    fn toy() -> InductiveDataset {
        // two relation patterns on a ring plus a chord, so targets are
        // reachable and validation is not trivial
        let facts: Vec<Triple> = (0..8u32)
            .map(|i| Triple::new(i, i % 2, (i + 1) % 8))
            .chain([Triple::new(0, 0, 4)])
            .collect();
        let g = KnowledgeGraph::from_facts(8, 2, facts.clone()).unwrap();
        InductiveDataset {
            train_graph: g.clone(),
            train_queries: facts,
            valid_queries: vec![Triple::new(2, 0, 4), Triple::new(5, 1, 7)],
            test_graph: g,
            test_queries: vec![Triple::new(1, 1, 3)],
            test_extra_facts: Vec::new(),
        }
    }

    fn cfg() -> ModelConfig {
        ModelConfig {
            dim: 4,
            attn_dim: 2,
            layers: 2,
            num_starts: 2,
            num_types: 2,
            batch_size: 4,
            max_epochs: 3,
            lr: 0.01,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn deterministic_history() {
        let ds = toy();
        let (_, a) = fit(&ds, &cfg()).unwrap();
        let (_, b) = fit(&ds, &cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json(), b.to_json());
        assert!(a.history.iter().all(|r| r.train_loss.is_finite()));
    }

    #[test]
    fn max_epochs_one() {
        let ds = toy();
        let (_, run) = fit(
            &ds,
            &ModelConfig {
                max_epochs: 1,
                patience: 0,
                ..cfg()
            },
        )
        .unwrap();
        assert_eq!(run.history.len(), 1);
        assert_eq!(run.best_epoch, 1);
    }

    #[test]
    fn restored_weights_reproduce_best_mrr() {
        let ds = toy();
        let (model, run) = fit(
            &ds,
            &ModelConfig {
                max_epochs: 4,
                ..cfg()
            },
        )
        .unwrap();
        assert_eq!(validation_mrr(&model, &ds).unwrap(), run.best_valid_mrr);
        let best = run
            .history
            .iter()
            .map(|r| r.valid_mrr)
            .fold(f64::MIN, f64::max);
        assert_eq!(best, run.best_valid_mrr);
    }

    #[test]
    fn link_verify_off_keeps_every_query() {
        let ds = toy();
        let mut c = cfg();
        c.ablations = Ablations::without_link_verify();
        c.max_epochs = 1;
        let (_, run) = fit(&ds, &c).unwrap();
        assert_eq!(run.history[0].retained, run.history[0].queries);
    }

    #[test]
    fn empty_training_set() {
        let mut ds = toy();
        ds.train_queries.clear();
        assert!(matches!(
            fit(&ds, &cfg()),
            Err(MstarError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn suite_labels() {
        let labels: Vec<_> = ablation_suite().iter().map(|a| a.label()).collect();
        assert_eq!(
            labels,
            [
                "full",
                "no-selection",
                "no-highway",
                "no-linkverify",
                "random",
                "degree"
            ]
        );
    }
}
