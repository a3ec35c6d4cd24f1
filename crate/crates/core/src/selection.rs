//! Starting-entity selection: importance scores `α`, the top-`n` cut, and
//! the random/degree scoring variants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::SelectionMode;
use crate::kg::{EntityId, KnowledgeGraph, RelationId};
use crate::numerics::{NumericsError, ParamId, ParamStore};
use crate::pre_embed::PreEmbeddings;

/// `W1` (`[1, d]`) and `W2` (`[d, 3d]`) of the importance scorer.
#[derive(Clone, Copy, Debug)]
pub struct SelectionParams {
    pub w1: ParamId,
    pub w2: ParamId,
}

impl SelectionParams {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self, NumericsError> {
        Ok(Self {
            w1: store.add_uniform("select.w1", &[1, dim], rng)?,
            w2: store.add_uniform("select.w2", &[dim, 3 * dim], rng)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    pub scores: Vec<f64>,
    /// `{u} ∪ top-n`, ascending by id.
    pub starting_set: Vec<EntityId>,
    pub mode: SelectionMode,
}

/// `α(e) = W1 · ReLU(W2 · (h_pre(e) ⊕ h_pre(u) ⊕ q))` for every entity.
pub fn importance_scores(
    store: &ParamStore,
    params: &SelectionParams,
    pre: &PreEmbeddings,
    head: EntityId,
    q_emb: &[f64],
) -> Result<Vec<f64>, NumericsError> {
    let w1 = store.tensor(params.w1);
    let w2 = store.tensor(params.w2);
    let d = pre.values.cols();
    if w2.cols() != 3 * d || q_emb.len() != d || w1.cols() != w2.rows() {
        return Err(NumericsError::ShapeMismatch {
            op: "importance_scores",
            left: w2.shape().to_vec(),
            right: vec![pre.values.rows(), d],
        });
    }
    let hidden = w2.rows();
    // The `h_pre(u) ⊕ q` half of every pre-activation is shared by all entities.
    let shared: Vec<f64> = (0..hidden)
        .map(|j| {
            let row = w2.row(j);
            let hu = pre.row(head as usize);
            (0..d)
                .map(|k| row[d + k] * hu[k] + row[2 * d + k] * q_emb[k])
                .sum()
        })
        .collect();
    let w1 = w1.row(0);
    Ok((0..pre.values.rows())
        .map(|e| {
            let he = pre.row(e);
            (0..hidden)
                .map(|j| {
                    let row = w2.row(j);
                    let z = shared[j] + (0..d).map(|k| row[k] * he[k]).sum::<f64>();
                    w1[j] * z.max(0.0)
                })
                .sum()
        })
        .collect())
}

/// `{head} ∪` the `n` highest-scoring entities, ties broken by ascending id.
pub fn select_starting(
    scores: &[f64],
    head: EntityId,
    n: usize,
    mode: SelectionMode,
) -> SelectionResult {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut set: Vec<EntityId> = order.into_iter().take(n).map(|e| e as EntityId).collect();
    if !set.contains(&head) {
        set.push(head);
    }
    set.sort_unstable();
    SelectionResult {
        scores: scores.to_vec(),
        starting_set: set,
        mode,
    }
}

/// Query-independent out-degree scores on the augmented graph.
pub fn degree_scores(g: &KnowledgeGraph) -> Vec<f64> {
    (0..g.num_entities())
        .map(|e| g.degree(e as EntityId) as f64)
        .collect()
}

/// Uniform `[0, 1)` scores from a seeded generator.
pub fn random_scores(num_entities: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..num_entities).map(|_| rng.random::<f64>()).collect()
}

/// Per-query seed for random selection, mixing the run seed with the query.
pub fn query_seed(seed: u64, head: EntityId, rel: RelationId) -> u64 {
    let mut x = seed ^ ((head as u64) << 32 | rel as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Scores of a non-learned mode; `None` for [`SelectionMode::Learned`].
pub fn variant_scores(mode: SelectionMode, g: &KnowledgeGraph, seed: u64) -> Option<Vec<f64>> {
    match mode {
        SelectionMode::Learned => None,
        SelectionMode::Random => Some(random_scores(g.num_entities(), seed)),
        SelectionMode::Degree => Some(degree_scores(g)),
    }
}
