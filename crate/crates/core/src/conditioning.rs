//! Query conditioning: the `(u, q)` context and the query-conditioned
//! relation transform `r̂_q = W_r q + b_r` shared by every propagation stage.

use std::rc::Rc;

use rand::Rng;

use crate::kg::{EdgeId, EntityId, KgError, KnowledgeGraph, RelationId, Triple};
use crate::numerics::{NumericsError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::MstarError;

pub use crate::config::ModelConfig;

/// Layout of relation ids seen by the encoder:
/// `[0, R)` originals, `[R, 2R)` inverses, `[2R, 2R + m)` highway types and,
/// when enabled, one identity relation after them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RelationSpace {
    pub base: usize,
    pub num_types: usize,
    pub self_loop: bool,
}

impl RelationSpace {
    pub fn total(&self) -> usize {
        2 * self.base + self.num_types + usize::from(self.self_loop)
    }

    /// Relation id of highway type `t` (0-based; type `t` is `r′_{t+1}`).
    pub fn highway(&self, t: usize) -> RelationId {
        debug_assert!(t < self.num_types);
        (2 * self.base + t) as RelationId
    }

    pub fn identity(&self) -> Option<RelationId> {
        self.self_loop
            .then_some((2 * self.base + self.num_types) as RelationId)
    }
}

/// A single query `(head, query_rel, ?)` against one graph.
#[derive(Clone, Debug)]
pub struct QueryContext<'g> {
    pub graph: &'g KnowledgeGraph,
    pub head: EntityId,
    pub query_rel: RelationId,
    /// Edges hidden from this query's propagation (sorted).
    pub excluded: Vec<EdgeId>,
}

impl<'g> QueryContext<'g> {
    pub fn new(
        graph: &'g KnowledgeGraph,
        head: EntityId,
        query_rel: RelationId,
    ) -> Result<Self, KgError> {
        graph.check_entity(head)?;
        if query_rel as usize >= 2 * graph.num_relations() {
            return Err(KgError::RelationOutOfRange {
                id: query_rel,
                len: 2 * graph.num_relations(),
            });
        }
        Ok(Self {
            graph,
            head,
            query_rel,
            excluded: Vec::new(),
        })
    }

    /// Context for the tail query of `t`, hiding `t`'s own edges when
    /// `hide_fact` is set.
    pub fn for_triple(
        graph: &'g KnowledgeGraph,
        t: Triple,
        hide_fact: bool,
    ) -> Result<Self, KgError> {
        let mut ctx = Self::new(graph, t.head, t.rel)?;
        if hide_fact {
            let original = if (t.rel as usize) < graph.num_relations() {
                t
            } else {
                Triple::new(t.tail, graph.inverse_relation(t.rel), t.head)
            };
            let mut ex = graph.edges_of(original);
            ex.sort_unstable();
            ctx.excluded = ex;
        }
        Ok(ctx)
    }

    #[inline]
    pub fn is_excluded(&self, edge: EdgeId) -> bool {
        !self.excluded.is_empty() && self.excluded.binary_search(&edge).is_ok()
    }
}

/// Parameters of the relation transform: query embeddings `q`, per-relation
/// matrices `W_r` (`d × d`) and biases `b_r`.
#[derive(Clone, Copy, Debug)]
pub struct RelationEncoder {
    pub space: RelationSpace,
    pub dim: usize,
    /// `[relations, d]`
    pub q_table: ParamId,
    /// `[relations, d, d]`
    pub weights: ParamId,
    /// `[relations, d]`
    pub biases: ParamId,
}

impl RelationEncoder {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        space: RelationSpace,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self, NumericsError> {
        let n = space.total();
        Ok(Self {
            space,
            dim,
            q_table: store.add_uniform(format!("{prefix}.query"), &[n, dim], rng)?,
            weights: store.add_uniform(format!("{prefix}.weight"), &[n, dim, dim], rng)?,
            biases: store.add_zeros(format!("{prefix}.bias"), &[n, dim])?,
        })
    }

    fn check(&self, store: &ParamStore, r: RelationId) -> Result<(), MstarError> {
        let n = store.tensor(self.q_table).rows();
        if (r as usize) < n {
            Ok(())
        } else {
            Err(KgError::RelationOutOfRange { id: r, len: n }.into())
        }
    }

    /// Query embedding row `q` on the tape, `[1, d]`.
    pub fn query_embedding(&self, tape: &mut Tape<'_>, q: RelationId) -> Result<Var, MstarError> {
        self.check(tape.store(), q)?;
        let table = tape.param(self.q_table);
        Ok(tape.gather(table, Rc::from(vec![q as usize]))?)
    }

    /// `r̂_q` for every relation id at once, `[relations, d]`.
    pub fn all_relations(&self, tape: &mut Tape<'_>, q_emb: Var) -> Result<Var, MstarError> {
        let n = self.space.total();
        let w = tape.param(self.weights);
        let b = tape.param(self.biases);
        let flat = tape.linear(q_emb, w, None)?;
        let stacked = tape.reshape(flat, &[n, self.dim])?;
        Ok(tape.add(stacked, b)?)
    }

    /// Untaped `r̂_q` table for stages that never receive gradients.
    pub fn all_relations_plain(
        &self,
        store: &ParamStore,
        q: RelationId,
    ) -> Result<Tensor, MstarError> {
        self.check(store, q)?;
        let d = self.dim;
        let q_emb = store.tensor(self.q_table).row(q as usize);
        let w = store.tensor(self.weights);
        let b = store.tensor(self.biases);
        let n = self.space.total();
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            for i in 0..d {
                let row = &w.data()[(r * d + i) * d..(r * d + i + 1) * d];
                out[r * d + i] =
                    row.iter().zip(q_emb).map(|(a, b)| a * b).sum::<f64>() + b.row(r)[i];
            }
        }
        Ok(Tensor::matrix(n, d, out)?)
    }
}

/// `r̂_q = W_r q + b_r` for a single relation, `[1, d]`.
pub fn conditional_relation_embedding(
    tape: &mut Tape<'_>,
    enc: &RelationEncoder,
    r: RelationId,
    q: RelationId,
) -> Result<Var, MstarError> {
    enc.check(tape.store(), r)?;
    let q_emb = enc.query_embedding(tape, q)?;
    let all = enc.all_relations(tape, q_emb)?;
    Ok(tape.gather(all, Rc::from(vec![r as usize]))?)
}
