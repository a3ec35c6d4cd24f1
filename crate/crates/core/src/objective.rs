//! Candidate scoring and the verified multi-class log-loss.

use std::rc::Rc;

use rand::Rng;

use crate::kg::{EntityId, Triple};
use crate::numerics::{NumericsError, ParamId, ParamStore, Tape, Var};
use crate::propagation::EntitySet;

/// `W3` (`[1, d]`) and `W4` (`[d, 2d]`).
#[derive(Clone, Copy, Debug)]
pub struct DecoderParams {
    pub w3: ParamId,
    pub w4: ParamId,
}

impl DecoderParams {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self, NumericsError> {
        Ok(Self {
            w3: store.add_uniform("decoder.w3", &[1, dim], rng)?,
            w4: store.add_uniform("decoder.w4", &[dim, 2 * dim], rng)?,
        })
    }
}

/// `s(e) = W3 · ReLU(W4 · (h(u) ⊕ h(e)))` for every entity, `[|V|, 1]`.
///
/// `W4` is applied as two column blocks so the `h(u)` half is computed once;
/// zero rows of `h` (unvisited entities) then all receive the same score.
pub fn score_candidates(
    tape: &mut Tape<'_>,
    h: Var,
    head: EntityId,
    p: &DecoderParams,
) -> Result<Var, NumericsError> {
    let w4 = tape.param(p.w4);
    let d = tape.value(h).cols();
    let w4_head = tape.slice_cols(w4, 0, d)?;
    let w4_cand = tape.slice_cols(w4, d, 2 * d)?;
    let hu = tape.gather(h, Rc::from(vec![head as usize]))?;
    let zu = tape.linear(hu, w4_head, None)?;
    let ze = tape.linear(h, w4_cand, None)?;
    let z = tape.add_row(ze, zu)?;
    let z = tape.relu(z);
    let w3 = tape.param(p.w3);
    tape.linear(z, w3, None)
}

/// One scored query of a batch.
#[derive(Clone, Copy, Debug)]
pub struct ScoredQuery {
    pub query: Triple,
    pub scores: Var,
    /// Whether the target is inside `V^{L2}`.
    pub verified: bool,
}

impl ScoredQuery {
    pub fn new(query: Triple, scores: Var, visited: &EntitySet) -> Self {
        Self {
            query,
            scores,
            verified: visited.contains(query.tail),
        }
    }
}

/// Keeps exactly the verified queries.
pub fn link_verify_mask(batch: &[ScoredQuery]) -> Vec<ScoredQuery> {
    batch.iter().copied().filter(|q| q.verified).collect()
}

/// `Σ logsumexp(s) − s(target)` over the batch; `None` for an empty batch.
pub fn batch_loss(
    tape: &mut Tape<'_>,
    batch: &[ScoredQuery],
) -> Result<Option<Var>, NumericsError> {
    let mut total: Option<Var> = None;
    for q in batch {
        let lse = tape.logsumexp(q.scores)?;
        let s = tape.pick(q.scores, q.query.tail as usize)?;
        let term = tape.sub(lse, s)?;
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    Ok(total)
}
