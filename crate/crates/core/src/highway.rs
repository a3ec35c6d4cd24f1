//! Highway layer: argmax typing of starting entities, shortcut edges from
//! the head, and the conditional initialization `g` of progressive
//! propagation.
//!
//! Types are 0-based here; type `t` corresponds to highway relation `r′_{t+1}`.

use std::rc::Rc;

use rand::Rng;

use crate::conditioning::{QueryContext, RelationSpace};
use crate::kg::{EntityId, Triple};
use crate::numerics::{NumericsError, ParamId, ParamStore, ReduceMode, Tape, Var};
use crate::pre_embed::PreEmbeddings;

/// Typing matrix `W_t` (`[m, d]`) and the shared head embedding (`[1, d]`).
#[derive(Clone, Copy, Debug)]
pub struct HighwayParams {
    pub types: ParamId,
    pub head: ParamId,
}

impl HighwayParams {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        dim: usize,
        num_types: usize,
        rng: &mut R,
    ) -> Result<Self, NumericsError> {
        Ok(Self {
            types: store.add_uniform("highway.types", &[num_types, dim], rng)?,
            head: store.add_uniform("highway.head", &[1, dim], rng)?,
        })
    }
}

/// Type logits `W_t · h_pre(e)` of one entity.
pub fn type_logits(
    store: &ParamStore,
    types: ParamId,
    pre: &PreEmbeddings,
    e: EntityId,
) -> Vec<f64> {
    let w = store.tensor(types);
    let h = pre.row(e as usize);
    (0..w.rows())
        .map(|t| w.row(t).iter().zip(h).map(|(a, b)| a * b).sum())
        .collect()
}

/// `β(e) = argmax_t W_t · h_pre(e)` for every starting entity, lowest `t` on ties.
pub fn classify_starting(
    store: &ParamStore,
    types: ParamId,
    pre: &PreEmbeddings,
    starting_set: &[EntityId],
) -> Result<Vec<usize>, NumericsError> {
    let w = store.tensor(types);
    if w.cols() != pre.values.cols() {
        return Err(NumericsError::ShapeMismatch {
            op: "classify_starting",
            left: w.shape().to_vec(),
            right: pre.values.shape().to_vec(),
        });
    }
    Ok(starting_set
        .iter()
        .map(|&e| {
            let logits = type_logits(store, types, pre, e);
            let mut best = 0;
            for (t, &v) in logits.iter().enumerate() {
                if v > logits[best] {
                    best = t;
                }
            }
            best
        })
        .collect())
}

/// `{(u, r′_{β(e)}, e) | e ∈ S − {u}}` in ascending order of `e`.
/// `types[i]` is the type of `starting_set[i]`.
pub fn build_shortcuts(
    ctx: &QueryContext<'_>,
    starting_set: &[EntityId],
    types: &[usize],
    space: &RelationSpace,
) -> Vec<Triple> {
    let mut out: Vec<Triple> = starting_set
        .iter()
        .zip(types)
        .filter(|(&e, _)| e != ctx.head)
        .map(|(&e, &t)| Triple::new(ctx.head, space.highway(t), e))
        .collect();
    out.sort_by_key(|t| t.tail);
    out.dedup_by_key(|t| t.tail);
    out
}

/// `g(u) = head`, `g(e) = head ⊙ r̂_{r′_{β(e)}}` for each shortcut tail,
/// zero elsewhere. `rhat` is the `[relations, d]` table on the tape.
pub fn highway_init(
    tape: &mut Tape<'_>,
    ctx: &QueryContext<'_>,
    shortcuts: &[Triple],
    rhat: Var,
    params: &HighwayParams,
) -> Result<Var, NumericsError> {
    let n = ctx.graph.num_entities();
    let head = tape.param(params.head);
    let mut g = tape.segment_reduce(head, Rc::from(vec![ctx.head as usize]), n, ReduceMode::Sum)?;
    if !shortcuts.is_empty() {
        let rels: Vec<usize> = shortcuts.iter().map(|t| t.rel as usize).collect();
        let tails: Vec<usize> = shortcuts.iter().map(|t| t.tail as usize).collect();
        let r = tape.gather(rhat, Rc::from(rels))?;
        let msgs = tape.mul_row(r, head)?;
        let spread = tape.segment_reduce(msgs, Rc::from(tails), n, ReduceMode::Sum)?;
        g = tape.add(g, spread)?;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::KnowledgeGraph;
    use crate::numerics::Tensor;

    fn pre(rows: Vec<f64>, d: usize) -> PreEmbeddings {
        PreEmbeddings {
            values: Tensor::matrix(rows.len() / d, d, rows).unwrap(),
        }
    }

    #[test]
    fn typing() {
        let mut store = ParamStore::new();
        let p = pre(vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5], 2);
        let one = store
            .add("one", Tensor::matrix(1, 2, vec![0.3, -0.7]).unwrap())
            .unwrap();
        assert_eq!(
            classify_starting(&store, one, &p, &[0, 1, 2]).unwrap(),
            vec![0, 0, 0]
        );
        let zero = store.add("zero", Tensor::zeros(&[3, 2])).unwrap();
        assert_eq!(
            classify_starting(&store, zero, &p, &[0, 1]).unwrap(),
            vec![0, 0]
        );
        let sep = store
            .add(
                "sep",
                Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            )
            .unwrap();
        assert_eq!(
            classify_starting(&store, sep, &p, &[0, 1]).unwrap(),
            vec![0, 1]
        );
        let bad = store.add("bad", Tensor::zeros(&[2, 3])).unwrap();
        assert!(classify_starting(&store, bad, &p, &[0]).is_err());
    }

    #[test]
    fn shortcuts() {
        let g = KnowledgeGraph::from_facts(4, 1, vec![Triple::new(0, 0, 1)]).unwrap();
        let ctx = QueryContext::new(&g, 0, 0).unwrap();
        let space = RelationSpace {
            base: 1,
            num_types: 2,
            self_loop: false,
        };
        assert!(build_shortcuts(&ctx, &[0], &[1], &space).is_empty());
        let h = build_shortcuts(&ctx, &[0, 2, 3], &[1, 0, 1], &space);
        assert_eq!(h, vec![Triple::new(0, 2, 2), Triple::new(0, 3, 3)]);
    }

    #[test]
    fn init_rows() {
        let g = KnowledgeGraph::from_facts(4, 1, vec![Triple::new(0, 0, 1)]).unwrap();
        let ctx = QueryContext::new(&g, 1, 0).unwrap();
        let mut store = ParamStore::new();
        let params = HighwayParams {
            types: store.add("t", Tensor::zeros(&[2, 2])).unwrap(),
            head: store
                .add("h", Tensor::matrix(1, 2, vec![2.0, -1.0]).unwrap())
                .unwrap(),
        };
        let mut tape = Tape::new(&store);
        let rhat = tape
            .constant(Tensor::matrix(4, 2, vec![9.0, 9.0, 9.0, 9.0, 1.0, 1.0, 0.5, 3.0]).unwrap());
        let none = highway_init(&mut tape, &ctx, &[], rhat, &params).unwrap();
        assert_eq!(
            tape.value(none).data(),
            &[0.0, 0.0, 2.0, -1.0, 0.0, 0.0, 0.0, 0.0]
        );
        let cuts = [Triple::new(1, 2, 0), Triple::new(1, 3, 3)];
        let g0 = highway_init(&mut tape, &ctx, &cuts, rhat, &params).unwrap();
        assert_eq!(
            tape.value(g0).data(),
            &[2.0, -1.0, 2.0, -1.0, 0.0, 0.0, 1.0, -3.0]
        );
    }
}
