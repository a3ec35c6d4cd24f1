//! Full-propagation pre-embedding: mean aggregation of `h(x) + r̂_q` over
//! every entity's out-edges, starting from all-zero embeddings.
//!
//! Its only consumers are the hard top-`n` selection and the argmax typing,
//! so it runs as plain arithmetic outside the tape.

use crate::conditioning::QueryContext;
use crate::numerics::Tensor;

/// `h_pre^{L1}` for one query, `[|V|, d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PreEmbeddings {
    pub values: Tensor,
}

impl PreEmbeddings {
    pub fn row(&self, e: usize) -> &[f64] {
        self.values.row(e)
    }
}

/// Runs `layers` rounds of mean aggregation. `rhat` is the `[relations, d]`
/// table of conditioned relation embeddings for the query. Edges hidden by
/// the context are skipped and do not count towards `|N(e)|`.
pub fn pre_embed(ctx: &QueryContext<'_>, rhat: &Tensor, layers: usize) -> PreEmbeddings {
    let g = ctx.graph;
    let n = g.num_entities();
    let d = rhat.cols();
    let mut h = vec![0.0; n * d];
    let mut next = vec![0.0; n * d];
    for _ in 0..layers {
        next.fill(0.0);
        for e in 0..n {
            let out = &mut next[e * d..(e + 1) * d];
            let mut count = 0usize;
            for &id in g.out_edges(e as u32) {
                if ctx.is_excluded(id) {
                    continue;
                }
                let t = g.edge(id);
                let hx = &h[t.tail as usize * d..(t.tail as usize + 1) * d];
                let r = rhat.row(t.rel as usize);
                for k in 0..d {
                    out[k] += hx[k] + r[k];
                }
                count += 1;
            }
            if count > 0 {
                let inv = 1.0 / count as f64;
                out.iter_mut().for_each(|v| *v *= inv);
            }
        }
        std::mem::swap(&mut h, &mut next);
    }
    PreEmbeddings {
        values: Tensor::matrix(n, d, h).expect("sized above"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{KnowledgeGraph, Triple};

    fn chain() -> KnowledgeGraph {
        KnowledgeGraph::from_facts(4, 1, vec![Triple::new(0, 0, 1), Triple::new(1, 0, 2)]).unwrap()
    }

    fn constant_rhat(rows: usize, v: &[f64]) -> Tensor {
        Tensor::matrix(rows, v.len(), v.repeat(rows)).unwrap()
    }

    #[test]
    fn zero_layers_and_isolated_entity() {
        let g = chain();
        let ctx = QueryContext::new(&g, 0, 0).unwrap();
        let rhat = constant_rhat(2, &[1.0, -2.0]);
        assert!(pre_embed(&ctx, &rhat, 0)
            .values
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let out = pre_embed(&ctx, &rhat, 3);
        assert_eq!(out.row(3), &[0.0, 0.0]);
    }

    #[test]
    fn one_layer_on_chain() {
        let g = chain();
        let ctx = QueryContext::new(&g, 0, 0).unwrap();
        let v = [0.5, 2.0];
        let out = pre_embed(&ctx, &constant_rhat(2, &v), 1);
        assert_eq!(out.row(0), &v);
        assert_eq!(out.row(1), &v);
        assert_eq!(out.row(2), &v);
    }

    #[test]
    fn two_layers_on_chain() {
        // layer 2 at a: mean over its single neighbour b of (v + v) = 2v;
        // at b: mean over a and c of (v + v) = 2v
        let g = chain();
        let ctx = QueryContext::new(&g, 0, 0).unwrap();
        let out = pre_embed(&ctx, &constant_rhat(2, &[1.0]), 2);
        assert_eq!(&out.values.data()[..3], &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn zero_relations_give_zero_output() {
        let g = chain();
        let ctx = QueryContext::new(&g, 1, 1).unwrap();
        let out = pre_embed(&ctx, &Tensor::zeros(&[2, 3]), 4);
        assert!(out.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicate_edges_leave_mean_unchanged() {
        let single =
            KnowledgeGraph::from_facts(3, 2, vec![Triple::new(0, 0, 1), Triple::new(0, 1, 2)])
                .unwrap();
        let doubled = KnowledgeGraph::from_facts(
            3,
            2,
            vec![
                Triple::new(0, 0, 1),
                Triple::new(0, 0, 1),
                Triple::new(0, 1, 2),
                Triple::new(0, 1, 2),
            ],
        )
        .unwrap();
        let rhat = Tensor::matrix(4, 2, vec![1.0, 0.0, 0.0, 3.0, -1.0, 1.0, 2.0, 2.0]).unwrap();
        let a = pre_embed(&QueryContext::new(&single, 0, 0).unwrap(), &rhat, 2);
        let b = pre_embed(&QueryContext::new(&doubled, 0, 0).unwrap(), &rhat, 2);
        for (x, y) in a.values.data().iter().zip(b.values.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn hidden_edges_are_skipped() {
        let g = chain();
        let ctx = QueryContext::for_triple(&g, Triple::new(0, 0, 1), true).unwrap();
        let out = pre_embed(&ctx, &constant_rhat(2, &[1.0]), 1);
        assert_eq!(&out.values.data()[..3], &[0.0, 1.0, 1.0]);
    }
}
