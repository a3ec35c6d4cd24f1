//! Progressive multi-condition propagation: the visited frontier grows one
//! hop per layer from the starting set, and each layer aggregates
//! attention-weighted `h(x) ⊙ r̂_q` messages over edges whose source was
//! visited in the previous layer.

use std::rc::Rc;

use rand::Rng;

use crate::conditioning::{QueryContext, RelationSpace};
use crate::kg::{EntityId, KnowledgeGraph, RelationId};
use crate::numerics::{NumericsError, ParamId, ParamStore, ReduceMode, Tape, Tensor, Var};

/// Membership mask over the entities of one graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntitySet {
    mask: Vec<bool>,
    count: usize,
}

impl EntitySet {
    pub fn empty(num_entities: usize) -> Self {
        Self {
            mask: vec![false; num_entities],
            count: 0,
        }
    }

    pub fn from_ids(num_entities: usize, ids: &[EntityId]) -> Self {
        let mut s = Self::empty(num_entities);
        for &e in ids {
            s.insert(e);
        }
        s
    }

    pub fn insert(&mut self, e: EntityId) -> bool {
        let slot = &mut self.mask[e as usize];
        let fresh = !*slot;
        *slot = true;
        self.count += usize::from(fresh);
        fresh
    }

    #[inline]
    pub fn contains(&self, e: EntityId) -> bool {
        self.mask.get(e as usize).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Members in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(e, _)| e as EntityId)
    }

    pub fn is_subset(&self, other: &EntitySet) -> bool {
        self.iter().all(|e| other.contains(e))
    }
}

/// `prev ∪ {x | (e, r, x) ∈ N(e), e ∈ prev}`, skipping edges hidden by `ctx`.
pub fn expand_frontier(ctx: &QueryContext<'_>, prev: &EntitySet) -> EntitySet {
    let g = ctx.graph;
    let mut next = prev.clone();
    for e in prev.iter() {
        for &id in g.out_edges(e) {
            if !ctx.is_excluded(id) {
                next.insert(g.edge(id).tail);
            }
        }
    }
    next
}

/// Convenience form of [`expand_frontier`] without hidden edges.
pub fn expand_frontier_in(g: &KnowledgeGraph, prev: &EntitySet) -> EntitySet {
    let ctx = QueryContext {
        graph: g,
        head: 0,
        query_rel: 0,
        excluded: Vec::new(),
    };
    expand_frontier(&ctx, prev)
}

/// Per-layer attention and output weights.
#[derive(Clone, Copy, Debug)]
pub struct LayerParams {
    /// `[1, d_γ]`
    pub attn: ParamId,
    /// `[d_γ, d]` each
    pub attn_u: ParamId,
    pub attn_r: ParamId,
    pub attn_q: ParamId,
    /// `[d, d]`
    pub out: ParamId,
}

#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub layers: Vec<LayerParams>,
}

impl AttentionParams {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        layers: usize,
        dim: usize,
        attn_dim: usize,
        rng: &mut R,
    ) -> Result<Self, NumericsError> {
        let layers = (0..layers)
            .map(|l| {
                Ok(LayerParams {
                    attn: store.add_uniform(format!("layer{l}.attn"), &[1, attn_dim], rng)?,
                    attn_u: store.add_uniform(format!("layer{l}.attn_u"), &[attn_dim, dim], rng)?,
                    attn_r: store.add_uniform(format!("layer{l}.attn_r"), &[attn_dim, dim], rng)?,
                    attn_q: store.add_uniform(format!("layer{l}.attn_q"), &[attn_dim, dim], rng)?,
                    out: store.add_uniform(format!("layer{l}.out"), &[dim, dim], rng)?,
                })
            })
            .collect::<Result<_, NumericsError>>()?;
        Ok(Self { layers })
    }
}

/// `γ = σ(W_attn · ReLU(W_u h + W_r r̂ + W_q q))` for a batch of edges.
/// `h`, `r` are `[E, d]`, `q` is `[1, d]`; returns `[E, 1]`.
pub fn edge_attention(
    tape: &mut Tape<'_>,
    p: &LayerParams,
    h: Var,
    r: Var,
    q: Var,
) -> Result<Var, NumericsError> {
    let (wa, wu, wr, wq) = (
        tape.param(p.attn),
        tape.param(p.attn_u),
        tape.param(p.attn_r),
        tape.param(p.attn_q),
    );
    let a_h = tape.linear(h, wu, None)?;
    let a_r = tape.linear(r, wr, None)?;
    let a_q = tape.linear(q, wq, None)?;
    let s = tape.add(a_h, a_r)?;
    let s = tape.add_row(s, a_q)?;
    let s = tape.relu(s);
    let logit = tape.linear(s, wa, None)?;
    Ok(tape.sigmoid(logit))
}

/// Messages of one layer as parallel arrays: message into `target` from
/// `source` over relation `rel`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LayerEdges {
    pub target: Vec<usize>,
    pub source: Vec<usize>,
    pub rel: Vec<usize>,
}

impl LayerEdges {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }
}

/// Edges `(e, r, x)` with `x ∈ prev`, in edge-list order, followed by one
/// identity edge per member of `prev` when `identity` is set.
pub fn active_edges(
    ctx: &QueryContext<'_>,
    prev: &EntitySet,
    identity: Option<RelationId>,
) -> LayerEdges {
    let g = ctx.graph;
    let mut ids = Vec::new();
    for x in prev.iter() {
        for &out in g.out_edges(x) {
            let id = g.inverse_edge(out);
            if !ctx.is_excluded(id) {
                ids.push(id);
            }
        }
    }
    ids.sort_unstable();
    let mut edges = LayerEdges::default();
    for id in ids {
        let t = g.edge(id);
        edges.target.push(t.head as usize);
        edges.source.push(t.tail as usize);
        edges.rel.push(t.rel as usize);
    }
    if let Some(r) = identity {
        for x in prev.iter() {
            edges.target.push(x as usize);
            edges.source.push(x as usize);
            edges.rel.push(r as usize);
        }
    }
    edges
}

#[derive(Clone, Debug)]
pub struct PropagationState {
    /// `V^0 ..= V^{L2}`
    pub visited: Vec<EntitySet>,
    /// `h^0 ..= h^{L2}`, each `[|V|, d]` on the tape.
    pub embeddings: Vec<Var>,
}

impl PropagationState {
    pub fn last(&self) -> Var {
        *self.embeddings.last().expect("at least h^0")
    }

    pub fn final_visited(&self) -> &EntitySet {
        self.visited.last().expect("at least V^0")
    }
}

/// Runs every layer of `params` from the initialization `init` and seeds
/// `starting_set`. `rhat` is the `[relations, d]` table, `q_emb` is `[1, d]`.
#[allow(clippy::too_many_arguments)]
pub fn propagate(
    tape: &mut Tape<'_>,
    ctx: &QueryContext<'_>,
    space: &RelationSpace,
    rhat: Var,
    q_emb: Var,
    init: Var,
    starting_set: &[EntityId],
    params: &AttentionParams,
) -> Result<PropagationState, NumericsError> {
    let n = ctx.graph.num_entities();
    let mut visited = vec![EntitySet::from_ids(n, starting_set)];
    let mut embeddings = vec![init];
    for layer in &params.layers {
        let prev = visited.last().expect("seeded");
        let next = expand_frontier(ctx, prev);
        let edges = active_edges(ctx, prev, space.identity());
        let h_prev = *embeddings.last().expect("seeded");
        let h = if edges.is_empty() {
            let d = tape.value(h_prev).cols();
            tape.constant(Tensor::zeros(&[n, d]))
        } else {
            let target: Rc<[usize]> = Rc::from(edges.target);
            let hx = tape.gather(h_prev, Rc::from(edges.source))?;
            let rel: Rc<[usize]> = Rc::from(edges.rel);
            let rr = tape.gather(rhat, rel)?;
            let msg = tape.mul(hx, rr)?;
            let he = tape.gather(h_prev, target.clone())?;
            let gamma = edge_attention(tape, layer, he, rr, q_emb)?;
            let weighted = tape.scale_rows(msg, gamma)?;
            let agg = tape.segment_reduce(weighted, target, n, ReduceMode::Sum)?;
            let w = tape.param(layer.out);
            let z = tape.linear(agg, w, None)?;
            tape.relu(z)
        };
        visited.push(next);
        embeddings.push(h);
    }
    Ok(PropagationState {
        visited,
        embeddings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Triple;
    use crate::numerics::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain() -> KnowledgeGraph {
        KnowledgeGraph::from_facts(4, 1, vec![Triple::new(0, 0, 1), Triple::new(1, 0, 2)]).unwrap()
    }

    #[test]
    fn frontier_steps() {
        let g = chain();
        let empty = EntitySet::empty(4);
        assert!(expand_frontier_in(&g, &empty).is_empty());
        let u = EntitySet::from_ids(4, &[0]);
        assert_eq!(
            expand_frontier_in(&g, &u).iter().collect::<Vec<_>>(),
            vec![0, 1]
        );
        let all = EntitySet::from_ids(4, &[0, 1, 2, 3]);
        assert_eq!(expand_frontier_in(&g, &all), all);
    }

    #[test]
    fn active_edges_follow_edge_order() {
        let g = chain();
        let ctx = QueryContext::new(&g, 0, 0).unwrap();
        let e = active_edges(&ctx, &EntitySet::from_ids(4, &[1]), Some(2));
        // edges into b's neighbours: (a, r, b) is edge 0, (c, r⁻, b) is edge 3
        assert_eq!(e.target, vec![0, 2, 1]);
        assert_eq!(e.source, vec![1, 1, 1]);
        assert_eq!(e.rel, vec![0, 1, 2]);
    }

    #[test]
    fn attention_range_and_zero_weights() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = AttentionParams::init(&mut store, 1, 3, 2, &mut rng)
            .unwrap()
            .layers[0];
        let mut tape = Tape::new(&store);
        let h =
            tape.constant(Tensor::matrix(2, 3, vec![100.0, -50.0, 3.0, 0.0, 0.0, 0.0]).unwrap());
        let r = tape.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0]).unwrap());
        let q = tape.constant(Tensor::matrix(1, 3, vec![0.5, 0.5, 0.5]).unwrap());
        let g = edge_attention(&mut tape, &p, h, r, q).unwrap();
        assert!(tape.value(g).data().iter().all(|&v| v > 0.0 && v < 1.0));

        *store.tensor_mut(p.attn) = Tensor::zeros(&[1, 2]);
        let mut tape = Tape::new(&store);
        let h = tape.constant(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let g = edge_attention(&mut tape, &p, h, h, h).unwrap();
        assert_eq!(tape.value(g).data(), &[0.5]);
    }

    #[test]
    fn attention_matches_scalar_oracle() {
        let (d, da) = (4, 3);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = AttentionParams::init(&mut store, 1, d, da, &mut rng)
            .unwrap()
            .layers[0];
        let h = [0.3, -1.2, 0.8, 0.1];
        let r = [1.0, 0.4, -0.6, 0.9];
        let q = [-0.2, 0.7, 0.05, 1.1];
        let mut tape = Tape::new(&store);
        let (hv, rv, qv) = (
            tape.constant(Tensor::matrix(1, d, h.to_vec()).unwrap()),
            tape.constant(Tensor::matrix(1, d, r.to_vec()).unwrap()),
            tape.constant(Tensor::matrix(1, d, q.to_vec()).unwrap()),
        );
        let gv = edge_attention(&mut tape, &p, hv, rv, qv).unwrap();
        let got = tape.value(gv).data()[0];
        let (wa, wu, wr, wq) = (
            store.tensor(p.attn).data(),
            store.tensor(p.attn_u).data(),
            store.tensor(p.attn_r).data(),
            store.tensor(p.attn_q).data(),
        );
        let mut logit = 0.0;
        for j in 0..da {
            let mut z = 0.0;
            for k in 0..d {
                z += wu[j * d + k] * h[k] + wr[j * d + k] * r[k] + wq[j * d + k] * q[k];
            }
            logit += wa[j] * z.max(0.0);
        }
        let expected = 1.0 / (1.0 + (-logit).exp());
        assert!((got - expected).abs() < 1e-12);
    }

    fn star_setup(self_loop: bool) -> (KnowledgeGraph, ParamStore, AttentionParams, RelationSpace) {
        // u=0 → a=1, u → b=2, isolated 3
        let g = KnowledgeGraph::from_facts(4, 1, vec![Triple::new(0, 0, 1), Triple::new(0, 0, 2)])
            .unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = AttentionParams::init(&mut store, 1, 2, 2, &mut rng).unwrap();
        let space = RelationSpace {
            base: 1,
            num_types: 1,
            self_loop,
        };
        (g, store, p, space)
    }

    #[test]
    fn star_graph_single_layer() {
        let (g, mut store, p, space) = star_setup(false);
        *store.tensor_mut(p.layers[0].out) =
            Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let ctx = QueryContext::new(&g, 0, 0).unwrap();
        let mut tape = Tape::new(&store);
        let rhat = tape.constant(Tensor::filled(&[space.total(), 2], 1.0));
        let q = tape.constant(Tensor::matrix(1, 2, vec![0.1, 0.2]).unwrap());
        let init = tape
            .constant(Tensor::matrix(4, 2, vec![1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap());
        let st = propagate(&mut tape, &ctx, &space, rhat, q, init, &[0], &p).unwrap();
        assert_eq!(st.final_visited().iter().collect::<Vec<_>>(), vec![0, 1, 2]);
        let h = tape.value(st.last()).data().to_vec();
        // u has no visited-source messages without a self-loop; a and b each
        // receive γ · (1, 2) through W_o = I
        assert_eq!(&h[0..2], &[0.0, 0.0]);
        assert!(h[2] > 0.0 && h[3] > 0.0 && (h[3] - 2.0 * h[2]).abs() < 1e-12);
        assert_eq!(&h[2..4], &h[4..6]);
        assert_eq!(&h[6..8], &[0.0, 0.0]);
    }

    #[test]
    fn zero_init_stays_zero() {
        let (g, store, p, space) = star_setup(true);
        let ctx = QueryContext::new(&g, 0, 0).unwrap();
        let mut tape = Tape::new(&store);
        let rhat = tape.constant(Tensor::filled(&[space.total(), 2], 0.7));
        let q = tape.constant(Tensor::matrix(1, 2, vec![0.1, 0.2]).unwrap());
        let init = tape.constant(Tensor::zeros(&[4, 2]));
        let st = propagate(&mut tape, &ctx, &space, rhat, q, init, &[0], &p).unwrap();
        assert!(tape.value(st.last()).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frontier_matches_bfs_ball() {
        let g = KnowledgeGraph::from_facts(
            6,
            2,
            vec![
                Triple::new(0, 0, 1),
                Triple::new(2, 1, 1),
                Triple::new(2, 0, 3),
                Triple::new(4, 1, 3),
            ],
        )
        .unwrap();
        let mut s = EntitySet::from_ids(6, &[0]);
        for l in 1..=4u32 {
            s = expand_frontier_in(&g, &s);
            let dist = g.bfs_distances(0).unwrap();
            let ball: Vec<EntityId> = (0..6).filter(|&e| dist[e as usize] <= l).collect();
            assert_eq!(s.iter().collect::<Vec<_>>(), ball);
        }
    }
}
