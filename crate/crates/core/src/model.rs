//! The assembled model: parameters plus the per-query forward pipeline
//! pre-embed → select → type/shortcut → highway init → propagate → score.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conditioning::{QueryContext, RelationEncoder, RelationSpace};
use crate::config::{ModelConfig, SelectionMode};
use crate::highway::{build_shortcuts, classify_starting, highway_init, HighwayParams};
use crate::kg::Triple;
use crate::numerics::{read_checkpoint, write_checkpoint, ParamStore, Tape, Var};
use crate::objective::{score_candidates, DecoderParams};
use crate::pre_embed::{pre_embed, PreEmbeddings};
use crate::propagation::{
    expand_frontier, propagate, AttentionParams, EntitySet, PropagationState,
};
use crate::selection::{
    degree_scores, importance_scores, query_seed, random_scores, select_starting, SelectionParams,
    SelectionResult,
};
use crate::MstarError;

#[derive(Clone, Debug)]
pub struct MStar {
    pub config: ModelConfig,
    pub space: RelationSpace,
    pub store: ParamStore,
    /// Encoder of the progressive stage and the highway layer.
    pub encoder: RelationEncoder,
    /// Encoder of the pre-embedding stage; equal to `encoder` when shared.
    pub pre_encoder: RelationEncoder,
    pub selection: SelectionParams,
    pub highway: HighwayParams,
    pub attention: AttentionParams,
    pub decoder: DecoderParams,
}

/// The non-differentiable half of a forward pass: which entities start
/// propagation, their types, and the shortcut edges from the head.
#[derive(Clone, Debug)]
pub struct QueryPlan {
    pub selection: SelectionResult,
    /// 0-based type of each entry of `selection.starting_set` (empty when
    /// the highway is disabled).
    pub types: Vec<usize>,
    pub shortcuts: Vec<Triple>,
}

/// Everything one forward pass produced.
#[derive(Clone, Debug)]
pub struct QueryTrace {
    pub selection: SelectionResult,
    pub types: Vec<usize>,
    pub shortcuts: Vec<Triple>,
    pub state: PropagationState,
    /// `[|V|, 1]`
    pub scores: Var,
}

impl MStar {
    /// Fresh parameters for a relation vocabulary of `num_relations` (`|R|`),
    /// drawn from a generator seeded with `config.seed`.
    pub fn new(config: ModelConfig, num_relations: usize) -> Result<Self, MstarError> {
        config.validate()?;
        let space = RelationSpace {
            base: num_relations,
            num_types: config.num_types,
            self_loop: config.self_loop,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.dim;
        let encoder = RelationEncoder::init(&mut store, "rel", space, d, &mut rng)?;
        let pre_encoder = if config.share_relations {
            encoder
        } else {
            RelationEncoder::init(&mut store, "pre_rel", space, d, &mut rng)?
        };
        let selection = SelectionParams::init(&mut store, d, &mut rng)?;
        let highway = HighwayParams::init(&mut store, d, config.num_types, &mut rng)?;
        let attention =
            AttentionParams::init(&mut store, config.layers, d, config.attn_dim, &mut rng)?;
        let decoder = DecoderParams::init(&mut store, d, &mut rng)?;
        Ok(Self {
            config,
            space,
            store,
            encoder,
            pre_encoder,
            selection,
            highway,
            attention,
            decoder,
        })
    }

    pub fn num_relations(&self) -> usize {
        self.space.base
    }

    /// Pre-embeddings of the query under the current parameters.
    pub fn pre_embeddings(&self, ctx: &QueryContext<'_>) -> Result<PreEmbeddings, MstarError> {
        let rhat = self
            .pre_encoder
            .all_relations_plain(&self.store, ctx.query_rel)?;
        Ok(pre_embed(ctx, &rhat, self.config.pre_layers))
    }

    fn select(
        &self,
        ctx: &QueryContext<'_>,
        pre: Option<&PreEmbeddings>,
    ) -> Result<SelectionResult, MstarError> {
        let ab = &self.config.ablations;
        let n = ctx.graph.num_entities();
        if !ab.selection {
            return Ok(SelectionResult {
                scores: Vec::new(),
                starting_set: vec![ctx.head],
                mode: ab.selection_mode,
            });
        }
        let scores = match ab.selection_mode {
            SelectionMode::Learned => {
                let pre = pre.expect("computed for learned selection");
                let q = self
                    .store
                    .tensor(self.pre_encoder.q_table)
                    .row(ctx.query_rel as usize);
                importance_scores(&self.store, &self.selection, pre, ctx.head, q)?
            }
            SelectionMode::Random => {
                random_scores(n, query_seed(self.config.seed, ctx.head, ctx.query_rel))
            }
            SelectionMode::Degree => degree_scores(ctx.graph),
        };
        Ok(select_starting(
            &scores,
            ctx.head,
            self.config.num_starts,
            ab.selection_mode,
        ))
    }

    /// Pre-embedding, selection and typing for one query. Runs outside any
    /// tape; nothing here receives gradients.
    pub fn plan(&self, ctx: &QueryContext<'_>) -> Result<QueryPlan, MstarError> {
        if ctx.graph.num_relations() != self.space.base {
            return Err(MstarError::VocabularyMismatch {
                model: self.space.base,
                graph: ctx.graph.num_relations(),
            });
        }
        let ab = self.config.ablations;
        let learned = ab.selection && ab.selection_mode == SelectionMode::Learned;
        let pre = if learned || (ab.selection && ab.highway) {
            Some(self.pre_embeddings(ctx)?)
        } else {
            None
        };
        let selection = self.select(ctx, pre.as_ref())?;
        let (types, shortcuts) = match (&pre, ab.highway) {
            (Some(pre), true) => {
                let types = classify_starting(
                    &self.store,
                    self.highway.types,
                    pre,
                    &selection.starting_set,
                )?;
                let cuts = build_shortcuts(ctx, &selection.starting_set, &types, &self.space);
                (types, cuts)
            }
            _ => (Vec::new(), Vec::new()),
        };
        Ok(QueryPlan {
            selection,
            types,
            shortcuts,
        })
    }

    /// `V^{L2}` of a plan: everything within `L2` hops of the starting set.
    pub fn reach(&self, ctx: &QueryContext<'_>, plan: &QueryPlan) -> EntitySet {
        let mut set = EntitySet::from_ids(ctx.graph.num_entities(), &plan.selection.starting_set);
        for _ in 0..self.config.layers {
            set = expand_frontier(ctx, &set);
        }
        set
    }

    /// Runs the full pipeline for one query on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        ctx: &QueryContext<'_>,
    ) -> Result<QueryTrace, MstarError> {
        let plan = self.plan(ctx)?;
        self.forward_planned(tape, ctx, plan)
    }

    /// The differentiable half of [`forward`](Self::forward).
    pub fn forward_planned(
        &self,
        tape: &mut Tape<'_>,
        ctx: &QueryContext<'_>,
        plan: QueryPlan,
    ) -> Result<QueryTrace, MstarError> {
        let q_emb = self.encoder.query_embedding(tape, ctx.query_rel)?;
        let rhat = self.encoder.all_relations(tape, q_emb)?;
        let init = highway_init(tape, ctx, &plan.shortcuts, rhat, &self.highway)?;
        let state = propagate(
            tape,
            ctx,
            &self.space,
            rhat,
            q_emb,
            init,
            &plan.selection.starting_set,
            &self.attention,
        )?;
        let scores = score_candidates(tape, state.last(), ctx.head, &self.decoder)?;
        Ok(QueryTrace {
            selection: plan.selection,
            types: plan.types,
            shortcuts: plan.shortcuts,
            state,
            scores,
        })
    }

    /// Scores of every entity for one query, without gradients.
    pub fn score(&self, ctx: &QueryContext<'_>) -> Result<Vec<f64>, MstarError> {
        let mut tape = Tape::new(&self.store);
        let trace = self.forward(&mut tape, ctx)?;
        let scores = tape.value(trace.scores);
        if !scores.is_finite() {
            return Err(MstarError::NonFinite("candidate scores".into()));
        }
        Ok(scores.data().to_vec())
    }

    pub fn save(&self, path: &Path) -> Result<(), MstarError> {
        let io = |source| MstarError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::create(path).map_err(io)?;
        write_checkpoint(BufWriter::new(file), &self.store)?;
        Ok(())
    }

    /// Replaces all parameter values with those of a checkpoint written by
    /// a model of identical configuration.
    pub fn load(&mut self, path: &Path) -> Result<(), MstarError> {
        let file = File::open(path).map_err(|source| MstarError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let records = read_checkpoint(BufReader::new(file))?;
        self.store.load_records(records)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Ablations;
    use crate::kg::KnowledgeGraph;

    fn graph() -> KnowledgeGraph {
        KnowledgeGraph::from_facts(
            7,
            2,
            vec![
                Triple::new(0, 0, 1),
                Triple::new(1, 1, 2),
                Triple::new(2, 0, 3),
                Triple::new(3, 1, 4),
                Triple::new(4, 0, 5),
                Triple::new(5, 1, 6),
            ],
        )
        .unwrap()
    }

    fn config(ab: Ablations) -> ModelConfig {
        ModelConfig {
            dim: 4,
            attn_dim: 3,
            layers: 2,
            num_starts: 2,
            num_types: 2,
            ablations: ab,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn forward_shapes_and_invariants() {
        let g = graph();
        let m = MStar::new(config(Ablations::full()), 2).unwrap();
        let ctx = QueryContext::new(&g, 0, 0).unwrap();
        let mut tape = Tape::new(&m.store);
        let t = m.forward(&mut tape, &ctx).unwrap();
        assert_eq!(tape.value(t.scores).shape(), &[7, 1]);
        assert!(t.selection.starting_set.contains(&0));
        assert_eq!(t.shortcuts.len(), t.selection.starting_set.len() - 1);
        for (l, v) in t.state.visited.iter().enumerate() {
            let h = tape.value(t.state.embeddings[l]);
            for e in 0..7u32 {
                if !v.contains(e) {
                    assert!(h.row(e as usize).iter().all(|&x| x == 0.0));
                }
            }
        }
    }

    #[test]
    fn ablations_shape_the_seeds() {
        let g = graph();
        let ctx = QueryContext::new(&g, 3, 1).unwrap();
        let m = MStar::new(config(Ablations::without_selection()), 2).unwrap();
        let mut tape = Tape::new(&m.store);
        let t = m.forward(&mut tape, &ctx).unwrap();
        assert_eq!(t.selection.starting_set, vec![3]);
        assert_eq!(t.state.visited[0].len(), 1);

        let m = MStar::new(config(Ablations::without_highway()), 2).unwrap();
        let mut tape = Tape::new(&m.store);
        let t = m.forward(&mut tape, &ctx).unwrap();
        assert!(t.shortcuts.is_empty());
        let g0 = tape.value(t.state.embeddings[0]);
        for e in 0..7 {
            assert_eq!(g0.row(e).iter().any(|&x| x != 0.0), e == 3);
        }
        assert!(t.state.visited[0].len() >= 2);
    }

    #[test]
    fn reach_matches_the_propagated_frontier() {
        let g = graph();
        for ab in [
            Ablations::full(),
            Ablations::without_selection(),
            Ablations::without_highway(),
        ] {
            let m = MStar::new(config(ab), 2).unwrap();
            for head in 0..7 {
                let ctx = QueryContext::new(&g, head, 1).unwrap();
                let plan = m.plan(&ctx).unwrap();
                let reach = m.reach(&ctx, &plan);
                let mut tape = Tape::new(&m.store);
                let trace = m.forward_planned(&mut tape, &ctx, plan).unwrap();
                assert_eq!(&reach, trace.state.final_visited());
            }
        }
    }

    #[test]
    fn pre_embeddings_depend_on_query() {
        let g = graph();
        let m = MStar::new(config(Ablations::full()), 2).unwrap();
        let a = m
            .pre_embeddings(&QueryContext::new(&g, 0, 0).unwrap())
            .unwrap();
        let b = m
            .pre_embeddings(&QueryContext::new(&g, 0, 1).unwrap())
            .unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn vocabulary_mismatch() {
        let g = graph();
        let m = MStar::new(config(Ablations::full()), 3).unwrap();
        assert!(matches!(
            m.score(&QueryContext::new(&g, 0, 0).unwrap()),
            Err(MstarError::VocabularyMismatch { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let g = graph();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let a = MStar::new(config(Ablations::full()), 2).unwrap();
        a.save(&path).unwrap();
        let mut b = MStar::new(
            ModelConfig {
                seed: 99,
                ..config(Ablations::full())
            },
            2,
        )
        .unwrap();
        let ctx = QueryContext::new(&g, 1, 2).unwrap();
        assert_ne!(a.score(&ctx).unwrap(), b.score(&ctx).unwrap());
        b.load(&path).unwrap();
        assert_eq!(a.score(&ctx).unwrap(), b.score(&ctx).unwrap());
    }
}
