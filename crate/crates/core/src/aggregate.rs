//! Relational path-aware propagation.
//!
//! Entity layer: `e_v^(l) = mean over (r, w) in N(v) of e_r ⊙ e_w^(l-1)`.
//! User layer: `e_u^(l) = mean over items i of u of (sum_p beta(u,p) e_p) ⊙ e_i^(l-1)`,
//! with `beta` computed once from the layer-0 user embedding.
//! Nodes without neighbors get zero rows. There is no self term; the node's
//! own signal reaches the output only through the sum over layers.

use std::sync::Arc;

use thiserror::Error;

use crate::grad::{GradError, Tape, Var};
use crate::graph::GraphIndex;
use crate::intent::{attention_on_tape, intents_on_tape, IntentError, IntentTable};
use crate::matrix::Matrix;
use crate::model::{IntentMode, ModelParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregateError {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Intent(#[from] IntentError),
    #[error("path enumeration would visit {paths} paths, above the cap of {cap}")]
    PathExplosion { paths: u128, cap: u128 },
    #[error("path enumeration supports depths up to {max}, got {depth}")]
    DepthTooLarge { depth: usize, max: usize },
    #[error("entity {entity} out of range ({num_entities} entities)")]
    UnknownEntity { entity: usize, num_entities: usize },
    #[error("beta has shape {got:?}, expected {expected:?}")]
    BetaShape {
        got: (usize, usize),
        expected: (usize, usize),
    },
}

/// KG edges in index order as shared index arrays.
#[derive(Debug, Clone)]
pub struct KgEdges {
    pub heads: Arc<[usize]>,
    pub relations: Arc<[usize]>,
    pub tails: Arc<[usize]>,
    pub num_entities: usize,
}

impl KgEdges {
    pub fn new(index: &GraphIndex) -> Self {
        let (h, r, t) = index.kg_edge_arrays();
        Self {
            heads: Arc::from(h),
            relations: Arc::from(r),
            tails: Arc::from(t),
            num_entities: index.num_entities(),
        }
    }
}

/// User-item edges for a subset of users; `positions` index into `users`.
#[derive(Debug, Clone)]
pub struct UserEdges {
    pub users: Arc<[usize]>,
    pub positions: Arc<[usize]>,
    pub items: Arc<[usize]>,
}

impl UserEdges {
    pub fn for_users(index: &GraphIndex, users: &[usize]) -> Self {
        let mut positions = Vec::new();
        let mut items = Vec::new();
        for (pos, &u) in users.iter().enumerate() {
            for &i in index.user_items(u) {
                positions.push(pos);
                items.push(i);
            }
        }
        Self {
            users: Arc::from(users),
            positions: Arc::from(positions),
            items: Arc::from(items),
        }
    }

    pub fn all(index: &GraphIndex) -> Self {
        let users: Vec<usize> = (0..index.num_users()).collect();
        Self::for_users(index, &users)
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// Records one KG aggregation layer. `relations` of `None` drops the
/// relational modulation (plain neighbor mean).
pub fn entity_layer_on_tape(
    tape: &mut Tape,
    prev: Var,
    kg: &KgEdges,
    relations: Option<Var>,
) -> Result<Var, GradError> {
    let neighbors = tape.gather(prev, kg.tails.clone())?;
    let messages = match relations {
        Some(rel) => {
            let r = tape.gather(rel, kg.relations.clone())?;
            tape.mul(r, neighbors)?
        }
        None => neighbors,
    };
    tape.segment_mean(messages, kg.heads.clone(), kg.num_entities)
}

/// Records one user aggregation layer. `mixture` holds `sum_p beta(u,p) e_p`
/// per user in `edges.users` order; `None` means plain item means.
pub fn user_layer_on_tape(
    tape: &mut Tape,
    prev_entities: Var,
    edges: &UserEdges,
    mixture: Option<Var>,
) -> Result<Var, GradError> {
    let items = tape.gather(prev_entities, edges.items.clone())?;
    let messages = match mixture {
        Some(m) => {
            let per_edge = tape.gather(m, edges.positions.clone())?;
            tape.mul(per_edge, items)?
        }
        None => items,
    };
    tape.segment_mean(messages, edges.positions.clone(), edges.len())
}

/// Handles to everything recorded by [`propagate_on_tape`].
#[derive(Debug, Clone)]
pub struct Propagation {
    pub user_table: Var,
    pub entity_table: Var,
    pub relation_table: Var,
    pub logit_table: Var,
    pub alpha: Var,
    pub intents: Var,
    /// Per-user intent attention, present only in attention mode.
    pub beta: Option<Var>,
    /// User layers for `edges.users`, index 0 holding the gathered ID embeddings.
    pub user_layers: Vec<Var>,
    pub entity_layers: Vec<Var>,
    pub final_users: Var,
    pub final_entities: Var,
}

fn sum_layers(tape: &mut Tape, layers: &[Var]) -> Result<Var, GradError> {
    let mut acc = layers[0];
    for &l in &layers[1..] {
        acc = tape.add(acc, l)?;
    }
    Ok(acc)
}

/// Records the full forward pass for the users in `edges`, over every entity.
pub fn propagate_on_tape(
    tape: &mut Tape,
    params: &ModelParams,
    kg: &KgEdges,
    edges: &UserEdges,
) -> Result<Propagation, AggregateError> {
    let cfg = &params.config;
    let user_table = tape.param(&params.store, params.user);
    let entity_table = tape.param(&params.store, params.entity);
    let relation_table = tape.param(&params.store, params.relation);
    let logit_table = tape.param(&params.store, params.logits);
    let (alpha, intents) = intents_on_tape(tape, logit_table, relation_table)?;

    let users0 = tape.gather(user_table, edges.users.clone())?;
    let (beta, mixture) = match cfg.intent_mode() {
        IntentMode::Attention => {
            let beta = attention_on_tape(tape, users0, intents)?;
            let mut mix = tape.matmul(beta, intents)?;
            if cfg.normalize_by_pairs {
                mix = tape.scale(mix, 1.0 / cfg.num_intents as f64);
            }
            (Some(beta), Some(mix))
        }
        IntentMode::SingleChannel => {
            let zeros: Arc<[usize]> = Arc::from(vec![0; edges.len()]);
            (None, Some(tape.gather(intents, zeros)?))
        }
        IntentMode::Off => (None, None),
    };
    let relations = cfg.uses_relations().then_some(relation_table);

    let mut entity_layers = vec![entity_table];
    let mut user_layers = vec![users0];
    for _ in 0..cfg.layers {
        let prev = *entity_layers.last().expect("layer 0 present");
        user_layers.push(user_layer_on_tape(tape, prev, edges, mixture)?);
        entity_layers.push(entity_layer_on_tape(tape, prev, kg, relations)?);
    }
    let final_users = sum_layers(tape, &user_layers)?;
    let final_entities = sum_layers(tape, &entity_layers)?;
    Ok(Propagation {
        user_table,
        entity_table,
        relation_table,
        logit_table,
        alpha,
        intents,
        beta,
        user_layers,
        entity_layers,
        final_users,
        final_entities,
    })
}

/// Per-layer representations of every user and entity.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStates {
    pub user_reps: Vec<Matrix>,
    pub entity_reps: Vec<Matrix>,
}

impl LayerStates {
    pub fn num_layers(&self) -> usize {
        self.entity_reps.len() - 1
    }
}

/// Summed representations used for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalReps {
    pub users: Matrix,
    pub items: Matrix,
}

impl FinalReps {
    pub fn score(&self, user: usize, item: usize) -> f64 {
        crate::matrix::dot(self.users.row(user), self.items.row(item))
    }
}

/// Runs the configured number of layers over all users and entities.
pub fn propagate(params: &ModelParams, graph: &GraphIndex) -> Result<LayerStates, AggregateError> {
    let kg = KgEdges::new(graph);
    let edges = UserEdges::all(graph);
    let mut tape = Tape::new();
    let p = propagate_on_tape(&mut tape, params, &kg, &edges)?;
    Ok(LayerStates {
        user_reps: p.user_layers.iter().map(|&v| tape.value(v).clone()).collect(),
        entity_reps: p.entity_layers.iter().map(|&v| tape.value(v).clone()).collect(),
    })
}

/// Element-wise sum over layers; items are the entity prefix `0..num_items`.
pub fn final_representations(states: &LayerStates, num_items: usize) -> FinalReps {
    let mut users = states.user_reps[0].clone();
    for m in &states.user_reps[1..] {
        users.add_assign(m);
    }
    let mut entities = states.entity_reps[0].clone();
    for m in &states.entity_reps[1..] {
        entities.add_assign(m);
    }
    let idx: Vec<usize> = (0..num_items).collect();
    FinalReps {
        users,
        items: entities.select_rows(&idx),
    }
}

/// Final representations of a model over a graph in one call.
pub fn final_reps(params: &ModelParams, graph: &GraphIndex) -> Result<FinalReps, AggregateError> {
    let states = propagate(params, graph)?;
    Ok(final_representations(&states, graph.num_items()))
}

/// One KG aggregation layer on plain matrices.
pub fn aggregate_entity_layer(
    prev_entity_reps: &Matrix,
    graph: &GraphIndex,
    relation_embs: &Matrix,
) -> Result<Matrix, AggregateError> {
    let kg = KgEdges::new(graph);
    let mut tape = Tape::new();
    let prev = tape.constant(prev_entity_reps.clone());
    let rel = tape.constant(relation_embs.clone());
    let out = entity_layer_on_tape(&mut tape, prev, &kg, Some(rel))?;
    Ok(tape.value(out).clone())
}

/// One user aggregation layer on plain matrices; `beta` is `(num_users, num_intents)`.
pub fn aggregate_user_layer(
    prev_entity_reps: &Matrix,
    graph: &GraphIndex,
    intents: &IntentTable,
    beta: &Matrix,
) -> Result<Matrix, AggregateError> {
    let expected = (graph.num_users(), intents.embeddings.rows());
    if beta.shape() != expected {
        return Err(AggregateError::BetaShape {
            got: beta.shape(),
            expected,
        });
    }
    let edges = UserEdges::all(graph);
    let mut tape = Tape::new();
    let prev = tape.constant(prev_entity_reps.clone());
    let b = tape.constant(beta.clone());
    let p = tape.constant(intents.embeddings.clone());
    let mix = tape.matmul(b, p)?;
    let out = user_layer_on_tape(&mut tape, prev, &edges, Some(mix))?;
    Ok(tape.value(out).clone())
}

/// Users with no interactions (their aggregated rows are zero).
pub fn zero_degree_users(graph: &GraphIndex) -> Vec<usize> {
    (0..graph.num_users())
        .filter(|&u| graph.user_degree(u) == 0)
        .collect()
}

/// Entities with no KG neighbors (their aggregated rows are zero).
pub fn isolated_entities(graph: &GraphIndex) -> Vec<usize> {
    (0..graph.num_entities())
        .filter(|&v| graph.entity_degree(v) == 0)
        .collect()
}

pub const PATH_CAP: u128 = 100_000;
pub const MAX_PATH_DEPTH: usize = 3;

/// Number of `depth`-hop walks rooted at `entity`.
pub fn count_paths(graph: &GraphIndex, entity: usize, depth: usize) -> u128 {
    if depth == 0 {
        return 1;
    }
    graph
        .entity_neighbors(entity)
        .iter()
        .map(|nb| count_paths(graph, nb.entity, depth - 1))
        .sum()
}

/// Explicit sum over every `depth`-hop relational path rooted at `entity`:
/// the product of `e_r / |N(s)|` along the path (with `s` the node being
/// expanded at each hop) times the endpoint's layer-0 embedding.
///
/// Written as a direct enumeration, independent of the layered kernels, so
/// that agreement with [`propagate`] checks the layer recursion.
pub fn enumerate_paths_oracle(
    graph: &GraphIndex,
    entity_embs: &Matrix,
    relation_embs: &Matrix,
    entity: usize,
    depth: usize,
) -> Result<Vec<f64>, AggregateError> {
    if depth > MAX_PATH_DEPTH {
        return Err(AggregateError::DepthTooLarge {
            depth,
            max: MAX_PATH_DEPTH,
        });
    }
    if entity >= graph.num_entities() {
        return Err(AggregateError::UnknownEntity {
            entity,
            num_entities: graph.num_entities(),
        });
    }
    let paths = count_paths(graph, entity, depth);
    if paths > PATH_CAP {
        return Err(AggregateError::PathExplosion {
            paths,
            cap: PATH_CAP,
        });
    }
    let d = entity_embs.cols();
    let mut total = vec![0.0; d];
    let mut weight = vec![1.0; d];
    walk(
        graph,
        entity_embs,
        relation_embs,
        entity,
        depth,
        &mut weight,
        &mut total,
    );
    Ok(total)
}

fn walk(
    graph: &GraphIndex,
    entity_embs: &Matrix,
    relation_embs: &Matrix,
    node: usize,
    remaining: usize,
    weight: &mut Vec<f64>,
    total: &mut [f64],
) {
    if remaining == 0 {
        for k in 0..total.len() {
            total[k] += weight[k] * entity_embs.get(node, k);
        }
        return;
    }
    let neighbors = graph.entity_neighbors(node);
    let deg = neighbors.len() as f64;
    for nb in neighbors {
        let saved = weight.clone();
        for k in 0..weight.len() {
            weight[k] *= relation_embs.get(nb.relation, k) / deg;
        }
        walk(
            graph,
            entity_embs,
            relation_embs,
            nb.entity,
            remaining - 1,
            weight,
            total,
        );
        *weight = saved;
    }
}
