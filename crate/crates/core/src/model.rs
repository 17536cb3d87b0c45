//! Model configuration, ablation variants and the trainable parameter set.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grad::{ParamId, ParamStore};
use crate::intent::{compute_intents, IntentConfig, IntentError, IntentTable};
use crate::matrix::Matrix;

/// Which parts of the model are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Intent-aware user aggregation plus relational KG aggregation.
    #[default]
    Full,
    /// One intent channel with no per-user attention and no independence loss.
    NoIntents,
    /// Plain neighbor means on both graphs.
    NoRelationsNoIntents,
    /// Matrix factorization: no propagation, ID embeddings only.
    Mf,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoIntents,
        Variant::NoRelationsNoIntents,
        Variant::Mf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoIntents => "no_intents",
            Variant::NoRelationsNoIntents => "no_relations_no_intents",
            Variant::Mf => "mf",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                format!("unknown variant {s:?}; expected full, no_intents, no_relations_no_intents or mf")
            })
    }
}

/// How the user aggregator weights item messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntentMode {
    /// `sum_p beta(u,p) e_p ⊙ e_i` with per-user attention.
    Attention,
    /// `e_p ⊙ e_i` with the single intent and no attention.
    SingleChannel,
    /// Plain `e_i`.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub num_intents: usize,
    /// Divide user messages by `|P| * deg(u)` instead of `deg(u)`.
    pub normalize_by_pairs: bool,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 3,
            num_intents: 4,
            normalize_by_pairs: false,
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    /// Applies an ablation variant: `no_intents` forces a single intent,
    /// `mf` forces zero layers.
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        match variant {
            Variant::Full | Variant::NoRelationsNoIntents => {}
            Variant::NoIntents => self.num_intents = 1,
            Variant::Mf => self.layers = 0,
        }
        self
    }

    pub fn intent_mode(&self) -> IntentMode {
        match self.variant {
            Variant::Full => IntentMode::Attention,
            Variant::NoIntents => IntentMode::SingleChannel,
            Variant::NoRelationsNoIntents | Variant::Mf => IntentMode::Off,
        }
    }

    pub fn uses_relations(&self) -> bool {
        matches!(self.variant, Variant::Full | Variant::NoIntents)
    }

    /// Whether the independence regularizer applies to this variant.
    pub fn uses_independence(&self) -> bool {
        self.variant == Variant::Full
    }
}

/// Table sizes a model is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub num_users: usize,
    pub num_items: usize,
    pub num_entities: usize,
    pub num_relations: usize,
}

impl ModelShape {
    pub fn of(index: &crate::graph::GraphIndex) -> Self {
        Self {
            num_users: index.num_users(),
            num_items: index.num_items(),
            num_entities: index.num_entities(),
            num_relations: index.num_relations(),
        }
    }
}

pub const USER_TABLE: &str = "user_embs";
pub const ENTITY_TABLE: &str = "entity_embs";
pub const RELATION_TABLE: &str = "relation_embs";
pub const LOGIT_TABLE: &str = "relation_logits";

/// All trainable tables: user and entity ID embeddings, relation embeddings
/// and the relation-to-intent attention logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub shape: ModelShape,
    pub store: ParamStore,
    pub user: ParamId,
    pub entity: ParamId,
    pub relation: ParamId,
    pub logits: ParamId,
}

/// Uniform Xavier initialization for a `(rows, cols)` table.
pub fn xavier_uniform<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

impl ModelParams {
    /// Xavier initialization for every table, drawn in the order users,
    /// entities, relations, logits.
    ///
    /// Zero logits would make all intents identical, and identical intents
    /// receive identical gradients, so they would never separate.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, shape: ModelShape, rng: &mut R) -> Self {
        let d = config.dim;
        let mut store = ParamStore::new();
        let user = store.register(USER_TABLE, xavier_uniform(rng, shape.num_users, d));
        let entity = store.register(ENTITY_TABLE, xavier_uniform(rng, shape.num_entities, d));
        let relation = store.register(RELATION_TABLE, xavier_uniform(rng, shape.num_relations, d));
        let logits = store.register(
            LOGIT_TABLE,
            xavier_uniform(rng, shape.num_relations, config.num_intents),
        );
        Self {
            config,
            shape,
            store,
            user,
            entity,
            relation,
            logits,
        }
    }

    /// Rebuilds the handle set from a store whose tables carry the standard names.
    pub fn from_store(config: ModelConfig, shape: ModelShape, store: ParamStore) -> Option<Self> {
        let user = store.find(USER_TABLE)?;
        let entity = store.find(ENTITY_TABLE)?;
        let relation = store.find(RELATION_TABLE)?;
        let logits = store.find(LOGIT_TABLE)?;
        let ok = store.values(user).shape() == (shape.num_users, config.dim)
            && store.values(entity).shape() == (shape.num_entities, config.dim)
            && store.values(relation).shape() == (shape.num_relations, config.dim)
            && store.values(logits).shape() == (shape.num_relations, config.num_intents);
        ok.then_some(Self {
            config,
            shape,
            store,
            user,
            entity,
            relation,
            logits,
        })
    }

    pub fn user_embs(&self) -> &Matrix {
        self.store.values(self.user)
    }

    pub fn entity_embs(&self) -> &Matrix {
        self.store.values(self.entity)
    }

    pub fn relation_embs(&self) -> &Matrix {
        self.store.values(self.relation)
    }

    pub fn intent_config(&self) -> IntentConfig {
        IntentConfig {
            num_intents: self.config.num_intents,
            relation_logits: self.store.values(self.logits).clone(),
        }
    }

    pub fn intents(&self) -> Result<IntentTable, IntentError> {
        compute_intents(&self.intent_config(), self.relation_embs())
    }

    pub fn is_finite(&self) -> bool {
        self.store.tables().iter().all(|t| t.values.is_finite())
    }
}
