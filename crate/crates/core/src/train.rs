//! Scoring, the BPR objective with independence and L2 terms, negative
//! sampling and the epoch loop.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{propagate_on_tape, AggregateError, FinalReps, KgEdges, Propagation, UserEdges};
use crate::eval::{evaluate, EvalError, EvalReport};
use crate::grad::{log_sigmoid, AdamConfig, GradError, Tape, Var};
use crate::graph::{GraphIndex, InteractionSet};
use crate::independence::{independence_on_tape, mean_pairwise_dcor, IndependenceConfig, IndependenceError};
use crate::intent::IntentError;
use crate::matrix::Matrix;
use crate::model::{ModelConfig, ModelParams, ModelShape, Variant};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Independence(#[from] IndependenceError),
    #[error(transparent)]
    Intent(#[from] IntentError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("user {user} has interacted with every item; no negative can be sampled")]
    NoNegative { user: usize },
    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}; training aborted")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        value: f64,
        last_good: Box<ModelParams>,
    },
    #[error("optimizer step failed at epoch {epoch}, batch {batch}: {source}")]
    Step {
        epoch: usize,
        batch: usize,
        #[source]
        source: GradError,
        last_good: Box<ModelParams>,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
}

/// Training hyperparameters. Defaults follow the published settings
/// (learning rate 1e-4, d = 64, three layers, four intents, lambda2 = 1e-5).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    pub layers: usize,
    pub num_intents: usize,
    pub normalize_by_pairs: bool,
    pub variant: Variant,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Apply L2 to every table each step instead of only batch-touched rows.
    pub l2_full: bool,
    /// Include relation embeddings and attention logits in the per-batch L2
    /// term. Ignored when `l2_full` is set.
    pub l2_intent: bool,
    pub independence: IndependenceConfig,
    pub seed: u64,
    /// Evaluate every this many epochs (0 disables periodic evaluation).
    pub eval_every: usize,
    /// Stop after this many evaluations without a recall improvement.
    pub patience: usize,
    pub k: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Serial accumulation everywhere so that runs are bit-reproducible.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let a = AdamConfig::default();
        Self {
            dim: m.dim,
            layers: m.layers,
            num_intents: m.num_intents,
            normalize_by_pairs: m.normalize_by_pairs,
            variant: m.variant,
            lr: 1e-4,
            batch_size: 1024,
            epochs: 400,
            lambda1: 1e-4,
            lambda2: 1e-5,
            l2_full: false,
            l2_intent: true,
            independence: IndependenceConfig::default(),
            seed: 2020,
            eval_every: 5,
            patience: 10,
            k: 20,
            adam_beta1: a.beta1,
            adam_beta2: a.beta2,
            adam_eps: a.eps,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, TrainError> {
        let cfg: Self = toml::from_str(s).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.num_intents == 0 {
            return bad("num_intents must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lambda1 >= 0.0) || !(self.lambda2 >= 0.0) {
            return bad("lambda1 and lambda2 must be non-negative".into());
        }
        if !(self.independence.tau > 0.0) {
            return bad(format!("independence.tau must be positive, got {}", self.independence.tau));
        }
        Ok(())
    }

    /// Model configuration with the variant's structural overrides applied.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            layers: self.layers,
            num_intents: self.num_intents,
            normalize_by_pairs: self.normalize_by_pairs,
            variant: Variant::Full,
        }
        .with_variant(self.variant)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    /// Independence weight actually applied (zero for variants without intents).
    pub fn effective_lambda1(&self) -> f64 {
        if self.model_config().uses_independence() {
            self.lambda1
        } else {
            0.0
        }
    }
}

/// One `(user, positive item, negative item)` triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSample {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Predicted preference `e*_u . e*_i`.
pub fn score(user: usize, item: usize, reps: &FinalReps) -> f64 {
    reps.score(user, item)
}

/// `sum -ln sigmoid(y_ui - y_uj)` over the samples.
pub fn bpr_loss(samples: &[TrainSample], reps: &FinalReps) -> Result<f64, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    Ok(samples
        .iter()
        .map(|s| -log_sigmoid(score(s.user, s.pos, reps) - score(s.user, s.neg, reps)))
        .sum())
}

/// Draws an item the user has not interacted with, uniformly by rejection.
pub fn sample_negative<R: Rng + ?Sized>(
    user: usize,
    cf: &InteractionSet,
    rng: &mut R,
) -> Result<usize, TrainError> {
    let positives = cf.positives.get(user).map_or(0, Vec::len);
    if positives >= cf.num_items {
        return Err(TrainError::NoNegative { user });
    }
    loop {
        let j = rng.gen_range(0..cf.num_items);
        if !cf.contains(user, j) {
            return Ok(j);
        }
    }
}

/// Loss weights resolved from a config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub l2_full: bool,
    pub l2_intent: bool,
    pub independence: IndependenceConfig,
}

impl From<&TrainConfig> for LossConfig {
    fn from(c: &TrainConfig) -> Self {
        Self {
            lambda1: c.effective_lambda1(),
            lambda2: c.lambda2,
            l2_full: c.l2_full,
            l2_intent: c.l2_intent,
            independence: c.independence,
        }
    }
}

/// A minibatch with its distinct users and each sample's position among them.
#[derive(Debug, Clone)]
pub struct Batch {
    pub samples: Vec<TrainSample>,
    pub edges: UserEdges,
    sample_user_pos: Arc<[usize]>,
    sample_users: Arc<[usize]>,
    pos_items: Arc<[usize]>,
    neg_items: Arc<[usize]>,
}

impl Batch {
    pub fn new(samples: Vec<TrainSample>, graph: &GraphIndex) -> Self {
        let mut slot: BTreeMap<usize, usize> = BTreeMap::new();
        for s in &samples {
            slot.insert(s.user, 0);
        }
        let users: Vec<usize> = slot.keys().copied().collect();
        for (pos, u) in users.iter().enumerate() {
            slot.insert(*u, pos);
        }
        let sample_user_pos: Vec<usize> = samples.iter().map(|s| slot[&s.user]).collect();
        Self {
            edges: UserEdges::for_users(graph, &users),
            sample_user_pos: Arc::from(sample_user_pos),
            sample_users: samples.iter().map(|s| s.user).collect(),
            pos_items: samples.iter().map(|s| s.pos).collect(),
            neg_items: samples.iter().map(|s| s.neg).collect(),
            samples,
        }
    }
}

/// Handles to the loss terms on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub bpr: Var,
    pub independence: Option<Var>,
    pub l2: Var,
}

/// Scalar values of the loss terms (independence and L2 already unweighted).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub bpr: f64,
    pub independence: f64,
    pub l2: f64,
}

impl LossVars {
    pub fn values(&self, tape: &Tape) -> LossBreakdown {
        LossBreakdown {
            total: tape.value(self.total).item(),
            bpr: tape.value(self.bpr).item(),
            independence: self.independence.map_or(0.0, |v| tape.value(v).item()),
            l2: tape.value(self.l2).item(),
        }
    }
}

/// Records `L_BPR + lambda1 L_IND + lambda2 ||Theta||^2` on top of a propagation.
///
/// The L2 term covers the layer-0 rows touched by the batch (one term per
/// sample for its user, positive and negative) plus the relation embeddings
/// and attention logits (unless `l2_intent` is off), or every table when
/// `l2_full` is set. The
/// independence term is skipped entirely when `lambda1` is zero.
pub fn loss_on_tape(
    tape: &mut Tape,
    prop: &Propagation,
    batch: &Batch,
    cfg: &LossConfig,
) -> Result<LossVars, TrainError> {
    if batch.samples.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let u = tape.gather(prop.final_users, batch.sample_user_pos.clone())?;
    let i = tape.gather(prop.final_entities, batch.pos_items.clone())?;
    let j = tape.gather(prop.final_entities, batch.neg_items.clone())?;
    let yi = tape.row_dot(u, i)?;
    let yj = tape.row_dot(u, j)?;
    let margin = tape.sub(yi, yj)?;
    let ls = tape.log_sigmoid(margin);
    let s = tape.sum(ls);
    let bpr = tape.scale(s, -1.0);

    let l2 = if cfg.l2_full {
        let parts = [
            prop.user_table,
            prop.entity_table,
            prop.relation_table,
            prop.logit_table,
        ]
        .map(|t| tape.sum_squares(t));
        sum_vars(tape, &parts)?
    } else {
        let u0 = tape.gather(prop.user_table, batch.sample_users.clone())?;
        let i0 = tape.gather(prop.entity_table, batch.pos_items.clone())?;
        let j0 = tape.gather(prop.entity_table, batch.neg_items.clone())?;
        let mut tables = vec![u0, i0, j0];
        if cfg.l2_intent {
            tables.extend([prop.relation_table, prop.logit_table]);
        }
        let parts: Vec<Var> = tables.into_iter().map(|t| tape.sum_squares(t)).collect();
        sum_vars(tape, &parts)?
    };

    let mut total = bpr;
    let independence = if cfg.lambda1 > 0.0 {
        let ind = independence_on_tape(tape, prop.intents, &cfg.independence)?;
        let w = tape.scale(ind, cfg.lambda1);
        total = tape.add(total, w)?;
        Some(ind)
    } else {
        None
    };
    if cfg.lambda2 > 0.0 {
        let w = tape.scale(l2, cfg.lambda2);
        total = tape.add(total, w)?;
    }
    Ok(LossVars {
        total,
        bpr,
        independence,
        l2,
    })
}

fn sum_vars(tape: &mut Tape, vars: &[Var]) -> Result<Var, GradError> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(acc)
}

/// Builds the full objective for one batch on a fresh tape.
pub fn build_loss(
    tape: &mut Tape,
    params: &ModelParams,
    kg: &KgEdges,
    batch: &Batch,
    cfg: &LossConfig,
) -> Result<LossVars, TrainError> {
    let prop = propagate_on_tape(tape, params, kg, &batch.edges)?;
    loss_on_tape(tape, &prop, batch, cfg)
}

/// Value of the objective for a batch, without touching gradients.
pub fn total_loss(
    params: &ModelParams,
    graph: &GraphIndex,
    samples: &[TrainSample],
    cfg: &LossConfig,
) -> Result<LossBreakdown, TrainError> {
    let batch = Batch::new(samples.to_vec(), graph);
    let mut tape = Tape::new();
    let vars = build_loss(&mut tape, params, &KgEdges::new(graph), &batch, cfg)?;
    Ok(vars.values(&tape))
}

/// Loss value and gradients for a batch; gradients are left in `params.store`.
pub fn loss_and_gradients(
    params: &mut ModelParams,
    graph: &GraphIndex,
    kg: &KgEdges,
    batch: &Batch,
    cfg: &LossConfig,
    parallel: bool,
) -> Result<LossBreakdown, TrainError> {
    let _ = graph;
    let mut tape = Tape::with_parallel(parallel);
    let vars = build_loss(&mut tape, params, kg, batch, cfg)?;
    let values = vars.values(&tape);
    params.store.zero_grads();
    tape.backward(vars.total, Matrix::scalar(1.0), &mut params.store)?;
    Ok(values)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub bpr: f64,
    pub independence: f64,
    pub l2: f64,
    pub mean_dcor: f64,
    pub recall: Option<f64>,
    pub ndcg: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters with the best evaluated recall, or the last epoch's when
    /// no evaluation ran.
    pub params: ModelParams,
    pub log: Vec<EpochRecord>,
    pub best: Option<(usize, EvalReport)>,
    pub stopped_early: bool,
}

/// Fresh parameters for a config and graph, seeded from `cfg.seed`.
pub fn init_params(cfg: &TrainConfig, graph: &GraphIndex) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    ModelParams::init(cfg.model_config(), ModelShape::of(graph), &mut rng)
}

/// Trains from scratch. `test` enables periodic evaluation and early stopping;
/// `on_epoch` receives each log record as it is produced.
pub fn fit(
    train: &InteractionSet,
    graph: &GraphIndex,
    test: Option<&InteractionSet>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome, TrainError> {
    cfg.validate()?;
    let mut params = init_params(cfg, graph);
    // separate stream so sampling does not shift when the init changes shape
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5a4d_91e5_0001);
    let loss_cfg = LossConfig::from(cfg);
    let adam = cfg.adam();
    let kg = KgEdges::new(graph);
    let parallel = !cfg.deterministic;
    let mut pairs = train.pairs();

    let mut log = Vec::new();
    let mut best: Option<(usize, EvalReport)> = None;
    let mut best_params: Option<ModelParams> = None;
    let mut evals_without_gain = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let last_good = params.clone();
        pairs.shuffle(&mut rng);
        let mut sums = LossBreakdown {
            total: 0.0,
            bpr: 0.0,
            independence: 0.0,
            l2: 0.0,
        };
        for (b, chunk) in pairs.chunks(cfg.batch_size).enumerate() {
            let samples = chunk
                .iter()
                .map(|&(user, pos)| {
                    sample_negative(user, train, &mut rng).map(|neg| TrainSample { user, pos, neg })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let batch = Batch::new(samples, graph);
            let parts = loss_and_gradients(&mut params, graph, &kg, &batch, &loss_cfg, parallel)?;
            if !parts.total.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    value: parts.total,
                    last_good: Box::new(last_good),
                });
            }
            if let Err(source) = params.store.adam_step(&adam) {
                return Err(TrainError::Step {
                    epoch,
                    batch: b,
                    source,
                    last_good: Box::new(last_good),
                });
            }
            sums.total += parts.total;
            sums.bpr += parts.bpr;
            sums.independence += parts.independence;
            sums.l2 += parts.l2;
        }

        let mut record = EpochRecord {
            epoch,
            loss: sums.total,
            bpr: sums.bpr,
            independence: sums.independence,
            l2: sums.l2,
            mean_dcor: mean_pairwise_dcor(&params.intents()?.embeddings),
            recall: None,
            ndcg: None,
        };
        let mut stop = false;
        if let Some(test) = test {
            if cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
                let report = evaluate(&params, graph, train, test, cfg.k, parallel)?;
                record.recall = Some(report.recall);
                record.ndcg = Some(report.ndcg);
                let improved = best.as_ref().is_none_or(|(_, b)| report.recall > b.recall);
                if improved {
                    best = Some((epoch, report));
                    best_params = Some(params.clone());
                    evals_without_gain = 0;
                } else {
                    evals_without_gain += 1;
                    if cfg.patience > 0 && evals_without_gain >= cfg.patience {
                        stop = true;
                    }
                }
            }
        }
        on_epoch(&record);
        log.push(record);
        if stop {
            stopped_early = true;
            break;
        }
    }

    Ok(FitOutcome {
        params: best_params.unwrap_or(params),
        log,
        best,
        stopped_early,
    })
}

/// How often each item was drawn as a negative.
pub fn negative_histogram(samples: &[TrainSample], num_items: usize) -> Vec<usize> {
    let mut h = vec![0; num_items];
    for s in samples {
        h[s.neg] += 1;
    }
    h
}

/// `e*_u . e*_i` computed with an explicit coordinate loop.
pub fn score_naive(user: &[f64], item: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..user.len() {
        acc += user[k] * item[k];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{add_inverse_relations, build_index, Triple, TripleSet};
    use crate::matrix::dot;

    fn reps(users: &[Vec<f64>], items: &[Vec<f64>]) -> FinalReps {
        FinalReps {
            users: Matrix::from_rows(users),
            items: Matrix::from_rows(items),
        }
    }

    #[test]
    fn score_is_dot_product() {
        let r = reps(&[vec![1.0, 0.0]], &[vec![0.5, 2.0]]);
        assert_eq!(score(0, 0, &r), 0.5);
        let z = reps(&[vec![0.0, 0.0]], &[vec![0.5, 2.0], vec![-3.0, 1.0]]);
        assert_eq!(score(0, 0, &z), 0.0);
        assert_eq!(score(0, 1, &z), 0.0);
    }

    #[test]
    fn bpr_closed_forms() {
        let r = reps(&[vec![1.0]], &[vec![0.5], vec![0.5], vec![-1.5], vec![1e6]]);
        let s = |pos, neg| TrainSample { user: 0, pos, neg };
        assert!((bpr_loss(&[s(0, 1)], &r).unwrap() - 2f64.ln()).abs() < 1e-15);
        // margin -2
        assert!((bpr_loss(&[s(2, 0)], &r).unwrap() - 2.126928011042972).abs() < 1e-12);
        assert!(bpr_loss(&[s(3, 0)], &r).unwrap() < 1e-300);
        assert!(matches!(bpr_loss(&[], &r), Err(TrainError::EmptyBatch)));
    }

    #[test]
    fn forced_negative() {
        let cf = InteractionSet::from_lists(3, vec![vec![0, 1]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(sample_negative(0, &cf, &mut rng).unwrap(), 2);
        }
        let full = InteractionSet::from_lists(2, vec![vec![0, 1]]);
        assert!(matches!(
            sample_negative(0, &full, &mut rng),
            Err(TrainError::NoNegative { user: 0 })
        ));
    }

    #[test]
    fn config_parses_nested_keys_and_rejects_unknown() {
        let c = TrainConfig::from_toml_str(
            "layers = 2\nlambda1 = 0.5\n[independence]\nvariant = \"distance_correlation\"\ntau = 0.2\n",
        )
        .unwrap();
        assert_eq!(c.layers, 2);
        assert_eq!(c.independence.tau, 0.2);
        assert!(TrainConfig::from_toml_str("bogus = 1").is_err());
        assert!(TrainConfig::from_toml_str("[independence]\ntau = 0.0").is_err());
        let back = TrainConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn defaults_follow_published_settings() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.dim, c.layers, c.num_intents, c.lambda2), (1e-4, 64, 3, 4, 1e-5));
        assert_eq!(c.batch_size, 1024);
        assert_eq!(c.k, 20);
    }

    fn tiny_graph() -> (InteractionSet, GraphIndex) {
        let cf = InteractionSet::from_lists(4, vec![vec![0, 1], vec![2], vec![1, 3]]);
        let kg = TripleSet::canonical(vec![
            Triple::new(0, 0, 4),
            Triple::new(1, 0, 4),
            Triple::new(2, 1, 5),
            Triple::new(3, 1, 5),
        ]);
        let kg = add_inverse_relations(&kg).unwrap();
        let g = build_index(&cf, &kg).unwrap();
        (cf, g)
    }

    #[test]
    fn loss_coefficients_off_equals_bpr() {
        let (_, g) = tiny_graph();
        let cfg = TrainConfig {
            dim: 4,
            layers: 2,
            num_intents: 2,
            ..Default::default()
        };
        let p = init_params(&cfg, &g);
        let samples = vec![
            TrainSample { user: 0, pos: 0, neg: 2 },
            TrainSample { user: 2, pos: 3, neg: 0 },
        ];
        let lc = LossConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            l2_full: false,
            l2_intent: true,
            independence: IndependenceConfig::default(),
        };
        let parts = total_loss(&p, &g, &samples, &lc).unwrap();
        let reps = crate::aggregate::final_reps(&p, &g).unwrap();
        let direct = bpr_loss(&samples, &reps).unwrap();
        assert!((parts.total - direct).abs() < 1e-12);
        assert_eq!(parts.total, parts.bpr);
    }

    #[test]
    fn l2_term_is_sum_of_squares() {
        let (_, g) = tiny_graph();
        let cfg = TrainConfig {
            dim: 2,
            layers: 1,
            num_intents: 1,
            ..Default::default()
        };
        let mut p = init_params(&cfg, &g);
        for id in p.store.ids().collect::<Vec<_>>() {
            p.store.values_mut(id).fill(0.0);
        }
        p.store.values_mut(p.user).set(0, 1, 2.0);
        let lc = LossConfig {
            lambda1: 0.0,
            lambda2: 1.0,
            l2_full: false,
            l2_intent: true,
            independence: IndependenceConfig::default(),
        };
        let parts = total_loss(&p, &g, &[TrainSample { user: 0, pos: 0, neg: 3 }], &lc).unwrap();
        assert_eq!(parts.l2, 4.0);
        assert!((parts.total - (2f64.ln() + 4.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let (cf, g) = tiny_graph();
        let cfg = TrainConfig {
            dim: 4,
            epochs: 0,
            ..Default::default()
        };
        let out = fit(&cf, &g, None, &cfg, |_| {}).unwrap();
        assert_eq!(out.params, init_params(&cfg, &g));
        assert!(out.log.is_empty());
    }

    #[test]
    fn naive_score_matches() {
        let u = [0.3, -1.2, 2.0];
        let i = [1.5, 0.25, -0.75];
        assert!((score_naive(&u, &i) - dot(&u, &i)).abs() < 1e-12);
    }
}
