//! All-ranking top-K evaluation.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{final_reps, AggregateError, FinalReps};
use crate::graph::{GraphIndex, InteractionSet};
use crate::model::{ModelConfig, ModelParams, Variant};
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("no user has test positives among the model's items")]
    NoEvaluableUsers,
    #[error("test set has {test} users but the model knows {model}")]
    UnknownUsers { test: usize, model: usize },
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub num_users_evaluated: usize,
    /// Users whose test positives all fall outside the model's item range.
    pub skipped_unseen: usize,
    pub variant: Variant,
    /// FNV-1a hash of the serialized model configuration.
    pub fingerprint: String,
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "variant={} recall@{k}={:.6} ndcg@{k}={:.6} users={} skipped={} config={}",
            self.variant,
            self.recall,
            self.ndcg,
            self.num_users_evaluated,
            self.skipped_unseen,
            self.fingerprint,
            k = self.k
        )
    }
}

pub fn config_fingerprint(config: &ModelConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn by_score_then_id(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

fn user_scores(u: usize, reps: &FinalReps) -> Vec<f64> {
    (0..reps.items.rows()).map(|i| reps.score(u, i)).collect()
}

/// Every non-training item for `u`, best first; ties go to the lower id.
pub fn rank_all(u: usize, reps: &FinalReps, cf_train: &InteractionSet) -> Vec<usize> {
    let scores = user_scores(u, reps);
    let mut items: Vec<usize> = (0..scores.len()).filter(|&i| !cf_train.contains(u, i)).collect();
    items.sort_by(by_score_then_id(&scores));
    items
}

/// The first `k` entries of [`rank_all`] without sorting the whole list.
pub fn top_k(u: usize, reps: &FinalReps, cf_train: &InteractionSet, k: usize) -> Vec<usize> {
    let scores = user_scores(u, reps);
    let mut items: Vec<usize> = (0..scores.len()).filter(|&i| !cf_train.contains(u, i)).collect();
    let cmp = by_score_then_id(&scores);
    if k < items.len() {
        items.select_nth_unstable_by(k, &cmp);
        items.truncate(k);
    }
    items.sort_by(cmp);
    items
}

pub fn recall_at_k(ranking: &[usize], test_positives: &[usize], k: usize) -> f64 {
    if test_positives.is_empty() {
        return 0.0;
    }
    let hits = ranking
        .iter()
        .take(k)
        .filter(|i| test_positives.contains(i))
        .count();
    hits as f64 / test_positives.len() as f64
}

pub fn ndcg_at_k(ranking: &[usize], test_positives: &[usize], k: usize) -> f64 {
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| test_positives.contains(i))
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..k.min(test_positives.len()))
        .map(|r| 1.0 / ((r + 2) as f64).log2())
        .sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

/// Mean recall and ndcg over users with test positives, from precomputed
/// representations.
pub fn evaluate_reps(
    reps: &FinalReps,
    config: &ModelConfig,
    cf_train: &InteractionSet,
    cf_test: &InteractionSet,
    k: usize,
    parallel: bool,
) -> Result<EvalReport, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if cf_test.num_users > reps.users.rows() {
        return Err(EvalError::UnknownUsers {
            test: cf_test.num_users,
            model: reps.users.rows(),
        });
    }
    let num_items = reps.items.rows();
    let per_user = |u: usize| -> Option<Option<(f64, f64)>> {
        let raw = &cf_test.positives[u];
        if raw.is_empty() {
            return None;
        }
        let pos: Vec<usize> = raw.iter().copied().filter(|&i| i < num_items).collect();
        if pos.is_empty() {
            return Some(None);
        }
        let ranking = top_k(u, reps, cf_train, k);
        Some(Some((recall_at_k(&ranking, &pos, k), ndcg_at_k(&ranking, &pos, k))))
    };
    let results: Vec<Option<Option<(f64, f64)>>> = if parallel {
        (0..cf_test.num_users).into_par_iter().map(per_user).collect()
    } else {
        (0..cf_test.num_users).map(per_user).collect()
    };
    // sequential reduction keeps the sum order fixed
    let (mut recall, mut ndcg, mut n, mut skipped) = (0.0, 0.0, 0usize, 0usize);
    for r in results.into_iter().flatten() {
        match r {
            Some((rc, nd)) => {
                recall += rc;
                ndcg += nd;
                n += 1;
            }
            None => skipped += 1,
        }
    }
    if n == 0 {
        return Err(EvalError::NoEvaluableUsers);
    }
    Ok(EvalReport {
        k,
        recall: recall / n as f64,
        ndcg: ndcg / n as f64,
        num_users_evaluated: n,
        skipped_unseen: skipped,
        variant: config.variant,
        fingerprint: config_fingerprint(config),
    })
}

pub fn evaluate(
    params: &ModelParams,
    graph: &GraphIndex,
    cf_train: &InteractionSet,
    cf_test: &InteractionSet,
    k: usize,
    parallel: bool,
) -> Result<EvalReport, EvalError> {
    let reps = final_reps(params, graph)?;
    evaluate_reps(&reps, &params.config, cf_train, cf_test, k, parallel)
}

/// Training configuration for an ablation of `base`.
pub fn make_ablation(base: &TrainConfig, variant: Variant) -> TrainConfig {
    TrainConfig {
        variant,
        ..base.clone()
    }
}
