//! Intent-level explanations.
//!
//! The user-intent attention depends only on the user's layer-0 embedding and
//! the intent embeddings, not on the item. An interaction explanation
//! therefore ranks the user's intents; the item appears only in the header.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intent::{user_intent_attention, IntentError};
use crate::model::ModelParams;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("unknown user {0}")]
    UnknownUser(usize),
    #[error("unknown item {0}")]
    UnknownItem(usize),
    #[error(transparent)]
    Intent(#[from] IntentError),
    #[error("relation names file: {0}")]
    Names(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationWeight {
    pub relation: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentProfile {
    pub intent: usize,
    /// Relations by descending attention, ties by ascending id.
    pub relations: Vec<RelationWeight>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentWeight {
    pub intent: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionExplanation {
    pub user: usize,
    pub item: usize,
    /// Intents by descending attention, ties by ascending id.
    pub intents: Vec<IntentWeight>,
    pub top_profile: IntentProfile,
}

fn ranked(weights: &[f64]) -> Vec<(usize, f64)> {
    let mut v: Vec<(usize, f64)> = weights.iter().copied().enumerate().collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v
}

/// Relation attention profile of every intent, truncated to `top` entries
/// when given.
pub fn intent_profiles(params: &ModelParams, top: Option<usize>) -> Result<Vec<IntentProfile>, ExplainError> {
    let alpha = params.intents()?.attention;
    Ok((0..alpha.cols())
        .map(|p| {
            let col: Vec<f64> = (0..alpha.rows()).map(|r| alpha.get(r, p)).collect();
            let mut relations: Vec<RelationWeight> = ranked(&col)
                .into_iter()
                .map(|(relation, weight)| RelationWeight { relation, weight })
                .collect();
            if let Some(n) = top {
                relations.truncate(n);
            }
            IntentProfile { intent: p, relations }
        })
        .collect())
}

pub fn explain_interaction(
    user: usize,
    item: usize,
    params: &ModelParams,
    top: Option<usize>,
) -> Result<InteractionExplanation, ExplainError> {
    if user >= params.shape.num_users {
        return Err(ExplainError::UnknownUser(user));
    }
    if item >= params.shape.num_items {
        return Err(ExplainError::UnknownItem(item));
    }
    let table = params.intents()?;
    let beta = user_intent_attention(params.user_embs().row(user), &table)?;
    let intents: Vec<IntentWeight> = ranked(&beta)
        .into_iter()
        .map(|(intent, weight)| IntentWeight { intent, weight })
        .collect();
    let top_intent = intents[0].intent;
    let top_profile = intent_profiles(params, top)?.swap_remove(top_intent);
    Ok(InteractionExplanation {
        user,
        item,
        intents,
        top_profile,
    })
}

/// Optional relation id to name mapping, one `<id> <name>` pair per line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelationNames(HashMap<usize, String>);

impl RelationNames {
    pub fn parse(text: &str) -> Result<Self, ExplainError> {
        let mut map = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, name) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| ExplainError::Names(format!("line {}: expected `<id> <name>`", n + 1)))?;
            let id = id
                .parse()
                .map_err(|_| ExplainError::Names(format!("line {}: bad id {id:?}", n + 1)))?;
            map.insert(id, name.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self, ExplainError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExplainError::Names(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn name(&self, relation: usize) -> String {
        self.0.get(&relation).cloned().unwrap_or_else(|| format!("r{relation}"))
    }
}

pub fn render_profile(profile: &IntentProfile, names: &RelationNames) -> String {
    let mut out = String::new();
    for rw in &profile.relations {
        let _ = writeln!(out, "    {:<32} {:>8.4}", names.name(rw.relation), rw.weight);
    }
    out
}

pub fn render_explanation(e: &InteractionExplanation, names: &RelationNames) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "user {} item {}", e.user, e.item);
    let _ = writeln!(out, "  intent  attention");
    for iw in &e.intents {
        let _ = writeln!(out, "  {:>6}  {:>9.4}", iw.intent, iw.weight);
    }
    let _ = writeln!(out, "  relations of intent {}:", e.top_profile.intent);
    out.push_str(&render_profile(&e.top_profile, names));
    out
}
