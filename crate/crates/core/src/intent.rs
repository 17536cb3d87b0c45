//! Intent embeddings as attention-weighted mixtures of relation embeddings,
//! and per-user attention over intents.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grad::{GradError, Tape, Var};
use crate::matrix::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntentError {
    #[error("at least one relation is required to build intents")]
    NoRelations,
    #[error("at least one intent is required")]
    NoIntents,
    #[error("relation logits are {logits:?} but there are {relations} relations")]
    ShapeMismatch {
        logits: (usize, usize),
        relations: usize,
    },
    #[error("relation logits contain a non-finite value")]
    NonFiniteLogits,
    #[error(transparent)]
    Grad(#[from] GradError),
}

/// Relation-to-intent attention logits `w`, shape `(num_relations, num_intents)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentConfig {
    pub num_intents: usize,
    pub relation_logits: Matrix,
}

impl IntentConfig {
    /// Zero logits give uniform attention over relations for every intent.
    pub fn uniform(num_relations: usize, num_intents: usize) -> Self {
        Self {
            num_intents,
            relation_logits: Matrix::zeros(num_relations, num_intents),
        }
    }

    fn validate(&self, num_relations: usize) -> Result<(), IntentError> {
        if num_relations == 0 {
            return Err(IntentError::NoRelations);
        }
        if self.num_intents == 0 {
            return Err(IntentError::NoIntents);
        }
        if self.relation_logits.shape() != (num_relations, self.num_intents) {
            return Err(IntentError::ShapeMismatch {
                logits: self.relation_logits.shape(),
                relations: num_relations,
            });
        }
        if !self.relation_logits.is_finite() {
            return Err(IntentError::NonFiniteLogits);
        }
        Ok(())
    }
}

/// Intent embeddings `(num_intents, d)` and relation attention `(num_relations, num_intents)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentTable {
    pub embeddings: Matrix,
    pub attention: Matrix,
}

/// Records `alpha = softmax over relations of w[:, p]` and `e_p = sum_r alpha[r, p] e_r`.
/// Returns `(alpha, intents)`.
pub fn intents_on_tape(
    tape: &mut Tape,
    relation_logits: Var,
    relation_embs: Var,
) -> Result<(Var, Var), IntentError> {
    let alpha = tape.softmax_cols(relation_logits);
    let intents = tape.matmul_tn(alpha, relation_embs)?;
    Ok((alpha, intents))
}

/// Records `beta[u, p] = softmax over p of e_p . e_u`, shape `(users, num_intents)`.
pub fn attention_on_tape(tape: &mut Tape, users: Var, intents: Var) -> Result<Var, IntentError> {
    let logits = tape.matmul_nt(users, intents)?;
    Ok(tape.softmax_rows(logits))
}

pub fn compute_intents(cfg: &IntentConfig, relation_embs: &Matrix) -> Result<IntentTable, IntentError> {
    cfg.validate(relation_embs.rows())?;
    let mut tape = Tape::new();
    let w = tape.constant(cfg.relation_logits.clone());
    let r = tape.constant(relation_embs.clone());
    let (alpha, intents) = intents_on_tape(&mut tape, w, r)?;
    Ok(IntentTable {
        embeddings: tape.value(intents).clone(),
        attention: tape.value(alpha).clone(),
    })
}

/// Attention of one user over all intents, computed from the user's layer-0 embedding.
pub fn user_intent_attention(user_emb0: &[f64], intents: &IntentTable) -> Result<Vec<f64>, IntentError> {
    let mut tape = Tape::new();
    let u = tape.constant(Matrix::row_vector(user_emb0));
    let p = tape.constant(intents.embeddings.clone());
    let beta = attention_on_tape(&mut tape, u, p)?;
    Ok(tape.value(beta).data().to_vec())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn table(embs: &[Vec<f64>]) -> IntentTable {
        IntentTable {
            embeddings: Matrix::from_rows(embs),
            attention: Matrix::zeros(1, embs.len()),
        }
    }

    #[test]
    fn equal_logits_average_relations() {
        let cfg = IntentConfig::uniform(2, 1);
        let rel = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let t = compute_intents(&cfg, &rel).unwrap();
        assert_eq!(t.embeddings.data(), &[0.5, 0.5]);
    }

    #[test]
    fn ln2_logit_gives_two_thirds() {
        let cfg = IntentConfig {
            num_intents: 1,
            relation_logits: Matrix::from_rows(&[vec![2f64.ln()], vec![0.0]]),
        };
        let rel = Matrix::from_rows(&[vec![1.0], vec![1.0]]);
        let t = compute_intents(&cfg, &rel).unwrap();
        assert!((t.attention.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((t.attention.get(1, 0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_relation_single_intent_copies_relation() {
        let cfg = IntentConfig {
            num_intents: 1,
            relation_logits: Matrix::scalar(0.37),
        };
        let rel = Matrix::row_vector(&[0.25, -3.0, 7.5]);
        let t = compute_intents(&cfg, &rel).unwrap();
        assert_eq!(t.embeddings, rel);
    }

    #[test]
    fn no_relations_is_an_error() {
        let cfg = IntentConfig::uniform(0, 2);
        assert_eq!(
            compute_intents(&cfg, &Matrix::zeros(0, 4)).unwrap_err(),
            IntentError::NoRelations
        );
    }

    #[test]
    fn identical_intents_give_uniform_beta() {
        let t = table(&[vec![0.3, 0.1], vec![0.3, 0.1], vec![0.3, 0.1]]);
        let b = user_intent_attention(&[2.0, -1.0], &t).unwrap();
        for v in b {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_user_gives_uniform_beta() {
        let t = table(&[vec![0.3, 0.1], vec![-1.0, 2.0]]);
        assert_eq!(user_intent_attention(&[0.0, 0.0], &t).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn beta_closed_form() {
        let t = table(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let b = user_intent_attention(&[1.0, 0.0], &t).unwrap();
        let e = std::f64::consts::E;
        assert!((b[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((b[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!((b[0] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn alpha_columns_sum_to_one() {
        let cfg = IntentConfig {
            num_intents: 3,
            relation_logits: Matrix::from_rows(&[
                vec![1.0, -2.0, 0.5],
                vec![0.0, 3.0, 0.5],
                vec![-1.0, 0.1, 9.0],
                vec![2.5, 0.0, -4.0],
            ]),
        };
        let t = compute_intents(&cfg, &Matrix::filled(4, 2, 1.0)).unwrap();
        for p in 0..3 {
            let s: f64 = (0..4).map(|r| t.attention.get(r, p)).sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!((0..4).all(|r| t.attention.get(r, p) > 0.0 && t.attention.get(r, p) < 1.0));
        }
    }

    proptest! {
        #[test]
        fn intents_linear_in_relations(
            rel in prop::collection::vec(-3.0f64..3.0, 12),
            logits in prop::collection::vec(-2.0f64..2.0, 8),
            c in -4.0f64..4.0,
        ) {
            let cfg = IntentConfig { num_intents: 2, relation_logits: Matrix::from_vec(4, 2, logits) };
            let rel = Matrix::from_vec(4, 3, rel);
            let a = compute_intents(&cfg, &rel).unwrap();
            let b = compute_intents(&cfg, &rel.scale(c)).unwrap();
            prop_assert!(a.embeddings.scale(c).max_abs_diff(&b.embeddings) < 1e-12);
        }

        #[test]
        fn beta_shift_invariant(
            user in prop::collection::vec(-2.0f64..2.0, 3),
            intents in prop::collection::vec(-2.0f64..2.0, 9),
            shift in -5.0f64..5.0,
        ) {
            // shifting every logit e_p . e_u by the same constant: add k*u/|u|^2 to all intents
            let norm2: f64 = user.iter().map(|v| v * v).sum();
            prop_assume!(norm2 > 1e-3);
            let base = Matrix::from_vec(3, 3, intents);
            let mut shifted = base.clone();
            for p in 0..3 {
                for (k, v) in shifted.row_mut(p).iter_mut().enumerate() {
                    *v += shift * user[k] / norm2;
                }
            }
            let a = user_intent_attention(&user, &IntentTable { embeddings: base, attention: Matrix::zeros(1, 3) }).unwrap();
            let b = user_intent_attention(&user, &IntentTable { embeddings: shifted, attention: Matrix::zeros(1, 3) }).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
