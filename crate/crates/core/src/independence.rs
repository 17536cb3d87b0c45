//! Regularizers that push intent embeddings apart: a temperature-scaled
//! contrastive (mutual-information) form over cosine similarities, and the
//! sum of pairwise distance correlations.
//!
//! Distance correlation treats the `d` coordinates of an embedding as `d`
//! scalar observations of one variable, so `dcor(e_p, e_q)` compares two
//! length-`d` samples.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grad::{GradError, Tape, Var};
use crate::matrix::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndependenceError {
    #[error("intent {intent} has a zero embedding; cosine similarity is undefined")]
    ZeroNormIntent { intent: usize },
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("need at least one intent")]
    NoIntents,
    #[error(transparent)]
    Grad(#[from] GradError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IndependenceVariant {
    #[default]
    MutualInformation,
    DistanceCorrelation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndependenceConfig {
    pub variant: IndependenceVariant,
    pub tau: f64,
}

impl Default for IndependenceConfig {
    fn default() -> Self {
        Self {
            variant: IndependenceVariant::MutualInformation,
            tau: 1.0,
        }
    }
}

/// A distance-correlation value; `degenerate` is set when either input is
/// constant (zero distance variance) and the value was defined as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DCor {
    pub value: f64,
    pub degenerate: bool,
}

struct Centered {
    a: Vec<f64>,
    n: usize,
}

/// Double-centered pairwise distance matrix of a 1-D sample.
fn centered_distances(x: &[f64]) -> Centered {
    let n = x.len();
    let mut a = vec![0.0; n * n];
    for j in 0..n {
        for k in 0..n {
            a[j * n + k] = (x[j] - x[k]).abs();
        }
    }
    let row_mean: Vec<f64> = (0..n)
        .map(|j| a[j * n..(j + 1) * n].iter().sum::<f64>() / n as f64)
        .collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    // the distance matrix is symmetric, so column means equal row means
    for j in 0..n {
        for k in 0..n {
            a[j * n + k] += grand - row_mean[j] - row_mean[k];
        }
    }
    Centered { a, n }
}

fn mean_product(a: &Centered, b: &Centered) -> f64 {
    let n2 = (a.n * a.n) as f64;
    a.a.iter().zip(&b.a).map(|(x, y)| x * y).sum::<f64>() / n2
}

struct Moments {
    cx: Centered,
    cy: Centered,
    sxy: f64,
    sxx: f64,
    syy: f64,
}

fn moments(x: &[f64], y: &[f64]) -> Moments {
    let cx = centered_distances(x);
    let cy = centered_distances(y);
    let sxy = mean_product(&cx, &cy).max(0.0);
    let sxx = mean_product(&cx, &cx);
    let syy = mean_product(&cy, &cy);
    Moments {
        cx,
        cy,
        sxy,
        sxx,
        syy,
    }
}

/// Sample distance correlation of two equal-length vectors, in `[0, 1]`.
pub fn dcor(x: &[f64], y: &[f64]) -> DCor {
    assert_eq!(x.len(), y.len(), "dcor needs equal-length inputs");
    let m = moments(x, y);
    if m.sxx <= 0.0 || m.syy <= 0.0 {
        return DCor {
            value: 0.0,
            degenerate: true,
        };
    }
    let value = (m.sxy.sqrt() / (m.sxx.sqrt() * m.syy.sqrt()).sqrt()).min(1.0);
    DCor {
        value,
        degenerate: false,
    }
}

/// Gradient of [`dcor`] with respect to both inputs (zero on degenerate inputs).
pub(crate) fn dcor_gradient(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let m = moments(x, y);
    if m.sxx <= 0.0 || m.syy <= 0.0 || m.sxy <= 0.0 {
        return (vec![0.0; n], vec![0.0; n]);
    }
    let v = m.sxy.sqrt() / (m.sxx.sqrt() * m.syy.sqrt()).sqrt();
    let n2 = (n * n) as f64;
    // d v / d a_jk for each distance matrix, then through |x_j - x_k|
    let grad_wrt = |sample: &[f64], own: &Centered, other: &Centered, s_own: f64| {
        let mut g = vec![0.0; n];
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                let dk = sample[j] - sample[k];
                if dk == 0.0 {
                    continue;
                }
                let gjk = v / n2 * (other.a[j * n + k] / (2.0 * m.sxy) - own.a[j * n + k] / (2.0 * s_own));
                acc += gjk * dk.signum();
            }
            g[j] = 2.0 * acc;
        }
        g
    };
    let gx = grad_wrt(x, &m.cx, &m.cy, m.sxx);
    let gy = grad_wrt(y, &m.cy, &m.cx, m.syy);
    (gx, gy)
}

/// Sum of distance correlations over unordered pairs of distinct intents.
#[derive(Debug, Clone, PartialEq)]
pub struct DCorLoss {
    pub value: f64,
    pub pairs: usize,
    /// Pairs `(p, q)` whose correlation hit the zero-variance guard.
    pub degenerate_pairs: Vec<(usize, usize)>,
}

pub fn dcor_loss(intents: &Matrix) -> DCorLoss {
    let p = intents.rows();
    let mut value = 0.0;
    let mut degenerate_pairs = Vec::new();
    for a in 0..p {
        for b in a + 1..p {
            let d = dcor(intents.row(a), intents.row(b));
            if d.degenerate {
                degenerate_pairs.push((a, b));
            }
            value += d.value;
        }
    }
    DCorLoss {
        value,
        pairs: p * p.saturating_sub(1) / 2,
        degenerate_pairs,
    }
}

/// Mean pairwise distance correlation among intents (0 when fewer than two).
pub fn mean_pairwise_dcor(intents: &Matrix) -> f64 {
    let l = dcor_loss(intents);
    if l.pairs == 0 {
        0.0
    } else {
        l.value / l.pairs as f64
    }
}

fn check_rows(intents: &Matrix) -> Result<(), IndependenceError> {
    if intents.rows() == 0 {
        return Err(IndependenceError::NoIntents);
    }
    for p in 0..intents.rows() {
        if intents.row(p).iter().all(|&v| v == 0.0) {
            return Err(IndependenceError::ZeroNormIntent { intent: p });
        }
    }
    Ok(())
}

/// Records the contrastive loss
/// `sum_p -log( exp(s(p,p)/tau) / sum_q exp(s(p,q)/tau) )` with cosine `s`.
pub fn mi_loss_on_tape(tape: &mut Tape, intents: Var, tau: f64) -> Result<Var, IndependenceError> {
    if !(tau > 0.0) {
        return Err(IndependenceError::BadTemperature(tau));
    }
    check_rows(tape.value(intents))?;
    let unit = tape.normalize_rows(intents)?;
    let sim = tape.matmul_nt(unit, unit)?;
    let logits = tape.scale(sim, 1.0 / tau);
    let log_probs = tape.log_softmax_rows(logits);
    let own = tape.diag(log_probs)?;
    let total = tape.sum(own);
    Ok(tape.scale(total, -1.0))
}

/// Records the pairwise distance-correlation loss.
pub fn dcor_loss_on_tape(tape: &mut Tape, intents: Var) -> Result<Var, IndependenceError> {
    let p = tape.value(intents).rows();
    if p == 0 {
        return Err(IndependenceError::NoIntents);
    }
    let rows: Vec<Var> = (0..p)
        .map(|k| tape.gather(intents, std::sync::Arc::from(vec![k])))
        .collect::<Result<_, _>>()?;
    let mut terms = Vec::new();
    for a in 0..p {
        for b in a + 1..p {
            terms.push(tape.dcor(rows[a], rows[b])?);
        }
    }
    let Some((&first, rest)) = terms.split_first() else {
        let zero = tape.constant(Matrix::scalar(0.0));
        return Ok(zero);
    };
    let mut acc = first;
    for &t in rest {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// Records the configured independence loss.
pub fn independence_on_tape(
    tape: &mut Tape,
    intents: Var,
    cfg: &IndependenceConfig,
) -> Result<Var, IndependenceError> {
    match cfg.variant {
        IndependenceVariant::MutualInformation => mi_loss_on_tape(tape, intents, cfg.tau),
        IndependenceVariant::DistanceCorrelation => dcor_loss_on_tape(tape, intents),
    }
}

/// Value of the contrastive independence loss.
pub fn mi_loss(intents: &Matrix, tau: f64) -> Result<f64, IndependenceError> {
    let mut tape = Tape::new();
    let v = tape.constant(intents.clone());
    let l = mi_loss_on_tape(&mut tape, v, tau)?;
    Ok(tape.value(l).item())
}
