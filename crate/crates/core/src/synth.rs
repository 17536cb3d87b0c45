//! Synthetic datasets with planted intents, and brute-force oracles that
//! share no kernels with the engine.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{count_paths, enumerate_paths_oracle, propagate, AggregateError, MAX_PATH_DEPTH, PATH_CAP};
use crate::grad::{ParamId, ParamStore};
use crate::graph::{Dataset, GraphError, GraphIndex, InteractionSet, Triple, TripleSet};
use crate::model::ModelParams;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible spec: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("spec file: {0}")]
    Spec(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Parameters of a planted-intent dataset.
///
/// Entities `0..num_items` are items; the rest are attribute values split
/// evenly across the canonical relations. Every item has one value per
/// relation. Each user follows one planted intent, which weights relations by
/// its mixture, and has a preferred value per relation; the user's positives
/// are the items that best match those preferences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_users: usize,
    pub num_items: usize,
    pub num_entities: usize,
    pub num_relations: usize,
    pub num_intents: usize,
    /// Per-intent relation mixture; generated when absent.
    pub mixtures: Option<Vec<Vec<f64>>>,
    /// Positives per user, train and test together.
    pub interactions_per_user: usize,
    /// Positives per user held out for testing.
    pub test_per_user: usize,
    /// Users of an intent draw preferred values from this many per relation.
    pub values_per_intent: usize,
    /// Standard deviation of score noise when picking positives.
    pub noise: f64,
    /// All relations draw from one attribute pool, so an entity's meaning
    /// depends on the relation it is reached through.
    pub shared_values: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_users: 200,
            num_items: 100,
            num_entities: 150,
            num_relations: 6,
            num_intents: 3,
            mixtures: None,
            interactions_per_user: 10,
            test_per_user: 2,
            values_per_intent: 2,
            noise: 0.05,
            shared_values: true,
            seed: 7,
        }
    }
}

/// Planted structure behind a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub user_intent: Vec<usize>,
    pub mixtures: Vec<Vec<f64>>,
    /// `preferred[u][r]` is the attribute entity user `u` favors under relation `r`.
    pub preferred: Vec<Vec<usize>>,
    /// `item_values[i][r]` is item `i`'s attribute entity under relation `r`.
    pub item_values: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub train: InteractionSet,
    pub test: InteractionSet,
    /// Canonical triples (no inverse relations).
    pub kg: TripleSet,
    pub truth: GroundTruth,
}

impl SynthData {
    pub fn dataset(&self) -> Result<Dataset, SynthError> {
        Ok(Dataset::from_parts(
            self.train.clone(),
            Some(self.test.clone()),
            self.kg.clone(),
            Vec::new(),
        )?)
    }

    /// Writes the dataset files plus `truth.json`.
    pub fn save(&self, dir: &Path) -> Result<(), SynthError> {
        std::fs::create_dir_all(dir)?;
        self.train.save(&dir.join(crate::graph::TRAIN_FILE))?;
        self.test.save(&dir.join(crate::graph::TEST_FILE))?;
        let mut kg = String::new();
        for t in self.kg.triples() {
            kg.push_str(&format!("{} {} {}\n", t.head, t.relation, t.tail));
        }
        std::fs::write(dir.join(crate::graph::KG_FILE), kg)?;
        let truth = serde_json::to_string_pretty(&self.truth).expect("truth serializes");
        std::fs::write(dir.join("truth.json"), truth)?;
        Ok(())
    }
}

impl SynthSpec {
    pub fn from_toml_str(s: &str) -> Result<Self, SynthError> {
        toml::from_str(s).map_err(|e| SynthError::Spec(e.to_string()))
    }

    pub fn mixtures(&self) -> Vec<Vec<f64>> {
        if let Some(m) = &self.mixtures {
            return m.clone();
        }
        // intent p leans on two relations of its own
        let r = self.num_relations;
        (0..self.num_intents)
            .map(|p| {
                let mut w = vec![0.1; r];
                w[(2 * p) % r] = 1.0;
                w[(2 * p + 1) % r] = 1.0;
                let z: f64 = w.iter().sum();
                w.iter().map(|v| v / z).collect()
            })
            .collect()
    }

    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Infeasible(m));
        if self.num_relations == 0 || self.num_intents == 0 || self.num_users == 0 {
            return bad("users, relations and intents must be positive".into());
        }
        if self.interactions_per_user > self.num_items {
            return bad(format!(
                "{} interactions per user but only {} items",
                self.interactions_per_user, self.num_items
            ));
        }
        if self.test_per_user >= self.interactions_per_user {
            return bad("test_per_user must leave at least one training positive".into());
        }
        if self.num_entities < self.num_items + self.num_relations {
            return bad("need at least one attribute entity per relation".into());
        }
        if self.values_per_intent == 0 {
            return bad("values_per_intent must be positive".into());
        }
        let m = self.mixtures();
        if m.len() != self.num_intents {
            return bad(format!("{} mixtures for {} intents", m.len(), self.num_intents));
        }
        for (p, w) in m.iter().enumerate() {
            let s: f64 = w.iter().sum();
            if w.len() != self.num_relations || w.iter().any(|&v| !(v >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return bad(format!("mixture {p} is not a probability vector over the relations"));
            }
        }
        Ok(())
    }
}

/// Builds a dataset from `spec`; a pure function of the spec.
pub fn generate(spec: &SynthSpec) -> Result<SynthData, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let r = spec.num_relations;
    let attrs = spec.num_entities - spec.num_items;
    // without sharing, relation k owns attribute entities num_items + [k*attrs/r, (k+1)*attrs/r)
    let pool = |k: usize| -> Vec<usize> {
        if spec.shared_values {
            (spec.num_items..spec.num_entities).collect()
        } else {
            (spec.num_items + k * attrs / r..spec.num_items + (k + 1) * attrs / r).collect()
        }
    };
    let pools: Vec<Vec<usize>> = (0..r).map(pool).collect();

    let item_values: Vec<Vec<usize>> = (0..spec.num_items)
        .map(|_| pools.iter().map(|p| *p.choose(&mut rng).expect("nonempty pool")).collect())
        .collect();
    let mut triples = Vec::with_capacity(spec.num_items * r);
    for (i, vals) in item_values.iter().enumerate() {
        for (k, &v) in vals.iter().enumerate() {
            triples.push(Triple::new(i, k, v));
        }
    }
    let kg = TripleSet::canonical(triples).with_min_entities(spec.num_entities);

    let mixtures = spec.mixtures();
    // values an intent's users favor, per relation
    let intent_values: Vec<Vec<Vec<usize>>> = (0..spec.num_intents)
        .map(|_| {
            pools
                .iter()
                .map(|p| {
                    let n = spec.values_per_intent.min(p.len());
                    p.choose_multiple(&mut rng, n).copied().collect()
                })
                .collect()
        })
        .collect();

    let mut user_intent = Vec::with_capacity(spec.num_users);
    let mut preferred = Vec::with_capacity(spec.num_users);
    let mut train = Vec::with_capacity(spec.num_users);
    let mut test = Vec::with_capacity(spec.num_users);
    for _ in 0..spec.num_users {
        let p = rng.gen_range(0..spec.num_intents);
        let pref: Vec<usize> = intent_values[p]
            .iter()
            .map(|vals| *vals.choose(&mut rng).expect("nonempty"))
            .collect();
        let mut scored: Vec<(f64, usize)> = item_values
            .iter()
            .enumerate()
            .map(|(i, vals)| {
                let s: f64 = (0..r).filter(|&k| vals[k] == pref[k]).map(|k| mixtures[p][k]).sum();
                (s + spec.noise * gaussian(&mut rng), i)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut chosen: Vec<usize> = scored[..spec.interactions_per_user].iter().map(|&(_, i)| i).collect();
        chosen.shuffle(&mut rng);
        let (te, tr) = chosen.split_at(spec.test_per_user);
        test.push(te.to_vec());
        train.push(tr.to_vec());
        user_intent.push(p);
        preferred.push(pref);
    }

    Ok(SynthData {
        train: InteractionSet::from_lists(spec.num_items, train),
        test: InteractionSet::from_lists(spec.num_items, test),
        kg,
        truth: GroundTruth {
            user_intent,
            mixtures,
            preferred,
            item_values,
        },
    })
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Distance correlation straight from the definition: full distance
/// matrices, explicit row, column and grand means, nested loops.
/// Returns `(value, degenerate)`.
pub fn dcor_oracle(x: &[f64], y: &[f64]) -> (f64, bool) {
    let n = x.len();
    assert_eq!(n, y.len());
    let centered = |v: &[f64]| -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; n]; n];
        for j in 0..n {
            for k in 0..n {
                d[j][k] = (v[j] - v[k]).abs();
            }
        }
        let mut row = vec![0.0; n];
        let mut col = vec![0.0; n];
        let mut grand = 0.0;
        for j in 0..n {
            for k in 0..n {
                row[j] += d[j][k];
                col[k] += d[j][k];
                grand += d[j][k];
            }
        }
        let nf = n as f64;
        let mut a = vec![vec![0.0; n]; n];
        for j in 0..n {
            for k in 0..n {
                a[j][k] = d[j][k] - row[j] / nf - col[k] / nf + grand / (nf * nf);
            }
        }
        a
    };
    let a = centered(x);
    let b = centered(y);
    let cov = |p: &Vec<Vec<f64>>, q: &Vec<Vec<f64>>| -> f64 {
        let mut s = 0.0;
        for j in 0..n {
            for k in 0..n {
                s += p[j][k] * q[j][k];
            }
        }
        s / (n * n) as f64
    };
    let vx = cov(&a, &a);
    let vy = cov(&b, &b);
    if vx <= 0.0 || vy <= 0.0 {
        return (0.0, true);
    }
    let dcov2 = cov(&a, &b).max(0.0);
    ((dcov2 / (vx * vy).sqrt()).sqrt().min(1.0), false)
}

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub table: String,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

/// Compares `store`'s gradient buffers against central differences of `loss`
/// over every entry of the listed tables (all tables when `tables` is empty).
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn fd_gradient_check<F>(loss: F, store: &ParamStore, tables: &[ParamId], step: f64) -> FdReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let ids: Vec<ParamId> = if tables.is_empty() { store.ids().collect() } else { tables.to_vec() };
    let mut entries = Vec::new();
    for id in ids {
        let (rows, cols) = store.values(id).shape();
        for r in 0..rows {
            for c in 0..cols {
                entries.push((id, r, c));
            }
        }
    }
    fd_gradient_check_entries(loss, store, &entries, step)
}

/// [`fd_gradient_check`] restricted to the given `(table, row, col)` entries.
pub fn fd_gradient_check_entries<F>(
    mut loss: F,
    store: &ParamStore,
    entries: &[(ParamId, usize, usize)],
    step: f64,
) -> FdReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut probe = store.clone();
    let mut report = FdReport {
        max_rel_error: 0.0,
        table: String::new(),
        row: 0,
        col: 0,
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
    };
    for &(id, r, c) in entries {
        let x = store.values(id).get(r, c);
        probe.values_mut(id).set(r, c, x + step);
        let up = loss(&probe);
        probe.values_mut(id).set(r, c, x - step);
        let down = loss(&probe);
        probe.values_mut(id).set(r, c, x);
        let numeric = (up - down) / (2.0 * step);
        let analytic = store.grads(id).get(r, c);
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
        report.entries_checked += 1;
        if rel > report.max_rel_error || report.table.is_empty() {
            report.max_rel_error = rel.max(report.max_rel_error);
            report.table = store.get(id).name.clone();
            report.row = r;
            report.col = c;
            report.analytic = analytic;
            report.numeric = numeric;
        }
    }
    report
}

/// Small random instance: uniformly drawn interactions and canonical triples
/// over the given sizes, with inverse relations added and the index built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomGraphSpec {
    pub num_users: usize,
    pub num_items: usize,
    pub num_entities: usize,
    pub num_relations: usize,
    pub num_triples: usize,
    pub interactions_per_user: usize,
}

impl Default for RandomGraphSpec {
    fn default() -> Self {
        Self {
            num_users: 12,
            num_items: 15,
            num_entities: 40,
            num_relations: 3,
            num_triples: 45,
            interactions_per_user: 3,
        }
    }
}

pub fn random_dataset(spec: &RandomGraphSpec, seed: u64) -> Result<Dataset, SynthError> {
    if spec.interactions_per_user > spec.num_items || spec.num_entities < spec.num_items || spec.num_relations == 0 {
        return Err(SynthError::Infeasible(format!("{spec:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items: Vec<usize> = (0..spec.num_items).collect();
    let lists: Vec<Vec<usize>> = (0..spec.num_users)
        .map(|_| items.choose_multiple(&mut rng, spec.interactions_per_user).copied().collect())
        .collect();
    let triples: Vec<Triple> = (0..spec.num_triples)
        .map(|_| {
            Triple::new(
                rng.gen_range(0..spec.num_entities),
                rng.gen_range(0..spec.num_relations),
                rng.gen_range(0..spec.num_entities),
            )
        })
        .collect();
    let kg = TripleSet::canonical(triples).with_min_entities(spec.num_entities);
    Ok(Dataset::from_parts(
        InteractionSet::from_lists(spec.num_items, lists),
        None,
        kg,
        Vec::new(),
    )?)
}

/// Largest disagreement between layered propagation and explicit path
/// enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathCheck {
    /// Max over entities and layers of `max|a - b| / max(max|b|, 1e-300)`.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entity-layer pairs skipped because they exceed the path cap.
    pub skipped: usize,
}

/// Compares `propagate`'s entity layers `1..=depth` with
/// [`enumerate_paths_oracle`] for every entity.
pub fn path_equivalence(params: &ModelParams, graph: &GraphIndex, depth: usize) -> Result<PathCheck, AggregateError> {
    let states = propagate(params, graph)?;
    let mut out = PathCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for l in 1..=depth.min(states.num_layers()).min(MAX_PATH_DEPTH) {
        for v in 0..graph.num_entities() {
            if count_paths(graph, v, l) > PATH_CAP {
                out.skipped += 1;
                continue;
            }
            let oracle = enumerate_paths_oracle(graph, params.entity_embs(), params.relation_embs(), v, l)?;
            let got = states.entity_reps[l].row(v);
            let scale = oracle.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
            let diff = got.iter().zip(&oracle).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            out.max_rel_error = out.max_rel_error.max(diff / scale);
            out.checked += 1;
        }
    }
    Ok(out)
}

/// Fraction of users whose argmax intent matches the planted intent under
/// the best relabeling of learned intents.
pub fn best_permutation_accuracy(assigned: &[usize], truth: &[usize], num_intents: usize) -> f64 {
    assert_eq!(assigned.len(), truth.len());
    let mut counts = vec![vec![0usize; num_intents]; num_intents];
    for (&a, &t) in assigned.iter().zip(truth) {
        counts[a][t] += 1;
    }
    let mut perm: Vec<usize> = (0..num_intents).collect();
    let mut best = 0;
    permute(&mut perm, 0, &mut |p| {
        let hits: usize = (0..num_intents).map(|a| counts[a][p[a]]).sum();
        best = best.max(hits);
    });
    best as f64 / truth.len().max(1) as f64
}

fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}
