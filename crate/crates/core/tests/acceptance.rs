//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kgin::aggregate::{aggregate_entity_layer, final_reps, propagate, FinalReps, KgEdges};
use kgin::checkpoint::Checkpoint;
use kgin::eval::{evaluate, evaluate_reps, make_ablation, ndcg_at_k};
use kgin::graph::{Dataset, InteractionSet};
use kgin::independence::{dcor, mean_pairwise_dcor, IndependenceVariant};
use kgin::matrix::Matrix;
use kgin::model::{ModelConfig, Variant};
use kgin::synth::{
    dcor_oracle, fd_gradient_check, generate, path_equivalence, random_dataset, RandomGraphSpec, SynthSpec,
};
use kgin::train::{fit, init_params, loss_and_gradients, total_loss, Batch, LossConfig, TrainConfig, TrainSample};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Training setup for the directional experiments on synthetic data.
fn synth_train_config() -> TrainConfig {
    TrainConfig {
        dim: 32,
        num_intents: 3,
        lr: 0.01,
        batch_size: 256,
        epochs: 60,
        lambda1: 1.0,
        lambda2: 1e-2,
        l2_intent: false,
        eval_every: 10,
        patience: 100,
        ..Default::default()
    }
}

/// Planted-intent data where users share relation preferences through their
/// intent but not attribute values, so gains must come through the KG.
fn ablation_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        num_users: 300,
        num_items: 300,
        num_entities: 330,
        interactions_per_user: 8,
        test_per_user: 2,
        values_per_intent: 30,
        seed,
        ..Default::default()
    }
}

fn path_equivalence_check() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut skipped = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let entities = rng.gen_range(20..=50);
        let spec = RandomGraphSpec {
            num_users: 8,
            num_items: entities.min(15),
            num_entities: entities,
            num_relations: rng.gen_range(1..=4),
            num_triples: rng.gen_range(entities..2 * entities),
            interactions_per_user: 3,
        };
        let ds = random_dataset(&spec, seed).expect("random dataset");
        let cfg = TrainConfig {
            dim: 6,
            layers: 3,
            seed,
            ..Default::default()
        };
        let params = init_params(&cfg, &ds.index);
        let c = path_equivalence(&params, &ds.index, 3).expect("path check");
        worst = worst.max(c.max_rel_error);
        checked += c.checked;
        skipped += c.skipped;
    }
    let took = start.elapsed();
    outcome(
        worst < 1e-10 && took < Duration::from_secs(60) && skipped == 0,
        format!("20 graphs, {checked} entity-layer pairs, max rel error {worst:.2e}, {skipped} over cap, {took:.1?}"),
    )
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let spec = RandomGraphSpec {
        num_users: 5,
        num_items: 6,
        num_entities: 12,
        num_relations: 2,
        num_triples: 16,
        interactions_per_user: 3,
    };
    let ds = random_dataset(&spec, 4).expect("tiny dataset");
    let nodes = ds.index.num_users() + ds.index.num_entities();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples: Vec<TrainSample> = (0..ds.train.num_users)
        .map(|u| {
            let pos = *ds.train.positives[u].choose(&mut rng).unwrap();
            let neg = kgin::train::sample_negative(u, &ds.train, &mut rng).unwrap();
            TrainSample { user: u, pos, neg }
        })
        .collect();
    let mut lines = Vec::new();
    let mut pass = nodes <= 20;
    for variant in [IndependenceVariant::MutualInformation, IndependenceVariant::DistanceCorrelation] {
        let mut cfg = TrainConfig {
            dim: 4,
            layers: 3,
            num_intents: 3,
            lambda1: 0.5,
            lambda2: 0.1,
            seed: 11,
            ..Default::default()
        };
        cfg.independence.variant = variant;
        let lc = LossConfig::from(&cfg);
        let mut params = init_params(&cfg, &ds.index);
        let batch = Batch::new(samples.clone(), &ds.index);
        loss_and_gradients(&mut params, &ds.index, &KgEdges::new(&ds.index), &batch, &lc, false).expect("gradients");
        // every parameter class must carry gradient
        let covered = params.store.ids().all(|id| params.store.grads(id).max_abs() > 0.0);
        let base = params.clone();
        let report = fd_gradient_check(
            |store| {
                let mut p = base.clone();
                p.store = store.clone();
                total_loss(&p, &ds.index, &samples, &lc).expect("loss").total
            },
            &params.store,
            &[],
            1e-5,
        );
        pass &= covered && report.max_rel_error < 1e-4;
        lines.push(format!(
            "{variant:?}: {} entries, worst {:.2e} at {}[{},{}], all classes covered {covered}",
            report.entries_checked, report.max_rel_error, report.table, report.row, report.col
        ));
    }
    let took = start.elapsed();
    pass &= took < Duration::from_secs(120);
    outcome(pass, format!("{nodes} nodes; {}; {took:.1?}", lines.join("; ")))
}

fn dcor_oracle_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst = 0.0f64;
    let mut bounded = true;
    for trial in 0..200 {
        let n = rng.gen_range(4..=64);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y: Vec<f64> = match trial % 3 {
            0 => (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            1 => x.iter().map(|v| v * v + rng.gen_range(-0.3..0.3)).collect(),
            _ => x.iter().map(|v| 3.0 * v - 1.0 + rng.gen_range(-0.01..0.01)).collect(),
        };
        let got = dcor(&x, &y);
        let (want, degenerate) = dcor_oracle(&x, &y);
        worst = worst.max((got.value - want).abs());
        bounded &= (0.0..=1.0).contains(&got.value) && got.degenerate == degenerate;
    }
    let mut self_worst = 0.0f64;
    for _ in 0..50 {
        let x: Vec<f64> = (0..32).map(|_| rng.gen_range(-5.0..5.0)).collect();
        self_worst = self_worst.max((dcor(&x, &x).value - 1.0).abs());
    }
    outcome(
        worst < 1e-10 && self_worst < 1e-12 && bounded,
        format!("200 pairs max abs error {worst:.2e}; |dcor(x,x)-1| max {self_worst:.2e}; in [0,1]: {bounded}"),
    )
}

fn independence_direction() -> Outcome {
    let mut with = Vec::new();
    let mut without = Vec::new();
    for seed in 0..5u64 {
        let data = generate(&SynthSpec {
            seed: 7 + seed,
            ..Default::default()
        })
        .expect("synthetic data");
        let ds = data.dataset().expect("dataset");
        for (lambda1, out) in [(1.0, &mut with), (0.0, &mut without)] {
            let cfg = TrainConfig {
                lambda1,
                seed,
                eval_every: 0,
                ..synth_train_config()
            };
            let fitted = fit(&ds.train, &ds.index, None, &cfg, |_| {}).expect("training");
            out.push(mean_pairwise_dcor(&fitted.params.intents().expect("intents").embeddings));
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (a, b) = (mean(&with), mean(&without));
    outcome(
        a < b,
        format!("mean pairwise dcor with independence {a:.4}, without {b:.4}; per seed {with:.3?} vs {without:.3?}"),
    )
}

fn ablation_ordering() -> Outcome {
    let start = Instant::now();
    let base = synth_train_config();
    let mut means = Vec::new();
    for variant in Variant::ALL {
        let mut recalls = Vec::new();
        for seed in 0..5u64 {
            let ds = generate(&ablation_spec(7 + seed)).expect("data").dataset().expect("dataset");
            let cfg = TrainConfig {
                seed,
                ..make_ablation(&base, variant)
            };
            let fitted = fit(&ds.train, &ds.index, ds.test.as_ref(), &cfg, |_| {}).expect("training");
            recalls.push(fitted.best.expect("evaluated").1.recall);
        }
        means.push(recalls.iter().sum::<f64>() / recalls.len() as f64);
    }
    let (full, no_i, no_ir, mf) = (means[0], means[1], means[2], means[3]);
    let took = start.elapsed();
    outcome(
        full - no_i > 0.0 && no_i - no_ir > 0.0 && full - mf > 0.0 && took < Duration::from_secs(600),
        format!(
            "mean recall@20 full {full:.4} > no_intents {no_i:.4} > no_relations_no_intents {no_ir:.4}; mf {mf:.4}; {took:.1?}"
        ),
    )
}

/// Ranking and metrics computed the slow way: explicit dot products, a
/// selection loop for the ranking and direct set counting.
fn naive_metrics(reps: &FinalReps, train: &InteractionSet, test: &InteractionSet, k: usize) -> (f64, f64, usize) {
    let (mut recall, mut ndcg, mut n) = (0.0, 0.0, 0usize);
    for u in 0..test.num_users {
        let pos = &test.positives[u];
        if pos.is_empty() {
            continue;
        }
        let mut remaining: Vec<(usize, f64)> = (0..reps.items.rows())
            .filter(|i| !train.positives[u].contains(i))
            .map(|i| {
                let mut s = 0.0;
                for c in 0..reps.users.cols() {
                    s += reps.users.get(u, c) * reps.items.get(i, c);
                }
                (i, s)
            })
            .collect();
        let mut ranking = Vec::new();
        while !remaining.is_empty() && ranking.len() < k {
            let mut best = 0;
            for j in 1..remaining.len() {
                let (bi, bs) = remaining[best];
                let (ji, js) = remaining[j];
                if js > bs || (js == bs && ji < bi) {
                    best = j;
                }
            }
            ranking.push(remaining.remove(best).0);
        }
        let hits = ranking.iter().filter(|i| pos.contains(i)).count();
        recall += hits as f64 / pos.len() as f64;
        let mut dcg = 0.0;
        for (r, i) in ranking.iter().enumerate() {
            if pos.contains(i) {
                dcg += 1.0 / ((r + 2) as f64).log2();
            }
        }
        let mut idcg = 0.0;
        for r in 0..k.min(pos.len()) {
            idcg += 1.0 / ((r + 2) as f64).log2();
        }
        ndcg += dcg / idcg;
        n += 1;
    }
    (recall / n as f64, ndcg / n as f64, n)
}

fn metric_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut mismatches = 0;
    let mut instances = 0;
    while instances < 100 {
        let users = rng.gen_range(1..=6);
        let items = rng.gen_range(3..=15);
        let d = rng.gen_range(1..=4);
        let rand_matrix = |rng: &mut ChaCha8Rng, r: usize| {
            Matrix::from_vec(r, d, (0..r * d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        };
        let reps = FinalReps {
            users: rand_matrix(&mut rng, users),
            items: rand_matrix(&mut rng, items),
        };
        let mut train = Vec::new();
        let mut test = Vec::new();
        for _ in 0..users {
            let (mut tr, mut te) = (Vec::new(), Vec::new());
            for i in 0..items {
                match rng.gen_range(0..10) {
                    0..=1 => tr.push(i),
                    2..=4 => te.push(i),
                    _ => {}
                }
            }
            train.push(tr);
            test.push(te);
        }
        let train = InteractionSet::from_lists(items, train);
        let test = InteractionSet::from_lists(items, test);
        if test.positives.iter().all(Vec::is_empty) {
            continue;
        }
        instances += 1;
        let k = rng.gen_range(1..=items);
        let report = evaluate_reps(&reps, &ModelConfig::default(), &train, &test, k, false).expect("evaluable");
        let (r, n, users_evaluated) = naive_metrics(&reps, &train, &test, k);
        if report.recall != r || report.ndcg != n || report.num_users_evaluated != users_evaluated {
            mismatches += 1;
        }
    }
    let hand = ndcg_at_k(&[0, 5], &[0, 1], 2);
    let expected = 1.0 / (1.0 + 1.0 / 3f64.log2());
    let hand_ok = (hand - expected).abs() < 1e-10 && (hand - 0.6131).abs() < 5e-5;
    outcome(
        mismatches == 0 && hand_ok,
        format!("{mismatches} mismatches over {instances} instances; hand case ndcg {hand:.6}"),
    )
}

fn config_equivalences() -> Outcome {
    let data = generate(&SynthSpec {
        num_users: 60,
        seed: 3,
        ..Default::default()
    })
    .expect("data");
    let ds = data.dataset().expect("dataset");
    let test = ds.test.as_ref().unwrap();
    let base = TrainConfig {
        dim: 8,
        lr: 0.01,
        batch_size: 64,
        epochs: 3,
        lambda2: 1e-3,
        eval_every: 0,
        seed: 9,
        ..Default::default()
    };

    // (a) one intent without independence against the no-intents variant
    let one = TrainConfig {
        num_intents: 1,
        lambda1: 0.0,
        ..base.clone()
    };
    let a1 = fit(&ds.train, &ds.index, None, &one, |_| {}).expect("train").params;
    let a2 = fit(&ds.train, &ds.index, None, &make_ablation(&one, Variant::NoIntents), |_| {})
        .expect("train")
        .params;
    let same_values = a1
        .store
        .tables()
        .iter()
        .zip(a2.store.tables())
        .all(|(x, y)| x.values.data().iter().zip(y.values.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    let e1 = evaluate(&a1, &ds.index, &ds.train, test, 20, false).unwrap();
    let e2 = evaluate(&a2, &ds.index, &ds.train, test, 20, false).unwrap();
    let a_ok = same_values && e1.recall.to_bits() == e2.recall.to_bits() && e1.ndcg.to_bits() == e2.ndcg.to_bits();

    // (b) unit relation vectors reduce relational aggregation to the neighbor mean
    let mut p = init_params(&base, &ds.index);
    p.store.values_mut(p.relation).fill(1.0);
    let layer = aggregate_entity_layer(p.entity_embs(), &ds.index, p.relation_embs()).unwrap();
    let mut b_err = 0.0f64;
    for v in 0..ds.index.num_entities() {
        let nbs = ds.index.entity_neighbors(v);
        for c in 0..base.dim {
            let mean = if nbs.is_empty() {
                0.0
            } else {
                nbs.iter().map(|nb| p.entity_embs().get(nb.entity, c)).sum::<f64>() / nbs.len() as f64
            };
            b_err = b_err.max((layer.get(v, c) - mean).abs());
        }
    }
    let mut plain = p.clone();
    plain.config = plain.config.with_variant(Variant::NoRelationsNoIntents);
    let rel_states = propagate(&p, &ds.index).unwrap();
    let plain_states = propagate(&plain, &ds.index).unwrap();
    for l in 0..rel_states.entity_reps.len() {
        b_err = b_err.max(rel_states.entity_reps[l].max_abs_diff(&plain_states.entity_reps[l]));
    }
    let b_ok = b_err < 1e-12;

    // (c) zero layers score exactly like matrix factorization
    let zero = TrainConfig {
        layers: 0,
        lambda1: 0.0,
        ..base.clone()
    };
    let c1 = fit(&ds.train, &ds.index, None, &zero, |_| {}).expect("train").params;
    let c2 = fit(&ds.train, &ds.index, None, &make_ablation(&base, Variant::Mf), |_| {})
        .expect("train")
        .params;
    let r1 = final_reps(&c1, &ds.index).unwrap();
    let r2 = final_reps(&c2, &ds.index).unwrap();
    let mut c_ok = r1 == r2;
    for u in 0..ds.index.num_users() {
        for i in 0..ds.index.num_items() {
            let direct: f64 = (0..base.dim)
                .map(|c| c2.user_embs().get(u, c) * c2.entity_embs().get(i, c))
                .sum();
            c_ok &= (r2.score(u, i) - direct).abs() < 1e-12;
        }
    }

    outcome(
        a_ok && b_ok && c_ok,
        format!("(a) bit-identical {a_ok}; (b) max deviation {b_err:.2e}; (c) identical scores {c_ok}"),
    )
}

fn determinism() -> Outcome {
    let ds = generate(&SynthSpec::default()).expect("data").dataset().expect("dataset");
    let test = ds.test.as_ref().unwrap();
    let cfg = TrainConfig {
        dim: 16,
        lr: 0.01,
        batch_size: 128,
        epochs: 4,
        lambda1: 0.1,
        eval_every: 2,
        deterministic: true,
        seed: 5,
        ..Default::default()
    };
    let run = || {
        let fitted = fit(&ds.train, &ds.index, Some(test), &cfg, |_| {}).expect("train");
        let bytes = Checkpoint {
            config: cfg.clone(),
            params: fitted.params.clone(),
        }
        .to_bytes();
        let report = evaluate(&fitted.params, &ds.index, &ds.train, test, 20, false).unwrap();
        (bytes, report, fitted.log)
    };
    let (b1, r1, l1) = run();
    let (b2, r2, l2) = run();
    let reports_equal = r1 == r2 && r1.recall.to_bits() == r2.recall.to_bits() && r1.ndcg.to_bits() == r2.ndcg.to_bits();
    outcome(
        b1 == b2 && reports_equal && l1 == l2,
        format!("checkpoint {} bytes identical {}; reports identical {reports_equal}", b1.len(), b1 == b2),
    )
}

/// Published Last-FM statistics; runs only when the dataset directory is present.
fn lastfm_statistics() -> Option<Outcome> {
    let dir = std::env::var_os("KGIN_LASTFM_DIR").map(PathBuf::from)?;
    if !dir.join("train.txt").exists() {
        return None;
    }
    let ds = Dataset::load(&dir).expect("Last-FM loads");
    let s = ds.stats();
    let want = (23_566, 48_123, 3_034_796, 9, 464_567);
    let got = (s.users, s.items, s.interactions, s.canonical_relations, s.canonical_triplets);
    Some(outcome(got == want, format!("got {got:?}, expected {want:?}")))
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("path-expansion equivalence", path_equivalence_check),
        ("gradient correctness", gradient_check),
        ("distance-correlation oracle agreement", dcor_oracle_check),
        ("independence effect direction", independence_direction),
        ("ablation ordering", ablation_ordering),
        ("metric correctness", metric_correctness),
        ("configuration equivalences", config_equivalences),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    match lastfm_statistics() {
        Some(o) => {
            println!("{} Last-FM statistics: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            failed += usize::from(!o.pass);
        }
        None => println!("SKIP Last-FM statistics: set KGIN_LASTFM_DIR to a dataset directory to run"),
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
