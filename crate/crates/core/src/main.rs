use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kgin::checkpoint::Checkpoint;
use kgin::eval::{evaluate, make_ablation, ndcg_at_k, recall_at_k};
use kgin::explain::{explain_interaction, intent_profiles, render_explanation, render_profile, RelationNames};
use kgin::graph::{k_core_filter, Dataset};
use kgin::independence::{dcor, dcor_loss, mean_pairwise_dcor};
use kgin::model::{ModelParams, ModelShape, Variant};
use kgin::synth::{
    dcor_oracle, fd_gradient_check_entries, generate, path_equivalence, random_dataset, RandomGraphSpec, SynthSpec,
};
use kgin::train::{
    fit, init_params, loss_and_gradients, sample_negative, total_loss, Batch, LossConfig, TrainConfig, TrainSample,
};

#[derive(Parser)]
#[command(name = "kgin", version, about = "Intent-aware knowledge-graph recommender")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// TOML training config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "model.ckpt")]
        out: PathBuf,
        /// JSON-lines training log.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        variant: Option<Variant>,
        /// Serial accumulation for bit-reproducible runs.
        #[arg(long)]
        deterministic: bool,
    },
    /// Evaluate a checkpoint with all-ranking recall@K and ndcg@K.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 20)]
        k: usize,
        /// Score the checkpoint under another variant's structure.
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        json: bool,
    },
    /// Rank a user's intents and show the top intent's relation profile.
    Explain {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        user: usize,
        #[arg(long)]
        item: usize,
        /// File of `<relation id> <name>` lines.
        #[arg(long)]
        names: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        top: usize,
        #[arg(long)]
        json: bool,
    },
    /// Mean pairwise distance correlation among a checkpoint's intents.
    MeasureDcor {
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Check layered propagation against explicit path enumeration.
    VerifyPaths {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        entities: usize,
        #[arg(long, default_value_t = 3)]
        depth: usize,
    },
    /// Generate a planted-intent synthetic dataset.
    GenSynth {
        /// TOML spec; defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the oracle suite against a dataset directory.
    Verify {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Apply k-core filtering to a raw dataset directory.
    Preprocess {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Train {
            data,
            config,
            out,
            log,
            epochs,
            seed,
            variant,
            deterministic,
        } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::from_file(&p)?,
                None => TrainConfig::default(),
            };
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(v) = variant {
                cfg.variant = v;
            }
            cfg.deterministic |= deterministic;
            let ds = load(&data)?;
            let mut sink = match log {
                Some(p) => Some(BufWriter::new(File::create(&p).with_context(|| p.display().to_string())?)),
                None => None,
            };
            let mut write_err = None;
            let outcome = fit(&ds.train, &ds.index, ds.test.as_ref(), &cfg, |rec| {
                let line = serde_json::to_string(rec).expect("record serializes");
                eprintln!("{line}");
                if let Some(w) = sink.as_mut() {
                    if let Err(e) = writeln!(w, "{line}") {
                        write_err.get_or_insert(e);
                    }
                }
            });
            let outcome = match outcome {
                Ok(o) => o,
                Err(kgin::train::TrainError::NonFiniteLoss { last_good, epoch, batch, value }) => {
                    Checkpoint { config: cfg, params: *last_good }.save(&out)?;
                    bail!("non-finite loss {value} at epoch {epoch}, batch {batch}; last good parameters saved to {}", out.display());
                }
                Err(kgin::train::TrainError::Step { last_good, epoch, batch, source }) => {
                    Checkpoint { config: cfg, params: *last_good }.save(&out)?;
                    bail!("update failed at epoch {epoch}, batch {batch}: {source}; last good parameters saved to {}", out.display());
                }
                Err(e) => return Err(e.into()),
            };
            if let Some(e) = write_err {
                return Err(e).context("writing training log");
            }
            if let Some(mut w) = sink {
                w.flush()?;
            }
            if let Some((epoch, report)) = &outcome.best {
                println!("best epoch {epoch}: {report}");
            }
            Checkpoint { config: cfg, params: outcome.params }.save(&out)?;
            println!("wrote {}", out.display());
        }
        Cmd::Eval {
            ckpt,
            data,
            k,
            variant,
            json,
        } => {
            let ck = Checkpoint::load(&ckpt)?;
            let ds = load(&data)?;
            check_shape(&ck.params, &ds)?;
            let mut params = ck.params;
            if let Some(v) = variant {
                let cfg = make_ablation(&ck.config, v).model_config();
                if cfg.num_intents != params.config.num_intents {
                    bail!("variant {v} needs {} intents but the checkpoint has {}", cfg.num_intents, params.config.num_intents);
                }
                params.config = cfg;
            }
            let test = ds.test.as_ref().context("dataset has no test.txt")?;
            let report = evaluate(&params, &ds.index, &ds.train, test, k, true)?;
            if json {
                println!("{}", serde_json::to_string(&report)?);
            } else {
                println!("{report}");
            }
        }
        Cmd::Explain {
            ckpt,
            user,
            item,
            names,
            top,
            json,
        } => {
            let ck = Checkpoint::load(&ckpt)?;
            let names = match names {
                Some(p) => RelationNames::load(&p)?,
                None => RelationNames::default(),
            };
            let e = explain_interaction(user, item, &ck.params, Some(top))?;
            if json {
                println!("{}", serde_json::to_string_pretty(&e)?);
            } else {
                println!("note: intent attention depends on the user only; the item is shown for reference");
                print!("{}", render_explanation(&e, &names));
                println!("all intents:");
                for prof in intent_profiles(&ck.params, Some(top))? {
                    println!("  intent {}", prof.intent);
                    print!("{}", render_profile(&prof, &names));
                }
            }
        }
        Cmd::MeasureDcor { ckpt } => {
            let ck = Checkpoint::load(&ckpt)?;
            let intents = ck.params.intents()?.embeddings;
            let loss = dcor_loss(&intents);
            println!(
                "intents={} mean_pairwise_dcor={:.6} pairs={} degenerate_pairs={}",
                intents.rows(),
                mean_pairwise_dcor(&intents),
                loss.pairs,
                loss.degenerate_pairs.len()
            );
        }
        Cmd::VerifyPaths { seed, entities, depth } => {
            let spec = RandomGraphSpec {
                num_entities: entities,
                num_items: entities.min(15),
                num_triples: entities + entities / 2,
                ..Default::default()
            };
            let ds = random_dataset(&spec, seed)?;
            let cfg = TrainConfig {
                dim: 8,
                layers: depth,
                seed,
                ..Default::default()
            };
            let params = init_params(&cfg, &ds.index);
            let check = path_equivalence(&params, &ds.index, depth)?;
            println!(
                "checked={} skipped={} max_rel_error={:.3e}",
                check.checked, check.skipped, check.max_rel_error
            );
            if check.max_rel_error >= 1e-10 {
                bail!("propagation disagrees with path enumeration");
            }
        }
        Cmd::GenSynth { spec, out } => {
            let spec = match spec {
                Some(p) => SynthSpec::from_toml_str(&std::fs::read_to_string(&p).with_context(|| p.display().to_string())?)?,
                None => SynthSpec::default(),
            };
            let data = generate(&spec)?;
            data.save(&out)?;
            println!(
                "wrote {} users, {} items, {} triples to {}",
                data.train.num_users,
                data.train.num_items,
                data.kg.len(),
                out.display()
            );
        }
        Cmd::Verify { data, seed } => {
            let ds = load(&data)?;
            if !verify(&ds, seed)? {
                bail!("oracle suite failed");
            }
        }
        Cmd::Preprocess { data, out, k } => {
            let ds = load(&data)?;
            let train = k_core_filter(&ds.train, k);
            let kept = Dataset::from_parts(train, ds.test.clone(), ds.kg.canonical_triples(), Vec::new())?;
            kept.save(&out)?;
            println!("{:?}", kept.stats());
        }
    }
    Ok(())
}

fn load(dir: &std::path::Path) -> Result<Dataset> {
    let ds = Dataset::load(dir).with_context(|| format!("loading {}", dir.display()))?;
    for w in &ds.warnings {
        eprintln!("warning: {w:?}");
    }
    Ok(ds)
}

fn check_shape(params: &ModelParams, ds: &Dataset) -> Result<()> {
    let have = ModelShape::of(&ds.index);
    if have != params.shape {
        bail!("checkpoint was trained on {:?} but the dataset has {:?}", params.shape, have);
    }
    Ok(())
}

fn report(name: &str, ok: bool, detail: String) -> bool {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn verify(ds: &Dataset, seed: u64) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = true;
    let cfg = TrainConfig {
        dim: 4,
        num_intents: 3,
        lambda1: 0.1,
        lambda2: 0.01,
        seed,
        ..Default::default()
    };
    let params = init_params(&cfg, &ds.index);

    let paths = path_equivalence(&params, &ds.index, 3)?;
    all &= report(
        "path enumeration",
        paths.max_rel_error < 1e-10,
        format!("{} checked, {} over cap, max rel error {:.3e}", paths.checked, paths.skipped, paths.max_rel_error),
    );

    let mut worst = 0.0f64;
    let mut bounded = true;
    for _ in 0..200 {
        let n = 64;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v + rng.gen_range(-0.5..0.5)).collect();
        let a = dcor(&x, &y).value;
        worst = worst.max((a - dcor_oracle(&x, &y).0).abs());
        bounded &= (0.0..=1.0).contains(&a);
    }
    all &= report("dcor oracle", worst < 1e-10 && bounded, format!("max abs error {worst:.3e}"));

    let users: Vec<usize> = (0..ds.train.num_users).filter(|&u| !ds.train.positives[u].is_empty()).collect();
    let mut samples = Vec::new();
    for _ in 0..8.min(users.len()) {
        let u = users[rng.gen_range(0..users.len())];
        let pos = ds.train.positives[u][rng.gen_range(0..ds.train.positives[u].len())];
        if let Ok(neg) = sample_negative(u, &ds.train, &mut rng) {
            samples.push(TrainSample { user: u, pos, neg });
        }
    }
    if samples.is_empty() {
        all &= report("gradients", false, "no trainable samples".into());
    } else {
        for variant in [
            kgin::independence::IndependenceVariant::MutualInformation,
            kgin::independence::IndependenceVariant::DistanceCorrelation,
        ] {
            let mut c = cfg.clone();
            c.independence.variant = variant;
            let lc = LossConfig::from(&c);
            let mut p = params.clone();
            let kg = kgin::aggregate::KgEdges::new(&ds.index);
            let batch = Batch::new(samples.clone(), &ds.index);
            loss_and_gradients(&mut p, &ds.index, &kg, &batch, &lc, false)?;
            let mut entries = Vec::new();
            for id in p.store.ids() {
                let (r, cols) = p.store.values(id).shape();
                for _ in 0..60 {
                    entries.push((id, rng.gen_range(0..r), rng.gen_range(0..cols)));
                }
            }
            let base = p.clone();
            let fd = fd_gradient_check_entries(
                |s| {
                    let mut q = base.clone();
                    q.store = s.clone();
                    total_loss(&q, &ds.index, &samples, &lc).expect("loss").total
                },
                &p.store,
                &entries,
                1e-5,
            );
            all &= report(
                &format!("gradients ({variant:?})"),
                fd.max_rel_error < 1e-4,
                format!("{} entries, worst {:.3e} at {}[{},{}]", fd.entries_checked, fd.max_rel_error, fd.table, fd.row, fd.col),
            );
        }
    }

    let mut exact = true;
    for _ in 0..100 {
        let n = rng.gen_range(2..12);
        let mut ranking: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(ranking.as_mut_slice(), &mut rng);
        let pos: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.3)).collect();
        if pos.is_empty() {
            continue;
        }
        let k = rng.gen_range(1..=n);
        let hits: Vec<usize> = (0..k).filter(|&r| pos.contains(&ranking[r])).collect();
        let r_naive = hits.len() as f64 / pos.len() as f64;
        let dcg: f64 = hits.iter().map(|&r| 1.0 / ((r + 2) as f64).log2()).sum();
        let idcg: f64 = (0..k.min(pos.len())).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
        exact &= recall_at_k(&ranking, &pos, k) == r_naive && (ndcg_at_k(&ranking, &pos, k) - dcg / idcg).abs() < 1e-12;
    }
    all &= report("ranking metrics", exact, "100 random instances".into());
    Ok(all)
}
