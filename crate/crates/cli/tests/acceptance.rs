//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.
//!
//! MovieLens-100K is read from `$IDCF_ML100K` or `data/ml-100k/u.data` under
//! the workspace root (`scripts/fetch_ml100k.sh` downloads it).

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use idcf_core::config::TrainConfig;
use idcf_core::data::{holdout_split, load_movielens, partition_users, synth_low_rank, DataFormat, RatingDataset, SplitIndices, UserPartition};
use idcf_core::diagnostics::{gradient_suite, GRADIENT_TOLERANCE};
use idcf_core::eval::{auc, evaluate, ndcg, rmse, Cohort, Scorer};
use idcf_core::mf::{pretrain, Backbone, PretrainConfig};
use idcf_core::numerics::least_squares_solve;
use idcf_core::relation::{adapt, AdaptMode};
use idcf_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Outcome { passed, detail: detail.into() }
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn ml100k_path() -> PathBuf {
    std::env::var_os("IDCF_ML100K").map(PathBuf::from).unwrap_or_else(|| workspace().join("data/ml-100k/u.data"))
}

fn ml_config(name: &str) -> TrainConfig {
    let path = workspace().join("configs").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut cfg = TrainConfig::from_toml_str(&text, name).expect("shipped config is valid");
    cfg.data.path = ml100k_path();
    cfg
}

struct Ml {
    ds: RatingDataset,
    split: SplitIndices,
}

fn load_ml(cfg: &TrainConfig) -> Result<Ml, String> {
    let ds = load_movielens(&cfg.data.path, DataFormat::Ml100kUdata)
        .map_err(|e| format!("{e} (set IDCF_ML100K or run scripts/fetch_ml100k.sh)"))?;
    let split = holdout_split(&ds, cfg.split.test_fraction, cfg.seeds.split).map_err(|e| e.to_string())?;
    Ok(Ml { ds, split })
}

fn mins(d: Duration) -> String {
    format!("{:.1} min", d.as_secs_f64() / 60.0)
}

/// Returns the outcome and the all-user RMSE for criterion 3's ordering check.
fn transductive() -> (Outcome, Option<f64>) {
    let start = Instant::now();
    let cfg = ml_config("ml100k-transductive.toml");
    let ml = match load_ml(&cfg) {
        Ok(ml) => ml,
        Err(e) => return (Outcome::new(false, e), None),
    };
    let all = UserPartition::all_key(ml.ds.num_users);
    let run = || -> idcf_core::Result<f64> {
        let (mf, _) = pretrain(&ml.ds, &ml.split, &all.key_users, &cfg.pretrain_config())?;
        Ok(evaluate(Scorer::Transductive(&mf), &ml.ds, &ml.split, &all, Cohort::All, &cfg.eval_options())?.rmse.unwrap_or(f64::NAN))
    };
    match run() {
        Ok(r) => {
            let t = start.elapsed();
            let ok = r <= 0.955 && t < Duration::from_secs(15 * 60);
            (Outcome::new(ok, format!("nn test RMSE {r:.4} (need <= 0.955) in {}", mins(t))), Some(r))
        }
        Err(e) => (Outcome::new(false, e.to_string()), None),
    }
}

/// Criteria 2 and 3 share the pretrained key-user factors.
fn inductive(transductive_rmse: impl FnOnce() -> Option<f64>) -> (Outcome, Outcome) {
    let start = Instant::now();
    let icfg = ml_config("ml100k-interpolation.toml");
    let xcfg = ml_config("ml100k-extrapolation.toml");
    assert_eq!(icfg.pretrain_hash(), xcfg.pretrain_hash(), "scenario configs must share pretraining");
    let ml = match load_ml(&icfg) {
        Ok(ml) => ml,
        Err(e) => return (Outcome::new(false, e.clone()), Outcome::new(false, e)),
    };
    let run = || -> idcf_core::Result<(f64, Duration, f64)> {
        let strategy = icfg.partition_strategy().expect("threshold split");
        let partition = partition_users(&ml.ds, &ml.split, &strategy)?;
        let (mf, _) = pretrain(&ml.ds, &ml.split, &partition.key_users, &icfg.pretrain_config())?;
        let (interp, _) = adapt(AdaptMode::Interpolation, &mf, &ml.ds, &ml.split, &partition, &icfg.adapt_config())?;
        let few = evaluate(Scorer::Inductive(&interp), &ml.ds, &ml.split, &partition, Cohort::FewShot, &icfg.eval_options())?;
        let interp_time = start.elapsed();
        let (extra, _) = adapt(AdaptMode::Extrapolation, &mf, &ml.ds, &ml.split, &partition, &xcfg.adapt_config())?;
        let new = evaluate(Scorer::Inductive(&extra), &ml.ds, &ml.split, &partition, Cohort::New, &xcfg.eval_options())?;
        Ok((few.rmse.unwrap_or(f64::NAN), interp_time, new.rmse.unwrap_or(f64::NAN)))
    };
    match run() {
        Ok((few, t, new)) => {
            let c2 = Outcome::new(
                few <= 1.03 && t < Duration::from_secs(20 * 60),
                format!("few-shot RMSE {few:.4} (need <= 1.03) in {}", mins(t)),
            );
            let c3 = match transductive_rmse() {
                Some(all) => Outcome::new(
                    new <= 1.12 && new > all,
                    format!("new-user RMSE {new:.4} (need <= 1.12) vs transductive all-user {all:.4} (need new > all)"),
                ),
                None => Outcome::new(false, format!("new-user RMSE {new:.4}; transductive baseline unavailable for the ordering check")),
            };
            (c2, c3)
        }
        Err(e) => (Outcome::new(false, e.to_string()), Outcome::new(false, e.to_string())),
    }
}

fn theorem_one() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = rng.random_range(16..=64);
        let d = rng.random_range(4..=16);
        let a = Matrix::from_vec(m, d, (0..m * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let sol = match least_squares_solve(&a, &y) {
            Ok(s) => s,
            Err(e) => return Outcome::new(false, e.to_string()),
        };
        let res = (0..d)
            .map(|j| {
                let rec: f64 = (0..m).map(|i| sol.coefficients[i] * a.get(i, j)).sum();
                (rec - y[j]).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        worst = worst.max(res);
    }
    Outcome::new(worst < 1e-6, format!("worst residual {worst:.2e} over 100 instances (need < 1e-6)"))
}

fn gradients() -> Outcome {
    match gradient_suite(32, 17) {
        Ok(entries) => {
            let worst = entries.iter().max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error)).expect("non-empty suite");
            let families = ["mf.dot", "mf.nn", "mf.gc", "relation.dot.softmax", "relation.nn.linear_ratio", "contrastive"];
            let covered = families.iter().all(|f| entries.iter().any(|e| e.model.starts_with(f)));
            let ok = covered && entries.iter().all(|e| e.passed() && e.probes >= 32);
            Outcome::new(
                ok,
                format!(
                    "{} checks x 32 probes, worst {} at {:.2e} (need < {GRADIENT_TOLERANCE:e})",
                    entries.len(),
                    worst.model,
                    worst.max_relative_error
                ),
            )
        }
        Err(e) => Outcome::new(false, e.to_string()),
    }
}

fn synthetic_recovery() -> Outcome {
    let start = Instant::now();
    let run = || -> idcf_core::Result<(f64, f64)> {
        let (ds, _) = synth_low_rank(50, 40, 8, 0.3, 0.0, 7)?;
        let split = holdout_split(&ds, 0.1, 7)?;
        let all = UserPartition::all_key(ds.num_users);
        let mut cfg =
            PretrainConfig { backbone: Backbone::Dot, dim: 8, batch_size: 32, max_epochs: 3000, patience: 3000, ..Default::default() };
        cfg.adam.learning_rate = 0.01;
        let (mf, _) = pretrain(&ds, &split, &all.key_users, &cfg)?;
        let score = |idx: &[usize]| -> idcf_core::Result<f64> {
            let mut pred = Vec::new();
            let mut truth = Vec::new();
            for &k in idx {
                let r = ds.ratings[k];
                pred.push(mf.predict(r.user, r.item, None)?);
                truth.push(r.value);
            }
            Ok(rmse(&pred, &truth)?)
        };
        Ok((score(&split.train)?, score(&split.test)?))
    };
    match run() {
        Ok((train, test)) => {
            let t = start.elapsed();
            Outcome::new(
                train < 0.05 && test < 0.15 && t < Duration::from_secs(120),
                format!("train RMSE {train:.4} (need < 0.05), held-out RMSE {test:.4} (need < 0.15) in {:.1} s", t.as_secs_f64()),
            )
        }
        Err(e) => Outcome::new(false, e.to_string()),
    }
}

fn pairwise_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &p in pos {
        for &n in neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for slot in 0..=p.len() {
            let mut q = p.clone();
            q.insert(slot, n - 1);
            out.push(q);
        }
    }
    out
}

fn dcg(order: &[usize], gains: &[f64], k: usize) -> f64 {
    order.iter().take(k).enumerate().map(|(pos, &i)| gains[i] / (pos as f64 + 2.0).log2()).sum()
}

/// NDCG where the ideal DCG is the best over every ordering and the ranked
/// order is found among the orderings consistent with the scores.
fn brute_ndcg(items: &[(f64, f64)], k: usize) -> Option<f64> {
    let gains: Vec<f64> = items.iter().map(|x| x.1).collect();
    let perms = permutations(items.len());
    let ideal = perms.iter().map(|p| dcg(p, &gains, k)).fold(0.0, f64::max);
    if ideal <= 0.0 {
        return None;
    }
    let ranked = perms
        .iter()
        .find(|p| p.windows(2).all(|w| items[w[0]].0 > items[w[1]].0 || (items[w[0]].0 == items[w[1]].0 && w[0] < w[1])))
        .expect("one ordering matches the scores");
    Some(dcg(ranked, &gains, k) / ideal)
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst_auc = 0.0f64;
    for _ in 0..1000 {
        let total = rng.random_range(2..=50);
        let n_pos = rng.random_range(1..total);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| f64::from(rng.random_range(0..12u8)) / 4.0).collect() };
        let pos = draw(n_pos);
        let neg = draw(total - n_pos);
        match auc(&pos, &neg) {
            Ok(fast) => worst_auc = worst_auc.max((fast - pairwise_auc(&pos, &neg)).abs()),
            Err(e) => return Outcome::new(false, e.to_string()),
        }
    }
    let mut worst_ndcg = 0.0f64;
    let mut checked = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=5);
        let items: Vec<(f64, f64)> =
            (0..n).map(|_| (f64::from(rng.random_range(0..4u8)), f64::from(rng.random_range(0..4u8)))).collect();
        let k = rng.random_range(1..=n);
        let cutoff = if rng.random_bool(0.5) { Some(k) } else { None };
        let Some(expected) = brute_ndcg(&items, cutoff.unwrap_or(n)) else { continue };
        match ndcg(&[items.clone()], cutoff) {
            Ok(got) => worst_ndcg = worst_ndcg.max((got - expected).abs()),
            Err(e) => return Outcome::new(false, e.to_string()),
        }
        checked += 1;
    }
    Outcome::new(
        worst_auc <= 1e-12 && worst_ndcg <= 1e-12,
        format!("auc max deviation {worst_auc:.1e} over 1000 instances, ndcg max deviation {worst_ndcg:.1e} over {checked} lists"),
    )
}

fn idcf(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_idcf"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("`idcf {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn determinism() -> Outcome {
    let run = || -> Result<(Vec<u8>, Vec<u8>), String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let text = std::fs::read_to_string(workspace().join("configs/synthetic.toml")).map_err(|e| e.to_string())?;
        let text = text.replace("backbone = \"dot\"", "backbone = \"gc\"").replace("out/synth/synth.csv", "synth/synth.csv");
        std::fs::write(dir.path().join("synthetic.toml"), text).map_err(|e| e.to_string())?;
        idcf(&["synth", "--users", "200", "--items", "100", "--rank", "4", "--seed", "3", "--out", "synth"], dir.path())?;
        let mut csvs = Vec::new();
        for run in ["a", "b"] {
            for stage in ["split", "pretrain", "adapt", "eval"] {
                idcf(&[stage, "--config", "synthetic.toml", "--out", run], dir.path())?;
            }
            csvs.push(std::fs::read(dir.path().join(run).join("metrics.csv")).map_err(|e| e.to_string())?);
        }
        Ok((csvs.remove(0), csvs.remove(0)))
    };
    match run() {
        Ok((a, b)) => {
            let lines = String::from_utf8_lossy(&a).lines().count();
            Outcome::new(a == b && lines > 1, format!("two split/pretrain/adapt/eval runs: metrics CSVs byte-identical = {} ({lines} lines)", a == b))
        }
        Err(e) => Outcome::new(false, e),
    }
}

fn main() {
    let (c1, c23, rest) = std::thread::scope(|s| {
        let t1 = s.spawn(transductive);
        let (tx, rx) = std::sync::mpsc::channel::<Option<f64>>();
        let t23 = s.spawn(move || inductive(move || rx.recv().ok().flatten()));
        let rest = vec![(4, theorem_one()), (5, gradients()), (6, synthetic_recovery()), (7, metric_oracles()), (8, determinism())];
        let (c1, base) = t1.join().expect("criterion 1 thread");
        let _ = tx.send(base);
        (c1, t23.join().expect("criteria 2-3 thread"), rest)
    });
    let mut all = vec![(1, c1), (2, c23.0), (3, c23.1)];
    all.extend(rest);
    let mut failed = 0;
    for (n, o) in &all {
        failed += usize::from(!o.passed);
        println!("criterion {n}: {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("{} of {} criteria passed", all.len() - failed, all.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
