use std::path::Path;

use idcf_core::checkpoint::{MfCheckpoint, RelCheckpoint};
use idcf_core::config::{Seeds, TrainConfig};
use idcf_core::data::{
    holdout_split, leading_split, load_ratings, partition_users, synth_low_rank, Feedback, RatingDataset, SplitIndices, UserPartition,
};
use idcf_core::diagnostics::gradient_suite;
use idcf_core::eval::{evaluate, write_metrics_csv, Cohort, MetricsReport, Scorer};
use idcf_core::mf::{pretrain, Backbone};
use idcf_core::relation::{adapt, user_ratings, AdaptMode, InductiveModel};

use crate::args::{Cli, Command, Common, DumpAttentionArgs, EvalArgs, GradcheckArgs, InferArgs, SynthArgs};
use crate::error::{CliError, CliResult};
use crate::output::*;

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Split(c) => split(c),
        Command::Pretrain(c) => pretrain_cmd(c),
        Command::Adapt(c) => adapt_cmd(c),
        Command::Eval(a) => eval_cmd(a),
        Command::Infer(a) => infer_cmd(a),
        Command::Synth(a) => synth_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::DumpAttention(a) => dump_attention_cmd(a),
    }
}

pub fn load_config(common: &Common) -> CliResult<TrainConfig> {
    let text = std::fs::read_to_string(&common.config).map_err(|source| CliError::ConfigFile { path: common.config.clone(), source })?;
    let mut cfg = TrainConfig::from_toml_str(&text, &common.config.display().to_string())?;
    if let Some(seed) = common.seed {
        cfg.seeds = Seeds::uniform(seed);
    }
    Ok(cfg)
}

struct Experiment {
    cfg: TrainConfig,
    ds: RatingDataset,
    split: SplitIndices,
    partition: UserPartition,
}

/// Loads the data and recomputes the split; both are pure functions of the
/// config, so every stage sees the same indices.
fn experiment(common: &Common) -> CliResult<Experiment> {
    let cfg = load_config(common)?;
    let ds = load_ratings(&cfg.data.path, cfg.data.format, cfg.feedback()).map_err(idcf_core::Error::from)?;
    let split = match cfg.split.test_count {
        Some(n) => leading_split(&ds, n, cfg.seeds.split)?,
        None => holdout_split(&ds, cfg.split.test_fraction, cfg.seeds.split)?,
    };
    let partition = match cfg.partition_strategy() {
        Some(s) => partition_users(&ds, &split, &s)?,
        None => UserPartition::all_key(ds.num_users),
    };
    log::info!(
        "{} users, {} items, {} ratings; train {} / validation {} / test {}; {} key and {} query users",
        ds.num_users,
        ds.num_items,
        ds.len(),
        split.train.len(),
        split.validation.len(),
        split.test.len(),
        partition.key_users.len(),
        partition.query_users.len()
    );
    Ok(Experiment { cfg, ds, split, partition })
}

fn load_mf(out: &Path, cfg: &TrainConfig) -> CliResult<MfCheckpoint> {
    let path = out.join(MF_CHECKPOINT);
    if !path.exists() {
        return Err(CliError::MissingCheckpoint { path, message: "not found; run `idcf pretrain` first" });
    }
    let ckpt = MfCheckpoint::from_json(&read_text(&path)?)?;
    if ckpt.backbone != cfg.model.backbone {
        return Err(idcf_core::error::ModelError::BackboneMismatch(format!(
            "{} holds a {} model, config asks for {}",
            path.display(),
            ckpt.backbone,
            cfg.model.backbone
        ))
        .into());
    }
    ckpt.check_config(cfg)?;
    Ok(ckpt)
}

fn load_rel(out: &Path, mf: &MfCheckpoint) -> CliResult<Option<(AdaptMode, InductiveModel)>> {
    let path = out.join(REL_CHECKPOINT);
    if !path.exists() {
        return Ok(None);
    }
    let ckpt = RelCheckpoint::from_json(&read_text(&path)?)?;
    let mode = ckpt.mode;
    Ok(Some((mode, ckpt.into_model(mf)?)))
}

fn require_rel(out: &Path, mf: &MfCheckpoint) -> CliResult<InductiveModel> {
    load_rel(out, mf)?
        .map(|(_, m)| m)
        .ok_or_else(|| CliError::MissingCheckpoint { path: out.join(REL_CHECKPOINT), message: "not found; run `idcf adapt` first" })
}

fn split(common: &Common) -> CliResult<()> {
    let e = experiment(common)?;
    let json = serde_json::to_string_pretty(&e.split).expect("split serializes");
    write_text(&common.out.join(SPLIT_FILE), &json)?;
    write_text(&common.out.join(PARTITION_FILE), &partition_text(&e.partition))?;
    println!("key users: {}, query users: {}", e.partition.key_users.len(), e.partition.query_users.len());
    Ok(())
}

fn pretrain_cmd(common: &Common) -> CliResult<()> {
    let e = experiment(common)?;
    let (params, report) = pretrain(&e.ds, &e.split, &e.partition.key_users, &e.cfg.pretrain_config())?;
    println!(
        "pretrained {} backbone: {} epochs, best epoch {}, validation loss {:.6}",
        params.backbone,
        report.epochs_run,
        report.best_epoch,
        report.validation_loss.get(report.best_epoch).copied().unwrap_or(f64::NAN)
    );
    let ckpt = MfCheckpoint::new(params, &e.cfg, report);
    write_text(&common.out.join(MF_CHECKPOINT), &ckpt.to_json())?;
    Ok(())
}

fn adapt_cmd(common: &Common) -> CliResult<()> {
    let e = experiment(common)?;
    let mf = load_mf(&common.out, &e.cfg)?;
    let mode = e.cfg.adapt.mode;
    let (model, report) = adapt(mode, &mf.params, &e.ds, &e.split, &e.partition, &e.cfg.adapt_config())?;
    println!("adapted relation model ({mode:?}): {} epochs, best epoch {}", report.epochs_run, report.best_epoch);
    let ckpt = RelCheckpoint::new(&model, mode, &e.cfg, &mf.config_hash, report);
    write_text(&common.out.join(REL_CHECKPOINT), &ckpt.to_json())?;
    Ok(())
}

fn default_cohorts(mode: Option<AdaptMode>) -> Vec<Cohort> {
    match mode {
        None => vec![Cohort::All],
        Some(AdaptMode::Interpolation) => vec![Cohort::All, Cohort::FewShot],
        Some(AdaptMode::Extrapolation) => vec![Cohort::New],
    }
}

fn eval_cmd(args: &EvalArgs) -> CliResult<()> {
    let e = experiment(&args.common)?;
    let out = &args.common.out;
    let mf = load_mf(out, &e.cfg)?;
    let rel = if args.transductive { None } else { load_rel(out, &mf)? };
    let cohorts = if e.cfg.eval.cohorts.is_empty() { default_cohorts(rel.as_ref().map(|r| r.0)) } else { e.cfg.eval.cohorts.clone() };
    let scorer = match &rel {
        Some((_, model)) => Scorer::Inductive(model),
        None => Scorer::Transductive(&mf.params),
    };
    let opts = e.cfg.eval_options();
    let reports: Vec<MetricsReport> =
        cohorts.iter().map(|&c| evaluate(scorer, &e.ds, &e.split, &e.partition, c, &opts)).collect::<Result<_, _>>()?;
    for r in &reports {
        for (metric, value) in r.metrics() {
            println!("{:<9} {:<5} {value:.6}  ({} users, {} pairs)", r.cohort, metric, r.num_users, r.num_pairs);
        }
    }
    write_atomic(&out.join(METRICS_FILE), |w| Ok(write_metrics_csv(&reports, w)?))?;
    Ok(())
}

/// `"3,17:4,25"` into `(item, rating)`; bare items get `default`.
pub fn parse_history(spec: &str, default: Option<f64>) -> CliResult<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    for tok in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let bad = || CliError::Usage(format!("--history: cannot parse `{tok}` (expected ITEM or ITEM:RATING)"));
        let (item, value) = match tok.split_once(':') {
            Some((i, v)) => (i.trim().parse().map_err(|_| bad())?, v.trim().parse::<f64>().map_err(|_| bad())?),
            None => {
                let v = default.ok_or_else(|| {
                    CliError::Usage(format!("--history: `{tok}` needs a rating (ITEM:RATING) because the graph backbone aggregates by rating level"))
                })?;
                (tok.parse().map_err(|_| bad())?, v)
            }
        };
        if !value.is_finite() {
            return Err(bad());
        }
        out.push((item, value));
    }
    Ok(out)
}

fn infer_cmd(args: &InferArgs) -> CliResult<()> {
    let cfg = load_config(&args.common)?;
    let out = &args.common.out;
    let mf = load_mf(out, &cfg)?;
    let model = require_rel(out, &mf)?;
    let default = match (model.mf.backbone, model.mf.feedback) {
        (Backbone::Gc, Feedback::Explicit) => None,
        _ => Some(1.0),
    };
    let history = parse_history(&args.history, default)?;
    let inferred = model.infer_user(&history)?;
    if inferred.context.fallback_used {
        log::warn!("empty history: context built from {} randomly drawn items", inferred.context.history.len());
    }
    let seen: std::collections::HashSet<usize> = history.iter().map(|h| h.0).collect();
    let candidates: Vec<usize> = (0..model.mf.num_items()).filter(|i| args.include_history || !seen.contains(i)).collect();
    let ranked = model.top_k(&inferred, &candidates, args.top_k)?;
    write_atomic(&out.join(INFER_FILE), |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["rank", "item", "score"])?;
        for (rank, (item, score)) in ranked.iter().enumerate() {
            csv.write_record([(rank + 1).to_string(), item.to_string(), score.to_string()])?;
        }
        csv.flush().map_err(|source| CliError::Io { path: out.join(INFER_FILE), source })?;
        Ok(())
    })?;
    for (rank, (item, score)) in ranked.iter().enumerate() {
        println!("{:>3}  item {item:<6} {score:.4}", rank + 1);
    }
    Ok(())
}

fn synth_cmd(args: &SynthArgs) -> CliResult<()> {
    let (ds, truth) = synth_low_rank(args.users, args.items, args.rank, args.density, args.noise, args.seed)?;
    let mut rated = vec![false; ds.num_users];
    ds.ratings.iter().for_each(|r| rated[r.user] = true);
    if let Some(u) = rated.iter().position(|&r| !r) {
        log::warn!("user {u} has no observed ratings and will be dropped when the CSV is loaded, shifting later indices");
    }
    let path = args.out.join(SYNTH_FILE);
    write_atomic(&path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["user_id", "item_id", "rating"])?;
        for r in &ds.ratings {
            csv.write_record([r.user.to_string(), r.item.to_string(), r.value.to_string()])?;
        }
        csv.flush().map_err(|source| CliError::Io { path: path.clone(), source })?;
        Ok(())
    })?;
    write_text(&args.out.join(TRUE_FACTORS_FILE), &serde_json::to_string_pretty(&truth).expect("factors serialize"))?;
    println!("{} ratings over {} users and {} items", ds.len(), ds.num_users, ds.num_items);
    Ok(())
}

fn gradcheck_cmd(args: &GradcheckArgs) -> CliResult<()> {
    let entries = gradient_suite(args.probes, args.seed)?;
    let mut failed = 0;
    for e in &entries {
        let status = if e.passed() { "ok" } else { "FAIL" };
        failed += usize::from(!e.passed());
        println!("{:<36} {:.3e}  {status}", e.model, e.max_relative_error);
    }
    if let Some(dir) = &args.out {
        write_atomic(&dir.join(GRADCHECK_FILE), |w| {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["model", "max_relative_error", "probes", "passed"])?;
            for e in &entries {
                csv.write_record([e.model.clone(), e.max_relative_error.to_string(), e.probes.to_string(), e.passed().to_string()])?;
            }
            csv.flush().map_err(|source| CliError::Io { path: dir.join(GRADCHECK_FILE), source })?;
            Ok(())
        })?;
    }
    if failed > 0 {
        return Err(CliError::GradCheckFailed(failed));
    }
    Ok(())
}

fn parse_users(spec: &str) -> CliResult<Vec<usize>> {
    spec.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| CliError::Usage(format!("--users: `{t}` is not a user index"))))
        .collect()
}

fn dump_attention_cmd(args: &DumpAttentionArgs) -> CliResult<()> {
    let e = experiment(&args.common)?;
    let out = &args.common.out;
    let mf = load_mf(out, &e.cfg)?;
    let model = require_rel(out, &mf)?;
    let users = match &args.users {
        Some(spec) => parse_users(spec)?,
        None => e.partition.query_users.clone(),
    };
    if let Some(&u) = users.iter().find(|&&u| u >= e.ds.num_users) {
        return Err(CliError::Usage(format!("--users: user {u} out of range ({} users)", e.ds.num_users)));
    }
    let history = user_ratings(&e.ds, &e.split.train);
    let requests: Vec<(usize, Vec<usize>)> = users.iter().map(|&u| (u, history[u].iter().map(|h| h.0).collect())).collect();
    let rows = model.export_attention(&requests)?;
    let path = out.join(ATTENTION_FILE);
    write_atomic(&path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["query_user", "head", "key_user", "weight"])?;
        for r in &rows {
            csv.write_record([r.query_user.to_string(), r.head.to_string(), r.key_user.to_string(), r.weight.to_string()])?;
        }
        csv.flush().map_err(|source| CliError::Io { path: path.clone(), source })?;
        Ok(())
    })?;
    println!("{} attention rows for {} users", rows.len(), users.len());
    Ok(())
}
