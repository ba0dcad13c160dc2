//! Command-line front end. Reports go to `out` as JSON, warnings to `err`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{compute_stats, load_raw_splits, split_path, build_dataset, Dataset, Split, TupleFormat};
use crate::error::Error;
use crate::eval::{self, build_filter_index, evaluate_tuples, random_mrr, with_workers};
use crate::gen_analysis::{load_generated, membership_rate, nearest_training_entities, EntitySet};
use crate::model::{EncoderKind, Model};
use crate::training::{fit, EpochRecord, FitHooks};

#[derive(Debug, Parser)]
#[command(name = "ckgr", version, about = "Commonsense knowledge-graph reasoning by candidate selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dataset statistics and test word coverage.
    Stats(DataArgs),
    /// Train a model from a config file.
    Train(TrainArgs),
    /// Filtered-ranking metrics of a checkpoint on one split.
    Eval(EvalArgs),
    /// Top-k targets for a (source text, relation) query.
    Rank(RankArgs),
    /// Training-set overlap of generated target entities.
    AnalyzeGenerated(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "src-first")]
    pub format: TupleFormat,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's `data`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<TupleFormat>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Write per-tuple ranks as TSV.
    #[arg(long)]
    pub dump_ranks: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub source: String,
    #[arg(long)]
    pub relation: String,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// TSV of `source \t relation \t generated_target`.
    pub generated: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Compare raw strings instead of lowercased text.
    #[arg(long)]
    pub no_lowercase: bool,
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    let report = match cli.command {
        Command::Stats(a) => cmd_stats(&a)?,
        Command::Train(a) => cmd_train(&a)?,
        Command::Eval(a) => cmd_eval(&a)?,
        Command::Rank(a) => cmd_rank(&a, err)?,
        Command::AnalyzeGenerated(a) => cmd_analyze(&a)?,
    };
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn load_data(dir: &Path, format: TupleFormat) -> anyhow::Result<Dataset> {
    let raw = load_raw_splits(dir, format)?;
    for (split, tuples) in [(Split::Train, &raw.train), (Split::Test, &raw.test)] {
        if tuples.is_empty() {
            return Err(Error::EmptyFile(split_path(dir, split)).into());
        }
    }
    Ok(build_dataset(&raw.train, &raw.dev, &raw.test)?)
}

fn cmd_stats(a: &DataArgs) -> anyhow::Result<serde_json::Value> {
    let ds = load_data(&a.data, a.format)?;
    let stats = compute_stats(&ds);
    Ok(json!({
        "stats": stats,
        "word_coverage": crate::data::word_coverage(&ds)?,
    }))
}

fn cmd_train(a: &TrainArgs) -> anyhow::Result<serde_json::Value> {
    let mut cfg = RunConfig::load(&a.config).with_context(|| format!("loading config {}", a.config.display()))?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    if let Some(format) = a.format {
        cfg.format = format;
    }
    let data = a.data.clone().or(cfg.data.clone()).context("no data directory (set `data` or pass --data)")?;
    let out_dir = a.checkpoint.clone().or(cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("ckgr-run"));
    let raw = load_raw_splits(&data, cfg.format)?;
    if raw.train.is_empty() {
        return Err(Error::EmptyFile(split_path(&data, Split::Train)).into());
    }
    let ds = build_dataset(&raw.train, &raw.dev, &raw.test)?;
    fs::create_dir_all(&out_dir)?;

    let streams = crate::training::SeedStreams::new(cfg.train.seed);
    let mut model = Model::for_dataset(cfg.model.clone(), &ds, streams.init)?;
    let filter = build_filter_index(&ds);
    let use_dev = cfg.dev_eval && !ds.dev.is_empty();

    let mut log = fs::File::create(out_dir.join("train_log.jsonl"))?;
    let mut dev_hook = |m: &Model| -> crate::Result<f64> {
        let cache = with_workers(|| m.candidate_cache())?;
        Ok(evaluate_tuples(m, &ds.dev, &filter, &cache)?.report.mrr)
    };
    let mut epoch_hook = |_: &Model, rec: &EpochRecord| -> crate::Result<()> {
        writeln!(log, "{}", serde_json::to_string(rec)?)?;
        Ok(())
    };
    let hooks = FitHooks {
        dev_eval: if use_dev { Some(&mut dev_hook) } else { None },
        on_epoch: Some(&mut epoch_hook),
    };
    let history = fit(&ds, &mut model, &cfg.train, hooks)?;

    let final_epoch = history.best_epoch.unwrap_or(history.epochs.len());
    let final_path = out_dir.join("final.ckpt");
    Checkpoint::from_model(&model, &cfg.train, final_epoch).save(&final_path)?;
    let best_path = out_dir.join("best.ckpt");
    if history.best_epoch.is_some() {
        fs::copy(&final_path, &best_path)?;
    }
    Ok(json!({
        "epochs_run": history.epochs.len(),
        "best_epoch": history.best_epoch,
        "final_train_loss": history.epochs.last().map(|r| r.train_loss),
        "best_dev_mrr": history.epochs.iter().filter_map(|r| r.dev_mrr).fold(None, |b: Option<f64>, v| Some(b.map_or(v, |b| b.max(v)))),
        "checkpoint": final_path,
        "best_checkpoint": history.best_epoch.map(|_| best_path),
        "vocab_hash": model.vocab().hash(),
    }))
}

fn load_checked(ckpt: &Path, data: &DataArgs) -> anyhow::Result<(Model, Dataset)> {
    let ck = Checkpoint::load(ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let ds = load_data(&data.data, data.format)?;
    let data_hash = ds.vocab.hash();
    if ck.vocab_hash != data_hash {
        return Err(Error::VocabularyMismatch { checkpoint: ck.vocab_hash, data: data_hash }.into());
    }
    Ok((ck.into_model()?, ds))
}

fn cmd_eval(a: &EvalArgs) -> anyhow::Result<serde_json::Value> {
    let (model, ds) = load_checked(&a.checkpoint, &a.data)?;
    let out = eval::evaluate(&model, &ds, a.split)?;
    if let Some(path) = &a.dump_ranks {
        let mut f = fs::File::create(path)?;
        writeln!(f, "source\trelation\ttarget\trank\tcandidates")?;
        let v = &ds.vocab;
        for r in &out.ranks {
            let t = r.tuple;
            writeln!(
                f,
                "{}\t{}\t{}\t{}\t{}",
                v.entity_text(t.source).unwrap_or(""),
                v.relation_text(t.relation).unwrap_or(""),
                v.entity_text(t.target).unwrap_or(""),
                r.rank,
                r.candidate_count - r.filtered
            )?;
        }
    }
    Ok(json!({
        "split": a.split.name(),
        "metrics": out.report.to_json(),
        "random_mrr": random_mrr(&out.ranks),
    }))
}

/// Mid-rank of every candidate; output ordered by logit, then id.
pub fn rank_query(model: &Model, source: &str, relation: &str, k: usize) -> crate::Result<(Vec<RankedEntity>, bool)> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    let vocab = model.vocab();
    let rel = vocab.relation_id(relation).ok_or_else(|| Error::UnknownRelation {
        relation: relation.to_string(),
        known: vocab.relations().map(|(_, t)| t).collect::<Vec<_>>().join(", "),
    })?;
    let (e_s, trained) = model.encode_entity_text(source)?;
    let e_r = model.encode_relation(rel)?;
    let cache = with_workers(|| model.candidate_cache())?;
    let candidates = model.all_entities();
    let sv = model.score_query_candidates(&e_s, &e_r, &candidates, Some(&cache))?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| sv.logits[b].total_cmp(&sv.logits[a]).then(a.cmp(&b)));
    let mut out = Vec::with_capacity(k.min(order.len()));
    for &i in order.iter().take(k) {
        let l = sv.logits[i];
        let higher = sv.logits.iter().filter(|&&x| x > l).count();
        let ties = sv.logits.iter().filter(|&&x| x == l).count() - 1;
        out.push(RankedEntity {
            rank: 1 + higher + ties.div_ceil(2),
            entity: vocab.entity_text(candidates[i]).unwrap_or("").to_string(),
            score: sv.scores[i],
            logit: l,
        });
    }
    Ok((out, trained))
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RankedEntity {
    pub rank: usize,
    pub entity: String,
    pub score: f64,
    pub logit: f64,
}

fn cmd_rank(a: &RankArgs, err: &mut dyn Write) -> anyhow::Result<serde_json::Value> {
    let model = Checkpoint::load(&a.checkpoint)?.into_model()?;
    let (ranked, trained) = rank_query(&model, &a.source, &a.relation, a.k)?;
    if model.config().encoder == EncoderKind::Lookup && !trained {
        writeln!(
            err,
            "warning: `{}` has no trained lookup row; scores come from the untrained cold vector",
            a.source
        )?;
    }
    Ok(json!({ "source": a.source, "relation": a.relation, "results": ranked }))
}

fn cmd_analyze(a: &AnalyzeArgs) -> anyhow::Result<serde_json::Value> {
    let generated = load_generated(&a.generated)?;
    if generated.is_empty() {
        bail!(Error::EmptyFile(a.generated.clone()));
    }
    if a.k == 0 {
        bail!(Error::InvalidArgument("k must be >= 1".into()));
    }
    let raw = load_raw_splits(&a.data.data, a.data.format)?;
    if raw.train.is_empty() {
        bail!(Error::EmptyFile(split_path(&a.data.data, Split::Train)));
    }
    let set = EntitySet::from_training(&raw.train, !a.no_lowercase);
    let report = membership_rate(&generated, &set)?;
    let records: Vec<_> = generated
        .iter()
        .filter(|g| !set.contains(&g.generated_target))
        .map(|g| {
            json!({
                "source": g.source,
                "relation": g.relation,
                "generated_target": g.generated_target,
                "nearest": nearest_training_entities(&g.generated_target, &set, a.k),
            })
        })
        .collect();
    Ok(json!({
        "lowercase": set.lowercase(),
        "training_entities": set.len(),
        "raw": report.raw,
        "deduplicated": report.deduplicated,
        "not_in_training": records,
    }))
}
