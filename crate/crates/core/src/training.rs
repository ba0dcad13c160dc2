//! Objectives, negative sampling, optimizers and the epoch loop.
//!
//! Three objectives are supported:
//!
//! * `sampled-bce`: per positive tuple one random negative target is drawn;
//!   binary cross-entropy over the pair (`n_e = 2`).
//! * `full-bce`: every training entity is a candidate target with a one-hot
//!   label on the gold target. Memory grows with the entity count, so the
//!   loop refuses to start when the estimate exceeds the configured budget.
//! * `margin`: `max(0, γ + d(pos) − d(neg))` with `d = −logit`.
//!
//! Probabilities are `sigmoid(logit)` for both scorers.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EntityId, IdTuple, RelationId};
use crate::error::{Error, Result};
use crate::model::{EncodeCache, Model};
use crate::params::{sigmoid, Gradients, ParameterStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    FullBce,
    SampledBce,
    Margin,
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full-bce" => Ok(Self::FullBce),
            "sampled-bce" => Ok(Self::SampledBce),
            "margin" => Ok(Self::Margin),
            other => Err(Error::Config(format!("unknown objective `{other}` (full-bce, sampled-bce, margin)"))),
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::FullBce => "full-bce",
            Self::SampledBce => "sampled-bce",
            Self::Margin => "margin",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            other => Err(Error::Config(format!("unknown optimizer `{other}` (adam, sgd)"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Adam => "adam",
            Self::Sgd => "sgd",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub seed: u64,
    /// Probability clamp for [`bce_loss`]. Training terms are computed from
    /// logits and stay finite without it.
    pub epsilon: f64,
    pub memory_budget_mb: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::SampledBce,
            optimizer: OptimizerKind::Adam,
            epochs: 100,
            batch_size: 128,
            learning_rate: 0.01,
            margin: 1.0,
            seed: 42,
            epsilon: 1e-7,
            memory_budget_mb: 1024,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::Config("epsilon must lie in (0, 0.5)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.margin < 0.0 {
            return Err(Error::Config("margin must be >= 0".into()));
        }
        Ok(())
    }
}

/// Independent random streams derived from one run seed.
#[derive(Debug, Clone)]
pub struct SeedStreams {
    pub init: u64,
    pub shuffle: ChaCha8Rng,
    pub negatives: ChaCha8Rng,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            init: splitmix64(seed ^ 0x696e_6974),
            shuffle: ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x7368_7566)),
            negatives: ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x6e65_6773)),
        }
    }
}

/// Predicted probabilities with their binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    pub p: Vec<f64>,
    pub y: Vec<f64>,
}

impl LossBatch {
    pub fn new(p: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if p.len() != y.len() || p.is_empty() {
            return Err(Error::DimensionMismatch(format!("p has {} entries, y has {}", p.len(), y.len())));
        }
        Ok(Self { p, y })
    }

    pub fn n_e(&self) -> usize {
        self.p.len()
    }
}

/// `−(1/n_e) Σ [y log p + (1−y) log(1−p)]` with `p` clamped to `[ε, 1−ε]`.
pub fn bce_loss(batch: &LossBatch, epsilon: f64) -> f64 {
    let mut acc = 0.0;
    for (&p, &y) in batch.p.iter().zip(&batch.y) {
        let p = p.clamp(epsilon, 1.0 - epsilon);
        acc += y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    -acc / batch.n_e() as f64
}

/// One BCE term computed from the logit: `(−log σ(x), σ(x) − 1)` for a
/// positive, `(−log(1 − σ(x)), σ(x))` for a negative. Matches the clamped
/// probability form wherever `σ(x)` lies in `[ε, 1−ε]` and keeps a gradient
/// beyond it.
fn bce_term(logit: f64, positive: bool) -> (f64, f64) {
    let softplus = |x: f64| x.max(0.0) + (-x.abs()).exp().ln_1p();
    let p = sigmoid(logit);
    if positive {
        (softplus(-logit), p - 1.0)
    } else {
        (softplus(logit), p)
    }
}

/// Corrupts the target with a uniform draw over `0..n_entities`, never the gold.
pub fn sample_negative<R: Rng>(t: &IdTuple, n_entities: usize, rng: &mut R) -> Result<IdTuple> {
    if n_entities < 2 {
        return Err(Error::TooFewEntities(n_entities));
    }
    loop {
        let c = EntityId(rng.random_range(0..n_entities as u32));
        if c != t.target {
            return Ok(IdTuple { target: c, ..*t });
        }
    }
}

/// Loss and gradients of one batch. `negatives[i]` pairs with `positives[i]`
/// for the sampled and margin objectives and is ignored by full-bce.
pub fn batch_loss_and_grads(
    model: &Model,
    positives: &[IdTuple],
    negatives: &[EntityId],
    cfg: &TrainConfig,
) -> Result<(f64, Gradients)> {
    let mut grads = model.params().zero_gradients();
    let loss = accumulate(model, positives, negatives, cfg, Some(&mut grads))?;
    Ok((loss, grads))
}

/// Loss only (finite-difference probes).
pub fn batch_loss(model: &Model, positives: &[IdTuple], negatives: &[EntityId], cfg: &TrainConfig) -> Result<f64> {
    accumulate(model, positives, negatives, cfg, None)
}

fn accumulate(
    model: &Model,
    positives: &[IdTuple],
    negatives: &[EntityId],
    cfg: &TrainConfig,
    grads: Option<&mut Gradients>,
) -> Result<f64> {
    if positives.is_empty() {
        return Ok(0.0);
    }
    let full = cfg.objective == Objective::FullBce;
    if !full && negatives.len() != positives.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} positives but {} negatives",
            positives.len(),
            negatives.len()
        )));
    }
    let n_train = model.vocab().train_entity_count();
    let mut needed: BTreeSet<EntityId> = BTreeSet::new();
    let mut rels: BTreeSet<RelationId> = BTreeSet::new();
    for (i, t) in positives.iter().enumerate() {
        needed.insert(t.source);
        needed.insert(t.target);
        rels.insert(t.relation);
        if !full {
            needed.insert(negatives[i]);
        }
    }
    if full {
        needed.extend((0..n_train as u32).map(EntityId));
    }

    let mut ent: BTreeMap<EntityId, (Vec<f64>, EncodeCache)> = BTreeMap::new();
    for &e in &needed {
        ent.insert(e, model.encode_entity_cached(e)?);
    }
    let mut rel: BTreeMap<RelationId, (Vec<f64>, EncodeCache)> = BTreeMap::new();
    for &r in &rels {
        rel.insert(r, model.encode_relation_cached(r)?);
    }
    let want_grads = grads.is_some();
    let mut dent: BTreeMap<EntityId, Vec<f64>> = BTreeMap::new();
    let mut drel: BTreeMap<RelationId, Vec<f64>> = BTreeMap::new();
    let mut scratch = model.params().zero_gradients();
    let scale = 1.0 / positives.len() as f64;
    let mut total = 0.0;

    let candidates: Vec<EntityId> = if full { (0..n_train as u32).map(EntityId).collect() } else { Vec::new() };

    for (i, t) in positives.iter().enumerate() {
        let e_s = &ent[&t.source].0;
        let e_r = &rel[&t.relation].0;
        let q = model.query(e_s, e_r)?;
        // (target id, dL/dlogit) pairs for this example.
        let mut targets: Vec<(EntityId, f64)> = Vec::new();
        match cfg.objective {
            Objective::SampledBce => {
                let neg = negatives[i];
                let (lp, gp) = bce_term(model.logit(&q, &ent[&t.target].0), true);
                let (ln, gn) = bce_term(model.logit(&q, &ent[&neg].0), false);
                total += (lp + ln) / 2.0;
                targets.push((t.target, gp / 2.0 * scale));
                targets.push((neg, gn / 2.0 * scale));
            }
            Objective::FullBce => {
                let n = candidates.len() as f64;
                let mut acc = 0.0;
                for &c in &candidates {
                    let (l, g) = bce_term(model.logit(&q, &ent[&c].0), c == t.target);
                    acc += l;
                    targets.push((c, g / n * scale));
                }
                total += acc / n;
            }
            Objective::Margin => {
                let neg = negatives[i];
                let lp = model.logit(&q, &ent[&t.target].0);
                let ln = model.logit(&q, &ent[&neg].0);
                let hinge = cfg.margin - lp + ln;
                if hinge > 0.0 {
                    total += hinge;
                    targets.push((t.target, -scale));
                    targets.push((neg, scale));
                }
            }
        }
        if !want_grads || targets.is_empty() {
            continue;
        }
        let pairs: Vec<(&[f64], f64)> = targets.iter().map(|(c, g)| (ent[c].0.as_slice(), *g)).collect();
        let (ds, dr, dts) = model.backward_query(e_s, e_r, &q, &pairs, &mut scratch);
        add_into(&mut dent, t.source, &ds);
        add_into(&mut drel, t.relation, &dr);
        for ((c, _), dt) in targets.iter().zip(&dts) {
            add_into(&mut dent, *c, dt);
        }
    }

    if let Some(grads) = grads {
        *grads = scratch;
        for (e, g) in &dent {
            model.backward_encoding(&ent[e].1, g, grads);
        }
        for (r, g) in &drel {
            model.backward_encoding(&rel[r].1, g, grads);
        }
    }
    Ok(total * scale)
}

fn add_into<K: Ord + Copy>(map: &mut BTreeMap<K, Vec<f64>>, key: K, g: &[f64]) {
    let slot = map.entry(key).or_insert_with(|| vec![0.0; g.len()]);
    for (a, b) in slot.iter_mut().zip(g) {
        *a += b;
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &ParameterStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        Self { kind, learning_rate, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn apply(&mut self, params: &mut ParameterStore, grads: &Gradients) {
        self.step += 1;
        let lr = self.learning_rate;
        let ids: Vec<_> = params.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
        for id in ids {
            let g = grads.get(id);
            let w = params.value_mut(id);
            match self.kind {
                OptimizerKind::Sgd => {
                    for (wi, gi) in w.iter_mut().zip(g) {
                        *wi -= lr * gi;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
                    let bc1 = 1.0 - BETA1.powi(self.step as i32);
                    let bc2 = 1.0 - BETA2.powi(self.step as i32);
                    for k in 0..w.len() {
                        m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
                        v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
                        let mh = m[k] / bc1;
                        let vh = v[k] / bc2;
                        w[k] -= lr * mh / (vh.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

/// Mutable state of a run: optimizer moments and the seeded streams.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub optimizer: Optimizer,
    pub streams: SeedStreams,
}

impl Trainer {
    pub fn new(model: &Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            optimizer: Optimizer::new(cfg.optimizer, cfg.learning_rate, model.params()),
            streams: SeedStreams::new(cfg.seed),
            cfg,
        })
    }

    /// Draws negatives, computes the batch loss and its gradients, and applies
    /// one optimizer update. Returns the batch loss.
    pub fn training_step(&mut self, model: &mut Model, positives: &[IdTuple]) -> Result<f64> {
        self.step_at(model, positives, 0, 0)
    }

    fn step_at(&mut self, model: &mut Model, positives: &[IdTuple], epoch: usize, batch: usize) -> Result<f64> {
        let negatives = match self.cfg.objective {
            Objective::FullBce => Vec::new(),
            _ => {
                let n = model.vocab().train_entity_count();
                positives
                    .iter()
                    .map(|t| sample_negative(t, n, &mut self.streams.negatives).map(|c| c.target))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let (loss, grads) = batch_loss_and_grads(model, positives, &negatives, &self.cfg)?;
        if !loss.is_finite() {
            let shown: Vec<String> = positives
                .iter()
                .take(4)
                .map(|t| format!("({},{},{})", t.source.0, t.relation.0, t.target.0))
                .collect();
            return Err(Error::NonFiniteLoss {
                loss,
                epoch,
                batch,
                diagnostics: format!("{} tuples, first: {}", positives.len(), shown.join(" ")),
            });
        }
        self.optimizer.apply(model.params_mut(), &grads);
        Ok(loss)
    }
}

/// Bytes needed by one full-bce batch: encodings of every training entity
/// plus logits, probabilities and gradients for every (example, entity) pair.
pub fn full_bce_memory_estimate(model: &Model, n_entities: usize, avg_len: f64, batch_size: usize) -> u64 {
    let per_entity = model.cache_slots_per_entity(avg_len);
    let slots = n_entities as f64 * per_entity + (batch_size as f64) * (n_entities as f64) * 3.0;
    (slots * 8.0) as u64
}

pub fn check_full_bce_memory(model: &Model, n_entities: usize, avg_len: f64, cfg: &TrainConfig) -> Result<()> {
    let bytes = full_bce_memory_estimate(model, n_entities, avg_len, cfg.batch_size);
    let mb = bytes / (1024 * 1024);
    if mb > cfg.memory_budget_mb {
        return Err(Error::MemoryBudget { estimated_mb: mb, budget_mb: cfg.memory_budget_mb, entities: n_entities });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_mrr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters the model holds on return, when a dev hook ran.
    pub best_epoch: Option<usize>,
}

pub type DevHook<'a> = &'a mut dyn FnMut(&Model) -> Result<f64>;
pub type EpochHook<'a> = &'a mut dyn FnMut(&Model, &EpochRecord) -> Result<()>;

#[derive(Default)]
pub struct FitHooks<'a> {
    /// Returns dev MRR; enables best-dev parameter selection.
    pub dev_eval: Option<DevHook<'a>>,
    /// Called after every epoch (checkpointing, logging).
    pub on_epoch: Option<EpochHook<'a>>,
}

/// Runs `cfg.epochs` epochs of seeded shuffled mini-batches over the training split.
pub fn fit(ds: &Dataset, model: &mut Model, cfg: &TrainConfig, hooks: FitHooks<'_>) -> Result<FitHistory> {
    let mut trainer = Trainer::new(model, cfg.clone())?;
    fit_with(ds, model, &mut trainer, hooks)
}

pub fn fit_with(ds: &Dataset, model: &mut Model, trainer: &mut Trainer, mut hooks: FitHooks<'_>) -> Result<FitHistory> {
    let cfg = trainer.cfg.clone();
    let mut history = FitHistory::default();
    if cfg.epochs == 0 {
        return Ok(history);
    }
    if cfg.objective == Objective::FullBce {
        let stats = crate::data::compute_stats(ds);
        check_full_bce_memory(model, ds.vocab.train_entity_count(), stats.avg_entity_length, &cfg)?;
    }
    let mut order: Vec<usize> = (0..ds.train.len()).collect();
    let mut best: Option<(f64, usize, ParameterStore)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut trainer.streams.shuffle);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<IdTuple> = chunk.iter().map(|&i| ds.train[i]).collect();
            sum += trainer.step_at(model, &batch, epoch, b)?;
            batches += 1;
        }
        let mut record = EpochRecord { epoch, train_loss: sum / batches.max(1) as f64, dev_mrr: None };
        if let Some(dev) = hooks.dev_eval.as_mut() {
            let mrr = dev(model)?;
            record.dev_mrr = Some(mrr);
            if best.as_ref().is_none_or(|(b, _, _)| mrr > *b) {
                best = Some((mrr, epoch, model.params().clone()));
            }
        }
        if let Some(cb) = hooks.on_epoch.as_mut() {
            cb(model, &record)?;
        }
        history.epochs.push(record);
    }
    if let Some((_, epoch, params)) = best {
        model.set_params(params)?;
        history.best_epoch = Some(epoch);
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// (parameter name, max relative error over its entries)
    pub per_param: Vec<(String, f64)>,
    pub entries_checked: usize,
    /// Entries where a ReLU or max-pool switch fell inside the probe interval:
    /// the one-sided differences disagree, and a central difference at
    /// `GRAD_CHECK_STEP * GRAD_CHECK_REFINE` matches the analytic value.
    /// These are excluded from the maxima above.
    pub kinks: usize,
}

pub const GRAD_CHECK_STEP: f64 = 1e-4;
/// Denominator floor for the relative error, so entries whose true gradient
/// is ~0 are compared on an absolute scale.
pub const GRAD_CHECK_FLOOR: f64 = 1e-5;
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-3;
pub const GRAD_CHECK_REFINE: f64 = 1e-2;

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_CHECK_FLOOR)
}

/// Compares analytic gradients of the batch loss with central finite
/// differences for every trainable parameter entry. Negatives are drawn once
/// from `negative_seed` and held fixed across probes.
pub fn gradient_check(model: &Model, sample: &[IdTuple], cfg: &TrainConfig, negative_seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(negative_seed);
    let negatives: Vec<EntityId> = match cfg.objective {
        Objective::FullBce => Vec::new(),
        _ => {
            let n = model.vocab().train_entity_count();
            sample
                .iter()
                .map(|t| sample_negative(t, n, &mut rng).map(|c| c.target))
                .collect::<Result<_>>()?
        }
    };
    let (center, grads) = batch_loss_and_grads(model, sample, &negatives, cfg)?;
    let mut probe = model.clone();
    let mut report = GradCheckReport { max_relative_error: 0.0, per_param: Vec::new(), entries_checked: 0, kinks: 0 };
    let ids: Vec<_> = model.params().iter().filter(|(_, p)| p.trainable).map(|(id, p)| (id, p.name.clone())).collect();
    for (id, name) in ids {
        let mut worst = 0.0f64;
        for k in 0..model.params().get(id).len() {
            let orig = model.params().value(id)[k];
            probe.params_mut().value_mut(id)[k] = orig + GRAD_CHECK_STEP;
            let up = batch_loss(&probe, sample, &negatives, cfg)?;
            probe.params_mut().value_mut(id)[k] = orig - GRAD_CHECK_STEP;
            let down = batch_loss(&probe, sample, &negatives, cfg)?;
            probe.params_mut().value_mut(id)[k] = orig;
            let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
            let analytic = grads.get(id)[k];
            let rel = relative_error(analytic, numeric);
            report.entries_checked += 1;
            if rel >= GRAD_CHECK_TOLERANCE {
                let forward = (up - center) / GRAD_CHECK_STEP;
                let backward = (center - down) / GRAD_CHECK_STEP;
                if relative_error(forward, backward) >= GRAD_CHECK_TOLERANCE {
                    let h = GRAD_CHECK_STEP * GRAD_CHECK_REFINE;
                    probe.params_mut().value_mut(id)[k] = orig + h;
                    let up = batch_loss(&probe, sample, &negatives, cfg)?;
                    probe.params_mut().value_mut(id)[k] = orig - h;
                    let down = batch_loss(&probe, sample, &negatives, cfg)?;
                    probe.params_mut().value_mut(id)[k] = orig;
                    if relative_error(analytic, (up - down) / (2.0 * h)) < GRAD_CHECK_TOLERANCE {
                        report.kinks += 1;
                        continue;
                    }
                }
            }
            worst = worst.max(rel);
        }
        report.max_relative_error = report.max_relative_error.max(worst);
        report.per_param.push((name, worst));
    }
    Ok(report)
}
