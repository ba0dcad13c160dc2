//! Encoder × scorer composition.
//!
//! A [`Model`] owns its vocabulary view (entity and relation token
//! sequences), a [`ParameterStore`], and the typed handles into it. Text
//! encoders share one body (convolution filters or LSTM cells) between
//! entities and relations; relations get their own projection head only when
//! the relation dimension differs from the entity dimension.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EntityId, IdTuple, RelationId, Vocabulary, WordId};
use crate::encoders::{
    gather_rows, BiLstmCache, BiLstmEncoder, CnnCache, CnnEncoder, ConvFilter, Linear, LookupTable, LstmCell, Matrix,
};
use crate::error::{Error, Result};
use crate::params::{sigmoid, uniform, Gradients, Param, ParamId, ParameterStore};
use crate::scoring::{dot, transe_from_query, transe_query, transe_residual_grad, Norm, ScoreVector, TuckerCore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderKind {
    Lookup,
    Cnn,
    BiLstm,
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lookup" => Ok(Self::Lookup),
            "cnn" => Ok(Self::Cnn),
            "bilstm" => Ok(Self::BiLstm),
            other => Err(Error::Config(format!("unknown encoder `{other}` (lookup, cnn, bilstm)"))),
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Lookup => "lookup",
            Self::Cnn => "cnn",
            Self::BiLstm => "bilstm",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScorerKind {
    TransE,
    Tucker,
}

impl FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transe" => Ok(Self::TransE),
            "tucker" => Ok(Self::Tucker),
            other => Err(Error::Config(format!("unknown scorer `{other}` (transe, tucker)"))),
        }
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TransE => "transe",
            Self::Tucker => "tucker",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    pub scorer: ScorerKind,
    pub norm: Norm,
    pub word_dim: usize,
    pub entity_dim: usize,
    pub relation_dim: usize,
    pub cnn_widths: Vec<usize>,
    pub cnn_channels: usize,
    pub lstm_hidden: usize,
    /// Half-width of the uniform init for word vectors, lookup rows and cold rows.
    pub init_range: f64,
    pub core_init_range: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::Cnn,
            scorer: ScorerKind::Tucker,
            norm: Norm::L2,
            word_dim: 32,
            entity_dim: 32,
            relation_dim: 32,
            cnn_widths: vec![1, 2, 3],
            cnn_channels: 32,
            lstm_hidden: 32,
            init_range: 0.1,
            core_init_range: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("word_dim", self.word_dim),
            ("entity_dim", self.entity_dim),
            ("relation_dim", self.relation_dim),
            ("cnn_channels", self.cnn_channels),
            ("lstm_hidden", self.lstm_hidden),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be >= 1")));
            }
        }
        if self.cnn_widths.is_empty() || self.cnn_widths.contains(&0) {
            return Err(Error::Config("cnn_widths must be a non-empty list of widths >= 1".into()));
        }
        if self.scorer == ScorerKind::TransE && self.relation_dim != self.entity_dim {
            return Err(Error::Config(format!(
                "transe needs relation_dim == entity_dim ({} != {})",
                self.relation_dim, self.entity_dim
            )));
        }
        if !(self.init_range >= 0.0 && self.core_init_range >= 0.0) {
            return Err(Error::Config("init ranges must be >= 0".into()));
        }
        Ok(())
    }

    /// Embedding dims handed to the scorer: (entity, relation).
    pub fn dims(&self) -> (usize, usize) {
        (self.entity_dim, self.relation_dim)
    }
}

#[derive(Debug, Clone)]
enum Body {
    Cnn(CnnEncoder),
    BiLstm(BiLstmEncoder),
}

#[derive(Debug, Clone)]
enum EncoderLayout {
    Text {
        words: ParamId,
        word_dim: usize,
        body: Body,
        entity_head: Linear,
        relation_head: Option<Linear>,
    },
    Lookup {
        entities: LookupTable,
        relations: LookupTable,
    },
}

#[derive(Debug, Clone)]
struct Layout {
    encoder: EncoderLayout,
    core: Option<ParamId>,
}

enum Init {
    Uniform(f64),
    Zeros,
}

/// Declares parameters either by creating them or by binding to an existing
/// store, so that model construction and checkpoint loading share one code path.
trait ParamSource {
    fn param(&mut self, name: &str, shape: &[usize], init: Init, trainable: bool) -> Result<ParamId>;
}

struct Creator<'a> {
    store: &'a mut ParameterStore,
    rng: ChaCha8Rng,
}

impl ParamSource for Creator<'_> {
    fn param(&mut self, name: &str, shape: &[usize], init: Init, trainable: bool) -> Result<ParamId> {
        let n = shape.iter().product();
        let value = match init {
            Init::Uniform(r) => uniform(&mut self.rng, n, r),
            Init::Zeros => vec![0.0; n],
        };
        self.store.push(Param { name: name.into(), shape: shape.to_vec(), value, trainable })
    }
}

struct Binder<'a> {
    store: &'a ParameterStore,
}

impl ParamSource for Binder<'_> {
    fn param(&mut self, name: &str, shape: &[usize], _init: Init, trainable: bool) -> Result<ParamId> {
        let id = self
            .store
            .find(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
        let p = self.store.get(id);
        if p.shape != shape || p.trainable != trainable {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` has shape {:?} (trainable={}), expected {:?} (trainable={})",
                p.shape, p.trainable, shape, trainable
            )));
        }
        Ok(id)
    }
}

fn glorot(fan_in: usize, fan_out: usize) -> Init {
    Init::Uniform((6.0 / (fan_in + fan_out) as f64).sqrt())
}

fn linear(src: &mut dyn ParamSource, name: &str, inputs: usize, outputs: usize) -> Result<Linear> {
    Ok(Linear {
        weight: src.param(&format!("{name}.weight"), &[inputs, outputs], glorot(inputs, outputs), true)?,
        bias: src.param(&format!("{name}.bias"), &[outputs], Init::Zeros, true)?,
        inputs,
        outputs,
    })
}

fn lstm_cell(src: &mut dyn ParamSource, name: &str, input: usize, hidden: usize) -> Result<LstmCell> {
    let r = 1.0 / (hidden as f64).sqrt();
    Ok(LstmCell {
        input,
        hidden,
        w_x: src.param(&format!("{name}.w_x"), &[4 * hidden, input], Init::Uniform(r), true)?,
        w_h: src.param(&format!("{name}.w_h"), &[4 * hidden, hidden], Init::Uniform(r), true)?,
        bias: src.param(&format!("{name}.bias"), &[4 * hidden], Init::Zeros, true)?,
    })
}

fn lookup_table(src: &mut dyn ParamSource, name: &str, trained: usize, total: usize, dim: usize, range: f64) -> Result<LookupTable> {
    // One cold row per id without a trained row, plus the fallback row.
    let cold_rows = total - trained + 1;
    Ok(LookupTable {
        trained: src.param(&format!("{name}.table"), &[trained, dim], Init::Uniform(range), true)?,
        trained_rows: trained,
        cold: src.param(&format!("{name}.cold"), &[cold_rows, dim], Init::Uniform(range), false)?,
        cold_rows,
        dim,
    })
}

fn declare(cfg: &ModelConfig, vocab: &Vocabulary, src: &mut dyn ParamSource) -> Result<Layout> {
    let (de, dr) = cfg.dims();
    let encoder = match cfg.encoder {
        EncoderKind::Lookup => EncoderLayout::Lookup {
            entities: lookup_table(src, "entity", vocab.train_entity_count(), vocab.entity_count(), de, cfg.init_range)?,
            relations: lookup_table(
                src,
                "relation",
                vocab.train_relation_count(),
                vocab.relation_count(),
                dr,
                cfg.init_range,
            )?,
        },
        EncoderKind::Cnn | EncoderKind::BiLstm => {
            let dw = cfg.word_dim;
            let words = src.param("words", &[vocab.word_table_rows(), dw], Init::Uniform(cfg.init_range), true)?;
            let (body, feat) = if cfg.encoder == EncoderKind::Cnn {
                let mut filters = Vec::new();
                for &w in &cfg.cnn_widths {
                    let c = cfg.cnn_channels;
                    filters.push(ConvFilter {
                        width: w,
                        channels: c,
                        weight: src.param(&format!("cnn.w{w}.weight"), &[w, dw, c], glorot(w * dw, c), true)?,
                        bias: src.param(&format!("cnn.w{w}.bias"), &[c], Init::Zeros, true)?,
                    });
                }
                let enc = CnnEncoder { word_dim: dw, filters };
                let feat = enc.feature_dim();
                (Body::Cnn(enc), feat)
            } else {
                let h = cfg.lstm_hidden;
                let enc = BiLstmEncoder {
                    forward: lstm_cell(src, "lstm.fwd", dw, h)?,
                    backward: lstm_cell(src, "lstm.bwd", dw, h)?,
                };
                let feat = enc.feature_dim();
                (Body::BiLstm(enc), feat)
            };
            let entity_head = linear(src, "head.entity", feat, de)?;
            let relation_head = if dr != de { Some(linear(src, "head.relation", feat, dr)?) } else { None };
            EncoderLayout::Text { words, word_dim: dw, body, entity_head, relation_head }
        }
    };
    let core = match cfg.scorer {
        ScorerKind::Tucker => Some(src.param("tucker.core", &[de, dr, de], Init::Uniform(cfg.core_init_range), true)?),
        ScorerKind::TransE => None,
    };
    Ok(Layout { encoder, core })
}

#[derive(Debug, Clone)]
pub enum BodyCache {
    Cnn(CnnCache),
    BiLstm(BiLstmCache),
}

/// Everything the backward pass of one encoding needs.
#[derive(Debug, Clone)]
pub enum EncodeCache {
    Text {
        tokens: Vec<WordId>,
        seq: Matrix,
        body: BodyCache,
        feat: Vec<f64>,
        relation: bool,
    },
    Lookup {
        param: ParamId,
        row: usize,
        dim: usize,
    },
}

/// Per-(source, relation) intermediate a scorer reuses across targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Query(Vec<f64>);

/// Precomputed embeddings of every entity in the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateCache {
    embeddings: Vec<Vec<f64>>,
}

impl CandidateCache {
    pub fn get(&self, id: EntityId) -> Option<&[f64]> {
        self.embeddings.get(id.idx()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    vocab: Vocabulary,
    entity_tokens: Vec<Vec<WordId>>,
    relation_tokens: Vec<Vec<WordId>>,
    params: ParameterStore,
    layout: Layout,
}

impl Model {
    /// Fresh model with every parameter drawn from a ChaCha stream seeded by `init_seed`.
    pub fn new(config: ModelConfig, vocab: Vocabulary, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterStore::new();
        let layout = {
            let mut src = Creator { store: &mut params, rng: ChaCha8Rng::seed_from_u64(init_seed) };
            declare(&config, &vocab, &mut src)?
        };
        Ok(Self::assemble(config, vocab, params, layout))
    }

    pub fn for_dataset(config: ModelConfig, ds: &Dataset, init_seed: u64) -> Result<Self> {
        Self::new(config, ds.vocab.clone(), init_seed)
    }

    /// Rebinds an existing parameter store (checkpoint loading).
    pub fn from_parts(config: ModelConfig, vocab: Vocabulary, params: ParameterStore) -> Result<Self> {
        config.validate()?;
        let layout = declare(&config, &vocab, &mut Binder { store: &params })?;
        if layout_param_count(&layout) != params.len() {
            return Err(Error::Checkpoint("checkpoint carries unexpected extra parameters".into()));
        }
        Ok(Self::assemble(config, vocab, params, layout))
    }

    fn assemble(config: ModelConfig, vocab: Vocabulary, params: ParameterStore, layout: Layout) -> Self {
        let entity_tokens = vocab.entities().map(|(_, t)| vocab.tokenize(t)).collect();
        let relation_tokens = vocab.relations().map(|(_, t)| vocab.tokenize(t)).collect();
        Self { config, vocab, entity_tokens, relation_tokens, params, layout }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParameterStore) -> Result<()> {
        declare(&self.config, &self.vocab, &mut Binder { store: &params })?;
        self.params = params;
        Ok(())
    }

    pub fn entity_count(&self) -> usize {
        self.vocab.entity_count()
    }

    pub fn is_text_encoder(&self) -> bool {
        matches!(self.layout.encoder, EncoderLayout::Text { .. })
    }

    fn check_entity(&self, id: EntityId) -> Result<()> {
        if id.idx() >= self.entity_tokens.len() {
            return Err(Error::IdOutOfRange { kind: "entity", id: id.idx(), size: self.entity_tokens.len() });
        }
        Ok(())
    }

    fn check_relation(&self, id: RelationId) -> Result<()> {
        if id.idx() >= self.relation_tokens.len() {
            return Err(Error::IdOutOfRange { kind: "relation", id: id.idx(), size: self.relation_tokens.len() });
        }
        Ok(())
    }

    fn encode_text(&self, tokens: &[WordId], relation: bool) -> Result<(Vec<f64>, EncodeCache)> {
        let EncoderLayout::Text { words, word_dim, body, entity_head, relation_head } = &self.layout.encoder else {
            unreachable!("encode_text on a lookup model")
        };
        let table = self.params.value(*words);
        let seq = gather_rows(tokens, table, self.vocab.word_table_rows(), *word_dim)?;
        let (feat, body_cache) = match body {
            Body::Cnn(enc) => {
                let (f, c) = enc.features(&self.params, &seq);
                (f, BodyCache::Cnn(c))
            }
            Body::BiLstm(enc) => {
                let (f, c) = enc.features(&self.params, &seq);
                (f, BodyCache::BiLstm(c))
            }
        };
        let head = if relation { relation_head.as_ref().unwrap_or(entity_head) } else { entity_head };
        let out = head.forward(&self.params, &feat);
        Ok((out, EncodeCache::Text { tokens: tokens.to_vec(), seq, body: body_cache, feat, relation }))
    }

    fn encode_lookup(&self, table: &LookupTable, id: Option<usize>) -> (Vec<f64>, EncodeCache) {
        let (param, row) = table.locate(id);
        let v = table.row(&self.params, id).to_vec();
        (v, EncodeCache::Lookup { param, row, dim: table.dim })
    }

    pub fn encode_entity_cached(&self, id: EntityId) -> Result<(Vec<f64>, EncodeCache)> {
        self.check_entity(id)?;
        match &self.layout.encoder {
            EncoderLayout::Text { .. } => self.encode_text(&self.entity_tokens[id.idx()], false),
            EncoderLayout::Lookup { entities, .. } => Ok(self.encode_lookup(entities, Some(id.idx()))),
        }
    }

    pub fn encode_relation_cached(&self, id: RelationId) -> Result<(Vec<f64>, EncodeCache)> {
        self.check_relation(id)?;
        match &self.layout.encoder {
            EncoderLayout::Text { .. } => self.encode_text(&self.relation_tokens[id.idx()], true),
            EncoderLayout::Lookup { relations, .. } => Ok(self.encode_lookup(relations, Some(id.idx()))),
        }
    }

    pub fn encode_entity(&self, id: EntityId) -> Result<Vec<f64>> {
        Ok(self.encode_entity_cached(id)?.0)
    }

    pub fn encode_relation(&self, id: RelationId) -> Result<Vec<f64>> {
        Ok(self.encode_relation_cached(id)?.0)
    }

    /// Encodes arbitrary entity text. Text encoders tokenize it (unknown words
    /// become OOV); the lookup baseline can only return a row for text already
    /// in the vocabulary and otherwise falls back to its cold vector.
    /// The returned flag reports whether a trained representation was used.
    pub fn encode_entity_text(&self, text: &str) -> Result<(Vec<f64>, bool)> {
        let known = self.vocab.entity_id(text);
        match &self.layout.encoder {
            EncoderLayout::Text { .. } => {
                let tokens = self.vocab.tokenize(text);
                if tokens.is_empty() {
                    return Err(Error::EmptySequence);
                }
                Ok((self.encode_text(&tokens, false)?.0, true))
            }
            EncoderLayout::Lookup { entities, .. } => {
                let trained = known.is_some_and(|id| self.vocab.is_train_entity(id));
                Ok((self.encode_lookup(entities, known.map(EntityId::idx)).0, trained))
            }
        }
    }

    /// Returns (e_s, e_r, e_t).
    pub fn encode_tuple(&self, t: &IdTuple) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        Ok((self.encode_entity(t.source)?, self.encode_relation(t.relation)?, self.encode_entity(t.target)?))
    }

    /// Routes an embedding gradient back through the encoder that produced it.
    pub fn backward_encoding(&self, cache: &EncodeCache, dout: &[f64], grads: &mut Gradients) {
        match cache {
            EncodeCache::Lookup { param, row, dim } => {
                if self.params.get(*param).trainable {
                    let g = &mut grads.get_mut(*param)[row * dim..(row + 1) * dim];
                    for (a, b) in g.iter_mut().zip(dout) {
                        *a += b;
                    }
                }
            }
            EncodeCache::Text { tokens, seq, body, feat, relation } => {
                let EncoderLayout::Text { words, word_dim, body: layer, entity_head, relation_head } =
                    &self.layout.encoder
                else {
                    unreachable!("text cache on a lookup model")
                };
                let head = if *relation { relation_head.as_ref().unwrap_or(entity_head) } else { entity_head };
                let dfeat = head.backward(&self.params, feat, dout, grads);
                let dseq = match (layer, body) {
                    (Body::Cnn(enc), BodyCache::Cnn(c)) => enc.features_backward(&self.params, seq, c, &dfeat, grads),
                    (Body::BiLstm(enc), BodyCache::BiLstm(c)) => {
                        enc.features_backward(&self.params, seq, c, &dfeat, grads)
                    }
                    _ => unreachable!("encoder/cache kind mismatch"),
                };
                let gw = grads.get_mut(*words);
                for (i, t) in tokens.iter().enumerate() {
                    let row = &mut gw[t.idx() * word_dim..(t.idx() + 1) * word_dim];
                    for (a, b) in row.iter_mut().zip(dseq.row(i)) {
                        *a += b;
                    }
                }
            }
        }
    }

    fn core(&self) -> Option<TuckerCore<'_>> {
        self.layout.core.map(|id| TuckerCore {
            entity_dim: self.config.entity_dim,
            relation_dim: self.config.relation_dim,
            values: self.params.value(id),
        })
    }

    pub fn query(&self, e_s: &[f64], e_r: &[f64]) -> Result<Query> {
        let (de, dr) = self.config.dims();
        if e_s.len() != de || e_r.len() != dr {
            return Err(Error::DimensionMismatch(format!(
                "query expects ({de}, {dr}), got ({}, {})",
                e_s.len(),
                e_r.len()
            )));
        }
        Ok(Query(match self.core() {
            Some(core) => core.query(e_s, e_r),
            None => transe_query(e_s, e_r),
        }))
    }

    /// Pre-sigmoid score for one target.
    pub fn logit(&self, q: &Query, e_t: &[f64]) -> f64 {
        match self.config.scorer {
            ScorerKind::Tucker => dot(&q.0, e_t),
            ScorerKind::TransE => transe_from_query(&q.0, e_t, self.config.norm),
        }
    }

    /// Maps a logit to the scorer's confidence.
    pub fn confidence(&self, logit: f64) -> f64 {
        match self.config.scorer {
            ScorerKind::Tucker => sigmoid(logit),
            ScorerKind::TransE => logit,
        }
    }

    /// Backward pass for several targets sharing a query. `targets[k]` is
    /// (e_t, dL/dlogit). Returns (de_s, de_r, de_t per target); core
    /// gradients go straight into `grads`.
    pub fn backward_query(
        &self,
        e_s: &[f64],
        e_r: &[f64],
        q: &Query,
        targets: &[(&[f64], f64)],
        grads: &mut Gradients,
    ) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
        let mut de_s = vec![0.0; e_s.len()];
        let mut de_r = vec![0.0; e_r.len()];
        let mut de_t = Vec::with_capacity(targets.len());
        match self.core() {
            Some(core) => {
                let mut dq = vec![0.0; q.0.len()];
                for &(e_t, g) in targets {
                    for (d, v) in dq.iter_mut().zip(e_t) {
                        *d += g * v;
                    }
                    de_t.push(q.0.iter().map(|v| g * v).collect());
                }
                let core_id = self.layout.core.expect("tucker core");
                core.raw_backward(e_s, e_r, &dq, grads.get_mut(core_id), &mut de_s, &mut de_r);
            }
            None => {
                for &(e_t, g) in targets {
                    let dx = transe_residual_grad(&q.0, e_t, self.config.norm, g);
                    for k in 0..dx.len() {
                        de_s[k] += dx[k];
                        de_r[k] += dx[k];
                    }
                    de_t.push(dx.iter().map(|v| -v).collect());
                }
            }
        }
        (de_s, de_r, de_t)
    }

    /// Confidence of a single tuple via `encode_tuple` and the scorer.
    pub fn score_tuple(&self, t: &IdTuple) -> Result<f64> {
        let (s, r, o) = self.encode_tuple(t)?;
        let q = self.query(&s, &r)?;
        Ok(self.confidence(self.logit(&q, &o)))
    }

    /// Embeds every vocabulary entity once, in parallel.
    pub fn candidate_cache(&self) -> Result<CandidateCache> {
        let embeddings = (0..self.entity_count())
            .into_par_iter()
            .map(|i| self.encode_entity(EntityId(i as u32)))
            .collect::<Result<Vec<_>>>()?;
        Ok(CandidateCache { embeddings })
    }

    /// Scores `candidates` as targets of an already-encoded (source, relation).
    pub fn score_query_candidates(
        &self,
        e_s: &[f64],
        e_r: &[f64],
        candidates: &[EntityId],
        cache: Option<&CandidateCache>,
    ) -> Result<ScoreVector> {
        if candidates.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        let q = self.query(e_s, e_r)?;
        let mut logits = Vec::with_capacity(candidates.len());
        for &c in candidates {
            let l = match cache {
                Some(cache) => {
                    let e = cache
                        .get(c)
                        .ok_or(Error::IdOutOfRange { kind: "entity", id: c.idx(), size: cache.len() })?;
                    self.logit(&q, e)
                }
                None => self.logit(&q, &self.encode_entity(c)?),
            };
            logits.push(l);
        }
        let scores = logits.iter().map(|&l| self.confidence(l)).collect();
        Ok(ScoreVector { candidates: candidates.to_vec(), scores, logits })
    }

    pub fn score_candidates(
        &self,
        source: EntityId,
        relation: RelationId,
        candidates: &[EntityId],
        cache: Option<&CandidateCache>,
    ) -> Result<ScoreVector> {
        let e_s = match cache {
            Some(c) if source.idx() < c.len() => c.get(source).unwrap().to_vec(),
            _ => self.encode_entity(source)?,
        };
        let e_r = self.encode_relation(relation)?;
        self.score_query_candidates(&e_s, &e_r, candidates, cache)
    }

    pub fn all_entities(&self) -> Vec<EntityId> {
        (0..self.entity_count() as u32).map(EntityId).collect()
    }

    /// Rough per-entity activation footprint of one encoding, in f64 slots.
    pub(crate) fn cache_slots_per_entity(&self, avg_len: f64) -> f64 {
        let c = &self.config;
        let base = (c.entity_dim * 2) as f64;
        match c.encoder {
            EncoderKind::Lookup => base,
            EncoderKind::Cnn => {
                base + avg_len * c.word_dim as f64 * 2.0 + (c.cnn_widths.len() * c.cnn_channels) as f64 * 2.0
            }
            EncoderKind::BiLstm => base + avg_len * (c.word_dim as f64 * 2.0 + 2.0 * 7.0 * c.lstm_hidden as f64),
        }
    }
}

fn layout_param_count(layout: &Layout) -> usize {
    let enc = match &layout.encoder {
        EncoderLayout::Lookup { .. } => 4,
        EncoderLayout::Text { body, relation_head, .. } => {
            let body_n = match body {
                Body::Cnn(c) => 2 * c.filters.len(),
                Body::BiLstm(_) => 6,
            };
            1 + body_n + 2 + if relation_head.is_some() { 2 } else { 0 }
        }
    };
    enc + layout.core.map_or(0, |_| 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_dataset, RawTuple};

    fn toy() -> Dataset {
        let t = |s: &str, r: &str, o: &str| RawTuple::new(s, r, o);
        build_dataset(
            &[t("go to zoo", "causes", "see animal"), t("fly kite", "causes", "have fun"), t("see animal", "is a", "fun")],
            &[],
            &[t("fly giant kite", "causes", "have fun"), t("go to zoo", "causes", "go to zoo")],
        )
        .unwrap()
    }

    fn cfg(encoder: EncoderKind, scorer: ScorerKind) -> ModelConfig {
        ModelConfig {
            encoder,
            scorer,
            word_dim: 4,
            entity_dim: 5,
            relation_dim: if scorer == ScorerKind::Tucker { 3 } else { 5 },
            cnn_channels: 3,
            lstm_hidden: 3,
            ..ModelConfig::default()
        }
    }

    const ALL: [(EncoderKind, ScorerKind); 6] = [
        (EncoderKind::Lookup, ScorerKind::TransE),
        (EncoderKind::Lookup, ScorerKind::Tucker),
        (EncoderKind::Cnn, ScorerKind::TransE),
        (EncoderKind::Cnn, ScorerKind::Tucker),
        (EncoderKind::BiLstm, ScorerKind::TransE),
        (EncoderKind::BiLstm, ScorerKind::Tucker),
    ];

    #[test]
    fn tuple_shapes_follow_config() {
        let ds = toy();
        for (e, s) in ALL {
            let m = Model::for_dataset(cfg(e, s), &ds, 7).unwrap();
            let (a, b, c) = m.encode_tuple(&ds.train[0]).unwrap();
            let (de, dr) = m.config().dims();
            assert_eq!((a.len(), b.len(), c.len()), (de, dr, de), "{e} {s}");
        }
    }

    #[test]
    fn identical_source_and_target_text_encode_identically() {
        let ds = toy();
        let t = ds.test[1];
        assert_eq!(t.source, t.target);
        for (e, s) in ALL {
            let m = Model::for_dataset(cfg(e, s), &ds, 3).unwrap();
            let (a, _, c) = m.encode_tuple(&t).unwrap();
            assert_eq!(a, c);
        }
    }

    #[test]
    fn lookup_rows_and_cold_vectors() {
        let ds = toy();
        let m = Model::for_dataset(cfg(EncoderKind::Lookup, ScorerKind::Tucker), &ds, 1).unwrap();
        let seen = ds.vocab.entity_id("fly kite").unwrap();
        let table = m.params().find("entity.table").unwrap();
        let row = &m.params().value(table)[seen.idx() * 5..seen.idx() * 5 + 5];
        assert_eq!(m.encode_entity(seen).unwrap(), row);

        let unseen = ds.vocab.entity_id("fly giant kite").unwrap();
        assert!(!ds.vocab.is_train_entity(unseen));
        let before = m.params().clone();
        let a = m.encode_entity(unseen).unwrap();
        let b = m.encode_entity(unseen).unwrap();
        assert_eq!(a, b);
        assert_eq!(&before, m.params());
        let cold = m.params().find("entity.cold").unwrap();
        assert!(!m.params().get(cold).trainable);
        // Unknown text takes the fallback row and is flagged untrained.
        let (v, trained) = m.encode_entity_text("never seen before").unwrap();
        assert!(!trained);
        assert_eq!(v.len(), 5);
    }

    #[test]
    fn encoding_is_deterministic_across_seeds_and_calls() {
        let ds = toy();
        for (e, s) in ALL {
            let a = Model::for_dataset(cfg(e, s), &ds, 11).unwrap();
            let b = Model::for_dataset(cfg(e, s), &ds, 11).unwrap();
            assert_eq!(a.params(), b.params());
            assert_eq!(a.encode_tuple(&ds.test[0]).unwrap(), b.encode_tuple(&ds.test[0]).unwrap());
        }
    }

    #[test]
    fn batch_scores_equal_single_scores_bitwise() {
        let ds = toy();
        for (e, s) in ALL {
            let m = Model::for_dataset(cfg(e, s), &ds, 5).unwrap();
            let cache = m.candidate_cache().unwrap();
            let cands = m.all_entities();
            let t = ds.train[0];
            let cached = m.score_candidates(t.source, t.relation, &cands, Some(&cache)).unwrap();
            let uncached = m.score_candidates(t.source, t.relation, &cands, None).unwrap();
            assert_eq!(cached, uncached);
            for (i, &c) in cands.iter().enumerate() {
                let single = m.score_tuple(&IdTuple { target: c, ..t }).unwrap();
                assert_eq!(single.to_bits(), cached.scores[i].to_bits());
            }
            if s == ScorerKind::Tucker {
                assert!(cached.scores.iter().all(|&p| p > 0.0 && p < 1.0));
            }
            let one = m.score_candidates(t.source, t.relation, &cands[..1], None).unwrap();
            assert_eq!(one.scores.len(), 1);
            assert!(matches!(m.score_candidates(t.source, t.relation, &[], None), Err(Error::EmptyCandidates)));
        }
    }

    #[test]
    fn from_parts_rebinds_and_rejects_mismatch() {
        let ds = toy();
        let c = cfg(EncoderKind::Cnn, ScorerKind::Tucker);
        let m = Model::for_dataset(c.clone(), &ds, 2).unwrap();
        let again = Model::from_parts(c.clone(), ds.vocab.clone(), m.params().clone()).unwrap();
        assert_eq!(again.encode_tuple(&ds.train[1]).unwrap(), m.encode_tuple(&ds.train[1]).unwrap());
        let other = ModelConfig { cnn_channels: 4, ..c };
        assert!(Model::from_parts(other, ds.vocab.clone(), m.params().clone()).is_err());
    }

    #[test]
    fn transe_requires_matching_dims() {
        let c = ModelConfig { scorer: ScorerKind::TransE, relation_dim: 3, entity_dim: 4, ..ModelConfig::default() };
        assert!(c.validate().is_err());
    }
}
