//! Python bindings: datasets, models, training, ranking and generation audits.
//!
//! Structured results come back as plain dicts and lists (via JSON), so the
//! Python side never has to know about the Rust types behind them.

use std::path::PathBuf;

use ckgr::checkpoint::Checkpoint;
use ckgr::cli::rank_query;
use ckgr::config::RunConfig;
use ckgr::eval::{build_filter_index, evaluate, evaluate_tuples, random_mrr, with_workers};
use ckgr::gen_analysis::{self, EntitySet, GeneratedRecord};
use ckgr::training::{self, FitHooks, LossBatch, SeedStreams, TrainConfig};
use ckgr::{Norm, Split, TuckerCore, TupleFormat};
use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyList, PyTuple};

fn err(e: ckgr::Error) -> PyErr {
    match e {
        ckgr::Error::UnknownConfigKey { .. } => PyKeyError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn ser<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

/// Config values arrive as Python objects; lists become comma-joined widths.
fn config_value(v: &Bound<'_, PyAny>) -> PyResult<String> {
    if v.is_instance_of::<PyBool>() {
        return Ok(if v.extract::<bool>()? { "true" } else { "false" }.to_string());
    }
    if v.is_instance_of::<PyList>() || v.is_instance_of::<PyTuple>() {
        let items: Vec<usize> = v.extract()?;
        return Ok(items.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","));
    }
    Ok(v.str()?.to_string())
}

fn run_config(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(kw) = kwargs {
        for (k, v) in kw.iter() {
            cfg.set(&k.extract::<String>()?, &config_value(&v)?).map_err(err)?;
        }
    }
    cfg.model.validate().map_err(err)?;
    cfg.train.validate().map_err(err)?;
    Ok(cfg)
}

fn raw_tuples(rows: Vec<(String, String, String)>) -> Vec<ckgr::RawTuple> {
    rows.iter().map(|(s, r, t)| ckgr::RawTuple::new(s, r, t)).collect()
}

fn parse_split(name: &str) -> PyResult<Split> {
    name.parse().map_err(err)
}

#[pyclass(frozen)]
struct Dataset {
    inner: ckgr::Dataset,
    train_raw: Vec<ckgr::RawTuple>,
}

#[pymethods]
impl Dataset {
    /// Builds a dataset from (source, relation, target) string triples.
    #[new]
    #[pyo3(signature = (train, dev=Vec::new(), test=Vec::new()))]
    fn new(
        train: Vec<(String, String, String)>,
        dev: Vec<(String, String, String)>,
        test: Vec<(String, String, String)>,
    ) -> PyResult<Self> {
        let train = raw_tuples(train);
        let inner = ckgr::build_dataset(&train, &raw_tuples(dev), &raw_tuples(test)).map_err(err)?;
        Ok(Self { inner, train_raw: train })
    }

    /// Loads `train.tsv`, `dev.tsv` and `test.tsv` from a directory.
    #[staticmethod]
    #[pyo3(signature = (path, format="src-first"))]
    fn load(path: PathBuf, format: &str) -> PyResult<Self> {
        let format: TupleFormat = format.parse().map_err(err)?;
        let raw = ckgr::data::load_raw_splits(&path, format).map_err(err)?;
        let inner = ckgr::build_dataset(&raw.train, &raw.dev, &raw.test).map_err(err)?;
        Ok(Self { inner, train_raw: raw.train })
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &ser(&ckgr::compute_stats(&self.inner)))
    }

    fn split_len(&self, split: &str) -> PyResult<usize> {
        Ok(self.inner.split(parse_split(split)?).len())
    }

    #[getter]
    fn entity_count(&self) -> usize {
        self.inner.vocab.entity_count()
    }

    #[getter]
    fn relation_count(&self) -> usize {
        self.inner.vocab.relation_count()
    }

    #[pyo3(signature = (lowercase=true))]
    fn training_entities(&self, lowercase: bool) -> Vec<String> {
        EntitySet::from_training(&self.train_raw, lowercase).iter().map(str::to_string).collect()
    }
}

#[pyclass(frozen)]
struct Model {
    inner: ckgr::Model,
    train: TrainConfig,
    epoch: usize,
}

#[pymethods]
impl Model {
    /// Initializes a model for `dataset`; keyword arguments are config keys.
    #[new]
    #[pyo3(signature = (dataset, **config))]
    fn new(dataset: &Dataset, config: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let cfg = run_config(config)?;
        let seed = SeedStreams::new(cfg.train.seed).init;
        let inner = ckgr::Model::for_dataset(cfg.model, &dataset.inner, seed).map_err(err)?;
        Ok(Self { inner, train: cfg.train, epoch: 0 })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = Checkpoint::load(&path).map_err(err)?;
        let (train, epoch) = (ck.train.clone(), ck.epoch);
        Ok(Self { inner: ck.into_model().map_err(err)?, train, epoch })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        Checkpoint::from_model(&self.inner, &self.train, self.epoch).save(&path).map_err(err)
    }

    #[getter]
    fn encoder(&self) -> String {
        self.inner.config().encoder.to_string()
    }

    #[getter]
    fn scorer(&self) -> String {
        self.inner.config().scorer.to_string()
    }

    #[getter]
    fn vocab_hash(&self) -> String {
        self.inner.vocab().hash()
    }

    /// Trains a copy of this model and returns it together with the
    /// per-epoch log. Keyword arguments override the stored training config.
    #[pyo3(signature = (dataset, dev_eval=true, **config))]
    fn fit<'py>(
        &self,
        py: Python<'py>,
        dataset: &Dataset,
        dev_eval: bool,
        config: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<(Model, Bound<'py, PyAny>)> {
        let mut cfg = RunConfig { train: self.train.clone(), model: self.inner.config().clone(), ..RunConfig::default() };
        if let Some(kw) = config {
            for (k, v) in kw.iter() {
                cfg.set(&k.extract::<String>()?, &config_value(&v)?).map_err(err)?;
            }
        }
        if cfg.model != *self.inner.config() {
            return Err(PyValueError::new_err("fit accepts training keys only; build a new Model to change the architecture"));
        }
        cfg.train.validate().map_err(err)?;
        if self.inner.vocab().hash() != dataset.inner.vocab.hash() {
            return Err(PyValueError::new_err("model vocabulary does not match the dataset"));
        }
        let ds = &dataset.inner;
        let mut model = self.inner.clone();
        let train = cfg.train;
        let history = py
            .detach(|| {
                let filter = build_filter_index(ds);
                let mut dev_hook = |m: &ckgr::Model| -> ckgr::Result<f64> {
                    let cache = with_workers(|| m.candidate_cache())?;
                    Ok(evaluate_tuples(m, &ds.dev, &filter, &cache)?.report.mrr)
                };
                let hooks = FitHooks {
                    dev_eval: if dev_eval && !ds.dev.is_empty() { Some(&mut dev_hook) } else { None },
                    on_epoch: None,
                };
                training::fit(ds, &mut model, &train, hooks)
            })
            .map_err(err)?;
        let epoch = history.best_epoch.unwrap_or(history.epochs.len());
        let log = to_py(py, &ser(&history.epochs))?;
        Ok((Model { inner: model, train, epoch }, log))
    }

    /// Filtered ranking metrics on a split, plus the random-ranking MRR.
    #[pyo3(signature = (dataset, split="test"))]
    fn evaluate<'py>(&self, py: Python<'py>, dataset: &Dataset, split: &str) -> PyResult<Bound<'py, PyAny>> {
        let split = parse_split(split)?;
        if self.inner.vocab().hash() != dataset.inner.vocab.hash() {
            return Err(PyValueError::new_err("model vocabulary does not match the dataset"));
        }
        let out = py.detach(|| evaluate(&self.inner, &dataset.inner, split)).map_err(err)?;
        let ranks: Vec<usize> = out.ranks.iter().map(|r| r.rank).collect();
        let v = serde_json::json!({
            "metrics": out.report.to_json(),
            "random_mrr": random_mrr(&out.ranks),
            "ranks": ranks,
        });
        to_py(py, &v)
    }

    /// Top-`k` targets for a free-text source under a known relation.
    #[pyo3(signature = (source, relation, k=10))]
    fn rank<'py>(&self, py: Python<'py>, source: &str, relation: &str, k: usize) -> PyResult<Bound<'py, PyAny>> {
        let (ranked, _) = py.detach(|| rank_query(&self.inner, source, relation, k)).map_err(err)?;
        to_py(py, &ser(&ranked))
    }

    /// Confidence in (0, 1] for a tuple whose texts are all in the vocabulary.
    fn score(&self, source: &str, relation: &str, target: &str) -> PyResult<f64> {
        let v = self.inner.vocab();
        let lookup = |kind: &str, id: Option<u32>| id.ok_or_else(|| PyValueError::new_err(format!("unknown {kind}")));
        let t = ckgr::IdTuple {
            source: ckgr::EntityId(lookup("source", v.entity_id(source).map(|e| e.0))?),
            relation: ckgr::RelationId(lookup("relation", v.relation_id(relation).map(|r| r.0))?),
            target: ckgr::EntityId(lookup("target", v.entity_id(target).map(|e| e.0))?),
        };
        self.inner.score_tuple(&t).map_err(err)
    }
}

#[pyfunction]
fn normalize_text(text: &str) -> String {
    ckgr::normalize_text(text)
}

#[pyfunction]
#[pyo3(signature = (p, y, epsilon=1e-7))]
fn bce_loss(p: Vec<f64>, y: Vec<f64>, epsilon: f64) -> PyResult<f64> {
    Ok(training::bce_loss(&LossBatch::new(p, y).map_err(err)?, epsilon))
}

#[pyfunction]
#[pyo3(signature = (e_s, e_r, e_t, norm="l1"))]
fn score_transe(e_s: Vec<f64>, e_r: Vec<f64>, e_t: Vec<f64>, norm: &str) -> PyResult<f64> {
    let norm: Norm = norm.parse().map_err(err)?;
    ckgr::score_transe(&e_s, &e_r, &e_t, norm).map_err(err)
}

/// `core` is the flattened (d_e, d_r, d_e) tensor in row-major order.
#[pyfunction]
fn score_tucker(e_s: Vec<f64>, w_r: Vec<f64>, e_t: Vec<f64>, core: Vec<f64>) -> PyResult<f64> {
    let core = TuckerCore::new(e_s.len(), w_r.len(), &core).map_err(err)?;
    ckgr::score_tucker(&e_s, &w_r, &e_t, &core).map_err(err)
}

/// Share of generated targets that already appear as training entities.
#[pyfunction]
#[pyo3(signature = (generated, training_entities, lowercase=true))]
fn membership_rate<'py>(
    py: Python<'py>,
    generated: Vec<(String, String, String)>,
    training_entities: Vec<String>,
    lowercase: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let records = generated
        .iter()
        .map(|(s, r, t)| GeneratedRecord::new(s, r, t))
        .collect::<ckgr::Result<Vec<_>>>()
        .map_err(err)?;
    let set = EntitySet::new(training_entities.iter().map(String::as_str), lowercase);
    to_py(py, &ser(&gen_analysis::membership_rate(&records, &set).map_err(err)?))
}

#[pyfunction]
#[pyo3(signature = (text, training_entities, k=5, lowercase=true))]
fn nearest_training_entities(text: &str, training_entities: Vec<String>, k: usize, lowercase: bool) -> Vec<(String, f64)> {
    let set = EntitySet::new(training_entities.iter().map(String::as_str), lowercase);
    gen_analysis::nearest_training_entities(text, &set, k).into_iter().map(|n| (n.entity, n.similarity)).collect()
}

#[pyfunction]
fn similarity(a: &str, b: &str) -> f64 {
    gen_analysis::similarity(a, b)
}

#[pymodule]
fn ckgr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(normalize_text, m)?)?;
    m.add_function(wrap_pyfunction!(bce_loss, m)?)?;
    m.add_function(wrap_pyfunction!(score_transe, m)?)?;
    m.add_function(wrap_pyfunction!(score_tucker, m)?)?;
    m.add_function(wrap_pyfunction!(membership_rate, m)?)?;
    m.add_function(wrap_pyfunction!(nearest_training_entities, m)?)?;
    m.add_function(wrap_pyfunction!(similarity, m)?)?;
    Ok(())
}
