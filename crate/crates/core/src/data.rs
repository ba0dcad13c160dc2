//! Tuple ingestion, vocabularies and dataset statistics.
//!
//! Tuples are read from tab-separated files. All text is normalized with
//! [`normalize_text`] before it is interned, so every vocabulary key is
//! lowercase with single spaces. Word ids are assigned from the training
//! split only; dev/test words outside it map to a dedicated OOV id. Dev/test
//! entities that never occur in training still receive entity ids (after all
//! training ids) so that models can be asked to score them.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WordId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

macro_rules! id_index {
    ($($t:ty),*) => {$(
        impl $t {
            #[inline]
            pub fn idx(self) -> usize {
                self.0 as usize
            }
        }
    )*};
}
id_index!(WordId, EntityId, RelationId);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTuple {
    pub source: String,
    pub relation: String,
    pub target: String,
}

impl RawTuple {
    pub fn new(source: &str, relation: &str, target: &str) -> Self {
        Self {
            source: source.trim().to_string(),
            relation: relation.trim().to_string(),
            target: target.trim().to_string(),
        }
    }
}

/// A tuple in id space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IdTuple {
    pub source: EntityId,
    pub relation: RelationId,
    pub target: EntityId,
}

/// Column order of a tuple file. Columns past the third are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TupleFormat {
    /// `source \t relation \t target`
    #[default]
    SrcFirst,
    /// `relation \t source \t target [\t score]`, as in the ConceptNet dumps.
    RelFirst,
}

impl FromStr for TupleFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "src-first" => Ok(Self::SrcFirst),
            "rel-first" => Ok(Self::RelFirst),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for TupleFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SrcFirst => "src-first",
            Self::RelFirst => "rel-first",
        })
    }
}

pub fn parse_tuple_line(line: &str, format: TupleFormat) -> std::result::Result<RawTuple, String> {
    let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
    if fields.len() < 3 {
        return Err(format!("expected 3 tab-separated fields, found {}", fields.len()));
    }
    let (source, relation, target) = match format {
        TupleFormat::SrcFirst => (fields[0], fields[1], fields[2]),
        TupleFormat::RelFirst => (fields[1], fields[0], fields[2]),
    };
    for (name, value) in [("source", source), ("relation", relation), ("target", target)] {
        if value.is_empty() {
            return Err(format!("empty {name} field"));
        }
    }
    Ok(RawTuple::new(source, relation, target))
}

/// Reads one tuple per non-empty line. An empty file yields an empty list.
pub fn load_tuples(path: &Path, format: TupleFormat) -> Result<Vec<RawTuple>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let tuple = parse_tuple_line(line, format).map_err(|message| Error::MalformedLine {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?;
        out.push(tuple);
    }
    Ok(out)
}

/// Lowercase, trim, and collapse internal whitespace runs to one space.
pub fn normalize_text(raw: &str) -> String {
    collapse_whitespace(raw).to_lowercase()
}

/// Trim and collapse whitespace without changing case.
pub fn collapse_whitespace(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Vocabulary {
    words: IndexSet<String>,
    entities: IndexSet<String>,
    relations: IndexSet<String>,
    n_train_entities: usize,
    n_train_relations: usize,
}

impl Vocabulary {
    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    /// Rows needed by a word embedding table: every word plus the OOV row.
    pub fn word_table_rows(&self) -> usize {
        self.words.len() + 1
    }

    pub fn oov_word_id(&self) -> WordId {
        WordId(self.words.len() as u32)
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn train_entity_count(&self) -> usize {
        self.n_train_entities
    }

    pub fn train_relation_count(&self) -> usize {
        self.n_train_relations
    }

    pub fn is_train_entity(&self, id: EntityId) -> bool {
        id.idx() < self.n_train_entities
    }

    pub fn is_train_relation(&self, id: RelationId) -> bool {
        id.idx() < self.n_train_relations
    }

    pub fn word_id(&self, word: &str) -> Option<WordId> {
        self.words.get_index_of(word).map(|i| WordId(i as u32))
    }

    pub fn word(&self, id: WordId) -> Option<&str> {
        self.words.get_index(id.idx()).map(String::as_str)
    }

    /// Looks up normalized entity text.
    pub fn entity_id(&self, text: &str) -> Option<EntityId> {
        self.entities.get_index_of(&normalize_text(text)).map(|i| EntityId(i as u32))
    }

    pub fn entity_text(&self, id: EntityId) -> Option<&str> {
        self.entities.get_index(id.idx()).map(String::as_str)
    }

    pub fn relation_id(&self, text: &str) -> Option<RelationId> {
        self.relations.get_index_of(&normalize_text(text)).map(|i| RelationId(i as u32))
    }

    pub fn relation_text(&self, id: RelationId) -> Option<&str> {
        self.relations.get_index(id.idx()).map(String::as_str)
    }

    pub fn entities(&self) -> impl Iterator<Item = (EntityId, &str)> {
        self.entities.iter().enumerate().map(|(i, s)| (EntityId(i as u32), s.as_str()))
    }

    pub fn relations(&self) -> impl Iterator<Item = (RelationId, &str)> {
        self.relations.iter().enumerate().map(|(i, s)| (RelationId(i as u32), s.as_str()))
    }

    /// Whitespace tokenization of normalized text; unknown words map to OOV.
    pub fn tokenize(&self, text: &str) -> Vec<WordId> {
        let oov = self.oov_word_id();
        normalize_text(text)
            .split(' ')
            .filter(|w| !w.is_empty())
            .map(|w| self.word_id(w).unwrap_or(oov))
            .collect()
    }

    pub fn detokenize(&self, tokens: &[WordId]) -> String {
        tokens
            .iter()
            .map(|&t| self.word(t).unwrap_or("<oov>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Hex SHA-256 over the ordered word, entity and relation tables.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (tag, set) in [("w", &self.words), ("e", &self.entities), ("r", &self.relations)] {
            for s in set {
                h.update(tag.as_bytes());
                h.update(b"\t");
                h.update(s.as_bytes());
                h.update(b"\n");
            }
        }
        h.update(format!("{} {}", self.n_train_entities, self.n_train_relations).as_bytes());
        format!("{:x}", h.finalize())
    }

    fn add_words(&mut self, normalized: &str) {
        for w in normalized.split(' ').filter(|w| !w.is_empty()) {
            if !self.words.contains(w) {
                self.words.insert(w.to_string());
            }
        }
    }

    fn intern_entity(&mut self, normalized: String) -> EntityId {
        EntityId(self.entities.insert_full(normalized).0 as u32)
    }

    fn intern_relation(&mut self, normalized: String) -> RelationId {
        RelationId(self.relations.insert_full(normalized).0 as u32)
    }

    /// Rebuilds a vocabulary from its ordered tables (checkpoint loading).
    pub fn from_parts(
        words: Vec<String>,
        entities: Vec<String>,
        relations: Vec<String>,
        n_train_entities: usize,
        n_train_relations: usize,
    ) -> Result<Self> {
        let vocab = Self {
            words: words.into_iter().collect(),
            entities: entities.into_iter().collect(),
            relations: relations.into_iter().collect(),
            n_train_entities,
            n_train_relations,
        };
        if vocab.n_train_entities > vocab.entities.len() || vocab.n_train_relations > vocab.relations.len() {
            return Err(Error::Checkpoint("training counts exceed vocabulary size".into()));
        }
        Ok(vocab)
    }

    pub fn words_in_order(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" | "valid" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}` (train, dev, test)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<IdTuple>,
    pub dev: Vec<IdTuple>,
    pub test: Vec<IdTuple>,
    pub vocab: Vocabulary,
    pub entity_tokens: Vec<Vec<WordId>>,
    pub relation_tokens: Vec<Vec<WordId>>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[IdTuple] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn all_tuples(&self) -> impl Iterator<Item = &IdTuple> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }

    /// Test tuples split by whether the source entity occurs in training.
    pub fn partition_test(&self) -> (usize, usize) {
        let unseen = self.test.iter().filter(|t| !self.vocab.is_train_entity(t.source)).count();
        (self.test.len() - unseen, unseen)
    }
}

pub fn build_dataset(train: &[RawTuple], dev: &[RawTuple], test: &[RawTuple]) -> Result<Dataset> {
    if train.is_empty() {
        return Err(Error::EmptyTrainingSplit);
    }
    let mut vocab = Vocabulary::default();
    let intern = |vocab: &mut Vocabulary, t: &RawTuple, learn_words: bool| {
        let (s, r, o) = (normalize_text(&t.source), normalize_text(&t.relation), normalize_text(&t.target));
        if learn_words {
            vocab.add_words(&s);
            vocab.add_words(&r);
            vocab.add_words(&o);
        }
        IdTuple {
            source: vocab.intern_entity(s),
            relation: vocab.intern_relation(r),
            target: vocab.intern_entity(o),
        }
    };

    let train_ids: Vec<IdTuple> = train.iter().map(|t| intern(&mut vocab, t, true)).collect();
    vocab.n_train_entities = vocab.entities.len();
    vocab.n_train_relations = vocab.relations.len();
    let dev_ids: Vec<IdTuple> = dev.iter().map(|t| intern(&mut vocab, t, false)).collect();
    let test_ids: Vec<IdTuple> = test.iter().map(|t| intern(&mut vocab, t, false)).collect();

    let entity_tokens = vocab.entities.iter().map(|e| vocab.tokenize(e)).collect();
    let relation_tokens = vocab.relations.iter().map(|r| vocab.tokenize(r)).collect();
    Ok(Dataset {
        train: train_ids,
        dev: dev_ids,
        test: test_ids,
        vocab,
        entity_tokens,
        relation_tokens,
    })
}

/// Finds `<split>.tsv` (or `.txt`) under `dir`; `dev` also accepts `valid`.
pub fn split_path(dir: &Path, split: Split) -> PathBuf {
    let stems: &[&str] = match split {
        Split::Train => &["train"],
        Split::Dev => &["dev", "valid"],
        Split::Test => &["test"],
    };
    for stem in stems {
        for ext in ["tsv", "txt"] {
            let p = dir.join(format!("{stem}.{ext}"));
            if p.exists() {
                return p;
            }
        }
    }
    dir.join(format!("{}.tsv", stems[0]))
}

pub struct RawSplits {
    pub train: Vec<RawTuple>,
    pub dev: Vec<RawTuple>,
    pub test: Vec<RawTuple>,
}

pub fn load_raw_splits(dir: &Path, format: TupleFormat) -> Result<RawSplits> {
    let load = |split| {
        let path = split_path(dir, split);
        if !path.exists() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{}: no such file", path.display()),
            )));
        }
        load_tuples(&path, format)
    };
    Ok(RawSplits {
        train: load(Split::Train)?,
        dev: load(Split::Dev)?,
        test: load(Split::Test)?,
    })
}

pub fn load_dataset_dir(dir: &Path, format: TupleFormat) -> Result<Dataset> {
    let raw = load_raw_splits(dir, format)?;
    if raw.train.is_empty() {
        return Err(Error::EmptyFile(split_path(dir, Split::Train)));
    }
    build_dataset(&raw.train, &raw.dev, &raw.test)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub tuple_counts: (usize, usize, usize),
    pub entity_count: usize,
    pub relation_count: usize,
    /// Distinct word types over entity and relation texts of all splits.
    pub word_count: usize,
    /// Training-split word types (the embedding vocabulary, OOV excluded).
    pub vocab_word_count: usize,
    pub avg_entity_length: f64,
    pub unseen_test_tuples: usize,
    pub unseen_tuple_proportion: f64,
}

pub fn compute_stats(ds: &Dataset) -> DatasetStats {
    let vocab = &ds.vocab;
    let mut words: HashSet<&str> = HashSet::new();
    let mut total_len = 0usize;
    for (_, text) in vocab.entities() {
        let mut n = 0;
        for w in text.split(' ') {
            words.insert(w);
            n += 1;
        }
        total_len += n;
    }
    for (_, text) in vocab.relations() {
        words.extend(text.split(' '));
    }
    let (_, unseen) = ds.partition_test();
    let n_entities = vocab.entity_count();
    DatasetStats {
        tuple_counts: (ds.train.len(), ds.dev.len(), ds.test.len()),
        entity_count: n_entities,
        relation_count: vocab.relation_count(),
        word_count: words.len(),
        vocab_word_count: vocab.word_count(),
        avg_entity_length: if n_entities == 0 { 0.0 } else { total_len as f64 / n_entities as f64 },
        unseen_test_tuples: unseen,
        unseen_tuple_proportion: if ds.test.is_empty() { 0.0 } else { unseen as f64 / ds.test.len() as f64 },
    }
}

fn entity_word_types<'a>(ds: &'a Dataset, tuples: &[IdTuple]) -> HashSet<&'a str> {
    let mut out = HashSet::new();
    for t in tuples {
        for e in [t.source, t.target] {
            if let Some(text) = ds.vocab.entity_text(e) {
                out.extend(text.split(' '));
            }
        }
    }
    out
}

/// Fraction of word types in test entity texts that also occur in training
/// entity texts.
pub fn word_coverage(ds: &Dataset) -> Result<f64> {
    if ds.test.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    let test_types = entity_word_types(ds, &ds.test);
    let train_types = entity_word_types(ds, &ds.train);
    let covered = test_types.iter().filter(|w| train_types.contains(*w)).count();
    Ok(covered as f64 / test_types.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn raw(s: &str, r: &str, t: &str) -> RawTuple {
        RawTuple::new(s, r, t)
    }

    #[test]
    fn parses_both_column_orders() {
        let a = parse_tuple_line("causes\tgo to zoo\tsee animal", TupleFormat::RelFirst).unwrap();
        let b = parse_tuple_line("go to zoo\tcauses\tsee animal", TupleFormat::SrcFirst).unwrap();
        assert_eq!(a, raw("go to zoo", "causes", "see animal"));
        assert_eq!(a, b);
        // ConceptNet dumps carry a trailing score column.
        let c = parse_tuple_line("causes\tgo to zoo\tsee animal\t1.0", TupleFormat::RelFirst).unwrap();
        assert_eq!(c, a);
    }

    #[test]
    fn load_reports_line_numbers_and_skips_blank_lines() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "a\tr\tb\n\n c \t r \t d ").unwrap();
        let tuples = load_tuples(f.path(), TupleFormat::SrcFirst).unwrap();
        assert_eq!(tuples, vec![raw("a", "r", "b"), raw("c", "r", "d")]);

        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, "a\tr\tb\nonly two\tfields").unwrap();
        match load_tuples(bad.path(), TupleFormat::SrcFirst) {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }

        let empty = tempfile::NamedTempFile::new().unwrap();
        assert!(load_tuples(empty.path(), TupleFormat::SrcFirst).unwrap().is_empty());
    }

    #[test]
    fn load_counts_dev_sized_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for i in 0..1200 {
            writeln!(f, "src {i}\trel\ttgt {i}").unwrap();
        }
        assert_eq!(load_tuples(f.path(), TupleFormat::SrcFirst).unwrap().len(), 1200);
    }

    #[test]
    fn empty_fields_are_malformed() {
        assert!(parse_tuple_line("a\t \tb", TupleFormat::SrcFirst).is_err());
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_text("Being hungry"), "being hungry");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("  GO  to   Zoo "), "go to zoo");
    }

    #[test]
    fn tokenization_and_oov() {
        let ds = build_dataset(
            &[raw("go to zoo", "causes", "see animal"), raw("fly kite", "causes", "have fun")],
            &[],
            &[raw("fly giant kite", "causes", "have fun")],
        )
        .unwrap();
        let v = &ds.vocab;
        let zoo = v.entity_id("go to zoo").unwrap();
        assert_eq!(
            ds.entity_tokens[zoo.idx()],
            vec![v.word_id("go").unwrap(), v.word_id("to").unwrap(), v.word_id("zoo").unwrap()]
        );
        let giant = v.entity_id("fly giant kite").unwrap();
        assert!(!v.is_train_entity(giant));
        assert_eq!(
            ds.entity_tokens[giant.idx()],
            vec![v.word_id("fly").unwrap(), v.oov_word_id(), v.word_id("kite").unwrap()]
        );
        assert!(v.word_id("giant").is_none());
    }

    #[test]
    fn ids_follow_first_seen_order() {
        let ds = build_dataset(&[raw("B", "r", "a"), raw("a", "q", "c")], &[], &[]).unwrap();
        let v = &ds.vocab;
        assert_eq!(v.entity_id("b"), Some(EntityId(0)));
        assert_eq!(v.entity_id("a"), Some(EntityId(1)));
        assert_eq!(v.entity_id("c"), Some(EntityId(2)));
        assert_eq!(v.relation_id("q"), Some(RelationId(1)));
        assert_eq!(v.word_id("b"), Some(WordId(0)));
        assert_eq!(v.oov_word_id(), WordId(5));
        assert_eq!(v.word(v.oov_word_id()), None);
    }

    #[test]
    fn empty_training_split_is_an_error() {
        assert!(matches!(build_dataset(&[], &[], &[]), Err(Error::EmptyTrainingSplit)));
    }

    #[test]
    fn stats_and_coverage() {
        let ds = build_dataset(
            &[raw("a b", "r", "x"), raw("c", "r", "x")],
            &[],
            &[raw("a b", "r", "x"), raw("a d", "r", "c")],
        )
        .unwrap();
        let st = compute_stats(&ds);
        assert_eq!(st.tuple_counts, (2, 0, 2));
        assert_eq!(st.entity_count, 4);
        assert_eq!(st.relation_count, 1);
        assert_eq!(st.unseen_test_tuples, 1);
        assert!((st.unseen_tuple_proportion - 0.5).abs() < 1e-12);
        // "a b", "x", "c", "a d" -> 2 + 1 + 1 + 2 words.
        assert!((st.avg_entity_length - 1.5).abs() < 1e-12);
        assert_eq!(ds.partition_test(), (1, 1));

        // Test types {a, b, x, d, c}; training has all but d.
        assert!((word_coverage(&ds).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn coverage_half_and_full() {
        let ds = build_dataset(&[raw("a", "r", "b")], &[], &[raw("a c", "r", "b d")]).unwrap();
        assert!((word_coverage(&ds).unwrap() - 0.5).abs() < 1e-12);
        let ds = build_dataset(&[raw("a", "r", "b")], &[], &[raw("b", "r", "a")]).unwrap();
        assert_eq!(word_coverage(&ds).unwrap(), 1.0);
        assert_eq!(compute_stats(&ds).unseen_tuple_proportion, 0.0);
        let ds = build_dataset(&[raw("a", "r", "b")], &[], &[]).unwrap();
        assert!(matches!(word_coverage(&ds), Err(Error::EmptySplit("test"))));
    }
}
