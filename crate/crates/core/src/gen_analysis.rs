//! Auditing generated target entities against a training entity set.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{collapse_whitespace, normalize_text, parse_tuple_line, RawTuple, TupleFormat};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedRecord {
    pub source: String,
    pub relation: String,
    pub generated_target: String,
}

impl GeneratedRecord {
    pub fn new(source: &str, relation: &str, generated_target: &str) -> Result<Self> {
        for (name, v) in [("source", source), ("relation", relation), ("generated_target", generated_target)] {
            if normalize_text(v).is_empty() {
                return Err(Error::InvalidArgument(format!("empty {name} in generated record")));
            }
        }
        Ok(Self {
            source: source.trim().to_string(),
            relation: relation.trim().to_string(),
            generated_target: generated_target.trim().to_string(),
        })
    }
}

/// Reads `source \t relation \t generated_target` lines.
pub fn load_generated(path: &Path) -> Result<Vec<GeneratedRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message| Error::MalformedLine { path: path.to_path_buf(), line: i + 1, message };
        let t = parse_tuple_line(line, TupleFormat::SrcFirst).map_err(malformed)?;
        out.push(GeneratedRecord::new(&t.source, &t.relation, &t.target).map_err(|e| malformed(e.to_string()))?);
    }
    Ok(out)
}

/// Training entity texts under a fixed comparison rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntitySet {
    lowercase: bool,
    entities: BTreeSet<String>,
}

impl EntitySet {
    pub fn new<'a>(texts: impl IntoIterator<Item = &'a str>, lowercase: bool) -> Self {
        let mut set = Self { lowercase, entities: BTreeSet::new() };
        for t in texts {
            let key = set.key(t);
            if !key.is_empty() {
                set.entities.insert(key);
            }
        }
        set
    }

    /// Source and target texts of the training tuples.
    pub fn from_training(train: &[RawTuple], lowercase: bool) -> Self {
        Self::new(train.iter().flat_map(|t| [t.source.as_str(), t.target.as_str()]), lowercase)
    }

    pub fn key(&self, text: &str) -> String {
        if self.lowercase {
            normalize_text(text)
        } else {
            collapse_whitespace(text)
        }
    }

    pub fn contains(&self, text: &str) -> bool {
        self.entities.contains(&self.key(text))
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.entities.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapCounts {
    pub total: usize,
    pub in_training: usize,
    pub not_in_training: usize,
    pub proportion_in: f64,
    pub proportion_not_in: f64,
}

impl OverlapCounts {
    fn new(total: usize, in_training: usize) -> Self {
        let p = in_training as f64 / total as f64;
        Self {
            total,
            in_training,
            not_in_training: total - in_training,
            proportion_in: p,
            proportion_not_in: 1.0 - p,
        }
    }
}

/// Raw counts plus counts after collapsing repeated (source, relation, target)
/// records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub raw: OverlapCounts,
    pub deduplicated: OverlapCounts,
}

pub fn membership_rate(generated: &[GeneratedRecord], training: &EntitySet) -> Result<OverlapReport> {
    if generated.is_empty() {
        return Err(Error::NoRecords);
    }
    let hits = generated.iter().filter(|g| training.contains(&g.generated_target)).count();
    let unique: HashSet<(String, String, String)> = generated
        .iter()
        .map(|g| (training.key(&g.source), training.key(&g.relation), training.key(&g.generated_target)))
        .collect();
    let unique_hits = unique.iter().filter(|(_, _, t)| training.entities.contains(t)).count();
    Ok(OverlapReport {
        raw: OverlapCounts::new(generated.len(), hits),
        deduplicated: OverlapCounts::new(unique.len(), unique_hits),
    })
}

pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let ta: HashSet<&str> = a.split_whitespace().collect();
    let tb: HashSet<&str> = b.split_whitespace().collect();
    let union = ta.union(&tb).count();
    if union == 0 {
        return 1.0;
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

/// `max(token Jaccard, 1 − normalized Levenshtein)` over normalized texts.
pub fn similarity(a: &str, b: &str) -> f64 {
    let (a, b) = (normalize_text(a), normalize_text(b));
    token_jaccard(&a, &b).max(strsim::normalized_levenshtein(&a, &b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub entity: String,
    pub similarity: f64,
}

/// Top-`k` training entities by [`similarity`], ties broken by ascending text.
pub fn nearest_training_entities(text: &str, training: &EntitySet, k: usize) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> =
        training.iter().map(|e| Neighbor { entity: e.to_string(), similarity: similarity(text, e) }).collect();
    all.sort_by(|a, b| {
        b.similarity.partial_cmp(&a.similarity).unwrap_or(Ordering::Equal).then_with(|| a.entity.cmp(&b.entity))
    });
    all.truncate(k);
    all
}
