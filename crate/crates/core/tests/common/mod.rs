//! Shared fixtures for the integration and acceptance targets.
#![allow(dead_code)]

use std::fs;
use std::path::Path;

use ckgr::RawTuple;

pub const ADJECTIVES: [&str; 8] = ["red", "blue", "green", "small", "large", "soft", "hard", "old"];
pub const NOUNS: [&str; 6] = ["ball", "kite", "dog", "cat", "cup", "car"];
pub const CATEGORIES: [&str; 6] = ["toy", "toy", "animal", "animal", "container", "vehicle"];

pub struct RawSplits {
    pub train: Vec<RawTuple>,
    pub dev: Vec<RawTuple>,
    pub test: Vec<RawTuple>,
}

/// 48 "adjective noun" sources, 8 property targets and 4 category targets.
/// `similar to` links each source to the one with the next adjective, so
/// sources double as targets. The eight sources (adjective i, noun i mod 6)
/// are held out, so every test source is unseen but built from training words.
pub fn compositional_kg() -> RawSplits {
    let held_out = |i: usize, j: usize| j == i % NOUNS.len();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, adj) in ADJECTIVES.iter().enumerate() {
        for (j, noun) in NOUNS.iter().enumerate() {
            let source = format!("{adj} {noun}");
            let next = (i + 1) % ADJECTIVES.len();
            let mut tuples = vec![
                RawTuple::new(&source, "has property", adj),
                RawTuple::new(&source, "is a", CATEGORIES[j]),
            ];
            // Skipped when it would put a held-out source into training as a target.
            if held_out(i, j) || !held_out(next, j) {
                tuples.push(RawTuple::new(&source, "similar to", &format!("{} {noun}", ADJECTIVES[next])));
            }
            if held_out(i, j) {
                test.extend(tuples);
            } else {
                train.extend(tuples);
            }
        }
    }
    RawSplits { train, dev: Vec::new(), test }
}

/// Ten tuples with distinct (source, relation) pairs.
pub fn memorization_kg() -> RawSplits {
    let rows = [
        ("eat breakfast", "causes", "feel full"),
        ("go to bed", "causes", "fall asleep"),
        ("run a marathon", "causes", "feel tired"),
        ("eat breakfast", "used for", "start the day"),
        ("read a book", "used for", "learn something"),
        ("go to bed", "has prerequisite", "feel tired"),
        ("read a book", "has prerequisite", "open the book"),
        ("bake bread", "causes", "smell good"),
        ("bake bread", "has prerequisite", "buy flour"),
        ("run a marathon", "has prerequisite", "train hard"),
    ];
    let train: Vec<RawTuple> = rows.iter().map(|(s, r, t)| RawTuple::new(s, r, t)).collect();
    RawSplits { dev: train[..4].to_vec(), test: train.clone(), train }
}

pub fn write_tsv(path: &Path, tuples: &[RawTuple]) {
    let body: String = tuples.iter().map(|t| format!("{}\t{}\t{}\n", t.source, t.relation, t.target)).collect();
    fs::write(path, body).unwrap();
}

pub fn write_splits(dir: &Path, s: &RawSplits) {
    fs::create_dir_all(dir).unwrap();
    write_tsv(&dir.join("train.tsv"), &s.train);
    write_tsv(&dir.join("dev.tsv"), &s.dev);
    write_tsv(&dir.join("test.tsv"), &s.test);
}
