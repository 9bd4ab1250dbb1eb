//! Synthetic entailment data shared by the integration tests.

#![allow(dead_code)]

use entailgen_core::corpus::{SentencePair, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ADJS: [&str; 6] = ["young", "old", "tall", "small", "happy", "tired"];
const NOUNS: [(&str, &str); 8] = [
    ("man", "person"),
    ("woman", "person"),
    ("boy", "child"),
    ("girl", "child"),
    ("dog", "animal"),
    ("cat", "animal"),
    ("horse", "animal"),
    ("bird", "animal"),
];
const VERBS: [&str; 6] = ["runs", "sleeps", "eats", "jumps", "sits", "plays"];
const PLACES: [&str; 5] = ["in the park", "on the beach", "near a lake", "at home", "in a field"];

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// Premise "the tall man runs in the park ." entails "a person runs ."
pub fn synthetic_pairs(n: usize, seed: u64, split: Split) -> Vec<SentencePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let det = if rng.gen_bool(0.5) { "a" } else { "the" };
            let adj = ADJS[rng.gen_range(0..ADJS.len())];
            let (noun, hyper) = NOUNS[rng.gen_range(0..NOUNS.len())];
            let verb = VERBS[rng.gen_range(0..VERBS.len())];
            let place = PLACES[rng.gen_range(0..PLACES.len())];
            SentencePair::new(
                words(&format!("{det} {adj} {noun} {verb} {place} .")),
                words(&format!("a {hyper} {verb} .")),
                split,
            )
            .unwrap()
        })
        .collect()
}

pub fn snli_line(label: &str, premise: &str, hypothesis: &str) -> String {
    serde_json::json!({"gold_label": label, "sentence1": premise, "sentence2": hypothesis}).to_string()
}
