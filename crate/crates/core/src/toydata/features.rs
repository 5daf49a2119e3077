//! Hashed n-gram features for premise/hypothesis pairs.
//!
//! Layout of a `dim`-wide vector: indices `0..dim-3` hold L2-normalized
//! hashed unigram/bigram counts, the last three hold lexical overlap, a
//! premise-negation flag and a premise-hedge flag.

use std::collections::HashSet;
use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_DIM: usize = 1 << 10;
pub const DEFAULT_DIM: usize = 1 << 14;

const DENSE_FEATURES: usize = 3;
const SEPARATOR: &str = "[sep]";

pub const HEDGE_WORDS: &[&str] = &["may", "might", "maybe", "could", "possibly", "reportedly"];
const NEGATION_WORDS: &[&str] = &["not", "no", "never", "none", "nobody", "nothing"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub dim: usize,
    /// Sorted by index, no duplicates.
    pub entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&(index as u32), |&(i, _)| i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0.0)
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| dense[i as usize] * v).sum()
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Fraction of distinct hypothesis tokens that also occur in the premise.
pub fn lexical_overlap(premise: &[String], hypothesis: &[String]) -> f64 {
    let hyp: HashSet<&str> = hypothesis.iter().map(String::as_str).collect();
    if hyp.is_empty() {
        return 0.0;
    }
    let prem: HashSet<&str> = premise.iter().map(String::as_str).collect();
    hyp.iter().filter(|t| prem.contains(*t)).count() as f64 / hyp.len() as f64
}

fn contains_any(tokens: &[String], words: &[&str]) -> bool {
    tokens.iter().any(|t| words.contains(&t.as_str()))
}

fn bucket(namespace: &str, gram: &[&str], buckets: usize) -> u32 {
    let mut h = FnvHasher::default();
    h.write(namespace.as_bytes());
    for part in gram {
        h.write_u8(0x1f);
        h.write(part.as_bytes());
    }
    (h.finish() % buckets as u64) as u32
}

pub fn featurize(premise: &str, hypothesis: &str, dim: usize) -> Result<SparseVector> {
    if dim < MIN_DIM {
        return Err(Error::Range(format!("feature dimension {dim} below {MIN_DIM}")));
    }
    let p = tokenize(premise);
    let h = tokenize(hypothesis);
    let mut joined: Vec<&str> = p.iter().map(String::as_str).collect();
    joined.push(SEPARATOR);
    joined.extend(h.iter().map(String::as_str));

    let buckets = dim - DENSE_FEATURES;
    let mut hashed: Vec<u32> = Vec::new();
    let p_refs: Vec<&str> = p.iter().map(String::as_str).collect();
    let h_refs: Vec<&str> = h.iter().map(String::as_str).collect();
    for (ns, tokens) in [("p", &p_refs), ("h", &h_refs), ("c", &joined)] {
        for t in tokens.iter() {
            hashed.push(bucket(ns, &[t], buckets));
        }
        for w in tokens.windows(2) {
            hashed.push(bucket(ns, w, buckets));
        }
    }
    hashed.sort_unstable();

    let mut entries: Vec<(u32, f64)> = Vec::with_capacity(hashed.len() + DENSE_FEATURES);
    for idx in hashed {
        match entries.last_mut() {
            Some((last, count)) if *last == idx => *count += 1.0,
            _ => entries.push((idx, 1.0)),
        }
    }
    let norm = entries.iter().map(|&(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, v) in &mut entries {
            *v /= norm;
        }
    }

    let dense = [
        lexical_overlap(&p, &h),
        f64::from(u8::from(contains_any(&p, NEGATION_WORDS))),
        f64::from(u8::from(contains_any(&p, HEDGE_WORDS))),
    ];
    for (k, value) in dense.into_iter().enumerate() {
        if value != 0.0 {
            entries.push(((buckets + k) as u32, value));
        }
    }
    Ok(SparseVector { dim, entries })
}

/// Index of the overlap feature in a `dim`-wide vector.
pub fn overlap_index(dim: usize) -> usize {
    dim - DENSE_FEATURES
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = featurize("the board approved the plan", "the plan was approved", DEFAULT_DIM).unwrap();
        let b = featurize("the board approved the plan", "the plan was approved", DEFAULT_DIM).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn overlap_extremes() {
        let same = featurize("the board approved it", "the board approved it", MIN_DIM).unwrap();
        assert_eq!(same.get(overlap_index(MIN_DIM)), 1.0);
        let disjoint = featurize("alpha beta", "gamma delta", MIN_DIM).unwrap();
        assert_eq!(disjoint.get(overlap_index(MIN_DIM)), 0.0);
    }

    #[test]
    fn flags() {
        let v = featurize("the board did not approve it", "the board approved it", MIN_DIM).unwrap();
        assert_eq!(v.get(MIN_DIM - 2), 1.0);
        assert_eq!(v.get(MIN_DIM - 1), 0.0);
        let v = featurize("the board may approve it", "the board approved it", MIN_DIM).unwrap();
        assert_eq!(v.get(MIN_DIM - 2), 0.0);
        assert_eq!(v.get(MIN_DIM - 1), 1.0);
    }

    #[test]
    fn hashed_part_is_unit_norm_and_sorted() {
        let v = featurize("one two three", "four five", MIN_DIM).unwrap();
        let hashed: f64 = v
            .entries
            .iter()
            .filter(|(i, _)| (*i as usize) < overlap_index(MIN_DIM))
            .map(|(_, x)| x * x)
            .sum();
        assert!((hashed - 1.0).abs() < 1e-12);
        assert!(v.entries.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(v.entries.iter().all(|&(i, _)| (i as usize) < MIN_DIM));
    }

    #[test]
    fn small_dimension_rejected() {
        assert_eq!(featurize("a", "b", 512).unwrap_err().code(), "RANGE_ERROR");
    }

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(tokenize("The Board, approved!  it"), vec!["the", "board", "approved", "it"]);
    }
}
