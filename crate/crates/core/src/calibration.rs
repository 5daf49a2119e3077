//! Reliability binning, expected calibration error and high-confidence
//! error rates.
//!
//! Confidence is the top-1 probability, which for three classes can never be
//! below 1/3, so bins split `[1/3, 1]` into equal widths. A confidence that
//! lands exactly on an interior edge belongs to the upper bin.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::decision::PredictionRecord;
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 15;

const LOWEST_CONFIDENCE: f64 = 1.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: u64,
    pub mean_confidence: f64,
    pub empirical_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: Vec<ReliabilityBin>,
    pub ece: f64,
    pub n: u64,
    pub n_bins: usize,
}

impl CalibrationReport {
    /// `lower,upper,count,mean_confidence,empirical_accuracy` rows.
    pub fn bins_csv(&self) -> String {
        let mut out = String::from("lower,upper,count,mean_confidence,empirical_accuracy\n");
        for b in &self.bins {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                b.lower, b.upper, b.count, b.mean_confidence, b.empirical_accuracy
            );
        }
        out
    }
}

fn edge(k: usize, n_bins: usize) -> f64 {
    if k == n_bins {
        return 1.0;
    }
    LOWEST_CONFIDENCE + (1.0 - LOWEST_CONFIDENCE) * k as f64 / n_bins as f64
}

/// Index of the bin holding `confidence`, with interior edges going up.
pub fn bin_index(confidence: f64, n_bins: usize) -> usize {
    let width = (1.0 - LOWEST_CONFIDENCE) / n_bins as f64;
    let guess = ((confidence - LOWEST_CONFIDENCE) / width).floor();
    let mut idx = if guess.is_nan() || guess < 0.0 {
        0
    } else {
        (guess as usize).min(n_bins - 1)
    };
    // floor() on a rounded quotient can miss an exact edge by one ulp
    while idx + 1 < n_bins && confidence >= edge(idx + 1, n_bins) {
        idx += 1;
    }
    while idx > 0 && confidence < edge(idx, n_bins) {
        idx -= 1;
    }
    idx
}

/// Calibration of `(confidence, correct)` observations.
pub fn calibration_of(observations: impl IntoIterator<Item = (f64, bool)>, n_bins: usize) -> Result<CalibrationReport> {
    if n_bins < 2 {
        return Err(Error::BadBinCount(n_bins));
    }
    let mut counts = vec![0u64; n_bins];
    let mut conf_sums = vec![0.0f64; n_bins];
    let mut correct = vec![0u64; n_bins];
    for (confidence, is_correct) in observations {
        let b = bin_index(confidence, n_bins);
        counts[b] += 1;
        conf_sums[b] += confidence;
        correct[b] += u64::from(is_correct);
    }
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let mut bins = Vec::with_capacity(n_bins);
    let mut ece = 0.0;
    for b in 0..n_bins {
        let (mean_confidence, empirical_accuracy) = if counts[b] == 0 {
            (0.0, 0.0)
        } else {
            let c = counts[b] as f64;
            (conf_sums[b] / c, correct[b] as f64 / c)
        };
        ece += counts[b] as f64 / n as f64 * (empirical_accuracy - mean_confidence).abs();
        bins.push(ReliabilityBin {
            lower: edge(b, n_bins),
            upper: edge(b + 1, n_bins),
            count: counts[b],
            mean_confidence,
            empirical_accuracy,
        });
    }
    Ok(CalibrationReport {
        bins,
        ece,
        n,
        n_bins,
    })
}

pub fn reliability(records: &[PredictionRecord], n_bins: usize) -> Result<CalibrationReport> {
    if n_bins < 2 {
        return Err(Error::BadBinCount(n_bins));
    }
    let observations = records
        .iter()
        .map(|r| Ok((r.dist.confidence(), r.dist.argmax() == r.gold_or_err()?)))
        .collect::<Result<Vec<_>>>()?;
    calibration_of(observations, n_bins)
}

/// Which population the high-confidence error count is divided by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorRateBase {
    /// Errors among predictions at or above the threshold.
    #[default]
    HighConfidence,
    /// Errors at or above the threshold, over all predictions.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HighConfidenceErrors {
    pub threshold: f64,
    pub rate: f64,
    pub n_high: u64,
    pub n_errors: u64,
    pub n: u64,
    /// No prediction reached the threshold; `rate` is 0 by convention.
    pub empty: bool,
}

pub fn high_conf_error_rate(
    records: &[PredictionRecord],
    threshold: f64,
    base: ErrorRateBase,
) -> Result<HighConfidenceErrors> {
    if !(LOWEST_CONFIDENCE..=1.0).contains(&threshold) {
        return Err(Error::Range(format!(
            "confidence threshold {threshold} outside [1/3, 1]"
        )));
    }
    let mut n_high = 0u64;
    let mut n_errors = 0u64;
    for r in records {
        let gold = r.gold_or_err()?;
        if r.dist.confidence() >= threshold {
            n_high += 1;
            n_errors += u64::from(r.dist.argmax() != gold);
        }
    }
    let n = records.len() as u64;
    let denominator = match base {
        ErrorRateBase::HighConfidence => n_high,
        ErrorRateBase::All => n,
    };
    let rate = if denominator == 0 {
        0.0
    } else {
        n_errors as f64 / denominator as f64
    };
    Ok(HighConfidenceErrors {
        threshold,
        rate,
        n_high,
        n_errors,
        n,
        empty: n_high == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::{validate_distribution, DecisionLabel};
    use proptest::prelude::*;

    fn record(i: usize, d: (f64, f64, f64), gold: DecisionLabel) -> PredictionRecord {
        PredictionRecord::new(format!("r{i}"), validate_distribution(d.0, d.1, d.2).unwrap(), Some(gold), None)
            .unwrap()
    }

    /// Confidence `c` on YES; correct when gold is YES.
    fn population(c: f64, n: usize, n_correct: usize) -> Vec<PredictionRecord> {
        let rest = (1.0 - c) / 2.0;
        (0..n)
            .map(|i| {
                let gold = if i < n_correct { DecisionLabel::Yes } else { DecisionLabel::No };
                record(i, (c, rest, rest), gold)
            })
            .collect()
    }

    #[test]
    fn one_hot_correct_has_zero_ece() {
        let recs: Vec<_> = (0..30)
            .map(|i| {
                let label = DecisionLabel::ALL[i % 3];
                let mut p = [0.0; 3];
                p[label.index()] = 1.0;
                record(i, (p[0], p[1], p[2]), label)
            })
            .collect();
        let rep = reliability(&recs, DEFAULT_BINS).unwrap();
        assert_eq!(rep.ece, 0.0);
        assert_eq!(rep.bins.last().unwrap().count, 30);
    }

    #[test]
    fn calibrated_single_level() {
        let rep = reliability(&population(0.8, 1000, 800), DEFAULT_BINS).unwrap();
        assert!(rep.ece < 0.005, "ece {}", rep.ece);
    }

    #[test]
    fn overconfident_single_level() {
        let rep = reliability(&population(0.9, 1000, 500), DEFAULT_BINS).unwrap();
        assert!((rep.ece - 0.4).abs() < 1e-9, "ece {}", rep.ece);
    }

    #[test]
    fn bin_edges_go_up() {
        let n_bins = 4;
        for k in 1..n_bins {
            assert_eq!(bin_index(edge(k, n_bins), n_bins), k);
        }
        assert_eq!(bin_index(1.0, n_bins), n_bins - 1);
        assert_eq!(bin_index(1.0 / 3.0, n_bins), 0);
        // just below an edge stays in the lower bin
        let e = edge(2, n_bins);
        assert_eq!(bin_index(e - 1e-12, n_bins), 1);
    }

    #[test]
    fn bins_are_consistent() {
        let mut recs = population(0.9, 100, 60);
        recs.extend(population(0.5, 50, 30).into_iter().map(|mut r| {
            r.id.push('b');
            r
        }));
        let rep = reliability(&recs, 10).unwrap();
        assert_eq!(rep.bins.iter().map(|b| b.count).sum::<u64>(), rep.n);
        for b in rep.bins.iter().filter(|b| b.count > 0) {
            assert!(b.lower < b.upper);
            assert!(b.lower <= b.mean_confidence && b.mean_confidence <= b.upper);
        }
        let csv = rep.bins_csv();
        assert_eq!(csv.lines().count(), 11);
    }

    #[test]
    fn bad_inputs() {
        let recs = population(0.9, 10, 5);
        assert_eq!(reliability(&recs, 1).unwrap_err().code(), "BAD_BIN_COUNT");
        let mut no_gold = recs.clone();
        no_gold[3].gold = None;
        assert_eq!(reliability(&no_gold, 15).unwrap_err().code(), "MISSING_GOLD");
        assert_eq!(
            high_conf_error_rate(&no_gold, 0.85, ErrorRateBase::HighConfidence).unwrap_err().code(),
            "MISSING_GOLD"
        );
    }

    #[test]
    fn high_confidence_counts() {
        let mut recs = population(0.9, 10, 9);
        recs.extend(population(0.5, 5, 0).into_iter().map(|mut r| {
            r.id.push('b');
            r
        }));
        let hc = high_conf_error_rate(&recs, 0.85, ErrorRateBase::HighConfidence).unwrap();
        assert_eq!((hc.n_high, hc.n_errors), (10, 1));
        assert!((hc.rate - 0.1).abs() < 1e-15);
        let all = high_conf_error_rate(&recs, 0.85, ErrorRateBase::All).unwrap();
        assert!((all.rate - 1.0 / 15.0).abs() < 1e-15);

        let none = high_conf_error_rate(&population(0.5, 5, 2), 0.85, ErrorRateBase::HighConfidence).unwrap();
        assert!(none.empty);
        assert_eq!((none.rate, none.n_high), (0.0, 0));
        assert!(high_conf_error_rate(&recs, 0.2, ErrorRateBase::All).is_err());
    }

    #[test]
    fn planted_high_confidence_errors() {
        // 2000 high-confidence predictions, 100 of them wrong; 500 low ones all wrong
        let mut recs = population(0.95, 2000, 1900);
        recs.extend(population(0.6, 500, 0).into_iter().map(|mut r| {
            r.id.push('b');
            r
        }));
        let hc = high_conf_error_rate(&recs, 0.85, ErrorRateBase::HighConfidence).unwrap();
        assert!((hc.rate - 0.05).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn ece_invariant_to_order_and_duplication(
            obs in proptest::collection::vec((1.0f64/3.0..=1.0, any::<bool>()), 1..150),
            k in 1usize..4,
        ) {
            let base = calibration_of(obs.clone(), DEFAULT_BINS).unwrap();
            let mut reversed = obs.clone();
            reversed.reverse();
            let rev = calibration_of(reversed, DEFAULT_BINS).unwrap();
            prop_assert!((base.ece - rev.ece).abs() < 1e-12);
            let dup: Vec<_> = (0..k).flat_map(|_| obs.iter().copied()).collect();
            let dup = calibration_of(dup, DEFAULT_BINS).unwrap();
            prop_assert!((base.ece - dup.ece).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&base.ece));
        }
    }
}
