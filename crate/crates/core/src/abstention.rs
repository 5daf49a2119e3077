//! Coverage-sensitive baselines: forced binary collapse and reject-score
//! abstention evaluated on the retained subset.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::decision::{DecisionDistribution, DecisionLabel, PredictionRecord};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_pairs, ClassificationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectMethod {
    Confidence,
    Entropy,
    Margin,
}

impl RejectMethod {
    pub const ALL: [RejectMethod; 3] = [RejectMethod::Confidence, RejectMethod::Entropy, RejectMethod::Margin];

    pub fn as_str(self) -> &'static str {
        match self {
            RejectMethod::Confidence => "CONFIDENCE",
            RejectMethod::Entropy => "ENTROPY",
            RejectMethod::Margin => "MARGIN",
        }
    }
}

impl std::str::FromStr for RejectMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CONFIDENCE" => Ok(RejectMethod::Confidence),
            "ENTROPY" => Ok(RejectMethod::Entropy),
            "MARGIN" => Ok(RejectMethod::Margin),
            _ => Err(Error::Schema(format!("unknown reject method {s:?}"))),
        }
    }
}

/// YES if `p_yes >= p_no`, otherwise NO. TBD mass is ignored.
pub fn collapse_binary(dist: &DecisionDistribution) -> DecisionLabel {
    if dist.p_yes() >= dist.p_no() {
        DecisionLabel::Yes
    } else {
        DecisionLabel::No
    }
}

/// Higher means more certain. Entropy is negated and measured in nats.
pub fn reject_score(dist: &DecisionDistribution, method: RejectMethod) -> f64 {
    match method {
        RejectMethod::Confidence => dist.confidence(),
        RejectMethod::Entropy => dist
            .as_array()
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum(),
        RejectMethod::Margin => dist.margin(),
    }
}

/// Gold vs forced-binary prediction for every record.
pub fn binary_collapse_report(records: &[PredictionRecord]) -> Result<ClassificationReport> {
    let pairs = records
        .iter()
        .map(|r| Ok((r.gold_or_err()?, collapse_binary(&r.dist))))
        .collect::<Result<Vec<_>>>()?;
    evaluate_pairs(pairs)
}

/// Number of records kept at `coverage`: `ceil(coverage * n)`, at least 1.
pub fn retained_count(n: usize, coverage: f64) -> Result<usize> {
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::BadCoverage(coverage));
    }
    // absorb products like 0.9 * 10 = 9.000000000000002
    let k = (coverage * n as f64 - 1e-9).ceil().max(1.0) as usize;
    Ok(k.min(n))
}

/// Record indices ordered most-certain first; ties by id ascending.
pub fn rank_by_score(records: &[PredictionRecord], method: RejectMethod) -> Vec<usize> {
    let scores: Vec<f64> = records.iter().map(|r| reject_score(&r.dist, method)).collect();
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => records[a].id.cmp(&records[b].id),
        other => other,
    });
    order
}

/// Indices kept at `coverage`, in rank order.
pub fn retained_indices(records: &[PredictionRecord], method: RejectMethod, coverage: f64) -> Result<Vec<usize>> {
    let k = retained_count(records.len(), coverage)?;
    let mut order = rank_by_score(records, method);
    order.truncate(k);
    Ok(order)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub method: RejectMethod,
    pub target_coverage: f64,
    pub achieved_coverage: f64,
    pub retained_n: usize,
    pub report: ClassificationReport,
}

pub fn retained_evaluation(
    records: &[PredictionRecord],
    method: RejectMethod,
    coverage: f64,
) -> Result<CoverageResult> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    // all records must carry gold, not only the retained ones
    if let Some(r) = records.iter().find(|r| r.gold.is_none()) {
        return Err(Error::MissingGold { id: r.id.clone() });
    }
    let kept = retained_indices(records, method, coverage)?;
    let pairs = kept
        .iter()
        .map(|&i| {
            let r = &records[i];
            Ok((r.gold_or_err()?, r.dist.argmax()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CoverageResult {
        method,
        target_coverage: coverage,
        achieved_coverage: kept.len() as f64 / records.len() as f64,
        retained_n: kept.len(),
        report: evaluate_pairs(pairs)?,
    })
}

/// Every method at every coverage, in method-major order.
pub fn coverage_curve(records: &[PredictionRecord], coverages: &[f64]) -> Result<Vec<CoverageResult>> {
    let mut out = Vec::with_capacity(coverages.len() * 3);
    for method in RejectMethod::ALL {
        for &c in coverages {
            out.push(retained_evaluation(records, method, c)?);
        }
    }
    Ok(out)
}

/// `method,coverage,retained_n,accuracy,macro_f1,yes_f1,no_f1,tbd_f1` rows.
pub fn coverage_csv(results: &[CoverageResult]) -> String {
    let mut out = String::from("method,coverage,retained_n,accuracy,macro_f1,yes_f1,no_f1,tbd_f1\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.method.as_str(),
            r.achieved_coverage,
            r.retained_n,
            r.report.accuracy,
            r.report.macro_f1,
            r.report.f1(DecisionLabel::Yes),
            r.report.f1(DecisionLabel::No),
            r.report.f1(DecisionLabel::Tbd),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::validate_distribution;
    use crate::metrics::argmax_report;
    use proptest::prelude::*;

    fn dist(y: f64, n: f64, t: f64) -> DecisionDistribution {
        validate_distribution(y, n, t).unwrap()
    }

    fn rec(id: &str, d: DecisionDistribution, gold: DecisionLabel) -> PredictionRecord {
        PredictionRecord::new(id, d, Some(gold), None).unwrap()
    }

    #[test]
    fn collapse_examples() {
        assert_eq!(collapse_binary(&dist(0.2, 0.3, 0.5)), DecisionLabel::No);
        assert_eq!(collapse_binary(&dist(0.4, 0.4, 0.2)), DecisionLabel::Yes);
    }

    #[test]
    fn collapse_zeroes_tbd_f1() {
        let recs = vec![
            rec("a", dist(0.1, 0.1, 0.8), DecisionLabel::Tbd),
            rec("b", dist(0.8, 0.1, 0.1), DecisionLabel::Yes),
            rec("c", dist(0.1, 0.8, 0.1), DecisionLabel::No),
        ];
        let r = binary_collapse_report(&recs).unwrap();
        assert_eq!(r.f1(DecisionLabel::Tbd), 0.0);
        assert!(r.macro_f1 < argmax_report(&recs).unwrap().macro_f1);
    }

    #[test]
    fn score_examples() {
        let one_hot = dist(1.0, 0.0, 0.0);
        assert_eq!(reject_score(&one_hot, RejectMethod::Confidence), 1.0);
        assert_eq!(reject_score(&one_hot, RejectMethod::Entropy), 0.0);
        assert_eq!(reject_score(&one_hot, RejectMethod::Margin), 1.0);

        let third = 1.0 / 3.0;
        let uniform = dist(third, third, third);
        assert!((reject_score(&uniform, RejectMethod::Confidence) - third).abs() < 1e-15);
        assert!((reject_score(&uniform, RejectMethod::Entropy) + 3f64.ln()).abs() < 1e-12);
        assert_eq!(reject_score(&uniform, RejectMethod::Margin), 0.0);

        // negative entropy: 0.5 ln 0.5 + 2 * 0.25 ln 0.25 = -1.5 ln 2
        let d = dist(0.5, 0.25, 0.25);
        let expected = -1.5 * 2f64.ln();
        assert!((reject_score(&d, RejectMethod::Entropy) - expected).abs() < 1e-12);
    }

    #[test]
    fn retained_count_rule() {
        assert_eq!(retained_count(10, 0.9).unwrap(), 9);
        assert_eq!(retained_count(10, 0.91).unwrap(), 10);
        assert_eq!(retained_count(4, 0.5).unwrap(), 2);
        assert_eq!(retained_count(3, 0.01).unwrap(), 1);
        assert_eq!(retained_count(10, 0.0).unwrap_err().code(), "BAD_COVERAGE");
        assert_eq!(retained_count(10, 1.5).unwrap_err().code(), "BAD_COVERAGE");
    }

    #[test]
    fn half_coverage_keeps_top_two() {
        let recs = vec![
            rec("a", dist(0.5, 0.3, 0.2), DecisionLabel::Yes),
            rec("b", dist(0.9, 0.05, 0.05), DecisionLabel::Yes),
            rec("c", dist(0.4, 0.35, 0.25), DecisionLabel::No),
            rec("d", dist(0.7, 0.2, 0.1), DecisionLabel::Yes),
        ];
        let kept = retained_indices(&recs, RejectMethod::Confidence, 0.5).unwrap();
        assert_eq!(kept, vec![1, 3]);
        let res = retained_evaluation(&recs, RejectMethod::Confidence, 0.5).unwrap();
        assert_eq!(res.retained_n, 2);
        assert_eq!(res.achieved_coverage, 0.5);
    }

    #[test]
    fn ties_break_by_id() {
        let d = dist(0.6, 0.3, 0.1);
        let recs = vec![
            rec("c", d, DecisionLabel::Yes),
            rec("a", d, DecisionLabel::Yes),
            rec("b", d, DecisionLabel::Yes),
        ];
        assert_eq!(rank_by_score(&recs, RejectMethod::Margin), vec![1, 2, 0]);
    }

    #[test]
    fn full_coverage_matches_argmax() {
        let recs = vec![
            rec("a", dist(0.5, 0.3, 0.2), DecisionLabel::No),
            rec("b", dist(0.2, 0.7, 0.1), DecisionLabel::No),
            rec("c", dist(0.2, 0.1, 0.7), DecisionLabel::Tbd),
        ];
        let full = argmax_report(&recs).unwrap();
        for m in RejectMethod::ALL {
            assert_eq!(retained_evaluation(&recs, m, 1.0).unwrap().report, full);
        }
    }

    #[test]
    fn planted_errors_are_rejected_first() {
        let mut recs = Vec::new();
        for i in 0..90 {
            recs.push(rec(&format!("ok{i:03}"), dist(0.9, 0.05, 0.05), DecisionLabel::Yes));
        }
        for i in 0..10 {
            recs.push(rec(&format!("bad{i:03}"), dist(0.4, 0.35, 0.25), DecisionLabel::No));
        }
        for m in RejectMethod::ALL {
            let res = retained_evaluation(&recs, m, 0.9).unwrap();
            assert_eq!(res.report.accuracy, 1.0, "{m:?}");
        }
    }

    #[test]
    fn missing_gold_anywhere_is_an_error() {
        let mut recs = vec![
            rec("a", dist(0.9, 0.05, 0.05), DecisionLabel::Yes),
            rec("b", dist(0.4, 0.35, 0.25), DecisionLabel::No),
        ];
        recs[1].gold = None;
        let err = retained_evaluation(&recs, RejectMethod::Confidence, 0.5).unwrap_err();
        assert_eq!(err.code(), "MISSING_GOLD");
    }

    fn arb_records() -> impl Strategy<Value = Vec<PredictionRecord>> {
        proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0usize..3), 1..60).prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (a, b, c, g))| {
                    let s = a + b + c + 1e-9;
                    let d = validate_distribution(a / s, b / s, 1.0 - a / s - b / s).unwrap();
                    rec(&format!("r{i:03}"), d, DecisionLabel::ALL[g])
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn retained_sets_are_nested(recs in arb_records(), lo in 0.01f64..1.0, hi in 0.01f64..1.0) {
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            for m in RejectMethod::ALL {
                let small = retained_indices(&recs, m, lo).unwrap();
                let large = retained_indices(&recs, m, hi).unwrap();
                prop_assert!(small.len() <= large.len());
                prop_assert_eq!(&large[..small.len()], &small[..]);
            }
        }

        #[test]
        fn one_hot_rankings_agree(labels in proptest::collection::vec(0usize..3, 1..40)) {
            let recs: Vec<_> = labels.iter().enumerate().map(|(i, &l)| {
                let mut p = [0.0; 3];
                p[l] = 1.0;
                rec(&format!("r{i:02}"), dist(p[0], p[1], p[2]), DecisionLabel::ALL[l])
            }).collect();
            let c = rank_by_score(&recs, RejectMethod::Confidence);
            prop_assert_eq!(&c, &rank_by_score(&recs, RejectMethod::Entropy));
            prop_assert_eq!(&c, &rank_by_score(&recs, RejectMethod::Margin));
        }

        #[test]
        fn collapse_never_defers(a in 0.0..1.0f64, b in 0.0..1.0f64) {
            let s = a + b + 1.0;
            let d = validate_distribution(a / s, b / s, 1.0 / s).unwrap();
            prop_assert_ne!(collapse_binary(&d), DecisionLabel::Tbd);
        }
    }
}
