//! Confusion matrices, classwise precision/recall/F1 and the error-category
//! audit.
//!
//! Undefined ratios (zero denominators) are reported as 0. Macro F1 always
//! averages all three classes, including classes that were never predicted.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::decision::{DecisionLabel, PredictionRecord};
use crate::error::{Error, Result};
use crate::router::RoutedDecision;

/// `counts[true][pred]`, rows and columns in YES, NO, TBD order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 3]; 3]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn add(&mut self, gold: DecisionLabel, pred: DecisionLabel) {
        self.counts[gold.index()][pred.index()] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, other_row) in self.counts.iter_mut().zip(other.counts) {
            for (cell, c) in row.iter_mut().zip(other_row) {
                *cell += c;
            }
        }
    }

    pub fn get(&self, gold: DecisionLabel, pred: DecisionLabel) -> u64 {
        self.counts[gold.index()][pred.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    /// Row sum: number of examples whose gold label is `label`.
    pub fn support(&self, label: DecisionLabel) -> u64 {
        self.counts[label.index()].iter().sum()
    }

    pub fn predicted(&self, label: DecisionLabel) -> u64 {
        self.counts.iter().map(|row| row[label.index()]).sum()
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10}{:>10}{:>10}{:>10}", "", "Pred YES", "Pred NO", "Pred TBD")?;
        for label in DecisionLabel::ALL {
            let row = self.counts[label.index()];
            writeln!(
                f,
                "{:<10}{:>10}{:>10}{:>10}",
                format!("True {label}"),
                row[0],
                row[1],
                row[2]
            )?;
        }
        Ok(())
    }
}

pub fn confusion<I>(pairs: I) -> Result<ConfusionMatrix>
where
    I: IntoIterator<Item = (DecisionLabel, DecisionLabel)>,
{
    let mut m = ConfusionMatrix::default();
    for (gold, pred) in pairs {
        m.add(gold, pred);
    }
    if m.total() == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: DecisionLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classes: [ClassMetrics; 3],
    pub accuracy: f64,
    pub macro_f1: f64,
    pub n: u64,
}

impl ClassificationReport {
    pub fn class(&self, label: DecisionLabel) -> &ClassMetrics {
        &self.classes[label.index()]
    }

    pub fn f1(&self, label: DecisionLabel) -> f64 {
        self.class(label).f1
    }
}

impl fmt::Display for ClassificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<6}{:>11}{:>9}{:>9}{:>10}",
            "Class", "Precision", "Recall", "F1", "Support"
        )?;
        for c in &self.classes {
            writeln!(
                f,
                "{:<6}{:>11.4}{:>9.4}{:>9.4}{:>10}",
                c.label.as_str(),
                c.precision,
                c.recall,
                c.f1,
                c.support
            )?;
        }
        writeln!(f, "accuracy {:.4}  macro_f1 {:.4}  n {}", self.accuracy, self.macro_f1, self.n)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn report(matrix: &ConfusionMatrix) -> Result<ClassificationReport> {
    let n = matrix.total();
    if n == 0 {
        return Err(Error::EmptyMatrix);
    }
    let classes = DecisionLabel::ALL.map(|label| {
        let tp = matrix.get(label, label);
        let precision = ratio(tp, matrix.predicted(label));
        let recall = ratio(tp, matrix.support(label));
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassMetrics {
            label,
            precision,
            recall,
            f1,
            support: matrix.support(label),
        }
    });
    let macro_f1 = classes.iter().map(|c| c.f1).sum::<f64>() / 3.0;
    Ok(ClassificationReport {
        classes,
        accuracy: ratio(matrix.trace(), n),
        macro_f1,
        n,
    })
}

/// Evaluates `(gold, pred)` pairs end to end.
pub fn evaluate_pairs<I>(pairs: I) -> Result<ClassificationReport>
where
    I: IntoIterator<Item = (DecisionLabel, DecisionLabel)>,
{
    report(&confusion(pairs)?)
}

/// Gold vs plain argmax over gold-labeled predictions.
pub fn argmax_report(records: &[PredictionRecord]) -> Result<ClassificationReport> {
    let pairs = records
        .iter()
        .map(|r| Ok((r.gold_or_err()?, r.dist.argmax())))
        .collect::<Result<Vec<_>>>()?;
    evaluate_pairs(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorCategory {
    pub gold: DecisionLabel,
    pub predicted: DecisionLabel,
    pub count: u64,
    pub mean_confidence: f64,
    pub mean_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorCategoryStats {
    /// Only categories with at least one error, ordered by (gold, predicted).
    pub categories: Vec<ErrorCategory>,
    pub n: u64,
}

impl ErrorCategoryStats {
    pub fn total_errors(&self) -> u64 {
        self.categories.iter().map(|c| c.count).sum()
    }

    pub fn get(&self, gold: DecisionLabel, predicted: DecisionLabel) -> Option<&ErrorCategory> {
        self.categories
            .iter()
            .find(|c| c.gold == gold && c.predicted == predicted)
    }
}

impl fmt::Display for ErrorCategoryStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16}{:>8}{:>17}{:>13}",
            "Error category", "Count", "Mean confidence", "Mean margin"
        )?;
        for c in &self.categories {
            writeln!(
                f,
                "{:<16}{:>8}{:>17.4}{:>13.4}",
                format!("{}->{}", c.gold, c.predicted),
                c.count,
                c.mean_confidence,
                c.mean_margin
            )?;
        }
        writeln!(f, "{} errors out of {} examples", self.total_errors(), self.n)
    }
}

/// Groups routing errors by `(gold, routed)`. Records and decisions must be
/// aligned position by position.
pub fn error_audit(records: &[PredictionRecord], decisions: &[RoutedDecision]) -> Result<ErrorCategoryStats> {
    if records.len() != decisions.len() {
        return Err(Error::Precondition(format!(
            "{} records but {} decisions",
            records.len(),
            decisions.len()
        )));
    }
    let mut groups: BTreeMap<(DecisionLabel, DecisionLabel), (u64, f64, f64)> = BTreeMap::new();
    for (record, decision) in records.iter().zip(decisions) {
        if record.id != decision.input_id {
            return Err(Error::IdMismatch {
                expected: record.id.clone(),
                found: decision.input_id.clone(),
            });
        }
        let gold = record.gold_or_err()?;
        let routed = decision.routing.routed;
        if gold != routed {
            let entry = groups.entry((gold, routed)).or_default();
            entry.0 += 1;
            entry.1 += decision.routing.confidence;
            entry.2 += decision.routing.margin;
        }
    }
    let categories = groups
        .into_iter()
        .map(|((gold, predicted), (count, conf, margin))| ErrorCategory {
            gold,
            predicted,
            count,
            mean_confidence: conf / count as f64,
            mean_margin: margin / count as f64,
        })
        .collect();
    Ok(ErrorCategoryStats {
        categories,
        n: records.len() as u64,
    })
}
