//! The bounded decision space and the probability triples that live on it.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed on each component and on the total mass before a raw
/// triple is rejected.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// Sums this close to 1 are left untouched so that serialized distributions
/// re-validate to bit-identical values.
const EXACT_SUM_SLACK: f64 = 4.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DecisionLabel {
    #[serde(rename = "YES")]
    Yes,
    #[serde(rename = "NO")]
    No,
    #[serde(rename = "TBD")]
    Tbd,
}

impl DecisionLabel {
    /// Canonical order used for matrix rows/columns and probability triples.
    pub const ALL: [DecisionLabel; 3] = [DecisionLabel::Yes, DecisionLabel::No, DecisionLabel::Tbd];

    pub fn index(self) -> usize {
        match self {
            DecisionLabel::Yes => 0,
            DecisionLabel::No => 1,
            DecisionLabel::Tbd => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DecisionLabel::Yes => "YES",
            DecisionLabel::No => "NO",
            DecisionLabel::Tbd => "TBD",
        }
    }
}

impl fmt::Display for DecisionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecisionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "YES" => Ok(DecisionLabel::Yes),
            "NO" => Ok(DecisionLabel::No),
            "TBD" => Ok(DecisionLabel::Tbd),
            other => Err(Error::Schema(format!("unknown decision label {other:?}"))),
        }
    }
}

/// A validated probability triple over YES, NO and TBD.
///
/// Construction always goes through [`validate_distribution`], so every value
/// of this type has components in `[0, 1]` summing to 1 up to rounding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution", into = "RawDistribution")]
pub struct DecisionDistribution {
    probs: [f64; 3],
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RawDistribution {
    p_yes: f64,
    p_no: f64,
    p_tbd: f64,
}

impl TryFrom<RawDistribution> for DecisionDistribution {
    type Error = Error;

    fn try_from(raw: RawDistribution) -> Result<Self> {
        validate_distribution(raw.p_yes, raw.p_no, raw.p_tbd)
    }
}

impl From<DecisionDistribution> for RawDistribution {
    fn from(d: DecisionDistribution) -> Self {
        RawDistribution {
            p_yes: d.p_yes(),
            p_no: d.p_no(),
            p_tbd: d.p_tbd(),
        }
    }
}

/// Checks a raw `(p_yes, p_no, p_tbd)` triple and returns it clamped and
/// renormalized.
pub fn validate_distribution(p_yes: f64, p_no: f64, p_tbd: f64) -> Result<DecisionDistribution> {
    let raw = [p_yes, p_no, p_tbd];
    const NAMES: [&str; 3] = ["p_yes", "p_no", "p_tbd"];

    for (value, name) in raw.iter().zip(NAMES) {
        if !value.is_finite() {
            return Err(Error::NonFinite { component: name });
        }
    }
    for (&value, name) in raw.iter().zip(NAMES) {
        if value < -NORMALIZATION_TOLERANCE {
            return Err(Error::NegativeMass {
                component: name,
                value,
            });
        }
    }
    let sum: f64 = raw.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE
        || raw.iter().any(|&v| v > 1.0 + NORMALIZATION_TOLERANCE)
    {
        return Err(Error::NotNormalized { sum });
    }

    let mut probs = raw.map(|v| v.clamp(0.0, 1.0));
    let clamped_sum: f64 = probs.iter().sum();
    if (clamped_sum - 1.0).abs() > EXACT_SUM_SLACK {
        for p in &mut probs {
            *p /= clamped_sum;
        }
    }
    Ok(DecisionDistribution { probs })
}

impl DecisionDistribution {
    pub fn p_yes(&self) -> f64 {
        self.probs[0]
    }

    pub fn p_no(&self) -> f64 {
        self.probs[1]
    }

    pub fn p_tbd(&self) -> f64 {
        self.probs[2]
    }

    pub fn prob(&self, label: DecisionLabel) -> f64 {
        self.probs[label.index()]
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.probs
    }

    /// Top-1 probability.
    pub fn confidence(&self) -> f64 {
        self.probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Top-1 minus top-2 probability.
    pub fn margin(&self) -> f64 {
        let mut sorted = self.probs;
        sorted.sort_by(|a, b| b.total_cmp(a));
        sorted[0] - sorted[1]
    }

    pub fn argmax(&self) -> DecisionLabel {
        argmax_decision(self)
    }
}

/// Label of the largest component. Exact ties resolve TBD > NO > YES.
pub fn argmax_decision(dist: &DecisionDistribution) -> DecisionLabel {
    const PRIORITY: [DecisionLabel; 3] = [DecisionLabel::Tbd, DecisionLabel::No, DecisionLabel::Yes];
    let mut best = PRIORITY[0];
    for &label in &PRIORITY[1..] {
        if dist.prob(label) > dist.prob(best) {
            best = label;
        }
    }
    best
}

/// Scores of auxiliary channels, keyed by channel name.
pub type AuxScores = BTreeMap<String, f64>;

/// One model output for one identified input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PredictionLine", into = "PredictionLine")]
pub struct PredictionRecord {
    pub id: String,
    pub dist: DecisionDistribution,
    pub gold: Option<DecisionLabel>,
    pub aux: Option<AuxScores>,
}

/// Flat wire shape of a prediction line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct PredictionLine {
    id: String,
    p_yes: f64,
    p_no: f64,
    p_tbd: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold: Option<DecisionLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aux: Option<AuxScores>,
}

pub(crate) const PREDICTION_KEYS: [&str; 6] = ["id", "p_yes", "p_no", "p_tbd", "gold", "aux"];

impl TryFrom<PredictionLine> for PredictionRecord {
    type Error = Error;

    fn try_from(line: PredictionLine) -> Result<Self> {
        PredictionRecord::new(
            line.id,
            validate_distribution(line.p_yes, line.p_no, line.p_tbd)?,
            line.gold,
            line.aux,
        )
    }
}

impl From<PredictionRecord> for PredictionLine {
    fn from(r: PredictionRecord) -> Self {
        PredictionLine {
            id: r.id,
            p_yes: r.dist.p_yes(),
            p_no: r.dist.p_no(),
            p_tbd: r.dist.p_tbd(),
            gold: r.gold,
            aux: r.aux,
        }
    }
}

impl PredictionRecord {
    pub fn new(
        id: impl Into<String>,
        dist: DecisionDistribution,
        gold: Option<DecisionLabel>,
        aux: Option<AuxScores>,
    ) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Schema("prediction id is empty".into()));
        }
        if let Some(aux) = &aux {
            validate_aux(aux)?;
        }
        Ok(PredictionRecord { id, dist, gold, aux })
    }

    pub fn gold_or_err(&self) -> Result<DecisionLabel> {
        self.gold.ok_or_else(|| Error::MissingGold { id: self.id.clone() })
    }
}

pub(crate) fn validate_aux(aux: &AuxScores) -> Result<()> {
    for (channel, &score) in aux {
        if channel.is_empty() {
            return Err(Error::Schema("aux channel name is empty".into()));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Range(format!(
                "aux channel {channel:?} score {score} outside [0, 1]"
            )));
        }
    }
    Ok(())
}

/// `cost[true][routed]`, rows and columns in YES, NO, TBD order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct CostMatrix {
    cost: [[f64; 3]; 3],
}

impl CostMatrix {
    pub fn new(cost: [[f64; 3]; 3]) -> Result<Self> {
        for (i, row) in cost.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if !c.is_finite() || c < 0.0 {
                    return Err(Error::Range(format!(
                        "cost[{}][{}] = {c} must be a finite non-negative number",
                        DecisionLabel::ALL[i],
                        DecisionLabel::ALL[j]
                    )));
                }
            }
        }
        Ok(CostMatrix { cost })
    }

    /// Unit cost off the diagonal, zero on it.
    pub fn zero_one() -> Self {
        let mut cost = [[1.0; 3]; 3];
        for (i, row) in cost.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        CostMatrix { cost }
    }

    pub fn zero() -> Self {
        CostMatrix { cost: [[0.0; 3]; 3] }
    }

    pub fn get(&self, truth: DecisionLabel, routed: DecisionLabel) -> f64 {
        self.cost[truth.index()][routed.index()]
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        self.cost
    }
}

impl TryFrom<[[f64; 3]; 3]> for CostMatrix {
    type Error = Error;

    fn try_from(cost: [[f64; 3]; 3]) -> Result<Self> {
        CostMatrix::new(cost)
    }
}

impl From<CostMatrix> for [[f64; 3]; 3] {
    fn from(m: CostMatrix) -> Self {
        m.cost
    }
}
