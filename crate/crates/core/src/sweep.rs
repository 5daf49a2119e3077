//! Threshold sweeps, expected operational risk and operating-point
//! selection.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::decision::{CostMatrix, DecisionLabel, PredictionRecord};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_pairs, ClassificationReport};
use crate::policy::{ThresholdPolicy, Thresholds};
use crate::router::route;

/// Which threshold combinations a sweep visits. `tau_tbd` is always 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridAxes {
    /// `tau_yes == tau_no` at each value.
    Joint { taus: Vec<f64> },
    /// Every `(tau_yes, tau_no)` combination, `tau_yes` outermost.
    Independent { tau_yes: Vec<f64>, tau_no: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdGrid {
    pub axes: GridAxes,
    /// Margin rules to cross with the threshold axes; `null` means no rule.
    #[serde(default = "no_margin")]
    pub margin_min: Vec<Option<f64>>,
}

fn no_margin() -> Vec<Option<f64>> {
    vec![None]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub tau_yes: f64,
    pub tau_no: f64,
    pub margin_min: Option<f64>,
}

impl GridPoint {
    pub fn policy(&self, index: usize) -> Result<ThresholdPolicy> {
        ThresholdPolicy::new(
            "sweep",
            format!("grid-{index}"),
            Thresholds {
                yes: self.tau_yes,
                no: self.tau_no,
                tbd: 0.0,
            },
            self.margin_min,
            Vec::new(),
        )
    }
}

impl ThresholdGrid {
    pub fn joint(taus: Vec<f64>) -> Self {
        ThresholdGrid {
            axes: GridAxes::Joint { taus },
            margin_min: no_margin(),
        }
    }

    pub fn independent(tau_yes: Vec<f64>, tau_no: Vec<f64>) -> Self {
        ThresholdGrid {
            axes: GridAxes::Independent { tau_yes, tau_no },
            margin_min: no_margin(),
        }
    }

    /// 0.34, 0.39, ..., 0.94 on both classes jointly.
    pub fn default_joint() -> Self {
        let taus = (0..)
            .map(|k| ((34 + 5 * k) as f64) / 100.0)
            .take_while(|&t| t <= 0.95)
            .collect();
        Self::joint(taus)
    }

    /// Grid points in row order, margin innermost.
    pub fn points(&self) -> Result<Vec<GridPoint>> {
        let pairs: Vec<(f64, f64)> = match &self.axes {
            GridAxes::Joint { taus } => taus.iter().map(|&t| (t, t)).collect(),
            GridAxes::Independent { tau_yes, tau_no } => tau_yes
                .iter()
                .flat_map(|&y| tau_no.iter().map(move |&n| (y, n)))
                .collect(),
        };
        let mut points = Vec::with_capacity(pairs.len() * self.margin_min.len());
        for (tau_yes, tau_no) in pairs {
            for &margin_min in &self.margin_min {
                points.push(GridPoint {
                    tau_yes,
                    tau_no,
                    margin_min,
                });
            }
        }
        if points.is_empty() {
            return Err(Error::EmptyGrid);
        }
        for (i, p) in points.iter().enumerate() {
            p.policy(i)?;
        }
        for (i, p) in points.iter().enumerate() {
            if points[..i].contains(p) {
                return Err(Error::Schema(format!("grid point {p:?} appears twice")));
            }
        }
        Ok(points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau_yes: f64,
    pub tau_no: f64,
    pub margin_min: Option<f64>,
    pub tbd_rate: f64,
    pub automation_rate: f64,
    pub report: ClassificationReport,
    pub risk: Option<f64>,
}

impl SweepRow {
    pub fn point(&self) -> GridPoint {
        GridPoint {
            tau_yes: self.tau_yes,
            tau_no: self.tau_no,
            margin_min: self.margin_min,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub grid: ThresholdGrid,
    pub source_digest: String,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("tau_yes,tau_no,margin_min,tbd_rate,accuracy,macro_f1,yes_f1,no_f1,tbd_f1,risk\n");
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.tau_yes,
                r.tau_no,
                opt(r.margin_min),
                r.tbd_rate,
                r.report.accuracy,
                r.report.macro_f1,
                r.report.f1(DecisionLabel::Yes),
                r.report.f1(DecisionLabel::No),
                r.report.f1(DecisionLabel::Tbd),
                opt(r.risk),
            );
        }
        out
    }
}

fn golds(records: &[PredictionRecord]) -> Result<Vec<DecisionLabel>> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    records.iter().map(PredictionRecord::gold_or_err).collect()
}

fn routed_labels(records: &[PredictionRecord], policy: &ThresholdPolicy) -> Result<Vec<DecisionLabel>> {
    records
        .iter()
        .map(|r| {
            route(&r.dist, r.aux.as_ref(), policy)
                .map(|x| x.routed)
                .map_err(|e| Error::for_record(&r.id, e))
        })
        .collect()
}

fn mean_cost(gold: &[DecisionLabel], routed: &[DecisionLabel], cost: &CostMatrix) -> f64 {
    let total: f64 = gold.iter().zip(routed).map(|(&g, &r)| cost.get(g, r)).sum();
    total / gold.len() as f64
}

/// Routes every record under each grid point. `source_digest` identifies the
/// prediction file the records came from.
pub fn run_sweep(
    records: &[PredictionRecord],
    grid: &ThresholdGrid,
    cost: Option<&CostMatrix>,
    source_digest: impl Into<String>,
) -> Result<SweepTable> {
    let points = grid.points()?;
    let gold = golds(records)?;
    let mut rows = Vec::with_capacity(points.len());
    for (i, point) in points.iter().enumerate() {
        let routed = routed_labels(records, &point.policy(i)?)?;
        let n_tbd = routed.iter().filter(|&&l| l == DecisionLabel::Tbd).count();
        let tbd_rate = n_tbd as f64 / records.len() as f64;
        rows.push(SweepRow {
            tau_yes: point.tau_yes,
            tau_no: point.tau_no,
            margin_min: point.margin_min,
            tbd_rate,
            automation_rate: 1.0 - tbd_rate,
            report: evaluate_pairs(gold.iter().copied().zip(routed.iter().copied()))?,
            risk: cost.map(|c| mean_cost(&gold, &routed, c)),
        });
    }
    Ok(SweepTable {
        rows,
        grid: grid.clone(),
        source_digest: source_digest.into(),
    })
}

/// Empirical mean of `cost[gold][routed]`.
pub fn expected_risk(records: &[PredictionRecord], policy: &ThresholdPolicy, cost: &CostMatrix) -> Result<f64> {
    let gold = golds(records)?;
    let routed = routed_labels(records, policy)?;
    Ok(mean_cost(&gold, &routed, cost))
}

/// Row with the lowest expected risk under `cost`. Equal risks go to the
/// row with the higher TBD rate, then to the earlier row.
pub fn select_operating_point<'t>(
    table: &'t SweepTable,
    cost: &CostMatrix,
    records: &[PredictionRecord],
) -> Result<&'t SweepRow> {
    let mut best: Option<(&SweepRow, f64)> = None;
    for (i, row) in table.rows.iter().enumerate() {
        let risk = expected_risk(records, &row.point().policy(i)?, cost)?;
        let better = match best {
            None => true,
            Some((b, b_risk)) => risk < b_risk || (risk == b_risk && row.tbd_rate > b.tbd_rate),
        };
        if better {
            best = Some((row, risk));
        }
    }
    best.map(|(row, _)| row).ok_or(Error::EmptyTable)
}
