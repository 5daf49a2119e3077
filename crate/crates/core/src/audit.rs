//! Append-only audit persistence, run summaries, parent-vs-candidate run
//! comparison and multi-seed stability checks.

use std::fmt;
use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{high_conf_error_rate, reliability, ErrorRateBase};
use crate::decision::{DecisionLabel, PredictionRecord};
use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_lines};
use crate::metrics::{report, ConfusionMatrix};
use crate::policy::ThresholdPolicy;
use crate::router::{route, AuditRecord, ModelIdentity};

/// Appends records to a JSONL store, creating it if needed. Bytes already in
/// the store are never rewritten. Nothing is written if any record is
/// invalid.
pub fn append_audit(path: impl AsRef<Path>, records: &[AuditRecord]) -> Result<usize> {
    let path = path.as_ref();
    for r in records {
        r.validate()?;
    }
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let n = write_lines(&mut w, records).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    w.get_ref().sync_data().map_err(|e| Error::io(path, e))?;
    Ok(n)
}

/// Reads a store back. A truncated or hand-edited line is reported with
/// its 1-based line number.
pub fn read_audit(path: impl AsRef<Path>) -> Result<Vec<AuditRecord>> {
    let path = path.as_ref();
    let records: Vec<AuditRecord> = read_jsonl(path)?;
    for (i, r) in records.iter().enumerate() {
        r.validate().map_err(|e| Error::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRate {
    pub threshold: f64,
    pub rate: f64,
}

/// Headline metrics of one evaluation run, bound to the model, policy and
/// prediction file that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub model_id: String,
    pub model_version: String,
    pub policy_id: String,
    pub policy_version: String,
    pub split: String,
    pub n: u64,
    /// Absent when only published headline numbers are available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub macro_f1: f64,
    pub ece: f64,
    pub high_conf_error_rates: Vec<ThresholdRate>,
    pub tbd_rate: f64,
    pub digest: String,
}

impl RunSummary {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("run_id", &self.run_id),
            ("model_id", &self.model_id),
            ("model_version", &self.model_version),
            ("policy_id", &self.policy_id),
            ("policy_version", &self.policy_version),
            ("split", &self.split),
            ("digest", &self.digest),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| v.is_empty()) {
            return Err(Error::Schema(format!("run summary field {name} is empty")));
        }
        if self.n == 0 {
            return Err(Error::Schema("run summary has n = 0".into()));
        }
        let mut metrics = vec![
            ("macro_f1", self.macro_f1),
            ("ece", self.ece),
            ("tbd_rate", self.tbd_rate),
        ];
        metrics.extend(self.accuracy.map(|a| ("accuracy", a)));
        metrics.extend(self.high_conf_error_rates.iter().map(|t| ("high_conf_error_rate", t.rate)));
        for (name, value) in metrics {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::Range(format!("{name} = {value} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn high_conf_rate(&self, threshold: f64) -> Option<f64> {
        self.high_conf_error_rates
            .iter()
            .find(|t| t.threshold == threshold)
            .map(|t| t.rate)
    }
}

/// Everything needed to label a run besides the records themselves.
#[derive(Debug, Clone)]
pub struct RunContext<'a> {
    pub run_id: &'a str,
    pub split: &'a str,
    pub model: &'a ModelIdentity,
    pub policy: &'a ThresholdPolicy,
    pub digest: &'a str,
    pub n_bins: usize,
    pub high_conf_thresholds: &'a [f64],
}

/// Computes a summary from gold-labeled predictions. Accuracy and Macro F1
/// are of the argmax; the TBD rate is of the routed labels under the policy.
pub fn summarize_run(records: &[PredictionRecord], ctx: &RunContext<'_>) -> Result<RunSummary> {
    let mut matrix = ConfusionMatrix::default();
    let mut n_tbd = 0usize;
    for r in records {
        matrix.add(r.gold_or_err()?, r.dist.argmax());
        let routing = route(&r.dist, r.aux.as_ref(), ctx.policy).map_err(|e| Error::for_record(&r.id, e))?;
        n_tbd += usize::from(routing.routed == DecisionLabel::Tbd);
    }
    let rep = report(&matrix)?;
    let calibration = reliability(records, ctx.n_bins)?;
    let high_conf_error_rates = ctx
        .high_conf_thresholds
        .iter()
        .map(|&t| {
            high_conf_error_rate(records, t, ErrorRateBase::HighConfidence).map(|h| ThresholdRate {
                threshold: t,
                rate: h.rate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = RunSummary {
        run_id: ctx.run_id.to_string(),
        model_id: ctx.model.model_id.clone(),
        model_version: ctx.model.model_version.clone(),
        policy_id: ctx.policy.policy_id.clone(),
        policy_version: ctx.policy.version.clone(),
        split: ctx.split.to_string(),
        n: rep.n,
        accuracy: Some(rep.accuracy),
        macro_f1: rep.macro_f1,
        ece: calibration.ece,
        high_conf_error_rates,
        tbd_rate: n_tbd as f64 / records.len() as f64,
        digest: ctx.digest.to_string(),
    };
    summary.validate()?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    /// Exactly `b - a`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub run_a: RunSummary,
    pub run_b: RunSummary,
    pub deltas: Vec<MetricDelta>,
    pub notes: Vec<String>,
}

impl ComparisonReport {
    pub fn delta(&self, metric: &str) -> Option<f64> {
        self.deltas.iter().find(|d| d.metric == metric).map(|d| d.delta)
    }
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<26}{:>12}{:>12}{:>10}",
            "Metric", self.run_a.run_id, self.run_b.run_id, "Delta"
        )?;
        for d in &self.deltas {
            writeln!(f, "{:<26}{:>12.4}{:>12.4}{:>+10.4}", d.metric, d.a, d.b, d.delta)?;
        }
        for note in &self.notes {
            writeln!(f, "- {note}")?;
        }
        Ok(())
    }
}

/// Changes smaller than this are reported as flat in the notes.
const FLAT_DELTA: f64 = 0.001;

/// Per-metric `b - a`. Both runs must come from the same prediction split.
pub fn compare_runs(a: &RunSummary, b: &RunSummary) -> Result<ComparisonReport> {
    a.validate()?;
    b.validate()?;
    if a.digest != b.digest || a.split != b.split {
        return Err(Error::SplitMismatch {
            a: format!("{}:{}", a.split, a.digest),
            b: format!("{}:{}", b.split, b.digest),
        });
    }
    let mut pairs: Vec<(String, f64, f64, bool)> = Vec::new();
    if let (Some(x), Some(y)) = (a.accuracy, b.accuracy) {
        pairs.push(("accuracy".into(), x, y, true));
    }
    pairs.push(("macro_f1".into(), a.macro_f1, b.macro_f1, true));
    pairs.push(("ece".into(), a.ece, b.ece, false));
    for t in &a.high_conf_error_rates {
        if let Some(y) = b.high_conf_rate(t.threshold) {
            pairs.push((format!("high_conf_error@{}", t.threshold), t.rate, y, false));
        }
    }
    pairs.push(("tbd_rate".into(), a.tbd_rate, b.tbd_rate, false));

    let mut deltas = Vec::with_capacity(pairs.len());
    let mut notes = Vec::new();
    for (metric, x, y, higher_is_better) in pairs {
        let delta = y - x;
        let verdict = if delta.abs() < FLAT_DELTA {
            "flat"
        } else if (delta > 0.0) == higher_is_better {
            "improved"
        } else {
            "worse"
        };
        if metric != "tbd_rate" {
            notes.push(format!("{metric}: {verdict} ({delta:+.4})"));
        }
        deltas.push(MetricDelta { metric, a: x, b: y, delta });
    }
    Ok(ComparisonReport {
        run_a: a.clone(),
        run_b: b.clone(),
        deltas,
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub per_seed: Vec<(u64, f64)>,
    pub std: f64,
}

/// Runs `pipeline` once per seed and reports the spread of Macro F1.
pub fn stability_check<F>(records: &[PredictionRecord], seeds: &[u64], mut pipeline: F) -> Result<StabilityReport>
where
    F: FnMut(&[PredictionRecord], u64) -> Result<f64>,
{
    if seeds.len() < 2 {
        return Err(Error::Precondition(format!(
            "stability check needs at least 2 seeds, got {}",
            seeds.len()
        )));
    }
    let per_seed = seeds
        .iter()
        .map(|&s| pipeline(records, s).map(|f1| (s, f1)))
        .collect::<Result<Vec<_>>>()?;
    Ok(StabilityReport {
        std: population_std(per_seed.iter().map(|&(_, v)| v)),
        per_seed,
    })
}

fn population_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut it = values.clone();
    let Some(first) = it.next() else { return 0.0 };
    if it.all(|v| v.to_bits() == first.to_bits()) {
        return 0.0;
    }
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    (values.map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Argmax Macro F1 with the seed driving record order and chunking. Counts
/// are merged per chunk, so the result is independent of the seed.
pub fn seeded_evaluation(records: &[PredictionRecord], seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut rng);
    let chunk = rng.gen_range(1..=records.len().max(1));
    let mut total = ConfusionMatrix::default();
    for idx in order.chunks(chunk) {
        let mut part = ConfusionMatrix::default();
        for &i in idx {
            let r = &records[i];
            part.add(r.gold_or_err()?, r.dist.argmax());
        }
        total.merge(&part);
    }
    Ok(report(&total)?.macro_f1)
}
