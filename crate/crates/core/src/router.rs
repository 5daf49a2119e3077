//! The deployment routing rule, batch routing with audit emission, and
//! replay of audit streams against a policy registry.
//!
//! Routing checks run in a fixed order, and the first one that fails forces
//! TBD:
//!
//! 1. the argmax class must reach its own threshold `tau[argmax]`;
//! 2. if `margin_min` is set, top-1 minus top-2 must reach it;
//! 3. no auxiliary gate may fire.
//!
//! With zero thresholds, no margin rule and no gates the router is exactly
//! [`argmax_decision`].

use std::collections::BTreeMap;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::decision::{
    argmax_decision, validate_aux, AuxScores, DecisionDistribution, DecisionLabel, PredictionRecord,
};
use crate::error::{Error, Result};
use crate::policy::{PolicyRegistry, ThresholdPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RuleFired {
    ArgmaxPassed,
    ThresholdFallback,
    MarginFallback,
    AuxGateFallback,
}

impl RuleFired {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleFired::ArgmaxPassed => "ARGMAX_PASSED",
            RuleFired::ThresholdFallback => "THRESHOLD_FALLBACK",
            RuleFired::MarginFallback => "MARGIN_FALLBACK",
            RuleFired::AuxGateFallback => "AUX_GATE_FALLBACK",
        }
    }
}

/// Outcome of routing one distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Routing {
    pub routed: DecisionLabel,
    pub raw_argmax: DecisionLabel,
    pub confidence: f64,
    pub margin: f64,
    pub rule_fired: RuleFired,
}

impl Routing {
    /// TBD because the argmax was TBD, not because a policy rule fired.
    pub fn is_learned_deferral(&self) -> bool {
        self.routed == DecisionLabel::Tbd && self.rule_fired == RuleFired::ArgmaxPassed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedDecision {
    pub input_id: String,
    #[serde(flatten)]
    pub routing: Routing,
}

pub fn route(
    dist: &DecisionDistribution,
    aux: Option<&AuxScores>,
    policy: &ThresholdPolicy,
) -> Result<Routing> {
    // Resolve every gated score up front so a missing channel is an error
    // regardless of which rule ends up firing.
    let mut gate_scores = Vec::with_capacity(policy.aux_gates.len());
    for gate in &policy.aux_gates {
        let score = aux
            .and_then(|a| a.get(&gate.channel))
            .copied()
            .ok_or_else(|| Error::MissingAuxChannel {
                channel: gate.channel.clone(),
            })?;
        gate_scores.push((gate, score));
    }

    let raw_argmax = argmax_decision(dist);
    let confidence = dist.prob(raw_argmax);
    let margin = dist.margin();

    let rule_fired = if confidence < policy.tau.get(raw_argmax) {
        RuleFired::ThresholdFallback
    } else if policy.margin_min.is_some_and(|m| margin < m) {
        RuleFired::MarginFallback
    } else if gate_scores.iter().any(|(gate, score)| gate.fires(*score)) {
        RuleFired::AuxGateFallback
    } else {
        RuleFired::ArgmaxPassed
    };
    let routed = match rule_fired {
        RuleFired::ArgmaxPassed => raw_argmax,
        _ => policy.fallback,
    };
    Ok(Routing {
        routed,
        raw_argmax,
        confidence,
        margin,
        rule_fired,
    })
}

pub fn route_record(record: &PredictionRecord, policy: &ThresholdPolicy) -> Result<RoutedDecision> {
    let routing = route(&record.dist, record.aux.as_ref(), policy)?;
    Ok(RoutedDecision {
        input_id: record.id.clone(),
        routing,
    })
}

/// Source of audit timestamps.
pub trait Clock {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub DateTime<Utc>);

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelIdentity {
    pub model_id: String,
    pub model_version: String,
}

impl ModelIdentity {
    pub fn new(model_id: impl Into<String>, model_version: impl Into<String>) -> Result<Self> {
        let id = ModelIdentity {
            model_id: model_id.into(),
            model_version: model_version.into(),
        };
        if id.model_id.is_empty() || id.model_version.is_empty() {
            return Err(Error::Schema("model_id and model_version must be non-empty".into()));
        }
        Ok(id)
    }
}

/// Persisted provenance for one routed decision.
///
/// `aux` carries the scores of the gated channels (only present when the
/// policy has gates) so replay can re-evaluate gate decisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditRecord {
    pub input_id: String,
    pub model_id: String,
    pub model_version: String,
    pub policy_id: String,
    pub policy_version: String,
    pub p_yes: f64,
    pub p_no: f64,
    pub p_tbd: f64,
    pub routed: DecisionLabel,
    pub rule_fired: RuleFired,
    pub enabled_aux_channels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux: Option<AuxScores>,
    #[serde(with = "iso8601")]
    pub timestamp: DateTime<Utc>,
}

impl AuditRecord {
    pub fn dist(&self) -> Result<DecisionDistribution> {
        crate::decision::validate_distribution(self.p_yes, self.p_no, self.p_tbd)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("input_id", &self.input_id),
            ("model_id", &self.model_id),
            ("model_version", &self.model_version),
            ("policy_id", &self.policy_id),
            ("policy_version", &self.policy_version),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| v.is_empty()) {
            return Err(Error::Schema(format!("audit record field {name} is empty")));
        }
        self.dist()?;
        if let Some(aux) = &self.aux {
            validate_aux(aux)?;
        }
        if self.rule_fired != RuleFired::ArgmaxPassed && self.routed != DecisionLabel::Tbd {
            return Err(Error::Schema(format!(
                "audit record {:?}: {} must route to TBD",
                self.input_id,
                self.rule_fired.as_str()
            )));
        }
        Ok(())
    }
}

mod iso8601 {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::AutoSi, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let text = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&text)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

/// Formats a timestamp the way audit records store it.
pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BatchMode {
    /// Abort on the first failing record.
    #[default]
    Strict,
    /// Skip failing records and report them.
    Lenient,
}

#[derive(Debug, Default)]
pub struct BatchOutput {
    pub decisions: Vec<RoutedDecision>,
    pub audit: Vec<AuditRecord>,
    /// Records dropped in lenient mode, with the reason.
    pub skipped: Vec<(String, Error)>,
}

pub fn route_batch(
    records: &[PredictionRecord],
    policy: &ThresholdPolicy,
    model: &ModelIdentity,
    clock: &dyn Clock,
    mode: BatchMode,
) -> Result<BatchOutput> {
    policy.validate()?;
    let channels = policy.gated_channels();
    let mut out = BatchOutput::default();
    for record in records {
        let routing = match route(&record.dist, record.aux.as_ref(), policy) {
            Ok(r) => r,
            Err(e) => match mode {
                BatchMode::Strict => return Err(Error::for_record(&record.id, e)),
                BatchMode::Lenient => {
                    out.skipped.push((record.id.clone(), e));
                    continue;
                }
            },
        };
        let aux = if channels.is_empty() {
            None
        } else {
            record.aux.as_ref().map(|scores| {
                channels
                    .iter()
                    .filter_map(|c| scores.get(c).map(|&s| (c.clone(), s)))
                    .collect::<BTreeMap<_, _>>()
            })
        };
        out.audit.push(AuditRecord {
            input_id: record.id.clone(),
            model_id: model.model_id.clone(),
            model_version: model.model_version.clone(),
            policy_id: policy.policy_id.clone(),
            policy_version: policy.version.clone(),
            p_yes: record.dist.p_yes(),
            p_no: record.dist.p_no(),
            p_tbd: record.dist.p_tbd(),
            routed: routing.routed,
            rule_fired: routing.rule_fired,
            enabled_aux_channels: channels.clone(),
            aux,
            timestamp: clock.now(),
        });
        out.decisions.push(RoutedDecision {
            input_id: record.id.clone(),
            routing,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReplayReport {
    pub n_checked: usize,
    pub n_mismatched: usize,
    pub mismatched_ids: Vec<String>,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.n_mismatched == 0
    }
}

/// Recomputes every audited routing from its stored probabilities and the
/// registered policy. Timestamps are not compared.
pub fn replay(audit: &[AuditRecord], registry: &PolicyRegistry) -> Result<ReplayReport> {
    let mut report = ReplayReport::default();
    for record in audit {
        let policy = registry.lookup(&record.policy_id, &record.policy_version)?;
        let consistent = record
            .dist()
            .and_then(|dist| route(&dist, record.aux.as_ref(), policy))
            .is_ok_and(|r| {
                r.routed == record.routed
                    && r.rule_fired == record.rule_fired
                    && record.enabled_aux_channels == policy.gated_channels()
            });
        report.n_checked += 1;
        if !consistent {
            report.n_mismatched += 1;
            report.mismatched_ids.push(record.input_id.clone());
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::validate_distribution;
    use crate::policy::{AuxGate, Comparator, Thresholds};
    use chrono::TimeZone;

    fn dist(y: f64, n: f64, t: f64) -> DecisionDistribution {
        validate_distribution(y, n, t).unwrap()
    }

    fn policy(tau: Thresholds, margin: Option<f64>, gates: Vec<AuxGate>) -> ThresholdPolicy {
        ThresholdPolicy::new("test", "v1", tau, margin, gates).unwrap()
    }

    fn clock() -> FixedClock {
        FixedClock(Utc.with_ymd_and_hms(2026, 1, 2, 3, 4, 5).unwrap())
    }

    #[test]
    fn zero_thresholds_pass_argmax() {
        let r = route(&dist(0.9, 0.05, 0.05), None, &policy(Thresholds::ZERO, None, vec![])).unwrap();
        assert_eq!(r.routed, DecisionLabel::Yes);
        assert_eq!(r.rule_fired, RuleFired::ArgmaxPassed);
        assert_eq!(r.confidence, 0.9);
    }

    #[test]
    fn argmax_below_its_threshold_defers() {
        let tau = Thresholds { yes: 0.6, ..Thresholds::ZERO };
        let r = route(&dist(0.55, 0.40, 0.05), None, &policy(tau, None, vec![])).unwrap();
        assert_eq!((r.routed, r.rule_fired), (DecisionLabel::Tbd, RuleFired::ThresholdFallback));
        assert_eq!(r.raw_argmax, DecisionLabel::Yes);
    }

    #[test]
    fn non_argmax_threshold_is_irrelevant() {
        // NO would pass a zero threshold, but the argmax YES fails its own.
        let tau = Thresholds { yes: 0.6, no: 0.0, tbd: 0.0 };
        let r = route(&dist(0.55, 0.40, 0.05), None, &policy(tau, None, vec![])).unwrap();
        assert_eq!(r.routed, DecisionLabel::Tbd);
    }

    #[test]
    fn low_margin_defers() {
        let r = route(&dist(0.48, 0.47, 0.05), None, &policy(Thresholds::ZERO, Some(0.05), vec![]))
            .unwrap();
        assert_eq!((r.routed, r.rule_fired), (DecisionLabel::Tbd, RuleFired::MarginFallback));
    }

    #[test]
    fn aux_gate_forces_tbd() {
        let gate = AuxGate {
            channel: "risk".into(),
            comparator: Comparator::AtLeast,
            bound: 0.7,
        };
        let p = policy(Thresholds::ZERO, None, vec![gate]);
        let mut aux = AuxScores::new();
        aux.insert("risk".into(), 0.8);
        let r = route(&dist(0.9, 0.05, 0.05), Some(&aux), &p).unwrap();
        assert_eq!((r.routed, r.rule_fired), (DecisionLabel::Tbd, RuleFired::AuxGateFallback));

        aux.insert("risk".into(), 0.2);
        let r = route(&dist(0.9, 0.05, 0.05), Some(&aux), &p).unwrap();
        assert_eq!(r.routed, DecisionLabel::Yes);

        let err = route(&dist(0.9, 0.05, 0.05), None, &p).unwrap_err();
        assert_eq!(err.code(), "MISSING_AUX_CHANNEL");
    }

    #[test]
    fn rule_order_threshold_before_margin_before_gate() {
        let gate = AuxGate {
            channel: "risk".into(),
            comparator: Comparator::AtMost,
            bound: 1.0,
        };
        let mut aux = AuxScores::new();
        aux.insert("risk".into(), 0.5);
        let tau = Thresholds { yes: 0.6, ..Thresholds::ZERO };
        let all = policy(tau, Some(0.5), vec![gate.clone()]);
        let d = dist(0.5, 0.45, 0.05);
        assert_eq!(route(&d, Some(&aux), &all).unwrap().rule_fired, RuleFired::ThresholdFallback);
        let no_tau = policy(Thresholds::ZERO, Some(0.5), vec![gate.clone()]);
        assert_eq!(route(&d, Some(&aux), &no_tau).unwrap().rule_fired, RuleFired::MarginFallback);
        let gate_only = policy(Thresholds::ZERO, None, vec![gate]);
        assert_eq!(route(&d, Some(&aux), &gate_only).unwrap().rule_fired, RuleFired::AuxGateFallback);
    }

    #[test]
    fn learned_tbd_is_distinguishable() {
        let r = route(&dist(0.1, 0.2, 0.7), None, &policy(Thresholds::ZERO, None, vec![])).unwrap();
        assert!(r.is_learned_deferral());
        let tau = Thresholds { yes: 0.95, ..Thresholds::ZERO };
        let r = route(&dist(0.9, 0.05, 0.05), None, &policy(tau, None, vec![])).unwrap();
        assert!(!r.is_learned_deferral());
    }

    fn records() -> Vec<PredictionRecord> {
        vec![
            PredictionRecord::new("a", dist(0.7, 0.2, 0.1), None, None).unwrap(),
            PredictionRecord::new("b", dist(0.2, 0.7, 0.1), None, None).unwrap(),
            PredictionRecord::new("c", dist(0.2, 0.1, 0.7), None, None).unwrap(),
        ]
    }

    #[test]
    fn batch_matches_per_record_argmax() {
        let model = ModelIdentity::new("toy", "v1").unwrap();
        let recs = records();
        let out = route_batch(&recs, &ThresholdPolicy::argmax("p", "1"), &model, &clock(), BatchMode::Strict)
            .unwrap();
        let routed: Vec<_> = out.decisions.iter().map(|d| d.routing.routed).collect();
        let expected: Vec<_> = recs.iter().map(|r| r.dist.argmax()).collect();
        assert_eq!(routed, expected);
        assert_eq!(out.audit.len(), 3);
        assert_eq!(out.audit[1].input_id, "b");

        let empty = route_batch(&[], &ThresholdPolicy::argmax("p", "1"), &model, &clock(), BatchMode::Strict)
            .unwrap();
        assert!(empty.decisions.is_empty() && empty.audit.is_empty());
    }

    #[test]
    fn batch_modes_on_missing_channel() {
        let gate = AuxGate {
            channel: "risk".into(),
            comparator: Comparator::AtLeast,
            bound: 0.7,
        };
        let p = policy(Thresholds::ZERO, None, vec![gate]);
        let mut recs = records();
        for r in &mut recs[..2] {
            let mut aux = AuxScores::new();
            aux.insert("risk".into(), 0.1);
            aux.insert("other".into(), 0.9);
            r.aux = Some(aux);
        }
        let model = ModelIdentity::new("toy", "v1").unwrap();
        let err = route_batch(&recs, &p, &model, &clock(), BatchMode::Strict).unwrap_err();
        assert!(matches!(&err, Error::Record { id, .. } if id == "c"));
        assert_eq!(err.code(), "MISSING_AUX_CHANNEL");

        let out = route_batch(&recs, &p, &model, &clock(), BatchMode::Lenient).unwrap();
        assert_eq!(out.decisions.len(), 2);
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.skipped[0].0, "c");
        // only gated channels are persisted
        assert_eq!(out.audit[0].aux.as_ref().unwrap().len(), 1);
        assert_eq!(out.audit[0].enabled_aux_channels, vec!["risk".to_string()]);
    }

    #[test]
    fn audit_json_field_set() {
        let model = ModelIdentity::new("toy", "v1").unwrap();
        let out = route_batch(&records(), &ThresholdPolicy::argmax("p", "1"), &model, &clock(), BatchMode::Strict)
            .unwrap();
        let value = serde_json::to_value(&out.audit[0]).unwrap();
        let mut keys: Vec<_> = value.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "enabled_aux_channels", "input_id", "model_id", "model_version", "p_no", "p_tbd",
                "p_yes", "policy_id", "policy_version", "routed", "rule_fired", "timestamp"
            ]
        );
        assert_eq!(value["timestamp"], "2026-01-02T03:04:05Z");
        assert_eq!(value["rule_fired"], "ARGMAX_PASSED");
        let back: AuditRecord = serde_json::from_value(value).unwrap();
        assert_eq!(back, out.audit[0]);
    }

    #[test]
    fn replay_detects_tampering_and_unknown_versions() {
        let model = ModelIdentity::new("toy", "v1").unwrap();
        let tau = Thresholds { yes: 0.6, no: 0.6, tbd: 0.0 };
        let p = policy(tau, None, vec![]);
        let mut registry = PolicyRegistry::new();
        registry.register(p.clone()).unwrap();

        let mut audit = route_batch(&records(), &p, &model, &clock(), BatchMode::Strict).unwrap().audit;
        assert!(replay(&audit, &registry).unwrap().is_clean());

        audit[1].routed = DecisionLabel::Yes;
        let report = replay(&audit, &registry).unwrap();
        assert_eq!(report.n_checked, 3);
        assert_eq!(report.n_mismatched, 1);
        assert_eq!(report.mismatched_ids, vec!["b".to_string()]);

        let mut other = PolicyRegistry::new();
        let mut v2 = p.clone();
        v2.version = "v2".into();
        other.register(v2).unwrap();
        assert_eq!(replay(&audit, &other).unwrap_err().code(), "UNKNOWN_POLICY_VERSION");
    }
}
