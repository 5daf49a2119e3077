//! Versioned operating policies and the append-only registry that keeps them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decision::DecisionLabel;
use crate::error::{Error, Result};

/// Per-class minimum probability the argmax class must reach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(rename = "YES")]
    pub yes: f64,
    #[serde(rename = "NO")]
    pub no: f64,
    /// Participates in the threshold check like the other classes, but a
    /// TBD argmax that fails it still routes to TBD.
    #[serde(rename = "TBD")]
    pub tbd: f64,
}

impl Thresholds {
    pub const ZERO: Thresholds = Thresholds {
        yes: 0.0,
        no: 0.0,
        tbd: 0.0,
    };

    pub fn get(&self, label: DecisionLabel) -> f64 {
        match label {
            DecisionLabel::Yes => self.yes,
            DecisionLabel::No => self.no,
            DecisionLabel::Tbd => self.tbd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "<=")]
    AtMost,
}

/// Forces TBD when an auxiliary channel crosses a bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxGate {
    pub channel: String,
    pub comparator: Comparator,
    pub bound: f64,
}

impl AuxGate {
    pub fn fires(&self, score: f64) -> bool {
        match self.comparator {
            Comparator::AtLeast => score >= self.bound,
            Comparator::AtMost => score <= self.bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdPolicy {
    pub policy_id: String,
    pub version: String,
    pub tau: Thresholds,
    #[serde(default)]
    pub margin_min: Option<f64>,
    pub fallback: DecisionLabel,
    #[serde(default)]
    pub aux_gates: Vec<AuxGate>,
}

impl ThresholdPolicy {
    /// A validated policy with TBD fallback.
    pub fn new(
        policy_id: impl Into<String>,
        version: impl Into<String>,
        tau: Thresholds,
        margin_min: Option<f64>,
        aux_gates: Vec<AuxGate>,
    ) -> Result<Self> {
        let policy = ThresholdPolicy {
            policy_id: policy_id.into(),
            version: version.into(),
            tau,
            margin_min,
            fallback: DecisionLabel::Tbd,
            aux_gates,
        };
        policy.validate()?;
        Ok(policy)
    }

    /// Zero thresholds, no margin rule, no gates: routing reduces to argmax.
    pub fn argmax(policy_id: impl Into<String>, version: impl Into<String>) -> Self {
        ThresholdPolicy {
            policy_id: policy_id.into(),
            version: version.into(),
            tau: Thresholds::ZERO,
            margin_min: None,
            fallback: DecisionLabel::Tbd,
            aux_gates: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.policy_id.is_empty() || self.version.is_empty() {
            return Err(Error::Schema("policy_id and version must be non-empty".into()));
        }
        if self.fallback != DecisionLabel::Tbd {
            return Err(Error::Schema(format!(
                "fallback must be TBD, got {}",
                self.fallback
            )));
        }
        for label in DecisionLabel::ALL {
            check_unit("tau", label.as_str(), self.tau.get(label))?;
        }
        if let Some(m) = self.margin_min {
            check_unit("margin_min", "", m)?;
        }
        for gate in &self.aux_gates {
            if gate.channel.is_empty() {
                return Err(Error::Schema("aux gate channel is empty".into()));
            }
            check_unit("aux gate bound", &gate.channel, gate.bound)?;
        }
        Ok(())
    }

    /// Distinct gated channels, sorted.
    pub fn gated_channels(&self) -> Vec<String> {
        let mut channels: Vec<String> = self.aux_gates.iter().map(|g| g.channel.clone()).collect();
        channels.sort();
        channels.dedup();
        channels
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }
}

fn check_unit(field: &str, which: &str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        let name = if which.is_empty() {
            field.to_string()
        } else {
            format!("{field}[{which}]")
        };
        return Err(Error::Range(format!("{name} = {value} outside [0, 1]")));
    }
    Ok(())
}

/// Parses and validates a policy JSON document.
pub fn load_policy(document: &str) -> Result<ThresholdPolicy> {
    let policy: ThresholdPolicy =
        serde_json::from_str(document).map_err(|e| Error::Schema(e.to_string()))?;
    policy.validate()?;
    Ok(policy)
}

pub fn read_policy(path: impl AsRef<Path>) -> Result<ThresholdPolicy> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_policy(&text)
}

/// Append-only store of policies keyed by `(policy_id, version)`.
#[derive(Debug, Clone, Default)]
pub struct PolicyRegistry {
    policies: BTreeMap<(String, String), ThresholdPolicy>,
}

impl PolicyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a policy. An existing `(policy_id, version)` pair is never
    /// replaced.
    pub fn register(&mut self, policy: ThresholdPolicy) -> Result<()> {
        policy.validate()?;
        let key = (policy.policy_id.clone(), policy.version.clone());
        if self.policies.contains_key(&key) {
            return Err(Error::DuplicateVersion {
                policy_id: key.0,
                version: key.1,
            });
        }
        self.policies.insert(key, policy);
        Ok(())
    }

    pub fn get(&self, policy_id: &str, version: &str) -> Option<&ThresholdPolicy> {
        self.policies.get(&(policy_id.to_string(), version.to_string()))
    }

    pub fn lookup(&self, policy_id: &str, version: &str) -> Result<&ThresholdPolicy> {
        self.get(policy_id, version)
            .ok_or_else(|| Error::UnknownPolicyVersion {
                policy_id: policy_id.to_string(),
                version: version.to_string(),
            })
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ThresholdPolicy> {
        self.policies.values()
    }

    /// Loads every `*.json` file in `dir`, in file-name order.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().is_some_and(|ext| ext == "json") {
                paths.push(path);
            }
        }
        paths.sort();
        let mut registry = PolicyRegistry::new();
        for path in paths {
            registry.register(read_policy(&path)?)?;
        }
        Ok(registry)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MINIMAL: &str = r#"{"policy_id":"prod","version":"v1",
        "tau":{"YES":0.5,"NO":0.5,"TBD":0.0},"margin_min":null,"fallback":"TBD","aux_gates":[]}"#;

    #[test]
    fn minimal_document_loads() {
        let p = load_policy(MINIMAL).unwrap();
        assert_eq!(p.tau.yes, 0.5);
        assert_eq!(p.margin_min, None);
        assert!(p.aux_gates.is_empty());
    }

    #[test]
    fn optional_fields_may_be_omitted() {
        let doc = r#"{"policy_id":"p","version":"1","tau":{"YES":0,"NO":0,"TBD":0},"fallback":"TBD"}"#;
        assert!(load_policy(doc).is_ok());
    }

    #[test]
    fn out_of_range_tau() {
        let doc = MINIMAL.replace("\"YES\":0.5", "\"YES\":1.5");
        assert_eq!(load_policy(&doc).unwrap_err().code(), "RANGE_ERROR");
    }

    #[test]
    fn fallback_must_be_tbd() {
        let doc = MINIMAL.replace("\"fallback\":\"TBD\"", "\"fallback\":\"NO\"");
        assert_eq!(load_policy(&doc).unwrap_err().code(), "SCHEMA_ERROR");
    }

    #[test]
    fn missing_and_extra_fields() {
        let doc = MINIMAL.replace("\"version\":\"v1\",", "");
        assert_eq!(load_policy(&doc).unwrap_err().code(), "SCHEMA_ERROR");
        let doc = MINIMAL.replace("\"fallback\"", "\"owner\":\"ops\",\"fallback\"");
        assert_eq!(load_policy(&doc).unwrap_err().code(), "SCHEMA_ERROR");
        let doc = MINIMAL.replace("\"TBD\":0.0", "\"TBD\":0.0,\"MAYBE\":0.1");
        assert_eq!(load_policy(&doc).unwrap_err().code(), "SCHEMA_ERROR");
    }

    #[test]
    fn gate_bounds_checked() {
        let doc = MINIMAL.replace(
            "\"aux_gates\":[]",
            r#""aux_gates":[{"channel":"risk","comparator":">=","bound":1.2}]"#,
        );
        assert_eq!(load_policy(&doc).unwrap_err().code(), "RANGE_ERROR");
        let doc = MINIMAL.replace(
            "\"aux_gates\":[]",
            r#""aux_gates":[{"channel":"risk","comparator":">","bound":0.2}]"#,
        );
        assert_eq!(load_policy(&doc).unwrap_err().code(), "SCHEMA_ERROR");
    }

    #[test]
    fn registry_is_append_only() {
        let mut reg = PolicyRegistry::new();
        let v1 = load_policy(MINIMAL).unwrap();
        reg.register(v1.clone()).unwrap();
        assert_eq!(reg.get("prod", "v1"), Some(&v1));

        let mut changed = v1.clone();
        changed.tau.yes = 0.7;
        assert_eq!(reg.register(changed).unwrap_err().code(), "DUPLICATE_VERSION");
        assert_eq!(reg.get("prod", "v1"), Some(&v1));

        let mut v2 = v1.clone();
        v2.version = "v2".into();
        reg.register(v2.clone()).unwrap();
        assert_eq!(reg.get("prod", "v2"), Some(&v2));
        assert_eq!(reg.len(), 2);
        assert_eq!(reg.lookup("prod", "v3").unwrap_err().code(), "UNKNOWN_POLICY_VERSION");
    }

    #[test]
    fn registry_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.json"), MINIMAL).unwrap();
        std::fs::write(dir.path().join("b.json"), MINIMAL.replace("\"v1\"", "\"v2\"")).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let reg = PolicyRegistry::load_dir(dir.path()).unwrap();
        assert_eq!(reg.len(), 2);
    }

    fn unit() -> impl Strategy<Value = f64> {
        0.0..=1.0f64
    }

    proptest! {
        #[test]
        fn policy_json_round_trips(
            yes in unit(), no in unit(), tbd in unit(),
            margin in proptest::option::of(unit()),
            bound in unit(), at_least in any::<bool>(),
        ) {
            let gate = AuxGate {
                channel: "risk".into(),
                comparator: if at_least { Comparator::AtLeast } else { Comparator::AtMost },
                bound,
            };
            let p = ThresholdPolicy::new("p", "v", Thresholds { yes, no, tbd }, margin, vec![gate]).unwrap();
            let text = p.to_json();
            let back = load_policy(&text).unwrap();
            prop_assert_eq!(&back, &p);
            prop_assert_eq!(back.to_json(), text);
        }
    }
}
