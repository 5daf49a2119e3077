//! Template-based generator of premise/hypothesis pairs over boundary
//! categories. Every category fixes the gold label, unless label noise is
//! requested, in which case a marked fraction of golds is replaced.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decision::DecisionLabel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Category {
    EntailPlain,
    ContradictPlain,
    Negation,
    NumberSwap,
    RoleSwap,
    HighOverlapContradiction,
    LowOverlapSupport,
    HedgeModal,
    LongContext,
    Insufficient,
}

impl Category {
    pub const ALL: [Category; 10] = [
        Category::EntailPlain,
        Category::ContradictPlain,
        Category::Negation,
        Category::NumberSwap,
        Category::RoleSwap,
        Category::HighOverlapContradiction,
        Category::LowOverlapSupport,
        Category::HedgeModal,
        Category::LongContext,
        Category::Insufficient,
    ];

    pub fn gold(self) -> DecisionLabel {
        use Category::*;
        match self {
            EntailPlain | LowOverlapSupport | LongContext => DecisionLabel::Yes,
            ContradictPlain | Negation | RoleSwap | HighOverlapContradiction => DecisionLabel::No,
            NumberSwap | HedgeModal | Insufficient => DecisionLabel::Tbd,
        }
    }

    pub fn as_str(self) -> &'static str {
        use Category::*;
        match self {
            EntailPlain => "ENTAIL_PLAIN",
            ContradictPlain => "CONTRADICT_PLAIN",
            Negation => "NEGATION",
            NumberSwap => "NUMBER_SWAP",
            RoleSwap => "ROLE_SWAP",
            HighOverlapContradiction => "HIGH_OVERLAP_CONTRADICTION",
            LowOverlapSupport => "LOW_OVERLAP_SUPPORT",
            HedgeModal => "HEDGE_MODAL",
            LongContext => "LONG_CONTEXT",
            Insufficient => "INSUFFICIENT",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetExample {
    pub id: String,
    pub premise: String,
    pub hypothesis: String,
    pub gold: DecisionLabel,
    pub category: Category,
    /// Gold was deliberately replaced by label noise.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub noisy: bool,
}

impl DatasetExample {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.premise.trim().is_empty() || self.hypothesis.trim().is_empty() {
            return Err(Error::Schema(format!("example {:?} has empty fields", self.id)));
        }
        if (self.gold != self.category.gold()) != self.noisy {
            return Err(Error::Schema(format!(
                "example {:?}: category {} implies {}, found {}",
                self.id,
                self.category,
                self.category.gold(),
                self.gold
            )));
        }
        Ok(())
    }
}

/// Number of examples to draw per category.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub counts: BTreeMap<Category, usize>,
    /// Fraction of examples whose gold is swapped for one of the other two
    /// labels, in `[0, 0.5)`.
    #[serde(default)]
    pub label_noise: f64,
}

impl GenConfig {
    pub fn uniform(per_category: usize) -> Self {
        GenConfig {
            counts: Category::ALL.iter().map(|&c| (c, per_category)).collect(),
            label_noise: 0.0,
        }
    }

    /// Spreads `total` over all categories as evenly as possible.
    pub fn with_total(total: usize) -> Self {
        let n = Category::ALL.len();
        GenConfig {
            counts: Category::ALL
                .iter()
                .enumerate()
                .map(|(i, &c)| (c, total / n + usize::from(i < total % n)))
                .collect(),
            label_noise: 0.0,
        }
    }

    pub fn only(category: Category, count: usize) -> Self {
        GenConfig {
            counts: BTreeMap::from([(category, count)]),
            label_noise: 0.0,
        }
    }

    pub fn with_label_noise(self, label_noise: f64) -> Self {
        GenConfig { label_noise, ..self }
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

/// Draws examples, shuffles them and numbers them `s{seed}-{index}`.
pub fn generate(config: &GenConfig, seed: u64) -> Result<Vec<DatasetExample>> {
    if config.total() == 0 {
        return Err(Error::EmptyConfig);
    }
    if !(0.0..0.5).contains(&config.label_noise) {
        return Err(Error::Range(format!("label noise {} outside [0, 0.5)", config.label_noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drawn = Vec::with_capacity(config.total());
    for (&category, &count) in &config.counts {
        for _ in 0..count {
            let (premise, hypothesis) = render(category, &mut rng);
            drawn.push((category, premise, hypothesis));
        }
    }
    drawn.shuffle(&mut rng);
    let mut out = Vec::with_capacity(drawn.len());
    for (i, (category, premise, hypothesis)) in drawn.into_iter().enumerate() {
        let mut gold = category.gold();
        let noisy = config.label_noise > 0.0 && rng.gen_bool(config.label_noise);
        if noisy {
            let others: Vec<DecisionLabel> = DecisionLabel::ALL.into_iter().filter(|&l| l != gold).collect();
            gold = *pick(&mut rng, &others);
        }
        out.push(DatasetExample {
            id: format!("s{seed}-{i:06}"),
            premise,
            hypothesis,
            gold,
            category,
            noisy,
        });
    }
    Ok(out)
}

const SUBJECTS: &[&str] = &[
    "the manager",
    "the committee",
    "the director",
    "the board",
    "the auditor",
    "the supervisor",
    "the council",
    "the regional office",
    "the finance team",
    "the review panel",
];

/// (past, base, antonym past)
const ACTIONS: &[(&str, &str, &str)] = &[
    ("approved", "approve", "rejected"),
    ("accepted", "accept", "declined"),
    ("renewed", "renew", "cancelled"),
    ("confirmed", "confirm", "withdrew"),
    ("signed", "sign", "vetoed"),
    ("funded", "fund", "blocked"),
];

/// (object, low-overlap alias)
const OBJECTS: &[(&str, &str)] = &[
    ("the budget request", "the funding ask"),
    ("the travel claim", "that expense reimbursement"),
    ("the vendor contract", "the supplier agreement"),
    ("the hiring plan", "the recruitment proposal"),
    ("the expansion proposal", "plans to grow"),
    ("the loan application", "the credit request"),
    ("the lease renewal", "the rental extension"),
    ("the research grant", "the study funding"),
    ("the software purchase", "buying the new tool"),
];

/// (singular, plural)
const COUNTABLES: &[(&str, &str)] = &[
    ("new project", "new projects"),
    ("pending request", "pending requests"),
    ("vendor contract", "vendor contracts"),
    ("job opening", "job openings"),
    ("site visit", "site visits"),
    ("budget line", "budget lines"),
];

const WHEN: &[&str] = &[
    "on monday",
    "on friday",
    "last week",
    "this quarter",
    "yesterday",
    "in march",
    "after the meeting",
];

const PEOPLE: &[&str] = &[
    "the analyst",
    "the manager",
    "the director",
    "the intern",
    "the engineer",
    "the coordinator",
    "the treasurer",
];

const RELATIONS: &[&str] = &["reports to", "supervises", "outranks", "is the deputy of", "is senior to"];

const DEPARTMENTS: &[&str] = &["finance", "legal", "operations", "research", "sales"];

/// (premise qualifier, contradicting hypothesis qualifier)
const FLIPS: &[(&str, &str)] = &[
    ("before the deadline", "after the deadline"),
    ("in full", "only in part"),
    ("ahead of schedule", "behind schedule"),
    ("with no conditions", "with strict conditions"),
    ("for the whole year", "for only one month"),
];

const SUPPORT_PHRASES: &[&str] = &[
    "gave the green light to",
    "signed off on",
    "endorsed",
    "gave final clearance to",
];

const SUPPORT_HYPOTHESES: &[&str] = &["got approved", "received approval", "was cleared", "went ahead"];

const MODALS: &[&str] = &["may", "might", "could"];
const HEDGE_ADVERBS: &[&str] = &["possibly", "reportedly"];

/// (policy subject, clause, unestablished outcome)
const POLICY_CLAUSES: &[(&str, &str, &str)] = &[
    ("the policy", "expedited review", "the request is approved"),
    ("the policy", "a fee waiver", "the fee is waived"),
    ("the guideline", "remote work", "the employee works remotely"),
    ("the rule", "an extension", "the extension is granted"),
    ("the contract", "early termination", "the contract is terminated"),
];

const UNDECIDED_VERBS: &[&str] = &[
    "discussed",
    "received",
    "will review",
    "asked questions about",
    "is still considering",
    "postponed a decision on",
];

const FILLER: &[&str] = &[
    "the office was busy after the holiday break",
    "several staff members attended a training session",
    "the weather delayed a few deliveries",
    "a new coffee machine was installed in the lobby",
    "the quarterly newsletter was sent to all teams",
    "parking near the building was limited",
    "the cafeteria changed its opening hours",
    "two interns joined the analytics group",
];

fn pick<'a, T>(rng: &mut impl Rng, items: &'a [T]) -> &'a T {
    &items[rng.gen_range(0..items.len())]
}

fn render(category: Category, rng: &mut impl Rng) -> (String, String) {
    let s = *pick(rng, SUBJECTS);
    let &(past, base, antonym) = pick(rng, ACTIONS);
    let &(object, alias) = pick(rng, OBJECTS);
    let when = *pick(rng, WHEN);
    match category {
        Category::EntailPlain => {
            if rng.gen_bool(0.5) {
                (format!("{s} {past} {object} {when}"), format!("{s} {past} {object}"))
            } else {
                (format!("{s} {past} {object} {when}"), format!("{object} was {past} by {s}"))
            }
        }
        Category::ContradictPlain => (format!("{s} {past} {object} {when}"), format!("{s} {antonym} {object}")),
        Category::Negation => {
            if rng.gen_bool(0.5) {
                (format!("{s} {past} {object} {when}"), format!("{s} did not {base} {object}"))
            } else {
                (format!("{s} did not {base} {object} {when}"), format!("{s} {past} {object}"))
            }
        }
        Category::NumberSwap => {
            let &(one, all) = pick(rng, COUNTABLES);
            (format!("{s} {past} one {one} {when}"), format!("{s} {past} all {all} {when}"))
        }
        Category::RoleSwap => {
            let a = *pick(rng, PEOPLE);
            let b = loop {
                let b = *pick(rng, PEOPLE);
                if b != a {
                    break b;
                }
            };
            let rel = *pick(rng, RELATIONS);
            let dept = *pick(rng, DEPARTMENTS);
            (format!("{a} {rel} {b} in the {dept} department"), format!("{b} {rel} {a}"))
        }
        Category::HighOverlapContradiction => {
            let &(kept, flipped) = pick(rng, FLIPS);
            (format!("{s} {past} {object} {kept}"), format!("{s} {past} {object} {flipped}"))
        }
        Category::LowOverlapSupport => {
            let phrase = *pick(rng, SUPPORT_PHRASES);
            let outcome = *pick(rng, SUPPORT_HYPOTHESES);
            (format!("{s} {phrase} {object} {when}"), format!("{alias} {outcome}"))
        }
        Category::HedgeModal => match rng.gen_range(0..4) {
            0 => {
                let &(subject, clause, outcome) = pick(rng, POLICY_CLAUSES);
                hedged_policy(subject, pick(rng, MODALS), clause, outcome)
            }
            1 => (format!("{s} {} {base} {object} {when}", pick(rng, MODALS)), format!("{s} {past} {object}")),
            2 => (
                format!("{s} {} {past} {object} {when}", pick(rng, HEDGE_ADVERBS)),
                format!("{s} {past} {object}"),
            ),
            _ => (format!("maybe {s} {past} {object} {when}"), format!("{s} {past} {object}")),
        },
        Category::LongContext => {
            let n_filler = rng.gen_range(2..=4);
            let mut sentences: Vec<String> = FILLER
                .choose_multiple(rng, n_filler)
                .map(|f| f.to_string())
                .collect();
            let at = rng.gen_range(0..=sentences.len());
            sentences.insert(at, format!("{s} {past} {object} {when}"));
            (sentences.join(". "), format!("{s} {past} {object}"))
        }
        Category::Insufficient => {
            let verb = *pick(rng, UNDECIDED_VERBS);
            (format!("{s} {verb} {object} {when}"), format!("{s} {past} {object}"))
        }
    }
}

fn hedged_policy(subject: &str, modal: &str, clause: &str, outcome: &str) -> (String, String) {
    (format!("{subject} {modal} allow {clause} in limited cases"), outcome.to_string())
}
