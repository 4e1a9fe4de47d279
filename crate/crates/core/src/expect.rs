//! Expectation semantics and failure rates.
//!
//! * MFT: pass iff the predicted label is in the expected set.
//! * INV: fail iff the label changes **and** the score moves by more than
//!   the tolerance (default 0.1).
//! * DIR (monotonic): fail iff the score moves the forbidden way by more than
//!   the margin (default 0.1). DIR (target): fail iff the perturbed label is
//!   not the target.
//! * Relations: symmetry is INV between `(a, b)` and `(b, a)`; implication
//!   fails iff `ab` and `ac` are duplicates but `bc` is not.
//!
//! Score comparisons against a tolerance use a 1e-9 slack, so a difference
//! that is exactly the tolerance in decimal (e.g. 0.8 − 0.7) never counts as
//! exceeding it.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TOLERANCE: f64 = 0.1;
pub const DEFAULT_MARGIN: f64 = 0.1;
const SLACK: f64 = 1e-9;

pub const NEGATIVE: &str = "negative";
pub const NEUTRAL: &str = "neutral";
pub const POSITIVE: &str = "positive";
pub const DUPLICATE: &str = "duplicate";
pub const NON_DUPLICATE: &str = "non-duplicate";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExpectError {
    #[error("task mismatch: {0}")]
    TaskMismatch(String),
    #[error("expectation kind mismatch: expected {expected}, got {got}")]
    KindMismatch { expected: &'static str, got: &'static str },
    #[error("missing role `{0}`")]
    MissingRole(String),
    #[error("probability {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("no verdicts")]
    EmptyTest,
    #[error("invalid prediction: {0}")]
    InvalidPrediction(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Span,
}

/// Model output for one input.
///
/// For classification, `score` is the probability of the positive/primary
/// class (binary) or of the predicted class (multiclass); adapters must map
/// whatever the model emits into `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_text: Option<String>,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<BTreeMap<String, f64>>,
}

impl Prediction {
    pub fn label(label: impl Into<String>, score: f64) -> Self {
        Self { task: Task::Classification, label: Some(label.into()), answer_text: None, score, distribution: None }
    }

    pub fn span(answer: impl Into<String>, score: f64) -> Self {
        Self { task: Task::Span, label: None, answer_text: Some(answer.into()), score, distribution: None }
    }

    pub fn validate(&self) -> Result<(), ExpectError> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(ExpectError::InvalidPrediction(format!("score {} outside [0,1]", self.score)));
        }
        match self.task {
            Task::Classification if self.label.is_none() => {
                return Err(ExpectError::InvalidPrediction("classification prediction without label".into()))
            }
            Task::Span if self.answer_text.is_none() => {
                return Err(ExpectError::InvalidPrediction("span prediction without answer_text".into()))
            }
            _ => {}
        }
        if let Some(dist) = &self.distribution {
            let total: f64 = dist.values().sum();
            if (total - 1.0).abs() > 1e-6 {
                return Err(ExpectError::InvalidPrediction(format!("distribution sums to {total}")));
            }
            if let Some(label) = &self.label {
                if !dist.contains_key(label) {
                    return Err(ExpectError::InvalidPrediction(format!("label `{label}` not in distribution")));
                }
            }
        }
        Ok(())
    }

    /// Label (classification) or normalized answer (span) used for equality.
    pub fn outcome(&self) -> String {
        match self.task {
            Task::Classification => self.label.clone().unwrap_or_default(),
            Task::Span => normalize_answer(self.answer_text.as_deref().unwrap_or_default()),
        }
    }

    /// Raw label or answer text, for display.
    pub fn display_outcome(&self) -> &str {
        match self.task {
            Task::Classification => self.label.as_deref().unwrap_or_default(),
            Task::Span => self.answer_text.as_deref().unwrap_or_default(),
        }
    }
}

/// Lowercase, strip punctuation, drop leading articles, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered: String =
        s.to_lowercase().chars().map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' }).collect();
    let mut words: Vec<&str> = lowered.split_whitespace().collect();
    while matches!(words.first(), Some(&("a" | "an" | "the"))) {
        words.remove(0);
    }
    words.join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    MustNotIncrease,
    MustNotDecrease,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    Symmetry,
    Implication,
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

fn default_duplicate() -> String {
    DUPLICATE.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExpectationSpec {
    /// Expected labels may contain template slots (e.g. `{P2}`), rendered
    /// against each case's binding.
    Mft {
        expected_labels: Vec<String>,
    },
    Inv {
        #[serde(default = "default_tolerance")]
        tolerance: f64,
    },
    DirMonotonic {
        direction: Direction,
        #[serde(default = "default_margin")]
        margin: f64,
    },
    DirTarget {
        target_label: String,
    },
    Relation {
        relation: RelationKind,
        #[serde(default = "default_tolerance")]
        tolerance: f64,
        #[serde(default = "default_duplicate")]
        duplicate_label: String,
    },
}

impl ExpectationSpec {
    pub fn mft<I: IntoIterator<Item = S>, S: Into<String>>(labels: I) -> Self {
        Self::Mft { expected_labels: labels.into_iter().map(Into::into).collect() }
    }

    pub fn inv() -> Self {
        Self::Inv { tolerance: DEFAULT_TOLERANCE }
    }

    pub fn dir(direction: Direction) -> Self {
        Self::DirMonotonic { direction, margin: DEFAULT_MARGIN }
    }

    pub fn symmetry() -> Self {
        Self::Relation {
            relation: RelationKind::Symmetry,
            tolerance: DEFAULT_TOLERANCE,
            duplicate_label: default_duplicate(),
        }
    }

    pub fn implication() -> Self {
        Self::Relation {
            relation: RelationKind::Implication,
            tolerance: DEFAULT_TOLERANCE,
            duplicate_label: default_duplicate(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Mft { .. } => "mft",
            Self::Inv { .. } => "inv",
            Self::DirMonotonic { .. } => "dir_monotonic",
            Self::DirTarget { .. } => "dir_target",
            Self::Relation { .. } => "relation",
        }
    }

    /// Whether cases need a perturbed counterpart.
    pub fn needs_perturbation(&self) -> bool {
        matches!(self, Self::Inv { .. } | Self::DirMonotonic { .. } | Self::DirTarget { .. })
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            Self::Mft { expected_labels } if expected_labels.is_empty() => {
                Err("mft needs at least one expected label".into())
            }
            Self::Inv { tolerance: t } | Self::DirMonotonic { margin: t, .. } | Self::Relation { tolerance: t, .. }
                if !(t.is_finite() && *t >= 0.0) =>
            {
                Err(format!("tolerance/margin must be a nonnegative number, got {t}"))
            }
            _ => Ok(()),
        }
    }
}

/// Which rule produced a verdict, plus the values it looked at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictDetails {
    pub rule: String,
    pub labels: Vec<String>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseVerdict {
    pub case_id: usize,
    pub pass: bool,
    pub details: VerdictDetails,
}

fn verdict(case_id: usize, pass: bool, rule: impl Into<String>, preds: &[&Prediction]) -> CaseVerdict {
    CaseVerdict {
        case_id,
        pass,
        details: VerdictDetails {
            rule: rule.into(),
            labels: preds.iter().map(|p| p.display_outcome().to_string()).collect(),
            scores: preds.iter().map(|p| p.score).collect(),
        },
    }
}

fn same_task(a: &Prediction, b: &Prediction) -> Result<(), ExpectError> {
    if a.task != b.task {
        return Err(ExpectError::TaskMismatch(format!("{:?} vs {:?}", a.task, b.task)));
    }
    Ok(())
}

fn exceeds(diff: f64, bound: f64) -> bool {
    diff - bound > SLACK
}

pub fn eval_mft(case_id: usize, pred: &Prediction, spec: &ExpectationSpec) -> Result<CaseVerdict, ExpectError> {
    let ExpectationSpec::Mft { expected_labels } = spec else {
        return Err(ExpectError::KindMismatch { expected: "mft", got: spec.kind_name() });
    };
    eval_mft_labels(case_id, pred, expected_labels)
}

/// MFT against already-rendered expected labels.
pub fn eval_mft_labels(case_id: usize, pred: &Prediction, expected: &[String]) -> Result<CaseVerdict, ExpectError> {
    let outcome = pred.outcome();
    let pass = match pred.task {
        Task::Classification => expected.contains(&outcome),
        Task::Span => expected.iter().any(|l| normalize_answer(l) == outcome),
    };
    Ok(verdict(case_id, pass, format!("mft: expected one of [{}]", expected.join(", ")), &[pred]))
}

fn inv_fails(a: &Prediction, b: &Prediction, tolerance: f64) -> bool {
    a.outcome() != b.outcome() && exceeds((a.score - b.score).abs(), tolerance)
}

pub fn eval_inv(
    case_id: usize,
    orig: &Prediction,
    pert: &Prediction,
    spec: &ExpectationSpec,
) -> Result<CaseVerdict, ExpectError> {
    let ExpectationSpec::Inv { tolerance } = spec else {
        return Err(ExpectError::KindMismatch { expected: "inv", got: spec.kind_name() });
    };
    same_task(orig, pert)?;
    let pass = !inv_fails(orig, pert, *tolerance);
    Ok(verdict(case_id, pass, format!("inv: label change with |Δscore| > {tolerance}"), &[orig, pert]))
}

pub fn eval_dir(
    case_id: usize,
    orig: &Prediction,
    pert: &Prediction,
    spec: &ExpectationSpec,
) -> Result<CaseVerdict, ExpectError> {
    same_task(orig, pert)?;
    match spec {
        ExpectationSpec::DirMonotonic { direction, margin } => {
            let (pass, rule) = match direction {
                Direction::MustNotIncrease => {
                    (!exceeds(pert.score - orig.score, *margin), format!("dir: score must not increase by > {margin}"))
                }
                Direction::MustNotDecrease => {
                    (!exceeds(orig.score - pert.score, *margin), format!("dir: score must not decrease by > {margin}"))
                }
            };
            Ok(verdict(case_id, pass, rule, &[orig, pert]))
        }
        ExpectationSpec::DirTarget { target_label } => {
            let target = match pert.task {
                Task::Classification => target_label.clone(),
                Task::Span => normalize_answer(target_label),
            };
            let pass = pert.outcome() == target;
            Ok(verdict(case_id, pass, format!("dir: perturbed label must be {target_label}"), &[orig, pert]))
        }
        other => Err(ExpectError::KindMismatch { expected: "dir_monotonic|dir_target", got: other.kind_name() }),
    }
}

pub fn eval_relation(
    case_id: usize,
    preds: &BTreeMap<String, Prediction>,
    spec: &ExpectationSpec,
) -> Result<CaseVerdict, ExpectError> {
    let ExpectationSpec::Relation { relation, tolerance, duplicate_label } = spec else {
        return Err(ExpectError::KindMismatch { expected: "relation", got: spec.kind_name() });
    };
    let role = |r: &str| preds.get(r).ok_or_else(|| ExpectError::MissingRole(r.to_string()));
    match relation {
        RelationKind::Symmetry => {
            let (ab, ba) = (role("ab")?, role("ba")?);
            same_task(ab, ba)?;
            let pass = !inv_fails(ab, ba, *tolerance);
            Ok(verdict(case_id, pass, "symmetry: pred(a,b) = pred(b,a)", &[ab, ba]))
        }
        RelationKind::Implication => {
            let (ab, ac, bc) = (role("ab")?, role("ac")?, role("bc")?);
            let dup = |p: &Prediction| p.outcome() == *duplicate_label;
            let pass = !(dup(ab) && dup(ac) && !dup(bc));
            Ok(verdict(case_id, pass, "implication: (a=b) ∧ (a=c) ⇒ (b=c)", &[ab, ac, bc]))
        }
    }
}

/// Three-way sentiment label from the positive-class probability:
/// `≤ 1/3` negative, `(1/3, 2/3)` neutral, `≥ 2/3` positive.
pub fn neutral_band(prob_pos: f64) -> Result<&'static str, ExpectError> {
    if !(0.0..=1.0).contains(&prob_pos) {
        return Err(ExpectError::OutOfRange(prob_pos));
    }
    Ok(if prob_pos <= 1.0 / 3.0 {
        NEGATIVE
    } else if prob_pos < 2.0 / 3.0 {
        NEUTRAL
    } else {
        POSITIVE
    })
}

/// Failures over total, shown as a percentage with one decimal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRate {
    pub failed: usize,
    pub total: usize,
}

impl FailureRate {
    pub fn from_verdicts(verdicts: &[CaseVerdict]) -> Result<Self, ExpectError> {
        if verdicts.is_empty() {
            return Err(ExpectError::EmptyTest);
        }
        Ok(Self { failed: verdicts.iter().filter(|v| !v.pass).count(), total: verdicts.len() })
    }

    pub fn percent(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        100.0 * self.failed as f64 / self.total as f64
    }

    /// Percentage rounded to one decimal.
    pub fn rounded(&self) -> f64 {
        (self.percent() * 10.0).round() / 10.0
    }
}

impl fmt::Display for FailureRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}", self.rounded())
    }
}

/// `100 × fails / total`.
pub fn failure_rate(verdicts: &[CaseVerdict]) -> Result<f64, ExpectError> {
    FailureRate::from_verdicts(verdicts).map(|r| r.percent())
}
