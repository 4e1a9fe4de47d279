//! Deterministic in-process models for offline runs.
//!
//! * [`ToySentiment`]: `prob_pos = σ(p − n)` where `p`/`n` count tokens
//!   found in the bundled lexicon entries tagged `sentiment=pos`/`neg`. A
//!   `not` or `n't` among the three preceding tokens flips a word's polarity.
//!   The label comes from [`neutral_band`].
//! * [`ToyQqp`]: token-set Jaccard similarity of the two questions; the pair
//!   is `duplicate` when it reaches 0.8.
//! * [`ToyMc`]: answers with the first male first name in the context, else
//!   the first first name, else the first word. Deliberately biased.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::OnceLock;

use super::{ItemResult, ModelError, Predictor};
use crate::bundled;
use crate::expect::{neutral_band, Prediction, Task, DUPLICATE, NON_DUPLICATE};

pub(super) const TOY_VERSION: &str = "1";
const NEGATION_WINDOW: usize = 3;
const DUPLICATE_THRESHOLD: f64 = 0.8;
const MC_SCORE: f64 = 0.9;

fn polarity_words() -> &'static HashMap<String, i32> {
    static WORDS: OnceLock<HashMap<String, i32>> = OnceLock::new();
    WORDS.get_or_init(|| {
        let store = bundled::lexicons();
        let mut words = HashMap::new();
        for name in store.names() {
            for e in store.entries(name).unwrap_or_default() {
                let sign = match e.tags.get("sentiment") {
                    Some("pos") => 1,
                    Some("neg") => -1,
                    _ => continue,
                };
                if !e.text.contains(char::is_whitespace) {
                    words.insert(e.text.to_lowercase(), sign);
                }
            }
        }
        words
    })
}

/// Lowercased word tokens; `n't` is split off its host word.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.to_lowercase().split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '’')) {
        let word = raw.replace('’', "'");
        let word = word.trim_matches('\'');
        if word.is_empty() {
            continue;
        }
        match word.strip_suffix("n't") {
            Some(stem) if !stem.is_empty() => {
                out.push(stem.to_string());
                out.push("n't".to_string());
            }
            _ => out.push(word.to_string()),
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Counts of (positive, negative) sentiment hits after negation flips.
pub fn sentiment_counts(text: &str) -> (u32, u32) {
    let words = polarity_words();
    let tokens = tokenize(text);
    let (mut p, mut n) = (0, 0);
    for (i, tok) in tokens.iter().enumerate() {
        let Some(&sign) = words.get(tok) else { continue };
        let negated = tokens[i.saturating_sub(NEGATION_WINDOW)..i].iter().any(|t| t == "not" || t == "n't");
        if (sign > 0) != negated {
            p += 1;
        } else {
            n += 1;
        }
    }
    (p, n)
}

/// The toy sentiment model as a plain function.
pub fn toy_model(text: &str) -> Prediction {
    let (p, n) = sentiment_counts(text);
    let prob = sigmoid(f64::from(p) - f64::from(n));
    Prediction::label(neutral_band(prob).expect("sigmoid is in [0, 1]"), prob)
}

fn single(inputs: &[Vec<String>], f: impl Fn(&[String]) -> Result<Prediction, String>) -> Vec<ItemResult> {
    inputs
        .iter()
        .enumerate()
        .map(|(index, t)| f(t).map_err(|message| ModelError::MalformedPrediction { index, message }))
        .collect()
}

#[derive(Debug, Clone)]
pub struct ToySentiment {
    fingerprint: String,
}

impl ToySentiment {
    pub fn new(fingerprint: impl Into<String>) -> Self {
        Self { fingerprint: fingerprint.into() }
    }
}

impl Predictor for ToySentiment {
    fn task(&self) -> Task {
        Task::Classification
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn predict(&self, inputs: &[Vec<String>]) -> Result<Vec<ItemResult>, ModelError> {
        Ok(single(inputs, |t| match t {
            [text] => Ok(toy_model(text)),
            _ => Err(format!("sentiment model takes 1 text, got {}", t.len())),
        }))
    }
}

/// Token-set Jaccard similarity (1.0 for two empty texts).
pub fn jaccard(a: &str, b: &str) -> f64 {
    let a: BTreeSet<String> = tokenize(a).into_iter().collect();
    let b: BTreeSet<String> = tokenize(b).into_iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

#[derive(Debug, Clone)]
pub struct ToyQqp {
    fingerprint: String,
}

impl ToyQqp {
    pub fn new(fingerprint: impl Into<String>) -> Self {
        Self { fingerprint: fingerprint.into() }
    }
}

impl Predictor for ToyQqp {
    fn task(&self) -> Task {
        Task::Classification
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn predict(&self, inputs: &[Vec<String>]) -> Result<Vec<ItemResult>, ModelError> {
        Ok(single(inputs, |t| match t {
            [a, b] => {
                let s = jaccard(a, b);
                let label = if s >= DUPLICATE_THRESHOLD { DUPLICATE } else { NON_DUPLICATE };
                Ok(Prediction::label(label, s))
            }
            _ => Err(format!("qqp model takes 2 texts, got {}", t.len())),
        }))
    }
}

fn first_names() -> &'static (HashSet<String>, HashSet<String>) {
    static NAMES: OnceLock<(HashSet<String>, HashSet<String>)> = OnceLock::new();
    NAMES.get_or_init(|| {
        let mut all = HashSet::new();
        let mut male = HashSet::new();
        for e in bundled::lexicons().entries("first_name").unwrap_or_default() {
            all.insert(e.text.clone());
            if e.tags.get("gender") == Some("male") {
                male.insert(e.text.clone());
            }
        }
        (all, male)
    })
}

#[derive(Debug, Clone)]
pub struct ToyMc {
    fingerprint: String,
}

impl ToyMc {
    pub fn new(fingerprint: impl Into<String>) -> Self {
        Self { fingerprint: fingerprint.into() }
    }

    pub fn answer(context: &str) -> String {
        let (all, male) = first_names();
        let words: Vec<&str> = context.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
        words
            .iter()
            .find(|w| male.contains(**w))
            .or_else(|| words.iter().find(|w| all.contains(**w)))
            .or_else(|| words.first())
            .map(|w| w.to_string())
            .unwrap_or_default()
    }
}

impl Predictor for ToyMc {
    fn task(&self) -> Task {
        Task::Span
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn predict(&self, inputs: &[Vec<String>]) -> Result<Vec<ItemResult>, ModelError> {
        Ok(single(inputs, |t| match t {
            [context, _question] => Ok(Prediction::span(Self::answer(context), MC_SCORE)),
            _ => Err(format!("mc model takes (context, question), got {} texts", t.len())),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_splits_negation() {
        assert_eq!(tokenize("I didn't love it."), ["i", "did", "n't", "love", "it"]);
        assert_eq!(tokenize("can’t"), ["ca", "n't"]);
        assert_eq!(tokenize("'quoted'"), ["quoted"]);
    }

    #[test]
    fn sentiment_examples() {
        let p = toy_model("I love the flight.");
        assert_eq!(p.label.as_deref(), Some("positive"));
        assert_eq!(p.score, sigmoid(1.0));
        let p = toy_model("");
        assert_eq!((p.label.as_deref(), p.score), (Some("neutral"), 0.5));
        assert_eq!(sentiment_counts("The food is not poor."), (1, 0));
        assert_eq!(toy_model("The food is not poor.").label.as_deref(), Some("positive"));
        assert_eq!(toy_model("The company is Australian.").label.as_deref(), Some("neutral"));
        assert_eq!(toy_model("I didn't love the food.").label.as_deref(), Some("negative"));
        // negation only reaches three tokens back
        assert_eq!(sentiment_counts("not that it was really good"), (1, 0));
        assert_eq!(sentiment_counts("not it was good"), (0, 1));
    }

    #[test]
    fn qqp_and_mc() {
        assert_eq!(jaccard("How can I become a doctor?", "how can i become a doctor"), 1.0);
        assert_eq!(jaccard("", ""), 1.0);
        assert_eq!(ToyMc::answer("Sharon is not a doctor, John is."), "John");
        assert_eq!(ToyMc::answer("Sharon is a doctor, Hillary is not."), "Sharon");
    }
}
