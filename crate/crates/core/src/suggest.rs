//! Masked fill-in suggestions and triage into lexicons.
//!
//! A [`MaskQuery`] is a template with exactly one `{mask}` slot. Providers
//! return scored candidates; [`suggest()`] sorts them (score descending, ties
//! by text), drops anything the user rejected before for the same template,
//! and truncates to `top_k`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{LexiconEntry, LexiconStore, Tags};
use crate::template::{parse_template, Segment, MASK_SLOT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SuggestError {
    #[error("malformed query: {0}")]
    MalformedQuery(String),
    #[error("suggestion provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("missing lexicon `{0}`")]
    MissingLexicon(String),
    #[error("`{0}` was not among the suggestions")]
    NotSuggested(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskQuery {
    pub template: String,
    pub top_k: usize,
}

impl MaskQuery {
    pub fn new(template: impl Into<String>, top_k: usize) -> Result<Self, SuggestError> {
        let q = Self { template: template.into(), top_k };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), SuggestError> {
        if self.top_k == 0 {
            return Err(SuggestError::MalformedQuery("top_k must be at least 1".into()));
        }
        let ast = parse_template(&self.template).map_err(|e| SuggestError::MalformedQuery(e.to_string()))?;
        let masks = ast.slots().filter(|s| s.name == MASK_SLOT).count();
        if masks != 1 {
            return Err(SuggestError::MalformedQuery(format!("expected exactly one {{mask}}, found {masks}")));
        }
        Ok(())
    }

    /// Words immediately before and after the mask, lowercased.
    fn context(&self) -> (Option<String>, Option<String>) {
        let Ok(ast) = parse_template(&self.template) else { return (None, None) };
        let pos = ast
            .segments
            .iter()
            .position(|s| matches!(s, Segment::Slot(slot) if slot.name == MASK_SLOT))
            .expect("validated");
        let literal = |i: Option<usize>| match i.and_then(|i| ast.segments.get(i)) {
            Some(Segment::Literal(t)) => t.clone(),
            _ => String::new(),
        };
        let before = literal(pos.checked_sub(1));
        let after = literal(Some(pos + 1));
        let word = |s: &str, last: bool| {
            let mut words = s.split_whitespace();
            let w = if last { words.next_back() } else { words.next() };
            w.map(|w| w.to_lowercase())
        };
        // punctuation directly after the mask means no following word
        let next = if after.starts_with(char::is_whitespace) { word(&after, false) } else { None };
        (word(&before, true), next)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub text: String,
    pub score: f64,
}

/// Source of raw, unsorted candidates.
pub trait SuggestionProvider: Send + Sync {
    fn candidates(&self, query: &MaskQuery) -> Result<Vec<Suggestion>, SuggestError>;
}

/// Score descending; equal scores ordered by text.
pub fn sort_suggestions(list: &mut [Suggestion]) {
    list.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.text.cmp(&b.text)));
}

/// Suppression key that applies to every template.
pub const ANY_TEMPLATE: &str = "";

/// Rejected suggestions, keyed by template text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SuppressionList(BTreeMap<String, BTreeSet<String>>);

impl SuppressionList {
    pub fn add(&mut self, template: &str, text: &str) {
        self.0.entry(template.to_string()).or_default().insert(text.to_string());
    }

    pub fn contains(&self, template: &str, text: &str) -> bool {
        self.0.get(template).is_some_and(|s| s.contains(text))
    }

    /// Suppressed for this template or for every template.
    pub fn suppresses(&self, template: &str, text: &str) -> bool {
        self.contains(template, text) || self.contains(ANY_TEMPLATE, text)
    }

    pub fn merge(&mut self, other: &SuppressionList) {
        for (t, texts) in &other.0 {
            self.0.entry(t.clone()).or_default().extend(texts.iter().cloned());
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0.values().all(BTreeSet::is_empty)
    }

    pub fn for_template(&self, template: &str) -> Vec<String> {
        self.0.get(template).map(|s| s.iter().cloned().collect()).unwrap_or_default()
    }
}

/// Calls a provider and applies sorting, suppression and truncation.
pub fn suggest(
    provider: &dyn SuggestionProvider,
    query: &MaskQuery,
    suppressed: &SuppressionList,
) -> Result<Vec<Suggestion>, SuggestError> {
    query.validate()?;
    let mut list = provider.candidates(query)?;
    if let Some(bad) = list.iter().find(|s| !(0.0..=1.0).contains(&s.score)) {
        return Err(SuggestError::MalformedResponse(format!("score {} for `{}` outside [0,1]", bad.score, bad.text)));
    }
    list.retain(|s| !suppressed.contains(&query.template, &s.text));
    sort_suggestions(&mut list);
    let mut seen = BTreeSet::new();
    list.retain(|s| seen.insert(s.text.clone()));
    list.truncate(query.top_k);
    Ok(list)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PartOfSpeech {
    Verb,
    Adjective,
    Noun,
}

const DETERMINERS: &[&str] =
    &["the", "a", "an", "this", "that", "my", "your", "our", "their", "his", "her", "its", "these", "those"];
const COPULAS: &[&str] = &["is", "was", "are", "were", "be", "been", "very", "so", "too"];

fn is_bundled_adjective(word: &str) -> bool {
    let store = crate::bundled::lexicons();
    ["pos_adj", "neg_adj", "neutral_adj"]
        .iter()
        .filter_map(|name| store.entries(name))
        .flatten()
        .any(|e| e.text.eq_ignore_ascii_case(word))
}

/// Guesses the part of speech a mask stands for from its neighbours.
pub fn guess_pos(query: &MaskQuery) -> PartOfSpeech {
    let (prev, next) = query.context();
    let is_det = |w: &Option<String>| w.as_deref().is_some_and(|w| DETERMINERS.contains(&w));
    if is_det(&next) {
        PartOfSpeech::Verb
    } else if is_det(&prev) {
        if next.is_some() {
            PartOfSpeech::Adjective
        } else {
            PartOfSpeech::Noun
        }
    } else if prev.as_deref().is_some_and(|p| COPULAS.contains(&p)) {
        PartOfSpeech::Adjective
    } else if next.is_none() && prev.as_deref().is_some_and(is_bundled_adjective) {
        PartOfSpeech::Noun
    } else {
        PartOfSpeech::Verb
    }
}

/// Offline provider backed by the bundled part-of-speech table. Scores are
/// fixed values from the table.
#[derive(Debug, Clone)]
pub struct StubProvider {
    table: BTreeMap<PartOfSpeech, Vec<Suggestion>>,
}

impl Default for StubProvider {
    fn default() -> Self {
        static TABLE: OnceLock<BTreeMap<PartOfSpeech, Vec<Suggestion>>> = OnceLock::new();
        let table = TABLE
            .get_or_init(|| {
                let store = LexiconStore::parse(crate::bundled::MASK_TABLE).expect("bundled mask table parses");
                [("verb", PartOfSpeech::Verb), ("adj", PartOfSpeech::Adjective), ("noun", PartOfSpeech::Noun)]
                    .into_iter()
                    .map(|(name, pos)| {
                        let list = store
                            .entries(name)
                            .unwrap_or_default()
                            .iter()
                            .map(|e| Suggestion {
                                text: e.text.clone(),
                                score: e.tags.get("score").and_then(|s| s.parse().ok()).unwrap_or(0.0),
                            })
                            .collect();
                        (pos, list)
                    })
                    .collect()
            })
            .clone();
        Self { table }
    }
}

impl SuggestionProvider for StubProvider {
    fn candidates(&self, query: &MaskQuery) -> Result<Vec<Suggestion>, SuggestError> {
        Ok(self.table.get(&guess_pos(query)).cloned().unwrap_or_default())
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    template: &'a str,
    top_k: usize,
}

#[derive(Deserialize)]
struct WireResponse {
    suggestions: Vec<Suggestion>,
}

/// Adapter for a user-run masked-LM server speaking
/// `POST {template, top_k}` → `{suggestions: [{text, score}]}`.
#[derive(Debug, Clone)]
pub struct RemoteProvider {
    pub url: String,
    pub timeout: Duration,
}

impl RemoteProvider {
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into(), timeout: Duration::from_secs(30) }
    }
}

impl SuggestionProvider for RemoteProvider {
    fn candidates(&self, query: &MaskQuery) -> Result<Vec<Suggestion>, SuggestError> {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        let body = serde_json::to_string(&WireRequest { template: &query.template, top_k: query.top_k })
            .expect("request serializes");
        let mut resp = agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| SuggestError::ProviderUnavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(SuggestError::ProviderUnavailable(format!("HTTP {}", resp.status())));
        }
        let text = resp.body_mut().read_to_string().map_err(|e| SuggestError::MalformedResponse(e.to_string()))?;
        let parsed: WireResponse =
            serde_json::from_str(&text).map_err(|e| SuggestError::MalformedResponse(e.to_string()))?;
        Ok(parsed.suggestions)
    }
}

/// What to do with one suggestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum TriageDecision {
    Accept {
        lexicon: String,
        #[serde(default, skip_serializing_if = "Tags::is_empty")]
        tags: Tags,
    },
    Reject,
}

/// Entries to append to a store.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreDelta {
    pub appends: Vec<(String, LexiconEntry)>,
}

impl StoreDelta {
    pub fn is_empty(&self) -> bool {
        self.appends.is_empty()
    }

    /// New store with the appends applied. Entries already present are
    /// skipped, so applying a delta twice equals applying it once.
    pub fn apply(&self, store: &LexiconStore) -> LexiconStore {
        let mut out = store.clone();
        for (name, entry) in &self.appends {
            out.append(name, entry.clone());
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriageOutcome {
    pub delta: StoreDelta,
    pub suppressed: SuppressionList,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TriageOptions {
    pub auto_create: bool,
}

/// Turns per-suggestion decisions into a store delta and a suppression list.
///
/// Decisions are applied in suggestion order so the delta is deterministic.
pub fn triage(
    store: &LexiconStore,
    template: &str,
    suggestions: &[Suggestion],
    decisions: &BTreeMap<String, TriageDecision>,
    opts: TriageOptions,
) -> Result<TriageOutcome, SuggestError> {
    if let Some(stray) = decisions.keys().find(|t| !suggestions.iter().any(|s| &s.text == *t)) {
        return Err(SuggestError::NotSuggested(stray.clone()));
    }
    let mut out = TriageOutcome::default();
    for s in suggestions {
        match decisions.get(&s.text) {
            Some(TriageDecision::Accept { lexicon, tags }) => {
                if !opts.auto_create && !store.contains(lexicon) {
                    return Err(SuggestError::MissingLexicon(lexicon.clone()));
                }
                out.delta.appends.push((lexicon.clone(), LexiconEntry::tagged(s.text.clone(), tags.clone())));
            }
            Some(TriageDecision::Reject) => out.suppressed.add(template, &s.text),
            None => {}
        }
    }
    Ok(out)
}
