//! General-purpose text perturbations with replayable deltas.
//!
//! Every perturbation returns the new text together with a [`Delta`]: the
//! list of byte-range edits that turns the original into the variant.
//! [`Delta::apply`] replays it and [`Delta::inverse`] undoes it.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{LexiconEntry, LexiconStore};
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PerturbError {
    #[error("no adjacent in-word character pair to swap")]
    NoSwapSite,
    #[error("no {0} entity found")]
    NoEntityFound(EntityKind),
    #[error("no replacement available for `{0}`")]
    NoReplacement(String),
    #[error("phrase must be nonempty")]
    EmptyPhrase,
    #[error("n_swaps must be at least 1")]
    ZeroSwaps,
    #[error("perturbation does not apply to this input")]
    NotApplicable,
    #[error("field {0} out of range")]
    FieldOutOfRange(usize),
    #[error("delta does not match text at byte {0}")]
    DeltaMismatch(usize),
    #[error("missing lexicon `{0}`")]
    MissingLexicon(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    TypoSwap,
    Contraction,
    NameChange,
    LocationChange,
    AddUrlHandle,
    AddPhrase,
}

/// Replace `old` at bytes `start..end` of the original with `new`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub start: usize,
    pub end: usize,
    pub old: String,
    pub new: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delta {
    pub kind: PerturbationKind,
    /// Non-overlapping, sorted by `start`.
    pub edits: Vec<Edit>,
}

impl Delta {
    fn new(kind: PerturbationKind, mut edits: Vec<Edit>) -> Self {
        edits.sort_by_key(|e| e.start);
        Self { kind, edits }
    }

    pub fn apply(&self, original: &str) -> Result<String, PerturbError> {
        let mut out = String::with_capacity(original.len());
        let mut cursor = 0;
        for e in &self.edits {
            if e.start < cursor || original.get(e.start..e.end) != Some(e.old.as_str()) {
                return Err(PerturbError::DeltaMismatch(e.start));
            }
            out.push_str(&original[cursor..e.start]);
            out.push_str(&e.new);
            cursor = e.end;
        }
        out.push_str(&original[cursor..]);
        Ok(out)
    }

    /// Delta taking the variant back to the original.
    pub fn inverse(&self) -> Delta {
        let mut shift: isize = 0;
        let edits = self
            .edits
            .iter()
            .map(|e| {
                let start = (e.start as isize + shift) as usize;
                shift += e.new.len() as isize - e.old.len() as isize;
                Edit { start, end: start + e.new.len(), old: e.new.clone(), new: e.old.clone() }
            })
            .collect();
        Delta { kind: self.kind, edits }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbedVariant {
    pub text: String,
    pub delta: Delta,
}

impl PerturbedVariant {
    fn from_edits(original: &str, kind: PerturbationKind, edits: Vec<Edit>) -> Self {
        let delta = Delta::new(kind, edits);
        let text = delta.apply(original).expect("edits built from the original");
        Self { text, delta }
    }
}

/// Delta applied to one field of a text tuple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDelta {
    pub field: usize,
    pub delta: Delta,
}

/// Perturbed text tuple; fields without a delta are unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TupleVariant {
    pub texts: Vec<String>,
    pub deltas: Vec<FieldDelta>,
}

// ---------------------------------------------------------------------------
// typos

/// Candidate swap sites as (byte offset of first char, first char, second char).
fn swap_sites(text: &str) -> Vec<(usize, char, char)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sites = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].1.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].1.is_whitespace() {
            i += 1;
        }
        let word = &chars[start..i];
        // the only pair of a two-letter word touches its first character
        if word.len() < 3 {
            continue;
        }
        for pair in word.windows(2) {
            if pair[0].1 != pair[1].1 {
                sites.push((pair[0].0, pair[0].1, pair[1].1));
            }
        }
    }
    sites
}

/// One variant with `n_swaps` non-overlapping adjacent transpositions, each
/// inside a word.
///
/// ```
/// use nlpcheck::perturb::typo_swap;
/// assert_eq!(typo_swap("@SouthwestAir no thanks", 1, 48).unwrap()[0].text, "@SouthwestAir no thakns");
/// assert_eq!(typo_swap("@JetBlue I cri", 1, 11).unwrap()[0].text, "@JeBtlue I cri");
/// ```
pub fn typo_swap(text: &str, n_swaps: usize, seed: u64) -> Result<Vec<PerturbedVariant>, PerturbError> {
    typo_swap_n(text, n_swaps, 1, seed)
}

pub fn typo_swap_n(
    text: &str,
    n_swaps: usize,
    n_variants: usize,
    seed: u64,
) -> Result<Vec<PerturbedVariant>, PerturbError> {
    if n_swaps == 0 {
        return Err(PerturbError::ZeroSwaps);
    }
    let sites = swap_sites(text);
    (0..n_variants as u64)
        .map(|v| {
            let mut rng = seed::rng(seed::derive(seed, v));
            let mut available = sites.clone();
            let mut edits = Vec::with_capacity(n_swaps);
            for _ in 0..n_swaps {
                if available.is_empty() {
                    return Err(PerturbError::NoSwapSite);
                }
                let (at, a, b) = available[rng.gen_range(0..available.len())];
                let end = at + a.len_utf8() + b.len_utf8();
                available.retain(|&(s, x, y)| s + x.len_utf8() + y.len_utf8() <= at || s >= end);
                edits.push(Edit { start: at, end, old: format!("{a}{b}"), new: format!("{b}{a}") });
            }
            Ok(PerturbedVariant::from_edits(text, PerturbationKind::TypoSwap, edits))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// contractions

const CONTRACTIONS: &[(&str, &str)] = &[
    ("is not", "isn't"),
    ("are not", "aren't"),
    ("was not", "wasn't"),
    ("were not", "weren't"),
    ("do not", "don't"),
    ("does not", "doesn't"),
    ("did not", "didn't"),
    ("have not", "haven't"),
    ("has not", "hasn't"),
    ("had not", "hadn't"),
    ("would not", "wouldn't"),
    ("could not", "couldn't"),
    ("should not", "shouldn't"),
    ("must not", "mustn't"),
    ("will not", "won't"),
    ("cannot", "can't"),
    ("it is", "it's"),
    ("that is", "that's"),
    ("what is", "what's"),
    ("there is", "there's"),
    ("who is", "who's"),
    ("where is", "where's"),
    ("i am", "i'm"),
    ("you are", "you're"),
    ("we are", "we're"),
    ("they are", "they're"),
    ("i have", "i've"),
    ("you have", "you've"),
    ("we have", "we've"),
    ("they have", "they've"),
    ("i will", "i'll"),
    ("you will", "you'll"),
    ("we will", "we'll"),
    ("they will", "they'll"),
    ("i would", "i'd"),
    ("you would", "you'd"),
    ("let us", "let's"),
];

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\''
}

fn at_boundary(text: &str, start: usize, end: usize) -> bool {
    let before = text[..start].chars().next_back().is_none_or(|c| !is_word_char(c));
    let after = text[end..].chars().next().is_none_or(|c| !is_word_char(c));
    before && after
}

/// Copies the case of `matched` onto `replacement`: `I` stays upper-case,
/// otherwise the first letter follows the match.
fn match_case(matched: &str, replacement: &str) -> String {
    let mut out = String::with_capacity(replacement.len());
    let upper_first = matched.chars().next().is_some_and(char::is_uppercase);
    for (i, word) in replacement.split(' ').enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let mut chars = word.chars();
        let first = chars.next();
        let cap = (i == 0 && upper_first) || word == "i" || word.starts_with("i'");
        if let Some(f) = first {
            if cap {
                out.extend(f.to_uppercase());
            } else {
                out.push(f);
            }
            out.extend(chars);
        }
    }
    out
}

fn replace_table(text: &str, pairs: impl Iterator<Item = (&'static str, &'static str)> + Clone) -> Vec<Edit> {
    let mut edits = Vec::new();
    let mut i = 0;
    while i < text.len() {
        let rest = &text[i..];
        let hit = pairs
            .clone()
            .filter(|(from, _)| {
                rest.len() >= from.len()
                    && rest.is_char_boundary(from.len())
                    && rest[..from.len()].eq_ignore_ascii_case(from)
            })
            .filter(|(from, _)| at_boundary(text, i, i + from.len()))
            .max_by_key(|(from, _)| from.len());
        match hit {
            Some((from, to)) => {
                let old = &text[i..i + from.len()];
                edits.push(Edit { start: i, end: i + from.len(), old: old.to_string(), new: match_case(old, to) });
                i += from.len();
            }
            None => i += rest.chars().next().map_or(1, char::len_utf8),
        }
    }
    edits
}

/// Expands every contraction, and contracts every expandable pair, yielding
/// up to two variants (expansion first). No table hit, no variant.
pub fn contraction_variants(text: &str) -> Vec<PerturbedVariant> {
    let expand = replace_table(text, CONTRACTIONS.iter().map(|&(long, short)| (short, long)));
    let contract = replace_table(text, CONTRACTIONS.iter().copied());
    [expand, contract]
        .into_iter()
        .filter(|e| !e.is_empty())
        .map(|edits| PerturbedVariant::from_edits(text, PerturbationKind::Contraction, edits))
        .filter(|v| v.text != text)
        .collect()
}

// ---------------------------------------------------------------------------
// entities

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    PersonName,
    Location,
}

impl std::fmt::Display for EntityKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EntityKind::PersonName => "person name",
            EntityKind::Location => "location",
        })
    }
}

const FIRST_NAME: &str = "first_name";
const LAST_NAME: &str = "last_name";
const CITY: &str = "city";
const COUNTRY: &str = "country";

#[derive(Debug, Clone, PartialEq, Eq)]
enum EntityClass {
    /// First name; index into `first_name`.
    First(usize),
    /// First and last name.
    Full(usize),
    City,
    Country,
}

#[derive(Debug, Clone)]
struct EntityMatch {
    start: usize,
    end: usize,
    text: String,
    class: EntityClass,
}

fn longest_at<'a>(text: &str, at: usize, entries: &'a [LexiconEntry]) -> Option<(usize, &'a LexiconEntry)> {
    let rest = &text[at..];
    entries
        .iter()
        .enumerate()
        .filter(|(_, e)| rest.starts_with(e.text.as_str()) && at_boundary(text, at, at + e.text.len()))
        .max_by_key(|(i, e)| (e.text.len(), std::cmp::Reverse(*i)))
}

fn lexicon<'a>(store: &'a LexiconStore, name: &str) -> Result<&'a [LexiconEntry], PerturbError> {
    store.entries(name).ok_or_else(|| PerturbError::MissingLexicon(name.to_string()))
}

fn find_entities(text: &str, kind: EntityKind, store: &LexiconStore) -> Result<Vec<EntityMatch>, PerturbError> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < text.len() {
        let word_start = text[..i].chars().next_back().is_none_or(|c| !is_word_char(c));
        let found = if !word_start {
            None
        } else {
            match kind {
                EntityKind::PersonName => longest_at(text, i, lexicon(store, FIRST_NAME)?).map(|(fi, first)| {
                    let after_first = i + first.text.len();
                    let last = text[after_first..]
                        .strip_prefix(' ')
                        .and_then(|_| longest_at(text, after_first + 1, lexicon(store, LAST_NAME).ok()?));
                    match last {
                        Some((_, l)) => (after_first + 1 + l.text.len(), EntityClass::Full(fi)),
                        None => (after_first, EntityClass::First(fi)),
                    }
                }),
                EntityKind::Location => {
                    let city =
                        longest_at(text, i, lexicon(store, CITY)?).map(|(_, e)| (i + e.text.len(), EntityClass::City));
                    let country = longest_at(text, i, lexicon(store, COUNTRY)?)
                        .map(|(_, e)| (i + e.text.len(), EntityClass::Country));
                    match (city, country) {
                        (Some(c), Some(k)) => Some(if k.0 > c.0 { k } else { c }),
                        (c, k) => c.or(k),
                    }
                }
            }
        };
        match found {
            Some((end, class)) => {
                out.push(EntityMatch { start: i, end, text: text[i..end].to_string(), class });
                i = end;
            }
            None => i += text[i..].chars().next().map_or(1, char::len_utf8),
        }
    }
    Ok(out)
}

fn draw_replacement(
    m: &EntityMatch,
    store: &LexiconStore,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<String, PerturbError> {
    let pick = |name: &str, rng: &mut rand_chacha::ChaCha8Rng, keep: &dyn Fn(&LexiconEntry) -> bool| {
        let pool: Vec<&LexiconEntry> = lexicon(store, name)?.iter().filter(|e| keep(e)).collect();
        pool.choose(rng).map(|e| e.text.clone()).ok_or_else(|| PerturbError::NoReplacement(m.text.clone()))
    };
    let same_gender = |fi: usize| {
        let gender =
            store.entries(FIRST_NAME).and_then(|l| l.get(fi)).and_then(|e| e.tags.get("gender")).map(str::to_string);
        move |e: &LexiconEntry| gender.is_none() || e.tags.get("gender") == gender.as_deref()
    };
    match &m.class {
        EntityClass::First(fi) => {
            let g = same_gender(*fi);
            pick(FIRST_NAME, rng, &|e| e.text != m.text && g(e))
        }
        EntityClass::Full(fi) => {
            let g = same_gender(*fi);
            let (orig_first, orig_last) = m.text.split_once(' ').unwrap_or((&m.text, ""));
            let first = pick(FIRST_NAME, rng, &|e| e.text != orig_first && g(e))?;
            let last = pick(LAST_NAME, rng, &|e| e.text != orig_last)?;
            Ok(format!("{first} {last}"))
        }
        EntityClass::City => pick(CITY, rng, &|e| e.text != m.text),
        EntityClass::Country => pick(COUNTRY, rng, &|e| e.text != m.text),
    }
}

/// Replaces every occurrence of one recognised entity with a seeded draw
/// from the same lexicon.
pub fn entity_change(
    text: &str,
    kind: EntityKind,
    store: &LexiconStore,
    seed: u64,
) -> Result<Vec<PerturbedVariant>, PerturbError> {
    let v = entity_change_fields(&[text.to_string()], &[0], kind, store, seed)?;
    let delta = v.deltas.into_iter().next().expect("one field").delta;
    Ok(vec![PerturbedVariant { text: v.texts.into_iter().next().expect("one field"), delta }])
}

/// Field-aware entity change over a text tuple.
///
/// The entity is chosen among those present in every field listed in
/// `fields`, and replaced in those fields only: listing both questions of a
/// pair changes the same name in both, listing one changes it in one.
pub fn entity_change_fields(
    texts: &[String],
    fields: &[usize],
    kind: EntityKind,
    store: &LexiconStore,
    seed: u64,
) -> Result<TupleVariant, PerturbError> {
    if let Some(&bad) = fields.iter().find(|&&f| f >= texts.len()) {
        return Err(PerturbError::FieldOutOfRange(bad));
    }
    let per_field: Vec<Vec<EntityMatch>> =
        fields.iter().map(|&f| find_entities(&texts[f], kind, store)).collect::<Result<_, _>>()?;
    let mut candidates: Vec<&EntityMatch> = Vec::new();
    for m in per_field.first().into_iter().flatten() {
        let everywhere = per_field.iter().all(|ms| ms.iter().any(|o| o.text == m.text && o.class == m.class));
        if everywhere && !candidates.iter().any(|c| c.text == m.text) {
            candidates.push(m);
        }
    }
    if candidates.is_empty() {
        return Err(PerturbError::NoEntityFound(kind));
    }
    let mut rng = seed::rng(seed);
    let chosen = candidates[rng.gen_range(0..candidates.len())].clone();
    let replacement = draw_replacement(&chosen, store, &mut rng)?;

    let mut out = TupleVariant { texts: texts.to_vec(), deltas: Vec::new() };
    let delta_kind = match kind {
        EntityKind::PersonName => PerturbationKind::NameChange,
        EntityKind::Location => PerturbationKind::LocationChange,
    };
    for (&f, matches) in fields.iter().zip(&per_field) {
        let edits: Vec<Edit> = matches
            .iter()
            .filter(|m| m.text == chosen.text)
            .map(|m| Edit { start: m.start, end: m.end, old: m.text.clone(), new: replacement.clone() })
            .collect();
        let v = PerturbedVariant::from_edits(&texts[f], delta_kind, edits);
        out.texts[f] = v.text;
        out.deltas.push(FieldDelta { field: f, delta: v.delta });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// insertions

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UrlHandleKind {
    Url,
    Handle,
}

const ALPHANUMERIC: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";

/// Appends ` @XXXXXX` or ` https://t.co/XXXXXX` with six seeded alphanumerics.
pub fn add_url_handle(text: &str, kind: UrlHandleKind, seed: u64) -> PerturbedVariant {
    let mut rng = seed::rng(seed);
    let token: String = (0..6).map(|_| ALPHANUMERIC[rng.gen_range(0..ALPHANUMERIC.len())] as char).collect();
    let suffix = match kind {
        UrlHandleKind::Url => format!(" https://t.co/{token}"),
        UrlHandleKind::Handle => format!(" @{token}"),
    };
    let edit = Edit { start: text.len(), end: text.len(), old: String::new(), new: suffix };
    PerturbedVariant::from_edits(text, PerturbationKind::AddUrlHandle, vec![edit])
}

/// Position at which [`add_phrase`] inserts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhrasePosition {
    #[default]
    End,
}

/// `text + " " + phrase`, with trailing whitespace of `text` folded into the
/// single separator and repeated terminal periods of `phrase` collapsed.
pub fn add_phrase(text: &str, phrase: &str, position: PhrasePosition) -> Result<PerturbedVariant, PerturbError> {
    let PhrasePosition::End = position;
    let phrase = phrase.trim();
    if phrase.is_empty() {
        return Err(PerturbError::EmptyPhrase);
    }
    let core = phrase.trim_end_matches('.');
    let phrase = if core.len() < phrase.len() { format!("{core}.") } else { phrase.to_string() };
    let base = text.trim_end();
    let edit =
        Edit { start: base.len(), end: text.len(), old: text[base.len()..].to_string(), new: format!(" {phrase}") };
    Ok(PerturbedVariant::from_edits(text, PerturbationKind::AddPhrase, vec![edit]))
}

// ---------------------------------------------------------------------------
// declarative perturbation, as stored in suite files

/// A perturbation with its parameters; the seed is supplied at apply time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    TypoSwap {
        #[serde(default = "one")]
        n_swaps: usize,
    },
    Contraction,
    NameChange,
    LocationChange,
    AddUrlHandle {
        handle: UrlHandleKind,
    },
    AddPhrase {
        phrases: Vec<String>,
    },
}

fn one() -> usize {
    1
}

impl Perturbation {
    pub fn kind(&self) -> PerturbationKind {
        match self {
            Perturbation::TypoSwap { .. } => PerturbationKind::TypoSwap,
            Perturbation::Contraction => PerturbationKind::Contraction,
            Perturbation::NameChange => PerturbationKind::NameChange,
            Perturbation::LocationChange => PerturbationKind::LocationChange,
            Perturbation::AddUrlHandle { .. } => PerturbationKind::AddUrlHandle,
            Perturbation::AddPhrase { .. } => PerturbationKind::AddPhrase,
        }
    }

    /// Perturbs the listed fields of `texts` (all fields when `fields` is
    /// `None`).
    pub fn apply(
        &self,
        texts: &[String],
        fields: Option<&[usize]>,
        store: &LexiconStore,
        seed: u64,
    ) -> Result<TupleVariant, PerturbError> {
        let all: Vec<usize> = (0..texts.len()).collect();
        let fields = fields.unwrap_or(&all);
        if let Some(&bad) = fields.iter().find(|&&f| f >= texts.len()) {
            return Err(PerturbError::FieldOutOfRange(bad));
        }
        match self {
            Perturbation::NameChange => {
                return entity_change_fields(texts, fields, EntityKind::PersonName, store, seed)
            }
            Perturbation::LocationChange => {
                return entity_change_fields(texts, fields, EntityKind::Location, store, seed)
            }
            _ => {}
        }
        let phrase = match self {
            Perturbation::AddPhrase { phrases } => {
                Some(phrases.choose(&mut seed::rng(seed)).ok_or(PerturbError::EmptyPhrase)?.clone())
            }
            _ => None,
        };
        let mut out = TupleVariant { texts: texts.to_vec(), deltas: Vec::new() };
        for &f in fields {
            let field_seed = seed::derive(seed, f as u64);
            let text = &texts[f];
            let variant = match self {
                Perturbation::TypoSwap { n_swaps } => typo_swap(text, *n_swaps, field_seed)?.into_iter().next(),
                Perturbation::Contraction => contraction_variants(text).into_iter().next(),
                Perturbation::AddUrlHandle { handle } => Some(add_url_handle(text, *handle, field_seed)),
                Perturbation::AddPhrase { .. } => {
                    Some(add_phrase(text, phrase.as_deref().unwrap_or_default(), PhrasePosition::End)?)
                }
                Perturbation::NameChange | Perturbation::LocationChange => unreachable!("handled above"),
            };
            if let Some(v) = variant {
                out.texts[f] = v.text;
                out.deltas.push(FieldDelta { field: f, delta: v.delta });
            }
        }
        if out.deltas.is_empty() {
            return Err(PerturbError::NotApplicable);
        }
        Ok(out)
    }
}
