//! Template DSL and Cartesian-product expansion.
//!
//! Grammar:
//!
//! ```text
//! template  := (literal | escape | slot)*
//! escape    := "{{" | "}}"
//! slot      := "{" (modifier ":")* name "}"
//! modifier  := "a" | "cap"
//! name      := [A-Za-z_][A-Za-z0-9_]*
//! ```
//!
//! `{a:adj}` renders the fill preceded by `a` or `an` (`an` iff the fill starts
//! with a vowel letter). `{cap:name}` upper-cases the first letter of what the
//! slot renders. The slot name `mask` is reserved for masked suggestions and
//! must be resolved before expansion.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{Lexicon, LexiconStore, TagQuery, Tags};

/// Slot name reserved for masked-LM suggestions.
pub const MASK_SLOT: &str = "mask";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unbalanced braces at byte {pos}")]
    UnbalancedBraces { pos: usize },
    #[error("empty slot name at byte {pos}")]
    EmptySlotName { pos: usize },
    #[error("invalid slot name `{name}` at byte {pos}")]
    InvalidSlotName { name: String, pos: usize },
    #[error("unknown modifier `{name}` at byte {pos}")]
    UnknownModifier { name: String, pos: usize },
    #[error("missing lexicon `{lexicon}` for slot `{slot}`")]
    MissingLexicon { slot: String, lexicon: String },
    #[error("slot `{0}` is configured but used by no template")]
    UnknownSlot(String),
    #[error("template group has no templates")]
    EmptyGroup,
    #[error("`{{mask}}` must be resolved before expansion")]
    UnresolvedMask,
    #[error("expansion count overflows")]
    Overflow,
    #[error("no value bound for slot `{0}`")]
    Unbound(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Modifiers {
    pub article: bool,
    pub capitalize: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Slot {
    pub name: String,
    pub modifiers: Modifiers,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Segment {
    Literal(String),
    Slot(Slot),
}

/// Parsed template: alternating literals and slots.
///
/// Adjacent literal text (including `{{`/`}}` escapes) is merged into a single
/// [`Segment::Literal`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TemplateAst {
    pub segments: Vec<Segment>,
}

pub fn parse_template(src: &str) -> Result<TemplateAst, TemplateError> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let bytes = src.as_bytes();
    let mut i = 0;
    while i < src.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                literal.push('{');
                i += 2;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                literal.push('}');
                i += 2;
            }
            b'}' => return Err(TemplateError::UnbalancedBraces { pos: i }),
            b'{' => {
                let start = i;
                let close = src[i + 1..]
                    .find(['{', '}'])
                    .map(|off| i + 1 + off)
                    .filter(|&j| bytes[j] == b'}')
                    .ok_or(TemplateError::UnbalancedBraces { pos: start })?;
                let slot = parse_slot(&src[i + 1..close], start)?;
                if !literal.is_empty() {
                    segments.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                segments.push(Segment::Slot(slot));
                i = close + 1;
            }
            _ => {
                let ch = src[i..].chars().next().expect("in bounds");
                literal.push(ch);
                i += ch.len_utf8();
            }
        }
    }
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    Ok(TemplateAst { segments })
}

fn parse_slot(body: &str, pos: usize) -> Result<Slot, TemplateError> {
    let mut parts: Vec<&str> = body.split(':').collect();
    let name = parts.pop().unwrap_or("").trim();
    if name.is_empty() {
        return Err(TemplateError::EmptySlotName { pos });
    }
    if !is_identifier(name) {
        return Err(TemplateError::InvalidSlotName { name: name.to_string(), pos });
    }
    let mut modifiers = Modifiers::default();
    for m in parts {
        match m.trim() {
            "a" => modifiers.article = true,
            "cap" => modifiers.capitalize = true,
            other => return Err(TemplateError::UnknownModifier { name: other.to_string(), pos }),
        }
    }
    Ok(Slot { name: name.to_string(), modifiers })
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// `"an"` if `word` starts with a vowel letter, else `"a"`.
pub fn article_for(word: &str) -> &'static str {
    match word.chars().find(|c| c.is_alphanumeric()) {
        Some(c) if "aeiouAEIOU".contains(c) => "an",
        _ => "a",
    }
}

fn capitalize_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn escape_literal(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '{' => out.push_str("{{"),
            '}' => out.push_str("}}"),
            c => out.push(c),
        }
    }
}

impl TemplateAst {
    pub fn slots(&self) -> impl Iterator<Item = &Slot> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Slot(slot) => Some(slot),
            Segment::Literal(_) => None,
        })
    }

    /// Distinct slot names in order of first appearance.
    pub fn slot_names(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.slots().map(|s| s.name.as_str()).filter(|n| seen.insert(*n)).collect()
    }

    pub fn literal_count(&self) -> usize {
        self.segments.iter().filter(|s| matches!(s, Segment::Literal(_))).count()
    }

    /// Source text in canonical DSL form (modifiers as `a:` then `cap:`).
    pub fn to_source(&self) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(text) => escape_literal(text, &mut out),
                Segment::Slot(slot) => {
                    out.push('{');
                    if slot.modifiers.article {
                        out.push_str("a:");
                    }
                    if slot.modifiers.capitalize {
                        out.push_str("cap:");
                    }
                    out.push_str(&slot.name);
                    out.push('}');
                }
            }
        }
        out
    }

    /// Replaces every slot named `from` with `to`, keeping modifiers.
    pub fn rename_slot(&self, from: &str, to: &str) -> TemplateAst {
        let segments = self
            .segments
            .iter()
            .map(|seg| match seg {
                Segment::Slot(slot) if slot.name == from => {
                    Segment::Slot(Slot { name: to.to_string(), modifiers: slot.modifiers })
                }
                other => other.clone(),
            })
            .collect();
        TemplateAst { segments }
    }

    /// Renders with `fill` supplying the raw text for each slot name.
    pub fn render_with<'a, F>(&self, mut fill: F) -> Result<String, TemplateError>
    where
        F: FnMut(&str) -> Option<&'a str>,
    {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(text) => out.push_str(text),
                Segment::Slot(slot) => {
                    let value = fill(&slot.name).ok_or_else(|| TemplateError::Unbound(slot.name.clone()))?;
                    let mut rendered = if slot.modifiers.article {
                        format!("{} {}", article_for(value), value)
                    } else {
                        value.to_string()
                    };
                    if slot.modifiers.capitalize {
                        rendered = capitalize_first(&rendered);
                    }
                    out.push_str(&rendered);
                }
            }
        }
        Ok(out)
    }

    /// Renders against a binding keyed by slot name.
    pub fn render(&self, binding: &Binding) -> Result<String, TemplateError> {
        self.render_with(|name| binding.get(name).map(|v| v.text.as_str()))
    }
}

impl FromStr for TemplateAst {
    type Err = TemplateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_template(s)
    }
}

impl fmt::Display for TemplateAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_source())
    }
}

impl Serialize for TemplateAst {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_source())
    }
}

impl<'de> Deserialize<'de> for TemplateAst {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_template(&s).map_err(serde::de::Error::custom)
    }
}

/// Where a slot draws its fills from. Defaults to the lexicon named like the
/// slot, unfiltered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSource {
    pub lexicon: String,
    #[serde(default, skip_serializing_if = "TagQuery::is_empty")]
    pub filter: TagQuery,
}

/// One or more templates expanded under a single binding.
///
/// Slots are shared across the group unless explicitly marked unshared, in
/// which case each template gets an independent variable for that slot
/// (bound under `name#index`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGroup", into = "RawGroup")]
pub struct TemplateGroup {
    templates: Vec<TemplateAst>,
    shared: BTreeMap<String, bool>,
    sources: BTreeMap<String, SlotSource>,
}

#[derive(Serialize, Deserialize)]
struct RawGroup {
    templates: Vec<TemplateAst>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    shared: BTreeMap<String, bool>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    slots: BTreeMap<String, SlotSource>,
}

impl TryFrom<RawGroup> for TemplateGroup {
    type Error = TemplateError;

    fn try_from(raw: RawGroup) -> Result<Self, Self::Error> {
        let mut g = TemplateGroup::new(raw.templates)?;
        for (name, shared) in raw.shared {
            g = g.with_shared(&name, shared)?;
        }
        for (name, source) in raw.slots {
            g = g.with_source(&name, source)?;
        }
        Ok(g)
    }
}

impl From<TemplateGroup> for RawGroup {
    fn from(g: TemplateGroup) -> Self {
        RawGroup { templates: g.templates, shared: g.shared, slots: g.sources }
    }
}

/// A single expansion variable: one slot, bound once for the templates listed.
#[derive(Debug, Clone)]
struct Variable {
    key: String,
    slot: String,
}

impl TemplateGroup {
    pub fn new(templates: Vec<TemplateAst>) -> Result<Self, TemplateError> {
        if templates.is_empty() {
            return Err(TemplateError::EmptyGroup);
        }
        Ok(Self { templates, shared: BTreeMap::new(), sources: BTreeMap::new() })
    }

    pub fn single(template: TemplateAst) -> Self {
        Self { templates: vec![template], shared: BTreeMap::new(), sources: BTreeMap::new() }
    }

    pub fn parse<S: AsRef<str>>(sources: &[S]) -> Result<Self, TemplateError> {
        Self::new(sources.iter().map(|s| parse_template(s.as_ref())).collect::<Result<_, _>>()?)
    }

    fn uses_slot(&self, name: &str) -> bool {
        self.templates.iter().any(|t| t.slots().any(|s| s.name == name))
    }

    pub fn with_shared(mut self, slot: &str, shared: bool) -> Result<Self, TemplateError> {
        if !self.uses_slot(slot) {
            return Err(TemplateError::UnknownSlot(slot.to_string()));
        }
        self.shared.insert(slot.to_string(), shared);
        Ok(self)
    }

    pub fn with_source(mut self, slot: &str, source: SlotSource) -> Result<Self, TemplateError> {
        if !self.uses_slot(slot) {
            return Err(TemplateError::UnknownSlot(slot.to_string()));
        }
        self.sources.insert(slot.to_string(), source);
        Ok(self)
    }

    pub fn templates(&self) -> &[TemplateAst] {
        &self.templates
    }

    pub fn is_shared(&self, slot: &str) -> bool {
        self.shared.get(slot).copied().unwrap_or(true)
    }

    pub fn source(&self, slot: &str) -> SlotSource {
        self.sources
            .get(slot)
            .cloned()
            .unwrap_or_else(|| SlotSource { lexicon: slot.to_string(), filter: TagQuery::any() })
    }

    pub fn has_mask(&self) -> bool {
        self.uses_slot(MASK_SLOT)
    }

    /// Returns a copy where `{mask}` slots read from lexicon `lexicon` under
    /// slot name `slot`.
    pub fn resolve_mask(&self, slot: &str, lexicon: &str) -> TemplateGroup {
        let mut g = self.clone();
        g.templates = self.templates.iter().map(|t| t.rename_slot(MASK_SLOT, slot)).collect();
        if let Some(shared) = g.shared.remove(MASK_SLOT) {
            g.shared.insert(slot.to_string(), shared);
        }
        g.sources.remove(MASK_SLOT);
        g.sources.insert(slot.to_string(), SlotSource { lexicon: lexicon.to_string(), filter: TagQuery::any() });
        g
    }

    fn binding_key(&self, slot: &str, template: usize) -> String {
        let occurrences = self.templates.iter().filter(|t| t.slots().any(|s| s.name == slot)).count();
        if self.is_shared(slot) || occurrences <= 1 {
            slot.to_string()
        } else {
            format!("{slot}#{template}")
        }
    }

    fn variables(&self) -> Vec<Variable> {
        let mut seen = HashSet::new();
        let mut vars = Vec::new();
        for (ti, t) in self.templates.iter().enumerate() {
            for name in t.slot_names() {
                let key = self.binding_key(name, ti);
                if seen.insert(key.clone()) {
                    vars.push(Variable { key, slot: name.to_string() });
                }
            }
        }
        vars
    }

    fn resolve(&self, store: &LexiconStore) -> Result<Vec<(Variable, Lexicon)>, TemplateError> {
        if self.has_mask() {
            return Err(TemplateError::UnresolvedMask);
        }
        self.variables()
            .into_iter()
            .map(|var| {
                let src = self.source(&var.slot);
                let lex = store.filter(&src.lexicon, &src.filter).map_err(|_| TemplateError::MissingLexicon {
                    slot: var.slot.clone(),
                    lexicon: src.lexicon.clone(),
                })?;
                Ok((var, lex))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundValue {
    pub text: String,
    #[serde(default, skip_serializing_if = "Tags::is_empty")]
    pub tags: Tags,
}

/// Slot → fill assignment, with the fill's lexicon tags copied verbatim.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Binding(BTreeMap<String, BoundValue>);

impl Binding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, slot: impl Into<String>, value: BoundValue) {
        self.0.insert(slot.into(), value);
    }

    pub fn get(&self, slot: &str) -> Option<&BoundValue> {
        self.0.get(slot)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BoundValue)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Matches a query whose keys are `slot.tag` (compared against the
    /// fill's tags) or bare `slot` (compared against the fill text).
    pub fn matches(&self, query: &TagQuery) -> bool {
        query.terms().all(|(key, value)| match key.split_once('.') {
            Some((slot, tag)) => self.get(slot).and_then(|b| b.tags.get(tag)) == Some(value),
            None => self.get(key).map(|b| b.text.as_str()) == Some(value),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_cases: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub dedupe: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self { max_cases: None, seed: crate::DEFAULT_SEED, dedupe: true }
    }
}

impl ExpansionConfig {
    /// Full enumeration, duplicates kept.
    pub fn exhaustive() -> Self {
        Self { max_cases: None, seed: 0, dedupe: false }
    }
}

/// One expanded case: one text per template, plus the binding that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expansion {
    pub texts: Vec<String>,
    pub binding: Binding,
}

/// Product of the (filtered) lexicon sizes over the group's variables.
pub fn count_expansions(group: &TemplateGroup, store: &LexiconStore) -> Result<u128, TemplateError> {
    let vars = group.resolve(store)?;
    vars.iter().try_fold(1u128, |acc, (_, lex)| acc.checked_mul(lex.len() as u128)).ok_or(TemplateError::Overflow)
}

/// Expands `group` against `store`.
///
/// Without `max_cases` (or when it is at least the product size) every
/// combination is emitted, ordered lexicographically by entry index with the
/// first variable most significant. Otherwise indices are drawn by a seeded
/// sparse Fisher–Yates shuffle of the index space, so sampling never
/// materialises the full product.
pub fn expand(
    group: &TemplateGroup,
    store: &LexiconStore,
    cfg: &ExpansionConfig,
) -> Result<Vec<Expansion>, TemplateError> {
    let vars = group.resolve(store)?;
    let total = vars
        .iter()
        .try_fold(1u128, |acc, (_, lex)| acc.checked_mul(lex.len() as u128))
        .ok_or(TemplateError::Overflow)?;
    let radices: Vec<u128> = vars.iter().map(|(_, lex)| lex.len() as u128).collect();

    let keys: Vec<Vec<String>> = group
        .templates
        .iter()
        .enumerate()
        .map(|(ti, t)| t.slot_names().iter().map(|n| group.binding_key(n, ti)).collect())
        .collect();

    let build = |index: u128| -> Result<Expansion, TemplateError> {
        let digits = decode(index, &radices);
        let mut binding = Binding::new();
        for ((var, lex), d) in vars.iter().zip(&digits) {
            let entry = &lex.entries[*d as usize];
            binding.insert(var.key.clone(), BoundValue { text: entry.text.clone(), tags: entry.tags.clone() });
        }
        let texts = group
            .templates
            .iter()
            .enumerate()
            .map(|(ti, t)| {
                let names = t.slot_names();
                t.render_with(|slot| {
                    let pos = names.iter().position(|n| *n == slot)?;
                    binding.get(&keys[ti][pos]).map(|v| v.text.as_str())
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Expansion { texts, binding })
    };

    let mut seen: HashSet<Vec<String>> = HashSet::new();
    let mut out = Vec::new();
    let mut keep = |case: Expansion, out: &mut Vec<Expansion>| {
        if !cfg.dedupe || seen.insert(case.texts.clone()) {
            out.push(case);
        }
    };

    match cfg.max_cases {
        Some(k) if (k as u128) < total => {
            let mut shuffle = SparseShuffle::new(total, cfg.seed);
            while out.len() < k {
                let Some(index) = shuffle.next() else { break };
                keep(build(index)?, &mut out);
            }
        }
        _ => {
            for index in 0..total {
                keep(build(index)?, &mut out);
            }
        }
    }
    Ok(out)
}

fn decode(mut index: u128, radices: &[u128]) -> Vec<u128> {
    let mut digits = vec![0; radices.len()];
    for (d, r) in digits.iter_mut().zip(radices).rev() {
        *d = index % r;
        index /= r;
    }
    digits
}

/// Incremental Fisher–Yates over `0..n` storing only displaced positions.
struct SparseShuffle {
    n: u128,
    i: u128,
    displaced: HashMap<u128, u128>,
    rng: rand_chacha::ChaCha8Rng,
}

impl SparseShuffle {
    fn new(n: u128, seed: u64) -> Self {
        Self { n, i: 0, displaced: HashMap::new(), rng: crate::seed::rng(seed) }
    }
}

impl Iterator for SparseShuffle {
    type Item = u128;

    fn next(&mut self) -> Option<u128> {
        if self.i >= self.n {
            return None;
        }
        let j = self.rng.gen_range(self.i..self.n);
        let at_j = self.displaced.get(&j).copied().unwrap_or(j);
        let at_i = self.displaced.get(&self.i).copied().unwrap_or(self.i);
        self.displaced.insert(j, at_i);
        self.displaced.remove(&self.i);
        self.i += 1;
        Some(at_j)
    }
}
