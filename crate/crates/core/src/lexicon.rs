//! Named, ordered, tag-annotated fill-in lists.
//!
//! File format (UTF-8, line oriented):
//!
//! ```text
//! [first_name]
//! John	gender=male
//! Mary	gender=female
//!
//! [city]
//! San Jose	category=city
//! ```
//!
//! A `[name]` line opens a section. Every other non-blank line is one entry:
//! the fill text, optionally followed by a TAB and `key=value` tags separated
//! by `;`. Blank lines are ignored.

#![allow(clippy::tabs_in_doc_comments)]

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LexiconError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate lexicon name `{name}` (line {line})")]
    DuplicateLexiconName { name: String, line: usize },
    #[error("missing lexicon `{0}`")]
    MissingLexicon(String),
    #[error("invalid tag query `{0}`")]
    InvalidQuery(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// `key=value` metadata attached to an entry. Keys are unique; insertion
/// order is kept so files round-trip.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tags(IndexMap<String, String>);

impl Tags {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Inserts a tag; returns false (and leaves the tags unchanged) if the key
    /// is already present.
    pub fn insert(&mut self, key: impl Into<String>, value: impl Into<String>) -> bool {
        let key = key.into();
        if self.0.contains_key(&key) {
            return false;
        }
        self.0.insert(key, value.into());
        true
    }

    pub fn with(mut self, key: &str, value: &str) -> Self {
        self.insert(key, value);
        self
    }
}

impl FromStr for Tags {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut tags = Tags::new();
        for piece in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = piece.split_once('=').ok_or_else(|| format!("tag `{piece}` is not key=value"))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(format!("tag `{piece}` has an empty key"));
            }
            if !tags.insert(k, v) {
                return Err(format!("duplicate tag key `{k}`"));
            }
        }
        Ok(tags)
    }
}

impl fmt::Display for Tags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// A conjunction of `key=value` constraints, written `k=v;k=v`.
///
/// The empty query matches everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TagQuery(Vec<(String, String)>);

impl TagQuery {
    pub fn any() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn and(&self, other: &TagQuery) -> TagQuery {
        let mut terms = self.0.clone();
        terms.extend(other.0.iter().cloned());
        TagQuery(terms)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn matches(&self, tags: &Tags) -> bool {
        self.0.iter().all(|(k, v)| tags.get(k) == Some(v.as_str()))
    }
}

impl FromStr for TagQuery {
    type Err = LexiconError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut terms = Vec::new();
        for piece in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            match piece.split_once('=') {
                Some((k, v)) if !k.trim().is_empty() => terms.push((k.trim().to_string(), v.trim().to_string())),
                _ => return Err(LexiconError::InvalidQuery(s.to_string())),
            }
        }
        Ok(TagQuery(terms))
    }
}

impl fmt::Display for TagQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

impl Serialize for TagQuery {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TagQuery {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub text: String,
    #[serde(default, skip_serializing_if = "Tags::is_empty")]
    pub tags: Tags,
}

impl LexiconEntry {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into(), tags: Tags::new() }
    }

    pub fn tagged(text: impl Into<String>, tags: Tags) -> Self {
        Self { text: text.into(), tags }
    }
}

/// A named list, usually a filtered view of a store entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    pub name: String,
    pub entries: Vec<LexiconEntry>,
}

impl Lexicon {
    pub fn filter(&self, query: &TagQuery) -> Lexicon {
        Lexicon {
            name: self.name.clone(),
            entries: self.entries.iter().filter(|e| query.matches(&e.tags)).cloned().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.text.as_str())
    }
}

/// Immutable collection of named lexicons in file order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LexiconStore {
    lists: IndexMap<String, Vec<LexiconEntry>>,
}

impl LexiconStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path)
            .map_err(|e| LexiconError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&src)
    }

    pub fn parse(src: &str) -> Result<Self, LexiconError> {
        let mut lists: IndexMap<String, Vec<LexiconEntry>> = IndexMap::new();
        let mut current: Option<String> = None;
        for (idx, raw) in src.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let trimmed = line.trim();
            if let Some(inner) = trimmed.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                let name = inner.trim();
                if name.is_empty() {
                    return Err(LexiconError::Parse { line: line_no, message: "empty section name".into() });
                }
                if lists.contains_key(name) {
                    return Err(LexiconError::DuplicateLexiconName { name: name.to_string(), line: line_no });
                }
                lists.insert(name.to_string(), Vec::new());
                current = Some(name.to_string());
                continue;
            }
            let Some(section) = current.as_ref() else {
                return Err(LexiconError::Parse { line: line_no, message: "entry before any [section] header".into() });
            };
            let (text, tags) = match line.split_once('\t') {
                Some((t, rest)) => (t.trim(), rest),
                None => (line.trim(), ""),
            };
            if text.is_empty() {
                return Err(LexiconError::Parse { line: line_no, message: "empty entry text".into() });
            }
            let tags: Tags = tags.parse().map_err(|message| LexiconError::Parse { line: line_no, message })?;
            lists[section].push(LexiconEntry::tagged(text, tags));
        }
        Ok(Self { lists })
    }

    /// Serializes to the lexicon file format.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (i, (name, entries)) in self.lists.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&format!("[{name}]\n"));
            for e in entries {
                out.push_str(&e.text);
                if !e.tags.is_empty() {
                    out.push('\t');
                    out.push_str(&e.tags.to_string());
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LexiconError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_file_string())
            .map_err(|e| LexiconError::Io { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.lists.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.lists.contains_key(name)
    }

    pub fn entries(&self, name: &str) -> Option<&[LexiconEntry]> {
        self.lists.get(name).map(Vec::as_slice)
    }

    pub fn lexicon(&self, name: &str) -> Result<Lexicon, LexiconError> {
        self.entries(name)
            .map(|entries| Lexicon { name: name.to_string(), entries: entries.to_vec() })
            .ok_or_else(|| LexiconError::MissingLexicon(name.to_string()))
    }

    /// Entries of `name` matching every conjunct of `query`, in store order.
    pub fn filter(&self, name: &str, query: &TagQuery) -> Result<Lexicon, LexiconError> {
        Ok(self.lexicon(name)?.filter(query))
    }

    /// Adds a new list. Fails if the name is taken.
    pub fn insert(&mut self, name: impl Into<String>, entries: Vec<LexiconEntry>) -> Result<(), LexiconError> {
        let name = name.into();
        if self.lists.contains_key(&name) {
            return Err(LexiconError::DuplicateLexiconName { name, line: 0 });
        }
        self.lists.insert(name, entries);
        Ok(())
    }

    /// Appends `entry` to `name`, creating the list if needed. Entries whose
    /// text is already present are left alone; returns whether the store
    /// changed.
    pub fn append(&mut self, name: &str, entry: LexiconEntry) -> bool {
        let list = self.lists.entry(name.to_string()).or_default();
        if list.iter().any(|e| e.text == entry.text) {
            return false;
        }
        list.push(entry);
        true
    }

    /// Union of two stores. Lexicon names must be disjoint.
    pub fn merge(mut self, other: LexiconStore) -> Result<Self, LexiconError> {
        for (name, entries) in other.lists {
            self.insert(name, entries)?;
        }
        Ok(self)
    }
}

/// Relation looked up in the thesaurus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordRelation {
    Synonym,
    Antonym,
}

/// Flat synonym/antonym table.
///
/// File lines are `word<TAB>syn,syn,...<TAB>ant,ant,...`; either list may be
/// empty. Relations are symmetric: listing `outspoken` as a synonym of `vocal`
/// also makes `vocal` a synonym of `outspoken`.
#[derive(Debug, Clone, Default)]
pub struct Thesaurus {
    synonyms: BTreeMap<String, Vec<String>>,
    antonyms: BTreeMap<String, Vec<String>>,
}

impl Thesaurus {
    pub fn parse(src: &str) -> Result<Self, LexiconError> {
        let mut forward: Vec<(String, Vec<String>, Vec<String>)> = Vec::new();
        for (idx, line) in src.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let word = cols.next().unwrap_or("").trim().to_lowercase();
            if word.is_empty() {
                return Err(LexiconError::Parse { line: idx + 1, message: "empty headword".into() });
            }
            let list = |c: Option<&str>| -> Vec<String> {
                c.unwrap_or("").split(',').map(|w| w.trim().to_lowercase()).filter(|w| !w.is_empty()).collect()
            };
            let syn = list(cols.next());
            let ant = list(cols.next());
            if cols.next().is_some() {
                return Err(LexiconError::Parse { line: idx + 1, message: "too many columns".into() });
            }
            forward.push((word, syn, ant));
        }

        let mut t = Thesaurus::default();
        fn push(map: &mut BTreeMap<String, Vec<String>>, k: &str, v: &str) {
            if k == v {
                return;
            }
            let list = map.entry(k.to_string()).or_default();
            if !list.iter().any(|w| w == v) {
                list.push(v.to_string());
            }
        }
        for (word, syn, ant) in &forward {
            for s in syn {
                push(&mut t.synonyms, word, s);
            }
            for a in ant {
                push(&mut t.antonyms, word, a);
            }
        }
        for (word, syn, ant) in &forward {
            for s in syn {
                push(&mut t.synonyms, s, word);
            }
            for a in ant {
                push(&mut t.antonyms, a, word);
            }
        }
        Ok(t)
    }

    pub fn related(&self, word: &str, relation: WordRelation) -> Vec<String> {
        let map = match relation {
            WordRelation::Synonym => &self.synonyms,
            WordRelation::Antonym => &self.antonyms,
        };
        map.get(&word.trim().to_lowercase()).cloned().unwrap_or_default()
    }
}

/// Looks `word` up in the bundled thesaurus. Unknown words yield an empty list.
pub fn related_words(word: &str, relation: WordRelation) -> Vec<String> {
    static THESAURUS: OnceLock<Thesaurus> = OnceLock::new();
    THESAURUS
        .get_or_init(|| Thesaurus::parse(crate::bundled::THESAURUS).expect("bundled thesaurus parses"))
        .related(word, relation)
}
