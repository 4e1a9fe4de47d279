//! Test suites: definitions, runs, slicing and reports.
//!
//! A suite file is one JSON document:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "name": "sentiment_mini",
//!   "description": "...",
//!   "tests": [{
//!     "name": "negated positive should be negative",
//!     "capability": "Negation",
//!     "test_type": "MFT",
//!     "description": "...",
//!     "generator": {"kind": "templates", "group": {"templates": ["I {NEGATION} {POS_VERB} the {THING}."]}},
//!     "expectation": {"kind": "mft", "expected_labels": ["negative"]},
//!     "seed": 7,
//!     "max_cases": 500,
//!     "auto_accept_top_k": 3,
//!     "slices": ["P1.gender=male"]
//!   }]
//! }
//! ```
//!
//! | field | meaning |
//! |---|---|
//! | `schema_version` | must be 1 |
//! | `capability` | `Vocabulary+POS`, `Taxonomy`, `Robustness`, `NER`, `Fairness`, `Temporal`, `Negation`, `Coreference`, `SRL`, `Logic`, or any other string (kept verbatim, conventionally `custom:Name`) |
//! | `test_type` | `MFT`, `INV` or `DIR` |
//! | `generator` | `templates` (a [`TemplateGroup`]) or `corpus` (`inputs`: strings or string tuples); either may carry a `perturbation` and the tuple `fields` it applies to |
//! | `expectation` | an [`ExpectationSpec`] |
//! | `seed` | sampling/perturbation seed; derived from the run seed when absent |
//! | `max_cases` | sample size; absent means the full product |
//! | `slices` | binding tag queries reported as separate rates |
//! | `auto_accept_top_k` | fill a `{mask}` slot with the top k offline suggestions (minus suppressed ones) instead of a triaged lexicon |
//!
//! Lexicons are referenced by name only and travel separately.

mod report;
mod run;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expect::ExpectationSpec;
use crate::lexicon::TagQuery;
use crate::model::ModelError;
use crate::perturb::Perturbation;
use crate::template::TemplateGroup;

pub use report::{parse_csv_report, render_report, CsvRow, ReportFormat};
pub use run::{
    run_suite, run_suite_with_progress, slice_result, CaseResult, Progress, RunConfig, RunMetadata, SliceRate,
    SuiteResult, TestResult, AUTO_MASK_SLOT, DEFAULT_EXEMPLARS,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SuiteError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersionMismatch { found: u64, expected: u32 },
    #[error("test `{test}`: {message}")]
    Test { test: String, message: String },
    #[error("unknown test `{0}`")]
    UnknownTest(String),
    #[error("test `{test}`: no cases match `{query}`")]
    NoMatchingCases { test: String, query: String },
    #[error("test `{test}`: {source}")]
    Model { test: String, source: ModelError },
}

impl SuiteError {
    pub(crate) fn test(test: &str, message: impl fmt::Display) -> Self {
        SuiteError::Test { test: test.to_string(), message: message.to_string() }
    }
}

/// Matrix row. Unknown names are kept verbatim as [`Capability::Custom`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Capability {
    Vocabulary,
    Taxonomy,
    Robustness,
    Ner,
    Fairness,
    Temporal,
    Negation,
    Coreference,
    Srl,
    Logic,
    Custom(String),
}

impl Capability {
    pub const BUILTIN: [Capability; 10] = [
        Capability::Vocabulary,
        Capability::Taxonomy,
        Capability::Robustness,
        Capability::Ner,
        Capability::Fairness,
        Capability::Temporal,
        Capability::Negation,
        Capability::Coreference,
        Capability::Srl,
        Capability::Logic,
    ];

    pub fn as_str(&self) -> &str {
        match self {
            Capability::Vocabulary => "Vocabulary+POS",
            Capability::Taxonomy => "Taxonomy",
            Capability::Robustness => "Robustness",
            Capability::Ner => "NER",
            Capability::Fairness => "Fairness",
            Capability::Temporal => "Temporal",
            Capability::Negation => "Negation",
            Capability::Coreference => "Coreference",
            Capability::Srl => "SRL",
            Capability::Logic => "Logic",
            Capability::Custom(s) => s,
        }
    }
}

impl FromStr for Capability {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(Capability::BUILTIN
            .iter()
            .find(|c| c.as_str() == s)
            .cloned()
            .unwrap_or_else(|| Capability::Custom(s.to_string())))
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Capability {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Capability {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.is_empty() {
            return Err(serde::de::Error::custom("capability must be nonempty"));
        }
        Ok(s.parse().expect("infallible"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TestType {
    #[serde(rename = "MFT")]
    Mft,
    #[serde(rename = "INV")]
    Inv,
    #[serde(rename = "DIR")]
    Dir,
}

impl TestType {
    pub const ALL: [TestType; 3] = [TestType::Mft, TestType::Inv, TestType::Dir];

    pub fn as_str(&self) -> &'static str {
        match self {
            TestType::Mft => "MFT",
            TestType::Inv => "INV",
            TestType::Dir => "DIR",
        }
    }
}

impl fmt::Display for TestType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TestType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "MFT" => Ok(TestType::Mft),
            "INV" => Ok(TestType::Inv),
            "DIR" => Ok(TestType::Dir),
            other => Err(format!("unknown test type `{other}`")),
        }
    }
}

/// One corpus input: a single text or a tuple (e.g. a question pair).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CorpusItem {
    Text(String),
    Tuple(Vec<String>),
}

impl CorpusItem {
    pub fn texts(&self) -> Vec<String> {
        match self {
            CorpusItem::Text(t) => vec![t.clone()],
            CorpusItem::Tuple(ts) => ts.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    Templates {
        group: TemplateGroup,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        perturbation: Option<Perturbation>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fields: Option<Vec<usize>>,
    },
    Corpus {
        inputs: Vec<CorpusItem>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        perturbation: Option<Perturbation>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fields: Option<Vec<usize>>,
    },
}

impl Generator {
    pub fn perturbation(&self) -> Option<&Perturbation> {
        match self {
            Generator::Templates { perturbation, .. } | Generator::Corpus { perturbation, .. } => perturbation.as_ref(),
        }
    }

    pub fn fields(&self) -> Option<&[usize]> {
        match self {
            Generator::Templates { fields, .. } | Generator::Corpus { fields, .. } => fields.as_deref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDefinition {
    pub name: String,
    pub capability: Capability,
    pub test_type: TestType,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub generator: Generator,
    pub expectation: ExpectationSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_cases: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slices: Vec<TagQuery>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto_accept_top_k: Option<usize>,
}

impl TestDefinition {
    pub fn validate(&self) -> Result<(), SuiteError> {
        if self.name.trim().is_empty() {
            return Err(SuiteError::Parse("test name must be nonempty".into()));
        }
        self.expectation.validate().map_err(|m| SuiteError::test(&self.name, m))?;
        let perturbed = self.generator.perturbation().is_some();
        if self.expectation.needs_perturbation() && !perturbed {
            return Err(SuiteError::test(
                &self.name,
                format!("`{}` expectation needs a perturbation", self.expectation.kind_name()),
            ));
        }
        if !self.expectation.needs_perturbation() && perturbed {
            return Err(SuiteError::test(
                &self.name,
                format!("`{}` expectation does not take a perturbation", self.expectation.kind_name()),
            ));
        }
        if let Generator::Corpus { inputs, .. } = &self.generator {
            if inputs.is_empty() {
                return Err(SuiteError::test(&self.name, "corpus is empty"));
            }
        }
        if self.auto_accept_top_k == Some(0) {
            return Err(SuiteError::test(&self.name, "auto_accept_top_k must be at least 1"));
        }
        if let Generator::Templates { group, .. } = &self.generator {
            if group.has_mask() && self.auto_accept_top_k.is_none() {
                return Err(SuiteError::test(&self.name, "`{mask}` needs a triaged lexicon or `auto_accept_top_k`"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSuite {
    pub schema_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default)]
    pub tests: Vec<TestDefinition>,
}

impl TestSuite {
    pub fn new(name: impl Into<String>) -> Self {
        Self { schema_version: SCHEMA_VERSION, name: name.into(), description: String::new(), tests: Vec::new() }
    }

    pub fn from_json(src: &str) -> Result<Self, SuiteError> {
        let value: serde_json::Value = serde_json::from_str(src).map_err(|e| SuiteError::Parse(e.to_string()))?;
        let found = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| SuiteError::Parse("missing or non-integer `schema_version`".into()))?;
        if found != u64::from(SCHEMA_VERSION) {
            return Err(SuiteError::SchemaVersionMismatch { found, expected: SCHEMA_VERSION });
        }
        let suite: TestSuite = serde_json::from_value(value).map_err(|e| SuiteError::Parse(e.to_string()))?;
        suite.validate()?;
        Ok(suite)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("suite serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<(), SuiteError> {
        let mut seen = std::collections::HashSet::new();
        for t in &self.tests {
            t.validate()?;
            if !seen.insert(t.name.as_str()) {
                return Err(SuiteError::Parse(format!("duplicate test name `{}`", t.name)));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SuiteError> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path)
            .map_err(|e| SuiteError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json(&src)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SuiteError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json())
            .map_err(|e| SuiteError::Io { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn test(&self, name: &str) -> Option<&TestDefinition> {
        self.tests.iter().find(|t| t.name == name)
    }

    /// Capability rows in display order: built-ins first, then custom rows in
    /// order of first appearance.
    pub fn capabilities(&self) -> Vec<Capability> {
        capability_rows(self.tests.iter().map(|t| &t.capability))
    }
}

pub(crate) fn capability_rows<'a>(caps: impl Iterator<Item = &'a Capability> + Clone) -> Vec<Capability> {
    let mut rows: Vec<Capability> =
        Capability::BUILTIN.iter().filter(|c| caps.clone().any(|x| x == *c)).cloned().collect();
    for c in caps {
        if matches!(c, Capability::Custom(_)) && !rows.contains(c) {
            rows.push(c.clone());
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mini() -> TestSuite {
        crate::bundled::suite("sentiment_mini").unwrap().unwrap()
    }

    #[test]
    fn capability_names() {
        assert_eq!("NER".parse::<Capability>().unwrap(), Capability::Ner);
        assert_eq!("Vocabulary+POS".parse::<Capability>().unwrap(), Capability::Vocabulary);
        let c: Capability = "Implicature".parse().unwrap();
        assert_eq!(c.to_string(), "Implicature");
        let c: Capability = serde_json::from_str("\"custom:Implicature\"").unwrap();
        assert_eq!(serde_json::to_string(&c).unwrap(), "\"custom:Implicature\"");
    }

    #[test]
    fn schema_version_checked() {
        let src = mini().to_json().replacen("\"schema_version\": 1", "\"schema_version\": 2", 1);
        assert_eq!(TestSuite::from_json(&src), Err(SuiteError::SchemaVersionMismatch { found: 2, expected: 1 }));
        assert!(matches!(TestSuite::from_json("{}"), Err(SuiteError::Parse(_))));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for name in crate::bundled::SUITE_NAMES {
            let suite = crate::bundled::suite(name).unwrap().unwrap();
            let path = dir.path().join(format!("{name}.json"));
            suite.save(&path).unwrap();
            assert_eq!(TestSuite::load(&path).unwrap(), suite);
        }
    }

    #[test]
    fn custom_capability_preserved() {
        let mut suite = mini();
        suite.tests[0].capability = "Implicature".parse().unwrap();
        let back = TestSuite::from_json(&suite.to_json()).unwrap();
        assert_eq!(back.tests[0].capability, Capability::Custom("Implicature".into()));
        assert!(back.to_json().contains("\"capability\": \"Implicature\""));
    }

    #[test]
    fn perturbation_required_for_inv() {
        let src = r#"{"schema_version":1,"name":"x","tests":[{"name":"t","capability":"Robustness","test_type":"INV",
            "generator":{"kind":"corpus","inputs":["a"]},"expectation":{"kind":"inv"}}]}"#;
        assert!(matches!(TestSuite::from_json(src), Err(SuiteError::Test { .. })));
    }
}
