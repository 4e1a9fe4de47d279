//! Running suites and slicing their results.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{Capability, Generator, SuiteError, TestDefinition, TestSuite, TestType, SCHEMA_VERSION};
use crate::expect::{self, CaseVerdict, ExpectationSpec, FailureRate, Prediction, RelationKind};
use crate::lexicon::{LexiconEntry, LexiconStore, TagQuery};
use crate::model::Gateway;
use crate::perturb::{FieldDelta, PerturbError};
use crate::seed;
use crate::suggest::{self, MaskQuery, StubProvider, SuppressionList};
use crate::template::{expand, parse_template, Binding, ExpansionConfig, TemplateGroup, MASK_SLOT};

/// Failing cases listed per test in reports.
pub const DEFAULT_EXEMPLARS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Seeds every test that does not pin its own.
    pub seed: u64,
    pub exemplars: usize,
    /// Rejected suggestions, honoured by `auto_accept_top_k`.
    #[serde(default, skip_serializing_if = "SuppressionList::is_empty")]
    pub suppressed: SuppressionList,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { seed: crate::DEFAULT_SEED, exemplars: DEFAULT_EXEMPLARS, suppressed: SuppressionList::default() }
    }
}

/// Inputs predicted so far, across the whole run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub test: String,
    pub done: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub id: usize,
    pub texts: Vec<String>,
    #[serde(default, skip_serializing_if = "Binding::is_empty")]
    pub binding: Binding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbed: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub deltas: Vec<FieldDelta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<Vec<String>>,
    /// Keyed by role: `pred` (MFT), `orig`/`pert` (INV, DIR), `ab`/`ba`/`ac`/`bc` (relations).
    pub predictions: BTreeMap<String, Prediction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<CaseVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CaseResult {
    pub fn passed(&self) -> Option<bool> {
        self.verdict.as_ref().map(|v| v.pass)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRate {
    pub query: TagQuery,
    pub n_cases: usize,
    pub failed: usize,
    pub failure_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub name: String,
    pub capability: Capability,
    pub test_type: TestType,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub expectation: ExpectationSpec,
    /// Cases with a verdict.
    pub n_cases: usize,
    pub failed: usize,
    /// Cases whose predictions could not be obtained.
    pub errored: usize,
    /// Inputs the perturbation did not apply to.
    pub skipped: usize,
    /// Percentage; absent when no case has a verdict.
    pub failure_rate: Option<f64>,
    /// Ids of the first failing cases.
    pub exemplars: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slices: Vec<SliceRate>,
    pub cases: Vec<CaseResult>,
}

impl TestResult {
    pub fn rate(&self) -> Option<FailureRate> {
        (self.n_cases > 0).then_some(FailureRate { failed: self.failed, total: self.n_cases })
    }

    pub fn case(&self, id: usize) -> Option<&CaseResult> {
        self.cases.iter().find(|c| c.id == id)
    }

    pub fn verdicts(&self) -> Vec<CaseVerdict> {
        self.cases.iter().filter_map(|c| c.verdict.clone()).collect()
    }

    /// Failure rate over the judged cases whose binding matches `query`.
    pub fn slice(&self, query: &TagQuery) -> Option<FailureRate> {
        let (mut total, mut failed) = (0, 0);
        for c in &self.cases {
            if let Some(pass) = c.passed() {
                if c.binding.matches(query) {
                    total += 1;
                    failed += usize::from(!pass);
                }
            }
        }
        (total > 0).then_some(FailureRate { failed, total })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub adapter: String,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub schema_version: u32,
    pub suite: String,
    pub metadata: RunMetadata,
    pub tests: Vec<TestResult>,
}

impl SuiteResult {
    pub fn test(&self, name: &str) -> Option<&TestResult> {
        self.tests.iter().find(|t| t.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result serializes");
        s.push('\n');
        s
    }

    pub fn from_json(src: &str) -> Result<Self, SuiteError> {
        let value: serde_json::Value = serde_json::from_str(src).map_err(|e| SuiteError::Parse(e.to_string()))?;
        let found = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0);
        if found != u64::from(SCHEMA_VERSION) {
            return Err(SuiteError::SchemaVersionMismatch { found, expected: SCHEMA_VERSION });
        }
        serde_json::from_value(value).map_err(|e| SuiteError::Parse(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SuiteError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json())
            .map_err(|e| SuiteError::Io { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SuiteError> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path)
            .map_err(|e| SuiteError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json(&src)
    }
}

/// Failure rate of `test` restricted to cases whose binding matches `query`.
pub fn slice_result(result: &SuiteResult, test: &str, query: &TagQuery) -> Result<FailureRate, SuiteError> {
    let t = result.test(test).ok_or_else(|| SuiteError::UnknownTest(test.to_string()))?;
    t.slice(query).ok_or_else(|| SuiteError::NoMatchingCases { test: test.to_string(), query: query.to_string() })
}

struct PlannedCase {
    texts: Vec<String>,
    binding: Binding,
    perturbed: Option<Vec<String>>,
    deltas: Vec<FieldDelta>,
    expected: Option<Vec<String>>,
    roles: Vec<(&'static str, Vec<String>)>,
}

struct PlannedTest {
    cases: Vec<PlannedCase>,
    skipped: usize,
}

fn skippable(e: &PerturbError) -> bool {
    matches!(
        e,
        PerturbError::NoSwapSite
            | PerturbError::NoEntityFound(_)
            | PerturbError::NoReplacement(_)
            | PerturbError::NotApplicable
    )
}

/// Fills `{mask}` with the top `k` offline suggestions of every masked
/// template, pooled in first-seen order and bound as [`AUTO_MASK_SLOT`].
fn auto_accept(
    group: &TemplateGroup,
    store: &LexiconStore,
    k: usize,
    suppressed: &SuppressionList,
) -> Result<(TemplateGroup, LexiconStore), String> {
    let provider = StubProvider::default();
    let mut fills: Vec<LexiconEntry> = Vec::new();
    for t in group.templates().iter().filter(|t| t.slots().any(|s| s.name == MASK_SLOT)) {
        let template = t.to_source();
        let query = MaskQuery::new(template.clone(), k).map_err(|e| e.to_string())?;
        let mut blocked = SuppressionList::default();
        for text in suppressed.for_template(&template).into_iter().chain(suppressed.for_template(suggest::ANY_TEMPLATE))
        {
            blocked.add(&template, &text);
        }
        for s in suggest::suggest(&provider, &query, &blocked).map_err(|e| e.to_string())? {
            if !fills.iter().any(|e| e.text == s.text) {
                fills.push(LexiconEntry::new(s.text));
            }
        }
    }
    if fills.is_empty() {
        return Err("every suggestion for `{mask}` is suppressed".into());
    }
    let mut store = store.clone();
    let name = AUTO_MASK_LEXICON;
    store.insert(name, fills).map_err(|e| e.to_string())?;
    Ok((group.resolve_mask(AUTO_MASK_SLOT, name), store))
}

/// Binding key of auto-accepted mask fills (slice with `mask_fill=word`).
pub const AUTO_MASK_SLOT: &str = "mask_fill";
const AUTO_MASK_LEXICON: &str = "@mask";

fn plan_test(
    def: &TestDefinition,
    store: &LexiconStore,
    test_seed: u64,
    suppressed: &SuppressionList,
) -> Result<PlannedTest, SuiteError> {
    let err = |m: &dyn std::fmt::Display| SuiteError::test(&def.name, m);
    let inputs: Vec<(Vec<String>, Binding)> = match &def.generator {
        Generator::Templates { group, .. } => {
            let cfg = ExpansionConfig { max_cases: def.max_cases, seed: test_seed, dedupe: true };
            let resolved;
            let (group, store) = match def.auto_accept_top_k {
                Some(k) if group.has_mask() => {
                    resolved = auto_accept(group, store, k, suppressed).map_err(|e| err(&e))?;
                    (&resolved.0, &resolved.1)
                }
                _ => (group, store),
            };
            expand(group, store, &cfg).map_err(|e| err(&e))?.into_iter().map(|c| (c.texts, c.binding)).collect()
        }
        Generator::Corpus { inputs, .. } => {
            let all = inputs.iter().map(|i| (i.texts(), Binding::new()));
            match def.max_cases {
                Some(k) => all.take(k).collect(),
                None => all.collect(),
            }
        }
    };
    if inputs.is_empty() {
        return Err(err(&"generator produced no cases"));
    }

    let expected_templates = match &def.expectation {
        ExpectationSpec::Mft { expected_labels } => Some(
            expected_labels.iter().map(|l| parse_template(l)).collect::<Result<Vec<_>, _>>().map_err(|e| err(&e))?,
        ),
        _ => None,
    };
    let perturb_stream = seed::derive(test_seed, 1);

    let mut cases = Vec::with_capacity(inputs.len());
    let mut skipped = 0;
    for (i, (texts, binding)) in inputs.into_iter().enumerate() {
        let expected = match &expected_templates {
            Some(ts) => {
                Some(ts.iter().map(|t| t.render(&binding)).collect::<Result<Vec<_>, _>>().map_err(|e| err(&e))?)
            }
            None => None,
        };
        let (perturbed, deltas) = match def.generator.perturbation() {
            Some(p) => match p.apply(&texts, def.generator.fields(), store, seed::derive(perturb_stream, i as u64)) {
                Ok(v) => (Some(v.texts), v.deltas),
                Err(e) if skippable(&e) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(err(&e)),
            },
            None => (None, Vec::new()),
        };
        let roles = match &def.expectation {
            ExpectationSpec::Mft { .. } => vec![("pred", texts.clone())],
            ExpectationSpec::Inv { .. } | ExpectationSpec::DirMonotonic { .. } | ExpectationSpec::DirTarget { .. } => {
                vec![("orig", texts.clone()), ("pert", perturbed.clone().expect("validated"))]
            }
            ExpectationSpec::Relation { relation, .. } => match (relation, texts.as_slice()) {
                (RelationKind::Symmetry, [a, b]) => {
                    vec![("ab", vec![a.clone(), b.clone()]), ("ba", vec![b.clone(), a.clone()])]
                }
                (RelationKind::Implication, [a, b, c]) => vec![
                    ("ab", vec![a.clone(), b.clone()]),
                    ("ac", vec![a.clone(), c.clone()]),
                    ("bc", vec![b.clone(), c.clone()]),
                ],
                (RelationKind::Symmetry, _) => return Err(err(&"symmetry needs 2-text inputs")),
                (RelationKind::Implication, _) => return Err(err(&"implication needs 3-text inputs")),
            },
        };
        cases.push(PlannedCase { texts, binding, perturbed, deltas, expected, roles });
    }
    if cases.is_empty() {
        return Err(err(&format!("perturbation applied to none of the {skipped} inputs")));
    }
    Ok(PlannedTest { cases, skipped })
}

fn evaluate(
    def: &TestDefinition,
    id: usize,
    case: &PlannedCase,
    preds: &BTreeMap<String, Prediction>,
) -> Result<CaseVerdict, SuiteError> {
    let role = |r: &str| &preds[r];
    let spec = &def.expectation;
    let v = match spec {
        ExpectationSpec::Mft { .. } => {
            expect::eval_mft_labels(id, role("pred"), case.expected.as_deref().unwrap_or_default())
        }
        ExpectationSpec::Inv { .. } => expect::eval_inv(id, role("orig"), role("pert"), spec),
        ExpectationSpec::DirMonotonic { .. } | ExpectationSpec::DirTarget { .. } => {
            expect::eval_dir(id, role("orig"), role("pert"), spec)
        }
        ExpectationSpec::Relation { .. } => expect::eval_relation(id, preds, spec),
    };
    v.map_err(|e| SuiteError::test(&def.name, e))
}

pub fn run_suite(
    suite: &TestSuite,
    store: &LexiconStore,
    gateway: &Gateway,
    cfg: &RunConfig,
) -> Result<SuiteResult, SuiteError> {
    run_suite_with_progress(suite, store, gateway, cfg, &|_| {})
}

/// Expands every test, predicts through `gateway`, and evaluates. Tests run
/// in suite order; within a test, predictions fan out over the gateway's
/// workers.
pub fn run_suite_with_progress(
    suite: &TestSuite,
    store: &LexiconStore,
    gateway: &Gateway,
    cfg: &RunConfig,
    progress: &(dyn Fn(Progress) + Sync),
) -> Result<SuiteResult, SuiteError> {
    suite.validate()?;
    let seeds: Vec<u64> = suite
        .tests
        .iter()
        .enumerate()
        .map(|(i, t)| t.seed.unwrap_or_else(|| seed::derive(cfg.seed, i as u64)))
        .collect();
    let plans = suite
        .tests
        .iter()
        .zip(&seeds)
        .map(|(def, &s)| plan_test(def, store, s, &cfg.suppressed))
        .collect::<Result<Vec<_>, _>>()?;

    let total: usize = plans.iter().flat_map(|p| &p.cases).map(|c| c.roles.len()).sum();
    let done = AtomicUsize::new(0);
    let mut tests = Vec::with_capacity(plans.len());
    for (def, plan) in suite.tests.iter().zip(plans) {
        let inputs: Vec<Vec<String>> = plan.cases.iter().flat_map(|c| c.roles.iter().map(|(_, t)| t.clone())).collect();
        let report = |n: usize| {
            let d = done.fetch_add(n, Ordering::SeqCst) + n;
            progress(Progress { test: def.name.clone(), done: d, total });
        };
        let mut preds = gateway
            .predict_batch_with_progress(&inputs, &report)
            .map_err(|source| SuiteError::Model { test: def.name.clone(), source })?
            .into_iter();

        let mut cases = Vec::with_capacity(plan.cases.len());
        let (mut failed, mut errored, mut judged) = (0, 0, 0);
        let mut exemplars = Vec::new();
        for (id, case) in plan.cases.iter().enumerate() {
            let mut predictions = BTreeMap::new();
            let mut error = None;
            for (role, _) in &case.roles {
                match preds.next().expect("one prediction per input") {
                    Ok(p) => {
                        predictions.insert(role.to_string(), p);
                    }
                    Err(e) => {
                        error.get_or_insert_with(|| format!("{role}: {e}"));
                    }
                }
            }
            let verdict = match error {
                None => Some(evaluate(def, id, case, &predictions)?),
                Some(_) => {
                    errored += 1;
                    None
                }
            };
            if let Some(v) = &verdict {
                judged += 1;
                if !v.pass {
                    failed += 1;
                    if exemplars.len() < cfg.exemplars {
                        exemplars.push(id);
                    }
                }
            }
            cases.push(CaseResult {
                id,
                texts: case.texts.clone(),
                binding: case.binding.clone(),
                perturbed: case.perturbed.clone(),
                deltas: case.deltas.clone(),
                expected: case.expected.clone(),
                predictions,
                verdict,
                error,
            });
        }
        let mut result = TestResult {
            name: def.name.clone(),
            capability: def.capability.clone(),
            test_type: def.test_type,
            description: def.description.clone(),
            expectation: def.expectation.clone(),
            n_cases: judged,
            failed,
            errored,
            skipped: plan.skipped,
            failure_rate: (judged > 0).then(|| FailureRate { failed, total: judged }.percent()),
            exemplars,
            slices: Vec::new(),
            cases,
        };
        result.slices = def
            .slices
            .iter()
            .map(|q| {
                let r = result.slice(q);
                SliceRate {
                    query: q.clone(),
                    n_cases: r.map_or(0, |r| r.total),
                    failed: r.map_or(0, |r| r.failed),
                    failure_rate: r.map(|r| r.percent()),
                }
            })
            .collect();
        tests.push(result);
    }

    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    Ok(SuiteResult {
        schema_version: SCHEMA_VERSION,
        suite: suite.name.clone(),
        metadata: RunMetadata { adapter: gateway.fingerprint(), seed: cfg.seed, timestamp },
        tests,
    })
}
