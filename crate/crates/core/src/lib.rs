//! Black-box behavioral testing for NLP models.
//!
//! Tests are generated from templates filled with tagged lexicons, or from
//! perturbations of an existing corpus, and checked against one of three
//! expectation kinds:
//!
//! * **MFT** (minimum functionality): the prediction must be one of the
//!   expected labels.
//! * **INV** (invariance): a label-preserving perturbation must not change the
//!   prediction.
//! * **DIR** (directional): the prediction must move (or not move) in a given
//!   direction, or land on a target label.
//!
//! Results are aggregated into a capability × test-type matrix of failure
//! rates, and can be sliced by the metadata tags carried by template bindings.
//!
//! The crate is organised bottom-up:
//!
//! | module | role |
//! |---|---|
//! | [`template`] | template DSL parser and Cartesian expansion |
//! | [`lexicon`] | tagged fill-in lists, thesaurus |
//! | [`suggest`] | masked fill-in suggestions and triage into lexicons |
//! | [`perturb`] | provenance-tracked text perturbations |
//! | [`expect`] | MFT / INV / DIR / relational verdicts, failure rates |
//! | [`model`] | black-box model adapters, prediction cache, toy models |
//! | [`suite`] | test definitions, suite runs, slicing, reports |
//! | [`service`] | local HTTP endpoints backing the triage workbench |

pub mod bundled;
pub mod expect;
pub mod lexicon;
pub mod model;
pub mod perturb;
pub mod seed;
pub mod service;
pub mod suggest;
pub mod suite;
pub mod template;

pub use expect::{CaseVerdict, ExpectationSpec, FailureRate, Prediction, Task};
pub use lexicon::{LexiconEntry, LexiconStore, TagQuery, Tags};
pub use model::{AdapterSpec, Gateway};
pub use suite::{RunConfig, SuiteResult, TestDefinition, TestSuite};
pub use template::{Binding, ExpansionConfig, TemplateAst, TemplateGroup};

/// Seed used when the caller does not supply one.
pub const DEFAULT_SEED: u64 = 42;
