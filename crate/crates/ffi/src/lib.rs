//! C ABI over `nlpcheck`.
//!
//! Conventions:
//!
//! * Every fallible function returns an [`NcStatus`]; results come back
//!   through out-pointers, which are left untouched on failure.
//! * On a non-`NC_STATUS_OK` return, [`nc_last_error`] describes the failure
//!   for the calling thread until its next call into this library.
//! * Handles ([`NcLexicons`], [`NcSuite`], [`NcResult`]) are opaque and owned
//!   by the caller; release them with the matching `*_free`. Strings returned
//!   through `char **` are released with [`nc_string_free`].
//! * All strings are NUL-terminated UTF-8.
//! * Panics never cross the boundary; they surface as `NC_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nlpcheck::expect::{self, ExpectationSpec, Prediction};
use nlpcheck::lexicon::{LexiconStore, TagQuery};
use nlpcheck::model::{AdapterSpec, Gateway};
use nlpcheck::suite::{self, ReportFormat, RunConfig, SuiteError, SuiteResult, TestSuite};
use nlpcheck::template::{expand, ExpansionConfig, TemplateGroup};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NcStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Malformed input: template, lexicon source, suite JSON, adapter spec, query.
    Parse = 3,
    /// A template slot names a lexicon that does not exist.
    MissingLexicon = 4,
    /// A value outside its domain (probability, tolerance).
    OutOfRange = 5,
    /// The model could not be reached or returned malformed output.
    Model = 6,
    /// No test with that name, or no cases match the slice.
    NotFound = 7,
    /// Failure rate of a test with no evaluated cases.
    EmptyTest = 8,
    /// Other failures (I/O, serialization).
    Failed = 9,
    /// A panic was caught at the boundary.
    Internal = 10,
}

/// Tagged lexicons used to fill template slots.
pub struct NcLexicons(LexiconStore);

/// A parsed, validated test suite.
pub struct NcSuite(TestSuite);

/// Outcome of a suite run.
pub struct NcResult(SuiteResult);

/// Report format for [`nc_result_render`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NcFormat {
    Markdown = 0,
    Csv = 1,
    Json = 2,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Fail(NcStatus, String);

impl Fail {
    fn new(status: NcStatus, msg: impl ToString) -> Self {
        Fail(status, msg.to_string())
    }
}

impl From<SuiteError> for Fail {
    fn from(e: SuiteError) -> Self {
        let status = match &e {
            SuiteError::Parse(_) | SuiteError::SchemaVersionMismatch { .. } | SuiteError::Test { .. } => {
                NcStatus::Parse
            }
            SuiteError::UnknownTest(_) | SuiteError::NoMatchingCases { .. } => NcStatus::NotFound,
            SuiteError::Model { .. } => NcStatus::Model,
            _ => NcStatus::Failed,
        };
        Fail::new(status, e)
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NcStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            NcStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::new(NcStatus::NullArgument, format!("`{name}` is NULL")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::new(NcStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail::new(NcStatus::NullArgument, format!("`{name}` is NULL")))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail::new(NcStatus::NullArgument, format!("`{name}` is NULL")))
    } else {
        Ok(())
    }
}

fn into_c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s).map(CString::into_raw).map_err(|_| Fail::new(NcStatus::Failed, "output contains NUL"))
}

/// Message for the calling thread's last failure, or NULL. Borrowed: valid
/// until the thread's next call into this library; do not free.
#[no_mangle]
pub extern "C" fn nc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned through a `char **` out-parameter. NULL is a no-op.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn nc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version, static; do not free.
#[no_mangle]
pub extern "C" fn nc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- lexicons ----

/// The bundled lexicons (adjectives, nouns, names, locations, ...).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nc_lexicons_bundled(out: *mut *mut NcLexicons) -> NcStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(NcLexicons(nlpcheck::bundled::all_lexicons())));
        Ok(())
    })
}

/// Parses lexicons from source text (`[name]` headers, `text<TAB>k=v;k=v`).
///
/// # Safety
/// `src` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nc_lexicons_parse(src: *const c_char, out: *mut *mut NcLexicons) -> NcStatus {
    guard(|| {
        let src = str_arg(src, "src")?;
        out_arg(out, "out")?;
        let store = LexiconStore::parse(src).map_err(|e| Fail::new(NcStatus::Parse, e))?;
        *out = Box::into_raw(Box::new(NcLexicons(store)));
        Ok(())
    })
}

/// Adds every list of `extra` whose name `lexicons` lacks.
///
/// # Safety
/// Both handles must be live.
#[no_mangle]
pub unsafe extern "C" fn nc_lexicons_merge_missing(lexicons: *mut NcLexicons, extra: *const NcLexicons) -> NcStatus {
    guard(|| {
        let extra = ref_arg(extra, "extra")?;
        let store = &mut lexicons.as_mut().ok_or_else(|| Fail::new(NcStatus::NullArgument, "`lexicons` is NULL"))?.0;
        for name in extra.0.names() {
            if !store.contains(name) {
                let entries = extra.0.entries(name).unwrap_or_default().to_vec();
                store.insert(name, entries).map_err(|e| Fail::new(NcStatus::Failed, e))?;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `lexicons` must be NULL or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nc_lexicons_free(lexicons: *mut NcLexicons) {
    if !lexicons.is_null() {
        drop(Box::from_raw(lexicons));
    }
}

// ---- templates ----

/// Expands a template group. `templates` holds `n_templates` strings
/// expanded under one shared binding. `max_cases == 0` enumerates the full
/// product; otherwise up to `max_cases` cases are sampled with `seed`.
/// Writes a JSON array of `{"texts": [...], "binding": {...}}` to `out_json`.
///
/// # Safety
/// `lexicons` must be live; `templates` must point to `n_templates` strings.
#[no_mangle]
pub unsafe extern "C" fn nc_expand(
    lexicons: *const NcLexicons,
    templates: *const *const c_char,
    n_templates: usize,
    max_cases: usize,
    seed: u64,
    out_json: *mut *mut c_char,
) -> NcStatus {
    guard(|| {
        let store = ref_arg(lexicons, "lexicons")?;
        out_arg(out_json, "out_json")?;
        if templates.is_null() {
            return Err(Fail::new(NcStatus::NullArgument, "`templates` is NULL"));
        }
        let sources =
            (0..n_templates).map(|i| str_arg(*templates.add(i), "templates[i]")).collect::<Result<Vec<_>, _>>()?;
        let group = TemplateGroup::parse(&sources).map_err(|e| Fail::new(NcStatus::Parse, e))?;
        let cfg = ExpansionConfig { max_cases: (max_cases > 0).then_some(max_cases), seed, dedupe: true };
        let cases = expand(&group, &store.0, &cfg).map_err(|e| {
            let status = if matches!(e, nlpcheck::template::TemplateError::MissingLexicon { .. }) {
                NcStatus::MissingLexicon
            } else {
                NcStatus::Parse
            };
            Fail::new(status, e)
        })?;
        let json = serde_json::to_string(&cases).map_err(|e| Fail::new(NcStatus::Failed, e))?;
        *out_json = into_c_string(json)?;
        Ok(())
    })
}

// ---- expectations ----

/// Three-way sentiment label for a positive-class probability:
/// `negative` up to 1/3, `neutral` below 2/3, `positive` above.
/// `*out_label` is static; do not free.
///
/// # Safety
/// `out_label` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nc_neutral_band(prob_pos: f64, out_label: *mut *const c_char) -> NcStatus {
    guard(|| {
        out_arg(out_label, "out_label")?;
        let label = expect::neutral_band(prob_pos).map_err(|e| Fail::new(NcStatus::OutOfRange, e))?;
        *out_label = match label {
            expect::NEGATIVE => c"negative".as_ptr(),
            expect::NEUTRAL => c"neutral".as_ptr(),
            _ => c"positive".as_ptr(),
        };
        Ok(())
    })
}

/// INV verdict for one original/perturbed pair: fails iff the label changed
/// and the score moved by more than `tolerance`.
///
/// # Safety
/// Label pointers must be NUL-terminated strings; `out_pass` valid.
#[no_mangle]
pub unsafe extern "C" fn nc_eval_inv(
    orig_label: *const c_char,
    orig_score: f64,
    pert_label: *const c_char,
    pert_score: f64,
    tolerance: f64,
    out_pass: *mut bool,
) -> NcStatus {
    guard(|| {
        let a = Prediction::label(str_arg(orig_label, "orig_label")?, orig_score);
        let b = Prediction::label(str_arg(pert_label, "pert_label")?, pert_score);
        out_arg(out_pass, "out_pass")?;
        let spec = ExpectationSpec::Inv { tolerance };
        spec.validate().map_err(|e| Fail::new(NcStatus::OutOfRange, e))?;
        let verdict = expect::eval_inv(0, &a, &b, &spec).map_err(|e| Fail::new(NcStatus::OutOfRange, e))?;
        *out_pass = verdict.pass;
        Ok(())
    })
}

// ---- suites ----

/// Parses and validates a suite from JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nc_suite_from_json(json: *const c_char, out: *mut *mut NcSuite) -> NcStatus {
    guard(|| {
        let json = str_arg(json, "json")?;
        out_arg(out, "out")?;
        let suite = TestSuite::from_json(json)?;
        *out = Box::into_raw(Box::new(NcSuite(suite)));
        Ok(())
    })
}

/// Loads a suite file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nc_suite_load(path: *const c_char, out: *mut *mut NcSuite) -> NcStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        out_arg(out, "out")?;
        let suite = TestSuite::load(path)?;
        *out = Box::into_raw(Box::new(NcSuite(suite)));
        Ok(())
    })
}

/// A bundled suite: `sentiment_mini`, `sentiment`, `qqp` or `mc`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nc_suite_bundled(name: *const c_char, out: *mut *mut NcSuite) -> NcStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        out_arg(out, "out")?;
        let suite = nlpcheck::bundled::suite(name)
            .ok_or_else(|| Fail::new(NcStatus::NotFound, format!("no bundled suite `{name}`")))??;
        *out = Box::into_raw(Box::new(NcSuite(suite)));
        Ok(())
    })
}

/// Number of tests in the suite.
///
/// # Safety
/// `suite` must be NULL or live.
#[no_mangle]
pub unsafe extern "C" fn nc_suite_len(suite: *const NcSuite) -> usize {
    suite.as_ref().map_or(0, |s| s.0.tests.len())
}

/// Runs every test of `suite` against the model named by `adapter`
/// (`toy`, `toy-qqp`, `toy-mc`, `batch-file:DIR`, `subprocess:CMD`, or an
/// http(s) URL). Predictions are cached in memory for the call only.
///
/// # Safety
/// Handles must be live; `adapter` a NUL-terminated string; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn nc_suite_run(
    suite: *const NcSuite,
    lexicons: *const NcLexicons,
    adapter: *const c_char,
    seed: u64,
    out: *mut *mut NcResult,
) -> NcStatus {
    guard(|| {
        let suite = ref_arg(suite, "suite")?;
        let store = ref_arg(lexicons, "lexicons")?;
        let adapter = str_arg(adapter, "adapter")?;
        out_arg(out, "out")?;
        let spec: AdapterSpec = adapter.parse().map_err(|e| Fail::new(NcStatus::Parse, e))?;
        let gateway = Gateway::from_spec(&spec).map_err(|e| Fail::new(NcStatus::Model, e))?;
        let cfg = RunConfig { seed, ..RunConfig::default() };
        let result = suite::run_suite(&suite.0, &store.0, &gateway, &cfg)?;
        *out = Box::into_raw(Box::new(NcResult(result)));
        Ok(())
    })
}

/// # Safety
/// `suite` must be NULL or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nc_suite_free(suite: *mut NcSuite) {
    if !suite.is_null() {
        drop(Box::from_raw(suite));
    }
}

// ---- results ----

/// Failure rate (percent) of one test. `query` may be NULL or empty for the
/// whole test, or a binding tag query such as `P1.gender=male` to slice it.
/// Returns `NC_STATUS_EMPTY_TEST` when no case was evaluated.
///
/// # Safety
/// `result` must be live; strings NUL-terminated; `out_percent` valid.
#[no_mangle]
pub unsafe extern "C" fn nc_result_failure_rate(
    result: *const NcResult,
    test: *const c_char,
    query: *const c_char,
    out_percent: *mut f64,
) -> NcStatus {
    guard(|| {
        let result = ref_arg(result, "result")?;
        let test = str_arg(test, "test")?;
        out_arg(out_percent, "out_percent")?;
        let query: TagQuery = if query.is_null() {
            TagQuery::any()
        } else {
            str_arg(query, "query")?.parse().map_err(|e| Fail::new(NcStatus::Parse, e))?
        };
        let rate = suite::slice_result(&result.0, test, &query)?;
        if rate.total == 0 {
            return Err(Fail::new(NcStatus::EmptyTest, format!("`{test}` has no evaluated cases")));
        }
        *out_percent = rate.percent();
        Ok(())
    })
}

/// Renders a report.
///
/// # Safety
/// `result` must be live and `out` valid. Free `*out` with [`nc_string_free`].
#[no_mangle]
pub unsafe extern "C" fn nc_result_render(
    result: *const NcResult,
    format: NcFormat,
    out: *mut *mut c_char,
) -> NcStatus {
    guard(|| {
        let result = ref_arg(result, "result")?;
        out_arg(out, "out")?;
        let format = match format {
            NcFormat::Markdown => ReportFormat::Markdown,
            NcFormat::Csv => ReportFormat::Csv,
            NcFormat::Json => ReportFormat::Json,
        };
        *out = into_c_string(suite::render_report(&result.0, format))?;
        Ok(())
    })
}

/// Full result (every case, prediction and verdict) as JSON.
///
/// # Safety
/// `result` must be live and `out` valid. Free `*out` with [`nc_string_free`].
#[no_mangle]
pub unsafe extern "C" fn nc_result_to_json(result: *const NcResult, out: *mut *mut c_char) -> NcStatus {
    guard(|| {
        let result = ref_arg(result, "result")?;
        out_arg(out, "out")?;
        *out = into_c_string(result.0.to_json())?;
        Ok(())
    })
}

/// Reads a result written by [`nc_result_to_json`] or `nlpcheck run --out`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nc_result_from_json(json: *const c_char, out: *mut *mut NcResult) -> NcStatus {
    guard(|| {
        let json = str_arg(json, "json")?;
        out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(NcResult(SuiteResult::from_json(json)?)));
        Ok(())
    })
}

/// # Safety
/// `result` must be NULL or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nc_result_free(result: *mut NcResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}
