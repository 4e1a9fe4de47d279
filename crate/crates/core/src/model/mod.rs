//! Black-box prediction access.
//!
//! Every model is reached through a [`Predictor`]: the in-process toy models,
//! or one of three adapters speaking the same line-delimited JSON records.
//!
//! ```text
//! request  {"id": 0, "texts": ["I love the flight."]}
//! response {"id": 0, "label": "positive", "score": 0.73, "distribution": {..}?, "answer_text": ".."?}
//! ```
//!
//! * `batch-file:DIR` writes `DIR/inputs.jsonl` and polls for
//!   `DIR/outputs.jsonl`.
//! * `subprocess:CMD` runs `CMD` through the shell, records on stdin/stdout.
//! * `http(s)://…` POSTs the request records as the body and reads response
//!   records back (3 retries, exponential backoff).
//!
//! The [`Gateway`] sits in front of a predictor: it consults the
//! [`PredictionCache`], dispatches misses in chunks with bounded parallelism,
//! and returns predictions aligned with the inputs.

mod adapters;
mod cache;
mod toy;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expect::{Prediction, Task};

pub use adapters::{BatchFileAdapter, NetworkAdapter, SubprocessAdapter};
pub use cache::{input_hash, PredictionCache};
pub use toy::{toy_model, ToyMc, ToyQqp, ToySentiment};

/// Per-record timeout.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_RETRIES: u32 = 3;
/// In-flight chunks.
pub const DEFAULT_JOBS: usize = 8;
const MAX_CHUNK: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("adapter unreachable: {0}")]
    AdapterUnreachable(String),
    #[error("malformed prediction at index {index}: {message}")]
    MalformedPrediction { index: usize, message: String },
    #[error("timeout at index {0}")]
    Timeout(usize),
    #[error("invalid adapter spec: {0}")]
    InvalidSpec(String),
    #[error("cache: {0}")]
    Cache(String),
}

impl ModelError {
    fn reindex(self, index: usize) -> Self {
        match self {
            ModelError::MalformedPrediction { message, .. } => ModelError::MalformedPrediction { index, message },
            ModelError::Timeout(_) => ModelError::Timeout(index),
            other => other,
        }
    }
}

pub type ItemResult = Result<Prediction, ModelError>;

/// A model seen as a function from text tuples to predictions.
///
/// `predict` returns `Err` only when nothing could be obtained (e.g. the
/// adapter cannot be reached); per-record problems are reported per item,
/// with indices relative to `inputs`.
pub trait Predictor: Send + Sync {
    fn task(&self) -> Task;
    fn fingerprint(&self) -> String;
    fn predict(&self, inputs: &[Vec<String>]) -> Result<Vec<ItemResult>, ModelError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: u64,
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: u64,
    pub label: Option<String>,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_text: Option<String>,
}

impl WireResponse {
    pub fn from_prediction(id: u64, p: &Prediction) -> Self {
        Self {
            id,
            label: p.label.clone().or_else(|| p.answer_text.clone()),
            score: p.score,
            distribution: p.distribution.clone(),
            answer_text: p.answer_text.clone(),
        }
    }

    pub fn into_prediction(self, task: Task) -> Result<Prediction, String> {
        let p = match task {
            Task::Classification => Prediction {
                task,
                label: Some(self.label.ok_or("missing label")?),
                answer_text: self.answer_text,
                score: self.score,
                distribution: self.distribution,
            },
            Task::Span => Prediction {
                task,
                label: None,
                answer_text: Some(self.answer_text.or(self.label).ok_or("missing answer_text")?),
                score: self.score,
                distribution: self.distribution,
            },
        };
        p.validate().map_err(|e| e.to_string())?;
        Ok(p)
    }
}

/// Encodes inputs as request lines (ids are input indices).
pub fn encode_requests(inputs: &[Vec<String>]) -> String {
    let mut out = String::new();
    for (i, texts) in inputs.iter().enumerate() {
        let rec = WireRequest { id: i as u64, texts: texts.clone() };
        out.push_str(&serde_json::to_string(&rec).expect("request serializes"));
        out.push('\n');
    }
    out
}

/// Matches response lines to `n` requests by id. Records that never arrive
/// become `missing(index)`.
pub fn decode_responses(body: &str, n: usize, task: Task, missing: impl Fn(usize) -> ModelError) -> Vec<ItemResult> {
    let mut slots: Vec<Option<ItemResult>> = vec![None; n];
    for line in body.lines().filter(|l| !l.trim().is_empty()) {
        let Ok(value) = serde_json::from_str::<serde_json::Value>(line) else { continue };
        let Some(id) = value.get("id").and_then(|v| v.as_u64()).map(|v| v as usize) else { continue };
        if id >= n {
            continue;
        }
        slots[id] = Some(
            serde_json::from_value::<WireResponse>(value)
                .map_err(|e| e.to_string())
                .and_then(|r| r.into_prediction(task))
                .map_err(|message| ModelError::MalformedPrediction { index: id, message }),
        );
    }
    slots.into_iter().enumerate().map(|(i, s)| s.unwrap_or_else(|| Err(missing(i)))).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    Toy,
    ToyQqp,
    ToyMc,
    BatchFile,
    Subprocess,
    Network,
}

impl AdapterKind {
    fn as_str(&self) -> &'static str {
        match self {
            AdapterKind::Toy => "toy",
            AdapterKind::ToyQqp => "toy-qqp",
            AdapterKind::ToyMc => "toy-mc",
            AdapterKind::BatchFile => "batch-file",
            AdapterKind::Subprocess => "subprocess",
            AdapterKind::Network => "network",
        }
    }
}

/// How to reach a model.
///
/// String form: `toy`, `toy-qqp`, `toy-mc`, `batch-file:DIR`,
/// `subprocess:CMD`, or an `http://` / `https://` URL. The task defaults to
/// classification (span for `toy-mc`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterSpec {
    pub kind: AdapterKind,
    #[serde(default)]
    pub target: String,
    pub task: Task,
    /// User-supplied model version, part of the cache fingerprint.
    #[serde(default)]
    pub version: String,
}

impl AdapterSpec {
    pub fn with_task(mut self, task: Task) -> Self {
        self.task = task;
        self
    }

    pub fn with_version(mut self, version: impl Into<String>) -> Self {
        self.version = version.into();
        self
    }

    /// `kind|target|version`, the cache namespace for this adapter.
    pub fn fingerprint(&self) -> String {
        let version = match self.kind {
            AdapterKind::Toy | AdapterKind::ToyQqp | AdapterKind::ToyMc if self.version.is_empty() => toy::TOY_VERSION,
            _ => &self.version,
        };
        format!("{}|{}|{}", self.kind.as_str(), self.target, version)
    }

    pub fn build(&self) -> Result<Arc<dyn Predictor>, ModelError> {
        let fp = self.fingerprint();
        Ok(match self.kind {
            AdapterKind::Toy => Arc::new(ToySentiment::new(fp)),
            AdapterKind::ToyQqp => Arc::new(ToyQqp::new(fp)),
            AdapterKind::ToyMc => Arc::new(ToyMc::new(fp)),
            AdapterKind::BatchFile => Arc::new(BatchFileAdapter::new(&self.target, self.task, fp)),
            AdapterKind::Subprocess => Arc::new(SubprocessAdapter::new(&self.target, self.task, fp)),
            AdapterKind::Network => Arc::new(NetworkAdapter::new(&self.target, self.task, fp)),
        })
    }
}

impl FromStr for AdapterSpec {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let spec =
            |kind, target: &str, task| AdapterSpec { kind, target: target.to_string(), task, version: String::new() };
        let nonempty = |t: &str, what: &str| {
            if t.trim().is_empty() {
                Err(ModelError::InvalidSpec(format!("{what} needs a target")))
            } else {
                Ok(t.trim().to_string())
            }
        };
        match s {
            "toy" | "toy-sentiment" => return Ok(spec(AdapterKind::Toy, "sentiment", Task::Classification)),
            "toy-qqp" => return Ok(spec(AdapterKind::ToyQqp, "qqp", Task::Classification)),
            "toy-mc" => return Ok(spec(AdapterKind::ToyMc, "mc", Task::Span)),
            _ => {}
        }
        if let Some(dir) = s.strip_prefix("batch-file:") {
            return Ok(spec(AdapterKind::BatchFile, &nonempty(dir, "batch-file")?, Task::Classification));
        }
        if let Some(cmd) = s.strip_prefix("subprocess:") {
            return Ok(spec(AdapterKind::Subprocess, &nonempty(cmd, "subprocess")?, Task::Classification));
        }
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(spec(AdapterKind::Network, s, Task::Classification));
        }
        Err(ModelError::InvalidSpec(format!(
            "`{s}`: expected toy, toy-qqp, toy-mc, batch-file:DIR, subprocess:CMD or an http(s) URL"
        )))
    }
}

impl fmt::Display for AdapterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            AdapterKind::Toy => f.write_str("toy"),
            AdapterKind::ToyQqp => f.write_str("toy-qqp"),
            AdapterKind::ToyMc => f.write_str("toy-mc"),
            AdapterKind::BatchFile => write!(f, "batch-file:{}", self.target),
            AdapterKind::Subprocess => write!(f, "subprocess:{}", self.target),
            AdapterKind::Network => f.write_str(&self.target),
        }
    }
}

/// Cached, parallel front end to a [`Predictor`].
#[derive(Clone)]
pub struct Gateway {
    predictor: Arc<dyn Predictor>,
    cache: Arc<PredictionCache>,
    jobs: usize,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway").field("fingerprint", &self.predictor.fingerprint()).field("jobs", &self.jobs).finish()
    }
}

impl Gateway {
    pub fn new(predictor: Arc<dyn Predictor>) -> Self {
        Self { predictor, cache: Arc::new(PredictionCache::in_memory()), jobs: DEFAULT_JOBS }
    }

    pub fn from_spec(spec: &AdapterSpec) -> Result<Self, ModelError> {
        Ok(Self::new(spec.build()?))
    }

    pub fn with_cache(mut self, cache: Arc<PredictionCache>) -> Self {
        self.cache = cache;
        self
    }

    pub fn with_jobs(mut self, jobs: usize) -> Self {
        self.jobs = jobs.max(1);
        self
    }

    pub fn fingerprint(&self) -> String {
        self.predictor.fingerprint()
    }

    pub fn task(&self) -> Task {
        self.predictor.task()
    }

    pub fn cache(&self) -> &PredictionCache {
        &self.cache
    }

    pub fn predict_batch(&self, inputs: &[Vec<String>]) -> Result<Vec<ItemResult>, ModelError> {
        self.predict_batch_with_progress(inputs, &|_| {})
    }

    /// Like [`predict_batch`](Self::predict_batch); `progress` receives the
    /// number of newly completed inputs as chunks finish.
    pub fn predict_batch_with_progress(
        &self,
        inputs: &[Vec<String>],
        progress: &(dyn Fn(usize) + Sync),
    ) -> Result<Vec<ItemResult>, ModelError> {
        let fp = self.predictor.fingerprint();
        let task = self.predictor.task();
        let hashes: Vec<String> = inputs.iter().map(|t| input_hash(task, t)).collect();

        let mut out: Vec<Option<ItemResult>> = vec![None; inputs.len()];
        // unique misses, each with the input positions waiting on it
        let mut misses: Vec<(usize, Vec<usize>)> = Vec::new();
        let mut pending: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
        let mut hits = 0;
        for (i, h) in hashes.iter().enumerate() {
            if let Some(p) = self.cache.get(&fp, h) {
                out[i] = Some(Ok(p));
                hits += 1;
            } else if let Some(&m) = pending.get(h.as_str()) {
                misses[m].1.push(i);
            } else {
                pending.insert(h, misses.len());
                misses.push((i, vec![i]));
            }
        }
        if hits > 0 {
            progress(hits);
        }
        if misses.is_empty() {
            return Ok(out.into_iter().map(|r| r.expect("all hits")).collect());
        }

        let chunk = misses.len().div_ceil(self.jobs).clamp(1, MAX_CHUNK);
        let chunks: Vec<&[(usize, Vec<usize>)]> = misses.chunks(chunk).collect();
        let next = AtomicUsize::new(0);
        type Slot = Option<Result<Vec<ItemResult>, ModelError>>;
        let results: Mutex<Vec<Slot>> = Mutex::new(vec![None; chunks.len()]);
        let workers = self.jobs.min(chunks.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let c = next.fetch_add(1, Ordering::SeqCst);
                    let Some(items) = chunks.get(c) else { break };
                    let batch: Vec<Vec<String>> = items.iter().map(|(i, _)| inputs[*i].clone()).collect();
                    let r = self.predictor.predict(&batch);
                    if let Ok(preds) = &r {
                        for ((first, _), pred) in items.iter().zip(preds) {
                            if let Ok(p) = pred {
                                // a failed cache write only loses persistence
                                let _ = self.cache.put(&fp, &hashes[*first], p);
                            }
                        }
                    }
                    let done: usize = items.iter().map(|(_, w)| w.len()).sum();
                    results.lock().expect("results lock")[c] = Some(r);
                    progress(done);
                });
            }
        });

        let results = results.into_inner().expect("results lock");
        let mut unreachable = None;
        for (items, r) in chunks.iter().zip(results) {
            match r.expect("every chunk ran") {
                Ok(preds) if preds.len() == items.len() => {
                    for ((_, waiting), pred) in items.iter().zip(preds) {
                        for &i in waiting {
                            out[i] = Some(pred.clone().map_err(|e| e.reindex(i)));
                        }
                    }
                }
                Ok(preds) => {
                    let message = format!("adapter returned {} predictions for {} inputs", preds.len(), items.len());
                    for (_, waiting) in items.iter() {
                        for &i in waiting {
                            out[i] = Some(Err(ModelError::MalformedPrediction { index: i, message: message.clone() }));
                        }
                    }
                }
                Err(e) => {
                    unreachable.get_or_insert(e.clone());
                    for (_, waiting) in items.iter() {
                        for &i in waiting {
                            out[i] = Some(Err(e.clone().reindex(i)));
                        }
                    }
                }
            }
        }
        // nothing at all came back: the adapter is down, not flaky
        if let Some(e) = unreachable {
            if out.iter().all(|r| r.as_ref().is_some_and(|r| r.is_err())) {
                return Err(e);
            }
        }
        Ok(out.into_iter().map(|r| r.expect("every input resolved")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(items: &[&str]) -> Vec<Vec<String>> {
        items.iter().map(|t| vec![t.to_string()]).collect()
    }

    #[test]
    fn spec_parsing() {
        assert_eq!("toy".parse::<AdapterSpec>().unwrap().kind, AdapterKind::Toy);
        assert_eq!("toy-mc".parse::<AdapterSpec>().unwrap().task, Task::Span);
        let s: AdapterSpec = "subprocess:python3 model.py".parse().unwrap();
        assert_eq!(s.target, "python3 model.py");
        assert_eq!(s.to_string(), "subprocess:python3 model.py");
        let s: AdapterSpec = "http://127.0.0.1:9/predict".parse().unwrap();
        assert_eq!(s.kind, AdapterKind::Network);
        assert!("subprocess:".parse::<AdapterSpec>().is_err());
        assert!("gpt".parse::<AdapterSpec>().is_err());
    }

    #[test]
    fn fingerprint_includes_version() {
        let a: AdapterSpec = "subprocess:m".parse().unwrap();
        let b = a.clone().with_version("v2");
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(b.fingerprint(), "subprocess|m|v2");
    }

    #[test]
    fn toy_gateway_examples() {
        let g = Gateway::from_spec(&"toy".parse().unwrap()).unwrap();
        let out = g.predict_batch(&texts(&["I love the flight.", "The company is Australian."])).unwrap();
        let love = out[0].as_ref().unwrap();
        assert_eq!(love.label.as_deref(), Some("positive"));
        assert!((love.score - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
        let neutral = out[1].as_ref().unwrap();
        assert_eq!(neutral.label.as_deref(), Some("neutral"));
        assert_eq!(neutral.score, 0.5);
        assert!(g.predict_batch(&[]).unwrap().is_empty());
    }

    #[test]
    fn warm_cache_equals_cold() {
        let g = Gateway::from_spec(&"toy".parse().unwrap()).unwrap().with_jobs(3);
        let inputs = texts(&["good", "bad", "not good", "good", "", "I hate it"]);
        let cold = g.predict_batch(&inputs).unwrap();
        assert_eq!(g.cache().len(), 5);
        let warm = g.predict_batch(&inputs).unwrap();
        assert_eq!(cold, warm);
    }

    struct Flaky;

    impl Predictor for Flaky {
        fn task(&self) -> Task {
            Task::Classification
        }
        fn fingerprint(&self) -> String {
            "flaky".into()
        }
        fn predict(&self, inputs: &[Vec<String>]) -> Result<Vec<ItemResult>, ModelError> {
            Ok(inputs
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    if t[0] == "bad" {
                        Err(ModelError::MalformedPrediction { index: i, message: "nope".into() })
                    } else {
                        Ok(Prediction::label("x", 0.5))
                    }
                })
                .collect())
        }
    }

    #[test]
    fn per_item_errors_do_not_abort() {
        let g = Gateway::new(Arc::new(Flaky)).with_jobs(2);
        let out = g.predict_batch(&texts(&["a", "bad", "c", "d", "bad"])).unwrap();
        assert!(out[0].is_ok() && out[2].is_ok() && out[3].is_ok());
        assert!(matches!(out[1], Err(ModelError::MalformedPrediction { index: 1, .. })));
        assert!(matches!(out[4], Err(ModelError::MalformedPrediction { index: 4, .. })));
    }

    #[test]
    fn wire_decoding() {
        let body = "{\"id\":1,\"label\":\"neg\",\"score\":0.2}\n{\"id\":0,\"label\":\"pos\",\"score\":1.5}\n";
        let out = decode_responses(body, 3, Task::Classification, ModelError::Timeout);
        assert!(matches!(out[0], Err(ModelError::MalformedPrediction { index: 0, .. })));
        assert_eq!(out[1].as_ref().unwrap().label.as_deref(), Some("neg"));
        assert_eq!(out[2], Err(ModelError::Timeout(2)));
        assert_eq!(encode_requests(&[vec!["a".into(), "b".into()]]), "{\"id\":0,\"texts\":[\"a\",\"b\"]}\n");
    }
}
