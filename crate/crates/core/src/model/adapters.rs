//! Batch-file, subprocess and network adapters.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::{mpsc, Arc, Mutex};
use std::time::{Duration, Instant};

use super::{decode_responses, encode_requests, ItemResult, ModelError, Predictor, DEFAULT_RETRIES, DEFAULT_TIMEOUT};
use crate::expect::Task;

const POLL_INTERVAL: Duration = Duration::from_millis(50);
const BACKOFF_BASE: Duration = Duration::from_millis(250);

/// Writes `inputs.jsonl` into a directory and waits for an external process
/// to produce `outputs.jsonl` with one record per input.
///
/// One batch is in flight at a time. `inputs.jsonl` appears atomically
/// (written aside, then renamed) after any stale `outputs.jsonl` is removed.
#[derive(Debug, Clone)]
pub struct BatchFileAdapter {
    dir: PathBuf,
    task: Task,
    fingerprint: String,
    pub timeout: Duration,
    in_flight: Arc<Mutex<()>>,
}

impl BatchFileAdapter {
    pub fn new(dir: impl Into<PathBuf>, task: Task, fingerprint: impl Into<String>) -> Self {
        Self {
            dir: dir.into(),
            task,
            fingerprint: fingerprint.into(),
            timeout: DEFAULT_TIMEOUT,
            in_flight: Arc::new(Mutex::new(())),
        }
    }
}

impl Predictor for BatchFileAdapter {
    fn task(&self) -> Task {
        self.task
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn predict(&self, inputs: &[Vec<String>]) -> Result<Vec<ItemResult>, ModelError> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let _turn = self.in_flight.lock().unwrap_or_else(|p| p.into_inner());
        let unreachable = |e: std::io::Error| ModelError::AdapterUnreachable(format!("{}: {e}", self.dir.display()));
        std::fs::create_dir_all(&self.dir).map_err(unreachable)?;
        let outputs = self.dir.join("outputs.jsonl");
        match std::fs::remove_file(&outputs) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(unreachable(e)),
            _ => {}
        }
        let staged = self.dir.join(".inputs.jsonl.tmp");
        std::fs::write(&staged, encode_requests(inputs)).map_err(unreachable)?;
        std::fs::rename(&staged, self.dir.join("inputs.jsonl")).map_err(unreachable)?;

        let deadline = Instant::now() + self.timeout * inputs.len() as u32;
        let mut body = String::new();
        loop {
            if let Ok(text) = std::fs::read_to_string(&outputs) {
                body = text;
                let complete = body.ends_with('\n') || body.is_empty();
                if complete && body.lines().filter(|l| !l.trim().is_empty()).count() >= inputs.len() {
                    break;
                }
            }
            if Instant::now() >= deadline {
                break;
            }
            std::thread::sleep(POLL_INTERVAL);
        }
        Ok(decode_responses(&body, inputs.len(), self.task, ModelError::Timeout))
    }
}

/// Runs a shell command per batch: request records on stdin, response
/// records on stdout.
#[derive(Debug, Clone)]
pub struct SubprocessAdapter {
    command: String,
    task: Task,
    fingerprint: String,
    pub timeout: Duration,
}

impl SubprocessAdapter {
    pub fn new(command: impl Into<String>, task: Task, fingerprint: impl Into<String>) -> Self {
        Self { command: command.into(), task, fingerprint: fingerprint.into(), timeout: DEFAULT_TIMEOUT }
    }
}

impl Predictor for SubprocessAdapter {
    fn task(&self) -> Task {
        self.task
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn predict(&self, inputs: &[Vec<String>]) -> Result<Vec<ItemResult>, ModelError> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ModelError::AdapterUnreachable(format!("{}: {e}", self.command)))?;

        let mut stdin = child.stdin.take().expect("piped stdin");
        let payload = encode_requests(inputs);
        let writer = std::thread::spawn(move || {
            // the child may exit early; its answers (or their absence) decide the outcome
            let _ = stdin.write_all(payload.as_bytes());
        });

        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });

        let mut body = String::new();
        let mut received = 0;
        let mut timed_out = false;
        while received < inputs.len() {
            match rx.recv_timeout(self.timeout) {
                Ok(line) => {
                    if !line.trim().is_empty() {
                        received += 1;
                    }
                    body.push_str(&line);
                    body.push('\n');
                }
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    timed_out = true;
                    break;
                }
                Err(mpsc::RecvTimeoutError::Disconnected) => break,
            }
        }
        if timed_out {
            let _ = child.kill();
        }
        let _ = writer.join();
        let status = child.wait().map_err(|e| ModelError::AdapterUnreachable(e.to_string()))?;
        if received == 0 && !timed_out && !status.success() {
            return Err(ModelError::AdapterUnreachable(format!("`{}` exited with {status}", self.command)));
        }
        let missing = |i| {
            if timed_out {
                ModelError::Timeout(i)
            } else {
                ModelError::MalformedPrediction { index: i, message: "no response record".into() }
            }
        };
        Ok(decode_responses(&body, inputs.len(), self.task, missing))
    }
}

/// POSTs request records to a URL; the response body holds response records.
#[derive(Debug, Clone)]
pub struct NetworkAdapter {
    url: String,
    task: Task,
    fingerprint: String,
    pub timeout: Duration,
    pub retries: u32,
}

impl NetworkAdapter {
    pub fn new(url: impl Into<String>, task: Task, fingerprint: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            task,
            fingerprint: fingerprint.into(),
            timeout: DEFAULT_TIMEOUT,
            retries: DEFAULT_RETRIES,
        }
    }

    fn attempt(&self, agent: &ureq::Agent, payload: &str) -> Result<String, String> {
        let mut resp = agent
            .post(&self.url)
            .header("content-type", "application/x-ndjson")
            .send(payload)
            .map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("HTTP {}", resp.status()));
        }
        resp.body_mut().read_to_string().map_err(|e| e.to_string())
    }
}

impl Predictor for NetworkAdapter {
    fn task(&self) -> Task {
        self.task
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn predict(&self, inputs: &[Vec<String>]) -> Result<Vec<ItemResult>, ModelError> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout * inputs.len() as u32))
            .http_status_as_error(false)
            .build()
            .new_agent();
        let payload = encode_requests(inputs);
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(BACKOFF_BASE * 2u32.pow(attempt - 1));
            }
            match self.attempt(&agent, &payload) {
                Ok(body) => {
                    let missing =
                        |index| ModelError::MalformedPrediction { index, message: "no response record".into() };
                    return Ok(decode_responses(&body, inputs.len(), self.task, missing));
                }
                Err(e) => last = e,
            }
        }
        Err(ModelError::AdapterUnreachable(format!("{}: {last}", self.url)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs() -> Vec<Vec<String>> {
        vec![vec!["a".into()], vec!["b".into()]]
    }

    #[test]
    fn subprocess_round_trip() {
        // echoes each id back with a fixed prediction
        let cmd = r#"sed -E 's/^\{"id":([0-9]+).*/{"id":\1,"label":"pos","score":0.75}/'"#;
        let a = SubprocessAdapter::new(cmd, Task::Classification, "t");
        let out = a.predict(&inputs()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].as_ref().unwrap().score, 0.75);
    }

    #[test]
    fn subprocess_missing_command() {
        let a = SubprocessAdapter::new("exit 3", Task::Classification, "t");
        assert!(matches!(a.predict(&inputs()), Err(ModelError::AdapterUnreachable(_))));
    }

    #[test]
    fn subprocess_timeout_is_per_item() {
        let mut a = SubprocessAdapter::new(
            r#"read l; echo '{"id":0,"label":"x","score":0.5}'; sleep 5"#,
            Task::Classification,
            "t",
        );
        a.timeout = Duration::from_millis(200);
        let out = a.predict(&inputs()).unwrap();
        assert!(out[0].is_ok());
        assert_eq!(out[1], Err(ModelError::Timeout(1)));
    }

    #[test]
    fn batch_file_times_out_without_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = BatchFileAdapter::new(dir.path(), Task::Classification, "t");
        a.timeout = Duration::from_millis(30);
        let out = a.predict(&inputs()).unwrap();
        assert_eq!(out[0], Err(ModelError::Timeout(0)));
        let written = std::fs::read_to_string(dir.path().join("inputs.jsonl")).unwrap();
        assert_eq!(written.lines().count(), 2);
    }

    #[test]
    fn batch_file_reads_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().to_path_buf();
        let responder = std::thread::spawn(move || {
            while !path.join("inputs.jsonl").exists() {
                std::thread::sleep(Duration::from_millis(10));
            }
            std::fs::write(
                path.join("outputs.jsonl"),
                "{\"id\":1,\"label\":\"b\",\"score\":0.1}\n{\"id\":0,\"label\":\"a\",\"score\":0.9}\n",
            )
            .unwrap();
        });
        let a = BatchFileAdapter::new(dir.path(), Task::Classification, "t");
        let out = a.predict(&inputs()).unwrap();
        responder.join().unwrap();
        assert_eq!(out[0].as_ref().unwrap().label.as_deref(), Some("a"));
        assert_eq!(out[1].as_ref().unwrap().label.as_deref(), Some("b"));
    }

    #[test]
    fn network_unreachable_after_retries() {
        let mut a = NetworkAdapter::new("http://127.0.0.1:9/predict", Task::Classification, "t");
        a.retries = 1;
        a.timeout = Duration::from_millis(200);
        assert!(matches!(a.predict(&inputs()), Err(ModelError::AdapterUnreachable(_))));
    }
}
