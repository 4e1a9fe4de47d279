use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use nlpcheck::bundled;
use nlpcheck::lexicon::{LexiconEntry, LexiconStore, Tags};
use nlpcheck::model::{AdapterSpec, Gateway};
use nlpcheck::service::{router, Session};
use nlpcheck::suggest::StoreDelta;
use nlpcheck::suite::{self, ReportFormat, RunConfig};

struct Server {
    base: String,
    _rt: tokio::runtime::Runtime,
}

fn start(session: Session) -> Server {
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr: SocketAddr = listener.local_addr().unwrap();
    let app = router(Arc::new(session));
    rt.spawn(async move { axum::serve(listener, app).await.unwrap() });
    Server { base: format!("http://{addr}"), _rt: rt }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().new_agent()
}

impl Server {
    fn get(&self, path: &str) -> (u16, Value) {
        let mut resp = agent().get(&format!("{}{path}", self.base)).call().unwrap();
        let status = resp.status().as_u16();
        (status, serde_json::from_str(&resp.body_mut().read_to_string().unwrap()).unwrap_or(Value::Null))
    }

    fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let mut resp = agent()
            .post(&format!("{}{path}", self.base))
            .header("content-type", "application/json")
            .send(body.to_string())
            .unwrap();
        let status = resp.status().as_u16();
        (status, serde_json::from_str(&resp.body_mut().read_to_string().unwrap()).unwrap_or(Value::Null))
    }

    fn run(&self, adapter: Value) -> u64 {
        let (st, body) = self.post("/run", json!({ "adapter_spec": adapter }));
        assert_eq!(st, 202, "{body}");
        let id = body["run_id"].as_u64().unwrap();
        let deadline = Instant::now() + Duration::from_secs(60);
        loop {
            let (_, s) = self.get(&format!("/runs/{id}"));
            match s["status"].as_str().unwrap() {
                "done" => {
                    assert_eq!(s["done"], s["total"]);
                    return id;
                }
                "failed" => panic!("run failed: {s}"),
                _ => {}
            }
            assert!(Instant::now() < deadline, "run {id} did not finish");
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}

fn mini() -> nlpcheck::suite::TestSuite {
    bundled::suite("sentiment_mini").unwrap().unwrap()
}

#[test]
fn triage_persists_and_feeds_the_next_run() {
    let dir = tempfile::tempdir().unwrap();
    let lex_path = dir.path().join("lexicons.txt");
    let server = start(Session::new(mini(), bundled::all_lexicons()).with_lexicon_path(&lex_path));

    let (st, body) = server.post("/suggest", json!({"template": "I {mask} the {THING}.", "top_k": 5}));
    assert_eq!(st, 200);
    let first = body["suggestions"][0]["text"].as_str().unwrap().to_string();

    let edit = json!({"accepts": [{"text": "enjoy", "tags": {"sentiment": "pos"}}], "rejects": [first.clone()], "template": "I {mask} the {THING}."});
    let (st, body) = server.post("/lexicons/POS_VERB", edit.clone());
    assert_eq!(st, 200);
    assert_eq!(body["added"], 1);
    let saved = std::fs::read_to_string(&lex_path).unwrap();
    assert!(saved.contains("[POS_VERB]\nlove\nlike\nenjoy\tsentiment=pos\n"), "{saved}");

    // same decisions again: no-op
    let (_, body) = server.post("/lexicons/POS_VERB", edit);
    assert_eq!(body["added"], 0);
    assert_eq!(std::fs::read_to_string(&lex_path).unwrap(), saved);

    // endpoint and library triage agree byte for byte
    let delta = StoreDelta {
        appends: vec![("POS_VERB".into(), LexiconEntry::tagged("enjoy", Tags::new().with("sentiment", "pos")))],
    };
    let library = delta.apply(&bundled::all_lexicons());
    assert_eq!(library.to_file_string(), saved);
    assert_eq!(LexiconStore::parse(&saved).unwrap(), library);

    let (_, body) = server.post("/suggest", json!({"template": "I {mask} the {THING}.", "top_k": 10}));
    assert!(body["suggestions"].as_array().unwrap().iter().all(|s| s["text"] != first.as_str()));

    let id = server.run(json!("toy"));
    let (st, t) =
        server.get(&format!("/results/adding%20a%20negative%20phrase%20should%20not%20raise%20sentiment?run={id}"));
    assert_eq!(st, 200);
    assert_eq!(t["n_cases"], 9, "3 verbs x 3 things after the accept");
    assert!(t["cases"].as_array().unwrap().iter().any(|c| c["texts"][0] == "I enjoy the food."));
}

#[test]
fn results_match_library_run_and_stay_fixed() {
    let server = start(Session::new(mini(), bundled::all_lexicons()));
    let (st, _) = server.get("/results");
    assert_eq!(st, 404);

    let id = server.run(json!("toy"));
    let (st, report) = server.get(&format!("/results?run={id}"));
    assert_eq!(st, 200);
    assert_eq!(report["run_id"], id);

    let gw = Gateway::from_spec(&"toy".parse::<AdapterSpec>().unwrap()).unwrap();
    let local = suite::run_suite(&mini(), &bundled::all_lexicons(), &gw, &RunConfig::default()).unwrap();
    let mut expected: Value = serde_json::from_str(&suite::render_report(&local, ReportFormat::Json)).unwrap();
    expected["run_id"] = json!(id);
    assert_eq!(report, expected);

    let rates: BTreeMap<String, Value> = report["tests"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| (t["name"].as_str().unwrap().to_string(), t["failure_rate"].clone()))
        .collect();
    assert_eq!(rates["contractions should not change prediction"], json!(37.5));

    // a second run (object form of the spec) gets its own id; the first is unchanged
    let id2 = server.run(json!({"kind": "toy", "target": "", "task": "classification", "version": "1"}));
    assert_ne!(id, id2);
    assert_eq!(server.get(&format!("/results?run={id}")).1, report);
    assert_eq!(server.get("/results").1["run_id"], id2);

    let (st, page) =
        server.get(&format!("/results/positive%20adjectives%20should%20be%20positive?run={id}&offset=5&limit=3"));
    assert_eq!(st, 200);
    assert_eq!(page["cases"].as_array().unwrap().len(), 3);
    assert_eq!(page["cases"][0]["id"], 5);
    assert_eq!(page["total_cases"], 72);

    let (st, sliced) = server.get(&format!(
        "/results/adding%20a%20negative%20phrase%20should%20not%20raise%20sentiment?run={id}&slice=POS_VERB%3Dlove"
    ));
    assert_eq!(st, 200);
    assert_eq!(sliced["slice"]["n_cases"], 3);
    assert_eq!(sliced["total_cases"], 3);

    let (st, _) =
        server.get(&format!("/results/positive%20adjectives%20should%20be%20positive?run={id}&slice=THING%3Dnothing"));
    assert_eq!(st, 404);
    let (st, _) = server.post("/run", json!({"adapter_spec": "carrier-pigeon:coop"}));
    assert_eq!(st, 400);
    let (st, _) = server.post("/run", json!({"wrong": 1}));
    assert_eq!(st, 400);
}

#[test]
fn failing_model_reports_failed_run() {
    let server = start(Session::new(mini(), bundled::all_lexicons()));
    let (st, body) = server.post("/run", json!({"adapter_spec": "subprocess:exit 7"}));
    assert_eq!(st, 202);
    let id = body["run_id"].as_u64().unwrap();
    let deadline = Instant::now() + Duration::from_secs(30);
    let status = loop {
        let (_, s) = server.get(&format!("/runs/{id}"));
        if s["status"] != "running" {
            break s;
        }
        assert!(Instant::now() < deadline);
        std::thread::sleep(Duration::from_millis(20));
    };
    assert_eq!(status["status"], "failed");
    assert!(status["error"].as_str().unwrap().contains("unreachable"));
    assert_eq!(server.get(&format!("/results?run={id}")).0, 404);
}
