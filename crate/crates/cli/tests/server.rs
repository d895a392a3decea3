use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use factgate::server::{router, AppState};
use factgate_core::backend::{BackendError, ChatBackend, ChatRequest, IssueMap, RuleOracle};
use factgate_core::casefile::load_dataset;
use factgate_core::corpus::load_corpus;
use factgate_core::pipeline::PipelineOptions;
use factgate_core::{Corpus, Dataset, PipelineMode};
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn corpus_and_dataset() -> (Arc<Corpus>, Arc<Dataset>) {
    (
        Arc::new(load_corpus(fixtures().join("corpus")).unwrap()),
        Arc::new(load_dataset(fixtures().join("dataset.json")).unwrap()),
    )
}

fn rule_oracle(corpus: &Arc<Corpus>, dataset: &Arc<Dataset>) -> RuleOracle {
    RuleOracle::new(corpus.clone(), dataset.clone(), IssueMap::load(fixtures().join("issue_map.json")).unwrap())
}

/// Delays every call, so a run stays in flight long enough to collide.
struct Slow<B>(B, Duration);

impl<B: ChatBackend> ChatBackend for Slow<B> {
    fn describe(&self) -> String {
        self.0.describe()
    }
    fn send(&self, request: &ChatRequest) -> Result<String, BackendError> {
        std::thread::sleep(self.1);
        self.0.send(request)
    }
}

struct Down;

impl ChatBackend for Down {
    fn describe(&self) -> String {
        "down".into()
    }
    fn send(&self, _: &ChatRequest) -> Result<String, BackendError> {
        Err(BackendError::ProviderError {
            message: "connection refused".into(),
            status: None,
        })
    }
}

async fn start(backend: Arc<dyn ChatBackend>) -> String {
    let (corpus, dataset) = corpus_and_dataset();
    let state = AppState::new(corpus, Some(dataset), backend, PipelineMode::Full, PipelineOptions::default());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(Arc::new(state))).await.unwrap() });
    format!("http://{addr}")
}

async fn start_rules() -> String {
    let (corpus, dataset) = corpus_and_dataset();
    start(Arc::new(rule_oracle(&corpus, &dataset))).await
}

async fn problem(resp: reqwest::Response, status: StatusCode, code: &str) -> Value {
    assert_eq!(resp.status(), status);
    assert_eq!(resp.headers()["content-type"], "application/problem+json");
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["code"], code, "{body}");
    assert_eq!(body["status"], status.as_u16());
    assert!(body["title"].is_string() && body["detail"].is_string() && body["type"].is_string());
    body
}

fn assert_no_ground_truth(text: &str) {
    for marker in ["_meta", "gold_label", "withheld", "resolved_label"] {
        assert!(!text.contains(marker), "response exposes {marker}");
    }
}

#[tokio::test]
async fn fact_finding_loop_resolves_a_missing_fact() {
    let base = start_rules().await;
    let client = Client::new();
    let (_, dataset) = corpus_and_dataset();
    let case = dataset.get("fix-010").unwrap();

    let resp = client.post(format!("{base}/sessions")).json(&json!({"case_id": "fix-010"})).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::CREATED);
    let text = resp.text().await.unwrap();
    assert_no_ground_truth(&text);
    let session: Value = serde_json::from_str(&text).unwrap();
    let id = session["session_id"].as_str().unwrap().to_string();

    let first: Value = client.post(format!("{base}/sessions/{id}/run")).send().await.unwrap().json().await.unwrap();
    assert_eq!(first["status"], "inconclusive");
    assert_eq!(first["gap_set"]["gaps"].as_array().unwrap().len(), 1);
    assert_eq!(first["determination"]["missing_information"].as_array().unwrap().len(), 1);

    let resp = client
        .post(format!("{base}/sessions/{id}/facts"))
        .json(&json!({"text": case.meta.withheld_facts[0]}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);

    let second: Value = client.post(format!("{base}/sessions/{id}/run")).send().await.unwrap().json().await.unwrap();
    assert_eq!(second["status"], "determined");
    assert_eq!(second["determination"]["label"], case.meta.resolved_label.unwrap().as_str());
    assert_eq!(second["facts_included"], 1);
    assert_ne!(first["trace_id"], second["trace_id"]);

    let text = client.get(format!("{base}/sessions/{id}")).send().await.unwrap().text().await.unwrap();
    assert_no_ground_truth(&text);
    let history: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(history["runs"].as_array().unwrap().len(), 2);
    assert_eq!(history["running"], false);

    for run in [&first, &second] {
        let trace: Value = client
            .get(format!("{base}/traces/{}", run["trace_id"].as_str().unwrap()))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        assert_eq!(trace["trace_id"], run["trace_id"]);
        assert!(trace["checklist"]["items"].is_array());
    }
}

#[tokio::test]
async fn narrative_sessions_and_passages() {
    let base = start_rules().await;
    let client = Client::new();
    let resp = client
        .post(format!("{base}/sessions"))
        .json(&json!({"narrative": "Were the wages owed?", "question_type": "direct"}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::CREATED);
    let session: Value = resp.json().await.unwrap();
    assert_eq!(session["case_id"], Value::Null);
    assert_eq!(session["question_type"], "direct");

    let passage: Value = client
        .get(format!("{base}/corpus/passages/caselaw-harlan"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(passage["id"], "caselaw-harlan");
    assert!(passage["text"].as_str().unwrap().len() > 20);

    let doc: Value = client.get(format!("{base}/openapi.json")).send().await.unwrap().json().await.unwrap();
    assert!(doc["paths"]["/sessions/{id}/run"]["post"]["responses"]["409"].is_object());
}

#[tokio::test]
async fn unknown_ids_are_404() {
    let base = start_rules().await;
    let client = Client::new();
    let missing = "00000000-0000-0000-0000-000000000000";
    problem(client.get(format!("{base}/sessions/{missing}")).send().await.unwrap(), StatusCode::NOT_FOUND, "unknown_session").await;
    problem(client.post(format!("{base}/sessions/{missing}/run")).send().await.unwrap(), StatusCode::NOT_FOUND, "unknown_session").await;
    problem(
        client.post(format!("{base}/sessions/{missing}/facts")).json(&json!({"text": "x"})).send().await.unwrap(),
        StatusCode::NOT_FOUND,
        "unknown_session",
    )
    .await;
    problem(client.get(format!("{base}/traces/{missing}")).send().await.unwrap(), StatusCode::NOT_FOUND, "unknown_trace").await;
    problem(client.get(format!("{base}/corpus/passages/nope")).send().await.unwrap(), StatusCode::NOT_FOUND, "unknown_passage").await;
    problem(
        client.post(format!("{base}/sessions")).json(&json!({"case_id": "fix-999"})).send().await.unwrap(),
        StatusCode::NOT_FOUND,
        "unknown_case",
    )
    .await;
    problem(client.get(format!("{base}/nowhere")).send().await.unwrap(), StatusCode::NOT_FOUND, "unknown_route").await;
}

#[tokio::test]
async fn malformed_requests_are_400() {
    let base = start_rules().await;
    let client = Client::new();
    let post = |body: &'static str| {
        client
            .post(format!("{base}/sessions"))
            .header("content-type", "application/json")
            .body(body)
            .send()
    };
    problem(post("{not json").await.unwrap(), StatusCode::BAD_REQUEST, "invalid_request").await;
    problem(post(r#"{"case_id": "fix-001", "narrative": "x"}"#).await.unwrap(), StatusCode::BAD_REQUEST, "invalid_request").await;
    problem(post(r#"{"narrative": "no question type"}"#).await.unwrap(), StatusCode::BAD_REQUEST, "invalid_request").await;
    problem(post(r#"{"case_id": "fix-001", "extra": 1}"#).await.unwrap(), StatusCode::BAD_REQUEST, "invalid_request").await;

    let session: Value = post(r#"{"case_id": "fix-001"}"#).await.unwrap().json().await.unwrap();
    let id = session["session_id"].as_str().unwrap();
    problem(
        client.post(format!("{base}/sessions/{id}/facts")).json(&json!({"text": "  "})).send().await.unwrap(),
        StatusCode::BAD_REQUEST,
        "invalid_request",
    )
    .await;
}

#[tokio::test]
async fn concurrent_run_is_409() {
    let (corpus, dataset) = corpus_and_dataset();
    let base = start(Arc::new(Slow(rule_oracle(&corpus, &dataset), Duration::from_millis(150)))).await;
    let client = Client::new();
    let session: Value = client
        .post(format!("{base}/sessions"))
        .json(&json!({"case_id": "fix-001"}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let id = session["session_id"].as_str().unwrap().to_string();
    let url = format!("{base}/sessions/{id}/run");
    let first = tokio::spawn(client.post(&url).send());
    tokio::time::sleep(Duration::from_millis(100)).await;
    let body = problem(client.post(&url).send().await.unwrap(), StatusCode::CONFLICT, "run_in_progress").await;
    assert!(body["detail"].as_str().unwrap().contains(&id));

    let first: Value = first.await.unwrap().unwrap().json().await.unwrap();
    let again: Value = client.post(&url).send().await.unwrap().json().await.unwrap();
    assert_eq!(again["run_index"], 1);
    assert_eq!(again["determination"]["label"], first["determination"]["label"]);
    assert_ne!(again["trace_id"], first["trace_id"]);
}

#[tokio::test]
async fn unavailable_backend_is_503_with_trace() {
    let base = start(Arc::new(Down)).await;
    let client = Client::new();
    let session: Value = client
        .post(format!("{base}/sessions"))
        .json(&json!({"case_id": "fix-001"}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let id = session["session_id"].as_str().unwrap();
    let body = problem(
        client.post(format!("{base}/sessions/{id}/run")).send().await.unwrap(),
        StatusCode::SERVICE_UNAVAILABLE,
        "backend_unavailable",
    )
    .await;
    let trace_id = body["trace_id"].as_str().unwrap();
    let trace: Value = client.get(format!("{base}/traces/{trace_id}")).send().await.unwrap().json().await.unwrap();
    assert_eq!(trace["abort"]["stage"], "planner");

    let history: Value = client.get(format!("{base}/sessions/{id}")).send().await.unwrap().json().await.unwrap();
    assert_eq!(history["runs"][0]["status"], "failed");
    assert_eq!(history["running"], false);
}
