use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use winnower_core::corpus::ManifestRecord;
use winnower_core::divergence::Metric;
use winnower_core::project::{InitOptions, Project, ReportKind, ReportOptions};
use winnower_core::winnow::PercentileBand;
use winnower_review_api::{router, AppState, VERSION, VERSION_HEADER};

const TOPICAL: [&str; 4] = [
    "rent land tenant landlord lease estate",
    "wool duties trade tariff export",
    "army navy war soldiers ships",
    "church tithe bishop clergy parish",
];

fn write_manifest(path: &Path, records: &[ManifestRecord]) {
    let text: String = records.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    fs::write(path, text).unwrap();
}

/// Twelve debates over four topics, ranked against two land-commission seeds: round 1, scored.
fn ranked_project() -> (tempfile::TempDir, Project) {
    let dir = tempfile::tempdir().unwrap();
    let docs: Vec<ManifestRecord> = (0..12)
        .map(|i| {
            let words: Vec<&str> = TOPICAL[i % 4].split(' ').collect();
            let body: Vec<&str> = (0..i + 5).map(|j| words[j % words.len()]).collect();
            ManifestRecord::inline(format!("d{:02}", i + 1), format!("Debate {}", i + 1), 1830 + 5 * i as i32, body.join(" "))
        })
        .collect();
    let seeds = vec![
        ManifestRecord::inline("devon", "Devon Commission", 1845, "rent rent land tenant landlord"),
        ManifestRecord::inline("bessborough", "Bessborough Commission", 1881, "tenant lease estate rent"),
    ];
    write_manifest(&dir.path().join("m.jsonl"), &docs);
    write_manifest(&dir.path().join("s.jsonl"), &seeds);
    let root = dir.path().join("proj");
    let mut project = Project::init(&root, InitOptions::default()).unwrap();
    project.ingest(&dir.path().join("m.jsonl")).unwrap();
    project.rank(&dir.path().join("s.jsonl"), Metric::Kld, false, None).unwrap();
    (dir, project)
}

/// Round 1 cut at 50% with all six survivors sampled for review.
fn sampled_project() -> (tempfile::TempDir, Project) {
    let (dir, project) = ranked_project();
    project.winnow(None, 50.0, None).unwrap();
    project.sample(None, &[PercentileBand::new(0.0, 50.0).unwrap()], 6, 0).unwrap();
    (dir, project)
}

async fn send(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Option<String>, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let version = resp.headers().get(VERSION_HEADER).map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, version, bytes)
}

async fn json_of(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, _, bytes) = send(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

/// Poll a job until it leaves the running state.
async fn finish(app: &Router, job: &Value) -> Value {
    let uri = format!("/jobs/{}", job["id"]);
    for _ in 0..500 {
        let (status, job) = json_of(app, Method::GET, &uri, None).await;
        assert_eq!(status, StatusCode::OK);
        if job["status"] != "running" {
            return job;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("job {uri} never finished");
}

fn label(doc: &str, relevant: bool) -> Value {
    json!({ "doc_id": doc, "relevant": relevant, "annotator": "scholar" })
}

#[tokio::test]
async fn posted_label_shows_in_queue() {
    let (_dir, project) = sampled_project();
    let app = router(AppState::new(project));
    let (status, queue) = json_of(&app, Method::GET, "/rounds/1/queue", None).await;
    assert_eq!(status, StatusCode::OK);
    let queue = queue.as_array().unwrap();
    assert_eq!(queue.len(), 6);
    assert!(queue.iter().all(|q| q["label"] == "unlabeled"));
    let doc = queue[0]["doc_id"].as_str().unwrap().to_string();

    let (status, ack) = json_of(&app, Method::POST, "/rounds/1/labels", Some(label(&doc, true))).await;
    assert_eq!(status, StatusCode::CREATED, "{ack}");
    assert_eq!(ack["effective"]["relevant"], true);
    assert!(ack["conflicts"].as_array().unwrap().is_empty());

    let (_, queue) = json_of(&app, Method::GET, "/rounds/1/queue", None).await;
    let item = queue.as_array().unwrap().iter().find(|q| q["doc_id"] == doc.as_str()).unwrap();
    assert_eq!(item["label"], "relevant");

    let (status, ack) = json_of(&app, Method::POST, "/rounds/1/labels", Some(label(&doc, false))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(ack["effective"]["relevant"], false);
    assert_eq!(ack["conflicts"].as_array().unwrap().len(), 1);

    let (_, round) = json_of(&app, Method::GET, "/rounds/1", None).await;
    assert_eq!(round["labeled"], 1);
    assert_eq!(round["hit_rate"], 0.0);
}

#[tokio::test]
async fn annotator_header_fills_in_for_body() {
    let (_dir, project) = sampled_project();
    let app = router(AppState::new(project));
    let (_, queue) = json_of(&app, Method::GET, "/rounds/1/queue", None).await;
    let doc = queue[0]["doc_id"].as_str().unwrap();
    let req = Request::post("/rounds/1/labels")
        .header("content-type", "application/json")
        .header("x-annotator", "historian")
        .body(Body::from(json!({ "doc_id": doc, "relevant": true }).to_string()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::CREATED);
    let ack: Value = serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap();
    assert_eq!(ack["effective"]["annotator"], "historian");

    let (status, err) = json_of(&app, Method::POST, "/rounds/1/labels", Some(json!({ "doc_id": doc, "relevant": true }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "bad_request");
}

#[tokio::test]
async fn winnow_job_cuts_twelve_to_three() {
    let (_dir, project) = ranked_project();
    let app = router(AppState::new(project));
    let (status, job) = json_of(&app, Method::POST, "/rounds/1/winnow", Some(json!({ "percentile": 25 }))).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(job["kind"], "winnow");
    let job = finish(&app, &job).await;
    assert_eq!(job["status"], "succeeded", "{job}");
    assert_eq!(job["result"]["survivors"], 3);

    let (status, rounds) = json_of(&app, Method::GET, "/rounds", None).await;
    assert_eq!(status, StatusCode::OK);
    let rounds = rounds.as_array().unwrap();
    assert_eq!(rounds.len(), 1);
    assert_eq!(rounds[0]["survivors"], 3);
    assert_eq!(rounds[0]["status"], "winnowed");
}

#[tokio::test]
async fn failed_job_carries_structured_error() {
    let (_dir, project) = sampled_project();
    let app = router(AppState::new(project));
    let (status, job) = json_of(&app, Method::POST, "/rounds/1/reseed", None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let job = finish(&app, &job).await;
    assert_eq!(job["status"], "failed");
    assert_eq!(job["error"]["code"], "no_relevant_labels");

    let (status, err) = json_of(&app, Method::GET, "/jobs/999", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(err["code"].is_string());
}

#[tokio::test]
async fn reseed_job_opens_next_round() {
    let (_dir, project) = sampled_project();
    let app = router(AppState::new(project));
    let (_, queue) = json_of(&app, Method::GET, "/rounds/1/queue", None).await;
    for (i, item) in queue.as_array().unwrap().iter().enumerate() {
        let (status, _) = json_of(&app, Method::POST, "/rounds/1/labels", Some(label(item["doc_id"].as_str().unwrap(), i < 2))).await;
        assert_eq!(status, StatusCode::CREATED);
    }
    let (_, job) = json_of(&app, Method::POST, "/rounds/1/reseed", Some(json!({}))).await;
    let job = finish(&app, &job).await;
    assert_eq!(job["status"], "succeeded", "{job}");
    assert_eq!(job["result"]["round_id"], 2);
    assert_eq!(job["result"]["parent_size"], 6);

    let (_, first) = json_of(&app, Method::GET, "/rounds/1", None).await;
    assert_eq!(first["status"], "closed");
    let (status, err) = json_of(&app, Method::POST, "/rounds/1/labels", Some(label("d01", true))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], "round_closed");
}

#[tokio::test]
async fn report_bytes_match_project_report() {
    let (_dir, project) = sampled_project();
    let root = project.root().to_path_buf();
    let app = router(AppState::new(project));
    let reader = Project::open(&root).unwrap();
    for (kind, query, opts) in [
        (ReportKind::Histogram, "?bins=5", ReportOptions { bins: Some(5), ..Default::default() }),
        (ReportKind::YearSeries, "", ReportOptions::default()),
        (ReportKind::YearSeries, "?percentile=25", ReportOptions { percentile: Some(25.0), ..Default::default() }),
        (ReportKind::Ngrams, "?n=3", ReportOptions { n: Some(3), ..Default::default() }),
    ] {
        let (status, version, body) = send(&app, Method::GET, &format!("/rounds/1/reports/{kind}{query}"), None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(version.as_deref(), Some(VERSION));
        assert_eq!(String::from_utf8(body).unwrap(), reader.report(Some(1), kind, opts).unwrap(), "{kind}");
    }
}

#[tokio::test]
async fn topics_job_then_names() {
    let (_dir, project) = sampled_project();
    let app = router(AppState::new(project));
    let (status, err) = json_of(&app, Method::GET, "/rounds/1/reports/topics", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "no_topics");

    let body = json!({ "topics": 2, "iterations": 10, "seed": 3 });
    let (status, job) = json_of(&app, Method::POST, "/rounds/1/topics", Some(body)).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let job = finish(&app, &job).await;
    assert_eq!(job["status"], "succeeded", "{job}");
    assert_eq!(job["result"].as_array().unwrap().len(), 2);

    let (status, named) = json_of(&app, Method::POST, "/rounds/1/topics/names", Some(json!({ "1": "Land" }))).await;
    assert_eq!(status, StatusCode::OK, "{named}");
    let (_, _, report) = send(&app, Method::GET, "/rounds/1/reports/topics", None).await;
    assert!(String::from_utf8(report).unwrap().lines().any(|l| l.starts_with("1\tLand\t")));

    let (status, err) = json_of(&app, Method::POST, "/rounds/1/topics/names", Some(json!({ "9": "Nope" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "unknown_topic");
}

#[tokio::test]
async fn structured_errors_and_version_header() {
    let (_dir, project) = sampled_project();
    let app = router(AppState::new(project));
    for (method, uri, body, status, code) in [
        (Method::GET, "/rounds/7", None, StatusCode::NOT_FOUND, "unknown_round"),
        (Method::GET, "/rounds/abc/queue", None, StatusCode::NOT_FOUND, "unknown_round"),
        (Method::GET, "/documents/nope", None, StatusCode::NOT_FOUND, "unknown_document"),
        (Method::GET, "/rounds/1/reports/pie", None, StatusCode::NOT_FOUND, "unknown_report"),
        (Method::GET, "/nowhere", None, StatusCode::NOT_FOUND, "not_found"),
        (Method::POST, "/rounds/1/labels", Some(json!({ "doc": "d01" })), StatusCode::BAD_REQUEST, "bad_request"),
        (Method::POST, "/rounds/1/winnow", Some(json!({ "percentile": 0 })), StatusCode::BAD_REQUEST, "bad_request"),
        (Method::POST, "/rounds/1/winnow", Some(json!({ "percentile": 5, "metric": "cos" })), StatusCode::BAD_REQUEST, "bad_request"),
        (Method::POST, "/rounds/1/labels", Some(label("ghost", true)), StatusCode::CONFLICT, "label_rejected"),
    ] {
        let (got, version, bytes) = send(&app, method, uri, body).await;
        assert_eq!(got, status, "{uri}");
        assert_eq!(version.as_deref(), Some(VERSION), "{uri}");
        let err: Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(err["code"], code, "{uri}");
        assert!(err["message"].as_str().is_some_and(|m| !m.is_empty()), "{uri}");
    }
}

#[tokio::test]
async fn document_text_is_plain() {
    let (_dir, project) = sampled_project();
    let app = router(AppState::new(project));
    let req = Request::get("/documents/d01").body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert!(resp.headers()["content-type"].to_str().unwrap().starts_with("text/plain"));
    assert_eq!(resp.headers()[VERSION_HEADER], VERSION);
    let text = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&text[..], b"rent land tenant landlord lease");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_labels_all_land() {
    let (_dir, project) = sampled_project();
    let state: Arc<AppState> = AppState::new(project);
    let app = router(state);
    let (_, queue) = json_of(&app, Method::GET, "/rounds/1/queue", None).await;
    let docs: Vec<String> = queue.as_array().unwrap().iter().map(|q| q["doc_id"].as_str().unwrap().to_string()).collect();

    let mut tasks = Vec::new();
    for round in 0..5 {
        for doc in &docs {
            let app = app.clone();
            let body = json!({ "doc_id": doc, "relevant": round % 2 == 0, "annotator": format!("a{round}") });
            tasks.push(tokio::spawn(async move { send(&app, Method::POST, "/rounds/1/labels", Some(body)).await.0 }));
        }
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::CREATED);
    }
    let (_, round) = json_of(&app, Method::GET, "/rounds/1", None).await;
    assert_eq!(round["labeled"], 6);
    let (_, queue) = json_of(&app, Method::GET, "/rounds/1/queue", None).await;
    assert!(queue.as_array().unwrap().iter().all(|q| q["label"] != "unlabeled"));
    let log = fs::read_to_string(_dir.path().join("proj/rounds/round-0001/labels.tsv")).unwrap();
    assert_eq!(log.lines().count(), 30);
}
