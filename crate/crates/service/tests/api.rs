use std::path::Path;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use comixify::api::{router, AppState};
use comixify::jobs::{FileStore, JobRecord, JobState, JobStore, MemoryStore};
use comixify_core::ingest::{samples, FetchConfig, Fetcher};
use comixify_core::pipeline::{option_catalog, ModelRegistry, PipelineOptions};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const BOUNDARY: &str = "comixify-test-boundary";

fn app_with(workdir: &Path, cap: u64, timeout: Duration) -> (Router, AppState) {
    let st = AppState::new(
        ModelRegistry::seeded(),
        Box::new(MemoryStore::new()),
        Fetcher::new(FetchConfig { max_bytes: cap, timeout: Duration::from_secs(5) }),
        workdir.to_path_buf(),
        cap,
        timeout,
    );
    (router(st.clone()), st)
}

fn app(workdir: &Path) -> Router {
    app_with(workdir, 1 << 30, Duration::from_secs(600)).0
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post_json(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::post(uri).header("content-type", "application/json").body(Body::from(body.to_string())).unwrap();
    let (s, b) = send(app, req).await;
    (s, serde_json::from_slice(&b).unwrap())
}

fn multipart(file: Option<(&str, &[u8])>, fields: &[(&str, &str)]) -> Request<Body> {
    let mut body = Vec::new();
    for (k, v) in fields {
        body.extend(format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{k}\"\r\n\r\n{v}\r\n").bytes());
    }
    if let Some((name, bytes)) = file {
        body.extend(
            format!(
                "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"video\"; filename=\"{name}\"\r\n\
                 Content-Type: application/octet-stream\r\n\r\n"
            )
            .bytes(),
        );
        body.extend_from_slice(bytes);
        body.extend(b"\r\n");
    }
    body.extend(format!("--{BOUNDARY}--\r\n").bytes());
    Request::post("/api/comixify?sync=true")
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(body))
        .unwrap()
}

fn sample_bytes(dir: &Path) -> Vec<u8> {
    std::fs::read(samples::materialize("four_seasons", dir).unwrap()).unwrap()
}

#[tokio::test]
async fn options_and_samples() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (s, body) = get(&app, "/api/options").await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v, serde_json::to_value(option_catalog()).unwrap());
    assert_eq!(v["style"], json!(["comixgan", "cartoongan_hayao", "cartoongan_hosoda"]));

    let (s, body) = get(&app, "/api/samples").await;
    assert_eq!(s, StatusCode::OK);
    let list: Vec<Value> = serde_json::from_slice(&body).unwrap();
    assert!(!list.is_empty());
    assert!(list.iter().all(|e| e["duration_s"].as_f64().unwrap() > 0.0 && e["name"].is_string()));
    let (_, again) = get(&app, "/api/samples").await;
    assert_eq!(body, again);
}

#[tokio::test]
async fn sync_sample_run_returns_pages() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (s, rec) = post_json(&app, "/api/comixify", json!({"sample": "four_seasons", "k": 8, "sync": true})).await;
    assert_eq!(s, StatusCode::OK, "{rec}");
    let rec: JobRecord = serde_json::from_value(rec).unwrap();
    assert_eq!(rec.state, JobState::Done);
    assert_eq!(rec.pages.len(), 1);
    assert_eq!(rec.keyframe_times_s.len(), 8);
    let staged: f64 = rec.timings.iter().map(|t| t.seconds).sum();
    let wall = rec.duration_s.unwrap();
    assert!((wall - staged).abs() <= 0.05 * wall, "stages {staged} vs job {wall}");

    let (s, png) = get(&app, &rec.pages[0]).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(&png[1..4], b"PNG");
    let (s, body) = get(&app, &format!("/api/jobs/{}", rec.job_id)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<JobRecord>(&body).unwrap(), rec);
}

#[tokio::test]
async fn repeated_requests_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let req = json!({"sample": "red_and_white", "k": 2, "style": "cartoongan_hayao", "aesthetic": "popularity", "sync": true});
    let mut pages = Vec::new();
    for _ in 0..2 {
        let (s, rec) = post_json(&app, "/api/comixify", req.clone()).await;
        assert_eq!(s, StatusCode::OK, "{rec}");
        let uri = rec["pages"][0].as_str().unwrap().to_string();
        pages.push(get(&app, &uri).await.1);
    }
    assert_eq!(pages[0], pages[1]);
}

#[tokio::test]
async fn invalid_parameters_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (s, v) = post_json(&app, "/api/comixify", json!({"sample": "four_seasons", "k": 3, "n": 8})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("divide"), "{v}");

    let (s, v) = post_json(&app, "/api/comixify", json!({"sample": "four_seasons", "style": "picasso"})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let msg = v["error"].as_str().unwrap();
    for allowed in ["comixgan", "cartoongan_hayao", "cartoongan_hosoda"] {
        assert!(msg.contains(allowed), "{msg}");
    }

    let (s, _) = post_json(&app, "/api/comixify", json!({"k": 8})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = post_json(&app, "/api/comixify", json!({"sample": "four_seasons", "url": "http://example.com/v.mp4"})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = post_json(&app, "/api/comixify", json!({"sample": "no_such_sample"})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = post_json(&app, "/api/comixify", json!({"sample": "four_seasons", "colour": "red"})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = post_json(&app, "/api/comixify", json!({"sample": "four_seasons", "k": "many"})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    // n larger than the video can supply is only known after ingest
    let (s, v) = post_json(&app, "/api/comixify", json!({"sample": "four_seasons", "k": 8, "n": 64, "sync": true})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["stage"], "segment");
}

#[tokio::test]
async fn unknown_job_is_404() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    assert_eq!(get(&app, "/api/jobs/doesnotexist").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/api/jobs/..%2F..%2Fetc").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn uploads() {
    let dir = tempfile::tempdir().unwrap();
    let video = sample_bytes(dir.path());
    let app = app(dir.path());
    let (s, body) = send(&app, multipart(Some(("clip.y4m", &video)), &[("k", "4")])).await;
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["state"], "done");
    assert_eq!(v["input"], "upload:clip.y4m");

    let (s, body) = send(&app, multipart(Some(("junk.mp4", b"definitely not a video")), &[])).await;
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    assert_eq!(v["job"]["state"], "failed");

    let (s, _) = send(&app, multipart(Some(("clip.y4m", &video)), &[("sample", "four_seasons")])).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (small, _) = app_with(dir.path(), 1024, Duration::from_secs(600));
    let (s, _) = send(&small, multipart(Some(("clip.y4m", &video)), &[])).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn unreachable_url_is_502() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (s, v) = post_json(&app, "/api/comixify", json!({"url": "http://127.0.0.1:9/clip.y4m", "sync": true})).await;
    assert_eq!(s, StatusCode::BAD_GATEWAY, "{v}");
    assert_eq!(v["stage"], "fetch");
}

#[tokio::test]
async fn async_job_moves_forward_only() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (s, v) = post_json(&app, "/api/comixify", json!({"sample": "red_and_white", "k": 2})).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(v["state"], "queued");
    let id = v["job_id"].as_str().unwrap().to_string();
    let mut seen = vec![JobState::Queued];
    for _ in 0..600 {
        let (s, body) = get(&app, &format!("/api/jobs/{id}")).await;
        assert_eq!(s, StatusCode::OK);
        let rec: JobRecord = serde_json::from_slice(&body).unwrap();
        seen.push(rec.state);
        if rec.state.is_terminal() {
            assert_eq!(rec.state, JobState::Done);
            assert!(!rec.pages.is_empty());
            break;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    assert!(seen.last().unwrap().is_terminal());
    assert!(seen.windows(2).all(|w| w[0] <= w[1]), "{seen:?}");
}

#[tokio::test]
async fn timeout_fails_the_job() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app_with(dir.path(), 1 << 30, Duration::from_millis(1));
    let (s, v) = post_json(&app, "/api/comixify", json!({"sample": "four_seasons", "sync": true})).await;
    assert_eq!(s, StatusCode::INTERNAL_SERVER_ERROR);
    assert!(v["error"].as_str().unwrap().contains("timed out"), "{v}");
    assert_eq!(v["job"]["state"], "failed");
}

fn record(id: &str) -> JobRecord {
    JobRecord::queued(id.into(), "sample:four_seasons".into(), PipelineOptions::default())
}

#[test]
fn stores_enforce_monotone_transitions() {
    let dir = tempfile::tempdir().unwrap();
    let stores: Vec<Box<dyn JobStore>> =
        vec![Box::new(MemoryStore::new()), Box::new(FileStore::open(dir.path()).unwrap())];
    for store in stores {
        store.insert(record("a1")).unwrap();
        assert!(store.insert(record("a1")).is_err());
        assert_eq!(store.get("a1").unwrap().unwrap().state, JobState::Queued);
        assert!(store.update("a1", &mut |r| r.state = JobState::Done).is_err());
        store.update("a1", &mut |r| r.state = JobState::Running).unwrap();
        store.update("a1", &mut |r| r.state = JobState::Done).unwrap();
        assert!(store.update("a1", &mut |r| r.state = JobState::Running).is_err());
        assert!(store.update("a1", &mut |r| r.state = JobState::Failed).is_err());
        assert_eq!(store.get("a1").unwrap().unwrap().state, JobState::Done);
        assert!(store.get("missing").unwrap().is_none());
        assert!(store.update("missing", &mut |_| {}).is_err());
    }
}

#[test]
fn file_store_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    {
        let store = FileStore::open(dir.path()).unwrap();
        store.insert(record("done1")).unwrap();
        store.update("done1", &mut |r| r.state = JobState::Running).unwrap();
        store.update("done1", &mut |r| {
            r.state = JobState::Done;
            r.pages = vec!["/results/done1/page_01.png".into()];
        }).unwrap();
        store.insert(record("busy1")).unwrap();
        store.update("busy1", &mut |r| r.state = JobState::Running).unwrap();
    }
    let store = FileStore::open(dir.path()).unwrap();
    let done = store.get("done1").unwrap().unwrap();
    assert_eq!(done.state, JobState::Done);
    assert_eq!(done.pages, vec!["/results/done1/page_01.png".to_string()]);
    let busy = store.get("busy1").unwrap().unwrap();
    assert_eq!(busy.state, JobState::Failed);
    assert!(busy.error.unwrap().message.contains("restart"));
}
