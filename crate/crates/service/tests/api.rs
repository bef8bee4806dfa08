use std::io::Read;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use inspekt_core::dataset::voc::import_voc;
use inspekt_core::session::Engine;
use inspekt_core::synth::two_spall_scene;
use inspekt_service::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn send(app: &Router, method: Method, uri: &str, body: Vec<u8>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn send_json(app: &Router, method: Method, uri: &str, body: Value) -> (StatusCode, Value) {
    let (s, b) = send(app, method, uri, serde_json::to_vec(&body).unwrap()).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn app(dir: &std::path::Path) -> Router {
    router(AppState::open(dir, Engine::reference()).unwrap(), None)
}

async fn new_session(app: &Router) -> String {
    let (s, b) = send(app, Method::POST, "/api/v1/images", two_spall_scene().encode_png()).await;
    assert_eq!(s, StatusCode::CREATED);
    let image_id = serde_json::from_slice::<Value>(&b).unwrap()["image_id"].as_str().unwrap().to_string();
    let (s, v) = send_json(app, Method::POST, "/api/v1/sessions", json!({"image_id": image_id, "calibration": {"mm_per_pixel": 0.5}})).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v["id"].as_str().unwrap().to_string()
}

async fn cmd(app: &Router, sid: &str, command: &str, payload: Value) -> (StatusCode, Value) {
    send_json(app, Method::POST, &format!("/api/v1/sessions/{sid}/commands"), json!({"command": command, "payload": payload})).await
}

async fn finalize_one(app: &Router) -> String {
    let sid = new_session(app).await;
    assert_eq!(cmd(app, &sid, "propose", Value::Null).await.0, StatusCode::OK);
    assert_eq!(cmd(app, &sid, "review", json!({"detection_id": 0, "verdict": "confirm"})).await.0, StatusCode::OK);
    assert_eq!(cmd(app, &sid, "segment", json!({"detection_id": 0})).await.0, StatusCode::OK);
    let (s, v) = cmd(app, &sid, "assess", json!({"detection_id": 0})).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["assessment"]["guideline"], "AASHTO");
    let (s, v) = cmd(app, &sid, "finalize", json!({"inspector_id": "insp-1"})).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["session"]["phase"], "finalized");
    sid
}

#[tokio::test]
async fn upload_is_content_addressed() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let png = two_spall_scene().encode_png();
    let (s1, b1) = send(&app, Method::POST, "/api/v1/images", png.clone()).await;
    let (s2, b2) = send(&app, Method::POST, "/api/v1/images", png.clone()).await;
    assert_eq!((s1, s2), (StatusCode::CREATED, StatusCode::CREATED));
    assert_eq!(b1, b2);
    let id = serde_json::from_slice::<Value>(&b1).unwrap()["image_id"].as_str().unwrap().to_string();
    assert_eq!(std::fs::read(dir.path().join("images").join(format!("{id}.png"))).unwrap(), png);
    let (s, _) = send(&app, Method::POST, "/api/v1/images", b"not a png".to_vec()).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, b) = send(&app, Method::GET, &format!("/api/v1/images/{id}"), vec![]).await;
    assert_eq!((s, b), (StatusCode::OK, png));
}

#[tokio::test]
async fn fig10_threshold_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let sid = new_session(&app).await;
    let (_, v) = cmd(&app, &sid, "propose", Value::Null).await;
    assert_eq!(v["session"]["visible"].as_array().unwrap().len(), 1);
    let (s, v) = cmd(&app, &sid, "set_detection_threshold", json!({"threshold": 0.2})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["session"]["visible"].as_array().unwrap().len(), 2);
    let (_, v) = send_json(&app, Method::GET, &format!("/api/v1/sessions/{sid}"), Value::Null).await;
    assert_eq!(v["visible"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn error_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (s, _) = send_json(&app, Method::GET, "/api/v1/sessions/nope", Value::Null).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = cmd(&app, "nope", "propose", Value::Null).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = send_json(&app, Method::POST, "/api/v1/sessions", json!({"image_id": "ab".repeat(32), "calibration": {"mm_per_pixel": 1.0}})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let sid = new_session(&app).await;
    let (s, v) = cmd(&app, &sid, "review", json!({"detection_id": 0, "verdict": "confirm"})).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::CONFLICT, Some("InvalidPhase")));
    cmd(&app, &sid, "propose", Value::Null).await;
    let (s, _) = cmd(&app, &sid, "review", json!({"detection_id": 7, "verdict": "confirm"})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = cmd(&app, &sid, "set_detection_threshold", json!({"threshold": 2.0})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = cmd(&app, &sid, "explode", Value::Null).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    cmd(&app, &sid, "review", json!({"detection_id": 0, "verdict": "confirm"})).await;
    cmd(&app, &sid, "segment", json!({"detection_id": 0})).await;
    let edit = json!({"detection_id": 0, "edit": {"op": "add", "region": {"shape": "rect", "x_min": 900, "y_min": 0, "x_max": 910, "y_max": 5}}});
    let (s, v) = cmd(&app, &sid, "edit_mask", edit).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("OutsideBox")));
    let (s, v) = cmd(&app, &sid, "finalize", json!({"inspector_id": "x"})).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::CONFLICT, Some("UnassessedDetections")));
    let (s, _) = send(&app, Method::GET, "/api/v1/annotations/export?format=pdf", vec![]).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn export_formats_and_restart() {
    let dir = tempfile::tempdir().unwrap();
    let app1 = app(dir.path());
    let (s, b) = send(&app1, Method::GET, "/api/v1/annotations/export?format=jsonl", vec![]).await;
    assert_eq!((s, b.len()), (StatusCode::OK, 0));

    let sid = finalize_one(&app1).await;
    let (_, jsonl) = send(&app1, Method::GET, "/api/v1/annotations/export?format=jsonl", vec![]).await;
    assert_eq!(jsonl.iter().filter(|&&c| c == b'\n').count(), 1);
    let (s, zip_bytes) = send(&app1, Method::GET, "/api/v1/annotations/export?format=voc", vec![]).await;
    assert_eq!(s, StatusCode::OK);
    let mut zip = zip::ZipArchive::new(std::io::Cursor::new(zip_bytes)).unwrap();
    assert_eq!(zip.len(), 1);
    let mut xml = String::new();
    zip.by_name(&format!("{sid}.xml")).unwrap().read_to_string(&mut xml).unwrap();
    let (doc, warnings) = import_voc(&xml).unwrap();
    assert_eq!((doc.objects.len(), warnings.len()), (1, 0));
    assert_eq!(doc.objects[0].label, "spalling");

    // restart: a fresh state over the same directory
    drop(app1);
    let app2 = app(dir.path());
    let (_, jsonl2) = send(&app2, Method::GET, "/api/v1/annotations/export?format=jsonl", vec![]).await;
    assert_eq!(jsonl, jsonl2);
    let (s, v) = send_json(&app2, Method::GET, &format!("/api/v1/sessions/{sid}"), Value::Null).await;
    assert_eq!((s, v["phase"].as_str()), (StatusCode::OK, Some("finalized")));
    let (s, _) = cmd(&app2, &sid, "set_detection_threshold", json!({"threshold": 0.3})).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn reloaded_session_continues_where_it_stopped() {
    let dir = tempfile::tempdir().unwrap();
    let app1 = app(dir.path());
    let sid = new_session(&app1).await;
    cmd(&app1, &sid, "propose", Value::Null).await;
    cmd(&app1, &sid, "review", json!({"detection_id": 0, "verdict": "confirm"})).await;
    cmd(&app1, &sid, "segment", json!({"detection_id": 0})).await;
    let (_, before) = send_json(&app1, Method::GET, &format!("/api/v1/sessions/{sid}"), Value::Null).await;
    drop(app1);
    let app2 = app(dir.path());
    let (_, after) = send_json(&app2, Method::GET, &format!("/api/v1/sessions/{sid}"), Value::Null).await;
    assert_eq!(before, after);
    let (s, v) = cmd(&app2, &sid, "set_mask_threshold", json!({"detection_id": 0, "threshold": 0.4})).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let (s, _) = cmd(&app2, &sid, "assess", json!({"detection_id": 0})).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn corrupt_store_exports_500() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    finalize_one(&app).await;
    let path = dir.path().join("annotations.jsonl");
    let text = std::fs::read_to_string(&path).unwrap().replace("insp-1", "insp-2");
    std::fs::write(&path, text).unwrap();
    let (s, v) = send_json(&app, Method::GET, "/api/v1/annotations/export?format=jsonl", Value::Null).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::INTERNAL_SERVER_ERROR, Some("CorruptStore")));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_commands_serialize_per_session() {
    let dir = tempfile::tempdir().unwrap();
    let app = Arc::new(app(dir.path()));
    let a = new_session(&app).await;
    let b = new_session(&app).await;
    cmd(&app, &a, "propose", Value::Null).await;
    cmd(&app, &b, "propose", Value::Null).await;
    let mut tasks = Vec::new();
    for i in 0..40 {
        let app = app.clone();
        let sid = if i % 2 == 0 { a.clone() } else { b.clone() };
        tasks.push(tokio::spawn(async move {
            let t = (i % 10) as f64 / 10.0;
            let (s, v) = cmd(&app, &sid, "set_detection_threshold", json!({"threshold": t})).await;
            assert_eq!(s, StatusCode::OK);
            (sid, v["session"]["version"].as_u64().unwrap())
        }));
    }
    let mut versions: std::collections::HashMap<String, Vec<u64>> = Default::default();
    for t in tasks {
        let (sid, v) = t.await.unwrap();
        versions.entry(sid).or_default().push(v);
    }
    for (_, mut vs) in versions {
        vs.sort();
        // each session saw versions 2..=21 exactly once: no lost or merged updates
        assert_eq!(vs, (2..22).collect::<Vec<u64>>());
    }
}

#[tokio::test]
async fn health_and_static() {
    let dir = tempfile::tempdir().unwrap();
    let www = tempfile::tempdir().unwrap();
    std::fs::write(www.path().join("index.html"), "<p>ui</p>").unwrap();
    let app = router(AppState::open(dir.path(), Engine::reference()).unwrap(), Some(www.path().to_path_buf()));
    let (s, v) = send_json(&app, Method::GET, "/api/v1/health", Value::Null).await;
    assert_eq!((s, v["status"].as_str()), (StatusCode::OK, Some("ok")));
    let (s, b) = send(&app, Method::GET, "/index.html", vec![]).await;
    assert_eq!((s, b), (StatusCode::OK, b"<p>ui</p>".to_vec()));
}
