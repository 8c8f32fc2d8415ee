use std::fs;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::Engine;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use calibsvc::{router, FuseResponse, ScoreResponse, ServeError, Session};
use turbseg::fusion;
use turbseg::metrics::{self, EmptyPolicy};
use turbseg::overlay;
use turbseg::pipeline::{self, DumpLayout, PipelineConfig, RunOptions};
use turbseg::refine;
use turbseg::synth::{self, SynthConfig};

const CONFIG: &str = r#"
seed = 42

[input]
dir = "frames"
pattern = "frame_*.png"

[fusion]
alpha = 1.0
beta = 0.0
gamma = 0.0
delta = 0.0
tau = 0.5

[output]
dir = "out"
intermediates = "dump"

[eval]
gt_dir = "gt"
"#;

/// Synthetic sequence, config file and a full batch run with dumps.
fn fixture(dir: &Path) -> std::path::PathBuf {
    synth::generate(&SynthConfig { frames: 12, width: 64, height: 48, object_start: (4.0, 18.0), ..Default::default() })
        .write(dir)
        .unwrap();
    let path = dir.join("config.toml");
    fs::write(&path, CONFIG).unwrap();
    let cfg = PipelineConfig::load(&path).unwrap();
    pipeline::run(&cfg, &RunOptions::default()).unwrap();
    path
}

async fn call(app: &axum::Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn with_json(method: &str, uri: &str, body: Value) -> Request<Body> {
    Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

#[tokio::test]
async fn fuse_matches_batch_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = fixture(dir.path());
    let session = Session::open(&cfg_path, None).unwrap();
    let bundle_m = session.bundle(5).unwrap().m.clone();
    let frame = session.frame(5).unwrap().clone();
    let app = router(Arc::new(session));

    let (status, body) = call(
        &app,
        with_json("POST", "/fuse", json!({"frame": 5, "weights": {"a": 1, "b": 0, "g": 0, "d": 0}, "tau": 0.5})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let resp: FuseResponse = serde_json::from_slice(&body).unwrap();
    let png = base64::engine::general_purpose::STANDARD.decode(&resp.overlay_png).unwrap();

    let dump = DumpLayout::new(dir.path().join("dump"));
    assert_eq!(png, fs::read(dump.overlay_path(5)).unwrap(), "service overlay differs from batch dump");

    let mask = fusion::binarize(&bundle_m, 0.5);
    assert_eq!(resp.foreground_pixels, mask.count());
    assert_eq!(png, overlay::overlay_png(&frame, &mask, &resp.boxes));

    let raw = refine::read_prompts(&dump.boxes_raw(), None).unwrap();
    assert_eq!(raw.get(5).cloned().unwrap_or_default(), resp.boxes);
}

#[tokio::test]
async fn read_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = fixture(dir.path());
    let app = router(Arc::new(Session::open(&cfg_path, None).unwrap()));

    let (status, body) = call(&app, get("/meta")).await;
    assert_eq!(status, StatusCode::OK);
    let meta: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(meta["frames"], 12);
    assert_eq!((meta["width"].as_u64(), meta["height"].as_u64()), (Some(64), Some(48)));
    assert_eq!(meta["ground_truth"], true);

    let (status, body) = call(&app, get("/frames/5")).await;
    assert_eq!(status, StatusCode::OK);
    let on_disk = turbseg::frameio::read_frame(&dir.path().join("frames/frame_000005.png")).unwrap();
    assert_eq!(body, overlay::frame_png(&on_disk));

    let (status, body) = call(&app, get("/cues/skip_motion/3")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(&body[1..4], b"PNG");

    assert_eq!(call(&app, get("/frames/12")).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, get("/cues/optical/3")).await.0, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, with_json("POST", "/fuse", json!({"frame": 1, "tau": 0.0}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn score_against_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = fixture(dir.path());
    let session = Session::open(&cfg_path, None).unwrap();
    let m = session.bundle(6).unwrap().m.clone();
    let gt = session.ground_truth(6).unwrap().clone();
    let app = router(Arc::new(session));

    let (status, body) = call(&app, get("/score?frame=6&tau=0.3")).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let r: ScoreResponse = serde_json::from_slice(&body).unwrap();
    let expected = metrics::score_frame(&fusion::binarize(&m, 0.3), &gt, EmptyPolicy::One).unwrap().unwrap();
    assert_eq!((r.proposal_iou, r.proposal_dice), (expected.iou, expected.dice));
    assert!((0.0..=1.0).contains(&r.iou) && (0.0..=1.0).contains(&r.dice));
}

#[tokio::test]
async fn config_put_validates_and_persists() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = fixture(dir.path());
    let app = router(Arc::new(Session::open(&cfg_path, None).unwrap()));

    let (status, body) = call(&app, with_json("PUT", "/config", json!({"fusion": {"gamma": -1.0}}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{}", String::from_utf8_lossy(&body));
    assert_eq!(fs::read_to_string(&cfg_path).unwrap(), CONFIG, "rejected config must not be written");

    let (status, _) = call(&app, with_json("PUT", "/config", json!({"fusion": {"tau": 0.4, "beta": 0.25}}))).await;
    assert_eq!(status, StatusCode::OK);
    let saved = PipelineConfig::load(&cfg_path).unwrap();
    assert_eq!((saved.fusion.tau, saved.fusion.weights.beta, saved.fusion.weights.alpha), (0.4, 0.25, 1.0));
    assert_eq!(saved.input.dir, Path::new("frames"), "paths stay relative");

    let (_, body) = call(&app, get("/config")).await;
    let live: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(live["fusion"]["tau"].as_f64(), Some(0.4));

    // the saved file drives the batch pipeline unchanged
    pipeline::run(&saved, &RunOptions::default()).unwrap();
}

#[test]
fn missing_cues_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    synth::generate(&SynthConfig { frames: 4, width: 32, height: 32, ..Default::default() }).write(dir.path()).unwrap();
    let path = dir.path().join("config.toml");
    fs::write(&path, CONFIG).unwrap();
    match Session::open(&path, None) {
        Err(ServeError::CuesMissing(p)) => assert!(p.ends_with("dump/cues")),
        other => panic!("expected CuesMissing, got {:?}", other.err()),
    }
}

#[tokio::test]
async fn busy_port_is_reported() {
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = held.local_addr().unwrap().port();
    assert!(matches!(calibsvc::bind(port).await, Err(ServeError::PortBusy(p)) if p == port));
}
