use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use silhouette_core::audio::{decode_wav, encode_wav};
use silhouette_core::{
    extract_silhouette, parse_silhouette, serialize_silhouette, Frame, SilhouetteTrack, Waveform,
};
use silhouette_nn::model::init_params;
use silhouette_nn::{Checkpoint, ModelConfig};
use silhouette_service::{router, Registry, FINGERPRINT_HEADER, MODEL_ID_HEADER, MSE_HEADER};
use tower::ServiceExt;

struct Reply {
    status: StatusCode,
    headers: axum::http::HeaderMap,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap()
    }

    fn header(&self, name: &str) -> &str {
        self.headers.get(name).unwrap().to_str().unwrap()
    }
}

async fn send(app: &Router, method: &str, uri: &str, body: impl Into<Body>) -> Reply {
    let req = Request::builder().method(method).uri(uri).body(body.into()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, body }
}

fn wav_bytes(samples: Vec<f64>) -> Vec<u8> {
    encode_wav(&Waveform::new(samples, 24_000).unwrap()).unwrap()
}

fn track(frames: usize) -> SilhouetteTrack {
    let frames = (0..frames)
        .map(|i| {
            let a = 0.1 + 0.6 * ((i as f64) * 0.4).sin().abs();
            Frame::new(-a, a * 0.9)
        })
        .collect();
    SilhouetteTrack::new(frames, 1024, 256, 24_000, None).unwrap()
}

fn request(t: &SilhouetteTrack) -> Value {
    let doc: Value = serde_json::from_slice(&serialize_silhouette(t)).unwrap();
    json!({ "silhouette": doc })
}

fn write_gan(dir: &Path, name: &str, seed: u64) -> Checkpoint {
    let cfg = ModelConfig::tiny();
    let ckpt = Checkpoint::gan(cfg.clone(), init_params(&cfg, seed));
    ckpt.save(dir.join(name)).unwrap();
    ckpt
}

fn app(dir: &Path) -> (Router, Arc<Registry>) {
    let reg = Arc::new(Registry::new(dir));
    (router(reg.clone()), reg)
}

#[tokio::test]
async fn extract_one_second_of_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let r = send(&app, "POST", "/v1/extract", wav_bytes(vec![0.0; 24_000])).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.header("content-type"), "application/json");
    let t = parse_silhouette(&r.body).unwrap();
    assert_eq!(t.len(), 90);
    assert!(t.frames().iter().all(|f| f.min == 0.0 && f.max == 0.0));
}

#[tokio::test]
async fn extract_mixes_stereo_down() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: 24_000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = std::io::Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut cursor, spec).unwrap();
        for i in 0..2048 {
            w.write_sample(if i % 2 == 0 { 16384i16 } else { 0 }).unwrap();
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
    }
    let r = send(&app, "POST", "/v1/extract?window=512&hop=128", cursor.into_inner()).await;
    assert_eq!(r.status, StatusCode::OK);
    let t = parse_silhouette(&r.body).unwrap();
    assert_eq!((t.window_len(), t.hop_len(), t.len()), (512, 128, 13));
    assert_eq!(t.frames()[0], Frame::new(0.0, 0.25));
}

#[tokio::test]
async fn extract_rejects_bad_uploads() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    assert_eq!(send(&app, "POST", "/v1/extract", Vec::new()).await.status, StatusCode::BAD_REQUEST);
    assert_eq!(send(&app, "POST", "/v1/extract", b"RIFFjunk".to_vec()).await.status, StatusCode::BAD_REQUEST);
    let short = send(&app, "POST", "/v1/extract", wav_bytes(vec![0.1; 1000])).await;
    assert_eq!(short.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(short.json()["error"], "invalid_input");
}

#[tokio::test]
async fn empty_directory_has_no_models_and_synthesis_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let inv = send(&app, "GET", "/v1/models", Body::empty()).await;
    assert_eq!(inv.status, StatusCode::OK);
    assert_eq!(inv.json()["models"], json!([]));
    assert_eq!(inv.json()["loaded"], Value::Null);
    let r = send(&app, "POST", "/v1/synthesize", request(&track(8)).to_string()).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.json()["error"], "no_model");
}

#[tokio::test]
async fn synthesis_follows_the_length_law_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = write_gan(dir.path(), "a.ckpt", 1);
    let (app, _) = app(dir.path());
    let load = send(&app, "POST", "/v1/models/load", json!({"id": "a"}).to_string()).await;
    assert_eq!(load.status, StatusCode::OK, "{}", String::from_utf8_lossy(&load.body));

    let t = track(12);
    let body = request(&t).to_string();
    let first = send(&app, "POST", "/v1/synthesize", body.clone()).await;
    assert_eq!(first.status, StatusCode::OK, "{}", String::from_utf8_lossy(&first.body));
    assert_eq!(first.header("content-type"), "audio/wav");
    assert_eq!(first.header(FINGERPRINT_HEADER), ModelConfig::tiny().fingerprint());
    let w = decode_wav(&first.body).unwrap();
    assert_eq!((w.len(), w.sample_rate_hz()), (12 * 256, 24_000));

    // The header is the evaluation-path MSE of the returned (16-bit) audio.
    let direct = silhouette_nn::synthesizer_from_checkpoint(&ckpt).unwrap().synthesize(&t).unwrap();
    let direct = decode_wav(&encode_wav(&direct).unwrap()).unwrap();
    assert_eq!(direct.samples(), w.samples());
    let mse: f64 = first.header(MSE_HEADER).parse().unwrap();
    let expected = silhouette_train::eval::achieved_mse(&t, &w).unwrap();
    assert!((mse - expected).abs() <= 1e-12 * expected.max(1.0), "{mse} vs {expected}");

    let second = send(&app, "POST", "/v1/synthesize", body).await;
    assert_eq!(second.body, first.body);
    assert_eq!(second.headers, first.headers);
}

#[tokio::test]
async fn synthesis_rejects_bad_requests() {
    let dir = tempfile::tempdir().unwrap();
    Checkpoint::replay_debug().save(dir.path().join("replay.ckpt")).unwrap();
    let (app, reg) = app(dir.path());
    reg.load(&dir.path().join("replay.ckpt")).unwrap();

    let mut inverted = request(&track(6));
    inverted["silhouette"]["frames"][4] = json!([0.5, 0.1]);
    let r = send(&app, "POST", "/v1/synthesize", inverted.to_string()).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.json()["frame"], 4);

    assert_eq!(send(&app, "POST", "/v1/synthesize", "{nope").await.status, StatusCode::BAD_REQUEST);
    let mut missing = request(&track(6));
    missing["silhouette"].as_object_mut().unwrap().remove("frames");
    assert_eq!(send(&app, "POST", "/v1/synthesize", missing.to_string()).await.status, StatusCode::BAD_REQUEST);

    let few = send(&app, "POST", "/v1/synthesize", request(&track(3)).to_string()).await;
    assert_eq!(few.status, StatusCode::UNPROCESSABLE_ENTITY);

    let mut bad_scheme = request(&track(6));
    bad_scheme["quantization"] = json!("MU001");
    assert_eq!(send(&app, "POST", "/v1/synthesize", bad_scheme.to_string()).await.status, StatusCode::UNPROCESSABLE_ENTITY);

    let mut other = request(&track(6));
    other["model"] = json!("elsewhere");
    assert_eq!(send(&app, "POST", "/v1/synthesize", other.to_string()).await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn quantization_override_changes_the_conditioning() {
    let dir = tempfile::tempdir().unwrap();
    Checkpoint::replay_debug().save(dir.path().join("replay.ckpt")).unwrap();
    let (app, reg) = app(dir.path());
    reg.load(&dir.path().join("replay.ckpt")).unwrap();
    // Replay is only an identity on a constant silhouette.
    let t = SilhouetteTrack::new(vec![Frame::new(-0.3, 0.27); 9], 1024, 256, 24_000, None).unwrap();

    let plain = send(&app, "POST", "/v1/synthesize", request(&t).to_string()).await;
    assert_eq!(plain.header("x-quantization"), "none");
    // Replay reproduces the silhouette exactly (up to 16-bit rounding).
    let mse: f64 = plain.header(MSE_HEADER).parse().unwrap();
    assert!(mse < 1e-8, "{mse}");

    let mut req = request(&t);
    req["quantization"] = json!({"kind": "mu_law", "num_bins": 16});
    let coarse = send(&app, "POST", "/v1/synthesize", req.to_string()).await;
    assert_eq!(coarse.status, StatusCode::OK);
    assert_eq!(coarse.header("x-quantization"), "MU016");
    let coarse_mse: f64 = coarse.header(MSE_HEADER).parse().unwrap();
    assert!(coarse_mse > mse);
    let w = decode_wav(&coarse.body).unwrap();
    let achieved = extract_silhouette(&w, 1024, 256).unwrap();
    assert_eq!(achieved.len(), 6);
}

#[tokio::test]
async fn inventory_and_loading() {
    let dir = tempfile::tempdir().unwrap();
    write_gan(dir.path(), "a.ckpt", 1);
    std::fs::create_dir(dir.path().join("run")).unwrap();
    write_gan(&dir.path().join("run"), "ckpt_5.ckpt", 2);
    std::fs::write(dir.path().join("broken.ckpt"), b"not a checkpoint").unwrap();
    std::fs::write(dir.path().join("notes.txt"), b"ignored").unwrap();
    Checkpoint::replay_debug().save(dir.path().join("replay.ckpt")).unwrap();

    let reg = Arc::new(Registry::new(dir.path()).pinned_to(ModelConfig::tiny().fingerprint()));
    let app = router(reg);
    let inv = send(&app, "GET", "/v1/models", Body::empty()).await.json();
    let ids: Vec<&str> = inv["models"].as_array().unwrap().iter().map(|m| m["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["a", "broken", "replay", "run/ckpt_5"]);
    assert_eq!(inv["models"][0]["fingerprint"], ModelConfig::tiny().fingerprint());
    assert!(inv["models"][1]["error"].is_string());

    let r = send(&app, "POST", "/v1/models/load", json!({"id": "run/ckpt_5"}).to_string()).await;
    assert_eq!(r.status, StatusCode::OK);
    let inv = send(&app, "GET", "/v1/models", Body::empty()).await.json();
    assert_eq!(inv["loaded"]["id"], "run/ckpt_5");
    assert_eq!(inv["models"][3]["loaded"], true);

    assert_eq!(send(&app, "POST", "/v1/models/load", json!({"id": "zzz"}).to_string()).await.status, StatusCode::NOT_FOUND);
    assert_eq!(send(&app, "POST", "/v1/models/load", json!({"path": "missing.ckpt"}).to_string()).await.status, StatusCode::NOT_FOUND);
    assert_eq!(send(&app, "POST", "/v1/models/load", json!({"id": "replay"}).to_string()).await.status, StatusCode::CONFLICT);
    assert_eq!(send(&app, "POST", "/v1/models/load", json!({"id": "broken"}).to_string()).await.status, StatusCode::CONFLICT);
    assert_eq!(send(&app, "POST", "/v1/models/load", "{}").await.status, StatusCode::BAD_REQUEST);

    // Failed loads leave the current model in place.
    let inv = send(&app, "GET", "/v1/models", Body::empty()).await.json();
    assert_eq!(inv["loaded"]["id"], "run/ckpt_5");
    let mut req = request(&track(6));
    req["model"] = json!("a");
    assert_eq!(send(&app, "POST", "/v1/synthesize", req.to_string()).await.status, StatusCode::CONFLICT);
    req["model"] = json!("run/ckpt_5");
    assert_eq!(send(&app, "POST", "/v1/synthesize", req.to_string()).await.status, StatusCode::OK);
}

#[tokio::test]
async fn cors_allows_local_origins_and_exposes_headers() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let preflight = |origin: &str| {
        Request::builder()
            .method("OPTIONS")
            .uri("/v1/synthesize")
            .header("origin", origin)
            .header("access-control-request-method", "POST")
            .body(Body::empty())
            .unwrap()
    };
    let ok = app.clone().oneshot(preflight("http://localhost:5173")).await.unwrap();
    assert_eq!(ok.headers()["access-control-allow-origin"], "http://localhost:5173");
    let other = app.clone().oneshot(preflight("https://example.com")).await.unwrap();
    assert!(other.headers().get("access-control-allow-origin").is_none());

    let get = Request::builder()
        .uri("/v1/models")
        .header("origin", "http://127.0.0.1:8080")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(get).await.unwrap();
    let exposed = resp.headers()["access-control-expose-headers"].to_str().unwrap().to_string();
    assert!(exposed.contains(MSE_HEADER) && exposed.contains(FINGERPRINT_HEADER));
}

/// Requests racing a stream of model swaps each get exactly one model's output.
#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn swaps_never_mix_parameter_sets() {
    let dir = tempfile::tempdir().unwrap();
    let t = track(8);
    let expected: Vec<(String, Vec<u8>)> = [("a", 1u64), ("b", 2)]
        .iter()
        .map(|&(name, seed)| {
            let ckpt = write_gan(dir.path(), &format!("{name}.ckpt"), seed);
            let out = silhouette_nn::synthesizer_from_checkpoint(&ckpt).unwrap().synthesize(&t).unwrap();
            (name.to_string(), encode_wav(&out).unwrap())
        })
        .collect();
    assert_ne!(expected[0].1, expected[1].1);
    let (app, reg) = app(dir.path());
    reg.load(&dir.path().join("a.ckpt")).unwrap();

    let body = request(&t).to_string();
    let mut tasks = Vec::new();
    for i in 0..48 {
        let app = app.clone();
        let body = body.clone();
        tasks.push(tokio::spawn(async move {
            if i % 6 == 0 {
                let id = if i % 12 == 0 { "b" } else { "a" };
                let r = send(&app, "POST", "/v1/models/load", json!({ "id": id }).to_string()).await;
                assert_eq!(r.status, StatusCode::OK);
                None
            } else {
                let r = send(&app, "POST", "/v1/synthesize", body).await;
                assert_eq!(r.status, StatusCode::OK);
                Some((r.header(MODEL_ID_HEADER).to_string(), r.body))
            }
        }));
    }
    let mut seen = std::collections::BTreeSet::new();
    for task in tasks {
        if let Some((id, wav)) = task.await.unwrap() {
            let (_, want) = expected.iter().find(|(n, _)| *n == id).expect("known model id");
            assert!(wav == *want, "response labelled {id} does not match that model's output");
            seen.insert(id);
        }
    }
    assert!(!seen.is_empty());
}
