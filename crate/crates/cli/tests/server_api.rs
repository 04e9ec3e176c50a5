use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use pulse_cli::server::{router, AppState, PeaksView};
use pulse_core::ground_truth_cleaning::AnnotationFile;
use pulse_core::synth::{contact_waveform, synth_trace, IbiModulation, SynthConfig};
use pulse_core::trace_io::serialize_gt_waveform;

fn write_signal(dir: &Path, name: &str) -> PathBuf {
    let cfg = SynthConfig {
        duration_s: 30.0,
        mean_hr_bpm: 60.0,
        ibi_modulation: IbiModulation::Sine {
            freq_hz: 0.1,
            amplitude_ms: 40.0,
        },
        ..SynthConfig::default()
    };
    let beats = synth_trace(&cfg).unwrap().truth_beats;
    let rec = contact_waveform(&beats, cfg.duration_s, 100.0).unwrap();
    let path = dir.join(format!("{name}.csv"));
    std::fs::write(&path, serialize_gt_waveform(&rec)).unwrap();
    path
}

fn app(signals: &[PathBuf], store: &Path) -> (Arc<AppState>, Router) {
    let state = Arc::new(AppState::load(signals, store, AppState::default_delta_factor()).unwrap());
    let r = router(state.clone(), None);
    (state, r)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn peaks(app: &Router, id: &str) -> PeaksView {
    let (s, b) = call(app, "GET", &format!("/api/session/{id}/peaks"), None).await;
    assert_eq!(s, StatusCode::OK);
    serde_json::from_slice(&b).unwrap()
}

#[tokio::test]
async fn delete_then_export_drops_the_peak() {
    let dir = tempfile::tempdir().unwrap();
    let sig = write_signal(dir.path(), "subj1");
    let store = dir.path().join("store");
    let (_, app) = app(&[sig], &store);

    let before = peaks(&app, "subj1").await;
    assert!((29..=31).contains(&before.peaks.len()), "{} proposals", before.peaks.len());
    let victim = before.peaks[10];

    let (s, b) = call(
        &app,
        "POST",
        "/api/session/subj1/edit",
        Some(json!({"edit": {"kind": "delete", "t": victim}, "expected_version": before.version})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&b));
    let after: PeaksView = serde_json::from_slice(&b).unwrap();
    assert_eq!(after.version, before.version + 1);
    assert_eq!(after.peaks.len(), before.peaks.len() - 1);
    assert!(after.dirty && after.can_undo);

    let (s, b) = call(&app, "POST", "/api/session/subj1/export", Some(json!({"annotator": "tester"}))).await;
    assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&b));
    let written = std::fs::read(store.join("subj1.annotations.json")).unwrap();
    assert_eq!(written, b);
    let file = AnnotationFile::parse(&written).unwrap();
    assert_eq!(file.annotator, "tester");
    assert_eq!(file.peaks.len(), before.peaks.len() - 1);
    assert!(!file.peaks.contains(&victim));
    assert!(!peaks(&app, "subj1").await.dirty);
}

#[tokio::test]
async fn stale_version_is_a_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let sig = write_signal(dir.path(), "s");
    let (_, app) = app(&[sig], &dir.path().join("store"));
    let v0 = peaks(&app, "s").await;

    let first = json!({"edit": {"kind": "delete", "t": v0.peaks[3]}, "expected_version": v0.version});
    let second = json!({"edit": {"kind": "delete", "t": v0.peaks[4]}, "expected_version": v0.version});
    let (s1, _) = call(&app, "POST", "/api/session/s/edit", Some(first)).await;
    let (s2, b2) = call(&app, "POST", "/api/session/s/edit", Some(second)).await;
    assert_eq!(s1, StatusCode::OK);
    assert_eq!(s2, StatusCode::CONFLICT);
    let err: Value = serde_json::from_slice(&b2).unwrap();
    assert_eq!(err["error"], "version_conflict");
    assert_eq!(peaks(&app, "s").await.peaks.len(), v0.peaks.len() - 1);
}

#[tokio::test]
async fn concurrent_edits_with_one_version_admit_exactly_one() {
    let dir = tempfile::tempdir().unwrap();
    let sig = write_signal(dir.path(), "s");
    let (_, app) = app(&[sig], &dir.path().join("store"));
    let v0 = peaks(&app, "s").await;

    let tasks: Vec<_> = (0..8)
        .map(|i| {
            let app = app.clone();
            let t = v0.peaks[i + 2];
            let v = v0.version;
            tokio::spawn(async move {
                call(
                    &app,
                    "POST",
                    "/api/session/s/edit",
                    Some(json!({"edit": {"kind": "delete", "t": t}, "expected_version": v})),
                )
                .await
                .0
            })
        })
        .collect();
    let mut ok = 0;
    for t in tasks {
        match t.await.unwrap() {
            StatusCode::OK => ok += 1,
            StatusCode::CONFLICT => {}
            other => panic!("unexpected status {other}"),
        }
    }
    assert_eq!(ok, 1);
}

#[tokio::test]
async fn bad_edits_and_unknown_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let sig = write_signal(dir.path(), "s");
    let (_, app) = app(&[sig], &dir.path().join("store"));

    let (s, _) = call(&app, "GET", "/api/session/nope/peaks", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, b) = call(
        &app,
        "POST",
        "/api/session/s/edit",
        Some(json!({"edit": {"kind": "delete", "t": 12.345}})),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let err: Value = serde_json::from_slice(&b).unwrap();
    assert_eq!(err["error"], "peak_not_found");

    let (s, _) = call(&app, "POST", "/api/session/s/edit", Some(json!({"edit": {"kind": "undo"}}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let (s, _) = call(&app, "GET", "/api/session/s/signal?from=5&to=1", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn signal_is_decimated_to_max_points() {
    let dir = tempfile::tempdir().unwrap();
    let sig = write_signal(dir.path(), "s");
    let (_, app) = app(&[sig], &dir.path().join("store"));

    let (s, b) = call(&app, "GET", "/api/session/s/signal?from=2&to=12&max_points=100", None).await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&b).unwrap();
    let pts = v["points"].as_array().unwrap();
    assert!(!pts.is_empty() && pts.len() <= 100, "{} points", pts.len());
    for p in pts {
        let t = p[0].as_f64().unwrap();
        assert!((2.0..=12.0).contains(&t));
    }
    let (s, b) = call(&app, "GET", "/api/session/s/signal", None).await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&b).unwrap();
    assert!(v["points"].as_array().unwrap().len() <= 2000);
    assert_eq!(v["rate"].as_f64().unwrap(), 100.0);
}

#[tokio::test]
async fn rr_follows_blank_regions() {
    let dir = tempfile::tempdir().unwrap();
    let sig = write_signal(dir.path(), "s");
    let (_, app) = app(&[sig], &dir.path().join("store"));

    let rr = |b: &[u8]| -> Vec<(f64, f64)> {
        let v: Value = serde_json::from_slice(b).unwrap();
        serde_json::from_value(v["rr"].clone()).unwrap()
    };
    let (_, b) = call(&app, "GET", "/api/session/s/rr", None).await;
    let full = rr(&b);
    let n_peaks = peaks(&app, "s").await.peaks.len();
    assert_eq!(full.len(), n_peaks - 1);
    for &(_, ms) in &full {
        assert!((900.0..1100.0).contains(&ms), "{ms}");
    }

    let (s, _) = call(
        &app,
        "POST",
        "/api/session/s/edit",
        Some(json!({"edit": {"kind": "mark_blank", "t0": 10.0, "t1": 14.0}})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let (_, b) = call(&app, "GET", "/api/session/s/rr", None).await;
    assert!(rr(&b).len() < full.len());
}

#[tokio::test]
async fn sessions_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let sigs = vec![write_signal(dir.path(), "a"), write_signal(dir.path(), "b")];
    let store = dir.path().join("store");
    let (state, app1) = app(&sigs, &store);
    let v0 = peaks(&app1, "a").await;
    for (i, edit) in [
        json!({"kind": "delete", "t": v0.peaks[5]}),
        json!({"kind": "add", "t": 15.5}),
        json!({"kind": "move", "from": v0.peaks[7], "to": v0.peaks[7] + 0.02}),
        json!({"kind": "mark_blank", "t0": 20.0, "t1": 22.5}),
    ]
    .into_iter()
    .enumerate()
    {
        let (s, b) = call(
            &app1,
            "POST",
            "/api/session/a/edit",
            Some(json!({"edit": edit, "expected_version": v0.version + i as u64})),
        )
        .await;
        assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&b));
    }
    let before_a = peaks(&app1, "a").await;
    let before_b = peaks(&app1, "b").await;
    state.persist_all().unwrap();
    drop(app1);
    drop(state);

    let (_, app2) = app(&sigs, &store);
    let after_a = peaks(&app2, "a").await;
    assert_eq!(after_a.peaks, before_a.peaks);
    assert_eq!(after_a.blank_regions, before_a.blank_regions);
    assert_eq!(after_a.version, before_a.version);
    assert_eq!(after_a.can_undo, before_a.can_undo);
    assert_eq!(peaks(&app2, "b").await.peaks, before_b.peaks);

    let (s, _) = call(&app2, "POST", "/api/session/a/edit", Some(json!({"edit": {"kind": "undo"}}))).await;
    assert_eq!(s, StatusCode::OK);
    let undone = peaks(&app2, "a").await;
    assert!(undone.blank_regions.is_empty());
}

#[test]
fn corrupt_store_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let sig = write_signal(dir.path(), "s");
    let store = dir.path().join("store");
    std::fs::create_dir_all(&store).unwrap();
    std::fs::write(store.join("s.session.json"), "{ not json").unwrap();
    let err = AppState::load(&[sig], &store, AppState::default_delta_factor()).err().unwrap();
    assert!(err.to_string().contains("corrupt session store"), "{err}");
    assert_eq!(pulse_cli::exit_code(&err), 2);
}

#[tokio::test]
async fn busy_port_fails_at_startup() {
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = held.local_addr().unwrap();
    let err = pulse_cli::server::bind(addr).await.err().unwrap();
    assert!(err.to_string().contains("cannot listen"), "{err}");
    assert_eq!(pulse_cli::exit_code(&err), 4);
}

#[tokio::test]
async fn graceful_shutdown_persists_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let sig = write_signal(dir.path(), "s");
    let store = dir.path().join("store");
    let state = Arc::new(AppState::load(&[sig], &store, AppState::default_delta_factor()).unwrap());
    let listener = pulse_cli::server::bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let handle = tokio::spawn(pulse_cli::server::serve(listener, state.clone(), None, async {
        let _ = rx.await;
    }));
    tx.send(()).unwrap();
    handle.await.unwrap().unwrap();
    let text = std::fs::read_to_string(store.join("s.session.json")).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["dirty"], false);
}

#[tokio::test]
async fn index_page_is_served() {
    let dir = tempfile::tempdir().unwrap();
    let sig = write_signal(dir.path(), "s");
    let (_, app) = app(&[sig], &dir.path().join("store"));
    let (s, b) = call(&app, "GET", "/", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(String::from_utf8_lossy(&b).contains("/api/sessions"));
    let (s, b) = call(&app, "GET", "/api/sessions", None).await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&b).unwrap();
    assert_eq!(v[0]["id"], "s");
}

#[tokio::test]
async fn scripted_session_exports_expected_peaks() {
    let dir = tempfile::tempdir().unwrap();
    let sig = write_signal(dir.path(), "s");
    let store = dir.path().join("store");
    let (_, app) = app(&[sig], &store);
    let v0 = peaks(&app, "s").await;

    let mut expected = v0.peaks.clone();
    let moved_from = expected[8];
    let moved_to = moved_from + 0.03;
    let deleted = expected[12];
    expected.push(4.5);
    expected.retain(|&t| t != deleted);
    for t in expected.iter_mut() {
        if *t == moved_from {
            *t = moved_to;
        }
    }
    expected.sort_by(f64::total_cmp);

    let script = [
        json!({"kind": "add", "t": 4.5}),
        json!({"kind": "move", "from": moved_from, "to": moved_to}),
        json!({"kind": "delete", "t": deleted}),
        json!({"kind": "mark_blank", "t0": 25.0, "t1": 27.0}),
        json!({"kind": "undo"}),
    ];
    let mut version = v0.version;
    for edit in script {
        let (s, b) = call(
            &app,
            "POST",
            "/api/session/s/edit",
            Some(json!({"edit": edit, "expected_version": version})),
        )
        .await;
        assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&b));
        version = serde_json::from_slice::<PeaksView>(&b).unwrap().version;
    }
    let (s, _) = call(
        &app,
        "POST",
        "/api/session/s/edit",
        Some(json!({"edit": {"kind": "add", "t": 9.9}, "expected_version": version - 1})),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (s, b) = call(&app, "POST", "/api/session/s/export", Some(json!({"expected_version": version}))).await;
    assert_eq!(s, StatusCode::OK);
    let file = AnnotationFile::parse(&b).unwrap();
    assert_eq!(file.peaks, expected);
    assert!(file.blank_regions.is_empty());
}
