use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use pulse_core::ground_truth_cleaning::AnnotationFile;
use pulse_core::pipeline::AnalysisResult;

fn pulse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pulse"))
        .args(args)
        .env("PULSE_LOG", "error")
        .output()
        .expect("spawn pulse")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("sim");
    let mut args = vec!["simulate", "--out", s(&out)];
    args.extend_from_slice(extra);
    let o = pulse(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn simulate_analyze_evaluate_round() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &["--preset", "clean72", "--duration", "120"]);
    for f in ["trace.csv", "truth.json", "reference.csv", "synth.json"] {
        assert!(sim.join(f).exists(), "{f} missing");
    }
    let truth = AnnotationFile::parse(&std::fs::read(sim.join("truth.json")).unwrap()).unwrap();
    assert!((143..=145).contains(&truth.peaks.len()), "{}", truth.peaks.len());

    let result = dir.path().join("out/result.json");
    let o = pulse(&["analyze", "--trace", s(&sim.join("trace.csv")), "--out", s(&result), "--hr-window", "inf"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = AnalysisResult::parse(&std::fs::read(&result).unwrap()).unwrap();
    assert_eq!(r.source_id, "trace");
    assert!((r.hr_series.entries[0].bpm - 72.0).abs() < 0.5, "{}", r.hr_series.entries[0].bpm);
    assert!(r.timing.is_some());

    let report = dir.path().join("report.json");
    let o = pulse(&[
        "evaluate",
        "--result",
        s(&result),
        "--truth",
        s(&sim.join("truth.json")),
        "--windows",
        "15,30,inf",
        "--out",
        s(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rep = json(&report);
    let hr = rep["hr"].as_array().unwrap();
    assert_eq!(hr.len(), 3);
    for w in hr {
        assert!(w["mae_bpm"].as_f64().unwrap() < 1.0, "{w}");
        assert!(w["baseline_mae_bpm"].as_f64().unwrap() > 2.0, "{w}");
    }
}

#[test]
fn result_against_its_own_beats_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &["--preset", "hrv-lf", "--duration", "90"]);
    let result = dir.path().join("r.json");
    let o = pulse(&["analyze", "--trace", s(&sim.join("trace.csv")), "--out", s(&result)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = AnalysisResult::parse(&std::fs::read(&result).unwrap()).unwrap();

    let own = AnnotationFile {
        version: 0,
        signal_id: "self".into(),
        kind: pulse_core::trace_io::SignalKind::Ppg,
        peaks: r.beats.clone(),
        blank_regions: Vec::new(),
        annotator: "self".into(),
        created_at: String::new(),
    };
    let truth = dir.path().join("own.json");
    std::fs::write(&truth, own.to_json().unwrap()).unwrap();
    let report = dir.path().join("rep.json");
    let o = pulse(&["evaluate", "--result", s(&result), "--truth", s(&truth), "--out", s(&report)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rep = json(&report);
    for w in rep["hr"].as_array().unwrap() {
        assert_eq!(w["mae_bpm"].as_f64().unwrap(), 0.0, "{w}");
        assert_eq!(w["std_bpm"].as_f64().unwrap(), 0.0, "{w}");
    }
    for (_, m) in rep["hrv"].as_object().unwrap() {
        if let Some(e) = m.get("abs_error").and_then(Value::as_f64) {
            assert_eq!(e, 0.0, "{m}");
        }
    }
}

#[test]
fn disjoint_truth_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &["--duration", "60"]);
    let result = dir.path().join("r.json");
    assert!(pulse(&["analyze", "--trace", s(&sim.join("trace.csv")), "--out", s(&result)]).status.success());
    let far = AnnotationFile {
        version: 0,
        signal_id: "far".into(),
        kind: pulse_core::trace_io::SignalKind::Ecg,
        peaks: (0..60).map(|i| 1000.0 + i as f64).collect(),
        blank_regions: Vec::new(),
        annotator: String::new(),
        created_at: String::new(),
    };
    let truth = dir.path().join("far.json");
    std::fs::write(&truth, far.to_json().unwrap()).unwrap();
    let o = pulse(&["evaluate", "--result", s(&result), "--truth", s(&truth), "--out", s(&dir.path().join("x.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("pulse: error[validation]:"), "{}", stderr(&o));
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "t,r,g,b,yaw,pitch,roll\n0,1,1\n").unwrap();
    let o = pulse(&["analyze", "--trace", s(&bad), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let sim = simulate(dir.path(), &["--duration", "5"]);
    let o = pulse(&["analyze", "--trace", s(&sim.join("trace.csv")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("pulse: error[insufficient-data]:"), "{}", stderr(&o));

    let o = pulse(&["analyze", "--trace", s(&dir.path().join("missing.csv")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    let o = pulse(&["simulate", "--hr", "400", "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = pulse(&["analyze", "--trace", s(&sim.join("trace.csv")), "--out", s(&out), "--hop-s", "-1"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn config_file_is_applied_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &["--duration", "60"]);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"hr_window": "inf", "peak_delta": 0.25}"#).unwrap();
    let out = dir.path().join("r.json");
    let o = pulse(&[
        "analyze",
        "--trace",
        s(&sim.join("trace.csv")),
        "--out",
        s(&out),
        "--config",
        s(&cfg),
        "--hop-s",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = json(&out);
    let echo = &v["meta"]["config"];
    assert_eq!(echo["peak_delta"].as_f64(), Some(0.25));
    assert_eq!(echo["hop_s"].as_f64(), Some(1.0));
    assert_eq!(v["hr_series"]["entries"].as_array().unwrap().len(), 1);

    std::fs::write(&cfg, r#"{"window_sec": 8}"#).unwrap();
    let o = pulse(&["analyze", "--trace", s(&sim.join("trace.csv")), "--out", s(&out), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

fn without_config_and_timing(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timing");
    v["meta"].as_object_mut().unwrap().remove("config");
    v
}

#[test]
fn analyze_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &["--preset", "motion", "--duration", "60"]);
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let o = pulse(&["analyze", "--trace", s(&sim.join("trace.csv")), "--out", s(out), "--no-timing"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(json(&a).get("timing").is_none());
}

#[test]
fn motion_switch_is_a_no_op_without_motion() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &["--preset", "clean72", "--duration", "60"]);
    let on = dir.path().join("on.json");
    let off = dir.path().join("off.json");
    let trace = sim.join("trace.csv");
    assert!(pulse(&["analyze", "--trace", s(&trace), "--out", s(&on), "--no-timing"]).status.success());
    assert!(pulse(&["analyze", "--trace", s(&trace), "--out", s(&off), "--no-timing", "--no-motion-suppression"])
        .status
        .success());
    assert_eq!(without_config_and_timing(json(&on)), without_config_and_timing(json(&off)));
}

#[test]
fn motion_switch_matters_under_motion() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &["--preset", "motion", "--duration", "120"]);
    let trace = sim.join("trace.csv");
    let run = |extra: &[&str]| {
        let out = dir.path().join(format!("r{}.json", extra.len()));
        let mut args = vec!["analyze", "--trace", s(&trace), "--out", s(&out), "--hr-window", "inf"];
        args.extend_from_slice(extra);
        assert!(pulse(&args).status.success());
        json(&out)["hr_series"]["entries"][0]["bpm"].as_f64().unwrap()
    };
    let on = run(&[]);
    let off = run(&["--no-motion-suppression"]);
    assert!((on - 60.0).abs() < 1.0, "on {on}");
    assert!((off - 60.0).abs() > 5.0, "off {off}");
}

#[test]
fn bench_reports_stages() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.json");
    let o = pulse(&["bench", "--synth-preset", "clean72", "--runs", "2", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = json(&out);
    assert_eq!(v["runs"].as_u64(), Some(2));
    assert_eq!(v["n_frames"].as_u64(), Some(9001));
    assert!(v["realtime_factor"].as_f64().unwrap() >= 30.0);
    let stages = v["stages"].as_array().unwrap();
    assert!(stages.iter().any(|st| st["stage"] == "overlap_add"));

    let o = pulse(&["bench", "--synth-preset", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    let o = pulse(&["bench"]);
    assert_eq!(o.status.code(), Some(2), "clap usage errors exit with 2");
}

#[test]
fn simulate_flags_override_preset() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(
        dir.path(),
        &["--preset", "hrv-lf", "--hr", "80", "--ibi-mod-amp", "20", "--duration", "30", "--seed", "9"],
    );
    let cfg = json(&sim.join("synth.json"));
    assert_eq!(cfg["mean_hr_bpm"].as_f64(), Some(80.0));
    assert_eq!(cfg["ibi_modulation"]["amplitude_ms"].as_f64(), Some(20.0));
    assert_eq!(cfg["ibi_modulation"]["freq_hz"].as_f64(), Some(0.1));
    assert_eq!(cfg["seed"].as_u64(), Some(9));

    let again = dir.path().join("again");
    let o = pulse(&[
        "simulate", "--preset", "hrv-lf", "--hr", "80", "--ibi-mod-amp", "20", "--duration", "30", "--seed", "9", "--out",
        s(&again),
    ]);
    assert!(o.status.success());
    assert_eq!(
        std::fs::read(sim.join("trace.csv")).unwrap(),
        std::fs::read(again.join("trace.csv")).unwrap()
    );
}
