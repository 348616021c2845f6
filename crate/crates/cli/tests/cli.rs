use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bsannot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsannot")).args(args).output().unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("stderr: {}", String::from_utf8_lossy(&out.stderr)))
}

fn synth(dir: &Path) -> String {
    let spec = dir.join("subj.json");
    std::fs::write(&spec, r#"{"seed": 3, "n_events": 40}"#).unwrap();
    let out = bsannot(&["synth", "--corpus", spec.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("subj.wav").to_str().unwrap().to_string()
}

#[test]
fn synth_annotate_eval_adjust() {
    let dir = tempfile::tempdir().unwrap();
    let wav = synth(dir.path());
    let out_dir = dir.path().join("out");
    let out = bsannot(&["annotate", "--in", &wav, "--out", out_dir.to_str().unwrap(), "--cohort", "healthy"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["failed_channels"], 0);

    let labels = out_dir.join("subj.RUQ.labels.txt");
    let manifest: Value = serde_json::from_slice(&std::fs::read(out_dir.join("subj.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["backend"], "rule");
    assert_eq!(manifest["config"]["cohort"], "healthy");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["channels"][0]["labels_file"], "subj.RUQ.labels.txt");

    let truth = dir.path().join("subj.truth.labels.txt");
    let report_dir = dir.path().join("eval");
    let out = bsannot(&[
        "eval",
        "--ref",
        truth.to_str().unwrap(),
        "--cand",
        labels.to_str().unwrap(),
        "--out",
        report_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(s["matched_events"].as_u64().unwrap() >= 36, "{s}");
    for f in ["agreement.json", "confusion.csv", "distribution.json", "distribution.csv", "histogram.candidate.csv"] {
        assert!(report_dir.join(f).exists(), "{f}");
    }

    let out = bsannot(&[
        "adjust",
        "--auto",
        labels.to_str().unwrap(),
        "--expert",
        labels.to_str().unwrap(),
        "--out",
        report_dir.to_str().unwrap(),
        "--review-time-s",
        "30",
        "--manual-baseline-s",
        "100",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["removed"], 0);
    assert_eq!(r["time_reduction_pct"], 70.0);
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bsannot(&["annotate", "--in", "/nonexistent/x.wav", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let e = stderr_json(&out);
    assert_eq!(e["v"], 1);
    assert_eq!(e["error"]["kind"], "io");
}

#[test]
fn usage_errors_exit_2() {
    let out = bsannot(&["annotate", "--in", "a.wav", "--out", "o", "--backend", "magic"]);
    assert_eq!(out.status.code(), Some(2));
    let out = bsannot(&["annotate", "--in", "a.wav", "--out", "o", "--backend", "spectral"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "config");
}

#[test]
fn malformed_labels_report_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.labels.txt");
    std::fs::write(&bad, "0.0\t1.0\tSB\n1.0\tx\tMB\n").unwrap();
    let out = bsannot(&[
        "eval",
        "--ref",
        bad.to_str().unwrap(),
        "--cand",
        bad.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr_json(&out)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("bad.labels.txt") && msg.contains("line 2"), "{msg}");
}

#[test]
fn external_backend_paths() {
    let dir = tempfile::tempdir().unwrap();
    let wav = synth(dir.path());
    let o = dir.path().join("o");
    let o = o.to_str().unwrap();

    // uniform adapter over stdio: every event comes back SB
    let adapter = format!("{} adapter-uniform", env!("CARGO_BIN_EXE_bsannot"));
    let out = bsannot(&["annotate", "--in", &wav, "--out", o, "--backend", "external", "--adapter", &adapter]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(Path::new(o).join("subj.RUQ.labels.txt")).unwrap();
    assert!(text.lines().all(|l| l.ends_with("SB") || l.ends_with("None")));

    // unreachable adapter falls back to the rule classifier
    let out = bsannot(&["annotate", "--in", &wav, "--out", o, "--backend", "external", "--adapter", "tcp://127.0.0.1:9"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // without the fallback every event fails
    let cfg = dir.path().join("strict.toml");
    std::fs::write(&cfg, "backend = \"external\"\nadapter = \"tcp://127.0.0.1:9\"\nfallback_to_rule = false\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let out = bsannot(&["annotate", "--in", &wav, "--out", o, "--config", cfg]);
    assert_eq!(out.status.code(), Some(1));
    let e = stderr_json(&out);
    assert_eq!(e["error"]["kind"], "channel_failure");
    assert_eq!(e["error"]["detail"][0]["failures"][0]["kind"], "transport");

    let out = bsannot(&["annotate", "--in", &wav, "--out", o, "--config", cfg, "--keep-going"]);
    assert_eq!(out.status.code(), Some(0));
    let s: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(s["failed_channels"], 1);
}

#[test]
fn serve_on_a_busy_port_fails() {
    let dir = tempfile::tempdir().unwrap();
    let busy = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port().to_string();
    let out = bsannot(&["serve", "--port", &port, "--data", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "bind");
}

#[test]
fn train_writes_a_model() {
    let dir = tempfile::tempdir().unwrap();
    for s in 0..8 {
        let spec = dir.path().join(format!("s{s}.json"));
        std::fs::write(&spec, format!(r#"{{"seed": {s}, "n_events": 24, "mix": [["SB", 1], ["MB", 1], ["CRS", 1], ["HS", 1]]}}"#)).unwrap();
        let data = dir.path().join("data");
        let out = bsannot(&["synth", "--corpus", spec.to_str().unwrap(), "--out", data.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let models = dir.path().join("models");
    let out = bsannot(&[
        "train",
        "--data",
        dir.path().join("data").to_str().unwrap(),
        "--cohort",
        "healthy",
        "--out",
        models.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["subjects"], 8);
    assert!(Path::new(r["path"].as_str().unwrap()).exists());
}

#[cfg(unix)]
#[test]
fn serve_stops_on_sigterm() {
    use std::io::{Read, Write};
    let dir = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_bsannot"))
        .args(["serve", "--port", &port.to_string(), "--data", dir.path().to_str().unwrap()])
        .spawn()
        .unwrap();
    let mut body = String::new();
    for _ in 0..100 {
        if let Ok(mut s) = std::net::TcpStream::connect(("127.0.0.1", port)) {
            s.write_all(b"GET /health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
            s.read_to_string(&mut body).unwrap();
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    assert!(body.contains("\"status\":\"ok\""), "{body}");
    let killed = Command::new("kill").args(["-TERM", &child.id().to_string()]).status().unwrap();
    assert!(killed.success());
    assert!(child.wait().unwrap().success());
}
