use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};
use std::thread;
use std::time::Duration;

fn rrto(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rrto")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn bench_run_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    let out = rrto(&[
        "bench", "run", "--workload", "tiny3", "--mode", "replay", "--rtt-ms", "2", "--bandwidth-mbps", "93",
        "--inferences", "8", "--seed", "3", "--sim-clock", "--out", path(&csv),
    ]);
    let summary = stdout_json(&out);
    assert_eq!(summary["summary"]["fallbacks"], 0);
    assert_eq!(summary["summary"]["mean_rpc_count"], 2.0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("inference_id,mode,rpc_count,latency_s,energy_j,phase"));
    assert_eq!(lines.clone().count(), 8 + 4);
    assert!(lines.next().unwrap().ends_with(",recording"));
}

#[test]
fn bench_run_rejects_bad_arguments() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    let out = rrto(&["bench", "run", "--workload", "tiny3", "--mode", "fast", "--inferences", "2", "--out", path(&csv)]);
    assert!(!out.status.success());
    let out = rrto(&[
        "bench", "run", "--workload", "missing", "--mode", "perop", "--inferences", "2", "--sim-clock", "--out", path(&csv),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing"));
    assert!(!csv.exists());
}

#[test]
fn recorded_traces_can_be_analyzed() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("multicopy.trace.jsonl");
    let out = rrto(&["trace", "record", "--workload", "multicopy", "--inferences", "4", "--out", path(&trace)]);
    assert!(out.status.success());
    let found = stdout_json(&rrto(&["oss", "analyze", path(&trace)]));
    assert_eq!(found["period"], 18);
    assert_eq!(found["composition"]["MemcpyHtoD"], 3);
    assert!(found["composition"].get("Malloc").is_none());

    let coarse = stdout_json(&rrto(&["oss", "analyze", path(&trace), "--coarse-tags", "--repeats", "4"]));
    assert_eq!(coarse["period"], 18);
    let too_many = stdout_json(&rrto(&["oss", "analyze", path(&trace), "--repeats", "5"]));
    assert!(too_many.is_null());
}

#[test]
fn malformed_traces_fail() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("bad.trace.jsonl");
    std::fs::write(&trace, "{\"index\":3}\n").unwrap();
    assert!(!rrto(&["oss", "analyze", path(&trace)]).status.success());
}

#[test]
fn bench_compare_reads_a_scenario_list() {
    let dir = tempfile::tempdir().unwrap();
    let specs = dir.path().join("specs.json");
    let list = serde_json::json!([
        {"workload": "tiny3", "mode": "perop", "inferences": 10, "seed": 1},
        {"workload": "tiny3", "mode": "replay", "inferences": 10, "seed": 1},
    ]);
    std::fs::write(&specs, list.to_string()).unwrap();
    let v = stdout_json(&rrto(&["bench", "compare", "--specs", path(&specs)]));
    assert_eq!(v["outputs_identical"], true);
    assert_eq!(v["reductions"].as_array().unwrap().len(), 2);
}

#[test]
fn served_sessions_accept_remote_runs() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let addr = format!("127.0.0.1:{port}");
    let mut server = Command::new(env!("CARGO_BIN_EXE_rrto"))
        .args(["serve", "--listen", &addr, "--workload", "tiny3", "--max-connections", "1"])
        .spawn()
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    let mut out = None;
    for _ in 0..50 {
        let o = rrto(&[
            "bench", "run", "--workload", "tiny3", "--mode", "replay", "--inferences", "6", "--server", &addr,
            "--out", path(&csv),
        ]);
        if o.status.success() {
            out = Some(o);
            break;
        }
        thread::sleep(Duration::from_millis(100));
    }
    let summary = stdout_json(&out.expect("server never accepted"));
    assert!(summary["summary"]["steady_inferences"].as_u64().unwrap() > 0);
    assert!(server.wait().unwrap().success());
}
