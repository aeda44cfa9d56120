use std::fs;
use std::net::TcpListener;
use std::thread;

use rrto_core::bench::{compare_modes, emit_csv, run_scenario, BenchError, Mode, Phase, ScenarioConfig};
use rrto_core::server::ServerSession;
use rrto_core::trace::TraceLog;
use rrto_core::transport::endpoint::serve_tcp;
use rrto_core::workloads::{gen_sam, record_locally, Workload, WorkloadProfile};

fn reference(workload: &str, n: usize, seed: u64) -> Vec<Vec<u8>> {
    run_scenario(&ScenarioConfig::new(workload, Mode::DeviceOnly, n, seed))
        .unwrap()
        .outputs
}

#[test]
fn replay_over_tcp_matches_local_execution() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let device = Workload::load("tiny3").unwrap().device();
    let server = thread::spawn(move || serve_tcp(listener, move || ServerSession::wall(device.clone()), Some(1)));

    let cfg = ScenarioConfig {
        sim_clock: false,
        server: Some(addr.to_string()),
        ..ScenarioConfig::new("tiny3", Mode::Replay, 12, 4)
    };
    let report = run_scenario(&cfg).unwrap();
    assert_eq!(report.outputs, reference("tiny3", 12, 4));
    assert!(report.rows.iter().any(|r| r.phase == Phase::Steady));
    assert_eq!(report.summary.fallbacks, 0);
    server.join().unwrap().unwrap();
}

#[test]
fn threaded_link_on_the_wall_clock() {
    let cfg = ScenarioConfig {
        sim_clock: false,
        rtt_ms: 0.2,
        ..ScenarioConfig::new("multicopy", Mode::Replay, 8, 2)
    };
    let report = run_scenario(&cfg).unwrap();
    assert_eq!(report.outputs, reference("multicopy", 8, 2));
    let steady: Vec<_> = report.rows.iter().filter(|r| r.phase == Phase::Steady).collect();
    assert!(!steady.is_empty());
    // Three uploads and three downloads per window.
    assert!(steady.iter().all(|r| r.rpc_count == 6));
    assert!(steady.iter().all(|r| r.latency_s >= 0.2e-3));
}

#[test]
fn remote_server_requires_wall_clock() {
    let cfg = ScenarioConfig {
        server: Some("127.0.0.1:1".into()),
        ..ScenarioConfig::new("tiny3", Mode::PerOp, 2, 0)
    };
    assert!(matches!(run_scenario(&cfg), Err(BenchError::Config(_))));
}

#[test]
fn bandwidth_trace_slows_the_link() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bw.csv");
    fs::write(&path, "t_s,mbps\n0,93\n0.001,0.5\n").unwrap();
    let base = ScenarioConfig::new("tiny3", Mode::PerOp, 4, 1);
    let traced = ScenarioConfig {
        bw_trace: Some(path),
        ..base.clone()
    };
    let fast = run_scenario(&base).unwrap().summary.mean_latency_s;
    let slow = run_scenario(&traced).unwrap().summary.mean_latency_s;
    assert!(slow > fast, "{slow} <= {fast}");
}

#[test]
fn malformed_bandwidth_trace_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bw.csv");
    fs::write(&path, "time,rate\n0,93\n").unwrap();
    let cfg = ScenarioConfig {
        bw_trace: Some(path),
        ..ScenarioConfig::new("tiny3", Mode::PerOp, 2, 1)
    };
    assert!(run_scenario(&cfg).is_err());
}

#[test]
fn trace_files_round_trip() {
    let profile = WorkloadProfile::bundled("multicopy").unwrap();
    let workload = Workload::new(profile.clone()).unwrap();
    let stream = gen_sam(&profile, 3, 9).unwrap();
    let log = record_locally(stream.calls(), &mut workload.device());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.trace.jsonl");
    log.serialize(fs::File::create(&path).unwrap()).unwrap();
    let back = TraceLog::deserialize(std::io::BufReader::new(fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(back.len(), log.len());
    assert!(back.entries().iter().zip(log.entries()).all(|(a, b)| a.equivalent(b)));
}

#[test]
fn profile_files_load_like_bundled_ones() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("kapao.json");
    fs::write(&path, WorkloadProfile::bundled("kapao").unwrap().to_json()).unwrap();
    let from_file = WorkloadProfile::load(path.to_str().unwrap()).unwrap();
    assert_eq!(from_file, WorkloadProfile::load("kapao").unwrap());
}

#[test]
fn comparison_reports_reductions() {
    let base = ScenarioConfig::new("tiny3", Mode::PerOp, 10, 3);
    let cfgs = [base.clone(), base.with_mode(Mode::Semi), base.with_mode(Mode::Replay)];
    let v = compare_modes(&cfgs).unwrap();
    assert_eq!(v["outputs_identical"], true);
    assert_eq!(v["results"].as_array().unwrap().len(), 3);
    let replay_vs_perop = v["reductions"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["mode"] == "replay" && r["baseline_mode"] == "perop")
        .unwrap();
    assert!(replay_vs_perop["latency"].as_f64().unwrap() > 0.5);

    let other = ScenarioConfig::new("multicopy", Mode::Replay, 10, 3);
    assert!(matches!(compare_modes(&[base, other]), Err(BenchError::MismatchedWorkloads)));
}

#[test]
fn metrics_csv_lands_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let report = run_scenario(&ScenarioConfig::new("tiny3", Mode::Replay, 6, 0)).unwrap();
    emit_csv(&report.rows, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1 + 6 + 4);
    assert!(text.lines().last().unwrap().starts_with("max,replay,"));
}
