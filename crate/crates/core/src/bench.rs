//! Scenario runner and metrics.
//!
//! A scenario runs one workload under one execution mode and reports, per
//! steady inference, how many exchanges it needed, how long it took and how
//! much energy the device spent on it.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::client::{ClientError, LocalRuntime, OffloadClient, OffloadMode, RecorderConfig, Runtime};
use crate::oss::OssConfig;
use crate::runtime::{ApiCall, ApiKind};
use crate::server::ServerSession;
use crate::trace::TagMode;
use crate::transport::clock::{secs, Clock, Nanos};
use crate::transport::endpoint::{SimEndpoint, TcpEndpoint, ThreadEndpoint, TransportError};
use crate::transport::net::{BwTrace, NetConfig, NetError};
use crate::workloads::{CallStream, Variant, Workload, WorkloadError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("run stopped at inference {inference}: {source}")]
    Interrupted {
        inference: usize,
        rows: Vec<MetricsRow>,
        #[source]
        source: ClientError,
    },
    #[error("no metrics rows to write")]
    NoRows,
    #[error("scenarios differ in workload, seed or inference count")]
    MismatchedWorkloads,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Device power draw in each state, in watts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub p_inference: f64,
    pub p_communication: f64,
    pub p_standby: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel {
            p_inference: 13.35,
            p_communication: 4.25,
            p_standby: 4.04,
        }
    }
}

impl EnergyModel {
    pub fn validate(&self) -> Result<(), BenchError> {
        if [self.p_inference, self.p_communication, self.p_standby]
            .iter()
            .all(|p| *p > 0.0)
        {
            Ok(())
        } else {
            Err(BenchError::Config("powers must be positive".into()))
        }
    }

    /// Joules for an interval of `total_ns`, of which `compute_ns` were spent
    /// computing and `comm_ns` waiting for the network.
    pub fn energy(&self, compute_ns: Nanos, comm_ns: Nanos, total_ns: Nanos) -> f64 {
        let standby = total_ns.saturating_sub(compute_ns + comm_ns);
        secs(compute_ns) * self.p_inference + secs(comm_ns) * self.p_communication + secs(standby) * self.p_standby
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    DeviceOnly,
    PerOp,
    Semi,
    Replay,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::DeviceOnly, Mode::PerOp, Mode::Semi, Mode::Replay];

    pub fn name(self) -> &'static str {
        match self {
            Mode::DeviceOnly => "deviceonly",
            Mode::PerOp => "perop",
            Mode::Semi => "semi",
            Mode::Replay => "replay",
        }
    }

    fn offload(self) -> Option<OffloadMode> {
        match self {
            Mode::DeviceOnly => None,
            Mode::PerOp => Some(OffloadMode::PerOp),
            Mode::Semi => Some(OffloadMode::Semi),
            Mode::Replay => Some(OffloadMode::Replay),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Mode, BenchError> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| BenchError::Config(format!("unknown mode `{s}` (deviceonly, perop, semi, replay)")))
    }
}

fn default_rtt_ms() -> f64 {
    2.0
}

fn default_bandwidth() -> f64 {
    93.0
}

fn default_true() -> bool {
    true
}

fn default_repeats() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Bundled profile name or profile file.
    pub workload: String,
    pub mode: Mode,
    #[serde(default = "default_rtt_ms")]
    pub rtt_ms: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_mbps: f64,
    #[serde(default)]
    pub bw_trace: Option<PathBuf>,
    pub inferences: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub sim_clock: bool,
    /// Switch to the mutated window from this inference on (1-based).
    #[serde(default)]
    pub mutate_at: Option<usize>,
    #[serde(default)]
    pub alternating: bool,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub coarse_tags: bool,
    #[serde(default)]
    pub recorder: RecorderConfig,
    #[serde(default)]
    pub energy: EnergyModel,
    /// Remote server `host:port`; wall clock only.
    #[serde(default)]
    pub server: Option<String>,
}

impl ScenarioConfig {
    pub fn new(workload: impl Into<String>, mode: Mode, inferences: usize, seed: u64) -> Self {
        ScenarioConfig {
            workload: workload.into(),
            mode,
            rtt_ms: default_rtt_ms(),
            bandwidth_mbps: default_bandwidth(),
            bw_trace: None,
            inferences,
            seed,
            sim_clock: true,
            mutate_at: None,
            alternating: false,
            repeats: default_repeats(),
            coarse_tags: false,
            recorder: RecorderConfig::default(),
            energy: EnergyModel::default(),
            server: None,
        }
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        ScenarioConfig { mode, ..self.clone() }
    }

    pub fn net(&self) -> Result<NetConfig, BenchError> {
        if !(self.rtt_ms >= 0.0) {
            return Err(BenchError::Config(format!("rtt must be non-negative, got {}", self.rtt_ms)));
        }
        let mut net = NetConfig::from_rtt(self.rtt_ms / 1e3, self.bandwidth_mbps * 1e6)?;
        if let Some(path) = &self.bw_trace {
            net = net.with_trace(BwTrace::from_path(path)?);
        }
        Ok(net)
    }

    pub fn oss(&self) -> OssConfig {
        OssConfig {
            repeats: self.repeats,
            tag_mode: if self.coarse_tags { TagMode::Coarse } else { TagMode::Fine },
            ..OssConfig::default()
        }
    }

    fn variant(&self) -> Result<Variant, BenchError> {
        match (self.mutate_at, self.alternating) {
            (Some(_), true) => Err(BenchError::Config("mutate_at and alternating are exclusive".into())),
            (Some(m), false) if m == 0 || m > self.inferences => Err(BenchError::Config(format!(
                "mutate_at {m} outside 1..={}",
                self.inferences
            ))),
            (Some(m), false) => Ok(Variant::MutateAt(m)),
            (None, true) => Ok(Variant::Alternating),
            (None, false) => Ok(Variant::Static),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// At least one call went one by one to the server.
    Recording,
    /// A replay was abandoned during this inference.
    Fallback,
    Steady,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Recording => "recording",
            Phase::Fallback => "fallback",
            Phase::Steady => "steady",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub inference_id: usize,
    pub mode: Mode,
    pub rpc_count: u64,
    pub latency_s: f64,
    pub energy_j: f64,
    pub phase: Phase,
    #[serde(skip)]
    pub server_busy_s: Option<f64>,
}

/// Totals for a span of calls outside the inference loop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SpanTotals {
    pub calls: usize,
    pub rpc_count: u64,
    pub latency_s: f64,
    pub energy_j: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Summary {
    pub steady_inferences: usize,
    pub recording_inferences: usize,
    pub mean_rpc_count: f64,
    pub mean_latency_s: f64,
    pub p50_latency_s: f64,
    pub p95_latency_s: f64,
    pub max_latency_s: f64,
    pub mean_energy_j: f64,
    /// Server busy time over wall time across steady inferences.
    pub busy_fraction: Option<f64>,
    pub fallbacks: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub config: ScenarioConfig,
    pub rows: Vec<MetricsRow>,
    pub loading: SpanTotals,
    pub init: SpanTotals,
    pub summary: Summary,
    /// Every downloaded payload in call order.
    #[serde(skip)]
    pub outputs: Vec<Vec<u8>>,
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Rows used for aggregates: the steady ones, or all rows if none is steady.
fn aggregate_rows(rows: &[MetricsRow]) -> Vec<&MetricsRow> {
    let steady: Vec<&MetricsRow> = rows.iter().filter(|r| r.phase == Phase::Steady).collect();
    if steady.is_empty() {
        rows.iter().collect()
    } else {
        steady
    }
}

pub fn summarize(rows: &[MetricsRow], fallbacks: u64) -> Summary {
    let agg = aggregate_rows(rows);
    let mut lat: Vec<f64> = agg.iter().map(|r| r.latency_s).collect();
    lat.sort_by(f64::total_cmp);
    let busy: Option<f64> = agg.iter().map(|r| r.server_busy_s).sum();
    let wall: f64 = agg.iter().map(|r| r.latency_s).sum();
    Summary {
        steady_inferences: rows.iter().filter(|r| r.phase == Phase::Steady).count(),
        recording_inferences: rows.iter().filter(|r| r.phase == Phase::Recording).count(),
        mean_rpc_count: mean(agg.iter().map(|r| r.rpc_count as f64)),
        mean_latency_s: mean(lat.iter().copied()),
        p50_latency_s: percentile(&lat, 50.0),
        p95_latency_s: percentile(&lat, 95.0),
        max_latency_s: lat.last().copied().unwrap_or(0.0),
        mean_energy_j: mean(agg.iter().map(|r| r.energy_j)),
        busy_fraction: busy.filter(|_| wall > 0.0).map(|b| b / wall),
        fallbacks,
    }
}

struct Probe {
    now: Nanos,
    rpc: u64,
    compute: Nanos,
    comm: Nanos,
    busy: Option<Nanos>,
    replayed: u64,
    fallbacks: u64,
}

impl Probe {
    fn take(rt: &dyn Runtime) -> Probe {
        let s = rt.stats();
        Probe {
            now: rt.now(),
            rpc: s.rpc_count,
            compute: s.compute_ns,
            comm: s.comm_ns,
            busy: rt.server_busy_ns(),
            replayed: s.replayed_calls,
            fallbacks: s.fallbacks,
        }
    }
}

fn run_calls(rt: &mut dyn Runtime, calls: &[ApiCall], outputs: &mut Vec<Vec<u8>>) -> Result<(), ClientError> {
    for call in calls {
        let ret = rt.call(call)?;
        if call.func == ApiKind::MemcpyDtoH {
            outputs.push(ret.bytes().map(<[u8]>::to_vec).unwrap_or_default());
        }
    }
    Ok(())
}

fn span(rt: &mut dyn Runtime, calls: &[ApiCall], energy: &EnergyModel, outputs: &mut Vec<Vec<u8>>) -> Result<SpanTotals, ClientError> {
    let a = Probe::take(rt);
    run_calls(rt, calls, outputs)?;
    let b = Probe::take(rt);
    Ok(SpanTotals {
        calls: calls.len(),
        rpc_count: b.rpc - a.rpc,
        latency_s: secs(b.now - a.now),
        energy_j: energy.energy(b.compute - a.compute, b.comm - a.comm, b.now - a.now),
    })
}

/// Runs a call stream through a runtime.
pub fn drive(rt: &mut dyn Runtime, stream: &CallStream, cfg: &ScenarioConfig) -> Result<ScenarioReport, BenchError> {
    let interrupted = |inference, rows: &[MetricsRow], source| BenchError::Interrupted {
        inference,
        rows: rows.to_vec(),
        source,
    };
    let mut outputs = Vec::new();
    let loading = span(rt, &stream.loading, &cfg.energy, &mut outputs).map_err(|e| interrupted(0, &[], e))?;
    let init = span(rt, &stream.init, &cfg.energy, &mut outputs).map_err(|e| interrupted(0, &[], e))?;
    let mut rows = Vec::with_capacity(stream.inferences.len());
    for (i, calls) in stream.inferences.iter().enumerate() {
        let a = Probe::take(rt);
        run_calls(rt, calls, &mut outputs).map_err(|e| interrupted(i + 1, &rows, e))?;
        let b = Probe::take(rt);
        let phase = if cfg.mode != Mode::Replay {
            Phase::Steady
        } else if b.fallbacks > a.fallbacks {
            Phase::Fallback
        } else if (b.replayed - a.replayed) as usize == calls.len() {
            Phase::Steady
        } else {
            Phase::Recording
        };
        rows.push(MetricsRow {
            inference_id: i + 1,
            mode: cfg.mode,
            rpc_count: b.rpc - a.rpc,
            latency_s: secs(b.now - a.now),
            energy_j: cfg.energy.energy(b.compute - a.compute, b.comm - a.comm, b.now - a.now),
            phase,
            server_busy_s: b.busy.zip(a.busy).map(|(b, a)| secs(b - a)),
        });
    }
    let fallbacks = rt.stats().fallbacks;
    Ok(ScenarioReport {
        config: cfg.clone(),
        summary: summarize(&rows, fallbacks),
        rows,
        loading,
        init,
        outputs,
    })
}

/// Runs one scenario end to end.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport, BenchError> {
    cfg.energy.validate()?;
    if cfg.inferences == 0 {
        return Err(BenchError::Config("at least one inference is needed".into()));
    }
    let workload = Workload::load(&cfg.workload)?;
    let stream = workload.stream(cfg.inferences, cfg.seed, cfg.variant()?);
    let clock = if cfg.sim_clock { Clock::simulated() } else { Clock::wall() };
    let epoch = Instant::now();
    let Some(mode) = cfg.mode.offload() else {
        let mut rt = LocalRuntime::new(workload.device(), workload.profile.device_costs(), clock);
        return drive(&mut rt, &stream, cfg);
    };
    let net = cfg.net()?;
    let session = if cfg.sim_clock {
        ServerSession::simulated(workload.device(), workload.profile.server_costs())
    } else {
        ServerSession::wall(workload.device())
    };
    let (oss, rec) = (cfg.oss(), cfg.recorder.clone());
    match (&cfg.server, cfg.sim_clock) {
        (Some(_), true) => Err(BenchError::Config("a remote server needs the wall clock".into())),
        (Some(addr), false) => {
            let ep = TcpEndpoint::connect(addr.as_str(), epoch)?;
            drive(&mut OffloadClient::new(ep, mode, oss, rec, clock), &stream, cfg)
        }
        (None, true) => {
            let ep = SimEndpoint::new(session, net);
            drive(&mut OffloadClient::new(ep, mode, oss, rec, clock), &stream, cfg)
        }
        (None, false) => {
            let clock = Clock::Wall(epoch);
            let ep = ThreadEndpoint::spawn(session, net, epoch);
            drive(&mut OffloadClient::new(ep, mode, oss, rec, clock), &stream, cfg)
        }
    }
}

pub const CSV_HEADER: [&str; 6] = ["inference_id", "mode", "rpc_count", "latency_s", "energy_j", "phase"];

/// Metrics as CSV: one line per inference, then `mean`, `p50`, `p95` and
/// `max` lines over the steady inferences.
pub fn to_csv(rows: &[MetricsRow]) -> Result<String, BenchError> {
    if rows.is_empty() {
        return Err(BenchError::NoRows);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.inference_id.to_string(),
            r.mode.to_string(),
            r.rpc_count.to_string(),
            format!("{:.9}", r.latency_s),
            format!("{:.9}", r.energy_j),
            r.phase.to_string(),
        ])?;
    }
    let agg = aggregate_rows(rows);
    let scope = if agg.iter().all(|r| r.phase == Phase::Steady) { "steady" } else { "all" };
    let column = |f: fn(&MetricsRow) -> f64| {
        let mut v: Vec<f64> = agg.iter().map(|r| f(r)).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let rpc = column(|r| r.rpc_count as f64);
    let lat = column(|r| r.latency_s);
    let energy = column(|r| r.energy_j);
    let stats: [(&str, fn(&[f64]) -> f64); 4] = [
        ("mean", |v| mean(v.iter().copied())),
        ("p50", |v| percentile(v, 50.0)),
        ("p95", |v| percentile(v, 95.0)),
        ("max", |v| v.last().copied().unwrap_or(0.0)),
    ];
    for (label, f) in stats {
        w.write_record([
            label.to_string(),
            rows[0].mode.to_string(),
            format!("{}", f(&rpc)),
            format!("{:.9}", f(&lat)),
            format!("{:.9}", f(&energy)),
            scope.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes [`to_csv`] output to `path`. Nothing is written for empty rows.
pub fn emit_csv(rows: &[MetricsRow], path: &Path) -> Result<(), BenchError> {
    let text = to_csv(rows)?;
    std::fs::write(path, text)?;
    Ok(())
}

fn reduction(new: f64, base: f64) -> Option<f64> {
    (base > 0.0).then(|| 1.0 - new / base)
}

/// Runs every scenario and reports relative reductions between each pair.
pub fn compare_modes(cfgs: &[ScenarioConfig]) -> Result<serde_json::Value, BenchError> {
    if cfgs.len() < 2 {
        return Err(BenchError::Config("comparison needs at least two scenarios".into()));
    }
    let first = &cfgs[0];
    if cfgs
        .iter()
        .any(|c| c.workload != first.workload || c.seed != first.seed || c.inferences != first.inferences)
    {
        return Err(BenchError::MismatchedWorkloads);
    }
    let reports = cfgs.iter().map(run_scenario).collect::<Result<Vec<_>, _>>()?;
    let results: Vec<_> = reports
        .iter()
        .map(|r| {
            json!({
                "mode": r.config.mode,
                "rtt_ms": r.config.rtt_ms,
                "bandwidth_mbps": r.config.bandwidth_mbps,
                "summary": r.summary,
            })
        })
        .collect();
    let mut reductions = Vec::new();
    for (i, a) in reports.iter().enumerate() {
        for (j, b) in reports.iter().enumerate() {
            if i == j {
                continue;
            }
            reductions.push(json!({
                "scenario": i,
                "baseline": j,
                "mode": a.config.mode,
                "baseline_mode": b.config.mode,
                "latency": reduction(a.summary.mean_latency_s, b.summary.mean_latency_s),
                "energy": reduction(a.summary.mean_energy_j, b.summary.mean_energy_j),
                "rpc_count": reduction(a.summary.mean_rpc_count, b.summary.mean_rpc_count),
            }));
        }
    }
    let outputs_identical = reports.windows(2).all(|w| w[0].outputs == w[1].outputs);
    Ok(json!({
        "workload": first.workload,
        "seed": first.seed,
        "inferences": first.inferences,
        "results": results,
        "reductions": reductions,
        "outputs_identical": outputs_identical,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: usize, latency_s: f64, phase: Phase) -> MetricsRow {
        MetricsRow {
            inference_id: id,
            mode: Mode::Replay,
            rpc_count: 11,
            latency_s,
            energy_j: latency_s * 4.25,
            phase,
            server_busy_s: Some(latency_s / 2.0),
        }
    }

    #[test]
    fn energy_partitions_the_interval() {
        let e = EnergyModel::default();
        let j = e.energy(1_000_000_000, 2_000_000_000, 4_000_000_000);
        assert!((j - (13.35 + 2.0 * 4.25 + 4.04)).abs() < 1e-9);
        assert!(EnergyModel { p_standby: 0.0, ..e }.validate().is_err());
    }

    #[test]
    fn csv_has_rows_and_footers() {
        let rows = vec![
            row(1, 0.5, Phase::Recording),
            row(2, 0.1, Phase::Steady),
            row(3, 0.3, Phase::Steady),
        ];
        let text = to_csv(&rows).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "inference_id,mode,rpc_count,latency_s,energy_j,phase");
        assert_eq!(lines.len(), 1 + 3 + 4);
        assert!(lines[1].starts_with("1,replay,11,0.500000000,"));
        assert!(lines[1].ends_with(",recording"));
        assert_eq!(lines[4], "mean,replay,11,0.200000000,0.850000000,steady");
        assert!(lines[7].starts_with("max,replay,11,0.300000000"));
    }

    #[test]
    fn empty_rows_write_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        assert!(matches!(emit_csv(&[], &path), Err(BenchError::NoRows)));
        assert!(!path.exists());
    }

    #[test]
    fn summary_uses_steady_rows() {
        let rows = vec![row(1, 1.0, Phase::Recording), row(2, 0.2, Phase::Steady)];
        let s = summarize(&rows, 0);
        assert_eq!(s.steady_inferences, 1);
        assert_eq!(s.mean_latency_s, 0.2);
        assert_eq!(s.busy_fraction, Some(0.5));
    }

    #[test]
    fn percentiles_use_nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 10.0);
        assert_eq!(percentile(&v, 95.0), 19.0);
        assert_eq!(percentile(&v[..1], 95.0), 1.0);
    }

    #[test]
    fn tiny3_modes_agree() {
        let base = ScenarioConfig::new("tiny3", Mode::DeviceOnly, 8, 4);
        let reports: Vec<ScenarioReport> = Mode::ALL
            .iter()
            .map(|&m| run_scenario(&base.with_mode(m)).unwrap())
            .collect();
        for r in &reports[1..] {
            assert_eq!(r.outputs, reports[0].outputs, "{}", r.config.mode);
        }
        let replay = &reports[3];
        assert_eq!(replay.summary.recording_inferences, 3);
        assert!(replay.rows[3..].iter().all(|r| r.phase == Phase::Steady && r.rpc_count == 2));
        assert_eq!(reports[1].rows[0].rpc_count, 5);
        assert_eq!(reports[0].rows[0].rpc_count, 0);
    }

    #[test]
    fn same_seed_same_csv() {
        let cfg = ScenarioConfig::new("tiny3", Mode::Replay, 6, 1);
        let a = to_csv(&run_scenario(&cfg).unwrap().rows).unwrap();
        let b = to_csv(&run_scenario(&cfg).unwrap().rows).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn comparison_requires_matching_workloads() {
        let a = ScenarioConfig::new("tiny3", Mode::PerOp, 4, 1);
        let mut b = a.with_mode(Mode::Replay);
        b.seed = 2;
        assert!(matches!(compare_modes(&[a.clone(), b]), Err(BenchError::MismatchedWorkloads)));
        let report = compare_modes(&[a.clone(), a.with_mode(Mode::Replay)]).unwrap();
        assert_eq!(report["outputs_identical"], true);
        assert_eq!(report["reductions"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn modes_parse() {
        assert_eq!("perop".parse::<Mode>().unwrap(), Mode::PerOp);
        assert!("cricket".parse::<Mode>().is_err());
    }
}
