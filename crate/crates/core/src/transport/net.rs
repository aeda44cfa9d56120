//! Network model: fixed one-way latency plus a (possibly trace-driven)
//! bandwidth, delivering frames reliably and in order.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::clock::{Nanos, NANOS_PER_SEC};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("bandwidth must be positive, got {0}")]
    NonPositiveBandwidth(f64),
    #[error("bandwidth trace row {row}: {reason}")]
    BadTrace { row: usize, reason: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Piecewise-constant bandwidth, `(t_s, mbps)` points with strictly
/// increasing timestamps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BwTrace {
    points: Vec<(f64, f64)>,
}

impl BwTrace {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, NetError> {
        for (i, w) in points.windows(2).enumerate() {
            if w[1].0 <= w[0].0 {
                return Err(NetError::BadTrace {
                    row: i + 2,
                    reason: "timestamps must be strictly increasing".into(),
                });
            }
        }
        for (i, &(_, mbps)) in points.iter().enumerate() {
            if !(mbps > 0.0) {
                return Err(NetError::BadTrace {
                    row: i + 1,
                    reason: format!("bandwidth must be positive, got {mbps}"),
                });
            }
        }
        Ok(BwTrace { points })
    }

    /// Parses the `t_s,mbps` CSV format (header row required).
    pub fn from_csv<R: Read>(input: R) -> Result<Self, NetError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let headers = rdr.headers().map_err(|e| NetError::BadTrace {
            row: 0,
            reason: e.to_string(),
        })?;
        if headers.iter().map(str::trim).collect::<Vec<_>>() != ["t_s", "mbps"] {
            return Err(NetError::BadTrace {
                row: 0,
                reason: "header must be `t_s,mbps`".into(),
            });
        }
        let mut points = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| NetError::BadTrace {
                row,
                reason: e.to_string(),
            })?;
            let field = |j: usize| -> Result<f64, NetError> {
                rec.get(j)
                    .ok_or_else(|| NetError::BadTrace {
                        row,
                        reason: "expected two columns".into(),
                    })?
                    .trim()
                    .parse()
                    .map_err(|e| NetError::BadTrace {
                        row,
                        reason: format!("{e}"),
                    })
            };
            points.push((field(0)?, field(1)?));
        }
        BwTrace::new(points)
    }

    pub fn from_path(path: &Path) -> Result<Self, NetError> {
        BwTrace::from_csv(std::fs::File::open(path)?)
    }

    /// Bandwidth in Mbps at time `t_s`, or `None` before the first point.
    pub fn mbps_at(&self, t_s: f64) -> Option<f64> {
        let i = self.points.partition_point(|&(t, _)| t <= t_s);
        i.checked_sub(1).map(|i| self.points[i].1)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub one_way_latency_s: f64,
    pub bandwidth_bps: f64,
    #[serde(default)]
    pub bw_trace: Option<BwTrace>,
}

impl NetConfig {
    pub fn new(one_way_latency_s: f64, bandwidth_bps: f64) -> Result<Self, NetError> {
        if !(bandwidth_bps > 0.0) {
            return Err(NetError::NonPositiveBandwidth(bandwidth_bps));
        }
        Ok(NetConfig {
            one_way_latency_s,
            bandwidth_bps,
            bw_trace: None,
        })
    }

    /// 93 Mbps, 1 ms one way.
    pub fn indoor() -> Self {
        NetConfig::new(0.001, 93e6).unwrap()
    }

    /// 73 Mbps, 1.5 ms one way.
    pub fn outdoor() -> Self {
        NetConfig::new(0.0015, 73e6).unwrap()
    }

    /// No latency and unbounded bandwidth.
    pub fn ideal() -> Self {
        NetConfig::new(0.0, f64::INFINITY).unwrap()
    }

    pub fn from_rtt(rtt_s: f64, bandwidth_bps: f64) -> Result<Self, NetError> {
        NetConfig::new(rtt_s / 2.0, bandwidth_bps)
    }

    pub fn with_trace(mut self, trace: BwTrace) -> Self {
        self.bw_trace = Some(trace);
        self
    }

    pub fn bandwidth_at(&self, now: Nanos) -> f64 {
        self.bw_trace
            .as_ref()
            .and_then(|t| t.mbps_at(now as f64 / NANOS_PER_SEC as f64))
            .map(|mbps| mbps * 1e6)
            .unwrap_or(self.bandwidth_bps)
    }

    pub fn latency_ns(&self) -> Nanos {
        (self.one_way_latency_s * NANOS_PER_SEC as f64).round() as Nanos
    }

    pub fn serialization_ns(&self, bytes: usize, now: Nanos) -> Nanos {
        let bw = self.bandwidth_at(now);
        if bw.is_infinite() {
            return 0;
        }
        ((bytes as f64 * 8.0) / bw * NANOS_PER_SEC as f64).round() as Nanos
    }

    /// Delivery time of a frame of `bytes` sent at `now`, ignoring ordering.
    pub fn delivery_time(&self, bytes: usize, now: Nanos) -> Nanos {
        now + self.latency_ns() + self.serialization_ns(bytes, now)
    }
}

/// One direction of a connection.
#[derive(Clone, Debug)]
pub struct Link {
    cfg: NetConfig,
    last_delivery: Nanos,
    frames: u64,
    bytes: u64,
}

impl Link {
    pub fn new(cfg: NetConfig) -> Self {
        Link {
            cfg,
            last_delivery: 0,
            frames: 0,
            bytes: 0,
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    /// Delivery timestamp of a frame sent at `now`; never earlier than the
    /// previous delivery on this link.
    pub fn transmit(&mut self, bytes: usize, now: Nanos) -> Nanos {
        let t = self.cfg.delivery_time(bytes, now).max(self.last_delivery);
        self.last_delivery = t;
        self.frames += 1;
        self.bytes += bytes as u64;
        t
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }
}
