//! Record/replay transparent offloading of inference runtime calls.
//!
//! A client-side proxy intercepts runtime API calls, forwards them to a
//! server one by one while recording them, discovers the per-inference call
//! window in the recorded log, and from then on lets the server replay the
//! whole window in one shot, exchanging only model inputs and outputs.

pub mod bench;
pub mod client;
pub mod oss;
pub mod runtime;
pub mod server;
pub mod trace;
pub mod transport;
pub mod workloads;

use sha2::{Digest, Sha256};

/// SHA-256 of `bytes`.
pub fn digest_bytes(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub use bench::{run_scenario, Mode, ScenarioConfig, ScenarioReport};
pub use client::{OffloadClient, OffloadMode, RecorderConfig, Runtime};
pub use oss::{operator_sequence_search, oracle_search, InferenceOperatorSequence, OssConfig};
pub use trace::{OperatorInfo, TraceLog};
pub use workloads::{Workload, WorkloadProfile};
