//! Device-side interception of runtime calls.
//!
//! [`LocalRuntime`] executes everything on the local device. [`OffloadClient`]
//! forwards calls to a server: one by one (`PerOp`), one by one except for
//! locally answered bookkeeping (`Semi`), or with record/replay (`Replay`),
//! where the per-inference window is found in the recorded log and then run
//! by the server in one shot.

use std::collections::HashSet;
use std::time::Instant;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oss::{IncrementalSearch, InferenceOperatorSequence, OssConfig, RegionSet, SearchHit};
use crate::runtime::{
    ApiCall, ApiKind, CostTable, DeviceState, KernelId, MemRegion, ReturnValue, Status,
};
use crate::trace::{OperatorInfo, TraceLog};
use crate::transport::clock::{Clock, Nanos};
use crate::transport::endpoint::{Endpoint, TransportError};
use crate::transport::wire::{FallbackReason, Message, ReplayProgram};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("unexpected {got} from server while waiting for {expected}")]
    Protocol { expected: &'static str, got: &'static str },
}

/// Counters shared by all runtimes. Times are in nanoseconds of the
/// runtime's clock.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ClientStats {
    /// Messages sent plus replay outputs awaited.
    pub rpc_count: u64,
    pub fallbacks: u64,
    pub recorded_calls: u64,
    pub replayed_calls: u64,
    pub local_calls: u64,
    pub replays_started: u64,
    /// Time spent waiting for the network.
    pub comm_ns: Nanos,
    /// Time spent executing calls on the local device.
    pub compute_ns: Nanos,
}

/// The runtime API as seen by an application.
pub trait Runtime {
    fn call(&mut self, call: &ApiCall) -> Result<ReturnValue, ClientError>;

    fn now(&self) -> Nanos;

    fn stats(&self) -> ClientStats;

    fn server_busy_ns(&self) -> Option<Nanos> {
        None
    }

    fn get_device(&mut self) -> Result<ReturnValue, ClientError> {
        self.call(&ApiCall::get_device())
    }

    fn get_last_error(&mut self) -> Result<ReturnValue, ClientError> {
        self.call(&ApiCall::get_last_error())
    }

    fn launch_kernel(
        &mut self,
        kernel: impl Into<KernelId>,
        scalars: Vec<i64>,
        ins: Vec<MemRegion>,
        outs: Vec<MemRegion>,
    ) -> Result<ReturnValue, ClientError>
    where
        Self: Sized,
    {
        self.call(&ApiCall::launch(kernel, scalars, ins, outs))
    }

    fn malloc(&mut self, size: u64) -> Result<ReturnValue, ClientError> {
        self.call(&ApiCall::malloc(size))
    }

    fn stream_is_capturing(&mut self) -> Result<ReturnValue, ClientError> {
        self.call(&ApiCall::is_capturing())
    }

    fn stream_synchronize(&mut self) -> Result<ReturnValue, ClientError> {
        self.call(&ApiCall::synchronize())
    }

    fn memcpy_htod(&mut self, dst: MemRegion, data: Vec<u8>) -> Result<ReturnValue, ClientError> {
        self.call(&ApiCall::htod(dst, data))
    }

    fn memcpy_dtoh(&mut self, src: MemRegion) -> Result<ReturnValue, ClientError> {
        self.call(&ApiCall::dtoh(src))
    }

    fn memcpy_dtod(&mut self, src: MemRegion, dst: MemRegion) -> Result<ReturnValue, ClientError> {
        self.call(&ApiCall::dtod(src, dst))
    }
}

/// Executes every call on the local device.
#[derive(Debug)]
pub struct LocalRuntime {
    device: DeviceState,
    costs: CostTable,
    clock: Clock,
    stats: ClientStats,
}

impl LocalRuntime {
    /// With a simulated clock, each call takes its `costs` entry; with a wall
    /// clock, execution is timed.
    pub fn new(device: DeviceState, costs: CostTable, clock: Clock) -> Self {
        LocalRuntime {
            device,
            costs,
            clock,
            stats: ClientStats::default(),
        }
    }

    pub fn device(&self) -> &DeviceState {
        &self.device
    }
}

impl Runtime for LocalRuntime {
    fn call(&mut self, call: &ApiCall) -> Result<ReturnValue, ClientError> {
        self.stats.local_calls += 1;
        let t = Instant::now();
        let ret = self.device.execute_call(call);
        let dt = if self.clock.is_simulated() {
            self.costs.get(call.func)
        } else {
            t.elapsed().as_nanos() as Nanos
        };
        self.clock.advance(dt);
        self.stats.compute_ns += dt;
        Ok(ret)
    }

    fn now(&self) -> Nanos {
        self.clock.now()
    }

    fn stats(&self) -> ClientStats {
        self.stats
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OffloadMode {
    PerOp,
    Semi,
    Replay,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClientMode {
    Recording,
    Replaying,
    FallingBack,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecorderConfig {
    /// Recorded inferences after which the search is abandoned.
    pub max_record_inferences: usize,
    /// Run the search while the reply to the current call is in flight.
    pub search_overlap: bool,
    /// Send the full program with every replay instead of its digest.
    pub retransmit_program: bool,
}

impl Default for RecorderConfig {
    fn default() -> Self {
        RecorderConfig {
            max_record_inferences: 16,
            search_overlap: true,
            retransmit_program: false,
        }
    }
}

#[derive(Debug)]
struct ReplayCursor {
    ios: InferenceOperatorSequence,
    program: ReplayProgram,
    digest: [u8; 32],
    position: usize,
    /// Calls of the current inference already answered from the window.
    absorbed: Vec<ApiCall>,
}

impl ReplayCursor {
    fn in_flight(&self) -> bool {
        self.position > 0
    }
}

/// Client proxy talking to a server through an [`Endpoint`].
#[derive(Debug)]
pub struct OffloadClient<E: Endpoint> {
    endpoint: E,
    mode: OffloadMode,
    oss: OssConfig,
    recorder: RecorderConfig,
    clock: Clock,
    state: ClientMode,
    log: TraceLog,
    search: IncrementalSearch,
    /// Regions written by every dispatched call so far.
    written: RegionSet,
    cursor: Option<ReplayCursor>,
    sent_programs: HashSet<[u8; 32]>,
    recorded_inferences: usize,
    gave_up: bool,
    /// Error latched for locally answered `GetLastError` calls.
    last_error: Status,
    stats: ClientStats,
}

impl<E: Endpoint> OffloadClient<E> {
    pub fn new(endpoint: E, mode: OffloadMode, oss: OssConfig, recorder: RecorderConfig, clock: Clock) -> Self {
        OffloadClient {
            endpoint,
            mode,
            search: IncrementalSearch::new(oss),
            oss,
            recorder,
            clock,
            state: ClientMode::Recording,
            log: TraceLog::new(),
            written: RegionSet::new(),
            cursor: None,
            sent_programs: HashSet::new(),
            recorded_inferences: 0,
            gave_up: false,
            last_error: Status::Success,
            stats: ClientStats::default(),
        }
    }

    pub fn offload_mode(&self) -> OffloadMode {
        self.mode
    }

    pub fn mode(&self) -> ClientMode {
        self.state
    }

    pub fn endpoint(&self) -> &E {
        &self.endpoint
    }

    /// The window being replayed, if any.
    pub fn ios(&self) -> Option<&InferenceOperatorSequence> {
        self.cursor.as_ref().map(|c| &c.ios)
    }

    pub fn log(&self) -> &TraceLog {
        &self.log
    }

    /// Whether the recording cap was hit and the client stays per-operator.
    pub fn gave_up(&self) -> bool {
        self.gave_up
    }

    fn send(&mut self, msg: &Message) -> Result<(), ClientError> {
        self.stats.rpc_count += 1;
        self.endpoint.send(msg, self.clock.now())?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Message, ClientError> {
        let now = self.clock.now();
        let (msg, delivered) = self.endpoint.recv(now)?;
        let delivered = delivered.max(now);
        self.stats.comm_ns += delivered - now;
        self.clock.advance_to(delivered);
        Ok(msg)
    }

    fn await_ret(&mut self) -> Result<ReturnValue, ClientError> {
        match self.recv()? {
            Message::RpcRet(ret) => {
                if !ret.status.is_success() {
                    self.last_error = ret.status;
                }
                Ok(ret)
            }
            other => Err(ClientError::Protocol {
                expected: "RpcRet",
                got: other.kind_name(),
            }),
        }
    }

    fn rpc(&mut self, call: &ApiCall) -> Result<ReturnValue, ClientError> {
        self.send(&Message::RpcCall(call.clone()))?;
        self.await_ret()
    }

    fn note_writes(&mut self, call: &ApiCall) {
        for &r in &call.args.out_regions {
            self.written.insert(r);
        }
    }

    fn answer_locally(&mut self, call: &ApiCall) -> ReturnValue {
        self.stats.local_calls += 1;
        match call.func {
            ApiKind::GetLastError => ReturnValue {
                status: std::mem::take(&mut self.last_error),
                payload: None,
            },
            _ => ReturnValue::success(),
        }
    }

    /// Forwards one call and records it; may switch to replaying.
    fn record(&mut self, call: &ApiCall) -> Result<ReturnValue, ClientError> {
        self.stats.recorded_calls += 1;
        self.note_writes(call);
        if self.gave_up {
            return self.rpc(call);
        }
        let index = self.log.len();
        let starts_inference = call.func == ApiKind::MemcpyHtoD
            && (self.search.starts().is_empty() || index.checked_sub(1).is_some_and(|p| self.search.ends().contains(&p)));
        let info = OperatorInfo::from_call(index, call, ReturnValue::success());
        self.search.observe(&info);
        self.log.append(info).expect("log index follows its length");

        self.send(&Message::RpcCall(call.clone()))?;
        let hit = if self.recorder.search_overlap {
            // Runs while the reply is on its way.
            self.search.search(self.log.entries())
        } else {
            None
        };
        let ret = self.await_ret()?;
        self.log.set_ret(index, ret.clone());
        let hit = match hit {
            Some(h) => Some(h),
            None if !self.recorder.search_overlap => self.search.search(self.log.entries()),
            None => None,
        };

        if starts_inference {
            self.recorded_inferences += 1;
            if self.recorded_inferences > self.recorder.max_record_inferences {
                warn!(
                    "no repeating window after {} recorded inferences; staying per-operator",
                    self.recorder.max_record_inferences
                );
                self.gave_up = true;
                self.log.clear();
                return Ok(ret);
            }
        }
        if let Some(hit) = hit {
            self.start_replaying(hit);
        }
        Ok(ret)
    }

    fn start_replaying(&mut self, hit: SearchHit) {
        let ios = InferenceOperatorSequence::from_entries(self.log.entries(), hit);
        let program = ReplayProgram::from_window(hit.start, &ios.window);
        let digest = program.digest();
        info!(
            "window of {} calls found at log index {} after {} recorded calls",
            hit.period,
            hit.start,
            self.log.len()
        );
        self.cursor = Some(ReplayCursor {
            ios,
            program,
            digest,
            position: 0,
            absorbed: Vec::new(),
        });
        self.state = ClientMode::Replaying;
    }

    /// Waits for the next replay output. `None` means the server gave up on
    /// the replay and rolled it back.
    fn await_output(&mut self) -> Result<Option<ReturnValue>, ClientError> {
        self.stats.rpc_count += 1;
        match self.recv()? {
            Message::OutputData(ret) => Ok(Some(ret)),
            Message::FallbackNotice(reason) => {
                warn!("server abandoned the replay: {reason:?}");
                Ok(None)
            }
            other => Err(ClientError::Protocol {
                expected: "OutputData",
                got: other.kind_name(),
            }),
        }
    }

    /// Leaves replaying. `notify` asks the server to abandon an in-flight
    /// replay first. The calls already answered in this inference are
    /// re-issued one by one so that the server state and the new log are
    /// complete.
    fn fall_back(&mut self, notify: bool) -> Result<(), ClientError> {
        self.state = ClientMode::FallingBack;
        self.stats.fallbacks += 1;
        let cursor = self.cursor.take().expect("falling back from replay");
        if notify {
            self.send(&Message::FallbackNotice(FallbackReason::Deviation))?;
            loop {
                match self.recv()? {
                    Message::FallbackNotice(FallbackReason::Acknowledged) => break,
                    m => debug!("discarding {} while falling back", m.kind_name()),
                }
            }
        }
        self.log.clear();
        self.search = IncrementalSearch::new(self.oss).with_prior_written(self.written.clone());
        self.recorded_inferences = 0;
        self.state = ClientMode::Recording;
        for call in &cursor.absorbed {
            self.record(call)?;
        }
        Ok(())
    }

    fn replay_call(&mut self, call: &ApiCall) -> Result<ReturnValue, ClientError> {
        let cursor = self.cursor.as_ref().expect("replaying");
        let expected = &cursor.ios.window[cursor.position];
        if !expected.matches_call(call) {
            debug!(
                "deviation at window position {}: expected {}, got {}",
                cursor.position, expected.func, call.func
            );
            let in_flight = cursor.in_flight();
            self.fall_back(in_flight)?;
            return self.record(call);
        }
        let recorded = expected.ret.clone();
        let position = cursor.position;
        let ret = match call.func {
            ApiKind::MemcpyHtoD if position == 0 => {
                let cursor = self.cursor.as_ref().expect("replaying");
                let program = if self.recorder.retransmit_program || !self.sent_programs.contains(&cursor.digest) {
                    Some(cursor.program.clone())
                } else {
                    None
                };
                let digest = cursor.digest;
                self.sent_programs.insert(digest);
                self.stats.replays_started += 1;
                self.send(&Message::StartReplay {
                    digest,
                    program,
                    input: call.input.clone().unwrap_or_default(),
                })?;
                recorded
            }
            ApiKind::MemcpyHtoD => {
                self.send(&Message::InputData(call.input.clone().unwrap_or_default()))?;
                recorded
            }
            ApiKind::MemcpyDtoH => match self.await_output()? {
                Some(ret) => ret,
                None => {
                    self.fall_back(false)?;
                    return self.record(call);
                }
            },
            _ => {
                self.stats.local_calls += 1;
                recorded
            }
        };
        self.stats.replayed_calls += 1;
        self.note_writes(call);
        let cursor = self.cursor.as_mut().expect("replaying");
        cursor.position += 1;
        if cursor.position == cursor.ios.period() {
            cursor.position = 0;
            cursor.absorbed.clear();
        } else {
            cursor.absorbed.push(call.clone());
        }
        Ok(ret)
    }
}

impl<E: Endpoint> Runtime for OffloadClient<E> {
    fn call(&mut self, call: &ApiCall) -> Result<ReturnValue, ClientError> {
        match self.mode {
            OffloadMode::PerOp => self.rpc(call),
            OffloadMode::Semi if call.func.is_bookkeeping() => Ok(self.answer_locally(call)),
            OffloadMode::Semi => self.rpc(call),
            OffloadMode::Replay if self.cursor.is_some() => self.replay_call(call),
            OffloadMode::Replay => self.record(call),
        }
    }

    fn now(&self) -> Nanos {
        self.clock.now()
    }

    fn stats(&self) -> ClientStats {
        self.stats
    }

    fn server_busy_ns(&self) -> Option<Nanos> {
        self.endpoint.server_busy_ns()
    }
}
