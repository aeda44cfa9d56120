//! GPU-server side of the offloading protocol.
//!
//! In per-operator mode each `RpcCall` is executed and answered with an
//! `RpcRet`. A `StartReplay` makes the session run a whole recorded window
//! locally: host-to-device copies take their bytes from the client's input
//! messages, device-to-host copies push their result back as `OutputData`.
//! An aborted replay restores every region the window writes, so the client
//! can re-issue the calls it already made one by one.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::Arc;
use std::time::Instant;

use log::{debug, warn};
use thiserror::Error;

use crate::runtime::{ApiCall, ApiKind, ArgList, CostTable, DeviceState, MemRegion, ReturnValue, Status};
use crate::transport::clock::Nanos;
use crate::transport::wire::{FallbackReason, Message, ReplayProgram};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ServerError {
    #[error("input of {actual} bytes does not fit a {expected}-byte region")]
    SizeMismatch { expected: u64, actual: u64 },
    #[error("recorded arguments are not a host-to-device copy")]
    NotAnUpload,
}

/// Rebinds a recorded host-to-device copy to fresh input bytes. The
/// destination region is kept.
pub fn fix_args(recorded: &ArgList, input: Vec<u8>) -> Result<ApiCall, ServerError> {
    let dst = match recorded.out_regions.as_slice() {
        [dst] if recorded.in_regions.is_empty() => *dst,
        _ => return Err(ServerError::NotAnUpload),
    };
    if input.len() as u64 != dst.size {
        return Err(ServerError::SizeMismatch {
            expected: dst.size,
            actual: input.len() as u64,
        });
    }
    let mut call = ApiCall::htod(dst, input);
    call.args = recorded.clone();
    Ok(call)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SessionMode {
    PerOp,
    Replay,
}

#[derive(Debug)]
struct CachedProgram {
    program: ReplayProgram,
    writes: Vec<MemRegion>,
}

impl CachedProgram {
    fn new(program: ReplayProgram) -> Self {
        let writes: BTreeSet<MemRegion> = program
            .ops
            .iter()
            .flat_map(|op| op.args.out_regions.iter().copied())
            .collect();
        CachedProgram {
            program,
            writes: writes.into_iter().collect(),
        }
    }
}

#[derive(Debug)]
struct ReplayRun {
    program: Arc<CachedProgram>,
    pos: usize,
    inputs: VecDeque<Vec<u8>>,
    undo: Vec<(MemRegion, Vec<u8>)>,
    last_error: Status,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SessionStats {
    pub busy_ns: Nanos,
    pub executed: u64,
    pub rpc_calls: u64,
    pub replays_completed: u64,
    pub replays_aborted: u64,
    pub outputs_pushed: u64,
}

/// One client connection's server state.
#[derive(Debug)]
pub struct ServerSession {
    device: DeviceState,
    cached: HashMap<[u8; 32], Arc<CachedProgram>>,
    mode: SessionMode,
    run: Option<ReplayRun>,
    /// `Some` for simulated timing; `None` measures wall time.
    costs: Option<CostTable>,
    now: Nanos,
    stats: SessionStats,
}

type Outbox = Vec<(Message, Nanos)>;

impl ServerSession {
    /// Session with modeled execution times.
    pub fn simulated(device: DeviceState, costs: CostTable) -> Self {
        ServerSession {
            device,
            cached: HashMap::new(),
            mode: SessionMode::PerOp,
            run: None,
            costs: Some(costs),
            now: 0,
            stats: SessionStats::default(),
        }
    }

    /// Session whose busy time is measured with the wall clock.
    pub fn wall(device: DeviceState) -> Self {
        ServerSession {
            costs: None,
            ..ServerSession::simulated(device, CostTable::default())
        }
    }

    pub fn device(&self) -> &DeviceState {
        &self.device
    }

    pub fn mode(&self) -> SessionMode {
        self.mode
    }

    pub fn stats(&self) -> SessionStats {
        self.stats
    }

    /// Whether a replay still waits for input.
    pub fn replay_in_progress(&self) -> bool {
        self.run
            .as_ref()
            .is_some_and(|run| run.pos < run.program.program.ops.len())
    }

    pub fn cached_programs(&self) -> usize {
        self.cached.len()
    }

    fn exec(&mut self, call: &ApiCall) -> ReturnValue {
        self.stats.executed += 1;
        match &self.costs {
            Some(costs) => {
                let dt = costs.get(call.func);
                self.now += dt;
                self.stats.busy_ns += dt;
                self.device.execute_call(call)
            }
            None => {
                let t = Instant::now();
                let ret = self.device.execute_call(call);
                let dt = t.elapsed().as_nanos() as Nanos;
                self.now += dt;
                self.stats.busy_ns += dt;
                ret
            }
        }
    }

    /// Executes one forwarded call.
    pub fn handle_rpc_call(&mut self, call: &ApiCall) -> ReturnValue {
        self.stats.rpc_calls += 1;
        self.exec(call)
    }

    /// Keeps the effects of a finished replay. A finished replay can still be
    /// rolled back until the client moves on.
    fn commit(&mut self) {
        if !self.replay_in_progress() && self.run.take().is_some() {
            self.stats.replays_completed += 1;
        }
    }

    /// Drops the current replay, undoing its writes.
    fn rollback(&mut self) {
        if let Some(run) = self.run.take() {
            for (region, bytes) in run.undo {
                self.device
                    .write(region, &bytes)
                    .expect("snapshot regions were readable");
            }
            self.device.set_last_error(run.last_error);
            self.stats.replays_aborted += 1;
        }
        self.mode = SessionMode::PerOp;
    }

    fn abort(&mut self, reason: FallbackReason, out: &mut Outbox) {
        self.rollback();
        out.push((Message::FallbackNotice(reason), self.now));
    }

    /// Begins a replay. `program` must accompany the first use of a digest.
    pub fn handle_start_replay(
        &mut self,
        digest: [u8; 32],
        program: Option<ReplayProgram>,
        input: Vec<u8>,
        out: &mut Outbox,
    ) {
        self.commit();
        if self.run.is_some() {
            warn!("new replay requested while the previous one still waits for input");
            self.abort(FallbackReason::InputUnderrun, out);
            return;
        }
        let program = match program {
            Some(p) => self
                .cached
                .entry(digest)
                .or_insert_with(|| Arc::new(CachedProgram::new(p)))
                .clone(),
            None => match self.cached.get(&digest) {
                Some(p) => p.clone(),
                None => {
                    warn!("replay requested for unknown program digest");
                    self.abort(FallbackReason::UnknownDigest, out);
                    return;
                }
            },
        };
        let mut undo = Vec::with_capacity(program.writes.len());
        for &region in &program.writes {
            match self.device.read(region) {
                Ok(bytes) => undo.push((region, bytes.to_vec())),
                Err(e) => {
                    warn!("replay program writes outside device memory: {e}");
                    self.abort(FallbackReason::ExecutorError, out);
                    return;
                }
            }
        }
        self.mode = SessionMode::Replay;
        self.run = Some(ReplayRun {
            program,
            pos: 0,
            inputs: VecDeque::from([input]),
            undo,
            last_error: self.device.last_error(),
        });
        self.advance(out);
    }

    /// Runs the current replay until it needs more input or completes.
    fn advance(&mut self, out: &mut Outbox) {
        loop {
            let Some(run) = self.run.as_mut() else { return };
            let Some(op) = run.program.program.ops.get(run.pos) else { return };
            let recorded = op.ret.status;
            let call = if op.func == ApiKind::MemcpyHtoD {
                let Some(input) = run.inputs.pop_front() else { return };
                match fix_args(&op.args, input) {
                    Ok(call) => call,
                    Err(e) => {
                        warn!("replay aborted at op {}: {e}", run.pos);
                        self.abort(FallbackReason::ExecutorError, out);
                        return;
                    }
                }
            } else {
                op.to_call()
            };
            let is_output = op.func == ApiKind::MemcpyDtoH;
            run.pos += 1;
            let ret = self.exec(&call);
            if ret.status != recorded {
                warn!("replay aborted: {} returned {:?}", call.func, ret.status);
                self.abort(FallbackReason::ExecutorError, out);
                return;
            }
            if is_output {
                self.stats.outputs_pushed += 1;
                out.push((Message::OutputData(ret), self.now));
            }
        }
    }

    /// Handles one message that arrived at `at`, returning the replies with
    /// their send times.
    pub fn handle(&mut self, msg: Message, at: Nanos) -> Outbox {
        self.now = self.now.max(at);
        let mut out = Vec::new();
        match msg {
            Message::RpcCall(call) => {
                self.commit();
                if self.run.is_some() {
                    debug!("per-operator call during replay; abandoning the replay");
                }
                self.rollback();
                let ret = self.handle_rpc_call(&call);
                out.push((Message::RpcRet(ret), self.now));
            }
            Message::StartReplay {
                digest,
                program,
                input,
            } => self.handle_start_replay(digest, program, input, &mut out),
            Message::InputData(data) => match self.run.as_mut() {
                Some(run) if run.pos < run.program.program.ops.len() => {
                    run.inputs.push_back(data);
                    self.advance(&mut out);
                }
                _ => {
                    warn!("input data outside of a replay");
                    self.abort(FallbackReason::Protocol, &mut out);
                }
            },
            Message::FallbackNotice(_) => {
                self.rollback();
                out.push((Message::FallbackNotice(FallbackReason::Acknowledged), self.now));
            }
            Message::RpcRet(_) | Message::OutputData(_) => {
                warn!("client sent a server-only message");
                self.abort(FallbackReason::Protocol, &mut out);
            }
        }
        out
    }
}
