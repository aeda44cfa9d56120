//! Seeded generators shared by the integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rrto_core::runtime::{ApiCall, ApiKind, ArgList, KernelId, MemRegion, Payload, ReturnValue, Status};
use rrto_core::trace::{OperatorInfo, TraceLog, INLINE_PAYLOAD_LIMIT};
use rrto_core::transport::wire::{FallbackReason, Message, ReplayProgram};
use rrto_core::workloads::{random_profile, record_locally, Variant, Workload};

pub const KINDS: [ApiKind; 9] = [
    ApiKind::GetDevice,
    ApiKind::GetLastError,
    ApiKind::LaunchKernel,
    ApiKind::Malloc,
    ApiKind::StreamIsCapturing,
    ApiKind::StreamSynchronize,
    ApiKind::MemcpyHtoD,
    ApiKind::MemcpyDtoH,
    ApiKind::MemcpyDtoD,
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn bytes(rng: &mut impl Rng, max: usize) -> Vec<u8> {
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| rng.gen()).collect()
}

fn regions(rng: &mut impl Rng) -> Vec<MemRegion> {
    (0..rng.gen_range(0..4))
        .map(|_| MemRegion::new(rng.gen(), rng.gen_range(0..1 << 20)))
        .collect()
}

fn args(rng: &mut impl Rng) -> ArgList {
    ArgList {
        scalars: (0..rng.gen_range(0..4)).map(|_| rng.gen()).collect(),
        in_regions: regions(rng),
        out_regions: regions(rng),
        payload_size: rng.gen_range(0..1 << 24),
    }
}

fn kernel(rng: &mut impl Rng) -> KernelId {
    let name: String = (0..rng.gen_range(1..12))
        .map(|_| *b"abcdefgh_0123".choose(rng).unwrap() as char)
        .collect();
    KernelId(name)
}

pub fn status(rng: &mut impl Rng) -> Status {
    if rng.gen_bool(0.8) {
        Status::Success
    } else {
        Status::ErrorCode(rng.gen_range(1..1000))
    }
}

/// A payload that survives the trace format unchanged.
fn trace_payload(rng: &mut impl Rng) -> Payload {
    if rng.gen_bool(0.7) {
        Payload::Bytes(bytes(rng, INLINE_PAYLOAD_LIMIT))
    } else {
        Payload::Digest(rng.gen())
    }
}

fn ret(rng: &mut impl Rng) -> ReturnValue {
    ReturnValue {
        status: status(rng),
        payload: rng.gen_bool(0.5).then(|| trace_payload(rng)),
    }
}

pub fn random_call(rng: &mut impl Rng) -> ApiCall {
    let func = *KINDS.choose(rng).unwrap();
    ApiCall {
        func,
        kernel: (func == ApiKind::LaunchKernel).then(|| kernel(rng)),
        args: args(rng),
        input: (func == ApiKind::MemcpyHtoD).then(|| bytes(rng, 600)),
    }
}

pub fn random_info(rng: &mut impl Rng, index: usize) -> OperatorInfo {
    let func = *KINDS.choose(rng).unwrap();
    let upload = func == ApiKind::MemcpyHtoD;
    OperatorInfo {
        index,
        func,
        kernel: (func == ApiKind::LaunchKernel).then(|| kernel(rng)),
        args: args(rng),
        input: (upload && rng.gen_bool(0.8)).then(|| trace_payload(rng)),
        ret: ReturnValue {
            status: status(rng),
            payload: if upload { None } else { ret(rng).payload },
        },
    }
}

pub fn random_message(rng: &mut impl Rng) -> Message {
    match rng.gen_range(0..6) {
        0 => Message::RpcCall(random_call(rng)),
        1 => Message::RpcRet(ret(rng)),
        2 => Message::StartReplay {
            digest: rng.gen(),
            program: rng.gen_bool(0.5).then(|| ReplayProgram {
                start_index: rng.gen(),
                ops: (0..rng.gen_range(0..12)).map(|i| random_info(rng, i)).collect(),
            }),
            input: bytes(rng, 300),
        },
        3 => Message::InputData(bytes(rng, 300)),
        4 => Message::OutputData(ret(rng)),
        _ => Message::FallbackNotice(
            *[
                FallbackReason::Deviation,
                FallbackReason::InputUnderrun,
                FallbackReason::UnknownDigest,
                FallbackReason::ExecutorError,
                FallbackReason::Protocol,
                FallbackReason::Acknowledged,
            ]
            .choose(rng)
            .unwrap(),
        ),
    }
}

pub fn random_trace(rng: &mut impl Rng, max_len: usize) -> TraceLog {
    let n = rng.gen_range(0..=max_len);
    let mut log = TraceLog::new();
    for i in 0..n {
        log.append(random_info(rng, i)).unwrap();
    }
    log
}

/// A locally recorded log of a random template workload: at most
/// `max_len` entries, some whole inferences and possibly a partial one.
pub fn random_sam_log(seed: u64, max_len: usize) -> TraceLog {
    let mut r = rng(seed ^ 0x5eed);
    let workload = Workload::new(random_profile(seed)).unwrap();
    let n = r.gen_range(1..=6);
    let stream = workload.stream(n + 1, seed, Variant::Static);
    let mut calls: Vec<ApiCall> = stream.loading.iter().chain(&stream.init).cloned().collect();
    for inf in &stream.inferences[..n] {
        calls.extend(inf.iter().cloned());
    }
    if r.gen_bool(0.3) {
        let last = &stream.inferences[n];
        calls.extend(last[..r.gen_range(0..last.len())].iter().cloned());
    }
    calls.truncate(max_len);
    record_locally(&calls, &mut workload.device())
}
