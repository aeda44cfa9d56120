//! Framed binary protocol between the offloading client and server.
//!
//! A frame is a 4-byte little-endian body length, a 1-byte message type and
//! the body. All integers are little-endian. Body layouts:
//!
//! | type | message          | body                                            |
//! |------|------------------|-------------------------------------------------|
//! | 1    | `RpcCall`        | call                                            |
//! | 2    | `RpcRet`         | ret                                             |
//! | 3    | `StartReplay`    | digest[32], u8 has_program, [program], bytes input |
//! | 4    | `InputData`      | bytes                                           |
//! | 5    | `OutputData`     | ret                                             |
//! | 6    | `FallbackNotice` | u8 reason                                       |
//!
//! Field encodings:
//!
//! - `bytes`: `u32 len`, data
//! - `kernel`: `u8 present`, then `u16 len` and utf-8 when present
//! - `args`: `u32 n`, n×`i64` scalars; `u32 n`, n×(`u64 base`, `u64 size`)
//!   inputs; the same for outputs; `u64 payload_size`
//! - `payload`: `u8 tag` (0 none, 1 bytes, 2 digest), then bytes or digest[32]
//! - `call`: `u8 func`, kernel, args, input payload (inline bytes only)
//! - `ret`: `i32 status`, payload
//! - `program`: `u64 start_index`, `u32 n`, n×(`u64 index`, call, ret); here
//!   the input payload may also be a digest

use std::io::{Read, Write};

use thiserror::Error;

use crate::runtime::{ApiCall, ApiKind, ArgList, KernelId, MemRegion, Payload, ReturnValue, Status};
use crate::trace::OperatorInfo;

pub const HEADER_LEN: usize = 5;
/// Upper bound on a single frame body.
pub const MAX_BODY: u32 = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FallbackReason {
    Deviation = 0,
    InputUnderrun = 1,
    UnknownDigest = 2,
    ExecutorError = 3,
    Protocol = 4,
    Acknowledged = 5,
}

impl FallbackReason {
    fn from_u8(v: u8) -> Option<Self> {
        use FallbackReason::*;
        [Deviation, InputUnderrun, UnknownDigest, ExecutorError, Protocol, Acknowledged]
            .get(v as usize)
            .copied()
    }
}

/// A recorded window as shipped to the server.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplayProgram {
    pub start_index: u64,
    pub ops: Vec<OperatorInfo>,
}

impl ReplayProgram {
    /// Program for a recorded window: records are renumbered from 0, and
    /// upload bytes and returned payloads are dropped.
    pub fn from_window(start_index: usize, window: &[OperatorInfo]) -> Self {
        let ops = window
            .iter()
            .enumerate()
            .map(|(i, op)| OperatorInfo {
                index: i,
                input: None,
                ret: ReturnValue {
                    status: op.ret.status,
                    payload: None,
                },
                ..op.clone()
            })
            .collect();
        ReplayProgram {
            start_index: start_index as u64,
            ops,
        }
    }

    /// Content digest used to refer to an already transmitted program. The
    /// start index is not part of the content.
    pub fn digest(&self) -> [u8; 32] {
        let mut body = Vec::new();
        put_program(&mut body, self);
        crate::digest_bytes(&body[8..])
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    RpcCall(ApiCall),
    RpcRet(ReturnValue),
    StartReplay {
        digest: [u8; 32],
        program: Option<ReplayProgram>,
        input: Vec<u8>,
    },
    InputData(Vec<u8>),
    OutputData(ReturnValue),
    FallbackNotice(FallbackReason),
}

impl Message {
    pub fn type_byte(&self) -> u8 {
        match self {
            Message::RpcCall(_) => 1,
            Message::RpcRet(_) => 2,
            Message::StartReplay { .. } => 3,
            Message::InputData(_) => 4,
            Message::OutputData(_) => 5,
            Message::FallbackNotice(_) => 6,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Message::RpcCall(_) => "RpcCall",
            Message::RpcRet(_) => "RpcRet",
            Message::StartReplay { .. } => "StartReplay",
            Message::InputData(_) => "InputData",
            Message::OutputData(_) => "OutputData",
            Message::FallbackNotice(_) => "FallbackNotice",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
}

fn malformed(reason: impl Into<String>) -> WireError {
    WireError::MalformedFrame(reason.into())
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len() as u32);
    out.extend_from_slice(b);
}

fn put_regions(out: &mut Vec<u8>, regions: &[MemRegion]) {
    put_u32(out, regions.len() as u32);
    for r in regions {
        put_u64(out, r.base);
        put_u64(out, r.size);
    }
}

fn put_args(out: &mut Vec<u8>, args: &ArgList) {
    put_u32(out, args.scalars.len() as u32);
    for s in &args.scalars {
        out.extend_from_slice(&s.to_le_bytes());
    }
    put_regions(out, &args.in_regions);
    put_regions(out, &args.out_regions);
    put_u64(out, args.payload_size);
}

fn put_kernel(out: &mut Vec<u8>, kernel: Option<&KernelId>) {
    match kernel {
        None => out.push(0),
        Some(k) => {
            out.push(1);
            out.extend_from_slice(&(k.0.len() as u16).to_le_bytes());
            out.extend_from_slice(k.0.as_bytes());
        }
    }
}

fn put_payload(out: &mut Vec<u8>, p: Option<&Payload>) {
    match p {
        None => out.push(0),
        Some(Payload::Bytes(b)) => {
            out.push(1);
            put_bytes(out, b);
        }
        Some(Payload::Digest(d)) => {
            out.push(2);
            out.extend_from_slice(d);
        }
    }
}

fn put_ret(out: &mut Vec<u8>, ret: &ReturnValue) {
    out.extend_from_slice(&ret.status.code().to_le_bytes());
    put_payload(out, ret.payload.as_ref());
}

fn put_call_parts(
    out: &mut Vec<u8>,
    func: ApiKind,
    kernel: Option<&KernelId>,
    args: &ArgList,
    input: Option<&Payload>,
) {
    out.push(func.as_u8());
    put_kernel(out, kernel);
    put_args(out, args);
    put_payload(out, input);
}

fn put_call(out: &mut Vec<u8>, call: &ApiCall) {
    let input = call.input.clone().map(Payload::Bytes);
    put_call_parts(out, call.func, call.kernel.as_ref(), &call.args, input.as_ref());
}

fn put_program(out: &mut Vec<u8>, program: &ReplayProgram) {
    put_u64(out, program.start_index);
    put_u32(out, program.ops.len() as u32);
    for op in &program.ops {
        put_u64(out, op.index as u64);
        put_call_parts(out, op.func, op.kernel.as_ref(), &op.args, op.input.as_ref());
        put_ret(out, &op.ret);
    }
}

/// Encodes a message into a complete frame.
pub fn encode(msg: &Message) -> Vec<u8> {
    let mut body = Vec::new();
    match msg {
        Message::RpcCall(call) => put_call(&mut body, call),
        Message::RpcRet(ret) | Message::OutputData(ret) => put_ret(&mut body, ret),
        Message::StartReplay {
            digest,
            program,
            input,
        } => {
            body.extend_from_slice(digest);
            match program {
                None => body.push(0),
                Some(p) => {
                    body.push(1);
                    put_program(&mut body, p);
                }
            }
            put_bytes(&mut body, input);
        }
        Message::InputData(data) => put_bytes(&mut body, data),
        Message::FallbackNotice(reason) => body.push(*reason as u8),
    }
    let mut frame = Vec::with_capacity(HEADER_LEN + body.len());
    put_u32(&mut frame, body.len() as u32);
    frame.push(msg.type_byte());
    frame.extend_from_slice(&body);
    frame
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(malformed(format!("need {n} bytes, have {}", self.buf.len())));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, WireError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32, WireError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn count(&mut self, elem_size: usize) -> Result<usize, WireError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(elem_size) > self.buf.len() {
            return Err(malformed(format!("count {n} exceeds remaining body")));
        }
        Ok(n)
    }

    fn bytes(&mut self) -> Result<Vec<u8>, WireError> {
        let n = self.count(1)?;
        Ok(self.take(n)?.to_vec())
    }

    fn digest(&mut self) -> Result<[u8; 32], WireError> {
        Ok(self.take(32)?.try_into().unwrap())
    }

    fn regions(&mut self) -> Result<Vec<MemRegion>, WireError> {
        let n = self.count(16)?;
        (0..n)
            .map(|_| Ok(MemRegion::new(self.u64()?, self.u64()?)))
            .collect()
    }

    fn args(&mut self) -> Result<ArgList, WireError> {
        let n = self.count(8)?;
        let scalars = (0..n).map(|_| self.i64()).collect::<Result<_, _>>()?;
        Ok(ArgList {
            scalars,
            in_regions: self.regions()?,
            out_regions: self.regions()?,
            payload_size: self.u64()?,
        })
    }

    fn kernel(&mut self) -> Result<Option<KernelId>, WireError> {
        match self.u8()? {
            0 => Ok(None),
            1 => {
                let n = self.u16()? as usize;
                let s = std::str::from_utf8(self.take(n)?).map_err(|e| malformed(e.to_string()))?;
                Ok(Some(KernelId::new(s)))
            }
            t => Err(malformed(format!("bad kernel flag {t}"))),
        }
    }

    fn payload(&mut self) -> Result<Option<Payload>, WireError> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(Payload::Bytes(self.bytes()?))),
            2 => Ok(Some(Payload::Digest(self.digest()?))),
            t => Err(malformed(format!("bad payload tag {t}"))),
        }
    }

    fn ret(&mut self) -> Result<ReturnValue, WireError> {
        Ok(ReturnValue {
            status: Status::from_code(self.i32()?),
            payload: self.payload()?,
        })
    }

    fn func(&mut self) -> Result<ApiKind, WireError> {
        let v = self.u8()?;
        ApiKind::from_u8(v).ok_or_else(|| malformed(format!("bad api kind {v}")))
    }

    fn call(&mut self) -> Result<ApiCall, WireError> {
        let func = self.func()?;
        let kernel = self.kernel()?;
        let args = self.args()?;
        let input = match self.payload()? {
            None => None,
            Some(Payload::Bytes(b)) => Some(b),
            Some(Payload::Digest(_)) => return Err(malformed("call input must be inline bytes")),
        };
        Ok(ApiCall {
            func,
            kernel,
            args,
            input,
        })
    }

    fn program(&mut self) -> Result<ReplayProgram, WireError> {
        let start_index = self.u64()?;
        let n = self.count(1)?;
        let mut ops = Vec::with_capacity(n);
        for _ in 0..n {
            let index = self.u64()? as usize;
            let func = self.func()?;
            let kernel = self.kernel()?;
            let args = self.args()?;
            let input = self.payload()?;
            let ret = self.ret()?;
            ops.push(OperatorInfo {
                index,
                func,
                kernel,
                args,
                input,
                ret,
            });
        }
        Ok(ReplayProgram { start_index, ops })
    }
}

/// Decodes exactly one frame.
pub fn decode(frame: &[u8]) -> Result<Message, WireError> {
    if frame.len() < HEADER_LEN {
        return Err(malformed("truncated header"));
    }
    let len = u32::from_le_bytes(frame[..4].try_into().unwrap()) as usize;
    if frame.len() - HEADER_LEN != len {
        return Err(malformed(format!(
            "body length {len} but frame carries {}",
            frame.len() - HEADER_LEN
        )));
    }
    decode_body(frame[4], &frame[HEADER_LEN..])
}

fn decode_body(ty: u8, body: &[u8]) -> Result<Message, WireError> {
    let mut r = Reader { buf: body };
    let msg = match ty {
        1 => Message::RpcCall(r.call()?),
        2 => Message::RpcRet(r.ret()?),
        3 => {
            let digest = r.digest()?;
            let program = match r.u8()? {
                0 => None,
                1 => Some(r.program()?),
                t => return Err(malformed(format!("bad program flag {t}"))),
            };
            Message::StartReplay {
                digest,
                program,
                input: r.bytes()?,
            }
        }
        4 => Message::InputData(r.bytes()?),
        5 => Message::OutputData(r.ret()?),
        6 => {
            let v = r.u8()?;
            Message::FallbackNotice(
                FallbackReason::from_u8(v).ok_or_else(|| malformed(format!("bad reason {v}")))?,
            )
        }
        t => return Err(malformed(format!("unknown message type {t}"))),
    };
    if !r.buf.is_empty() {
        return Err(malformed(format!("{} trailing bytes", r.buf.len())));
    }
    Ok(msg)
}

/// Writes one frame.
pub fn write_frame<W: Write>(w: &mut W, frame: &[u8]) -> std::io::Result<()> {
    w.write_all(frame)?;
    w.flush()
}

/// Reads one complete frame (header included).
pub fn read_frame<R: Read>(r: &mut R) -> std::io::Result<Vec<u8>> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    let len = u32::from_le_bytes(header[..4].try_into().unwrap());
    if len > MAX_BODY {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("frame body of {len} bytes exceeds limit"),
        ));
    }
    let mut frame = vec![0u8; HEADER_LEN + len as usize];
    frame[..HEADER_LEN].copy_from_slice(&header);
    r.read_exact(&mut frame[HEADER_LEN..])?;
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_ret_frame() {
        let frame = encode(&Message::RpcRet(ReturnValue::success()));
        // i32 status + payload tag
        assert_eq!(frame, vec![5, 0, 0, 0, 2, 0, 0, 0, 0, 0]);
        assert_eq!(decode(&frame).unwrap(), Message::RpcRet(ReturnValue::success()));
    }

    #[test]
    fn input_frame_size() {
        let frame = encode(&Message::InputData(vec![9; 64]));
        assert_eq!(frame.len(), HEADER_LEN + 4 + 64);
    }

    #[test]
    fn truncated_frames_are_rejected() {
        let frame = encode(&Message::RpcCall(ApiCall::htod(MemRegion::new(0, 4), vec![1, 2, 3, 4])));
        for cut in [0, 3, HEADER_LEN, frame.len() - 1] {
            assert!(matches!(decode(&frame[..cut]), Err(WireError::MalformedFrame(_))));
        }
        let mut lying = frame.clone();
        lying[0] -= 1;
        lying.pop();
        assert!(decode(&lying).is_err());
    }

    #[test]
    fn unknown_type_is_rejected() {
        let mut frame = encode(&Message::FallbackNotice(FallbackReason::Deviation));
        frame[4] = 42;
        assert!(decode(&frame).is_err());
    }

    #[test]
    fn frames_stream_through_io() {
        let msgs = [
            Message::InputData(vec![1, 2, 3]),
            Message::FallbackNotice(FallbackReason::Acknowledged),
        ];
        let mut buf = Vec::new();
        for m in &msgs {
            write_frame(&mut buf, &encode(m)).unwrap();
        }
        let mut cursor = std::io::Cursor::new(buf);
        for m in &msgs {
            assert_eq!(&decode(&read_frame(&mut cursor).unwrap()).unwrap(), m);
        }
    }
}
