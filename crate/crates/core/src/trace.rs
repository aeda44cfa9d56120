//! Call logs, tags, boundary markers and the `.trace.jsonl` file format.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runtime::{ApiCall, ApiKind, ArgList, KernelId, MemRegion, Payload, ReturnValue, Status};

/// Payloads larger than this are written to trace files as a SHA-256 digest.
pub const INLINE_PAYLOAD_LIMIT: usize = 256;

/// One intercepted call together with its result.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OperatorInfo {
    pub index: usize,
    pub func: ApiKind,
    pub kernel: Option<KernelId>,
    pub args: ArgList,
    /// Host bytes uploaded by a `MemcpyHtoD`.
    pub input: Option<Payload>,
    pub ret: ReturnValue,
}

impl OperatorInfo {
    pub fn from_call(index: usize, call: &ApiCall, ret: ReturnValue) -> Self {
        OperatorInfo {
            index,
            func: call.func,
            kernel: call.kernel.clone(),
            args: call.args.clone(),
            input: call.input.clone().map(Payload::Bytes),
            ret,
        }
    }

    /// Record equivalence: same function, kernel, scalars and regions.
    /// Payload bytes and return values are ignored.
    pub fn equivalent(&self, other: &OperatorInfo) -> bool {
        self.func == other.func && self.kernel == other.kernel && self.args == other.args
    }

    /// Whether an incoming call is equivalent to this record.
    pub fn matches_call(&self, call: &ApiCall) -> bool {
        self.func == call.func && self.kernel == call.kernel && self.args == call.args
    }

    /// The call this record was made from, with its input bytes if present.
    pub fn to_call(&self) -> ApiCall {
        ApiCall {
            func: self.func,
            kernel: self.kernel.clone(),
            args: self.args.clone(),
            input: self.input.as_ref().and_then(|p| p.as_bytes()).map(<[u8]>::to_vec),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TagMode {
    /// Kind plus kernel id.
    #[default]
    Fine,
    /// Kind only.
    Coarse,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Tag {
    pub kind: ApiKind,
    pub kernel: Option<KernelId>,
}

pub fn tag_of(info: &OperatorInfo, mode: TagMode) -> Tag {
    Tag {
        kind: info.func,
        kernel: match mode {
            TagMode::Fine => info.kernel.clone(),
            TagMode::Coarse => None,
        },
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("entry index {got} does not match log length {expected}")]
    IndexMismatch { expected: usize, got: usize },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for TraceError {
    fn from(e: std::io::Error) -> Self {
        TraceError::Io(e.to_string())
    }
}

/// Ordered, gap-free call log.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TraceLog {
    entries: Vec<OperatorInfo>,
}

impl TraceLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, info: OperatorInfo) -> Result<(), TraceError> {
        if info.index != self.entries.len() {
            return Err(TraceError::IndexMismatch {
                expected: self.entries.len(),
                got: info.index,
            });
        }
        self.entries.push(info);
        Ok(())
    }

    /// Appends a call, assigning the next index.
    pub fn push(&mut self, call: &ApiCall, ret: ReturnValue) -> usize {
        let index = self.entries.len();
        self.entries.push(OperatorInfo::from_call(index, call, ret));
        index
    }

    pub fn entries(&self) -> &[OperatorInfo] {
        &self.entries
    }

    pub fn get(&self, i: usize) -> Option<&OperatorInfo> {
        self.entries.get(i)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn set_ret(&mut self, index: usize, ret: ReturnValue) {
        self.entries[index].ret = ret;
    }

    pub fn tags(&self, mode: TagMode) -> Vec<Tag> {
        self.entries.iter().map(|e| tag_of(e, mode)).collect()
    }

    pub fn boundary_indices(&self) -> BoundaryIndices {
        boundary_indices(&self.entries)
    }

    pub fn serialize<W: Write>(&self, mut out: W) -> Result<(), TraceError> {
        for e in &self.entries {
            let line = TraceLine::from_info(e);
            serde_json::to_writer(&mut out, &line).map_err(|e| TraceError::Io(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.serialize(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn deserialize<R: BufRead>(input: R) -> Result<TraceLog, TraceError> {
        let mut log = TraceLog::new();
        for (i, line) in input.lines().enumerate() {
            let lineno = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TraceLine = serde_json::from_str(&line).map_err(|e| TraceError::Parse {
                line: lineno,
                reason: e.to_string(),
            })?;
            let info = parsed.into_info().map_err(|reason| TraceError::Parse {
                line: lineno,
                reason,
            })?;
            log.append(info).map_err(|e| TraceError::Parse {
                line: lineno,
                reason: e.to_string(),
            })?;
        }
        Ok(log)
    }

    pub fn from_jsonl(s: &str) -> Result<TraceLog, TraceError> {
        Self::deserialize(s.as_bytes())
    }
}

impl FromIterator<(ApiCall, ReturnValue)> for TraceLog {
    fn from_iter<I: IntoIterator<Item = (ApiCall, ReturnValue)>>(iter: I) -> Self {
        let mut log = TraceLog::new();
        for (call, ret) in iter {
            log.push(&call, ret);
        }
        log
    }
}

/// Inference boundary markers of a log.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BoundaryIndices {
    /// Indices of every `MemcpyHtoD`.
    pub starts: BTreeSet<usize>,
    /// For every `MemcpyDtoH`, the index of the last synchronize in the run
    /// directly following it, or the copy itself.
    pub ends: BTreeSet<usize>,
}

pub fn boundary_indices(entries: &[OperatorInfo]) -> BoundaryIndices {
    let mut b = BoundaryIndices::default();
    for (i, e) in entries.iter().enumerate() {
        match e.func {
            ApiKind::MemcpyHtoD => {
                b.starts.insert(i);
            }
            ApiKind::MemcpyDtoH => {
                let mut end = i;
                while entries
                    .get(end + 1)
                    .is_some_and(|n| n.func == ApiKind::StreamSynchronize)
                {
                    end += 1;
                }
                b.ends.insert(end);
            }
            _ => {}
        }
    }
    b
}

#[derive(Serialize, Deserialize)]
struct TraceLine {
    index: usize,
    func: String,
    kernel: Option<String>,
    scalars: Vec<i64>,
    in_regions: Vec<[u64; 2]>,
    out_regions: Vec<[u64; 2]>,
    payload_size: u64,
    ret_status: i32,
    payload_hex: Option<String>,
}

fn payload_to_hex(p: &Payload) -> String {
    match p {
        Payload::Bytes(b) if b.len() <= INLINE_PAYLOAD_LIMIT => hex::encode(b),
        other => format!("sha256:{}", hex::encode(other.digest())),
    }
}

fn payload_from_hex(s: &str) -> Result<Payload, String> {
    if let Some(d) = s.strip_prefix("sha256:") {
        let bytes = hex::decode(d).map_err(|e| format!("bad digest: {e}"))?;
        let digest: [u8; 32] = bytes
            .try_into()
            .map_err(|_| "digest must be 32 bytes".to_string())?;
        Ok(Payload::Digest(digest))
    } else {
        hex::decode(s)
            .map(Payload::Bytes)
            .map_err(|e| format!("bad payload hex: {e}"))
    }
}

fn regions(r: &[MemRegion]) -> Vec<[u64; 2]> {
    r.iter().map(|r| [r.base, r.size]).collect()
}

impl TraceLine {
    fn from_info(e: &OperatorInfo) -> Self {
        let payload = if e.func == ApiKind::MemcpyHtoD {
            e.input.as_ref()
        } else {
            e.ret.payload.as_ref()
        };
        TraceLine {
            index: e.index,
            func: e.func.name().to_owned(),
            kernel: e.kernel.as_ref().map(|k| k.0.clone()),
            scalars: e.args.scalars.clone(),
            in_regions: regions(&e.args.in_regions),
            out_regions: regions(&e.args.out_regions),
            payload_size: e.args.payload_size,
            ret_status: e.ret.status.code(),
            payload_hex: payload.map(payload_to_hex),
        }
    }

    fn into_info(self) -> Result<OperatorInfo, String> {
        let func = ApiKind::parse(&self.func).ok_or_else(|| format!("unknown func `{}`", self.func))?;
        if self.kernel.is_some() != (func == ApiKind::LaunchKernel) {
            return Err("kernel id must be present exactly for LaunchKernel".into());
        }
        let payload = self.payload_hex.as_deref().map(payload_from_hex).transpose()?;
        let (input, ret_payload) = if func == ApiKind::MemcpyHtoD {
            (payload, None)
        } else {
            (None, payload)
        };
        let to_regions = |v: Vec<[u64; 2]>| v.into_iter().map(|[b, s]| MemRegion::new(b, s)).collect();
        Ok(OperatorInfo {
            index: self.index,
            func,
            kernel: self.kernel.map(KernelId),
            args: ArgList {
                scalars: self.scalars,
                in_regions: to_regions(self.in_regions),
                out_regions: to_regions(self.out_regions),
                payload_size: self.payload_size,
            },
            input,
            ret: ReturnValue {
                status: Status::from_code(self.ret_status),
                payload: ret_payload,
            },
        })
    }
}
