//! Simulated device runtime.
//!
//! Stands in for the vendor runtime library: a single device with a bump
//! allocator, byte-addressed memory and a registry of deterministic kernels.
//! Executing the same call sequence on two fresh [`DeviceState`]s always
//! produces identical return values and identical memory.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Base address handed out by the first allocation.
pub const ALLOC_BASE: u64 = 0x7f00_0000_0000;
/// Every allocation is rounded up to this alignment.
pub const ALLOC_ALIGN: u64 = 256;

/// The runtime API entry points that can be intercepted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ApiKind {
    GetDevice,
    GetLastError,
    LaunchKernel,
    Malloc,
    StreamIsCapturing,
    StreamSynchronize,
    MemcpyHtoD,
    MemcpyDtoH,
    MemcpyDtoD,
}

impl ApiKind {
    pub const ALL: [ApiKind; 9] = [
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

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<ApiKind> {
        ApiKind::ALL.get(v as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ApiKind::GetDevice => "GetDevice",
            ApiKind::GetLastError => "GetLastError",
            ApiKind::LaunchKernel => "LaunchKernel",
            ApiKind::Malloc => "Malloc",
            ApiKind::StreamIsCapturing => "StreamIsCapturing",
            ApiKind::StreamSynchronize => "StreamSynchronize",
            ApiKind::MemcpyHtoD => "MemcpyHtoD",
            ApiKind::MemcpyDtoH => "MemcpyDtoH",
            ApiKind::MemcpyDtoD => "MemcpyDtoD",
        }
    }

    pub fn parse(s: &str) -> Option<ApiKind> {
        ApiKind::ALL.iter().copied().find(|k| k.name() == s)
    }

    /// Calls answered from a local cache in semi mode.
    pub fn is_bookkeeping(self) -> bool {
        matches!(self, ApiKind::GetDevice | ApiKind::GetLastError)
    }
}

impl fmt::Display for ApiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Name of a registered kernel.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KernelId(pub String);

impl KernelId {
    pub fn new(name: impl Into<String>) -> Self {
        KernelId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for KernelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for KernelId {
    fn from(s: &str) -> Self {
        KernelId(s.to_owned())
    }
}

/// A span of device memory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MemRegion {
    pub base: u64,
    pub size: u64,
}

impl MemRegion {
    pub fn new(base: u64, size: u64) -> Self {
        MemRegion { base, size }
    }

    pub fn end(&self) -> u64 {
        self.base + self.size
    }
}

impl fmt::Display for MemRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}+{}", self.base, self.size)
    }
}

/// Arguments of one runtime call.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArgList {
    pub scalars: Vec<i64>,
    pub in_regions: Vec<MemRegion>,
    pub out_regions: Vec<MemRegion>,
    /// Host-side bytes carried by the call; nonzero only for host/device copies.
    pub payload_size: u64,
}

impl ArgList {
    pub fn scalars(scalars: Vec<i64>) -> Self {
        ArgList {
            scalars,
            ..Default::default()
        }
    }

    pub fn htod(dst: MemRegion) -> Self {
        ArgList {
            out_regions: vec![dst],
            payload_size: dst.size,
            ..Default::default()
        }
    }

    pub fn dtoh(src: MemRegion) -> Self {
        ArgList {
            in_regions: vec![src],
            payload_size: src.size,
            ..Default::default()
        }
    }

    pub fn dtod(src: MemRegion, dst: MemRegion) -> Self {
        ArgList {
            in_regions: vec![src],
            out_regions: vec![dst],
            ..Default::default()
        }
    }

    pub fn kernel(scalars: Vec<i64>, ins: Vec<MemRegion>, outs: Vec<MemRegion>) -> Self {
        ArgList {
            scalars,
            in_regions: ins,
            out_regions: outs,
            payload_size: 0,
        }
    }
}

/// Data carried by a call or a return value.
///
/// In memory payloads are always [`Payload::Bytes`]; the trace file may
/// replace large payloads by their SHA-256 digest.
#[derive(Clone, PartialEq, Eq, Hash)]
pub enum Payload {
    Bytes(Vec<u8>),
    Digest([u8; 32]),
}

impl Payload {
    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Payload::Bytes(b) => Some(b),
            Payload::Digest(_) => None,
        }
    }

    pub fn digest(&self) -> [u8; 32] {
        match self {
            Payload::Bytes(b) => crate::digest_bytes(b),
            Payload::Digest(d) => *d,
        }
    }
}

impl fmt::Debug for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::Bytes(b) if b.len() <= 16 => write!(f, "Bytes({})", hex::encode(b)),
            Payload::Bytes(b) => write!(f, "Bytes(len={})", b.len()),
            Payload::Digest(d) => write!(f, "Digest({})", hex::encode(&d[..8])),
        }
    }
}

impl From<Vec<u8>> for Payload {
    fn from(b: Vec<u8>) -> Self {
        Payload::Bytes(b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[derive(Default)]
pub enum Status {
    #[default]
    Success,
    ErrorCode(i32),
}

impl Status {
    pub fn is_success(self) -> bool {
        self == Status::Success
    }

    pub fn code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::ErrorCode(c) => c,
        }
    }

    pub fn from_code(code: i32) -> Status {
        if code == 0 {
            Status::Success
        } else {
            Status::ErrorCode(code)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ReturnValue {
    pub status: Status,
    pub payload: Option<Payload>,
}

impl ReturnValue {
    pub fn success() -> Self {
        ReturnValue {
            status: Status::Success,
            payload: None,
        }
    }

    pub fn with_bytes(bytes: Vec<u8>) -> Self {
        ReturnValue {
            status: Status::Success,
            payload: Some(Payload::Bytes(bytes)),
        }
    }

    pub fn error(code: i32) -> Self {
        ReturnValue {
            status: Status::from_code(code),
            payload: None,
        }
    }

    pub fn bytes(&self) -> Option<&[u8]> {
        self.payload.as_ref().and_then(Payload::as_bytes)
    }
}

/// One application call, before it has been answered.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ApiCall {
    pub func: ApiKind,
    pub kernel: Option<KernelId>,
    pub args: ArgList,
    /// Host bytes sent with a `MemcpyHtoD`.
    pub input: Option<Vec<u8>>,
}

impl ApiCall {
    pub fn new(func: ApiKind) -> Self {
        ApiCall {
            func,
            kernel: None,
            args: ArgList::default(),
            input: None,
        }
    }

    pub fn get_device() -> Self {
        ApiCall::new(ApiKind::GetDevice)
    }

    pub fn get_last_error() -> Self {
        ApiCall::new(ApiKind::GetLastError)
    }

    pub fn synchronize() -> Self {
        ApiCall::new(ApiKind::StreamSynchronize)
    }

    pub fn is_capturing() -> Self {
        ApiCall::new(ApiKind::StreamIsCapturing)
    }

    pub fn malloc(size: u64) -> Self {
        ApiCall {
            args: ArgList::scalars(vec![size as i64]),
            ..ApiCall::new(ApiKind::Malloc)
        }
    }

    pub fn htod(dst: MemRegion, data: Vec<u8>) -> Self {
        ApiCall {
            args: ArgList::htod(dst),
            input: Some(data),
            ..ApiCall::new(ApiKind::MemcpyHtoD)
        }
    }

    pub fn dtoh(src: MemRegion) -> Self {
        ApiCall {
            args: ArgList::dtoh(src),
            ..ApiCall::new(ApiKind::MemcpyDtoH)
        }
    }

    pub fn dtod(src: MemRegion, dst: MemRegion) -> Self {
        ApiCall {
            args: ArgList::dtod(src, dst),
            ..ApiCall::new(ApiKind::MemcpyDtoD)
        }
    }

    pub fn launch(
        kernel: impl Into<KernelId>,
        scalars: Vec<i64>,
        ins: Vec<MemRegion>,
        outs: Vec<MemRegion>,
    ) -> Self {
        ApiCall {
            func: ApiKind::LaunchKernel,
            kernel: Some(kernel.into()),
            args: ArgList::kernel(scalars, ins, outs),
            input: None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuntimeError {
    #[error("kernel `{0}` is already registered")]
    DuplicateKernelId(KernelId),
    #[error("kernel `{0}` is not registered")]
    UnknownKernel(KernelId),
    #[error("region {0} is not inside any allocation")]
    UnallocatedRegion(MemRegion),
    #[error("size mismatch: expected {expected} bytes, got {actual}")]
    RegionSizeMismatch { expected: u64, actual: u64 },
    #[error("malformed arguments for {func}: {reason}")]
    InvalidArguments { func: ApiKind, reason: String },
}

impl RuntimeError {
    /// Status code reported to the caller, loosely following the vendor numbering.
    pub fn code(&self) -> i32 {
        match self {
            RuntimeError::DuplicateKernelId(_) => 17,
            RuntimeError::UnknownKernel(_) => 98,
            RuntimeError::UnallocatedRegion(_) => 400,
            RuntimeError::RegionSizeMismatch { .. } => 11,
            RuntimeError::InvalidArguments { .. } => 1,
        }
    }
}

/// A kernel body: reads its input buffers and scalars, overwrites its output
/// buffers (pre-filled with their current contents).
pub type KernelFn = Arc<dyn Fn(&[&[u8]], &[i64], &mut [Vec<u8>]) + Send + Sync>;

/// 64-bit FNV-1a, used to key kernels by name.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Keyed xor-rotate mixer: every output byte depends on every input byte,
/// every scalar and the key.
pub fn keyed_mixer(key: u64) -> KernelFn {
    Arc::new(move |ins: &[&[u8]], scalars: &[i64], outs: &mut [Vec<u8>]| {
        let mut acc = key;
        for (i, input) in ins.iter().enumerate() {
            acc = acc.rotate_left(7) ^ (i as u64).wrapping_mul(0x2545_f491_4f6c_dd1d);
            for chunk in input.chunks(8) {
                let mut word = [0u8; 8];
                word[..chunk.len()].copy_from_slice(chunk);
                acc = (acc ^ u64::from_le_bytes(word))
                    .rotate_left(29)
                    .wrapping_mul(0x9e37_79b9_7f4a_7c15);
            }
        }
        for &s in scalars {
            acc = (acc ^ s as u64).rotate_left(17).wrapping_mul(0xff51_afd7_ed55_8ccd);
        }
        for (o, out) in outs.iter_mut().enumerate() {
            let mut state = acc ^ (o as u64).wrapping_mul(0xc4ce_b9fe_1a85_ec53);
            for chunk in out.chunks_mut(8) {
                let word = splitmix(&mut state).to_le_bytes();
                chunk.copy_from_slice(&word[..chunk.len()]);
            }
        }
    })
}

/// Copies input `i` into output `i` (truncating or zero-padding).
pub fn identity_kernel() -> KernelFn {
    Arc::new(|ins: &[&[u8]], _scalars: &[i64], outs: &mut [Vec<u8>]| {
        for (input, out) in ins.iter().zip(outs.iter_mut()) {
            let n = input.len().min(out.len());
            out[..n].copy_from_slice(&input[..n]);
            out[n..].fill(0);
        }
    })
}

#[derive(Clone, Default)]
pub struct KernelRegistry {
    kernels: HashMap<KernelId, KernelFn>,
}

impl KernelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry where each name maps to a mixer keyed by the name's hash.
    pub fn with_mixers<'a>(names: impl IntoIterator<Item = &'a str>) -> Self {
        let mut reg = KernelRegistry::new();
        for name in names {
            let id = KernelId::new(name);
            if !reg.contains(&id) {
                reg.kernels.insert(id, keyed_mixer(fnv1a(name.as_bytes())));
            }
        }
        reg
    }

    pub fn register(&mut self, id: KernelId, f: KernelFn) -> Result<(), RuntimeError> {
        if self.kernels.contains_key(&id) {
            return Err(RuntimeError::DuplicateKernelId(id));
        }
        self.kernels.insert(id, f);
        Ok(())
    }

    pub fn contains(&self, id: &KernelId) -> bool {
        self.kernels.contains_key(id)
    }

    pub fn get(&self, id: &KernelId) -> Option<&KernelFn> {
        self.kernels.get(id)
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }
}

impl fmt::Debug for KernelRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names: Vec<_> = self.kernels.keys().map(KernelId::as_str).collect();
        names.sort_unstable();
        f.debug_struct("KernelRegistry").field("kernels", &names).finish()
    }
}

/// Monotonic bump allocator; never frees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BumpAllocator {
    next: u64,
}

impl Default for BumpAllocator {
    fn default() -> Self {
        BumpAllocator { next: ALLOC_BASE }
    }
}

impl BumpAllocator {
    pub fn alloc(&mut self, size: u64) -> MemRegion {
        let region = MemRegion::new(self.next, size);
        let padded = size.div_ceil(ALLOC_ALIGN).max(1) * ALLOC_ALIGN;
        self.next += padded;
        region
    }

    pub fn next_base(&self) -> u64 {
        self.next
    }
}

/// State of the simulated device.
#[derive(Clone, Debug, Default)]
pub struct DeviceState {
    memory: BTreeMap<u64, Vec<u8>>,
    allocator: BumpAllocator,
    last_error: Status,
    kernels: KernelRegistry,
}


impl DeviceState {
    pub fn new(kernels: KernelRegistry) -> Self {
        DeviceState {
            kernels,
            ..Default::default()
        }
    }

    pub fn register_kernel(&mut self, id: KernelId, f: KernelFn) -> Result<(), RuntimeError> {
        self.kernels.register(id, f)
    }

    pub fn kernels(&self) -> &KernelRegistry {
        &self.kernels
    }

    pub fn memory(&self) -> &BTreeMap<u64, Vec<u8>> {
        &self.memory
    }

    pub fn next_alloc_base(&self) -> u64 {
        self.allocator.next_base()
    }

    pub fn set_last_error(&mut self, status: Status) {
        self.last_error = status;
    }

    pub fn last_error(&self) -> Status {
        self.last_error
    }

    /// Bytes of `region`, if it lies inside an allocation.
    pub fn read(&self, region: MemRegion) -> Result<&[u8], RuntimeError> {
        let (base, buf) = self
            .memory
            .range(..=region.base)
            .next_back()
            .ok_or(RuntimeError::UnallocatedRegion(region))?;
        let off = region.base - base;
        if region.size == 0 || off + region.size > buf.len() as u64 {
            return Err(RuntimeError::UnallocatedRegion(region));
        }
        Ok(&buf[off as usize..(off + region.size) as usize])
    }

    /// Overwrites `region`, which must lie inside an allocation.
    pub fn write(&mut self, region: MemRegion, bytes: &[u8]) -> Result<(), RuntimeError> {
        if bytes.len() as u64 != region.size {
            return Err(RuntimeError::RegionSizeMismatch {
                expected: region.size,
                actual: bytes.len() as u64,
            });
        }
        self.read(region)?;
        let (base, buf) = self
            .memory
            .range_mut(..=region.base)
            .next_back()
            .expect("checked by read");
        let off = (region.base - base) as usize;
        buf[off..off + bytes.len()].copy_from_slice(bytes);
        Ok(())
    }

    /// Executes one call. Failures also latch into the error returned by the
    /// next `GetLastError`.
    pub fn execute(&mut self, call: &ApiCall) -> Result<ReturnValue, RuntimeError> {
        let result = self.execute_inner(call);
        if let Err(e) = &result {
            self.last_error = Status::ErrorCode(e.code());
        }
        result
    }

    /// Like [`DeviceState::execute`] but folds errors into an error status.
    pub fn execute_call(&mut self, call: &ApiCall) -> ReturnValue {
        match self.execute(call) {
            Ok(ret) => ret,
            Err(e) => ReturnValue::error(e.code()),
        }
    }

    fn single<'a>(
        func: ApiKind,
        regions: &'a [MemRegion],
        what: &str,
    ) -> Result<&'a MemRegion, RuntimeError> {
        match regions {
            [r] => Ok(r),
            _ => Err(RuntimeError::InvalidArguments {
                func,
                reason: format!("expected exactly one {what} region, got {}", regions.len()),
            }),
        }
    }

    fn execute_inner(&mut self, call: &ApiCall) -> Result<ReturnValue, RuntimeError> {
        let args = &call.args;
        match call.func {
            ApiKind::GetDevice => Ok(ReturnValue::success()),
            ApiKind::GetLastError => {
                let status = std::mem::take(&mut self.last_error);
                Ok(ReturnValue {
                    status,
                    payload: None,
                })
            }
            ApiKind::StreamSynchronize | ApiKind::StreamIsCapturing => Ok(ReturnValue::success()),
            ApiKind::Malloc => {
                let size = match args.scalars.first() {
                    Some(&s) if s > 0 => s as u64,
                    _ => {
                        return Err(RuntimeError::InvalidArguments {
                            func: call.func,
                            reason: "allocation size must be positive".into(),
                        })
                    }
                };
                let region = self.allocator.alloc(size);
                self.memory.insert(region.base, vec![0u8; size as usize]);
                Ok(ReturnValue::with_bytes(region.base.to_le_bytes().to_vec()))
            }
            ApiKind::MemcpyHtoD => {
                let dst = *Self::single(call.func, &args.out_regions, "output")?;
                let data = call.input.as_deref().unwrap_or(&[]);
                if args.payload_size != dst.size {
                    return Err(RuntimeError::RegionSizeMismatch {
                        expected: dst.size,
                        actual: args.payload_size,
                    });
                }
                self.write(dst, data)?;
                Ok(ReturnValue::success())
            }
            ApiKind::MemcpyDtoH => {
                let src = *Self::single(call.func, &args.in_regions, "input")?;
                let bytes = self.read(src)?.to_vec();
                Ok(ReturnValue::with_bytes(bytes))
            }
            ApiKind::MemcpyDtoD => {
                let src = *Self::single(call.func, &args.in_regions, "input")?;
                let dst = *Self::single(call.func, &args.out_regions, "output")?;
                if src.size != dst.size {
                    return Err(RuntimeError::RegionSizeMismatch {
                        expected: dst.size,
                        actual: src.size,
                    });
                }
                let bytes = self.read(src)?.to_vec();
                self.write(dst, &bytes)?;
                Ok(ReturnValue::success())
            }
            ApiKind::LaunchKernel => {
                let id = call.kernel.as_ref().ok_or_else(|| RuntimeError::InvalidArguments {
                    func: call.func,
                    reason: "missing kernel id".into(),
                })?;
                let f = self
                    .kernels
                    .get(id)
                    .cloned()
                    .ok_or_else(|| RuntimeError::UnknownKernel(id.clone()))?;
                let inputs = args
                    .in_regions
                    .iter()
                    .map(|r| self.read(*r).map(<[u8]>::to_vec))
                    .collect::<Result<Vec<_>, _>>()?;
                let mut outputs = args
                    .out_regions
                    .iter()
                    .map(|r| self.read(*r).map(<[u8]>::to_vec))
                    .collect::<Result<Vec<_>, _>>()?;
                let views: Vec<&[u8]> = inputs.iter().map(Vec::as_slice).collect();
                f(&views, &args.scalars, &mut outputs);
                for (region, bytes) in args.out_regions.iter().zip(&outputs) {
                    self.write(*region, bytes)?;
                }
                Ok(ReturnValue::success())
            }
        }
    }
}

/// Modeled execution time per call kind, in nanoseconds.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CostTable(pub BTreeMap<ApiKind, u64>);

impl CostTable {
    pub fn get(&self, kind: ApiKind) -> u64 {
        self.0.get(&kind).copied().unwrap_or(0)
    }

    pub fn set(&mut self, kind: ApiKind, ns: u64) {
        self.0.insert(kind, ns);
    }

    pub fn from_pairs(pairs: &[(ApiKind, u64)]) -> Self {
        CostTable(pairs.iter().copied().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn device() -> DeviceState {
        DeviceState::new(KernelRegistry::with_mixers(["mix64", "k2"]))
    }

    fn addr(ret: &ReturnValue) -> u64 {
        u64::from_le_bytes(ret.bytes().unwrap().try_into().unwrap())
    }

    #[test]
    fn register_twice_is_rejected() {
        let mut reg = KernelRegistry::new();
        reg.register("mix64".into(), keyed_mixer(1)).unwrap();
        assert_eq!(
            reg.register("mix64".into(), keyed_mixer(1)),
            Err(RuntimeError::DuplicateKernelId("mix64".into()))
        );
    }

    #[test]
    fn identity_kernel_copies() {
        let mut dev = DeviceState::default();
        dev.register_kernel("identity".into(), identity_kernel()).unwrap();
        let a = addr(&dev.execute(&ApiCall::malloc(16)).unwrap());
        let b = addr(&dev.execute(&ApiCall::malloc(16)).unwrap());
        let (ra, rb) = (MemRegion::new(a, 16), MemRegion::new(b, 16));
        let data: Vec<u8> = (0..16).collect();
        dev.execute(&ApiCall::htod(ra, data.clone())).unwrap();
        dev.execute(&ApiCall::launch("identity", vec![], vec![ra], vec![rb]))
            .unwrap();
        assert_eq!(dev.read(rb).unwrap(), &data[..]);
    }

    #[test]
    fn malloc_is_a_deterministic_bump() {
        let mut dev = device();
        let a = addr(&dev.execute(&ApiCall::malloc(64)).unwrap());
        let b = addr(&dev.execute(&ApiCall::malloc(64)).unwrap());
        assert_eq!(a, ALLOC_BASE);
        assert_eq!(b, ALLOC_BASE + 256);
        let mut again = device();
        assert_eq!(addr(&again.execute(&ApiCall::malloc(64)).unwrap()), a);
    }

    #[test]
    fn htod_dtoh_round_trip() {
        let mut dev = device();
        let r = MemRegion::new(addr(&dev.execute(&ApiCall::malloc(8)).unwrap()), 8);
        let p = b"payload!".to_vec();
        assert_eq!(dev.execute(&ApiCall::htod(r, p.clone())).unwrap(), ReturnValue::success());
        assert_eq!(dev.execute(&ApiCall::dtoh(r)).unwrap().bytes(), Some(&p[..]));
    }

    #[test]
    fn sub_regions_of_an_allocation_are_addressable() {
        let mut dev = device();
        let base = addr(&dev.execute(&ApiCall::malloc(1024)).unwrap());
        let r = MemRegion::new(base + 512, 4);
        dev.execute(&ApiCall::htod(r, vec![1, 2, 3, 4])).unwrap();
        assert_eq!(dev.read(r).unwrap(), &[1, 2, 3, 4]);
        let past_end = MemRegion::new(base + 1022, 4);
        assert_eq!(
            dev.execute(&ApiCall::dtoh(past_end)),
            Err(RuntimeError::UnallocatedRegion(past_end))
        );
    }

    #[test]
    fn errors_latch_into_get_last_error() {
        let mut dev = device();
        let r = MemRegion::new(ALLOC_BASE, 8);
        let ret = dev.execute_call(&ApiCall::launch("nope", vec![], vec![r], vec![r]));
        assert_eq!(ret.status, Status::ErrorCode(98));
        let err = dev.execute(&ApiCall::get_last_error()).unwrap();
        assert_eq!(err.status, Status::ErrorCode(98));
        let cleared = dev.execute(&ApiCall::get_last_error()).unwrap();
        assert_eq!(cleared.status, Status::Success);
    }

    #[test]
    fn size_mismatch_and_unallocated() {
        let mut dev = device();
        let r = MemRegion::new(addr(&dev.execute(&ApiCall::malloc(8)).unwrap()), 8);
        let mut call = ApiCall::htod(r, vec![0; 4]);
        assert!(matches!(
            dev.execute(&call),
            Err(RuntimeError::RegionSizeMismatch { expected: 8, actual: 4 })
        ));
        call.args.out_regions[0].base = 0x10;
        call.args.out_regions[0].size = 4;
        call.args.payload_size = 4;
        assert!(matches!(dev.execute(&call), Err(RuntimeError::UnallocatedRegion(_))));
    }

    #[test]
    fn all_kinds_replay_bit_identically() {
        let run = || {
            let mut dev = device();
            let base = addr(&dev.execute(&ApiCall::malloc(64)).unwrap());
            let (a, b, c) = (
                MemRegion::new(base, 16),
                MemRegion::new(base + 16, 16),
                MemRegion::new(base + 32, 16),
            );
            let calls = vec![
                ApiCall::get_device(),
                ApiCall::is_capturing(),
                ApiCall::htod(a, (0..16).collect()),
                ApiCall::launch("mix64", vec![3, 4], vec![a], vec![b]),
                ApiCall::get_last_error(),
                ApiCall::dtod(b, c),
                ApiCall::launch("k2", vec![], vec![b, c], vec![a]),
                ApiCall::synchronize(),
                ApiCall::dtoh(a),
            ];
            let rets: Vec<_> = calls.iter().map(|c| dev.execute(c).unwrap()).collect();
            (rets, dev.memory().clone())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn kernels_only_touch_out_regions() {
        let mut dev = device();
        let base = addr(&dev.execute(&ApiCall::malloc(48)).unwrap());
        let (a, b, c) = (
            MemRegion::new(base, 16),
            MemRegion::new(base + 16, 16),
            MemRegion::new(base + 32, 16),
        );
        dev.execute(&ApiCall::htod(a, vec![7; 16])).unwrap();
        dev.execute(&ApiCall::htod(c, vec![9; 16])).unwrap();
        let before = dev.read(MemRegion::new(base, 48)).unwrap().to_vec();
        dev.execute(&ApiCall::launch("mix64", vec![1], vec![a], vec![b])).unwrap();
        let after = dev.read(MemRegion::new(base, 48)).unwrap().to_vec();
        assert_eq!(before[..16], after[..16]);
        assert_eq!(before[32..], after[32..]);
        assert_ne!(before[16..32], after[16..32]);
    }

    #[test]
    fn mixer_depends_on_inputs_scalars_and_key() {
        let run = |key: u64, input: &[u8], scalars: &[i64]| {
            let f = keyed_mixer(key);
            let mut out = vec![vec![0u8; 32]];
            f(&[input], scalars, &mut out);
            out.remove(0)
        };
        let base = run(1, &[1, 2, 3], &[5]);
        assert_ne!(base, run(2, &[1, 2, 3], &[5]));
        assert_ne!(base, run(1, &[1, 2, 4], &[5]));
        assert_ne!(base, run(1, &[1, 2, 3], &[6]));
        assert_eq!(base, run(1, &[1, 2, 3], &[5]));
    }
}
