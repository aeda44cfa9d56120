//! Deterministic application call streams.
//!
//! A [`WorkloadProfile`] describes three phases: model loading, one
//! initializing inference and the steady per-inference window. Each phase is
//! either an explicit ordered template or a per-kind composition that is
//! ordered deterministically from the profile seed. Memory lives in a single
//! arena allocated by the first `Malloc` of the loading phase:
//!
//! ```text
//! | input slots | parameter buffers | activation ring |
//! ```
//!
//! Uploads in an inference fill input slots, kernels read the pending inputs,
//! the latest activation and one parameter buffer and write the next ring
//! slot, device-to-device copies move the latest activation to the next slot
//! and downloads read the latest activation (or the latest upload before any
//! activation exists). The ring restarts at every inference, so every
//! inference touches the same addresses.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runtime::{
    ApiCall, ApiKind, CostTable, DeviceState, KernelRegistry, MemRegion, ALLOC_BASE,
};
use crate::trace::TraceLog;

const SCRATCH_ALLOC: u64 = 256;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("unknown workload `{0}` (not bundled and no such file)")]
    Unknown(String),
    #[error("profile {profile}: {reason}")]
    Invalid { profile: String, reason: String },
    #[error("bad template step `{0}`")]
    BadStep(String),
    #[error("profile json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One phase: an explicit template or a composition, not both.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    /// Steps such as `MemcpyHtoD` or `LaunchKernel:conv`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub template: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub composition: BTreeMap<ApiKind, usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadProfile {
    pub name: String,
    /// Drives the ordering of composed phases.
    #[serde(default)]
    pub seed: u64,
    pub input_size: u64,
    /// Size of parameter buffers, activations and downloads.
    pub output_size: u64,
    #[serde(default = "default_params")]
    pub params: usize,
    #[serde(default = "default_ring")]
    pub ring_slots: usize,
    /// Kernel names used round-robin by composed phases.
    #[serde(default)]
    pub kernels: Vec<String>,
    pub loading: PhaseSpec,
    #[serde(default)]
    pub init: PhaseSpec,
    #[serde(rename = "loop")]
    pub loop_inference: PhaseSpec,
    #[serde(default)]
    pub device_costs: Option<CostTable>,
    #[serde(default)]
    pub server_costs: Option<CostTable>,
}

fn default_params() -> usize {
    4
}

fn default_ring() -> usize {
    8
}

const BUNDLED: &[(&str, &str)] = &[
    ("tiny3", include_str!("../profiles/tiny3.json")),
    ("kapao", include_str!("../profiles/kapao.json")),
    ("multicopy", include_str!("../profiles/multicopy.json")),
    ("resnet_s", include_str!("../profiles/resnet_s.json")),
    ("deeplab_s", include_str!("../profiles/deeplab_s.json")),
];

/// Names of the profiles shipped with the crate.
pub fn bundled_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

/// Cost of each call on the server, in nanoseconds.
pub fn default_server_costs() -> CostTable {
    use ApiKind::*;
    CostTable::from_pairs(&[
        (GetDevice, 1_000),
        (GetLastError, 1_000),
        (LaunchKernel, 50_000),
        (Malloc, 20_000),
        (StreamIsCapturing, 1_000),
        (StreamSynchronize, 10_000),
        (MemcpyHtoD, 10_000),
        (MemcpyDtoH, 10_000),
        (MemcpyDtoD, 20_000),
    ])
}

/// Cost of each call on the client device, in nanoseconds.
pub fn default_device_costs() -> CostTable {
    use ApiKind::*;
    CostTable::from_pairs(&[
        (GetDevice, 2_000),
        (GetLastError, 2_000),
        (LaunchKernel, 240_000),
        (Malloc, 50_000),
        (StreamIsCapturing, 2_000),
        (StreamSynchronize, 20_000),
        (MemcpyHtoD, 100_000),
        (MemcpyDtoH, 100_000),
        (MemcpyDtoD, 60_000),
    ])
}

impl WorkloadProfile {
    pub fn bundled(name: &str) -> Option<WorkloadProfile> {
        let (_, json) = BUNDLED.iter().find(|(n, _)| *n == name)?;
        Some(serde_json::from_str(json).expect("bundled profiles parse"))
    }

    pub fn from_json(json: &str) -> Result<WorkloadProfile, WorkloadError> {
        Ok(serde_json::from_str(json)?)
    }

    /// A bundled profile by name, or else a profile file.
    pub fn load(name_or_path: &str) -> Result<WorkloadProfile, WorkloadError> {
        if let Some(p) = WorkloadProfile::bundled(name_or_path) {
            return Ok(p);
        }
        let path = Path::new(name_or_path);
        if !path.exists() {
            return Err(WorkloadError::Unknown(name_or_path.into()));
        }
        WorkloadProfile::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profiles serialize")
    }

    pub fn device_costs(&self) -> CostTable {
        self.device_costs.clone().unwrap_or_else(default_device_costs)
    }

    pub fn server_costs(&self) -> CostTable {
        self.server_costs.clone().unwrap_or_else(default_server_costs)
    }

    fn invalid(&self, reason: impl Into<String>) -> WorkloadError {
        WorkloadError::Invalid {
            profile: self.name.clone(),
            reason: reason.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Step {
    pub func: ApiKind,
    pub kernel: Option<String>,
}

impl Step {
    fn of(func: ApiKind) -> Step {
        Step { func, kernel: None }
    }

    pub fn parse(s: &str) -> Result<Step, WorkloadError> {
        let (kind, kernel) = match s.split_once(':') {
            Some((k, name)) => (k, Some(name.to_string())),
            None => (s, None),
        };
        let func = ApiKind::parse(kind.trim()).ok_or_else(|| WorkloadError::BadStep(s.into()))?;
        if (func == ApiKind::LaunchKernel) != kernel.is_some() {
            return Err(WorkloadError::BadStep(s.into()));
        }
        Ok(Step { func, kernel })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PhaseKind {
    Loading,
    Inference,
}

fn composition_of(steps: &[Step]) -> BTreeMap<ApiKind, usize> {
    let mut c: BTreeMap<ApiKind, usize> = ApiKind::ALL.iter().map(|&k| (k, 0)).collect();
    for s in steps {
        *c.get_mut(&s.func).unwrap() += 1;
    }
    c
}

/// Inserts `extras` at random unit boundaries.
fn scatter(units: &mut Vec<Vec<Step>>, extras: Vec<Step>, first_slot: usize, rng: &mut ChaCha8Rng) {
    let n = units.len();
    let mut placed: Vec<(usize, Step)> = extras
        .into_iter()
        .map(|s| (rng.gen_range(first_slot.min(n)..=n), s))
        .collect();
    placed.sort_by_key(|(slot, _)| *slot);
    let mut merged = Vec::with_capacity(n + placed.len());
    let mut it = placed.into_iter().peekable();
    for (i, unit) in std::mem::take(units).into_iter().enumerate() {
        while let Some((_, s)) = it.next_if(|(slot, _)| *slot == i) {
            merged.push(vec![s]);
        }
        merged.push(unit);
    }
    merged.extend(it.map(|(_, s)| vec![s]));
    *units = merged;
}

/// Orders a composition. Bookkeeping calls are spread around kernel
/// launches, each launch followed by one `GetLastError` while they last.
fn compose(
    profile: &WorkloadProfile,
    counts: &BTreeMap<ApiKind, usize>,
    kind: PhaseKind,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Step>, WorkloadError> {
    use ApiKind::*;
    let n = |k: ApiKind| counts.get(&k).copied().unwrap_or(0);
    let n_kernels = n(LaunchKernel);
    if n_kernels > 0 && profile.kernels.is_empty() {
        return Err(profile.invalid("composed phases with launches need `kernels`"));
    }
    let kernel = |i: usize| Step {
        func: LaunchKernel,
        kernel: Some(profile.kernels[i % profile.kernels.len()].clone()),
    };
    let mut syncs = n(StreamSynchronize);
    let mut take_sync = |unit: &mut Vec<Step>| {
        if syncs > 0 {
            syncs -= 1;
            unit.push(Step::of(StreamSynchronize));
        }
    };

    let mut prefix = Vec::new();
    let mut suffix = Vec::new();
    let mut units: Vec<Vec<Step>> = Vec::new();
    let mut downloads = n(MemcpyDtoH);
    match kind {
        PhaseKind::Loading => {
            if n(Malloc) == 0 {
                return Err(profile.invalid("loading needs at least one Malloc for the arena"));
            }
            prefix.extend(std::iter::repeat_n(Step::of(Malloc), n(Malloc)));
            for _ in 0..n(MemcpyHtoD) {
                let mut unit = vec![Step::of(MemcpyHtoD)];
                take_sync(&mut unit);
                units.push(unit);
            }
        }
        PhaseKind::Inference => {
            if n(MemcpyHtoD) == 0 || downloads == 0 {
                return Err(profile.invalid("an inference needs an upload and a download"));
            }
            prefix.extend(std::iter::repeat_n(Step::of(MemcpyHtoD), n(MemcpyHtoD)));
            suffix.push(Step::of(MemcpyDtoH));
            take_sync(&mut suffix);
            downloads -= 1;
            units.extend(std::iter::repeat_n(vec![Step::of(Malloc)], n(Malloc)));
        }
    }
    for _ in 0..downloads {
        let mut unit = vec![Step::of(MemcpyDtoH)];
        take_sync(&mut unit);
        units.push(unit);
    }
    let mut errors = n(GetLastError);
    for i in 0..n_kernels {
        let mut unit = vec![kernel(i)];
        if errors > 0 {
            errors -= 1;
            unit.push(Step::of(GetLastError));
        }
        units.push(unit);
    }
    units.extend(std::iter::repeat_n(vec![Step::of(MemcpyDtoD)], n(MemcpyDtoD)));
    units.extend(std::iter::repeat_n(vec![Step::of(StreamIsCapturing)], n(StreamIsCapturing)));
    units.shuffle(rng);
    if kind == PhaseKind::Inference {
        if let Some(first) = units.iter().position(|u| u[0].func == LaunchKernel) {
            units.swap(0, first);
        }
        suffix.extend(std::iter::repeat_n(Step::of(StreamSynchronize), syncs));
    } else {
        units.extend(std::iter::repeat_n(vec![Step::of(StreamSynchronize)], syncs));
    }
    let mut extras: Vec<Step> = std::iter::repeat_n(Step::of(GetDevice), n(GetDevice)).collect();
    extras.extend(std::iter::repeat_n(Step::of(GetLastError), errors));
    scatter(&mut units, extras, 1, rng);

    let mut steps = prefix;
    steps.extend(units.into_iter().flatten());
    steps.extend(suffix);
    Ok(steps)
}

fn realize(
    profile: &WorkloadProfile,
    spec: &PhaseSpec,
    kind: PhaseKind,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Step>, WorkloadError> {
    match (spec.template.is_empty(), spec.composition.is_empty()) {
        (_, true) => spec.template.iter().map(|s| Step::parse(s)).collect(),
        (true, false) => compose(profile, &spec.composition, kind, rng),
        (false, false) => Err(profile.invalid("a phase has either a template or a composition")),
    }
}

/// Duplicates the first kernel launch of a window.
pub fn mutate(steps: &[Step]) -> Vec<Step> {
    let mut out = steps.to_vec();
    if let Some(i) = out.iter().position(|s| s.func == ApiKind::LaunchKernel) {
        let dup = out[i].clone();
        out.insert(i + 1, dup);
    }
    out
}

/// Where every buffer of a profile lives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub inputs: Vec<MemRegion>,
    pub params: Vec<MemRegion>,
    pub ring: Vec<MemRegion>,
}

impl Layout {
    fn new(profile: &WorkloadProfile, input_slots: usize) -> Layout {
        let mut next = ALLOC_BASE;
        let mut take = |size: u64| {
            let r = MemRegion::new(next, size);
            next += size;
            r
        };
        let inputs = (0..input_slots).map(|_| take(profile.input_size)).collect();
        let params = (0..profile.params).map(|_| take(profile.output_size)).collect();
        let ring = (0..profile.ring_slots).map(|_| take(profile.output_size)).collect();
        Layout { inputs, params, ring }
    }

    pub fn arena_size(&self) -> u64 {
        let last = self.ring.last().or(self.params.last()).or(self.inputs.last());
        last.map_or(0, |r| r.end() - ALLOC_BASE)
    }
}

/// Turns ordered steps into calls. Upload payloads are left empty.
fn assign(steps: &[Step], layout: &Layout, kind: PhaseKind) -> Vec<ApiCall> {
    let mut calls = Vec::with_capacity(steps.len());
    let mut pending: Vec<MemRegion> = Vec::new();
    let mut last: Option<MemRegion> = None;
    let mut last_upload: Option<MemRegion> = None;
    let mut slot = 0usize;
    let mut uploads = 0usize;
    let mut launches = 0usize;
    let mut arena_done = false;
    let ring = layout.ring.len();
    for step in steps {
        let call = match step.func {
            ApiKind::Malloc if !arena_done && kind == PhaseKind::Loading => {
                arena_done = true;
                ApiCall::malloc(layout.arena_size())
            }
            ApiKind::Malloc => ApiCall::malloc(SCRATCH_ALLOC),
            ApiKind::MemcpyHtoD => {
                let dst = match kind {
                    PhaseKind::Loading => layout.params[uploads % layout.params.len()],
                    PhaseKind::Inference => {
                        let r = layout.inputs[uploads];
                        pending.push(r);
                        r
                    }
                };
                uploads += 1;
                last_upload = Some(dst);
                ApiCall::htod(dst, Vec::new())
            }
            ApiKind::LaunchKernel => {
                let mut ins = std::mem::take(&mut pending);
                ins.extend(last);
                ins.push(layout.params[launches % layout.params.len()]);
                let out = layout.ring[slot % ring];
                slot += 1;
                last = Some(out);
                let call = ApiCall::launch(
                    step.kernel.clone().expect("launch steps carry a kernel").as_str(),
                    vec![launches as i64],
                    ins,
                    vec![out],
                );
                launches += 1;
                call
            }
            ApiKind::MemcpyDtoD => {
                let src = last.unwrap_or(layout.params[0]);
                let dst = layout.ring[slot % ring];
                slot += 1;
                last = Some(dst);
                ApiCall::dtod(src, dst)
            }
            ApiKind::MemcpyDtoH => ApiCall::dtoh(last.or(last_upload).unwrap_or(layout.params[0])),
            ApiKind::GetDevice => ApiCall::get_device(),
            ApiKind::GetLastError => ApiCall::get_last_error(),
            ApiKind::StreamSynchronize => ApiCall::synchronize(),
            ApiKind::StreamIsCapturing => ApiCall::is_capturing(),
        };
        calls.push(call);
    }
    calls
}

/// How the window changes over the inferences of a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Static,
    /// Inferences `mutate_at..` (1-based) use the mutated window.
    MutateAt(usize),
    /// The mutated window is used on the odd terms of the Thue–Morse
    /// sequence, which never repeats a block three times in a row.
    Alternating,
}

impl Variant {
    fn mutated(self, inference: usize) -> bool {
        match self {
            Variant::Static => false,
            Variant::MutateAt(m) => inference >= m,
            Variant::Alternating => (inference as u64).count_ones() % 2 == 1,
        }
    }
}

/// A profile with its phases ordered and laid out.
#[derive(Clone, Debug)]
pub struct Workload {
    pub profile: WorkloadProfile,
    pub layout: Layout,
    loading: Vec<ApiCall>,
    init: Vec<ApiCall>,
    window: Vec<ApiCall>,
    mutated: Vec<ApiCall>,
    loop_steps: Vec<Step>,
}

impl Workload {
    pub fn new(profile: WorkloadProfile) -> Result<Workload, WorkloadError> {
        if profile.input_size == 0 || profile.output_size == 0 {
            return Err(profile.invalid("sizes must be positive"));
        }
        if profile.params == 0 || profile.ring_slots < 2 {
            return Err(profile.invalid("need a parameter buffer and two ring slots"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
        let loading = realize(&profile, &profile.loading, PhaseKind::Loading, &mut rng)?;
        let init = realize(&profile, &profile.init, PhaseKind::Inference, &mut rng)?;
        let window = realize(&profile, &profile.loop_inference, PhaseKind::Inference, &mut rng)?;
        if loading.first().map(|s| s.func) != Some(ApiKind::Malloc) {
            return Err(profile.invalid("loading must start with the arena Malloc"));
        }
        if window.first().map(|s| s.func) != Some(ApiKind::MemcpyHtoD) {
            return Err(profile.invalid("the loop window must start with MemcpyHtoD"));
        }
        let tail = window.iter().rev().find(|s| s.func != ApiKind::StreamSynchronize);
        if tail.map(|s| s.func) != Some(ApiKind::MemcpyDtoH) {
            return Err(profile.invalid("the loop window must end with MemcpyDtoH and syncs"));
        }
        if !init.is_empty() && init[0].func != ApiKind::MemcpyHtoD {
            return Err(profile.invalid("the initializing inference must start with MemcpyHtoD"));
        }
        let uploads = |s: &[Step]| s.iter().filter(|s| s.func == ApiKind::MemcpyHtoD).count();
        let layout = Layout::new(&profile, uploads(&init).max(uploads(&window)));
        let mutated_steps = mutate(&window);
        Ok(Workload {
            loading: assign(&loading, &layout, PhaseKind::Loading),
            init: assign(&init, &layout, PhaseKind::Inference),
            mutated: assign(&mutated_steps, &layout, PhaseKind::Inference),
            window: assign(&window, &layout, PhaseKind::Inference),
            loop_steps: window,
            layout,
            profile,
        })
    }

    pub fn load(name_or_path: &str) -> Result<Workload, WorkloadError> {
        Workload::new(WorkloadProfile::load(name_or_path)?)
    }

    /// The steady window as ordered steps.
    pub fn loop_steps(&self) -> &[Step] {
        &self.loop_steps
    }

    pub fn loop_composition(&self) -> BTreeMap<ApiKind, usize> {
        composition_of(&self.loop_steps)
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn kernel_names(&self) -> BTreeSet<String> {
        [&self.loading, &self.init, &self.window, &self.mutated]
            .into_iter()
            .flatten()
            .filter_map(|c| c.kernel.as_ref().map(|k| k.0.clone()))
            .collect()
    }

    pub fn registry(&self) -> KernelRegistry {
        let names = self.kernel_names();
        KernelRegistry::with_mixers(names.iter().map(String::as_str))
    }

    /// A fresh device with this workload's kernels.
    pub fn device(&self) -> DeviceState {
        DeviceState::new(self.registry())
    }

    /// Generates a full stream of `n` steady inferences after loading and
    /// initialization. Payloads derive from `seed`.
    pub fn stream(&self, n: usize, seed: u64, variant: Variant) -> CallStream {
        let mut loading = self.loading.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        fill_uploads(&mut loading, &mut rng);
        let mut init = self.init.clone();
        fill_uploads(&mut init, &mut rng);
        let inferences = (1..=n)
            .map(|k| {
                let base = if variant.mutated(k) { &self.mutated } else { &self.window };
                let mut calls = base.clone();
                fill_uploads(&mut calls, &mut ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)));
                calls
            })
            .collect();
        CallStream {
            loading,
            init,
            inferences,
        }
    }
}

fn fill_uploads(calls: &mut [ApiCall], rng: &mut ChaCha8Rng) {
    for c in calls.iter_mut().filter(|c| c.func == ApiKind::MemcpyHtoD) {
        let mut bytes = vec![0u8; c.args.out_regions[0].size as usize];
        rng.fill_bytes(&mut bytes);
        c.input = Some(bytes);
    }
}

/// An application call stream split by phase.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CallStream {
    pub loading: Vec<ApiCall>,
    pub init: Vec<ApiCall>,
    pub inferences: Vec<Vec<ApiCall>>,
}

impl CallStream {
    pub fn len(&self) -> usize {
        self.loading.len() + self.init.len() + self.inferences.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn calls(&self) -> impl Iterator<Item = &ApiCall> {
        self.loading
            .iter()
            .chain(&self.init)
            .chain(self.inferences.iter().flatten())
    }
}

/// Static-window stream.
pub fn gen_sam(profile: &WorkloadProfile, n_inferences: usize, seed: u64) -> Result<CallStream, WorkloadError> {
    Ok(Workload::new(profile.clone())?.stream(n_inferences, seed, Variant::Static))
}

/// Stream whose window changes for good at inference `mutate_at` (1-based).
pub fn gen_dam(
    profile: &WorkloadProfile,
    n_inferences: usize,
    mutate_at: usize,
    seed: u64,
) -> Result<CallStream, WorkloadError> {
    if mutate_at == 0 || mutate_at > n_inferences {
        return Err(profile.invalid(format!("mutate_at {mutate_at} outside 1..={n_inferences}")));
    }
    Ok(Workload::new(profile.clone())?.stream(n_inferences, seed, Variant::MutateAt(mutate_at)))
}

/// Stream switching between two windows so that no window ever repeats
/// three times in a row.
pub fn gen_alternating(profile: &WorkloadProfile, n_inferences: usize, seed: u64) -> Result<CallStream, WorkloadError> {
    Ok(Workload::new(profile.clone())?.stream(n_inferences, seed, Variant::Alternating))
}

/// Runs `calls` on a fresh device and records them with their results.
pub fn record_locally<'a>(calls: impl IntoIterator<Item = &'a ApiCall>, device: &mut DeviceState) -> TraceLog {
    calls
        .into_iter()
        .map(|c| (c.clone(), device.execute_call(c)))
        .collect()
}

/// A random small template profile: 1–4 uploads and 1–4 downloads per
/// window, a few kernels, bookkeeping and copies.
pub fn random_profile(seed: u64) -> WorkloadProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernels = ["k0", "k1", "k2", "k3"];
    let mut body: Vec<String> = Vec::new();
    let uploads = rng.gen_range(1..=4);
    let downloads = rng.gen_range(1..=4);
    for _ in 0..uploads {
        body.push("MemcpyHtoD".into());
    }
    for d in 0..downloads {
        for _ in 0..rng.gen_range(1..=3) {
            match rng.gen_range(0..6) {
                0 => body.push("GetDevice".into()),
                1 => body.push("MemcpyDtoD".into()),
                2 => body.push("StreamIsCapturing".into()),
                _ => {
                    body.push(format!("LaunchKernel:{}", kernels.choose(&mut rng).unwrap()));
                    if rng.gen_bool(0.5) {
                        body.push("GetLastError".into());
                    }
                }
            }
        }
        body.push("MemcpyDtoH".into());
        if d + 1 == downloads || rng.gen_bool(0.5) {
            for _ in 0..rng.gen_range(0..=2) {
                body.push("StreamSynchronize".into());
            }
        }
    }
    let mut loading = vec!["Malloc".to_string(), "MemcpyHtoD".into(), "MemcpyHtoD".into()];
    for _ in 0..rng.gen_range(0..6) {
        loading.push(
            ["GetDevice", "LaunchKernel:k0", "StreamSynchronize", "MemcpyHtoD", "MemcpyDtoH"]
                .choose(&mut rng)
                .unwrap()
                .to_string(),
        );
    }
    let init = if rng.gen_bool(0.5) {
        let mut init = body.clone();
        let at = rng.gen_range(uploads..init.len());
        init.insert(at, "GetDevice".into());
        init
    } else {
        Vec::new()
    };
    WorkloadProfile {
        name: format!("random-{seed}"),
        seed,
        input_size: 32,
        output_size: 32,
        params: 2,
        ring_slots: 3,
        kernels: Vec::new(),
        loading: PhaseSpec {
            template: loading,
            ..PhaseSpec::default()
        },
        init: PhaseSpec {
            template: init,
            ..PhaseSpec::default()
        },
        loop_inference: PhaseSpec {
            template: body,
            ..PhaseSpec::default()
        },
        device_costs: None,
        server_costs: None,
    }
}
