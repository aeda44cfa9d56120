//! Operator sequence search.
//!
//! Finds the contiguous window of calls that one inference issues, using only
//! the call log: candidate windows are anchored on host/device copy
//! boundaries, pruned by a cheap repetition count over tags, then verified by
//! a data-dependency check and an exact record-level repetition count.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::runtime::{ApiKind, MemRegion};
use crate::trace::{tag_of, OperatorInfo, Tag, TagMode, TraceLog};

pub mod oracle;

pub use oracle::oracle_search;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AddressMatch {
    /// Regions must be identical between repeats.
    #[default]
    Literal,
    /// Regions may be renamed between repeats, as long as the renaming is a
    /// consistent bijection within the compared pair of windows.
    AliasMap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OssConfig {
    /// Minimum number of consecutive repeats (at least 2).
    pub repeats: usize,
    pub tag_mode: TagMode,
    pub address_match: AddressMatch,
}

impl Default for OssConfig {
    fn default() -> Self {
        OssConfig {
            repeats: 3,
            tag_mode: TagMode::Fine,
            address_match: AddressMatch::Literal,
        }
    }
}

impl OssConfig {
    pub fn with_repeats(repeats: usize) -> Self {
        OssConfig {
            repeats: repeats.max(2),
            ..Default::default()
        }
    }
}

/// Location of a found window inside a log.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub start: usize,
    pub period: usize,
}

impl SearchHit {
    pub fn end(&self) -> usize {
        self.start + self.period - 1
    }
}

/// The per-inference window of calls.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InferenceOperatorSequence {
    pub start_index: usize,
    pub window: Vec<OperatorInfo>,
}

impl InferenceOperatorSequence {
    pub fn from_entries(entries: &[OperatorInfo], hit: SearchHit) -> Self {
        InferenceOperatorSequence {
            start_index: hit.start,
            window: entries[hit.start..hit.start + hit.period].to_vec(),
        }
    }

    pub fn period(&self) -> usize {
        self.window.len()
    }

    pub fn hit(&self) -> SearchHit {
        SearchHit {
            start: self.start_index,
            period: self.window.len(),
        }
    }

    pub fn count(&self, kind: ApiKind) -> usize {
        self.window.iter().filter(|e| e.func == kind).count()
    }

    /// Per-kind counts, in `ApiKind::ALL` order.
    pub fn composition(&self) -> BTreeMap<ApiKind, usize> {
        let mut m: BTreeMap<ApiKind, usize> = ApiKind::ALL.iter().map(|k| (*k, 0)).collect();
        for e in &self.window {
            *m.entry(e.func).or_default() += 1;
        }
        m
    }

    /// Record-wise equivalence with another window.
    pub fn equivalent(&self, other: &InferenceOperatorSequence) -> bool {
        self.window.len() == other.window.len()
            && self.window.iter().zip(&other.window).all(|(a, b)| a.equivalent(b))
    }
}

/// Union of byte intervals, kept as disjoint `[start, end)` ranges.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RegionSet {
    ranges: BTreeMap<u64, u64>,
}

impl RegionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn insert(&mut self, r: MemRegion) {
        if r.size == 0 {
            return;
        }
        let (mut lo, mut hi) = (r.base, r.end());
        // Absorb every range that touches [lo, hi].
        let touching: Vec<(u64, u64)> = self
            .ranges
            .range(..=hi)
            .rev()
            .take_while(|(_, &e)| e >= lo)
            .map(|(&s, &e)| (s, e))
            .collect();
        for (s, e) in touching {
            self.ranges.remove(&s);
            lo = lo.min(s);
            hi = hi.max(e);
        }
        self.ranges.insert(lo, hi);
    }

    pub fn extend(&mut self, other: &RegionSet) {
        for (&s, &e) in &other.ranges {
            self.insert(MemRegion::new(s, e - s));
        }
    }

    pub fn covers(&self, r: MemRegion) -> bool {
        match self.ranges.range(..=r.base).next_back() {
            Some((_, &e)) => r.end() <= e,
            None => false,
        }
    }

    pub fn overlaps(&self, r: MemRegion) -> bool {
        if r.size == 0 {
            return false;
        }
        self.ranges
            .range(..r.end())
            .next_back()
            .is_some_and(|(_, &e)| e > r.base)
    }
}

/// Where a window operator's inputs may come from.
#[derive(Clone, Debug, Default)]
pub struct DependencyContext {
    /// Destinations of the window's host-to-device copies seen so far.
    pub raw_input_addrs: RegionSet,
    /// Regions written before the window and never written inside it.
    pub param_addrs: RegionSet,
    /// Outputs of earlier in-window operators.
    pub produced_addrs: RegionSet,
    window_writes: RegionSet,
}

impl DependencyContext {
    pub fn new(written_before: RegionSet, window: &[OperatorInfo]) -> Self {
        let mut window_writes = RegionSet::new();
        for e in window {
            for r in &e.args.out_regions {
                window_writes.insert(*r);
            }
        }
        DependencyContext {
            param_addrs: written_before,
            window_writes,
            ..Default::default()
        }
    }

    fn satisfied(&self, r: MemRegion) -> bool {
        self.produced_addrs.covers(r)
            || self.raw_input_addrs.covers(r)
            || (self.param_addrs.covers(r) && !self.window_writes.overlaps(r))
    }

    /// Checks one operator's inputs and then records its outputs.
    pub fn step(&mut self, op: &OperatorInfo) -> bool {
        if !op.args.in_regions.iter().all(|r| self.satisfied(*r)) {
            return false;
        }
        for r in &op.args.out_regions {
            if op.func == ApiKind::MemcpyHtoD {
                self.raw_input_addrs.insert(*r);
            } else {
                self.produced_addrs.insert(*r);
            }
        }
        true
    }
}

/// Regions written by `entries`.
pub fn written_regions(entries: &[OperatorInfo]) -> RegionSet {
    let mut set = RegionSet::new();
    for e in entries {
        for r in &e.args.out_regions {
            set.insert(*r);
        }
    }
    set
}

/// Every input of every operator in `entries[start..start+length]` must come
/// from raw input, an earlier operator's output, or a parameter region
/// written before the window.
pub fn check_data_dependency(entries: &[OperatorInfo], start: usize, length: usize) -> bool {
    check_data_dependency_with(entries, start, length, &RegionSet::new())
}

/// As [`check_data_dependency`], with extra regions known to have been
/// written before the log began.
pub fn check_data_dependency_with(
    entries: &[OperatorInfo],
    start: usize,
    length: usize,
    prior_written: &RegionSet,
) -> bool {
    if start + length > entries.len() {
        return false;
    }
    let mut before = written_regions(&entries[..start]);
    before.extend(prior_written);
    let window = &entries[start..start + length];
    let mut ctx = DependencyContext::new(before, window);
    window.iter().all(|op| ctx.step(op))
}

/// Counts how many times the tag window at `start` repeats, scanning
/// backwards in steps of `length`, and compares against `repeats`.
pub fn fast_check<T: PartialEq>(tags: &[T], start: usize, length: usize, repeats: usize) -> bool {
    if length == 0 || start + length > tags.len() {
        return false;
    }
    let window = &tags[start..start + length];
    let mut count = 1;
    let mut pos = start;
    while count < repeats && pos >= length {
        pos -= length;
        if &tags[pos..pos + length] != window {
            break;
        }
        count += 1;
    }
    count >= repeats
}

fn same_args_aliased(
    a: &OperatorInfo,
    b: &OperatorInfo,
    fwd: &mut HashMap<u64, u64>,
    back: &mut HashMap<u64, u64>,
) -> bool {
    if a.func != b.func
        || a.kernel != b.kernel
        || a.args.scalars != b.args.scalars
        || a.args.payload_size != b.args.payload_size
        || a.args.in_regions.len() != b.args.in_regions.len()
        || a.args.out_regions.len() != b.args.out_regions.len()
    {
        return false;
    }
    let pairs = a
        .args
        .in_regions
        .iter()
        .zip(&b.args.in_regions)
        .chain(a.args.out_regions.iter().zip(&b.args.out_regions));
    for (ra, rb) in pairs {
        if ra.size != rb.size {
            return false;
        }
        if *fwd.entry(ra.base).or_insert(rb.base) != rb.base
            || *back.entry(rb.base).or_insert(ra.base) != ra.base
        {
            return false;
        }
    }
    true
}

fn windows_equivalent(
    entries: &[OperatorInfo],
    a: usize,
    b: usize,
    length: usize,
    mode: AddressMatch,
) -> bool {
    let (wa, wb) = (&entries[a..a + length], &entries[b..b + length]);
    match mode {
        AddressMatch::Literal => wa.iter().zip(wb).all(|(x, y)| x.equivalent(y)),
        AddressMatch::AliasMap => {
            let (mut fwd, mut back) = (HashMap::new(), HashMap::new());
            wa.iter()
                .zip(wb)
                .all(|(x, y)| same_args_aliased(x, y, &mut fwd, &mut back))
        }
    }
}

/// Exact verification of a candidate window.
///
/// The window must start at a host-to-device copy, end on an end boundary,
/// satisfy data dependencies, and repeat record-for-record at least
/// `repeats` times scanning backwards.
pub fn full_check(
    log: &TraceLog,
    start: usize,
    length: usize,
    repeats: usize,
    ends: &BTreeSet<usize>,
) -> bool {
    full_check_with(
        log.entries(),
        start,
        length,
        ends,
        &OssConfig::with_repeats(repeats),
        &RegionSet::new(),
    )
}

pub fn full_check_with(
    entries: &[OperatorInfo],
    start: usize,
    length: usize,
    ends: &BTreeSet<usize>,
    cfg: &OssConfig,
    prior_written: &RegionSet,
) -> bool {
    if length == 0 || start + length > entries.len() {
        return false;
    }
    if entries[start].func != ApiKind::MemcpyHtoD || !ends.contains(&(start + length - 1)) {
        return false;
    }
    if !check_data_dependency_with(entries, start, length, prior_written) {
        return false;
    }
    let mut count = 1;
    let mut pos = start;
    while count < cfg.repeats && pos >= length {
        pos -= length;
        if !windows_equivalent(entries, start, pos, length, cfg.address_match) {
            break;
        }
        count += 1;
    }
    count >= cfg.repeats
}

/// Searches a complete log.
pub fn operator_sequence_search(log: &TraceLog, cfg: &OssConfig) -> Option<InferenceOperatorSequence> {
    let mut search = IncrementalSearch::new(*cfg);
    for e in log.entries() {
        search.observe(e);
    }
    search
        .search(log.entries())
        .map(|hit| InferenceOperatorSequence::from_entries(log.entries(), hit))
}

/// Search state that follows a growing log.
///
/// Tags and boundary markers are maintained as entries arrive; a search is
/// only performed when the last end boundary moved since the previous one.
#[derive(Clone, Debug)]
pub struct IncrementalSearch {
    cfg: OssConfig,
    interner: HashMap<Tag, u32>,
    tags: Vec<u32>,
    starts: Vec<usize>,
    ends: BTreeSet<usize>,
    /// End of the boundary group currently open at the tail of the log.
    open_end: Option<usize>,
    searched_end: Option<usize>,
    prior_written: RegionSet,
    searches: u64,
}

impl IncrementalSearch {
    pub fn new(cfg: OssConfig) -> Self {
        IncrementalSearch {
            cfg,
            interner: HashMap::new(),
            tags: Vec::new(),
            starts: Vec::new(),
            ends: BTreeSet::new(),
            open_end: None,
            searched_end: None,
            prior_written: RegionSet::new(),
            searches: 0,
        }
    }

    /// Regions written before the observed log began; they count as
    /// parameters for the dependency check.
    pub fn with_prior_written(mut self, prior: RegionSet) -> Self {
        self.prior_written = prior;
        self
    }

    pub fn config(&self) -> &OssConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn ends(&self) -> &BTreeSet<usize> {
        &self.ends
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    /// Number of searches actually run (memoized calls excluded).
    pub fn searches_run(&self) -> u64 {
        self.searches
    }

    pub fn observe(&mut self, e: &OperatorInfo) {
        let i = self.tags.len();
        debug_assert_eq!(e.index, i);
        let tag = tag_of(e, self.cfg.tag_mode);
        let next = self.interner.len() as u32;
        self.tags.push(*self.interner.entry(tag).or_insert(next));
        match e.func {
            ApiKind::MemcpyHtoD => {
                self.starts.push(i);
                self.open_end = None;
            }
            ApiKind::MemcpyDtoH => {
                self.ends.insert(i);
                self.open_end = Some(i);
            }
            ApiKind::StreamSynchronize => {
                if let Some(prev) = self.open_end {
                    self.ends.remove(&prev);
                    self.ends.insert(i);
                    self.open_end = Some(i);
                }
            }
            _ => self.open_end = None,
        }
    }

    /// Runs the search if the last end boundary changed since the previous
    /// call; `entries` must be the observed log.
    pub fn search(&mut self, entries: &[OperatorInfo]) -> Option<SearchHit> {
        debug_assert_eq!(entries.len(), self.tags.len());
        let end = *self.ends.last()?;
        if self.starts.is_empty() || self.searched_end == Some(end) {
            return None;
        }
        self.searched_end = Some(end);
        self.searches += 1;
        self.search_at(entries, end)
    }

    /// Candidate windows run from an upload to an end boundary, and the
    /// records after the window up to `end` must repeat its beginning. This
    /// covers tails that stop anywhere inside the next inference. Shorter
    /// windows are tried first, then later starts.
    fn search_at(&self, entries: &[OperatorInfo], end: usize) -> Option<SearchHit> {
        let tags = &self.tags;
        let mut candidates: Vec<(usize, usize)> = Vec::new();
        for &t in self.ends.range(..=end) {
            let tail = end - t;
            // The tail must be shorter than the window: k + tail <= t.
            let hi = self.starts.partition_point(|&k| k + tail <= t);
            for &k in &self.starts[..hi] {
                let length = t + 1 - k;
                if tags[t + 1..=end] == tags[k..k + tail] {
                    candidates.push((length, k));
                }
            }
        }
        candidates.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        candidates.into_iter().find_map(|(length, k)| {
            let tail = end - (k + length - 1);
            let ok = fast_check(tags, k, length, self.cfg.repeats)
                && (tail == 0 || windows_equivalent(entries, k + length, k, tail, self.cfg.address_match))
                && full_check_with(entries, k, length, &self.ends, &self.cfg, &self.prior_written);
            ok.then_some(SearchHit { start: k, period: length })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{ApiCall, ReturnValue};

    fn r(i: u64) -> MemRegion {
        MemRegion::new(0x1000 + i * 0x100, 16)
    }

    fn log_of(calls: &[ApiCall]) -> TraceLog {
        calls.iter().cloned().map(|c| (c, ReturnValue::success())).collect()
    }

    #[test]
    fn fast_check_examples() {
        let abc: Vec<char> = "ABCABCABC".chars().collect();
        assert!(fast_check(&abc, 6, 3, 3));
        let abd: Vec<char> = "ABCABDABC".chars().collect();
        assert!(!fast_check(&abd, 6, 3, 3));
        assert!(!fast_check(&abc, 6, 0, 3));
        assert!(!fast_check(&abc, 8, 3, 1));
    }

    #[test]
    fn region_set_merges_and_covers() {
        let mut s = RegionSet::new();
        s.insert(MemRegion::new(0, 10));
        s.insert(MemRegion::new(20, 10));
        assert!(!s.covers(MemRegion::new(5, 10)));
        s.insert(MemRegion::new(10, 10));
        assert!(s.covers(MemRegion::new(5, 20)));
        assert!(s.overlaps(MemRegion::new(29, 5)));
        assert!(!s.overlaps(MemRegion::new(30, 5)));
        assert!(!s.covers(MemRegion::new(25, 10)));
    }

    #[test]
    fn dependency_examples() {
        let chain = log_of(&[
            ApiCall::htod(r(0), vec![0; 16]),
            ApiCall::launch("k", vec![], vec![r(0)], vec![r(1)]),
            ApiCall::dtoh(r(1)),
        ]);
        assert!(check_data_dependency(chain.entries(), 0, 3));

        let orphan = log_of(&[
            ApiCall::htod(r(0), vec![0; 16]),
            ApiCall::launch("k", vec![], vec![r(9)], vec![r(1)]),
            ApiCall::dtoh(r(1)),
        ]);
        assert!(!check_data_dependency(orphan.entries(), 0, 3));

        let with_param = log_of(&[
            ApiCall::htod(r(7), vec![0; 16]),
            ApiCall::htod(r(0), vec![0; 16]),
            ApiCall::launch("k", vec![], vec![r(0), r(7)], vec![r(1)]),
            ApiCall::dtoh(r(1)),
        ]);
        assert!(check_data_dependency(with_param.entries(), 1, 3));
        assert!(check_data_dependency_with(orphan.entries(), 0, 3, &{
            let mut s = RegionSet::new();
            s.insert(r(9));
            s
        }));
    }

    #[test]
    fn reading_a_region_before_the_window_rewrites_it_is_rejected() {
        // The second segment consumes the first segment's output; starting
        // the window at the second segment reads that output before it is
        // produced inside the window.
        let inference = [
            ApiCall::htod(r(0), vec![0; 16]),
            ApiCall::launch("a", vec![], vec![r(0)], vec![r(1)]),
            ApiCall::dtoh(r(1)),
            ApiCall::htod(r(2), vec![0; 16]),
            ApiCall::launch("b", vec![], vec![r(2), r(1)], vec![r(3)]),
            ApiCall::dtoh(r(3)),
        ];
        let calls: Vec<ApiCall> = inference.iter().cycle().take(6 * 4).cloned().collect();
        let log = log_of(&calls);
        assert!(check_data_dependency(log.entries(), 6, 6));
        assert!(!check_data_dependency(log.entries(), 9, 6));
    }

    #[test]
    fn search_needs_both_boundaries() {
        let log = log_of(&[
            ApiCall::htod(r(0), vec![0; 16]),
            ApiCall::launch("k", vec![], vec![r(0)], vec![r(1)]),
        ]);
        assert_eq!(operator_sequence_search(&log, &OssConfig::default()), None);
        assert_eq!(operator_sequence_search(&TraceLog::new(), &OssConfig::default()), None);
    }

    #[test]
    fn full_check_rejects_windows_not_ending_on_a_boundary() {
        let one = [
            ApiCall::htod(r(0), vec![0; 16]),
            ApiCall::launch("k1", vec![], vec![r(0)], vec![r(1)]),
            ApiCall::dtoh(r(1)),
            ApiCall::synchronize(),
        ];
        let calls: Vec<ApiCall> = one.iter().cycle().take(12).cloned().collect();
        let log = log_of(&calls);
        let ends = log.boundary_indices().ends;
        assert!(full_check(&log, 8, 4, 3, &ends));
        assert!(!full_check(&log, 8, 3, 3, &ends));
        assert!(!full_check(&log, 9, 3, 3, &ends));
    }

    #[test]
    fn alias_mode_accepts_consistent_renaming() {
        let inference = |base: u64| {
            vec![
                ApiCall::htod(r(base), vec![0; 16]),
                ApiCall::launch("k", vec![], vec![r(base)], vec![r(base + 1)]),
                ApiCall::dtoh(r(base + 1)),
            ]
        };
        let calls: Vec<ApiCall> = (0..3).flat_map(|i| inference(10 * i)).collect();
        let log = log_of(&calls);
        assert_eq!(operator_sequence_search(&log, &OssConfig::default()), None);
        let cfg = OssConfig {
            address_match: AddressMatch::AliasMap,
            ..Default::default()
        };
        let ios = operator_sequence_search(&log, &cfg).unwrap();
        assert_eq!(ios.hit(), SearchHit { start: 6, period: 3 });
    }

    #[test]
    fn incremental_search_is_memoized_on_end_boundary() {
        let one = [
            ApiCall::htod(r(0), vec![0; 16]),
            ApiCall::get_device(),
            ApiCall::launch("k1", vec![], vec![r(0)], vec![r(1)]),
            ApiCall::dtoh(r(1)),
            ApiCall::synchronize(),
        ];
        let log = log_of(&one.iter().cycle().take(15).cloned().collect::<Vec<_>>());
        let mut s = IncrementalSearch::new(OssConfig::default());
        let mut found = None;
        for (i, e) in log.entries().iter().enumerate() {
            s.observe(e);
            if let Some(hit) = s.search(&log.entries()[..=i]) {
                found = Some((i, hit));
                break;
            }
        }
        assert_eq!(found, Some((14, SearchHit { start: 10, period: 5 })));
        // Two boundary moves per inference (copy, then its sync).
        assert_eq!(s.searches_run(), 6);
    }
}
