//! Brute-force reference for the sequence search, used by tests.
//!
//! Shares no code with the search: boundaries, record equivalence and the
//! dependency rule are re-derived here from the log directly. Cost is
//! quadratic in the log length per candidate end, so keep inputs small.

use crate::runtime::{ApiKind, MemRegion};
use crate::trace::{OperatorInfo, TraceLog};

use super::{InferenceOperatorSequence, OssConfig, SearchHit};

fn same_record(a: &OperatorInfo, b: &OperatorInfo) -> bool {
    a.func == b.func
        && a.kernel == b.kernel
        && a.args.scalars == b.args.scalars
        && a.args.in_regions == b.args.in_regions
        && a.args.out_regions == b.args.out_regions
        && a.args.payload_size == b.args.payload_size
}

fn last_end_boundary(entries: &[OperatorInfo]) -> Option<usize> {
    let last_copy = entries.iter().rposition(|e| e.func == ApiKind::MemcpyDtoH)?;
    let trailing = entries[last_copy + 1..]
        .iter()
        .take_while(|e| e.func == ApiKind::StreamSynchronize)
        .count();
    Some(last_copy + trailing)
}

fn is_end_boundary(entries: &[OperatorInfo], i: usize) -> bool {
    match entries[i].func {
        ApiKind::MemcpyDtoH => entries
            .get(i + 1)
            .is_none_or(|n| n.func != ApiKind::StreamSynchronize),
        ApiKind::StreamSynchronize => {
            if entries.get(i + 1).is_some_and(|n| n.func == ApiKind::StreamSynchronize) {
                return false;
            }
            let mut j = i;
            while j > 0 && entries[j].func == ApiKind::StreamSynchronize {
                j -= 1;
            }
            entries[j].func == ApiKind::MemcpyDtoH
        }
        _ => false,
    }
}

/// Whether `r` is fully covered by the union of `set`.
fn covered(set: &[MemRegion], r: MemRegion) -> bool {
    let mut spans: Vec<(u64, u64)> = set
        .iter()
        .filter(|s| s.end() > r.base && s.base < r.end())
        .map(|s| (s.base, s.end()))
        .collect();
    spans.sort_unstable();
    let mut reach = r.base;
    for (s, e) in spans {
        if s > reach {
            break;
        }
        reach = reach.max(e);
    }
    reach >= r.end()
}

fn touches(set: &[MemRegion], r: MemRegion) -> bool {
    set.iter().any(|s| s.base < r.end() && r.base < s.end())
}

fn dependencies_hold(entries: &[OperatorInfo], start: usize, len: usize) -> bool {
    let before: Vec<MemRegion> = entries[..start]
        .iter()
        .flat_map(|e| e.args.out_regions.iter().copied())
        .collect();
    let window = &entries[start..start + len];
    let inside: Vec<MemRegion> = window
        .iter()
        .flat_map(|e| e.args.out_regions.iter().copied())
        .collect();
    let mut produced: Vec<MemRegion> = Vec::new();
    for e in window {
        for r in &e.args.in_regions {
            let from_window = covered(&produced, *r);
            let from_params = covered(&before, *r) && !touches(&inside, *r);
            if !from_window && !from_params {
                return false;
            }
        }
        produced.extend(e.args.out_regions.iter().copied());
    }
    true
}

fn repeats_backward(entries: &[OperatorInfo], start: usize, len: usize) -> usize {
    let mut count = 0;
    let mut pos = start as isize;
    while pos >= 0 {
        let p = pos as usize;
        if (0..len).all(|t| same_record(&entries[start + t], &entries[p + t])) {
            count += 1;
            pos -= len as isize;
        } else {
            break;
        }
    }
    count
}

/// Tries every window whose repeats reach the last end boundary, shortest
/// first. Records after the window up to that boundary must be a partial
/// repeat of it; among equal periods the latest start wins.
pub fn oracle_search(log: &TraceLog, cfg: &OssConfig) -> Option<InferenceOperatorSequence> {
    let entries = log.entries();
    let end = last_end_boundary(entries)?;
    if !entries.iter().any(|e| e.func == ApiKind::MemcpyHtoD) {
        return None;
    }
    (1..=end + 1)
        .flat_map(|len| (0..len).filter(move |&tail| tail + len <= end + 1).map(move |tail| (end + 1 - len - tail, len)))
        .find(|&(start, len)| {
            entries[start].func == ApiKind::MemcpyHtoD
                && is_end_boundary(entries, start + len - 1)
                && (start + len..=end).all(|t| same_record(&entries[t], &entries[t - len]))
                && dependencies_hold(entries, start, len)
                && repeats_backward(entries, start, len) >= cfg.repeats
        })
        .map(|(start, period)| InferenceOperatorSequence::from_entries(entries, SearchHit { start, period }))
}
