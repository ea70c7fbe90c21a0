use super::MsgInterval;
use crate::sql::{merge_subset, merge_union};

/// Applies the subset rule, then the union rule, until no pair merges.
/// Each merge removes one interval, so at most `n - 1` merges happen.
pub fn optimize_set(mut intervals: Vec<MsgInterval>) -> Vec<MsgInterval> {
    'merge: loop {
        let n = intervals.len();
        for i in 0..n {
            for j in 0..n {
                if i == j || intervals[i].kind != intervals[j].kind {
                    continue;
                }
                let kind = intervals[i].kind.clone();
                if let Ok(Some(_)) =
                    merge_subset(&intervals[i].reduced, &intervals[j].reduced, &kind)
                {
                    intervals.remove(j);
                    continue 'merge;
                }
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                if intervals[i].kind != intervals[j].kind {
                    continue;
                }
                let kind = intervals[i].kind.clone();
                if let Ok(Some(reduced)) =
                    merge_union(&intervals[i].reduced, &intervals[j].reduced, &kind)
                {
                    let other = intervals.remove(j);
                    let merged = &mut intervals[i];
                    merged.id = format!("{}|{}", merged.id, other.id);
                    merged.reduced = reduced;
                    for d in other.deps {
                        if !merged.deps.contains(&d) {
                            merged.deps.push(d);
                        }
                    }
                    merged.deps.sort();
                    merged.incomplete |= other.incomplete;
                    continue 'merge;
                }
            }
        }
        return intervals;
    }
}
