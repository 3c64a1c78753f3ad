//! Frame partitioning for sparse sampling.
//!
//! Given a clip of `frames` frames (1-based indices) and a sampling filter
//! `r`, the plan keeps frames whose index is congruent to 1 mod r and marks
//! the rest discarded. Every discarded frame strictly between two consecutive
//! retained frames becomes a restoration triple `(left, mid, right)` with a
//! blend weight `lambda = (mid - left) / r`. Discarded frames after the last
//! retained frame have no right anchor; they are excluded from both training
//! and inference rather than extrapolated.

use crate::error::{CoreError, Result};
use crate::numerics::FeatureVec;
use serde::Serialize;
use std::collections::BTreeMap;

/// One restoration site: discarded frame `mid` flanked by retained `left` and
/// `right`, with its interpolation weight.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Triple {
    pub left: usize,
    pub mid: usize,
    pub right: usize,
    pub lambda: f64,
}

/// How many discarded frames per gap are scheduled for restoration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PerGap {
    /// Restore every discarded frame in the gap (default).
    All,
    /// Restore only the frame nearest the gap midpoint (ties go low).
    One,
}

/// Complete partition of a clip under a sampling filter. Indices are 1-based.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PartitionPlan {
    pub frames: usize,
    pub filter: usize,
    pub retained: Vec<usize>,
    pub discarded: Vec<usize>,
    pub triples: Vec<Triple>,
    pub excluded_tail: Vec<usize>,
}

impl PartitionPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serialization cannot fail")
    }
}

/// Build the partition plan for `frames` frames under filter `r`.
pub fn make_plan(frames: usize, filter: usize) -> Result<PartitionPlan> {
    make_plan_limited(frames, filter, PerGap::All)
}

/// Like [`make_plan`] but with a cap on restorations per gap.
pub fn make_plan_limited(frames: usize, filter: usize, per_gap: PerGap) -> Result<PartitionPlan> {
    if filter < 2 {
        return Err(CoreError::Config(format!(
            "sampling filter must be >= 2, got {filter}"
        )));
    }
    if frames == 0 {
        return Err(CoreError::Config("frame count must be >= 1".into()));
    }
    let retained: Vec<usize> = (1..=frames).step_by(filter).collect();
    let discarded: Vec<usize> = (1..=frames).filter(|j| (j - 1) % filter != 0).collect();

    let mut triples = Vec::new();
    for pair in retained.windows(2) {
        let (left, right) = (pair[0], pair[1]);
        let mids: Vec<usize> = match per_gap {
            PerGap::All => (left + 1..right).collect(),
            // Nearest integer frame to the gap midpoint; floor division of
            // the gap width lands on the lower of a midpoint tie.
            PerGap::One => vec![left + (right - left) / 2],
        };
        for mid in mids {
            triples.push(Triple {
                left,
                mid,
                right,
                lambda: (mid - left) as f64 / filter as f64,
            });
        }
    }

    let last_retained = *retained.last().expect("at least frame 1 is retained");
    let excluded_tail: Vec<usize> = discarded
        .iter()
        .copied()
        .filter(|&j| j > last_retained)
        .collect();

    Ok(PartitionPlan {
        frames,
        filter,
        retained,
        discarded,
        triples,
        excluded_tail,
    })
}

/// Merge retained features and restored features into one sequence ordered by
/// original frame index. `retained_feats[i]` corresponds to
/// `plan.retained[i]`; `restored` is keyed by the triple's `mid` index.
/// Tail-excluded frames never appear in the output.
pub fn interleave(
    plan: &PartitionPlan,
    retained_feats: &[FeatureVec],
    restored: &BTreeMap<usize, FeatureVec>,
) -> Result<Vec<FeatureVec>> {
    if retained_feats.len() != plan.retained.len() {
        return Err(CoreError::shape(
            "interleave",
            plan.retained.len(),
            retained_feats.len(),
        ));
    }
    let mut out: Vec<(usize, FeatureVec)> =
        Vec::with_capacity(plan.retained.len() + plan.triples.len());
    for (idx, feat) in plan.retained.iter().zip(retained_feats) {
        out.push((*idx, feat.clone()));
    }
    for t in &plan.triples {
        let feat = restored
            .get(&t.mid)
            .ok_or_else(|| CoreError::Data(format!("no restored feature for frame {}", t.mid)))?;
        out.push((t.mid, feat.clone()));
    }
    out.sort_by_key(|(idx, _)| *idx);
    Ok(out.into_iter().map(|(_, f)| f).collect())
}
