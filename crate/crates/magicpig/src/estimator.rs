//! The end-to-end MagicPIG estimator: a statically kept sink/local token
//! set plus LSH-sampled candidates, fused in one bias-corrected softmax
//! whose sampled logits carry a `-log u` term.

use crate::attention::{weighted_value_sum, AttentionEstimate, AttentionWorkload, Method};
use crate::error::{Error, Result};
use crate::lsh::{build_index, query_candidates, CandidateSet, LshConfig, LshIndex};

/// Tokens exempt from sampling: the first `sink_count` positions and the
/// trailing `local_window` positions, clipped to the context.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StaticCachePolicy {
    pub sink_count: usize,
    pub local_window: usize,
}

impl Default for StaticCachePolicy {
    fn default() -> Self {
        Self {
            sink_count: 4,
            local_window: 64,
        }
    }
}

/// Estimate plus sampling diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct MagicPigReport {
    pub estimate: AttentionEstimate,
    /// Sampled candidates, excluding static tokens.
    pub sampled_count: usize,
    /// Static tokens attended exactly.
    pub static_count: usize,
    /// The inclusion probability attached to each sampled candidate, in
    /// candidate order.
    pub sample_probs: Vec<f64>,
    /// True when the sampled candidate set came back empty and the output
    /// fell back to the static tokens alone.
    pub empty_sample: bool,
}

/// Splits `0..n` into the static set `T` (ascending, deduplicated) and the
/// dynamic complement.
pub fn partition_static(n: usize, policy: &StaticCachePolicy) -> (Vec<usize>, Vec<usize>) {
    let sink_end = policy.sink_count.min(n);
    let local_start = n.saturating_sub(policy.local_window).max(sink_end);
    let static_set: Vec<usize> = (0..sink_end).chain(local_start..n).collect();
    let dynamic: Vec<usize> = (sink_end..local_start).collect();
    (static_set, dynamic)
}

/// The deterministic core: evaluates the bias-corrected softmax for a
/// fixed candidate set.
///
/// Candidate logits are `q.k_i/sqrt(d) - log u_i` (u clamped to 1e-300
/// before the log), static logits are plain `q.k_i/sqrt(d)` (their u is
/// 1), and one joint max-shifted softmax over candidates-then-static
/// weighs the value rows. Separating this from the index lookup makes the
/// estimator auditable: the sampled set is data, not hidden state.
pub fn estimate_given_candidates(
    workload: &AttentionWorkload,
    candidates: &CandidateSet,
    static_set: &[usize],
) -> Result<MagicPigReport> {
    let n = workload.n();
    validate_candidates(candidates, static_set, n)?;
    if candidates.is_empty() && static_set.is_empty() {
        return Err(Error::DegenerateOutput);
    }
    let scores = workload.scores();
    let order: Vec<usize> = candidates
        .indices
        .iter()
        .chain(static_set.iter())
        .copied()
        .collect();
    let logits: Vec<f64> = candidates
        .indices
        .iter()
        .zip(&candidates.probs)
        .map(|(&i, &u)| scores.logits[i] - u.max(1e-300).ln())
        .chain(static_set.iter().map(|&i| scores.logits[i]))
        .collect();
    let (weights, _) = crate::attention::softmax(&logits);
    let output = weighted_value_sum(workload, order.iter().copied().zip(weights));
    let touched = order.len();
    Ok(MagicPigReport {
        estimate: AttentionEstimate {
            output,
            unique_budget: touched,
            // Hash lookups cost a vanishing fraction of an attention pass.
            cost1: 0.0,
            cost2: touched as f64 / n as f64,
            method: Method::MagicPig,
        },
        sampled_count: candidates.len(),
        static_count: static_set.len(),
        sample_probs: candidates.probs.clone(),
        empty_sample: candidates.is_empty(),
    })
}

/// Runs one decoding step against a prebuilt index over the dynamic keys:
/// partitions the context, queries the index, maps candidate positions
/// back to token space, and evaluates the closed form.
///
/// The index must have been built over exactly the workload's dynamic keys
/// in dynamic order; only the shape of that contract is checkable here.
pub fn magicpig_estimate(
    workload: &AttentionWorkload,
    index: &LshIndex,
    policy: &StaticCachePolicy,
) -> Result<MagicPigReport> {
    let (static_set, dynamic) = partition_static(workload.n(), policy);
    if index.n() != dynamic.len() || index.d() != workload.d() {
        return Err(Error::InvalidInput(format!(
            "index shape n={}, d={} does not match the dynamic set ({} tokens of width {})",
            index.n(),
            index.d(),
            dynamic.len(),
            workload.d()
        )));
    }
    let positions = query_candidates(index, workload.query());
    let candidates = CandidateSet {
        indices: positions.indices.iter().map(|&p| dynamic[p]).collect(),
        collision_counts: positions.collision_counts,
        probs: positions.probs,
    };
    estimate_given_candidates(workload, &candidates, &static_set)
}

/// Convenience wrapper that builds the per-step index itself. When the
/// static policy already covers the whole context there is nothing to
/// index, and the estimate is the exact softmax over the static set.
pub fn magicpig_run(
    workload: &AttentionWorkload,
    config: &LshConfig,
    policy: &StaticCachePolicy,
) -> Result<MagicPigReport> {
    let (static_set, dynamic) = partition_static(workload.n(), policy);
    if dynamic.is_empty() {
        return estimate_given_candidates(workload, &CandidateSet::empty(), &static_set);
    }
    let d = workload.d();
    let mut dynamic_keys = Vec::with_capacity(dynamic.len() * d);
    for &i in &dynamic {
        dynamic_keys.extend_from_slice(workload.key(i));
    }
    let index = build_index(&dynamic_keys, dynamic.len(), d, config)?;
    magicpig_estimate(workload, &index, policy)
}

fn validate_candidates(candidates: &CandidateSet, static_set: &[usize], n: usize) -> Result<()> {
    if candidates.indices.len() != candidates.probs.len()
        || candidates.indices.len() != candidates.collision_counts.len()
    {
        return Err(Error::InvalidInput(
            "candidate indices, counts, and probs must have equal lengths".into(),
        ));
    }
    check_ascending_in_range(&candidates.indices, n)?;
    check_ascending_in_range(static_set, n)?;
    for &u in &candidates.probs {
        if !(u > 0.0 && u <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "candidate probability {u} outside (0, 1]"
            )));
        }
    }
    // Both lists are ascending; a linear merge walk detects overlap.
    let (mut a, mut b) = (0, 0);
    while a < candidates.indices.len() && b < static_set.len() {
        match candidates.indices[a].cmp(&static_set[b]) {
            std::cmp::Ordering::Less => a += 1,
            std::cmp::Ordering::Greater => b += 1,
            std::cmp::Ordering::Equal => {
                return Err(Error::InvalidInput(format!(
                    "token {} appears in both the candidate and static sets",
                    candidates.indices[a]
                )))
            }
        }
    }
    Ok(())
}

fn check_ascending_in_range(list: &[usize], n: usize) -> Result<()> {
    let mut prev: Option<usize> = None;
    for &i in list {
        if i >= n {
            return Err(Error::InvalidInput(format!(
                "token index {i} out of range for n={n}"
            )));
        }
        if let Some(p) = prev {
            if i <= p {
                return Err(Error::InvalidInput(
                    "token indices must be strictly ascending".into(),
                ));
            }
        }
        prev = Some(i);
    }
    Ok(())
}
