//! Sampling-based attention estimation.
//!
//! Given a single query, a set of keys, and a set of values, the exact
//! attention output is the softmax-weighted average of the values. This
//! crate estimates that output at a fraction of the cost and measures
//! what the approximation gives up:
//!
//! - [`full_attention`] computes the exact reference.
//! - [`topk_attention`] keeps only the highest-weight tokens
//!   (deterministic, biased when values vary with weight).
//! - [`oracle_sample`] / [`oracle_estimate`] sample tokens from the true
//!   attention distribution (unbiased, needs the very weights it is
//!   meant to avoid computing; useful as a reference).
//! - [`snis_estimate`] is self-normalized importance sampling from an
//!   arbitrary proposal.
//! - [`magicpig_run`] samples via SimHash collisions: tokens whose keys
//!   hash near the query are scored, debiased by their collision
//!   probability, and combined with an always-kept static set of sink
//!   and recent tokens.
//! - [`run_sweep`] benchmarks any of the above over budget grids and
//!   reports relative error against the exact output as CSV.
//!
//! Workloads can be synthesized ([`gen_workload`]) or round-tripped
//! through a compact binary file format ([`write_workload`] /
//! [`read_workload`]); hash indexes serialize too ([`write_index`] /
//! [`read_index`]). The [`zoo_demo`] example shows on 100 tokens why
//! truncation misses value outliers that sampling keeps.

mod attention;
mod error;
mod estimator;
mod lsh;
mod sampling;
mod sweep;
mod workload;
mod zoo;

pub use attention::{
    dot, full_attention, l2_norm, relative_error, softmax, topk_attention, AttentionEstimate,
    AttentionScores, AttentionWorkload, Method,
};
pub use error::{Error, Result};
pub use estimator::{
    estimate_given_candidates, magicpig_estimate, magicpig_run, partition_static, MagicPigReport,
    StaticCachePolicy,
};
pub use lsh::{
    build_index, center_keys, collision_prob, expected_budget, mips_transform, query_candidates,
    read_index, sampling_prob, simhash_encode, write_index, CandidateSet, CollisionProb, LshConfig,
    LshIndex,
};
pub use sampling::{
    expected_unique_count, oracle_estimate, oracle_sample, oracle_theoretical_stddev,
    snis_estimate, snis_variance_estimate, DrawMultiset, ProposalDistribution, ProposalKind,
    RandomSource, UniqueCountBound,
};
pub use sweep::{
    budget_table, empirical_budget, parse_budget_config, parse_config, parse_index_config,
    parse_workload_config, run_sweep, run_sweep_with_threads, BudgetConfig, BudgetEntry,
    ExperimentConfig, IndexConfig, SnisProposal, SweepResult, SweepRow,
};
pub use workload::{
    gen_workload, read_workload, read_workload_from, read_workload_reader, write_workload,
    write_workload_to, WorkloadKind, WorkloadSpec,
};
pub use zoo::{zoo_demo, zoo_workload, ZooReport};
