//! Monte Carlo attention estimators: oracle sampling from the exact
//! attention distribution and self-normalized importance sampling, plus
//! their analytic variance and unique-cost formulas.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    full_attention, weighted_value_sum, AttentionEstimate, AttentionWorkload, Method,
};
use crate::error::{Error, Result};

/// A reproducible PRNG handle. Identical `(seed, stream)` pairs yield
/// identical draw sequences on every platform, and distinct streams under
/// one seed are independent, which is what lets trials run in parallel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomSource {
    pub seed: u64,
    pub stream: u64,
}

impl RandomSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// The generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// A single derived 64-bit value, for seeding sub-components that take
    /// a plain seed (e.g. per-trial index builds).
    pub fn derived_u64(&self) -> u64 {
        self.rng().random()
    }
}

/// `B` iid categorical draws, deduplicated: `draws` holds `(index,
/// multiplicity)` pairs in ascending index order and multiplicities sum to
/// `total_draws`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DrawMultiset {
    pub draws: Vec<(usize, u32)>,
    pub total_draws: u32,
}

impl DrawMultiset {
    /// Number of distinct indices drawn (the unique cost `|S|`).
    pub fn unique_count(&self) -> usize {
        self.draws.len()
    }

    /// Checks the structural invariants against a context of size `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut sum: u64 = 0;
        let mut prev: Option<usize> = None;
        for &(index, multiplicity) in &self.draws {
            if index >= n {
                return Err(Error::InvalidInput(format!(
                    "draw index {index} out of range for n={n}"
                )));
            }
            if multiplicity == 0 {
                return Err(Error::InvalidInput(format!(
                    "draw index {index} has zero multiplicity"
                )));
            }
            if let Some(p) = prev {
                if index <= p {
                    return Err(Error::InvalidInput(
                        "draw indices must be strictly ascending".into(),
                    ));
                }
            }
            prev = Some(index);
            sum += u64::from(multiplicity);
        }
        if sum != u64::from(self.total_draws) {
            return Err(Error::InvalidInput(format!(
                "multiplicities sum to {sum}, expected total_draws={}",
                self.total_draws
            )));
        }
        Ok(())
    }
}

/// How a proposal distribution was derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalKind {
    /// The exact attention distribution `w` itself.
    AttentionScore,
    /// `u_i` proportional to `w_i * ||v_i||`, the minimum-variance choice
    /// for estimating the output norm.
    ScoreValueNorm,
    /// Per-token inclusion probabilities from an LSH index; each lies in
    /// (0, 1] independently and the vector is not normalized.
    LshCollision,
    /// Caller-supplied probabilities.
    Custom,
}

/// A per-token selection distribution `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalDistribution {
    probs: Vec<f64>,
    kind: ProposalKind,
}

impl ProposalDistribution {
    /// Builds the `AttentionScore` or `ScoreValueNorm` proposal from a
    /// workload. The latter fails on all-zero values, which would leave
    /// nothing to normalize.
    pub fn from_workload(kind: ProposalKind, workload: &AttentionWorkload) -> Result<Self> {
        let weights = workload.scores().weights;
        let probs = match kind {
            ProposalKind::AttentionScore => weights,
            ProposalKind::ScoreValueNorm => {
                let mut probs: Vec<f64> = (0..workload.n())
                    .map(|i| weights[i] * crate::attention::l2_norm(workload.value(i)))
                    .collect();
                let total: f64 = probs.iter().sum();
                if total <= 0.0 {
                    return Err(Error::Distribution(
                        "score_value_norm proposal is zero everywhere (all value rows zero)".into(),
                    ));
                }
                for p in &mut probs {
                    *p /= total;
                }
                probs
            }
            other => {
                return Err(Error::InvalidInput(format!(
                    "kind {other:?} cannot be derived from a workload; use its own constructor"
                )))
            }
        };
        Ok(Self { probs, kind })
    }

    /// A caller-supplied normalized proposal (sum 1 within 1e-9).
    pub fn custom(probs: Vec<f64>) -> Result<Self> {
        validate_normalized(&probs, 1e-9)?;
        Ok(Self {
            probs,
            kind: ProposalKind::Custom,
        })
    }

    /// The uniform proposal over `n` tokens.
    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
            kind: ProposalKind::Custom,
        }
    }

    /// Per-token LSH inclusion probabilities; each must lie in [0, 1] but
    /// the vector as a whole is not normalized.
    pub fn lsh_collision(probs: Vec<f64>) -> Result<Self> {
        for (i, &p) in probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Distribution(format!(
                    "lsh_collision probability at index {i} is {p}, outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            probs,
            kind: ProposalKind::LshCollision,
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn kind(&self) -> ProposalKind {
        self.kind
    }

    fn require_normalized(&self) -> Result<()> {
        if self.kind == ProposalKind::LshCollision {
            return Err(Error::Distribution(
                "lsh_collision proposals are not normalized and cannot drive iid draws".into(),
            ));
        }
        Ok(())
    }
}

fn validate_normalized(weights: &[f64], tolerance: f64) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::Distribution("empty weight vector".into()));
    }
    for (i, &w) in weights.iter().enumerate() {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::Distribution(format!(
                "weight at index {i} is {w}; weights must be finite and nonnegative"
            )));
        }
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > tolerance {
        return Err(Error::Distribution(format!(
            "weights sum to {sum}, expected 1 within {tolerance}"
        )));
    }
    Ok(())
}

/// `budget` iid draws from `weights` by inverse-CDF lookup on the prefix
/// sums, deduplicated with multiplicities.
///
/// Weights must be nonnegative and sum to 1 within 1e-6.
pub fn oracle_sample(weights: &[f64], budget: u32, rng: &RandomSource) -> Result<DrawMultiset> {
    if budget == 0 {
        return Err(Error::InvalidInput("budget must be >= 1".into()));
    }
    validate_normalized(weights, 1e-6)?;
    let mut generator = rng.rng();
    Ok(draw_categorical(weights, budget, &mut generator))
}

/// Inverse-CDF sampling shared by the oracle and SNIS estimators. The
/// caller guarantees nonnegative weights with a positive sum.
fn draw_categorical(weights: &[f64], budget: u32, rng: &mut ChaCha8Rng) -> DrawMultiset {
    let mut prefix = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for &w in weights {
        acc += w;
        prefix.push(acc);
    }
    let total = acc;
    let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
    for _ in 0..budget {
        let r = rng.random::<f64>() * total;
        // partition_point returns the first index whose cumulative sum
        // exceeds r; zero-weight tokens have flat prefix entries and are
        // never selected. Rounding can push r to total itself, in which
        // case we clamp and walk back to the last positive weight.
        let mut idx = prefix.partition_point(|&c| c <= r);
        if idx >= weights.len() {
            idx = weights.len() - 1;
            while idx > 0 && weights[idx] == 0.0 {
                idx -= 1;
            }
        }
        *counts.entry(idx).or_insert(0) += 1;
    }
    DrawMultiset {
        draws: counts.into_iter().collect(),
        total_draws: budget,
    }
}

/// Oracle sampling estimate `sum_i (f_i / B) v_i` over the unique draws.
///
/// Duplicates cost nothing extra: `unique_budget = |S|` distinct rows are
/// touched, so `cost2 = |S|/n`. `cost1 = 0.5` because drawing from the
/// exact distribution requires every score, the dot-product half of full
/// attention.
pub fn oracle_estimate(
    workload: &AttentionWorkload,
    draws: &DrawMultiset,
) -> Result<AttentionEstimate> {
    draws.validate(workload.n())?;
    let b = f64::from(draws.total_draws);
    let output = weighted_value_sum(
        workload,
        draws.draws.iter().map(|&(i, f)| (i, f64::from(f) / b)),
    );
    Ok(AttentionEstimate {
        output,
        unique_budget: draws.unique_count(),
        cost1: 0.5,
        cost2: draws.unique_count() as f64 / workload.n() as f64,
        method: Method::Oracle,
    })
}

/// Closed-form standard deviation of the oracle estimator:
/// `sqrt((E_w[||v||^2] - ||o||^2) / B)` where `o` is the exact output.
/// For d > 1 this is the square root of the covariance trace.
pub fn oracle_theoretical_stddev(workload: &AttentionWorkload, budget: u32) -> f64 {
    let weights = workload.scores().weights;
    let o = full_attention(workload).output;
    let second_moment: f64 = (0..workload.n())
        .map(|i| {
            let v = workload.value(i);
            weights[i] * crate::attention::dot(v, v)
        })
        .sum();
    let o_sq = crate::attention::dot(&o, &o);
    // Jensen guarantees nonnegativity; rounding can leave a tiny negative.
    ((second_moment - o_sq).max(0.0) / f64::from(budget)).sqrt()
}

/// Expected number of distinct tokens touched by `B` oracle draws, with
/// its upper bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniqueCountBound {
    /// `n - sum_i (1 - w_i)^B`, the exact expectation.
    pub expected: f64,
    /// `1 + B * (1 - max_i w_i)`, which caps the expectation.
    pub bound: f64,
}

/// Evaluates [`UniqueCountBound`] for a normalized weight vector.
pub fn expected_unique_count(weights: &[f64], budget: u32) -> Result<UniqueCountBound> {
    if budget == 0 {
        return Err(Error::InvalidInput("budget must be >= 1".into()));
    }
    validate_normalized(weights, 1e-6)?;
    let n = weights.len() as f64;
    let miss_sum: f64 = weights
        .iter()
        .map(|&w| (1.0 - w).powi(budget.min(i32::MAX as u32) as i32))
        .sum();
    let max_w = weights.iter().copied().fold(0.0, f64::max);
    Ok(UniqueCountBound {
        expected: n - miss_sum,
        bound: 1.0 + f64::from(budget) * (1.0 - max_w),
    })
}

/// Self-normalized importance sampling: draw `B` iid indices from the
/// proposal `u`, then return
/// `sum_j (w~_{i_j}/u_{i_j}) v_{i_j} / sum_j (w~_{i_j}/u_{i_j})`.
///
/// Each ratio is formed in log space (`logit_i - ln u_i`) and exponentiated
/// from a shifted maximum, so extreme logits cannot overflow. Costs follow
/// [`oracle_estimate`].
pub fn snis_estimate(
    workload: &AttentionWorkload,
    proposal: &ProposalDistribution,
    budget: u32,
    rng: &RandomSource,
) -> Result<AttentionEstimate> {
    if budget == 0 {
        return Err(Error::InvalidInput("budget must be >= 1".into()));
    }
    proposal.require_normalized()?;
    if proposal.probs.len() != workload.n() {
        return Err(Error::InvalidInput(format!(
            "proposal length {} does not match n={}",
            proposal.probs.len(),
            workload.n()
        )));
    }
    validate_normalized(&proposal.probs, 1e-6)?;
    // Unnormalized attention weights are strictly positive, so the ratio
    // w~_i/u_i must be defined at every token the proposal can select; a
    // zero anywhere would make some w~_i unreachable and bias the estimate.
    if let Some(i) = proposal.probs.iter().position(|&u| u == 0.0) {
        return Err(Error::Distribution(format!(
            "proposal probability at index {i} is zero but every token has positive weight"
        )));
    }
    let mut generator = rng.rng();
    let draws = draw_categorical(&proposal.probs, budget, &mut generator);

    let scores = workload.scores();
    let log_ratios: Vec<f64> = draws
        .draws
        .iter()
        .map(|&(i, _)| scores.logits[i] - proposal.probs[i].ln())
        .collect();
    let shift = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut numerator = vec![0.0; workload.d()];
    let mut denominator = 0.0;
    for (&(i, f), &lr) in draws.draws.iter().zip(&log_ratios) {
        let ratio = f64::from(f) * (lr - shift).exp();
        denominator += ratio;
        for (acc, v) in numerator.iter_mut().zip(workload.value(i)) {
            *acc += ratio * v;
        }
    }
    // The maximal term contributes exp(0) >= 1, so the denominator cannot
    // vanish.
    debug_assert!(denominator >= 1.0);
    for x in &mut numerator {
        *x /= denominator;
    }
    Ok(AttentionEstimate {
        output: numerator,
        unique_budget: draws.unique_count(),
        cost1: 0.5,
        cost2: draws.unique_count() as f64 / workload.n() as f64,
        method: Method::Snis,
    })
}

/// Exact variance of the d=1 self-normalized estimator:
/// `(1/(B Z^2)) * sum_i (w~_i^2 / u_i) (v_i - o)^2`, evaluated by direct
/// summation with all `w~` terms sharing one max-shift (the shift cancels
/// between numerator and `Z^2`).
pub fn snis_variance_estimate(
    workload: &AttentionWorkload,
    proposal: &ProposalDistribution,
    budget: u32,
) -> Result<f64> {
    if workload.d() != 1 {
        return Err(Error::UnsupportedDimension {
            required: 1,
            actual: workload.d(),
        });
    }
    if budget == 0 {
        return Err(Error::InvalidInput("budget must be >= 1".into()));
    }
    proposal.require_normalized()?;
    if proposal.probs.len() != workload.n() {
        return Err(Error::InvalidInput(format!(
            "proposal length {} does not match n={}",
            proposal.probs.len(),
            workload.n()
        )));
    }
    validate_normalized(&proposal.probs, 1e-6)?;
    if let Some(i) = proposal.probs.iter().position(|&u| u == 0.0) {
        return Err(Error::Distribution(format!(
            "proposal probability at index {i} is zero but every token has positive weight"
        )));
    }
    let scores = workload.scores();
    let o = full_attention(workload).output[0];
    let shift = scores
        .logits
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = scores.logits.iter().map(|&l| (l - shift).exp()).collect();
    let z: f64 = shifted.iter().sum();
    let sum: f64 = (0..workload.n())
        .map(|i| {
            let dv = workload.value(i)[0] - o;
            shifted[i] * shifted[i] / proposal.probs[i] * dv * dv
        })
        .sum();
    Ok(sum / (f64::from(budget) * z * z))
}
