//! Exact attention, the TopK baseline, and the shared numeric primitives
//! (stable softmax, relative error) every estimator is measured against.

use crate::error::{Error, Result};

/// One decoding step: a query against `n` cached key/value rows of width `d`.
///
/// `keys` and `values` are row-major `n x d` matrices stored flat; row `i`
/// occupies `[i*d, (i+1)*d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWorkload {
    q: Vec<f64>,
    keys: Vec<f64>,
    values: Vec<f64>,
    n: usize,
    d: usize,
}

impl AttentionWorkload {
    /// Validates shapes and finiteness. `n >= 1`, `d >= 1`, `q` of length
    /// `d`, `keys` and `values` of length `n*d`, all entries finite.
    pub fn new(q: Vec<f64>, keys: Vec<f64>, values: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidInput(format!(
                "workload requires n >= 1 and d >= 1, got n={n}, d={d}"
            )));
        }
        if q.len() != d {
            return Err(Error::InvalidInput(format!(
                "query length {} does not match d={d}",
                q.len()
            )));
        }
        for (name, m) in [("keys", &keys), ("values", &values)] {
            if m.len() != n * d {
                return Err(Error::InvalidInput(format!(
                    "{name} length {} does not match n*d={}",
                    m.len(),
                    n * d
                )));
            }
        }
        for (name, v) in [("q", &q), ("keys", &keys), ("values", &values)] {
            if let Some(pos) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "non-finite entry in {name} at flat position {pos}"
                )));
            }
        }
        Ok(Self {
            q,
            keys,
            values,
            n,
            d,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn query(&self) -> &[f64] {
        &self.q
    }

    /// Key row `i`. Panics if `i >= n`.
    pub fn key(&self, i: usize) -> &[f64] {
        &self.keys[i * self.d..(i + 1) * self.d]
    }

    /// Value row `i`. Panics if `i >= n`.
    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    /// The flat row-major key matrix.
    pub fn keys_flat(&self) -> &[f64] {
        &self.keys
    }

    /// The flat row-major value matrix.
    pub fn values_flat(&self) -> &[f64] {
        &self.values
    }

    /// Scaled logits `q . k_i / sqrt(d)` and their softmax.
    pub fn scores(&self) -> AttentionScores {
        let scale = 1.0 / (self.d as f64).sqrt();
        let logits: Vec<f64> = (0..self.n)
            .map(|i| dot(&self.q, self.key(i)) * scale)
            .collect();
        let (weights, log_normalizer) = softmax(&logits);
        AttentionScores {
            logits,
            weights,
            log_normalizer,
        }
    }
}

/// Logits, their softmax weights, and the normalizer held in log form
/// (`ln Z` stays representable even when `Z` itself would overflow).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionScores {
    pub logits: Vec<f64>,
    pub weights: Vec<f64>,
    pub log_normalizer: f64,
}

/// Which estimator produced an [`AttentionEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Full,
    TopK,
    Oracle,
    Snis,
    MagicPig,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::TopK => "topk",
            Method::Oracle => "oracle",
            Method::Snis => "snis",
            Method::MagicPig => "magicpig",
        }
    }
}

/// An estimated attention output with its cost diagnostics.
///
/// `cost1` is the search/sampling overhead and `cost2` the attention
/// computation itself, both as fractions of what full attention spends.
/// `unique_budget` counts distinct tokens whose key/value rows were touched.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionEstimate {
    pub output: Vec<f64>,
    pub unique_budget: usize,
    pub cost1: f64,
    pub cost2: f64,
    pub method: Method,
}

/// Exact attention: `softmax(q K^T / sqrt(d)) V`.
pub fn full_attention(workload: &AttentionWorkload) -> AttentionEstimate {
    let scores = workload.scores();
    let output = weighted_value_sum(workload, scores.weights.iter().copied().enumerate());
    AttentionEstimate {
        output,
        unique_budget: workload.n(),
        cost1: 0.0,
        cost2: 1.0,
        method: Method::Full,
    }
}

/// TopK attention: keep the `k` largest-weight tokens (ties broken toward
/// the lower index), renormalize their weights, and average their values.
///
/// `cost1 = 0.5`: exact selection still needs every score, and the score
/// pass is the dot-product half of full attention. `cost2 = k/n`.
pub fn topk_attention(workload: &AttentionWorkload, k: usize) -> Result<AttentionEstimate> {
    let n = workload.n();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!(
            "topk requires 1 <= k <= n, got k={k}, n={n}"
        )));
    }
    let scores = workload.scores();
    let selected = top_k_indices(&scores.weights, k);
    let total: f64 = selected.iter().map(|&i| scores.weights[i]).sum();
    let output = weighted_value_sum(
        workload,
        selected.iter().map(|&i| (i, scores.weights[i] / total)),
    );
    Ok(AttentionEstimate {
        output,
        unique_budget: k,
        cost1: 0.5,
        cost2: k as f64 / n as f64,
        method: Method::TopK,
    })
}

/// Indices of the `k` largest weights, ascending, ties broken toward the
/// lower index.
fn top_k_indices(weights: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // Sorting by (weight desc, index asc) makes tie-breaking explicit
    // instead of relying on sort stability.
    order.sort_by(|&a, &b| {
        weights[b]
            .partial_cmp(&weights[a])
            .expect("weights are finite")
            .then(a.cmp(&b))
    });
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

/// L2 relative error `||estimate - reference|| / ||reference||`.
pub fn relative_error(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: estimate {} vs reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let ref_norm = l2_norm(reference);
    if ref_norm == 0.0 {
        return Err(Error::DegenerateReference);
    }
    let diff_sq: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(diff_sq.sqrt() / ref_norm)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Max-shifted softmax. Returns the weights and `ln Z`.
pub fn softmax(logits: &[f64]) -> (Vec<f64>, f64) {
    debug_assert!(!logits.is_empty());
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    (weights, max + sum.ln())
}

/// `sum w_i * v_i` over `(index, weight)` pairs, accumulated in iteration
/// order so results are bit-reproducible.
pub(crate) fn weighted_value_sum(
    workload: &AttentionWorkload,
    pairs: impl Iterator<Item = (usize, f64)>,
) -> Vec<f64> {
    let mut out = vec![0.0; workload.d()];
    for (i, w) in pairs {
        for (o, v) in out.iter_mut().zip(workload.value(i)) {
            *o += w * v;
        }
    }
    out
}
