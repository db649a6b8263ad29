//! A tiny 1-D workload with uniform attention weights and skewed values,
//! used to show why top-k selection by weight alone misses value outliers
//! while unbiased sampling does not.

use std::fmt;

use crate::attention::{full_attention, topk_attention, AttentionWorkload};
use crate::error::Result;
use crate::sampling::{oracle_estimate, oracle_sample, oracle_theoretical_stddev, RandomSource};

/// 100 tokens, all with logit 0 (uniform weights 1/100). Values: ten
/// tokens worth 50, ten worth 20, ten worth 10, and seventy worth 1.
/// The true average is 8.7.
pub fn zoo_workload() -> AttentionWorkload {
    let n = 100;
    let mut values = Vec::with_capacity(n);
    values.extend(std::iter::repeat(50.0).take(10));
    values.extend(std::iter::repeat(20.0).take(10));
    values.extend(std::iter::repeat(10.0).take(10));
    values.extend(std::iter::repeat(1.0).take(70));
    AttentionWorkload::new(vec![0.0], vec![0.0; n], values, n, 1)
        .expect("zoo workload is well formed")
}

/// Summary numbers for the demonstration. `empirical_std` is the root
/// mean squared deviation of the sampling estimator from the true
/// average over `trials` independent runs at budget 10.
#[derive(Debug, Clone, PartialEq)]
pub struct ZooReport {
    pub true_average: f64,
    pub topk37: f64,
    pub topk47: f64,
    pub theoretical_std_b10: f64,
    pub theoretical_std_b20: f64,
    pub empirical_std_b10: f64,
    pub trials: u32,
}

impl fmt::Display for ZooReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "true average:            {:.4}", self.true_average)?;
        writeln!(f, "topk(37) estimate:       {:.4}", self.topk37)?;
        writeln!(f, "topk(47) estimate:       {:.4}", self.topk47)?;
        writeln!(
            f,
            "sampling std (B=10):     {:.4} (theory)",
            self.theoretical_std_b10
        )?;
        writeln!(
            f,
            "sampling std (B=20):     {:.4} (theory)",
            self.theoretical_std_b20
        )?;
        write!(
            f,
            "sampling std (B=10):     {:.4} (empirical, {} trials)",
            self.empirical_std_b10, self.trials
        )
    }
}

/// Runs the demonstration: exact average, the two top-k truncations, the
/// closed-form sampling standard deviations at budgets 10 and 20, and an
/// empirical standard deviation at budget 10 from `10^4` reseeded runs.
pub fn zoo_demo(seed: u64) -> Result<ZooReport> {
    let workload = zoo_workload();
    let full = full_attention(&workload);
    let true_average = full.output[0];

    let topk37 = topk_attention(&workload, 37)?.output[0];
    let topk47 = topk_attention(&workload, 47)?.output[0];

    let weights = workload.scores().weights;
    let trials = 10_000u32;
    let mut sq_dev = 0.0;
    for t in 0..trials {
        let rs = RandomSource::new(seed, 1 + t as u64);
        let draws = oracle_sample(&weights, 10, &rs)?;
        let est = oracle_estimate(&workload, &draws)?.output[0];
        sq_dev += (est - true_average).powi(2);
    }

    Ok(ZooReport {
        true_average,
        topk37,
        topk47,
        theoretical_std_b10: oracle_theoretical_stddev(&workload, 10),
        theoretical_std_b20: oracle_theoretical_stddev(&workload, 20),
        empirical_std_b10: (sq_dev / trials as f64).sqrt(),
        trials,
    })
}
