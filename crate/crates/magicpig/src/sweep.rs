//! Benchmark sweeps: run a set of estimators over a budget grid against
//! one workload, aggregate relative errors over reseeded trials, and
//! serialize the results as CSV.

use rayon::prelude::*;

use crate::attention::{full_attention, relative_error, topk_attention, AttentionWorkload, Method};
use crate::error::{Error, Result};
use crate::estimator::{magicpig_run, StaticCachePolicy};
use crate::lsh::{build_index, expected_budget, query_candidates, LshConfig};
use crate::sampling::{
    oracle_estimate, oracle_sample, snis_estimate, ProposalDistribution, ProposalKind, RandomSource,
};
use crate::workload::{gen_workload, WorkloadKind, WorkloadSpec};

/// Proposal used by the self-normalized importance sampler inside sweeps.
/// `Score` is the oracle (true attention weights); `Uniform` and
/// `ScoreValueNorm` need no more than the workload itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnisProposal {
    Uniform,
    Score,
    ScoreValueNorm,
}

impl SnisProposal {
    fn as_str(&self) -> &'static str {
        match self {
            SnisProposal::Uniform => "uniform",
            SnisProposal::Score => "score",
            SnisProposal::ScoreValueNorm => "score_value_norm",
        }
    }
}

/// Full description of one sweep: the workload, which estimators to run,
/// their budget grids, and how many reseeded trials to average.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub workload: WorkloadSpec,
    pub methods: Vec<Method>,
    /// Budget fractions in (0, 1] for topk, oracle, and snis. Each maps
    /// to k or B as `max(1, round(fraction * n))`.
    pub budgets: Vec<f64>,
    /// (bits per table, number of tables) pairs for the hash estimator.
    pub kl_grid: Vec<(u32, u32)>,
    pub min_collisions: u32,
    pub policy: StaticCachePolicy,
    pub snis_proposal: SnisProposal,
    pub trials: u32,
    /// Master seed. Workload generation uses it directly; trial t of row
    /// r draws from stream `(r + 1) << 32 | t`, so rows and trials never
    /// share a stream.
    pub seed: u64,
}

/// Workload portion shared by every config schema. `try_consume` eats one
/// `key = value` pair if the key belongs to the workload; `finish`
/// resolves the accumulated keys into a spec.
struct WorkloadKeys {
    kind: Option<String>,
    n: Option<usize>,
    d: Option<usize>,
    temperature: f64,
    cone_angle: f64,
    sink_flip: bool,
    top20_mass: f64,
    path: Option<String>,
    seed: u64,
    /// Set by every workload key except `seed`, which schemas without a
    /// workload also accept.
    saw_workload_key: bool,
}

impl WorkloadKeys {
    fn new() -> Self {
        WorkloadKeys {
            kind: None,
            n: None,
            d: None,
            temperature: 1.0,
            cone_angle: 2.0,
            sink_flip: false,
            top20_mass: 0.75,
            path: None,
            seed: 0,
            saw_workload_key: false,
        }
    }

    fn try_consume(&mut self, key: &str, value: &str) -> Result<bool> {
        if key == "seed" {
            self.seed = parse_scalar(key, value)?;
            return Ok(true);
        }
        match key {
            "kind" => self.kind = Some(value.to_string()),
            "n" => self.n = Some(parse_scalar(key, value)?),
            "d" => self.d = Some(parse_scalar(key, value)?),
            "temperature" => self.temperature = parse_scalar(key, value)?,
            "cone_angle" => self.cone_angle = parse_scalar(key, value)?,
            "sink_flip" => self.sink_flip = parse_scalar(key, value)?,
            "top20_mass" => self.top20_mass = parse_scalar(key, value)?,
            "path" => self.path = Some(value.to_string()),
            _ => return Ok(false),
        }
        self.saw_workload_key = true;
        Ok(true)
    }

    fn finish(self) -> Result<WorkloadSpec> {
        let kind = self.kind.ok_or_else(|| field_err("kind", "missing"))?;
        let workload_kind = match kind.as_str() {
            "gaussian" => WorkloadKind::Gaussian,
            "cone" => WorkloadKind::Cone {
                angle: self.cone_angle,
                sink_flip: self.sink_flip,
            },
            "longtail" => WorkloadKind::Longtail {
                top20_mass: self.top20_mass,
            },
            "file" => WorkloadKind::File {
                path: self
                    .path
                    .ok_or_else(|| field_err("path", "required when kind = file"))?
                    .into(),
            },
            other => return Err(field_err("kind", format!("unknown kind `{other}`"))),
        };
        let needs_shape = !matches!(workload_kind, WorkloadKind::File { .. });
        let (n, d) = if needs_shape {
            (
                self.n.ok_or_else(|| field_err("n", "missing"))?,
                self.d.ok_or_else(|| field_err("d", "missing"))?,
            )
        } else {
            // Shape comes from the file header; these are placeholders the
            // reader overwrites.
            (self.n.unwrap_or(1), self.d.unwrap_or(1))
        };
        Ok(WorkloadSpec {
            kind: workload_kind,
            n,
            d,
            temperature: self.temperature,
            seed: self.seed,
        })
    }
}

fn field_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Splits config text into trimmed `(key, value)` pairs. Lines starting
/// with `#` and blank lines are skipped.
fn config_pairs(text: &str) -> impl Iterator<Item = Result<(&str, &str)>> {
    text.lines().filter_map(|raw| {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            return None;
        }
        Some(
            line.split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config {
                    field: line.to_string(),
                    message: "expected `key = value`".into(),
                }),
        )
    })
}

/// Parses the flat `key = value` config format. Lines starting with `#`
/// and blank lines are skipped. Unknown keys and malformed values are
/// rejected with the offending field named.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut wk = WorkloadKeys::new();
    let mut methods: Option<Vec<Method>> = None;
    let mut budgets: Vec<f64> = Vec::new();
    let mut kl_grid: Vec<(u32, u32)> = Vec::new();
    let mut min_collisions = 2u32;
    let mut policy = StaticCachePolicy::default();
    let mut snis_proposal = SnisProposal::Uniform;
    let mut trials: Option<u32> = None;

    for pair in config_pairs(text) {
        let (key, value) = pair?;
        if wk.try_consume(key, value)? {
            continue;
        }
        match key {
            "methods" => {
                let mut parsed = Vec::new();
                for item in split_list(value) {
                    parsed.push(match item {
                        "full" => Method::Full,
                        "topk" => Method::TopK,
                        "oracle" => Method::Oracle,
                        "snis" => Method::Snis,
                        "magicpig" => Method::MagicPig,
                        other => return Err(field_err(key, format!("unknown method `{other}`"))),
                    });
                }
                methods = Some(parsed);
            }
            "budgets" => {
                budgets = split_list(value)
                    .map(|item| parse_scalar(key, item))
                    .collect::<Result<_>>()?;
            }
            "kl_grid" => {
                kl_grid = split_list(value)
                    .map(|item| {
                        let (k, l) = item.split_once('x').ok_or_else(|| {
                            field_err(key, format!("expected `KxL`, got `{item}`"))
                        })?;
                        Ok((parse_scalar(key, k.trim())?, parse_scalar(key, l.trim())?))
                    })
                    .collect::<Result<_>>()?;
            }
            "min_collisions" => min_collisions = parse_scalar(key, value)?,
            "sink_count" => policy.sink_count = parse_scalar(key, value)?,
            "local_window" => policy.local_window = parse_scalar(key, value)?,
            "snis_proposal" => {
                snis_proposal = match value {
                    "uniform" => SnisProposal::Uniform,
                    "score" => SnisProposal::Score,
                    "score_value_norm" => SnisProposal::ScoreValueNorm,
                    other => return Err(field_err(key, format!("unknown proposal `{other}`"))),
                };
            }
            "trials" => trials = Some(parse_scalar(key, value)?),
            other => return Err(field_err(other, "unknown key")),
        }
    }

    let seed = wk.seed;
    let workload = wk.finish()?;

    let methods = methods.ok_or_else(|| field_err("methods", "missing"))?;
    if methods.is_empty() {
        return Err(field_err("methods", "must name at least one method"));
    }
    let trials = trials.ok_or_else(|| field_err("trials", "missing"))?;
    if trials == 0 {
        return Err(field_err("trials", "must be at least 1"));
    }
    for &b in &budgets {
        if !(b.is_finite() && b > 0.0 && b <= 1.0) {
            return Err(field_err("budgets", format!("fraction {b} outside (0, 1]")));
        }
    }
    let budget_methods = methods
        .iter()
        .any(|m| matches!(m, Method::TopK | Method::Oracle | Method::Snis));
    if budget_methods && budgets.is_empty() {
        return Err(field_err("budgets", "required for topk, oracle, and snis"));
    }
    if methods.contains(&Method::MagicPig) && kl_grid.is_empty() {
        return Err(field_err("kl_grid", "required for magicpig"));
    }

    Ok(ExperimentConfig {
        workload,
        methods,
        budgets,
        kl_grid,
        min_collisions,
        policy,
        snis_proposal,
        trials,
        seed,
    })
}

/// Parses a config holding only workload keys: `kind`, `n`, `d`,
/// `temperature`, `cone_angle`, `sink_flip`, `top20_mass`, `path`, and
/// `seed`. The sweep format is a superset of this schema.
pub fn parse_workload_config(text: &str) -> Result<WorkloadSpec> {
    let mut wk = WorkloadKeys::new();
    for pair in config_pairs(text) {
        let (key, value) = pair?;
        if !wk.try_consume(key, value)? {
            return Err(field_err(key, "unknown key"));
        }
    }
    wk.finish()
}

/// Grid description for the budget table. `ks` and `ls` are the two axes
/// and `min_collisions` applies to every cell. A workload block (`kind`
/// plus its keys) and `reseeds` are optional; with a workload present the
/// table can carry a measured column next to the theoretical one.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetConfig {
    pub bits_grid: Vec<u32>,
    pub tables_grid: Vec<u32>,
    pub min_collisions: u32,
    pub workload: Option<WorkloadSpec>,
    pub reseeds: u32,
}

pub fn parse_budget_config(text: &str) -> Result<BudgetConfig> {
    let mut wk = WorkloadKeys::new();
    let mut bits_grid: Vec<u32> = Vec::new();
    let mut tables_grid: Vec<u32> = Vec::new();
    let mut min_collisions = 2u32;
    let mut reseeds = 32u32;

    for pair in config_pairs(text) {
        let (key, value) = pair?;
        if wk.try_consume(key, value)? {
            continue;
        }
        match key {
            "ks" => {
                bits_grid = split_list(value)
                    .map(|item| parse_scalar(key, item))
                    .collect::<Result<_>>()?;
            }
            "ls" => {
                tables_grid = split_list(value)
                    .map(|item| parse_scalar(key, item))
                    .collect::<Result<_>>()?;
            }
            "min_collisions" => min_collisions = parse_scalar(key, value)?,
            "reseeds" => reseeds = parse_scalar(key, value)?,
            other => return Err(field_err(other, "unknown key")),
        }
    }

    if bits_grid.is_empty() {
        return Err(field_err("ks", "missing"));
    }
    if tables_grid.is_empty() {
        return Err(field_err("ls", "missing"));
    }
    if reseeds == 0 {
        return Err(field_err("reseeds", "must be at least 1"));
    }
    let workload = if wk.kind.is_some() {
        Some(wk.finish()?)
    } else if wk.saw_workload_key {
        return Err(field_err("kind", "missing"));
    } else {
        None
    };
    Ok(BudgetConfig {
        bits_grid,
        tables_grid,
        min_collisions,
        workload,
        reseeds,
    })
}

/// One workload plus one hash shape, for building a serializable index.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexConfig {
    pub workload: WorkloadSpec,
    pub bits_per_table: u32,
    pub num_tables: u32,
    pub min_collisions: u32,
}

pub fn parse_index_config(text: &str) -> Result<IndexConfig> {
    let mut wk = WorkloadKeys::new();
    let mut bits_per_table: Option<u32> = None;
    let mut num_tables: Option<u32> = None;
    let mut min_collisions = 2u32;

    for pair in config_pairs(text) {
        let (key, value) = pair?;
        if wk.try_consume(key, value)? {
            continue;
        }
        match key {
            "bits_per_table" => bits_per_table = Some(parse_scalar(key, value)?),
            "num_tables" => num_tables = Some(parse_scalar(key, value)?),
            "min_collisions" => min_collisions = parse_scalar(key, value)?,
            other => return Err(field_err(other, "unknown key")),
        }
    }

    Ok(IndexConfig {
        workload: wk.finish()?,
        bits_per_table: bits_per_table.ok_or_else(|| field_err("bits_per_table", "missing"))?,
        num_tables: num_tables.ok_or_else(|| field_err("num_tables", "missing"))?,
        min_collisions,
    })
}

fn split_list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_scalar<T: std::str::FromStr>(field: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Error::Config {
        field: field.to_string(),
        message: format!("cannot parse `{value}`: {e}"),
    })
}

/// One aggregated sweep row.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: String,
    /// Method-specific settings, `;`-separated so the CSV needs no
    /// quoting (for example `K=10;L=150`).
    pub config: String,
    /// Requested budget fraction. For the hash estimator this is the
    /// theoretical expected sampled fraction; the realized mean fraction
    /// lands in `cost2`.
    pub budget: f64,
    pub err_mean: f64,
    pub err_std: f64,
    pub cost1: f64,
    pub cost2: f64,
    pub trials: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

const CSV_HEADER: &str = "method,config,budget,err_mean,err_std,cost1,cost2,trials";

impl SweepResult {
    /// Serializes with `{}` float formatting, which round-trips f64
    /// exactly through `from_csv`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                row.method,
                row.config,
                row.budget,
                row.err_mean,
                row.err_std,
                row.cost1,
                row.cost2,
                row.trials
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<SweepResult> {
        let mut lines = text.lines();
        match lines.next() {
            Some(header) if header.trim_end() == CSV_HEADER => {}
            other => {
                return Err(Error::InvalidInput(format!(
                    "bad CSV header: expected `{CSV_HEADER}`, got {other:?}"
                )))
            }
        }
        let mut rows = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 8 {
                return Err(Error::InvalidInput(format!(
                    "CSV row {}: expected 8 fields, got {}",
                    idx + 2,
                    fields.len()
                )));
            }
            let num = |what: &str, s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|e| Error::InvalidInput(format!("CSV row {}, {what}: {e}", idx + 2)))
            };
            rows.push(SweepRow {
                method: fields[0].to_string(),
                config: fields[1].to_string(),
                budget: num("budget", fields[2])?,
                err_mean: num("err_mean", fields[3])?,
                err_std: num("err_std", fields[4])?,
                cost1: num("cost1", fields[5])?,
                cost2: num("cost2", fields[6])?,
                trials: fields[7].parse().map_err(|e| {
                    Error::InvalidInput(format!("CSV row {}, trials: {e}", idx + 2))
                })?,
            });
        }
        Ok(SweepResult { rows })
    }
}

struct RowPlan {
    method: Method,
    config: String,
    budget: f64,
    samples: SampleCount,
}

enum SampleCount {
    TopK(usize),
    Draws(u32),
    Hash { k: u32, l: u32 },
    None,
}

/// Runs the sweep on the global thread pool.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    run_sweep_inner(config)
}

/// Runs the sweep on a dedicated pool of `threads` workers. Thread count
/// affects wall time only: per-trial randomness is keyed by (row, trial)
/// stream ids and aggregation walks trials in index order, so the result
/// is identical for any thread count.
pub fn run_sweep_with_threads(config: &ExperimentConfig, threads: usize) -> Result<SweepResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot build thread pool: {e}")))?;
    pool.install(|| run_sweep_inner(config))
}

fn run_sweep_inner(config: &ExperimentConfig) -> Result<SweepResult> {
    let workload = gen_workload(&config.workload)?;
    let n = workload.n();
    let full = full_attention(&workload);
    let scores = workload.scores();

    let proposal = if config.methods.contains(&Method::Snis) {
        Some(match config.snis_proposal {
            SnisProposal::Uniform => ProposalDistribution::uniform(n),
            SnisProposal::Score => {
                ProposalDistribution::from_workload(ProposalKind::AttentionScore, &workload)?
            }
            SnisProposal::ScoreValueNorm => {
                ProposalDistribution::from_workload(ProposalKind::ScoreValueNorm, &workload)?
            }
        })
    } else {
        None
    };

    let mut plans: Vec<RowPlan> = Vec::new();
    for &method in &config.methods {
        match method {
            Method::Full => plans.push(RowPlan {
                method,
                config: String::new(),
                budget: 1.0,
                samples: SampleCount::None,
            }),
            Method::TopK | Method::Oracle | Method::Snis => {
                for &fraction in &config.budgets {
                    let count = ((fraction * n as f64).round() as usize).clamp(1, n);
                    let (cfg, samples) = match method {
                        Method::TopK => (format!("k={count}"), SampleCount::TopK(count)),
                        Method::Oracle => (format!("B={count}"), SampleCount::Draws(count as u32)),
                        Method::Snis => (
                            format!("B={count};proposal={}", config.snis_proposal.as_str()),
                            SampleCount::Draws(count as u32),
                        ),
                        _ => unreachable!(),
                    };
                    plans.push(RowPlan {
                        method,
                        config: cfg,
                        budget: fraction,
                        samples,
                    });
                }
            }
            Method::MagicPig => {
                for &(k, l) in &config.kl_grid {
                    plans.push(RowPlan {
                        method,
                        config: format!("K={k};L={l};mc={}", config.min_collisions),
                        budget: expected_budget(k, l, config.min_collisions),
                        samples: SampleCount::Hash { k, l },
                    });
                }
            }
        }
    }

    let mut rows = Vec::with_capacity(plans.len());
    for (row_idx, plan) in plans.iter().enumerate() {
        let stream_base = ((row_idx as u64) + 1) << 32;
        let per_trial: Vec<(f64, f64, f64)> = (0..config.trials)
            .into_par_iter()
            .map(|trial| -> Result<(f64, f64, f64)> {
                let rs = RandomSource::new(config.seed, stream_base | trial as u64);
                let estimate = match (&plan.samples, plan.method) {
                    (SampleCount::None, Method::Full) => full_attention(&workload),
                    (SampleCount::TopK(k), Method::TopK) => topk_attention(&workload, *k)?,
                    (SampleCount::Draws(b), Method::Oracle) => {
                        let draws = oracle_sample(&scores.weights, *b, &rs)?;
                        oracle_estimate(&workload, &draws)?
                    }
                    (SampleCount::Draws(b), Method::Snis) => snis_estimate(
                        &workload,
                        proposal.as_ref().expect("proposal built for snis"),
                        *b,
                        &rs,
                    )?,
                    (SampleCount::Hash { k, l }, Method::MagicPig) => {
                        let lsh = LshConfig::with_min_collisions(
                            *k,
                            *l,
                            config.min_collisions,
                            rs.derived_u64(),
                        )?;
                        magicpig_run(&workload, &lsh, &config.policy)?.estimate
                    }
                    _ => unreachable!("plan and method always agree"),
                };
                let err = relative_error(&estimate.output, &full.output)?;
                Ok((err, estimate.cost1, estimate.cost2))
            })
            .collect::<Result<_>>()?;

        let t = per_trial.len() as f64;
        let err_mean = per_trial.iter().map(|r| r.0).sum::<f64>() / t;
        let err_std = if per_trial.len() > 1 {
            let ss = per_trial
                .iter()
                .map(|r| (r.0 - err_mean).powi(2))
                .sum::<f64>();
            (ss / (t - 1.0)).sqrt()
        } else {
            0.0
        };
        rows.push(SweepRow {
            method: plan.method.as_str().to_string(),
            config: plan.config.clone(),
            budget: plan.budget,
            err_mean,
            err_std,
            cost1: per_trial.iter().map(|r| r.1).sum::<f64>() / t,
            cost2: per_trial.iter().map(|r| r.2).sum::<f64>() / t,
            trials: config.trials,
        });
    }
    Ok(SweepResult { rows })
}

/// One row of the theoretical budget table.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetEntry {
    pub bits_per_table: u32,
    pub num_tables: u32,
    pub expected_fraction: f64,
}

/// Theoretical expected sampled fraction over a (K, L) grid, assuming
/// query-key angles are uniform (collision chance 1/2 per hyperplane).
pub fn budget_table(ks: &[u32], ls: &[u32], min_collisions: u32) -> Vec<BudgetEntry> {
    let mut entries = Vec::with_capacity(ks.len() * ls.len());
    for &k in ks {
        for &l in ls {
            entries.push(BudgetEntry {
                bits_per_table: k,
                num_tables: l,
                expected_fraction: expected_budget(k, l, min_collisions),
            });
        }
    }
    entries
}

/// Measures the realized sampled fraction on a concrete workload: builds
/// `reseeds` independent indexes over all keys and averages
/// `|candidates| / n`. No static partition is applied; this isolates the
/// hash stage.
pub fn empirical_budget(
    workload: &AttentionWorkload,
    bits_per_table: u32,
    num_tables: u32,
    min_collisions: u32,
    reseeds: u32,
    seed: u64,
) -> Result<f64> {
    if reseeds == 0 {
        return Err(Error::InvalidInput("reseeds must be at least 1".into()));
    }
    let mut total = 0.0;
    for r in 0..reseeds {
        let rs = RandomSource::new(seed, r as u64);
        let cfg = LshConfig::with_min_collisions(
            bits_per_table,
            num_tables,
            min_collisions,
            rs.derived_u64(),
        )?;
        let index = build_index(workload.keys_flat(), workload.n(), workload.d(), &cfg)?;
        let candidates = query_candidates(&index, workload.query());
        total += candidates.len() as f64 / workload.n() as f64;
    }
    Ok(total / reseeds as f64)
}
