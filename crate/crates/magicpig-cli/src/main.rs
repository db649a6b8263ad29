//! Command-line harness: workload generation, estimator sweeps, the
//! worked zoo example, budget tables, and index serialization.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use magicpig::{
    budget_table, build_index, empirical_budget, gen_workload, parse_budget_config, parse_config,
    parse_index_config, parse_workload_config, run_sweep, run_sweep_with_threads, write_index,
    write_workload, zoo_demo, LshConfig, RandomSource,
};

#[derive(Parser)]
#[command(
    name = "magicpig",
    version,
    about = "Sampling-based attention estimation harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a workload and write it as a binary workload file.
    Gen(GenArgs),
    /// Run an estimator sweep over one workload and write the CSV.
    Sweep(SweepArgs),
    /// Print the worked 100-token example with its golden numbers.
    Zoo(ZooArgs),
    /// Print expected sampled fractions over a K x L grid.
    Budget(BudgetArgs),
    /// Build an LSH index over a workload's keys and serialize it.
    Index(IndexArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Workload description, flat `key = value` lines.
    #[arg(long, value_name = "path")]
    config: PathBuf,
    /// Overrides any `seed` in the config file.
    #[arg(long, value_name = "u64")]
    seed: Option<u64>,
    /// Destination workload file.
    #[arg(long, value_name = "path")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment description, flat `key = value` lines.
    #[arg(long, value_name = "path")]
    config: PathBuf,
    /// Master seed for the workload and all trials; overrides any `seed`
    /// in the config file.
    #[arg(long, value_name = "u64")]
    seed: u64,
    /// Destination CSV; stdout when omitted.
    #[arg(long, value_name = "path")]
    out: Option<PathBuf>,
    /// Worker threads. Affects speed only, never results.
    #[arg(long, value_name = "n")]
    threads: Option<usize>,
}

#[derive(Args)]
struct ZooArgs {
    /// Seed for the empirical spread measurement.
    #[arg(long, value_name = "u64")]
    seed: Option<u64>,
    /// Destination text file; stdout when omitted.
    #[arg(long, value_name = "path")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BudgetArgs {
    /// Grid description (`ks`, `ls`, `min_collisions`), optionally with a
    /// workload block and `reseeds` for a measured column.
    #[arg(long, value_name = "path")]
    config: PathBuf,
    /// Overrides any `seed` in the config file.
    #[arg(long, value_name = "u64")]
    seed: Option<u64>,
    /// Destination CSV; stdout when omitted.
    #[arg(long, value_name = "path")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IndexArgs {
    /// Workload plus hash shape (`bits_per_table`, `num_tables`,
    /// `min_collisions`).
    #[arg(long, value_name = "path")]
    config: PathBuf,
    /// Overrides any `seed` in the config file.
    #[arg(long, value_name = "u64")]
    seed: Option<u64>,
    /// Destination index file.
    #[arg(long, value_name = "path")]
    out: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen(args) => gen(args),
        Command::Sweep(args) => sweep(args),
        Command::Zoo(args) => zoo(args),
        Command::Budget(args) => budget(args),
        Command::Index(args) => index(args),
    }
}

fn read_config(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))
}

fn emit_text(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn gen(args: GenArgs) -> Result<()> {
    let mut spec = parse_workload_config(&read_config(&args.config)?)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let workload = gen_workload(&spec)?;
    write_workload(&workload, &args.out)
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    println!(
        "wrote workload n={} d={} to {}",
        workload.n(),
        workload.d(),
        args.out.display()
    );
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut cfg = parse_config(&read_config(&args.config)?)?;
    cfg.seed = args.seed;
    cfg.workload.seed = args.seed;
    let result = match args.threads {
        Some(threads) => run_sweep_with_threads(&cfg, threads)?,
        None => run_sweep(&cfg)?,
    };
    emit_text(&args.out, &result.to_csv())
}

fn zoo(args: ZooArgs) -> Result<()> {
    let report = zoo_demo(args.seed.unwrap_or(0))?;
    let mut text = report.to_string();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    emit_text(&args.out, &text)
}

fn budget(args: BudgetArgs) -> Result<()> {
    let mut cfg = parse_budget_config(&read_config(&args.config)?)?;
    if let Some(seed) = args.seed {
        if let Some(workload) = cfg.workload.as_mut() {
            workload.seed = seed;
        }
    }
    let entries = budget_table(&cfg.bits_grid, &cfg.tables_grid, cfg.min_collisions);
    let mut text = String::new();
    match &cfg.workload {
        None => {
            text.push_str("K,L,expected\n");
            for entry in &entries {
                text.push_str(&format!(
                    "{},{},{}\n",
                    entry.bits_per_table, entry.num_tables, entry.expected_fraction
                ));
            }
        }
        Some(spec) => {
            let workload = gen_workload(spec)?;
            text.push_str("K,L,expected,measured\n");
            for entry in &entries {
                let measured = empirical_budget(
                    &workload,
                    entry.bits_per_table,
                    entry.num_tables,
                    cfg.min_collisions,
                    cfg.reseeds,
                    spec.seed,
                )?;
                text.push_str(&format!(
                    "{},{},{},{}\n",
                    entry.bits_per_table, entry.num_tables, entry.expected_fraction, measured
                ));
            }
        }
    }
    emit_text(&args.out, &text)
}

fn index(args: IndexArgs) -> Result<()> {
    let mut cfg = parse_index_config(&read_config(&args.config)?)?;
    if let Some(seed) = args.seed {
        cfg.workload.seed = seed;
    }
    let workload = gen_workload(&cfg.workload)?;
    // The hyperplane seed must not replay the key stream, so the master
    // seed is passed through a derivation step instead of used raw.
    let lsh_seed = RandomSource::new(cfg.workload.seed, u64::MAX).derived_u64();
    let lsh = LshConfig::with_min_collisions(
        cfg.bits_per_table,
        cfg.num_tables,
        cfg.min_collisions,
        lsh_seed,
    )?;
    let index = build_index(workload.keys_flat(), workload.n(), workload.d(), &lsh)?;
    let file = fs::File::create(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    let mut writer = std::io::BufWriter::new(file);
    write_index(&index, &mut writer)?;
    writer.flush()?;
    println!(
        "wrote index K={} L={} over n={} keys to {}",
        cfg.bits_per_table,
        cfg.num_tables,
        workload.n(),
        args.out.display()
    );
    Ok(())
}
