use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use operlab::harness::{self, Scenario, Seeds};
use operlab::payload::Accounting;

#[derive(Parser)]
#[command(name = "operlab", version, about = "Run OPER scenarios in the deterministic simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a scenario and print one CSV row per run
    Run {
        file: PathBuf,
        /// Run only this seed
        #[arg(long)]
        seed: Option<u64>,
        /// Write every trace into this directory
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, value_enum)]
        accounting: Option<AccountingArg>,
    },
    /// Run a scenario for several n with maximal t and report pbit_max per n
    Sweep {
        /// Comma-separated process counts
        #[arg(long = "n", value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        file: PathBuf,
        #[arg(long, value_enum)]
        accounting: Option<AccountingArg>,
    },
    /// Compare the simulated synchronous agreement with its lock-step run
    OracleSim {
        file: PathBuf,
        /// Negative control: tag every round with the same parity
        #[arg(long)]
        mutate_parity: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AccountingArg {
    Payload,
    Full,
}

impl From<AccountingArg> for Accounting {
    fn from(a: AccountingArg) -> Accounting {
        match a {
            AccountingArg::Payload => Accounting::Payload,
            AccountingArg::Full => Accounting::Full,
        }
    }
}

/// Result of a command that ran to completion.
enum Outcome {
    Ok,
    Violations,
}

fn load(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Scenario::from_json(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

fn run(file: &Path, seed: Option<u64>, trace_dir: Option<&Path>, accounting: Option<AccountingArg>) -> Result<Outcome> {
    let mut scenario = load(file)?;
    if let Some(s) = seed {
        scenario.seeds = Seeds { start: s, count: 1 };
    }
    if let Some(a) = accounting {
        scenario.accounting = a.into();
    }
    let report = harness::run_scenario(&scenario, trace_dir.is_some());
    print!("{}", report.csv());
    if let Some(dir) = trace_dir {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        for (n, seed, text) in &report.traces {
            let path = dir.join(format!("n{n}-seed{seed}.tsv"));
            fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        }
    }
    for v in &report.violations {
        eprintln!("{v}");
        for line in &v.excerpt {
            eprintln!("    {line}");
        }
    }
    Ok(if report.ok() { Outcome::Ok } else { Outcome::Violations })
}

fn sweep(file: &Path, sizes: &[usize], seeds: u64, accounting: Option<AccountingArg>) -> Result<Outcome> {
    let mut scenario = load(file)?;
    if let Some(a) = accounting {
        scenario.accounting = a.into();
    }
    if let Some(&n) = sizes.iter().find(|&&n| n < 4) {
        anyhow::bail!("sweep sizes must be at least 4, got {n}");
    }
    let report = harness::sweep(&scenario, sizes, seeds)?;
    print!("{}", report.render());
    for v in &report.runs.violations {
        eprintln!("{v}");
    }
    Ok(if report.runs.ok() { Outcome::Ok } else { Outcome::Violations })
}

fn oracle_sim(file: &Path, mutate: bool) -> Result<Outcome> {
    let scenario = load(file)?;
    let mut failed = false;
    for seed in scenario.seed_list() {
        let verdict = harness::oracle_sim(&scenario, seed, mutate);
        println!("seed {seed}: {verdict}");
        failed |= !verdict.passed();
    }
    Ok(if failed { Outcome::Violations } else { Outcome::Ok })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { file, seed, trace, accounting } => run(file, *seed, trace.as_deref(), *accounting),
        Command::Sweep { sizes, seeds, file, accounting } => sweep(file, sizes, *seeds, *accounting),
        Command::OracleSim { file, mutate_parity } => oracle_sim(file, *mutate_parity),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Violations) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
