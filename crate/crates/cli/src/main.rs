//! Command-line front end: run scenario files, compare finished runs, and
//! benchmark the IPC ring in simulation or on live threads.

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use isoscope_core::live_bench::{run_live, BenchError, LiveBenchCfg};
use isoscope_core::run::{
    bench_row, compare, run_file, run_sim_bench, RunError, RunOptions, SimBenchCfg, BENCH_HEADER,
};

#[derive(Parser)]
#[command(name = "isoscope", about = "Deterministic CPU-isolation simulator", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario file and write the output bundle.
    Run {
        /// Scenario file to execute.
        file: PathBuf,
        /// Output directory (falls back to $ISOSCOPE_OUT, then "out").
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario's duration. Note that a shortened run
        /// fails if it cuts an isolation window in half.
        #[arg(long = "duration-ns")]
        duration_ns: Option<u64>,
        /// Skip trace.csv (counters and stats are still written).
        #[arg(long)]
        no_trace: bool,
    },
    /// Compare the stats of two finished runs, side by side.
    Compare {
        /// Directory holding the first run's bundle.
        dir_a: PathBuf,
        /// Directory holding the second run's bundle.
        dir_b: PathBuf,
    },
    /// Round-trip latency of the SPSC ring, simulated or on live threads.
    BenchIpc {
        #[arg(long, value_enum, default_value_t = BenchMode::Sim)]
        mode: BenchMode,
        /// Outer repetitions; total round trips = loops * roundtrips.
        #[arg(long, default_value_t = 100)]
        loops: u64,
        /// Round trips per loop.
        #[arg(long, default_value_t = 10_000)]
        roundtrips: u64,
        /// Pin the two live threads to these host CPUs, e.g. --pin 2,3.
        #[arg(long, value_parser = parse_pin)]
        pin: Option<(u32, u32)>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchMode {
    Sim,
    Live,
}

fn parse_pin(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| "expected two CPU ids, e.g. 2,3".to_string())?;
    let a = a.trim().parse().map_err(|e| format!("bad CPU id {a:?}: {e}"))?;
    let b = b.trim().parse().map_err(|e| format!("bad CPU id {b:?}: {e}"))?;
    Ok((a, b))
}

#[derive(Debug)]
enum CliError {
    Run(RunError),
    /// An I/O failure tied to a path the user typed.
    At(PathBuf, RunError),
    Bench(BenchError),
    BadArgs(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Run(e) => write!(f, "{e}"),
            CliError::At(p, e) => write!(f, "{}: {e}", p.display()),
            CliError::Bench(e) => write!(f, "bench-ipc: {e}"),
            CliError::BadArgs(m) => write!(f, "{m}"),
        }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> CliError {
        CliError::Run(e)
    }
}

/// 0 success, 2 bad input, 3 a run or bench died at runtime, 4 I/O.
fn code_for(e: &CliError) -> u8 {
    match e {
        CliError::Run(e) | CliError::At(_, e) => match e {
            RunError::Scenario(_) => 2,
            RunError::Fatal(_) => 3,
            RunError::Io(_) | RunError::MissingRun(_) | RunError::BadStats { .. } => 4,
        },
        CliError::Bench(_) => 3,
        CliError::BadArgs(_) => 2,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("isoscope: {e}");
            ExitCode::from(code_for(&e))
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Run { file, out, seed, duration_ns, no_trace } => {
            let out_dir = out
                .or_else(|| std::env::var_os("ISOSCOPE_OUT").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("out"));
            let mut opts = RunOptions::new(out_dir);
            opts.seed_override = seed;
            opts.duration_override = duration_ns;
            opts.write_trace = !no_trace;
            let report = run_file(&file, &opts).map_err(|e| match e {
                RunError::Io(_) => CliError::At(file.clone(), e),
                other => CliError::Run(other),
            })?;

            println!(
                "{name}: seed {seed}{defaulted}, {dur} ns simulated, {ev} events",
                name = report.name,
                seed = report.seed,
                defaulted = if report.seed_defaulted { " (default)" } else { "" },
                dur = report.duration_ns,
                ev = report.processed_events,
            );
            match &report.stats {
                Some(s) => println!(
                    "latency: {} samples, min {} ns, max {} ns, jitter {} ns",
                    s.count,
                    s.min_ns,
                    s.max_ns,
                    s.jitter_ns()
                ),
                None => println!("latency: no samples"),
            }
            if report.blocked_sync_callers > 0 {
                println!(
                    "warning: {} rcu_sync caller(s) still blocked at the horizon",
                    report.blocked_sync_callers
                );
            }
            if report.stale_tlb_hits > 0 {
                println!("warning: {} stale TLB hit(s) flagged", report.stale_tlb_hits);
            }
            println!("bundle: {}", report.out_dir.display());
            Ok(())
        }
        Cmd::Compare { dir_a, dir_b } => {
            print!("{}", compare(&dir_a, &dir_b).map_err(CliError::Run)?);
            Ok(())
        }
        Cmd::BenchIpc { mode, loops, roundtrips, pin } => {
            let total = loops.checked_mul(roundtrips).filter(|t| *t > 0).ok_or_else(|| {
                CliError::BadArgs(format!(
                    "loops ({loops}) * roundtrips ({roundtrips}) must be positive and fit in u64"
                ))
            })?;
            println!("{BENCH_HEADER}");
            match mode {
                BenchMode::Sim => {
                    if pin.is_some() {
                        eprintln!("note: --pin has no effect on the simulated bench");
                    }
                    let stats =
                        run_sim_bench(SimBenchCfg { rounds: total, ..SimBenchCfg::default() })?;
                    println!("{}", bench_row("sim", loops, roundtrips, &stats));
                }
                BenchMode::Live => {
                    let cfg = LiveBenchCfg { roundtrips: total, pin, ..LiveBenchCfg::default() };
                    let out = run_live(cfg).map_err(CliError::Bench)?;
                    if pin.is_some() && !out.pinned {
                        eprintln!("note: requested CPUs could not be pinned; ran unpinned");
                    }
                    println!("{}", bench_row("live", loops, roundtrips, &out.stats));
                }
            }
            Ok(())
        }
    }
}
