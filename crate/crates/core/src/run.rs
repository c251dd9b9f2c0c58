//! Runs: scenario in, result files out.
//!
//! Every CSV this module writes starts with the same provenance line,
//! `# seed=<n> scenario_sha256=<hex>`, so any result file can be traced
//! back to the exact input that produced it.

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::collector::COLLECTOR_HEADER;
use crate::engine::{CallbackAction, FatalError, MachineConfig, Sim};
use crate::gpio::LineId;
use crate::noise::NoiseProfile;
use crate::rcu::CallerId;
use crate::scenario::{CallbackSpec, ModeSpec, Scenario, ScenarioError, WorkloadSpec};
use crate::stats::{export_persistence, summarize, LatencyStats, PERSISTENCE_HEADER};
use crate::time::{CoreId, SimTime, MAX_SIM_NS};
use crate::trace::{Trace, TRACE_HEADER};
use crate::workloads::{
    CrossCoreCfg, DetectMode, GpioResponseCfg, IpcCfg, Workload,
};

pub const STATS_HEADER: &str = "scenario,mode,count,min_ns,max_ns,jitter_ns";
pub const BENCH_HEADER: &str = "mode,loops,roundtrips,count,min_ns,max_ns,jitter_ns";

#[derive(Debug)]
pub enum RunError {
    Io(io::Error),
    Scenario(ScenarioError),
    Fatal(FatalError),
    MissingRun(PathBuf),
    BadStats { path: PathBuf, reason: String },
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Io(e) => write!(f, "{e}"),
            RunError::Scenario(e) => write!(f, "{e}"),
            RunError::Fatal(e) => write!(f, "run aborted: {e}"),
            RunError::MissingRun(p) => write!(f, "no run results at {}", p.display()),
            RunError::BadStats { path, reason } => {
                write!(f, "{}: {reason}", path.display())
            }
        }
    }
}

impl std::error::Error for RunError {}

impl From<io::Error> for RunError {
    fn from(e: io::Error) -> RunError {
        RunError::Io(e)
    }
}

impl From<ScenarioError> for RunError {
    fn from(e: ScenarioError) -> RunError {
        RunError::Scenario(e)
    }
}

impl From<FatalError> for RunError {
    fn from(e: FatalError) -> RunError {
        RunError::Fatal(e)
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub seed_override: Option<u64>,
    pub duration_override: Option<u64>,
    pub write_trace: bool,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> RunOptions {
        RunOptions {
            out_dir: out_dir.into(),
            seed_override: None,
            duration_override: None,
            write_trace: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub name: String,
    pub seed: u64,
    pub seed_defaulted: bool,
    pub duration_ns: u64,
    pub scenario_sha256: String,
    pub stats: Option<LatencyStats>,
    pub scheduled_events: u64,
    pub processed_events: u64,
    pub cancelled_events: u64,
    pub gp_completions: u64,
    pub blocked_sync_callers: usize,
    pub stale_tlb_hits: u64,
    pub out_dir: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

fn preamble(seed: u64, sha: &str) -> String {
    format!("# seed={seed} scenario_sha256={sha}")
}

/// Construct the machine a scenario describes. Deterministic: insertion
/// orders follow file order, so equal files give equal machines.
pub fn build_sim(sc: &Scenario, seed: u64, trace: Trace) -> Sim {
    let mut cfg = MachineConfig::new(sc.n_cores, seed);
    cfg.noise = NoiseProfile {
        tick_period_ns: sc.noise.tick_period_ns,
        tick_cost: sc.noise.tick_cost,
        ipi_interval_ns: sc.noise.ipi_interval_ns,
        ipi_cost: sc.noise.ipi_cost,
        rtb_period_ns: sc.noise.rtb_period_ns,
        rtb_cost: sc.noise.rtb_cost,
    };
    cfg.ipi_costs.resched = sc.noise.ipi_cost;
    cfg.wire_delay_ns = sc.wire_delay_ns;
    cfg.tick_item_cost_ns = sc.tick_item_cost_ns;
    cfg.deferred_capacity = sc.deferred_capacity as usize;
    cfg.cached_freq_khz = sc.cached_freq_khz;
    cfg.rcu_kthread_gated = sc.rcu_gated;
    cfg.rcu_placement_fix = sc.rcu_placement_fix;
    cfg.kthread_pref = sc.kthread_pref.iter().map(|&c| CoreId(c)).collect();
    cfg.stale_tlb_diagnostic = sc.stale_tlb_diagnostic;
    cfg.n_gpio_lines = (sc.max_line() + 1).max(4);
    cfg.keep_gpio_log = false;

    let mut sim = Sim::with_trace(cfg, trace);

    for ch in &sc.channels {
        let id = sim
            .add_channel(ch.capacity, CoreId(ch.producer), CoreId(ch.consumer), ch.hop_delay_ns)
            .expect("validated channel");
        match ch.callback {
            CallbackSpec::None => {}
            CallbackSpec::Count => {
                sim.register_callback(id, CallbackAction::Count);
            }
            CallbackSpec::Toggle(line) => {
                sim.register_callback(id, CallbackAction::ToggleGpio(LineId(line)));
            }
        }
    }

    for iso in &sc.isolations {
        sim.spawn_workload(Workload::IsolDriver {
            core: CoreId(iso.core),
            mask: iso.mask,
            start_at: SimTime::from_ns(iso.start_ns),
            stop_at: SimTime::from_ns(iso.stop_ns),
            tick_period_ns: iso.tick_period_ns,
            ticks: 0,
            drained: 0,
        });
    }

    for w in &sc.workloads {
        match *w {
            WorkloadSpec::GpioResponse {
                core,
                input,
                output,
                mode,
                cost_ns,
                period_ns,
                jitter_ns,
                count,
                start_ns,
            } => {
                let mode = match mode {
                    ModeSpec::Poll { granularity_ns } => DetectMode::Poll { granularity_ns },
                    ModeSpec::Irq { irq_cost_ns } => DetectMode::Irq { handler_cost_ns: irq_cost_ns },
                };
                sim.spawn_workload(Workload::GpioResponse {
                    cfg: GpioResponseCfg {
                        core: CoreId(core),
                        input: LineId(input),
                        output: LineId(output),
                        mode,
                        response_cost_ns: cost_ns,
                        period_ns,
                        jitter_ns,
                        count,
                        start_at: SimTime::from_ns(start_ns),
                    },
                    edges_sent: 0,
                    recorded: 0,
                });
            }
            WorkloadSpec::CounterToggle { core, line, period_ns, start_ns } => {
                sim.spawn_workload(Workload::CounterToggle {
                    core: CoreId(core),
                    line: LineId(line),
                    period_ns,
                    start_at: SimTime::from_ns(start_ns),
                    toggles: 0,
                    last_alloc: None,
                    quiescent_reports: 0,
                });
            }
            WorkloadSpec::CrossCore {
                detector,
                responder,
                input,
                output,
                granularity_ns,
                period_ns,
                jitter_ns,
                count,
                start_ns,
            } => {
                sim.spawn_workload(Workload::CrossCore {
                    cfg: CrossCoreCfg {
                        detector: CoreId(detector),
                        responder: CoreId(responder),
                        input: LineId(input),
                        output: LineId(output),
                        granularity_ns,
                        period_ns,
                        jitter_ns,
                        count,
                        start_at: SimTime::from_ns(start_ns),
                    },
                    callback: None,
                    edges_sent: 0,
                    recorded: 0,
                });
            }
            WorkloadSpec::IpcPingPong {
                core_a,
                core_b,
                capacity,
                hop_delay_ns,
                payload_len,
                rounds,
                gap_ns,
                start_ns,
            } => {
                let ping = sim
                    .add_channel(capacity, CoreId(core_a), CoreId(core_b), hop_delay_ns)
                    .expect("validated channel");
                let pong = sim
                    .add_channel(capacity, CoreId(core_b), CoreId(core_a), hop_delay_ns)
                    .expect("validated channel");
                sim.spawn_workload(Workload::IpcPingPong {
                    cfg: IpcCfg {
                        ping,
                        pong,
                        core_a: CoreId(core_a),
                        core_b: CoreId(core_b),
                        payload_len: payload_len as usize,
                        rounds,
                        gap_ns,
                        hop_delay_ns,
                        start_at: SimTime::from_ns(start_ns),
                    },
                    rounds_done: 0,
                    recorded: 0,
                });
            }
            WorkloadSpec::RcuSync { at_ns, caller } => {
                sim.spawn_workload(Workload::RcuSyncer {
                    at: SimTime::from_ns(at_ns),
                    caller: CallerId(caller),
                    fired: false,
                });
            }
        }
    }

    if sc.noise.ipi_interval_ns > 0 {
        for c in 0..sc.n_cores {
            sim.spawn_workload(Workload::IpiNoise {
                src: CoreId(c),
                dst: CoreId((c + 1) % sc.n_cores),
                interval_ns: sc.noise.ipi_interval_ns,
                sent: 0,
            });
        }
    }

    sim
}

pub fn run_file(path: &Path, opts: &RunOptions) -> Result<RunReport, RunError> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    let text = String::from_utf8(raw.clone()).map_err(|e| {
        RunError::Scenario(ScenarioError::Parse {
            line: 0,
            reason: format!("scenario file is not UTF-8: {e}"),
        })
    })?;
    let sc = Scenario::parse(&text)?;
    sc.validate()?;
    execute(&sc, &sha256_hex(&raw), opts)
}

pub fn execute(sc: &Scenario, sha: &str, opts: &RunOptions) -> Result<RunReport, RunError> {
    let seed = opts.seed_override.or(sc.seed).unwrap_or(0);
    let seed_defaulted = opts.seed_override.is_none() && sc.seed.is_none();
    let duration_ns = opts.duration_override.unwrap_or(sc.duration_ns).min(MAX_SIM_NS);
    fs::create_dir_all(&opts.out_dir)?;

    let head = preamble(seed, sha);
    let trace = if opts.write_trace {
        let mut f = BufWriter::new(File::create(opts.out_dir.join("trace.csv"))?);
        writeln!(f, "{head}")?;
        writeln!(f, "{TRACE_HEADER}")?;
        Trace::streaming(Box::new(f))
    } else {
        Trace::counting_only()
    };

    let mut sim = build_sim(sc, seed, trace);
    sim.run_until(SimTime::from_ns(duration_ns))?;
    sim.check_quiesced()?;
    sim.trace.flush()?;
    if let Some(e) = sim.trace.take_io_error() {
        return Err(RunError::Io(e));
    }

    let stats = summarize(sim.samples()).ok();

    // stats.csv: the one-row roll-up comparisons read.
    {
        let mut f = BufWriter::new(File::create(opts.out_dir.join("stats.csv"))?);
        writeln!(f, "{head}")?;
        writeln!(f, "{STATS_HEADER}")?;
        match &stats {
            Some(s) => writeln!(
                f,
                "{},sim,{},{},{},{}",
                sc.name,
                s.count,
                s.min_ns,
                s.max_ns,
                s.jitter_ns()
            )?,
            None => writeln!(f, "{},sim,0,0,0,0", sc.name)?,
        }
        f.flush()?;
    }

    // persistence.csv: the latency histogram.
    match &stats {
        Some(s) => export_persistence(s, &opts.out_dir.join("persistence.csv"), &head)?,
        None => {
            let mut f = BufWriter::new(File::create(opts.out_dir.join("persistence.csv"))?);
            writeln!(f, "{head}")?;
            writeln!(f, "{PERSISTENCE_HEADER}")?;
            f.flush()?;
        }
    }

    // collector.csv: blocked/deferred/delivered interference counters.
    {
        let mut f = BufWriter::new(File::create(opts.out_dir.join("collector.csv"))?);
        writeln!(f, "{head}")?;
        writeln!(f, "{COLLECTOR_HEADER}")?;
        f.write_all(sim.collector.csv_rows().as_bytes())?;
        f.flush()?;
    }

    let report = RunReport {
        name: sc.name.clone(),
        seed,
        seed_defaulted,
        duration_ns,
        scenario_sha256: sha.to_string(),
        stats,
        scheduled_events: sim.scheduled_events(),
        processed_events: sim.trace.counters.processed_events,
        cancelled_events: sim.cancelled_events(),
        gp_completions: sim.rcu.gp_seq,
        blocked_sync_callers: sim.rcu.waiters.len(),
        stale_tlb_hits: sim.stale_tlb_hits,
        out_dir: opts.out_dir.clone(),
    };

    // summary.txt: the human-readable run digest.
    {
        let mut f = BufWriter::new(File::create(opts.out_dir.join("summary.txt"))?);
        writeln!(f, "scenario: {}", report.name)?;
        if report.seed_defaulted {
            writeln!(f, "seed: 0 (scenario omitted it)")?;
        } else {
            writeln!(f, "seed: {}", report.seed)?;
        }
        writeln!(f, "scenario_sha256: {sha}")?;
        writeln!(f, "duration_ns: {}", report.duration_ns)?;
        match sc.stimulus_period_ns() {
            Some(p) => writeln!(f, "stimulus_period_ns: {p}")?,
            None => writeln!(f, "stimulus_period_ns: -")?,
        }
        writeln!(
            f,
            "events: scheduled={} processed={} cancelled={}",
            report.scheduled_events, report.processed_events, report.cancelled_events
        )?;
        match &report.stats {
            Some(s) => writeln!(
                f,
                "samples: count={} min_ns={} max_ns={} jitter_ns={} mean_ns={:.1}",
                s.count,
                s.min_ns,
                s.max_ns,
                s.jitter_ns(),
                s.mean_ns()
            )?,
            None => writeln!(f, "samples: none")?,
        }
        for c in 0..sim.core_count() {
            let core = CoreId(c);
            writeln!(
                f,
                "core {c}: handler_occupancy_ns={} accounted_ns={} deferred_backlog={}",
                sim.handler_occupancy_ns(core),
                sim.accounted_ns(core),
                sim.deferred_backlog(core)
            )?;
        }
        writeln!(
            f,
            "rcu: grace_periods={} blocked_callers={}",
            report.gp_completions, report.blocked_sync_callers
        )?;
        for (caller, at) in &sim.completed_syncs {
            writeln!(f, "rcu_sync {caller}: completed at {at} ns")?;
        }
        for w in &sim.rcu.waiters {
            writeln!(f, "rcu_sync {}: still blocked at the horizon", w.caller)?;
        }
        writeln!(f, "tlb: stale_hits={}", report.stale_tlb_hits)?;
        f.flush()?;
    }

    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatsRow {
    pub scenario: String,
    pub mode: String,
    pub count: u64,
    pub min_ns: u64,
    pub max_ns: u64,
    pub jitter_ns: u64,
}

pub fn read_stats_row(dir: &Path) -> Result<StatsRow, RunError> {
    let path = dir.join("stats.csv");
    if !path.exists() {
        return Err(RunError::MissingRun(path));
    }
    let text = fs::read_to_string(&path)?;
    let bad = |reason: &str| RunError::BadStats { path: path.clone(), reason: reason.to_string() };
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    match lines.next() {
        Some(h) if h == STATS_HEADER => {}
        _ => return Err(bad("missing stats header")),
    }
    let row = lines.next().ok_or_else(|| bad("no data row"))?;
    let parts: Vec<&str> = row.split(',').collect();
    if parts.len() != 6 {
        return Err(bad("malformed data row"));
    }
    let num = |s: &str| s.parse::<u64>().map_err(|_| bad("malformed number"));
    Ok(StatsRow {
        scenario: parts[0].to_string(),
        mode: parts[1].to_string(),
        count: num(parts[2])?,
        min_ns: num(parts[3])?,
        max_ns: num(parts[4])?,
        jitter_ns: num(parts[5])?,
    })
}

/// Everything compare() knows about one results directory: the stats row
/// plus whatever the optional summary file adds.
#[derive(Debug, Clone)]
pub struct RunDigest {
    pub row: StatsRow,
    pub period_ns: Option<u64>,
    pub duration_ns: Option<u64>,
}

pub fn read_digest(dir: &Path) -> Result<RunDigest, RunError> {
    let row = read_stats_row(dir)?;
    let mut period_ns = None;
    let mut duration_ns = None;
    if let Ok(text) = fs::read_to_string(dir.join("summary.txt")) {
        for line in text.lines() {
            if let Some(v) = line.strip_prefix("stimulus_period_ns: ") {
                period_ns = v.trim().parse().ok();
            } else if let Some(v) = line.strip_prefix("duration_ns: ") {
                duration_ns = v.trim().parse().ok();
            }
        }
    }
    Ok(RunDigest { row, period_ns, duration_ns })
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub a: RunDigest,
    pub b: RunDigest,
}

pub fn compare(dir_a: &Path, dir_b: &Path) -> Result<Comparison, RunError> {
    Ok(Comparison { a: read_digest(dir_a)?, b: read_digest(dir_b)? })
}

fn opt(v: Option<u64>) -> String {
    v.map_or_else(|| "-".to_string(), |n| n.to_string())
}

fn ratio(num: u64, den: u64) -> String {
    if den == 0 {
        "-".to_string()
    } else {
        format!("{:.3}", num as f64 / den as f64)
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "configuration,period_ns,min_lat_ns,max_lat_ns,duration_ns")?;
        for d in [&self.a, &self.b] {
            writeln!(
                f,
                "{},{},{},{},{}",
                d.row.scenario,
                opt(d.period_ns),
                d.row.min_ns,
                d.row.max_ns,
                opt(d.duration_ns)
            )?;
        }
        writeln!(f, "jitter_ns,{},{}", self.a.row.scenario, self.a.row.jitter_ns)?;
        writeln!(f, "jitter_ns,{},{}", self.b.row.scenario, self.b.row.jitter_ns)?;
        writeln!(f, "max_ratio,b/a,{}", ratio(self.b.row.max_ns, self.a.row.max_ns))?;
        writeln!(f, "jitter_ratio,b/a,{}", ratio(self.b.row.jitter_ns, self.a.row.jitter_ns))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimBenchCfg {
    pub rounds: u64,
    pub capacity: u64,
    pub payload_len: usize,
    pub hop_delay_ns: u64,
    pub gap_ns: u64,
    pub seed: u64,
}

impl Default for SimBenchCfg {
    fn default() -> SimBenchCfg {
        SimBenchCfg {
            rounds: 10_000,
            capacity: 8,
            payload_len: 16,
            hop_delay_ns: 150,
            gap_ns: 0,
            seed: 0,
        }
    }
}

/// The simulated twin of the live ping-pong bench.
pub fn run_sim_bench(cfg: SimBenchCfg) -> Result<LatencyStats, RunError> {
    let mcfg = MachineConfig::new(2, cfg.seed);
    let mut sim = Sim::with_trace(mcfg, Trace::counting_only());
    let ping = sim.add_channel(cfg.capacity, CoreId(0), CoreId(1), cfg.hop_delay_ns).expect("fresh");
    let pong = sim.add_channel(cfg.capacity, CoreId(1), CoreId(0), cfg.hop_delay_ns).expect("fresh");
    sim.spawn_workload(Workload::IpcPingPong {
        cfg: IpcCfg {
            ping,
            pong,
            core_a: CoreId(0),
            core_b: CoreId(1),
            payload_len: cfg.payload_len,
            rounds: cfg.rounds,
            gap_ns: cfg.gap_ns,
            hop_delay_ns: cfg.hop_delay_ns,
            start_at: SimTime::ZERO,
        },
        rounds_done: 0,
        recorded: 0,
    });
    sim.run_until(SimTime::from_ns(MAX_SIM_NS))?;
    summarize(sim.samples()).map_err(|_| RunError::BadStats {
        path: PathBuf::from("(sim bench)"),
        reason: "no roundtrips completed".to_string(),
    })
}

pub fn bench_row(mode: &str, loops: u64, roundtrips: u64, stats: &LatencyStats) -> String {
    format!(
        "{mode},{loops},{roundtrips},{},{},{},{}",
        stats.count,
        stats.min_ns,
        stats.max_ns,
        stats.jitter_ns()
    )
}
