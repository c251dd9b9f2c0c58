//! Scenario files: a small line-oriented config format.
//!
//! ```text
//! # comment
//! [scenario]
//! name = isolated_gpio
//! n_cores = 2
//! duration_ns = 10000000000
//!
//! [noise]
//! tick_period_ns = 1000000
//! tick_cost = constant:70000
//!
//! [isolation]
//! core = 1
//! mask = clock|ipi
//! start_ns = 0
//! stop_ns = 10000000000
//! tick_period_ns = 100000
//!
//! [workload]
//! kind = gpio_response
//! ...
//! ```
//!
//! `[scenario]` and `[noise]` appear at most once; `[isolation]`,
//! `[workload]` and `[channel]` repeat. Unknown sections and keys are
//! parse errors, not warnings: a typo must never silently change a run.
//! `render` emits a canonical form that parses back to an equal value.

use std::collections::BTreeMap;
use std::fmt;

use crate::isolator::IsolatorMask;
use crate::noise::CostDist;
use crate::time::MAX_SIM_NS;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    Parse { line: usize, reason: String },
    Validation { field: String, reason: String },
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::Parse { line, reason } => write!(f, "line {line}: {reason}"),
            ScenarioError::Validation { field, reason } => write!(f, "{field}: {reason}"),
        }
    }
}

impl std::error::Error for ScenarioError {}

fn parse_err(line: usize, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse { line, reason: reason.into() }
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation { field: field.into(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSpec {
    pub tick_period_ns: u64,
    pub tick_cost: CostDist,
    pub ipi_interval_ns: u64,
    pub ipi_cost: CostDist,
    pub rtb_period_ns: u64,
    pub rtb_cost: CostDist,
}

impl Default for NoiseSpec {
    fn default() -> NoiseSpec {
        NoiseSpec {
            tick_period_ns: 0,
            tick_cost: CostDist::ZERO,
            ipi_interval_ns: 0,
            ipi_cost: CostDist::ZERO,
            rtb_period_ns: 0,
            rtb_cost: CostDist::ZERO,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IsolationSpec {
    pub core: u32,
    pub mask: IsolatorMask,
    pub start_ns: u64,
    pub stop_ns: u64,
    pub tick_period_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeSpec {
    Poll { granularity_ns: u64 },
    Irq { irq_cost_ns: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorkloadSpec {
    GpioResponse {
        core: u32,
        input: u32,
        output: u32,
        mode: ModeSpec,
        cost_ns: u64,
        period_ns: u64,
        jitter_ns: u64,
        count: u64,
        start_ns: u64,
    },
    CounterToggle {
        core: u32,
        line: u32,
        period_ns: u64,
        start_ns: u64,
    },
    CrossCore {
        detector: u32,
        responder: u32,
        input: u32,
        output: u32,
        granularity_ns: u64,
        period_ns: u64,
        jitter_ns: u64,
        count: u64,
        start_ns: u64,
    },
    IpcPingPong {
        core_a: u32,
        core_b: u32,
        capacity: u64,
        hop_delay_ns: u64,
        payload_len: u64,
        rounds: u64,
        gap_ns: u64,
        start_ns: u64,
    },
    RcuSync {
        at_ns: u64,
        caller: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallbackSpec {
    None,
    Count,
    Toggle(u32),
}

impl fmt::Display for CallbackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CallbackSpec::None => write!(f, "none"),
            CallbackSpec::Count => write!(f, "count"),
            CallbackSpec::Toggle(l) => write!(f, "toggle:{l}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelSpec {
    pub capacity: u64,
    pub producer: u32,
    pub consumer: u32,
    pub hop_delay_ns: u64,
    pub callback: CallbackSpec,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub n_cores: u32,
    /// None means the file omitted the key; runs then use 0 and say so.
    pub seed: Option<u64>,
    pub duration_ns: u64,
    pub wire_delay_ns: u64,
    pub tick_item_cost_ns: u64,
    pub deferred_capacity: u64,
    pub cached_freq_khz: u64,
    pub rcu_gated: bool,
    pub rcu_placement_fix: bool,
    pub kthread_pref: Vec<u32>,
    pub stale_tlb_diagnostic: bool,
    pub noise: NoiseSpec,
    pub isolations: Vec<IsolationSpec>,
    pub workloads: Vec<WorkloadSpec>,
    pub channels: Vec<ChannelSpec>,
}

impl Default for Scenario {
    fn default() -> Scenario {
        Scenario {
            name: String::new(),
            n_cores: 2,
            seed: None,
            duration_ns: 1_000_000,
            wire_delay_ns: 0,
            tick_item_cost_ns: 0,
            deferred_capacity: 4096,
            cached_freq_khz: 2_400_000,
            rcu_gated: true,
            rcu_placement_fix: true,
            kthread_pref: Vec::new(),
            stale_tlb_diagnostic: true,
            noise: NoiseSpec::default(),
            isolations: Vec::new(),
            workloads: Vec::new(),
            channels: Vec::new(),
        }
    }
}

/// One section's raw key/value pairs, each remembering its line number.
struct Section {
    name: String,
    header_line: usize,
    entries: BTreeMap<String, (usize, String)>,
}

impl Section {
    /// Consume a key; None when absent.
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn take_or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T, ScenarioError> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => v
                .parse()
                .map_err(|_| parse_err(line, format!("bad value for {key}: {v:?}"))),
        }
    }

    fn require<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, ScenarioError> {
        match self.take(key) {
            None => Err(parse_err(
                self.header_line,
                format!("[{}] section is missing key {key}", self.name),
            )),
            Some((line, v)) => v
                .parse()
                .map_err(|_| parse_err(line, format!("bad value for {key}: {v:?}"))),
        }
    }

    fn reject_leftovers(&self) -> Result<(), ScenarioError> {
        if let Some((key, (line, _))) = self.entries.iter().next() {
            return Err(parse_err(
                *line,
                format!("unknown key {key:?} in [{}] section", self.name),
            ));
        }
        Ok(())
    }
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, ScenarioError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(parse_err(line, format!("{key} must be true or false, got {v:?}"))),
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        // Pass 1: split into sections.
        let mut sections: Vec<Section> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let Some(name) = name.strip_suffix(']') else {
                    return Err(parse_err(lineno, format!("malformed section header {line:?}")));
                };
                match name {
                    "scenario" | "noise" | "isolation" | "workload" | "channel" => {}
                    _ => return Err(parse_err(lineno, format!("unknown section [{name}]"))),
                }
                sections.push(Section {
                    name: name.to_string(),
                    header_line: lineno,
                    entries: BTreeMap::new(),
                });
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(parse_err(lineno, format!("expected key = value, got {line:?}")));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            let Some(section) = sections.last_mut() else {
                return Err(parse_err(lineno, "key outside any section"));
            };
            if section.entries.insert(key.clone(), (lineno, value)).is_some() {
                return Err(parse_err(lineno, format!("duplicate key {key:?}")));
            }
        }

        // Pass 2: typed conversion.
        let mut sc = Scenario::default();
        let mut saw_scenario = false;
        let mut saw_noise = false;
        for mut s in sections {
            match s.name.as_str() {
                "scenario" => {
                    if saw_scenario {
                        return Err(parse_err(s.header_line, "duplicate [scenario] section"));
                    }
                    saw_scenario = true;
                    sc.name = s.require("name")?;
                    sc.n_cores = s.require("n_cores")?;
                    sc.duration_ns = s.require("duration_ns")?;
                    sc.seed = match s.take("seed") {
                        None => None,
                        Some((line, v)) => Some(
                            v.parse()
                                .map_err(|_| parse_err(line, format!("bad value for seed: {v:?}")))?,
                        ),
                    };
                    sc.wire_delay_ns = s.take_or("wire_delay_ns", sc.wire_delay_ns)?;
                    sc.tick_item_cost_ns = s.take_or("tick_item_cost_ns", sc.tick_item_cost_ns)?;
                    sc.deferred_capacity = s.take_or("deferred_capacity", sc.deferred_capacity)?;
                    sc.cached_freq_khz = s.take_or("cached_freq_khz", sc.cached_freq_khz)?;
                    if let Some((line, v)) = s.take("rcu_gated") {
                        sc.rcu_gated = parse_bool(line, "rcu_gated", &v)?;
                    }
                    if let Some((line, v)) = s.take("rcu_placement_fix") {
                        sc.rcu_placement_fix = parse_bool(line, "rcu_placement_fix", &v)?;
                    }
                    if let Some((line, v)) = s.take("stale_tlb_diagnostic") {
                        sc.stale_tlb_diagnostic = parse_bool(line, "stale_tlb_diagnostic", &v)?;
                    }
                    if let Some((line, v)) = s.take("kthread_pref") {
                        sc.kthread_pref = v
                            .split(',')
                            .map(|p| {
                                p.trim().parse().map_err(|_| {
                                    parse_err(line, format!("bad core id {p:?} in kthread_pref"))
                                })
                            })
                            .collect::<Result<_, _>>()?;
                    }
                    s.reject_leftovers()?;
                }
                "noise" => {
                    if saw_noise {
                        return Err(parse_err(s.header_line, "duplicate [noise] section"));
                    }
                    saw_noise = true;
                    sc.noise.tick_period_ns = s.take_or("tick_period_ns", 0)?;
                    sc.noise.tick_cost = s.take_or("tick_cost", CostDist::ZERO)?;
                    sc.noise.ipi_interval_ns = s.take_or("ipi_interval_ns", 0)?;
                    sc.noise.ipi_cost = s.take_or("ipi_cost", CostDist::ZERO)?;
                    sc.noise.rtb_period_ns = s.take_or("rtb_period_ns", 0)?;
                    sc.noise.rtb_cost = s.take_or("rtb_cost", CostDist::ZERO)?;
                    s.reject_leftovers()?;
                }
                "isolation" => {
                    let mask = {
                        let (line, v) = s.take("mask").ok_or_else(|| {
                            parse_err(s.header_line, "[isolation] section is missing key mask")
                        })?;
                        IsolatorMask::parse(&v)
                            .ok_or_else(|| parse_err(line, format!("bad mask {v:?}")))?
                    };
                    let iso = IsolationSpec {
                        core: s.require("core")?,
                        mask,
                        start_ns: s.require("start_ns")?,
                        stop_ns: s.require("stop_ns")?,
                        tick_period_ns: s.require("tick_period_ns")?,
                    };
                    s.reject_leftovers()?;
                    sc.isolations.push(iso);
                }
                "workload" => {
                    let w = parse_workload(&mut s)?;
                    s.reject_leftovers()?;
                    sc.workloads.push(w);
                }
                "channel" => {
                    let callback = match s.take("callback") {
                        None => CallbackSpec::None,
                        Some((line, v)) => parse_callback(line, &v)?,
                    };
                    let ch = ChannelSpec {
                        capacity: s.require("capacity")?,
                        producer: s.require("producer")?,
                        consumer: s.require("consumer")?,
                        hop_delay_ns: s.take_or("hop_delay_ns", 0)?,
                        callback,
                    };
                    s.reject_leftovers()?;
                    sc.channels.push(ch);
                }
                _ => unreachable!("section names checked in pass 1"),
            }
        }
        if !saw_scenario {
            return Err(parse_err(0, "missing [scenario] section"));
        }
        Ok(sc)
    }

    pub fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Largest GPIO line index any part of the scenario names.
    pub fn max_line(&self) -> u32 {
        let mut m = 0;
        for w in &self.workloads {
            match w {
                WorkloadSpec::GpioResponse { input, output, .. }
                | WorkloadSpec::CrossCore { input, output, .. } => {
                    m = m.max(*input).max(*output);
                }
                WorkloadSpec::CounterToggle { line, .. } => m = m.max(*line),
                _ => {}
            }
        }
        for c in &self.channels {
            if let CallbackSpec::Toggle(l) = c.callback {
                m = m.max(l);
            }
        }
        m
    }

    /// Period of the first periodic stimulus, for report tables.
    pub fn stimulus_period_ns(&self) -> Option<u64> {
        self.workloads.iter().find_map(|w| match w {
            WorkloadSpec::GpioResponse { period_ns, .. }
            | WorkloadSpec::CrossCore { period_ns, .. }
            | WorkloadSpec::CounterToggle { period_ns, .. } => Some(*period_ns),
            _ => None,
        })
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-')
        {
            return Err(invalid("name", "must be non-empty [a-z0-9_-]"));
        }
        if self.n_cores < 2 {
            return Err(invalid("n_cores", "a machine has at least two cores"));
        }
        if self.duration_ns == 0 || self.duration_ns > MAX_SIM_NS {
            return Err(invalid("duration_ns", "must be in 1..=2^62"));
        }
        if self.deferred_capacity == 0 {
            return Err(invalid("deferred_capacity", "must be positive"));
        }
        let core_ok = |c: u32| c < self.n_cores;
        for (i, k) in self.kthread_pref.iter().enumerate() {
            if !core_ok(*k) {
                return Err(invalid(format!("kthread_pref[{i}]"), "core does not exist"));
            }
        }
        for (i, iso) in self.isolations.iter().enumerate() {
            let field = |k: &str| format!("isolation[{i}].{k}");
            if !core_ok(iso.core) {
                return Err(invalid(field("core"), "core does not exist"));
            }
            if iso.mask.is_empty() {
                return Err(invalid(field("mask"), "selects nothing"));
            }
            if iso.start_ns >= iso.stop_ns {
                return Err(invalid(field("start_ns"), "window is empty or inverted"));
            }
            if iso.stop_ns > self.duration_ns {
                return Err(invalid(field("stop_ns"), "window outlives the run"));
            }
            if iso.tick_period_ns == 0 {
                return Err(invalid(field("tick_period_ns"), "must be positive"));
            }
        }
        if self.noise.ipi_interval_ns > 0 && self.n_cores < 2 {
            return Err(invalid("noise.ipi_interval_ns", "needs a second core"));
        }
        for (i, w) in self.workloads.iter().enumerate() {
            let field = |k: &str| format!("workload[{i}].{k}");
            match w {
                WorkloadSpec::GpioResponse { core, input, output, mode, period_ns, .. } => {
                    if !core_ok(*core) {
                        return Err(invalid(field("core"), "core does not exist"));
                    }
                    if *period_ns == 0 {
                        return Err(invalid(field("period_ns"), "must be positive"));
                    }
                    if input == output {
                        return Err(invalid(field("output"), "must differ from input"));
                    }
                    if let ModeSpec::Poll { granularity_ns: 0 } = mode {
                        return Err(invalid(field("granularity_ns"), "must be positive"));
                    }
                }
                WorkloadSpec::CounterToggle { core, period_ns, .. } => {
                    if !core_ok(*core) {
                        return Err(invalid(field("core"), "core does not exist"));
                    }
                    if *period_ns == 0 {
                        return Err(invalid(field("period_ns"), "must be positive"));
                    }
                }
                WorkloadSpec::CrossCore {
                    detector, responder, input, output, granularity_ns, period_ns, ..
                } => {
                    if !core_ok(*detector) {
                        return Err(invalid(field("detector"), "core does not exist"));
                    }
                    if !core_ok(*responder) {
                        return Err(invalid(field("responder"), "core does not exist"));
                    }
                    if detector == responder {
                        return Err(invalid(field("responder"), "must differ from detector"));
                    }
                    if *granularity_ns == 0 {
                        return Err(invalid(field("granularity_ns"), "must be positive"));
                    }
                    if *period_ns == 0 {
                        return Err(invalid(field("period_ns"), "must be positive"));
                    }
                    if input == output {
                        return Err(invalid(field("output"), "must differ from input"));
                    }
                }
                WorkloadSpec::IpcPingPong {
                    core_a, core_b, capacity, payload_len, rounds, gap_ns, ..
                } => {
                    if !core_ok(*core_a) {
                        return Err(invalid(field("core_a"), "core does not exist"));
                    }
                    if !core_ok(*core_b) {
                        return Err(invalid(field("core_b"), "core does not exist"));
                    }
                    if core_a == core_b {
                        return Err(invalid(field("core_b"), "must differ from core_a"));
                    }
                    if *capacity < 2 || !capacity.is_power_of_two() {
                        return Err(invalid(field("capacity"), "must be a power of two >= 2"));
                    }
                    if !(8..=64).contains(payload_len) {
                        return Err(invalid(field("payload_len"), "must be in 8..=64"));
                    }
                    if *rounds == 0 && *gap_ns == 0 {
                        return Err(invalid(field("gap_ns"), "unbounded rounds need a gap"));
                    }
                }
                WorkloadSpec::RcuSync { at_ns, .. } => {
                    if *at_ns > self.duration_ns {
                        return Err(invalid(field("at_ns"), "fires after the run ends"));
                    }
                }
            }
        }
        for (i, c) in self.channels.iter().enumerate() {
            let field = |k: &str| format!("channel[{i}].{k}");
            if !core_ok(c.producer) {
                return Err(invalid(field("producer"), "core does not exist"));
            }
            if !core_ok(c.consumer) {
                return Err(invalid(field("consumer"), "core does not exist"));
            }
            if c.capacity < 2 || !c.capacity.is_power_of_two() {
                return Err(invalid(field("capacity"), "must be a power of two >= 2"));
            }
        }
        if self.max_line() >= 64 {
            return Err(invalid("lines", "GPIO line ids must stay below 64"));
        }
        Ok(())
    }

    /// Canonical text form; `parse(render(s)) == s` for every valid value.
    pub fn render(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let w = &mut out;
        writeln!(w, "[scenario]").unwrap();
        writeln!(w, "name = {}", self.name).unwrap();
        writeln!(w, "n_cores = {}", self.n_cores).unwrap();
        if let Some(seed) = self.seed {
            writeln!(w, "seed = {seed}").unwrap();
        }
        writeln!(w, "duration_ns = {}", self.duration_ns).unwrap();
        writeln!(w, "wire_delay_ns = {}", self.wire_delay_ns).unwrap();
        writeln!(w, "tick_item_cost_ns = {}", self.tick_item_cost_ns).unwrap();
        writeln!(w, "deferred_capacity = {}", self.deferred_capacity).unwrap();
        writeln!(w, "cached_freq_khz = {}", self.cached_freq_khz).unwrap();
        writeln!(w, "rcu_gated = {}", self.rcu_gated).unwrap();
        writeln!(w, "rcu_placement_fix = {}", self.rcu_placement_fix).unwrap();
        if !self.kthread_pref.is_empty() {
            let pref: Vec<String> = self.kthread_pref.iter().map(u32::to_string).collect();
            writeln!(w, "kthread_pref = {}", pref.join(",")).unwrap();
        }
        writeln!(w, "stale_tlb_diagnostic = {}", self.stale_tlb_diagnostic).unwrap();
        writeln!(w).unwrap();
        writeln!(w, "[noise]").unwrap();
        writeln!(w, "tick_period_ns = {}", self.noise.tick_period_ns).unwrap();
        writeln!(w, "tick_cost = {}", self.noise.tick_cost).unwrap();
        writeln!(w, "ipi_interval_ns = {}", self.noise.ipi_interval_ns).unwrap();
        writeln!(w, "ipi_cost = {}", self.noise.ipi_cost).unwrap();
        writeln!(w, "rtb_period_ns = {}", self.noise.rtb_period_ns).unwrap();
        writeln!(w, "rtb_cost = {}", self.noise.rtb_cost).unwrap();
        for iso in &self.isolations {
            writeln!(w).unwrap();
            writeln!(w, "[isolation]").unwrap();
            writeln!(w, "core = {}", iso.core).unwrap();
            writeln!(w, "mask = {}", iso.mask).unwrap();
            writeln!(w, "start_ns = {}", iso.start_ns).unwrap();
            writeln!(w, "stop_ns = {}", iso.stop_ns).unwrap();
            writeln!(w, "tick_period_ns = {}", iso.tick_period_ns).unwrap();
        }
        for wl in &self.workloads {
            writeln!(w).unwrap();
            writeln!(w, "[workload]").unwrap();
            match wl {
                WorkloadSpec::GpioResponse {
                    core, input, output, mode, cost_ns, period_ns, jitter_ns, count, start_ns,
                } => {
                    writeln!(w, "kind = gpio_response").unwrap();
                    writeln!(w, "core = {core}").unwrap();
                    writeln!(w, "input = {input}").unwrap();
                    writeln!(w, "output = {output}").unwrap();
                    match mode {
                        ModeSpec::Poll { granularity_ns } => {
                            writeln!(w, "mode = poll").unwrap();
                            writeln!(w, "granularity_ns = {granularity_ns}").unwrap();
                        }
                        ModeSpec::Irq { irq_cost_ns } => {
                            writeln!(w, "mode = irq").unwrap();
                            writeln!(w, "irq_cost_ns = {irq_cost_ns}").unwrap();
                        }
                    }
                    writeln!(w, "cost_ns = {cost_ns}").unwrap();
                    writeln!(w, "period_ns = {period_ns}").unwrap();
                    writeln!(w, "jitter_ns = {jitter_ns}").unwrap();
                    writeln!(w, "count = {count}").unwrap();
                    writeln!(w, "start_ns = {start_ns}").unwrap();
                }
                WorkloadSpec::CounterToggle { core, line, period_ns, start_ns } => {
                    writeln!(w, "kind = counter_toggle").unwrap();
                    writeln!(w, "core = {core}").unwrap();
                    writeln!(w, "line = {line}").unwrap();
                    writeln!(w, "period_ns = {period_ns}").unwrap();
                    writeln!(w, "start_ns = {start_ns}").unwrap();
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
                    writeln!(w, "kind = cross_core").unwrap();
                    writeln!(w, "detector = {detector}").unwrap();
                    writeln!(w, "responder = {responder}").unwrap();
                    writeln!(w, "input = {input}").unwrap();
                    writeln!(w, "output = {output}").unwrap();
                    writeln!(w, "granularity_ns = {granularity_ns}").unwrap();
                    writeln!(w, "period_ns = {period_ns}").unwrap();
                    writeln!(w, "jitter_ns = {jitter_ns}").unwrap();
                    writeln!(w, "count = {count}").unwrap();
                    writeln!(w, "start_ns = {start_ns}").unwrap();
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
                    writeln!(w, "kind = ipc_pingpong").unwrap();
                    writeln!(w, "core_a = {core_a}").unwrap();
                    writeln!(w, "core_b = {core_b}").unwrap();
                    writeln!(w, "capacity = {capacity}").unwrap();
                    writeln!(w, "hop_delay_ns = {hop_delay_ns}").unwrap();
                    writeln!(w, "payload_len = {payload_len}").unwrap();
                    writeln!(w, "rounds = {rounds}").unwrap();
                    writeln!(w, "gap_ns = {gap_ns}").unwrap();
                    writeln!(w, "start_ns = {start_ns}").unwrap();
                }
                WorkloadSpec::RcuSync { at_ns, caller } => {
                    writeln!(w, "kind = rcu_sync").unwrap();
                    writeln!(w, "at_ns = {at_ns}").unwrap();
                    writeln!(w, "caller = {caller}").unwrap();
                }
            }
        }
        for c in &self.channels {
            writeln!(w).unwrap();
            writeln!(w, "[channel]").unwrap();
            writeln!(w, "capacity = {}", c.capacity).unwrap();
            writeln!(w, "producer = {}", c.producer).unwrap();
            writeln!(w, "consumer = {}", c.consumer).unwrap();
            writeln!(w, "hop_delay_ns = {}", c.hop_delay_ns).unwrap();
            writeln!(w, "callback = {}", c.callback).unwrap();
        }
        out
    }
}

fn parse_callback(line: usize, v: &str) -> Result<CallbackSpec, ScenarioError> {
    match v {
        "none" => Ok(CallbackSpec::None),
        "count" => Ok(CallbackSpec::Count),
        _ => match v.strip_prefix("toggle:") {
            Some(l) => l
                .parse()
                .map(CallbackSpec::Toggle)
                .map_err(|_| parse_err(line, format!("bad toggle line {l:?}"))),
            None => Err(parse_err(line, format!("unknown callback {v:?}"))),
        },
    }
}

fn parse_workload(s: &mut Section) -> Result<WorkloadSpec, ScenarioError> {
    let (kind_line, kind) = s
        .take("kind")
        .ok_or_else(|| parse_err(s.header_line, "[workload] section is missing key kind"))?;
    match kind.as_str() {
        "gpio_response" => {
            let (mode_line, mode) = s
                .take("mode")
                .ok_or_else(|| parse_err(s.header_line, "[workload] section is missing key mode"))?;
            let mode = match mode.as_str() {
                "poll" => ModeSpec::Poll { granularity_ns: s.require("granularity_ns")? },
                "irq" => ModeSpec::Irq { irq_cost_ns: s.require("irq_cost_ns")? },
                _ => return Err(parse_err(mode_line, format!("unknown mode {mode:?}"))),
            };
            Ok(WorkloadSpec::GpioResponse {
                core: s.require("core")?,
                input: s.require("input")?,
                output: s.require("output")?,
                mode,
                cost_ns: s.require("cost_ns")?,
                period_ns: s.require("period_ns")?,
                jitter_ns: s.take_or("jitter_ns", 0)?,
                count: s.take_or("count", 0)?,
                start_ns: s.take_or("start_ns", 0)?,
            })
        }
        "counter_toggle" => Ok(WorkloadSpec::CounterToggle {
            core: s.require("core")?,
            line: s.require("line")?,
            period_ns: s.require("period_ns")?,
            start_ns: s.take_or("start_ns", 0)?,
        }),
        "cross_core" => Ok(WorkloadSpec::CrossCore {
            detector: s.require("detector")?,
            responder: s.require("responder")?,
            input: s.require("input")?,
            output: s.require("output")?,
            granularity_ns: s.require("granularity_ns")?,
            period_ns: s.require("period_ns")?,
            jitter_ns: s.take_or("jitter_ns", 0)?,
            count: s.take_or("count", 0)?,
            start_ns: s.take_or("start_ns", 0)?,
        }),
        "ipc_pingpong" => Ok(WorkloadSpec::IpcPingPong {
            core_a: s.require("core_a")?,
            core_b: s.require("core_b")?,
            capacity: s.take_or("capacity", 8)?,
            hop_delay_ns: s.take_or("hop_delay_ns", 0)?,
            payload_len: s.take_or("payload_len", 16)?,
            rounds: s.require("rounds")?,
            gap_ns: s.take_or("gap_ns", 0)?,
            start_ns: s.take_or("start_ns", 0)?,
        }),
        "rcu_sync" => Ok(WorkloadSpec::RcuSync {
            at_ns: s.require("at_ns")?,
            caller: s.take_or("caller", 0)?,
        }),
        _ => Err(parse_err(kind_line, format!("unknown workload kind {kind:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# demo scenario
[scenario]
name = demo
n_cores = 2
seed = 7
duration_ns = 1000000

[noise]
tick_period_ns = 100000
tick_cost = uniform:500:900

[isolation]
core = 1
mask = clock|ipi
start_ns = 0
stop_ns = 500000
tick_period_ns = 10000

[workload]
kind = gpio_response
core = 1
input = 0
output = 1
mode = poll
granularity_ns = 40
cost_ns = 390
period_ns = 2000
jitter_ns = 10
count = 5
start_ns = 100

[channel]
capacity = 8
producer = 0
consumer = 1
hop_delay_ns = 150
callback = count
";

    #[test]
    fn parses_the_sample() {
        let sc = Scenario::parse(SAMPLE).unwrap();
        assert_eq!(sc.name, "demo");
        assert_eq!(sc.seed, Some(7));
        assert_eq!(sc.isolations.len(), 1);
        assert_eq!(sc.isolations[0].mask, IsolatorMask::CLOCK.union(IsolatorMask::IPI));
        assert_eq!(sc.noise.tick_cost, CostDist::Uniform { lo: 500, hi: 900 });
        assert_eq!(sc.workloads.len(), 1);
        assert_eq!(sc.channels[0].callback, CallbackSpec::Count);
        sc.validate().unwrap();
    }

    #[test]
    fn canonical_round_trip() {
        let sc = Scenario::parse(SAMPLE).unwrap();
        let rendered = sc.render();
        let back = Scenario::parse(&rendered).unwrap();
        assert_eq!(sc, back);
        // Idempotent too.
        assert_eq!(rendered, back.render());
    }

    #[test]
    fn missing_seed_is_recorded_not_invented() {
        let text = "[scenario]\nname = x\nn_cores = 2\nduration_ns = 10\n";
        let sc = Scenario::parse(text).unwrap();
        assert_eq!(sc.seed, None);
        assert_eq!(sc.effective_seed(), 0);
    }

    #[test]
    fn rejects_unknown_keys_with_line_numbers() {
        let text = "[scenario]\nname = x\nn_cores = 2\nduration_ns = 10\nbogus = 1\n";
        match Scenario::parse(text) {
            Err(ScenarioError::Parse { line: 5, .. }) => {}
            other => panic!("expected parse error on line 5, got {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_scalar_sections() {
        let text = "[scenario]\nname = x\nn_cores = 2\nduration_ns = 10\n[noise]\n[noise]\n";
        match Scenario::parse(text) {
            Err(ScenarioError::Parse { line: 6, .. }) => {}
            other => panic!("expected duplicate-section error, got {other:?}"),
        }
    }

    #[test]
    fn validation_catches_out_of_range_cores() {
        let mut sc = Scenario::parse(SAMPLE).unwrap();
        sc.isolations[0].core = 5;
        match sc.validate() {
            Err(ScenarioError::Validation { field, .. }) => {
                assert_eq!(field, "isolation[0].core");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn validation_requires_window_inside_run() {
        let mut sc = Scenario::parse(SAMPLE).unwrap();
        sc.isolations[0].stop_ns = sc.duration_ns + 1;
        assert!(sc.validate().is_err());
    }
}
