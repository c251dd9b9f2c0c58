//! Measurement workloads, written as event-driven state machines.
//!
//! The convention throughout: an op carries everything the step needs, so
//! overlapping rounds never share mutable state. A step that finds its core
//! inside an interrupt handler reschedules itself to the handler's end,
//! which is how handler occupancy shows up in the measured latencies.

use crate::engine::{AllocId, CallbackAction, Delivery, IrqSource, Sim};
use crate::gpio::LineId;
use crate::ipi::{CallbackId, IpiKind, RangeTag};
use crate::isolator::{IsolatorMask, TickKind};
use crate::rcu::CallerId;
use crate::rng::Stream;
use crate::shmem::{ChannelId, PostOutcome};
use crate::time::{CoreId, SimTime};
use crate::trace::TraceKind;
use crate::event::EventPayload;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WorkloadId(pub u32);

impl std::fmt::Display for WorkloadId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One step of a workload state machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkloadOp {
    /// Generic periodic driver step.
    Kick,
    /// Edge pacer: emit stimulus k, then schedule k+1.
    Edge { k: u64, nominal: SimTime },
    /// Attempt to detect a stimulus that fired at `t0`.
    Detect { t0: SimTime },
    /// Attempt to finish the response computation for the stimulus at `t0`.
    /// `began` and `occ0` pin down how much real progress has been made.
    Raise { t0: SimTime, began: SimTime, occ0: u64 },
    /// Remote responder completion (function-call IPI handler finished).
    Respond { t0: SimTime },
    /// Toggle a line on behalf of a callback.
    ToggleLine { line: LineId },
    IsolStart,
    IsolTick,
    IsolStop,
    /// Ping-pong: producer sends round k.
    PingSend { k: u64 },
    /// Ping-pong: consumer polls for the ping.
    Poll,
    /// Ping-pong: producer polls for the pong of round k.
    PongCheck { k: u64, sent: SimTime },
}

/// How a GPIO responder notices the input edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectMode {
    /// Busy-poll the interrupt status at a fixed granularity. Detection is
    /// computed in closed form; no per-poll events exist.
    Poll { granularity_ns: u64 },
    /// The edge raises an interrupt whose handler hands off to the
    /// responder thread.
    Irq { handler_cost_ns: u64 },
}

#[derive(Debug, Clone, Copy)]
pub struct GpioResponseCfg {
    pub core: CoreId,
    pub input: LineId,
    pub output: LineId,
    pub mode: DetectMode,
    pub response_cost_ns: u64,
    pub period_ns: u64,
    pub jitter_ns: u64,
    /// Stimulus count; 0 means unbounded.
    pub count: u64,
    pub start_at: SimTime,
}

#[derive(Debug, Clone, Copy)]
pub struct CrossCoreCfg {
    pub detector: CoreId,
    pub responder: CoreId,
    pub input: LineId,
    pub output: LineId,
    pub granularity_ns: u64,
    pub period_ns: u64,
    pub jitter_ns: u64,
    pub count: u64,
    pub start_at: SimTime,
}

#[derive(Debug, Clone, Copy)]
pub struct IpcCfg {
    pub ping: ChannelId,
    pub pong: ChannelId,
    pub core_a: CoreId,
    pub core_b: CoreId,
    pub payload_len: usize,
    pub rounds: u64,
    pub gap_ns: u64,
    pub hop_delay_ns: u64,
    pub start_at: SimTime,
}

#[derive(Debug)]
pub enum Workload {
    /// Swap-out placeholder; steps addressed to it are dropped.
    Idle,
    GpioResponse {
        cfg: GpioResponseCfg,
        edges_sent: u64,
        recorded: u64,
    },
    CrossCore {
        cfg: CrossCoreCfg,
        callback: Option<CallbackId>,
        edges_sent: u64,
        recorded: u64,
    },
    /// A pinned loop that toggles a line, churns its arena, touches a TLB
    /// range, and passes through a quiescent state every iteration.
    CounterToggle {
        core: CoreId,
        line: LineId,
        period_ns: u64,
        start_at: SimTime,
        toggles: u64,
        last_alloc: Option<AllocId>,
        quiescent_reports: u64,
    },
    /// Drives one isolation window on one core.
    IsolDriver {
        core: CoreId,
        mask: IsolatorMask,
        start_at: SimTime,
        stop_at: SimTime,
        tick_period_ns: u64,
        ticks: u64,
        drained: u64,
    },
    IpcPingPong {
        cfg: IpcCfg,
        rounds_done: u64,
        recorded: u64,
    },
    /// Issues one synchronize call and waits for the grace period.
    RcuSyncer { at: SimTime, caller: CallerId, fired: bool },
    /// Background reschedule IPIs at a fixed interval, part of the noise
    /// profile rather than a measured workload.
    IpiNoise { src: CoreId, dst: CoreId, interval_ns: u64, sent: u64 },
}

impl Workload {
    /// Lines whose external triggers this workload handles.
    pub fn owned_lines(&self) -> Vec<LineId> {
        match self {
            Workload::GpioResponse { cfg, .. } => vec![cfg.input],
            Workload::CrossCore { cfg, .. } => vec![cfg.input],
            _ => Vec::new(),
        }
    }

    pub fn recorded(&self) -> u64 {
        match self {
            Workload::GpioResponse { recorded, .. }
            | Workload::CrossCore { recorded, .. }
            | Workload::IpcPingPong { recorded, .. } => *recorded,
            Workload::CounterToggle { toggles, .. } => *toggles,
            _ => 0,
        }
    }

    pub fn toggles(&self) -> u64 {
        match self {
            Workload::CounterToggle { toggles, .. } => *toggles,
            _ => 0,
        }
    }

    /// Schedule this workload's first events. Called once after insertion.
    pub fn kickoff(&mut self, sim: &mut Sim, wid: WorkloadId) {
        match self {
            Workload::Idle => {}
            Workload::GpioResponse { cfg, .. } => {
                let at = cfg.start_at;
                sim.push_step(at, cfg.core, wid, WorkloadOp::Edge { k: 0, nominal: at });
            }
            Workload::CrossCore { cfg, callback, .. } => {
                *callback = Some(sim.add_callback(CallbackAction::RespondFor(wid)));
                let at = cfg.start_at;
                sim.push_step(at, cfg.detector, wid, WorkloadOp::Edge { k: 0, nominal: at });
            }
            Workload::CounterToggle { core, start_at, .. } => {
                sim.push_step(*start_at, *core, wid, WorkloadOp::Kick);
            }
            Workload::IsolDriver { core, start_at, .. } => {
                sim.push_step(*start_at, *core, wid, WorkloadOp::IsolStart);
            }
            Workload::IpcPingPong { cfg, .. } => {
                sim.push_step(cfg.start_at, cfg.core_a, wid, WorkloadOp::PingSend { k: 0 });
            }
            Workload::RcuSyncer { at, .. } => {
                // Target core is irrelevant; the caller is a thread, not a
                // core-pinned handler.
                sim.push_step(*at, CoreId(0), wid, WorkloadOp::Kick);
            }
            Workload::IpiNoise { src, interval_ns, .. } => {
                sim.push_step(SimTime::from_ns(*interval_ns), *src, wid, WorkloadOp::Kick);
            }
        }
    }

    /// An external trigger on a line this workload owns.
    pub fn on_trigger(&mut self, sim: &mut Sim, wid: WorkloadId, line: LineId) {
        match self {
            Workload::GpioResponse { cfg, .. } => {
                debug_assert_eq!(line, cfg.input);
                let t0 = sim.now();
                sim.toggle_gpio(cfg.input);
                match cfg.mode {
                    DetectMode::Poll { granularity_ns } => {
                        let d = align_up(t0.ns(), granularity_ns);
                        sim.push_step(
                            SimTime::from_ns(d),
                            cfg.core,
                            wid,
                            WorkloadOp::Detect { t0 },
                        );
                    }
                    DetectMode::Irq { handler_cost_ns } => {
                        let d = sim
                            .deliver_interrupt(cfg.core, IrqSource::Gpio(line), handler_cost_ns)
                            .expect("responder core exists");
                        let Delivery::Ran(rec) = d else {
                            unreachable!("gpio interrupts are not maskable here")
                        };
                        sim.isr.acknowledge(line);
                        let began = rec.end();
                        let occ0 = sim.occupancy_at(cfg.core, began);
                        sim.push_step(
                            began.plus(cfg.response_cost_ns),
                            cfg.core,
                            wid,
                            WorkloadOp::Raise { t0, began, occ0 },
                        );
                    }
                }
            }
            Workload::CrossCore { cfg, .. } => {
                debug_assert_eq!(line, cfg.input);
                let t0 = sim.now();
                sim.toggle_gpio(cfg.input);
                let d = align_up(t0.ns(), cfg.granularity_ns);
                sim.push_step(SimTime::from_ns(d), cfg.detector, wid, WorkloadOp::Detect { t0 });
            }
            _ => {}
        }
    }

    pub fn on_step(&mut self, sim: &mut Sim, wid: WorkloadId, op: WorkloadOp) {
        if let WorkloadOp::ToggleLine { line } = op {
            sim.toggle_gpio(line);
            return;
        }
        match self {
            Workload::Idle => {}
            Workload::GpioResponse { cfg, edges_sent, recorded } => {
                step_gpio_response(sim, wid, op, cfg, edges_sent, recorded)
            }
            Workload::CrossCore { cfg, callback, edges_sent, recorded } => {
                step_cross_core(sim, wid, op, cfg, *callback, edges_sent, recorded)
            }
            Workload::CounterToggle {
                core,
                line,
                period_ns,
                toggles,
                last_alloc,
                quiescent_reports,
                ..
            } => {
                debug_assert_eq!(op, WorkloadOp::Kick);
                let core = *core;
                sim.toggle_gpio(*line);
                *toggles += 1;
                // Arena churn: allocate this round, free last round's block.
                let prev = last_alloc.take();
                *last_alloc = Some(sim.arena_alloc(core, *toggles).expect("own core"));
                if let Some(p) = prev {
                    sim.arena_free(core, p).expect("own live block");
                }
                sim.tlb_touch(core, RangeTag(*toggles % 4)).expect("own core");
                if sim.rcu.gp_active && sim.rcu.is_watched(core) {
                    sim.report_quiescent(core).expect("watched");
                    *quiescent_reports += 1;
                }
                let next = sim.now().plus(*period_ns);
                sim.push_step(next, core, wid, WorkloadOp::Kick);
            }
            Workload::IsolDriver { core, mask, stop_at, tick_period_ns, ticks, drained, .. } => {
                let core = *core;
                match op {
                    WorkloadOp::IsolStart => {
                        sim.isolator_start(core, *mask).expect("validated scenario");
                        let now = sim.now();
                        sim.push_step(now.plus(*tick_period_ns), core, wid, WorkloadOp::IsolTick);
                        sim.push_step(*stop_at, core, wid, WorkloadOp::IsolStop);
                    }
                    WorkloadOp::IsolTick => {
                        if !sim.is_isolated(core) {
                            return;
                        }
                        let report =
                            sim.isolator_tick(core, &[TickKind::TickSched]).expect("isolated");
                        *ticks += 1;
                        *drained += report.items.len() as u64;
                        let next = sim.now().plus(*tick_period_ns);
                        sim.push_step(next, core, wid, WorkloadOp::IsolTick);
                    }
                    WorkloadOp::IsolStop => {
                        if sim.is_isolated(core) {
                            sim.isolator_stop(core).expect("isolated");
                        }
                    }
                    _ => {}
                }
            }
            Workload::IpcPingPong { cfg, rounds_done, recorded } => {
                step_ping_pong(sim, wid, op, cfg, rounds_done, recorded)
            }
            Workload::RcuSyncer { caller, fired, .. } => {
                debug_assert_eq!(op, WorkloadOp::Kick);
                if !*fired {
                    *fired = true;
                    sim.synchronize_rcu(*caller);
                }
            }
            Workload::IpiNoise { src, dst, interval_ns, sent } => {
                debug_assert_eq!(op, WorkloadOp::Kick);
                sim.send_ipi(*src, *dst, IpiKind::Reschedule).expect("distinct cores");
                *sent += 1;
                let next = sim.now().plus(*interval_ns);
                sim.push_step(next, *src, wid, WorkloadOp::Kick);
            }
        }
    }
}

fn step_gpio_response(
    sim: &mut Sim,
    wid: WorkloadId,
    op: WorkloadOp,
    cfg: &GpioResponseCfg,
    edges_sent: &mut u64,
    recorded: &mut u64,
) {
    match op {
        WorkloadOp::Edge { k, nominal } => {
            emit_edge(sim, wid, cfg.core, cfg.input, k, nominal, cfg.period_ns, cfg.jitter_ns, cfg.count);
            *edges_sent += 1;
        }
        WorkloadOp::Detect { t0 } => {
            let now = sim.now();
            let busy = sim.busy_until(cfg.core);
            let DetectMode::Poll { granularity_ns } = cfg.mode else {
                unreachable!("poll detection only in poll mode")
            };
            if busy > now {
                // The poll loop is preempted; next chance is the first poll
                // boundary at or after the handler ends.
                let d = align_up(busy.ns(), granularity_ns);
                sim.push_step(SimTime::from_ns(d), cfg.core, wid, WorkloadOp::Detect { t0 });
                return;
            }
            sim.isr.acknowledge(cfg.input);
            let occ0 = sim.occupancy_at(cfg.core, now);
            sim.push_step(
                now.plus(cfg.response_cost_ns),
                cfg.core,
                wid,
                WorkloadOp::Raise { t0, began: now, occ0 },
            );
        }
        WorkloadOp::Raise { t0, began, occ0 } => {
            if let Some(done) =
                raise_progress(sim, cfg.core, cfg.response_cost_ns, began, occ0)
            {
                sim.push_step(done, cfg.core, wid, WorkloadOp::Raise { t0, began, occ0 });
                return;
            }
            sim.toggle_gpio(cfg.output);
            record_sample(sim, wid, cfg.core, t0, recorded);
        }
        _ => {}
    }
}

fn step_cross_core(
    sim: &mut Sim,
    wid: WorkloadId,
    op: WorkloadOp,
    cfg: &CrossCoreCfg,
    callback: Option<CallbackId>,
    edges_sent: &mut u64,
    recorded: &mut u64,
) {
    match op {
        WorkloadOp::Edge { k, nominal } => {
            emit_edge(
                sim,
                wid,
                cfg.detector,
                cfg.input,
                k,
                nominal,
                cfg.period_ns,
                cfg.jitter_ns,
                cfg.count,
            );
            *edges_sent += 1;
        }
        WorkloadOp::Detect { t0 } => {
            let now = sim.now();
            let busy = sim.busy_until(cfg.detector);
            if busy > now {
                let d = align_up(busy.ns(), cfg.granularity_ns);
                sim.push_step(SimTime::from_ns(d), cfg.detector, wid, WorkloadOp::Detect { t0 });
                return;
            }
            sim.isr.acknowledge(cfg.input);
            let cb = callback.expect("kickoff registered the callback");
            // The remote handler completes the round; its arrival carries
            // t0 as the issue time.
            sim.send_ipi_at(cfg.detector, cfg.responder, IpiKind::FunctionCall(cb), t0)
                .expect("validated scenario");
        }
        WorkloadOp::Respond { t0 } => {
            sim.toggle_gpio(cfg.output);
            record_sample(sim, wid, cfg.responder, t0, recorded);
        }
        _ => {}
    }
}

fn step_ping_pong(
    sim: &mut Sim,
    wid: WorkloadId,
    op: WorkloadOp,
    cfg: &IpcCfg,
    rounds_done: &mut u64,
    recorded: &mut u64,
) {
    match op {
        WorkloadOp::PingSend { k } => {
            let now = sim.now();
            let busy = sim.busy_until(cfg.core_a);
            if busy > now {
                sim.push_step(busy, cfg.core_a, wid, WorkloadOp::PingSend { k });
                return;
            }
            let mut payload = vec![0u8; cfg.payload_len];
            payload[..8].copy_from_slice(&k.to_le_bytes());
            match sim.post(cfg.ping, cfg.core_a, payload).expect("validated channel") {
                PostOutcome::Posted(_) => {
                    sim.push_step(
                        now.plus(cfg.hop_delay_ns),
                        cfg.core_b,
                        wid,
                        WorkloadOp::Poll,
                    );
                }
                PostOutcome::Full => {
                    // Depth-one ping-pong cannot fill the ring; retry after
                    // a hop just in case a scenario oversubscribes it.
                    sim.push_step(
                        now.plus(cfg.hop_delay_ns.max(1)),
                        cfg.core_a,
                        wid,
                        WorkloadOp::PingSend { k },
                    );
                }
            }
        }
        WorkloadOp::Poll => {
            let now = sim.now();
            let busy = sim.busy_until(cfg.core_b);
            if busy > now {
                sim.push_step(busy, cfg.core_b, wid, WorkloadOp::Poll);
                return;
            }
            let Some(msg) = sim.poll(cfg.ping, cfg.core_b).expect("consumer end") else {
                if sim.channel(cfg.ping).backlog() > 0 {
                    sim.push_step(
                        now.plus(cfg.hop_delay_ns.max(1)),
                        cfg.core_b,
                        wid,
                        WorkloadOp::Poll,
                    );
                }
                return;
            };
            let k = u64::from_le_bytes(msg.payload[..8].try_into().unwrap());
            let mut reply = vec![0u8; cfg.payload_len];
            reply[..8].copy_from_slice(&k.to_le_bytes());
            match sim.post(cfg.pong, cfg.core_b, reply).expect("validated channel") {
                PostOutcome::Posted(_) => {
                    sim.push_step(
                        now.plus(cfg.hop_delay_ns),
                        cfg.core_a,
                        wid,
                        WorkloadOp::PongCheck { k, sent: msg.posted_at },
                    );
                }
                PostOutcome::Full => {
                    sim.push_step(
                        now.plus(cfg.hop_delay_ns.max(1)),
                        cfg.core_b,
                        wid,
                        WorkloadOp::Poll,
                    );
                }
            }
        }
        WorkloadOp::PongCheck { k, sent } => {
            let now = sim.now();
            let busy = sim.busy_until(cfg.core_a);
            if busy > now {
                sim.push_step(busy, cfg.core_a, wid, WorkloadOp::PongCheck { k, sent });
                return;
            }
            let Some(reply) = sim.poll(cfg.pong, cfg.core_a).expect("producer end") else {
                if sim.channel(cfg.pong).backlog() > 0 {
                    sim.push_step(
                        now.plus(cfg.hop_delay_ns.max(1)),
                        cfg.core_a,
                        wid,
                        WorkloadOp::PongCheck { k, sent },
                    );
                }
                return;
            };
            debug_assert_eq!(u64::from_le_bytes(reply.payload[..8].try_into().unwrap()), k);
            let rtt = now.since(sent);
            sim.record_sample(rtt);
            sim.trace_sample(wid, cfg.core_a, rtt);
            *recorded += 1;
            *rounds_done += 1;
            if cfg.rounds == 0 || k + 1 < cfg.rounds {
                sim.push_step(
                    now.plus(cfg.gap_ns),
                    cfg.core_a,
                    wid,
                    WorkloadOp::PingSend { k: k + 1 },
                );
            }
        }
        _ => {}
    }
}

/// Shared pacer step: fire stimulus k now (jittered), book stimulus k+1 on
/// the unjittered spine so phase never drifts.
fn emit_edge(
    sim: &mut Sim,
    wid: WorkloadId,
    core: CoreId,
    line: LineId,
    k: u64,
    nominal: SimTime,
    period_ns: u64,
    jitter_ns: u64,
    count: u64,
) {
    let jitter = if jitter_ns == 0 {
        0
    } else {
        sim.rng().uniform(Stream::EdgeJitter(wid.0), k, 0, jitter_ns)
    };
    sim.push_trigger(nominal.plus(jitter), core, line);
    if count == 0 || k + 1 < count {
        let next = nominal.plus(period_ns);
        sim.push_step(next, core, wid, WorkloadOp::Edge { k: k + 1, nominal: next });
    }
}

/// Returns None when the computation has accrued `cost` ns of handler-free
/// time since `began`; otherwise the next completion estimate.
fn raise_progress(sim: &Sim, core: CoreId, cost: u64, began: SimTime, occ0: u64) -> Option<SimTime> {
    let now = sim.now();
    let occ_added = sim.occupancy_at(core, now) - occ0;
    let progress = now.since(began) - occ_added;
    if progress >= cost {
        return None;
    }
    let deficit = cost - progress;
    let busy = sim.busy_until(core);
    let resume = if busy > now { busy } else { now };
    Some(resume.plus(deficit))
}

fn record_sample(sim: &mut Sim, wid: WorkloadId, core: CoreId, t0: SimTime, recorded: &mut u64) {
    let latency = sim.now().since(t0);
    sim.record_sample(latency);
    sim.trace_sample(wid, core, latency);
    *recorded += 1;
}

fn align_up(x: u64, g: u64) -> u64 {
    debug_assert!(g > 0, "poll granularity must be positive");
    x.div_ceil(g) * g
}

impl Sim {
    /// Insert a workload and schedule its first events.
    pub fn spawn_workload(&mut self, w: Workload) -> WorkloadId {
        let wid = self.add_workload(w);
        self.with_workload(wid, |sim, w| w.kickoff(sim, wid));
        wid
    }

    pub(crate) fn push_step(&mut self, at: SimTime, core: CoreId, wid: WorkloadId, op: WorkloadOp) {
        self.schedule(at, core, EventPayload::WorkloadStep { workload: wid, op })
            .expect("workload steps target known cores in the future");
    }

    pub(crate) fn push_trigger(&mut self, at: SimTime, core: CoreId, line: LineId) {
        self.schedule(at, core, EventPayload::ExternalTrigger(line))
            .expect("trigger in the future");
    }

    pub(crate) fn trace_sample(&mut self, wid: WorkloadId, core: CoreId, latency: u64) {
        let now = self.now();
        self.trace.record(now, core, TraceKind::Workload, || {
            format!("sample:{wid}:{latency}")
        });
    }

    pub fn workload(&self, wid: WorkloadId) -> &Workload {
        &self.workloads[wid.0 as usize]
    }

    pub fn workload_count(&self) -> usize {
        self.workloads.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn align_up_boundaries() {
        assert_eq!(align_up(0, 40), 0);
        assert_eq!(align_up(1, 40), 40);
        assert_eq!(align_up(40, 40), 40);
        assert_eq!(align_up(41, 40), 80);
    }
}
