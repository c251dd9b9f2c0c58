//! Run trace: an ordered record of every state transition.
//!
//! Records carry (time, core, kind, detail) and serialize to CSV as
//! `time_ns,core,kind,detail`. Emission order is event-processing order, so
//! timestamps are non-decreasing by construction; `record` asserts it anyway.
//!
//! Long runs stream records to a writer instead of keeping them in memory.
//! Cheap aggregate counters are always maintained so acceptance checks on
//! multi-gigabyte traces do not need the full record list.

use std::collections::BTreeMap;
use std::io::{self, Write};

use crate::time::{CoreId, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TraceKind {
    Timer,
    Ipi,
    Irq,
    Isolator,
    Deferred,
    Rcu,
    Trigger,
    Gpio,
    Workload,
    Tlb,
    Channel,
}

impl TraceKind {
    pub fn name(self) -> &'static str {
        match self {
            TraceKind::Timer => "timer",
            TraceKind::Ipi => "ipi",
            TraceKind::Irq => "irq",
            TraceKind::Isolator => "isolator",
            TraceKind::Deferred => "deferred",
            TraceKind::Rcu => "rcu",
            TraceKind::Trigger => "trigger",
            TraceKind::Gpio => "gpio",
            TraceKind::Workload => "workload",
            TraceKind::Tlb => "tlb",
            TraceKind::Channel => "channel",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub at: SimTime,
    pub core: CoreId,
    pub kind: TraceKind,
    pub detail: String,
}

impl TraceRecord {
    pub fn csv_line(&self) -> String {
        format!("{},{},{},{}\n", self.at, self.core, self.kind.name(), self.detail)
    }
}

/// Counters cheap enough to keep on every run regardless of sink.
#[derive(Debug, Default, Clone)]
pub struct TraceCounters {
    pub scheduled_events: u64,
    pub cancelled_events: u64,
    pub processed_events: u64,
    /// TimerExpiry records per core.
    pub timer_expiry: BTreeMap<CoreId, u64>,
    /// Delivered-IPI arrival records per core.
    pub ipi_arrival: BTreeMap<CoreId, u64>,
}

enum Sink {
    Memory(Vec<TraceRecord>),
    Stream(Box<dyn Write>),
    Null,
}

pub struct Trace {
    sink: Sink,
    pub counters: TraceCounters,
    last_at: SimTime,
    io_error: Option<io::Error>,
}

impl Trace {
    pub fn in_memory() -> Trace {
        Trace::with_sink(Sink::Memory(Vec::new()))
    }

    /// Stream CSV rows to `w`. The caller writes any header lines first.
    pub fn streaming(w: Box<dyn Write>) -> Trace {
        Trace::with_sink(Sink::Stream(w))
    }

    /// Counters only; record bodies are never built.
    pub fn counting_only() -> Trace {
        Trace::with_sink(Sink::Null)
    }

    fn with_sink(sink: Sink) -> Trace {
        Trace {
            sink,
            counters: TraceCounters::default(),
            last_at: SimTime::ZERO,
            io_error: None,
        }
    }

    /// `detail` is lazy so the counting sink skips the formatting cost; the
    /// hot isolated-GPIO run emits tens of millions of records.
    pub fn record(
        &mut self,
        at: SimTime,
        core: CoreId,
        kind: TraceKind,
        detail: impl FnOnce() -> String,
    ) {
        assert!(at >= self.last_at, "trace emitted out of order");
        self.last_at = at;
        match &mut self.sink {
            Sink::Memory(v) => v.push(TraceRecord { at, core, kind, detail: detail() }),
            Sink::Stream(w) => {
                let line = TraceRecord { at, core, kind, detail: detail() }.csv_line();
                if self.io_error.is_none() {
                    if let Err(e) = w.write_all(line.as_bytes()) {
                        self.io_error = Some(e);
                    }
                }
            }
            Sink::Null => {}
        }
    }

    pub fn bump_timer_expiry(&mut self, core: CoreId) {
        *self.counters.timer_expiry.entry(core).or_insert(0) += 1;
    }

    pub fn bump_ipi_arrival(&mut self, core: CoreId) {
        *self.counters.ipi_arrival.entry(core).or_insert(0) += 1;
    }

    pub fn records(&self) -> &[TraceRecord] {
        match &self.sink {
            Sink::Memory(v) => v,
            _ => &[],
        }
    }

    /// Serialize in-memory records to CSV bytes (header + rows).
    pub fn to_csv(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"time_ns,core,kind,detail\n");
        for r in self.records() {
            out.extend_from_slice(r.csv_line().as_bytes());
        }
        out
    }

    pub fn take_io_error(&mut self) -> Option<io::Error> {
        self.io_error.take()
    }

    pub fn flush(&mut self) -> io::Result<()> {
        if let Some(e) = self.io_error.take() {
            return Err(e);
        }
        match &mut self.sink {
            Sink::Stream(w) => w.flush(),
            _ => Ok(()),
        }
    }
}

pub const TRACE_HEADER: &str = "time_ns,core,kind,detail";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_sink_keeps_rows_in_order() {
        let mut t = Trace::in_memory();
        t.record(SimTime::from_ns(1), CoreId(0), TraceKind::Timer, || "expiry:0".into());
        t.record(SimTime::from_ns(2), CoreId(1), TraceKind::Ipi, || "sent:Reschedule:0->1".into());
        let csv = String::from_utf8(t.to_csv()).unwrap();
        assert_eq!(
            csv,
            "time_ns,core,kind,detail\n1,0,timer,expiry:0\n2,1,ipi,sent:Reschedule:0->1\n"
        );
    }

    #[test]
    #[should_panic(expected = "out of order")]
    fn emission_must_be_monotonic() {
        let mut t = Trace::in_memory();
        t.record(SimTime::from_ns(5), CoreId(0), TraceKind::Timer, || String::new());
        t.record(SimTime::from_ns(4), CoreId(0), TraceKind::Timer, || String::new());
    }

    #[test]
    fn counting_sink_skips_detail_closure() {
        let mut t = Trace::counting_only();
        t.record(SimTime::from_ns(1), CoreId(0), TraceKind::Timer, || {
            panic!("detail must not be built")
        });
        assert!(t.records().is_empty());
    }
}
