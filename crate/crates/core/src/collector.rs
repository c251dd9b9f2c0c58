//! Per-core counters of what isolation blocked or deferred.
//!
//! Every increment here pairs with exactly one trace record, so a run's
//! collector table can be reconciled against its trace with no tolerance.

use std::collections::BTreeMap;

use crate::time::CoreId;

/// Counter keys. The string forms appear verbatim in the collector CSV and
/// mirror the trace detail prefixes they reconcile against.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum CounterKind {
    /// A suppressible IPI that never became an arrival (virtual completion
    /// or cached reply), by IPI kind name.
    Blocked(&'static str),
    /// A deferred-work item enqueued, by work kind name.
    Deferred(&'static str),
    /// An IPI actually delivered to the core, by kind name.
    Delivered(&'static str),
}

impl std::fmt::Display for CounterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CounterKind::Blocked(k) => write!(f, "blocked:{k}"),
            CounterKind::Deferred(k) => write!(f, "deferred:{k}"),
            CounterKind::Delivered(k) => write!(f, "delivered:{k}"),
        }
    }
}

#[derive(Debug, Default)]
pub struct Collector {
    counts: BTreeMap<(CoreId, CounterKind), u64>,
}

impl Collector {
    pub fn new() -> Collector {
        Collector::default()
    }

    pub fn bump(&mut self, core: CoreId, kind: CounterKind) {
        *self.counts.entry((core, kind)).or_insert(0) += 1;
    }

    pub fn get(&self, core: CoreId, kind: &CounterKind) -> u64 {
        self.counts.get(&(core, kind.clone())).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(CoreId, CounterKind), &u64)> {
        self.counts.iter()
    }

    /// CSV rows `core,kind,count` in deterministic (core, kind) order.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for ((core, kind), count) in &self.counts {
            out.push_str(&format!("{core},{kind},{count}\n"));
        }
        out
    }
}

pub const COLLECTOR_HEADER: &str = "core,kind,count";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_come_out_sorted_and_exact() {
        let mut c = Collector::new();
        c.bump(CoreId(2), CounterKind::Blocked("TlbShootdown"));
        c.bump(CoreId(2), CounterKind::Blocked("TlbShootdown"));
        c.bump(CoreId(0), CounterKind::Deferred("TlbFlush"));
        assert_eq!(c.get(CoreId(2), &CounterKind::Blocked("TlbShootdown")), 2);
        assert_eq!(
            c.csv_rows(),
            "0,deferred:TlbFlush,1\n2,blocked:TlbShootdown,2\n"
        );
    }
}
