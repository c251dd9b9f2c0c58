//! Isolation-facing types: the mask, the counted lifecycle records, deferred
//! work, and the tick report.
//!
//! The lifecycle itself (start, tick, stop) is implemented on `Sim` in
//! `engine`, because it cuts across timers, RCU, and the IPI fabric.

use std::fmt;

use crate::ipi::{DeferredId, RangeTag};
use crate::shmem::ChannelId;
use crate::time::{CoreId, SimTime};
use crate::timer::{RtbId, TimerId};

/// What isolation silences. At least one bit must be set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IsolatorMask(u8);

impl IsolatorMask {
    pub const CLOCK: IsolatorMask = IsolatorMask(0b001);
    pub const RESCHED: IsolatorMask = IsolatorMask(0b010);
    pub const IPI: IsolatorMask = IsolatorMask(0b100);
    pub const ALL: IsolatorMask = IsolatorMask(0b111);

    pub const fn empty() -> IsolatorMask {
        IsolatorMask(0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn has(self, bit: IsolatorMask) -> bool {
        self.0 & bit.0 != 0
    }

    pub fn union(self, other: IsolatorMask) -> IsolatorMask {
        IsolatorMask(self.0 | other.0)
    }

    /// Bits in `other` not already in `self`.
    pub fn added_by(self, other: IsolatorMask) -> IsolatorMask {
        IsolatorMask(other.0 & !self.0)
    }

    pub fn parse(s: &str) -> Option<IsolatorMask> {
        let mut m = IsolatorMask::empty();
        for part in s.split('|') {
            match part.trim() {
                "clock" => m = m.union(IsolatorMask::CLOCK),
                "resched" => m = m.union(IsolatorMask::RESCHED),
                "ipi" => m = m.union(IsolatorMask::IPI),
                _ => return None,
            }
        }
        if m.is_empty() {
            None
        } else {
            Some(m)
        }
    }
}

impl fmt::Display for IsolatorMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return write!(f, "none");
        }
        let mut first = true;
        for (bit, name) in [
            (IsolatorMask::CLOCK, "clock"),
            (IsolatorMask::RESCHED, "resched"),
            (IsolatorMask::IPI, "ipi"),
        ] {
            if self.has(bit) {
                if !first {
                    write!(f, "|")?;
                }
                write!(f, "{name}")?;
                first = false;
            }
        }
        Ok(())
    }
}

/// Work classes an isolator tick can be asked to perform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TickKind {
    TickSched,
    TickRt,
    TickTscSync,
}

impl TickKind {
    pub fn name(self) -> &'static str {
        match self {
            TickKind::TickSched => "TICK_SCHED",
            TickKind::TickRt => "TICK_RT",
            TickKind::TickTscSync => "TICK_TSC_SYNC",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeferredKind {
    TlbFlush(RangeTag),
    AccountingTick,
    QueuedMessageCheck,
}

impl DeferredKind {
    pub fn name(self) -> &'static str {
        match self {
            DeferredKind::TlbFlush(_) => "TlbFlush",
            DeferredKind::AccountingTick => "AccountingTick",
            DeferredKind::QueuedMessageCheck => "QueuedMessageCheck",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeferredItem {
    pub id: DeferredId,
    pub kind: DeferredKind,
    pub enqueued_at: SimTime,
}

/// What one isolator_start call changed. Restoration state accumulates on
/// the core; this is the caller-visible delta.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StartRecord {
    pub core: CoreId,
    pub counter_after: u32,
    pub mask_added: IsolatorMask,
    pub sched_timer_stopped: Option<TimerId>,
    pub purged_rtbs: Vec<RtbId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopRecord {
    pub core: CoreId,
    pub counter_after: u32,
    /// (timer, new expiry) pairs re-armed by this stop.
    pub restored_timers: Vec<(TimerId, SimTime)>,
    pub restored_rtbs: Vec<RtbId>,
    pub drained: Vec<DeferredId>,
    pub rcu_reenrolled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TickItem {
    Accounting { advanced_ns: u64 },
    RtCheck,
    TscSync,
    FlushApplied { id: DeferredId, tag: RangeTag },
    AccountingDrained { id: DeferredId },
    MessageCheckDrained { id: DeferredId },
    CallbackRun { channel: ChannelId, seq: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TickReport {
    pub core: CoreId,
    pub at: SimTime,
    pub items: Vec<TickItem>,
    /// Virtual time the tick's work consumed on the core.
    pub cost_ns: u64,
}

impl TickReport {
    pub fn flushes(&self) -> impl Iterator<Item = (DeferredId, RangeTag)> + '_ {
        self.items.iter().filter_map(|i| match i {
            TickItem::FlushApplied { id, tag } => Some((*id, *tag)),
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_parse_and_display_round_trip() {
        for s in ["clock", "resched", "ipi", "clock|ipi", "clock|resched|ipi"] {
            let m = IsolatorMask::parse(s).unwrap();
            assert_eq!(format!("{m}"), s);
        }
        assert!(IsolatorMask::parse("").is_none());
        assert!(IsolatorMask::parse("bogus").is_none());
    }

    #[test]
    fn added_by_reports_only_new_bits() {
        let m = IsolatorMask::CLOCK;
        let add = m.added_by(IsolatorMask::CLOCK.union(IsolatorMask::IPI));
        assert!(add.has(IsolatorMask::IPI));
        assert!(!add.has(IsolatorMask::CLOCK));
    }
}
