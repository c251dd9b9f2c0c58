//! Inter-processor interrupt fabric types.
//!
//! Suppressibility is per kind: reschedule requests die under the RESCHED
//! mask, TLB shootdowns convert to deferred flushes under the IPI mask,
//! frequency queries answer from a cached value, and function-call IPIs are
//! never suppressible; aiming one at a silenced core is a scenario bug.

use crate::time::{CoreId, SimTime};

/// Tag naming a page range in a shootdown. An opaque token: equal tags mean
/// the same range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RangeTag(pub u64);

impl std::fmt::Display for RangeTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CallbackId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpiKind {
    Reschedule,
    TlbShootdown(RangeTag),
    CpuFreqQuery,
    FunctionCall(CallbackId),
}

impl IpiKind {
    pub fn name(self) -> &'static str {
        match self {
            IpiKind::Reschedule => "Reschedule",
            IpiKind::TlbShootdown(_) => "TlbShootdown",
            IpiKind::CpuFreqQuery => "CpuFreqQuery",
            IpiKind::FunctionCall(_) => "FunctionCall",
        }
    }
}

/// Ties a request back to the broadcast (or single send) it belongs to, for
/// completion bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SendId(pub u64);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IpiRequest {
    pub src: CoreId,
    pub dst: CoreId,
    pub kind: IpiKind,
    pub issued_at: SimTime,
    pub completion: SendId,
}

/// Unique id of one deferred-work queue entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DeferredId(pub u64);

impl std::fmt::Display for DeferredId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// What a send produced, decided at send time (and re-checked at delivery,
/// since isolation can begin while a request is on the wire).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IpiOutcome {
    /// Will be (or was) delivered as an arrival event.
    Delivered,
    /// Absorbed into the target's deferred-work queue.
    VirtuallyCompleted(DeferredId),
    /// Answered from the cached value without touching the target.
    SuppressedWithCachedValue(u64),
}

/// Record of one handler execution on a core.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HandlerRecord {
    pub core: CoreId,
    pub start: SimTime,
    pub cost_ns: u64,
}

impl HandlerRecord {
    pub fn end(&self) -> SimTime {
        self.start.plus(self.cost_ns)
    }
}

/// A shootdown broadcast in flight. Completion is the maximum over the
/// delivered handlers' end times; suppressed targets contribute nothing,
/// which is exactly the sender-progress guarantee under test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Broadcast {
    pub id: SendId,
    pub initiator: CoreId,
    pub tag: RangeTag,
    pub issued_at: SimTime,
    pub outstanding: u32,
    pub completed_at: SimTime,
    pub delivered: u32,
    pub suppressed: u32,
}

impl Broadcast {
    pub fn done(&self) -> bool {
        self.outstanding == 0
    }
}
