//! Event queue for the virtual machine.
//!
//! Events are totally ordered by (timestamp, insertion sequence): ties on the
//! clock resolve in scheduling order. That rule plus the counter-based RNG is
//! the whole determinism story.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use crate::gpio::LineId;
use crate::ipi::IpiRequest;
use crate::time::{CoreId, SimTime};
use crate::timer::TimerId;
use crate::workloads::{WorkloadId, WorkloadOp};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventPayload {
    TimerExpiry(TimerId),
    IpiArrival(IpiRequest),
    ExternalTrigger(LineId),
    WorkloadStep { workload: WorkloadId, op: WorkloadOp },
    GpStep,
}

impl EventPayload {
    pub fn label(&self) -> &'static str {
        match self {
            EventPayload::TimerExpiry(_) => "TimerExpiry",
            EventPayload::IpiArrival(_) => "IpiArrival",
            EventPayload::ExternalTrigger(_) => "ExternalTrigger",
            EventPayload::WorkloadStep { .. } => "WorkloadStep",
            EventPayload::GpStep => "GpStep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent {
    pub at: SimTime,
    pub seq: u64,
    pub target: CoreId,
    pub payload: EventPayload,
}

/// Names one scheduled event; cancellation is by handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<(SimTime, u64)>>,
    // Pending payloads by seq; absent means popped or cancelled.
    pending: HashMap<u64, (CoreId, EventPayload)>,
    next_seq: u64,
    pub scheduled: u64,
    pub cancelled: u64,
}

impl EventQueue {
    pub fn new() -> EventQueue {
        EventQueue::default()
    }

    pub fn push(&mut self, at: SimTime, target: CoreId, payload: EventPayload) -> EventHandle {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse((at, seq)));
        self.pending.insert(seq, (target, payload));
        self.scheduled += 1;
        EventHandle(seq)
    }

    /// Cancelling twice, or cancelling an already-fired event, is a no-op
    /// returning false.
    pub fn cancel(&mut self, h: EventHandle) -> bool {
        let hit = self.pending.remove(&h.0).is_some();
        if hit {
            self.cancelled += 1;
        }
        hit
    }

    pub fn is_pending(&self, h: EventHandle) -> bool {
        self.pending.contains_key(&h.0)
    }

    /// Next live event with `at <= bound`, skipping cancelled entries.
    pub fn pop_until(&mut self, bound: SimTime) -> Option<SimEvent> {
        while let Some(Reverse((at, seq))) = self.heap.peek().copied() {
            if at > bound {
                return None;
            }
            self.heap.pop();
            if let Some((target, payload)) = self.pending.remove(&seq) {
                return Some(SimEvent { at, seq, target, payload });
            }
        }
        None
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn peek_at(&self) -> Option<SimTime> {
        // The top of the heap may be a cancelled tombstone; callers only use
        // this as a lower bound, which tombstones do not violate.
        self.heap.peek().map(|Reverse((at, _))| *at)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(q: &mut EventQueue, at: u64) -> EventHandle {
        q.push(SimTime::from_ns(at), CoreId(0), EventPayload::GpStep)
    }

    #[test]
    fn ties_resolve_in_insertion_order() {
        let mut q = EventQueue::new();
        ev(&mut q, 10);
        ev(&mut q, 10);
        ev(&mut q, 5);
        let order: Vec<u64> = std::iter::from_fn(|| q.pop_until(SimTime::from_ns(100)))
            .map(|e| e.seq)
            .collect();
        assert_eq!(order, vec![2, 0, 1]);
    }

    #[test]
    fn cancelled_events_never_surface() {
        let mut q = EventQueue::new();
        let a = ev(&mut q, 1);
        ev(&mut q, 2);
        assert!(q.cancel(a));
        assert!(!q.cancel(a));
        let got = q.pop_until(SimTime::from_ns(10)).unwrap();
        assert_eq!(got.at.ns(), 2);
        assert!(q.pop_until(SimTime::from_ns(10)).is_none());
        assert_eq!(q.scheduled, 2);
        assert_eq!(q.cancelled, 1);
    }

    #[test]
    fn bound_is_inclusive() {
        let mut q = EventQueue::new();
        ev(&mut q, 7);
        assert!(q.pop_until(SimTime::from_ns(6)).is_none());
        assert!(q.pop_until(SimTime::from_ns(7)).is_some());
    }
}
