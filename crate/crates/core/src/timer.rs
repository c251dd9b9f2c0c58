//! High-resolution timers and RT-bandwidth enforcement structures.
//!
//! A timer owns at most one pending expiry event. Cancelling removes that
//! event from the queue, so a silenced core sees no expiry at all rather
//! than a swallowed one. Periodic timers re-arm at expiry + period; after a
//! restoration they re-arm at restoration time + period (phase resets).

use crate::event::EventHandle;
use crate::time::{CoreId, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimerId(pub u32);

impl std::fmt::Display for TimerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RtbId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerRole {
    /// Per-core scheduler tick; expiry costs come from the noise profile.
    SchedTick,
    /// Replenishment timer of an RT-bandwidth structure.
    RtBandwidth(RtbId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerState {
    Active,
    Cancelled,
}

#[derive(Debug, Clone)]
pub struct HrTimer {
    pub id: TimerId,
    pub owner: CoreId,
    pub expiry: SimTime,
    pub period: Option<u64>,
    pub role: TimerRole,
    pub state: TimerState,
    pub pending: Option<EventHandle>,
}

/// RT throttling bandwidth for one core. `deleted` flips when the purge
/// removes it; restoration re-inserts it with `deleted = false`.
#[derive(Debug, Clone)]
pub struct RtBandwidth {
    pub id: RtbId,
    pub core: CoreId,
    pub period: u64,
    pub runtime_quota: u64,
    pub timer: TimerId,
    pub deleted: bool,
}

#[derive(Debug, Default)]
pub struct TimerTable {
    timers: Vec<HrTimer>,
    rtbs: Vec<RtBandwidth>,
}

impl TimerTable {
    pub fn new() -> TimerTable {
        TimerTable::default()
    }

    pub fn insert(
        &mut self,
        owner: CoreId,
        expiry: SimTime,
        period: Option<u64>,
        role: TimerRole,
    ) -> TimerId {
        let id = TimerId(self.timers.len() as u32);
        self.timers.push(HrTimer {
            id,
            owner,
            expiry,
            period,
            role,
            state: TimerState::Active,
            pending: None,
        });
        id
    }

    pub fn insert_rtb(&mut self, core: CoreId, period: u64, runtime_quota: u64, timer: TimerId) -> RtbId {
        let id = RtbId(self.rtbs.len() as u32);
        self.rtbs.push(RtBandwidth { id, core, period, runtime_quota, timer, deleted: false });
        id
    }

    pub fn get(&self, id: TimerId) -> &HrTimer {
        &self.timers[id.0 as usize]
    }

    pub fn get_mut(&mut self, id: TimerId) -> &mut HrTimer {
        &mut self.timers[id.0 as usize]
    }

    pub fn rtb(&self, id: RtbId) -> &RtBandwidth {
        &self.rtbs[id.0 as usize]
    }

    pub fn rtb_mut(&mut self, id: RtbId) -> &mut RtBandwidth {
        &mut self.rtbs[id.0 as usize]
    }

    /// Multiset of (id, period) over Active timers owned by `core`.
    /// Restoration completeness is checked against this.
    pub fn active_multiset(&self, core: CoreId) -> Vec<(TimerId, Option<u64>)> {
        let mut v: Vec<(TimerId, Option<u64>)> = self
            .timers
            .iter()
            .filter(|t| t.owner == core && t.state == TimerState::Active)
            .map(|t| (t.id, t.period))
            .collect();
        v.sort();
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn active_multiset_ignores_cancelled() {
        let mut tt = TimerTable::new();
        let a = tt.insert(CoreId(0), SimTime::from_ns(10), Some(5), TimerRole::SchedTick);
        let b = tt.insert(CoreId(0), SimTime::from_ns(20), None, TimerRole::SchedTick);
        tt.insert(CoreId(1), SimTime::from_ns(30), Some(5), TimerRole::SchedTick);
        tt.get_mut(b).state = TimerState::Cancelled;
        assert_eq!(tt.active_multiset(CoreId(0)), vec![(a, Some(5))]);
    }
}
