//! Grace-period state machine.
//!
//! This is a pure model: methods mutate state and report effects; the engine
//! turns effects into events and trace rows. Keeping it pure lets the
//! acceptance suite enumerate every interleaving on small configurations.
//!
//! Two properties matter. Safety: a grace period never completes while a
//! watched core has not passed a quiescent state since it began (cores
//! enrolled mid-period are conservatively required too). Liveness hinges on
//! the grace-period kthread: advancing a period takes one kthread step, and
//! the kthread only runs where placement allows. Isolated cores are forced
//! quiescent (dropped from the watched set) on entry, and, when the
//! placement fix is on, also dropped from the kthread's allowed set, which
//! is what keeps a never-yielding isolated workload from starving every
//! synchronize caller in the system. Expedited grace periods do not exist
//! here: nothing in this module can emit an IPI of any kind.

use std::collections::BTreeSet;
use std::fmt;

use crate::time::CoreId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CallerId(pub u32);

impl fmt::Display for CallerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NotWatched(pub CoreId);

impl fmt::Display for NotWatched {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "core {} is not in the RCU watched set", self.0)
    }
}

impl std::error::Error for NotWatched {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Waiter {
    pub caller: CallerId,
    /// The waiter unblocks when gp_seq reaches this value.
    pub awaited: u64,
}

/// What one transition did. `started` and `completed` carry grace-period
/// numbers (a period is numbered by the gp_seq value its completion
/// produces). `needs_step` means the machine is blocked on a kthread step.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Effects {
    pub started: Vec<u64>,
    pub completed: Vec<u64>,
    pub released: Vec<Waiter>,
    pub needs_step: bool,
}

impl Effects {
    fn merge(&mut self, other: Effects) {
        self.started.extend(other.started);
        self.completed.extend(other.completed);
        self.released.extend(other.released);
        self.needs_step = other.needs_step;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RcuModel {
    /// Count of completed grace periods.
    pub gp_seq: u64,
    pub watched: BTreeSet<CoreId>,
    /// Cores that reported quiescence since the active period began.
    pub quiescent: BTreeSet<CoreId>,
    pub gp_active: bool,
    pub waiters: Vec<Waiter>,
    /// Completion predicate holds but the advance awaits a kthread step.
    pub completion_pending: bool,
    /// When false, advances happen inline (no kthread modeling).
    pub kthread_gated: bool,
}

impl RcuModel {
    pub fn new(cores: impl IntoIterator<Item = CoreId>, kthread_gated: bool) -> RcuModel {
        RcuModel {
            gp_seq: 0,
            watched: cores.into_iter().collect(),
            quiescent: BTreeSet::new(),
            gp_active: false,
            waiters: Vec::new(),
            completion_pending: false,
            kthread_gated,
        }
    }

    fn predicate_holds(&self) -> bool {
        self.gp_active && self.watched.is_subset(&self.quiescent)
    }

    /// Chain completions as far as the state allows without a kthread step.
    fn settle(&mut self) -> Effects {
        let mut fx = Effects::default();
        loop {
            if !self.predicate_holds() {
                break;
            }
            if self.kthread_gated {
                self.completion_pending = true;
                fx.needs_step = true;
                break;
            }
            fx.merge(self.advance());
        }
        fx
    }

    /// One grace-period advance: completion, waiter release, maybe the next
    /// period's start. Callable only when the predicate holds.
    fn advance(&mut self) -> Effects {
        assert!(self.predicate_holds(), "advance without completion predicate");
        assert!(
            self.watched.is_subset(&self.quiescent),
            "grace period completing past a non-quiescent watched core"
        );
        let mut fx = Effects::default();
        self.gp_seq += 1;
        self.gp_active = false;
        self.completion_pending = false;
        self.quiescent.clear();
        fx.completed.push(self.gp_seq);
        let (done, still): (Vec<Waiter>, Vec<Waiter>) =
            self.waiters.drain(..).partition(|w| w.awaited <= self.gp_seq);
        fx.released = done;
        self.waiters = still;
        if !self.waiters.is_empty() {
            fx.merge(self.start_gp());
        }
        fx
    }

    fn start_gp(&mut self) -> Effects {
        assert!(!self.gp_active);
        self.gp_active = true;
        self.quiescent.clear();
        let mut fx = Effects { started: vec![self.gp_seq + 1], ..Effects::default() };
        // An empty watched set satisfies the predicate at birth.
        if self.predicate_holds() {
            if self.kthread_gated {
                self.completion_pending = true;
                fx.needs_step = true;
            } else {
                fx.merge(self.advance());
            }
        }
        fx
    }

    /// Forced quiescence on isolation entry. Removing the last holdout can
    /// complete the period on the spot.
    pub fn mark_isolated(&mut self, core: CoreId) -> Effects {
        self.watched.remove(&core);
        self.quiescent.remove(&core);
        self.settle()
    }

    /// Re-enrollment on isolation exit. A period already in flight now waits
    /// on this core as well; that is the conservative side of safety. A
    /// completion the kthread had not acted on yet is void the moment this
    /// core gates it again.
    pub fn unmark_isolated(&mut self, core: CoreId) {
        self.watched.insert(core);
        if self.completion_pending && !self.predicate_holds() {
            self.completion_pending = false;
        }
    }

    pub fn is_watched(&self, core: CoreId) -> bool {
        self.watched.contains(&core)
    }

    /// Returns Ok(effects); `effects.completed` is non-empty when this
    /// report finished the period (the boolean the callers care about).
    pub fn report_quiescent(&mut self, core: CoreId) -> Result<Effects, NotWatched> {
        if !self.watched.contains(&core) {
            return Err(NotWatched(core));
        }
        if !self.gp_active {
            return Ok(Effects::default());
        }
        self.quiescent.insert(core);
        Ok(self.settle())
    }

    /// Register a waiter for a full grace period: one that starts strictly
    /// after this call. Returns (awaited gp_seq, effects).
    pub fn synchronize(&mut self, caller: CallerId) -> (u64, Effects) {
        let awaited = if self.gp_active { self.gp_seq + 2 } else { self.gp_seq + 1 };
        self.waiters.push(Waiter { caller, awaited });
        let fx = if self.gp_active {
            // The in-flight period may already satisfy its predicate while
            // the advance waits on the kthread; nothing new to do here.
            Effects { needs_step: self.completion_pending, ..Effects::default() }
        } else {
            self.start_gp()
        };
        (awaited, fx)
    }

    /// One kthread step: performs a pending advance, if any.
    pub fn kthread_step(&mut self) -> Effects {
        if !self.completion_pending {
            return Effects::default();
        }
        let mut fx = self.advance();
        // A follow-on period may immediately satisfy its predicate; that
        // next advance costs its own step.
        if self.completion_pending {
            fx.needs_step = true;
        }
        fx
    }

    /// An RCU-protected read on an unwatched core is undefined behavior in
    /// the modeled kernel; surface it as an error.
    pub fn check_read(&self, core: CoreId) -> Result<(), NotWatched> {
        if self.watched.contains(&core) {
            Ok(())
        } else {
            Err(NotWatched(core))
        }
    }

    /// Compact fingerprint for state-space enumeration.
    pub fn state_key(&self) -> (u64, Vec<u32>, Vec<u32>, bool, Vec<(u32, u64)>, bool) {
        (
            self.gp_seq,
            self.watched.iter().map(|c| c.0).collect(),
            self.quiescent.iter().map(|c| c.0).collect(),
            self.gp_active,
            self.waiters.iter().map(|w| (w.caller.0, w.awaited)).collect(),
            self.completion_pending,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cores(n: u32) -> Vec<CoreId> {
        (0..n).map(CoreId).collect()
    }

    #[test]
    fn last_report_completes_and_advances_seq() {
        let mut m = RcuModel::new(cores(3), false);
        let (awaited, fx) = m.synchronize(CallerId(0));
        assert_eq!(awaited, 1);
        assert_eq!(fx.started, vec![1]);
        assert!(m.report_quiescent(CoreId(0)).unwrap().completed.is_empty());
        assert!(m.report_quiescent(CoreId(1)).unwrap().completed.is_empty());
        let fx = m.report_quiescent(CoreId(2)).unwrap();
        assert_eq!(fx.completed, vec![1]);
        assert_eq!(fx.released, vec![Waiter { caller: CallerId(0), awaited: 1 }]);
        assert_eq!(m.gp_seq, 1);
        assert!(!m.gp_active);
    }

    #[test]
    fn report_from_unwatched_core_is_an_error() {
        let mut m = RcuModel::new(cores(2), false);
        m.mark_isolated(CoreId(1));
        assert_eq!(m.report_quiescent(CoreId(1)).unwrap_err(), NotWatched(CoreId(1)));
    }

    #[test]
    fn isolating_the_last_holdout_completes_the_period() {
        let mut m = RcuModel::new(cores(3), false);
        m.synchronize(CallerId(7));
        m.report_quiescent(CoreId(0)).unwrap();
        m.report_quiescent(CoreId(1)).unwrap();
        let fx = m.mark_isolated(CoreId(2));
        assert_eq!(fx.completed, vec![1]);
        assert_eq!(fx.released.len(), 1);
        assert_eq!(fx.released[0].caller, CallerId(7));
    }

    #[test]
    fn synchronize_during_a_period_waits_for_the_next_one() {
        let mut m = RcuModel::new(cores(2), false);
        m.synchronize(CallerId(0));
        m.report_quiescent(CoreId(0)).unwrap();
        let (awaited, _) = m.synchronize(CallerId(1));
        assert_eq!(awaited, 2);
        let fx = m.report_quiescent(CoreId(1)).unwrap();
        // First period done, first waiter out; second period started for the
        // second waiter.
        assert_eq!(fx.completed, vec![1]);
        assert_eq!(fx.released.len(), 1);
        assert_eq!(fx.released[0].caller, CallerId(0));
        assert_eq!(fx.started, vec![2]);
        assert!(m.gp_active);
        // Both cores report again; only then is the second waiter released.
        m.report_quiescent(CoreId(0)).unwrap();
        let fx = m.report_quiescent(CoreId(1)).unwrap();
        assert_eq!(fx.released.len(), 1);
        assert_eq!(fx.released[0].caller, CallerId(1));
    }

    #[test]
    fn gated_machine_blocks_on_kthread_steps() {
        let mut m = RcuModel::new(cores(1), true);
        let (_, fx) = m.synchronize(CallerId(0));
        assert!(fx.released.is_empty());
        let fx = m.report_quiescent(CoreId(0)).unwrap();
        assert!(fx.needs_step);
        assert!(fx.completed.is_empty());
        assert_eq!(m.gp_seq, 0);
        let fx = m.kthread_step();
        assert_eq!(fx.completed, vec![1]);
        assert_eq!(fx.released.len(), 1);
    }

    #[test]
    fn empty_watched_set_still_costs_a_step_per_advance() {
        let mut m = RcuModel::new(cores(1), true);
        m.mark_isolated(CoreId(0));
        let (awaited, fx) = m.synchronize(CallerId(0));
        assert_eq!(awaited, 1);
        assert!(fx.needs_step);
        let fx = m.kthread_step();
        assert_eq!(fx.completed, vec![1]);
        assert_eq!(fx.released.len(), 1);
        assert!(!fx.needs_step);
    }

    #[test]
    fn reads_on_unwatched_cores_are_flagged() {
        let mut m = RcuModel::new(cores(2), false);
        assert!(m.check_read(CoreId(1)).is_ok());
        m.mark_isolated(CoreId(1));
        assert!(m.check_read(CoreId(1)).is_err());
        m.unmark_isolated(CoreId(1));
        assert!(m.check_read(CoreId(1)).is_ok());
    }
}
