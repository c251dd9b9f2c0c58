//! Virtual time and core identifiers.
//!
//! Time is a count of simulated nanoseconds. Runs are capped at 2^62 ns
//! (about 146 simulated years) so additions never wrap u64 arithmetic.

use std::fmt;

/// Hard ceiling on any event timestamp. Scenario validation rejects
/// durations beyond this, so in-run arithmetic can assert instead of wrap.
pub const MAX_SIM_NS: u64 = 1 << 62;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_ns(ns: u64) -> SimTime {
        assert!(ns <= MAX_SIM_NS, "sim time {ns} beyond run cap");
        SimTime(ns)
    }

    pub fn ns(self) -> u64 {
        self.0
    }

    /// Advance by `d` nanoseconds. Panics past the run cap; the cap is an
    /// invariant, not a recoverable condition.
    pub fn plus(self, d: u64) -> SimTime {
        SimTime::from_ns(self.0 + d)
    }

    pub fn since(self, earlier: SimTime) -> u64 {
        self.0
            .checked_sub(earlier.0)
            .expect("time went backwards")
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CoreId(pub u32);

impl CoreId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for CoreId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plus_and_since_round_trip() {
        let t = SimTime::from_ns(5).plus(7);
        assert_eq!(t.ns(), 12);
        assert_eq!(t.since(SimTime::from_ns(5)), 7);
    }

    #[test]
    #[should_panic(expected = "beyond run cap")]
    fn cap_is_enforced() {
        SimTime::from_ns(MAX_SIM_NS).plus(1);
    }
}
