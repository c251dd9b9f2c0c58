//! Interference model: what a non-silenced kernel does to a core.
//!
//! All values are scenario inputs. Handler costs are either constant or
//! uniform over a closed range; draws go through the counter-based RNG so a
//! scenario edit elsewhere does not shift them.

use crate::rng::{SimRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostDist {
    Constant(u64),
    Uniform { lo: u64, hi: u64 },
}

impl CostDist {
    pub const ZERO: CostDist = CostDist::Constant(0);

    pub fn sample(self, rng: &SimRng, stream: Stream, counter: u64) -> u64 {
        match self {
            CostDist::Constant(c) => c,
            CostDist::Uniform { lo, hi } => rng.uniform(stream, counter, lo, hi),
        }
    }

    pub fn max(self) -> u64 {
        match self {
            CostDist::Constant(c) => c,
            CostDist::Uniform { hi, .. } => hi,
        }
    }
}

impl std::fmt::Display for CostDist {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CostDist::Constant(c) => write!(f, "constant:{c}"),
            CostDist::Uniform { lo, hi } => write!(f, "uniform:{lo}:{hi}"),
        }
    }
}

/// Accepts the two tagged forms `constant:N` and `uniform:LO:HI`, plus a
/// bare integer as shorthand for a constant.
impl std::str::FromStr for CostDist {
    type Err = String;

    fn from_str(s: &str) -> Result<CostDist, String> {
        if let Ok(n) = s.parse::<u64>() {
            return Ok(CostDist::Constant(n));
        }
        let mut parts = s.split(':');
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some("constant"), Some(n), None, None) => n
                .parse()
                .map(CostDist::Constant)
                .map_err(|_| format!("bad constant cost {n:?}")),
            (Some("uniform"), Some(lo), Some(hi), None) => {
                let lo: u64 = lo.parse().map_err(|_| format!("bad uniform lower bound {lo:?}"))?;
                let hi: u64 = hi.parse().map_err(|_| format!("bad uniform upper bound {hi:?}"))?;
                if lo > hi {
                    return Err(format!("uniform bounds inverted: {lo} > {hi}"));
                }
                Ok(CostDist::Uniform { lo, hi })
            }
            _ => Err(format!("unrecognized cost distribution {s:?}")),
        }
    }
}

/// Background activity applied to every core unless isolation removes it.
/// A zero period or interval disables that source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseProfile {
    /// Scheduler tick period; 0 = no tick timers.
    pub tick_period_ns: u64,
    pub tick_cost: CostDist,
    /// Background IPI spacing (0 = none); the stream originates on
    /// `ipi_src` and targets `ipi_dst` (set by the scenario builder).
    pub ipi_interval_ns: u64,
    pub ipi_cost: CostDist,
    /// RT-throttle replenishment period per core; 0 = no RT bandwidth.
    pub rtb_period_ns: u64,
    pub rtb_cost: CostDist,
}

impl NoiseProfile {
    pub const SILENT: NoiseProfile = NoiseProfile {
        tick_period_ns: 0,
        tick_cost: CostDist::ZERO,
        ipi_interval_ns: 0,
        ipi_cost: CostDist::ZERO,
        rtb_period_ns: 0,
        rtb_cost: CostDist::ZERO,
    };
}

impl Default for NoiseProfile {
    fn default() -> NoiseProfile {
        NoiseProfile::SILENT
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_ignores_rng() {
        let rng = SimRng::new(1);
        assert_eq!(CostDist::Constant(70_000).sample(&rng, Stream::TickCost(0), 9), 70_000);
    }

    #[test]
    fn uniform_respects_bounds_and_is_reproducible() {
        let rng = SimRng::new(5);
        let d = CostDist::Uniform { lo: 100, hi: 200 };
        let a: Vec<u64> = (0..50).map(|i| d.sample(&rng, Stream::IpiCost(1), i)).collect();
        let b: Vec<u64> = (0..50).map(|i| d.sample(&rng, Stream::IpiCost(1), i)).collect();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| (100..=200).contains(v)));
    }
}
