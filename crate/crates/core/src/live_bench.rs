//! Live ping-pong benchmark: two threads, two rings, optional core
//! pinning. The measured path mirrors the simulated bench so the two
//! modes produce comparable rows.
//!
//! Timing takes one timestamp per roundtrip, at the instant the reply is
//! in hand; sample k is the distance to the previous timestamp. Clock
//! overhead therefore lands in the samples exactly once per roundtrip and
//! the mean stays equal to wall time over count.

use std::fmt;
use std::time::Instant;

use crate::spsc::{BadRingCapacity, Consumer, Producer, SpscRing};
use crate::stats::{summarize, LatencyStats};

const PING_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const PONG_SALT: u64 = 0xc2b2_ae3d_27d4_eb4f;

#[derive(Debug)]
pub enum BenchError {
    Capacity(BadRingCapacity),
    Corrupt { round: u64 },
    NoSamples,
}

impl fmt::Display for BenchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchError::Capacity(c) => write!(f, "{c}"),
            BenchError::Corrupt { round } => {
                write!(f, "payload checksum mismatch in round {round}")
            }
            BenchError::NoSamples => write!(f, "benchmark produced no samples"),
        }
    }
}

impl std::error::Error for BenchError {}

impl From<BadRingCapacity> for BenchError {
    fn from(e: BadRingCapacity) -> BenchError {
        BenchError::Capacity(e)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LiveBenchCfg {
    pub roundtrips: u64,
    pub warmup: u64,
    pub capacity: u64,
    /// Host CPUs to pin (initiator, echo). None runs unpinned.
    pub pin: Option<(u32, u32)>,
}

impl Default for LiveBenchCfg {
    fn default() -> LiveBenchCfg {
        LiveBenchCfg { roundtrips: 10_000, warmup: 1_000, capacity: 8, pin: None }
    }
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub stats: LatencyStats,
    /// Both threads landed on their requested CPUs.
    pub pinned: bool,
    /// Fruitless spin iterations, both sides combined.
    pub spin_loops: u64,
}

#[derive(Clone, Copy)]
struct Cell {
    seq: u64,
    check: u64,
}

fn ping_check(seq: u64) -> u64 {
    seq.wrapping_mul(PING_SALT) ^ PING_SALT.rotate_left(17)
}

fn pong_check(seq: u64) -> u64 {
    seq.wrapping_mul(PONG_SALT) ^ PONG_SALT.rotate_left(29)
}

/// Pin the calling thread to one host CPU. Fails on non-Linux hosts and on
/// CPUs the host does not have; callers fall back to unpinned operation.
pub fn pin_current_thread(cpu: u32) -> bool {
    #[cfg(target_os = "linux")]
    {
        // cpu_set_t holds CPU_SETSIZE slots; a larger index can never pin
        // and libc::CPU_SET would abort rather than report failure.
        if cpu >= libc::CPU_SETSIZE as u32 {
            return false;
        }
        unsafe {
            let mut set: libc::cpu_set_t = std::mem::zeroed();
            libc::CPU_ZERO(&mut set);
            libc::CPU_SET(cpu as usize, &mut set);
            libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) == 0
        }
    }
    #[cfg(not(target_os = "linux"))]
    {
        let _ = cpu;
        false
    }
}

/// Pop with a yield-aware spin: mostly `spin_loop` hints, a scheduler
/// yield every 64 misses so single-CPU hosts still make progress.
fn spin_pop(c: &mut Consumer<Cell>, spins: &mut u64) -> Cell {
    let mut misses = 0u32;
    loop {
        if let Some(v) = c.pop() {
            return v;
        }
        *spins += 1;
        misses = misses.wrapping_add(1);
        if misses % 64 == 0 {
            std::thread::yield_now();
        } else {
            std::hint::spin_loop();
        }
    }
}

fn push_now(p: &mut Producer<Cell>, mut v: Cell, spins: &mut u64) {
    loop {
        match p.push(v) {
            Ok(()) => return,
            Err(back) => {
                v = back;
                *spins += 1;
                std::thread::yield_now();
            }
        }
    }
}

pub fn run_live(cfg: LiveBenchCfg) -> Result<BenchOutcome, BenchError> {
    let (mut ping_tx, mut ping_rx) = SpscRing::new(cfg.capacity)?;
    let (mut pong_tx, mut pong_rx) = SpscRing::new(cfg.capacity)?;
    let total = cfg.warmup + cfg.roundtrips;

    let echo_pin = cfg.pin.map(|(_, b)| b);
    let echo = std::thread::spawn(move || {
        let pinned = match echo_pin {
            Some(cpu) => pin_current_thread(cpu),
            None => true,
        };
        let mut spins = 0u64;
        for _ in 0..total {
            let cell = spin_pop(&mut ping_rx, &mut spins);
            let reply = Cell { seq: cell.seq, check: pong_check(cell.seq) };
            push_now(&mut pong_tx, reply, &mut spins);
        }
        (pinned, spins)
    });

    let my_pinned = match cfg.pin {
        Some((cpu, _)) => pin_current_thread(cpu),
        None => true,
    };

    let mut samples = Vec::with_capacity(cfg.roundtrips as usize);
    let mut spins = 0u64;
    let mut last = Instant::now();
    for k in 0..total {
        push_now(&mut ping_tx, Cell { seq: k, check: ping_check(k) }, &mut spins);
        let reply = spin_pop(&mut pong_rx, &mut spins);
        if reply.seq != k || reply.check != pong_check(k) {
            // Echo never sees the error; it just drains its fixed count.
            let _ = echo.join();
            return Err(BenchError::Corrupt { round: k });
        }
        let now = Instant::now();
        if k >= cfg.warmup {
            samples.push(now.duration_since(last).as_nanos() as u64);
        }
        last = now;
    }

    let (echo_pinned, echo_spins) = echo.join().expect("echo thread never panics");
    let stats = summarize(&samples).map_err(|_| BenchError::NoSamples)?;
    Ok(BenchOutcome {
        stats,
        pinned: my_pinned && echo_pinned && cfg.pin.is_some(),
        spin_loops: spins + echo_spins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksums_disagree_between_directions() {
        for seq in [0u64, 1, 42, u64::MAX] {
            assert_ne!(ping_check(seq), pong_check(seq));
        }
    }

    #[test]
    fn short_run_completes_unpinned() {
        let cfg = LiveBenchCfg { roundtrips: 200, warmup: 20, capacity: 4, pin: None };
        let out = run_live(cfg).unwrap();
        assert_eq!(out.stats.count, 200);
        assert!(out.stats.min_ns > 0);
        assert!(!out.pinned || cfg.pin.is_some());
    }

    #[test]
    fn impossible_pin_falls_back() {
        // 4095 exceeds cpu_set_t capacity outright; 1023 fits in the set but
        // exists on no host this will run on, so the syscall itself refuses.
        assert!(!pin_current_thread(4095));
        let cfg = LiveBenchCfg { roundtrips: 50, warmup: 5, capacity: 4, pin: Some((1023, 1023)) };
        let out = run_live(cfg).unwrap();
        assert!(!out.pinned);
        assert_eq!(out.stats.count, 50);
    }
}
