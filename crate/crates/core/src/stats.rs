//! Latency statistics in the persistence-mode style: extremes are the
//! point, not averages. Jitter is max minus min, nothing fancier.
//!
//! The histogram has 64 buckets log-spaced from 1 ns to 1 s, with the first
//! bucket absorbing sub-nanosecond (zero) samples and the last absorbing
//! overflow. Integer edges are forced strictly increasing, so the lowest few
//! buckets are 1 ns wide.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

pub const NUM_BUCKETS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmptySamples;

impl fmt::Display for EmptySamples {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "no samples to summarize")
    }
}

impl std::error::Error for EmptySamples {}

/// 65 edges; bucket i covers [edges[i], edges[i+1]).
pub fn bucket_edges() -> &'static [u64; NUM_BUCKETS + 1] {
    static EDGES: OnceLock<[u64; NUM_BUCKETS + 1]> = OnceLock::new();
    EDGES.get_or_init(|| {
        let mut e = [0u64; NUM_BUCKETS + 1];
        e[0] = 0;
        for i in 1..NUM_BUCKETS {
            let geo = 10f64.powf(9.0 * (i as f64 - 1.0) / 62.0).round() as u64;
            e[i] = geo.max(e[i - 1] + 1);
        }
        e[NUM_BUCKETS] = u64::MAX;
        e
    })
}

fn bucket_for(sample: u64) -> usize {
    let edges = bucket_edges();
    // First edge greater than the sample, minus one. A sample of u64::MAX
    // compares >= every edge; clamp it into the overflow bucket.
    (edges.partition_point(|&e| e <= sample) - 1).min(NUM_BUCKETS - 1)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatencyStats {
    pub count: u64,
    pub min_ns: u64,
    pub max_ns: u64,
    pub sum_ns: u128,
    pub buckets: [u64; NUM_BUCKETS],
}

impl Default for LatencyStats {
    fn default() -> LatencyStats {
        LatencyStats::new()
    }
}

impl LatencyStats {
    pub fn new() -> LatencyStats {
        LatencyStats {
            count: 0,
            min_ns: u64::MAX,
            max_ns: 0,
            sum_ns: 0,
            buckets: [0; NUM_BUCKETS],
        }
    }

    pub fn record(&mut self, sample_ns: u64) {
        self.count += 1;
        self.min_ns = self.min_ns.min(sample_ns);
        self.max_ns = self.max_ns.max(sample_ns);
        self.sum_ns += u128::from(sample_ns);
        self.buckets[bucket_for(sample_ns)] += 1;
    }

    pub fn jitter_ns(&self) -> u64 {
        if self.count == 0 {
            0
        } else {
            self.max_ns - self.min_ns
        }
    }

    pub fn mean_ns(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum_ns as f64 / self.count as f64
        }
    }
}

pub fn summarize(samples: &[u64]) -> Result<LatencyStats, EmptySamples> {
    if samples.is_empty() {
        return Err(EmptySamples);
    }
    let mut s = LatencyStats::new();
    for &v in samples {
        s.record(v);
    }
    Ok(s)
}

/// Histogram rows as CSV lines (no header), one per bucket.
pub fn persistence_rows(stats: &LatencyStats) -> String {
    let edges = bucket_edges();
    let mut out = String::new();
    for (i, &count) in stats.buckets.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", edges[i], edges[i + 1], count));
    }
    out
}

pub const PERSISTENCE_HEADER: &str = "bucket_lo_ns,bucket_hi_ns,count";

pub fn export_persistence(
    stats: &LatencyStats,
    path: &Path,
    preamble: &str,
) -> Result<(), std::io::Error> {
    let mut w = BufWriter::new(File::create(path)?);
    if !preamble.is_empty() {
        writeln!(w, "{preamble}")?;
    }
    writeln!(w, "{PERSISTENCE_HEADER}")?;
    w.write_all(persistence_rows(stats).as_bytes())?;
    w.flush()
}
