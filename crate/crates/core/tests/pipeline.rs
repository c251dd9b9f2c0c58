//! End-to-end runs of the repo fixtures through the file pipeline.

use std::fs;
use std::path::{Path, PathBuf};

use isoscope_core::run::{
    compare, read_digest, run_file, run_sim_bench, RunError, RunOptions, SimBenchCfg,
};
use isoscope_core::scenario::Scenario;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn out_dir(tag: &str) -> tempfile::TempDir {
    tempfile::Builder::new().prefix(tag).tempdir().expect("tempdir")
}

#[test]
fn every_fixture_parses_and_validates() {
    let dir = fixture("");
    let mut seen = 0;
    for entry in fs::read_dir(dir).expect("scenarios dir") {
        let path = entry.expect("entry").path();
        if path.extension().is_none_or(|e| e != "scn") {
            continue;
        }
        let text = fs::read_to_string(&path).expect("fixture readable");
        let sc = Scenario::parse(&text)
            .unwrap_or_else(|e| panic!("{} does not parse: {e}", path.display()));
        sc.validate().unwrap_or_else(|e| panic!("{} invalid: {e}", path.display()));
        // The canonical form must mean the same thing.
        let again = Scenario::parse(&sc.render()).expect("render parses");
        assert_eq!(sc, again, "{} render round-trip", path.display());
        seen += 1;
    }
    assert!(seen >= 5, "expected the fixture set, found {seen}");
}

#[test]
fn counter_toggle_run_writes_the_full_bundle() {
    let out = out_dir("ct");
    let opts = RunOptions::new(out.path());
    let report = run_file(&fixture("counter_toggle.scn"), &opts).expect("run succeeds");

    for f in ["trace.csv", "stats.csv", "persistence.csv", "collector.csv", "summary.txt"] {
        assert!(out.path().join(f).exists(), "{f} missing");
    }
    let head = format!("# seed={} scenario_sha256={}", report.seed, report.scenario_sha256);
    for f in ["trace.csv", "stats.csv", "persistence.csv", "collector.csv"] {
        let text = fs::read_to_string(out.path().join(f)).expect("readable");
        assert!(
            text.starts_with(&head),
            "{f} must start with the provenance line, got {:?}",
            text.lines().next()
        );
    }
    assert_eq!(report.seed, 7);
    assert!(!report.seed_defaulted);
    assert_eq!(report.blocked_sync_callers, 0, "mid-window sync must complete");
    assert!(report.gp_completions >= 1);
    assert_eq!(report.scenario_sha256.len(), 64);

    let summary = fs::read_to_string(out.path().join("summary.txt")).expect("summary");
    assert!(summary.contains("scenario: counter_toggle"));
    assert!(summary.contains("rcu_sync 1: completed at"));
}

#[test]
fn same_seed_same_trace_different_seed_different_trace() {
    let (a, b, c) = (out_dir("tr-a"), out_dir("tr-b"), out_dir("tr-c"));
    let path = fixture("cross_core.scn");
    let mut opts = RunOptions::new(a.path());
    opts.duration_override = None;
    run_file(&path, &opts).expect("run a");
    let opts_b = RunOptions { out_dir: b.path().to_path_buf(), ..opts.clone() };
    run_file(&path, &opts_b).expect("run b");
    let opts_c = RunOptions {
        out_dir: c.path().to_path_buf(),
        seed_override: Some(999),
        ..opts.clone()
    };
    run_file(&path, &opts_c).expect("run c");

    let read = |d: &tempfile::TempDir| fs::read(d.path().join("trace.csv")).expect("trace");
    assert_eq!(read(&a), read(&b), "equal seeds must replay byte-identically");
    assert_ne!(read(&a), read(&c), "seed override must change the run");
}

#[test]
fn stall_fixture_starves_the_sync_past_the_horizon() {
    let out = out_dir("stall");
    let report =
        run_file(&fixture("rcu_stall.scn"), &RunOptions::new(out.path())).expect("run succeeds");
    // Fix off: the starved caller is an observation, not a crash.
    assert_eq!(report.blocked_sync_callers, 1);
    assert_eq!(report.gp_completions, 0);
    let summary = fs::read_to_string(out.path().join("summary.txt")).expect("summary");
    assert!(
        summary.contains("rcu_sync 9: still blocked at the horizon"),
        "summary must surface the starved caller:\n{summary}"
    );
}

#[test]
fn ipc_fixture_completes_every_round() {
    let out = out_dir("ipc");
    let report =
        run_file(&fixture("ipc_bench.scn"), &RunOptions::new(out.path())).expect("run succeeds");
    let stats = report.stats.expect("samples recorded");
    assert_eq!(stats.count, 20000, "every round measured exactly once");
    // Two 150 ns hops bound the roundtrip from below.
    assert!(stats.min_ns >= 300, "min {} under the wire floor", stats.min_ns);
}

#[test]
fn compare_reads_back_what_runs_wrote() {
    let (a, b) = (out_dir("cmp-a"), out_dir("cmp-b"));
    run_file(&fixture("ipc_bench.scn"), &RunOptions::new(a.path())).expect("run a");
    run_file(&fixture("counter_toggle.scn"), &RunOptions::new(b.path())).expect("run b");

    let cmp = compare(a.path(), b.path()).expect("both runs exist");
    assert_eq!(cmp.a.row.scenario, "ipc_bench");
    assert_eq!(cmp.b.row.scenario, "counter_toggle");
    assert_eq!(cmp.a.row.count, 20000);
    assert_eq!(cmp.a.duration_ns, Some(100000000));
    let rendered = cmp.to_string();
    assert!(rendered.starts_with("configuration,period_ns,min_lat_ns,max_lat_ns,duration_ns"));
    assert!(rendered.contains("jitter_ratio,b/a,"));

    // Self-comparison is the identity.
    let same = compare(a.path(), a.path()).expect("same run twice");
    assert!(same.to_string().contains("max_ratio,b/a,1.000"));

    let missing = compare(a.path(), Path::new("/definitely/not/here"));
    assert!(matches!(missing, Err(RunError::MissingRun(_))));
}

#[test]
fn digest_survives_a_missing_summary() {
    let out = out_dir("nosum");
    run_file(&fixture("ipc_bench.scn"), &RunOptions::new(out.path())).expect("run");
    fs::remove_file(out.path().join("summary.txt")).expect("remove");
    let d = read_digest(out.path()).expect("stats alone suffice");
    assert_eq!(d.period_ns, None);
    assert_eq!(d.duration_ns, None);
    assert_eq!(d.row.count, 20000);
}

#[test]
fn sim_bench_is_deterministic_and_positive() {
    let cfg = SimBenchCfg { rounds: 500, ..SimBenchCfg::default() };
    let a = run_sim_bench(cfg).expect("bench runs");
    let b = run_sim_bench(cfg).expect("bench runs");
    assert_eq!(a.count, 500);
    assert_eq!((a.min_ns, a.max_ns), (b.min_ns, b.max_ns));
    assert!(a.min_ns >= 2 * 150);
}
