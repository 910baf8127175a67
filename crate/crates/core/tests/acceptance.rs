//! Runs every stage with the default configuration and reports one line per acceptance criterion.

use qetcs::pipeline::{run, RunConfig};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { output_dir: dir.path().to_path_buf(), ..RunConfig::default() };
    let out = run(&cfg);
    if let Some(e) = &out.error {
        println!("run stopped: {e}");
    }
    let mut all = true;
    for criterion in 1..=10u8 {
        let checks: Vec<_> = out.summary.checks.iter().filter(|c| c.criterion == criterion).collect();
        let passed = !checks.is_empty() && checks.iter().all(|c| c.passed);
        all &= passed;
        let detail = checks
            .iter()
            .map(|c| format!("{} = {:.3e} ({} {:.1e})", c.name, c.value, c.relation, c.threshold))
            .collect::<Vec<_>>()
            .join("; ");
        println!("criterion {criterion:>2}: {} | {}", if passed { "PASS" } else { "FAIL" }, if detail.is_empty() { "no checks recorded".into() } else { detail });
    }
    println!("stage timings (s): {:?}", out.timings);
    if !all {
        eprintln!("at least one acceptance criterion failed");
        std::process::exit(1);
    }
}
