//! One line per criterion; exits nonzero when any criterion fails.

use yamabe_core::acceptance::{run_selected, AcceptanceConfig, ALL_CRITERIA};

fn main() {
    let workers = std::thread::available_parallelism()
        .map_or(4, |n| n.get())
        .min(8);
    let cfg = AcceptanceConfig {
        workers,
        ..AcceptanceConfig::default()
    };
    let t0 = std::time::Instant::now();
    let results = run_selected(&cfg, &ALL_CRITERIA, |r| {
        println!("{}  ({:.1} s)", r.line(), r.seconds);
        if let Some(e) = &r.error {
            println!("    error: {e}");
        }
        for c in &r.checks {
            println!(
                "    {} {} = {}, admissible {}",
                if c.passed { "ok  " } else { "FAIL" },
                c.name,
                c.measured
                    .map_or("non-finite".into(), |m| format!("{m:.6e}")),
                c.band_text()
            );
        }
    });
    let failed = results.iter().filter(|r| !r.passed).count();
    println!(
        "acceptance: {} passed, {failed} failed in {:.0} s",
        results.len() - failed,
        t0.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
