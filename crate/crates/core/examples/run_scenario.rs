//! Full pipeline for a scenario file or bundled case, writing every CSV and
//! the JSON run report.
//!
//! ```bash
//! cargo run --release --example run_scenario -- case3 /tmp/case3
//! ```

use std::path::PathBuf;

use plmp::scenario::{load_scenario, run};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let scenario = PathBuf::from(args.next().unwrap_or_else(|| "case1".into()));
    let cfg = load_scenario(&scenario)?;
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join(&cfg.name));
    std::fs::create_dir_all(&out)?;

    let report = run(&cfg, &out)?;
    for s in &report.stages {
        println!("{:10} {:7.3}s", s.stage, s.seconds);
    }
    for ts in report.timesteps.iter().filter(|t| !t.binding.is_empty()) {
        println!("t={:2} binding: {}", ts.t, ts.binding.join(", "));
    }
    for a in &report.agents {
        println!("agent at bus {}: profit {:?}, regret {:?}", a.bus, a.mean_profit, a.final_regret);
    }
    if let Some(ac) = &report.ac {
        println!("AC: {} samples, max upper-violation rate {:.4}", ac.samples, ac.max_upper_rate);
    }
    println!("files in {}: {}", out.display(), report.files.join(", "));
    Ok(())
}
