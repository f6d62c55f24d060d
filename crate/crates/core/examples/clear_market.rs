//! Clears the bundled uncongested case: day-ahead prices, price fan
//! quantiles and the realtime price for one measured germ.
//!
//! ```bash
//! cargo run --release --example clear_market
//! ```

use plmp::ccopf;
use plmp::market::{extract_plmps, QUANTILE_LEVELS};
use plmp::scenario::ScenarioConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig::bundled("case1")?;
    let problem = cfg.build_problem()?;
    let solution = ccopf::solve(&problem)?;
    println!(
        "status {:?}, objective {:.4}, solver {:.3}s over {} periods",
        solution.status(),
        solution.objective,
        solution.solver_time,
        solution.timesteps.len()
    );
    let market = extract_plmps(&problem, solution)?;

    println!("\n t  import   π_DA(1)  π_DA(14)   q05      q95");
    for t in 0..market.horizon() {
        let dist = market.price_distribution(1, t, 5000, cfg.sampling.seed)?;
        let q = |level: f64| dist.quantiles[QUANTILE_LEVELS.iter().position(|&l| l == level).unwrap()];
        println!(
            "{t:2}  {:.4}  {:8.3}  {:8.3}  {:7.3}  {:7.3}",
            market.opf.timesteps[t].slack_p[0],
            market.day_ahead(1, t)?,
            market.day_ahead(14, t)?,
            q(0.05),
            q(0.95)
        );
    }

    // realtime price once the germ of hour 18 is measured
    let measured = [1.2, 0.9, 0.3];
    let (active, reactive) = market.realtime_price(1, 18, &measured)?;
    println!("\nrealtime at bus 1, t=18, ξ={measured:?}: active {active:.3}, reactive {reactive:.3}");
    println!("delta price: {:+.3}", market.delta_price(1, 18, &measured)?);
    Ok(())
}
