//! Clearing time on random radial feeders of growing size.
//!
//! ```bash
//! cargo run --release --example synthetic_scaling -- 14 50 100 179
//! ```

use plmp::ccopf;
use plmp::scenario::{generate_synthetic_grid, Density};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sizes: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let sizes = if sizes.is_empty() { vec![14, 30, 60] } else { sizes };
    println!("buses  variables/period  solver [s]  wall [s]  max gap");
    for n in sizes {
        let cfg = generate_synthetic_grid(n, 1, Density::default());
        let problem = cfg.build_problem()?;
        let vars = ccopf::assemble(&problem, 0)?.n_vars();
        let solution = ccopf::solve(&problem)?;
        let gap = solution.timesteps.iter().map(|t| t.relative_gap).fold(0.0, f64::max);
        println!("{n:5}  {vars:16}  {:10.2}  {:8.2}  {gap:.1e}", solution.solver_time, solution.wall_time);
    }
    Ok(())
}
