//! Price separation across a congested branch: clears the bundled
//! congestion case with and without the reduced limit on branch 8-9 and
//! compares prices on both sides.
//!
//! ```bash
//! cargo run --release --example congestion_pricing
//! ```

use plmp::ccopf::{self, ConstraintKind};
use plmp::market::{extract_plmps, MarketSolution};
use plmp::scenario::ScenarioConfig;

fn clear(cfg: &ScenarioConfig) -> Result<(MarketSolution, ccopf::FeasibilityReport), Box<dyn std::error::Error>> {
    let problem = cfg.build_problem()?;
    let solution = ccopf::solve(&problem)?;
    let report = ccopf::feasibility_report(&solution);
    Ok((extract_plmps(&problem, solution)?, report))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let congested = ScenarioConfig::bundled("case2")?;
    let mut relaxed = congested.clone();
    for b in relaxed.network.branches.iter_mut().filter(|b| (b.from, b.to) == (8, 9)) {
        b.f_max = 0.5;
    }
    let line = congested.build_network()?.branch_between(8, 9).ok_or("no branch 8-9")?;
    let (market, report) = clear(&congested)?;
    let (base, _) = clear(&relaxed)?;

    println!(" t  8-9 binding   π1 (σ)           π9 (σ)           π9 uncongested (σ)");
    for t in 0..market.horizon() {
        let p = |m: &MarketSolution, bus| m.plmp(bus, t).map(|x| (x.day_ahead(), x.active.std()));
        let ((a1, s1), (a9, s9), (b9, sb9)) = (p(&market, 1)?, p(&market, 9)?, p(&base, 9)?);
        println!(
            "{t:2}  {:5}        {a1:7.2} ({s1:5.2})  {a9:7.2} ({s9:5.2})  {b9:7.2} ({sb9:5.2})",
            report.is_binding(t, ConstraintKind::BranchActiveUpper, line)
        );
    }
    Ok(())
}
