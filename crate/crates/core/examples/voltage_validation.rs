//! Probabilistic voltage limits on the bundled voltage-constrained case:
//! Monte-Carlo violation rates of the lindistflow voltages, then an exact
//! AC load flow of the same realizations.
//!
//! ```bash
//! cargo run --release --example voltage_validation
//! ```

use plmp::acflow::{validate_solution, ValidationOptions};
use plmp::ccopf::{self, ConstraintKind};
use plmp::market::extract_plmps;
use plmp::pce::sample_germ;
use plmp::scenario::ScenarioConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig::bundled("case3")?;
    let problem = cfg.build_problem()?;
    let solution = ccopf::solve(&problem)?;
    let report = ccopf::feasibility_report(&solution);
    let market = extract_plmps(&problem, solution)?;
    let net = &problem.network;

    let binding: Vec<(usize, usize)> = report
        .binding()
        .filter(|e| e.kind == ConstraintKind::VoltageUpper)
        .map(|e| (e.t, e.element))
        .collect();
    println!("binding upper-voltage constraints (t, bus): {binding:?}");

    let psi = sample_germ(market.basis.germ(), 100_000, 3)
        .iter()
        .map(|g| market.basis.eval(g))
        .collect::<Result<Vec<_>, _>>()?;
    let mut times: Vec<usize> = binding.iter().map(|b| b.0).collect();
    times.dedup();
    let opts = ValidationOptions { samples: 500, seed: cfg.sampling.seed, times: Some(times) };
    let ac = validate_solution(net, &market, &opts, &[])?;

    println!("\n t bus  mean |v|  σ(v²)     P(v > v̄) lindistflow   P(v > v̄) AC");
    for &(t, bus) in &binding {
        let v = market.opf.timesteps[t].voltage(bus);
        let v_max = net.buses()[bus].v_max_sq;
        let rate = psi.iter().filter(|p| v.evaluate_with(p) > v_max).count() as f64 / psi.len() as f64;
        println!(
            "{t:2} {bus:3}  {:.5}  {:.2e}  {rate:.4}                 {:.4}",
            v.mean().sqrt(),
            v.std(),
            ac.upper_rate(t, bus).unwrap_or(f64::NAN)
        );
    }
    println!("\n{} AC solves did not converge", ac.not_converged);
    Ok(())
}
