//! Storage prosumers arbitraging the realtime-minus-day-ahead price on the
//! bundled uncongested case: rule-based, DP and hindsight controllers and
//! their regret.
//!
//! ```bash
//! cargo run --release --example prosumer_agents
//! ```

use plmp::agents::{regret_curves, Policy};
use plmp::ccopf;
use plmp::market::extract_plmps;
use plmp::scenario::{simulate_agent, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig::bundled("case1")?;
    let problem = cfg.build_problem()?;
    let market = extract_plmps(&problem, ccopf::solve(&problem)?)?;
    let agent = &cfg.agents[0];
    println!("agent at bus {}: {:?}", agent.bus, agent.storage());

    let (tables, runs) = simulate_agent(&market, agent, &cfg.sampling, cfg.sampling.n_paths)?;
    println!("\n t  Pr(π_Δ>0)  E[π_Δ|>0]  E[π_Δ|≤0]");
    for t in 0..tables.horizon() {
        println!("{t:2}  {:.3}      {:7.3}    {:7.3}", tables.q[t], tables.v_up[t], tables.v_down[t]);
    }

    let path = &runs[0];
    println!("\nfirst path setpoints (positive = discharge):");
    for run in path {
        let s: Vec<String> = run.setpoints.iter().map(|p| format!("{p:+.4}")).collect();
        println!("  {:9} {}  profit {:.4}", run.policy.to_string(), s.join(" "), run.profit());
    }

    println!("\nover {} paths:", runs.len());
    for (j, policy) in path.iter().map(|r| r.policy).enumerate() {
        let mean = runs.iter().map(|r| r[j].profit()).sum::<f64>() / runs.len() as f64;
        println!("  {:9} mean profit {mean:.4}", policy.to_string());
    }
    for c in regret_curves(&runs)? {
        if c.policy != Policy::Hindsight {
            println!("  {:9} final average regret {:.4}", c.policy.to_string(), c.final_regret());
        }
    }
    Ok(())
}
