//! Voltage sensitivities of a small radial feeder and the lindistflow
//! voltage map for a given injection pattern.
//!
//! ```bash
//! cargo run --example network_sensitivities
//! ```

use nalgebra::DVector;
use plmp::{Branch, Bus, RadialNetwork};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // slack 0 feeds 1, which branches to 2 and 3
    let buses = (0..4).map(|i| Bus::new(i, 0.95, 1.05)).collect();
    let branches = vec![
        Branch { id: 0, from_bus: 0, to_bus: 1, r: 0.01, x: 0.02, f_max: 1.0 },
        Branch { id: 1, from_bus: 1, to_bus: 2, r: 0.03, x: 0.02, f_max: 0.5 },
        Branch { id: 2, from_bus: 1, to_bus: 3, r: 0.02, x: 0.04, f_max: 0.5 },
    ];
    let net = RadialNetwork::build(buses, branches, 1.0)?;

    println!("R (∂v/∂p / 2):\n{:.4}", net.r());
    println!("X (∂v/∂q / 2):\n{:.4}", net.x());

    // two loads and a PV plant exporting at bus 3
    let p = DVector::from_vec(vec![-0.2, -0.1, 0.15]);
    let q = DVector::from_vec(vec![-0.05, -0.02, 0.0]);
    let v = net.voltage_map(&p, &q)?;
    let (flows, _) = net.branch_flows(&p, &q)?;
    for j in 0..net.n() {
        println!("bus {}: v² = {:.5}  |v| = {:.5}", j + 1, v[j], v[j].sqrt());
    }
    for (l, b) in net.branches().iter().enumerate() {
        println!("branch {}-{}: P = {:+.3}", b.from_bus, b.to_bus, flows[l]);
    }
    println!("slack import: {:.3}", net.slack_flow(&flows));
    Ok(())
}
