//! Orthonormal polynomial chaos basis for a mixed Gaussian/Beta germ:
//! basis size, moments of an expanded input, sampling and the risk
//! multiplier of a chance constraint.
//!
//! ```bash
//! cargo run --example pce_basis
//! ```

use plmp::pce::{gamma, sample_germ};
use plmp::{GammaMode, GermSpec, PceBasis};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let basis = PceBasis::new(GermSpec::case_study_default())?;
    println!("d = {}, p = {}, K = {}", basis.germ().dim(), basis.germ().degree, basis.k());
    for (k, m) in basis.multi_indices().iter().enumerate() {
        println!("  Ψ{k}: {m:?}");
    }

    // a load of 0.3 p.u. with 10 % relative deviation driven by the Beta(5,2) coordinate
    let xi = &basis.germ().components[1];
    let load = basis.expand_affine(1, 0.3 - 0.3 * 0.1 * xi.mean() / xi.std(), 0.3 * 0.1 / xi.std())?;
    println!("load coefficients: {:?}", load.coefficients);
    println!("mean {:.6}, std {:.6}", load.mean(), load.std());

    let draws = sample_germ(basis.germ(), 100_000, 1);
    let values: Vec<f64> = draws.iter().map(|s| load.evaluate(&basis, s)).collect::<Result<_, _>>()?;
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt();
    println!("sampled mean {mean:.6}, std {std:.6}");

    for eps in [0.01, 0.05, 0.1] {
        println!(
            "ε = {eps}: Γ gaussian {:.4}, distributionally robust {:.4}",
            gamma(eps, GammaMode::Gaussian)?,
            gamma(eps, GammaMode::DistRobust)?
        );
    }
    Ok(())
}
