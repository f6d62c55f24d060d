//! Probabilistic locational marginal prices from the clearing duals.
//!
//! The PLMP at a bus is the PC expansion of the dual of its active balance.
//! Its mean is the day-ahead price; evaluating it at a measured germ gives
//! the realtime price without solving anything.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::ccopf::{CcOpfProblem, CcOpfSolution, SolveStatus};
use crate::pce::{draw_germ, germ_rng, PceBasis, PceError, PceSeries};

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("timestep {t} was not solved to optimality")]
    NotOptimal { t: usize },
    #[error("solution for timestep {t} carries no balance duals")]
    MissingDuals { t: usize },
    #[error("unknown bus {0}")]
    UnknownBus(usize),
    #[error("timestep {0} outside the horizon")]
    UnknownTimestep(usize),
    #[error("price distributions need at least 100 samples, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Pce(#[from] PceError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Probabilistic price of one bus at one timestep [currency/p.u.].
#[derive(Debug, Clone, PartialEq)]
pub struct Plmp {
    pub bus: usize,
    pub t: usize,
    pub active: PceSeries,
    pub reactive: PceSeries,
}

impl Plmp {
    pub fn day_ahead(&self) -> f64 {
        self.active.mean()
    }

    pub fn day_ahead_reactive(&self) -> f64 {
        self.reactive.mean()
    }
}

/// Probability levels of the emitted quantiles.
pub const QUANTILE_LEVELS: [f64; 7] = [0.01, 0.05, 0.25, 0.50, 0.75, 0.95, 0.99];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceDistribution {
    pub bus: usize,
    pub t: usize,
    pub samples: Vec<f64>,
    /// Values at [`QUANTILE_LEVELS`].
    pub quantiles: [f64; 7],
}

impl PriceDistribution {
    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }
}

/// Linear interpolation between order statistics at position `(n−1)·level`.
pub fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * level;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// A cleared market: the OPF solution plus one [`Plmp`] per bus and timestep.
#[derive(Debug, Clone)]
pub struct MarketSolution {
    pub opf: CcOpfSolution,
    pub basis: Arc<PceBasis>,
    /// `plmps[t][bus]`, buses `0..=N`.
    plmps: Vec<Vec<Plmp>>,
}

/// Packages the balance duals into PLMPs.
pub fn extract_plmps(problem: &CcOpfProblem, solution: CcOpfSolution) -> Result<MarketSolution, MarketError> {
    let n = problem.network.n();
    let k = problem.basis.k();
    let mut plmps = Vec::with_capacity(solution.timesteps.len());
    for ts in &solution.timesteps {
        if ts.status != SolveStatus::Optimal {
            return Err(MarketError::NotOptimal { t: ts.t });
        }
        if ts.lambda.shape() != (k, n) || ts.mu.shape() != (k, n) || ts.lambda_slack.len() != k {
            return Err(MarketError::MissingDuals { t: ts.t });
        }
        if ts.lambda.iter().chain(ts.mu.iter()).any(|v| !v.is_finite()) {
            return Err(MarketError::MissingDuals { t: ts.t });
        }
        plmps.push(
            (0..=n)
                .map(|bus| Plmp { bus, t: ts.t, active: ts.active_price(bus), reactive: ts.reactive_price(bus) })
                .collect(),
        );
    }
    Ok(MarketSolution { opf: solution, basis: problem.basis.clone(), plmps })
}

impl MarketSolution {
    pub fn horizon(&self) -> usize {
        self.plmps.len()
    }

    /// Number of buses including the slack.
    pub fn bus_count(&self) -> usize {
        self.plmps.first().map_or(0, |p| p.len())
    }

    pub fn plmp(&self, bus: usize, t: usize) -> Result<&Plmp, MarketError> {
        self.plmps
            .get(t)
            .ok_or(MarketError::UnknownTimestep(t))?
            .get(bus)
            .ok_or(MarketError::UnknownBus(bus))
    }

    pub fn day_ahead(&self, bus: usize, t: usize) -> Result<f64, MarketError> {
        Ok(self.plmp(bus, t)?.day_ahead())
    }

    /// Active and reactive realtime prices for a measured germ.
    pub fn realtime_price(&self, bus: usize, t: usize, germ: &[f64]) -> Result<(f64, f64), MarketError> {
        let plmp = self.plmp(bus, t)?;
        let psi = self.basis.eval(germ)?;
        Ok((plmp.active.evaluate_with(&psi), plmp.reactive.evaluate_with(&psi)))
    }

    /// `π_RT − π_DA` for the active price.
    pub fn delta_price(&self, bus: usize, t: usize, germ: &[f64]) -> Result<f64, MarketError> {
        let plmp = self.plmp(bus, t)?;
        let psi = self.basis.eval(germ)?;
        Ok(plmp.active.evaluate_with(&psi) - plmp.day_ahead())
    }

    /// Germ draws shared by every bus at timestep `t`.
    pub fn germ_samples(&self, t: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = germ_rng(seed, t as u64);
        (0..n).map(|_| draw_germ(self.basis.germ(), &mut rng)).collect()
    }

    /// Realtime active prices at `bus`, `t` over `n` germ draws.
    pub fn realtime_samples(&self, bus: usize, t: usize, n: usize, seed: u64) -> Result<Vec<f64>, MarketError> {
        let plmp = self.plmp(bus, t)?;
        self.germ_samples(t, n, seed)
            .iter()
            .map(|xi| Ok(plmp.active.evaluate_with(&self.basis.eval(xi)?)))
            .collect()
    }

    pub fn delta_samples(&self, bus: usize, t: usize, n: usize, seed: u64) -> Result<Vec<f64>, MarketError> {
        let da = self.day_ahead(bus, t)?;
        Ok(self.realtime_samples(bus, t, n, seed)?.into_iter().map(|p| p - da).collect())
    }

    pub fn price_distribution(&self, bus: usize, t: usize, n: usize, seed: u64) -> Result<PriceDistribution, MarketError> {
        if n < 100 {
            return Err(MarketError::TooFewSamples(n));
        }
        let samples = self.realtime_samples(bus, t, n, seed)?;
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let quantiles = QUANTILE_LEVELS.map(|l| quantile_sorted(&sorted, l));
        Ok(PriceDistribution { bus, t, samples, quantiles })
    }

    /// Germ trajectory for one sampled day: an independent draw per hour.
    pub fn germ_path(&self, path_id: u64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = germ_rng(seed, (1u64 << 40) + path_id);
        (0..self.horizon()).map(|_| draw_germ(self.basis.germ(), &mut rng)).collect()
    }

    /// Delta-price trajectory at `bus` along a germ path.
    pub fn delta_path(&self, bus: usize, path: &[Vec<f64>]) -> Result<Vec<f64>, MarketError> {
        path.iter().enumerate().map(|(t, xi)| self.delta_price(bus, t, xi)).collect()
    }

    pub fn write_day_ahead_csv<W: Write>(&self, out: W) -> Result<(), MarketError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "bus", "pi_da_active", "pi_da_reactive"])?;
        for row in &self.plmps {
            for p in row {
                w.write_record([
                    p.t.to_string(),
                    p.bus.to_string(),
                    p.day_ahead().to_string(),
                    p.day_ahead_reactive().to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_realtime_samples_csv<W: Write>(&self, out: W, n: usize, seed: u64) -> Result<(), MarketError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sample", "t", "bus", "pi_rt"])?;
        for t in 0..self.horizon() {
            let germs = self.germ_samples(t, n, seed);
            for (s, xi) in germs.iter().enumerate() {
                let psi = self.basis.eval(xi)?;
                for p in &self.plmps[t] {
                    w.write_record([s.to_string(), t.to_string(), p.bus.to_string(), p.active.evaluate_with(&psi).to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_quantiles_csv<W: Write>(&self, out: W, n: usize, seed: u64) -> Result<(), MarketError> {
        let jobs: Vec<(usize, usize)> =
            (0..self.horizon()).flat_map(|t| (0..self.bus_count()).map(move |b| (t, b))).collect();
        let dists: Vec<PriceDistribution> =
            jobs.par_iter().map(|&(t, b)| self.price_distribution(b, t, n, seed)).collect::<Result<_, _>>()?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "bus", "q01", "q05", "q25", "q50", "q75", "q95", "q99"])?;
        for d in dists {
            let mut rec = vec![d.t.to_string(), d.bus.to_string()];
            rec.extend(d.quantiles.iter().map(|q| q.to_string()));
            w.write_record(rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ccopf::{solve, InjectionKind, SlackCost, UncertainInjection};
    use crate::netmodel::{Branch, Bus, RadialNetwork};
    use crate::pce::{GammaMode, GermComponent, GermSpec};
    use approx::assert_abs_diff_eq;

    fn toy(basis: PceBasis) -> (CcOpfProblem, MarketSolution) {
        let buses = (0..3).map(|i| Bus::new(i, 0.9, 1.1)).collect();
        let branches = (0..2).map(|i| Branch { id: i, from_bus: i, to_bus: i + 1, r: 0.01, x: 0.01, f_max: 2.0 }).collect();
        let problem = CcOpfProblem {
            network: Arc::new(RadialNetwork::build(buses, branches, 1.0).unwrap()),
            basis: Arc::new(basis),
            slack: SlackCost { c: 50.0, c1: 15.0, c2: 200.0 },
            flexgens: vec![],
            injections: vec![UncertainInjection {
                bus: 2,
                kind: InjectionKind::Load,
                mean: vec![0.3],
                germ_index: 0,
                scale: vec![0.05],
                power_factor: 0.95,
            }],
            epsilon: 0.05,
            gamma_mode: GammaMode::Gaussian,
            horizon: 1,
        };
        let sol = solve(&problem).unwrap();
        let market = extract_plmps(&problem, sol).unwrap();
        (problem, market)
    }

    fn gaussian_basis() -> PceBasis {
        PceBasis::new(GermSpec::new(vec![GermComponent::gaussian()], 2)).unwrap()
    }

    #[test]
    fn uncongested_prices_equal_slack_marginal_cost() {
        let (_, m) = toy(gaussian_basis());
        let p0 = m.opf.timesteps[0].slack_p[0];
        for bus in 0..3 {
            assert_abs_diff_eq!(m.day_ahead(bus, 0).unwrap(), 50.0 + 30.0 * p0, epsilon = 1e-5);
        }
    }

    #[test]
    fn deterministic_germ_has_no_delta() {
        let (_, m) = toy(PceBasis::deterministic());
        assert_eq!(m.plmp(1, 0).unwrap().active.coefficients.len(), 1);
        assert_eq!(m.delta_price(1, 0, &[0.7]).unwrap(), 0.0);
        let d = m.price_distribution(2, 0, 200, 3).unwrap();
        for q in d.quantiles {
            assert_abs_diff_eq!(q, m.day_ahead(2, 0).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn realtime_price_is_expansion_evaluation() {
        let (_, mut m) = toy(gaussian_basis());
        m.plmps[0][1].active = PceSeries::new(vec![50.0, 2.0, 0.0]);
        assert_abs_diff_eq!(m.realtime_price(1, 0, &[1.0]).unwrap().0, 52.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.delta_price(1, 0, &[1.0]).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.delta_price(1, 0, &[-1.0]).unwrap(), -2.0, epsilon = 1e-12);
    }

    #[test]
    fn delta_price_has_zero_mean() {
        let (_, m) = toy(gaussian_basis());
        let n = 100_000;
        let d = m.delta_samples(2, 0, n, 11).unwrap();
        let mean = d.iter().sum::<f64>() / n as f64;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!(sd > 0.0);
        assert!(mean.abs() < 3.0 * sd / (n as f64).sqrt(), "mean {mean} sd {sd}");
    }

    #[test]
    fn distribution_is_deterministic_and_monotone() {
        let (_, m) = toy(gaussian_basis());
        let a = m.price_distribution(1, 0, 1000, 5).unwrap();
        let b = m.price_distribution(1, 0, 1000, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.quantiles.windows(2).all(|w| w[0] <= w[1]));
        assert!(matches!(m.price_distribution(1, 0, 50, 5), Err(MarketError::TooFewSamples(50))));
    }

    #[test]
    fn out_of_support_measurement() {
        let (_, m) = toy(PceBasis::new(GermSpec::new(vec![GermComponent::beta(5.0, 2.0)], 2)).unwrap());
        assert!(matches!(m.realtime_price(1, 0, &[1.5]), Err(MarketError::Pce(PceError::OutOfSupport { .. }))));
    }

    #[test]
    fn quantile_interpolation() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&s, 0.5), 3.0);
        assert_eq!(quantile_sorted(&s, 0.25), 2.0);
        assert_eq!(quantile_sorted(&s, 0.1), 1.4);
        assert_eq!(quantile_sorted(&s, 1.0), 5.0);
    }

    #[test]
    fn csv_headers() {
        let (_, m) = toy(gaussian_basis());
        let mut buf = Vec::new();
        m.write_day_ahead_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,bus,pi_da_active,pi_da_reactive\n"));
        assert_eq!(text.lines().count(), 1 + 3);
        let mut buf = Vec::new();
        m.write_quantiles_csv(&mut buf, 100, 1).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,bus,q01,q05,q25,q50,q75,q95,q99\n"));
        let mut buf = Vec::new();
        m.write_realtime_samples_csv(&mut buf, 2, 1).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("sample,t,bus,pi_rt\n"));
        assert_eq!(text.lines().count(), 1 + 2 * 3);
    }
}
