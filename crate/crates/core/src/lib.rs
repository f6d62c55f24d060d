//! Local electricity market clearing under uncertainty.
//!
//! A chance-constrained optimal power flow on lindistflow, propagated with
//! generalized polynomial chaos, yields probabilistic locational marginal
//! prices. Their mean is the day-ahead price and their evaluation at a
//! measured germ is the realtime price. Storage prosumers arbitrage the
//! difference, and an exact AC load flow checks the result a posteriori.

pub mod acflow;
pub mod agents;
pub mod ccopf;
pub mod market;
pub mod netmodel;
pub mod pce;
pub mod scenario;

pub use market::MarketSolution;
pub use ccopf::{CcOpfProblem, CcOpfSolution, FlexGen, SlackCost, UncertainInjection};

pub use netmodel::{Branch, Bus, RadialNetwork};
pub use pce::{GammaMode, GermComponent, GermSpec, PceBasis, PceSeries};
