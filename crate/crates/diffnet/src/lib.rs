//! Simulator for decentralized stochastic optimization over graphs using the
//! adapt-then-combine diffusion strategy.
//!
//! The library is organized along the data flow of an experiment:
//!
//! * [`topology`] — graphs, combination policies (uniform and asymmetric
//!   Metropolis–Hastings), Perron vectors and mixing rates;
//! * [`landscape`] — loss models with exact gradients/Hessians and seeded
//!   per-agent stochastic-gradient oracles;
//! * [`engine`] — the diffusion recursion, centralized baselines, centroid
//!   bookkeeping and network-disagreement measurement;
//! * [`stationarity`] — large-gradient / strict-saddle / second-order region
//!   classification and empirical escape-time measurement;
//! * [`harness`] — configuration, experiment orchestration and CSV/SVG output
//!   behind the `diffnet` CLI.

pub mod engine;
pub mod harness;
pub mod landscape;
pub mod rng;
pub mod stationarity;
pub mod topology;
