//! Empirical-likelihood phi-divergence tests for logistic regression.
//!
//! The crate is organised bottom-up: [`model`] holds the logistic score and
//! data generation, [`el`] solves the empirical-likelihood inner problem,
//! [`divergence`] turns multipliers into test statistics, [`inference`]
//! attaches reference distributions, [`power`] works at the population level
//! under fixed alternatives, and [`sim`] runs coverage experiments.

pub mod divergence;
pub mod el;
pub mod inference;
pub mod model;
pub mod power;
pub mod quadrature;
pub mod rng;
pub mod sim;
pub mod special;

pub use divergence::{DivergenceError, HFunction, PhiFamily, PhiKind, PhiSpec};
pub use el::{ElError, MultiplierSolution, ScoreMatrix, SolverConfig};
pub use inference::{Approximation, InferenceError, TestOutcome, TestReport};
pub use model::{BetaVector, Dataset, ModelError, SimulationModel};
pub use power::{AlternativeSpec, PopulationMoments, PowerError, SigmaMode};
pub use sim::{SimulationConfig, SimulationGrid};
