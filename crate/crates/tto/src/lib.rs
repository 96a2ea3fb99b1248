//! Within-game pitcher decline, measured properly.
//!
//! Starting pitchers face a batting order in waves: batters 1 through 9 are
//! the first time through the order, 10 through 18 the second, 19 through 27
//! the third. Raw averages of batter performance by time through the order
//! confound continuous pitcher fatigue, batter familiarity, selective removal
//! of weak pitchers, and lineup composition. This crate separates those
//! stories with a constrained Bayesian multinomial regression of plate
//! appearance outcomes on the within-game batter sequence number, indicators
//! for each pass through the order, and running quality estimates for the
//! batter and pitcher.
//!
//! The pieces, bottom to top:
//!
//! - [`data`]: plate appearance CSV ingestion, starter filtering, selection
//!   bias truncation, and pitcher exit histograms.
//! - [`quality`]: running normal-normal posterior means of player wOBA
//!   quality, computed strictly from earlier plate appearances.
//! - [`model`]: the multinomial logistic likelihood and its variants
//!   (constrained trend, diffuse, per-sequence-number indicators,
//!   hierarchical player effects) with analytic gradients.
//! - [`sampler`]: a no-U-turn Hamiltonian Monte Carlo sampler with dual
//!   averaging step size adaptation, windowed diagonal mass matrix
//!   adaptation, and split-chain convergence diagnostics.
//! - [`analysis`]: posterior functionals of fitted draws, chiefly expected
//!   wOBA trajectories across the batter sequence and discontinuity
//!   statistics at the pass boundaries.
//! - [`simlab`]: synthetic season generation with known parameters, the
//!   coverage and predictive studies built on it, and k-fold
//!   cross-validation.
//! - [`output`]: draw and diagnostic artifact serialization shared by the
//!   command line interface.

pub mod analysis;
pub mod data;
pub mod model;
pub mod output;
pub mod quality;
pub mod sampler;
pub mod simlab;
