//! Numerical laboratory for phase-transition diagnostics of score-based
//! diffusion on exactly solvable lattice Gaussian mixtures.
//!
//! Two transition pictures are probed side by side: symmetry breaking
//! (when conditioning changes the denoising direction) and nonlocality
//! (when radius-`r` windows stop sufficing for denoising). Because the
//! data distribution is a Gaussian mixture with a Gaussian-Markov-
//! random-field covariance, every score, density, posterior, local score,
//! and conditional mutual information is available in closed form, so all
//! probes can be validated against independent oracles.

pub mod error;
pub mod info;
pub mod lattice;
pub mod localscore;
pub mod metrics;
pub mod mixture;
pub mod probes;
pub mod sampler;
pub mod schedule;
pub mod seed;

pub use error::{Error, Result};
pub use lattice::{neighborhood, tripartition, LatticeSpec, Tripartition};
pub use localscore::{local_score_full, local_score_patch};
pub use mixture::{GaussianMixtureModel, ScoreEval, ScoreMode, ScoreScope};
pub use sampler::{
    forward_noise, policy_score, reverse_ode_heun, reverse_sde_euler, DenoiserPolicy,
    PolicyWindow, Trajectory,
};
pub use schedule::{NoiseSchedule, ScheduleKind};
