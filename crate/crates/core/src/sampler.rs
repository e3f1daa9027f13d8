//! Forward noising, reverse-SDE / probability-flow-ODE integration, and
//! time-windowed denoiser policies.
//!
//! Reverse-time Euler-Maruyama on a uniform descending grid:
//!
//! ```text
//! x <- x + dt * [ 1/2 beta x + beta s(x, t) ] + sqrt(beta dt) xi
//! ```
//!
//! and Heun (explicit trapezoid) for the probability-flow ODE
//! `dx/dt = -1/2 beta x - 1/2 beta s(x, t)` integrated backwards.
//!
//! A [`DenoiserPolicy`] assigns a `(mode, scope)` pair to each time via
//! half-open windows `(t_lo, t_hi]`; window containment is tested at the
//! time where the step's score is evaluated, so switching policies at a
//! grid point is identical to concatenating two constant-policy runs.

use std::fmt;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localscore::local_score_full;
use crate::mixture::{GaussianMixtureModel, ScoreEval, ScoreMode, ScoreScope};
use crate::schedule::NoiseSchedule;

/// One half-open policy window `(t_lo, t_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyWindow {
    pub t_lo: f64,
    pub t_hi: f64,
    pub mode: ScoreMode,
    pub scope: ScoreScope,
}

/// Time-windowed assignment of `{uncond, cond, cfg} x {global, local(r)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserPolicy {
    windows: Vec<PolicyWindow>,
    default_mode: ScoreMode,
    default_scope: ScoreScope,
}

impl DenoiserPolicy {
    /// A constant policy with no windows.
    pub fn uniform(mode: ScoreMode, scope: ScoreScope) -> Self {
        DenoiserPolicy { windows: Vec::new(), default_mode: mode, default_scope: scope }
    }

    pub fn new(
        mut windows: Vec<PolicyWindow>,
        default_mode: ScoreMode,
        default_scope: ScoreScope,
    ) -> Result<Self> {
        for w in &windows {
            if !(w.t_lo < w.t_hi) {
                return Err(Error::Config(format!(
                    "policy window ({}, {}] must have t_lo < t_hi",
                    w.t_lo, w.t_hi
                )));
            }
            if !(w.t_lo >= 0.0 && w.t_hi <= 1.0) {
                return Err(Error::Config(format!(
                    "policy window ({}, {}] must lie within (0, 1]",
                    w.t_lo, w.t_hi
                )));
            }
        }
        windows.sort_by(|a, b| a.t_lo.total_cmp(&b.t_lo));
        for pair in windows.windows(2) {
            if pair[1].t_lo < pair[0].t_hi {
                return Err(Error::Config(format!(
                    "policy windows ({}, {}] and ({}, {}] overlap",
                    pair[0].t_lo, pair[0].t_hi, pair[1].t_lo, pair[1].t_hi
                )));
            }
        }
        Ok(DenoiserPolicy { windows, default_mode, default_scope })
    }

    pub fn windows(&self) -> &[PolicyWindow] {
        &self.windows
    }

    /// `(mode, scope)` in effect at `t`.
    pub fn resolve(&self, t: f64) -> Result<(ScoreMode, ScoreScope)> {
        if !(0.0..=1.0).contains(&t) || t.is_nan() {
            return Err(Error::Config(format!("policy cannot resolve time {t}")));
        }
        for w in &self.windows {
            if w.t_lo < t && t <= w.t_hi {
                return Ok((w.mode, w.scope));
            }
        }
        Ok((self.default_mode, self.default_scope))
    }
}

impl fmt::Display for DenoiserPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for w in &self.windows {
            write!(f, "({:.4},{:.4}]:{:?}/{} ", w.t_lo, w.t_hi, w.mode, w.scope)?;
        }
        write!(f, "default:{:?}/{}", self.default_mode, self.default_scope)
    }
}

/// A recorded integration path on a strictly decreasing time grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub policy_id: String,
    pub seed: Option<u64>,
}

impl Trajectory {
    pub fn last_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory holds at least the initial state")
    }
}

/// Forward marginal draw `x_t = sqrt(alpha_bar) x_0 + sigma eps`.
pub fn forward_noise<R: Rng + ?Sized>(
    m: &GaussianMixtureModel,
    sched: &NoiseSchedule,
    x0: &DVector<f64>,
    t: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if x0.len() != m.n_sites() {
        return Err(Error::InvalidInput("state length does not match lattice".into()));
    }
    let (scale, noise_std) = sched.forward_moments(t)?;
    Ok(DVector::from_fn(x0.len(), |i, _| {
        scale * x0[i] + noise_std * rng.sample::<f64, _>(StandardNormal)
    }))
}

/// Evaluate the score the policy prescribes at `(x, t)`.
pub fn policy_score(
    m: &GaussianMixtureModel,
    sched: &NoiseSchedule,
    policy: &DenoiserPolicy,
    x: &DVector<f64>,
    t: f64,
) -> Result<ScoreEval> {
    let (mode, scope) = policy.resolve(t)?;
    match (mode, scope) {
        (ScoreMode::Uncond, ScoreScope::Global) => m.score_marginal(x, sched, t),
        (ScoreMode::Cond { y }, ScoreScope::Global) => m.score_conditional(x, sched, t, y),
        (ScoreMode::Cfg { y, w }, ScoreScope::Global) => m.score_cfg(x, sched, t, y, w),
        (ScoreMode::Uncond, ScoreScope::Local { r }) => local_score_full(m, x, sched, t, r, None),
        (ScoreMode::Cond { y }, ScoreScope::Local { r }) => {
            local_score_full(m, x, sched, t, r, Some(y))
        }
        (ScoreMode::Cfg { y, w }, ScoreScope::Local { r }) => {
            let lu = local_score_full(m, x, sched, t, r, None)?;
            let lc = local_score_full(m, x, sched, t, r, Some(y))?;
            Ok(ScoreEval {
                vector: &lu.vector + (&lc.vector - &lu.vector) * w,
                t,
                mode,
                scope,
            })
        }
    }
}

fn check_interval(t_start: f64, t_end: f64) -> Result<()> {
    if !(t_start <= 1.0 && t_start > t_end && t_end >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "need 1 >= t_start > t_end >= 0, got t_start={t_start}, t_end={t_end}"
        )));
    }
    Ok(())
}

/// Euler-Maruyama integration of the reverse SDE from `t_start` down to
/// `t_end` on a uniform grid of `n_steps` steps.
#[allow(clippy::too_many_arguments)]
pub fn reverse_sde_euler<R: Rng + ?Sized>(
    m: &GaussianMixtureModel,
    sched: &NoiseSchedule,
    policy: &DenoiserPolicy,
    x_init: &DVector<f64>,
    t_start: f64,
    t_end: f64,
    n_steps: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    check_interval(t_start, t_end)?;
    if x_init.len() != m.n_sites() {
        return Err(Error::InvalidInput("state length does not match lattice".into()));
    }
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    times.push(t_start);
    states.push(x_init.clone());
    if n_steps == 0 {
        return Ok(Trajectory { times, states, policy_id: policy.to_string(), seed: None });
    }
    let dt = (t_start - t_end) / n_steps as f64;
    let mut x = x_init.clone();
    for k in 0..n_steps {
        let t_k = t_start - k as f64 * dt;
        let e = sched.eval(t_k)?;
        let score = policy_score(m, sched, policy, &x, t_k)?.vector;
        let noise_amp = (e.beta * dt).sqrt();
        for i in 0..x.len() {
            x[i] += dt * (0.5 * e.beta * x[i] + e.beta * score[i])
                + noise_amp * rng.sample::<f64, _>(StandardNormal);
        }
        let t_next = if k + 1 == n_steps { t_end } else { t_start - (k + 1) as f64 * dt };
        times.push(t_next);
        states.push(x.clone());
    }
    Ok(Trajectory { times, states, policy_id: policy.to_string(), seed: None })
}

/// Heun integration of the probability-flow ODE, backwards in time.
/// Deterministic: repeated calls are bit-identical.
pub fn reverse_ode_heun(
    m: &GaussianMixtureModel,
    sched: &NoiseSchedule,
    policy: &DenoiserPolicy,
    x_init: &DVector<f64>,
    t_start: f64,
    t_end: f64,
    n_steps: usize,
) -> Result<Trajectory> {
    check_interval(t_start, t_end)?;
    if x_init.len() != m.n_sites() {
        return Err(Error::InvalidInput("state length does not match lattice".into()));
    }
    let rhs = |x: &DVector<f64>, t: f64| -> Result<DVector<f64>> {
        let e = sched.eval(t)?;
        let score = policy_score(m, sched, policy, x, t)?.vector;
        Ok(DVector::from_fn(x.len(), |i, _| -0.5 * e.beta * (x[i] + score[i])))
    };
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    times.push(t_start);
    states.push(x_init.clone());
    if n_steps == 0 {
        return Ok(Trajectory { times, states, policy_id: policy.to_string(), seed: None });
    }
    let dt = (t_start - t_end) / n_steps as f64;
    let mut x = x_init.clone();
    for k in 0..n_steps {
        let t_k = t_start - k as f64 * dt;
        let t_next = if k + 1 == n_steps { t_end } else { t_start - (k + 1) as f64 * dt };
        let k1 = rhs(&x, t_k)?;
        let predictor = &x - &k1 * dt;
        let k2 = rhs(&predictor, t_next)?;
        x -= (k1 + k2) * (0.5 * dt);
        times.push(t_next);
        states.push(x.clone());
    }
    Ok(Trajectory { times, states, policy_id: policy.to_string(), seed: None })
}
