//! Instantaneous and integrated phase-transition probes.
//!
//! Instantaneous probes evaluate score gaps along trajectories:
//! the conditioning gap `|s_uncond - s_cond|_2 / N` and the locality gap
//! `|s_global - s_local(r)|_2 / N`, both normalized per site. Integrated
//! probes run full reverse-SDE sampling under windowed denoiser policies
//! and benchmark the produced samples (Bayes-classifier error, per-site
//! MSE, Gaussian Fréchet distance to an always-conditioned baseline).
//!
//! States at every grid time are produced by resimulating with shared
//! per-sample seeds (common random numbers), never by interpolating a
//! stored trajectory.

use std::fmt;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localscore::local_score_full;
use crate::metrics::{bootstrap_ci, frechet_gaussian, mse_per_site};
use crate::mixture::{GaussianMixtureModel, ScoreMode, ScoreScope};
use crate::sampler::{forward_noise, reverse_sde_euler, DenoiserPolicy, PolicyWindow};
use crate::schedule::NoiseSchedule;
use crate::seed::rng_for;

/// Reverse-SDE step count used by integrated probes unless overridden.
pub const DEFAULT_SDE_STEPS: usize = 200;
/// Bootstrap replicates behind every Fréchet error bar.
pub const DEFAULT_N_BOOT: usize = 200;
/// Covariance ridge used for probe-level Fréchet distances.
pub const FRECHET_RIDGE: f64 = 1e-6;

/// Which trajectory the instantaneous probes sample states from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    /// Clean data noised forward to `t`.
    Training,
    /// Reverse-SDE states at `t`, conditioned throughout.
    SamplingCond,
    /// Reverse-SDE states at `t`, unconditional throughout.
    SamplingUncond,
}

impl fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrajectoryKind::Training => write!(f, "training"),
            TrajectoryKind::SamplingCond => write!(f, "sampling-cond"),
            TrajectoryKind::SamplingUncond => write!(f, "sampling-uncond"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GapCurve {
    pub t_grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub trajectory: TrajectoryKind,
    pub n_samples: usize,
}

#[derive(Debug, Clone)]
pub struct GapHeatmap {
    pub t_grid: Vec<f64>,
    pub r_grid: Vec<usize>,
    /// Row-major `[t][r]`.
    pub mean: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub cond: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ThresholdCurve {
    pub t_grid: Vec<f64>,
    pub error: Vec<f64>,
    pub err_stderr: Vec<f64>,
    pub mse: Vec<f64>,
    pub scope: ScoreScope,
}

#[derive(Debug, Clone, Copy)]
pub struct WindowScanPoint {
    pub t_i: f64,
    pub error: f64,
    pub err_stderr: f64,
    pub frechet: f64,
    pub frechet_stderr: f64,
}

/// Conditioning mode used outside the global window in
/// [`window_locality_scan`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutsideMode {
    Uncond,
    Cond,
}

fn validate_grid(grid: &[f64], name: &str) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidInput(format!("{name} must be nonempty")));
    }
    for pair in grid.windows(2) {
        if !(pair[1] > pair[0]) {
            return Err(Error::InvalidInput(format!("{name} must be strictly increasing")));
        }
    }
    if grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::InvalidInput(format!("{name} must lie within [0, 1]")));
    }
    Ok(())
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn standard_normal_state<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Produce one state of the requested trajectory at time `t`.
///
/// The stream is seeded by `(seed, tag, 0, sample)`: the cell index is not
/// part of the key, so states at different grid times share random numbers.
fn trajectory_state(
    m: &GaussianMixtureModel,
    sched: &NoiseSchedule,
    kind: TrajectoryKind,
    y: Option<usize>,
    t: f64,
    n_steps_full: usize,
    seed: u64,
    tag: &str,
    sample: u64,
) -> Result<DVector<f64>> {
    let mut rng = rng_for(seed, tag, 0, sample);
    match kind {
        TrajectoryKind::Training => {
            let (x0, _) = m.sample_clean(&mut rng, y)?;
            forward_noise(m, sched, &x0, t, &mut rng)
        }
        TrajectoryKind::SamplingCond | TrajectoryKind::SamplingUncond => {
            let mode = match kind {
                TrajectoryKind::SamplingCond => {
                    let y = y.ok_or_else(|| {
                        Error::InvalidInput("conditional sampling trajectory needs a class".into())
                    })?;
                    ScoreMode::Cond { y }
                }
                _ => ScoreMode::Uncond,
            };
            let x_init = standard_normal_state(m.n_sites(), &mut rng);
            let t_stop = sched.clamp(t);
            if t_stop >= sched.t_max {
                return Ok(x_init);
            }
            let frac = (sched.t_max - t_stop) / (sched.t_max - sched.t_min);
            let n_steps = ((n_steps_full as f64 * frac).ceil() as usize).max(1);
            let policy = DenoiserPolicy::uniform(mode, ScoreScope::Global);
            let traj = reverse_sde_euler(
                m, sched, &policy, &x_init, sched.t_max, t_stop, n_steps, &mut rng,
            )?;
            Ok(traj.last_state().clone())
        }
    }
}

/// Per-site-normalized conditioning gap `|s_uncond - s_cond(y)|_2 / N`
/// at a single state.
pub fn conditioning_gap_at(
    m: &GaussianMixtureModel,
    x: &DVector<f64>,
    sched: &NoiseSchedule,
    t: f64,
    y: usize,
) -> Result<f64> {
    let marginal = m.score_marginal(x, sched, t)?;
    let cond = m.score_conditional(x, sched, t, y)?;
    Ok((marginal.vector - cond.vector).norm() / m.n_sites() as f64)
}

/// Conditioning-gap curve over a time grid (Monte-Carlo mean and stderr).
pub fn conditioning_gap_curve(
    m: &GaussianMixtureModel,
    sched: &NoiseSchedule,
    source: TrajectoryKind,
    y: usize,
    t_grid: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<GapCurve> {
    validate_grid(t_grid, "t_grid")?;
    if y >= m.n_classes() {
        return Err(Error::InvalidInput(format!("class {y} out of range")));
    }
    if n_samples < 2 {
        return Err(Error::InvalidInput("need n_samples >= 2".into()));
    }
    let mut mean = Vec::with_capacity(t_grid.len());
    let mut stderr = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let gaps: Vec<f64> = (0..n_samples)
            .into_par_iter()
            .map(|j| -> Result<f64> {
                let x = trajectory_state(
                    m,
                    sched,
                    source,
                    Some(y),
                    t,
                    DEFAULT_SDE_STEPS,
                    seed,
                    "gap-curve",
                    j as u64,
                )?;
                conditioning_gap_at(m, &x, sched, t, y)
            })
            .collect::<Result<Vec<f64>>>()?;
        let (mu, se) = mean_stderr(&gaps);
        mean.push(mu);
        stderr.push(se);
    }
    Ok(GapCurve { t_grid: t_grid.to_vec(), mean, stderr, trajectory: source, n_samples })
}

/// Locality-gap heatmap over `(t, r)`: `|s_global - s_local(r)|_2 / N`,
/// with conditional scores throughout when `cond` is set.
#[allow(clippy::too_many_arguments)]
pub fn locality_gap_heatmap(
    m: &GaussianMixtureModel,
    sched: &NoiseSchedule,
    source: TrajectoryKind,
    cond: Option<usize>,
    t_grid: &[f64],
    r_grid: &[usize],
    n_samples: usize,
    seed: u64,
) -> Result<GapHeatmap> {
    validate_grid(t_grid, "t_grid")?;
    if r_grid.is_empty() {
        return Err(Error::InvalidInput("r_grid must be nonempty".into()));
    }
    if n_samples < 2 {
        return Err(Error::InvalidInput("need n_samples >= 2".into()));
    }
    if let Some(y) = cond {
        if y >= m.n_classes() {
            return Err(Error::InvalidInput(format!("class {y} out of range")));
        }
    }
    let norm = m.n_sites() as f64;
    let mut mean = Vec::with_capacity(t_grid.len());
    let mut stderr = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        // One state per sample, shared across the whole r row (common
        // random numbers make the row monotonicity testable).
        let rows: Vec<Vec<f64>> = (0..n_samples)
            .into_par_iter()
            .map(|j| -> Result<Vec<f64>> {
                let x = trajectory_state(
                    m,
                    sched,
                    source,
                    cond,
                    t,
                    DEFAULT_SDE_STEPS,
                    seed,
                    "gap-heat",
                    j as u64,
                )?;
                let global = match cond {
                    Some(y) => m.score_conditional(&x, sched, t, y)?,
                    None => m.score_marginal(&x, sched, t)?,
                };
                r_grid
                    .iter()
                    .map(|&r| {
                        let local = local_score_full(m, &x, sched, t, r, cond)?;
                        Ok((&global.vector - &local.vector).norm() / norm)
                    })
                    .collect()
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let mut row_mean = Vec::with_capacity(r_grid.len());
        let mut row_se = Vec::with_capacity(r_grid.len());
        for ri in 0..r_grid.len() {
            let col: Vec<f64> = rows.iter().map(|row| row[ri]).collect();
            let (mu, se) = mean_stderr(&col);
            row_mean.push(mu);
            row_se.push(se);
        }
        mean.push(row_mean);
        stderr.push(row_se);
    }
    Ok(GapHeatmap { t_grid: t_grid.to_vec(), r_grid: r_grid.to_vec(), mean, stderr, cond })
}

/// Forward-backward error correction: noise clean samples to `t`, denoise
/// unconditionally with the given scope, classify at `t_min`.
#[allow(clippy::too_many_arguments)]
pub fn forward_backward(
    m: &GaussianMixtureModel,
    sched: &NoiseSchedule,
    scope: ScoreScope,
    t_grid: &[f64],
    n_clean: usize,
    n_noise: usize,
    n_steps: usize,
    seed: u64,
) -> Result<ThresholdCurve> {
    validate_grid(t_grid, "t_grid")?;
    if n_clean == 0 || n_noise == 0 || n_steps == 0 {
        return Err(Error::InvalidInput("n_clean, n_noise, n_steps must be positive".into()));
    }
    let policy = DenoiserPolicy::uniform(ScoreMode::Uncond, scope);
    let total = n_clean * n_noise;
    let mut error = Vec::with_capacity(t_grid.len());
    let mut err_stderr = Vec::with_capacity(t_grid.len());
    let mut mse = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let outcomes: Vec<(bool, f64)> = (0..total)
            .into_par_iter()
            .map(|p| -> Result<(bool, f64)> {
                let clean_idx = (p / n_noise) as u64;
                let (x0, y) = m.sample_clean(&mut rng_for(seed, "fb-clean", 0, clean_idx), None)?;
                let mut rng = rng_for(seed, "fb-run", 0, p as u64);
                let x_t = forward_noise(m, sched, &x0, t, &mut rng)?;
                let x_hat = if sched.clamp(t) > sched.t_min {
                    reverse_sde_euler(
                        m,
                        sched,
                        &policy,
                        &x_t,
                        sched.clamp(t),
                        sched.t_min,
                        n_steps,
                        &mut rng,
                    )?
                    .last_state()
                    .clone()
                } else {
                    x_t
                };
                let pred = m.bayes_classify(&x_hat, sched, sched.t_min)?;
                Ok((pred != y, mse_per_site(&x0, &x_hat)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let wrong = outcomes.iter().filter(|(miss, _)| *miss).count() as f64;
        let p = wrong / total as f64;
        error.push(p);
        err_stderr.push((p * (1.0 - p) / total as f64).sqrt());
        mse.push(outcomes.iter().map(|(_, m)| m).sum::<f64>() / total as f64);
    }
    Ok(ThresholdCurve { t_grid: t_grid.to_vec(), error, err_stderr, mse, scope })
}

fn run_to_clean<R: Rng + ?Sized>(
    m: &GaussianMixtureModel,
    sched: &NoiseSchedule,
    policy: &DenoiserPolicy,
    n_steps: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let x_init = standard_normal_state(m.n_sites(), rng);
    let traj = reverse_sde_euler(
        m, sched, policy, &x_init, sched.t_max, sched.t_min, n_steps, rng,
    )?;
    Ok(traj.last_state().clone())
}

fn scan_metrics(
    m: &GaussianMixtureModel,
    sched: &NoiseSchedule,
    y: usize,
    samples: &[DVector<f64>],
    baseline: &[DVector<f64>],
    boot_seed: u64,
) -> Result<(f64, f64, f64, f64)> {
    let total = samples.len() as f64;
    let mut wrong = 0usize;
    for x in samples {
        if m.bayes_classify(x, sched, sched.t_min)? != y {
            wrong += 1;
        }
    }
    let p = wrong as f64 / total;
    let p_se = (p * (1.0 - p) / total).sqrt();
    let fd = frechet_gaussian(samples, baseline, FRECHET_RIDGE)?;
    let fd_se = bootstrap_ci(
        samples,
        |set| frechet_gaussian(set, baseline, FRECHET_RIDGE).unwrap_or(f64::NAN),
        DEFAULT_N_BOOT,
        boot_seed,
    )?;
    Ok((p, p_se, fd, fd_se))
}

fn sample_set(
    m: &GaussianMixtureModel,
    sched: &NoiseSchedule,
    policy: &DenoiserPolicy,
    n_samples: usize,
    n_steps: usize,
    seed: u64,
    tag: &str,
) -> Result<Vec<DVector<f64>>> {
    (0..n_samples)
        .into_par_iter()
        .map(|j| {
            let mut rng = rng_for(seed, tag, 0, j as u64);
            run_to_clean(m, sched, policy, n_steps, &mut rng)
        })
        .collect()
}

/// Windowed conditioning scan: conditioning applied only inside
/// `(t_i, t_i + width]` (truncated at the time-domain edge), unconditional
/// global denoising elsewhere. Metrics are Bayes-classifier error against
/// the target class and Fréchet distance to an always-conditioned baseline.
#[allow(clippy::too_many_arguments)]
pub fn window_conditioning_scan(
    m: &GaussianMixtureModel,
    sched: &NoiseSchedule,
    y: usize,
    width: f64,
    t_i_grid: &[f64],
    n_samples: usize,
    n_steps: usize,
    seed: u64,
) -> Result<Vec<WindowScanPoint>> {
    validate_grid(t_i_grid, "t_i_grid")?;
    if !(width > 0.0) {
        return Err(Error::InvalidInput(format!("width must be > 0, got {width}")));
    }
    if y >= m.n_classes() {
        return Err(Error::InvalidInput(format!("class {y} out of range")));
    }
    if n_samples < 2 || n_steps == 0 {
        return Err(Error::InvalidInput("need n_samples >= 2 and n_steps >= 1".into()));
    }
    let baseline_policy = DenoiserPolicy::uniform(ScoreMode::Cond { y }, ScoreScope::Global);
    let baseline =
        sample_set(m, sched, &baseline_policy, n_samples, n_steps, seed, "wcond-base")?;

    let mut out = Vec::with_capacity(t_i_grid.len());
    for (cell, &t_i) in t_i_grid.iter().enumerate() {
        let t_hi = (t_i + width).min(1.0);
        if !(t_i < t_hi) {
            return Err(Error::InvalidInput(format!(
                "window start {t_i} leaves no usable window below 1"
            )));
        }
        let policy = DenoiserPolicy::new(
            vec![PolicyWindow {
                t_lo: t_i,
                t_hi,
                mode: ScoreMode::Cond { y },
                scope: ScoreScope::Global,
            }],
            ScoreMode::Uncond,
            ScoreScope::Global,
        )?;
        let samples = sample_set(m, sched, &policy, n_samples, n_steps, seed, "wcond")?;
        let (p, p_se, fd, fd_se) = scan_metrics(
            m,
            sched,
            y,
            &samples,
            &baseline,
            crate::seed::derive_seed(seed, "wcond-boot", cell as u64, 0),
        )?;
        out.push(WindowScanPoint { t_i, error: p, err_stderr: p_se, frechet: fd, frechet_stderr: fd_se });
    }
    Ok(out)
}

/// Windowed locality scan: conditional global denoising inside
/// `(t_i - half_width, t_i + half_width]` (clipped to the time domain),
/// radius-`r` local denoising with `outside_mode` conditioning elsewhere.
/// Metrics are against an always-global always-conditioned baseline.
#[allow(clippy::too_many_arguments)]
pub fn window_locality_scan(
    m: &GaussianMixtureModel,
    sched: &NoiseSchedule,
    y: usize,
    half_width: f64,
    r: usize,
    t_i_grid: &[f64],
    n_samples: usize,
    n_steps: usize,
    seed: u64,
    outside_mode: OutsideMode,
) -> Result<Vec<WindowScanPoint>> {
    validate_grid(t_i_grid, "t_i_grid")?;
    if !(half_width > 0.0) {
        return Err(Error::InvalidInput(format!(
            "half_width must be > 0, got {half_width}"
        )));
    }
    if y >= m.n_classes() {
        return Err(Error::InvalidInput(format!("class {y} out of range")));
    }
    if n_samples < 2 || n_steps == 0 {
        return Err(Error::InvalidInput("need n_samples >= 2 and n_steps >= 1".into()));
    }
    let outside = match outside_mode {
        OutsideMode::Uncond => ScoreMode::Uncond,
        OutsideMode::Cond => ScoreMode::Cond { y },
    };
    let baseline_policy = DenoiserPolicy::uniform(ScoreMode::Cond { y }, ScoreScope::Global);
    let baseline =
        sample_set(m, sched, &baseline_policy, n_samples, n_steps, seed, "wlocal-base")?;

    let mut out = Vec::with_capacity(t_i_grid.len());
    for (cell, &t_i) in t_i_grid.iter().enumerate() {
        let t_lo = (t_i - half_width).max(0.0);
        let t_hi = (t_i + half_width).min(1.0);
        if !(t_lo < t_hi) {
            return Err(Error::InvalidInput(format!("window around {t_i} is empty")));
        }
        let policy = DenoiserPolicy::new(
            vec![PolicyWindow {
                t_lo,
                t_hi,
                mode: ScoreMode::Cond { y },
                scope: ScoreScope::Global,
            }],
            outside,
            ScoreScope::Local { r },
        )?;
        let samples = sample_set(m, sched, &policy, n_samples, n_steps, seed, "wlocal")?;
        let (p, p_se, fd, fd_se) = scan_metrics(
            m,
            sched,
            y,
            &samples,
            &baseline,
            crate::seed::derive_seed(seed, "wlocal-boot", cell as u64, 0),
        )?;
        out.push(WindowScanPoint { t_i, error: p, err_stderr: p_se, frechet: fd, frechet_stderr: fd_se });
    }
    Ok(out)
}

/// Critical-time extraction from a gridded curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CriticalTimeMethod {
    Argmax,
    Argmin,
    Crossing(f64),
}

/// Extract a critical time; argmax/argmin ties resolve to the smallest `t`,
/// crossings linearly interpolate the first bracketing pair in increasing `t`.
pub fn critical_time(t_grid: &[f64], values: &[f64], method: CriticalTimeMethod) -> Result<f64> {
    if t_grid.is_empty() || t_grid.len() != values.len() {
        return Err(Error::InvalidInput(
            "curve needs matching nonempty t_grid and values".into(),
        ));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("curve contains NaN".into()));
    }
    match method {
        CriticalTimeMethod::Argmax => {
            let mut best = 0;
            for (i, &v) in values.iter().enumerate().skip(1) {
                if v > values[best] {
                    best = i;
                }
            }
            Ok(t_grid[best])
        }
        CriticalTimeMethod::Argmin => {
            let mut best = 0;
            for (i, &v) in values.iter().enumerate().skip(1) {
                if v < values[best] {
                    best = i;
                }
            }
            Ok(t_grid[best])
        }
        CriticalTimeMethod::Crossing(level) => {
            for i in 0..values.len() - 1 {
                let (a, b) = (values[i] - level, values[i + 1] - level);
                if a == 0.0 {
                    return Ok(t_grid[i]);
                }
                if (a < 0.0 && b >= 0.0) || (a > 0.0 && b <= 0.0) {
                    let frac = a / (a - b);
                    return Ok(t_grid[i] + frac * (t_grid[i + 1] - t_grid[i]));
                }
            }
            if values[values.len() - 1] == level {
                return Ok(t_grid[values.len() - 1]);
            }
            Err(Error::Extraction(format!("level {level} never bracketed by the curve")))
        }
    }
}

/// Crossing time plus its one-sigma uncertainty, propagated from the
/// per-point stderr through the local slope of the bracketing pair.
pub fn crossing_with_stderr(
    t_grid: &[f64],
    values: &[f64],
    stderrs: &[f64],
    level: f64,
) -> Result<(f64, f64)> {
    if stderrs.len() != values.len() {
        return Err(Error::InvalidInput("stderr slice must match values".into()));
    }
    let t_star = critical_time(t_grid, values, CriticalTimeMethod::Crossing(level))?;
    // Locate the bracketing pair again for the slope.
    for i in 0..values.len() - 1 {
        let (a, b) = (values[i] - level, values[i + 1] - level);
        if a == 0.0 || (a < 0.0 && b >= 0.0) || (a > 0.0 && b <= 0.0) {
            let slope = (values[i + 1] - values[i]) / (t_grid[i + 1] - t_grid[i]);
            let se = 0.5 * (stderrs[i] + stderrs[i + 1]);
            let dt = if slope.abs() < 1e-300 {
                t_grid[i + 1] - t_grid[i]
            } else {
                (se / slope).abs()
            };
            return Ok((t_star, dt));
        }
    }
    Ok((t_star, 0.0))
}
