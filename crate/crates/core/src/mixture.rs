//! Lattice Gaussian-mixture data distribution with exactly computable
//! noised densities, scores, posteriors, and Bayes classifier.
//!
//! The clean distribution is `p_data = sum_y pi_y N(mu_y, Sigma)` with a
//! shared Gaussian-Markov-random-field covariance `Sigma = Q^{-1}`,
//! `Q = kappa I + lambda L` (`L` the lattice graph Laplacian). Under the
//! variance-preserving forward process the noised marginal stays a mixture:
//!
//! ```text
//! q_t = sum_y pi_y N(sqrt(alpha_bar) mu_y, Sigma_t),
//! Sigma_t = alpha_bar Sigma + sigma^2 I.
//! ```
//!
//! All `Sigma_t^{-1}` applications use the identity
//! `Sigma_t^{-1} = (alpha_bar I + sigma^2 Q)^{-1} Q`, so only the sparse
//! `Q` matvec and a cached Cholesky factor of `M_t = alpha_bar I + sigma^2 Q`
//! are ever needed; the dense covariance is materialized only for small
//! windows and test oracles.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;
use crate::schedule::NoiseSchedule;

/// Which score a [`ScoreEval`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScoreMode {
    Uncond,
    Cond { y: usize },
    Cfg { y: usize, w: f64 },
}

/// Whether a score was computed globally or from radius-`r` windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScoreScope {
    Global,
    Local { r: usize },
}

impl fmt::Display for ScoreScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreScope::Global => write!(f, "global"),
            ScoreScope::Local { r } => write!(f, "local({r})"),
        }
    }
}

/// A score vector tagged with how it was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEval {
    pub vector: DVector<f64>,
    pub t: f64,
    pub mode: ScoreMode,
    pub scope: ScoreScope,
}

/// Cached per-time factorization: `M_t = alpha_bar I + sigma^2 Q`.
pub(crate) struct TimeFactors {
    pub alpha_bar: f64,
    pub sigma2: f64,
    pub sqrt_alpha_bar: f64,
    pub chol_m: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    pub logdet_sigma_t: f64,
}

pub struct GaussianMixtureModel {
    spec: LatticeSpec,
    priors: Vec<f64>,
    means: Vec<DVector<f64>>,
    kappa: f64,
    lambda: f64,
    chol_q: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// Lower Cholesky factor of Q, kept for clean-sample draws.
    l_q: DMatrix<f64>,
    logdet_q: f64,
    time_cache: Mutex<HashMap<u64, Arc<TimeFactors>>>,
    window_cache: Mutex<HashMap<(u64, usize), Arc<crate::localscore::WindowFactors>>>,
}

impl fmt::Debug for GaussianMixtureModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GaussianMixtureModel")
            .field("spec", &self.spec)
            .field("k", &self.priors.len())
            .field("kappa", &self.kappa)
            .field("lambda", &self.lambda)
            .finish()
    }
}

impl GaussianMixtureModel {
    /// Build a model from class priors, class means and GMRF precision
    /// parameters. `lambda = 0` (independent sites) additionally allows
    /// degenerate lattices with fewer than 3 sites, which the coupled
    /// Laplacian would not support.
    pub fn new(
        spec: LatticeSpec,
        priors: Vec<f64>,
        means: Vec<DVector<f64>>,
        kappa: f64,
        lambda: f64,
    ) -> Result<Self> {
        if lambda > 0.0 {
            spec.validate()?;
        } else if spec.n_sites() == 0 {
            return Err(Error::Config("lattice must have at least one site".into()));
        }
        if !(kappa > 0.0) {
            return Err(Error::Config(format!("kappa must be > 0, got {kappa}")));
        }
        if !(lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
        }
        let k = priors.len();
        if k == 0 || means.len() != k {
            return Err(Error::Config(format!(
                "need matching nonempty priors/means, got {k} priors and {} means",
                means.len()
            )));
        }
        if priors.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::Config("class priors must all be positive".into()));
        }
        let total: f64 = priors.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("class priors sum to {total}, expected 1")));
        }
        let n = spec.n_sites();
        for (y, mu) in means.iter().enumerate() {
            if mu.len() != n {
                return Err(Error::Config(format!(
                    "mean for class {y} has length {}, lattice has {n} sites",
                    mu.len()
                )));
            }
        }

        let q = build_precision(&spec, kappa, lambda);
        let chol_q = q
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numeric("precision Q is not positive definite".into()))?;
        let l_q = chol_q.l();
        let logdet_q = chol_q.ln_determinant();
        Ok(GaussianMixtureModel {
            spec,
            priors,
            means,
            kappa,
            lambda,
            chol_q,
            l_q,
            logdet_q,
            time_cache: Mutex::new(HashMap::new()),
            window_cache: Mutex::new(HashMap::new()),
        })
    }

    /// Two balanced classes with constant opposite means `+-m`.
    pub fn constant_pm(spec: LatticeSpec, m: f64, kappa: f64, lambda: f64) -> Result<Self> {
        let n = spec.n_sites();
        let plus = DVector::from_element(n, m);
        let minus = DVector::from_element(n, -m);
        GaussianMixtureModel::new(spec, vec![0.5, 0.5], vec![plus, minus], kappa, lambda)
    }

    /// `k` balanced classes with sinusoidal means of amplitude `m` and
    /// per-class phase shifts `2 pi y / k` along the first lattice axis.
    pub fn sinusoidal(
        spec: LatticeSpec,
        m: f64,
        frequency: usize,
        k: usize,
        kappa: f64,
        lambda: f64,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("need at least one class".into()));
        }
        let n = spec.n_sites();
        let axis = match spec {
            LatticeSpec::Ring1d { len } => len,
            LatticeSpec::Torus2d { width, .. } => width,
        };
        let coord = |i: usize| match spec {
            LatticeSpec::Ring1d { .. } => i,
            LatticeSpec::Torus2d { width, .. } => i % width,
        };
        let tau = std::f64::consts::TAU;
        let means = (0..k)
            .map(|y| {
                DVector::from_fn(n, |i, _| {
                    m * (tau * frequency as f64 * coord(i) as f64 / axis as f64
                        + tau * y as f64 / k as f64)
                        .sin()
                })
            })
            .collect();
        GaussianMixtureModel::new(spec, vec![1.0 / k as f64; k], means, kappa, lambda)
    }

    /// Single Gaussian (K = 1) with the given mean.
    pub fn single(spec: LatticeSpec, mean: DVector<f64>, kappa: f64, lambda: f64) -> Result<Self> {
        GaussianMixtureModel::new(spec, vec![1.0], vec![mean], kappa, lambda)
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn n_sites(&self) -> usize {
        self.spec.n_sites()
    }

    pub fn n_classes(&self) -> usize {
        self.priors.len()
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    /// Sparse application of `Q = kappa I + lambda L`.
    pub fn q_matvec(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = self.n_sites();
        let mut out = DVector::zeros(n);
        if self.lambda == 0.0 {
            for i in 0..n {
                out[i] = self.kappa * v[i];
            }
            return out;
        }
        let deg = self.spec.degree() as f64;
        for i in 0..n {
            let mut acc = (self.kappa + self.lambda * deg) * v[i];
            for j in self.spec.neighbors(i) {
                acc -= self.lambda * v[j];
            }
            out[i] = acc;
        }
        out
    }

    pub(crate) fn time_factors(&self, sched: &NoiseSchedule, t: f64) -> Result<Arc<TimeFactors>> {
        let e = sched.eval(t)?;
        let key = e.alpha_bar.to_bits();
        if let Some(tf) = self.time_cache.lock().unwrap().get(&key) {
            return Ok(Arc::clone(tf));
        }
        let n = self.n_sites();
        let mut m_t = build_precision(&self.spec, self.kappa, self.lambda) * e.sigma2;
        for i in 0..n {
            m_t[(i, i)] += e.alpha_bar;
        }
        let chol_m = m_t
            .cholesky()
            .ok_or_else(|| Error::Numeric(format!("alpha I + sigma^2 Q not SPD at t={t}")))?;
        let tf = Arc::new(TimeFactors {
            alpha_bar: e.alpha_bar,
            sigma2: e.sigma2,
            sqrt_alpha_bar: e.alpha_bar.sqrt(),
            logdet_sigma_t: chol_m.ln_determinant() - self.logdet_q,
            chol_m,
        });
        let mut cache = self.time_cache.lock().unwrap();
        if cache.len() > 4096 {
            cache.clear();
        }
        Ok(Arc::clone(cache.entry(key).or_insert(tf)))
    }

    pub(crate) fn window_cache(
        &self,
    ) -> &Mutex<HashMap<(u64, usize), Arc<crate::localscore::WindowFactors>>> {
        &self.window_cache
    }

    /// Per-class conditional scores and Mahalanobis quadratic forms at `x`.
    fn class_parts(&self, x: &DVector<f64>, tf: &TimeFactors) -> (Vec<DVector<f64>>, Vec<f64>) {
        let k = self.n_classes();
        let mut scores = Vec::with_capacity(k);
        let mut quads = Vec::with_capacity(k);
        for y in 0..k {
            let v = x - &self.means[y] * tf.sqrt_alpha_bar;
            let u = tf.chol_m.solve(&v);
            let score = -self.q_matvec(&u);
            let quad = -v.dot(&score);
            scores.push(score);
            quads.push(quad);
        }
        (scores, quads)
    }

    fn log_weights(&self, quads: &[f64]) -> Vec<f64> {
        self.priors
            .iter()
            .zip(quads)
            .map(|(&p, &q)| p.ln() - 0.5 * q)
            .collect()
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n_sites() {
            return Err(Error::InvalidInput(format!(
                "state has length {}, lattice has {} sites",
                x.len(),
                self.n_sites()
            )));
        }
        Ok(())
    }

    fn check_class(&self, y: usize) -> Result<()> {
        if y >= self.n_classes() {
            return Err(Error::InvalidInput(format!(
                "class {y} out of range for {} classes",
                self.n_classes()
            )));
        }
        Ok(())
    }

    /// Draw `(x_0, y)` from the clean distribution; `y` can be forced.
    pub fn sample_clean<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        y: Option<usize>,
    ) -> Result<(DVector<f64>, usize)> {
        let y = match y {
            Some(y) => {
                self.check_class(y)?;
                y
            }
            None => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = self.n_classes() - 1;
                for (idx, &p) in self.priors.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        chosen = idx;
                        break;
                    }
                }
                chosen
            }
        };
        let n = self.n_sites();
        let z = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
        // x = mu + L^{-T} z has covariance Q^{-1}.
        let fluct = self
            .l_q
            .tr_solve_lower_triangular(&z)
            .ok_or_else(|| Error::Numeric("singular Cholesky factor of Q".into()))?;
        Ok((&self.means[y] + fluct, y))
    }

    /// `log q_t(x)` of the noised mixture.
    pub fn log_density(&self, x: &DVector<f64>, sched: &NoiseSchedule, t: f64) -> Result<f64> {
        self.check_state(x)?;
        let tf = self.time_factors(sched, t)?;
        let (_, quads) = self.class_parts(x, &tf);
        let lse = log_sum_exp(&self.log_weights(&quads));
        let n = self.n_sites() as f64;
        Ok(lse - 0.5 * tf.logdet_sigma_t - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
    }

    /// `grad_x log q_t(x | y) = -Sigma_t^{-1}(x - sqrt(alpha_bar) mu_y)`.
    pub fn score_conditional(
        &self,
        x: &DVector<f64>,
        sched: &NoiseSchedule,
        t: f64,
        y: usize,
    ) -> Result<ScoreEval> {
        self.check_state(x)?;
        self.check_class(y)?;
        let tf = self.time_factors(sched, t)?;
        let v = x - &self.means[y] * tf.sqrt_alpha_bar;
        let u = tf.chol_m.solve(&v);
        Ok(ScoreEval {
            vector: -self.q_matvec(&u),
            t,
            mode: ScoreMode::Cond { y },
            scope: ScoreScope::Global,
        })
    }

    /// Class posterior `P(y | x_t)`, computed with log-sum-exp.
    pub fn posterior(&self, x: &DVector<f64>, sched: &NoiseSchedule, t: f64) -> Result<Vec<f64>> {
        self.check_state(x)?;
        let tf = self.time_factors(sched, t)?;
        let (_, quads) = self.class_parts(x, &tf);
        Ok(softmax(&self.log_weights(&quads)))
    }

    /// `grad_x log q_t(x)`: posterior-weighted mixture of conditional scores.
    pub fn score_marginal(&self, x: &DVector<f64>, sched: &NoiseSchedule, t: f64) -> Result<ScoreEval> {
        self.check_state(x)?;
        let tf = self.time_factors(sched, t)?;
        let (scores, quads) = self.class_parts(x, &tf);
        let w = softmax(&self.log_weights(&quads));
        let mut vector = DVector::zeros(self.n_sites());
        for (wy, sy) in w.iter().zip(&scores) {
            vector += sy * *wy;
        }
        Ok(ScoreEval { vector, t, mode: ScoreMode::Uncond, scope: ScoreScope::Global })
    }

    /// Guided score `s_uncond + w (s_cond - s_uncond)`.
    pub fn score_cfg(
        &self,
        x: &DVector<f64>,
        sched: &NoiseSchedule,
        t: f64,
        y: usize,
        w: f64,
    ) -> Result<ScoreEval> {
        if !(w >= 0.0) {
            return Err(Error::InvalidInput(format!("guidance scale must be >= 0, got {w}")));
        }
        let marginal = self.score_marginal(x, sched, t)?;
        let cond = self.score_conditional(x, sched, t, y)?;
        Ok(ScoreEval {
            vector: &marginal.vector + (&cond.vector - &marginal.vector) * w,
            t,
            mode: ScoreMode::Cfg { y, w },
            scope: ScoreScope::Global,
        })
    }

    /// Posterior argmax with ties broken toward the smallest class index.
    pub fn bayes_classify(&self, x: &DVector<f64>, sched: &NoiseSchedule, t: f64) -> Result<usize> {
        let post = self.posterior(x, sched, t)?;
        let mut best = 0;
        for (y, &p) in post.iter().enumerate().skip(1) {
            if p > post[best] {
                best = y;
            }
        }
        Ok(best)
    }

    /// Marginal covariance `Sigma_t[S, S] = alpha_bar Sigma[S, S] + sigma^2 I`
    /// of the noised mixture on the site subset `S` (class-independent).
    pub fn marginal_covariance(
        &self,
        sched: &NoiseSchedule,
        t: f64,
        sites: &[usize],
    ) -> Result<DMatrix<f64>> {
        let e = sched.eval(t)?;
        let sigma = self.clean_covariance(sites)?;
        let mut cov = sigma * e.alpha_bar;
        for i in 0..sites.len() {
            cov[(i, i)] += e.sigma2;
        }
        Ok(cov)
    }

    /// `Sigma[S, S] = Q^{-1}[S, S]`, one factored solve per column.
    pub fn clean_covariance(&self, sites: &[usize]) -> Result<DMatrix<f64>> {
        let n = self.n_sites();
        for &s in sites {
            if s >= n {
                return Err(Error::InvalidInput(format!("site {s} out of range")));
            }
        }
        let w = sites.len();
        let mut cov = DMatrix::zeros(w, w);
        let mut e = DVector::zeros(n);
        for (b, &sb) in sites.iter().enumerate() {
            e[sb] = 1.0;
            let col = self.chol_q.solve(&e);
            e[sb] = 0.0;
            for (a, &sa) in sites.iter().enumerate() {
                cov[(a, b)] = col[sa];
            }
        }
        // Symmetrize away solver round-off.
        for a in 0..w {
            for b in (a + 1)..w {
                let m = 0.5 * (cov[(a, b)] + cov[(b, a)]);
                cov[(a, b)] = m;
                cov[(b, a)] = m;
            }
        }
        Ok(cov)
    }
}

/// Dense `Q = kappa I + lambda (D - A)` for factorization.
fn build_precision(spec: &LatticeSpec, kappa: f64, lambda: f64) -> DMatrix<f64> {
    let n = spec.n_sites();
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n {
        q[(i, i)] = kappa;
    }
    if lambda > 0.0 {
        let deg = spec.degree() as f64;
        for i in 0..n {
            q[(i, i)] += lambda * deg;
            for j in spec.neighbors(i) {
                q[(i, j)] -= lambda;
            }
        }
    }
    q
}

pub(crate) fn log_sum_exp(vals: &[f64]) -> f64 {
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax(vals: &[f64]) -> Vec<f64> {
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = vals.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleKind;
    use crate::seed::rng_for;

    fn one_site(mu: f64, kappa: f64) -> GaussianMixtureModel {
        GaussianMixtureModel::single(
            LatticeSpec::Ring1d { len: 1 },
            DVector::from_element(1, mu),
            kappa,
            0.0,
        )
        .unwrap()
    }

    fn sched() -> NoiseSchedule {
        NoiseSchedule::vp_cosine()
    }

    #[test]
    fn forced_label_and_determinism() {
        let m = GaussianMixtureModel::constant_pm(LatticeSpec::Ring1d { len: 8 }, 1.0, 1.0, 2.0).unwrap();
        let (_, y) = m.sample_clean(&mut rng_for(1, "t", 0, 0), Some(1)).unwrap();
        assert_eq!(y, 1);
        let (a, ya) = m.sample_clean(&mut rng_for(1, "t", 0, 1), None).unwrap();
        let (b, yb) = m.sample_clean(&mut rng_for(1, "t", 0, 1), None).unwrap();
        assert_eq!(ya, yb);
        assert_eq!(a, b);
        assert!(m.sample_clean(&mut rng_for(1, "t", 0, 0), Some(2)).is_err());
    }

    #[test]
    fn clean_sample_moments() {
        // lambda=0, kappa=1, K=1, mu=0: per-site mean 0, variance 1.
        let m = GaussianMixtureModel::single(
            LatticeSpec::Ring1d { len: 4 },
            DVector::zeros(4),
            1.0,
            0.0,
        )
        .unwrap();
        let mut rng = rng_for(7, "moments", 0, 0);
        let n_draw = 100_000;
        let mut sum = DVector::zeros(4);
        let mut sumsq = DVector::zeros(4);
        for _ in 0..n_draw {
            let (x, _) = m.sample_clean(&mut rng, None).unwrap();
            sum += &x;
            sumsq += x.component_mul(&x);
        }
        for i in 0..4 {
            let mean = sum[i] / n_draw as f64;
            let var = sumsq[i] / n_draw as f64 - mean * mean;
            // stderr(mean) = 1/sqrt(n); stderr(var) ~ sqrt(2/n)
            assert!(mean.abs() < 3.0 / (n_draw as f64).sqrt(), "mean[{i}] = {mean}");
            assert!((var - 1.0).abs() < 3.0 * (2.0 / n_draw as f64).sqrt(), "var[{i}] = {var}");
        }
    }

    #[test]
    fn log_density_standard_normal() {
        // N=1, K=1, mu=0, Sigma=1, alpha_bar=0.5: q_t = N(0, 1).
        let m = one_site(0.0, 1.0);
        let ld = m.log_density(&DVector::from_element(1, 0.0), &sched(), 0.5).unwrap();
        assert!((ld - (-0.5 * (2.0 * std::f64::consts::PI).ln())).abs() < 1e-12);
    }

    #[test]
    fn noisy_endpoint_erases_classes() {
        // Near t=1 the density is class-independent: compare two models that
        // differ only in their means.
        let s = NoiseSchedule::new(ScheduleKind::VpCosine, 1e-3, 1.0 - 1e-12).unwrap();
        let spec = LatticeSpec::Ring1d { len: 6 };
        let a = GaussianMixtureModel::constant_pm(spec, 2.0, 1.0, 1.0).unwrap();
        let b = GaussianMixtureModel::constant_pm(spec, 0.3, 1.0, 1.0).unwrap();
        let x = DVector::from_fn(6, |i, _| 0.3 * i as f64 - 1.0);
        let la = a.log_density(&x, &s, 1.0).unwrap();
        let lb = b.log_density(&x, &s, 1.0).unwrap();
        assert!((la - lb).abs() < 1e-9, "la={la} lb={lb}");
    }

    #[test]
    fn conditional_score_one_site() {
        // N=1, mu=0, Sigma=1, alpha_bar=0.5 (Sigma_t = 1): score at x=2 is -2.
        let m = one_site(0.0, 1.0);
        let s = m
            .score_conditional(&DVector::from_element(1, 2.0), &sched(), 0.5, 0)
            .unwrap();
        assert!((s.vector[0] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn conditional_score_vanishes_at_component_mode() {
        let spec = LatticeSpec::Ring1d { len: 5 };
        let m = GaussianMixtureModel::constant_pm(spec, 1.3, 0.7, 2.0).unwrap();
        let s = sched();
        let t = 0.37;
        let scale = s.eval(t).unwrap().alpha_bar.sqrt();
        let x = &m.means()[1] * scale;
        let sc = m.score_conditional(&x, &s, t, 1).unwrap();
        assert!(sc.vector.norm() < 1e-12);
    }

    #[test]
    fn posterior_symmetry_and_priors_at_t1() {
        let spec = LatticeSpec::Ring1d { len: 4 };
        let m = GaussianMixtureModel::constant_pm(spec, 1.0, 1.0, 1.0).unwrap();
        let p = m.posterior(&DVector::zeros(4), &sched(), 0.4).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);

        let s = NoiseSchedule::new(ScheduleKind::VpCosine, 1e-3, 1.0 - 1e-12).unwrap();
        let mm = GaussianMixtureModel::new(
            spec,
            vec![0.2, 0.3, 0.5],
            vec![
                DVector::from_element(4, 1.0),
                DVector::from_element(4, -2.0),
                DVector::from_element(4, 0.5),
            ],
            1.0,
            1.0,
        )
        .unwrap();
        let x = DVector::from_fn(4, |i, _| i as f64 - 1.5);
        let p = mm.posterior(&x, &s, 1.0).unwrap();
        for (got, want) in p.iter().zip([0.2, 0.3, 0.5]) {
            assert!((got - want).abs() < 1e-9, "posterior {got} vs prior {want}");
        }
    }

    #[test]
    fn marginal_score_symmetry_and_single_class() {
        let spec = LatticeSpec::Ring1d { len: 4 };
        let m = GaussianMixtureModel::constant_pm(spec, 1.0, 1.0, 1.0).unwrap();
        let s = m.score_marginal(&DVector::zeros(4), &sched(), 0.3).unwrap();
        assert!(s.vector.norm() < 1e-12);

        let single = GaussianMixtureModel::single(
            spec,
            DVector::from_element(4, 0.8),
            1.0,
            1.0,
        )
        .unwrap();
        let x = DVector::from_fn(4, |i, _| 0.1 + i as f64);
        let sm = single.score_marginal(&x, &sched(), 0.6).unwrap();
        let sc = single.score_conditional(&x, &sched(), 0.6, 0).unwrap();
        assert_eq!(sm.vector, sc.vector);
    }

    #[test]
    fn cfg_identities_and_affinity() {
        let spec = LatticeSpec::Ring1d { len: 6 };
        let m = GaussianMixtureModel::constant_pm(spec, 0.9, 1.0, 2.0).unwrap();
        let s = sched();
        let x = DVector::from_fn(6, |i, _| (i as f64 * 0.77).sin());
        let t = 0.45;
        let s_m = m.score_marginal(&x, &s, t).unwrap().vector;
        let s_c = m.score_conditional(&x, &s, t, 0).unwrap().vector;
        let w0 = m.score_cfg(&x, &s, t, 0, 0.0).unwrap().vector;
        let w1 = m.score_cfg(&x, &s, t, 0, 1.0).unwrap().vector;
        let w2 = m.score_cfg(&x, &s, t, 0, 2.0).unwrap().vector;
        assert!((&w0 - &s_m).norm() < 1e-12);
        assert!((&w1 - &s_c).norm() < 1e-12);
        // Affine in w: w=2 is the reflection of w=0 through w=1.
        assert!((&w2 - (&s_c * 2.0 - &s_m)).norm() < 1e-12);
        assert!(m.score_cfg(&x, &s, t, 0, -0.5).is_err());
    }

    #[test]
    fn cfg_hand_value_one_site() {
        // N=1, K=2, mu=+-1, kappa=1, alpha_bar=0.5, x=0.5:
        //   Sigma_t = 1, a = sqrt(0.5)
        //   s_+ = -(x - a), s_- = -(x + a); w_+ = sigmoid(2 a x)
        let m = GaussianMixtureModel::new(
            LatticeSpec::Ring1d { len: 1 },
            vec![0.5, 0.5],
            vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
            1.0,
            0.0,
        )
        .unwrap();
        let x = DVector::from_element(1, 0.5);
        let a = 0.5f64.sqrt();
        let sp = -(0.5 - a);
        let sm_ = -(0.5 + a);
        let wp = 1.0 / (1.0 + (-2.0 * a * 0.5).exp());
        let marginal = wp * sp + (1.0 - wp) * sm_;
        let guided = marginal + 2.0 * (sp - marginal);
        let got = m.score_cfg(&x, &sched(), 0.5, 0, 2.0).unwrap().vector[0];
        assert!((got - guided).abs() < 1e-12, "got {got}, want {guided}");
    }

    #[test]
    fn bayes_classifier_tie_break_and_means() {
        let spec = LatticeSpec::Ring1d { len: 4 };
        let m = GaussianMixtureModel::constant_pm(spec, 1.5, 1.0, 1.0).unwrap();
        let s = sched();
        assert_eq!(m.bayes_classify(&(m.means()[0].clone()), &s, 0.01).unwrap(), 0);
        assert_eq!(m.bayes_classify(&(m.means()[1].clone()), &s, 0.01).unwrap(), 1);
        // Exact tie at x = 0 resolves to the smallest class index.
        assert_eq!(m.bayes_classify(&DVector::zeros(4), &s, 0.3).unwrap(), 0);
    }

    #[test]
    fn posterior_mixture_identity() {
        // score_marginal must equal the posterior-weighted conditional scores
        // to floating-point recombination accuracy.
        let spec = LatticeSpec::Ring1d { len: 8 };
        let m = GaussianMixtureModel::new(
            spec,
            vec![0.25, 0.35, 0.4],
            vec![
                DVector::from_fn(8, |i, _| (i as f64).cos()),
                DVector::from_fn(8, |i, _| 0.5 - 0.1 * i as f64),
                DVector::from_fn(8, |i, _| (i as f64 * 1.3).sin()),
            ],
            0.8,
            1.7,
        )
        .unwrap();
        let s = sched();
        let mut rng = rng_for(3, "pmix", 0, 0);
        for trial in 0..5 {
            let t = 0.1 + 0.18 * trial as f64;
            let x = DVector::from_fn(8, |_, _| rng.sample::<f64, _>(StandardNormal) * 1.5);
            let post = m.posterior(&x, &s, t).unwrap();
            let mut recomb = DVector::zeros(8);
            for y in 0..3 {
                recomb += m.score_conditional(&x, &s, t, y).unwrap().vector * post[y];
            }
            let sm = m.score_marginal(&x, &s, t).unwrap().vector;
            assert!((recomb - sm).norm() < 1e-12);
        }
    }

    #[test]
    fn endpoint_degeneracy_score_is_negated_state() {
        let s = NoiseSchedule::new(ScheduleKind::VpCosine, 1e-3, 1.0 - 1e-12).unwrap();
        let spec = LatticeSpec::Ring1d { len: 5 };
        let m = GaussianMixtureModel::constant_pm(spec, 2.0, 1.0, 3.0).unwrap();
        let x = DVector::from_fn(5, |i, _| 0.4 * i as f64 - 1.0);
        let sm = m.score_marginal(&x, &s, 1.0).unwrap().vector;
        assert!((&sm + &x).norm() < 1e-9, "score at t=1 should be -x");
    }

    #[test]
    fn priors_must_be_normalized() {
        let spec = LatticeSpec::Ring1d { len: 3 };
        let means = vec![DVector::zeros(3), DVector::zeros(3)];
        assert!(GaussianMixtureModel::new(spec, vec![0.5, 0.6], means, 1.0, 0.0).is_err());
    }
}
