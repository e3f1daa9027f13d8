//! Exact radius-`r` local scores.
//!
//! The local score on a patch `A` with buffer `B` is
//! `grad_{x_A} log p_t(x_{A u B})`: the gradient of the exact marginal of
//! the noised mixture on the window `W = A u B`, with mixture weights taken
//! from the window density alone (no access to the remainder `C`). When the
//! window covers the lattice this reduces to the global score.
//!
//! Windows on the periodic lattice are translates of each other and the
//! GMRF covariance is translation invariant, so the per-site assembly in
//! [`local_score_full`] factors one window covariance per `(t, r)` and
//! reuses it at every site.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lattice::{neighborhood, Tripartition};
use crate::mixture::{softmax, GaussianMixtureModel, ScoreEval, ScoreMode, ScoreScope};
use crate::schedule::NoiseSchedule;

/// Cached per-`(t, r)` window geometry and covariance factorization.
pub(crate) struct WindowFactors {
    /// Ball of radius `r` around site 0, sorted by site index.
    pub offsets: Vec<usize>,
    /// Index of site 0 within `offsets`.
    pub center_pos: usize,
    pub chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

fn window_chol(cov: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    cov.cholesky()
        .ok_or_else(|| Error::Numeric("window covariance not SPD".into()))
}

fn window_factors(
    m: &GaussianMixtureModel,
    sched: &NoiseSchedule,
    t: f64,
    r: usize,
) -> Result<Arc<WindowFactors>> {
    let alpha_bits = sched.eval(t)?.alpha_bar.to_bits();
    let key = (alpha_bits, r);
    if let Some(wf) = m.window_cache().lock().unwrap().get(&key) {
        return Ok(Arc::clone(wf));
    }
    let offsets = neighborhood(m.lattice(), &[0], r)?;
    let center_pos = offsets.binary_search(&0).expect("ball contains its center");
    let chol = window_chol(m.marginal_covariance(sched, t, &offsets)?)?;
    let wf = Arc::new(WindowFactors { offsets, center_pos, chol });
    let mut cache = m.window_cache().lock().unwrap();
    if cache.len() > 4096 {
        cache.clear();
    }
    Ok(Arc::clone(cache.entry(key).or_insert(wf)))
}

fn check_partition(m: &GaussianMixtureModel, part: &Tripartition) -> Result<()> {
    let n = m.n_sites();
    if part.n_total() != n {
        return Err(Error::InvalidInput(format!(
            "tripartition covers {} sites, lattice has {n}",
            part.n_total()
        )));
    }
    let mut seen = vec![false; n];
    for &s in part.a_sites.iter().chain(&part.b_sites).chain(&part.c_sites) {
        if s >= n || seen[s] {
            return Err(Error::InvalidInput(
                "tripartition sites must be a disjoint cover of the lattice".into(),
            ));
        }
        seen[s] = true;
    }
    Ok(())
}

/// `grad_{x_A} log p_t(x_{A u B})` for an explicit tripartition.
///
/// With `cond = Some(y)` the single-component conditional window density is
/// differentiated instead of the window mixture.
pub fn local_score_patch(
    m: &GaussianMixtureModel,
    x: &DVector<f64>,
    sched: &NoiseSchedule,
    t: f64,
    part: &Tripartition,
    cond: Option<usize>,
) -> Result<DVector<f64>> {
    check_partition(m, part)?;
    if x.len() != m.n_sites() {
        return Err(Error::InvalidInput("state length does not match lattice".into()));
    }
    if let Some(y) = cond {
        if y >= m.n_classes() {
            return Err(Error::InvalidInput(format!("class {y} out of range")));
        }
    }
    let mut window: Vec<usize> = part
        .a_sites
        .iter()
        .chain(&part.b_sites)
        .copied()
        .collect();
    window.sort_unstable();
    let a_pos: Vec<usize> = part
        .a_sites
        .iter()
        .map(|s| window.binary_search(s).expect("A is part of the window"))
        .collect();

    let chol = window_chol(m.marginal_covariance(sched, t, &window)?)?;
    let scale = sched.eval(t)?.alpha_bar.sqrt();
    let xw = DVector::from_fn(window.len(), |i, _| x[window[i]]);
    score_on_window(m, &xw, &window, &a_pos, &chol, scale, cond)
}

/// Window-mixture score restricted to the given positions.
fn score_on_window(
    m: &GaussianMixtureModel,
    xw: &DVector<f64>,
    window: &[usize],
    out_pos: &[usize],
    chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    mean_scale: f64,
    cond: Option<usize>,
) -> Result<DVector<f64>> {
    let classes: Vec<usize> = match cond {
        Some(y) => vec![y],
        None => (0..m.n_classes()).collect(),
    };
    let mut solves = Vec::with_capacity(classes.len());
    let mut logw = Vec::with_capacity(classes.len());
    for &y in &classes {
        let mu = m.means()[y].clone();
        let vw = DVector::from_fn(window.len(), |i, _| xw[i] - mean_scale * mu[window[i]]);
        let u = chol.solve(&vw);
        let quad = vw.dot(&u);
        logw.push(m.priors()[y].ln() - 0.5 * quad);
        solves.push(u);
    }
    let weights = if classes.len() == 1 { vec![1.0] } else { softmax(&logw) };
    let mut out = DVector::zeros(out_pos.len());
    for (w, u) in weights.iter().zip(&solves) {
        for (k, &p) in out_pos.iter().enumerate() {
            out[k] -= w * u[p];
        }
    }
    Ok(out)
}

/// Assemble the full local score: component `i` is the patch score with
/// `A = {i}` and buffer radius `r`. When the radius-`r` ball covers the
/// lattice this is exactly the global score.
pub fn local_score_full(
    m: &GaussianMixtureModel,
    x: &DVector<f64>,
    sched: &NoiseSchedule,
    t: f64,
    r: usize,
    cond: Option<usize>,
) -> Result<ScoreEval> {
    let n = m.n_sites();
    if x.len() != n {
        return Err(Error::InvalidInput("state length does not match lattice".into()));
    }
    let scope = ScoreScope::Local { r };
    let ball = neighborhood(m.lattice(), &[0], r)?;
    if ball.len() == n {
        let mut eval = match cond {
            Some(y) => m.score_conditional(x, sched, t, y)?,
            None => m.score_marginal(x, sched, t)?,
        };
        eval.scope = scope;
        return Ok(eval);
    }

    let wf = window_factors(m, sched, t, r)?;
    let scale = sched.eval(t)?.alpha_bar.sqrt();
    let spec = m.lattice();
    let wlen = wf.offsets.len();
    let mode = match cond {
        Some(y) => {
            if y >= m.n_classes() {
                return Err(Error::InvalidInput(format!("class {y} out of range")));
            }
            ScoreMode::Cond { y }
        }
        None => ScoreMode::Uncond,
    };

    let mut vector = DVector::zeros(n);
    let mut sites = vec![0usize; wlen];
    let classes: Vec<usize> = match cond {
        Some(y) => vec![y],
        None => (0..m.n_classes()).collect(),
    };
    let mut vw = DVector::zeros(wlen);
    for i in 0..n {
        for (k, &o) in wf.offsets.iter().enumerate() {
            sites[k] = spec.translate(o, i);
        }
        let mut logw = Vec::with_capacity(classes.len());
        let mut center = Vec::with_capacity(classes.len());
        for &y in &classes {
            let mu = &m.means()[y];
            for (k, &s) in sites.iter().enumerate() {
                vw[k] = x[s] - scale * mu[s];
            }
            let u = wf.chol.solve(&vw);
            logw.push(m.priors()[y].ln() - 0.5 * vw.dot(&u));
            center.push(-u[wf.center_pos]);
        }
        vector[i] = if classes.len() == 1 {
            center[0]
        } else {
            softmax(&logw).iter().zip(&center).map(|(w, c)| w * c).sum()
        };
    }
    Ok(ScoreEval { vector, t, mode, scope })
}
