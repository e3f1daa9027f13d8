//! Conditional mutual information and Markov-length diagnostics.
//!
//! For a Gaussian with covariance `Sigma` and tripartition `A/B/C`,
//! `I(A:C|B) = 1/2 (ln det Sigma_{A|B} - ln det Sigma_{A|B u C})`. For the
//! noised mixture the CMI is estimated by Monte Carlo over `x ~ q_t` as
//! `E[log p(x_A|x_B,x_C) - log p(x_A|x_B)]`, with every conditional written
//! as a ratio of exact subset-marginal mixture densities. The Markov length
//! `xi` comes from the least-squares fit `ln I = ln I_0 - r / xi`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::Tripartition;
use crate::mixture::{log_sum_exp, GaussianMixtureModel};
use crate::sampler::forward_noise;
use crate::schedule::NoiseSchedule;
use crate::seed::rng_for;

/// CMI values at or below this floor are dropped before fitting.
pub const CMI_FIT_FLOOR: f64 = 1e-12;

fn submatrix(cov: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| cov[(rows[i], cols[j])])
}

fn logdet_spd(m: DMatrix<f64>) -> Result<f64> {
    m.cholesky()
        .map(|c| c.ln_determinant())
        .ok_or_else(|| Error::Numeric("matrix not symmetric positive definite".into()))
}

/// `ln det` of the conditional covariance `Sigma_{A|S}`.
fn logdet_conditional(cov: &DMatrix<f64>, a: &[usize], s: &[usize]) -> Result<f64> {
    let caa = submatrix(cov, a, a);
    if s.is_empty() {
        return logdet_spd(caa);
    }
    let css = submatrix(cov, s, s);
    let cas = submatrix(cov, a, s);
    let chol = css
        .cholesky()
        .ok_or_else(|| Error::Numeric("conditioning block not SPD".into()))?;
    let solved = chol.solve(&cas.transpose());
    logdet_spd(caa - cas * solved)
}

/// Exact Gaussian conditional mutual information `I(A:C|B)` in nats.
pub fn gaussian_cmi(cov: &DMatrix<f64>, part: &Tripartition) -> Result<f64> {
    if cov.nrows() != cov.ncols() || cov.nrows() != part.n_total() {
        return Err(Error::InvalidInput(format!(
            "covariance is {}x{}, tripartition covers {} sites",
            cov.nrows(),
            cov.ncols(),
            part.n_total()
        )));
    }
    let b_union_c: Vec<usize> = {
        let mut v: Vec<usize> = part.b_sites.iter().chain(&part.c_sites).copied().collect();
        v.sort_unstable();
        v
    };
    let ld_b = logdet_conditional(cov, &part.a_sites, &part.b_sites)?;
    let ld_bc = logdet_conditional(cov, &part.a_sites, &b_union_c)?;
    let cmi = 0.5 * (ld_b - ld_bc);
    if cmi < -1e-10 {
        return Err(Error::Numeric(format!(
            "Gaussian CMI evaluated to {cmi}, below the -1e-10 round-off floor"
        )));
    }
    Ok(cmi.max(0.0))
}

/// Exact mixture log density of the marginal on a site subset.
struct SubsetDensity {
    sites: Vec<usize>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    logdet: f64,
    log_priors: Vec<f64>,
    scaled_means: Vec<DVector<f64>>,
}

impl SubsetDensity {
    fn build(
        m: &GaussianMixtureModel,
        sched: &NoiseSchedule,
        t: f64,
        sites: Vec<usize>,
    ) -> Result<Self> {
        let cov = m.marginal_covariance(sched, t, &sites)?;
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::Numeric("subset covariance not SPD".into()))?;
        let logdet = chol.ln_determinant();
        let scale = sched.eval(t)?.alpha_bar.sqrt();
        let scaled_means = m
            .means()
            .iter()
            .map(|mu| DVector::from_fn(sites.len(), |i, _| scale * mu[sites[i]]))
            .collect();
        let log_priors = m.priors().iter().map(|p| p.ln()).collect();
        Ok(SubsetDensity { sites, chol, logdet, log_priors, scaled_means })
    }

    fn log_density(&self, x: &DVector<f64>) -> f64 {
        if self.sites.is_empty() {
            return 0.0;
        }
        let mut logw = Vec::with_capacity(self.log_priors.len());
        for (lp, mu) in self.log_priors.iter().zip(&self.scaled_means) {
            let v = DVector::from_fn(self.sites.len(), |i, _| x[self.sites[i]] - mu[i]);
            let u = self.chol.solve(&v);
            logw.push(lp - 0.5 * v.dot(&u));
        }
        log_sum_exp(&logw)
            - 0.5 * self.logdet
            - 0.5 * self.sites.len() as f64 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Monte-Carlo estimate of `I(A:C|B)` for the noised mixture at time `t`,
/// as `(estimate, stderr)` over `n` draws from `q_t`.
pub fn mixture_cmi_mc(
    m: &GaussianMixtureModel,
    sched: &NoiseSchedule,
    t: f64,
    part: &Tripartition,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n < 100 {
        return Err(Error::InvalidInput(format!("need n >= 100 Monte-Carlo draws, got {n}")));
    }
    if part.n_total() != m.n_sites() {
        return Err(Error::InvalidInput("tripartition does not cover the lattice".into()));
    }
    let sorted_union = |x: &[usize], y: &[usize]| -> Vec<usize> {
        let mut v: Vec<usize> = x.iter().chain(y).copied().collect();
        v.sort_unstable();
        v
    };
    let all: Vec<usize> = (0..m.n_sites()).collect();
    let dens_all = SubsetDensity::build(m, sched, t, all)?;
    let dens_ab = SubsetDensity::build(m, sched, t, sorted_union(&part.a_sites, &part.b_sites))?;
    let dens_bc = SubsetDensity::build(m, sched, t, sorted_union(&part.b_sites, &part.c_sites))?;
    let dens_b = SubsetDensity::build(m, sched, t, part.b_sites.clone())?;

    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut rng = rng_for(seed, "cmi-mc", 0, i as u64);
            let (x0, _) = m.sample_clean(&mut rng, None)?;
            let x = forward_noise(m, sched, &x0, t, &mut rng)?;
            Ok(dens_all.log_density(&x) + dens_b.log_density(&x)
                - dens_ab.log_density(&x)
                - dens_bc.log_density(&x))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    Ok((mean, (var / n as f64).sqrt()))
}

/// Markov-length fit of CMI-vs-radius points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovFit {
    /// Decay length in sites; `+inf` flags a non-decaying (or growing) fit.
    pub xi: f64,
    pub i0: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `ln(cmi)` against `r`; `xi = -1/slope`.
/// Points with `cmi <= 1e-12` are dropped before fitting.
pub fn markov_length_fit(points: &[(f64, f64)]) -> Result<MarkovFit> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, c)| *c > CMI_FIT_FLOOR)
        .map(|&(r, c)| (r, c.ln()))
        .collect();
    if usable.len() < 2 {
        return Err(Error::Fit(format!(
            "need at least 2 points with CMI above {CMI_FIT_FLOOR}, got {}",
            usable.len()
        )));
    }
    let n = usable.len() as f64;
    let sx: f64 = usable.iter().map(|p| p.0).sum();
    let sy: f64 = usable.iter().map(|p| p.1).sum();
    let sxx: f64 = usable.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = usable.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(Error::Fit("all radii coincide; slope is undefined".into()));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mean_y = sy / n;
    let ss_tot: f64 = usable.iter().map(|p| (p.1 - mean_y) * (p.1 - mean_y)).sum();
    let ss_res: f64 = usable
        .iter()
        .map(|p| {
            let e = p.1 - (intercept + slope * p.0);
            e * e
        })
        .sum();
    let r_squared = if ss_tot < 1e-300 { 1.0 } else { 1.0 - ss_res / ss_tot };
    let xi = if slope >= 0.0 { f64::INFINITY } else { -1.0 / slope };
    Ok(MarkovFit { xi, i0: intercept.exp(), r_squared })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{tripartition, LatticeSpec, Tripartition};

    #[test]
    fn identity_covariance_has_zero_cmi() {
        let part = Tripartition {
            a_sites: vec![0],
            b_sites: vec![1],
            c_sites: vec![2, 3],
            radius: 1,
        };
        let cmi = gaussian_cmi(&DMatrix::identity(4, 4), &part).unwrap();
        assert_eq!(cmi, 0.0);
    }

    #[test]
    fn markov_chain_screens_exactly() {
        // Tridiagonal precision on a 3-site chain: A - B - C is Markov.
        let q = DMatrix::from_row_slice(3, 3, &[2.0, -0.8, 0.0, -0.8, 2.0, -0.8, 0.0, -0.8, 2.0]);
        let cov = q.try_inverse().unwrap();
        let part = Tripartition { a_sites: vec![0], b_sites: vec![1], c_sites: vec![2], radius: 1 };
        let cmi = gaussian_cmi(&cov, &part).unwrap();
        assert!(cmi < 1e-12, "cmi = {cmi}");
    }

    #[test]
    fn bivariate_mutual_information() {
        // B empty: I(A:C) = -1/2 ln(1 - rho^2) for correlation rho = 0.5.
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let part = Tripartition { a_sites: vec![0], b_sites: vec![], c_sites: vec![1], radius: 0 };
        let cmi = gaussian_cmi(&cov, &part).unwrap();
        let want = -0.5 * (1.0f64 - 0.25).ln();
        assert!((cmi - want).abs() < 1e-12, "cmi = {cmi}, want {want}");
        assert!((want - 0.14384).abs() < 1e-5);
    }

    #[test]
    fn non_spd_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let part = Tripartition { a_sites: vec![0], b_sites: vec![], c_sites: vec![1], radius: 0 };
        assert!(matches!(gaussian_cmi(&cov, &part), Err(Error::Numeric(_))));
    }

    #[test]
    fn fit_exact_exponential() {
        let pts: Vec<(f64, f64)> =
            (1..=6).map(|r| (r as f64, 2.0 * (-(r as f64) / 3.0).exp())).collect();
        let fit = markov_length_fit(&pts).unwrap();
        assert!((fit.xi - 3.0).abs() < 1e-9);
        assert!((fit.i0 - 2.0).abs() < 1e-9);
        assert!((fit.r_squared - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fit_constant_flags_divergence() {
        let pts: Vec<(f64, f64)> = (1..=5).map(|r| (r as f64, 0.3)).collect();
        let fit = markov_length_fit(&pts).unwrap();
        assert!(fit.xi.is_infinite());
    }

    #[test]
    fn fit_noisy_exponential() {
        // 1% multiplicative noise: xi recovered within 5%.
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut unit = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let pts: Vec<(f64, f64)> = (1..=8)
            .map(|r| {
                let noise = 1.0 + 0.01 * (2.0 * unit() - 1.0);
                (r as f64, 1.5 * (-(r as f64) / 2.5).exp() * noise)
            })
            .collect();
        let fit = markov_length_fit(&pts).unwrap();
        assert!((fit.xi - 2.5).abs() / 2.5 < 0.05, "xi = {}", fit.xi);
    }

    #[test]
    fn fit_needs_two_usable_points() {
        assert!(matches!(
            markov_length_fit(&[(1.0, 1e-15), (2.0, 1e-14), (3.0, 0.5)]),
            Err(Error::Fit(_))
        ));
    }

    #[test]
    fn mixture_cmi_degenerate_c_is_zero() {
        let spec = LatticeSpec::Ring1d { len: 6 };
        let m = GaussianMixtureModel::constant_pm(spec, 0.5, 1.0, 2.0).unwrap();
        let s = NoiseSchedule::vp_cosine();
        // Radius big enough that C is empty: CMI must be exactly zero.
        let part = tripartition(&spec, &[0], 3).unwrap();
        assert!(part.c_sites.is_empty());
        let (est, se) = mixture_cmi_mc(&m, &s, 0.4, &part, 200, 3).unwrap();
        assert_eq!(est, 0.0);
        assert_eq!(se, 0.0);
        assert!(mixture_cmi_mc(&m, &s, 0.4, &part, 50, 3).is_err());
    }
}
