//! Variance-preserving noise schedules.
//!
//! Convention: `t = 1` is the noisy endpoint, `t = 0` the clean endpoint.
//! The forward SDE is `dx = -1/2 beta(t) x dt + sqrt(beta(t)) dW`, whose
//! marginal is `x_t = sqrt(alpha_bar(t)) x_0 + sqrt(1 - alpha_bar(t)) eps`
//! with `beta = -d ln(alpha_bar)/dt`.
//!
//! `beta` diverges at `t -> 1` for the cosine schedule, so every evaluation
//! clamps `t` to `[t_min, t_max]` first.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_T_MIN: f64 = 1e-3;
pub const DEFAULT_T_MAX: f64 = 1.0 - 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScheduleKind {
    VpCosine,
    VpLinearBeta { beta_min: f64, beta_max: f64 },
}

/// Schedule coefficients at one (clamped) time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleEval {
    pub alpha_bar: f64,
    pub sigma2: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    #[serde(flatten)]
    pub kind: ScheduleKind,
    pub t_min: f64,
    pub t_max: f64,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, t_min: f64, t_max: f64) -> Result<Self> {
        if !(t_min > 0.0 && t_min < t_max && t_max < 1.0) {
            return Err(Error::Config(format!(
                "schedule clamp must satisfy 0 < t_min < t_max < 1, got [{t_min}, {t_max}]"
            )));
        }
        if let ScheduleKind::VpLinearBeta { beta_min, beta_max } = kind {
            if !(beta_min > 0.0 && beta_max >= beta_min) {
                return Err(Error::Config(format!(
                    "vp-linear-beta needs 0 < beta_min <= beta_max, got [{beta_min}, {beta_max}]"
                )));
            }
        }
        Ok(NoiseSchedule { kind, t_min, t_max })
    }

    pub fn vp_cosine() -> Self {
        NoiseSchedule::new(ScheduleKind::VpCosine, DEFAULT_T_MIN, DEFAULT_T_MAX)
            .expect("default clamp is valid")
    }

    pub fn clamp(&self, t: f64) -> f64 {
        t.clamp(self.t_min, self.t_max)
    }

    /// `(alpha_bar, sigma^2, beta)` at `t`, clamped to `[t_min, t_max]`.
    ///
    /// `sigma^2` is defined as `1 - alpha_bar`, so variance preservation is
    /// exact by construction.
    pub fn eval(&self, t: f64) -> Result<ScheduleEval> {
        if !(0.0..=1.0).contains(&t) || t.is_nan() {
            return Err(Error::InvalidInput(format!("time {t} outside [0, 1]")));
        }
        let tc = self.clamp(t);
        let (alpha_bar, beta) = match self.kind {
            ScheduleKind::VpCosine => {
                let c = (std::f64::consts::FRAC_PI_2 * tc).cos();
                let alpha_bar = c * c;
                let beta = std::f64::consts::PI * (std::f64::consts::FRAC_PI_2 * tc).tan();
                (alpha_bar, beta)
            }
            ScheduleKind::VpLinearBeta { beta_min, beta_max } => {
                let integral = beta_min * tc + 0.5 * (beta_max - beta_min) * tc * tc;
                ((-integral).exp(), beta_min + (beta_max - beta_min) * tc)
            }
        };
        Ok(ScheduleEval { alpha_bar, sigma2: 1.0 - alpha_bar, beta })
    }

    /// `(sqrt(alpha_bar), sqrt(sigma^2))`: scale and noise std of the
    /// forward marginal `x_t = scale * x_0 + noise_std * eps`.
    pub fn forward_moments(&self, t: f64) -> Result<(f64, f64)> {
        let e = self.eval(t)?;
        Ok((e.alpha_bar.sqrt(), e.sigma2.sqrt()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_midpoint() {
        let s = NoiseSchedule::vp_cosine();
        let e = s.eval(0.5).unwrap();
        assert!((e.alpha_bar - 0.5).abs() < 1e-12);
        assert!((e.sigma2 - 0.5).abs() < 1e-12);
        assert!((e.beta - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn clean_endpoint_limit() {
        // Tight clamp: values approach (1, 0, 0) near t = 0.
        let s = NoiseSchedule::new(ScheduleKind::VpCosine, 1e-9, 1.0 - 1e-9).unwrap();
        let e = s.eval(0.0).unwrap();
        assert!((e.alpha_bar - 1.0).abs() < 1e-12);
        assert!(e.sigma2 < 1e-12);
        assert!(e.beta < 1e-6);
    }

    #[test]
    fn clamp_ceiling_applies() {
        let s = NoiseSchedule::new(ScheduleKind::VpCosine, 1e-3, 0.999).unwrap();
        let at_cap = s.eval(0.999).unwrap();
        let above = s.eval(1.0).unwrap();
        assert_eq!(at_cap, above);
        assert!(at_cap.beta.is_finite());
        // Out-of-range requests are rejected outright.
        assert!(s.eval(1.2).is_err());
        assert!(s.eval(-0.1).is_err());
    }

    #[test]
    fn forward_moments_examples() {
        let s = NoiseSchedule::new(ScheduleKind::VpCosine, 1e-12, 1.0 - 1e-12).unwrap();
        let (sc, sd) = s.forward_moments(0.0).unwrap();
        assert!((sc - 1.0).abs() < 1e-9 && sd < 1e-6);
        let (sc, sd) = s.forward_moments(1.0).unwrap();
        assert!(sc < 1e-6 && (sd - 1.0).abs() < 1e-9);
        let (sc, sd) = s.forward_moments(0.5).unwrap();
        assert!((sc - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((sd - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn variance_preserving_exactly() {
        for s in [
            NoiseSchedule::vp_cosine(),
            NoiseSchedule::new(
                ScheduleKind::VpLinearBeta { beta_min: 0.1, beta_max: 20.0 },
                1e-3,
                0.999,
            )
            .unwrap(),
        ] {
            for k in 0..=1000 {
                let e = s.eval(k as f64 / 1000.0).unwrap();
                assert_eq!(e.alpha_bar + e.sigma2, 1.0);
            }
        }
    }

    #[test]
    fn alpha_bar_strictly_decreasing() {
        for s in [
            NoiseSchedule::vp_cosine(),
            NoiseSchedule::new(
                ScheduleKind::VpLinearBeta { beta_min: 0.1, beta_max: 20.0 },
                1e-3,
                0.999,
            )
            .unwrap(),
        ] {
            let mut prev = f64::INFINITY;
            for k in 0..1000 {
                let t = s.t_min + (s.t_max - s.t_min) * k as f64 / 999.0;
                let a = s.eval(t).unwrap().alpha_bar;
                assert!(a < prev, "alpha_bar not strictly decreasing at t={t}");
                prev = a;
            }
        }
    }

    #[test]
    fn beta_matches_log_alpha_derivative() {
        // beta = -d ln(alpha_bar)/dt, checked by centered differences.
        for s in [
            NoiseSchedule::vp_cosine(),
            NoiseSchedule::new(
                ScheduleKind::VpLinearBeta { beta_min: 0.1, beta_max: 20.0 },
                1e-3,
                0.999,
            )
            .unwrap(),
        ] {
            let h = 1e-6;
            for k in 1..100 {
                let t = s.t_min + (s.t_max - 2.0 * h - s.t_min) * k as f64 / 100.0 + h;
                let lp = s.eval(t + h).unwrap().alpha_bar.ln();
                let lm = s.eval(t - h).unwrap().alpha_bar.ln();
                let fd = -(lp - lm) / (2.0 * h);
                let beta = s.eval(t).unwrap().beta;
                assert!(
                    (fd - beta).abs() / beta.abs().max(1e-12) < 1e-5,
                    "beta mismatch at t={t}: fd={fd} beta={beta}"
                );
            }
        }
    }

    #[test]
    fn bad_clamp_rejected() {
        assert!(NoiseSchedule::new(ScheduleKind::VpCosine, 0.0, 0.999).is_err());
        assert!(NoiseSchedule::new(ScheduleKind::VpCosine, 0.5, 0.5).is_err());
        assert!(NoiseSchedule::new(ScheduleKind::VpCosine, 1e-3, 1.0).is_err());
    }
}
