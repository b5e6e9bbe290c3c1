//! Gaussian-identity and binomial-logit response families.

use std::f64::consts::PI;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{GamError, Result};

/// Clamp applied to logit means so IRLS weights never underflow.
pub const MU_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Binomial,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Binomial => "binomial",
        }
    }

    pub fn link_name(&self) -> &'static str {
        match self {
            Family::Gaussian => "identity",
            Family::Binomial => "logit",
        }
    }

    /// Whether the dispersion is fixed at 1.
    pub fn fixed_dispersion(&self) -> bool {
        matches!(self, Family::Binomial)
    }

    pub fn mean(&self, eta: f64) -> f64 {
        match self {
            Family::Gaussian => eta,
            Family::Binomial => (1.0 / (1.0 + (-eta).exp())).clamp(MU_EPS, 1.0 - MU_EPS),
        }
    }

    pub fn link(&self, mu: f64) -> f64 {
        match self {
            Family::Gaussian => mu,
            Family::Binomial => {
                let mu = mu.clamp(MU_EPS, 1.0 - MU_EPS);
                (mu / (1.0 - mu)).ln()
            }
        }
    }

    pub fn inverse_link(&self, eta: &DVector<f64>) -> DVector<f64> {
        eta.map(|e| self.mean(e))
    }

    /// Working response and weight for one observation.
    pub fn working(&self, y: f64, mu: f64, eta: f64) -> (f64, f64) {
        match self {
            Family::Gaussian => (y, 1.0),
            Family::Binomial => {
                let w = mu * (1.0 - mu);
                (eta + (y - mu) / w, w)
            }
        }
    }

    /// IRLS working response `z` and weights `w` at the current means.
    pub fn irls_working(&self, y: &DVector<f64>, mu: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = y.len();
        let mut z = DVector::zeros(n);
        let mut w = DVector::zeros(n);
        for i in 0..n {
            let (zi, wi) = self.working(y[i], mu[i], self.link(mu[i]));
            z[i] = zi;
            w[i] = wi;
        }
        (z, w)
    }

    pub fn unit_deviance(&self, y: f64, mu: f64) -> f64 {
        match self {
            Family::Gaussian => (y - mu) * (y - mu),
            Family::Binomial => {
                let mu = mu.clamp(MU_EPS, 1.0 - MU_EPS);
                2.0 * (xlogy(y, y / mu) + xlogy(1.0 - y, (1.0 - y) / (1.0 - mu)))
            }
        }
    }

    pub fn deviance(&self, y: &DVector<f64>, mu: &DVector<f64>) -> f64 {
        y.iter().zip(mu.iter()).map(|(&yi, &mi)| self.unit_deviance(yi, mi)).sum()
    }

    /// Log-likelihood at the given means; `scale` is ignored for binomial.
    pub fn loglik(&self, y: &DVector<f64>, mu: &DVector<f64>, scale: f64) -> f64 {
        let dev = self.deviance(y, mu);
        match self {
            Family::Gaussian => -0.5 * y.len() as f64 * (2.0 * PI * scale).ln() - dev / (2.0 * scale),
            // 0/1 responses have a saturated log-likelihood of zero
            Family::Binomial => -0.5 * dev,
        }
    }

    pub fn initial_mean(&self, y: f64) -> f64 {
        match self {
            Family::Gaussian => y,
            Family::Binomial => (y + 0.5) / 2.0,
        }
    }

    pub fn validate_response(&self, y: &[f64]) -> Result<()> {
        for (row, &v) in y.iter().enumerate() {
            let ok = match self {
                Family::Gaussian => v.is_finite(),
                Family::Binomial => v == 0.0 || v == 1.0,
            };
            if !ok {
                return Err(GamError::InvalidResponse {
                    family: self.name(),
                    row,
                    value: v,
                });
            }
        }
        Ok(())
    }
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}
