//! Bayesian P-spline quantile regression under a sampling-weighted
//! asymmetric-Laplace pseudo-likelihood.

mod basis;
mod fit;
mod mcmc_stats;
mod nuts;
mod posterior;
mod rwm;

pub use basis::{
    build_basis, difference_matrix, numerical_rank, BasisBundle, BasisKind, KnotRule, SplineSpec,
};
pub use fit::{fitted_curve, run_mcmc, FittedCurve, PosteriorDraws, SamplerConfig, SamplerDiagnostics, SamplerMethod};
pub use mcmc_stats::{effective_sample_size, split_rhat};
pub use nuts::{LogDensity, NutsSettings};
pub use posterior::{ModelState, PseudoPosterior, SamplerTarget};

use crate::error::{Error, Result};

/// Check loss: `q u` for `u >= 0`, `(q - 1) u` for `u < 0`.
#[inline]
pub fn check_loss(u: f64, q: f64) -> f64 {
    if u >= 0.0 {
        q * u
    } else {
        (q - 1.0) * u
    }
}

/// Subgradient of the check loss: `q` for `u >= 0`, `q - 1` for `u < 0`.
#[inline]
pub fn check_loss_slope(u: f64, q: f64) -> f64 {
    if u >= 0.0 {
        q
    } else {
        q - 1.0
    }
}

pub(crate) fn validate_al(tau: f64, q: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("AL precision must be positive, got {tau}")));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!("AL quantile must lie in (0, 1), got {q}")));
    }
    Ok(())
}

/// Log density of AL(mu, tau, q): `log tau + log q + log(1 - q) - tau rho_q(y - mu)`.
pub fn al_logpdf(y: f64, mu: f64, tau: f64, q: f64) -> Result<f64> {
    validate_al(tau, q)?;
    Ok(tau.ln() + q.ln() + (1.0 - q).ln() - tau * check_loss(y - mu, q))
}
