//! Log posterior over the unconstrained vector
//! `[ln σ_y, ln σ_μ, ln σ_τ, ζ, ln σ_0, μ_τ0, ln σ_τ0, (β)]`.
//!
//! The initial level mean is sampled as `μ_0 = c + sqrt(σ_0² + w²)·ζ`,
//! where `c` and `w` are fixed per series (see [`LevelOffset`]).

use impactor_mcmc::{LogDensity, LogDensityError};

use super::kalman::{self, StateSpaceParams};
use super::ModelSpec;
use crate::error::{Error, Result};
use crate::stats::{cauchy_logpdf, half_cauchy_logpdf};

pub const PARAM_NAMES: [&str; 8] = [
    "sigma_y",
    "sigma_mu",
    "sigma_tau",
    "mu0",
    "sigma0",
    "mu_tau0",
    "sigma_tau0",
    "beta",
];

const SCALE_SLOTS: [usize; 5] = [0, 1, 2, 4, 6];

/// Center and width used to sample the initial level mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelOffset {
    pub center: f64,
    pub width: f64,
}

impl LevelOffset {
    fn spread(&self, sigma0: f64) -> f64 {
        (sigma0 * sigma0 + self.width * self.width).sqrt()
    }
}

pub fn params_from_unconstrained(spec: &ModelSpec, theta: &[f64]) -> StateSpaceParams {
    let sigma0 = theta[4].exp();
    StateSpaceParams {
        sigma_y: theta[0].exp(),
        sigma_mu: theta[1].exp(),
        sigma_tau: theta[2].exp(),
        mu0: spec.level_offset.center + spec.level_offset.spread(sigma0) * theta[3],
        sigma0,
        mu_tau0: theta[5],
        sigma_tau0: theta[6].exp(),
        beta: theta.get(7).copied().unwrap_or(0.0),
    }
}

pub fn to_unconstrained(spec: &ModelSpec, p: &StateSpaceParams) -> Vec<f64> {
    let mut theta = vec![
        p.sigma_y.ln(),
        p.sigma_mu.ln(),
        p.sigma_tau.ln(),
        (p.mu0 - spec.level_offset.center) / spec.level_offset.spread(p.sigma0),
        p.sigma0.ln(),
        p.mu_tau0,
        p.sigma_tau0.ln(),
    ];
    if spec.has_covariate() {
        theta.push(p.beta);
    }
    theta
}

/// Natural-scale values `[σ_y, σ_μ, σ_τ, μ_0, σ_0, μ_τ0, σ_τ0, (β)]`.
pub(crate) fn natural(spec: &ModelSpec, theta: &[f64]) -> Vec<f64> {
    let p = params_from_unconstrained(spec, theta);
    let all = [
        p.sigma_y,
        p.sigma_mu,
        p.sigma_tau,
        p.mu0,
        p.sigma0,
        p.mu_tau0,
        p.sigma_tau0,
        p.beta,
    ];
    all[..theta.len()].to_vec()
}

/// Log posterior density (up to a constant) in unconstrained coordinates,
/// Jacobian included, with its gradient.
pub fn log_posterior(spec: &ModelSpec, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    if theta.len() != spec.dim() {
        return Err(Error::Length(format!(
            "parameter vector has {} entries, model expects {}",
            theta.len(),
            spec.dim()
        )));
    }
    let p = params_from_unconstrained(spec, theta);
    let (ll, sc) = kalman::log_likelihood_scores(&spec.view(), &p)?;
    let s = spec.config.prior_scale;
    let sb = spec.config.beta_prior_scale;

    let mut lp = ll;
    let mut grad = vec![0.0; theta.len()];
    let var_scores = [sc.var_y, sc.var_mu, sc.var_tau, sc.var0, sc.var_tau0];
    for (slot, dvar) in SCALE_SLOTS.into_iter().zip(var_scores) {
        let sigma = theta[slot].exp();
        let s2 = sigma * sigma;
        // half-Cauchy prior plus log-Jacobian of σ = exp(θ)
        lp += half_cauchy_logpdf(sigma, s) + theta[slot];
        grad[slot] = 2.0 * s2 * dvar + 1.0 - 2.0 * s2 / (s * s + s2);
    }

    let spread = spec.level_offset.spread(p.sigma0);
    let dmu0 = sc.mu0 - 2.0 * p.mu0 / (s * s + p.mu0 * p.mu0);
    lp += cauchy_logpdf(p.mu0, s) + spread.ln();
    let s02 = p.sigma0 * p.sigma0;
    grad[3] = dmu0 * spread;
    grad[4] += dmu0 * theta[3] * s02 / spread + s02 / (spread * spread);

    let m = theta[5];
    lp += cauchy_logpdf(m, s);
    grad[5] = sc.mu_tau0 - 2.0 * m / (s * s + m * m);
    if theta.len() == 8 {
        let b = theta[7];
        lp += cauchy_logpdf(b, sb);
        grad[7] = sc.beta - 2.0 * b / (sb * sb + b * b);
    }
    if !lp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Degenerate(format!("non-finite log posterior at {theta:?}")));
    }
    Ok((lp, grad))
}

/// Adapter exposing a model to the sampler.
pub struct BstsDensity<'a> {
    pub spec: &'a ModelSpec,
}

impl LogDensity for BstsDensity<'_> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn logp_grad(&self, position: &[f64], grad: &mut [f64]) -> std::result::Result<f64, LogDensityError> {
        match log_posterior(self.spec, position) {
            Ok((lp, g)) => {
                grad.copy_from_slice(&g);
                Ok(lp)
            }
            Err(e) => Err(LogDensityError(e.to_string())),
        }
    }
}
