//! Split rank-normalized R-hat and effective sample size.
//!
//! Follows Vehtari, Gelman, Simpson, Carpenter & Bürkner (2021): draws are
//! rank-normalized across all chains, chains are split in half, and R-hat is
//! the larger of the bulk and folded statistics. ESS uses Geyer's initial
//! monotone sequence on the combined autocorrelation estimate.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

pub const DEFAULT_MAX_RHAT: f64 = 1.01;
pub const DEFAULT_MIN_ESS: f64 = 400.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("at least 2 chains are required, got {0}")]
    TooFewChains(usize),
    #[error("at least 4 draws per chain are required, got {0}")]
    TooFewDraws(usize),
    #[error("chains have unequal lengths")]
    Ragged,
    #[error("{names} names for {params} parameters")]
    NameMismatch { names: usize, params: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub name: String,
    pub rhat: f64,
    pub ess_bulk: f64,
    pub ess_tail: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub params: Vec<ParamDiagnostics>,
    pub max_rhat: f64,
    pub min_ess: f64,
    pub all_converged: bool,
}

impl Diagnostics {
    /// `traces[k][c]` is the trace of parameter `k` in chain `c`.
    pub fn compute(names: &[String], traces: &[Vec<Vec<f64>>]) -> Result<Self, DiagnosticsError> {
        Self::with_thresholds(names, traces, DEFAULT_MAX_RHAT, DEFAULT_MIN_ESS)
    }

    pub fn with_thresholds(
        names: &[String],
        traces: &[Vec<Vec<f64>>],
        max_rhat: f64,
        min_ess: f64,
    ) -> Result<Self, DiagnosticsError> {
        if names.len() != traces.len() {
            return Err(DiagnosticsError::NameMismatch {
                names: names.len(),
                params: traces.len(),
            });
        }
        let mut params = Vec::with_capacity(names.len());
        for (name, chains) in names.iter().zip(traces) {
            check_shape(chains)?;
            params.push(ParamDiagnostics {
                name: name.clone(),
                rhat: split_rhat(chains),
                ess_bulk: ess_bulk(chains),
                ess_tail: ess_tail(chains),
            });
        }
        let worst_rhat = params
            .iter()
            .map(|p| if p.rhat.is_nan() { f64::INFINITY } else { p.rhat })
            .fold(f64::NEG_INFINITY, f64::max);
        let worst_ess = params.iter().map(|p| p.ess_bulk).fold(f64::INFINITY, f64::min);
        Ok(Self {
            all_converged: worst_rhat <= max_rhat && worst_ess >= min_ess,
            max_rhat: worst_rhat,
            min_ess: worst_ess,
            params,
        })
    }

    pub fn get(&self, name: &str) -> Option<&ParamDiagnostics> {
        self.params.iter().find(|p| p.name == name)
    }
}

fn check_shape(chains: &[Vec<f64>]) -> Result<(), DiagnosticsError> {
    if chains.len() < 2 {
        return Err(DiagnosticsError::TooFewChains(chains.len()));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(DiagnosticsError::Ragged);
    }
    if n < 4 {
        return Err(DiagnosticsError::TooFewDraws(n));
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Normal scores of pooled average ranks, `Φ⁻¹((r − 3/8) / (S + 1/4))`.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let total: usize = chains.iter().map(Vec::len).sum();
    let mut idx: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, v)| v.iter().enumerate().map(move |(i, &x)| (x, c, i)))
        .collect();
    idx.sort_by(|a, b| a.0.total_cmp(&b.0));

    let normal = Normal::standard();
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j < total && idx[j].0 == idx[i].0 {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        let z = normal.inverse_cdf((rank - 0.375) / (total as f64 + 0.25));
        for &(_, c, k) in &idx[i..j] {
            out[c][k] = z;
        }
        i = j;
    }
    out
}

fn fold(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut all: Vec<f64> = chains.concat();
    all.sort_by(f64::total_cmp);
    let n = all.len();
    let median = if n % 2 == 1 {
        all[n / 2]
    } else {
        0.5 * (all[n / 2 - 1] + all[n / 2])
    };
    chains
        .iter()
        .map(|c| c.iter().map(|x| (x - median).abs()).collect())
        .collect()
}

/// Classic potential scale reduction on already-split chains.
fn rhat_basic(split: &[Vec<f64>]) -> f64 {
    let n = split[0].len() as f64;
    let means: Vec<f64> = split.iter().map(|c| mean(c)).collect();
    let b = n * sample_var(&means);
    let w = mean(&split.iter().map(|c| sample_var(c)).collect::<Vec<_>>());
    if !(w > 0.0) {
        return f64::NAN;
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Rank-normalized split R-hat: the larger of the bulk and folded versions.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let bulk = rhat_basic(&split_chains(&rank_normalize(chains)));
    let tail = rhat_basic(&split_chains(&rank_normalize(&fold(chains))));
    if bulk.is_nan() || tail.is_nan() {
        return f64::NAN;
    }
    bulk.max(tail)
}

fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// ESS of already-transformed chains (no splitting here).
fn ess_raw(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len();
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov_at = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocov(c, mu, lag))
            .sum::<f64>()
            / m
    };

    let mean_var = acov_at(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if chains.len() > 1 {
        var_plus += sample_var(&means);
    }
    if !(var_plus > 0.0) || !(mean_var > 0.0) {
        return 1.0;
    }
    let rho = |lag: usize| 1.0 - (mean_var - acov_at(lag)) / var_plus;

    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = rho(1);
    rho_hat[1] = rho_odd;
    let mut t = 1;
    while t + 4 < n && rho_even + rho_odd > 0.0 {
        rho_even = rho(t + 1);
        rho_odd = rho(t + 2);
        if rho_even + rho_odd >= 0.0 {
            rho_hat[t + 1] = rho_even;
            rho_hat[t + 2] = rho_odd;
        }
        t += 2;
    }
    let max_t = t;
    if rho_even > 0.0 && max_t + 1 < n {
        rho_hat[max_t + 1] = rho_even;
    }

    // initial monotone sequence
    let mut t = 1;
    while t + 3 <= max_t {
        let prev = rho_hat[t - 1] + rho_hat[t];
        if rho_hat[t + 1] + rho_hat[t + 2] > prev {
            rho_hat[t + 1] = prev / 2.0;
            rho_hat[t + 2] = prev / 2.0;
        }
        t += 2;
    }

    let total = m * nf;
    let tail = if max_t + 1 < n { rho_hat[max_t + 1] } else { 0.0 };
    let tau = (-1.0 + 2.0 * rho_hat[..max_t].iter().sum::<f64>() + tail).max(1.0 / total.log10());
    total / tau
}

/// Bulk effective sample size on rank-normalized split chains.
pub fn ess_bulk(chains: &[Vec<f64>]) -> f64 {
    ess_raw(&split_chains(&rank_normalize(chains)))
}

/// Minimum ESS of the 5% and 95% quantile indicators.
pub fn ess_tail(chains: &[Vec<f64>]) -> f64 {
    let mut all = chains.concat();
    all.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = p * (all.len() - 1) as f64;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        all[lo] + (h - lo as f64) * (all[hi] - all[lo])
    };
    let (q05, q95) = (q(0.05), q(0.95));
    let indicator = |f: &dyn Fn(f64) -> bool| -> Vec<Vec<f64>> {
        chains
            .iter()
            .map(|c| c.iter().map(|&x| if f(x) { 1.0 } else { 0.0 }).collect())
            .collect()
    };
    let lo = ess_raw(&split_chains(&indicator(&|x| x <= q05)));
    let hi = ess_raw(&split_chains(&indicator(&|x| x <= q95)));
    lo.min(hi)
}
