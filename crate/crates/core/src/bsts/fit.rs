use std::io::Write;
use std::path::Path;

use impactor_mcmc::{ChainStats, Diagnostics};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kalman::{self, StateSpaceParams};
use super::model::{natural, BstsDensity};
use super::{ModelSpec, SamplerConfig};
use crate::error::{Error, Result};
use crate::stats::{self, derive_seed};

/// Retained draws of one chain, on the modelling scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    /// `draws × params`, natural scale (σ's positive).
    pub params: Vec<f64>,
    /// `draws × n` level and seasonal paths.
    pub level: Vec<f64>,
    pub seasonal: Vec<f64>,
    /// `draws × S` state vector on the last training day.
    pub last_state: Vec<f64>,
    pub stats: ChainStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub param_names: Vec<String>,
    pub chains: Vec<ChainDraws>,
    pub draws_per_chain: usize,
    pub train_len: usize,
    pub season: usize,
    /// Seed of the sampling attempt that produced these draws.
    pub seed: u64,
    pub attempts: usize,
}

impl Posterior {
    pub fn n_params(&self) -> usize {
        self.param_names.len()
    }

    pub fn total_draws(&self) -> usize {
        self.chains.len() * self.draws_per_chain
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|p| p == name)
    }

    /// Per-chain traces of parameter `k`.
    pub fn traces(&self, k: usize) -> Vec<Vec<f64>> {
        let np = self.n_params();
        self.chains
            .iter()
            .map(|c| c.params.iter().skip(k).step_by(np).copied().collect())
            .collect()
    }

    /// All draws of parameter `k`, chains concatenated in order.
    pub fn pooled(&self, k: usize) -> Vec<f64> {
        self.traces(k).concat()
    }

    pub fn divergences(&self) -> usize {
        self.chains.iter().map(|c| c.stats.divergences).sum()
    }

    fn state_params(&self, chain: usize, draw: usize) -> StateSpaceParams {
        let np = self.n_params();
        let v = &self.chains[chain].params[draw * np..(draw + 1) * np];
        StateSpaceParams {
            sigma_y: v[0],
            sigma_mu: v[1],
            sigma_tau: v[2],
            mu0: v[3],
            sigma0: v[4],
            mu_tau0: v[5],
            sigma_tau0: v[6],
            beta: v.get(7).copied().unwrap_or(0.0),
        }
    }
}

/// Split R-hat and ESS for each scalar parameter.
pub fn diagnostics(posterior: &Posterior) -> Result<Diagnostics> {
    let traces: Vec<_> = (0..posterior.n_params()).map(|k| posterior.traces(k)).collect();
    Ok(Diagnostics::compute(&posterior.param_names, &traces)?)
}

/// Samples the posterior, retrying with doubled warmup and iterations when
/// diagnostics or the divergence rate fail. With `require_convergence`
/// off the first attempt is returned as is.
pub fn fit(spec: &ModelSpec) -> Result<(Posterior, Diagnostics)> {
    spec.config.validate()?;
    let density = BstsDensity { spec };
    let run = sample_checked(&density, &spec.config.sampler, &spec.param_names(), |theta| {
        natural(spec, theta)
    })?;
    let diag = run.diagnostics.clone();
    let posterior = assemble(spec, run)?;
    Ok((posterior, diag))
}

/// Output of an accepted sampling attempt.
pub(crate) struct CheckedRun {
    pub out: impactor_mcmc::SampleOutput,
    /// Per chain, `draws × params` natural-scale values.
    pub values: Vec<Vec<f64>>,
    pub diagnostics: Diagnostics,
    pub seed: u64,
    pub attempts: usize,
}

/// Runs NUTS under the retry policy of `sc`; diagnostics are computed on
/// the values returned by `to_natural`.
pub(crate) fn sample_checked<D, F>(
    density: &D,
    sc: &SamplerConfig,
    names: &[String],
    mut to_natural: F,
) -> Result<CheckedRun>
where
    D: impactor_mcmc::LogDensity,
    F: FnMut(&[f64]) -> Vec<f64>,
{
    sc.validate()?;
    let np = names.len();
    let mut last_failure = None;
    for attempt in 0..=sc.max_retries {
        let settings = sc.nuts(attempt);
        let out = impactor_mcmc::sample(density, &settings)?;
        let values: Vec<Vec<f64>> = out
            .chains
            .iter()
            .map(|c| (0..c.len()).flat_map(|i| to_natural(c.draw(i))).collect())
            .collect();
        let traces: Vec<Vec<Vec<f64>>> = (0..np)
            .map(|k| {
                values
                    .iter()
                    .map(|v| v.iter().skip(k).step_by(np).copied().collect())
                    .collect()
            })
            .collect();
        let diag = Diagnostics::compute(names, &traces)?;
        let divergences = out.total_divergences();
        let retained = settings.retained() * settings.chains;
        let accepted = diag.all_converged && divergences as f64 <= sc.max_divergence_rate * retained as f64;
        if accepted || !sc.require_convergence {
            return Ok(CheckedRun {
                out,
                values,
                diagnostics: diag,
                seed: settings.seed,
                attempts: attempt + 1,
            });
        }
        last_failure = Some((diag, divergences));
    }
    let (diag, divergences) = last_failure.expect("at least one attempt");
    Err(Error::NonConvergence {
        diagnostics: Box::new(diag),
        divergences,
    })
}

fn assemble(spec: &ModelSpec, run: CheckedRun) -> Result<Posterior> {
    let CheckedRun {
        out,
        values,
        seed,
        attempts,
        ..
    } = run;
    let view = spec.view();
    let dim = spec.dim();
    let state_seed = derive_seed(seed, "states");
    let chains = out
        .chains
        .into_par_iter()
        .zip(values)
        .enumerate()
        .map(|(c, (chain, params))| {
            let mut rng = ChaCha8Rng::seed_from_u64(state_seed);
            rng.set_stream(c as u64);
            let draws = chain.len();
            let mut cd = ChainDraws {
                params,
                level: Vec::with_capacity(draws * view.y.len()),
                seasonal: Vec::with_capacity(draws * view.y.len()),
                last_state: Vec::with_capacity(draws * view.season),
                stats: chain.stats.clone(),
            };
            for i in 0..draws {
                let theta = chain.draw(i);
                let p = super::params_from_unconstrained(spec, theta);
                let s = kalman::simulate_states(&view, &p, &mut rng)?;
                cd.level.extend(s.level);
                cd.seasonal.extend(s.seasonal);
                cd.last_state.extend(s.last);
            }
            Ok(cd)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Posterior {
        param_names: spec.param_names(),
        draws_per_chain: chains.first().map_or(0, |c| c.params.len() / dim),
        chains,
        train_len: view.y.len(),
        season: view.season,
        seed,
        attempts,
    })
}

/// Counterfactual draws on the original scale for days `[n, N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDraws {
    pub start: usize,
    pub horizon: usize,
    /// `rows × horizon`, row-major.
    pub values: Vec<f64>,
}

impl PredictiveDraws {
    pub fn rows(&self) -> usize {
        self.values.len().checked_div(self.horizon).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.horizon..(i + 1) * self.horizon]
    }

    /// All draws for absolute day `day`.
    pub fn day(&self, day: usize) -> Vec<f64> {
        let j = day - self.start;
        self.values.iter().skip(j).step_by(self.horizon).copied().collect()
    }

    /// Per-day mean of the draws.
    pub fn mean(&self) -> Vec<f64> {
        let rows = self.rows() as f64;
        let mut m = vec![0.0; self.horizon];
        for r in self.values.chunks(self.horizon) {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= rows);
        m
    }
}

/// Simulates the model forward from each retained final state, adding the
/// regression term and observation noise, then maps back to the original
/// scale. `x_future` holds the raw covariate for days `[n, N)`.
pub fn posterior_predict(posterior: &Posterior, spec: &ModelSpec, x_future: Option<&[f64]>) -> Result<PredictiveDraws> {
    let n = spec.windows.train_end;
    let horizon = spec.windows.horizon - n;
    let x = future_covariate(posterior, spec, x_future)?;

    let d = posterior.season;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(posterior.seed, "predict"));
    let mut values = Vec::with_capacity(posterior.total_draws() * horizon);
    let mut state = vec![0.0; d];
    for (c, chain) in posterior.chains.iter().enumerate() {
        for i in 0..posterior.draws_per_chain {
            let p = posterior.state_params(c, i);
            state.copy_from_slice(&chain.last_state[i * d..(i + 1) * d]);
            for j in 0..horizon {
                let signal = kalman::advance(&mut state, &p, &mut rng);
                let reg = x.as_ref().map_or(0.0, |x| p.beta * x[j]);
                let eps: f64 = rng.sample(StandardNormal);
                values.push(spec.y_scaling.inverse(signal + reg + p.sigma_y * eps));
            }
        }
    }
    Ok(PredictiveDraws {
        start: n,
        horizon,
        values,
    })
}

/// Posterior mean forecast for days `[n, N)` on the original scale: the
/// average over draws of the expected signal given each draw's final
/// state. This is the expectation that [`posterior_predict`] estimates by
/// simulation, without the simulation noise.
pub fn forecast_mean(posterior: &Posterior, spec: &ModelSpec, x_future: Option<&[f64]>) -> Result<Vec<f64>> {
    let n = spec.windows.train_end;
    let horizon = spec.windows.horizon - n;
    let x = future_covariate(posterior, spec, x_future)?;
    let d = posterior.season;
    let mut acc = vec![0.0; horizon];
    let mut state = vec![0.0; d];
    for (c, chain) in posterior.chains.iter().enumerate() {
        for i in 0..posterior.draws_per_chain {
            let beta = posterior.state_params(c, i).beta;
            state.copy_from_slice(&chain.last_state[i * d..(i + 1) * d]);
            for (j, a) in acc.iter_mut().enumerate() {
                *a += kalman::advance_mean(&mut state) + x.as_ref().map_or(0.0, |x| beta * x[j]);
            }
        }
    }
    let total = posterior.total_draws() as f64;
    Ok(acc.iter().map(|v| spec.y_scaling.inverse(v / total)).collect())
}

/// Standardized future covariate, checked against the model.
fn future_covariate(posterior: &Posterior, spec: &ModelSpec, x_future: Option<&[f64]>) -> Result<Option<Vec<f64>>> {
    let n = spec.windows.train_end;
    let horizon = spec.windows.horizon - n;
    let x: Option<Vec<f64>> = match (spec.x_scaling, x_future) {
        (None, None) => None,
        (Some(s), Some(x)) => {
            if x.len() < horizon {
                return Err(Error::Length(format!(
                    "future covariate has {} days, prediction needs {horizon}",
                    x.len()
                )));
            }
            Some(x[..horizon].iter().map(|&v| s.forward(v)).collect())
        }
        (Some(_), None) => {
            return Err(Error::Parameter(
                "model has a covariate but no future covariate was given".into(),
            ))
        }
        (None, Some(_)) => return Err(Error::Parameter("future covariate given to a model without one".into())),
    };
    if posterior.season != spec.config.season_length || posterior.train_len != n {
        return Err(Error::Length("posterior does not belong to this model".into()));
    }
    Ok(x)
}

/// Posterior mean of the noiseless in-sample signal on the original scale.
pub fn fitted_mean(posterior: &Posterior, spec: &ModelSpec) -> Vec<f64> {
    let n = posterior.train_len;
    let bi = posterior.param_index("beta");
    let np = posterior.n_params();
    let mut acc = vec![0.0; n];
    for chain in &posterior.chains {
        for i in 0..posterior.draws_per_chain {
            let beta = bi.map_or(0.0, |k| chain.params[i * np + k]);
            for t in 0..n {
                let reg = spec.x.as_ref().map_or(0.0, |x| beta * x[t]);
                acc[t] += chain.level[i * n + t] + chain.seasonal[i * n + t] + reg;
            }
        }
    }
    let total = posterior.total_draws() as f64;
    acc.iter().map(|v| spec.y_scaling.inverse(v / total)).collect()
}

/// Writes `chain,draw,parameter,value`, one row per draw per scalar
/// parameter; with `states`, level and seasonal paths follow as
/// `mu[t]` and `tau[t]`.
pub fn write_draws_csv(posterior: &Posterior, path: &Path, states: bool) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "chain,draw,parameter,value").map_err(io)?;
    let np = posterior.n_params();
    let n = posterior.train_len;
    for (c, chain) in posterior.chains.iter().enumerate() {
        for i in 0..posterior.draws_per_chain {
            for (k, name) in posterior.param_names.iter().enumerate() {
                writeln!(w, "{c},{i},{name},{}", chain.params[i * np + k]).map_err(io)?;
            }
            if states {
                for t in 0..n {
                    writeln!(w, "{c},{i},mu[{t}],{}", chain.level[i * n + t]).map_err(io)?;
                }
                for t in 0..n {
                    writeln!(w, "{c},{i},tau[{t}],{}", chain.seasonal[i * n + t]).map_err(io)?;
                }
            }
        }
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    pub q975: f64,
    pub rhat: f64,
    pub ess_bulk: f64,
    pub ess_tail: f64,
}

pub fn summarize(posterior: &Posterior, diag: &Diagnostics) -> Vec<ParamSummary> {
    posterior
        .param_names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let draws = posterior.pooled(k);
            let q = stats::quantiles(&draws, &[0.025, 0.05, 0.5, 0.95, 0.975]);
            let pd = diag.get(name);
            ParamSummary {
                name: name.clone(),
                mean: stats::mean(&draws),
                sd: stats::sample_sd(&draws),
                q025: q[0],
                q05: q[1],
                q50: q[2],
                q95: q[3],
                q975: q[4],
                rhat: pd.map_or(f64::NAN, |p| p.rhat),
                ess_bulk: pd.map_or(f64::NAN, |p| p.ess_bulk),
                ess_tail: pd.map_or(f64::NAN, |p| p.ess_tail),
            }
        })
        .collect()
}

/// JSON object with per-parameter summaries plus sampler totals.
pub fn write_summary_json(posterior: &Posterior, diag: &Diagnostics, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Doc<'a> {
        parameters: Vec<ParamSummary>,
        chains: usize,
        draws_per_chain: usize,
        divergences: usize,
        attempts: usize,
        max_rhat: f64,
        min_ess: f64,
        all_converged: bool,
        scale: &'a str,
    }
    let doc = Doc {
        parameters: summarize(posterior, diag),
        chains: posterior.chains.len(),
        draws_per_chain: posterior.draws_per_chain,
        divergences: posterior.divergences(),
        attempts: posterior.attempts,
        max_rhat: diag.max_rhat,
        min_ess: diag.min_ess,
        all_converged: diag.all_converged,
        scale: "standardized",
    };
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(file, &doc)?;
    Ok(())
}
