//! Kalman filtering for the local-level plus seasonal-dummy model with an
//! optional static regression term.
//!
//! State at day t is `(μ_t, τ_t, τ_{t−1}, …, τ_{t−S+2})`, dimension `S`.
//! The first `S − 1` seasonal values are drawn independently around
//! `μ_τ0`; afterwards `τ_{t+1} = −(τ_t + … + τ_{t−S+2}) + η`.
//! The transition is applied through its structure (shift and negated sum)
//! rather than as a dense matrix.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Model parameters on the scale of the (possibly standardized) data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateSpaceParams {
    pub sigma_y: f64,
    pub sigma_mu: f64,
    pub sigma_tau: f64,
    pub mu0: f64,
    pub sigma0: f64,
    pub mu_tau0: f64,
    pub sigma_tau0: f64,
    pub beta: f64,
}

impl StateSpaceParams {
    pub fn validate(&self) -> Result<()> {
        let scales = [
            ("sigma_y", self.sigma_y),
            ("sigma_mu", self.sigma_mu),
            ("sigma_tau", self.sigma_tau),
            ("sigma0", self.sigma0),
            ("sigma_tau0", self.sigma_tau0),
        ];
        for (name, s) in scales {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Parameter(format!("{name} = {s} must be positive and finite")));
            }
        }
        for (name, v) in [("mu0", self.mu0), ("mu_tau0", self.mu_tau0), ("beta", self.beta)] {
            if !v.is_finite() {
                return Err(Error::Parameter(format!("{name} = {v} must be finite")));
            }
        }
        Ok(())
    }
}

/// Observations (missing allowed), optional covariate of the same length,
/// and the season length.
#[derive(Debug, Clone, Copy)]
pub struct SeriesView<'a> {
    pub y: &'a [Option<f64>],
    pub x: Option<&'a [f64]>,
    pub season: usize,
}

impl SeriesView<'_> {
    fn dim(&self) -> usize {
        self.season
    }

    fn x_at(&self, t: usize) -> f64 {
        self.x.map_or(0.0, |x| x[t])
    }

    fn check(&self) -> Result<()> {
        if self.season < 2 {
            return Err(Error::Parameter(format!("season length {} < 2", self.season)));
        }
        if let Some(x) = self.x {
            if x.len() < self.y.len() {
                return Err(Error::Length(format!(
                    "covariate length {} < series length {}",
                    x.len(),
                    self.y.len()
                )));
            }
        }
        Ok(())
    }
}

/// Derivatives of the log-likelihood with respect to the variances and
/// location parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Scores {
    pub var_y: f64,
    pub var_mu: f64,
    pub var_tau: f64,
    pub var0: f64,
    pub var_tau0: f64,
    pub mu0: f64,
    pub mu_tau0: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    /// Next seasonal value is a fresh initial draw.
    Fill,
    /// Next seasonal value follows the zero-sum recursion.
    Recur,
}

fn step_kind(t: usize, season: usize) -> Step {
    if t + 2 < season {
        Step::Fill
    } else {
        Step::Recur
    }
}

/// `T v`.
fn apply_t(v: &[f64], kind: Step, out: &mut [f64]) {
    let d = v.len();
    out[0] = v[0];
    out[1] = match kind {
        Step::Fill => 0.0,
        Step::Recur => -v[1..].iter().sum::<f64>(),
    };
    out[2..d].copy_from_slice(&v[1..d - 1]);
}

/// `T′ r`.
fn apply_tt(r: &[f64], kind: Step, out: &mut [f64]) {
    let d = r.len();
    out[0] = r[0];
    let head = match kind {
        Step::Fill => 0.0,
        Step::Recur => -r[1],
    };
    for j in 1..d {
        out[j] = head + if j + 1 < d { r[j + 1] } else { 0.0 };
    }
}

/// `m ← T m T′`; `tmp` is scratch of the same size.
fn tpt(m: &mut [f64], tmp: &mut [f64], d: usize, kind: Step) {
    tmp[..d].copy_from_slice(&m[..d]);
    match kind {
        Step::Fill => tmp[d..2 * d].iter_mut().for_each(|v| *v = 0.0),
        Step::Recur => {
            for j in 0..d {
                tmp[d + j] = -(1..d).map(|k| m[k * d + j]).sum::<f64>();
            }
        }
    }
    tmp[2 * d..].copy_from_slice(&m[d..(d - 1) * d]);
    for i in 0..d {
        let row = &tmp[i * d..(i + 1) * d];
        let out = &mut m[i * d..(i + 1) * d];
        out[0] = row[0];
        out[1] = match kind {
            Step::Fill => 0.0,
            Step::Recur => -row[1..].iter().sum::<f64>(),
        };
        out[2..].copy_from_slice(&row[1..d - 1]);
    }
}

/// `m ← T′ m T`; `tmp` is scratch of the same size.
fn ttnt(m: &mut [f64], tmp: &mut [f64], d: usize, kind: Step) {
    for i in 0..d {
        for j in 0..d {
            tmp[i * d + j] = if i == 0 {
                m[j]
            } else {
                let head = match kind {
                    Step::Fill => 0.0,
                    Step::Recur => -m[d + j],
                };
                head + if i + 1 < d { m[(i + 1) * d + j] } else { 0.0 }
            };
        }
    }
    for r in 0..d {
        let row = &tmp[r * d..(r + 1) * d];
        let out = &mut m[r * d..(r + 1) * d];
        apply_tt(row, kind, out);
    }
}

fn initial_state(p: &StateSpaceParams, d: usize, with_means: bool) -> (Vec<f64>, Vec<f64>) {
    let mut a = vec![0.0; d];
    if with_means {
        a[0] = p.mu0;
        a[1] = p.mu_tau0;
    }
    let mut cov = vec![0.0; d * d];
    cov[0] = p.sigma0 * p.sigma0;
    cov[d + 1] = p.sigma_tau0 * p.sigma_tau0;
    (a, cov)
}

struct FilterTrace {
    loglik: f64,
    /// Innovation, variance, and gain per day; `f = 0` marks a missing day.
    v: Vec<f64>,
    f: Vec<f64>,
    k: Vec<f64>,
    /// Predicted state means and covariances, kept only for smoothing.
    a: Vec<f64>,
    p: Vec<f64>,
}

fn filter(
    s: &SeriesView<'_>,
    params: &StateSpaceParams,
    y: &mut dyn FnMut(usize) -> Option<f64>,
    with_means: bool,
    keep_states: bool,
) -> FilterTrace {
    let d = s.dim();
    let n = s.y.len();
    let h = params.sigma_y * params.sigma_y;
    let q_mu = params.sigma_mu * params.sigma_mu;
    let q_tau = params.sigma_tau * params.sigma_tau;
    let q_tau0 = params.sigma_tau0 * params.sigma_tau0;
    let beta = if with_means { params.beta } else { 0.0 };

    let (mut a, mut cov) = initial_state(params, d, with_means);
    let mut tr = FilterTrace {
        loglik: 0.0,
        v: vec![0.0; n],
        f: vec![0.0; n],
        k: vec![0.0; n * d],
        a: Vec::new(),
        p: Vec::new(),
    };
    if keep_states {
        tr.a.reserve(n * d);
        tr.p.reserve(n * d * d);
    }
    let mut pz = vec![0.0; d];
    let mut gain = vec![0.0; d];
    let mut next = vec![0.0; d];
    let mut scratch = vec![0.0; d * d];

    for t in 0..n {
        if keep_states {
            tr.a.extend_from_slice(&a);
            tr.p.extend_from_slice(&cov);
        }
        let kind = step_kind(t, s.season);
        if let Some(obs) = y(t) {
            for i in 0..d {
                pz[i] = cov[i * d] + cov[i * d + 1];
            }
            let f = pz[0] + pz[1] + h;
            let v = obs - a[0] - a[1] - beta * s.x_at(t);
            tr.loglik -= 0.5 * (LN_2PI + f.ln() + v * v / f);
            tr.v[t] = v;
            tr.f[t] = f;
            // filtered moments, then predict
            for i in 0..d {
                a[i] += pz[i] * v / f;
            }
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] -= pz[i] * pz[j] / f;
                }
            }
            apply_t(&pz, kind, &mut gain);
            for i in 0..d {
                tr.k[t * d + i] = gain[i] / f;
            }
        }
        apply_t(&a, kind, &mut next);
        a.copy_from_slice(&next);
        tpt(&mut cov, &mut scratch, d, kind);
        cov[0] += q_mu;
        match kind {
            Step::Fill => {
                if with_means {
                    a[1] += params.mu_tau0;
                }
                cov[d + 1] += q_tau0;
            }
            Step::Recur => cov[d + 1] += q_tau,
        }
    }
    tr
}

/// Exact Gaussian log-likelihood of the observed days.
pub fn log_likelihood(s: &SeriesView<'_>, params: &StateSpaceParams) -> Result<f64> {
    s.check()?;
    params.validate()?;
    let y = s.y;
    Ok(filter(s, params, &mut |t| y[t], true, false).loglik)
}

/// Log-likelihood and its exact derivatives, obtained from one forward
/// filter pass and one backward smoothing pass.
pub fn log_likelihood_scores(s: &SeriesView<'_>, params: &StateSpaceParams) -> Result<(f64, Scores)> {
    s.check()?;
    params.validate()?;
    let y = s.y;
    let tr = filter(s, params, &mut |t| y[t], true, false);
    let d = s.dim();
    let n = y.len();

    let mut sc = Scores::default();
    let mut r = vec![0.0; d];
    let mut nn = vec![0.0; d * d];
    let mut buf = vec![0.0; d];
    let mut nk = vec![0.0; d];
    let mut w = vec![0.0; d];
    let mut scratch = vec![0.0; d * d];

    for t in (0..n).rev() {
        let kind = step_kind(t, s.season);
        sc.var_mu += 0.5 * (r[0] * r[0] - nn[0]);
        match kind {
            Step::Fill => {
                sc.var_tau0 += 0.5 * (r[1] * r[1] - nn[d + 1]);
                sc.mu_tau0 += r[1];
            }
            Step::Recur => sc.var_tau += 0.5 * (r[1] * r[1] - nn[d + 1]),
        }
        let f = tr.f[t];
        if f > 0.0 {
            let k = &tr.k[t * d..(t + 1) * d];
            for i in 0..d {
                nk[i] = (0..d).map(|j| nn[i * d + j] * k[j]).sum();
            }
            let knk: f64 = k.iter().zip(&nk).map(|(a, b)| a * b).sum();
            let kr: f64 = k.iter().zip(&r).map(|(a, b)| a * b).sum();
            let u = tr.v[t] / f - kr;
            let dd = 1.0 / f + knk;
            sc.var_y += 0.5 * (u * u - dd);
            sc.beta += u * s.x_at(t);

            apply_tt(&r, kind, &mut buf);
            r.copy_from_slice(&buf);
            r[0] += u;
            r[1] += u;

            apply_tt(&nk, kind, &mut w);
            ttnt(&mut nn, &mut scratch, d, kind);
            // L′NL + Z′Z/F; Z selects the first two state slots
            let zz = knk + 1.0 / f;
            for i in 0..d {
                nn[i * d] -= w[i];
                nn[i * d + 1] -= w[i];
                nn[i] -= w[i];
                nn[d + i] -= w[i];
            }
            for i in 0..2 {
                nn[i * d] += zz;
                nn[i * d + 1] += zz;
            }
        } else {
            apply_tt(&r, kind, &mut buf);
            r.copy_from_slice(&buf);
            ttnt(&mut nn, &mut scratch, d, kind);
        }
    }
    sc.mu0 = r[0];
    sc.var0 = 0.5 * (r[0] * r[0] - nn[0]);
    sc.mu_tau0 += r[1];
    sc.var_tau0 += 0.5 * (r[1] * r[1] - nn[d + 1]);
    Ok((tr.loglik, sc))
}

/// One joint draw of the latent path given the observations.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDraw {
    pub level: Vec<f64>,
    pub seasonal: Vec<f64>,
    /// Full state vector on the last observed day.
    pub last: Vec<f64>,
}

/// Draws the states from their conditional distribution by mean-corrected
/// simulation smoothing: simulate from the model, then shift the simulated
/// path by the smoothed mean of the residual data.
pub fn simulate_states<R: Rng + ?Sized>(
    s: &SeriesView<'_>,
    params: &StateSpaceParams,
    rng: &mut R,
) -> Result<StateDraw> {
    s.check()?;
    params.validate()?;
    let d = s.dim();
    let n = s.y.len();

    let mut path = vec![0.0; n * d];
    let mut ystar = vec![None; n];
    let mut alpha = vec![0.0; d];
    alpha[0] = params.mu0 + params.sigma0 * rng.sample::<f64, _>(StandardNormal);
    alpha[1] = params.mu_tau0 + params.sigma_tau0 * rng.sample::<f64, _>(StandardNormal);
    let mut next = vec![0.0; d];
    for t in 0..n {
        path[t * d..(t + 1) * d].copy_from_slice(&alpha);
        let eps: f64 = rng.sample(StandardNormal);
        if let Some(obs) = s.y[t] {
            let sim = alpha[0] + alpha[1] + params.beta * s.x_at(t) + params.sigma_y * eps;
            ystar[t] = Some(obs - sim);
        }
        let kind = step_kind(t, s.season);
        apply_t(&alpha, kind, &mut next);
        alpha.copy_from_slice(&next);
        alpha[0] += params.sigma_mu * rng.sample::<f64, _>(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        match kind {
            Step::Fill => alpha[1] += params.mu_tau0 + params.sigma_tau0 * z,
            Step::Recur => alpha[1] += params.sigma_tau * z,
        }
    }

    let tr = filter(s, params, &mut |t| ystar[t], false, true);
    let mut r = vec![0.0; d];
    let mut buf = vec![0.0; d];
    for t in (0..n).rev() {
        let kind = step_kind(t, s.season);
        let f = tr.f[t];
        apply_tt(&r, kind, &mut buf);
        if f > 0.0 {
            let k = &tr.k[t * d..(t + 1) * d];
            let kr: f64 = k.iter().zip(&r).map(|(a, b)| a * b).sum();
            let u = tr.v[t] / f - kr;
            buf[0] += u;
            buf[1] += u;
        }
        r.copy_from_slice(&buf);
        let p = &tr.p[t * d * d..(t + 1) * d * d];
        for i in 0..d {
            let smooth = tr.a[t * d + i] + (0..d).map(|j| p[i * d + j] * r[j]).sum::<f64>();
            path[t * d + i] += smooth;
        }
    }

    Ok(StateDraw {
        level: (0..n).map(|t| path[t * d]).collect(),
        seasonal: (0..n).map(|t| path[t * d + 1]).collect(),
        last: path[(n - 1) * d..].to_vec(),
    })
}

/// Advances a state one day past the seasonal warm-up and returns the
/// noiseless signal `μ + τ` of the new state.
pub fn advance<R: Rng + ?Sized>(state: &mut [f64], params: &StateSpaceParams, rng: &mut R) -> f64 {
    let d = state.len();
    let mut next = vec![0.0; d];
    apply_t(state, Step::Recur, &mut next);
    next[0] += params.sigma_mu * rng.sample::<f64, _>(StandardNormal);
    next[1] += params.sigma_tau * rng.sample::<f64, _>(StandardNormal);
    state.copy_from_slice(&next);
    state[0] + state[1]
}

/// [`advance`] with the state disturbances set to their mean of zero.
pub fn advance_mean(state: &mut [f64]) -> f64 {
    let mut next = vec![0.0; state.len()];
    apply_t(state, Step::Recur, &mut next);
    state.copy_from_slice(&next);
    state[0] + state[1]
}
