//! Hierarchical model of cumulative impacts:
//! `φ_i ~ N(X_i β + δ_{r(i)} + γ_{c(i)}, σ²)`, `δ_r ~ N(0, τ_δ²)`,
//! `γ_c ~ N(0, τ_γ²)`, Cauchy(0, s) on β and half-Cauchy(0, s) on the
//! three scales.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use impactor_mcmc::{Diagnostics, LogDensity, LogDensityError};
use nalgebra::{SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bsts::{sample_checked, SamplerConfig, Scaling};
use crate::error::{Error, Result};
use crate::panel::{mean_before, Category, Panel};
use crate::stats::{self, cauchy_logpdf, derive_seed, half_cauchy_logpdf};

pub const FEATURE_NAMES: [&str; 3] = ["intercept", "mean_visits", "damage_rate"];
pub const N_REGIONS: usize = 3;
pub const N_CATEGORIES: usize = 9;
const N_BETA: usize = FEATURE_NAMES.len();
const DIM: usize = N_BETA + N_REGIONS + N_CATEGORIES + 3;

/// Region labels in index order.
pub fn region_labels() -> [&'static str; N_REGIONS] {
    ["SanJuan", "Metro", "Rural"]
}

/// Parameter names in posterior column order.
pub fn param_names() -> Vec<String> {
    let mut names: Vec<String> = FEATURE_NAMES.iter().map(|f| format!("beta[{f}]")).collect();
    names.extend(region_labels().iter().map(|r| format!("delta[{r}]")));
    names.extend(Category::ALL.iter().map(|c| format!("gamma[{}]", c.label())));
    names.extend(["sigma", "tau_delta", "tau_gamma"].map(String::from));
    names
}

/// Design rows sorted by entity id, feature columns standardized.
#[derive(Debug, Clone, PartialEq)]
pub struct HbmData {
    pub entity_ids: Vec<String>,
    pub phi: Vec<f64>,
    /// `[1, mean visits, damage rate]`, the last two standardized.
    pub x: Vec<[f64; N_BETA]>,
    pub region_idx: Vec<usize>,
    pub category_idx: Vec<usize>,
    /// Standardization of the mean-visits and damage-rate columns.
    pub scalings: [Scaling; 2],
}

/// One entity before standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct HbmRow {
    pub entity_id: String,
    pub phi: f64,
    pub mean_visits: f64,
    pub damage_rate: f64,
    pub region: usize,
    pub category: usize,
}

impl HbmData {
    /// Sorts by entity id and standardizes the two feature columns with
    /// their mean and sample standard deviation (scale 1 when constant).
    pub fn from_rows(mut rows: Vec<HbmRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InsufficientData("no rows for the hierarchical model".into()));
        }
        rows.sort_by(|a, b| a.entity_id.cmp(&b.entity_id));
        if let Some(w) = rows.windows(2).find(|w| w[0].entity_id == w[1].entity_id) {
            return Err(Error::entity(&w[0].entity_id, "appears twice in the design"));
        }
        for r in &rows {
            if r.region >= N_REGIONS || r.category >= N_CATEGORIES {
                return Err(Error::entity(&r.entity_id, "region or category index out of range"));
            }
            if ![r.phi, r.mean_visits, r.damage_rate].iter().all(|v| v.is_finite()) {
                return Err(Error::entity(&r.entity_id, "non-finite value in design row"));
            }
        }
        let col = |f: fn(&HbmRow) -> f64| {
            let v: Vec<f64> = rows.iter().map(f).collect();
            let sd = stats::sample_sd(&v);
            Scaling {
                center: stats::mean(&v),
                scale: if sd > 0.0 { sd } else { 1.0 },
            }
        };
        let scalings = [col(|r| r.mean_visits), col(|r| r.damage_rate)];
        Ok(HbmData {
            x: rows
                .iter()
                .map(|r| {
                    [
                        1.0,
                        scalings[0].forward(r.mean_visits),
                        scalings[1].forward(r.damage_rate),
                    ]
                })
                .collect(),
            entity_ids: rows.iter().map(|r| r.entity_id.clone()).collect(),
            phi: rows.iter().map(|r| r.phi).collect(),
            region_idx: rows.iter().map(|r| r.region).collect(),
            category_idx: rows.iter().map(|r| r.category).collect(),
            scalings,
        })
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    /// Linear predictor of row `i` for natural-scale values `v` laid out
    /// as in [`param_names`].
    pub fn mean_of(&self, i: usize, v: &[f64]) -> f64 {
        let xb: f64 = self.x[i].iter().zip(&v[..N_BETA]).map(|(a, b)| a * b).sum();
        xb + v[N_BETA + self.region_idx[i]] + v[N_BETA + N_REGIONS + self.category_idx[i]]
    }

    /// Groups holding fewer than two rows, as `(kind, label)`.
    pub fn sparse_groups(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let labels = region_labels();
        for r in 0..N_REGIONS {
            let k = self.region_idx.iter().filter(|&&v| v == r).count();
            if k == 1 {
                out.push(("region".into(), labels[r].into()));
            }
        }
        for c in Category::ALL {
            let k = self.category_idx.iter().filter(|&&v| v == c.index()).count();
            if k == 1 {
                out.push(("category".into(), c.label().into()));
            }
        }
        out
    }
}

/// Joins terminal impacts with panel metadata. Mean visits are taken over
/// the training window.
pub fn build_design(impacts: &BTreeMap<String, f64>, panel: &Panel) -> Result<HbmData> {
    let rows = impacts
        .iter()
        .map(|(id, &phi)| {
            let meta = panel
                .meta
                .get(id)
                .ok_or_else(|| Error::entity(id, "has an impact but no metadata"))?;
            let region = meta
                .region
                .index()
                .ok_or_else(|| Error::entity(id, format!("region {} is not a target region", meta.region.label())))?;
            let damage_rate = meta
                .damage_rate
                .ok_or_else(|| Error::entity(id, "missing damage_rate"))?;
            let series = &panel.series[id];
            Ok(HbmRow {
                entity_id: id.clone(),
                phi,
                mean_visits: mean_before(series, panel.windows.train_end)?,
                damage_rate,
                region,
                category: meta.category.index(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    HbmData::from_rows(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HbmConfig {
    pub prior_scale: f64,
    pub sampler: SamplerConfig,
}

impl Default for HbmConfig {
    fn default() -> Self {
        Self {
            prior_scale: 2.5,
            sampler: SamplerConfig::default(),
        }
    }
}

impl HbmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.prior_scale.is_finite() && self.prior_scale > 0.0) {
            return Err(Error::Config(format!(
                "hbm prior_scale = {} must be positive",
                self.prior_scale
            )));
        }
        self.sampler.validate()
    }
}

const N_EFFECTS: usize = N_REGIONS + N_CATEGORIES;
const LOG_SIGMA: usize = N_BETA;
/// Sampled coordinates: `β (3), ln σ, ln τ_δ, ln τ_γ`.
const SAMPLED: usize = N_BETA + 3;

type Effects = SMatrix<f64, N_EFFECTS, N_EFFECTS>;
type EffectVec = SVector<f64, N_EFFECTS>;
type Coefs = SVector<f64, N_BETA>;

/// Log posterior with the group effects integrated out.
///
/// Given `β, σ, τ` the vector `b = (δ, γ)` is Gaussian, so
/// `φ ~ N(Xβ, σ²I + Z D Zᵀ)` with `D = diag(τ_δ², τ_γ²)`. Everything is
/// evaluated through the 12 × 12 matrix `A = D⁻¹ + ZᵀZ / σ²` and
/// sufficient statistics, and `b` is drawn afterwards from its exact
/// conditional `N(A⁻¹Zᵀr / σ², A⁻¹)`.
pub struct HbmDensity {
    prior_scale: f64,
    n: f64,
    phi_phi: f64,
    x_phi: Coefs,
    x_x: SMatrix<f64, N_BETA, N_BETA>,
    z_phi: EffectVec,
    z_x: SMatrix<f64, N_EFFECTS, N_BETA>,
    z_z: Effects,
}

/// Quantities shared by the density and the effect draws.
struct Conditional {
    chol: nalgebra::Cholesky<f64, nalgebra::Const<N_EFFECTS>>,
    /// `A⁻¹ Zᵀr`.
    m: EffectVec,
    r_r: f64,
    u: EffectVec,
    x_r: Coefs,
}

impl HbmDensity {
    pub fn new(data: &HbmData, prior_scale: f64) -> Self {
        let mut d = HbmDensity {
            prior_scale,
            n: data.len() as f64,
            phi_phi: 0.0,
            x_phi: Coefs::zeros(),
            x_x: SMatrix::zeros(),
            z_phi: EffectVec::zeros(),
            z_x: SMatrix::zeros(),
            z_z: Effects::zeros(),
        };
        for i in 0..data.len() {
            let x = Coefs::from(data.x[i]);
            let phi = data.phi[i];
            let cols = [data.region_idx[i], N_REGIONS + data.category_idx[i]];
            d.phi_phi += phi * phi;
            d.x_phi += x * phi;
            d.x_x += x * x.transpose();
            for &a in &cols {
                d.z_phi[a] += phi;
                for k in 0..N_BETA {
                    d.z_x[(a, k)] += x[k];
                }
                for &b in &cols {
                    d.z_z[(a, b)] += 1.0;
                }
            }
        }
        d
    }

    fn conditional(&self, beta: &Coefs, var: f64, tau_d: f64, tau_g: f64) -> Option<Conditional> {
        let mut a = self.z_z / var;
        for j in 0..N_EFFECTS {
            let tau = if j < N_REGIONS { tau_d } else { tau_g };
            a[(j, j)] += 1.0 / (tau * tau);
        }
        let chol = a.cholesky()?;
        let u = self.z_phi - self.z_x * beta;
        let m = chol.solve(&u);
        let r_r = self.phi_phi - 2.0 * beta.dot(&self.x_phi) + beta.dot(&(self.x_x * beta));
        let x_r = self.x_phi - self.x_x * beta;
        Some(Conditional { chol, m, r_r, u, x_r })
    }

    pub fn log_posterior(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let s = self.prior_scale;
        let s2 = s * s;
        let beta = Coefs::from_column_slice(&theta[..N_BETA]);
        let sigma = theta[LOG_SIGMA].exp();
        let tau_d = theta[LOG_SIGMA + 1].exp();
        let tau_g = theta[LOG_SIGMA + 2].exp();
        let var = sigma * sigma;
        let Some(c) = self.conditional(&beta, var, tau_d, tau_g) else {
            return f64::NAN;
        };
        let (v2, v3, v4) = (var * var, var * var * var, var * var * var * var);

        let log_det_a: f64 = 2.0 * c.chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_det_d = 2.0 * (N_REGIONS as f64 * tau_d.ln() + N_CATEGORIES as f64 * tau_g.ln());
        let um = c.u.dot(&c.m);
        let quad = c.r_r / var - um / v2;
        let mut lp = -0.5 * (log_det_a + log_det_d + self.n * var.ln() + quad);

        let dbeta = c.x_r / var - self.z_x.transpose() * c.m / v2;
        let a_inv = c.chol.inverse();
        let g_m = self.z_z * c.m;
        let w_w = c.r_r / v2 - 2.0 * um / v3 + c.m.dot(&g_m) / v4;
        let trace_sigma_inv = self.n / var - (a_inv * self.z_z).trace() / v2;
        let d_var = -0.5 * trace_sigma_inv + 0.5 * w_w;
        let z_w = c.u / var - g_m / v2;
        let gag = self.z_z * a_inv * self.z_z;
        let (mut d_tau_d, mut d_tau_g) = (0.0, 0.0);
        for j in 0..N_EFFECTS {
            let m_jj = self.z_z[(j, j)] / var - gag[(j, j)] / v2;
            let term = 0.5 * (z_w[j] * z_w[j] - m_jj);
            if j < N_REGIONS {
                d_tau_d += term;
            } else {
                d_tau_g += term;
            }
        }

        for k in 0..N_BETA {
            let b = theta[k];
            lp += cauchy_logpdf(b, s);
            grad[k] = dbeta[k] - 2.0 * b / (s2 + b * b);
        }
        let scales = [(sigma, d_var), (tau_d, d_tau_d), (tau_g, d_tau_g)];
        for (k, (scale, d_sq)) in scales.into_iter().enumerate() {
            let slot = LOG_SIGMA + k;
            let sq = scale * scale;
            lp += half_cauchy_logpdf(scale, s) + theta[slot];
            grad[slot] = 2.0 * sq * d_sq + 1.0 - 2.0 * sq / (s2 + sq);
        }
        lp
    }

    /// `β, δ, γ, σ, τ_δ, τ_γ` with the group effects drawn from their
    /// conditional given the sampled coordinates.
    pub fn natural<R: Rng>(&self, theta: &[f64], rng: &mut R) -> Vec<f64> {
        let beta = Coefs::from_column_slice(&theta[..N_BETA]);
        let scales: Vec<f64> = theta[LOG_SIGMA..].iter().map(|l| l.exp()).collect();
        let var = scales[0] * scales[0];
        let c = self
            .conditional(&beta, var, scales[1], scales[2])
            .expect("accepted draws have a finite density");
        let z = EffectVec::from_fn(|_, _| rng.sample(StandardNormal));
        // A = L Lᵀ, so L⁻ᵀ z has covariance A⁻¹
        let noise = c
            .chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .expect("Cholesky factor is non-singular");
        let b = c.m / var + noise;
        let mut v = Vec::with_capacity(DIM);
        v.extend_from_slice(&theta[..N_BETA]);
        v.extend(b.iter());
        v.extend(scales);
        v
    }
}

impl LogDensity for HbmDensity {
    fn dim(&self) -> usize {
        SAMPLED
    }

    fn logp_grad(&self, position: &[f64], grad: &mut [f64]) -> std::result::Result<f64, LogDensityError> {
        let lp = self.log_posterior(position, grad);
        if lp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            Ok(lp)
        } else {
            Err(LogDensityError("non-finite hierarchical log posterior".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HbmPosterior {
    pub param_names: Vec<String>,
    /// Per chain, `draws × params` natural-scale values.
    pub chains: Vec<Vec<f64>>,
    pub draws_per_chain: usize,
    pub scalings: [Scaling; 2],
    pub divergences: usize,
    pub seed: u64,
    pub attempts: usize,
    pub diagnostics: Option<Diagnostics>,
}

impl HbmPosterior {
    pub fn n_params(&self) -> usize {
        self.param_names.len()
    }

    pub fn traces(&self, k: usize) -> Vec<Vec<f64>> {
        let np = self.n_params();
        self.chains
            .iter()
            .map(|c| c.iter().skip(k).step_by(np).copied().collect())
            .collect()
    }

    pub fn pooled(&self, k: usize) -> Vec<f64> {
        self.traces(k).concat()
    }

    pub fn draw(&self, chain: usize, i: usize) -> &[f64] {
        let np = self.n_params();
        &self.chains[chain][i * np..(i + 1) * np]
    }

    /// Per-draw coefficients on the original feature units.
    pub fn natural_coefficients(&self) -> Vec<Vec<f64>> {
        let [s1, s2] = self.scalings;
        let mut cols = vec![Vec::new(); N_BETA];
        for c in 0..self.chains.len() {
            for i in 0..self.draws_per_chain {
                let v = self.draw(c, i);
                let (b1, b2) = (v[1] / s1.scale, v[2] / s2.scale);
                cols[0].push(v[0] - b1 * s1.center - b2 * s2.center);
                cols[1].push(b1);
                cols[2].push(b2);
            }
        }
        cols
    }
}

/// Fits the model. Rows are put in entity-id order first, so any
/// permutation of the input gives identical draws.
pub fn fit_hbm(data: &HbmData, config: &HbmConfig) -> Result<HbmPosterior> {
    config.validate()?;
    let density = HbmDensity::new(&canonical(data), config.prior_scale);
    let names = param_names();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.sampler.seed, "effects"));
    let run = sample_checked(&density, &config.sampler, &names, |theta| {
        density.natural(theta, &mut rng)
    })?;
    Ok(HbmPosterior {
        draws_per_chain: run.out.chains.first().map_or(0, |c| c.len()),
        param_names: names,
        chains: run.values,
        scalings: data.scalings,
        divergences: run.out.total_divergences(),
        seed: run.seed,
        attempts: run.attempts,
        diagnostics: Some(run.diagnostics),
    })
}

fn canonical(data: &HbmData) -> HbmData {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data.entity_ids[a].cmp(&data.entity_ids[b]));
    HbmData {
        entity_ids: order.iter().map(|&i| data.entity_ids[i].clone()).collect(),
        phi: order.iter().map(|&i| data.phi[i]).collect(),
        x: order.iter().map(|&i| data.x[i]).collect(),
        region_idx: order.iter().map(|&i| data.region_idx[i]).collect(),
        category_idx: order.iter().map(|&i| data.category_idx[i]).collect(),
        scalings: data.scalings,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HbmSummaryRow {
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q975: f64,
    /// The central 95% interval excludes zero.
    pub significant: bool,
    pub rhat: f64,
    pub ess_bulk: f64,
}

impl HbmSummaryRow {
    pub fn of(parameter: &str, draws: &[f64]) -> Self {
        let q = stats::quantiles(draws, &[0.025, 0.25, 0.5, 0.75, 0.975]);
        HbmSummaryRow {
            parameter: parameter.to_string(),
            mean: stats::mean(draws),
            sd: stats::sample_sd(draws),
            q025: q[0],
            q25: q[1],
            q50: q[2],
            q75: q[3],
            q975: q[4],
            significant: q[0] > 0.0 || q[4] < 0.0,
            rhat: f64::NAN,
            ess_bulk: f64::NAN,
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.q025 <= value && value <= self.q975
    }
}

pub fn summarize(post: &HbmPosterior) -> Vec<HbmSummaryRow> {
    post.param_names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let mut row = HbmSummaryRow::of(name, &post.pooled(k));
            if let Some(p) = post.diagnostics.as_ref().and_then(|d| d.get(name)) {
                row.rhat = p.rhat;
                row.ess_bulk = p.ess_bulk;
            }
            row
        })
        .collect()
}

/// Coefficient summaries on the original feature units.
pub fn summarize_natural(post: &HbmPosterior) -> Vec<HbmSummaryRow> {
    post.natural_coefficients()
        .iter()
        .zip(FEATURE_NAMES)
        .map(|(d, f)| HbmSummaryRow::of(&format!("beta[{f}]"), d))
        .collect()
}

pub fn write_summary_csv(rows: &[HbmSummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `chain,draw,parameter,value`.
pub fn write_draws_csv(post: &HbmPosterior, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "chain,draw,parameter,value").map_err(io)?;
    for c in 0..post.chains.len() {
        for i in 0..post.draws_per_chain {
            for (name, v) in post.param_names.iter().zip(post.draw(c, i)) {
                writeln!(w, "{c},{i},{name},{v}").map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}
