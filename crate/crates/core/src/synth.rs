//! Synthetic panels with known latent states, shared dated anomalies and
//! injected shocks, plus data for the hierarchical model.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hbm::{HbmData, HbmRow, N_CATEGORIES, N_REGIONS};
use crate::panel::{BusinessMeta, Category, Panel, PanelRole, Region, StudyWindows, VisitSeries};
use crate::stats::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShockKind {
    Step,
    ExpRecovery,
    Overshoot,
}

/// Multiplier `s_t` applied to the counterfactual after `onset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShockProfile {
    pub kind: ShockKind,
    /// Fraction of the counterfactual gained (positive) or lost.
    pub magnitude: f64,
    /// Recovery constant λ in days.
    pub recovery: f64,
    pub onset: usize,
}

impl ShockProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.recovery > 0.0 && self.recovery.is_finite()) {
            return Err(Error::Parameter(format!(
                "recovery constant {} must be positive",
                self.recovery
            )));
        }
        if !self.magnitude.is_finite() {
            return Err(Error::Parameter("shock magnitude must be finite".into()));
        }
        Ok(())
    }

    /// `s_t`; zero up to and including the onset day.
    pub fn multiplier(&self, t: usize) -> f64 {
        if t <= self.onset {
            return 0.0;
        }
        let k = (t - self.onset) as f64;
        let a = self.magnitude;
        match self.kind {
            ShockKind::Step => a,
            ShockKind::ExpRecovery => a * (-k / self.recovery).exp(),
            ShockKind::Overshoot => a * (1.0 - k / self.recovery) * (-k / self.recovery).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShockOutcome {
    /// Shocked values, floored at zero.
    pub values: Vec<f64>,
    /// `s_t · counterfactual_t / ȳ`.
    pub phi: Vec<f64>,
    /// Days where the shocked value was negative and set to zero.
    pub clamped: Vec<usize>,
}

/// Applies `profile` to a counterfactual trajectory.
pub fn inject_shock(counterfactual: &[f64], ybar: f64, profile: &ShockProfile) -> Result<ShockOutcome> {
    profile.validate()?;
    if profile.onset >= counterfactual.len() {
        return Err(Error::Parameter(format!(
            "onset {} outside a series of {} days",
            profile.onset,
            counterfactual.len()
        )));
    }
    if !(ybar > 0.0) {
        return Err(Error::Parameter(format!("normalizer ybar = {ybar} must be positive")));
    }
    let mut out = ShockOutcome {
        values: Vec::with_capacity(counterfactual.len()),
        phi: Vec::with_capacity(counterfactual.len()),
        clamped: Vec::new(),
    };
    for (t, &c) in counterfactual.iter().enumerate() {
        let s = profile.multiplier(t);
        let v = c * (1.0 + s);
        if v < 0.0 {
            out.clamped.push(t);
        }
        out.values.push(v.max(0.0));
        out.phi.push(s * c / ybar);
    }
    Ok(out)
}

/// Draw ranges for treated-entity shocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShockSpec {
    pub kind: ShockKind,
    pub magnitude: [f64; 2],
    pub recovery: [f64; 2],
}

impl Default for ShockSpec {
    fn default() -> Self {
        Self {
            kind: ShockKind::ExpRecovery,
            magnitude: [-0.6, -0.2],
            recovery: [10.0, 60.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub windows: StudyWindows,
    pub season_length: usize,
    /// Treated entities per (region, category) cell.
    pub entities_per_cell: usize,
    /// Control entities per category.
    pub control_per_category: usize,
    /// Unaffected reference entities per category; 0 disables the panel.
    pub reference_per_category: usize,
    /// Initial level range in visits per day.
    pub level_range: [f64; 2],
    /// Noise scales as fractions of the initial level.
    pub sigma_mu: [f64; 2],
    pub sigma_tau: [f64; 2],
    pub sigma_y: [f64; 2],
    /// Sd of the initial seasonal effects as a fraction of the level.
    pub seasonal_amplitude: f64,
    /// Peak of each dated anomaly as a fraction of the level.
    pub anomaly_amplitude: f64,
    /// Anomalies per category over the calendar.
    pub anomaly_count: usize,
    /// Half-width in days of an anomaly bump.
    pub anomaly_width: f64,
    /// When false every entity draws its own anomalies.
    pub shared_anomalies: bool,
    /// Share of days removed at random.
    pub missing_rate: f64,
    pub shock: Option<ShockSpec>,
    /// Damage-rate ranges for SanJuan, Metro, Rural.
    pub damage_rate: [[f64; 2]; 3],
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            windows: StudyWindows::default(),
            season_length: 7,
            entities_per_cell: 1,
            control_per_category: 3,
            reference_per_category: 1,
            level_range: [150.0, 600.0],
            sigma_mu: [0.0002, 0.0008],
            sigma_tau: [0.0, 0.002],
            sigma_y: [0.03, 0.06],
            seasonal_amplitude: 0.1,
            anomaly_amplitude: 0.4,
            anomaly_count: 12,
            anomaly_width: 1.5,
            shared_anomalies: true,
            missing_rate: 0.0,
            shock: Some(ShockSpec::default()),
            damage_rate: [[0.05, 0.25], [0.15, 0.35], [0.3, 0.6]],
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        self.windows.validate()?;
        if self.season_length < 2 {
            return Err(Error::Config("season_length must be at least 2".into()));
        }
        let ranges = [
            ("level_range", self.level_range),
            ("sigma_mu", self.sigma_mu),
            ("sigma_tau", self.sigma_tau),
            ("sigma_y", self.sigma_y),
        ];
        for (name, [lo, hi]) in ranges {
            if !(0.0 <= lo && lo <= hi && hi.is_finite()) {
                return Err(Error::Config(format!("{name} must be an ordered non-negative range")));
            }
        }
        for (name, v) in [
            ("seasonal_amplitude", self.seasonal_amplitude),
            ("anomaly_amplitude", self.anomaly_amplitude),
            ("anomaly_width", self.anomaly_width),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative")));
            }
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::Config("missing_rate must lie in [0, 1)".into()));
        }
        for [lo, hi] in self.damage_rate {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(Error::Config("damage_rate ranges must lie in [0, 1]".into()));
            }
        }
        if let Some(s) = &self.shock {
            let [lo, hi] = s.recovery;
            if !(0.0 < lo && lo <= hi) || s.magnitude[0] > s.magnitude[1] {
                return Err(Error::Config(
                    "shock ranges must be ordered with positive recovery".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Generator parameters of one entity, in visits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntityParams {
    pub level0: f64,
    pub sigma_mu: f64,
    pub sigma_tau: f64,
    pub sigma_y: f64,
    pub seasonal_sd: f64,
}

/// Latent paths of a structural series without anomalies or shock.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralPath {
    pub mu: Vec<f64>,
    pub tau: Vec<f64>,
    /// `μ + τ + σ_y ε`.
    pub y: Vec<f64>,
}

/// Forward simulation of a local level plus seasonal-dummy series.
pub fn simulate_structural<R: Rng>(p: &EntityParams, len: usize, season: usize, rng: &mut R) -> StructuralPath {
    let mut mu = Vec::with_capacity(len);
    let mut tau = Vec::with_capacity(len);
    let mut level = p.level0;
    for t in 0..len {
        if t > 0 {
            level += p.sigma_mu * rng.sample::<f64, _>(StandardNormal);
        }
        mu.push(level);
        let s = if t + 1 < season {
            p.seasonal_sd * rng.sample::<f64, _>(StandardNormal)
        } else {
            -tau[t + 1 - season..t].iter().sum::<f64>() + p.sigma_tau * rng.sample::<f64, _>(StandardNormal)
        };
        tau.push(s);
    }
    let y = mu
        .iter()
        .zip(&tau)
        .map(|(m, s)| m + s + p.sigma_y * rng.sample::<f64, _>(StandardNormal))
        .collect();
    StructuralPath { mu, tau, y }
}

/// Truth retained for one generated entity.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityTruth {
    pub params: EntityParams,
    pub shock: Option<ShockProfile>,
    pub mu: Vec<f64>,
    pub tau: Vec<f64>,
    pub anomaly: Vec<f64>,
    /// `μ + τ + anomaly`, before shock and noise.
    pub counterfactual: Vec<f64>,
    /// Shocked counterfactual plus noise, before rounding.
    pub observed: Vec<f64>,
    pub phi: Vec<f64>,
    /// Pre-disaster mean of the rounded observed series.
    pub ybar: f64,
    pub clamped: Vec<usize>,
}

impl EntityTruth {
    /// Running sum of true φ over `[start, end)`.
    pub fn cumulative(&self, start: usize, end: usize) -> Vec<f64> {
        self.phi[start..end]
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub entities: BTreeMap<String, EntityTruth>,
}

/// Treated, control and (optional) unaffected reference panels.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPanels {
    pub treated: Panel,
    pub control: Panel,
    pub reference: Option<Panel>,
    pub truth: GroundTruth,
}

fn slug(c: Category) -> String {
    c.label()
        .chars()
        .filter(|ch| ch.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase()
}

fn uniform<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

#[derive(Debug, Clone, Copy)]
struct Bump {
    day: f64,
    height: f64,
}

fn draw_bumps(cfg: &GenConfig, seed: u64) -> Vec<Bump> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cfg.anomaly_count)
        .map(|_| Bump {
            day: rng.random_range(0.0..cfg.windows.horizon as f64),
            height: cfg.anomaly_amplitude * rng.random_range(0.5..1.0) * if rng.random_bool(0.7) { 1.0 } else { -1.0 },
        })
        .collect()
}

fn anomaly_profile(cfg: &GenConfig, bumps: &[Bump]) -> Vec<f64> {
    let w = cfg.anomaly_width.max(1e-9);
    (0..cfg.windows.horizon)
        .map(|t| {
            bumps
                .iter()
                .map(|b| {
                    let z = (t as f64 - b.day) / w;
                    b.height * (-0.5 * z * z).exp()
                })
                .sum()
        })
        .collect()
}

struct Job {
    id: String,
    meta: BusinessMeta,
    role: usize,
}

/// Generates the panels; each entity has its own RNG stream so the output
/// does not depend on thread scheduling.
pub fn generate_panel(cfg: &GenConfig) -> Result<SyntheticPanels> {
    cfg.validate()?;
    let w = cfg.windows;
    let shared: BTreeMap<Category, Vec<f64>> = Category::ALL
        .iter()
        .map(|&c| {
            let bumps = draw_bumps(cfg, derive_seed(cfg.seed, &format!("anomaly/{}", slug(c))));
            (c, anomaly_profile(cfg, &bumps))
        })
        .collect();

    let mut jobs = Vec::new();
    for (ri, region) in Region::TARGET.iter().enumerate() {
        for c in Category::ALL {
            for k in 0..cfg.entities_per_cell {
                let id = format!("{}_{}_{k:02}", region.label().to_ascii_lowercase(), slug(c));
                jobs.push(Job {
                    meta: BusinessMeta {
                        entity_id: id.clone(),
                        category: c,
                        region: region.clone(),
                        brand: None,
                        county_id: format!("{}-{}", region.label().to_ascii_lowercase(), k % 3),
                        damage_rate: Some(ri as f64),
                    },
                    id,
                    role: 0,
                });
            }
        }
    }
    for (role, per, label, prefix) in [
        (1, cfg.control_per_category, "Control", "ctl"),
        (2, cfg.reference_per_category, "Reference", "ref"),
    ] {
        for c in Category::ALL {
            for k in 0..per {
                let id = format!("{prefix}_{}_{k:02}", slug(c));
                jobs.push(Job {
                    meta: BusinessMeta {
                        entity_id: id.clone(),
                        category: c,
                        region: Region::Other(label.into()),
                        brand: None,
                        county_id: format!("{prefix}-{}", k % 3),
                        damage_rate: None,
                    },
                    id,
                    role,
                });
            }
        }
    }

    let generated: Vec<(VisitSeries, BusinessMeta, EntityTruth, usize)> = jobs
        .into_par_iter()
        .map(|job| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("entity/{}", job.id)));
            let params = EntityParams {
                level0: uniform(&mut rng, cfg.level_range),
                sigma_mu: 0.0,
                sigma_tau: 0.0,
                sigma_y: 0.0,
                seasonal_sd: 0.0,
            };
            let params = EntityParams {
                sigma_mu: params.level0 * uniform(&mut rng, cfg.sigma_mu),
                sigma_tau: params.level0 * uniform(&mut rng, cfg.sigma_tau),
                sigma_y: params.level0 * uniform(&mut rng, cfg.sigma_y),
                seasonal_sd: params.level0 * cfg.seasonal_amplitude,
                ..params
            };
            let path = simulate_structural(&params, w.horizon, cfg.season_length, &mut rng);
            let anomaly: Vec<f64> = if cfg.shared_anomalies {
                shared[&job.meta.category].iter().map(|a| a * params.level0).collect()
            } else {
                let bumps = draw_bumps(cfg, derive_seed(cfg.seed, &format!("anomaly/{}", job.id)));
                anomaly_profile(cfg, &bumps).iter().map(|a| a * params.level0).collect()
            };
            let counterfactual: Vec<f64> = (0..w.horizon).map(|t| path.mu[t] + path.tau[t] + anomaly[t]).collect();
            let noise: Vec<f64> = (0..w.horizon).map(|t| path.y[t] - path.mu[t] - path.tau[t]).collect();

            let mut meta = job.meta;
            if let (0, Some(idx)) = (job.role, meta.region.index()) {
                meta.damage_rate = Some(uniform(&mut rng, cfg.damage_rate[idx]));
            }
            let shock = match (job.role, cfg.shock) {
                (0, Some(spec)) => Some(ShockProfile {
                    kind: spec.kind,
                    magnitude: uniform(&mut rng, spec.magnitude),
                    recovery: uniform(&mut rng, spec.recovery),
                    onset: w.shock_day,
                }),
                _ => None,
            };
            let missing: Vec<bool> = (0..w.horizon)
                .map(|_| cfg.missing_rate > 0.0 && rng.random_bool(cfg.missing_rate))
                .collect();

            let multiplier = |t: usize| shock.map_or(0.0, |s| s.multiplier(t));
            let observed: Vec<f64> = (0..w.horizon)
                .map(|t| counterfactual[t] * (1.0 + multiplier(t)) + noise[t])
                .collect();
            let clamped: Vec<usize> = (0..w.horizon).filter(|&t| observed[t] < 0.0).collect();
            let values: Vec<Option<u32>> = (0..w.horizon)
                .map(|t| (!missing[t]).then(|| observed[t].max(0.0).round() as u32))
                .collect();
            let series = VisitSeries::new(&job.id, values);
            let ybar = crate::panel::pre_disaster_mean(&series, &w).unwrap_or(params.level0);
            let phi = (0..w.horizon)
                .map(|t| multiplier(t) * counterfactual[t] / ybar)
                .collect();
            let truth = EntityTruth {
                params,
                shock,
                mu: path.mu,
                tau: path.tau,
                anomaly,
                counterfactual,
                observed,
                phi,
                ybar,
                clamped,
            };
            (series, meta, truth, job.role)
        })
        .collect();

    let mut treated = Panel::new(w, PanelRole::Treated);
    let mut control = Panel::new(w, PanelRole::Control);
    let mut reference = (cfg.reference_per_category > 0).then(|| Panel::new(w, PanelRole::Treated));
    let mut truth = GroundTruth::default();
    for (series, meta, t, role) in generated {
        truth.entities.insert(series.entity_id.clone(), t);
        match role {
            0 => treated.insert(series, meta)?,
            1 => control.insert(series, meta)?,
            _ => reference
                .as_mut()
                .expect("reference panel enabled")
                .insert(series, meta)?,
        }
    }
    Ok(SyntheticPanels {
        treated,
        control,
        reference,
        truth,
    })
}

/// `entity_id,day,mu,tau,counterfactual,phi_true`.
pub fn write_truth_csv(truth: &GroundTruth, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "entity_id,day,mu,tau,counterfactual,phi_true").map_err(io)?;
    for (id, t) in &truth.entities {
        for day in 0..t.mu.len() {
            writeln!(
                w,
                "{id},{day},{},{},{},{}",
                t.mu[day], t.tau[day], t.counterfactual[day], t.phi[day]
            )
            .map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Coefficients of a generated hierarchical data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HbmTruth {
    pub beta: [f64; 3],
    pub delta: [f64; N_REGIONS],
    pub gamma: [f64; N_CATEGORIES],
    pub sigma: f64,
}

impl HbmTruth {
    /// Values in the column order of [`crate::hbm::param_names`], without
    /// the group scales.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.beta.to_vec();
        v.extend(self.delta);
        v.extend(self.gamma);
        v.push(self.sigma);
        v
    }
}

/// Rows with uniform region and category, mean visits uniform on
/// [100, 1000] and damage rate uniform on [0, 1]; φ follows the
/// hierarchical likelihood on the standardized features.
pub fn generate_hbm_dataset(truth: &HbmTruth, n_entities: usize, seed: u64) -> Result<HbmData> {
    if !(truth.sigma >= 0.0) {
        return Err(Error::Parameter("sigma must be non-negative".into()));
    }
    if n_entities < 2 {
        return Err(Error::Parameter("need at least 2 entities".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "hbm-data"));
    let rows: Vec<HbmRow> = (0..n_entities)
        .map(|i| HbmRow {
            entity_id: format!("h{i:05}"),
            phi: 0.0,
            mean_visits: rng.random_range(100.0..1000.0),
            damage_rate: rng.random_range(0.0..1.0),
            region: rng.random_range(0..N_REGIONS),
            category: rng.random_range(0..N_CATEGORIES),
        })
        .collect();
    let mut data = HbmData::from_rows(rows)?;
    let noise = Normal::new(0.0, truth.sigma).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut values = truth.flat();
    values.pop();
    for i in 0..data.len() {
        data.phi[i] = data.mean_of(i, &values) + noise.sample(&mut rng);
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> GenConfig {
        GenConfig {
            sigma_mu: [0.0, 0.0],
            sigma_tau: [0.0, 0.0],
            sigma_y: [0.0, 0.0],
            anomaly_amplitude: 0.0,
            shock: None,
            control_per_category: 1,
            reference_per_category: 0,
            ..Default::default()
        }
    }

    #[test]
    fn exp_recovery_closed_form() {
        let p = ShockProfile {
            kind: ShockKind::ExpRecovery,
            magnitude: -0.6,
            recovery: 30.0,
            onset: 10,
        };
        assert!((p.multiplier(40) + 0.6 / std::f64::consts::E).abs() < 1e-15);
        assert!((p.multiplier(40) + 0.2207).abs() < 1e-4);
        assert_eq!(p.multiplier(10), 0.0);
    }

    #[test]
    fn zero_magnitude_is_identity() {
        let c: Vec<f64> = (0..30).map(|t| 50.0 + t as f64).collect();
        let p = ShockProfile {
            kind: ShockKind::Overshoot,
            magnitude: 0.0,
            recovery: 5.0,
            onset: 3,
        };
        let out = inject_shock(&c, 60.0, &p).unwrap();
        assert_eq!(out.values, c);
        assert!(out.phi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn overshoot_sign_change_propagates() {
        let c = vec![100.0; 60];
        let p = ShockProfile {
            kind: ShockKind::Overshoot,
            magnitude: -0.5,
            recovery: 10.0,
            onset: 5,
        };
        let out = inject_shock(&c, 100.0, &p).unwrap();
        for t in 0..60 {
            assert!(out.phi[t].signum() * p.multiplier(t).signum() >= 0.0);
            assert_eq!(out.phi[t] == 0.0, p.multiplier(t) == 0.0);
        }
        assert!(out.phi[10] < 0.0 && out.phi[20] > 0.0);
        assert_eq!(out.phi[15], 0.0);
    }

    #[test]
    fn large_losses_are_clamped() {
        let p = ShockProfile {
            kind: ShockKind::Step,
            magnitude: -1.5,
            recovery: 1.0,
            onset: 1,
        };
        let out = inject_shock(&[10.0; 4], 10.0, &p).unwrap();
        assert_eq!(out.values, vec![10.0, 10.0, 0.0, 0.0]);
        assert_eq!(out.clamped, vec![2, 3]);
        assert!(inject_shock(&[1.0; 3], 1.0, &ShockProfile { onset: 3, ..p }).is_err());
    }

    #[test]
    fn noiseless_panel_matches_counterfactual() {
        let g = generate_panel(&quiet()).unwrap();
        assert_eq!(g.treated.len(), 27);
        assert_eq!(g.control.len(), 9);
        for (id, s) in &g.treated.series {
            let t = &g.truth.entities[id];
            for (v, c) in s.values.iter().zip(&t.counterfactual) {
                assert_eq!(f64::from(v.unwrap()), c.round());
            }
            assert!(t.phi.iter().all(|&p| p == 0.0));
        }
    }

    #[test]
    fn step_shock_total_is_minus_ten() {
        let cfg = GenConfig {
            windows: StudyWindows::new(150, 262, 283).unwrap(),
            seasonal_amplitude: 0.0,
            level_range: [200.0, 200.0],
            shock: Some(ShockSpec {
                kind: ShockKind::Step,
                magnitude: [-0.5, -0.5],
                recovery: [1.0, 1.0],
            }),
            ..quiet()
        };
        let g = generate_panel(&cfg).unwrap();
        for id in g.treated.entity_ids() {
            let t = &g.truth.entities[id];
            let cum = t.cumulative(263, 283);
            assert_eq!(cum.len(), 20);
            assert!((cum[19] + 10.0).abs() < 1e-12, "{}", cum[19]);
        }
    }

    #[test]
    fn generation_is_deterministic_and_seasonal_sums_vanish() {
        let cfg = GenConfig {
            entities_per_cell: 1,
            ..Default::default()
        };
        let a = generate_panel(&cfg).unwrap();
        let b = generate_panel(&cfg).unwrap();
        assert_eq!(a, b);
        let other = generate_panel(&GenConfig { seed: 9, ..cfg.clone() }).unwrap();
        assert_ne!(a.treated, other.treated);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = EntityParams {
            level0: 10.0,
            sigma_mu: 1.0,
            sigma_tau: 0.0,
            sigma_y: 1.0,
            seasonal_sd: 3.0,
        };
        let path = simulate_structural(&p, 50, 7, &mut rng);
        for t in 0..44 {
            assert!(path.tau[t..t + 7].iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn hbm_dataset_noiseless_identity() {
        let truth = HbmTruth {
            beta: [1.0, -2.0, 0.5],
            delta: [0.3, -0.1, 0.2],
            gamma: [1.0, -1.0, 0.5, 0.0, 0.2, -0.3, 0.4, -0.4, 0.1],
            sigma: 0.0,
        };
        let d = generate_hbm_dataset(&truth, 635, 4).unwrap();
        assert_eq!(d.len(), 635);
        for i in 0..d.len() {
            let x = d.x[i];
            let expect = truth.beta[0] * x[0]
                + truth.beta[1] * x[1]
                + truth.beta[2] * x[2]
                + truth.delta[d.region_idx[i]]
                + truth.gamma[d.category_idx[i]];
            assert!((d.phi[i] - expect).abs() < 1e-12);
        }
        assert_eq!(d, generate_hbm_dataset(&truth, 635, 4).unwrap());
    }
}
