use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{MetricAdapter, StepSizeAdapter};
use crate::{LogDensity, SamplerError};

const MAX_DELTA_H: f64 = 1000.0;
const INIT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NutsSettings {
    pub chains: usize,
    /// Total iterations per chain, warmup included.
    pub iterations: usize,
    pub warmup: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub max_depth: usize,
    /// Half-width of the uniform box used for initial positions.
    pub init_radius: f64,
}

impl Default for NutsSettings {
    fn default() -> Self {
        Self {
            chains: 4,
            iterations: 2000,
            warmup: 1000,
            seed: 0,
            target_accept: 0.8,
            max_depth: 10,
            init_radius: 2.0,
        }
    }
}

impl NutsSettings {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.chains == 0 {
            return Err(SamplerError::Settings("at least one chain required".into()));
        }
        if self.warmup >= self.iterations {
            return Err(SamplerError::Settings(format!(
                "warmup ({}) must be smaller than iterations ({})",
                self.warmup, self.iterations
            )));
        }
        if !(0.0 < self.target_accept && self.target_accept < 1.0) {
            return Err(SamplerError::Settings("target_accept must lie in (0, 1)".into()));
        }
        if self.max_depth == 0 {
            return Err(SamplerError::Settings("max_depth must be positive".into()));
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        self.iterations - self.warmup
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub step_size: f64,
    pub divergences: usize,
    pub mean_accept: f64,
    pub mean_tree_depth: f64,
    /// Leapfrog steps over retained iterations.
    pub leapfrog_steps: usize,
}

/// Retained draws of one chain, row-major `draws × dim`.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub dim: usize,
    pub draws: Vec<f64>,
    /// Whether the transition that produced each retained draw diverged.
    pub divergent: Vec<bool>,
    pub stats: ChainStats,
}

impl ChainOutput {
    pub fn len(&self) -> usize {
        self.draws.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn draw(&self, i: usize) -> &[f64] {
        &self.draws[i * self.dim..(i + 1) * self.dim]
    }

    /// Trace of coordinate `k`.
    pub fn trace(&self, k: usize) -> Vec<f64> {
        self.draws.iter().skip(k).step_by(self.dim).copied().collect()
    }
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub chains: Vec<ChainOutput>,
}

impl SampleOutput {
    /// Per-chain traces of coordinate `k`.
    pub fn traces(&self, k: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.trace(k)).collect()
    }

    pub fn total_divergences(&self) -> usize {
        self.chains.iter().map(|c| c.stats.divergences).sum()
    }
}

/// Runs `settings.chains` independent chains. Chains may execute on any
/// rayon worker; results are returned in chain order.
pub fn sample<D: LogDensity>(density: &D, settings: &NutsSettings) -> Result<SampleOutput, SamplerError> {
    settings.validate()?;
    let chains = (0..settings.chains)
        .into_par_iter()
        .map(|c| sample_chain(density, settings, c))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SampleOutput { chains })
}

#[derive(Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

struct Hamiltonian<'a, D: LogDensity> {
    density: &'a D,
    inv_metric: Vec<f64>,
}

impl<D: LogDensity> Hamiltonian<'_, D> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_metric).map(|(pi, m)| pi * pi * m).sum::<f64>()
    }

    fn energy(&self, z: &Point) -> f64 {
        let h = -z.logp + self.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn p_sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(pi, m)| pi * m).collect()
    }

    fn sample_momentum(&self, z: &mut Point, rng: &mut ChaCha8Rng) {
        for (pi, m) in z.p.iter_mut().zip(&self.inv_metric) {
            let n: f64 = rng.sample(StandardNormal);
            *pi = n / m.sqrt();
        }
    }

    fn update_gradient(&self, z: &mut Point) {
        match self.density.logp_grad(&z.q, &mut z.grad) {
            Ok(lp) if lp.is_finite() && z.grad.iter().all(|g| g.is_finite()) => z.logp = lp,
            _ => {
                z.logp = f64::NEG_INFINITY;
                z.grad.fill(0.0);
            }
        }
    }

    fn leapfrog(&self, z: &mut Point, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += eps * m * p;
        }
        self.update_gradient(z);
        if z.logp == f64::NEG_INFINITY {
            return;
        }
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
    }
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Bookkeeping shared across one trajectory.
struct Trajectory {
    h0: f64,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

/// Boundary momenta of a subtree.
struct Edges {
    p_beg: Vec<f64>,
    p_sharp_beg: Vec<f64>,
    p_end: Vec<f64>,
    p_sharp_end: Vec<f64>,
}

struct Chain<'a, D: LogDensity> {
    ham: Hamiltonian<'a, D>,
    rng: ChaCha8Rng,
    step_size: f64,
    max_depth: usize,
}

impl<D: LogDensity> Chain<'_, D> {
    /// Extends the trajectory by `2^depth` leapfrog steps from `z`.
    /// Returns `None` when the subtree is invalid.
    #[allow(clippy::too_many_arguments)]
    fn build_tree(
        &mut self,
        depth: usize,
        z: &mut Point,
        z_propose: &mut Point,
        rho: &mut [f64],
        direction: f64,
        log_sum_weight: &mut f64,
        traj: &mut Trajectory,
    ) -> Option<Edges> {
        if depth == 0 {
            self.ham.leapfrog(z, direction * self.step_size);
            traj.n_leapfrog += 1;
            let h = self.ham.energy(z);
            if h - traj.h0 > MAX_DELTA_H {
                traj.divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, traj.h0 - h);
            traj.sum_metro_prob += if traj.h0 - h > 0.0 { 1.0 } else { (traj.h0 - h).exp() };
            z_propose.clone_from(z);
            for (r, p) in rho.iter_mut().zip(&z.p) {
                *r += p;
            }
            if traj.divergent {
                return None;
            }
            let ps = self.ham.p_sharp(&z.p);
            return Some(Edges {
                p_beg: z.p.clone(),
                p_sharp_beg: ps.clone(),
                p_end: z.p.clone(),
                p_sharp_end: ps,
            });
        }

        let dim = z.q.len();
        let mut lsw_init = f64::NEG_INFINITY;
        let mut rho_init = vec![0.0; dim];
        let init = self.build_tree(depth - 1, z, z_propose, &mut rho_init, direction, &mut lsw_init, traj)?;

        let mut z_propose_final = z.clone();
        let mut lsw_final = f64::NEG_INFINITY;
        let mut rho_final = vec![0.0; dim];
        let fin = self.build_tree(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut rho_final,
            direction,
            &mut lsw_final,
            traj,
        )?;

        let lsw_subtree = log_sum_exp(lsw_init, lsw_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree {
            *z_propose = z_propose_final;
        } else {
            let accept = (lsw_final - lsw_subtree).exp();
            if self.rng.random::<f64>() < accept {
                *z_propose = z_propose_final;
            }
        }

        let rho_subtree = add(&rho_init, &rho_final);
        for (r, s) in rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }
        let mut persist = no_u_turn(&init.p_sharp_beg, &fin.p_sharp_end, &rho_subtree);
        let rho_ext = add(&rho_init, &fin.p_beg);
        persist &= no_u_turn(&init.p_sharp_beg, &fin.p_sharp_beg, &rho_ext);
        let rho_ext = add(&rho_final, &init.p_end);
        persist &= no_u_turn(&init.p_sharp_end, &fin.p_sharp_end, &rho_ext);

        if persist {
            Some(Edges {
                p_beg: init.p_beg,
                p_sharp_beg: init.p_sharp_beg,
                p_end: fin.p_end,
                p_sharp_end: fin.p_sharp_end,
            })
        } else {
            None
        }
    }

    /// One NUTS transition from `current`. Returns (next point, accept stat,
    /// tree depth, divergent, leapfrog steps).
    fn transition(&mut self, current: &Point) -> (Point, f64, usize, bool, usize) {
        let mut z = current.clone();
        self.ham.sample_momentum(&mut z, &mut self.rng);
        let h0 = self.ham.energy(&z);

        let mut z_right = z.clone();
        let mut z_left = z.clone();
        let mut z_sample = z.clone();
        let mut z_propose = z.clone();

        let ps = self.ham.p_sharp(&z.p);
        // outermost momenta of the whole trajectory
        let (mut p_left, mut ps_left) = (z.p.clone(), ps.clone());
        let (mut p_right, mut ps_right) = (z.p.clone(), ps);

        let mut rho = z.p.clone();
        let mut log_sum_weight = 0.0;
        let mut traj = Trajectory {
            h0,
            n_leapfrog: 0,
            sum_metro_prob: 0.0,
            divergent: false,
        };
        let dim = z.q.len();
        let mut depth = 0;

        while depth < self.max_depth {
            let mut rho_new = vec![0.0; dim];
            let mut lsw_subtree = f64::NEG_INFINITY;
            let forward = self.rng.random::<f64>() > 0.5;
            let (z_edge, direction) = if forward {
                (&mut z_right, 1.0)
            } else {
                (&mut z_left, -1.0)
            };
            let Some(edges) = self.build_tree(
                depth,
                z_edge,
                &mut z_propose,
                &mut rho_new,
                direction,
                &mut lsw_subtree,
                &mut traj,
            ) else {
                break;
            };
            depth += 1;

            if lsw_subtree > log_sum_weight {
                z_sample.clone_from(&z_propose);
            } else {
                let accept = (lsw_subtree - log_sum_weight).exp();
                if self.rng.random::<f64>() < accept {
                    z_sample.clone_from(&z_propose);
                }
            }
            log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

            let rho_old = std::mem::replace(&mut rho, vec![0.0; dim]);
            rho = add(&rho_old, &rho_new);
            // `beg` is the new subtree's edge adjacent to the old trajectory
            let persist = if forward {
                no_u_turn(&ps_left, &edges.p_sharp_end, &rho)
                    && no_u_turn(&ps_left, &edges.p_sharp_beg, &add(&rho_old, &edges.p_beg))
                    && no_u_turn(&ps_right, &edges.p_sharp_end, &add(&rho_new, &p_right))
            } else {
                no_u_turn(&edges.p_sharp_end, &ps_right, &rho)
                    && no_u_turn(&ps_right, &edges.p_sharp_beg, &add(&rho_old, &edges.p_beg))
                    && no_u_turn(&ps_left, &edges.p_sharp_end, &add(&rho_new, &p_left))
            };
            if forward {
                p_right = edges.p_end;
                ps_right = edges.p_sharp_end;
            } else {
                p_left = edges.p_end;
                ps_left = edges.p_sharp_end;
            }
            if !persist {
                break;
            }
        }

        let accept = if traj.n_leapfrog == 0 {
            0.0
        } else {
            traj.sum_metro_prob / traj.n_leapfrog as f64
        };
        (z_sample, accept, depth, traj.divergent, traj.n_leapfrog)
    }

    /// Step-size doubling/halving heuristic around the current point.
    fn init_step_size(&mut self, current: &Point) -> Result<(), SamplerError> {
        let target = 0.8f64.ln();
        let mut z = current.clone();
        self.ham.sample_momentum(&mut z, &mut self.rng);
        let h0 = self.ham.energy(&z);
        self.ham.leapfrog(&mut z, self.step_size);
        let delta = h0 - self.ham.energy(&z);
        let direction = if delta > target { 1.0 } else { -1.0 };

        for _ in 0..200 {
            let mut z = current.clone();
            self.ham.sample_momentum(&mut z, &mut self.rng);
            let h0 = self.ham.energy(&z);
            self.ham.leapfrog(&mut z, self.step_size);
            let delta = h0 - self.ham.energy(&z);
            if (direction > 0.0 && delta <= target) || (direction < 0.0 && delta >= target) {
                return Ok(());
            }
            self.step_size *= if direction > 0.0 { 2.0 } else { 0.5 };
            if self.step_size > 1e7 || self.step_size < 1e-12 {
                return Err(SamplerError::StepSize(self.step_size));
            }
        }
        Ok(())
    }
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Runs a single chain; chain `c` always consumes the same random stream.
pub fn sample_chain<D: LogDensity>(
    density: &D,
    settings: &NutsSettings,
    chain: usize,
) -> Result<ChainOutput, SamplerError> {
    settings.validate()?;
    let dim = density.dim();
    let mut rng = chain_rng(settings.seed, chain);
    let ham = Hamiltonian {
        density,
        inv_metric: vec![1.0; dim],
    };

    let mut current = None;
    for _ in 0..INIT_ATTEMPTS {
        let q: Vec<f64> = (0..dim)
            .map(|_| rng.random_range(-settings.init_radius..=settings.init_radius))
            .collect();
        let mut z = Point {
            q,
            p: vec![0.0; dim],
            grad: vec![0.0; dim],
            logp: 0.0,
        };
        ham.update_gradient(&mut z);
        if z.logp.is_finite() {
            current = Some(z);
            break;
        }
    }
    let mut current = current.ok_or(SamplerError::Initialization(INIT_ATTEMPTS))?;

    let mut chain_state = Chain {
        ham,
        rng,
        step_size: 1.0,
        max_depth: settings.max_depth,
    };
    chain_state.init_step_size(&current)?;

    let mut step_adapter = StepSizeAdapter::new(settings.target_accept);
    step_adapter.restart(chain_state.step_size);
    let mut metric_adapter = MetricAdapter::new(dim, settings.warmup);

    let retained = settings.retained();
    let mut draws = Vec::with_capacity(retained * dim);
    let mut flags = Vec::with_capacity(retained);
    let mut stats = ChainStats::default();
    let (mut accept_sum, mut depth_sum) = (0.0, 0.0);

    for iter in 0..settings.iterations {
        let (next, accept, depth, divergent, n_leapfrog) = chain_state.transition(&current);
        current = next;
        current.p.fill(0.0);

        if iter < settings.warmup {
            chain_state.step_size = step_adapter.learn(accept);
            if let Some(var) = metric_adapter.learn(&current.q) {
                chain_state.ham.inv_metric = var;
                chain_state.step_size = 1.0_f64.max(chain_state.step_size);
                chain_state.init_step_size(&current)?;
                step_adapter.restart(chain_state.step_size);
            }
            if iter + 1 == settings.warmup {
                chain_state.step_size = step_adapter.final_step_size();
            }
        } else {
            draws.extend_from_slice(&current.q);
            flags.push(divergent);
            accept_sum += accept;
            depth_sum += depth as f64;
            stats.leapfrog_steps += n_leapfrog;
            if divergent {
                stats.divergences += 1;
            }
        }
    }

    stats.step_size = chain_state.step_size;
    stats.mean_accept = accept_sum / retained as f64;
    stats.mean_tree_depth = depth_sum / retained as f64;
    Ok(ChainOutput {
        dim,
        draws,
        divergent: flags,
        stats,
    })
}
