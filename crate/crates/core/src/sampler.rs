//! Self-contained No-U-Turn Sampler.
//!
//! Multinomial state selection within trees, a generalized (momentum-sum)
//! U-turn criterion with cross-subtree checks, dual-averaging step-size
//! adaptation, and windowed diagonal mass-matrix estimation during warmup.
//! One chain is single-threaded and fully deterministic given its seed.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Log-density with gradient on an unconstrained space. `&mut self` lets
/// implementations reuse scratch buffers; evaluation must stay pure.
pub trait LogDensityGrad {
    fn dim(&self) -> usize;
    /// Returns log p(x) and writes its gradient into `grad`.
    fn logp_and_grad(&mut self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct NutsConfig {
    pub num_iterations: usize,
    pub num_warmup: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub seed: u64,
}

impl Default for NutsConfig {
    fn default() -> Self {
        Self {
            num_iterations: 400,
            num_warmup: 200,
            target_accept: 0.8,
            max_tree_depth: 10,
            seed: 0,
        }
    }
}

impl NutsConfig {
    fn validate(&self) -> Result<()> {
        if self.num_warmup >= self.num_iterations {
            return Err(Error::InvalidConfig(format!(
                "warmup ({}) must be smaller than the iteration count ({})",
                self.num_warmup, self.num_iterations
            )));
        }
        if self.max_tree_depth == 0 || self.max_tree_depth > 12 {
            return Err(Error::InvalidConfig(format!(
                "max tree depth must be in 1..=12, got {}",
                self.max_tree_depth
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "target acceptance must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        Ok(())
    }
}

/// Post-warmup draws plus adaptation diagnostics.
#[derive(Debug, Clone)]
pub struct Chain {
    /// (num_kept x dim) in unconstrained coordinates.
    pub draws: DMatrix<f64>,
    /// Mean leaf acceptance statistic, one entry per iteration (warmup included).
    pub accept_stats: Vec<f64>,
    pub divergence_count: usize,
    /// Final adapted step size.
    pub step_size: f64,
    /// Final diagonal of the inverse mass matrix.
    pub mass_diag: Vec<f64>,
}

impl Chain {
    pub fn num_kept(&self) -> usize {
        self.draws.nrows()
    }

    pub fn dim(&self) -> usize {
        self.draws.ncols()
    }
}

const DIVERGENCE_THRESHOLD: f64 = 1000.0;
const INIT_JITTER_SCALE: f64 = 0.1;
const INIT_ATTEMPTS: usize = 100;

#[derive(Clone)]
struct HamState {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

struct Tree {
    left: HamState,
    right: HamState,
    proposal: HamState,
    log_sum_weight: f64,
    p_sum: Vec<f64>,
    divergent: bool,
    turning: bool,
    sum_accept: f64,
    n_leaf: usize,
}

/// Diagonal Euclidean metric; `inv_mass` approximates posterior variances.
#[derive(Clone)]
struct Metric {
    inv_mass: Vec<f64>,
}

impl Metric {
    fn unit(dim: usize) -> Self {
        Self {
            inv_mass: vec![1.0; dim],
        }
    }

    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p
            .iter()
            .zip(&self.inv_mass)
            .map(|(&pi, &m)| pi * pi * m)
            .sum::<f64>()
    }

    fn sample_momentum(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        for (o, &m) in out.iter_mut().zip(&self.inv_mass) {
            let z: f64 = StandardNormal.sample(rng);
            *o = z / m.sqrt();
        }
    }

    fn velocity(&self, p: &[f64], out: &mut [f64]) {
        for ((o, &pi), &m) in out.iter_mut().zip(p).zip(&self.inv_mass) {
            *o = pi * m;
        }
    }
}

fn is_turning(metric: &Metric, rho: &[f64], p_left: &[f64], p_right: &[f64]) -> bool {
    let mut dot_left = 0.0;
    let mut dot_right = 0.0;
    for i in 0..rho.len() {
        dot_left += rho[i] * p_left[i] * metric.inv_mass[i];
        dot_right += rho[i] * p_right[i] * metric.inv_mass[i];
    }
    if !dot_left.is_finite() || !dot_right.is_finite() {
        return true;
    }
    dot_left < 0.0 || dot_right < 0.0
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

struct Sampler<'a, T: LogDensityGrad> {
    target: &'a mut T,
    metric: Metric,
    step_size: f64,
    max_tree_depth: usize,
    rng: ChaCha8Rng,
    velocity: Vec<f64>,
}

impl<'a, T: LogDensityGrad> Sampler<'a, T> {
    fn leapfrog(&mut self, state: &mut HamState, eps: f64) {
        for (p, g) in state.p.iter_mut().zip(&state.grad) {
            *p += 0.5 * eps * g;
        }
        self.metric.velocity(&state.p, &mut self.velocity);
        for (q, v) in state.q.iter_mut().zip(&self.velocity) {
            *q += eps * v;
        }
        state.logp = self.target.logp_and_grad(&state.q, &mut state.grad);
        for (p, g) in state.p.iter_mut().zip(&state.grad) {
            *p += 0.5 * eps * g;
        }
    }

    fn joint(&self, state: &HamState) -> f64 {
        state.logp - self.metric.kinetic(&state.p)
    }

    /// Stan's step-size heuristic: double or halve until a single leapfrog
    /// step crosses 50% acceptance.
    fn find_reasonable_step_size(&mut self, start: &HamState) -> f64 {
        let mut eps: f64 = 1.0;
        let mut state = start.clone();
        self.metric.sample_momentum(&mut self.rng.clone(), &mut state.p);
        let joint0 = self.joint(&state);
        let mut probe = state.clone();
        self.leapfrog(&mut probe, eps);
        let mut log_ratio = self.joint(&probe) - joint0;
        let mut halvings = 0;
        while !log_ratio.is_finite() && halvings < 50 {
            eps *= 0.5;
            probe = state.clone();
            self.leapfrog(&mut probe, eps);
            log_ratio = self.joint(&probe) - joint0;
            halvings += 1;
        }
        let dir: f64 = if log_ratio > (0.5f64).ln() { 1.0 } else { -1.0 };
        for _ in 0..50 {
            if dir * log_ratio <= -dir * (2.0f64).ln() {
                break;
            }
            eps *= 2.0f64.powf(dir);
            if !(1e-10..=1e7).contains(&eps) {
                break;
            }
            probe = state.clone();
            self.leapfrog(&mut probe, eps);
            log_ratio = self.joint(&probe) - joint0;
            if !log_ratio.is_finite() {
                log_ratio = f64::NEG_INFINITY;
            }
        }
        eps.clamp(1e-10, 1e7)
    }

    fn build_leaf(&mut self, state: &HamState, dir: f64, joint0: f64) -> Tree {
        let mut new = state.clone();
        self.leapfrog(&mut new, dir * self.step_size);
        let joint = self.joint(&new);
        let energy_error = joint - joint0;
        let divergent = !energy_error.is_finite() || energy_error < -DIVERGENCE_THRESHOLD;
        let log_weight = if divergent {
            f64::NEG_INFINITY
        } else {
            energy_error
        };
        let accept = if energy_error.is_finite() {
            energy_error.exp().min(1.0)
        } else {
            0.0
        };
        Tree {
            left: new.clone(),
            right: new.clone(),
            p_sum: new.p.clone(),
            proposal: new,
            log_sum_weight: log_weight,
            divergent,
            turning: false,
            sum_accept: accept,
            n_leaf: 1,
        }
    }

    fn build_tree(&mut self, depth: usize, state: &HamState, dir: f64, joint0: f64) -> Tree {
        if depth == 0 {
            return self.build_leaf(state, dir, joint0);
        }
        let mut inner = self.build_tree(depth - 1, state, dir, joint0);
        if inner.divergent || inner.turning {
            return inner;
        }
        let edge = if dir > 0.0 {
            inner.right.clone()
        } else {
            inner.left.clone()
        };
        let outer = self.build_tree(depth - 1, &edge, dir, joint0);

        // Multinomial selection between the two half-trees.
        let total = log_sum_exp(inner.log_sum_weight, outer.log_sum_weight);
        let accept_outer = if outer.log_sum_weight == f64::NEG_INFINITY {
            0.0
        } else {
            (outer.log_sum_weight - total).exp()
        };
        let u: f64 = self.rng.random();
        if u < accept_outer {
            inner.proposal = outer.proposal.clone();
        }
        inner.log_sum_weight = total;
        inner.sum_accept += outer.sum_accept;
        inner.n_leaf += outer.n_leaf;
        inner.divergent = inner.divergent || outer.divergent;
        inner.turning = inner.turning || outer.turning;

        // Cross-subtree U-turn checks at the junction, then the merged tree.
        let (rho_inner, p_inner_junction) = if dir > 0.0 {
            (inner.p_sum.clone(), inner.right.p.clone())
        } else {
            (inner.p_sum.clone(), inner.left.p.clone())
        };
        let (rho_outer, p_outer_junction) = if dir > 0.0 {
            (outer.p_sum.clone(), outer.left.p.clone())
        } else {
            (outer.p_sum.clone(), outer.right.p.clone())
        };
        for (a, b) in inner.p_sum.iter_mut().zip(&outer.p_sum) {
            *a += b;
        }
        if dir > 0.0 {
            inner.right = outer.right;
        } else {
            inner.left = outer.left;
        }
        if !inner.turning {
            let full = is_turning(&self.metric, &inner.p_sum, &inner.left.p, &inner.right.p);
            let cross1: Vec<f64> = rho_inner
                .iter()
                .zip(&p_outer_junction)
                .map(|(a, b)| a + b)
                .collect();
            let start_p = if dir > 0.0 { &inner.left.p } else { &inner.right.p };
            let t1 = is_turning(&self.metric, &cross1, start_p, &p_outer_junction);
            let cross2: Vec<f64> = rho_outer
                .iter()
                .zip(&p_inner_junction)
                .map(|(a, b)| a + b)
                .collect();
            let end_p = if dir > 0.0 { &inner.right.p } else { &inner.left.p };
            let t2 = is_turning(&self.metric, &cross2, &p_inner_junction, end_p);
            inner.turning = full || t1 || t2;
        }
        inner
    }

    /// One NUTS transition; returns the new state, the mean leaf acceptance,
    /// and whether any subtree diverged.
    fn transition(&mut self, current: &mut HamState) -> (f64, bool) {
        self.metric.sample_momentum(&mut self.rng, &mut current.p);
        let joint0 = self.joint(current);

        let mut tree = Tree {
            left: current.clone(),
            right: current.clone(),
            proposal: current.clone(),
            log_sum_weight: 0.0,
            p_sum: current.p.clone(),
            divergent: false,
            turning: false,
            sum_accept: 0.0,
            n_leaf: 0,
        };

        for depth in 0..self.max_tree_depth {
            let dir: f64 = if self.rng.random::<bool>() { 1.0 } else { -1.0 };
            let edge = if dir > 0.0 {
                tree.right.clone()
            } else {
                tree.left.clone()
            };
            let rho_existing = tree.p_sum.clone();
            let p_existing_junction = if dir > 0.0 {
                tree.right.p.clone()
            } else {
                tree.left.p.clone()
            };

            let subtree = self.build_tree(depth, &edge, dir, joint0);

            tree.sum_accept += subtree.sum_accept;
            tree.n_leaf += subtree.n_leaf;
            let divergent_subtree = subtree.divergent;
            tree.divergent = tree.divergent || subtree.divergent;

            if !divergent_subtree && !subtree.turning {
                // Progressive sampling: bias toward the fresh subtree.
                let accept_prob =
                    (subtree.log_sum_weight - tree.log_sum_weight).exp().min(1.0);
                let u: f64 = self.rng.random();
                if u < accept_prob {
                    tree.proposal = subtree.proposal.clone();
                }
            }
            tree.log_sum_weight = log_sum_exp(tree.log_sum_weight, subtree.log_sum_weight);

            let p_subtree_junction = if dir > 0.0 {
                subtree.left.p.clone()
            } else {
                subtree.right.p.clone()
            };
            let rho_subtree = subtree.p_sum.clone();
            for (a, b) in tree.p_sum.iter_mut().zip(&subtree.p_sum) {
                *a += b;
            }
            if dir > 0.0 {
                tree.right = subtree.right;
            } else {
                tree.left = subtree.left;
            }

            if divergent_subtree || subtree.turning {
                break;
            }
            let full = is_turning(&self.metric, &tree.p_sum, &tree.left.p, &tree.right.p);
            let cross1: Vec<f64> = rho_existing
                .iter()
                .zip(&p_subtree_junction)
                .map(|(a, b)| a + b)
                .collect();
            let cross2: Vec<f64> = rho_subtree
                .iter()
                .zip(&p_existing_junction)
                .map(|(a, b)| a + b)
                .collect();
            let (t1, t2) = if dir > 0.0 {
                (
                    is_turning(&self.metric, &cross1, &tree.left.p, &p_subtree_junction),
                    is_turning(&self.metric, &cross2, &p_existing_junction, &tree.right.p),
                )
            } else {
                (
                    is_turning(&self.metric, &cross2, &tree.left.p, &p_existing_junction),
                    is_turning(&self.metric, &cross1, &p_subtree_junction, &tree.right.p),
                )
            };
            if full || t1 || t2 {
                break;
            }
        }

        if tree.proposal.q.iter().all(|v| v.is_finite()) {
            *current = tree.proposal;
        }
        let mean_accept = if tree.n_leaf > 0 {
            (tree.sum_accept / tree.n_leaf as f64).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (mean_accept, tree.divergent)
    }
}

/// Dual-averaging controller (Hoffman & Gelman defaults).
struct DualAveraging {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    counter: usize,
    target: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps0: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * eps0).ln(),
            log_eps: eps0.ln(),
            log_eps_bar: 0.0,
            h_bar: 0.0,
            counter: 0,
            target,
        }
    }

    fn update(&mut self, accept: f64) -> f64 {
        self.counter += 1;
        let m = self.counter as f64;
        let eta = 1.0 / (m + Self::T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept);
        self.log_eps = self.mu - m.sqrt() / Self::GAMMA * self.h_bar;
        let weight = m.powf(-Self::KAPPA);
        self.log_eps_bar = (1.0 - weight) * self.log_eps_bar + weight * self.log_eps;
        self.log_eps.exp()
    }

    fn adapted(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Warmup schedule: a step-size-only head, expanding variance windows, and a
/// step-size-only tail (15% / 75% / 10%, scaled to the warmup length).
struct WindowSchedule {
    window_ends: Vec<usize>,
    region: (usize, usize),
}

impl WindowSchedule {
    fn new(num_warmup: usize) -> Self {
        let head = ((num_warmup as f64) * 0.15).round() as usize;
        let tail = ((num_warmup as f64) * 0.10).round() as usize;
        let start = head.min(num_warmup);
        let end = num_warmup.saturating_sub(tail).max(start);
        let mut window_ends = Vec::new();
        if end > start {
            let region = end - start;
            let mut size = (region / 6).max(5).min(region);
            let mut cursor = start;
            loop {
                let mut stop = cursor + size;
                // Merge a too-small final window into this one.
                if stop >= end || end - stop < size {
                    stop = end;
                }
                window_ends.push(stop);
                if stop >= end {
                    break;
                }
                cursor = stop;
                size *= 2;
            }
        }
        Self {
            window_ends,
            region: (start, end),
        }
    }

    fn in_region(&self, iter: usize) -> bool {
        iter >= self.region.0 && iter < self.region.1
    }

    fn is_window_end(&self, iter: usize) -> bool {
        self.window_ends.contains(&(iter + 1))
    }
}

/// Streaming variance accumulator for metric windows.
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn reset(&mut self) {
        self.n = 0;
        self.mean.iter_mut().for_each(|v| *v = 0.0);
        self.m2.iter_mut().for_each(|v| *v = 0.0);
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    /// Stan-style regularized variance estimate.
    fn regularized_variance(&self) -> Option<Vec<f64>> {
        if self.n < 5 {
            return None;
        }
        let n = self.n as f64;
        Some(
            self.m2
                .iter()
                .map(|&m2| {
                    let var = m2 / (n - 1.0);
                    ((n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))).max(1e-10)
                })
                .collect(),
        )
    }
}

/// Run one NUTS chain from `init`.
pub fn sample<T: LogDensityGrad>(target: &mut T, init: &[f64], config: &NutsConfig) -> Result<Chain> {
    config.validate()?;
    let dim = target.dim();
    if init.len() != dim {
        return Err(Error::InvalidDimension(format!(
            "init has length {} but the target dimension is {dim}",
            init.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Finite starting point, jittering if necessary.
    let mut q = init.to_vec();
    let mut grad = vec![0.0; dim];
    let mut logp = target.logp_and_grad(&q, &mut grad);
    let mut attempts = 0;
    while !(logp.is_finite() && grad.iter().all(|g| g.is_finite())) {
        attempts += 1;
        if attempts > INIT_ATTEMPTS {
            return Err(Error::SamplerInit {
                attempts: INIT_ATTEMPTS,
            });
        }
        for (qi, &x0) in q.iter_mut().zip(init) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *qi = x0 + INIT_JITTER_SCALE * z;
        }
        logp = target.logp_and_grad(&q, &mut grad);
    }

    let mut sampler = Sampler {
        target,
        metric: Metric::unit(dim),
        step_size: 1.0,
        max_tree_depth: config.max_tree_depth,
        rng,
        velocity: vec![0.0; dim],
    };
    let mut state = HamState {
        q,
        p: vec![0.0; dim],
        grad,
        logp,
    };

    sampler.step_size = sampler.find_reasonable_step_size(&state);
    let mut da = DualAveraging::new(sampler.step_size, config.target_accept);
    let schedule = WindowSchedule::new(config.num_warmup);
    let mut welford = Welford::new(dim);

    let num_kept = config.num_iterations - config.num_warmup;
    let mut draws = DMatrix::zeros(num_kept, dim);
    let mut accept_stats = Vec::with_capacity(config.num_iterations);
    let mut divergence_count = 0usize;

    for iter in 0..config.num_iterations {
        let warming = iter < config.num_warmup;
        let (accept, divergent) = sampler.transition(&mut state);
        accept_stats.push(accept);
        if divergent && !warming {
            divergence_count += 1;
        }

        if warming {
            sampler.step_size = da.update(accept);
            if schedule.in_region(iter) {
                welford.add(&state.q);
                if schedule.is_window_end(iter) {
                    if let Some(var) = welford.regularized_variance() {
                        sampler.metric = Metric { inv_mass: var };
                        sampler.step_size = sampler.find_reasonable_step_size(&state);
                        da = DualAveraging::new(sampler.step_size, config.target_accept);
                    }
                    welford.reset();
                }
            }
            if iter + 1 == config.num_warmup {
                sampler.step_size = da.adapted();
            }
        } else {
            for (d, &v) in state.q.iter().enumerate() {
                draws[(iter - config.num_warmup, d)] = v;
            }
        }
    }

    Ok(Chain {
        draws,
        accept_stats,
        divergence_count,
        step_size: sampler.step_size,
        mass_diag: sampler.metric.inv_mass,
    })
}

/// Per-coordinate map from the unconstrained space to the reporting scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordTransform {
    Identity,
    /// Coordinate was sampled on log scale; report exp of it.
    Exp,
}

/// Posterior means and central credible intervals on the transformed scale.
#[derive(Debug, Clone)]
pub struct Summary {
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
}

impl Summary {
    pub fn interval(&self, d: usize) -> (f64, f64) {
        (self.lower[d], self.upper[d])
    }
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Transform draws back to the constrained scale and summarize them.
pub fn summarize(chain: &Chain, transforms: &[CoordTransform], level: f64) -> Result<Summary> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "interval level must lie in (0, 1), got {level}"
        )));
    }
    let dim = chain.dim();
    if transforms.len() != dim {
        return Err(Error::InvalidDimension(format!(
            "{} transforms for {dim} coordinates",
            transforms.len()
        )));
    }
    let tail = 0.5 * (1.0 - level);
    let mut mean = vec![0.0; dim];
    let mut lower = vec![0.0; dim];
    let mut upper = vec![0.0; dim];
    let mut scratch = vec![0.0; chain.num_kept()];
    for d in 0..dim {
        for (row, slot) in scratch.iter_mut().enumerate() {
            let v = chain.draws[(row, d)];
            *slot = match transforms[d] {
                CoordTransform::Identity => v,
                CoordTransform::Exp => v.exp(),
            };
        }
        mean[d] = scratch.iter().sum::<f64>() / scratch.len() as f64;
        scratch.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lower[d] = quantile(&scratch, tail);
        upper[d] = quantile(&scratch, 1.0 - tail);
    }
    Ok(Summary {
        mean,
        lower,
        upper,
        level,
    })
}
