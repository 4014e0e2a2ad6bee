//! End-to-end experiment driver: synthetic data generation, the
//! initialization protocol, replicated simulation studies, and real-data
//! fits with spline-based trajectory bands.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::basis::{eval_basis, make_basis, smooth_data};
use crate::data::Observations;
use crate::error::{Error, Result};
use crate::lambda::{
    select_lambda, FitResult, InitEstimate, LambdaConfig, LambdaTrace, StopReason,
};
use crate::models::OdeModel;
use crate::odesolve::{solve, trajectory_rmse, SolveConfig, TrajectoryRmse};
use crate::posterior::{PosteriorSpec, PosteriorState, PriorKind, ThetaOnlyTarget};
use crate::quadrature::{build_plan, default_quadrature_sizes};
use crate::sampler::{sample, summarize, CoordTransform, NutsConfig};

/// A fully specified simulation experiment.
#[derive(Clone)]
pub struct Scenario {
    pub model_name: String,
    pub model: OdeModel,
    pub theta_true: Vec<f64>,
    pub x0_true: Vec<f64>,
    /// Noise standard deviation per component.
    pub sigma_true: Vec<f64>,
    /// Observation times per component (equal or unequal spacing).
    pub obs_times: Vec<Vec<f64>>,
    pub basis_order: usize,
    pub num_basis: usize,
    /// Outer/inner quadrature sizes; None resolves the recommended sizes.
    pub quadrature: Option<(usize, usize)>,
    pub prior_kind: PriorKind,
    pub lambda: LambdaConfig,
    pub nuts: NutsConfig,
    pub replications: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::InvalidConfig("replications must be >= 1".into()));
        }
        if self.obs_times.len() != self.model.dim_state() {
            return Err(Error::InvalidDimension(format!(
                "{} observation-time lists for a {}-component model",
                self.obs_times.len(),
                self.model.dim_state()
            )));
        }
        if self.theta_true.len() != self.model.dim_params()
            || self.x0_true.len() != self.model.dim_state()
            || self.sigma_true.len() != self.model.dim_state()
        {
            return Err(Error::InvalidDimension(
                "scenario truth vectors do not match the model dimensions".into(),
            ));
        }
        self.lambda.validate()?;
        Ok(())
    }

    /// Union of all component observation times, sorted.
    pub fn union_times(&self) -> Vec<f64> {
        let mut all: Vec<f64> = Vec::new();
        for times in &self.obs_times {
            for &t in times {
                if !all.iter().any(|&u| (u - t).abs() < 1e-12) {
                    all.push(t);
                }
            }
        }
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        all
    }

    pub fn time_range(&self) -> (f64, f64) {
        let union = self.union_times();
        (union[0], *union.last().unwrap())
    }

    /// Deterministic per-replication seed.
    pub fn replication_seed(&self, replication: usize) -> u64 {
        self.seed
            .wrapping_add((replication as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

/// Solve the true trajectory at tight tolerance and add independent Gaussian
/// noise at each component's observation times.
pub fn generate_data(scenario: &Scenario, replication_seed: u64) -> Result<Observations> {
    let union = scenario.union_times();
    let config = SolveConfig {
        rel_tol: 1e-10,
        abs_tol: 1e-10,
        max_steps: 1_000_000,
    };
    let truth = solve(
        scenario.model.as_ref(),
        &scenario.theta_true,
        &scenario.x0_true,
        &union,
        &config,
    )?;
    let i_dim = scenario.model.dim_state();
    let mut values = DMatrix::from_element(union.len(), i_dim, f64::NAN);
    let mut rng = ChaCha8Rng::seed_from_u64(replication_seed);
    for (j, &t) in union.iter().enumerate() {
        for i in 0..i_dim {
            if scenario.obs_times[i]
                .iter()
                .any(|&u| (u - t).abs() < 1e-12)
            {
                let z: f64 = StandardNormal.sample(&mut rng);
                values[(j, i)] = truth[j][i] + scenario.sigma_true[i] * z;
            }
        }
    }
    Observations::new(union, values)
}

/// The problem definition shared by initialization and the lambda ladder.
pub struct Problem {
    pub spec: PosteriorSpec,
}

impl Problem {
    /// Assemble the basis, quadrature plan, and posterior spec for a dataset.
    /// Times must already start at the domain origin (see `fit_dataset` for
    /// the shift convention).
    pub fn assemble(
        model: OdeModel,
        data: &Observations,
        basis_order: usize,
        num_basis: usize,
        quadrature: Option<(usize, usize)>,
        prior_kind: PriorKind,
        lambda0: f64,
        domain: Option<(f64, f64)>,
    ) -> Result<Self> {
        let domain = domain.unwrap_or_else(|| data.time_range());
        let basis = make_basis(basis_order, num_basis, domain)?;
        let (m, k) = match quadrature {
            Some(mk) => mk,
            None => default_quadrature_sizes(&basis, model.poly_degree()),
        };
        let plan = build_plan(&basis, m, k)?;
        let spec = PosteriorSpec::new(model, basis, plan, data, lambda0, prior_kind)?;
        Ok(Self { spec })
    }
}

/// Initial smoothing penalty, fixed by the protocol.
pub const INIT_ROUGHNESS_PENALTY: f64 = 0.1;
/// Initial noise scale, fixed by the protocol.
pub const INIT_SIGMA: f64 = 0.1;

/// Initialization protocol: smooth the data with roughness penalty 0.1, fix
/// sigma at 0.1, then sample theta alone against the integral prior at
/// lambda0 (coefficients and sigma frozen) and take its posterior mean.
pub fn initialize(problem: &Problem, data: &Observations, nuts: &NutsConfig) -> Result<InitEstimate> {
    let spec = &problem.spec;
    let coeffs = smooth_data(
        &spec.basis,
        &data.times,
        &data.values,
        INIT_ROUGHNESS_PENALTY,
    )?;
    let log_sigma = vec![INIT_SIGMA.ln(); spec.dim_state()];
    let p_dim = spec.dim_params();

    // Theta-only target always uses the integral prior at lambda0.
    let integral_spec = spec.with_prior_kind(PriorKind::Integral);
    let mut target = ThetaOnlyTarget::new(
        Arc::new(integral_spec),
        coeffs.clone(),
        log_sigma.clone(),
    );

    if target.is_flat() {
        // Degenerate target: the field carries no parameter information.
        let theta_u = vec![0.0; p_dim];
        let theta = spec.theta_from_unconstrained(&theta_u);
        return Ok(InitEstimate {
            state: PosteriorState {
                theta_u,
                coeffs,
                log_sigma,
            },
            theta_intervals: theta.iter().map(|&v| (v, v)).collect(),
            flat_theta_warning: true,
        });
    }

    let init_u = vec![0.0; p_dim];
    let chain = sample(&mut target, &init_u, nuts)?;
    let transforms: Vec<CoordTransform> = spec
        .param_positive()
        .iter()
        .map(|&pos| {
            if pos {
                CoordTransform::Exp
            } else {
                CoordTransform::Identity
            }
        })
        .collect();
    let summary = summarize(&chain, &transforms, 0.95)?;
    let theta_u = spec.theta_to_unconstrained(&summary.mean);
    Ok(InitEstimate {
        state: PosteriorState {
            theta_u,
            coeffs,
            log_sigma,
        },
        theta_intervals: (0..p_dim).map(|d| summary.interval(d)).collect(),
        flat_theta_warning: false,
    })
}

/// Everything recorded for one successful replication.
#[derive(Debug, Clone)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    pub theta_hat: Vec<f64>,
    pub sigma_hat: Vec<f64>,
    pub lambda_hat: f64,
    pub stop_reason: StopReason,
    pub err_lambda0: f64,
    pub err_selected: f64,
    /// Reconstruction from the spline's estimated initial condition.
    pub traj_rmse: TrajectoryRmse,
    /// Reconstruction from the true initial condition, for reference.
    pub traj_rmse_true_x0: TrajectoryRmse,
    /// sqrt(integral of x_i(t)^2 dt) of the reconstructed components, giving
    /// the error scale.
    pub component_norms: Vec<f64>,
    pub x0_hat: Vec<f64>,
    pub wall_secs: f64,
}

#[derive(Debug, Clone)]
pub struct FailureRecord {
    pub replication: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct StudyAggregates {
    pub theta_mean: Vec<f64>,
    pub theta_rmse: Vec<f64>,
    pub sigma_mean: Vec<f64>,
    /// Median trajectory RMSE per component, then the total in the last slot.
    pub traj_median: Vec<f64>,
    pub traj_iqr: Vec<f64>,
    pub mean_component_norms: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub records: Vec<ReplicationRecord>,
    pub failures: Vec<FailureRecord>,
    pub aggregates: StudyAggregates,
}

fn quantile_of(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn median_iqr(values: &[f64]) -> (f64, f64) {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (
        quantile_of(&v, 0.5),
        quantile_of(&v, 0.75) - quantile_of(&v, 0.25),
    )
}

/// Run one replication end to end: generate, initialize, select lambda,
/// score the recovered trajectory.
pub fn run_replication(scenario: &Scenario, replication: usize) -> Result<ReplicationRecord> {
    let start = Instant::now();
    let seed = scenario.replication_seed(replication);
    let raw = generate_data(scenario, seed)?;

    // Internal domain starts at 0.
    let (t0, t_end) = scenario.time_range();
    let data = raw.shifted(t0);
    let problem = Problem::assemble(
        scenario.model.clone(),
        &data,
        scenario.basis_order,
        scenario.num_basis,
        scenario.quadrature,
        scenario.prior_kind,
        scenario.lambda.lambda0,
        Some((0.0, t_end - t0)),
    )?;

    let nuts = NutsConfig {
        seed,
        ..scenario.nuts.clone()
    };
    let init = initialize(&problem, &data, &nuts)?;
    let (trace, fit) = select_lambda(&problem.spec, &init, &scenario.lambda, &nuts)?;

    // Estimated initial condition from the spline at the domain start.
    let x0_hat: Vec<f64> = (0..scenario.model.dim_state())
        .map(|i| crate::basis::dot(&problem.spec.plan.basis_at_zero, fit.coeff_mean.component(i)))
        .collect();

    let interval = (t0, t_end);
    let traj = trajectory_rmse(
        scenario.model.as_ref(),
        &fit.theta_mean,
        &x0_hat,
        &scenario.theta_true,
        &scenario.x0_true,
        interval,
        2001,
    )?;
    let traj_true_x0 = trajectory_rmse(
        scenario.model.as_ref(),
        &fit.theta_mean,
        &scenario.x0_true,
        &scenario.theta_true,
        &scenario.x0_true,
        interval,
        2001,
    )?;
    let component_norms = reconstructed_norms(scenario, &fit.theta_mean, &x0_hat, interval)?;

    Ok(ReplicationRecord {
        replication,
        seed,
        theta_hat: fit.theta_mean.clone(),
        sigma_hat: fit.sigma_mean.clone(),
        lambda_hat: fit.lambda_hat,
        stop_reason: trace.stop_reason,
        err_lambda0: trace.steps[0].err_value,
        err_selected: fit.err_value,
        traj_rmse: traj,
        traj_rmse_true_x0: traj_true_x0,
        component_norms,
        x0_hat,
        wall_secs: start.elapsed().as_secs_f64(),
    })
}

fn reconstructed_norms(
    scenario: &Scenario,
    theta: &[f64],
    x0: &[f64],
    interval: (f64, f64),
) -> Result<Vec<f64>> {
    let n_grid = 2001;
    let (lo, hi) = interval;
    let grid: Vec<f64> = (0..n_grid)
        .map(|g| lo + (hi - lo) * g as f64 / (n_grid - 1) as f64)
        .collect();
    let traj = match solve(
        scenario.model.as_ref(),
        theta,
        x0,
        &grid,
        &SolveConfig::default(),
    ) {
        Ok(t) => t,
        Err(Error::StepLimit { .. }) => {
            return Ok(vec![f64::INFINITY; scenario.model.dim_state()])
        }
        Err(e) => return Err(e),
    };
    let dt = (hi - lo) / (n_grid - 1) as f64;
    let mut sq = vec![0.0; scenario.model.dim_state()];
    for row in traj.iter().take(n_grid - 1) {
        for (i, s) in sq.iter_mut().enumerate() {
            *s += row[i] * row[i] * dt;
        }
    }
    Ok(sq.iter().map(|v| v.sqrt()).collect())
}

/// Run every replication (in parallel) and aggregate. Failed replications go
/// to the failure ledger and are excluded from the aggregates.
pub fn run_study(scenario: &Scenario, threads: usize) -> Result<StudyResult> {
    scenario.validate()?;
    let indices: Vec<usize> = (0..scenario.replications).collect();
    let outcomes: Vec<(usize, Result<ReplicationRecord>)> = if threads == 1 {
        indices
            .iter()
            .map(|&r| (r, run_replication(scenario, r)))
            .collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| {
            indices
                .par_iter()
                .map(|&r| (r, run_replication(scenario, r)))
                .collect()
        })
    };

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, outcome) in outcomes {
        match outcome {
            Ok(record) => records.push(record),
            Err(e) => failures.push(FailureRecord {
                replication: r,
                seed: scenario.replication_seed(r),
                message: e.to_string(),
            }),
        }
    }
    let aggregates = aggregate(scenario, &records);
    Ok(StudyResult {
        records,
        failures,
        aggregates,
    })
}

fn aggregate(scenario: &Scenario, records: &[ReplicationRecord]) -> StudyAggregates {
    let p_dim = scenario.model.dim_params();
    let i_dim = scenario.model.dim_state();
    let n = records.len().max(1) as f64;

    let mut theta_mean = vec![0.0; p_dim];
    let mut theta_rmse = vec![0.0; p_dim];
    let mut sigma_mean = vec![0.0; i_dim];
    for rec in records {
        for p in 0..p_dim {
            theta_mean[p] += rec.theta_hat[p] / n;
            let d = rec.theta_hat[p] - scenario.theta_true[p];
            theta_rmse[p] += d * d / n;
        }
        for i in 0..i_dim {
            sigma_mean[i] += rec.sigma_hat[i] / n;
        }
    }
    for v in theta_rmse.iter_mut() {
        *v = v.sqrt();
    }

    let mut traj_median = Vec::with_capacity(i_dim + 1);
    let mut traj_iqr = Vec::with_capacity(i_dim + 1);
    for i in 0..i_dim {
        let vals: Vec<f64> = records
            .iter()
            .map(|r| r.traj_rmse.per_component[i])
            .collect();
        let (m, q) = median_iqr(&vals);
        traj_median.push(m);
        traj_iqr.push(q);
    }
    let totals: Vec<f64> = records.iter().map(|r| r.traj_rmse.total).collect();
    let (m, q) = median_iqr(&totals);
    traj_median.push(m);
    traj_iqr.push(q);

    let mut mean_component_norms = vec![0.0; i_dim];
    let finite: Vec<&ReplicationRecord> = records
        .iter()
        .filter(|r| r.component_norms.iter().all(|v| v.is_finite()))
        .collect();
    if !finite.is_empty() {
        for rec in &finite {
            for i in 0..i_dim {
                mean_component_norms[i] += rec.component_norms[i] / finite.len() as f64;
            }
        }
    }

    StudyAggregates {
        theta_mean,
        theta_rmse,
        sigma_mean,
        traj_median,
        traj_iqr,
        mean_component_norms,
    }
}

/// Pointwise trajectory mean and central band on a dense grid, from the
/// posterior draws of the spline representation.
#[derive(Debug, Clone)]
pub struct TrajectoryBands {
    /// Grid in the dataset's original time scale.
    pub times: Vec<f64>,
    /// Per component: (mean, lower, upper), each of grid length.
    pub mean: Vec<Vec<f64>>,
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

/// A complete real-data fit.
#[derive(Debug, Clone)]
pub struct DatasetFit {
    pub fit: FitResult,
    pub trace: LambdaTrace,
    pub bands: TrajectoryBands,
    pub x0_hat: Vec<f64>,
    pub x0_intervals: Vec<(f64, f64)>,
    /// Subtracted from all times internally; reports shift it back.
    pub time_offset: f64,
    pub component_names: Vec<String>,
    pub flat_theta_warning: bool,
}

#[derive(Debug, Clone)]
pub struct FitSettings {
    pub basis_order: usize,
    pub num_basis: usize,
    pub quadrature: Option<(usize, usize)>,
    pub prior_kind: PriorKind,
    pub lambda: LambdaConfig,
    pub nuts: NutsConfig,
    /// Declared domain in original time units; defaults to the data range.
    pub domain: Option<(f64, f64)>,
    /// Number of grid points for the trajectory bands.
    pub band_grid: usize,
}

/// Fit a model to observed data: full pipeline plus pointwise credible bands
/// from the spline representation.
pub fn fit_dataset(
    data: &Observations,
    model: OdeModel,
    settings: &FitSettings,
) -> Result<DatasetFit> {
    if let Some((lo, hi)) = settings.domain {
        let (dlo, dhi) = data.time_range();
        if dlo < lo - 1e-9 || dhi > hi + 1e-9 {
            return Err(Error::DomainMismatch {
                data_lo: dlo,
                data_hi: dhi,
                lo,
                hi,
            });
        }
    }
    let declared = settings.domain.unwrap_or_else(|| data.time_range());
    let offset = declared.0;
    let shifted = data.shifted(offset);
    let domain = (0.0, declared.1 - offset);

    let problem = Problem::assemble(
        model,
        &shifted,
        settings.basis_order,
        settings.num_basis,
        settings.quadrature,
        settings.prior_kind,
        settings.lambda.lambda0,
        Some(domain),
    )?;
    let init = initialize(&problem, &shifted, &settings.nuts)?;
    let (trace, fit) = select_lambda(&problem.spec, &init, &settings.lambda, &settings.nuts)?;

    let bands = spline_bands(&problem.spec, &fit, settings.band_grid, offset)?;
    let (x0_hat, x0_intervals) = x0_summary(&problem.spec, &fit);

    Ok(DatasetFit {
        fit,
        trace,
        bands,
        x0_hat,
        x0_intervals,
        time_offset: offset,
        component_names: data.component_names.clone(),
        flat_theta_warning: init.flat_theta_warning,
    })
}

fn spline_bands(
    spec: &PosteriorSpec,
    fit: &FitResult,
    n_grid: usize,
    offset: f64,
) -> Result<TrajectoryBands> {
    let (lo, hi) = spec.basis.domain;
    let grid: Vec<f64> = (0..n_grid)
        .map(|g| lo + (hi - lo) * g as f64 / (n_grid - 1) as f64)
        .collect();
    let basis = eval_basis(&spec.basis, &grid)?;
    let i_dim = spec.dim_state();
    let l = spec.num_basis();
    let p = spec.dim_params();
    let kept = fit.chain.num_kept();

    let mut mean = vec![vec![0.0; n_grid]; i_dim];
    let mut lower = vec![vec![0.0; n_grid]; i_dim];
    let mut upper = vec![vec![0.0; n_grid]; i_dim];
    let mut draws_at = vec![0.0; kept];
    for i in 0..i_dim {
        for g in 0..n_grid {
            let row = basis.value_row(g);
            for (d, slot) in draws_at.iter_mut().enumerate() {
                let c_start = p + i * l;
                let mut acc = 0.0;
                for (a, &phi) in row.iter().enumerate() {
                    acc += phi * fit.chain.draws[(d, c_start + a)];
                }
                *slot = acc;
            }
            mean[i][g] = draws_at.iter().sum::<f64>() / kept as f64;
            draws_at.sort_by(|a, b| a.partial_cmp(b).unwrap());
            lower[i][g] = quantile_of(&draws_at, 0.025);
            upper[i][g] = quantile_of(&draws_at, 0.975);
        }
    }
    Ok(TrajectoryBands {
        times: grid.iter().map(|t| t + offset).collect(),
        mean,
        lower,
        upper,
    })
}

fn x0_summary(spec: &PosteriorSpec, fit: &FitResult) -> (Vec<f64>, Vec<(f64, f64)>) {
    let i_dim = spec.dim_state();
    let l = spec.num_basis();
    let p = spec.dim_params();
    let kept = fit.chain.num_kept();
    let phi0 = &spec.plan.basis_at_zero;
    let mut x0_hat = Vec::with_capacity(i_dim);
    let mut intervals = Vec::with_capacity(i_dim);
    let mut vals = vec![0.0; kept];
    for i in 0..i_dim {
        for (d, slot) in vals.iter_mut().enumerate() {
            let c_start = p + i * l;
            let mut acc = 0.0;
            for (a, &phi) in phi0.iter().enumerate() {
                acc += phi * fit.chain.draws[(d, c_start + a)];
            }
            *slot = acc;
        }
        x0_hat.push(vals.iter().sum::<f64>() / kept as f64);
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        intervals.push((quantile_of(&vals, 0.025), quantile_of(&vals, 0.975)));
    }
    (x0_hat, intervals)
}

/// Standard scenario presets used throughout the studies.
pub mod presets {
    use super::*;
    use crate::models::{fn_model, lv_model};

    pub fn equally_spaced(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n)
            .map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64)
            .collect()
    }

    /// FitzHugh-Nagumo benchmark with `n_obs` equally spaced observations on
    /// [0, 20], matching the published study layout.
    pub fn fn_scenario(n_obs: usize, replications: usize, seed: u64) -> Scenario {
        let times = equally_spaced(n_obs, 0.0, 20.0);
        // Sparse designs use the smaller basis and ladder start.
        let (num_basis, quadrature, lambda0, lambda_star) = if n_obs <= 11 {
            (23, Some((50, 5)), 1.0, 100.0)
        } else {
            (83, Some((200, 5)), 100.0, 1000.0)
        };
        Scenario {
            model_name: "fn".into(),
            model: fn_model(),
            theta_true: vec![0.2, 0.2, 3.0],
            x0_true: vec![-1.0, 1.0],
            sigma_true: vec![0.2, 0.2],
            obs_times: vec![times.clone(), times],
            basis_order: 4,
            num_basis,
            quadrature,
            prior_kind: PriorKind::Integral,
            lambda: LambdaConfig {
                lambda0,
                lambda_star,
                lambda_max: 1e6,
                alpha: 0.1,
                multiplier: 10.0,
            },
            nuts: NutsConfig {
                num_iterations: 400,
                num_warmup: 200,
                target_accept: 0.8,
                max_tree_depth: 10,
                seed,
            },
            replications,
            seed,
        }
    }

    /// The irregular 11-point design.
    pub fn fn_unequal_scenario(replications: usize, seed: u64) -> Scenario {
        let times = vec![0.0, 1.0, 2.0, 3.0, 6.0, 9.0, 12.0, 15.0, 18.0, 19.0, 20.0];
        let mut s = fn_scenario(11, replications, seed);
        s.obs_times = vec![times.clone(), times];
        s
    }

    /// Lotka-Volterra settings used for the predator-prey fit.
    pub fn lv_settings(seed: u64) -> FitSettings {
        FitSettings {
            basis_order: 4,
            num_basis: 43,
            quadrature: Some((100, 4)),
            prior_kind: PriorKind::Integral,
            lambda: LambdaConfig {
                lambda0: 1.0,
                lambda_star: 100.0,
                lambda_max: 1e6,
                alpha: 0.1,
                multiplier: 10.0,
            },
            nuts: NutsConfig {
                num_iterations: 400,
                num_warmup: 200,
                target_accept: 0.8,
                max_tree_depth: 10,
                seed,
            },
            domain: None,
            band_grid: 201,
        }
    }

    pub fn lv_model_handle() -> OdeModel {
        lv_model()
    }
}

/// Convenience: Err at the initial lambda from the recorded trace.
pub fn err_path(trace: &LambdaTrace) -> Vec<(f64, f64)> {
    trace
        .steps
        .iter()
        .map(|s| (s.lambda, s.err_value))
        .collect()
}

/// Re-derive aggregates from records; used to validate aggregation.
pub fn recompute_aggregates(scenario: &Scenario, records: &[ReplicationRecord]) -> StudyAggregates {
    aggregate(scenario, records)
}
