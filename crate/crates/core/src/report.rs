//! Result persistence: a JSON document for full fits plus flat CSV tables
//! (lambda trace, trajectory bands, study aggregates, replication ledger).
//!
//! CSV floats are written with 17 significant digits so every value
//! round-trips exactly.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::data::format_float;
use crate::error::Result;
use crate::harness::{DatasetFit, Scenario, StudyResult};
use crate::lambda::{LambdaTrace, StopReason};

#[derive(Serialize)]
struct TraceStepReport {
    lambda: f64,
    theta_mean: Vec<f64>,
    theta_intervals: Vec<(f64, f64)>,
    sigma_mean: Vec<f64>,
    err: f64,
}

#[derive(Serialize)]
struct TraceReport {
    selected: f64,
    stop_reason: StopReason,
    steps: Vec<TraceStepReport>,
}

fn trace_report(trace: &LambdaTrace) -> TraceReport {
    TraceReport {
        selected: trace.selected,
        stop_reason: trace.stop_reason,
        steps: trace
            .steps
            .iter()
            .map(|s| TraceStepReport {
                lambda: s.lambda,
                theta_mean: s.theta_mean.clone(),
                theta_intervals: s.theta_intervals.clone(),
                sigma_mean: s.sigma_mean.clone(),
                err: s.err_value,
            })
            .collect(),
    }
}

#[derive(Serialize)]
struct FitReport {
    lambda_hat: f64,
    err_at_selection: f64,
    theta_mean: Vec<f64>,
    theta_intervals: Vec<(f64, f64)>,
    sigma_mean: Vec<f64>,
    sigma_intervals: Vec<(f64, f64)>,
    x0_hat: Vec<f64>,
    x0_intervals: Vec<(f64, f64)>,
    component_names: Vec<String>,
    coefficient_means: Vec<Vec<f64>>,
    divergences: usize,
    step_size: f64,
    flat_theta_warning: bool,
    trace: TraceReport,
}

/// Serialize a complete dataset fit to a JSON value.
pub fn fit_report_json(fit: &DatasetFit) -> serde_json::Value {
    let coefficient_means = (0..fit.fit.coeff_mean.num_components())
        .map(|i| fit.fit.coeff_mean.component(i).to_vec())
        .collect();
    let report = FitReport {
        lambda_hat: fit.fit.lambda_hat,
        err_at_selection: fit.fit.err_value,
        theta_mean: fit.fit.theta_mean.clone(),
        theta_intervals: fit.fit.theta_intervals.clone(),
        sigma_mean: fit.fit.sigma_mean.clone(),
        sigma_intervals: fit.fit.sigma_intervals.clone(),
        x0_hat: fit.x0_hat.clone(),
        x0_intervals: fit.x0_intervals.clone(),
        component_names: fit.component_names.clone(),
        coefficient_means,
        divergences: fit.fit.chain.divergence_count,
        step_size: fit.fit.chain.step_size,
        flat_theta_warning: fit.flat_theta_warning,
        trace: trace_report(&fit.trace),
    };
    serde_json::to_value(report).expect("report serialization cannot fail")
}

pub fn write_fit_outputs(dir: &Path, fit: &DatasetFit) -> Result<()> {
    fs::create_dir_all(dir)?;
    let json = fit_report_json(fit);
    fs::write(dir.join("fit.json"), serde_json::to_string_pretty(&json)?)?;
    write_lambda_trace_csv(&dir.join("lambda_trace.csv"), &fit.trace)?;
    write_bands_csv(&dir.join("trajectory_bands.csv"), fit)?;
    Ok(())
}

pub fn write_lambda_trace_csv(path: &Path, trace: &LambdaTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let p = trace.steps.first().map_or(0, |s| s.theta_mean.len());
    let mut header = vec!["lambda".to_string(), "err".to_string(), "selected".to_string()];
    for d in 0..p {
        header.push(format!("theta{}_mean", d + 1));
        header.push(format!("theta{}_lo", d + 1));
        header.push(format!("theta{}_hi", d + 1));
    }
    w.write_record(&header)?;
    for step in &trace.steps {
        let mut row = vec![
            format_float(step.lambda),
            format_float(step.err_value),
            (step.lambda == trace.selected).to_string(),
        ];
        for d in 0..p {
            row.push(format_float(step.theta_mean[d]));
            row.push(format_float(step.theta_intervals[d].0));
            row.push(format_float(step.theta_intervals[d].1));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Plot-ready bands: one row per grid time with mean and the central band
/// per component.
pub fn write_bands_csv(path: &Path, fit: &DatasetFit) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["time".to_string()];
    for name in &fit.component_names {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_lo"));
        header.push(format!("{name}_hi"));
    }
    w.write_record(&header)?;
    for (g, &t) in fit.bands.times.iter().enumerate() {
        let mut row = vec![format_float(t)];
        for i in 0..fit.component_names.len() {
            row.push(format_float(fit.bands.mean[i][g]));
            row.push(format_float(fit.bands.lower[i][g]));
            row.push(format_float(fit.bands.upper[i][g]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Parameter table (mean and RMSE per parameter) mirroring the benchmark
/// presentation.
pub fn write_parameter_table_csv(path: &Path, scenario: &Scenario, study: &StudyResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["parameter", "true", "mean", "rmse"])?;
    for p in 0..scenario.model.dim_params() {
        w.write_record([
            format!("theta{}", p + 1),
            format_float(scenario.theta_true[p]),
            format_float(study.aggregates.theta_mean[p]),
            format_float(study.aggregates.theta_rmse[p]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Trajectory-RMSE table (median and IQR per component plus the total).
pub fn write_trajectory_table_csv(path: &Path, study: &StudyResult, names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["component", "median", "iqr", "mean_norm"])?;
    for (i, name) in names.iter().enumerate() {
        w.write_record([
            name.clone(),
            format_float(study.aggregates.traj_median[i]),
            format_float(study.aggregates.traj_iqr[i]),
            format_float(study.aggregates.mean_component_norms[i]),
        ])?;
    }
    let last = study.aggregates.traj_median.len() - 1;
    w.write_record([
        "total".to_string(),
        format_float(study.aggregates.traj_median[last]),
        format_float(study.aggregates.traj_iqr[last]),
        String::new(),
    ])?;
    w.flush()?;
    Ok(())
}

pub fn write_replications_csv(path: &Path, study: &StudyResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let p = study
        .records
        .first()
        .map_or(0, |r| r.theta_hat.len());
    let i = study
        .records
        .first()
        .map_or(0, |r| r.sigma_hat.len());
    let mut header = vec!["replication".to_string(), "seed".to_string()];
    for d in 0..p {
        header.push(format!("theta{}_hat", d + 1));
    }
    for d in 0..i {
        header.push(format!("sigma{}_hat", d + 1));
    }
    header.extend(
        [
            "lambda_hat",
            "stop_reason",
            "err_lambda0",
            "err_selected",
            "traj_rmse_total",
            "traj_rmse_total_true_x0",
            "wall_secs",
        ]
        .map(String::from),
    );
    for d in 0..i {
        header.push(format!("traj_rmse_{}", d + 1));
    }
    w.write_record(&header)?;
    for rec in &study.records {
        let mut row = vec![rec.replication.to_string(), rec.seed.to_string()];
        for v in &rec.theta_hat {
            row.push(format_float(*v));
        }
        for v in &rec.sigma_hat {
            row.push(format_float(*v));
        }
        row.push(format_float(rec.lambda_hat));
        row.push(
            serde_json::to_string(&rec.stop_reason)
                .unwrap()
                .trim_matches('"')
                .to_string(),
        );
        row.push(format_float(rec.err_lambda0));
        row.push(format_float(rec.err_selected));
        row.push(format_float(rec.traj_rmse.total));
        row.push(format_float(rec.traj_rmse_true_x0.total));
        row.push(format_float(rec.wall_secs));
        for v in &rec.traj_rmse.per_component {
            row.push(format_float(*v));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct FailureReport {
    replication: usize,
    seed: u64,
    message: String,
}

pub fn write_failure_ledger(path: &Path, study: &StudyResult) -> Result<()> {
    let failures: Vec<FailureReport> = study
        .failures
        .iter()
        .map(|f| FailureReport {
            replication: f.replication,
            seed: f.seed,
            message: f.message.clone(),
        })
        .collect();
    fs::write(path, serde_json::to_string_pretty(&failures)?)?;
    Ok(())
}

pub fn write_study_outputs(
    dir: &Path,
    scenario: &Scenario,
    study: &StudyResult,
    component_names: &[String],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_parameter_table_csv(&dir.join("parameters.csv"), scenario, study)?;
    write_trajectory_table_csv(&dir.join("trajectory_rmse.csv"), study, component_names)?;
    write_replications_csv(&dir.join("replications.csv"), study)?;
    write_failure_ledger(&dir.join("failures.json"), study)?;
    Ok(())
}
