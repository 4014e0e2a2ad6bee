//! CLI front end: simulate synthetic datasets, fit models to data, run
//! replicated studies, and check the numerical property suite.
//!
//! Exit codes: 0 success, 2 configuration/data error, 3 runtime or sampler
//! error.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use config::RunConfig;
use odecol::data::{read_csv, write_csv};
use odecol::harness::{fit_dataset, generate_data, run_study};
use odecol::models::ModelRegistry;
use odecol::posterior::PriorKind;
use odecol::report;

#[derive(Parser)]
#[command(name = "odecol", about = "Bayesian integral collocation for ODE parameter estimation", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic datasets from a config with a simulation block.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a model to a dataset CSV and write the result documents.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = parse_prior)]
        prior: Option<PriorKind>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run a replicated simulation study and write aggregate tables.
    Study {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = parse_prior)]
        prior: Option<PriorKind>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the numerical property suite (jacobians, gradients, quadrature).
    Check,
}

fn parse_prior(s: &str) -> Result<PriorKind, String> {
    match s {
        "integral" => Ok(PriorKind::Integral),
        "derivative" => Ok(PriorKind::Derivative),
        other => Err(format!("unknown prior '{other}' (expected integral|derivative)")),
    }
}

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate { config, out, seed } => cmd_simulate(&config, out, seed),
        Command::Fit {
            config,
            data,
            out,
            prior,
            seed,
            threads,
        } => cmd_fit(&config, data, out, prior, seed, threads),
        Command::Study {
            config,
            out,
            prior,
            seed,
            threads,
        } => cmd_study(&config, out, prior, seed, threads),
        Command::Check => cmd_check(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

enum CliError {
    Config(String),
    Runtime(String),
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn classify(e: odecol::Error) -> CliError {
    use odecol::Error::*;
    match e {
        InvalidDimension(_) | InvalidConfig(_) | UnknownModel(_) | DataParse { .. }
        | DomainMismatch { .. } | TooFewObservations { .. } | Io(_) | Csv(_) | Json(_) => {
            CliError::Config(e.to_string())
        }
        _ => CliError::Runtime(e.to_string()),
    }
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    config_sha256: String,
    seed: u64,
    version: String,
    threads: usize,
    unix_timestamp: u64,
    replication_seeds: Vec<u64>,
}

fn write_manifest(
    dir: &Path,
    command: &str,
    config_path: &Path,
    seed: u64,
    threads: usize,
    replication_seeds: Vec<u64>,
) -> Result<(), CliError> {
    let bytes = std::fs::read(config_path)
        .map_err(|e| config_err(format!("cannot hash config: {e}")))?;
    let digest = Sha256::digest(&bytes);
    let manifest = Manifest {
        command: command.to_string(),
        config_sha256: format!("{digest:x}"),
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        threads,
        unix_timestamp: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        replication_seeds,
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(())
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    RunConfig::load(path).map_err(config_err)
}

fn cmd_simulate(config_path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<(), CliError> {
    let mut config = load_config(config_path)?;
    if let Some(s) = seed {
        config.nuts.seed = s;
    }
    if config.simulation.is_none() {
        return Err(config_err("simulate needs a `simulation` block"));
    }
    let registry = ModelRegistry::with_builtins();
    let scenario = config.scenario(&registry).map_err(config_err)?;
    let out_dir = out.unwrap_or_else(|| PathBuf::from(&config.output));
    std::fs::create_dir_all(&out_dir).map_err(|e| config_err(e.to_string()))?;

    let mut seeds = Vec::with_capacity(scenario.replications);
    for r in 0..scenario.replications {
        let rep_seed = scenario.replication_seed(r);
        seeds.push(rep_seed);
        let mut obs = generate_data(&scenario, rep_seed).map_err(classify)?;
        obs.component_names = component_names(&scenario.model_name, obs.num_components());
        let path = out_dir.join(format!("rep_{r:03}.csv"));
        write_csv(&path, &obs).map_err(classify)?;
    }
    write_manifest(&out_dir, "simulate", config_path, scenario.seed, 1, seeds)?;
    println!(
        "wrote {} dataset(s) to {}",
        scenario.replications,
        out_dir.display()
    );
    Ok(())
}

fn component_names(model: &str, n: usize) -> Vec<String> {
    match (model, n) {
        ("fn" | "fitzhugh-nagumo", 2) => vec!["V".into(), "R".into()],
        ("lv" | "lotka-volterra", 2) => vec!["hare".into(), "lynx".into()],
        _ => (0..n).map(|i| format!("x{}", i + 1)).collect(),
    }
}

fn cmd_fit(
    config_path: &Path,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    prior: Option<PriorKind>,
    seed: Option<u64>,
    threads: Option<usize>,
) -> Result<(), CliError> {
    let mut config = load_config(config_path)?;
    if let Some(p) = prior {
        config.prior = p;
    }
    if let Some(s) = seed {
        config.nuts.seed = s;
    }
    let data_path = data
        .or_else(|| config.data.as_ref().map(PathBuf::from))
        .ok_or_else(|| config_err("fit needs --data or a `data` path in the config"))?;
    let registry = ModelRegistry::with_builtins();
    let model = registry.get(&config.model).map_err(classify)?;
    let obs = read_csv(&data_path).map_err(classify)?;
    let settings = config.fit_settings();
    let out_dir = out.unwrap_or_else(|| PathBuf::from(&config.output));

    match fit_dataset(&obs, model, &settings) {
        Ok(fit) => {
            report::write_fit_outputs(&out_dir, &fit).map_err(classify)?;
            write_manifest(
                &out_dir,
                "fit",
                config_path,
                settings.nuts.seed,
                threads.unwrap_or(1),
                vec![],
            )?;
            println!("lambda_hat = {}", fit.fit.lambda_hat);
            println!("theta_hat = {:?}", fit.fit.theta_mean);
            println!("outputs in {}", out_dir.display());
            Ok(())
        }
        Err(e @ odecol::Error::SamplerAtLambda { .. })
        | Err(e @ odecol::Error::SamplerInit { .. }) => {
            // Diagnostic dump so failed runs stay inspectable.
            let _ = std::fs::create_dir_all(&out_dir);
            let dump = serde_json::json!({
                "error": e.to_string(),
                "data": data_path.display().to_string(),
                "prior": format!("{:?}", settings.prior_kind),
                "seed": settings.nuts.seed,
            });
            let _ = std::fs::write(
                out_dir.join("diagnostics.json"),
                serde_json::to_string_pretty(&dump).unwrap_or_default(),
            );
            Err(CliError::Runtime(e.to_string()))
        }
        Err(e) => Err(classify(e)),
    }
}

fn cmd_study(
    config_path: &Path,
    out: Option<PathBuf>,
    prior: Option<PriorKind>,
    seed: Option<u64>,
    threads: Option<usize>,
) -> Result<(), CliError> {
    let mut config = load_config(config_path)?;
    if let Some(p) = prior {
        config.prior = p;
    }
    if let Some(s) = seed {
        config.nuts.seed = s;
    }
    if let Some(t) = threads {
        config.threads = t;
    }
    let registry = ModelRegistry::with_builtins();
    let scenario = config.scenario(&registry).map_err(config_err)?;
    let out_dir = out.unwrap_or_else(|| PathBuf::from(&config.output));

    let study = run_study(&scenario, config.threads).map_err(classify)?;
    let names = component_names(&scenario.model_name, scenario.model.dim_state());
    report::write_study_outputs(&out_dir, &scenario, &study, &names).map_err(classify)?;
    let seeds = (0..scenario.replications)
        .map(|r| scenario.replication_seed(r))
        .collect();
    write_manifest(
        &out_dir,
        "study",
        config_path,
        scenario.seed,
        config.threads,
        seeds,
    )?;

    let failed = study.failures.len();
    let total = scenario.replications;
    println!(
        "study complete: {} of {total} replications succeeded; outputs in {}",
        total - failed,
        out_dir.display()
    );
    for (p, (mean, rmse)) in study
        .aggregates
        .theta_mean
        .iter()
        .zip(&study.aggregates.theta_rmse)
        .enumerate()
    {
        println!("theta{}: mean {mean:.4} rmse {rmse:.4}", p + 1);
    }
    if failed * 5 > total {
        return Err(CliError::Runtime(format!(
            "{failed} of {total} replications failed (over 20%)"
        )));
    }
    Ok(())
}

fn cmd_check() -> Result<(), CliError> {
    use odecol::basis::make_basis;
    use odecol::models::{check_jacobians, fn_model, lv_model};
    use odecol::posterior::{gradient_check, PosteriorSpec};
    use odecol::quadrature::{build_plan, gauss_legendre};

    let mut failed = false;
    let mut report_line = |name: &str, ok: bool, detail: String| {
        println!("{}: {name} ({detail})", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failed = true;
        }
    };

    // Quadrature exactness up to degree 2n-1.
    let mut max_rel: f64 = 0.0;
    for n in 1..=20 {
        let rule = gauss_legendre(n, (0.7, 5.3)).expect("rule");
        for d in 0..=(2 * n - 1) {
            let got = rule.integrate(|t| t.powi(d as i32));
            let p = d as f64 + 1.0;
            let exact = (5.3f64.powf(p) - 0.7f64.powf(p)) / p;
            max_rel = max_rel.max(((got - exact) / exact).abs());
        }
    }
    report_line(
        "gauss-legendre exactness to degree 2n-1",
        max_rel < 1e-10,
        format!("max rel err {max_rel:.2e}"),
    );

    // Partition of unity.
    let basis = make_basis(4, 83, (0.0, 20.0)).expect("basis");
    let times: Vec<f64> = (0..1000).map(|i| 20.0 * i as f64 / 999.0).collect();
    let bm = odecol::basis::eval_basis(&basis, &times).expect("eval");
    let mut max_dev: f64 = 0.0;
    for j in 0..times.len() {
        let s: f64 = bm.value_row(j).iter().sum();
        max_dev = max_dev.max((s - 1.0).abs());
    }
    report_line(
        "B-spline partition of unity",
        max_dev < 1e-12,
        format!("max |sum-1| {max_dev:.2e}"),
    );

    // Jacobian checks.
    for model in [fn_model(), lv_model()] {
        let name = model.name().to_string();
        match check_jacobians(model.as_ref(), 100, 2024) {
            Ok(r) => report_line(
                &format!("{name} jacobians vs central differences"),
                r.max_rel_err() < 1e-5,
                format!("max rel err {:.2e}", r.max_rel_err()),
            ),
            Err(e) => report_line(&format!("{name} jacobians"), false, e.to_string()),
        }
    }

    // Posterior gradient checks, both priors and both models.
    let check_basis = make_basis(4, 13, (0.0, 20.0)).expect("basis");
    let plan = build_plan(&check_basis, 26, 5).expect("plan");
    let grid: Vec<f64> = (0..11).map(|j| 2.0 * j as f64).collect();
    let rows: Vec<Vec<f64>> = grid
        .iter()
        .map(|&t| vec![(t * 0.3).sin(), (t * 0.3 + 1.0).sin()])
        .collect();
    let data = odecol::data::Observations::from_rows(grid, &rows).expect("obs");
    for model in [fn_model(), lv_model()] {
        for kind in [PriorKind::Integral, PriorKind::Derivative] {
            let spec = PosteriorSpec::new(
                model.clone(),
                check_basis.clone(),
                plan.clone(),
                &data,
                5.0,
                kind,
            )
            .expect("spec");
            let rel = gradient_check(&spec, 10, 99);
            report_line(
                &format!("{} {:?}-prior gradient vs finite differences", model.name(), kind),
                rel < 1e-5,
                format!("max rel err {rel:.2e}"),
            );
        }
    }

    if failed {
        Err(CliError::Runtime("property suite failed".into()))
    } else {
        Ok(())
    }
}
