use thiserror::Error;

/// Errors produced by the library.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("time {time} outside basis domain [{lo}, {hi}]")]
    OutOfDomain { time: f64, lo: f64, hi: f64 },

    #[error("penalized normal matrix is rank-deficient for component {component} (relative pivot {pivot:.3e} below 1e-10)")]
    RankDeficient { component: usize, pivot: f64 },

    #[error("component {component} has {found} observations but the basis needs at least {required}")]
    TooFewObservations {
        component: usize,
        found: usize,
        required: usize,
    },

    #[error("Gauss-Legendre Newton iteration failed to converge for node {node} of {n}")]
    QuadratureNonConvergence { n: usize, node: usize },

    #[error("Jacobian validation failed for '{model}': max relative error {max_rel_err:.3e} exceeds 1e-5")]
    JacobianMismatch { model: String, max_rel_err: f64 },

    #[error("sampler could not find a finite starting point after {attempts} jittered retries")]
    SamplerInit { attempts: usize },

    #[error("sampler failed at lambda = {lambda}: {source}")]
    SamplerAtLambda {
        lambda: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("ODE step limit ({max_steps}) reached at t = {last_time} (stiffness or blow-up)")]
    StepLimit { max_steps: usize, last_time: f64 },

    #[error("unknown model '{0}'")]
    UnknownModel(String),

    #[error("data error at line {line}: {message}")]
    DataParse { line: usize, message: String },

    #[error("data times [{data_lo}, {data_hi}] do not fit the declared domain [{lo}, {hi}]")]
    DomainMismatch {
        data_lo: f64,
        data_hi: f64,
        lo: f64,
        hi: f64,
    },

    #[error("degenerate credible interval (zero width) for parameter {0}")]
    DegenerateInterval(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
