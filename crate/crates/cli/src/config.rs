//! Declarative run configuration. The schema is strict: unknown keys are
//! rejected before any computation starts.

use serde::Deserialize;

use odecol::harness::{FitSettings, Scenario};
use odecol::lambda::LambdaConfig;
use odecol::models::ModelRegistry;
use odecol::posterior::PriorKind;
use odecol::sampler::NutsConfig;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Registered model name ("fn", "lv", ...).
    pub model: String,
    pub basis: BasisBlock,
    #[serde(default)]
    pub quadrature: QuadratureBlock,
    pub lambda: LambdaBlock,
    pub nuts: NutsBlock,
    #[serde(default = "default_prior")]
    pub prior: PriorKind,
    /// Path to a dataset CSV (alternative to `simulation`).
    #[serde(default)]
    pub data: Option<String>,
    /// Synthetic-data block (alternative to `data`).
    #[serde(default)]
    pub simulation: Option<SimulationBlock>,
    /// Declared time domain; defaults to the data range.
    #[serde(default)]
    pub domain: Option<(f64, f64)>,
    #[serde(default = "default_output")]
    pub output: String,
    /// Worker threads for replications; 0 = all available cores.
    #[serde(default)]
    pub threads: usize,
    /// Grid size for trajectory-band output.
    #[serde(default = "default_band_grid")]
    pub band_grid: usize,
}

fn default_prior() -> PriorKind {
    PriorKind::Integral
}

fn default_output() -> String {
    "out".into()
}

fn default_band_grid() -> usize {
    201
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisBlock {
    pub order: usize,
    pub num_basis: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(untagged)]
pub enum QuadratureBlock {
    #[default]
    Auto,
    /// The literal string "auto".
    Keyword(AutoKeyword),
    Sizes {
        outer: usize,
        inner: usize,
    },
}

#[derive(Debug, Deserialize)]
pub enum AutoKeyword {
    #[serde(rename = "auto")]
    Auto,
}

impl QuadratureBlock {
    pub fn resolve(&self) -> Option<(usize, usize)> {
        match self {
            QuadratureBlock::Auto | QuadratureBlock::Keyword(_) => None,
            QuadratureBlock::Sizes { outer, inner } => Some((*outer, *inner)),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaBlock {
    pub lambda0: f64,
    pub lambda_star: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_lambda_max")]
    pub max: f64,
    #[serde(default = "default_multiplier")]
    pub multiplier: f64,
}

fn default_alpha() -> f64 {
    0.1
}

fn default_lambda_max() -> f64 {
    1e6
}

fn default_multiplier() -> f64 {
    10.0
}

impl LambdaBlock {
    pub fn to_config(&self) -> LambdaConfig {
        LambdaConfig {
            lambda0: self.lambda0,
            lambda_star: self.lambda_star,
            lambda_max: self.max,
            alpha: self.alpha,
            multiplier: self.multiplier,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NutsBlock {
    pub iterations: usize,
    pub warmup: usize,
    #[serde(default = "default_target_accept")]
    pub target_accept: f64,
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_target_accept() -> f64 {
    0.8
}

fn default_max_depth() -> usize {
    10
}

impl NutsBlock {
    pub fn to_config(&self) -> NutsConfig {
        NutsConfig {
            num_iterations: self.iterations,
            num_warmup: self.warmup,
            target_accept: self.target_accept,
            max_tree_depth: self.max_depth,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationBlock {
    pub theta: Vec<f64>,
    pub x0: Vec<f64>,
    pub sigma: Vec<f64>,
    pub times: TimesBlock,
    #[serde(default = "default_replications")]
    pub replications: usize,
}

fn default_replications() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum TimesBlock {
    Count { count: usize, start: f64, end: f64 },
    Explicit { explicit: Vec<f64> },
    PerComponent { per_component: Vec<Vec<f64>> },
}

impl TimesBlock {
    pub fn per_component(&self, num_components: usize) -> Vec<Vec<f64>> {
        match self {
            TimesBlock::Count { count, start, end } => {
                let times: Vec<f64> = (0..*count)
                    .map(|j| start + (end - start) * j as f64 / (*count as f64 - 1.0).max(1.0))
                    .collect();
                vec![times; num_components]
            }
            TimesBlock::Explicit { explicit } => vec![explicit.clone(); num_components],
            TimesBlock::PerComponent { per_component } => per_component.clone(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, String> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let config: RunConfig =
            serde_json::from_str(&raw).map_err(|e| format!("config schema error: {e}"))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), String> {
        if self.model.trim().is_empty() {
            return Err("model name must not be empty".into());
        }
        if self.basis.order < 2 || self.basis.num_basis < self.basis.order {
            return Err(format!(
                "invalid basis block: order {} with {} functions",
                self.basis.order, self.basis.num_basis
            ));
        }
        if self.nuts.warmup >= self.nuts.iterations {
            return Err("nuts.warmup must be smaller than nuts.iterations".into());
        }
        self.lambda
            .to_config()
            .validate()
            .map_err(|e| e.to_string())?;
        if self.data.is_some() == self.simulation.is_some() {
            return Err("exactly one of `data` or `simulation` must be given".into());
        }
        Ok(())
    }

    pub fn scenario(&self, registry: &ModelRegistry) -> Result<Scenario, String> {
        let model = registry.get(&self.model).map_err(|e| e.to_string())?;
        let sim = self
            .simulation
            .as_ref()
            .ok_or("this command needs a `simulation` block")?;
        let scenario = Scenario {
            model_name: self.model.clone(),
            model: model.clone(),
            theta_true: sim.theta.clone(),
            x0_true: sim.x0.clone(),
            sigma_true: sim.sigma.clone(),
            obs_times: sim.times.per_component(model.dim_state()),
            basis_order: self.basis.order,
            num_basis: self.basis.num_basis,
            quadrature: self.quadrature.resolve(),
            prior_kind: self.prior,
            lambda: self.lambda.to_config(),
            nuts: self.nuts.to_config(),
            replications: sim.replications,
            seed: self.nuts.seed,
        };
        scenario.validate().map_err(|e| e.to_string())?;
        Ok(scenario)
    }

    pub fn fit_settings(&self) -> FitSettings {
        FitSettings {
            basis_order: self.basis.order,
            num_basis: self.basis.num_basis,
            quadrature: self.quadrature.resolve(),
            prior_kind: self.prior,
            lambda: self.lambda.to_config(),
            nuts: self.nuts.to_config(),
            domain: self.domain,
            band_grid: self.band_grid,
        }
    }
}
