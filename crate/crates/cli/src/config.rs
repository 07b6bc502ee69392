//! Versioned JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tdgf_core::evaluation::{DEFAULT_TAUS, DEFAULT_VARIANCE_LEVEL};
use tdgf_core::oracle::LsmBasis;
use tdgf_core::{content_hash, BlackScholes, Domain, Model, Payoff, Problem, TimeGrid, TrainConfig};

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Tdgf,
    Dgm,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Tdgf => "tdgf",
            Method::Dgm => "dgm",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tdgf" => Ok(Method::Tdgf),
            "dgm" => Ok(Method::Dgm),
            _ => Err(format!("unknown method `{s}` (expected tdgf or dgm)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PricingConfig {
    pub taus: Vec<f64>,
    /// Variance assigned to every asset on Heston surfaces.
    pub variance_level: f64,
}

impl Default for PricingConfig {
    fn default() -> Self {
        PricingConfig {
            taus: DEFAULT_TAUS.to_vec(),
            variance_level: DEFAULT_VARIANCE_LEVEL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub paths: usize,
    pub steps: usize,
    pub basis: LsmBasis,
    /// Tree depth for the single-asset Black–Scholes reference.
    pub binomial_steps: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            paths: 1000,
            steps: 1000,
            basis: LsmBasis::Mean,
            binomial_steps: 4000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub model: Model,
    pub strike: f64,
    /// Defaults to the model's standard sampling domain.
    pub domain: Option<Domain>,
    pub time_grid: TimeGrid,
    pub method: Method,
    pub train: TrainConfig,
    pub pricing: PricingConfig,
    pub reference: ReferenceConfig,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn default_model() -> Model {
    Model::BlackScholes(BlackScholes::uniform(1, 0.05, 0.5, 0.5))
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            model: default_model(),
            strike: 1.0,
            domain: None,
            time_grid: TimeGrid::default(),
            method: Method::Tdgf,
            train: TrainConfig::default(),
            pricing: PricingConfig::default(),
            reference: ReferenceConfig::default(),
            seed: 0,
            out: PathBuf::from("run"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        let mut cfg: RunConfig =
            serde_json::from_value(value.clone()).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        // Heston runs sample twice as densely unless told otherwise.
        let per_dim_given = value
            .get("train")
            .and_then(|t| t.get("samples_per_box_per_dim"))
            .is_some();
        if !per_dim_given {
            cfg.train.samples_per_box_per_dim = TrainConfig::for_model(&cfg.model).samples_per_box_per_dim;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Validation(format!(
                "invalid parameter `version`: expected {CONFIG_VERSION}, got {}",
                self.version
            )));
        }
        self.problem()?;
        self.time_grid.validate()?;
        let mut train = self.train.clone();
        train.seed = self.seed;
        train.validate()?;
        if self.pricing.taus.is_empty() {
            return Err(CliError::Validation("invalid parameter `taus`: at least one maturity".into()));
        }
        for &t in &self.pricing.taus {
            if !(t >= 0.0 && t <= self.time_grid.maturity) {
                return Err(CliError::Validation(format!(
                    "invalid parameter `taus`: {t} outside [0, {}]",
                    self.time_grid.maturity
                )));
            }
        }
        if !(self.pricing.variance_level > 0.0) {
            return Err(CliError::Validation("invalid parameter `variance_level`: must be positive".into()));
        }
        if self.reference.paths < 2 || self.reference.steps == 0 || self.reference.binomial_steps == 0 {
            return Err(CliError::Validation(
                "invalid parameter `reference`: need at least 2 paths and positive step counts".into(),
            ));
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<Problem, CliError> {
        let payoff = Payoff::basket_put(self.model.assets(), self.strike);
        let domain = self.domain.clone().unwrap_or_else(|| self.model.default_domain());
        Ok(Problem::new(self.model.clone(), payoff, domain)?)
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Hash of everything that affects results (the output path does not).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        content_hash(&c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_default_run() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c.time_grid.maturity, 1.0);
        assert_eq!(c.time_grid.steps, 100);
        assert_eq!(c.train.stages_per_step, 2000);
        assert_eq!(c.train.dgm_stages, 200_000);
        assert_eq!(c.train.adam.learning_rate, 3e-4);
        assert_eq!((c.train.adam.beta1, c.train.adam.beta2), (0.9, 0.999));
        assert_eq!((c.train.layers, c.train.hidden_width, c.train.boxes), (3, 50, 19));
        assert_eq!(c.train.samples_per_box_per_dim, 30);
        assert_eq!(c.pricing.taus, vec![0.25, 0.5, 0.75, 1.0]);
        assert_eq!(c.pricing.variance_level, 0.05);
        assert_eq!(c.strike, 1.0);
        c.validate().unwrap();
    }

    #[test]
    fn heston_doubles_samples() {
        let c = RunConfig::from_json(
            r#"{"model": {"kind": "heston", "rate": 0.05, "lambda": [2.0], "kappa": [0.01],
                "eta": [0.1], "rho_s": [[1.0]], "rho_sv": [-0.5]}}"#,
        )
        .unwrap();
        assert_eq!(c.train.samples_per_box_per_dim, 60);
        c.validate().unwrap();
    }

    #[test]
    fn missing_model_field_is_named() {
        let e = RunConfig::from_json(r#"{"model": {"kind": "black_scholes", "rate": 0.05, "rho": [[1.0]]}}"#)
            .unwrap_err();
        assert!(e.to_string().contains("sigma"), "{e}");
    }

    #[test]
    fn hash_ignores_output_path() {
        let a = RunConfig::default();
        let b = RunConfig {
            out: "elsewhere".into(),
            ..RunConfig::default()
        };
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig {
            seed: 1,
            ..RunConfig::default()
        };
        assert_ne!(a.hash(), c.hash());
    }
}
