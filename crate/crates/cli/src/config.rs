//! The JSON run configuration shared by all subcommands. Every section is optional
//! at parse time; a subcommand that needs a section reports its absence as a
//! configuration error.

use std::path::{Path, PathBuf};

use ofs_core::coverage::{scenario_prior, EstimatorCombo, ExperimentConfig, Scenario};
use ofs_core::model::ObjectiveModel;
use ofs_core::samplers::{AdaptConfig, ChainConfig, Proposal};
use ofs_core::sandwich::DEFAULT_BOOTSTRAP_K;
use ofs_core::{ParamVec, PriorSpec};
use serde::{Deserialize, Serialize};

use crate::poisson::PoissonConfig;
use crate::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// The model that generates and scores the data for `run-chain` and `sandwich`.
    pub model: Option<Scenario>,
    /// Generating parameter values.
    pub theta0: Option<Vec<f64>>,
    /// Per-coordinate priors; defaults to the weakly informative scenario prior.
    pub prior: Option<PriorSpec>,
    pub chain: Option<ChainSection>,
    pub sandwich: Option<SandwichSection>,
    pub coverage: Option<ExperimentConfig>,
    pub poisson: Option<PoissonConfig>,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    pub iterations: usize,
    pub burn_in: usize,
    #[serde(default = "one")]
    pub thin: usize,
    #[serde(default)]
    pub adapt: AdaptConfig,
    /// Starting point; defaults to the quasi-posterior mode.
    pub initial: Option<Vec<f64>>,
    /// Defaults to (2.38²/p) times the inverse negative Hessian at the mode.
    pub proposal: Option<Proposal>,
}

fn one() -> usize {
    1
}

impl ChainSection {
    pub fn to_chain_config(&self, initial: Vec<f64>, proposal: Proposal, seed: u64) -> ChainConfig {
        ChainConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            initial,
            proposal,
            adapt: self.adapt.clone(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandwichSection {
    pub combos: Vec<EstimatorCombo>,
    #[serde(default = "default_k")]
    pub bootstrap_k: usize,
    /// Coordinates left unadjusted, by name.
    #[serde(default)]
    pub excluded: Vec<String>,
}

fn default_k() -> usize {
    DEFAULT_BOOTSTRAP_K
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    /// Parses the document, anchoring syntax and schema errors to a line and column.
    pub fn parse(text: &str, origin: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            // serde_json appends " at line L column C"; move it to the front.
            let msg = msg.rsplit_once(" at line ").map_or(msg.as_str(), |(m, _)| m);
            config_error(format!("{origin}:{}:{}: {msg}", e.line(), e.column()))
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("{}: cannot read config: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Replaces the seed everywhere it appears.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        if let Some(c) = &mut self.coverage {
            c.master_seed = seed;
        }
    }

    pub fn scenario(&self) -> CliResult<&Scenario> {
        match &self.model {
            None => Err(config_error("missing `model` section")),
            Some(Scenario::TaperedGpLinearGibbs { .. }) => Err(config_error(
                "model `tapered_gp_linear_gibbs` is only available through the `coverage` section",
            )),
            Some(s) => Ok(s),
        }
    }

    pub fn chain_section(&self) -> CliResult<&ChainSection> {
        let c = self.chain.as_ref().ok_or_else(|| config_error("missing `chain` section"))?;
        if c.burn_in >= c.iterations {
            return Err(config_error(format!(
                "chain.burn_in ({}) must be below chain.iterations ({})",
                c.burn_in, c.iterations
            )));
        }
        if c.thin == 0 {
            return Err(config_error("chain.thin must be at least 1"));
        }
        Ok(c)
    }

    pub fn sandwich_section(&self) -> CliResult<&SandwichSection> {
        let s = self.sandwich.as_ref().ok_or_else(|| config_error("missing `sandwich` section"))?;
        if s.combos.is_empty() {
            return Err(config_error("sandwich.combos is empty"));
        }
        Ok(s)
    }

    pub fn coverage_section(&self) -> CliResult<&ExperimentConfig> {
        let c = self.coverage.as_ref().ok_or_else(|| config_error("missing `coverage` section"))?;
        c.validate().map_err(|e| config_error(format!("coverage: {e}")))?;
        Ok(c)
    }

    /// θ₀ checked against the model's dimension and support.
    pub fn theta0_for<M: ObjectiveModel>(&self, model: &M) -> CliResult<Vec<f64>> {
        let t = self.theta0.as_ref().ok_or_else(|| config_error("missing `theta0`"))?;
        if t.len() != model.dim() {
            return Err(config_error(format!(
                "theta0 has {} entries but the model has {} parameters {:?}",
                t.len(),
                model.dim(),
                model.param_names()
            )));
        }
        ParamVec::for_model(model, t.clone()).map_err(|e| config_error(format!("theta0: {e}")))?;
        Ok(t.clone())
    }

    pub fn prior_for<M: ObjectiveModel>(&self, model: &M) -> CliResult<PriorSpec> {
        match &self.prior {
            None => Ok(scenario_prior(&model.supports())),
            Some(p) if p.dim() != model.dim() => Err(config_error(format!(
                "prior has {} entries but the model has {} parameters",
                p.dim(),
                model.dim()
            ))),
            Some(p) => PriorSpec::new(p.coords.clone()).map_err(|e| config_error(format!("prior: {e}"))),
        }
    }

    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

/// Indices of the named coordinates.
pub fn resolve_names(names: &[String], available: &[String]) -> CliResult<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            available
                .iter()
                .position(|a| a == n)
                .ok_or_else(|| config_error(format!("unknown coordinate `{n}`; available: {available:?}")))
        })
        .collect()
}
