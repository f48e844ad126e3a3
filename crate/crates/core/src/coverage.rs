//! Repeated-sampling coverage of raw, OFS-adjusted and curvature-adjusted credible
//! intervals.
//!
//! Each dataset k uses seeds derived from (master seed, k): stream 0 simulates the
//! data, 1 drives the raw chain, 2 the adjusted or curvature chains (split by
//! estimator combination) and 3 the bootstrap.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianMeanModel;
use crate::gp::{grid_locations, CovarianceFamily, SpatialLinearModel, TaperSpec, TaperedGpModel};
use crate::linalg::stats::sort_floats;
use crate::linalg::{maximize, sample_covariance, spd_inverse, Matrix, NelderMeadConfig, SpdMatrix, SymMatrix};
use crate::model::{log_quasi_posterior, ObjectiveModel, ParamVec, Prior, PriorSpec, Support};
use crate::pairwise::PairwiseModel;
use crate::samplers::chain::{quasi_bayes_estimate, AdaptConfig, Chain, ChainConfig, Proposal};
use crate::samplers::gibbs::{gibbs_run, marginal_ofs_gibbs};
use crate::samplers::metropolis::{curvature_metropolis, rw_metropolis};
use crate::sandwich::{
    assemble_omega, interval_from_sorted, ofs_adjust, p_bootstrap, p_moment, p_plugin, q_from_chain, q_from_hessian,
    q_plugin, AdjustmentMatrix, PMethod, QMethod, SandwichEstimate, DEFAULT_BOOTSTRAP_K,
};
use crate::seed::{split_seed, stream_seed};

pub const DEFAULT_ALPHA_GRID: [f64; 6] = [0.01, 0.05, 0.10, 0.20, 0.33, 0.50];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scenario {
    /// iid N(θ, V) observations scored by their exact log-likelihood.
    ExactGaussianOracle { covariance: Vec<Vec<f64>>, sample_size: usize },
    /// One realization of an exponential-covariance field on an m × m grid, scored by
    /// the tapered likelihood.
    TaperedGp { grid: usize, spacing: f64, taper_range: f64 },
    /// As `tapered_gp` with a linear mean Xβ, X = (1, z₁, z₂, ...) with iid N(0, 1)
    /// covariates fixed across datasets, sampled by Gibbs.
    TaperedGpLinearGibbs {
        grid: usize,
        spacing: f64,
        taper_range: f64,
        beta: Vec<f64>,
    },
    /// R replicates of an exponential-covariance field scored by pairwise likelihood.
    PairwiseGaussian { grid: usize, spacing: f64, replicates: usize },
}

impl Scenario {
    pub fn label(&self) -> &'static str {
        match self {
            Scenario::ExactGaussianOracle { .. } => "exact_gaussian_oracle",
            Scenario::TaperedGp { .. } => "tapered_gp",
            Scenario::TaperedGpLinearGibbs { .. } => "tapered_gp_linear_gibbs",
            Scenario::PairwiseGaussian { .. } => "pairwise_gaussian",
        }
    }

    fn wrong_kind(&self, want: &str) -> Error {
        Error::InvalidArgument(format!("scenario {} is not {want}", self.label()))
    }

    pub fn tapered_model(&self) -> Result<TaperedGpModel> {
        let Scenario::TaperedGp {
            grid,
            spacing,
            taper_range,
        } = self
        else {
            return Err(self.wrong_kind("tapered_gp"));
        };
        TaperedGpModel::new(
            grid_locations(*grid, *spacing)?,
            TaperSpec::wendland(*taper_range)?,
            CovarianceFamily::exponential(1.0, 1.0)?,
        )
    }

    pub fn pairwise_model(&self) -> Result<PairwiseModel> {
        let Scenario::PairwiseGaussian {
            grid,
            spacing,
            replicates,
        } = self
        else {
            return Err(self.wrong_kind("pairwise_gaussian"));
        };
        PairwiseModel::new(CovarianceFamily::exponential(1.0, 1.0)?, grid_locations(*grid, *spacing)?, *replicates)
    }

    pub fn gaussian_model(&self) -> Result<GaussianMeanModel> {
        let Scenario::ExactGaussianOracle {
            covariance,
            sample_size,
        } = self
        else {
            return Err(self.wrong_kind("exact_gaussian_oracle"));
        };
        GaussianMeanModel::exact(SpdMatrix::from_rows(covariance)?, *sample_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Raw,
    Ofs,
    Curvature,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::Ofs => "ofs",
            Method::Curvature => "curvature",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorCombo {
    pub p: PMethod,
    pub q: QMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSettings {
    pub iterations: usize,
    pub burn_in: usize,
    #[serde(default = "one")]
    pub thin: usize,
    #[serde(default)]
    pub adapt: AdaptConfig,
}

fn one() -> usize {
    1
}

impl Default for ChainSettings {
    fn default() -> Self {
        Self {
            iterations: 12_000,
            burn_in: 2_000,
            thin: 1,
            adapt: AdaptConfig::default(),
        }
    }
}

fn default_datasets() -> usize {
    200
}

fn default_alphas() -> Vec<f64> {
    DEFAULT_ALPHA_GRID.to_vec()
}

fn default_methods() -> Vec<Method> {
    vec![Method::Raw, Method::Ofs]
}

fn default_bootstrap() -> usize {
    DEFAULT_BOOTSTRAP_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    /// Generating covariance or mean parameters (β for the Gibbs scenario lives in
    /// the scenario).
    pub theta0: Vec<f64>,
    #[serde(default = "default_datasets")]
    pub n_datasets: usize,
    #[serde(default = "default_alphas")]
    pub alpha_grid: Vec<f64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub combos: Vec<EstimatorCombo>,
    #[serde(default)]
    pub chain: ChainSettings,
    pub master_seed: u64,
    #[serde(default = "default_bootstrap")]
    pub bootstrap_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub scenario: String,
    pub coordinate: String,
    pub method: Method,
    pub p_method: PMethod,
    pub q_method: QMethod,
    pub nominal: f64,
    pub empirical: f64,
    pub mc_stderr: f64,
    pub n_effective: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub dataset: usize,
    pub method: Method,
    pub p_method: PMethod,
    pub q_method: QMethod,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageTable {
    pub rows: Vec<CoverageRow>,
    pub failures: Vec<FailureRecord>,
    /// Adjusted draws that left the parameter support, summed over datasets.
    pub support_violations: u64,
}

/// √(p(1−p)/n).
pub fn mc_stderr(p_hat: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    (p_hat * (1.0 - p_hat) / n as f64).sqrt()
}

/// Whether each coordinate's interval covers the truth, indexed [coordinate][α].
type Covers = Vec<Vec<bool>>;

fn covers(chain: &Chain, truth: &[f64], alphas: &[f64]) -> Result<Covers> {
    (0..chain.dim())
        .map(|j| {
            let mut col = chain.column(j);
            sort_floats(&mut col);
            alphas
                .iter()
                .map(|&a| Ok(interval_from_sorted(&col, &chain.names()[j], a)?.contains(truth[j])))
                .collect()
        })
        .collect()
}

struct ComboOutcome {
    ofs: Option<std::result::Result<Covers, String>>,
    curvature: Option<std::result::Result<Covers, String>>,
    violations: u64,
}

struct DatasetOutcome {
    raw: std::result::Result<Covers, String>,
    combos: Vec<ComboOutcome>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_datasets == 0 {
            return Err(Error::InvalidArgument("n_datasets must be at least 1".into()));
        }
        if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::InvalidArgument(format!("alpha_grid must lie in (0, 1): {:?}", self.alpha_grid)));
        }
        if self.chain.burn_in >= self.chain.iterations || self.chain.thin == 0 {
            return Err(Error::InvalidArgument("chain needs burn_in < iterations and thin ≥ 1".into()));
        }
        let adjusting = self.methods.iter().any(|m| *m != Method::Raw);
        if adjusting && self.combos.is_empty() {
            return Err(Error::InvalidArgument("adjusted methods need at least one estimator combo".into()));
        }
        match &self.scenario {
            Scenario::TaperedGpLinearGibbs { .. } => {
                if self.methods.contains(&Method::Curvature) {
                    return Err(Error::UnsupportedConfiguration(
                        "the curvature sampler is not defined for the Gibbs scenario".into(),
                    ));
                }
                for c in &self.combos {
                    if c.p != PMethod::Plugin || c.q == QMethod::Hessian {
                        return Err(Error::UnsupportedConfiguration(format!(
                            "Gibbs scenario supports P plugin with Q plugin or chain_cov, not {}/{}",
                            c.p.label(),
                            c.q.label()
                        )));
                    }
                }
            }
            Scenario::TaperedGp { .. } => self.check_caps(&self.tapered_model()?)?,
            Scenario::PairwiseGaussian { .. } => self.check_caps(&self.pairwise_model()?)?,
            Scenario::ExactGaussianOracle { .. } => self.check_caps(&self.gaussian_model()?)?,
        }
        Ok(())
    }

    fn check_caps<M: ObjectiveModel>(&self, model: &M) -> Result<()> {
        if self.theta0.len() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                found: self.theta0.len(),
            });
        }
        ParamVec::for_model(model, self.theta0.clone())?;
        let caps = model.capabilities();
        for c in &self.combos {
            let ok_p = match c.p {
                PMethod::Plugin => caps.analytic_p,
                PMethod::Moment => caps.per_replicate_score,
                PMethod::Bootstrap => caps.simulate,
            };
            let ok_q = c.q != QMethod::Plugin || caps.analytic_q;
            if !ok_p || !ok_q {
                return Err(Error::UnsupportedConfiguration(format!(
                    "scenario {} cannot provide the {}/{} estimators",
                    self.scenario.label(),
                    c.p.label(),
                    c.q.label()
                )));
            }
        }
        Ok(())
    }

    fn tapered_model(&self) -> Result<TaperedGpModel> {
        self.scenario.tapered_model()
    }

    fn pairwise_model(&self) -> Result<PairwiseModel> {
        self.scenario.pairwise_model()
    }

    fn gaussian_model(&self) -> Result<GaussianMeanModel> {
        self.scenario.gaussian_model()
    }

    fn chain_config(&self, initial: Vec<f64>, proposal: Proposal, seed: u64) -> ChainConfig {
        ChainConfig {
            iterations: self.chain.iterations,
            burn_in: self.chain.burn_in,
            thin: self.chain.thin,
            initial,
            proposal,
            adapt: self.chain.adapt.clone(),
            seed,
        }
    }
}

/// Coordinate names of the scenario's parameter vector.
pub fn coordinate_names(config: &ExperimentConfig) -> Result<Vec<String>> {
    Ok(match &config.scenario {
        Scenario::TaperedGp { .. } => config.tapered_model()?.param_names(),
        Scenario::PairwiseGaussian { .. } => config.pairwise_model()?.param_names(),
        Scenario::ExactGaussianOracle { .. } => config.gaussian_model()?.param_names(),
        Scenario::TaperedGpLinearGibbs { .. } => linear_model(config)?.spec().names,
    })
}

/// Runs every dataset (in parallel) and tabulates coverage.
pub fn run_coverage_experiment(config: &ExperimentConfig) -> Result<CoverageTable> {
    config.validate()?;
    let names = coordinate_names(config)?;
    let outcomes: Vec<DatasetOutcome> = match &config.scenario {
        Scenario::TaperedGp { .. } => {
            let model = config.tapered_model()?;
            run_all(config, |k| model_dataset(&model, config, k))
        }
        Scenario::PairwiseGaussian { .. } => {
            let model = config.pairwise_model()?;
            run_all(config, |k| model_dataset(&model, config, k))
        }
        Scenario::ExactGaussianOracle { .. } => {
            let model = config.gaussian_model()?;
            run_all(config, |k| model_dataset(&model, config, k))
        }
        Scenario::TaperedGpLinearGibbs { beta, .. } => {
            let model = linear_model(config)?;
            run_all(config, |k| gibbs_dataset(&model, beta, config, k))
        }
    };
    tabulate(config, &names, &outcomes)
}

fn run_all(config: &ExperimentConfig, f: impl Fn(usize) -> DatasetOutcome + Sync + Send) -> Vec<DatasetOutcome> {
    (0..config.n_datasets).into_par_iter().map(f).collect()
}

fn failed(config: &ExperimentConfig, reason: String) -> DatasetOutcome {
    DatasetOutcome {
        raw: Err(reason),
        combos: config
            .combos
            .iter()
            .map(|_| ComboOutcome {
                ofs: None,
                curvature: None,
                violations: 0,
            })
            .collect(),
    }
}

/// Weakly informative proper prior: half-Cauchy on positive parameters, uniform on
/// the unit interval, and a wide normal elsewhere.
pub fn scenario_prior(supports: &[Support]) -> PriorSpec {
    PriorSpec::new(
        supports
            .iter()
            .map(|s| match s {
                Support::Positive => Prior::HalfCauchy { scale: 5.0 },
                Support::UnitInterval => Prior::Uniform { lo: 0.0, hi: 1.0 },
                Support::AllReals => Prior::Normal { mean: 0.0, sd: 100.0 },
            })
            .collect(),
    )
    .expect("fixed prior parameters are valid")
}

/// Random-walk proposal covariance (2.38²/p)·Σ.
pub fn scaled_proposal(cov: &SymMatrix<f64>) -> Proposal {
    let p = cov.dim() as f64;
    Proposal::Covariance(cov.scaled(2.38 * 2.38 / p))
}

fn model_dataset<M: ObjectiveModel>(model: &M, config: &ExperimentConfig, k: usize) -> DatasetOutcome {
    let seed = |s: u64| stream_seed(config.master_seed, k as u64, s);
    let prior = scenario_prior(&model.supports());
    let theta0 = &config.theta0;
    let prepared = (|| -> Result<_> {
        let data = model.simulate(theta0, seed(0))?;
        let mode = maximize(
            |t| log_quasi_posterior(model, &prior, t, &data),
            theta0,
            &NelderMeadConfig::default(),
        )?;
        let q = q_from_hessian(model, Some(&prior), &data, &mode.point)?;
        let cov = spd_inverse(&q)?;
        let raw = rw_metropolis(
            model,
            &prior,
            &data,
            &config.chain_config(mode.point, scaled_proposal(cov.as_sym()), seed(1)),
        )?;
        Ok((data, raw))
    })();
    let (data, raw) = match prepared {
        Ok(x) => x,
        Err(e) => return failed(config, e.to_string()),
    };
    let raw_covers = covers(&raw, theta0, &config.alpha_grid).map_err(|e| e.to_string());
    let center = match quasi_bayes_estimate(&raw) {
        Ok(c) => c,
        Err(e) => return failed(config, e.to_string()),
    };
    let combos = config
        .combos
        .iter()
        .enumerate()
        .map(|(ci, combo)| {
            let omega = estimate(model, &data, &raw, &center, *combo, config.bootstrap_k, seed(3))
                .and_then(|est| assemble_omega(&est, &center, &[]).map(|w| (est, w)));
            let (est, omega) = match omega {
                Ok(x) => x,
                Err(e) => {
                    let msg = e.to_string();
                    return ComboOutcome {
                        ofs: config.methods.contains(&Method::Ofs).then(|| Err(msg.clone())),
                        curvature: config.methods.contains(&Method::Curvature).then(|| Err(msg)),
                        violations: 0,
                    };
                }
            };
            let mut violations = 0;
            let ofs = config.methods.contains(&Method::Ofs).then(|| {
                let adj = ofs_adjust(&raw, &omega).map_err(|e| e.to_string())?;
                violations += adj.meta().support_violations;
                covers(&adj, theta0, &config.alpha_grid).map_err(|e| e.to_string())
            });
            let curvature = config.methods.contains(&Method::Curvature).then(|| {
                (|| -> Result<Covers> {
                    // Target covariance ≈ Ω Q̂⁻¹ Ω'.
                    let qinv = spd_inverse(&est.q_hat)?.to_dense();
                    let w = omega.omega();
                    let target = SymMatrix::from_dense(&w.matmul(&qinv)?.matmul(&w.transpose())?)?;
                    let chain = curvature_metropolis(
                        model,
                        &prior,
                        &data,
                        &center,
                        &omega,
                        &config.chain_config(
                            center.values().to_vec(),
                            scaled_proposal(&target),
                            split_seed(seed(2), ci as u64),
                        ),
                    )?;
                    covers(&chain, theta0, &config.alpha_grid)
                })()
                .map_err(|e| e.to_string())
            });
            ComboOutcome {
                ofs,
                curvature,
                violations,
            }
        })
        .collect();
    DatasetOutcome {
        raw: raw_covers,
        combos,
    }
}

/// The (P̂, Q̂) pair for one estimator combination.
pub fn estimate<M: ObjectiveModel>(
    model: &M,
    data: &M::Data,
    raw: &Chain,
    center: &ParamVec,
    combo: EstimatorCombo,
    bootstrap_k: usize,
    bootstrap_seed: u64,
) -> Result<SandwichEstimate> {
    let c = center.values();
    let q = match combo.q {
        QMethod::ChainCov => q_from_chain(raw)?,
        QMethod::Hessian => q_from_hessian(model, None, data, c)?,
        QMethod::Plugin => q_plugin(model, c)?,
    };
    let p = match combo.p {
        PMethod::Plugin => p_plugin(model, c)?.into_sym(),
        PMethod::Moment => p_moment(model, data, c)?,
        PMethod::Bootstrap => p_bootstrap(model, c, bootstrap_k, bootstrap_seed)?,
    };
    let provenance = match combo.p {
        PMethod::Bootstrap => format!("K={bootstrap_k}, seed={bootstrap_seed}"),
        _ => format!("draws={}", raw.len()),
    };
    SandwichEstimate::new(p, q, combo.p, combo.q, provenance)
}

/// Fixed design (1, z₁, ..., z_{q−1}) with iid N(0, 1) covariates from the master seed.
pub fn linear_design(n: usize, q: usize, seed: u64) -> Result<Matrix<f64>> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = crate::seed::rng_from_seed(seed);
    let mut x = Matrix::zeros(n, q);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for k in 1..q {
            x[(i, k)] = StandardNormal.sample(&mut rng);
        }
    }
    Ok(x)
}

fn linear_model(config: &ExperimentConfig) -> Result<SpatialLinearModel> {
    let Scenario::TaperedGpLinearGibbs {
        grid,
        spacing,
        taper_range,
        beta,
    } = &config.scenario
    else {
        unreachable!()
    };
    if beta.is_empty() {
        return Err(Error::InvalidArgument("the linear model needs at least one coefficient".into()));
    }
    let locs = grid_locations(*grid, *spacing)?;
    let x = linear_design(locs.len(), beta.len(), split_seed(config.master_seed, u64::MAX))?;
    let model = SpatialLinearModel::new(
        locs,
        TaperSpec::wendland(*taper_range)?,
        CovarianceFamily::exponential(1.0, 1.0)?,
        x,
        scenario_prior(&[Support::Positive; 2]),
    )?;
    if config.theta0.len() != model.theta_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.theta_dim(),
            found: config.theta0.len(),
        });
    }
    Ok(model)
}

fn gibbs_dataset(model: &SpatialLinearModel, beta0: &[f64], config: &ExperimentConfig, k: usize) -> DatasetOutcome {
    let seed = |s: u64| stream_seed(config.master_seed, k as u64, s);
    let pt = model.theta_dim();
    let mut truth = config.theta0.clone();
    truth.extend_from_slice(beta0);
    let spec = model.spec();
    let prepared = (|| -> Result<_> {
        let data = model.simulate(&config.theta0, beta0, seed(0))?;
        let ols = model.ols(&data)?;
        let theta = model.fit_theta(&data, &ols, &config.theta0)?;
        let q = model.gp().analytic_q(&theta)?;
        let cov = spd_inverse(&q)?;
        let full_cov = SymMatrix::from_lower_fn(spec.dim(), |i, j| {
            if i < pt && j < pt {
                cov.get(i, j)
            } else if i == j {
                1.0
            } else {
                0.0
            }
        })?;
        let mut init = theta;
        init.extend(ols);
        let cc = config.chain_config(init, scaled_proposal(&full_cov), seed(1));
        let raw = gibbs_run(&spec, &mut model.blocks(&data), &cc)?;
        Ok((data, raw, cc))
    })();
    let (data, raw, cc) = match prepared {
        Ok(x) => x,
        Err(e) => return failed(config, e.to_string()),
    };
    let raw_covers = covers(&raw, &truth, &config.alpha_grid).map_err(|e| e.to_string());
    let center = match quasi_bayes_estimate(&raw) {
        Ok(c) => c,
        Err(e) => return failed(config, e.to_string()),
    };
    let theta_hat = center.values()[..pt].to_vec();
    let combos = config
        .combos
        .iter()
        .enumerate()
        .map(|(ci, combo)| {
            let run = || -> Result<(Covers, u64)> {
                let (p, q) = model.gp().design().analytic_pq(&model.gp().family(&theta_hat)?)?;
                let q = match combo.q {
                    QMethod::Plugin => q,
                    _ => {
                        let cols: Vec<Vec<f64>> = (0..raw.len()).map(|r| raw.draws().row(r)[..pt].to_vec()).collect();
                        spd_inverse(&SpdMatrix::new(sample_covariance(&Matrix::from_rows(&cols)?)?)?)?
                    }
                };
                let est = SandwichEstimate::new(p.into_sym(), q, combo.p, combo.q, "theta block")?;
                let c = ParamVec::new(theta_hat.clone(), model.gp().param_names(), model.gp().supports())?;
                let w: AdjustmentMatrix = assemble_omega(&est, &c, &[])?;
                let mut cc = cc.clone();
                cc.seed = split_seed(seed(2), ci as u64);
                let adj = marginal_ofs_gibbs(&spec, &mut model.blocks(&data), &[Some(w), None], &center, &cc)?;
                Ok((covers(&adj, &truth, &config.alpha_grid)?, adj.meta().support_violations))
            };
            let (ofs, violations) = match run() {
                Ok((c, v)) => (Ok(c), v),
                Err(e) => (Err(e.to_string()), 0),
            };
            ComboOutcome {
                ofs: config.methods.contains(&Method::Ofs).then_some(ofs),
                curvature: None,
                violations,
            }
        })
        .collect();
    DatasetOutcome {
        raw: raw_covers,
        combos,
    }
}

fn tabulate(config: &ExperimentConfig, names: &[String], outcomes: &[DatasetOutcome]) -> Result<CoverageTable> {
    let scenario = config.scenario.label().to_string();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut support_violations = 0;
    for (k, o) in outcomes.iter().enumerate() {
        for (ci, c) in o.combos.iter().enumerate() {
            support_violations += c.violations;
            let combo = config.combos[ci];
            let mut note = |method: Method, r: &Option<std::result::Result<Covers, String>>| {
                if let Some(Err(reason)) = r {
                    failures.push(FailureRecord {
                        dataset: k,
                        method,
                        p_method: combo.p,
                        q_method: combo.q,
                        reason: reason.clone(),
                    });
                }
            };
            note(Method::Ofs, &c.ofs);
            note(Method::Curvature, &c.curvature);
        }
        if let Err(reason) = &o.raw {
            let combo = config.combos.first().copied().unwrap_or(EstimatorCombo {
                p: PMethod::Plugin,
                q: QMethod::Plugin,
            });
            failures.push(FailureRecord {
                dataset: k,
                method: Method::Raw,
                p_method: combo.p,
                q_method: combo.q,
                reason: reason.clone(),
            });
        }
    }
    let combos: Vec<EstimatorCombo> = if config.combos.is_empty() {
        vec![EstimatorCombo {
            p: PMethod::Plugin,
            q: QMethod::Plugin,
        }]
    } else {
        config.combos.clone()
    };
    for (ci, combo) in combos.iter().enumerate() {
        for &method in &config.methods {
            let results: Vec<Option<&Covers>> = outcomes
                .iter()
                .map(|o| match method {
                    Method::Raw => o.raw.as_ref().ok(),
                    Method::Ofs => o.combos.get(ci).and_then(|c| c.ofs.as_ref()).and_then(|r| r.as_ref().ok()),
                    Method::Curvature => o
                        .combos
                        .get(ci)
                        .and_then(|c| c.curvature.as_ref())
                        .and_then(|r| r.as_ref().ok()),
                })
                .collect();
            let ok: Vec<&Covers> = results.iter().flatten().copied().collect();
            let n_eff = ok.len();
            for (j, name) in names.iter().enumerate() {
                for (ai, &alpha) in config.alpha_grid.iter().enumerate() {
                    let hits = ok.iter().filter(|c| c[j][ai]).count();
                    let emp = if n_eff == 0 { f64::NAN } else { hits as f64 / n_eff as f64 };
                    rows.push(CoverageRow {
                        scenario: scenario.clone(),
                        coordinate: name.clone(),
                        method,
                        p_method: combo.p,
                        q_method: combo.q,
                        nominal: 1.0 - alpha,
                        empirical: emp,
                        mc_stderr: mc_stderr(emp, n_eff),
                        n_effective: n_eff,
                        failures: outcomes.len() - n_eff,
                    });
                }
            }
        }
    }
    Ok(CoverageTable {
        rows,
        failures,
        support_violations,
    })
}

impl CoverageTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wtr.write_record([
            "scenario",
            "coordinate",
            "method",
            "p_method",
            "q_method",
            "nominal",
            "empirical",
            "mc_stderr",
            "n_effective",
            "failures",
        ])?;
        for r in &self.rows {
            wtr.serialize(r)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Vec<CoverageRow>> {
        let mut rdr = csv::Reader::from_reader(r);
        Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
    }

    /// Long-format curve points with ±2 standard-error bands.
    pub fn write_curve_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["series", "coordinate", "nominal", "empirical", "lower", "upper"])?;
        for r in &self.rows {
            let series = format!("{}/{}/{}", r.method.label(), r.p_method.label(), r.q_method.label());
            let band = 2.0 * r.mc_stderr;
            wtr.write_record([
                series,
                r.coordinate.clone(),
                format!("{:?}", r.nominal),
                format!("{:?}", r.empirical),
                format!("{:?}", (r.empirical - band).max(0.0)),
                format!("{:?}", (r.empirical + band).min(1.0)),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_failures_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wtr.write_record(["dataset", "method", "p_method", "q_method", "reason"])?;
        for f in &self.failures {
            wtr.serialize(f)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// The row for (coordinate, method, combo) at `nominal`.
    pub fn find(&self, coordinate: &str, method: Method, combo: EstimatorCombo, nominal: f64) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| {
            r.coordinate == coordinate
                && r.method == method
                && r.p_method == combo.p
                && r.q_method == combo.q
                && (r.nominal - nominal).abs() < 1e-9
        })
    }
}

/// Plain-text summary of coverage rows, one line per row.
pub fn render_report(rows: &[CoverageRow]) -> String {
    let mut out = format!(
        "{:<24} {:<10} {:<10} {:<10} {:<10} {:>8} {:>9} {:>8} {:>6} {:>6}\n",
        "scenario", "coordinate", "method", "p_method", "q_method", "nominal", "empirical", "stderr", "n", "fail"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<24} {:<10} {:<10} {:<10} {:<10} {:>8.3} {:>9.3} {:>8.4} {:>6} {:>6}\n",
            r.scenario,
            r.coordinate,
            r.method.label(),
            r.p_method.label(),
            r.q_method.label(),
            r.nominal,
            r.empirical,
            r.mc_stderr,
            r.n_effective,
            r.failures
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle(n_datasets: usize, methods: Vec<Method>) -> ExperimentConfig {
        ExperimentConfig {
            scenario: Scenario::ExactGaussianOracle {
                covariance: vec![vec![1.0, 0.3], vec![0.3, 2.0]],
                sample_size: 30,
            },
            theta0: vec![0.5, -1.0],
            n_datasets,
            alpha_grid: DEFAULT_ALPHA_GRID.to_vec(),
            methods,
            combos: vec![
                EstimatorCombo {
                    p: PMethod::Plugin,
                    q: QMethod::Plugin,
                },
                EstimatorCombo {
                    p: PMethod::Moment,
                    q: QMethod::ChainCov,
                },
            ],
            chain: ChainSettings {
                iterations: 2000,
                burn_in: 500,
                thin: 1,
                adapt: AdaptConfig::default(),
            },
            master_seed: 17,
            bootstrap_k: 100,
        }
    }

    #[test]
    fn stderr_examples() {
        assert!((mc_stderr(0.5, 100) - 0.05).abs() < 1e-15);
        assert_eq!(mc_stderr(0.0, 10), 0.0);
        assert!((mc_stderr(0.9, 1000) - 0.009_486_8).abs() < 1e-6);
    }

    #[test]
    fn structure_monotonicity_and_determinism() {
        let cfg = oracle(8, vec![Method::Raw, Method::Ofs, Method::Curvature]);
        let a = run_coverage_experiment(&cfg).unwrap();
        assert_eq!(a.rows.len(), 6 * 3 * 2 * 2);
        for method in [Method::Raw, Method::Ofs, Method::Curvature] {
            for coord in ["mu1", "mu2"] {
                let mut pts: Vec<&CoverageRow> = a
                    .rows
                    .iter()
                    .filter(|r| r.method == method && r.coordinate == coord && r.p_method == PMethod::Plugin)
                    .collect();
                pts.sort_by(|x, y| x.nominal.total_cmp(&y.nominal));
                assert!(pts.windows(2).all(|w| w[0].empirical <= w[1].empirical));
            }
        }
        assert!(a.rows.iter().all(|r| r.n_effective == 8 && r.failures == 0));
        let b = run_coverage_experiment(&cfg).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        let back = CoverageTable::read_csv(x.as_slice()).unwrap();
        assert_eq!(back.len(), a.rows.len());
    }

    #[test]
    fn empty_methods_give_header_only() {
        let cfg = oracle(2, vec![]);
        let t = run_coverage_experiment(&cfg).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), 1);
        assert!(s.starts_with("scenario,coordinate,method,p_method,q_method,nominal,empirical,mc_stderr,n_effective,failures"));
    }

    #[test]
    fn unavailable_estimators_are_config_errors() {
        let mut cfg = oracle(2, vec![Method::Raw, Method::Ofs]);
        cfg.scenario = Scenario::TaperedGp {
            grid: 4,
            spacing: 1.0,
            taper_range: 2.0,
        };
        cfg.theta0 = vec![1.0, 0.2];
        assert!(matches!(cfg.validate(), Err(Error::UnsupportedConfiguration(_))));
        cfg.alpha_grid = vec![1.5];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn per_dataset_failures_are_counted() {
        // Q from a chain with fewer draws than coordinates + 1 cannot be formed.
        let mut cfg = oracle(3, vec![Method::Raw, Method::Ofs]);
        cfg.chain = ChainSettings {
            iterations: 3,
            burn_in: 1,
            thin: 1,
            adapt: AdaptConfig::default(),
        };
        let t = run_coverage_experiment(&cfg).unwrap();
        let combo = cfg.combos[1];
        let row = t.find("mu1", Method::Ofs, combo, 0.9).unwrap();
        assert_eq!(row.n_effective, 0);
        assert_eq!(row.failures, 3);
        assert_eq!(t.failures.len(), 3);
        let raw = t.find("mu1", Method::Raw, combo, 0.9).unwrap();
        assert_eq!(raw.n_effective, 3);
    }

    #[test]
    fn config_json_defaults_and_unknown_keys() {
        let json = r#"{"scenario":{"kind":"pairwise_gaussian","grid":3,"spacing":1.0,"replicates":5},
            "theta0":[1.0,0.2],"combos":[{"p":"moment","q":"hessian"}],"master_seed":1}"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.n_datasets, 200);
        assert_eq!(cfg.alpha_grid, DEFAULT_ALPHA_GRID.to_vec());
        assert_eq!(cfg.chain.iterations, 12_000);
        cfg.validate().unwrap();
        let bad = json.replace("\"master_seed\":1", "\"master_seed\":1,\"extra\":2");
        assert!(serde_json::from_str::<ExperimentConfig>(&bad).is_err());
    }

    #[test]
    fn small_gibbs_scenario_runs() {
        let cfg = ExperimentConfig {
            scenario: Scenario::TaperedGpLinearGibbs {
                grid: 8,
                spacing: 1.0,
                taper_range: 2.5,
                beta: vec![-0.5, 0.0, 0.5],
            },
            theta0: vec![1.0, 0.2],
            n_datasets: 2,
            alpha_grid: vec![0.1],
            methods: vec![Method::Raw, Method::Ofs],
            combos: vec![EstimatorCombo {
                p: PMethod::Plugin,
                q: QMethod::Plugin,
            }],
            chain: ChainSettings {
                iterations: 1500,
                burn_in: 500,
                thin: 1,
                adapt: AdaptConfig::default(),
            },
            master_seed: 3,
            bootstrap_k: 100,
        };
        let t = run_coverage_experiment(&cfg).unwrap();
        assert_eq!(t.rows.len(), 5 * 2);
        assert!(t.failures.is_empty(), "{:?}", t.failures);
    }
}
