//! One function per subcommand. Each returns a summary for the caller to print and
//! writes its artifacts under the output directory.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ofs_core::coverage::{estimate, render_report, run_coverage_experiment, scaled_proposal, CoverageTable, Scenario};
use ofs_core::gaussian::GaussianSample;
use ofs_core::gp::GpDataset;
use ofs_core::linalg::{maximize, spd_inverse, NelderMeadConfig};
use ofs_core::model::{log_quasi_posterior, ObjectiveModel};
use ofs_core::pairwise::ReplicatedDataset;
use ofs_core::samplers::{quasi_bayes_estimate, rw_metropolis, Adjusted, Chain};
use ofs_core::sandwich::{assemble_omega, ofs_adjust, ofs_unadjust, AdjustmentMatrix};
use ofs_core::seed::split_seed;
use serde::Serialize;

use crate::config::{resolve_names, RunConfig};
use crate::poisson::{run_demo, DemoSummary};
use crate::{CliError, CliResult};

/// CSV persistence for the datasets of the built-in models.
pub trait DataFile: Sized {
    fn save(&self, path: &Path) -> CliResult<()>;
    fn open(path: &Path) -> CliResult<Self>;
}

macro_rules! data_file {
    ($t:ty) => {
        impl DataFile for $t {
            fn save(&self, path: &Path) -> CliResult<()> {
                Ok(self.write_csv(BufWriter::new(File::create(path)?))?)
            }

            fn open(path: &Path) -> CliResult<Self> {
                Ok(<$t>::read_csv(BufReader::new(File::open(path)?))?)
            }
        }
    };
}

data_file!(GaussianSample);
data_file!(GpDataset);
data_file!(ReplicatedDataset);

/// Runs `$body` with `$m` bound to the model the scenario describes.
macro_rules! with_model {
    ($scenario:expr, $m:ident => $body:expr) => {{
        let s: &Scenario = $scenario;
        let bad = |e: ofs_core::Error| CliError::Config(format!("model: {e}"));
        match s {
            Scenario::ExactGaussianOracle { .. } => {
                let $m = s.gaussian_model().map_err(bad)?;
                $body
            }
            Scenario::TaperedGp { .. } => {
                let $m = s.tapered_model().map_err(bad)?;
                $body
            }
            Scenario::PairwiseGaussian { .. } => {
                let $m = s.pairwise_model().map_err(bad)?;
                $body
            }
            Scenario::TaperedGpLinearGibbs { .. } => Err(CliError::Config(
                "model `tapered_gp_linear_gibbs` is only available through the `coverage` section".into(),
            )),
        }
    }};
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| CliError::Runtime(e.to_string()))?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

#[derive(Debug, Clone, Serialize)]
pub struct RunChainSummary {
    pub chain: PathBuf,
    pub data: PathBuf,
    pub draws: usize,
    pub acceptance_rate: f64,
}

pub fn run_chain(cfg: &RunConfig, out: &Path) -> CliResult<RunChainSummary> {
    with_model!(cfg.scenario()?, m => run_chain_with(&m, cfg, out))
}

fn run_chain_with<M: ObjectiveModel>(model: &M, cfg: &RunConfig, out: &Path) -> CliResult<RunChainSummary>
where
    M::Data: DataFile,
{
    let theta0 = cfg.theta0_for(model)?;
    let prior = cfg.prior_for(model)?;
    let section = cfg.chain_section()?;
    create_dir(out)?;
    let data = model.simulate(&theta0, split_seed(cfg.seed, 0))?;
    let data_path = out.join("data.csv");
    data.save(&data_path)?;

    let mode = || -> CliResult<Vec<f64>> {
        let m = maximize(
            |t| log_quasi_posterior(model, &prior, t, &data),
            &theta0,
            &NelderMeadConfig::default(),
        )?;
        Ok(m.point)
    };
    let initial = match &section.initial {
        Some(x) => x.clone(),
        None => mode()?,
    };
    let proposal = match &section.proposal {
        Some(p) => p.clone(),
        None => {
            let q = ofs_core::sandwich::q_from_hessian(model, Some(&prior), &data, &initial)?;
            scaled_proposal(spd_inverse(&q)?.as_sym())
        }
    };
    let cc = section.to_chain_config(initial, proposal, split_seed(cfg.seed, 1));
    cc.validate(model.dim()).map_err(|e| CliError::Config(format!("chain: {e}")))?;
    let chain = rw_metropolis(model, &prior, &data, &cc)?;
    chain.save(out, "chain")?;
    Ok(RunChainSummary {
        chain: out.join("chain.csv"),
        data: data_path,
        draws: chain.len(),
        acceptance_rate: chain.acceptance_rate(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SandwichSummary {
    /// One adjustment file per estimator combination, in configuration order.
    pub omegas: Vec<PathBuf>,
}

pub fn sandwich(cfg: &RunConfig, chain_path: &Path, out: &Path) -> CliResult<SandwichSummary> {
    with_model!(cfg.scenario()?, m => sandwich_with(&m, cfg, chain_path, out))
}

fn sandwich_with<M: ObjectiveModel>(model: &M, cfg: &RunConfig, chain_path: &Path, out: &Path) -> CliResult<SandwichSummary>
where
    M::Data: DataFile,
{
    let section = cfg.sandwich_section()?;
    let excluded = resolve_names(&section.excluded, &model.param_names())?;
    let chain = Chain::load(chain_path)?;
    if chain.adjusted() != Adjusted::Raw {
        return Err(CliError::Runtime(format!(
            "{} is already adjusted ({:?}); sandwich estimates need the raw chain",
            chain_path.display(),
            chain.adjusted()
        )));
    }
    if chain.names() != model.param_names() {
        return Err(CliError::Runtime(format!(
            "chain coordinates {:?} do not match the model's {:?}",
            chain.names(),
            model.param_names()
        )));
    }
    // The data written next to the chain by run-chain, else the same simulation again.
    let beside = chain_path.with_file_name("data.csv");
    let data = if beside.exists() {
        M::Data::open(&beside)?
    } else {
        model.simulate(&cfg.theta0_for(model)?, split_seed(cfg.seed, 0))?
    };
    let center = quasi_bayes_estimate(&chain)?;
    create_dir(out)?;
    let mut omegas = Vec::new();
    for combo in &section.combos {
        let label = format!("{}/{}", combo.p.label(), combo.q.label());
        let est = estimate(model, &data, &chain, &center, *combo, section.bootstrap_k, split_seed(cfg.seed, 3))
            .map_err(|e| CliError::Runtime(format!("estimator {label}: {e}")))?;
        let omega = assemble_omega(&est, &center, &excluded)?;
        let path = out.join(format!("omega_{}_{}.json", combo.p.label(), combo.q.label()));
        write_json(&path, &omega)?;
        omegas.push(path);
    }
    Ok(SandwichSummary { omegas })
}

#[derive(Debug, Clone, Serialize)]
pub struct AdjustSummary {
    pub chain: PathBuf,
    pub support_violations: u64,
}

pub fn load_omega(path: &Path) -> CliResult<AdjustmentMatrix> {
    let file = File::open(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let w: AdjustmentMatrix = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    // Deserialization skips the invertibility check of the constructor.
    AdjustmentMatrix::from_matrix(w.omega().clone(), w.center().clone())?;
    Ok(w)
}

pub fn adjust(chain_path: &Path, omega_path: &Path, inverse: bool, out: &Path) -> CliResult<AdjustSummary> {
    let chain = Chain::load(chain_path)?;
    let omega = load_omega(omega_path)?;
    let adjusted = if inverse {
        ofs_unadjust(&chain, &omega)?
    } else {
        ofs_adjust(&chain, &omega)?
    };
    let stem = chain_path.file_stem().and_then(|s| s.to_str()).unwrap_or("chain");
    let stem = format!("{stem}_{}", if inverse { "unadjusted" } else { "ofs" });
    adjusted.save(out, &stem)?;
    Ok(AdjustSummary {
        chain: out.join(format!("{stem}.csv")),
        support_violations: adjusted.meta().support_violations,
    })
}

pub fn simulate_coverage(cfg: &RunConfig, out: &Path) -> CliResult<CoverageTable> {
    let exp = cfg.coverage_section()?;
    let table = run_coverage_experiment(exp)?;
    create_dir(out)?;
    table.write_csv(BufWriter::new(File::create(out.join("coverage.csv"))?))?;
    table.write_curve_csv(BufWriter::new(File::create(out.join("coverage_curve.csv"))?))?;
    table.write_failures_csv(BufWriter::new(File::create(out.join("coverage_failures.csv"))?))?;
    std::fs::write(out.join("report.txt"), render_report(&table.rows))?;
    Ok(table)
}

pub fn report(table_path: &Path) -> CliResult<String> {
    let file = File::open(table_path).map_err(|e| CliError::Runtime(format!("{}: {e}", table_path.display())))?;
    let rows = CoverageTable::read_csv(BufReader::new(file))?;
    Ok(render_report(&rows))
}

pub fn demo_poisson(cfg: &RunConfig, out: &Path) -> CliResult<DemoSummary> {
    let demo = cfg.poisson.clone().unwrap_or_default();
    demo.validate()?;
    create_dir(out)?;
    let summary = run_demo(&demo, cfg.seed, out)?;
    write_json(&out.join("poisson_summary.json"), &summary)?;
    Ok(summary)
}
