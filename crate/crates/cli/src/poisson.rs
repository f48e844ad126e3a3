//! Synthetic hierarchical Poisson model on scattered space-time sites:
//!
//!   yᵢ | bᵢ ~ Pois(exp bᵢ),  b | θ, β ~ N(Xβ, Σ(θ)),  β ~ N(0, σ²_β I),
//!
//! with a Gneiting space-time covariance plus nugget, scored at the b level by the
//! space-time tapered likelihood. The Gibbs scan updates b in sub-blocks and θ by
//! random-walk Metropolis, draws β exactly, and updates σ²_β by Metropolis. θ is the
//! only quasi block, so it alone takes the OFS adjustment.

use std::cell::RefCell;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::rc::Rc;

use ofs_core::coverage::{linear_design, scenario_prior};
use ofs_core::gp::{simulate_gp, CovarianceFamily, Locations, TaperSpec, TaperedDesign};
use ofs_core::linalg::{spd_inverse, Matrix, SpdMatrix, SymMatrix};
use ofs_core::model::log_prior;
use ofs_core::samplers::{
    conjugate_normal_draw, gibbs_run, marginal_ofs_gibbs, quasi_bayes_estimate, AdaptConfig, Chain, ChainConfig,
    GibbsBlock, GibbsSpec, Proposal,
};
use ofs_core::sandwich::{assemble_omega, credible_interval, AdjustmentMatrix, PMethod, QMethod, SandwichEstimate};
use ofs_core::seed::{rng_from_seed, split_seed};
use ofs_core::{Error, ParamVec, Prior, PriorSpec, Result, Support};
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::config::resolve_names;
use crate::{CliError, CliResult};

const THETA: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoissonConfig {
    pub sites: usize,
    /// Distinct observation times drawn per site out of `0..n_times`.
    pub times_per_site: usize,
    pub n_times: usize,
    /// Side of the square region holding the sites.
    pub region: f64,
    /// (σ², a, c, ω, nugget) of the Gneiting covariance with nugget.
    pub theta: Vec<f64>,
    /// Intercept followed by slopes on iid N(0, 1) covariates.
    pub beta: Vec<f64>,
    pub spatial_taper: f64,
    pub temporal_taper: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub b_block_size: usize,
    /// Coordinates of θ left unadjusted. When absent, bounded coordinates whose raw
    /// marginal is close to uniform are excluded (a heuristic).
    pub excluded: Option<Vec<String>>,
    /// Credible level 1 − α of the reported intervals.
    pub alpha: f64,
}

impl Default for PoissonConfig {
    fn default() -> Self {
        Self {
            sites: 50,
            times_per_site: 3,
            n_times: 6,
            region: 10.0,
            theta: vec![1.0, 0.5, 1.0, 0.5, 0.1],
            beta: vec![1.0, 0.5, -0.5],
            spatial_taper: 4.0,
            temporal_taper: 3.0,
            iterations: 4000,
            burn_in: 1000,
            b_block_size: 15,
            excluded: None,
            alpha: 0.1,
        }
    }
}

impl PoissonConfig {
    pub fn validate(&self) -> CliResult<()> {
        let fail = |m: String| Err(CliError::Config(format!("poisson: {m}")));
        if self.sites == 0 || self.times_per_site == 0 || self.times_per_site > self.n_times {
            return fail(format!(
                "need sites ≥ 1 and 1 ≤ times_per_site ≤ n_times, got {} / {} / {}",
                self.sites, self.times_per_site, self.n_times
            ));
        }
        if self.theta.len() != THETA {
            return fail(format!("theta needs (sigma2, a, c, omega, nugget), got {:?}", self.theta));
        }
        if let Err(e) = gneiting(&self.theta) {
            return fail(format!("theta: {e}"));
        }
        if self.beta.is_empty() {
            return fail("beta needs at least an intercept".into());
        }
        if !(self.region > 0.0) || !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail("region must be positive and alpha in (0, 1)".into());
        }
        if let Err(e) = TaperSpec::space_time(self.spatial_taper, self.temporal_taper) {
            return fail(format!("taper: {e}"));
        }
        if self.burn_in >= self.iterations || self.b_block_size == 0 {
            return fail("need burn_in < iterations and b_block_size ≥ 1".into());
        }
        Ok(())
    }
}

fn gneiting(theta: &[f64]) -> Result<CovarianceFamily<f64>> {
    CovarianceFamily::gneiting(theta[0], theta[1], theta[2], theta[3])?.with_nugget(theta[4])
}

/// Tapered precision pieces at one θ: log det(Σ∘T) and the weights T∘(Σ∘T)⁻¹ on the
/// stored pattern.
struct Precision {
    log_det: f64,
    weights: Vec<f64>,
}

pub struct PoissonDemo {
    design: TaperedDesign<f64>,
    template: CovarianceFamily<f64>,
    x: Matrix<f64>,
    counts: Vec<f64>,
    theta_prior: PriorSpec,
    sigma2_beta_prior: Prior,
    block_size: usize,
    /// The two most recent θ and their precisions: a θ update leaves one entry for
    /// the accepted value and one for the proposal.
    cache: RefCell<Vec<(Vec<f64>, Rc<Precision>)>>,
}

/// Simulated data with the latent field that generated it.
pub struct Simulated {
    pub locations: Locations<f64>,
    pub x: Matrix<f64>,
    pub latent: Vec<f64>,
    pub counts: Vec<f64>,
}

pub fn simulate(cfg: &PoissonConfig, seed: u64) -> Result<Simulated> {
    let mut rng = rng_from_seed(split_seed(seed, 0));
    let mut coords = Vec::new();
    let mut times = Vec::new();
    for _ in 0..cfg.sites {
        let site = [
            rand::Rng::random_range(&mut rng, 0.0..cfg.region),
            rand::Rng::random_range(&mut rng, 0.0..cfg.region),
        ];
        let mut pool: Vec<usize> = (0..cfg.n_times).collect();
        for k in 0..cfg.times_per_site {
            let pick = rand::Rng::random_range(&mut rng, k..pool.len());
            pool.swap(k, pick);
        }
        let mut chosen = pool[..cfg.times_per_site].to_vec();
        chosen.sort_unstable();
        for t in chosen {
            coords.push(site);
            times.push(t as f64);
        }
    }
    let locations = Locations::new(coords, Some(times))?;
    let x = linear_design(locations.len(), cfg.beta.len(), split_seed(seed, 1))?;
    let latent = simulate_gp(&gneiting(&cfg.theta)?, &locations, Some((&x, &cfg.beta)), split_seed(seed, 2))?.values;
    let mut rng = rng_from_seed(split_seed(seed, 3));
    let counts = latent
        .iter()
        .map(|b| {
            Poisson::new(b.exp())
                .map(|d| d.sample(&mut rng))
                .map_err(|e| Error::InvalidArgument(format!("Poisson rate exp({b}): {e}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Simulated {
        locations,
        x,
        latent,
        counts,
    })
}

impl PoissonDemo {
    pub fn new(sim: &Simulated, taper: TaperSpec<f64>, block_size: usize) -> Result<Self> {
        let template = gneiting(&[1.0, 1.0, 1.0, 0.5, 0.1])?;
        Ok(Self {
            design: TaperedDesign::new(sim.locations.clone(), taper)?,
            theta_prior: scenario_prior(&template.free_param_supports()),
            template,
            x: sim.x.clone(),
            counts: sim.counts.clone(),
            sigma2_beta_prior: Prior::HalfCauchy { scale: 5.0 },
            block_size,
            cache: RefCell::new(Vec::new()),
        })
    }

    pub fn n(&self) -> usize {
        self.counts.len()
    }

    pub fn q(&self) -> usize {
        self.x.cols()
    }

    fn beta_range(&self) -> std::ops::Range<usize> {
        THETA..THETA + self.q()
    }

    fn sigma2_beta_index(&self) -> usize {
        THETA + self.q()
    }

    fn b_range(&self) -> std::ops::Range<usize> {
        let start = self.sigma2_beta_index() + 1;
        start..start + self.n()
    }

    pub fn theta_names(&self) -> Vec<String> {
        self.template.free_param_names()
    }

    pub fn spec(&self) -> GibbsSpec {
        let mut names = self.theta_names();
        let mut supports = self.template.free_param_supports();
        names.extend((1..=self.q()).map(|k| format!("beta{k}")));
        supports.extend(vec![Support::AllReals; self.q()]);
        names.push("sigma2_beta".into());
        supports.push(Support::Positive);
        names.extend((1..=self.n()).map(|i| format!("b{i}")));
        supports.extend(vec![Support::AllReals; self.n()]);
        GibbsSpec { names, supports }
    }

    /// None when Σ∘T cannot be factored at θ, which the sampler treats as a rejection.
    fn precision(&self, theta: &[f64]) -> Result<Option<Rc<Precision>>> {
        if let Some((_, p)) = self.cache.borrow().iter().find(|(t, _)| t == theta) {
            return Ok(Some(p.clone()));
        }
        let chol = match self.design.factor(&self.template.with_params(theta)?) {
            Ok(c) => c,
            Err(Error::Cholesky { .. } | Error::NotPositiveDefinite { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let z = chol.restricted_inverse();
        let p = Rc::new(Precision {
            log_det: chol.log_det(),
            weights: self.design.entries().iter().map(|e| e.taper * z.get(e.i, e.j)).collect(),
        });
        let mut cache = self.cache.borrow_mut();
        if cache.len() == 2 {
            cache.remove(0);
        }
        cache.push((theta.to_vec(), p.clone()));
        Ok(Some(p))
    }

    fn residual(&self, state: &[f64]) -> Result<Vec<f64>> {
        let fit = self.x.matvec(&state[self.beta_range()])?;
        Ok(state[self.b_range()].iter().zip(&fit).map(|(b, f)| b - f).collect())
    }

    /// Tapered log-likelihood of b − Xβ at the state's θ.
    fn field_loglik(&self, state: &[f64]) -> Result<f64> {
        let Some(prec) = self.precision(&state[..THETA])? else {
            return Ok(f64::NEG_INFINITY);
        };
        let r = self.residual(state)?;
        let mut quad = 0.0;
        for (e, w) in self.design.entries().iter().zip(&prec.weights) {
            let t = w * r[e.i] * r[e.j];
            quad += if e.i == e.j { t } else { 2.0 * t };
        }
        let n = self.n() as f64;
        Ok(-0.5 * (n * (2.0 * std::f64::consts::PI).ln() + prec.log_det + quad))
    }

    fn counts_loglik(&self, state: &[f64]) -> f64 {
        state[self.b_range()].iter().zip(&self.counts).map(|(b, y)| y * b - b.exp()).sum()
    }

    /// β | b, θ, σ²_β: precision X'WX + I/σ²_β and mean (precision)⁻¹X'Wb.
    fn beta_conditional(&self, state: &[f64]) -> Result<(Vec<f64>, SymMatrix<f64>)> {
        let prec = self
            .precision(&state[..THETA])?
            .ok_or_else(|| Error::InvalidArgument("tapered covariance is singular at the current θ".into()))?;
        let (q, b) = (self.q(), &state[self.b_range()]);
        let mut xtwx = Matrix::zeros(q, q);
        let mut xtwb = vec![0.0; q];
        for (e, w) in self.design.entries().iter().zip(&prec.weights) {
            let (xi, xj) = (self.x.row(e.i), self.x.row(e.j));
            for k in 0..q {
                for l in 0..q {
                    xtwx[(k, l)] += w * xi[k] * xj[l];
                    if e.i != e.j {
                        xtwx[(k, l)] += w * xj[k] * xi[l];
                    }
                }
                xtwb[k] += w * xi[k] * b[e.j];
                if e.i != e.j {
                    xtwb[k] += w * xj[k] * b[e.i];
                }
            }
        }
        let s2 = state[self.sigma2_beta_index()];
        for k in 0..q {
            xtwx[(k, k)] += 1.0 / s2;
        }
        let cov = spd_inverse(&SpdMatrix::new(SymMatrix::from_dense(&xtwx)?)?)?;
        let mean = cov.to_dense().matvec(&xtwb)?;
        Ok((mean, cov.into_sym()))
    }

    fn sigma2_beta_log_conditional(&self, state: &[f64]) -> f64 {
        let s2 = state[self.sigma2_beta_index()];
        let beta = &state[self.beta_range()];
        let ss: f64 = beta.iter().map(|b| b * b).sum();
        -0.5 * beta.len() as f64 * s2.ln() - ss / (2.0 * s2) + self.sigma2_beta_prior.log_density(s2)
    }

    /// Systematic scan: b sub-blocks, θ (quasi), β (exact), σ²_β.
    pub fn blocks(&self) -> Vec<GibbsBlock<'_>> {
        let mut blocks: Vec<GibbsBlock<'_>> = self
            .b_range()
            .collect::<Vec<_>>()
            .chunks(self.block_size)
            .enumerate()
            .map(|(k, coords)| {
                GibbsBlock::metropolis(format!("b{}", k + 1), coords.to_vec(), move |s| {
                    Ok(self.counts_loglik(s) + self.field_loglik(s)?)
                })
            })
            .collect();
        blocks.push(
            GibbsBlock::metropolis("theta", (0..THETA).collect(), move |s| {
                let lp = log_prior(&self.theta_prior, &s[..THETA])?;
                if lp == f64::NEG_INFINITY {
                    return Ok(lp);
                }
                Ok(lp + self.field_loglik(s)?)
            })
            .quasi(),
        );
        blocks.push(GibbsBlock::direct("beta", self.beta_range().collect(), move |s, rng| {
            let (mean, cov) = self.beta_conditional(s)?;
            conjugate_normal_draw(&mean, &cov, rng)
        }));
        blocks.push(GibbsBlock::metropolis(
            "sigma2_beta",
            vec![self.sigma2_beta_index()],
            move |s| Ok(self.sigma2_beta_log_conditional(s)),
        ));
        blocks
    }

    /// Index of the θ block in [`Self::blocks`].
    pub fn theta_block(&self) -> usize {
        self.n().div_ceil(self.block_size)
    }

    pub fn initial_state(&self, theta: &[f64]) -> Vec<f64> {
        let mut s = theta.to_vec();
        s.extend(vec![0.0; self.q()]);
        s.push(1.0);
        s.extend(self.counts.iter().map(|y| (y + 0.5).ln()));
        s
    }

    pub fn initial_proposal(&self, theta: &[f64]) -> Proposal {
        let mut sd: Vec<f64> = theta.iter().map(|t| 0.05 * t.abs().max(0.1)).collect();
        sd.extend(vec![0.1; self.q()]);
        sd.push(0.5);
        sd.extend(vec![0.2; self.n()]);
        Proposal::StdDevs(sd)
    }

    /// Plug-in θ-block adjustment at θ̂.
    pub fn theta_adjustment(&self, theta_hat: &[f64], excluded: &[usize]) -> Result<AdjustmentMatrix> {
        let (p, q) = self.design.analytic_pq(&self.template.with_params(theta_hat)?)?;
        let est = SandwichEstimate::new(p.into_sym(), q, PMethod::Plugin, QMethod::Plugin, "theta block plug-in")?;
        let center = ParamVec::new(theta_hat.to_vec(), self.theta_names(), self.template.free_param_supports())?;
        assemble_omega(&est, &center, excluded)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalComparison {
    pub name: String,
    pub truth: f64,
    pub raw: (f64, f64),
    pub ofs: (f64, f64),
    /// Adjusted width over raw width.
    pub width_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSummary {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSummary {
    pub observations: usize,
    pub level: f64,
    pub excluded: Vec<String>,
    pub theta: Vec<IntervalComparison>,
    pub beta: Vec<BetaSummary>,
    /// Per Metropolis block, (name, raw-run rate, adjusted-run rate).
    pub acceptance: Vec<(String, f64, f64)>,
    pub support_violations: u64,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, v.sqrt())
}

fn write_data(path: &Path, sim: &Simulated) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let q = sim.x.cols();
    write!(w, "x,y,t,count,latent")?;
    for k in 1..q {
        write!(w, ",z{k}")?;
    }
    writeln!(w)?;
    let times = sim.locations.times.as_deref().unwrap_or(&[]);
    for i in 0..sim.counts.len() {
        let [x, y] = sim.locations.coords[i];
        write!(w, "{x:?},{y:?},{:?},{:?},{:?}", times[i], sim.counts[i], sim.latent[i])?;
        for k in 1..q {
            write!(w, ",{:?}", sim.x[(i, k)])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Bounded θ coordinates whose raw marginal sd exceeds 80% of the uniform's.
fn near_uniform_bounded(chain: &Chain, names: &[String]) -> Vec<String> {
    (0..names.len())
        .filter(|&k| chain.supports()[k] == Support::UnitInterval)
        .filter(|&k| mean_sd(&chain.column(k)).1 > 0.8 / 12f64.sqrt())
        .map(|k| names[k].clone())
        .collect()
}

/// Unadjusted run, then θ̂_QB and the marginal θ adjustment, then the adjusted run.
pub fn run_demo(cfg: &PoissonConfig, seed: u64, out: &Path) -> CliResult<DemoSummary> {
    let sim = simulate(cfg, seed)?;
    write_data(&out.join("poisson_data.csv"), &sim)?;
    let demo = PoissonDemo::new(
        &sim,
        TaperSpec::space_time(cfg.spatial_taper, cfg.temporal_taper)?,
        cfg.b_block_size,
    )?;
    let spec = demo.spec();
    let config = |s: u64| ChainConfig {
        iterations: cfg.iterations,
        burn_in: cfg.burn_in,
        thin: 1,
        initial: demo.initial_state(&cfg.theta),
        proposal: demo.initial_proposal(&cfg.theta),
        adapt: AdaptConfig {
            learn_covariance: true,
            ..AdaptConfig::default()
        },
        seed: s,
    };
    let raw = gibbs_run(&spec, &mut demo.blocks(), &config(split_seed(seed, 4)))?;
    raw.save(out, "poisson_raw")?;

    let names = demo.theta_names();
    let excluded_names = match &cfg.excluded {
        Some(x) => x.clone(),
        None => near_uniform_bounded(&raw, &names),
    };
    let excluded = resolve_names(&excluded_names, &names)?;
    let center = quasi_bayes_estimate(&raw)?;
    let omega = demo.theta_adjustment(&center.values()[..THETA], &excluded)?;
    let mut omegas = vec![None; demo.blocks().len()];
    omegas[demo.theta_block()] = Some(omega.clone());
    let mut f = BufWriter::new(File::create(out.join("poisson_omega.json"))?);
    serde_json::to_writer_pretty(&mut f, &omega).map_err(|e| CliError::Runtime(e.to_string()))?;
    f.flush()?;

    let adj = marginal_ofs_gibbs(&spec, &mut demo.blocks(), &omegas, &center, &config(split_seed(seed, 5)))?;
    adj.save(out, "poisson_ofs")?;

    let theta = (0..THETA)
        .map(|k| {
            let r = credible_interval(&raw, k, cfg.alpha)?;
            let o = credible_interval(&adj, k, cfg.alpha)?;
            Ok(IntervalComparison {
                name: names[k].clone(),
                truth: cfg.theta[k],
                raw: (r.lo, r.hi),
                ofs: (o.lo, o.hi),
                width_ratio: o.width() / r.width(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let beta = demo
        .beta_range()
        .enumerate()
        .map(|(k, j)| {
            let (mean, sd) = mean_sd(&raw.column(j));
            BetaSummary {
                name: spec.names[j].clone(),
                truth: cfg.beta[k],
                mean,
                sd,
            }
        })
        .collect();
    let acceptance = raw
        .meta()
        .blocks
        .iter()
        .zip(&adj.meta().blocks)
        .filter(|(r, _)| r.name != "beta")
        .map(|(r, a)| (r.name.clone(), r.rate(), a.rate()))
        .collect();
    Ok(DemoSummary {
        observations: demo.n(),
        level: 1.0 - cfg.alpha,
        excluded: excluded_names,
        theta,
        beta,
        acceptance,
        support_violations: adj.meta().support_violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PoissonConfig {
        PoissonConfig {
            sites: 12,
            times_per_site: 2,
            n_times: 4,
            ..PoissonConfig::default()
        }
    }

    #[test]
    fn simulation_layout() {
        let cfg = small();
        let sim = simulate(&cfg, 1).unwrap();
        assert_eq!(sim.counts.len(), 24);
        assert!(sim.counts.iter().all(|c| *c >= 0.0 && c.fract() == 0.0));
        let t = sim.locations.times.as_ref().unwrap();
        // Each site's two times are distinct.
        for s in 0..12 {
            assert_ne!(t[2 * s], t[2 * s + 1]);
            assert_eq!(sim.locations.coords[2 * s], sim.locations.coords[2 * s + 1]);
        }
        assert_eq!(simulate(&cfg, 1).unwrap().counts, sim.counts);
    }

    #[test]
    fn field_loglik_matches_tapered_loglik() {
        let cfg = small();
        let sim = simulate(&cfg, 2).unwrap();
        let demo = PoissonDemo::new(&sim, TaperSpec::space_time(4.0, 3.0).unwrap(), 5).unwrap();
        let mut state = demo.initial_state(&cfg.theta);
        state[THETA..THETA + 3].copy_from_slice(&[0.3, -0.2, 0.1]);
        let r = demo.residual(&state).unwrap();
        let want = demo.design.loglik(&gneiting(&cfg.theta).unwrap(), &r).unwrap();
        let got = demo.field_loglik(&state).unwrap();
        assert!((got - want).abs() < 1e-9 * want.abs(), "{got} vs {want}");
        // Second evaluation comes from the cache.
        assert_eq!(demo.field_loglik(&state).unwrap(), got);
    }

    #[test]
    fn beta_conditional_is_gaussian_in_beta() {
        // Mean and precision recovered from the log conditional along two directions.
        let cfg = small();
        let sim = simulate(&cfg, 3).unwrap();
        let demo = PoissonDemo::new(&sim, TaperSpec::space_time(4.0, 3.0).unwrap(), 5).unwrap();
        let state = demo.initial_state(&cfg.theta);
        let (mean, cov) = demo.beta_conditional(&state).unwrap();
        let f = |beta: &[f64]| {
            let mut s = state.clone();
            s[THETA..THETA + 3].copy_from_slice(beta);
            let s2 = s[demo.sigma2_beta_index()];
            demo.field_loglik(&s).unwrap() - beta.iter().map(|b| b * b).sum::<f64>() / (2.0 * s2)
        };
        let g = ofs_core::linalg::numerical_gradient(|b| Ok(f(b)), &mean, None).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-5), "{g:?}");
        let h = ofs_core::linalg::numerical_hessian(|b| Ok(f(b)), &mean, None).unwrap();
        let prec = spd_inverse(&SpdMatrix::new(cov).unwrap()).unwrap();
        for k in 0..3 {
            assert!((h.get(k, k) + prec.get(k, k)).abs() < 1e-3 * prec.get(k, k));
        }
    }

    #[test]
    fn invalid_configs() {
        let mut c = small();
        c.times_per_site = 9;
        assert!(c.validate().is_err());
        let mut c = small();
        c.theta[3] = 1.5;
        assert!(c.validate().is_err());
        assert!(small().validate().is_ok());
    }
}
