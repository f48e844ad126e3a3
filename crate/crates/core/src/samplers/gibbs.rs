//! Systematic-scan block Gibbs with Metropolis-within-Gibbs and exact conditional
//! draws, plus marginal and per-iteration (conditional) OFS adjustment of quasi blocks.

use rand_distr::{Distribution, StandardNormal};

use super::chain::{Adjusted, BlockStats, Chain, ChainConfig, ChainMeta, Proposal};
use super::metropolis::{at_iteration, Eval, Kernel};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, Matrix, SymMatrix};
use crate::model::{in_support, ParamVec, Support};
use crate::sandwich::AdjustmentMatrix;
use crate::seed::{rng_from_seed, Rng};

/// Log full conditional of a block, evaluated on the full parameter vector.
pub type LogConditional<'a> = Box<dyn FnMut(&[f64]) -> Result<f64> + 'a>;

/// Exact draw of a block given the full current parameter vector.
pub type DirectDraw<'a> = Box<dyn FnMut(&[f64], &mut Rng) -> Result<Vec<f64>> + 'a>;

pub enum BlockUpdate<'a> {
    /// Random-walk step on the block. Without an explicit proposal the chain
    /// proposal restricted to the block is used.
    Metropolis {
        log_conditional: LogConditional<'a>,
        proposal: Option<Proposal>,
    },
    Direct(DirectDraw<'a>),
}

pub struct GibbsBlock<'a> {
    pub name: String,
    pub coords: Vec<usize>,
    pub update: BlockUpdate<'a>,
    /// Whether the block's conditional involves the quasi-likelihood, i.e. whether
    /// it takes an OFS adjustment.
    pub quasi: bool,
}

impl<'a> GibbsBlock<'a> {
    pub fn metropolis(
        name: impl Into<String>,
        coords: Vec<usize>,
        log_conditional: impl FnMut(&[f64]) -> Result<f64> + 'a,
    ) -> Self {
        Self {
            name: name.into(),
            coords,
            update: BlockUpdate::Metropolis {
                log_conditional: Box::new(log_conditional),
                proposal: None,
            },
            quasi: false,
        }
    }

    pub fn direct(
        name: impl Into<String>,
        coords: Vec<usize>,
        draw: impl FnMut(&[f64], &mut Rng) -> Result<Vec<f64>> + 'a,
    ) -> Self {
        Self {
            name: name.into(),
            coords,
            update: BlockUpdate::Direct(Box::new(draw)),
            quasi: false,
        }
    }

    pub fn with_proposal(mut self, p: Proposal) -> Self {
        if let BlockUpdate::Metropolis { proposal, .. } = &mut self.update {
            *proposal = Some(p);
        }
        self
    }

    pub fn quasi(mut self) -> Self {
        self.quasi = true;
        self
    }
}

/// Names and supports of the full parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsSpec {
    pub names: Vec<String>,
    pub supports: Vec<Support>,
}

impl GibbsSpec {
    pub fn new(names: Vec<String>, supports: Vec<Support>) -> Result<Self> {
        if names.len() != supports.len() {
            return Err(Error::DimensionMismatch {
                expected: names.len(),
                found: supports.len(),
            });
        }
        Ok(Self { names, supports })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }
}

/// Draws from N(mean, cov); a covariance that is not positive definite is an error.
pub fn conjugate_normal_draw(mean: &[f64], cov: &SymMatrix<f64>, rng: &mut Rng) -> Result<Vec<f64>> {
    if mean.len() != cov.dim() {
        return Err(Error::DimensionMismatch {
            expected: cov.dim(),
            found: mean.len(),
        });
    }
    let l = cholesky(&cov.to_dense())?;
    let z: Vec<f64> = (0..mean.len()).map(|_| StandardNormal.sample(rng)).collect();
    Ok((0..mean.len())
        .map(|i| mean[i] + l.row(i)[..=i].iter().zip(&z).map(|(a, b)| a * b).sum::<f64>())
        .collect())
}

/// Plain systematic-scan Gibbs in declaration order.
pub fn gibbs_run(spec: &GibbsSpec, blocks: &mut [GibbsBlock<'_>], config: &ChainConfig) -> Result<Chain> {
    run(spec, blocks, config, Ofs::Off)
}

/// Gibbs where each quasi block's draw is mapped through a fixed adjustment about
/// θ̂_QB before it is recorded and passed on. `omegas[b]` is the adjustment for
/// block `b` on the block's own coordinates; it is recentered at θ̂_QB.
pub fn marginal_ofs_gibbs(
    spec: &GibbsSpec,
    blocks: &mut [GibbsBlock<'_>],
    omegas: &[Option<AdjustmentMatrix>],
    theta_qb: &ParamVec,
    config: &ChainConfig,
) -> Result<Chain> {
    if omegas.len() != blocks.len() {
        return Err(Error::DimensionMismatch {
            expected: blocks.len(),
            found: omegas.len(),
        });
    }
    if theta_qb.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            found: theta_qb.len(),
        });
    }
    let mut fixed = Vec::with_capacity(blocks.len());
    for (b, w) in blocks.iter().zip(omegas) {
        fixed.push(match (b.quasi, w) {
            (false, _) => None,
            (true, None) => {
                return Err(Error::InvalidArgument(format!("no adjustment matrix for quasi block {}", b.name)))
            }
            (true, Some(w)) => {
                let vals: Vec<f64> = b.coords.iter().map(|&c| theta_qb.values()[c]).collect();
                let names = b.coords.iter().map(|&c| spec.names[c].clone()).collect();
                let sup = b.coords.iter().map(|&c| spec.supports[c].clone()).collect();
                Some(w.recentered(ParamVec::new(vals, names, sup)?)?)
            }
        });
    }
    run(spec, blocks, config, Ofs::Marginal(fixed))
}

/// Like [`marginal_ofs_gibbs`] but the adjustment for a quasi block is re-estimated
/// on every scan by `estimator(block, θ)`, with θ the current full vector. This is
/// expensive and must be requested with `opt_in`.
pub fn conditional_ofs_gibbs<'e>(
    spec: &GibbsSpec,
    blocks: &mut [GibbsBlock<'_>],
    config: &ChainConfig,
    estimator: impl FnMut(usize, &[f64]) -> Result<AdjustmentMatrix> + 'e,
    opt_in: bool,
) -> Result<Chain> {
    if !opt_in {
        return Err(Error::UnsupportedConfiguration(
            "per-iteration adjustment re-estimation is costly and must be explicitly enabled".into(),
        ));
    }
    run(spec, blocks, config, Ofs::Conditional(Box::new(estimator)))
}

type Estimator<'e> = Box<dyn FnMut(usize, &[f64]) -> Result<AdjustmentMatrix> + 'e>;

enum Ofs<'e> {
    Off,
    Marginal(Vec<Option<AdjustmentMatrix>>),
    Conditional(Estimator<'e>),
}

impl Ofs<'_> {
    fn adjusted(&self) -> Adjusted {
        match self {
            Ofs::Off => Adjusted::Raw,
            _ => Adjusted::Ofs,
        }
    }
}

fn check_partition(blocks: &[GibbsBlock<'_>], p: usize) -> Result<()> {
    let mut seen = vec![false; p];
    for b in blocks {
        if b.coords.is_empty() {
            return Err(Error::InvalidArgument(format!("block {} covers no coordinates", b.name)));
        }
        for &c in &b.coords {
            if c >= p || seen[c] {
                return Err(Error::InvalidArgument(format!(
                    "blocks must partition the parameter vector; coordinate {c} in block {} is out of range or repeated",
                    b.name
                )));
            }
            seen[c] = true;
        }
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidArgument(format!("coordinate {c} is not covered by any block")));
    }
    Ok(())
}

fn scatter(target: &mut [f64], coords: &[usize], values: &[f64]) {
    for (&c, &v) in coords.iter().zip(values) {
        target[c] = v;
    }
}

fn run(spec: &GibbsSpec, blocks: &mut [GibbsBlock<'_>], config: &ChainConfig, mut ofs: Ofs<'_>) -> Result<Chain> {
    let p = spec.dim();
    config.validate(p)?;
    check_partition(blocks, p)?;
    if !in_support(&config.initial, &spec.supports) {
        return Err(Error::InvalidArgument(format!(
            "initial point {:?} outside the parameter support",
            config.initial
        )));
    }
    let nb = blocks.len();
    let block_supports: Vec<Vec<Support>> = blocks
        .iter()
        .map(|b| b.coords.iter().map(|&c| spec.supports[c].clone()).collect())
        .collect();
    let mut kernels: Vec<Option<Kernel>> = Vec::with_capacity(nb);
    for b in blocks.iter() {
        kernels.push(match &b.update {
            BlockUpdate::Metropolis { proposal, .. } => {
                let prop = match proposal {
                    Some(pr) if pr.dim() == b.coords.len() => pr.clone(),
                    Some(pr) => {
                        return Err(Error::DimensionMismatch {
                            expected: b.coords.len(),
                            found: pr.dim(),
                        })
                    }
                    None => config.proposal.select(&b.coords)?,
                };
                Some(Kernel::new(&prop, &config.adapt)?)
            }
            BlockUpdate::Direct(_) => None,
        });
    }

    let mut public = config.initial.clone();
    let mut raw: Vec<Vec<f64>> = blocks
        .iter()
        .map(|b| b.coords.iter().map(|&c| public[c]).collect())
        .collect();
    // Current log conditional of each Metropolis block; None once another block moved.
    let mut cached: Vec<Option<f64>> = vec![None; nb];
    let mut last_log = 0.0;
    for (bi, b) in blocks.iter_mut().enumerate() {
        if let BlockUpdate::Metropolis { log_conditional, .. } = &mut b.update {
            let v = log_conditional(&public)?;
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "initial point {public:?} has no finite log conditional for block {}",
                    b.name
                )));
            }
            cached[bi] = Some(v);
            last_log = v;
        }
    }

    let kept = config.kept();
    let mut draws = Vec::with_capacity(kept * p);
    let mut logs = Vec::with_capacity(kept);
    let mut stats: Vec<BlockStats> = blocks
        .iter()
        .map(|b| BlockStats {
            name: b.name.clone(),
            accepted: 0,
            proposed: 0,
        })
        .collect();
    let mut violations = 0u64;
    let learn_at = config.burn_in / 2;
    let mut histories: Vec<Vec<Vec<f64>>> = vec![Vec::new(); nb];
    let mut rng = rng_from_seed(config.seed);

    for it in 0..config.iterations {
        let burn = it < config.burn_in;
        for bi in 0..nb {
            let block = &mut blocks[bi];
            let coords = block.coords.clone();
            let before_raw = raw[bi].clone();
            let before_cached = cached[bi];
            let mut work = public.clone();
            scatter(&mut work, &coords, &raw[bi]);

            let accepted = match &mut block.update {
                BlockUpdate::Metropolis { log_conditional, .. } => {
                    let kernel = kernels[bi].as_mut().expect("metropolis block has a kernel");
                    let mut value = match cached[bi] {
                        Some(v) => v,
                        None => {
                            let v = log_conditional(&work).map_err(|e| at_iteration(it, e))?;
                            if v.is_nan() {
                                return Err(at_iteration(
                                    it,
                                    Error::NonFinite {
                                        value: v,
                                        point: work.clone(),
                                    },
                                ));
                            }
                            v
                        }
                    };
                    let sup = &block_supports[bi];
                    let out = kernel
                        .step(&mut raw[bi], &mut value, &mut rng, |x| {
                            if !in_support(x, sup) {
                                return Ok(Eval::Value(f64::NEG_INFINITY));
                            }
                            scatter(&mut work, &coords, x);
                            log_conditional(&work).map(Eval::Value)
                        })
                        .map_err(|e| at_iteration(it, e))?;
                    kernel.record(out.accepted, burn).map_err(|e| at_iteration(it, e))?;
                    if kernel.learns_shape() && burn {
                        if it >= config.burn_in / 4 && it < learn_at {
                            histories[bi].push(raw[bi].clone());
                        } else if it == learn_at {
                            kernel.learn_shape(&histories[bi]);
                            histories[bi] = Vec::new();
                        }
                    }
                    cached[bi] = Some(value);
                    out.accepted
                }
                BlockUpdate::Direct(draw) => {
                    let v = draw(&work, &mut rng).map_err(|e| at_iteration(it, e))?;
                    if v.len() != coords.len() {
                        return Err(at_iteration(
                            it,
                            Error::DimensionMismatch {
                                expected: coords.len(),
                                found: v.len(),
                            },
                        ));
                    }
                    raw[bi] = v;
                    true
                }
            };

            let adjustment = if block.quasi {
                match &mut ofs {
                    Ofs::Off => None,
                    Ofs::Marginal(ws) => ws[bi].clone(),
                    Ofs::Conditional(est) => {
                        let w = est(bi, &public).map_err(|e| at_iteration(it, e))?;
                        if w.dim() != coords.len() {
                            return Err(at_iteration(
                                it,
                                Error::DimensionMismatch {
                                    expected: coords.len(),
                                    found: w.dim(),
                                },
                            ));
                        }
                        Some(w)
                    }
                }
            } else {
                None
            };
            let new_public = match &adjustment {
                Some(w) if !w.omega().is_identity() => w.apply(&raw[bi]),
                _ => raw[bi].clone(),
            };
            if adjustment.is_some() && !in_support(&new_public, &block_supports[bi]) {
                raw[bi] = before_raw;
                cached[bi] = before_cached;
                violations += 1;
            } else {
                let changed = coords.iter().zip(&new_public).any(|(&c, &v)| public[c] != v);
                scatter(&mut public, &coords, &new_public);
                if changed {
                    for (bj, c) in cached.iter_mut().enumerate() {
                        if bj != bi {
                            *c = None;
                        }
                    }
                }
            }
            if let Some(v) = cached[bi] {
                last_log = v;
            }
            if !burn {
                stats[bi].proposed += 1;
                stats[bi].accepted += u64::from(accepted);
            }
        }
        if !burn && (it - config.burn_in) % config.thin == 0 {
            draws.extend_from_slice(&public);
            logs.push(last_log);
        }
    }

    let metro: Vec<&BlockStats> = stats
        .iter()
        .zip(&kernels)
        .filter(|(_, k)| k.is_some())
        .map(|(s, _)| s)
        .collect();
    let (accepted, proposed) = if metro.is_empty() {
        stats.iter().fold((0, 0), |(a, p), s| (a + s.accepted, p + s.proposed))
    } else {
        metro.iter().fold((0, 0), |(a, p), s| (a + s.accepted, p + s.proposed))
    };
    let rows = logs.len();
    Chain::new(
        Matrix::from_row_major(rows, p, draws)?,
        logs,
        ChainMeta {
            names: spec.names.clone(),
            supports: spec.supports.clone(),
            seed: config.seed,
            config: Some(config.clone()),
            adjusted: ofs.adjusted(),
            acceptance_rate: accepted as f64 / proposed.max(1) as f64,
            accepted,
            proposed,
            support_violations: violations,
            blocks: stats,
            proposal_scale: kernels.iter().flatten().map(Kernel::scale).collect(),
        },
    )
}
