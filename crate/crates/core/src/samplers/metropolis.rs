//! Random-walk Metropolis with burn-in adaptation, and the curvature-adjusted variant.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::chain::{AdaptConfig, Adjusted, Chain, ChainConfig, ChainMeta, Proposal};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, sample_covariance, Matrix};
use crate::model::{in_support, log_prior, log_quasi_posterior, ObjectiveModel, ParamVec, PriorSpec, Support};
use crate::sandwich::AdjustmentMatrix;
use crate::seed::{rng_from_seed, Rng};

/// Robbins-Monro state for the log proposal scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptState {
    pub log_scale: f64,
    pub target: f64,
    /// Updates applied so far.
    pub updates: usize,
}

/// One Robbins-Monro step on the log scale toward the target acceptance rate, with
/// gain 2/√k. Returns the new scale.
pub fn adapt_proposal(state: &mut AdaptState, recent_acceptance: f64) -> f64 {
    state.updates += 1;
    let gain = 2.0 / (state.updates as f64).sqrt();
    state.log_scale += gain * (recent_acceptance - state.target);
    state.log_scale.exp()
}

/// Log target at a point, or a transform that left the support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Eval {
    Value(f64),
    SupportViolation,
}

pub(crate) struct StepOutcome {
    pub accepted: bool,
    pub violation: bool,
}

/// Gaussian random-walk kernel on a block of coordinates.
pub(crate) struct Kernel {
    factor: Matrix<f64>,
    adapt: AdaptConfig,
    state: AdaptState,
    window_accepts: usize,
    window_count: usize,
    stalled_windows: usize,
}

impl Kernel {
    pub fn new(proposal: &Proposal, adapt: &AdaptConfig) -> Result<Self> {
        let dim = proposal.dim();
        Ok(Self {
            factor: proposal.factor()?,
            adapt: adapt.clone(),
            state: AdaptState {
                log_scale: 0.0,
                target: adapt.target_for(dim),
                updates: 0,
            },
            window_accepts: 0,
            window_count: 0,
            stalled_windows: 0,
        })
    }

    pub fn scale(&self) -> f64 {
        self.state.log_scale.exp()
    }

    fn propose(&self, current: &[f64], rng: &mut Rng) -> Vec<f64> {
        let p = current.len();
        let z: Vec<f64> = (0..p).map(|_| StandardNormal.sample(rng)).collect();
        let s = self.scale();
        (0..p)
            .map(|i| {
                let step: f64 = self.factor.row(i)[..=i].iter().zip(&z).map(|(a, b)| a * b).sum();
                current[i] + s * step
            })
            .collect()
    }

    /// One Metropolis step; `current`/`current_value` are updated on acceptance.
    pub fn step(
        &mut self,
        current: &mut Vec<f64>,
        current_value: &mut f64,
        rng: &mut Rng,
        mut log_target: impl FnMut(&[f64]) -> Result<Eval>,
    ) -> Result<StepOutcome> {
        let proposal = self.propose(current, rng);
        let u: f64 = rng.random();
        let mut violation = false;
        let accepted = match log_target(&proposal)? {
            Eval::Value(v) => {
                if v > f64::NEG_INFINITY && u.ln() < v - *current_value {
                    *current = proposal;
                    *current_value = v;
                    true
                } else {
                    false
                }
            }
            Eval::SupportViolation => {
                violation = true;
                false
            }
        };
        Ok(StepOutcome { accepted, violation })
    }

    /// Window bookkeeping: adaptation during burn-in and the stall diagnostic.
    pub fn record(&mut self, accepted: bool, in_burn_in: bool) -> Result<()> {
        self.window_count += 1;
        self.window_accepts += usize::from(accepted);
        if self.window_count < self.adapt.window.max(1) {
            return Ok(());
        }
        let rate = self.window_accepts as f64 / self.window_count as f64;
        if self.window_accepts == 0 {
            self.stalled_windows += 1;
            if self.stalled_windows >= self.adapt.stall_windows.max(1) {
                return Err(Error::Sampler(format!(
                    "no proposal accepted in {} consecutive windows of {} iterations (proposal scale {:.3e})",
                    self.stalled_windows,
                    self.window_count,
                    self.scale()
                )));
            }
        } else {
            self.stalled_windows = 0;
        }
        if self.adapt.enabled && in_burn_in {
            adapt_proposal(&mut self.state, rate);
        }
        self.window_accepts = 0;
        self.window_count = 0;
        Ok(())
    }

    /// Replaces the proposal shape by the empirical covariance of `history`.
    pub fn learn_shape(&mut self, history: &[Vec<f64>]) {
        let p = self.factor.rows();
        if history.len() < 10 * p.max(2) {
            return;
        }
        let rows: Vec<Vec<f64>> = history.to_vec();
        let Ok(m) = Matrix::from_rows(&rows) else { return };
        let Ok(cov) = sample_covariance(&m) else { return };
        if let Ok(l) = cholesky(&cov.to_dense()) {
            self.factor = l;
            self.state.log_scale = (2.38 / (p as f64).sqrt()).ln();
        }
    }

    pub fn learns_shape(&self) -> bool {
        self.adapt.enabled && self.adapt.learn_covariance
    }
}

/// Shared single-block driver.
pub(crate) fn run_single_block(
    names: Vec<String>,
    supports: Vec<Support>,
    config: &ChainConfig,
    adjusted: Adjusted,
    mut log_target: impl FnMut(&[f64]) -> Result<Eval>,
) -> Result<Chain> {
    let p = names.len();
    config.validate(p)?;
    let mut rng = rng_from_seed(config.seed);
    let mut kernel = Kernel::new(&config.proposal, &config.adapt)?;
    let mut current = config.initial.clone();
    let mut value = match log_target(&current)? {
        Eval::Value(v) if v.is_finite() => v,
        _ => {
            return Err(Error::InvalidArgument(format!(
                "initial point {current:?} has no finite log quasi-posterior"
            )))
        }
    };
    let kept = config.kept();
    let mut draws = Vec::with_capacity(kept * p);
    let mut logs = Vec::with_capacity(kept);
    let (mut accepted, mut proposed, mut violations) = (0u64, 0u64, 0u64);
    let learn_at = config.burn_in / 2;
    let mut history = Vec::new();
    for it in 0..config.iterations {
        let burn = it < config.burn_in;
        let out = kernel
            .step(&mut current, &mut value, &mut rng, &mut log_target)
            .map_err(|e| at_iteration(it, e))?;
        violations += u64::from(out.violation);
        kernel.record(out.accepted, burn).map_err(|e| at_iteration(it, e))?;
        if kernel.learns_shape() && burn {
            if it >= config.burn_in / 4 && it < learn_at {
                history.push(current.clone());
            } else if it == learn_at {
                kernel.learn_shape(&history);
                history = Vec::new();
            }
        }
        if !burn {
            proposed += 1;
            accepted += u64::from(out.accepted);
            if (it - config.burn_in) % config.thin == 0 {
                draws.extend_from_slice(&current);
                logs.push(value);
            }
        }
    }
    let rows = logs.len();
    Chain::new(
        Matrix::from_row_major(rows, p, draws)?,
        logs,
        ChainMeta {
            names,
            supports,
            seed: config.seed,
            config: Some(config.clone()),
            adjusted,
            acceptance_rate: accepted as f64 / proposed.max(1) as f64,
            accepted,
            proposed,
            support_violations: violations,
            blocks: vec![],
            proposal_scale: vec![kernel.scale()],
        },
    )
}

pub(crate) fn at_iteration(iteration: usize, e: Error) -> Error {
    match e {
        Error::AtIteration { .. } => e,
        other => Error::AtIteration {
            iteration,
            source: Box::new(other),
        },
    }
}

/// Random-walk Metropolis on the quasi-posterior ∝ exp(ℓ_M)·π.
pub fn rw_metropolis<M: ObjectiveModel + ?Sized>(
    model: &M,
    prior: &PriorSpec,
    data: &M::Data,
    config: &ChainConfig,
) -> Result<Chain> {
    if prior.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: prior.dim(),
        });
    }
    run_single_block(model.param_names(), model.supports(), config, Adjusted::Raw, |t| {
        log_quasi_posterior(model, prior, t, data).map(Eval::Value)
    })
}

/// Curvature-adjusted Metropolis: the objective is evaluated at θ̂_M + C(θ − θ̂_M)
/// while prior and proposal use θ itself.
///
/// C is Ω⁻¹ = Q^{-1/2}P^{-1/2}Q, the transform whose pull-back of the quadratic
/// approximation has precision C'QC = QP⁻¹Q, so the retained draws have covariance
/// J⁻¹. When Ω is exactly the identity no transform is applied and the run is
/// identical to [`rw_metropolis`].
pub fn curvature_metropolis<M: ObjectiveModel + ?Sized>(
    model: &M,
    prior: &PriorSpec,
    data: &M::Data,
    theta_m: &ParamVec,
    omega: &AdjustmentMatrix,
    config: &ChainConfig,
) -> Result<Chain> {
    let p = model.dim();
    if theta_m.len() != p || omega.dim() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: if theta_m.len() != p { theta_m.len() } else { omega.dim() },
        });
    }
    if prior.dim() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: prior.dim(),
        });
    }
    let transform = if omega.omega().is_identity() {
        None
    } else {
        Some(omega.omega().inverse()?)
    };
    let center = theta_m.values().to_vec();
    let supports = model.supports();
    run_single_block(model.param_names(), supports.clone(), config, Adjusted::Curvature, |t| {
        let Some(c) = &transform else {
            return log_quasi_posterior(model, prior, t, data).map(Eval::Value);
        };
        if !in_support(t, &supports) {
            return Ok(Eval::Value(f64::NEG_INFINITY));
        }
        let lp = log_prior(prior, t)?;
        if lp == f64::NEG_INFINITY {
            return Ok(Eval::Value(lp));
        }
        let diff: Vec<f64> = t.iter().zip(&center).map(|(a, b)| a - b).collect();
        let moved = c.matvec(&diff)?;
        let ca: Vec<f64> = center.iter().zip(&moved).map(|(a, b)| a + b).collect();
        if !in_support(&ca, &supports) {
            return Ok(Eval::SupportViolation);
        }
        let lo = model.log_objective(&ca, data)?;
        if lo.is_nan() || lo == f64::INFINITY {
            return Err(Error::NonFinite { value: lo, point: ca });
        }
        Ok(Eval::Value(lo + lp))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Capabilities;

    /// ℓ(θ) = −½ (θ−m)'A(θ−m) on all reals.
    struct Quad {
        a: Matrix<f64>,
        m: Vec<f64>,
    }

    impl ObjectiveModel for Quad {
        type Data = ();
        fn param_names(&self) -> Vec<String> {
            (0..self.m.len()).map(|i| format!("t{i}")).collect()
        }
        fn supports(&self) -> Vec<Support> {
            vec![Support::AllReals; self.m.len()]
        }
        fn log_objective(&self, t: &[f64], _: &()) -> Result<f64> {
            let d: Vec<f64> = t.iter().zip(&self.m).map(|(a, b)| a - b).collect();
            let ad = self.a.matvec(&d)?;
            Ok(-0.5 * d.iter().zip(&ad).map(|(a, b)| a * b).sum::<f64>())
        }
        fn capabilities(&self) -> Capabilities {
            Capabilities::default()
        }
    }

    fn config(p: usize, iters: usize, seed: u64) -> ChainConfig {
        ChainConfig {
            iterations: iters,
            burn_in: iters / 5,
            thin: 1,
            initial: vec![0.0; p],
            proposal: Proposal::StdDevs(vec![1.0; p]),
            adapt: AdaptConfig::default(),
            seed,
        }
    }

    #[test]
    fn adaptation_direction_and_fixed_point() {
        let mut s = AdaptState {
            log_scale: 0.0,
            target: 0.234,
            updates: 0,
        };
        assert!(adapt_proposal(&mut s.clone(), 1.0) > 1.0);
        assert!(adapt_proposal(&mut s.clone(), 0.0) < 1.0);
        assert_eq!(adapt_proposal(&mut s, 0.234), 1.0);
    }

    #[test]
    fn deterministic_and_tiny_steps_always_accept() {
        let q = Quad {
            a: Matrix::identity(2),
            m: vec![0.5, -0.5],
        };
        let prior = PriorSpec::flat(2);
        let c = config(2, 2000, 7);
        let a = rw_metropolis(&q, &prior, &(), &c).unwrap();
        let b = rw_metropolis(&q, &prior, &(), &c).unwrap();
        assert_eq!(a, b);

        let mut tiny = config(2, 500, 1);
        tiny.proposal = Proposal::StdDevs(vec![1e-8; 2]);
        tiny.adapt = AdaptConfig::disabled();
        let c = rw_metropolis(&q, &prior, &(), &tiny).unwrap();
        assert!(c.acceptance_rate() > 0.99, "{}", c.acceptance_rate());
    }

    #[test]
    fn gaussian_target_mean_and_covariance() {
        let a = Matrix::from_rows(&[vec![2.0, 0.6], vec![0.6, 1.0]]).unwrap();
        let q = Quad {
            a: a.clone(),
            m: vec![1.0, -2.0],
        };
        let mut c = config(2, 60_000, 3);
        c.adapt.learn_covariance = true;
        c.burn_in = 5000;
        let chain = rw_metropolis(&q, &PriorSpec::flat(2), &(), &c).unwrap();
        let mean = crate::linalg::column_means(chain.draws());
        let cov = sample_covariance(chain.draws()).unwrap();
        let inv = a.inverse().unwrap();
        for i in 0..2 {
            let sd = inv[(i, i)].sqrt();
            // Generous MC allowance for autocorrelated draws.
            assert!((mean[i] - q.m[i]).abs() < 0.05 * sd * 3.0 + 0.03, "{mean:?}");
            for j in 0..2 {
                assert!((cov.get(i, j) - inv[(i, j)]).abs() < 0.1 * inv[(i, i)].max(inv[(j, j)]), "{cov:?}");
            }
        }
        assert!(chain.acceptance_rate() > 0.1 && chain.acceptance_rate() < 0.6);
    }

    #[test]
    fn discrete_grid_stationary_distribution() {
        // Target on the integers 0..5 with weights w; RW with integer-rounded steps.
        struct Grid;
        impl ObjectiveModel for Grid {
            type Data = ();
            fn param_names(&self) -> Vec<String> {
                vec!["k".into()]
            }
            fn supports(&self) -> Vec<Support> {
                vec![Support::AllReals]
            }
            fn log_objective(&self, t: &[f64], _: &()) -> Result<f64> {
                let w = [1.0f64, 2.0, 4.0, 2.0, 1.0];
                let k = t[0].floor();
                Ok(if (0.0..5.0).contains(&k) { w[k as usize].ln() } else { f64::NEG_INFINITY })
            }
            fn capabilities(&self) -> Capabilities {
                Capabilities::default()
            }
        }
        let mut c = config(1, 200_000, 11);
        c.initial = vec![2.5];
        c.adapt = AdaptConfig::disabled();
        c.proposal = Proposal::StdDevs(vec![1.5]);
        let chain = rw_metropolis(&Grid, &PriorSpec::flat(1), &(), &c).unwrap();
        let mut counts = [0.0; 5];
        for x in chain.column(0) {
            counts[x.floor() as usize] += 1.0;
        }
        let n = chain.len() as f64;
        let w = [1.0, 2.0, 4.0, 2.0, 1.0];
        let chi2: f64 = (0..5)
            .map(|k| {
                let e = n * w[k] / 10.0;
                (counts[k] - e).powi(2) / e
            })
            .sum();
        // Autocorrelation inflates the statistic; the bound is loose but catches bias.
        assert!(chi2 < 200.0, "chi2 {chi2}, counts {counts:?}");
        for k in 0..5 {
            assert!((counts[k] / n - w[k] / 10.0).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn stuck_chain_reports_diagnostic() {
        struct Spike;
        impl ObjectiveModel for Spike {
            type Data = ();
            fn param_names(&self) -> Vec<String> {
                vec!["x".into()]
            }
            fn supports(&self) -> Vec<Support> {
                vec![Support::AllReals]
            }
            fn log_objective(&self, t: &[f64], _: &()) -> Result<f64> {
                Ok(if t[0] == 0.0 { 0.0 } else { -1e300 })
            }
            fn capabilities(&self) -> Capabilities {
                Capabilities::default()
            }
        }
        let c = config(1, 5000, 2);
        let err = rw_metropolis(&Spike, &PriorSpec::flat(1), &(), &c).unwrap_err();
        assert!(matches!(err, Error::AtIteration { .. }), "{err}");
    }
}
