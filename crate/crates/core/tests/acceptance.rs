//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion, with the
//! individual checks indented beneath it, and exits non-zero if any criterion fails.
//!
//! The coverage scenarios are long; expect tens of minutes on a single core.

use std::io::Write;
use std::process::ExitCode;
use std::time::Instant;

use ofs_core::coverage::{
    coordinate_names, linear_design, run_coverage_experiment, scaled_proposal, scenario_prior, ChainSettings,
    CoverageTable, EstimatorCombo, ExperimentConfig, Method, Scenario, DEFAULT_ALPHA_GRID,
};
use ofs_core::diagnostics::{ks_two_sample, thin_to_effective};
use ofs_core::gaussian::GaussianMeanModel;
use ofs_core::gp::{
    grid_locations, simulate_field, CovarianceFamily, Locations, SpatialLinearModel, TaperSpec, TaperedDesign,
    TaperedGpModel,
};
use ofs_core::linalg::{
    empirical_quantile, maximize, numerical_gradient, numerical_hessian, sample_covariance, spd_inverse, spd_sqrt, Matrix,
    NelderMeadConfig, SpdMatrix, SymMatrix,
};
use ofs_core::model::log_quasi_posterior;
use ofs_core::pairwise::{pairwise_loglik, pairwise_score, simulate_replicates, PairwiseModel, ReplicatedDataset};
use ofs_core::samplers::{
    conditional_ofs_gibbs, gibbs_run, marginal_ofs_gibbs, quasi_bayes_estimate, rw_metropolis, AdaptConfig, Chain,
    ChainConfig,
};
use ofs_core::sandwich::{
    assemble_omega, credible_interval, p_bootstrap, p_moment, q_from_chain, q_from_hessian, PMethod, QMethod,
    SandwichEstimate,
};
use ofs_core::seed::rng_from_seed;
use ofs_core::{ObjectiveModel, ParamVec, Support};
use rand_distr::{Distribution, StandardNormal};

type Res<T> = Result<T, Box<dyn std::error::Error>>;

struct Check {
    name: String,
    detail: String,
    pass: bool,
}

fn check(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        detail: detail.into(),
        pass,
    }
}

fn say(line: &str) {
    // Straight to the stream so the lines survive output capture.
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

/// ‖a − b‖_F / ‖b‖_F.
fn rel_frob(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    a.sub(b).expect("same shape").frobenius_norm() / b.frobenius_norm()
}

fn rel_vec(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

fn names(p: usize) -> Vec<String> {
    (1..=p).map(|k| format!("t{k}")).collect()
}

fn center_at(values: Vec<f64>) -> ParamVec {
    let p = values.len();
    ParamVec::new(values, names(p), vec![Support::AllReals; p]).unwrap()
}

fn omega(p: &SymMatrix<f64>, q: &SpdMatrix<f64>) -> Res<Matrix<f64>> {
    let est = SandwichEstimate::new(p.clone(), q.clone(), PMethod::Plugin, QMethod::Plugin, "acceptance")?;
    Ok(assemble_omega(&est, &center_at(vec![0.0; p.dim()]), &[])?.omega().clone())
}

fn table_bytes(t: &CoverageTable) -> Res<Vec<u8>> {
    let mut out = Vec::new();
    t.write_csv(&mut out)?;
    t.write_curve_csv(&mut out)?;
    t.write_failures_csv(&mut out)?;
    Ok(out)
}

fn coverage_at(t: &CoverageTable, coord: &str, method: Method, combo: EstimatorCombo, nominal: f64) -> f64 {
    t.find(coord, method, combo, nominal).map_or(f64::NAN, |r| r.empirical)
}

const NOMINAL: f64 = 0.9;

fn combo(p: PMethod, q: QMethod) -> EstimatorCombo {
    EstimatorCombo { p, q }
}

fn label(c: EstimatorCombo) -> String {
    format!("{}/{}", c.p.label(), c.q.label())
}

// ---------------------------------------------------------------------------------
// 1. Adjustment algebra

fn random_spd(p: usize, seed: u64) -> SpdMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    let b: Matrix<f64> = Matrix::from_fn(p, p, |_, _| StandardNormal.sample(&mut rng));
    let bbt = b.matmul(&b.transpose()).unwrap();
    SpdMatrix::new(SymMatrix::from_lower_fn(p, |i, j| bbt[(i, j)] + if i == j { 0.5 } else { 0.0 }).unwrap()).unwrap()
}

/// Covariance of ΩZ with Z ~ N(0, Q⁻¹), against J⁻¹ = Q⁻¹PQ⁻¹.
fn push_forward_error(p: &SymMatrix<f64>, q: &SpdMatrix<f64>, draws: usize, seed: u64) -> Res<f64> {
    let dim = q.dim();
    let w = omega(p, q)?;
    let qi = spd_inverse(q)?;
    let l = qi.cholesky()?;
    let mut rng = rng_from_seed(seed);
    let mut rows = Vec::with_capacity(draws * dim);
    for _ in 0..draws {
        let z: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x = l.matvec(&z)?;
        rows.extend(w.matvec(&x)?);
    }
    let cov = sample_covariance(&Matrix::from_row_major(draws, dim, rows)?)?.to_dense();
    let qd = qi.to_dense();
    let j_inv = qd.matmul(&p.to_dense())?.matmul(&qd)?;
    Ok(rel_frob(&cov, &j_inv))
}

fn criterion_1() -> Res<Vec<Check>> {
    let mut out = Vec::new();
    let mut sqrt_err: f64 = 0.0;
    let mut ident_err: f64 = 0.0;
    let mut scale_err: f64 = 0.0;
    for s in 0..20u64 {
        let a = random_spd(5, 100 + s);
        let r = spd_sqrt(&a)?.to_dense();
        sqrt_err = sqrt_err.max(r.matmul(&r)?.max_abs_diff(&a.to_dense()) / a.to_dense().max_abs());
        let q = random_spd(4, 200 + s);
        let p = random_spd(4, 300 + s);
        ident_err = ident_err.max(omega(q.as_sym(), &q)?.max_abs_diff(&Matrix::identity(4)));
        let w = omega(p.as_sym(), &q)?;
        for c in [1e-3, 0.37, 52.0] {
            let wc = omega(&p.as_sym().scaled(c), &q.scaled(c)?)?;
            scale_err = scale_err.max(wc.max_abs_diff(&w) / w.max_abs());
        }
    }
    out.push(check("spd_sqrt multiply-back (5x5, 20 draws)", sqrt_err < 1e-10, format!("max rel err {sqrt_err:.2e} < 1e-10")));
    out.push(check("Omega(Q,Q) = I", ident_err < 1e-10, format!("max abs err {ident_err:.2e} < 1e-10")));
    out.push(check("Omega(cP,cQ) = Omega(P,Q)", scale_err < 1e-10, format!("max rel err {scale_err:.2e} < 1e-10")));

    let (p, q) = (random_spd(3, 7), random_spd(3, 8));
    let e = push_forward_error(p.as_sym(), &q, 100_000, 9)?;
    out.push(check("cov(Omega Z) vs J^-1, random 3x3", e < 0.05, format!("rel Frobenius {e:.4} < 0.05")));
    let design = TaperedDesign::new(grid_locations(15, 1.0)?, TaperSpec::wendland(4.0)?)?;
    let (pt, qt) = design.analytic_pq(&CovarianceFamily::exponential(1.0, 0.2)?)?;
    let e = push_forward_error(pt.as_sym(), &qt, 100_000, 10)?;
    out.push(check("cov(Omega Z) vs J^-1, tapered 15x15", e < 0.05, format!("rel Frobenius {e:.4} < 0.05")));
    Ok(out)
}

// ---------------------------------------------------------------------------------
// 2. Exact-likelihood oracle

fn oracle_config() -> ExperimentConfig {
    ExperimentConfig {
        scenario: Scenario::ExactGaussianOracle {
            covariance: vec![vec![1.0, 0.5], vec![0.5, 2.0]],
            sample_size: 30,
        },
        theta0: vec![0.5, -1.0],
        n_datasets: 200,
        alpha_grid: DEFAULT_ALPHA_GRID.to_vec(),
        methods: vec![Method::Raw],
        combos: vec![],
        chain: ChainSettings::default(),
        master_seed: 11,
        bootstrap_k: 500,
    }
}

fn criterion_2(table: &CoverageTable) -> Res<Vec<Check>> {
    let mut out = Vec::new();
    for row in &table.rows {
        let band = 3.0 * (row.nominal * (1.0 - row.nominal) / row.n_effective as f64).sqrt();
        out.push(check(
            format!("raw {} at {:.2}", row.coordinate, row.nominal),
            (row.empirical - row.nominal).abs() <= band && row.failures == 0,
            format!("{:.3} in [{:.3}, {:.3}], failures {}", row.empirical, row.nominal - band, row.nominal + band, row.failures),
        ));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------------
// 3. Tapered GP coverage

const TAPERED_COMBOS: [EstimatorCombo; 2] = [
    EstimatorCombo {
        p: PMethod::Plugin,
        q: QMethod::Plugin,
    },
    EstimatorCombo {
        p: PMethod::Plugin,
        q: QMethod::ChainCov,
    },
];

fn tapered_config(n_datasets: usize, chain: ChainSettings) -> ExperimentConfig {
    ExperimentConfig {
        scenario: Scenario::TaperedGp {
            grid: 15,
            spacing: 1.0,
            taper_range: 4.0,
        },
        theta0: vec![1.0, 0.2],
        n_datasets,
        alpha_grid: DEFAULT_ALPHA_GRID.to_vec(),
        methods: vec![Method::Raw, Method::Ofs, Method::Curvature],
        combos: TAPERED_COMBOS.to_vec(),
        chain,
        master_seed: 31,
        bootstrap_k: 500,
    }
}

/// Shortened per-dataset chains so the run fits a single core.
fn tapered_chain() -> ChainSettings {
    ChainSettings {
        iterations: 3_000,
        burn_in: 500,
        ..ChainSettings::default()
    }
}

fn criterion_3(cfg: &ExperimentConfig, table: &CoverageTable) -> Res<Vec<Check>> {
    let names = coordinate_names(cfg)?;
    let mut out = Vec::new();
    for c in &cfg.combos {
        for n in &names {
            let v = coverage_at(table, n, Method::Ofs, *c, NOMINAL);
            out.push(check(format!("ofs {} {n}", label(*c)), (0.84..=0.96).contains(&v), format!("{v:.3} in [0.84, 0.96]")));
        }
    }
    let raw = |n: &str| coverage_at(table, n, Method::Raw, cfg.combos[0], NOMINAL);
    let s = raw(&names[0]);
    out.push(check(format!("raw {} under-covers", names[0]), s < 0.80, format!("{s:.3} < 0.80")));
    let c = raw(&names[1]);
    out.push(check(format!("raw {} over-covers", names[1]), c > 0.96, format!("{c:.3} > 0.96")));
    out.push(check(
        "dataset failures",
        true,
        format!("{} recorded, {} adjusted draws outside support", table.failures.len(), table.support_violations),
    ));
    Ok(out)
}

// ---------------------------------------------------------------------------------
// 4. Pairwise coverage

fn pairwise_combos() -> Vec<EstimatorCombo> {
    let mut v = Vec::new();
    for q in [QMethod::ChainCov, QMethod::Hessian] {
        for p in [PMethod::Moment, PMethod::Bootstrap] {
            v.push(combo(p, q));
        }
    }
    v
}

fn pairwise_config(n_datasets: usize, chain: ChainSettings) -> ExperimentConfig {
    ExperimentConfig {
        scenario: Scenario::PairwiseGaussian {
            grid: 5,
            spacing: 1.0,
            replicates: 50,
        },
        theta0: vec![1.0, 0.2],
        n_datasets,
        alpha_grid: DEFAULT_ALPHA_GRID.to_vec(),
        methods: vec![Method::Raw, Method::Ofs, Method::Curvature],
        combos: pairwise_combos(),
        chain,
        master_seed: 41,
        bootstrap_k: 500,
    }
}

fn criterion_4(cfg: &ExperimentConfig, table: &CoverageTable) -> Res<Vec<Check>> {
    let names = coordinate_names(cfg)?;
    let mut out = Vec::new();
    for n in &names {
        let vals: Vec<f64> = cfg.combos.iter().map(|c| coverage_at(table, n, Method::Ofs, *c, NOMINAL)).collect();
        for (c, v) in cfg.combos.iter().zip(&vals) {
            out.push(check(format!("ofs {} {n}", label(*c)), (0.84..=0.96).contains(v), format!("{v:.3} in [0.84, 0.96]")));
        }
        let spread = vals.iter().cloned().fold(f64::MIN, f64::max) - vals.iter().cloned().fold(f64::MAX, f64::min);
        out.push(check(format!("combos agree on {n}"), spread <= 0.04, format!("spread {spread:.3} <= 0.04")));
        let r = coverage_at(table, n, Method::Raw, cfg.combos[0], NOMINAL);
        out.push(check(format!("raw {n} under-covers"), r < 0.82, format!("{r:.3} < 0.82")));
    }
    out.push(check(
        "dataset failures",
        true,
        format!("{} recorded, {} adjusted draws outside support", table.failures.len(), table.support_violations),
    ));
    Ok(out)
}

// ---------------------------------------------------------------------------------
// 5. Curvature sampler against post-hoc adjustment

fn curvature_parity(scenario: &str, cfg: &ExperimentConfig, table: &CoverageTable) -> Res<Vec<Check>> {
    let mut out = Vec::new();
    for c in &cfg.combos {
        for n in coordinate_names(cfg)? {
            let a = coverage_at(table, &n, Method::Curvature, *c, NOMINAL);
            let b = coverage_at(table, &n, Method::Ofs, *c, NOMINAL);
            out.push(check(
                format!("{scenario} {} {n}", label(*c)),
                (a - b).abs() <= 0.05,
                format!("curvature {a:.3} vs ofs {b:.3}, |diff| <= 0.05"),
            ));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------------
// 6. Gibbs propagation

struct LinearSetup {
    model: SpatialLinearModel,
    data: ofs_core::gp::GpDataset,
    config: ChainConfig,
}

fn linear_setup(grid: usize, iterations: usize, burn_in: usize, seed: u64) -> Res<LinearSetup> {
    let theta0 = [1.0, 0.2];
    let beta0 = [-0.5, 0.0, 0.5];
    let locs = grid_locations(grid, 1.0)?;
    let x = linear_design(locs.len(), beta0.len(), seed)?;
    let model = SpatialLinearModel::new(
        locs,
        TaperSpec::wendland(4.0)?,
        CovarianceFamily::exponential(1.0, 1.0)?,
        x,
        scenario_prior(&[Support::Positive; 2]),
    )?;
    let data = model.simulate(&theta0, &beta0, seed + 1)?;
    let ols = model.ols(&data)?;
    let theta = model.fit_theta(&data, &ols, &theta0)?;
    let cov = spd_inverse(&model.gp().analytic_q(&theta)?)?;
    let pt = model.theta_dim();
    let full = SymMatrix::from_lower_fn(model.spec().dim(), |i, j| {
        if i < pt && j < pt {
            cov.get(i, j)
        } else if i == j {
            1.0
        } else {
            0.0
        }
    })?;
    let mut initial = theta;
    initial.extend(ols);
    let config = ChainConfig {
        iterations,
        burn_in,
        thin: 1,
        initial,
        proposal: scaled_proposal(&full),
        adapt: AdaptConfig::default(),
        seed: seed + 2,
    };
    Ok(LinearSetup { model, data, config })
}

/// Raw chain, then marginal-OFS chain on an independent stream.
fn raw_and_marginal(s: &LinearSetup) -> Res<(Chain, Chain)> {
    let spec = s.model.spec();
    let raw = gibbs_run(&spec, &mut s.model.blocks(&s.data), &s.config)?;
    let center = quasi_bayes_estimate(&raw)?;
    let pt = s.model.theta_dim();
    let th = center.values()[..pt].to_vec();
    let w = s.model.theta_adjustment(&th, &th)?;
    let mut cc = s.config.clone();
    cc.seed += 1000;
    let adj = marginal_ofs_gibbs(&spec, &mut s.model.blocks(&s.data), &[Some(w), None], &center, &cc)?;
    Ok((raw, adj))
}

fn criterion_6() -> Res<Vec<Check>> {
    let mut out = Vec::new();
    let s = linear_setup(15, 8_000, 1_000, 61)?;
    let (raw, adj) = raw_and_marginal(&s)?;
    for k in s.model.beta_coords() {
        let a = thin_to_effective(&raw.column(k));
        let b = thin_to_effective(&adj.column(k));
        let ks = ks_two_sample(&a, &b)?;
        out.push(check(
            format!("beta {} unchanged", raw.names()[k]),
            ks.p_value > 0.01,
            format!("KS p = {:.3} > 0.01 (n = {}, {})", ks.p_value, a.len(), b.len()),
        ));
    }
    let mut ratios = Vec::new();
    for k in s.model.theta_coords() {
        let r = credible_interval(&adj, k, 0.1)?.width() / credible_interval(&raw, k, 0.1)?.width();
        ratios.push(format!("{} {r:.2}", raw.names()[k]));
        out.push(check(format!("theta {} width ratio", raw.names()[k]), true, format!("adjusted/raw 90% width {r:.3}")));
    }
    let moved = s
        .model
        .theta_coords()
        .into_iter()
        .map(|k| credible_interval(&adj, k, 0.1).unwrap().width() / credible_interval(&raw, k, 0.1).unwrap().width())
        .any(|r| r.ln().abs() > 1.25f64.ln());
    out.push(check("theta widths change detectably", moved, format!("some ratio outside [0.8, 1.25]: {}", ratios.join(", "))));

    // Per-iteration re-estimation on a 7x7 grid against the fixed adjustment.
    let s = linear_setup(7, 4_000, 500, 67)?;
    let (_, marginal) = raw_and_marginal(&s)?;
    let spec = s.model.spec();
    let mut cc = s.config.clone();
    cc.seed += 2000;
    let cond = conditional_ofs_gibbs(&spec, &mut s.model.blocks(&s.data), &cc, s.model.conditional_estimator(&s.data), true)?;
    for k in s.model.theta_coords() {
        let (a, b) = (marginal.column(k), cond.column(k));
        let band = 0.25 * credible_interval(&marginal, k, 0.1)?.width();
        let mut worst: f64 = 0.0;
        for d in 1..10 {
            let p = d as f64 / 10.0;
            worst = worst.max((empirical_quantile(&a, p)? - empirical_quantile(&b, p)?).abs());
        }
        out.push(check(
            format!("conditional vs marginal deciles, {}", marginal.names()[k]),
            worst <= band,
            format!("max gap {worst:.4} <= {band:.4} (quarter of the 90% width)"),
        ));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------------
// 7. Differential oracles

/// Σ_r Σ_{i<j} log φ₂ written out directly.
fn brute_pairwise(fam: &CovarianceFamily<f64>, locs: &Locations<f64>, y: &Matrix<f64>) -> f64 {
    let m = locs.len();
    let mut total = 0.0;
    for r in 0..y.rows() {
        for i in 0..m {
            for j in 0..m {
                if i >= j {
                    continue;
                }
                let a = fam.entry(0.0, 0.0, true);
                let d = fam.entry(0.0, 0.0, true);
                let b = fam.entry(locs.distance(i, j), locs.time_lag(i, j), false);
                let det = a * d - b * b;
                let (u, v) = (y[(r, i)], y[(r, j)]);
                let quad = (d * u * u - 2.0 * b * u * v + a * v * v) / det;
                total += -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * quad;
            }
        }
    }
    total
}

fn criterion_7() -> Res<Vec<Check>> {
    let mut out = Vec::new();
    let theta0 = [1.0, 0.2];

    let locs = grid_locations(20, 1.0)?;
    let design = TaperedDesign::new(locs.clone(), TaperSpec::wendland(4.0)?)?;
    let mut worst: f64 = 0.0;
    for (k, (s2, c)) in [(1.0, 0.2), (0.5, 1.5), (3.0, 0.05)].into_iter().enumerate() {
        let fam = CovarianceFamily::exponential(s2, c)?;
        let y = simulate_field(&fam, &locs, None, 70 + k as u64)?;
        worst = worst.max((design.loglik(&fam, &y)? - design.dense_loglik(&fam, &y)?).abs());
    }
    out.push(check("sparse vs dense tapered loglik, n = 400", worst < 1e-8, format!("max abs diff {worst:.2e} < 1e-8")));

    let plocs = grid_locations(3, 1.0)?;
    let plocs = Locations::new(plocs_subset(&plocs, 6), None)?;
    let pm = PairwiseModel::new(CovarianceFamily::exponential(1.0, 1.0)?, plocs.clone(), 3)?;
    let mut worst: f64 = 0.0;
    for (k, th) in [[1.0, 0.2], [2.5, 0.7]].iter().enumerate() {
        let data = simulate_replicates(&pm.family(th)?, &plocs, 3, 80 + k as u64)?;
        let fast = pairwise_loglik(&pm, th, &data)?;
        let slow = brute_pairwise(&pm.family(th)?, &plocs, data.values());
        worst = worst.max((fast - slow).abs());
    }
    out.push(check("pairwise vs brute force, m = 6, R = 3", worst < 1e-10, format!("max abs diff {worst:.2e} < 1e-10")));

    let mut worst: f64 = 0.0;
    let small = grid_locations(8, 1.0)?;
    let sdesign = TaperedDesign::new(small.clone(), TaperSpec::wendland(3.0)?)?;
    let fam = CovarianceFamily::exponential(1.0, 0.2)?;
    let y = simulate_field(&fam, &small, None, 90)?;
    let g = sdesign.score(&fam, &y)?;
    let fd = numerical_gradient(|t| sdesign.loglik(&fam.with_params(t)?, &y), &theta0, None)?;
    worst = worst.max(rel_vec(&g, &fd));
    let data = simulate_replicates(&pm.family(&theta0)?, &plocs, 3, 91)?;
    for r in 0..3 {
        let one = ReplicatedDataset::new(Matrix::from_row_major(1, 6, data.values().row(r).to_vec())?, plocs.clone())?;
        let g = pairwise_score(&pm, &theta0, &data, r)?;
        let fd = numerical_gradient(|t| pairwise_loglik(&pm, t, &one), &theta0, None)?;
        worst = worst.max(rel_vec(&g, &fd));
    }
    let gm = GaussianMeanModel::exact(SpdMatrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 2.0]])?, 30)?;
    let gdata = gm.simulate(&[0.5, -1.0], 92)?;
    let at = [0.3, -0.7];
    let g = gm.gradient(&at, &gdata)?;
    let fd = numerical_gradient(|t| gm.log_objective(t, &gdata), &at, None)?;
    worst = worst.max(rel_vec(&g, &fd));
    out.push(check("analytic scores vs finite differences", worst < 1e-5, format!("max rel err {worst:.2e} < 1e-5")));

    // Tapered plug-in information against simulation.
    let tm = TaperedGpModel::new(grid_locations(10, 1.0)?, TaperSpec::wendland(4.0)?, CovarianceFamily::exponential(1.0, 1.0)?)?;
    let pa = tm.analytic_p(&theta0)?.to_dense();
    let pb = p_bootstrap(&tm, &theta0, 1000, 93)?.to_dense();
    let e = rel_frob(&pa, &pb);
    out.push(check("tapered P vs bootstrap (K = 1000, 10x10)", e < 0.10, format!("rel Frobenius {e:.4} < 0.10")));
    let qa = tm.analytic_q(&theta0)?.to_dense();
    let mut qsum = Matrix::zeros(2, 2);
    for k in 0..200u64 {
        let d = tm.simulate(&theta0, 1000 + k)?;
        // The observed information of a single dataset need not be definite.
        let h = numerical_hessian(|t| tm.log_objective(t, &d), &theta0, None)?;
        qsum = qsum.sub(&h.to_dense())?;
    }
    let e = rel_frob(&qa, &qsum.scaled(1.0 / 200.0));
    out.push(check("tapered Q vs mean Hessian (200 datasets, 10x10)", e < 0.10, format!("rel Frobenius {e:.4} < 0.10")));

    // Chain-based against Hessian-based curvature on one dataset each.
    let tm15 = TaperedGpModel::new(grid_locations(15, 1.0)?, TaperSpec::wendland(4.0)?, CovarianceFamily::exponential(1.0, 1.0)?)?;
    let e = chain_vs_hessian(&tm15, &theta0, 94)?;
    out.push(check("tapered Q chain vs Hessian (15x15)", e < 0.15, format!("rel Frobenius {e:.4} < 0.15")));
    let pw = PairwiseModel::new(CovarianceFamily::exponential(1.0, 1.0)?, grid_locations(5, 1.0)?, 50)?;
    let e = chain_vs_hessian(&pw, &theta0, 95)?;
    out.push(check("pairwise Q chain vs Hessian (5x5, R = 50)", e < 0.15, format!("rel Frobenius {e:.4} < 0.15")));

    // Replicate-score moment estimate needs many replicates to be comparable.
    let pw_big = PairwiseModel::new(CovarianceFamily::exponential(1.0, 1.0)?, grid_locations(5, 1.0)?, 400)?;
    let d = pw_big.simulate(&theta0, 96)?;
    let e = rel_frob(&p_moment(&pw_big, &d, &theta0)?.to_dense(), &p_bootstrap(&pw_big, &theta0, 500, 97)?.to_dense());
    out.push(check("pairwise P moment vs bootstrap (R = 400)", e < 0.15, format!("rel Frobenius {e:.4} < 0.15")));

    let fisher = gm.analytic_q(&[0.5, -1.0])?.to_dense();
    let e = rel_frob(&p_bootstrap(&gm, &[0.5, -1.0], 500, 98)?.to_dense(), &fisher);
    out.push(check("Gaussian bootstrap P vs Fisher (K = 500)", e < 0.15, format!("rel Frobenius {e:.4} < 0.15")));

    // A working precision that differs from the truth: the chain sees Q only.
    let truth = SpdMatrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 2.0]])?;
    let work = SpdMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.5]])?;
    let mm = GaussianMeanModel::misspecified(truth, work, 30)?;
    let md = mm.simulate(&[0.5, -1.0], 99)?;
    let q = mm.analytic_q(&[0.5, -1.0])?;
    let chain = rw_metropolis(&mm, &ofs_core::PriorSpec::flat(2), &md, &ChainConfig {
        iterations: 40_000,
        burn_in: 2_000,
        thin: 1,
        initial: md.mean(),
        proposal: scaled_proposal(spd_inverse(&q)?.as_sym()),
        adapt: AdaptConfig::default(),
        seed: 100,
    })?;
    let e = rel_frob(&sample_covariance(chain.draws())?.to_dense(), &spd_inverse(&q)?.to_dense());
    out.push(check("chain covariance vs Q^-1 (misspecified Gaussian)", e < 0.10, format!("rel Frobenius {e:.4} < 0.10")));
    Ok(out)
}

fn plocs_subset(locs: &Locations<f64>, m: usize) -> Vec<[f64; 2]> {
    locs.coords[..m].to_vec()
}

fn chain_vs_hessian<M: ObjectiveModel>(model: &M, theta0: &[f64], seed: u64) -> Res<f64> {
    let prior = scenario_prior(&model.supports());
    let data = model.simulate(theta0, seed)?;
    let mode = maximize(|t| log_quasi_posterior(model, &prior, t, &data), theta0, &NelderMeadConfig::default())?;
    let q = q_from_hessian(model, Some(&prior), &data, &mode.point)?;
    let chain = rw_metropolis(model, &prior, &data, &ChainConfig {
        iterations: 12_000,
        burn_in: 2_000,
        thin: 1,
        initial: mode.point.clone(),
        proposal: scaled_proposal(spd_inverse(&q)?.as_sym()),
        adapt: AdaptConfig::default(),
        seed: seed + 1,
    })?;
    let center = quasi_bayes_estimate(&chain)?;
    let qh = q_from_hessian(model, None, &data, center.values())?;
    Ok(rel_frob(&q_from_chain(&chain)?.to_dense(), &qh.to_dense()))
}

// ---------------------------------------------------------------------------------
// 8. Determinism

fn rerun_in_pool(cfg: &ExperimentConfig, threads: usize) -> Res<Vec<u8>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let t = pool.install(|| run_coverage_experiment(cfg))?;
    table_bytes(&t)
}

fn criterion_8(oracle_bytes: &[u8]) -> Res<Vec<Check>> {
    let mut out = Vec::new();
    let again = rerun_in_pool(&oracle_config(), 3)?;
    out.push(check("oracle experiment rerun (3 workers)", again == oracle_bytes, format!("{} bytes", again.len())));

    let short = ChainSettings {
        iterations: 1_000,
        burn_in: 200,
        ..ChainSettings::default()
    };
    let gibbs = ExperimentConfig {
        scenario: Scenario::TaperedGpLinearGibbs {
            grid: 8,
            spacing: 1.0,
            taper_range: 4.0,
            beta: vec![-0.5, 0.0, 0.5],
        },
        theta0: vec![1.0, 0.2],
        n_datasets: 4,
        alpha_grid: DEFAULT_ALPHA_GRID.to_vec(),
        methods: vec![Method::Raw, Method::Ofs],
        combos: TAPERED_COMBOS.to_vec(),
        chain: short.clone(),
        master_seed: 81,
        bootstrap_k: 500,
    };
    for (name, cfg) in [
        ("tapered", tapered_config(4, short.clone())),
        ("pairwise", pairwise_config(4, short.clone())),
        ("gibbs", gibbs),
    ] {
        let a = rerun_in_pool(&cfg, 1)?;
        let b = rerun_in_pool(&cfg, 3)?;
        out.push(check(format!("{name} experiment, 1 vs 3 workers"), a == b, format!("{} bytes", a.len())));
    }

    let s = linear_setup(6, 600, 100, 83)?;
    let bytes = |c: &Chain| -> Res<Vec<u8>> {
        let mut v = Vec::new();
        c.write_csv(&mut v)?;
        Ok(v)
    };
    let (r1, a1) = raw_and_marginal(&s)?;
    let (r2, a2) = raw_and_marginal(&s)?;
    out.push(check("Gibbs chain files rerun", bytes(&r1)? == bytes(&r2)? && bytes(&a1)? == bytes(&a2)?, "raw and adjusted"));
    Ok(out)
}

// ---------------------------------------------------------------------------------

fn report(n: usize, title: &str, started: Instant, result: Res<Vec<Check>>) -> bool {
    let secs = started.elapsed().as_secs_f64();
    match result {
        Ok(checks) => {
            for c in &checks {
                say(&format!("    [{}] {}: {}", if c.pass { "ok" } else { "FAIL" }, c.name, c.detail));
            }
            let passed = checks.iter().all(|c| c.pass);
            let failed = checks.iter().filter(|c| !c.pass).count();
            say(&format!(
                "{} criterion {n}: {title} ({}/{} checks, {secs:.1} s)",
                if passed { "PASS" } else { "FAIL" },
                checks.len() - failed,
                checks.len()
            ));
            passed
        }
        Err(e) => {
            say(&format!("FAIL criterion {n}: {title} (error: {e}, {secs:.1} s)"));
            false
        }
    }
}

/// Criteria named in `OFS_ACCEPTANCE_ONLY` (comma separated), or all of them.
fn selected() -> Vec<usize> {
    match std::env::var("OFS_ACCEPTANCE_ONLY") {
        Ok(v) => v.split(',').filter_map(|s| s.trim().parse().ok()).collect(),
        Err(_) => (1..=8).collect(),
    }
}

fn main() -> ExitCode {
    // `cargo test -- --list` and filters from other targets should not start the suite.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let want = selected();
    let on = |n: usize| want.contains(&n);
    let mut all = true;

    if on(1) {
        let t = Instant::now();
        all &= report(1, "adjustment algebra", t, criterion_1());
    }

    let mut oracle_bytes = None;
    if on(2) {
        let t = Instant::now();
        let oracle = run_coverage_experiment(&oracle_config());
        oracle_bytes = oracle.as_ref().ok().and_then(|o| table_bytes(o).ok());
        all &= report(2, "exact-likelihood oracle calibration", t, oracle.map_err(Into::into).and_then(|o| criterion_2(&o)));
    }

    // Parity reuses the coverage runs.
    let tcfg = tapered_config(200, tapered_chain());
    let pcfg = pairwise_config(200, ChainSettings::default());
    let (mut tapered, mut pairwise) = (None, None);
    let (mut tapered_secs, mut pairwise_secs) = (0.0, 0.0);
    if on(3) || on(5) {
        let t = Instant::now();
        let run = run_coverage_experiment(&tcfg);
        tapered_secs = t.elapsed().as_secs_f64();
        all &= match &run {
            Ok(table) => report(3, "tapered GP coverage", t, criterion_3(&tcfg, table)),
            Err(e) => report(3, "tapered GP coverage", t, Err(e.to_string().into())),
        };
        tapered = Some(run);
    }
    if on(4) || on(5) {
        let t = Instant::now();
        let run = run_coverage_experiment(&pcfg);
        pairwise_secs = t.elapsed().as_secs_f64();
        all &= match &run {
            Ok(table) => report(4, "pairwise coverage", t, criterion_4(&pcfg, table)),
            Err(e) => report(4, "pairwise coverage", t, Err(e.to_string().into())),
        };
        pairwise = Some(run);
    }
    if on(5) {
        let t = Instant::now();
        let parity = (|| -> Res<Vec<Check>> {
            let tt = tapered.as_ref().expect("run above").as_ref().map_err(|e| e.to_string())?;
            let pt = pairwise.as_ref().expect("run above").as_ref().map_err(|e| e.to_string())?;
            let mut v = curvature_parity("tapered", &tcfg, tt)?;
            v.extend(curvature_parity("pairwise", &pcfg, pt)?);
            v.push(check("coverage runtimes", true, format!("tapered {tapered_secs:.0} s, pairwise {pairwise_secs:.0} s")));
            Ok(v)
        })();
        all &= report(5, "curvature sampler parity", t, parity);
    }

    if on(6) {
        let t = Instant::now();
        all &= report(6, "Gibbs propagation", t, criterion_6());
    }

    if on(7) {
        let t = Instant::now();
        all &= report(7, "differential oracles", t, criterion_7());
    }

    if on(8) {
        let t = Instant::now();
        let first = match oracle_bytes {
            Some(b) => Ok(b),
            None => rerun_in_pool(&oracle_config(), 1),
        };
        all &= report(8, "determinism", t, first.and_then(|b| criterion_8(&b)));
    }

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
