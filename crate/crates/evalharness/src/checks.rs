//! Numerical checks: exact identities between methods, gradient accuracy,
//! Nyström exactness, null calibration and fit counts.

use std::time::Instant;

use faer::Mat;
use kgranger::data::{embed, Preprocessing, TimeSeriesSystem};
use kgranger::gpsic::{penalized_objective, ArdHyperparameters, GpProblem};
use kgranger::kernels::{center_kernel, kernel_matrix, nystrom_features, KernelSpec};
use kgranger::kgc::{kgc_edge_test, kgc_graph, KgcConfig};
use kgranger::kpcr::{feature_pc_basis, kpcr_edge_test, kpcr_graph, pc_covariates, KpcrConfig};
use kgranger::linalg::{frobenius, frobenius_diff, lstsq_fitted, residual_ss, spd_inverse};
use kgranger::lsngc::{grbf_features, lsngc_graph, GrbfMap, LsngcConfig};
use kgranger::seeding::derive_seed;
use kgranger::simulate::{BenchmarkSpec, SystemId};
use kgranger::stats::f_test;
use kgranger::graph::CausalGraph;
use kgranger_cli::{run_experiment, ExperimentConfig, LagSetting, Method};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::EvalResult;

/// Tolerances and sizes of the numerical checks.
pub mod limits {
    pub const PROJECTOR_FROBENIUS: f64 = 1e-8;
    pub const LINEAR_DELTA: f64 = 1e-8;
    pub const FEATURE_FIT_RELATIVE: f64 = 1e-6;
    pub const GRADIENT_RELATIVE: f64 = 1e-4;
    /// Gradient components smaller than this are compared in absolute terms.
    pub const GRADIENT_FLOOR: f64 = 1e-2;
    pub const FD_STEP: f64 = 1e-5;
    pub const NYSTROM_KERNEL_RELATIVE: f64 = 1e-6;
    pub const NYSTROM_STATISTIC_RELATIVE: f64 = 1e-5;
    pub const NULL_SIGMAS: f64 = 3.0;
    pub const ALPHA: f64 = 0.05;
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub criterion: u8,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn outcome(criterion: u8, name: &str, started: Instant, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        criterion,
        name: name.to_string(),
        passed,
        detail,
        seconds: started.elapsed().as_secs_f64(),
    }
}

pub fn white_noise(seed: u64, n_t: usize, len: usize) -> TimeSeriesSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let series = (0..n_t)
        .map(|_| (0..len).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    TimeSeriesSystem::from_series(series).expect("finite series of equal length")
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Mat<f64> {
    Mat::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm.max(f64::MIN_POSITIVE)
}

/// Random instance sizes `(n, n_t, m)` with `n ∈ [30, 60]`, `n_t ∈ {2, 3}`, `m ∈ {1, 2}`.
fn small_instance(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.random_range(30..=60), rng.random_range(2..=3), rng.random_range(1..=2))
}

/// Kernel principal component regression on `K A Λ^{-1/2}` projects onto
/// the retained eigenvectors, and with a linear kernel the causality index
/// reduces to the relative drop in OLS residuals.
pub fn principal_component_equivalence(instances: usize, seed: u64) -> EvalResult<CheckOutcome> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut projector_gap, mut delta_gap) = (0.0_f64, 0.0_f64);
    for i in 0..instances {
        let (n, n_t, m) = small_instance(&mut rng);
        let sys = white_noise(derive_seed(seed, &[i as u64]), n_t, n + m);
        let design = embed(&sys, 1, 0, m, Preprocessing::Kgc)?;
        let spec = if i % 2 == 0 {
            KernelSpec::Linear
        } else {
            KernelSpec::InhomogeneousPolynomial {
                degree: rng.random_range(2..=3),
            }
        };
        let k = center_kernel(kernel_matrix(&spec, design.z.as_ref(), design.z.as_ref())?.as_ref())?;
        let (f, basis) = pc_covariates(k.as_ref(), 1e-6)?;
        // A singular Gram matrix of the component covariates fails the check.
        projector_gap = match spd_inverse((f.transpose() * &f).as_ref()) {
            Some(gram_inv) => {
                let hat = &(&f * &gram_inv) * f.transpose();
                projector_gap.max(frobenius_diff(hat.as_ref(), basis.matrix().as_ref()))
            }
            None => f64::INFINITY,
        };

        let linear = KgcConfig {
            kernel: Some(KernelSpec::Linear),
            ..KgcConfig::default()
        };
        let delta = kgc_edge_test(&sys, 0, 1, m, &linear)?.delta;
        let (fit_r, _) = lstsq_fitted(design.x.as_ref(), &design.y, 1e-12)?;
        let (fit_u, _) = lstsq_fitted(design.z.as_ref(), &design.y, 1e-12)?;
        let (ssr_r, ssr_u) = (residual_ss(&design.y, &fit_r), residual_ss(&design.y, &fit_u));
        delta_gap = delta_gap.max((delta - (ssr_r - ssr_u) / ssr_r).abs());
    }
    let passed = projector_gap < limits::PROJECTOR_FROBENIUS && delta_gap < limits::LINEAR_DELTA;
    Ok(outcome(
        2,
        "principal-component projector and linear index",
        started,
        passed,
        format!("{instances} instances; max projector gap {projector_gap:.2e}, max index gap {delta_gap:.2e}"),
    ))
}

/// Fitted values of the restricted radial-basis regression and of
/// Nyström principal component regression under the scaled kernel with the
/// same centers, keeping every non-null component.
pub fn radial_basis_equivalence(instances: usize, seed: u64) -> EvalResult<CheckOutcome> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gap = 0.0_f64;
    for i in 0..instances {
        let n = rng.random_range(60..=150);
        let n_t = rng.random_range(2..=3);
        let m = rng.random_range(1..=2);
        let c = rng.random_range(3..=10);
        let sys = white_noise(derive_seed(seed, &[i as u64]), n_t, n + m);
        let design = embed(&sys, 1, 0, m, Preprocessing::None)?;
        let map = GrbfMap::fit(design.x.as_ref(), c, derive_seed(seed, &[i as u64, 1]))?;
        let features = grbf_features(design.x.as_ref(), &map)?;
        let (radial_fit, _) = lstsq_fitted(features.as_ref(), &design.y, 1e-12)?;

        let spec = KernelSpec::ScaledSe {
            lengthscale: map.lengthscale,
            inducing: map.centroids.clone(),
        };
        let phi = nystrom_features(design.x.as_ref(), map.centroids.as_ref(), &spec)?.center();
        // Centering removes exactly one direction (the constant, which the
        // radial features span); every other component is kept.
        let basis = feature_pc_basis(phi.phi.as_ref(), 1e-12)?;
        let mean = design.y.iter().sum::<f64>() / n as f64;
        let centered: Vec<f64> = design.y.iter().map(|v| v - mean).collect();
        let kernel_fit: Vec<f64> = basis.project(&centered).iter().map(|v| v + mean).collect();
        gap = gap.max(relative_l2(&radial_fit, &kernel_fit));
    }
    Ok(outcome(
        3,
        "radial-basis and Nyström fitted values",
        started,
        gap < limits::FEATURE_FIT_RELATIVE,
        format!("{instances} instances; max relative gap {gap:.2e}"),
    ))
}

fn gradient_error(problem: &GpProblem, theta: &ArdHyperparameters, omega: Option<f64>) -> EvalResult<f64> {
    let (_, grad) = penalized_objective(problem, theta, omega)?;
    let x = theta.to_log();
    let h = limits::FD_STEP;
    let mut err = 0.0_f64;
    for k in 0..x.len() {
        let mut up = x.clone();
        let mut down = x.clone();
        up[k] += h;
        down[k] -= h;
        let f_up = penalized_objective(problem, &ArdHyperparameters::from_log(&up, theta.kernel_variance), omega)?.0;
        let f_down = penalized_objective(problem, &ArdHyperparameters::from_log(&down, theta.kernel_variance), omega)?.0;
        let fd = (f_up - f_down) / (2.0 * h);
        err = err.max((fd - grad[k]).abs() / grad[k].abs().max(limits::GRADIENT_FLOOR));
    }
    Ok(err)
}

/// Design sizes `(n, d)` used by the gradient check.
pub const GRADIENT_DESIGNS: [(usize, usize); 5] = [(10, 1), (25, 2), (50, 3), (100, 4), (200, 6)];

/// Analytic gradients of the log marginal likelihood and of the penalized
/// objective against central differences in log-parameter space.
pub fn gradient_accuracy(points: usize, seed: u64) -> EvalResult<CheckOutcome> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut lml_err, mut sic_err) = (0.0_f64, 0.0_f64);
    for &(n, d) in &GRADIENT_DESIGNS {
        let z = gaussian_matrix(&mut rng, n, d);
        let y: Vec<f64> = (0..n)
            .map(|i| (1.5 * z[(i, 0)]).sin() + 0.3 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let problem = GpProblem::new(z.as_ref(), &y)?;
        for _ in 0..points {
            let theta = ArdHyperparameters {
                lengthscales: (0..d).map(|_| rng.random_range(-1.5f64..2.5).exp()).collect(),
                noise_variance: rng.random_range(-4.0f64..0.5).exp(),
                kernel_variance: 1.0,
            };
            let omega = rng.random_range(-5.0f64..2.0).exp();
            lml_err = lml_err.max(gradient_error(&problem, &theta, None)?);
            sic_err = sic_err.max(gradient_error(&problem, &theta, Some(omega))?);
        }
    }
    let passed = lml_err < limits::GRADIENT_RELATIVE && sic_err < limits::GRADIENT_RELATIVE;
    Ok(outcome(
        4,
        "likelihood and penalized-objective gradients",
        started,
        passed,
        format!(
            "{points} points x {} designs; max relative error {lml_err:.2e} (likelihood), {sic_err:.2e} (penalized)",
            GRADIENT_DESIGNS.len()
        ),
    ))
}

/// With every row as an inducing point the Nyström kernel and the KPCR
/// statistic reproduce the exact computation.
pub fn nystrom_exactness(instances: usize, seed: u64) -> EvalResult<CheckOutcome> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut kernel_gap, mut stat_gap) = (0.0_f64, 0.0_f64);
    for i in 0..instances {
        let n = rng.random_range(30..=80);
        let d = rng.random_range(1..=4);
        let x = gaussian_matrix(&mut rng, n, d);
        let spec = KernelSpec::se(rng.random_range(0.5..3.0));
        let exact = kernel_matrix(&spec, x.as_ref(), x.as_ref())?;
        let approx = nystrom_features(x.as_ref(), x.as_ref(), &spec)?.gram();
        kernel_gap = kernel_gap.max(frobenius_diff(exact.as_ref(), approx.as_ref()) / frobenius(exact.as_ref()));

        let sys = white_noise(derive_seed(seed, &[i as u64]), 3, n + 1);
        let plain = kpcr_edge_test(&sys, 0, 1, 1, &KpcrConfig::default(), 0)?;
        let nystrom = KpcrConfig {
            nystrom_threshold: 0,
            n_inducing: n,
            ..KpcrConfig::default()
        };
        let approx = kpcr_edge_test(&sys, 0, 1, 1, &nystrom, derive_seed(seed, &[i as u64, 1]))?;
        stat_gap = stat_gap.max((plain.statistic - approx.statistic).abs() / plain.statistic.abs().max(1e-12));
    }
    let passed = kernel_gap < limits::NYSTROM_KERNEL_RELATIVE && stat_gap < limits::NYSTROM_STATISTIC_RELATIVE;
    Ok(outcome(
        5,
        "Nyström with the full inducing set",
        started,
        passed,
        format!("{instances} instances; max kernel gap {kernel_gap:.2e}, max statistic gap {stat_gap:.2e}"),
    ))
}

fn binomial_sd(p: f64, trials: usize) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// Rejection rate of the nested OLS F-test on independent white-noise pairs.
pub fn f_test_calibration(replicates: usize, n: usize, m: usize, seed: u64) -> EvalResult<CheckOutcome> {
    let started = Instant::now();
    let rejections = (0..replicates)
        .into_par_iter()
        .map(|r| -> EvalResult<bool> {
            let sys = white_noise(derive_seed(seed, &[r as u64]), 2, n + m);
            let design = embed(&sys, 1, 0, m, Preprocessing::None)?;
            let (fit_r, p_r) = lstsq_fitted(design.x.as_ref(), &design.y, 1e-12)?;
            let (fit_u, p_u) = lstsq_fitted(design.z.as_ref(), &design.y, 1e-12)?;
            let ssr_r = residual_ss(&design.y, &fit_r);
            let ssr_u = residual_ss(&design.y, &fit_u);
            Ok(f_test(ssr_r, ssr_u, p_r, p_u, design.n_rows(), limits::ALPHA)?.reject)
        })
        .collect::<EvalResult<Vec<bool>>>()?
        .into_iter()
        .filter(|&r| r)
        .count();
    let rate = rejections as f64 / replicates as f64;
    let band = limits::NULL_SIGMAS * binomial_sd(limits::ALPHA, replicates);
    Ok(outcome(
        6,
        "F-test size on white noise",
        started,
        (rate - limits::ALPHA).abs() <= band,
        format!("{replicates} replicates; rejection rate {rate:.4}, allowed {:.2} ± {band:.4}", limits::ALPHA),
    ))
}

/// Per ordered pair, the level each pipeline's correction guarantees on a
/// two-series system.
pub fn pair_level(method: Method, n_t: usize) -> f64 {
    let ordered = (n_t * (n_t - 1)) as f64;
    match method {
        Method::Kgc => limits::ALPHA / (ordered / 2.0),
        _ => limits::ALPHA / ordered,
    }
}

fn count_edges(graph: &CausalGraph) -> usize {
    let n = graph.n_nodes();
    (0..n)
        .flat_map(|a| (0..n).map(move |b| (a, b)))
        .filter(|&(a, b)| a != b && graph.summary_edge(a, b))
        .count()
}

/// Edge rate of the full graph pipelines on pairs of independent series.
pub fn pipeline_calibration(method: Method, mc_runs: usize, n: usize, seed: u64) -> EvalResult<CheckOutcome> {
    let started = Instant::now();
    let n_t = 2;
    let edges: usize = (0..mc_runs)
        .into_par_iter()
        .map(|r| -> EvalResult<usize> {
            let sys = white_noise(derive_seed(seed, &[r as u64]), n_t, n);
            let method_seed = derive_seed(seed, &[r as u64, 1]);
            let graph = match method {
                Method::Kgc => kgc_graph(&sys, 1, &KgcConfig::default())?,
                Method::Kpcr => kpcr_graph(&sys, 1, &KpcrConfig::default(), method_seed)?,
                Method::Lsngc => lsngc_graph(&sys, 1, &LsngcConfig::default(), method_seed)?,
                other => unreachable!("no calibration pipeline for {other}"),
            };
            Ok(count_edges(&graph))
        })
        .collect::<EvalResult<Vec<usize>>>()?
        .into_iter()
        .sum();
    let trials = mc_runs * n_t * (n_t - 1);
    let rate = edges as f64 / trials as f64;
    let level = pair_level(method, n_t);
    let bound = level + limits::NULL_SIGMAS * binomial_sd(level, trials);
    Ok(outcome(
        6,
        &format!("{method} edge rate on independent pairs"),
        started,
        rate <= bound,
        format!("{mc_runs} systems; edge rate {rate:.4} <= {bound:.4} (pair level {level:.4})"),
    ))
}

/// Number of GP fits the same-step pipeline performs on a random system
/// with `n_t` series and lag order 1.
pub fn contemporaneous_fit_count(n_t: usize, n: usize, seed: u64) -> EvalResult<usize> {
    let spec = BenchmarkSpec::new(SystemId::contemporaneous_random(n_t), n, 0);
    let mut config = ExperimentConfig::for_benchmark(Method::GpsicContemp, spec, 1, seed);
    config.m = Some(LagSetting::Fixed(1));
    let report = run_experiment(&config)?;
    Ok(report.runs[0].gp_fits.expect("same-step runs report their fit count"))
}
