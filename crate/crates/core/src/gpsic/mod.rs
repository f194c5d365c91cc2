//! Score-based GP Granger causality.
//!
//! One GP with an ARD squared-exponential kernel is fitted per target over
//! the lags of every series. The marginal likelihood is penalized by a
//! smooth count of active inputs, annealed through a decreasing schedule of
//! `ω`, so irrelevant inputs are pushed to very long lengthscales. Inputs
//! whose fitted lengthscale stays below a threshold are reported as parents.

mod likelihood;
mod sic;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{embed, embed_all, EmbeddedDesign, LagColumn, Preprocessing, TimeSeriesSystem};
use crate::error::{Error, Result};
use crate::graph::CausalGraph;
use crate::optim::BoxLbfgs;
use crate::stats::{chi_squared_test, TestOutcome};

pub use likelihood::{log_marginal_likelihood, loo_log_pseudo_likelihood, GpProblem};
pub use sic::sic_penalty;

pub const LOG_LENGTHSCALE_BOUNDS: (f64, f64) = (-4.605_170_185_988_091, 13.815_510_557_964_274);
pub const LOG_NOISE_BOUNDS: (f64, f64) = (-13.815_510_557_964_274, 4.605_170_185_988_091);
/// Ties in the Δℓ comparison within this margin count as "no edge".
pub const DELTA_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArdHyperparameters {
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
    pub kernel_variance: f64,
}

impl ArdHyperparameters {
    /// Default starting point: every lengthscale `√d`, noise variance 0.1.
    pub fn initial(d: usize) -> Self {
        ArdHyperparameters {
            lengthscales: vec![(d as f64).sqrt(); d],
            noise_variance: 0.1,
            kernel_variance: 1.0,
        }
    }

    pub(crate) fn check_dim(&self, d: usize) -> Result<()> {
        if self.lengthscales.len() != d {
            return Err(Error::invalid(format!(
                "{} lengthscales for {d} inputs",
                self.lengthscales.len()
            )));
        }
        if self.lengthscales.iter().any(|l| !(*l > 0.0)) || !(self.noise_variance > 0.0) {
            return Err(Error::invalid("lengthscales and noise variance must be positive"));
        }
        Ok(())
    }

    /// `[log l_1, …, log l_d, log σ²]`
    pub fn to_log(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.lengthscales.iter().map(|l| l.ln()).collect();
        v.push(self.noise_variance.ln());
        v
    }

    pub fn from_log(v: &[f64], kernel_variance: f64) -> Self {
        let d = v.len() - 1;
        ArdHyperparameters {
            lengthscales: v[..d].iter().map(|x| x.exp()).collect(),
            noise_variance: v[d].exp(),
            kernel_variance,
        }
    }
}

/// Strictly decreasing geometric sequence of `ω` values.
pub fn omega_schedule(start: f64, end: f64, steps: usize) -> Result<Vec<f64>> {
    if !(start > 0.0 && end > 0.0) || steps == 0 || (steps > 1 && !(end < start)) {
        return Err(Error::invalid("schedule needs 0 < end < start and at least one step"));
    }
    if steps == 1 {
        return Ok(vec![start]);
    }
    let ratio = (end / start).ln() / (steps - 1) as f64;
    Ok((0..steps).map(|i| start * (ratio * i as f64).exp()).collect())
}

#[derive(Debug, Clone)]
pub struct GpsicConfig {
    pub threshold: f64,
    pub schedule: Vec<f64>,
    pub optimizer: BoxLbfgs,
    pub kernel_variance: f64,
}

impl Default for GpsicConfig {
    fn default() -> Self {
        GpsicConfig {
            threshold: 50.0,
            schedule: omega_schedule(100.0, 1e-5, 50).expect("valid default schedule"),
            optimizer: BoxLbfgs::default(),
            kernel_variance: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpFit {
    pub theta: ArdHyperparameters,
    /// Penalized objective at the last `ω` (the plain log marginal
    /// likelihood for unpenalized fits).
    pub objective: f64,
    pub log_marginal_likelihood: f64,
    pub omega_schedule: Vec<f64>,
    /// Objective at each stage's warm start and at its optimum.
    pub stage_objectives: Vec<(f64, f64)>,
    pub converged: bool,
    pub gradient_norm_final: f64,
    pub evaluations: usize,
}

fn bounds(d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![LOG_LENGTHSCALE_BOUNDS.0; d];
    let mut hi = vec![LOG_LENGTHSCALE_BOUNDS.1; d];
    lo.push(LOG_NOISE_BOUNDS.0);
    hi.push(LOG_NOISE_BOUNDS.1);
    (lo, hi)
}

/// `log p(y | Z, θ) − (log n / 2)·Σ φ_ω(1/l)` and its gradient in log space.
pub fn penalized_objective(problem: &GpProblem, theta: &ArdHyperparameters, omega: Option<f64>) -> Result<(f64, Vec<f64>)> {
    let (lml, mut grad) = log_marginal_likelihood(problem, theta)?;
    let Some(omega) = omega else {
        return Ok((lml, grad));
    };
    let weight = 0.5 * (problem.n() as f64).ln();
    let (pen, pgrad) = sic_penalty(&theta.lengthscales, omega);
    for (g, p) in grad.iter_mut().zip(pgrad) {
        *g -= weight * p;
    }
    Ok((lml - weight * pen, grad))
}

fn run_schedule(
    problem: &GpProblem,
    start: &[f64],
    schedule: &[Option<f64>],
    config: &GpsicConfig,
) -> Result<GpFit> {
    let d = problem.dim();
    let (lo, hi) = bounds(d);
    let tau = config.kernel_variance;
    let mut x = start.to_vec();
    let mut stage_objectives = Vec::with_capacity(schedule.len());
    let mut evaluations = 0;
    let mut last = None;
    for &omega in schedule {
        let neg = |v: &[f64]| -> Result<(f64, Vec<f64>)> {
            let theta = ArdHyperparameters::from_log(v, tau);
            let (f, g) = penalized_objective(problem, &theta, omega)?;
            Ok((-f, g.into_iter().map(|v| -v).collect()))
        };
        let min = config.optimizer.minimize(neg, &x, &lo, &hi)?;
        let begin = -penalized_objective(problem, &ArdHyperparameters::from_log(&clamped(&x, &lo, &hi), tau), omega)?.0;
        stage_objectives.push((-begin, -min.value));
        evaluations += min.evaluations + 1;
        x = min.x.clone();
        last = Some(min);
    }
    let min = last.ok_or_else(|| Error::invalid("empty optimization schedule"))?;
    let theta = ArdHyperparameters::from_log(&min.x, tau);
    let (lml, _) = log_marginal_likelihood(problem, &theta)?;
    Ok(GpFit {
        theta,
        objective: -min.value,
        log_marginal_likelihood: lml,
        omega_schedule: schedule.iter().flatten().copied().collect(),
        stage_objectives,
        converged: min.converged,
        gradient_norm_final: min.projected_gradient_norm,
        evaluations,
    })
}

fn clamped(x: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    x.iter().zip(lo.iter().zip(hi)).map(|(v, (l, h))| v.clamp(*l, *h)).collect()
}

/// Runs `fit` from the default start; if that fails numerically, retries
/// once from a randomly perturbed start.
fn with_restart(d: usize, seed: u64, fit: impl Fn(&[f64]) -> Result<GpFit>) -> Result<GpFit> {
    let start = ArdHyperparameters::initial(d).to_log();
    match fit(&start) {
        Err(e) if e.is_numerical() => {
            log::warn!("GP fit failed ({e}); restarting from a perturbed start");
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let perturbed: Vec<f64> = start.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
            fit(&perturbed)
        }
        other => other,
    }
}

/// Penalized fit over the `ω` schedule with warm starts.
pub fn optimize_penalized(z: faer::MatRef<'_, f64>, y: &[f64], config: &GpsicConfig, seed: u64) -> Result<GpFit> {
    if config.schedule.is_empty() || config.schedule.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::invalid("omega schedule must be non-empty and strictly decreasing"));
    }
    if z.nrows() < 2 * z.ncols() {
        log::warn!("GP design has {} rows for {} inputs", z.nrows(), z.ncols());
    }
    let problem = GpProblem::new(z, y)?;
    let schedule: Vec<Option<f64>> = config.schedule.iter().map(|&w| Some(w)).collect();
    with_restart(z.ncols(), seed, |start| run_schedule(&problem, start, &schedule, config))
}

/// Maximizes the plain marginal likelihood.
pub fn optimize_unpenalized(z: faer::MatRef<'_, f64>, y: &[f64], config: &GpsicConfig, seed: u64) -> Result<GpFit> {
    let problem = GpProblem::new(z, y)?;
    with_restart(z.ncols(), seed, |start| run_schedule(&problem, start, &[None], config))
}

/// Penalized fit on a design's full covariate set.
pub fn fit_design(design: &EmbeddedDesign, config: &GpsicConfig, seed: u64) -> Result<GpFit> {
    optimize_penalized(design.z.as_ref(), &design.y, config, seed)
}

/// Columns whose fitted lengthscale is below `threshold`.
pub fn gpsic_parent_set(design: &EmbeddedDesign, fit: &GpFit, threshold: f64) -> Result<Vec<LagColumn>> {
    if fit.theta.lengthscales.len() != design.column_map.len() {
        return Err(Error::invalid("fit does not belong to this design"));
    }
    Ok(design
        .column_map
        .iter()
        .zip(&fit.theta.lengthscales)
        .filter(|(_, &l)| l < threshold)
        .map(|(c, _)| *c)
        .collect())
}

/// Fitted parents for one target over all lagged series.
pub fn gpsic_target_parents(system: &TimeSeriesSystem, target: usize, m: usize, config: &GpsicConfig, seed: u64) -> Result<Vec<LagColumn>> {
    let design = embed_all(system, target, m)?;
    let fit = fit_design(&design, config, seed)?;
    gpsic_parent_set(&design, &fit, config.threshold)
}

/// One fit per target; lag-resolved edges from every parent other than the
/// target's own lags. `system` should be standardized.
pub fn gpsic_graph(system: &TimeSeriesSystem, m: usize, config: &GpsicConfig, seed: u64) -> Result<CausalGraph> {
    let n_t = system.n_series();
    let mut graph = CausalGraph::new(system.names().to_vec());
    if n_t < 2 {
        return Ok(graph);
    }
    let parents: Vec<Vec<LagColumn>> = (0..n_t)
        .into_par_iter()
        .map(|b| gpsic_target_parents(system, b, m, config, crate::seeding::derive_seed(seed, &[b as u64])))
        .collect::<Result<_>>()?;
    for (b, cols) in parents.into_iter().enumerate() {
        for c in cols.into_iter().filter(|c| c.series != b) {
            graph.add_lagged(c.series, b, c.lag)?;
        }
    }
    Ok(graph)
}

/// Leave-one-out log pseudo-likelihood of a design at fixed hyperparameters.
pub fn loo_pseudo_likelihood(design: &EmbeddedDesign, theta: &ArdHyperparameters) -> Result<f64> {
    let problem = GpProblem::new(design.z.as_ref(), &design.y)?;
    loo_log_pseudo_likelihood(&problem, theta)
}

/// Picks the lag order in `1..=m_max` with the largest LOO pseudo-likelihood
/// of the penalized fit. Every candidate is scored on the same target rows
/// (the first `m_max` steps are never predicted); ties go to the smaller lag.
pub fn select_lag(system: &TimeSeriesSystem, target: usize, m_max: usize, config: &GpsicConfig, seed: u64) -> Result<usize> {
    if m_max == 0 {
        return Err(Error::invalid("m_max must be at least 1"));
    }
    if 2 * m_max >= system.len() {
        return Err(Error::invalid("m_max must be below half the series length"));
    }
    let mut best = (1, f64::NEG_INFINITY);
    for m in 1..=m_max {
        let trimmed = system.tail(system.len() - (m_max - m))?;
        let design = embed_all(&trimmed, target, m)?;
        let fit = fit_design(&design, config, seed)?;
        let score = loo_pseudo_likelihood(&design, &fit.theta)?;
        log::debug!("lag {m}: LOO pseudo-likelihood {score}");
        if score > best.1 {
            best = (m, score);
        }
    }
    Ok(best.0)
}

/// Maximized marginal likelihoods `(ℓ_r, ℓ_u)` without and with the driver.
///
/// The unrestricted fit is also started from the restricted optimum with the
/// driver inputs switched off, so it can only improve on `ℓ_r`.
pub fn restricted_unrestricted_lml(
    system: &TimeSeriesSystem,
    driver: usize,
    target: usize,
    m: usize,
    config: &GpsicConfig,
    seed: u64,
) -> Result<(f64, f64)> {
    let design = embed(system, target, driver, m, Preprocessing::None)?;
    let restricted = optimize_unpenalized(design.x.as_ref(), &design.y, config, seed)?;
    let unrestricted = optimize_unpenalized(design.z.as_ref(), &design.y, config, seed)?;

    let problem = GpProblem::new(design.z.as_ref(), &design.y)?;
    let mut warm = Vec::with_capacity(design.z.ncols() + 1);
    let mut rest = restricted.theta.lengthscales.iter();
    for c in &design.column_map {
        if c.series == driver {
            warm.push(LOG_LENGTHSCALE_BOUNDS.1);
        } else {
            warm.push(rest.next().expect("restricted columns").ln());
        }
    }
    warm.push(restricted.theta.noise_variance.ln());
    let warm_fit = run_schedule(&problem, &warm, &[None], config)?;
    let l_u = unrestricted.log_marginal_likelihood.max(warm_fit.log_marginal_likelihood);
    Ok((restricted.log_marginal_likelihood, l_u))
}

/// Edge iff the unrestricted maximized marginal likelihood exceeds the
/// restricted one by more than [`DELTA_TOLERANCE`].
pub fn gp_delta_baseline(system: &TimeSeriesSystem, driver: usize, target: usize, m: usize, config: &GpsicConfig, seed: u64) -> Result<bool> {
    let (l_r, l_u) = restricted_unrestricted_lml(system, driver, target, m, config, seed)?;
    Ok(l_u > l_r + DELTA_TOLERANCE)
}

/// Likelihood-ratio test `2(ℓ_u − ℓ_r) ~ χ²_m`.
pub fn gp_glrt_baseline(
    system: &TimeSeriesSystem,
    driver: usize,
    target: usize,
    m: usize,
    alpha: f64,
    config: &GpsicConfig,
    seed: u64,
) -> Result<TestOutcome> {
    let (l_r, l_u) = restricted_unrestricted_lml(system, driver, target, m, config, seed)?;
    chi_squared_test(2.0 * (l_u - l_r), m, alpha)
}

/// Summary graph from a pairwise GP baseline decision.
pub fn gp_baseline_graph(
    system: &TimeSeriesSystem,
    m: usize,
    config: &GpsicConfig,
    seed: u64,
    glrt_alpha: Option<f64>,
) -> Result<CausalGraph> {
    let n_t = system.n_series();
    let pairs: Vec<(usize, usize)> = (0..n_t)
        .flat_map(|a| (0..n_t).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect();
    let decisions: Vec<bool> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let s = crate::seeding::derive_seed(seed, &[a as u64, b as u64]);
            match glrt_alpha {
                Some(alpha) => gp_glrt_baseline(system, a, b, m, alpha, config, s).map(|o| o.reject),
                None => gp_delta_baseline(system, a, b, m, config, s),
            }
        })
        .collect::<Result<_>>()?;
    let mut graph = CausalGraph::new(system.names().to_vec());
    for (&(a, b), edge) in pairs.iter().zip(decisions) {
        if edge {
            for lag in 1..=m {
                graph.add_lagged(a, b, lag)?;
            }
        }
    }
    Ok(graph)
}
