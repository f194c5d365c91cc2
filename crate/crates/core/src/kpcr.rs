//! Kernel principal component regression Granger test.
//!
//! Both models regress the target on the leading kernel principal
//! components of their covariates. The degrees of freedom of each model are
//! the number of retained components, and the nested comparison is an
//! F-test with a Bonferroni correction over all ordered pairs.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use faer::{Mat, MatRef};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{embed, embed_all, EmbeddedDesign, Preprocessing, TimeSeriesSystem};
use crate::error::{Error, Result};
use crate::graph::CausalGraph;
use crate::kernels::{center_kernel, kernel_matrix, nystrom_features, KernelSpec};
use crate::linalg::{residual_ss, sym_eigen_desc, SpectralBasis};
use crate::seeding::derive_seed;
use crate::stats::{f_test, TestOutcome};

#[derive(Debug, Clone)]
pub struct KpcrConfig {
    /// `None` selects a squared-exponential kernel with lengthscale `c·n_t·m`.
    pub kernel: Option<KernelSpec>,
    pub mu: f64,
    pub c: f64,
    /// Times `c` may be doubled while the unrestricted model has no more
    /// components than the restricted one. Only used with the default kernel.
    pub max_doublings: u32,
    /// Row count above which the Nyström approximation is used.
    pub nystrom_threshold: usize,
    pub n_inducing: usize,
    pub alpha: f64,
}

impl Default for KpcrConfig {
    fn default() -> Self {
        KpcrConfig {
            kernel: None,
            mu: 1e-6,
            c: 2.0,
            max_doublings: 5,
            nystrom_threshold: 1000,
            n_inducing: 100,
            alpha: 0.05,
        }
    }
}

impl KpcrConfig {
    fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) || !(self.c > 0.0) || self.n_inducing == 0 {
            return Err(Error::invalid("KPCR needs mu > 0, C > 0 and at least one inducing row"));
        }
        Ok(())
    }

    fn kernel_for(&self, n_t: usize, m: usize, attempt: u32) -> KernelSpec {
        self.kernel.clone().unwrap_or_else(|| {
            KernelSpec::se(self.c * 2f64.powi(attempt as i32) * (n_t * m) as f64)
        })
    }

    fn attempts(&self) -> u32 {
        if self.kernel.is_some() {
            1
        } else {
            self.max_doublings + 1
        }
    }
}

/// Orthonormal basis of the leading principal directions of the centered
/// kernel of `covariates` (eigenvalues `> mu·λ_max`).
pub fn kernel_pc_basis(covariates: MatRef<'_, f64>, spec: &KernelSpec, mu: f64) -> Result<SpectralBasis> {
    let k = center_kernel(kernel_matrix(spec, covariates, covariates)?.as_ref())?;
    SpectralBasis::filtered(k.as_ref(), mu, true)
}

/// Principal-component covariates `K A Λ^{-1/2}` of a centered kernel,
/// where `A, Λ` are its retained eigenvectors and eigenvalues.
pub fn pc_covariates(k_centered: MatRef<'_, f64>, mu: f64) -> Result<(Mat<f64>, SpectralBasis)> {
    let basis = SpectralBasis::filtered(k_centered, mu, true)?;
    let scaled = Mat::from_fn(basis.dim(), basis.rank(), |i, j| {
        basis.basis[(i, j)] / basis.eigenvalues[j].sqrt()
    });
    Ok((k_centered * &scaled, basis))
}

/// Primal basis from centered explicit features: with `φᵀφ = V Λ Vᵀ`,
/// returns `φ V Λ^{-1/2}` over eigenvalues `> mu·λ_max`.
pub fn feature_pc_basis(phi_centered: MatRef<'_, f64>, mu: f64) -> Result<SpectralBasis> {
    let gram = phi_centered.transpose() * phi_centered;
    let (values, vectors) = sym_eigen_desc(gram.as_ref())?;
    let lambda_max = values.first().copied().unwrap_or(0.0);
    if !(lambda_max > 0.0) {
        return Err(Error::numerical("degenerate kernel: largest eigenvalue is not positive"));
    }
    let keep = values.iter().take_while(|&&v| v > mu * lambda_max).count();
    let scaled = Mat::from_fn(vectors.nrows(), keep, |i, j| vectors[(i, j)] / values[j].sqrt());
    Ok(SpectralBasis {
        basis: phi_centered * &scaled,
        eigenvalues: values[..keep].to_vec(),
    })
}

fn select_rows(a: MatRef<'_, f64>, rows: &[usize]) -> Mat<f64> {
    Mat::from_fn(rows.len(), a.ncols(), |i, j| a[(rows[i], j)])
}

fn inducing_rows(n: usize, config: &KpcrConfig, seed: u64) -> Option<Vec<usize>> {
    (n > config.nystrom_threshold).then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, n, config.n_inducing.min(n)).into_vec();
        idx.sort_unstable();
        idx
    })
}

fn basis_for(covariates: MatRef<'_, f64>, spec: &KernelSpec, mu: f64, inducing: Option<&[usize]>) -> Result<SpectralBasis> {
    match inducing {
        None => kernel_pc_basis(covariates, spec, mu),
        Some(rows) => {
            let xj = select_rows(covariates, rows);
            let phi = nystrom_features(covariates, xj.as_ref(), spec)?.center();
            feature_pc_basis(phi.phi.as_ref(), mu)
        }
    }
}

type CacheKey = (usize, u32);

/// Unrestricted bases shared across drivers of the same target. The
/// unrestricted kernel depends only on the set of lagged columns, so the
/// driver-first column order of each pair's design does not matter.
#[derive(Default)]
pub struct UnrestrictedCache {
    entries: Mutex<HashMap<CacheKey, Arc<SpectralBasis>>>,
}

impl UnrestrictedCache {
    fn get_or_compute(&self, key: CacheKey, compute: impl FnOnce() -> Result<SpectralBasis>) -> Result<Arc<SpectralBasis>> {
        if let Some(hit) = self.entries.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let value = Arc::new(compute()?);
        Ok(self
            .entries
            .lock()
            .expect("cache lock")
            .entry(key)
            .or_insert(value)
            .clone())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Tests `driver → target`. `seed` only matters on the Nyström path, where
/// it picks the inducing rows (shared by both models).
pub fn kpcr_edge_test(
    system: &TimeSeriesSystem,
    driver: usize,
    target: usize,
    m: usize,
    config: &KpcrConfig,
    seed: u64,
) -> Result<TestOutcome> {
    edge_test(system, driver, target, m, config, seed, None)
}

fn unrestricted_design(system: &TimeSeriesSystem, target: usize, m: usize) -> Result<EmbeddedDesign> {
    let mut all = embed_all(system, target, m)?;
    all.kgc_preprocess()?;
    Ok(all)
}

fn edge_test(
    system: &TimeSeriesSystem,
    driver: usize,
    target: usize,
    m: usize,
    config: &KpcrConfig,
    seed: u64,
    cache: Option<&UnrestrictedCache>,
) -> Result<TestOutcome> {
    config.validate()?;
    let n_t = system.n_series();
    let design = embed(system, target, driver, m, Preprocessing::Kgc)?;
    let n = design.n_rows();
    let inducing = inducing_rows(n, config, seed);
    let corrected_alpha = config.alpha / (n_t * (n_t - 1)) as f64;

    for attempt in 0..config.attempts() {
        let spec = config.kernel_for(n_t, m, attempt);
        let restricted = basis_for(design.x.as_ref(), &spec, config.mu, inducing.as_deref())?;
        let unrestricted = match cache {
            Some(cache) => cache.get_or_compute((target, attempt), || {
                let all = unrestricted_design(system, target, m)?;
                basis_for(all.z.as_ref(), &spec, config.mu, inducing.as_deref())
            })?,
            None => Arc::new(basis_for(design.z.as_ref(), &spec, config.mu, inducing.as_deref())?),
        };
        let (p_r, p_u) = (restricted.rank(), unrestricted.rank());
        if p_u <= p_r || n <= p_u {
            log::debug!("kpcr {driver}->{target}: p_r={p_r}, p_u={p_u}, n={n} at attempt {attempt}");
            continue;
        }
        let ssr_r = residual_ss(&design.y, &restricted.project(&design.y));
        let ssr_u = residual_ss(&design.y, &unrestricted.project(&design.y));
        return f_test(ssr_r, ssr_u, p_r, p_u, n, corrected_alpha);
    }
    Err(Error::numerical("increase C or adjust mu"))
}

/// Tests every ordered pair; declared edges are recorded at every lag `1..=m`.
///
/// Inducing rows (Nyström path) are drawn once per target so the cached
/// unrestricted basis stays valid for every driver.
pub fn kpcr_graph(system: &TimeSeriesSystem, m: usize, config: &KpcrConfig, seed: u64) -> Result<CausalGraph> {
    let n_t = system.n_series();
    let cache = UnrestrictedCache::default();
    let pairs: Vec<(usize, usize)> = (0..n_t)
        .flat_map(|a| (0..n_t).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect();
    let outcomes: Vec<bool> = pairs
        .par_iter()
        .map(|&(a, b)| {
            edge_test(system, a, b, m, config, derive_seed(seed, &[b as u64]), Some(&cache)).map(|o| o.reject)
        })
        .collect::<Result<_>>()?;
    let mut graph = CausalGraph::new(system.names().to_vec());
    for (&(a, b), reject) in pairs.iter().zip(outcomes) {
        if reject {
            for lag in 1..=m {
                graph.add_lagged(a, b, lag)?;
            }
        }
    }
    Ok(graph)
}

/// Runs the same tests as [`kpcr_graph`] with and without the shared cache
/// and returns both statistics per ordered pair.
pub fn kpcr_cache_agreement(system: &TimeSeriesSystem, m: usize, config: &KpcrConfig, seed: u64) -> Result<Vec<(f64, f64)>> {
    let n_t = system.n_series();
    let cache = UnrestrictedCache::default();
    let mut out = Vec::new();
    for a in 0..n_t {
        for b in (0..n_t).filter(|&b| b != a) {
            let s = derive_seed(seed, &[b as u64]);
            let cached = edge_test(system, a, b, m, config, s, Some(&cache))?.statistic;
            let plain = edge_test(system, a, b, m, config, s, None)?.statistic;
            out.push((cached, plain));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius_diff, lstsq_fitted, spd_inverse};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn noise_system(seed: u64, n_t: usize, len: usize) -> TimeSeriesSystem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let series = (0..n_t)
            .map(|_| (0..len).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        TimeSeriesSystem::from_series(series).unwrap()
    }

    fn with_kernel(kernel: KernelSpec) -> KpcrConfig {
        KpcrConfig {
            kernel: Some(kernel),
            ..KpcrConfig::default()
        }
    }

    #[test]
    fn redundant_driver_has_no_extra_components() {
        let base = noise_system(1, 2, 60);
        let sys = TimeSeriesSystem::from_series(vec![base.series(1).to_vec(), base.series(1).to_vec()]).unwrap();
        let err = kpcr_edge_test(&sys, 0, 1, 2, &with_kernel(KernelSpec::Linear), 0).unwrap_err();
        assert!(err.to_string().contains("increase C or adjust mu"));
        assert!(err.is_numerical());
    }

    #[test]
    fn linear_kernel_matches_ols_f() {
        let sys = noise_system(4, 3, 80);
        let o = kpcr_edge_test(&sys, 0, 2, 2, &with_kernel(KernelSpec::Linear), 0).unwrap();
        let d = embed(&sys, 2, 0, 2, Preprocessing::Kgc).unwrap();
        let (fr, pr) = lstsq_fitted(d.x.as_ref(), &d.y, 1e-12).unwrap();
        let (fu, pu) = lstsq_fitted(d.z.as_ref(), &d.y, 1e-12).unwrap();
        let reference = f_test(residual_ss(&d.y, &fr), residual_ss(&d.y, &fu), pr, pu, d.n_rows(), 0.05).unwrap();
        assert!((o.statistic - reference.statistic).abs() < 1e-8 * reference.statistic.max(1.0));
    }

    #[test]
    fn two_series_use_two_tests() {
        let sys = noise_system(2, 2, 100);
        let o = kpcr_edge_test(&sys, 0, 1, 1, &KpcrConfig::default(), 0).unwrap();
        assert!((o.corrected_alpha - 0.025).abs() < 1e-15);
    }

    #[test]
    fn pc_covariates_span_retained_eigenvectors() {
        let sys = noise_system(7, 3, 45);
        let d = embed(&sys, 1, 0, 2, Preprocessing::Kgc).unwrap();
        for spec in [KernelSpec::Linear, KernelSpec::InhomogeneousPolynomial { degree: 2 }] {
            let k = center_kernel(kernel_matrix(&spec, d.z.as_ref(), d.z.as_ref()).unwrap().as_ref()).unwrap();
            let (f, basis) = pc_covariates(k.as_ref(), 1e-6).unwrap();
            let inv = spd_inverse((f.transpose() * &f).as_ref()).unwrap();
            let hat = &(&f * &inv) * f.transpose();
            assert!(frobenius_diff(hat.as_ref(), basis.matrix().as_ref()) < 1e-8);
        }
    }

    #[test]
    fn polynomial_projectors_are_nested() {
        let sys = noise_system(3, 3, 50);
        let d = embed(&sys, 0, 1, 1, Preprocessing::Kgc).unwrap();
        let spec = KernelSpec::InhomogeneousPolynomial { degree: 2 };
        let p = kernel_pc_basis(d.x.as_ref(), &spec, 1e-6).unwrap().matrix();
        let pu = kernel_pc_basis(d.z.as_ref(), &spec, 1e-6).unwrap().matrix();
        assert!(frobenius_diff((&pu * &p).as_ref(), p.as_ref()) < 1e-6);
        assert!(frobenius_diff((&p * &p).as_ref(), p.as_ref()) < 1e-8);
    }

    #[test]
    fn full_inducing_set_matches_exact_path() {
        let sys = noise_system(5, 3, 61);
        let exact = kpcr_edge_test(&sys, 0, 1, 1, &KpcrConfig::default(), 0).unwrap();
        let nys = KpcrConfig {
            nystrom_threshold: 0,
            n_inducing: 60,
            ..KpcrConfig::default()
        };
        let approx = kpcr_edge_test(&sys, 0, 1, 1, &nys, 3).unwrap();
        let rel = (exact.statistic - approx.statistic).abs() / exact.statistic.abs().max(1e-12);
        assert!(rel < 1e-5, "{} vs {}", exact.statistic, approx.statistic);
        assert_eq!(exact.df, approx.df);
    }

    #[test]
    fn cached_bases_match_uncached() {
        let sys = noise_system(6, 3, 90);
        for cfg in [
            KpcrConfig::default(),
            with_kernel(KernelSpec::InhomogeneousPolynomial { degree: 2 }),
            KpcrConfig { nystrom_threshold: 50, n_inducing: 30, ..KpcrConfig::default() },
        ] {
            for (cached, plain) in kpcr_cache_agreement(&sys, 2, &cfg, 11).unwrap() {
                assert!((cached - plain).abs() <= 1e-8 * plain.abs().max(1.0), "{cached} vs {plain}");
            }
        }
    }

    #[test]
    fn detects_nonlinear_driver() {
        let noise = noise_system(8, 3, 251);
        let x = noise.series(0).to_vec();
        let mut y = vec![0.0; 251];
        for t in 1..251 {
            y[t] = (2.0 * x[t - 1]).sin() + 0.2 * noise.series(1)[t];
        }
        let sys = TimeSeriesSystem::from_series(vec![x, y, noise.series(2).to_vec()]).unwrap();
        let g = kpcr_graph(&sys, 1, &KpcrConfig::default(), 1).unwrap();
        assert!(g.summary_edge(0, 1));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn projectors_idempotent(seed in 0u64..10_000) {
            let sys = noise_system(seed, 2, 40);
            let d = embed(&sys, 1, 0, 2, Preprocessing::Kgc).unwrap();
            let p = kernel_pc_basis(d.z.as_ref(), &KernelSpec::se(4.0), 1e-6).unwrap().matrix();
            prop_assert!(frobenius_diff((&p * &p).as_ref(), p.as_ref()) < 1e-8);
            prop_assert!(frobenius_diff(p.as_ref(), p.transpose()) < 1e-8);
        }

        #[test]
        fn nested_kernels_never_fit_worse(seed in 0u64..10_000) {
            let sys = noise_system(seed, 3, 45);
            let d = embed(&sys, 2, 1, 1, Preprocessing::Kgc).unwrap();
            let spec = KernelSpec::InhomogeneousPolynomial { degree: 2 };
            let r = kernel_pc_basis(d.x.as_ref(), &spec, 1e-6).unwrap();
            let u = kernel_pc_basis(d.z.as_ref(), &spec, 1e-6).unwrap();
            prop_assume!(u.rank() > r.rank());
            let ssr_r = residual_ss(&d.y, &r.project(&d.y));
            let ssr_u = residual_ss(&d.y, &u.project(&d.y));
            prop_assert!(ssr_u <= ssr_r + 1e-9);
        }
    }
}
