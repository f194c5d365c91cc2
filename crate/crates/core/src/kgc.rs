//! Kernel Granger causality with a filtered causality index.
//!
//! For a driver `a` and target `b`, the target residual after projecting
//! onto the restricted kernel space is correlated with each direction the
//! driver adds to the unrestricted kernel space. Directions whose
//! correlation survives a Bonferroni-corrected t-test contribute to the
//! filtered index; the edge is declared when that index is positive.

use faer::{Mat, MatRef};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{embed, EmbeddedDesign, Preprocessing, TimeSeriesSystem};
use crate::error::{Error, Result};
use crate::graph::CausalGraph;
use crate::kernels::{center_kernel, kernel_matrix, KernelSpec};
use crate::linalg::{col_vec, sym_eigen_desc, SpectralBasis};
use crate::stats::{bonferroni, correlation_t_test};

/// Eigenvectors of `K̃` with eigenvalues below this fraction of the
/// unrestricted kernel's largest eigenvalue are treated as rounding noise.
const ABSOLUTE_EIGEN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct KgcConfig {
    /// `None` selects a squared-exponential kernel with lengthscale `2·n_t·m`.
    pub kernel: Option<KernelSpec>,
    pub mu: f64,
    pub alpha: f64,
}

impl Default for KgcConfig {
    fn default() -> Self {
        KgcConfig {
            kernel: None,
            mu: 1e-6,
            alpha: 0.05,
        }
    }
}

impl KgcConfig {
    fn kernel_for(&self, n_t: usize, m: usize) -> KernelSpec {
        self.kernel
            .clone()
            .unwrap_or_else(|| KernelSpec::se(2.0 * (n_t * m) as f64))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KgcEdgeResult {
    pub delta: f64,
    pub delta_filtered: f64,
    /// `(r_i, p_i)` for every tested direction.
    pub component_correlations: Vec<(f64, f64)>,
    pub n_r: usize,
    pub corrected_alpha: f64,
    pub reject: bool,
}

/// Projector onto eigenvectors of a centered kernel with `λ ≥ mu·λ_max`.
pub fn kgc_projector(k_centered: MatRef<'_, f64>, mu: f64) -> Result<(Mat<f64>, usize)> {
    let basis = SpectralBasis::filtered(k_centered, mu, false)?;
    Ok((basis.matrix(), basis.rank()))
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Tests `driver → target` on a lag embedding of order `m`.
pub fn kgc_edge_test(
    system: &TimeSeriesSystem,
    driver: usize,
    target: usize,
    m: usize,
    config: &KgcConfig,
) -> Result<KgcEdgeResult> {
    let design = embed(system, target, driver, m, Preprocessing::Kgc)?;
    kgc_on_design(&design, system.n_series(), config)
}

/// Runs the test on an already preprocessed design from a system of `n_t` series.
pub fn kgc_on_design(design: &EmbeddedDesign, n_t: usize, config: &KgcConfig) -> Result<KgcEdgeResult> {
    let (driver, target, m) = (design.driver.unwrap_or(usize::MAX), design.target, design.lag_order);
    let n = design.n_rows();
    if n <= n_t * m {
        return Err(Error::invalid(format!(
            "kernel Granger causality needs more rows ({n}) than lagged features ({})",
            n_t * m
        )));
    }
    let spec = config.kernel_for(n_t, m);
    let k = center_kernel(kernel_matrix(&spec, design.x.as_ref(), design.x.as_ref())?.as_ref())?;
    let k_full = center_kernel(kernel_matrix(&spec, design.z.as_ref(), design.z.as_ref())?.as_ref())?;

    let restricted = SpectralBasis::filtered(k.as_ref(), config.mu, false)?;
    let b = &restricted.basis;
    // K̃ = (I − P) K′ (I − P) with P = B Bᵀ.
    let left = &k_full - b * (b.transpose() * &k_full);
    let k_tilde = &left - (&left * b) * b.transpose();

    let (values, vectors) = sym_eigen_desc(k_tilde.as_ref())?;
    let (full_values, _) = sym_eigen_desc(k_full.as_ref())?;
    let full_max = full_values.first().copied().unwrap_or(0.0);
    let tilde_max = values.first().copied().unwrap_or(0.0);
    let cut = (config.mu * tilde_max).max(ABSOLUTE_EIGEN_FLOOR * full_max);
    let n_r = values.iter().take_while(|&&v| v > cut && v > 0.0).count();

    let fitted = restricted.project(&design.y);
    let residual: Vec<f64> = design.y.iter().zip(&fitted).map(|(y, f)| y - f).collect();

    if n_r == 0 {
        log::warn!("no driver directions for {driver} -> {target}; edge not declared");
        return Ok(KgcEdgeResult {
            delta: 0.0,
            delta_filtered: 0.0,
            component_correlations: Vec::new(),
            n_r: 0,
            corrected_alpha: config.alpha,
            reject: false,
        });
    }
    let corrected_alpha = bonferroni(config.alpha, n_r * n_t * (n_t - 1) / 2)?;
    let mut delta = 0.0;
    let mut delta_filtered = 0.0;
    let mut component_correlations = Vec::with_capacity(n_r);
    for i in 0..n_r {
        let w = col_vec(vectors.as_ref(), i);
        let r = pearson(&residual, &w);
        let r_test = r.clamp(-1.0 + 1e-15, 1.0 - 1e-15);
        let outcome = correlation_t_test(r_test, n, 0.5)?.with_alpha(corrected_alpha);
        delta += r * r;
        if outcome.reject {
            delta_filtered += r * r;
        }
        component_correlations.push((r, outcome.p_value));
    }
    Ok(KgcEdgeResult {
        delta,
        delta_filtered,
        component_correlations,
        n_r,
        corrected_alpha,
        reject: delta_filtered > 0.0,
    })
}

/// Tests every ordered pair of distinct series. The test is not
/// lag-resolved, so a declared edge is recorded at every lag `1..=m`.
pub fn kgc_graph(system: &TimeSeriesSystem, m: usize, config: &KgcConfig) -> Result<CausalGraph> {
    let n_t = system.n_series();
    let pairs: Vec<(usize, usize)> = (0..n_t)
        .flat_map(|a| (0..n_t).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect();
    let results: Vec<(usize, usize, bool)> = pairs
        .par_iter()
        .map(|&(a, b)| kgc_edge_test(system, a, b, m, config).map(|r| (a, b, r.reject)))
        .collect::<Result<_>>()?;
    let mut graph = CausalGraph::new(system.names().to_vec());
    for (a, b, reject) in results {
        if reject {
            for lag in 1..=m {
                graph.add_lagged(a, b, lag)?;
            }
        }
    }
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius_diff, lstsq_fitted, residual_ss};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise_system(seed: u64, n_t: usize, len: usize) -> TimeSeriesSystem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let series = (0..n_t)
            .map(|_| (0..len).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        TimeSeriesSystem::from_series(series).unwrap()
    }

    fn linear() -> KgcConfig {
        KgcConfig {
            kernel: Some(KernelSpec::Linear),
            ..KgcConfig::default()
        }
    }

    #[test]
    fn projector_examples() {
        let eye = Mat::<f64>::identity(4, 4);
        let (p, rank) = kgc_projector(eye.as_ref(), 1e-6).unwrap();
        assert_eq!(rank, 4);
        assert!(frobenius_diff(p.as_ref(), eye.as_ref()) < 1e-12);
        let v = faer::mat![[1.0], [2.0], [-1.0]];
        let k = &v * v.transpose();
        let (p, rank) = kgc_projector(k.as_ref(), 1e-6).unwrap();
        assert_eq!(rank, 1);
        let expect = &k * (1.0 / 6.0);
        assert!(frobenius_diff(p.as_ref(), expect.as_ref()) < 1e-12);
        assert!(kgc_projector(Mat::<f64>::zeros(3, 3).as_ref(), 1e-6)
            .unwrap_err()
            .to_string()
            .contains("degenerate kernel"));
    }

    #[test]
    fn projector_rank_matches_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Mat::from_fn(20, 3, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
        let gram = &a * a.transpose();
        let k = center_kernel(gram.as_ref()).unwrap();
        let (p, rank) = kgc_projector(k.as_ref(), 1e-6).unwrap();
        assert_eq!(rank, 3);
        assert!(frobenius_diff((&p * &p).as_ref(), p.as_ref()) < 1e-8);
    }

    #[test]
    fn copied_driver_gives_zero_index() {
        let base = noise_system(1, 2, 60);
        let dup = TimeSeriesSystem::from_series(vec![base.series(1).to_vec(), base.series(1).to_vec()]).unwrap();
        let r = kgc_edge_test(&dup, 0, 1, 2, &linear()).unwrap();
        assert_eq!(r.n_r, 0);
        assert!(r.delta.abs() < 1e-12);
        assert!(!r.reject);
    }

    #[test]
    fn rejects_short_series() {
        let s = noise_system(2, 3, 8);
        assert!(kgc_edge_test(&s, 0, 1, 3, &KgcConfig::default()).is_err());
    }

    #[test]
    fn detects_strong_driver() {
        let noise = noise_system(3, 2, 201);
        let x = noise.series(0).to_vec();
        let mut y = vec![0.0; 201];
        for t in 1..201 {
            y[t] = x[t - 1].powi(2) + 0.1 * noise.series(1)[t];
        }
        let sys = TimeSeriesSystem::from_series(vec![x, y]).unwrap();
        let g = kgc_graph(&sys, 1, &KgcConfig::default()).unwrap();
        assert!(g.summary_edge(0, 1));
        assert!(!g.summary_edge(1, 0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn linear_index_matches_ols(seed in 0u64..10_000, n in 30usize..60, n_t in 2usize..4, m in 1usize..3) {
            let sys = noise_system(seed, n_t, n + m);
            let r = kgc_edge_test(&sys, 0, 1, m, &linear()).unwrap();
            let d = embed(&sys, 1, 0, m, Preprocessing::Kgc).unwrap();
            let (fit_r, _) = lstsq_fitted(d.x.as_ref(), &d.y, 1e-12).unwrap();
            let (fit_u, _) = lstsq_fitted(d.z.as_ref(), &d.y, 1e-12).unwrap();
            let ssr_r = residual_ss(&d.y, &fit_r);
            let ssr_u = residual_ss(&d.y, &fit_u);
            let ols = (ssr_r - ssr_u) / ssr_r;
            prop_assert!((r.delta - ols).abs() < 1e-8, "{} vs {}", r.delta, ols);
            prop_assert!(r.delta >= -1e-12 && r.delta <= 1.0 + 1e-9);
            prop_assert!(r.delta_filtered <= r.delta + 1e-12);
        }

        #[test]
        fn index_invariant_to_target_scale(seed in 0u64..10_000, scale in 0.01f64..100.0) {
            let sys = noise_system(seed, 3, 50);
            let cfg = KgcConfig { kernel: Some(KernelSpec::InhomogeneousPolynomial { degree: 2 }), ..KgcConfig::default() };
            let mut base = embed(&sys, 2, 0, 1, Preprocessing::None).unwrap();
            let mut scaled = base.clone();
            scaled.y.iter_mut().for_each(|v| *v *= scale);
            base.kgc_preprocess().unwrap();
            scaled.kgc_preprocess().unwrap();
            let a = kgc_on_design(&base, 3, &cfg).unwrap();
            let b = kgc_on_design(&scaled, 3, &cfg).unwrap();
            prop_assert!((a.delta - b.delta).abs() < 1e-9);
            prop_assert_eq!(a.n_r, b.n_r);
            for (x, y) in a.component_correlations.iter().zip(&b.component_correlations) {
                prop_assert!((x.0 - y.0).abs() < 1e-9);
            }
        }
    }
}
