//! Large-scale nonlinear Granger causality.
//!
//! Each side of the regression is mapped through a normalized radial basis
//! layer whose centers come from k-means. The restricted model uses the
//! features of the conditioning block only; the unrestricted model adds the
//! driver's features. Nested least squares fits feed an F-test, and the
//! resulting p-values are corrected across the graph with Benjamini–Hochberg.

use faer::{Mat, MatRef};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{embed, Preprocessing, TimeSeriesSystem};
use crate::error::{Error, Result};
use crate::graph::CausalGraph;
use crate::linalg::{lstsq_fitted, residual_ss, row_sq_dist};
use crate::seeding::derive_seed;
use crate::stats::{bh_fdr, f_test, TestOutcome};

const MAX_LLOYD_ITERATIONS: usize = 300;
const LSTSQ_RCOND: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct LsngcConfig {
    /// Centers for the conditioning block.
    pub c_f: usize,
    /// Centers for the driver block.
    pub c_g: usize,
    pub alpha: f64,
}

impl Default for LsngcConfig {
    fn default() -> Self {
        LsngcConfig {
            c_f: 25,
            c_g: 5,
            alpha: 0.05,
        }
    }
}

/// k-means++ seeding followed by Lloyd iterations.
///
/// Always returns exactly `k` centroids: a cluster that empties is re-seeded
/// with the point lying farthest from its current centroid.
pub fn kmeans(x: MatRef<'_, f64>, k: usize, seed: u64) -> Result<Mat<f64>> {
    let (n, d) = (x.nrows(), x.ncols());
    if k == 0 {
        return Err(Error::invalid("k-means needs at least one cluster"));
    }
    if k > n {
        return Err(Error::invalid(format!("cannot form {k} clusters from {n} rows")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Mat::<f64>::zeros(k, d);
    let first = rng.random_range(0..n);
    copy_row(x, first, &mut centroids, 0);
    let mut nearest: Vec<f64> = (0..n).map(|i| row_sq_dist(x, i, centroids.as_ref(), 0)).collect();
    for c in 1..k {
        let pick = match WeightedIndex::new(&nearest) {
            Ok(dist) => dist.sample(&mut rng),
            // All remaining mass is zero (duplicate rows): take any row.
            Err(_) => rng.random_range(0..n),
        };
        copy_row(x, pick, &mut centroids, c);
        for (i, best) in nearest.iter_mut().enumerate() {
            *best = best.min(row_sq_dist(x, i, centroids.as_ref(), c));
        }
    }

    let mut assignment = vec![usize::MAX; n];
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut changed = false;
        for i in 0..n {
            let best = nearest_centroid(x, i, centroids.as_ref()).0;
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        let mut sums = Mat::<f64>::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            counts[c] += 1;
            for j in 0..d {
                sums[(c, j)] += x[(i, j)];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centroids[(c, j)] = sums[(c, j)] / counts[c] as f64;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = row_sq_dist(x, a, centroids.as_ref(), assignment[a]);
                        let db = row_sq_dist(x, b, centroids.as_ref(), assignment[b]);
                        da.total_cmp(&db)
                    })
                    .expect("n > 0");
                copy_row(x, far, &mut centroids, c);
                counts[assignment[far]] -= 1;
                assignment[far] = c;
                counts[c] = 1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(centroids)
}

fn copy_row(src: MatRef<'_, f64>, i: usize, dst: &mut Mat<f64>, r: usize) {
    for j in 0..src.ncols() {
        dst[(r, j)] = src[(i, j)];
    }
}

fn nearest_centroid(x: MatRef<'_, f64>, i: usize, centroids: MatRef<'_, f64>) -> (usize, f64) {
    (0..centroids.nrows())
        .map(|c| (c, row_sq_dist(x, i, centroids, c)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one centroid")
}

/// Normalized Gaussian radial basis layer.
#[derive(Debug, Clone)]
pub struct GrbfMap {
    pub centroids: Mat<f64>,
    pub lengthscale: f64,
}

impl GrbfMap {
    /// Clusters `x` into `c` centers. The lengthscale is the mean distance
    /// over all pairs of centers, or, with a single center, the mean
    /// distance from the rows to it.
    pub fn fit(x: MatRef<'_, f64>, c: usize, seed: u64) -> Result<Self> {
        let centroids = kmeans(x, c, seed)?;
        let lengthscale = if c == 1 {
            (0..x.nrows())
                .map(|i| row_sq_dist(x, i, centroids.as_ref(), 0).sqrt())
                .sum::<f64>()
                / x.nrows() as f64
        } else {
            let mut total = 0.0;
            for a in 0..c {
                for b in a + 1..c {
                    total += row_sq_dist(centroids.as_ref(), a, centroids.as_ref(), b).sqrt();
                }
            }
            total / (c * (c - 1) / 2) as f64
        };
        if !(lengthscale > 0.0) {
            return Err(Error::numerical("cluster centers coincide; lengthscale is zero"));
        }
        Ok(GrbfMap {
            centroids,
            lengthscale,
        })
    }
}

/// Features `exp(-‖x_i − u_j‖²/l²) / Σ_k exp(-‖x_i − u_k‖²/l²)`; rows sum to one.
pub fn grbf_features(x: MatRef<'_, f64>, map: &GrbfMap) -> Result<Mat<f64>> {
    if x.ncols() != map.centroids.ncols() {
        return Err(Error::invalid("feature map and data have different widths"));
    }
    if !(map.lengthscale > 0.0) {
        return Err(Error::invalid("lengthscale must be positive"));
    }
    let (n, c) = (x.nrows(), map.centroids.nrows());
    let inv = 1.0 / (map.lengthscale * map.lengthscale);
    let mut out = Mat::<f64>::zeros(n, c);
    for i in 0..n {
        let logits: Vec<f64> = (0..c)
            .map(|j| -row_sq_dist(x, i, map.centroids.as_ref(), j) * inv)
            .collect();
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|v| (v - top).exp()).collect();
        let total: f64 = weights.iter().sum();
        for j in 0..c {
            out[(i, j)] = weights[j] / total;
        }
    }
    Ok(out)
}

/// Residual sums of squares of the restricted and unrestricted fits.
#[derive(Debug, Clone, Copy)]
pub struct NestedFit {
    pub ssr_r: f64,
    pub ssr_u: f64,
    pub n: usize,
}

fn hstack(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    let ca = a.ncols();
    Mat::from_fn(a.nrows(), ca + b.ncols(), |i, j| if j < ca { a[(i, j)] } else { b[(i, j - ca)] })
}

/// Fits both models for `driver → target` and returns their residuals.
pub fn lsngc_nested_fit(
    system: &TimeSeriesSystem,
    driver: usize,
    target: usize,
    m: usize,
    config: &LsngcConfig,
    seed: u64,
) -> Result<NestedFit> {
    let design = embed(system, target, driver, m, Preprocessing::None)?;
    let n = design.n_rows();
    if n <= config.c_f + config.c_g {
        return Err(Error::invalid(format!(
            "need more than c_f + c_g = {} rows, have {n}",
            config.c_f + config.c_g
        )));
    }
    let driver_block = design.driver_block();
    let f_map = GrbfMap::fit(design.x.as_ref(), config.c_f, derive_seed(seed, &[0]))?;
    let g_map = GrbfMap::fit(driver_block.as_ref(), config.c_g, derive_seed(seed, &[1]))?;
    let f = grbf_features(design.x.as_ref(), &f_map)?;
    let g = grbf_features(driver_block.as_ref(), &g_map)?;
    let (fit_r, _) = lstsq_fitted(f.as_ref(), &design.y, LSTSQ_RCOND)?;
    let (fit_u, _) = lstsq_fitted(hstack(&f, &g).as_ref(), &design.y, LSTSQ_RCOND)?;
    Ok(NestedFit {
        ssr_r: residual_ss(&design.y, &fit_r),
        ssr_u: residual_ss(&design.y, &fit_u),
        n,
    })
}

/// F-test for `driver → target`. The outcome's decision uses the
/// uncorrected `config.alpha`; graph-level correction happens in [`lsngc_graph`].
pub fn lsngc_edge_test(
    system: &TimeSeriesSystem,
    driver: usize,
    target: usize,
    m: usize,
    config: &LsngcConfig,
    seed: u64,
) -> Result<TestOutcome> {
    let fit = lsngc_nested_fit(system, driver, target, m, config, seed)?;
    f_test(fit.ssr_r, fit.ssr_u, config.c_f, config.c_f + config.c_g, fit.n, config.alpha)
}

/// Tests all ordered pairs with a pair-specific seed derived from `seed`
/// and keeps the Benjamini–Hochberg rejections. Declared edges are recorded
/// at every lag `1..=m`.
pub fn lsngc_graph(system: &TimeSeriesSystem, m: usize, config: &LsngcConfig, seed: u64) -> Result<CausalGraph> {
    let n_t = system.n_series();
    let pairs: Vec<(usize, usize)> = (0..n_t)
        .flat_map(|a| (0..n_t).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect();
    let outcomes: Vec<TestOutcome> = pairs
        .par_iter()
        .map(|&(a, b)| lsngc_edge_test(system, a, b, m, config, derive_seed(seed, &[a as u64, b as u64])))
        .collect::<Result<_>>()?;
    let p_values: Vec<f64> = outcomes.iter().map(|o| o.p_value).collect();
    let reject = bh_fdr(&p_values, config.alpha)?;
    let mut graph = CausalGraph::new(system.names().to_vec());
    for (&(a, b), keep) in pairs.iter().zip(reject) {
        if keep {
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
    use crate::linalg::from_rows;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize, shift: f64) -> Mat<f64> {
        Mat::from_fn(n, d, |_, _| -> f64 { shift + rng.sample::<f64, _>(StandardNormal) })
    }

    #[test]
    fn kmeans_k_equals_rows() {
        let x = from_rows(&[vec![0.0, 1.0], vec![3.0, 3.0], vec![-2.0, 5.0]]);
        let c = kmeans(x.as_ref(), 3, 1).unwrap();
        let mut rows: Vec<Vec<f64>> = (0..3).map(|i| vec![c[(i, 0)], c[(i, 1)]]).collect();
        rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(rows, vec![vec![-2.0, 5.0], vec![0.0, 1.0], vec![3.0, 3.0]]);
        assert!(kmeans(x.as_ref(), 4, 1).is_err());
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let x = from_rows(&[vec![0.0, 1.0], vec![3.0, 3.0], vec![-2.0, 5.0], vec![1.0, 1.0]]);
        let c = kmeans(x.as_ref(), 1, 9).unwrap();
        assert!((c[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((c[(0, 1)] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn kmeans_recovers_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = gaussian(&mut rng, 50, 2, -10.0);
        let b = gaussian(&mut rng, 50, 2, 10.0);
        let x = Mat::from_fn(100, 2, |i, j| if i < 50 { a[(i, j)] } else { b[(i - 50, j)] });
        let c = kmeans(x.as_ref(), 2, 3).unwrap();
        let tol = 3.0 / (50.0f64).sqrt();
        let mut xs = [c[(0, 0)], c[(1, 0)]];
        xs.sort_by(f64::total_cmp);
        assert!((xs[0] + 10.0).abs() < tol && (xs[1] - 10.0).abs() < tol, "{xs:?}");
    }

    #[test]
    fn kmeans_keeps_k_with_duplicate_rows() {
        let x = from_rows(&[vec![1.0], vec![1.0], vec![1.0], vec![2.0]]);
        let c = kmeans(x.as_ref(), 3, 0).unwrap();
        assert_eq!(c.nrows(), 3);
    }

    #[test]
    fn grbf_symmetry_and_degenerate_cases() {
        let map = GrbfMap {
            centroids: from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]),
            lengthscale: 0.7,
        };
        let origin = from_rows(&[vec![0.0, 0.0]]);
        let f = grbf_features(origin.as_ref(), &map).unwrap();
        for j in 0..4 {
            assert!((f[(0, j)] - 0.25).abs() < 1e-15);
        }
        let one = GrbfMap {
            centroids: from_rows(&[vec![3.0]]),
            lengthscale: 1.0,
        };
        let x = from_rows(&[vec![0.0], vec![100.0]]);
        let f = grbf_features(x.as_ref(), &one).unwrap();
        assert_eq!((f[(0, 0)], f[(1, 0)]), (1.0, 1.0));
        assert!(grbf_features(origin.as_ref(), &one).is_err());
    }

    #[test]
    fn collinear_driver_features_add_nothing() {
        // The driver copies the target, so its features are functions of X already;
        // with one driver center the added column is constant and lies in span(f).
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s: Vec<f64> = (0..80).map(|_| rng.sample(StandardNormal)).collect();
        let sys = TimeSeriesSystem::from_series(vec![s.clone(), s]).unwrap();
        let cfg = LsngcConfig { c_f: 10, c_g: 1, alpha: 0.05 };
        let fit = lsngc_nested_fit(&sys, 0, 1, 2, &cfg, 5).unwrap();
        assert!((fit.ssr_r - fit.ssr_u).abs() < 1e-8);
        let o = lsngc_edge_test(&sys, 0, 1, 2, &cfg, 5).unwrap();
        assert!(o.statistic < 1e-6);
    }

    #[test]
    fn parameter_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let series = (0..3).map(|_| (0..120).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let sys = TimeSeriesSystem::from_series(series).unwrap();
        let o = lsngc_edge_test(&sys, 0, 1, 2, &LsngcConfig::default(), 1).unwrap();
        match o.df {
            crate::stats::DegreesOfFreedom::Pair(d1, d2) => {
                assert_eq!(d1, 5.0);
                assert_eq!(d2, (118 - 30) as f64);
            }
            _ => panic!("expected a pair of df"),
        }
    }

    #[test]
    fn graph_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let series = (0..3).map(|_| (0..150).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let sys = TimeSeriesSystem::from_series(series).unwrap();
        let a = lsngc_graph(&sys, 1, &LsngcConfig::default(), 77).unwrap();
        let b = lsngc_graph(&sys, 1, &LsngcConfig::default(), 77).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(30))]
        #[test]
        fn features_rows_sum_to_one(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = gaussian(&mut rng, 10, 2, 0.0);
            let map = GrbfMap::fit(x.as_ref(), 3, seed).unwrap();
            let f = grbf_features(x.as_ref(), &map).unwrap();
            for i in 0..10 {
                let s: f64 = (0..3).map(|j| f[(i, j)]).sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                for j in 0..3 { prop_assert!(f[(i, j)] > 0.0 && f[(i, j)] < 1.0); }
            }
        }

        #[test]
        fn unrestricted_never_fits_worse(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let series = (0..2).map(|_| (0..60).map(|_| rng.sample(StandardNormal)).collect()).collect();
            let sys = TimeSeriesSystem::from_series(series).unwrap();
            let cfg = LsngcConfig { c_f: 8, c_g: 3, alpha: 0.05 };
            let fit = lsngc_nested_fit(&sys, 0, 1, 2, &cfg, seed).unwrap();
            prop_assert!(fit.ssr_u <= fit.ssr_r + 1e-9);
        }
    }
}
