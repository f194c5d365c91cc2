//! Kernel evaluations, double centering and Nyström features.

use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::linalg::{inv_sqrt_psd, row_sq_dist};

/// Positive-definite kernel choices shared by the kernel methods.
#[derive(Debug, Clone)]
pub enum KernelSpec {
    /// `variance · exp(-‖x − x′‖² / (2 lengthscale²))`
    SquaredExponential { lengthscale: f64, variance: f64 },
    /// `(1 + x·x′)^degree`
    InhomogeneousPolynomial { degree: u32 },
    /// Gaussian bump `exp(-‖x − x′‖² / lengthscale²)` divided by the
    /// bump mass each argument places on the inducing rows.
    ScaledSe { lengthscale: f64, inducing: Mat<f64> },
    /// Plain inner product `x·x′`.
    Linear,
}

impl KernelSpec {
    pub fn se(lengthscale: f64) -> Self {
        KernelSpec::SquaredExponential {
            lengthscale,
            variance: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::SquaredExponential {
                lengthscale,
                variance,
            } => {
                if !(*lengthscale > 0.0 && lengthscale.is_finite()) {
                    return Err(Error::invalid("lengthscale must be positive"));
                }
                if !(*variance > 0.0 && variance.is_finite()) {
                    return Err(Error::invalid("kernel variance must be positive"));
                }
            }
            KernelSpec::InhomogeneousPolynomial { degree } => {
                if *degree < 1 {
                    return Err(Error::invalid("polynomial degree must be at least 1"));
                }
            }
            KernelSpec::ScaledSe {
                lengthscale,
                inducing,
            } => {
                if !(*lengthscale > 0.0 && lengthscale.is_finite()) {
                    return Err(Error::invalid("lengthscale must be positive"));
                }
                if inducing.nrows() == 0 {
                    return Err(Error::invalid("scaled kernel needs at least one inducing row"));
                }
            }
            KernelSpec::Linear => {}
        }
        Ok(())
    }
}

fn check_dims(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Result<()> {
    if a.ncols() != b.ncols() {
        return Err(Error::invalid(format!(
            "kernel arguments have {} and {} columns",
            a.ncols(),
            b.ncols()
        )));
    }
    Ok(())
}

/// Gram matrix with entry `(i, j)` equal to `k(a_i, b_j)`.
pub fn kernel_matrix(spec: &KernelSpec, a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Result<Mat<f64>> {
    spec.validate()?;
    check_dims(a, b)?;
    let (n, p) = (a.nrows(), b.nrows());
    Ok(match spec {
        KernelSpec::SquaredExponential {
            lengthscale,
            variance,
        } => {
            let s = 1.0 / (2.0 * lengthscale * lengthscale);
            Mat::from_fn(n, p, |i, j| variance * (-row_sq_dist(a, i, b, j) * s).exp())
        }
        KernelSpec::InhomogeneousPolynomial { degree } => {
            let g = a * b.transpose();
            Mat::from_fn(n, p, |i, j| (1.0 + g[(i, j)]).powi(*degree as i32))
        }
        KernelSpec::Linear => a * b.transpose(),
        KernelSpec::ScaledSe {
            lengthscale,
            inducing,
        } => {
            check_dims(a, inducing.as_ref())?;
            let sa = bump_mass(a, inducing.as_ref(), *lengthscale)?;
            let sb = bump_mass(b, inducing.as_ref(), *lengthscale)?;
            let k0 = bump_matrix(a, b, *lengthscale);
            Mat::from_fn(n, p, |i, j| k0[(i, j)] / (sa[i] * sb[j]))
        }
    })
}

/// Unnormalized bumps `exp(-‖a_i − b_j‖² / ℓ²)`.
pub(crate) fn bump_matrix(a: MatRef<'_, f64>, b: MatRef<'_, f64>, lengthscale: f64) -> Mat<f64> {
    let s = 1.0 / (lengthscale * lengthscale);
    Mat::from_fn(a.nrows(), b.nrows(), |i, j| (-row_sq_dist(a, i, b, j) * s).exp())
}

fn bump_mass(x: MatRef<'_, f64>, inducing: MatRef<'_, f64>, lengthscale: f64) -> Result<Vec<f64>> {
    let k0 = bump_matrix(x, inducing, lengthscale);
    let mass: Vec<f64> = (0..x.nrows())
        .map(|i| (0..inducing.nrows()).map(|j| k0[(i, j)]).sum())
        .collect();
    if mass.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::numerical("lengthscale too small"));
    }
    Ok(mass)
}

/// Scaled squared-exponential cross kernel between `x` and the inducing rows:
/// `D_X⁻¹ K₀(X, X_J) D_J⁻¹`, with `D` holding each row's bump mass on `X_J`.
pub fn scaled_se_matrix(x: MatRef<'_, f64>, inducing: MatRef<'_, f64>, lengthscale: f64) -> Result<Mat<f64>> {
    let spec = KernelSpec::ScaledSe {
        lengthscale,
        inducing: inducing.to_owned(),
    };
    kernel_matrix(&spec, x, inducing)
}

/// Double centering `K − P₀K − KP₀ + P₀KP₀` with `P₀ = 𝟙𝟙ᵀ/n`.
pub fn center_kernel(k: MatRef<'_, f64>) -> Result<Mat<f64>> {
    if k.nrows() != k.ncols() {
        return Err(Error::invalid("kernel matrix must be square"));
    }
    let n = k.nrows();
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let nf = n as f64;
    let row_mean: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[(i, j)]).sum::<f64>() / nf).collect();
    let col_mean: Vec<f64> = (0..n).map(|j| k.col(j).iter().sum::<f64>() / nf).collect();
    let grand = row_mean.iter().sum::<f64>() / nf;
    Ok(Mat::from_fn(n, n, |i, j| k[(i, j)] - row_mean[i] - col_mean[j] + grand))
}

/// Explicit features whose inner products give the Nyström kernel.
#[derive(Debug, Clone)]
pub struct NystromFeatures {
    pub phi: Mat<f64>,
    pub inducing: Mat<f64>,
    pub centered: bool,
}

impl NystromFeatures {
    /// Subtracts column means from `phi`.
    pub fn center(mut self) -> Self {
        let n = self.phi.nrows() as f64;
        for j in 0..self.phi.ncols() {
            let mean = self.phi.col(j).iter().sum::<f64>() / n;
            self.phi.col_mut(j).iter_mut().for_each(|v| *v -= mean);
        }
        self.centered = true;
        self
    }

    /// `φ φᵀ`.
    pub fn gram(&self) -> Mat<f64> {
        &self.phi * self.phi.transpose()
    }
}

/// `φ = K(X, X_J) K(X_J, X_J)^{-1/2}`.
///
/// Eigenvalues of the inducing kernel below `1e-12 · λ_max` are dropped
/// from the inverse square root. Only if that fails is a jitter of
/// `1e-8 · mean(diag)` added and the root retried, so a full inducing set
/// reproduces the exact kernel on its retained spectrum.
pub fn nystrom_features(x: MatRef<'_, f64>, inducing: MatRef<'_, f64>, spec: &KernelSpec) -> Result<NystromFeatures> {
    if inducing.nrows() == 0 {
        return Err(Error::invalid("no inducing rows"));
    }
    if inducing.nrows() > x.nrows() {
        return Err(Error::invalid("more inducing rows than data rows"));
    }
    let mut kjj = kernel_matrix(spec, inducing, inducing)?;
    let root = match inv_sqrt_psd(kjj.as_ref(), 1e-12) {
        Ok(root) => root,
        Err(_) => {
            let nj = kjj.nrows();
            let jitter = 1e-8 * (0..nj).map(|i| kjj[(i, i)]).sum::<f64>() / nj as f64;
            for i in 0..nj {
                kjj[(i, i)] += jitter;
            }
            inv_sqrt_psd(kjj.as_ref(), 1e-12).map_err(|_| Error::numerical("inducing kernel is singular"))?
        }
    };
    let kxj = kernel_matrix(spec, x, inducing)?;
    Ok(NystromFeatures {
        phi: &kxj * &root,
        inducing: inducing.to_owned(),
        centered: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius, frobenius_diff, sym_eigen_desc};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Mat<f64> {
        Mat::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn se_and_polynomial_examples() {
        let x = faer::mat![[0.0, 0.0]];
        let y = faer::mat![[1.0, 1.0]];
        let k = kernel_matrix(&KernelSpec::se(1.0), x.as_ref(), x.as_ref()).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        let k = kernel_matrix(&KernelSpec::se(1.0), x.as_ref(), y.as_ref()).unwrap();
        assert!((k[(0, 0)] - (-1.0f64).exp()).abs() < 1e-15);
        let one = faer::mat![[1.0]];
        let k = kernel_matrix(&KernelSpec::InhomogeneousPolynomial { degree: 2 }, one.as_ref(), one.as_ref())
            .unwrap();
        assert_eq!(k[(0, 0)], 4.0);
        let bad = faer::mat![[1.0]];
        assert!(kernel_matrix(&KernelSpec::se(1.0), x.as_ref(), bad.as_ref()).is_err());
    }

    #[test]
    fn centering_examples() {
        let ones = Mat::<f64>::from_fn(4, 4, |_, _| 1.0);
        assert!(frobenius(center_kernel(ones.as_ref()).unwrap().as_ref()) < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_mat(&mut rng, 5, 5);
        let k = &a * a.transpose();
        let c = center_kernel(k.as_ref()).unwrap();
        for i in 0..5 {
            let rs: f64 = (0..5).map(|j| c[(i, j)]).sum();
            assert!(rs.abs() < 1e-10);
        }
        let cc = center_kernel(c.as_ref()).unwrap();
        assert!(frobenius_diff(c.as_ref(), cc.as_ref()) < 1e-12);
        assert!(center_kernel(Mat::<f64>::zeros(2, 3).as_ref()).is_err());
    }

    #[test]
    fn nystrom_is_exact_on_full_inducing_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_mat(&mut rng, 20, 3);
        let spec = KernelSpec::se(1.3);
        let f = nystrom_features(x.as_ref(), x.as_ref(), &spec).unwrap();
        let k = kernel_matrix(&spec, x.as_ref(), x.as_ref()).unwrap();
        let rel = frobenius_diff(f.gram().as_ref(), k.as_ref()) / frobenius(k.as_ref());
        assert!(rel < 1e-6, "{rel}");
    }

    #[test]
    fn nystrom_small_inducing_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_mat(&mut rng, 20, 3);
        let spec = KernelSpec::se(0.9);
        let one = Mat::from_fn(1, 3, |_, j| x[(4, j)]);
        let f = nystrom_features(x.as_ref(), one.as_ref(), &spec).unwrap();
        assert_eq!(f.phi.ncols(), 1);
        let five = Mat::from_fn(5, 3, |i, j| x[(3 * i, j)]);
        let f = nystrom_features(x.as_ref(), five.as_ref(), &spec).unwrap();
        let g = f.gram();
        let (vals, _) = sym_eigen_desc(g.as_ref()).unwrap();
        assert!(*vals.last().unwrap() > -1e-10);
        // Reference: K(X,X_J) K(X_J,X_J)^{-1} K(X_J,X) computed with a plain inverse.
        let kxj = kernel_matrix(&spec, x.as_ref(), five.as_ref()).unwrap();
        let kjj = kernel_matrix(&spec, five.as_ref(), five.as_ref()).unwrap();
        let inv = crate::linalg::spd_inverse(kjj.as_ref()).unwrap();
        let reference = &(&kxj * &inv) * kxj.transpose();
        assert!(frobenius_diff(g.as_ref(), reference.as_ref()) < 1e-6);
        for i in 0..20 {
            assert!(g[(i, i)] <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn scaled_kernel_single_inducing_row() {
        let x = faer::mat![[0.0], [1.0], [2.5]];
        let j = faer::mat![[0.7]];
        let k = scaled_se_matrix(x.as_ref(), j.as_ref(), 1.1).unwrap();
        for i in 0..3 {
            // bump / (bump · e⁰)
            assert!((k[(i, 0)] - 1.0).abs() < 1e-12);
        }
        let far = faer::mat![[1e6]];
        assert!(scaled_se_matrix(x.as_ref(), far.as_ref(), 1e-3).is_err());
    }

    #[test]
    fn scaled_kernel_wide_limit() {
        let x = faer::mat![[0.0], [1.0], [2.0], [3.0]];
        let j = faer::mat![[0.5], [2.5]];
        let k = scaled_se_matrix(x.as_ref(), j.as_ref(), 1e8).unwrap();
        for i in 0..4 {
            for c in 0..2 {
                assert!((k[(i, c)] - 0.25).abs() < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn kernels_are_symmetric(seed in 0u64..1000, n in 2usize..12, d in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_mat(&mut rng, n, d);
            for spec in [KernelSpec::se(0.7), KernelSpec::InhomogeneousPolynomial { degree: 3 }] {
                let k = kernel_matrix(&spec, x.as_ref(), x.as_ref()).unwrap();
                for i in 0..n {
                    for j in 0..n {
                        prop_assert!((k[(i, j)] - k[(j, i)]).abs() < 1e-12);
                    }
                }
                let c = center_kernel(k.as_ref()).unwrap();
                let cc = center_kernel(c.as_ref()).unwrap();
                prop_assert!(frobenius_diff(c.as_ref(), cc.as_ref()) < 1e-10);
            }
        }

        #[test]
        fn nystrom_error_shrinks_with_more_inducing_rows(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_mat(&mut rng, 15, 2);
            let spec = KernelSpec::se(0.8);
            let k = kernel_matrix(&spec, x.as_ref(), x.as_ref()).unwrap();
            let mut prev = f64::INFINITY;
            for nj in [2usize, 4, 8, 15] {
                let xj = Mat::from_fn(nj, 2, |i, j| x[(i, j)]);
                let f = nystrom_features(x.as_ref(), xj.as_ref(), &spec).unwrap();
                let err = frobenius_diff(k.as_ref(), f.gram().as_ref());
                prop_assert!(err <= prev + 1e-8, "{} > {}", err, prev);
                prev = err;
            }
        }
    }
}
