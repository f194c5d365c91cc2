//! ARD squared-exponential GP marginal likelihood with analytic gradients.

use faer::{Mat, MatRef, Side};
use faer::linalg::solvers::DenseSolveCore;

use crate::error::{Error, Result};
use crate::gpsic::ArdHyperparameters;

const JITTER_LADDER: [f64; 3] = [1e-10, 1e-6, 1e-4];

/// Pairwise per-dimension squared differences of the design rows, stored
/// pair-major so one pass over pairs builds the whole kernel.
#[derive(Debug, Clone)]
pub struct GpProblem {
    n: usize,
    d: usize,
    sq_diffs: Vec<f64>,
    y: Vec<f64>,
}

impl GpProblem {
    pub fn new(z: MatRef<'_, f64>, y: &[f64]) -> Result<Self> {
        let (n, d) = (z.nrows(), z.ncols());
        if n != y.len() {
            return Err(Error::invalid("design rows do not match response length"));
        }
        if n == 0 || d == 0 {
            return Err(Error::invalid("GP design needs at least one row and one column"));
        }
        let mut sq_diffs = Vec::with_capacity(n * (n - 1) / 2 * d);
        for i in 0..n {
            for j in i + 1..n {
                for k in 0..d {
                    let t = z[(i, k)] - z[(j, k)];
                    sq_diffs.push(t * t);
                }
            }
        }
        Ok(GpProblem {
            n,
            d,
            sq_diffs,
            y: y.to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Noise-free kernel matrix.
    pub fn kernel(&self, theta: &ArdHyperparameters) -> Mat<f64> {
        let w: Vec<f64> = theta.lengthscales.iter().map(|l| 0.5 / (l * l)).collect();
        let mut k = Mat::<f64>::zeros(self.n, self.n);
        let mut p = 0;
        for i in 0..self.n {
            k[(i, i)] = theta.kernel_variance;
            for j in i + 1..self.n {
                let row = &self.sq_diffs[p * self.d..(p + 1) * self.d];
                let s: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
                let v = theta.kernel_variance * (-s).exp();
                k[(i, j)] = v;
                k[(j, i)] = v;
                p += 1;
            }
        }
        k
    }

    /// Factorizes `K + σ²I`, escalating a diagonal jitter on failure, and
    /// returns its inverse and log-determinant.
    pub fn inverse_and_logdet(&self, theta: &ArdHyperparameters) -> Result<(Mat<f64>, Mat<f64>, f64)> {
        let mut ky = self.kernel(theta);
        for i in 0..self.n {
            ky[(i, i)] += theta.noise_variance;
        }
        let mean_diag = theta.kernel_variance + theta.noise_variance;
        let mut extra = 0.0;
        for attempt in 0..=JITTER_LADDER.len() {
            if attempt > 0 {
                let next = JITTER_LADDER[attempt - 1] * mean_diag;
                for i in 0..self.n {
                    ky[(i, i)] += next - extra;
                }
                extra = next;
            }
            if let Ok(llt) = ky.llt(Side::Lower) {
                let l = llt.L();
                let logdet = 2.0 * (0..self.n).map(|i| l[(i, i)].ln()).sum::<f64>();
                if !logdet.is_finite() {
                    continue;
                }
                return Ok((llt.inverse(), ky, logdet));
            }
        }
        Err(Error::numerical("ill-conditioned kernel"))
    }
}

/// Log marginal likelihood and its gradient with respect to
/// `[log l_1, …, log l_d, log σ²]`.
pub fn log_marginal_likelihood(problem: &GpProblem, theta: &ArdHyperparameters) -> Result<(f64, Vec<f64>)> {
    theta.check_dim(problem.dim())?;
    let n = problem.n;
    let (inv, ky, logdet) = problem.inverse_and_logdet(theta)?;
    let y = &problem.y;
    let alpha: Vec<f64> = (0..n).map(|i| (0..n).map(|j| inv[(i, j)] * y[j]).sum()).collect();
    let fit: f64 = alpha.iter().zip(y).map(|(a, b)| a * b).sum();
    let value = -0.5 * (fit + logdet + n as f64 * (2.0 * std::f64::consts::PI).ln());
    if !value.is_finite() {
        return Err(Error::numerical("non-finite marginal likelihood"));
    }

    let d = problem.d;
    let mut grad = vec![0.0; d + 1];
    let mut p = 0;
    for i in 0..n {
        for j in i + 1..n {
            // W = ααᵀ − K_y⁻¹, times the off-diagonal kernel entry.
            let wk = (alpha[i] * alpha[j] - inv[(i, j)]) * ky[(i, j)];
            let row = &problem.sq_diffs[p * d..(p + 1) * d];
            for (g, r) in grad[..d].iter_mut().zip(row) {
                *g += wk * r;
            }
            p += 1;
        }
    }
    for (g, l) in grad[..d].iter_mut().zip(&theta.lengthscales) {
        *g /= l * l;
    }
    let trace: f64 = (0..n).map(|i| inv[(i, i)]).sum();
    let aa: f64 = alpha.iter().map(|a| a * a).sum();
    grad[d] = 0.5 * theta.noise_variance * (aa - trace);
    Ok((value, grad))
}

/// Sum of leave-one-out log predictive densities, from the closed-form
/// identities on `(K + σ²I)⁻¹`.
pub fn loo_log_pseudo_likelihood(problem: &GpProblem, theta: &ArdHyperparameters) -> Result<f64> {
    theta.check_dim(problem.dim())?;
    let (inv, _, _) = problem.inverse_and_logdet(theta)?;
    let n = problem.n;
    let y = &problem.y;
    let mut total = 0.0;
    for i in 0..n {
        let kinv_y: f64 = (0..n).map(|j| inv[(i, j)] * y[j]).sum();
        let c = inv[(i, i)];
        if !(c > 0.0) {
            return Err(Error::numerical("non-positive diagonal in inverse kernel"));
        }
        let var = 1.0 / c;
        let resid = kinv_y / c;
        total += -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * resid * resid / var;
    }
    Ok(total)
}
