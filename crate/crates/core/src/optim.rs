//! Box-constrained limited-memory quasi-Newton minimization.
//!
//! Search directions come from the usual two-loop recursion restricted to
//! the variables not pinned at a bound; steps are projected back into the
//! box and accepted by a backtracking Armijo rule along the projected path.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BoxLbfgs {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when the projected gradient's largest entry falls below this.
    pub gradient_tolerance: f64,
    /// Stop when an accepted step lowers `f` by less than this times `max(1, |f|)`.
    pub relative_tolerance: f64,
}

impl Default for BoxLbfgs {
    fn default() -> Self {
        BoxLbfgs {
            memory: 10,
            max_iterations: 200,
            gradient_tolerance: 1e-5,
            relative_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Largest entry of the projected gradient at `x`.
    pub projected_gradient_norm: f64,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

fn projected_gradient(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((&xi, &gi), (&lo, &hi))| {
            if (xi <= lo && gi > 0.0) || (xi >= hi && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl BoxLbfgs {
    /// Minimizes `f` over `lower ≤ x ≤ upper`. `f` returns the value and the
    /// gradient; an `Err` or a non-finite value at a trial point is treated
    /// as an infinitely bad point, while failure at the start is reported.
    pub fn minimize<F>(&self, mut f: F, x0: &[f64], lower: &[f64], upper: &[f64]) -> Result<Minimum>
    where
        F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    {
        let dim = x0.len();
        if lower.len() != dim || upper.len() != dim || lower.iter().zip(upper).any(|(l, u)| l > u) {
            return Err(Error::invalid("inconsistent bounds"));
        }
        let mut x = x0.to_vec();
        project(&mut x, lower, upper);
        let (mut fx, mut g) = f(&x)?;
        let mut evaluations = 1;
        if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("objective is not finite at the starting point"));
        }
        let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
        let mut converged = false;
        let mut iterations = 0;

        while iterations < self.max_iterations {
            let pg = projected_gradient(&x, &g, lower, upper);
            if pg.iter().all(|v| v.abs() < self.gradient_tolerance) {
                converged = true;
                break;
            }
            iterations += 1;
            let free: Vec<bool> = pg.iter().map(|v| *v != 0.0).collect();
            let mut direction = self.two_loop(&g, &free, &history);
            if dot(&direction, &g) >= 0.0 {
                history.clear();
                direction = pg.iter().map(|v| -v).collect();
            }
            let mut step = if history.is_empty() {
                (1.0 / direction.iter().map(|v| v.abs()).fold(0.0, f64::max)).min(1.0)
            } else {
                1.0
            };

            let mut accepted = None;
            for _ in 0..40 {
                let mut trial: Vec<f64> = x.iter().zip(&direction).map(|(a, d)| a + step * d).collect();
                project(&mut trial, lower, upper);
                let moved: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
                if moved.iter().all(|v| *v == 0.0) {
                    break;
                }
                evaluations += 1;
                if let Ok((ft, gt)) = f(&trial) {
                    let decrease = dot(&g, &moved);
                    if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && ft <= fx + 1e-4 * decrease {
                        accepted = Some((trial, ft, gt, moved));
                        break;
                    }
                }
                step *= 0.5;
            }
            let Some((trial, ft, gt, s)) = accepted else {
                if history.is_empty() {
                    // No descent along the projected gradient: stationary up to precision.
                    converged = true;
                    break;
                }
                history.clear();
                continue;
            };
            let yv: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &yv);
            if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() {
                if history.len() == self.memory {
                    history.pop_front();
                }
                history.push_back((s, yv, 1.0 / sy));
            }
            let reduction = fx - ft;
            x = trial;
            fx = ft;
            g = gt;
            if reduction <= self.relative_tolerance * fx.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        let pg = projected_gradient(&x, &g, lower, upper);
        Ok(Minimum {
            projected_gradient_norm: pg.iter().map(|v| v.abs()).fold(0.0, f64::max),
            x,
            value: fx,
            gradient: g,
            iterations,
            evaluations,
            converged,
        })
    }

    fn two_loop(&self, g: &[f64], free: &[bool], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
        let mask = |v: &[f64]| -> Vec<f64> { v.iter().zip(free).map(|(x, &f)| if f { *x } else { 0.0 }).collect() };
        let mut q = mask(g);
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let (s, y) = (mask(s), mask(y));
            let a = rho * dot(&s, &q);
            for (qi, yi) in q.iter_mut().zip(&y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let (s, y) = (mask(s), mask(y));
            let yy = dot(&y, &y);
            let sy = dot(&s, &y);
            if yy > 0.0 && sy > 0.0 {
                let gamma = sy / yy;
                q.iter_mut().for_each(|v| *v *= gamma);
            }
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let (s, y) = (mask(s), mask(y));
            let b = rho * dot(&y, &q);
            for (qi, si) in q.iter_mut().zip(&s) {
                *qi += (a - b) * si;
            }
        }
        q.iter().map(|v| -v).collect()
    }
}
