//! Smooth surrogate for the count of active inputs.

/// `Σ φ_ω(1/l)` with `φ_ω(x) = x² / (x² + ω²)`, and its gradient with
/// respect to `log l`.
pub fn sic_penalty(lengthscales: &[f64], omega: f64) -> (f64, Vec<f64>) {
    let w2 = omega * omega;
    let mut value = 0.0;
    let grad = lengthscales
        .iter()
        .map(|&l| {
            let x2 = 1.0 / (l * l);
            let denom = x2 + w2;
            value += x2 / denom;
            -2.0 * x2 * w2 / (denom * denom)
        })
        .collect();
    (value, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limits_and_half_point() {
        assert!(sic_penalty(&[1e12], 1.0).0 < 1e-20);
        assert!((sic_penalty(&[2.0], 0.5).0 - 0.5).abs() < 1e-15);
        assert!((sic_penalty(&[1.0], 1e-8).0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_differences() {
        let ls = [0.3, 2.0, 40.0];
        for omega in [0.01, 0.5, 3.0] {
            let (_, g) = sic_penalty(&ls, omega);
            for k in 0..3 {
                let h: f64 = 1e-6;
                let mut up = ls;
                let mut dn = ls;
                up[k] *= h.exp();
                dn[k] *= (-h).exp();
                let fd = (sic_penalty(&up, omega).0 - sic_penalty(&dn, omega).0) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-5 * g[k].abs().max(1e-6), "{fd} {}", g[k]);
            }
        }
    }

    #[test]
    fn decreasing_in_omega() {
        let mut prev = f64::INFINITY;
        for omega in [1e-3, 1e-2, 0.1, 1.0, 10.0] {
            let v = sic_penalty(&[0.7], omega).0;
            assert!(v < prev);
            prev = v;
        }
    }
}
