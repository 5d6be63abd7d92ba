//! Small numerical helpers: least squares, polynomials, Bessel functions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Least-squares solution of `a x ≈ b` via SVD.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    svd.solve(b, smax * 1e-13).map_err(|e| Error::Fit(e.to_string()))
}

/// Coefficients `c[0] + c[1] x + ... + c[deg] x^deg` fitted by least squares.
pub fn polyfit(x: &[f64], y: &[f64], deg: usize) -> Result<Vec<f64>> {
    if x.len() != y.len() || x.len() <= deg {
        return Err(Error::Fit(format!("need more than {deg} points for a degree-{deg} fit")));
    }
    let a = DMatrix::from_fn(x.len(), deg + 1, |r, c| x[r].powi(c as i32));
    let b = DVector::from_column_slice(y);
    Ok(lstsq(&a, &b)?.iter().copied().collect())
}

pub fn polyval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

pub fn polyder(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(i, &ci)| i as f64 * ci).collect()
}

/// Bessel function of the first kind of integer order `n`, by its power
/// series. Accurate to double precision for `|x| <= 10`.
pub fn bessel_j(n: u32, x: f64) -> f64 {
    let half = 0.5 * x;
    let mut term = half.powi(n as i32) / (1..=n).map(f64::from).product::<f64>();
    let mut sum = term;
    let q = -half * half;
    for m in 1..200u32 {
        term *= q / (f64::from(m) * f64::from(m + n));
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

/// `P(N <= k)` for a Poisson variable with mean `mu`.
pub fn poisson_cdf(k: u64, mu: f64) -> f64 {
    if mu <= 0.0 {
        return 1.0;
    }
    let mut term = (-mu).exp();
    let mut sum = term;
    for i in 1..=k {
        term *= mu / i as f64;
        sum += term;
    }
    sum.min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polyfit_recovers_cubic() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.3 - 1.0).collect();
        let y: Vec<f64> = x.iter().map(|&t| 2.0 - t + 0.5 * t * t * t).collect();
        let c = polyfit(&x, &y, 3).unwrap();
        for (a, b) in c.iter().zip([2.0, -1.0, 0.0, 0.5]) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((polyval(&c, 2.0) - 4.0).abs() < 1e-9);
        assert_eq!(polyder(&[1.0, 2.0, 3.0]), vec![2.0, 6.0]);
    }

    #[test]
    fn bessel_reference_values() {
        // Tabulated values.
        assert!((bessel_j(0, 1.0) - 0.765_197_686_557_966_6).abs() < 1e-15);
        assert!((bessel_j(1, 1.0) - 0.440_050_585_744_933_5).abs() < 1e-15);
        assert!((bessel_j(0, 2.404_825_557_695_773).abs()) < 1e-14);
        assert_eq!(bessel_j(1, 0.0), 0.0);
        assert_eq!(bessel_j(0, 0.0), 1.0);
    }

    #[test]
    fn poisson_cdf_limits() {
        assert!((poisson_cdf(0, 2.0) - (-2.0f64).exp()).abs() < 1e-15);
        assert!((poisson_cdf(200, 20.0) - 1.0).abs() < 1e-12);
    }
}
