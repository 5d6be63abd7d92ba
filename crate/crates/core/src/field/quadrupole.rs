use nalgebra::{DMatrix, DVector};

use super::PotentialField;
use crate::constants::UM;
use crate::error::{Error, Result};
use crate::numerics::lstsq;

/// Lowest-order quadrupole content of a field in the yz plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrupoleFit {
    /// Eigenvalue of the traceless transverse Hessian in m⁻² (per volt), so
    /// that `φ ≈ c₂/2 (u² − v²)` in the principal axes.
    pub c2: f64,
    /// Angle of the principal axis with the largest curvature against `y`, rad.
    pub angle: f64,
    /// Transverse gradient at the fit centre, V/m per volt.
    pub gradient: [f64; 2],
    /// Transverse Hessian `[[φyy, φyz], [φyz, φzz]]` in V/m² per volt.
    pub hessian: [[f64; 2]; 2],
    /// RMS fit residual divided by the quadrupole amplitude at the window edge.
    pub relative_residual: f64,
    pub window_um: f64,
    pub points: usize,
}

const QUARTIC_TERMS: [(i32, i32); 15] = [
    (0, 0),
    (1, 0),
    (0, 1),
    (2, 0),
    (1, 1),
    (0, 2),
    (3, 0),
    (2, 1),
    (1, 2),
    (0, 3),
    (4, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 4),
];

/// Least-squares quartic in `(u, v)`. Coefficients follow the order
/// `1, u, v, u², uv, v², ...`; also returns the RMS residual.
pub(crate) fn quartic_fit(rows: &[(f64, f64, f64)]) -> Result<(DVector<f64>, f64)> {
    let a = DMatrix::from_fn(rows.len(), QUARTIC_TERMS.len(), |r, c| {
        rows[r].0.powi(QUARTIC_TERMS[c].0) * rows[r].1.powi(QUARTIC_TERMS[c].1)
    });
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.2));
    let coef = lstsq(&a, &b)?;
    let rms = ((&a * &coef - &b).norm_squared() / rows.len() as f64).sqrt();
    Ok((coef, rms))
}

/// Residual above which the potential is not treated as quadrupolar.
pub const QUADRUPOLE_RESIDUAL_LIMIT: f64 = 0.05;

/// Fit radius: 10% of the slit half-width, but never below three cells.
pub fn quadrupole_window_um(slit_um: f64, field: &PotentialField) -> f64 {
    let h = field.grid.spacing[1].max(field.grid.spacing[2]);
    (0.05 * slit_um).max(3.0 * h)
}

/// Fits a full quartic in `(y - y0, z - z0)` to the field samples at grid
/// nodes within `window_um` of `point` in the plane `x = point.x` and
/// extracts `c₂` from the quadratic terms.
pub fn quadrupole_c2(field: &PotentialField, point: [f64; 3], window_um: f64) -> Result<QuadrupoleFit> {
    let g = &field.grid;
    let (y0, z0) = (point[1], point[2]);
    let ry = g.node_range(1, y0 - window_um, y0 + window_um);
    let rz = g.node_range(2, z0 - window_um, z0 + window_um);
    let (Some(ry), Some(rz)) = (ry, rz) else {
        return Err(Error::OutOfGrid { x: point[0], y: point[1], z: point[2] });
    };
    let mut rows = Vec::new();
    for j in ry.0..=ry.1 {
        for k in rz.0..=rz.1 {
            let (y, z) = (g.coord(1, j), g.coord(2, k));
            let (u, v) = ((y - y0) / window_um, (z - z0) / window_um);
            if u * u + v * v <= 1.0 + 1e-9 {
                rows.push((u, v, field.value_at([point[0], y, z])?));
            }
        }
    }
    if rows.len() < QUARTIC_TERMS.len() + 6 {
        return Err(Error::Fit(format!("quadrupole window of {window_um} µm holds only {} nodes", rows.len())));
    }
    let (coef, rms) = quartic_fit(&rows)?;
    let scale = 1.0 / (window_um * window_um * UM * UM);
    let (pyy, pyz, pzz) = (2.0 * coef[3] * scale, coef[4] * scale, 2.0 * coef[5] * scale);
    let half_diff = 0.5 * (pyy - pzz);
    let c2 = (half_diff * half_diff + pyz * pyz).sqrt();
    let angle = 0.5 * pyz.atan2(half_diff);
    let amplitude = 0.5 * c2 * (window_um * UM).powi(2);
    let relative_residual = if amplitude > 0.0 { rms / amplitude } else { f64::INFINITY };
    if relative_residual > QUADRUPOLE_RESIDUAL_LIMIT {
        log::warn!(
            "{}: potential is not quadrupolar at ({:.1}, {:.1}, {:.1}) µm (relative residual {relative_residual:.3})",
            field.label,
            point[0],
            point[1],
            point[2]
        );
    }
    let grad = [coef[1] / (window_um * UM), coef[2] / (window_um * UM)];
    Ok(QuadrupoleFit {
        c2,
        angle,
        gradient: grad,
        hessian: [[pyy, pyz], [pyz, pzz]],
        relative_residual,
        window_um,
        points: rows.len(),
    })
}
