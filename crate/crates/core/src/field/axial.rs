use std::fmt::Write as _;

use super::{potential_at, PotentialField};
use crate::constants::{ATOMIC_MASS_UNIT, ELEMENTARY_CHARGE, UM};
use crate::error::{invalid, Error, Result};
use crate::numerics::{polyder, polyfit, polyval};
use crate::rf::IonSpecies;

/// Potential sampled along the trap axis (`y = z = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct AxialCurve {
    pub x_um: Vec<f64>,
    pub phi_v: Vec<f64>,
    /// Which voltages produced the curve.
    pub provenance: String,
}

/// Harmonic fit around the axial minimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxialFit {
    /// Angular frequency in rad/s.
    pub omega: f64,
    pub center_um: f64,
    /// `d²φ/dx²` at the minimum in V/m².
    pub curvature: f64,
    /// RMS residual of the polynomial fit in V.
    pub residual_v: f64,
}

/// Half-width of the fit window around the minimum.
const FIT_HALF_WINDOW_UM: f64 = 50.0;

impl AxialCurve {
    pub fn new(x_um: Vec<f64>, phi_v: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        if x_um.len() != phi_v.len() {
            return Err(invalid("axial curve needs equal x and potential sample counts"));
        }
        if x_um.len() < 3 {
            return Err(invalid("axial curve needs at least 3 samples"));
        }
        if x_um.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("axial curve x samples must be strictly increasing"));
        }
        Ok(Self { x_um, phi_v, provenance: provenance.into() })
    }

    /// Linear interpolation; `None` outside the sampled range.
    pub fn interpolate(&self, x: f64) -> Option<f64> {
        let n = self.x_um.len();
        if x < self.x_um[0] || x > self.x_um[n - 1] {
            return None;
        }
        let i = self.x_um.partition_point(|&v| v <= x).clamp(1, n - 1);
        let (x0, x1) = (self.x_um[i - 1], self.x_um[i]);
        let t = (x - x0) / (x1 - x0);
        Some(self.phi_v[i - 1] * (1.0 - t) + self.phi_v[i] * t)
    }

    /// Full width of the well at half its depth below the mean end value.
    pub fn fwhm_um(&self) -> Result<f64> {
        let n = self.phi_v.len();
        let (imin, vmin) = argmin(&self.phi_v);
        let base = 0.5 * (self.phi_v[0] + self.phi_v[n - 1]);
        if imin == 0 || imin == n - 1 || vmin >= base {
            return Err(Error::NoConfinement("curve has no well below its ends".into()));
        }
        let level = 0.5 * (vmin + base);
        let cross = |range: &mut dyn Iterator<Item = usize>, step: isize| -> Option<f64> {
            for i in range {
                let j = (i as isize - step) as usize;
                if self.phi_v[i] >= level {
                    let t = (level - self.phi_v[j]) / (self.phi_v[i] - self.phi_v[j]);
                    return Some(self.x_um[j] + t * (self.x_um[i] - self.x_um[j]));
                }
            }
            None
        };
        let left = cross(&mut (0..imin).rev(), -1);
        let right = cross(&mut (imin + 1..n), 1);
        match (left, right) {
            (Some(l), Some(r)) => Ok(r - l),
            _ => Err(Error::NoConfinement("well does not rise to half depth on both sides".into())),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# {}\nx_um,phi_V\n", self.provenance.replace('\n', " "));
        for (x, p) in self.x_um.iter().zip(&self.phi_v) {
            let _ = writeln!(s, "{x},{p}");
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut provenance = String::new();
        let mut header = false;
        let (mut xs, mut ps) = (Vec::new(), Vec::new());
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(c) = line.strip_prefix('#') {
                if provenance.is_empty() {
                    provenance = c.trim().to_string();
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            if !header {
                if line.replace(' ', "") != "x_um,phi_V" {
                    return Err(invalid(format!("line {}: expected header x_um,phi_V", n + 1)));
                }
                header = true;
                continue;
            }
            let mut it = line.split(',');
            let mut next = || -> Result<f64> {
                it.next()
                    .and_then(|v| v.trim().parse().ok())
                    .ok_or_else(|| invalid(format!("line {}: expected two numbers", n + 1)))
            };
            xs.push(next()?);
            ps.push(next()?);
        }
        Self::new(xs, ps, provenance)
    }
}

fn argmin(v: &[f64]) -> (usize, f64) {
    v.iter().copied().enumerate().fold((0, f64::INFINITY), |b, (i, x)| if x < b.1 { (i, x) } else { b })
}

/// Samples `Σ vᵢ φᵢ` at `(x, 0, 0)` for every `x` in `xs`.
pub fn axial_curve(fields: &[(&PotentialField, f64)], xs: &[f64], provenance: impl Into<String>) -> Result<AxialCurve> {
    let phi = xs.iter().map(|&x| potential_at(fields, [x, 0.0, 0.0])).collect::<Result<Vec<_>>>()?;
    AxialCurve::new(xs.to_vec(), phi, provenance)
}

/// Fits a quartic in `x - x_min` over ±50 µm around the sampled minimum and
/// returns the harmonic frequency at the stationary point,
/// `ω = sqrt(Z e φ'' / m)`.
pub fn axial_frequency(curve: &AxialCurve, ion: &IonSpecies) -> Result<AxialFit> {
    let n = curve.x_um.len();
    let (imin, _) = argmin(&curve.phi_v);
    if imin == 0 || imin == n - 1 {
        return Err(Error::NoConfinement("potential minimum lies at the end of the sampled range".into()));
    }
    let x0 = curve.x_um[imin];
    let mut idx: Vec<usize> = (0..n).filter(|&i| (curve.x_um[i] - x0).abs() <= FIT_HALF_WINDOW_UM + 1e-9).collect();
    if idx.len() < 5 {
        idx = (0..n).collect();
        idx.sort_by(|&a, &b| (curve.x_um[a] - x0).abs().total_cmp(&(curve.x_um[b] - x0).abs()));
        idx.truncate(5.min(n));
    }
    let d: Vec<f64> = idx.iter().map(|&i| curve.x_um[i] - x0).collect();
    let y: Vec<f64> = idx.iter().map(|&i| curve.phi_v[i]).collect();
    let deg = 4.min(d.len() - 1);
    let c = polyfit(&d, &y, deg)?;
    let c1 = polyder(&c);
    let c2 = polyder(&c1);
    let span = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut t = 0.0;
    for _ in 0..50 {
        let k = polyval(&c2, t);
        if k <= 0.0 {
            break;
        }
        let step = polyval(&c1, t) / k;
        t = (t - step).clamp(-span, span);
        if step.abs() < 1e-12 * span.max(1.0) {
            break;
        }
    }
    let curvature = polyval(&c2, t) / (UM * UM);
    if !(curvature > 0.0) {
        return Err(Error::NoConfinement(format!("non-positive curvature {curvature:.3e} V/m² at the minimum")));
    }
    let residual =
        (d.iter().zip(&y).map(|(&di, &yi)| (polyval(&c, di) - yi).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
    let omega = (ion.charge as f64 * ELEMENTARY_CHARGE * curvature / (ion.mass_u * ATOMIC_MASS_UNIT)).sqrt();
    Ok(AxialFit { omega, center_um: x0 + t, curvature, residual_v: residual })
}
