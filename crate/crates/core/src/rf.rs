//! RF confinement: stability parameter, secular frequency, pseudopotential
//! maps and micromotion observables.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::constants::{angular, ATOMIC_MASS_UNIT, ELEMENTARY_CHARGE, UM};
use crate::error::{invalid, Error, Result};
use crate::field::PotentialField;
use crate::geometry::TrapGeometry;
use crate::numerics::bessel_j;

/// First zero of J₀.
pub const J0_FIRST_ZERO: f64 = 2.404_825_557_695_773;

/// Upper edge of the first Mathieu stability region on the `a = 0` line.
pub const Q_STABILITY_EDGE: f64 = 0.908_046;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IonSpecies {
    /// Mass in atomic mass units.
    pub mass_u: f64,
    /// Charge in elementary charges.
    pub charge: u32,
}

impl Default for IonSpecies {
    fn default() -> Self {
        Self { mass_u: 40.0, charge: 1 }
    }
}

impl IonSpecies {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass_u.is_finite() && self.mass_u > 0.0) || self.charge == 0 {
            return Err(invalid("ion mass must be positive and charge at least 1"));
        }
        Ok(())
    }

    pub fn mass_kg(&self) -> f64 {
        self.mass_u * ATOMIC_MASS_UNIT
    }

    pub fn charge_c(&self) -> f64 {
        f64::from(self.charge) * ELEMENTARY_CHARGE
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfDrive {
    /// Angular drive frequency Ω in rad/s.
    pub omega: f64,
    /// Amplitude U in volts (half the peak-to-peak value).
    pub amplitude_v: f64,
}

impl Default for RfDrive {
    fn default() -> Self {
        Self { omega: angular(24.841e6), amplitude_v: 140.0 }
    }
}

impl RfDrive {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega.is_finite() && self.omega > 0.0) || !(self.amplitude_v >= 0.0) {
            return Err(invalid("RF drive needs Ω > 0 and U ≥ 0"));
        }
        Ok(())
    }
}

/// `q = 2 Z e U c₂ / (m Ω²)`.
pub fn stability_q(c2: f64, drive: &RfDrive, ion: &IonSpecies) -> Result<f64> {
    drive.validate()?;
    ion.validate()?;
    if !(c2 >= 0.0) {
        return Err(invalid(format!("c₂ must be non-negative, got {c2}")));
    }
    Ok(2.0 * ion.charge_c() * drive.amplitude_v * c2 / (ion.mass_kg() * drive.omega * drive.omega))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecularFrequency {
    /// `Ω q / (2√2)` in rad/s.
    pub lowest_order: f64,
    /// Secular frequency from the Mathieu monodromy matrix, rad/s. `None` when
    /// the motion is unstable.
    pub floquet: Option<f64>,
    /// Set when `q ≥ 0.9`.
    pub stability_warning: bool,
}

/// Lowest-order and Floquet secular frequencies for stability parameter `q`.
pub fn secular_frequency(q: f64, drive: &RfDrive) -> Result<SecularFrequency> {
    drive.validate()?;
    if !(q >= 0.0) {
        return Err(invalid(format!("q must be non-negative, got {q}")));
    }
    let warn = q >= 0.9;
    if warn {
        log::warn!("q = {q:.3} is at or beyond the edge of the first stability region");
    }
    let lowest_order = drive.omega * q / (2.0 * 2f64.sqrt());
    let floquet = mathieu_characteristic(0.0, q).map(|mu| mu * drive.omega);
    Ok(SecularFrequency { lowest_order, floquet, stability_warning: warn })
}

/// Characteristic exponent `β/2` of `x'' + (a − 2q cos 2τ) x = 0`, returned as
/// the secular frequency in units of Ω, from the monodromy matrix over one
/// drive period. `None` outside the stability region.
pub fn mathieu_characteristic(a: f64, q: f64) -> Option<f64> {
    // In drive phase s = Ωt: x'' = −(a/4 − (q/2) cos s) x.
    let acc = |s: f64, x: f64| -(0.25 * a - 0.5 * q * s.cos()) * x;
    let steps = 4000;
    let ds = 2.0 * PI / steps as f64;
    let mut trace = 0.0;
    for (x0, v0, pick_x) in [(1.0, 0.0, true), (0.0, 1.0, false)] {
        let (mut x, mut v) = (x0, v0);
        for n in 0..steps {
            let s = n as f64 * ds;
            let k1x = v;
            let k1v = acc(s, x);
            let k2x = v + 0.5 * ds * k1v;
            let k2v = acc(s + 0.5 * ds, x + 0.5 * ds * k1x);
            let k3x = v + 0.5 * ds * k2v;
            let k3v = acc(s + 0.5 * ds, x + 0.5 * ds * k2x);
            let k4x = v + ds * k3v;
            let k4v = acc(s + ds, x + ds * k3x);
            x += ds / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
            v += ds / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        }
        trace += if pick_x { x } else { v };
    }
    let half = 0.5 * trace;
    if half.abs() >= 1.0 {
        None
    } else {
        Some(half.acos() / (2.0 * PI))
    }
}

/// Pseudopotential in one transverse cross-section.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoMap {
    pub x_um: f64,
    pub y_um: Vec<f64>,
    pub z_um: Vec<f64>,
    /// Φ − Φ_min in eV, indexed `j * nz + k`. Electrode nodes and the outer
    /// grid layer are NaN.
    pub values_ev: Vec<f64>,
    /// Φ_min before offset removal, eV.
    pub offset_ev: f64,
    pub minimum_um: [f64; 2],
    pub saddle_um: [f64; 2],
    pub depth_ev: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourSegment {
    pub level_ev: f64,
    pub a: [f64; 2],
    pub b: [f64; 2],
}

#[derive(Clone, Copy, PartialEq)]
struct Flood(f64, usize);

impl Eq for Flood {}

impl Ord for Flood {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Flood {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Pseudopotential `Φ = Z² e U² |∇φ|² / (4 m Ω²)` (eV) of the RF basis field in
/// the plane `x = x_um`. The trap depth is the lowest barrier on any path from
/// the minimum near the axis to the edge of the map.
pub fn pseudopotential(
    rf: &PotentialField,
    geometry: &TrapGeometry,
    drive: &RfDrive,
    ion: &IonSpecies,
    x_um: f64,
) -> Result<PseudoMap> {
    drive.validate()?;
    ion.validate()?;
    let g = &rf.grid;
    let (ny, nz) = (g.dims[1], g.dims[2]);
    if ny < 5 || nz < 5 {
        return Err(invalid("cross-section too small for a pseudopotential map"));
    }
    let ys: Vec<f64> = (0..ny).map(|j| g.coord(1, j)).collect();
    let zs: Vec<f64> = (0..nz).map(|k| g.coord(2, k)).collect();
    let mut phi = vec![0.0; ny * nz];
    for j in 0..ny {
        for k in 0..nz {
            phi[j * nz + k] = rf.value_at([x_um, ys[j], zs[k]])?;
        }
    }
    let prefactor = (f64::from(ion.charge).powi(2) * ELEMENTARY_CHARGE * drive.amplitude_v.powi(2))
        / (4.0 * ion.mass_kg() * drive.omega * drive.omega);
    let (hx, hy, hz) = (g.spacing[0], g.spacing[1], g.spacing[2]);
    let mut values = vec![f64::NAN; ny * nz];
    for j in 1..ny - 1 {
        for k in 1..nz - 1 {
            if geometry.electrode_at([x_um, ys[j], zs[k]]).is_some() {
                continue;
            }
            let ex =
                (rf.value_at([x_um + hx, ys[j], zs[k]])? - rf.value_at([x_um - hx, ys[j], zs[k]])?) / (2.0 * hx * UM);
            let ey = (phi[(j + 1) * nz + k] - phi[(j - 1) * nz + k]) / (2.0 * hy * UM);
            let ez = (phi[j * nz + k + 1] - phi[j * nz + k - 1]) / (2.0 * hz * UM);
            values[j * nz + k] = prefactor * (ex * ex + ey * ey + ez * ez);
        }
    }

    // Descend from the node nearest the axis to a local minimum.
    let mask: Vec<bool> = values.iter().map(|v| v.is_finite()).collect();
    let valid = |p: usize| mask[p];
    let j0 = ys.iter().enumerate().min_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).map(|v| v.0).unwrap_or(0);
    let k0 = zs.iter().enumerate().min_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).map(|v| v.0).unwrap_or(0);
    let mut cur = j0 * nz + k0;
    if !valid(cur) {
        return Err(Error::NoConfinement("axis node lies inside an electrode".into()));
    }
    let neighbours = |p: usize| {
        let (j, k) = ((p / nz) as isize, (p % nz) as isize);
        let mut out = Vec::with_capacity(8);
        for dj in -1..=1 {
            for dk in -1..=1 {
                let (a, b) = (j + dj, k + dk);
                if (dj, dk) != (0, 0) && a >= 0 && b >= 0 && (a as usize) < ny && (b as usize) < nz {
                    out.push(a as usize * nz + b as usize);
                }
            }
        }
        out
    };
    loop {
        let best = neighbours(cur).into_iter().filter(|&p| valid(p)).min_by(|&a, &b| values[a].total_cmp(&values[b]));
        match best {
            Some(b) if values[b] < values[cur] => cur = b,
            _ => break,
        }
    }
    let offset = values[cur];
    for v in values.iter_mut().filter(|v| v.is_finite()) {
        *v -= offset;
    }

    // Minimax flood: the first edge node reached fixes the escape level.
    let on_edge = |p: usize| {
        let (j, k) = (p / nz, p % nz);
        j == 1 || k == 1 || j == ny - 2 || k == nz - 2
    };
    let mut level = vec![f64::INFINITY; ny * nz];
    let mut pass = vec![usize::MAX; ny * nz];
    let mut heap = BinaryHeap::new();
    level[cur] = 0.0;
    pass[cur] = cur;
    heap.push(Flood(0.0, cur));
    let mut escape = None;
    while let Some(Flood(l, p)) = heap.pop() {
        if l > level[p] {
            continue;
        }
        if on_edge(p) {
            escape = Some((l, pass[p]));
            break;
        }
        for n in neighbours(p) {
            if !valid(n) {
                continue;
            }
            let ln = l.max(values[n]);
            if ln < level[n] {
                level[n] = ln;
                pass[n] = if values[n] > l { n } else { pass[p] };
                heap.push(Flood(ln, n));
            }
        }
    }
    let (depth, saddle) = escape.ok_or_else(|| Error::NoConfinement("no escape path found".into()))?;
    Ok(PseudoMap {
        x_um,
        minimum_um: [ys[cur / nz], zs[cur % nz]],
        saddle_um: [ys[saddle / nz], zs[saddle % nz]],
        y_um: ys,
        z_um: zs,
        values_ev: values,
        offset_ev: offset,
        depth_ev: depth,
    })
}

impl PseudoMap {
    pub fn nz(&self) -> usize {
        self.z_um.len()
    }

    pub fn value(&self, j: usize, k: usize) -> f64 {
        self.values_ev[j * self.nz() + k]
    }

    /// Marching-squares iso-lines at each level.
    pub fn contours(&self, levels: &[f64]) -> Vec<ContourSegment> {
        let (ny, nz) = (self.y_um.len(), self.nz());
        let mut out = Vec::new();
        for &lv in levels {
            for j in 0..ny - 1 {
                for k in 0..nz - 1 {
                    let c = [
                        (self.y_um[j], self.z_um[k], self.value(j, k)),
                        (self.y_um[j + 1], self.z_um[k], self.value(j + 1, k)),
                        (self.y_um[j + 1], self.z_um[k + 1], self.value(j + 1, k + 1)),
                        (self.y_um[j], self.z_um[k + 1], self.value(j, k + 1)),
                    ];
                    if c.iter().any(|v| !v.2.is_finite()) {
                        continue;
                    }
                    let cross = |a: usize, b: usize| -> Option<[f64; 2]> {
                        let (pa, pb) = (c[a], c[b]);
                        if (pa.2 < lv) == (pb.2 < lv) {
                            return None;
                        }
                        let t = (lv - pa.2) / (pb.2 - pa.2);
                        Some([pa.0 + t * (pb.0 - pa.0), pa.1 + t * (pb.1 - pa.1)])
                    };
                    let pts: Vec<[f64; 2]> =
                        [(0, 1), (1, 2), (2, 3), (3, 0)].iter().filter_map(|&(a, b)| cross(a, b)).collect();
                    match pts.len() {
                        2 => out.push(ContourSegment { level_ev: lv, a: pts[0], b: pts[1] }),
                        4 => {
                            // Saddle cell: pair edges according to the centre value.
                            let centre = 0.25 * c.iter().map(|v| v.2).sum::<f64>();
                            let first_low = c[0].2 < lv;
                            if (centre < lv) == first_low {
                                out.push(ContourSegment { level_ev: lv, a: pts[0], b: pts[1] });
                                out.push(ContourSegment { level_ev: lv, a: pts[2], b: pts[3] });
                            } else {
                                out.push(ContourSegment { level_ev: lv, a: pts[0], b: pts[3] });
                                out.push(ContourSegment { level_ev: lv, a: pts[1], b: pts[2] });
                            }
                        }
                        _ => {}
                    }
                }
            }
        }
        out
    }

    /// Contour segments as CSV, one segment per row.
    pub fn contour_csv(&self, levels: &[f64]) -> String {
        let mut s = String::from("level_eV,y0_um,z0_um,y1_um,z1_um\n");
        for c in self.contours(levels) {
            let _ = writeln!(s, "{},{},{},{},{}", c.level_ev, c.a[0], c.a[1], c.b[0], c.b[1]);
        }
        s
    }

    /// Secular frequencies (rad/s) from the Hessian of Φ at the minimum, fitted
    /// with a quartic over a radius of four cells. Returned in ascending order.
    pub fn harmonic_frequencies(&self, ion: &IonSpecies) -> Result<[f64; 2]> {
        let nz = self.nz();
        let h = (self.y_um[1] - self.y_um[0]).max(self.z_um[1] - self.z_um[0]);
        let r = 4.0 * h;
        let [y0, z0] = self.minimum_um;
        let mut rows = Vec::new();
        for (j, &y) in self.y_um.iter().enumerate() {
            for (k, &z) in self.z_um.iter().enumerate() {
                let (u, v) = ((y - y0) / r, (z - z0) / r);
                let val = self.values_ev[j * nz + k];
                if u * u + v * v <= 1.0 + 1e-9 && val.is_finite() {
                    rows.push((u, v, val));
                }
            }
        }
        if rows.len() < 21 {
            return Err(Error::Fit("too few pseudopotential samples near the minimum".into()));
        }
        let (c, _) = crate::field::quartic_fit_rows(&rows)?;
        let s = ELEMENTARY_CHARGE / (r * r * UM * UM);
        let (hyy, hyz, hzz) = (2.0 * c[3] * s, c[4] * s, 2.0 * c[5] * s);
        let mean = 0.5 * (hyy + hzz);
        let dev = (0.25 * (hyy - hzz).powi(2) + hyz * hyz).sqrt();
        let (l1, l2) = (mean - dev, mean + dev);
        if l1 <= 0.0 {
            return Err(Error::NoConfinement("pseudopotential is not confining at its minimum".into()));
        }
        let m = ion.mass_kg();
        Ok([(l1 / m).sqrt(), (l2 / m).sqrt()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicromotionRatio {
    /// `J₁(β) / J₀(β)`, the sideband to carrier Rabi frequency ratio.
    pub rabi_ratio: f64,
    /// Its square, the low-saturation excitation ratio.
    pub excitation_ratio: f64,
}

pub fn micromotion_ratio(beta: f64) -> Result<MicromotionRatio> {
    if !(0.0..J0_FIRST_ZERO).contains(&beta) {
        return Err(invalid(format!("modulation index {beta} outside [0, {J0_FIRST_ZERO})")));
    }
    let r = bessel_j(1, beta) / bessel_j(0, beta);
    Ok(MicromotionRatio { rabi_ratio: r, excitation_ratio: r * r })
}

/// `x = β λ / 2`, in the units of `wavelength`.
pub fn micromotion_amplitude(beta: f64, wavelength: f64) -> Result<f64> {
    if !(beta >= 0.0) {
        return Err(invalid("modulation index must be non-negative"));
    }
    Ok(0.5 * beta * wavelength)
}

/// Amplitude vector (m) of the driven motion for an RF potential gradient
/// `grad_phi` (per volt, 1/m): `x = Z e U ∇φ / (m Ω²)`.
pub fn micromotion_vector(grad_phi: [f64; 3], drive: &RfDrive, ion: &IonSpecies) -> [f64; 3] {
    let s = ion.charge_c() * drive.amplitude_v / (ion.mass_kg() * drive.omega * drive.omega);
    [s * grad_phi[0], s * grad_phi[1], s * grad_phi[2]]
}

/// Modulation index `β = |k · x|` seen by a beam with wave vector `k` (1/m).
pub fn modulation_index(grad_phi: [f64; 3], k: [f64; 3], drive: &RfDrive, ion: &IonSpecies) -> f64 {
    let x = micromotion_vector(grad_phi, drive, ion);
    (k[0] * x[0] + k[1] * x[1] + k[2] * x[2]).abs()
}
