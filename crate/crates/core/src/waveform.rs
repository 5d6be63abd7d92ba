//! DC voltage synthesis: harmonic axial wells, micromotion compensation and
//! shuttling waveforms.
//!
//! Voltages are solved against axial basis curves, the on-axis potential of
//! each segment pair with both of its electrodes at 1 V.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atomic::BeamGeometry;
use crate::constants::{hertz, UM};
use crate::error::{invalid, Error, Result};
use crate::field::{axial_frequency, quadrupole_c2, AxialCurve, PotentialField};
use crate::geometry::{Segment, TrapGeometry};
use crate::io::write_atomic;
use crate::numerics::{lstsq, polyfit};
use crate::rf::{micromotion_ratio, modulation_index, IonSpecies, RfDrive};
use crate::sequence::{meta_path, MicromotionModel};

/// Relative weight of the ridge term against the mean diagonal of `AᵀA`.
pub const RIDGE: f64 = 1e-6;

/// Tolerated mismatch between the achieved and the requested axial frequency.
pub const OMEGA_TOLERANCE: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min_v: f64,
    pub max_v: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Self { min_v: -10.0, max_v: 10.0 }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_v.is_finite() && self.max_v.is_finite() && self.min_v < self.max_v) {
            return Err(invalid(format!("voltage bounds [{}, {}] are empty", self.min_v, self.max_v)));
        }
        if !(self.min_v <= 0.0 && self.max_v >= 0.0) {
            return Err(invalid("voltage bounds must contain 0 V"));
        }
        Ok(())
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min_v && v <= self.max_v
    }
}

/// Voltages of the segment pairs. With a differential `d`, the top electrode
/// of pair `i` sits at `v[i] + d[i]/2` and the bottom one at `v[i] − d[i]/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageSet {
    pub pairs: Vec<f64>,
    pub differential: Option<Vec<f64>>,
}

impl VoltageSet {
    pub fn new(pairs: Vec<f64>) -> Self {
        Self { pairs, differential: None }
    }

    /// `(top, bottom)` voltage of every pair.
    pub fn electrodes(&self) -> Vec<(f64, f64)> {
        self.pairs
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let d = self.differential.as_ref().map_or(0.0, |d| d[i]);
                (v + 0.5 * d, v - 0.5 * d)
            })
            .collect()
    }

    pub fn check(&self, bounds: &Bounds) -> Result<()> {
        if let Some(d) = &self.differential {
            if d.len() != self.pairs.len() {
                return Err(invalid("differential voltages must cover every pair"));
            }
        }
        for (i, (t, b)) in self.electrodes().into_iter().enumerate() {
            if !(bounds.contains(t) && bounds.contains(b)) {
                return Err(Error::Infeasible(format!(
                    "pair {i} electrodes at {t:.4} V / {b:.4} V leave [{}, {}] V",
                    bounds.min_v, bounds.max_v
                )));
            }
        }
        Ok(())
    }
}

/// On-axis potential of every segment pair at 1 V, sampled on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AxialBasis {
    pub x_um: Vec<f64>,
    /// `curves[pair][i]` in volts per volt.
    pub curves: Vec<Vec<f64>>,
    pub segments: Vec<Segment>,
}

impl AxialBasis {
    pub fn new(x_um: Vec<f64>, curves: Vec<Vec<f64>>, segments: Vec<Segment>) -> Result<Self> {
        if x_um.len() < 5 || x_um.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("axial basis needs at least 5 increasing x samples"));
        }
        if curves.is_empty() || curves.len() != segments.len() {
            return Err(invalid("axial basis needs one curve per segment pair"));
        }
        if curves.iter().any(|c| c.len() != x_um.len()) {
            return Err(invalid("every basis curve must match the x samples"));
        }
        Ok(Self { x_um, curves, segments })
    }

    /// Samples `2 φ_top(x, 0, 0)` for every pair; on the axis the bottom
    /// electrode contributes the same as its rotated top partner.
    pub fn from_fields(geometry: &TrapGeometry, tops: &[PotentialField], step_um: f64) -> Result<Self> {
        if !(step_um > 0.0) {
            return Err(invalid("basis step must be positive"));
        }
        let (x0, x1) = geometry.axial_extent();
        let n = ((x1 - x0) / step_um).floor() as usize + 1;
        let x_um: Vec<f64> = (0..n).map(|i| x0 + i as f64 * step_um).collect();
        let curves = tops
            .iter()
            .map(|f| x_um.iter().map(|&x| f.value_at([x, 0.0, 0.0]).map(|v| 2.0 * v)).collect())
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Self::new(x_um, curves, geometry.segments.clone())
    }

    pub fn pairs(&self) -> usize {
        self.curves.len()
    }

    /// `Σ vᵢ curveᵢ` on the basis grid.
    pub fn potential(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.x_um.len()];
        for (c, &vi) in self.curves.iter().zip(v) {
            if vi != 0.0 {
                for (o, ci) in out.iter_mut().zip(c) {
                    *o += vi * ci;
                }
            }
        }
        out
    }

    /// Synthesised potential restricted to `[lo, hi]` µm.
    pub fn curve(&self, v: &[f64], lo: f64, hi: f64) -> Result<AxialCurve> {
        let phi = self.potential(v);
        let idx: Vec<usize> = (0..self.x_um.len()).filter(|&i| self.x_um[i] >= lo && self.x_um[i] <= hi).collect();
        AxialCurve::new(
            idx.iter().map(|&i| self.x_um[i]).collect(),
            idx.iter().map(|&i| phi[i]).collect(),
            format!("synthesized [{lo:.1}, {hi:.1}] µm"),
        )
    }

    /// Segment nearest to `x`.
    pub fn segment_near(&self, x: f64) -> &Segment {
        self.segments
            .iter()
            .min_by(|a, b| {
                let d = |s: &Segment| (s.start() - x).max(x - s.end()).max(0.0);
                d(a).total_cmp(&d(b)).then(a.index.cmp(&b.index))
            })
            .expect("basis has segments")
    }

    /// Half the local segment width, interpolated linearly between segment
    /// centres so that it varies continuously along the axis.
    pub fn half_width(&self, x: f64) -> f64 {
        let s = &self.segments;
        let i = s.partition_point(|seg| seg.center_um <= x);
        if i == 0 {
            return 0.5 * s[0].width_um;
        }
        if i == s.len() {
            return 0.5 * s[i - 1].width_um;
        }
        let (a, b) = (&s[i - 1], &s[i]);
        let t = (x - a.center_um) / (b.center_um - a.center_um);
        0.5 * (a.width_um + t * (b.width_um - a.width_um))
    }

    /// Samples within `x0 ± half_width(x0)`.
    fn window(&self, x0: f64) -> Result<(Vec<usize>, f64)> {
        let (lo, hi) = (self.x_um[0], self.x_um[self.x_um.len() - 1]);
        if !(x0 >= lo && x0 <= hi) {
            return Err(Error::OutOfRange { x: x0, min: lo, max: hi });
        }
        let half = self.half_width(x0);
        let idx: Vec<usize> = (0..self.x_um.len()).filter(|&i| (self.x_um[i] - x0).abs() <= half).collect();
        if idx.len() < 5 {
            return Err(invalid(format!("fit window around {x0:.1} µm holds only {} samples", idx.len())));
        }
        Ok((idx, half))
    }

    /// `d²φ/dx²` of pair `pair` at `x0` in V/m² per volt, from a quartic over
    /// the fit window.
    pub fn curvature(&self, pair: usize, x0: f64) -> Result<f64> {
        let (idx, _) = self.window(x0)?;
        let d: Vec<f64> = idx.iter().map(|&i| self.x_um[i] - x0).collect();
        let y: Vec<f64> = idx.iter().map(|&i| self.curves[pair][i]).collect();
        let c = polyfit(&d, &y, 4.min(d.len() - 1))?;
        Ok(2.0 * c[2] / (UM * UM))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOptions {
    pub bounds: Bounds,
    /// Ridge weight relative to the mean diagonal of `AᵀA`. Larger values
    /// trade fit quality for lower, more local voltages.
    pub ridge: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self { bounds: Bounds::default(), ridge: RIDGE }
    }
}

impl SynthesisOptions {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(invalid(format!("ridge weight must be non-negative, got {}", self.ridge)));
        }
        Ok(())
    }
}

/// Requested harmonic well.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WellTarget {
    pub x_um: f64,
    /// Axial angular frequency, rad/s. Zero asks for a flat potential.
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WellSolution {
    pub voltages: VoltageSet,
    /// Free constant added to the target potential, V.
    pub offset_v: f64,
    /// Axial frequency of the synthesised well, rad/s; 0 when it does not
    /// confine.
    pub omega: f64,
    pub center_um: f64,
    /// RMS mismatch against the target over the fit window, V.
    pub residual_v: f64,
    /// Pairs held at a bound.
    pub at_bounds: usize,
}

/// Largest axial frequency any bounded voltage set reaches at `x0`, from the
/// curvature of each basis curve driven to whichever bound adds confinement.
pub fn max_axial_omega(basis: &AxialBasis, x0: f64, bounds: &Bounds, ion: &IonSpecies) -> Result<f64> {
    let mut k = 0.0;
    for p in 0..basis.pairs() {
        let c = basis.curvature(p, x0)?;
        k += (bounds.min_v * c).max(bounds.max_v * c);
    }
    Ok((ion.charge_c() * k.max(0.0) / ion.mass_kg()).sqrt())
}

/// Bound-constrained ridge least squares of the basis against
/// `½ (m ω² / Z e) (x − x0)² + c` over the fit window.
pub fn solve_voltages(
    basis: &AxialBasis,
    target: WellTarget,
    opts: &SynthesisOptions,
    ion: &IonSpecies,
) -> Result<WellSolution> {
    opts.validate()?;
    let bounds = &opts.bounds;
    ion.validate()?;
    if !(target.omega.is_finite() && target.omega >= 0.0) {
        return Err(invalid(format!("target frequency must be non-negative, got {}", target.omega)));
    }
    let x0 = target.x_um;
    let (idx, half) = basis.window(x0)?;
    let k_target = ion.mass_kg() * target.omega * target.omega / ion.charge_c();
    if target.omega > 0.0 {
        let w_max = max_axial_omega(basis, x0, bounds, ion)?;
        if target.omega > w_max {
            return Err(Error::Infeasible(format!(
                "ω_ax = 2π·{:.3} MHz at x = {x0:.1} µm exceeds the bound-limited maximum 2π·{:.3} MHz",
                hertz(target.omega) / 1e6,
                hertz(w_max) / 1e6
            )));
        }
    }
    let m = idx.len();
    let p = basis.pairs();
    let t: Vec<f64> = idx.iter().map(|&i| 0.5 * k_target * ((basis.x_um[i] - x0) * UM).powi(2)).collect();
    // Weights fall to zero at the window edge so the problem changes
    // continuously as the window slides over the sample grid.
    let w: Vec<f64> = idx.iter().map(|&i| 1.0 - ((basis.x_um[i] - x0) / half).powi(2)).collect();
    let wsum: f64 = w.iter().sum();
    let wmean = |f: &dyn Fn(usize) -> f64| (0..m).map(|r| w[r] * f(r)).sum::<f64>() / wsum;
    // The free offset is removed by centring rows and target.
    let mut a = DMatrix::from_fn(m, p, |r, c| basis.curves[c][idx[r]]);
    for c in 0..p {
        let mean = wmean(&|r| a[(r, c)]);
        for r in 0..m {
            a[(r, c)] = w[r].sqrt() * (a[(r, c)] - mean);
        }
    }
    let t_mean = wmean(&|r| t[r]);
    let tc = DVector::from_iterator(m, (0..m).map(|r| w[r].sqrt() * (t[r] - t_mean)));
    let diag = a.column_iter().map(|c| c.norm_squared()).sum::<f64>() / p as f64;
    let lambda = (opts.ridge * diag).sqrt();
    let mut aug = DMatrix::zeros(m + p, p);
    aug.view_mut((0, 0), (m, p)).copy_from(&a);
    for i in 0..p {
        aug[(m + i, i)] = lambda;
    }
    let mut rhs = DVector::zeros(m + p);
    rhs.rows_mut(0, m).copy_from(&tc);
    let v = bounded_least_squares(&aug, &rhs, bounds)?;

    let fitted: Vec<f64> =
        idx.iter().map(|&i| basis.curves.iter().zip(v.iter()).map(|(c, vi)| c[i] * vi).sum()).collect();
    let offset = wmean(&|r| fitted[r] - t[r]);
    let residual = wmean(&|r| (fitted[r] - offset - t[r]).powi(2)).sqrt();
    let pairs: Vec<f64> = v.iter().map(|x| x.clamp(bounds.min_v, bounds.max_v)).collect();
    let at_bounds = pairs.iter().filter(|&&x| x == bounds.min_v || x == bounds.max_v).count();

    let span = (2.0 * half).max(60.0);
    let (omega, center_um) = match axial_frequency(&basis.curve(&pairs, x0 - span, x0 + span)?, ion) {
        Ok(fit) => (fit.omega, fit.center_um),
        Err(Error::NoConfinement(_)) => (0.0, x0),
        Err(e) => return Err(e),
    };
    if target.omega > 0.0 && (omega / target.omega - 1.0).abs() > OMEGA_TOLERANCE {
        return Err(Error::Infeasible(format!(
            "bounded solution at x = {x0:.1} µm reaches ω_ax = 2π·{:.3} MHz against the requested 2π·{:.3} MHz",
            hertz(omega) / 1e6,
            hertz(target.omega) / 1e6
        )));
    }
    let voltages = VoltageSet::new(pairs);
    voltages.check(bounds)?;
    Ok(WellSolution { voltages, offset_v: offset, omega, center_um, residual_v: residual, at_bounds })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Free,
    Lower,
    Upper,
}

/// Minimises `‖A x − b‖` subject to `min ≤ xᵢ ≤ max` with an active-set
/// method: solve over the free variables, step back to the feasible set when a
/// variable overshoots, release bound variables whose gradient points inward.
pub fn bounded_least_squares(a: &DMatrix<f64>, b: &DVector<f64>, bounds: &Bounds) -> Result<DVector<f64>> {
    let n = a.ncols();
    let (lo, hi) = (bounds.min_v, bounds.max_v);
    let mut x = DVector::from_element(n, 0.0f64.clamp(lo, hi));
    let mut state: Vec<VarState> = x
        .iter()
        .map(|&v| {
            if v == lo {
                VarState::Lower
            } else if v == hi {
                VarState::Upper
            } else {
                VarState::Free
            }
        })
        .collect();
    let scale = (a.transpose() * b).amax().max(f64::MIN_POSITIVE);
    let gtol = 1e-10 * scale;
    let mut last_released: Option<usize> = None;
    for _ in 0..(20 * n + 20) {
        loop {
            let free: Vec<usize> = (0..n).filter(|&i| state[i] == VarState::Free).collect();
            if free.is_empty() {
                break;
            }
            let mut r = b.clone();
            for i in (0..n).filter(|&i| state[i] != VarState::Free) {
                r.axpy(-x[i], &a.column(i), 1.0);
            }
            let af = a.select_columns(&free);
            let z = lstsq(&af, &r)?;
            if z.iter().all(|&v| v >= lo && v <= hi) {
                for (k, &i) in free.iter().enumerate() {
                    x[i] = z[k];
                }
                break;
            }
            let mut alpha = 1.0f64;
            for (k, &i) in free.iter().enumerate() {
                let step = z[k] - x[i];
                if z[k] < lo {
                    alpha = alpha.min((lo - x[i]) / step);
                } else if z[k] > hi {
                    alpha = alpha.min((hi - x[i]) / step);
                }
            }
            let alpha = alpha.max(0.0);
            for (k, &i) in free.iter().enumerate() {
                x[i] += alpha * (z[k] - x[i]);
                let reach = 1e-12 * (hi - lo);
                if z[k] < lo && x[i] <= lo + reach {
                    x[i] = lo;
                    state[i] = VarState::Lower;
                } else if z[k] > hi && x[i] >= hi - reach {
                    x[i] = hi;
                    state[i] = VarState::Upper;
                }
            }
            if alpha == 0.0 && last_released.is_some_and(|j| state[j] != VarState::Free) {
                // The released variable bounced straight back: optimal within
                // rounding.
                return Ok(x);
            }
        }
        let w = a.transpose() * (b - a * &x);
        let release = (0..n)
            .filter(|&i| match state[i] {
                VarState::Lower => w[i] > gtol,
                VarState::Upper => w[i] < -gtol,
                VarState::Free => false,
            })
            .max_by(|&i, &j| w[i].abs().total_cmp(&w[j].abs()));
        match release {
            None => return Ok(x),
            Some(j) => {
                state[j] = VarState::Free;
                last_released = Some(j);
            }
        }
    }
    Err(Error::NoConvergence {
        what: "bounded least squares".into(),
        residual: (b - a * &x).norm(),
        iterations: 20 * n + 20,
    })
}

/// Linear model of the ion's radial equilibrium and micromotion around the
/// RF null of one segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompensationSetup {
    /// Transverse RF gradient at the nominal null, V/m per RF volt.
    pub rf_gradient: [f64; 2],
    /// Transverse RF Hessian, V/m² per RF volt.
    pub rf_hessian: [[f64; 2]; 2],
    /// Transverse electric field at the ion per volt of differential, V/m.
    pub field_per_volt: [f64; 2],
    /// Pair voltage the differential is applied on top of.
    pub base_voltage: f64,
    pub drive: RfDrive,
    pub ion: IonSpecies,
    pub k: [f64; 3],
    pub bounds: Bounds,
}

/// Result of nulling the projected micromotion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Compensation {
    pub differential_v: f64,
    /// `β` left at the optimum, evaluated through the full micromotion vector.
    pub beta_residual: f64,
    pub beta_uncompensated: f64,
    /// `β(V)` for the sequence engine.
    pub model: MicromotionModel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompensationPoint {
    pub differential_v: f64,
    pub beta: f64,
    /// `(J₁(β)/J₀(β))²`.
    pub excitation_ratio: f64,
}

impl CompensationSetup {
    /// Builds the model at `(x_um, 0, 0)` from the RF basis (both RF
    /// electrodes at 1 V) and the differential basis of the local pair.
    #[allow(clippy::too_many_arguments)]
    pub fn from_fields(
        rf: &PotentialField,
        differential: &PotentialField,
        x_um: f64,
        window_um: f64,
        base_voltage: f64,
        drive: RfDrive,
        ion: IonSpecies,
        beam: &BeamGeometry,
    ) -> Result<Self> {
        let q = quadrupole_c2(rf, [x_um, 0.0, 0.0], window_um)?;
        let g = differential.gradient_at([x_um, 0.0, 0.0])?;
        Ok(Self {
            rf_gradient: q.gradient,
            rf_hessian: q.hessian,
            field_per_volt: [-g[1] / UM, -g[2] / UM],
            base_voltage,
            drive,
            ion,
            k: beam.wave_vector(),
            bounds: Bounds::default(),
        })
    }

    /// Pseudopotential stiffness `(Z e U)² HᵀH / (2 m Ω²)`, J/m².
    fn stiffness(&self) -> nalgebra::Matrix2<f64> {
        let h = nalgebra::Matrix2::new(
            self.rf_hessian[0][0],
            self.rf_hessian[0][1],
            self.rf_hessian[1][0],
            self.rf_hessian[1][1],
        );
        let s = (self.ion.charge_c() * self.drive.amplitude_v).powi(2)
            / (2.0 * self.ion.mass_kg() * self.drive.omega.powi(2));
        h.transpose() * h * s
    }

    /// Equilibrium displacement (m) from the nominal null under `e_stray`
    /// plus `dv` volts of differential.
    pub fn displacement(&self, e_stray: [f64; 2], dv: f64) -> Result<[f64; 2]> {
        let k = self.stiffness();
        let h = nalgebra::Matrix2::new(
            self.rf_hessian[0][0],
            self.rf_hessian[0][1],
            self.rf_hessian[1][0],
            self.rf_hessian[1][1],
        );
        let g0 = nalgebra::Vector2::new(self.rf_gradient[0], self.rf_gradient[1]);
        let s = (self.ion.charge_c() * self.drive.amplitude_v).powi(2)
            / (2.0 * self.ion.mass_kg() * self.drive.omega.powi(2));
        let e =
            nalgebra::Vector2::new(e_stray[0] + dv * self.field_per_volt[0], e_stray[1] + dv * self.field_per_volt[1]);
        let force = e * self.ion.charge_c() - h.transpose() * g0 * s;
        let u =
            k.lu().solve(&force).ok_or_else(|| Error::NoConfinement("RF Hessian is singular at the null".into()))?;
        Ok([u[0], u[1]])
    }

    /// RF gradient per volt at the displaced ion, 1/m, as a 3-vector.
    pub fn rf_gradient_at(&self, e_stray: [f64; 2], dv: f64) -> Result<[f64; 3]> {
        let u = self.displacement(e_stray, dv)?;
        let h = &self.rf_hessian;
        Ok([
            0.0,
            self.rf_gradient[0] + h[0][0] * u[0] + h[0][1] * u[1],
            self.rf_gradient[1] + h[1][0] * u[0] + h[1][1] * u[1],
        ])
    }

    /// Signed projection `k · x_mm`; its magnitude is the modulation index.
    fn signed_beta(&self, e_stray: [f64; 2], dv: f64) -> Result<f64> {
        let g = self.rf_gradient_at(e_stray, dv)?;
        let s = self.ion.charge_c() * self.drive.amplitude_v / (self.ion.mass_kg() * self.drive.omega.powi(2));
        Ok(s * (self.k[0] * g[0] + self.k[1] * g[1] + self.k[2] * g[2]))
    }

    pub fn beta(&self, e_stray: [f64; 2], dv: f64) -> Result<f64> {
        let g = self.rf_gradient_at(e_stray, dv)?;
        Ok(modulation_index(g, self.k, &self.drive, &self.ion))
    }

    /// Differential voltage nulling `β` under `e_stray`.
    pub fn compensate(&self, e_stray: [f64; 2]) -> Result<Compensation> {
        self.bounds.validate()?;
        let b0 = self.signed_beta(e_stray, 0.0)?;
        let slope = self.signed_beta(e_stray, 1.0)? - b0;
        if !(slope.abs() > 1e-12) {
            return Err(Error::Infeasible(
                "the differential voltage does not move the ion along the beam's micromotion direction".into(),
            ));
        }
        let dv = -b0 / slope;
        let (top, bottom) = (self.base_voltage + 0.5 * dv, self.base_voltage - 0.5 * dv);
        if !(self.bounds.contains(top) && self.bounds.contains(bottom)) {
            return Err(Error::Infeasible(format!(
                "compensation needs a differential of {dv:.3} V, putting the electrodes at {top:.3} V / {bottom:.3} V outside [{}, {}] V",
                self.bounds.min_v, self.bounds.max_v
            )));
        }
        Ok(Compensation {
            differential_v: dv,
            beta_residual: self.beta(e_stray, dv)?,
            beta_uncompensated: b0.abs(),
            model: MicromotionModel { beta0: b0, dbeta_dv: slope },
        })
    }

    /// Modulation index and micromotion excitation ratio across `voltages`.
    pub fn scan(&self, e_stray: [f64; 2], voltages: &[f64]) -> Result<Vec<CompensationPoint>> {
        voltages
            .iter()
            .map(|&dv| {
                let beta = self.beta(e_stray, dv)?;
                Ok(CompensationPoint {
                    differential_v: dv,
                    beta,
                    excitation_ratio: micromotion_ratio(beta)?.excitation_ratio,
                })
            })
            .collect()
    }
}

/// Quintic smoothstep `6s⁵ − 15s⁴ + 10s³`, clamped to `[0, 1]`.
pub fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (s * (6.0 * s - 15.0) + 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShuttleRequest {
    pub start_pair: usize,
    pub end_pair: usize,
    pub duration_us: f64,
    pub samples: usize,
    /// Axial frequency held along the path, rad/s.
    pub omega: f64,
    pub synthesis: SynthesisOptions,
    /// Largest allowed change of any pair voltage between consecutive samples.
    pub max_step_v: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub times_us: Vec<f64>,
    pub positions_um: Vec<f64>,
    pub voltages: Vec<VoltageSet>,
    /// Achieved axial frequency per sample, rad/s.
    pub omegas: Vec<f64>,
    pub start_pair: usize,
    pub end_pair: usize,
    pub duration_us: f64,
    pub target_omega: f64,
}

/// Sidecar written next to a waveform CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformMeta {
    pub start_pair: usize,
    pub end_pair: usize,
    pub start_um: f64,
    pub end_um: f64,
    pub duration_us: f64,
    pub samples: usize,
    pub target_omega_mhz: f64,
    /// Largest `|ω/ω_target − 1|` along the path.
    pub max_drift: f64,
    pub max_step_v: f64,
    pub seed: u64,
    pub config_hash: String,
}

impl Waveform {
    pub fn max_drift(&self) -> f64 {
        self.omegas.iter().map(|w| (w / self.target_omega - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Largest voltage change of any pair between consecutive samples.
    pub fn max_step(&self) -> f64 {
        self.voltages
            .windows(2)
            .flat_map(|w| w[0].pairs.iter().zip(&w[1].pairs).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> Result<String> {
        let pairs = self.voltages.first().map_or(0, |v| v.pairs.len());
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["t_us".to_string(), "x_um".to_string()];
        header.extend((0..pairs).map(|i| format!("dc{i:02}")));
        w.write_record(&header).map_err(csv_err)?;
        for ((t, x), v) in self.times_us.iter().zip(&self.positions_um).zip(&self.voltages) {
            let mut row = vec![t.to_string(), x.to_string()];
            row.extend(v.pairs.iter().map(f64::to_string));
            w.write_record(&row).map_err(csv_err)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| invalid(e.to_string()))?).map_err(|e| invalid(e.to_string()))
    }

    /// Times, positions and pair voltages of a waveform CSV.
    pub fn read_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>, Vec<VoltageSet>)> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let (mut t, mut x, mut v) = (Vec::new(), Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let nums = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| invalid(format!("bad number {s:?} in waveform row"))))
                .collect::<Result<Vec<_>>>()?;
            if nums.len() < 3 {
                return Err(invalid("waveform rows need t_us, x_um and at least one pair"));
            }
            t.push(nums[0]);
            x.push(nums[1]);
            v.push(VoltageSet::new(nums[2..].to_vec()));
        }
        Ok((t, x, v))
    }

    pub fn meta(&self, seed: u64, config_hash: &str) -> WaveformMeta {
        WaveformMeta {
            start_pair: self.start_pair,
            end_pair: self.end_pair,
            start_um: self.positions_um[0],
            end_um: *self.positions_um.last().expect("waveform has samples"),
            duration_us: self.duration_us,
            samples: self.times_us.len(),
            target_omega_mhz: hertz(self.target_omega) / 1e6,
            max_drift: self.max_drift(),
            max_step_v: self.max_step(),
            seed,
            config_hash: config_hash.to_string(),
        }
    }

    /// Writes `path` and `path.meta.toml`.
    pub fn save(&self, path: &Path, seed: u64, config_hash: &str) -> Result<()> {
        write_atomic(path, self.to_csv()?.as_bytes())?;
        let meta = toml::to_string(&self.meta(seed, config_hash)).map_err(|e| invalid(e.to_string()))?;
        write_atomic(&meta_path(path), meta.as_bytes())
    }
}

fn csv_err(e: csv::Error) -> Error {
    invalid(format!("csv: {e}"))
}

/// Moves a well from the centre of `start_pair` to the centre of `end_pair`
/// along a smoothstep trajectory, solving every sample independently.
pub fn shuttle_waveform(basis: &AxialBasis, req: &ShuttleRequest, ion: &IonSpecies) -> Result<Waveform> {
    let n = basis.pairs();
    if req.start_pair >= n || req.end_pair >= n {
        return Err(invalid(format!("trap has pairs 0..{n}")));
    }
    if !(req.duration_us > 0.0) || req.samples < 2 {
        return Err(invalid("a waveform needs a positive duration and at least 2 samples"));
    }
    if !(req.omega > 0.0) {
        return Err(invalid("shuttling needs a positive axial frequency"));
    }
    let xs = basis.segments[req.start_pair].center_um;
    let xe = basis.segments[req.end_pair].center_um;
    let last = (req.samples - 1) as f64;
    let times_us: Vec<f64> = (0..req.samples).map(|i| req.duration_us * i as f64 / last).collect();
    let positions_um: Vec<f64> = (0..req.samples).map(|i| xs + (xe - xs) * smoothstep(i as f64 / last)).collect();
    let solutions = positions_um
        .par_iter()
        .enumerate()
        .map(|(i, &x)| {
            solve_voltages(basis, WellTarget { x_um: x, omega: req.omega }, &req.synthesis, ion).map_err(|e| match e {
                Error::Infeasible(m) => Error::Infeasible(format!("sample {i} at x = {x:.1} µm: {m}")),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let wf = Waveform {
        times_us,
        positions_um,
        omegas: solutions.iter().map(|s| s.omega).collect(),
        voltages: solutions.into_iter().map(|s| s.voltages).collect(),
        start_pair: req.start_pair,
        end_pair: req.end_pair,
        duration_us: req.duration_us,
        target_omega: req.omega,
    };
    if let Some(limit) = req.max_step_v {
        let step = wf.max_step();
        if step > limit {
            return Err(Error::Infeasible(format!(
                "voltage step of {step:.4} V between samples exceeds the slew bound {limit} V"
            )));
        }
    }
    Ok(wf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::angular;
    use crate::geometry::{build_trap, TrapSpec};

    /// Lorentzian-like bumps standing in for solved pair curves.
    fn synthetic_basis() -> AxialBasis {
        let g = build_trap(&TrapSpec::default()).unwrap();
        let (_, end) = g.axial_extent();
        let x: Vec<f64> = (0..=((end / 2.5) as usize)).map(|i| i as f64 * 2.5).collect();
        let curves = g
            .segments
            .iter()
            .map(|s| {
                let d = 0.5 * s.slit_um;
                x.iter()
                    .map(|&xi| {
                        let a = (xi - s.start()) / d;
                        let b = (xi - s.end()) / d;
                        0.3 * (a.atan() - b.atan())
                    })
                    .collect()
            })
            .collect();
        AxialBasis::new(x, curves, g.segments.clone()).unwrap()
    }

    #[test]
    fn flat_target_gives_zero_voltages() {
        let b = synthetic_basis();
        let s = solve_voltages(
            &b,
            WellTarget { x_um: b.segments[4].center_um, omega: 0.0 },
            &SynthesisOptions::default(),
            &IonSpecies::default(),
        )
        .unwrap();
        assert!(s.voltages.pairs.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(s.omega, 0.0);
    }

    #[test]
    fn bvls_matches_unconstrained_when_inactive_and_respects_bounds() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, -1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0, -1.0]);
        let x = bounded_least_squares(&a, &b, &Bounds::default()).unwrap();
        let free = lstsq(&a, &b).unwrap();
        assert!((x - free).norm() < 1e-12);
        let tight = Bounds { min_v: -0.5, max_v: 1.5 };
        let x = bounded_least_squares(&a, &b, &tight).unwrap();
        assert_eq!(x[1], 1.5);
        // With x₁ pinned the optimum in x₀ is the 1-D least-squares value.
        let x0 = (1.0 + (3.0 - 1.5) + (-1.0 + 1.5)) / 3.0;
        assert!((x[0] - x0).abs() < 1e-12);
    }

    #[test]
    fn reported_frequency_matches_synthesized_curvature() {
        let b = synthetic_basis();
        let ion = IonSpecies::default();
        let x0 = b.segments[4].center_um;
        let s = solve_voltages(&b, WellTarget { x_um: x0, omega: angular(1.2e6) }, &SynthesisOptions::default(), &ion)
            .unwrap();
        let phi = b.potential(&s.voltages.pairs);
        let i = b.x_um.iter().position(|&x| (x - s.center_um).abs() <= 1.25).unwrap();
        let h = (b.x_um[i + 1] - b.x_um[i]) * UM;
        let k = (phi[i + 1] - 2.0 * phi[i] + phi[i - 1]) / (h * h);
        let w = (ion.charge_c() * k / ion.mass_kg()).sqrt();
        assert!((w / s.omega - 1.0).abs() < 0.01, "{w} vs {}", s.omega);
        assert!((s.omega / angular(1.2e6) - 1.0).abs() < 0.02);
    }

    #[test]
    fn excessive_frequency_is_infeasible() {
        let b = synthetic_basis();
        let x0 = b.segments[4].center_um;
        let err = solve_voltages(
            &b,
            WellTarget { x_um: x0, omega: angular(50e6) },
            &SynthesisOptions::default(),
            &IonSpecies::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Infeasible(ref m) if m.contains("maximum")), "{err}");
    }

    #[test]
    fn smoothstep_profile() {
        assert_eq!(smoothstep(0.0), 0.0);
        assert_eq!(smoothstep(1.0), 1.0);
        assert!((smoothstep(0.5) - 0.5).abs() < 1e-15);
        let d = |s: f64| (smoothstep(s + 1e-6) - smoothstep(s - 1e-6)) / 2e-6;
        assert!(d(1e-3) < 1e-4 && d(1.0 - 1e-3) < 1e-4);
    }

    #[test]
    fn static_request_gives_constant_waveform() {
        let b = synthetic_basis();
        let req = ShuttleRequest {
            start_pair: 3,
            end_pair: 3,
            duration_us: 10.0,
            samples: 5,
            omega: angular(1.0e6),
            synthesis: SynthesisOptions::default(),
            max_step_v: Some(1e-9),
        };
        let wf = shuttle_waveform(&b, &req, &IonSpecies::default()).unwrap();
        assert!(wf.voltages.windows(2).all(|w| w[0] == w[1]));
        let csv = wf.to_csv().unwrap();
        let (t, x, v) = Waveform::read_csv(&csv).unwrap();
        assert_eq!(t, wf.times_us);
        assert_eq!(x, wf.positions_um);
        assert_eq!(v, wf.voltages);
    }
}
