//! ⁴⁰Ca⁺ level data, Lamb–Dicke factors, motional states and coherent Rabi
//! dynamics on the S₁/₂ ↔ D₅/₂ quadrupole transition.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::{angular, HBAR};
use crate::error::{invalid, Result};
use crate::rf::IonSpecies;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub name: String,
    /// Radiative lifetime in seconds; `None` for the ground state.
    pub lifetime_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub lower: String,
    pub upper: String,
    pub wavelength_nm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelScheme {
    pub levels: Vec<Level>,
    pub transitions: Vec<Transition>,
    /// Natural linewidth of the P levels, angular (rad/s).
    pub gamma_p: f64,
}

impl Default for LevelScheme {
    fn default() -> Self {
        let lvl = |n: &str, t: Option<f64>| Level { name: n.into(), lifetime_s: t };
        let tr = |l: &str, u: &str, w: f64| Transition { lower: l.into(), upper: u.into(), wavelength_nm: w };
        Self {
            levels: vec![
                lvl("S1/2", None),
                lvl("P1/2", Some(7.1e-9)),
                lvl("P3/2", Some(6.9e-9)),
                lvl("D3/2", Some(1.17)),
                lvl("D5/2", Some(1.2)),
            ],
            transitions: vec![
                tr("S1/2", "P1/2", 397.0),
                tr("D3/2", "P1/2", 866.0),
                tr("D5/2", "P3/2", 854.0),
                tr("S1/2", "D5/2", 729.0),
                tr("S1/2", "P3/2", 393.0),
            ],
            gamma_p: angular(22.3e6),
        }
    }
}

impl LevelScheme {
    pub fn level(&self, name: &str) -> Option<&Level> {
        self.levels.iter().find(|l| l.name == name)
    }

    pub fn wavelength_nm(&self, lower: &str, upper: &str) -> Option<f64> {
        self.transitions.iter().find(|t| t.lower == lower && t.upper == upper).map(|t| t.wavelength_nm)
    }

    /// Lifetime of the metastable D₅/₂ qubit level.
    pub fn d52_lifetime_s(&self) -> f64 {
        self.level("D5/2").and_then(|l| l.lifetime_s).unwrap_or(1.2)
    }

    pub fn validate(&self) -> Result<()> {
        for l in &self.levels {
            if let Some(t) = l.lifetime_s {
                if !(t > 0.0) {
                    return Err(invalid(format!("lifetime of {} must be positive", l.name)));
                }
            }
        }
        if self.transitions.iter().any(|t| !(t.wavelength_nm > 0.0)) {
            return Err(invalid("transition wavelengths must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BeamRole {
    Cooling,
    Pumping,
    Spectroscopy,
    Quench,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamGeometry {
    pub wavelength_m: f64,
    /// Angle between the beam and the trap axis, degrees.
    pub angle_deg: f64,
    pub role: BeamRole,
}

impl BeamGeometry {
    pub fn new(wavelength_m: f64, angle_deg: f64, role: BeamRole) -> Result<Self> {
        if !(wavelength_m > 0.0) {
            return Err(invalid("wavelength must be positive"));
        }
        if !(0.0..=90.0).contains(&angle_deg) {
            return Err(invalid(format!("beam angle {angle_deg}° outside [0°, 90°]")));
        }
        Ok(Self { wavelength_m, angle_deg, role })
    }

    /// The 729 nm spectroscopy beam at 45° to the axis.
    pub fn spectroscopy_729() -> Self {
        Self { wavelength_m: 729e-9, angle_deg: 45.0, role: BeamRole::Spectroscopy }
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength_m
    }

    /// Wave vector (1/m) in trap coordinates; the beam lies in the xy plane.
    pub fn wave_vector(&self) -> [f64; 3] {
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let k = self.wavenumber();
        [k * c, k * s, 0.0]
    }
}

/// Ground-state extent `sqrt(ħ / 2mω)` in metres.
fn zero_point(ion: &IonSpecies, omega: f64) -> f64 {
    (HBAR / (2.0 * ion.mass_kg() * omega)).sqrt()
}

/// `η = k cos θ sqrt(ħ / 2mω)` for a mode along the trap axis.
pub fn lamb_dicke(beam: &BeamGeometry, ion: &IonSpecies, omega: f64) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(invalid("mode frequency must be positive"));
    }
    Ok(beam.wavenumber() * beam.angle_deg.to_radians().cos() * zero_point(ion, omega))
}

/// Projection onto a radial mode: `k sin θ sqrt(ħ / 2mω)`.
pub fn lamb_dicke_radial(beam: &BeamGeometry, ion: &IonSpecies, omega: f64) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(invalid("mode frequency must be positive"));
    }
    Ok(beam.wavenumber() * beam.angle_deg.to_radians().sin() * zero_point(ion, omega))
}

/// Recoil factor of spontaneous emission, `k sqrt(ħ / 2mω)` with no projection.
pub fn lamb_dicke_recoil(wavelength_m: f64, ion: &IonSpecies, omega: f64) -> Result<f64> {
    if !(omega > 0.0) || !(wavelength_m > 0.0) {
        return Err(invalid("mode frequency and wavelength must be positive"));
    }
    Ok(2.0 * PI / wavelength_m * zero_point(ion, omega))
}

/// `pₙ = n̄ⁿ / (n̄ + 1)ⁿ⁺¹`.
pub fn thermal_pn(nbar: f64, n: u64) -> f64 {
    if nbar <= 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let r = nbar / (nbar + 1.0);
    (n as f64 * r.ln()).exp() / (nbar + 1.0)
}

/// Weight allowed outside a truncated population list.
pub const TRUNCATION_WEIGHT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MotionalKind {
    Thermal { nbar: f64 },
    Fock { n: u64 },
    Distribution { pn: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionalState {
    #[serde(flatten)]
    pub kind: MotionalKind,
    /// Mode angular frequency, rad/s.
    pub omega: f64,
}

impl MotionalState {
    pub fn thermal(nbar: f64, omega: f64) -> Result<Self> {
        if !(nbar >= 0.0 && nbar.is_finite()) {
            return Err(invalid(format!("mean phonon number must be ≥ 0, got {nbar}")));
        }
        Ok(Self { kind: MotionalKind::Thermal { nbar }, omega })
    }

    pub fn fock(n: u64, omega: f64) -> Self {
        Self { kind: MotionalKind::Fock { n }, omega }
    }

    pub fn distribution(pn: Vec<f64>, omega: f64) -> Result<Self> {
        if pn.iter().any(|&p| !(p >= 0.0)) {
            return Err(invalid("populations must be non-negative"));
        }
        let s: f64 = pn.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("populations sum to {s}, not 1")));
        }
        Ok(Self { kind: MotionalKind::Distribution { pn }, omega })
    }

    /// Populations `p₀, p₁, ...` truncated so the dropped weight is below
    /// [`TRUNCATION_WEIGHT`].
    pub fn populations(&self) -> Vec<f64> {
        match &self.kind {
            MotionalKind::Thermal { nbar } => {
                if *nbar <= 0.0 {
                    return vec![1.0];
                }
                // Tail beyond n_max is r^(n_max+1) with r = n̄/(n̄+1).
                let r = nbar / (nbar + 1.0);
                let n_max = (TRUNCATION_WEIGHT.ln() / r.ln()).ceil() as u64;
                (0..=n_max).map(|n| thermal_pn(*nbar, n)).collect()
            }
            MotionalKind::Fock { n } => {
                let mut v = vec![0.0; *n as usize + 1];
                v[*n as usize] = 1.0;
                v
            }
            MotionalKind::Distribution { pn } => pn.clone(),
        }
    }

    pub fn mean(&self) -> f64 {
        match &self.kind {
            MotionalKind::Thermal { nbar } => *nbar,
            MotionalKind::Fock { n } => *n as f64,
            MotionalKind::Distribution { pn } => pn.iter().enumerate().map(|(n, p)| n as f64 * p).sum(),
        }
    }
}

/// Dependence of the carrier Rabi frequency on the phonon number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RabiModel {
    /// `Ω₀ (1 − η² n)`.
    #[default]
    Linearized,
    /// `Ω₀ Lₙ(η²)`, normalised so that `n = 0` couples with `Ω₀`.
    Laguerre,
}

/// Laguerre polynomial `Lₙ(x)` by the three-term recurrence.
pub fn laguerre(n: u64, x: f64) -> f64 {
    let (mut a, mut b) = (1.0, 1.0 - x);
    if n == 0 {
        return a;
    }
    for k in 1..n {
        let k = k as f64;
        let c = ((2.0 * k + 1.0 - x) * b - k * a) / (k + 1.0);
        a = b;
        b = c;
    }
    b
}

/// Carrier Rabi frequency of Fock state `n`.
pub fn carrier_rabi(omega0: f64, eta: f64, n: u64, model: RabiModel) -> f64 {
    match model {
        RabiModel::Linearized => omega0 * (1.0 - eta * eta * n as f64),
        RabiModel::Laguerre => omega0 * laguerre(n, eta * eta),
    }
}

#[inline]
fn flop(rabi: f64, t: f64) -> f64 {
    (0.5 * rabi * t).sin().powi(2)
}

/// Excitation probability of a resonantly driven two-level system with Rabi
/// frequency `rabi` and detuning `delta` (both angular) after time `t`.
pub fn rabi_probability(rabi: f64, delta: f64, t: f64) -> f64 {
    let w2 = rabi * rabi + delta * delta;
    if w2 == 0.0 {
        return 0.0;
    }
    rabi * rabi / w2 * (0.5 * w2.sqrt() * t).sin().powi(2)
}

/// `P_D(t) = Σ pₙ sin²(Ω_{n,n} t / 2)`.
pub fn carrier_flop(t: f64, omega0: f64, eta: f64, state: &MotionalState, model: RabiModel) -> f64 {
    state
        .populations()
        .iter()
        .enumerate()
        .map(|(n, p)| p * flop(carrier_rabi(omega0, eta, n as u64, model), t))
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sideband {
    Red,
    Blue,
}

/// First-order sideband Rabi frequency from Fock state `n`.
pub fn sideband_rabi(order: Sideband, omega0: f64, eta: f64, n: u64) -> f64 {
    match order {
        Sideband::Red => eta * omega0 * (n as f64).sqrt(),
        Sideband::Blue => eta * omega0 * (n as f64 + 1.0).sqrt(),
    }
}

/// Thermal average of `sin²(Ω_{n,n±1} t / 2)`.
pub fn sideband_flop(order: Sideband, t: f64, omega0: f64, eta: f64, state: &MotionalState) -> f64 {
    state
        .populations()
        .iter()
        .enumerate()
        .map(|(n, p)| p * flop(sideband_rabi(order, omega0, eta, n as u64), t))
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// Time and height of the first local maximum of the carrier flop, searched
/// up to three nominal π-times.
pub fn first_flop_maximum(omega0: f64, eta: f64, state: &MotionalState, model: RabiModel) -> (f64, f64) {
    let f = |t: f64| carrier_flop(t, omega0, eta, state, model);
    let t_pi = PI / omega0;
    let dt = t_pi / 2000.0;
    let mut t = dt;
    let (mut prev, mut cur) = (f(0.0), f(dt));
    while t < 3.0 * t_pi {
        let next = f(t + dt);
        if cur >= prev && cur >= next {
            break;
        }
        prev = cur;
        cur = next;
        t += dt;
    }
    // Golden-section refinement on [t − dt, t + dt].
    let (mut a, mut b) = (t - dt, t + dt);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let (c, d) = (b - g * (b - a), a + g * (b - a));
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let tm = 0.5 * (a + b);
    (tm, f(tm))
}

/// Lorentzian with peak `amplitude` at `center` and full width `fwhm`.
pub fn lorentzian(f: f64, center: f64, fwhm: f64, amplitude: f64) -> f64 {
    let hw = 0.5 * fwhm;
    amplitude * hw * hw / ((f - center).powi(2) + hw * hw)
}
