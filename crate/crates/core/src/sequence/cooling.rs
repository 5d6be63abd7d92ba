//! Doppler and resolved-sideband cooling limits, quench calibration and
//! trap heating, plus the birth–death process used by the shot simulator.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::atomic::MotionalState;
use crate::constants::angular;
use crate::error::{invalid, Error, Result};

/// Quench calibration slope, Hz of D₅/₂ width per µW of 854 nm light.
pub const QUENCH_SLOPE_HZ_PER_UW: f64 = 31.6e3;

/// Excess factor that lifts the Doppler limit at 1.1 MHz from 10.1 to 12.
pub const DEFAULT_DOPPLER_EXCESS: f64 = 12.0 * 2.0 * 1.1 / 22.3;

/// Shortest Doppler cooling pulse treated as reaching steady state.
pub const MIN_DOPPLER_DURATION_S: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DopplerParams {
    /// P-level linewidth, angular.
    pub gamma_p: f64,
    /// Multiplier χ ≥ 1 on the ideal limit.
    pub excess: f64,
    /// Lower bound on the ideal limit before scaling.
    pub nbar_floor: f64,
}

impl Default for DopplerParams {
    fn default() -> Self {
        Self { gamma_p: angular(22.3e6), excess: DEFAULT_DOPPLER_EXCESS, nbar_floor: 0.0 }
    }
}

impl DopplerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_p > 0.0) || !(self.excess >= 1.0) || !(self.nbar_floor >= 0.0) {
            return Err(invalid("Doppler parameters need Γ > 0, χ ≥ 1 and a non-negative floor"));
        }
        Ok(())
    }

    /// `χ · max(Γ / 2ω, n̄_floor)`.
    pub fn nbar(&self, omega: f64) -> f64 {
        self.excess * (self.gamma_p / (2.0 * omega)).max(self.nbar_floor)
    }
}

/// Thermal state left by Doppler cooling a mode of frequency `omega`.
pub fn doppler_cool(params: &DopplerParams, omega: f64, duration_s: f64) -> Result<MotionalState> {
    params.validate()?;
    if duration_s < MIN_DOPPLER_DURATION_S {
        return Err(invalid(format!(
            "Doppler cooling for {:.3} ms does not reach steady state (≥ 1 ms)",
            duration_s * 1e3
        )));
    }
    MotionalState::thermal(params.nbar(omega), omega)
}

/// Quench-broadened D₅/₂ width in Hz for `p854_uw` µW of 854 nm light.
pub fn gamma_eff(p854_uw: f64, slope_hz_per_uw: f64) -> Result<f64> {
    if !(p854_uw >= 0.0) {
        return Err(invalid(format!("854 nm power must be ≥ 0, got {p854_uw}")));
    }
    Ok(slope_hz_per_uw * p854_uw)
}

/// Remaining D₅/₂ population after quenching for `t` seconds, `γ_eff` in Hz.
pub fn quench_decay(t: f64, gamma_eff_hz: f64) -> f64 {
    (-gamma_eff_hz * t).exp()
}

/// `n̄(t) = n̄₀ + Γ_trap t`.
pub fn heating_evolution(nbar0: f64, t: f64, heating_rate: f64) -> f64 {
    nbar0 + heating_rate * t
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoolingParams {
    pub eta: f64,
    pub eta_spont: f64,
    /// Carrier Rabi frequency, angular.
    pub omega0: f64,
    /// Quench-broadened D₅/₂ width in Hz; enters the rate equations as `2π γ`.
    pub gamma_eff_hz: f64,
    /// Trap heating rate, phonons per second.
    pub heating_rate: f64,
    /// Axial mode frequency, angular.
    pub omega_ax: f64,
}

impl CoolingParams {
    pub fn validate(&self) -> Result<()> {
        let v = [self.eta, self.eta_spont, self.omega0, self.gamma_eff_hz, self.heating_rate, self.omega_ax];
        if v.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(invalid("cooling parameters must be finite and non-negative"));
        }
        Ok(())
    }

    fn gamma_angular(&self) -> f64 {
        2.0 * PI * self.gamma_eff_hz
    }

    /// True when the red sideband is driven incoherently, `η Ω₀ ≤ γ_eff`.
    pub fn incoherent(&self) -> bool {
        self.eta * self.omega0 <= self.gamma_angular()
    }

    /// Optical pumping rate out of the phonon ladder per phonon,
    /// `(η Ω₀)² / γ_eff`.
    pub fn pump_rate(&self) -> f64 {
        let g = self.gamma_angular();
        if g == 0.0 {
            0.0
        } else {
            (self.eta * self.omega0).powi(2) / g
        }
    }

    /// Net cooling rate `W` of the mean phonon number.
    pub fn net_rate(&self) -> f64 {
        self.pump_rate() - self.heating_rate
    }

    /// Exact mean of the rate process started from `n̄₀`.
    pub fn mean_after(&self, nbar0: f64, t: f64) -> Result<f64> {
        let (nss, w) = sideband_cool_limit_trap(self)?;
        Ok(nss + (nbar0 - nss) * (-w * t).exp())
    }

    /// Runs the cooling birth–death process on one ion for `duration` s.
    pub fn evolve<R: Rng + ?Sized>(&self, n: u64, duration: f64, rng: &mut R) -> u64 {
        birth_death(n, self.heating_rate, self.pump_rate(), duration, rng)
    }

    /// Carrier Rabi frequency that puts the heating-limited steady state at `nbar`.
    pub fn omega0_for_nbar(&self, nbar: f64) -> Result<f64> {
        if !(nbar > 0.0) || !(self.eta > 0.0) {
            return Err(invalid("target n̄ and η must be positive"));
        }
        let r = self.heating_rate * (1.0 + nbar) / nbar;
        Ok((r * self.gamma_angular()).sqrt() / self.eta)
    }
}

/// Laser-limited steady state with the squared denominator,
/// `(η_sp² / η² + 1/4) γ_eff² / 4ω_ax²`.
pub fn sideband_cool_limit_laser(params: &CoolingParams) -> Result<f64> {
    params.validate()?;
    if !(params.eta > 0.0) || !(params.omega_ax > 0.0) {
        return Err(invalid("η and ω_ax must be positive"));
    }
    let ratio = params.gamma_angular() / params.omega_ax;
    Ok((params.eta_spont.powi(2) / params.eta.powi(2) + 0.25) * ratio * ratio / 4.0)
}

/// Heating-limited steady state `Γ_trap / W` and the net rate `W`.
pub fn sideband_cool_limit_trap(params: &CoolingParams) -> Result<(f64, f64)> {
    params.validate()?;
    let w = params.net_rate();
    if !(w > 0.0) {
        return Err(Error::NoCooling { rate: w });
    }
    Ok((params.heating_rate / w, w))
}

/// Gillespie simulation of a linear birth–death process with rates
/// `up·(n+1)` and `down·n`. Both rates are per phonon per second.
pub(crate) fn birth_death<R: Rng + ?Sized>(mut n: u64, up: f64, down: f64, duration: f64, rng: &mut R) -> u64 {
    let mut t = 0.0;
    loop {
        let a_up = up * (n as f64 + 1.0);
        let a_down = down * n as f64;
        let a = a_up + a_down;
        if a <= 0.0 {
            return n;
        }
        let dt: f64 = Exp1.sample(rng);
        t += dt / a;
        if t > duration {
            return n;
        }
        if rng.gen::<f64>() * a < a_up {
            n += 1;
        } else {
            n -= 1;
        }
    }
}

/// Draws a phonon number from a thermal distribution.
pub(crate) fn sample_thermal<R: Rng + ?Sized>(nbar: f64, rng: &mut R) -> u64 {
    if nbar <= 0.0 {
        return 0;
    }
    // Geometric with success probability 1/(n̄+1), counted from 0.
    let u: f64 = 1.0 - rng.gen::<f64>();
    (u.ln() / (nbar / (nbar + 1.0)).ln()).floor() as u64
}
