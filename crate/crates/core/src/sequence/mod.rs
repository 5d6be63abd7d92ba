//! Per-shot Monte Carlo of the cooling / spectroscopy / detection sequence.
//!
//! Every shot draws from its own ChaCha stream keyed by `(seed, point, shot)`,
//! so a record does not depend on how shots are scheduled across threads.

mod cooling;
mod detection;
mod record;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cooling::{
    doppler_cool, gamma_eff, heating_evolution, quench_decay, sideband_cool_limit_laser, sideband_cool_limit_trap,
    CoolingParams, DopplerParams, DEFAULT_DOPPLER_EXCESS, MIN_DOPPLER_DURATION_S, QUENCH_SLOPE_HZ_PER_UW,
};
pub use detection::{detect, DetectionError, DetectionOutcome, DetectionParams, Electronic};
pub use record::{meta_path, projection_noise, ExperimentRecord, RecordMeta, RecordPoint};

use crate::atomic::{
    carrier_rabi, lamb_dicke, lamb_dicke_radial, lamb_dicke_recoil, rabi_probability, BeamGeometry, RabiModel,
};
use crate::constants::angular;
use crate::error::{invalid, Error, Result};
use crate::numerics::bessel_j;
use crate::rf::IonSpecies;
use cooling::{birth_death, sample_thermal};

/// One step of a pulse sequence, in the units named by its fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    DopplerCool {
        duration_ms: f64,
    },
    OpticalPump {
        duration_us: f64,
    },
    SidebandCool {
        duration_ms: f64,
        p854_uw: f64,
        rabi_khz: f64,
    },
    Wait {
        duration_ms: f64,
    },
    SpecPulse {
        detuning_mhz: f64,
        duration_us: f64,
        rabi_khz: f64,
    },
    /// Shines the 854 nm quench alone, emptying D₅/₂ at rate `γ_eff`.
    Quench {
        duration_us: f64,
        p854_uw: f64,
    },
    Detect {
        duration_ms: f64,
    },
}

impl Step {
    pub fn name(&self) -> &'static str {
        match self {
            Step::DopplerCool { .. } => "doppler_cool",
            Step::OpticalPump { .. } => "optical_pump",
            Step::SidebandCool { .. } => "sideband_cool",
            Step::Wait { .. } => "wait",
            Step::SpecPulse { .. } => "spec_pulse",
            Step::Quench { .. } => "quench",
            Step::Detect { .. } => "detect",
        }
    }

    /// Duration in seconds.
    pub fn duration_s(&self) -> f64 {
        match *self {
            Step::DopplerCool { duration_ms } | Step::Wait { duration_ms } | Step::Detect { duration_ms } => {
                duration_ms * 1e-3
            }
            Step::SidebandCool { duration_ms, .. } => duration_ms * 1e-3,
            Step::OpticalPump { duration_us } => duration_us * 1e-6,
            Step::SpecPulse { duration_us, .. } | Step::Quench { duration_us, .. } => duration_us * 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PulseSequence {
    pub steps: Vec<Step>,
}

impl PulseSequence {
    pub fn new(steps: Vec<Step>) -> Result<Self> {
        let s = Self { steps };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.steps.len();
        for (i, step) in self.steps.iter().enumerate() {
            let d = step.duration_s();
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::Sequence(format!("step {} ({}) has a negative duration", i + 1, step.name())));
            }
            match *step {
                Step::Detect { .. } if i + 1 != n => {
                    return Err(Error::Sequence(format!(
                        "step {} (detect) must be the last step and appear once",
                        i + 1
                    )));
                }
                Step::Detect { .. } if d == 0.0 => {
                    return Err(Error::Sequence("detection needs a positive duration".into()));
                }
                Step::DopplerCool { .. } if d < MIN_DOPPLER_DURATION_S => {
                    return Err(Error::Sequence(format!(
                        "step {} (doppler_cool) lasts {:.3} ms; at least 1 ms is needed",
                        i + 1,
                        d * 1e3
                    )));
                }
                Step::SidebandCool { p854_uw, rabi_khz, .. } => {
                    if !(p854_uw > 0.0) || !(rabi_khz >= 0.0) {
                        return Err(Error::Sequence(format!(
                            "step {} (sideband_cool) needs a positive 854 nm power and non-negative Rabi frequency",
                            i + 1
                        )));
                    }
                }
                Step::Quench { p854_uw, .. } if !(p854_uw >= 0.0) => {
                    return Err(Error::Sequence(format!("step {} (quench) has a negative 854 nm power", i + 1)));
                }
                Step::SpecPulse { rabi_khz, detuning_mhz, .. } if !(rabi_khz >= 0.0) || !detuning_mhz.is_finite() => {
                    return Err(Error::Sequence(format!("step {} (spec_pulse) has invalid parameters", i + 1)));
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn last_index(&self, pred: impl Fn(&Step) -> bool) -> Option<usize> {
        self.steps.iter().rposition(pred)
    }
}

/// Ion and trap environment shared by all shots, SI units throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineParams {
    pub ion: IonSpecies,
    /// Axial mode, angular.
    pub omega_ax: f64,
    /// Radial mode addressed by the spectroscopy beam, angular.
    pub omega_rad: f64,
    /// RF drive, angular.
    pub omega_rf: f64,
    pub beam: BeamGeometry,
    /// Wavelength of the spontaneous decay that closes the cooling cycle.
    pub recoil_wavelength_m: f64,
    pub rabi_model: RabiModel,
    pub doppler: DopplerParams,
    /// Trap heating of the axial mode, phonons per second.
    pub heating_rate: f64,
    pub quench_slope_hz_per_uw: f64,
    /// FWHM of the laser frequency jitter, Hz; drawn once per shot.
    pub laser_linewidth_hz: f64,
    pub micromotion: MicromotionModel,
    pub detection: DetectionParams,
}

impl Default for EngineParams {
    fn default() -> Self {
        Self {
            ion: IonSpecies::default(),
            omega_ax: angular(1.1e6),
            omega_rad: angular(2.0e6),
            omega_rf: angular(24.841e6),
            beam: BeamGeometry::spectroscopy_729(),
            recoil_wavelength_m: 393e-9,
            rabi_model: RabiModel::Linearized,
            doppler: DopplerParams::default(),
            heating_rate: 2100.0,
            quench_slope_hz_per_uw: QUENCH_SLOPE_HZ_PER_UW,
            laser_linewidth_hz: 0.0,
            micromotion: MicromotionModel::default(),
            detection: DetectionParams::default(),
        }
    }
}

/// Modulation index as a function of the compensation voltage,
/// `β(V) = |β₀ + dβ/dV · V|`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MicromotionModel {
    pub beta0: f64,
    pub dbeta_dv: f64,
}

impl MicromotionModel {
    pub fn beta(&self, voltage: f64) -> f64 {
        (self.beta0 + self.dbeta_dv * voltage).abs()
    }
}

impl EngineParams {
    pub fn validate(&self) -> Result<()> {
        self.ion.validate()?;
        self.doppler.validate()?;
        self.detection.validate()?;
        for (name, v) in [("axial", self.omega_ax), ("radial", self.omega_rad), ("RF", self.omega_rf)] {
            if !(v > 0.0) {
                return Err(invalid(format!("{name} frequency must be positive")));
            }
        }
        if !(self.heating_rate >= 0.0) || !(self.laser_linewidth_hz >= 0.0) || !(self.quench_slope_hz_per_uw >= 0.0) {
            return Err(invalid("heating rate, linewidth and quench slope must be non-negative"));
        }
        Ok(())
    }

    pub fn eta(&self) -> f64 {
        lamb_dicke(&self.beam, &self.ion, self.omega_ax).unwrap_or(0.0)
    }

    pub fn eta_radial(&self) -> f64 {
        lamb_dicke_radial(&self.beam, &self.ion, self.omega_rad).unwrap_or(0.0)
    }

    pub fn eta_spont(&self) -> f64 {
        lamb_dicke_recoil(self.recoil_wavelength_m, &self.ion, self.omega_ax).unwrap_or(0.0)
    }

    /// Cooling parameters seen by a sideband-cooling step.
    pub fn cooling(&self, p854_uw: f64, rabi_khz: f64) -> CoolingParams {
        CoolingParams {
            eta: self.eta(),
            eta_spont: self.eta_spont(),
            omega0: angular(rabi_khz * 1e3),
            gamma_eff_hz: self.quench_slope_hz_per_uw * p854_uw,
            heating_rate: self.heating_rate,
            omega_ax: self.omega_ax,
        }
    }

    /// Resonances of the spectroscopy transition: detuning (angular) and
    /// coupling for the given phonon numbers.
    pub fn lines(&self, omega0: f64, n_ax: u64, n_rad: u64, beta: f64) -> Vec<Line> {
        let (ea, er) = (self.eta(), self.eta_radial());
        let f = |n: u64, dn: i32, eta: f64| -> f64 {
            let nf = n as f64;
            match dn {
                0 => carrier_rabi(1.0, eta, n, self.rabi_model),
                1 => eta * (nf + 1.0).sqrt(),
                -1 => eta * nf.sqrt(),
                2 => 0.5 * eta * eta * ((nf + 1.0) * (nf + 2.0)).sqrt(),
                -2 => 0.5 * eta * eta * (nf * (nf - 1.0)).max(0.0).sqrt(),
                _ => 0.0,
            }
        };
        let (j0, j1) = (bessel_j(0, beta), bessel_j(1, beta));
        const PATTERN: [(i32, i32, i32); 11] = [
            (0, 0, 0),
            (1, 0, 0),
            (-1, 0, 0),
            (2, 0, 0),
            (-2, 0, 0),
            (0, 1, 0),
            (0, -1, 0),
            (-1, 1, 0),
            (1, -1, 0),
            (0, 0, 1),
            (0, 0, -1),
        ];
        PATTERN
            .iter()
            .map(|&(da, dr, m)| {
                let bessel = if m == 0 { j0 } else { j1 };
                Line {
                    detuning: da as f64 * self.omega_ax + dr as f64 * self.omega_rad + m as f64 * self.omega_rf,
                    rabi: omega0 * bessel * f(n_ax, da, ea) * f(n_rad, dr, er),
                    axial: da,
                    radial: dr,
                    micromotion: m,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub detuning: f64,
    pub rabi: f64,
    pub axial: i32,
    pub radial: i32,
    pub micromotion: i32,
}

/// Quantity varied along a scan, with its unit suffix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanVariable {
    /// Detuning of the last spectroscopy pulse.
    DetuningMhz,
    /// Length of the last spectroscopy pulse.
    PulseUs,
    /// Length of the last wait step.
    WaitMs,
    /// Length of the last quench step.
    QuenchUs,
    /// Compensation voltage entering the micromotion model.
    VoltageV,
}

impl ScanVariable {
    pub fn label(&self) -> &'static str {
        match self {
            ScanVariable::DetuningMhz => "detuning_mhz",
            ScanVariable::PulseUs => "pulse_us",
            ScanVariable::WaitMs => "wait_ms",
            ScanVariable::QuenchUs => "quench_us",
            ScanVariable::VoltageV => "voltage_v",
        }
    }
}

/// One named set of scan values, optionally pinning other step parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesSpec {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub start: Option<f64>,
    #[serde(default)]
    pub stop: Option<f64>,
    #[serde(default)]
    pub points: Option<usize>,
    /// Overrides the detuning of the last spectroscopy pulse.
    #[serde(default)]
    pub detuning_mhz: Option<f64>,
    /// Overrides the 854 nm power of the last quench step.
    #[serde(default)]
    pub p854_uw: Option<f64>,
}

impl SeriesSpec {
    pub fn range(name: &str, start: f64, stop: f64, points: usize) -> Self {
        Self { name: name.into(), start: Some(start), stop: Some(stop), points: Some(points), ..Default::default() }
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        match (&self.values, self.start, self.stop, self.points) {
            (Some(v), None, None, None) if !v.is_empty() => {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(invalid("scan values must be finite"));
                }
                Ok(v.clone())
            }
            (None, Some(a), Some(b), Some(n)) if n >= 1 && a.is_finite() && b.is_finite() => {
                if n == 1 {
                    return if a == b { Ok(vec![a]) } else { Err(invalid("a single-point range needs start = stop")) };
                }
                Ok((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect())
            }
            _ => Err(invalid(format!(
                "series '{}' needs either a non-empty `values` list or `start`, `stop` and `points`",
                self.name
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSpec {
    pub variable: ScanVariable,
    pub series: Vec<SeriesSpec>,
}

/// A complete experiment: sequence, shots per point and an optional scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub shots: usize,
    #[serde(rename = "step")]
    pub steps: Vec<Step>,
    #[serde(default)]
    pub scan: Option<ScanSpec>,
}

impl Experiment {
    pub fn sequence(&self) -> Result<PulseSequence> {
        PulseSequence::new(self.steps.clone())
    }
}

/// Whether shots of a point are spread over the rayon pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    Serial,
    #[default]
    Parallel,
}

/// State of one ion during a shot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShotState {
    pub n_ax: u64,
    pub n_rad: u64,
    pub electronic: Electronic,
}

/// Stream for shot `shot` of scan point `point`.
pub fn shot_rng(seed: u64, point: u64, shot: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&point.to_le_bytes());
    key[16..24].copy_from_slice(&shot.to_le_bytes());
    key[24..].copy_from_slice(b"segshot\0");
    ChaCha8Rng::from_seed(key)
}

#[derive(Debug, Clone)]
pub struct Engine {
    params: EngineParams,
    schedule: Schedule,
}

impl Engine {
    pub fn new(params: EngineParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, schedule: Schedule::default() })
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn params(&self) -> &EngineParams {
        &self.params
    }

    /// Initial state: the ion is held under continuous Doppler cooling
    /// between shots.
    fn initial<R: Rng>(&self, rng: &mut R) -> ShotState {
        let p = &self.params;
        ShotState {
            n_ax: sample_thermal(p.doppler.nbar(p.omega_ax), rng),
            n_rad: sample_thermal(p.doppler.nbar(p.omega_rad), rng),
            electronic: Electronic::S,
        }
    }

    /// Runs one shot and returns the final state and the recorded outcome
    /// (detected state, or the true state when the sequence has no detection).
    pub fn shot<R: Rng>(&self, seq: &PulseSequence, beta: f64, rng: &mut R) -> Result<(ShotState, bool)> {
        let p = &self.params;
        let mut s = self.initial(rng);
        let mut outcome = None;
        for step in &seq.steps {
            let t = step.duration_s();
            match *step {
                Step::DopplerCool { .. } => s = self.initial(rng),
                Step::OpticalPump { .. } => s.electronic = Electronic::S,
                Step::SidebandCool { p854_uw, rabi_khz, .. } => {
                    let c = p.cooling(p854_uw, rabi_khz);
                    s.n_ax = c.evolve(s.n_ax, t, rng);
                    s.electronic = Electronic::S;
                }
                Step::Wait { .. } => {
                    s.n_ax = birth_death(s.n_ax, p.heating_rate, p.heating_rate, t, rng);
                    if s.electronic == Electronic::D && rng.gen::<f64>() > (-t / p.detection.d_lifetime_s).exp() {
                        s.electronic = Electronic::S;
                    }
                }
                Step::SpecPulse { detuning_mhz, rabi_khz, .. } => {
                    if s.electronic == Electronic::S {
                        let jitter = self.laser_jitter(rng)?;
                        let delta = angular(detuning_mhz * 1e6) + jitter;
                        let lines = p.lines(angular(rabi_khz * 1e3), s.n_ax, s.n_rad, beta);
                        let dark = lines
                            .iter()
                            .filter(|l| l.rabi != 0.0)
                            .map(|l| 1.0 - rabi_probability(l.rabi, delta - l.detuning, t))
                            .product::<f64>();
                        if rng.gen::<f64>() < 1.0 - dark {
                            s.electronic = Electronic::D;
                        }
                    }
                }
                Step::Quench { p854_uw, .. } => {
                    let g = gamma_eff(p854_uw, p.quench_slope_hz_per_uw)?;
                    if s.electronic == Electronic::D && rng.gen::<f64>() > quench_decay(t, g) {
                        s.electronic = Electronic::S;
                    }
                }
                Step::Detect { .. } => {
                    outcome = Some(detect(s.electronic, t, &p.detection, rng)?.classified == Electronic::D);
                }
            }
        }
        Ok((s, outcome.unwrap_or(s.electronic == Electronic::D)))
    }

    fn laser_jitter<R: Rng>(&self, rng: &mut R) -> Result<f64> {
        let fwhm = self.params.laser_linewidth_hz;
        if fwhm == 0.0 {
            return Ok(0.0);
        }
        let sigma = angular(fwhm) / (2.0 * (2.0 * 2f64.ln()).sqrt());
        Ok(Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?.sample(rng))
    }

    /// Outcomes of `shots` repetitions at scan point `point`.
    pub fn run_point(&self, seq: &PulseSequence, beta: f64, shots: usize, seed: u64, point: u64) -> Result<Vec<bool>> {
        seq.validate()?;
        let one = |i: usize| -> Result<bool> {
            let mut rng = shot_rng(seed, point, i as u64);
            Ok(self.shot(seq, beta, &mut rng)?.1)
        };
        match self.schedule {
            Schedule::Serial => (0..shots).map(one).collect(),
            Schedule::Parallel => (0..shots).into_par_iter().map(one).collect(),
        }
    }

    /// Final phonon numbers after running `seq` (used to check the engine's
    /// internal state against estimators).
    pub fn final_phonons(&self, seq: &PulseSequence, shots: usize, seed: u64) -> Result<Vec<u64>> {
        let beta = self.params.micromotion.beta(0.0);
        (0..shots)
            .map(|i| {
                let mut rng = shot_rng(seed, u64::MAX, i as u64);
                Ok(self.shot(seq, beta, &mut rng)?.0.n_ax)
            })
            .collect()
    }

    pub fn run_sequence(&self, seq: &PulseSequence, shots: usize, seed: u64) -> Result<ExperimentRecord> {
        if shots == 0 {
            return Err(invalid("at least one shot is required"));
        }
        let beta = self.params.micromotion.beta(0.0);
        let outcomes = self.run_point(seq, beta, shots, seed, 0)?;
        Ok(ExperimentRecord {
            variable: String::new(),
            seed,
            config_hash: String::new(),
            points: vec![RecordPoint::from_shots("", 0.0, outcomes)?],
        })
    }

    /// Runs every point of `scan`; points are numbered consecutively across
    /// series for RNG keying.
    pub fn scan(&self, seq: &PulseSequence, scan: &ScanSpec, shots: usize, seed: u64) -> Result<ExperimentRecord> {
        seq.validate()?;
        if shots == 0 {
            return Err(invalid("at least one shot per point is required"));
        }
        if scan.series.is_empty() {
            return Err(invalid("scan has no series"));
        }
        let mut points = Vec::new();
        let mut index = 0u64;
        for series in &scan.series {
            let mut base = seq.clone();
            if let Some(d) = series.detuning_mhz {
                let i = base
                    .last_index(|s| matches!(s, Step::SpecPulse { .. }))
                    .ok_or_else(|| Error::Sequence("detuning override needs a spec_pulse step".into()))?;
                if let Step::SpecPulse { detuning_mhz, .. } = &mut base.steps[i] {
                    *detuning_mhz = d;
                }
            }
            if let Some(pw) = series.p854_uw {
                let i = base
                    .last_index(|s| matches!(s, Step::Quench { .. }))
                    .ok_or_else(|| Error::Sequence("854 nm power override needs a quench step".into()))?;
                if let Step::Quench { p854_uw, .. } = &mut base.steps[i] {
                    *p854_uw = pw;
                }
            }
            for v in series.values()? {
                let (s, beta) = self.apply(&base, scan.variable, v)?;
                let outcomes = self.run_point(&s, beta, shots, seed, index)?;
                points.push(RecordPoint::from_shots(series.name.clone(), v, outcomes)?);
                index += 1;
            }
        }
        Ok(ExperimentRecord { variable: scan.variable.label().into(), seed, config_hash: String::new(), points })
    }

    fn apply(&self, seq: &PulseSequence, var: ScanVariable, v: f64) -> Result<(PulseSequence, f64)> {
        let mut s = seq.clone();
        let mut beta = self.params.micromotion.beta(0.0);
        let missing = |what: &str| Error::Sequence(format!("scan over {} needs a {what} step", var.label()));
        match var {
            ScanVariable::DetuningMhz | ScanVariable::PulseUs => {
                let i = s.last_index(|x| matches!(x, Step::SpecPulse { .. })).ok_or_else(|| missing("spec_pulse"))?;
                if let Step::SpecPulse { detuning_mhz, duration_us, .. } = &mut s.steps[i] {
                    if var == ScanVariable::DetuningMhz {
                        *detuning_mhz = v;
                    } else {
                        *duration_us = v;
                    }
                }
            }
            ScanVariable::WaitMs => {
                let i = s.last_index(|x| matches!(x, Step::Wait { .. })).ok_or_else(|| missing("wait"))?;
                s.steps[i] = Step::Wait { duration_ms: v };
            }
            ScanVariable::QuenchUs => {
                let i = s.last_index(|x| matches!(x, Step::Quench { .. })).ok_or_else(|| missing("quench"))?;
                if let Step::Quench { duration_us, .. } = &mut s.steps[i] {
                    *duration_us = v;
                }
            }
            ScanVariable::VoltageV => beta = self.params.micromotion.beta(v),
        }
        s.validate()?;
        Ok((s, beta))
    }

    pub fn run_experiment(&self, exp: &Experiment, seed: u64) -> Result<ExperimentRecord> {
        let seq = exp.sequence()?;
        match &exp.scan {
            Some(scan) => self.scan(&seq, scan, exp.shots, seed),
            None => self.run_sequence(&seq, exp.shots, seed),
        }
    }
}

/// π-time of a carrier pulse at Rabi frequency `rabi_khz`, in µs.
pub fn pi_time_us(rabi_khz: f64) -> f64 {
    PI / angular(rabi_khz * 1e3) * 1e6
}

#[cfg(test)]
mod tests {
    use super::*;

    fn engine() -> Engine {
        Engine::new(EngineParams::default()).unwrap()
    }

    fn doppler_probe(detuning_mhz: f64, duration_us: f64, rabi_khz: f64) -> PulseSequence {
        PulseSequence::new(vec![
            Step::DopplerCool { duration_ms: 2.0 },
            Step::OpticalPump { duration_us: 5.0 },
            Step::SpecPulse { detuning_mhz, duration_us, rabi_khz },
        ])
        .unwrap()
    }

    #[test]
    fn sequence_validation() {
        let bad = PulseSequence::new(vec![Step::Detect { duration_ms: 5.0 }, Step::Wait { duration_ms: 1.0 }]);
        assert!(matches!(bad, Err(Error::Sequence(_))));
        assert!(PulseSequence::new(vec![Step::Wait { duration_ms: -1.0 }]).is_err());
        assert!(PulseSequence::new(vec![Step::DopplerCool { duration_ms: 0.5 }]).is_err());
        assert!(
            PulseSequence::new(vec![Step::SidebandCool { duration_ms: 1.0, p854_uw: 0.0, rabi_khz: 100.0 }]).is_err()
        );
        assert!(PulseSequence::new(vec![Step::Wait { duration_ms: 1.0 }, Step::Detect { duration_ms: 5.0 }]).is_ok());
    }

    #[test]
    fn steps_parse_from_toml() {
        let exp: Experiment = toml::from_str(
            r#"
            shots = 10
            [[step]]
            kind = "doppler_cool"
            duration_ms = 2
            [[step]]
            kind = "spec_pulse"
            detuning_mhz = 0.0
            duration_us = 2.5
            rabi_khz = 200
            [scan]
            variable = "detuning_mhz"
            [[scan.series]]
            start = -1
            stop = 1
            points = 3
            "#,
        )
        .unwrap();
        assert_eq!(exp.steps.len(), 2);
        assert_eq!(exp.scan.unwrap().series[0].values().unwrap(), vec![-1.0, 0.0, 1.0]);
        let typo = toml::from_str::<Experiment>("shots = 1\n[[step]]\nkind = \"wait\"\nduration_s = 1\n");
        assert!(typo.is_err());
    }

    #[test]
    fn beta_zero_leaves_micromotion_lines_dark() {
        let p = EngineParams::default();
        for l in p.lines(1e6, 12, 6, 0.0) {
            if l.micromotion != 0 {
                assert_eq!(l.rabi, 0.0);
            }
        }
        let lit = p.lines(1e6, 12, 6, 0.3);
        assert!(lit.iter().any(|l| l.micromotion == 1 && l.rabi > 0.0));
    }

    #[test]
    fn ground_state_carrier_pi_pulse() {
        let mut p = EngineParams::default();
        p.doppler.nbar_floor = 0.0;
        p.doppler.excess = 1.0;
        p.omega_ax = angular(1e12);
        p.omega_rad = angular(1e12);
        let e = Engine::new(p).unwrap();
        let rec = e.run_sequence(&doppler_probe(0.0, pi_time_us(200.0), 200.0), 200, 1).unwrap();
        assert!(rec.points[0].p > 0.99);
    }

    #[test]
    fn deterministic_and_schedule_independent() {
        let seq = doppler_probe(1.1, 20.0, 50.0);
        let scan = ScanSpec { variable: ScanVariable::DetuningMhz, series: vec![SeriesSpec::range("", -1.2, 1.2, 5)] };
        let a = engine().scan(&seq, &scan, 50, 9).unwrap();
        let b = engine().scan(&seq, &scan, 50, 9).unwrap();
        let c = engine().with_schedule(Schedule::Serial).scan(&seq, &scan, 50, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        let d = engine().scan(&seq, &scan, 50, 10).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn doppler_cooled_sidebands_are_balanced() {
        let seq = doppler_probe(0.0, 30.0, 40.0);
        let scan = ScanSpec {
            variable: ScanVariable::DetuningMhz,
            series: vec![
                SeriesSpec { name: "red".into(), values: Some(vec![-1.1]), ..Default::default() },
                SeriesSpec { name: "blue".into(), values: Some(vec![1.1]), ..Default::default() },
            ],
        };
        let rec = engine().scan(&seq, &scan, 2000, 4).unwrap();
        let (r, b) = (&rec.points[0], &rec.points[1]);
        assert!(b.p > 0.1);
        // n̄/(n̄+1) = 12/13 in the weak limit.
        assert!((r.p / b.p - 1.0).abs() < 0.2, "{} {}", r.p, b.p);
    }
}
