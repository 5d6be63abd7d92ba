//! Run configuration: one TOML file naming the trap, grid, drive, lasers,
//! sequence and outputs. Every key carries its unit as a suffix.
//!
//! ```toml
//! seed = 7
//! sequence_file = "spectrum.toml"
//!
//! [grid]
//! spacing_um = 12.5
//!
//! [motion]
//! axial_mhz = 1.2
//! radial_mhz = 2.0
//! ```
//!
//! Relative paths resolve against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::atomic::{BeamGeometry, BeamRole, RabiModel};
use crate::constants::angular;
use crate::error::{invalid, Error, Result};
use crate::field::{FieldCache, SolveOptions};
use crate::geometry::{build_trap, TrapGeometry, TrapSpec};
use crate::rf::{IonSpecies, RfDrive};
use crate::sequence::{
    DetectionParams, DopplerParams, EngineParams, Experiment, MicromotionModel, DEFAULT_DOPPLER_EXCESS,
    QUENCH_SLOPE_HZ_PER_UW,
};
use crate::waveform::{Bounds, ShuttleRequest, SynthesisOptions, RIDGE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub spacing_um: f64,
    /// Relative residual at which the Laplace solve stops.
    pub tolerance: f64,
    pub max_cycles: usize,
    /// Sample step of the axial basis curves used for voltage synthesis.
    pub basis_step_um: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        let o = SolveOptions::default();
        Self { spacing_um: 12.5, tolerance: o.tolerance, max_cycles: o.max_cycles, basis_step_um: 2.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveConfig {
    pub frequency_mhz: f64,
    pub amplitude_v: f64,
}

impl Default for DriveConfig {
    fn default() -> Self {
        Self { frequency_mhz: 24.841, amplitude_v: 140.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IonConfig {
    pub mass_u: f64,
    pub charge: u32,
}

impl Default for IonConfig {
    fn default() -> Self {
        let i = IonSpecies::default();
        Self { mass_u: i.mass_u, charge: i.charge }
    }
}

/// The 729 nm spectroscopy beam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamConfig {
    pub wavelength_nm: f64,
    /// Angle against the trap axis in the xy plane.
    pub angle_deg: f64,
    /// FWHM of the shot-to-shot frequency jitter.
    pub linewidth_khz: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self { wavelength_nm: 729.0, angle_deg: 45.0, linewidth_khz: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    pub axial_mhz: f64,
    pub radial_mhz: f64,
    pub rabi_model: RabiModel,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self { axial_mhz: 1.2, radial_mhz: 2.0, rabi_model: RabiModel::Linearized }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoolingConfig {
    pub p_linewidth_mhz: f64,
    /// Factor on the ideal Doppler limit.
    pub doppler_excess: f64,
    pub recoil_wavelength_nm: f64,
    pub heating_rate_per_ms: f64,
    pub quench_slope_khz_per_uw: f64,
}

impl Default for CoolingConfig {
    fn default() -> Self {
        Self {
            p_linewidth_mhz: 22.3,
            doppler_excess: DEFAULT_DOPPLER_EXCESS,
            recoil_wavelength_nm: 393.0,
            heating_rate_per_ms: 2.1,
            quench_slope_khz_per_uw: QUENCH_SLOPE_HZ_PER_UW / 1e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub bright_rate_khz: f64,
    pub background_rate_khz: f64,
    pub d_lifetime_s: f64,
    pub threshold: Option<u64>,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        let d = DetectionParams::default();
        Self {
            bright_rate_khz: d.bright_rate_hz / 1e3,
            background_rate_khz: d.background_rate_hz / 1e3,
            d_lifetime_s: d.d_lifetime_s,
            threshold: d.threshold,
        }
    }
}

/// `β(V) = |beta0 + dbeta_per_v · V|` for compensation-voltage scans.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MicromotionConfig {
    pub beta0: f64,
    pub dbeta_per_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveformConfig {
    pub start_pair: usize,
    pub end_pair: usize,
    pub duration_us: f64,
    pub samples: usize,
    pub axial_mhz: f64,
    pub min_v: f64,
    pub max_v: f64,
    pub ridge: f64,
    pub max_step_v: Option<f64>,
}

impl Default for WaveformConfig {
    fn default() -> Self {
        let b = Bounds::default();
        Self {
            start_pair: 4,
            end_pair: 4,
            duration_us: 100.0,
            samples: 101,
            axial_mhz: 1.2,
            min_v: b.min_v,
            max_v: b.max_v,
            ridge: RIDGE,
            max_step_v: None,
        }
    }
}

impl WaveformConfig {
    pub fn synthesis(&self) -> SynthesisOptions {
        SynthesisOptions { bounds: Bounds { min_v: self.min_v, max_v: self.max_v }, ridge: self.ridge }
    }

    pub fn request(&self) -> ShuttleRequest {
        ShuttleRequest {
            start_pair: self.start_pair,
            end_pair: self.end_pair,
            duration_us: self.duration_us,
            samples: self.samples,
            omega: angular(self.axial_mhz * 1e6),
            synthesis: self.synthesis(),
            max_step_v: self.max_step_v,
        }
    }
}

/// Micromotion nulling at one segment under an imposed stray field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompensationConfig {
    pub pair: usize,
    /// Transverse `(E_y, E_z)` stray field at the RF null.
    pub stray_field_v_per_m: [f64; 2],
    /// Pair voltage the differential rides on.
    pub base_v: f64,
    /// Sweep of the differential voltage around the optimum: half span, points.
    pub sweep_half_span_v: f64,
    pub sweep_points: usize,
}

impl Default for CompensationConfig {
    fn default() -> Self {
        Self { pair: 4, stray_field_v_per_m: [0.0, 0.0], base_v: -5.0, sweep_half_span_v: 0.5, sweep_points: 41 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    /// Geometry file written by `TrapGeometry::save`; exclusive with `[trap]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trap_file: Option<PathBuf>,
    /// Experiment file; exclusive with `[experiment]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence_file: Option<PathBuf>,
    #[serde(default)]
    pub trap: TrapSpec,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub drive: DriveConfig,
    #[serde(default)]
    pub ion: IonConfig,
    #[serde(default)]
    pub beam: BeamConfig,
    #[serde(default)]
    pub motion: MotionConfig,
    #[serde(default)]
    pub cooling: CoolingConfig,
    #[serde(default)]
    pub detection: DetectionConfig,
    #[serde(default)]
    pub micromotion: MicromotionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waveform: Option<WaveformConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compensation: Option<CompensationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
}

impl RunConfig {
    /// Parses `text`; `origin` names the file in diagnostics and anchors
    /// relative paths. Referenced files are read and folded in.
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let parse_err = |message: String| Error::Parse { path: origin.to_path_buf(), message };
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        let base = origin.parent().unwrap_or(Path::new(""));
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        if let Some(p) = cfg.trap_file.take() {
            if text_has_table(text, "trap") {
                return Err(parse_err("trap_file and [trap] are mutually exclusive".into()));
            }
            let path = resolve(&p);
            if !path.is_file() {
                return Err(parse_err(format!("trap_file {} does not exist", path.display())));
            }
            cfg.trap = TrapGeometry::load(&path)?.spec;
        }
        if let Some(p) = cfg.sequence_file.take() {
            if cfg.experiment.is_some() {
                return Err(parse_err("sequence_file and [experiment] are mutually exclusive".into()));
            }
            let path = resolve(&p);
            let seq = std::fs::read_to_string(&path)
                .map_err(|e| parse_err(format!("sequence_file {}: {e}", path.display())))?;
            let exp: Experiment =
                toml::from_str(&seq).map_err(|e| Error::Parse { path: path.clone(), message: e.to_string() })?;
            cfg.experiment = Some(exp);
        }
        cfg.output_dir = cfg.output_dir.map(|p| resolve(&p));
        cfg.cache_dir = cfg.cache_dir.map(|p| resolve(&p));
        cfg.validate().map_err(|e| parse_err(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        Self::from_toml(&text, path)
    }

    /// Checks units and ranges of every section.
    pub fn validate(&self) -> Result<()> {
        self.trap.validate()?;
        let g = &self.grid;
        if !(g.spacing_um > 0.0 && g.basis_step_um > 0.0 && g.tolerance > 0.0 && g.max_cycles > 0) {
            return Err(invalid("[grid] needs positive spacing_um, basis_step_um, tolerance and max_cycles"));
        }
        self.drive().validate()?;
        self.engine_params()?.validate()?;
        if let Some(exp) = &self.experiment {
            exp.sequence()?;
            if exp.shots == 0 {
                return Err(invalid("[experiment] needs at least one shot"));
            }
        }
        if let Some(w) = &self.waveform {
            w.synthesis().validate()?;
            let n = self.trap.total_pairs();
            if w.start_pair >= n || w.end_pair >= n {
                return Err(invalid(format!("[waveform] pairs must lie in 0..{n}")));
            }
            if !(w.duration_us > 0.0 && w.samples >= 2 && w.axial_mhz > 0.0) {
                return Err(invalid("[waveform] needs duration_us > 0, samples ≥ 2 and axial_mhz > 0"));
            }
        }
        if let Some(c) = &self.compensation {
            if c.pair >= self.trap.total_pairs() || c.sweep_points < 3 || !(c.sweep_half_span_v > 0.0) {
                return Err(invalid("[compensation] needs a valid pair, sweep_points ≥ 3 and a positive sweep span"));
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<TrapGeometry> {
        build_trap(&self.trap)
    }

    pub fn drive(&self) -> RfDrive {
        RfDrive { omega: angular(self.drive.frequency_mhz * 1e6), amplitude_v: self.drive.amplitude_v }
    }

    pub fn ion(&self) -> IonSpecies {
        IonSpecies { mass_u: self.ion.mass_u, charge: self.ion.charge }
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions { tolerance: self.grid.tolerance, max_cycles: self.grid.max_cycles, ..SolveOptions::default() }
    }

    pub fn cache(&self) -> Option<FieldCache> {
        self.cache_dir.as_ref().map(FieldCache::new)
    }

    pub fn beam(&self) -> Result<BeamGeometry> {
        BeamGeometry::new(self.beam.wavelength_nm * 1e-9, self.beam.angle_deg, BeamRole::Spectroscopy)
    }

    pub fn engine_params(&self) -> Result<EngineParams> {
        let c = &self.cooling;
        let d = &self.detection;
        let p = EngineParams {
            ion: self.ion(),
            omega_ax: angular(self.motion.axial_mhz * 1e6),
            omega_rad: angular(self.motion.radial_mhz * 1e6),
            omega_rf: angular(self.drive.frequency_mhz * 1e6),
            beam: self.beam()?,
            recoil_wavelength_m: c.recoil_wavelength_nm * 1e-9,
            rabi_model: self.motion.rabi_model,
            doppler: DopplerParams {
                gamma_p: angular(c.p_linewidth_mhz * 1e6),
                excess: c.doppler_excess,
                nbar_floor: 0.0,
            },
            heating_rate: c.heating_rate_per_ms * 1e3,
            quench_slope_hz_per_uw: c.quench_slope_khz_per_uw * 1e3,
            laser_linewidth_hz: self.beam.linewidth_khz * 1e3,
            micromotion: MicromotionModel { beta0: self.micromotion.beta0, dbeta_dv: self.micromotion.dbeta_per_v },
            detection: DetectionParams {
                bright_rate_hz: d.bright_rate_khz * 1e3,
                background_rate_hz: d.background_rate_khz * 1e3,
                d_lifetime_s: d.d_lifetime_s,
                threshold: d.threshold,
            },
        };
        p.validate()?;
        Ok(p)
    }

    pub fn experiment(&self) -> Result<&Experiment> {
        self.experiment.as_ref().ok_or_else(|| invalid("config has neither sequence_file nor [experiment]"))
    }

    /// SHA-256 over the resolved configuration with the seed and output
    /// locations blanked, so it identifies the physics of a run.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        c.output_dir = None;
        c.cache_dir = None;
        let text = toml::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

fn text_has_table(text: &str, name: &str) -> bool {
    let header = format!("[{name}]");
    text.lines().any(|l| l.trim() == header)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_hash_ignores_seed() {
        let a = RunConfig::from_toml("seed = 1\n", Path::new("a.toml")).unwrap();
        let b = RunConfig::from_toml("seed = 2\n[grid]\nspacing_um = 12.5\n", Path::new("b.toml")).unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        let c = RunConfig::from_toml("[grid]\nspacing_um = 25\n", Path::new("c.toml")).unwrap();
        assert_ne!(a.config_hash(), c.config_hash());
        let p = a.engine_params().unwrap();
        assert!((p.heating_rate - 2100.0).abs() < 1e-9);
        assert!((p.detection.bright_rate_hz - 16e3).abs() < 1e-9);
    }

    #[test]
    fn parse_errors_carry_position_and_key() {
        let e = RunConfig::from_toml("[grid]\nspacing_um = \"fine\"\n", Path::new("x.toml")).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("x.toml") && msg.contains("line 2"), "{msg}");
        let e = RunConfig::from_toml("[motion]\naxial_hz = 1e6\n", Path::new("x.toml")).unwrap_err();
        assert!(e.to_string().contains("axial_hz"), "{e}");
    }

    #[test]
    fn invalid_units_rejected() {
        for text in ["[motion]\naxial_mhz = -1\n", "[grid]\nspacing_um = 0\n", "[beam]\nangle_deg = 120\n"] {
            assert!(RunConfig::from_toml(text, Path::new("x.toml")).is_err(), "{text}");
        }
    }

    #[test]
    fn missing_sequence_file_is_reported() {
        let e = RunConfig::from_toml("sequence_file = \"nope.toml\"\n", Path::new("/tmp/x.toml")).unwrap_err();
        assert!(e.to_string().contains("nope.toml"), "{e}");
    }

    #[test]
    fn inline_experiment() {
        let text = r#"
[experiment]
shots = 10

[[experiment.step]]
kind = "doppler_cool"
duration_ms = 1

[[experiment.step]]
kind = "detect"
duration_ms = 5
"#;
        let c = RunConfig::from_toml(text, Path::new("x.toml")).unwrap();
        assert_eq!(c.experiment().unwrap().steps.len(), 2);
        assert!(!c.config_hash().is_empty());
    }
}
