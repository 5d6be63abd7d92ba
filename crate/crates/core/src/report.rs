//! Trap characterisation from solved fields and comparison against reference
//! values.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::constants::hertz;
use crate::error::{invalid, Error, Result};
use crate::field::{
    axial_curve, axial_frequency, quadrupole_c2, quadrupole_window_um, AxialCurve, FieldSet, PotentialField,
};
use crate::geometry::{TrapGeometry, Zone};
use crate::rf::{pseudopotential, secular_frequency, stability_q, IonSpecies, PseudoMap, RfDrive, SecularFrequency};

/// Voltage of the single-pair axial well.
pub const SINGLE_PAIR_VOLTAGE: f64 = -5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneSummary {
    pub zone: Zone,
    pub pair: usize,
    /// m⁻² per volt.
    pub c2: f64,
    pub c2_residual: f64,
    pub q: f64,
    pub secular: SecularFrequency,
    /// Pseudopotential curvature frequencies, rad/s, ascending.
    pub harmonic: Option<[f64; 2]>,
    pub depth_ev: f64,
    /// Axial frequency with the pair at −5 V, rad/s.
    pub omega_ax: f64,
    pub fwhm_um: f64,
    pub grid_nodes: usize,
    pub pseudo: PseudoMap,
    /// On-axis potential of the pair at −5 V.
    pub axial: AxialCurve,
}

/// Middle pair of the storage and processing zones.
pub fn zone_pairs(geometry: &TrapGeometry) -> Vec<(Zone, usize)> {
    [Zone::Storage, Zone::Processing]
        .into_iter()
        .filter_map(|z| {
            let segs: Vec<usize> = geometry.zone_segments(z).map(|s| s.index).collect();
            segs.get(segs.len() / 2).map(|&p| (z, p))
        })
        .collect()
}

/// RF and single-pair DC figures of one segment.
pub fn characterize(set: &FieldSet, pair: usize, drive: &RfDrive, ion: &IonSpecies) -> Result<ZoneSummary> {
    let g = set.geometry;
    let seg = *g.segments.get(pair).ok_or_else(|| invalid(format!("no segment pair {pair}")))?;
    let rf = set.rf(pair)?;
    let qf = quadrupole_c2(&rf, [seg.center_um, 0.0, 0.0], quadrupole_window_um(seg.slit_um, &rf))?;
    let q = stability_q(qf.c2, drive, ion)?;
    let secular = secular_frequency(q, drive)?;
    let map = pseudopotential(&rf, g, drive, ion, seg.center_um)?;
    let harmonic = map.harmonic_frequencies(ion).ok();
    let (sum, _) = set.dc_pair(pair)?;
    let curve = single_pair_curve(&sum, SINGLE_PAIR_VOLTAGE)?;
    let fit = axial_frequency(&curve, ion)?;
    Ok(ZoneSummary {
        zone: seg.zone,
        pair,
        c2: qf.c2,
        c2_residual: qf.relative_residual,
        q,
        secular,
        harmonic,
        depth_ev: map.depth_ev,
        omega_ax: fit.omega,
        fwhm_um: curve.fwhm_um()?,
        grid_nodes: rf.grid.len(),
        pseudo: map,
        axial: curve,
    })
}

/// On-axis potential of a pair field at `volts` over its whole window.
pub fn single_pair_curve(pair_field: &PotentialField, volts: f64) -> Result<AxialCurve> {
    let g = &pair_field.grid;
    let xs: Vec<f64> = (0..g.dims[0]).map(|i| g.coord(0, i)).collect();
    axial_curve(&[(pair_field, volts)], &xs, format!("{} at {volts} V", pair_field.label))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ToleranceProfile {
    /// Tolerances as given with the reference values.
    #[default]
    Reference,
    /// Half of them.
    Strict,
    /// Twice them.
    Loose,
}

impl ToleranceProfile {
    pub fn factor(self) -> f64 {
        match self {
            ToleranceProfile::Reference => 1.0,
            ToleranceProfile::Strict => 0.5,
            ToleranceProfile::Loose => 2.0,
        }
    }
}

impl FromStr for ToleranceProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(Self::Reference),
            "strict" => Ok(Self::Strict),
            "loose" => Ok(Self::Loose),
            _ => Err(invalid(format!("unknown tolerance profile {s:?} (reference, strict, loose)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportLine {
    pub quantity: &'static str,
    pub zone: Zone,
    pub unit: &'static str,
    pub computed: f64,
    pub reference: f64,
    /// Allowed absolute deviation.
    pub tolerance: f64,
}

impl ReportLine {
    pub fn pass(&self) -> bool {
        (self.computed - self.reference).abs() <= self.tolerance
    }
}

/// Reference values with their absolute tolerance at the `Reference` profile.
fn references(zone: Zone) -> &'static [(&'static str, &'static str, f64, f64)] {
    match zone {
        Zone::Storage => &[
            ("c2", "1e7/m^2", 0.52, 0.104),
            ("q", "", 0.14, 0.02),
            ("omega_secular", "MHz", 1.26, 0.063),
            ("depth", "eV", 0.755, 0.113),
            ("omega_ax_-5V", "MHz", 1.20, 0.12),
            ("fwhm_-5V", "um", 500.0, 75.0),
        ],
        Zone::Processing => &[("c2", "1e7/m^2", 1.99, 0.398), ("q", "", 0.55, 0.06), ("fwhm_-5V", "um", 264.0, 39.6)],
        Zone::Transfer => &[],
    }
}

pub fn compare(summary: &ZoneSummary, profile: ToleranceProfile) -> Vec<ReportLine> {
    references(summary.zone)
        .iter()
        .map(|&(quantity, unit, reference, tol)| {
            let computed = match quantity {
                "c2" => summary.c2 / 1e7,
                "q" => summary.q,
                "omega_secular" => hertz(summary.secular.lowest_order) / 1e6,
                "depth" => summary.depth_ev,
                "omega_ax_-5V" => hertz(summary.omega_ax) / 1e6,
                "fwhm_-5V" => summary.fwhm_um,
                _ => unreachable!("reference table names a known quantity"),
            };
            ReportLine { quantity, zone: summary.zone, unit, computed, reference, tolerance: tol * profile.factor() }
        })
        .collect()
}

/// Plain-text report: one summary block per zone, then the comparison table.
pub fn format_report(summaries: &[ZoneSummary], lines: &[ReportLine], header: &str) -> String {
    let mut s = String::new();
    for l in header.lines() {
        let _ = writeln!(s, "# {l}");
    }
    for z in summaries {
        let _ = writeln!(s, "\n[{} pair {}]", z.zone, z.pair);
        let _ = writeln!(s, "c2_per_m2 = {:.4e}", z.c2);
        let _ = writeln!(s, "c2_fit_residual = {:.3e}", z.c2_residual);
        let _ = writeln!(s, "q = {:.4}", z.q);
        let _ = writeln!(s, "omega_secular_mhz = {:.4}", hertz(z.secular.lowest_order) / 1e6);
        match z.secular.floquet {
            Some(f) => {
                let _ = writeln!(s, "omega_floquet_mhz = {:.4}", hertz(f) / 1e6);
            }
            None => {
                let _ = writeln!(s, "omega_floquet_mhz = \"unstable\"");
            }
        }
        if let Some(h) = z.harmonic {
            let _ = writeln!(s, "omega_pseudo_mhz = [{:.4}, {:.4}]", hertz(h[0]) / 1e6, hertz(h[1]) / 1e6);
        }
        let _ = writeln!(s, "depth_ev = {:.4}", z.depth_ev);
        let _ = writeln!(s, "omega_ax_minus5v_mhz = {:.4}", hertz(z.omega_ax) / 1e6);
        let _ = writeln!(s, "fwhm_minus5v_um = {:.1}", z.fwhm_um);
    }
    let _ = writeln!(s, "\n# quantity zone computed reference tolerance unit result");
    for l in lines {
        let _ = writeln!(
            s,
            "# {:<14} {:<10} {:>10.4} {:>10.4} {:>9.4} {:<8} {}",
            l.quantity,
            l.zone,
            l.computed,
            l.reference,
            l.tolerance,
            l.unit,
            if l.pass() { "PASS" } else { "FAIL" }
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_trap, TrapSpec};
    use crate::rf::SecularFrequency;

    #[test]
    fn profiles_scale_tolerances() {
        let z = ZoneSummary {
            zone: Zone::Storage,
            pair: 4,
            c2: 0.6e7,
            c2_residual: 0.0,
            q: 0.15,
            secular: SecularFrequency {
                lowest_order: crate::constants::angular(1.3e6),
                floquet: None,
                stability_warning: false,
            },
            harmonic: None,
            depth_ev: 0.7,
            omega_ax: crate::constants::angular(1.25e6),
            fwhm_um: 480.0,
            grid_nodes: 0,
            pseudo: PseudoMap {
                x_um: 0.0,
                y_um: vec![],
                z_um: vec![],
                values_ev: vec![],
                offset_ev: 0.0,
                minimum_um: [0.0; 2],
                saddle_um: [0.0; 2],
                depth_ev: 0.7,
            },
            axial: AxialCurve::new(vec![0.0, 1.0, 2.0], vec![0.0; 3], "").unwrap(),
        };
        let reference = compare(&z, ToleranceProfile::Reference);
        assert!(reference.iter().all(|l| l.pass()), "{reference:?}");
        let strict = compare(&z, ToleranceProfile::Strict);
        assert!(strict.iter().any(|l| !l.pass()));
        assert_eq!("loose".parse::<ToleranceProfile>().unwrap(), ToleranceProfile::Loose);
        assert!("tight".parse::<ToleranceProfile>().is_err());
    }

    #[test]
    fn zone_pairs_pick_middles() {
        let g = build_trap(&TrapSpec::default()).unwrap();
        assert_eq!(zone_pairs(&g), vec![(Zone::Storage, 4), (Zone::Processing, 21)]);
    }
}
