//! Parametric electrode layout of the two-layer segmented trap.
//!
//! Coordinates are in micrometres. `x` runs along the trap axis and starts at
//! the outer edge of the first storage segment, `y` spans the slit and `z` is
//! normal to the wafers. The two electrode layers sit at `|z| >= s/2` where `s`
//! is the layer separation. In the top layer the DC fingers occupy `y > 0` and
//! the RF electrode `y < 0`; the bottom layer is the 180° rotation of the top
//! layer about the `x` axis, so every electrode has a partner under
//! `(x, y, z) -> (x, -y, -z)`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};

/// Dimensions of the trap. All lengths in µm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrapSpec {
    pub storage_slit_h_um: f64,
    pub processing_slit_g_um: f64,
    pub storage_seg_width_d_um: f64,
    pub processing_seg_width_w_um: f64,
    pub inter_electrode_gap_um: f64,
    pub finger_length_um: f64,
    pub rf_notch_length_um: f64,
    pub n_storage: usize,
    pub n_transfer: usize,
    pub n_processing: usize,
    /// Vertical gap between the inner faces of the two electrode layers.
    pub layer_separation_um: f64,
    /// Thickness of each electrode layer.
    pub wafer_thickness_um: f64,
}

impl Default for TrapSpec {
    fn default() -> Self {
        Self {
            storage_slit_h_um: 500.0,
            processing_slit_g_um: 250.0,
            storage_seg_width_d_um: 250.0,
            processing_seg_width_w_um: 100.0,
            inter_electrode_gap_um: 30.0,
            finger_length_um: 200.0,
            rf_notch_length_um: 60.0,
            n_storage: 9,
            n_transfer: 3,
            n_processing: 19,
            // Slit-to-gap aspect of 4:1 (storage) and 2:1 (processing).
            layer_separation_um: 125.0,
            wafer_thickness_um: 125.0,
        }
    }
}

impl TrapSpec {
    pub fn total_pairs(&self) -> usize {
        self.n_storage + self.n_transfer + self.n_processing
    }

    pub fn validate(&self) -> Result<()> {
        let lengths = [
            ("storage_slit_h_um", self.storage_slit_h_um),
            ("processing_slit_g_um", self.processing_slit_g_um),
            ("storage_seg_width_d_um", self.storage_seg_width_d_um),
            ("processing_seg_width_w_um", self.processing_seg_width_w_um),
            ("inter_electrode_gap_um", self.inter_electrode_gap_um),
            ("finger_length_um", self.finger_length_um),
            ("rf_notch_length_um", self.rf_notch_length_um),
            ("layer_separation_um", self.layer_separation_um),
            ("wafer_thickness_um", self.wafer_thickness_um),
        ];
        for (name, v) in lengths {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be a positive length, got {v}")));
            }
        }
        if self.total_pairs() == 0 {
            return Err(invalid("trap needs at least one segment pair"));
        }
        if self.processing_slit_g_um > self.storage_slit_h_um {
            return Err(invalid("processing slit must not be wider than the storage slit"));
        }
        if self.rf_notch_length_um >= self.finger_length_um {
            return Err(invalid("RF notch must be shorter than the finger length"));
        }
        Ok(())
    }

    /// Stable content hash used to key field caches.
    pub fn hash_hex(&self) -> String {
        let text = toml::to_string(self).expect("spec serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Zone {
    Storage,
    Transfer,
    Processing,
}

impl Zone {
    pub fn label(self) -> &'static str {
        match self {
            Zone::Storage => "storage",
            Zone::Transfer => "transfer",
            Zone::Processing => "processing",
        }
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ElectrodeKind {
    Rf,
    Dc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Top,
    Bottom,
}

impl Side {
    pub fn partner(self) -> Side {
        match self {
            Side::Top => Side::Bottom,
            Side::Bottom => Side::Top,
        }
    }
}

/// Identifies one electrode. RF electrodes always carry pair index 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ElectrodeId {
    pub kind: ElectrodeKind,
    pub pair: usize,
    pub side: Side,
}

impl ElectrodeId {
    pub fn rf(side: Side) -> Self {
        Self { kind: ElectrodeKind::Rf, pair: 0, side }
    }

    pub fn dc(pair: usize, side: Side) -> Self {
        Self { kind: ElectrodeKind::Dc, pair, side }
    }

    /// The electrode this one maps onto under the 180° rotation about the axis.
    pub fn partner(self) -> Self {
        Self { side: self.side.partner(), ..self }
    }
}

impl fmt::Display for ElectrodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.side {
            Side::Top => 't',
            Side::Bottom => 'b',
        };
        match self.kind {
            ElectrodeKind::Rf => write!(f, "rf-{s}"),
            ElectrodeKind::Dc => write!(f, "dc{:02}{s}", self.pair),
        }
    }
}

impl std::str::FromStr for ElectrodeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let side = match s.chars().last() {
            Some('t') => Side::Top,
            Some('b') => Side::Bottom,
            _ => return Err(invalid(format!("bad electrode id {s:?}"))),
        };
        if s.len() == 4 && s.starts_with("rf-") {
            return Ok(Self::rf(side));
        }
        if let Some(num) = s.strip_prefix("dc").map(|r| &r[..r.len() - 1]) {
            let pair = num.parse().map_err(|_| invalid(format!("bad electrode id {s:?}")))?;
            return Ok(Self::dc(pair, side));
        }
        Err(invalid(format!("bad electrode id {s:?}")))
    }
}

/// Axis-aligned box, µm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        debug_assert!((0..3).all(|a| min[a] <= max[a]));
        Self { min, max }
    }

    /// Inclusive containment with a small tolerance so grid nodes on faces count.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        const TOL: f64 = 1e-9;
        (0..3).all(|a| p[a] >= self.min[a] - TOL && p[a] <= self.max[a] + TOL)
    }

    /// True when the interiors intersect (shared faces do not count).
    pub fn overlaps(&self, other: &Aabb) -> bool {
        const TOL: f64 = 1e-9;
        (0..3).all(|a| self.min[a] < other.max[a] - TOL && other.min[a] < self.max[a] - TOL)
    }

    /// Image under `(x, y, z) -> (x, -y, -z)`.
    pub fn rotated_about_axis(&self) -> Aabb {
        Aabb { min: [self.min[0], -self.max[1], -self.max[2]], max: [self.max[0], -self.min[1], -self.min[2]] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Electrode {
    pub id: ElectrodeId,
    pub extent: Vec<Aabb>,
}

impl Electrode {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.extent.iter().any(|b| b.contains(p))
    }
}

/// One DC segment pair along the axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub index: usize,
    pub zone: Zone,
    pub center_um: f64,
    pub width_um: f64,
    pub slit_um: f64,
}

impl Segment {
    pub fn start(&self) -> f64 {
        self.center_um - 0.5 * self.width_um
    }

    pub fn end(&self) -> f64 {
        self.center_um + 0.5 * self.width_um
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrapGeometry {
    pub spec: TrapSpec,
    pub segments: Vec<Segment>,
    pub electrodes: Vec<Electrode>,
}

/// Builds the electrode layout for `spec`.
pub fn build_trap(spec: &TrapSpec) -> Result<TrapGeometry> {
    spec.validate()?;
    let gap = spec.inter_electrode_gap_um;
    let mut segments = Vec::with_capacity(spec.total_pairs());
    let mut cursor = 0.0;
    for index in 0..spec.total_pairs() {
        let (zone, width, slit) = if index < spec.n_storage {
            (Zone::Storage, spec.storage_seg_width_d_um, spec.storage_slit_h_um)
        } else if index < spec.n_storage + spec.n_transfer {
            // Stepwise linear taper from the storage to the processing slit.
            let k = (index - spec.n_storage + 1) as f64;
            let frac = k / (spec.n_transfer + 1) as f64;
            let slit = spec.storage_slit_h_um + (spec.processing_slit_g_um - spec.storage_slit_h_um) * frac;
            (Zone::Transfer, spec.storage_seg_width_d_um, slit)
        } else {
            (Zone::Processing, spec.processing_seg_width_w_um, spec.processing_slit_g_um)
        };
        if index > 0 {
            cursor += gap;
        }
        segments.push(Segment { index, zone, center_um: cursor + 0.5 * width, width_um: width, slit_um: slit });
        cursor += width;
    }

    let z_in = 0.5 * spec.layer_separation_um;
    let z_out = z_in + spec.wafer_thickness_um;
    let finger = spec.finger_length_um;
    let notch = spec.rf_notch_length_um;
    let total = cursor;

    let mut rf_top = Vec::new();
    let mut dc = Vec::new();
    for seg in &segments {
        let half = 0.5 * seg.slit_um;
        let top = Aabb::new([seg.start(), half, z_in], [seg.end(), half + finger, z_out]);
        dc.push(Electrode { id: ElectrodeId::dc(seg.index, Side::Top), extent: vec![top] });
        dc.push(Electrode { id: ElectrodeId::dc(seg.index, Side::Bottom), extent: vec![top.rotated_about_axis()] });
        // RF tooth facing the finger, then the spine behind the notches.
        rf_top.push(Aabb::new([seg.start(), -half - notch, z_in], [seg.end(), -half, z_out]));
        let x0 = (seg.start() - 0.5 * gap).max(0.0);
        let x1 = (seg.end() + 0.5 * gap).min(total);
        rf_top.push(Aabb::new([x0, -half - finger, z_in], [x1, -half - notch, z_out]));
    }
    let rf_bottom = rf_top.iter().map(Aabb::rotated_about_axis).collect();
    let mut electrodes = vec![
        Electrode { id: ElectrodeId::rf(Side::Top), extent: rf_top },
        Electrode { id: ElectrodeId::rf(Side::Bottom), extent: rf_bottom },
    ];
    electrodes.extend(dc);

    Ok(TrapGeometry { spec: spec.clone(), segments, electrodes })
}

impl TrapGeometry {
    /// Axial extent `[0, Σ widths + Σ gaps]`.
    pub fn axial_extent(&self) -> (f64, f64) {
        let last = self.segments.last().expect("at least one segment");
        (0.0, last.end())
    }

    pub fn layer_inner_z(&self) -> f64 {
        0.5 * self.spec.layer_separation_um
    }

    pub fn layer_outer_z(&self) -> f64 {
        self.layer_inner_z() + self.spec.wafer_thickness_um
    }

    pub fn electrode(&self, id: ElectrodeId) -> Option<&Electrode> {
        self.electrodes.iter().find(|e| e.id == id)
    }

    pub fn rf_ids(&self) -> [ElectrodeId; 2] {
        [ElectrodeId::rf(Side::Top), ElectrodeId::rf(Side::Bottom)]
    }

    pub fn zone_segments(&self, zone: Zone) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(move |s| s.zone == zone)
    }

    /// Segment whose span contains `x`; gap positions resolve to the nearest
    /// segment with ties going to the lower index.
    pub fn segment_at(&self, x: f64) -> Result<(usize, Zone)> {
        let (min, max) = self.axial_extent();
        if !(x >= min && x <= max) {
            return Err(Error::OutOfRange { x, min, max });
        }
        let mut best = (f64::INFINITY, 0usize);
        for seg in &self.segments {
            let d = if x < seg.start() {
                seg.start() - x
            } else if x > seg.end() {
                x - seg.end()
            } else {
                0.0
            };
            if d < best.0 {
                best = (d, seg.index);
            }
        }
        Ok((best.1, self.segments[best.1].zone))
    }

    /// Electrode occupying point `p`, if any.
    pub fn electrode_at(&self, p: [f64; 3]) -> Option<ElectrodeId> {
        self.electrodes.iter().find(|e| e.contains(p)).map(|e| e.id)
    }

    pub fn hash_hex(&self) -> String {
        self.spec.hash_hex()
    }

    /// Writes the geometry as a key-value TOML document.
    pub fn to_text(&self) -> String {
        let file = GeometryFile {
            format: GEOMETRY_FORMAT.to_string(),
            spec: self.spec.clone(),
            segment: self.segments.clone(),
        };
        format!(
            "# Segmented trap geometry. Lengths in micrometres.\n{}",
            toml::to_string(&file).expect("geometry serializes")
        )
    }

    /// Parses a geometry file and rebuilds the layout, checking that any
    /// listed segments agree with the rebuilt ones.
    pub fn from_text(text: &str) -> Result<TrapGeometry> {
        let file: GeometryFile = toml::from_str(text).map_err(|e| invalid(format!("geometry file: {e}")))?;
        if file.format != GEOMETRY_FORMAT {
            return Err(invalid(format!("unsupported geometry format {:?}", file.format)));
        }
        let geometry = build_trap(&file.spec)?;
        if !file.segment.is_empty() && file.segment != geometry.segments {
            return Err(invalid("segment table does not match the trap spec"));
        }
        Ok(geometry)
    }

    pub fn load(path: &Path) -> Result<TrapGeometry> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text).map_err(|e| Error::Parse { path: path.to_owned(), message: e.to_string() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_text().as_bytes())
    }
}

const GEOMETRY_FORMAT: &str = "segtrap-geometry-1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeometryFile {
    format: String,
    spec: TrapSpec,
    #[serde(default)]
    segment: Vec<Segment>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_trap() -> TrapGeometry {
        build_trap(&TrapSpec::default()).unwrap()
    }

    #[test]
    fn default_layout_counts() {
        let g = default_trap();
        assert_eq!(g.segments.len(), 31);
        let rf = g.electrodes.iter().filter(|e| e.id.kind == ElectrodeKind::Rf).count();
        let dc = g.electrodes.iter().filter(|e| e.id.kind == ElectrodeKind::Dc).count();
        assert_eq!(rf, 2);
        assert_eq!(dc, 62);
        assert_eq!(g.zone_segments(Zone::Storage).count(), 9);
        assert_eq!(g.zone_segments(Zone::Transfer).count(), 3);
        assert_eq!(g.zone_segments(Zone::Processing).count(), 19);
        assert!(g.zone_segments(Zone::Storage).all(|s| s.slit_um == 500.0));
        assert!(g.zone_segments(Zone::Processing).all(|s| s.slit_um == 250.0));
    }

    #[test]
    fn storage_pitch_is_width_plus_gap() {
        let g = default_trap();
        let d = g.segments[1].center_um - g.segments[0].center_um;
        assert_eq!(d, 280.0);
    }

    #[test]
    fn total_extent_is_widths_plus_gaps() {
        let g = default_trap();
        let widths: f64 = g.segments.iter().map(|s| s.width_um).sum();
        let gaps = 30.0 * (g.segments.len() - 1) as f64;
        assert_eq!(g.axial_extent().1, widths + gaps);
    }

    #[test]
    fn single_pair_layout() {
        let spec = TrapSpec { n_storage: 1, n_transfer: 0, n_processing: 0, ..TrapSpec::default() };
        let g = build_trap(&spec).unwrap();
        assert_eq!(g.segments.len(), 1);
        assert_eq!(g.electrodes.len(), 4);
    }

    #[test]
    fn rejects_bad_specs() {
        let zero = TrapSpec { n_storage: 0, n_transfer: 0, n_processing: 0, ..TrapSpec::default() };
        assert!(build_trap(&zero).is_err());
        let neg = TrapSpec { inter_electrode_gap_um: -1.0, ..TrapSpec::default() };
        assert!(build_trap(&neg).is_err());
        let flat = TrapSpec { wafer_thickness_um: 0.0, ..TrapSpec::default() };
        assert!(build_trap(&flat).is_err());
        let wide = TrapSpec { processing_slit_g_um: 600.0, ..TrapSpec::default() };
        assert!(build_trap(&wide).is_err());
    }

    #[test]
    fn segment_lookup() {
        let g = default_trap();
        let c5 = g.segments[5].center_um;
        assert_eq!(g.segment_at(c5).unwrap(), (5, Zone::Storage));
        let mid_gap = 0.5 * (g.segments[2].end() + g.segments[3].start());
        assert_eq!(g.segment_at(mid_gap).unwrap().0, 2);
        let t = g.segments[10].center_um;
        assert_eq!(g.segment_at(t).unwrap(), (10, Zone::Transfer));
        assert!(g.segment_at(-1.0).is_err());
        assert!(g.segment_at(g.axial_extent().1 + 1.0).is_err());
    }

    #[test]
    fn electrodes_do_not_overlap() {
        let g = default_trap();
        for (i, a) in g.electrodes.iter().enumerate() {
            for b in &g.electrodes[i + 1..] {
                for ba in &a.extent {
                    for bb in &b.extent {
                        assert!(!ba.overlaps(bb), "{} overlaps {}", a.id, b.id);
                    }
                }
            }
        }
    }

    #[test]
    fn rotation_maps_electrode_set_onto_itself() {
        let g = default_trap();
        for e in &g.electrodes {
            let partner = g.electrode(e.id.partner()).unwrap();
            let rotated: Vec<Aabb> = e.extent.iter().map(Aabb::rotated_about_axis).collect();
            assert_eq!(rotated, partner.extent, "{}", e.id);
        }
    }

    #[test]
    fn rf_notches_sit_opposite_dc_cuts() {
        let g = default_trap();
        let notch = g.spec.rf_notch_length_um;
        let (s0, s1) = (g.segments[0], g.segments[1]);
        let gap_mid = 0.5 * (s0.end() + s1.start());
        let y = -0.5 * s0.slit_um - 0.5 * notch;
        let z = g.layer_inner_z() + 1.0;
        assert_eq!(g.electrode_at([gap_mid, y, z]), None);
        assert_eq!(g.electrode_at([s0.center_um, y, z]), Some(ElectrodeId::rf(Side::Top)));
        let yd = 0.5 * s0.slit_um + 1.0;
        assert_eq!(g.electrode_at([gap_mid, yd, z]), None);
    }

    #[test]
    fn id_roundtrip() {
        for id in [ElectrodeId::rf(Side::Top), ElectrodeId::dc(7, Side::Bottom), ElectrodeId::dc(30, Side::Top)] {
            assert_eq!(id.to_string().parse::<ElectrodeId>().unwrap(), id);
        }
    }

    #[test]
    fn text_roundtrip_and_determinism() {
        let g = default_trap();
        let again = build_trap(&TrapSpec::default()).unwrap();
        assert_eq!(g, again);
        let back = TrapGeometry::from_text(&g.to_text()).unwrap();
        assert_eq!(back, g);
    }
}
