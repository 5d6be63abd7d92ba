//! Laplace solves for unit-voltage electrode basis potentials.
//!
//! Each DC electrode is solved in its own window around the segment with the
//! window boundary grounded; the field is taken as zero beyond the window along
//! the axis. RF fields are solved on a half-pitch cell with mirror faces across
//! the axis, which reproduces the periodic tooth/notch pattern of a zone.
//! Bottom-layer fields come from their top partners by the 180° rotation about
//! the trap axis.

mod axial;
mod cache;
mod grid;
pub mod multigrid;
mod quadrupole;
mod set;

pub use axial::{axial_curve, axial_frequency, AxialCurve, AxialFit};
pub use cache::{read_field, write_field, CacheOutcome, FieldCache};
pub use grid::Grid3D;
pub use multigrid::{SolveOptions, SolveStats};
pub(crate) use quadrupole::quartic_fit as quartic_fit_rows;
pub use quadrupole::{quadrupole_c2, quadrupole_window_um, QuadrupoleFit};
pub use set::FieldSet;

use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::geometry::{ElectrodeId, TrapGeometry};

/// How a field continues beyond the x faces of its grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum XExtension {
    /// Points beyond the grid are an error.
    None,
    /// The field is zero beyond the grid (grounded window far from the source).
    Zero,
    /// Both x faces are mirror planes; the field is periodic with twice the
    /// grid length.
    Mirror,
}

impl XExtension {
    fn code(self) -> u64 {
        match self {
            XExtension::None => 0,
            XExtension::Zero => 1,
            XExtension::Mirror => 2,
        }
    }

    fn from_code(c: u64) -> Option<Self> {
        match c {
            0 => Some(XExtension::None),
            1 => Some(XExtension::Zero),
            2 => Some(XExtension::Mirror),
            _ => None,
        }
    }
}

/// Solve domain for one basis field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldLayout {
    pub grid: Grid3D,
    pub x_extension: XExtension,
    /// After solving, keep only `|y| <= crop[0]` and `|z| <= crop[1]`.
    pub crop: Option<[f64; 2]>,
}

impl FieldLayout {
    fn key_bytes(&self) -> Vec<u8> {
        let mut out = self.grid.key_bytes();
        out.extend(self.x_extension.code().to_le_bytes());
        if let Some(c) = self.crop {
            out.extend(c[0].to_le_bytes());
            out.extend(c[1].to_le_bytes());
        }
        out
    }
}

/// Rounds a half extent up so the interval count is a multiple of 16.
fn half_intervals(extent_um: f64, h: f64) -> usize {
    let n = (extent_um / h - 1e-9).ceil() as usize;
    n.div_ceil(8) * 8
}

fn check_spacing(h: f64) -> Result<()> {
    if h.is_finite() && h > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("grid spacing must be positive, got {h}")))
    }
}

/// Grounded window around DC pair `pair` with a margin of two slit widths
/// beyond the segment and the slit. The stored field is cropped to the slit.
pub fn dc_window(geometry: &TrapGeometry, pair: usize, spacing_um: f64) -> Result<FieldLayout> {
    check_spacing(spacing_um)?;
    let seg = geometry.segments.get(pair).ok_or_else(|| invalid(format!("no segment pair {pair}")))?;
    let slit = seg.slit_um;
    let zin = geometry.layer_inner_z();
    let hx = 0.5 * seg.width_um + 2.0 * slit;
    let hy = 2.5 * slit;
    let hz = (zin + 2.0 * slit).max(geometry.layer_outer_z() + slit);
    let h = spacing_um;
    let grid = Grid3D::centered(
        [seg.center_um, 0.0, 0.0],
        [h; 3],
        [half_intervals(hx, h), half_intervals(hy, h), half_intervals(hz, h)],
    )?;
    Ok(FieldLayout { grid, x_extension: XExtension::Zero, crop: Some([0.5 * slit, zin]) })
}

/// Mirror cell from the centre of segment `pair` to the middle of the next gap.
/// The x spacing is the largest value not above `spacing_um` that splits the
/// half pitch into a multiple of 8 intervals.
pub fn rf_cell(geometry: &TrapGeometry, pair: usize, spacing_um: f64) -> Result<FieldLayout> {
    check_spacing(spacing_um)?;
    let seg = geometry.segments.get(pair).ok_or_else(|| invalid(format!("no segment pair {pair}")))?;
    let half_pitch = 0.5 * seg.width_um + 0.5 * geometry.spec.inter_electrode_gap_um;
    let nx = ((half_pitch / spacing_um - 1e-9).ceil() as usize).div_ceil(8).max(1) * 8;
    let hx = half_pitch / nx as f64;
    let slit = seg.slit_um;
    let hy = 2.5 * slit;
    let hz = (geometry.layer_inner_z() + 2.0 * slit).max(geometry.layer_outer_z() + slit);
    let h = spacing_um;
    let (ny, nz) = (half_intervals(hy, h), half_intervals(hz, h));
    let grid =
        Grid3D::new([seg.center_um, -(ny as f64) * h, -(nz as f64) * h], [hx, h, h], [nx + 1, 2 * ny + 1, 2 * nz + 1])?;
    Ok(FieldLayout { grid, x_extension: XExtension::Mirror, crop: None })
}

/// Sampled potential of one basis electrode or a combination of them.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    pub grid: Grid3D,
    pub values: Vec<f64>,
    /// Electrode id, or a description for combined and synthetic fields.
    pub label: String,
    pub x_extension: XExtension,
}

impl PotentialField {
    pub fn new(grid: Grid3D, values: Vec<f64>, label: impl Into<String>, x_extension: XExtension) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(invalid("sample count does not match grid"));
        }
        Ok(Self { grid, values, label: label.into(), x_extension })
    }

    /// Samples `f(x, y, z)` (µm) on the grid.
    pub fn from_fn(grid: Grid3D, label: impl Into<String>, f: impl Fn([f64; 3]) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.dims[0] {
            for j in 0..grid.dims[1] {
                for k in 0..grid.dims[2] {
                    values.push(f(grid.point(i, j, k)));
                }
            }
        }
        Self::new(grid, values, label, XExtension::None)
    }

    pub fn electrode(&self) -> Option<ElectrodeId> {
        self.label.parse().ok()
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.grid.index(i, j, k)]
    }

    /// Maps `x` into the grid according to the extension rule. `None` means
    /// the field vanishes there.
    fn fold_x(&self, x: f64) -> Option<f64> {
        let x0 = self.grid.origin[0];
        let x1 = self.grid.upper(0);
        match self.x_extension {
            XExtension::None => Some(x),
            XExtension::Zero => {
                let eps = 1e-6 * self.grid.spacing[0];
                if x < x0 - eps || x > x1 + eps {
                    None
                } else {
                    Some(x)
                }
            }
            XExtension::Mirror => {
                let len = x1 - x0;
                let d = (x - x0).rem_euclid(2.0 * len);
                Some(x0 + if d > len { 2.0 * len - d } else { d })
            }
        }
    }

    /// Trilinear interpolation at `p` (µm).
    pub fn value_at(&self, p: [f64; 3]) -> Result<f64> {
        let Some(x) = self.fold_x(p[0]) else {
            return Ok(0.0);
        };
        let q = [x, p[1], p[2]];
        if !self.grid.contains(q) {
            return Err(Error::OutOfGrid { x: p[0], y: p[1], z: p[2] });
        }
        let mut idx = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let t = ((q[a] - self.grid.origin[a]) / self.grid.spacing[a]).max(0.0);
            let i = (t.floor() as usize).min(self.grid.dims[a] - 2);
            idx[a] = i;
            frac[a] = (t - i as f64).clamp(0.0, 1.0);
        }
        let mut v = 0.0;
        for (da, wa) in [(0, 1.0 - frac[0]), (1, frac[0])] {
            for (db, wb) in [(0, 1.0 - frac[1]), (1, frac[1])] {
                for (dc, wc) in [(0, 1.0 - frac[2]), (1, frac[2])] {
                    let w = wa * wb * wc;
                    if w != 0.0 {
                        v += w * self.node(idx[0] + da, idx[1] + db, idx[2] + dc);
                    }
                }
            }
        }
        Ok(v)
    }

    /// Potential gradient in V/µm by central differences of the interpolant
    /// with a step of one cell, one-sided at the grid faces.
    pub fn gradient_at(&self, p: [f64; 3]) -> Result<[f64; 3]> {
        let mut g = [0.0; 3];
        for a in 0..3 {
            let h = self.grid.spacing[a];
            let mut lo = p;
            let mut hi = p;
            lo[a] -= h;
            hi[a] += h;
            let inside = |q: [f64; 3]| a == 0 && self.x_extension != XExtension::None || self.grid.contains(q);
            let (vl, xl) = if inside(lo) { (self.value_at(lo)?, lo[a]) } else { (self.value_at(p)?, p[a]) };
            let (vh, xh) = if inside(hi) { (self.value_at(hi)?, hi[a]) } else { (self.value_at(p)?, p[a]) };
            if xh == xl {
                return Err(Error::OutOfGrid { x: p[0], y: p[1], z: p[2] });
            }
            g[a] = (vh - vl) / (xh - xl);
        }
        Ok(g)
    }

    /// Image under `(x, y, z) -> (x, -y, -z)`. The grid must be symmetric about
    /// the axis.
    pub fn rotated_about_axis(&self) -> Result<PotentialField> {
        let g = &self.grid;
        for a in 1..3 {
            if (g.origin[a] + g.upper(a)).abs() > 1e-9 * g.spacing[a] {
                return Err(invalid("rotation needs a grid centred on the axis"));
            }
        }
        let [nx, ny, nz] = g.dims;
        let mut values = vec![0.0; g.len()];
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    values[g.index(i, j, k)] = self.node(i, ny - 1 - j, nz - 1 - k);
                }
            }
        }
        let label = match self.electrode() {
            Some(id) => id.partner().to_string(),
            None => format!("rotated {}", self.label),
        };
        Ok(PotentialField { grid: *g, values, label, x_extension: self.x_extension })
    }

    /// Weighted sum of fields on the same grid.
    pub fn combine(parts: &[(&PotentialField, f64)], label: impl Into<String>) -> Result<PotentialField> {
        let (first, _) = parts.first().ok_or_else(|| invalid("nothing to combine"))?;
        let mut values = vec![0.0; first.values.len()];
        for (f, w) in parts {
            if f.grid != first.grid || f.x_extension != first.x_extension {
                return Err(invalid("combined fields must share a grid"));
            }
            for (v, s) in values.iter_mut().zip(&f.values) {
                *v += w * s;
            }
        }
        PotentialField::new(first.grid, values, label, first.x_extension)
    }

    /// Sub-grid with `|y| <= ymax` and `|z| <= zmax`.
    pub fn cropped(&self, ymax: f64, zmax: f64) -> Result<PotentialField> {
        let g = &self.grid;
        let (j0, j1) = g.node_range(1, -ymax, ymax).ok_or_else(|| invalid("crop removes every node"))?;
        let (k0, k1) = g.node_range(2, -zmax, zmax).ok_or_else(|| invalid("crop removes every node"))?;
        let grid = Grid3D::new(
            [g.origin[0], g.coord(1, j0), g.coord(2, k0)],
            g.spacing,
            [g.dims[0], j1 - j0 + 1, k1 - k0 + 1],
        )?;
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..g.dims[0] {
            for j in j0..=j1 {
                let row = g.index(i, j, 0);
                values.extend_from_slice(&self.values[row + k0..=row + k1]);
            }
        }
        PotentialField::new(grid, values, self.label.clone(), self.x_extension)
    }
}

/// Superposed potential `Σ vᵢ φᵢ(p)` in volts. Fields with zero voltage are
/// skipped.
pub fn potential_at(fields: &[(&PotentialField, f64)], p: [f64; 3]) -> Result<f64> {
    let mut v = 0.0;
    for (f, volts) in fields {
        if *volts != 0.0 {
            v += volts * f.value_at(p)?;
        }
    }
    Ok(v)
}

/// Marks electrode nodes inside `grid`. Returns the fixed mask and the node
/// values given by `voltage`.
pub fn rasterize(
    geometry: &TrapGeometry,
    grid: &Grid3D,
    voltage: impl Fn(ElectrodeId) -> f64,
) -> (Vec<bool>, Vec<f64>) {
    let mut fixed = vec![false; grid.len()];
    let mut values = vec![0.0; grid.len()];
    for e in &geometry.electrodes {
        let v = voltage(e.id);
        for b in &e.extent {
            let ranges = [
                grid.node_range(0, b.min[0], b.max[0]),
                grid.node_range(1, b.min[1], b.max[1]),
                grid.node_range(2, b.min[2], b.max[2]),
            ];
            let [Some(rx), Some(ry), Some(rz)] = ranges else { continue };
            for i in rx.0..=rx.1 {
                for j in ry.0..=ry.1 {
                    for k in rz.0..=rz.1 {
                        let p = grid.index(i, j, k);
                        fixed[p] = true;
                        values[p] = v;
                    }
                }
            }
        }
    }
    (fixed, values)
}

/// Solves the Laplace problem on `layout` with electrode voltages from
/// `voltage` and the outer (non-mirror) boundary held at `boundary`.
pub fn solve_configuration(
    geometry: &TrapGeometry,
    layout: &FieldLayout,
    voltage: impl Fn(ElectrodeId) -> f64,
    boundary: f64,
    opts: &SolveOptions,
    label: &str,
) -> Result<(PotentialField, SolveStats)> {
    let grid = layout.grid;
    let (fixed, mut values) = rasterize(geometry, &grid, voltage);
    let [nx, ny, nz] = grid.dims;
    let mirror_x = layout.x_extension == XExtension::Mirror;
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let face = (!mirror_x && (i == 0 || i + 1 == nx)) || j == 0 || j + 1 == ny || k == 0 || k + 1 == nz;
                let p = grid.index(i, j, k);
                if face && !fixed[p] {
                    values[p] = boundary;
                }
            }
        }
    }
    let stats = multigrid::solve(&grid, &fixed, &mut values, [mirror_x, false, false], opts, label)?;
    let mut field = PotentialField::new(grid, values, label, layout.x_extension)?;
    if let Some([ym, zm]) = layout.crop {
        field = field.cropped(ym, zm)?;
    }
    Ok((field, stats))
}

/// Unit-voltage basis field of `electrode`: the electrode at 1 V, every other
/// electrode and the outer boundary at 0 V.
pub fn solve_basis(
    geometry: &TrapGeometry,
    layout: &FieldLayout,
    electrode: ElectrodeId,
    opts: &SolveOptions,
) -> Result<PotentialField> {
    if geometry.electrode(electrode).is_none() {
        return Err(invalid(format!("geometry has no electrode {electrode}")));
    }
    let label = electrode.to_string();
    let (field, stats) =
        solve_configuration(geometry, layout, |id| if id == electrode { 1.0 } else { 0.0 }, 0.0, opts, &label)?;
    log::debug!("{label}: {} nodes, {} cycles, residual {:.2e}", layout.grid.len(), stats.cycles, stats.residual);
    Ok(field)
}

/// Cache key for a basis solve.
pub fn basis_key(geometry: &TrapGeometry, layout: &FieldLayout, electrode: ElectrodeId, opts: &SolveOptions) -> String {
    let mut h = Sha256::new();
    h.update(geometry.hash_hex().as_bytes());
    h.update(layout.key_bytes());
    h.update(electrode.to_string().as_bytes());
    h.update(opts.tolerance.to_le_bytes());
    hex::encode(h.finalize())
}
