use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Regular node grid. `dims` counts points per axis, lengths are in µm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid3D {
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    pub dims: [usize; 3],
}

impl Grid3D {
    pub fn new(origin: [f64; 3], spacing: [f64; 3], dims: [usize; 3]) -> Result<Self> {
        let g = Self { origin, spacing, dims };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.spacing[a].is_finite() && self.spacing[a] > 0.0) {
                return Err(invalid(format!("grid spacing must be positive, got {:?}", self.spacing)));
            }
            if !self.origin[a].is_finite() {
                return Err(invalid("grid origin must be finite"));
            }
            if self.dims[a] < 2 {
                return Err(invalid(format!("grid needs at least 2 points per axis, got {:?}", self.dims)));
            }
        }
        Ok(())
    }

    /// Grid centred on `center` with `2 * half[a]` intervals along each axis.
    pub fn centered(center: [f64; 3], spacing: [f64; 3], half: [usize; 3]) -> Result<Self> {
        let origin = [
            center[0] - half[0] as f64 * spacing[0],
            center[1] - half[1] as f64 * spacing[1],
            center[2] - half[2] as f64 * spacing[2],
        ];
        Self::new(origin, spacing, [2 * half[0] + 1, 2 * half[1] + 1, 2 * half[2] + 1])
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.origin[axis] + i as f64 * self.spacing[axis]
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [self.coord(0, i), self.coord(1, j), self.coord(2, k)]
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.coord(axis, self.dims[axis] - 1)
    }

    /// Tolerant containment: points within a millionth of a cell of a face count.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| {
            let eps = 1e-6 * self.spacing[a];
            p[a] >= self.origin[a] - eps && p[a] <= self.upper(a) + eps
        })
    }

    /// Nearest node index along `axis`, if the coordinate lies on the grid.
    pub fn nearest(&self, axis: usize, x: f64) -> Option<usize> {
        let f = ((x - self.origin[axis]) / self.spacing[axis]).round();
        if f < 0.0 || f > (self.dims[axis] - 1) as f64 {
            None
        } else {
            Some(f as usize)
        }
    }

    /// Index range of nodes with coordinates in `[lo, hi]` (inclusive, with a
    /// small tolerance), clipped to the grid. Empty ranges return `None`.
    pub fn node_range(&self, axis: usize, lo: f64, hi: f64) -> Option<(usize, usize)> {
        let h = self.spacing[axis];
        let a = ((lo - self.origin[axis]) / h - 1e-9).ceil().max(0.0);
        let b = ((hi - self.origin[axis]) / h + 1e-9).floor().min((self.dims[axis] - 1) as f64);
        if a > b {
            None
        } else {
            Some((a as usize, b as usize))
        }
    }

    /// Every axis has an interval count divisible by `2^levels`.
    pub fn coarsenable(&self, levels: usize) -> bool {
        let m = 1usize << levels;
        self.dims.iter().all(|&n| (n - 1) % m == 0 && (n - 1) / m >= 2)
    }

    /// Grid with every other node removed.
    pub fn coarsened(&self) -> Grid3D {
        Grid3D {
            origin: self.origin,
            spacing: [2.0 * self.spacing[0], 2.0 * self.spacing[1], 2.0 * self.spacing[2]],
            dims: [(self.dims[0] - 1) / 2 + 1, (self.dims[1] - 1) / 2 + 1, (self.dims[2] - 1) / 2 + 1],
        }
    }

    pub(crate) fn key_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(72);
        for a in 0..3 {
            out.extend((self.dims[a] as u64).to_le_bytes());
            out.extend(self.spacing[a].to_le_bytes());
            out.extend(self.origin[a].to_le_bytes());
        }
        out
    }
}
