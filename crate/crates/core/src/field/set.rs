use std::sync::Mutex;

use super::{dc_window, rf_cell, solve_basis, CacheOutcome, FieldCache, PotentialField, SolveOptions};
use crate::error::Result;
use crate::geometry::{ElectrodeId, Side, TrapGeometry};

/// Basis fields of one trap at one grid spacing, solved on demand and
/// optionally backed by an on-disk cache.
#[derive(Debug)]
pub struct FieldSet<'g> {
    pub geometry: &'g TrapGeometry,
    pub spacing_um: f64,
    pub opts: SolveOptions,
    cache: Option<FieldCache>,
    log: Mutex<Vec<(ElectrodeId, Option<CacheOutcome>)>>,
}

impl<'g> FieldSet<'g> {
    pub fn new(geometry: &'g TrapGeometry, spacing_um: f64, opts: SolveOptions, cache: Option<FieldCache>) -> Self {
        Self { geometry, spacing_um, opts, cache, log: Mutex::new(Vec::new()) }
    }

    fn basis(&self, layout: &super::FieldLayout, id: ElectrodeId) -> Result<PotentialField> {
        let (field, outcome) = match &self.cache {
            Some(c) => {
                let (f, o) = c.basis(self.geometry, layout, id, &self.opts)?;
                (f, Some(o))
            }
            None => (solve_basis(self.geometry, layout, id, &self.opts)?, None),
        };
        self.log.lock().expect("field log poisoned").push((id, outcome));
        Ok(field)
    }

    /// Top-layer basis of DC pair `pair` on its grounded window.
    pub fn dc_top(&self, pair: usize) -> Result<PotentialField> {
        let layout = dc_window(self.geometry, pair, self.spacing_um)?;
        self.basis(&layout, ElectrodeId::dc(pair, Side::Top))
    }

    /// Both electrodes of the pair at 1 V, and the balanced difference
    /// (top at +½ V, bottom at −½ V).
    pub fn dc_pair(&self, pair: usize) -> Result<(PotentialField, PotentialField)> {
        let top = self.dc_top(pair)?;
        let bottom = top.rotated_about_axis()?;
        let sum = PotentialField::combine(&[(&top, 1.0), (&bottom, 1.0)], format!("pair {pair}"))?;
        let diff = PotentialField::combine(&[(&top, 0.5), (&bottom, -0.5)], format!("pair {pair} differential"))?;
        Ok((sum, diff))
    }

    /// Both RF electrodes at 1 V on the mirror cell of pair `pair`.
    pub fn rf(&self, pair: usize) -> Result<PotentialField> {
        let layout = rf_cell(self.geometry, pair, self.spacing_um)?;
        let top = self.basis(&layout, ElectrodeId::rf(Side::Top))?;
        let bottom = top.rotated_about_axis()?;
        PotentialField::combine(&[(&top, 1.0), (&bottom, 1.0)], format!("rf at pair {pair}"))
    }

    /// Top-layer bases of every DC pair, in pair order.
    pub fn all_dc_tops(&self) -> Result<Vec<PotentialField>> {
        (0..self.geometry.segments.len()).map(|p| self.dc_top(p)).collect()
    }

    /// Electrodes fetched so far with their cache outcome (`None` without a
    /// cache).
    pub fn fetched(&self) -> Vec<(ElectrodeId, Option<CacheOutcome>)> {
        self.log.lock().expect("field log poisoned").clone()
    }
}
