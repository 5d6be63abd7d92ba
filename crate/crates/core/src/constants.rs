//! Physical constants (CODATA 2018, SI units) and unit helpers.

use std::f64::consts::PI;

/// Elementary charge in coulomb.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Atomic mass unit in kilogram.
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
/// Reduced Planck constant in J·s.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Micrometres to metres.
pub const UM: f64 = 1e-6;

/// Converts an ordinary frequency in hertz to an angular frequency in rad/s.
#[inline]
pub fn angular(hz: f64) -> f64 {
    2.0 * PI * hz
}

/// Converts an angular frequency in rad/s to hertz.
#[inline]
pub fn hertz(rad_per_s: f64) -> f64 {
    rad_per_s / (2.0 * PI)
}
