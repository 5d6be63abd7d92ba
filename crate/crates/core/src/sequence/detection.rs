//! Photon-counting state detection with a threshold classifier.

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::poisson_cdf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Electronic {
    S,
    D,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionParams {
    /// Total count rate of a fluorescing ion including background, Hz.
    pub bright_rate_hz: f64,
    pub background_rate_hz: f64,
    /// Lifetime of the shelved level, s.
    pub d_lifetime_s: f64,
    /// Counts at or below this value are classified as D. `None` picks the
    /// threshold minimising the decay-free Poisson overlap.
    pub threshold: Option<u64>,
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self { bright_rate_hz: 16e3, background_rate_hz: 4e3, d_lifetime_s: 1.2, threshold: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionOutcome {
    pub counts: u64,
    pub classified: Electronic,
}

/// Misclassification probabilities of each state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionError {
    pub s_as_d: f64,
    pub d_as_s: f64,
}

impl DetectionError {
    pub fn mean(&self) -> f64 {
        0.5 * (self.s_as_d + self.d_as_s)
    }
}

impl DetectionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.background_rate_hz >= 0.0) || !(self.bright_rate_hz > self.background_rate_hz) {
            return Err(invalid("bright count rate must exceed a non-negative background"));
        }
        if !(self.d_lifetime_s > 0.0) {
            return Err(invalid("D lifetime must be positive"));
        }
        Ok(())
    }

    /// Threshold in use for a window of `duration` seconds.
    pub fn threshold_for(&self, duration: f64) -> u64 {
        self.threshold.unwrap_or_else(|| {
            let (mb, md) = (self.bright_rate_hz * duration, self.background_rate_hz * duration);
            let err = |k: u64| poisson_cdf(k, mb) + (1.0 - poisson_cdf(k, md));
            (0..=mb.ceil() as u64).min_by(|&a, &b| err(a).total_cmp(&err(b))).unwrap_or(0)
        })
    }

    /// Exact misclassification probabilities including decay of the D level
    /// during the window, by quadrature over the decay time.
    pub fn error_probabilities(&self, duration: f64) -> DetectionError {
        let k = self.threshold_for(duration);
        let (b, s) = (self.background_rate_hz, self.bright_rate_hz - self.background_rate_hz);
        let tau = self.d_lifetime_s;
        let bright_above = |mu: f64| 1.0 - poisson_cdf(k, mu);
        let mut d_as_s = (-duration / tau).exp() * bright_above(b * duration);
        // Simpson rule over the decay time t ∈ [0, T].
        let m = 2000;
        let h = duration / m as f64;
        let f = |t: f64| (-t / tau).exp() / tau * bright_above(b * duration + s * (duration - t));
        let mut acc = f(0.0) + f(duration);
        for i in 1..m {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        d_as_s += acc * h / 3.0;
        DetectionError { s_as_d: poisson_cdf(k, self.bright_rate_hz * duration), d_as_s }
    }
}

fn poisson<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> u64 {
    if mu <= 0.0 {
        return 0;
    }
    Poisson::new(mu).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

/// Samples photon counts for an ion in `state` over `duration` seconds and
/// classifies them. A shelved ion may decay mid-window and then fluoresce for
/// the remainder.
pub fn detect<R: Rng + ?Sized>(
    state: Electronic,
    duration: f64,
    params: &DetectionParams,
    rng: &mut R,
) -> Result<DetectionOutcome> {
    if !(duration > 0.0) {
        return Err(invalid("detection duration must be positive"));
    }
    let b = params.background_rate_hz;
    let s = params.bright_rate_hz - b;
    let mu = match state {
        Electronic::S => params.bright_rate_hz * duration,
        Electronic::D => {
            let t_decay: f64 = Exp::new(1.0 / params.d_lifetime_s).map_err(|e| invalid(e.to_string()))?.sample(rng);
            b * duration + s * (duration - t_decay).max(0.0)
        }
    };
    let counts = poisson(mu, rng);
    let classified = if counts <= params.threshold_for(duration) { Electronic::D } else { Electronic::S };
    Ok(DetectionOutcome { counts, classified })
}
