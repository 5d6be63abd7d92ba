//! Least-squares fits and thermometry estimators applied to scan records.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::sequence::{ExperimentRecord, RecordPoint};

pub use crate::sequence::projection_noise;

/// Relative parameter step that ends the iteration.
pub const STEP_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub params: Vec<f64>,
    /// 1σ from the residual variance; zero without residual degrees of
    /// freedom, infinite for parameters the data do not constrain.
    pub sigma: Vec<f64>,
    pub residual_norm: f64,
    /// When false the estimates are not reliable.
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<(f64, f64)> {
        let i = self.names.iter().position(|n| n == name)?;
        Some((self.params[i], self.sigma[i]))
    }

    pub fn value(&self, name: &str) -> f64 {
        self.get(name).map_or(f64::NAN, |v| v.0)
    }

    /// Report as TOML.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "converged = {}\niterations = {}\nresidual_norm = {:e}\n",
            self.converged, self.iterations, self.residual_norm
        );
        for ((n, v), e) in self.names.iter().zip(&self.params).zip(&self.sigma) {
            s.push_str(&format!("[{n}]\nvalue = {v:e}\nsigma = {e:e}\n"));
        }
        s
    }
}

/// Model `f(x; p)` that also writes `∂f/∂p` into the slice.
pub type Model<'a> = dyn Fn(f64, &[f64], &mut [f64]) -> f64 + 'a;

fn jacobian(model: &Model, x: &[f64], p: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let mut f = DVector::zeros(x.len());
    let mut j = DMatrix::zeros(x.len(), p.len());
    let mut g = vec![0.0; p.len()];
    for (i, &xi) in x.iter().enumerate() {
        f[i] = model(xi, p, &mut g);
        for (k, gk) in g.iter().enumerate() {
            j[(i, k)] = *gk;
        }
    }
    (f, j)
}

fn covariance_sigma(j: &DMatrix<f64>, ssr: f64, m: usize, n: usize) -> Vec<f64> {
    if m <= n {
        return vec![0.0; n];
    }
    let s2 = ssr / (m - n) as f64;
    let a = j.transpose() * j;
    match a.clone().try_inverse() {
        Some(inv) => (0..n).map(|k| (s2 * inv[(k, k)]).max(0.0).sqrt()).collect(),
        None => vec![f64::INFINITY; n],
    }
}

/// Levenberg–Marquardt with Marquardt's diagonal scaling.
pub fn levenberg_marquardt(model: &Model, x: &[f64], y: &[f64], p0: &[f64], names: &[&str]) -> Result<FitResult> {
    if x.len() != y.len() || p0.len() != names.len() {
        return Err(invalid("fit inputs have inconsistent lengths"));
    }
    if x.len() < p0.len() {
        return Err(Error::Fit(format!("{} points cannot determine {} parameters", x.len(), p0.len())));
    }
    let yv = DVector::from_column_slice(y);
    let n = p0.len();
    let mut p = p0.to_vec();
    let (f, mut j) = jacobian(model, x, &p);
    let mut r = &yv - f;
    let mut ssr = r.norm_squared();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let scale = y.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        if ssr <= 1e-30 * scale {
            converged = true;
            break;
        }
        let a = j.transpose() * &j;
        let g = j.transpose() * &r;
        let mut accepted = false;
        while lambda < 1e16 {
            let mut m = a.clone();
            for k in 0..n {
                m[(k, k)] += lambda * a[(k, k)].max(1e-300);
            }
            let Some(delta) = m.cholesky().map(|c| c.solve(&g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            let (ft, jt) = jacobian(model, x, &trial);
            let rt = &yv - ft;
            let st = rt.norm_squared();
            if st.is_finite() && st <= ssr {
                let small =
                    delta.iter().zip(&trial).all(|(d, q)| d.abs() <= STEP_TOLERANCE * (q.abs() + STEP_TOLERANCE));
                let flat = ssr - st <= 1e-15 * ssr;
                p = trial;
                j = jt;
                r = rt;
                ssr = st;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if small || flat {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged {
            break;
        }
        if !accepted {
            // No downhill step at any damping: a stationary point.
            converged = g.norm() <= 1e-8 * (j.norm() * r.norm()).max(f64::MIN_POSITIVE);
            break;
        }
    }
    let sigma = covariance_sigma(&j, ssr, x.len(), n);
    Ok(FitResult {
        names: names.iter().map(|s| s.to_string()).collect(),
        params: p,
        sigma,
        residual_norm: ssr.sqrt(),
        converged,
        iterations,
    })
}

fn check_xy(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(invalid("x and y lengths differ"));
    }
    if x.len() < min {
        return Err(Error::Fit(format!("need at least {min} points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("fit data must be finite"));
    }
    Ok(())
}

/// Fits `a · exp(−γ t)`. Parameters `amplitude`, `rate`.
pub fn fit_exponential(t: &[f64], y: &[f64]) -> Result<FitResult> {
    check_xy(t, y, 4)?;
    // Start from a log-linear fit of the positive samples.
    let pos: Vec<(f64, f64)> = t.iter().zip(y).filter(|(_, v)| **v > 0.0).map(|(a, b)| (*a, b.ln())).collect();
    let (a0, g0) = if pos.len() >= 2 {
        let (xs, ls): (Vec<f64>, Vec<f64>) = pos.into_iter().unzip();
        match fit_linear(&xs, &ls) {
            Ok(l) => (l.value("intercept").exp(), -l.value("slope")),
            Err(_) => (y.iter().sum::<f64>() / y.len() as f64, 0.0),
        }
    } else {
        (y[0], 0.0)
    };
    let model = |x: f64, p: &[f64], g: &mut [f64]| {
        let e = (-p[1] * x).exp();
        g[0] = e;
        g[1] = -p[0] * x * e;
        p[0] * e
    };
    let fit = levenberg_marquardt(&model, t, y, &[a0, g0], &["amplitude", "rate"])?;
    require_convergence(fit, "exponential")
}

fn require_convergence(fit: FitResult, what: &str) -> Result<FitResult> {
    if !fit.converged {
        return Err(Error::NoConvergence {
            what: format!("{what} fit"),
            residual: fit.residual_norm,
            iterations: fit.iterations,
        });
    }
    Ok(fit)
}

/// Weighted least squares `y = slope · x + intercept` with weights `1/σ²`.
/// Parameter errors come from the covariance, taking the `σ` as absolute.
pub fn fit_linear_weighted(x: &[f64], y: &[f64], sigma: &[f64]) -> Result<FitResult> {
    check_xy(x, y, 2)?;
    if sigma.len() != x.len() || sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(invalid("weighted fit needs one positive, finite σ per point"));
    }
    let w: Vec<f64> = sigma.iter().map(|s| 1.0 / (s * s)).collect();
    let sw: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * x * x).sum();
    let sxy: f64 = w.iter().zip(x).zip(y).map(|((w, x), y)| w * x * y).sum();
    let det = sw * sxx - sx * sx;
    if !(det > 1e-12 * sw * sxx) {
        return Err(Error::Fit("degenerate abscissa: all x values coincide".into()));
    }
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    let chi2: f64 = x.iter().zip(y).zip(&w).map(|((a, b), w)| w * (b - slope * a - intercept).powi(2)).sum();
    Ok(FitResult {
        names: vec!["slope".into(), "intercept".into()],
        params: vec![slope, intercept],
        sigma: vec![(sw / det).sqrt(), (sxx / det).sqrt()],
        residual_norm: chi2.sqrt(),
        converged: true,
        iterations: 1,
    })
}

/// Ordinary least squares `y = slope · x + intercept`.
pub fn fit_linear(x: &[f64], y: &[f64]) -> Result<FitResult> {
    check_xy(x, y, 2)?;
    let m = x.len() as f64;
    let xm = x.iter().sum::<f64>() / m;
    let ym = y.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    if !(sxx > 1e-300) || sxx <= 1e-24 * x.iter().map(|v| v * v).sum::<f64>() {
        return Err(Error::Fit("degenerate abscissa: all x values coincide".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - xm) * (b - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ssr: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let (ss, si) = if x.len() > 2 {
        let s2 = ssr / (m - 2.0);
        ((s2 / sxx).sqrt(), (s2 * (1.0 / m + xm * xm / sxx)).sqrt())
    } else {
        (0.0, 0.0)
    };
    Ok(FitResult {
        names: vec!["slope".into(), "intercept".into()],
        params: vec![slope, intercept],
        sigma: vec![ss, si],
        residual_norm: ssr.sqrt(),
        converged: true,
        iterations: 1,
    })
}

/// Fits `offset + amplitude · (w/2)² / ((x − center)² + (w/2)²)` to a peak
/// or dip. Parameters `center`, `fwhm`, `amplitude`, `offset`.
pub fn fit_lorentzian(x: &[f64], y: &[f64]) -> Result<FitResult> {
    check_xy(x, y, 5)?;
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let p0 = lorentzian_start(&xs, &ys);
    let model = |x: f64, p: &[f64], g: &mut [f64]| {
        let hw = 0.5 * p[1];
        let d = x - p[0];
        let den = d * d + hw * hw;
        let l = hw * hw / den;
        g[0] = p[2] * 2.0 * d * hw * hw / (den * den);
        g[1] = p[2] * 0.5 * (2.0 * hw * den - hw * hw * 2.0 * hw) / (den * den);
        g[2] = l;
        g[3] = 1.0;
        p[3] + p[2] * l
    };
    let mut fit = levenberg_marquardt(&model, &xs, &ys, &p0, &["center", "fwhm", "amplitude", "offset"])?;
    fit.params[1] = fit.params[1].abs();
    require_convergence(fit, "Lorentzian")
}

/// Offset from the outer samples, extremum for center and amplitude, and the
/// half-height crossings on either side for the width.
fn lorentzian_start(x: &[f64], y: &[f64]) -> [f64; 4] {
    let n = x.len();
    let edge = (n / 10).max(1);
    let mut ends: Vec<f64> = y[..edge].iter().chain(&y[n - edge..]).copied().collect();
    ends.sort_by(f64::total_cmp);
    let offset = ends[ends.len() / 2];
    let (imax, imin) = (argmax(y), argmin(y));
    let i = if y[imax] - offset >= offset - y[imin] { imax } else { imin };
    let amp = y[i] - offset;
    let half = offset + 0.5 * amp;
    let crosses = |j: usize, k: usize| (y[j] - half) * (y[k] - half) <= 0.0;
    let interp = |j: usize, k: usize| {
        let (a, b) = (y[j] - half, y[k] - half);
        if a == b {
            x[j]
        } else {
            x[j] + (x[k] - x[j]) * a / (a - b)
        }
    };
    let left = (1..=i).rev().find(|&j| crosses(j - 1, j)).map(|j| interp(j - 1, j));
    let right = (i..n - 1).find(|&j| crosses(j, j + 1)).map(|j| interp(j, j + 1));
    let span = x[n - 1] - x[0];
    let fwhm = match (left, right) {
        (Some(l), Some(r)) => r - l,
        (Some(l), None) => 2.0 * (x[i] - l),
        (None, Some(r)) => 2.0 * (r - x[i]),
        (None, None) => 0.1 * span,
    };
    [x[i], fwhm.abs().max(1e-6 * span), amp, offset]
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap_or(0)
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).min_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap_or(0)
}

/// `n̄ = A / (1 − A)` with `A = P_red / P_blue`, first-order error
/// propagation from the two input errors.
pub fn asymmetry_nbar(p_red: f64, err_red: f64, p_blue: f64, err_blue: f64) -> Result<(f64, f64)> {
    if !(p_blue > 0.0) || !(p_red >= 0.0) || !(err_red >= 0.0) || !(err_blue >= 0.0) {
        return Err(invalid("asymmetry needs P_red ≥ 0, P_blue > 0 and non-negative errors"));
    }
    let a = p_red / p_blue;
    if a >= 1.0 {
        return Err(Error::NoThermometricSolution { ratio: a });
    }
    let d = p_blue - p_red;
    let n = p_red / d;
    let dn_dr = p_blue / (d * d);
    let dn_db = -p_red / (d * d);
    Ok((n, ((dn_dr * err_red).powi(2) + (dn_db * err_blue).powi(2)).sqrt()))
}

/// Summed excitation and its error over the points of one series.
pub fn summed(points: &[&RecordPoint]) -> (f64, f64) {
    let p = points.iter().map(|q| q.p).sum();
    let e = points.iter().map(|q| q.err * q.err).sum::<f64>().sqrt();
    (p, e)
}

/// Mean phonon number from the `red` and `blue` series of a thermometry
/// record, summing each series over its window.
pub fn thermometry(record: &ExperimentRecord, red: &str, blue: &str) -> Result<(f64, f64)> {
    let r: Vec<&RecordPoint> = record.series(red).collect();
    let b: Vec<&RecordPoint> = record.series(blue).collect();
    if r.is_empty() || b.is_empty() {
        return Err(invalid(format!("record needs series '{red}' and '{blue}'")));
    }
    let (pr, er) = summed(&r);
    let (pb, eb) = summed(&b);
    asymmetry_nbar(pr, er, pb, eb)
}

/// Per scan value, `n̄ ± σ` from the red/blue series, for delayed-measurement
/// heating scans.
pub fn nbar_by_scan_value(record: &ExperimentRecord, red: &str, blue: &str) -> Result<Vec<(f64, f64, f64)>> {
    let mut out = Vec::new();
    for r in record.series(red) {
        let b = record
            .series(blue)
            .find(|b| b.value == r.value)
            .ok_or_else(|| invalid(format!("no '{blue}' point at scan value {}", r.value)))?;
        let (n, e) = asymmetry_nbar(r.p, r.err, b.p, b.err)?;
        out.push((r.value, n, e));
    }
    if out.is_empty() {
        return Err(invalid(format!("record has no '{red}' series")));
    }
    Ok(out)
}

/// Heating rate (per unit of the scan variable) and initial `n̄` from a
/// delayed-measurement record. Each `n̄` is weighted by the error propagated
/// from the excitations the current line predicts rather than the measured
/// ones, which would favour points that fluctuated low; the weights are
/// refined over a few passes. The `residual_norm` of the result is `√χ²`.
pub fn heating_rate(record: &ExperimentRecord, red: &str, blue: &str) -> Result<FitResult> {
    let pts = nbar_by_scan_value(record, red, blue)?;
    let t: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let n: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let mut fit = fit_linear_weighted(&t, &n, &pts.iter().map(|p| p.2).collect::<Vec<_>>())?;
    let pairs: Vec<(&RecordPoint, &RecordPoint)> =
        record.series(red).filter_map(|r| record.series(blue).find(|b| b.value == r.value).map(|b| (r, b))).collect();
    for _ in 0..MODEL_WEIGHT_PASSES {
        let mut sigma = Vec::with_capacity(pairs.len());
        for (r, b) in &pairs {
            let nbar = (fit.value("slope") * r.value + fit.value("intercept")).max(1e-3);
            let a = nbar / (1.0 + nbar);
            let pb = ((r.p + b.p) / (1.0 + a)).clamp(1e-6, 1.0 - 1e-6);
            let pr = (a * pb).clamp(1e-6, 1.0 - 1e-6);
            let er = (pr * (1.0 - pr) / r.n as f64).sqrt();
            let eb = (pb * (1.0 - pb) / b.n as f64).sqrt();
            sigma.push(asymmetry_nbar(pr, er, pb, eb)?.1);
        }
        fit = fit_linear_weighted(&t, &n, &sigma)?;
    }
    Ok(fit)
}

const MODEL_WEIGHT_PASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Peak {
    pub position: f64,
    pub amplitude: f64,
    pub width: f64,
}

/// Finds resolved maxima of an excitation scan. A point is a peak when it
/// is the largest within `±window` samples and its topographic prominence
/// exceeds `sigmas` projection-noise units at the peak level. Positions are
/// refined by a Lorentzian fit over the neighbourhood, falling back to a
/// parabola.
pub fn find_peaks(x: &[f64], p: &[f64], n_shots: usize, window: usize, sigmas: f64) -> Result<Vec<Peak>> {
    check_xy(x, p, 3)?;
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
    let floor = 1.0 / n_shots.max(1) as f64;
    let noise = |v: f64| (v.max(floor) * (1.0 - v).max(floor) / n_shots.max(1) as f64).sqrt();
    let n = xs.len();
    // Lowest point between i and the nearest higher sample on one side.
    let col = |i: usize, dir: isize| {
        let mut k = i as isize;
        let mut low = ys[i];
        loop {
            k += dir;
            if k < 0 || k >= n as isize {
                return low;
            }
            let v = ys[k as usize];
            if v > ys[i] {
                return low;
            }
            low = low.min(v);
        }
    };
    let mut peaks = Vec::new();
    for i in 0..n {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(n - 1);
        let local_max = (lo..=hi).all(|k| ys[k] < ys[i] || (ys[k] == ys[i] && k >= i));
        if !local_max {
            continue;
        }
        let prominence = ys[i] - col(i, -1).max(col(i, 1));
        if prominence <= sigmas * noise(ys[i]) {
            continue;
        }
        // Centroid of the contiguous region above half prominence.
        let cut = ys[i] - 0.5 * prominence;
        let mut l = i;
        while l > 0 && ys[l - 1] >= cut {
            l -= 1;
        }
        let mut r = i;
        while r + 1 < n && ys[r + 1] >= cut {
            r += 1;
        }
        let (mut w, mut wx) = (0.0, 0.0);
        for k in l..=r {
            w += ys[k] - cut;
            wx += (ys[k] - cut) * xs[k];
        }
        let position = if w > 0.0 { wx / w } else { xs[i] };
        peaks.push(Peak { position, amplitude: prominence, width: xs[r] - xs[l] });
    }
    // A noisy plateau can hold several maxima; keep the strongest.
    peaks.sort_by(|a, b| b.amplitude.total_cmp(&a.amplitude));
    let mut kept: Vec<Peak> = Vec::new();
    for p in peaks {
        if !kept.iter().any(|k| (k.position - p.position).abs() <= 0.5 * k.width.max(p.width)) {
            kept.push(p);
        }
    }
    kept.sort_by(|a, b| a.position.total_cmp(&b.position));
    Ok(kept)
}

/// Centre of symmetry of a peak list: the cluster of pair midpoints with
/// most members that also lies on a peak, averaged over the cluster. With no
/// symmetric pair the strongest peak is returned.
pub fn carrier_position(peaks: &[Peak], tol: f64) -> Option<f64> {
    let mut mids = Vec::new();
    for (i, a) in peaks.iter().enumerate() {
        for b in &peaks[i + 1..] {
            mids.push(0.5 * (a.position + b.position));
        }
    }
    let on_peak = |c: f64| {
        peaks
            .iter()
            .filter(|p| (p.position - c).abs() <= tol.max(0.5 * p.width))
            .map(|p| p.amplitude)
            .fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.max(a))))
    };
    let best = mids
        .iter()
        .filter_map(|&c| {
            let cluster: Vec<f64> = mids.iter().copied().filter(|m| (m - c).abs() < tol).collect();
            on_peak(c).map(|amp| (cluster, amp))
        })
        .max_by(|a, b| a.0.len().cmp(&b.0.len()).then(a.1.total_cmp(&b.1)));
    match best {
        Some((cluster, _)) => Some(cluster.iter().sum::<f64>() / cluster.len() as f64),
        None => peaks.iter().max_by(|a, b| a.amplitude.total_cmp(&b.amplitude)).map(|p| p.position),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumFit {
    pub carrier: f64,
    /// Axial and radial frequencies in the record's unit (ordinary, not angular).
    pub axial: f64,
    pub radial: f64,
    pub peaks: Vec<Peak>,
    /// Matched offsets from the carrier: (label, offset).
    pub assignment: Vec<(String, f64)>,
    /// False when the radial line is identified only by ordering two
    /// symmetric sideband pairs (`ω_ax < ω_rad`), without a combination line.
    pub confirmed: bool,
}

type Candidate = (usize, f64, f64, Vec<(String, f64)>);

/// Identifies carrier, axial and radial frequencies from a spectrum record.
/// The radial line must be confirmed by a second axial or a
/// radial-minus-axial line.
pub fn fit_spectrum(record: &ExperimentRecord, expected_lines: usize) -> Result<SpectrumFit> {
    if record.points.is_empty() {
        return Err(invalid("empty record"));
    }
    let x: Vec<f64> = record.points.iter().map(|p| p.value).collect();
    let y: Vec<f64> = record.points.iter().map(|p| p.p).collect();
    let shots = record.points.iter().map(|p| p.n).min().unwrap_or(1);
    let mut sorted = x.clone();
    sorted.sort_by(f64::total_cmp);
    let mut dx: Vec<f64> = sorted.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).collect();
    dx.sort_by(f64::total_cmp);
    let step = dx.get(dx.len() / 2).copied().unwrap_or(1.0);
    let tol = 2.5 * step;
    let mut peaks = find_peaks(&x, &y, shots, 3, 4.0)?;
    peaks.sort_by(|a, b| b.amplitude.total_cmp(&a.amplitude));
    peaks.truncate(expected_lines.max(1));
    peaks.sort_by(|a, b| a.position.total_cmp(&b.position));
    if peaks.len() < 3 {
        return Err(Error::Spectrum(format!(
            "insufficient lines: found {} resolved peak(s), need a carrier and at least two sidebands",
            peaks.len()
        )));
    }
    let carrier = carrier_position(&peaks, tol).expect("non-empty peak list");
    // Offsets of sidebands, averaging each symmetric pair.
    let mut offsets: Vec<f64> = Vec::new();
    let mut pairs: Vec<f64> = Vec::new();
    for p in &peaks {
        let d = p.position - carrier;
        if d <= tol {
            continue;
        }
        let mirror = peaks.iter().find(|q| (q.position - (carrier - d)).abs() < tol);
        offsets.push(mirror.map_or(d, |m| 0.5 * (d + carrier - m.position)));
        if mirror.is_some() {
            pairs.push(*offsets.last().unwrap());
        }
    }
    for p in &peaks {
        let d = carrier - p.position;
        if d > tol && !offsets.iter().any(|o| (o - d).abs() < tol) {
            offsets.push(d);
        }
    }
    offsets.sort_by(f64::total_cmp);
    pairs.sort_by(f64::total_cmp);
    let matched = |target: f64| offsets.iter().copied().find(|o| (o - target).abs() < tol);
    // (explained lines, axial, radial, assignment)
    let mut candidates: Vec<Candidate> = Vec::new();
    for &a in &offsets {
        for &r in &offsets {
            if r <= a + tol {
                continue;
            }
            let mut hits = vec![("axial".to_string(), a), ("radial".to_string(), r)];
            let mut used = vec![a, r];
            for (label, t) in [("2 axial", 2.0 * a), ("radial - axial", r - a)] {
                if let Some(o) = matched(t) {
                    if !used.iter().any(|u| (u - o).abs() < tol) {
                        used.push(o);
                        hits.push((label.to_string(), o));
                    }
                }
            }
            if hits.len() >= 3 {
                candidates.push((hits.len(), a, r, hits));
            }
        }
    }
    let Some(best) = candidates.iter().map(|c| c.0).max() else {
        if let [a, r] = pairs[..] {
            let hits = vec![("axial".to_string(), a), ("radial".to_string(), r)];
            return Ok(SpectrumFit { carrier, axial: a, radial: r, peaks, assignment: hits, confirmed: false });
        }
        return Err(Error::Spectrum(format!(
            "no assignment explains the sideband offsets {offsets:?}: need two symmetric pairs or a \
             combination line confirming the radial frequency"
        )));
    };
    let top: Vec<_> = candidates.iter().filter(|c| c.0 == best).collect();
    if top.len() > 1 {
        let list: Vec<String> = top.iter().map(|c| format!("(axial {:.4}, radial {:.4})", c.1, c.2)).collect();
        return Err(Error::Spectrum(format!("ambiguous line assignment: {}", list.join(", "))));
    }
    let (_, a, r, hits) = top[0].clone();
    // Average the axial and radial estimates over confirming lines.
    let mut ax = vec![a];
    let mut rad = vec![r];
    for (label, o) in &hits {
        match label.as_str() {
            "2 axial" => ax.push(o / 2.0),
            "radial - axial" => rad.push(o + a),
            _ => {}
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(SpectrumFit { carrier, axial: mean(&ax), radial: mean(&rad), peaks, assignment: hits, confirmed: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atomic::lorentzian;

    #[test]
    fn exponential_exact_recovery() {
        let t: Vec<f64> = (0..12).map(|i| i as f64 * 5e-6).collect();
        let y: Vec<f64> = t.iter().map(|&v| 0.93 * (-45e3 * v).exp()).collect();
        let f = fit_exponential(&t, &y).unwrap();
        assert!((f.value("rate") / 45e3 - 1.0).abs() < 1e-3);
        assert!((f.value("amplitude") / 0.93 - 1.0).abs() < 1e-3);
        let flat = fit_exponential(&t, &[0.5; 12]).unwrap();
        assert!(flat.value("rate").abs() < 1e-9);
        assert!(fit_exponential(&t[..3], &y[..3]).is_err());
    }

    #[test]
    fn linear_fits() {
        let f = fit_linear(&[0.0, 1.0], &[0.56, 2.66]).unwrap();
        assert!((f.value("slope") - 2.1).abs() < 1e-12 && (f.value("intercept") - 0.56).abs() < 1e-12);
        assert_eq!(fit_linear(&[0.0, 1.0, 2.0], &[3.0; 3]).unwrap().value("slope"), 0.0);
        assert!(fit_linear(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]).is_err());
        // Equal weights reduce to ordinary least squares; σ of the slope is
        // σ/√Sxx with absolute errors.
        let (x, y) = ([0.0, 1.0, 2.0, 3.0], [0.5, 2.7, 4.6, 7.0]);
        let (o, w) = (fit_linear(&x, &y).unwrap(), fit_linear_weighted(&x, &y, &[0.2; 4]).unwrap());
        assert!((o.value("slope") - w.value("slope")).abs() < 1e-12);
        assert!((w.get("slope").unwrap().1 - 0.2 / 5f64.sqrt()).abs() < 1e-12);
        // A point with a huge error is ignored.
        let w = fit_linear_weighted(&[0.0, 1.0, 2.0], &[1.0, 3.0, 50.0], &[0.1, 0.1, 1e6]).unwrap();
        assert!((w.value("slope") - 2.0).abs() < 1e-6 && (w.value("intercept") - 1.0).abs() < 1e-6);
        assert!(fit_linear_weighted(&x, &y, &[0.2, 0.0, 0.2, 0.2]).is_err());
    }

    #[test]
    fn lorentzian_dip_and_scale_equivariance() {
        let x: Vec<f64> = (0..81).map(|i| -100.0 + 2.5 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&v| 1.0 - lorentzian(v, 3.0, 37.0, 0.6)).collect();
        let f = fit_lorentzian(&x, &y).unwrap();
        assert!((f.value("fwhm") / 37.0 - 1.0).abs() < 1e-3);
        assert!((f.value("center") - 3.0).abs() < 1e-3);
        let y2: Vec<f64> = y.iter().map(|v| 4.0 * v).collect();
        let g = fit_lorentzian(&x, &y2).unwrap();
        assert!((g.value("center") - f.value("center")).abs() < 1e-6);
        assert!((g.value("fwhm") - f.value("fwhm")).abs() < 1e-6);
    }

    #[test]
    fn asymmetry_estimator() {
        assert_eq!(asymmetry_nbar(0.0, 0.0, 0.4, 0.01).unwrap().0, 0.0);
        assert!((asymmetry_nbar(0.2, 0.0, 0.4, 0.0).unwrap().0 - 1.0).abs() < 1e-15);
        assert!((asymmetry_nbar(0.359, 0.0, 1.0, 0.0).unwrap().0 - 0.56).abs() < 0.001);
        assert!(matches!(asymmetry_nbar(0.5, 0.0, 0.4, 0.0), Err(Error::NoThermometricSolution { .. })));
        // Finite-difference check of the propagated error.
        let (pr, pb, e) = (0.1, 0.3, 1e-6);
        let (_, s) = asymmetry_nbar(pr, e, pb, 0.0).unwrap();
        let d = (asymmetry_nbar(pr + e, 0.0, pb, 0.0).unwrap().0 - asymmetry_nbar(pr, 0.0, pb, 0.0).unwrap().0).abs();
        assert!((s / d - 1.0).abs() < 1e-4);
    }

    fn synthetic(lines: &[(f64, f64)]) -> ExperimentRecord {
        let points = (0..601)
            .map(|i| {
                let x = -3.0 + 0.01 * i as f64;
                let p: f64 = lines.iter().map(|&(c, a)| lorentzian(x, c, 0.06, a)).sum::<f64>().min(1.0);
                RecordPoint { series: String::new(), value: x, shots: vec![], p, err: 0.0, n: 1000 }
            })
            .collect();
        ExperimentRecord { variable: "detuning_mhz".into(), seed: 0, config_hash: String::new(), points }
    }

    #[test]
    fn spectrum_assignment() {
        let (a, r) = (1.2, 2.0);
        let rec = synthetic(&[
            (0.0, 0.8),
            (a, 0.4),
            (-a, 0.4),
            (2.0 * a, 0.1),
            (-2.0 * a, 0.1),
            (r, 0.3),
            (-r, 0.3),
            (r - a, 0.1),
            (a - r, 0.1),
        ]);
        let f = fit_spectrum(&rec, 11).unwrap();
        assert!((f.axial - a).abs() < 0.01 && (f.radial - r).abs() < 0.01, "{f:?}");
        assert!(f.carrier.abs() < 0.01);
        assert!(fit_spectrum(&synthetic(&[(0.0, 0.8)]), 11).is_err());
    }

    #[test]
    fn symmetric_pair_centres_carrier() {
        let rec = synthetic(&[(0.3, 0.8), (1.5, 0.4), (-0.9, 0.4)]);
        let x: Vec<f64> = rec.points.iter().map(|p| p.value).collect();
        let y: Vec<f64> = rec.points.iter().map(|p| p.p).collect();
        let peaks = find_peaks(&x, &y, 1000, 3, 4.0).unwrap();
        assert_eq!(peaks.len(), 3);
        assert!((carrier_position(&peaks, 0.025).unwrap() - 0.3).abs() < 0.01);
    }
}
