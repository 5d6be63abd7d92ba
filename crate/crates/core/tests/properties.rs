use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use segtrap::atomic::{carrier_flop, first_flop_maximum, sideband_flop, MotionalState, RabiModel, Sideband};
use segtrap::constants::angular;
use segtrap::estimators::{asymmetry_nbar, fit_linear, fit_linear_weighted};
use segtrap::numerics::lstsq;
use segtrap::rf::{secular_frequency, stability_q, IonSpecies, RfDrive};
use segtrap::sequence::{projection_noise, ExperimentRecord, RecordPoint};
use segtrap::waveform::{bounded_least_squares, Bounds};

const OMEGA_AX: f64 = 6.9e6;

proptest! {
    #[test]
    fn flop_probabilities_stay_in_unit_interval(
        nbar in 0.0..20.0f64,
        eta in 0.0..0.3f64,
        t_us in 0.0..200.0f64,
        rabi_khz in 1.0..500.0f64,
    ) {
        let state = MotionalState::thermal(nbar, OMEGA_AX).unwrap();
        let (t, w) = (t_us * 1e-6, angular(rabi_khz * 1e3));
        for model in [RabiModel::Linearized, RabiModel::Laguerre] {
            let p = carrier_flop(t, w, eta, &state, model);
            prop_assert!((0.0..=1.0).contains(&p));
        }
        for order in [Sideband::Red, Sideband::Blue] {
            let p = sideband_flop(order, t, w, eta, &state);
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn weak_sideband_asymmetry_recovers_nbar(nbar in 0.02..4.0f64, eta in 0.02..0.1f64) {
        let state = MotionalState::thermal(nbar, OMEGA_AX).unwrap();
        let w = angular(100e3);
        // Pulse area far below π on every populated sideband.
        let t = 1e-3 / (eta * w * (2.0 * nbar + 10.0).sqrt());
        let red = sideband_flop(Sideband::Red, t, w, eta, &state);
        let blue = sideband_flop(Sideband::Blue, t, w, eta, &state);
        let (n, _) = asymmetry_nbar(red, 0.0, blue, 0.0).unwrap();
        prop_assert!((n / nbar - 1.0).abs() < 1e-4, "{n} vs {nbar}");
    }

    #[test]
    fn linear_fit_satisfies_normal_equations(
        pts in prop::collection::vec((-10.0..10.0f64, -5.0..5.0f64), 3..30),
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        prop_assume!(x.iter().any(|v| (v - x[0]).abs() > 1e-3));
        let f = fit_linear(&x, &y).unwrap();
        let (m, b) = (f.value("slope"), f.value("intercept"));
        let r: Vec<f64> = x.iter().zip(&y).map(|(a, c)| c - m * a - b).collect();
        let scale = y.iter().map(|v| v.abs()).sum::<f64>() * 10.0 + 1.0;
        prop_assert!(r.iter().sum::<f64>().abs() < 1e-9 * scale);
        prop_assert!(r.iter().zip(&x).map(|(r, a)| r * a).sum::<f64>().abs() < 1e-9 * scale);

        // Equal weights reduce the weighted fit to the plain one.
        let g = fit_linear_weighted(&x, &y, &vec![0.3; x.len()]).unwrap();
        assert_relative_eq!(g.value("slope"), m, epsilon = 1e-9, max_relative = 1e-9);
        assert_relative_eq!(g.value("intercept"), b, epsilon = 1e-9, max_relative = 1e-9);
    }

    #[test]
    fn projection_noise_scales_as_inverse_root_n(p in 0.0..=1.0f64, n in 1usize..10_000, k in 1usize..50) {
        let one = projection_noise(p, n).unwrap();
        let many = projection_noise(p, n * k * k).unwrap();
        assert_relative_eq!(many * k as f64, one, epsilon = 1e-15, max_relative = 1e-12);
    }

    #[test]
    fn bounded_least_squares_respects_bounds(
        entries in prop::collection::vec(-1.0..1.0f64, 24),
        rhs in prop::collection::vec(-20.0..20.0f64, 8),
        lim in 0.5..10.0f64,
    ) {
        let a = DMatrix::from_row_slice(8, 3, &entries);
        let b = DVector::from_vec(rhs);
        prop_assume!(a.clone().svd(false, false).singular_values.min() > 1e-2);
        let bounds = Bounds { min_v: -lim, max_v: lim };
        let x = bounded_least_squares(&a, &b, &bounds).unwrap();
        prop_assert!(x.iter().all(|&v| bounds.contains(v)), "{x}");

        // Optimality: free variables have zero gradient, clamped ones push outward.
        let g = a.transpose() * (&b - &a * &x);
        let tol = 1e-7 * (a.transpose() * &b).amax().max(1.0);
        for (xi, gi) in x.iter().zip(g.iter()) {
            if *xi == lim {
                prop_assert!(*gi >= -tol);
            } else if *xi == -lim {
                prop_assert!(*gi <= tol);
            } else {
                prop_assert!(gi.abs() <= tol, "free gradient {gi}");
            }
        }

        // An interior optimum is the plain least-squares solution.
        let free = lstsq(&a, &b).unwrap();
        if free.iter().all(|v| v.abs() < lim) {
            prop_assert!((&x - &free).amax() < 1e-8 * free.amax().max(1.0));
        }
    }

    #[test]
    fn stability_parameter_scales_with_drive(c2 in 1e5..1e8f64, u in 10.0..400.0f64, s in 0.1..4.0f64) {
        let ion = IonSpecies::default();
        let drive = RfDrive { amplitude_v: u, ..RfDrive::default() };
        let scaled = RfDrive { amplitude_v: s * u, ..RfDrive::default() };
        let q = stability_q(c2, &drive, &ion).unwrap();
        assert_relative_eq!(stability_q(c2, &scaled, &ion).unwrap(), s * q, max_relative = 1e-12);
        assert_relative_eq!(stability_q(s * c2, &drive, &ion).unwrap(), s * q, max_relative = 1e-12);
        // ω ∝ q ∝ U, so the harmonic pseudopotential energy m ω² r²/2 goes as U².
        let w = secular_frequency(q, &drive).unwrap().lowest_order;
        let ws = secular_frequency(stability_q(c2, &scaled, &ion).unwrap(), &drive).unwrap().lowest_order;
        assert_relative_eq!((ws / w).powi(2), s * s, max_relative = 1e-12);
    }

    #[test]
    fn record_csv_round_trips(
        rows in prop::collection::vec((prop::sample::select(vec!["red", "blue"]), -1e3..1e3f64, 0.0..=1.0f64, 0.0..0.5f64, 1usize..100_000), 1..40),
        seed in any::<u64>(),
    ) {
        let points = rows
            .into_iter()
            .map(|(s, value, p, err, n)| RecordPoint { series: s.into(), value, shots: Vec::new(), p, err, n })
            .collect();
        let rec = ExperimentRecord { variable: "detuning_mhz".into(), seed, config_hash: "ab12".into(), points };
        let back = ExperimentRecord::from_csv(&rec.to_csv().unwrap()).unwrap();
        prop_assert_eq!(back, rec);
    }
}

proptest! {
    // Each case scans the flop on a fine time grid.
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn flop_contrast_falls_with_temperature(nbar in 0.0..8.0f64, extra in 0.5..8.0f64, eta in 0.03..0.12f64) {
        let w = angular(200e3);
        let cold = MotionalState::thermal(nbar, OMEGA_AX).unwrap();
        let hot = MotionalState::thermal(nbar + extra, OMEGA_AX).unwrap();
        let (_, c) = first_flop_maximum(w, eta, &cold, RabiModel::Laguerre);
        let (_, h) = first_flop_maximum(w, eta, &hot, RabiModel::Laguerre);
        prop_assert!(h <= c + 1e-9, "contrast {c} at n̄ = {nbar} vs {h} at n̄ = {}", nbar + extra);
    }
}
