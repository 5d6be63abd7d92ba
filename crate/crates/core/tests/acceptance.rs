//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Expected failures are listed with their reason and do not fail the run.
//! Field solves are cached under the cargo target tmpdir.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use segtrap::atomic::{
    carrier_flop, first_flop_maximum, lamb_dicke, lamb_dicke_recoil, BeamGeometry, MotionalState, RabiModel,
};
use segtrap::config::RunConfig;
use segtrap::constants::{angular, hertz};
use segtrap::estimators::{heating_rate, thermometry};
use segtrap::field::{quadrupole_window_um, FieldCache, FieldSet, SolveOptions};
use segtrap::geometry::{build_trap, TrapGeometry, TrapSpec};
use segtrap::numerics::{bessel_j, polyfit};
use segtrap::report::{characterize, zone_pairs, ZoneSummary};
use segtrap::rf::{micromotion_ratio, pseudopotential, secular_frequency, IonSpecies, RfDrive};
use segtrap::sequence::{
    detect, doppler_cool, shot_rng, sideband_cool_limit_laser, sideband_cool_limit_trap, CoolingParams,
    DetectionParams, Electronic, Engine, EngineParams, Experiment, MicromotionModel, PulseSequence, Schedule, Step,
};
use segtrap::waveform::{shuttle_waveform, AxialBasis, CompensationSetup, ShuttleRequest, SynthesisOptions};
use segtrap::Result;

const FINE_UM: f64 = 12.5;
const COARSE_UM: f64 = 25.0;

/// Criteria expected to fail, with the reason.
const XFAIL: &[(&str, &str)] = &[
    (
        "1",
        "solved c2 is about twice the reference storage value with the same depth; no single \
         layer separation matches both",
    ),
    ("2", "q follows c2, so the storage q and secular frequency inherit the factor from criterion 1"),
    (
        "6a",
        "the thermal flop without decoherence peaks later and higher than the reference 2.5 us / 0.95; \
         the contrast loss needs dephasing the model does not include",
    ),
];

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Result<Check> {
    Ok(Check { pass, detail: detail.into() })
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Storage and processing summaries at one grid spacing.
struct Fields {
    geometry: TrapGeometry,
    cache: PathBuf,
}

impl Fields {
    fn set(&self, spacing: f64) -> FieldSet<'_> {
        FieldSet::new(&self.geometry, spacing, SolveOptions::default(), Some(FieldCache::new(&self.cache)))
    }

    fn summaries(&self, spacing: f64) -> Result<Vec<ZoneSummary>> {
        let set = self.set(spacing);
        zone_pairs(&self.geometry)
            .into_iter()
            .map(|(_, pair)| characterize(&set, pair, &RfDrive::default(), &IonSpecies::default()))
            .collect()
    }
}

struct Ctx {
    fields: Fields,
    fine: Option<Vec<ZoneSummary>>,
    coarse: Option<Vec<ZoneSummary>>,
}

impl Ctx {
    fn fine(&mut self) -> Result<&[ZoneSummary]> {
        if self.fine.is_none() {
            self.fine = Some(self.fields.summaries(FINE_UM)?);
        }
        Ok(self.fine.as_deref().unwrap())
    }

    fn coarse(&mut self) -> Result<&[ZoneSummary]> {
        if self.coarse.is_none() {
            self.coarse = Some(self.fields.summaries(COARSE_UM)?);
        }
        Ok(self.coarse.as_deref().unwrap())
    }
}

fn c1_field_constants(ctx: &mut Ctx) -> Result<Check> {
    let fine: Vec<(f64, f64)> = ctx.fine()?.iter().map(|z| (z.c2, z.fwhm_um)).collect();
    let coarse: Vec<(f64, f64)> = ctx.coarse()?.iter().map(|z| (z.c2, z.fwhm_um)).collect();
    let refs = [0.52e7, 1.99e7];
    let mut pass = true;
    let mut d = Vec::new();
    for ((name, r), (f, c)) in ["storage", "processing"].iter().zip(refs).zip(fine.iter().zip(&coarse)) {
        let ok = within(f.0, r, 0.2 * r);
        let change = (f.0 - c.0).abs() / f.0;
        pass &= ok && change < 0.1;
        d.push(format!(
            "{name} c2 = {:.3}e7 (ref {:.2}e7 ± 20%), grid change {:.1}%",
            f.0 / 1e7,
            r / 1e7,
            100.0 * change
        ));
    }
    check(pass, d.join("; "))
}

fn c2_stability_chain(ctx: &mut Ctx) -> Result<Check> {
    let drive = RfDrive::default();
    let z = ctx.fine()?;
    let (qs, qp) = (z[0].q, z[1].q);
    let w = hertz(z[0].secular.lowest_order) / 1e6;
    let f = secular_frequency(0.14, &drive)?;
    let floquet_dev = (f.floquet.expect("q = 0.14 is stable") / f.lowest_order - 1.0).abs();
    let pass = within(qs, 0.14, 0.02) && within(qp, 0.55, 0.06) && within(w, 1.26, 0.05 * 1.26) && floquet_dev < 0.02;
    check(
        pass,
        format!(
            "q storage {qs:.3} (0.14 ± 0.02), processing {qp:.3} (0.55 ± 0.06), storage ω/2π {w:.3} MHz \
             (1.26 ± 5%), Floquet vs formula at q = 0.14: {:.2}%",
            100.0 * floquet_dev
        ),
    )
}

fn c3_depth(ctx: &mut Ctx) -> Result<Check> {
    let depth = ctx.fine()?[0].depth_ev;
    let set = ctx.fields.set(COARSE_UM);
    let pair = zone_pairs(&ctx.fields.geometry)[0].1;
    let x = ctx.fields.geometry.segments[pair].center_um;
    let rf = set.rf(pair)?;
    let ion = IonSpecies::default();
    let d1 = RfDrive::default();
    let d2 = RfDrive { amplitude_v: 2.0 * d1.amplitude_v, ..d1 };
    let (a, b) = (
        pseudopotential(&rf, &ctx.fields.geometry, &d1, &ion, x)?,
        pseudopotential(&rf, &ctx.fields.geometry, &d2, &ion, x)?,
    );
    let scale = b.values_ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = a.values_ev.iter().zip(&b.values_ev).map(|(u, v)| (v - 4.0 * u).abs()).fold(0.0f64, f64::max) / scale;
    let ratio = b.depth_ev / a.depth_ev;
    let pass = within(depth, 0.755, 0.15 * 0.755) && worst < 1e-12 && (ratio - 4.0).abs() < 1e-12;
    check(
        pass,
        format!(
            "depth {depth:.3} eV (0.755 ± 15%); doubling U scales the map by 4 to {worst:.1e}, depth ratio {ratio:.12}"
        ),
    )
}

fn c4_axial(ctx: &mut Ctx) -> Result<Check> {
    let z = ctx.fine()?;
    let w = hertz(z[0].omega_ax) / 1e6;
    let (fs, fp) = (z[0].fwhm_um, z[1].fwhm_um);
    let pass = within(w, 1.20, 0.12) && within(fs, 500.0, 75.0) && within(fp, 264.0, 0.15 * 264.0);
    check(pass, format!("ω_ax/2π at −5 V {w:.3} MHz (1.20 ± 10%), FWHM storage {fs:.0} µm (500 ± 15%), processing {fp:.0} µm (264 ± 15%)"))
}

fn c5_lamb_dicke(_: &mut Ctx) -> Result<Check> {
    let ion = IonSpecies::default();
    let w = angular(1.1e6);
    let eta = lamb_dicke(&BeamGeometry::spectroscopy_729(), &ion, w)?;
    let sp = lamb_dicke_recoil(393e-9, &ion, w)?;
    check(
        within(eta, 0.065, 0.001) && within(sp, 0.17, 0.01),
        format!("η729 = {eta:.4} (0.065 ± 0.001), η_spont = {sp:.4} (0.17 ± 0.01) at ω_ax/2π = 1.1 MHz"),
    )
}

fn c6a_thermal_flop(_: &mut Ctx) -> Result<Check> {
    let state = MotionalState::thermal(12.0, angular(1.1e6))?;
    let (t, p) = first_flop_maximum(angular(200e3), 0.065, &state, RabiModel::Linearized);
    let t_us = t * 1e6;
    check(
        within(t_us, 2.5, 0.025) && within(p, 0.95, 0.03),
        format!("first maximum at {t_us:.3} µs (2.5 ± 1%) with contrast {p:.3} (0.95 ± 0.03)"),
    )
}

fn c6b_flop_models(_: &mut Ctx) -> Result<Check> {
    let state = MotionalState::thermal(12.0, angular(1.1e6))?;
    let omega0 = angular(200e3);
    let span = 5.0 * 2.0 * std::f64::consts::PI / omega0;
    let worst = (0..=2000)
        .map(|i| {
            let t = span * i as f64 / 2000.0;
            (carrier_flop(t, omega0, 0.065, &state, RabiModel::Linearized)
                - carrier_flop(t, omega0, 0.065, &state, RabiModel::Laguerre))
            .abs()
        })
        .fold(0.0f64, f64::max);
    check(worst <= 0.01, format!("linearized vs Laguerre Fock sum over 5 periods: max |ΔP| = {worst:.4} (≤ 0.01)"))
}

fn c7_cooling_limits(_: &mut Ctx) -> Result<Check> {
    let mut p = EngineParams { omega_ax: angular(1.1e6), ..EngineParams::default() };
    p.heating_rate = 0.0;
    let laser = sideband_cool_limit_laser(&CoolingParams { gamma_eff_hz: 90e3, ..p.cooling(1.0, 200.0) })?;
    let eq1 = (0.005..=0.02).contains(&laser);

    // Rate process with trap heating, 20000 ions from a Doppler-cooled start.
    p.heating_rate = 2100.0;
    let c = p.cooling(3.0, 145.0);
    let (nss, w) = sideband_cool_limit_trap(&c)?;
    let start = doppler_cool(&p.doppler, p.omega_ax, 2e-3)?;
    let duration = 20.0 / w;
    let n = 20_000;
    let mean = (0..n)
        .map(|i| {
            let mut rng = shot_rng(7, 0, i);
            let n0 = sample(&start, &mut rng);
            c.evolve(n0, duration, &mut rng) as f64
        })
        .sum::<f64>()
        / n as f64;
    let dev = (mean / nss - 1.0).abs();
    check(
        eq1 && dev < 0.05,
        format!(
            "closed-form limit {laser:.4} at γ_eff = 90 kHz (0.01 within ×2); simulated steady state {mean:.3} vs Γ/W = {nss:.3} ({:.1}%)",
            100.0 * dev
        ),
    )
}

fn sample<R: rand::Rng>(state: &MotionalState, rng: &mut R) -> u64 {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (n, p) in state.populations().iter().enumerate() {
        acc += p;
        if u < acc {
            return n as u64;
        }
    }
    state.populations().len() as u64
}

fn recipe(name: &str) -> Result<RunConfig> {
    RunConfig::load(&repo().join("recipes").join(name))
}

fn set_sideband_cool(exp: &mut Experiment, rabi: f64) {
    for s in &mut exp.steps {
        match s {
            Step::SidebandCool { rabi_khz, .. } => *rabi_khz = rabi,
            Step::Wait { duration_ms } => *duration_ms = 0.0,
            _ => {}
        }
    }
}

/// Independent realisations behind each statistical criterion. A single run
/// lands outside 2σ one time in twenty, so coverage is what gets checked.
const C8_SEEDS: u64 = 100;
const C9_SEEDS: u64 = 12;

fn c8_thermometry(_: &mut Ctx) -> Result<Check> {
    let cfg = recipe("thermometry.toml")?;
    let params = cfg.engine_params()?;
    let engine = Engine::new(params.clone())?;
    let p854 = cfg
        .experiment()?
        .steps
        .iter()
        .find_map(|s| if let Step::SidebandCool { p854_uw, .. } = s { Some(*p854_uw) } else { None })
        .expect("recipe cools");
    let mut pass = true;
    let mut d = Vec::new();
    for target in [0.3, 0.56, 1.2] {
        let omega0 = params.cooling(p854, 100.0).omega0_for_nbar(target)?;
        let mut exp = cfg.experiment()?.clone();
        set_sideband_cool(&mut exp, hertz(omega0) / 1e3);
        assert_eq!(exp.shots, 250);
        let phonons = engine.final_phonons(&exp.sequence()?, 20_000, cfg.seed)?;
        let internal = phonons.iter().sum::<u64>() as f64 / phonons.len() as f64;
        let mut pulls = Vec::new();
        let mut first = (0.0, 0.0);
        for k in 0..C8_SEEDS {
            let rec = engine.run_experiment(&exp, cfg.seed + k)?;
            let (n, e) = thermometry(&rec, "red", "blue")?;
            if k == 0 {
                first = (n, e);
            }
            pulls.push((n - internal) / e);
        }
        let covered = pulls.iter().filter(|z| z.abs() <= 2.0).count() as f64 / pulls.len() as f64;
        let bias = pulls.iter().sum::<f64>() / pulls.len() as f64;
        // A/(1−A) from about a dozen red counts pulls slightly low.
        pass &= covered >= 0.9 && bias.abs() <= 0.5;
        d.push(format!(
            "{internal:.2}: seed {} gives {:.2}({:.0}), {:.0}% within 2σ, mean pull {bias:+.2}",
            cfg.seed,
            first.0,
            100.0 * first.1,
            100.0 * covered
        ));
    }
    check(pass, format!("N = 250, {C8_SEEDS} seeds per n̄ (need ≥ 90% within 2σ, nominal 95%): {}", d.join("; ")))
}

fn c9_heating(_: &mut Ctx) -> Result<Check> {
    let cfg = recipe("heating.toml")?;
    let params = cfg.engine_params()?;
    let engine = Engine::new(params.clone())?;
    let exp = cfg.experiment()?;
    let mut seq = exp.sequence()?;
    for s in &mut seq.steps {
        if let Step::Wait { duration_ms } = s {
            *duration_ms = 0.0;
        }
    }
    let injected = params.heating_rate / 1e3;
    let mut ok = 0;
    let mut first = String::new();
    let (mut slopes, mut offsets) = (0.0, 0.0);
    for k in 0..C9_SEEDS {
        let seed = cfg.seed + k;
        let fit = heating_rate(&engine.run_experiment(exp, seed)?, "red", "blue")?;
        let (slope, ss) = fit.get("slope").unwrap();
        let (icpt, si) = fit.get("intercept").unwrap();
        let phonons = engine.final_phonons(&seq, 20_000, seed)?;
        let n0 = phonons.iter().sum::<u64>() as f64 / phonons.len() as f64;
        ok += (within(slope, injected, 0.3) && within(icpt, n0, 0.05)) as usize;
        slopes += slope;
        offsets += icpt - n0;
        if k == 0 {
            first = format!(
                "seed {seed}: slope {slope:.2}({:.0}), intercept {icpt:.3}({:.0}) vs {n0:.3}",
                100.0 * ss,
                1000.0 * si
            );
        }
    }
    let n = C9_SEEDS as f64;
    check(
        ok as f64 >= 0.8 * n && within(slopes / n, injected, 0.1) && (offsets / n).abs() <= 0.02,
        format!(
            "{ok}/{C9_SEEDS} seeds within slope {injected} ± 0.3 /ms and intercept ± 0.05 (need ≥ 80%), mean slope {:.3}, \
             mean intercept offset {:+.3}, {} shots/point; {first}",
            slopes / n,
            offsets / n,
            exp.shots
        ),
    )
}

fn c10_micromotion(ctx: &mut Ctx) -> Result<Check> {
    // β = 0 leaves the micromotion sideband dark.
    let p = EngineParams { micromotion: MicromotionModel { beta0: 0.0, dbeta_dv: 1.0 }, ..EngineParams::default() };
    let engine = Engine::new(p.clone())?;
    let rf_mhz = hertz(p.omega_rf) / 1e6;
    let seq = PulseSequence::new(vec![
        Step::DopplerCool { duration_ms: 2.0 },
        Step::OpticalPump { duration_us: 5.0 },
        Step::SpecPulse { detuning_mhz: rf_mhz, duration_us: 20.0, rabi_khz: 500.0 },
    ])?;
    let sideband = |beta: f64| {
        (0..20u64).all(|n| p.lines(1.0, n, n, beta).iter().filter(|l| l.micromotion != 0).all(|l| l.rabi == 0.0))
    };
    let dark_lines = sideband(0.0) && !sideband(0.4);
    // What remains at β = 0 is off-resonant carrier leakage, ≲ (Ω/Ω_rf)².
    let leakage = (500e3 / rf_mhz / 1e6_f64).powi(2);
    let dark = engine.run_point(&seq, 0.0, 2000, 1, 0)?.iter().filter(|&&d| d).count();
    let lit = engine.run_point(&seq, 0.4, 2000, 1, 0)?.iter().filter(|&&d| d).count();
    let dark_ok = (dark as f64) <= 2000.0 * leakage + 4.0 * (2000.0 * leakage).sqrt().max(1.0);

    // Excitation ratio across the compensation voltage, from solved fields.
    let set = ctx.fields.set(COARSE_UM);
    let pair = zone_pairs(&ctx.fields.geometry)[0].1;
    let seg = ctx.fields.geometry.segments[pair];
    let rf = set.rf(pair)?;
    let (_, diff) = set.dc_pair(pair)?;
    let setup = CompensationSetup::from_fields(
        &rf,
        &diff,
        seg.center_um,
        quadrupole_window_um(seg.slit_um, &rf),
        -5.0,
        RfDrive::default(),
        IonSpecies::default(),
        &BeamGeometry::spectroscopy_729(),
    )?;
    let stray = [0.0, 50.0];
    let comp = setup.compensate(stray)?;
    let v: Vec<f64> = (0..21).map(|i| comp.differential_v + 0.004 * (i as f64 - 10.0)).collect();
    let scan = setup.scan(stray, &v)?;
    let x: Vec<f64> = scan.iter().map(|s| s.differential_v - comp.differential_v).collect();
    let y: Vec<f64> = scan.iter().map(|s| s.excitation_ratio).collect();
    let c = polyfit(&x, &y, 2)?;
    let rms = (x.iter().zip(&y).map(|(a, b)| (b - (c[0] + c[1] * a + c[2] * a * a)).powi(2)).sum::<f64>()
        / x.len() as f64)
        .sqrt();
    let ymax = y.iter().cloned().fold(0.0, f64::max);
    let vertex = -c[1] / (2.0 * c[2]);
    // (J₁/J₀)² = β²/4 (1 + β²/4 + …): the quartic sets the scale of the misfit.
    let beta_max = scan.iter().map(|s| s.beta).fold(0.0, f64::max);
    let quadratic = rms < ymax * beta_max.powi(2) / 4.0 && c[2] > 0.0 && vertex.abs() < 1e-3;

    // |J₁/J₀ − β/2| ≤ β³/8 for β ≤ 1.
    let bound = (1..=100).all(|i| {
        let b = i as f64 / 100.0;
        (bessel_j(1, b) / bessel_j(0, b) - b / 2.0).abs() <= b.powi(3) / 8.0
            && micromotion_ratio(b).map(|r| (r.rabi_ratio - b / 2.0).abs() <= b.powi(3) / 8.0).unwrap_or(false)
    });
    check(
        dark_lines && dark_ok && lit > 10 * dark.max(1) && quadratic && bound,
        format!(
            "RF sideband coupling {} at β = 0, excitations {dark}/2000 (carrier leakage ≲ {:.1e}), {lit}/2000 at β = 0.4; \
             quadratic fit over β ≤ {beta_max:.3} rms {:.1e} of peak {ymax:.2e}, \
             vertex offset {vertex:.1e} V at ΔV = {:.4} V; Bessel bound {}",
            if dark_lines { "zero" } else { "nonzero" },
            leakage,
            rms,
            comp.differential_v,
            if bound { "holds" } else { "violated" }
        ),
    )
}

fn c11_detection(_: &mut Ctx) -> Result<Check> {
    let params = DetectionParams::default();
    let n = 400_000u64;
    let mut d_as_s = 0u64;
    let mut s_as_d = 0u64;
    for i in 0..n {
        let mut rng = shot_rng(11, 0, i);
        if detect(Electronic::D, 5e-3, &params, &mut rng)?.classified == Electronic::S {
            d_as_s += 1;
        }
        let mut rng = shot_rng(11, 1, i);
        if detect(Electronic::S, 5e-3, &params, &mut rng)?.classified == Electronic::D {
            s_as_d += 1;
        }
    }
    let mc = d_as_s as f64 / n as f64;
    let exact = params.error_probabilities(5e-3);
    let sigma = (exact.d_as_s / n as f64).sqrt();
    check(
        (1.5e-3..=6e-3).contains(&mc) && (mc - exact.d_as_s).abs() < 4.0 * sigma,
        format!(
            "D→S {mc:.2e} (3e-3 within ×2; quadrature {:.2e}), S→D {:.1e}, threshold {} counts",
            exact.d_as_s,
            s_as_d as f64 / n as f64,
            params.threshold_for(5e-3)
        ),
    )
}

fn c12_determinism(ctx: &mut Ctx) -> Result<Check> {
    let cfg = recipe("spectrum.toml")?;
    let exp = cfg.experiment()?;
    let engine = Engine::new(cfg.engine_params()?)?;
    let a = engine.run_experiment(exp, cfg.seed)?.to_csv()?;
    let b = engine.run_experiment(exp, cfg.seed)?.to_csv()?;
    let serial = engine.clone().with_schedule(Schedule::Serial).run_experiment(exp, cfg.seed)?.to_csv()?;
    let other = engine.run_experiment(exp, cfg.seed + 1)?.to_csv()?;

    let set = ctx.fields.set(COARSE_UM);
    let tops = set.all_dc_tops()?;
    let basis = AxialBasis::from_fields(&ctx.fields.geometry, &tops, 2.5)?;
    let req = ShuttleRequest {
        start_pair: 3,
        end_pair: 5,
        duration_us: 50.0,
        samples: 41,
        omega: angular(1.2e6),
        synthesis: SynthesisOptions::default(),
        max_step_v: None,
    };
    let ion = IonSpecies::default();
    let w1 = shuttle_waveform(&basis, &req, &ion)?.to_csv()?;
    let w2 = shuttle_waveform(&basis, &req, &ion)?.to_csv()?;
    check(
        a == b && a == serial && a != other && w1 == w2 && cfg.config_hash() == recipe("spectrum.toml")?.config_hash(),
        format!(
            "{} record bytes identical on rerun and serial schedule, differ for another seed; waveform rerun identical",
            a.len()
        ),
    )
}

type Criterion = fn(&mut Ctx) -> Result<Check>;

fn main() -> ExitCode {
    let cache = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-fields");
    let geometry = build_trap(&TrapSpec::default()).expect("default trap builds");
    let mut ctx = Ctx { fields: Fields { geometry, cache }, fine: None, coarse: None };
    let criteria: &[(&str, &str, Criterion)] = &[
        ("1", "field constants", c1_field_constants),
        ("2", "stability and secular chain", c2_stability_chain),
        ("3", "trap depth", c3_depth),
        ("4", "axial potentials", c4_axial),
        ("5", "Lamb-Dicke parameters", c5_lamb_dicke),
        ("6a", "thermal Rabi flop", c6a_thermal_flop),
        ("6b", "flop model agreement", c6b_flop_models),
        ("7", "cooling limits", c7_cooling_limits),
        ("8", "thermometry round trip", c8_thermometry),
        ("9", "heating-rate pipeline", c9_heating),
        ("10", "micromotion", c10_micromotion),
        ("11", "detection", c11_detection),
        ("12", "determinism", c12_determinism),
    ];
    let mut unexpected = 0;
    for (id, name, f) in criteria {
        let start = Instant::now();
        let xfail = XFAIL.iter().find(|(x, _)| x == id).map(|(_, why)| *why);
        let (pass, detail) = match f(&mut ctx) {
            Ok(c) => (c.pass, c.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let secs = start.elapsed().as_secs_f64();
        let verdict = if pass { "PASS" } else { "FAIL" };
        match (pass, xfail) {
            (true, None) => println!("{verdict} [{id:>3}] {name}: {detail} ({secs:.1} s)"),
            (false, None) => {
                unexpected += 1;
                println!("{verdict} [{id:>3}] {name}: {detail} ({secs:.1} s)");
            }
            (false, Some(why)) => println!("{verdict} [{id:>3}] {name}: {detail} ({secs:.1} s) [xfail: {why}]"),
            (true, Some(_)) => {
                println!("{verdict} [{id:>3}] {name}: {detail} ({secs:.1} s) [listed as xfail but passed]")
            }
        }
    }
    if unexpected > 0 {
        println!("{unexpected} unexpected failure(s)");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
