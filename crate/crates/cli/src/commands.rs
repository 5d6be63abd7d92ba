use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use segtrap::config::RunConfig;
use segtrap::constants::hertz;
use segtrap::estimators::{
    fit_exponential, fit_linear, fit_lorentzian, fit_spectrum, heating_rate, nbar_by_scan_value, thermometry, FitResult,
};
use segtrap::field::{quadrupole_window_um, FieldSet};
use segtrap::report::{characterize, compare, format_report, zone_pairs, ToleranceProfile, ZoneSummary};
use segtrap::sequence::{
    sideband_cool_limit_laser, sideband_cool_limit_trap, Engine, ExperimentRecord, Schedule, Step,
};
use segtrap::waveform::{shuttle_waveform, AxialBasis, CompensationSetup};
use segtrap::Error;

use crate::{exit, Cli, Command, Failure, FitModel};

struct Context {
    cfg: RunConfig,
    seed: u64,
    out: PathBuf,
    hash: String,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self, Failure> {
        let cfg = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => {
                let c = RunConfig::default();
                c.validate()?;
                c
            }
        };
        let seed = cli.seed.unwrap_or(cfg.seed);
        let out = cli.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&out).map_err(|e| io_failure(&out, e))?;
        let hash = cfg.config_hash();
        Ok(Self { cfg, seed, out, hash })
    }

    fn header(&self) -> String {
        format!("config_hash = {}\nseed = {}", self.hash, self.seed)
    }

    /// `text` with the hash and seed as leading comment lines, kept after an
    /// existing first comment line.
    fn stamped(&self, text: &str) -> String {
        let stamp = format!("# config_hash = {}\n# seed = {}\n", self.hash, self.seed);
        match text.split_once('\n') {
            Some((first, rest)) if first.starts_with('#') => format!("{first}\n{stamp}{rest}"),
            _ => format!("{stamp}{text}"),
        }
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf, Failure> {
        let path = self.out.join(name);
        fs::write(&path, text).map_err(|e| io_failure(&path, e))?;
        info!("wrote {}", path.display());
        Ok(path)
    }

    fn field_set<'g>(&self, geometry: &'g segtrap::geometry::TrapGeometry, spacing_um: f64) -> FieldSet<'g> {
        FieldSet::new(geometry, spacing_um, self.cfg.solve_options(), self.cfg.cache())
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: exit::IO, message: format!("{}: {e}", path.display()) }
}

/// Solver errors tagged with the electrode or stage that produced them.
fn solver(context: &str) -> impl Fn(Error) -> Failure + '_ {
    move |e| {
        let mut f = Failure::from(e);
        f.message = format!("{context}: {}", f.message);
        f
    }
}

pub fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let ctx = Context::new(cli)?;
    match &cli.command {
        Command::SolveFields { spacing_um } => solve_fields(&ctx, spacing_um.unwrap_or(ctx.cfg.grid.spacing_um)),
        Command::Run { serial } => run(&ctx, *serial),
        Command::Fit { record, model, red, blue, lines } => fit(&ctx, record, *model, red, blue, *lines),
        Command::Waveform => waveform(&ctx),
        Command::Report { fields } => report(&ctx, *fields, cli.tolerance_profile.into()),
    }
}

fn zone_summaries(ctx: &Context, set: &FieldSet) -> Result<Vec<ZoneSummary>, Failure> {
    let (drive, ion) = (ctx.cfg.drive(), ctx.cfg.ion());
    zone_pairs(set.geometry)
        .into_iter()
        .map(|(zone, pair)| characterize(set, pair, &drive, &ion).map_err(solver(&format!("{zone} pair {pair}"))))
        .collect()
}

fn solve_fields(ctx: &Context, spacing_um: f64) -> Result<(), Failure> {
    if !(spacing_um > 0.0) {
        return Err(Failure {
            code: exit::CONFIG,
            message: format!("grid spacing must be positive, got {spacing_um}"),
        });
    }
    let geometry = ctx.cfg.geometry()?;
    let set = ctx.field_set(&geometry, spacing_um);
    for pair in 0..geometry.segments.len() {
        set.dc_top(pair).map_err(solver(&format!("DC pair {pair}")))?;
    }
    let summaries = zone_summaries(ctx, &set)?;
    for (id, outcome) in set.fetched() {
        if let Some(o) = outcome {
            info!("{id:?}: {o:?}");
        }
    }
    let lines: Vec<_> = summaries.iter().flat_map(|z| compare(z, ToleranceProfile::Reference)).collect();
    let header = format!("{}\nspacing_um = {spacing_um}", ctx.header());
    let text = format_report(&summaries, &lines, &header);
    ctx.write("fields_report.txt", &text)?;
    for z in &summaries {
        ctx.write(&format!("axial_{}.csv", z.zone), &ctx.stamped(&z.axial.to_csv()))?;
        ctx.write(
            &format!("pseudo_{}.csv", z.zone),
            &ctx.stamped(&z.pseudo.contour_csv(&[0.125, 0.25, 0.375, 0.5, 0.625, 0.75])),
        )?;
    }
    print!("{text}");
    Ok(())
}

fn run(ctx: &Context, serial: bool) -> Result<(), Failure> {
    let exp = ctx.cfg.experiment()?;
    let mut engine = Engine::new(ctx.cfg.engine_params()?)?;
    if serial {
        engine = engine.with_schedule(Schedule::Serial);
    }
    let mut record = engine.run_experiment(exp, ctx.seed)?;
    record.config_hash = ctx.hash.clone();
    let path = ctx.out.join("record.csv");
    record.save(&path)?;
    println!("{} points of {} shots -> {}", record.points.len(), exp.shots, path.display());
    Ok(())
}

fn fit(ctx: &Context, path: &Path, model: FitModel, red: &str, blue: &str, lines: usize) -> Result<(), Failure> {
    let record = ExperimentRecord::load(path)?;
    if record.points.is_empty() {
        return Err(Failure { code: exit::CONFIG, message: format!("{}: record has no points", path.display()) });
    }
    let x: Vec<f64> = record.points.iter().map(|p| p.value).collect();
    let y: Vec<f64> = record.points.iter().map(|p| p.p).collect();
    let fitted = |r: FitResult| -> Result<String, Failure> {
        if !r.converged {
            return Err(Failure { code: exit::SOLVER, message: "fit did not converge".into() });
        }
        Ok(r.to_text())
    };
    let (name, body) = match model {
        FitModel::Exponential => ("exponential", fitted(fit_exponential(&x, &y)?)?),
        FitModel::Linear => ("linear", fitted(fit_linear(&x, &y)?)?),
        FitModel::Lorentzian => ("lorentzian", fitted(fit_lorentzian(&x, &y)?)?),
        FitModel::Spectrum => {
            let s = fit_spectrum(&record, lines)?;
            let mut t = format!(
                "carrier = {:e}\naxial = {:e}\nradial = {:e}\nconfirmed = {}\npeaks = {}\n",
                s.carrier,
                s.axial,
                s.radial,
                s.confirmed,
                s.peaks.len()
            );
            for (label, offset) in &s.assignment {
                let _ = writeln!(t, "[[line]]\nlabel = \"{label}\"\noffset = {offset:e}");
            }
            ("spectrum", t)
        }
        FitModel::Thermometry => {
            let (n, e) = thermometry(&record, red, blue)?;
            ("thermometry", format!("nbar = {n:e}\nsigma = {e:e}\n"))
        }
        FitModel::Heating => {
            let r = heating_rate(&record, red, blue)?;
            let mut t = fitted(r)?;
            for (v, n, e) in nbar_by_scan_value(&record, red, blue)? {
                let _ = writeln!(t, "[[nbar]]\n{} = {v:e}\nvalue = {n:e}\nsigma = {e:e}", record.variable);
            }
            ("heating", t)
        }
    };
    let text = format!(
        "# record = {}\nmodel = \"{name}\"\nvariable = \"{}\"\nseed = {}\nconfig_hash = \"{}\"\n{body}",
        path.display(),
        record.variable,
        record.seed,
        record.config_hash
    );
    ctx.write(&format!("fit_{name}.toml"), &text)?;
    print!("{text}");
    Ok(())
}

fn waveform(ctx: &Context) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let wcfg = cfg.waveform.clone().unwrap_or_default();
    let geometry = cfg.geometry()?;
    let set = ctx.field_set(&geometry, cfg.grid.spacing_um);
    let tops = set.all_dc_tops().map_err(solver("DC basis"))?;
    let basis = AxialBasis::from_fields(&geometry, &tops, cfg.grid.basis_step_um)?;
    let ion = cfg.ion();
    let wf = shuttle_waveform(&basis, &wcfg.request(), &ion)?;
    let path = ctx.out.join("waveform.csv");
    wf.save(&path, ctx.seed, &ctx.hash)?;
    let mut text = format!("# {}\n", ctx.header().replace('\n', "\n# "));
    let _ =
        writeln!(text, "start_pair = {}\nend_pair = {}\nsamples = {}", wf.start_pair, wf.end_pair, wf.times_us.len());
    let _ = writeln!(text, "target_axial_mhz = {:.4}", hertz(wf.target_omega) / 1e6);
    let _ = writeln!(text, "max_relative_drift = {:.4e}", wf.max_drift());
    let _ = writeln!(text, "max_step_v = {:.4e}", wf.max_step());

    if let Some(c) = &cfg.compensation {
        let seg = geometry.segments[c.pair];
        let rf = set.rf(c.pair).map_err(solver(&format!("RF at pair {}", c.pair)))?;
        let (_, diff) = set.dc_pair(c.pair).map_err(solver(&format!("DC pair {}", c.pair)))?;
        let mut setup = CompensationSetup::from_fields(
            &rf,
            &diff,
            seg.center_um,
            quadrupole_window_um(seg.slit_um, &rf),
            c.base_v,
            cfg.drive(),
            ion,
            &cfg.beam()?,
        )?;
        setup.bounds = wcfg.synthesis().bounds;
        let comp = setup.compensate(c.stray_field_v_per_m)?;
        let n = c.sweep_points;
        let volts: Vec<f64> = (0..n)
            .map(|i| comp.differential_v + c.sweep_half_span_v * (2.0 * i as f64 / (n - 1) as f64 - 1.0))
            .collect();
        let mut csv = String::from("differential_v,beta,excitation_ratio\n");
        for p in setup.scan(c.stray_field_v_per_m, &volts)? {
            let _ = writeln!(csv, "{},{},{}", p.differential_v, p.beta, p.excitation_ratio);
        }
        ctx.write("compensation.csv", &ctx.stamped(&csv))?;
        let _ = writeln!(text, "\n[compensation]\npair = {}", c.pair);
        let _ = writeln!(text, "differential_v = {:.6}", comp.differential_v);
        let _ = writeln!(text, "beta_uncompensated = {:.6e}", comp.beta_uncompensated);
        let _ = writeln!(text, "beta_residual = {:.6e}", comp.beta_residual);
        let _ = writeln!(text, "beta0 = {:.6e}\ndbeta_per_v = {:.6e}", comp.model.beta0, comp.model.dbeta_dv);
    }
    ctx.write("waveform_report.txt", &text)?;
    print!("{text}");
    Ok(())
}

fn report(ctx: &Context, fields: bool, profile: ToleranceProfile) -> Result<(), Failure> {
    let p = ctx.cfg.engine_params()?;
    let mut text = format!("# {}\n", ctx.header().replace('\n', "\n# "));
    let _ = writeln!(text, "eta_axial = {:.5}", p.eta());
    let _ = writeln!(text, "eta_radial = {:.5}", p.eta_radial());
    let _ = writeln!(text, "eta_spont = {:.5}", p.eta_spont());
    let _ = writeln!(text, "doppler_nbar = {:.3}", p.doppler.nbar(p.omega_ax));
    let steps: Vec<Step> = ctx.cfg.experiment.as_ref().map(|e| e.steps.clone()).unwrap_or_default();
    for s in &steps {
        match *s {
            Step::SidebandCool { p854_uw, rabi_khz, .. } => {
                let c = p.cooling(p854_uw, rabi_khz);
                let laser = sideband_cool_limit_laser(&c)?;
                let _ = writeln!(text, "\n[sideband_cool]\np854_uw = {p854_uw}\nrabi_khz = {rabi_khz}");
                let _ = writeln!(text, "gamma_eff_khz = {:.3}", c.gamma_eff_hz / 1e3);
                let _ = writeln!(text, "nbar_laser_limit = {laser:.4e}");
                match sideband_cool_limit_trap(&c) {
                    Ok((n, w)) => {
                        let _ = writeln!(text, "nbar_heating_limit = {n:.4e}\nnet_cooling_rate_per_s = {w:.4e}");
                    }
                    Err(e) => {
                        let _ = writeln!(text, "nbar_heating_limit = \"{e}\"");
                    }
                }
            }
            Step::Detect { duration_ms } => {
                let e = p.detection.error_probabilities(duration_ms * 1e-3);
                let _ = writeln!(text, "\n[detect]\nduration_ms = {duration_ms}");
                let _ = writeln!(text, "threshold = {}", p.detection.threshold_for(duration_ms * 1e-3));
                let _ = writeln!(text, "s_as_d = {:.4e}\nd_as_s = {:.4e}", e.s_as_d, e.d_as_s);
            }
            _ => {}
        }
    }
    if fields {
        let geometry = ctx.cfg.geometry()?;
        let set = ctx.field_set(&geometry, ctx.cfg.grid.spacing_um);
        let summaries = zone_summaries(ctx, &set)?;
        let lines: Vec<_> = summaries.iter().flat_map(|z| compare(z, profile)).collect();
        text.push('\n');
        text.push_str(&format_report(&summaries, &lines, &format!("tolerance_profile = {profile:?}")));
    }
    ctx.write("report.txt", &text)?;
    print!("{text}");
    Ok(())
}
