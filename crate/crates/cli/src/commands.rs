//! The subcommands. Each writes its CSV files through an [`OutDir`] and prints a summary.

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use silentwave::fourier::{sobolev_norm, ModeField, ModeSet};
use silentwave::kasner::{
    apply_constraints, constraint_residuals, div_omega, energy_along_geodesic, evolve, faraday, generic_constrained_data,
    leading_energy_coefficient, DataEnvelope, EnergyReport, Geodesic, KasnerExponents, PotentialState,
};
use silentwave::linalg::vec_norm;
use silentwave::modeode::{fit_decay, DecayFit};
use silentwave::silentpde::{
    check_conditions, default_check_modes, default_check_times, extract_field_data, phi_infty, solve, ConditionOptions,
    FieldExtraction,
};

use crate::config::{Loaded, DEFAULT_SEED};
use crate::data::{initial_data, mode_file, random_hermitian};
use crate::error::CliError;
use crate::output::{num, opt, print_table, Meta, OutDir, Table};

/// Command-line settings shared by every subcommand.
pub struct Ctx {
    pub loaded: Option<Loaded>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub project_constraints: bool,
}

impl Ctx {
    fn loaded(&self) -> Result<&Loaded, CliError> {
        self.loaded.as_ref().ok_or_else(|| CliError::Config("this command needs --config PATH".into()))
    }

    pub fn seed(&self) -> u64 {
        self.seed.or(self.loaded.as_ref().and_then(|l| l.config.seed)).unwrap_or(DEFAULT_SEED)
    }

    fn out_dir(&self, command: &'static str) -> Result<OutDir, CliError> {
        let dir = self
            .out
            .clone()
            .or_else(|| self.loaded.as_ref().and_then(|l| l.config.out.clone()))
            .unwrap_or_else(|| PathBuf::from("silentwave-out"));
        let config_sha256 = self.loaded.as_ref().map_or_else(|| "none".to_string(), |l| l.sha256.clone());
        OutDir::create(&dir, Meta { command, config_sha256, seed: self.seed() })
    }
}

fn mode_cells(n: &[i64]) -> Vec<String> {
    n.iter().map(|x| x.to_string()).collect()
}

fn mode_header(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("n{j}")).collect()
}

fn report_written(out: &OutDir) {
    for p in out.written() {
        println!("wrote {}", p.display());
    }
}

pub fn check(ctx: &Ctx) -> Result<(), CliError> {
    let l = ctx.loaded()?;
    let cfg = &l.config;
    let sys = cfg.system.build()?;
    let n_max = cfg.check.n_max.unwrap_or(cfg.solve.n_max);
    let modes = default_check_modes(sys.d(), n_max);
    let times = cfg.check.times.as_ref().map_or_else(default_check_times, |t| t.values());
    let opts = ConditionOptions {
        allowance: cfg.check.allowance,
        allowance_low: cfg.check.allowance,
        c_coeff_bound: cfg.check.c_coeff_bound,
    };
    let rep = check_conditions(&sys, &modes, &times, &opts);
    let verdict = |ok: bool| if ok { "pass" } else { "fail" }.to_string();
    let rows: Vec<Vec<String>> = rep.rows().into_iter().map(|(c, v, ok)| vec![c, v, verdict(ok)]).collect();
    println!("{} modes, {} times", modes.len(), times.len());
    print_table(&["check", "value", "result"], &rows);
    let mut out = ctx.out_dir("check")?;
    let mut t = Table::new(&["check", "value", "result"]);
    for r in &rows {
        t.row(r);
    }
    t.row(&["overall".to_string(), String::new(), verdict(rep.passed())]);
    out.table("check.csv", t)?;
    report_written(&out);
    if rep.passed() {
        Ok(())
    } else {
        let failed: Vec<String> = rep.rows().into_iter().filter(|r| !r.2).map(|r| r.0).collect();
        Err(CliError::Failed(format!("conditions violated: {}", failed.join("; "))))
    }
}

/// Fits the leading run of samples above the floor 1e−13·scale; the fit window ends at the
/// last sample kept. Fewer than three such samples count as below the floor.
fn fit_above_floor(t: &[f64], r: &[f64], scale: f64) -> silentwave::Result<(DecayFit, Option<f64>)> {
    let keep = r.iter().take_while(|x| **x > 1e-13 * scale).count();
    if keep < 3 {
        return Ok((DecayFit::BelowFloor, None));
    }
    let fit = fit_decay(&t[..keep], &r[..keep], (t[0], t[keep - 1]), scale)?;
    Ok((fit, Some(t[keep - 1])))
}

fn fit_cells(fit: &(DecayFit, Option<f64>)) -> [String; 6] {
    match fit {
        (DecayFit::Slope { slope, intercept, r2, n }, end) => {
            ["fit".into(), num(*slope), num(*intercept), num(*r2), n.to_string(), opt(*end)]
        }
        (DecayFit::BelowFloor, _) => ["below_floor".into(), String::new(), String::new(), String::new(), String::new(), String::new()],
    }
}

pub fn solve_cmd(ctx: &Ctx) -> Result<(), CliError> {
    let l = ctx.loaded()?;
    let cfg = &l.config;
    let s = &cfg.solve;
    let sys = cfg.system.build()?;
    let (d, m) = (sys.d(), sys.m());
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed());
    let (u0, u1) = initial_data(l, &cfg.data, d, m, s.n_max, &mut rng)?;
    let times = s.times.values();
    let window: Vec<f64> = times.iter().copied().filter(|t| *t >= s.fit_window[0] && *t <= s.fit_window[1]).collect();
    if window.len() < 2 {
        return Err(CliError::Config("solve.fit_window: fewer than two of solve.times fall inside".into()));
    }
    let traj = solve(&sys, &u0, &u1, &times, s.tol)?;
    let ext = FieldExtraction::new(&sys, &u0, &u1, s.orders, s.horizon, s.tol)?;
    let set = u0.set;
    let mut out = ctx.out_dir("solve")?;

    let mut header = vec!["t".to_string()];
    header.extend(mode_header(d));
    header.extend(["component", "re", "im"].map(String::from));
    let mut t = Table::new(&header);
    for (j, &tj) in traj.t.iter().enumerate() {
        for (i, tr) in traj.modes.iter().enumerate() {
            let n = mode_cells(&set.mode(i));
            for (c, z) in tr.v[j].iter().enumerate() {
                let mut row = vec![num(tj)];
                row.extend(n.iter().cloned());
                row.extend([c.to_string(), num(z.re), num(z.im)]);
                t.row(&row);
            }
        }
    }
    out.table("modes.csv", t)?;

    let mut header = vec!["order".to_string()];
    header.extend(mode_header(d));
    header.extend(["component", "re", "im"].map(String::from));
    let mut t = Table::new(&header);
    let fields: Vec<(String, &ModeField)> = (1..=s.orders)
        .map(|n| (n.to_string(), ext.data.v_inf(n)))
        .chain(std::iter::once(("aggregate".to_string(), &ext.data.aggregate)))
        .collect();
    for (label, f) in &fields {
        for i in 0..set.len() {
            let n = mode_cells(&set.mode(i));
            for (c, z) in f.coeff(i).iter().enumerate() {
                let mut row = vec![label.clone()];
                row.extend(n.iter().cloned());
                row.extend([c.to_string(), num(z.re), num(z.im)]);
                t.row(&row);
            }
        }
    }
    out.table("data.csv", t)?;

    let v0 = ModeField::from_components(&[&u0, &u1])?;
    let v0_norm = |i: usize| vec_norm(&v0.coeff_vec(i));
    let scale = (sobolev_norm(&u0, 0.0).powi(2) + sobolev_norm(&u1, 0.0).powi(2)).sqrt();
    let forced = sys.spec.forcing.is_some();
    let active: Vec<usize> = (0..set.len()).filter(|&i| forced || v0_norm(i) > 0.0).collect();
    let mut t = Table::new(&["scope", "order", "converged", "status", "slope", "intercept", "r2", "samples", "window_end"]);
    let mut summary = Vec::new();
    for n in 1..=s.orders {
        let r = ext.residual_norms(n, 0.0, &window)?;
        let fit = fit_above_floor(&window, &r, scale)?;
        let mut row = vec!["field".to_string(), n.to_string(), ext.data.converged().to_string()];
        row.extend(fit_cells(&fit));
        let fmt = |x: Option<f64>, prec: usize| x.map_or_else(|| "-".to_string(), |v| format!("{v:.prec$}"));
        summary.push(vec![n.to_string(), row[3].clone(), fmt(fit.0.slope(), 4), fmt(fit.1, 2)]);
        t.row(&row);
    }
    for &i in &active {
        let mode = set.mode(i);
        let converged = !ext.data.unconverged.contains(&mode);
        let label = mode_cells(&mode).join(" ");
        for n in 1..=s.orders {
            let r = window.iter().map(|&tw| Ok(vec_norm(&ext.residual(i, n, tw)?))).collect::<silentwave::Result<Vec<f64>>>()?;
            let fit = fit_above_floor(&window, &r, scale)?;
            let mut row = vec![label.clone(), n.to_string(), converged.to_string()];
            row.extend(fit_cells(&fit));
            t.row(&row);
        }
    }
    out.table("slopes.csv", t)?;
    println!("field residual slopes of ‖(u, u_t) − F_n‖_(0) on [{}, {}]", s.fit_window[0], s.fit_window[1]);
    print_table(&["order", "status", "slope", "window end"], &summary);
    if !ext.data.converged() {
        eprintln!("warning: {} modes did not converge to the requested tolerance", ext.data.unconverged.len());
    }
    report_written(&out);
    Ok(())
}

pub fn specify(ctx: &Ctx) -> Result<(), CliError> {
    let l = ctx.loaded()?;
    let cfg = &l.config;
    let sp = &cfg.specify;
    let (n_max, tol) = (sp.n_max.unwrap_or(cfg.solve.n_max), sp.tol.unwrap_or(cfg.solve.tol));
    let horizon = sp.horizon.or(cfg.solve.horizon);
    let sys = cfg.system.build()?;
    let (d, k) = (sys.d(), sys.k());
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed());
    let target = match (&cfg.specify.target, &cfg.specify.random) {
        (Some(p), None) => mode_file(l, "specify.target", p, d, n_max, k)?,
        (None, Some(r)) => random_hermitian(ModeSet::new(d, n_max), k, r, &mut rng),
        _ => return Err(CliError::Config("specify: give target or random".into())),
    };
    let phi = phi_infty(&sys, &target, horizon, tol)?;
    // Independent check: extract the data of the produced initial data.
    let back = extract_field_data(&sys, &phi.u0, &phi.u1, sys.decomp.n_blocks, horizon, tol)?.aggregate;
    let mut independent: f64 = 0.0;
    for i in 0..target.set.len() {
        let tv = target.coeff_vec(i);
        let denom = vec_norm(&tv).max(vec_norm(&phi.forced_data.coeff_vec(i)));
        if denom > 0.0 {
            independent = independent.max(vec_norm(&(back.coeff_vec(i) - &tv)) / denom);
        }
    }
    let mut homogeneous = target.clone();
    homogeneous.axpy((-1.0).into(), &phi.forced_data);
    let forced = sys.spec.forcing.is_some();

    let mut out = ctx.out_dir("specify")?;
    out.modes("initial.csv", &ModeField::from_components(&[&phi.u0, &phi.u1])?)?;
    if forced {
        out.modes("forced_data.csv", &phi.forced_data)?;
    }
    let rows: Vec<(&str, String)> = vec![
        ("modes", target.set.len().to_string()),
        ("target_norm", num(sobolev_norm(&target, 0.0))),
        ("forcing", forced.to_string()),
        ("forced_data_norm", num(sobolev_norm(&phi.forced_data, 0.0))),
        ("homogeneous_target_norm", num(sobolev_norm(&homogeneous, 0.0))),
        ("max_roundtrip", num(phi.max_roundtrip)),
        ("independent_roundtrip", num(independent)),
        ("max_condition", num(phi.max_condition)),
        ("sobolev_loss", num(phi.xi)),
        ("continuity_constant", num(phi.continuity)),
    ];
    let mut t = Table::new(&["quantity", "value"]);
    for (q, v) in &rows {
        t.row(&[q, v.as_str()]);
    }
    out.table("report.csv", t)?;
    let printed: Vec<Vec<String>> = rows.iter().map(|(q, v)| vec![q.to_string(), v.clone()]).collect();
    print_table(&["quantity", "value"], &printed);
    report_written(&out);
    Ok(())
}

/// max over modes of the constraint residuals, relative to ‖state‖_(0) in unhatted variables.
fn constraint_violation(p: &KasnerExponents, state: &PotentialState) -> f64 {
    let (div, ddiv) = constraint_residuals(p, state);
    let worst = div.data().iter().chain(ddiv.data()).map(|z| z.norm()).fold(0.0, f64::max);
    worst / sobolev_norm(&state.unhatted(p), 0.0).max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Observer {
    /// δc₂² + c₃² > 0: the leading term is present.
    Generic,
    /// c = 0.
    Comoving,
    /// c ≠ 0 with c₂ = c₃ = 0.
    Degenerate,
}

impl Observer {
    fn of(p: &KasnerExponents, c: &[f64; 3]) -> Observer {
        if c.iter().all(|x| *x == 0.0) {
            Observer::Comoving
        } else if p.delta() * c[1] * c[1] + c[2] * c[2] > 0.0 {
            Observer::Generic
        } else {
            Observer::Degenerate
        }
    }

    fn name(self) -> &'static str {
        match self {
            Observer::Generic => "generic",
            Observer::Comoving => "comoving",
            Observer::Degenerate => "degenerate",
        }
    }
}

struct GeodesicResult {
    geo: Geodesic,
    class: Observer,
    end: [f64; 3],
    u1: f64,
    curl: f64,
    coeff: f64,
    report: EnergyReport,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v[v.len() / 2])
}

pub fn kasner(ctx: &Ctx) -> Result<(), CliError> {
    let l = ctx.loaded()?;
    let cfg = &l.config;
    let kc = &cfg.kasner;
    let p = cfg.system.kasner_exponents()?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed());
    let data_seed: u64 = rng.random();
    let initial = match &kc.initial {
        Some(path) => {
            let f = mode_file(l, "kasner.initial", path, 3, kc.n_max, 8)?;
            let pick = |r: std::ops::Range<usize>| {
                let parts: Vec<ModeField> = r.map(|c| f.component(c)).collect();
                ModeField::from_components(&parts.iter().collect::<Vec<_>>())
            };
            PotentialState::from_unhatted(&p, kc.tau0, &pick(0..4)?, &pick(4..8)?)?
        }
        None => {
            let e = &kc.envelope;
            let env = DataEnvelope { u1_min: e.u1_min, eps: e.eps, width: e.width };
            generic_constrained_data(&p, kc.n_max, kc.tau0, data_seed, &env)
        }
    };
    let violation = constraint_violation(&p, &initial);
    let initial = if ctx.project_constraints {
        apply_constraints(&p, &initial)
    } else if violation > kc.constraint_tol {
        return Err(CliError::Failed(format!(
            "initial data violates the gauge constraints by {violation:.3e} (> kasner.constraint_tol = {:.1e}); \
             rerun with --project-constraints to project it",
            kc.constraint_tol
        )));
    } else {
        initial
    };
    let samples = kc.sample_taus();
    let ev = evolve(&p, &initial, &samples, kc.tau_h, kc.tol)?;
    let [lo, hi] = kc.fit_window;
    let faradays: Vec<_> = ev.states.iter().filter(|s| s.tau >= lo - 1e-12 && s.tau <= hi + 1e-12).map(|s| faraday(&p, s)).collect();
    if faradays.len() < 2 {
        return Err(CliError::Config("kasner.fit_window: fewer than two samples fall inside".into()));
    }
    let norm0 = sobolev_norm(&initial.fields, 0.0).max(f64::MIN_POSITIVE);
    let max_div = ev
        .states
        .iter()
        .map(|s| div_omega(&p, s).data().iter().map(|z| z.norm()).fold(0.0, f64::max))
        .fold(0.0, f64::max)
        / norm0;

    let g = &kc.geodesics;
    let mut geos = Vec::new();
    for _ in 0..g.count {
        let c = [0, 1, 2].map(|_| {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.random_range(g.c_min..=g.c_max)
        });
        let x0 = [0, 1, 2].map(|_| rng.random_range(0.0..2.0 * PI));
        geos.push(Geodesic { c, x0, t0: g.t0 });
    }
    if g.comoving {
        let x0 = [0, 1, 2].map(|_| rng.random_range(0.0..2.0 * PI));
        geos.push(Geodesic { c: [0.0; 3], x0, t0: g.t0 });
    }
    let results = geos
        .par_iter()
        .map(|geo| -> silentwave::Result<GeodesicResult> {
            let report = energy_along_geodesic(&p, geo, &faradays)?;
            let end = geo.endpoint(&p)?;
            let u1 = ev.u1.eval_point(&end)[0].re;
            let curl = ev.curl.eval_point(&end)[0].re;
            let coeff = leading_energy_coefficient(u1, curl, &geo.c, &p, 0.0);
            Ok(GeodesicResult { geo: *geo, class: Observer::of(&p, &geo.c), end, u1, curl, coeff, report })
        })
        .collect::<silentwave::Result<Vec<_>>>()?;

    let rate = p.blowup_rate();
    let mut out = ctx.out_dir("kasner")?;
    let mut t = Table::new(&[
        "geodesic", "class", "c1", "c2", "c3", "x01", "x02", "x03", "t0", "end1", "end2", "end3", "u1", "curl", "slope",
        "intercept", "r2", "amplitude", "leading_coefficient", "amplitude_rel_error", "slope_within_3pct",
    ]);
    let mut printed = Vec::new();
    let (mut generic, mut slope_ok, mut amp_ok) = (Vec::new(), 0usize, 0usize);
    let mut comoving_slopes = Vec::new();
    for (k, r) in results.iter().enumerate() {
        let fit = r.report.fit.as_ref();
        let slope = fit.map(|f| f.slope);
        let within = slope.map(|s| (s + rate).abs() <= 0.03 * rate);
        let amp_err = match (r.class, fit) {
            (Observer::Generic, Some(f)) => Some((f.amplitude - r.coeff).abs() / r.coeff),
            _ => None,
        };
        match r.class {
            Observer::Generic => {
                generic.extend(slope);
                slope_ok += (within == Some(true)) as usize;
            }
            Observer::Comoving => comoving_slopes.extend(slope),
            Observer::Degenerate => {}
        }
        amp_ok += amp_err.is_some_and(|e| e <= 0.1) as usize;
        let mut row = vec![k.to_string(), r.class.name().to_string()];
        row.extend(r.geo.c.iter().chain(&r.geo.x0).map(|x| num(*x)));
        row.push(num(r.geo.t0));
        row.extend(r.end.iter().map(|x| num(*x)));
        row.extend([num(r.u1), num(r.curl), opt(slope), opt(fit.map(|f| f.intercept)), opt(fit.map(|f| f.r2))]);
        row.extend([opt(fit.map(|f| f.amplitude)), num(r.coeff), opt(amp_err), within.map(|w| w.to_string()).unwrap_or_default()]);
        t.row(&row);
        printed.push(vec![
            k.to_string(),
            r.class.name().to_string(),
            slope.map_or_else(|| "-".into(), |s| format!("{s:.4}")),
            fit.map_or_else(|| "-".into(), |f| format!("{:.4e}", f.amplitude)),
            format!("{:.4e}", r.coeff),
            amp_err.map_or_else(|| "-".into(), |e| format!("{e:.2e}")),
        ]);
    }
    out.table("geodesics.csv", t)?;

    let mut t = Table::new(&["geodesic", "t", "energy", "t_tt"]);
    for (k, r) in results.iter().enumerate() {
        for s in &r.report.samples {
            t.row(&[k.to_string(), num(s.t), num(s.energy), num(s.t_tt)]);
        }
    }
    out.table("energy.csv", t)?;

    let n_generic = generic.len();
    let summary: Vec<(&str, String)> = vec![
        ("p1", num(p.p[0])),
        ("p2", num(p.p[1])),
        ("p3", num(p.p[2])),
        ("expected_slope", num(-rate)),
        ("uncancelled_slope", num(2.0 - 8.0 * p.p[2])),
        ("generic_geodesics", n_generic.to_string()),
        ("median_generic_slope", opt(median(generic))),
        ("generic_slope_within_3pct", slope_ok.to_string()),
        ("generic_amplitude_within_10pct", amp_ok.to_string()),
        ("comoving_slope", opt(comoving_slopes.first().copied())),
        ("initial_constraint_violation", num(violation)),
        ("max_div_omega_relative", num(max_div)),
        ("limit_error", num(ev.limit_error)),
    ];
    let mut t = Table::new(&["quantity", "value"]);
    for (q, v) in &summary {
        t.row(&[q, v.as_str()]);
    }
    out.table("exponents.csv", t)?;
    out.modes("limits.csv", &ModeField::from_components(&[&ev.u1, &ev.curl])?)?;

    print_table(&["geodesic", "class", "slope", "amplitude", "leading", "amp. error"], &printed);
    println!();
    let rows: Vec<Vec<String>> = summary.iter().map(|(q, v)| vec![q.to_string(), v.clone()]).collect();
    print_table(&["quantity", "value"], &rows);
    report_written(&out);
    Ok(())
}

pub fn accept(ctx: &Ctx) -> Result<(), CliError> {
    let outcomes = silentwave_accept::run_all(ctx.seed(), |o| println!("{o}"));
    let mut out = ctx.out_dir("accept")?;
    let mut t = Table::new(&["criterion", "name", "status", "detail"]);
    for o in &outcomes {
        let status = if o.passed { "pass" } else { "fail" };
        t.row(&[o.id.to_string(), o.name.to_string(), status.to_string(), o.detail.clone()]);
    }
    out.table("acceptance.csv", t)?;
    report_written(&out);
    let failed: Vec<String> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id.to_string()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("criteria failed: {}", failed.join(", "))))
    }
}
