use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use fluxlaws::budgets::{balance_report, d_gamma, richardson_fit, DGammaCurve, Mollifier};
use fluxlaws::cascade::{
    corollary_suite, detect_direct, detect_inverse, filtration_large_scale, filtration_small_scale, flux_constants,
    inverse_coefficients, CascadeReport, CorollaryResult, CutoffRule, Direction, DissipationSpectrum, FiltrationReport,
    SweepMember, SyntheticFlow,
};
use fluxlaws::correlations::{structure_samples, FlowSnapshot, StructureCurve, StructureKind, StructureSamples};
use fluxlaws::grid::io::{list_snapshots, read_snapshot, write_snapshot};
use fluxlaws::grid::{RadialSpectrum, WaveGrid};
use fluxlaws::khm::{decay_envelope_check, CoefficientFamily, KhmAccumulator, KhmBudget, Relation};
use fluxlaws::sim2d::{run_stationary, TrajectoryStats};
use fluxlaws::sphere::{beta, kernel_by_quadrature, pairing_count, KernelSeries, Rational};

use crate::config::{read_json, read_toml, CascadeManifest, FiltrationConfig, MemberSpec, RunConfig};
use crate::report::{csv_to_stdout, f, write_csv, write_json, Gate, Report};
use crate::{CliError, CoeffsArgs, FiltrationArgs, KernelsArgs, RunArgs, SimulateArgs};

type Failures = Vec<String>;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn rational_f64(r: &Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn finish<C: Serialize, R: Serialize>(out: Option<&Path>, report: Report<C, R>) -> Result<Failures, CliError> {
    if let Some(dir) = out {
        write_json(&dir.join("report.json"), &report)?;
    }
    Ok(report.failures())
}

#[derive(Serialize)]
struct CoeffsConfig {
    d: usize,
    kmax: u32,
}

pub fn coeffs(a: &CoeffsArgs) -> Result<Failures, CliError> {
    if a.d != 2 && a.d != 3 {
        return Err(CliError::Usage(format!("--d must be 2 or 3, got {}", a.d)));
    }
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut push = |name: String, r: Rational| rows.push(vec![name, r.to_string(), f(rational_f64(&r))]);
    for k in 0..=a.kmax {
        push(format!("beta_{}({k})", a.d), beta(a.d, k)?);
    }
    for k in 1..=a.kmax {
        push(format!("pairing_count({k})"), Rational::from_integer(pairing_count(k)?));
    }
    let (g, kappa) = inverse_coefficients(a.d)?;
    push("gamma_d".into(), g);
    push("kappa_d".into(), kappa);
    for dir in [Direction::Direct, Direction::Inverse] {
        for c in flux_constants(a.d, dir)? {
            push(format!("{}:{}", serde_json::to_value(dir).unwrap().as_str().unwrap(), c.name), c.value);
        }
    }
    for c in CoefficientFamily::all().into_iter().filter(|c| c.d == a.d) {
        push(format!("limit:{}", c.label()), c.limit()?);
    }
    let four = Rational::from_integer(4);
    let composite = four * beta(a.d, 2)? + Rational::from_integer(8) * beta(a.d, 1)? / Rational::from_integer(a.d as i128 + 2);
    let gates = vec![Gate::flag("gamma_d = 4 beta_d(1)", g == four * beta(a.d, 1)?), Gate::flag("kappa_d composite", kappa == composite)];
    let header = ["quantity", "exact", "value"];
    match &a.out {
        Some(dir) => {
            create_dir(dir)?;
            write_csv(&dir.join("coeffs.csv"), &header, &rows)?;
        }
        None => csv_to_stdout(&header, &rows)?,
    }
    let cfg = CoeffsConfig { d: a.d, kmax: a.kmax };
    finish(a.out.as_deref(), Report::new("coeffs", &cfg, None, gates, rows.len())?)
}

#[derive(Serialize)]
struct KernelsConfig {
    d: usize,
    p: Vec<u32>,
    xmax: f64,
    points: usize,
    tolerance: f64,
    families: bool,
}

#[derive(Serialize)]
struct KernelsResult {
    max_kernel_difference: f64,
    family_series_closed_max: Option<f64>,
    envelopes: Vec<serde_json::Value>,
}

/// Series-vs-closed tolerance on `[0, 30]`.
const FAMILY_TOL: f64 = 1e-9;

pub fn kernels(a: &KernelsArgs) -> Result<Failures, CliError> {
    if a.d != 2 && a.d != 3 {
        return Err(CliError::Usage(format!("--d must be 2 or 3, got {}", a.d)));
    }
    if a.points < 2 || !(a.xmax > 0.0) {
        return Err(CliError::Usage("need --points >= 2 and --xmax > 0".into()));
    }
    let xs: Vec<f64> = (0..a.points).map(|i| a.xmax * i as f64 / (a.points - 1) as f64).collect();
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for &p in &a.p {
        for long in [false, true] {
            let k = if long { KernelSeries::longitudinal(a.d, p) } else { KernelSeries::tangential(a.d, p) };
            for &x in &xs {
                let v = k.eval(x)?;
                let q = kernel_by_quadrature(a.d, p, long, x)?;
                worst = worst.max((v - q).abs());
                rows.push(vec![if long { "longitudinal" } else { "tangential" }.into(), p.to_string(), f(x), f(v), f(q), f((v - q).abs())]);
            }
        }
    }
    let mut gates = vec![Gate::at_most("kernel series vs sphere quadrature", worst, a.tolerance)];
    let mut fam_rows = Vec::new();
    let mut fam_worst = None;
    let mut envelopes = Vec::new();
    if a.families {
        let mut w: f64 = 0.0;
        let fx: Vec<f64> = (0..500).map(|i| 30.0 * i as f64 / 499.0).collect();
        let ex: Vec<f64> = (1..=2000).map(|i| 0.1 * i as f64).collect();
        for c in CoefficientFamily::all().into_iter().filter(|c| c.d == a.d) {
            for &x in &fx {
                let s = c.eval_series(x)?;
                let cl = c.eval_closed(x);
                w = w.max((s - cl).abs());
                fam_rows.push(vec![c.label(), f(x), f(s), f(cl), f((s - cl).abs())]);
            }
            let env = decay_envelope_check(&c, &ex)?;
            if let Some(v) = env.exact_violation {
                gates.push(Gate::at_most(format!("{} exact envelope excess", c.label()), v, 0.0));
            }
            envelopes.push(serde_json::to_value(&env).map_err(|e| CliError::Numeric(e.to_string()))?);
        }
        gates.push(Gate::at_most("family series vs closed form", w, FAMILY_TOL));
        fam_worst = Some(w);
    }
    let header = ["kernel", "p", "x", "series", "quadrature", "abs_diff"];
    match &a.out {
        Some(dir) => {
            create_dir(dir)?;
            write_csv(&dir.join("kernels.csv"), &header, &rows)?;
            if a.families {
                write_csv(&dir.join("families.csv"), &["family", "x", "series", "closed", "abs_diff"], &fam_rows)?;
            }
        }
        None => csv_to_stdout(&header, &rows)?,
    }
    let cfg = KernelsConfig { d: a.d, p: a.p.clone(), xmax: a.xmax, points: a.points, tolerance: a.tolerance, families: a.families };
    let result = KernelsResult { max_kernel_difference: worst, family_series_closed_max: fam_worst, envelopes };
    finish(a.out.as_deref(), Report::new("kernels", &cfg, None, gates, result)?)
}

#[derive(Serialize)]
struct SimulateResult {
    energy_ratio: f64,
    enstrophy_ratio: f64,
    eddy_turnover: f64,
    sample_turnovers: f64,
    drift: f64,
    stationary: bool,
    max_cfl: f64,
    snapshots: usize,
    mean_u_sq: f64,
    mean_omega_sq: f64,
}

fn snapshot_dir(run: &Path) -> PathBuf {
    run.join("snapshots")
}

pub fn simulate(a: &SimulateArgs) -> Result<Failures, CliError> {
    let config: RunConfig = read_toml(&a.config)?;
    let cfg = config.sim_config()?;
    create_dir(&snapshot_dir(&a.out))?;
    let text = toml::to_string(&config).map_err(|e| CliError::Numeric(e.to_string()))?;
    fs::write(a.out.join("config.toml"), text).map_err(|e| CliError::Io(e.to_string()))?;
    let mut count = 0usize;
    let snaps = snapshot_dir(&a.out);
    let stats = run_stationary(&cfg, None, |t, w| {
        count += 1;
        write_snapshot(&snaps.join(format!("snap_{count:06}")), w, t, config.seed)
    })?;
    write_json(&a.out.join("stats.json"), &stats)?;
    let trace: Vec<Vec<String>> = stats.trace.iter().map(|&(t, u, w)| vec![f(t), f(u), f(w)]).collect();
    write_csv(&a.out.join("trace.csv"), &["t", "u_sq", "omega_sq"], &trace)?;
    let spec = stats.vorticity_spectrum.radial();
    let rows: Vec<Vec<String>> = spec.modes.iter().map(|&(k, w)| vec![f(k), f(w)]).collect();
    write_csv(&a.out.join("spectrum.csv"), &["k", "omega_hat_sq"], &rows)?;
    let (lo, hi) = cfg.forcing.band();
    let tau = stats.eddy_turnover(0.5 * (lo + hi));
    let result = SimulateResult {
        energy_ratio: stats.energy_ratio(),
        enstrophy_ratio: stats.enstrophy_ratio(),
        eddy_turnover: tau,
        sample_turnovers: stats.t_sample / tau,
        drift: stats.drift,
        stationary: stats.stationary,
        max_cfl: stats.max_cfl,
        snapshots: count,
        mean_u_sq: stats.mean.u_sq,
        mean_omega_sq: stats.mean.omega_sq,
    };
    let gates = vec![Gate::at_most("stationarity drift", stats.drift, cfg.stationarity_tol)];
    finish(Some(&a.out), Report::new("simulate", &config, Some(config.seed), gates, result)?)
}

struct Run {
    config: RunConfig,
    stats: TrajectoryStats,
    snapshots: Vec<PathBuf>,
}

fn load_run(dir: &Path) -> Result<Run, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("{}: run directory not found", dir.display())));
    }
    let config: RunConfig = read_toml(&dir.join("config.toml"))?;
    let stats: TrajectoryStats = read_json(&dir.join("stats.json"))?;
    let snapshots = list_snapshots(&snapshot_dir(dir)).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
    Ok(Run { config, stats, snapshots })
}

fn load_snapshot(stem: &Path) -> Result<FlowSnapshot, CliError> {
    let (field, _) = read_snapshot(stem)?;
    Ok(FlowSnapshot::from_vorticity(field)?)
}

fn stream_samples(run: &Run, kinds: &[StructureKind], ell: &[f64]) -> Result<StructureSamples, CliError> {
    if run.snapshots.is_empty() {
        return Err(CliError::Usage("run has no snapshots".into()));
    }
    let rule = run.config.diagnostics.node_rule();
    let mut acc: Option<StructureSamples> = None;
    for stem in &run.snapshots {
        let s = structure_samples(&[load_snapshot(stem)?], kinds, ell, &rule)?;
        match acc.as_mut() {
            None => acc = Some(s),
            Some(a) => a.append(s)?,
        }
    }
    Ok(acc.unwrap())
}

fn grid_of(run: &Run) -> Result<WaveGrid, CliError> {
    run.config.grid.build()
}

fn curve_rows(curves: &[StructureCurve]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for c in curves {
        for i in 0..c.ell.len() {
            rows.push(vec![c.kind.name().to_string(), f(c.ell[i]), f(c.values[i]), f(c.stderr[i]), c.nodes[i].to_string()]);
        }
    }
    rows
}

pub fn structure(a: &RunArgs) -> Result<Failures, CliError> {
    let run = load_run(&a.run)?;
    let out = a.out.clone().unwrap_or_else(|| a.run.clone());
    create_dir(&out)?;
    let ell = run.config.diagnostics.ell.values(&grid_of(&run)?);
    let samples = stream_samples(&run, &StructureKind::ALL, &ell)?;
    let curves = samples.curves(samples.values.len());
    write_csv(&out.join("structure.csv"), &["kind", "ell", "value", "stderr", "nodes"], &curve_rows(&curves))?;
    finish(Some(&out), Report::new("structure", &run.config, Some(run.config.seed), Vec::new(), curves)?)
}

#[derive(Serialize)]
struct KhmPrefix {
    snapshots: usize,
    max_normalized_residual: Vec<(Relation, Option<f64>)>,
}

#[derive(Serialize)]
struct KhmResult {
    band: (f64, f64),
    prefixes: Vec<KhmPrefix>,
    /// Residual non-increasing over the prefix doublings, per relation.
    tightening: Vec<(Relation, bool)>,
    budgets: Vec<KhmBudget>,
}

pub fn khm_check(a: &RunArgs) -> Result<Failures, CliError> {
    let run = load_run(&a.run)?;
    let out = a.out.clone().unwrap_or_else(|| a.run.clone());
    create_dir(&out)?;
    let grid = grid_of(&run)?;
    let forcing = run.config.forcing.build(grid)?;
    let ell = run.config.diagnostics.ell.values(&grid);
    let band = run.config.tolerances.band(&grid);
    let mut acc = KhmAccumulator::new(&Relation::ALL, ell, run.config.diagnostics.node_rule())?;
    for stem in &run.snapshots {
        acc.push(&load_snapshot(stem)?)?;
    }
    if acc.is_empty() {
        return Err(CliError::Usage("run has no snapshots".into()));
    }
    let n = acc.len();
    let counts: Vec<usize> = [n / 4, n / 2, n].into_iter().filter(|&c| c > 0).collect();
    let mut prefixes = Vec::new();
    let mut full = Vec::new();
    for &c in &counts {
        let budgets = acc.budgets(c, run.config.sim.nu, &forcing)?;
        prefixes.push(KhmPrefix {
            snapshots: c,
            max_normalized_residual: budgets.iter().map(|b| (b.relation, b.max_normalized_residual(band.0, band.1))).collect(),
        });
        full = budgets;
    }
    let tightening = Relation::ALL
        .iter()
        .map(|&r| {
            let seq: Vec<f64> = prefixes
                .iter()
                .filter_map(|p| p.max_normalized_residual.iter().find(|e| e.0 == r).and_then(|e| e.1))
                .collect();
            (r, seq.windows(2).all(|w| w[1] <= w[0]))
        })
        .collect();
    let tol = run.config.tolerances.khm_residual;
    let mut gates = Vec::new();
    let mut rows = Vec::new();
    for b in &full {
        let res = b.max_normalized_residual(band.0, band.1).unwrap_or(f64::NAN);
        gates.push(Gate::at_most(format!("{} max normalized residual", b.relation.name()), res, tol));
        let norm = b.normalized_residual().unwrap_or_default();
        for i in 0..b.ell.len() {
            let lhs = b.lhs.as_ref().map(|v| v[i]).unwrap_or(f64::NAN);
            let se = b.lhs_stderr.as_ref().map(|v| v[i]).unwrap_or(f64::NAN);
            let r = b.residual.as_ref().map(|v| v[i]).unwrap_or(f64::NAN);
            let nr = norm.get(i).copied().unwrap_or(f64::NAN);
            rows.push(vec![
                b.relation.name().to_string(),
                f(b.ell[i]),
                f(lhs),
                f(se),
                f(b.viscous[i]),
                f(b.forcing[i]),
                f(b.nested[i]),
                f(b.rhs[i]),
                f(r),
                f(nr),
            ]);
        }
    }
    write_csv(
        &out.join("khm.csv"),
        &["relation", "ell", "lhs", "lhs_stderr", "viscous", "forcing", "nested", "rhs", "residual", "normalized_residual"],
        &rows,
    )?;
    let result = KhmResult { band, prefixes, tightening, budgets: full };
    finish(Some(&out), Report::new("khm-check", &run.config, Some(run.config.seed), gates, result)?)
}

pub fn budget(a: &RunArgs) -> Result<Failures, CliError> {
    let run = load_run(&a.run)?;
    let out = a.out.clone().unwrap_or_else(|| a.run.clone());
    create_dir(&out)?;
    let grid = grid_of(&run)?;
    let forcing = run.config.forcing.build(grid)?;
    let gammas = &run.config.diagnostics.gammas;
    let d_curve = if gammas.is_empty() {
        None
    } else {
        if gammas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(CliError::Usage("diagnostics.gammas must be strictly decreasing".into()));
        }
        let molls: Vec<Mollifier> = gammas.iter().map(|&g| Mollifier::new(2, g, grid.lambda())).collect::<Result<_, _>>()?;
        let mut per: Vec<Vec<f64>> = vec![Vec::new(); gammas.len()];
        for stem in &run.snapshots {
            let s = load_snapshot(stem)?;
            for (slot, m) in per.iter_mut().zip(&molls) {
                slot.push(d_gamma(&s.u, m)?);
            }
        }
        if run.snapshots.is_empty() {
            return Err(CliError::Usage("D_γ needs snapshots".into()));
        }
        let n = run.snapshots.len() as f64;
        let values: Vec<f64> = per.iter().map(|v| v.iter().sum::<f64>() / n).collect();
        let stderr: Vec<f64> = per
            .iter()
            .zip(&values)
            .map(|(v, m)| if v.len() > 1 { (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt() } else { 0.0 })
            .collect();
        let fit = if gammas.len() >= 3 { Some(richardson_fit(gammas, &values)?) } else { None };
        Some(DGammaCurve { gammas: gammas.clone(), values, stderr, snapshots: run.snapshots.len(), fit })
    };
    let report = balance_report(&run.stats, &forcing, d_curve)?;
    let t = &run.config.tolerances;
    let mut gates = vec![Gate::at_most("energy closure", report.energy_closure_error, t.energy_closure)];
    if let Some(e) = report.enstrophy_closure_error {
        gates.push(Gate::at_most("enstrophy closure", e, t.enstrophy_closure));
    }
    if let Some(c) = &report.d_gamma {
        let rows: Vec<Vec<String>> = (0..c.gammas.len()).map(|i| vec![f(c.gammas[i]), f(c.values[i]), f(c.stderr[i])]).collect();
        write_csv(&out.join("d_gamma.csv"), &["gamma", "d_gamma", "stderr"], &rows)?;
    }
    finish(Some(&out), Report::new("budget", &run.config, Some(run.config.seed), gates, report)?)
}

fn run_member(path: &Path, direction: Direction, manifest: &CascadeManifest) -> Result<SweepMember, CliError> {
    let run = load_run(path)?;
    let grid = grid_of(&run)?;
    let ell = manifest.ell.values(&grid);
    let samples = stream_samples(&run, &StructureKind::ALL, &ell)?;
    let curves = samples.curves(samples.values.len());
    let s = &run.stats;
    let nu_energy = s.nu * s.mean.u_sq;
    let spectrum: RadialSpectrum =
        if direction == Direction::Direct { s.vorticity_spectrum.radial() } else { s.velocity_spectrum().radial() };
    Ok(SweepMember { nu: s.nu, lambda: grid.lambda(), dissipation: DissipationSpectrum::from_spectrum(s.nu, &spectrum, nu_energy), curves })
}

pub fn cascade_detect(a: &crate::CascadeArgs) -> Result<Failures, CliError> {
    let manifest: CascadeManifest = read_json(&a.manifest)?;
    let d = manifest.dimension;
    let dir = manifest.direction;
    if dir != Direction::Direct && dir != Direction::Inverse {
        return Err(CliError::Usage("direction must be direct or inverse".into()));
    }
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let synthetic_grid = WaveGrid::new(d, 1.0, 4)?;
    let mut members = Vec::new();
    for m in &manifest.members {
        members.push(match m {
            MemberSpec::Synthetic { nu, lambda, eps, k_f, k_cut, flux_star, k_low } => {
                let flow = if dir == Direction::Direct {
                    SyntheticFlow::direct(d, *nu, *eps, *k_f, *k_cut, *flux_star, *k_low)
                } else {
                    SyntheticFlow::inverse(d, *nu, *eps, *k_f, *k_cut, *flux_star)
                };
                let ell = manifest.ell.values(&synthetic_grid);
                flow.member(*lambda, &ell, d == 2 && dir == Direction::Direct)?
            }
            MemberSpec::Run { path } => {
                if d != 2 {
                    return Err(CliError::Usage("run members are two-dimensional".into()));
                }
                run_member(&base.join(path), dir, &manifest)?
            }
        });
    }
    let opts = manifest.detect.options(dir);
    let report: CascadeReport = if dir == Direction::Direct { detect_direct(&members, d, &opts)? } else { detect_inverse(&members, d, &opts)? };
    create_dir(&a.out)?;
    let mut rows = Vec::new();
    for m in &report.members {
        for p in &m.fits {
            rows.push(vec![
                f(m.nu),
                p.name.clone(),
                p.predicted_constant.clone(),
                f(m.captured),
                f(p.predicted),
                f(p.fitted),
                f(p.relative_deviation),
                f(p.max_log_slope),
                p.plateau.to_string(),
                f(p.band.0),
                f(p.band.1),
            ]);
        }
    }
    write_csv(
        &a.out.join("plateaus.csv"),
        &["nu", "law", "constant", "captured", "predicted", "fitted", "relative_deviation", "max_log_slope", "plateau", "ell_lo", "ell_hi"],
        &rows,
    )?;
    let gates = vec![Gate::flag("flux-law plateau at the smallest viscosity", report.passed)];
    finish(Some(&a.out), Report::new("cascade-detect", &manifest, None, gates, report)?)
}

#[derive(Serialize)]
struct FiltrationEntry {
    lemma: &'static str,
    delta: f64,
    target: f64,
    error: f64,
    report: FiltrationReport,
}

#[derive(Serialize)]
struct FiltrationResult {
    filtration: Vec<FiltrationEntry>,
    corollaries: Vec<CorollaryResult>,
}

/// Families of the filtration checks: mass `δ` escaping to `|k| = 1/ν`
/// (small scale) or parked at `|k| = ν^{1/2}` (large scale), the rest at
/// `|k| = 1`, total mass 1.
fn filtration_suite(cfg: &FiltrationConfig) -> Result<(Vec<FiltrationEntry>, Vec<Gate>), CliError> {
    let mut entries = Vec::new();
    let mut gates = Vec::new();
    for c in CoefficientFamily::all() {
        let l = c.limit_f64();
        for &delta in &cfg.deltas {
            let small: Vec<(f64, RadialSpectrum)> = cfg
                .small_scale_exponents
                .iter()
                .map(|&e| 10f64.powi(-e))
                .map(|nu| (nu, RadialSpectrum::new(c.d, vec![(1.0, 1.0 - delta), (1.0 / nu, delta)])))
                .collect();
            let large: Vec<(f64, RadialSpectrum)> = cfg
                .large_scale_exponents
                .iter()
                .map(|&e| 10f64.powi(-e))
                .map(|nu| (nu, RadialSpectrum::new(c.d, vec![(nu.sqrt(), delta), (1.0, 1.0 - delta)])))
                .collect();
            let reps = [
                ("small_scale", l * delta, filtration_small_scale(&c, &small, CutoffRule::NuPower { exponent: -1.0 }, cfg.ell_i_small, delta)?),
                ("large_scale", l * (1.0 - delta), filtration_large_scale(&c, &large, CutoffRule::NuPower { exponent: 0.5 }, cfg.ell_i_large, delta)?),
            ];
            for (lemma, target, report) in reps {
                let error = (report.estimate - target).abs() / l.abs();
                let name = format!("{} {lemma} delta={delta}", c.label());
                gates.push(Gate::at_most(format!("{name} relative error"), error, cfg.tolerance));
                gates.push(Gate::flag(format!("{name} monotone trend"), report.trend_monotone));
                gates.push(Gate::flag(format!("{name} bounded mass"), report.bounded));
                entries.push(FiltrationEntry { lemma, delta, target, error, report });
            }
        }
    }
    Ok((entries, gates))
}

pub fn filtration_test(a: &FiltrationArgs) -> Result<Failures, CliError> {
    let cfg: FiltrationConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => FiltrationConfig::default(),
    };
    let (entries, mut gates) = filtration_suite(&cfg)?;
    let corollaries = corollary_suite()?;
    for c in &corollaries {
        gates.push(Gate::flag(format!("corollary {}", c.name), c.passed));
    }
    create_dir(&a.out)?;
    let rows: Vec<Vec<String>> = entries
        .iter()
        .map(|e| vec![e.report.family.clone(), e.lemma.to_string(), f(e.delta), f(e.target), f(e.report.estimate), f(e.error), e.report.trend_monotone.to_string()])
        .collect();
    write_csv(&a.out.join("filtration.csv"), &["family", "lemma", "delta", "target", "estimate", "relative_error", "trend_monotone"], &rows)?;
    let result = FiltrationResult { filtration: entries, corollaries };
    finish(Some(&a.out), Report::new("filtration-test", &cfg, None, gates, result)?)
}
