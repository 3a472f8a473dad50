use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use yamabe_core::acceptance::{
    run_selected, AcceptanceConfig, CriterionResult, ALL_CRITERIA, ARGMAX_OFFSET_BOUND, TRANSIENT,
};
use yamabe_core::ancient::{
    construction_grid, fit_decay_rate, fit_merge_constant, intersection_law, max_bound_check,
    run_jobs, sup_difference, uniform_envelope, window, AncientRun, Envelope, RunOptions,
    SupersolutionSpec,
};
use yamabe_core::config::{ExperimentConfig, FittedRates, InvariantRecord, RunManifest};
use yamabe_core::error::Error;
use yamabe_core::geometry::{riemann_norm_monitor, state_curvature, GeometryOptions, RmMonitor};
use yamabe_core::grid::Grid;
use yamabe_core::io::{render_json, CsvTable};
use yamabe_core::model::{exponent_p, gamma_large_of_lambda, tail_exponent};
use yamabe_core::numerics::linear_fit;
use yamabe_core::pde::FlowState;
use yamabe_core::soliton::{
    barenblatt, barenblatt_normalizing_c, check_derivative_tail, fit_tail, shoot_profile_with,
    ShootOptions, TailFit,
};

use crate::GlobalArgs;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Passed,
    LawFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Numerical,
}

/// A failure tagged with the stage that produced it.
#[derive(Debug, Clone)]
pub struct Failure {
    pub stage: String,
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self.kind {
            Kind::Usage => 2,
            Kind::Numerical => 3,
        }
    }

    fn usage(stage: &str, message: impl Into<String>) -> Self {
        Self {
            stage: stage.into(),
            kind: Kind::Usage,
            message: message.into(),
        }
    }

    /// Configuration and I/O problems are usage errors; the rest is numerical.
    fn from_core(stage: &str, e: Error) -> Self {
        let kind = match e {
            Error::Config(_)
            | Error::Io(_)
            | Error::InvalidParameter(_)
            | Error::OscillatoryRegime { .. }
            | Error::MismatchedSpeeds => Kind::Usage,
            _ => Kind::Numerical,
        };
        Self {
            stage: stage.into(),
            kind,
            message: e.to_string(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.message)
    }
}

type Outcome = Result<Status, Failure>;

fn tag(stage: &str) -> impl FnOnce(Error) -> Failure + '_ {
    move |e| Failure::from_core(stage, e)
}

fn load_config(g: &GlobalArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &g.config {
        Some(path) => ExperimentConfig::load(path).map_err(tag("config"))?,
        None => ExperimentConfig::default(),
    };
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    cfg.validate().map_err(tag("config"))?;
    Ok(cfg)
}

fn output_dir(g: &GlobalArgs, cfg: &ExperimentConfig) -> Result<PathBuf, Failure> {
    let dir = g
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    std::fs::create_dir_all(&dir)
        .map_err(|e| Failure::usage("output", format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_csv(dir: &Path, name: &str, table: &CsvTable) -> Result<(), Failure> {
    table.write_to(&dir.join(name)).map_err(tag("write"))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<String, Failure> {
    let text = render_json(value).map_err(tag("write"))?;
    std::fs::write(dir.join(name), &text)
        .map_err(|e| Failure::usage("write", format!("{name}: {e}")))?;
    Ok(text)
}

fn status_of(invariants: &[InvariantRecord]) -> Status {
    if invariants.iter().all(|i| i.passed) {
        Status::Passed
    } else {
        Status::LawFailed
    }
}

/// Stage tracking for the manifest, which is written whatever the outcome.
struct Recorder {
    manifest: RunManifest,
    dir: PathBuf,
    file: String,
    clock: Instant,
}

impl Recorder {
    fn new(cfg: &ExperimentConfig, dir: &Path, file: &str, stage: &str) -> Self {
        Self {
            manifest: RunManifest::new(cfg, stage),
            dir: dir.to_path_buf(),
            file: file.into(),
            clock: Instant::now(),
        }
    }

    fn close_stage(&mut self) {
        let secs = self.clock.elapsed().as_secs_f64();
        self.manifest
            .timings
            .push((self.manifest.stage.clone(), secs));
        self.clock = Instant::now();
    }

    fn stage(&mut self, next: &str) {
        self.close_stage();
        self.manifest.stage = next.into();
    }

    fn finish(mut self, outcome: &Outcome) -> Result<(), Failure> {
        self.close_stage();
        self.manifest.succeeded = matches!(outcome, Ok(Status::Passed));
        self.manifest.failure = match outcome {
            Ok(Status::Passed) => None,
            Ok(Status::LawFailed) => Some("one or more invariants failed".into()),
            Err(f) => Some(f.to_string()),
        };
        write_json(&self.dir, &self.file, &self.manifest).map(|_| ())
    }
}

/// Runs `body` and writes the manifest afterwards, keeping the body's error
/// when both fail.
fn recorded(mut rec: Recorder, body: impl FnOnce(&mut Recorder) -> Outcome) -> Outcome {
    let outcome = body(&mut rec);
    let written = rec.finish(&outcome);
    match (outcome, written) {
        (Err(f), _) => Err(f),
        (Ok(_), Err(f)) => Err(f),
        (Ok(s), Ok(())) => Ok(s),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    print!("{}", render_json(value).map_err(tag("report"))?);
    Ok(())
}

#[derive(Debug, Serialize)]
struct BarenblattComparison {
    c: f64,
    window: [f64; 2],
    sup_error: f64,
}

#[derive(Debug, Serialize)]
struct SolitonReport {
    lambda: f64,
    p: f64,
    gamma_analytic: f64,
    tail_fit: TailFit,
    gamma_rel_error: f64,
    derivative_tail_rel_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    barenblatt: Option<BarenblattComparison>,
    profile_csv: String,
    invariants: Vec<InvariantRecord>,
}

fn soliton_report(
    cfg: &ExperimentConfig,
    lambda: f64,
    dir: &Path,
) -> Result<SolitonReport, Failure> {
    let p = exponent_p(cfg.n).map_err(tag("soliton"))?;
    let gamma = tail_exponent(lambda, p).map_err(tag("soliton"))?;
    let grid = Grid::new(-40.0, (30.0 / gamma).max(20.0), cfg.grid.dx).map_err(tag("soliton"))?;
    let prof =
        shoot_profile_with(lambda, p, grid, &ShootOptions::default()).map_err(tag("shoot"))?;
    let fit = fit_tail(&prof, 0.5).map_err(tag("tail-fit"))?;
    let derivative = check_derivative_tail(&prof, &fit).map_err(tag("tail-fit"))?;
    let rel = (fit.gamma_fit - gamma).abs() / gamma;
    let mut invariants = vec![
        InvariantRecord::at_most("tail exponent relative error", rel, 1e-2),
        InvariantRecord::at_most("derivative tail relative error", derivative, 1e-2),
    ];
    let barenblatt_cmp = if lambda == 1.0 {
        let c = barenblatt_normalizing_c(p);
        let mut sup = 0.0f64;
        for i in 0..prof.grid.len {
            let x = prof.grid.x(i);
            if (-10.0..=10.0).contains(&x) {
                let exact = barenblatt(c, p, x).map_err(tag("barenblatt"))?;
                sup = sup.max((prof.v[i] - exact).abs());
            }
        }
        invariants.push(InvariantRecord::at_most("closed-form sup error", sup, 1e-6));
        Some(BarenblattComparison {
            c,
            window: [-10.0, 10.0],
            sup_error: sup,
        })
    } else {
        None
    };
    let csv_name = format!("soliton_lambda_{lambda}.csv");
    write_csv(dir, &csv_name, &prof.csv())?;
    Ok(SolitonReport {
        lambda,
        p,
        gamma_analytic: gamma,
        tail_fit: fit,
        gamma_rel_error: rel,
        derivative_tail_rel_error: derivative,
        barenblatt: barenblatt_cmp,
        profile_csv: csv_name,
        invariants,
    })
}

pub fn soliton(g: &GlobalArgs, lambdas: &[f64]) -> Outcome {
    let mut cfg = load_config(g)?;
    if !lambdas.is_empty() {
        cfg.soliton_lambdas = lambdas.to_vec();
        cfg.validate().map_err(tag("config"))?;
    }
    let dir = output_dir(g, &cfg)?;
    let rec = Recorder::new(&cfg, &dir, "soliton_manifest.json", "soliton");
    recorded(rec, |rec| {
        let mut reports = Vec::new();
        for &lambda in &cfg.soliton_lambdas {
            let r = soliton_report(&cfg, lambda, &dir)?;
            write_json(&dir, &format!("soliton_lambda_{lambda}.json"), &r)?;
            rec.manifest
                .invariants
                .extend(r.invariants.iter().map(|i| InvariantRecord {
                    name: format!("lambda {lambda}: {}", i.name),
                    ..i.clone()
                }));
            reports.push(r);
        }
        rec.stage("report");
        if g.json {
            print_json(&reports)?;
        } else {
            for r in &reports {
                let ok = r.invariants.iter().all(|i| i.passed);
                println!(
                    "lambda {:<5} gamma {:.6} fit {:.6} (rel {:.2e}){}  {}",
                    r.lambda,
                    r.gamma_analytic,
                    r.tail_fit.gamma_fit,
                    r.gamma_rel_error,
                    r.barenblatt.as_ref().map_or(String::new(), |b| format!(
                        "  closed-form error {:.2e}",
                        b.sup_error
                    )),
                    if ok { "PASS" } else { "FAIL" }
                );
            }
        }
        Ok(status_of(&rec.manifest.invariants))
    })
}

#[derive(Debug, Serialize)]
struct RunEntry {
    m: f64,
    completed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    d_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit_window: Option<[f64; 2]>,
    passed: bool,
}

#[derive(Debug, Serialize)]
struct NestedEntry {
    m_small: f64,
    m_large: f64,
    tau: f64,
    sup_difference: f64,
}

#[derive(Debug, Serialize)]
struct AncientSummary {
    p: f64,
    d: f64,
    grid: Grid,
    runs: Vec<RunEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    envelope: Option<Envelope>,
    nested: Vec<NestedEntry>,
}

/// Fit window for one run: the configured one, shrunk to start after the
/// transient and to end by `tau_end`; the second half of the run when that
/// leaves less than one time unit. The flag is set when nothing was shrunk.
fn run_window(cfg: &ExperimentConfig, m: f64) -> ([f64; 2], bool) {
    let [lo, hi] = cfg.tolerances.fit_window;
    let end = cfg.time.tau_end;
    let lo2 = lo.max(-m + TRANSIENT);
    let hi2 = hi.min(end);
    if hi2 - lo2 >= 1.0 {
        ([lo2, hi2], lo2 == lo && hi2 == hi)
    } else if end - lo2 >= 1.0 {
        ([lo2, end], false)
    } else {
        ([0.5 * (end - m), end], false)
    }
}

fn run_record(
    cfg: &ExperimentConfig,
    spec: &SupersolutionSpec,
    run: &AncientRun,
) -> (FittedRates, Vec<InvariantRecord>, Option<[f64; 2]>) {
    let d = spec.merge_rate();
    let p = spec.params.p;
    let dx2 = run.grid.dx * run.grid.dx;
    let min_q = run
        .diagnostics
        .iter()
        .map(|s| s.q_m)
        .fold(f64::INFINITY, f64::min);
    let barrier = run
        .diagnostics
        .iter()
        .map(|s| s.barrier_violation)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut inv = vec![
        InvariantRecord::at_most("|Q_m(-m)|", run.diagnostics[0].q_m.abs(), 1e-12),
        InvariantRecord::at_most("-min Q_m", -min_q, 5.0 * dx2),
        InvariantRecord::at_most("max (u_m - v)", barrier, 5.0 * dx2),
        InvariantRecord::at_most("max increase of u_m", run.monotonicity_violation, 1e-8),
    ];
    let mut rates = FittedRates {
        d,
        d_hat: None,
        slope_x: None,
        slope_max: None,
    };
    let ([lo, hi], full) = run_window(cfg, run.m);
    if let Ok(fit) = fit_decay_rate(&window(&run.series(|s| s.q_m), lo, hi)) {
        rates.d_hat = Some(fit.rate);
        inv.push(InvariantRecord::at_most(
            "(p-1)/p - d_hat",
            (p - 1.0) / p - fit.rate,
            0.0,
        ));
        if full {
            inv.push(InvariantRecord::at_most(
                "|d_hat/d - 1|",
                (fit.rate / d - 1.0).abs(),
                0.15,
            ));
        }
    }
    let xs = window(&run.series(|s| s.x_intersection_numeric), lo, hi);
    let (t, x): (Vec<f64>, Vec<f64>) = xs.into_iter().unzip();
    rates.slope_x = linear_fit(&t, &x).ok().map(|f| f.slope);
    if let Ok(mb) = max_bound_check(run, d, lo, hi) {
        rates.slope_max = Some(mb.rate);
        inv.push(InvariantRecord::at_most(
            "max |argmax - x(tau)|",
            mb.argmax_offset,
            ARGMAX_OFFSET_BOUND,
        ));
    }
    (rates, inv, Some([lo, hi]))
}

pub fn ancient(g: &GlobalArgs, ms: &[f64]) -> Outcome {
    let mut cfg = load_config(g)?;
    if !ms.is_empty() {
        cfg.m_list = ms.to_vec();
        cfg.validate().map_err(tag("config"))?;
    }
    let dir = output_dir(g, &cfg)?;
    let rec = Recorder::new(&cfg, &dir, "ancient_manifest.json", "supersolution");
    recorded(rec, |rec| {
        let params = cfg.model_params().map_err(tag("supersolution"))?;
        let spec = SupersolutionSpec::build(params, &ShootOptions::default())
            .map_err(tag("supersolution"))?;
        let m_max = cfg.m_list.iter().copied().fold(0.0, f64::max);
        let grid = match cfg.grid.half_width {
            Some(h) => Grid::symmetric(h, cfg.grid.dx),
            None => construction_grid(&spec, m_max, cfg.grid.dx),
        }
        .map_err(tag("grid"))?;
        rec.stage("runs");
        let jobs: Vec<_> = cfg
            .m_list
            .iter()
            .map(|&m| (m, cfg.solver(), grid))
            .collect();
        let opts = RunOptions {
            snapshot_every: cfg.time.snapshot_every,
            formulation: cfg.formulation,
        };
        let results = run_jobs(&spec, &jobs, cfg.time.tau_end, &opts, cfg.workers);
        rec.stage("outputs");

        let mut entries = Vec::new();
        let mut done: Vec<&AncientRun> = Vec::new();
        let mut any_error = None;
        for (job, result) in jobs.iter().zip(&results) {
            let m = job.0;
            let mut man = RunManifest::new(&cfg, "run");
            man.m = Some(m);
            match result {
                Ok(run) => {
                    write_csv(&dir, &format!("ancient_m{m}.csv"), &run.csv())?;
                    write_csv(
                        &dir,
                        &format!("ancient_m{m}_trajectory.csv"),
                        &run.trajectory_csv(),
                    )?;
                    let (rates, inv, win) = run_record(&cfg, &spec, run);
                    let passed = inv.iter().all(|i| i.passed);
                    entries.push(RunEntry {
                        m,
                        completed: true,
                        error: None,
                        d_hat: rates.d_hat,
                        fit_window: win,
                        passed,
                    });
                    man.stage = "done".into();
                    man.succeeded = passed;
                    man.rates = Some(rates);
                    rec.manifest
                        .invariants
                        .extend(inv.iter().map(|i| InvariantRecord {
                            name: format!("m {m}: {}", i.name),
                            ..i.clone()
                        }));
                    man.invariants = inv;
                    done.push(run);
                }
                Err(e) => {
                    man.failure = Some(e.to_string());
                    entries.push(RunEntry {
                        m,
                        completed: false,
                        error: Some(e.to_string()),
                        d_hat: None,
                        fit_window: None,
                        passed: false,
                    });
                    any_error.get_or_insert_with(|| {
                        Failure::from_core(&format!("run m = {m}"), e.clone())
                    });
                }
            }
            write_json(&dir, &format!("ancient_m{m}_manifest.json"), &man)?;
        }

        done.sort_by(|a, b| a.m.total_cmp(&b.m));
        let p = spec.params.p;
        let d = spec.merge_rate();
        let envelope = if done.is_empty() {
            None
        } else {
            uniform_envelope(&done, d, p, TRANSIENT).ok()
        };
        // the end of the fit window when both runs have left their transient
        let nested = done
            .windows(2)
            .filter_map(|w| {
                let hi = cfg.tolerances.fit_window[1];
                let tau = if hi > -w[0].m + TRANSIENT && hi <= cfg.time.tau_end {
                    hi
                } else {
                    cfg.time.tau_end
                };
                sup_difference(w[0], w[1], tau).ok().map(|s| NestedEntry {
                    m_small: w[0].m,
                    m_large: w[1].m,
                    tau,
                    sup_difference: s,
                })
            })
            .collect();
        let summary = AncientSummary {
            p,
            d,
            grid,
            runs: entries,
            envelope,
            nested,
        };
        write_json(&dir, "ancient_summary.json", &summary)?;
        rec.manifest.rates = Some(FittedRates {
            d,
            d_hat: None,
            slope_x: None,
            slope_max: None,
        });

        if g.json {
            print_json(&summary)?;
        } else {
            println!("merge rate d = {d:.6}");
            for e in &summary.runs {
                match (&e.error, e.d_hat) {
                    (Some(err), _) => println!("m {:<5} FAILED: {err}", e.m),
                    (None, d_hat) => println!(
                        "m {:<5} d_hat {}  {}",
                        e.m,
                        d_hat.map_or("-".into(), |x| format!("{x:.4}")),
                        if e.passed { "PASS" } else { "FAIL" }
                    ),
                }
            }
            if let Some(env) = &summary.envelope {
                println!(
                    "envelope constant D = {:.4e} (spread {:.3})",
                    env.d_const, env.spread
                );
            }
            for n in &summary.nested {
                println!(
                    "sup |u_{} - u_{}| at tau = {} : {:.3e}",
                    n.m_small, n.m_large, n.tau, n.sup_difference
                );
            }
        }
        match any_error {
            Some(f) => Err(f),
            None => Ok(status_of(&rec.manifest.invariants)),
        }
    })
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    tolerance_scale: f64,
    passed: usize,
    failed: usize,
    results: Vec<CriterionResult>,
}

pub fn verify(g: &GlobalArgs, tolerance_scale: f64, criteria: &[u32]) -> Outcome {
    let cfg = load_config(g)?;
    if !(tolerance_scale >= 0.0 && tolerance_scale.is_finite()) {
        return Err(Failure::usage(
            "config",
            format!("tolerance scale {tolerance_scale} must be finite and nonnegative"),
        ));
    }
    let ids: Vec<u32> = if criteria.is_empty() {
        ALL_CRITERIA.to_vec()
    } else {
        criteria.to_vec()
    };
    if let Some(bad) = ids.iter().find(|k| !ALL_CRITERIA.contains(k)) {
        return Err(Failure::usage(
            "config",
            format!("no criterion {bad}; choose from 1 to 13"),
        ));
    }
    let dir = output_dir(g, &cfg)?;
    let rec = Recorder::new(&cfg, &dir, "verify_manifest.json", "acceptance");
    recorded(rec, |rec| {
        let acfg = AcceptanceConfig {
            workers: cfg.workers,
            tolerance_scale,
            dx: cfg.grid.dx,
            dtau: cfg.time.dtau,
        };
        if !g.json {
            println!(
                "{:>2}  {:<28} {:>12}  {:>11}  {:<6} law",
                "id", "criterion", "measured", "tolerance", "status"
            );
        }
        let results = run_selected(&acfg, &ids, |r| {
            if !g.json {
                println!(
                    "{:>2}  {:<28} {:>12}  {:>11}  {:<6} {}",
                    r.id,
                    r.name,
                    r.measured.map_or("-".into(), |x| format!("{x:.4e}")),
                    r.tolerance.map_or("-".into(), |x| format!("{x:.3e}")),
                    if r.passed { "PASS" } else { "FAIL" },
                    r.law
                );
                if let Some(e) = &r.error {
                    println!("      error: {e}");
                }
                for c in r.checks.iter().filter(|c| !c.passed) {
                    println!(
                        "      failed: {} = {} not in {}",
                        c.name,
                        c.measured
                            .map_or("non-finite".into(), |m| format!("{m:.6e}")),
                        c.band_text()
                    );
                }
            }
        });
        rec.stage("report");
        for r in &results {
            rec.manifest.invariants.push(InvariantRecord {
                name: format!("criterion {}: {}", r.id, r.name),
                measured: r.measured.unwrap_or(0.0),
                tolerance: r.tolerance.unwrap_or(0.0),
                passed: r.passed,
            });
        }
        let failed = results.iter().filter(|r| !r.passed).count();
        let report = VerifyReport {
            tolerance_scale,
            passed: results.len() - failed,
            failed,
            results,
        };
        let text = write_json(&dir, "verify_results.json", &report)?;
        if g.json {
            print!("{text}");
        } else {
            println!("{} passed, {} failed", report.passed, report.failed);
        }
        Ok(if failed == 0 {
            Status::Passed
        } else {
            Status::LawFailed
        })
    })
}

/// Snapshots of a long-format `(tau, x, u, ...)` table, one per distinct
/// `tau` in order of appearance.
fn read_trajectory(path: &Path) -> Result<Vec<FlowState>, Failure> {
    let stage = "read-trajectory";
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(stage, format!("{}: {e}", path.display())))?;
    let table = CsvTable::parse(&text).map_err(tag(stage))?;
    let col = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| Failure::usage(stage, format!("missing column {name}")))
    };
    let (taus, xs, us) = (col("tau")?, col("x")?, col("u")?);
    let mut states = Vec::new();
    let mut start = 0;
    while start < taus.len() {
        let tau = taus[start];
        let end = (start..taus.len())
            .find(|&k| taus[k] != tau)
            .unwrap_or(taus.len());
        let (x, u) = (&xs[start..end], &us[start..end]);
        if x.len() < 3 {
            return Err(Failure::usage(
                stage,
                format!("snapshot at tau = {tau} has fewer than 3 nodes"),
            ));
        }
        let dx = (x[x.len() - 1] - x[0]) / (x.len() - 1) as f64;
        let uniform = dx > 0.0
            && x.iter()
                .enumerate()
                .all(|(i, xi)| (xi - (x[0] + i as f64 * dx)).abs() <= 1e-9 * (1.0 + xi.abs()));
        if !uniform {
            return Err(Failure::usage(
                stage,
                format!("snapshot at tau = {tau} is not on a uniform grid"),
            ));
        }
        let grid = Grid {
            x_min: x[0],
            dx,
            len: x.len(),
        };
        states.push(FlowState::new(tau, grid, u.to_vec()).map_err(tag(stage))?);
        start = end;
    }
    if states.is_empty() {
        return Err(Failure::usage(stage, "trajectory has no rows"));
    }
    Ok(states)
}

#[derive(Debug, Serialize)]
struct OverlapEntry {
    tau: f64,
    left: f64,
    right: f64,
}

#[derive(Debug, Serialize)]
struct CurvatureSummary {
    n: u32,
    states: usize,
    rm_sup: f64,
    min_r_normalized: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    monitor: Option<RmMonitor>,
    overlap: Vec<OverlapEntry>,
}

pub fn curvature(g: &GlobalArgs, run: &Path) -> Outcome {
    let cfg = load_config(g)?;
    let states = read_trajectory(run)?;
    let dir = output_dir(g, &cfg)?;
    let rec = Recorder::new(&cfg, &dir, "curvature_manifest.json", "curvature");
    recorded(rec, |rec| {
        let opts = GeometryOptions::default();
        let mut profiles = CsvTable::new(&[
            "tau",
            "x",
            "r_normalized",
            "r_geometric",
            "ric_radial",
            "ric_spherical",
            "sec_cond1",
            "sec_cond2",
            "rm_norm",
        ]);
        let mut tips = CsvTable::new(&[
            "tau",
            "side",
            "y",
            "k_radial",
            "k_spherical",
            "r_geometric",
            "rm_norm",
        ]);
        let mut overlap = Vec::new();
        let (mut rm_sup, mut min_r) = (0.0f64, f64::INFINITY);
        for s in &states {
            let sc = state_curvature(s, cfg.n, &opts).map_err(tag("curvature"))?;
            let pr = &sc.profile;
            for k in 0..pr.x.len() {
                profiles.push_row(&[
                    s.tau,
                    pr.x[k],
                    pr.r_normalized[k],
                    pr.r_geometric[k],
                    pr.ric_radial[k],
                    pr.ric_spherical[k],
                    pr.sec_cond1[k],
                    pr.sec_cond2[k],
                    pr.rm_norm[k],
                ]);
            }
            for (side, tip) in [(-1.0, &sc.left_tip), (1.0, &sc.right_tip)] {
                for k in 0..tip.y.len() {
                    tips.push_row(&[
                        s.tau,
                        side,
                        tip.y[k],
                        tip.k_radial[k],
                        tip.k_spherical[k],
                        tip.r_geometric[k],
                        tip.rm_norm[k],
                    ]);
                }
            }
            overlap.push(OverlapEntry {
                tau: s.tau,
                left: sc.left_tip.overlap_rel_diff,
                right: sc.right_tip.overlap_rel_diff,
            });
            rm_sup = rm_sup.max(sc.rm_sup);
            min_r = min_r.min(sc.min_r_normalized);
        }
        write_csv(&dir, "curvature_profiles.csv", &profiles)?;
        write_csv(&dir, "curvature_tips.csv", &tips)?;
        rec.stage("monitor");
        let monitor = if states.len() >= 2 {
            let m = riemann_norm_monitor(&states, cfg.n, &opts).map_err(tag("monitor"))?;
            write_csv(&dir, "rm_monitor.csv", &m.csv())?;
            Some(m)
        } else {
            None
        };
        let summary = CurvatureSummary {
            n: cfg.n,
            states: states.len(),
            rm_sup,
            min_r_normalized: min_r,
            monitor,
            overlap,
        };
        let text = write_json(&dir, "curvature_summary.json", &summary)?;
        if g.json {
            print!("{text}");
        } else {
            println!(
                "{} states, sup |Rm| = {:.6e}, min normalized R = {:.6e}",
                summary.states, rm_sup, min_r
            );
            if let Some(m) = &summary.monitor {
                println!(
                    "|Rm| trend: slope {:.3e} against mean {:.6e}",
                    m.slope, m.mean
                );
            }
            let worst = summary
                .overlap
                .iter()
                .map(|o| o.left.max(o.right))
                .fold(0.0, f64::max);
            println!("largest cylinder-versus-cap overlap difference {worst:.3e}");
        }
        Ok(Status::Passed)
    })
}

#[derive(Debug, Serialize)]
struct RatesReport {
    p: f64,
    lambda: f64,
    lambda_prime: f64,
    gamma: f64,
    gamma_prime: f64,
    gamma_large: f64,
    gamma_large_prime: f64,
    d: f64,
    mass_rate: f64,
    mu: f64,
    slope_x_expected: f64,
    slope_x_fit: f64,
    slope_log_gap_fit: f64,
    c_tail: f64,
    c_tail_prime: f64,
    merge_constant: f64,
}

pub fn rates(g: &GlobalArgs) -> Outcome {
    let cfg = load_config(g)?;
    let dir = output_dir(g, &cfg)?;
    let rec = Recorder::new(&cfg, &dir, "rates_manifest.json", "rates");
    recorded(rec, |rec| {
        let params = cfg.model_params().map_err(tag("rates"))?;
        let p = params.p;
        let (g1, g2, d) = params.decay().map_err(tag("rates"))?;
        let spec = SupersolutionSpec::build(params, &ShootOptions::default())
            .map_err(tag("supersolution"))?;
        let law = intersection_law(&spec, -40.0, -20.0, 0.25).map_err(tag("intersection"))?;
        let report = RatesReport {
            p,
            lambda: params.lambda,
            lambda_prime: params.lambda_prime,
            gamma: g1,
            gamma_prime: g2,
            gamma_large: gamma_large_of_lambda(params.lambda, p).map_err(tag("rates"))?,
            gamma_large_prime: gamma_large_of_lambda(params.lambda_prime, p)
                .map_err(tag("rates"))?,
            d,
            mass_rate: (p - 1.0) / p,
            mu: d - (p - 1.0) / p,
            slope_x_expected: law.slope_x_expected,
            slope_x_fit: law.slope_x,
            slope_log_gap_fit: law.slope_log_gap,
            c_tail: spec.decay_left.c_tail,
            c_tail_prime: spec.decay_right.c_tail,
            merge_constant: fit_merge_constant(&spec, 30.0).map_err(tag("merge-constant"))?,
        };
        rec.manifest.rates = Some(FittedRates {
            d,
            d_hat: None,
            slope_x: Some(law.slope_x),
            slope_max: None,
        });
        let text = write_json(&dir, "rates.json", &report)?;
        if g.json {
            print!("{text}");
        } else {
            println!(
                "p = {p}, lambda = {}, lambda' = {}",
                report.lambda, report.lambda_prime
            );
            println!(
                "tail exponents      {:.6}  {:.6}",
                report.gamma, report.gamma_prime
            );
            println!(
                "merge rate d        {:.6}  (mass rate {:.6}, mu {:.6})",
                d, report.mass_rate, report.mu
            );
            println!(
                "crossing slope      {:.6}  fit {:.6}",
                report.slope_x_expected, report.slope_x_fit
            );
            println!(
                "ln(1 - value) slope {:.6}  fit {:.6}",
                d, report.slope_log_gap_fit
            );
            println!("merge constant C    {:.6e}", report.merge_constant);
        }
        Ok(Status::Passed)
    })
}
