use std::error::Error;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;

use cellspan::config::RunConfig;
use cellspan::elliptic::{EllipticSettings, PotentialProblem};
use cellspan::lifespan::{lifespan_pipeline, AprioriParams};
use cellspan::parabolic::{
    num, simulate, tau_continuation, trajectory_amplitude, SimulationConfig, Trajectory,
};
use cellspan::params::validate;
use cellspan::reaction::KineticsMode;
use cellspan::verify::{
    equilibrium_config, equilibrium_preservation, invariant_sweep, run_mms, uniqueness_sweep,
    ConvergenceTable, MmsCase,
};

use crate::{ConfigArgs, SweepAxis, VerifyCase};

pub type CmdResult = Result<Status, Box<dyn Error>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Ok = 0,
    InvariantFailure = 1,
    SolverFailure = 2,
}

pub fn load(args: &ConfigArgs) -> Result<(RunConfig, PathBuf), Box<dyn Error>> {
    let path = args
        .config_path()
        .ok_or("no configuration file given (positional CONFIG or --config)")?;
    let cfg = RunConfig::from_path(path)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| cfg.output.directory.clone());
    Ok((cfg, out))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Box<dyn Error>> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| format!("cannot create {}: {e}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_trajectory(traj: &Trajectory, cfg: &RunConfig, dir: &Path) -> Result<(), Box<dyn Error>> {
    if cfg.output.fields {
        let mut w = create(dir, "fields.csv")?;
        traj.write_fields_csv(&mut w)?;
        w.flush()?;
    }
    if cfg.output.diagnostics {
        let mut w = create(dir, "diagnostics.csv")?;
        traj.write_diagnostics_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn simulation(
    cfg: &RunConfig,
    verification_mode: bool,
) -> Result<SimulationConfig, Box<dyn Error>> {
    let mut sim = cfg.simulation()?;
    if verification_mode {
        sim.mode = KineticsMode::Exact;
    }
    Ok(sim)
}

pub fn cmd_run(
    cfg: RunConfig,
    out: &Path,
    continuation: bool,
    verification_mode: bool,
) -> CmdResult {
    let sim = simulation(&cfg, verification_mode)?;
    info!(
        "run: {} cells, {} steps, dt = {}",
        sim.mesh.n_cells(),
        sim.n_steps(),
        sim.dt
    );
    let traj = match simulate(&sim) {
        Ok(t) => t,
        Err(failure) => {
            write_trajectory(&failure.partial, &cfg, out)?;
            eprintln!("solver failure: {failure}");
            return Ok(Status::SolverFailure);
        }
    };
    write_trajectory(&traj, &cfg, out)?;
    let report = invariant_sweep(&traj);
    let mut w = create(out, "invariants.txt")?;
    w.write_all(report.summary().as_bytes())?;
    w.flush()?;
    print!("{}", report.summary());
    let mut status = if report.all_passed() {
        Status::Ok
    } else {
        Status::InvariantFailure
    };

    if continuation {
        let taus = cfg.continuation_taus();
        match tau_continuation(&sim, &taus) {
            Ok(rep) => {
                let mut w = create(out, "continuation.csv")?;
                writeln!(w, "tau,difference_to_previous")?;
                for (k, tau) in rep.taus.iter().enumerate() {
                    let diff = k
                        .checked_sub(1)
                        .map(|j| num(rep.differences[j]))
                        .unwrap_or_default();
                    writeln!(w, "{},{}", num(*tau), diff)?;
                }
                w.flush()?;
            }
            Err(failure) => {
                eprintln!("solver failure during continuation: {failure}");
                status = status.max(Status::SolverFailure);
            }
        }
    }
    Ok(status)
}

pub fn cmd_lifespan(cfg: &RunConfig, out: &Path) -> CmdResult {
    let report = match cfg.lifespan() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("lifespan evaluation failed: {e}");
            return Ok(Status::SolverFailure);
        }
    };
    let text = report.to_key_value();
    let mut w = create(out, "lifespan.txt")?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    print!("{text}");
    Ok(Status::Ok)
}

struct CaseOutcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn order_check(table: &ConvergenceTable, lo: f64, hi: f64) -> (bool, String) {
    let orders = table.orders();
    let ok = !orders.is_empty()
        && orders
            .iter()
            .all(|o| o.iter().all(|v| (lo..=hi).contains(v)));
    let text = orders
        .iter()
        .map(|o| format!("({:.3}, {:.3}, {:.3})", o[0], o[1], o[2]))
        .collect::<Vec<_>>()
        .join(" ");
    (ok, format!("orders {text}, expected in [{lo}, {hi}]"))
}

fn mms_case(
    name: &'static str,
    case: &MmsCase,
    out: &Path,
    range: Option<(f64, f64)>,
) -> Result<CaseOutcome, Box<dyn Error>> {
    let table = run_mms(case)?;
    let mut w = create(out, &format!("mms_{name}.csv"))?;
    w.write_all(table.to_csv().as_bytes())?;
    w.flush()?;
    let (passed, detail) = match range {
        Some((lo, hi)) => order_check(&table, lo, hi),
        None => {
            let worst = table.rows.iter().flat_map(|r| r.linf).fold(0.0, f64::max);
            (worst <= 1e-12, format!("max error {worst:.3e}"))
        }
    };
    Ok(CaseOutcome {
        name,
        passed,
        detail,
    })
}

fn equilibrium_case() -> Result<CaseOutcome, Box<dyn Error>> {
    let mesh = Arc::new(RunConfig::demo().mesh()?);
    let drift = equilibrium_preservation(&equilibrium_config(
        mesh,
        KineticsMode::Exact,
        1e-3,
        1e-3,
        100,
    ))?;
    Ok(CaseOutcome {
        name: "equilibrium",
        passed: drift <= 1e-12,
        detail: format!("drift {drift:.3e}"),
    })
}

fn uniqueness_case() -> Result<CaseOutcome, Box<dyn Error>> {
    let sim = RunConfig::demo().simulation()?;
    let c = sim.initial_concentration();
    let problem = PotentialProblem {
        mesh: &sim.mesh,
        params: &sim.params,
        concentration: &c,
        h: &sim.h,
        kinetics: sim.kinetics()?,
        forcing: None,
    };
    let r = uniqueness_sweep(&problem, 10, 8, &EllipticSettings::default())?;
    Ok(CaseOutcome {
        name: "uniqueness",
        passed: r.discrepancy <= 1e-8,
        detail: format!(
            "discrepancy {:.3e} over {} guesses",
            r.discrepancy, r.solutions
        ),
    })
}

pub fn cmd_verify(case: VerifyCase, out: &Path) -> CmdResult {
    let want = |c: VerifyCase| case == VerifyCase::All || case == c;
    let mut outcomes = Vec::new();
    let mut failed_to_run = false;
    let mut push = |r: Result<CaseOutcome, Box<dyn Error>>, name: &'static str| match r {
        Ok(o) => outcomes.push(o),
        Err(e) => {
            eprintln!("{name}: solver failure: {e}");
            failed_to_run = true;
        }
    };
    if want(VerifyCase::Spatial) {
        push(
            mms_case("spatial", &MmsCase::smooth_spatial(), out, Some((1.9, 2.1))),
            "spatial",
        );
    }
    if want(VerifyCase::Temporal) {
        push(
            mms_case(
                "temporal",
                &MmsCase::smooth_temporal(),
                out,
                Some((0.9, 1.1)),
            ),
            "temporal",
        );
    }
    if want(VerifyCase::Constant) {
        push(
            mms_case("constant", &MmsCase::constant(), out, None),
            "constant",
        );
    }
    if want(VerifyCase::Equilibrium) {
        push(equilibrium_case(), "equilibrium");
    }
    if want(VerifyCase::Uniqueness) {
        push(uniqueness_case(), "uniqueness");
    }
    let summary: String = outcomes
        .iter()
        .map(|o| {
            format!(
                "{} {}: {}\n",
                if o.passed { "PASS" } else { "FAIL" },
                o.name,
                o.detail
            )
        })
        .collect();
    let mut w = create(out, "verify.txt")?;
    w.write_all(summary.as_bytes())?;
    w.flush()?;
    print!("{summary}");
    Ok(if failed_to_run {
        Status::SolverFailure
    } else if outcomes.iter().all(|o| o.passed) {
        Status::Ok
    } else {
        Status::InvariantFailure
    })
}

fn csv_text(s: &str) -> String {
    s.replace([',', '\n'], " ")
}

fn lifespan_row(base: &AprioriParams, c: f64) -> (String, Status) {
    match lifespan_pipeline(&AprioriParams { c, ..*base }) {
        Ok(r) => (
            format!(
                "{},{},{},{},{},{},ok",
                num(c),
                num(r.gamma),
                num(r.delta),
                num(r.s0),
                num(r.eps0),
                num(r.tmax)
            ),
            Status::Ok,
        ),
        Err(e) => (
            format!("{},,,,,,failed: {}", num(c), csv_text(&e.to_string())),
            Status::SolverFailure,
        ),
    }
}

fn simulation_row(
    cfg: &RunConfig,
    axis: SweepAxis,
    value: f64,
    index: usize,
    out: &Path,
    verification_mode: bool,
) -> Result<(String, Status), Box<dyn Error>> {
    let mut sim = simulation(cfg, verification_mode)?;
    match axis {
        SweepAxis::Tau => sim.tau = value,
        SweepAxis::Dt => sim.dt = value,
        SweepAxis::Alpha4 => {
            sim.params.alpha4 = value;
            validate(&sim.params, &cfg.layout)?;
        }
        SweepAxis::C => unreachable!("handled by the lifespan sweep"),
    }
    let dir = out.join(format!("member_{index:03}"));
    let traj = match simulate(&sim) {
        Ok(t) => t,
        Err(failure) => {
            write_trajectory(&failure.partial, cfg, &dir)?;
            warn!("sweep member {index} failed: {failure}");
            let row = format!(
                "{},,,,,,failed: {}",
                num(value),
                csv_text(&failure.to_string())
            );
            return Ok((row, Status::SolverFailure));
        }
    };
    write_trajectory(&traj, cfg, &dir)?;
    let report = invariant_sweep(&traj);
    let (min_c, max_c) = traj
        .states
        .iter()
        .flat_map(|s| s.c.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
            (lo.min(c), hi.max(c))
        });
    let amplitude = trajectory_amplitude(&traj)
        .map(|a| num(a.iter().fold(f64::NEG_INFINITY, |m, &(_, v)| m.max(v))))
        .unwrap_or_default();
    let outer = traj
        .diagnostics
        .iter()
        .map(|d| d.outer_iterations)
        .max()
        .unwrap_or(0);
    let (status, label) = if report.all_passed() {
        (Status::Ok, "ok".to_string())
    } else {
        let names: Vec<&str> = report
            .results
            .iter()
            .filter(|r| !r.passed)
            .map(|r| r.name)
            .collect();
        (
            Status::InvariantFailure,
            format!("invariant failure: {}", names.join(" ")),
        )
    };
    let row = format!(
        "{},{},{},{},{},{},{}",
        num(value),
        sim.n_steps(),
        num(min_c),
        num(max_c),
        amplitude,
        outer,
        label
    );
    Ok((row, status))
}

pub fn cmd_sweep(
    cfg: RunConfig,
    out: &Path,
    axis: SweepAxis,
    values: &[f64],
    jobs: usize,
    verification_mode: bool,
) -> CmdResult {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()?;
    let (header, rows): (&str, Vec<(String, Status)>) = match axis {
        SweepAxis::C => {
            let base = cfg
                .apriori
                .ok_or("the c sweep needs an [apriori] section")?;
            let rows =
                pool.install(|| values.par_iter().map(|&c| lifespan_row(&base, c)).collect());
            ("c,gamma,delta,s0,eps0,Tmax,status", rows)
        }
        _ => {
            let rows: Vec<Result<(String, Status), String>> = pool.install(|| {
                values
                    .par_iter()
                    .enumerate()
                    .map(|(k, &v)| {
                        simulation_row(&cfg, axis, v, k, out, verification_mode)
                            .map_err(|e| e.to_string())
                    })
                    .collect()
            });
            let rows = rows
                .into_iter()
                .zip(values)
                .map(|(r, v)| {
                    r.unwrap_or_else(|e| {
                        (
                            format!("{},,,,,,failed: {}", num(*v), csv_text(&e)),
                            Status::SolverFailure,
                        )
                    })
                })
                .collect();
            (
                "value,steps,min_C,max_C,max_amplitude,max_outer_iters,status",
                rows,
            )
        }
    };
    let mut w = create(out, "sweep.csv")?;
    writeln!(w, "{header}")?;
    for (row, _) in &rows {
        writeln!(w, "{row}")?;
    }
    w.flush()?;
    Ok(rows.iter().map(|(_, s)| *s).max().unwrap_or(Status::Ok))
}
