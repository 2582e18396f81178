//! Acceptance suite. Each test prints one PASS/FAIL line to stderr
//! (bypassing output capture) and then asserts.

use std::io::Write;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cellspan::config::RunConfig;
use cellspan::elliptic::{EllipticSettings, PotentialProblem};
use cellspan::geometry::Mesh;
use cellspan::lifespan::{
    amplitude_certificate, degiorgi_iterate, degiorgi_threshold, epsilon0, gamma_exponent,
    lifespan_from_gap, lifespan_pipeline, solve_s0, solve_tmax, tangency_df, tangency_f,
    AprioriParams, LifespanReport,
};
use cellspan::parabolic::{simulate, trajectory_amplitude, Trajectory};
use cellspan::reaction::{dg_dy2, dg_dy3, g, KineticsMode};
use cellspan::verify::{
    equilibrium_config, equilibrium_preservation, invariant_sweep, run_mms, uniqueness_sweep,
    MmsCase, NONNEGATIVITY, POTENTIAL_BOUND, POTENTIAL_IDENTITY,
};

fn report(id: u32, name: &str, outcome: &Result<String, String>) {
    let line = match outcome {
        Ok(detail) => format!("PASS criterion {id:>2} ({name}): {detail}"),
        Err(detail) => format!("FAIL criterion {id:>2} ({name}): {detail}"),
    };
    let _ = writeln!(std::io::stderr(), "{line}");
}

fn conclude(id: u32, name: &str, outcome: Result<String, String>) {
    report(id, name, &outcome);
    if let Err(e) = outcome {
        panic!("criterion {id} failed: {e}");
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, || {
        format!("runtime {elapsed:?} exceeds {limit:?}")
    })
}

/// The demo run: 300 cells, 100 steps, τ = 1e-3.
fn demo_run() -> &'static (Trajectory, Duration) {
    static RUN: OnceLock<(Trajectory, Duration)> = OnceLock::new();
    RUN.get_or_init(|| {
        let sim = RunConfig::demo()
            .simulation()
            .expect("demo simulation config");
        let start = Instant::now();
        let traj = simulate(&sim).expect("demo run");
        (traj, start.elapsed())
    })
}

/// The demo configuration over [0, T_max] with 100 steps.
fn lifespan_run() -> &'static (Trajectory, LifespanReport) {
    static RUN: OnceLock<(Trajectory, LifespanReport)> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = RunConfig::demo();
        let report = cfg.lifespan().expect("demo lifespan");
        let mut sim = cfg.simulation().expect("demo simulation config");
        sim.t_end = report.tmax;
        sim.dt = report.tmax / 100.0;
        (simulate(&sim).expect("lifespan run"), report)
    })
}

fn min_c(traj: &Trajectory) -> f64 {
    traj.states
        .iter()
        .flat_map(|s| s.c.iter().copied())
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn criterion_01_tangency_threshold() {
    let run = || -> Result<String, String> {
        let start = Instant::now();
        let s0 = solve_s0(1.0, 1.0).map_err(|e| e.to_string())?;
        // 2s² − 2s − 1 = 0
        let exact = (1.0 + 3f64.sqrt()) / 2.0;
        check((s0 - exact).abs() <= 1e-10, || {
            format!("s0 = {s0}, expected {exact}")
        })?;
        let eps = epsilon0(1.0, 1.0, s0);
        let eps_oracle = 1.0 / (2.0 * (exact * exact).exp() * exact);
        check((eps - 0.0566381).abs() <= 1e-6, || format!("eps0 = {eps}"))?;
        check((eps - eps_oracle).abs() <= 1e-12, || {
            format!("eps0 = {eps} vs closed form {eps_oracle}")
        })?;

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let m = rng.gen_range(0.1..=10.0);
            let delta = rng.gen_range(0.1..=5.0);
            let s0 = solve_s0(m, delta).map_err(|e| e.to_string())?;
            check(s0 > m, || format!("s0 = {s0} not above m = {m}"))?;
            let ln_eps = cellspan::lifespan::ln_epsilon0(m, delta, s0);
            let f = tangency_f(ln_eps, s0, m, delta).abs();
            let df = tangency_df(ln_eps, s0, m, delta).abs();
            check(f <= 1e-8 && df <= 1e-8, || {
                format!("(m, delta) = ({m}, {delta}): |f| = {f:e}, |f'| = {df:e}")
            })?;
            worst = worst.max(f).max(df);
        }
        within(start.elapsed(), Duration::from_secs(1))?;
        Ok(format!(
            "s0(1,1) = {s0:.12}, eps0(1,1) = {eps:.7}, worst tangency residual {worst:.2e}"
        ))
    };
    conclude(1, "tangency threshold", run());
}

#[test]
fn criterion_02_degiorgi_recursion() {
    let run = || -> Result<String, String> {
        let start = Instant::now();
        let orbit = degiorgi_iterate(0.5, 1.0, 2.0, 1.0, 50).map_err(|e| e.to_string())?;
        for (n, y) in orbit.iter().enumerate() {
            let expected = 0.5f64.powi(n as i32 + 1);
            check(
                (y - expected).abs() <= 4.0 * f64::EPSILON * expected,
                || format!("y_{n} = {y:e} != {expected:e}"),
            )?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in 0..200 {
            let c = rng.gen_range(0.5..=2.0);
            let b = rng.gen_range(1.5..=4.0);
            let alpha = rng.gen_range(0.5..=2.0);
            let threshold = degiorgi_threshold(c, b, alpha).map_err(|e| e.to_string())?;
            let y0 = threshold * rng.gen_range(0.01..0.99);
            let orbit = degiorgi_iterate(y0, c, b, alpha, 200).map_err(|e| e.to_string())?;
            let last = *orbit.last().unwrap();
            check(last < 1e-12, || format!("start {k}: y_200 = {last:e}"))?;
        }
        within(start.elapsed(), Duration::from_secs(1))?;
        Ok("equality orbit exact for n <= 50; 200 sub-threshold starts below 1e-12".into())
    };
    conclude(2, "De Giorgi recursion", run());
}

/// g(T) written out from its definition.
fn gauge_oracle(t: f64, q: f64, n: f64, d: f64) -> f64 {
    let w = 2.0 * d - 1.0;
    let a =
        (1.0 + t).powf(2.0 * n / (n + 2.0)) * t.powf(2.0 * (2.0 * q - 2.0 - n) / (q * (n + 2.0)));
    let b = (1.0 + t).powf(2.0 * n / ((n + 2.0) * w)) * t.powf(2.0 / (q * w));
    a.max(b)
}

/// Plain bisection for the lifespan pipeline, linear in s and T.
fn lifespan_oracle(m: f64, delta: f64, c: f64, q: f64, n: f64, d: f64) -> f64 {
    let f = |s: f64| 1.0 / (m * (1.0 + delta) * s.powf(delta)) - s + m;
    let (mut lo, mut hi) = (1e-9, m + 1.0 / (m * (1.0 + delta) * 1e-9f64.powf(delta)));
    for _ in 0..500 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s0 = 0.5 * (lo + hi);
    let eps = 1.0 / (m * (1.0 + delta) * (m * s0.powf(1.0 + delta)).exp() * s0.powf(delta));
    let (mut lo, mut hi) = (0.0, 1.0);
    while c * gauge_oracle(hi, q, n, d).powi(2) < eps {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if c * gauge_oracle(mid, q, n, d).powi(2) < eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn criterion_03_tmax_inversion() {
    let run = || -> Result<String, String> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let t = 10f64.powf(rng.gen_range(-4.0..=1.0));
            let c = rng.gen_range(0.1..=10.0);
            let n = rng.gen_range(1..=3) as f64;
            let q = 1.0 + n / 2.0 + rng.gen_range(0.1..=5.0);
            let d = rng.gen_range(0.6..=3.0);
            let eps = c * gauge_oracle(t, q, n, d).powi(2);
            let back = solve_tmax(eps, c, q, n, d).map_err(|e| e.to_string())?;
            let rel = (back - t).abs() / t;
            check(rel <= 1e-10, || {
                format!("T = {t}, c = {c}, q = {q}, N = {n}, d = {d}: got {back} (rel {rel:e})")
            })?;
            worst = worst.max(rel);
        }

        let gamma = gamma_exponent(4.0, 3.0, 1.0, 1.0).map_err(|e| e.to_string())?;
        check(gamma == 5.4, || {
            format!("gamma = {gamma:?}, expected exactly 5.4")
        })?;
        let pipeline = lifespan_pipeline(&AprioriParams::new(3, 4.0, 1.0, 1.0, 1.0))
            .map_err(|e| e.to_string())?;
        check(pipeline.gamma == 5.4, || {
            format!("pipeline gamma = {:?}", pipeline.gamma)
        })?;
        let oracle = lifespan_oracle(1.0, gamma - 1.0, 1.0, 4.0, 3.0, 1.0);
        let rel = (pipeline.tmax - oracle).abs() / oracle;
        check(rel <= 0.05, || {
            format!(
                "pipeline Tmax {} vs oracle {oracle} (rel {rel:e})",
                pipeline.tmax
            )
        })?;

        // a unit exponent gap gives T_max near 8.1e-3
        let unit = lifespan_from_gap(1.0, 1.0, 1.0, 4.0, 3.0, 1.0).map_err(|e| e.to_string())?;
        let unit_oracle = lifespan_oracle(1.0, 1.0, 1.0, 4.0, 3.0, 1.0);
        check((unit.tmax - 8.1e-3).abs() <= 0.05 * 8.1e-3, || {
            format!("unit-gap Tmax = {}", unit.tmax)
        })?;
        check(
            (unit.tmax - unit_oracle).abs() <= 0.05 * unit_oracle,
            || format!("unit-gap oracle {unit_oracle}"),
        )?;
        Ok(format!(
            "round trip rel err <= {worst:.1e}; gamma = {gamma}; pipeline Tmax = {:.4e} (oracle {oracle:.4e}); unit-gap Tmax = {:.4e}",
            pipeline.tmax, unit.tmax
        ))
    };
    conclude(3, "Tmax inversion", run());
}

#[test]
fn criterion_04_kinetics_properties() {
    let run = || -> Result<String, String> {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let err = |e: cellspan::error::KineticsError| e.to_string();
        for _ in 0..10_000 {
            let y1 = rng.gen_range(0.2..=5.0);
            let y2 = rng.gen_range(0.2..=5.0);
            let y3 = rng.gen_range(-5.0..=5.0);
            let d = rng.gen_range(0.6..=3.0);
            let a2 = rng.gen_range(0.2..=2.0);
            let v = g(y1, y2, y3, d, a2).map_err(err)?;
            let mirrored = g(1.0 / y1, 1.0 / y2, -y3, d, a2).map_err(err)?;
            check((mirrored + v).abs() <= 1e-12 * v.abs().max(1.0), || {
                format!("antisymmetry at ({y1}, {y2}, {y3}): {mirrored} vs {v}")
            })?;

            let h3 = 1e-6;
            let fd3 = (g(y1, y2, y3 + h3, d, a2).map_err(err)?
                - g(y1, y2, y3 - h3, d, a2).map_err(err)?)
                / (2.0 * h3);
            let an3 = dg_dy3(y1, y2, y3, d, a2).map_err(err)?;
            check((fd3 - an3).abs() <= 1e-6 * an3.abs().max(1.0), || {
                format!("dG/dy3 {an3} vs {fd3}")
            })?;
            let h2 = 1e-6 * y2;
            let fd2 = (g(y1, y2 + h2, y3, d, a2).map_err(err)?
                - g(y1, y2 - h2, y3, d, a2).map_err(err)?)
                / (2.0 * h2);
            let an2 = dg_dy2(y1, y2, y3, d, a2).map_err(err)?;
            check((fd2 - an2).abs() <= 1e-6 * an2.abs().max(1.0), || {
                format!("dG/dy2 {an2} vs {fd2}")
            })?;

            check(an3 >= 2.0 * a2 * (1.0 - 1e-14), || {
                format!("dG/dy3 = {an3} < 2 alpha2 = {}", 2.0 * a2)
            })?;
            check(an2 <= -2.0 * d / y2 * (1.0 - 1e-14), || {
                format!("dG/dy2 = {an2} > -2d/y2 = {}", -2.0 * d / y2)
            })?;
        }
        Ok("antisymmetry, derivative and monotonicity checks hold on 10^4 samples".into())
    };
    conclude(4, "kinetics properties", run());
}

#[test]
fn criterion_05_conservation_identity() {
    let run = || -> Result<String, String> {
        let (traj, elapsed) = demo_run();
        check(traj.context.mesh.n_cells() == 300, || {
            "demo mesh is not 300 cells".into()
        })?;
        check(traj.states.len() == 101, || {
            format!("{} states recorded, expected 101", traj.states.len())
        })?;
        let report = invariant_sweep(traj);
        let r = report.get(POTENTIAL_IDENTITY).unwrap();
        check(r.passed, || {
            format!(
                "identity violated first at t = {:?}, margin {:e}",
                r.first_failure, r.worst_margin
            )
        })?;
        within(*elapsed, Duration::from_secs(30))?;
        let worst = traj
            .diagnostics
            .iter()
            .map(|d| d.identity_residual.abs())
            .fold(0.0, f64::max);
        Ok(format!(
            "max |identity| = {worst:.2e} over 100 steps, runtime {elapsed:.2?}"
        ))
    };
    conclude(5, "conservation identity", run());
}

#[test]
fn criterion_06_nonnegativity_and_positivity() {
    let run = || -> Result<String, String> {
        let (demo, _) = demo_run();
        let (life, report) = lifespan_run();
        let mesh = Arc::new(RunConfig::demo().mesh().map_err(|e| e.to_string())?);
        let eq = simulate(&equilibrium_config(
            mesh,
            KineticsMode::Exact,
            1e-3,
            1e-3,
            100,
        ))
        .map_err(|e| e.to_string())?;
        for (name, traj) in [("demo", demo), ("lifespan", life), ("equilibrium", &eq)] {
            let r = invariant_sweep(traj);
            let nn = r.get(NONNEGATIVITY).unwrap();
            check(nn.passed, || {
                format!(
                    "{name} run: min C below -1e-12 at t = {:?}",
                    nn.first_failure
                )
            })?;
        }
        let c0_min = RunConfig::demo().params.c0.min();
        let lowest = min_c(life);
        check(lowest >= 0.1 * c0_min, || {
            format!("min C = {lowest} < 0.1 min C0 = {}", 0.1 * c0_min)
        })?;
        Ok(format!(
            "min C >= -1e-12 on all runs; over [0, Tmax = {:.3e}] min C = {lowest:.6} >= {:.2}",
            report.tmax,
            0.1 * c0_min
        ))
    };
    conclude(6, "nonnegativity and positivity", run());
}

#[test]
fn criterion_07_potential_bound() {
    let run = || -> Result<String, String> {
        let (demo, _) = demo_run();
        let (life, _) = lifespan_run();
        let mut worst = f64::INFINITY;
        let mut solves = 0;
        for (name, traj) in [("demo", demo), ("lifespan", life)] {
            let r = invariant_sweep(traj);
            let b = r.get(POTENTIAL_BOUND).unwrap();
            check(b.passed, || {
                format!("{name} run: bound violated at t = {:?}", b.first_failure)
            })?;
            worst = worst.min(b.worst_margin);
            solves += traj.states.len();
        }
        Ok(format!(
            "{solves} converged solves within the bound, smallest slack {worst:.3e}"
        ))
    };
    conclude(7, "potential L-infinity bound", run());
}

#[test]
fn criterion_08_uniqueness() {
    let run = || -> Result<String, String> {
        let cfg = RunConfig::demo();
        let sim = cfg.simulation().map_err(|e| e.to_string())?;
        let mesh: &Mesh = &sim.mesh;
        let c = sim.initial_concentration();
        let problem = PotentialProblem {
            mesh,
            params: &sim.params,
            concentration: &c,
            h: &sim.h,
            kinetics: sim.kinetics().map_err(|e| e.to_string())?,
            forcing: None,
        };
        let r = uniqueness_sweep(&problem, 10, 8, &EllipticSettings::default())
            .map_err(|e| e.to_string())?;
        check(r.solutions == 10, || format!("{} solutions", r.solutions))?;
        check(r.discrepancy <= 1e-8, || {
            format!("discrepancy {:e}", r.discrepancy)
        })?;
        Ok(format!("10 random guesses agree to {:.2e}", r.discrepancy))
    };
    conclude(8, "uniqueness", run());
}

#[test]
fn criterion_09_mms_convergence() {
    let run = || -> Result<String, String> {
        let start = Instant::now();
        let spatial = run_mms(&MmsCase::smooth_spatial()).map_err(|e| e.to_string())?;
        let temporal = run_mms(&MmsCase::smooth_temporal()).map_err(|e| e.to_string())?;
        let so = spatial.orders();
        let to = temporal.orders();
        check(so.len() == 3 && to.len() == 3, || {
            "expected three refinements per study".into()
        })?;
        for o in &so {
            check(o.iter().all(|v| (1.9..=2.1).contains(v)), || {
                format!("spatial orders {so:?}")
            })?;
        }
        for o in &to {
            check(o.iter().all(|v| (0.9..=1.1).contains(v)), || {
                format!("temporal orders {to:?}")
            })?;
        }
        within(start.elapsed(), Duration::from_secs(120))?;
        let fmt = |o: &[[f64; 3]]| {
            o.iter()
                .map(|r| format!("{:.3}", r[0]))
                .collect::<Vec<_>>()
                .join(", ")
        };
        Ok(format!(
            "C orders: space [{}], time [{}]",
            fmt(&so),
            fmt(&to)
        ))
    };
    conclude(9, "MMS convergence", run());
}

#[test]
fn criterion_10_equilibrium_preservation() {
    let run = || -> Result<String, String> {
        let mesh = Arc::new(RunConfig::demo().mesh().map_err(|e| e.to_string())?);
        let cfg = equilibrium_config(mesh, KineticsMode::Exact, 1e-3, 1e-3, 100);
        check(cfg.n_steps() == 100, || "expected 100 steps".into())?;
        let drift = equilibrium_preservation(&cfg).map_err(|e| e.to_string())?;
        check(drift <= 1e-12, || format!("drift {drift:e}"))?;
        Ok(format!("drift {drift:.2e} over 100 steps"))
    };
    conclude(10, "equilibrium preservation", run());
}

#[test]
fn criterion_11_amplitude_certificate() {
    let run = || -> Result<String, String> {
        let (traj, report) = lifespan_run();
        let amplitude = trajectory_amplitude(traj).map_err(|e| e.to_string())?;
        let a0 = amplitude[0].1;
        check(report.c >= a0, || {
            format!("calibration c = {} below a(0) = {a0}", report.c)
        })?;
        let cert = amplitude_certificate(&amplitude, report);
        check(cert.all_clear(), || {
            format!(
                "a(t) >= s0 = {} first at t = {:?}",
                report.s0, cert.first_violation
            )
        })?;
        Ok(format!(
            "max a(t) = {:.6} < s0 = {:.6} at all {} recorded times up to Tmax = {:.3e}",
            cert.max_amplitude,
            report.s0,
            amplitude.len(),
            report.tmax
        ))
    };
    conclude(11, "amplitude certificate", run());
}
