//! Backward Euler for the concentration and the per-step outer fixed point
//! between potentials and concentration.

use std::io::{self, Write};
use std::sync::Arc;

use log::{debug, info};

use crate::elliptic::{
    face_transmissibilities, linf_bound_check, potential_identity_residual,
    solve_potential_problem, EllipticSettings, FluxStencil, PotentialPair, PotentialProblem,
};
use crate::error::SolverError;
use crate::geometry::{Mesh, RegionSet};
use crate::linalg::{LinearSolver, LinearStrategy, TripletBuilder};
use crate::params::{HField, PhysParams};
use crate::reaction::{Kinetics, KineticsMode};

/// Bound below which a concentration counts as negative.
pub const NONNEGATIVITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub time: f64,
    pub c: Vec<f64>,
    pub potentials: PotentialPair,
    /// ∫₀ᵗ ∫ ½α₃α₄·R dx dt as realized by the scheme (plus any forcing).
    pub cumulative_source: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcentrationSettings {
    /// Bound on the Jacobi-scaled residual, in concentration units.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ConcentrationSettings {
    fn default() -> Self {
        ConcentrationSettings {
            tolerance: 1e-12,
            max_iterations: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub elliptic: EllipticSettings,
    pub concentration: ConcentrationSettings,
    /// Outer loop stops once ‖C^{k+1} − C^k‖∞ < outer_tolerance.
    pub outer_tolerance: f64,
    pub max_outer: usize,
    /// Relaxation ω ∈ [0.1, 1] of the outer update.
    pub relaxation: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            elliptic: EllipticSettings::default(),
            concentration: ConcentrationSettings::default(),
            outer_tolerance: 1e-10,
            max_outer: 30,
            relaxation: 1.0,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), SolverError> {
        self.elliptic.validate()?;
        if !(self.concentration.tolerance > 0.0) || self.concentration.max_iterations == 0 {
            return Err(SolverError::BadSettings(
                "concentration tolerance and iteration cap must be positive".into(),
            ));
        }
        if !(self.outer_tolerance >= 0.0) || self.max_outer == 0 {
            return Err(SolverError::BadSettings(
                "outer tolerance must be nonnegative and max_outer positive".into(),
            ));
        }
        if !(self.relaxation >= 0.1 && self.relaxation <= 1.0) {
            return Err(SolverError::BadSettings(format!(
                "relaxation {} outside [0.1, 1]",
                self.relaxation
            )));
        }
        Ok(())
    }
}

/// Fixed data shared by every step of a run.
#[derive(Debug, Clone)]
pub struct StepProblem<'a> {
    pub mesh: &'a Mesh,
    pub params: &'a PhysParams,
    pub h: &'a HField,
    pub kinetics: Kinetics,
}

/// Volumetric forcings at the new time level, one value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct StepForcing {
    pub phi_e: Vec<f64>,
    pub phi_s: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationStep {
    pub c: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// dt·∫(½α₃α₄R + f_c) at the returned C.
    pub source_integral: f64,
}

/// Diffusion stencil for D, built once per run.
pub fn diffusion_stencil(mesh: &Mesh, params: &PhysParams) -> Result<FluxStencil, SolverError> {
    face_transmissibilities(mesh, &params.diffusivity.cells(mesh), RegionSet::ALL)
}

/// One implicit Euler step for C with frozen potentials:
/// ε(C − C_old)/dt − div(D∇C) = ½α₃α₄R(h, C, φs − φe)χ + f_c.
pub fn step_concentration(
    problem: &StepProblem<'_>,
    c_old: &[f64],
    pair: &PotentialPair,
    dt: f64,
    settings: &ConcentrationSettings,
    forcing: Option<&[f64]>,
) -> Result<ConcentrationStep, SolverError> {
    let stencil = diffusion_stencil(problem.mesh, problem.params)?;
    step_concentration_with(problem, &stencil, c_old, c_old, pair, dt, settings, forcing)
}

#[allow(clippy::too_many_arguments)]
fn step_concentration_with(
    problem: &StepProblem<'_>,
    stencil: &FluxStencil,
    c_old: &[f64],
    c_start: &[f64],
    pair: &PotentialPair,
    dt: f64,
    settings: &ConcentrationSettings,
    forcing: Option<&[f64]>,
) -> Result<ConcentrationStep, SolverError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SolverError::BadTimeStep(dt));
    }
    let mesh = problem.mesh;
    let n = mesh.n_cells();
    let vol = mesh.volumes();
    let eps = problem.params.eps_e.cells(mesh);
    let coef = 0.5 * problem.params.alpha3 * problem.params.alpha4;
    let y: Vec<f64> = (0..n).map(|i| pair.phi_s[i] - pair.phi_e[i]).collect();

    let mut diag_d = vec![0.0; n];
    for &(a, b, t) in stencil.links() {
        diag_d[a] += t;
        diag_d[b] += t;
    }

    // F = εV(C − C_old)/dt + A_D C − V(coef·R + f)
    let eval = |c: &[f64]| -> Result<(Vec<f64>, Vec<f64>, f64), SolverError> {
        let mut f = vec![0.0; n];
        stencil.apply_add(c, &mut f);
        let mut d_src = vec![0.0; n];
        let mut src_total = 0.0;
        for i in 0..n {
            f[i] += eps[i] * vol[i] * (c[i] - c_old[i]) / dt;
            let mut src = 0.0;
            if mesh.region(i).is_electrode() && coef != 0.0 {
                let r = problem.kinetics.eval(problem.h.get(i), c[i], y[i])?;
                src = coef * r.value;
                d_src[i] = coef * r.d_dc;
            }
            if let Some(fc) = forcing {
                src += fc[i];
            }
            f[i] -= vol[i] * src;
            src_total += vol[i] * src;
        }
        Ok((f, d_src, src_total))
    };
    let scaled_norm = |f: &[f64], d_src: &[f64]| -> f64 {
        (0..n)
            .map(|i| {
                let diag = eps[i] * vol[i] / dt + diag_d[i] + vol[i] * (-d_src[i]).max(0.0);
                (f[i] / diag).abs()
            })
            .fold(
                0.0,
                |m: f64, v| if v.is_nan() { f64::INFINITY } else { m.max(v) },
            )
    };

    let solver = LinearSolver {
        strategy: if mesh.is_1d() {
            LinearStrategy::Banded
        } else {
            LinearStrategy::ConjugateGradient
        },
        rel_tol: 1e-13,
    };
    let mut c = c_start.to_vec();
    let (mut f, mut d_src, mut src_total) = eval(&c)?;
    let mut norm = scaled_norm(&f, &d_src);
    let mass_scale: f64 = (0..n).map(|i| eps[i] * vol[i] * c_old[i].abs()).sum();
    // dt·|ΣF| is the mass the step fails to account for
    let defect = |f: &[f64]| dt * f.iter().sum::<f64>().abs();
    let mut prev_defect = f64::INFINITY;
    let mut iterations = 0;
    loop {
        if norm <= settings.tolerance {
            let d = defect(&f);
            // the scaled test lets cells with strong diffusion carry a large
            // absolute residual, so polish until the mass defect stalls
            if d <= 1e-3 * settings.tolerance * mass_scale
                || d > 0.5 * prev_defect
                || iterations >= settings.max_iterations
            {
                break;
            }
            prev_defect = d;
        } else if iterations >= settings.max_iterations {
            return Err(SolverError::ConcentrationNonConvergence {
                iterations,
                residual: norm,
            });
        }
        iterations += 1;
        // growth of the source in C is left out of the matrix to keep the M-matrix structure
        let mut t = TripletBuilder::new(n);
        for i in 0..n {
            t.add(i, i, eps[i] * vol[i] / dt + vol[i] * (-d_src[i]).max(0.0));
        }
        for &(a, b, tr) in stencil.links() {
            t.add(a, a, tr);
            t.add(b, b, tr);
            t.add(a, b, -tr);
            t.add(b, a, -tr);
        }
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let delta = solver.solve(&t.build(), &rhs)?;
        for i in 0..n {
            c[i] += delta[i];
        }
        (f, d_src, src_total) = eval(&c)?;
        norm = scaled_norm(&f, &d_src);
    }
    Ok(ConcentrationStep {
        c,
        iterations,
        residual: norm,
        source_integral: dt * src_total,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub time: f64,
    pub outer_iterations: usize,
    pub increment_history: Vec<f64>,
    pub potential_iterations: usize,
    pub potential_residual: f64,
    pub concentration_iterations: usize,
    pub concentration_residual: f64,
    pub min_c: f64,
    pub max_c: f64,
    pub identity_residual: f64,
    /// ∫εC_new − ∫εC_old − source integral of the step.
    pub mass_balance_error: f64,
    /// Bound minus max potential magnitude.
    pub linf_margin: f64,
    pub linf_holds: bool,
}

fn potential_problem<'a>(
    problem: &'a StepProblem<'a>,
    c: &'a [f64],
    forcing: Option<&'a StepForcing>,
) -> PotentialProblem<'a> {
    PotentialProblem {
        mesh: problem.mesh,
        params: problem.params,
        concentration: c,
        h: problem.h,
        kinetics: problem.kinetics,
        forcing: forcing.map(|f| (f.phi_e.as_slice(), f.phi_s.as_slice())),
    }
}

fn weighted_integral(mesh: &Mesh, w: &[f64], c: &[f64]) -> f64 {
    mesh.volumes()
        .iter()
        .zip(w)
        .zip(c)
        .map(|((v, w), c)| v * w * c)
        .sum()
}

/// Advances one step: potentials from C, then a concentration step with
/// those potentials, repeated until C settles.
pub fn coupled_step(
    problem: &StepProblem<'_>,
    state: &FieldState,
    dt: f64,
    settings: &SolverSettings,
    forcing: Option<&StepForcing>,
) -> Result<(FieldState, StepDiagnostics), SolverError> {
    settings.validate()?;
    let mesh = problem.mesh;
    let stencil = diffusion_stencil(mesh, problem.params)?;
    let forcing_c = forcing.map(|f| f.c.as_slice());
    let csettings = &settings.concentration;

    // predictor: step with the potentials of the previous time level
    let mut c_k = step_concentration_with(
        problem,
        &stencil,
        &state.c,
        &state.c,
        &state.potentials,
        dt,
        csettings,
        forcing_c,
    )?
    .c;
    let mut guess = state.potentials.clone();
    let mut history = Vec::new();
    let mut potential_iterations = 0;
    let mut converged = None;
    for k in 1..=settings.max_outer {
        let (pair, report) = solve_potential_problem(
            &potential_problem(problem, &c_k, forcing),
            &guess,
            &settings.elliptic,
        )?;
        potential_iterations += report.iterations;
        let step = step_concentration_with(
            problem, &stencil, &state.c, &c_k, &pair, dt, csettings, forcing_c,
        )?;
        let inc = step
            .c
            .iter()
            .zip(&c_k)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        history.push(inc);
        debug!(
            "t = {:.6e}: outer {k}, increment {inc:.3e}",
            state.time + dt
        );
        if inc < settings.outer_tolerance {
            converged = Some((k, step));
            break;
        }
        let w = settings.relaxation;
        c_k = step
            .c
            .iter()
            .zip(&c_k)
            .map(|(new, old)| w * new + (1.0 - w) * old)
            .collect();
        guess = pair;
    }
    let Some((outer_iterations, step)) = converged else {
        return Err(SolverError::OuterNonConvergence {
            iterations: settings.max_outer,
            history,
        });
    };

    let (pair, report) = solve_potential_problem(
        &potential_problem(problem, &step.c, forcing),
        &guess,
        &settings.elliptic,
    )?;
    potential_iterations += report.iterations;

    let eps = problem.params.eps_e.cells(mesh);
    let mass_change =
        weighted_integral(mesh, &eps, &step.c) - weighted_integral(mesh, &eps, &state.c);
    let time = state.time + dt;
    let bound = linf_bound_check(
        mesh,
        &pair,
        &step.c,
        problem.h,
        &problem.kinetics,
        problem.params.alpha4,
        1e-8,
    )?;
    let diag = StepDiagnostics {
        time,
        outer_iterations,
        increment_history: history,
        potential_iterations,
        potential_residual: report.residual,
        concentration_iterations: step.iterations,
        concentration_residual: step.residual,
        min_c: step.c.iter().copied().fold(f64::INFINITY, f64::min),
        max_c: step.c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        identity_residual: potential_identity_residual(mesh, &pair),
        mass_balance_error: mass_change - step.source_integral,
        linf_margin: bound.margin,
        linf_holds: bound.holds,
    };
    let next = FieldState {
        time,
        c: step.c,
        potentials: pair,
        cumulative_source: state.cumulative_source + step.source_integral,
    };
    Ok((next, diag))
}

/// Data a trajectory needs to evaluate its invariants.
#[derive(Debug, Clone)]
pub struct TrajectoryContext {
    pub mesh: Arc<Mesh>,
    pub params: PhysParams,
    pub h: HField,
    pub kinetics: Kinetics,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub context: TrajectoryContext,
    pub states: Vec<FieldState>,
    /// One entry per time step, including steps whose state was not recorded.
    pub diagnostics: Vec<StepDiagnostics>,
}

impl Trajectory {
    pub fn new(context: TrajectoryContext, initial: FieldState) -> Self {
        Trajectory {
            context,
            states: vec![initial],
            diagnostics: Vec::new(),
        }
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.time).collect()
    }

    pub fn last(&self) -> &FieldState {
        self.states
            .last()
            .expect("trajectory holds the initial state")
    }

    /// Running M(t) = max(max C, 1) per recorded state.
    pub fn running_max(&self) -> Vec<f64> {
        let mut m: f64 = 1.0;
        self.states
            .iter()
            .map(|s| {
                m = s.c.iter().fold(m, |a, &b| a.max(b));
                m
            })
            .collect()
    }

    /// Running L(t) = max 1/C per recorded state (infinite once C ≤ 0).
    pub fn running_inverse_min(&self) -> Vec<f64> {
        let mut l: f64 = 0.0;
        self.states
            .iter()
            .map(|s| {
                let min = s.c.iter().copied().fold(f64::INFINITY, f64::min);
                l = l.max(if min > 0.0 { 1.0 / min } else { f64::INFINITY });
                l
            })
            .collect()
    }

    /// Cell rows t,x[,y],region,C,phi_e,phi_s,S_e with 17 significant digits.
    pub fn write_fields_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mesh = &self.context.mesh;
        let two_d = !mesh.is_1d();
        writeln!(
            out,
            "{}",
            if two_d {
                "t,x,y,region,C,phi_e,phi_s,S_e"
            } else {
                "t,x,region,C,phi_e,phi_s,S_e"
            }
        )?;
        let half_a4 = 0.5 * self.context.params.alpha4;
        for s in &self.states {
            for i in 0..mesh.n_cells() {
                let r = mesh.region(i);
                let p = mesh.centers()[i];
                write!(out, "{},{}", num(s.time), num(p[0]))?;
                if two_d {
                    write!(out, ",{}", num(p[1]))?;
                }
                write!(
                    out,
                    ",{},{},{}",
                    r.name(),
                    num(s.c[i]),
                    num(s.potentials.phi_e[i])
                )?;
                if r.is_electrode() {
                    let y = s.potentials.phi_s[i] - s.potentials.phi_e[i];
                    let se = self
                        .context
                        .kinetics
                        .rate(self.context.h.get(i), s.c[i], y)
                        .map(|v| half_a4 * v)
                        .unwrap_or(f64::NAN);
                    writeln!(out, ",{},{}", num(s.potentials.phi_s[i]), num(se))?;
                } else {
                    writeln!(out, ",,{}", num(0.0))?;
                }
            }
        }
        Ok(())
    }

    pub fn write_diagnostics_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "t,outer_iters,potential_iters,potential_residual,concentration_residual,min_C,max_C,amplitude,identity_residual,mass_balance_error,linf_margin"
        )?;
        let (mut m, mut l) = (1.0f64, 0.0f64);
        if let Some(s0) = self.states.first() {
            m = s0.c.iter().fold(m, |a, &b| a.max(b));
            let min = s0.c.iter().copied().fold(f64::INFINITY, f64::min);
            l = if min > 0.0 { 1.0 / min } else { f64::INFINITY };
        }
        for d in &self.diagnostics {
            m = m.max(d.max_c);
            l = l.max(if d.min_c > 0.0 {
                1.0 / d.min_c
            } else {
                f64::INFINITY
            });
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                num(d.time),
                d.outer_iterations,
                d.potential_iterations,
                num(d.potential_residual),
                num(d.concentration_residual),
                num(d.min_c),
                num(d.max_c),
                num(m * l),
                num(d.identity_residual),
                num(d.mass_balance_error),
                num(d.linf_margin)
            )?;
        }
        Ok(())
    }
}

/// 17 significant digits, fixed exponent form.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// a(t) = M(t)·L(t) per recorded state.
pub fn trajectory_amplitude(traj: &Trajectory) -> Result<Vec<(f64, f64)>, SolverError> {
    for s in &traj.states {
        if let Some((cell, &value)) = s.c.iter().enumerate().find(|(_, c)| !(**c > 0.0)) {
            return Err(SolverError::NonPositiveConcentration {
                cell,
                time: s.time,
                value,
            });
        }
    }
    let m = traj.running_max();
    let l = traj.running_inverse_min();
    Ok(traj
        .states
        .iter()
        .zip(m.iter().zip(&l))
        .map(|(s, (m, l))| (s.time, m * l))
        .collect())
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub mesh: Arc<Mesh>,
    pub params: PhysParams,
    pub h: HField,
    pub tau: f64,
    pub mode: KineticsMode,
    pub dt: f64,
    pub t_end: f64,
    pub output_stride: usize,
    pub settings: SolverSettings,
    /// Overrides the initial concentration of `params`.
    pub initial: Option<Vec<f64>>,
}

impl SimulationConfig {
    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn kinetics(&self) -> Result<Kinetics, SolverError> {
        Ok(Kinetics::new(
            self.params.d(),
            self.params.alpha2,
            self.tau,
            self.mode,
        )?)
    }

    pub fn initial_concentration(&self) -> Vec<f64> {
        self.initial
            .clone()
            .unwrap_or_else(|| self.params.c0.cells(&self.mesh))
    }
}

/// A failed run with everything computed before the failing step.
#[derive(Debug, Clone)]
pub struct SimulationFailure {
    pub partial: Box<Trajectory>,
    pub error: SolverError,
}

impl std::fmt::Display for SimulationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after t = {})", self.error, self.partial.last().time)
    }
}

impl std::error::Error for SimulationFailure {}

/// Runs from the initial concentration over [0, t_end] with fixed dt.
pub fn simulate(config: &SimulationConfig) -> Result<Trajectory, SimulationFailure> {
    let kinetics = match config.kinetics() {
        Ok(k) => k,
        Err(error) => {
            let ctx = TrajectoryContext {
                mesh: config.mesh.clone(),
                params: config.params.clone(),
                h: config.h.clone(),
                kinetics: Kinetics {
                    d: config.params.d(),
                    alpha2: config.params.alpha2,
                    tau: config.tau,
                    mode: config.mode,
                },
            };
            let c = config.initial_concentration();
            let init = FieldState {
                time: 0.0,
                c,
                potentials: PotentialPair::zeros(&config.mesh),
                cumulative_source: 0.0,
            };
            return Err(SimulationFailure {
                partial: Box::new(Trajectory::new(ctx, init)),
                error,
            });
        }
    };
    let context = TrajectoryContext {
        mesh: config.mesh.clone(),
        params: config.params.clone(),
        h: config.h.clone(),
        kinetics,
    };
    let mesh = &*config.mesh;
    let problem = StepProblem {
        mesh,
        params: &config.params,
        h: &config.h,
        kinetics,
    };
    let c0 = config.initial_concentration();

    let initial_pair = solve_potential_problem(
        &potential_problem(&problem, &c0, None),
        &PotentialPair::zeros(mesh),
        &config.settings.elliptic,
    );
    let mut state = FieldState {
        time: 0.0,
        c: c0,
        potentials: PotentialPair::zeros(mesh),
        cumulative_source: 0.0,
    };
    match initial_pair {
        Ok((pair, _)) => state.potentials = pair,
        Err(error) => {
            return Err(SimulationFailure {
                partial: Box::new(Trajectory::new(context, state)),
                error,
            })
        }
    }
    let mut traj = Trajectory::new(context, state.clone());
    if !(config.dt > 0.0) {
        return Err(SimulationFailure {
            partial: Box::new(traj),
            error: SolverError::BadTimeStep(config.dt),
        });
    }
    let stride = config.output_stride.max(1);
    let n_steps = config.n_steps();
    for k in 1..=n_steps {
        let dt = k as f64 * config.dt - state.time;
        match coupled_step(&problem, &state, dt, &config.settings, None) {
            Ok((mut next, diag)) => {
                next.time = k as f64 * config.dt;
                state = next;
                traj.diagnostics.push(diag);
                if k % stride == 0 || k == n_steps {
                    traj.states.push(state.clone());
                }
            }
            Err(error) => {
                return Err(SimulationFailure {
                    partial: Box::new(traj),
                    error,
                })
            }
        }
    }
    info!("simulation finished: {n_steps} steps, t = {}", state.time);
    Ok(traj)
}

#[derive(Debug, Clone)]
pub struct ContinuationReport {
    pub taus: Vec<f64>,
    pub final_states: Vec<Vec<f64>>,
    /// ‖C_k(T) − C_{k−1}(T)‖∞ between consecutive members.
    pub differences: Vec<f64>,
}

/// τ_k = τ₀·2^{−k}, k = 0..levels.
pub fn halving_schedule(tau0: f64, levels: usize) -> Vec<f64> {
    (0..levels).map(|k| tau0 * 0.5f64.powi(k as i32)).collect()
}

/// Repeats the run for each τ and reports differences of the final concentration.
pub fn tau_continuation(
    config: &SimulationConfig,
    taus: &[f64],
) -> Result<ContinuationReport, SimulationFailure> {
    let mut final_states = Vec::with_capacity(taus.len());
    for &tau in taus {
        let member = SimulationConfig {
            tau,
            ..config.clone()
        };
        final_states.push(simulate(&member)?.last().c.clone());
    }
    let differences = final_states
        .windows(2)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        })
        .collect();
    Ok(ContinuationReport {
        taus: taus.to_vec(),
        final_states,
        differences,
    })
}
