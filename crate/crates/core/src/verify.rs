//! Verification harness: manufactured solutions, equilibrium preservation,
//! uniqueness of the potential pair and trajectory invariant checks.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::elliptic::{
    linf_bound_check, potential_identity_residual, solve_potential_problem, EllipticSettings,
    PotentialPair, PotentialProblem,
};
use crate::error::SolverError;
use crate::geometry::{build_layered_mesh, CellCounts, DomainLayout, Mesh, Region};
use crate::parabolic::{
    coupled_step, simulate, FieldState, SimulationConfig, SimulationFailure, SolverSettings,
    StepForcing, StepProblem, Trajectory, NONNEGATIVITY_TOLERANCE,
};
use crate::params::{HField, KappaCurve, PhysParams};
use crate::reaction::{Kinetics, KineticsMode};

/// Time factor of a manufactured field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeProfile {
    Constant,
    /// e^{−t}
    Decay,
    /// 1 + t
    Growth,
}

impl TimeProfile {
    fn value(self, t: f64) -> f64 {
        match self {
            TimeProfile::Constant => 1.0,
            TimeProfile::Decay => (-t).exp(),
            TimeProfile::Growth => 1.0 + t,
        }
    }

    fn derivative(self, t: f64) -> f64 {
        match self {
            TimeProfile::Constant => 0.0,
            TimeProfile::Decay => -(-t).exp(),
            TimeProfile::Growth => 1.0,
        }
    }
}

/// u(x, t) = offset + amplitude·cos(π(x − x0)/len)·T(t); its x-derivative
/// vanishes at x0 and x0 + len.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineField {
    pub offset: f64,
    pub amplitude: f64,
    pub x0: f64,
    pub len: f64,
    pub time: TimeProfile,
}

impl CosineField {
    pub fn constant(v: f64) -> Self {
        CosineField {
            offset: v,
            amplitude: 0.0,
            x0: 0.0,
            len: 1.0,
            time: TimeProfile::Constant,
        }
    }

    fn k(&self) -> f64 {
        PI / self.len
    }

    pub fn value(&self, x: f64, t: f64) -> f64 {
        self.offset + self.amplitude * (self.k() * (x - self.x0)).cos() * self.time.value(t)
    }

    pub fn dx(&self, x: f64, t: f64) -> f64 {
        -self.amplitude * self.k() * (self.k() * (x - self.x0)).sin() * self.time.value(t)
    }

    pub fn dxx(&self, x: f64, t: f64) -> f64 {
        -self.amplitude
            * self.k()
            * self.k()
            * (self.k() * (x - self.x0)).cos()
            * self.time.value(t)
    }

    pub fn dt(&self, x: f64, t: f64) -> f64 {
        self.amplitude * (self.k() * (x - self.x0)).cos() * self.time.derivative(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StudyKind {
    /// Mesh refinement at fixed dt with time-consistent forcing.
    Spatial,
    /// dt halving on a fixed fine mesh.
    Temporal,
}

/// A manufactured-solution case on a 1D layered cell with exact kinetics.
#[derive(Debug, Clone)]
pub struct MmsCase {
    pub layout: DomainLayout,
    pub params: PhysParams,
    pub tau: f64,
    pub h_anode: f64,
    pub h_cathode: f64,
    pub c: CosineField,
    pub phi_e: CosineField,
    pub phi_s_anode: CosineField,
    pub phi_s_cathode: CosineField,
    pub t_end: f64,
    pub study: StudyKind,
    /// Cells per unit length at each level; (anode, separator, cathode)
    /// counts follow the layer lengths.
    pub resolutions: Vec<usize>,
    pub time_steps: Vec<f64>,
    pub settings: SolverSettings,
}

impl MmsCase {
    fn base(study: StudyKind, resolutions: Vec<usize>, time_steps: Vec<f64>, t_end: f64) -> Self {
        let layout = DomainLayout::new(0.4, 0.2, 0.4).expect("valid layout");
        let params = PhysParams {
            k_bound: 3.0,
            sigma_anode: 1.5,
            sigma_cathode: 0.8,
            ..PhysParams::default()
        };
        MmsCase {
            layout,
            params,
            tau: 1e-2,
            h_anode: 2.0,
            h_cathode: 0.5,
            c: CosineField {
                offset: 2.0,
                amplitude: 1.0,
                x0: 0.0,
                len: 1.0,
                time: TimeProfile::Decay,
            },
            phi_e: CosineField {
                offset: 0.0,
                amplitude: 0.5,
                x0: 0.0,
                len: 1.0,
                time: TimeProfile::Growth,
            },
            phi_s_anode: CosineField {
                offset: -0.2,
                amplitude: 0.3,
                x0: 0.0,
                len: 0.4,
                time: TimeProfile::Growth,
            },
            phi_s_cathode: CosineField {
                offset: 0.1,
                amplitude: 0.3,
                x0: 0.6,
                len: 0.4,
                time: TimeProfile::Growth,
            },
            t_end,
            study,
            resolutions,
            time_steps,
            settings: SolverSettings::default(),
        }
    }

    /// Smooth case, four meshes with 10·2^k cells per unit length.
    pub fn smooth_spatial() -> Self {
        Self::base(StudyKind::Spatial, vec![10, 20, 40, 80], vec![0.02], 0.1)
    }

    /// Smooth case, four time steps 0.1·2^{−k} on 800 cells.
    pub fn smooth_temporal() -> Self {
        Self::base(
            StudyKind::Temporal,
            vec![800],
            vec![0.1, 0.05, 0.025, 0.0125],
            1.0,
        )
    }

    /// All fields constant in space and time.
    pub fn constant() -> Self {
        let mut case = Self::base(StudyKind::Spatial, vec![10, 20], vec![0.05], 0.2);
        case.c = CosineField::constant(1.5);
        case.phi_e = CosineField::constant(0.3);
        case.phi_s_anode = CosineField::constant(-0.1);
        case.phi_s_cathode = CosineField::constant(0.2);
        case
    }

    pub fn kinetics(&self) -> Result<Kinetics, SolverError> {
        Ok(Kinetics::new(
            self.params.d(),
            self.params.alpha2,
            self.tau,
            KineticsMode::Exact,
        )?)
    }

    fn region_at(&self, x: f64) -> Region {
        let (x1, x2) = self.layout.interfaces();
        if x < x1 {
            Region::Anode
        } else if x < x2 {
            Region::Separator
        } else {
            Region::Cathode
        }
    }

    fn phi_s_field(&self, region: Region) -> Option<&CosineField> {
        match region {
            Region::Anode => Some(&self.phi_s_anode),
            Region::Cathode => Some(&self.phi_s_cathode),
            Region::Separator => None,
        }
    }

    /// κ_τ(C) and its derivative in C for the power-law model.
    fn kappa_and_slope(&self, c: f64) -> Result<(f64, f64), SolverError> {
        let k = &self.params.kappa;
        if k.curve != KappaCurve::PowerLaw {
            return Err(SolverError::BadSettings(
                "manufactured solutions need the power-law kappa".into(),
            ));
        }
        let s = c + self.tau;
        Ok((
            k.c0 * s.powf(k.alpha0),
            k.c0 * k.alpha0 * s.powf(k.alpha0 - 1.0),
        ))
    }

    /// Exact electrolyte flux κ_τ(C)·∂φe/∂x.
    pub fn electrolyte_flux(&self, x: f64, t: f64) -> Result<f64, SolverError> {
        Ok(self.kappa_and_slope(self.c.value(x, t))?.0 * self.phi_e.dx(x, t))
    }

    /// Exact reaction rate at (x, t); zero in the separator.
    pub fn rate(&self, x: f64, t: f64) -> Result<f64, SolverError> {
        let region = self.region_at(x);
        let Some(ps) = self.phi_s_field(region) else {
            return Ok(0.0);
        };
        let h = if region == Region::Anode {
            self.h_anode
        } else {
            self.h_cathode
        };
        let y = ps.value(x, t) - self.phi_e.value(x, t);
        Ok(self.kinetics()?.rate(h, self.c.value(x, t), y)?)
    }

    /// Forcings (f_e, f_s, f_c) making the exact fields solve the system;
    /// `dc_dt` replaces ∂C/∂t when given.
    pub fn forcing(
        &self,
        x: f64,
        t: f64,
        dc_dt: Option<f64>,
    ) -> Result<(f64, f64, f64), SolverError> {
        let p = &self.params;
        let region = self.region_at(x);
        let c = self.c.value(x, t);
        let (kappa, slope) = self.kappa_and_slope(c)?;
        let div_e = slope * self.c.dx(x, t) * self.phi_e.dx(x, t) + kappa * self.phi_e.dxx(x, t);
        let r = self.rate(x, t)?;
        let f_e = -div_e + self.tau * self.phi_e.value(x, t) - 0.5 * p.alpha4 * r;
        let f_s = match self.phi_s_field(region) {
            Some(ps) => {
                -p.sigma(region) * ps.dxx(x, t) + self.tau * ps.value(x, t) + 0.5 * p.alpha4 * r
            }
            None => 0.0,
        };
        let eps = p.eps_e.get(region);
        let diff = p.diffusivity.get(region);
        let ct = dc_dt.unwrap_or_else(|| self.c.dt(x, t));
        let f_c = eps * ct - diff * self.c.dxx(x, t) - 0.5 * p.alpha3 * p.alpha4 * r;
        Ok((f_e, f_s, f_c))
    }

    pub fn mesh(&self, per_unit: usize) -> Result<Mesh, SolverError> {
        let cells = |len: f64| ((len * per_unit as f64).round() as usize).max(2);
        let counts = CellCounts::new(
            cells(self.layout.anode),
            cells(self.layout.separator),
            cells(self.layout.cathode),
        );
        Ok(build_layered_mesh(&self.layout, counts)?)
    }

    fn exact_state(&self, mesh: &Mesh, t: f64) -> FieldState {
        let n = mesh.n_cells();
        let mut pair = PotentialPair::zeros(mesh);
        let mut c = vec![0.0; n];
        for i in 0..n {
            let x = mesh.centers()[i][0];
            c[i] = self.c.value(x, t);
            pair.phi_e[i] = self.phi_e.value(x, t);
            if let Some(ps) = self.phi_s_field(mesh.region(i)) {
                pair.phi_s[i] = ps.value(x, t);
            }
        }
        FieldState {
            time: t,
            c,
            potentials: pair,
            cumulative_source: 0.0,
        }
    }

    fn step_forcing(
        &self,
        mesh: &Mesh,
        t_old: f64,
        t_new: f64,
    ) -> Result<StepForcing, SolverError> {
        let n = mesh.n_cells();
        let mut f = StepForcing {
            phi_e: vec![0.0; n],
            phi_s: vec![0.0; n],
            c: vec![0.0; n],
        };
        for i in 0..n {
            let x = mesh.centers()[i][0];
            let dc_dt = match self.study {
                StudyKind::Spatial => {
                    Some((self.c.value(x, t_new) - self.c.value(x, t_old)) / (t_new - t_old))
                }
                StudyKind::Temporal => None,
            };
            let (fe, fs, fc) = self.forcing(x, t_new, dc_dt)?;
            f.phi_e[i] = fe;
            f.phi_s[i] = fs;
            f.c[i] = fc;
        }
        Ok(f)
    }

    /// Runs one level to t_end and returns the errors at t_end.
    pub fn run_level(&self, per_unit: usize, dt: f64) -> Result<ConvergenceRow, SolverError> {
        let mesh = self.mesh(per_unit)?;
        let h = HField::per_region(&mesh, self.h_anode, self.h_cathode);
        let problem = StepProblem {
            mesh: &mesh,
            params: &self.params,
            h: &h,
            kinetics: self.kinetics()?,
        };
        let mut state = self.exact_state(&mesh, 0.0);
        let n_steps = (self.t_end / dt).round() as usize;
        for k in 1..=n_steps {
            let t_new = k as f64 * dt;
            let forcing = self.step_forcing(&mesh, state.time, t_new)?;
            let (next, _) = coupled_step(
                &problem,
                &state,
                t_new - state.time,
                &self.settings,
                Some(&forcing),
            )?;
            state = next;
            state.time = t_new;
        }
        let exact = self.exact_state(&mesh, state.time);
        let vol = mesh.volumes();
        let mut l2 = [0.0; 3];
        let mut linf = [0.0f64; 3];
        for i in 0..mesh.n_cells() {
            let mut errs = [
                state.c[i] - exact.c[i],
                state.potentials.phi_e[i] - exact.potentials.phi_e[i],
                0.0,
            ];
            if mesh.region(i).is_electrode() {
                errs[2] = state.potentials.phi_s[i] - exact.potentials.phi_s[i];
            }
            for k in 0..3 {
                l2[k] += vol[i] * errs[k] * errs[k];
                linf[k] = linf[k].max(errs[k].abs());
            }
        }
        Ok(ConvergenceRow {
            cells: mesh.n_cells(),
            h: self.layout.total_length() / mesh.n_cells() as f64,
            dt,
            l2: l2.map(f64::sqrt),
            linf,
        })
    }
}

/// Errors for (C, φe, φs) at one refinement level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub cells: usize,
    pub h: f64,
    pub dt: f64,
    pub l2: [f64; 3],
    pub linf: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub study: StudyKind,
    pub rows: Vec<ConvergenceRow>,
}

pub const FIELD_NAMES: [&str; 3] = ["C", "phi_e", "phi_s"];

impl ConvergenceTable {
    /// Observed L² orders between consecutive rows, per field.
    pub fn orders(&self) -> Vec<[f64; 3]> {
        self.rows
            .windows(2)
            .map(|w| {
                let ratio = match self.study {
                    StudyKind::Spatial => w[0].h / w[1].h,
                    StudyKind::Temporal => w[0].dt / w[1].dt,
                };
                let mut o = [0.0; 3];
                for k in 0..3 {
                    o[k] = (w[0].l2[k] / w[1].l2[k]).ln() / ratio.ln();
                }
                o
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("cells,h,dt,l2_C,l2_phi_e,l2_phi_s,linf_C,linf_phi_e,linf_phi_s,order_C,order_phi_e,order_phi_s\n");
        let orders = self.orders();
        for (k, r) in self.rows.iter().enumerate() {
            let num = crate::parabolic::num;
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}",
                r.cells,
                num(r.h),
                num(r.dt),
                num(r.l2[0]),
                num(r.l2[1]),
                num(r.l2[2]),
                num(r.linf[0]),
                num(r.linf[1]),
                num(r.linf[2])
            ));
            match k.checked_sub(1).map(|j| orders[j]) {
                Some(o) => s.push_str(&format!(",{},{},{}\n", num(o[0]), num(o[1]), num(o[2]))),
                None => s.push_str(",,,\n"),
            }
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct MmsFailure {
    pub partial: ConvergenceTable,
    pub error: SolverError,
}

impl std::fmt::Display for MmsFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} after {} completed levels",
            self.error,
            self.partial.rows.len()
        )
    }
}

impl std::error::Error for MmsFailure {}

pub fn run_mms(case: &MmsCase) -> Result<ConvergenceTable, MmsFailure> {
    let levels: Vec<(usize, f64)> = match case.study {
        StudyKind::Spatial => case
            .resolutions
            .iter()
            .map(|&r| (r, case.time_steps[0]))
            .collect(),
        StudyKind::Temporal => case
            .time_steps
            .iter()
            .map(|&dt| (case.resolutions[0], dt))
            .collect(),
    };
    let mut table = ConvergenceTable {
        study: case.study,
        rows: Vec::new(),
    };
    for (per_unit, dt) in levels {
        match case.run_level(per_unit, dt) {
            Ok(row) => table.rows.push(row),
            Err(error) => {
                return Err(MmsFailure {
                    partial: table,
                    error,
                })
            }
        }
    }
    Ok(table)
}

/// Largest |C(t) − C(0)| over the run.
pub fn equilibrium_preservation(config: &SimulationConfig) -> Result<f64, SimulationFailure> {
    let traj = simulate(config)?;
    let c0 = &traj.states[0].c;
    Ok(traj
        .states
        .iter()
        .flat_map(|s| s.c.iter().zip(c0).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max))
}

/// An equilibrium run: h ≡ 1, C₀ ≡ 1, zero potentials, `steps` steps of size dt.
pub fn equilibrium_config(
    mesh: Arc<Mesh>,
    mode: KineticsMode,
    tau: f64,
    dt: f64,
    steps: usize,
) -> SimulationConfig {
    let h = HField::uniform(&mesh, 1.0);
    SimulationConfig {
        mesh,
        params: PhysParams::default(),
        h,
        tau,
        mode,
        dt,
        t_end: dt * steps as f64,
        output_stride: 1,
        settings: SolverSettings::default(),
        initial: None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessReport {
    pub solutions: usize,
    /// Largest pairwise ∞-norm difference.
    pub discrepancy: f64,
}

pub fn uniqueness_from_guesses(
    problem: &PotentialProblem<'_>,
    guesses: &[PotentialPair],
    settings: &EllipticSettings,
) -> Result<UniquenessReport, SolverError> {
    let sols = guesses
        .iter()
        .map(|g| solve_potential_problem(problem, g, settings).map(|(p, _)| p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut discrepancy: f64 = 0.0;
    for i in 0..sols.len() {
        for j in i + 1..sols.len() {
            discrepancy = discrepancy.max(sols[i].distance(&sols[j]));
        }
    }
    Ok(UniquenessReport {
        solutions: sols.len(),
        discrepancy,
    })
}

/// Solves from `n_guesses` random starts with entries uniform in [−5, 5].
pub fn uniqueness_sweep(
    problem: &PotentialProblem<'_>,
    n_guesses: usize,
    seed: u64,
    settings: &EllipticSettings,
) -> Result<UniquenessReport, SolverError> {
    if n_guesses < 2 {
        return Err(SolverError::BadSettings(
            "uniqueness sweep needs at least two guesses".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = problem.mesh;
    let guesses: Vec<PotentialPair> = (0..n_guesses)
        .map(|_| {
            let mut g = PotentialPair::zeros(mesh);
            for i in 0..mesh.n_cells() {
                g.phi_e[i] = rng.gen_range(-5.0..=5.0);
                if mesh.region(i).is_electrode() {
                    g.phi_s[i] = rng.gen_range(-5.0..=5.0);
                }
            }
            g
        })
        .collect();
    uniqueness_from_guesses(problem, &guesses, settings)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvariantResult {
    pub name: &'static str,
    pub passed: bool,
    /// Smallest slack over the recorded states; negative means violated.
    pub worst_margin: f64,
    pub worst_time: f64,
    pub first_failure: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvariantReport {
    pub results: Vec<InvariantResult>,
}

impl InvariantReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn get(&self, name: &str) -> Option<&InvariantResult> {
        self.results.iter().find(|r| r.name == name)
    }

    pub fn summary(&self) -> String {
        self.results
            .iter()
            .map(|r| {
                format!(
                    "{} {}: worst margin {:.3e} at t = {}\n",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.worst_margin,
                    r.worst_time
                )
            })
            .collect()
    }
}

struct Tracker {
    name: &'static str,
    worst: f64,
    worst_time: f64,
    first_failure: Option<f64>,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Tracker {
            name,
            worst: f64::INFINITY,
            worst_time: 0.0,
            first_failure: None,
        }
    }

    fn record(&mut self, time: f64, margin: f64) {
        let margin = if margin.is_nan() {
            f64::NEG_INFINITY
        } else {
            margin
        };
        if margin < self.worst {
            self.worst = margin;
            self.worst_time = time;
        }
        if margin < 0.0 && self.first_failure.is_none() {
            self.first_failure = Some(time);
        }
    }

    fn finish(self) -> InvariantResult {
        InvariantResult {
            name: self.name,
            passed: self.first_failure.is_none(),
            worst_margin: self.worst,
            worst_time: self.worst_time,
            first_failure: self.first_failure,
        }
    }
}

pub const NONNEGATIVITY: &str = "nonnegativity";
pub const POTENTIAL_IDENTITY: &str = "potential_identity";
pub const POTENTIAL_BOUND: &str = "potential_bound";
pub const MASS_BALANCE: &str = "mass_balance";

/// Checks every recorded state of a trajectory.
pub fn invariant_sweep(traj: &Trajectory) -> InvariantReport {
    let ctx = &traj.context;
    let mesh = &*ctx.mesh;
    let eps = ctx.params.eps_e.cells(mesh);
    let mass = |c: &[f64]| -> (f64, f64) {
        mesh.volumes()
            .iter()
            .zip(&eps)
            .zip(c)
            .fold((0.0, 0.0), |(s, a), ((v, e), c)| {
                (s + v * e * c, a + (v * e * c).abs())
            })
    };
    let mass0 = traj.states.first().map(|s| mass(&s.c).0).unwrap_or(0.0);

    let mut nonneg = Tracker::new(NONNEGATIVITY);
    let mut ident = Tracker::new(POTENTIAL_IDENTITY);
    let mut bound = Tracker::new(POTENTIAL_BOUND);
    let mut balance = Tracker::new(MASS_BALANCE);
    for s in &traj.states {
        let min_c = s.c.iter().copied().fold(f64::INFINITY, f64::min);
        nonneg.record(s.time, min_c + NONNEGATIVITY_TOLERANCE);

        let tol = 1e-10 * mesh.total_volume() * s.potentials.max_abs();
        ident.record(
            s.time,
            tol - potential_identity_residual(mesh, &s.potentials).abs(),
        );

        let margin = linf_bound_check(
            mesh,
            &s.potentials,
            &s.c,
            &ctx.h,
            &ctx.kinetics,
            ctx.params.alpha4,
            1e-8,
        )
        .map(|b| b.margin + 1e-8)
        .unwrap_or(f64::NEG_INFINITY);
        bound.record(s.time, margin);

        let (m, abs) = mass(&s.c);
        balance.record(
            s.time,
            1e-10 * abs - (m - mass0 - s.cumulative_source).abs(),
        );
    }
    InvariantReport {
        results: vec![
            nonneg.finish(),
            ident.finish(),
            bound.finish(),
            balance.finish(),
        ],
    }
}
