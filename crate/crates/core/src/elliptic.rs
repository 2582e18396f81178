//! Regularized potential pair at frozen concentration, and the current
//! lifting problem that defines h.
//!
//! Unknowns are the electrolyte potential on every cell and the solid
//! potential on electrode cells. The coupled residual is
//!
//! ```text
//! F_e = A_κ φe + τVφe − ½α₄ V R(h, C, φs − φe) − V f_e
//! F_s = A_σ φs + τVφs + ½α₄ V R(h, C, φs − φe) − V f_s
//! ```
//!
//! where A are two-point flux operators with homogeneous Neumann boundaries
//! and R is the rate of [`Kinetics`]. R is increasing in φs − φe, so the
//! Jacobian is symmetric positive definite.

use log::debug;

use crate::error::SolverError;
use crate::geometry::{region_integral, Mesh, Region, RegionSet};
use crate::linalg::{LinearSolver, LinearStrategy, SparseMatrix, TripletBuilder};
use crate::params::{kappa_tau, BoundaryCurrent, HField, PhysParams};
use crate::reaction::{Kinetics, KineticsMode, RateEval};

/// Electrolyte and solid potentials. `phi_s` has one entry per cell and is
/// zero on separator cells.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialPair {
    pub phi_e: Vec<f64>,
    pub phi_s: Vec<f64>,
}

impl PotentialPair {
    pub fn zeros(mesh: &Mesh) -> Self {
        PotentialPair {
            phi_e: vec![0.0; mesh.n_cells()],
            phi_s: vec![0.0; mesh.n_cells()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.phi_e.iter().chain(&self.phi_s).all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.phi_e
            .iter()
            .chain(&self.phi_s)
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        PotentialPair {
            phi_e: self.phi_e.iter().map(|v| v * factor).collect(),
            phi_s: self.phi_s.iter().map(|v| v * factor).collect(),
        }
    }

    /// ∞-norm of the difference over both fields.
    pub fn distance(&self, other: &PotentialPair) -> f64 {
        self.phi_e
            .iter()
            .zip(&other.phi_e)
            .chain(self.phi_s.iter().zip(&other.phi_s))
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipticSettings {
    /// Bound on the ∞-norm of the cell-balance residual.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Initial Newton step length in (0, 1].
    pub damping: f64,
    pub linear_tolerance: f64,
}

impl Default for EllipticSettings {
    fn default() -> Self {
        EllipticSettings {
            tolerance: 1e-11,
            max_iterations: 60,
            damping: 1.0,
            linear_tolerance: 1e-12,
        }
    }
}

impl EllipticSettings {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.tolerance > 0.0 && self.linear_tolerance > 0.0) {
            return Err(SolverError::BadSettings(
                "elliptic tolerances must be positive".into(),
            ));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(SolverError::BadSettings(format!(
                "damping {} outside (0, 1]",
                self.damping
            )));
        }
        if self.max_iterations == 0 {
            return Err(SolverError::BadSettings(
                "max_iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn linear_solver(&self, mesh: &Mesh) -> LinearSolver {
        let strategy = if mesh.is_1d() {
            LinearStrategy::Banded
        } else {
            LinearStrategy::ConjugateGradient
        };
        LinearSolver {
            strategy,
            rel_tol: self.linear_tolerance,
        }
    }
}

/// Two-point flux links (cell a, cell b, transmissibility) restricted to a
/// set of regions. Transmissibilities use harmonic face averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxStencil {
    links: Vec<(usize, usize, f64)>,
}

impl FluxStencil {
    pub fn links(&self) -> &[(usize, usize, f64)] {
        &self.links
    }

    /// out += A u, accumulated face by face so that each flux is added and
    /// subtracted with the same value.
    pub fn apply_add(&self, u: &[f64], out: &mut [f64]) {
        for &(a, b, t) in &self.links {
            let flux = t * (u[a] - u[b]);
            out[a] += flux;
            out[b] -= flux;
        }
    }
}

pub fn face_transmissibilities(
    mesh: &Mesh,
    cell_coeff: &[f64],
    set: RegionSet,
) -> Result<FluxStencil, SolverError> {
    if cell_coeff.len() != mesh.n_cells() {
        return Err(crate::error::GeometryError::LengthMismatch {
            expected: mesh.n_cells(),
            got: cell_coeff.len(),
        }
        .into());
    }
    for cell in mesh.cells_in(set) {
        let k = cell_coeff[cell];
        if !(k > 0.0 && k.is_finite()) {
            return Err(SolverError::NonPositiveCoefficient { cell, value: k });
        }
    }
    let links = mesh
        .faces()
        .iter()
        .filter(|f| set.contains(mesh.region(f.cells.0)) && set.contains(mesh.region(f.cells.1)))
        .map(|f| {
            let (a, b) = f.cells;
            let t = f.area / (f.dist.0 / cell_coeff[a] + f.dist.1 / cell_coeff[b]);
            (a, b, t)
        })
        .collect();
    Ok(FluxStencil { links })
}

/// Matrix of −div(k∇·) + τ· on the cells of `set`, with local numbering
/// given by `cells` (local index → global cell).
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionOperator {
    pub matrix: SparseMatrix,
    pub cells: Vec<usize>,
}

pub fn assemble_diffusion_operator(
    mesh: &Mesh,
    cell_coeff: &[f64],
    zero_order: f64,
    set: RegionSet,
) -> Result<DiffusionOperator, SolverError> {
    if !(zero_order > 0.0) {
        return Err(SolverError::BadSettings(format!(
            "zero-order coefficient {zero_order} must be positive"
        )));
    }
    let stencil = face_transmissibilities(mesh, cell_coeff, set)?;
    let cells: Vec<usize> = mesh.cells_in(set).collect();
    let mut local = vec![usize::MAX; mesh.n_cells()];
    for (l, &g) in cells.iter().enumerate() {
        local[g] = l;
    }
    let mut t = TripletBuilder::new(cells.len());
    for (l, &g) in cells.iter().enumerate() {
        t.add(l, l, zero_order * mesh.volumes()[g]);
    }
    for &(a, b, tr) in stencil.links() {
        let (la, lb) = (local[a], local[b]);
        t.add(la, la, tr);
        t.add(lb, lb, tr);
        t.add(la, lb, -tr);
        t.add(lb, la, -tr);
    }
    Ok(DiffusionOperator {
        matrix: t.build(),
        cells,
    })
}

/// Inputs of one potential solve.
#[derive(Debug, Clone)]
pub struct PotentialProblem<'a> {
    pub mesh: &'a Mesh,
    pub params: &'a PhysParams,
    pub concentration: &'a [f64],
    pub h: &'a HField,
    pub kinetics: Kinetics,
    /// Optional volumetric forcings added to the electrolyte and solid equations.
    pub forcing: Option<(&'a [f64], &'a [f64])>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Newton,
    Picard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialReport {
    pub iterations: usize,
    /// Residual ∞-norm before the first step and after each step.
    pub residual_history: Vec<f64>,
    pub steps: Vec<StepKind>,
    pub rejected_steps: usize,
    pub residual: f64,
}

/// Unknown numbering: φe and φs interleaved cell by cell.
struct Numbering {
    e: Vec<usize>,
    s: Vec<Option<usize>>,
    n: usize,
}

impl Numbering {
    fn new(mesh: &Mesh) -> Self {
        let mut e = Vec::with_capacity(mesh.n_cells());
        let mut s = Vec::with_capacity(mesh.n_cells());
        let mut n = 0;
        for r in mesh.regions() {
            e.push(n);
            n += 1;
            if r.is_electrode() {
                s.push(Some(n));
                n += 1;
            } else {
                s.push(None);
            }
        }
        Numbering { e, s, n }
    }
}

struct Assembled<'a> {
    problem: &'a PotentialProblem<'a>,
    kappa: FluxStencil,
    sigma: FluxStencil,
    numbering: Numbering,
    tau: f64,
    half_a4: f64,
}

impl<'a> Assembled<'a> {
    fn new(problem: &'a PotentialProblem<'a>) -> Result<Self, SolverError> {
        let mesh = problem.mesh;
        let n = mesh.n_cells();
        if problem.concentration.len() != n || problem.h.values().len() != n {
            return Err(crate::error::GeometryError::LengthMismatch {
                expected: n,
                got: problem.concentration.len(),
            }
            .into());
        }
        let tau = problem.kinetics.tau;
        let kappa_cells = problem
            .concentration
            .iter()
            .map(|&c| kappa_tau(&problem.params.kappa, c, tau))
            .collect::<Result<Vec<_>, _>>()?;
        let sigma_cells: Vec<f64> = mesh
            .regions()
            .iter()
            .map(|&r| problem.params.sigma(r))
            .collect();
        Ok(Assembled {
            problem,
            kappa: face_transmissibilities(mesh, &kappa_cells, RegionSet::ALL)?,
            sigma: face_transmissibilities(mesh, &sigma_cells, RegionSet::ELECTRODES)?,
            numbering: Numbering::new(mesh),
            tau,
            half_a4: 0.5 * problem.params.alpha4,
        })
    }

    fn rates(&self, pair: &PotentialPair) -> Result<Vec<Option<RateEval>>, SolverError> {
        let p = self.problem;
        p.mesh
            .regions()
            .iter()
            .enumerate()
            .map(|(i, r)| {
                if !r.is_electrode() {
                    return Ok(None);
                }
                let y = pair.phi_s[i] - pair.phi_e[i];
                Ok(Some(p.kinetics.eval(p.h.get(i), p.concentration[i], y)?))
            })
            .collect()
    }

    /// Cell-balance residuals (F_e, F_s) on full-length cell arrays.
    fn residual(&self, pair: &PotentialPair, rates: &[Option<RateEval>]) -> (Vec<f64>, Vec<f64>) {
        let mesh = self.problem.mesh;
        let n = mesh.n_cells();
        let vol = mesh.volumes();
        let mut fe = vec![0.0; n];
        let mut fs = vec![0.0; n];
        self.kappa.apply_add(&pair.phi_e, &mut fe);
        self.sigma.apply_add(&pair.phi_s, &mut fs);
        for i in 0..n {
            fe[i] += self.tau * vol[i] * pair.phi_e[i];
            if let Some(r) = rates[i] {
                let src = self.half_a4 * vol[i] * r.value;
                fe[i] -= src;
                fs[i] += self.tau * vol[i] * pair.phi_s[i] + src;
            }
            if let Some((f_e, f_s)) = self.problem.forcing {
                fe[i] -= vol[i] * f_e[i];
                if mesh.region(i).is_electrode() {
                    fs[i] -= vol[i] * f_s[i];
                }
            }
        }
        (fe, fs)
    }

    fn norm(&self, res: &(Vec<f64>, Vec<f64>)) -> f64 {
        let mesh = self.problem.mesh;
        let mut m: f64 = 0.0;
        for i in 0..mesh.n_cells() {
            m = m.max(res.0[i].abs());
            if mesh.region(i).is_electrode() {
                m = m.max(res.1[i].abs());
            }
        }
        if m.is_nan() {
            f64::INFINITY
        } else {
            m
        }
    }

    /// Solves J δ = −F. With `with_reaction == false` the reaction block is
    /// dropped, which gives the Picard correction.
    fn correction(
        &self,
        rates: &[Option<RateEval>],
        res: &(Vec<f64>, Vec<f64>),
        with_reaction: bool,
        solver: &LinearSolver,
    ) -> Result<PotentialPair, SolverError> {
        let mesh = self.problem.mesh;
        let vol = mesh.volumes();
        let num = &self.numbering;
        let mut t = TripletBuilder::new(num.n);
        let mut rhs = vec![0.0; num.n];
        for i in 0..mesh.n_cells() {
            let ie = num.e[i];
            t.add(ie, ie, self.tau * vol[i]);
            rhs[ie] = -res.0[i];
            if let Some(is) = num.s[i] {
                t.add(is, is, self.tau * vol[i]);
                rhs[is] = -res.1[i];
                if with_reaction {
                    let w = self.half_a4 * vol[i] * rates[i].map(|r| r.d_dy).unwrap_or(0.0);
                    t.add(ie, ie, w);
                    t.add(is, is, w);
                    t.add(ie, is, -w);
                    t.add(is, ie, -w);
                }
            }
        }
        for &(a, b, tr) in self.kappa.links() {
            let (ia, ib) = (num.e[a], num.e[b]);
            t.add(ia, ia, tr);
            t.add(ib, ib, tr);
            t.add(ia, ib, -tr);
            t.add(ib, ia, -tr);
        }
        for &(a, b, tr) in self.sigma.links() {
            let (ia, ib) = (num.s[a].unwrap(), num.s[b].unwrap());
            t.add(ia, ia, tr);
            t.add(ib, ib, tr);
            t.add(ia, ib, -tr);
            t.add(ib, ia, -tr);
        }
        let x = solver.solve(&t.build(), &rhs)?;
        let mut delta = PotentialPair::zeros(mesh);
        for i in 0..mesh.n_cells() {
            delta.phi_e[i] = x[num.e[i]];
            if let Some(is) = num.s[i] {
                delta.phi_s[i] = x[is];
            }
        }
        Ok(delta)
    }

    /// Adds the constant that makes the summed residual vanish. The shift
    /// leaves φs − φe unchanged, so only the τ terms move.
    fn balance_constant_mode(&self, pair: &mut PotentialPair) {
        let mesh = self.problem.mesh;
        let vol = mesh.volumes();
        let mut target = 0.0;
        if let Some((f_e, f_s)) = self.problem.forcing {
            for i in 0..mesh.n_cells() {
                target += vol[i] * f_e[i];
                if mesh.region(i).is_electrode() {
                    target += vol[i] * f_s[i];
                }
            }
            target /= self.tau;
        }
        let current = potential_identity_residual(mesh, pair);
        let measure = mesh.total_volume() + mesh.region_measure(RegionSet::ELECTRODES);
        let shift = (target - current) / measure;
        for i in 0..mesh.n_cells() {
            pair.phi_e[i] += shift;
            if mesh.region(i).is_electrode() {
                pair.phi_s[i] += shift;
            }
        }
    }
}

fn add_scaled(pair: &PotentialPair, delta: &PotentialPair, lambda: f64) -> PotentialPair {
    PotentialPair {
        phi_e: pair
            .phi_e
            .iter()
            .zip(&delta.phi_e)
            .map(|(a, b)| a + lambda * b)
            .collect(),
        phi_s: pair
            .phi_s
            .iter()
            .zip(&delta.phi_s)
            .map(|(a, b)| a + lambda * b)
            .collect(),
    }
}

/// Regularized potential pair at concentration `c`, using H_τ.
pub fn solve_potential_pair(
    mesh: &Mesh,
    params: &PhysParams,
    c: &[f64],
    h: &HField,
    tau: f64,
    guess: &PotentialPair,
    settings: &EllipticSettings,
) -> Result<(PotentialPair, PotentialReport), SolverError> {
    let kinetics = Kinetics::new(params.d(), params.alpha2, tau, KineticsMode::Regularized)?;
    let problem = PotentialProblem {
        mesh,
        params,
        concentration: c,
        h,
        kinetics,
        forcing: None,
    };
    solve_potential_problem(&problem, guess, settings)
}

/// Damped Newton on the coupled pair with a Picard fallback.
pub fn solve_potential_problem(
    problem: &PotentialProblem<'_>,
    guess: &PotentialPair,
    settings: &EllipticSettings,
) -> Result<(PotentialPair, PotentialReport), SolverError> {
    settings.validate()?;
    let mesh = problem.mesh;
    let asm = Assembled::new(problem)?;
    let solver = settings.linear_solver(mesh);

    let mut pair = guess.clone();
    for (i, r) in mesh.regions().iter().enumerate() {
        if !r.is_electrode() {
            pair.phi_s[i] = 0.0;
        }
    }
    let mut rates = asm.rates(&pair)?;
    let mut res = asm.residual(&pair, &rates);
    let mut norm = asm.norm(&res);
    let mut report = PotentialReport {
        iterations: 0,
        residual_history: vec![norm],
        steps: Vec::new(),
        rejected_steps: 0,
        residual: norm,
    };
    let mut balanced = false;

    loop {
        if norm <= settings.tolerance {
            if balanced {
                break;
            }
            asm.balance_constant_mode(&mut pair);
            rates = asm.rates(&pair)?;
            res = asm.residual(&pair, &rates);
            norm = asm.norm(&res);
            balanced = true;
            continue;
        }
        if report.iterations >= settings.max_iterations {
            return Err(SolverError::PotentialNonConvergence {
                iterations: report.iterations,
                residual: norm,
            });
        }
        report.iterations += 1;
        balanced = false;

        let delta = asm.correction(&rates, &res, true, &solver)?;
        let mut lambda = settings.damping;
        let mut accepted = None;
        for _ in 0..=3 {
            let trial = add_scaled(&pair, &delta, lambda);
            // a saturated exponent counts as a rejected step
            if let Ok(tr) = asm.rates(&trial) {
                let tres = asm.residual(&trial, &tr);
                let tnorm = asm.norm(&tres);
                if tnorm <= (1.0 - 1e-4 * lambda) * norm || tnorm <= settings.tolerance {
                    accepted = Some((trial, tr, tres, tnorm));
                    break;
                }
            }
            report.rejected_steps += 1;
            lambda *= 0.5;
        }
        let (next, next_rates, next_res, next_norm) = match accepted {
            Some(a) => {
                report.steps.push(StepKind::Newton);
                a
            }
            None => {
                debug!(
                    "potential solve: Picard fallback at iteration {}",
                    report.iterations
                );
                let delta = asm.correction(&rates, &res, false, &solver)?;
                let trial = add_scaled(&pair, &delta, 0.5);
                let tr = asm.rates(&trial)?;
                let tres = asm.residual(&trial, &tr);
                let tnorm = asm.norm(&tres);
                report.steps.push(StepKind::Picard);
                (trial, tr, tres, tnorm)
            }
        };
        pair = next;
        rates = next_rates;
        res = next_res;
        norm = next_norm;
        report.residual_history.push(norm);
    }
    if !pair.is_finite() {
        return Err(SolverError::PotentialNonConvergence {
            iterations: report.iterations,
            residual: f64::NAN,
        });
    }
    report.residual = norm;
    Ok((pair, report))
}

/// ∫_Ω φe + ∫_{Ω′} φs.
pub fn potential_identity_residual(mesh: &Mesh, pair: &PotentialPair) -> f64 {
    let e = region_integral(mesh, &pair.phi_e, RegionSet::ALL);
    let s = region_integral(mesh, &pair.phi_s, RegionSet::ELECTRODES);
    match (e, s) {
        (Ok(e), Ok(s)) => e + s,
        _ => f64::NAN,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub holds: bool,
    pub bound: f64,
    pub max_norm: f64,
    /// bound − max_norm; negative when violated beyond the tolerance.
    pub margin: f64,
}

/// max(‖φe‖∞, ‖φs‖∞) ≤ (α₄/τ)·max |R(h, C, 0)| + tol.
pub fn linf_bound_check(
    mesh: &Mesh,
    pair: &PotentialPair,
    c: &[f64],
    h: &HField,
    kinetics: &Kinetics,
    alpha4: f64,
    tol: f64,
) -> Result<BoundCheck, SolverError> {
    let mut rate_max: f64 = 0.0;
    for i in mesh.cells_in(RegionSet::ELECTRODES) {
        rate_max = rate_max.max(kinetics.rate(h.get(i), c[i], 0.0)?.abs());
    }
    let bound = alpha4 / kinetics.tau * rate_max;
    let mut max_norm: f64 = pair.phi_e.iter().fold(0.0, |m, v| m.max(v.abs()));
    for i in mesh.cells_in(RegionSet::ELECTRODES) {
        max_norm = max_norm.max(pair.phi_s[i].abs());
    }
    Ok(BoundCheck {
        holds: max_norm <= bound + tol,
        bound,
        max_norm,
        margin: bound - max_norm,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftingSolution {
    /// Zero on separator cells.
    pub phi: Vec<f64>,
    /// ∞-norm of the cell-balance residual.
    pub residual: f64,
}

/// −div(σ∇φ) = 0 on Ω′ with outward current I = −σ ∂φ/∂n on the boundary
/// of each electrode; zero mean on each electrode.
pub fn solve_current_lifting(
    mesh: &Mesh,
    params: &PhysParams,
    current: &BoundaryCurrent,
    linear_tolerance: f64,
) -> Result<LiftingSolution, SolverError> {
    let n = mesh.n_cells();
    let n_ext = mesh.external_faces().count();
    let n_int = mesh.electrode_interface_faces().count();
    if current.external.len() != n_ext || current.interface.len() != n_int {
        return Err(SolverError::BadSettings(format!(
            "boundary current has {}/{} entries, mesh has {n_ext}/{n_int} faces",
            current.external.len(),
            current.interface.len()
        )));
    }
    // outward boundary current per cell
    let mut out = vec![0.0; n];
    let mut abs_total = [0.0f64; 2];
    for (f, i) in mesh.external_faces().zip(&current.external) {
        out[f.cell] += f.area * i;
        abs_total[component(mesh.region(f.cell))] += (f.area * i).abs();
    }
    for ((f, cell), i) in mesh.electrode_interface_faces().zip(&current.interface) {
        out[cell] += f.area * i;
        abs_total[component(mesh.region(cell))] += (f.area * i).abs();
    }
    for (k, (name, set)) in [("anode", RegionSet::ANODE), ("cathode", RegionSet::CATHODE)]
        .into_iter()
        .enumerate()
    {
        let net: f64 = mesh.cells_in(set).map(|c| out[c]).sum();
        if net.abs() > 1e-12 * abs_total[k].max(f64::MIN_POSITIVE) && net != 0.0 {
            return Err(SolverError::IncompatibleCurrent {
                component: name,
                net,
            });
        }
    }

    let sigma_cells: Vec<f64> = mesh.regions().iter().map(|&r| params.sigma(r)).collect();
    let stencil = face_transmissibilities(mesh, &sigma_cells, RegionSet::ELECTRODES)?;
    let cells: Vec<usize> = mesh.cells_in(RegionSet::ELECTRODES).collect();
    let mut local = vec![usize::MAX; n];
    for (l, &g) in cells.iter().enumerate() {
        local[g] = l;
    }
    // pin the first cell of each electrode, eliminating its row and column
    let pinned: Vec<usize> = [RegionSet::ANODE, RegionSet::CATHODE]
        .iter()
        .filter_map(|&s| mesh.cells_in(s).next())
        .map(|g| local[g])
        .collect();
    let is_pinned = |l: usize| pinned.contains(&l);
    let mut t = TripletBuilder::new(cells.len());
    let mut rhs: Vec<f64> = cells.iter().map(|&g| -out[g]).collect();
    for &p in &pinned {
        t.add(p, p, 1.0);
        rhs[p] = 0.0;
    }
    for &(a, b, tr) in stencil.links() {
        let (la, lb) = (local[a], local[b]);
        for (x, y) in [(la, lb), (lb, la)] {
            if !is_pinned(x) {
                t.add(x, x, tr);
                if !is_pinned(y) {
                    t.add(x, y, -tr);
                }
            }
        }
    }
    let solver = LinearSolver {
        strategy: if mesh.is_1d() {
            LinearStrategy::Banded
        } else {
            LinearStrategy::ConjugateGradient
        },
        rel_tol: linear_tolerance,
    };
    let x = solver.solve(&t.build(), &rhs)?;
    let mut phi = vec![0.0; n];
    for (l, &g) in cells.iter().enumerate() {
        phi[g] = x[l];
    }
    for set in [RegionSet::ANODE, RegionSet::CATHODE] {
        let mean = region_integral(mesh, &phi, set)? / mesh.region_measure(set);
        for c in mesh.cells_in(set) {
            phi[c] -= mean;
        }
    }
    let mut res = out;
    stencil.apply_add(&phi, &mut res);
    let residual = cells.iter().fold(0.0f64, |m, &g| m.max(res[g].abs()));
    Ok(LiftingSolution { phi, residual })
}

fn component(r: Region) -> usize {
    if r == Region::Anode {
        0
    } else {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_layered_mesh, CellCounts, DomainLayout};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mesh_1d(n: usize) -> Mesh {
        let layout = DomainLayout::new(0.4, 0.2, 0.4).unwrap();
        build_layered_mesh(&layout, CellCounts::new(2 * n, n, 2 * n)).unwrap()
    }

    fn solve(
        mesh: &Mesh,
        params: &PhysParams,
        c: &[f64],
        h: &HField,
        tau: f64,
        guess: &PotentialPair,
    ) -> (PotentialPair, PotentialReport) {
        solve_potential_pair(mesh, params, c, h, tau, guess, &EllipticSettings::default()).unwrap()
    }

    fn random_guess(mesh: &Mesh, rng: &mut ChaCha8Rng) -> PotentialPair {
        let mut g = PotentialPair::zeros(mesh);
        for v in g.phi_e.iter_mut().chain(g.phi_s.iter_mut()) {
            *v = rng.gen_range(-5.0..5.0);
        }
        g
    }

    #[test]
    fn two_cell_operator() {
        let layout = DomainLayout::new(1.0, 1.0, 1.0).unwrap();
        let mesh = build_layered_mesh(&layout, CellCounts::new(2, 2, 2)).unwrap();
        let op = assemble_diffusion_operator(&mesh, &[1.0; 6], 0.1, RegionSet::ANODE).unwrap();
        // two cells of width 0.5: transmissibility 1 / (0.25 + 0.25) = 2
        let (a, t) = (2.0, 0.1 * 0.5);
        assert_eq!(op.matrix.dim(), 2);
        assert!((op.matrix.get(0, 0) - (t + a)).abs() < 1e-15);
        assert!((op.matrix.get(0, 1) + a).abs() < 1e-15);
        assert!((op.matrix.get(1, 1) - (t + a)).abs() < 1e-15);
    }

    #[test]
    fn operator_structure() {
        let mesh = mesh_1d(5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let coeff: Vec<f64> = (0..mesh.n_cells())
            .map(|_| rng.gen_range(0.1..10.0))
            .collect();
        let op = assemble_diffusion_operator(&mesh, &coeff, 1e-3, RegionSet::ALL).unwrap();
        assert!(op.matrix.is_symmetric(0.0));
        assert!(op.matrix.is_m_matrix_structure());
        let ones = vec![2.5; mesh.n_cells()];
        let applied = op.matrix.mul_vec(&ones);
        for (i, v) in applied.iter().enumerate() {
            assert!((v - 1e-3 * mesh.volumes()[i] * 2.5).abs() < 1e-12);
        }
        for _ in 0..100 {
            let x: Vec<f64> = (0..mesh.n_cells())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let ax = op.matrix.mul_vec(&x);
            assert!(x.iter().zip(&ax).map(|(a, b)| a * b).sum::<f64>() > 0.0);
        }
        let mut bad = coeff.clone();
        bad[3] = 0.0;
        assert!(matches!(
            assemble_diffusion_operator(&mesh, &bad, 1e-3, RegionSet::ALL),
            Err(SolverError::NonPositiveCoefficient { cell: 3, .. })
        ));
    }

    #[test]
    fn no_reaction_gives_zero() {
        let mesh = mesh_1d(4);
        let params = PhysParams {
            alpha4: 0.0,
            ..PhysParams::default()
        };
        let c = vec![1.0; mesh.n_cells()];
        let h = HField::uniform(&mesh, 1.5);
        let (pair, _) = solve(&mesh, &params, &c, &h, 1e-2, &PotentialPair::zeros(&mesh));
        assert_eq!(pair.max_abs(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (pair, _) = solve(&mesh, &params, &c, &h, 1e-2, &random_guess(&mesh, &mut rng));
        assert!(pair.max_abs() < 1e-10);
    }

    #[test]
    fn equilibrium_data_converges_to_nonzero_pair() {
        let mesh = mesh_1d(10);
        let params = PhysParams::default();
        let c = vec![1.0; mesh.n_cells()];
        let h = HField::uniform(&mesh, 1.0);
        let settings = EllipticSettings::default();
        let (pair, report) = solve(&mesh, &params, &c, &h, 1e-3, &PotentialPair::zeros(&mesh));
        assert!(report.residual_history[0] > 0.0);
        assert!(report.residual <= settings.tolerance);
        assert!(pair.max_abs() > 0.0);
    }

    #[test]
    fn unique_from_random_guesses_and_invariants_hold() {
        let mesh = mesh_1d(12);
        let params = PhysParams {
            k_bound: 3.0,
            ..PhysParams::default()
        };
        let c: Vec<f64> = mesh
            .centers()
            .iter()
            .map(|p| 1.0 + 0.3 * (3.0 * p[0]).sin())
            .collect();
        let h = HField::per_region(&mesh, 2.0, 0.5);
        let tau = 1e-3;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (first, _) = solve(&mesh, &params, &c, &h, tau, &random_guess(&mesh, &mut rng));
        let kinetics = Kinetics::new(1.0, 1.0, tau, KineticsMode::Regularized).unwrap();
        for _ in 0..4 {
            let (pair, report) = solve(&mesh, &params, &c, &h, tau, &random_guess(&mesh, &mut rng));
            assert!(pair.distance(&first) < 1e-8);
            let ident = potential_identity_residual(&mesh, &pair);
            assert!(ident.abs() <= 1e-10 * mesh.total_volume() * pair.max_abs().max(1.0));
            assert!(
                linf_bound_check(&mesh, &pair, &c, &h, &kinetics, 1.0, 1e-8)
                    .unwrap()
                    .holds
            );
            // Newton iterates never increase the residual
            for (k, step) in report.steps.iter().enumerate() {
                if *step == StepKind::Newton {
                    assert!(report.residual_history[k + 1] <= report.residual_history[k]);
                }
            }
        }
        let scaled = first.scaled(10.0);
        let check = linf_bound_check(&mesh, &scaled, &c, &h, &kinetics, 1.0, 1e-8).unwrap();
        // scaled fields exceed the bound unless the original was tiny
        if first.max_abs() * 10.0 > check.bound + 1e-8 {
            assert!(!check.holds);
        }
    }

    #[test]
    fn bound_is_violated_by_scaled_pair() {
        let mesh = mesh_1d(6);
        let c = vec![1.0; mesh.n_cells()];
        let h = HField::per_region(&mesh, 2.0, 0.5);
        let kinetics = Kinetics::new(1.0, 1.0, 1e-2, KineticsMode::Regularized).unwrap();
        let zero = linf_bound_check(
            &mesh,
            &PotentialPair::zeros(&mesh),
            &c,
            &h,
            &kinetics,
            0.0,
            0.0,
        )
        .unwrap();
        assert!(zero.holds && zero.bound == 0.0 && zero.margin == 0.0);
        let base = linf_bound_check(
            &mesh,
            &PotentialPair::zeros(&mesh),
            &c,
            &h,
            &kinetics,
            1.0,
            0.0,
        )
        .unwrap();
        let mut pair = PotentialPair::zeros(&mesh);
        pair.phi_e[0] = 10.0 * base.bound;
        assert!(
            !linf_bound_check(&mesh, &pair, &c, &h, &kinetics, 1.0, 1e-8)
                .unwrap()
                .holds
        );
    }

    #[test]
    fn identity_cancellation() {
        let mesh = mesh_1d(3);
        let ratio = mesh.total_volume() / mesh.region_measure(RegionSet::ELECTRODES);
        let mut pair = PotentialPair::zeros(&mesh);
        assert_eq!(potential_identity_residual(&mesh, &pair), 0.0);
        for i in 0..mesh.n_cells() {
            pair.phi_e[i] = 1.0;
            if mesh.region(i).is_electrode() {
                pair.phi_s[i] = -ratio;
            }
        }
        assert!(potential_identity_residual(&mesh, &pair).abs() < 1e-15);
    }

    #[test]
    fn two_dimensional_uniform_matches_1d() {
        let layout = DomainLayout::new(0.4, 0.2, 0.4).unwrap();
        let m1 = build_layered_mesh(&layout, CellCounts::new(8, 4, 8)).unwrap();
        let m2 = build_layered_mesh(
            &layout.with_transverse(0.5).unwrap(),
            CellCounts::new(8, 4, 8).with_transverse(3),
        )
        .unwrap();
        let params = PhysParams {
            k_bound: 3.0,
            ..PhysParams::default()
        };
        let solve_on = |m: &Mesh| {
            let c: Vec<f64> = m.centers().iter().map(|p| 1.0 + 0.2 * p[0]).collect();
            let h = HField::per_region(m, 2.0, 0.5);
            solve(m, &params, &c, &h, 1e-2, &PotentialPair::zeros(m)).0
        };
        let (p1, p2) = (solve_on(&m1), solve_on(&m2));
        for ix in 0..m1.n_cells() {
            for iy in 0..3 {
                assert!((p1.phi_e[ix] - p2.phi_e[ix * 3 + iy]).abs() < 1e-8);
                assert!((p1.phi_s[ix] - p2.phi_s[ix * 3 + iy]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn exact_kinetics_at_root_is_stationary() {
        let mesh = mesh_1d(4);
        let params = PhysParams::default();
        let c = vec![1.0; mesh.n_cells()];
        let h = HField::uniform(&mesh, 1.0);
        let kinetics = Kinetics::new(1.0, 1.0, 1e-3, KineticsMode::Exact).unwrap();
        let problem = PotentialProblem {
            mesh: &mesh,
            params: &params,
            concentration: &c,
            h: &h,
            kinetics,
            forcing: None,
        };
        let (pair, report) = solve_potential_problem(
            &problem,
            &PotentialPair::zeros(&mesh),
            &EllipticSettings::default(),
        )
        .unwrap();
        assert_eq!(report.iterations, 0);
        assert_eq!(pair.max_abs(), 0.0);
    }

    #[test]
    fn tight_iteration_cap_reports_residual() {
        let mesh = mesh_1d(6);
        let params = PhysParams {
            k_bound: 3.0,
            ..PhysParams::default()
        };
        let c = vec![1.0; mesh.n_cells()];
        let h = HField::per_region(&mesh, 2.0, 0.5);
        let settings = EllipticSettings {
            max_iterations: 1,
            tolerance: 1e-14,
            ..EllipticSettings::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let err = solve_potential_pair(
            &mesh,
            &params,
            &c,
            &h,
            1e-3,
            &random_guess(&mesh, &mut rng),
            &settings,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            SolverError::PotentialNonConvergence { iterations: 1, .. }
        ));
        let bad = EllipticSettings {
            damping: 0.0,
            ..EllipticSettings::default()
        };
        assert!(solve_potential_pair(
            &mesh,
            &params,
            &c,
            &h,
            1e-3,
            &PotentialPair::zeros(&mesh),
            &bad
        )
        .is_err());
    }

    #[test]
    fn lifting_examples() {
        let layout = DomainLayout::new(1.0, 0.2, 0.5).unwrap();
        let mesh = build_layered_mesh(&layout, CellCounts::new(20, 4, 10)).unwrap();
        let params = PhysParams::default();
        let zero =
            solve_current_lifting(&mesh, &params, &BoundaryCurrent::zero(&mesh), 1e-12).unwrap();
        assert!(zero.phi.iter().all(|v| *v == 0.0));

        // influx 1 at x = 0 and outflux 1 through the anode/separator interface
        let mut current = BoundaryCurrent::zero(&mesh);
        current.external[0] = -1.0;
        current.interface[0] = 1.0;
        let sol = solve_current_lifting(&mesh, &params, &current, 1e-12).unwrap();
        assert!(sol.residual < 1e-12);
        for c in mesh.cells_in(RegionSet::ANODE) {
            let x = mesh.centers()[c][0];
            assert!(
                (sol.phi[c] - (0.5 - x)).abs() < 1e-12,
                "cell {c}: {} vs {}",
                sol.phi[c],
                0.5 - x
            );
        }
        for c in mesh.cells_in(RegionSet::CATHODE) {
            assert!(sol.phi[c].abs() < 1e-14);
        }

        let mut bad = BoundaryCurrent::zero(&mesh);
        bad.external[1] = 0.3;
        assert!(matches!(
            solve_current_lifting(&mesh, &params, &bad, 1e-12),
            Err(SolverError::IncompatibleCurrent {
                component: "cathode",
                ..
            })
        ));
    }

    #[test]
    fn lifting_2d_cosine_current() {
        let layout = DomainLayout::new(0.4, 0.2, 0.4)
            .unwrap()
            .with_transverse(1.0)
            .unwrap();
        let mesh =
            build_layered_mesh(&layout, CellCounts::new(8, 4, 8).with_transverse(8)).unwrap();
        let params = PhysParams::default();
        let current = BoundaryCurrent::cosine(&mesh, 0.5, -0.5);
        assert!(current.is_compatible(&mesh));
        let sol = solve_current_lifting(&mesh, &params, &current, 1e-13).unwrap();
        assert!(sol.residual < 1e-10);
        for set in [RegionSet::ANODE, RegionSet::CATHODE] {
            assert!(region_integral(&mesh, &sol.phi, set).unwrap().abs() < 1e-13);
        }
    }
}
