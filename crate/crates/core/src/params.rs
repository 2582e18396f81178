//! Physical coefficients of the cell model and the checks that the
//! existence theory needs from them.

use std::fmt;

use crate::error::{KineticsError, ParamsError};
use crate::geometry::{check_separator_condition, DomainLayout, Mesh, Region};

/// Shape of the electrolyte conductivity κ(s) on s ≥ 0.
#[derive(Debug, Clone, PartialEq)]
pub enum KappaCurve {
    /// κ(s) = c₀ s^{α₀}.
    PowerLaw,
    /// Piecewise-linear through (s_i, κ_i), constant beyond the last node.
    Table { s: Vec<f64>, k: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KappaModel {
    pub curve: KappaCurve,
    pub c0: f64,
    pub alpha0: f64,
    /// Upper end of the interval [0, knee) on which κ(s) ≥ c₀ s^{α₀} is required.
    pub knee: f64,
}

impl KappaModel {
    pub fn power_law(c0: f64, alpha0: f64, knee: f64) -> Self {
        KappaModel {
            curve: KappaCurve::PowerLaw,
            c0,
            alpha0,
            knee,
        }
    }

    /// Tabulated model; nodes must start at s = 0 with κ = 0 and be nondecreasing.
    pub fn table(
        points: &[(f64, f64)],
        c0: f64,
        alpha0: f64,
        knee: f64,
    ) -> Result<Self, ParamsError> {
        if points.len() < 2 {
            return Err(ParamsError::KappaTable("need at least two nodes".into()));
        }
        if points[0] != (0.0, 0.0) {
            return Err(ParamsError::KappaTable("first node must be (0, 0)".into()));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(ParamsError::KappaTable(
                    "abscissae must increase strictly".into(),
                ));
            }
            if w[1].1 < w[0].1 {
                return Err(ParamsError::KappaTable(
                    "values must be nondecreasing".into(),
                ));
            }
        }
        Ok(KappaModel {
            curve: KappaCurve::Table {
                s: points.iter().map(|p| p.0).collect(),
                k: points.iter().map(|p| p.1).collect(),
            },
            c0,
            alpha0,
            knee,
        })
    }

    pub fn eval(&self, s: f64) -> f64 {
        let s = s.max(0.0);
        match &self.curve {
            KappaCurve::PowerLaw => self.c0 * s.powf(self.alpha0),
            KappaCurve::Table { s: xs, k } => {
                let last = xs.len() - 1;
                if s >= xs[last] {
                    return k[last];
                }
                let j = xs.partition_point(|&x| x <= s).max(1) - 1;
                let t = (s - xs[j]) / (xs[j + 1] - xs[j]);
                k[j] + t * (k[j + 1] - k[j])
            }
        }
    }

    /// Sampled checks of κ(0) = 0, κ > 0 on (0, ∞), the lower power bound
    /// below the knee and a modulus-of-continuity bound. Returns failures as text.
    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.c0 > 0.0 && self.alpha0 > 0.0 && self.knee > 0.0) {
            out.push(format!(
                "c0, alpha0, knee must be positive (got {}, {}, {})",
                self.c0, self.alpha0, self.knee
            ));
            return out;
        }
        if self.eval(0.0) != 0.0 {
            out.push(format!("kappa(0) = {} != 0", self.eval(0.0)));
        }
        let n = 400;
        let top = 4.0 * self.knee;
        for i in 1..=n {
            let s = top * i as f64 / n as f64;
            let v = self.eval(s);
            if !(v > 0.0) || !v.is_finite() {
                out.push(format!("kappa({s}) = {v} not positive"));
                break;
            }
            if s < self.knee && v < self.c0 * s.powf(self.alpha0) * (1.0 - 1e-12) {
                out.push(format!("kappa({s}) = {v} below c0 s^alpha0"));
                break;
            }
        }
        // A jump keeps the sampled modulus of continuity from shrinking under refinement.
        let coarse = self.sampled_modulus(top, n);
        let fine = self.sampled_modulus(top, 8 * n);
        if coarse > 0.0 && !(fine < coarse) {
            out.push(format!(
                "kappa appears discontinuous (modulus {coarse:e} -> {fine:e})"
            ));
        }
        out
    }

    fn sampled_modulus(&self, top: f64, n: usize) -> f64 {
        let h = top / n as f64;
        (0..n)
            .map(|i| (self.eval(h * (i + 1) as f64) - self.eval(h * i as f64)).abs())
            .fold(0.0, f64::max)
    }
}

/// κ_τ(s) = κ(s⁺ + τ).
pub fn kappa_tau(model: &KappaModel, s: f64, tau: f64) -> Result<f64, KineticsError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(KineticsError::TauOutOfRange(tau));
    }
    Ok(model.eval(s.max(0.0) + tau))
}

/// One value per region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionValues {
    pub anode: f64,
    pub separator: f64,
    pub cathode: f64,
}

impl RegionValues {
    pub fn uniform(v: f64) -> Self {
        RegionValues {
            anode: v,
            separator: v,
            cathode: v,
        }
    }

    pub fn get(&self, r: Region) -> f64 {
        match r {
            Region::Anode => self.anode,
            Region::Separator => self.separator,
            Region::Cathode => self.cathode,
        }
    }

    pub fn min(&self) -> f64 {
        self.anode.min(self.separator).min(self.cathode)
    }

    pub fn cells(&self, mesh: &Mesh) -> Vec<f64> {
        mesh.regions().iter().map(|r| self.get(*r)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialConcentration {
    Uniform(f64),
    PerRegion(RegionValues),
    Cells(Vec<f64>),
}

impl InitialConcentration {
    pub fn cells(&self, mesh: &Mesh) -> Vec<f64> {
        match self {
            InitialConcentration::Uniform(v) => vec![*v; mesh.n_cells()],
            InitialConcentration::PerRegion(rv) => rv.cells(mesh),
            InitialConcentration::Cells(v) => v.clone(),
        }
    }

    pub fn min(&self) -> f64 {
        match self {
            InitialConcentration::Uniform(v) => *v,
            InitialConcentration::PerRegion(rv) => rv.min(),
            InitialConcentration::Cells(v) => v.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysParams {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    /// Bound K ≥ 1 with 1/K ≤ h ≤ K.
    pub k_bound: f64,
    /// Open-circuit potential, constant.
    pub u: f64,
    pub sigma_anode: f64,
    pub sigma_cathode: f64,
    pub eps_e: RegionValues,
    pub diffusivity: RegionValues,
    pub kappa: KappaModel,
    pub c0: InitialConcentration,
    /// Whether the run should enforce d > 1/2.
    pub require_positivity: bool,
}

impl Default for PhysParams {
    fn default() -> Self {
        PhysParams {
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 1.0,
            alpha4: 1.0,
            k_bound: 1.0,
            u: 1.0,
            sigma_anode: 1.0,
            sigma_cathode: 1.0,
            eps_e: RegionValues::uniform(1.0),
            diffusivity: RegionValues::uniform(1.0),
            kappa: KappaModel::power_law(1.0, 1.0, 1.0),
            c0: InitialConcentration::Uniform(1.0),
            require_positivity: true,
        }
    }
}

impl PhysParams {
    /// d = α₁α₂.
    pub fn d(&self) -> f64 {
        self.alpha1 * self.alpha2
    }

    /// σ in an electrode region; zero in the separator.
    pub fn sigma(&self, r: Region) -> f64 {
        match r {
            Region::Anode => self.sigma_anode,
            Region::Cathode => self.sigma_cathode,
            Region::Separator => 0.0,
        }
    }
}

/// A named failure of one of the model hypotheses.
#[derive(Debug, Clone, PartialEq)]
pub enum HypothesisViolation {
    Conductivity(String),
    NonPositiveCoefficient { name: &'static str, value: f64 },
    NonPositiveAlpha { index: u8, value: f64 },
    HBound { k: f64 },
    InitialNotPositive { min: f64 },
    ExponentTooSmall { d: f64 },
    ThickSeparator { separator: f64, electrodes: f64 },
}

impl HypothesisViolation {
    pub fn code(&self) -> &'static str {
        match self {
            HypothesisViolation::Conductivity(_) => "H1",
            HypothesisViolation::NonPositiveCoefficient { .. } => "H2",
            HypothesisViolation::NonPositiveAlpha { .. } => "H4",
            HypothesisViolation::HBound { .. } => "hb",
            HypothesisViolation::InitialNotPositive { .. } => "H7",
            HypothesisViolation::ExponentTooSmall { .. } => "H8",
            HypothesisViolation::ThickSeparator { .. } => "H9",
        }
    }
}

impl fmt::Display for HypothesisViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let code = self.code();
        match self {
            HypothesisViolation::Conductivity(msg) => {
                write!(f, "({code}) kappa model invalid: {msg}")
            }
            HypothesisViolation::NonPositiveCoefficient { name, value } => {
                write!(f, "({code}) {name} > 0 violated ({name} = {value})")
            }
            HypothesisViolation::NonPositiveAlpha { index, value } => {
                write!(
                    f,
                    "({code}) alpha{index} > 0 violated (alpha{index} = {value})"
                )
            }
            HypothesisViolation::HBound { k } => write!(f, "({code}) K >= 1 violated (K = {k})"),
            HypothesisViolation::InitialNotPositive { min } => {
                write!(f, "({code}) min C₀ > 0 violated (min C₀ = {min})")
            }
            HypothesisViolation::ExponentTooSmall { d } => {
                write!(f, "({code}) d > 1/2 violated (d = {d})")
            }
            HypothesisViolation::ThickSeparator {
                separator,
                electrodes,
            } => write!(
                f,
                "({code}) |separator| < |electrodes| violated ({separator} >= {electrodes})"
            ),
        }
    }
}

/// Parameters that passed [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedParams(PhysParams);

impl ValidatedParams {
    pub fn inner(&self) -> &PhysParams {
        &self.0
    }

    pub fn into_inner(self) -> PhysParams {
        self.0
    }
}

impl std::ops::Deref for ValidatedParams {
    type Target = PhysParams;
    fn deref(&self) -> &PhysParams {
        &self.0
    }
}

/// Checks every hypothesis and reports all violations at once.
pub fn validate(
    params: &PhysParams,
    layout: &DomainLayout,
) -> Result<ValidatedParams, ParamsError> {
    let mut v = Vec::new();
    for msg in params.kappa.check() {
        v.push(HypothesisViolation::Conductivity(msg));
    }
    let coeffs = [
        ("sigma_a", params.sigma_anode),
        ("sigma_c", params.sigma_cathode),
        ("eps_e", params.eps_e.min()),
        ("D", params.diffusivity.min()),
    ];
    for (name, value) in coeffs {
        if !(value > 0.0) {
            v.push(HypothesisViolation::NonPositiveCoefficient { name, value });
        }
    }
    for (index, value) in [
        (1, params.alpha1),
        (2, params.alpha2),
        (3, params.alpha3),
        (4, params.alpha4),
    ] {
        if !(value > 0.0) {
            v.push(HypothesisViolation::NonPositiveAlpha { index, value });
        }
    }
    if !(params.k_bound >= 1.0) {
        v.push(HypothesisViolation::HBound { k: params.k_bound });
    }
    let min_c0 = params.c0.min();
    if !(min_c0 > 0.0) {
        v.push(HypothesisViolation::InitialNotPositive { min: min_c0 });
    }
    if params.require_positivity && !(params.d() > 0.5) {
        v.push(HypothesisViolation::ExponentTooSmall { d: params.d() });
    }
    if !check_separator_condition(layout) {
        v.push(HypothesisViolation::ThickSeparator {
            separator: layout.separator,
            electrodes: layout.anode + layout.cathode,
        });
    }
    if v.is_empty() {
        Ok(ValidatedParams(params.clone()))
    } else {
        Err(ParamsError::Hypotheses(v))
    }
}

/// Cell values of h on Ω′; separator entries hold 1 and are never read.
#[derive(Debug, Clone, PartialEq)]
pub struct HField {
    values: Vec<f64>,
}

impl HField {
    pub fn uniform(mesh: &Mesh, v: f64) -> Self {
        Self::per_region(mesh, v, v)
    }

    pub fn per_region(mesh: &Mesh, anode: f64, cathode: f64) -> Self {
        let values = mesh
            .regions()
            .iter()
            .map(|r| match r {
                Region::Anode => anode,
                Region::Cathode => cathode,
                Region::Separator => 1.0,
            })
            .collect();
        HField { values }
    }

    pub fn from_cells(mesh: &Mesh, values: Vec<f64>) -> Result<Self, ParamsError> {
        if values.len() != mesh.n_cells() {
            return Err(crate::error::GeometryError::LengthMismatch {
                expected: mesh.n_cells(),
                got: values.len(),
            }
            .into());
        }
        let values = values
            .into_iter()
            .zip(mesh.regions())
            .map(|(v, r)| if r.is_electrode() { v } else { 1.0 })
            .collect();
        Ok(HField { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, cell: usize) -> f64 {
        self.values[cell]
    }

    /// Checks 1/K ≤ h ≤ K on every electrode cell.
    pub fn check_bound(&self, mesh: &Mesh, k: f64) -> Result<(), ParamsError> {
        for cell in mesh.cells_in(crate::geometry::RegionSet::ELECTRODES) {
            let value = self.values[cell];
            if !(value >= 1.0 / k && value <= k) {
                return Err(ParamsError::HBoundViolated { cell, value, k });
            }
        }
        Ok(())
    }
}

/// h = exp(α₂(φ − U)) on the electrode cells, checked against 1/K ≤ h ≤ K.
pub fn h_from_potential(
    mesh: &Mesh,
    phi: &[f64],
    u: f64,
    alpha2: f64,
    k: f64,
) -> Result<HField, ParamsError> {
    if phi.len() != mesh.n_cells() {
        return Err(crate::error::GeometryError::LengthMismatch {
            expected: mesh.n_cells(),
            got: phi.len(),
        }
        .into());
    }
    let mut values = vec![1.0; mesh.n_cells()];
    for (cell, r) in mesh.regions().iter().enumerate() {
        if !r.is_electrode() {
            continue;
        }
        if !phi[cell].is_finite() {
            return Err(ParamsError::NonFinitePotential(cell));
        }
        values[cell] = (alpha2 * (phi[cell] - u)).exp();
    }
    let h = HField { values };
    h.check_bound(mesh, k)?;
    Ok(h)
}

/// Outward current density I = −σ ∂φ/∂n on the faces bounding Ω′.
///
/// `external` follows [`Mesh::external_faces`]; `interface` follows
/// [`Mesh::electrode_interface_faces`] and is zero for the physical problem.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCurrent {
    pub external: Vec<f64>,
    pub interface: Vec<f64>,
}

impl BoundaryCurrent {
    pub fn zero(mesh: &Mesh) -> Self {
        BoundaryCurrent {
            external: vec![0.0; mesh.external_faces().count()],
            interface: vec![0.0; mesh.electrode_interface_faces().count()],
        }
    }

    /// Uniform outward current `i_a` on Γ_a and `i_c` on Γ_c.
    pub fn uniform(mesh: &Mesh, i_a: f64, i_c: f64) -> Self {
        let external = mesh
            .external_faces()
            .map(|f| match mesh.region(f.cell) {
                Region::Anode => i_a,
                _ => i_c,
            })
            .collect();
        BoundaryCurrent {
            external,
            ..Self::zero(mesh)
        }
    }

    /// Amplitude × cos(πy/W) on each collector; zero net current per collector.
    pub fn cosine(mesh: &Mesh, amp_a: f64, amp_c: f64) -> Self {
        let w = mesh.layout().width();
        let external = mesh
            .external_faces()
            .map(|f| {
                let y = mesh.centers()[f.cell][1];
                let amp = if mesh.region(f.cell) == Region::Anode {
                    amp_a
                } else {
                    amp_c
                };
                amp * (std::f64::consts::PI * y / w).cos()
            })
            .collect();
        BoundaryCurrent {
            external,
            ..Self::zero(mesh)
        }
    }

    /// ∫ I dS over Γ_a ∪ Γ_c.
    pub fn external_total(&self, mesh: &Mesh) -> f64 {
        mesh.external_faces()
            .zip(&self.external)
            .map(|(f, i)| f.area * i)
            .sum()
    }

    /// |∫ I dS| ≤ 1e−12 × ∫ |I| dS.
    pub fn is_compatible(&self, mesh: &Mesh) -> bool {
        let abs: f64 = mesh
            .external_faces()
            .zip(&self.external)
            .map(|(f, i)| f.area * i.abs())
            .sum();
        self.external_total(mesh).abs() <= 1e-12 * abs
    }
}
