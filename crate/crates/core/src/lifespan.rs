//! Lifespan bound: the amplitude inequality (s₀, ε₀), the De Giorgi recursion,
//! the growth exponent γ, the time gauge g(T), and T_max from ε₀ = c·g²(T_max).
//!
//! Quantities that can leave double range (ε₀ for large m, T_max for small
//! ε₀) are carried as logarithms internally.

use crate::error::LifespanError;
use crate::parabolic::Trajectory;

fn require(cond: bool, msg: impl FnOnce() -> String) -> Result<(), LifespanError> {
    if cond {
        Ok(())
    } else {
        Err(LifespanError::Domain(msg()))
    }
}

/// c^{−1/α}·b^{−1/α²}.
pub fn degiorgi_threshold(c: f64, b: f64, alpha: f64) -> Result<f64, LifespanError> {
    require(b > 1.0, || format!("b = {b} must exceed 1"))?;
    require(c > 0.0 && alpha > 0.0, || {
        format!("c = {c} and alpha = {alpha} must be positive")
    })?;
    Ok(c.powf(-1.0 / alpha) * b.powf(-1.0 / (alpha * alpha)))
}

/// Equality orbit y_{n+1} = c·bⁿ·y_n^{1+α}; returns y_0..=y_{n_steps}.
pub fn degiorgi_iterate(
    y0: f64,
    c: f64,
    b: f64,
    alpha: f64,
    n_steps: usize,
) -> Result<Vec<f64>, LifespanError> {
    require(y0 > 0.0 && c > 0.0 && alpha > 0.0, || {
        "y0, c and alpha must be positive".into()
    })?;
    require(b > 1.0, || format!("b = {b} must exceed 1"))?;
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(y0);
    let mut y = y0;
    let mut bn = 1.0;
    for n in 0..n_steps {
        y = c * bn * y.powf(1.0 + alpha);
        if !y.is_finite() {
            return Err(LifespanError::Diverged { step: n + 1 });
        }
        out.push(y);
        bn *= b;
    }
    Ok(out)
}

/// Left side of 1/(m(1+δ)s^δ) − s + m = 0.
pub fn s0_equation(s: f64, m: f64, delta: f64) -> f64 {
    1.0 / (m * (1.0 + delta) * s.powf(delta)) - s + m
}

/// The unique positive root of 1/(m(1+δ)s^δ) − s + m = 0; it lies in
/// (m, m + 1/((1+δ)m^{1+δ})).
pub fn solve_s0(m: f64, delta: f64) -> Result<f64, LifespanError> {
    require(m > 0.0 && delta > 0.0, || {
        format!("m = {m} and delta = {delta} must be positive")
    })?;
    let f = |s: f64| s0_equation(s, m, delta);
    let df = |s: f64| -delta / (m * (1.0 + delta) * s.powf(1.0 + delta)) - 1.0;
    let mut lo = m;
    let mut hi = m + 1.0 / ((1.0 + delta) * m.powf(1.0 + delta));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut s = 0.5 * (lo + hi);
    for _ in 0..3 {
        let next = s - f(s) / df(s);
        if next > m && f(next).abs() < f(s).abs() {
            s = next;
        }
    }
    Ok(s)
}

/// ln ε₀ = −ln(m(1+δ)) − m·s₀^{1+δ} − δ·ln s₀.
pub fn ln_epsilon0(m: f64, delta: f64, s0: f64) -> f64 {
    -(m * (1.0 + delta)).ln() - m * s0.powf(1.0 + delta) - delta * s0.ln()
}

/// ε₀ = 1/(m(1+δ)·e^{m s₀^{1+δ}}·s₀^δ); may underflow to 0 for large m.
pub fn epsilon0(m: f64, delta: f64, s0: f64) -> f64 {
    ln_epsilon0(m, delta, s0).exp()
}

/// f_ε(s) = ε·e^{m s^{1+δ}} − s + m, with ε given by its logarithm.
pub fn tangency_f(ln_eps: f64, s: f64, m: f64, delta: f64) -> f64 {
    (ln_eps + m * s.powf(1.0 + delta)).exp() - s + m
}

/// f′_ε(s) = ε·m(1+δ)s^δ·e^{m s^{1+δ}} − 1.
pub fn tangency_df(ln_eps: f64, s: f64, m: f64, delta: f64) -> f64 {
    (ln_eps + m * s.powf(1.0 + delta) + (m * (1.0 + delta)).ln() + delta * s.ln()).exp() - 1.0
}

/// γ = qNα₀/(2q−N) + (7d+3+2α₀)/4, evaluated as a single quotient.
pub fn gamma_exponent(q: f64, n: f64, d: f64, alpha0: f64) -> Result<f64, LifespanError> {
    let w = 2.0 * q - n;
    require(w > 0.0, || format!("2q - N = {w} must be positive"))?;
    require(alpha0 >= 0.0 && d > 0.0 && n > 0.0, || {
        "N, d must be positive and alpha0 nonnegative".into()
    })?;
    Ok((4.0 * q * n * alpha0 + (7.0 * d + 3.0 + 2.0 * alpha0) * w) / (4.0 * w))
}

/// Exponents of the two branches of g: ((1+T)-power, T-power) each.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaugeExponents {
    pub first: (f64, f64),
    pub second: (f64, f64),
}

pub fn gauge_exponents(q: f64, n: f64, d: f64) -> Result<GaugeExponents, LifespanError> {
    require(n > 0.0, || format!("N = {n} must be positive"))?;
    require(q > 1.0 + n / 2.0, || format!("q = {q} must exceed 1 + N/2"))?;
    require(d > 0.5, || format!("d = {d} must exceed 1/2"))?;
    let w = 2.0 * d - 1.0;
    Ok(GaugeExponents {
        first: (
            2.0 * n / (n + 2.0),
            2.0 * (2.0 * q - 2.0 - n) / (q * (n + 2.0)),
        ),
        second: (2.0 * n / ((n + 2.0) * w), 2.0 / (q * w)),
    })
}

/// ln g(T) for T > 0.
pub fn ln_g(t: f64, e: &GaugeExponents) -> f64 {
    let (l1, lt) = (t.ln_1p(), t.ln());
    (e.first.0 * l1 + e.first.1 * lt).max(e.second.0 * l1 + e.second.1 * lt)
}

pub fn g_of_t(t: f64, q: f64, n: f64, d: f64) -> Result<f64, LifespanError> {
    require(t >= 0.0, || format!("T = {t} must be nonnegative"))?;
    let e = gauge_exponents(q, n, d)?;
    Ok(if t == 0.0 { 0.0 } else { ln_g(t, &e).exp() })
}

/// Solves ln ε₀ = ln c + 2 ln g(T) for T, in the variable ln T.
pub fn solve_tmax_ln(ln_eps0: f64, c: f64, q: f64, n: f64, d: f64) -> Result<f64, LifespanError> {
    require(c > 0.0, || format!("c = {c} must be positive"))?;
    require(ln_eps0.is_finite(), || "ln eps0 must be finite".into())?;
    let e = gauge_exponents(q, n, d)?;
    let target = 0.5 * (ln_eps0 - c.ln());
    let phi = |u: f64| {
        let l1 = if u > 40.0 {
            u + (-u).exp().ln_1p()
        } else {
            u.exp().ln_1p()
        };
        (e.first.0 * l1 + e.first.1 * u).max(e.second.0 * l1 + e.second.1 * u) - target
    };
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    while phi(lo) > 0.0 {
        lo *= 2.0;
        if lo < -1e6 {
            return Err(LifespanError::Underflow(lo));
        }
    }
    while phi(hi) < 0.0 {
        hi *= 2.0;
        require(hi < 1e6, || "T_max overflows".into())?;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if phi(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let u = if phi(lo).abs() <= phi(hi).abs() {
        lo
    } else {
        hi
    };
    let t = u.exp();
    if t == 0.0 || !t.is_normal() {
        return Err(LifespanError::Underflow(u));
    }
    Ok(t)
}

pub fn solve_tmax(eps0: f64, c: f64, q: f64, n: f64, d: f64) -> Result<f64, LifespanError> {
    require(eps0 > 0.0, || format!("eps0 = {eps0} must be positive"))?;
    solve_tmax_ln(eps0.ln(), c, q, n, d)
}

/// Inputs of the lifespan computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AprioriParams {
    pub n: u32,
    pub q: f64,
    pub d: f64,
    pub alpha0: f64,
    /// Calibration constant standing in for the unknown generic constants.
    pub c: f64,
    /// Additive constant of the amplitude inequality; defaults to `c`.
    pub m: Option<f64>,
}

impl AprioriParams {
    pub fn new(n: u32, q: f64, d: f64, alpha0: f64, c: f64) -> Self {
        AprioriParams {
            n,
            q,
            d,
            alpha0,
            c,
            m: None,
        }
    }

    pub fn validate(&self) -> Result<(), LifespanError> {
        let n = self.n as f64;
        require(self.n >= 2, || format!("N = {} must be at least 2", self.n))?;
        require(self.q > 1.0 + n / 2.0, || {
            format!("q = {} must exceed 1 + N/2", self.q)
        })?;
        require(self.d > 0.5, || format!("d = {} must exceed 1/2", self.d))?;
        require(self.alpha0 > 0.0, || {
            format!("alpha0 = {} must be positive", self.alpha0)
        })?;
        require(self.c > 0.0, || format!("c = {} must be positive", self.c))?;
        if let Some(m) = self.m {
            require(m > 0.0, || format!("m = {m} must be positive"))?;
        }
        Ok(())
    }

    pub fn m(&self) -> f64 {
        self.m.unwrap_or(self.c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifespanReport {
    pub gamma: f64,
    pub delta: f64,
    pub m: f64,
    pub c: f64,
    pub s0: f64,
    pub eps0: f64,
    pub ln_eps0: f64,
    pub tmax: f64,
    /// |1/(m(1+δ)s₀^δ) − s₀ + m|.
    pub s0_residual: f64,
    /// |f_{ε₀}(s₀)|.
    pub tangency_residual: f64,
    /// |f′_{ε₀}(s₀)|.
    pub stationarity_residual: f64,
    /// |c·g²(T_max)/ε₀ − 1|.
    pub tmax_residual: f64,
}

impl LifespanReport {
    pub fn max_residual(&self) -> f64 {
        self.s0_residual
            .max(self.tangency_residual)
            .max(self.stationarity_residual)
            .max(self.tmax_residual)
    }

    /// key=value lines with 17 significant digits.
    pub fn to_key_value(&self) -> String {
        let rows = [
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("m", self.m),
            ("c", self.c),
            ("s0", self.s0),
            ("eps0", self.eps0),
            ("ln_eps0", self.ln_eps0),
            ("Tmax", self.tmax),
            ("s0_residual", self.s0_residual),
            ("tangency_residual", self.tangency_residual),
            ("stationarity_residual", self.stationarity_residual),
            ("Tmax_residual", self.tmax_residual),
        ];
        rows.iter()
            .map(|(k, v)| format!("{k}={v:.16e}\n"))
            .collect()
    }
}

/// s₀, ε₀ and T_max for a given exponent δ and constant m.
pub fn lifespan_from_gap(
    m: f64,
    delta: f64,
    c: f64,
    q: f64,
    n: f64,
    d: f64,
) -> Result<LifespanReport, LifespanError> {
    let s0 = solve_s0(m, delta)?;
    let ln_eps0 = ln_epsilon0(m, delta, s0);
    let tmax = solve_tmax_ln(ln_eps0, c, q, n, d)?;
    let e = gauge_exponents(q, n, d)?;
    let tmax_residual = ((c.ln() + 2.0 * ln_g(tmax, &e) - ln_eps0).exp() - 1.0).abs();
    Ok(LifespanReport {
        gamma: delta + 1.0,
        delta,
        m,
        c,
        s0,
        eps0: ln_eps0.exp(),
        ln_eps0,
        tmax,
        s0_residual: s0_equation(s0, m, delta).abs(),
        tangency_residual: tangency_f(ln_eps0, s0, m, delta).abs(),
        stationarity_residual: tangency_df(ln_eps0, s0, m, delta).abs(),
        tmax_residual,
    })
}

/// γ from the exponents, δ = γ − 1, then s₀, ε₀ and T_max with m and c.
pub fn lifespan_pipeline(p: &AprioriParams) -> Result<LifespanReport, LifespanError> {
    p.validate()?;
    let n = p.n as f64;
    let gamma = gamma_exponent(p.q, n, p.d, p.alpha0)?;
    let mut report = lifespan_from_gap(p.m(), gamma - 1.0, p.c, p.q, n, p.d)?;
    report.gamma = gamma;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeCertificate {
    /// True where a(t) ≥ s₀.
    pub flagged: Vec<bool>,
    pub first_violation: Option<f64>,
    pub max_amplitude: f64,
}

impl AmplitudeCertificate {
    pub fn all_clear(&self) -> bool {
        self.first_violation.is_none()
    }
}

pub fn amplitude_certificate(
    amplitude: &[(f64, f64)],
    report: &LifespanReport,
) -> AmplitudeCertificate {
    let flagged: Vec<bool> = amplitude.iter().map(|&(_, a)| !(a < report.s0)).collect();
    let first_violation = amplitude
        .iter()
        .zip(&flagged)
        .find(|(_, f)| **f)
        .map(|((t, _), _)| *t);
    let max_amplitude = amplitude
        .iter()
        .fold(f64::NEG_INFINITY, |m, &(_, a)| m.max(a));
    AmplitudeCertificate {
        flagged,
        first_violation,
        max_amplitude,
    }
}

/// c(1+T)^{2N/(N+2)}T^{2(2q−2−N)/(q(N+2))}·norm² + 4‖C₀‖∞ + 2, where `norm`
/// is the space-time L^q norm of e^{α₂(φs−φe)} over the electrodes up to T.
pub fn upper_bound_estimate(
    t: f64,
    q: f64,
    n: f64,
    c: f64,
    norm: f64,
    c0_max: f64,
) -> Result<f64, LifespanError> {
    require(t >= 0.0 && norm >= 0.0 && c > 0.0, || {
        "T and norm must be nonnegative, c positive".into()
    })?;
    require(q > 1.0 + n / 2.0, || format!("q = {q} must exceed 1 + N/2"))?;
    let e1 = 2.0 * n / (n + 2.0);
    let e2 = 2.0 * (2.0 * q - 2.0 - n) / (q * (n + 2.0));
    Ok(c * (1.0 + t).powf(e1) * t.powf(e2) * norm * norm + 4.0 * c0_max + 2.0)
}

/// 1/min C₀ + c(1+T)^{2N/((N+2)(2d−1))}·norm^{2/(2d−1)}, an upper estimate
/// of 1/C; `norm` is the space-time L^q norm of e^{−α₂(φs−φe)} up to T.
pub fn lower_bound_estimate(
    t: f64,
    q: f64,
    n: f64,
    d: f64,
    c: f64,
    norm: f64,
    c0_min: f64,
) -> Result<f64, LifespanError> {
    require(t >= 0.0 && norm >= 0.0 && c > 0.0, || {
        "T and norm must be nonnegative, c positive".into()
    })?;
    require(q > 1.0 + n / 2.0, || format!("q = {q} must exceed 1 + N/2"))?;
    require(d > 0.5, || format!("d = {d} must exceed 1/2"))?;
    require(c0_min > 0.0, || {
        format!("min C0 = {c0_min} must be positive")
    })?;
    let w = 2.0 * d - 1.0;
    Ok(1.0 / c0_min + c * (1.0 + t).powf(2.0 * n / ((n + 2.0) * w)) * norm.powf(2.0 / w))
}

/// (∫₀ᵀ∫_{Ω′} e^{±qα₂(φs−φe)})^{1/q} over the recorded states, using the
/// left-endpoint rule in time. `sign` is +1 or −1.
pub fn exp_jump_norm(traj: &Trajectory, q: f64, sign: f64) -> f64 {
    let mesh = &traj.context.mesh;
    let a2 = traj.context.kinetics.alpha2;
    let mut total = 0.0;
    for w in traj.states.windows(2) {
        let dt = w[1].time - w[0].time;
        let s = &w[0];
        let space: f64 = mesh
            .cells_in(crate::geometry::RegionSet::ELECTRODES)
            .map(|i| {
                mesh.volumes()[i]
                    * (sign * q * a2 * (s.potentials.phi_s[i] - s.potentials.phi_e[i])).exp()
            })
            .sum();
        total += dt * space;
    }
    total.powf(1.0 / q)
}

/// Pipeline results for each calibration constant.
pub fn c_sweep(
    base: &AprioriParams,
    values: &[f64],
) -> Vec<(f64, Result<LifespanReport, LifespanError>)> {
    values
        .iter()
        .map(|&c| (c, lifespan_pipeline(&AprioriParams { c, ..*base })))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn threshold_examples() {
        assert_eq!(degiorgi_threshold(1.0, 2.0, 1.0).unwrap(), 0.5);
        assert!((degiorgi_threshold(4.0, 4.0, 0.5).unwrap() - 1.0 / 4096.0).abs() < 1e-18);
        assert!((degiorgi_threshold(1.0, 1.0 + 1e-9, 1.0).unwrap() - 1.0).abs() < 1e-8);
        assert!(degiorgi_threshold(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn orbit_examples() {
        let orbit = degiorgi_iterate(0.5, 1.0, 2.0, 1.0, 60).unwrap();
        for (n, y) in orbit.iter().enumerate() {
            assert_eq!(*y, 0.5f64.powi(n as i32 + 1));
        }
        assert!(orbit[60] < 0.5 * 1e-6);
        assert!(matches!(
            degiorgi_iterate(10.0, 1.0, 2.0, 1.0, 60),
            Err(LifespanError::Diverged { .. })
        ));
    }

    #[test]
    fn s0_examples() {
        assert!((solve_s0(1.0, 1.0).unwrap() - (1.0 + 3f64.sqrt()) / 2.0).abs() < 1e-14);
        assert!((solve_s0(2.0, 1.0).unwrap() - (8.0 + 80f64.sqrt()) / 8.0).abs() < 1e-14);
        assert!(solve_s0(0.0, 1.0).is_err());
    }

    #[test]
    fn eps0_example_and_shape() {
        let s0 = solve_s0(1.0, 1.0).unwrap();
        let e = epsilon0(1.0, 1.0, s0);
        assert!((e - 0.0566381).abs() < 1e-6);
        let ln_e = e.ln();
        assert!(tangency_f(ln_e, s0, 1.0, 1.0).abs() < 1e-12);
        assert!(tangency_f(ln_e, s0 / 2.0, 1.0, 1.0) > 0.0);
        assert!(tangency_f(ln_e, 2.0 * s0, 1.0, 1.0) > 0.0);
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma_exponent(4.0, 3.0, 1.0, 1.0).unwrap(), 5.4);
        assert!((gamma_exponent(4.0, 3.0, 1.0, 0.0).unwrap() - 2.5).abs() < 1e-15);
        assert!(gamma_exponent(1.0, 3.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn gauge_examples() {
        assert_eq!(g_of_t(0.0, 4.0, 3.0, 1.0).unwrap(), 0.0);
        let e = gauge_exponents(4.0, 3.0, 1.0).unwrap();
        let b1 = 2f64.powf(e.first.0);
        let b2 = 2f64.powf(e.second.0);
        assert!((b1 - b2).abs() < 1e-15);
        assert!((g_of_t(1.0, 4.0, 3.0, 1.0).unwrap() - 2f64.powf(1.2)).abs() < 1e-14);
        assert!(g_of_t(1.0, 2.0, 3.0, 1.0).is_err());
        assert!(g_of_t(1.0, 4.0, 3.0, 0.5).is_err());
    }

    #[test]
    fn unit_exponent_gap() {
        let r = lifespan_from_gap(1.0, 1.0, 1.0, 4.0, 3.0, 1.0).unwrap();
        assert!((r.eps0 - 0.0566381).abs() < 1e-6);
        assert!((g_of_t(r.tmax, 4.0, 3.0, 1.0).unwrap() - 0.0566381f64.sqrt()).abs() < 1e-5);
        assert!((r.tmax - 8.1e-3).abs() < 0.05 * 8.1e-3);
    }

    #[test]
    fn pipeline_defaults() {
        let r = lifespan_pipeline(&AprioriParams::new(3, 4.0, 1.0, 1.0, 1.0)).unwrap();
        assert_eq!(r.gamma, 5.4);
        assert!((r.delta - 4.4).abs() < 1e-15);
        assert!(r.s0 > r.m);
        assert!(r.max_residual() <= 1e-10, "{r:?}");
        assert!(r.tmax > 0.0);
        let doubled = lifespan_pipeline(&AprioriParams::new(3, 4.0, 1.0, 2.0, 1.0)).unwrap();
        assert!(doubled.gamma > r.gamma && doubled.tmax < r.tmax);
        let kv = r.to_key_value();
        for key in ["gamma=", "s0=", "eps0=", "Tmax=", "s0_residual="] {
            assert!(kv.lines().any(|l| l.starts_with(key)));
        }
    }

    #[test]
    fn sweep_is_monotone_in_c() {
        assert!(matches!(
            lifespan_pipeline(&AprioriParams::new(3, 4.0, 1.0, 1.0, 4.0)),
            Err(LifespanError::Underflow(_))
        ));
        let base = AprioriParams::new(3, 4.0, 1.0, 1.0, 1.0);
        let t: Vec<f64> = c_sweep(&base, &[0.5, 1.0, 1.5, 2.0])
            .into_iter()
            .map(|(_, r)| r.unwrap().tmax)
            .collect();
        assert!(t.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn huge_calibration_underflows_cleanly() {
        // ε₀ is astronomically small; the report must still be finite or a named error
        match lifespan_pipeline(&AprioriParams::new(3, 4.0, 1.0, 1.0, 50.0)) {
            Ok(r) => assert!(r.tmax > 0.0 && r.ln_eps0.is_finite()),
            Err(LifespanError::Underflow(_)) => {}
            Err(e) => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn certificate_flags_crossing() {
        let r = lifespan_from_gap(1.0, 1.0, 1.0, 4.0, 3.0, 1.0).unwrap();
        let ones: Vec<(f64, f64)> = (0..5).map(|k| (k as f64, 1.0)).collect();
        assert!(amplitude_certificate(&ones, &r).all_clear());
        let crossing: Vec<(f64, f64)> = (0..5).map(|k| (k as f64, 1.0 + 0.2 * k as f64)).collect();
        let cert = amplitude_certificate(&crossing, &r);
        assert_eq!(cert.flagged, vec![false, false, true, true, true]);
        assert_eq!(cert.first_violation, Some(2.0));
    }

    #[test]
    fn bound_estimates() {
        assert!(
            (upper_bound_estimate(1.0, 4.0, 3.0, 1.0, 1.0, 1.0).unwrap() - (2f64.powf(1.2) + 6.0))
                .abs()
                < 1e-14
        );
        assert!(
            (upper_bound_estimate(1e-300, 4.0, 3.0, 1.0, 1.0, 1.0).unwrap() - 6.0).abs() < 1e-12
        );
        // the space-time norm scales like T^{1/q} for bounded integrands
        let t = 1e-40f64;
        let v = lower_bound_estimate(t, 4.0, 3.0, 1.0, 1.0, t.powf(0.25), 0.5).unwrap();
        assert!((v - 2.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn s0_exceeds_m_and_is_tangent(m in 0.1f64..10.0, delta in 0.1f64..5.0) {
            let s0 = solve_s0(m, delta).unwrap();
            prop_assert!(s0 > m);
            prop_assert!(s0_equation(s0, m, delta).abs() <= 1e-12 * (1.0 + m));
            let ln_e = ln_epsilon0(m, delta, s0);
            prop_assert!(tangency_f(ln_e, s0, m, delta).abs() <= 1e-8);
            prop_assert!(tangency_df(ln_e, s0, m, delta).abs() <= 1e-8);
        }

        #[test]
        fn stationarity_tight_for_moderate_inputs(m in 0.1f64..3.0, delta in 0.1f64..3.0) {
            let s0 = solve_s0(m, delta).unwrap();
            prop_assert!(tangency_df(ln_epsilon0(m, delta, s0), s0, m, delta).abs() <= 1e-10);
        }

        #[test]
        fn gamma_exceeds_d_plus_half(q in 1.6f64..10.0, n in 2u32..4, d in 0.51f64..5.0, a0 in 0.0f64..5.0) {
            let n = n as f64;
            prop_assume!(2.0 * q > n);
            let g = gamma_exponent(q, n, d, a0).unwrap();
            prop_assert!(g > d + 0.5 && d + 0.5 > 1.0);
        }

        #[test]
        fn gauge_increasing(t1 in 1e-6f64..50.0, f in 1.0001f64..3.0, q in 3.1f64..9.0, d in 0.6f64..4.0) {
            let (a, b) = (g_of_t(t1, q, 3.0, d).unwrap(), g_of_t(t1 * f, q, 3.0, d).unwrap());
            prop_assert!(b > a);
        }

        #[test]
        fn tmax_inverts_gauge(lt in -8.0f64..3.0, c in 0.1f64..10.0, q in 3.1f64..9.0, n in 2u32..4, d in 0.6f64..4.0) {
            let n = n as f64;
            prop_assume!(q > 1.0 + n / 2.0);
            let t = 10f64.powf(lt);
            let g = g_of_t(t, q, n, d).unwrap();
            let back = solve_tmax(c * g * g, c, q, n, d).unwrap();
            prop_assert!((back - t).abs() <= 1e-10 * t);
        }

        #[test]
        fn below_threshold_orbits_vanish(c in 0.5f64..4.0, b in 1.5f64..4.0, alpha in 0.5f64..2.0, u in 0.01f64..0.99) {
            let y0 = u * degiorgi_threshold(c, b, alpha).unwrap();
            let orbit = degiorgi_iterate(y0, c, b, alpha, 200).unwrap();
            prop_assert!(orbit.iter().skip(1).any(|y| *y < 1e-12));
            prop_assert!(orbit[200] < 1e-12);
        }
    }
}
