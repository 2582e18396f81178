//! Hyperbolic-sine interface kinetics after the change of variables
//! h = exp(α₂(φ − U)), together with the τ-cutoffs used by the
//! regularized problem.
//!
//! `G(y₁, y₂, y₃) = y₁ y₂^{-d} e^{α₂y₃} − y₁^{-1} y₂^{d} e^{-α₂y₃}` is increasing
//! in y₃ (slope ≥ 2α₂) and decreasing in y₂. The regularized variant clamps
//! the concentration argument with θ_τ(s) = min(max(s, 0), 1/τ).

use log::warn;

use crate::error::KineticsError;
use crate::geometry::Region;

/// Exponents α₂·y are clamped to this magnitude before `exp`.
pub const EXPONENT_LIMIT: f64 = 700.0;

/// exp(x) with |x| clamped to [`EXPONENT_LIMIT`]. The flag reports saturation.
pub fn saturating_exp(x: f64) -> (f64, bool) {
    if x > EXPONENT_LIMIT {
        (EXPONENT_LIMIT.exp(), true)
    } else if x < -EXPONENT_LIMIT {
        ((-EXPONENT_LIMIT).exp(), true)
    } else {
        (x.exp(), false)
    }
}

fn warn_exp(x: f64) -> f64 {
    let (v, saturated) = saturating_exp(x);
    if saturated {
        warn!("exponent saturation: {x:e} clamped to +/-{EXPONENT_LIMIT}");
    }
    v
}

fn positive(name: &'static str, value: f64) -> Result<(), KineticsError> {
    if value > 0.0 {
        Ok(())
    } else {
        Err(KineticsError::NonPositiveArgument { name, value })
    }
}

fn check_tau(tau: f64) -> Result<(), KineticsError> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(KineticsError::TauOutOfRange(tau))
    }
}

/// The two exponential branches (p, q) of G, so that G = p − q and ∂G/∂y₃ = α₂(p + q).
fn branches(y1: f64, y2: f64, y3: f64, d: f64, alpha2: f64) -> (f64, f64) {
    let e = warn_exp(alpha2 * y3);
    let e_inv = warn_exp(-alpha2 * y3);
    let y2d = y2.powf(d);
    (y1 * e / y2d, y2d * e_inv / y1)
}

pub fn g(y1: f64, y2: f64, y3: f64, d: f64, alpha2: f64) -> Result<f64, KineticsError> {
    positive("y1", y1)?;
    positive("y2", y2)?;
    let (p, q) = branches(y1, y2, y3, d, alpha2);
    Ok(p - q)
}

pub fn dg_dy3(y1: f64, y2: f64, y3: f64, d: f64, alpha2: f64) -> Result<f64, KineticsError> {
    positive("y1", y1)?;
    positive("y2", y2)?;
    let (p, q) = branches(y1, y2, y3, d, alpha2);
    Ok(alpha2 * (p + q))
}

pub fn dg_dy2(y1: f64, y2: f64, y3: f64, d: f64, alpha2: f64) -> Result<f64, KineticsError> {
    positive("y1", y1)?;
    positive("y2", y2)?;
    let (p, q) = branches(y1, y2, y3, d, alpha2);
    Ok(-d / y2 * (p + q))
}

/// Root of G in its third argument: y₃* = (d ln y₂ − ln y₁)/α₂.
pub fn g_root(y1: f64, y2: f64, d: f64, alpha2: f64) -> f64 {
    (d * y2.ln() - y1.ln()) / alpha2
}

/// Cutoff θ_τ(s) = min(max(s, 0), 1/τ).
pub fn theta_tau(s: f64, tau: f64) -> Result<f64, KineticsError> {
    check_tau(tau)?;
    Ok(theta_unchecked(s, tau))
}

#[inline]
fn theta_unchecked(s: f64, tau: f64) -> f64 {
    s.max(0.0).min(1.0 / tau)
}

pub fn g_tau(
    y1: f64,
    y2: f64,
    y3: f64,
    d: f64,
    alpha2: f64,
    tau: f64,
) -> Result<f64, KineticsError> {
    positive("y1", y1)?;
    check_tau(tau)?;
    if y2 < 0.0 {
        return Err(KineticsError::NonPositiveArgument {
            name: "y2",
            value: y2,
        });
    }
    let th = theta_unchecked(y2, tau);
    let e = warn_exp(alpha2 * y3);
    let e_inv = warn_exp(-alpha2 * y3);
    Ok(y1 * e / (th + tau).powf(d) - th.powf(d) * e_inv / y1)
}

pub fn h_tau(
    y1: f64,
    y2: f64,
    y3: f64,
    d: f64,
    alpha2: f64,
    tau: f64,
) -> Result<f64, KineticsError> {
    let gt = g_tau(y1, y2, y3, d, alpha2, tau)?;
    Ok(theta_unchecked(y2, tau).sqrt() * gt)
}

/// Physical reaction rate S_e = ½ α₄ √C G(h, C, φ_s − φ_e) in the electrodes, 0 in the separator.
#[allow(clippy::too_many_arguments)]
pub fn source_se(
    c: f64,
    phi_s: f64,
    phi_e: f64,
    h: f64,
    region: Region,
    d: f64,
    alpha2: f64,
    alpha4: f64,
) -> Result<f64, KineticsError> {
    if !region.is_electrode() {
        return Ok(0.0);
    }
    if !(c > 0.0) {
        return Err(KineticsError::NonPositiveArgument {
            name: "C",
            value: c,
        });
    }
    Ok(0.5 * alpha4 * c.sqrt() * g(h, c, phi_s - phi_e, d, alpha2)?)
}

/// Which reaction term the solvers use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KineticsMode {
    /// H_τ(h, C⁺, y) with the θ_τ cutoffs.
    Regularized,
    /// √C · G(h, C, y) without cutoffs; requires C > 0.
    Exact,
}

/// Rate value with partial derivatives in the potential jump y and in C.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEval {
    pub value: f64,
    pub d_dy: f64,
    pub d_dc: f64,
}

/// Solver-facing kinetics: evaluates the reaction rate R(h, C, y), with
/// S = ½α₄R in the potential equations and ½α₃α₄R in the concentration equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinetics {
    pub d: f64,
    pub alpha2: f64,
    pub tau: f64,
    pub mode: KineticsMode,
}

impl Kinetics {
    pub fn new(d: f64, alpha2: f64, tau: f64, mode: KineticsMode) -> Result<Self, KineticsError> {
        positive("d", d)?;
        positive("alpha2", alpha2)?;
        check_tau(tau)?;
        Ok(Kinetics {
            d,
            alpha2,
            tau,
            mode,
        })
    }

    fn exps(&self, y: f64) -> Result<(f64, f64), KineticsError> {
        let x = self.alpha2 * y;
        let (e, sat) = saturating_exp(x);
        if sat {
            warn!("exponent saturation in kinetics: {x:e}");
            return Err(KineticsError::ExponentSaturation {
                exponent: x,
                limit: EXPONENT_LIMIT,
            });
        }
        Ok((e, 1.0 / e))
    }

    pub fn rate(&self, h: f64, c: f64, y: f64) -> Result<f64, KineticsError> {
        Ok(self.eval(h, c, y)?.value)
    }

    pub fn eval(&self, h: f64, c: f64, y: f64) -> Result<RateEval, KineticsError> {
        let (e, e_inv) = self.exps(y)?;
        let d = self.d;
        match self.mode {
            KineticsMode::Regularized => {
                let th = theta_unchecked(c, self.tau);
                if th <= 0.0 {
                    return Ok(RateEval {
                        value: 0.0,
                        d_dy: 0.0,
                        d_dc: 0.0,
                    });
                }
                let sq = th.sqrt();
                let p = h * e / (th + self.tau).powf(d);
                let q = th.powf(d) * e_inv / h;
                let active = c > 0.0 && c < 1.0 / self.tau;
                let d_dc = if active {
                    (p - q) / (2.0 * sq) - d * sq * (p / (th + self.tau) + q / th)
                } else {
                    0.0
                };
                Ok(RateEval {
                    value: sq * (p - q),
                    d_dy: sq * self.alpha2 * (p + q),
                    d_dc,
                })
            }
            KineticsMode::Exact => {
                if !(c > 0.0) {
                    return Err(KineticsError::NonPositiveArgument {
                        name: "C",
                        value: c,
                    });
                }
                let sq = c.sqrt();
                let cd = c.powf(d);
                let p = h * e / cd;
                let q = cd * e_inv / h;
                Ok(RateEval {
                    value: sq * (p - q),
                    d_dy: sq * self.alpha2 * (p + q),
                    d_dc: (p - q) / (2.0 * sq) - d * (p + q) / sq,
                })
            }
        }
    }
}
