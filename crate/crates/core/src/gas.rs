//! Nondimensional perfect gas: `ε(ρ, s) = ρ^γ exp((γ−1) s/ρ) / (γ−1)`.
//!
//! With this energy `T = ∂ε/∂s = ρ^{γ−1} exp((γ−1) s/ρ)` and the pressure
//! `p = ρ ∂_ρε + s ∂_sε − ε` reduces to `ρT`.
//!
//! The difference quotients `δ₁`, `δ₂` are evaluated through `expm1`/`ln1p`
//! so that they stay accurate as the two arguments merge, and are written
//! against [`Real`] so that the stepper can differentiate them exactly.

use std::sync::Arc;

use crate::error::{ensure_positive, Error, Location, Result};
use crate::scalar::Real;
use crate::spaces::{DgFunction, DgSpace, FeSpace};

/// Relative gap below which generic difference quotients switch to the
/// analytic midpoint derivative.
pub const QUOTIENT_SWITCH: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GasParams {
    pub gamma: f64,
    pub re: f64,
    pub pr: f64,
    pub fr: f64,
    /// Boundary temperature difference.
    pub z: f64,
}

impl GasParams {
    pub fn new(gamma: f64, re: f64, pr: f64, fr: f64, z: f64) -> Result<Self> {
        if !(gamma > 1.0 && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma must exceed 1, got {gamma}")));
        }
        for (name, v) in [("Re", re), ("Pr", pr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        // Fr = ∞ switches gravity off
        if !(fr > 0.0) {
            return Err(Error::InvalidArgument(format!("Fr must be positive, got {fr}")));
        }
        Ok(GasParams { gamma, re, pr, fr, z })
    }

    /// Gravitational potential `φ = z / Fr`.
    pub fn phi(&self, x: [f64; 2]) -> f64 {
        x[1] / self.fr
    }

    pub fn energy(&self) -> PerfectGas {
        PerfectGas { gamma: self.gamma }
    }
}

/// `expm1(x)/x`, accurate (and smoothly differentiable) through `x = 0`.
#[inline]
pub fn expm1_ratio<S: Real>(x: S) -> S {
    if x.value().abs() < 1e-2 {
        // 1 + x/2! + x²/3! + … + x⁷/8!
        let c = [
            1.0,
            1.0 / 2.0,
            1.0 / 6.0,
            1.0 / 24.0,
            1.0 / 120.0,
            1.0 / 720.0,
            1.0 / 5040.0,
            1.0 / 40320.0,
        ];
        horner(x, &c)
    } else {
        x.exp_m1() / x
    }
}

/// `ln1p(y)/y`, accurate through `y = 0`.
#[inline]
pub fn ln1p_ratio<S: Real>(y: S) -> S {
    if y.value().abs() < 1e-2 {
        let c = [1.0, -1.0 / 2.0, 1.0 / 3.0, -1.0 / 4.0, 1.0 / 5.0, -1.0 / 6.0, 1.0 / 7.0, -1.0 / 8.0];
        horner(y, &c)
    } else {
        y.ln_1p() / y
    }
}

#[inline]
fn horner<S: Real>(x: S, c: &[f64]) -> S {
    let mut acc = S::cst(c[c.len() - 1]);
    for &ci in c[..c.len() - 1].iter().rev() {
        acc = acc * x + ci;
    }
    acc
}

#[inline]
pub fn eps<S: Real>(rho: S, s: S, gamma: f64) -> S {
    ((rho.ln() * gamma) + s * (gamma - 1.0) / rho).exp() / (gamma - 1.0)
}

#[inline]
pub fn temp<S: Real>(rho: S, s: S, gamma: f64) -> S {
    ((rho.ln() + s / rho) * (gamma - 1.0)).exp()
}

/// `∂ε/∂ρ = ε (γ/ρ − (γ−1) s/ρ²)`.
#[inline]
pub fn deps_drho<S: Real>(rho: S, s: S, gamma: f64) -> S {
    eps(rho, s, gamma) * (rho.recip() * gamma - s * (gamma - 1.0) / (rho * rho))
}

/// `(ε(ρ′, s) − ε(ρ, s)) / (ρ′ − ρ)` in cancellation-free form.
#[inline]
pub fn delta1_s<S: Real>(rho: S, rho1: S, s: S, gamma: f64) -> S {
    let d = rho1 - rho;
    let k = ln1p_ratio(d / rho) * gamma / rho - s * (gamma - 1.0) / (rho * rho1);
    eps(rho, s, gamma) * k * expm1_ratio(d * k)
}

/// `(ε(ρ, s′) − ε(ρ, s)) / (s′ − s)` in cancellation-free form.
#[inline]
pub fn delta2_s<S: Real>(s: S, s1: S, rho: S, gamma: f64) -> S {
    let a = rho.recip() * (gamma - 1.0);
    temp(rho, s, gamma) * expm1_ratio((s1 - s) * a)
}

/// Entropy density giving temperature `t` at density `rho`.
pub fn entropy_from_temperature(rho: f64, t: f64, gamma: f64) -> f64 {
    rho * (t / rho.powf(gamma - 1.0)).ln() / (gamma - 1.0)
}

pub fn epsilon(rho: f64, s: f64, gp: &GasParams) -> Result<f64> {
    ensure_positive("density", rho, Location::Pointwise)?;
    Ok(eps(rho, s, gp.gamma))
}

pub fn temperature(rho: f64, s: f64, gp: &GasParams) -> Result<f64> {
    ensure_positive("density", rho, Location::Pointwise)?;
    Ok(temp(rho, s, gp.gamma))
}

pub fn pressure(rho: f64, s: f64, gp: &GasParams) -> Result<f64> {
    Ok(rho * temperature(rho, s, gp)?)
}

pub fn delta1(rho: f64, rho1: f64, s: f64, gp: &GasParams) -> Result<f64> {
    ensure_positive("density", rho, Location::Pointwise)?;
    ensure_positive("density", rho1, Location::Pointwise)?;
    Ok(delta1_s(rho, rho1, s, gp.gamma))
}

pub fn delta2(s: f64, s1: f64, rho: f64, gp: &GasParams) -> Result<f64> {
    ensure_positive("density", rho, Location::Pointwise)?;
    Ok(delta2_s(s, s1, rho, gp.gamma))
}

/// An internal energy density with its partial derivatives.
///
/// The default difference quotients are the plain ones, with the analytic
/// midpoint derivative substituted when the arguments are closer than
/// [`QUOTIENT_SWITCH`] relative.
pub trait InternalEnergy {
    fn energy(&self, rho: f64, s: f64) -> f64;
    fn d_rho(&self, rho: f64, s: f64) -> f64;
    fn d_s(&self, rho: f64, s: f64) -> f64;

    fn delta1(&self, rho: f64, rho1: f64, s: f64) -> f64 {
        if (rho1 - rho).abs() < QUOTIENT_SWITCH * rho.abs().max(rho1.abs()) {
            self.d_rho(0.5 * (rho + rho1), s)
        } else {
            (self.energy(rho1, s) - self.energy(rho, s)) / (rho1 - rho)
        }
    }

    fn delta2(&self, s: f64, s1: f64, rho: f64) -> f64 {
        if (s1 - s).abs() < QUOTIENT_SWITCH * s.abs().max(s1.abs()) || s1 == s {
            self.d_s(rho, 0.5 * (s + s1))
        } else {
            (self.energy(rho, s1) - self.energy(rho, s)) / (s1 - s)
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PerfectGas {
    pub gamma: f64,
}

impl InternalEnergy for PerfectGas {
    fn energy(&self, rho: f64, s: f64) -> f64 {
        eps(rho, s, self.gamma)
    }
    fn d_rho(&self, rho: f64, s: f64) -> f64 {
        deps_drho(rho, s, self.gamma)
    }
    fn d_s(&self, rho: f64, s: f64) -> f64 {
        temp(rho, s, self.gamma)
    }
    // the closed forms need no switch
    fn delta1(&self, rho: f64, rho1: f64, s: f64) -> f64 {
        delta1_s(rho, rho1, s, self.gamma)
    }
    fn delta2(&self, s: f64, s1: f64, rho: f64) -> f64 {
        delta2_s(s, s1, rho, self.gamma)
    }
}

/// Averaged difference quotients at one point:
/// `(½[δ₁(ρ,ρ′,s) + δ₁(ρ,ρ′,s′)], ½[δ₂(s,s′,ρ) + δ₂(s,s′,ρ′)])`.
#[inline]
pub fn averaged_quotients<S: Real>(rho: S, rho1: S, s: S, s1: S, gamma: f64) -> (S, S) {
    let d1 = (delta1_s(rho, rho1, s, gamma) + delta1_s(rho, rho1, s1, gamma)) * 0.5;
    let d2 = (delta2_s(s, s1, rho, gamma) + delta2_s(s, s1, rho1, gamma)) * 0.5;
    (d1, d2)
}

/// `D₁ε`, `D₂ε` together with their pre-projection quadrature tables.
#[derive(Debug, Clone)]
pub struct DiscreteGradients {
    pub d1: DgFunction,
    pub d2: DgFunction,
    /// Averaged `δ₁` at every volume point, `[cell * n_vol + q]`.
    pub d1_points: Vec<f64>,
    pub d2_points: Vec<f64>,
}

/// `D₁ε = π_h ½[δ₁(ρ,ρ′,s) + δ₁(ρ,ρ′,s′)]`, `D₂ε = π_h ½[δ₂(s,s′,ρ) + δ₂(s,s′,ρ′)]`.
pub fn discrete_gradients(
    rho: &DgFunction,
    s: &DgFunction,
    rho1: &DgFunction,
    s1: &DgFunction,
    gp: &GasParams,
) -> Result<DiscreteGradients> {
    let space: &Arc<DgSpace> = &rho.space;
    for f in [s, rho1, s1] {
        if !Arc::ptr_eq(&f.space, space) {
            return Err(Error::ContractViolation("discrete gradients need a common DG space".into()));
        }
    }
    let mesh = space.mesh();
    let quad = space.quadrature();
    let nq = quad.n_vol();
    let mut d1_points = Vec::with_capacity(mesh.num_cells() * nq);
    let mut d2_points = Vec::with_capacity(mesh.num_cells() * nq);
    for cell in 0..mesh.num_cells() {
        let r0 = rho.evaluate(cell, &quad.vol_points);
        let r1 = rho1.evaluate(cell, &quad.vol_points);
        let s0 = s.evaluate(cell, &quad.vol_points);
        let s1v = s1.evaluate(cell, &quad.vol_points);
        for q in 0..nq {
            let loc = Location::Cell { cell, point: q };
            ensure_positive("density", r0[q], loc)?;
            ensure_positive("density", r1[q], loc)?;
            let (a, b) = averaged_quotients(r0[q], r1[q], s0[q], s1v[q], gp.gamma);
            d1_points.push(a);
            d2_points.push(b);
        }
    }
    Ok(DiscreteGradients {
        d1: space.project_values(&d1_points)?,
        d2: space.project_values(&d2_points)?,
        d1_points,
        d2_points,
    })
}
