use std::sync::Arc;

use super::{CgFunction, DgFunction, FeSpace, Point};
use crate::mesh::Mesh;
use crate::scalar::Real;

/// Scalar value with its physical gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SVal<S> {
    pub v: S,
    pub g: [S; 2],
}

/// Vector value with its physical Jacobian, `g[i][j] = ∂_j u_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VVal<S> {
    pub v: [S; 2],
    pub g: [[S; 2]; 2],
}

impl<S: Real> SVal<S> {
    pub fn constant(v: S) -> Self {
        SVal { v, g: [S::zero(); 2] }
    }

    pub fn lift(a: SVal<f64>) -> Self {
        SVal {
            v: S::cst(a.v),
            g: [S::cst(a.g[0]), S::cst(a.g[1])],
        }
    }

    pub fn mul(self, o: Self) -> Self {
        SVal {
            v: self.v * o.v,
            g: [self.g[0] * o.v + self.v * o.g[0], self.g[1] * o.v + self.v * o.g[1]],
        }
    }

    pub fn add(self, o: Self) -> Self {
        SVal {
            v: self.v + o.v,
            g: [self.g[0] + o.g[0], self.g[1] + o.g[1]],
        }
    }

    pub fn sub(self, o: Self) -> Self {
        SVal {
            v: self.v - o.v,
            g: [self.g[0] - o.g[0], self.g[1] - o.g[1]],
        }
    }

    pub fn scale(self, a: f64) -> Self {
        SVal {
            v: self.v * a,
            g: [self.g[0] * a, self.g[1] * a],
        }
    }
}

impl<S: Real> VVal<S> {
    pub fn zero() -> Self {
        VVal {
            v: [S::zero(); 2],
            g: [[S::zero(); 2]; 2],
        }
    }

    pub fn lift(a: VVal<f64>) -> Self {
        VVal {
            v: [S::cst(a.v[0]), S::cst(a.v[1])],
            g: [
                [S::cst(a.g[0][0]), S::cst(a.g[0][1])],
                [S::cst(a.g[1][0]), S::cst(a.g[1][1])],
            ],
        }
    }

    pub fn from_components(a: SVal<S>, b: SVal<S>) -> Self {
        VVal {
            v: [a.v, b.v],
            g: [a.g, b.g],
        }
    }

    pub fn add(self, o: Self) -> Self {
        let mut r = self;
        for i in 0..2 {
            r.v[i] += o.v[i];
            for j in 0..2 {
                r.g[i][j] += o.g[i][j];
            }
        }
        r
    }

    pub fn scale(self, a: f64) -> Self {
        let mut r = self;
        for i in 0..2 {
            r.v[i] *= a;
            for j in 0..2 {
                r.g[i][j] *= a;
            }
        }
        r
    }
}

/// Anything the forms can evaluate as a scalar at a quadrature point.
pub trait ScalarField: Sync {
    fn eval(&self, p: &Point<'_>) -> SVal<f64>;

    /// Mesh the field is tied to, if any (checked against the form's mesh).
    fn mesh(&self) -> Option<&Arc<Mesh>> {
        None
    }
}

/// Anything the forms can evaluate as a 2-vector at a quadrature point.
pub trait VectorField: Sync {
    fn eval(&self, p: &Point<'_>) -> VVal<f64>;

    fn mesh(&self) -> Option<&Arc<Mesh>> {
        None
    }
}

impl ScalarField for DgFunction {
    fn eval(&self, p: &Point<'_>) -> SVal<f64> {
        self.at(p, 0)
    }
    fn mesh(&self) -> Option<&Arc<Mesh>> {
        Some(self.space.mesh())
    }
}

/// First component of a CG function.
impl ScalarField for CgFunction {
    fn eval(&self, p: &Point<'_>) -> SVal<f64> {
        self.at(p, 0)
    }
    fn mesh(&self) -> Option<&Arc<Mesh>> {
        Some(self.space.mesh())
    }
}

impl VectorField for CgFunction {
    fn eval(&self, p: &Point<'_>) -> VVal<f64> {
        assert_eq!(self.space.components(), 2, "vector evaluation needs a 2-component space");
        VVal::from_components(self.at(p, 0), self.at(p, 1))
    }
    fn mesh(&self) -> Option<&Arc<Mesh>> {
        Some(self.space.mesh())
    }
}

/// Spatially constant scalar.
#[derive(Debug, Clone, Copy)]
pub struct Const(pub f64);

impl ScalarField for Const {
    fn eval(&self, _: &Point<'_>) -> SVal<f64> {
        SVal::constant(self.0)
    }
}

/// Spatially constant vector.
#[derive(Debug, Clone, Copy)]
pub struct ConstVec(pub [f64; 2]);

impl VectorField for ConstVec {
    fn eval(&self, _: &Point<'_>) -> VVal<f64> {
        VVal {
            v: self.0,
            g: [[0.0; 2]; 2],
        }
    }
}

/// Indicator `1_K` of a single cell.
#[derive(Debug, Clone, Copy)]
pub struct Indicator(pub usize);

impl ScalarField for Indicator {
    fn eval(&self, p: &Point<'_>) -> SVal<f64> {
        SVal::constant(if p.cell == self.0 { 1.0 } else { 0.0 })
    }
}

/// Scalar given by closures for its value and gradient in physical
/// coordinates.
pub struct FnScalar<F, G> {
    pub value: F,
    pub grad: G,
}

impl<F, G> ScalarField for FnScalar<F, G>
where
    F: Fn([f64; 2]) -> f64 + Sync,
    G: Fn([f64; 2]) -> [f64; 2] + Sync,
{
    fn eval(&self, p: &Point<'_>) -> SVal<f64> {
        SVal {
            v: (self.value)(p.x),
            g: (self.grad)(p.x),
        }
    }
}

/// Vector given by closures for its value and Jacobian `∂_j u_i`.
pub struct FnVector<F, G> {
    pub value: F,
    pub jac: G,
}

impl<F, G> VectorField for FnVector<F, G>
where
    F: Fn([f64; 2]) -> [f64; 2] + Sync,
    G: Fn([f64; 2]) -> [[f64; 2]; 2] + Sync,
{
    fn eval(&self, p: &Point<'_>) -> VVal<f64> {
        VVal {
            v: (self.value)(p.x),
            g: (self.jac)(p.x),
        }
    }
}

/// Pointwise product of two scalar fields.
pub struct Product<'a>(pub &'a dyn ScalarField, pub &'a dyn ScalarField);

impl ScalarField for Product<'_> {
    fn eval(&self, p: &Point<'_>) -> SVal<f64> {
        self.0.eval(p).mul(self.1.eval(p))
    }
    fn mesh(&self) -> Option<&Arc<Mesh>> {
        self.0.mesh().or_else(|| self.1.mesh())
    }
}
