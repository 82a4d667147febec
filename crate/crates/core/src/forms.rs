//! The (tri)linear forms of the scheme.
//!
//! Each form is assembled from pointwise integrands written against
//! [`Real`]. The global evaluators on [`Forms`] instantiate them with `f64`;
//! the stepper instantiates the same integrands with dual numbers to obtain
//! exact Jacobians.
//!
//! Conventions on an interior edge `e` shared by cells 1 and 2: `n` is the
//! unit normal out of cell 1, `⟦f⟧ = (f₁ − f₂) n` and `{f} = (f₁ + f₂)/2`.

use std::f64::consts::FRAC_1_PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{ensure_positive, Error, Location, Result};
use crate::exec::{self, Execution};
use crate::mesh::{BoundaryTag, Mesh};
use crate::scalar::{dot2, Real};
use crate::spaces::{Point, Quadrature, SVal, ScalarField, VVal, VectorField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViscosityParams {
    pub mu: f64,
    pub lambda: f64,
}

impl ViscosityParams {
    /// Requires `μ ≥ 0` and `λ + μ ≥ 0` (bulk viscosity in two dimensions).
    pub fn new(mu: f64, lambda: f64) -> Result<Self> {
        if !(mu >= 0.0) || !(lambda + mu >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "viscosity needs mu >= 0 and lambda + mu >= 0 (mu = {mu}, lambda = {lambda})"
            )));
        }
        Ok(ViscosityParams { mu, lambda })
    }

    /// Trace-free stress `λ = −μ`.
    pub fn stokes(mu: f64) -> Result<Self> {
        Self::new(mu, -mu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatParams {
    pub kappa: f64,
    pub eta: f64,
}

impl HeatParams {
    pub fn new(kappa: f64, eta: f64) -> Result<Self> {
        if !(kappa >= 0.0) || !(eta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "heat parameters need kappa >= 0 and eta > 0 (kappa = {kappa}, eta = {eta})"
            )));
        }
        Ok(HeatParams { kappa, eta })
    }
}

pub type TraceFn = Arc<dyn Fn([f64; 2], BoundaryTag) -> f64 + Send + Sync>;

/// Thermal boundary condition; trace data is a function of the boundary
/// point and its tag.
#[derive(Clone)]
pub enum BoundaryCondition {
    HomogeneousNeumann,
    /// Prescribed temperature `T₀`.
    Dirichlet(TraceFn),
    /// Prescribed normal heat flux `q₀`.
    Neumann(TraceFn),
}

impl fmt::Debug for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryCondition::HomogeneousNeumann => write!(f, "HomogeneousNeumann"),
            BoundaryCondition::Dirichlet(_) => write!(f, "Dirichlet(..)"),
            BoundaryCondition::Neumann(_) => write!(f, "Neumann(..)"),
        }
    }
}

impl BoundaryCondition {
    pub fn dirichlet(f: impl Fn([f64; 2], BoundaryTag) -> f64 + Send + Sync + 'static) -> Self {
        BoundaryCondition::Dirichlet(Arc::new(f))
    }

    pub fn neumann(f: impl Fn([f64; 2], BoundaryTag) -> f64 + Send + Sync + 'static) -> Self {
        BoundaryCondition::Neumann(Arc::new(f))
    }

    /// Whether second-law monitoring must skip cells touching the boundary.
    pub fn needs_interior_support(&self) -> bool {
        !matches!(self, BoundaryCondition::HomogeneousNeumann)
    }
}

/// Boundary data resolved at one boundary quadrature point.
#[derive(Debug, Clone, Copy)]
pub enum BoundaryData {
    None,
    Dirichlet { t0: f64 },
    Neumann { q0: f64 },
}

impl BoundaryCondition {
    pub fn data_at(&self, x: [f64; 2], tag: BoundaryTag, loc: Location) -> Result<BoundaryData> {
        Ok(match self {
            BoundaryCondition::HomogeneousNeumann => BoundaryData::None,
            BoundaryCondition::Dirichlet(t0) => {
                let t0 = t0(x, tag);
                ensure_positive("boundary temperature", t0, loc)?;
                BoundaryData::Dirichlet { t0 }
            }
            BoundaryCondition::Neumann(q0) => BoundaryData::Neumann { q0: q0(x, tag) },
        })
    }
}

// ---------------------------------------------------------------------------
// pointwise integrands

/// `−w·[u, v]` with `[u, v] = (u·∇)v − (v·∇)u`.
#[inline]
pub fn a_integrand<S: Real>(w: [S; 2], u: &VVal<S>, v: &VVal<S>) -> S {
    let mut acc = S::zero();
    for i in 0..2 {
        let br = u.v[0] * v.g[i][0] + u.v[1] * v.g[i][1] - v.v[0] * u.g[i][0] - v.v[1] * u.g[i][1];
        acc -= w[i] * br;
    }
    acc
}

/// Cell part of `b_h(f, g, v)`: `−(∇f·v) g`.
#[inline]
pub fn b_cell_integrand<S: Real>(f: &SVal<S>, g: S, v: [S; 2]) -> S {
    -(dot2(f.g, v) * g)
}

/// Edge part of `b_h(f, g, v)`: `v·⟦f⟧ {g}` with `vn = v·n`.
#[inline]
pub fn b_edge_integrand<S: Real>(vn: S, f1: S, f2: S, g1: S, g2: S) -> S {
    vn * (f1 - f2) * (g1 + g2) * 0.5
}

/// Upwind addition `(1/π) arctan(10 u·n) (v·n) ⟦f⟧·⟦g⟧`.
#[inline]
pub fn upwind_integrand<S: Real>(un: S, vn: S, f1: S, f2: S, g1: S, g2: S) -> S {
    (un * 10.0).atan() * FRAC_1_PI * vn * (f1 - f2) * (g1 - g2)
}

/// `σ(u) : ∇v` with `σ(u) = 2μ Def u + λ (div u) I`.
#[inline]
pub fn stress_contract<S: Real>(u: &VVal<S>, v: &VVal<S>, p: &ViscosityParams) -> S {
    let div = u.g[0][0] + u.g[1][1];
    let mut acc = div * (v.g[0][0] + v.g[1][1]) * p.lambda;
    for i in 0..2 {
        for j in 0..2 {
            let def = (u.g[i][j] + u.g[j][i]) * 0.5;
            acc += def * v.g[i][j] * (2.0 * p.mu);
        }
    }
    acc
}

/// Cell part of `d_h(w, f, g)`: `−(w/f) κ ∇f·∇g`.
#[inline]
pub fn d_cell_integrand<S: Real>(w: S, f: &SVal<S>, g: &SVal<S>, kappa: f64) -> S {
    -(w / f.v * dot2(f.g, g.g) * kappa)
}

/// Interior-edge part of `d_h(w, f, g)`.
#[inline]
#[allow(clippy::too_many_arguments)]
pub fn d_edge_integrand<S: Real>(
    w1: S,
    w2: S,
    f1: &SVal<S>,
    f2: &SVal<S>,
    g1: &SVal<S>,
    g2: &SVal<S>,
    n: [f64; 2],
    kappa: f64,
    eta_over_h: f64,
) -> S {
    let favg = (f1.v + f2.v) * 0.5;
    let jf = f1.v - f2.v;
    let jg = g1.v - g2.v;
    let wdf_n = (w1 * (f1.g[0] * n[0] + f1.g[1] * n[1]) + w2 * (f2.g[0] * n[0] + f2.g[1] * n[1])) * (0.5 * kappa);
    let wdg_n = (w1 * (g1.g[0] * n[0] + g1.g[1] * n[1]) + w2 * (g2.g[0] * n[0] + g2.g[1] * n[1])) * (0.5 * kappa);
    let wavg = (w1 + w2) * 0.5;
    (wdf_n * jg - wdg_n * jf - wavg * jf * jg * eta_over_h) / favg
}

/// Boundary-edge part of `d_h(w, f, g)` (outward normal `n`).
#[inline]
pub fn d_boundary_integrand<S: Real>(data: BoundaryData, w: S, f: &SVal<S>, g: &SVal<S>, n: [f64; 2], kappa: f64) -> S {
    let dfn = f.g[0] * n[0] + f.g[1] * n[1];
    match data {
        BoundaryData::None => S::zero(),
        BoundaryData::Dirichlet { t0 } => {
            let dgn = g.g[0] * n[0] + g.g[1] * n[1];
            (w / f.v) * (dfn * g.v - dgn * (f.v - t0)) * kappa
        }
        BoundaryData::Neumann { .. } => (w / f.v) * dfn * g.v * kappa,
    }
}

/// Boundary-edge integrand of `e_h(w, f)`.
#[inline]
pub fn e_boundary_integrand<S: Real>(data: BoundaryData, w: S, f: &SVal<S>, n: [f64; 2], kappa: f64, eta_over_h: f64) -> S {
    match data {
        BoundaryData::None => S::zero(),
        BoundaryData::Dirichlet { t0 } => {
            let dfn = f.g[0] * n[0] + f.g[1] * n[1];
            -(w / f.v * dfn * (kappa * t0)) + w * (f.v - t0) * eta_over_h
        }
        BoundaryData::Neumann { q0 } => w * q0,
    }
}

// ---------------------------------------------------------------------------
// global evaluators

/// Evaluates forms on a mesh with a fixed quadrature.
#[derive(Debug, Clone)]
pub struct Forms {
    pub mesh: Arc<Mesh>,
    pub quad: Arc<Quadrature>,
    pub exec: Execution,
}

/// Interior-edge quadrature point from both sides with its weight (edge
/// length included).
struct EdgePoint<'a> {
    p: [Point<'a>; 2],
    weight: f64,
}

impl Forms {
    pub fn new(mesh: Arc<Mesh>, quad: Arc<Quadrature>) -> Self {
        Forms {
            mesh,
            quad,
            exec: Execution::default(),
        }
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    fn check_mesh(&self, meshes: &[Option<&Arc<Mesh>>]) -> Result<()> {
        for m in meshes.iter().flatten() {
            if !Arc::ptr_eq(m, &self.mesh) {
                return Err(Error::ContractViolation("field defined on a different mesh".into()));
            }
        }
        Ok(())
    }

    fn cell_sum<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(&Point<'_>) -> Result<f64> + Sync + Send,
    {
        let mesh = &self.mesh;
        let quad = &self.quad;
        let per_cell = exec::try_map_indexed(self.exec, mesh.num_cells(), |cell| {
            let det = mesh.geometry[cell].det.abs();
            let mut acc = 0.0;
            for q in 0..quad.n_vol() {
                let p = Point::vol(mesh, quad, cell, q);
                acc += quad.vol_weights[q] * det * f(&p)?;
            }
            Ok::<f64, Error>(acc)
        })?;
        Ok(per_cell.into_iter().fold(0.0, |a, b| a + b))
    }

    fn interior_sum<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(usize, usize, &EdgePoint<'_>) -> Result<f64> + Sync + Send,
    {
        let mesh = &self.mesh;
        let quad = &self.quad;
        let per_edge = exec::try_map_indexed(self.exec, mesh.interior_edges.len(), |ei| {
            let e = &mesh.interior_edges[ei];
            let mut acc = 0.0;
            for q in 0..quad.n_edge() {
                let ep = EdgePoint {
                    p: [
                        Point::edge(mesh, quad, e.cells[0], e.local[0], false, q),
                        Point::edge(mesh, quad, e.cells[1], e.local[1], true, q),
                    ],
                    weight: quad.edge_weights[q] * e.length,
                };
                acc += ep.weight * f(ei, q, &ep)?;
            }
            Ok::<f64, Error>(acc)
        })?;
        Ok(per_edge.into_iter().fold(0.0, |a, b| a + b))
    }

    fn boundary_sum<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(usize, usize, &Point<'_>) -> Result<f64> + Sync + Send,
    {
        let mesh = &self.mesh;
        let quad = &self.quad;
        let per_edge = exec::try_map_indexed(self.exec, mesh.boundary_edges.len(), |bi| {
            let b = &mesh.boundary_edges[bi];
            let mut acc = 0.0;
            for q in 0..quad.n_edge() {
                let p = Point::edge(mesh, quad, b.cell, b.local, false, q);
                acc += quad.edge_weights[q] * b.length * f(bi, q, &p)?;
            }
            Ok::<f64, Error>(acc)
        })?;
        Ok(per_edge.into_iter().fold(0.0, |a, b| a + b))
    }

    /// `∫ f` under the volume rule.
    pub fn integrate(&self, f: &dyn ScalarField) -> Result<f64> {
        self.check_mesh(&[f.mesh()])?;
        self.cell_sum(|p| Ok(f.eval(p).v))
    }

    /// `a(w, u, v) = −∫ w·[u, v]`.
    pub fn form_a(&self, w: &dyn VectorField, u: &dyn VectorField, v: &dyn VectorField) -> Result<f64> {
        self.check_mesh(&[w.mesh(), u.mesh(), v.mesh()])?;
        self.cell_sum(|p| Ok(a_integrand(w.eval(p).v, &u.eval(p), &v.eval(p))))
    }

    /// `b_h(f, g, v) = −Σ_K ∫_K (∇f·v) g + Σ_e ∫_e v·⟦f⟧ {g}`.
    pub fn form_b(&self, f: &dyn ScalarField, g: &dyn ScalarField, v: &dyn VectorField) -> Result<f64> {
        self.check_mesh(&[f.mesh(), g.mesh(), v.mesh()])?;
        let cells = self.cell_sum(|p| Ok(b_cell_integrand(&f.eval(p), g.eval(p).v, v.eval(p).v)))?;
        let edges = self.interior_sum(|ei, _, ep| {
            let n = self.mesh.interior_edges[ei].normal;
            let vn = avg_normal(v, ep, n);
            let (f1, f2) = (f.eval(&ep.p[0]).v, f.eval(&ep.p[1]).v);
            let (g1, g2) = (g.eval(&ep.p[0]).v, g.eval(&ep.p[1]).v);
            Ok(b_edge_integrand(vn, f1, f2, g1, g2))
        })?;
        Ok(cells + edges)
    }

    /// `b̃_h(u_adv; f, g, v)`: `b_h` plus the bounded upwind jump term.
    pub fn form_b_upwind(
        &self,
        u_adv: &dyn VectorField,
        f: &dyn ScalarField,
        g: &dyn ScalarField,
        v: &dyn VectorField,
    ) -> Result<f64> {
        self.check_mesh(&[u_adv.mesh()])?;
        let base = self.form_b(f, g, v)?;
        Ok(base + self.upwind_term(u_adv, f, g, v)?)
    }

    /// `Σ_e ∫_e (1/π) arctan(10 u·n) (v·n) ⟦f⟧·⟦g⟧` alone.
    pub fn upwind_term(
        &self,
        u_adv: &dyn VectorField,
        f: &dyn ScalarField,
        g: &dyn ScalarField,
        v: &dyn VectorField,
    ) -> Result<f64> {
        self.interior_sum(|ei, _, ep| {
            let n = self.mesh.interior_edges[ei].normal;
            let un = avg_normal(u_adv, ep, n);
            let vn = avg_normal(v, ep, n);
            let (f1, f2) = (f.eval(&ep.p[0]).v, f.eval(&ep.p[1]).v);
            let (g1, g2) = (g.eval(&ep.p[0]).v, g.eval(&ep.p[1]).v);
            Ok(upwind_integrand(un, vn, f1, f2, g1, g2))
        })
    }

    /// `c(w, u, v) = ∫ w σ(u) : ∇v`.
    pub fn form_c(&self, w: &dyn ScalarField, u: &dyn VectorField, v: &dyn VectorField, p: &ViscosityParams) -> Result<f64> {
        self.check_mesh(&[w.mesh(), u.mesh(), v.mesh()])?;
        self.cell_sum(|pt| Ok(w.eval(pt).v * stress_contract(&u.eval(pt), &v.eval(pt), p)))
    }

    /// `d_h(w, f, g)` for the given boundary condition.
    pub fn form_d(
        &self,
        bc: &BoundaryCondition,
        w: &dyn ScalarField,
        f: &dyn ScalarField,
        g: &dyn ScalarField,
        hp: &HeatParams,
    ) -> Result<f64> {
        self.check_mesh(&[w.mesh(), f.mesh(), g.mesh()])?;
        let kappa = hp.kappa;
        let cells = self.cell_sum(|p| {
            let fv = f.eval(p);
            ensure_positive("temperature", fv.v, Location::Cell { cell: p.cell, point: q_index(p) })?;
            Ok(d_cell_integrand(w.eval(p).v, &fv, &g.eval(p), kappa))
        })?;
        let edges = self.interior_sum(|ei, q, ep| {
            let e = &self.mesh.interior_edges[ei];
            let (f1, f2) = (f.eval(&ep.p[0]), f.eval(&ep.p[1]));
            ensure_positive("temperature average", 0.5 * (f1.v + f2.v), Location::InteriorEdge { edge: ei, point: q })?;
            Ok(d_edge_integrand(
                w.eval(&ep.p[0]).v,
                w.eval(&ep.p[1]).v,
                &f1,
                &f2,
                &g.eval(&ep.p[0]),
                &g.eval(&ep.p[1]),
                e.normal,
                kappa,
                hp.eta / e.length,
            ))
        })?;
        if matches!(bc, BoundaryCondition::HomogeneousNeumann) {
            return Ok(cells + edges);
        }
        let bnd = self.boundary_sum(|bi, q, p| {
            let b = &self.mesh.boundary_edges[bi];
            let loc = Location::BoundaryEdge { edge: bi, point: q };
            let data = bc.data_at(p.x, b.tag, loc)?;
            let fv = f.eval(p);
            ensure_positive("temperature", fv.v, loc)?;
            Ok(d_boundary_integrand(data, w.eval(p).v, &fv, &g.eval(p), b.normal, kappa))
        })?;
        Ok(cells + edges + bnd)
    }

    /// `e_h(w, f)` for the given boundary condition.
    pub fn form_e(&self, bc: &BoundaryCondition, w: &dyn ScalarField, f: &dyn ScalarField, hp: &HeatParams) -> Result<f64> {
        self.check_mesh(&[w.mesh(), f.mesh()])?;
        if matches!(bc, BoundaryCondition::HomogeneousNeumann) {
            return Ok(0.0);
        }
        self.boundary_sum(|bi, q, p| {
            let b = &self.mesh.boundary_edges[bi];
            let loc = Location::BoundaryEdge { edge: bi, point: q };
            let data = bc.data_at(p.x, b.tag, loc)?;
            let fv = f.eval(p);
            if let BoundaryData::Dirichlet { .. } = data {
                ensure_positive("temperature", fv.v, loc)?;
            }
            Ok(e_boundary_integrand(data, w.eval(p).v, &fv, b.normal, hp.kappa, hp.eta / b.length))
        })
    }

    /// `d_h(w, T, T) + e_h(w, T)`.
    pub fn entropy_rhs(&self, bc: &BoundaryCondition, w: &dyn ScalarField, t: &dyn ScalarField, hp: &HeatParams) -> Result<f64> {
        Ok(self.form_d(bc, w, t, t, hp)? + self.form_e(bc, w, t, hp)?)
    }
}

fn q_index(p: &Point<'_>) -> usize {
    match p.at {
        crate::spaces::At::Vol(q) => q,
        crate::spaces::At::Edge { q, .. } => q,
    }
}

/// `{v}·n` at an interior edge point.
fn avg_normal(v: &dyn VectorField, ep: &EdgePoint<'_>, n: [f64; 2]) -> f64 {
    let (a, b) = (v.eval(&ep.p[0]).v, v.eval(&ep.p[1]).v);
    0.5 * ((a[0] + b[0]) * n[0] + (a[1] + b[1]) * n[1])
}

#[cfg(test)]
mod tests;
