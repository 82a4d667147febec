//! Finite element spaces `DG_q` and `CG_r^d` on a [`Mesh`], the functions
//! living in them, and the pointwise field abstraction the forms consume.

mod element;
mod field;
mod quadrature;

use std::sync::Arc;

use faer::linalg::solvers::DenseSolveCore;
use faer::sparse::{SparseColMat, Triplet};

pub use element::{dim_p, LagrangeElement, Tabulation};
pub use field::*;
pub use quadrature::{gauss_legendre_unit, Quadrature};

use crate::error::{Error, Result};
use crate::mesh::{EdgeRef, Mesh};
use crate::scalar::Real;

/// Where a quadrature point lives relative to its cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum At {
    Vol(usize),
    /// Edge point `q` on local edge `local`; `rev` selects parameter `1 - t`.
    Edge { local: usize, rev: bool, q: usize },
}

/// A quadrature point as seen from one cell.
#[derive(Debug, Clone, Copy)]
pub struct Point<'a> {
    pub cell: usize,
    pub at: At,
    /// Reference coordinates.
    pub xi: [f64; 2],
    /// Physical coordinates.
    pub x: [f64; 2],
    pub quad: &'a Quadrature,
}

impl<'a> Point<'a> {
    pub fn vol(mesh: &Mesh, quad: &'a Quadrature, cell: usize, q: usize) -> Self {
        let xi = quad.vol_points[q];
        Point {
            cell,
            at: At::Vol(q),
            xi,
            x: mesh.geometry[cell].map(xi),
            quad,
        }
    }

    pub fn edge(mesh: &Mesh, quad: &'a Quadrature, cell: usize, local: usize, rev: bool, q: usize) -> Self {
        let t = quad.edge_points[q];
        let xi = crate::mesh::edge_reference_point(local, if rev { 1.0 - t } else { t });
        Point {
            cell,
            at: At::Edge { local, rev, q },
            xi,
            x: mesh.geometry[cell].map(xi),
            quad,
        }
    }
}

/// Common interface of the scalar DG space and the (vector) CG space.
pub trait FeSpace: Send + Sync {
    fn mesh(&self) -> &Arc<Mesh>;
    fn quadrature(&self) -> &Arc<Quadrature>;
    fn element(&self) -> &LagrangeElement;
    fn tabulation(&self) -> &Tabulation;
    /// Number of dofs of one component.
    fn n_scalar(&self) -> usize;
    fn components(&self) -> usize;
    /// Scalar dof ids of a cell, in local basis order.
    fn cell_dofs(&self, cell: usize) -> &[usize];

    fn dim(&self) -> usize {
        self.n_scalar() * self.components()
    }

    fn n_local(&self) -> usize {
        self.element().n()
    }

    /// Global index of a scalar dof in component `comp`.
    fn global(&self, comp: usize, dof: usize) -> usize {
        comp * self.n_scalar() + dof
    }
}

/// `DG_q(𝒯_h)`: piecewise polynomials with no inter-cell continuity.
#[derive(Debug)]
pub struct DgSpace {
    mesh: Arc<Mesh>,
    quad: Arc<Quadrature>,
    element: LagrangeElement,
    tab: Tabulation,
    dofs: Vec<usize>,
    /// Cell-local `L²` projector `M_ref⁻¹ Φᵀ W`, row-major `n × n_vol`.
    projector: Vec<f64>,
}

impl DgSpace {
    pub fn new(mesh: Arc<Mesh>, q: usize, quad: Arc<Quadrature>) -> Result<Self> {
        if q > 3 {
            return Err(Error::InvalidArgument(format!("DG degree {q} not supported (max 3)")));
        }
        let element = LagrangeElement::discontinuous(q);
        let tab = Tabulation::new(&element, &quad);
        let n = element.n();
        let dofs = (0..mesh.num_cells() * n).collect();
        let projector = local_projector(&tab, &quad);
        Ok(DgSpace {
            mesh,
            quad,
            element,
            tab,
            dofs,
            projector,
        })
    }

    pub fn degree(&self) -> usize {
        self.element.degree
    }

    /// Project pointwise values given at the volume quadrature points of one
    /// cell onto the local basis.
    pub fn project_local<S: Real>(&self, values: &[S], out: &mut [S]) {
        let nq = self.quad.n_vol();
        debug_assert_eq!(values.len(), nq);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.projector[i * nq..(i + 1) * nq];
            let mut acc = S::zero();
            for (p, v) in row.iter().zip(values) {
                acc += *v * *p;
            }
            *o = acc;
        }
    }

    /// `π_h` of values tabulated at all volume quadrature points
    /// (`values[cell * n_vol + q]`).
    pub fn project_values(self: &Arc<Self>, values: &[f64]) -> Result<DgFunction> {
        let nq = self.quad.n_vol();
        if values.len() != self.mesh.num_cells() * nq {
            return Err(Error::ContractViolation(format!(
                "expected {} quadrature values, got {}",
                self.mesh.num_cells() * nq,
                values.len()
            )));
        }
        let n = self.n_local();
        let mut coeffs = vec![0.0; self.dim()];
        for cell in 0..self.mesh.num_cells() {
            self.project_local(&values[cell * nq..(cell + 1) * nq], &mut coeffs[cell * n..(cell + 1) * n]);
        }
        FeFunction::from_coeffs(self.clone(), coeffs)
    }

    /// Nodal interpolant of a function of physical coordinates.
    pub fn interpolate(self: &Arc<Self>, f: impl Fn([f64; 2]) -> f64) -> DgFunction {
        let n = self.n_local();
        let mut coeffs = vec![0.0; self.dim()];
        for cell in 0..self.mesh.num_cells() {
            let g = &self.mesh.geometry[cell];
            for (i, &xi) in self.element.nodes.iter().enumerate() {
                coeffs[cell * n + i] = f(g.map(xi));
            }
        }
        FeFunction {
            space: self.clone(),
            coeffs,
        }
    }
}

fn local_projector(tab: &Tabulation, quad: &Quadrature) -> Vec<f64> {
    let n = tab.n;
    let nq = quad.n_vol();
    let m = faer::Mat::<f64>::from_fn(n, n, |i, j| {
        (0..nq)
            .map(|q| quad.vol_weights[q] * tab.vol_val[q * n + i] * tab.vol_val[q * n + j])
            .sum()
    });
    let inv = m.partial_piv_lu().inverse();
    let mut p = vec![0.0; n * nq];
    for i in 0..n {
        for q in 0..nq {
            p[i * nq + q] = (0..n)
                .map(|j| inv[(i, j)] * tab.vol_val[q * n + j])
                .sum::<f64>()
                * quad.vol_weights[q];
        }
    }
    p
}

impl FeSpace for DgSpace {
    fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }
    fn quadrature(&self) -> &Arc<Quadrature> {
        &self.quad
    }
    fn element(&self) -> &LagrangeElement {
        &self.element
    }
    fn tabulation(&self) -> &Tabulation {
        &self.tab
    }
    fn n_scalar(&self) -> usize {
        self.dofs.len()
    }
    fn components(&self) -> usize {
        1
    }
    fn cell_dofs(&self, cell: usize) -> &[usize] {
        let n = self.element.n();
        &self.dofs[cell * n..(cell + 1) * n]
    }
}

/// `CG_r(𝒯_h)^d`: continuous piecewise polynomials, periodic across the seam
/// when the mesh is.
#[derive(Debug)]
pub struct CgSpace {
    mesh: Arc<Mesh>,
    quad: Arc<Quadrature>,
    element: LagrangeElement,
    tab: Tabulation,
    components: usize,
    n_scalar: usize,
    dofs: Vec<usize>,
    wall: Vec<bool>,
    /// Physical coordinates of each scalar dof (as seen from the first cell
    /// that owns it).
    dof_coords: Vec<[f64; 2]>,
}

impl CgSpace {
    pub fn new(mesh: Arc<Mesh>, r: usize, components: usize, quad: Arc<Quadrature>) -> Result<Self> {
        if !(1..=3).contains(&r) {
            return Err(Error::InvalidArgument(format!("CG degree {r} not supported (1..=3)")));
        }
        if components == 0 {
            return Err(Error::InvalidArgument("CG space needs at least one component".into()));
        }
        let element = LagrangeElement::continuous(r);
        let tab = Tabulation::new(&element, &quad);
        let n_local = element.n();
        let n_vert = mesh.vertices.len();
        let per_edge = r - 1;
        let n_int_edges = mesh.interior_edges.len();
        let n_edges = n_int_edges + mesh.boundary_edges.len();
        let per_cell = n_local - 3 - 3 * per_edge;
        let edge_base = n_vert;
        let cell_base = edge_base + n_edges * per_edge;
        let n_scalar = cell_base + mesh.num_cells() * per_cell;

        let mut dofs = Vec::with_capacity(mesh.num_cells() * n_local);
        for (c, cell) in mesh.cells.iter().enumerate() {
            dofs.extend_from_slice(&cell.vertices);
            for local in 0..3 {
                let (edge, reversed) = match mesh.cell_edges[c][local] {
                    EdgeRef::Interior { edge, side } => (edge, side == 1),
                    EdgeRef::Boundary { edge } => (n_int_edges + edge, false),
                };
                for k in 0..per_edge {
                    let kk = if reversed { per_edge - 1 - k } else { k };
                    dofs.push(edge_base + edge * per_edge + kk);
                }
            }
            for k in 0..per_cell {
                dofs.push(cell_base + c * per_cell + k);
            }
        }

        let mut dof_coords = vec![[f64::NAN; 2]; n_scalar];
        for c in 0..mesh.num_cells() {
            let g = &mesh.geometry[c];
            for (i, &xi) in element.nodes.iter().enumerate() {
                let d = dofs[c * n_local + i];
                if dof_coords[d][0].is_nan() {
                    dof_coords[d] = g.map(xi);
                }
            }
        }

        let mut wall = vec![false; n_scalar];
        for b in &mesh.boundary_edges {
            let cd = &dofs[b.cell * n_local..(b.cell + 1) * n_local];
            let (a, e) = crate::mesh::local_edge_vertices(b.local);
            wall[cd[a]] = true;
            wall[cd[e]] = true;
            for k in 0..per_edge {
                wall[cd[3 + b.local * per_edge + k]] = true;
            }
        }

        Ok(CgSpace {
            mesh,
            quad,
            element,
            tab,
            components,
            n_scalar,
            dofs,
            wall,
            dof_coords,
        })
    }

    pub fn degree(&self) -> usize {
        self.element.degree
    }

    /// Scalar dofs whose basis functions do not vanish on the boundary.
    pub fn wall_mask(&self) -> &[bool] {
        &self.wall
    }

    pub fn dof_coords(&self) -> &[[f64; 2]] {
        &self.dof_coords
    }

    /// Nodal interpolant; `f` returns one value per component.
    pub fn interpolate(self: &Arc<Self>, f: impl Fn([f64; 2]) -> Vec<f64>) -> CgFunction {
        let mut coeffs = vec![0.0; self.dim()];
        for (d, &x) in self.dof_coords.iter().enumerate() {
            let v = f(x);
            for comp in 0..self.components {
                coeffs[comp * self.n_scalar + d] = v[comp];
            }
        }
        FeFunction {
            space: self.clone(),
            coeffs,
        }
    }

    /// Zero every coefficient attached to a wall dof.
    pub fn apply_wall_mask(&self, coeffs: &mut [f64]) {
        for comp in 0..self.components {
            for (d, &w) in self.wall.iter().enumerate() {
                if w {
                    coeffs[comp * self.n_scalar + d] = 0.0;
                }
            }
        }
    }
}

impl FeSpace for CgSpace {
    fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }
    fn quadrature(&self) -> &Arc<Quadrature> {
        &self.quad
    }
    fn element(&self) -> &LagrangeElement {
        &self.element
    }
    fn tabulation(&self) -> &Tabulation {
        &self.tab
    }
    fn n_scalar(&self) -> usize {
        self.n_scalar
    }
    fn components(&self) -> usize {
        self.components
    }
    fn cell_dofs(&self, cell: usize) -> &[usize] {
        let n = self.element.n();
        &self.dofs[cell * n..(cell + 1) * n]
    }
}

/// Consistent mass matrix `M_ij = ⟨φ_i, φ_j⟩` under the space's volume rule.
pub fn mass_matrix<Sp: FeSpace>(space: &Sp) -> SparseColMat<usize, f64> {
    let mesh = space.mesh();
    let quad = space.quadrature();
    let tab = space.tabulation();
    let n = tab.n;
    let mut trip = Vec::new();
    for cell in 0..mesh.num_cells() {
        let det = mesh.geometry[cell].det.abs();
        let dofs = space.cell_dofs(cell);
        for i in 0..n {
            for j in 0..n {
                let m: f64 = (0..quad.n_vol())
                    .map(|q| quad.vol_weights[q] * tab.vol_val[q * n + i] * tab.vol_val[q * n + j])
                    .sum::<f64>()
                    * det;
                for comp in 0..space.components() {
                    trip.push((space.global(comp, dofs[i]), space.global(comp, dofs[j]), m));
                }
            }
        }
    }
    let trip = merge_triplets(trip);
    SparseColMat::try_new_from_triplets(space.dim(), space.dim(), &trip)
        .expect("mass matrix indices are in range")
}

/// Sort `(row, col, value)` entries and sum duplicates.
pub(crate) fn merge_triplets(mut t: Vec<(usize, usize, f64)>) -> Vec<Triplet<usize, usize, f64>> {
    t.sort_unstable_by_key(|&(r, c, _)| (c, r));
    let mut out: Vec<Triplet<usize, usize, f64>> = Vec::with_capacity(t.len());
    for (r, c, v) in t {
        match out.last_mut() {
            Some(last) if last.row == r && last.col == c => last.val += v,
            _ => out.push(Triplet::new(r, c, v)),
        }
    }
    out
}

/// Coefficient vector together with the space it lives in.
#[derive(Debug)]
pub struct FeFunction<Sp> {
    pub space: Arc<Sp>,
    pub coeffs: Vec<f64>,
}

impl<Sp> Clone for FeFunction<Sp> {
    fn clone(&self) -> Self {
        FeFunction {
            space: self.space.clone(),
            coeffs: self.coeffs.clone(),
        }
    }
}

pub type DgFunction = FeFunction<DgSpace>;
pub type CgFunction = FeFunction<CgSpace>;

impl<Sp: FeSpace> FeFunction<Sp> {
    pub fn zeros(space: Arc<Sp>) -> Self {
        let coeffs = vec![0.0; space.dim()];
        FeFunction { space, coeffs }
    }

    pub fn from_coeffs(space: Arc<Sp>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.dim() {
            return Err(Error::ContractViolation(format!(
                "coefficient length {} does not match space dimension {}",
                coeffs.len(),
                space.dim()
            )));
        }
        Ok(FeFunction { space, coeffs })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.space.mesh()
    }

    /// Local coefficients of component `comp` on `cell`.
    pub fn local(&self, cell: usize, comp: usize) -> Vec<f64> {
        self.space
            .cell_dofs(cell)
            .iter()
            .map(|&d| self.coeffs[self.space.global(comp, d)])
            .collect()
    }

    pub fn evaluate_component(&self, comp: usize, cell: usize, points: &[[f64; 2]]) -> Vec<f64> {
        let c = self.local(cell, comp);
        let el = self.space.element();
        points
            .iter()
            .map(|&xi| el.values(xi).iter().zip(&c).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn gradient_component(&self, comp: usize, cell: usize, points: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let c = self.local(cell, comp);
        let el = self.space.element();
        let geo = &self.space.mesh().geometry[cell];
        points
            .iter()
            .map(|&xi| {
                let mut g = [0.0; 2];
                for (d, ci) in el.grads(xi).iter().zip(&c) {
                    g[0] += d[0] * ci;
                    g[1] += d[1] * ci;
                }
                geo.grad_to_physical(g)
            })
            .collect()
    }

    /// Values of the first component at reference points of `cell`.
    pub fn evaluate(&self, cell: usize, points: &[[f64; 2]]) -> Vec<f64> {
        self.evaluate_component(0, cell, points)
    }

    /// Physical gradients of the first component at reference points of `cell`.
    pub fn gradient(&self, cell: usize, points: &[[f64; 2]]) -> Vec<[f64; 2]> {
        self.gradient_component(0, cell, points)
    }

    /// Value and physical gradient of component `comp` at a quadrature point.
    pub fn at(&self, p: &Point<'_>, comp: usize) -> SVal<f64> {
        let dofs = self.space.cell_dofs(p.cell);
        let geo = &self.space.mesh().geometry[p.cell];
        let mut v = 0.0;
        let mut g = [0.0; 2];
        if std::ptr::eq(self.space.quadrature().as_ref(), p.quad) {
            let tab = self.space.tabulation();
            let (vals, grads) = (tab.val(p.at), tab.grad(p.at));
            for (i, &d) in dofs.iter().enumerate() {
                let c = self.coeffs[self.space.global(comp, d)];
                v += c * vals[i];
                g[0] += c * grads[i][0];
                g[1] += c * grads[i][1];
            }
        } else {
            let el = self.space.element();
            let (vals, grads) = (el.values(p.xi), el.grads(p.xi));
            for (i, &d) in dofs.iter().enumerate() {
                let c = self.coeffs[self.space.global(comp, d)];
                v += c * vals[i];
                g[0] += c * grads[i][0];
                g[1] += c * grads[i][1];
            }
        }
        SVal {
            v,
            g: geo.grad_to_physical(g),
        }
    }

    /// Integral of the first component under the volume rule.
    pub fn integral(&self) -> f64 {
        let mesh = self.space.mesh();
        let quad = self.space.quadrature();
        let mut total = 0.0;
        for cell in 0..mesh.num_cells() {
            let det = mesh.geometry[cell].det.abs();
            let vals = self.evaluate(cell, &quad.vol_points);
            total += det * vals.iter().zip(&quad.vol_weights).map(|(v, w)| v * w).sum::<f64>();
        }
        total
    }
}

/// `π_h f` for any scalar field: evaluate at volume points, project per cell.
pub fn project_l2(f: &dyn ScalarField, target: &Arc<DgSpace>) -> Result<DgFunction> {
    let mesh = target.mesh().clone();
    let quad = target.quadrature().clone();
    let nq = quad.n_vol();
    let mut values = vec![0.0; mesh.num_cells() * nq];
    for cell in 0..mesh.num_cells() {
        for q in 0..nq {
            values[cell * nq + q] = f.eval(&Point::vol(&mesh, &quad, cell, q)).v;
        }
    }
    target.project_values(&values)
}
