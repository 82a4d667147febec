//! Fully implicit discrete-gradient time step for `(u, ρ, s)`.
//!
//! Unknowns are stacked as `[u (component-major CG coefficients), ρ, s]`.
//! Residual rows use the same layout: momentum rows against the CG basis,
//! mass and entropy rows against the DG basis. Rows of velocity dofs on a
//! wall are replaced by the constraint `u_i = 0`.
//!
//! The Jacobian is obtained by evaluating the very same local residual code
//! with forward-mode dual numbers seeded on the unknowns of one cell (or the
//! two cells of an interior edge).

use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::SparseColMat;

use crate::error::{ensure_positive, Error, Location, Result};
use crate::exec::{self, Execution};
use crate::forms::{
    a_integrand, b_cell_integrand, b_edge_integrand, d_boundary_integrand, d_cell_integrand, d_edge_integrand,
    e_boundary_integrand, stress_contract, upwind_integrand, BoundaryCondition, BoundaryData, HeatParams,
    ViscosityParams,
};
use crate::gas::{averaged_quotients, temp, GasParams};
use crate::mesh::{edge_reference_point, CellGeometry, EdgeRef, Mesh};
use crate::scalar::{Dual, Real};
use crate::spaces::{merge_triplets, At, CgFunction, CgSpace, DgFunction, DgSpace, FeFunction, FeSpace, Quadrature, SVal, VVal};

/// Discrete state `(u_k, ρ_k, s_k)` at time `t_k`.
#[derive(Debug, Clone)]
pub struct State {
    pub u: CgFunction,
    pub rho: DgFunction,
    pub s: DgFunction,
    pub time: f64,
}

impl State {
    pub fn new(u: CgFunction, rho: DgFunction, s: DgFunction, time: f64) -> Result<Self> {
        if u.space.components() != 2 {
            return Err(Error::ContractViolation("velocity needs a 2-component CG space".into()));
        }
        if !Arc::ptr_eq(&rho.space, &s.space) {
            return Err(Error::ContractViolation("density and entropy must share one DG space".into()));
        }
        if !Arc::ptr_eq(u.mesh(), rho.mesh()) {
            return Err(Error::ContractViolation("velocity and density live on different meshes".into()));
        }
        if !Arc::ptr_eq(u.space.quadrature(), rho.space.quadrature()) {
            return Err(Error::ContractViolation("velocity and density spaces use different quadratures".into()));
        }
        Ok(State { u, rho, s, time })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.rho.mesh()
    }

    pub fn dg(&self) -> &Arc<DgSpace> {
        &self.rho.space
    }

    pub fn cg(&self) -> &Arc<CgSpace> {
        &self.u.space
    }

    pub fn quadrature(&self) -> &Arc<Quadrature> {
        self.rho.space.quadrature()
    }

    /// Number of scalar unknowns, `dim U_h + 2 dim V_h`.
    pub fn n_unknowns(&self) -> usize {
        self.u.coeffs.len() + 2 * self.rho.coeffs.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.n_unknowns());
        x.extend_from_slice(&self.u.coeffs);
        x.extend_from_slice(&self.rho.coeffs);
        x.extend_from_slice(&self.s.coeffs);
        x
    }

    /// A state on the same spaces with coefficients taken from `x`.
    pub fn with_vec(&self, x: &[f64], time: f64) -> State {
        let nu = self.u.coeffs.len();
        let nd = self.rho.coeffs.len();
        State {
            u: FeFunction {
                space: self.u.space.clone(),
                coeffs: x[..nu].to_vec(),
            },
            rho: FeFunction {
                space: self.rho.space.clone(),
                coeffs: x[nu..nu + nd].to_vec(),
            },
            s: FeFunction {
                space: self.s.space.clone(),
                coeffs: x[nu + nd..nu + 2 * nd].to_vec(),
            },
            time,
        }
    }

    /// Checks `ρ > 0` and `T(ρ, s) > 0` at every volume and edge quadrature
    /// point.
    pub fn check_positivity(&self, gp: &GasParams) -> Result<()> {
        let mesh = self.mesh();
        let quad = self.quadrature();
        let check = |p: &crate::spaces::Point<'_>, loc: Location| -> Result<()> {
            let rho = self.rho.at(p, 0).v;
            ensure_positive("density", rho, loc)?;
            ensure_positive("temperature", temp(rho, self.s.at(p, 0).v, gp.gamma), loc)
        };
        for cell in 0..mesh.num_cells() {
            for q in 0..quad.n_vol() {
                check(&crate::spaces::Point::vol(mesh, quad, cell, q), Location::Cell { cell, point: q })?;
            }
        }
        for (ei, e) in mesh.interior_edges.iter().enumerate() {
            for q in 0..quad.n_edge() {
                for side in 0..2 {
                    let p = crate::spaces::Point::edge(mesh, quad, e.cells[side], e.local[side], side == 1, q);
                    check(&p, Location::InteriorEdge { edge: ei, point: q })?;
                }
            }
        }
        for (bi, b) in mesh.boundary_edges.iter().enumerate() {
            for q in 0..quad.n_edge() {
                let p = crate::spaces::Point::edge(mesh, quad, b.cell, b.local, false, q);
                check(&p, Location::BoundaryEdge { edge: bi, point: q })?;
            }
        }
        Ok(())
    }

    /// `π_h T(ρ, s)`.
    pub fn temperature(&self, gp: &GasParams) -> Result<DgFunction> {
        let mesh = self.mesh();
        let quad = self.quadrature();
        let nq = quad.n_vol();
        let mut vals = vec![0.0; mesh.num_cells() * nq];
        for cell in 0..mesh.num_cells() {
            for q in 0..nq {
                let p = crate::spaces::Point::vol(mesh, quad, cell, q);
                let rho = self.rho.at(&p, 0).v;
                ensure_positive("density", rho, Location::Cell { cell, point: q })?;
                vals[cell * nq + q] = temp(rho, self.s.at(&p, 0).v, gp.gamma);
            }
        }
        self.dg().project_values(&vals)
    }
}

/// Parameters of one time step.
#[derive(Debug, Clone)]
pub struct StepConfig {
    pub dt: f64,
    /// Absolute tolerance on `‖R‖_∞`, scaled by `1 + ‖R(state_k, state_k)‖_∞`.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Halve the Newton update while the residual norm does not decrease.
    pub line_search: bool,
    pub upwind: bool,
    /// Extra Newton updates after convergence, each kept only if it lowers
    /// the residual.
    pub polish: usize,
    pub bc: BoundaryCondition,
    pub visc: ViscosityParams,
    pub heat: HeatParams,
    pub gas: GasParams,
    pub exec: Execution,
}

impl StepConfig {
    pub const DEFAULT_DT: f64 = 0.4;
    pub const DEFAULT_TOL: f64 = 1e-10;

    pub fn new(bc: BoundaryCondition, visc: ViscosityParams, heat: HeatParams, gas: GasParams) -> Self {
        StepConfig {
            dt: Self::DEFAULT_DT,
            newton_tol: Self::DEFAULT_TOL,
            newton_max_iter: 25,
            line_search: true,
            upwind: false,
            polish: 1,
            bc,
            visc,
            heat,
            gas,
            exec: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.newton_tol > 0.0) {
            return Err(Error::InvalidArgument(format!("newton_tol must be positive, got {}", self.newton_tol)));
        }
        if self.newton_max_iter == 0 {
            return Err(Error::InvalidArgument("newton_max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Residual of the discrete system split into its three blocks.
#[derive(Debug, Clone)]
pub struct Residual {
    pub momentum: Vec<f64>,
    pub mass: Vec<f64>,
    pub entropy: Vec<f64>,
}

impl Residual {
    pub fn norm_inf(&self) -> f64 {
        norm_inf(&self.momentum).max(norm_inf(&self.mass)).max(norm_inf(&self.entropy))
    }

    pub fn len(&self) -> usize {
        self.momentum.len() + self.mass.len() + self.entropy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Convergence record of one [`advance`] call.
#[derive(Debug, Clone, Copy)]
pub struct NewtonStats {
    pub iterations: usize,
    pub residual: f64,
    pub initial_residual: f64,
}

/// Residual of the scheme for the step `state_k → trial`.
pub fn residual(state_k: &State, trial: &State, cfg: &StepConfig) -> Result<Residual> {
    same_spaces(state_k, trial)?;
    let asm = Assembler::new(state_k, cfg)?;
    let r = asm.residual(&trial.to_vec())?;
    let nu = state_k.u.coeffs.len();
    let nd = state_k.rho.coeffs.len();
    Ok(Residual {
        momentum: r[..nu].to_vec(),
        mass: r[nu..nu + nd].to_vec(),
        entropy: r[nu + nd..].to_vec(),
    })
}

/// Residual together with the sparse Jacobian `∂R/∂trial`.
pub fn jacobian(state_k: &State, trial: &State, cfg: &StepConfig) -> Result<(Vec<f64>, SparseColMat<usize, f64>)> {
    same_spaces(state_k, trial)?;
    let asm = Assembler::new(state_k, cfg)?;
    asm.residual_and_jacobian(&trial.to_vec())
}

/// Advances one step of length `cfg.dt`.
pub fn advance(state_k: &State, cfg: &StepConfig) -> Result<State> {
    advance_with_stats(state_k, cfg).map(|(s, _)| s)
}

pub fn advance_with_stats(state_k: &State, cfg: &StepConfig) -> Result<(State, NewtonStats)> {
    cfg.validate()?;
    state_k.check_positivity(&cfg.gas)?;
    let asm = Assembler::new(state_k, cfg)?;
    let mut x = state_k.to_vec();
    let r0 = norm_inf(&asm.residual(&x)?);
    let target = cfg.newton_tol * (1.0 + r0);
    let fail = |iterations: usize, residual: f64| Error::NonConvergence { iterations, residual };

    let mut it = 0;
    let mut polished = 0;
    let mut last = r0;
    loop {
        let (r, jac) = match asm.residual_and_jacobian(&x) {
            Ok(v) => v,
            Err(Error::Positivity { .. }) => return Err(fail(it, last)),
            Err(e) => return Err(e),
        };
        let nr = norm_inf(&r);
        last = nr;
        if !nr.is_finite() {
            return Err(fail(it, nr));
        }
        let converged = nr <= target;
        if converged && polished >= cfg.polish {
            break;
        }
        if !converged && it >= cfg.newton_max_iter {
            return Err(fail(it, nr));
        }
        let delta = solve(&jac, &r)?;
        let step = |alpha: f64| -> Vec<f64> { x.iter().zip(&delta).map(|(a, d)| a - alpha * d).collect() };

        if converged {
            polished += 1;
            let cand = step(1.0);
            if let Ok(rc) = asm.residual(&cand) {
                let nc = norm_inf(&rc);
                if nc < nr {
                    x = cand;
                    last = nc;
                    if polished < cfg.polish {
                        continue;
                    }
                }
            }
            break;
        }

        it += 1;
        let mut alpha = 1.0;
        let mut cand = step(alpha);
        if cfg.line_search {
            loop {
                let ok = matches!(asm.residual(&cand), Ok(rc) if norm_inf(&rc) < nr);
                if ok || alpha < 1.0 / 256.0 {
                    break;
                }
                alpha *= 0.5;
                cand = step(alpha);
            }
        }
        x = cand;
    }
    let next = state_k.with_vec(&x, state_k.time + cfg.dt);
    Ok((
        next,
        NewtonStats {
            iterations: it,
            residual: last,
            initial_residual: r0,
        },
    ))
}

fn same_spaces(a: &State, b: &State) -> Result<()> {
    if Arc::ptr_eq(&a.u.space, &b.u.space) && Arc::ptr_eq(&a.rho.space, &b.rho.space) && Arc::ptr_eq(&a.s.space, &b.s.space)
    {
        Ok(())
    } else {
        Err(Error::ContractViolation("states live on different spaces".into()))
    }
}

fn solve(jac: &SparseColMat<usize, f64>, r: &[f64]) -> Result<Vec<f64>> {
    let lu = jac.sp_lu().map_err(|e| Error::LinearSolve(format!("{e:?}")))?;
    let rhs = faer::Col::<f64>::from_fn(r.len(), |i| r[i]);
    let sol = lu.solve(&rhs);
    let out: Vec<f64> = (0..r.len()).map(|i| sol[i]).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::LinearSolve("singular Newton matrix".into()));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// local assembly

/// Coefficients of the trial and previous state on one cell, together with
/// the per-cell projections entering the scheme.
struct Local<S> {
    u: [Vec<S>; 2],
    rho: Vec<S>,
    s: Vec<S>,
    d2: Vec<S>,
    /// `½π_h(u_k·u') − D₁ε − π_h φ`.
    x: Vec<S>,
    uk: [Vec<f64>; 2],
    rhok: Vec<f64>,
    sk: Vec<f64>,
}

/// Local fields at one quadrature point.
struct PointVals<S> {
    u_half: VVal<S>,
    rho_half: SVal<S>,
    s_half: SVal<S>,
    x: SVal<S>,
    d2: SVal<S>,
    /// `(ρu)_{k+½}` and `D_Δt(ρu)`.
    rho_u_half: [S; 2],
    d_rho_u: [S; 2],
    d_rho: S,
    d_s: S,
}

/// Basis tables of one cell at one point, gradients physical.
struct Basis<'t> {
    cg_val: &'t [f64],
    cg_grad: Vec<[f64; 2]>,
    dg_val: &'t [f64],
    dg_grad: Vec<[f64; 2]>,
}

struct Assembler<'a> {
    mesh: &'a Mesh,
    quad: &'a Quadrature,
    cg: &'a CgSpace,
    dg: &'a DgSpace,
    cfg: &'a StepConfig,
    ncg: usize,
    ndg: usize,
    nc: usize,
    n: usize,
    maps: Vec<usize>,
    old: Vec<f64>,
    phi: Vec<f64>,
    wall: Vec<bool>,
}

fn unit_s<S: Real>(k: usize) -> SVal<S> {
    let mut t = SVal::constant(S::zero());
    match k {
        0 => t.v = S::cst(1.0),
        _ => t.g[k - 1] = S::cst(1.0),
    }
    t
}

/// Coefficients `(A, B₀, B₁)` of a functional linear in a scalar test
/// function: `f(θ) = A θ + B·∇θ`.
fn lin3<S: Real>(f: impl Fn(&SVal<S>) -> S) -> [S; 3] {
    [f(&unit_s(0)), f(&unit_s(1)), f(&unit_s(2))]
}

fn eval_s<S: Real>(c: &[S], val: &[f64], grad: &[[f64; 2]]) -> SVal<S> {
    let mut v = S::zero();
    let mut g = [S::zero(); 2];
    for i in 0..c.len() {
        v += c[i] * val[i];
        g[0] += c[i] * grad[i][0];
        g[1] += c[i] * grad[i][1];
    }
    SVal { v, g }
}

fn eval_f(c: &[f64], val: &[f64], grad: &[[f64; 2]]) -> SVal<f64> {
    eval_s(c, val, grad)
}

fn half<S: Real>(a: SVal<f64>, b: SVal<S>) -> SVal<S> {
    SVal::lift(a).add(b).scale(0.5)
}

fn physical(geo: &CellGeometry, g: &[[f64; 2]]) -> Vec<[f64; 2]> {
    g.iter().map(|&r| geo.grad_to_physical(r)).collect()
}

impl<'a> Assembler<'a> {
    fn new(state: &'a State, cfg: &'a StepConfig) -> Result<Self> {
        let mesh: &Mesh = state.mesh();
        let quad: &Quadrature = state.quadrature();
        let cg: &CgSpace = state.cg();
        let dg: &DgSpace = state.dg();
        let ncg = cg.n_local();
        let ndg = dg.n_local();
        let nc = 2 * ncg + 2 * ndg;
        let off_rho = cg.dim();
        let off_s = off_rho + dg.dim();
        let n = off_s + dg.dim();
        let mut maps = Vec::with_capacity(mesh.num_cells() * nc);
        for cell in 0..mesh.num_cells() {
            for comp in 0..2 {
                maps.extend(cg.cell_dofs(cell).iter().map(|&d| cg.global(comp, d)));
            }
            maps.extend(dg.cell_dofs(cell).iter().map(|&d| off_rho + d));
            maps.extend(dg.cell_dofs(cell).iter().map(|&d| off_s + d));
        }
        let mut wall = vec![false; n];
        for (d, &w) in cg.wall_mask().iter().enumerate() {
            if w {
                wall[cg.global(0, d)] = true;
                wall[cg.global(1, d)] = true;
            }
        }
        let nq = quad.n_vol();
        let mut phi = vec![0.0; mesh.num_cells() * ndg];
        let mut vals = vec![0.0; nq];
        for cell in 0..mesh.num_cells() {
            for (q, v) in vals.iter_mut().enumerate() {
                *v = cfg.gas.phi(mesh.geometry[cell].map(quad.vol_points[q]));
            }
            dg.project_local(&vals, &mut phi[cell * ndg..(cell + 1) * ndg]);
        }
        Ok(Assembler {
            mesh,
            quad,
            cg,
            dg,
            cfg,
            ncg,
            ndg,
            nc,
            n,
            maps,
            old: state.to_vec(),
            phi,
            wall,
        })
    }

    fn map(&self, cell: usize) -> &[usize] {
        &self.maps[cell * self.nc..(cell + 1) * self.nc]
    }

    fn basis(&self, cell: usize, at: At) -> Basis<'_> {
        let geo = &self.mesh.geometry[cell];
        let (tc, td) = (self.cg.tabulation(), self.dg.tabulation());
        Basis {
            cg_val: tc.val(at),
            cg_grad: physical(geo, tc.grad(at)),
            dg_val: td.val(at),
            dg_grad: physical(geo, td.grad(at)),
        }
    }

    fn local<S: Real>(&self, cell: usize, x: &[f64], seed: impl Fn(f64, usize) -> S) -> Result<Local<S>> {
        let (ncg, ndg) = (self.ncg, self.ndg);
        let map = self.map(cell);
        let new: Vec<S> = map.iter().enumerate().map(|(k, &g)| seed(x[g], k)).collect();
        let old: Vec<f64> = map.iter().map(|&g| self.old[g]).collect();
        let u = [new[..ncg].to_vec(), new[ncg..2 * ncg].to_vec()];
        let uk = [old[..ncg].to_vec(), old[ncg..2 * ncg].to_vec()];
        let rho = new[2 * ncg..2 * ncg + ndg].to_vec();
        let s = new[2 * ncg + ndg..].to_vec();
        let rhok = old[2 * ncg..2 * ncg + ndg].to_vec();
        let sk = old[2 * ncg + ndg..].to_vec();

        let nq = self.quad.n_vol();
        let gamma = self.cfg.gas.gamma;
        let (tc, td) = (self.cg.tabulation(), self.dg.tabulation());
        let mut d1q = Vec::with_capacity(nq);
        let mut d2q = Vec::with_capacity(nq);
        let mut uuq = Vec::with_capacity(nq);
        for q in 0..nq {
            let (vc, vd) = (tc.val(At::Vol(q)), td.val(At::Vol(q)));
            let dot = |c: &[f64]| c.iter().zip(vd).map(|(a, b)| a * b).sum::<f64>();
            let dots = |c: &[S]| {
                let mut acc = S::zero();
                for (a, b) in c.iter().zip(vd) {
                    acc += *a * *b;
                }
                acc
            };
            let (rk, sk_q) = (dot(&rhok), dot(&sk));
            let (r1, s1) = (dots(&rho), dots(&s));
            let loc = Location::Cell { cell, point: q };
            ensure_positive("density", rk, loc)?;
            ensure_positive("density", r1.value(), loc)?;
            let (d1, d2) = averaged_quotients(S::cst(rk), r1, S::cst(sk_q), s1, gamma);
            d1q.push(d1);
            d2q.push(d2);
            let mut uu = S::zero();
            for comp in 0..2 {
                let mut a = 0.0;
                let mut b = S::zero();
                for i in 0..ncg {
                    a += uk[comp][i] * vc[i];
                    b += u[comp][i] * vc[i];
                }
                uu += b * a;
            }
            uuq.push(uu);
        }
        let mut d1 = vec![S::zero(); ndg];
        let mut d2 = vec![S::zero(); ndg];
        let mut uu = vec![S::zero(); ndg];
        self.dg.project_local(&d1q, &mut d1);
        self.dg.project_local(&d2q, &mut d2);
        self.dg.project_local(&uuq, &mut uu);
        let phi = &self.phi[cell * ndg..(cell + 1) * ndg];
        let x = (0..ndg).map(|i| uu[i] * 0.5 - d1[i] - phi[i]).collect();
        Ok(Local {
            u,
            rho,
            s,
            d2,
            x,
            uk,
            rhok,
            sk,
        })
    }

    fn point<S: Real>(&self, l: &Local<S>, b: &Basis<'_>) -> PointVals<S> {
        let dt = self.cfg.dt;
        let uk = VVal::from_components(eval_f(&l.uk[0], b.cg_val, &b.cg_grad), eval_f(&l.uk[1], b.cg_val, &b.cg_grad));
        let u1 = VVal::from_components(eval_s(&l.u[0], b.cg_val, &b.cg_grad), eval_s(&l.u[1], b.cg_val, &b.cg_grad));
        let rk = eval_f(&l.rhok, b.dg_val, &b.dg_grad);
        let r1 = eval_s(&l.rho, b.dg_val, &b.dg_grad);
        let sk = eval_f(&l.sk, b.dg_val, &b.dg_grad);
        let s1 = eval_s(&l.s, b.dg_val, &b.dg_grad);
        let mut rho_u_half = [S::zero(); 2];
        let mut d_rho_u = [S::zero(); 2];
        for i in 0..2 {
            rho_u_half[i] = (r1.v * u1.v[i] + rk.v * uk.v[i]) * 0.5;
            d_rho_u[i] = (r1.v * u1.v[i] - rk.v * uk.v[i]) / dt;
        }
        PointVals {
            u_half: VVal::lift(uk).add(u1).scale(0.5),
            rho_half: half(rk, r1),
            s_half: half(sk, s1),
            x: eval_s(&l.x, b.dg_val, &b.dg_grad),
            d2: eval_s(&l.d2, b.dg_val, &b.dg_grad),
            rho_u_half,
            d_rho_u,
            d_rho: (r1.v - rk.v) / dt,
            d_s: (s1.v - sk.v) / dt,
        }
    }

    /// Volume and boundary-edge contributions of one cell.
    fn cell_residual<S: Real>(&self, cell: usize, l: &Local<S>) -> Result<Vec<S>> {
        let (ncg, ndg) = (self.ncg, self.ndg);
        let (mom, mass, ent) = (0, 2 * ncg, 2 * ncg + ndg);
        let mut r = vec![S::zero(); self.nc];
        let cfg = self.cfg;
        let kappa = cfg.heat.kappa;
        let det = self.mesh.geometry[cell].det.abs();

        for q in 0..self.quad.n_vol() {
            let w = self.quad.vol_weights[q] * det;
            let b = self.basis(cell, At::Vol(q));
            let p = self.point(l, &b);
            ensure_positive("temperature", p.d2.v.value(), Location::Cell { cell, point: q })?;

            let momentum = |v: &VVal<S>| {
                p.d_rho_u[0] * v.v[0] + p.d_rho_u[1] * v.v[1] + a_integrand(p.rho_u_half, &p.u_half, v)
                    + b_cell_integrand(&p.x, p.rho_half.v, v.v)
                    - b_cell_integrand(&p.d2, p.s_half.v, v.v)
                    + stress_contract(&p.u_half, v, &cfg.visc)
            };
            for c in 0..2 {
                let mut t = VVal::zero();
                t.v[c] = S::cst(1.0);
                let f0 = momentum(&t);
                let mut g = [S::zero(); 2];
                for (j, gj) in g.iter_mut().enumerate() {
                    let mut t = VVal::zero();
                    t.g[c][j] = S::cst(1.0);
                    *gj = momentum(&t);
                }
                for a in 0..ncg {
                    r[mom + c * ncg + a] +=
                        f0 * (w * b.cg_val[a]) + g[0] * (w * b.cg_grad[a][0]) + g[1] * (w * b.cg_grad[a][1]);
                }
            }

            let m = lin3(|t: &SVal<S>| p.d_rho * t.v + b_cell_integrand(t, p.rho_half.v, p.u_half.v));
            let visc_heat = stress_contract(&p.u_half, &p.u_half, &cfg.visc);
            let e = lin3(|t: &SVal<S>| {
                let th = p.d2.mul(*t);
                p.d_s * th.v + b_cell_integrand(&th, p.s_half.v, p.u_half.v)
                    - d_cell_integrand(S::cst(1.0), &p.d2, &th, kappa)
                    - t.v * visc_heat
                    + d_cell_integrand(t.v, &p.d2, &p.d2, kappa)
            });
            for a in 0..ndg {
                let (v, g) = (w * b.dg_val[a], [w * b.dg_grad[a][0], w * b.dg_grad[a][1]]);
                r[mass + a] += m[0] * v + m[1] * g[0] + m[2] * g[1];
                r[ent + a] += e[0] * v + e[1] * g[0] + e[2] * g[1];
            }
        }

        if matches!(cfg.bc, BoundaryCondition::HomogeneousNeumann) {
            return Ok(r);
        }
        for local in 0..3 {
            let EdgeRef::Boundary { edge: bi } = self.mesh.cell_edges[cell][local] else {
                continue;
            };
            let be = &self.mesh.boundary_edges[bi];
            let eta_h = cfg.heat.eta / be.length;
            for q in 0..self.quad.n_edge() {
                let w = self.quad.edge_weights[q] * be.length;
                let loc = Location::BoundaryEdge { edge: bi, point: q };
                let at = At::Edge { local, rev: false, q };
                let b = self.basis(cell, at);
                let d2 = eval_s(&l.d2, b.dg_val, &b.dg_grad);
                ensure_positive("temperature", d2.v.value(), loc)?;
                let xq = self.mesh.geometry[cell].map(edge_reference_point(local, self.quad.edge_points[q]));
                let data: BoundaryData = cfg.bc.data_at(xq, be.tag, loc)?;
                let e = lin3(|t: &SVal<S>| {
                    let th = d2.mul(*t);
                    -d_boundary_integrand(data, S::cst(1.0), &d2, &th, be.normal, kappa)
                        + d_boundary_integrand(data, t.v, &d2, &d2, be.normal, kappa)
                        + e_boundary_integrand(data, t.v, &d2, be.normal, kappa, eta_h)
                });
                for a in 0..ndg {
                    r[ent + a] += e[0] * (w * b.dg_val[a]) + e[1] * (w * b.dg_grad[a][0]) + e[2] * (w * b.dg_grad[a][1]);
                }
            }
        }
        Ok(r)
    }

    /// Interior-edge contributions; rows `0..nc` belong to the first cell,
    /// `nc..2nc` to the second.
    fn edge_residual<S: Real>(&self, ei: usize, l1: &Local<S>, l2: &Local<S>) -> Result<Vec<S>> {
        let (ncg, ndg, nc) = (self.ncg, self.ndg, self.nc);
        let (mass, ent) = (2 * ncg, 2 * ncg + ndg);
        let e = &self.mesh.interior_edges[ei];
        let n = e.normal;
        let cfg = self.cfg;
        let kappa = cfg.heat.kappa;
        let eta_h = cfg.heat.eta / e.length;
        let upwind = cfg.upwind;
        let mut r = vec![S::zero(); 2 * nc];
        let zero = SVal::constant(S::zero());

        for q in 0..self.quad.n_edge() {
            let w = self.quad.edge_weights[q] * e.length;
            let b1 = self.basis(e.cells[0], At::Edge { local: e.local[0], rev: false, q });
            let b2 = self.basis(e.cells[1], At::Edge { local: e.local[1], rev: true, q });
            let p1 = self.point(l1, &b1);
            let p2 = self.point(l2, &b2);
            let favg = (p1.d2.v + p2.d2.v) * 0.5;
            ensure_positive("temperature average", favg.value(), Location::InteriorEdge { edge: ei, point: q })?;
            let un = ((p1.u_half.v[0] + p2.u_half.v[0]) * n[0] + (p1.u_half.v[1] + p2.u_half.v[1]) * n[1]) * 0.5;
            let one = S::cst(1.0);

            // momentum: coefficient of v·n
            let mut km = b_edge_integrand(one, p1.x.v, p2.x.v, p1.rho_half.v, p2.rho_half.v)
                - b_edge_integrand(one, p1.d2.v, p2.d2.v, p1.s_half.v, p2.s_half.v);
            if upwind {
                km += upwind_integrand(un, one, p1.x.v, p2.x.v, p1.rho_half.v, p2.rho_half.v)
                    - upwind_integrand(un, one, p1.d2.v, p2.d2.v, p1.s_half.v, p2.s_half.v);
            }
            for c in 0..2 {
                let kc = km * (w * n[c]);
                for a in 0..ncg {
                    r[c * ncg + a] += kc * b1.cg_val[a];
                }
            }

            // mass: coefficient of θ₁ − θ₂
            let mut kr = b_edge_integrand(un, one, S::zero(), p1.rho_half.v, p2.rho_half.v);
            if upwind {
                kr += upwind_integrand(un, un, one, S::zero(), p1.rho_half.v, p2.rho_half.v);
            }
            for a in 0..ndg {
                r[mass + a] += kr * (w * b1.dg_val[a]);
                r[nc + mass + a] -= kr * (w * b2.dg_val[a]);
            }

            let ent_f = |t1: &SVal<S>, t2: &SVal<S>| {
                let (th1, th2) = (p1.d2.mul(*t1), p2.d2.mul(*t2));
                let mut v = b_edge_integrand(un, th1.v, th2.v, p1.s_half.v, p2.s_half.v);
                if upwind {
                    v += upwind_integrand(un, un, th1.v, th2.v, p1.s_half.v, p2.s_half.v);
                }
                v - d_edge_integrand(one, one, &p1.d2, &p2.d2, &th1, &th2, n, kappa, eta_h)
                    + d_edge_integrand(t1.v, t2.v, &p1.d2, &p2.d2, &p1.d2, &p2.d2, n, kappa, eta_h)
            };
            let e1 = lin3(|t| ent_f(t, &zero));
            let e2 = lin3(|t| ent_f(&zero, t));
            for a in 0..ndg {
                r[ent + a] += e1[0] * (w * b1.dg_val[a]) + e1[1] * (w * b1.dg_grad[a][0]) + e1[2] * (w * b1.dg_grad[a][1]);
                r[nc + ent + a] +=
                    e2[0] * (w * b2.dg_val[a]) + e2[1] * (w * b2.dg_grad[a][0]) + e2[2] * (w * b2.dg_grad[a][1]);
            }
        }
        Ok(r)
    }

    fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        let ex = self.cfg.exec;
        let cells = exec::try_map_indexed(ex, self.mesh.num_cells(), |cell| {
            let l = self.local(cell, x, |v, _| v)?;
            self.cell_residual(cell, &l)
        })?;
        let edges = exec::try_map_indexed(ex, self.mesh.interior_edges.len(), |ei| {
            let e = &self.mesh.interior_edges[ei];
            let l1 = self.local(e.cells[0], x, |v, _| v)?;
            let l2 = self.local(e.cells[1], x, |v, _| v)?;
            self.edge_residual(ei, &l1, &l2)
        })?;
        let mut r = vec![0.0; self.n];
        for (cell, rl) in cells.iter().enumerate() {
            for (i, &g) in self.map(cell).iter().enumerate() {
                r[g] += rl[i];
            }
        }
        for (ei, rl) in edges.iter().enumerate() {
            let e = &self.mesh.interior_edges[ei];
            for side in 0..2 {
                for (i, &g) in self.map(e.cells[side]).iter().enumerate() {
                    r[g] += rl[side * self.nc + i];
                }
            }
        }
        for (g, &w) in self.wall.iter().enumerate() {
            if w {
                r[g] = x[g];
            }
        }
        Ok(r)
    }

    fn residual_and_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, SparseColMat<usize, f64>)> {
        match slot_bucket(self.nc) {
            8 => self.jac_impl::<8, 16>(x),
            12 => self.jac_impl::<12, 24>(x),
            18 => self.jac_impl::<18, 36>(x),
            24 => self.jac_impl::<24, 48>(x),
            32 => self.jac_impl::<32, 64>(x),
            _ => self.jac_impl::<40, 80>(x),
        }
    }

    fn jac_impl<const M: usize, const M2: usize>(&self, x: &[f64]) -> Result<(Vec<f64>, SparseColMat<usize, f64>)> {
        let nc = self.nc;
        debug_assert!(nc <= M && 2 * nc <= M2);
        let ex = self.cfg.exec;
        let cells = exec::try_map_indexed(ex, self.mesh.num_cells(), |cell| {
            let l = self.local(cell, x, |v, k| Dual::<M>::var(v, k))?;
            let r = self.cell_residual(cell, &l)?;
            Ok::<_, Error>(r.iter().map(|d| (d.v, d.d[..nc].to_vec())).collect::<Vec<_>>())
        })?;
        let edges = exec::try_map_indexed(ex, self.mesh.interior_edges.len(), |ei| {
            let e = &self.mesh.interior_edges[ei];
            let l1 = self.local(e.cells[0], x, |v, k| Dual::<M2>::var(v, k))?;
            let l2 = self.local(e.cells[1], x, |v, k| Dual::<M2>::var(v, nc + k))?;
            let r = self.edge_residual(ei, &l1, &l2)?;
            Ok::<_, Error>(r.iter().map(|d| (d.v, d.d[..2 * nc].to_vec())).collect::<Vec<_>>())
        })?;

        let mut r = vec![0.0; self.n];
        let mut trip = Vec::with_capacity(cells.len() * nc * nc + edges.len() * 4 * nc * nc + self.n);
        let mut scatter = |rows: &[usize], cols: &[usize], local: &[(f64, Vec<f64>)]| {
            for (i, &gi) in rows.iter().enumerate() {
                if self.wall[gi] {
                    continue;
                }
                r[gi] += local[i].0;
                for (j, &gj) in cols.iter().enumerate() {
                    let v = local[i].1[j];
                    if v != 0.0 {
                        trip.push((gi, gj, v));
                    }
                }
            }
        };
        for (cell, local) in cells.iter().enumerate() {
            let m = self.map(cell);
            scatter(m, m, local);
        }
        let mut cols = Vec::with_capacity(2 * nc);
        let mut rows = Vec::with_capacity(2 * nc);
        for (ei, local) in edges.iter().enumerate() {
            let e = &self.mesh.interior_edges[ei];
            cols.clear();
            cols.extend_from_slice(self.map(e.cells[0]));
            cols.extend_from_slice(self.map(e.cells[1]));
            rows.clear();
            rows.extend_from_slice(&cols);
            scatter(&rows, &cols, local);
        }
        for (g, &w) in self.wall.iter().enumerate() {
            if w {
                r[g] = x[g];
                trip.push((g, g, 1.0));
            }
        }
        let trip = merge_triplets(trip);
        let jac = SparseColMat::try_new_from_triplets(self.n, self.n, &trip)
            .map_err(|e| Error::LinearSolve(format!("{e:?}")))?;
        Ok((r, jac))
    }
}

/// Smallest dual width holding the unknowns of one cell.
fn slot_bucket(nc: usize) -> usize {
    [8, 12, 18, 24, 32, 40].into_iter().find(|&b| b >= nc).expect("at most 40 local unknowns (q, r ≤ 3)")
}

#[cfg(test)]
mod tests;
