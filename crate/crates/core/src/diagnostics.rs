//! Conserved and monitored functionals of discrete states and steps.
//!
//! Everything is evaluated with the volume and edge rules of the state's
//! quadrature, the same rules the stepper assembles with.

use std::sync::Arc;

use crate::error::{ensure_positive, Error, Location, Result};
use crate::exec;
use crate::forms::{
    b_cell_integrand, b_edge_integrand, d_boundary_integrand, d_cell_integrand, d_edge_integrand,
    e_boundary_integrand, stress_contract, upwind_integrand, BoundaryCondition, BoundaryData, Forms,
};
use crate::gas::{discrete_gradients, eps, GasParams};
use crate::mesh::{EdgeRef, Mesh};
use crate::spaces::{At, Const, DgFunction, Point, SVal, VVal};
use crate::stepper::{State, StepConfig};

/// One row of the diagnostics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagRecord {
    pub time: f64,
    pub total_energy: f64,
    pub total_mass: f64,
    pub total_entropy: f64,
    /// `‖u‖_{L²}`.
    pub kinetic_l2: f64,
    /// `∫ ρ|u|²`.
    pub kinetic_rho: f64,
    /// `E(t) − E(0)`.
    pub energy_drift: f64,
    pub mass_drift: f64,
    /// Minimum of the per-cell entropy production over monitored cells
    /// (0 for the initial row, which has no step behind it).
    pub min_second_law_margin: f64,
    /// Largest per-cell magnitude scale among monitored cells.
    pub second_law_scale: f64,
    /// `e_h(1, D₂ε)` of the step ending at `time`.
    pub boundary_energy_flux: f64,
}

/// Initial values the drifts are measured against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Baseline {
    pub energy: f64,
    pub mass: f64,
}

impl Baseline {
    pub fn of(state: &State, gp: &GasParams) -> Result<Self> {
        Ok(Baseline {
            energy: total_energy(state, gp)?,
            mass: total_mass(state),
        })
    }
}

/// Sum over cells and volume points of `weight · f(point, ρ, s, u)`.
fn volume_sum(state: &State, mut f: impl FnMut(&Point<'_>, f64, f64, [f64; 2]) -> Result<f64>) -> Result<f64> {
    let mesh = state.mesh();
    let quad = state.quadrature();
    let mut total = 0.0;
    for cell in 0..mesh.num_cells() {
        let det = mesh.geometry[cell].det.abs();
        let mut acc = 0.0;
        for q in 0..quad.n_vol() {
            let p = Point::vol(mesh, quad, cell, q);
            let u = [state.u.at(&p, 0).v, state.u.at(&p, 1).v];
            acc += quad.vol_weights[q] * f(&p, state.rho.at(&p, 0).v, state.s.at(&p, 0).v, u)?;
        }
        total += det * acc;
    }
    Ok(total)
}

/// `ℰ = ∫ ½ρ|u|² + ε(ρ, s) + ρφ`.
pub fn total_energy(state: &State, gp: &GasParams) -> Result<f64> {
    volume_sum(state, |p, rho, s, u| {
        let point = match p.at {
            At::Vol(q) | At::Edge { q, .. } => q,
        };
        ensure_positive("density", rho, Location::Cell { cell: p.cell, point })?;
        Ok(0.5 * rho * (u[0] * u[0] + u[1] * u[1]) + eps(rho, s, gp.gamma) + rho * gp.phi(p.x))
    })
}

/// `∫ ½ρ|u|²` alone.
pub fn kinetic_energy(state: &State) -> f64 {
    volume_sum(state, |_, rho, _, u| Ok(0.5 * rho * (u[0] * u[0] + u[1] * u[1]))).unwrap_or(f64::NAN)
}

pub fn total_mass(state: &State) -> f64 {
    state.rho.integral()
}

pub fn total_entropy(state: &State) -> f64 {
    state.s.integral()
}

pub fn kinetic_l2(state: &State) -> f64 {
    volume_sum(state, |_, _, _, u| Ok(u[0] * u[0] + u[1] * u[1])).unwrap_or(f64::NAN).sqrt()
}

/// `∫ ρ|u|²`.
pub fn kinetic_rho(state: &State) -> f64 {
    2.0 * kinetic_energy(state)
}

/// `e_h(1, D₂ε)` of the step `state_k → next`.
pub fn boundary_energy_flux(state_k: &State, next: &State, cfg: &StepConfig) -> Result<f64> {
    if matches!(cfg.bc, BoundaryCondition::HomogeneousNeumann) {
        return Ok(0.0);
    }
    let d = discrete_gradients(&state_k.rho, &state_k.s, &next.rho, &next.s, &cfg.gas)?;
    let forms = Forms::new(state_k.mesh().clone(), state_k.quadrature().clone()).with_execution(cfg.exec);
    forms.form_e(&cfg.bc, &Const(1.0), &d.d2, &cfg.heat)
}

/// Cells whose indicator is an admissible test function for the discrete
/// second law: all cells under homogeneous Neumann conditions, otherwise
/// cells without a boundary edge.
pub fn monitored_cells(mesh: &Mesh, bc: &BoundaryCondition) -> Vec<bool> {
    (0..mesh.num_cells())
        .map(|c| !bc.needs_interior_support() || !mesh.touches_boundary(c))
        .collect()
}

/// Per-cell entropy bookkeeping of one step, `T = D₂ε`, `w = 1_K`.
#[derive(Debug, Clone)]
pub struct SecondLaw {
    /// `⟨D_Δt s, T w⟩ + b̃_h(T w, s_{k+½}, u_{k+½}) − d_h(1, T, T w)`.
    pub margin: Vec<f64>,
    /// `c(w, u_{k+½}, u_{k+½}) − d_h(w, T, T) − e_h(w, T)`.
    pub production: Vec<f64>,
    /// Sum of the magnitudes of the individual terms of both sides.
    pub scale: Vec<f64>,
    pub monitored: Vec<bool>,
}

impl SecondLaw {
    /// Smallest monitored margin; `+∞` if no cell is monitored.
    pub fn min_margin(&self) -> f64 {
        self.iter_monitored(&self.margin).fold(f64::INFINITY, f64::min)
    }

    pub fn max_scale(&self) -> f64 {
        self.iter_monitored(&self.scale).fold(0.0, f64::max)
    }

    fn iter_monitored<'a>(&'a self, v: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        v.iter().zip(&self.monitored).filter(|(_, &m)| m).map(|(&x, _)| x)
    }
}

// time, advection, d_h on the left, viscous heating, d_h on the right, e_h
type Terms = [f64; 6];

fn add(a: &mut Terms, b: &Terms) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

struct StepFields<'a> {
    k: &'a State,
    n: &'a State,
    t: DgFunction,
    dt: f64,
}

impl StepFields<'_> {
    fn t(&self, p: &Point<'_>) -> SVal<f64> {
        self.t.at(p, 0)
    }

    fn s_half(&self, p: &Point<'_>) -> f64 {
        0.5 * (self.k.s.at(p, 0).v + self.n.s.at(p, 0).v)
    }

    fn d_s(&self, p: &Point<'_>) -> f64 {
        (self.n.s.at(p, 0).v - self.k.s.at(p, 0).v) / self.dt
    }

    fn u_half(&self, p: &Point<'_>) -> VVal<f64> {
        let a = VVal::from_components(self.k.u.at(p, 0), self.k.u.at(p, 1));
        let b = VVal::from_components(self.n.u.at(p, 0), self.n.u.at(p, 1));
        a.add(b).scale(0.5)
    }
}

/// Per-cell second-law margins of the step `state_k → next`.
pub fn second_law_margins(state_k: &State, next: &State, cfg: &StepConfig) -> Result<SecondLaw> {
    if !Arc::ptr_eq(state_k.dg(), next.dg()) || !Arc::ptr_eq(state_k.cg(), next.cg()) {
        return Err(Error::ContractViolation("states live on different spaces".into()));
    }
    let mesh = state_k.mesh();
    let quad = state_k.quadrature();
    let d = discrete_gradients(&state_k.rho, &state_k.s, &next.rho, &next.s, &cfg.gas)?;
    let f = StepFields {
        k: state_k,
        n: next,
        t: d.d2,
        dt: cfg.dt,
    };
    let kappa = cfg.heat.kappa;

    let mut terms = exec::try_map_indexed(cfg.exec, mesh.num_cells(), |cell| {
        let det = mesh.geometry[cell].det.abs();
        let mut acc = [0.0; 6];
        for q in 0..quad.n_vol() {
            let p = Point::vol(mesh, quad, cell, q);
            let w = quad.vol_weights[q] * det;
            let t = f.t(&p);
            ensure_positive("temperature", t.v, Location::Cell { cell, point: q })?;
            let u = f.u_half(&p);
            let dc = d_cell_integrand(1.0, &t, &t, kappa);
            add(
                &mut acc,
                &[
                    w * f.d_s(&p) * t.v,
                    w * b_cell_integrand(&t, f.s_half(&p), u.v),
                    w * dc,
                    w * stress_contract(&u, &u, &cfg.visc),
                    w * dc,
                    0.0,
                ],
            );
        }
        if matches!(cfg.bc, BoundaryCondition::HomogeneousNeumann) {
            return Ok::<Terms, Error>(acc);
        }
        for local in 0..3 {
            let EdgeRef::Boundary { edge: bi } = mesh.cell_edges[cell][local] else {
                continue;
            };
            let be = &mesh.boundary_edges[bi];
            for q in 0..quad.n_edge() {
                let loc = Location::BoundaryEdge { edge: bi, point: q };
                let p = Point::edge(mesh, quad, cell, local, false, q);
                let w = quad.edge_weights[q] * be.length;
                let t = f.t(&p);
                ensure_positive("temperature", t.v, loc)?;
                let data: BoundaryData = cfg.bc.data_at(p.x, be.tag, loc)?;
                let db = d_boundary_integrand(data, 1.0, &t, &t, be.normal, kappa);
                let eb = e_boundary_integrand(data, 1.0, &t, be.normal, kappa, cfg.heat.eta / be.length);
                add(&mut acc, &[0.0, 0.0, w * db, 0.0, w * db, w * eb]);
            }
        }
        Ok(acc)
    })?;

    let zero = SVal::constant(0.0);
    let edges = exec::try_map_indexed(cfg.exec, mesh.interior_edges.len(), |ei| {
        let e = &mesh.interior_edges[ei];
        let eta_h = cfg.heat.eta / e.length;
        let mut acc = [[0.0; 6]; 2];
        for q in 0..quad.n_edge() {
            let w = quad.edge_weights[q] * e.length;
            let p1 = Point::edge(mesh, quad, e.cells[0], e.local[0], false, q);
            let p2 = Point::edge(mesh, quad, e.cells[1], e.local[1], true, q);
            let (t1, t2) = (f.t(&p1), f.t(&p2));
            ensure_positive("temperature average", 0.5 * (t1.v + t2.v), Location::InteriorEdge { edge: ei, point: q })?;
            let (u1, u2) = (f.u_half(&p1), f.u_half(&p2));
            let un = 0.5 * ((u1.v[0] + u2.v[0]) * e.normal[0] + (u1.v[1] + u2.v[1]) * e.normal[1]);
            let (sh1, sh2) = (f.s_half(&p1), f.s_half(&p2));
            for (side, a) in acc.iter_mut().enumerate() {
                let (th1, th2) = if side == 0 { (t1, zero) } else { (zero, t2) };
                let (w1, w2) = if side == 0 { (1.0, 0.0) } else { (0.0, 1.0) };
                let mut adv = b_edge_integrand(un, th1.v, th2.v, sh1, sh2);
                if cfg.upwind {
                    adv += upwind_integrand(un, un, th1.v, th2.v, sh1, sh2);
                }
                let dl = d_edge_integrand(1.0, 1.0, &t1, &t2, &th1, &th2, e.normal, kappa, eta_h);
                let dr = d_edge_integrand(w1, w2, &t1, &t2, &t1, &t2, e.normal, kappa, eta_h);
                add(a, &[0.0, w * adv, w * dl, 0.0, w * dr, 0.0]);
            }
        }
        Ok::<_, Error>(acc)
    })?;
    for (ei, acc) in edges.iter().enumerate() {
        let e = &mesh.interior_edges[ei];
        add(&mut terms[e.cells[0]], &acc[0]);
        add(&mut terms[e.cells[1]], &acc[1]);
    }

    Ok(SecondLaw {
        margin: terms.iter().map(|t| t[0] + t[1] - t[2]).collect(),
        production: terms.iter().map(|t| t[3] - t[4] - t[5]).collect(),
        scale: terms.iter().map(|t| t.iter().map(|x| x.abs()).sum()).collect(),
        monitored: monitored_cells(mesh, &cfg.bc),
    })
}

/// Log row for the initial state.
pub fn initial_record(state: &State, gp: &GasParams) -> Result<DiagRecord> {
    let base = Baseline::of(state, gp)?;
    Ok(DiagRecord {
        time: state.time,
        total_energy: base.energy,
        total_mass: base.mass,
        total_entropy: total_entropy(state),
        kinetic_l2: kinetic_l2(state),
        kinetic_rho: kinetic_rho(state),
        energy_drift: 0.0,
        mass_drift: 0.0,
        min_second_law_margin: 0.0,
        second_law_scale: 0.0,
        boundary_energy_flux: 0.0,
    })
}

/// Log row for the accepted step `state_k → next`.
pub fn record(state_k: &State, next: &State, cfg: &StepConfig, base: &Baseline) -> Result<DiagRecord> {
    let energy = total_energy(next, &cfg.gas)?;
    let mass = total_mass(next);
    let sl = second_law_margins(state_k, next, cfg)?;
    let min = sl.min_margin();
    Ok(DiagRecord {
        time: next.time,
        total_energy: energy,
        total_mass: mass,
        total_entropy: total_entropy(next),
        kinetic_l2: kinetic_l2(next),
        kinetic_rho: kinetic_rho(next),
        energy_drift: energy - base.energy,
        mass_drift: mass - base.mass,
        min_second_law_margin: if min.is_finite() { min } else { 0.0 },
        second_law_scale: sl.max_scale(),
        boundary_energy_flux: boundary_energy_flux(state_k, next, cfg)?,
    })
}
