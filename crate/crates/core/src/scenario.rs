//! Rayleigh–Bénard convection on `[0, 2] × [0, 1]`, periodic in `x`.
//!
//! Configuration is a TOML file with the sections `[mesh]`, `[gas]`, `[bc]`,
//! `[time]`, `[output]` and an optional `[init]`. Every key has a default, so
//! an empty file describes the base point `Re = 100`, `m = 0`,
//! `Z = 0.419524`, `Pr = 2.5`, `γ = 1.1` with Dirichlet plates.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{initial_record, record, Baseline, DiagRecord};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::forms::{BoundaryCondition, HeatParams, ViscosityParams};
use crate::gas::{entropy_from_temperature, GasParams};
use crate::mesh::{BoundaryTag, Mesh};
use crate::spaces::{CgSpace, DgSpace, Quadrature};
use crate::stepper::{advance_with_stats, State, StepConfig};

pub mod output;

pub use output::{write_vtk, CsvLog};

/// Domain extent.
pub const LX: f64 = 2.0;
pub const LZ: f64 = 1.0;

/// Target Rayleigh numbers of the one-parameter sweeps.
pub const RA_SWEEP: [f64; 5] = [2000.0, 3000.0, 4000.0, 5000.0, 6000.0];

/// Maximum number of dt halvings for one step.
pub const MAX_RETRIES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BcKind {
    /// `T = 1 + Z` at the bottom plate, `T = 1` at the top.
    Dirichlet,
    /// Heat flux `∓κZ` through the bottom/top plates.
    Neumann,
    /// No heat flux.
    Insulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    pub nx: usize,
    pub ny: usize,
    /// Degree of the density/entropy space.
    pub q: usize,
    /// Degree of the velocity space.
    pub r: usize,
}

impl Default for MeshSection {
    fn default() -> Self {
        MeshSection { nx: 32, ny: 16, q: 1, r: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GasSection {
    pub gamma: f64,
    pub re: f64,
    pub pr: f64,
    pub z: f64,
    /// Polytropic index.
    pub m: f64,
}

impl Default for GasSection {
    fn default() -> Self {
        GasSection {
            gamma: 1.1,
            re: 100.0,
            pr: 2.5,
            z: 0.419524,
            m: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcSection {
    pub kind: BcKind,
    /// `η = eta_factor · κ`.
    pub eta_factor: f64,
}

impl Default for BcSection {
    fn default() -> Self {
        BcSection {
            kind: BcKind::Dirichlet,
            eta_factor: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    pub dt: f64,
    pub t_end: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub upwind: bool,
}

impl Default for TimeSection {
    fn default() -> Self {
        TimeSection {
            dt: 0.4,
            t_end: 300.0,
            newton_tol: StepConfig::DEFAULT_TOL,
            newton_max_iter: 25,
            upwind: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub csv: String,
    /// Write a VTK snapshot every this many steps; 0 disables snapshots.
    pub snapshot_stride: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            csv: "diagnostics.csv".into(),
            snapshot_stride: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSection {
    /// Multiplier of the velocity bump; 0 starts from rest.
    pub bump: f64,
}

impl Default for InitSection {
    fn default() -> Self {
        InitSection { bump: 1.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbConfig {
    pub mesh: MeshSection,
    pub gas: GasSection,
    pub bc: BcSection,
    pub time: TimeSection,
    pub output: OutputSection,
    pub init: InitSection,
}

impl RbConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RbConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let (m, g, t) = (&self.mesh, &self.gas, &self.time);
        if m.nx < 2 || m.ny < 1 {
            return bad(format!("need nx >= 2 and ny >= 1, got {} x {}", m.nx, m.ny));
        }
        if m.q > 3 || !(1..=3).contains(&m.r) {
            return bad(format!("supported degrees are q <= 3, 1 <= r <= 3, got q = {}, r = {}", m.q, m.r));
        }
        if !(g.gamma > 1.0 && g.gamma.is_finite()) {
            return bad(format!("gamma must exceed 1, got {}", g.gamma));
        }
        for (name, v) in [("re", g.re), ("pr", g.pr)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(g.z >= 0.0 && g.z.is_finite()) {
            return bad(format!("z must be nonnegative, got {}", g.z));
        }
        if !(g.m > -1.0 && g.m.is_finite()) {
            return bad(format!("m must exceed -1, got {}", g.m));
        }
        if !(self.bc.eta_factor > 0.0 && self.bc.eta_factor.is_finite()) {
            return bad(format!("eta_factor must be positive, got {}", self.bc.eta_factor));
        }
        if !(t.dt > 0.0 && t.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", t.dt));
        }
        if !(t.t_end >= 0.0 && t.t_end.is_finite()) {
            return bad(format!("t_end must be nonnegative, got {}", t.t_end));
        }
        if !(t.newton_tol > 0.0) || t.newton_max_iter == 0 {
            return bad("newton_tol and newton_max_iter must be positive".into());
        }
        if !self.init.bump.is_finite() {
            return bad("init.bump must be finite".into());
        }
        Ok(())
    }

    /// `Fr = 1/((m + 1) Z)`; infinite for `Z = 0`.
    pub fn froude(&self) -> f64 {
        1.0 / ((self.gas.m + 1.0) * self.gas.z)
    }

    /// `κ = (1/Re)(1/Pr) γ/(γ − 1)`.
    pub fn kappa(&self) -> f64 {
        let g = &self.gas;
        g.gamma / ((g.gamma - 1.0) * g.re * g.pr)
    }

    pub fn eta(&self) -> f64 {
        self.bc.eta_factor * self.kappa()
    }

    /// Shear viscosity `μ = 1/(2 Re)`, with `λ = −μ`.
    pub fn mu(&self) -> f64 {
        0.5 / self.gas.re
    }

    pub fn gas_params(&self) -> Result<GasParams> {
        let g = &self.gas;
        GasParams::new(g.gamma, g.re, g.pr, self.froude(), g.z).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn boundary_condition(&self) -> BoundaryCondition {
        let z = self.gas.z;
        match self.bc.kind {
            BcKind::Dirichlet => BoundaryCondition::dirichlet(move |x, tag| match tag {
                BoundaryTag::Bottom => 1.0 + z,
                BoundaryTag::Top => 1.0,
                _ => initial_temperature(z, x[1]),
            }),
            BcKind::Neumann => BoundaryCondition::Neumann(neumann_flux_data(self)),
            BcKind::Insulated => BoundaryCondition::HomogeneousNeumann,
        }
    }

    pub fn step_config(&self, exec: Execution) -> Result<StepConfig> {
        let visc = ViscosityParams::stokes(self.mu())?;
        let heat = HeatParams::new(self.kappa(), self.eta())?;
        let mut sc = StepConfig::new(self.boundary_condition(), visc, heat, self.gas_params()?);
        sc.dt = self.time.dt;
        sc.newton_tol = self.time.newton_tol;
        sc.newton_max_iter = self.time.newton_max_iter;
        sc.upwind = self.time.upwind;
        sc.exec = exec;
        Ok(sc)
    }
}

/// `Ra = Re² (m + 1) Z² Pr (1 − (γ − 1) m) / γ`.
pub fn rayleigh_number(cfg: &RbConfig) -> f64 {
    let g = &cfg.gas;
    g.re * g.re * (g.m + 1.0) * g.z * g.z * g.pr * (1.0 - (g.gamma - 1.0) * g.m) / g.gamma
}

/// `T(z) = 1 + Z (1 − z)`.
pub fn initial_temperature(z_diff: f64, z: f64) -> f64 {
    1.0 + z_diff * (1.0 - z)
}

/// Compactly supported velocity bump centred at `(1, 0.5)`.
pub fn bump(x: [f64; 2]) -> f64 {
    let r2 = (x[0] - 1.0).powi(2) + (x[1] - 0.5).powi(2);
    if r2 < 0.2 {
        (1.0 / (r2 - 0.2)).exp()
    } else {
        0.0
    }
}

/// Plate heat flux `q₀`: `−κZ` at the bottom, `+κZ` at the top.
pub fn neumann_flux_data(cfg: &RbConfig) -> crate::forms::TraceFn {
    let q = cfg.kappa() * cfg.gas.z;
    Arc::new(move |_, tag| match tag {
        BoundaryTag::Bottom => -q,
        BoundaryTag::Top => q,
        _ => 0.0,
    })
}

/// Mesh, quadrature and spaces of a configuration.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: Arc<Mesh>,
    pub quad: Arc<Quadrature>,
    pub dg: Arc<DgSpace>,
    pub cg: Arc<CgSpace>,
}

impl Discretization {
    pub fn new(cfg: &RbConfig) -> Result<Self> {
        let m = &cfg.mesh;
        let mesh = Arc::new(Mesh::rectangle(m.nx, m.ny, LX, LZ, true)?);
        let quad = Arc::new(Quadrature::for_degrees(m.q, m.r));
        Ok(Discretization {
            dg: Arc::new(DgSpace::new(mesh.clone(), m.q, quad.clone())?),
            cg: Arc::new(CgSpace::new(mesh.clone(), m.r, 2, quad.clone())?),
            mesh,
            quad,
        })
    }
}

/// Hydrostatic initial data with the velocity bump.
///
/// `ρ = π_h(T^m)`; the entropy is the projection of the pointwise inverse of
/// `T(ρ_h, s) = T(z)`, so the discrete temperature starts on the profile.
pub fn initial_state(cfg: &RbConfig, disc: &Discretization) -> Result<State> {
    let (z, m, gamma) = (cfg.gas.z, cfg.gas.m, cfg.gas.gamma);
    let nq = disc.quad.n_vol();
    let mut tvals = Vec::with_capacity(disc.mesh.num_cells() * nq);
    for cell in 0..disc.mesh.num_cells() {
        for &xi in &disc.quad.vol_points {
            tvals.push(initial_temperature(z, disc.mesh.geometry[cell].map(xi)[1]));
        }
    }
    let rho_vals: Vec<f64> = tvals.iter().map(|t| t.powf(m)).collect();
    let rho = disc.dg.project_values(&rho_vals)?;
    let mut svals = vec![0.0; disc.mesh.num_cells() * nq];
    for cell in 0..disc.mesh.num_cells() {
        let r = rho.evaluate(cell, &disc.quad.vol_points);
        for q in 0..nq {
            svals[cell * nq + q] = entropy_from_temperature(r[q], tvals[cell * nq + q], gamma);
        }
    }
    let s = disc.dg.project_values(&svals)?;
    let amp = cfg.init.bump;
    let mut u = disc.cg.interpolate(|x| vec![0.0, amp * bump(x)]);
    disc.cg.apply_wall_mask(&mut u.coeffs);
    State::new(u, rho, s, 0.0)
}

/// Outcome of a completed run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps: usize,
    pub retries: usize,
    pub records: Vec<DiagRecord>,
    pub final_state: State,
}

/// Time loop from `t = 0` to `t_end`.
///
/// A step that fails to converge is retried with half the step length, at
/// most [`MAX_RETRIES`] times; the following step returns to the configured
/// `dt`.
pub struct Simulation {
    pub cfg: RbConfig,
    pub disc: Discretization,
    pub step: StepConfig,
    pub state: State,
    base: Baseline,
    pub records: Vec<DiagRecord>,
    pub steps: usize,
    pub retries: usize,
}

impl Simulation {
    pub fn new(cfg: &RbConfig, exec: Execution) -> Result<Self> {
        cfg.validate()?;
        let disc = Discretization::new(cfg)?;
        let step = cfg.step_config(exec)?;
        let state = initial_state(cfg, &disc)?;
        let base = Baseline::of(&state, &step.gas)?;
        let first = initial_record(&state, &step.gas)?;
        Ok(Simulation {
            cfg: cfg.clone(),
            disc,
            step,
            state,
            base,
            records: vec![first],
            steps: 0,
            retries: 0,
        })
    }

    pub fn baseline(&self) -> Baseline {
        self.base
    }

    pub fn finished(&self) -> bool {
        self.cfg.time.t_end - self.state.time <= 1e-9 * self.cfg.time.dt
    }

    /// One accepted step (possibly after retries).
    pub fn advance(&mut self) -> Result<DiagRecord> {
        let remaining = self.cfg.time.t_end - self.state.time;
        let mut sc = self.step.clone();
        sc.dt = self.cfg.time.dt.min(remaining);
        let mut attempt = 0;
        let next = loop {
            match advance_with_stats(&self.state, &sc) {
                Ok((next, _)) => break next,
                Err(Error::NonConvergence { .. } | Error::Positivity { .. }) if attempt < MAX_RETRIES => {
                    attempt += 1;
                    self.retries += 1;
                    sc.dt *= 0.5;
                }
                Err(e) => return Err(e),
            }
        };
        let rec = record(&self.state, &next, &sc, &self.base)?;
        self.state = next;
        self.steps += 1;
        self.records.push(rec);
        Ok(rec)
    }

    /// Runs to `t_end`; `on_step` sees the initial and every accepted state
    /// with its record.
    pub fn run(mut self, mut on_step: impl FnMut(&State, &DiagRecord) -> Result<()>) -> Result<RunSummary> {
        on_step(&self.state, &self.records[0])?;
        while !self.finished() {
            let rec = self.advance()?;
            on_step(&self.state, &rec)?;
        }
        Ok(RunSummary {
            steps: self.steps,
            retries: self.retries,
            records: self.records,
            final_state: self.state,
        })
    }
}

/// Runs `cfg`, writing the CSV log and snapshots below `out_dir`.
pub fn run_to_dir(cfg: &RbConfig, out_dir: &Path, exec: Execution) -> Result<RunSummary> {
    let sim = Simulation::new(cfg, exec)?;
    fs::create_dir_all(out_dir)?;
    let mut log = CsvLog::create(&out_dir.join(&cfg.output.csv))?;
    let stride = cfg.output.snapshot_stride;
    let gas = sim.step.gas;
    let mut index = 0usize;
    let summary = sim.run(|state, rec| {
        log.write(rec)?;
        if stride > 0 && index % stride == 0 {
            let path = out_dir.join(format!("snapshot_{index:06}.vtk"));
            write_vtk(&path, state, &gas)?;
        }
        index += 1;
        Ok(())
    })?;
    log.finish()?;
    Ok(summary)
}

/// Parameter varied by a Rayleigh-number sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Re,
    M,
    Z,
    Pr,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Re => "re",
            SweepParam::M => "m",
            SweepParam::Z => "z",
            SweepParam::Pr => "pr",
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "re" => Ok(SweepParam::Re),
            "m" => Ok(SweepParam::M),
            "z" => Ok(SweepParam::Z),
            "pr" => Ok(SweepParam::Pr),
            other => Err(Error::Config(format!("unknown sweep parameter '{other}' (re, m, z, pr)"))),
        }
    }
}

/// Copy of `base` with one parameter changed so that `Ra = target`.
pub fn with_rayleigh(base: &RbConfig, param: SweepParam, target: f64) -> Result<RbConfig> {
    let mut cfg = base.clone();
    let ra = rayleigh_number(base);
    if !(ra > 0.0 && target > 0.0) {
        return Err(Error::Config(format!("cannot rescale Ra = {ra} to {target}")));
    }
    let ratio = target / ra;
    match param {
        SweepParam::Re => cfg.gas.re *= ratio.sqrt(),
        SweepParam::Z => cfg.gas.z *= ratio.sqrt(),
        SweepParam::Pr => cfg.gas.pr *= ratio,
        SweepParam::M => {
            // (m + 1)(1 − (γ − 1) m) = c, a quadratic in m; take the root
            // nearest the base value
            let g = base.gas.gamma - 1.0;
            let m0 = base.gas.m;
            let c = ratio * (m0 + 1.0) * (1.0 - g * m0);
            let (a, b, cc) = (g, -(1.0 - g), c - 1.0);
            let disc = b * b - 4.0 * a * cc;
            if disc < 0.0 {
                return Err(Error::Config(format!("Ra = {target} is out of reach by varying m")));
            }
            let roots = [(-b - disc.sqrt()) / (2.0 * a), (-b + disc.sqrt()) / (2.0 * a)];
            cfg.gas.m = if (roots[0] - m0).abs() <= (roots[1] - m0).abs() { roots[0] } else { roots[1] };
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Configurations of a one-parameter sweep over [`RA_SWEEP`].
pub fn sweep(base: &RbConfig, param: SweepParam) -> Result<Vec<(f64, RbConfig)>> {
    RA_SWEEP.iter().map(|&ra| Ok((ra, with_rayleigh(base, param, ra)?))).collect()
}

#[cfg(test)]
mod tests;
