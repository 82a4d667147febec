use super::*;
use crate::forms::Forms;
use crate::gas::{discrete_gradients, entropy_from_temperature};
use crate::spaces::{project_l2, Const, FnScalar, Point, Product, ScalarField, VectorField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Spaces {
    mesh: Arc<Mesh>,
    quad: Arc<Quadrature>,
    dg: Arc<DgSpace>,
    cg: Arc<CgSpace>,
}

fn spaces(nx: usize, ny: usize, periodic: bool) -> Spaces {
    let mesh = Arc::new(Mesh::rectangle(nx, ny, 2.0, 1.0, periodic).unwrap());
    let quad = Arc::new(Quadrature::for_degrees(1, 2));
    Spaces {
        dg: Arc::new(DgSpace::new(mesh.clone(), 1, quad.clone()).unwrap()),
        cg: Arc::new(CgSpace::new(mesh.clone(), 2, 2, quad.clone()).unwrap()),
        mesh,
        quad,
    }
}

fn gas() -> GasParams {
    GasParams::new(1.4, 100.0, 0.7, 2.0, 0.4).unwrap()
}

fn config(bc: BoundaryCondition, upwind: bool) -> StepConfig {
    let mut cfg = StepConfig::new(
        bc,
        ViscosityParams::stokes(0.05).unwrap(),
        HeatParams::new(0.08, 0.01).unwrap(),
        gas(),
    );
    cfg.dt = 0.3;
    cfg.upwind = upwind;
    cfg
}

/// Smooth positive state with a wall-compatible random velocity.
fn random_state(sp: &Spaces, rng: &mut ChaCha8Rng, amp: f64) -> State {
    let g = gas();
    let mut uc: Vec<f64> = (0..sp.cg.dim()).map(|_| amp * rng.random_range(-1.0..1.0)).collect();
    sp.cg.apply_wall_mask(&mut uc);
    let mut rho = sp.dg.interpolate(|x| 1.0 + 0.2 * x[1]);
    let mut s = sp.dg.interpolate(|x| entropy_from_temperature(1.0 + 0.2 * x[1], 1.3 - 0.3 * x[1], g.gamma));
    for c in rho.coeffs.iter_mut().chain(s.coeffs.iter_mut()) {
        *c += 0.5 * amp * rng.random_range(-1.0..1.0);
    }
    State::new(FeFunction::from_coeffs(sp.cg.clone(), uc).unwrap(), rho, s, 0.0).unwrap()
}

fn dirichlet() -> BoundaryCondition {
    BoundaryCondition::dirichlet(|x, _| 1.3 - 0.3 * x[1])
}

fn neumann() -> BoundaryCondition {
    BoundaryCondition::neumann(|x, _| 0.1 * (x[1] - 0.5) + 0.05 * x[0])
}

// --- oracle built from the global form evaluators -------------------------

struct Dot<'a>(&'a dyn VectorField, &'a dyn VectorField);

impl ScalarField for Dot<'_> {
    fn eval(&self, p: &Point<'_>) -> SVal<f64> {
        let (a, b) = (self.0.eval(p), self.1.eval(p));
        SVal {
            v: a.v[0] * b.v[0] + a.v[1] * b.v[1],
            g: [0.0; 2],
        }
    }
}

/// `c₀ ρ₀ u₀ + c₁ ρ₁ u₁`, values only.
struct RhoU<'a> {
    r: [&'a DgFunction; 2],
    u: [&'a CgFunction; 2],
    c: [f64; 2],
}

impl VectorField for RhoU<'_> {
    fn eval(&self, p: &Point<'_>) -> VVal<f64> {
        let mut v = [0.0; 2];
        for k in 0..2 {
            let r = self.r[k].at(p, 0).v;
            let u = VectorField::eval(self.u[k], p);
            v[0] += self.c[k] * r * u.v[0];
            v[1] += self.c[k] * r * u.v[1];
        }
        VVal { v, g: [[0.0; 2]; 2] }
    }
}

fn lin<Sp: FeSpace>(a: &FeFunction<Sp>, b: &FeFunction<Sp>, ca: f64, cb: f64) -> FeFunction<Sp> {
    FeFunction {
        space: a.space.clone(),
        coeffs: a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| ca * x + cb * y).collect(),
    }
}

fn oracle(sp: &Spaces, k: &State, t: &State, cfg: &StepConfig) -> Vec<f64> {
    let forms = Forms::new(sp.mesh.clone(), sp.quad.clone()).with_execution(Execution::Sequential);
    let dt = cfg.dt;
    let dgr = discrete_gradients(&k.rho, &k.s, &t.rho, &t.s, &cfg.gas).unwrap();
    let d2 = &dgr.d2;
    let uu = project_l2(&Dot(&k.u, &t.u), &sp.dg).unwrap();
    let gp = cfg.gas;
    let phi = project_l2(
        &FnScalar {
            value: move |x: [f64; 2]| gp.phi(x),
            grad: move |_: [f64; 2]| [0.0, 1.0 / gp.fr],
        },
        &sp.dg,
    )
    .unwrap();
    let x = FeFunction {
        space: sp.dg.clone(),
        coeffs: (0..sp.dg.dim()).map(|i| 0.5 * uu.coeffs[i] - dgr.d1.coeffs[i] - phi.coeffs[i]).collect(),
    };
    let u_half = lin(&k.u, &t.u, 0.5, 0.5);
    let rho_half = lin(&k.rho, &t.rho, 0.5, 0.5);
    let s_half = lin(&k.s, &t.s, 0.5, 0.5);
    let d_rho = lin(&t.rho, &k.rho, 1.0 / dt, -1.0 / dt);
    let d_s = lin(&t.s, &k.s, 1.0 / dt, -1.0 / dt);
    let rho_u_half = RhoU {
        r: [&k.rho, &t.rho],
        u: [&k.u, &t.u],
        c: [0.5, 0.5],
    };
    let d_rho_u = RhoU {
        r: [&k.rho, &t.rho],
        u: [&k.u, &t.u],
        c: [-1.0 / dt, 1.0 / dt],
    };
    let b = |f: &dyn ScalarField, g: &dyn ScalarField, v: &dyn VectorField| {
        if cfg.upwind {
            forms.form_b_upwind(&u_half, f, g, v).unwrap()
        } else {
            forms.form_b(f, g, v).unwrap()
        }
    };
    let (bc, hp) = (&cfg.bc, &cfg.heat);

    let mut out = Vec::new();
    let wall = sp.cg.wall_mask();
    let ns = sp.cg.n_scalar();
    for g in 0..sp.cg.dim() {
        if wall[g % ns] {
            out.push(t.u.coeffs[g]);
            continue;
        }
        let mut c = vec![0.0; sp.cg.dim()];
        c[g] = 1.0;
        let v = FeFunction::from_coeffs(sp.cg.clone(), c).unwrap();
        let r = forms.integrate(&Dot(&d_rho_u, &v)).unwrap()
            + forms.form_a(&rho_u_half, &u_half, &v).unwrap()
            + b(&x, &rho_half, &v)
            - b(d2, &s_half, &v)
            + forms.form_c(&Const(1.0), &u_half, &v, &cfg.visc).unwrap();
        out.push(r);
    }
    let unit = |j: usize| {
        let mut c = vec![0.0; sp.dg.dim()];
        c[j] = 1.0;
        FeFunction::from_coeffs(sp.dg.clone(), c).unwrap()
    };
    for j in 0..sp.dg.dim() {
        let th = unit(j);
        out.push(forms.integrate(&Product(&d_rho, &th)).unwrap() + b(&th, &rho_half, &u_half));
    }
    for j in 0..sp.dg.dim() {
        let th = unit(j);
        let t_th = Product(d2, &th);
        let r = forms.integrate(&Product(&d_s, &t_th)).unwrap() + b(&t_th, &s_half, &u_half)
            - forms.form_d(bc, &Const(1.0), d2, &t_th, hp).unwrap()
            - forms.form_c(&th, &u_half, &u_half, &cfg.visc).unwrap()
            + forms.form_d(bc, &th, d2, d2, hp).unwrap()
            + forms.form_e(bc, &th, d2, hp).unwrap();
        out.push(r);
    }
    out
}

fn flat(r: &Residual) -> Vec<f64> {
    r.momentum.iter().chain(&r.mass).chain(&r.entropy).copied().collect()
}

#[test]
fn residual_matches_form_oracle() {
    let sp = spaces(4, 2, true);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (bc, upwind) in [(BoundaryCondition::HomogeneousNeumann, false), (dirichlet(), true), (neumann(), false)] {
        let cfg = config(bc, upwind);
        let k = random_state(&sp, &mut rng, 0.1);
        let t = random_state(&sp, &mut rng, 0.1);
        let got = flat(&residual(&k, &t, &cfg).unwrap());
        let want = oracle(&sp, &k, &t, &cfg);
        assert_eq!(got.len(), want.len());
        for (i, (a, b)) in got.iter().zip(&want).enumerate() {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "row {i}: {a} vs {b}");
        }
    }
}

#[test]
fn jacobian_matches_central_differences() {
    let sp = spaces(4, 2, true);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for bc in [dirichlet(), neumann()] {
        let cfg = config(bc, true);
        let k = random_state(&sp, &mut rng, 0.1);
        let t = random_state(&sp, &mut rng, 0.1);
        let (r, jac) = jacobian(&k, &t, &cfg).unwrap();
        for (a, b) in r.iter().zip(flat(&residual(&k, &t, &cfg).unwrap())) {
            assert!((a - b).abs() <= 1e-15 * (1.0 + b.abs()));
        }
        let x = t.to_vec();
        let mut dir: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut masked = dir[..sp.cg.dim()].to_vec();
        sp.cg.apply_wall_mask(&mut masked);
        dir[..sp.cg.dim()].copy_from_slice(&masked);
        let h = 1e-6;
        let shifted = |a: f64| {
            let y: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + a * di).collect();
            flat(&residual(&k, &t.with_vec(&y, 0.0), &cfg).unwrap())
        };
        let (rp, rm) = (shifted(h), shifted(-h));
        let dense = jac.to_dense();
        for i in 0..x.len() {
            let jd: f64 = (0..x.len()).map(|j| dense[(i, j)] * dir[j]).sum();
            let fd = (rp[i] - rm[i]) / (2.0 * h);
            assert!((jd - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "row {i}: {jd} vs {fd}");
        }
    }
}

#[test]
fn sequential_and_parallel_residuals_agree_bitwise() {
    let sp = spaces(6, 3, true);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut cfg = config(dirichlet(), true);
    let k = random_state(&sp, &mut rng, 0.1);
    let t = random_state(&sp, &mut rng, 0.1);
    cfg.exec = Execution::Sequential;
    let a = flat(&residual(&k, &t, &cfg).unwrap());
    cfg.exec = Execution::Parallel;
    let b = flat(&residual(&k, &t, &cfg).unwrap());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn uniform_rest_state_is_a_fixed_point() {
    let sp = spaces(4, 2, true);
    let mut cfg = config(BoundaryCondition::HomogeneousNeumann, false);
    cfg.gas = GasParams::new(1.4, 100.0, 0.7, f64::INFINITY, 0.0).unwrap();
    let st = State::new(
        FeFunction::zeros(sp.cg.clone()),
        sp.dg.interpolate(|_| 1.0),
        sp.dg.interpolate(|_| 0.0),
        0.0,
    )
    .unwrap();
    assert!(residual(&st, &st, &cfg).unwrap().norm_inf() < 1e-15);
    let (next, stats) = advance_with_stats(&st, &cfg).unwrap();
    assert!(stats.iterations <= 2);
    for (a, b) in next.to_vec().iter().zip(st.to_vec()) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((next.time - cfg.dt).abs() < 1e-15);
}

#[test]
fn rest_state_without_dissipation_reduces_to_pressure_balance() {
    // u = 0 at both levels, μ = κ = 0: mass and entropy rows are the plain
    // time differences, momentum rows b_h(−D₁ε − π_hφ, ρ½, v)
    let sp = spaces(4, 2, true);
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut cfg = config(BoundaryCondition::HomogeneousNeumann, false);
    cfg.visc = ViscosityParams::new(0.0, 0.0).unwrap();
    cfg.heat = HeatParams::new(0.0, 1.0).unwrap();
    let mut k = random_state(&sp, &mut rng, 0.05);
    let mut t = random_state(&sp, &mut rng, 0.05);
    k.u.coeffs.fill(0.0);
    t.u.coeffs.fill(0.0);
    let r = residual(&k, &t, &cfg).unwrap();
    let want = oracle(&sp, &k, &t, &cfg);
    let nu = sp.cg.dim();
    let nd = sp.dg.dim();
    // mass rows: ⟨D_Δt ρ, θ_j⟩ from the DG mass matrix
    let m = crate::spaces::mass_matrix(sp.dg.as_ref()).to_dense();
    for j in 0..nd {
        let want_j: f64 = (0..nd).map(|i| m[(j, i)] * (t.rho.coeffs[i] - k.rho.coeffs[i]) / cfg.dt).sum();
        assert!((r.mass[j] - want_j).abs() < 1e-13);
    }
    for (i, a) in r.momentum.iter().enumerate() {
        assert!((a - want[i]).abs() < 1e-12);
    }
    assert_eq!(r.entropy.len(), nd);
    assert_eq!(r.len(), nu + 2 * nd);
}

#[test]
fn positivity_failure_is_reported() {
    let sp = spaces(4, 2, true);
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let cfg = config(BoundaryCondition::HomogeneousNeumann, false);
    let k = random_state(&sp, &mut rng, 0.05);
    let mut t = k.clone();
    t.rho.coeffs[4] = -1.0;
    assert!(matches!(residual(&k, &t, &cfg), Err(Error::Positivity { .. })));
    assert!(matches!(advance(&t, &cfg), Err(Error::Positivity { .. })));
}

#[test]
fn mismatched_states_are_rejected() {
    let a = spaces(4, 2, true);
    let b = spaces(4, 2, true);
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let cfg = config(BoundaryCondition::HomogeneousNeumann, false);
    let k = random_state(&a, &mut rng, 0.05);
    let t = random_state(&b, &mut rng, 0.05);
    assert!(matches!(residual(&k, &t, &cfg), Err(Error::ContractViolation(_))));
    assert!(State::new(FeFunction::zeros(a.cg.clone()), k.rho.clone(), t.s.clone(), 0.0).is_err());
}

#[test]
fn step_conserves_mass_and_converges() {
    let sp = spaces(4, 2, true);
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    for bc in [BoundaryCondition::HomogeneousNeumann, dirichlet(), neumann()] {
        let cfg = config(bc, true);
        let k = random_state(&sp, &mut rng, 0.05);
        let (next, stats) = advance_with_stats(&k, &cfg).unwrap();
        assert!(stats.residual <= cfg.newton_tol * (1.0 + stats.initial_residual));
        let (m0, m1) = (k.rho.integral(), next.rho.integral());
        assert!(((m1 - m0) / m0).abs() < 1e-13, "{m0} {m1}");
        let r = residual(&k, &next, &cfg).unwrap();
        assert!(r.norm_inf() <= cfg.newton_tol * (1.0 + stats.initial_residual));
    }
}
