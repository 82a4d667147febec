use super::*;
use crate::spaces::{CgFunction, CgSpace, Const, ConstVec, DgFunction, DgSpace, FeFunction, FeSpace, FnScalar, FnVector, Indicator};
use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Setup {
    forms: Forms,
    dg: Arc<DgSpace>,
    cg: Arc<CgSpace>,
}

fn setup(nx: usize, ny: usize, lx: f64, ly: f64, periodic: bool) -> Setup {
    let mesh = Arc::new(Mesh::rectangle(nx, ny, lx, ly, periodic).unwrap());
    let quad = Arc::new(Quadrature::for_degrees(1, 2));
    Setup {
        dg: Arc::new(DgSpace::new(mesh.clone(), 1, quad.clone()).unwrap()),
        cg: Arc::new(CgSpace::new(mesh.clone(), 2, 2, quad.clone()).unwrap()),
        forms: Forms::new(mesh, quad),
    }
}

fn rand_dg(s: &Setup, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> DgFunction {
    FeFunction::from_coeffs(s.dg.clone(), (0..s.dg.dim()).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn rand_cg(s: &Setup, rng: &mut ChaCha8Rng) -> CgFunction {
    let mut c: Vec<f64> = (0..s.cg.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    s.cg.apply_wall_mask(&mut c);
    FeFunction::from_coeffs(s.cg.clone(), c).unwrap()
}

fn hn() -> BoundaryCondition {
    BoundaryCondition::HomogeneousNeumann
}

fn variants() -> Vec<BoundaryCondition> {
    vec![
        hn(),
        BoundaryCondition::dirichlet(|x, _| 1.0 + 0.3 * x[0]),
        BoundaryCondition::neumann(|x, _| 0.5 - x[0]),
    ]
}

#[test]
fn parameter_validation() {
    assert!(ViscosityParams::new(1.0, -1.0).is_ok());
    assert!(ViscosityParams::new(1.0, -1.5).is_err());
    assert!(ViscosityParams::new(-0.1, 1.0).is_err());
    assert!(HeatParams::new(0.0, 0.1).is_ok());
    assert!(HeatParams::new(1.0, 0.0).is_err());
    assert!(HeatParams::new(-1.0, 1.0).is_err());
}

#[test]
fn form_a_vanishes_on_diagonal_and_constants() {
    let s = setup(4, 2, 2.0, 1.0, true);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (w, u) = (rand_cg(&s, &mut rng), rand_cg(&s, &mut rng));
    assert!(s.forms.form_a(&w, &u, &u).unwrap().abs() < 1e-14);
    let r = s.forms.form_a(&w, &ConstVec([1.0, 2.0]), &ConstVec([-0.5, 3.0])).unwrap();
    assert_eq!(r, 0.0);
}

#[test]
fn form_a_matches_dense_oracle() {
    // w = (1,0), u = (z,0), v = (0,x); integrand −w·[u,v] evaluated on a
    // fine midpoint grid
    let s = setup(3, 3, 1.0, 1.0, false);
    let u = s.cg.interpolate(|x| vec![x[1], 0.0]);
    let v = s.cg.interpolate(|x| vec![0.0, x[0]]);
    let got = s.forms.form_a(&ConstVec([1.0, 0.0]), &u, &v).unwrap();
    let n = 400;
    let mut oracle = 0.0;
    for i in 0..n {
        for j in 0..n {
            let (x, z) = ((i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64);
            // (u·∇)v = (0, z), (v·∇)u = (x, 0)
            let br = [0.0 - x, z - 0.0];
            oracle += -br[0] / (n * n) as f64;
        }
    }
    assert_relative_eq!(got, oracle, epsilon = 1e-12);
}

#[test]
fn form_b_constant_f_and_zero_v() {
    let s = setup(4, 2, 2.0, 1.0, true);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = rand_dg(&s, &mut rng, 0.5, 2.0);
    let v = rand_cg(&s, &mut rng);
    assert!(s.forms.form_b(&Const(1.0), &g, &v).unwrap().abs() < 1e-15);
    let f = rand_dg(&s, &mut rng, -1.0, 1.0);
    assert_eq!(s.forms.form_b(&f, &g, &ConstVec([0.0, 0.0])).unwrap(), 0.0);
}

#[test]
fn form_b_two_cell_hand_computation() {
    let s = setup(1, 1, 1.0, 1.0, false);
    let mesh = s.forms.mesh.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // affine per cell: c[0] + c[1] x + c[2] z
    let mut coef = |_: usize| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let fa = [coef(0), coef(1)];
    let ga = [coef(0), coef(1)];
    let nodal = |a: &[[f64; 3]; 2]| {
        let mut c = vec![0.0; 6];
        for cell in 0..2 {
            for (i, xi) in s.dg.element().nodes.iter().enumerate() {
                let x = mesh.geometry[cell].map(*xi);
                c[cell * 3 + i] = a[cell][0] + a[cell][1] * x[0] + a[cell][2] * x[1];
            }
        }
        FeFunction::from_coeffs(s.dg.clone(), c).unwrap()
    };
    let (f, g) = (nodal(&fa), nodal(&ga));
    let got = s.forms.form_b(&f, &g, &ConstVec([1.0, 0.0])).unwrap();

    let ev = |a: &[f64; 3], x: [f64; 2]| a[0] + a[1] * x[0] + a[2] * x[1];
    let mut want = 0.0;
    for cell in 0..2 {
        let c = mesh.cells[cell].coords;
        let cen = [(c[0][0] + c[1][0] + c[2][0]) / 3.0, (c[0][1] + c[1][1] + c[2][1]) / 3.0];
        // ∇f·v = ∂x f is constant, g affine: centroid rule is exact
        want -= fa[cell][1] * ev(&ga[cell], cen) * 0.5;
    }
    // diagonal (0,0)-(1,1); normal out of cells[0], found from its centroid
    let e = &mesh.interior_edges[0];
    let (c1, c2) = (e.cells[0], e.cells[1]);
    let cc = mesh.cells[c1].coords;
    let cen = [(cc[0][0] + cc[1][0] + cc[2][0]) / 3.0, (cc[0][1] + cc[1][1] + cc[2][1]) / 3.0];
    let mut n = [1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt()];
    if (cen[0] - 0.5) * n[0] + (cen[1] - 0.5) * n[1] > 0.0 {
        n = [-n[0], -n[1]];
    }
    let len = 2f64.sqrt();
    let integrand = |t: f64| {
        let x = [t, t];
        n[0] * (ev(&fa[c1], x) - ev(&fa[c2], x)) * 0.5 * (ev(&ga[c1], x) + ev(&ga[c2], x))
    };
    // Simpson is exact for the quadratic edge integrand
    want += len / 6.0 * (integrand(0.0) + 4.0 * integrand(0.5) + integrand(1.0));
    assert_relative_eq!(got, want, epsilon = 1e-13);
}

#[test]
fn upwind_reduces_to_b_for_continuous_f() {
    let s = setup(4, 2, 2.0, 1.0, true);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f = FnScalar {
        value: |x: [f64; 2]| x[1] * x[1],
        grad: |x: [f64; 2]| [0.0, 2.0 * x[1]],
    };
    let g = rand_dg(&s, &mut rng, 0.5, 2.0);
    let (u, v) = (rand_cg(&s, &mut rng), rand_cg(&s, &mut rng));
    let a = s.forms.form_b(&f, &g, &v).unwrap();
    let b = s.forms.form_b_upwind(&u, &f, &g, &v).unwrap();
    assert_eq!(a, b);
}

#[test]
fn upwind_vanishes_without_flow() {
    let s = setup(4, 2, 2.0, 1.0, true);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (f, g) = (rand_dg(&s, &mut rng, -1.0, 1.0), rand_dg(&s, &mut rng, -1.0, 1.0));
    let v = rand_cg(&s, &mut rng);
    assert_eq!(s.forms.upwind_term(&ConstVec([0.0, 0.0]), &f, &g, &v).unwrap(), 0.0);
    assert_eq!(upwind_integrand(0.0, 1.0, 1.0, 0.0, 1.0, 0.0), 0.0);
}

#[test]
fn form_c_kernel_is_rigid_motions() {
    let s = setup(4, 2, 2.0, 1.0, true);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = ViscosityParams::new(0.7, 0.4).unwrap();
    let w = rand_dg(&s, &mut rng, 0.0, 1.0);
    let v = rand_cg(&s, &mut rng);
    let rot = FnVector {
        value: |x: [f64; 2]| [-x[1], x[0]],
        jac: |_: [f64; 2]| [[0.0, -1.0], [1.0, 0.0]],
    };
    assert!(s.forms.form_c(&w, &rot, &v, &p).unwrap().abs() < 1e-14);
    assert_eq!(s.forms.form_c(&w, &ConstVec([1.0, -2.0]), &v, &p).unwrap(), 0.0);
}

#[test]
fn form_c_pure_strain() {
    // u = (x, −z): div u = 0, Def u = diag(1, −1), so σ(u):∇u = 2μ·2 and
    // c(1,u,u) = 4μ|Ω| = 8 on [0,2]×[0,1]
    let s = setup(4, 2, 2.0, 1.0, false);
    let u = s.cg.interpolate(|x| vec![x[0], -x[1]]);
    for lambda in [-1.0, 0.0, 3.0] {
        let p = ViscosityParams::new(1.0, lambda).unwrap();
        let got = s.forms.form_c(&Const(1.0), &u, &u, &p).unwrap();
        assert_relative_eq!(got, 4.0 * s.forms.mesh.area(), epsilon = 1e-12);
        assert_relative_eq!(got, 8.0, epsilon = 1e-12);
    }
}

#[test]
fn form_d_constant_f_vanishes() {
    let s = setup(4, 2, 2.0, 1.0, true);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let hp = HeatParams::new(1.3, 0.2).unwrap();
    let w = rand_dg(&s, &mut rng, -1.0, 1.0);
    let g = rand_dg(&s, &mut rng, -1.0, 1.0);
    for bc in [hn(), BoundaryCondition::neumann(|_, _| 0.3)] {
        assert!(s.forms.form_d(&bc, &w, &Const(1.7), &g, &hp).unwrap().abs() < 1e-14);
    }
    // Dirichlet keeps the g-weighted boundary term only through ∇g·n(f−T₀)
    let bc = BoundaryCondition::dirichlet(|_, _| 1.7);
    assert!(s.forms.form_d(&bc, &w, &Const(1.7), &g, &hp).unwrap().abs() < 1e-14);
}

#[test]
fn form_d_two_cell_penalty() {
    let s = setup(1, 1, 1.0, 1.0, false);
    let mesh = &s.forms.mesh;
    let e = &mesh.interior_edges[0];
    let mut c = vec![0.0; 6];
    c[e.cells[0] * 3..e.cells[0] * 3 + 3].fill(1.0);
    c[e.cells[1] * 3..e.cells[1] * 3 + 3].fill(2.0);
    let f = FeFunction::from_coeffs(s.dg.clone(), c).unwrap();
    let hp = HeatParams::new(1.0, e.length).unwrap();
    let want = -(2.0 / 3.0) * e.length;
    for bc in [hn(), BoundaryCondition::dirichlet(|_, _| 1.0), BoundaryCondition::neumann(|_, _| 1.0)] {
        let got = s.forms.form_d(&bc, &Const(1.0), &f, &f, &hp).unwrap();
        assert_relative_eq!(got, want, epsilon = 1e-14);
    }
}

#[test]
fn form_d_reports_nonpositive_temperature() {
    let s = setup(4, 2, 2.0, 1.0, true);
    let hp = HeatParams::new(1.0, 0.1).unwrap();
    let mut c = vec![1.0; s.dg.dim()];
    c[7] = -0.5;
    let f = FeFunction::from_coeffs(s.dg.clone(), c).unwrap();
    let err = s.forms.form_d(&hn(), &Const(1.0), &f, &f, &hp).unwrap_err();
    match err {
        Error::Positivity { location, .. } => assert!(matches!(location, Location::Cell { cell: 2, .. })),
        e => panic!("unexpected {e}"),
    }
    let bc = BoundaryCondition::dirichlet(|_, _| -1.0);
    assert!(matches!(
        s.forms.form_e(&bc, &Const(1.0), &Const(1.0), &hp),
        Err(Error::Positivity { location: Location::BoundaryEdge { .. }, .. })
    ));
}

#[test]
fn mismatched_mesh_is_rejected() {
    let s = setup(4, 2, 2.0, 1.0, true);
    let t = setup(4, 2, 2.0, 1.0, true);
    let f = FeFunction::zeros(t.dg.clone());
    assert!(matches!(
        s.forms.form_b(&f, &Const(1.0), &ConstVec([1.0, 0.0])),
        Err(Error::ContractViolation(_))
    ));
}

#[test]
fn form_e_examples() {
    let s = setup(4, 2, 2.0, 1.0, true);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let hp = HeatParams::new(0.8, 0.05).unwrap();
    let w = rand_dg(&s, &mut rng, -1.0, 1.0);
    let f = rand_dg(&s, &mut rng, 0.5, 2.0);
    assert_eq!(s.forms.form_e(&hn(), &w, &f, &hp).unwrap(), 0.0);
    let bc = BoundaryCondition::dirichlet(|_, _| 1.4);
    assert!(s.forms.form_e(&bc, &w, &Const(1.4), &hp).unwrap().abs() < 1e-15);
    let q = 0.37;
    let bc = BoundaryCondition::neumann(move |_, tag| match tag {
        BoundaryTag::Bottom => -q,
        _ => q,
    });
    assert!(s.forms.form_e(&bc, &Const(1.0), &f, &hp).unwrap().abs() < 1e-15);
}

#[test]
fn entropy_rhs_examples() {
    let s = setup(4, 2, 2.0, 1.0, true);
    let hp = HeatParams::new(0.8, 0.05).unwrap();
    assert_eq!(s.forms.entropy_rhs(&hn(), &Const(1.0), &Const(2.0), &hp).unwrap(), 0.0);
    let bc = BoundaryCondition::dirichlet(|_, _| 1.5);
    assert!(s.forms.entropy_rhs(&bc, &Const(1.0), &Const(1.5), &hp).unwrap().abs() < 1e-15);
    // ∇T = 0: only (η/h_e)∫_e w(T−T₀) survives; with w = 1 each boundary
    // edge contributes η(T−T₀)
    let got = s.forms.entropy_rhs(&bc, &Const(1.0), &Const(2.0), &hp).unwrap();
    let nb = s.forms.mesh.boundary_edges.len() as f64;
    assert_relative_eq!(got, nb * hp.eta * 0.5, epsilon = 1e-14);
}

#[test]
fn sequential_and_parallel_bitwise_equal() {
    let s = setup(6, 4, 2.0, 1.0, true);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w = rand_dg(&s, &mut rng, 0.0, 1.0);
    let f = rand_dg(&s, &mut rng, 0.5, 2.0);
    let hp = HeatParams::new(1.0, 0.1).unwrap();
    let seq = s.forms.clone().with_execution(Execution::Sequential);
    let par = s.forms.clone().with_execution(Execution::Parallel);
    let a = seq.form_d(&hn(), &w, &f, &f, &hp).unwrap();
    let b = par.form_d(&hn(), &w, &f, &f, &hp).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn heat_form_consistency_trend() {
    // d_h(1,T,Tw) − d_h(w,T,T) → −∫κ∇T·∇w for the homogeneous Neumann variant
    let t_val = |x: [f64; 2]| 2.0 + (std::f64::consts::PI * x[0]).sin() * x[1];
    let t_grad = |x: [f64; 2]| {
        let pi = std::f64::consts::PI;
        [pi * (pi * x[0]).cos() * x[1], (pi * x[0]).sin()]
    };
    let w_val = |x: [f64; 2]| x[0] * x[0] + x[1];
    let w_grad = |x: [f64; 2]| [2.0 * x[0], 1.0];
    let kappa = 0.9;
    // −κ∫∇T·∇w on the unit square by a fine midpoint grid
    let m = 800;
    let mut exact = 0.0;
    for i in 0..m {
        for j in 0..m {
            let x = [(i as f64 + 0.5) / m as f64, (j as f64 + 0.5) / m as f64];
            let (a, b) = (t_grad(x), w_grad(x));
            exact -= kappa * (a[0] * b[0] + a[1] * b[1]) / (m * m) as f64;
        }
    }
    let mut errs = Vec::new();
    for n in [4, 8, 16] {
        let s = setup(n, n, 1.0, 1.0, false);
        let hp = HeatParams::new(kappa, 0.01 * kappa).unwrap();
        let t = crate::spaces::project_l2(&FnScalar { value: t_val, grad: t_grad }, &s.dg).unwrap();
        let w = crate::spaces::project_l2(&FnScalar { value: w_val, grad: w_grad }, &s.dg).unwrap();
        let tw = crate::spaces::Product(&t, &w);
        let lhs = s.forms.form_d(&hn(), &Const(1.0), &t, &tw, &hp).unwrap() - s.forms.form_d(&hn(), &w, &t, &t, &hp).unwrap();
        errs.push((lhs - exact).abs());
    }
    assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
}

fn rng_strategy() -> impl Strategy<Value = u64> {
    any::<u64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn prop_a_antisymmetric(seed in rng_strategy()) {
        let s = setup(4, 2, 2.0, 1.0, true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, u, v) = (rand_cg(&s, &mut rng), rand_cg(&s, &mut rng), rand_cg(&s, &mut rng));
        let a = s.forms.form_a(&w, &u, &v).unwrap();
        let b = s.forms.form_a(&w, &v, &u).unwrap();
        prop_assert!((a + b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn prop_b_of_one_vanishes(seed in rng_strategy()) {
        let s = setup(4, 2, 2.0, 1.0, true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = rand_dg(&s, &mut rng, -1.0, 1.0);
        let v = rand_cg(&s, &mut rng);
        prop_assert!(s.forms.form_b(&Const(1.0), &g, &v).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn prop_c_nonnegative(seed in rng_strategy()) {
        let s = setup(4, 2, 2.0, 1.0, true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = rand_dg(&s, &mut rng, 0.0, 1.0);
        let u = rand_cg(&s, &mut rng);
        let p = ViscosityParams::stokes(rng.random_range(0.0..2.0)).unwrap();
        prop_assert!(s.forms.form_c(&w, &u, &u, &p).unwrap() >= -1e-12);
    }

    #[test]
    fn prop_d_nonpositive(seed in rng_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hp = HeatParams::new(rng.random_range(0.0..2.0), rng.random_range(0.01..1.0)).unwrap();
        for (i, bc) in variants().into_iter().enumerate() {
            let s = if i == 0 { setup(4, 2, 2.0, 1.0, true) } else { setup(4, 4, 2.0, 1.0, true) };
            let f = rand_dg(&s, &mut rng, 0.5, 2.0);
            let mut w = rand_dg(&s, &mut rng, 0.0, 1.0);
            if bc.needs_interior_support() {
                for cell in 0..s.forms.mesh.num_cells() {
                    if s.forms.mesh.touches_boundary(cell) {
                        w.coeffs[cell * 3..cell * 3 + 3].fill(0.0);
                    }
                }
            }
            prop_assert!(s.forms.form_d(&bc, &w, &f, &f, &hp).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn prop_upwind_nonnegative(seed in rng_strategy()) {
        let s = setup(4, 2, 2.0, 1.0, true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = rand_dg(&s, &mut rng, -1.0, 1.0);
        let u = rand_cg(&s, &mut rng);
        prop_assert!(s.forms.upwind_term(&u, &f, &f, &u).unwrap() >= 0.0);
    }

    #[test]
    fn prop_indicator_sum_is_total(seed in rng_strategy()) {
        // d_h is linear in w: Σ_K d_h(1_K, f, f) = d_h(1, f, f)
        let s = setup(4, 2, 2.0, 1.0, true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = rand_dg(&s, &mut rng, 0.5, 2.0);
        let hp = HeatParams::new(1.0, 0.1).unwrap();
        let total = s.forms.form_d(&hn(), &Const(1.0), &f, &f, &hp).unwrap();
        let parts: f64 = (0..s.forms.mesh.num_cells())
            .map(|k| s.forms.form_d(&hn(), &Indicator(k), &f, &f, &hp).unwrap())
            .sum();
        prop_assert!((total - parts).abs() <= 1e-12 * total.abs().max(1.0));
    }
}
