use super::output::{read_csv, CSV_HEADER};
use super::*;
use crate::diagnostics::kinetic_l2;
use crate::forms::Forms;
use crate::spaces::FeSpace;
use crate::gas::{pressure, temperature};
use crate::spaces::{Const, FnScalar};

fn small(kind: BcKind) -> RbConfig {
    let mut cfg = RbConfig::default();
    cfg.mesh.nx = 4;
    cfg.mesh.ny = 2;
    cfg.bc.kind = kind;
    cfg.time.t_end = 0.8;
    cfg
}

#[test]
fn rayleigh_number_reproduces_reported_values() {
    let mut cfg = RbConfig::default();
    assert!((rayleigh_number(&cfg) - 4000.0).abs() <= 0.1, "{}", rayleigh_number(&cfg));
    cfg.gas.z = 2.0;
    assert!((rayleigh_number(&cfg) - 90909.1).abs() <= 0.5, "{}", rayleigh_number(&cfg));
    // m = 0 reduces to Re² Z² Pr / γ
    cfg.gas.re = 37.0;
    cfg.gas.pr = 0.9;
    let g = &cfg.gas;
    let expected = g.re * g.re * g.z * g.z * g.pr / g.gamma;
    assert!((rayleigh_number(&cfg) - expected).abs() <= 1e-12 * expected);
}

#[test]
fn derived_coefficients() {
    let cfg = RbConfig::default();
    // κ = 1.1 / (0.1 · 100 · 2.5)
    assert!((cfg.kappa() - 0.044).abs() < 1e-15);
    assert!((cfg.eta() - 0.00044).abs() < 1e-17);
    assert!((cfg.mu() - 0.005).abs() < 1e-17);
    assert!((cfg.froude() - 1.0 / 0.419524).abs() < 1e-14);
    let mut m1 = cfg.clone();
    m1.gas.m = 1.0;
    assert!((m1.froude() - 1.0 / (2.0 * 0.419524)).abs() < 1e-14);
    let mut flat = cfg;
    flat.gas.z = 0.0;
    assert!(flat.froude().is_infinite());
    assert!(flat.gas_params().is_ok());
}

#[test]
fn neumann_flux_values_and_balance() {
    let cfg = small(BcKind::Neumann);
    let q0 = neumann_flux_data(&cfg);
    let expected = 0.419524 * 11.0 / (100.0 * 2.5);
    assert!((q0([0.3, 0.0], BoundaryTag::Bottom) + expected).abs() < 1e-15);
    assert!((q0([0.3, 1.0], BoundaryTag::Top) - expected).abs() < 1e-15);
    assert!((expected - 0.018459056).abs() < 1e-9);

    // ∫_{∂Ω} q₀ via e_h(1, f) with any positive f
    let disc = Discretization::new(&cfg).unwrap();
    let forms = Forms::new(disc.mesh.clone(), disc.quad.clone());
    let sc = cfg.step_config(Execution::Sequential).unwrap();
    let f = FnScalar {
        value: |x: [f64; 2]| 1.0 + x[1],
        grad: |_: [f64; 2]| [0.0, 1.0],
    };
    let total = forms.form_e(&sc.bc, &Const(1.0), &f, &sc.heat).unwrap();
    assert!(total.abs() < 1e-15, "{total}");

    let mut flat = cfg;
    flat.gas.z = 0.0;
    let q = neumann_flux_data(&flat);
    assert_eq!(q([0.0, 0.0], BoundaryTag::Bottom), 0.0);
    assert_eq!(q([0.0, 1.0], BoundaryTag::Top), 0.0);
}

#[test]
fn entropy_inversion_recovers_temperature() {
    let gp = RbConfig::default().gas_params().unwrap();
    assert_eq!(entropy_from_temperature(1.0, 1.0, gp.gamma), 0.0);
    for &(rho, t) in &[(0.3, 1.2), (1.0, 1.419524), (2.5, 0.7), (1.7, 3.0)] {
        let s = entropy_from_temperature(rho, t, gp.gamma);
        assert!((temperature(rho, s, &gp).unwrap() - t).abs() <= 1e-12 * t);
    }
}

#[test]
fn hydrostatic_pressure_profile() {
    for m in [0.0, 0.5, 2.0] {
        let mut cfg = RbConfig::default();
        cfg.gas.m = m;
        let gp = cfg.gas_params().unwrap();
        for z in [0.0, 0.25, 0.5, 1.0] {
            let t = initial_temperature(cfg.gas.z, z);
            let rho = t.powf(m);
            let s = entropy_from_temperature(rho, t, gp.gamma);
            let p = pressure(rho, s, &gp).unwrap();
            assert!((p - t.powf(m + 1.0)).abs() <= 1e-12 * p);
        }
    }
}

#[test]
fn initial_state_matches_profiles() {
    let mut cfg = small(BcKind::Dirichlet);
    cfg.mesh.nx = 8;
    cfg.mesh.ny = 4;
    let disc = Discretization::new(&cfg).unwrap();
    let st = initial_state(&cfg, &disc).unwrap();
    let gp = cfg.gas_params().unwrap();
    // m = 0: ρ ≡ 1 exactly
    assert!(st.rho.coeffs.iter().all(|&c| (c - 1.0).abs() < 1e-14));
    let t = st.temperature(&gp).unwrap();
    for cell in 0..disc.mesh.num_cells() {
        let pts = [[1.0 / 3.0, 1.0 / 3.0]];
        let x = disc.mesh.geometry[cell].map(pts[0]);
        let tv = t.evaluate(cell, &pts)[0];
        assert!((tv - initial_temperature(cfg.gas.z, x[1])).abs() < 1e-3, "cell {cell}");
    }
    let wall = disc.cg.wall_mask();
    let n = disc.cg.n_scalar();
    for (d, &x) in disc.cg.dof_coords().iter().enumerate() {
        let uz = st.u.coeffs[n + d];
        assert_eq!(st.u.coeffs[d], 0.0);
        if wall[d] || bump(x) == 0.0 {
            assert_eq!(uz, 0.0);
        } else {
            assert_eq!(uz, bump(x));
        }
    }
}

#[test]
fn bump_shape() {
    assert!((bump([1.0, 0.5]) - (-5.0f64).exp()).abs() < 1e-16);
    assert_eq!(bump([1.0, 0.5 + 0.2f64.sqrt()]), 0.0);
    assert_eq!(bump([0.0, 0.0]), 0.0);
    assert!(bump([1.1, 0.6]) > 0.0);
}

#[test]
fn config_parsing() {
    let cfg = RbConfig::from_toml("").unwrap();
    assert_eq!(cfg, RbConfig::default());
    let text = "[mesh]\nnx = 8\nny = 4\n[bc]\nkind = \"neumann\"\n[time]\nt_end = 10.0\nupwind = true\n";
    let cfg = RbConfig::from_toml(text).unwrap();
    assert_eq!((cfg.mesh.nx, cfg.mesh.ny), (8, 4));
    assert_eq!(cfg.bc.kind, BcKind::Neumann);
    assert!(cfg.time.upwind);
    assert_eq!(RbConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);

    for bad in [
        "[mesh]\nnx = 1\n",
        "[gas]\ngamma = 1.0\n",
        "[gas]\nre = -3.0\n",
        "[gas]\nm = -1.5\n",
        "[time]\ndt = 0.0\n",
        "[bc]\nkind = \"robin\"\n",
        "[mesh]\nnz = 3\n",
        "[extra]\na = 1\n",
        "not toml at all [",
    ] {
        assert!(matches!(RbConfig::from_toml(bad), Err(Error::Config(_))), "{bad}");
    }
}

#[test]
fn sweeps_vary_one_parameter() {
    let base = RbConfig::default();
    for param in [SweepParam::Re, SweepParam::M, SweepParam::Z, SweepParam::Pr] {
        let runs = sweep(&base, param).unwrap();
        assert_eq!(runs.len(), RA_SWEEP.len());
        for (ra, cfg) in runs {
            assert!((rayleigh_number(&cfg) - ra).abs() <= 1e-9 * ra, "{param:?} {ra}");
            let (a, b) = (&base.gas, &cfg.gas);
            let changed = [a.re != b.re, a.m != b.m, a.z != b.z, a.pr != b.pr];
            let idx = match param {
                SweepParam::Re => 0,
                SweepParam::M => 1,
                SweepParam::Z => 2,
                SweepParam::Pr => 3,
            };
            for (i, &c) in changed.iter().enumerate() {
                if i != idx {
                    assert!(!c, "{param:?} changed parameter {i}");
                }
            }
            assert_eq!(a.gamma, b.gamma);
        }
    }
    // the base point is a fixed point of its own sweep
    let same = with_rayleigh(&base, SweepParam::M, rayleigh_number(&base)).unwrap();
    assert!(same.gas.m.abs() < 1e-12);
    assert!("Q".parse::<SweepParam>().is_err());
    assert_eq!("pr".parse::<SweepParam>().unwrap(), SweepParam::Pr);
}

#[test]
fn flat_rest_state_stays_at_rest() {
    let mut cfg = small(BcKind::Insulated);
    cfg.gas.z = 0.0;
    cfg.init.bump = 0.0;
    let summary = Simulation::new(&cfg, Execution::Parallel).unwrap().run(|_, _| Ok(())).unwrap();
    assert_eq!(summary.steps, 2);
    for r in &summary.records {
        assert!(r.kinetic_l2 <= 1e-10);
    }
    assert!(kinetic_l2(&summary.final_state) <= 1e-10);
}

#[test]
fn retries_halve_dt_then_give_up() {
    let mut cfg = small(BcKind::Dirichlet);
    cfg.time.newton_tol = 1e-300;
    cfg.time.newton_max_iter = 1;
    let mut sim = Simulation::new(&cfg, Execution::Sequential).unwrap();
    let err = sim.advance().unwrap_err();
    assert!(matches!(err, Error::NonConvergence { .. }), "{err}");
    assert_eq!(sim.retries, MAX_RETRIES);
    assert_eq!(sim.steps, 0);
}

#[test]
fn last_step_lands_on_t_end() {
    let mut cfg = small(BcKind::Dirichlet);
    cfg.time.t_end = 1.0;
    let summary = Simulation::new(&cfg, Execution::Parallel).unwrap().run(|_, _| Ok(())).unwrap();
    assert_eq!(summary.steps, 3);
    let last = summary.records.last().unwrap();
    assert!((last.time - 1.0).abs() < 1e-12);
}

#[test]
fn csv_and_snapshots_are_written_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(BcKind::Neumann);
    cfg.output.snapshot_stride = 1;
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let summary = run_to_dir(&cfg, &a, Execution::Sequential).unwrap();
    run_to_dir(&cfg, &b, Execution::Parallel).unwrap();

    let text = std::fs::read_to_string(a.join("diagnostics.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    let rows = read_csv(&a.join("diagnostics.csv")).unwrap();
    assert_eq!(rows.len(), summary.steps + 1);
    for (row, rec) in rows.iter().zip(&summary.records) {
        assert_eq!(row[0], rec.time);
        assert_eq!(row[1], rec.total_energy);
        assert_eq!(row[7], rec.min_second_law_margin);
    }
    assert_eq!(
        std::fs::read(a.join("diagnostics.csv")).unwrap(),
        std::fs::read(b.join("diagnostics.csv")).unwrap()
    );

    let vtk = std::fs::read_to_string(a.join("snapshot_000001.vtk")).unwrap();
    let nc = 2 * cfg.mesh.nx * cfg.mesh.ny;
    assert!(vtk.starts_with("# vtk DataFile Version 3.0\n"));
    assert!(vtk.contains(&format!("POINTS {} double", 3 * nc)));
    assert!(vtk.contains(&format!("CELL_DATA {nc}")));
    assert!(vtk.contains("SCALARS T double 1") && vtk.contains("VECTORS u double"));
    assert!(a.join("snapshot_000002.vtk").exists());
    assert_eq!(
        std::fs::read(a.join("snapshot_000002.vtk")).unwrap(),
        std::fs::read(b.join("snapshot_000002.vtk")).unwrap()
    );
}
