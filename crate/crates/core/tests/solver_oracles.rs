use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use nlsimp_core::assembly::{assemble_load, DesignField, SparseMatrix};
use nlsimp_core::grid::NodeRegion;
use nlsimp_core::harness::NonlocalSetup;
use nlsimp_core::quadrature::QuadratureBudget;
use nlsimp_core::solve::{compliance, local_solve, pcg, pcg_solve};

fn setup(n: usize, delta: f64) -> NonlocalSetup {
    NonlocalSetup::new(n, delta, 1.0 / 3.0, 3.0, &QuadratureBudget::default(), None).unwrap()
}

fn random_design(rng: &mut StdRng, nt: usize, p: f64) -> DesignField {
    DesignField { rho: (0..nt).map(|_| rng.gen_range(1e-3..=1.0)).collect(), rho_min: 1e-3, rho_max: 1.0, gamma: 0.4, p }
}

#[test]
fn random_spd_system_matches_dense_cholesky() {
    let mut rng = StdRng::seed_from_u64(11);
    let n = 50;
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let spd = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
    let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let k = SparseMatrix::from_dense(&spd);
    let tol = 1e-12;
    let (x, rep) = pcg(&k, &b, tol, 10 * n, None).unwrap();
    let bv = DVector::from_column_slice(&b);
    let exact = spd.clone().cholesky().unwrap().solve(&bv);
    let res = (&bv - &spd * DVector::from_column_slice(&x)).norm() / bv.norm();
    assert!(res <= tol, "{res:e}");
    assert!(rep.residual <= tol);
    let err = (DVector::from_column_slice(&x) - &exact).norm() / exact.norm();
    assert!(err < 1e-8, "{err:e}");
}

#[test]
fn warm_start_from_the_solution_needs_no_iterations() {
    let s = setup(6, 0.25);
    let d = DesignField::uniform(&s.mesh, 0.4, 1e-3, 1.0, 0.4, 1.0).unwrap();
    let k = s.assembler.stiffness(&d).unwrap();
    let b = assemble_load(&s.mesh, |_, _| 1.0);
    let (x, _) = pcg(&k, &b, 1e-12, 1000, None).unwrap();
    let (_, rep) = pcg(&k, &b, 1e-10, 1000, Some(&x)).unwrap();
    assert_eq!(rep.iterations, 0);
}

#[test]
fn compliance_identities() {
    let s = setup(8, 0.25);
    let mesh = &s.mesh;
    let mut rng = StdRng::seed_from_u64(12);
    let d = random_design(&mut rng, mesh.n_triangles(), 2.0);
    let k = s.assembler.stiffness(&d).unwrap();
    let tol = 1e-11;
    let b = assemble_load(mesh, |x, y| 1.0 + x * y);
    let (u, _) = pcg_solve(mesh, &k, &b, tol, 10 * mesh.n_free()).unwrap();
    let j = compliance(mesh, &u, &b);
    assert!(j > 0.0);

    let uf = u.free_values(mesh);
    let quad: f64 = k.mul(&uf).iter().zip(&uf).map(|(a, b)| a * b).sum();
    assert!((j - quad).abs() <= 10.0 * tol * j);

    let b2: Vec<f64> = b.iter().map(|x| 2.0 * x).collect();
    let (u2, _) = pcg_solve(mesh, &k, &b2, tol, 10 * mesh.n_free()).unwrap();
    assert!((compliance(mesh, &u2, &b2) - 4.0 * j).abs() <= 10.0 * tol * 4.0 * j);

    let zero = vec![0.0; mesh.n_free()];
    let (u0, _) = pcg_solve(mesh, &k, &zero, tol, 10).unwrap();
    assert!(u0.values.iter().all(|v| *v == 0.0));

    // the state maximizes 2 l(v) - v^T K v
    for _ in 0..5 {
        let v: Vec<f64> = uf.iter().map(|x| x * (1.0 + rng.gen_range(-0.2..0.2))).collect();
        let kv = k.mul(&v);
        let lv: f64 = b.iter().zip(&v).map(|(a, b)| a * b).sum();
        let e: f64 = kv.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!(2.0 * lv - e <= j * (1.0 + 1e-12));
    }
}

#[test]
fn state_vanishes_exactly_on_the_collar() {
    let s = setup(8, 0.25);
    let d = DesignField::uniform(&s.mesh, 0.7, 1e-3, 1.0, 0.4, 1.0).unwrap();
    let k = s.assembler.stiffness(&d).unwrap();
    let (u, _) = pcg_solve(&s.mesh, &k, &assemble_load(&s.mesh, |_, _| 1.0), 1e-10, 1000).unwrap();
    for (n, v) in u.values.iter().enumerate() {
        if s.mesh.node_region[n] == NodeRegion::Constrained {
            assert_eq!(*v, 0.0);
        }
    }
}

#[test]
fn more_material_never_raises_compliance() {
    let s = setup(6, 0.3);
    let mesh = &s.mesh;
    let b = assemble_load(mesh, |_, _| 1.0);
    let tol = 1e-12;
    let mut rng = StdRng::seed_from_u64(13);
    for p in [1.0, 2.0] {
        let base = random_design(&mut rng, mesh.n_triangles(), p);
        let mut more = base.clone();
        for r in more.rho.iter_mut() {
            *r = (*r + rng.gen_range(0.0..0.3)).min(1.0);
        }
        let solve = |d: &DesignField| {
            let k = s.assembler.stiffness(d).unwrap();
            let (u, _) = pcg_solve(mesh, &k, &b, tol, 10 * mesh.n_free()).unwrap();
            compliance(mesh, &u, &b)
        };
        let (j0, j1) = (solve(&base), solve(&more));
        assert!(j1 <= j0 * (1.0 + 10.0 * tol), "p={p}: {j1} > {j0}");
    }
}

#[test]
fn raising_one_density_does_not_lower_any_diagonal_entry() {
    let s = setup(5, 0.3);
    let mut rng = StdRng::seed_from_u64(14);
    let d = random_design(&mut rng, s.mesh.n_triangles(), 2.0);
    let k0 = s.assembler.stiffness(&d).unwrap().diagonal();
    for e in [0, s.mesh.n_triangles() / 2, s.mesh.n_triangles() - 1] {
        let mut up = d.clone();
        up.rho[e] = (up.rho[e] * 1.5).min(1.0);
        let k1 = s.assembler.stiffness(&up).unwrap().diagonal();
        assert!(k0.iter().zip(&k1).all(|(a, b)| b >= a));
    }
}

#[test]
fn uniform_local_conductivity_scales_the_solution() {
    let mesh = nlsimp_core::grid::build_grid(12, 0.0).unwrap();
    let b = assemble_load(&mesh, |x, y| x + y * y);
    let ones = vec![1.0; mesh.n_triangles()];
    let threes = vec![3.0; mesh.n_triangles()];
    let (u1, _) = local_solve(&mesh, &ones, &b, 1e-13, 1000).unwrap();
    let (u3, _) = local_solve(&mesh, &threes, &b, 1e-13, 1000).unwrap();
    for (a, c) in u1.values.iter().zip(&u3.values) {
        assert!((a - 3.0 * c).abs() <= 1e-10 * a.abs().max(1e-12));
    }
}
