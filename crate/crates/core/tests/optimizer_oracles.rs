use nalgebra::DVector;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use nlsimp_core::assembly::{assemble_load, DesignField};
use nlsimp_core::grid::build_grid;
use nlsimp_core::harness::output::RunLog;
use nlsimp_core::harness::{run_cross_check, NonlocalSetup, RunConfig};
use nlsimp_core::optimizer::{
    compliance_gradient, find_multiplier, local_compliance_gradient, oc_update, optimize, uniform_start, NonlocalProblem, OcConfig,
    Termination,
};
use nlsimp_core::quadrature::QuadratureBudget;
use nlsimp_core::solve::{local_stiffness, pcg_solve, StateField};

fn setup(n: usize, delta: f64) -> NonlocalSetup {
    NonlocalSetup::new(n, delta, 1.0 / 3.0, 3.0, &QuadratureBudget::default(), None).unwrap()
}

#[test]
fn multiplier_agrees_with_a_dense_sweep() {
    let mut rng = StdRng::seed_from_u64(21);
    let config = OcConfig::default();
    for _ in 0..20 {
        let n = rng.gen_range(5..60);
        let area = 1.0 / n as f64;
        let rho: Vec<f64> = (0..n).map(|_| rng.gen_range(config.rho_min..=config.rho_max)).collect();
        let g: Vec<f64> = (0..n).map(|_| -rng.gen_range(1e-3..10.0) * area).collect();
        let vol = |lambda: f64| area * oc_update(&rho, &g, lambda, area, &config).unwrap().0.iter().sum::<f64>();

        let sweep: Vec<(f64, f64)> = (0..=4000).map(|i| 10f64.powf(-8.0 + 16.0 * i as f64 / 4000.0)).map(|l| (l, vol(l))).collect();
        assert!(sweep.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-15), "volume is monotone in lambda");
        let (vmin, vmax) = (sweep.last().unwrap().1, sweep[0].1);
        let target = vmin + rng.gen_range(0.1..0.9) * (vmax - vmin);

        let m = find_multiplier(&rho, &g, area, target, &config).unwrap();
        assert!(m.active);
        assert!((m.volume - target).abs() <= config.bisection_tol * target, "{} vs {target}", m.volume);
        let i = sweep.iter().position(|(_, v)| *v <= target).unwrap();
        let (lo, hi) = (sweep[i.saturating_sub(1)].0, sweep[i].0);
        assert!(m.lambda >= lo * (1.0 - 1e-9) && m.lambda <= hi * (1.0 + 1e-9), "{} not in [{lo}, {hi}]", m.lambda);
    }
}

#[test]
fn every_iterate_is_feasible() {
    let s = setup(8, 0.25);
    let config = OcConfig { p: 2.0, max_outer_iter: 40, ..OcConfig::default() };
    let load = assemble_load(&s.mesh, |_, _| 1.0);
    let problem = NonlocalProblem { mesh: &s.mesh, assembler: &s.assembler, load };
    let rho0 = uniform_start(&s.mesh, &config).unwrap();
    let mut prev = rho0.rho.clone();
    let mut seen = 0;
    let out = optimize(&problem, &rho0, &config, |rec, d| {
        seen += 1;
        for (new, old) in d.rho.iter().zip(&prev) {
            assert!(*new >= config.rho_min && *new <= config.rho_max);
            assert!(*new >= (1.0 - config.eta) * old * (1.0 - 1e-15) && *new <= (1.0 + config.eta) * old * (1.0 + 1e-15));
        }
        assert!(rec.volume <= config.gamma * (1.0 + config.bisection_tol));
        assert!(rec.compliance > 0.0);
        prev = d.rho.clone();
    })
    .unwrap();
    assert_eq!(seen, out.history.iterations());
    assert!((out.design.volume(&s.mesh) - config.gamma).abs() <= config.bisection_tol * config.gamma);
}

#[test]
fn zero_load_stops_at_once() {
    let s = setup(6, 0.25);
    let config = OcConfig::default();
    let problem = NonlocalProblem { mesh: &s.mesh, assembler: &s.assembler, load: vec![0.0; s.mesh.n_free()] };
    let out = optimize(&problem, &uniform_start(&s.mesh, &config).unwrap(), &config, |_, _| {}).unwrap();
    assert_eq!(out.termination, Termination::Converged);
    assert_eq!(out.history.iterations(), 1);
    assert_eq!(out.compliance, 0.0);
    assert!(out.history.records.iter().all(|r| r.compliance == 0.0));
}

#[test]
fn gradient_is_nonpositive() {
    let s = setup(8, 0.25);
    let mut rng = StdRng::seed_from_u64(22);
    let b = assemble_load(&s.mesh, |x, y| 1.0 + (x - y).sin());
    for p in [1.0, 1.5, 2.0] {
        let rho = (0..s.mesh.n_triangles()).map(|_| rng.gen_range(1e-3..=1.0)).collect();
        let d = DesignField { rho, rho_min: 1e-3, rho_max: 1.0, gamma: 0.4, p };
        let k = s.assembler.stiffness(&d).unwrap();
        let (u, _) = pcg_solve(&s.mesh, &k, &b, 1e-12, 10_000).unwrap();
        assert!(compliance_gradient(&s.assembler, &d, &u).unwrap().iter().all(|g| *g <= 0.0));
    }
}

#[test]
fn gradient_respects_the_mesh_symmetries() {
    let s = setup(8, 0.25);
    let mesh = &s.mesh;
    let m = mesh.cells_per_side();
    // density symmetric under both the diagonal reflection and the half-turn about (1/2, 1/2)
    let f = |x: f64, y: f64| 0.2 + 0.7 * (-((x - 0.5).powi(2) + (y - 0.5).powi(2)) * 4.0).exp() + 0.05 * (x - 0.5) * (y - 0.5);
    let rho = (0..mesh.n_triangles()).map(|t| {
        let c = mesh.centroid(t);
        f(c[0], c[1])
    });
    let d = DesignField { rho: rho.collect(), rho_min: 1e-3, rho_max: 1.0, gamma: 0.4, p: 2.0 };
    let k = s.assembler.stiffness(&d).unwrap();
    let (u, _) = pcg_solve(mesh, &k, &assemble_load(mesh, |_, _| 1.0), 1e-13, 10_000).unwrap();
    let g = compliance_gradient(&s.assembler, &d, &u).unwrap();
    let scale = g.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    for t in 0..mesh.n_triangles() {
        let (i, j, ty) = mesh.cell_of(t);
        let mirror = mesh.triangle_index(j, i, 1 - ty);
        let turned = mesh.triangle_index(m - 1 - i, m - 1 - j, 1 - ty);
        assert!((g[t] - g[mirror]).abs() <= 1e-9 * scale, "mirror of {t}");
        assert!((g[t] - g[turned]).abs() <= 1e-9 * scale, "half-turn of {t}");
    }
}

#[test]
fn local_gradient_matches_finite_differences() {
    let mesh = build_grid(8, 0.0).unwrap();
    let b = assemble_load(&mesh, |_, _| 1.0);
    let mut rng = StdRng::seed_from_u64(23);
    for p in [1.0, 2.0] {
        let rho: Vec<f64> = (0..mesh.n_triangles()).map(|_| rng.gen_range(0.1..=1.0)).collect();
        let design = DesignField { rho, rho_min: 1e-3, rho_max: 1.0, gamma: 0.4, p };
        let solve = |d: &DesignField| {
            let k = local_stiffness(&mesh, &d.conductivity()).unwrap().to_dense();
            let u = k.cholesky().unwrap().solve(&DVector::from_column_slice(&b));
            (b.iter().zip(u.iter()).map(|(x, y)| x * y).sum::<f64>(), u.as_slice().to_vec())
        };
        let (_, u) = solve(&design);
        let g = local_compliance_gradient(&mesh, &design, &StateField::from_free(&mesh, &u));
        for _ in 0..5 {
            let e = rng.gen_range(0..mesh.n_triangles());
            let step = 1e-5 * design.rho[e];
            let (mut plus, mut minus) = (design.clone(), design.clone());
            plus.rho[e] += step;
            minus.rho[e] -= step;
            let fd = (solve(&plus).0 - solve(&minus).0) / (2.0 * step);
            assert!((g[e] - fd).abs() <= 1e-5 * fd.abs(), "p={p} e={e}: {} vs {fd}", g[e]);
        }
    }
}

#[test]
fn cross_check_diagonal_reproduces_each_optimum() {
    let cfg = RunConfig { n_side: 8, deltas: vec![0.25, 0.125], max_outer_iter: 30, ..RunConfig::default() };
    let (runs, m) = run_cross_check(&cfg, &RunLog::sink()).unwrap();
    assert_eq!(m.len(), 2);
    for (i, row) in m.iter().enumerate() {
        assert!(row.iter().all(|v| *v > 0.0));
        assert!((row[i] - runs[i].summary.compliance).abs() <= 1e-12 * row[i]);
    }
}
