use std::collections::HashSet;
use std::sync::OnceLock;

use proptest::prelude::*;

use nlsimp_core::assembly::DesignField;
use nlsimp_core::grid::{build_grid, enumerate_pairs, NodeRegion};
use nlsimp_core::harness::{NonlocalSetup, RunConfig};
use nlsimp_core::kernel::KernelSpec;
use nlsimp_core::optimizer::{oc_update, OcConfig};
use nlsimp_core::quadrature::QuadratureBudget;

fn small_setup() -> &'static NonlocalSetup {
    static SETUP: OnceLock<NonlocalSetup> = OnceLock::new();
    SETUP.get_or_init(|| NonlocalSetup::new(5, 0.3, 1.0 / 3.0, 3.0, &QuadratureBudget::default(), None).unwrap())
}

proptest! {
    #[test]
    fn kernel_support_positivity_and_lower_bound(delta in 0.01f64..1.0, s in 0.05f64..0.95, t in 0.0f64..1.0) {
        let spec = KernelSpec::new(delta, s, 3.0).unwrap();
        prop_assert_eq!(spec.value(delta * (1.0 + t)), 0.0);
        prop_assert_eq!(spec.value(delta), 0.0);
        let r = delta * t.max(1e-6);
        if r < delta {
            prop_assert!(spec.value(r) > 0.0);
        }
        // log-spaced point in (0, delta/2]
        let r = 0.5 * delta * 10f64.powf(-6.0 * t);
        let lhs = spec.value(r) * r.powf(2.0 * s);
        prop_assert!(lhs >= spec.lower_bound_constant() * (1.0 - 1e-14));
    }

    #[test]
    fn refinement_quadruples_interior_and_interior_nodes_are_free(n in 1usize..12, delta in 0.0f64..0.5) {
        let coarse = build_grid(n, delta).unwrap();
        let fine = build_grid(2 * n, delta).unwrap();
        let count = |m: &nlsimp_core::grid::TriangleMesh| (0..m.n_triangles()).filter(|t| m.is_interior(*t)).count();
        prop_assert_eq!(count(&fine), 4 * count(&coarse));
        for t in (0..coarse.n_triangles()).filter(|t| coarse.is_interior(*t)) {
            for v in coarse.triangles[t] {
                let [x, y] = coarse.nodes[v];
                if x > 0.0 && x < 1.0 && y > 0.0 && y < 1.0 {
                    prop_assert_eq!(coarse.node_region[v], NodeRegion::Free);
                }
            }
        }
    }

    #[test]
    fn pair_list_is_a_set_of_unordered_pairs(n in 2usize..7, delta in 0.05f64..0.6) {
        let mesh = build_grid(n, delta).unwrap();
        let pairs = enumerate_pairs(&mesh, delta);
        let set: HashSet<(u32, u32)> = pairs.iter().map(|p| (p.t1.min(p.t2), p.t1.max(p.t2))).collect();
        prop_assert_eq!(set.len(), pairs.len());
        for p in pairs.iter() {
            prop_assert_eq!(p.offset.reversed().reversed(), p.offset);
        }
    }

    #[test]
    fn oc_update_respects_bounds_and_move_limits(
        rho in proptest::collection::vec(1e-3f64..=1.0, 1..40),
        scale in 1e-6f64..1e3,
        lambda in 1e-6f64..1e6,
        eta in 0.01f64..0.9,
        xi in 0.05f64..0.95,
    ) {
        let config = OcConfig { eta, xi, ..OcConfig::default() };
        let g: Vec<f64> = rho.iter().enumerate().map(|(i, r)| -scale * (1.0 + (i as f64 * 0.37).sin()) * r).collect();
        let area = 1.0 / rho.len() as f64;
        let (new, positive) = oc_update(&rho, &g, lambda, area, &config).unwrap();
        prop_assert_eq!(positive, 0);
        for (n, r) in new.iter().zip(&rho) {
            prop_assert!(*n >= config.rho_min && *n <= config.rho_max);
            prop_assert!(*n >= (1.0 - eta) * r && *n <= (1.0 + eta) * r);
        }
        let c = 7.25;
        let gs: Vec<f64> = g.iter().map(|x| c * x).collect();
        let (scaled, _) = oc_update(&rho, &gs, c * lambda, area, &config).unwrap();
        for (a, b) in new.iter().zip(&scaled) {
            prop_assert!((a - b).abs() <= 1e-14 * a);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stiffness_scales_with_the_design(c in 0.01f64..1.0, p in 1.0f64..=2.0, seed in 0u64..1000) {
        let s = small_setup();
        let nt = s.mesh.n_triangles();
        let rho: Vec<f64> = (0..nt).map(|t| 0.01 + 0.98 * (((t as u64 * 2654435761 + seed) % 1000) as f64 / 1000.0)).collect();
        let base = DesignField { rho: rho.clone(), rho_min: 1e-4, rho_max: 1.0, gamma: 0.4, p };
        let scaled = DesignField { rho: rho.iter().map(|r| c * r).collect(), ..base.clone() };
        let (k, kc) = (s.assembler.stiffness(&base).unwrap(), s.assembler.stiffness(&scaled).unwrap());
        prop_assert_eq!(k.asymmetry(), 0.0);
        let f = c.powf(p);
        for (a, b) in k.values.iter().zip(&kc.values) {
            prop_assert!((f * a - b).abs() <= 1e-13 * (f * a).abs());
        }
    }

    #[test]
    fn stiffness_energy_is_nonnegative(seed in 0u64..10_000, p in 1.0f64..=2.0) {
        let s = small_setup();
        let nt = s.mesh.n_triangles();
        let rho = (0..nt).map(|t| 1e-3 + 0.999 * (((t as u64 * 40503 + seed) % 997) as f64 / 997.0)).collect();
        let d = DesignField { rho, rho_min: 1e-3, rho_max: 1.0, gamma: 0.4, p };
        let k = s.assembler.stiffness(&d).unwrap();
        let u: Vec<f64> = (0..k.n).map(|i| (((i as u64 * 7919 + seed) % 211) as f64 / 105.5) - 1.0).collect();
        let e: f64 = k.mul(&u).iter().zip(&u).map(|(a, b)| a * b).sum();
        prop_assert!(e >= 0.0);
        let parts = s.assembler.pair_energies(&s.mesh.expand(&u));
        prop_assert!(parts.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn config_text_round_trips(n in 1usize..200, delta in 0.01f64..0.5, p in 1.0f64..=2.0, gamma in 0.1f64..0.9, every in 0usize..50) {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(&[
            format!("n_side={n}"),
            format!("delta={delta}"),
            format!("p={p}"),
            format!("gamma={gamma}"),
            format!("snapshot_every={every}"),
            "f=expr: x * y + 1".to_string(),
        ]).unwrap();
        let back = RunConfig::parse_str(&cfg.to_text()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
