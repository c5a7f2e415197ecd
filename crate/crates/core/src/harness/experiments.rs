//! Experiment drivers: quadrature convergence, h- and horizon-convergence, optimization and
//! the cross-check of designs between horizons.

use std::path::Path;

use rayon::prelude::*;

use crate::assembly::{assemble_load_full_from_values, load_points, precompute_reference_pairs, Assembler, DesignField, PairTable};
use crate::error::{Error, Result};
use crate::grid::{build_grid, enumerate_pairs, offset_stencil, PairList, PairOffset, TriangleMesh};
use crate::kernel::KernelSpec;
use crate::optimizer::{self, evaluate, LocalProblem, NonlocalProblem, OcOutcome, OcRecord};
use crate::quadrature::rules::triangle_collapsed;
use crate::quadrature::{integrate_pair_with, PairKind, QuadratureBudget};

use super::config::{Expression, RunConfig, SourceSpec};
use super::output::RunLog;
use super::sources::{gamma_u, mms_rhs_nonlocal, mms_u, GaussianDensity};

/// Mesh, pair table, pair list and assembler for one `(n_side, delta)`.
pub struct NonlocalSetup {
    pub mesh: TriangleMesh,
    pub spec: KernelSpec,
    pub table: PairTable,
    pub pairs: PairList,
    pub assembler: Assembler,
}

impl NonlocalSetup {
    pub fn new(n_side: usize, delta: f64, s: f64, beta: f64, budget: &QuadratureBudget, cache_dir: Option<&Path>) -> Result<Self> {
        let spec = KernelSpec::new(delta, s, beta)?;
        let mesh = build_grid(n_side, delta)?;
        let table = match cache_dir {
            Some(dir) => PairTable::load_or_compute(&mesh, &spec, budget, Some(dir))?,
            None => precompute_reference_pairs(&mesh, &spec, budget)?,
        };
        let pairs = enumerate_pairs(&mesh, delta);
        let assembler = Assembler::new(&mesh, &pairs, &table)?;
        Ok(Self { mesh, spec, table, pairs, assembler })
    }

    pub fn from_config(cfg: &RunConfig, n_side: usize, delta: f64) -> Result<Self> {
        Self::new(n_side, delta, cfg.s, cfg.beta, &cfg.budget, cfg.cache_dir.as_deref())
    }
}

/// Source values at the load quadrature points of `mesh`.
pub fn sample_source(source: &SourceSpec, mesh: &TriangleMesh, spec: Option<&KernelSpec>, tol: f64) -> Result<Vec<f64>> {
    let pts = load_points(mesh);
    match source {
        SourceSpec::Uniform => Ok(vec![1.0; pts.len()]),
        SourceSpec::MmsLocalDivergence => {
            let g = GaussianDensity::default();
            Ok(pts.iter().map(|p| g.source(p[0], p[1])).collect())
        }
        SourceSpec::Expression(e) => {
            let expr = Expression::compile(e)?;
            pts.iter().map(|p| expr.eval(p[0], p[1])).collect()
        }
        SourceSpec::MmsNonlocal => {
            let spec = spec.ok_or_else(|| Error::Config("the nonlocal manufactured source needs a horizon".into()))?;
            pts.par_iter().map(|p| mms_rhs_nonlocal(&mms_u, spec, *p, tol)).collect()
        }
    }
}

/// Free-DOF load vector for a source.
pub fn source_load(source: &SourceSpec, mesh: &TriangleMesh, spec: Option<&KernelSpec>, tol: f64) -> Result<Vec<f64>> {
    let values = sample_source(source, mesh, spec, tol)?;
    Ok(mesh.restrict(&assemble_load_full_from_values(mesh, &values)?))
}

/// `(||u_h - u||, ||u||)` in `L2` over the whole mesh, `u_h` piecewise linear.
pub fn l2_error(mesh: &TriangleMesh, uh: &[f64], exact: impl Fn(f64, f64) -> f64) -> (f64, f64) {
    let rule = triangle_collapsed(6);
    let area = mesh.element_area();
    let (mut e2, mut n2) = (0.0, 0.0);
    for t in 0..mesh.n_triangles() {
        let nodes = mesh.triangles[t];
        let c = mesh.triangle(t).coords;
        for q in &rule {
            let l = q.bary;
            let x = l[0] * c[0][0] + l[1] * c[1][0] + l[2] * c[2][0];
            let y = l[0] * c[0][1] + l[1] * c[1][1] + l[2] * c[2][1];
            let v = l[0] * uh[nodes[0]] + l[1] * uh[nodes[1]] + l[2] * uh[nodes[2]];
            let u = exact(x, y);
            e2 += q.weight * area * (v - u).powi(2);
            n2 += q.weight * area * u * u;
        }
    }
    (e2.sqrt(), n2.sqrt())
}

/// Element averages of a density field.
pub fn element_averages(mesh: &TriangleMesh, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let rule = triangle_collapsed(5);
    (0..mesh.n_triangles())
        .map(|t| {
            let c = mesh.triangle(t).coords;
            rule.iter()
                .map(|q| {
                    let l = q.bary;
                    q.weight
                        * f(
                            l[0] * c[0][0] + l[1] * c[1][0] + l[2] * c[2][0],
                            l[0] * c[0][1] + l[1] * c[1][1] + l[2] * c[2][1],
                        )
                })
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadRow {
    pub kind: PairKind,
    pub points: usize,
    pub rel_error: f64,
}

/// Representative pair of every kind on a lattice of cell size `h_side`: the closest disjoint
/// pair of each of the two disjoint kinds. A disjoint kind with no in-horizon member (coarse
/// lattices) is left out.
pub fn example_pairs(h_side: f64, delta: f64) -> Vec<(PairKind, PairOffset)> {
    let off = |ty1, di, dj, ty2| PairOffset { ty1, di, dj, ty2 };
    let mut out = Vec::new();
    for kind in [PairKind::Near, PairKind::Far] {
        let pick = offset_stencil(h_side, delta)
            .into_iter()
            .filter(|(o, k, _)| *k < 0 && {
                let (t1, t2) = o.reference_pair(h_side);
                PairKind::of(&t1, &t2, delta) == kind
            })
            .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
        if let Some((o, _, _)) = pick {
            out.push((kind, o));
        }
    }
    out.push((PairKind::Vertex, off(0, 1, 1, 0)));
    out.push((PairKind::Edge, off(0, 0, 0, 1)));
    out.push((PairKind::Identical, off(0, 0, 0, 0)));
    out
}

/// Relative Frobenius error of each example block against a `reference`-point solution.
pub fn quad_convergence_report(spec: &KernelSpec, h_side: f64, points: std::ops::RangeInclusive<usize>, reference: usize) -> Result<Vec<QuadRow>> {
    let mut rows = Vec::new();
    for (kind, off) in example_pairs(h_side, spec.delta) {
        let (t1, t2) = off.reference_pair(h_side);
        let exact = integrate_pair_with(&t1, &t2, spec, reference)?;
        let scale = exact.frobenius();
        for n in points.clone() {
            let b = integrate_pair_with(&t1, &t2, spec, n)?;
            let err = b.entries.iter().zip(&exact.entries).map(|(a, e)| (a - e).powi(2)).sum::<f64>().sqrt() / scale;
            rows.push(QuadRow { kind, points: n, rel_error: err });
        }
    }
    Ok(rows)
}

fn unit_design(mesh: &TriangleMesh) -> DesignField {
    DesignField { rho: vec![1.0; mesh.n_triangles()], rho_min: 1e-3, rho_max: 1.0, gamma: 0.5, p: 1.0 }
}

fn solver_limit(cfg: &RunConfig, mesh: &TriangleMesh) -> usize {
    cfg.solver_max_iter.unwrap_or(10 * mesh.n_free().max(1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HRow {
    pub n_side: usize,
    pub h: f64,
    pub rel_error: f64,
}

/// Manufactured-solution refinement study with unit conductivity.
pub fn run_h_convergence(cfg: &RunConfig, log: &RunLog) -> Result<Vec<HRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &n in &cfg.n_sides {
        let setup = NonlocalSetup::from_config(cfg, n, cfg.delta)?;
        let b = source_load(&SourceSpec::MmsNonlocal, &setup.mesh, Some(&setup.spec), cfg.mms_tol)?;
        let k = setup.assembler.stiffness(&unit_design(&setup.mesh))?;
        let (u, rep) = crate::solve::pcg_solve(&setup.mesh, &k, &b, cfg.solver_tol, solver_limit(cfg, &setup.mesh))?;
        log.line(&format!("h-convergence n_side={n} delta={} {rep}", cfg.delta))?;
        let (err, norm) = l2_error(&setup.mesh, &u.values, mms_u);
        rows.push(HRow { n_side: n, h: setup.mesh.h(), rel_error: err / norm });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaRow {
    pub delta: f64,
    pub n_side: usize,
    pub h: f64,
    pub l2_error: f64,
}

/// Nonlocal solutions for the Gaussian density compared with the local analytic solution.
pub fn run_delta_convergence(cfg: &RunConfig, log: &RunLog) -> Result<Vec<DeltaRow>> {
    cfg.validate()?;
    let g = GaussianDensity { rho_min: cfg.rho_min, rho_max: cfg.rho_max, ..GaussianDensity::default() };
    let mut rows = Vec::new();
    for &delta in &cfg.deltas {
        for &n in &cfg.n_sides {
            let setup = NonlocalSetup::from_config(cfg, n, delta)?;
            let mesh = &setup.mesh;
            let rho = element_averages(mesh, |x, y| g.rho(x, y));
            let design = DesignField { rho, rho_min: g.rho_min, rho_max: g.rho_max, gamma: 0.5, p: g.p };
            let values: Vec<f64> = load_points(mesh).iter().map(|p| g.source(p[0], p[1])).collect();
            let b = mesh.restrict(&assemble_load_full_from_values(mesh, &values)?);
            let k = setup.assembler.stiffness(&design)?;
            let (u, rep) = crate::solve::pcg_solve(mesh, &k, &b, cfg.solver_tol, solver_limit(cfg, mesh))?;
            log.line(&format!("delta-convergence n_side={n} delta={delta} {rep}"))?;
            let (err, _) = l2_error(mesh, &u.values, gamma_u);
            rows.push(DeltaRow { delta, n_side: n, h: mesh.h(), l2_error: err });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub delta: f64,
    pub h: f64,
    pub compliance: f64,
    pub iterations: usize,
}

/// Outcome of one optimization run together with its mesh. A failed state solve is reported
/// through `outcome.termination` with the history up to that point.
pub struct OptimizeRun {
    pub mesh: TriangleMesh,
    pub outcome: OcOutcome,
    pub summary: SummaryRow,
}

/// Nonlocal OC run at `(cfg.n_side, delta)` from the uniform start.
pub fn optimize_nonlocal(
    cfg: &RunConfig,
    delta: f64,
    log: &RunLog,
    observer: impl FnMut(&TriangleMesh, &OcRecord, &DesignField),
) -> Result<OptimizeRun> {
    cfg.validate()?;
    let setup = NonlocalSetup::from_config(cfg, cfg.n_side, delta)?;
    let oc = cfg.oc_config();
    let rho0 = optimizer::uniform_start(&setup.mesh, &oc)?;
    optimize_nonlocal_from(cfg, &setup, &rho0, log, observer)
}

pub fn optimize_nonlocal_from(
    cfg: &RunConfig,
    setup: &NonlocalSetup,
    rho0: &DesignField,
    log: &RunLog,
    mut observer: impl FnMut(&TriangleMesh, &OcRecord, &DesignField),
) -> Result<OptimizeRun> {
    let oc = cfg.oc_config();
    let load = source_load(&cfg.source, &setup.mesh, Some(&setup.spec), cfg.mms_tol)?;
    let problem = NonlocalProblem { mesh: &setup.mesh, assembler: &setup.assembler, load };
    let outcome = optimizer::optimize(&problem, rho0, &oc, |rec, d| observer(&setup.mesh, rec, d))?;
    finish_run(log, &format!("optimize delta={}", setup.spec.delta), setup.mesh.clone(), setup.spec.delta, outcome)
}

fn finish_run(log: &RunLog, label: &str, mesh: TriangleMesh, delta: f64, outcome: OcOutcome) -> Result<OptimizeRun> {
    for (i, rep) in outcome.history.solves.iter().enumerate() {
        log.line(&format!("{label} solve={i} {rep}"))?;
    }
    log.line(&format!(
        "{label} termination={:?} iterations={} J={:e} positive_gradients={} inactive_steps={}",
        outcome.termination,
        outcome.history.iterations(),
        outcome.compliance,
        outcome.history.positive_gradients,
        outcome.history.inactive_steps
    ))?;
    let summary = SummaryRow { delta, h: mesh.h(), compliance: outcome.compliance, iterations: outcome.history.iterations() };
    Ok(OptimizeRun { mesh, outcome, summary })
}

/// Local (`delta = 0`) OC run on the unpadded mesh with `n_side` cells per side.
pub fn optimize_local(
    cfg: &RunConfig,
    n_side: usize,
    log: &RunLog,
    mut observer: impl FnMut(&TriangleMesh, &OcRecord, &DesignField),
) -> Result<OptimizeRun> {
    cfg.validate()?;
    let mesh = build_grid(n_side, 0.0)?;
    let oc = cfg.oc_config();
    let load = source_load(&cfg.source, &mesh, None, cfg.mms_tol)?;
    let rho0 = optimizer::uniform_start(&mesh, &oc)?;
    let problem = LocalProblem { mesh: &mesh, load };
    let outcome = optimizer::optimize(&problem, &rho0, &oc, |rec, d| observer(&mesh, rec, d))?;
    finish_run(log, "local-optimize", mesh.clone(), 0.0, outcome)
}

/// Copy a design onto another mesh with the same `n_side`; cells missing in the source get
/// `rho_min`.
pub fn transfer_design(src_mesh: &TriangleMesh, src: &DesignField, dst_mesh: &TriangleMesh) -> Result<DesignField> {
    if src_mesh.n_side != dst_mesh.n_side {
        return Err(Error::InvalidArgument(format!(
            "design transfer needs equal n_side, got {} and {}",
            src_mesh.n_side, dst_mesh.n_side
        )));
    }
    let rho = (0..dst_mesh.n_triangles())
        .map(|t| src_mesh.transfer_index(dst_mesh, t).map_or(src.rho_min, |s| src.rho[s]))
        .collect();
    Ok(DesignField { rho, ..src.clone() })
}

/// Compliance of a design under another horizon.
pub fn evaluate_design(cfg: &RunConfig, setup: &NonlocalSetup, src_mesh: &TriangleMesh, design: &DesignField) -> Result<f64> {
    let d = transfer_design(src_mesh, design, &setup.mesh)?;
    let load = source_load(&cfg.source, &setup.mesh, Some(&setup.spec), cfg.mms_tol)?;
    let problem = NonlocalProblem { mesh: &setup.mesh, assembler: &setup.assembler, load };
    Ok(evaluate(&problem, &d, &cfg.oc_config())?.0)
}

/// `m[i][j]`: compliance under horizon `deltas[i]` of the design optimized at `deltas[j]`.
pub fn cross_check_matrix(cfg: &RunConfig, designs: &[(f64, &TriangleMesh, &DesignField)]) -> Result<Vec<Vec<f64>>> {
    let mut m = Vec::new();
    for &(delta, _, _) in designs {
        let setup = NonlocalSetup::from_config(cfg, cfg.n_side, delta)?;
        let row = designs
            .iter()
            .map(|(_, mesh, d)| evaluate_design(cfg, &setup, mesh, d))
            .collect::<Result<Vec<_>>>()?;
        m.push(row);
    }
    Ok(m)
}

/// Optimize at every horizon in `cfg.deltas` and cross-evaluate the designs.
pub fn run_cross_check(cfg: &RunConfig, log: &RunLog) -> Result<(Vec<OptimizeRun>, Vec<Vec<f64>>)> {
    let mut runs = Vec::new();
    for &delta in &cfg.deltas {
        runs.push(optimize_nonlocal(cfg, delta, log, |_, _, _| {})?);
    }
    let designs: Vec<(f64, &TriangleMesh, &DesignField)> =
        runs.iter().map(|r| (r.summary.delta, &r.mesh, &r.outcome.design)).collect();
    let m = cross_check_matrix(cfg, &designs)?;
    Ok((runs, m))
}
