//! Linear solves for the nonlocal and local state equations.

use std::time::{Duration, Instant};

use crate::assembly::{DesignField, SparseMatrix};
use crate::error::{Error, Result};
use crate::grid::TriangleMesh;

/// Nodal values on every mesh node, zero on constrained nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    pub values: Vec<f64>,
}

impl StateField {
    pub fn from_free(mesh: &TriangleMesh, free: &[f64]) -> StateField {
        StateField { values: mesh.expand(free) }
    }

    pub fn free_values(&self, mesh: &TriangleMesh) -> Vec<f64> {
        mesh.restrict(&self.values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
    pub wall_time: Duration,
}

impl std::fmt::Display for SolveReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "pcg iterations={} residual={:.3e} time={:.3}s",
            self.iterations,
            self.residual,
            self.wall_time.as_secs_f64()
        )
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients on free DOFs.
///
/// Stops when `||b - K x|| <= tol ||b||`. The returned vector is indexed by free DOF.
pub fn pcg(k: &SparseMatrix, b: &[f64], tol: f64, max_iter: usize, guess: Option<&[f64]>) -> Result<(Vec<f64>, SolveReport)> {
    let start = Instant::now();
    let n = k.n;
    if b.len() != n {
        return Err(Error::SizeMismatch { what: "right-hand side", expected: n, got: b.len() });
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("solver tolerance must be positive, got {tol}")));
    }
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], SolveReport { iterations: 0, residual: 0.0, wall_time: start.elapsed() }));
    }
    let inv_diag: Vec<f64> = k
        .diagonal()
        .iter()
        .map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = match guess {
        Some(g) if g.len() == n => g.to_vec(),
        Some(g) => return Err(Error::SizeMismatch { what: "initial guess", expected: n, got: g.len() }),
        None => vec![0.0; n],
    };
    let mut r = b.to_vec();
    let mut q = vec![0.0; n];
    if guess.is_some() {
        k.matvec(&x, &mut q);
        r.iter_mut().zip(&q).for_each(|(ri, qi)| *ri -= qi);
    }
    let mut res = dot(&r, &r).sqrt() / bnorm;
    let (mut best, mut best_res) = (x.clone(), res);
    if res <= tol {
        return Ok((x, SolveReport { iterations: 0, residual: res, wall_time: start.elapsed() }));
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        k.matvec(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(Error::NonConvergence { iterations: it, residual: best_res, best });
        }
        let alpha = rz / pq;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&q).for_each(|(ri, qi)| *ri -= alpha * qi);
        res = dot(&r, &r).sqrt() / bnorm;
        if res < best_res {
            best_res = res;
            best.copy_from_slice(&x);
        }
        if res <= tol {
            // confirm against the true residual, recurrences drift on long runs
            k.matvec(&x, &mut q);
            let true_res = b.iter().zip(&q).map(|(bi, qi)| (bi - qi).powi(2)).sum::<f64>().sqrt() / bnorm;
            if true_res <= tol {
                return Ok((x, SolveReport { iterations: it, residual: true_res, wall_time: start.elapsed() }));
            }
            r.iter_mut().zip(b.iter().zip(&q)).for_each(|(ri, (bi, qi))| *ri = bi - qi);
        }
        z.iter_mut().zip(r.iter().zip(&inv_diag)).for_each(|(zi, (ri, d))| *zi = ri * d);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    Err(Error::NonConvergence { iterations: max_iter, residual: best_res, best })
}

/// Solve `K u = b` and expand to all nodes.
pub fn pcg_solve(
    mesh: &TriangleMesh,
    k: &SparseMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(StateField, SolveReport)> {
    let (x, rep) = pcg(k, b, tol, max_iter, None)?;
    Ok((StateField::from_free(mesh, &x), rep))
}

/// `b^T u` with `b` over free DOFs and `u` either free or full.
pub fn compliance(mesh: &TriangleMesh, u: &StateField, b: &[f64]) -> f64 {
    dot(b, &u.free_values(mesh))
}

/// P1 stiffness of `-div(kappa grad u)` on interior elements, over free DOFs.
pub fn local_stiffness(mesh: &TriangleMesh, kappa: &[f64]) -> Result<SparseMatrix> {
    if kappa.len() != mesh.n_triangles() {
        return Err(Error::SizeMismatch { what: "conductivity", expected: mesh.n_triangles(), got: kappa.len() });
    }
    if let Some(k) = kappa.iter().find(|k| !(**k > 0.0)) {
        return Err(Error::InvalidArgument(format!("conductivity must be positive, got {k}")));
    }
    let n = mesh.n_free();
    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    for t in (0..mesh.n_triangles()).filter(|&t| mesh.is_interior(t)) {
        let ke = element_laplacian(mesh, t);
        let nodes = mesh.triangles[t];
        for a in 0..3 {
            let Some(i) = mesh.dof(nodes[a]) else { continue };
            for b in 0..3 {
                if let Some(j) = mesh.dof(nodes[b]) {
                    rows[i].push((j as u32, kappa[t] * ke[a][b]));
                }
            }
        }
    }
    let mut row_ptr = vec![0];
    let (mut col_idx, mut values) = (Vec::new(), Vec::new());
    for r in rows.iter_mut() {
        r.sort_by_key(|e| e.0);
        let mut last = u32::MAX;
        for &(j, v) in r.iter() {
            if j == last {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                last = j;
            }
        }
        row_ptr.push(values.len());
    }
    Ok(SparseMatrix { n, row_ptr, col_idx, values })
}

/// Gradients of the barycentric functions of an element.
pub fn element_gradients(mesh: &TriangleMesh, t: usize) -> [[f64; 2]; 3] {
    let c = mesh.triangle(t).coords;
    let area2 = (c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1]);
    std::array::from_fn(|i| {
        let (q, r) = (c[(i + 1) % 3], c[(i + 2) % 3]);
        [(q[1] - r[1]) / area2, (r[0] - q[0]) / area2]
    })
}

fn element_laplacian(mesh: &TriangleMesh, t: usize) -> [[f64; 3]; 3] {
    let g = element_gradients(mesh, t);
    let area = mesh.element_area();
    std::array::from_fn(|a| std::array::from_fn(|b| area * (g[a][0] * g[b][0] + g[a][1] * g[b][1])))
}

/// `int_{T_e} |grad u|^2` per element (zero on collar elements).
pub fn local_element_energies(mesh: &TriangleMesh, u: &StateField) -> Vec<f64> {
    (0..mesh.n_triangles())
        .map(|t| {
            if !mesh.is_interior(t) {
                return 0.0;
            }
            let g = element_gradients(mesh, t);
            let n = mesh.triangles[t];
            let grad = (0..3).fold([0.0; 2], |acc, a| {
                let v = u.values[n[a]];
                [acc[0] + v * g[a][0], acc[1] + v * g[a][1]]
            });
            mesh.element_area() * (grad[0] * grad[0] + grad[1] * grad[1])
        })
        .collect()
}

/// P1 solution of the local problem `-div(kappa grad u) = f` with homogeneous Dirichlet data.
///
/// `kappa` is indexed by mesh element; only interior elements are used.
pub fn local_solve(
    mesh: &TriangleMesh,
    kappa: &[f64],
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(StateField, SolveReport)> {
    let k = local_stiffness(mesh, kappa)?;
    pcg_solve(mesh, &k, b, tol, max_iter)
}

/// Local conductivity of a design on interior elements, `rho^p`.
pub fn local_conductivity(design: &DesignField) -> Vec<f64> {
    design.conductivity()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_load;
    use crate::grid::build_grid;
    use nalgebra::DMatrix;
    use std::f64::consts::PI;

    #[test]
    fn identity_and_two_by_two() {
        let id = SparseMatrix::from_dense(&DMatrix::identity(4, 4));
        let b = [1.0, -2.0, 3.0, 0.5];
        let (x, rep) = pcg(&id, &b, 1e-12, 10, None).unwrap();
        assert_eq!(x, b.to_vec());
        assert_eq!(rep.iterations, 1);

        let k = SparseMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]));
        let (x, _) = pcg(&k, &[1.0, 1.0], 1e-14, 10, None).unwrap();
        assert!((x[0] - 1.0 / 3.0).abs() < 1e-14 && (x[1] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn non_convergence_carries_best_iterate() {
        let n = 30;
        let m = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 + i as f64 * i as f64 } else { 0.5 / (1.0 + (i + j) as f64) });
        let k = SparseMatrix::from_dense(&m);
        let b = vec![1.0; n];
        match pcg(&k, &b, 1e-14, 2, None) {
            Err(Error::NonConvergence { iterations, best, .. }) => {
                assert_eq!(iterations, 2);
                assert_eq!(best.len(), n);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn laplacian_eigenfunction_second_order() {
        let mut errs = Vec::new();
        for n in [8, 16, 32] {
            let mesh = build_grid(n, 0.0).unwrap();
            let b = assemble_load(&mesh, |x, y| 2.0 * PI * PI * (PI * x).sin() * (PI * y).sin());
            let (u, _) = local_solve(&mesh, &vec![1.0; mesh.n_triangles()], &b, 1e-12, 10_000).unwrap();
            let err = (0..mesh.n_nodes())
                .map(|i| {
                    let p = mesh.nodes[i];
                    (u.values[i] - (PI * p[0]).sin() * (PI * p[1]).sin()).powi(2)
                })
                .sum::<f64>()
                .sqrt()
                / (mesh.n_nodes() as f64).sqrt();
            errs.push(err);
        }
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!(rate > 1.8, "{errs:?}");
        }
    }

    #[test]
    fn local_linearity_in_conductivity() {
        let mesh = build_grid(10, 0.0).unwrap();
        let b = assemble_load(&mesh, |x, _| 1.0 + x);
        let (u1, _) = local_solve(&mesh, &vec![1.0; mesh.n_triangles()], &b, 1e-13, 1000).unwrap();
        let (u3, _) = local_solve(&mesh, &vec![3.0; mesh.n_triangles()], &b, 1e-13, 1000).unwrap();
        for (a, c) in u1.values.iter().zip(&u3.values) {
            assert!((a / 3.0 - c).abs() < 1e-11);
        }
        let (z, _) = local_solve(&mesh, &vec![1.0; mesh.n_triangles()], &vec![0.0; mesh.n_free()], 1e-13, 10).unwrap();
        assert!(z.values.iter().all(|v| *v == 0.0));
    }
}
