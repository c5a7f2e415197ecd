//! Structured triangulation of the padded unit square and enumeration of interacting
//! element pairs.
//!
//! Cells of side `1/n_side` cover `[-L, 1 + L]^2` with `L = halo_layers / n_side`. Each cell
//! is split along its lower-left to upper-right diagonal into a lower triangle (type 0) and an
//! upper triangle (type 1), so pair geometry depends only on the lattice offset.

use crate::error::{Error, Result};
use crate::quadrature::{classify_pair, closure_distance, Triangle};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementRegion {
    Interior,
    Collar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRegion {
    Free,
    Constrained,
}

#[derive(Debug, Clone)]
pub struct TriangleMesh {
    pub n_side: usize,
    pub halo_layers: usize,
    pub h_side: f64,
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub element_region: Vec<ElementRegion>,
    pub node_region: Vec<NodeRegion>,
    /// Free-DOF index of every node, `None` for constrained nodes.
    dof: Vec<Option<usize>>,
    n_free: usize,
}

/// Build the padded structured mesh for horizon `delta` (use `delta = 0` for the bare square).
pub fn build_grid(n_side: usize, delta: f64) -> Result<TriangleMesh> {
    if n_side == 0 {
        return Err(Error::InvalidArgument("n_side must be at least 1".into()));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be >= 0, got {delta}")));
    }
    // Guard against delta * n_side landing a hair above an integer.
    let layers = delta * n_side as f64;
    let halo_layers = if (layers - layers.round()).abs() < 1e-9 { layers.round() } else { layers.ceil() } as usize;
    let cells = n_side + 2 * halo_layers;
    let h_side = 1.0 / n_side as f64;

    let mut nodes = Vec::with_capacity((cells + 1) * (cells + 1));
    let mut node_region = Vec::with_capacity(nodes.capacity());
    let (lo, hi) = (halo_layers, halo_layers + n_side);
    for j in 0..=cells {
        for i in 0..=cells {
            nodes.push([lattice_coord(i, halo_layers, n_side), lattice_coord(j, halo_layers, n_side)]);
            let inside = i > lo && i < hi && j > lo && j < hi;
            node_region.push(if inside { NodeRegion::Free } else { NodeRegion::Constrained });
        }
    }

    let mut triangles = Vec::with_capacity(2 * cells * cells);
    let mut element_region = Vec::with_capacity(2 * cells * cells);
    let id = |i: usize, j: usize| j * (cells + 1) + i;
    for j in 0..cells {
        for i in 0..cells {
            let region = if (lo..hi).contains(&i) && (lo..hi).contains(&j) {
                ElementRegion::Interior
            } else {
                ElementRegion::Collar
            };
            triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            element_region.push(region);
            element_region.push(region);
        }
    }

    let mut dof = Vec::with_capacity(nodes.len());
    let mut n_free = 0;
    for r in &node_region {
        if *r == NodeRegion::Free {
            dof.push(Some(n_free));
            n_free += 1;
        } else {
            dof.push(None);
        }
    }

    Ok(TriangleMesh {
        n_side,
        halo_layers,
        h_side,
        nodes,
        triangles,
        element_region,
        node_region,
        dof,
        n_free,
    })
}

/// Coordinate of lattice line `i`. Lines inside the unit square are `k / n_side` exactly.
fn lattice_coord(i: usize, halo: usize, n_side: usize) -> f64 {
    (i as f64 - halo as f64) / n_side as f64
}

impl TriangleMesh {
    /// Cells per side of the meshed square.
    pub fn cells_per_side(&self) -> usize {
        self.n_side + 2 * self.halo_layers
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn dof(&self, node: usize) -> Option<usize> {
        self.dof[node]
    }

    /// Element diameter, the mesh size `h`.
    pub fn h(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.h_side
    }

    /// Half-width `L` of the collar.
    pub fn halo_width(&self) -> f64 {
        self.halo_layers as f64 * self.h_side
    }

    pub fn triangle(&self, t: usize) -> Triangle {
        let nodes = self.triangles[t];
        Triangle { nodes, coords: nodes.map(|n| self.nodes[n]) }
    }

    pub fn element_area(&self) -> f64 {
        0.5 * self.h_side * self.h_side
    }

    /// `(i, j, type)` of a triangle.
    pub fn cell_of(&self, t: usize) -> (usize, usize, u8) {
        let c = t / 2;
        let n = self.cells_per_side();
        (c % n, c / n, (t % 2) as u8)
    }

    pub fn triangle_index(&self, i: usize, j: usize, ty: u8) -> usize {
        2 * (j * self.cells_per_side() + i) + ty as usize
    }

    pub fn is_interior(&self, t: usize) -> bool {
        self.element_region[t] == ElementRegion::Interior
    }

    /// Area of the whole meshed region.
    pub fn meshed_area(&self) -> f64 {
        let side = self.cells_per_side() as f64 * self.h_side;
        side * side
    }

    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let c = self.triangle(t).coords;
        [(c[0][0] + c[1][0] + c[2][0]) / 3.0, (c[0][1] + c[1][1] + c[2][1]) / 3.0]
    }

    /// Triangle of this mesh containing the lattice cell `(i, j)` of a mesh with the same
    /// `n_side` but possibly a different halo; `None` if outside this mesh.
    pub fn transfer_index(&self, other: &TriangleMesh, t_other: usize) -> Option<usize> {
        let (i, j, ty) = other.cell_of(t_other);
        let shift = self.halo_layers as i64 - other.halo_layers as i64;
        let (ii, jj) = (i as i64 + shift, j as i64 + shift);
        let n = self.cells_per_side() as i64;
        if ii < 0 || jj < 0 || ii >= n || jj >= n {
            return None;
        }
        Some(self.triangle_index(ii as usize, jj as usize, ty))
    }

    /// Expand a free-DOF vector to all nodes, zero on constrained nodes.
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        self.dof.iter().map(|d| d.map_or(0.0, |k| free[k])).collect()
    }

    /// Restrict a nodal vector to free DOFs.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_free];
        for (n, d) in self.dof.iter().enumerate() {
            if let Some(k) = d {
                out[*k] = full[n];
            }
        }
        out
    }
}

/// Relative position of the second triangle of a pair on the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairOffset {
    pub ty1: u8,
    pub di: i32,
    pub dj: i32,
    pub ty2: u8,
}

impl PairOffset {
    pub fn reversed(self) -> PairOffset {
        PairOffset { ty1: self.ty2, di: -self.di, dj: -self.dj, ty2: self.ty1 }
    }

    /// The two triangles of the offset with the first one in cell `(0, 0)`.
    ///
    /// Node ids encode lattice positions so that shared vertices are recognized.
    pub fn reference_pair(self, h_side: f64) -> (Triangle, Triangle) {
        (
            reference_triangle(0, 0, self.ty1, h_side),
            reference_triangle(self.di as i64, self.dj as i64, self.ty2, h_side),
        )
    }
}

fn reference_triangle(i: i64, j: i64, ty: u8, h: f64) -> Triangle {
    const BIAS: i64 = 1 << 20;
    let id = |a: i64, b: i64| ((a + BIAS) * (2 * BIAS) + (b + BIAS)) as usize;
    let p = |a: i64, b: i64| [a as f64 * h, b as f64 * h];
    let v = if ty == 0 { [(i, j), (i + 1, j), (i + 1, j + 1)] } else { [(i, j), (i + 1, j + 1), (i, j + 1)] };
    Triangle { nodes: v.map(|(a, b)| id(a, b)), coords: v.map(|(a, b)| p(a, b)) }
}

/// All lattice offsets whose triangles come closer than `radius`, with their class `k`.
pub fn offset_stencil(h_side: f64, radius: f64) -> Vec<(PairOffset, i32, f64)> {
    let reach = (radius / h_side).ceil() as i32 + 1;
    let mut out = Vec::new();
    for ty1 in 0..2u8 {
        for dj in -reach..=reach {
            for di in -reach..=reach {
                for ty2 in 0..2u8 {
                    let off = PairOffset { ty1, di, dj, ty2 };
                    let (t1, t2) = off.reference_pair(h_side);
                    let d = closure_distance(&t1, &t2);
                    if d < radius {
                        out.push((off, classify_pair(&t1, &t2), d));
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElementPair {
    pub t1: u32,
    pub t2: u32,
    pub k: i8,
    pub offset: PairOffset,
}

#[derive(Debug, Clone, Default)]
pub struct PairList {
    pub pairs: Vec<ElementPair>,
}

impl PairList {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ElementPair> {
        self.pairs.iter()
    }
}

/// Pairs that interact under a kernel supported in `B(0, delta)`: closure distance `< delta`.
///
/// Pairs whose six nodes are all constrained are left out.
pub fn enumerate_pairs(mesh: &TriangleMesh, delta: f64) -> PairList {
    enumerate_pairs_within(mesh, delta, true)
}

/// Unordered pairs (`t1 <= t2`) with closure distance `< radius`.
pub fn enumerate_pairs_within(mesh: &TriangleMesh, radius: f64, drop_constrained: bool) -> PairList {
    let stencil = offset_stencil(mesh.h_side, radius);
    let n = mesh.cells_per_side() as i64;
    let mut pairs = Vec::new();
    for t1 in 0..mesh.n_triangles() {
        let (i, j, ty) = mesh.cell_of(t1);
        for (off, k, _) in stencil.iter().filter(|s| s.0.ty1 == ty) {
            let (ii, jj) = (i as i64 + off.di as i64, j as i64 + off.dj as i64);
            if ii < 0 || jj < 0 || ii >= n || jj >= n {
                continue;
            }
            let t2 = mesh.triangle_index(ii as usize, jj as usize, off.ty2);
            if t2 < t1 {
                continue;
            }
            if drop_constrained {
                let all_fixed = mesh.triangles[t1]
                    .iter()
                    .chain(&mesh.triangles[t2])
                    .all(|&nd| mesh.node_region[nd] == NodeRegion::Constrained);
                if all_fixed {
                    continue;
                }
            }
            pairs.push(ElementPair { t1: t1 as u32, t2: t2 as u32, k: *k as i8, offset: *off });
        }
    }
    PairList { pairs }
}
