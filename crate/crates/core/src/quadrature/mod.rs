//! Element-pair stiffness blocks for the nonlocal bilinear form.
//!
//! For a pair `(T1, T2)` the block over the pair's distinct nodes is
//!
//! ```text
//! B_ab = ∫_T1 ∫_T2 A(|x - x'|) (φ_a(x) - φ_a(x')) (φ_b(x) - φ_b(x')) / |x - x'|^2 dx' dx
//! ```
//!
//! The integral is rewritten in the relative coordinate `z = x - x'`:
//!
//! ```text
//! B_ab = ∫ A(|z|) |z|^-2 M_ab(z) dz,     M_ab(z) = ∫_{T1 ∩ (T2 + z)} N_a(x, z) N_b(x, z) dx
//! ```
//!
//! with `N_a(x, z) = φ_a|T1(x) - φ_a|T2(x - z)`, which is affine in `(x, z)`. The inner
//! integral is computed exactly by clipping the overlap polygon. `M` is piecewise polynomial
//! in `z`; its pieces are cut out by the lines on which a vertex of one triangle crosses an
//! edge line of the other. The outer integral is taken in polar coordinates around
//! `z = 0`: angular sectors are split at every direction where the piece structure inside the
//! horizon changes, and each ray is split at its crossings with those lines and with the
//! horizon circle. On the radial piece that starts at the singularity the weight
//! `r^(1-2s)` is absorbed into a Gauss-Jacobi rule; all other directions use Gauss-Legendre.

pub mod polygon;
pub mod rules;

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use polygon::{cross, sub, Point, Polygon};
use rules::{gauss_jacobi_origin, gauss_legendre, triangle_degree2};

/// A mesh triangle: global node ids and vertex coordinates, counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub nodes: [usize; 3],
    pub coords: [Point; 3],
}

impl Triangle {
    pub fn area(&self) -> f64 {
        0.5 * cross(sub(self.coords[1], self.coords[0]), sub(self.coords[2], self.coords[0]))
    }

    pub fn translated(&self, shift: Point) -> Triangle {
        let mut t = *self;
        for c in t.coords.iter_mut() {
            c[0] += shift[0];
            c[1] += shift[1];
        }
        t
    }
}

/// Singularity class of a pair: the dimension of `closure(T1) ∩ closure(T2)`.
///
/// Classification is topological: two triangles of a conforming mesh intersect exactly
/// in the nodes they share.
pub fn classify_pair(t1: &Triangle, t2: &Triangle) -> i32 {
    let shared = t1.nodes.iter().filter(|n| t2.nodes.contains(n)).count();
    match shared {
        3 => 2,
        2 => 1,
        1 => 0,
        _ => -1,
    }
}

/// Distance between the closures of two triangles of a conforming mesh.
pub fn closure_distance(t1: &Triangle, t2: &Triangle) -> f64 {
    if t1.nodes.iter().any(|n| t2.nodes.contains(n)) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for (p, q) in [(t1, t2), (t2, t1)] {
        for v in &p.coords {
            for e in 0..3 {
                best = best.min(point_segment_distance(*v, q.coords[e], q.coords[(e + 1) % 3]));
            }
        }
    }
    best
}

/// Largest vertex-to-vertex distance, i.e. `diam(closure(T1) ∪ closure(T2))`.
pub fn pair_diameter(t1: &Triangle, t2: &Triangle) -> f64 {
    let all: Vec<Point> = t1.coords.iter().chain(&t2.coords).copied().collect();
    let mut d: f64 = 0.0;
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            d = d.max(norm(sub(all[i], all[j])));
        }
    }
    d
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = sub(b, a);
    let ap = sub(p, a);
    let t = ((ap[0] * ab[0] + ap[1] * ab[1]) / (ab[0] * ab[0] + ab[1] * ab[1])).clamp(0.0, 1.0);
    norm([ap[0] - t * ab[0], ap[1] - t * ab[1]])
}

#[inline]
fn norm(p: Point) -> f64 {
    p[0].hypot(p[1])
}

/// Which quadrature budget a pair falls under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PairKind {
    /// Disjoint closures, `diam(T1 ∪ T2) < delta`: the kernel support contains the pair.
    Near,
    /// Disjoint closures, pair straddles the support boundary.
    Far,
    Vertex,
    Edge,
    Identical,
}

impl PairKind {
    pub fn of(t1: &Triangle, t2: &Triangle, delta: f64) -> PairKind {
        match classify_pair(t1, t2) {
            2 => PairKind::Identical,
            1 => PairKind::Edge,
            0 => PairKind::Vertex,
            _ if pair_diameter(t1, t2) < delta => PairKind::Near,
            _ => PairKind::Far,
        }
    }

    pub fn k(self) -> i32 {
        match self {
            PairKind::Near | PairKind::Far => -1,
            PairKind::Vertex => 0,
            PairKind::Edge => 1,
            PairKind::Identical => 2,
        }
    }

    pub const ALL: [PairKind; 5] =
        [PairKind::Near, PairKind::Far, PairKind::Vertex, PairKind::Edge, PairKind::Identical];
}

impl fmt::Display for PairKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PairKind::Near => write!(f, "-1_near"),
            PairKind::Far => write!(f, "-1_far"),
            other => write!(f, "{}", other.k()),
        }
    }
}

/// Gauss points per tensor direction, by pair kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadratureBudget {
    pub identical: usize,
    pub edge: usize,
    pub vertex: usize,
    pub near: usize,
    pub far: usize,
}

impl Default for QuadratureBudget {
    fn default() -> Self {
        Self { identical: 15, edge: 12, vertex: 10, near: 8, far: 12 }
    }
}

impl QuadratureBudget {
    pub fn uniform(n: usize) -> Self {
        Self { identical: n, edge: n, vertex: n, near: n, far: n }
    }

    pub fn points(&self, kind: PairKind) -> usize {
        match kind {
            PairKind::Identical => self.identical,
            PairKind::Edge => self.edge,
            PairKind::Vertex => self.vertex,
            PairKind::Near => self.near,
            PairKind::Far => self.far,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if PairKind::ALL.iter().any(|&k| self.points(k) == 0) {
            return Err(Error::InvalidArgument("quadrature budgets must be >= 1".into()));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [usize; 5] {
        [self.identical, self.edge, self.vertex, self.near, self.far]
    }
}

/// Unit-conductivity stiffness block of one element pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBlock {
    pub k: i32,
    /// Distinct global nodes: the nodes of `T1`, then those of `T2` not shared with `T1`.
    pub nodes: Vec<usize>,
    /// Row-major `nodes.len() x nodes.len()` symmetric matrix.
    pub entries: Vec<f64>,
}

impl PairBlock {
    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.entries[a * self.dim() + b]
    }

    /// `v^T B v` for a vector indexed like `nodes`.
    pub fn energy(&self, v: &[f64]) -> f64 {
        let m = self.dim();
        let mut e = 0.0;
        for a in 0..m {
            let row = &self.entries[a * m..(a + 1) * m];
            e += v[a] * row.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
        }
        e
    }

    pub fn frobenius(&self) -> f64 {
        self.entries.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Entries rearranged to a different ordering of the same node set.
    pub fn reordered(&self, order: &[usize]) -> Result<PairBlock> {
        let m = self.dim();
        if order.len() != m {
            return Err(Error::SizeMismatch { what: "node ordering", expected: m, got: order.len() });
        }
        let pos: Vec<usize> = order
            .iter()
            .map(|n| {
                self.nodes
                    .iter()
                    .position(|x| x == n)
                    .ok_or_else(|| Error::InvalidArgument(format!("node {n} not in block")))
            })
            .collect::<Result<_>>()?;
        let mut entries = vec![0.0; m * m];
        for a in 0..m {
            for b in 0..m {
                entries[a * m + b] = self.entries[pos[a] * m + pos[b]];
            }
        }
        Ok(PairBlock { k: self.k, nodes: order.to_vec(), entries })
    }
}

/// Integrate a pair with the budget for its kind.
pub fn integrate_pair(
    t1: &Triangle,
    t2: &Triangle,
    spec: &KernelSpec,
    budget: &QuadratureBudget,
) -> Result<PairBlock> {
    let kind = PairKind::of(t1, t2, spec.delta);
    integrate_pair_with(t1, t2, spec, budget.points(kind))
}

/// Integrate a pair with `n` points per direction, whatever its kind.
pub fn integrate_pair_with(
    t1: &Triangle,
    t2: &Triangle,
    spec: &KernelSpec,
    n: usize,
) -> Result<PairBlock> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one point per direction".into()));
    }
    let dist = closure_distance(t1, t2);
    if dist >= 2.0 * spec.delta {
        return Err(Error::InvalidArgument(format!(
            "pair at distance {dist} is outside the interaction range 2*delta = {}",
            2.0 * spec.delta
        )));
    }
    if t1.area() <= 0.0 || t2.area() <= 0.0 {
        return Err(Error::InvalidArgument("triangles must be positively oriented".into()));
    }
    let k = classify_pair(t1, t2);
    let setup = PairSetup::new(t1, t2);
    let m = setup.nodes.len();
    let mut entries = vec![0.0; m * m];
    if dist < spec.delta {
        setup.accumulate(spec, n, &mut entries);
    }
    Ok(PairBlock { k, nodes: setup.nodes, entries })
}

/// An affine function `g . x + c`.
#[derive(Debug, Clone, Copy, Default)]
struct Affine {
    g: Point,
    c: f64,
}

impl Affine {
    #[inline]
    fn at(&self, x: Point) -> f64 {
        self.g[0] * x[0] + self.g[1] * x[1] + self.c
    }
}

/// Barycentric coordinate functions of a counter-clockwise triangle.
fn barycentric(p: &[Point; 3]) -> [Affine; 3] {
    let area2 = cross(sub(p[1], p[0]), sub(p[2], p[0]));
    let mut out = [Affine::default(); 3];
    for (i, o) in out.iter_mut().enumerate() {
        let q = p[(i + 1) % 3];
        let e = sub(p[(i + 2) % 3], q);
        // cross(e, x - q) / area2
        o.g = [-e[1] / area2, e[0] / area2];
        o.c = -cross(e, q) / area2;
    }
    out
}

/// Event line `n . z = c` in the relative coordinate.
#[derive(Debug, Clone, Copy)]
struct Line {
    n: Point,
    c: f64,
}

struct PairSetup {
    nodes: Vec<usize>,
    /// T1 vertices, shifted so that T1's first vertex is the origin.
    a: [Point; 3],
    b: [Point; 3],
    /// `N_j(x, z) = diff[j](x) + grad2[j] . z`
    diff: Vec<Affine>,
    grad2: Vec<Point>,
    lines: Vec<Line>,
    scale: f64,
}

impl PairSetup {
    fn new(t1: &Triangle, t2: &Triangle) -> Self {
        let origin = t1.coords[0];
        let a = t1.coords.map(|p| sub(p, origin));
        let b = t2.coords.map(|p| sub(p, origin));

        let mut nodes: Vec<usize> = t1.nodes.to_vec();
        for n in t2.nodes {
            if !nodes.contains(&n) {
                nodes.push(n);
            }
        }
        let bary1 = barycentric(&a);
        let bary2 = barycentric(&b);
        let mut diff = Vec::with_capacity(nodes.len());
        let mut grad2 = Vec::with_capacity(nodes.len());
        for n in &nodes {
            let f1 = t1.nodes.iter().position(|x| x == n).map(|i| bary1[i]).unwrap_or_default();
            let f2 = t2.nodes.iter().position(|x| x == n).map(|i| bary2[i]).unwrap_or_default();
            diff.push(Affine { g: [f1.g[0] - f2.g[0], f1.g[1] - f2.g[1]], c: f1.c - f2.c });
            grad2.push(f2.g);
        }

        let scale = a.iter().chain(&b).map(|p| norm(*p)).fold(0.0, f64::max).max(
            (0..3).map(|i| norm(sub(a[(i + 1) % 3], a[i]))).fold(0.0, f64::max),
        );
        let mut lines: Vec<Line> = Vec::with_capacity(18);
        for k in 0..3 {
            let e2 = sub(b[(k + 1) % 3], b[k]);
            let e1 = sub(a[(k + 1) % 3], a[k]);
            for i in 0..3 {
                // vertex of T1 on an edge line of T2 + z
                push_line(&mut lines, [-e2[1], e2[0]], cross(e2, sub(a[i], b[k])), scale);
                // vertex of T2 + z on an edge line of T1
                push_line(&mut lines, [-e1[1], e1[0]], cross(e1, sub(a[k], b[i])), scale);
            }
        }
        Self { nodes, a, b, diff, grad2, lines, scale }
    }

    /// Directions at which the radial piece structure inside the horizon changes.
    fn break_angles(&self, delta: f64) -> Vec<f64> {
        let eps = 1e-12 * self.scale;
        let mut angles = Vec::new();
        let mut push_dir = |p: Point| {
            let t = p[1].atan2(p[0]);
            angles.push(if t < 0.0 { t + 2.0 * PI } else { t });
        };
        for (i, li) in self.lines.iter().enumerate() {
            if li.c.abs() <= eps {
                push_dir([-li.n[1], li.n[0]]);
                push_dir([li.n[1], -li.n[0]]);
                continue;
            }
            // crossings with the horizon circle
            let foot = [li.c * li.n[0], li.c * li.n[1]];
            let d = li.c.abs();
            if d < delta {
                let half = (delta * delta - d * d).sqrt();
                let dir = [-li.n[1], li.n[0]];
                push_dir([foot[0] + half * dir[0], foot[1] + half * dir[1]]);
                push_dir([foot[0] - half * dir[0], foot[1] - half * dir[1]]);
            }
            for lj in &self.lines[i + 1..] {
                let det = cross(li.n, lj.n);
                if det.abs() < 1e-12 {
                    continue;
                }
                let v = [(li.c * lj.n[1] - lj.c * li.n[1]) / det, (li.n[0] * lj.c - lj.n[0] * li.c) / det];
                let r = norm(v);
                if r > eps && r < delta {
                    push_dir(v);
                }
            }
        }
        angles.sort_by(|x, y| x.partial_cmp(y).unwrap());
        angles.dedup_by(|x, y| (*x - *y).abs() < 1e-13);
        angles
    }

    fn overlap(&self, z: Point) -> Polygon {
        let mut poly = Polygon::triangle(&self.a);
        for k in 0..3 {
            let base = [self.b[k][0] + z[0], self.b[k][1] + z[1]];
            poly = poly.clip(base, sub(self.b[(k + 1) % 3], self.b[k]));
            if poly.is_empty() {
                break;
            }
        }
        poly
    }

    /// Adds `weight * M(z)` to the upper triangle of `acc`. Returns false if the overlap is empty.
    fn add_moments(&self, z: Point, weight: f64, acc: &mut [f64]) -> bool {
        let poly = self.overlap(z);
        if poly.is_empty() {
            return false;
        }
        let m = self.nodes.len();
        let v = poly.vertices();
        let rule = triangle_degree2();
        let mut vals = [0.0f64; 6];
        let zterm: [f64; 6] = std::array::from_fn(|j| {
            if j < m {
                self.grad2[j][0] * z[0] + self.grad2[j][1] * z[1]
            } else {
                0.0
            }
        });
        for i in 1..v.len() - 1 {
            let (p0, p1, p2) = (v[0], v[i], v[i + 1]);
            let area = 0.5 * cross(sub(p1, p0), sub(p2, p0));
            if area <= 0.0 {
                continue;
            }
            for q in &rule {
                let x = [
                    q.bary[0] * p0[0] + q.bary[1] * p1[0] + q.bary[2] * p2[0],
                    q.bary[0] * p0[1] + q.bary[1] * p1[1] + q.bary[2] * p2[1],
                ];
                for j in 0..m {
                    vals[j] = self.diff[j].at(x) + zterm[j];
                }
                let w = weight * area * q.weight;
                for a in 0..m {
                    let wa = w * vals[a];
                    for b in a..m {
                        acc[a * m + b] += wa * vals[b];
                    }
                }
            }
        }
        true
    }

    fn accumulate(&self, spec: &KernelSpec, n: usize, entries: &mut [f64]) {
        let delta = spec.delta;
        let m = self.nodes.len();
        let angles = self.break_angles(delta);
        let sectors: Vec<(f64, f64)> = if angles.is_empty() {
            vec![(0.0, 2.0 * PI)]
        } else {
            let mut s: Vec<(f64, f64)> = angles.windows(2).map(|w| (w[0], w[1])).collect();
            s.push((*angles.last().unwrap(), angles[0] + 2.0 * PI));
            s
        };
        let gl = gauss_legendre(n);
        let alpha = 1.0 - 2.0 * spec.s;
        let exponent = -1.0 - 2.0 * spec.s;
        let singular_unit = gauss_jacobi_origin(n, alpha, 1.0);
        let mut acc = vec![0.0; m * m];
        let mut radii: Vec<f64> = Vec::with_capacity(self.lines.len() + 2);

        for (t0, t1) in sectors {
            if t1 - t0 <= 0.0 {
                continue;
            }
            let half = 0.5 * (t1 - t0);
            let mid = 0.5 * (t0 + t1);
            for (xt, wt) in gl.iter() {
                let theta = mid + half * xt;
                let e = [theta.cos(), theta.sin()];
                let w_theta = wt * half;

                radii.clear();
                radii.push(0.0);
                radii.push(delta);
                for l in &self.lines {
                    let ne = l.n[0] * e[0] + l.n[1] * e[1];
                    if ne.abs() > 1e-300 {
                        let r = l.c / ne;
                        if r > 0.0 && r < delta {
                            radii.push(r);
                        }
                    }
                }
                radii.sort_by(|x, y| x.partial_cmp(y).unwrap());

                for piece in radii.windows(2) {
                    let (r0, r1) = (piece[0], piece[1]);
                    if r1 - r0 <= 1e-15 * delta {
                        continue;
                    }
                    let rm = 0.5 * (r0 + r1);
                    if self.overlap([rm * e[0], rm * e[1]]).area() <= 1e-16 * self.scale * self.scale {
                        continue;
                    }
                    if r0 == 0.0 {
                        // weight r^(1-2s) absorbed by the rule; remaining r^-2
                        let scale_pow = r1.powf(1.0 + alpha);
                        for (ru, wr) in singular_unit.iter() {
                            let r = ru * r1;
                            let w = w_theta * wr * scale_pow * spec.smooth_factor(r) / (r * r);
                            self.add_moments([r * e[0], r * e[1]], w, &mut acc);
                        }
                    } else {
                        let hr = 0.5 * (r1 - r0);
                        for (xr, wr) in gl.iter() {
                            let r = rm + hr * xr;
                            let w = w_theta * wr * hr * spec.smooth_factor(r) * r.powf(exponent);
                            self.add_moments([r * e[0], r * e[1]], w, &mut acc);
                        }
                    }
                }
            }
        }
        for a in 0..m {
            for b in a..m {
                entries[a * m + b] = acc[a * m + b];
                entries[b * m + a] = acc[a * m + b];
            }
        }
    }
}

fn push_line(lines: &mut Vec<Line>, n: Point, c: f64, scale: f64) {
    let len = norm(n);
    let (n, mut c) = ([n[0] / len, n[1] / len], c / len);
    if c.abs() < 1e-14 * scale {
        c = 0.0;
    }
    let dup = lines.iter().any(|l| {
        let same = (l.n[0] - n[0]).abs() < 1e-14 && (l.n[1] - n[1]).abs() < 1e-14 && (l.c - c).abs() < 1e-14 * scale;
        let flip = (l.n[0] + n[0]).abs() < 1e-14 && (l.n[1] + n[1]).abs() < 1e-14 && (l.c + c).abs() < 1e-14 * scale;
        same || flip
    });
    if !dup {
        lines.push(Line { n, c });
    }
}
