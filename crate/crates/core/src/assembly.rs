//! Reference pair blocks and assembly of the design-dependent stiffness matrix.
//!
//! On the structured grid a pair block depends only on the lattice offset between the two
//! cells and the two sub-triangle types, so blocks are computed once per offset class and
//! scaled by `rho1^(p/2) * rho2^(p/2)` during assembly.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{offset_stencil, ElementPair, PairList, PairOffset, TriangleMesh};
use crate::kernel::KernelSpec;
use crate::quadrature::rules::triangle_degree2;
use crate::quadrature::{integrate_pair, PairBlock, QuadratureBudget};

const CACHE_MAGIC: &[u8; 8] = b"NLSPTAB\0";
const CACHE_VERSION: u32 = 1;
const NONE: u32 = u32::MAX;

/// A reference block together with the origin of each of its rows: `(side, vertex)` where
/// side 0 is the first triangle of the reference pair and side 1 the second.
#[derive(Debug, Clone, PartialEq)]
pub struct TableBlock {
    pub k: i32,
    pub pattern: Vec<(u8, u8)>,
    pub entries: Vec<f64>,
}

impl TableBlock {
    pub fn dim(&self) -> usize {
        self.pattern.len()
    }
}

/// Precomputed unit-conductivity blocks indexed by lattice offset.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTable {
    pub n_side: usize,
    pub h_side: f64,
    pub spec: KernelSpec,
    pub budget: QuadratureBudget,
    /// Offsets are stored for `|di|, |dj| <= reach`.
    reach: i32,
    /// Per dense offset key: `block << 1 | swapped`, or `NONE`.
    keys: Vec<u32>,
    blocks: Vec<TableBlock>,
    /// Canonical offset of each block.
    offsets: Vec<PairOffset>,
}

fn canonical(off: PairOffset) -> (PairOffset, bool) {
    let rev = off.reversed();
    if rev < off {
        (rev, true)
    } else {
        (off, false)
    }
}

fn table_block(off: PairOffset, h_side: f64, spec: &KernelSpec, budget: &QuadratureBudget) -> Result<TableBlock> {
    let (t1, t2) = off.reference_pair(h_side);
    let block = integrate_pair(&t1, &t2, spec, budget)?;
    let pattern = block
        .nodes
        .iter()
        .map(|n| match t1.nodes.iter().position(|x| x == n) {
            Some(v) => (0, v as u8),
            None => (1, t2.nodes.iter().position(|x| x == n).unwrap() as u8),
        })
        .collect();
    Ok(TableBlock { k: block.k, pattern, entries: block.entries })
}

/// Compute the blocks of every offset class with closure distance `< 2 delta`.
///
/// Classes at distance in `[delta, 2 delta)` carry zero blocks since the kernel vanishes there.
pub fn precompute_reference_pairs(mesh: &TriangleMesh, spec: &KernelSpec, budget: &QuadratureBudget) -> Result<PairTable> {
    budget.validate()?;
    if mesh.triangles.len() != 2 * mesh.cells_per_side().pow(2) {
        return Err(Error::Unsupported("pair table needs the structured diagonal-split grid".into()));
    }
    PairTable::compute(mesh.n_side, spec, budget)
}

impl PairTable {
    pub fn compute(n_side: usize, spec: &KernelSpec, budget: &QuadratureBudget) -> Result<PairTable> {
        let h_side = 1.0 / n_side as f64;
        let radius = 2.0 * spec.delta;
        let reach = (radius / h_side).ceil() as i32 + 1;
        let mut canon: Vec<PairOffset> = offset_stencil(h_side, radius)
            .into_iter()
            .map(|(o, _, _)| canonical(o).0)
            .collect();
        canon.sort();
        canon.dedup();

        let blocks = canon
            .par_iter()
            .map(|off| {
                let (t1, t2) = off.reference_pair(h_side);
                if crate::quadrature::closure_distance(&t1, &t2) >= spec.delta {
                    // outside the support: pattern only
                    let mut blk = table_block(*off, h_side, spec, &QuadratureBudget::uniform(1))?;
                    blk.entries.iter_mut().for_each(|e| *e = 0.0);
                    return Ok(blk);
                }
                table_block(*off, h_side, spec, budget)
            })
            .collect::<Result<Vec<_>>>()?;

        let side = (2 * reach + 1) as usize;
        let mut table = PairTable {
            n_side,
            h_side,
            spec: *spec,
            budget: *budget,
            reach,
            keys: vec![NONE; 4 * side * side],
            blocks,
            offsets: canon,
        };
        for (b, off) in table.offsets.clone().iter().enumerate() {
            let rev = off.reversed();
            let kf = table.key(*off).expect("stencil offset within reach");
            let kr = table.key(rev).expect("stencil offset within reach");
            table.keys[kf] = (b as u32) << 1;
            if rev != *off {
                table.keys[kr] = ((b as u32) << 1) | 1;
            }
        }
        Ok(table)
    }

    fn key(&self, off: PairOffset) -> Option<usize> {
        let r = self.reach;
        if off.di.abs() > r || off.dj.abs() > r || off.ty1 > 1 || off.ty2 > 1 {
            return None;
        }
        let side = (2 * r + 1) as usize;
        let ty = (off.ty1 * 2 + off.ty2) as usize;
        Some((ty * side + (off.di + r) as usize) * side + (off.dj + r) as usize)
    }

    /// Number of distinct blocks (offset equivalence classes).
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[TableBlock] {
        &self.blocks
    }

    pub fn offsets(&self) -> &[PairOffset] {
        &self.offsets
    }

    /// Block for an offset and whether the sides are swapped relative to the query.
    pub fn lookup(&self, off: PairOffset) -> Option<(usize, bool)> {
        let v = self.keys[self.key(off)?];
        (v != NONE).then_some(((v >> 1) as usize, v & 1 == 1))
    }

    /// The block of a mesh pair, expressed on global node ids with the layout of
    /// [`integrate_pair`] (nodes of `t1` first).
    pub fn pair_block(&self, mesh: &TriangleMesh, pair: &ElementPair) -> Result<PairBlock> {
        let (b, swapped) = self
            .lookup(pair.offset)
            .ok_or_else(|| Error::InvalidArgument(format!("offset {:?} not in pair table", pair.offset)))?;
        let blk = &self.blocks[b];
        let nodes = self.global_nodes(mesh, pair, blk, swapped);
        let block = PairBlock { k: blk.k, nodes: nodes.clone(), entries: blk.entries.clone() };
        let t1 = mesh.triangles[pair.t1 as usize];
        let mut order: Vec<usize> = t1.to_vec();
        for n in mesh.triangles[pair.t2 as usize] {
            if !order.contains(&n) {
                order.push(n);
            }
        }
        block.reordered(&order)
    }

    fn global_nodes(&self, mesh: &TriangleMesh, pair: &ElementPair, blk: &TableBlock, swapped: bool) -> Vec<usize> {
        let (first, second) = if swapped { (pair.t2, pair.t1) } else { (pair.t1, pair.t2) };
        let tri = [mesh.triangles[first as usize], mesh.triangles[second as usize]];
        blk.pattern.iter().map(|&(s, v)| tri[s as usize][v as usize]).collect()
    }

    fn cache_name(&self) -> String {
        let b = self.budget.as_array();
        format!(
            "pairs_n{}_d{:016x}_s{:016x}_b{:016x}_q{}-{}-{}-{}-{}.bin",
            self.n_side,
            self.spec.delta.to_bits(),
            self.spec.s.to_bits(),
            self.spec.beta.to_bits(),
            b[0],
            b[1],
            b[2],
            b[3],
            b[4]
        )
    }

    fn header(n_side: usize, spec: &KernelSpec, budget: &QuadratureBudget) -> Vec<u8> {
        let mut h = Vec::with_capacity(80);
        h.extend_from_slice(CACHE_MAGIC);
        h.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        h.extend_from_slice(&(n_side as u64).to_le_bytes());
        for x in [spec.delta, spec.s, spec.beta] {
            h.extend_from_slice(&x.to_bits().to_le_bytes());
        }
        for q in budget.as_array() {
            h.extend_from_slice(&(q as u64).to_le_bytes());
        }
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Self::header(self.n_side, &self.spec, &self.budget);
        out.extend_from_slice(&(self.blocks.len() as u64).to_le_bytes());
        for (off, blk) in self.offsets.iter().zip(&self.blocks) {
            out.push(off.ty1);
            out.push(off.ty2);
            out.extend_from_slice(&off.di.to_le_bytes());
            out.extend_from_slice(&off.dj.to_le_bytes());
            out.push(blk.k as i8 as u8);
            out.push(blk.pattern.len() as u8);
            for &(s, v) in &blk.pattern {
                out.push(s);
                out.push(v);
            }
            for e in &blk.entries {
                out.extend_from_slice(&e.to_le_bytes());
            }
        }
        out
    }

    /// Rebuild from cached bytes. The stored parameters must match exactly.
    pub fn from_bytes(bytes: &[u8], n_side: usize, spec: &KernelSpec, budget: &QuadratureBudget) -> Result<PairTable> {
        let header = Self::header(n_side, spec, budget);
        if bytes.len() < header.len() || bytes[..header.len()] != header[..] {
            return Err(Error::Cache("pair table cache header does not match".into()));
        }
        let mut cur = Cursor { buf: bytes, pos: header.len() };
        let n_blocks = cur.u64()? as usize;
        let mut offsets = Vec::with_capacity(n_blocks);
        let mut blocks = Vec::with_capacity(n_blocks);
        for _ in 0..n_blocks {
            let ty1 = cur.u8()?;
            let ty2 = cur.u8()?;
            let di = cur.i32()?;
            let dj = cur.i32()?;
            let k = cur.u8()? as i8 as i32;
            let m = cur.u8()? as usize;
            let mut pattern = Vec::with_capacity(m);
            for _ in 0..m {
                pattern.push((cur.u8()?, cur.u8()?));
            }
            let mut entries = Vec::with_capacity(m * m);
            for _ in 0..m * m {
                entries.push(cur.f64()?);
            }
            offsets.push(PairOffset { ty1, di, dj, ty2 });
            blocks.push(TableBlock { k, pattern, entries });
        }
        if cur.pos != bytes.len() {
            return Err(Error::Cache("trailing bytes in pair table cache".into()));
        }
        let h_side = 1.0 / n_side as f64;
        let reach = (2.0 * spec.delta / h_side).ceil() as i32 + 1;
        let side = (2 * reach + 1) as usize;
        let mut table = PairTable {
            n_side,
            h_side,
            spec: *spec,
            budget: *budget,
            reach,
            keys: vec![NONE; 4 * side * side],
            blocks,
            offsets,
        };
        for b in 0..table.offsets.len() {
            let off = table.offsets[b];
            let rev = off.reversed();
            let (kf, kr) = match (table.key(off), table.key(rev)) {
                (Some(a), Some(c)) => (a, c),
                _ => return Err(Error::Cache("offset outside table reach".into())),
            };
            table.keys[kf] = (b as u32) << 1;
            if rev != off {
                table.keys[kr] = ((b as u32) << 1) | 1;
            }
        }
        Ok(table)
    }

    /// Load from `dir` if a matching cache file exists, else compute and store it there.
    pub fn load_or_compute(
        mesh: &TriangleMesh,
        spec: &KernelSpec,
        budget: &QuadratureBudget,
        dir: Option<&Path>,
    ) -> Result<PairTable> {
        let Some(dir) = dir else {
            return precompute_reference_pairs(mesh, spec, budget);
        };
        let probe = PairTable {
            n_side: mesh.n_side,
            h_side: mesh.h_side,
            spec: *spec,
            budget: *budget,
            reach: 0,
            keys: Vec::new(),
            blocks: Vec::new(),
            offsets: Vec::new(),
        };
        let path: PathBuf = dir.join(probe.cache_name());
        if let Ok(mut f) = fs::File::open(&path) {
            let mut bytes = Vec::new();
            f.read_to_end(&mut bytes)?;
            if let Ok(t) = Self::from_bytes(&bytes, mesh.n_side, spec, budget) {
                return Ok(t);
            }
        }
        let table = precompute_reference_pairs(mesh, spec, budget)?;
        fs::create_dir_all(dir)?;
        let tmp = path.with_extension("tmp");
        fs::File::create(&tmp)?.write_all(&table.to_bytes())?;
        fs::rename(&tmp, &path)?;
        Ok(table)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let s = self.buf.get(self.pos..end).ok_or_else(|| Error::Cache("truncated pair table cache".into()))?;
        self.pos = end;
        Ok(s.try_into().unwrap())
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

/// Per-element density with its bounds and SIMP parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignField {
    pub rho: Vec<f64>,
    pub rho_min: f64,
    pub rho_max: f64,
    pub gamma: f64,
    pub p: f64,
}

impl DesignField {
    pub fn uniform(mesh: &TriangleMesh, value: f64, rho_min: f64, rho_max: f64, gamma: f64, p: f64) -> Result<Self> {
        let d = DesignField { rho: vec![value; mesh.n_triangles()], rho_min, rho_max, gamma, p };
        d.validate(mesh)?;
        Ok(d)
    }

    pub fn validate(&self, mesh: &TriangleMesh) -> Result<()> {
        if self.rho.len() != mesh.n_triangles() {
            return Err(Error::SizeMismatch { what: "design", expected: mesh.n_triangles(), got: self.rho.len() });
        }
        if !(self.rho_min > 0.0 && self.rho_min < self.rho_max) {
            return Err(Error::InvalidArgument(format!(
                "density bounds must satisfy 0 < rho_min < rho_max, got [{}, {}]",
                self.rho_min, self.rho_max
            )));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::InvalidArgument(format!("SIMP exponent must be >= 1, got {}", self.p)));
        }
        if let Some(r) = self.rho.iter().find(|r| !(**r >= self.rho_min && **r <= self.rho_max)) {
            return Err(Error::InvalidArgument(format!("density {r} outside [{}, {}]", self.rho_min, self.rho_max)));
        }
        Ok(())
    }

    /// `rho^(p/2)` per element.
    pub fn sqrt_conductivity(&self) -> Vec<f64> {
        self.rho.iter().map(|r| r.powf(0.5 * self.p)).collect()
    }

    /// Local conductivity `rho^p` per element.
    pub fn conductivity(&self) -> Vec<f64> {
        self.rho.iter().map(|r| r.powf(self.p)).collect()
    }

    /// `sum rho_e |T_e|` over the whole meshed region.
    pub fn volume(&self, mesh: &TriangleMesh) -> f64 {
        mesh.element_area() * self.rho.iter().sum::<f64>()
    }
}

/// Symmetric sparse matrix in full CSR storage over free DOFs.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        match cols.binary_search(&(j as u32)) {
            Ok(k) => self.values[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
            *yi = self.col_idx[a..b].iter().zip(&self.values[a..b]).map(|(&j, v)| v * x[j as usize]).sum();
        });
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// Largest `|K_ij - K_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k] as usize;
                worst = worst.max((self.values[k] - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[k] as usize)] = self.values[k];
            }
        }
        m
    }

    pub fn from_dense(m: &nalgebra::DMatrix<f64>) -> SparseMatrix {
        let n = m.nrows();
        let mut row_ptr = vec![0];
        let (mut col_idx, mut values) = (Vec::new(), Vec::new());
        for i in 0..n {
            for j in 0..n {
                if m[(i, j)] != 0.0 {
                    col_idx.push(j as u32);
                    values.push(m[(i, j)]);
                }
            }
            row_ptr.push(values.len());
        }
        SparseMatrix { n, row_ptr, col_idx, values }
    }
}

#[derive(Debug, Clone, Copy)]
struct Prepared {
    t1: u32,
    t2: u32,
    block: u32,
    m: u8,
    nodes: [u32; 6],
    slot_start: usize,
}

/// Pair list resolved against a table, with precomputed CSR positions.
///
/// Assembly walks the pairs in list order, so results are reproducible bit for bit.
#[derive(Debug, Clone)]
pub struct Assembler {
    n_triangles: usize,
    n_nodes: usize,
    n_free: usize,
    pairs: Vec<Prepared>,
    slots: Vec<u32>,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    blocks: Vec<TableBlock>,
}

impl Assembler {
    pub fn new(mesh: &TriangleMesh, pairs: &PairList, table: &PairTable) -> Result<Assembler> {
        if table.n_side != mesh.n_side {
            return Err(Error::InvalidArgument(format!(
                "pair table built for n_side = {}, mesh has {}",
                table.n_side, mesh.n_side
            )));
        }
        let mut prepared = Vec::with_capacity(pairs.len());
        let mut slot_start = 0;
        for pair in pairs.iter() {
            let (b, swapped) = table
                .lookup(pair.offset)
                .ok_or_else(|| Error::InvalidArgument(format!("offset {:?} not in pair table", pair.offset)))?;
            let blk = &table.blocks[b];
            let g = table.global_nodes(mesh, pair, blk, swapped);
            let mut nodes = [0u32; 6];
            for (i, n) in g.iter().enumerate() {
                nodes[i] = *n as u32;
            }
            prepared.push(Prepared { t1: pair.t1, t2: pair.t2, block: b as u32, m: g.len() as u8, nodes, slot_start });
            slot_start += g.len() * g.len();
        }

        // sparsity pattern over free dofs
        let n_free = mesh.n_free();
        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n_free];
        for p in &prepared {
            let dofs: Vec<Option<usize>> = p.nodes[..p.m as usize].iter().map(|&n| mesh.dof(n as usize)).collect();
            for a in dofs.iter().flatten() {
                for b in dofs.iter().flatten() {
                    rows[*a].push(*b as u32);
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n_free + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        drop(rows);

        let mut slots = vec![NONE; slot_start];
        for p in &prepared {
            let m = p.m as usize;
            for a in 0..m {
                let Some(i) = mesh.dof(p.nodes[a] as usize) else { continue };
                let cols = &col_idx[row_ptr[i]..row_ptr[i + 1]];
                for b in 0..m {
                    if let Some(j) = mesh.dof(p.nodes[b] as usize) {
                        let k = cols.binary_search(&(j as u32)).expect("pattern contains pair entry");
                        slots[p.slot_start + a * m + b] = (row_ptr[i] + k) as u32;
                    }
                }
            }
        }
        Ok(Assembler {
            n_triangles: mesh.n_triangles(),
            n_nodes: mesh.n_nodes(),
            n_free,
            pairs: prepared,
            slots,
            row_ptr,
            col_idx,
            blocks: table.blocks.clone(),
        })
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_triangles(&self) -> usize {
        self.n_triangles
    }

    /// `K = sum_pairs w * sigma_1 * sigma_2 * block` with `sigma = rho^(p/2)`.
    pub fn stiffness(&self, design: &DesignField) -> Result<SparseMatrix> {
        if design.rho.len() != self.n_triangles {
            return Err(Error::SizeMismatch { what: "design", expected: self.n_triangles, got: design.rho.len() });
        }
        let sigma = design.sqrt_conductivity();
        let mut values = vec![0.0; self.col_idx.len()];
        for p in &self.pairs {
            let w = if p.t1 == p.t2 { 1.0 } else { 2.0 };
            let c = w * sigma[p.t1 as usize] * sigma[p.t2 as usize];
            let m = p.m as usize;
            let blk = &self.blocks[p.block as usize].entries;
            let slots = &self.slots[p.slot_start..p.slot_start + m * m];
            for (s, e) in slots.iter().zip(blk) {
                if *s != NONE {
                    values[*s as usize] += c * e;
                }
            }
        }
        Ok(SparseMatrix { n: self.n_free, row_ptr: self.row_ptr.clone(), col_idx: self.col_idx.clone(), values })
    }

    /// `u^T block u` per pair for a nodal vector `u` (constrained entries zero).
    pub fn pair_energies(&self, u: &[f64]) -> Vec<f64> {
        self.pairs
            .par_iter()
            .map(|p| {
                let m = p.m as usize;
                let blk = &self.blocks[p.block as usize].entries;
                let mut v = [0.0; 6];
                for a in 0..m {
                    v[a] = u[p.nodes[a] as usize];
                }
                let mut e = 0.0;
                for a in 0..m {
                    let row = &blk[a * m..(a + 1) * m];
                    e += v[a] * row.iter().zip(&v[..m]).map(|(x, y)| x * y).sum::<f64>();
                }
                e.max(0.0)
            })
            .collect()
    }

    /// `sum_{t'} sigma_{t'} E(e, t')` per element, the pair-energy sum entering the gradient.
    pub fn weighted_energy_sums(&self, sigma: &[f64], energies: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_triangles];
        for (p, e) in self.pairs.iter().zip(energies) {
            let (a, b) = (p.t1 as usize, p.t2 as usize);
            if a == b {
                acc[a] += sigma[a] * e;
            } else {
                acc[a] += sigma[b] * e;
                acc[b] += sigma[a] * e;
            }
        }
        acc
    }

    /// Energy `sum_pairs w sigma_1 sigma_2 e` from per-pair energies.
    pub fn total_energy(&self, sigma: &[f64], energies: &[f64]) -> f64 {
        self.pairs
            .iter()
            .zip(energies)
            .map(|(p, e)| {
                let w = if p.t1 == p.t2 { 1.0 } else { 2.0 };
                w * sigma[p.t1 as usize] * sigma[p.t2 as usize] * e
            })
            .sum()
    }
}

/// Convenience wrapper building a throwaway [`Assembler`].
pub fn assemble_stiffness(mesh: &TriangleMesh, pairs: &PairList, table: &PairTable, design: &DesignField) -> Result<SparseMatrix> {
    design.validate(mesh)?;
    Assembler::new(mesh, pairs, table)?.stiffness(design)
}

/// Per-pair energies `u^T block u` for a nodal vector.
pub fn pair_energies(mesh: &TriangleMesh, u: &[f64], pairs: &PairList, table: &PairTable) -> Result<Vec<f64>> {
    if u.len() != mesh.n_nodes() {
        return Err(Error::SizeMismatch { what: "state", expected: mesh.n_nodes(), got: u.len() });
    }
    Ok(Assembler::new(mesh, pairs, table)?.pair_energies(u))
}

/// Load quadrature points, three per interior element in element order.
pub fn load_points(mesh: &TriangleMesh) -> Vec<[f64; 2]> {
    let rule = triangle_degree2();
    let mut pts = Vec::new();
    for t in (0..mesh.n_triangles()).filter(|&t| mesh.is_interior(t)) {
        let c = mesh.triangle(t).coords;
        for q in &rule {
            let l = q.bary;
            pts.push([
                l[0] * c[0][0] + l[1] * c[1][0] + l[2] * c[2][0],
                l[0] * c[0][1] + l[1] * c[1][1] + l[2] * c[2][1],
            ]);
        }
    }
    pts
}

/// `int_Omega f phi_a` for every node, from `f` sampled at [`load_points`].
pub fn assemble_load_full_from_values(mesh: &TriangleMesh, values: &[f64]) -> Result<Vec<f64>> {
    let rule = triangle_degree2();
    let interior: Vec<usize> = (0..mesh.n_triangles()).filter(|&t| mesh.is_interior(t)).collect();
    if values.len() != rule.len() * interior.len() {
        return Err(Error::SizeMismatch { what: "load samples", expected: rule.len() * interior.len(), got: values.len() });
    }
    let area = mesh.element_area();
    let mut b = vec![0.0; mesh.n_nodes()];
    for (e, &t) in interior.iter().enumerate() {
        let tri = mesh.triangles[t];
        for (q, pt) in rule.iter().enumerate() {
            let fq = values[e * rule.len() + q] * pt.weight * area;
            for a in 0..3 {
                b[tri[a]] += fq * pt.bary[a];
            }
        }
    }
    Ok(b)
}

/// Full nodal load vector for a source function.
pub fn assemble_load_full(mesh: &TriangleMesh, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let values: Vec<f64> = load_points(mesh).iter().map(|p| f(p[0], p[1])).collect();
    assemble_load_full_from_values(mesh, &values).expect("sample count matches by construction")
}

/// Load vector over free DOFs.
pub fn assemble_load(mesh: &TriangleMesh, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    mesh.restrict(&assemble_load_full(mesh, f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, enumerate_pairs};

    fn setup_with(n: usize, delta: f64, budget: QuadratureBudget) -> (TriangleMesh, PairList, PairTable) {
        let mesh = build_grid(n, delta).unwrap();
        let spec = KernelSpec::new(delta, 1.0 / 3.0, 3.0).unwrap();
        let table = precompute_reference_pairs(&mesh, &spec, &budget).unwrap();
        let pairs = enumerate_pairs(&mesh, delta);
        (mesh, pairs, table)
    }

    fn setup(n: usize, delta: f64) -> (TriangleMesh, PairList, PairTable) {
        setup_with(n, delta, QuadratureBudget::uniform(6))
    }

    #[test]
    fn load_moments() {
        let mesh = build_grid(5, 0.2).unwrap();
        let one: f64 = assemble_load_full(&mesh, |_, _| 1.0).iter().sum();
        let x: f64 = assemble_load_full(&mesh, |x, _| x).iter().sum();
        assert!((one - 1.0).abs() < 1e-13);
        assert!((x - 0.5).abs() < 1e-13);
        assert!(assemble_load(&mesh, |_, _| 0.0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn every_pair_resolves_and_matches_geometry() {
        // at full budget the two orientations of a pair agree far below quadrature error
        let (mesh, pairs, table) = setup_with(5, 0.4, QuadratureBudget::default());
        for p in pairs.iter().step_by(37) {
            let blk = table.pair_block(&mesh, p).unwrap();
            let direct = integrate_pair(
                &mesh.triangle(p.t1 as usize),
                &mesh.triangle(p.t2 as usize),
                &table.spec,
                &table.budget,
            )
            .unwrap();
            assert_eq!(blk.nodes, direct.nodes);
            let scale = direct.frobenius().max(1e-300);
            for (a, b) in blk.entries.iter().zip(&direct.entries) {
                assert!((a - b).abs() <= 1e-12 * scale, "{p:?}");
            }
        }
    }

    #[test]
    fn scaling_and_symmetry() {
        let (mesh, pairs, table) = setup(4, 0.25);
        let asm = Assembler::new(&mesh, &pairs, &table).unwrap();
        let d1 = DesignField::uniform(&mesh, 1.0, 1e-3, 1.0, 0.4, 2.0).unwrap();
        let dc = DesignField::uniform(&mesh, 0.5, 1e-3, 1.0, 0.4, 2.0).unwrap();
        let (k1, kc) = (asm.stiffness(&d1).unwrap(), asm.stiffness(&dc).unwrap());
        for (a, b) in k1.values.iter().zip(&kc.values) {
            assert!((0.25 * a - b).abs() <= 1e-15 * a.abs());
        }
        assert_eq!(k1.asymmetry(), 0.0);
    }

    #[test]
    fn energy_sum_is_quadratic_form() {
        let (mesh, pairs, table) = setup(5, 0.2);
        let asm = Assembler::new(&mesh, &pairs, &table).unwrap();
        let rho: Vec<f64> = (0..mesh.n_triangles()).map(|t| 0.2 + 0.8 * ((t * 7919) % 101) as f64 / 100.0).collect();
        let d = DesignField { rho, rho_min: 1e-3, rho_max: 1.0, gamma: 0.4, p: 2.0 };
        let k = asm.stiffness(&d).unwrap();
        let uf: Vec<f64> = (0..mesh.n_free()).map(|i| ((i * 31) % 17) as f64 / 17.0 - 0.3).collect();
        let quad: f64 = k.mul(&uf).iter().zip(&uf).map(|(a, b)| a * b).sum();
        let e = asm.pair_energies(&mesh.expand(&uf));
        let total = asm.total_energy(&d.sqrt_conductivity(), &e);
        assert!((quad - total).abs() <= 1e-12 * quad);
        assert!(e.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn cache_round_trip_is_bitwise() {
        let (mesh, _, table) = setup(4, 0.3);
        let dir = std::env::temp_dir().join(format!("nlsimp-cache-{}", std::process::id()));
        let first = PairTable::load_or_compute(&mesh, &table.spec, &table.budget, Some(&dir)).unwrap();
        let second = PairTable::load_or_compute(&mesh, &table.spec, &table.budget, Some(&dir)).unwrap();
        assert_eq!(first, table);
        assert_eq!(second, table);
        let bad = PairTable::from_bytes(&table.to_bytes(), 5, &table.spec, &table.budget);
        assert!(matches!(bad, Err(Error::Cache(_))));
        let _ = fs::remove_dir_all(dir);
    }
}
