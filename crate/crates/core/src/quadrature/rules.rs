//! One-dimensional Gauss rules, a simple triangle rule family, and adaptive Gauss-Kronrod.

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Nodes and weights of a one-dimensional rule.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }
}

pub fn gauss_legendre(n: usize) -> Rule {
    gauss_jacobi(n, 0.0, 0.0)
}

/// Gauss-Jacobi rule on `[-1, 1]` for the weight `(1 - x)^alpha (1 + x)^beta`.
///
/// Golub-Welsch followed by a Newton polish of every node on the three-term recurrence;
/// weights come from the closed-form Christoffel numbers.
pub fn gauss_jacobi(n: usize, alpha: f64, beta: f64) -> Rule {
    assert!(n >= 1, "a Gauss rule needs at least one node");
    assert!(alpha > -1.0 && beta > -1.0);
    let ab = alpha + beta;

    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let kf = k as f64;
        jacobi[(k, k)] = if k == 0 {
            (beta - alpha) / (ab + 2.0)
        } else {
            (beta * beta - alpha * alpha) / ((2.0 * kf + ab) * (2.0 * kf + ab + 2.0))
        };
        if k + 1 < n {
            let j = kf + 1.0;
            let num = 4.0 * j * (j + alpha) * (j + beta) * (j + ab);
            let den = (2.0 * j + ab).powi(2) * (2.0 * j + ab + 1.0) * (2.0 * j + ab - 1.0);
            let off = (num / den).sqrt();
            jacobi[(k, k + 1)] = off;
            jacobi[(k + 1, k)] = off;
        }
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = jacobi_with_derivative(n, alpha, beta, *x);
            let step = p / dp;
            *x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = jacobi_with_derivative(n, alpha, beta, *x);
        weights.push(1.0 / ((1.0 - *x * *x) * dp * dp));
    }
    // Christoffel numbers up to a common factor; fix it with the zeroth moment.
    let total: f64 = weights.iter().sum();
    let scale = weight_moment(alpha, beta) / total;
    weights.iter_mut().for_each(|w| *w *= scale);
    Rule { nodes, weights }
}

/// Integral of `(1 - x)^alpha (1 + x)^beta` over `[-1, 1]`.
fn weight_moment(alpha: f64, beta: f64) -> f64 {
    if alpha == 0.0 {
        return 2f64.powf(beta + 1.0) / (beta + 1.0);
    }
    if beta == 0.0 {
        return 2f64.powf(alpha + 1.0) / (alpha + 1.0);
    }
    ((alpha + beta + 1.0) * std::f64::consts::LN_2 + ln_gamma(alpha + 1.0) + ln_gamma(beta + 1.0)
        - ln_gamma(alpha + beta + 2.0))
    .exp()
}

/// `P_n^(alpha,beta)(x)` and its derivative.
fn jacobi_with_derivative(n: usize, alpha: f64, beta: f64, x: f64) -> (f64, f64) {
    let ab = alpha + beta;
    let mut p_prev = 1.0;
    let mut p = 0.5 * (alpha - beta + (ab + 2.0) * x);
    if n == 1 {
        return (p, 0.5 * (ab + 2.0));
    }
    for k in 2..=n {
        let kf = k as f64;
        let c = 2.0 * kf + ab;
        let a1 = 2.0 * kf * (kf + ab) * (c - 2.0);
        let a2 = (c - 1.0) * (alpha * alpha - beta * beta);
        let a3 = (c - 2.0) * (c - 1.0) * c;
        let a4 = 2.0 * (kf + alpha - 1.0) * (kf + beta - 1.0) * c;
        let next = ((a2 + a3 * x) * p - a4 * p_prev) / a1;
        p_prev = p;
        p = next;
    }
    let nf = n as f64;
    let c = 2.0 * nf + ab;
    let dp = (nf * (alpha - beta - c * x) * p + 2.0 * (nf + alpha) * (nf + beta) * p_prev)
        / (c * (1.0 - x * x));
    (p, dp)
}

/// Gauss rule on `[0, len]` for the weight `t^power`; the weight is absorbed into the rule.
pub fn gauss_jacobi_origin(n: usize, power: f64, len: f64) -> Rule {
    let base = gauss_jacobi(n, 0.0, power);
    let scale = (0.5 * len).powf(1.0 + power);
    Rule {
        nodes: base.nodes.iter().map(|x| 0.5 * len * (x + 1.0)).collect(),
        weights: base.weights.iter().map(|w| w * scale).collect(),
    }
}

/// Quadrature point on a triangle in barycentric form.
#[derive(Debug, Clone, Copy)]
pub struct TrianglePoint {
    pub bary: [f64; 3],
    /// Weight relative to the triangle area (the weights sum to 1).
    pub weight: f64,
}

/// Three interior points, exact for quadratics.
pub fn triangle_degree2() -> [TrianglePoint; 3] {
    let a = 2.0 / 3.0;
    let b = 1.0 / 6.0;
    [
        TrianglePoint { bary: [a, b, b], weight: 1.0 / 3.0 },
        TrianglePoint { bary: [b, a, b], weight: 1.0 / 3.0 },
        TrianglePoint { bary: [b, b, a], weight: 1.0 / 3.0 },
    ]
}

/// Collapsed Gauss-Legendre product rule with `n * n` points, exact to degree `2n - 2`.
pub fn triangle_collapsed(n: usize) -> Vec<TrianglePoint> {
    let gl = gauss_legendre(n);
    let mut pts = Vec::with_capacity(n * n);
    for (u, wu) in gl.iter() {
        let u = 0.5 * (u + 1.0);
        for (v, wv) in gl.iter() {
            let v = 0.5 * (v + 1.0);
            // (u, v) in the unit square -> (u, u v) in {0 <= y <= x <= 1}, jacobian u
            let (x, y) = (u, u * v);
            pts.push(TrianglePoint {
                bary: [1.0 - x, x - y, y],
                weight: 0.25 * wu * wv * u * 2.0,
            });
        }
    }
    pts
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const K15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gauss_kronrod_15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = K15_WEIGHTS[7] * fc;
    let mut gauss = G7_WEIGHTS[3] * fc;
    for i in 0..7 {
        let x = h * GK_NODES[i];
        let pair = f(c - x) + f(c + x);
        kronrod += K15_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            gauss += G7_WEIGHTS[i / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Globally adaptive Gauss-Kronrod (7/15) on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_gk<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    const MAX_INTERVALS: usize = 2000;
    if a == b {
        return Ok(0.0);
    }
    let (v, e) = gauss_kronrod_15(&mut f, a, b);
    let mut intervals = vec![(a, b, v, e)];
    let mut total = v;
    let mut err = e;
    while err > tol {
        if intervals.len() >= MAX_INTERVALS {
            return Err(Error::Quadrature { estimate: total, error: err });
        }
        let (idx, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.partial_cmp(&y.1 .3).unwrap())
            .unwrap();
        let (lo, hi, v0, e0) = intervals.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Err(Error::Quadrature { estimate: total, error: err });
        }
        let (v1, e1) = gauss_kronrod_15(&mut f, lo, mid);
        let (v2, e2) = gauss_kronrod_15(&mut f, mid, hi);
        total += v1 + v2 - v0;
        err += e1 + e2 - e0;
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
    // Re-sum to shed the drift of the running updates.
    Ok(intervals.iter().map(|iv| iv.2).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        for n in 1..=20 {
            let rule = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let q: f64 = rule.iter().map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-14, "n={n} deg={deg}: {q} vs {exact}");
            }
        }
    }

    #[test]
    fn jacobi_origin_rule_moments() {
        // integral_0^L t^p t^m dt = L^(p+m+1)/(p+m+1)
        for &p in &[1.0 / 3.0, -1.0 / 3.0, 0.5, 2.0] {
            for n in 1..=15 {
                let len = 0.37;
                let rule = gauss_jacobi_origin(n, p, len);
                for m in 0..(2 * n) {
                    let q: f64 = rule.iter().map(|(t, w)| w * t.powi(m as i32)).sum();
                    let exact = len.powf(p + m as f64 + 1.0) / (p + m as f64 + 1.0);
                    assert!((q - exact).abs() < 2e-14 * exact.abs().max(1e-3), "p={p} n={n} m={m}");
                }
            }
        }
    }

    #[test]
    fn collapsed_triangle_rule_is_exact() {
        // integral over {0<=y<=x<=1} of x^a y^b = 1 / ((b+1)(a+b+2))
        let pts = triangle_collapsed(5);
        for a in 0..5 {
            for b in 0..(8 - a) {
                let q: f64 = pts
                    .iter()
                    .map(|p| {
                        let x = p.bary[1] + p.bary[2];
                        let y = p.bary[2];
                        0.5 * p.weight * x.powi(a) * y.powi(b)
                    })
                    .sum();
                let exact = 1.0 / ((b as f64 + 1.0) * (a as f64 + b as f64 + 2.0));
                assert!((q - exact).abs() < 1e-15, "a={a} b={b}");
            }
        }
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let v = adaptive_gk(|x: f64| x.powf(-0.5), 0.0, 1.0, 1e-10).unwrap();
        assert!((v - 2.0).abs() < 1e-9);
        let v = adaptive_gk(|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-13).unwrap();
        assert!((v - 2.0).abs() < 1e-13);
    }
}
