//! Manufactured solutions and their right-hand sides.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::quadrature::rules::{adaptive_gk, gauss_jacobi_origin};

fn in_unit_square(x: f64, y: f64) -> bool {
    (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y)
}

/// `[x(1-x)y(1-y)]^2 sin(2 pi (x + y^2))` on the unit square, zero outside.
pub fn mms_u(x: f64, y: f64) -> f64 {
    if !in_unit_square(x, y) {
        return 0.0;
    }
    let b = x * (1.0 - x) * y * (1.0 - y);
    b * b * (2.0 * PI * (x + y * y)).sin()
}

/// Nonlocal operator applied to a field supported on the unit square:
/// `f(x) = -2 int_0^delta int_0^2pi A(r) (u(x + r e) - u(x)) / r dtheta dr`.
///
/// The angular integral is symmetrized, `int_0^pi (u(x+re) + u(x-re) - 2u(x)) dtheta`, which is
/// `O(r^2)`; the first radial panel then carries the weight `r^(1-2s)` in a Gauss-Jacobi rule.
/// Panels and arcs are split where the circle meets the square's edge lines, where the
/// zero extension is not smooth. Close to `r = 0` the second difference is all round-off, so
/// there it is replaced by a two-term even fit. `tol` is an absolute tolerance on `f`.
pub fn mms_rhs_nonlocal(u: &dyn Fn(f64, f64) -> f64, spec: &KernelSpec, point: [f64; 2], tol: f64) -> Result<f64> {
    let [x0, y0] = point;
    if !in_unit_square(x0, y0) {
        return Err(Error::Domain(format!("evaluation point ({x0}, {y0}) outside the unit square")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let delta = spec.delta;
    let u0 = u(x0, y0);

    let mut radii = vec![0.0, delta];
    for d in [x0, 1.0 - x0, y0, 1.0 - y0] {
        if d > 0.0 && d < delta {
            radii.push(d);
        }
    }
    for cx in [0.0, 1.0] {
        for cy in [0.0, 1.0] {
            let d = ((cx - x0).powi(2) + (cy - y0).powi(2)).sqrt();
            if d < delta {
                radii.push(d);
            }
        }
    }
    radii.sort_by(f64::total_cmp);
    radii.dedup_by(|a, b| (*a - *b).abs() < 1e-14);

    // inner tolerance eps(r) = eta r^2 keeps the outer error below 2 eta / pi
    let eta = 0.25 * PI * tol;

    // Rounding limit of the second difference: value rounding, and rounding of the evaluation
    // point times the slope, probed at a small radius.
    let probe = 1e-3 * radii[1];
    let (mut scale, mut slope) = (u0.abs(), 0.0f64);
    for (dx, dy) in [(probe, 0.0), (-probe, 0.0), (0.0, probe), (0.0, -probe)] {
        let v = u(x0 + dx, y0 + dy);
        scale = scale.max(v.abs());
        slope = slope.max((v - u0).abs() / probe);
    }
    let floor = 4.0 * f64::EPSILON * PI * (scale + 2.0 * slope);

    let raw_angular = |r: f64| -> Result<f64> {
        let mut cuts = vec![0.0, PI];
        let mut push = |t: f64| {
            let t = t.rem_euclid(PI);
            if t > 0.0 && t < PI {
                cuts.push(t);
            }
        };
        for c in [0.0, 1.0] {
            let cx = (c - x0) / r;
            if cx.abs() <= 1.0 {
                push(cx.acos());
                push(-cx.acos());
            }
            let cy = (c - y0) / r;
            if cy.abs() <= 1.0 {
                push(cy.asin());
                push(PI - cy.asin());
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
        let arc_tol = eta * r * r / cuts.len() as f64;
        let mut total = 0.0;
        for w in cuts.windows(2) {
            let arc = |t: f64| {
                let (c, s) = (r * t.cos(), r * t.sin());
                u(x0 + c, y0 + s) + u(x0 - c, y0 - s) - 2.0 * u0
            };
            total += match adaptive_gk(arc, w[0], w[1], arc_tol) {
                Ok(v) => v,
                // the tolerance is below what round-off allows
                Err(Error::Quadrature { estimate, error }) if error <= 16.0 * floor => estimate,
                Err(e) => return Err(e),
            };
        }
        Ok(total)
    };

    // Below rc, where eta r^2 drops under the rounding floor, S(r) = a r^2 + b r^4 is fitted
    // from S(rc) and S(2 rc). rc stays inside the first smooth panel.
    let rc = (floor / eta).sqrt().min(0.5 * radii[1]);
    let taylor = std::cell::OnceCell::new();
    let angular = |r: f64| -> Result<f64> {
        if r >= rc {
            return raw_angular(r);
        }
        let &(a2, b4) = match taylor.get() {
            Some(v) => v,
            None => {
                let (s1, s2) = (raw_angular(rc)?, raw_angular(2.0 * rc)?);
                let b4 = (s2 - 4.0 * s1) / 12.0;
                taylor.get_or_init(|| (s1 - b4, b4))
            }
        };
        let q = (r / rc).powi(2);
        Ok(q * a2 + q * q * b4)
    };

    let alpha = 1.0 - 2.0 * spec.s;
    let pieces = radii.len() - 1;
    let piece_tol = tol / (2.0 * pieces as f64);

    // first panel: int_0^r1 r^(1-2s) [c (delta^2-r^2)^beta S(r) / r^2] dr
    let r1 = radii[1];
    let first = |n: usize| -> Result<f64> {
        let rule = gauss_jacobi_origin(n, alpha, r1);
        let mut acc = 0.0;
        for (r, w) in rule.iter() {
            acc += w * spec.smooth_factor(r) * angular(r)? / (r * r);
        }
        Ok(acc)
    };
    let mut n = 16;
    let mut coarse = first(n)?;
    let mut head = loop {
        let fine = first(2 * n)?;
        if (fine - coarse).abs() <= piece_tol {
            break fine;
        }
        if n >= 256 {
            return Err(Error::Quadrature { estimate: -2.0 * fine, error: 2.0 * (fine - coarse).abs() });
        }
        n *= 2;
        coarse = fine;
    };

    let mut err = None;
    for w in radii[1..].windows(2) {
        let v = adaptive_gk(
            |r| match angular(r) {
                Ok(a) => spec.smooth_factor(r) * r.powf(-1.0 - 2.0 * spec.s) * a,
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            },
            w[0],
            w[1],
            piece_tol,
        )?;
        head += v;
    }
    if let Some(e) = err {
        return Err(e);
    }
    Ok(-2.0 * head)
}

/// Smooth density used for the horizon-convergence study:
/// `rho_min + (rho_max - rho_min) exp(-|x - m|^2 / sigma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianDensity {
    pub rho_min: f64,
    pub rho_max: f64,
    pub center: [f64; 2],
    pub sigma: f64,
    pub p: f64,
}

impl Default for GaussianDensity {
    fn default() -> Self {
        Self { rho_min: 1e-3, rho_max: 1.0, center: [0.5, 2.0 / 3.0], sigma: 0.1, p: 2.0 }
    }
}

impl GaussianDensity {
    pub fn rho(&self, x: f64, y: f64) -> f64 {
        let q = (x - self.center[0]).powi(2) + (y - self.center[1]).powi(2);
        self.rho_min + (self.rho_max - self.rho_min) * (-q / self.sigma).exp()
    }

    pub fn grad_rho(&self, x: f64, y: f64) -> [f64; 2] {
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        let g = (self.rho_max - self.rho_min) * (-(dx * dx + dy * dy) / self.sigma).exp();
        [-2.0 * dx / self.sigma * g, -2.0 * dy / self.sigma * g]
    }

    /// `-div(rho^p grad u) = -rho^p lap u - p rho^(p-1) grad rho . grad u`.
    pub fn source(&self, x: f64, y: f64) -> f64 {
        let r = self.rho(x, y);
        let gr = self.grad_rho(x, y);
        let gu = gamma_grad_u(x, y);
        let lap = -5.0 * PI * PI * gamma_u(x, y);
        -r.powf(self.p) * lap - self.p * r.powf(self.p - 1.0) * (gr[0] * gu[0] + gr[1] * gu[1])
    }
}

/// `sin(2 pi x) sin(pi y)` on the unit square, zero outside.
pub fn gamma_u(x: f64, y: f64) -> f64 {
    if !in_unit_square(x, y) {
        return 0.0;
    }
    (2.0 * PI * x).sin() * (PI * y).sin()
}

fn gamma_grad_u(x: f64, y: f64) -> [f64; 2] {
    [2.0 * PI * (2.0 * PI * x).cos() * (PI * y).sin(), PI * (2.0 * PI * x).sin() * (PI * y).cos()]
}
