//! Radial interaction kernel
//!
//! `A(r) = c_nrm * r^-(n + 2s - 2) * max(0, delta^2 - r^2)^beta` in `n = 2` dimensions,
//! normalized so that `(1/n) * integral over R^n of A(|x|) dx = 1`.

use std::f64::consts::PI;

use statrs::function::beta::ln_beta;

use crate::error::{Error, Result};

/// Spatial dimension. Everything in this crate is planar.
pub const DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub delta: f64,
    pub s: f64,
    pub beta: f64,
    pub c_nrm: f64,
}

/// Normalization constant for the planar kernel.
///
/// In polar coordinates the normalization integral reduces to a Beta function:
/// `c_nrm = 2 / (pi * delta^(2 - 2s + 2 beta) * B(1 - s, beta + 1))`.
pub fn normalize(delta: f64, s: f64, beta: f64) -> Result<f64> {
    check_params(delta, s, beta)?;
    let exponent = 2.0 - 2.0 * s + 2.0 * beta;
    let log_c = (2.0 / PI).ln() - exponent * delta.ln() - ln_beta(1.0 - s, beta + 1.0);
    Ok(log_c.exp())
}

fn check_params(delta: f64, s: f64, beta: f64) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {delta}")));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidArgument(format!("fractional order must lie in (0,1), got {s}")));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("smoothing exponent must be >= 0, got {beta}")));
    }
    Ok(())
}

impl KernelSpec {
    pub fn new(delta: f64, s: f64, beta: f64) -> Result<Self> {
        let c_nrm = normalize(delta, s, beta)?;
        Ok(Self { delta, s, beta, c_nrm })
    }

    /// Exponent of the algebraic singularity, `n + 2s - 2`.
    pub fn singular_exponent(&self) -> f64 {
        DIM as f64 + 2.0 * self.s - 2.0
    }

    pub fn eval(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::Domain(format!("kernel is singular at r = {r}")));
        }
        Ok(self.value(r))
    }

    /// Unchecked evaluation for `r > 0`.
    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        let t = self.delta * self.delta - r * r;
        if t <= 0.0 {
            return 0.0;
        }
        self.c_nrm * r.powf(-self.singular_exponent()) * t.powf(self.beta)
    }

    /// The bounded factor `c_nrm * max(0, delta^2 - r^2)^beta`, i.e. the kernel with the
    /// algebraic singularity stripped off.
    #[inline]
    pub fn smooth_factor(&self, r: f64) -> f64 {
        let t = self.delta * self.delta - r * r;
        if t <= 0.0 {
            return 0.0;
        }
        if self.beta == 3.0 {
            self.c_nrm * t * t * t
        } else {
            self.c_nrm * t.powf(self.beta)
        }
    }

    /// Constant of the fractional lower bound `A(r) >= c_delta r^-(n+2s-2)` on `(0, delta/2]`.
    pub fn lower_bound_constant(&self) -> f64 {
        self.c_nrm * (0.75 * self.delta * self.delta).powf(self.beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Gauss-Legendre on `[0, delta]` after `r = delta * t^(1/(2-2s))`, which turns
    /// `r^(1-2s) dr` into a constant multiple of `dt`.
    fn radial_normalization_oracle(spec: &KernelSpec) -> f64 {
        let q = 2.0 - 2.0 * spec.s;
        let rule = crate::quadrature::rules::gauss_legendre(40);
        let panels = 64;
        let mut total = 0.0;
        for p in 0..panels {
            let (a, b) = (p as f64 / panels as f64, (p + 1) as f64 / panels as f64);
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                let t = a + (b - a) * 0.5 * (x + 1.0);
                let r = spec.delta * t.powf(1.0 / q);
                // r^(1-2s) dr = delta^q / q dt
                let jac = spec.delta.powf(q) / q;
                total += w * 0.5 * (b - a) * jac * spec.smooth_factor(r);
            }
        }
        // (1/2) * 2 pi * integral
        PI * total
    }

    #[test]
    fn normalization_matches_radial_oracle() {
        for &(delta, s) in &[(0.2, 1.0 / 3.0), (0.1, 2.0 / 3.0), (0.05, 0.5)] {
            let spec = KernelSpec::new(delta, s, 3.0).unwrap();
            let integral = radial_normalization_oracle(&spec);
            assert!((integral - 1.0).abs() < 1e-10, "delta={delta} s={s}: {integral}");
        }
    }

    #[test]
    fn beta_zero_closed_form() {
        for &s in &[0.1, 1.0 / 3.0, 0.9] {
            let delta = 0.3;
            let c = normalize(delta, s, 0.0).unwrap();
            let expected = 2.0 * (1.0 - s) / (PI * delta.powf(2.0 - 2.0 * s));
            assert!((c - expected).abs() < 1e-13 * expected);
        }
    }

    #[test]
    fn reference_value_at_delta_02() {
        // 2 / (pi * 0.2^(22/3) * B(2/3, 4)), B(2/3,4) = Gamma(2/3) Gamma(4) / Gamma(14/3)
        let b = (statrs::function::gamma::ln_gamma(2.0 / 3.0) + 6f64.ln()
            - statrs::function::gamma::ln_gamma(14.0 / 3.0))
        .exp();
        let expected = 2.0 / (PI * 0.2f64.powf(22.0 / 3.0) * b);
        let spec = KernelSpec::new(0.2, 1.0 / 3.0, 3.0).unwrap();
        assert!((spec.c_nrm - expected).abs() < 1e-12 * expected);
        let v = spec.eval(0.1).unwrap();
        let direct = expected * 0.1f64.powf(-2.0 / 3.0) * 0.03f64.powi(3);
        assert!((v - direct).abs() < 1e-12 * direct);
    }

    #[test]
    fn support_and_domain() {
        let spec = KernelSpec::new(0.2, 1.0 / 3.0, 3.0).unwrap();
        assert_eq!(spec.eval(0.2).unwrap(), 0.0);
        assert_eq!(spec.eval(0.4).unwrap(), 0.0);
        assert!(matches!(spec.eval(0.0), Err(Error::Domain(_))));
        assert!(matches!(KernelSpec::new(0.2, 1.0, 3.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(KernelSpec::new(0.2, 0.0, 3.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn lower_bound_on_log_sample() {
        let spec = KernelSpec::new(0.1, 2.0 / 3.0, 3.0).unwrap();
        let cd = spec.lower_bound_constant();
        for i in 0..200 {
            let r = spec.delta / 2.0 * 10f64.powf(-8.0 * i as f64 / 199.0);
            let scaled = spec.eval(r).unwrap() * r.powf(spec.singular_exponent());
            assert!(scaled >= cd * (1.0 - 1e-14), "r={r}");
            assert!(spec.eval(r).unwrap() > 0.0);
        }
    }
}
