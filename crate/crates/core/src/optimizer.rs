//! Optimality-criterion loop for compliance minimization.

use crate::assembly::{Assembler, DesignField};
use crate::error::{Error, Result};
use crate::grid::TriangleMesh;
use crate::solve::{self, local_element_energies, SolveReport, StateField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcConfig {
    pub eta: f64,
    pub xi: f64,
    pub stop_tol: f64,
    pub bisection_tol: f64,
    pub max_outer_iter: usize,
    pub p: f64,
    pub gamma: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub solver_tol: f64,
    /// Defaults to `10 * n_free` when `None`.
    pub solver_max_iter: Option<usize>,
}

impl Default for OcConfig {
    fn default() -> Self {
        Self {
            eta: 0.2,
            xi: 0.5,
            stop_tol: 1e-4,
            bisection_tol: 1e-8,
            max_outer_iter: 3000,
            p: 1.0,
            gamma: 0.4,
            rho_min: 1e-3,
            rho_max: 1.0,
            solver_tol: 1e-10,
            solver_max_iter: None,
        }
    }
}

impl OcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.eta > 0.0) {
            return bad(format!("move limit must be positive, got {}", self.eta));
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return bad(format!("damping exponent must lie in (0,1), got {}", self.xi));
        }
        if !(self.stop_tol > 0.0) || !(self.bisection_tol > 0.0) {
            return bad("stopping tolerances must be positive".into());
        }
        if !(self.rho_min > 0.0 && self.rho_min < self.rho_max) {
            return bad(format!("need 0 < rho_min < rho_max, got [{}, {}]", self.rho_min, self.rho_max));
        }
        if !(self.gamma > self.rho_min && self.gamma < self.rho_max) {
            return bad(format!("volume fraction {} outside ({}, {})", self.gamma, self.rho_min, self.rho_max));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return bad(format!("SIMP exponent must be >= 1, got {}", self.p));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcRecord {
    pub iter: usize,
    /// Compliance of the design entering this iteration.
    pub compliance: f64,
    /// `||rho_{k+1} - rho_k||` in the area-weighted L2 norm.
    pub change: f64,
    pub lambda: f64,
    /// Volume of the updated design.
    pub volume: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// State solve failed; the history ends at the last completed iteration.
    SolverFailure(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcHistory {
    pub records: Vec<OcRecord>,
    pub solves: Vec<SolveReport>,
    /// Count of gradient entries that came out positive and were clamped.
    pub positive_gradients: usize,
    /// Iterations at which the volume constraint was inactive.
    pub inactive_steps: usize,
}

impl OcHistory {
    /// Number of OC updates performed.
    pub fn iterations(&self) -> usize {
        self.records.len()
    }
}

#[derive(Debug, Clone)]
pub struct OcOutcome {
    pub design: DesignField,
    pub state: StateField,
    /// Compliance of the returned design.
    pub compliance: f64,
    pub history: OcHistory,
    pub termination: Termination,
}

/// `g_e = -p rho_e^(p/2-1) sum_{t'} rho_{t'}^(p/2) E(e, t')`.
pub fn compliance_gradient(asm: &Assembler, design: &DesignField, u: &StateField) -> Result<Vec<f64>> {
    if u.values.len() != asm.n_nodes() {
        return Err(Error::SizeMismatch { what: "state", expected: asm.n_nodes(), got: u.values.len() });
    }
    let sigma = design.sqrt_conductivity();
    let energies = asm.pair_energies(&u.values);
    let sums = asm.weighted_energy_sums(&sigma, &energies);
    if sums.len() != design.rho.len() {
        return Err(Error::SizeMismatch { what: "design", expected: sums.len(), got: design.rho.len() });
    }
    let p = design.p;
    Ok(design.rho.iter().zip(&sums).map(|(r, s)| -p * r.powf(0.5 * p - 1.0) * s).collect())
}

/// `g_e = -p rho_e^(p-1) int_{T_e} |grad u|^2` for the local problem.
pub fn local_compliance_gradient(mesh: &TriangleMesh, design: &DesignField, u: &StateField) -> Vec<f64> {
    let p = design.p;
    local_element_energies(mesh, u)
        .iter()
        .zip(&design.rho)
        .map(|(e, r)| -p * r.powf(p - 1.0) * e)
        .collect()
}

/// Pointwise OC update with move limits. `area` is the (uniform) element area.
///
/// Returns the new densities and the number of positive gradient entries encountered.
pub fn oc_update(rho: &[f64], g: &[f64], lambda: f64, area: f64, config: &OcConfig) -> Result<(Vec<f64>, usize)> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("multiplier must be positive, got {lambda}")));
    }
    if rho.len() != g.len() {
        return Err(Error::SizeMismatch { what: "gradient", expected: rho.len(), got: g.len() });
    }
    let mut positive = 0;
    let out = rho
        .iter()
        .zip(g)
        .map(|(&r, &ge)| {
            let ratio = if ge > 0.0 {
                positive += 1;
                0.0
            } else {
                -ge / (lambda * area)
            };
            let lo = config.rho_min.max((1.0 - config.eta) * r);
            let hi = config.rho_max.min((1.0 + config.eta) * r);
            (r * ratio.powf(config.xi)).clamp(lo, hi)
        })
        .collect();
    Ok((out, positive))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Multiplier {
    pub lambda: f64,
    /// Volume of the update at `lambda`.
    pub volume: f64,
    /// False when the volume stays below target for every multiplier in the bracket.
    pub active: bool,
}

/// Bisection (in `log lambda`) for the multiplier that meets `sum rho_e |T_e| = target`.
pub fn find_multiplier(rho: &[f64], g: &[f64], area: f64, target: f64, config: &OcConfig) -> Result<Multiplier> {
    let volume = |lambda: f64| -> Result<f64> { Ok(area * oc_update(rho, g, lambda, area, config)?.0.iter().sum::<f64>()) };
    let mut ratios: Vec<f64> = g.iter().filter(|x| **x < 0.0).map(|x| -x / area).collect();
    if ratios.is_empty() {
        let lambda = 1.0;
        return Ok(Multiplier { lambda, volume: volume(lambda)?, active: false });
    }
    let mid = ratios.len() / 2;
    let median = *ratios.select_nth_unstable_by(mid, |a, b| a.total_cmp(b)).1;
    let (mut lo, mut hi) = (1e-12 * median, 1e12 * median);
    let (mut v_lo, mut v_hi) = (volume(lo)?, volume(hi)?);
    for _ in 0..5 {
        if v_lo >= target {
            break;
        }
        lo /= 10.0;
        v_lo = volume(lo)?;
    }
    if v_lo < target {
        // every update fits: constraint inactive
        return Ok(Multiplier { lambda: lo, volume: v_lo, active: false });
    }
    for _ in 0..5 {
        if v_hi <= target {
            break;
        }
        hi *= 10.0;
        v_hi = volume(hi)?;
    }
    if v_hi > target {
        // move limits keep the volume above target: take the largest shrink available
        return Ok(Multiplier { lambda: hi, volume: v_hi, active: false });
    }
    let tol = config.bisection_tol * target;
    let mut best = Multiplier { lambda: hi, volume: v_hi, active: true };
    for _ in 0..400 {
        if (best.volume - target).abs() <= tol || hi / lo - 1.0 < 1e-15 {
            break;
        }
        let m = (lo * hi).sqrt();
        let v = volume(m)?;
        if v > target {
            lo = m;
        } else {
            hi = m;
        }
        if (v - target).abs() < (best.volume - target).abs() || v <= target && best.volume > target {
            best = Multiplier { lambda: m, volume: v, active: true };
        }
    }
    Ok(best)
}

/// A state equation the OC loop can drive.
pub trait StateProblem {
    fn mesh(&self) -> &TriangleMesh;
    /// Load vector over free DOFs.
    fn load(&self) -> &[f64];
    fn solve(&self, design: &DesignField, guess: Option<&[f64]>, tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveReport)>;
    fn gradient(&self, design: &DesignField, u: &StateField) -> Result<Vec<f64>>;
}

pub struct NonlocalProblem<'a> {
    pub mesh: &'a TriangleMesh,
    pub assembler: &'a Assembler,
    pub load: Vec<f64>,
}

impl StateProblem for NonlocalProblem<'_> {
    fn mesh(&self) -> &TriangleMesh {
        self.mesh
    }
    fn load(&self) -> &[f64] {
        &self.load
    }
    fn solve(&self, design: &DesignField, guess: Option<&[f64]>, tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveReport)> {
        let k = self.assembler.stiffness(design)?;
        solve::pcg(&k, &self.load, tol, max_iter, guess)
    }
    fn gradient(&self, design: &DesignField, u: &StateField) -> Result<Vec<f64>> {
        compliance_gradient(self.assembler, design, u)
    }
}

pub struct LocalProblem<'a> {
    pub mesh: &'a TriangleMesh,
    pub load: Vec<f64>,
}

impl StateProblem for LocalProblem<'_> {
    fn mesh(&self) -> &TriangleMesh {
        self.mesh
    }
    fn load(&self) -> &[f64] {
        &self.load
    }
    fn solve(&self, design: &DesignField, guess: Option<&[f64]>, tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveReport)> {
        let k = solve::local_stiffness(self.mesh, &design.conductivity())?;
        solve::pcg(&k, &self.load, tol, max_iter, guess)
    }
    fn gradient(&self, design: &DesignField, u: &StateField) -> Result<Vec<f64>> {
        Ok(local_compliance_gradient(self.mesh, design, u))
    }
}

/// Compliance `b^T u` of a design.
pub fn evaluate<P: StateProblem>(problem: &P, design: &DesignField, config: &OcConfig) -> Result<(f64, StateField, SolveReport)> {
    let mesh = problem.mesh();
    let max_iter = config.solver_max_iter.unwrap_or(10 * mesh.n_free().max(1));
    let (x, rep) = problem.solve(design, None, config.solver_tol, max_iter)?;
    let j = problem.load().iter().zip(&x).map(|(a, b)| a * b).sum();
    Ok((j, StateField::from_free(mesh, &x), rep))
}

/// Uniform starting design meeting the volume target over the whole meshed region.
pub fn uniform_start(mesh: &TriangleMesh, config: &OcConfig) -> Result<DesignField> {
    let value = (config.gamma / mesh.meshed_area()).clamp(config.rho_min, config.rho_max);
    DesignField::uniform(mesh, value, config.rho_min, config.rho_max, config.gamma, config.p)
}

/// Run the OC loop from `rho0`. `observer` sees every record and the updated design.
pub fn optimize<P: StateProblem>(
    problem: &P,
    rho0: &DesignField,
    config: &OcConfig,
    mut observer: impl FnMut(&OcRecord, &DesignField),
) -> Result<OcOutcome> {
    config.validate()?;
    let mesh = problem.mesh();
    rho0.validate(mesh)?;
    let area = mesh.element_area();
    let target = config.gamma;
    let max_iter = config.solver_max_iter.unwrap_or(10 * mesh.n_free().max(1));
    let mut design = DesignField { p: config.p, rho_min: config.rho_min, rho_max: config.rho_max, gamma: config.gamma, ..rho0.clone() };
    let mut history = OcHistory { records: Vec::new(), solves: Vec::new(), positive_gradients: 0, inactive_steps: 0 };
    let mut guess: Option<Vec<f64>> = None;
    let mut termination = Termination::MaxIterations;

    let solve_state = |design: &DesignField, guess: Option<&[f64]>, history: &mut OcHistory| -> Result<(Vec<f64>, f64)> {
        let (x, rep) = problem.solve(design, guess, config.solver_tol, max_iter)?;
        history.solves.push(rep);
        let j = problem.load().iter().zip(&x).map(|(a, b)| a * b).sum();
        Ok((x, j))
    };

    for iter in 0..config.max_outer_iter {
        let (x, j) = match solve_state(&design, guess.as_deref(), &mut history) {
            Ok(v) => v,
            Err(e) => {
                termination = Termination::SolverFailure(e.to_string());
                break;
            }
        };
        let u = StateField::from_free(mesh, &x);
        guess = Some(x);
        let g = problem.gradient(&design, &u)?;
        if g.iter().all(|v| *v == 0.0) {
            // no load: every design is stationary
            let rec = OcRecord { iter, compliance: j, change: 0.0, lambda: 0.0, volume: design.volume(mesh) };
            history.records.push(rec);
            observer(&rec, &design);
            termination = Termination::Converged;
            break;
        }
        let mult = find_multiplier(&design.rho, &g, area, target, config)?;
        if !mult.active {
            history.inactive_steps += 1;
        }
        let (rho_new, positive) = oc_update(&design.rho, &g, mult.lambda, area, config)?;
        history.positive_gradients += positive;
        let change = (area * rho_new.iter().zip(&design.rho).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).sqrt();
        design.rho = rho_new;
        let rec = OcRecord { iter, compliance: j, change, lambda: mult.lambda, volume: design.volume(mesh) };
        history.records.push(rec);
        observer(&rec, &design);
        if change < config.stop_tol {
            termination = Termination::Converged;
            break;
        }
    }

    // cold start, so the value matches a fresh evaluation of the same design exactly
    let (state, compliance) = match solve_state(&design, None, &mut history) {
        Ok((x, j)) => (StateField::from_free(mesh, &x), j),
        Err(e) => {
            if !matches!(termination, Termination::SolverFailure(_)) {
                termination = Termination::SolverFailure(e.to_string());
            }
            (StateField { values: vec![0.0; mesh.n_nodes()] }, f64::NAN)
        }
    };
    Ok(OcOutcome { design, state, compliance, history, termination })
}
