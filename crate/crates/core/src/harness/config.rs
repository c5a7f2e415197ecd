//! Flat `key = value` run configuration.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use evalexpr::{ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node, Value};

use crate::error::{Error, Result};
use crate::optimizer::OcConfig;
use crate::quadrature::QuadratureBudget;

/// Right-hand side selector.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    /// `f = 1`.
    Uniform,
    /// Manufactured nonlocal solution `[x(1-x)y(1-y)]^2 sin(2 pi (x + y^2))`.
    MmsNonlocal,
    /// `f = -div(rho^p grad u)` for the Gaussian density and `u = sin(2 pi x) sin(pi y)`.
    MmsLocalDivergence,
    /// Expression in `x` and `y`, e.g. `math::sin(x) * y`.
    Expression(String),
}

impl SourceSpec {
    pub fn parse(s: &str) -> Result<SourceSpec> {
        Ok(match s.trim() {
            "uniform" => SourceSpec::Uniform,
            "mms-nonlocal" => SourceSpec::MmsNonlocal,
            "mms-local-divergence" => SourceSpec::MmsLocalDivergence,
            other => {
                let expr = other.strip_prefix("expr:").unwrap_or(other).trim().to_string();
                Expression::compile(&expr)?;
                SourceSpec::Expression(expr)
            }
        })
    }

    pub fn name(&self) -> String {
        match self {
            SourceSpec::Uniform => "uniform".into(),
            SourceSpec::MmsNonlocal => "mms-nonlocal".into(),
            SourceSpec::MmsLocalDivergence => "mms-local-divergence".into(),
            SourceSpec::Expression(e) => format!("expr:{e}"),
        }
    }
}

/// Compiled source expression.
pub struct Expression {
    tree: Node<DefaultNumericTypes>,
}

impl Expression {
    pub fn compile(text: &str) -> Result<Expression> {
        let tree = evalexpr::build_operator_tree::<DefaultNumericTypes>(text)
            .map_err(|e| Error::Config(format!("bad source expression `{text}`: {e}")))?;
        let e = Expression { tree };
        e.eval(0.5, 0.5)?;
        Ok(e)
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
        let set = |ctx: &mut HashMapContext, k: &str, v: f64| {
            ctx.set_value(k.into(), Value::from_float(v)).map_err(|e| Error::Config(e.to_string()))
        };
        set(&mut ctx, "x", x)?;
        set(&mut ctx, "y", y)?;
        set(&mut ctx, "pi", std::f64::consts::PI)?;
        self.tree
            .eval_number_with_context(&ctx)
            .map_err(|e| Error::Config(format!("cannot evaluate source expression: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n_side: usize,
    /// Refinement ladder for convergence studies.
    pub n_sides: Vec<usize>,
    pub delta: f64,
    /// Horizons for the delta study and the cross-check.
    pub deltas: Vec<f64>,
    pub s: f64,
    pub beta: f64,
    pub p: f64,
    pub gamma: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub source: SourceSpec,
    pub budget: QuadratureBudget,
    pub solver_tol: f64,
    pub solver_max_iter: Option<usize>,
    pub eta: f64,
    pub xi: f64,
    pub stop_tol: f64,
    pub bisection_tol: f64,
    pub max_outer_iter: usize,
    /// Write a design snapshot every this many OC iterations (0 disables).
    pub snapshot_every: usize,
    pub mms_tol: f64,
    pub quad_min: usize,
    pub quad_max: usize,
    pub quad_reference: usize,
    pub out_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let oc = OcConfig::default();
        Self {
            n_side: 40,
            n_sides: vec![10, 20, 40],
            delta: 0.2,
            deltas: vec![0.2, 0.1, 0.05],
            s: 1.0 / 3.0,
            beta: 3.0,
            p: oc.p,
            gamma: oc.gamma,
            rho_min: oc.rho_min,
            rho_max: oc.rho_max,
            source: SourceSpec::Uniform,
            budget: QuadratureBudget::default(),
            solver_tol: oc.solver_tol,
            solver_max_iter: None,
            eta: oc.eta,
            xi: oc.xi,
            stop_tol: oc.stop_tol,
            bisection_tol: oc.bisection_tol,
            max_outer_iter: oc.max_outer_iter,
            snapshot_every: 0,
            mms_tol: 1e-10,
            quad_min: 3,
            quad_max: 15,
            quad_reference: 30,
            out_dir: PathBuf::from("out"),
            cache_dir: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').filter(|x| !x.trim().is_empty()).map(|x| parse_num(key, x)).collect()
}

/// Accepts plain numbers and simple fractions such as `1/3`.
fn parse_real(key: &str, v: &str) -> Result<f64> {
    match v.split_once('/') {
        Some((a, b)) => Ok(parse_num::<f64>(key, a)? / parse_num::<f64>(key, b)?),
        None => parse_num(key, v),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "n_side" => self.n_side = parse_num(key, v)?,
            "n_sides" => self.n_sides = parse_list(key, v)?,
            "delta" => self.delta = parse_real(key, v)?,
            "deltas" => self.deltas = v.split(',').map(|x| parse_real(key, x)).collect::<Result<_>>()?,
            "s" => self.s = parse_real(key, v)?,
            "beta" => self.beta = parse_real(key, v)?,
            "p" => self.p = parse_real(key, v)?,
            "gamma" => self.gamma = parse_real(key, v)?,
            "rho_min" => self.rho_min = parse_real(key, v)?,
            "rho_max" => self.rho_max = parse_real(key, v)?,
            "f" | "source" => self.source = SourceSpec::parse(v)?,
            "quad_identical" => self.budget.identical = parse_num(key, v)?,
            "quad_edge" => self.budget.edge = parse_num(key, v)?,
            "quad_vertex" => self.budget.vertex = parse_num(key, v)?,
            "quad_near" => self.budget.near = parse_num(key, v)?,
            "quad_far" => self.budget.far = parse_num(key, v)?,
            "quad_all" => self.budget = QuadratureBudget::uniform(parse_num(key, v)?),
            "solver_tol" => self.solver_tol = parse_real(key, v)?,
            "solver_max_iter" => self.solver_max_iter = Some(parse_num(key, v)?),
            "eta" => self.eta = parse_real(key, v)?,
            "xi" => self.xi = parse_real(key, v)?,
            "stop_tol" => self.stop_tol = parse_real(key, v)?,
            "bisection_tol" => self.bisection_tol = parse_real(key, v)?,
            "max_outer_iter" => self.max_outer_iter = parse_num(key, v)?,
            "snapshot_every" => self.snapshot_every = parse_num(key, v)?,
            "mms_tol" => self.mms_tol = parse_real(key, v)?,
            "quad_min" => self.quad_min = parse_num(key, v)?,
            "quad_max" => self.quad_max = parse_num(key, v)?,
            "quad_reference" => self.quad_reference = parse_num(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "cache_dir" => self.cache_dir = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parse `key = value` lines; `#` starts a comment.
    pub fn parse_str(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = HashMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
            if let Some(prev) = seen.insert(k.trim().to_string(), no + 1) {
                return Err(Error::Config(format!("line {}: `{}` already set on line {prev}", no + 1, k.trim())));
            }
            cfg.set(k, v).map_err(|e| Error::Config(format!("line {}: {e}", no + 1)))?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// Apply `key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{}` is not key=value", o.as_ref())))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_side == 0 || self.n_sides.contains(&0) {
            return bad("n_side must be positive".into());
        }
        if !(self.delta > 0.0) || self.deltas.iter().any(|d| !(*d > 0.0)) {
            return bad("horizons must be positive".into());
        }
        if !(self.s > 0.0 && self.s < 1.0) {
            return bad(format!("s must lie in (0,1), got {}", self.s));
        }
        if !(self.beta >= 0.0) {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        if !(self.p >= 1.0 && self.p <= 2.0) {
            return bad(format!("p must lie in [1,2], got {}", self.p));
        }
        if !(self.quad_min >= 1 && self.quad_min <= self.quad_max && self.quad_reference > self.quad_max) {
            return bad("need 1 <= quad_min <= quad_max < quad_reference".into());
        }
        if !(self.mms_tol > 0.0) {
            return bad("mms_tol must be positive".into());
        }
        self.budget.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.oc_config().validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn oc_config(&self) -> OcConfig {
        OcConfig {
            eta: self.eta,
            xi: self.xi,
            stop_tol: self.stop_tol,
            bisection_tol: self.bisection_tol,
            max_outer_iter: self.max_outer_iter,
            p: self.p,
            gamma: self.gamma,
            rho_min: self.rho_min,
            rho_max: self.rho_max,
            solver_tol: self.solver_tol,
            solver_max_iter: self.solver_max_iter,
        }
    }

    /// Echo of every key, in the file format.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let b = &self.budget;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        kv("n_side", self.n_side.to_string());
        kv("n_sides", self.n_sides.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","));
        kv("delta", self.delta.to_string());
        kv("deltas", list(&self.deltas));
        kv("s", self.s.to_string());
        kv("beta", self.beta.to_string());
        kv("p", self.p.to_string());
        kv("gamma", self.gamma.to_string());
        kv("rho_min", self.rho_min.to_string());
        kv("rho_max", self.rho_max.to_string());
        kv("f", self.source.name());
        kv("quad_identical", b.identical.to_string());
        kv("quad_edge", b.edge.to_string());
        kv("quad_vertex", b.vertex.to_string());
        kv("quad_near", b.near.to_string());
        kv("quad_far", b.far.to_string());
        kv("solver_tol", self.solver_tol.to_string());
        if let Some(m) = self.solver_max_iter {
            kv("solver_max_iter", m.to_string());
        }
        kv("eta", self.eta.to_string());
        kv("xi", self.xi.to_string());
        kv("stop_tol", self.stop_tol.to_string());
        kv("bisection_tol", self.bisection_tol.to_string());
        kv("max_outer_iter", self.max_outer_iter.to_string());
        kv("snapshot_every", self.snapshot_every.to_string());
        kv("mms_tol", self.mms_tol.to_string());
        kv("quad_min", self.quad_min.to_string());
        kv("quad_max", self.quad_max.to_string());
        kv("quad_reference", self.quad_reference.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        if let Some(c) = &self.cache_dir {
            kv("cache_dir", c.display().to_string());
        }
        out
    }
}
