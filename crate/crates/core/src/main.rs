use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nlsimp_core::assembly::DesignField;
use nlsimp_core::grid::{build_grid, enumerate_pairs, TriangleMesh};
use nlsimp_core::harness::output::{num, write_csv, write_vtk, RunLog};
use nlsimp_core::harness::*;
use nlsimp_core::kernel::KernelSpec;
use nlsimp_core::optimizer::{OcRecord, Termination};
use nlsimp_core::quadrature::PairKind;
use nlsimp_core::{Error, Result};

/// Nonlocal-diffusion compliance minimization and its verification experiments.
#[derive(Parser)]
#[command(name = "nlsimp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Configuration file with `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set delta=0.1`. May be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Mesh and pair statistics for `n_side` and `delta`; writes mesh.vtk.
    GridInfo,
    /// Pair quadrature error against a refined reference for every pair class.
    QuadConvergence,
    /// Manufactured-solution refinement study over `n_sides` at `delta`.
    MmsConvergence,
    /// Nonlocal solutions for `deltas` x `n_sides` against the local analytic solution.
    DeltaConvergence,
    /// OC run at `delta`; with p = 1 the local reference run is appended.
    Optimize,
    /// Optimize at every horizon in `deltas` and cross-evaluate the designs.
    CrossCheck,
    /// OC run for the local problem at `n_side`.
    LocalOptimize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.class(), e.to_string().replace('\n', " "));
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&cli.overrides)?;
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    let log = RunLog::to_file(&out.join("run.log"))?;

    match cli.command {
        Command::GridInfo => grid_info(&cfg, &out),
        Command::QuadConvergence => {
            let spec = KernelSpec::new(cfg.delta, cfg.s, cfg.beta)?;
            let rows = quad_convergence_report(&spec, 1.0 / cfg.n_side as f64, cfg.quad_min..=cfg.quad_max, cfg.quad_reference)?;
            for kind in PairKind::ALL {
                if !rows.iter().any(|r| r.kind == kind) {
                    log.line(&format!("quad-convergence: no pair of kind {kind} within the horizon at this h"))?;
                    eprintln!("note: no pair of kind {kind} within the horizon at this h");
                }
            }
            let rows: Vec<Vec<String>> = rows.iter().map(|r| vec![r.kind.to_string(), r.points.to_string(), num(r.rel_error)]).collect();
            write_csv(&out.join("quad_convergence.csv"), &["k", "points_per_dim", "rel_error"], &rows)?;
            print_csv(&out.join("quad_convergence.csv"))
        }
        Command::MmsConvergence => {
            let rows = run_h_convergence(&cfg, &log)?;
            let rows: Vec<Vec<String>> = rows.iter().map(|r| vec![r.n_side.to_string(), num(r.h), num(r.rel_error)]).collect();
            write_csv(&out.join("h_convergence.csv"), &["n_side", "h", "rel_l2_error"], &rows)?;
            print_csv(&out.join("h_convergence.csv"))
        }
        Command::DeltaConvergence => {
            let rows = run_delta_convergence(&cfg, &log)?;
            let rows: Vec<Vec<String>> =
                rows.iter().map(|r| vec![num(r.delta), r.n_side.to_string(), num(r.h), num(r.l2_error)]).collect();
            write_csv(&out.join("delta_convergence.csv"), &["delta", "n_side", "h", "l2_error"], &rows)?;
            print_csv(&out.join("delta_convergence.csv"))
        }
        Command::Optimize => {
            let mut summary = Vec::new();
            let tag = format!("delta{}", cfg.delta);
            let run = optimize_nonlocal(&cfg, cfg.delta, &log, snapshotter(&cfg, &out, &tag))?;
            export_run(&out, &tag, &run, &mut summary)?;
            if cfg.p == 1.0 {
                let run = optimize_local(&cfg, cfg.n_side, &log, snapshotter(&cfg, &out, "local"))?;
                export_run(&out, "local", &run, &mut summary)?;
            }
            write_summary(&out, &summary)
        }
        Command::LocalOptimize => {
            let mut summary = Vec::new();
            let run = optimize_local(&cfg, cfg.n_side, &log, snapshotter(&cfg, &out, "local"))?;
            export_run(&out, "local", &run, &mut summary)?;
            write_summary(&out, &summary)
        }
        Command::CrossCheck => {
            let (runs, m) = run_cross_check(&cfg, &log)?;
            let mut summary = Vec::new();
            for run in &runs {
                export_run(&out, &format!("delta{}", run.summary.delta), run, &mut summary)?;
            }
            write_summary(&out, &summary)?;
            let mut rows = Vec::new();
            for (i, row) in m.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    rows.push(vec![num(cfg.deltas[i]), num(cfg.deltas[j]), num(*v)]);
                }
            }
            write_csv(&out.join("cross_check.csv"), &["eval_delta", "design_delta", "J"], &rows)?;
            print_csv(&out.join("cross_check.csv"))
        }
    }
}

fn grid_info(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mesh = build_grid(cfg.n_side, cfg.delta)?;
    let pairs = enumerate_pairs(&mesh, cfg.delta);
    println!("n_side {}", mesh.n_side);
    println!("halo_layers {}", mesh.halo_layers);
    println!("h {:e}", mesh.h());
    println!("nodes {} (free {})", mesh.n_nodes(), mesh.n_free());
    println!("triangles {}", mesh.n_triangles());
    println!("interacting pairs {}", pairs.len());
    write_vtk(&out.join("mesh.vtk"), &mesh, &[], &[])
}

fn print_csv(path: &Path) -> Result<()> {
    print!("{}", fs::read_to_string(path)?);
    Ok(())
}

/// Observer writing design snapshots every `snapshot_every` iterations.
fn snapshotter<'a>(cfg: &'a RunConfig, out: &'a Path, tag: &'a str) -> impl FnMut(&TriangleMesh, &OcRecord, &DesignField) + 'a {
    let every = cfg.snapshot_every;
    move |mesh, rec, design| {
        if every > 0 && rec.iter % every == 0 {
            let path = out.join(format!("{tag}_iter{:05}.vtk", rec.iter));
            if let Err(e) = write_design(&path, mesh, design, None) {
                eprintln!("warning: snapshot {}: {e}", path.display());
            }
        }
    }
}

fn write_design(path: &Path, mesh: &TriangleMesh, design: &DesignField, u: Option<&[f64]>) -> Result<()> {
    let kappa = design.conductivity();
    let point: Vec<(&str, &[f64])> = u.map(|u| vec![("u", u)]).unwrap_or_default();
    write_vtk(path, mesh, &[("rho", &design.rho), ("kappa_loc", &kappa)], &point)
}

fn export_run(out: &Path, tag: &str, run: &OptimizeRun, summary: &mut Vec<Vec<String>>) -> Result<()> {
    let rows: Vec<Vec<String>> = run
        .outcome
        .history
        .records
        .iter()
        .map(|r| vec![r.iter.to_string(), num(r.compliance), num(r.change), num(r.lambda), num(r.volume)])
        .collect();
    write_csv(&out.join(format!("{tag}_history.csv")), &["iter", "J", "drho_norm", "lambda", "volume"], &rows)?;
    write_design(&out.join(format!("{tag}_final.vtk")), &run.mesh, &run.outcome.design, Some(&run.outcome.state.values))?;
    let s = &run.summary;
    println!(
        "{tag}: J* = {:e}, N = {}, termination {:?}",
        s.compliance, s.iterations, run.outcome.termination
    );
    if let Termination::SolverFailure(msg) = &run.outcome.termination {
        return Err(Error::Optimization(format!("{tag}: {msg}")));
    }
    summary.push(vec![num(s.delta), num(s.h), num(s.compliance), s.iterations.to_string()]);
    Ok(())
}

fn write_summary(out: &Path, rows: &[Vec<String>]) -> Result<()> {
    write_csv(&out.join("summary.csv"), &["delta", "h", "J_star", "N"], rows)
}
