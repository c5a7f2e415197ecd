//! CSV tables, legacy VTK files and the plain-text run log.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{ElementRegion, TriangleMesh};

/// Write a CSV table. Every row must have as many fields as the header.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::SizeMismatch { what: "csv row", expected: header.len(), got: r.len() });
        }
        writeln!(w, "{}", r.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest round-trip representation in scientific notation.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

/// Legacy ASCII VTK unstructured grid with the region tag plus the given fields.
pub fn write_vtk(path: &Path, mesh: &TriangleMesh, cell_data: &[(&str, &[f64])], point_data: &[(&str, &[f64])]) -> Result<()> {
    for (_, v) in cell_data {
        if v.len() != mesh.n_triangles() {
            return Err(Error::SizeMismatch { what: "vtk cell field", expected: mesh.n_triangles(), got: v.len() });
        }
    }
    for (_, v) in point_data {
        if v.len() != mesh.n_nodes() {
            return Err(Error::SizeMismatch { what: "vtk point field", expected: mesh.n_nodes(), got: v.len() });
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "nlsimp n_side={} halo_layers={}", mesh.n_side, mesh.halo_layers)?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.n_nodes())?;
    for p in &mesh.nodes {
        writeln!(w, "{:e} {:e} 0", p[0], p[1])?;
    }
    writeln!(w, "CELLS {} {}", mesh.n_triangles(), 4 * mesh.n_triangles())?;
    for t in &mesh.triangles {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(w, "CELL_TYPES {}", mesh.n_triangles())?;
    for _ in 0..mesh.n_triangles() {
        writeln!(w, "5")?;
    }
    writeln!(w, "CELL_DATA {}", mesh.n_triangles())?;
    writeln!(w, "SCALARS region int 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for r in &mesh.element_region {
        writeln!(w, "{}", if *r == ElementRegion::Interior { 0 } else { 1 })?;
    }
    for (name, v) in cell_data {
        write_scalars(&mut w, name, v)?;
    }
    if !point_data.is_empty() {
        writeln!(w, "POINT_DATA {}", mesh.n_nodes())?;
        for (name, v) in point_data {
            write_scalars(&mut w, name, v)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_scalars(w: &mut impl Write, name: &str, v: &[f64]) -> Result<()> {
    writeln!(w, "SCALARS {name} double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for x in v {
        writeln!(w, "{x:e}")?;
    }
    Ok(())
}

/// Append-only plain-text log, one line per event.
#[derive(Debug, Clone)]
pub struct RunLog {
    path: Option<PathBuf>,
}

impl RunLog {
    pub fn to_file(path: &Path) -> Result<RunLog> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        File::create(path)?;
        Ok(RunLog { path: Some(path.to_path_buf()) })
    }

    /// A log that discards everything.
    pub fn sink() -> RunLog {
        RunLog { path: None }
    }

    pub fn line(&self, text: &str) -> Result<()> {
        if let Some(p) = &self.path {
            let mut f = OpenOptions::new().append(true).open(p)?;
            writeln!(f, "{text}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    #[test]
    fn csv_and_vtk_layout() {
        let dir = std::env::temp_dir().join(format!("nlsimp-out-{}", std::process::id()));
        let csv = dir.join("t.csv");
        write_csv(&csv, &["a", "b"], &[vec!["1".into(), num(0.5)]]).unwrap();
        assert_eq!(fs::read_to_string(&csv).unwrap(), "a,b\n1,5e-1\n");
        assert!(write_csv(&csv, &["a"], &[vec![]]).is_err());

        let mesh = build_grid(2, 0.5).unwrap();
        let rho = vec![0.5; mesh.n_triangles()];
        let u = vec![0.0; mesh.n_nodes()];
        let vtk = dir.join("m.vtk");
        write_vtk(&vtk, &mesh, &[("rho", &rho)], &[("u", &u)]).unwrap();
        let text = fs::read_to_string(&vtk).unwrap();
        assert!(text.contains(&format!("CELLS {} {}", mesh.n_triangles(), 4 * mesh.n_triangles())));
        assert!(text.contains("SCALARS rho double 1") && text.contains("SCALARS u double 1"));
        let _ = fs::remove_dir_all(dir);
    }
}
