//! The discrete unknown `(u, c)` and its on-disk format.
//!
//! `field.json` holds everything needed to rebuild the grid plus the nodal
//! values; `u` and `c` use shortest round-trip formatting, so writing and
//! reading back is bit-exact. `field.csv` is a per-node table for inspection
//! (derived columns are rounded to 9 significant digits).

use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

use crate::domain::ConvexDomain;
use crate::grid::{GridError, MappedGrid};
use crate::kernel::ModelKind;

pub const FORMAT_NAME: &str = "cmcgrad-field";
pub const FORMAT_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "rho_index,phi_index,x1,x2,u,du1,du2,d2u11,d2u12,d2u22";

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed field json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed field csv at line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("unsupported field format '{format}' version {version}")]
    Format { format: String, version: u32 },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Nodal values of `u` on a grid, the constant `c`, and the gradient-image
/// domain the field is meant to map onto.
#[derive(Clone, Debug)]
pub struct SolutionField {
    pub grid: Arc<MappedGrid>,
    pub image: ConvexDomain,
    pub model: ModelKind,
    /// `true` when `u` is a dual potential on the target domain.
    pub dual: bool,
    pub u: Vec<f64>,
    pub c: f64,
}

#[derive(Serialize, Deserialize)]
struct FieldFile {
    format: String,
    version: u32,
    model: ModelKind,
    dual: bool,
    n_rho: usize,
    n_phi: usize,
    c: f64,
    domain: ConvexDomain,
    image: ConvexDomain,
    u: Vec<f64>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FieldError + '_ {
    move |source| FieldError::Io { path: path.display().to_string(), source }
}

impl SolutionField {
    pub fn new(
        grid: Arc<MappedGrid>,
        image: ConvexDomain,
        model: ModelKind,
        dual: bool,
        u: Vec<f64>,
        c: f64,
    ) -> Result<Self, GridError> {
        grid.check_len(u.len())?;
        Ok(SolutionField { grid, image, model, dual, u, c })
    }

    pub fn domain(&self) -> &ConvexDomain {
        self.grid.domain()
    }

    pub fn to_json_string(&self) -> Result<String, FieldError> {
        let file = FieldFile {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            model: self.model,
            dual: self.dual,
            n_rho: self.grid.n_rho(),
            n_phi: self.grid.n_phi(),
            c: self.c,
            domain: self.grid.domain().clone(),
            image: self.image.clone(),
            u: self.u.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self, FieldError> {
        let file: FieldFile = serde_json::from_str(text)?;
        if file.format != FORMAT_NAME || file.version != FORMAT_VERSION {
            return Err(FieldError::Format { format: file.format, version: file.version });
        }
        let grid = Arc::new(MappedGrid::new(&file.domain, file.n_rho, file.n_phi)?);
        Ok(SolutionField::new(grid, file.image, file.model, file.dual, file.u, file.c)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), FieldError> {
        std::fs::write(path, self.to_json_string()?).map_err(io_err(path))
    }

    pub fn read_json(path: &Path) -> Result<Self, FieldError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json_str(&text)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), FieldError> {
        let file = std::fs::File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        let derivs = self.grid.derivatives(&self.u)?;
        let mut write = || -> std::io::Result<()> {
            writeln!(w, "{CSV_HEADER}")?;
            for (k, d) in derivs.iter().enumerate() {
                let (i, j) = self.grid.ring_angle(k);
                let x = self.grid.node(k);
                writeln!(
                    w,
                    "{i},{j},{:.8e},{:.8e},{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}",
                    x[0],
                    x[1],
                    self.u[k],
                    d.du[0],
                    d.du[1],
                    d.d2u[(0, 0)],
                    d.d2u[(0, 1)],
                    d.d2u[(1, 1)]
                )?;
            }
            w.flush()
        };
        write().map_err(io_err(path))
    }

    /// Nodal `u` values from a CSV table written by [`Self::write_csv`].
    pub fn read_csv_values(path: &Path, grid: &MappedGrid) -> Result<Vec<f64>, FieldError> {
        let file = std::fs::File::open(path).map_err(io_err(path))?;
        let mut u = vec![f64::NAN; grid.len()];
        let mut seen = vec![false; grid.len()];
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            let lineno = n + 1;
            if n == 0 {
                if line.trim() != CSV_HEADER {
                    return Err(FieldError::Csv { line: 1, message: format!("unexpected header '{line}'") });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 10 {
                return Err(FieldError::Csv { line: lineno, message: format!("expected 10 columns, got {}", cols.len()) });
            }
            let parse_idx = |s: &str| {
                s.trim().parse::<usize>().map_err(|e| FieldError::Csv { line: lineno, message: e.to_string() })
            };
            let (i, j) = (parse_idx(cols[0])?, parse_idx(cols[1])?);
            if i > grid.n_rho() || j >= grid.n_phi() || (i == 0 && j != 0) {
                return Err(FieldError::Csv { line: lineno, message: format!("node ({i}, {j}) not on the grid") });
            }
            let k = grid.node_index(i, j);
            u[k] = cols[4]
                .trim()
                .parse::<f64>()
                .map_err(|e| FieldError::Csv { line: lineno, message: e.to_string() })?;
            seen[k] = true;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            let (i, j) = grid.ring_angle(k);
            return Err(FieldError::Csv { line: 0, message: format!("missing node ({i}, {j})") });
        }
        Ok(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field() -> SolutionField {
        let dom = ConvexDomain::ellipse([0.1, 0.0], [1.0, 0.8]).unwrap();
        let grid = Arc::new(MappedGrid::new(&dom, 6, 12).unwrap());
        let u = grid.nodes().iter().map(|x| (x[0] * 0.37).exp() / 3.0 + x[1] * x[1] * 0.1).collect();
        let image = ConvexDomain::ball([0.0, 0.05], 0.4).unwrap();
        SolutionField::new(grid, image, ModelKind::Minkowski, false, u, 1.0 / 3.0).unwrap()
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let f = field();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.json");
        f.write_json(&path).unwrap();
        let g = SolutionField::read_json(&path).unwrap();
        assert_eq!(g.u.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), f.u.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(g.c.to_bits(), f.c.to_bits());
        assert_eq!(g.model, f.model);
        assert_eq!(g.image, f.image);
        assert_eq!(g.grid.nodes(), f.grid.nodes());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let f = field();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.csv");
        f.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        assert_eq!(text.lines().count(), 1 + f.grid.len());
        let u = SolutionField::read_csv_values(&path, &f.grid).unwrap();
        assert!(u.iter().zip(&f.u).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(matches!(SolutionField::from_json_str("{"), Err(FieldError::Json(_))));
        let f = field();
        let text = f.to_json_string().unwrap().replace(FORMAT_NAME, "other");
        assert!(matches!(SolutionField::from_json_str(&text), Err(FieldError::Format { .. })));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, format!("{CSV_HEADER}\n0,0,0,0,1.0,0,0,0,0,0\n")).unwrap();
        assert!(matches!(SolutionField::read_csv_values(&path, &f.grid), Err(FieldError::Csv { .. })));
        assert!(SolutionField::new(f.grid.clone(), f.image.clone(), f.model, false, vec![0.0; 3], 0.0).is_err());
    }
}
