//! Artifact writers. Every file is written to a temporary sibling and renamed into place.

use std::io::Write;
use std::path::{Path, PathBuf};

use fbvie::{DiagonalSolution, FieldSolution, Grid, VectorPath};
use nalgebra::DVector;
use serde::Serialize;

use crate::config::RunConfig;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    for r in rows {
        w.write_record(&r).expect("writing to memory");
    }
    w.into_inner().expect("writing to memory")
}

fn names(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |k| format!("{prefix}_{k}"))
}

fn push_vec(row: &mut Vec<String>, v: &DVector<f64>) {
    row.extend(v.iter().map(|x| float(*x)));
}

/// Columns `t, X_1..X_n, Y_1..Y_n, Z_1..Z_m`, one row per node.
pub fn solution_csv(sol: &DiagonalSolution<f64>) -> Vec<u8> {
    let grid = *sol.grid();
    let (n, m) = (sol.x.dim(), sol.z.dim());
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(names("X", n))
        .chain(names("Y", n))
        .chain(names("Z", m))
        .collect();
    let rows = (0..grid.len()).map(|i| {
        let mut row = vec![float(grid.node(i))];
        push_vec(&mut row, sol.x.at(i));
        push_vec(&mut row, sol.y.at(i));
        push_vec(&mut row, sol.z.at(i));
        row
    });
    csv_bytes(&header, rows)
}

/// Inverse of [`solution_csv`]; `None` if the file does not match the grid or dimensions.
pub fn read_solution_csv(bytes: &[u8], grid: &Grid, n: usize, m: usize) -> Option<DiagonalSolution<f64>> {
    let mut r = csv::Reader::from_reader(bytes);
    if r.headers().ok()?.len() != 1 + 2 * n + m {
        return None;
    }
    let (mut x, mut y, mut z) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.ok()?;
        let v: Vec<f64> = rec.iter().map(|f| f.parse().ok()).collect::<Option<_>>()?;
        if v.len() != 1 + 2 * n + m || i >= grid.len() || (v[0] - grid.node(i)).abs() > 1e-12 * (1.0 + v[0].abs()) {
            return None;
        }
        x.push(DVector::from_column_slice(&v[1..1 + n]));
        y.push(DVector::from_column_slice(&v[1 + n..1 + 2 * n]));
        z.push(DVector::from_column_slice(&v[1 + 2 * n..]));
    }
    if x.len() != grid.len() {
        return None;
    }
    Some(DiagonalSolution {
        x: VectorPath::new(*grid, x).ok()?,
        y: VectorPath::new(*grid, y).ok()?,
        z: VectorPath::new(*grid, z).ok()?,
        residual_forward: f64::NAN,
        residual_backward: f64::NAN,
    })
}

/// Triangular dumps: `t, s, X_1..X_n` for `t ≥ s` and `t, s, Y_1..Y_n` for `t ≤ s`.
pub fn field_csvs(fields: &FieldSolution<f64>) -> (Vec<u8>, Vec<u8>) {
    let grid = *fields.diagonal.grid();
    let n = fields.diagonal.dim();
    let dump = |prefix: &str, field: &fbvie::TriangularField<f64>| {
        let header: Vec<String> = ["t".to_string(), "s".to_string()].into_iter().chain(names(prefix, n)).collect();
        let mut rows = Vec::new();
        field.for_each(|i, j, v| {
            let mut row = vec![float(grid.node(i)), float(grid.node(j))];
            push_vec(&mut row, v);
            rows.push(row);
        });
        csv_bytes(&header, rows.into_iter())
    };
    (dump("X", &fields.x_field), dump("Y", &fields.y_field))
}

/// Envelope shared by every JSON report.
#[derive(Serialize)]
pub struct Envelope<'a, R: Serialize> {
    pub tool: &'static str,
    pub library_version: &'static str,
    pub command: &'a str,
    pub config: &'a RunConfig,
    pub exit_code: u8,
    pub report: R,
}

pub fn json_bytes<R: Serialize>(envelope: &Envelope<'_, R>) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(envelope).expect("reports serialize");
    bytes.push(b'\n');
    bytes
}

#[cfg(test)]
mod tests {
    use super::*;
    use fbvie::builtin;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 12345.678901234567, f64::MIN_POSITIVE] {
            assert_eq!(float(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(float(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn solution_csv_round_trips() {
        let grid = Grid::new(1.0, 8).unwrap();
        let p = builtin::lq_matrix(&grid).unwrap();
        let sol = fbvie::cold_guess(&p, &grid);
        let bytes = solution_csv(&sol);
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(text.lines().count(), 10);
        assert!(text.starts_with("t,X_1,X_2,Y_1,Y_2,Z_1\n"));
        let back = read_solution_csv(&bytes, &grid, 2, 1).unwrap();
        assert_eq!(back.distance(&sol), 0.0);
        assert!(read_solution_csv(&bytes, &Grid::new(1.0, 9).unwrap(), 2, 1).is_none());
        assert!(read_solution_csv(&bytes, &grid, 1, 1).is_none());
    }

    #[test]
    fn field_dumps_cover_the_triangles() {
        let grid = Grid::new(1.0, 4).unwrap();
        let p = builtin::lq_scalar(&grid).unwrap();
        let sol = fbvie::cold_guess(&p, &grid);
        let fields = fbvie::extend_to_fields(&p, &sol).unwrap();
        let (fx, fy) = field_csvs(&fields);
        let fx = String::from_utf8(fx).unwrap();
        assert_eq!(fx.lines().count(), 1 + 15);
        assert!(fx.starts_with("t,s,X_1\n"));
        for line in fx.lines().skip(1) {
            let v: Vec<f64> = line.split(',').map(|f| f.parse().unwrap()).collect();
            assert!(v[0] >= v[1]);
        }
        let fy = String::from_utf8(fy).unwrap();
        for line in fy.lines().skip(1) {
            let v: Vec<f64> = line.split(',').map(|f| f.parse().unwrap()).collect();
            assert!(v[0] <= v[1]);
        }
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("a.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
