//! Solution series as CSV: `t,re_u0,im_u0,...` with one row per grid node.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use expodelay::{GridFunction, TimeGrid, C64};

use crate::{CliError, Result};

/// Relative tolerance on the spacing of a series read back from disk.
const SPACING_TOL: f64 = 1e-9;

pub fn header(dim: usize) -> String {
    let mut h = String::from("t");
    for k in 0..dim {
        write!(h, ",re_u{k},im_u{k}").unwrap();
    }
    h
}

/// `{:.16e}` gives 17 significant digits, enough to round-trip binary64.
pub fn to_csv(f: &GridFunction) -> String {
    let grid = f.grid();
    let mut out = header(f.dim());
    out.push('\n');
    for j in 0..grid.n() {
        write!(out, "{:.16e}", grid.time(j)).unwrap();
        for z in f.row(j) {
            write!(out, ",{:.16e},{:.16e}", z.re, z.im).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Rows of a series without grid checks.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSeries {
    pub times: Vec<f64>,
    pub dim: usize,
    pub values: Vec<C64>,
}

pub fn parse_csv(text: &str) -> Result<CsvSeries> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or_else(|| CliError::config("empty CSV"))?;
    let cols: Vec<&str> = head.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols.len() % 2 == 0 {
        return Err(CliError::config(format!("CSV header has {} columns, expected 1 + 2d", cols.len())));
    }
    let dim = (cols.len() - 1) / 2;
    if cols.join(",") != header(dim) {
        return Err(CliError::config(format!("CSV header {head:?} differs from {:?}", header(dim))));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(CliError::config(format!("CSV line {}: {} columns, expected {}", i + 1, fields.len(), cols.len())));
        }
        let nums = fields
            .iter()
            .map(|s| crate::ini::parse_real(s))
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|m| CliError::config(format!("CSV line {}: {m}", i + 1)))?;
        if let Some(&prev) = times.last() {
            if nums[0] <= prev {
                return Err(CliError::config(format!("CSV line {}: t is not strictly increasing", i + 1)));
            }
        }
        times.push(nums[0]);
        values.extend(nums[1..].chunks(2).map(|p| C64::new(p[0], p[1])));
    }
    if times.len() < 2 {
        return Err(CliError::config("CSV needs at least two rows"));
    }
    Ok(CsvSeries { times, dim, values })
}

impl CsvSeries {
    /// The series as a grid function; the times must be uniformly spaced.
    pub fn to_grid_function(&self) -> Result<GridFunction> {
        let n = self.times.len();
        let (t0, t1) = (self.times[0], self.times[n - 1]);
        let dt = (t1 - t0) / (n - 1) as f64;
        for (j, &t) in self.times.iter().enumerate() {
            if (t - (t0 + j as f64 * dt)).abs() > SPACING_TOL * dt.max(t.abs()) {
                return Err(CliError::config(format!("CSV times are not uniformly spaced near t = {t}")));
            }
        }
        let grid = TimeGrid::new(t0, t1, n)?;
        Ok(GridFunction::new(grid, self.dim, self.values.clone())?)
    }
}

pub fn read_csv(path: &Path) -> Result<GridFunction> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_csv(&text)?.to_grid_function()
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let name = path.file_name().ok_or_else(|| CliError::config(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, contents).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::io(path, e)
    })
}

pub fn write_csv(path: &Path, f: &GridFunction) -> Result<()> {
    write_atomic(path, &to_csv(f))
}
