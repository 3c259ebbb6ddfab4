//! Gridded spatial covariates: ESRI ASCII grid I/O, point evaluation,
//! design vectors and quadrature of exp-linear integrands.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{DilatedWindow, Point, QuadratureGrid};

/// Piecewise-constant raster field. Values are stored row-major with
/// row 0 the southernmost row; the ESRI ASCII file stores the
/// northernmost row first.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterCovariate {
    pub name: String,
    pub origin: Point, // lower-left corner
    pub cell: f64,
    pub ncols: usize,
    pub nrows: usize,
    pub values: Vec<f64>,
    pub nodata: f64,
}

impl RasterCovariate {
    pub fn new(
        name: impl Into<String>,
        origin: Point,
        cell: f64,
        ncols: usize,
        nrows: usize,
        values: Vec<f64>,
        nodata: f64,
    ) -> Result<Self> {
        if ncols == 0 || nrows == 0 || cell <= 0.0 {
            return Err(Error::Config("raster must have ncols, nrows >= 1 and cell > 0".into()));
        }
        if values.len() != ncols * nrows {
            return Err(Error::Config(format!(
                "raster value count {} does not match {ncols}x{nrows}",
                values.len()
            )));
        }
        Ok(RasterCovariate {
            name: name.into(),
            origin,
            cell,
            ncols,
            nrows,
            values,
            nodata,
        })
    }

    /// Constant raster covering a bounding box, handy in tests and for
    /// homogeneous models.
    pub fn constant(name: impl Into<String>, origin: Point, cell: f64, ncols: usize, nrows: usize, value: f64) -> Self {
        RasterCovariate {
            name: name.into(),
            origin,
            cell,
            ncols,
            nrows,
            values: vec![value; ncols * nrows],
            nodata: -9999.0,
        }
    }

    fn cell_index(&self, p: &Point) -> Option<(usize, usize)> {
        // tie rule: a point on a shared cell edge belongs to the cell
        // selected by floor(p/cell)
        let col = ((p.x - self.origin.x) / self.cell).floor();
        let row = ((p.y - self.origin.y) / self.cell).floor();
        if col < 0.0 || row < 0.0 {
            return None;
        }
        let (col, row) = (col as usize, row as usize);
        if col >= self.ncols || row >= self.nrows {
            return None;
        }
        Some((col, row))
    }

    /// Nearest-cell (piecewise-constant) value at `p`.
    pub fn value_at(&self, p: &Point) -> Result<f64> {
        let (col, row) = self.cell_index(p).ok_or_else(|| Error::CovariateEval {
            name: self.name.clone(),
            x: p.x,
            y: p.y,
            reason: "point outside raster extent".into(),
        })?;
        let v = self.values[row * self.ncols + col];
        if v == self.nodata {
            return Err(Error::CovariateEval {
                name: self.name.clone(),
                x: p.x,
                y: p.y,
                reason: "nodata cell".into(),
            });
        }
        Ok(v)
    }

    /// Maximum value over non-nodata cells.
    pub fn max_value(&self) -> f64 {
        self.values
            .iter()
            .filter(|&&v| v != self.nodata)
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
    }

    /// Checks that every mask-true cell center of `dw` hits a non-nodata
    /// cell; reports the first uncovered cell.
    pub fn check_covers(&self, dw: &DilatedWindow) -> Result<()> {
        for row in 0..dw.nrows {
            for col in 0..dw.ncols {
                if dw.mask_at(col, row) {
                    let c = dw.cell_center(col, row);
                    if let Err(e) = self.value_at(&c) {
                        return Err(Error::Validation(format!(
                            "covariate '{}' does not cover the dilated window: {e}",
                            self.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Parse an ESRI ASCII grid. The first data line is the
    /// northernmost row.
    pub fn read_esri_ascii(name: impl Into<String>, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse_esri_ascii(name, &text, &path.display().to_string())
    }

    pub fn parse_esri_ascii(name: impl Into<String>, text: &str, path: &str) -> Result<Self> {
        let perr = |m: String| Error::Parse {
            path: path.to_string(),
            message: m,
        };
        let mut ncols = None;
        let mut nrows = None;
        let mut xll = None;
        let mut yll = None;
        let mut cell = None;
        let mut nodata = -9999.0;
        let mut lines = text.lines();
        let mut data_first: Option<&str> = None;
        for line in lines.by_ref() {
            let mut it = line.split_whitespace();
            let key = match it.next() {
                Some(k) => k,
                None => continue,
            };
            let lower = key.to_ascii_lowercase();
            let is_header = matches!(
                lower.as_str(),
                "ncols" | "nrows" | "xllcorner" | "yllcorner" | "cellsize" | "nodata_value"
            );
            if !is_header {
                data_first = Some(line);
                break;
            }
            let val = it
                .next()
                .ok_or_else(|| perr(format!("header line '{key}' has no value")))?;
            match lower.as_str() {
                "ncols" => ncols = Some(val.parse::<usize>().map_err(|e| perr(format!("ncols: {e}")))?),
                "nrows" => nrows = Some(val.parse::<usize>().map_err(|e| perr(format!("nrows: {e}")))?),
                "xllcorner" => xll = Some(val.parse::<f64>().map_err(|e| perr(format!("xllcorner: {e}")))?),
                "yllcorner" => yll = Some(val.parse::<f64>().map_err(|e| perr(format!("yllcorner: {e}")))?),
                "cellsize" => cell = Some(val.parse::<f64>().map_err(|e| perr(format!("cellsize: {e}")))?),
                "nodata_value" => nodata = val.parse::<f64>().map_err(|e| perr(format!("NODATA_value: {e}")))?,
                _ => unreachable!(),
            }
        }
        let ncols = ncols.ok_or_else(|| perr("missing ncols".into()))?;
        let nrows = nrows.ok_or_else(|| perr("missing nrows".into()))?;
        let xll = xll.ok_or_else(|| perr("missing xllcorner".into()))?;
        let yll = yll.ok_or_else(|| perr("missing yllcorner".into()))?;
        let cell = cell.ok_or_else(|| perr("missing cellsize".into()))?;

        let mut flat: Vec<f64> = Vec::with_capacity(ncols * nrows);
        for line in data_first.into_iter().chain(lines) {
            for tok in line.split_whitespace() {
                flat.push(tok.parse::<f64>().map_err(|e| perr(format!("value '{tok}': {e}")))?);
            }
        }
        if flat.len() != ncols * nrows {
            return Err(perr(format!(
                "expected {} values, found {}",
                ncols * nrows,
                flat.len()
            )));
        }
        // flip: file rows run north to south, storage runs south to north
        let mut values = vec![0.0; ncols * nrows];
        for file_row in 0..nrows {
            let store_row = nrows - 1 - file_row;
            values[store_row * ncols..(store_row + 1) * ncols]
                .copy_from_slice(&flat[file_row * ncols..(file_row + 1) * ncols]);
        }
        RasterCovariate::new(name, Point::new(xll, yll), cell, ncols, nrows, values, nodata)
    }

    /// Serialize as an ESRI ASCII grid. Values use Rust's shortest
    /// round-trip float formatting, so write/read round-trips bit-exactly.
    pub fn to_esri_ascii(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("ncols {}\n", self.ncols));
        s.push_str(&format!("nrows {}\n", self.nrows));
        s.push_str(&format!("xllcorner {}\n", self.origin.x));
        s.push_str(&format!("yllcorner {}\n", self.origin.y));
        s.push_str(&format!("cellsize {}\n", self.cell));
        s.push_str(&format!("NODATA_value {}\n", self.nodata));
        for file_row in 0..self.nrows {
            let store_row = self.nrows - 1 - file_row;
            let row = &self.values[store_row * self.ncols..(store_row + 1) * self.ncols];
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn write_esri_ascii(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_esri_ascii()).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

/// Covariate lists for the three model components. `z_beta` and
/// `z_alpha` must not share a covariate name (identifiability of the
/// two-step estimator).
#[derive(Debug, Clone, Default)]
pub struct CovariateSet {
    pub z_beta: Vec<RasterCovariate>,
    pub z_alpha: Vec<RasterCovariate>,
    pub z_omega: Vec<RasterCovariate>,
}

impl CovariateSet {
    pub fn new(
        z_beta: Vec<RasterCovariate>,
        z_alpha: Vec<RasterCovariate>,
        z_omega: Vec<RasterCovariate>,
    ) -> Result<Self> {
        for list in [&z_beta, &z_alpha, &z_omega] {
            for i in 0..list.len() {
                for j in i + 1..list.len() {
                    if list[i].name == list[j].name {
                        return Err(Error::Validation(format!(
                            "duplicate covariate name '{}' within one list",
                            list[i].name
                        )));
                    }
                }
            }
        }
        for b in &z_beta {
            if z_alpha.iter().any(|a| a.name == b.name) {
                return Err(Error::Validation(format!(
                    "covariate '{}' appears in both the center-intensity and cluster-size lists; \
                     these lists must be disjoint",
                    b.name
                )));
            }
        }
        Ok(CovariateSet {
            z_beta,
            z_alpha,
            z_omega,
        })
    }
}

/// `(1, z_1(p), ..., z_k(p))` when `with_intercept`, else the bare values.
pub fn design_vector(covs: &[RasterCovariate], p: &Point, with_intercept: bool) -> Result<Vec<f64>> {
    let mut v = Vec::with_capacity(covs.len() + usize::from(with_intercept));
    if with_intercept {
        v.push(1.0);
    }
    for c in covs {
        v.push(c.value_at(p)?);
    }
    Ok(v)
}

/// Quadrature of `exp(design(u) . coeffs)` over the grid. The design
/// vector includes an intercept iff `coeffs` is one longer than `covs`.
pub fn integrate_exp_linear(
    covs: &[RasterCovariate],
    coeffs: &[f64],
    grid: &QuadratureGrid,
) -> Result<f64> {
    let with_intercept = match coeffs.len().checked_sub(covs.len()) {
        Some(0) => false,
        Some(1) => true,
        _ => {
            return Err(Error::Config(format!(
                "coefficient length {} incompatible with {} covariates",
                coeffs.len(),
                covs.len()
            )))
        }
    };
    let mut total = 0.0;
    for (node, &w) in grid.nodes.iter().zip(&grid.weights) {
        let z = design_vector(covs, node, with_intercept)?;
        let expo: f64 = z.iter().zip(coeffs).map(|(a, b)| a * b).sum();
        let val = expo.exp();
        if !val.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite integrand exp({expo}) at node ({}, {})",
                node.x, node.y
            )));
        }
        total += w * val;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_grid, Region, Window};

    fn unit_raster(name: &str, value: f64) -> RasterCovariate {
        RasterCovariate::constant(name, Point::new(-0.5, -0.5), 0.05, 40, 40, value)
    }

    /// Linear-in-x raster on roughly [-0.5, 1.5]^2: value = x coordinate
    /// of the cell center.
    fn linear_x_raster(name: &str, cell: f64) -> RasterCovariate {
        let n = (2.0 / cell).ceil() as usize;
        let mut values = vec![0.0; n * n];
        for row in 0..n {
            for col in 0..n {
                values[row * n + col] = -0.5 + (col as f64 + 0.5) * cell;
            }
        }
        RasterCovariate::new(name, Point::new(-0.5, -0.5), cell, n, n, values, -9999.0).unwrap()
    }

    #[test]
    fn value_at_constant() {
        let r = unit_raster("c", 2.0);
        assert_eq!(r.value_at(&Point::new(0.5, 0.5)).unwrap(), 2.0);
    }

    #[test]
    fn value_at_two_cells_and_edge_tie() {
        let r = RasterCovariate::new(
            "two",
            Point::new(0.0, 0.0),
            1.0,
            2,
            1,
            vec![1.0, 3.0],
            -9999.0,
        )
        .unwrap();
        assert_eq!(r.value_at(&Point::new(0.5, 0.5)).unwrap(), 1.0);
        assert_eq!(r.value_at(&Point::new(1.5, 0.5)).unwrap(), 3.0);
        // shared edge at x=1 belongs to the right cell (floor rule)
        assert_eq!(r.value_at(&Point::new(1.0, 0.5)).unwrap(), 3.0);
    }

    #[test]
    fn value_at_outside_and_nodata() {
        let mut r = RasterCovariate::new(
            "bad",
            Point::new(0.0, 0.0),
            1.0,
            2,
            1,
            vec![1.0, -9999.0],
            -9999.0,
        )
        .unwrap();
        assert!(r.value_at(&Point::new(-0.5, 0.5)).is_err());
        let e = r.value_at(&Point::new(1.5, 0.5)).unwrap_err();
        assert!(e.to_string().contains("bad"));
        r.values[1] = 7.0;
        assert_eq!(r.value_at(&Point::new(1.5, 0.5)).unwrap(), 7.0);
    }

    #[test]
    fn design_vector_shapes() {
        let p = Point::new(0.5, 0.5);
        assert_eq!(design_vector(&[], &p, true).unwrap(), vec![1.0]);
        assert_eq!(design_vector(&[], &p, false).unwrap(), Vec::<f64>::new());
        let covs = vec![unit_raster("a", 2.0)];
        assert_eq!(design_vector(&covs, &p, true).unwrap(), vec![1.0, 2.0]);
        let covs2 = vec![unit_raster("a", 2.0), unit_raster("b", -1.5)];
        let dv = design_vector(&covs2, &p, false).unwrap();
        assert_eq!(dv, vec![
            covs2[0].value_at(&p).unwrap(),
            covs2[1].value_at(&p).unwrap()
        ]);
    }

    #[test]
    fn integrate_exp_linear_basics() {
        let w = Window::unit_square();
        let grid = make_grid(&Region::Window(&w), 0.01).unwrap();
        // zero coefficients: integrand is 1, integral equals the grid total
        let covs = vec![unit_raster("a", 3.0)];
        let v = integrate_exp_linear(&covs, &[0.0, 0.0], &grid).unwrap();
        assert_eq!(v, grid.total_weight());
        // intercept-only log 2
        let v2 = integrate_exp_linear(&[], &[2f64.ln()], &grid).unwrap();
        assert!((v2 - 2.0 * grid.total_weight()).abs() < 1e-12);
    }

    #[test]
    fn integrate_exp_linear_analytic() {
        // integral of e^x over the unit square is e - 1
        let w = Window::unit_square();
        let grid = make_grid(&Region::Window(&w), 0.005).unwrap();
        let covs = vec![linear_x_raster("x", 0.005)];
        let v = integrate_exp_linear(&covs, &[0.0, 1.0], &grid).unwrap();
        assert!((v - (std::f64::consts::E - 1.0)).abs() < 1e-2);
    }

    #[test]
    fn integrate_exp_linear_scaling_invariance() {
        let w = Window::unit_square();
        let grid = make_grid(&Region::Window(&w), 0.02).unwrap();
        let base = linear_x_raster("x", 0.02);
        let mut scaled = base.clone();
        for v in &mut scaled.values {
            *v *= 10.0;
        }
        let a = integrate_exp_linear(&[base], &[0.3, 0.7], &grid).unwrap();
        let b = integrate_exp_linear(&[scaled], &[0.3, 0.07], &grid).unwrap();
        assert!((a - b).abs() < 1e-9 * a.abs());
    }

    #[test]
    fn integrate_exp_linear_overflow_reported() {
        let w = Window::unit_square();
        let grid = make_grid(&Region::Window(&w), 0.5).unwrap();
        let covs = vec![unit_raster("a", 1.0)];
        assert!(integrate_exp_linear(&covs, &[0.0, 1e4], &grid).is_err());
    }

    #[test]
    fn covariate_set_disjointness() {
        let a = unit_raster("slope", 1.0);
        let b = unit_raster("slope", 2.0);
        let err = CovariateSet::new(vec![a.clone()], vec![b], vec![]).unwrap_err();
        assert!(err.to_string().contains("slope"));
        assert!(CovariateSet::new(vec![a.clone(), a], vec![], vec![]).is_err());
    }

    #[test]
    fn esri_ascii_round_trip_bit_exact() {
        let r = RasterCovariate::new(
            "rt",
            Point::new(-1.25, 3.5),
            0.125,
            3,
            2,
            vec![0.1, -2.75, 1.0 / 3.0, 9e-8, -9999.0, 42.0],
            -9999.0,
        )
        .unwrap();
        let text = r.to_esri_ascii();
        let back = RasterCovariate::parse_esri_ascii("rt", &text, "mem").unwrap();
        assert_eq!(r, back);
        // and the serialization itself is stable
        assert_eq!(text, back.to_esri_ascii());
    }

    #[test]
    fn esri_ascii_row_order() {
        let text = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2\n3 4\n";
        let r = RasterCovariate::parse_esri_ascii("r", text, "mem").unwrap();
        // first file line is the northernmost row
        assert_eq!(r.value_at(&Point::new(0.5, 1.5)).unwrap(), 1.0);
        assert_eq!(r.value_at(&Point::new(1.5, 1.5)).unwrap(), 2.0);
        assert_eq!(r.value_at(&Point::new(0.5, 0.5)).unwrap(), 3.0);
        assert_eq!(r.value_at(&Point::new(1.5, 0.5)).unwrap(), 4.0);
    }

    #[test]
    fn esri_ascii_malformed() {
        assert!(RasterCovariate::parse_esri_ascii("r", "ncols 2\nnrows 2\n1 2 3 4\n", "mem").is_err());
        let text = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2\n3\n";
        assert!(RasterCovariate::parse_esri_ascii("r", text, "mem").is_err());
    }
}
