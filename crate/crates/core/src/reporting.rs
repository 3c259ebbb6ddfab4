//! Posterior summaries, diagnostics series and plot emission.
//!
//! Every plot is a self-contained SVG with a sibling CSV holding the
//! plotted numbers, so results can be re-checked without an image
//! viewer. All quantiles in this crate go through [`quantile`] (linear
//! interpolation of order statistics), so summaries and plot
//! annotations can never disagree.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::covariates::RasterCovariate;
use crate::error::{Error, Result};
use crate::geometry::{Point, Window};
use crate::mcmc::ChainTrace;
use crate::model::{alpha_at, omega_at};

/// Linear-interpolation quantile over the order statistics (the common
/// "type 7" definition): with n sorted values, the p-quantile sits at
/// fractional rank (n-1)p.
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    assert!(!xs.is_empty(), "quantile of an empty sample");
    assert!((0.0..=1.0).contains(&p), "quantile level out of [0,1]");
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in quantile input"));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// One scalar parameter: posterior median and central 95% interval.
#[derive(Debug, Clone, Serialize)]
pub struct ParamSummary {
    pub parameter: String,
    pub median: f64,
    pub q025: f64,
    pub q975: f64,
}

impl ParamSummary {
    pub fn from_samples(name: &str, xs: &[f64]) -> Self {
        ParamSummary {
            parameter: name.to_string(),
            median: quantile(xs, 0.5),
            q025: quantile(xs, 0.025),
            q975: quantile(xs, 0.975),
        }
    }
}

/// Covariate significance: median of the recorded p-values.
#[derive(Debug, Clone, Serialize)]
pub struct PvalueSummary {
    pub covariate: String,
    pub median_pvalue: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PosteriorSummary {
    pub sample_count: usize,
    pub parameters: Vec<ParamSummary>,
    pub pvalues: Vec<PvalueSummary>,
}

/// Summarize a Thomas chain over its recorded (post-burn-in, thinned)
/// samples. `beta_cov_names` are the center-intensity covariates whose
/// p-values were tracked.
pub fn summarize(trace: &ChainTrace, beta_cov_names: &[String]) -> Result<PosteriorSummary> {
    if trace.recorded.is_empty() {
        return Err(Error::Config(
            "no recorded samples: the run is shorter than burn-in + one thinning step".into(),
        ));
    }
    let mut parameters = Vec::new();
    parameters.push(ParamSummary::from_samples(
        "kappa",
        &trace.recorded_series(&trace.kappa),
    ));
    let l = trace.mu.first().map_or(0, Vec::len);
    for j in 0..l {
        parameters.push(ParamSummary::from_samples(
            &format!("mu_{j}"),
            &trace.recorded_component(&trace.mu, j),
        ));
    }
    let m = trace.nu.first().map_or(0, Vec::len);
    for j in 0..m {
        parameters.push(ParamSummary::from_samples(
            &format!("nu_{j}"),
            &trace.recorded_component(&trace.nu, j),
        ));
    }
    let mut pvalues = Vec::new();
    if !beta_cov_names.is_empty() {
        if trace.pvalues.len() != trace.recorded.len() {
            return Err(Error::Numeric(format!(
                "p-value records ({}) do not line up with recorded samples ({})",
                trace.pvalues.len(),
                trace.recorded.len()
            )));
        }
        for (j, name) in beta_cov_names.iter().enumerate() {
            let series: Vec<f64> = trace.pvalues.iter().map(|row| row[j]).collect();
            pvalues.push(PvalueSummary {
                covariate: name.clone(),
                median_pvalue: median(&series),
            });
        }
    }
    Ok(PosteriorSummary {
        sample_count: trace.recorded.len(),
        parameters,
        pvalues,
    })
}

/// Sliding-window acceptance rate: entry `i` is the mean of the last
/// `window` flags; the first `window - 1` entries average the prefix.
pub fn acceptance_series(flags: &[bool], window: usize) -> Vec<f64> {
    assert!(window >= 1, "window must be >= 1");
    let mut out = Vec::with_capacity(flags.len());
    let mut sum = 0usize;
    for (i, &f) in flags.iter().enumerate() {
        sum += usize::from(f);
        if i >= window {
            sum -= usize::from(flags[i - window]);
        }
        let denom = (i + 1).min(window);
        out.push(sum as f64 / denom as f64);
    }
    out
}

/// Freedman–Diaconis bin count, clamped to `[1, 200]`.
pub fn fd_bins(xs: &[f64]) -> usize {
    let n = xs.len();
    if n < 2 {
        return 1;
    }
    let iqr = quantile(xs, 0.75) - quantile(xs, 0.25);
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return 1;
    }
    let width = 2.0 * iqr / (n as f64).cbrt();
    if !(width > 0.0) {
        return (n as f64).sqrt().ceil() as usize;
    }
    ((span / width).ceil() as usize).clamp(1, 200)
}

/// Histogram with Freedman–Diaconis bins: returns (edges, counts) with
/// `edges.len() == counts.len() + 1`.
pub fn histogram(xs: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let k = fd_bins(xs);
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let edges: Vec<f64> = (0..=k).map(|i| lo + span * i as f64 / k as f64).collect();
    let mut counts = vec![0usize; k];
    for &x in xs {
        let mut b = ((x - lo) / span * k as f64).floor() as usize;
        if b >= k {
            b = k - 1;
        }
        counts[b] += 1;
    }
    (edges, counts)
}

/// A scalar field on a regular grid over the observation window
/// (row-major, row 0 southernmost; NaN marks cells outside the window).
#[derive(Debug, Clone)]
pub struct SurfaceRaster {
    pub name: String,
    pub origin: Point,
    pub cell: f64,
    pub ncols: usize,
    pub nrows: usize,
    pub values: Vec<f64>,
}

/// Evaluate the cluster-size and cluster-spread surfaces at the
/// posterior medians of the log-linear coefficients.
pub fn estimated_surfaces(
    mu_median: &[f64],
    nu_median: &[f64],
    z_alpha: &[RasterCovariate],
    z_omega: &[RasterCovariate],
    w: &Window,
    cell: f64,
) -> Result<(SurfaceRaster, SurfaceRaster)> {
    if !(cell > 0.0) {
        return Err(Error::Config("surface cell size must be > 0".into()));
    }
    let bbox = w.bbox();
    let ncols = ((bbox.x_right - bbox.x_left) / cell).ceil() as usize;
    let nrows = ((bbox.y_top - bbox.y_bottom) / cell).ceil() as usize;
    let mut alpha = vec![f64::NAN; ncols * nrows];
    let mut omega = vec![f64::NAN; ncols * nrows];
    for r in 0..nrows {
        for c in 0..ncols {
            let p = Point::new(
                bbox.x_left + (c as f64 + 0.5) * cell,
                bbox.y_bottom + (r as f64 + 0.5) * cell,
            );
            if w.contains(&p) {
                alpha[r * ncols + c] = alpha_at(mu_median, z_alpha, &p)?;
                omega[r * ncols + c] = omega_at(nu_median, z_omega, &p)?;
            }
        }
    }
    let origin = Point::new(bbox.x_left, bbox.y_bottom);
    Ok((
        SurfaceRaster {
            name: "alpha_surface".into(),
            origin,
            cell,
            ncols,
            nrows,
            values: alpha,
        },
        SurfaceRaster {
            name: "omega_surface".into(),
            origin,
            cell,
            ncols,
            nrows,
            values: omega,
        },
    ))
}

const PLOT_W: f64 = 720.0;
const PLOT_H: f64 = 360.0;
const MARGIN: f64 = 45.0;

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" \
         viewBox=\"0 0 {PLOT_W} {PLOT_H}\">\n\
         <rect width=\"{PLOT_W}\" height=\"{PLOT_H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"14\">{title}</text>\n",
        PLOT_W / 2.0
    )
}

fn scale(v: f64, lo: f64, hi: f64, out_lo: f64, out_hi: f64) -> f64 {
    if hi > lo {
        out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo)
    } else {
        (out_lo + out_hi) / 2.0
    }
}

/// Trace plot of one series with horizontal rules at the median (red)
/// and the 2.5%/97.5% quantiles (dashed).
pub fn traceplot_svg(name: &str, values: &[f64]) -> String {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut svg = svg_open(&format!("{name} trace"));
    let mut pts = String::new();
    let n = values.len();
    // cap the polyline at ~2000 vertices for file size
    let stride = (n / 2000).max(1);
    for (i, &v) in values.iter().enumerate().step_by(stride) {
        let x = scale(i as f64, 0.0, (n - 1).max(1) as f64, MARGIN, PLOT_W - MARGIN);
        let y = scale(v, lo, hi, PLOT_H - MARGIN, MARGIN);
        pts.push_str(&format!("{x:.2},{y:.2} "));
    }
    svg.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"1\"/>\n",
        pts.trim_end()
    ));
    for (q, style) in [
        (quantile(values, 0.5), "stroke=\"red\" stroke-width=\"1.5\""),
        (quantile(values, 0.025), "stroke=\"red\" stroke-dasharray=\"4 3\""),
        (quantile(values, 0.975), "stroke=\"red\" stroke-dasharray=\"4 3\""),
    ] {
        let y = scale(q, lo, hi, PLOT_H - MARGIN, MARGIN);
        svg.push_str(&format!(
            "<line x1=\"{MARGIN}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" {style}/>\n",
            PLOT_W - MARGIN
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{MARGIN}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\">{lo:.4}</text>\n\
         <text x=\"{MARGIN}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\">{hi:.4}</text>\n",
        PLOT_H - MARGIN + 14.0,
        MARGIN - 6.0
    ));
    svg.push_str("</svg>\n");
    svg
}

/// Posterior histogram with the same quantile rules drawn vertically.
pub fn histogram_svg(name: &str, values: &[f64]) -> String {
    let (edges, counts) = histogram(values);
    let max_count = counts.iter().copied().max().unwrap_or(1).max(1) as f64;
    let lo = edges[0];
    let hi = *edges.last().unwrap();
    let mut svg = svg_open(&format!("{name} posterior"));
    for (i, &cnt) in counts.iter().enumerate() {
        let x0 = scale(edges[i], lo, hi, MARGIN, PLOT_W - MARGIN);
        let x1 = scale(edges[i + 1], lo, hi, MARGIN, PLOT_W - MARGIN);
        let h = cnt as f64 / max_count * (PLOT_H - 2.0 * MARGIN);
        svg.push_str(&format!(
            "<rect x=\"{x0:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{h:.2}\" \
             fill=\"lightsteelblue\" stroke=\"white\" stroke-width=\"0.5\"/>\n",
            PLOT_H - MARGIN - h,
            (x1 - x0).max(0.5)
        ));
    }
    for (q, style) in [
        (quantile(values, 0.5), "stroke=\"red\" stroke-width=\"1.5\""),
        (quantile(values, 0.025), "stroke=\"red\" stroke-dasharray=\"4 3\""),
        (quantile(values, 0.975), "stroke=\"red\" stroke-dasharray=\"4 3\""),
    ] {
        let x = scale(q, lo, hi, MARGIN, PLOT_W - MARGIN);
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{MARGIN}\" x2=\"{x:.2}\" y2=\"{:.2}\" {style}/>\n",
            PLOT_H - MARGIN
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Grayscale heatmap of a surface raster (white = NaN / outside).
pub fn heatmap_svg(raster: &SurfaceRaster) -> String {
    let finite: Vec<f64> = raster.values.iter().copied().filter(|v| v.is_finite()).collect();
    let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut svg = svg_open(&raster.name);
    let px = (PLOT_W - 2.0 * MARGIN) / raster.ncols as f64;
    let py = (PLOT_H - 2.0 * MARGIN) / raster.nrows as f64;
    for r in 0..raster.nrows {
        for c in 0..raster.ncols {
            let v = raster.values[r * raster.ncols + c];
            if !v.is_finite() {
                continue;
            }
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            let shade = (255.0 * (1.0 - t)).round() as u8;
            // row 0 is the southernmost row; SVG y grows downward
            let y = PLOT_H - MARGIN - (r + 1) as f64 * py;
            svg.push_str(&format!(
                "<rect x=\"{:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{:.2}\" \
                 fill=\"rgb({shade},{shade},{shade})\"/>\n",
                MARGIN + c as f64 * px,
                px + 0.1,
                py + 0.1
            ));
        }
    }
    svg.push_str(&format!(
        "<text x=\"{MARGIN}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\">\
         range [{lo:.4}, {hi:.4}]</text>\n",
        PLOT_H - 8.0
    ));
    svg.push_str("</svg>\n");
    svg
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Write the trace plot, histogram and their sibling CSVs for one
/// scalar series. Returns the created paths.
pub fn emit_series(dir: &Path, name: &str, values: &[f64]) -> Result<Vec<PathBuf>> {
    if values.is_empty() {
        return Err(Error::Config(format!("series '{name}' is empty")));
    }
    let mut out = Vec::new();

    let trace_svg = dir.join(format!("{name}_trace.svg"));
    write_file(&trace_svg, &traceplot_svg(name, values))?;
    out.push(trace_svg);

    let trace_csv = dir.join(format!("{name}_trace.csv"));
    let mut buf = String::from("index,value\n");
    for (i, v) in values.iter().enumerate() {
        buf.push_str(&format!("{},{}\n", i + 1, v));
    }
    write_file(&trace_csv, &buf)?;
    out.push(trace_csv);

    let hist_svg = dir.join(format!("{name}_hist.svg"));
    write_file(&hist_svg, &histogram_svg(name, values))?;
    out.push(hist_svg);

    let hist_csv = dir.join(format!("{name}_hist.csv"));
    let (edges, counts) = histogram(values);
    let mut buf = String::from("bin_left,bin_right,count\n");
    for (i, &c) in counts.iter().enumerate() {
        buf.push_str(&format!("{},{},{c}\n", edges[i], edges[i + 1]));
    }
    write_file(&hist_csv, &buf)?;
    out.push(hist_csv);

    Ok(out)
}

/// Write a sliding-window acceptance-rate plot plus sibling CSV.
pub fn emit_acceptance(dir: &Path, name: &str, flags: &[bool], window: usize) -> Result<Vec<PathBuf>> {
    if flags.is_empty() {
        return Err(Error::Config(format!("acceptance series '{name}' is empty")));
    }
    let series = acceptance_series(flags, window);
    let svg_path = dir.join(format!("{name}_acceptance.svg"));
    write_file(&svg_path, &traceplot_svg(&format!("{name} acceptance"), &series))?;
    let csv_path = dir.join(format!("{name}_acceptance.csv"));
    let mut buf = String::from("index,rate\n");
    for (i, v) in series.iter().enumerate() {
        buf.push_str(&format!("{},{}\n", i + 1, v));
    }
    write_file(&csv_path, &buf)?;
    Ok(vec![svg_path, csv_path])
}

/// Write a surface heatmap plus sibling CSV (x,y cell centers, value).
pub fn emit_surface(dir: &Path, raster: &SurfaceRaster) -> Result<Vec<PathBuf>> {
    let svg_path = dir.join(format!("{}.svg", raster.name));
    write_file(&svg_path, &heatmap_svg(raster))?;
    let csv_path = dir.join(format!("{}.csv", raster.name));
    let mut buf = String::from("x,y,value\n");
    for r in 0..raster.nrows {
        for c in 0..raster.ncols {
            let v = raster.values[r * raster.ncols + c];
            if v.is_finite() {
                buf.push_str(&format!(
                    "{},{},{v}\n",
                    raster.origin.x + (c as f64 + 0.5) * raster.cell,
                    raster.origin.y + (r as f64 + 0.5) * raster.cell,
                ));
            }
        }
    }
    write_file(&csv_path, &buf)?;
    Ok(vec![svg_path, csv_path])
}

/// Serialize a posterior summary as pretty JSON (stable key order via
/// the struct field order).
pub fn summary_json(summary: &PosteriorSummary) -> Result<String> {
    serde_json::to_string_pretty(summary)
        .map_err(|e| Error::Numeric(format!("summary serialization failed: {e}")))
}

/// Write the summary JSON file into `dir`.
pub fn emit_summary(dir: &Path, summary: &PosteriorSummary) -> Result<PathBuf> {
    let path = dir.join("summary.json");
    let mut f = fs::File::create(&path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    f.write_all(summary_json(summary)?.as_bytes())
        .map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::RasterCovariate;

    #[test]
    fn quantile_matches_linear_interpolation_oracle() {
        let xs = vec![3.0, 1.0, 4.0, 1.5, 9.0, 2.6, 5.3];
        // oracle: sort and interpolate by hand
        let mut s = xs.clone();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &(p, _) in &[(0.0, 0), (0.25, 0), (0.5, 0), (0.75, 0), (1.0, 0)] {
            let h = (s.len() - 1) as f64 * p;
            let lo = h.floor() as usize;
            let expect = s[lo] + (h - lo as f64) * (s[h.ceil() as usize] - s[lo]);
            assert_eq!(quantile(&xs, p), expect);
        }
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 9.0);
        assert_eq!(median(&[1.0, 2.0, 3.0, 4.0]), 2.5);
    }

    #[test]
    fn acceptance_series_prefix_and_window() {
        let flags = vec![true, false, true, true, false, false];
        let s = acceptance_series(&flags, 3);
        assert_eq!(s[0], 1.0);
        assert_eq!(s[1], 0.5);
        assert!((s[2] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s[3] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s[4] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s[5] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.len(), flags.len());
    }

    #[test]
    fn histogram_counts_sum_and_cover() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.7391).sin()).collect();
        let (edges, counts) = histogram(&xs);
        assert_eq!(edges.len(), counts.len() + 1);
        assert_eq!(counts.iter().sum::<usize>(), xs.len());
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(edges[0], lo);
        assert!((edges.last().unwrap() - hi).abs() < 1e-12);
    }

    #[test]
    fn fd_bins_degenerate_cases() {
        assert_eq!(fd_bins(&[1.0]), 1);
        assert_eq!(fd_bins(&[2.0; 50]), 1);
        assert!(fd_bins(&(0..10000).map(|i| i as f64).collect::<Vec<_>>()) <= 200);
    }

    #[test]
    fn surfaces_constant_covariates() {
        let w = Window::unit_square();
        let (a, o) = estimated_surfaces(&[1.0], &[0.5], &[], &[], &w, 0.25).unwrap();
        assert_eq!(a.ncols, 4);
        assert_eq!(a.nrows, 4);
        for v in &a.values {
            assert!((v - 1.0f64.exp()).abs() < 1e-12);
        }
        for v in &o.values {
            assert!((v - 0.5f64.exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn surfaces_use_covariate_values() {
        // covariate = x coordinate (piecewise constant on a fine grid)
        let w = Window::unit_square();
        let n = 100;
        let mut values = Vec::with_capacity(n * n);
        // store the cell's left-edge x so lookups at x = 0.25 and 0.75
        // (cell boundaries rounded down) yield exactly those values
        for _r in 0..n {
            for c in 0..n {
                values.push(c as f64 / n as f64);
            }
        }
        let cov = RasterCovariate::new("xcov", Point::new(0.0, 0.0), 0.01, n, n, values, -9999.0)
            .unwrap();
        let (a, _) = estimated_surfaces(&[0.0, 2.0], &[0.0], &[cov], &[], &w, 0.5).unwrap();
        // cells at x=0.25 and x=0.75
        let left = a.values[0];
        let right = a.values[1];
        assert!((left - (2.0 * 0.25f64).exp()).abs() < 1e-9);
        assert!((right - (2.0 * 0.75f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn emit_series_files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let values: Vec<f64> = (0..500).map(|i| (i as f64 * 0.01).cos() + 0.001 * i as f64).collect();
        let paths = emit_series(dir.path(), "kappa", &values).unwrap();
        assert_eq!(paths.len(), 4);
        for p in &paths {
            assert!(p.exists(), "{p:?} missing");
        }
        let svg = fs::read_to_string(&paths[0]).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("stroke=\"red\""));
        // sibling CSV contains exactly the plotted values
        let csv = fs::read_to_string(&paths[1]).unwrap();
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows[0], "index,value");
        assert_eq!(rows.len(), values.len() + 1);
        let back: f64 = rows[1].split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(back, values[0]);
        // histogram CSV counts sum to n
        let hist = fs::read_to_string(&paths[3]).unwrap();
        let total: usize = hist
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(total, values.len());
    }

    #[test]
    fn emit_acceptance_and_surface() {
        let dir = tempfile::tempdir().unwrap();
        let flags: Vec<bool> = (0..200).map(|i| i % 3 == 0).collect();
        let paths = emit_acceptance(dir.path(), "bdm", &flags, 50).unwrap();
        assert!(paths.iter().all(|p| p.exists()));
        let w = Window::unit_square();
        let (a, _) = estimated_surfaces(&[0.7], &[0.1], &[], &[], &w, 0.2).unwrap();
        let paths = emit_surface(dir.path(), &a).unwrap();
        assert!(paths.iter().all(|p| p.exists()));
        let csv = fs::read_to_string(&paths[1]).unwrap();
        assert!(csv.starts_with("x,y,value\n"));
        assert_eq!(csv.lines().count(), 1 + 25);
    }

    #[test]
    fn summary_json_shape() {
        let s = PosteriorSummary {
            sample_count: 3,
            parameters: vec![ParamSummary::from_samples("kappa", &[1.0, 2.0, 3.0])],
            pvalues: vec![PvalueSummary {
                covariate: "elevation".into(),
                median_pvalue: 0.04,
            }],
        };
        let json = summary_json(&s).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["parameters"][0]["parameter"], "kappa");
        assert_eq!(v["parameters"][0]["median"], 2.0);
        assert_eq!(v["parameters"][0]["q025"], 1.05);
        assert_eq!(v["pvalues"][0]["covariate"], "elevation");
        assert_eq!(v["pvalues"][0]["median_pvalue"], 0.04);
    }
}
