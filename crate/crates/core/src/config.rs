//! Run configuration: JSON files describing the data, the observation
//! window, covariate rasters, and sampler controls.
//!
//! Paths inside a config file are resolved relative to the directory
//! the config file lives in.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::covariates::{CovariateSet, RasterCovariate};
use crate::error::{Error, Result};
use crate::geometry::{Point, Rect, Window};
use crate::gtp::GtpControl;
use crate::mcmc::Control;

/// Observation window as parallel arrays of rectangle edges, plus the
/// dilation distance for the latent-center domain.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub x_left: Vec<f64>,
    pub x_right: Vec<f64>,
    pub y_bottom: Vec<f64>,
    pub y_top: Vec<f64>,
    pub dilation: f64,
}

impl WindowSpec {
    pub fn to_window(&self) -> Result<Window> {
        let n = self.x_left.len();
        if n == 0 {
            return Err(Error::Config("window spec has no rectangles".into()));
        }
        if self.x_right.len() != n || self.y_bottom.len() != n || self.y_top.len() != n {
            return Err(Error::Config(format!(
                "window spec arrays have mismatched lengths: x_left {n}, x_right {}, y_bottom {}, y_top {}",
                self.x_right.len(),
                self.y_bottom.len(),
                self.y_top.len()
            )));
        }
        if self.dilation < 0.0 {
            return Err(Error::Config("window dilation must be >= 0".into()));
        }
        let mut rects = Vec::with_capacity(n);
        for i in 0..n {
            rects.push(Rect::new(
                self.x_left[i],
                self.x_right[i],
                self.y_bottom[i],
                self.y_top[i],
            )?);
        }
        Window::new(rects)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: format!("invalid window spec: {e}"),
        })
    }
}

/// Either an inline window spec or a path to a window spec file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WindowRef {
    Inline(WindowSpec),
    File(String),
}

/// One covariate raster: a name and an ESRI ASCII grid file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateEntry {
    pub name: String,
    pub path: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariatesConfig {
    /// Center-intensity covariates (log-linear, no intercept).
    #[serde(default)]
    pub beta: Vec<CovariateEntry>,
    /// Cluster-size covariates (log-linear with intercept).
    #[serde(default)]
    pub alpha: Vec<CovariateEntry>,
    /// Cluster-spread covariates (log-linear with intercept).
    #[serde(default)]
    pub omega: Vec<CovariateEntry>,
}

/// MCMC control overrides for the inhomogeneous Thomas fit; anything
/// left out falls back to data-driven defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(rename = "NStep", skip_serializing_if = "Option::is_none")]
    pub n_step: Option<usize>,
    #[serde(rename = "BurnIn", skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(rename = "SamplingFreq", skip_serializing_if = "Option::is_none")]
    pub sampling_freq: Option<usize>,
    #[serde(rename = "Prior_alpha_mean", skip_serializing_if = "Option::is_none")]
    pub prior_alpha_mean: Option<f64>,
    #[serde(rename = "Prior_alpha_SD", skip_serializing_if = "Option::is_none")]
    pub prior_alpha_sd: Option<f64>,
    #[serde(rename = "Prior_omega_mean", skip_serializing_if = "Option::is_none")]
    pub prior_omega_mean: Option<f64>,
    #[serde(rename = "Prior_omega_SD", skip_serializing_if = "Option::is_none")]
    pub prior_omega_sd: Option<f64>,
    #[serde(rename = "Prior_alphavec_SD", skip_serializing_if = "Option::is_none")]
    pub prior_alphavec_sd: Option<Vec<f64>>,
    #[serde(rename = "Prior_omegavec_SD", skip_serializing_if = "Option::is_none")]
    pub prior_omegavec_sd: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proposal_mu_sd: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proposal_nu_sd: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center_move_sd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub integration_cell: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pvalue_cell: Option<f64>,
}

impl ControlConfig {
    /// Defaults for the data at hand, overridden by whatever the config
    /// file pins down.
    pub fn resolve(&self, n_points: usize, w: &Window, l: usize, m: usize, seed: u64) -> Result<Control> {
        let mut c = Control::defaults(n_points, w, l, m);
        if let Some(v) = self.n_step {
            c.n_step = v;
        }
        if let Some(v) = self.burn_in {
            c.burn_in = v;
        }
        if let Some(v) = self.sampling_freq {
            c.sampling_freq = v;
        }
        if let Some(v) = self.prior_alpha_mean {
            c.prior_alpha_mean = v;
        }
        if let Some(v) = self.prior_alpha_sd {
            c.prior_alpha_sd = v;
        }
        if let Some(v) = self.prior_omega_mean {
            c.prior_omega_mean = v;
        }
        if let Some(v) = self.prior_omega_sd {
            c.prior_omega_sd = v;
        }
        if let Some(v) = &self.prior_alphavec_sd {
            c.prior_alphavec_sd = v.clone();
        }
        if let Some(v) = &self.prior_omegavec_sd {
            c.prior_omegavec_sd = v.clone();
        }
        if let Some(v) = &self.proposal_mu_sd {
            c.proposal_mu_sd = v.clone();
        }
        if let Some(v) = &self.proposal_nu_sd {
            c.proposal_nu_sd = v.clone();
        }
        if let Some(v) = self.center_move_sd {
            c.center_move_sd = v;
        }
        if let Some(v) = self.integration_cell {
            c.integration_cell = v;
        }
        if let Some(v) = self.pvalue_cell {
            c.pvalue_cell = v;
        }
        c.seed = seed;
        c.validate(l, m)?;
        Ok(c)
    }
}

/// GTP sampler control overrides; defaults follow the worked example.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtpControlConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub somega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dlambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stheta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smove: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discard: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub connection_updates: Option<usize>,
}

impl GtpControlConfig {
    pub fn resolve(&self, seed: u64) -> Result<GtpControl> {
        let mut c = GtpControl::defaults();
        if let Some(v) = self.a_kappa {
            c.a_kappa = v;
        }
        if let Some(v) = self.b_kappa {
            c.b_kappa = v;
        }
        if let Some(v) = self.a_omega {
            c.a_omega = v;
        }
        if let Some(v) = self.b_omega {
            c.b_omega = v;
        }
        if let Some(v) = self.l_lambda {
            c.l_lambda = v;
        }
        if let Some(v) = self.u_lambda {
            c.u_lambda = v;
        }
        if let Some(v) = self.a_theta {
            c.a_theta = v;
        }
        if let Some(v) = self.b_theta {
            c.b_theta = v;
        }
        // proposal scales default to prior-mean / 100 under the
        // resolved priors, then explicit values win
        c.skappa = (c.a_kappa + c.b_kappa * c.b_kappa / 2.0).exp() / 100.0;
        c.somega = (c.a_omega + c.b_omega * c.b_omega / 2.0).exp() / 100.0;
        c.stheta = (c.a_theta + c.b_theta * c.b_theta / 2.0).exp() / 100.0;
        if let Some(v) = self.skappa {
            c.skappa = v;
        }
        if let Some(v) = self.somega {
            c.somega = v;
        }
        if let Some(v) = self.dlambda {
            c.dlambda = v;
        }
        if let Some(v) = self.stheta {
            c.stheta = v;
        }
        if let Some(v) = self.smove {
            c.smove = v;
        }
        if let Some(v) = self.iter {
            c.iter = v;
        }
        if let Some(v) = self.discard {
            c.discard = v;
        }
        if let Some(v) = self.step {
            c.step = v;
        }
        if let Some(v) = self.connection_updates {
            c.connection_updates = v;
        }
        c.seed = seed;
        c.validate()?;
        Ok(c)
    }
}

/// Ground-truth Thomas parameters for the `simulate` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub kappa: f64,
    #[serde(default)]
    pub beta: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
}

/// Ground-truth GTP parameters for the `simulate-gtp` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtpModelConfig {
    pub kappa: f64,
    pub omega: f64,
    pub lambda: f64,
    pub theta: f64,
}

/// Top-level run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub window: WindowRef,
    /// Path to the observed pattern CSV (`x,y` header). Required by the
    /// fit commands.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(default)]
    pub covariates: CovariatesConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub gtp_control: GtpControlConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gtp_model: Option<GtpModelConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Directory paths are resolved against; set on load.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: format!("invalid run config: {e}"),
        })?;
        cfg.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(cfg)
    }

    pub fn resolve_path(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn window_spec(&self) -> Result<WindowSpec> {
        match &self.window {
            WindowRef::Inline(s) => Ok(s.clone()),
            WindowRef::File(p) => WindowSpec::read(&self.resolve_path(p)),
        }
    }

    pub fn load_covariates(&self) -> Result<CovariateSet> {
        let load = |entries: &[CovariateEntry]| -> Result<Vec<RasterCovariate>> {
            entries
                .iter()
                .map(|e| RasterCovariate::read_esri_ascii(e.name.clone(), &self.resolve_path(&e.path)))
                .collect()
        };
        CovariateSet::new(
            load(&self.covariates.beta)?,
            load(&self.covariates.alpha)?,
            load(&self.covariates.omega)?,
        )
    }
}

/// Read a point pattern from a CSV file with an `x,y` header.
pub fn read_pattern_csv(path: &Path) -> Result<Vec<Point>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "x,y" => {}
        Some((_, h)) => {
            return Err(Error::Parse {
                path: path.display().to_string(),
                message: format!("expected header 'x,y', found '{}'", h.trim()),
            })
        }
        None => {
            return Err(Error::Parse {
                path: path.display().to_string(),
                message: "file is empty".into(),
            })
        }
    }
    let mut points = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let parse = |s: Option<&str>| -> Result<f64> {
            s.ok_or(())
                .and_then(|t| t.trim().parse::<f64>().map_err(|_| ()))
                .map_err(|_| Error::Parse {
                    path: path.display().to_string(),
                    message: format!("line {}: expected two numeric fields, found '{line}'", i + 1),
                })
        };
        let x = parse(parts.next())?;
        let y = parse(parts.next())?;
        if parts.next().is_some() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                message: format!("line {}: expected two fields, found more", i + 1),
            });
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                message: format!("line {}: non-finite coordinate", i + 1),
            });
        }
        points.push(Point::new(x, y));
    }
    Ok(points)
}

/// Write a point pattern as a CSV file with an `x,y` header. Floats are
/// printed shortest-round-trip, so reading the file back is lossless.
pub fn write_pattern_csv(path: &Path, points: &[Point]) -> Result<()> {
    let mut buf = String::from("x,y\n");
    for p in points {
        buf.push_str(&format!("{},{}\n", p.x, p.y));
    }
    fs::write(path, buf).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}
