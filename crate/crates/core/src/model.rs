//! Model components: log-linear inhomogeneity functions, the Gaussian
//! dispersal kernel, the generalized Poisson cluster-size distribution,
//! and forward simulators for both process families.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use statrs::function::gamma::ln_gamma;

use crate::covariates::{CovariateSet, RasterCovariate};
use crate::error::{Error, Result};
use crate::geometry::{DilatedWindow, Point, QuadratureGrid, Rect, Window};

/// Parameters of the (possibly triply inhomogeneous) Thomas process.
/// `beta` has no intercept (its role is taken by `kappa`); `mu` and
/// `nu` carry their intercepts first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThomasParams {
    pub kappa: f64,
    pub beta: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
}

impl ThomasParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::Config("kappa must be finite and > 0".into()));
        }
        if self.mu.is_empty() || self.nu.is_empty() {
            return Err(Error::Config("mu and nu must include their intercepts".into()));
        }
        for v in self.beta.iter().chain(&self.mu).chain(&self.nu) {
            if !v.is_finite() {
                return Err(Error::Config("non-finite model coefficient".into()));
            }
        }
        Ok(())
    }

    /// Homogeneous special case (k = l = m = 0).
    pub fn homogeneous(kappa: f64, alpha: f64, omega: f64) -> Self {
        ThomasParams {
            kappa,
            beta: vec![],
            mu: vec![alpha.ln()],
            nu: vec![omega.ln()],
        }
    }
}

/// Generalized Poisson distribution parameters. `lambda = 0` is
/// Poisson(theta); `lambda > 0` over-dispersed, `lambda < 0`
/// under-dispersed with support truncated where `theta + lambda n <= 0`
/// and the pmf renormalized over the truncated support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdParams {
    pub lambda: f64,
    pub theta: f64,
}

impl GpdParams {
    pub fn new(lambda: f64, theta: f64) -> Result<Self> {
        if !(theta > 0.0) || !(-1.0..1.0).contains(&lambda) {
            return Err(Error::Config(format!(
                "GPD requires theta > 0 and lambda in [-1, 1); got lambda={lambda}, theta={theta}"
            )));
        }
        Ok(GpdParams { lambda, theta })
    }

    /// Largest supported count: `None` means unbounded (lambda >= 0).
    pub fn truncation_bound(&self) -> Option<u64> {
        if self.lambda >= 0.0 {
            return None;
        }
        // largest n with theta + lambda n > 0
        let bound = -self.theta / self.lambda;
        let m = bound.ceil() as i64 - 1;
        let m = if (bound - bound.floor()).abs() < 1e-300 {
            // exact integer boundary is excluded by the strict inequality
            bound as i64 - 1
        } else {
            m
        };
        Some(m.max(0) as u64)
    }

    /// Unnormalized log pmf: `-inf` outside the (possibly truncated)
    /// support. Public because ratios in which the normalizer cancels
    /// (e.g. reallocating a point between clusters at fixed parameters)
    /// can skip the normalization sum.
    pub fn log_pmf_raw(&self, n: u64) -> f64 {
        let (lambda, theta) = (self.lambda, self.theta);
        if let Some(m) = self.truncation_bound() {
            if n > m {
                return f64::NEG_INFINITY;
            }
        }
        let nf = n as f64;
        let rate = theta + lambda * nf;
        if rate <= 0.0 {
            return f64::NEG_INFINITY;
        }
        theta.ln() + (nf - 1.0) * rate.ln() - theta - lambda * nf - ln_gamma(nf + 1.0)
    }

    /// Log of the truncated-support normalization constant (0 for
    /// lambda >= 0, where the pmf already sums to 1). Kept explicit
    /// because it enters Metropolis-Hastings ratios when lambda or
    /// theta is updated. The sum stops once the remaining tail is
    /// negligible, so a truncation bound far beyond the mean (lambda
    /// just below 0) costs only O(mean) work.
    pub fn log_normalizer(&self) -> f64 {
        match self.truncation_bound() {
            None => 0.0,
            Some(m) => {
                let mode = self.theta / (1.0 - self.lambda);
                let mut z = 0.0;
                for n in 0..=m {
                    let term = self.log_pmf_raw(n).exp();
                    z += term;
                    if n as f64 > mode && term < z * 1e-17 {
                        break;
                    }
                }
                z.ln()
            }
        }
    }

    pub fn log_pmf(&self, n: u64) -> f64 {
        self.log_pmf_raw(n) - self.log_normalizer()
    }

    pub fn pmf(&self, n: u64) -> f64 {
        self.log_pmf(n).exp()
    }

    /// Closed-form mean `theta / (1 - lambda)`.
    pub fn mean(&self) -> f64 {
        self.theta / (1.0 - self.lambda)
    }

    /// Closed-form variance `theta / (1 - lambda)^3`.
    pub fn variance(&self) -> f64 {
        self.theta / (1.0 - self.lambda).powi(3)
    }

    /// Draw by inversion on the cumulative pmf; the scan stops once the
    /// cumulative mass exceeds 1 - 1e-12.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.gen_range(0.0..1.0);
        let log_z = self.log_normalizer();
        let mut cum = 0.0;
        let mut n = 0u64;
        loop {
            cum += (self.log_pmf_raw(n) - log_z).exp();
            if u < cum || cum >= 1.0 - 1e-12 {
                return n;
            }
            if let Some(m) = self.truncation_bound() {
                if n >= m {
                    return m;
                }
            }
            n += 1;
        }
    }
}

/// Parameters of the homogeneous generalized Thomas process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtpParams {
    pub kappa: f64,
    pub omega: f64,
    #[serde(flatten)]
    pub gpd: GpdParams,
}

impl GtpParams {
    pub fn new(kappa: f64, omega: f64, lambda: f64, theta: f64) -> Result<Self> {
        if !(kappa > 0.0) || !(omega > 0.0) {
            return Err(Error::Config("GTP requires kappa > 0 and omega > 0".into()));
        }
        Ok(GtpParams {
            kappa,
            omega,
            gpd: GpdParams::new(lambda, theta)?,
        })
    }
}

/// Simulator output: observed points inside W plus the ground truth.
#[derive(Debug, Clone)]
pub struct SimulatedPattern {
    pub points: Vec<Point>,
    pub parents: Vec<Point>,
    /// Parent index for each observed point.
    pub parent_index: Vec<usize>,
    /// Total offspring per parent, including those that fell outside W.
    pub offspring_counts: Vec<u64>,
}

/// Center-inhomogeneity factor `f(beta, u) = exp(sum beta_i z_i(u))`,
/// with no intercept; `1` when there are no covariates.
pub fn f_centers(beta: &[f64], covs: &[RasterCovariate], u: &Point) -> Result<f64> {
    debug_assert_eq!(beta.len(), covs.len());
    let mut e = 0.0;
    for (b, c) in beta.iter().zip(covs) {
        e += b * c.value_at(u)?;
    }
    Ok(e.exp())
}

fn exp_linear_with_intercept(coeffs: &[f64], covs: &[RasterCovariate], p: &Point) -> Result<f64> {
    debug_assert_eq!(coeffs.len(), covs.len() + 1);
    let mut e = coeffs[0];
    for (b, c) in coeffs[1..].iter().zip(covs) {
        e += b * c.value_at(p)?;
    }
    Ok(e.exp())
}

/// Expected cluster size at center `c`.
pub fn alpha_at(mu: &[f64], covs: &[RasterCovariate], c: &Point) -> Result<f64> {
    exp_linear_with_intercept(mu, covs, c)
}

/// Cluster spread at center `c`.
pub fn omega_at(nu: &[f64], covs: &[RasterCovariate], c: &Point) -> Result<f64> {
    exp_linear_with_intercept(nu, covs, c)
}

/// Radially symmetric Gaussian density at displacement `d`.
pub fn gauss_kernel(dx: f64, dy: f64, omega: f64) -> f64 {
    let s2 = omega * omega;
    (-(dx * dx + dy * dy) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2)
}

pub fn log_gauss_kernel(dx: f64, dy: f64, omega: f64) -> f64 {
    let s2 = omega * omega;
    -(dx * dx + dy * dy) / (2.0 * s2) - (2.0 * std::f64::consts::PI * s2).ln()
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Exact Gaussian mass of an axis-aligned rectangle: product of 1-D
/// CDF differences.
pub fn gauss_rect_mass(c: &Point, omega: f64, rect: &Rect) -> f64 {
    let px = std_normal_cdf((rect.x_right - c.x) / omega) - std_normal_cdf((rect.x_left - c.x) / omega);
    let py = std_normal_cdf((rect.y_top - c.y) / omega) - std_normal_cdf((rect.y_bottom - c.y) / omega);
    px * py
}

/// Gaussian mass of a window, overlaps counted once via a disjoint
/// rectangle cover.
pub fn gauss_window_mass(c: &Point, omega: f64, disjoint_rects: &[Rect]) -> f64 {
    disjoint_rects
        .iter()
        .map(|r| gauss_rect_mass(c, omega, r))
        .sum()
}

/// `kappa = EM / int_W alpha(mu, u) f(beta, u) du`, the deterministic
/// recomputation used after every accepted `mu` update.
pub fn kappa_from_count(
    expected_count: f64,
    mu: &[f64],
    z_alpha: &[RasterCovariate],
    beta: &[f64],
    z_beta: &[RasterCovariate],
    grid: &QuadratureGrid,
) -> Result<f64> {
    let mut integral = 0.0;
    for (node, &w) in grid.nodes.iter().zip(&grid.weights) {
        integral += w * alpha_at(mu, z_alpha, node)? * f_centers(beta, z_beta, node)?;
    }
    if !integral.is_finite() || integral <= 0.0 {
        return Err(Error::Numeric(format!(
            "alpha*f integral over W is {integral}; cannot recompute kappa"
        )));
    }
    Ok(expected_count / integral)
}

/// Upper bound for `kappa * f(beta, u)` over the covariate rasters,
/// used for exact thinning. Covariates are piecewise constant, so
/// bounding each term by its cell-wise extreme is exact.
fn intensity_bound(kappa: f64, beta: &[f64], covs: &[RasterCovariate]) -> Result<f64> {
    let mut log_bound = kappa.ln();
    for (b, c) in beta.iter().zip(covs) {
        let ext = c
            .values
            .iter()
            .filter(|&&v| v != c.nodata)
            .fold(f64::NEG_INFINITY, |acc, &v| acc.max(b * v));
        log_bound += ext;
    }
    let bound = log_bound.exp();
    if !bound.is_finite() {
        return Err(Error::Numeric("center intensity bound is not finite".into()));
    }
    Ok(bound)
}

/// Two-stage simulation of the inhomogeneous Thomas process: parents by
/// thinning an upper-bound homogeneous Poisson process on `W_dil`,
/// then Poisson(alpha(c)) offspring with Gaussian(omega(c)) spread.
pub fn simulate_thomas<R: Rng>(
    params: &ThomasParams,
    covs: &CovariateSet,
    w: &Window,
    w_dil: &DilatedWindow,
    rng: &mut R,
) -> Result<SimulatedPattern> {
    params.validate()?;
    if params.beta.len() != covs.z_beta.len()
        || params.mu.len() != covs.z_alpha.len() + 1
        || params.nu.len() != covs.z_omega.len() + 1
    {
        return Err(Error::Config("parameter lengths do not match covariate lists".into()));
    }
    let bound = intensity_bound(params.kappa, &params.beta, &covs.z_beta)?;
    let area = w_dil.area();
    let n_prop = Poisson::new(bound * area)
        .map_err(|e| Error::Numeric(format!("parent count: {e}")))?
        .sample(rng) as usize;
    let proposals = w_dil.sample_uniform(n_prop, rng);
    let mut parents = Vec::new();
    for p in proposals {
        let lam = params.kappa * f_centers(&params.beta, &covs.z_beta, &p)?;
        if rng.gen_range(0.0..1.0) < lam / bound {
            parents.push(p);
        }
    }

    let mut points = Vec::new();
    let mut parent_index = Vec::new();
    let mut offspring_counts = Vec::with_capacity(parents.len());
    for (j, c) in parents.iter().enumerate() {
        let alpha = alpha_at(&params.mu, &covs.z_alpha, c)?;
        let omega = omega_at(&params.nu, &covs.z_omega, c)?;
        let n_off = if alpha > 0.0 {
            Poisson::new(alpha)
                .map_err(|e| Error::Numeric(format!("offspring count: {e}")))?
                .sample(rng) as u64
        } else {
            0
        };
        offspring_counts.push(n_off);
        for _ in 0..n_off {
            let dx: f64 = StandardNormal.sample(rng);
            let dy: f64 = StandardNormal.sample(rng);
            let p = Point::new(c.x + omega * dx, c.y + omega * dy);
            if w.contains(&p) {
                points.push(p);
                parent_index.push(j);
            }
        }
    }
    Ok(SimulatedPattern {
        points,
        parents,
        parent_index,
        offspring_counts,
    })
}

/// Dilation radius used by the GTP simulator: parents further than
/// this from W contribute a negligible share of offspring mass.
pub fn gtp_dilation_radius(omega: f64) -> f64 {
    4.0 * omega
}

/// Simulate the homogeneous generalized Thomas process on `w`.
/// Parents are a homogeneous Poisson process on the exact disc
/// dilation of `w` by `4 omega`; cluster sizes follow the GPD.
pub fn rgtp<R: Rng>(params: &GtpParams, w: &Window, rng: &mut R) -> Result<SimulatedPattern> {
    let r = gtp_dilation_radius(params.omega);
    let b = w.bbox();
    let bx = Rect {
        x_left: b.x_left - r,
        x_right: b.x_right + r,
        y_bottom: b.y_bottom - r,
        y_top: b.y_top + r,
    };
    // homogeneous parents on the dilation: Poisson on the enlarged box,
    // thinned by exact distance membership
    let n_box = Poisson::new(params.kappa * bx.area())
        .map_err(|e| Error::Numeric(format!("parent count: {e}")))?
        .sample(rng) as usize;
    let mut parents = Vec::new();
    for _ in 0..n_box {
        let p = Point::new(
            rng.gen_range(bx.x_left..bx.x_right),
            rng.gen_range(bx.y_bottom..bx.y_top),
        );
        if w.distance(&p) <= r {
            parents.push(p);
        }
    }

    let mut points = Vec::new();
    let mut parent_index = Vec::new();
    let mut offspring_counts = Vec::with_capacity(parents.len());
    for (j, c) in parents.iter().enumerate() {
        let n_off = params.gpd.sample(rng);
        offspring_counts.push(n_off);
        for _ in 0..n_off {
            let dx: f64 = StandardNormal.sample(rng);
            let dy: f64 = StandardNormal.sample(rng);
            let p = Point::new(c.x + params.omega * dx, c.y + params.omega * dy);
            if w.contains(&p) {
                points.push(p);
                parent_index.push(j);
            }
        }
    }
    Ok(SimulatedPattern {
        points,
        parents,
        parent_index,
        offspring_counts,
    })
}
