//! Step-1 estimation: Poisson maximum likelihood for the first-order
//! intensity coefficients, plus the per-iteration Poisson regression on
//! cluster centers that yields covariate p-values.

use nalgebra::{DMatrix, DVector};

use crate::covariates::{design_vector, RasterCovariate};
use crate::error::{Error, Result};
use crate::geometry::{Point, QuadratureGrid};
use crate::model::std_normal_cdf;
use crate::par;

const GRAD_TOL: f64 = 1e-8;
const DECREMENT_TOL: f64 = 1e-10;
const MAX_ITER: usize = 100;
const COND_LIMIT: f64 = 1e10;

/// Result of a Poisson intensity fit. `coeffs[0]` is the intercept
/// (log of the baseline intensity).
#[derive(Debug, Clone)]
pub struct PoissonFit {
    pub coeffs: Vec<f64>,
    /// Inverse observed information at the optimum.
    pub covariance: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub log_lik: f64,
}

impl PoissonFit {
    /// Slope coefficients, intercept excluded.
    pub fn slopes(&self) -> &[f64] {
        &self.coeffs[1..]
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.coeffs.len())
            .map(|i| self.covariance[(i, i)].sqrt())
            .collect()
    }
}

/// Design matrices evaluated once: rows for data points and grid nodes.
struct DesignCache {
    data: Vec<Vec<f64>>,
    nodes: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DesignCache {
    fn build(points: &[Point], covs: &[RasterCovariate], grid: &QuadratureGrid) -> Result<Self> {
        let data = points
            .iter()
            .map(|p| design_vector(covs, p, true))
            .collect::<Result<Vec<_>>>()?;
        let nodes = grid
            .nodes
            .iter()
            .map(|p| design_vector(covs, p, true))
            .collect::<Result<Vec<_>>>()?;
        Ok(DesignCache {
            data,
            nodes,
            weights: grid.weights.clone(),
        })
    }

    fn dim(&self) -> usize {
        self.nodes[0].len()
    }

    fn loglik(&self, coeffs: &[f64]) -> f64 {
        let data_term = par::map_sum(&self.data, |z| dot(z, coeffs));
        let integral = par::map_sum_seq(
            &self.nodes.iter().zip(&self.weights).collect::<Vec<_>>(),
            |(z, &w)| w * dot(z, coeffs).exp(),
        );
        data_term - integral
    }

    fn grad_hessian(&self, coeffs: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim();
        let mut grad = DVector::zeros(d);
        for z in &self.data {
            for i in 0..d {
                grad[i] += z[i];
            }
        }
        let mut hess = DMatrix::zeros(d, d);
        for (z, &w) in self.nodes.iter().zip(&self.weights) {
            let e = w * dot(z, coeffs).exp();
            for i in 0..d {
                grad[i] -= e * z[i];
                for j in 0..=i {
                    hess[(i, j)] -= e * z[i] * z[j];
                }
            }
        }
        for i in 0..d {
            for j in i + 1..d {
                hess[(i, j)] = hess[(j, i)];
            }
        }
        (grad, hess)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Poisson log-likelihood `sum_x z(x).b - int_W exp(z(u).b) du` with the
/// integral by quadrature.
pub fn poisson_loglik(
    coeffs: &[f64],
    points: &[Point],
    covs: &[RasterCovariate],
    grid: &QuadratureGrid,
) -> Result<f64> {
    if coeffs.len() != covs.len() + 1 {
        return Err(Error::Config(format!(
            "expected {} coefficients (intercept + covariates), got {}",
            covs.len() + 1,
            coeffs.len()
        )));
    }
    let cache = DesignCache::build(points, covs, grid)?;
    Ok(cache.loglik(coeffs))
}

/// Newton-Raphson maximization of the Poisson log-likelihood with
/// step-halving. Initialization: intercept = log(n/|W|), slopes zero.
pub fn fit_poisson_intensity(
    points: &[Point],
    covs: &[RasterCovariate],
    grid: &QuadratureGrid,
) -> Result<PoissonFit> {
    if points.is_empty() {
        return Err(Error::Config("cannot fit an intensity to an empty pattern".into()));
    }
    let cache = DesignCache::build(points, covs, grid)?;
    let d = cache.dim();
    let area = cache.weights.iter().sum::<f64>();
    let mut coeffs = vec![0.0; d];
    coeffs[0] = (points.len() as f64 / area).ln();
    let mut ll = cache.loglik(&coeffs);

    for iter in 1..=MAX_ITER {
        let (grad, hess) = cache.grad_hessian(&coeffs);
        let grad_norm = grad.amax();
        let info = -hess.clone();
        let step = info
            .clone()
            .lu()
            .solve(&grad)
            .ok_or_else(|| Error::Collinear {
                cond: f64::INFINITY,
            })?;
        // Newton decrement: the achievable log-likelihood gain is about
        // half of grad . step. The gradient itself sums O(n) terms and
        // has a floating-point noise floor that scales with n, so it is
        // not a usable absolute stopping criterion.
        let decrement = grad.dot(&step).abs();
        if grad_norm < GRAD_TOL || decrement < DECREMENT_TOL * (1.0 + ll.abs()) {
            return finish(&cache, coeffs, ll, true, iter);
        }
        // step-halving line search on the log-likelihood
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand: Vec<f64> = coeffs
                .iter()
                .enumerate()
                .map(|(i, c)| c + scale * step[i])
                .collect();
            let cand_ll = cache.loglik(&cand);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-13 {
                coeffs = cand;
                ll = cand_ll;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            // the line search stalls when the achievable gain is below
            // the likelihood's own noise floor: that is the optimum
            if decrement < 1e-6 * (1.0 + ll.abs()) {
                return finish(&cache, coeffs, ll, true, iter);
            }
            return Err(Error::NonConvergence {
                iterations: iter,
                grad_norm,
                last_coeffs: coeffs,
            });
        }
    }
    let (grad, _) = cache.grad_hessian(&coeffs);
    Err(Error::NonConvergence {
        iterations: MAX_ITER,
        grad_norm: grad.amax(),
        last_coeffs: coeffs,
    })
}

fn finish(
    cache: &DesignCache,
    coeffs: Vec<f64>,
    log_lik: f64,
    converged: bool,
    iterations: usize,
) -> Result<PoissonFit> {
    let (_, hess) = cache.grad_hessian(&coeffs);
    let info = -hess;
    let svd = info.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if cond > COND_LIMIT {
        return Err(Error::Collinear { cond });
    }
    let covariance = info
        .try_inverse()
        .ok_or(Error::Collinear { cond })?;
    Ok(PoissonFit {
        coeffs,
        covariance,
        converged,
        iterations,
        log_lik,
    })
}

/// Fit the centers as a Poisson process over the dilated window and
/// return two-sided Wald p-values, one per covariate (intercept
/// excluded).
pub fn covariate_pvalues(
    centers: &[Point],
    z_beta: &[RasterCovariate],
    grid_dil: &QuadratureGrid,
) -> Result<Vec<f64>> {
    if centers.is_empty() {
        return Err(Error::Config("cannot test covariates with no centers".into()));
    }
    let fit = fit_poisson_intensity(centers, z_beta, grid_dil)?;
    let se = fit.standard_errors();
    Ok(fit
        .coeffs
        .iter()
        .zip(&se)
        .skip(1)
        .map(|(&c, &s)| 2.0 * (1.0 - std_normal_cdf((c / s).abs())))
        .collect())
}
