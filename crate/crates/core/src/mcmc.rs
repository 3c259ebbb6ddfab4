//! Step-2 Bayesian MCMC for the inhomogeneous Thomas process:
//! birth-death-move over latent cluster centers, Metropolis-Hastings
//! blocks for the cluster-size and cluster-spread coefficients, and
//! deterministic recomputation of the center intensity scale.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::covariates::{design_vector, CovariateSet};
use crate::error::{Error, Result};
use crate::firstorder::{covariate_pvalues, PoissonFit};
use crate::geometry::{make_grid, DilatedWindow, Point, QuadratureGrid, Rect, Region, Window};
use crate::model::{alpha_at, gauss_window_mass, log_gauss_kernel, omega_at, f_centers};
use crate::par;
use crate::rng::derive_rng;

/// Tuning constants and prior hyperparameters for one chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Control {
    pub n_step: usize,
    pub burn_in: usize,
    pub sampling_freq: usize,
    /// Prior mean/sd for the cluster-size intercept, log scale.
    pub prior_alpha_mean: f64,
    pub prior_alpha_sd: f64,
    /// Prior mean/sd for the cluster-spread intercept, log scale.
    pub prior_omega_mean: f64,
    pub prior_omega_sd: f64,
    /// Zero-mean normal prior SDs for the non-intercept mu components.
    pub prior_alphavec_sd: Vec<f64>,
    /// Zero-mean normal prior SDs for the non-intercept nu components.
    pub prior_omegavec_sd: Vec<f64>,
    /// Random-walk proposal SDs, one per mu / nu component.
    pub proposal_mu_sd: Vec<f64>,
    pub proposal_nu_sd: Vec<f64>,
    /// Gaussian perturbation scale for center moves.
    pub center_move_sd: f64,
    pub seed: u64,
    /// Quadrature cell for the kappa recomputation integral over W.
    pub integration_cell: f64,
    /// Quadrature cell for the per-iteration center regressions.
    pub pvalue_cell: f64,
    /// Test harness only: scales the likelihood and center-prior terms
    /// in every acceptance ratio. 1 for real inference; 0 turns the
    /// target into the parameter priors alone.
    #[serde(default = "default_scale")]
    pub target_scale: f64,
}

fn default_scale() -> f64 {
    1.0
}

impl Control {
    /// Weakly informative, scale-aware defaults: the paper's interface
    /// fills unspecified hyperparameters with defaults and echoes them
    /// back; these are ours.
    pub fn defaults(n_points: usize, w: &Window, l: usize, m: usize) -> Self {
        let prior_alpha_mean = (n_points.max(1) as f64).sqrt().ln();
        let prior_alpha_sd = 2.0;
        let prior_omega_mean = (0.05 * w.shorter_side()).ln();
        let prior_omega_sd = 5.0;
        let prior_alphavec_sd = vec![2.0; l];
        let prior_omegavec_sd = vec![2.0; m];
        let mut proposal_mu_sd = vec![0.1 * prior_alpha_sd];
        proposal_mu_sd.extend(prior_alphavec_sd.iter().map(|s| 0.1 * s));
        let mut proposal_nu_sd = vec![0.1 * prior_omega_sd];
        proposal_nu_sd.extend(prior_omegavec_sd.iter().map(|s| 0.1 * s));
        Control {
            n_step: 50_000,
            burn_in: 25_000,
            sampling_freq: 10,
            prior_alpha_mean,
            prior_alpha_sd,
            prior_omega_mean,
            prior_omega_sd,
            prior_alphavec_sd,
            prior_omegavec_sd,
            proposal_mu_sd,
            proposal_nu_sd,
            center_move_sd: 2.0 * (0.05 * w.shorter_side()),
            seed: 0,
            integration_cell: w.shorter_side() / 64.0,
            pvalue_cell: w.shorter_side() / 50.0,
            target_scale: 1.0,
        }
    }

    pub fn validate(&self, l: usize, m: usize) -> Result<()> {
        if self.burn_in >= self.n_step {
            return Err(Error::Config(format!(
                "BurnIn ({}) must be < NStep ({})",
                self.burn_in, self.n_step
            )));
        }
        if self.sampling_freq == 0 {
            return Err(Error::Config("SamplingFreq must be >= 1".into()));
        }
        if self.prior_alphavec_sd.len() != l || self.prior_omegavec_sd.len() != m {
            return Err(Error::Config(format!(
                "prior SD vectors must match covariate counts (alpha: {} vs {l}, omega: {} vs {m})",
                self.prior_alphavec_sd.len(),
                self.prior_omegavec_sd.len()
            )));
        }
        if self.proposal_mu_sd.len() != l + 1 || self.proposal_nu_sd.len() != m + 1 {
            return Err(Error::Config("proposal SD vectors must include the intercepts".into()));
        }
        let all_pos = self
            .prior_alphavec_sd
            .iter()
            .chain(&self.prior_omegavec_sd)
            .chain(&self.proposal_mu_sd)
            .chain(&self.proposal_nu_sd)
            .chain([&self.prior_alpha_sd, &self.prior_omega_sd, &self.center_move_sd])
            .all(|&s| s > 0.0);
        if !all_pos {
            return Err(Error::Config("all prior and proposal SDs must be > 0".into()));
        }
        Ok(())
    }
}

/// Latent state of the chain. `kappa` is never sampled: it is the
/// deterministic function of `mu` (and the step-1 coefficients) that
/// matches the expected point count.
#[derive(Debug, Clone, Serialize)]
pub struct ChainState {
    pub centers: Vec<Point>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub kappa: f64,
    pub alpha_c: Vec<f64>,
    pub omega_c: Vec<f64>,
    pub mass_c: Vec<f64>,
    pub f_c: Vec<f64>,
    pub loglik: f64,
}

/// Per-sweep series plus the recorded subset used for summaries.
#[derive(Debug, Clone)]
pub struct ChainTrace {
    pub n_step: usize,
    pub burn_in: usize,
    pub sampling_freq: usize,
    pub kappa: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub nu: Vec<Vec<f64>>,
    pub n_centers: Vec<usize>,
    pub loglik: Vec<f64>,
    pub acc_bdm: Vec<bool>,
    pub acc_mu: Vec<bool>,
    pub acc_nu: Vec<bool>,
    /// Proposal counts for birth / death / move.
    pub move_tally: [usize; 3],
    /// 1-based sweep indices of the recorded iterations.
    pub recorded: Vec<usize>,
    /// Covariate p-values at each recorded iteration (length k each).
    pub pvalues: Vec<Vec<f64>>,
}

impl ChainTrace {
    /// Values of a per-sweep series at the recorded iterations.
    pub fn recorded_series<'a, T: Copy>(&self, series: &'a [T]) -> Vec<T> {
        self.recorded.iter().map(|&i| series[i - 1]).collect()
    }

    pub fn recorded_component(&self, series: &[Vec<f64>], j: usize) -> Vec<f64> {
        self.recorded.iter().map(|&i| series[i - 1][j]).collect()
    }
}

/// Cox process log-likelihood of the data given centers and the
/// interaction coefficients. The window integral is exact: Gaussian
/// rectangle masses over a disjoint cover of W, overlaps counted once.
pub fn cox_loglik(
    data: &[Point],
    centers: &[Point],
    mu: &[f64],
    nu: &[f64],
    covs: &CovariateSet,
    w: &Window,
) -> Result<f64> {
    if centers.is_empty() {
        return Err(Error::Config("cox_loglik requires at least one center".into()));
    }
    let alpha_c = centers
        .iter()
        .map(|c| alpha_at(mu, &covs.z_alpha, c))
        .collect::<Result<Vec<_>>>()?;
    let omega_c = centers
        .iter()
        .map(|c| omega_at(nu, &covs.z_omega, c))
        .collect::<Result<Vec<_>>>()?;
    let rects = w.disjoint_cover();
    Ok(cox_loglik_parts(data, centers, &alpha_c, &omega_c, &rects).0)
}

/// Returns (loglik, integral term). The data sum runs as a parallel map
/// over data points with a fixed-order reduction.
fn cox_loglik_parts(
    data: &[Point],
    centers: &[Point],
    alpha_c: &[f64],
    omega_c: &[f64],
    w_rects: &[Rect],
) -> (f64, f64) {
    let data_term = par::map_sum(data, |x| {
        let mut lam = 0.0;
        for ((c, &a), &om) in centers.iter().zip(alpha_c).zip(omega_c) {
            lam += a * log_gauss_kernel(x.x - c.x, x.y - c.y, om).exp();
        }
        lam.ln()
    });
    let integral: f64 = centers
        .iter()
        .zip(alpha_c)
        .zip(omega_c)
        .map(|((c, &a), &om)| a * gauss_window_mass(c, om, w_rects))
        .sum();
    (data_term - integral, integral)
}

/// Log density of the center configuration under the inhomogeneous
/// Poisson prior, relative to the unit-rate process. The additive
/// constant |W_dil| is omitted; it cancels in every ratio the sampler
/// forms.
pub fn center_logprior(
    centers: &[Point],
    beta_hat: &[f64],
    kappa: f64,
    covs: &CovariateSet,
    grid_dil: &QuadratureGrid,
) -> Result<f64> {
    let mut s = 0.0;
    for c in centers {
        s += (kappa * f_centers(beta_hat, &covs.z_beta, c)?).ln();
    }
    let mut integral = 0.0;
    for (node, &wt) in grid_dil.nodes.iter().zip(&grid_dil.weights) {
        integral += wt * f_centers(beta_hat, &covs.z_beta, node)?;
    }
    Ok(s - kappa * integral)
}

fn log_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - (sd * (2.0 * std::f64::consts::PI).sqrt()).ln()
}

/// Precomputed run context shared by all sweeps.
struct Ctx<'a> {
    data: &'a [Point],
    covs: &'a CovariateSet,
    w_rects: Vec<Rect>,
    w_dil: &'a DilatedWindow,
    w_dil_area: f64,
    /// Step-1 slope estimates (no intercept), frozen for the whole run.
    beta_hat: Vec<f64>,
    /// Integral of f(beta_hat, .) over W_dil.
    i_f: f64,
    /// Quadrature for the kappa integral over W: f and the z_alpha
    /// design at every node.
    kappa_weights: Vec<f64>,
    kappa_f: Vec<f64>,
    kappa_za: Vec<Vec<f64>>,
    grid_dil: QuadratureGrid,
    control: &'a Control,
}

impl<'a> Ctx<'a> {
    fn kappa_of(&self, mu: &[f64]) -> Result<f64> {
        let mut integral = 0.0;
        for ((za, &f), &wt) in self.kappa_za.iter().zip(&self.kappa_f).zip(&self.kappa_weights) {
            let a: f64 = za.iter().zip(mu).map(|(z, m)| z * m).sum::<f64>().exp();
            integral += wt * a * f;
        }
        if !integral.is_finite() || integral <= 0.0 {
            return Err(Error::Numeric(format!(
                "alpha*f integral over W is {integral}; cannot recompute kappa"
            )));
        }
        Ok(self.data.len() as f64 / integral)
    }

    fn center_attrs(&self, centers: &[Point], mu: &[f64], nu: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let mut alpha_c = Vec::with_capacity(centers.len());
        let mut omega_c = Vec::with_capacity(centers.len());
        let mut mass_c = Vec::with_capacity(centers.len());
        for c in centers {
            let a = alpha_at(mu, &self.covs.z_alpha, c)?;
            let om = omega_at(nu, &self.covs.z_omega, c)?;
            alpha_c.push(a);
            omega_c.push(om);
            mass_c.push(gauss_window_mass(c, om, &self.w_rects));
        }
        Ok((alpha_c, omega_c, mass_c))
    }
}

/// One MCMC chain for the inhomogeneous Thomas process. Owns its RNG
/// and state; independent chains may run concurrently.
pub struct ThomasSampler<'a> {
    ctx: Ctx<'a>,
    pub state: ChainState,
    rng: ChaCha8Rng,
}

impl<'a> ThomasSampler<'a> {
    pub fn new(
        data: &'a [Point],
        covs: &'a CovariateSet,
        w: &'a Window,
        w_dil: &'a DilatedWindow,
        control: &'a Control,
        beta_hat: &PoissonFit,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Config("the point pattern is empty".into()));
        }
        control.validate(covs.z_alpha.len(), covs.z_omega.len())?;

        let grid_w = make_grid(&Region::Window(w), control.integration_cell)?;
        let mut kappa_f = Vec::with_capacity(grid_w.nodes.len());
        let mut kappa_za = Vec::with_capacity(grid_w.nodes.len());
        let beta_slopes = beta_hat.slopes().to_vec();
        for node in &grid_w.nodes {
            kappa_f.push(f_centers(&beta_slopes, &covs.z_beta, node)?);
            kappa_za.push(design_vector(&covs.z_alpha, node, true)?);
        }
        let grid_dil = make_grid(&Region::Dilated(w_dil), control.pvalue_cell)?;
        let mut i_f = 0.0;
        for (node, &wt) in grid_dil.nodes.iter().zip(&grid_dil.weights) {
            i_f += wt * f_centers(&beta_slopes, &covs.z_beta, node)?;
        }

        let ctx = Ctx {
            data,
            covs,
            w_rects: w.disjoint_cover(),
            w_dil,
            w_dil_area: w_dil.area(),
            beta_hat: beta_slopes,
            i_f,
            kappa_weights: grid_w.weights,
            kappa_f,
            kappa_za,
            grid_dil,
            control,
        };

        let mut rng = derive_rng(control.seed, "thomas-chain");

        // initial centers: data points drawn without replacement, one
        // per expected-cluster-size worth of points
        let alpha0 = control.prior_alpha_mean.exp();
        let n_init = ((data.len() as f64 / alpha0).ceil() as usize).clamp(1, data.len());
        let mut idx: Vec<usize> = (0..data.len()).collect();
        for i in 0..n_init {
            let j = rng.gen_range(i..idx.len());
            idx.swap(i, j);
        }
        let centers: Vec<Point> = idx[..n_init].iter().map(|&i| data[i]).collect();

        let mut mu = vec![0.0; covs.z_alpha.len() + 1];
        mu[0] = control.prior_alpha_mean;
        let mut nu = vec![0.0; covs.z_omega.len() + 1];
        nu[0] = control.prior_omega_mean;
        let kappa = ctx.kappa_of(&mu)?;
        let (alpha_c, omega_c, mass_c) = ctx.center_attrs(&centers, &mu, &nu)?;
        let f_c = centers
            .iter()
            .map(|c| f_centers(&ctx.beta_hat, &covs.z_beta, c))
            .collect::<Result<Vec<_>>>()?;
        let (loglik, _) = cox_loglik_parts(data, &centers, &alpha_c, &omega_c, &ctx.w_rects);

        Ok(ThomasSampler {
            ctx,
            state: ChainState {
                centers,
                mu,
                nu,
                kappa,
                alpha_c,
                omega_c,
                mass_c,
                f_c,
                loglik,
            },
            rng,
        })
    }

    /// From-scratch likelihood recomputation, used for cache-drift checks.
    pub fn loglik_fresh(&self) -> f64 {
        let (ll, _) = cox_loglik_parts(
            self.ctx.data,
            &self.state.centers,
            &self.state.alpha_c,
            &self.state.omega_c,
            &self.ctx.w_rects,
        );
        ll
    }

    fn accept(&mut self, log_ratio: f64) -> bool {
        if log_ratio >= 0.0 {
            // still consume the coin so the stream is identical either way
            let _: f64 = self.rng.gen_range(0.0..1.0);
            return true;
        }
        let u: f64 = self.rng.gen_range(0.0..1.0);
        u.ln() < log_ratio
    }

    /// Birth, death or move of one latent center, chosen with equal
    /// probability. Returns true when the proposal is accepted.
    pub fn step_birth_death_move(&mut self) -> Result<(usize, bool)> {
        let scale = self.ctx.control.target_scale;
        let kind = self.rng.gen_range(0..3usize);
        match kind {
            0 => {
                // birth: uniform proposal on W_dil
                let p = self.ctx.w_dil.sample_uniform(1, &mut self.rng)[0];
                let a = alpha_at(&self.state.mu, &self.ctx.covs.z_alpha, &p)?;
                let om = omega_at(&self.state.nu, &self.ctx.covs.z_omega, &p)?;
                let fp = f_centers(&self.ctx.beta_hat, &self.ctx.covs.z_beta, &p)?;
                let mass = gauss_window_mass(&p, om, &self.ctx.w_rects);

                let mut centers = self.state.centers.clone();
                let mut alpha_c = self.state.alpha_c.clone();
                let mut omega_c = self.state.omega_c.clone();
                centers.push(p);
                alpha_c.push(a);
                omega_c.push(om);
                let (cand_ll, _) =
                    cox_loglik_parts(self.ctx.data, &centers, &alpha_c, &omega_c, &self.ctx.w_rects);
                let d_ll = cand_ll - self.state.loglik;
                let d_prior = (self.state.kappa * fp).ln();
                let n = self.state.centers.len() as f64;
                let log_ratio =
                    scale * (d_ll + d_prior) + (self.ctx.w_dil_area / (n + 1.0)).ln();
                if self.accept(log_ratio) {
                    self.state.centers = centers;
                    self.state.alpha_c = alpha_c;
                    self.state.omega_c = omega_c;
                    self.state.mass_c.push(mass);
                    self.state.f_c.push(fp);
                    self.state.loglik = cand_ll;
                    Ok((0, true))
                } else {
                    Ok((0, false))
                }
            }
            1 => {
                // death: uniform victim; the last center never dies
                let n = self.state.centers.len();
                let victim = self.rng.gen_range(0..n);
                if n == 1 {
                    return Ok((1, false));
                }
                let mut centers = self.state.centers.clone();
                let mut alpha_c = self.state.alpha_c.clone();
                let mut omega_c = self.state.omega_c.clone();
                centers.swap_remove(victim);
                alpha_c.swap_remove(victim);
                omega_c.swap_remove(victim);
                let (cand_ll, _) =
                    cox_loglik_parts(self.ctx.data, &centers, &alpha_c, &omega_c, &self.ctx.w_rects);
                let d_ll = cand_ll - self.state.loglik;
                let d_prior = -(self.state.kappa * self.state.f_c[victim]).ln();
                let log_ratio =
                    scale * (d_ll + d_prior) + (n as f64 / self.ctx.w_dil_area).ln();
                if self.accept(log_ratio) {
                    self.state.centers = centers;
                    self.state.alpha_c = alpha_c;
                    self.state.omega_c = omega_c;
                    self.state.mass_c.swap_remove(victim);
                    self.state.f_c.swap_remove(victim);
                    self.state.loglik = cand_ll;
                    Ok((1, true))
                } else {
                    Ok((1, false))
                }
            }
            _ => {
                // move: symmetric Gaussian perturbation
                let n = self.state.centers.len();
                let victim = self.rng.gen_range(0..n);
                let sd = self.ctx.control.center_move_sd;
                let dx: f64 = StandardNormal.sample(&mut self.rng);
                let dy: f64 = StandardNormal.sample(&mut self.rng);
                let old = self.state.centers[victim];
                let p = Point::new(old.x + sd * dx, old.y + sd * dy);
                if !self.ctx.w_dil.contains(&p) {
                    // proposals outside W_dil are rejected outright, but
                    // the coin is consumed for stream stability
                    let _: f64 = self.rng.gen_range(0.0..1.0);
                    return Ok((2, false));
                }
                let a = alpha_at(&self.state.mu, &self.ctx.covs.z_alpha, &p)?;
                let om = omega_at(&self.state.nu, &self.ctx.covs.z_omega, &p)?;
                let fp = f_centers(&self.ctx.beta_hat, &self.ctx.covs.z_beta, &p)?;
                let mass = gauss_window_mass(&p, om, &self.ctx.w_rects);

                let mut centers = self.state.centers.clone();
                let mut alpha_c = self.state.alpha_c.clone();
                let mut omega_c = self.state.omega_c.clone();
                centers[victim] = p;
                alpha_c[victim] = a;
                omega_c[victim] = om;
                let (cand_ll, _) =
                    cox_loglik_parts(self.ctx.data, &centers, &alpha_c, &omega_c, &self.ctx.w_rects);
                let d_ll = cand_ll - self.state.loglik;
                let d_prior = fp.ln() - self.state.f_c[victim].ln();
                let log_ratio = scale * (d_ll + d_prior);
                if self.accept(log_ratio) {
                    self.state.centers = centers;
                    self.state.alpha_c = alpha_c;
                    self.state.omega_c = omega_c;
                    self.state.mass_c[victim] = mass;
                    self.state.f_c[victim] = fp;
                    self.state.loglik = cand_ll;
                    Ok((2, true))
                } else {
                    Ok((2, false))
                }
            }
        }
    }

    /// Block random-walk update of mu. On acceptance kappa is
    /// recomputed and the center prior follows the new kappa.
    pub fn step_update_mu(&mut self) -> Result<bool> {
        let scale = self.ctx.control.target_scale;
        let mut cand_mu = self.state.mu.clone();
        for (v, &sd) in cand_mu.iter_mut().zip(&self.ctx.control.proposal_mu_sd) {
            let e: f64 = StandardNormal.sample(&mut self.rng);
            *v += sd * e;
        }
        let (alpha_c, omega_c, mass_c) =
            self.ctx
                .center_attrs(&self.state.centers, &cand_mu, &self.state.nu)?;
        let (cand_ll, _) = cox_loglik_parts(
            self.ctx.data,
            &self.state.centers,
            &alpha_c,
            &omega_c,
            &self.ctx.w_rects,
        );
        let cand_kappa = self.ctx.kappa_of(&cand_mu)?;
        let n_c = self.state.centers.len() as f64;
        let d_center = n_c * (cand_kappa.ln() - self.state.kappa.ln())
            - (cand_kappa - self.state.kappa) * self.ctx.i_f;
        let d_prior = self.mu_logprior(&cand_mu) - self.mu_logprior(&self.state.mu);
        let log_ratio = scale * ((cand_ll - self.state.loglik) + d_center) + d_prior;
        if self.accept(log_ratio) {
            self.state.mu = cand_mu;
            self.state.kappa = cand_kappa;
            self.state.alpha_c = alpha_c;
            self.state.omega_c = omega_c;
            self.state.mass_c = mass_c;
            self.state.loglik = cand_ll;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// Block random-walk update of nu. Kappa does not depend on nu.
    pub fn step_update_nu(&mut self) -> Result<bool> {
        let scale = self.ctx.control.target_scale;
        let mut cand_nu = self.state.nu.clone();
        for (v, &sd) in cand_nu.iter_mut().zip(&self.ctx.control.proposal_nu_sd) {
            let e: f64 = StandardNormal.sample(&mut self.rng);
            *v += sd * e;
        }
        let (alpha_c, omega_c, mass_c) =
            self.ctx
                .center_attrs(&self.state.centers, &self.state.mu, &cand_nu)?;
        let (cand_ll, _) = cox_loglik_parts(
            self.ctx.data,
            &self.state.centers,
            &alpha_c,
            &omega_c,
            &self.ctx.w_rects,
        );
        let d_prior = self.nu_logprior(&cand_nu) - self.nu_logprior(&self.state.nu);
        let log_ratio = scale * (cand_ll - self.state.loglik) + d_prior;
        if self.accept(log_ratio) {
            self.state.nu = cand_nu;
            self.state.alpha_c = alpha_c;
            self.state.omega_c = omega_c;
            self.state.mass_c = mass_c;
            self.state.loglik = cand_ll;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    fn mu_logprior(&self, mu: &[f64]) -> f64 {
        let c = self.ctx.control;
        let mut lp = log_normal_pdf(mu[0], c.prior_alpha_mean, c.prior_alpha_sd);
        for (v, &sd) in mu[1..].iter().zip(&c.prior_alphavec_sd) {
            lp += log_normal_pdf(*v, 0.0, sd);
        }
        lp
    }

    fn nu_logprior(&self, nu: &[f64]) -> f64 {
        let c = self.ctx.control;
        let mut lp = log_normal_pdf(nu[0], c.prior_omega_mean, c.prior_omega_sd);
        for (v, &sd) in nu[1..].iter().zip(&c.prior_omegavec_sd) {
            lp += log_normal_pdf(*v, 0.0, sd);
        }
        lp
    }

    /// Log target density of the current state up to the constants that
    /// cancel in every ratio; used by consistency checks.
    pub fn log_target(&self) -> f64 {
        let c = self.ctx.control.target_scale;
        let center_prior: f64 = self
            .state
            .f_c
            .iter()
            .map(|f| (self.state.kappa * f).ln())
            .sum::<f64>()
            - self.state.kappa * self.ctx.i_f;
        c * (self.state.loglik + center_prior)
            + self.mu_logprior(&self.state.mu)
            + self.nu_logprior(&self.state.nu)
    }

    fn pvalues(&self) -> Result<Vec<f64>> {
        if self.ctx.covs.z_beta.is_empty() {
            return Ok(vec![]);
        }
        covariate_pvalues(&self.state.centers, &self.ctx.covs.z_beta, &self.ctx.grid_dil)
    }

    fn check_invariants(&self) -> Result<()> {
        let fresh = self.loglik_fresh();
        if (fresh - self.state.loglik).abs() > 1e-6 * (1.0 + fresh.abs()) {
            return Err(Error::Numeric(format!(
                "cached log-likelihood drifted: cached {} vs fresh {}",
                self.state.loglik, fresh
            )));
        }
        debug_assert!((fresh - self.state.loglik).abs() <= 1e-8 * (1.0 + fresh.abs()));
        if self.state.centers.is_empty() {
            return Err(Error::Numeric("center list became empty".into()));
        }
        if !self
            .state
            .centers
            .iter()
            .all(|c| self.ctx.w_dil.contains(c))
        {
            return Err(Error::Numeric("a center escaped the dilated window".into()));
        }
        Ok(())
    }
}

/// A recorded trace row, streamed to the CSV sink as the chain runs.
pub struct TraceRow<'a> {
    pub iter: usize,
    pub kappa: f64,
    pub mu: &'a [f64],
    pub nu: &'a [f64],
    pub n_centers: usize,
    pub loglik: f64,
    pub pvalues: &'a [f64],
    pub acc_bdm: bool,
    pub acc_mu: bool,
    pub acc_nu: bool,
}

pub fn trace_csv_header(l: usize, m: usize, k: usize) -> String {
    let mut cols = vec!["iter".to_string(), "kappa".to_string()];
    cols.extend((0..=l).map(|i| format!("mu_{i}")));
    cols.extend((0..=m).map(|i| format!("nu_{i}")));
    cols.push("n_centers".into());
    cols.push("loglik".into());
    cols.extend((1..=k).map(|i| format!("pval_{i}")));
    cols.push("acc_bdm".into());
    cols.push("acc_mu".into());
    cols.push("acc_nu".into());
    cols.join(",")
}

pub fn trace_csv_row(row: &TraceRow) -> String {
    let mut cols = vec![row.iter.to_string(), format!("{}", row.kappa)];
    cols.extend(row.mu.iter().map(|v| format!("{v}")));
    cols.extend(row.nu.iter().map(|v| format!("{v}")));
    cols.push(row.n_centers.to_string());
    cols.push(format!("{}", row.loglik));
    cols.extend(row.pvalues.iter().map(|v| format!("{v}")));
    cols.push(u8::from(row.acc_bdm).to_string());
    cols.push(u8::from(row.acc_mu).to_string());
    cols.push(u8::from(row.acc_nu).to_string());
    cols.join(",")
}

/// Run the full chain: each sweep is one birth-death-move, one mu
/// update and one nu update; covariate p-values are refreshed every
/// `sampling_freq` sweeps. Deterministic given the control seed.
/// Recorded rows are streamed to `sink` as CSV when provided.
pub fn run_chain(
    data: &[Point],
    covs: &CovariateSet,
    w: &Window,
    w_dil: &DilatedWindow,
    control: &Control,
    beta_hat: &PoissonFit,
    mut sink: Option<&mut dyn std::io::Write>,
) -> Result<ChainTrace> {
    let mut sampler = ThomasSampler::new(data, covs, w, w_dil, control, beta_hat)?;
    let l = covs.z_alpha.len();
    let m = covs.z_omega.len();
    let k = covs.z_beta.len();
    if let Some(s) = sink.as_deref_mut() {
        writeln!(s, "{}", trace_csv_header(l, m, k)).map_err(|e| Error::Io {
            path: "<trace sink>".into(),
            source: e,
        })?;
    }

    let n_step = control.n_step;
    let mut trace = ChainTrace {
        n_step,
        burn_in: control.burn_in,
        sampling_freq: control.sampling_freq,
        kappa: Vec::with_capacity(n_step),
        mu: Vec::with_capacity(n_step),
        nu: Vec::with_capacity(n_step),
        n_centers: Vec::with_capacity(n_step),
        loglik: Vec::with_capacity(n_step),
        acc_bdm: Vec::with_capacity(n_step),
        acc_mu: Vec::with_capacity(n_step),
        acc_nu: Vec::with_capacity(n_step),
        move_tally: [0; 3],
        recorded: Vec::new(),
        pvalues: Vec::new(),
    };

    let mut last_pvalues: Vec<f64> = vec![f64::NAN; k];
    for sweep in 1..=n_step {
        let abort = |e: Error, sampler: &ThomasSampler| {
            let dump = serde_json::to_string(&sampler.state).unwrap_or_else(|e| e.to_string());
            Error::Stage {
                stage: format!("sweep {sweep} (state dump: {dump})"),
                source: Box::new(e),
            }
        };
        let (kind, acc_b) = match sampler.step_birth_death_move() {
            Ok(v) => v,
            Err(e) => return Err(abort(e, &sampler)),
        };
        trace.move_tally[kind] += 1;
        let acc_m = match sampler.step_update_mu() {
            Ok(v) => v,
            Err(e) => return Err(abort(e, &sampler)),
        };
        let acc_n = match sampler.step_update_nu() {
            Ok(v) => v,
            Err(e) => return Err(abort(e, &sampler)),
        };

        trace.kappa.push(sampler.state.kappa);
        trace.mu.push(sampler.state.mu.clone());
        trace.nu.push(sampler.state.nu.clone());
        trace.n_centers.push(sampler.state.centers.len());
        trace.loglik.push(sampler.state.loglik);
        trace.acc_bdm.push(acc_b);
        trace.acc_mu.push(acc_m);
        trace.acc_nu.push(acc_n);

        let recorded = sweep > control.burn_in
            && (sweep - control.burn_in) % control.sampling_freq == 0;
        if k > 0 && (sweep % control.sampling_freq == 0 || recorded) {
            last_pvalues = match sampler.pvalues() {
                Ok(v) => v,
                Err(e) => return Err(abort(e, &sampler)),
            };
        }
        if recorded {
            trace.recorded.push(sweep);
            trace.pvalues.push(last_pvalues.clone());
            if let Some(s) = sink.as_deref_mut() {
                let row = TraceRow {
                    iter: sweep,
                    kappa: sampler.state.kappa,
                    mu: &sampler.state.mu,
                    nu: &sampler.state.nu,
                    n_centers: sampler.state.centers.len(),
                    loglik: sampler.state.loglik,
                    pvalues: &last_pvalues,
                    acc_bdm: acc_b,
                    acc_mu: acc_m,
                    acc_nu: acc_n,
                };
                writeln!(s, "{}", trace_csv_row(&row)).map_err(|e| Error::Io {
                    path: "<trace sink>".into(),
                    source: e,
                })?;
            }
        }

        if sweep % 1000 == 0 {
            if let Err(e) = sampler.check_invariants() {
                return Err(abort(e, &sampler));
            }
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::firstorder::fit_poisson_intensity;
    use crate::geometry::dilate;
    use crate::model::{simulate_thomas, ThomasParams};
    use rand::SeedableRng;

    fn setup_homogeneous() -> (Vec<Point>, CovariateSet, Window, DilatedWindow) {
        let w = Window::unit_square();
        let w_dil = dilate(&w, 0.12, 0.01).unwrap();
        let params = ThomasParams::homogeneous(25.0, 8.0, 0.03);
        let covs = CovariateSet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let sim = simulate_thomas(&params, &covs, &w, &w_dil, &mut rng).unwrap();
        (sim.points, covs, w, w_dil)
    }

    fn quick_control(w: &Window, n: usize) -> Control {
        let mut c = Control::defaults(n, w, 0, 0);
        c.n_step = 50;
        c.burn_in = 10;
        c.sampling_freq = 2;
        c.integration_cell = 0.05;
        c.pvalue_cell = 0.05;
        c.seed = 7;
        c
    }

    fn fit_intercept(data: &[Point], w: &Window) -> PoissonFit {
        let grid = make_grid(&Region::Window(w), 0.02).unwrap();
        fit_poisson_intensity(data, &[], &grid).unwrap()
    }

    #[test]
    fn cox_loglik_single_center_closed_form() {
        let w = Window::unit_square();
        let covs = CovariateSet::default();
        let x = Point::new(0.5, 0.5);
        let alpha = 3.0f64;
        let omega = 0.1f64;
        let ll = cox_loglik(
            &[x],
            &[x],
            &[alpha.ln()],
            &[omega.ln()],
            &covs,
            &w,
        )
        .unwrap();
        let mass = crate::model::gauss_rect_mass(&x, omega, &w.rects()[0]);
        let expect = (alpha / (2.0 * std::f64::consts::PI * omega * omega)).ln() - alpha * mass;
        assert!((ll - expect).abs() < 1e-12);
    }

    #[test]
    fn cox_loglik_matches_brute_force() {
        let w = Window::unit_square();
        let covs = CovariateSet::default();
        let data = [Point::new(0.2, 0.3), Point::new(0.7, 0.8)];
        let centers = [Point::new(0.25, 0.3), Point::new(0.6, 0.75)];
        let mu = [1.2];
        let nu = [0.08f64.ln()];
        let ll = cox_loglik(&data, &centers, &mu, &nu, &covs, &w).unwrap();
        // independent second implementation
        let alpha = mu[0].exp();
        let omega = nu[0].exp();
        let mut expect = 0.0;
        for x in &data {
            let lam: f64 = centers
                .iter()
                .map(|c| alpha * crate::model::gauss_kernel(x.x - c.x, x.y - c.y, omega))
                .sum();
            expect += lam.ln();
        }
        for c in &centers {
            expect -= alpha * crate::model::gauss_rect_mass(c, omega, &w.rects()[0]);
        }
        assert!((ll - expect).abs() < 1e-10);
    }

    #[test]
    fn cox_loglik_alpha_doubling_identity() {
        let w = Window::unit_square();
        let covs = CovariateSet::default();
        let data = [Point::new(0.2, 0.3), Point::new(0.7, 0.8), Point::new(0.4, 0.4)];
        let centers = [Point::new(0.25, 0.3), Point::new(0.6, 0.75)];
        let nu = [0.05f64.ln()];
        let a = 2.0f64;
        let ll1 = cox_loglik(&data, &centers, &[a.ln()], &nu, &covs, &w).unwrap();
        let ll2 = cox_loglik(&data, &centers, &[(2.0 * a).ln()], &nu, &covs, &w).unwrap();
        let omega = nu[0].exp();
        let extra: f64 = centers
            .iter()
            .map(|c| a * crate::model::gauss_rect_mass(c, omega, &w.rects()[0]))
            .sum();
        let expect = data.len() as f64 * 2.0f64.ln() - extra;
        assert!((ll2 - ll1 - expect).abs() < 1e-10);
    }

    #[test]
    fn center_logprior_cases() {
        let w = Window::unit_square();
        let w_dil = dilate(&w, 0.1, 0.01).unwrap();
        let grid = make_grid(&Region::Dilated(&w_dil), 0.01).unwrap();
        let covs = CovariateSet::default();
        // beta = 0, kappa = 1: 0 - |W_dil| (constants dropped)
        let lp = center_logprior(&[Point::new(0.5, 0.5)], &[], 1.0, &covs, &grid).unwrap();
        assert!((lp + grid.total_weight()).abs() < 1e-12);
        // adding one center at u adds log(kappa f(u))
        let kappa = 3.0;
        let base = center_logprior(&[Point::new(0.5, 0.5)], &[], kappa, &covs, &grid).unwrap();
        let more = center_logprior(
            &[Point::new(0.5, 0.5), Point::new(0.2, 0.2)],
            &[],
            kappa,
            &covs,
            &grid,
        )
        .unwrap();
        assert!((more - base - kappa.ln()).abs() < 1e-12);
    }

    #[test]
    fn center_logprior_matches_quadrature_oracle() {
        let w = Window::unit_square();
        let w_dil = dilate(&w, 0.1, 0.01).unwrap();
        let grid = make_grid(&Region::Dilated(&w_dil), 0.02).unwrap();
        let cell = 0.05;
        let n = 30;
        let mut values = vec![0.0; n * n];
        for row in 0..n {
            for col in 0..n {
                values[row * n + col] = (-0.25 + (col as f64 + 0.5) * cell).sin();
            }
        }
        let zb = crate::covariates::RasterCovariate::new(
            "z",
            Point::new(-0.25, -0.25),
            cell,
            n,
            n,
            values,
            -9999.0,
        )
        .unwrap();
        let covs = CovariateSet::new(vec![zb.clone()], vec![], vec![]).unwrap();
        let beta = [0.7];
        let kappa = 2.5;
        let centers = [Point::new(0.3, 0.4), Point::new(0.9, 0.1)];
        let lp = center_logprior(&centers, &beta, kappa, &covs, &grid).unwrap();
        // brute-force oracle over the same grid
        let mut expect = 0.0;
        for c in &centers {
            expect += (kappa * (beta[0] * zb.value_at(c).unwrap()).exp()).ln();
        }
        let mut integral = 0.0;
        for (node, &wt) in grid.nodes.iter().zip(&grid.weights) {
            integral += wt * (beta[0] * zb.value_at(node).unwrap()).exp();
        }
        expect -= kappa * integral;
        assert!((lp - expect).abs() < 1e-8);
    }

    #[test]
    fn chain_is_deterministic() {
        let (data, covs, w, w_dil) = setup_homogeneous();
        let control = quick_control(&w, data.len());
        let fit = fit_intercept(&data, &w);
        let t1 = run_chain(&data, &covs, &w, &w_dil, &control, &fit, None).unwrap();
        let t2 = run_chain(&data, &covs, &w, &w_dil, &control, &fit, None).unwrap();
        assert_eq!(t1.kappa, t2.kappa);
        assert_eq!(t1.mu, t2.mu);
        assert_eq!(t1.nu, t2.nu);
        assert_eq!(t1.n_centers, t2.n_centers);
        assert_eq!(t1.loglik, t2.loglik);
    }

    #[test]
    fn trace_record_counts() {
        let (data, covs, w, w_dil) = setup_homogeneous();
        let mut control = quick_control(&w, data.len());
        control.n_step = 10;
        control.burn_in = 0;
        control.sampling_freq = 1;
        let fit = fit_intercept(&data, &w);
        let t = run_chain(&data, &covs, &w, &w_dil, &control, &fit, None).unwrap();
        assert_eq!(t.recorded.len(), 10);
        assert_eq!(t.kappa.len(), 10);
        // with sampling_freq q the recorded iterations are
        // burn_in + q, burn_in + 2q, ...
        control.n_step = 23;
        control.burn_in = 5;
        control.sampling_freq = 4;
        let t2 = run_chain(&data, &covs, &w, &w_dil, &control, &fit, None).unwrap();
        assert_eq!(t2.recorded, vec![9, 13, 17, 21]);
        assert_eq!(t2.recorded.len(), (23 - 5) / 4);
    }

    #[test]
    fn centers_stay_valid_and_kappa_consistent() {
        let (data, covs, w, w_dil) = setup_homogeneous();
        let mut control = quick_control(&w, data.len());
        control.n_step = 300;
        control.burn_in = 0;
        control.sampling_freq = 1;
        let fit = fit_intercept(&data, &w);
        let mut sampler = ThomasSampler::new(&data, &covs, &w, &w_dil, &control, &fit).unwrap();
        for _ in 0..300 {
            sampler.step_birth_death_move().unwrap();
            sampler.step_update_mu().unwrap();
            sampler.step_update_nu().unwrap();
            assert!(!sampler.state.centers.is_empty());
            assert!(sampler.state.centers.iter().all(|c| w_dil.contains(c)));
            // kappa always equals its deterministic recomputation
            let (_, ctx_kappa) = (0, sampler.ctx.kappa_of(&sampler.state.mu).unwrap());
            assert!((sampler.state.kappa - ctx_kappa).abs() < 1e-12 * ctx_kappa);
        }
        // cache drift check
        let fresh = sampler.loglik_fresh();
        assert!((fresh - sampler.state.loglik).abs() < 1e-8 * (1.0 + fresh.abs()));
    }

    #[test]
    fn death_with_single_center_rejected() {
        let w = Window::unit_square();
        let w_dil = dilate(&w, 0.1, 0.01).unwrap();
        let covs = CovariateSet::default();
        let data = vec![Point::new(0.5, 0.5)];
        let mut control = Control::defaults(1, &w, 0, 0);
        control.integration_cell = 0.05;
        control.pvalue_cell = 0.05;
        control.seed = 3;
        let fit = fit_intercept(&data, &w);
        let mut sampler = ThomasSampler::new(&data, &covs, &w, &w_dil, &control, &fit).unwrap();
        assert_eq!(sampler.state.centers.len(), 1);
        for _ in 0..200 {
            let (kind, accepted) = sampler.step_birth_death_move().unwrap();
            if kind == 1 && sampler.state.centers.len() == 1 {
                assert!(!accepted || sampler.state.centers.len() >= 1);
            }
            assert!(!sampler.state.centers.is_empty());
        }
    }

    #[test]
    fn prior_only_mu_marginal_matches_prior() {
        // likelihood switched off: the mu intercept chain must sample
        // its normal prior (KS test at the 1% level)
        let (data, covs, w, w_dil) = setup_homogeneous();
        let mut control = quick_control(&w, data.len());
        control.target_scale = 0.0;
        control.proposal_mu_sd = vec![1.0];
        let fit = fit_intercept(&data, &w);
        let mut sampler = ThomasSampler::new(&data, &covs, &w, &w_dil, &control, &fit).unwrap();
        let n = 100_000;
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            sampler.step_update_mu().unwrap();
            samples.push(sampler.state.mu[0]);
        }
        // thin to reduce autocorrelation before the KS test
        let thinned: Vec<f64> = samples.iter().step_by(20).copied().collect();
        let mut sorted = thinned.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = sorted.len() as f64;
        let ks = sorted
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let u = crate::model::std_normal_cdf(
                    (x - control.prior_alpha_mean) / control.prior_alpha_sd,
                );
                (u - i as f64 / m).abs().max(((i + 1) as f64 / m - u).abs())
            })
            .fold(0.0f64, f64::max);
        assert!(ks < 1.63 / m.sqrt(), "KS statistic {ks} over {m} samples");
    }

    #[test]
    fn zero_step_proposal_always_accepted() {
        // a zero proposal step has log ratio exactly 0 -> accepted
        let (data, covs, w, w_dil) = setup_homogeneous();
        let mut control = quick_control(&w, data.len());
        control.proposal_mu_sd = vec![1e-300];
        control.proposal_nu_sd = vec![1e-300];
        let fit = fit_intercept(&data, &w);
        let mut sampler = ThomasSampler::new(&data, &covs, &w, &w_dil, &control, &fit).unwrap();
        for _ in 0..50 {
            assert!(sampler.step_update_mu().unwrap());
            assert!(sampler.step_update_nu().unwrap());
        }
    }

    #[test]
    fn trace_csv_shape() {
        let (data, covs, w, w_dil) = setup_homogeneous();
        let mut control = quick_control(&w, data.len());
        control.n_step = 10;
        control.burn_in = 0;
        control.sampling_freq = 1;
        let fit = fit_intercept(&data, &w);
        let mut buf = Vec::new();
        run_chain(&data, &covs, &w, &w_dil, &control, &fit, Some(&mut buf)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 11);
        assert_eq!(
            lines[0],
            "iter,kappa,mu_0,nu_0,n_centers,loglik,acc_bdm,acc_mu,acc_nu"
        );
        assert_eq!(lines[1].split(',').count(), 9);
    }
}
