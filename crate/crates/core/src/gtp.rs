//! Bayesian MCMC for the homogeneous generalized Thomas process:
//! explicit point-to-center connections, GPD cluster sizes, and
//! updates for the four model parameters.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::geometry::{DilatedWindow, Point};
use crate::model::{log_gauss_kernel, GpdParams, GtpParams};
use crate::reporting::quantile;
use crate::rng::derive_rng;

/// Proposal scales, prior hyperparameters and run length for one GTP
/// chain. Priors are lognormal for kappa, omega and theta and uniform
/// on `[l_lambda, u_lambda]` for lambda. The `s*` proposal scales are
/// absolute SDs; they are converted to relative log-scale steps
/// (s / prior mean) when the sampler is configured.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GtpControl {
    pub skappa: f64,
    pub somega: f64,
    pub dlambda: f64,
    pub stheta: f64,
    pub smove: f64,
    pub a_kappa: f64,
    pub b_kappa: f64,
    pub a_omega: f64,
    pub b_omega: f64,
    pub l_lambda: f64,
    pub u_lambda: f64,
    pub a_theta: f64,
    pub b_theta: f64,
    pub iter: usize,
    pub seed: u64,
    /// Default post-run discard and thinning for summaries.
    pub discard: usize,
    pub step: usize,
    /// Connection reassignment proposals per sweep.
    pub connection_updates: usize,
    /// Test harness only: scales the likelihood part of every ratio.
    #[serde(default = "default_scale")]
    pub target_scale: f64,
}

fn default_scale() -> f64 {
    1.0
}

impl GtpControl {
    /// The worked-example defaults: proposal scale = prior mean / 100.
    pub fn defaults() -> Self {
        let (a_kappa, b_kappa) = (4.0f64, 1.0f64);
        let (a_omega, b_omega) = (-3.0f64, 1.0f64);
        let (a_theta, b_theta) = (4.0f64, 1.0f64);
        GtpControl {
            skappa: (a_kappa + b_kappa * b_kappa / 2.0).exp() / 100.0,
            somega: (a_omega + b_omega * b_omega / 2.0).exp() / 100.0,
            dlambda: 0.01,
            stheta: (a_theta + b_theta * b_theta / 2.0).exp() / 100.0,
            smove: 0.1,
            a_kappa,
            b_kappa,
            a_omega,
            b_omega,
            l_lambda: -1.0,
            u_lambda: 0.99,
            a_theta,
            b_theta,
            iter: 1000,
            seed: 0,
            discard: 100,
            step: 10,
            connection_updates: 1,
            target_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l_lambda < self.u_lambda) || !(self.u_lambda < 1.0) {
            return Err(Error::Config(format!(
                "lambda prior bounds must satisfy l < u < 1; got [{}, {}]",
                self.l_lambda, self.u_lambda
            )));
        }
        if [self.skappa, self.somega, self.dlambda, self.stheta, self.smove]
            .iter()
            .any(|&s| !(s > 0.0))
        {
            return Err(Error::Config("all proposal scales must be > 0".into()));
        }
        if self.iter == 0 {
            return Err(Error::Config("iter must be >= 1".into()));
        }
        Ok(())
    }

    fn prior_mean_kappa(&self) -> f64 {
        (self.a_kappa + self.b_kappa * self.b_kappa / 2.0).exp()
    }
    fn prior_mean_omega(&self) -> f64 {
        (self.a_omega + self.b_omega * self.b_omega / 2.0).exp()
    }
    fn prior_mean_theta(&self) -> f64 {
        (self.a_theta + self.b_theta * self.b_theta / 2.0).exp()
    }
}

/// Latent state: centers, one connection per data point, parameters and
/// the derived cluster-size bookkeeping.
#[derive(Debug, Clone, Serialize)]
pub struct GtpState {
    pub centers: Vec<Point>,
    pub allocation: Vec<usize>,
    pub params: GtpParams,
    pub cluster_sizes: Vec<u64>,
    pub loglik: f64,
}

/// Per-sweep trace of a GTP chain.
#[derive(Debug, Clone)]
pub struct GtpTrace {
    pub iter: usize,
    pub kappa: Vec<f64>,
    pub omega: Vec<f64>,
    pub lambda: Vec<f64>,
    pub theta: Vec<f64>,
    pub n_centers: Vec<usize>,
    pub loglik: Vec<f64>,
    pub acc_kappa: Vec<bool>,
    pub acc_omega: Vec<bool>,
    pub acc_lambda: Vec<bool>,
    pub acc_theta: Vec<bool>,
    pub acc_centers: Vec<bool>,
    pub acc_conn: Vec<bool>,
}

/// Dispersion verdict from the posterior interval for lambda.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DispersionVerdict {
    PoissonNotRejected,
    OverDispersed,
    UnderDispersed,
}

#[derive(Debug, Clone, Serialize)]
pub struct GtpSummary {
    pub kappa: [f64; 3],
    pub omega: [f64; 3],
    pub lambda: [f64; 3],
    pub theta: [f64; 3],
    pub verdict: DispersionVerdict,
    pub sample_count: usize,
}

/// Allocation-based log-likelihood: GPD terms per cluster, Gaussian
/// kernel terms per connection, and the homogeneous Poisson center term
/// `n_c log(kappa) - kappa |W_dil|` (additive constants dropped).
///
/// Each cluster contributes `gpd_pmf(n_j) * n_j!`: the factorial counts
/// the ways the cluster's unordered points arise from the size-n_j
/// draw. Summing this over allocations at lambda = 0 recovers the
/// exact Poisson-cluster likelihood `prod_x sum_j theta k(x - c_j)`;
/// without the factorial the target is biased toward splitting
/// clusters (a size-m cluster is spuriously penalized by 1/m!).
pub fn gtp_loglik(data: &[Point], state: &GtpState, w_dil_area: f64) -> f64 {
    let gpd = state.params.gpd;
    let log_z = gpd.log_normalizer();
    let mut ll = 0.0;
    for &n in &state.cluster_sizes {
        ll += gpd.log_pmf_raw(n) - log_z + ln_gamma(n as f64 + 1.0);
    }
    for (x, &j) in data.iter().zip(&state.allocation) {
        let c = state.centers[j];
        ll += log_gauss_kernel(x.x - c.x, x.y - c.y, state.params.omega);
    }
    ll += state.centers.len() as f64 * state.params.kappa.ln()
        - state.params.kappa * w_dil_area;
    ll
}

fn log_lognormal_pdf(x: f64, a: f64, b: f64) -> f64 {
    let z = (x.ln() - a) / b;
    -x.ln() - 0.5 * z * z - (b * (2.0 * std::f64::consts::PI).sqrt()).ln()
}

fn reflect(mut x: f64, lo: f64, hi: f64) -> f64 {
    loop {
        if x < lo {
            x = 2.0 * lo - x;
        } else if x > hi {
            x = 2.0 * hi - x;
        } else {
            return x;
        }
    }
}

/// One GTP chain: owns its state and RNG.
pub struct GtpSampler<'a> {
    data: &'a [Point],
    w_dil: &'a DilatedWindow,
    area: f64,
    control: &'a GtpControl,
    rel_kappa: f64,
    rel_omega: f64,
    rel_theta: f64,
    pub state: GtpState,
    rng: ChaCha8Rng,
}

impl<'a> GtpSampler<'a> {
    pub fn new(data: &'a [Point], w_dil: &'a DilatedWindow, control: &'a GtpControl) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Config("the point pattern is empty".into()));
        }
        control.validate()?;
        let rng = derive_rng(control.seed, "gtp-chain");

        // initial parameters at the prior medians; lambda at 0 when the
        // prior support allows it
        let kappa = control.a_kappa.exp();
        let omega = control.a_omega.exp();
        let theta = control.a_theta.exp();
        let lambda = if (control.l_lambda..control.u_lambda).contains(&0.0) {
            0.0
        } else {
            0.5 * (control.l_lambda + control.u_lambda)
        };
        let params = GtpParams::new(kappa, omega, lambda, theta)?;

        // Initial clustering by single linkage at ~3 prior spreads: the
        // chain merges over-split clusters extremely slowly (one
        // point-reallocation at a time through unlikely intermediate
        // states), so starting near a coherent clustering matters.
        let link2 = (3.0 * omega).powi(2);
        let n = data.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if data[i].dist2(&data[j]) <= link2 {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[ri] = rj;
                    }
                }
            }
        }
        let mut root_to_cluster: std::collections::HashMap<usize, usize> =
            std::collections::HashMap::new();
        let mut allocation = vec![0usize; n];
        let mut centers: Vec<Point> = Vec::new();
        let mut cluster_sizes: Vec<u64> = Vec::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            let next = centers.len();
            let j = *root_to_cluster.entry(r).or_insert(next);
            if j == centers.len() {
                centers.push(Point::new(0.0, 0.0));
                cluster_sizes.push(0);
            }
            allocation[i] = j;
            centers[j] = Point::new(centers[j].x + data[i].x, centers[j].y + data[i].y);
            cluster_sizes[j] += 1;
        }
        for (c, &m) in centers.iter_mut().zip(&cluster_sizes) {
            *c = Point::new(c.x / m as f64, c.y / m as f64);
        }
        // a centroid can leave a non-convex window; fall back to a
        // member point, which is always inside
        for (j, c) in centers.iter_mut().enumerate() {
            if !w_dil.contains(c) {
                let i = allocation.iter().position(|&a| a == j).unwrap();
                *c = data[i];
            }
        }
        let mut state = GtpState {
            centers,
            allocation,
            params,
            cluster_sizes,
            loglik: 0.0,
        };
        let area = w_dil.area();
        state.loglik = gtp_loglik(data, &state, area);
        Ok(GtpSampler {
            data,
            w_dil,
            area,
            control,
            rel_kappa: control.skappa / control.prior_mean_kappa(),
            rel_omega: control.somega / control.prior_mean_omega(),
            rel_theta: control.stheta / control.prior_mean_theta(),
            state,
            rng,
        })
    }

    pub fn loglik_fresh(&self) -> f64 {
        gtp_loglik(self.data, &self.state, self.area)
    }

    fn accept(&mut self, log_ratio: f64) -> bool {
        let u: f64 = self.rng.gen_range(0.0..1.0);
        log_ratio >= 0.0 || u.ln() < log_ratio
    }

    /// Sequential MH updates for kappa, omega, lambda, theta. Positive
    /// parameters use multiplicative log-scale walks with the Jacobian
    /// in the ratio; lambda uses an additive walk reflected at the
    /// prior bounds.
    pub fn step_params(&mut self) -> (bool, bool, bool, bool) {
        let scale = self.control.target_scale;
        let n_c = self.state.centers.len() as f64;

        // kappa: only the center Poisson term moves
        let acc_kappa = {
            let e: f64 = StandardNormal.sample(&mut self.rng);
            let kappa = self.state.params.kappa;
            let cand = kappa * (self.rel_kappa * e).exp();
            let d_ll = n_c * (cand.ln() - kappa.ln()) - (cand - kappa) * self.area;
            let d_prior = log_lognormal_pdf(cand, self.control.a_kappa, self.control.b_kappa)
                - log_lognormal_pdf(kappa, self.control.a_kappa, self.control.b_kappa);
            let jacobian = cand.ln() - kappa.ln();
            let lr = scale * d_ll + d_prior + jacobian;
            if self.accept(lr) {
                self.state.params.kappa = cand;
                self.state.loglik += d_ll;
                true
            } else {
                false
            }
        };

        // omega: all Gaussian kernel terms move
        let acc_omega = {
            let e: f64 = StandardNormal.sample(&mut self.rng);
            let omega = self.state.params.omega;
            let cand = omega * (self.rel_omega * e).exp();
            let mut d_ll = 0.0;
            for (x, &j) in self.data.iter().zip(&self.state.allocation) {
                let c = self.state.centers[j];
                d_ll += log_gauss_kernel(x.x - c.x, x.y - c.y, cand)
                    - log_gauss_kernel(x.x - c.x, x.y - c.y, omega);
            }
            let d_prior = log_lognormal_pdf(cand, self.control.a_omega, self.control.b_omega)
                - log_lognormal_pdf(omega, self.control.a_omega, self.control.b_omega);
            let jacobian = cand.ln() - omega.ln();
            let lr = scale * d_ll + d_prior + jacobian;
            if self.accept(lr) {
                self.state.params.omega = cand;
                self.state.loglik += d_ll;
                true
            } else {
                false
            }
        };

        // lambda: reflected additive walk, flat prior inside the bounds
        let acc_lambda = {
            let e: f64 = StandardNormal.sample(&mut self.rng);
            let lambda = self.state.params.gpd.lambda;
            let cand = reflect(
                lambda + self.control.dlambda * e,
                self.control.l_lambda,
                self.control.u_lambda,
            );
            let cand_gpd = GpdParams {
                lambda: cand,
                theta: self.state.params.gpd.theta,
            };
            let d_ll = self.gpd_terms(&cand_gpd) - self.gpd_terms(&self.state.params.gpd);
            let lr = scale * d_ll;
            if self.accept(lr) {
                self.state.params.gpd = cand_gpd;
                self.state.loglik += d_ll;
                true
            } else {
                false
            }
        };

        // theta: multiplicative walk
        let acc_theta = {
            let e: f64 = StandardNormal.sample(&mut self.rng);
            let theta = self.state.params.gpd.theta;
            let cand = theta * (self.rel_theta * e).exp();
            let cand_gpd = GpdParams {
                lambda: self.state.params.gpd.lambda,
                theta: cand,
            };
            let d_ll = self.gpd_terms(&cand_gpd) - self.gpd_terms(&self.state.params.gpd);
            let d_prior = log_lognormal_pdf(cand, self.control.a_theta, self.control.b_theta)
                - log_lognormal_pdf(theta, self.control.a_theta, self.control.b_theta);
            let jacobian = cand.ln() - theta.ln();
            let lr = scale * d_ll + d_prior + jacobian;
            if self.accept(lr) {
                self.state.params.gpd = cand_gpd;
                self.state.loglik += d_ll;
                true
            } else {
                false
            }
        };

        (acc_kappa, acc_omega, acc_lambda, acc_theta)
    }

    /// Sum of the GPD cluster-size terms under `gpd`, renormalization
    /// included (it matters for negative lambda).
    fn gpd_terms(&self, gpd: &GpdParams) -> f64 {
        let log_z = gpd.log_normalizer();
        self.state
            .cluster_sizes
            .iter()
            .map(|&n| gpd.log_pmf_raw(n) - log_z + ln_gamma(n as f64 + 1.0))
            .sum()
    }

    /// Birth adds an unconnected center; death removes only centers
    /// with no connections; move perturbs any center.
    pub fn step_centers(&mut self) -> bool {
        let scale = self.control.target_scale;
        let kind = self.rng.gen_range(0..3usize);
        let gpd = self.state.params.gpd;
        let kappa = self.state.params.kappa;
        match kind {
            0 => {
                // birth of an empty center
                let p = self.w_dil.sample_uniform(1, &mut self.rng)[0];
                let d_ll = gpd.log_pmf(0) + kappa.ln();
                let n_empty_after =
                    self.state.cluster_sizes.iter().filter(|&&n| n == 0).count() as f64 + 1.0;
                let lr = scale * d_ll + (self.area / n_empty_after).ln();
                if self.accept(lr) {
                    self.state.centers.push(p);
                    self.state.cluster_sizes.push(0);
                    self.state.loglik += d_ll;
                    true
                } else {
                    false
                }
            }
            1 => {
                // death of an empty center
                let empties: Vec<usize> = self
                    .state
                    .cluster_sizes
                    .iter()
                    .enumerate()
                    .filter(|(_, &n)| n == 0)
                    .map(|(i, _)| i)
                    .collect();
                if empties.is_empty() || self.state.centers.len() == 1 {
                    return false;
                }
                let victim = empties[self.rng.gen_range(0..empties.len())];
                let d_ll = -(gpd.log_pmf(0) + kappa.ln());
                let lr = scale * d_ll + (empties.len() as f64 / self.area).ln();
                if self.accept(lr) {
                    let last = self.state.centers.len() - 1;
                    self.state.centers.swap_remove(victim);
                    self.state.cluster_sizes.swap_remove(victim);
                    // swap_remove moved the last center into `victim`
                    if victim != last {
                        for a in &mut self.state.allocation {
                            if *a == last {
                                *a = victim;
                            }
                        }
                    }
                    self.state.loglik += d_ll;
                    true
                } else {
                    false
                }
            }
            _ => {
                // symmetric Gaussian move of any center
                let j = self.rng.gen_range(0..self.state.centers.len());
                let dx: f64 = StandardNormal.sample(&mut self.rng);
                let dy: f64 = StandardNormal.sample(&mut self.rng);
                let old = self.state.centers[j];
                let p = Point::new(
                    old.x + self.control.smove * dx,
                    old.y + self.control.smove * dy,
                );
                if !self.w_dil.contains(&p) {
                    let _: f64 = self.rng.gen_range(0.0..1.0);
                    return false;
                }
                let omega = self.state.params.omega;
                let mut d_ll = 0.0;
                for (x, &a) in self.data.iter().zip(&self.state.allocation) {
                    if a == j {
                        d_ll += log_gauss_kernel(x.x - p.x, x.y - p.y, omega)
                            - log_gauss_kernel(x.x - old.x, x.y - old.y, omega);
                    }
                }
                let lr = scale * d_ll;
                if self.accept(lr) {
                    self.state.centers[j] = p;
                    self.state.loglik += d_ll;
                    true
                } else {
                    false
                }
            }
        }
    }

    /// Propose reallocating one uniformly chosen data point to a
    /// uniformly chosen center.
    pub fn step_connections(&mut self) -> bool {
        let n_centers = self.state.centers.len();
        if n_centers == 1 {
            return false;
        }
        let scale = self.control.target_scale;
        let i = self.rng.gen_range(0..self.data.len());
        let target = self.rng.gen_range(0..n_centers);
        let current = self.state.allocation[i];
        if target == current {
            // same-center proposal: accepted, nothing changes
            let _: f64 = self.rng.gen_range(0.0..1.0);
            return true;
        }
        let gpd = self.state.params.gpd;
        let omega = self.state.params.omega;
        let x = self.data[i];
        let (n_cur, n_tgt) = (
            self.state.cluster_sizes[current],
            self.state.cluster_sizes[target],
        );
        // the normalizer cancels (same gpd on both sides); the cluster
        // factorials contribute ln((n_tgt + 1) / n_cur)
        let d_gpd = gpd.log_pmf_raw(n_cur - 1) - gpd.log_pmf_raw(n_cur)
            + gpd.log_pmf_raw(n_tgt + 1)
            - gpd.log_pmf_raw(n_tgt)
            + ((n_tgt + 1) as f64 / n_cur as f64).ln();
        let c_cur = self.state.centers[current];
        let c_tgt = self.state.centers[target];
        let d_kernel = log_gauss_kernel(x.x - c_tgt.x, x.y - c_tgt.y, omega)
            - log_gauss_kernel(x.x - c_cur.x, x.y - c_cur.y, omega);
        let d_ll = d_gpd + d_kernel;
        if self.accept(scale * d_ll) {
            self.state.allocation[i] = target;
            self.state.cluster_sizes[current] -= 1;
            self.state.cluster_sizes[target] += 1;
            self.state.loglik += d_ll;
            true
        } else {
            false
        }
    }

    fn check_invariants(&self) -> Result<()> {
        let total: u64 = self.state.cluster_sizes.iter().sum();
        if total != self.data.len() as u64 {
            return Err(Error::Numeric(format!(
                "allocation bookkeeping broken: {total} != {}",
                self.data.len()
            )));
        }
        let fresh = self.loglik_fresh();
        if (fresh - self.state.loglik).abs() > 1e-6 * (1.0 + fresh.abs()) {
            return Err(Error::Numeric(format!(
                "GTP log-likelihood cache drifted: cached {} vs fresh {fresh}",
                self.state.loglik
            )));
        }
        Ok(())
    }
}

/// Run the GTP chain: each sweep applies the parameter block, one
/// center update and the configured number of connection updates.
/// Deterministic given the control seed.
pub fn estgtp(
    data: &[Point],
    w_dil: &DilatedWindow,
    control: &GtpControl,
    mut sink: Option<&mut dyn std::io::Write>,
) -> Result<GtpTrace> {
    let mut sampler = GtpSampler::new(data, w_dil, control)?;
    if let Some(s) = sink.as_deref_mut() {
        writeln!(
            s,
            "iter,kappa,omega,lambda,theta,n_centers,loglik,acc_kappa,acc_omega,acc_lambda,acc_theta,acc_centers,acc_conn"
        )
        .map_err(|e| Error::Io {
            path: "<trace sink>".into(),
            source: e,
        })?;
    }
    let n = control.iter;
    let mut trace = GtpTrace {
        iter: n,
        kappa: Vec::with_capacity(n),
        omega: Vec::with_capacity(n),
        lambda: Vec::with_capacity(n),
        theta: Vec::with_capacity(n),
        n_centers: Vec::with_capacity(n),
        loglik: Vec::with_capacity(n),
        acc_kappa: Vec::with_capacity(n),
        acc_omega: Vec::with_capacity(n),
        acc_lambda: Vec::with_capacity(n),
        acc_theta: Vec::with_capacity(n),
        acc_centers: Vec::with_capacity(n),
        acc_conn: Vec::with_capacity(n),
    };
    for sweep in 1..=n {
        let (ak, ao, al, at) = sampler.step_params();
        let ac = sampler.step_centers();
        let mut aconn = false;
        for _ in 0..control.connection_updates.max(1) {
            aconn |= sampler.step_connections();
        }
        trace.kappa.push(sampler.state.params.kappa);
        trace.omega.push(sampler.state.params.omega);
        trace.lambda.push(sampler.state.params.gpd.lambda);
        trace.theta.push(sampler.state.params.gpd.theta);
        trace.n_centers.push(sampler.state.centers.len());
        trace.loglik.push(sampler.state.loglik);
        trace.acc_kappa.push(ak);
        trace.acc_omega.push(ao);
        trace.acc_lambda.push(al);
        trace.acc_theta.push(at);
        trace.acc_centers.push(ac);
        trace.acc_conn.push(aconn);
        if let Some(s) = sink.as_deref_mut() {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                sweep,
                sampler.state.params.kappa,
                sampler.state.params.omega,
                sampler.state.params.gpd.lambda,
                sampler.state.params.gpd.theta,
                sampler.state.centers.len(),
                sampler.state.loglik,
                u8::from(ak),
                u8::from(ao),
                u8::from(al),
                u8::from(at),
                u8::from(ac),
                u8::from(aconn)
            )
            .map_err(|e| Error::Io {
                path: "<trace sink>".into(),
                source: e,
            })?;
        }
        if sweep % 1000 == 0 {
            if let Err(e) = sampler.check_invariants() {
                let dump = serde_json::to_string(&sampler.state).unwrap_or_default();
                return Err(Error::Stage {
                    stage: format!("GTP sweep {sweep} (state dump: {dump})"),
                    source: Box::new(e),
                });
            }
        }
    }
    Ok(trace)
}

/// Medians and 95% posterior intervals over the thinned post-discard
/// samples, plus the dispersion verdict from the lambda interval.
pub fn summarize_gtp(trace: &GtpTrace, discard: usize, step: usize) -> Result<GtpSummary> {
    if discard >= trace.kappa.len() {
        return Err(Error::Config(format!(
            "discard ({discard}) must be smaller than the trace length ({})",
            trace.kappa.len()
        )));
    }
    if step == 0 {
        return Err(Error::Config("thinning step must be >= 1".into()));
    }
    let thin = |xs: &[f64]| -> Vec<f64> { xs[discard..].iter().step_by(step).copied().collect() };
    let summarize_one = |xs: &[f64]| -> [f64; 3] {
        [
            quantile(xs, 0.025),
            quantile(xs, 0.5),
            quantile(xs, 0.975),
        ]
    };
    let kappa = thin(&trace.kappa);
    if kappa.is_empty() {
        return Err(Error::Config("thinned sample is empty".into()));
    }
    let lambda = thin(&trace.lambda);
    let lam_q = summarize_one(&lambda);
    let verdict = if lam_q[0] > 0.0 {
        DispersionVerdict::OverDispersed
    } else if lam_q[2] < 0.0 {
        DispersionVerdict::UnderDispersed
    } else {
        DispersionVerdict::PoissonNotRejected
    };
    Ok(GtpSummary {
        kappa: summarize_one(&kappa),
        omega: summarize_one(&thin(&trace.omega)),
        lambda: lam_q,
        theta: summarize_one(&thin(&trace.theta)),
        verdict,
        sample_count: kappa.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{dilate, Window};
    use crate::model::{gtp_dilation_radius, rgtp};
    use rand::SeedableRng;

    fn setup() -> (Vec<Point>, Window, DilatedWindow) {
        let w = Window::unit_square();
        let params = GtpParams::new(30.0, 0.03, 0.3, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let sim = rgtp(&params, &w, &mut rng).unwrap();
        let w_dil = dilate(&w, gtp_dilation_radius(0.03), 0.005).unwrap();
        (sim.points, w, w_dil)
    }

    fn quick_control() -> GtpControl {
        let mut c = GtpControl::defaults();
        c.a_kappa = 30.0f64.ln();
        c.b_kappa = 0.7;
        c.a_omega = 0.03f64.ln();
        c.b_omega = 0.5;
        c.a_theta = 2.0f64.ln();
        c.b_theta = 0.7;
        c.skappa = c.prior_mean_kappa() / 50.0;
        c.somega = c.prior_mean_omega() / 50.0;
        c.stheta = c.prior_mean_theta() / 50.0;
        c.dlambda = 0.05;
        c.smove = 0.05;
        c.seed = 5;
        c
    }

    #[test]
    fn loglik_single_empty_center_contains_neg_theta() {
        // 1 center, 0 allocated points, lambda=0: log p(0) = -theta
        let (_, _, w_dil) = setup();
        let data: Vec<Point> = vec![];
        let theta = 1.7;
        let state = GtpState {
            centers: vec![Point::new(0.5, 0.5)],
            allocation: vec![],
            params: GtpParams::new(2.0, 0.05, 0.0, theta).unwrap(),
            cluster_sizes: vec![0],
            loglik: 0.0,
        };
        let area = w_dil.area();
        let ll = gtp_loglik(&data, &state, area);
        let expect = -theta + 2.0f64.ln() - 2.0 * area;
        assert!((ll - expect).abs() < 1e-12);
    }

    #[test]
    fn loglik_matches_hand_computed() {
        let (_, _, w_dil) = setup();
        let data = vec![Point::new(0.2, 0.2), Point::new(0.8, 0.8)];
        let params = GtpParams::new(5.0, 0.1, 0.2, 1.5).unwrap();
        let c = Point::new(0.25, 0.25);
        let state = GtpState {
            centers: vec![c],
            allocation: vec![0, 0],
            params,
            cluster_sizes: vec![2],
            loglik: 0.0,
        };
        let area = w_dil.area();
        let ll = gtp_loglik(&data, &state, area);
        // cluster of 2: gpd_pmf(2) * 2!
        let mut expect = params.gpd.log_pmf(2) + 2.0f64.ln();
        for x in &data {
            expect += log_gauss_kernel(x.x - c.x, x.y - c.y, 0.1);
        }
        expect += 5.0f64.ln() - 5.0 * area;
        assert!((ll - expect).abs() < 1e-12);
    }

    #[test]
    fn loglik_poisson_reduction() {
        // lambda = 0: the GPD terms reduce to the Poisson-cluster
        // allocation likelihood
        let (_, _, w_dil) = setup();
        let data = vec![Point::new(0.2, 0.2), Point::new(0.3, 0.2), Point::new(0.8, 0.8)];
        let params = GtpParams::new(4.0, 0.1, 0.0, 2.5).unwrap();
        let centers = vec![Point::new(0.25, 0.2), Point::new(0.8, 0.75)];
        let state = GtpState {
            centers: centers.clone(),
            allocation: vec![0, 0, 1],
            params,
            cluster_sizes: vec![2, 1],
            loglik: 0.0,
        };
        let area = w_dil.area();
        let ll = gtp_loglik(&data, &state, area);
        // independent Poisson-cluster implementation: summing the
        // allocation-augmented terms pois_pmf(n) * n! = theta^n e^-theta
        // over allocations gives prod_x sum_j theta k(x - c_j)
        let theta: f64 = 2.5;
        let cluster_term = |n: u64| -> f64 { n as f64 * theta.ln() - theta };
        let mut expect = cluster_term(2) + cluster_term(1);
        for (x, &j) in data.iter().zip(&state.allocation) {
            expect += log_gauss_kernel(x.x - centers[j].x, x.y - centers[j].y, 0.1);
        }
        expect += 2.0 * 4.0f64.ln() - 4.0 * area;
        assert!((ll - expect).abs() < 1e-12);
    }

    #[test]
    fn chain_deterministic_and_bookkeeping_holds() {
        let (data, _, w_dil) = setup();
        let mut control = quick_control();
        control.iter = 500;
        let t1 = estgtp(&data, &w_dil, &control, None).unwrap();
        let t2 = estgtp(&data, &w_dil, &control, None).unwrap();
        assert_eq!(t1.kappa, t2.kappa);
        assert_eq!(t1.lambda, t2.lambda);
        assert_eq!(t1.loglik, t2.loglik);
        assert_eq!(t1.kappa.len(), 500);
    }

    #[test]
    fn trace_length_five() {
        let (data, _, w_dil) = setup();
        let mut control = quick_control();
        control.iter = 5;
        let t = estgtp(&data, &w_dil, &control, None).unwrap();
        assert_eq!(t.kappa.len(), 5);
    }

    #[test]
    fn allocation_sums_preserved() {
        let (data, _, w_dil) = setup();
        let control = quick_control();
        let mut sampler = GtpSampler::new(&data, &w_dil, &control).unwrap();
        for _ in 0..2000 {
            sampler.step_params();
            sampler.step_centers();
            sampler.step_connections();
            let total: u64 = sampler.state.cluster_sizes.iter().sum();
            assert_eq!(total, data.len() as u64);
        }
        let fresh = sampler.loglik_fresh();
        assert!(
            (fresh - sampler.state.loglik).abs() < 1e-6 * (1.0 + fresh.abs()),
            "cache {} vs fresh {fresh}",
            sampler.state.loglik
        );
    }

    #[test]
    fn lambda_stays_in_prior_bounds() {
        let (data, _, w_dil) = setup();
        let mut control = quick_control();
        control.l_lambda = -0.4;
        control.u_lambda = 0.6;
        control.dlambda = 0.3;
        let mut sampler = GtpSampler::new(&data, &w_dil, &control).unwrap();
        for _ in 0..3000 {
            sampler.step_params();
            let l = sampler.state.params.gpd.lambda;
            assert!((-0.4..=0.6).contains(&l), "lambda {l} escaped");
        }
    }

    #[test]
    fn negative_lambda_respects_truncation() {
        let (data, _, w_dil) = setup();
        let mut control = quick_control();
        control.l_lambda = -0.9;
        control.u_lambda = 0.9;
        control.dlambda = 0.1;
        let mut sampler = GtpSampler::new(&data, &w_dil, &control).unwrap();
        for _ in 0..5000 {
            sampler.step_params();
            sampler.step_centers();
            sampler.step_connections();
            let gpd = sampler.state.params.gpd;
            if let Some(m) = gpd.truncation_bound() {
                assert!(
                    sampler.state.cluster_sizes.iter().all(|&n| n <= m),
                    "cluster size beyond truncation at lambda {}",
                    gpd.lambda
                );
            }
        }
    }

    #[test]
    fn death_only_empty_centers() {
        let (data, _, w_dil) = setup();
        let control = quick_control();
        let mut sampler = GtpSampler::new(&data, &w_dil, &control).unwrap();
        for _ in 0..5000 {
            sampler.step_centers();
            sampler.step_connections();
            // every data point still points at a live center
            for &a in &sampler.state.allocation {
                assert!(a < sampler.state.centers.len());
            }
        }
    }

    #[test]
    fn prior_only_kappa_matches_lognormal() {
        let (data, _, w_dil) = setup();
        let mut control = quick_control();
        control.target_scale = 0.0;
        control.skappa = control.prior_mean_kappa(); // big steps for mixing
        let mut sampler = GtpSampler::new(&data, &w_dil, &control).unwrap();
        let n = 100_000;
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            sampler.step_params();
            samples.push(sampler.state.params.kappa);
        }
        let thinned: Vec<f64> = samples.iter().step_by(20).copied().collect();
        let mut sorted = thinned;
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = sorted.len() as f64;
        let ks = sorted
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let u = crate::model::std_normal_cdf((x.ln() - control.a_kappa) / control.b_kappa);
                (u - i as f64 / m).abs().max(((i + 1) as f64 / m - u).abs())
            })
            .fold(0.0f64, f64::max);
        assert!(ks < 1.63 / m.sqrt(), "KS statistic {ks}");
    }

    #[test]
    fn empty_center_count_matches_closed_form() {
        // with connections frozen, empty centers are born and die with a
        // position-independent weight, so their count is Poisson
        // (kappa p0 |W_dil|) truncated to >= 0; compare by TV distance
        let w = Window::unit_square();
        let data = vec![Point::new(0.5, 0.5)];
        let w_dil = dilate(&w, 0.0, 0.02).unwrap();
        let mut control = quick_control();
        control.a_kappa = 2.0f64.ln();
        control.smove = 0.2;
        let mut sampler = GtpSampler::new(&data, &w_dil, &control).unwrap();
        // freeze params: only center updates run
        let gpd = sampler.state.params.gpd;
        let kappa = sampler.state.params.kappa;
        let rate = kappa * gpd.pmf(0) * w_dil.area();
        let mut counts = std::collections::HashMap::new();
        let steps = 1_000_000;
        for _ in 0..steps {
            sampler.step_centers();
            let empties = sampler
                .state
                .cluster_sizes
                .iter()
                .filter(|&&n| n == 0)
                .count();
            *counts.entry(empties).or_insert(0usize) += 1;
        }
        // Poisson(rate) oracle
        let mut tv = 0.0;
        for n in 0..30usize {
            let mut lp = -(rate) + (n as f64) * rate.ln();
            for i in 1..=n {
                lp -= (i as f64).ln();
            }
            let p = lp.exp();
            let emp = *counts.get(&n).unwrap_or(&0) as f64 / steps as f64;
            tv += 0.5 * (p - emp).abs();
        }
        assert!(tv < 0.02, "TV distance {tv}");
    }

    #[test]
    fn summarize_gtp_behaviour() {
        let trace = GtpTrace {
            iter: 10,
            kappa: vec![2.0; 10],
            omega: vec![0.5; 10],
            lambda: vec![0.2, 0.3, 0.4, 0.5, 0.3, 0.2, 0.4, 0.3, 0.2, 0.5],
            theta: (1..=10).map(|i| i as f64).collect(),
            n_centers: vec![3; 10],
            loglik: vec![0.0; 10],
            acc_kappa: vec![true; 10],
            acc_omega: vec![true; 10],
            acc_lambda: vec![true; 10],
            acc_theta: vec![true; 10],
            acc_centers: vec![true; 10],
            acc_conn: vec![true; 10],
        };
        let s = summarize_gtp(&trace, 0, 1).unwrap();
        // constant series: all three quantiles equal
        assert_eq!(s.kappa, [2.0, 2.0, 2.0]);
        // lambda samples all > 0.1: over-dispersed verdict
        assert_eq!(s.verdict, DispersionVerdict::OverDispersed);
        // quantiles match an independent sort-based implementation
        let mut sorted: Vec<f64> = trace.theta.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |p: f64| {
            let h = (sorted.len() - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        };
        assert!((s.theta[1] - q(0.5)).abs() < 1e-12);
        assert!((s.theta[0] - q(0.025)).abs() < 1e-12);
        assert!((s.theta[2] - q(0.975)).abs() < 1e-12);
        // errors
        assert!(summarize_gtp(&trace, 10, 1).is_err());
        assert!(summarize_gtp(&trace, 0, 0).is_err());
    }
}
