//! End-to-end commands behind the CLI: simulation, the two-step fit,
//! report regeneration and input validation.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{read_pattern_csv, write_pattern_csv, RunConfig};
use crate::covariates::CovariateSet;
use crate::error::{Error, Result};
use crate::firstorder::{fit_poisson_intensity, PoissonFit};
use crate::geometry::{default_cell, dilate, make_grid, DilatedWindow, Point, Region, Window};
use crate::gtp::{estgtp, summarize_gtp, GtpControl, GtpTrace};
use crate::mcmc::{run_chain, ChainTrace};
use crate::model::{rgtp, simulate_thomas, GtpParams, ThomasParams};
use crate::reporting::{
    emit_acceptance, emit_series, emit_summary, emit_surface, estimated_surfaces, median,
    summarize, ParamSummary, PosteriorSummary, PvalueSummary,
};
use crate::rng::derive_rng;

/// Sliding window used for acceptance-rate diagnostics plots.
const ACCEPTANCE_WINDOW: usize = 200;

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Numeric(format!("serialization failed: {e}")))?;
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Inputs shared by the fit commands, loaded and cross-checked.
struct LoadedInputs {
    w: Window,
    w_dil: DilatedWindow,
    dilation: f64,
    data: Vec<Point>,
    covs: CovariateSet,
}

fn dilation_cell(w: &Window, radius: f64) -> f64 {
    let cell = default_cell(w);
    if radius > 0.0 {
        cell.min(radius / 2.0)
    } else {
        cell
    }
}

fn load_inputs(cfg: &RunConfig, dilation_override: Option<f64>) -> Result<LoadedInputs> {
    let spec = cfg.window_spec()?;
    let w = spec.to_window()?;
    let dilation = dilation_override.unwrap_or(spec.dilation);
    let w_dil = dilate(&w, dilation, dilation_cell(&w, dilation))?;
    let pattern_path = cfg.pattern.as_ref().ok_or_else(|| {
        Error::Config("this command needs a 'pattern' path in the config".into())
    })?;
    let data = read_pattern_csv(&cfg.resolve_path(pattern_path))?;
    if data.is_empty() {
        return Err(Error::Validation("the point pattern is empty".into()));
    }
    for (i, p) in data.iter().enumerate() {
        if !w.contains(p) {
            return Err(Error::Validation(format!(
                "point {} at ({}, {}) lies outside the observation window",
                i + 1,
                p.x,
                p.y
            )));
        }
    }
    let covs = cfg.load_covariates()?;
    for c in covs
        .z_beta
        .iter()
        .chain(&covs.z_alpha)
        .chain(&covs.z_omega)
    {
        c.check_covers(&w_dil)?;
    }
    Ok(LoadedInputs {
        w,
        w_dil,
        dilation,
        data,
        covs,
    })
}

/// Per-chain seeds stay deterministic in the base seed and the chain
/// index; chain 1 uses the base seed untouched.
fn chain_seed(base: u64, chain: usize) -> u64 {
    base ^ (chain as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Serialize)]
struct FirstOrderReport {
    coefficients: Vec<f64>,
    standard_errors: Vec<f64>,
    log_likelihood: f64,
    iterations: usize,
    converged: bool,
}

impl FirstOrderReport {
    fn new(fit: &PoissonFit) -> Self {
        FirstOrderReport {
            coefficients: fit.coeffs.clone(),
            standard_errors: fit.standard_errors(),
            log_likelihood: fit.log_lik,
            iterations: fit.iterations,
            converged: fit.converged,
        }
    }
}

/// Check every input referenced by the config without running anything.
pub fn cmd_validate(cfg: &RunConfig, quiet: bool) -> Result<()> {
    let inputs = load_inputs(cfg, None)?;
    let l = inputs.covs.z_alpha.len();
    let m = inputs.covs.z_omega.len();
    cfg.control
        .resolve(inputs.data.len(), &inputs.w, l, m, cfg.seed.unwrap_or(0))?;
    cfg.gtp_control.resolve(cfg.seed.unwrap_or(0))?;
    if !quiet {
        println!(
            "window: {} rectangle(s), area {}, dilation {}",
            inputs.w.rects().len(),
            inputs.w.area(),
            inputs.dilation
        );
        println!("pattern: {} points, all inside the window", inputs.data.len());
        println!(
            "covariates: {} center, {} cluster-size, {} cluster-spread; all cover the dilated window",
            inputs.covs.z_beta.len(),
            l,
            m
        );
        println!("configuration valid");
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulationReport<'a, T: Serialize> {
    parameters: &'a T,
    seed: u64,
    n_points: usize,
    n_parents: usize,
}

/// Simulate an inhomogeneous Thomas pattern and write it to `out`.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path, seed: u64, quiet: bool) -> Result<()> {
    let sim = cfg.simulation.as_ref().ok_or_else(|| {
        Error::Config("simulate needs a 'simulation' block with kappa, beta, mu, nu".into())
    })?;
    let spec = cfg.window_spec()?;
    let w = spec.to_window()?;
    let w_dil = dilate(&w, spec.dilation, dilation_cell(&w, spec.dilation))?;
    let covs = cfg.load_covariates()?;
    for c in covs
        .z_beta
        .iter()
        .chain(&covs.z_alpha)
        .chain(&covs.z_omega)
    {
        c.check_covers(&w_dil)?;
    }
    let params = ThomasParams {
        kappa: sim.kappa,
        beta: sim.beta.clone(),
        mu: sim.mu.clone(),
        nu: sim.nu.clone(),
    };
    let mut rng = derive_rng(seed, "simulate-thomas");
    let pattern = simulate_thomas(&params, &covs, &w, &w_dil, &mut rng)
        .map_err(|e| e.in_stage("simulation"))?;
    ensure_dir(out)?;
    write_pattern_csv(&out.join("pattern.csv"), &pattern.points)?;
    write_pattern_csv(&out.join("parents.csv"), &pattern.parents)?;
    write_json(
        &out.join("simulation.json"),
        &SimulationReport {
            parameters: sim,
            seed,
            n_points: pattern.points.len(),
            n_parents: pattern.parents.len(),
        },
    )?;
    if !quiet {
        println!(
            "simulated {} points from {} parents into {}",
            pattern.points.len(),
            pattern.parents.len(),
            out.display()
        );
    }
    Ok(())
}

/// Simulate a homogeneous generalized Thomas pattern.
pub fn cmd_simulate_gtp(cfg: &RunConfig, out: &Path, seed: u64, quiet: bool) -> Result<()> {
    let model = cfg.gtp_model.as_ref().ok_or_else(|| {
        Error::Config("simulate-gtp needs a 'gtp_model' block with kappa, omega, lambda, theta".into())
    })?;
    let spec = cfg.window_spec()?;
    let w = spec.to_window()?;
    let params = GtpParams::new(model.kappa, model.omega, model.lambda, model.theta)?;
    let mut rng = derive_rng(seed, "simulate-gtp");
    let pattern = rgtp(&params, &w, &mut rng).map_err(|e| e.in_stage("simulation"))?;
    ensure_dir(out)?;
    write_pattern_csv(&out.join("pattern.csv"), &pattern.points)?;
    write_pattern_csv(&out.join("parents.csv"), &pattern.parents)?;
    write_json(
        &out.join("simulation.json"),
        &SimulationReport {
            parameters: model,
            seed,
            n_points: pattern.points.len(),
            n_parents: pattern.parents.len(),
        },
    )?;
    if !quiet {
        println!(
            "simulated {} points from {} parents into {}",
            pattern.points.len(),
            pattern.parents.len(),
            out.display()
        );
    }
    Ok(())
}

fn open_trace(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| {
        Error::Io {
            path: path.display().to_string(),
            source: e,
        }
    })?))
}

fn emit_thomas_outputs(
    dir: &Path,
    trace: &ChainTrace,
    covs: &CovariateSet,
    w: &Window,
) -> Result<PosteriorSummary> {
    let beta_names: Vec<String> = covs.z_beta.iter().map(|c| c.name.clone()).collect();
    let summary = summarize(trace, &beta_names)?;
    emit_summary(dir, &summary)?;
    emit_series(dir, "kappa", &trace.recorded_series(&trace.kappa))?;
    let l = covs.z_alpha.len();
    let m = covs.z_omega.len();
    for j in 0..=l {
        emit_series(dir, &format!("mu_{j}"), &trace.recorded_component(&trace.mu, j))?;
    }
    for j in 0..=m {
        emit_series(dir, &format!("nu_{j}"), &trace.recorded_component(&trace.nu, j))?;
    }
    let n_centers: Vec<f64> = trace.n_centers.iter().map(|&n| n as f64).collect();
    emit_series(dir, "n_centers", &trace.recorded_series(&n_centers))?;
    emit_series(dir, "loglik", &trace.recorded_series(&trace.loglik))?;
    emit_acceptance(dir, "bdm", &trace.acc_bdm, ACCEPTANCE_WINDOW)?;
    emit_acceptance(dir, "mu", &trace.acc_mu, ACCEPTANCE_WINDOW)?;
    emit_acceptance(dir, "nu", &trace.acc_nu, ACCEPTANCE_WINDOW)?;

    // posterior-median surfaces of the cluster-size and spread fields
    let mu_med: Vec<f64> = (0..=l)
        .map(|j| median(&trace.recorded_component(&trace.mu, j)))
        .collect();
    let nu_med: Vec<f64> = (0..=m)
        .map(|j| median(&trace.recorded_component(&trace.nu, j)))
        .collect();
    let (alpha_s, omega_s) = estimated_surfaces(
        &mu_med,
        &nu_med,
        &covs.z_alpha,
        &covs.z_omega,
        w,
        w.shorter_side() / 50.0,
    )?;
    emit_surface(dir, &alpha_s)?;
    emit_surface(dir, &omega_s)?;
    Ok(summary)
}

/// Pool recorded samples across chains into one summary.
fn pooled_thomas_summary(
    traces: &[ChainTrace],
    covs: &CovariateSet,
) -> Result<PosteriorSummary> {
    let l = covs.z_alpha.len();
    let m = covs.z_omega.len();
    let pooled = |f: &dyn Fn(&ChainTrace) -> Vec<f64>| -> Vec<f64> {
        traces.iter().flat_map(|t| f(t)).collect()
    };
    let mut parameters =
        vec![ParamSummary::from_samples("kappa", &pooled(&|t| t.recorded_series(&t.kappa)))];
    for j in 0..=l {
        parameters.push(ParamSummary::from_samples(
            &format!("mu_{j}"),
            &pooled(&|t| t.recorded_component(&t.mu, j)),
        ));
    }
    for j in 0..=m {
        parameters.push(ParamSummary::from_samples(
            &format!("nu_{j}"),
            &pooled(&|t| t.recorded_component(&t.nu, j)),
        ));
    }
    let mut pvalues = Vec::new();
    for (j, c) in covs.z_beta.iter().enumerate() {
        let series: Vec<f64> = traces
            .iter()
            .flat_map(|t| t.pvalues.iter().map(move |row| row[j]))
            .collect();
        pvalues.push(PvalueSummary {
            covariate: c.name.clone(),
            median_pvalue: median(&series),
        });
    }
    Ok(PosteriorSummary {
        sample_count: traces.iter().map(|t| t.recorded.len()).sum(),
        parameters,
        pvalues,
    })
}

/// Two-step fit of the inhomogeneous Thomas process: Poisson maximum
/// likelihood for the first-order intensity, then `chains` independent
/// MCMC runs over the latent centers.
pub fn cmd_fit(cfg: &RunConfig, out: &Path, seed: u64, chains: usize, quiet: bool) -> Result<()> {
    if chains == 0 {
        return Err(Error::Config("chains must be >= 1".into()));
    }
    let inputs = load_inputs(cfg, None)?;
    let l = inputs.covs.z_alpha.len();
    let m = inputs.covs.z_omega.len();
    let control = cfg
        .control
        .resolve(inputs.data.len(), &inputs.w, l, m, seed)?;
    ensure_dir(out)?;

    // step one: first-order intensity by Poisson maximum likelihood
    let grid_w = make_grid(
        &Region::Window(&inputs.w),
        control.integration_cell,
    )?;
    let beta_hat = fit_poisson_intensity(&inputs.data, &inputs.covs.z_beta, &grid_w)
        .map_err(|e| e.in_stage("first-order fit"))?;
    write_json(&out.join("betahat.json"), &FirstOrderReport::new(&beta_hat))?;
    write_json(&out.join("effective_control.json"), &control)?;
    if !quiet {
        println!(
            "step one: intensity coefficients {:?} after {} iterations",
            beta_hat.coeffs, beta_hat.iterations
        );
    }

    // step two: independent chains, run concurrently
    let mut traces: Vec<Option<ChainTrace>> = (0..chains).map(|_| None).collect();
    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for (i, slot) in traces.iter_mut().enumerate() {
            let chain_dir = out.join(format!("chain_{}", i + 1));
            let mut control_i = control.clone();
            control_i.seed = chain_seed(seed, i);
            let inputs = &inputs;
            let beta_hat = &beta_hat;
            handles.push(scope.spawn(move || -> Result<()> {
                ensure_dir(&chain_dir)?;
                let mut sink = open_trace(&chain_dir.join("trace.csv"))?;
                let trace = run_chain(
                    &inputs.data,
                    &inputs.covs,
                    &inputs.w,
                    &inputs.w_dil,
                    &control_i,
                    beta_hat,
                    Some(&mut sink),
                )
                .map_err(|e| e.in_stage("posterior sampling"))?;
                sink.flush().map_err(|e| Error::Io {
                    path: chain_dir.join("trace.csv").display().to_string(),
                    source: e,
                })?;
                emit_thomas_outputs(&chain_dir, &trace, &inputs.covs, &inputs.w)?;
                *slot = Some(trace);
                Ok(())
            }));
        }
        for h in handles {
            h.join()
                .map_err(|_| Error::Numeric("a chain thread panicked".into()))??;
        }
        Ok(())
    })?;
    let traces: Vec<ChainTrace> = traces.into_iter().map(Option::unwrap).collect();
    let pooled = pooled_thomas_summary(&traces, &inputs.covs)?;
    emit_summary(out, &pooled)?;
    if !quiet {
        for (i, t) in traces.iter().enumerate() {
            println!(
                "chain {}: {} sweeps, {} recorded samples, final {} centers",
                i + 1,
                t.n_step,
                t.recorded.len(),
                t.n_centers.last().copied().unwrap_or(0)
            );
        }
        println!("summary written to {}", out.join("summary.json").display());
    }
    Ok(())
}

fn emit_gtp_outputs(dir: &Path, trace: &GtpTrace, control: &GtpControl) -> Result<()> {
    let summary = summarize_gtp(trace, control.discard.min(trace.kappa.len() - 1), control.step)?;
    write_json(&dir.join("summary.json"), &summary)?;
    let keep = |xs: &[f64]| -> Vec<f64> {
        xs[control.discard.min(xs.len() - 1)..]
            .iter()
            .step_by(control.step.max(1))
            .copied()
            .collect()
    };
    emit_series(dir, "kappa", &keep(&trace.kappa))?;
    emit_series(dir, "omega", &keep(&trace.omega))?;
    emit_series(dir, "lambda", &keep(&trace.lambda))?;
    emit_series(dir, "theta", &keep(&trace.theta))?;
    let n_centers: Vec<f64> = trace.n_centers.iter().map(|&n| n as f64).collect();
    emit_series(dir, "n_centers", &keep(&n_centers))?;
    emit_series(dir, "loglik", &keep(&trace.loglik))?;
    emit_acceptance(dir, "kappa", &trace.acc_kappa, ACCEPTANCE_WINDOW)?;
    emit_acceptance(dir, "omega", &trace.acc_omega, ACCEPTANCE_WINDOW)?;
    emit_acceptance(dir, "lambda", &trace.acc_lambda, ACCEPTANCE_WINDOW)?;
    emit_acceptance(dir, "theta", &trace.acc_theta, ACCEPTANCE_WINDOW)?;
    emit_acceptance(dir, "centers", &trace.acc_centers, ACCEPTANCE_WINDOW)?;
    emit_acceptance(dir, "connections", &trace.acc_conn, ACCEPTANCE_WINDOW)?;
    Ok(())
}

/// Fit the homogeneous generalized Thomas process. The latent-center
/// domain uses the window-spec dilation when positive, otherwise four
/// times the prior mean of the cluster spread.
pub fn cmd_fit_gtp(cfg: &RunConfig, out: &Path, seed: u64, chains: usize, quiet: bool) -> Result<()> {
    if chains == 0 {
        return Err(Error::Config("chains must be >= 1".into()));
    }
    let control = cfg.gtp_control.resolve(seed)?;
    let spec = cfg.window_spec()?;
    let dilation = if spec.dilation > 0.0 {
        spec.dilation
    } else {
        4.0 * (control.a_omega + control.b_omega * control.b_omega / 2.0).exp()
    };
    let inputs = load_inputs(cfg, Some(dilation))?;
    ensure_dir(out)?;
    write_json(&out.join("effective_control.json"), &control)?;

    let mut traces: Vec<Option<GtpTrace>> = (0..chains).map(|_| None).collect();
    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for (i, slot) in traces.iter_mut().enumerate() {
            let chain_dir = out.join(format!("chain_{}", i + 1));
            let mut control_i = control.clone();
            control_i.seed = chain_seed(seed, i);
            let inputs = &inputs;
            let control_ref = &control;
            handles.push(scope.spawn(move || -> Result<()> {
                ensure_dir(&chain_dir)?;
                let mut sink = open_trace(&chain_dir.join("trace.csv"))?;
                let trace = estgtp(&inputs.data, &inputs.w_dil, &control_i, Some(&mut sink))
                    .map_err(|e| e.in_stage("posterior sampling"))?;
                sink.flush().map_err(|e| Error::Io {
                    path: chain_dir.join("trace.csv").display().to_string(),
                    source: e,
                })?;
                emit_gtp_outputs(&chain_dir, &trace, control_ref)?;
                *slot = Some(trace);
                Ok(())
            }));
        }
        for h in handles {
            h.join()
                .map_err(|_| Error::Numeric("a chain thread panicked".into()))??;
        }
        Ok(())
    })?;
    let traces: Vec<GtpTrace> = traces.into_iter().map(Option::unwrap).collect();

    // pooled summary over the thinned post-discard samples of all chains
    let keep = |xs: &[f64]| -> Vec<f64> {
        xs[control.discard.min(xs.len() - 1)..]
            .iter()
            .step_by(control.step.max(1))
            .copied()
            .collect()
    };
    let pool = |f: &dyn Fn(&GtpTrace) -> &Vec<f64>| -> Vec<f64> {
        traces.iter().flat_map(|t| keep(f(t))).collect()
    };
    let lambda = pool(&|t| &t.lambda);
    let lam = [
        crate::reporting::quantile(&lambda, 0.025),
        crate::reporting::quantile(&lambda, 0.5),
        crate::reporting::quantile(&lambda, 0.975),
    ];
    let verdict = if lam[0] > 0.0 {
        crate::gtp::DispersionVerdict::OverDispersed
    } else if lam[2] < 0.0 {
        crate::gtp::DispersionVerdict::UnderDispersed
    } else {
        crate::gtp::DispersionVerdict::PoissonNotRejected
    };
    let q3 = |xs: &[f64]| -> [f64; 3] {
        [
            crate::reporting::quantile(xs, 0.025),
            crate::reporting::quantile(xs, 0.5),
            crate::reporting::quantile(xs, 0.975),
        ]
    };
    let pooled = crate::gtp::GtpSummary {
        kappa: q3(&pool(&|t| &t.kappa)),
        omega: q3(&pool(&|t| &t.omega)),
        lambda: lam,
        theta: q3(&pool(&|t| &t.theta)),
        verdict,
        sample_count: lambda.len(),
    };
    write_json(&out.join("summary.json"), &pooled)?;
    if !quiet {
        for (i, t) in traces.iter().enumerate() {
            println!("chain {}: {} sweeps", i + 1, t.iter);
        }
        println!(
            "lambda 95% interval [{}, {}]: {:?}",
            pooled.lambda[0], pooled.lambda[2], pooled.verdict
        );
    }
    Ok(())
}

/// A parsed generic trace CSV: named numeric columns.
#[derive(Debug)]
struct ParsedTrace {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

fn parse_trace_csv(path: &Path) -> Result<ParsedTrace> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        message: "trace file is empty".into(),
    })?;
    let names: Vec<String> = header.trim().split(',').map(str::to_string).collect();
    if names.is_empty() || names.iter().any(String::is_empty) {
        return Err(Error::Parse {
            path: path.display().to_string(),
            message: format!("malformed header '{header}'"),
        });
    }
    let mut columns = vec![Vec::new(); names.len()];
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                message: format!(
                    "line {}: expected {} fields, found {} — the trace may be truncated",
                    i + 1,
                    names.len(),
                    fields.len()
                ),
            });
        }
        for (j, f) in fields.iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                message: format!("line {}: field '{}' in column '{}' is not numeric", i + 1, f, names[j]),
            })?;
            columns[j].push(v);
        }
    }
    if columns[0].is_empty() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            message: "trace contains a header but no rows".into(),
        });
    }
    Ok(ParsedTrace { names, columns })
}

fn report_one_trace(dir: &Path, trace_path: &Path, quiet: bool) -> Result<()> {
    let parsed = parse_trace_csv(trace_path)?;
    let mut parameters = Vec::new();
    let mut pvalues = Vec::new();
    let mut rows = 0usize;
    for (name, col) in parsed.names.iter().zip(&parsed.columns) {
        rows = col.len();
        if name == "iter" {
            continue;
        }
        if let Some(tag) = name.strip_prefix("acc_") {
            let flags: Vec<bool> = col.iter().map(|&v| v != 0.0).collect();
            emit_acceptance(dir, tag, &flags, ACCEPTANCE_WINDOW)?;
            continue;
        }
        if let Some(tag) = name.strip_prefix("pval_") {
            pvalues.push(PvalueSummary {
                covariate: format!("covariate_{tag}"),
                median_pvalue: median(col),
            });
            emit_series(dir, name, col)?;
            continue;
        }
        parameters.push(ParamSummary::from_samples(name, col));
        emit_series(dir, name, col)?;
    }
    let summary = PosteriorSummary {
        sample_count: rows,
        parameters,
        pvalues,
    };
    emit_summary(dir, &summary)?;
    if !quiet {
        println!(
            "{}: {} rows, {} parameter column(s)",
            trace_path.display(),
            rows,
            summary.parameters.len()
        );
    }
    Ok(())
}

/// Regenerate plots and summaries from trace files already on disk:
/// `out/trace.csv` if present, otherwise every `out/chain_*/trace.csv`.
pub fn cmd_report(out: &Path, quiet: bool) -> Result<()> {
    let mut targets: Vec<(PathBuf, PathBuf)> = Vec::new();
    let direct = out.join("trace.csv");
    if direct.is_file() {
        targets.push((out.to_path_buf(), direct));
    }
    if let Ok(entries) = fs::read_dir(out) {
        let mut dirs: Vec<PathBuf> = entries
            .flatten()
            .map(|e| e.path())
            .filter(|p| {
                p.is_dir()
                    && p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("chain_"))
            })
            .collect();
        dirs.sort();
        for d in dirs {
            let t = d.join("trace.csv");
            if t.is_file() {
                targets.push((d, t));
            }
        }
    }
    if targets.is_empty() {
        return Err(Error::Config(format!(
            "no trace.csv found under {}",
            out.display()
        )));
    }
    for (dir, trace) in &targets {
        report_one_trace(dir, trace, quiet)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_seed_distinct_and_stable() {
        assert_eq!(chain_seed(42, 0), 42);
        assert_ne!(chain_seed(42, 1), chain_seed(42, 2));
        assert_eq!(chain_seed(7, 3), chain_seed(7, 3));
    }

    #[test]
    fn parse_trace_csv_detects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        fs::write(&p, "iter,kappa,acc_x\n1,2.0,1\n2,3.0\n").unwrap();
        let err = parse_trace_csv(&p).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("truncated"), "{msg}");
        assert_eq!(err.exit_code(), 2);

        fs::write(&p, "iter,kappa\n1,abc\n").unwrap();
        let err = parse_trace_csv(&p).unwrap_err();
        assert!(err.to_string().contains("column 'kappa'"), "{err}");

        fs::write(&p, "iter,kappa\n1,2.5\n").unwrap();
        let t = parse_trace_csv(&p).unwrap();
        assert_eq!(t.names, vec!["iter", "kappa"]);
        assert_eq!(t.columns[1], vec![2.5]);
    }

    #[test]
    fn report_generic_trace() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        let mut body = String::from("iter,kappa,pval_1,acc_bdm\n");
        for i in 1..=50 {
            body.push_str(&format!("{i},{},0.{:02},{}\n", i as f64 * 0.1, i % 100, i % 2));
        }
        fs::write(&p, body).unwrap();
        cmd_report(dir.path(), true).unwrap();
        assert!(dir.path().join("summary.json").is_file());
        assert!(dir.path().join("kappa_trace.svg").is_file());
        assert!(dir.path().join("bdm_acceptance.csv").is_file());
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
                .unwrap();
        assert_eq!(summary["parameters"][0]["parameter"], "kappa");
        assert_eq!(summary["pvalues"][0]["covariate"], "covariate_1");
    }

    #[test]
    fn report_errors_without_traces() {
        let dir = tempfile::tempdir().unwrap();
        let err = cmd_report(dir.path(), true).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
