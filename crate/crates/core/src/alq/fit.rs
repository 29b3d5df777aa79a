use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::basis::BasisBundle;
use super::mcmc_stats::{effective_sample_size, split_rhat, ChainRun};
use super::nuts::{sample_nuts, NutsSettings};
use super::posterior::{ModelState, PseudoPosterior, SamplerTarget};
use super::rwm::sample_rwm;
use super::check_loss;
use crate::error::{Error, Result};
use crate::numeric::{fmt_f64, label, lower_median, quantile_sorted, stream_rng, CompensatedSum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerMethod {
    Nuts,
    RandomWalk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub target_accept: f64,
    pub max_depth: usize,
    pub seed: u64,
    pub method: SamplerMethod,
    /// Fraction of divergent post-warmup transitions above which a fit is
    /// flagged.
    pub max_divergence_rate: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 2,
            warmup: 1000,
            draws: 1000,
            target_accept: 0.9,
            max_depth: 10,
            seed: 1,
            method: SamplerMethod::Nuts,
            max_divergence_rate: 0.05,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains < 2 {
            return Err(Error::InvalidConfig("at least 2 chains are needed for diagnostics".into()));
        }
        if self.draws < 4 {
            return Err(Error::InvalidConfig("need at least 4 draws per chain".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidConfig(format!("target_accept {} not in (0, 1)", self.target_accept)));
        }
        if self.max_depth == 0 {
            return Err(Error::InvalidConfig("max_depth must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerDiagnostics {
    pub method: SamplerMethod,
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub accept_rate: f64,
    pub n_divergent: usize,
    pub divergence_rate: f64,
    pub divergence_flag: bool,
    pub max_depth_hits: usize,
    pub step_sizes: Vec<f64>,
    pub parameters: Vec<String>,
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
}

impl SamplerDiagnostics {
    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().fold(f64::NEG_INFINITY, |a, b| if b.is_nan() { f64::INFINITY } else { a.max(b) })
    }

    pub fn min_ess(&self) -> f64 {
        self.ess.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Post-warmup draws of `(theta, tau, lambda)`, stored chain after chain.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub n_chains: usize,
    pub per_chain: usize,
    pub n_theta: usize,
    pub theta: Vec<f64>,
    pub tau: Vec<f64>,
    pub lambda: Vec<f64>,
    pub diagnostics: SamplerDiagnostics,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn theta_row(&self, i: usize) -> &[f64] {
        &self.theta[i * self.n_theta..(i + 1) * self.n_theta]
    }

    pub fn state(&self, i: usize) -> ModelState {
        ModelState { theta: self.theta_row(i).to_vec(), tau: self.tau[i], lambda: self.lambda[i] }
    }

    /// Draws of parameter `j` (theta coordinates, then tau, then lambda),
    /// split by chain.
    pub fn chains_of(&self, j: usize) -> Vec<Vec<f64>> {
        (0..self.n_chains)
            .map(|c| {
                (c * self.per_chain..(c + 1) * self.per_chain)
                    .map(|i| match j {
                        j if j < self.n_theta => self.theta[i * self.n_theta + j],
                        j if j == self.n_theta => self.tau[i],
                        _ => self.lambda[i],
                    })
                    .collect()
            })
            .collect()
    }

    pub fn posterior_mean_theta(&self) -> Vec<f64> {
        (0..self.n_theta)
            .map(|j| {
                let mut s = CompensatedSum::new();
                for i in 0..self.len() {
                    s.add(self.theta[i * self.n_theta + j]);
                }
                s.value() / self.len() as f64
            })
            .collect()
    }

    pub fn parameter_names(n_theta: usize) -> Vec<String> {
        (0..n_theta).map(|j| format!("theta_{j}")).chain(["tau".into(), "lambda".into()]).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["chain".to_string(), "draw".to_string()];
        header.extend(Self::parameter_names(self.n_theta));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![(i / self.per_chain).to_string(), (i % self.per_chain).to_string()];
            rec.extend(self.theta_row(i).iter().map(|v| fmt_f64(*v)));
            rec.push(fmt_f64(self.tau[i]));
            rec.push(fmt_f64(self.lambda[i]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(dir.join("draws.csv"))?)?;
        let json = serde_json::to_string_pretty(&self.diagnostics)?;
        std::fs::write(dir.join("diagnostics.json"), json)?;
        Ok(())
    }
}

fn initial_state(y: &[f64], n_theta: usize, q: f64) -> ModelState {
    let med = lower_median(y).unwrap_or(0.0);
    let mean_loss = y.iter().map(|v| check_loss(v - med, q)).sum::<f64>() / y.len() as f64;
    let tau = if mean_loss > 0.0 && mean_loss.is_finite() { 1.0 / mean_loss } else { 1.0 };
    ModelState { theta: vec![med; n_theta], tau, lambda: 1.0 }
}

fn run_chain(
    target: &SamplerTarget,
    init: &ModelState,
    cfg: &SamplerConfig,
    chain: usize,
) -> Result<ChainRun> {
    let mut rng = stream_rng(cfg.seed, &[label("chain"), chain as u64]);
    let mut u = target.from_state(init);
    for v in u.iter_mut() {
        *v += rng.random_range(-0.5..0.5);
    }
    match cfg.method {
        SamplerMethod::Nuts => {
            let settings = NutsSettings {
                target_accept: cfg.target_accept,
                max_depth: cfg.max_depth,
                ..NutsSettings::default()
            };
            sample_nuts(target, u, cfg.warmup, cfg.draws, &settings, &mut rng)
        }
        SamplerMethod::RandomWalk => sample_rwm(target, u, cfg.warmup, cfg.draws, &mut rng),
    }
}

#[cfg(feature = "parallel")]
fn run_chains(target: &SamplerTarget, init: &ModelState, cfg: &SamplerConfig) -> Vec<Result<ChainRun>> {
    use rayon::prelude::*;
    (0..cfg.chains).into_par_iter().map(|c| run_chain(target, init, cfg, c)).collect()
}

#[cfg(not(feature = "parallel"))]
fn run_chains(target: &SamplerTarget, init: &ModelState, cfg: &SamplerConfig) -> Vec<Result<ChainRun>> {
    (0..cfg.chains).map(|c| run_chain(target, init, cfg, c)).collect()
}

/// Samples the weighted pseudo-posterior with independent chains.
pub fn run_mcmc(
    y: &[f64],
    basis: &BasisBundle,
    weights: &[f64],
    q: f64,
    cfg: &SamplerConfig,
) -> Result<PosteriorDraws> {
    cfg.validate()?;
    let posterior = PseudoPosterior::new(y, basis, weights, q)?;
    if y.is_empty() {
        return Err(Error::EmptyDomain("no observations to fit".into()));
    }
    let target = SamplerTarget::new(posterior);
    let init = initial_state(y, basis.n_basis, q);
    let runs = run_chains(&target, &init, cfg).into_iter().collect::<Result<Vec<_>>>()?;

    let p = basis.n_basis;
    let total = cfg.chains * cfg.draws;
    let mut draws = PosteriorDraws {
        n_chains: cfg.chains,
        per_chain: cfg.draws,
        n_theta: p,
        theta: Vec::with_capacity(total * p),
        tau: Vec::with_capacity(total),
        lambda: Vec::with_capacity(total),
        diagnostics: SamplerDiagnostics {
            method: cfg.method,
            chains: cfg.chains,
            warmup: cfg.warmup,
            draws: cfg.draws,
            accept_rate: 0.0,
            n_divergent: 0,
            divergence_rate: 0.0,
            divergence_flag: false,
            max_depth_hits: 0,
            step_sizes: Vec::new(),
            parameters: PosteriorDraws::parameter_names(p),
            rhat: Vec::new(),
            ess: Vec::new(),
        },
    };
    let mut accept = CompensatedSum::new();
    for run in &runs {
        for i in 0..run.len() {
            let s = target.to_state(run.row(i));
            if !(s.tau > 0.0 && s.lambda > 0.0 && s.theta.iter().all(|t| t.is_finite())) {
                return Err(Error::Sampler(format!("invalid draw {s:?}")));
            }
            draws.theta.extend_from_slice(&s.theta);
            draws.tau.push(s.tau);
            draws.lambda.push(s.lambda);
        }
        accept.extend(run.accept_stats.iter().copied());
        draws.diagnostics.n_divergent += run.n_divergent;
        draws.diagnostics.max_depth_hits += run.max_depth_hits;
        draws.diagnostics.step_sizes.push(run.step_size);
    }
    let d = &mut draws.diagnostics;
    d.accept_rate = accept.value() / total as f64;
    d.divergence_rate = d.n_divergent as f64 / total as f64;
    d.divergence_flag = d.divergence_rate > cfg.max_divergence_rate;
    for j in 0..p + 2 {
        let chains = draws.chains_of(j);
        draws.diagnostics.rhat.push(split_rhat(&chains));
        draws.diagnostics.ess.push(effective_sample_size(&chains));
    }
    Ok(draws)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedCurve {
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub lo95: Vec<f64>,
    pub hi95: Vec<f64>,
}

impl FittedCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "mean", "lo95", "hi95"])?;
        for i in 0..self.x.len() {
            w.write_record([
                fmt_f64(self.x[i]),
                fmt_f64(self.mean[i]),
                fmt_f64(self.lo95[i]),
                fmt_f64(self.hi95[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pointwise posterior mean and central 95% interval of `B(x) theta`.
pub fn fitted_curve(draws: &PosteriorDraws, basis: &BasisBundle, grid: &[f64]) -> Result<FittedCurve> {
    if draws.n_theta != basis.n_basis {
        return Err(Error::DimensionMismatch(format!(
            "draws have {} coefficients, basis has {}",
            draws.n_theta, basis.n_basis
        )));
    }
    if draws.is_empty() {
        return Err(Error::InvalidParameter("no draws".into()));
    }
    let mut curve = FittedCurve {
        x: grid.to_vec(),
        mean: Vec::with_capacity(grid.len()),
        lo95: Vec::with_capacity(grid.len()),
        hi95: Vec::with_capacity(grid.len()),
    };
    let mut values = vec![0.0; draws.len()];
    for &x in grid {
        let row = basis.eval_row(x)?;
        for (i, v) in values.iter_mut().enumerate() {
            *v = row.iter().zip(draws.theta_row(i)).map(|(b, t)| b * t).sum();
        }
        let mut s = CompensatedSum::new();
        s.extend(values.iter().copied());
        curve.mean.push(s.value() / values.len() as f64);
        values.sort_by(f64::total_cmp);
        curve.lo95.push(quantile_sorted(&values, 0.025));
        curve.hi95.push(quantile_sorted(&values, 0.975));
    }
    Ok(curve)
}
