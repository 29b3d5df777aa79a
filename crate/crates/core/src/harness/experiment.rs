use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{generate, reference_curve, CurveSetup, ExperimentConfig};
use crate::alq::SamplerConfig;
use crate::design::draw_sample;
use crate::error::{Error, Result};
use crate::numeric::{fmt_f64, label, stream_id, trapezoid, CompensatedSum};
use crate::popgen::Population;
use crate::weights::{compute_weights, WeightScheme};

/// Outcome of one weighted fit in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub k: usize,
    pub rep: usize,
    pub scheme: WeightScheme,
    pub domain_size: usize,
    /// Posterior mean curve on the grid; `None` when the fit failed.
    pub curve: Option<Vec<f64>>,
    pub failure: Option<String>,
    /// Reference curve of this replication's own population, when
    /// populations are redrawn per replication.
    pub reference: Option<Vec<f64>>,
}

/// Per-replication results of (part of) an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRun {
    pub config: ExperimentConfig,
    pub grid: Vec<f64>,
    pub reference: Vec<f64>,
    pub results: Vec<ReplicationResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scheme: WeightScheme,
    pub k: usize,
    pub grid_x: f64,
    pub mean_curve: f64,
    pub bias: f64,
    pub mse: f64,
    pub n_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub scheme: WeightScheme,
    pub k: usize,
    pub n_replications: usize,
    pub n_failures: usize,
    /// Too many failed fits; the cell's curves are not reported.
    pub aborted: bool,
    pub integrated_abs_bias: Option<f64>,
    pub integrated_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub reference_provenance: String,
    pub grid: Vec<f64>,
    pub reference: Vec<f64>,
    pub rows: Vec<ReportRow>,
    pub cells: Vec<CellSummary>,
}

impl ScenarioReport {
    pub fn cell(&self, scheme: WeightScheme, k: usize) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.scheme == scheme && c.k == k)
    }

    pub fn rows_for(&self, scheme: WeightScheme, k: usize) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(move |r| r.scheme == scheme && r.k == k)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scheme", "K", "grid_x", "mean_curve", "bias", "mse", "n_failures"])?;
        for r in &self.rows {
            w.write_record([
                r.scheme.to_string(),
                r.k.to_string(),
                fmt_f64(r.grid_x),
                fmt_f64(r.mean_curve),
                fmt_f64(r.bias),
                fmt_f64(r.mse),
                r.n_failures.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_reference_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["grid_x", "reference"])?;
        for (x, r) in self.grid.iter().zip(&self.reference) {
            w.write_record([fmt_f64(*x), fmt_f64(*r)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Cell summaries as JSON; missing integrals are written as null.
    pub fn summary_json(&self) -> Result<String> {
        let cells: Vec<serde_json::Value> = self
            .cells
            .iter()
            .map(|c| {
                serde_json::json!({
                    "scheme": c.scheme,
                    "K": c.k,
                    "n_replications": c.n_replications,
                    "n_failures": c.n_failures,
                    "aborted": c.aborted,
                    "integrated_abs_bias": c.integrated_abs_bias.map(fmt_f64),
                    "integrated_mse": c.integrated_mse.map(fmt_f64),
                })
            })
            .collect();
        let v = serde_json::json!({
            "scenario": self.scenario,
            "reference_provenance": self.reference_provenance,
            "cells": cells,
        });
        Ok(serde_json::to_string_pretty(&v)? + "\n")
    }
}

fn fit_seed(cfg: &ExperimentConfig, k: usize, rep: usize, scheme: WeightScheme) -> u64 {
    stream_id(&[
        cfg.seed,
        label("fit"),
        k as u64,
        rep as u64,
        label(&cfg.scenario.label()),
        label(scheme.as_str()),
    ])
}

struct RepContext<'a> {
    pop: &'a Population,
    setup: &'a CurveSetup,
    reference: Option<Vec<f64>>,
}

fn run_cell(cfg: &ExperimentConfig, ctx: &RepContext, k: usize, rep: usize) -> Vec<ReplicationResult> {
    let fail = |scheme, domain_size, msg: String| ReplicationResult {
        k,
        rep,
        scheme,
        domain_size,
        curve: None,
        failure: Some(msg),
        reference: ctx.reference.clone(),
    };
    let sample = match draw_sample(ctx.pop, &cfg.design_for(k, rep)) {
        Ok(s) => s,
        Err(e) => return cfg.schemes.iter().map(|&s| fail(s, 0, e.to_string())).collect(),
    };
    let mask = cfg.scenario.sample_mask(ctx.pop, &sample);
    let idx: Vec<usize> = (0..sample.len()).filter(|&i| mask[i]).collect();
    let x: Vec<f64> = idx.iter().map(|&i| ctx.pop.persons[sample.persons[i].person].x1).collect();
    let y: Vec<f64> = idx.iter().map(|&i| ctx.pop.persons[sample.persons[i].person].y).collect();
    let opts = cfg.weight_options(ctx.pop);
    cfg.schemes
        .iter()
        .map(|&scheme| {
            if idx.is_empty() {
                return fail(scheme, 0, "empty sample domain".into());
            }
            let outcome = compute_weights(&sample, scheme, Some(&mask), &opts).and_then(|w| {
                let wts: Vec<f64> = idx.iter().map(|&i| w.normalized[i]).collect();
                let sampler = SamplerConfig { seed: fit_seed(cfg, k, rep, scheme), ..cfg.model.sampler.clone() };
                ctx.setup.fit_curve(&x, &y, &wts, &cfg.model, &sampler)
            });
            match outcome {
                Err(e) => fail(scheme, idx.len(), e.to_string()),
                Ok(f) if f.divergence_flag => fail(scheme, idx.len(), "divergence rate above limit".into()),
                Ok(f) if !(f.max_rhat <= cfg.max_rhat) => {
                    fail(scheme, idx.len(), format!("max R-hat {} above {}", f.max_rhat, cfg.max_rhat))
                }
                Ok(f) => ReplicationResult {
                    k,
                    rep,
                    scheme,
                    domain_size: idx.len(),
                    curve: Some(f.curve),
                    failure: None,
                    reference: ctx.reference.clone(),
                },
            }
        })
        .collect()
}

fn per_replication_setup(cfg: &ExperimentConfig, base: &CurveSetup, rep: usize) -> Result<(Population, CurveSetup, Vec<f64>)> {
    let pop = generate(&cfg.population_for(rep))?;
    let mut setup = CurveSetup::new(&pop, &cfg.scenario, &cfg.model, &cfg.grid)?;
    // evaluate on the common grid
    let (a, b) = setup.spec.range.expect("setup always sets a range");
    setup.spec.range = Some((a.min(base.grid[0]), b.max(base.grid[base.grid.len() - 1])));
    setup.grid = base.grid.clone();
    let rcfg = ExperimentConfig { seed: stream_id(&[cfg.seed, label("replication"), rep as u64]), ..cfg.clone() };
    let domain = cfg.scenario.population_domain(&pop);
    if domain.is_empty() {
        return Err(Error::EmptyDomain(format!("replication {rep} population has an empty domain")));
    }
    let xs: Vec<f64> = domain.iter().map(|&i| pop.persons[i].x1).collect();
    let ys: Vec<f64> = domain.iter().map(|&i| pop.persons[i].y).collect();
    let sampler = SamplerConfig { seed: stream_id(&[rcfg.seed, label("reference")]), ..cfg.model.sampler.clone() };
    let reference = setup.fit_curve(&xs, &ys, &vec![1.0; xs.len()], &cfg.model, &sampler)?.curve;
    Ok((pop, setup, reference))
}

#[cfg(feature = "parallel")]
fn map_tasks<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_tasks<T, F: Fn(usize) -> T>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Runs replications `reps` (a sub-range of `0..cfg.replications`) for every
/// K and scheme. Runs over disjoint ranges can be merged with [`merge_runs`].
pub fn run_replications(cfg: &ExperimentConfig, reps: Range<usize>) -> Result<ExperimentRun> {
    cfg.validate()?;
    if reps.end > cfg.replications || reps.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "replication range {reps:?} not inside 0..{}",
            cfg.replications
        )));
    }
    let pop = generate(&cfg.population)?;
    let (setup, reference) = reference_curve(&pop, cfg)?;
    let rep_list: Vec<usize> = reps.collect();
    let tasks: Vec<(usize, usize)> =
        cfg.k_values.iter().flat_map(|&k| rep_list.iter().map(move |&r| (k, r))).collect();

    let results: Vec<Vec<ReplicationResult>> = if cfg.per_replication_population {
        let contexts = map_tasks(rep_list.len(), |i| per_replication_setup(cfg, &setup, rep_list[i]));
        let contexts = contexts.into_iter().collect::<Result<Vec<_>>>()?;
        map_tasks(tasks.len(), |t| {
            let (k, rep) = tasks[t];
            let (p, s, r) = &contexts[rep - rep_list[0]];
            run_cell(cfg, &RepContext { pop: p, setup: s, reference: Some(r.clone()) }, k, rep)
        })
    } else {
        let ctx = RepContext { pop: &pop, setup: &setup, reference: None };
        map_tasks(tasks.len(), |t| run_cell(cfg, &ctx, tasks[t].0, tasks[t].1))
    };
    let mut run = ExperimentRun { config: cfg.clone(), grid: setup.grid.clone(), reference, results: results.concat() };
    run.sort();
    Ok(run)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    run_replications(cfg, 0..cfg.replications)
}

/// Combines runs over disjoint replication ranges of the same experiment.
pub fn merge_runs(a: ExperimentRun, b: ExperimentRun) -> Result<ExperimentRun> {
    if a.config != b.config || a.grid != b.grid || a.reference != b.reference {
        return Err(Error::InvalidConfig("runs come from different experiments".into()));
    }
    let mut merged = ExperimentRun { results: [a.results, b.results].concat(), ..a };
    merged.sort();
    let n = merged.results.len();
    merged.results.dedup_by_key(|r| (r.k, r.rep, r.scheme));
    if merged.results.len() != n {
        return Err(Error::InvalidConfig("runs share replications".into()));
    }
    Ok(merged)
}

impl ExperimentRun {
    fn sort(&mut self) {
        let order = |s: WeightScheme| self.config.schemes.iter().position(|&x| x == s).unwrap_or(usize::MAX);
        let korder = |k: usize| self.config.k_values.iter().position(|&x| x == k).unwrap_or(usize::MAX);
        let mut results = std::mem::take(&mut self.results);
        results.sort_by_key(|r| (korder(r.k), r.rep, order(r.scheme)));
        self.results = results;
    }

    /// Bias and MSE against the reference, accumulated in replication order.
    pub fn report(&self) -> ScenarioReport {
        let cfg = &self.config;
        let g = self.grid.len();
        let mut rows = Vec::new();
        let mut cells = Vec::new();
        for &scheme in &cfg.schemes {
            for &k in &cfg.k_values {
                let cell: Vec<&ReplicationResult> =
                    self.results.iter().filter(|r| r.scheme == scheme && r.k == k).collect();
                let n_failures = cell.iter().filter(|r| r.curve.is_none()).count();
                let n_reps = cell.len();
                let aborted = n_reps == 0 || n_failures as f64 > cfg.max_failure_rate * n_reps as f64;
                let ok: Vec<&ReplicationResult> = cell.iter().copied().filter(|r| r.curve.is_some()).collect();
                let mut mean = vec![f64::NAN; g];
                let mut bias = vec![f64::NAN; g];
                let mut mse = vec![f64::NAN; g];
                if !aborted && !ok.is_empty() {
                    let m = ok.len() as f64;
                    for j in 0..g {
                        let (mut c, mut b, mut s) = (CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new());
                        for r in &ok {
                            let v = r.curve.as_ref().expect("filtered")[j];
                            let reference = r.reference.as_ref().map_or(self.reference[j], |rr| rr[j]);
                            let e = v - reference;
                            c.add(v);
                            b.add(e);
                            s.add(e * e);
                        }
                        mean[j] = c.value() / m;
                        bias[j] = b.value() / m;
                        mse[j] = s.value() / m;
                    }
                }
                let usable = !aborted && !ok.is_empty();
                cells.push(CellSummary {
                    scheme,
                    k,
                    n_replications: n_reps,
                    n_failures,
                    aborted,
                    integrated_abs_bias: usable
                        .then(|| trapezoid(&self.grid, &bias.iter().map(|b| b.abs()).collect::<Vec<_>>())),
                    integrated_mse: usable.then(|| trapezoid(&self.grid, &mse)),
                });
                for j in 0..g {
                    rows.push(ReportRow {
                        scheme,
                        k,
                        grid_x: self.grid[j],
                        mean_curve: mean[j],
                        bias: bias[j],
                        mse: mse[j],
                        n_failures,
                    });
                }
            }
        }
        let provenance = format!(
            "equal-weight fit to the {} population domain{}",
            cfg.scenario.label(),
            if cfg.per_replication_population { ", refit for every replication population" } else { "" }
        );
        ScenarioReport {
            scenario: cfg.scenario.label(),
            reference_provenance: provenance,
            grid: self.grid.clone(),
            reference: self.reference.clone(),
            rows,
            cells,
        }
    }

    /// Per-replication curves: `grid_x, curve`, one file per result.
    pub fn write_curves(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for r in &self.results {
            let Some(curve) = &r.curve else { continue };
            let path = dir.join(format!("{}_K{}_rep{:04}.csv", r.scheme, r.k, r.rep));
            let mut w = csv::Writer::from_path(path)?;
            w.write_record(["grid_x", "curve"])?;
            for (x, v) in self.grid.iter().zip(curve) {
                w.write_record([fmt_f64(*x), fmt_f64(*v)])?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{Direction, ScenarioSpec};
    use crate::popgen::PopulationConfig;

    fn small(scenario: ScenarioSpec, reps: usize, schemes: Vec<WeightScheme>) -> ExperimentConfig {
        ExperimentConfig {
            population: PopulationConfig { n_psu: 40, seed: 5, ..Default::default() },
            k_values: vec![10],
            replications: reps,
            schemes,
            scenario,
            model: crate::harness::ModelSpec {
                sampler: SamplerConfig { warmup: 200, draws: 200, ..Default::default() },
                ..Default::default()
            },
            grid: crate::harness::GridSpec { points: 21, ..Default::default() },
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn smoke_run_emits_curve_per_scheme() {
        let cfg = small(ScenarioSpec::s1(), 1, WeightScheme::ALL.to_vec());
        let run = run_experiment(&cfg).unwrap();
        let report = run.report();
        assert_eq!(report.rows.len(), 5 * 21);
        for c in &report.cells {
            assert_eq!(c.n_replications, 1);
        }
        for r in &report.rows {
            if r.n_failures == 0 {
                assert!(r.mse >= r.bias * r.bias * (1.0 - 1e-8));
            }
        }
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("scheme,K,grid_x,mean_curve,bias,mse,n_failures\n"));
    }

    #[test]
    fn merged_halves_match_full_run() {
        let cfg = small(ScenarioSpec::s3(Direction::AtLeast), 4, vec![WeightScheme::Equal, WeightScheme::HhPairwise]);
        let full = run_experiment(&cfg).unwrap();
        let a = run_replications(&cfg, 0..2).unwrap();
        let b = run_replications(&cfg, 2..4).unwrap();
        let merged = merge_runs(b, a.clone()).unwrap();
        assert_eq!(merged, full);
        assert_eq!(merged.report(), full.report());
        assert!(merge_runs(a.clone(), a).is_err());
    }

    #[test]
    fn schemes_do_not_contaminate_each_other() {
        let alone = run_experiment(&small(ScenarioSpec::s1(), 2, vec![WeightScheme::Equal])).unwrap();
        let with = run_experiment(&small(ScenarioSpec::s1(), 2, vec![WeightScheme::Marginal, WeightScheme::Equal]))
            .unwrap();
        let pick = |run: &ExperimentRun| -> Vec<Option<Vec<f64>>> {
            run.results.iter().filter(|r| r.scheme == WeightScheme::Equal).map(|r| r.curve.clone()).collect()
        };
        assert_eq!(pick(&alone), pick(&with));
    }

    #[test]
    fn reference_against_itself_has_zero_bias() {
        let cfg = small(ScenarioSpec::s1(), 1, vec![WeightScheme::Equal]);
        let mut run = run_experiment(&cfg).unwrap();
        for r in &mut run.results {
            r.curve = Some(run.reference.clone());
        }
        assert!(run.report().rows.iter().all(|r| r.bias == 0.0 && r.mse == 0.0));
    }

    #[test]
    fn per_replication_populations_run() {
        let mut cfg = small(ScenarioSpec::s1(), 2, vec![WeightScheme::Marginal]);
        cfg.per_replication_population = true;
        let run = run_experiment(&cfg).unwrap();
        assert!(run.results.iter().all(|r| r.reference.is_some()));
        assert_ne!(run.results[0].reference, run.results[1].reference);
    }
}
