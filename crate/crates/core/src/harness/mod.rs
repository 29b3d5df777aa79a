//! Repeated sampling experiments: scenario domains, reference curves, and
//! bias/MSE of weighted quantile fits across weight schemes and designs.

mod experiment;

use serde::{Deserialize, Serialize};

use crate::alq::{
    build_basis, fitted_curve, run_mcmc, BasisBundle, FittedCurve, KnotRule, PosteriorDraws, SamplerConfig, SplineSpec,
};
use crate::design::{DesignConfig, SampleDraw};
use crate::error::{Error, Result};
use crate::numeric::{label, quantile_sorted, stream_id};
use crate::popgen::{Population, PopulationConfig, Role};
use crate::weights::{PairDivisor, TargetSize, WeightOptions, WeightScheme};

pub use experiment::{
    merge_runs, run_experiment, run_replications, CellSummary, ExperimentRun, ReplicationResult, ReportRow,
    ScenarioReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioId {
    S1,
    S2,
    S3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `y >= c`
    AtLeast,
    /// `y < c`
    Below,
}

impl Direction {
    pub fn passes(self, y: f64, c: f64) -> bool {
        match self {
            Direction::AtLeast => y >= c,
            Direction::Below => y < c,
        }
    }
}

/// Analysis domain.
///
/// S1: sampled persons of the target role. S2: those whose co-sampled
/// partner has the partner role. S3: those whose co-sampled partner's
/// response passes the threshold test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    pub threshold: f64,
    pub direction: Direction,
    pub target_role: Role,
    pub partner_role: Role,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self { id: ScenarioId::S1, threshold: 10.0, direction: Direction::AtLeast, target_role: Role::P2, partner_role: Role::P1 }
    }
}

impl ScenarioSpec {
    pub fn s1() -> Self {
        Self::default()
    }

    pub fn s2() -> Self {
        Self { id: ScenarioId::S2, ..Self::default() }
    }

    pub fn s3(direction: Direction) -> Self {
        Self { id: ScenarioId::S3, direction, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_role == self.partner_role {
            return Err(Error::InvalidConfig("target and partner roles must differ".into()));
        }
        if self.id == ScenarioId::S3 && !self.threshold.is_finite() {
            return Err(Error::InvalidConfig("S3 needs a finite threshold".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match self.id {
            ScenarioId::S1 => "S1".into(),
            ScenarioId::S2 => "S2".into(),
            ScenarioId::S3 => {
                let op = if self.direction == Direction::AtLeast { "ge" } else { "lt" };
                format!("S3_{op}_{}", self.threshold)
            }
        }
    }

    /// Roles counted on a roster for household pair weights.
    pub fn domain_roles(&self) -> Vec<Role> {
        match self.id {
            ScenarioId::S1 => Role::ALL.to_vec(),
            _ => vec![self.target_role, self.partner_role],
        }
    }

    /// Which sampled persons are in the analysis domain.
    pub fn sample_mask(&self, pop: &Population, s: &SampleDraw) -> Vec<bool> {
        s.persons
            .iter()
            .map(|p| {
                if p.role != self.target_role {
                    return false;
                }
                let partner = p.partner.map(|i| &pop.persons[i]);
                match self.id {
                    ScenarioId::S1 => true,
                    ScenarioId::S2 => partner.is_some_and(|q| q.role == self.partner_role),
                    ScenarioId::S3 => partner.is_some_and(|q| {
                        q.role == self.partner_role && self.direction.passes(q.y, self.threshold)
                    }),
                }
            })
            .collect()
    }

    /// Population persons in the reference domain: all target-role persons
    /// for S1 and S2; for S3, those in households whose partner-role member
    /// passes the threshold.
    pub fn population_domain(&self, pop: &Population) -> Vec<usize> {
        (0..pop.n_households())
            .filter_map(|hh| {
                let target = pop.household_member(hh, self.target_role)?;
                if self.id == ScenarioId::S3 {
                    let partner = pop.household_member(hh, self.partner_role)?;
                    if !self.direction.passes(pop.persons[partner].y, self.threshold) {
                        return None;
                    }
                }
                Some(target)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub knots: usize,
    pub degree: usize,
    pub knot_rule: KnotRule,
    pub q: f64,
    pub sampler: SamplerConfig,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { knots: 5, degree: 2, knot_rule: KnotRule::Quantile, q: 0.5, sampler: SamplerConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub points: usize,
    pub lo_quantile: f64,
    pub hi_quantile: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { points: 101, lo_quantile: 0.01, hi_quantile: 0.99 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub population: PopulationConfig,
    /// Design template; `n_psu_selected` is replaced by each entry of `k_values`.
    pub design: DesignConfig,
    pub k_values: Vec<usize>,
    pub replications: usize,
    pub schemes: Vec<WeightScheme>,
    pub scenario: ScenarioSpec,
    pub model: ModelSpec,
    pub grid: GridSpec,
    pub pair_divisor: PairDivisor,
    /// Seeds sampling and MCMC; the population uses `population.seed`.
    pub seed: u64,
    /// Draw a fresh population for every replication instead of one fixed
    /// population per experiment.
    pub per_replication_population: bool,
    pub max_failure_rate: f64,
    pub max_rhat: f64,
    pub save_curves: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            population: PopulationConfig::default(),
            design: DesignConfig::default(),
            k_values: vec![10, 20, 40, 80, 160],
            replications: 200,
            schemes: vec![WeightScheme::Equal, WeightScheme::Marginal, WeightScheme::HhPairwise],
            scenario: ScenarioSpec::default(),
            model: ModelSpec::default(),
            grid: GridSpec::default(),
            pair_divisor: PairDivisor::default(),
            seed: 1,
            per_replication_population: false,
            max_failure_rate: 0.1,
            max_rhat: 1.1,
            save_curves: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.population.validate()?;
        self.scenario.validate()?;
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be at least 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::InvalidConfig("no weight schemes requested".into()));
        }
        let mut schemes = self.schemes.clone();
        schemes.sort();
        schemes.dedup();
        if schemes.len() != self.schemes.len() {
            return Err(Error::InvalidConfig("weight schemes listed twice".into()));
        }
        if self.k_values.is_empty() {
            return Err(Error::InvalidConfig("k_values is empty".into()));
        }
        for &k in &self.k_values {
            if k == 0 || k > self.population.n_psu {
                return Err(Error::InvalidConfig(format!("K = {k} not in 1..={}", self.population.n_psu)));
            }
        }
        let g = &self.grid;
        if g.points < 2 || !(0.0 <= g.lo_quantile && g.lo_quantile < g.hi_quantile && g.hi_quantile <= 1.0) {
            return Err(Error::InvalidConfig("grid needs >= 2 points and 0 <= lo < hi <= 1 quantiles".into()));
        }
        if !(self.model.q > 0.0 && self.model.q < 1.0) {
            return Err(Error::InvalidConfig(format!("q = {} not in (0, 1)", self.model.q)));
        }
        self.model.sampler.validate()
    }

    /// Weight options for the scenario's domain of `pop`.
    pub fn weight_options(&self, pop: &Population) -> WeightOptions {
        WeightOptions {
            domain_roles: self.scenario.domain_roles(),
            pair_divisor: self.pair_divisor,
            target_size: TargetSize::Known(self.scenario.population_domain(pop).len() as f64),
        }
    }

    pub(crate) fn population_for(&self, rep: usize) -> PopulationConfig {
        let mut pc = self.population.clone();
        if self.per_replication_population {
            pc.seed = stream_id(&[self.population.seed, label("replication"), rep as u64]);
        }
        pc
    }

    pub(crate) fn design_for(&self, k: usize, rep: usize) -> DesignConfig {
        DesignConfig {
            n_psu_selected: k,
            seed: stream_id(&[self.seed, label("design"), k as u64, rep as u64]),
            ..self.design.clone()
        }
    }
}

/// Basis, knots and grid shared by the reference and every sample fit:
/// knots at quantiles of the target-role population x1, range equal to its
/// extent, grid between two of its quantiles.
#[derive(Debug, Clone)]
pub struct CurveSetup {
    pub spec: SplineSpec,
    pub grid: Vec<f64>,
}

impl CurveSetup {
    pub fn new(pop: &Population, scenario: &ScenarioSpec, model: &ModelSpec, grid: &GridSpec) -> Result<Self> {
        let mut x: Vec<f64> = pop.persons.iter().filter(|p| p.role == scenario.target_role).map(|p| p.x1).collect();
        if x.is_empty() {
            return Err(Error::EmptyDomain(format!("no {} persons in the population", scenario.target_role)));
        }
        x.sort_by(f64::total_cmp);
        let lo = quantile_sorted(&x, grid.lo_quantile);
        let hi = quantile_sorted(&x, grid.hi_quantile);
        let step = (hi - lo) / (grid.points - 1) as f64;
        let grid = (0..grid.points).map(|i| if i + 1 == grid.points { hi } else { lo + i as f64 * step }).collect();
        let spec = SplineSpec {
            knots: model.knots,
            degree: model.degree,
            rule: model.knot_rule,
            range: Some((x[0], x[x.len() - 1])),
            knot_data: Some(x),
        };
        Ok(Self { spec, grid })
    }

    pub fn basis(&self, x: &[f64]) -> Result<BasisBundle> {
        build_basis(x, &self.spec)
    }

    /// Posterior mean curve on the grid of a weighted fit.
    pub fn fit_curve(&self, x: &[f64], y: &[f64], w: &[f64], model: &ModelSpec, sampler: &SamplerConfig) -> Result<FitOutcome> {
        let (draws, curve) = self.fit_draws(x, y, w, model, sampler)?;
        Ok(FitOutcome {
            curve: curve.mean,
            max_rhat: draws.diagnostics.max_rhat(),
            divergence_flag: draws.diagnostics.divergence_flag,
        })
    }

    /// Posterior draws of a weighted fit, with the curve band on the grid.
    pub fn fit_draws(
        &self,
        x: &[f64],
        y: &[f64],
        w: &[f64],
        model: &ModelSpec,
        sampler: &SamplerConfig,
    ) -> Result<(PosteriorDraws, FittedCurve)> {
        let basis = self.basis(x)?;
        let draws = run_mcmc(y, &basis, w, model.q, sampler)?;
        let curve = fitted_curve(&draws, &basis, &self.grid)?;
        Ok((draws, curve))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub curve: Vec<f64>,
    pub max_rhat: f64,
    pub divergence_flag: bool,
}

/// Equal-weight fit to the scenario's population domain.
pub fn reference_curve(pop: &Population, cfg: &ExperimentConfig) -> Result<(CurveSetup, Vec<f64>)> {
    let setup = CurveSetup::new(pop, &cfg.scenario, &cfg.model, &cfg.grid)?;
    let domain = cfg.scenario.population_domain(pop);
    if domain.is_empty() {
        return Err(Error::EmptyDomain(format!("scenario {} has no population members", cfg.scenario.label())));
    }
    let x: Vec<f64> = domain.iter().map(|&i| pop.persons[i].x1).collect();
    let y: Vec<f64> = domain.iter().map(|&i| pop.persons[i].y).collect();
    let sampler = SamplerConfig { seed: stream_id(&[cfg.seed, label("reference")]), ..cfg.model.sampler.clone() };
    let fit = setup.fit_curve(&x, &y, &vec![1.0; x.len()], &cfg.model, &sampler)?;
    Ok((setup, fit.curve))
}

pub(crate) fn generate(cfg: &PopulationConfig) -> Result<Population> {
    crate::popgen::generate_population(cfg)
}
