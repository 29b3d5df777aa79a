//! Synthetic three-level population: PSUs contain households, households
//! contain one person of each role.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{fmt_f64, label, lower_median, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    P1,
    P2,
    P3,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::P1, Role::P2, Role::P3];

    /// Role of the person at position `index` within a household roster.
    /// Rosters longer than three repeat the P3 generative recipe.
    pub fn from_position(index: usize) -> Role {
        match index {
            0 => Role::P1,
            1 => Role::P2,
            _ => Role::P3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::P1 => "P1",
            Role::P2 => "P2",
            Role::P3 => "P3",
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "P1" | "p1" => Ok(Role::P1),
            "P2" | "p2" => Ok(Role::P2),
            "P3" | "p3" => Ok(Role::P3),
            other => Err(Error::InvalidParameter(format!("unknown role {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub n_psu: usize,
    pub hh_per_psu: usize,
    pub persons_per_hh: usize,
    pub tau: f64,
    pub q: f64,
    pub x2_rate: f64,
    pub seed: u64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            n_psu: 200,
            hh_per_psu: 10,
            persons_per_hh: 3,
            tau: 8.0,
            q: 0.5,
            x2_rate: 0.2,
            seed: 1,
        }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_psu == 0 || self.hh_per_psu == 0 || self.persons_per_hh == 0 {
            return Err(Error::InvalidConfig(
                "n_psu, hh_per_psu and persons_per_hh must all be at least 1".into(),
            ));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::InvalidConfig(format!("q must lie in (0, 1), got {}", self.q)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.x2_rate > 0.0 && self.x2_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "x2_rate must be positive, got {}",
                self.x2_rate
            )));
        }
        Ok(())
    }

    pub fn population_size(&self) -> usize {
        self.n_psu * self.hh_per_psu * self.persons_per_hh
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Person {
    pub psu_id: usize,
    /// Global household id, `psu_id * hh_per_psu + local index`.
    pub hh_id: usize,
    pub role: Role,
    pub x1: f64,
    pub x2: f64,
    pub size: f64,
    pub mu: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub config: PopulationConfig,
    pub persons: Vec<Person>,
    pub median_x2_p1: f64,
}

/// Conditional quantile for P1 and P3 (and any roster position beyond P2).
pub fn mu_base(x1: f64, x2: f64) -> f64 {
    10.0 + x1 + 0.5 * x2 + 0.5 * x1 * x2 - x1 * x1
}

/// Conditional quantile for P2, keyed on whether the household's P1 sits above
/// the population median of P1 `x2` values. The upper branch carries no
/// quadratic term, exactly as printed in the generative recipe.
pub fn mu_p2(x1: f64, x2: f64, p1_x2: f64, median_x2_p1: f64) -> f64 {
    if p1_x2 <= median_x2_p1 {
        10.0 + x1 + 0.25 * x2 + 0.25 * x1 * x2 - 2.0 * x1 * x1
    } else {
        10.0 + x1 + 0.75 * x2 + 0.75 * x1 * x2
    }
}

/// Draw from the asymmetric Laplace AL(mu, tau, q) by inverting its CDF.
///
/// `P(Y < mu) = q`; below `mu` the density decays at rate `tau (1 - q)`,
/// above it at rate `tau q`.
pub fn al_sample<R: Rng + ?Sized>(mu: f64, tau: f64, q: f64, rng: &mut R) -> Result<f64> {
    crate::alq::validate_al(tau, q)?;
    Ok(mu + al_residual(tau, q, rng))
}

fn al_residual<R: Rng + ?Sized>(tau: f64, q: f64, rng: &mut R) -> f64 {
    // open interval (0, 1)
    let u: f64 = loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            break u;
        }
    };
    if u < q {
        (u / q).ln() / (tau * (1.0 - q))
    } else {
        -((1.0 - u) / (1.0 - q)).ln() / (tau * q)
    }
}

struct Draft {
    x1: Vec<f64>,
    x2: Vec<f64>,
    residual: Vec<f64>,
}

fn draft_household(cfg: &PopulationConfig, hh_id: usize) -> Draft {
    let mut rng = stream_rng(cfg.seed, &[label("household"), hh_id as u64]);
    let exp_base = Exp::new(cfg.x2_rate).expect("validated rate");
    let m = cfg.persons_per_hh;
    let mut x1 = Vec::with_capacity(m);
    let mut x2 = Vec::with_capacity(m);
    for pos in 0..m {
        x1.push(StandardNormal.sample(&mut rng));
        let v = match Role::from_position(pos) {
            Role::P2 => {
                // mean equal to the P1 value in this household
                let mean = x2[0];
                if mean > 0.0 {
                    Exp::new(1.0 / mean).expect("positive rate").sample(&mut rng)
                } else {
                    0.0
                }
            }
            _ => exp_base.sample(&mut rng),
        };
        x2.push(v);
    }
    let residual = (0..m).map(|_| al_residual(cfg.tau, cfg.q, &mut rng)).collect();
    Draft { x1, x2, residual }
}

/// Generate the finite population. Deterministic in `config.seed`; each
/// household draws from its own RNG stream.
pub fn generate_population(config: &PopulationConfig) -> Result<Population> {
    config.validate()?;
    let n_hh = config.n_psu * config.hh_per_psu;

    #[cfg(feature = "parallel")]
    let drafts: Vec<Draft> = {
        use rayon::prelude::*;
        (0..n_hh).into_par_iter().map(|h| draft_household(config, h)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let drafts: Vec<Draft> = (0..n_hh).map(|h| draft_household(config, h)).collect();

    let p1_x2: Vec<f64> = drafts.iter().map(|d| d.x2[0]).collect();
    let median_x2_p1 = lower_median(&p1_x2).expect("at least one household");
    let min_x2 = drafts
        .iter()
        .flat_map(|d| d.x2.iter().copied())
        .fold(f64::INFINITY, f64::min);

    let mut persons = Vec::with_capacity(config.population_size());
    for (hh_id, d) in drafts.iter().enumerate() {
        let psu_id = hh_id / config.hh_per_psu;
        for pos in 0..config.persons_per_hh {
            let role = Role::from_position(pos);
            let (x1, x2) = (d.x1[pos], d.x2[pos]);
            let mu = match role {
                Role::P2 => mu_p2(x1, x2, d.x2[0], median_x2_p1),
                _ => mu_base(x1, x2),
            };
            persons.push(Person {
                psu_id,
                hh_id,
                role,
                x1,
                x2,
                size: x2 - min_x2 + 1.0,
                mu,
                y: mu + d.residual[pos],
            });
        }
    }
    Ok(Population { config: config.clone(), persons, median_x2_p1 })
}

impl Population {
    pub fn len(&self) -> usize {
        self.persons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.persons.is_empty()
    }

    pub fn n_households(&self) -> usize {
        self.config.n_psu * self.config.hh_per_psu
    }

    /// Person indices of household `hh_id`, in roster order.
    pub fn household(&self, hh_id: usize) -> std::ops::Range<usize> {
        let m = self.config.persons_per_hh;
        hh_id * m..(hh_id + 1) * m
    }

    /// Household ids belonging to `psu_id`.
    pub fn psu_households(&self, psu_id: usize) -> std::ops::Range<usize> {
        let h = self.config.hh_per_psu;
        psu_id * h..(psu_id + 1) * h
    }

    pub fn household_size_measure(&self, hh_id: usize) -> f64 {
        self.household(hh_id).map(|i| self.persons[i].size).sum()
    }

    pub fn psu_size_measure(&self, psu_id: usize) -> f64 {
        self.psu_households(psu_id).map(|h| self.household_size_measure(h)).sum()
    }

    /// Person in the same household holding `role`, if any.
    pub fn household_member(&self, hh_id: usize, role: Role) -> Option<usize> {
        self.household(hh_id).find(|&i| self.persons[i].role == role)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["psu_id", "hh_id", "role", "x1", "x2", "size", "mu", "y"])?;
        for p in &self.persons {
            w.write_record([
                p.psu_id.to_string(),
                p.hh_id.to_string(),
                p.role.to_string(),
                fmt_f64(p.x1),
                fmt_f64(p.x2),
                fmt_f64(p.size),
                fmt_f64(p.mu),
                fmt_f64(p.y),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn sidecar_json(&self) -> serde_json::Value {
        serde_json::json!({
            "config": self.config,
            "median_x2_p1": self.median_x2_p1,
            "population_size": self.len(),
        })
    }

    /// Write `population.csv` and `population.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let file = std::fs::File::create(dir.join("population.csv"))?;
        self.write_csv(std::io::BufWriter::new(file))?;
        let json = serde_json::to_string_pretty(&self.sidecar_json())?;
        std::fs::write(dir.join("population.json"), json + "\n")?;
        Ok(())
    }
}
