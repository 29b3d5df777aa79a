//! Three-stage informative sampling: Brewer PPS over PSUs, Brewer PPS over
//! households within each selected PSU, then one pair of persons per
//! selected household. Every stagewise probability is recorded so the
//! weight schemes can be rebuilt from the draw alone.

mod brewer;
mod pair;
mod tree;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use brewer::{
    brewer_draw, brewer_pps_select, brewer_sample_distribution, capped_inclusion_probabilities,
    pps_inclusion_probabilities, PpsSelection,
};
pub use pair::{pair_probabilities, select_pair, PairSelection};
pub use tree::{
    enumerate_design, enumerate_design_to_order, monte_carlo_design_tensor, monte_carlo_tensor,
    DesignNode, JointInclusionTensor, SamplePoint, Selection, TensorMethod, DEFAULT_ENUMERATION_CAP,
};

use crate::error::{Error, Result};
use crate::numeric::{fmt_f64, label, stream_rng};
use crate::popgen::{Population, Role};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub n_psu_selected: usize,
    pub n_hh_per_psu: usize,
    /// Select exactly one pair per household; otherwise the whole roster.
    pub pair_per_hh: bool,
    /// Take units whose PPS probability would exceed one with certainty and
    /// share the rest of the sample among the others. When false such units
    /// are an error.
    pub allow_certainty: bool,
    pub seed: u64,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self { n_psu_selected: 40, n_hh_per_psu: 5, pair_per_hh: true, allow_certainty: true, seed: 1 }
    }
}

impl DesignConfig {
    pub fn validate(&self, pop: &Population) -> Result<()> {
        let pc = &pop.config;
        if self.n_psu_selected == 0 || self.n_psu_selected > pc.n_psu {
            return Err(Error::InvalidConfig(format!(
                "n_psu_selected must be in 1..={}, got {}",
                pc.n_psu, self.n_psu_selected
            )));
        }
        if self.n_hh_per_psu == 0 || self.n_hh_per_psu > pc.hh_per_psu {
            return Err(Error::InvalidConfig(format!(
                "n_hh_per_psu must be in 1..={}, got {}",
                pc.hh_per_psu, self.n_hh_per_psu
            )));
        }
        if self.pair_per_hh && pc.persons_per_hh < 2 {
            return Err(Error::InvalidConfig("pair selection needs at least 2 persons per household".into()));
        }
        Ok(())
    }
}

pub(crate) fn stage_probabilities(sizes: &[f64], n: usize, allow_certainty: bool) -> Result<Vec<f64>> {
    if allow_certainty {
        capped_inclusion_probabilities(sizes, n)
    } else {
        pps_inclusion_probabilities(sizes, n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WithinHousehold {
    Pair,
    WholeRoster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledPerson {
    /// Index into `Population::persons`.
    pub person: usize,
    pub psu_id: usize,
    pub hh_id: usize,
    pub role: Role,
    pub pi_psu: f64,
    pub pi_hh_given_psu: f64,
    pub pi_person_given_hh: f64,
    /// Probability of the realized pair (this person with `partner`).
    pub pi_pair_given_hh: f64,
    pub partner: Option<usize>,
}

/// Frame sizes needed by the weight calculus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub n_psu: usize,
    pub hh_per_psu: usize,
    pub persons_per_hh: usize,
}

impl Frame {
    pub fn population_size(&self) -> usize {
        self.n_psu * self.hh_per_psu * self.persons_per_hh
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDraw {
    pub persons: Vec<SampledPerson>,
    pub frame: Frame,
    pub within_household: WithinHousehold,
}

impl SampleDraw {
    pub fn len(&self) -> usize {
        self.persons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.persons.is_empty()
    }

    /// Position in `persons` of population person `person`.
    pub fn position_of(&self, person: usize) -> Option<usize> {
        self.persons.iter().position(|p| p.person == person)
    }

    /// Probability that persons at sample positions `a` and `b` are both in
    /// the sample. Selections within the PPS stages are treated as independent
    /// (joint = product of marginals); within a household the pair
    /// probability is exact.
    pub fn pairwise_pi(&self, a: usize, b: usize) -> f64 {
        let (p, r) = (&self.persons[a], &self.persons[b]);
        if a == b {
            return p.pi_psu * p.pi_hh_given_psu * p.pi_person_given_hh;
        }
        if p.psu_id != r.psu_id {
            p.pi_psu * p.pi_hh_given_psu * p.pi_person_given_hh
                * r.pi_psu
                * r.pi_hh_given_psu
                * r.pi_person_given_hh
        } else if p.hh_id != r.hh_id {
            p.pi_psu * p.pi_hh_given_psu * p.pi_person_given_hh * r.pi_hh_given_psu * r.pi_person_given_hh
        } else {
            p.pi_psu * p.pi_hh_given_psu * self.within_pair_pi(a, b)
        }
    }

    /// Conditional probability that co-sampled household members `a` and `b`
    /// are selected together.
    pub fn within_pair_pi(&self, a: usize, b: usize) -> f64 {
        match self.within_household {
            WithinHousehold::WholeRoster => 1.0,
            WithinHousehold::Pair if self.persons[a].partner == Some(self.persons[b].person) => {
                self.persons[a].pi_pair_given_hh
            }
            WithinHousehold::Pair => 0.0,
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "person",
            "psu_id",
            "hh_id",
            "role",
            "pi_psu",
            "pi_hh_given_psu",
            "pi_person_given_hh",
            "pi_pair_given_hh",
            "partner",
        ])?;
        for p in &self.persons {
            w.write_record([
                p.person.to_string(),
                p.psu_id.to_string(),
                p.hh_id.to_string(),
                p.role.to_string(),
                fmt_f64(p.pi_psu),
                fmt_f64(p.pi_hh_given_psu),
                fmt_f64(p.pi_person_given_hh),
                fmt_f64(p.pi_pair_given_hh),
                p.partner.map(|x| x.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Draw one three-stage sample. Each stage and each PSU/household uses its
/// own RNG stream under `cfg.seed`, so households are selected independently
/// across PSUs and the draw is reproducible.
pub fn draw_sample(pop: &Population, cfg: &DesignConfig) -> Result<SampleDraw> {
    cfg.validate(pop)?;
    let pc = &pop.config;
    let psu_sizes: Vec<f64> = (0..pc.n_psu).map(|k| pop.psu_size_measure(k)).collect();
    let psu_pi = stage_probabilities(&psu_sizes, cfg.n_psu_selected, cfg.allow_certainty)?;
    let mut rng = stream_rng(cfg.seed, &[label("psu")]);
    let psus = brewer_draw(&psu_pi, &mut rng);

    let mut persons = Vec::new();
    for k in psus {
        let hh_ids: Vec<usize> = pop.psu_households(k).collect();
        let hh_sizes: Vec<f64> = hh_ids.iter().map(|&h| pop.household_size_measure(h)).collect();
        let hh_pi = stage_probabilities(&hh_sizes, cfg.n_hh_per_psu, cfg.allow_certainty)?;
        let mut rng = stream_rng(cfg.seed, &[label("hh"), k as u64]);
        for j in brewer_draw(&hh_pi, &mut rng) {
            let hh = hh_ids[j];
            let members: Vec<usize> = pop.household(hh).collect();
            if cfg.pair_per_hh {
                let sizes: Vec<f64> = members.iter().map(|&i| pop.persons[i].size).collect();
                let mut rng = stream_rng(cfg.seed, &[label("pair"), hh as u64]);
                let sel = select_pair(&sizes, &mut rng)?;
                let (a, b) = sel.pair;
                let pair_pi = sel.pair_prob(a, b).expect("selected pair is in the table");
                for (me, other) in [(a, b), (b, a)] {
                    persons.push(SampledPerson {
                        person: members[me],
                        psu_id: k,
                        hh_id: hh,
                        role: pop.persons[members[me]].role,
                        pi_psu: psu_pi[k],
                        pi_hh_given_psu: hh_pi[j],
                        pi_person_given_hh: sel.marginals[me],
                        pi_pair_given_hh: pair_pi,
                        partner: Some(members[other]),
                    });
                }
            } else {
                for &i in &members {
                    persons.push(SampledPerson {
                        person: i,
                        psu_id: k,
                        hh_id: hh,
                        role: pop.persons[i].role,
                        pi_psu: psu_pi[k],
                        pi_hh_given_psu: hh_pi[j],
                        pi_person_given_hh: 1.0,
                        pi_pair_given_hh: 1.0,
                        partner: None,
                    });
                }
            }
        }
    }
    Ok(SampleDraw {
        persons,
        frame: Frame { n_psu: pc.n_psu, hh_per_psu: pc.hh_per_psu, persons_per_hh: pc.persons_per_hh },
        within_household: if cfg.pair_per_hh { WithinHousehold::Pair } else { WithinHousehold::WholeRoster },
    })
}
