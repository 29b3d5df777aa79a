//! Sampling weights: equal, marginal (first order), full pairwise,
//! household pairwise and stagewise, plus normalization to the domain size.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::design::{enumerate_design_to_order, DesignNode, SampleDraw, SampledPerson};
use crate::error::{Error, Result};
use crate::numeric::{fmt_f64, CompensatedSum};
use crate::popgen::Role;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    Equal,
    Marginal,
    FullPairwise,
    HhPairwise,
    Stagewise,
}

impl WeightScheme {
    pub const ALL: [WeightScheme; 5] = [
        WeightScheme::Equal,
        WeightScheme::Marginal,
        WeightScheme::FullPairwise,
        WeightScheme::HhPairwise,
        WeightScheme::Stagewise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WeightScheme::Equal => "equal",
            WeightScheme::Marginal => "marginal",
            WeightScheme::FullPairwise => "full_pairwise",
            WeightScheme::HhPairwise => "hh_pairwise",
            WeightScheme::Stagewise => "stagewise",
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|w| w.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown weight scheme '{s}'")))
    }
}

/// Divisor applied to a household's summed pair weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairDivisor {
    /// `N_pj - 1`: the number of partners each roster member could have.
    #[default]
    RosterMinusOne,
    /// `N_pj (N_pj - 1) / 2`: the number of pairs on the roster.
    RosterPairs,
}

impl PairDivisor {
    fn value(self, roster: usize) -> Result<f64> {
        if roster < 2 {
            return Err(Error::InvalidParameter(format!(
                "household pair weights need at least 2 eligible roster members, got {roster}"
            )));
        }
        let r = roster as f64;
        Ok(match self {
            PairDivisor::RosterMinusOne => r - 1.0,
            PairDivisor::RosterPairs => r * (r - 1.0) / 2.0,
        })
    }
}

/// Population size `N` in the full pairwise divisor `N - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSize {
    Known(f64),
    /// Sum of the marginal weights over the domain.
    #[default]
    Estimated,
}

/// Within-stage joint probabilities for stagewise weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum StageJoint {
    /// Treat PSU and household joints as negligible dependence: each of
    /// these stage weights stays at its first-order value `1/pi`.
    #[default]
    FirstOrder,
    /// Joint probabilities for pairs of PSUs and for pairs of households in
    /// the same PSU, keyed by unordered global id pairs.
    Explicit { psu: HashMap<(usize, usize), f64>, hh: HashMap<(usize, usize), f64> },
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl StageJoint {
    fn lookup(map: &HashMap<(usize, usize), f64>, a: usize, b: usize, what: &str) -> Result<f64> {
        match map.get(&key(a, b)) {
            Some(&p) if p > 0.0 => Ok(p),
            Some(_) => Err(Error::ZeroProbability(format!("{what} pair ({a}, {b})"))),
            None => Err(Error::MissingProbability(format!("{what} pair ({a}, {b})"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightOptions {
    /// Roles counted on a roster when forming `N_pj`.
    pub domain_roles: Vec<Role>,
    pub pair_divisor: PairDivisor,
    pub target_size: TargetSize,
}

impl Default for WeightOptions {
    fn default() -> Self {
        Self { domain_roles: Role::ALL.to_vec(), pair_divisor: PairDivisor::default(), target_size: TargetSize::default() }
    }
}

impl WeightOptions {
    fn roster_divisor(&self) -> Result<f64> {
        let mut roles = self.domain_roles.clone();
        roles.sort();
        roles.dedup();
        self.pair_divisor.value(roles.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub scheme: WeightScheme,
    /// Population person index of each sampled person.
    pub persons: Vec<usize>,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub mask: Vec<bool>,
}

impl WeightVector {
    fn build(scheme: WeightScheme, s: &SampleDraw, raw: Vec<f64>, mask: &[bool]) -> Result<Self> {
        let normalized = normalize(&raw, mask)?;
        Ok(Self { scheme, persons: s.persons.iter().map(|p| p.person).collect(), raw, normalized, mask: mask.to_vec() })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Normalized weights of the masked persons, in sample order.
    pub fn masked_normalized(&self) -> Vec<f64> {
        self.normalized.iter().zip(&self.mask).filter(|(_, m)| **m).map(|(w, _)| *w).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["person", "scheme", "raw", "normalized", "in_domain"])?;
        for i in 0..self.len() {
            w.write_record([
                self.persons[i].to_string(),
                self.scheme.to_string(),
                fmt_f64(self.raw[i]),
                fmt_f64(self.normalized[i]),
                u8::from(self.mask[i]).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scales `raw` so the masked entries sum to the number of masked entries.
/// The same factor is applied to every entry.
pub fn normalize(raw: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if raw.len() != mask.len() {
        return Err(Error::DimensionMismatch(format!("{} weights, {} mask entries", raw.len(), mask.len())));
    }
    let mut total = CompensatedSum::new();
    let mut n = 0usize;
    for (i, (&w, &m)) in raw.iter().zip(mask).enumerate() {
        if m {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidParameter(format!("raw weight {i} is {w}, not positive")));
            }
            total.add(w);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyDomain("normalization mask selects no persons".into()));
    }
    let scale = n as f64 / total.value();
    Ok(raw.iter().map(|w| w * scale).collect())
}

fn check_pi(p: &SampledPerson, value: f64, what: &str) -> Result<f64> {
    if value > 0.0 && value <= 1.0 + 1e-12 {
        Ok(value)
    } else {
        Err(Error::ZeroProbability(format!("{what} = {value} for person {}", p.person)))
    }
}

fn psu_weight(p: &SampledPerson) -> Result<f64> {
    Ok(1.0 / check_pi(p, p.pi_psu, "pi_psu")?)
}

fn hh_weight(p: &SampledPerson) -> Result<f64> {
    Ok(1.0 / check_pi(p, p.pi_hh_given_psu, "pi_hh_given_psu")?)
}

fn person_weight(p: &SampledPerson) -> Result<f64> {
    Ok(1.0 / check_pi(p, p.pi_person_given_hh, "pi_person_given_hh")?)
}

fn first_order(p: &SampledPerson) -> Result<f64> {
    Ok(psu_weight(p)? * hh_weight(p)? * person_weight(p)?)
}

/// Positions of the sampled persons grouped by household, in sample order.
fn households(s: &SampleDraw) -> BTreeMap<usize, Vec<usize>> {
    let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, p) in s.persons.iter().enumerate() {
        map.entry(p.hh_id).or_default().push(i);
    }
    map
}

/// `sum over co-sampled household members i' of 1 / pi(i, i' | household)`.
fn within_household_sums(s: &SampleDraw) -> Result<Vec<f64>> {
    let mut out = vec![0.0; s.len()];
    for members in households(s).values() {
        for &a in members {
            for &b in members {
                if a == b {
                    continue;
                }
                let pi = s.within_pair_pi(a, b);
                if !(pi > 0.0) {
                    return Err(Error::ZeroProbability(format!(
                        "co-sampled persons {} and {} have zero joint probability",
                        s.persons[a].person, s.persons[b].person
                    )));
                }
                out[a] += 1.0 / pi;
            }
        }
    }
    for (i, v) in out.iter().enumerate() {
        if *v == 0.0 {
            return Err(Error::MissingProbability(format!(
                "person {} has no co-sampled household member",
                s.persons[i].person
            )));
        }
    }
    Ok(out)
}

fn all_true(s: &SampleDraw) -> Vec<bool> {
    vec![true; s.len()]
}

fn check_mask(s: &SampleDraw, mask: Option<&[bool]>) -> Result<Vec<bool>> {
    match mask {
        Some(m) if m.len() != s.len() => {
            Err(Error::DimensionMismatch(format!("{} sampled persons, {} mask entries", s.len(), m.len())))
        }
        Some(m) => Ok(m.to_vec()),
        None => Ok(all_true(s)),
    }
}

pub fn equal_weights(s: &SampleDraw, mask: Option<&[bool]>) -> Result<WeightVector> {
    let mask = check_mask(s, mask)?;
    WeightVector::build(WeightScheme::Equal, s, vec![1.0; s.len()], &mask)
}

pub fn marginal_weights(s: &SampleDraw, mask: Option<&[bool]>) -> Result<WeightVector> {
    let mask = check_mask(s, mask)?;
    let raw = s.persons.iter().map(first_order).collect::<Result<Vec<_>>>()?;
    WeightVector::build(WeightScheme::Marginal, s, raw, &mask)
}

/// Household pairwise weights: PSU and household weights times the summed
/// inverse within-household pair probabilities, over the roster divisor.
pub fn hh_pairwise_weights(s: &SampleDraw, mask: Option<&[bool]>, opts: &WeightOptions) -> Result<WeightVector> {
    let mask = check_mask(s, mask)?;
    let divisor = opts.roster_divisor()?;
    let sums = within_household_sums(s)?;
    let raw = s
        .persons
        .iter()
        .zip(&sums)
        .map(|(p, sum)| Ok(psu_weight(p)? * hh_weight(p)? * sum / divisor))
        .collect::<Result<Vec<_>>>()?;
    WeightVector::build(WeightScheme::HhPairwise, s, raw, &mask)
}

/// Full pairwise weights `sum_{i' != i} 1/pi(i, i') / (N - 1)`, the sum
/// running over the masked persons. Joint probabilities follow the staged
/// design: products of marginals across PSUs, a shared PSU factor within a
/// PSU, and the pair probability within a household.
pub fn full_pairwise_weights(s: &SampleDraw, mask: Option<&[bool]>, opts: &WeightOptions) -> Result<WeightVector> {
    let mask = check_mask(s, mask)?;
    let sums = full_pairwise_sums(s, &mask)?;
    let n_target = match opts.target_size {
        TargetSize::Known(n) => n,
        TargetSize::Estimated => {
            let mut t = CompensatedSum::new();
            for (p, _) in s.persons.iter().zip(&mask).filter(|(_, m)| **m) {
                t.add(first_order(p)?);
            }
            t.value()
        }
    };
    if !(n_target > 1.0) {
        return Err(Error::InvalidParameter(format!("target population size {n_target} must exceed 1")));
    }
    let raw: Vec<f64> = sums.iter().map(|v| v / (n_target - 1.0)).collect();
    WeightVector::build(WeightScheme::FullPairwise, s, raw, &mask)
}

/// `sum over masked i' != i of 1 / pi(i, i')`, using PSU and household
/// group totals so the cost is linear in the sample size.
pub(crate) fn full_pairwise_sums(s: &SampleDraw, mask: &[bool]) -> Result<Vec<f64>> {
    let w1: Vec<f64> = s.persons.iter().map(first_order).collect::<Result<_>>()?;
    // second and third stage weight product of each person
    let w23: Vec<f64> =
        s.persons.iter().map(|p| Ok(hh_weight(p)? * person_weight(p)?)).collect::<Result<_>>()?;
    let mut total = CompensatedSum::new();
    let mut by_psu: BTreeMap<usize, (CompensatedSum, CompensatedSum)> = BTreeMap::new();
    let mut by_hh: BTreeMap<usize, CompensatedSum> = BTreeMap::new();
    for (i, p) in s.persons.iter().enumerate().filter(|(i, _)| mask[*i]) {
        total.add(w1[i]);
        let e = by_psu.entry(p.psu_id).or_default();
        e.0.add(w1[i]);
        e.1.add(w23[i]);
        by_hh.entry(p.hh_id).or_default().add(w23[i]);
    }
    let hh_members = households(s);
    let mut out = Vec::with_capacity(s.len());
    for (i, p) in s.persons.iter().enumerate() {
        let (psu_w1, psu_w23) = by_psu.get(&p.psu_id).map(|(a, b)| (a.value(), b.value())).unwrap_or((0.0, 0.0));
        let hh_w23 = by_hh.get(&p.hh_id).map(CompensatedSum::value).unwrap_or(0.0);
        // masked persons of other PSUs, then of other households in this PSU
        let case1 = w1[i] * (total.value() - psu_w1);
        let case2 = w1[i] * (psu_w23 - hh_w23);
        let mut case3 = 0.0;
        for &b in &hh_members[&p.hh_id] {
            if b == i || !mask[b] {
                continue;
            }
            let pi = s.within_pair_pi(i, b);
            if !(pi > 0.0) {
                return Err(Error::ZeroProbability(format!(
                    "co-sampled persons {} and {} have zero joint probability",
                    p.person, s.persons[b].person
                )));
            }
            case3 += psu_weight(p)? * hh_weight(p)? / pi;
        }
        out.push(case1 + case2 + case3);
    }
    Ok(out)
}

/// Stagewise weights: the product of per-stage weights, where each stage's
/// first-order weight is replaced by its scaled sum of second-order weights.
pub fn stagewise_weights(
    s: &SampleDraw,
    mask: Option<&[bool]>,
    opts: &WeightOptions,
    joint: &StageJoint,
) -> Result<WeightVector> {
    let mask = check_mask(s, mask)?;
    let divisor = opts.roster_divisor()?;
    let sums = within_household_sums(s)?;
    let (psu_stage, hh_stage) = match joint {
        StageJoint::FirstOrder => {
            let a = s.persons.iter().map(psu_weight).collect::<Result<Vec<_>>>()?;
            let b = s.persons.iter().map(hh_weight).collect::<Result<Vec<_>>>()?;
            (a, b)
        }
        StageJoint::Explicit { psu, hh } => explicit_stage_weights(s, psu, hh)?,
    };
    let raw = (0..s.len()).map(|i| psu_stage[i] * hh_stage[i] * sums[i] / divisor).collect();
    WeightVector::build(WeightScheme::Stagewise, s, raw, &mask)
}

fn explicit_stage_weights(
    s: &SampleDraw,
    psu_joint: &HashMap<(usize, usize), f64>,
    hh_joint: &HashMap<(usize, usize), f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut psus: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for p in &s.persons {
        let hhs = psus.entry(p.psu_id).or_default();
        if !hhs.contains(&p.hh_id) {
            hhs.push(p.hh_id);
        }
    }
    let n_s = s.frame.n_psu;
    let n_h = s.frame.hh_per_psu;
    let mut psu_w = BTreeMap::new();
    for &k in psus.keys() {
        let w = if n_s < 2 {
            1.0
        } else {
            let mut sum = CompensatedSum::new();
            for &k2 in psus.keys().filter(|&&k2| k2 != k) {
                sum.add(1.0 / StageJoint::lookup(psu_joint, k, k2, "PSU")?);
            }
            sum.value() / (n_s - 1) as f64
        };
        psu_w.insert(k, w);
    }
    let mut hh_w = BTreeMap::new();
    for hhs in psus.values() {
        for &j in hhs {
            let w = if n_h < 2 {
                1.0
            } else {
                let mut sum = CompensatedSum::new();
                for &j2 in hhs.iter().filter(|&&j2| j2 != j) {
                    sum.add(1.0 / StageJoint::lookup(hh_joint, j, j2, "household")?);
                }
                sum.value() / (n_h - 1) as f64
            };
            hh_w.insert(j, w);
        }
    }
    let check = |w: f64, what: &str, id: usize| {
        if w > 0.0 {
            Ok(w)
        } else {
            Err(Error::ZeroProbability(format!("{what} {id} has no co-sampled unit at its stage")))
        }
    };
    let a = s.persons.iter().map(|p| check(psu_w[&p.psu_id], "PSU", p.psu_id)).collect::<Result<_>>()?;
    let b = s.persons.iter().map(|p| check(hh_w[&p.hh_id], "household", p.hh_id)).collect::<Result<_>>()?;
    Ok((a, b))
}

/// Computes the requested scheme with default stage joints.
pub fn compute_weights(
    s: &SampleDraw,
    scheme: WeightScheme,
    mask: Option<&[bool]>,
    opts: &WeightOptions,
) -> Result<WeightVector> {
    match scheme {
        WeightScheme::Equal => equal_weights(s, mask),
        WeightScheme::Marginal => marginal_weights(s, mask),
        WeightScheme::FullPairwise => full_pairwise_weights(s, mask, opts),
        WeightScheme::HhPairwise => hh_pairwise_weights(s, mask, opts),
        WeightScheme::Stagewise => stagewise_weights(s, mask, opts, &StageJoint::FirstOrder),
    }
}

/// For every unit of an enumerable design, the exact design expectation of
/// `(1/(N-1)) sum_{k != i} d_i d_k / pi_ik`, where `d` are the sample
/// indicators. Each entry equals one when every pair has positive
/// probability.
pub fn pairwise_unbiasedness(design: &DesignNode, cap: u128) -> Result<Vec<(usize, f64)>> {
    let tensor = enumerate_design_to_order(design, 2, cap)?;
    let units = design.units();
    let n = units.len();
    if n < 2 {
        return Err(Error::InvalidParameter("need at least two units".into()));
    }
    let index: HashMap<usize, usize> = units.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let mut acc = vec![CompensatedSum::new(); n];
    for sample in design.enumerate_samples(cap)? {
        for &i in &sample.units {
            let mut inner = CompensatedSum::new();
            for &k in sample.units.iter().filter(|&&k| k != i) {
                let pi = tensor.pi(&[i, k]);
                if !(pi > 0.0) {
                    return Err(Error::MissingProbability(format!("pair ({i}, {k})")));
                }
                inner.add(1.0 / pi);
            }
            acc[index[&i]].add(sample.prob * inner.value() / (n - 1) as f64);
        }
    }
    Ok(units.into_iter().zip(acc.iter().map(CompensatedSum::value)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{draw_sample, DesignConfig, Frame, WithinHousehold, DEFAULT_ENUMERATION_CAP};
    use crate::popgen::{generate_population, PopulationConfig};
    use proptest::prelude::*;
    use crate::numeric::lower_median;

    fn person(person: usize, psu: usize, hh: usize, pis: [f64; 4], partner: Option<usize>) -> SampledPerson {
        SampledPerson {
            person,
            psu_id: psu,
            hh_id: hh,
            role: Role::from_position(person % 3),
            pi_psu: pis[0],
            pi_hh_given_psu: pis[1],
            pi_person_given_hh: pis[2],
            pi_pair_given_hh: pis[3],
            partner,
        }
    }

    /// Two PSUs; PSU 0 has households 0 and 1, PSU 1 has household 2.
    fn toy() -> SampleDraw {
        let persons = vec![
            person(0, 0, 0, [0.5, 0.5, 2.0 / 3.0, 1.0 / 3.0], Some(1)),
            person(1, 0, 0, [0.5, 0.5, 2.0 / 3.0, 1.0 / 3.0], Some(0)),
            person(3, 0, 1, [0.5, 0.25, 0.5, 0.25], Some(5)),
            person(5, 0, 1, [0.5, 0.25, 0.75, 0.25], Some(3)),
            person(6, 1, 2, [0.2, 0.4, 0.6, 0.3], Some(7)),
            person(7, 1, 2, [0.2, 0.4, 0.7, 0.3], Some(6)),
        ];
        SampleDraw {
            persons,
            frame: Frame { n_psu: 4, hh_per_psu: 3, persons_per_hh: 3 },
            within_household: WithinHousehold::Pair,
        }
    }

    fn brute_force_sums(s: &SampleDraw, mask: &[bool]) -> Vec<f64> {
        (0..s.len())
            .map(|i| (0..s.len()).filter(|&k| k != i && mask[k]).map(|k| 1.0 / s.pairwise_pi(i, k)).sum())
            .collect()
    }

    #[test]
    fn marginal_weight_arithmetic() {
        let w = marginal_weights(&toy(), None).unwrap();
        assert!((w.raw[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn group_totals_match_brute_force() {
        let s = toy();
        for mask in [vec![true; 6], vec![true, false, true, true, false, true]] {
            let fast = full_pairwise_sums(&s, &mask).unwrap();
            let slow = brute_force_sums(&s, &mask);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12 * b.abs(), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn hand_computed_cases() {
        let s = toy();
        let w1: Vec<f64> = s.persons.iter().map(|p| first_order(p).unwrap()).collect();
        // person 3 (position 2): case 2 with positions 0 and 1, case 3 with 3, case 1 with 4 and 5
        let case1 = w1[2] * (w1[4] + w1[5]);
        let case2 = w1[2] * (1.0 / (0.5 * (2.0 / 3.0))) * 2.0;
        let case3 = 2.0 * 4.0 / 0.25;
        let sums = full_pairwise_sums(&s, &[true; 6]).unwrap();
        assert!((sums[2] - (case1 + case2 + case3)).abs() < 1e-10);
        // different PSUs: product of marginal weights
        assert!((1.0 / s.pairwise_pi(0, 4) - w1[0] * w1[4]).abs() < 1e-10);
    }

    #[test]
    fn hh_pairwise_arithmetic() {
        let s = SampleDraw {
            persons: vec![
                person(0, 0, 0, [1.0, 1.0, 2.0 / 3.0, 1.0 / 3.0], Some(1)),
                person(1, 0, 0, [1.0, 1.0, 2.0 / 3.0, 1.0 / 3.0], Some(0)),
            ],
            frame: Frame { n_psu: 1, hh_per_psu: 1, persons_per_hh: 3 },
            within_household: WithinHousehold::Pair,
        };
        let w = hh_pairwise_weights(&s, None, &WeightOptions::default()).unwrap();
        assert!((w.raw[0] - 1.5).abs() < 1e-12 && (w.raw[1] - 1.5).abs() < 1e-12);
        let pairs = WeightOptions { pair_divisor: PairDivisor::RosterPairs, ..Default::default() };
        assert!((hh_pairwise_weights(&s, None, &pairs).unwrap().raw[0] - 1.0).abs() < 1e-12);
        let lone = WeightOptions { domain_roles: vec![Role::P2], ..Default::default() };
        assert!(hh_pairwise_weights(&s, None, &lone).is_err());
    }

    #[test]
    fn single_pair_population_full_equals_hh() {
        let s = SampleDraw {
            persons: vec![
                person(0, 0, 0, [1.0, 1.0, 1.0, 1.0], Some(1)),
                person(1, 0, 0, [1.0, 1.0, 1.0, 1.0], Some(0)),
            ],
            frame: Frame { n_psu: 1, hh_per_psu: 1, persons_per_hh: 2 },
            within_household: WithinHousehold::Pair,
        };
        let opts = WeightOptions {
            domain_roles: vec![Role::P1, Role::P2],
            target_size: TargetSize::Known(2.0),
            ..Default::default()
        };
        let full = full_pairwise_weights(&s, None, &opts).unwrap();
        let hh = hh_pairwise_weights(&s, None, &opts).unwrap();
        assert_eq!(full.raw, hh.raw);
        let stage = stagewise_weights(&s, None, &opts, &StageJoint::FirstOrder).unwrap();
        assert_eq!(stage.raw, full.raw);
    }

    fn sample(k: usize, pair: bool) -> (crate::popgen::Population, SampleDraw) {
        let pop = generate_population(&PopulationConfig { seed: 3, ..Default::default() }).unwrap();
        let cfg = DesignConfig { n_psu_selected: k, pair_per_hh: pair, seed: 4, ..Default::default() };
        let s = draw_sample(&pop, &cfg).unwrap();
        (pop, s)
    }

    #[test]
    fn first_order_stagewise_equals_hh_pairwise() {
        let (_, s) = sample(20, true);
        let opts = WeightOptions::default();
        let a = stagewise_weights(&s, None, &opts, &StageJoint::FirstOrder).unwrap();
        let b = hh_pairwise_weights(&s, None, &opts).unwrap();
        for (x, y) in a.raw.iter().zip(&b.raw) {
            assert!((x - y).abs() <= 1e-12 * y.abs());
        }
    }

    #[test]
    fn explicit_independent_stage_joints() {
        let (_, s) = sample(10, true);
        let mut psu = HashMap::new();
        let mut hh = HashMap::new();
        for a in &s.persons {
            for b in &s.persons {
                if a.psu_id != b.psu_id {
                    psu.insert(key(a.psu_id, b.psu_id), a.pi_psu * b.pi_psu);
                } else if a.hh_id != b.hh_id {
                    hh.insert(key(a.hh_id, b.hh_id), a.pi_hh_given_psu * b.pi_hh_given_psu);
                }
            }
        }
        let w = stagewise_weights(&s, None, &WeightOptions::default(), &StageJoint::Explicit { psu, hh }).unwrap();
        assert!(w.raw.iter().all(|v| *v > 0.0));
        let missing = StageJoint::Explicit { psu: HashMap::new(), hh: HashMap::new() };
        assert!(matches!(
            stagewise_weights(&s, None, &WeightOptions::default(), &missing),
            Err(Error::MissingProbability(_))
        ));
    }

    #[test]
    fn census_weights() {
        let pop = generate_population(&PopulationConfig {
            n_psu: 3,
            hh_per_psu: 2,
            persons_per_hh: 3,
            seed: 5,
            ..Default::default()
        })
        .unwrap();
        let cfg = DesignConfig { n_psu_selected: 3, n_hh_per_psu: 2, pair_per_hh: false, ..Default::default() };
        let s = draw_sample(&pop, &cfg).unwrap();
        let opts = WeightOptions::default();
        assert!(marginal_weights(&s, None).unwrap().raw.iter().all(|w| *w == 1.0));
        for scheme in WeightScheme::ALL {
            let w = compute_weights(&s, scheme, None, &opts).unwrap();
            let first = w.raw[0];
            assert!(w.raw.iter().all(|x| (x - first).abs() < 1e-12), "{scheme}");
            assert!(w.normalized.iter().all(|x| (x - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn marginal_weights_sum_to_population_on_average() {
        let pop = generate_population(&PopulationConfig { seed: 6, ..Default::default() }).unwrap();
        let reps = 400;
        let mut totals = Vec::with_capacity(reps);
        for r in 0..reps {
            let cfg = DesignConfig { n_psu_selected: 20, pair_per_hh: false, seed: 100 + r as u64, ..Default::default() };
            let s = draw_sample(&pop, &cfg).unwrap();
            totals.push(marginal_weights(&s, None).unwrap().raw.iter().sum::<f64>());
        }
        let m = totals.iter().sum::<f64>() / reps as f64;
        let sd = (totals.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (reps as f64 - 1.0)).sqrt();
        assert!((m - 6000.0).abs() < 4.0 * sd / (reps as f64).sqrt(), "mean {m}, sd {sd}");
    }

    #[test]
    fn full_pairwise_approaches_marginal() {
        // N estimated by the marginal weight total; with the known N the
        // ratio also carries the sampling error of that total
        let (_, s) = sample(40, true);
        let full = full_pairwise_weights(&s, None, &WeightOptions::default()).unwrap();
        let marg = marginal_weights(&s, None).unwrap();
        let n_hat: f64 = marg.raw.iter().sum();
        let mut dev = Vec::new();
        let mut approx = Vec::new();
        for (f, m) in full.raw.iter().zip(&marg.raw) {
            dev.push((f / m - 1.0).abs());
            let a = (n_hat - m) / (n_hat - 1.0) * m;
            approx.push((f - a).abs() / a);
        }
        assert!(lower_median(&dev).unwrap() < 0.05);
        assert!(lower_median(&approx).unwrap() < 0.02);
    }

    #[test]
    fn domain_changes_hh_weights_only_through_divisor() {
        let (_, s) = sample(10, true);
        let all = hh_pairwise_weights(&s, None, &WeightOptions::default()).unwrap();
        let two = WeightOptions { domain_roles: vec![Role::P1, Role::P2], ..Default::default() };
        let mask: Vec<bool> = s.persons.iter().map(|p| p.role == Role::P2).collect();
        let sub = hh_pairwise_weights(&s, Some(&mask), &two).unwrap();
        for (a, b) in all.raw.iter().zip(&sub.raw) {
            assert!((b - 2.0 * a).abs() < 1e-12 * b);
        }
        let n: f64 = sub.masked_normalized().iter().sum();
        assert!((n - mask.iter().filter(|m| **m).count() as f64).abs() < 1e-10);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[1.0, 2.0, 3.0], &[true; 3]).unwrap(), vec![0.5, 1.0, 1.5]);
        assert_eq!(normalize(&[4.2; 5], &[true; 5]).unwrap(), vec![1.0; 5]);
        assert!(normalize(&[1.0], &[false]).is_err());
        assert!(normalize(&[0.0, 1.0], &[true, true]).is_err());
        // masked-out entries may be anything and are scaled with the rest
        assert_eq!(normalize(&[2.0, 0.0], &[true, false]).unwrap(), vec![1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn normalize_properties(raw in proptest::collection::vec(1e-3f64..1e3, 1..200), scale in 1e-3f64..1e3) {
            let mask = vec![true; raw.len()];
            let a = normalize(&raw, &mask).unwrap();
            let sum: f64 = a.iter().sum();
            prop_assert!((sum - raw.len() as f64).abs() <= 1e-10 * raw.len() as f64);
            let again = normalize(&a, &mask).unwrap();
            for (x, y) in a.iter().zip(&again) {
                prop_assert!((x - y).abs() <= 1e-12 * x);
            }
            let scaled: Vec<f64> = raw.iter().map(|r| r * scale).collect();
            for (x, y) in a.iter().zip(&normalize(&scaled, &mask).unwrap()) {
                prop_assert!((x - y).abs() <= 1e-12 * x);
            }
            for i in 1..raw.len() {
                prop_assert_eq!(raw[i] < raw[i - 1], a[i] < a[i - 1]);
            }
        }
    }

    #[test]
    fn unbiasedness_on_enumerable_designs() {
        let designs = [
            DesignNode::srswor(4, 2),
            DesignNode::srswor(6, 2),
            DesignNode::households_with_pairs(&[vec![1.0, 2.0, 3.0], vec![2.0, 2.0, 5.0]]),
        ];
        for d in &designs {
            for (unit, e) in pairwise_unbiasedness(d, DEFAULT_ENUMERATION_CAP).unwrap() {
                assert!((e - 1.0).abs() < 1e-12, "unit {unit}: {e}");
            }
        }
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in WeightScheme::ALL {
            assert_eq!(s.as_str().parse::<WeightScheme>().unwrap(), s);
        }
        assert!("pairwise".parse::<WeightScheme>().is_err());
    }
}
