//! Nested selection designs, exact enumeration of their sample spaces and
//! joint inclusion probabilities up to order four.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::brewer::{brewer_draw, brewer_sample_distribution, capped_inclusion_probabilities};
use super::pair::pair_probabilities;
use super::DesignConfig;
use crate::error::{Error, Result};
use crate::numeric::{fmt_f64, stream_rng};
use crate::popgen::Population;

pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// How a cluster picks among its children.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selection {
    Census,
    Srswor { n: usize },
    /// Brewer draw-by-draw PPS with the given target inclusion probabilities.
    Brewer { pi: Vec<f64> },
    /// One pair, with probability proportional to the summed child sizes.
    Pair { sizes: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignNode {
    Unit(usize),
    Cluster { selection: Selection, children: Vec<DesignNode> },
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// All `n`-subsets of `0..m` in lexicographic order.
fn combinations(m: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if n > m {
        return out;
    }
    let mut combo: Vec<usize> = (0..n).collect();
    loop {
        out.push(combo.clone());
        let mut i = n;
        while i > 0 && combo[i - 1] == m - n + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        combo[i - 1] += 1;
        for j in i..n {
            combo[j] = combo[j - 1] + 1;
        }
    }
}

/// Elementary symmetric polynomial `e_r` of `values`, saturating.
fn elementary_symmetric(values: &[u128], r: usize) -> u128 {
    let mut e = vec![0u128; r + 1];
    e[0] = 1;
    for &v in values {
        for j in (1..=r).rev() {
            e[j] = e[j].saturating_add(e[j - 1].saturating_mul(v));
        }
    }
    e[r]
}

impl Selection {
    fn n_children_expected(&self) -> Option<usize> {
        match self {
            Selection::Brewer { pi } => Some(pi.len()),
            Selection::Pair { sizes } => Some(sizes.len()),
            _ => None,
        }
    }

    /// Every reachable subset of child positions with its probability.
    fn distribution(&self, m: usize) -> Result<Vec<(Vec<usize>, f64)>> {
        match self {
            Selection::Census => Ok(vec![((0..m).collect(), 1.0)]),
            Selection::Srswor { n } => {
                let p = 1.0 / binomial(m, *n) as f64;
                Ok(combinations(m, *n).into_iter().map(|c| (c, p)).collect())
            }
            Selection::Brewer { pi } => brewer_sample_distribution(pi),
            Selection::Pair { sizes } => {
                let (pairs, _) = pair_probabilities(sizes)?;
                Ok(pairs.into_iter().map(|((a, b), p)| (vec![a, b], p)).collect())
            }
        }
    }

    fn draw<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Vec<usize>> {
        match self {
            Selection::Census => Ok((0..m).collect()),
            Selection::Srswor { n } => {
                let mut v = sample_indices(rng, m, *n).into_vec();
                v.sort_unstable();
                Ok(v)
            }
            Selection::Brewer { pi } => Ok(brewer_draw(pi, rng)),
            Selection::Pair { sizes } => {
                let sel = super::pair::select_pair(sizes, rng)?;
                Ok(vec![sel.pair.0, sel.pair.1])
            }
        }
    }

    /// Number of reachable subsets weighted by the children's sample-space sizes.
    fn count(&self, child_counts: &[u128]) -> u128 {
        match self {
            Selection::Census => child_counts.iter().fold(1u128, |a, &c| a.saturating_mul(c)),
            Selection::Srswor { n } => elementary_symmetric(child_counts, *n),
            Selection::Pair { .. } => elementary_symmetric(child_counts, 2),
            Selection::Brewer { pi } => {
                let certain: u128 = pi
                    .iter()
                    .zip(child_counts)
                    .filter(|(p, _)| **p >= 1.0 - 1e-12)
                    .fold(1u128, |a, (_, &c)| a.saturating_mul(c));
                let free: Vec<u128> = pi
                    .iter()
                    .zip(child_counts)
                    .filter(|(p, _)| **p < 1.0 - 1e-12 && **p > 0.0)
                    .map(|(_, &c)| c)
                    .collect();
                let n_free = (pi.iter().sum::<f64>().round() as usize)
                    .saturating_sub(child_counts.len() - free.len());
                certain.saturating_mul(elementary_symmetric(&free, n_free))
            }
        }
    }
}

impl DesignNode {
    /// Simple random sampling without replacement of `n` from units `0..N`.
    pub fn srswor(population: usize, n: usize) -> Self {
        DesignNode::Cluster {
            selection: Selection::Srswor { n },
            children: (0..population).map(DesignNode::Unit).collect(),
        }
    }

    pub fn census(population: usize) -> Self {
        DesignNode::Cluster {
            selection: Selection::Census,
            children: (0..population).map(DesignNode::Unit).collect(),
        }
    }

    /// One-stage Brewer PPS over units `0..sizes.len()`.
    pub fn brewer(sizes: &[f64], n: usize) -> Result<Self> {
        Ok(DesignNode::Cluster {
            selection: Selection::Brewer { pi: capped_inclusion_probabilities(sizes, n)? },
            children: (0..sizes.len()).map(DesignNode::Unit).collect(),
        })
    }

    /// Households of persons with the given size measures, all households
    /// taken, one pair per household. Units are numbered household by household.
    pub fn households_with_pairs(households: &[Vec<f64>]) -> Self {
        let mut next = 0;
        let children = households
            .iter()
            .map(|sizes| {
                let units = (0..sizes.len())
                    .map(|_| {
                        next += 1;
                        DesignNode::Unit(next - 1)
                    })
                    .collect();
                DesignNode::Cluster { selection: Selection::Pair { sizes: sizes.clone() }, children: units }
            })
            .collect();
        DesignNode::Cluster { selection: Selection::Census, children }
    }

    /// The staged design used by [`super::draw_sample`]: Brewer over PSUs,
    /// Brewer over households within each PSU, one pair (or the whole roster)
    /// within each household. Units are population person indices.
    pub fn from_population(pop: &Population, cfg: &DesignConfig) -> Result<Self> {
        cfg.validate(pop)?;
        let psu_sizes: Vec<f64> = (0..pop.config.n_psu).map(|k| pop.psu_size_measure(k)).collect();
        let psu_pi = super::stage_probabilities(&psu_sizes, cfg.n_psu_selected, cfg.allow_certainty)?;
        let mut psus = Vec::with_capacity(pop.config.n_psu);
        for k in 0..pop.config.n_psu {
            let hh_ids: Vec<usize> = pop.psu_households(k).collect();
            let hh_sizes: Vec<f64> = hh_ids.iter().map(|&h| pop.household_size_measure(h)).collect();
            let hh_pi =
                super::stage_probabilities(&hh_sizes, cfg.n_hh_per_psu, cfg.allow_certainty)?;
            let households = hh_ids
                .iter()
                .map(|&h| {
                    let members: Vec<usize> = pop.household(h).collect();
                    let selection = if cfg.pair_per_hh {
                        Selection::Pair { sizes: members.iter().map(|&i| pop.persons[i].size).collect() }
                    } else {
                        Selection::Census
                    };
                    DesignNode::Cluster {
                        selection,
                        children: members.into_iter().map(DesignNode::Unit).collect(),
                    }
                })
                .collect();
            psus.push(DesignNode::Cluster { selection: Selection::Brewer { pi: hh_pi }, children: households });
        }
        Ok(DesignNode::Cluster { selection: Selection::Brewer { pi: psu_pi }, children: psus })
    }

    pub fn validate(&self) -> Result<()> {
        if let DesignNode::Cluster { selection, children } = self {
            if let Some(m) = selection.n_children_expected() {
                if m != children.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "selection describes {m} children but cluster has {}",
                        children.len()
                    )));
                }
            }
            if let Selection::Srswor { n } = selection {
                if *n > children.len() {
                    return Err(Error::InvalidParameter(format!(
                        "SRSWOR of {n} from {} children",
                        children.len()
                    )));
                }
            }
            for c in children {
                c.validate()?;
            }
        }
        Ok(())
    }

    /// All unit ids under this node, sorted.
    pub fn units(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_units(&mut out);
        out.sort_unstable();
        out
    }

    fn collect_units(&self, out: &mut Vec<usize>) {
        match self {
            DesignNode::Unit(u) => out.push(*u),
            DesignNode::Cluster { children, .. } => children.iter().for_each(|c| c.collect_units(out)),
        }
    }

    /// Size of the sample space (saturating).
    pub fn sample_space_size(&self) -> u128 {
        match self {
            DesignNode::Unit(_) => 1,
            DesignNode::Cluster { selection, children } => {
                let counts: Vec<u128> = children.iter().map(|c| c.sample_space_size()).collect();
                selection.count(&counts)
            }
        }
    }

    fn enumerate_points(&self) -> Result<Vec<(Vec<usize>, f64)>> {
        match self {
            DesignNode::Unit(u) => Ok(vec![(vec![*u], 1.0)]),
            DesignNode::Cluster { selection, children } => {
                let child_points: Vec<Vec<(Vec<usize>, f64)>> =
                    children.iter().map(|c| c.enumerate_points()).collect::<Result<_>>()?;
                let mut out = Vec::new();
                for (subset, p) in selection.distribution(children.len())? {
                    let mut acc: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), p)];
                    for &c in &subset {
                        let mut next = Vec::with_capacity(acc.len() * child_points[c].len());
                        for (units, prob) in &acc {
                            for (cu, cp) in &child_points[c] {
                                let mut u = units.clone();
                                u.extend_from_slice(cu);
                                next.push((u, prob * cp));
                            }
                        }
                        acc = next;
                    }
                    out.extend(acc);
                }
                Ok(out)
            }
        }
    }

    /// Every possible sample (sorted unit ids) with its exact probability.
    pub fn enumerate_samples(&self, cap: u128) -> Result<Vec<SamplePoint>> {
        self.validate()?;
        let count = self.sample_space_size();
        if count > cap {
            return Err(Error::EnumerationCap { count, cap });
        }
        Ok(self
            .enumerate_points()?
            .into_iter()
            .map(|(mut units, prob)| {
                units.sort_unstable();
                SamplePoint { units, prob }
            })
            .collect())
    }

    /// One random sample, as sorted unit ids.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        self.draw_into(rng, &mut out)?;
        out.sort_unstable();
        Ok(out)
    }

    fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<usize>) -> Result<()> {
        match self {
            DesignNode::Unit(u) => out.push(*u),
            DesignNode::Cluster { selection, children } => {
                for c in selection.draw(children.len(), rng)? {
                    children[c].draw_into(rng, out)?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoint {
    pub units: Vec<usize>,
    pub prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TensorMethod {
    ExactEnumeration,
    MonteCarlo,
}

/// Sparse joint inclusion probabilities. Absent index sets have probability
/// zero; repeated indices collapse (`pi(i, k, k) = pi(i, k)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointInclusionTensor {
    pub description: String,
    pub population_size: usize,
    pub max_order: usize,
    pub method: TensorMethod,
    pub n_reps: Option<usize>,
    pub expected_sample_size: f64,
    entries: BTreeMap<Vec<usize>, f64>,
    std_errors: BTreeMap<Vec<usize>, f64>,
}

fn canonical(units: &[usize]) -> Vec<usize> {
    let mut v = units.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Visit every non-empty subset of `units` with at most `max_order` elements.
fn for_each_subset(units: &[usize], max_order: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(units: &[usize], start: usize, max: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        for i in start..units.len() {
            cur.push(units[i]);
            f(cur);
            if cur.len() < max {
                rec(units, i + 1, max, cur, f);
            }
            cur.pop();
        }
    }
    rec(units, 0, max_order, &mut Vec::with_capacity(max_order), f);
}

impl JointInclusionTensor {
    fn from_weighted_points<'a, I>(
        description: String,
        population_size: usize,
        max_order: usize,
        method: TensorMethod,
        points: I,
    ) -> Self
    where
        I: IntoIterator<Item = (&'a [usize], f64)>,
    {
        let mut entries: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        let mut expected = 0.0;
        for (units, p) in points {
            expected += p * units.len() as f64;
            for_each_subset(units, max_order, &mut |s| {
                *entries.entry(s.to_vec()).or_insert(0.0) += p;
            });
        }
        Self {
            description,
            population_size,
            max_order,
            method,
            n_reps: None,
            expected_sample_size: expected,
            entries,
            std_errors: BTreeMap::new(),
        }
    }

    /// Joint inclusion probability of the set of `units`.
    pub fn pi(&self, units: &[usize]) -> f64 {
        let key = canonical(units);
        if key.is_empty() {
            return 1.0;
        }
        assert!(
            key.len() <= self.max_order,
            "order {} exceeds the tensor's max order {}",
            key.len(),
            self.max_order
        );
        self.entries.get(&key).copied().unwrap_or(0.0)
    }

    /// Monte-Carlo standard error, `sqrt(p (1 - p) / reps)`; `None` for exact tensors.
    pub fn std_error(&self, units: &[usize]) -> Option<f64> {
        match self.method {
            TensorMethod::ExactEnumeration => None,
            TensorMethod::MonteCarlo => Some(self.std_errors.get(&canonical(units)).copied().unwrap_or(0.0)),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&[usize], f64)> {
        self.entries.iter().map(|(k, v)| (k.as_slice(), *v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sparse JSON: metadata plus `entries: [{units, pi, se?}]`.
    pub fn to_json(&self) -> serde_json::Value {
        let entries: Vec<serde_json::Value> = self
            .entries
            .iter()
            .map(|(k, v)| {
                let mut e = serde_json::json!({ "units": k, "pi": v });
                if let Some(se) = self.std_errors.get(k) {
                    e["se"] = serde_json::json!(se);
                }
                e
            })
            .collect();
        serde_json::json!({
            "description": self.description,
            "population_size": self.population_size,
            "max_order": self.max_order,
            "method": self.method,
            "n_reps": self.n_reps,
            "expected_sample_size": self.expected_sample_size,
            "entries": entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_json())? + "\n")?;
        Ok(())
    }

    /// CSV rows `units, pi` with units joined by `;`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["units", "pi"])?;
        for (k, v) in &self.entries {
            let units: Vec<String> = k.iter().map(|u| u.to_string()).collect();
            w.write_record([units.join(";"), fmt_f64(*v)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Exact joint inclusion probabilities up to order four by exhaustive
/// enumeration of the design's sample space.
pub fn enumerate_design(design: &DesignNode, cap: u128) -> Result<JointInclusionTensor> {
    enumerate_design_to_order(design, 4, cap)
}

pub fn enumerate_design_to_order(design: &DesignNode, max_order: usize, cap: u128) -> Result<JointInclusionTensor> {
    let points = design.enumerate_samples(cap)?;
    let population_size = design.units().len();
    Ok(JointInclusionTensor::from_weighted_points(
        format!("exact enumeration over {} sample points", points.len()),
        population_size,
        max_order,
        TensorMethod::ExactEnumeration,
        points.iter().map(|p| (p.units.as_slice(), p.prob)),
    ))
}

/// Empirical joint inclusion frequencies over `n_reps` independent draws.
pub fn monte_carlo_design_tensor(
    design: &DesignNode,
    max_order: usize,
    n_reps: usize,
    seed: u64,
) -> Result<JointInclusionTensor> {
    if n_reps < 1000 {
        return Err(Error::InvalidParameter(format!("n_reps must be at least 1000, got {n_reps}")));
    }
    design.validate()?;
    let mut rng = stream_rng(seed, &[crate::numeric::label("mc-tensor")]);
    let draws: Vec<Vec<usize>> = (0..n_reps).map(|_| design.draw(&mut rng)).collect::<Result<_>>()?;
    let w = 1.0 / n_reps as f64;
    let mut t = JointInclusionTensor::from_weighted_points(
        format!("monte carlo over {n_reps} draws"),
        design.units().len(),
        max_order,
        TensorMethod::MonteCarlo,
        draws.iter().map(|d| (d.as_slice(), w)),
    );
    t.n_reps = Some(n_reps);
    t.std_errors = t
        .entries
        .iter()
        .map(|(k, &p)| (k.clone(), (p * (1.0 - p) / n_reps as f64).max(0.0).sqrt()))
        .collect();
    Ok(t)
}

/// Monte-Carlo tensor for the staged design of a population.
pub fn monte_carlo_tensor(
    pop: &Population,
    cfg: &DesignConfig,
    max_order: usize,
    n_reps: usize,
) -> Result<JointInclusionTensor> {
    let design = DesignNode::from_population(pop, cfg)?;
    monte_carlo_design_tensor(&design, max_order, n_reps, cfg.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn srswor_four_choose_two() {
        let t = enumerate_design(&DesignNode::srswor(4, 2), DEFAULT_ENUMERATION_CAP).unwrap();
        for i in 0..4 {
            assert!(close(t.pi(&[i]), 0.5, 1e-15));
            for j in 0..4 {
                if i != j {
                    assert!(close(t.pi(&[i, j]), 1.0 / 6.0, 1e-15));
                }
            }
        }
        assert_eq!(t.pi(&[0, 1, 2]), 0.0);
        assert!(close(t.expected_sample_size, 2.0, 1e-14));
    }

    #[test]
    fn srswor_six_choose_two_min_pair_probability() {
        let t = enumerate_design(&DesignNode::srswor(6, 2), DEFAULT_ENUMERATION_CAP).unwrap();
        let max_inv = (0..6)
            .flat_map(|i| (0..6).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| 1.0 / t.pi(&[i, j]))
            .fold(0.0, f64::max);
        assert!(close(max_inv, 15.0, 1e-12));
    }

    #[test]
    fn srswor_enumeration_counts() {
        let pts = DesignNode::srswor(7, 3).enumerate_samples(DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(pts.len(), 35);
        assert_eq!(DesignNode::srswor(7, 3).sample_space_size(), 35);
    }

    #[test]
    fn cross_household_fourth_order_factorizes() {
        let d = DesignNode::households_with_pairs(&[vec![1.0, 2.0, 3.0], vec![2.0, 2.0, 5.0]]);
        assert_eq!(d.sample_space_size(), 9);
        let t = enumerate_design(&d, DEFAULT_ENUMERATION_CAP).unwrap();
        for (i, k) in [(0, 1), (0, 2), (1, 2)] {
            for (j, l) in [(3, 4), (3, 5), (4, 5)] {
                assert_eq!(t.pi(&[i, k, j, l]), t.pi(&[i, k]) * t.pi(&[j, l]));
            }
        }
    }

    #[test]
    fn cap_exceeded_is_reported() {
        let err = enumerate_design(&DesignNode::srswor(30, 10), DEFAULT_ENUMERATION_CAP).unwrap_err();
        assert!(matches!(err, Error::EnumerationCap { .. }));
        assert!(err.to_string().contains("monte_carlo_tensor"));
    }

    fn pair_household(first: usize, sizes: &[f64]) -> DesignNode {
        DesignNode::Cluster {
            selection: Selection::Pair { sizes: sizes.to_vec() },
            children: (first..first + sizes.len()).map(DesignNode::Unit).collect(),
        }
    }

    #[test]
    fn tensor_monotone_and_symmetric() {
        let d = DesignNode::Cluster {
            selection: Selection::Srswor { n: 2 },
            children: vec![
                pair_household(0, &[1.0, 2.0, 3.0]),
                pair_household(3, &[1.0, 1.0, 4.0]),
                DesignNode::Cluster {
                    selection: Selection::Census,
                    children: vec![DesignNode::Unit(6), DesignNode::Unit(7)],
                },
            ],
        };
        let t = enumerate_design(&d, DEFAULT_ENUMERATION_CAP).unwrap();
        let n = 8;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    assert_eq!(t.pi(&[i, j, k]), t.pi(&[k, i, j]));
                    let m = t.pi(&[i, j]).min(t.pi(&[i, k])).min(t.pi(&[j, k]));
                    assert!(t.pi(&[i, j, k]) <= m + 1e-15);
                    assert!((0.0..=1.0 + 1e-15).contains(&t.pi(&[i, j, k])));
                }
            }
        }
        let total: f64 = (0..n).map(|i| t.pi(&[i])).sum();
        assert!(close(total, t.expected_sample_size, 1e-12));
    }

    #[test]
    fn monte_carlo_matches_srswor_identity() {
        let t = monte_carlo_design_tensor(&DesignNode::srswor(4, 2), 2, 100_000, 3).unwrap();
        for i in 0..4 {
            for j in i + 1..4 {
                let se = t.std_error(&[i, j]).unwrap();
                assert!((t.pi(&[i, j]) - 1.0 / 6.0).abs() < 4.0 * se);
            }
        }
        assert!(monte_carlo_design_tensor(&DesignNode::srswor(4, 2), 2, 10, 3).is_err());
    }

    #[test]
    fn monte_carlo_agrees_with_enumeration() {
        let d = DesignNode::Cluster {
            selection: Selection::Brewer { pi: capped_inclusion_probabilities(&[3.0, 1.0, 2.0], 2).unwrap() },
            children: vec![
                pair_household(0, &[1.0, 2.0, 3.0]),
                pair_household(3, &[1.0, 3.0, 1.0]),
                DesignNode::Cluster {
                    selection: Selection::Srswor { n: 1 },
                    children: vec![DesignNode::Unit(6), DesignNode::Unit(7)],
                },
            ],
        };
        let exact = enumerate_design(&d, DEFAULT_ENUMERATION_CAP).unwrap();
        let mc = monte_carlo_design_tensor(&d, 4, 200_000, 11).unwrap();
        for (units, p) in exact.entries() {
            let se = mc.std_error(units).unwrap().max(1e-4);
            assert!((mc.pi(units) - p).abs() < 4.0 * se, "{units:?}: {} vs {p}", mc.pi(units));
        }
        for (units, p) in mc.entries() {
            assert!(exact.pi(units) > 0.0 || p == 0.0);
        }
    }

    #[test]
    fn brewer_order_one_monte_carlo_matches_targets() {
        let sizes = [1.0, 2.0, 3.0, 4.0];
        let d = DesignNode::brewer(&sizes, 2).unwrap();
        let t = monte_carlo_design_tensor(&d, 1, 200_000, 5).unwrap();
        for (k, target) in [0.2, 0.4, 0.6, 0.8].into_iter().enumerate() {
            assert!((t.pi(&[k]) - target).abs() < 4.0 * t.std_error(&[k]).unwrap());
        }
    }

    #[test]
    fn json_lists_entries() {
        let t = enumerate_design(&DesignNode::srswor(3, 2), DEFAULT_ENUMERATION_CAP).unwrap();
        let j = t.to_json();
        assert_eq!(j["method"], "exact-enumeration");
        assert_eq!(j["entries"].as_array().unwrap().len(), 3 + 3);
    }
}
