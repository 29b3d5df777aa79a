//! Design condition constants, sampling-weighted empirical functionals and
//! the pseudo-Hellinger distance, evaluated on enumerable designs.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::alq::al_logpdf;
use crate::design::{enumerate_design, DesignNode, JointInclusionTensor, SampleDraw, TensorMethod};
use crate::error::{Error, Result};
use crate::numeric::{fmt_f64, integrate_with_breaks, CompensatedSum};

/// User thresholds; `None` only requires the constant to be finite.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionThresholds {
    pub gamma_max: Option<f64>,
    pub c5_max: Option<f64>,
    pub c4_dev_max: Option<f64>,
    pub f_min: Option<f64>,
}

/// A constant with an interval from per-entry Monte-Carlo error bands
/// (two standard errors); the interval is the point value for exact tensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Banded {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Banded {
    fn exact(value: f64) -> Self {
        Self { value, lo: value, hi: value }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub condition: String,
    pub value: Option<f64>,
    pub threshold: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub description: String,
    pub method: TensorMethod,
    pub population_size: usize,
    pub sample_size: f64,
    /// Largest inverse pairwise probability; `None` when some pair can never
    /// be observed together.
    pub gamma: Option<Banded>,
    pub zero_pairs: usize,
    pub c5: Option<Banded>,
    pub c4_dev: Option<Banded>,
    pub f: f64,
    pub checks: Vec<ConditionCheck>,
}

impl ConditionReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn passes(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Probability with its band, from a tensor entry.
fn entry(t: &JointInclusionTensor, units: &[usize]) -> (f64, f64, f64) {
    let p = t.pi(units);
    match t.std_error(units) {
        Some(se) => (p, (p - 2.0 * se).max(0.0), (p + 2.0 * se).min(1.0)),
        None => (p, p, p),
    }
}

#[derive(Default)]
struct Max {
    value: f64,
    lo: f64,
    hi: f64,
    seen: bool,
}

impl Max {
    fn push(&mut self, value: f64, lo: f64, hi: f64) {
        if !self.seen {
            *self = Max { value, lo, hi, seen: true };
        } else {
            self.value = self.value.max(value);
            self.lo = self.lo.max(lo);
            self.hi = self.hi.max(hi);
        }
    }

    fn finish(self) -> Option<Banded> {
        self.seen.then_some(Banded { value: self.value, lo: self.lo, hi: self.hi })
    }
}

/// Ratio `a / (b c)` with its interval under the entries' bands.
fn ratio(a: (f64, f64, f64), b: (f64, f64, f64), c: (f64, f64, f64)) -> (f64, f64, f64) {
    let lo = if b.2 * c.2 > 0.0 { a.1 / (b.2 * c.2) } else { 0.0 };
    let hi = if b.1 * c.1 > 0.0 { a.2 / (b.1 * c.1) } else { f64::INFINITY };
    (a.0 / (b.0 * c.0), lo, hi)
}

fn check_units(t: &JointInclusionTensor) -> Result<usize> {
    let n = t.population_size;
    if t.max_order < 4 {
        return Err(Error::InvalidParameter(format!("tensor has max order {}, need 4", t.max_order)));
    }
    if let Some((units, _)) = t.entries().find(|(u, _)| u.iter().any(|&x| x >= n)) {
        return Err(Error::InvalidParameter(format!("tensor unit {units:?} outside 0..{n}")));
    }
    Ok(n)
}

fn gamma_of(t: &JointInclusionTensor, n: usize) -> (Option<Banded>, usize) {
    let mut max = Max::default();
    let mut zero = 0;
    for i in 0..n {
        for j in i + 1..n {
            let (p, lo, hi) = entry(t, &[i, j]);
            if p <= 0.0 {
                zero += 1;
                continue;
            }
            let upper = if lo > 0.0 { 1.0 / lo } else { f64::INFINITY };
            max.push(1.0 / p, 1.0 / hi, upper);
        }
    }
    if zero > 0 {
        return (None, zero);
    }
    (max.finish().or(Some(Banded::exact(1.0))), 0)
}

fn c5_of(t: &JointInclusionTensor, n: usize) -> Option<Banded> {
    let mut max = Max::default();
    for i in 0..n {
        for k in 0..n {
            for l in k + 1..n {
                if k == i || l == i {
                    continue;
                }
                let (a, b, c) = (entry(t, &[i, k, l]), entry(t, &[i, k]), entry(t, &[i, l]));
                if b.0 * c.0 > 0.0 {
                    let (v, lo, hi) = ratio(a, b, c);
                    max.push(v, lo, hi);
                }
            }
        }
    }
    max.finish()
}

/// `N max |pi_ikjl / (pi_ik pi_jl) - 1|` over `i != j`, `k != i`, `l != j`,
/// restricted to quadruples accepted by `keep`.
/// Relative deviations of exact probabilities below this are rounding noise
/// from summing sample-point products, and are reported as zero.
const EXACT_ROUNDING: f64 = 64.0 * f64::EPSILON;

fn c4_of(t: &JointInclusionTensor, n: usize, keep: impl Fn(usize, usize, usize, usize) -> bool) -> Option<Banded> {
    let exact = t.method == TensorMethod::ExactEnumeration;
    let mut max = Max::default();
    for i in 0..n {
        for k in (0..n).filter(|&k| k != i) {
            let b = entry(t, &[i, k]);
            for j in (0..n).filter(|&j| j != i) {
                for l in (0..n).filter(|&l| l != j) {
                    if !keep(i, k, j, l) {
                        continue;
                    }
                    let c = entry(t, &[j, l]);
                    if b.0 * c.0 <= 0.0 {
                        continue;
                    }
                    let (mut v, mut lo, mut hi) = ratio(entry(t, &[i, k, j, l]), b, c);
                    if exact && (v - 1.0).abs() <= EXACT_ROUNDING {
                        (v, lo, hi) = (1.0, 1.0, 1.0);
                    }
                    // distance of the band from 1
                    let near = if lo <= 1.0 && hi >= 1.0 { 0.0 } else { (lo - 1.0).abs().min((hi - 1.0).abs()) };
                    let far = (lo - 1.0).abs().max((hi - 1.0).abs());
                    let s = n as f64;
                    max.push(s * (v - 1.0).abs(), s * near, s * far);
                }
            }
        }
    }
    max.finish()
}

fn threshold_check(name: &str, value: Option<f64>, threshold: Option<f64>, below: bool) -> ConditionCheck {
    let pass = match (value, threshold) {
        (None, _) => false,
        (Some(v), None) => v.is_finite(),
        (Some(v), Some(t)) => {
            if below {
                v <= t
            } else {
                v >= t
            }
        }
    };
    ConditionCheck { condition: name.into(), value, threshold, pass }
}

fn report(
    t: &JointInclusionTensor,
    n: f64,
    big_n: usize,
    thresholds: &ConditionThresholds,
    c4: Option<Banded>,
) -> Result<ConditionReport> {
    let units = check_units(t)?;
    if units != big_n {
        return Err(Error::DimensionMismatch(format!("tensor covers {units} units, N = {big_n}")));
    }
    if !(n > 0.0 && n <= big_n as f64 + 1e-9) {
        return Err(Error::InvalidParameter(format!("sample size {n} not in (0, {big_n}]")));
    }
    let (gamma, zero_pairs) = gamma_of(t, big_n);
    let c5 = c5_of(t, big_n);
    let f = n / big_n as f64;
    let checks = vec![
        threshold_check("gamma", gamma.map(|g| g.value), thresholds.gamma_max, true),
        threshold_check("c5", c5.map(|c| c.value).or(Some(0.0)), thresholds.c5_max, true),
        threshold_check("c4_dev", c4.map(|c| c.value).or(Some(0.0)), thresholds.c4_dev_max, true),
        threshold_check("f", Some(f), thresholds.f_min, false),
    ];
    Ok(ConditionReport {
        description: t.description.clone(),
        method: t.method,
        population_size: big_n,
        sample_size: n,
        gamma,
        zero_pairs,
        c5,
        c4_dev: c4,
        f,
        checks,
    })
}

/// Condition constants over all index tuples of a tensor on units `0..N`.
pub fn check_conditions(
    t: &JointInclusionTensor,
    n: f64,
    big_n: usize,
    thresholds: &ConditionThresholds,
) -> Result<ConditionReport> {
    let c4 = c4_of(t, check_units(t)?, |_, _, _, _| true);
    report(t, n, big_n, thresholds, c4)
}

/// As [`check_conditions`], with the fourth-order constant restricted to
/// quadruples whose `{i, k}` and `{j, l}` lie in disjoint sets of groups
/// (households, say). `group[u]` is the group of unit `u`.
pub fn check_conditions_cross_group(
    t: &JointInclusionTensor,
    n: f64,
    big_n: usize,
    thresholds: &ConditionThresholds,
    group: &[usize],
) -> Result<ConditionReport> {
    let units = check_units(t)?;
    if group.len() != units {
        return Err(Error::DimensionMismatch(format!("{} group labels for {units} units", group.len())));
    }
    let c4 = c4_of(t, units, |i, k, j, l| {
        let (a, b) = (group[i], group[k]);
        let (c, d) = (group[j], group[l]);
        a != c && a != d && b != c && b != d
    });
    report(t, n, big_n, thresholds, c4)
}

/// Group of each unit: the index of its innermost enclosing cluster, in
/// depth-first order.
pub fn unit_groups(design: &DesignNode) -> Vec<usize> {
    fn walk(node: &DesignNode, current: usize, next: &mut usize, out: &mut HashMap<usize, usize>) {
        match node {
            DesignNode::Unit(u) => {
                out.insert(*u, current);
            }
            DesignNode::Cluster { children, .. } => {
                let me = *next;
                *next += 1;
                for c in children {
                    walk(c, me, next, out);
                }
            }
        }
    }
    let mut map = HashMap::new();
    let mut next = 0;
    walk(design, 0, &mut next, &mut map);
    let n = map.keys().max().map_or(0, |m| m + 1);
    (0..n).map(|u| map.get(&u).copied().unwrap_or(usize::MAX)).collect()
}

/// Exact conditions for an enumerable design.
pub fn check_design(design: &DesignNode, thresholds: &ConditionThresholds, cap: u128) -> Result<ConditionReport> {
    let t = enumerate_design(design, cap)?;
    let n = t.expected_sample_size;
    check_conditions(&t, n, t.population_size, thresholds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRow {
    pub population_size: usize,
    pub gamma: Option<f64>,
    pub c5: Option<f64>,
    pub c4_dev: Option<f64>,
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderStudy {
    pub rows: Vec<LadderRow>,
    /// Least-squares slope of `log c4_dev` on `log N`; `None` with fewer
    /// than two positive values.
    pub c4_dev_slope: Option<f64>,
}

impl LadderStudy {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_else(|| "inf".into());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["N", "gamma", "c5", "c4_dev", "f"])?;
        for r in &self.rows {
            w.write_record([r.population_size.to_string(), opt(r.gamma), opt(r.c5), opt(r.c4_dev), fmt_f64(r.f)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Conditions across a sequence of growing designs.
pub fn ladder_study(designs: &[DesignNode], cap: u128) -> Result<LadderStudy> {
    let mut rows = Vec::with_capacity(designs.len());
    for d in designs {
        let r = check_design(d, &ConditionThresholds::default(), cap)?;
        rows.push(LadderRow {
            population_size: r.population_size,
            gamma: r.gamma.map(|g| g.value),
            c5: r.c5.map(|c| c.value),
            c4_dev: r.c4_dev.map(|c| c.value),
            f: r.f,
        });
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.c4_dev.filter(|c| *c > 0.0).map(|c| ((r.population_size as f64).ln(), c.ln())))
        .collect();
    Ok(LadderStudy { c4_dev_slope: least_squares_slope(&pts), rows })
}

fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// A realized sample together with its pairwise inclusion probabilities.
#[derive(Debug, Clone, Copy)]
pub enum SampleSource<'a> {
    /// Units of one sample, probabilities from a tensor.
    Tensor { tensor: &'a JointInclusionTensor, units: &'a [usize] },
    /// A staged draw; units are population person indices.
    Draw(&'a SampleDraw),
}

impl SampleSource<'_> {
    fn units(&self) -> Vec<usize> {
        match self {
            SampleSource::Tensor { units, .. } => units.to_vec(),
            SampleSource::Draw(s) => s.persons.iter().map(|p| p.person).collect(),
        }
    }

    /// Pairwise probability of the `a`-th and `b`-th sampled units.
    fn pair_pi(&self, a: usize, b: usize) -> f64 {
        match self {
            SampleSource::Tensor { tensor, units } => tensor.pi(&[units[a], units[b]]),
            SampleSource::Draw(s) => s.pairwise_pi(a, b),
        }
    }
}

/// `(1/N) sum_i (1/(N-1)) sum_{k != i} d_i d_k / pi_ik f(X_i)`, with `f`
/// given for every population unit and `N = f.len()`.
pub fn weighted_empirical(f: &[f64], sample: SampleSource) -> Result<f64> {
    let n = f.len();
    if n < 2 {
        return Err(Error::InvalidParameter("need at least two population units".into()));
    }
    let units = sample.units();
    let mut total = CompensatedSum::new();
    for (a, &i) in units.iter().enumerate() {
        let fi = *f.get(i).ok_or_else(|| Error::DimensionMismatch(format!("unit {i} outside population of {n}")))?;
        let mut inner = CompensatedSum::new();
        for b in (0..units.len()).filter(|&b| b != a) {
            let pi = sample.pair_pi(a, b);
            if !(pi > 0.0) {
                return Err(Error::MissingProbability(format!("realized pair ({i}, {})", units[b])));
            }
            inner.add(1.0 / pi);
        }
        total.add(inner.value() * fi);
    }
    Ok(total.value() / (n as f64 * (n - 1) as f64))
}

/// Exact design expectation of [`weighted_empirical`] over all samples.
pub fn design_expectation(f: &[f64], design: &DesignNode, cap: u128) -> Result<f64> {
    let t = crate::design::enumerate_design_to_order(design, 2, cap)?;
    let mut total = CompensatedSum::new();
    for s in design.enumerate_samples(cap)? {
        total.add(s.prob * weighted_empirical(f, SampleSource::Tensor { tensor: &t, units: &s.units })?);
    }
    Ok(total.value())
}

/// Parameters of an asymmetric Laplace density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlParams {
    pub mu: f64,
    pub tau: f64,
    pub q: f64,
}

/// Squared Hellinger distance `int (sqrt p1 - sqrt p2)^2` between two AL
/// densities, by adaptive quadrature split at both locations.
pub fn hellinger_sq_al(p1: AlParams, p2: AlParams) -> Result<f64> {
    al_logpdf(0.0, 0.0, p1.tau, p1.q)?;
    al_logpdf(0.0, 0.0, p2.tau, p2.q)?;
    if p1 == p2 {
        return Ok(0.0);
    }
    let rate = |p: AlParams| p.tau * p.q.min(1.0 - p.q);
    let reach = 60.0 / rate(p1).min(rate(p2));
    let lo = p1.mu.min(p2.mu) - reach;
    let hi = p1.mu.max(p2.mu) + reach;
    let integrand = |y: f64| {
        let a = (0.5 * al_logpdf(y, p1.mu, p1.tau, p1.q).unwrap_or(f64::NEG_INFINITY)).exp();
        let b = (0.5 * al_logpdf(y, p2.mu, p2.tau, p2.q).unwrap_or(f64::NEG_INFINITY)).exp();
        (a - b) * (a - b)
    };
    let d2 = integrate_with_breaks(integrand, lo, hi, &[p1.mu, p2.mu], 1e-9)?;
    if d2 < -1e-9 {
        return Err(Error::Numerical(format!("negative squared Hellinger distance {d2}")));
    }
    Ok(d2.clamp(0.0, 2.0))
}

/// Sampling-weighted pseudo-Hellinger distance between two families of AL
/// densities indexed by population unit.
pub fn pseudo_hellinger(p1: &[AlParams], p2: &[AlParams], sample: SampleSource) -> Result<f64> {
    if p1.len() != p2.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} densities", p1.len(), p2.len())));
    }
    let mut d2 = vec![0.0; p1.len()];
    for i in sample.units() {
        if i >= p1.len() {
            return Err(Error::DimensionMismatch(format!("unit {i} outside population of {}", p1.len())));
        }
        d2[i] = hellinger_sq_al(p1[i], p2[i])?;
    }
    Ok(weighted_empirical(&d2, sample)?.max(0.0).sqrt())
}

/// Unweighted population average Hellinger distance.
pub fn average_hellinger(p1: &[AlParams], p2: &[AlParams]) -> Result<f64> {
    let mut s = CompensatedSum::new();
    for (a, b) in p1.iter().zip(p2) {
        s.add(hellinger_sq_al(*a, *b)?);
    }
    Ok((s.value() / p1.len() as f64).sqrt())
}
