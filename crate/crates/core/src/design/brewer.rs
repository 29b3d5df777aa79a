//! Brewer's draw-by-draw PPS sampling without replacement.
//!
//! At draw `i` (1-based) of `n`, with `a` the summed target probability of
//! the units already taken, each remaining unit is picked with probability
//! proportional to
//!
//! ```text
//! pi_k (n - a - pi_k) / (n - a - (n - i + 1) pi_k)
//! ```
//!
//! which reproduces the target inclusion probabilities `pi_k` exactly.
//! Units with `pi_k = 1` are taken up front and the draw runs over the rest.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

const CERTAIN: f64 = 1.0 - 1e-12;

fn validate_sizes(sizes: &[f64], n: usize) -> Result<()> {
    if n > sizes.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot select {n} units from a frame of {}",
            sizes.len()
        )));
    }
    if let Some((index, &value)) =
        sizes.iter().enumerate().find(|(_, s)| !(**s > 0.0 && s.is_finite()))
    {
        return Err(Error::NonPositiveSize { index, value });
    }
    Ok(())
}

/// Target inclusion probabilities `n s_k / sum(s)`. A unit whose probability
/// would exceed one is an error; a full census (`n = |sizes|`) is not.
pub fn pps_inclusion_probabilities(sizes: &[f64], n: usize) -> Result<Vec<f64>> {
    validate_sizes(sizes, n)?;
    if n == sizes.len() {
        return Ok(vec![1.0; n]);
    }
    let total = compensated_sum(sizes.iter().copied());
    let pi: Vec<f64> = sizes.iter().map(|s| n as f64 * s / total).collect();
    if let Some((index, &p)) = pi.iter().enumerate().find(|(_, p)| **p > 1.0 + 1e-12) {
        return Err(Error::CertaintyUnit { index, pi: p });
    }
    Ok(pi.into_iter().map(|p| p.min(1.0)).collect())
}

/// Inclusion probabilities proportional to size with certainty units capped
/// at one; the remaining units share the remaining sample size in proportion
/// to size, iterating until no probability exceeds one.
pub fn capped_inclusion_probabilities(sizes: &[f64], n: usize) -> Result<Vec<f64>> {
    validate_sizes(sizes, n)?;
    let mut pi = vec![0.0; sizes.len()];
    let mut certain = vec![false; sizes.len()];
    loop {
        let n_certain = certain.iter().filter(|c| **c).count();
        let remaining = n - n_certain.min(n);
        let total = compensated_sum(
            sizes.iter().zip(&certain).filter(|(_, c)| !**c).map(|(s, _)| *s),
        );
        let mut changed = false;
        for k in 0..sizes.len() {
            if certain[k] {
                pi[k] = 1.0;
                continue;
            }
            pi[k] = if total > 0.0 { remaining as f64 * sizes[k] / total } else { 0.0 };
            if pi[k] >= CERTAIN {
                certain[k] = true;
                changed = true;
            }
        }
        if !changed {
            return Ok(pi);
        }
    }
}

/// Brewer selection weights for the next draw.
fn step_weights(pi: &[f64], taken: &[bool], n: f64, a: f64, remaining_draws: f64) -> Vec<f64> {
    pi.iter()
        .zip(taken)
        .map(|(&p, &t)| {
            if t || p <= 0.0 {
                0.0
            } else {
                let num = p * (n - a - p);
                let den = n - a - remaining_draws * p;
                if den > 0.0 {
                    (num / den).max(0.0)
                } else {
                    // only reachable through rounding when p ~ n - a
                    f64::MAX.sqrt()
                }
            }
        })
        .collect()
}

fn pick<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = k;
            if u < w {
                return k;
            }
            u -= w;
        }
    }
    last
}

/// Draw a Brewer sample for the given target inclusion probabilities
/// (which must sum to an integer sample size). Returns sorted indices.
pub fn brewer_draw<R: Rng + ?Sized>(pi: &[f64], rng: &mut R) -> Vec<usize> {
    let n_total = compensated_sum(pi.iter().copied()).round() as usize;
    let mut taken: Vec<bool> = pi.iter().map(|&p| p >= CERTAIN).collect();
    let n_certain = taken.iter().filter(|t| **t).count();
    let n = n_total.saturating_sub(n_certain);
    let free: Vec<f64> = pi.iter().zip(&taken).map(|(&p, &t)| if t { 0.0 } else { p }).collect();
    let mut a = 0.0;
    for i in 1..=n {
        let w = step_weights(&free, &taken, n as f64, a, (n - i + 1) as f64);
        let k = pick(&w, rng);
        taken[k] = true;
        a += free[k];
    }
    taken.iter().enumerate().filter(|(_, t)| **t).map(|(k, _)| k).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpsSelection {
    pub selected: Vec<usize>,
    pub pi: Vec<f64>,
}

/// Select `n` of the units proportional to `sizes` with Brewer's method.
/// Certainty units are rejected.
pub fn brewer_pps_select<R: Rng + ?Sized>(
    sizes: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<PpsSelection> {
    let pi = pps_inclusion_probabilities(sizes, n)?;
    let selected = brewer_draw(&pi, rng);
    Ok(PpsSelection { selected, pi })
}

/// Exact distribution of Brewer samples: every reachable sample (as sorted
/// indices) with its probability. The draw probabilities depend only on the
/// set taken so far, so the sequence tree collapses onto subsets.
pub fn brewer_sample_distribution(pi: &[f64]) -> Result<Vec<(Vec<usize>, f64)>> {
    let m = pi.len();
    if m > 63 {
        return Err(Error::InvalidParameter(format!(
            "exact Brewer distribution supports at most 63 units, got {m}"
        )));
    }
    let n_total = compensated_sum(pi.iter().copied()).round() as usize;
    let certain: Vec<bool> = pi.iter().map(|&p| p >= CERTAIN).collect();
    let n_certain = certain.iter().filter(|c| **c).count();
    let n = n_total.saturating_sub(n_certain);
    let free: Vec<f64> = pi.iter().zip(&certain).map(|(&p, &c)| if c { 0.0 } else { p }).collect();

    let mut layer: BTreeMap<u64, f64> = BTreeMap::new();
    layer.insert(0, 1.0);
    for i in 1..=n {
        let mut next: BTreeMap<u64, f64> = BTreeMap::new();
        for (&mask, &prob) in &layer {
            let taken: Vec<bool> = (0..m).map(|k| mask >> k & 1 == 1 || certain[k]).collect();
            let a: f64 = (0..m).filter(|&k| mask >> k & 1 == 1).map(|k| free[k]).sum();
            let w = step_weights(&free, &taken, n as f64, a, (n - i + 1) as f64);
            let total: f64 = w.iter().sum();
            for (k, &wk) in w.iter().enumerate() {
                if wk > 0.0 {
                    *next.entry(mask | 1 << k).or_insert(0.0) += prob * wk / total;
                }
            }
        }
        layer = next;
    }
    Ok(layer
        .into_iter()
        .map(|(mask, prob)| {
            let units = (0..m).filter(|&k| mask >> k & 1 == 1 || certain[k]).collect();
            (units, prob)
        })
        .collect())
}
