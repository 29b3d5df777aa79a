//! Within-household selection of a single pair, with probability
//! proportional to the summed size of its two members.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

#[derive(Debug, Clone, PartialEq)]
pub struct PairSelection {
    /// Selected pair as roster positions `(a, b)` with `a < b`.
    pub pair: (usize, usize),
    /// Probability of every unordered pair, in lexicographic order.
    pub pair_probs: Vec<((usize, usize), f64)>,
    /// Person marginals: sum of the probabilities of the pairs containing them.
    pub marginals: Vec<f64>,
}

impl PairSelection {
    pub fn pair_prob(&self, a: usize, b: usize) -> Option<f64> {
        let key = (a.min(b), a.max(b));
        self.pair_probs.iter().find(|(p, _)| *p == key).map(|(_, v)| *v)
    }
}

/// Probability table for pair selection over roster `sizes`.
///
/// Unordered pairs are used: counting ordered pairs doubles every pair's
/// size and leaves the normalized probabilities unchanged. The pair sizes
/// total `(m - 1) * sum(s)`, so person `i` is included with probability
/// `((m - 2) s_i + sum(s)) / ((m - 1) sum(s))`.
pub fn pair_probabilities(sizes: &[f64]) -> Result<(Vec<((usize, usize), f64)>, Vec<f64>)> {
    let m = sizes.len();
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "pair selection needs at least 2 persons, got {m}"
        )));
    }
    if let Some((index, &value)) =
        sizes.iter().enumerate().find(|(_, s)| !(**s > 0.0 && s.is_finite()))
    {
        return Err(Error::NonPositiveSize { index, value });
    }
    let total = compensated_sum(sizes.iter().copied());
    let denom = (m - 1) as f64 * total;
    let mut pairs = Vec::with_capacity(m * (m - 1) / 2);
    for a in 0..m {
        for b in a + 1..m {
            pairs.push(((a, b), (sizes[a] + sizes[b]) / denom));
        }
    }
    let marginals = sizes.iter().map(|s| ((m - 2) as f64 * s + total) / denom).collect();
    Ok((pairs, marginals))
}

pub fn select_pair<R: Rng + ?Sized>(sizes: &[f64], rng: &mut R) -> Result<PairSelection> {
    let (pair_probs, marginals) = pair_probabilities(sizes)?;
    let mut u: f64 = rng.random();
    let mut pair = pair_probs.last().expect("at least one pair").0;
    for &(p, prob) in &pair_probs {
        if u < prob {
            pair = p;
            break;
        }
        u -= prob;
    }
    Ok(PairSelection { pair, pair_probs, marginals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::stream_rng;
    use proptest::prelude::*;

    #[test]
    fn symmetric_sizes() {
        let (pairs, marg) = pair_probabilities(&[1.0, 1.0, 1.0]).unwrap();
        for (_, p) in pairs {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        for m in marg {
            assert!((m - 2.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sizes_one_two_three() {
        let mut rng = stream_rng(0, &[0]);
        let sel = select_pair(&[1.0, 2.0, 3.0], &mut rng).unwrap();
        assert_eq!(sel.pair_prob(0, 1), Some(3.0 / 12.0));
        assert_eq!(sel.pair_prob(0, 2), Some(4.0 / 12.0));
        assert_eq!(sel.pair_prob(1, 2), Some(5.0 / 12.0));
        assert_eq!(sel.marginals, vec![7.0 / 12.0, 8.0 / 12.0, 9.0 / 12.0]);
    }

    #[test]
    fn two_person_household_is_certain() {
        let (pairs, marg) = pair_probabilities(&[1.7, 4.2]).unwrap();
        assert_eq!(pairs, vec![((0, 1), 1.0)]);
        assert_eq!(marg, vec![1.0, 1.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(pair_probabilities(&[1.0]).is_err());
        assert!(pair_probabilities(&[1.0, -1.0, 2.0]).is_err());
    }

    #[test]
    fn empirical_frequencies_match() {
        let mut rng = stream_rng(9, &[0]);
        let sizes = [1.0, 2.0, 3.0];
        let reps = 200_000;
        let mut counts = [0usize; 3];
        for _ in 0..reps {
            let s = select_pair(&sizes, &mut rng).unwrap();
            let idx = match s.pair {
                (0, 1) => 0,
                (0, 2) => 1,
                _ => 2,
            };
            counts[idx] += 1;
        }
        for (c, p) in counts.iter().zip([3.0 / 12.0, 4.0 / 12.0, 5.0 / 12.0]) {
            let f = *c as f64 / reps as f64;
            let se = (p * (1.0 - p) / reps as f64).sqrt();
            assert!((f - p).abs() < 4.0 * se);
        }
    }

    proptest! {
        #[test]
        fn marginals_sum_to_two_and_match_pair_sums(
            sizes in proptest::collection::vec(0.01f64..50.0, 2..7)
        ) {
            let (pairs, marg) = pair_probabilities(&sizes).unwrap();
            let total: f64 = pairs.iter().map(|(_, p)| p).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!((marg.iter().sum::<f64>() - 2.0).abs() < 1e-12);
            for (i, m) in marg.iter().enumerate() {
                let s: f64 = pairs.iter().filter(|((a, b), _)| *a == i || *b == i).map(|(_, p)| p).sum();
                prop_assert!((s - m).abs() < 1e-12);
            }
        }
    }
}
