//! Gradient-free random-walk Metropolis, used to cross-check the HMC sampler.

use rand::Rng;
use rand_distr::StandardNormal;

use super::mcmc_stats::{ChainRun, Welford};
use super::nuts::LogDensity;
use crate::error::{Error, Result};

const TARGET_ACCEPT: f64 = 0.234;

/// Runs one random-walk Metropolis chain with a diagonal Gaussian proposal.
///
/// During warmup the global scale follows a Robbins-Monro recursion toward
/// an acceptance rate of 0.234; the per-coordinate scales are re-estimated
/// from the draws of the first half of warmup.
pub fn sample_rwm<T: LogDensity, R: Rng>(
    target: &T,
    init: Vec<f64>,
    warmup: usize,
    draws: usize,
    rng: &mut R,
) -> Result<ChainRun> {
    let dim = target.dim();
    if init.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "initial state has {} coordinates, target has {dim}",
            init.len()
        )));
    }
    let mut grad = vec![0.0; dim];
    let mut x = init;
    let mut logp = target.log_density_and_gradient(&x, &mut grad);
    if !logp.is_finite() {
        return Err(Error::Sampler(format!("non-finite log density at initial state {x:?}")));
    }
    let mut log_scale = (2.38 / (dim as f64).sqrt()).ln() - 2.0;
    let mut sd = vec![1.0; dim];
    let mut welford = Welford::new(dim);
    let mut proposal = vec![0.0; dim];

    let mut step = |x: &mut Vec<f64>, logp: &mut f64, scale: f64, sd: &[f64], rng: &mut R| -> bool {
        for j in 0..dim {
            let e: f64 = rng.sample(StandardNormal);
            proposal[j] = x[j] + scale * sd[j] * e;
        }
        let lp = target.log_density_and_gradient(&proposal, &mut grad);
        if lp.is_finite() && rng.random::<f64>().ln() < lp - *logp {
            x.copy_from_slice(&proposal);
            *logp = lp;
            true
        } else {
            false
        }
    };

    let half = warmup / 2;
    for i in 0..warmup {
        let accepted = step(&mut x, &mut logp, log_scale.exp(), &sd, rng);
        let rate = 1.0 / ((i % half.max(1)) as f64 + 1.0).sqrt();
        log_scale += rate * (f64::from(u8::from(accepted)) - TARGET_ACCEPT);
        if i >= half / 2 && i < half {
            welford.add(&x);
        }
        if i + 1 == half && welford.count() > 10 {
            sd = welford.variance().iter().map(|v| v.sqrt().max(1e-8)).collect();
            log_scale = (2.38 / (dim as f64).sqrt()).ln();
        }
    }

    let mut run = ChainRun::with_capacity(dim, draws);
    let scale = log_scale.exp();
    for _ in 0..draws {
        let accepted = step(&mut x, &mut logp, scale, &sd, rng);
        run.push(&x, logp, f64::from(u8::from(accepted)), false);
    }
    run.step_size = scale;
    run.inv_metric = sd.iter().map(|s| s * s).collect();
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::stream_rng;

    struct Correlated;

    impl LogDensity for Correlated {
        fn dim(&self) -> usize {
            2
        }

        fn log_density_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            // N(mean (1, 3), sd (1, 5)), correlation 0.5
            let (a, b) = (x[0] - 1.0, (x[1] - 3.0) / 5.0);
            let r = 0.5;
            let k = 1.0 / (1.0 - r * r);
            grad[0] = -k * (a - r * b);
            grad[1] = -k * (b - r * a) / 5.0;
            -0.5 * k * (a * a - 2.0 * r * a * b + b * b)
        }
    }

    #[test]
    fn recovers_moments() {
        let run = sample_rwm(&Correlated, vec![0.0, 0.0], 4000, 40000, &mut stream_rng(5, &[0])).unwrap();
        let m0 = run.column(0).iter().sum::<f64>() / run.len() as f64;
        let m1 = run.column(1).iter().sum::<f64>() / run.len() as f64;
        assert!((m0 - 1.0).abs() < 0.1 && (m1 - 3.0).abs() < 0.5, "{m0} {m1}");
        let acc = run.accept_stats.iter().sum::<f64>() / run.len() as f64;
        assert!(acc > 0.15 && acc < 0.45, "{acc}");
    }
}
