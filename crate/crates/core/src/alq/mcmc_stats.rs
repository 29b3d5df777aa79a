//! Chain storage and convergence diagnostics.

/// Draws and per-iteration statistics of one chain, row-major.
#[derive(Debug, Clone, Default)]
pub struct ChainRun {
    pub dim: usize,
    pub draws: Vec<f64>,
    pub logp: Vec<f64>,
    pub accept_stats: Vec<f64>,
    pub n_divergent: usize,
    pub max_depth_hits: usize,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
}

impl ChainRun {
    pub fn with_capacity(dim: usize, n: usize) -> Self {
        Self {
            dim,
            draws: Vec::with_capacity(dim * n),
            logp: Vec::with_capacity(n),
            accept_stats: Vec::with_capacity(n),
            ..Default::default()
        }
    }

    pub fn push(&mut self, x: &[f64], logp: f64, accept: f64, divergent: bool) {
        self.draws.extend_from_slice(x);
        self.logp.push(logp);
        self.accept_stats.push(accept);
        self.n_divergent += usize::from(divergent);
    }

    pub fn len(&self) -> usize {
        self.logp.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.draws[i * self.dim..(i + 1) * self.dim]
    }

    #[cfg(test)]
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.iter().skip(j).step_by(self.dim).copied().collect()
    }
}

/// Running per-coordinate mean and variance.
#[derive(Debug, Clone)]
pub(crate) struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub(crate) fn new(dim: usize) -> Self {
        Self { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub(crate) fn add(&mut self, x: &[f64]) {
        self.n += 1;
        for ((m, s), v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / self.n as f64;
            *s += d * (v - *m);
        }
    }

    pub(crate) fn count(&self) -> usize {
        self.n
    }

    pub(crate) fn variance(&self) -> Vec<f64> {
        let denom = (self.n.max(2) - 1) as f64;
        self.m2.iter().map(|s| s / denom).collect()
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Halves of every chain, truncated to a common length.
fn split_chains(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0) / 2;
    chains.iter().flat_map(|c| [&c[..n], &c[c.len() - n..]]).collect()
}

/// Split-chain potential scale reduction factor.
///
/// Returns NaN when fewer than four draws per chain are available.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let parts = split_chains(chains);
    if parts.len() < 2 || parts[0].len() < 2 {
        return f64::NAN;
    }
    let n = parts[0].len() as f64;
    let means: Vec<f64> = parts.iter().map(|c| mean(c)).collect();
    let w = mean(&parts.iter().map(|c| sample_variance(c)).collect::<Vec<_>>());
    let b = n * sample_variance(&means);
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Biased autocovariance at `lag`.
fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence
/// estimator, computed on split chains.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let parts = split_chains(chains);
    let m = parts.len();
    if m == 0 || parts[0].len() < 4 {
        return f64::NAN;
    }
    let n = parts[0].len();
    let nf = n as f64;
    let means: Vec<f64> = parts.iter().map(|c| mean(c)).collect();
    let mean_acov = |lag: usize| -> f64 {
        parts.iter().zip(&means).map(|(c, &mu)| autocov(c, mu, lag)).sum::<f64>() / m as f64
    };
    let mean_var = mean_acov(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_variance(&means);
    }
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let rho = |lag: usize| 1.0 - (mean_var - mean_acov(lag)) / var_plus;

    let mut rho_hat = vec![0.0; n + 1];
    rho_hat[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho(1);
    rho_hat[1] = odd;
    let mut t = 1;
    while t + 5 < n && even + odd > 0.0 {
        even = rho(t + 1);
        odd = rho(t + 2);
        if even + odd >= 0.0 {
            rho_hat[t + 1] = even;
            rho_hat[t + 2] = odd;
        }
        t += 2;
    }
    let max_t = t;
    if even > 0.0 {
        rho_hat[max_t + 1] = even;
    }
    let mut t = 1;
    while t + 3 <= max_t {
        if rho_hat[t + 1] + rho_hat[t + 2] > rho_hat[t - 1] + rho_hat[t] {
            rho_hat[t + 1] = (rho_hat[t - 1] + rho_hat[t]) / 2.0;
            rho_hat[t + 2] = rho_hat[t + 1];
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tau = (-1.0 + 2.0 * rho_hat[..=max_t].iter().sum::<f64>() + rho_hat[max_t + 1])
        .max(1.0 / total.log10());
    total / tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::stream_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn ar1(phi: f64, n: usize, seed: u64, shift: f64) -> Vec<f64> {
        let mut rng = stream_rng(seed, &[7]);
        let mut x = 0.0;
        (0..n)
            .map(|_| {
                let e: f64 = rng.sample(StandardNormal);
                x = phi * x + e;
                x + shift
            })
            .collect()
    }

    #[test]
    fn iid_chains() {
        let chains = vec![ar1(0.0, 4000, 1, 0.0), ar1(0.0, 4000, 2, 0.0)];
        let ess = effective_sample_size(&chains);
        assert!((ess / 8000.0 - 1.0).abs() < 0.15, "{ess}");
        assert!((split_rhat(&chains) - 1.0).abs() < 0.01);
    }

    #[test]
    fn autocorrelated_chains() {
        let phi = 0.5;
        let chains: Vec<Vec<f64>> = (0..4).map(|s| ar1(phi, 5000, s, 0.0)).collect();
        let expected = 20000.0 * (1.0 - phi) / (1.0 + phi);
        let ess = effective_sample_size(&chains);
        assert!((ess / expected - 1.0).abs() < 0.2, "{ess} vs {expected}");
    }

    #[test]
    fn separated_chains_flagged() {
        let chains = vec![ar1(0.0, 1000, 1, 0.0), ar1(0.0, 1000, 2, 3.0)];
        assert!(split_rhat(&chains) > 1.5);
    }

    #[test]
    fn trend_within_chain_flagged() {
        let drift: Vec<f64> = (0..1000).map(|i| i as f64 / 100.0).collect();
        assert!(split_rhat(&[drift.clone(), drift]) > 1.5);
    }

    #[test]
    fn welford_variance() {
        let mut w = Welford::new(2);
        for x in [[1.0, 2.0], [2.0, 2.0], [4.0, 2.0]] {
            w.add(&x);
        }
        let v = w.variance();
        assert!((v[0] - 7.0 / 3.0).abs() < 1e-12 && v[1] == 0.0);
    }
}
