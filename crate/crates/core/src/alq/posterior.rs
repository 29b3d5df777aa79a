use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::basis::BasisBundle;
use super::nuts::LogDensity;
use super::{check_loss, check_loss_slope, validate_al};
use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub theta: Vec<f64>,
    pub tau: f64,
    pub lambda: f64,
}

impl ModelState {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tau and lambda must be positive, got tau = {}, lambda = {}",
                self.tau, self.lambda
            )));
        }
        Ok(())
    }
}

/// Sampling-weighted AL pseudo-posterior for `y ~ AL(B theta, tau, q)` with
/// the P-spline prior on `theta` and Gamma(1, 1) priors on `tau` and `lambda`.
#[derive(Debug, Clone, Copy)]
pub struct PseudoPosterior<'a> {
    pub y: &'a [f64],
    pub basis: &'a BasisBundle,
    pub weights: &'a [f64],
    pub q: f64,
}

impl<'a> PseudoPosterior<'a> {
    pub fn new(y: &'a [f64], basis: &'a BasisBundle, weights: &'a [f64], q: f64) -> Result<Self> {
        if y.len() != basis.n_rows || weights.len() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} responses, {} basis rows, {} weights",
                y.len(),
                basis.n_rows,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
        }
        validate_al(1.0, q)?;
        Ok(Self { y, basis, weights, q })
    }

    pub fn n_theta(&self) -> usize {
        self.basis.n_basis
    }

    fn mu(&self, theta: &[f64], i: usize) -> f64 {
        self.basis.row(i).iter().zip(theta).map(|(b, t)| b * t).sum()
    }

    fn check_dims(&self, state: &ModelState) -> Result<()> {
        if state.theta.len() != self.n_theta() {
            return Err(Error::DimensionMismatch(format!(
                "theta has {} entries, basis has {} columns",
                state.theta.len(),
                self.n_theta()
            )));
        }
        state.validate()
    }

    /// `sum_i w_i log AL(y_i | mu_i, tau, q)`.
    pub fn log_likelihood(&self, state: &ModelState) -> Result<f64> {
        self.check_dims(state)?;
        let q = self.q;
        let mut total_w = CompensatedSum::new();
        let mut loss = CompensatedSum::new();
        for i in 0..self.y.len() {
            total_w.add(self.weights[i]);
            loss.add(self.weights[i] * check_loss(self.y[i] - self.mu(&state.theta, i), q));
        }
        Ok(total_w.value() * (state.tau.ln() + q.ln() + (1.0 - q).ln()) - state.tau * loss.value())
    }

    pub fn log_prior(&self, state: &ModelState) -> Result<f64> {
        self.check_dims(state)?;
        let quad = self.basis.penalty_quadratic(&state.theta);
        Ok(-0.5 * state.lambda * quad + 0.5 * self.basis.penalty_rank as f64 * state.lambda.ln()
            - state.tau
            - state.lambda)
    }

    pub fn log_posterior(&self, state: &ModelState) -> Result<f64> {
        Ok(self.log_likelihood(state)? + self.log_prior(state)?)
    }

    /// Subgradient with respect to `(theta, tau, lambda)`, using slope `q` at
    /// zero residuals.
    pub fn gradient(&self, state: &ModelState) -> Result<Vec<f64>> {
        self.check_dims(state)?;
        let p = self.n_theta();
        let mut g = vec![0.0; p + 2];
        let mut total_w = 0.0;
        let mut loss = 0.0;
        for i in 0..self.y.len() {
            let u = self.y[i] - self.mu(&state.theta, i);
            let w = self.weights[i];
            total_w += w;
            loss += w * check_loss(u, self.q);
            let c = state.tau * w * check_loss_slope(u, self.q);
            for (gj, bj) in g.iter_mut().zip(self.basis.row(i)) {
                *gj += c * bj;
            }
        }
        let t = nalgebra::DVector::from_column_slice(&state.theta);
        let qt = &self.basis.penalty * &t;
        for j in 0..p {
            g[j] -= state.lambda * qt[j];
        }
        g[p] = total_w / state.tau - loss - 1.0;
        g[p + 1] = -0.5 * t.dot(&qt) + 0.5 * self.basis.penalty_rank as f64 / state.lambda - 1.0;
        Ok(g)
    }
}

/// The pseudo-posterior in the sampler's unconstrained coordinates.
///
/// The prior precision `lambda (Q + ridge I)` is diagonalized as
/// `V diag(e) V'`. Coefficients along the penalty's null space are kept as
/// they are (`beta`); the penalized ones are written non-centered as
/// `z_j / sqrt(lambda (e_j + ridge))`. Coordinates are
/// `(beta, z, log tau, log lambda)`, and the density is the pseudo-posterior
/// of `(theta, tau, lambda)` times the Jacobian of this map.
#[derive(Debug, Clone)]
pub struct SamplerTarget<'a> {
    pub posterior: PseudoPosterior<'a>,
    null_vecs: DMatrix<f64>,
    pen_vecs: DMatrix<f64>,
    pen_vals: Vec<f64>,
    ridge: f64,
}

impl<'a> SamplerTarget<'a> {
    pub fn new(posterior: PseudoPosterior<'a>) -> Self {
        let basis = posterior.basis;
        let (vals, vecs) = basis.penalty_eigen();
        let max = vals.iter().copied().fold(0.0, f64::max);
        let is_pen: Vec<bool> = vals.iter().map(|&v| max > 0.0 && v > 1e-8 * max).collect();
        let pick = |want: bool| {
            let cols: Vec<usize> = (0..vals.len()).filter(|&j| is_pen[j] == want).collect();
            let m = DMatrix::from_fn(vals.len(), cols.len(), |i, c| vecs[(i, cols[c])]);
            (m, cols.iter().map(|&j| vals[j]).collect::<Vec<f64>>())
        };
        let (null_vecs, _) = pick(false);
        let (pen_vecs, pen_vals) = pick(true);
        Self { posterior, null_vecs, pen_vecs, pen_vals, ridge: basis.ridge }
    }

    fn n_null(&self) -> usize {
        self.null_vecs.ncols()
    }

    fn n_pen(&self) -> usize {
        self.pen_vecs.ncols()
    }

    pub fn to_state(&self, u: &[f64]) -> ModelState {
        let (nn, np) = (self.n_null(), self.n_pen());
        let lambda = u[nn + np + 1].exp();
        let mut theta = vec![0.0; self.posterior.n_theta()];
        for (c, &beta) in u[..nn].iter().enumerate() {
            for (t, v) in theta.iter_mut().zip(self.null_vecs.column(c).iter()) {
                *t += beta * v;
            }
        }
        for (c, &z) in u[nn..nn + np].iter().enumerate() {
            let s = z / (lambda * (self.pen_vals[c] + self.ridge)).sqrt();
            for (t, v) in theta.iter_mut().zip(self.pen_vecs.column(c).iter()) {
                *t += s * v;
            }
        }
        ModelState { theta, tau: u[nn + np].exp(), lambda }
    }

    pub fn from_state(&self, state: &ModelState) -> Vec<f64> {
        let t = nalgebra::DVector::from_column_slice(&state.theta);
        let mut u: Vec<f64> = (self.null_vecs.transpose() * &t).iter().copied().collect();
        let proj = self.pen_vecs.transpose() * &t;
        u.extend(
            proj.iter()
                .zip(&self.pen_vals)
                .map(|(c, e)| c * (state.lambda * (e + self.ridge)).sqrt()),
        );
        u.push(state.tau.ln());
        u.push(state.lambda.ln());
        u
    }
}

impl LogDensity for SamplerTarget<'_> {
    fn dim(&self) -> usize {
        self.n_null() + self.n_pen() + 2
    }

    fn log_density_and_gradient(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let (nn, np) = (self.n_null(), self.n_pen());
        let state = self.to_state(u);
        let post = &self.posterior;
        let q = post.q;
        let p = post.n_theta();

        let mut g_theta = vec![0.0; p];
        let mut total_w = 0.0;
        let mut loss = 0.0;
        for i in 0..post.y.len() {
            let row = post.basis.row(i);
            let mu: f64 = row.iter().zip(&state.theta).map(|(b, t)| b * t).sum();
            let r = post.y[i] - mu;
            let w = post.weights[i];
            total_w += w;
            loss += w * check_loss(r, q);
            let c = w * check_loss_slope(r, q);
            for (g, b) in g_theta.iter_mut().zip(row) {
                *g += c * b;
            }
        }
        let tau = state.tau;
        let lambda = state.lambda;
        g_theta.iter_mut().for_each(|g| *g *= tau);
        let loglik = total_w * (tau.ln() + q.ln() + (1.0 - q).ln()) - tau * loss;

        let beta = &u[..nn];
        let z = &u[nn..nn + np];
        let beta_sq: f64 = beta.iter().map(|b| b * b).sum();
        let z_sq: f64 = z.iter().map(|v| v * v).sum();
        let logp = loglik - 0.5 * z_sq - 0.5 * lambda * self.ridge * beta_sq - tau - lambda
            + u[nn + np]
            + u[nn + np + 1];

        let gt = nalgebra::DVector::from_column_slice(&g_theta);
        let g_null = self.null_vecs.transpose() * &gt;
        for c in 0..nn {
            grad[c] = g_null[c] - lambda * self.ridge * beta[c];
        }
        let g_pen = self.pen_vecs.transpose() * &gt;
        // d theta / d log lambda = -theta_pen / 2
        let mut dtheta_dloglam = 0.0;
        for c in 0..np {
            let s = (lambda * (self.pen_vals[c] + self.ridge)).sqrt();
            grad[nn + c] = g_pen[c] / s - z[c];
            dtheta_dloglam += -0.5 * g_pen[c] * z[c] / s;
        }
        grad[nn + np] = total_w - tau * loss - tau + 1.0;
        grad[nn + np + 1] = dtheta_dloglam - 0.5 * lambda * self.ridge * beta_sq - lambda + 1.0;
        logp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alq::{al_logpdf, build_basis, SplineSpec};
    use crate::numeric::stream_rng;
    use rand::Rng;

    struct Problem {
        x: Vec<f64>,
        y: Vec<f64>,
        w: Vec<f64>,
        basis: BasisBundle,
    }

    fn problem(n: usize, seed: u64) -> Problem {
        let mut rng = stream_rng(seed, &[0]);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + v - 0.5 * v * v + rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
        let basis = build_basis(&x, &SplineSpec::new(5, 2)).unwrap();
        Problem { x, y, w, basis }
    }

    fn random_state<R: Rng>(rng: &mut R, p: usize) -> ModelState {
        ModelState {
            theta: (0..p).map(|_| rng.random_range(-2.0..3.0)).collect(),
            tau: rng.random_range(0.2..5.0),
            lambda: rng.random_range(0.1..4.0),
        }
    }

    #[test]
    fn unit_weights_give_unweighted_posterior() {
        let pr = problem(80, 1);
        let ones = vec![1.0; pr.y.len()];
        let post = PseudoPosterior::new(&pr.y, &pr.basis, &ones, 0.5).unwrap();
        let state = ModelState { theta: vec![0.5; 7], tau: 2.0, lambda: 1.5 };
        let direct: f64 = (0..pr.y.len())
            .map(|i| al_logpdf(pr.y[i], post.mu(&state.theta, i), 2.0, 0.5).unwrap())
            .sum();
        let prior = -0.75 * pr.basis.penalty_quadratic(&state.theta) + 2.5 * 1.5f64.ln() - 2.0 - 1.5;
        assert!((post.log_posterior(&state).unwrap() - (direct + prior)).abs() < 1e-10);
        assert!(pr.x.len() == 80);
    }

    #[test]
    fn weight_exponent_identity() {
        let pr = problem(60, 2);
        let ones = vec![1.0; pr.y.len()];
        let mut rng = stream_rng(4, &[1]);
        for _ in 0..50 {
            let s = random_state(&mut rng, 7);
            let a = PseudoPosterior::new(&pr.y, &pr.basis, &pr.w, 0.3).unwrap().log_posterior(&s).unwrap();
            let b = PseudoPosterior::new(&pr.y, &pr.basis, &ones, 0.3).unwrap().log_posterior(&s).unwrap();
            let post = PseudoPosterior::new(&pr.y, &pr.basis, &ones, 0.3).unwrap();
            let expected: f64 = (0..pr.y.len())
                .map(|i| (pr.w[i] - 1.0) * al_logpdf(pr.y[i], post.mu(&s.theta, i), s.tau, 0.3).unwrap())
                .sum();
            assert!((a - b - expected).abs() < 1e-9 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn doubling_weights_doubles_likelihood_only() {
        let pr = problem(40, 3);
        let doubled: Vec<f64> = pr.w.iter().map(|w| 2.0 * w).collect();
        let s = ModelState { theta: vec![1.0; 7], tau: 1.3, lambda: 0.7 };
        let p1 = PseudoPosterior::new(&pr.y, &pr.basis, &pr.w, 0.5).unwrap();
        let p2 = PseudoPosterior::new(&pr.y, &pr.basis, &doubled, 0.5).unwrap();
        let l1 = p1.log_likelihood(&s).unwrap();
        assert!((p2.log_likelihood(&s).unwrap() - 2.0 * l1).abs() < 1e-10);
        assert_eq!(p1.log_prior(&s).unwrap(), p2.log_prior(&s).unwrap());
    }

    #[test]
    fn sampler_coordinates_round_trip() {
        let pr = problem(50, 5);
        let post = PseudoPosterior::new(&pr.y, &pr.basis, &pr.w, 0.5).unwrap();
        let target = SamplerTarget::new(post);
        let s = ModelState { theta: vec![0.1, 0.4, -0.3, 0.9, 1.2, 0.0, 2.0], tau: 0.8, lambda: 3.0 };
        let back = target.to_state(&target.from_state(&s));
        for (a, b) in back.theta.iter().zip(&s.theta) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!((back.tau - s.tau).abs() < 1e-12 && (back.lambda - s.lambda).abs() < 1e-12);
        assert_eq!(target.dim(), 9);
    }

    fn residuals_clear_of_kinks(post: &PseudoPosterior, theta: &[f64], gap: f64) -> bool {
        (0..post.y.len()).all(|i| (post.y[i] - post.mu(theta, i)).abs() > gap)
    }

    #[test]
    fn sampler_gradient_matches_finite_differences() {
        let pr = problem(50, 6);
        let post = PseudoPosterior::new(&pr.y, &pr.basis, &pr.w, 0.4).unwrap();
        let target = SamplerTarget::new(post);
        let mut rng = stream_rng(8, &[2]);
        let mut checked = 0;
        while checked < 30 {
            let s = random_state(&mut rng, 7);
            if !residuals_clear_of_kinks(&post, &s.theta, 1e-3) {
                continue;
            }
            let u = target.from_state(&s);
            let mut g = vec![0.0; u.len()];
            target.log_density_and_gradient(&u, &mut g);
            let h = 1e-6;
            let mut scratch = vec![0.0; u.len()];
            for j in 0..u.len() {
                let mut up = u.clone();
                up[j] += h;
                let mut dn = u.clone();
                dn[j] -= h;
                let fd = (target.log_density_and_gradient(&up, &mut scratch)
                    - target.log_density_and_gradient(&dn, &mut scratch))
                    / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-4 * (1.0 + fd.abs()), "coord {j}: fd {fd} vs {}", g[j]);
            }
            checked += 1;
        }
    }

    #[test]
    fn natural_gradient_matches_finite_differences() {
        let pr = problem(60, 9);
        let post = PseudoPosterior::new(&pr.y, &pr.basis, &pr.w, 0.7).unwrap();
        let mut rng = stream_rng(10, &[3]);
        let mut checked = 0;
        while checked < 100 {
            let s = random_state(&mut rng, 7);
            if !residuals_clear_of_kinks(&post, &s.theta, 1e-4) {
                continue;
            }
            let g = post.gradient(&s).unwrap();
            let h = 1e-6;
            for j in 0..g.len() {
                let bump = |d: f64| {
                    let mut t = s.clone();
                    match j {
                        j if j < 7 => t.theta[j] += d,
                        7 => t.tau += d,
                        _ => t.lambda += d,
                    }
                    post.log_posterior(&t).unwrap()
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1.0), "coord {j}: fd {fd} vs {}", g[j]);
            }
            checked += 1;
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let pr = problem(30, 7);
        assert!(PseudoPosterior::new(&pr.y[..10], &pr.basis, &pr.w, 0.5).is_err());
        let post = PseudoPosterior::new(&pr.y, &pr.basis, &pr.w, 0.5).unwrap();
        let bad = ModelState { theta: vec![0.0; 3], tau: 1.0, lambda: 1.0 };
        assert!(post.log_posterior(&bad).is_err());
    }
}
